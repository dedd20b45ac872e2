//! Per-token multinomial logistic regression over embedding features,
//! trained with SAGA.
//!
//! The objective is the mean cross-entropy plus `(λ/2)‖W‖²` over the full
//! weight matrix (bias column included). SAGA keeps, for every sample, the
//! residual `p_i − e_{y_i}` of its last visited gradient; the gradient itself
//! is that residual times `x_i`, so the memory costs `N × C` scalars.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::nerdata::PropagatedSentence;
use crate::scalar::{dot, Real};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    fn squared_norm(&self) -> T {
        self.data.iter().map(|&x| x * x).sum()
    }
}

/// Bijection between label strings and dense class ids (sorted label order).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelCodec {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelCodec {
    pub fn from_labels<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let unique: BTreeSet<String> = labels.into_iter().map(Into::into).collect();
        Self::from_ordered(unique.into_iter().collect())
    }

    fn from_ordered(labels: Vec<String>) -> Self {
        let index = labels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
        LabelCodec { labels, index }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: usize) -> &str {
        &self.labels[id]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet<T> {
    /// One row per sub-token: its embedding (or zeros when out of vocabulary)
    /// followed by a constant 1.
    pub x: Matrix<T>,
    pub y: Vec<usize>,
    pub codec: LabelCodec,
    pub oov_count: usize,
}

/// Embedding rows (with bias column) for every sub-token, and the number of
/// sub-tokens that fell back to the zero vector.
pub fn embed_rows<T: Real>(sentences: &[PropagatedSentence], table: &EmbeddingTable<T>) -> Result<(Matrix<T>, usize)> {
    let n: usize = sentences.iter().map(|s| s.subtokens.len()).sum();
    if n == 0 {
        return Err(Error::Config("no sub-tokens to featurize".into()));
    }
    let dim = table.dim();
    let mut x = Matrix::zeros(n, dim + 1);
    let mut oov = 0;
    let tokens = sentences.iter().flat_map(|s| s.subtokens.iter());
    for (i, token) in tokens.enumerate() {
        let row = x.row_mut(i);
        match table.lookup(token) {
            Some(v) => row[..dim].copy_from_slice(v),
            None => oov += 1,
        }
        row[dim] = T::one();
    }
    Ok((x, oov))
}

/// Builds training features; the label codec covers the labels present.
pub fn featurize<T: Real>(sentences: &[PropagatedSentence], table: &EmbeddingTable<T>) -> Result<FeatureSet<T>> {
    let (x, oov_count) = embed_rows(sentences, table)?;
    let labels: Vec<String> = sentences
        .iter()
        .flat_map(|s| s.tags.iter().map(|t| t.to_string()))
        .collect();
    let codec = LabelCodec::from_labels(labels.iter().cloned());
    let y = labels
        .iter()
        .map(|l| codec.id(l).expect("codec built from these labels"))
        .collect();
    Ok(FeatureSet { x, y, codec, oov_count })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SagaConfig {
    pub max_epochs: usize,
    /// Stop once the mean training loss changes by less than this per epoch.
    pub tol: f64,
    /// L2 strength; `None` means 1/N.
    pub lambda: Option<f64>,
    pub seed: u64,
    /// `None` selects 1/(0.25·maxᵢ‖xᵢ‖² + λ).
    pub step_size: Option<f64>,
}

impl Default for SagaConfig {
    fn default() -> Self {
        Self {
            max_epochs: 500,
            tol: 1e-4,
            lambda: None,
            seed: 0,
            step_size: None,
        }
    }
}

impl SagaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 {
            return Err(Error::Config("saga: max_epochs must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config("saga: tol must be positive".into()));
        }
        if self.lambda.is_some_and(|l| !(l >= 0.0)) {
            return Err(Error::Config("saga: lambda must be nonnegative".into()));
        }
        if self.step_size.is_some_and(|s| !(s > 0.0)) {
            return Err(Error::Config("saga: step_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxModel<T> {
    /// C × (dim + 1) class weights.
    pub weights: Matrix<T>,
    pub codec: LabelCodec,
    pub l2_strength: f64,
    /// Objective value at the end of every epoch; empty for loaded models.
    pub training_log: Vec<f64>,
    /// Objective value at the all-zero starting point.
    pub initial_loss: f64,
    pub step_size: f64,
    pub converged: bool,
}

impl<T: Real> SoftmaxModel<T> {
    pub fn predict(&self, x: &Matrix<T>) -> Result<Vec<usize>> {
        predict(self, x)
    }

    pub fn predict_labels(&self, x: &Matrix<T>) -> Result<Vec<String>> {
        Ok(predict(self, x)?
            .into_iter()
            .map(|c| self.codec.label(c).to_string())
            .collect())
    }

    pub fn epochs_run(&self) -> usize {
        self.training_log.len()
    }
}

/// Writes `probs = softmax(W·x)` and returns `log Σ exp(scores)`.
fn softmax_into<T: Real>(w: &Matrix<T>, x: &[T], probs: &mut [T]) -> T {
    for (c, p) in probs.iter_mut().enumerate() {
        *p = dot(w.row(c), x);
    }
    let max = probs.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for p in probs.iter_mut() {
        *p = (*p - max).exp();
        sum += *p;
    }
    for p in probs.iter_mut() {
        *p /= sum;
    }
    max + sum.ln()
}

/// Mean cross-entropy plus `(λ/2)‖W‖²`.
pub fn objective<T: Real>(w: &Matrix<T>, features: &FeatureSet<T>, lambda: T) -> T {
    let n = features.x.rows();
    let mut probs = vec![T::zero(); w.rows()];
    let mut total = T::zero();
    for i in 0..n {
        let x = features.x.row(i);
        let log_z = softmax_into(w, x, &mut probs);
        total += log_z - dot(w.row(features.y[i]), x);
    }
    total / T::of(n as f64) + lambda * w.squared_norm() / T::of(2.0)
}

/// Exact gradient of [`objective`].
pub fn objective_grad<T: Real>(w: &Matrix<T>, features: &FeatureSet<T>, lambda: T) -> Matrix<T> {
    let n = features.x.rows();
    let inv_n = T::one() / T::of(n as f64);
    let mut grad = Matrix::zeros(w.rows(), w.cols());
    let mut probs = vec![T::zero(); w.rows()];
    for i in 0..n {
        let x = features.x.row(i);
        softmax_into(w, x, &mut probs);
        for (c, &p) in probs.iter().enumerate() {
            let r = (p - if c == features.y[i] { T::one() } else { T::zero() }) * inv_n;
            for (g, &xd) in grad.row_mut(c).iter_mut().zip(x) {
                *g += r * xd;
            }
        }
    }
    for (g, &wv) in grad.as_mut_slice().iter_mut().zip(w.as_slice()) {
        *g += lambda * wv;
    }
    grad
}

/// Solver state; one `step` is one SAGA update on a single sample.
pub(crate) struct Saga<'a, T> {
    features: &'a FeatureSet<T>,
    pub(crate) weights: Matrix<T>,
    /// N × C residuals of the stored per-sample gradients.
    pub(crate) memory: Matrix<T>,
    /// Mean of the stored gradients, C × D.
    pub(crate) average: Matrix<T>,
    step_size: T,
    lambda: T,
    probs: Vec<T>,
    delta: Vec<T>,
}

impl<'a, T: Real> Saga<'a, T> {
    pub(crate) fn new(features: &'a FeatureSet<T>, step_size: T, lambda: T) -> Self {
        let c = features.codec.len();
        let d = features.x.cols();
        Saga {
            features,
            weights: Matrix::zeros(c, d),
            memory: Matrix::zeros(features.x.rows(), c),
            average: Matrix::zeros(c, d),
            step_size,
            lambda,
            probs: vec![T::zero(); c],
            delta: vec![T::zero(); c],
        }
    }

    pub(crate) fn step(&mut self, i: usize) {
        let x = self.features.x.row(i);
        let y = self.features.y[i];
        softmax_into(&self.weights, x, &mut self.probs);
        let old = self.memory.row_mut(i);
        for (c, (delta, stored)) in self.delta.iter_mut().zip(old.iter_mut()).enumerate() {
            let new = self.probs[c] - if c == y { T::one() } else { T::zero() };
            *delta = new - *stored;
            *stored = new;
        }
        let shrink = T::one() - self.step_size * self.lambda;
        let inv_n = T::one() / T::of(self.features.x.rows() as f64);
        for c in 0..self.delta.len() {
            let dc = self.delta[c];
            let w = self.weights.row_mut(c);
            let avg = self.average.row_mut(c);
            for ((wv, av), &xd) in w.iter_mut().zip(avg.iter_mut()).zip(x) {
                *wv = shrink * *wv - self.step_size * (dc * xd + *av);
                *av += dc * xd * inv_n;
            }
        }
    }

    /// Largest deviation between the maintained average and the mean of the
    /// stored gradients.
    #[cfg(test)]
    pub(crate) fn memory_average_error(&self) -> f64 {
        let n = self.features.x.rows();
        let mut recomputed = Matrix::<T>::zeros(self.average.rows(), self.average.cols());
        for i in 0..n {
            let x = self.features.x.row(i);
            for c in 0..self.average.rows() {
                let r = self.memory.row(i)[c];
                for (g, &xd) in recomputed.row_mut(c).iter_mut().zip(x) {
                    *g += r * xd / T::of(n as f64);
                }
            }
        }
        recomputed
            .as_slice()
            .iter()
            .zip(self.average.as_slice())
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }
}

/// Fits the regularized softmax model with SAGA, one seeded permutation per
/// epoch, stopping when the objective changes by less than `tol` between
/// epochs or at `max_epochs`.
pub fn saga_fit<T: Real>(features: &FeatureSet<T>, config: &SagaConfig) -> Result<SoftmaxModel<T>> {
    config.validate()?;
    let n = features.x.rows();
    let classes = features.codec.len();
    if n == 0 || classes == 0 {
        return Err(Error::Config("saga: empty training set".into()));
    }
    if n < classes {
        return Err(Error::Config(format!("saga: {n} samples for {classes} classes")));
    }
    if features.y.len() != n {
        return Err(Error::Shape {
            expected: n,
            actual: features.y.len(),
        });
    }
    let lambda = config.lambda.unwrap_or(1.0 / n as f64);
    let max_sq = (0..n)
        .map(|i| dot(features.x.row(i), features.x.row(i)).as_f64())
        .fold(0.0, f64::max);
    let step_size = config.step_size.unwrap_or(1.0 / (0.25 * max_sq + lambda));

    let mut solver = Saga::new(features, T::of(step_size), T::of(lambda));
    let initial_loss = objective(&solver.weights, features, T::of(lambda)).as_f64();
    let mut previous = initial_loss;
    let mut log = Vec::new();
    let mut converged = false;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n).collect();

    for _ in 0..config.max_epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            solver.step(i);
        }
        let loss = objective(&solver.weights, features, T::of(lambda)).as_f64();
        if !loss.is_finite() || !solver.weights.is_finite() {
            return Err(Error::Divergence { step_size });
        }
        log.push(loss);
        if (loss - previous).abs() < config.tol {
            converged = true;
            break;
        }
        previous = loss;
    }

    Ok(SoftmaxModel {
        weights: solver.weights,
        codec: features.codec.clone(),
        l2_strength: lambda,
        training_log: log,
        initial_loss,
        step_size,
        converged,
    })
}

/// Class with the highest score `W·x` for every row; ties go to the lowest id.
pub fn predict<T: Real>(model: &SoftmaxModel<T>, x: &Matrix<T>) -> Result<Vec<usize>> {
    if x.cols() != model.weights.cols() {
        return Err(Error::Shape {
            expected: model.weights.cols(),
            actual: x.cols(),
        });
    }
    Ok((0..x.rows())
        .map(|i| {
            let row = x.row(i);
            let mut best = 0;
            let mut best_score = T::neg_infinity();
            for c in 0..model.weights.rows() {
                let s = dot(model.weights.row(c), row);
                if s > best_score {
                    best = c;
                    best_score = s;
                }
            }
            best
        })
        .collect())
}

/// `softmax v1 <C> <D> <λ>`, then C label lines, then C weight rows.
pub fn save<T: Real, W: Write>(model: &SoftmaxModel<T>, mut sink: W) -> Result<()> {
    writeln!(
        sink,
        "softmax v1 {} {} {}",
        model.weights.rows(),
        model.weights.cols(),
        model.l2_strength
    )?;
    for label in model.codec.labels() {
        writeln!(sink, "{label}")?;
    }
    for c in 0..model.weights.rows() {
        let row: Vec<String> = model.weights.row(c).iter().map(|x| x.as_f64().to_string()).collect();
        writeln!(sink, "{}", row.join(" "))?;
    }
    sink.flush()?;
    Ok(())
}

pub fn load<T: Real, R: Read>(source: R) -> Result<SoftmaxModel<T>> {
    let lines: Vec<String> = BufReader::new(source).lines().collect::<std::io::Result<_>>()?;
    let header = lines.first().ok_or_else(|| Error::format(1, "empty model file"))?;
    let fields: Vec<&str> = header.split(' ').collect();
    let ["softmax", version, c, d, lambda] = fields[..] else {
        return Err(Error::format(1, format!("malformed header {header:?}")));
    };
    if version != "v1" {
        return Err(Error::format(1, format!("unsupported model version {version:?}")));
    }
    let classes: usize = c.parse().map_err(|_| Error::format(1, "class count is not a number"))?;
    let cols: usize = d
        .parse()
        .map_err(|_| Error::format(1, "column count is not a number"))?;
    let lambda: f64 = lambda.parse().map_err(|_| Error::format(1, "λ is not a number"))?;
    if lines.len() < 1 + 2 * classes {
        return Err(Error::format(lines.len() + 1, "truncated model file"));
    }
    let labels: Vec<String> = lines[1..=classes].to_vec();
    let codec = LabelCodec::from_ordered(labels);
    if codec.index.len() != classes {
        return Err(Error::format(2, "duplicate label in codec"));
    }
    let mut data = Vec::with_capacity(classes * cols);
    for (k, line) in lines[1 + classes..1 + 2 * classes].iter().enumerate() {
        let line_no = 2 + classes + k;
        let values: Vec<&str> = line.split(' ').filter(|s| !s.is_empty()).collect();
        if values.len() != cols {
            return Err(Error::format(
                line_no,
                format!("expected {cols} weights, found {}", values.len()),
            ));
        }
        for v in values {
            let x: f64 = v
                .parse()
                .map_err(|_| Error::format(line_no, format!("{v:?} is not a number")))?;
            data.push(T::of(x));
        }
    }
    Ok(SoftmaxModel {
        weights: Matrix::from_vec(classes, cols, data)?,
        codec,
        l2_strength: lambda,
        training_log: Vec::new(),
        initial_loss: f64::NAN,
        step_size: f64::NAN,
        converged: false,
    })
}
