//! Skip-gram embeddings trained with negative sampling, plus the word2vec
//! text format.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{dot, sigmoid, Real};
use crate::tokenize::TokenStream;

/// Probabilities are clamped to at least this before taking logarithms.
pub const LOG_EPSILON: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedConfig {
    pub dim: usize,
    /// Maximum context offset; each occurrence draws its own window in `1..=window`.
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub min_count: u64,
    pub lr_start: f64,
    pub lr_end: f64,
    /// Downsampling threshold; 0 disables subsampling.
    pub subsample_t: f64,
    pub seed: u64,
    /// Slots in the negative-sampling table.
    pub table_size: usize,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self {
            dim: 150,
            window: 5,
            negatives: 5,
            epochs: 5,
            min_count: 5,
            lr_start: 0.025,
            lr_end: 0.0001,
            subsample_t: 1e-3,
            seed: 1,
            table_size: 1_000_000,
        }
    }
}

impl EmbedConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("embed: {m}")));
        if self.dim == 0 {
            return fail("dim must be at least 1");
        }
        if self.window == 0 {
            return fail("window must be at least 1");
        }
        if !(self.lr_start > self.lr_end && self.lr_end > 0.0) {
            return fail("learning rates must satisfy lr_start > lr_end > 0");
        }
        if !(self.subsample_t >= 0.0) {
            return fail("subsample_t must be nonnegative");
        }
        if self.table_size == 0 {
            return fail("table_size must be at least 1");
        }
        Ok(())
    }
}

/// Training vocabulary: tokens by descending frequency (ties lexicographic)
/// and the unigram^0.75 table used to draw negatives.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, usize>,
    unigram_table: Vec<u32>,
}

impl Vocab {
    pub fn from_counts<I, S>(counts: I, min_count: u64, table_size: usize) -> Result<Self>
    where
        I: IntoIterator<Item = (S, u64)>,
        S: Into<String>,
    {
        let mut kept: Vec<(String, u64)> = counts
            .into_iter()
            .map(|(t, c)| (t.into(), c))
            .filter(|(_, c)| *c >= min_count.max(1))
            .collect();
        if kept.is_empty() {
            return Err(Error::Config(format!("no token reaches min_count {min_count}")));
        }
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

        let weights: Vec<f64> = kept.iter().map(|(_, c)| (*c as f64).powf(0.75)).collect();
        let total: f64 = weights.iter().sum();
        let mut unigram_table = Vec::with_capacity(table_size);
        for (i, w) in weights.iter().enumerate() {
            let slots = (table_size as f64 * w / total).round() as usize;
            unigram_table.extend(std::iter::repeat_n(i as u32, slots));
        }

        let index = kept.iter().enumerate().map(|(i, (t, _))| (t.clone(), i)).collect();
        let (tokens, counts) = kept.into_iter().unzip();
        Ok(Vocab {
            tokens,
            counts,
            index,
            unigram_table,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, index: usize) -> &str {
        &self.tokens[index]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Training frequency; 0 for vocabularies loaded from a text file.
    pub fn count(&self, index: usize) -> u64 {
        self.counts[index]
    }

    /// Number of negative-table slots assigned to `token`.
    pub fn table_slots(&self, token: &str) -> usize {
        match self.index(token) {
            Some(i) => self.unigram_table.iter().filter(|&&s| s as usize == i).count(),
            None => 0,
        }
    }
}

/// Counts tokens across streams and keeps those with frequency ≥ `min_count`.
pub fn build_vocab(streams: &[TokenStream], min_count: u64, table_size: usize) -> Result<Vocab> {
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for stream in streams {
        for token in &stream.tokens {
            *counts.entry(token.as_str()).or_insert(0) += 1;
        }
    }
    Vocab::from_counts(counts, min_count, table_size)
}

/// Loss and exact gradients of one positive pair and its negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct SgnsGradient<T> {
    pub loss: T,
    pub center: Vec<T>,
    pub positive: Vec<T>,
    pub negatives: Vec<Vec<T>>,
}

/// `−log σ(u_pos·v) − Σ_k log σ(−u_k·v)` and its partial derivatives with
/// respect to the center vector `v`, `u_pos` and each `u_k`.
pub fn sgns_loss_and_grad<T: Real>(center: &[T], positive: &[T], negatives: &[&[T]]) -> SgnsGradient<T> {
    let eps = T::of(LOG_EPSILON);
    let s_pos = dot(positive, center);
    let p_pos = sigmoid(s_pos);
    let mut loss = -sigmoid(s_pos).max(eps).ln();
    let coef_pos = p_pos - T::one();
    let mut d_center: Vec<T> = positive.iter().map(|&u| coef_pos * u).collect();
    let d_positive: Vec<T> = center.iter().map(|&v| coef_pos * v).collect();
    let mut d_negatives = Vec::with_capacity(negatives.len());
    for neg in negatives {
        let s = dot(neg, center);
        loss -= sigmoid(-s).max(eps).ln();
        let p = sigmoid(s);
        for (d, &u) in d_center.iter_mut().zip(neg.iter()) {
            *d += p * u;
        }
        d_negatives.push(center.iter().map(|&v| p * v).collect());
    }
    SgnsGradient {
        loss,
        center: d_center,
        positive: d_positive,
        negatives: d_negatives,
    }
}

/// One SGD step on a (center, target) pair with the given negatives.
/// Output rows are updated in place, the center row once at the end with the
/// gradient accumulated at the pre-step point. Returns the pre-step loss.
fn sgns_step<T: Real>(
    center: &mut [T],
    output: &mut [T],
    dim: usize,
    target: usize,
    negatives: &[usize],
    lr: T,
    scratch: &mut [T],
) -> T {
    let eps = T::of(LOG_EPSILON);
    scratch.iter_mut().for_each(|x| *x = T::zero());
    let mut loss = T::zero();
    let labelled = std::iter::once((target, T::one())).chain(negatives.iter().map(|&n| (n, T::zero())));
    for (row, label) in labelled {
        let u = &mut output[row * dim..(row + 1) * dim];
        let s = dot(u, center);
        loss -= if label > T::zero() { sigmoid(s) } else { sigmoid(-s) }.max(eps).ln();
        let g = (label - sigmoid(s)) * lr;
        for ((acc, ui), &vi) in scratch.iter_mut().zip(u.iter_mut()).zip(center.iter()) {
            *acc += g * *ui;
            *ui += g * vi;
        }
    }
    for (v, &d) in center.iter_mut().zip(scratch.iter()) {
        *v += d;
    }
    loss
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable<T> {
    vocab: Vocab,
    dim: usize,
    input: Vec<T>,
    output: Option<Vec<T>>,
    epoch_loss: Vec<f64>,
}

impl<T: Real> EmbeddingTable<T> {
    /// Table with input vectors uniform in `[−0.5/dim, 0.5/dim]` and zero output vectors.
    pub fn initialize(vocab: Vocab, dim: usize, rng: &mut impl Rng) -> Self {
        let half = 0.5 / dim as f64;
        let input = (0..vocab.len() * dim)
            .map(|_| T::of(rng.gen_range(-half..=half)))
            .collect();
        let output = Some(vec![T::zero(); vocab.len() * dim]);
        EmbeddingTable {
            vocab,
            dim,
            input,
            output,
            epoch_loss: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn row(&self, index: usize) -> &[T] {
        &self.input[index * self.dim..(index + 1) * self.dim]
    }

    /// Input vector of an in-vocabulary token.
    pub fn lookup(&self, token: &str) -> Option<&[T]> {
        self.vocab.index(token).map(|i| self.row(i))
    }

    pub fn output_vectors(&self) -> Option<&[T]> {
        self.output.as_deref()
    }

    pub fn drop_output(&mut self) {
        self.output = None;
    }

    /// Mean pair loss per epoch, as observed during training.
    pub fn epoch_loss(&self) -> &[f64] {
        &self.epoch_loss
    }

    pub fn is_finite(&self) -> bool {
        self.input.iter().all(|x| x.is_finite()) && self.output.as_ref().is_none_or(|o| o.iter().all(|x| x.is_finite()))
    }

    pub fn save_text<W: Write>(&self, sink: W) -> Result<()> {
        save_text(self, sink)
    }

    pub fn load_text<R: Read>(source: R) -> Result<Self> {
        load_text(source)
    }
}

pub fn lookup<'a, T: Real>(table: &'a EmbeddingTable<T>, token: &str) -> Option<&'a [T]> {
    table.lookup(token)
}

/// Trains skip-gram embeddings with negative sampling. A single worker with a
/// fixed seed reproduces identical matrices.
pub fn train<T: Real>(streams: &[TokenStream], config: &EmbedConfig) -> Result<EmbeddingTable<T>> {
    config.validate()?;
    let vocab = build_vocab(streams, config.min_count, config.table_size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dim = config.dim;
    let mut table = EmbeddingTable::<T>::initialize(vocab, dim, &mut rng);

    let sentences: Vec<Vec<usize>> = streams
        .iter()
        .map(|s| s.tokens.iter().filter_map(|t| table.vocab.index(t)).collect())
        .collect();
    let total_words: u64 = sentences.iter().map(|s| s.len() as u64).sum();
    let planned = (config.epochs as u64 * total_words).max(1) as f64;

    let keep_prob: Vec<f64> = (0..table.vocab.len())
        .map(|i| {
            if config.subsample_t <= 0.0 {
                return 1.0;
            }
            let threshold = config.subsample_t * total_words as f64;
            let f = table.vocab.count(i) as f64;
            (((f / threshold).sqrt() + 1.0) * threshold / f).min(1.0)
        })
        .collect();

    let unigram = table.vocab.unigram_table.clone();
    let mut output = table.output.take().expect("fresh table has output vectors");
    let mut scratch = vec![T::zero(); dim];
    let mut negatives: Vec<usize> = Vec::with_capacity(config.negatives);
    let mut processed = 0u64;
    let lr_span = config.lr_start - config.lr_end;

    for _ in 0..config.epochs {
        let mut loss_sum = 0.0;
        let mut pairs = 0u64;
        for sentence in &sentences {
            let kept: Vec<usize> = sentence
                .iter()
                .copied()
                .filter(|&w| keep_prob[w] >= 1.0 || rng.gen::<f64>() < keep_prob[w])
                .collect();
            processed += sentence.len() as u64;
            let lr = (config.lr_start - lr_span * processed as f64 / planned).max(config.lr_end);
            let lr = T::of(lr);
            for (pos, &center) in kept.iter().enumerate() {
                let reach = rng.gen_range(1..=config.window);
                let lo = pos.saturating_sub(reach);
                let hi = (pos + reach).min(kept.len() - 1);
                for (ctx_pos, &target) in kept.iter().enumerate().take(hi + 1).skip(lo) {
                    if ctx_pos == pos {
                        continue;
                    }
                    negatives.clear();
                    if !unigram.is_empty() {
                        for _ in 0..config.negatives {
                            let n = unigram[rng.gen_range(0..unigram.len())] as usize;
                            if n != target {
                                negatives.push(n);
                            }
                        }
                    }
                    let row = &mut table.input[center * dim..(center + 1) * dim];
                    let loss = sgns_step(row, &mut output, dim, target, &negatives, lr, &mut scratch);
                    loss_sum += loss.as_f64();
                    pairs += 1;
                }
            }
        }
        table
            .epoch_loss
            .push(if pairs == 0 { 0.0 } else { loss_sum / pairs as f64 });
    }
    table.output = Some(output);
    Ok(table)
}

/// Writes the word2vec text format: `<vocab_size> <dim>` then one row per token.
pub fn save_text<T: Real, W: Write>(table: &EmbeddingTable<T>, mut sink: W) -> Result<()> {
    for (i, token) in table.vocab.tokens.iter().enumerate() {
        if token.is_empty() || token.chars().any(char::is_whitespace) {
            return Err(Error::format(
                i + 2,
                format!("token {token:?} cannot be written to the text format"),
            ));
        }
    }
    writeln!(sink, "{} {}", table.vocab.len(), table.dim)?;
    let mut line = String::new();
    for (i, token) in table.vocab.tokens.iter().enumerate() {
        line.clear();
        line.push_str(token);
        for x in table.row(i) {
            line.push_str(&format!(" {:.6}", x.as_f64()));
        }
        line.push('\n');
        sink.write_all(line.as_bytes())?;
    }
    sink.flush()?;
    Ok(())
}

pub fn load_text<T: Real, R: Read>(source: R) -> Result<EmbeddingTable<T>> {
    let mut lines = BufReader::new(source).lines();
    let header = lines
        .next()
        .transpose()?
        .ok_or_else(|| Error::format(1, "empty embedding file"))?;
    let parse_count = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::format(1, format!("bad header {header:?}")))
    };
    let fields: Vec<&str> = header.split_whitespace().collect();
    let [n, dim] = fields[..] else {
        return Err(Error::format(
            1,
            format!("header must be \"<vocab_size> <dim>\", got {header:?}"),
        ));
    };
    let (n, dim) = (parse_count(n)?, parse_count(dim)?);
    if dim == 0 {
        return Err(Error::format(1, "dimension must be at least 1"));
    }
    let mut tokens = Vec::with_capacity(n);
    let mut input = Vec::with_capacity(n * dim);
    let mut index = HashMap::with_capacity(n);
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(' ');
        let token = fields.next().unwrap_or_default().to_string();
        let values: Vec<&str> = fields.collect();
        if values.len() != dim {
            return Err(Error::format(
                line_no,
                format!("expected {dim} values, found {}", values.len()),
            ));
        }
        for v in values {
            let x: f64 = v
                .parse()
                .map_err(|_| Error::format(line_no, format!("{v:?} is not a number")))?;
            input.push(T::of(x));
        }
        if index.insert(token.clone(), tokens.len()).is_some() {
            return Err(Error::format(line_no, format!("duplicate token {token:?}")));
        }
        tokens.push(token);
    }
    if tokens.len() != n {
        return Err(Error::format(
            tokens.len() + 2,
            format!("header declares {n} rows, file has {}", tokens.len()),
        ));
    }
    let counts = vec![0; n];
    Ok(EmbeddingTable {
        vocab: Vocab {
            tokens,
            counts,
            index,
            unigram_table: Vec::new(),
        },
        dim,
        input,
        output: None,
        epoch_loss: Vec::new(),
    })
}
