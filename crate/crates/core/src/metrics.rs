//! Token-level classification scores and their report/CSV encodings.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize, Serializer};
use serde_json::value::RawValue;

use crate::error::{Error, Result};

/// Value written to the `scoring_unit` report field.
pub const SCORING_UNIT: &str = "subtoken";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub label: String,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    #[serde(serialize_with = "six_decimals")]
    pub precision: f64,
    #[serde(serialize_with = "six_decimals")]
    pub recall: f64,
    #[serde(serialize_with = "six_decimals")]
    pub f1: f64,
    pub support: u64,
}

impl ClassScore {
    fn from_counts(label: String, tp: u64, fp: u64, fn_: u64) -> Self {
        let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        ClassScore {
            label,
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1,
            support: tp + fn_,
        }
    }

    pub fn has_signal(&self) -> bool {
        self.precision > 0.0 || self.recall > 0.0
    }
}

/// Exact scores over the label set gold ∪ pred (sorted by label).
#[derive(Debug, Clone, PartialEq)]
pub struct Scores {
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassScore>,
}

pub fn score<G: AsRef<str>, P: AsRef<str>>(gold: &[G], pred: &[P]) -> Result<Scores> {
    if gold.len() != pred.len() || gold.is_empty() {
        return Err(Error::LengthMismatch {
            left: gold.len(),
            right: pred.len(),
        });
    }
    let mut counts: BTreeMap<&str, (u64, u64, u64)> = BTreeMap::new();
    let mut correct = 0;
    for (g, p) in gold.iter().zip(pred) {
        let (g, p) = (g.as_ref(), p.as_ref());
        if g == p {
            correct += 1;
            counts.entry(g).or_default().0 += 1;
        } else {
            counts.entry(p).or_default().1 += 1;
            counts.entry(g).or_default().2 += 1;
        }
    }
    let per_class: Vec<ClassScore> = counts
        .into_iter()
        .map(|(label, (tp, fp, fn_))| ClassScore::from_counts(label.to_string(), tp, fp, fn_))
        .collect();
    let macro_f1 = per_class.iter().map(|c| c.f1).sum::<f64>() / per_class.len() as f64;
    Ok(Scores {
        n: gold.len(),
        correct,
        accuracy: correct as f64 / gold.len() as f64,
        macro_f1,
        per_class,
    })
}

/// Everything recorded about one strategy's evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub language: String,
    pub strategy: String,
    pub scoring_unit: String,
    pub n_eval: usize,
    #[serde(serialize_with = "six_decimals")]
    pub accuracy: f64,
    #[serde(serialize_with = "six_decimals")]
    pub macro_f1: f64,
    pub nonzero_class_count: usize,
    pub class_total: usize,
    pub oov_count: usize,
    pub per_class: Vec<ClassScore>,
    /// Every tunable and gap-filled setting that produced this report.
    pub config: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

impl EvalReport {
    /// Builds a report; reals are rounded to the 6 decimals they are stored with.
    pub fn new(
        language: &str,
        strategy: &str,
        scores: &Scores,
        oov_count: usize,
        config: BTreeMap<String, String>,
        seeds: BTreeMap<String, u64>,
    ) -> Self {
        let per_class: Vec<ClassScore> = scores
            .per_class
            .iter()
            .map(|c| ClassScore {
                precision: round6(c.precision),
                recall: round6(c.recall),
                f1: round6(c.f1),
                ..c.clone()
            })
            .collect();
        let mut report = EvalReport {
            language: language.to_string(),
            strategy: strategy.to_string(),
            scoring_unit: SCORING_UNIT.to_string(),
            n_eval: scores.n,
            accuracy: round6(scores.accuracy),
            macro_f1: round6(scores.macro_f1),
            nonzero_class_count: 0,
            class_total: 0,
            oov_count,
            per_class,
            config,
            seeds,
        };
        (report.nonzero_class_count, report.class_total) = nonzero_class_count(&report);
        report
    }
}

/// Classes with nonzero precision or recall, out of the evaluation label set.
pub fn nonzero_class_count(report: &EvalReport) -> (usize, usize) {
    let count = report.per_class.iter().filter(|c| c.has_signal()).count();
    (count, report.per_class.len())
}

fn six_decimals<S: Serializer>(value: &f64, serializer: S) -> std::result::Result<S::Ok, S::Error> {
    let raw = RawValue::from_string(format!("{value:.6}")).map_err(serde::ser::Error::custom)?;
    raw.serialize(serializer)
}

pub fn emit_report_json<W: Write>(report: &EvalReport, mut sink: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut sink, report)?;
    sink.write_all(b"\n")?;
    sink.flush()?;
    Ok(())
}

pub fn parse_report_json<R: Read>(source: R) -> Result<EvalReport> {
    Ok(serde_json::from_reader(source)?)
}

/// `label,precision,recall,f1,support`, one row per class.
pub fn emit_pr_csv<W: Write>(report: &EvalReport, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["label", "precision", "recall", "f1", "support"])?;
    for c in &report.per_class {
        w.write_record([
            c.label.clone(),
            format!("{:.6}", c.precision),
            format!("{:.6}", c.recall),
            format!("{:.6}", c.f1),
            c.support.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `label,count`, most frequent first (ties by label).
pub fn emit_histogram_csv<W: Write>(histogram: &BTreeMap<String, u64>, sink: W) -> Result<()> {
    let mut rows: Vec<(&String, &u64)> = histogram.iter().collect();
    rows.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["label", "count"])?;
    for (label, count) in rows {
        w.write_record([label.as_str(), &count.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
