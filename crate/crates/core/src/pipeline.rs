//! Experiment orchestration: one directory per language and strategy, one
//! stage per artifact, with content-hash stamps so reruns only redo what
//! changed.
//!
//! Layout under `<out>/<lang>/`:
//!
//! ```text
//! corpus.txt  ner.train.conll  ner.test.conll  label_histogram.csv
//! summary.csv  manifest.json  reports/<lang>_<strategy>_report.json
//! <strategy>/{bpe.model, bpe.json, tokens.txt, tokens.spans, embed.vec,
//!             ner.train, ner.test, tagger.model, tagger.json,
//!             report.json, pr.csv}
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::bpe::{self, BpeModel, Marker};
use crate::classify::{self, SagaConfig};
use crate::corpus::{self, CorpusSampleConfig, DumpFormat, FilterConfig, Language};
use crate::embed::{self, EmbedConfig, EmbeddingTable};
use crate::error::{Error, Result};
use crate::metrics::{self, EvalReport};
use crate::nerdata::{self, SplitConfig, TaggedSentence};
use crate::tokenize::{self, TokenizerSpec};
use crate::PipelineScalar;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    Word,
    Char,
    Ngram(usize),
    /// BPE with the given target vocabulary.
    Bpe(usize),
}

impl Strategy {
    /// word, char, bigram, trigram and BPE at 5k, 10k, 25k, 50k and 100k.
    pub fn defaults() -> Vec<Strategy> {
        let mut all = vec![Strategy::Word, Strategy::Char, Strategy::Ngram(2), Strategy::Ngram(3)];
        all.extend([5_000, 10_000, 25_000, 50_000, 100_000].map(Strategy::Bpe));
        all
    }

    pub fn is_bpe(&self) -> bool {
        matches!(self, Strategy::Bpe(_))
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Word => f.write_str("word"),
            Strategy::Char => f.write_str("char"),
            Strategy::Ngram(2) => f.write_str("bigram"),
            Strategy::Ngram(3) => f.write_str("trigram"),
            Strategy::Ngram(n) => write!(f, "ngram-{n}"),
            Strategy::Bpe(v) if v % 1000 == 0 => write!(f, "bpe-{}k", v / 1000),
            Strategy::Bpe(v) => write!(f, "bpe-{v}"),
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    /// Accepts `word`, `char`, `bigram`, `trigram`, `ngram-<n>` and
    /// `bpe-<n>` with an optional `k` suffix.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown strategy {s:?}"));
        let number = |digits: &str| digits.parse::<usize>().map_err(|_| bad());
        match s {
            "word" => Ok(Strategy::Word),
            "char" => Ok(Strategy::Char),
            "bigram" => Ok(Strategy::Ngram(2)),
            "trigram" => Ok(Strategy::Ngram(3)),
            _ => {
                if let Some(n) = s.strip_prefix("ngram-") {
                    let n = number(n)?;
                    TokenizerSpec::ngram(n)?;
                    Ok(Strategy::Ngram(n))
                } else if let Some(v) = s.strip_prefix("bpe-") {
                    let target = match v.strip_suffix('k') {
                        Some(k) => number(k)?.checked_mul(1000).ok_or_else(bad)?,
                        None => number(v)?,
                    };
                    if target == 0 {
                        return Err(bad());
                    }
                    Ok(Strategy::Bpe(target))
                } else {
                    Err(bad())
                }
            }
        }
    }
}

impl Serialize for Strategy {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Strategy {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

mod text_form {
    use std::fmt::Display;
    use std::str::FromStr;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<T: Display, S: Serializer>(value: &T, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(value)
    }

    pub fn deserialize<'de, T, D>(deserializer: D) -> Result<T, D::Error>
    where
        T: FromStr,
        T::Err: Display,
        D: Deserializer<'de>,
    {
        String::deserialize(deserializer)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSource {
    pub path: PathBuf,
    #[serde(with = "text_form")]
    pub format: DumpFormat,
    #[serde(default = "default_sample_size")]
    pub sample_size: usize,
    #[serde(default = "default_min_length")]
    pub min_length: usize,
}

fn default_sample_size() -> usize {
    CorpusSampleConfig::default().sample_size
}

fn default_min_length() -> usize {
    FilterConfig::default().min_length
}

/// Either one `dataset` to split, or a predefined `train`/`test` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NerSource {
    pub dataset: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
}

fn default_train_fraction() -> f64 {
    SplitConfig::default().train_fraction
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub language: String,
    /// Master seed. When set it replaces the embed and saga seeds and drives
    /// corpus sampling and the NER split; otherwise those two use 0.
    pub seed: Option<u64>,
    #[serde(default = "Strategy::defaults")]
    pub strategies: Vec<Strategy>,
    /// Prefix words with the begin-of-word marker before BPE training.
    #[serde(default = "default_true")]
    pub bpe_marker: bool,
    /// Defaults to `out` next to the config file.
    pub output: Option<PathBuf>,
    /// Strategy jobs run at once; unset uses one per core.
    pub jobs: Option<usize>,
    pub corpus: CorpusSource,
    pub ner: NerSource,
    #[serde(default)]
    pub embed: EmbedConfig,
    #[serde(default)]
    pub saga: SagaConfig,
}

/// Seeds actually used by each randomized step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seeds {
    pub sample: u64,
    pub split: u64,
    pub embed: u64,
    pub saga: u64,
}

impl ExperimentConfig {
    /// Parses TOML; relative paths are taken relative to `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut config: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        };
        resolve(&mut config.corpus.path);
        for p in [
            &mut config.ner.dataset,
            &mut config.ner.train,
            &mut config.ner.test,
            &mut config.output,
        ]
        .into_iter()
        .flatten()
        {
            resolve(p);
        }
        if config.output.is_none() {
            config.output = Some(base_dir.join("out"));
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn seeds(&self) -> Seeds {
        match self.seed {
            Some(s) => Seeds {
                sample: s,
                split: s,
                embed: s,
                saga: s,
            },
            None => Seeds {
                sample: 0,
                split: 0,
                embed: self.embed.seed,
                saga: self.saga.seed,
            },
        }
    }

    pub fn effective_embed(&self) -> EmbedConfig {
        EmbedConfig {
            seed: self.seeds().embed,
            ..self.embed.clone()
        }
    }

    pub fn effective_saga(&self) -> SagaConfig {
        SagaConfig {
            seed: self.seeds().saga,
            ..self.saga.clone()
        }
    }

    pub fn marker(&self) -> Marker {
        if self.bpe_marker {
            Marker::BeginOfWord
        } else {
            Marker::None
        }
    }

    pub fn output_root(&self) -> PathBuf {
        self.output
            .clone()
            .unwrap_or_else(|| PathBuf::from("out"))
            .join(&self.language)
    }

    /// Checks everything that can be checked before any work starts.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.language.is_empty() || self.language.contains(['/', '\\']) || self.language.starts_with('.') {
            return fail(format!("invalid language tag {:?}", self.language));
        }
        if self.strategies.is_empty() {
            return fail("strategy list is empty".into());
        }
        let mut seen = HashSet::new();
        for s in &self.strategies {
            if !seen.insert(s) {
                return fail(format!("strategy {s} listed twice"));
            }
        }
        if self.corpus.sample_size == 0 {
            return fail("corpus.sample_size must be at least 1".into());
        }
        if self.jobs == Some(0) {
            return fail("jobs must be at least 1".into());
        }
        self.embed.validate()?;
        self.saga.validate()?;
        let ner = &self.ner;
        match (&ner.dataset, &ner.train, &ner.test) {
            (Some(_), None, None) => {
                if !(ner.train_fraction > 0.0 && ner.train_fraction < 1.0) {
                    return fail(format!(
                        "ner.train_fraction must lie in (0, 1), got {}",
                        ner.train_fraction
                    ));
                }
            }
            (None, Some(_), Some(_)) => {}
            _ => return fail("ner needs either `dataset` or both `train` and `test`".into()),
        }
        let inputs =
            std::iter::once(&self.corpus.path).chain([&ner.dataset, &ner.train, &ner.test].into_iter().flatten());
        for path in inputs {
            if !path.is_file() {
                return fail(format!("input file {} does not exist", path.display()));
            }
        }
        Ok(())
    }
}

/// One executed (or reused) stage and the artifacts it vouches for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub strategy: Option<String>,
    /// True when unchanged inputs let the previous outputs stand.
    pub reused: bool,
    pub wall_ms: u64,
    /// Artifact path relative to the language directory → SHA-256.
    pub artifacts: BTreeMap<String, String>,
}

impl StageRecord {
    fn key(&self) -> String {
        match &self.strategy {
            Some(s) => format!("{s}/{}", self.stage),
            None => self.stage.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config: serde_json::Value,
    pub stages: BTreeMap<String, StageRecord>,
    /// Strategy → error message for strategies whose last run failed.
    pub failures: BTreeMap<String, String>,
}

const STAMPS: &str = ".stamps.json";

#[derive(Debug, Default, Serialize, Deserialize)]
struct Stamp {
    fingerprint: String,
    outputs: BTreeMap<String, String>,
}

/// Maps a stage name back to the subcommand that produces its artifacts.
fn producer(stage: &str) -> &'static str {
    match stage {
        "ingest" => "ingest",
        "train-bpe" => "train-bpe",
        "train-embed" => "train-embed",
        "split-ner" | "prep-ner" => "prep-ner",
        "train-ner" => "train-ner",
        "eval" => "eval",
        _ => "run-all",
    }
}

pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Writes through a temporary file so an interrupted stage never leaves a
/// truncated artifact behind.
fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let mut writer = BufWriter::new(file);
    body(&mut writer)?;
    writer.flush().map_err(|e| Error::io(&tmp, e))?;
    drop(writer);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_file(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(open(path)?)?)
}

/// A stage's declared inputs (with the subcommand that makes each) and
/// outputs, relative to the language root and the stage directory.
struct StageSpec<'a> {
    name: &'static str,
    strategy: Option<Strategy>,
    dir: &'a Path,
    params: String,
    inputs: Vec<(PathBuf, &'static str)>,
    outputs: &'a [&'a str],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageName {
    Ingest,
    TrainBpe,
    TrainEmbed,
    PrepNer,
    TrainNer,
    Eval,
}

/// A validated experiment bound to its output directory.
#[derive(Debug, Clone)]
pub struct Experiment {
    config: ExperimentConfig,
    root: PathBuf,
    language: Language,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Ok,
    Failed(String),
    Missing,
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RunStatus::Ok => "ok",
            RunStatus::Failed(_) => "failed",
            RunStatus::Missing => "missing",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub strategy: Strategy,
    pub status: RunStatus,
    pub accuracy: Option<f64>,
    pub macro_f1: Option<f64>,
    pub nonzero_class_count: Option<usize>,
    pub class_total: Option<usize>,
}

impl SummaryRow {
    fn from_report(strategy: Strategy, report: &EvalReport) -> Self {
        SummaryRow {
            strategy,
            status: RunStatus::Ok,
            accuracy: Some(report.accuracy),
            macro_f1: Some(report.macro_f1),
            nonzero_class_count: Some(report.nonzero_class_count),
            class_total: Some(report.class_total),
        }
    }

    fn without_report(strategy: Strategy, status: RunStatus) -> Self {
        SummaryRow {
            strategy,
            status,
            accuracy: None,
            macro_f1: None,
            nonzero_class_count: None,
            class_total: None,
        }
    }
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let root = config.output_root();
        let language = Language::from_tag(&config.language);
        Ok(Experiment { config, root, language })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    /// `<out>/<lang>`.
    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn strategy_dir(&self, strategy: &Strategy) -> PathBuf {
        self.root.join(strategy.to_string())
    }

    pub fn corpus_path(&self) -> PathBuf {
        self.root.join("corpus.txt")
    }

    pub fn summary_path(&self) -> PathBuf {
        self.root.join("summary.csv")
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn report_export_path(&self, strategy: &Strategy) -> PathBuf {
        self.root
            .join("reports")
            .join(format!("{}_{strategy}_report.json", self.config.language))
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.jobs.unwrap_or(0))
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
    }

    fn run_stage(&self, spec: StageSpec<'_>, body: impl FnOnce() -> Result<()>) -> Result<StageRecord> {
        let started = Instant::now();
        let mut hasher = Sha256::new();
        for part in [VERSION, spec.name, spec.params.as_str()] {
            hasher.update(part.as_bytes());
            hasher.update([0]);
        }
        for (path, producer) in &spec.inputs {
            if !path.is_file() {
                return Err(Error::MissingArtifact {
                    path: path.clone(),
                    producer,
                });
            }
            let name = path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            hasher.update(name.as_bytes());
            hasher.update(file_hash(path)?.as_bytes());
        }
        let fingerprint = hex::encode(hasher.finalize());

        let stamps_path = spec.dir.join(STAMPS);
        let mut stamps: BTreeMap<String, Stamp> = if stamps_path.is_file() {
            read_json(&stamps_path).unwrap_or_default()
        } else {
            BTreeMap::new()
        };
        let current = |name: &str| -> Option<String> {
            let path = spec.dir.join(name);
            path.is_file().then(|| file_hash(&path).ok()).flatten()
        };
        let reusable = stamps.get(spec.name).is_some_and(|s| {
            s.fingerprint == fingerprint
                && spec
                    .outputs
                    .iter()
                    .all(|o| s.outputs.get(*o).is_some_and(|h| current(o).as_ref() == Some(h)))
        });

        let outputs = if reusable {
            log::debug!(
                "{} {}: inputs unchanged, reusing outputs",
                spec.name,
                spec.dir.display()
            );
            stamps[spec.name].outputs.clone()
        } else {
            fs::create_dir_all(spec.dir).map_err(|e| Error::io(spec.dir, e))?;
            body()?;
            let mut outputs = BTreeMap::new();
            for o in spec.outputs {
                outputs.insert(o.to_string(), file_hash(&spec.dir.join(o))?);
            }
            stamps.insert(
                spec.name.to_string(),
                Stamp {
                    fingerprint,
                    outputs: outputs.clone(),
                },
            );
            write_json(&stamps_path, &stamps)?;
            outputs
        };

        let prefix = match spec.strategy {
            Some(s) => format!("{s}/"),
            None => String::new(),
        };
        Ok(StageRecord {
            stage: spec.name.to_string(),
            strategy: spec.strategy.map(|s| s.to_string()),
            reused: reusable,
            wall_ms: started.elapsed().as_millis() as u64,
            artifacts: outputs.into_iter().map(|(k, v)| (format!("{prefix}{k}"), v)).collect(),
        })
    }

    /// Parses, filters, cleans and samples the corpus into `corpus.txt`.
    pub fn ingest(&self) -> Result<StageRecord> {
        let c = &self.config.corpus;
        let spec = StageSpec {
            name: "ingest",
            strategy: None,
            dir: &self.root,
            params: format!(
                "{} {} {} {} {}",
                c.format,
                c.sample_size,
                c.min_length,
                self.seeds().sample,
                self.config.language
            ),
            inputs: vec![(c.path.clone(), "ingest")],
            outputs: &["corpus.txt"],
        };
        self.run_stage(spec, || {
            let raw = corpus::parse_dump(open(&c.path)?, c.format)?;
            let parsed = raw.len();
            let kept = corpus::filter_boilerplate(
                raw,
                &FilterConfig {
                    min_length: c.min_length,
                },
            );
            let clean = corpus::clean_articles(&kept, self.language);
            let sampled = corpus::sample(
                &clean,
                &CorpusSampleConfig {
                    sample_size: c.sample_size,
                    seed: self.seeds().sample,
                },
            );
            if sampled.is_empty() {
                return Err(Error::Config(format!(
                    "no articles in {} survive filtering",
                    c.path.display()
                )));
            }
            log::info!(
                "ingest: {} articles parsed, {} kept, {} sampled",
                parsed,
                clean.len(),
                sampled.len()
            );
            write_file(&self.corpus_path(), |w| corpus::write_clean_corpus(&sampled, w))
        })
    }

    fn split_ner(&self) -> Result<StageRecord> {
        let ner = &self.config.ner;
        let inputs: Vec<(PathBuf, &'static str)> = [&ner.dataset, &ner.train, &ner.test]
            .into_iter()
            .flatten()
            .map(|p| (p.clone(), "prep-ner"))
            .collect();
        let spec = StageSpec {
            name: "split-ner",
            strategy: None,
            dir: &self.root,
            params: format!(
                "{} {} {}",
                ner.dataset.is_some(),
                ner.train_fraction,
                self.seeds().split
            ),
            inputs,
            outputs: &["ner.train.conll", "ner.test.conll", "label_histogram.csv"],
        };
        self.run_stage(spec, || {
            let (train, test) = match (&ner.dataset, &ner.train, &ner.test) {
                (Some(dataset), _, _) => {
                    let all = nerdata::parse_conll(open(dataset)?)?;
                    nerdata::split(
                        &all,
                        &SplitConfig {
                            train_fraction: ner.train_fraction,
                            seed: self.seeds().split,
                        },
                    )?
                }
                (None, Some(train), Some(test)) => {
                    (nerdata::parse_conll(open(train)?)?, nerdata::parse_conll(open(test)?)?)
                }
                _ => unreachable!("validated"),
            };
            for (name, part) in [("train", &train), ("test", &test)] {
                if part.is_empty() {
                    return Err(Error::Config(format!("NER {name} set is empty")));
                }
                let issues = nerdata::lint(part);
                if !issues.is_empty() {
                    log::warn!("NER {name} set: {} I- tags do not continue an entity", issues.len());
                }
            }
            write_file(&self.root.join("ner.train.conll"), |w| nerdata::write_tagged(&train, w))?;
            write_file(&self.root.join("ner.test.conll"), |w| nerdata::write_tagged(&test, w))?;
            let all: Vec<TaggedSentence> = train.iter().chain(&test).cloned().collect();
            let histogram = nerdata::label_histogram(&all);
            write_file(&self.root.join("label_histogram.csv"), |w| {
                metrics::emit_histogram_csv(&histogram, w)
            })
        })
    }

    fn seeds(&self) -> Seeds {
        self.config.seeds()
    }

    fn bpe_input(&self, strategy: &Strategy) -> Vec<(PathBuf, &'static str)> {
        if strategy.is_bpe() {
            vec![(self.strategy_dir(strategy).join("bpe.model"), "train-bpe")]
        } else {
            Vec::new()
        }
    }

    fn tokenizer(&self, strategy: &Strategy) -> Result<TokenizerSpec> {
        Ok(match strategy {
            Strategy::Word => TokenizerSpec::Word,
            Strategy::Char => TokenizerSpec::Char,
            Strategy::Ngram(n) => TokenizerSpec::ngram(*n)?,
            Strategy::Bpe(_) => TokenizerSpec::load_bpe(&self.strategy_dir(strategy).join("bpe.model"))?,
        })
    }

    fn train_bpe(&self, strategy: &Strategy) -> Result<Option<StageRecord>> {
        let Strategy::Bpe(target) = *strategy else {
            return Ok(None);
        };
        let dir = self.strategy_dir(strategy);
        let spec = StageSpec {
            name: "train-bpe",
            strategy: Some(*strategy),
            dir: &dir,
            params: format!("{target} {:?}", self.config.marker()),
            inputs: vec![(self.corpus_path(), "ingest")],
            outputs: &["bpe.model", "bpe.json"],
        };
        self.run_stage(spec, || {
            let docs = corpus::read_clean_corpus(open(&self.corpus_path())?)?;
            let freqs = bpe::count_words(&docs, self.config.marker());
            let trained = bpe::train(&freqs, target)?;
            log::info!(
                "{strategy}: {} merges, vocabulary {} of {target}",
                trained.model.merges().len(),
                trained.achieved_vocab()
            );
            write_file(&dir.join("bpe.model"), |w| trained.model.save(w))?;
            write_json(
                &dir.join("bpe.json"),
                &BpeInfo {
                    target_vocab: trained.target_vocab,
                    achieved_vocab: trained.achieved_vocab(),
                    merges: trained.model.merges().len(),
                    stopped_early: trained.stopped_early,
                },
            )
        })
        .map(Some)
    }

    fn train_embed(&self, strategy: &Strategy) -> Result<StageRecord> {
        let dir = self.strategy_dir(strategy);
        let embed_config = self.config.effective_embed();
        let mut inputs = vec![(self.corpus_path(), "ingest")];
        inputs.extend(self.bpe_input(strategy));
        let spec = StageSpec {
            name: "train-embed",
            strategy: Some(*strategy),
            dir: &dir,
            params: format!("{strategy} {}", serde_json::to_string(&embed_config)?),
            inputs,
            outputs: &["tokens.txt", "tokens.spans", "embed.vec"],
        };
        self.run_stage(spec, || {
            let tokenizer = self.tokenizer(strategy)?;
            let docs = corpus::read_clean_corpus(open(&self.corpus_path())?)?;
            let streams = tokenize::tokenize_corpus(&docs, &tokenizer);
            write_file(&dir.join("tokens.spans"), |spans| {
                write_file(&dir.join("tokens.txt"), |tokens| {
                    tokenize::write_streams(&streams, tokens, &mut *spans)
                })
            })?;
            let mut table: EmbeddingTable<PipelineScalar> = embed::train(&streams, &embed_config)?;
            if !table.is_finite() {
                return Err(Error::Divergence {
                    step_size: embed_config.lr_start,
                });
            }
            table.drop_output();
            log::info!("{strategy}: {} embeddings of dim {}", table.len(), table.dim());
            write_file(&dir.join("embed.vec"), |w| table.save_text(w))
        })
    }

    fn prep_ner(&self, strategy: &Strategy) -> Result<StageRecord> {
        let dir = self.strategy_dir(strategy);
        let mut inputs = vec![
            (self.root.join("ner.train.conll"), "prep-ner"),
            (self.root.join("ner.test.conll"), "prep-ner"),
        ];
        inputs.extend(self.bpe_input(strategy));
        let spec = StageSpec {
            name: "prep-ner",
            strategy: Some(*strategy),
            dir: &dir,
            params: format!("{strategy} {:?}", self.language),
            inputs,
            outputs: &["ner.train", "ner.test"],
        };
        self.run_stage(spec, || {
            let tokenizer = self.tokenizer(strategy)?;
            for part in ["train", "test"] {
                let gold = nerdata::parse_conll(open(&self.root.join(format!("ner.{part}.conll")))?)?;
                let propagated: Vec<_> = gold
                    .iter()
                    .map(|s| nerdata::propagate_tags(s, &tokenizer, self.language))
                    .collect();
                write_file(&dir.join(format!("ner.{part}")), |w| {
                    nerdata::write_propagated(&propagated, w)
                })?;
            }
            Ok(())
        })
    }

    fn train_ner(&self, strategy: &Strategy) -> Result<StageRecord> {
        let dir = self.strategy_dir(strategy);
        let saga_config = self.config.effective_saga();
        let spec = StageSpec {
            name: "train-ner",
            strategy: Some(*strategy),
            dir: &dir,
            params: serde_json::to_string(&saga_config)?,
            inputs: vec![
                (dir.join("embed.vec"), "train-embed"),
                (dir.join("ner.train"), "prep-ner"),
            ],
            outputs: &["tagger.model", "tagger.json"],
        };
        self.run_stage(spec, || {
            let table: EmbeddingTable<PipelineScalar> = EmbeddingTable::load_text(open(&dir.join("embed.vec"))?)?;
            let train = nerdata::read_propagated(open(&dir.join("ner.train"))?)?;
            let features = classify::featurize(&train, &table)?;
            let model = classify::saga_fit(&features, &saga_config)?;
            log::info!(
                "{strategy}: SAGA ran {} epochs (converged: {})",
                model.epochs_run(),
                model.converged
            );
            write_file(&dir.join("tagger.model"), |w| classify::save(&model, w))?;
            write_json(
                &dir.join("tagger.json"),
                &TaggerInfo {
                    epochs_run: model.epochs_run(),
                    converged: model.converged,
                    l2_strength: model.l2_strength,
                    step_size: model.step_size,
                    initial_loss: model.initial_loss,
                    final_loss: model.training_log.last().copied().unwrap_or(model.initial_loss),
                    train_rows: features.x.rows(),
                    train_oov: features.oov_count,
                },
            )
        })
    }

    fn eval(&self, strategy: &Strategy) -> Result<(StageRecord, EvalReport)> {
        let dir = self.strategy_dir(strategy);
        let mut inputs = vec![
            (dir.join("tagger.model"), "train-ner"),
            (dir.join("tagger.json"), "train-ner"),
            (dir.join("embed.vec"), "train-embed"),
            (dir.join("ner.test"), "prep-ner"),
        ];
        if strategy.is_bpe() {
            inputs.push((dir.join("bpe.json"), "train-bpe"));
        }
        let spec = StageSpec {
            name: "eval",
            strategy: Some(*strategy),
            dir: &dir,
            params: format!("{} {strategy}", serde_json::to_string(&self.fingerprint_config())?),
            inputs,
            outputs: &["report.json", "pr.csv"],
        };
        let record = self.run_stage(spec, || {
            let table: EmbeddingTable<PipelineScalar> = EmbeddingTable::load_text(open(&dir.join("embed.vec"))?)?;
            let model: classify::SoftmaxModel<PipelineScalar> = classify::load(open(&dir.join("tagger.model"))?)?;
            let tagger: TaggerInfo = read_json(&dir.join("tagger.json"))?;
            let bpe_info: Option<BpeInfo> = if strategy.is_bpe() {
                Some(read_json(&dir.join("bpe.json"))?)
            } else {
                None
            };
            let test = nerdata::read_propagated(open(&dir.join("ner.test"))?)?;
            let (x, oov) = classify::embed_rows(&test, &table)?;
            let pred = model.predict_labels(&x)?;
            let gold: Vec<String> = test.iter().flat_map(|s| s.tags.iter().map(|t| t.to_string())).collect();
            let scores = metrics::score(&gold, &pred)?;
            let echo = self.config_echo(strategy, &table, &tagger, bpe_info.as_ref());
            let report = EvalReport::new(
                &self.config.language,
                &strategy.to_string(),
                &scores,
                oov,
                echo,
                self.seed_map(),
            );
            write_file(&dir.join("report.json"), |w| metrics::emit_report_json(&report, w))?;
            write_file(&dir.join("pr.csv"), |w| metrics::emit_pr_csv(&report, w))
        })?;
        let report = metrics::parse_report_json(open(&dir.join("report.json"))?)?;
        Ok((record, report))
    }

    /// The config minus settings that cannot change any artifact.
    fn fingerprint_config(&self) -> ExperimentConfig {
        ExperimentConfig {
            output: None,
            jobs: None,
            ..self.config.clone()
        }
    }

    fn seed_map(&self) -> BTreeMap<String, u64> {
        let s = self.seeds();
        BTreeMap::from([
            ("sample".to_string(), s.sample),
            ("split".to_string(), s.split),
            ("embed".to_string(), s.embed),
            ("saga".to_string(), s.saga),
        ])
    }

    /// Every setting behind a report, including the choices the experiment
    /// design leaves open.
    fn config_echo(
        &self,
        strategy: &Strategy,
        table: &EmbeddingTable<PipelineScalar>,
        tagger: &TaggerInfo,
        bpe_info: Option<&BpeInfo>,
    ) -> BTreeMap<String, String> {
        let c = &self.config;
        let e = c.effective_embed();
        let s = c.effective_saga();
        let mut echo: BTreeMap<String, String> = [
            ("language", c.language.clone()),
            ("case_folding", format!("{:?}", self.language).to_lowercase()),
            ("strategy", strategy.to_string()),
            ("corpus.format", c.corpus.format.to_string()),
            ("corpus.sample_size", c.corpus.sample_size.to_string()),
            ("corpus.min_length", c.corpus.min_length.to_string()),
            ("embed.dim", e.dim.to_string()),
            ("embed.window", e.window.to_string()),
            ("embed.negatives", e.negatives.to_string()),
            ("embed.epochs", e.epochs.to_string()),
            ("embed.min_count", e.min_count.to_string()),
            ("embed.lr_start", e.lr_start.to_string()),
            ("embed.lr_end", e.lr_end.to_string()),
            ("embed.subsample_t", e.subsample_t.to_string()),
            ("embed.table_size", e.table_size.to_string()),
            ("embed.vocab_size", table.len().to_string()),
            ("saga.max_epochs", s.max_epochs.to_string()),
            ("saga.tol", s.tol.to_string()),
            ("saga.lambda", tagger.l2_strength.to_string()),
            ("saga.step_size", tagger.step_size.to_string()),
            ("saga.epochs_run", tagger.epochs_run.to_string()),
            ("saga.converged", tagger.converged.to_string()),
            ("saga.tol_measure", "full-objective".to_string()),
            (
                "ner.split",
                if c.ner.dataset.is_some() {
                    "random"
                } else {
                    "predefined"
                }
                .to_string(),
            ),
            ("ner.train_fraction", c.ner.train_fraction.to_string()),
            ("ner.train_subtokens", tagger.train_rows.to_string()),
            ("ner.train_oov", tagger.train_oov.to_string()),
            ("ner_case_folded", "true".to_string()),
            ("oov_policy", "zero".to_string()),
            ("features", "token-embedding".to_string()),
            ("version", VERSION.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        if let Some(b) = bpe_info {
            echo.insert("bpe.marker".into(), format!("{:?}", c.marker()));
            echo.insert("bpe.target_vocab".into(), b.target_vocab.to_string());
            echo.insert("bpe.achieved_vocab".into(), b.achieved_vocab.to_string());
            echo.insert("bpe.stopped_early".into(), b.stopped_early.to_string());
        }
        echo
    }

    /// Runs one stage for every configured strategy (or the language-level
    /// stage), returning the records or the first failure.
    pub fn run_stage_command(&self, stage: StageName) -> Result<Vec<StageRecord>> {
        let result = self.stage_records(stage);
        let records = match &result {
            Ok(r) => r.clone(),
            Err(_) => Vec::new(),
        };
        self.update_manifest(&records, &BTreeMap::new(), &[])?;
        if stage == StageName::Eval && result.is_ok() {
            self.report()?;
        }
        result
    }

    fn stage_records(&self, stage: StageName) -> Result<Vec<StageRecord>> {
        match stage {
            StageName::Ingest => return Ok(vec![self.ingest()?]),
            StageName::PrepNer => {
                let mut records = vec![self.split_ner()?];
                records.extend(self.each_strategy(|s| self.prep_ner(s).map(Some))?);
                return Ok(records);
            }
            _ => {}
        }
        self.each_strategy(|s| match stage {
            StageName::TrainBpe => self.train_bpe(s),
            StageName::TrainEmbed => self.train_embed(s).map(Some),
            StageName::TrainNer => self.train_ner(s).map(Some),
            StageName::Eval => self.eval(s).map(|(r, _)| Some(r)),
            StageName::Ingest | StageName::PrepNer => unreachable!(),
        })
    }

    fn each_strategy(&self, f: impl Fn(&Strategy) -> Result<Option<StageRecord>> + Sync) -> Result<Vec<StageRecord>> {
        let results: Vec<Result<Option<StageRecord>>> = self
            .pool()?
            .install(|| self.config.strategies.par_iter().map(&f).collect());
        let mut records = Vec::new();
        for r in results {
            records.extend(r?);
        }
        Ok(records)
    }

    fn run_strategy(&self, strategy: &Strategy) -> Result<(Vec<StageRecord>, EvalReport)> {
        let mut records = Vec::new();
        records.extend(self.train_bpe(strategy)?);
        records.push(self.train_embed(strategy)?);
        records.push(self.prep_ner(strategy)?);
        records.push(self.train_ner(strategy)?);
        let (record, report) = self.eval(strategy)?;
        records.push(record);
        Ok((records, report))
    }

    /// Every stage for every strategy; a failing strategy is reported in the
    /// summary without stopping the others.
    pub fn run_all(&self) -> Result<Vec<SummaryRow>> {
        let mut records = vec![self.ingest()?, self.split_ner()?];
        let results: Vec<Result<(Vec<StageRecord>, EvalReport)>> = self.pool()?.install(|| {
            self.config
                .strategies
                .par_iter()
                .map(|s| self.run_strategy(s))
                .collect()
        });
        let mut failures = BTreeMap::new();
        let mut rows = Vec::new();
        let mut succeeded = Vec::new();
        for (strategy, result) in self.config.strategies.iter().zip(results) {
            match result {
                Ok((r, report)) => {
                    records.extend(r);
                    rows.push(SummaryRow::from_report(*strategy, &report));
                    succeeded.push(strategy.to_string());
                }
                Err(e) => {
                    log::error!("{strategy}: {e}");
                    failures.insert(strategy.to_string(), e.to_string());
                    rows.push(SummaryRow::without_report(*strategy, RunStatus::Failed(e.to_string())));
                }
            }
        }
        self.export_reports(&rows)?;
        write_file(&self.summary_path(), |w| write_summary(&rows, w))?;
        self.update_manifest(&records, &failures, &succeeded)?;
        Ok(rows)
    }

    /// Collects existing per-strategy reports into `reports/` and rewrites
    /// `summary.csv`; strategies without a report are marked missing.
    pub fn report(&self) -> Result<Vec<SummaryRow>> {
        let manifest = self.load_manifest();
        let mut rows = Vec::new();
        for strategy in &self.config.strategies {
            let path = self.strategy_dir(strategy).join("report.json");
            let row = if path.is_file() {
                SummaryRow::from_report(*strategy, &metrics::parse_report_json(open(&path)?)?)
            } else {
                let status = match manifest.as_ref().and_then(|m| m.failures.get(&strategy.to_string())) {
                    Some(msg) => RunStatus::Failed(msg.clone()),
                    None => RunStatus::Missing,
                };
                SummaryRow::without_report(*strategy, status)
            };
            rows.push(row);
        }
        self.export_reports(&rows)?;
        write_file(&self.summary_path(), |w| write_summary(&rows, w))?;
        Ok(rows)
    }

    fn export_reports(&self, rows: &[SummaryRow]) -> Result<()> {
        let dir = self.root.join("reports");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for row in rows.iter().filter(|r| r.status == RunStatus::Ok) {
            let from = self.strategy_dir(&row.strategy).join("report.json");
            let to = self.report_export_path(&row.strategy);
            fs::copy(&from, &to).map_err(|e| Error::io(&to, e))?;
        }
        Ok(())
    }

    fn load_manifest(&self) -> Option<RunManifest> {
        let path = self.manifest_path();
        path.is_file().then(|| read_json(&path).ok()).flatten()
    }

    fn update_manifest(
        &self,
        records: &[StageRecord],
        failures: &BTreeMap<String, String>,
        succeeded: &[String],
    ) -> Result<()> {
        fs::create_dir_all(&self.root).map_err(|e| Error::io(&self.root, e))?;
        let mut manifest = self.load_manifest().unwrap_or_else(|| RunManifest {
            version: VERSION.to_string(),
            config: serde_json::Value::Null,
            stages: BTreeMap::new(),
            failures: BTreeMap::new(),
        });
        manifest.version = VERSION.to_string();
        manifest.config = serde_json::to_value(&self.config)?;
        for r in records {
            manifest.stages.insert(r.key(), r.clone());
        }
        for s in succeeded {
            manifest.failures.remove(s);
        }
        manifest.failures.extend(failures.clone());
        write_json(&self.manifest_path(), &manifest)
    }

    /// Checks that every artifact in the manifest exists and matches its hash.
    pub fn verify_manifest(&self) -> Result<usize> {
        let path = self.manifest_path();
        if !path.is_file() {
            return Err(Error::MissingArtifact {
                path,
                producer: "run-all",
            });
        }
        verify_manifest(&self.root, &read_json(&path)?)
    }
}

/// Verifies `manifest` against the files under `root`; returns the number of
/// artifacts checked.
pub fn verify_manifest(root: &Path, manifest: &RunManifest) -> Result<usize> {
    let mut checked = 0;
    for record in manifest.stages.values() {
        for (rel, hash) in &record.artifacts {
            let path = root.join(rel);
            if !path.is_file() {
                return Err(Error::MissingArtifact {
                    path,
                    producer: producer(&record.stage),
                });
            }
            if &file_hash(&path)? != hash {
                return Err(Error::HashMismatch { path });
            }
            checked += 1;
        }
    }
    Ok(checked)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BpeInfo {
    target_vocab: usize,
    achieved_vocab: usize,
    merges: usize,
    stopped_early: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TaggerInfo {
    epochs_run: usize,
    converged: bool,
    l2_strength: f64,
    step_size: f64,
    initial_loss: f64,
    final_loss: f64,
    train_rows: usize,
    train_oov: usize,
}

/// `strategy,status,accuracy,macro_f1,nonzero_class_count,class_total`;
/// failed strategies leave the score columns empty.
pub fn write_summary<W: Write>(rows: &[SummaryRow], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record([
        "strategy",
        "status",
        "accuracy",
        "macro_f1",
        "nonzero_class_count",
        "class_total",
    ])?;
    let real = |x: Option<f64>| x.map(|v| format!("{v:.6}")).unwrap_or_default();
    let count = |x: Option<usize>| x.map(|v| v.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.strategy.to_string(),
            r.status.to_string(),
            real(r.accuracy),
            real(r.macro_f1),
            count(r.nonzero_class_count),
            count(r.class_total),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a summary written by [`write_summary`].
pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut reader = csv::Reader::from_reader(open(path)?);
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let field = |i: usize| record.get(i).unwrap_or("");
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let real = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse()
                    .map(Some)
                    .map_err(|_| Error::format(line, format!("bad number {s:?}")))
            }
        };
        let count = |s: &str| -> Result<Option<usize>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse()
                    .map(Some)
                    .map_err(|_| Error::format(line, format!("bad count {s:?}")))
            }
        };
        let status = match field(1) {
            "ok" => RunStatus::Ok,
            "missing" => RunStatus::Missing,
            "failed" => RunStatus::Failed(String::new()),
            other => return Err(Error::format(line, format!("unknown status {other:?}"))),
        };
        rows.push(SummaryRow {
            strategy: field(0).parse()?,
            status,
            accuracy: real(field(2))?,
            macro_f1: real(field(3))?,
            nonzero_class_count: count(field(4))?,
            class_total: count(field(5))?,
        });
    }
    Ok(rows)
}

/// Loads a BPE model file written by a `train-bpe` stage.
pub fn load_bpe_model(path: &Path) -> Result<BpeModel> {
    BpeModel::load(open(path)?)
}
