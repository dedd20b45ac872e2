//! BIO-tagged NER data: CoNLL reading/writing, seeded train/test split, and
//! propagation of word-level tags onto sub-token boundaries.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{normalize, Language};
use crate::error::{Error, Result};
use crate::tokenize::{tokenize, TokenizerSpec};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BioTag {
    Outside,
    Begin(String),
    Inside(String),
}

impl BioTag {
    pub fn entity_type(&self) -> Option<&str> {
        match self {
            BioTag::Outside => None,
            BioTag::Begin(t) | BioTag::Inside(t) => Some(t),
        }
    }

    pub fn is_outside(&self) -> bool {
        matches!(self, BioTag::Outside)
    }
}

impl FromStr for BioTag {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "O" {
            return Ok(BioTag::Outside);
        }
        let parsed = match s.split_once('-') {
            Some(("B", t)) if !t.is_empty() => BioTag::Begin(t.to_string()),
            Some(("I", t)) if !t.is_empty() => BioTag::Inside(t.to_string()),
            _ => return Err(format!("{s:?} is not a BIO tag (O, B-X or I-X)")),
        };
        Ok(parsed)
    }
}

impl fmt::Display for BioTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BioTag::Outside => f.write_str("O"),
            BioTag::Begin(t) => write!(f, "B-{t}"),
            BioTag::Inside(t) => write!(f, "I-{t}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedSentence {
    pub words: Vec<String>,
    pub tags: Vec<BioTag>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PropagatedSentence {
    pub subtokens: Vec<String>,
    pub tags: Vec<BioTag>,
    /// Index of the source word of each sub-token.
    pub origin_word: Vec<usize>,
}

/// Anything carrying one BIO tag per unit.
pub trait Tagged {
    fn tags(&self) -> &[BioTag];
}

impl Tagged for TaggedSentence {
    fn tags(&self) -> &[BioTag] {
        &self.tags
    }
}

impl Tagged for PropagatedSentence {
    fn tags(&self) -> &[BioTag] {
        &self.tags
    }
}

/// An `I-X` that does not continue an entity of type X.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BioLint {
    pub sentence: usize,
    pub position: usize,
    pub tag: BioTag,
}

/// Reports ill-formed `I-X` continuations. These are tolerated, not errors.
pub fn lint(sentences: &[TaggedSentence]) -> Vec<BioLint> {
    let mut found = Vec::new();
    for (si, s) in sentences.iter().enumerate() {
        for (i, tag) in s.tags.iter().enumerate() {
            if let BioTag::Inside(t) = tag {
                let continues = i > 0 && s.tags[i - 1].entity_type() == Some(t.as_str());
                if !continues {
                    found.push(BioLint {
                        sentence: si,
                        position: i,
                        tag: tag.clone(),
                    });
                }
            }
        }
    }
    found
}

/// Reads two-column CoNLL data (token and tag separated by tabs or spaces,
/// blank line between sentences). `-DOCSTART-` lines are skipped.
pub fn parse_conll<R: Read>(stream: R) -> Result<Vec<TaggedSentence>> {
    let mut sentences = Vec::new();
    let mut current = TaggedSentence {
        words: Vec::new(),
        tags: Vec::new(),
    };
    for (i, line) in BufReader::new(stream).lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            if !current.words.is_empty() {
                sentences.push(std::mem::replace(
                    &mut current,
                    TaggedSentence {
                        words: Vec::new(),
                        tags: Vec::new(),
                    },
                ));
            }
            continue;
        }
        if fields[0] == "-DOCSTART-" {
            continue;
        }
        let [word, tag] = fields[..] else {
            return Err(Error::format(
                line_no,
                format!("expected 2 fields, found {}", fields.len()),
            ));
        };
        let tag: BioTag = tag.parse().map_err(|m: String| Error::format(line_no, m))?;
        current.words.push(word.to_string());
        current.tags.push(tag);
    }
    if !current.words.is_empty() {
        sentences.push(current);
    }
    Ok(sentences)
}

/// Writes sentences back as two-column CoNLL, tab separated.
pub fn write_conll<'a, W, I>(sentences: I, mut sink: W) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = (&'a [String], &'a [BioTag])>,
{
    for (words, tags) in sentences {
        for (w, t) in words.iter().zip(tags) {
            writeln!(sink, "{w}\t{t}")?;
        }
        writeln!(sink)?;
    }
    sink.flush()?;
    Ok(())
}

pub fn write_tagged<W: Write>(sentences: &[TaggedSentence], sink: W) -> Result<()> {
    write_conll(sentences.iter().map(|s| (s.words.as_slice(), s.tags.as_slice())), sink)
}

pub fn write_propagated<W: Write>(sentences: &[PropagatedSentence], sink: W) -> Result<()> {
    write_conll(
        sentences.iter().map(|s| (s.subtokens.as_slice(), s.tags.as_slice())),
        sink,
    )
}

/// Reads a propagated dataset written by [`write_propagated`]. Word origins
/// are not part of the file, so every sub-token is given its own position.
pub fn read_propagated<R: Read>(stream: R) -> Result<Vec<PropagatedSentence>> {
    Ok(parse_conll(stream)?
        .into_iter()
        .map(|s| PropagatedSentence {
            origin_word: (0..s.words.len()).collect(),
            subtokens: s.words,
            tags: s.tags,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.9,
            seed: 0,
        }
    }
}

/// Seeded shuffle, then a prefix of `round(train_fraction · N)` sentences
/// (kept within `1..N` so neither side is empty) goes to training.
pub fn split(sentences: &[TaggedSentence], config: &SplitConfig) -> Result<(Vec<TaggedSentence>, Vec<TaggedSentence>)> {
    if !(config.train_fraction > 0.0 && config.train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train_fraction must lie in (0, 1), got {}",
            config.train_fraction
        )));
    }
    let n = sentences.len();
    if n < 2 {
        return Err(Error::Config(format!("splitting needs at least 2 sentences, got {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
    let cut = ((config.train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let train = order[..cut].iter().map(|&i| sentences[i].clone()).collect();
    let test = order[cut..].iter().map(|&i| sentences[i].clone()).collect();
    Ok((train, test))
}

/// Expands a sentence to the sub-tokens produced by `spec`.
///
/// Each word is normalized first (a word that normalizes to nothing keeps its
/// original form). An `O` word yields `O` sub-tokens; `B-X` goes to the first
/// sub-token with `I-X` on the rest; `I-X` goes to every sub-token.
pub fn propagate_tags(sentence: &TaggedSentence, spec: &TokenizerSpec, language: Language) -> PropagatedSentence {
    let mut out = PropagatedSentence {
        subtokens: Vec::new(),
        tags: Vec::new(),
        origin_word: Vec::new(),
    };
    for (wi, (word, tag)) in sentence.words.iter().zip(&sentence.tags).enumerate() {
        let normalized = normalize(word, language);
        let form = if normalized.is_empty() {
            word.as_str()
        } else {
            normalized.as_str()
        };
        let pieces = if normalized.is_empty() {
            crate::tokenize::tokenize_word(form, spec)
        } else {
            tokenize(form, spec).tokens
        };
        for (k, piece) in pieces.into_iter().enumerate() {
            let sub_tag = match tag {
                BioTag::Outside => BioTag::Outside,
                BioTag::Begin(t) if k == 0 => BioTag::Begin(t.clone()),
                BioTag::Begin(t) | BioTag::Inside(t) => BioTag::Inside(t.clone()),
            };
            out.subtokens.push(piece);
            out.tags.push(sub_tag);
            out.origin_word.push(wi);
        }
    }
    out
}

/// Label counts over every unit of every sentence.
pub fn label_histogram<S: Tagged>(sentences: &[S]) -> BTreeMap<String, u64> {
    let mut counts = BTreeMap::new();
    for s in sentences {
        for tag in s.tags() {
            *counts.entry(tag.to_string()).or_insert(0) += 1;
        }
    }
    counts
}
