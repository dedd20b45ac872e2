//! Byte pair encoding: greedy most-frequent-pair training, rank-order
//! encoding, and the line-oriented model file.
//!
//! Pair selection is deterministic. Candidates are ordered by weighted
//! frequency (highest first), then by the character length of the merged
//! token (shortest first), then by the merged token and finally its left
//! half (lexicographically smallest first). Pair frequencies count every
//! adjacent position, while applying a merge rewrites occurrences left to
//! right without overlap.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap, HashSet};
use std::io::{BufRead, BufReader, Read, Write};

use log::warn;

use crate::corpus::CleanDocument;
use crate::error::{Error, Result};

/// Begin-of-word marker prepended to every word when enabled.
pub const WORD_MARKER: char = '▁';

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Marker {
    None,
    #[default]
    BeginOfWord,
}

impl Marker {
    pub fn apply(self, word: &str) -> String {
        match self {
            Marker::None => word.to_string(),
            Marker::BeginOfWord => {
                let mut s = String::with_capacity(word.len() + WORD_MARKER.len_utf8());
                s.push(WORD_MARKER);
                s.push_str(word);
                s
            }
        }
    }

    /// Removes the marker from a token, if present.
    pub fn strip(self, token: &str) -> &str {
        match self {
            Marker::None => token,
            Marker::BeginOfWord => token.strip_prefix(WORD_MARKER).unwrap_or(token),
        }
    }

    fn file_field(self) -> String {
        match self {
            Marker::None => "none".to_string(),
            Marker::BeginOfWord => WORD_MARKER.to_string(),
        }
    }
}

/// Word counts over a corpus, keyed by the (marker-prefixed) word.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WordFrequencyTable {
    counts: BTreeMap<String, u64>,
    marker: Marker,
}

impl WordFrequencyTable {
    /// Builds a table from raw word counts, applying `marker` to each word.
    /// Zero counts are dropped.
    pub fn from_counts<I, S>(counts: I, marker: Marker) -> Self
    where
        I: IntoIterator<Item = (S, u64)>,
        S: AsRef<str>,
    {
        let mut table = WordFrequencyTable {
            counts: BTreeMap::new(),
            marker,
        };
        for (word, count) in counts {
            if count > 0 && !word.as_ref().is_empty() {
                *table.counts.entry(marker.apply(word.as_ref())).or_insert(0) += count;
            }
        }
        table
    }

    pub fn marker(&self) -> Marker {
        self.marker
    }

    pub fn get(&self, word: &str) -> Option<u64> {
        self.counts.get(&self.marker.apply(word)).copied()
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Entries as stored (marker applied), in lexicographic order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, u64)> {
        self.counts.iter().map(|(w, &c)| (w.as_str(), c))
    }
}

/// Counts whitespace-separated words across the corpus.
pub fn count_words(corpus: &[CleanDocument], marker: Marker) -> WordFrequencyTable {
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for doc in corpus {
        for word in doc.text.split_whitespace() {
            *counts.entry(word).or_insert(0) += 1;
        }
    }
    WordFrequencyTable::from_counts(counts, marker)
}

/// A trained BPE model. Ids are dense: the sorted alphabet first, then each
/// newly created merge result in rank order.
#[derive(Debug, Clone)]
pub struct BpeModel {
    alphabet: Vec<String>,
    merges: Vec<(String, String)>,
    marker: Marker,
    id_to_token: Vec<String>,
    vocab: HashMap<String, u32>,
    ranks: HashMap<(String, String), usize>,
}

impl PartialEq for BpeModel {
    fn eq(&self, other: &Self) -> bool {
        self.alphabet == other.alphabet && self.merges == other.merges && self.marker == other.marker
    }
}

impl Eq for BpeModel {}

impl BpeModel {
    /// Assembles a model, checking that every merge only references known tokens.
    pub fn new(alphabet: Vec<String>, merges: Vec<(String, String)>, marker: Marker) -> Result<Self> {
        let mut model = BpeModel {
            alphabet: Vec::new(),
            merges: Vec::new(),
            marker,
            id_to_token: Vec::new(),
            vocab: HashMap::new(),
            ranks: HashMap::new(),
        };
        for symbol in alphabet {
            if symbol.chars().count() != 1 {
                return Err(Error::Model(format!(
                    "alphabet symbol {symbol:?} is not a single character"
                )));
            }
            model.intern(&symbol);
            model.alphabet.push(symbol);
        }
        for (rank, (left, right)) in merges.into_iter().enumerate() {
            if !model.vocab.contains_key(&left) || !model.vocab.contains_key(&right) {
                return Err(Error::Model(format!(
                    "merge {rank} ({left} {right}) references a token not yet in the vocabulary"
                )));
            }
            model.push_merge(left, right);
        }
        Ok(model)
    }

    fn intern(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.vocab.get(token) {
            return id;
        }
        let id = self.id_to_token.len() as u32;
        self.id_to_token.push(token.to_string());
        self.vocab.insert(token.to_string(), id);
        id
    }

    fn push_merge(&mut self, left: String, right: String) {
        let merged = format!("{left}{right}");
        self.intern(&merged);
        self.ranks
            .entry((left.clone(), right.clone()))
            .or_insert(self.merges.len());
        self.merges.push((left, right));
    }

    pub fn alphabet(&self) -> &[String] {
        &self.alphabet
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn marker(&self) -> Marker {
        self.marker
    }

    /// Number of distinct tokens (base symbols plus merge results).
    pub fn vocab_size(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn token_id(&self, token: &str) -> Option<u32> {
        self.vocab.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    /// Encodes one word by replaying merges in rank order.
    pub fn encode(&self, word: &str) -> Vec<String> {
        encode(word, self)
    }

    pub fn save<W: Write>(&self, sink: W) -> Result<()> {
        save(self, sink)
    }

    pub fn load<R: Read>(source: R) -> Result<Self> {
        load(source)
    }
}

/// Outcome of training: the model plus the requested size and whether the
/// trainer ran out of pairs worth merging before reaching it.
#[derive(Debug, Clone)]
pub struct BpeTraining {
    pub model: BpeModel,
    pub target_vocab: usize,
    pub stopped_early: bool,
}

impl BpeTraining {
    pub fn achieved_vocab(&self) -> usize {
        self.model.vocab_size()
    }
}

#[derive(Debug, PartialEq, Eq)]
struct Candidate {
    count: u64,
    merged_len: usize,
    merged: String,
    left: String,
    pair: (u32, u32),
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.count
            .cmp(&other.count)
            .then_with(|| other.merged_len.cmp(&self.merged_len))
            .then_with(|| other.merged.cmp(&self.merged))
            .then_with(|| other.left.cmp(&self.left))
            .then_with(|| other.pair.cmp(&self.pair))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Trainer {
    tokens: Vec<String>,
    token_len: Vec<usize>,
    ids: HashMap<String, u32>,
    words: Vec<(Vec<u32>, u64)>,
    pair_counts: HashMap<(u32, u32), u64>,
    pair_words: HashMap<(u32, u32), HashSet<usize>>,
    heap: BinaryHeap<Candidate>,
}

impl Trainer {
    fn intern(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.ids.get(token) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.tokens.push(token.to_string());
        self.token_len.push(token.chars().count());
        self.ids.insert(token.to_string(), id);
        id
    }

    fn candidate(&self, pair: (u32, u32), count: u64) -> Candidate {
        let left = &self.tokens[pair.0 as usize];
        let right = &self.tokens[pair.1 as usize];
        Candidate {
            count,
            merged_len: self.token_len[pair.0 as usize] + self.token_len[pair.1 as usize],
            merged: format!("{left}{right}"),
            left: left.clone(),
            pair,
        }
    }

    fn pop_best(&mut self) -> Option<Candidate> {
        while let Some(top) = self.heap.pop() {
            if self.pair_counts.get(&top.pair).copied().unwrap_or(0) == top.count {
                return Some(top);
            }
        }
        None
    }

    /// Applies a merge to every word containing the pair and refreshes the
    /// counts of all pairs those words touch.
    fn apply_merge(&mut self, pair: (u32, u32), merged_id: u32) {
        let Some(word_ids) = self.pair_words.remove(&pair) else {
            return;
        };
        let mut word_ids: Vec<usize> = word_ids.into_iter().collect();
        word_ids.sort_unstable();
        let mut touched: BTreeSet<(u32, u32)> = BTreeSet::new();
        for wi in word_ids {
            let (symbols, count) = &self.words[wi];
            let count = *count;
            if !symbols.windows(2).any(|w| (w[0], w[1]) == pair) {
                continue;
            }
            for w in symbols.windows(2) {
                let p = (w[0], w[1]);
                let c = self.pair_counts.get_mut(&p).expect("pair of a live word is counted");
                *c -= count;
                touched.insert(p);
            }
            let mut merged = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() && (symbols[i], symbols[i + 1]) == pair {
                    merged.push(merged_id);
                    i += 2;
                } else {
                    merged.push(symbols[i]);
                    i += 1;
                }
            }
            for w in merged.windows(2) {
                let p = (w[0], w[1]);
                *self.pair_counts.entry(p).or_insert(0) += count;
                self.pair_words.entry(p).or_default().insert(wi);
                touched.insert(p);
            }
            self.words[wi].0 = merged;
        }
        for p in touched {
            let c = self.pair_counts.get(&p).copied().unwrap_or(0);
            if c == 0 {
                self.pair_counts.remove(&p);
            } else {
                let cand = self.candidate(p, c);
                self.heap.push(cand);
            }
        }
    }
}

/// Trains a model by greedily merging the most frequent adjacent pair until
/// the vocabulary reaches `target_vocab` or no pair occurs at least twice.
pub fn train(freqs: &WordFrequencyTable, target_vocab: usize) -> Result<BpeTraining> {
    let alphabet: BTreeSet<char> = freqs.iter().flat_map(|(w, _)| w.chars()).collect();
    if target_vocab < alphabet.len() {
        return Err(Error::Config(format!(
            "target vocabulary {target_vocab} is smaller than the base alphabet ({} symbols)",
            alphabet.len()
        )));
    }
    let alphabet: Vec<String> = alphabet.into_iter().map(String::from).collect();

    let mut trainer = Trainer {
        tokens: Vec::new(),
        token_len: Vec::new(),
        ids: HashMap::new(),
        words: Vec::with_capacity(freqs.len()),
        pair_counts: HashMap::new(),
        pair_words: HashMap::new(),
        heap: BinaryHeap::new(),
    };
    for symbol in &alphabet {
        trainer.intern(symbol);
    }
    for (wi, (word, count)) in freqs.iter().enumerate() {
        let symbols: Vec<u32> = word.chars().map(|c| trainer.ids[c.to_string().as_str()]).collect();
        for w in symbols.windows(2) {
            let p = (w[0], w[1]);
            *trainer.pair_counts.entry(p).or_insert(0) += count;
            trainer.pair_words.entry(p).or_default().insert(wi);
        }
        trainer.words.push((symbols, count));
    }
    let initial: Vec<Candidate> = trainer
        .pair_counts
        .iter()
        .map(|(&p, &c)| trainer.candidate(p, c))
        .collect();
    trainer.heap = initial.into();

    let mut merges: Vec<(String, String)> = Vec::new();
    let mut stopped_early = false;
    while trainer.tokens.len() < target_vocab {
        let best = match trainer.pop_best() {
            Some(best) if best.count >= 2 => best,
            _ => {
                stopped_early = true;
                break;
            }
        };
        let merged_id = trainer.intern(&best.merged);
        let (l, r) = best.pair;
        merges.push((trainer.tokens[l as usize].clone(), trainer.tokens[r as usize].clone()));
        trainer.apply_merge(best.pair, merged_id);
    }
    if stopped_early {
        warn!(
            "BPE training stopped at {} tokens (target {target_vocab}): no pair occurs twice",
            trainer.tokens.len()
        );
    }
    let model = BpeModel::new(alphabet, merges, freqs.marker())?;
    debug_assert_eq!(model.vocab_size(), trainer.tokens.len());
    Ok(BpeTraining {
        model,
        target_vocab,
        stopped_early,
    })
}

/// Splits `word` into base symbols (marker first when enabled) and applies
/// the lowest-ranked applicable merge until none applies.
pub fn encode(word: &str, model: &BpeModel) -> Vec<String> {
    let marked = model.marker.apply(word);
    let mut symbols: Vec<String> = marked.chars().map(String::from).collect();
    loop {
        let best = symbols
            .windows(2)
            .filter_map(|w| model.ranks.get(&(w[0].clone(), w[1].clone())).copied())
            .min();
        let Some(rank) = best else {
            break;
        };
        let (left, right) = &model.merges[rank];
        let mut merged = Vec::with_capacity(symbols.len());
        let mut i = 0;
        while i < symbols.len() {
            if i + 1 < symbols.len() && &symbols[i] == left && &symbols[i + 1] == right {
                merged.push(format!("{left}{right}"));
                i += 2;
            } else {
                merged.push(std::mem::take(&mut symbols[i]));
                i += 1;
            }
        }
        symbols = merged;
    }
    symbols
}

const HEADER_MAGIC: &str = "bpe-model";
const HEADER_VERSION: &str = "v1";

/// Writes the model file: header, alphabet line, one merge per line.
pub fn save<W: Write>(model: &BpeModel, mut sink: W) -> Result<()> {
    writeln!(
        sink,
        "{HEADER_MAGIC} {HEADER_VERSION} {} {}",
        model.vocab_size(),
        model.marker.file_field()
    )?;
    writeln!(sink, "{}", model.alphabet.join(" "))?;
    for (left, right) in &model.merges {
        writeln!(sink, "{left} {right}")?;
    }
    sink.flush()?;
    Ok(())
}

pub fn load<R: Read>(source: R) -> Result<BpeModel> {
    let mut lines = BufReader::new(source).lines();
    let header = lines
        .next()
        .transpose()?
        .ok_or_else(|| Error::format(1, "empty model file"))?;
    let fields: Vec<&str> = header.split(' ').collect();
    let [magic, version, achieved, marker] = fields[..] else {
        return Err(Error::format(1, format!("malformed header {header:?}")));
    };
    if magic != HEADER_MAGIC {
        return Err(Error::format(1, format!("not a BPE model file (magic {magic:?})")));
    }
    if version != HEADER_VERSION {
        return Err(Error::format(1, format!("unsupported model version {version:?}")));
    }
    let achieved: usize = achieved
        .parse()
        .map_err(|_| Error::format(1, format!("vocabulary size {achieved:?} is not a count")))?;
    let marker = match marker {
        "none" => Marker::None,
        m if m == WORD_MARKER.to_string() => Marker::BeginOfWord,
        other => return Err(Error::format(1, format!("unknown marker {other:?}"))),
    };

    let alphabet_line = lines
        .next()
        .transpose()?
        .ok_or_else(|| Error::format(2, "missing alphabet line"))?;
    let alphabet: Vec<String> = alphabet_line
        .split(' ')
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect();
    let mut model = BpeModel::new(alphabet, Vec::new(), marker).map_err(|e| Error::format(2, e.to_string()))?;

    let mut last_line = 2;
    for (i, line) in lines.enumerate() {
        let line_no = i + 3;
        last_line = line_no;
        let line = line?;
        let fields: Vec<&str> = line.split(' ').collect();
        let [left, right] = fields[..] else {
            return Err(Error::format(
                line_no,
                format!("merge line must have 2 fields, got {:?}", line),
            ));
        };
        if left.is_empty() || right.is_empty() {
            return Err(Error::format(line_no, "empty token in merge"));
        }
        for side in [left, right] {
            if !model.vocab.contains_key(side) {
                return Err(Error::format(
                    line_no,
                    format!("merge references unknown token {side:?}"),
                ));
            }
        }
        model.push_merge(left.to_string(), right.to_string());
    }
    if model.vocab_size() != achieved {
        return Err(Error::format(
            last_line + 1,
            format!(
                "header declares {achieved} tokens but the file defines {} (truncated?)",
                model.vocab_size()
            ),
        ));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pairs(v: &[(&str, &str)]) -> Vec<(String, String)> {
        v.iter().map(|(l, r)| (l.to_string(), r.to_string())).collect()
    }

    pub(crate) fn worked_example_model() -> BpeModel {
        let freqs = WordFrequencyTable::from_counts([("abcbabcbab", 1)], Marker::None);
        train(&freqs, 6).unwrap().model
    }

    #[test]
    fn count_words_examples() {
        let doc = |t: &str| CleanDocument {
            id: "1".into(),
            text: t.into(),
        };
        let t = count_words(&[doc("ev ev ler")], Marker::None);
        assert_eq!(t.iter().collect::<Vec<_>>(), vec![("ev", 2), ("ler", 1)]);
        assert!(count_words(&[], Marker::None).is_empty());
        let t = count_words(&[doc("a b"), doc("b")], Marker::None);
        assert_eq!(t.iter().collect::<Vec<_>>(), vec![("a", 1), ("b", 2)]);
        let t = count_words(&[doc("ev")], Marker::BeginOfWord);
        assert_eq!(t.iter().collect::<Vec<_>>(), vec![("▁ev", 1)]);
        assert_eq!(t.get("ev"), Some(1));
    }

    #[test]
    fn worked_example_merge_order() {
        let model = worked_example_model();
        assert_eq!(
            model.merges(),
            pairs(&[("a", "b"), ("c", "b"), ("ab", "cb")]).as_slice()
        );
        assert_eq!(model.vocab_size(), 6);
    }

    #[test]
    fn single_pair() {
        let freqs = WordFrequencyTable::from_counts([("aa", 1)], Marker::None);
        // one occurrence only; the early-stop rule forbids merging singletons
        let t = train(&freqs, 2).unwrap();
        assert!(t.stopped_early);
        assert!(t.model.merges().is_empty());

        let freqs = WordFrequencyTable::from_counts([("aa", 2)], Marker::None);
        let t = train(&freqs, 2).unwrap();
        assert_eq!(t.model.merges(), pairs(&[("a", "a")]).as_slice());
        assert!(!t.stopped_early);
    }

    #[test]
    fn weighted_frequencies() {
        let freqs = WordFrequencyTable::from_counts([("abab", 2), ("abc", 1)], Marker::None);
        let t = train(&freqs, 5).unwrap();
        assert_eq!(t.model.merges(), pairs(&[("a", "b"), ("ab", "ab")]).as_slice());
    }

    #[test]
    fn target_below_alphabet_is_config_error() {
        let freqs = WordFrequencyTable::from_counts([("abc", 3)], Marker::None);
        assert!(matches!(train(&freqs, 2), Err(Error::Config(_))));
    }

    #[test]
    fn encode_examples() {
        let model = worked_example_model();
        assert_eq!(encode("abcbab", &model), vec!["abcb", "ab"]);
        assert_eq!(encode("a", &model), vec!["a"]);
        assert_eq!(encode("xyz", &model), vec!["x", "y", "z"]);
    }

    #[test]
    fn encode_with_marker() {
        let freqs = WordFrequencyTable::from_counts([("ev", 5), ("evler", 3)], Marker::BeginOfWord);
        let model = train(&freqs, 100).unwrap().model;
        let tokens = encode("evler", &model);
        assert!(tokens[0].starts_with(WORD_MARKER));
        let joined: String = tokens.concat();
        assert_eq!(model.marker().strip(&joined), "evler");
    }

    #[test]
    fn model_file_round_trip() {
        let model = worked_example_model();
        let mut buf = Vec::new();
        save(&model, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "bpe-model v1 6 none\na b c\na b\nc b\nab cb\n"
        );
        assert_eq!(load(&buf[..]).unwrap(), model);
    }

    #[test]
    fn header_only_model() {
        let model = load(&b"bpe-model v1 3 none\na b c\n"[..]).unwrap();
        assert!(model.merges().is_empty());
        assert_eq!(model.alphabet(), ["a", "b", "c"]);
    }

    #[test]
    fn load_errors() {
        let err = load(&b"bpe-model v1 4 none\na b\na b\nab\n"[..]).unwrap_err();
        assert!(matches!(err, Error::Format { line: 4, .. }), "{err}");
        let err = load(&b"bpe-model v2 2 none\na b\n"[..]).unwrap_err();
        assert!(matches!(err, Error::Format { line: 1, .. }), "{err}");
        let err = load(&b"bpe-model v1 4 none\na b\nab c\n"[..]).unwrap_err();
        assert!(matches!(err, Error::Format { line: 3, .. }), "{err}");
        let err = load(&b"bpe-model v1 5 none\na b\na b\n"[..]).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
        assert!(load(&b""[..]).is_err());
    }

    proptest! {
        #[test]
        fn encode_concatenates_to_word(words in proptest::collection::vec("[a-e]{1,8}", 1..30), probe in "[a-g]{1,10}", marker in any::<bool>()) {
            let marker = if marker { Marker::BeginOfWord } else { Marker::None };
            let freqs = WordFrequencyTable::from_counts(words.iter().map(|w| (w.as_str(), 2)), marker);
            let model = train(&freqs, 40).unwrap().model;
            let tokens = encode(&probe, &model);
            let joined = tokens.concat();
            prop_assert_eq!(marker.strip(&joined), probe.as_str());
            prop_assert!(tokens.iter().all(|t| !t.is_empty()));
        }

        #[test]
        fn larger_target_extends_merge_list(words in proptest::collection::vec(("[a-d]{1,7}", 1u64..5), 1..25), small in 4usize..12, extra in 0usize..15) {
            let freqs = WordFrequencyTable::from_counts(words.iter().map(|(w, c)| (w.as_str(), *c)), Marker::None);
            let small_model = train(&freqs, small).unwrap().model;
            let large_model = train(&freqs, small + extra).unwrap().model;
            prop_assert!(large_model.merges().starts_with(small_model.merges()));
        }
    }
}
