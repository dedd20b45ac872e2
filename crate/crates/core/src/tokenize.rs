//! Tokenization strategies over normalized text.
//!
//! Every strategy works word by word: whitespace separates words and is never
//! a token itself, and each word's tokens occupy a contiguous, nonempty span
//! of the output.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::ops::Range;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use crate::bpe::BpeModel;
use crate::corpus::CleanDocument;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokenizerSpec {
    Word,
    Char,
    /// Stride-1 character windows of length `n` (n ≥ 2).
    Ngram {
        n: usize,
    },
    Bpe {
        model: Arc<BpeModel>,
    },
}

impl TokenizerSpec {
    pub fn ngram(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Config(format!("n-gram length must be at least 2, got {n}")));
        }
        Ok(TokenizerSpec::Ngram { n })
    }

    pub fn bpe(model: BpeModel) -> Self {
        TokenizerSpec::Bpe { model: Arc::new(model) }
    }

    /// Loads a BPE model file; a missing or corrupt file is a model error.
    pub fn load_bpe(path: &Path) -> Result<Self> {
        let file =
            File::open(path).map_err(|e| Error::Model(format!("cannot open BPE model {}: {e}", path.display())))?;
        let model = BpeModel::load(BufReader::new(file))
            .map_err(|e| Error::Model(format!("corrupt BPE model {}: {e}", path.display())))?;
        Ok(Self::bpe(model))
    }
}

impl fmt::Display for TokenizerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokenizerSpec::Word => f.write_str("word"),
            TokenizerSpec::Char => f.write_str("char"),
            TokenizerSpec::Ngram { n } => write!(f, "ngram-{n}"),
            TokenizerSpec::Bpe { model } => write!(f, "bpe-{}", model.vocab_size()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenStream {
    pub tokens: Vec<String>,
    /// Half-open token range of each source word.
    pub word_spans: Vec<Range<usize>>,
}

impl TokenStream {
    pub fn word_count(&self) -> usize {
        self.word_spans.len()
    }

    pub fn word_tokens(&self, word: usize) -> &[String] {
        &self.tokens[self.word_spans[word].clone()]
    }

    fn push_word(&mut self, tokens: impl IntoIterator<Item = String>) {
        let start = self.tokens.len();
        self.tokens.extend(tokens);
        self.word_spans.push(start..self.tokens.len());
    }
}

/// Tokens of a single word under `spec`. Never empty for a nonempty word.
pub fn tokenize_word(word: &str, spec: &TokenizerSpec) -> Vec<String> {
    match spec {
        TokenizerSpec::Word => vec![word.to_string()],
        TokenizerSpec::Char => word.chars().map(String::from).collect(),
        TokenizerSpec::Ngram { n } => char_ngrams(word, *n),
        TokenizerSpec::Bpe { model } => model.encode(word),
    }
}

fn char_ngrams(word: &str, n: usize) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    if chars.len() <= n {
        return vec![word.to_string()];
    }
    chars.windows(n).map(|w| w.iter().collect()).collect()
}

pub fn tokenize(text: &str, spec: &TokenizerSpec) -> TokenStream {
    let mut stream = TokenStream::default();
    for word in text.split_whitespace() {
        stream.push_word(tokenize_word(word, spec));
    }
    stream
}

/// Tokenizes every document in parallel (order preserved). BPE encodings are
/// computed once per distinct word.
pub fn tokenize_corpus(documents: &[CleanDocument], spec: &TokenizerSpec) -> Vec<TokenStream> {
    match spec {
        TokenizerSpec::Bpe { .. } => {
            let distinct: HashSet<&str> = documents.iter().flat_map(|d| d.text.split_whitespace()).collect();
            let mut distinct: Vec<&str> = distinct.into_iter().collect();
            distinct.sort_unstable();
            let cache: HashMap<&str, Vec<String>> = distinct.par_iter().map(|&w| (w, tokenize_word(w, spec))).collect();
            documents
                .par_iter()
                .map(|d| {
                    let mut stream = TokenStream::default();
                    for word in d.text.split_whitespace() {
                        stream.push_word(cache[word].iter().cloned());
                    }
                    stream
                })
                .collect()
        }
        _ => documents.par_iter().map(|d| tokenize(&d.text, spec)).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenStats {
    pub token_count: usize,
    pub type_count: usize,
    pub mean_tokens_per_word: f64,
}

pub fn token_statistics(stream: &TokenStream) -> TokenStats {
    corpus_statistics(std::slice::from_ref(stream))
}

/// Statistics pooled over several streams.
pub fn corpus_statistics(streams: &[TokenStream]) -> TokenStats {
    let token_count: usize = streams.iter().map(|s| s.tokens.len()).sum();
    let word_count: usize = streams.iter().map(TokenStream::word_count).sum();
    let types: HashSet<&str> = streams
        .iter()
        .flat_map(|s| s.tokens.iter().map(String::as_str))
        .collect();
    TokenStats {
        token_count,
        type_count: types.len(),
        mean_tokens_per_word: if word_count == 0 {
            0.0
        } else {
            token_count as f64 / word_count as f64
        },
    }
}

/// Writes one stream per line (tokens space-separated) and, to `spans`, the
/// per-word token counts for the same line.
pub fn write_streams<W: Write, S: Write>(streams: &[TokenStream], mut tokens: W, mut spans: S) -> Result<()> {
    for stream in streams {
        tokens.write_all(stream.tokens.join(" ").as_bytes())?;
        tokens.write_all(b"\n")?;
        let lengths: Vec<String> = stream.word_spans.iter().map(|r| r.len().to_string()).collect();
        spans.write_all(lengths.join(" ").as_bytes())?;
        spans.write_all(b"\n")?;
    }
    tokens.flush()?;
    spans.flush()?;
    Ok(())
}

/// Reads streams written by [`write_streams`]; without a spans file every
/// token is taken to be its own word.
pub fn read_streams<R: Read, S: Read>(tokens: R, spans: Option<S>) -> Result<Vec<TokenStream>> {
    let token_lines: Vec<String> = BufReader::new(tokens).lines().collect::<std::io::Result<_>>()?;
    let span_lines: Option<Vec<String>> = spans
        .map(|s| BufReader::new(s).lines().collect::<std::io::Result<_>>())
        .transpose()?;
    if let Some(span_lines) = &span_lines {
        if span_lines.len() != token_lines.len() {
            return Err(Error::format(
                span_lines.len().min(token_lines.len()) + 1,
                format!("{} token lines but {} span lines", token_lines.len(), span_lines.len()),
            ));
        }
    }
    let mut streams = Vec::with_capacity(token_lines.len());
    for (i, line) in token_lines.iter().enumerate() {
        let tokens: Vec<String> = line.split(' ').filter(|t| !t.is_empty()).map(String::from).collect();
        let word_spans = match &span_lines {
            None => (0..tokens.len()).map(|t| t..t + 1).collect(),
            Some(span_lines) => {
                let mut spans = Vec::new();
                let mut start = 0usize;
                for field in span_lines[i].split(' ').filter(|f| !f.is_empty()) {
                    let len: usize = field
                        .parse()
                        .ok()
                        .filter(|&l| l > 0)
                        .ok_or_else(|| Error::format(i + 1, format!("bad span length {field:?}")))?;
                    spans.push(start..start + len);
                    start += len;
                }
                if start != tokens.len() {
                    return Err(Error::format(
                        i + 1,
                        format!("spans cover {start} tokens but the line has {}", tokens.len()),
                    ));
                }
                spans
            }
        };
        streams.push(TokenStream { tokens, word_spans });
    }
    Ok(streams)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bpe::{self, Marker, WordFrequencyTable};
    use proptest::prelude::*;

    fn toks(s: &TokenStream) -> Vec<&str> {
        s.tokens.iter().map(String::as_str).collect()
    }

    #[test]
    fn word_split() {
        let s = tokenize("barack obama lives", &TokenizerSpec::Word);
        assert_eq!(toks(&s), ["barack", "obama", "lives"]);
        assert_eq!(s.word_spans, vec![0..1, 1..2, 2..3]);
    }

    #[test]
    fn bigrams() {
        let s = tokenize("ev ler", &TokenizerSpec::ngram(2).unwrap());
        assert_eq!(toks(&s), ["ev", "le", "er"]);
        assert_eq!(s.word_spans, vec![0..1, 1..3]);
        let s = tokenize("honolulu", &TokenizerSpec::ngram(2).unwrap());
        assert_eq!(toks(&s), ["ho", "on", "no", "ol", "lu", "ul", "lu"]);
    }

    #[test]
    fn short_word_is_its_own_trigram() {
        let s = tokenize("ev ankara", &TokenizerSpec::ngram(3).unwrap());
        assert_eq!(toks(&s), ["ev", "ank", "nka", "kar", "ara"]);
    }

    #[test]
    fn chars() {
        assert_eq!(toks(&tokenize("ev", &TokenizerSpec::Char)), ["e", "v"]);
        assert_eq!(toks(&tokenize("şu ı", &TokenizerSpec::Char)), ["ş", "u", "ı"]);
    }

    #[test]
    fn ngram_needs_n_at_least_two() {
        assert!(TokenizerSpec::ngram(1).is_err());
    }

    #[test]
    fn bpe_strategy_uses_model() {
        let freqs = WordFrequencyTable::from_counts([("abcbabcbab", 1)], Marker::None);
        let model = bpe::train(&freqs, 6).unwrap().model;
        let s = tokenize("abcbab a", &TokenizerSpec::bpe(model));
        assert_eq!(toks(&s), ["abcb", "ab", "a"]);
        assert_eq!(s.word_spans, vec![0..2, 2..3]);
    }

    #[test]
    fn missing_bpe_model_is_model_error() {
        let err = TokenizerSpec::load_bpe(Path::new("/nonexistent/bpe.model")).unwrap_err();
        assert!(matches!(err, Error::Model(_)));
    }

    #[test]
    fn statistics() {
        let s = tokenize("ev ler", &TokenizerSpec::ngram(2).unwrap());
        let st = token_statistics(&s);
        assert_eq!((st.token_count, st.type_count, st.mean_tokens_per_word), (3, 3, 1.5));
        let st = token_statistics(&TokenStream::default());
        assert_eq!((st.token_count, st.type_count, st.mean_tokens_per_word), (0, 0, 0.0));
        let st = token_statistics(&tokenize("honolulu", &TokenizerSpec::ngram(2).unwrap()));
        assert_eq!((st.token_count, st.type_count), (7, 6));
    }

    #[test]
    fn stream_files_round_trip() {
        let streams = vec![
            tokenize("ev ler", &TokenizerSpec::ngram(2).unwrap()),
            tokenize("ankara", &TokenizerSpec::ngram(2).unwrap()),
        ];
        let (mut t, mut s) = (Vec::new(), Vec::new());
        write_streams(&streams, &mut t, &mut s).unwrap();
        assert_eq!(String::from_utf8(s.clone()).unwrap(), "1 2\n5\n");
        assert_eq!(read_streams(&t[..], Some(&s[..])).unwrap(), streams);
        assert!(read_streams(&t[..], Some(&b"1 1\n5\n"[..])).is_err());
    }

    fn specs() -> Vec<TokenizerSpec> {
        vec![
            TokenizerSpec::Word,
            TokenizerSpec::Char,
            TokenizerSpec::ngram(2).unwrap(),
            TokenizerSpec::ngram(3).unwrap(),
        ]
    }

    proptest! {
        #[test]
        fn strategy_invariants(words in proptest::collection::vec("[a-zçğıöşü0-9]{1,12}", 0..12)) {
            let text = words.join(" ");
            let word_level = tokenize(&text, &TokenizerSpec::Word);
            prop_assert_eq!(word_level.tokens.join(" "), text.clone());
            for spec in specs() {
                let s = tokenize(&text, &spec);
                prop_assert_eq!(s.word_count(), words.len());
                let mut expected_start = 0;
                for (i, span) in s.word_spans.iter().enumerate() {
                    prop_assert_eq!(span.start, expected_start);
                    prop_assert!(!span.is_empty());
                    expected_start = span.end;
                    let word: Vec<char> = words[i].chars().collect();
                    let toks = s.word_tokens(i);
                    match spec {
                        TokenizerSpec::Char => {
                            prop_assert_eq!(toks.len(), word.len());
                            prop_assert_eq!(toks.concat(), words[i].clone());
                        }
                        TokenizerSpec::Ngram { n } if word.len() >= n => {
                            prop_assert_eq!(toks.len(), word.len() - n + 1);
                            for pair in toks.windows(2) {
                                let a: Vec<char> = pair[0].chars().collect();
                                let b: Vec<char> = pair[1].chars().collect();
                                prop_assert_eq!(a.len(), n);
                                prop_assert_eq!(&a[1..], &b[..n - 1]);
                            }
                            let mut rebuilt: String = toks[0].clone();
                            for t in &toks[1..] {
                                rebuilt.push(t.chars().last().unwrap());
                            }
                            prop_assert_eq!(rebuilt, words[i].clone());
                        }
                        _ => {}
                    }
                }
                prop_assert_eq!(expected_start, s.tokens.len());
            }
        }
    }
}
