//! Corpus ingestion: dump parsing, boilerplate filtering, wikitext stripping,
//! normalization to letters/digits/single spaces, and seeded sampling.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;
use std::sync::OnceLock;

use quick_xml::events::Event;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use regex::Regex;
use serde::Deserialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawArticle {
    pub id: String,
    pub title: String,
    pub body: String,
    /// 0 is the main article namespace.
    pub namespace: i32,
}

/// A cleaned document: letters, digits and single interior spaces only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CleanDocument {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DumpFormat {
    WikiXml,
    JsonLines,
    PlainLines,
}

impl FromStr for DumpFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wiki-xml" => Ok(DumpFormat::WikiXml),
            "json-lines" => Ok(DumpFormat::JsonLines),
            "plain-lines" => Ok(DumpFormat::PlainLines),
            other => Err(Error::Config(format!(
                "unknown corpus format {other:?} (expected wiki-xml, json-lines or plain-lines)"
            ))),
        }
    }
}

impl fmt::Display for DumpFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DumpFormat::WikiXml => "wiki-xml",
            DumpFormat::JsonLines => "json-lines",
            DumpFormat::PlainLines => "plain-lines",
        })
    }
}

/// Language rule used for case folding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Language {
    Turkish,
    Finnish,
    #[default]
    Other,
}

impl Language {
    /// Maps a language tag ("tr", "fi", anything else) to its folding rule.
    pub fn from_tag(tag: &str) -> Self {
        match tag.to_ascii_lowercase().as_str() {
            "tr" | "tur" | "turkish" => Language::Turkish,
            "fi" | "fin" | "finnish" => Language::Finnish,
            _ => Language::Other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorpusSampleConfig {
    pub sample_size: usize,
    pub seed: u64,
}

impl Default for CorpusSampleConfig {
    fn default() -> Self {
        Self {
            sample_size: 10_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FilterConfig {
    /// Minimum body length in characters, measured before cleaning.
    pub min_length: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { min_length: 200 }
    }
}

/// Parses a dump into raw articles in stream order.
pub fn parse_dump<R: Read>(mut stream: R, format: DumpFormat) -> Result<Vec<RawArticle>> {
    let mut bytes = Vec::new();
    stream.read_to_end(&mut bytes)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| Error::Encoding {
        offset: e.valid_up_to() as u64,
    })?;
    match format {
        DumpFormat::WikiXml => parse_wiki_xml(text),
        DumpFormat::JsonLines => parse_json_lines(text),
        DumpFormat::PlainLines => Ok(parse_plain_lines(text)),
    }
}

#[derive(Default)]
struct PageBuilder {
    id: Option<String>,
    title: String,
    namespace: i32,
    body: String,
}

fn parse_wiki_xml(text: &str) -> Result<Vec<RawArticle>> {
    let mut reader = quick_xml::Reader::from_str(text);
    let mut stack: Vec<String> = Vec::new();
    let mut page: Option<PageBuilder> = None;
    let mut articles = Vec::new();

    let xml_err = |reader: &quick_xml::Reader<&[u8]>, e: &dyn fmt::Display| Error::Parse {
        offset: reader.error_position(),
        message: e.to_string(),
    };

    loop {
        let event = reader.read_event().map_err(|e| xml_err(&reader, &e))?;
        match event {
            Event::Start(start) => {
                let name = String::from_utf8_lossy(start.local_name().as_ref()).into_owned();
                if name == "page" {
                    if page.is_some() {
                        return Err(Error::Parse {
                            offset: reader.buffer_position(),
                            message: "nested <page> element".into(),
                        });
                    }
                    page = Some(PageBuilder::default());
                }
                stack.push(name);
            }
            Event::End(_) => {
                let name = stack.pop().unwrap_or_default();
                if name == "page" {
                    let done = page.take().expect("page open while its end tag is seen");
                    articles.push(RawArticle {
                        id: done.id.unwrap_or_else(|| (articles.len() + 1).to_string()),
                        title: done.title,
                        body: done.body,
                        namespace: done.namespace,
                    });
                }
            }
            Event::Text(t) => {
                if let Some(p) = page.as_mut() {
                    let value = t.unescape().map_err(|e| xml_err(&reader, &e))?;
                    absorb_text(p, &stack, &value, reader.buffer_position())?;
                }
            }
            Event::CData(c) => {
                if let Some(p) = page.as_mut() {
                    let value = String::from_utf8_lossy(c.as_ref()).into_owned();
                    absorb_text(p, &stack, &value, reader.buffer_position())?;
                }
            }
            Event::Eof => break,
            _ => {}
        }
    }
    if page.is_some() || !stack.is_empty() {
        return Err(Error::Parse {
            offset: text.len() as u64,
            message: "unexpected end of stream inside an open element".into(),
        });
    }
    Ok(articles)
}

fn absorb_text(page: &mut PageBuilder, stack: &[String], value: &str, offset: u64) -> Result<()> {
    let depth = stack.iter().rposition(|n| n == "page").map(|i| stack.len() - i - 1);
    let Some(current) = stack.last() else {
        return Ok(());
    };
    match (current.as_str(), depth) {
        ("title", Some(1)) => page.title.push_str(value),
        ("ns", Some(1)) => {
            page.namespace = value.trim().parse().map_err(|_| Error::Parse {
                offset,
                message: format!("namespace {value:?} is not an integer"),
            })?;
        }
        ("id", Some(1)) => page.id = Some(value.trim().to_string()),
        ("text", _) => page.body.push_str(value),
        _ => {}
    }
    Ok(())
}

#[derive(Deserialize)]
struct JsonArticle {
    #[serde(default)]
    id: Option<serde_json::Value>,
    #[serde(default)]
    title: String,
    #[serde(alias = "body")]
    text: String,
    #[serde(default, alias = "namespace")]
    ns: i32,
}

fn parse_json_lines(text: &str) -> Result<Vec<RawArticle>> {
    let mut articles = Vec::new();
    let mut offset = 0usize;
    for (index, raw_line) in text.split_inclusive('\n').enumerate() {
        let line = raw_line.trim_end_matches(['\n', '\r']);
        if !line.trim().is_empty() {
            let record: JsonArticle = serde_json::from_str(line).map_err(|e| Error::Parse {
                offset: (offset + e.column().saturating_sub(1)) as u64,
                message: e.to_string(),
            })?;
            let id = match record.id {
                Some(serde_json::Value::String(s)) if !s.is_empty() => s,
                Some(serde_json::Value::Number(n)) => n.to_string(),
                _ => (index + 1).to_string(),
            };
            articles.push(RawArticle {
                id,
                title: record.title,
                body: record.text,
                namespace: record.ns,
            });
        }
        offset += raw_line.len();
    }
    Ok(articles)
}

fn parse_plain_lines(text: &str) -> Vec<RawArticle> {
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| RawArticle {
            id: (i + 1).to_string(),
            title: String::new(),
            body: line.to_string(),
            namespace: 0,
        })
        .collect()
}

const REDIRECT_KEYWORDS: &[&str] = &[
    "#REDIRECT",
    "#YÖNLENDİRME",
    "#YÖNLENDIRME",
    "#OHJAUS",
    "#UUDELLEENOHJAUS",
];

fn is_redirect(body: &str) -> bool {
    let head: String = body.trim_start().chars().take(20).collect::<String>().to_uppercase();
    REDIRECT_KEYWORDS.iter().any(|k| head.starts_with(k))
}

/// Keeps namespace-0, non-redirect articles with at least `min_length` body characters.
pub fn filter_boilerplate(articles: Vec<RawArticle>, config: &FilterConfig) -> Vec<RawArticle> {
    articles
        .into_iter()
        .filter(|a| a.namespace == 0 && !is_redirect(&a.body) && a.body.chars().count() >= config.min_length)
        .collect()
}

const DROPPED_LINK_PREFIXES: &[&str] = &[
    "file", "image", "category", "media", "dosya", "resim", "kategori", "tiedosto", "kuva", "luokka",
];

fn regex(cell: &'static OnceLock<Regex>, pattern: &str) -> &'static Regex {
    cell.get_or_init(|| Regex::new(pattern).expect("static pattern compiles"))
}

/// Removes wikitext markup, keeping the visible prose.
///
/// Order: templates, ref/table/html spans, wikilinks, external-link brackets,
/// bold/italic quote runs, heading equals signs. Unbalanced openers are
/// dropped up to the end of their paragraph.
pub fn strip_markup(body: &str) -> String {
    static COMMENT: OnceLock<Regex> = OnceLock::new();
    static REF_EMPTY: OnceLock<Regex> = OnceLock::new();
    static REF_SPAN: OnceLock<Regex> = OnceLock::new();
    static HTML_TABLE: OnceLock<Regex> = OnceLock::new();
    static HTML_TAG: OnceLock<Regex> = OnceLock::new();
    static EXT_LINK: OnceLock<Regex> = OnceLock::new();
    static QUOTES: OnceLock<Regex> = OnceLock::new();
    static HEADING: OnceLock<Regex> = OnceLock::new();

    let text = strip_nested(body, "{{", "}}", |_| String::new());
    let text = strip_nested(&text, "{|", "|}", |_| String::new());

    let text = regex(&COMMENT, r"(?s)<!--.*?(?:-->|$)").replace_all(&text, "");
    let text = regex(&REF_EMPTY, r"(?i)<ref\b[^>]*/>").replace_all(&text, "");
    let text = regex(&REF_SPAN, r"(?is)<ref\b[^>]*>.*?</ref\s*>").replace_all(&text, "");
    let text = regex(&HTML_TABLE, r"(?is)<table\b[^>]*>.*?</table\s*>").replace_all(&text, "");
    let text = regex(&HTML_TAG, r"</?[A-Za-z][^<>]*>").replace_all(&text, "");

    let text = strip_nested(&text, "[[", "]]", wikilink_label);

    let text = regex(&EXT_LINK, r"\[(?:(?:https?|ftp):)?//[^\s\]]*(?:\s+([^\]]*))?\]")
        .replace_all(&text, |caps: &regex::Captures<'_>| {
            caps.get(1).map_or(String::new(), |m| m.as_str().to_string())
        });
    let text = regex(&QUOTES, r"'{2,}").replace_all(&text, "");
    let text = regex(&HEADING, r"={2,}").replace_all(&text, "");
    text.into_owned()
}

fn wikilink_label(inner: &str) -> String {
    let (target, label) = match split_top_level_pipe(inner) {
        Some((t, l)) => (t, Some(l)),
        None => (inner, None),
    };
    if let Some((prefix, _)) = target.split_once(':') {
        let prefix = prefix.trim().trim_start_matches(':').to_lowercase();
        if DROPPED_LINK_PREFIXES.contains(&prefix.as_str()) {
            return String::new();
        }
    }
    match label {
        Some(l) => strip_nested(l, "[[", "]]", wikilink_label),
        None => target.to_string(),
    }
}

fn split_top_level_pipe(inner: &str) -> Option<(&str, &str)> {
    let bytes = inner.as_bytes();
    let mut depth = 0usize;
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i..].starts_with(b"[[") {
            depth += 1;
            i += 2;
        } else if bytes[i..].starts_with(b"]]") {
            depth = depth.saturating_sub(1);
            i += 2;
        } else {
            if bytes[i] == b'|' && depth == 0 {
                return Some((&inner[..i], &inner[i + 1..]));
            }
            i += 1;
        }
    }
    None
}

/// Replaces each outermost balanced `open ... close` span by `replace(inner)`.
/// An opener with no match is dropped together with the rest of its paragraph.
fn strip_nested<F>(text: &str, open: &str, close: &str, mut replace: F) -> String
where
    F: FnMut(&str) -> String,
{
    if !text.contains(open) {
        return text.to_string();
    }
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find(open) {
        out.push_str(&rest[..start]);
        let after_open = &rest[start + open.len()..];
        match matching_close(after_open, open, close) {
            Some(end) => {
                out.push_str(&replace(&after_open[..end]));
                rest = &after_open[end + close.len()..];
            }
            None => {
                rest = match after_open.find("\n\n") {
                    Some(p) => &after_open[p..],
                    None => "",
                };
            }
        }
    }
    out.push_str(rest);
    out
}

fn matching_close(s: &str, open: &str, close: &str) -> Option<usize> {
    let mut depth = 1usize;
    let mut i = 0;
    let bytes = s.as_bytes();
    while i < bytes.len() {
        if bytes[i..].starts_with(close.as_bytes()) {
            depth -= 1;
            if depth == 0 {
                return Some(i);
            }
            i += close.len();
        } else if bytes[i..].starts_with(open.as_bytes()) {
            depth += 1;
            i += open.len();
        } else {
            i += 1;
        }
    }
    None
}

fn fold_char(c: char, language: Language, out: &mut String) {
    match (c, language) {
        ('I', Language::Turkish) => out.push('ı'),
        ('İ', _) => out.push('i'),
        _ => out.extend(c.to_lowercase()),
    }
}

/// Case-folds and reduces text to letters, digits and single spaces.
pub fn normalize(text: &str, language: Language) -> String {
    let mut folded = String::with_capacity(text.len());
    for c in text.chars() {
        fold_char(c, language, &mut folded);
    }
    let mut out = String::with_capacity(folded.len());
    let mut pending_space = false;
    for c in folded.chars() {
        if c.is_alphanumeric() {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.push(c);
        } else {
            pending_space = true;
        }
    }
    out
}

/// Strips markup from an article body and normalizes the result.
pub fn clean_article(article: &RawArticle, language: Language) -> CleanDocument {
    CleanDocument {
        id: article.id.clone(),
        text: normalize(&strip_markup(&article.body), language),
    }
}

/// Cleans articles in parallel, preserving input order and dropping documents
/// that end up empty.
pub fn clean_articles(articles: &[RawArticle], language: Language) -> Vec<CleanDocument> {
    articles
        .par_iter()
        .map(|a| clean_article(a, language))
        .filter(|d| !d.text.is_empty())
        .collect()
}

/// Draws a seeded uniform sample without replacement, in sampled order.
pub fn sample(documents: &[CleanDocument], config: &CorpusSampleConfig) -> Vec<CleanDocument> {
    let amount = config.sample_size.min(documents.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rand::seq::index::sample(&mut rng, documents.len(), amount)
        .into_iter()
        .map(|i| documents[i].clone())
        .collect()
}

/// Writes one document per line with LF endings.
pub fn write_clean_corpus<W: Write>(documents: &[CleanDocument], mut sink: W) -> Result<()> {
    for doc in documents {
        sink.write_all(doc.text.as_bytes())?;
        sink.write_all(b"\n")?;
    }
    sink.flush()?;
    Ok(())
}

/// Reads a cleaned corpus (one document per line); ids are 1-based line numbers.
pub fn read_clean_corpus<R: Read>(mut source: R) -> Result<Vec<CleanDocument>> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;
    Ok(text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| CleanDocument {
            id: (i + 1).to_string(),
            text: l.split_whitespace().collect::<Vec<_>>().join(" "),
        })
        .collect())
}
