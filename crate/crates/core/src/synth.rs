//! Synthetic agglutinative corpus and NER set.
//!
//! A small template grammar builds Turkish-like sentences from stems and
//! vowel-harmonised suffix chains, with person, location and organisation
//! names mixed in. The corpus is emitted as a JSON-lines dump with some wiki
//! markup; the NER set is CoNLL-style with five labels
//! (`O`, `B-PER`, `I-PER`, `B-LOC`, `B-ORG`).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::RawArticle;
use crate::error::{Error, Result};
use crate::nerdata::{BioTag, TaggedSentence};

const FIRST_NAMES: &[&str] = &[
    "ayşe", "mehmet", "elif", "mustafa", "zeynep", "ahmet", "fatma", "emre", "selin", "burak", "deniz", "kerem",
];
const SURNAMES: &[&str] = &[
    "yılmaz", "kaya", "demir", "şahin", "çelik", "yıldız", "aydın", "öztürk", "arslan", "doğan", "koç", "kurt",
];
const CITIES: &[&str] = &[
    "ankara", "izmir", "bursa", "konya", "trabzon", "edirne", "sivas", "kars", "mersin", "erzurum",
];
const ORGS: &[&str] = &[
    "tekmetal",
    "yıldızbank",
    "denizyol",
    "karatel",
    "akgıda",
    "birsoft",
    "anadoluray",
    "ekinsan",
];
const NOUNS: &[&str] = &[
    "ev", "okul", "kitap", "masa", "bahçe", "yol", "köprü", "deniz", "dağ", "orman", "pazar", "şarkı", "kapı", "göl",
    "müze", "tarla", "liman", "sokak", "fabrika", "çarşı",
];
const ADJECTIVES: &[&str] = &[
    "büyük",
    "küçük",
    "eski",
    "yeni",
    "güzel",
    "uzun",
    "sessiz",
    "kalabalık",
    "sıcak",
    "soğuk",
];
const VERBS: &[&str] = &[
    "gel", "oku", "yaz", "bak", "konuş", "çalış", "sev", "gör", "bul", "anlat", "kur", "aç", "taşı", "büyü",
];
const NOUN_PLURAL: &str = "lAr";
const NOUN_POSSESSIVE: &[&str] = &["Im", "ImIz", "I", "lArI"];
const NOUN_CASE: &[&str] = &["dA", "dAn", "A", "I", "In"];
const CITY_CASE: &[&str] = &["", "dA", "dAn", "A"];
const VERB_TENSE: &[&str] = &["dI", "mIş", "AcAk", "Ir"];
const VERB_PERSON: &[&str] = &["", "lAr", "Im", "k"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthConfig {
    pub articles: usize,
    pub sentences_per_article: usize,
    pub ner_sentences: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            articles: 200,
            sentences_per_article: 5,
            ner_sentences: 500,
            seed: 7,
        }
    }
}

fn is_vowel(c: char) -> bool {
    "aeıioöuü".contains(c)
}

/// Appends a suffix written with archiphonemes: `A` is a/e and `I` is ı/i/u/ü
/// by the last vowel of the stem; a `y` buffer joins vowel-initial suffixes
/// to vowel-final stems.
fn attach(stem: &str, suffix: &str) -> String {
    if suffix.is_empty() {
        return stem.to_string();
    }
    let last = stem.chars().rev().find(|&c| is_vowel(c)).unwrap_or('e');
    let mut out = stem.to_string();
    let first = suffix.chars().next().expect("suffix is not empty");
    if matches!(first, 'A' | 'I') && stem.ends_with(is_vowel) {
        out.push('y');
    }
    for c in suffix.chars() {
        out.push(match c {
            'A' if "aıou".contains(last) => 'a',
            'A' => 'e',
            'I' => match last {
                'a' | 'ı' => 'ı',
                'o' | 'u' => 'u',
                'ö' | 'ü' => 'ü',
                _ => 'i',
            },
            other => other,
        });
    }
    out
}

fn chain(stem: &str, suffixes: &[&str]) -> String {
    suffixes.iter().fold(stem.to_string(), |word, s| attach(&word, s))
}

/// Turkish-style capitalisation of the first letter.
fn capitalize(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some('i') => format!("İ{}", chars.as_str()),
        Some('ı') => format!("I{}", chars.as_str()),
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

struct Grammar {
    rng: ChaCha8Rng,
}

impl Grammar {
    fn pick<'a>(&mut self, items: &[&'a str]) -> &'a str {
        items.choose(&mut self.rng).expect("word lists are not empty")
    }

    fn noun(&mut self) -> String {
        let mut suffixes = Vec::new();
        if self.rng.gen_bool(0.4) {
            suffixes.push(NOUN_PLURAL);
        }
        if self.rng.gen_bool(0.4) {
            suffixes.push(self.pick(NOUN_POSSESSIVE));
        }
        if self.rng.gen_bool(0.6) {
            suffixes.push(self.pick(NOUN_CASE));
        }
        let stem = self.pick(NOUNS);
        chain(stem, &suffixes)
    }

    fn verb(&mut self) -> String {
        let stem = self.pick(VERBS);
        let tense = self.pick(VERB_TENSE);
        let person = self.pick(VERB_PERSON);
        chain(stem, &[tense, person])
    }

    fn person(&mut self) -> Vec<(String, BioTag)> {
        vec![
            (capitalize(self.pick(FIRST_NAMES)), BioTag::Begin("PER".into())),
            (capitalize(self.pick(SURNAMES)), BioTag::Inside("PER".into())),
        ]
    }

    fn city(&mut self) -> (String, BioTag) {
        let case = self.pick(CITY_CASE);
        let city = self.pick(CITIES);
        (capitalize(&attach(city, case)), BioTag::Begin("LOC".into()))
    }

    fn org(&mut self) -> (String, BioTag) {
        let org = capitalize(self.pick(ORGS));
        (org, BioTag::Begin("ORG".into()))
    }

    fn plain(&mut self, word: String) -> (String, BioTag) {
        (word, BioTag::Outside)
    }

    fn sentence(&mut self) -> TaggedSentence {
        let mut words: Vec<(String, BioTag)> = Vec::new();
        match self.rng.gen_range(0..6) {
            0 => {
                words.extend(self.person());
                words.push(self.city());
                let n = self.noun();
                words.push(self.plain(n));
            }
            1 => {
                words.push(self.org());
                words.push(self.city());
                let adj = self.pick(ADJECTIVES).to_string();
                words.push(self.plain(adj));
                let n = self.noun();
                words.push(self.plain(n));
            }
            2 => {
                let adj = self.pick(ADJECTIVES).to_string();
                words.push(self.plain(adj));
                for _ in 0..2 {
                    let n = self.noun();
                    words.push(self.plain(n));
                }
            }
            3 => {
                words.extend(self.person());
                words.push(self.org());
                let n = self.noun();
                words.push(self.plain(n));
            }
            4 => {
                let n = self.noun();
                words.push(self.plain(n));
                words.push(self.city());
                words.extend(self.person());
            }
            _ => {
                let adj = self.pick(ADJECTIVES).to_string();
                words.push(self.plain(adj));
                let n = self.noun();
                words.push(self.plain(n));
                words.push(self.org());
            }
        }
        let v = self.verb();
        words.push(self.plain(v));
        words.push((".".to_string(), BioTag::Outside));
        let (words, tags) = words.into_iter().unzip();
        TaggedSentence { words, tags }
    }
}

fn grammar(seed: u64, stream: u64) -> Grammar {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    Grammar { rng }
}

fn render(sentence: &TaggedSentence, rng: &mut ChaCha8Rng) -> String {
    let mut out = String::new();
    for (i, (word, tag)) in sentence.words.iter().zip(&sentence.tags).enumerate() {
        if i > 0 && word != "." {
            out.push(' ');
        }
        if !tag.is_outside() && rng.gen_bool(0.3) {
            write!(out, "[[{word}]]").expect("writing to a string");
        } else {
            out.push_str(word);
        }
    }
    out
}

/// Wiki-style articles in the main namespace, plus a redirect and a talk
/// page that cleaning is expected to drop.
pub fn corpus(config: &SynthConfig) -> Vec<RawArticle> {
    let mut g = grammar(config.seed, 0);
    let mut markup = ChaCha8Rng::seed_from_u64(config.seed);
    markup.set_stream(2);
    let mut articles = Vec::with_capacity(config.articles + 2);
    for a in 0..config.articles {
        let title = format!("Madde {a}");
        let mut body = format!("{{{{Bilgi kutusu|ad={title}}}}}\n'''{title}''' ");
        for s in 0..config.sentences_per_article {
            if s == config.sentences_per_article / 2 {
                body.push_str("\n== Tarihçe ==\n");
            }
            let sentence = g.sentence();
            body.push_str(&render(&sentence, &mut markup));
            if s == 0 {
                body.push_str("<ref>kaynak</ref>");
            }
            body.push(' ');
        }
        body.push_str("\n[[Kategori:Örnek]]");
        articles.push(RawArticle {
            id: (a + 1).to_string(),
            title,
            body,
            namespace: 0,
        });
    }
    articles.push(RawArticle {
        id: (config.articles + 1).to_string(),
        title: "Eski ad".into(),
        body: format!("#YÖNLENDİRME [[Madde 0]] {}", "x".repeat(200)),
        namespace: 0,
    });
    articles.push(RawArticle {
        id: (config.articles + 2).to_string(),
        title: "Tartışma:Madde 0".into(),
        body: "tartışma ".repeat(40),
        namespace: 1,
    });
    articles
}

/// Tagged sentences drawn from the same grammar as the corpus.
pub fn ner_sentences(config: &SynthConfig) -> Vec<TaggedSentence> {
    let mut g = grammar(config.seed, 1);
    (0..config.ner_sentences).map(|_| g.sentence()).collect()
}

#[derive(Serialize)]
struct JsonArticle<'a> {
    id: &'a str,
    title: &'a str,
    ns: i32,
    text: &'a str,
}

/// Experiment settings sized for the synthetic data.
pub fn fixture_config(language: &str, strategies: &[&str], seed: u64) -> String {
    let list: Vec<String> = strategies.iter().map(|s| format!("\"{s}\"")).collect();
    format!(
        "language = \"{language}\"\n\
         seed = {seed}\n\
         strategies = [{}]\n\
         \n\
         [corpus]\n\
         path = \"corpus.jsonl\"\n\
         format = \"json-lines\"\n\
         \n\
         [ner]\n\
         dataset = \"ner.conll\"\n\
         train_fraction = 0.9\n\
         \n\
         [embed]\n\
         dim = 32\n\
         window = 3\n\
         negatives = 5\n\
         epochs = 40\n\
         min_count = 2\n\
         table_size = 100000\n",
        list.join(", ")
    )
}

/// Writes `corpus.jsonl`, `ner.conll` and `config.toml` into `dir` and
/// returns the config path.
pub fn write_fixture(dir: &Path, config: &SynthConfig, strategies: &[&str]) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut jsonl = String::new();
    for a in corpus(config) {
        let line = serde_json::to_string(&JsonArticle {
            id: &a.id,
            title: &a.title,
            ns: a.namespace,
            text: &a.body,
        })?;
        jsonl.push_str(&line);
        jsonl.push('\n');
    }
    let mut conll = String::new();
    for s in ner_sentences(config) {
        for (w, t) in s.words.iter().zip(&s.tags) {
            writeln!(conll, "{w}\t{t}").expect("writing to a string");
        }
        conll.push('\n');
    }
    let files = [
        ("corpus.jsonl", jsonl),
        ("ner.conll", conll),
        ("config.toml", fixture_config("tr", strategies, config.seed)),
    ];
    for (name, content) in files {
        let path = dir.join(name);
        fs::write(&path, content).map_err(|e| Error::io(&path, e))?;
    }
    Ok(dir.join("config.toml"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{clean_articles, filter_boilerplate, FilterConfig, Language};
    use crate::nerdata::lint;

    #[test]
    fn vowel_harmony() {
        assert_eq!(chain("ev", &["lAr", "dA"]), "evlerde");
        assert_eq!(chain("okul", &["lAr", "ImIz", "dAn"]), "okullarımızdan");
        assert_eq!(attach("masa", "I"), "masayı");
        assert_eq!(attach("göl", "Im"), "gölüm");
        assert_eq!(capitalize("izmir"), "İzmir");
    }

    #[test]
    fn deterministic_and_well_formed() {
        let cfg = SynthConfig {
            articles: 20,
            ner_sentences: 50,
            ..Default::default()
        };
        assert_eq!(corpus(&cfg), corpus(&cfg));
        let ner = ner_sentences(&cfg);
        assert_eq!(ner, ner_sentences(&cfg));
        assert!(lint(&ner).is_empty());
        assert!(ner.iter().all(|s| s.words.last().map(String::as_str) == Some(".")));
    }

    #[test]
    fn cleaning_keeps_main_articles_only() {
        let cfg = SynthConfig {
            articles: 10,
            ..Default::default()
        };
        let kept = filter_boilerplate(corpus(&cfg), &FilterConfig::default());
        assert_eq!(kept.len(), 10);
        let docs = clean_articles(&kept, Language::Turkish);
        assert!(docs
            .iter()
            .all(|d| !d.text.contains("kategori") && !d.text.contains("kaynak")));
    }
}
