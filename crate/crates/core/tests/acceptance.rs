//! Acceptance suite. Each criterion prints one PASS/FAIL line; the process
//! exits nonzero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tokbench::bpe::{self, BpeModel, Marker, WordFrequencyTable};
use tokbench::classify::{self, FeatureSet, LabelCodec, Matrix, SagaConfig};
use tokbench::corpus::{normalize, CleanDocument, Language};
use tokbench::embed::{self, sgns_loss_and_grad, EmbedConfig, EmbeddingTable};
use tokbench::metrics::{self, EvalReport};
use tokbench::nerdata::{propagate_tags, BioTag, TaggedSentence};
use tokbench::pipeline::{Experiment, ExperimentConfig, RunStatus, Strategy, SummaryRow};
use tokbench::synth::{self, SynthConfig};
use tokbench::tokenize::{corpus_statistics, tokenize_corpus, TokenizerSpec};

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn check(ok: bool, message: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(message.into())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

// 1

fn bpe_worked_example() -> Outcome {
    let freqs = WordFrequencyTable::from_counts([("abcbabcbab", 1)], Marker::None);
    let started = Instant::now();
    let trained = bpe::train(&freqs, 3 + 3).map_err(err)?;
    let elapsed = started.elapsed();
    let expected = [("a", "b"), ("c", "b"), ("ab", "cb")];
    let got: Vec<(&str, &str)> = trained
        .model
        .merges()
        .iter()
        .map(|(l, r)| (l.as_str(), r.as_str()))
        .collect();
    check(got == expected, format!("merges {got:?}"))?;
    check(elapsed < Duration::from_millis(1), format!("took {elapsed:?}"))?;
    Ok(format!("merges {got:?} in {elapsed:?}"))
}

// 2

/// Recount-from-scratch trainer: every iteration counts all adjacent pairs
/// (weighted by word frequency), picks the best by frequency, then shortest
/// merged token, then smallest merged token, then smallest left token, and
/// rewrites every word left to right.
fn reference_bpe(words: &[(Vec<String>, u64)], target: usize) -> Vec<(String, String)> {
    let mut words: Vec<(Vec<String>, u64)> = words.to_vec();
    let mut vocab: BTreeSet<String> = words.iter().flat_map(|(w, _)| w.iter().cloned()).collect();
    let mut merges = Vec::new();
    while vocab.len() < target {
        let mut counts: BTreeMap<(String, String), u64> = BTreeMap::new();
        for (w, c) in &words {
            for pair in w.windows(2) {
                *counts.entry((pair[0].clone(), pair[1].clone())).or_insert(0) += c;
            }
        }
        let best = counts.into_iter().min_by(|(a, ca), (b, cb)| {
            let (ma, mb) = (format!("{}{}", a.0, a.1), format!("{}{}", b.0, b.1));
            cb.cmp(ca)
                .then(ma.chars().count().cmp(&mb.chars().count()))
                .then(ma.cmp(&mb))
                .then(a.0.cmp(&b.0))
        });
        let Some(((left, right), count)) = best else { break };
        if count < 2 {
            break;
        }
        let merged = format!("{left}{right}");
        for (w, _) in &mut words {
            let mut out = Vec::with_capacity(w.len());
            let mut i = 0;
            while i < w.len() {
                if i + 1 < w.len() && w[i] == left && w[i + 1] == right {
                    out.push(merged.clone());
                    i += 2;
                } else {
                    out.push(w[i].clone());
                    i += 1;
                }
            }
            *w = out;
        }
        vocab.insert(merged);
        merges.push((left, right));
    }
    merges
}

fn bpe_brute_force() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut merges_seen = 0;
    for case in 0..500 {
        let n_words = rng.gen_range(1..=3);
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        for _ in 0..n_words {
            let len = rng.gen_range(1..=10);
            let word: String = (0..len).map(|_| *b"abc".choose(&mut rng).unwrap() as char).collect();
            *counts.entry(word).or_insert(0) += rng.gen_range(1..=3);
        }
        let marker = if case % 2 == 0 {
            Marker::None
        } else {
            Marker::BeginOfWord
        };
        let freqs = WordFrequencyTable::from_counts(counts, marker);
        let words: Vec<(Vec<String>, u64)> = freqs
            .iter()
            .map(|(w, c)| (w.chars().map(String::from).collect(), c))
            .collect();
        let alphabet: BTreeSet<char> = freqs.iter().flat_map(|(w, _)| w.chars()).collect();
        let target = alphabet.len() + rng.gen_range(0..=12);
        let got = bpe::train(&freqs, target).map_err(err)?;
        let want = reference_bpe(&words, target);
        check(
            got.model.merges() == want.as_slice(),
            format!(
                "case {case} {freqs:?}: trainer {:?} vs reference {want:?}",
                got.model.merges()
            ),
        )?;
        merges_seen += want.len();
    }
    let elapsed = started.elapsed();
    check(elapsed < Duration::from_secs(30), format!("took {elapsed:?}"))?;
    Ok(format!("500 corpora, {merges_seen} merges identical, {elapsed:?}"))
}

// 3

fn bpe_compression() -> Outcome {
    let started = Instant::now();
    let sentences = synth::ner_sentences(&SynthConfig {
        ner_sentences: 1000,
        seed: 11,
        ..SynthConfig::default()
    });
    let docs: Vec<CleanDocument> = sentences
        .iter()
        .enumerate()
        .map(|(i, s)| CleanDocument {
            id: i.to_string(),
            text: normalize(&s.words.join(" "), Language::Turkish),
        })
        .collect();
    let freqs = bpe::count_words(&docs, Marker::BeginOfWord);
    let mut means = Vec::new();
    for target in [100, 300, 1000, 3000] {
        let model = bpe::train(&freqs, target).map_err(err)?.model;
        let streams = tokenize_corpus(&docs, &TokenizerSpec::bpe(model));
        means.push(corpus_statistics(&streams).mean_tokens_per_word);
    }
    check(means.windows(2).all(|w| w[1] <= w[0]), format!("means {means:?}"))?;
    let elapsed = started.elapsed();
    check(elapsed < Duration::from_secs(60), format!("took {elapsed:?}"))?;
    Ok(format!("tokens/word {means:.4?}"))
}

// 4

fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    norm(&diff) / norm(analytic).max(norm(numeric)).max(f64::MIN_POSITIVE)
}

fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

fn sgns_gradient_check() -> Outcome {
    const H: f64 = 1e-6;
    const DIM: usize = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let k = rng.gen_range(1..=5);
        // params: center, positive, then k negatives
        let mut params: Vec<f64> = uniform_vec(&mut rng, DIM * (k + 2), 1.0);
        let loss = |p: &[f64]| {
            let negs: Vec<&[f64]> = (0..k).map(|j| &p[(j + 2) * DIM..(j + 3) * DIM]).collect();
            sgns_loss_and_grad(&p[..DIM], &p[DIM..2 * DIM], &negs).loss
        };
        let g = {
            let negs: Vec<&[f64]> = (0..k).map(|j| &params[(j + 2) * DIM..(j + 3) * DIM]).collect();
            sgns_loss_and_grad(&params[..DIM], &params[DIM..2 * DIM], &negs)
        };
        let mut analytic = g.center.clone();
        analytic.extend(&g.positive);
        for n in &g.negatives {
            analytic.extend(n);
        }
        let mut numeric = Vec::with_capacity(params.len());
        for i in 0..params.len() {
            let orig = params[i];
            params[i] = orig + H;
            let up = loss(&params);
            params[i] = orig - H;
            let down = loss(&params);
            params[i] = orig;
            numeric.push((up - down) / (2.0 * H));
        }
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    check(worst < 1e-5, format!("max relative error {worst:e}"))?;
    Ok(format!("max relative error {worst:.2e}"))
}

// 5

fn features(rows: usize, cols: usize, x: Vec<f64>, y: Vec<usize>, classes: usize) -> FeatureSet<f64> {
    FeatureSet {
        x: Matrix::from_vec(rows, cols, x).unwrap(),
        y,
        codec: LabelCodec::from_labels((0..classes).map(|c| format!("c{c}"))),
        oov_count: 0,
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn softmax_gradient_check_and_blobs() -> Outcome {
    const H: f64 = 1e-6;
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (n, d, c) = (rng.gen_range(2..=8), 4, rng.gen_range(2..=4));
        let mut x = uniform_vec(&mut rng, n * d, 2.0);
        for i in 0..n {
            x[i * d + d - 1] = 1.0;
        }
        let y = (0..n).map(|_| rng.gen_range(0..c)).collect();
        let fs = features(n, d, x, y, c);
        let lambda = rng.gen_range(0.0..0.5);
        let mut w = Matrix::from_vec(c, d, uniform_vec(&mut rng, c * d, 1.0)).unwrap();
        let analytic = classify::objective_grad(&w, &fs, lambda).as_slice().to_vec();
        let mut numeric = Vec::with_capacity(c * d);
        for i in 0..c * d {
            let orig = w.as_slice()[i];
            w.as_mut_slice()[i] = orig + H;
            let up = classify::objective(&w, &fs, lambda);
            w.as_mut_slice()[i] = orig - H;
            let down = classify::objective(&w, &fs, lambda);
            w.as_mut_slice()[i] = orig;
            numeric.push((up - down) / (2.0 * H));
        }
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    check(worst < 1e-5, format!("max relative error {worst:e}"))?;

    // three unit-variance blobs with centers 10σ apart
    let centers = [(0.0, 0.0), (10.0, 0.0), (0.0, 10.0)];
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (class, (cx, cy)) in centers.iter().enumerate() {
        for _ in 0..100 {
            x.extend([cx + normal(&mut rng), cy + normal(&mut rng), 1.0]);
            y.push(class);
        }
    }
    let fs = features(300, 3, x, y.clone(), 3);
    let model = classify::saga_fit(&fs, &SagaConfig::default()).map_err(err)?;
    let pred = model.predict(&fs.x).map_err(err)?;
    let accuracy = pred.iter().zip(&y).filter(|(p, g)| p == g).count() as f64 / 300.0;
    check(model.epochs_run() <= 500, format!("{} epochs", model.epochs_run()))?;
    check(accuracy == 1.0, format!("blob training accuracy {accuracy}"))?;
    let elapsed = started.elapsed();
    check(elapsed < Duration::from_secs(10), format!("took {elapsed:?}"))?;
    Ok(format!(
        "max relative error {worst:.2e}; blobs accuracy 1.0 after {} epochs",
        model.epochs_run()
    ))
}

// 6

struct NaiveClass {
    label: String,
    tp: u64,
    fp: u64,
    fn_: u64,
    precision: f64,
    recall: f64,
    f1: f64,
}

fn naive_scores(gold: &[String], pred: &[String]) -> (f64, f64, Vec<NaiveClass>) {
    let labels: BTreeSet<&String> = gold.iter().chain(pred).collect();
    let mut classes = Vec::new();
    for label in labels {
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for (g, p) in gold.iter().zip(pred) {
            match (g == label, p == label) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                (false, false) => {}
            }
        }
        let precision = if tp + fp == 0 {
            0.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let recall = if tp + fn_ == 0 {
            0.0
        } else {
            tp as f64 / (tp + fn_) as f64
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        classes.push(NaiveClass {
            label: label.clone(),
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1,
        });
    }
    let correct = gold.iter().zip(pred).filter(|(g, p)| g == p).count();
    let macro_f1 = classes.iter().map(|c| c.f1).sum::<f64>() / classes.len() as f64;
    (correct as f64 / gold.len() as f64, macro_f1, classes)
}

fn metrics_oracle() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let pool = ["O", "B-PER", "I-PER", "B-LOC", "I-LOC", "B-ORG", "I-ORG"];
    for case in 0..1000 {
        let n = rng.gen_range(1..=40);
        let k = rng.gen_range(1..=pool.len());
        let gold: Vec<String> = (0..n).map(|_| pool[rng.gen_range(0..k)].to_string()).collect();
        let pred: Vec<String> = (0..n).map(|_| pool[rng.gen_range(0..k)].to_string()).collect();
        let s = metrics::score(&gold, &pred).map_err(err)?;
        let (accuracy, macro_f1, classes) = naive_scores(&gold, &pred);
        let same = s.accuracy == accuracy
            && s.macro_f1 == macro_f1
            && s.per_class.len() == classes.len()
            && s.per_class.iter().zip(&classes).all(|(a, b)| {
                a.label == b.label
                    && (a.tp, a.fp, a.fn_) == (b.tp, b.fp, b.fn_)
                    && a.support == b.tp + b.fn_
                    && (a.precision, a.recall, a.f1) == (b.precision, b.recall, b.f1)
            });
        check(same, format!("case {case}: gold {gold:?} pred {pred:?}"))?;
    }
    let gold = ["A", "A", "B"];
    let pred = ["A", "B", "B"];
    let report = EvalReport::new(
        "xx",
        "word",
        &metrics::score(&gold, &pred).map_err(err)?,
        0,
        BTreeMap::new(),
        BTreeMap::new(),
    );
    let mut json = Vec::new();
    metrics::emit_report_json(&report, &mut json).map_err(err)?;
    let json = String::from_utf8(json).map_err(err)?;
    check(
        json.contains("\"accuracy\": 0.666667") && json.contains("\"macro_f1\": 0.666667"),
        format!("worked example report {json}"),
    )?;
    let elapsed = started.elapsed();
    check(elapsed < Duration::from_secs(5), format!("took {elapsed:?}"))?;
    Ok("1000 fuzzed cases identical; worked example 0.666667 / 0.666667".into())
}

// 7

fn fuzz_word(rng: &mut ChaCha8Rng) -> String {
    const CHARS: &[char] = &[
        'a', 'e', 'k', 'l', 'r', 'ı', 'i', 'ş', 'ç', 'ö', 'ü', 'ğ', 'A', 'E', 'I', 'İ', 'Ş', 'Ö', '1', '7', '.', ',',
        '-', '\'', '(',
    ];
    let len = rng.gen_range(1..=9);
    (0..len).map(|_| *CHARS.choose(rng).unwrap()).collect()
}

fn fuzz_sentence(rng: &mut ChaCha8Rng) -> TaggedSentence {
    let types = ["PER", "LOC", "ORG"];
    let n = rng.gen_range(1..=12);
    let mut words = Vec::with_capacity(n);
    let mut tags = Vec::with_capacity(n);
    for _ in 0..n {
        words.push(fuzz_word(rng));
        let t = types.choose(rng).unwrap().to_string();
        tags.push(match rng.gen_range(0..4) {
            0 | 1 => BioTag::Outside,
            2 => BioTag::Begin(t),
            _ => BioTag::Inside(t),
        });
    }
    TaggedSentence { words, tags }
}

fn propagation_invariants() -> Outcome {
    let started = Instant::now();
    let synth_docs: Vec<CleanDocument> = synth::ner_sentences(&SynthConfig::default())
        .iter()
        .enumerate()
        .map(|(i, s)| CleanDocument {
            id: i.to_string(),
            text: normalize(&s.words.join(" "), Language::Turkish),
        })
        .collect();
    let freqs = bpe::count_words(&synth_docs, Marker::BeginOfWord);
    let mut specs: Vec<(String, TokenizerSpec)> = vec![
        ("word".into(), TokenizerSpec::Word),
        ("char".into(), TokenizerSpec::Char),
        ("bigram".into(), TokenizerSpec::ngram(2).map_err(err)?),
        ("trigram".into(), TokenizerSpec::ngram(3).map_err(err)?),
    ];
    for target in [5_000, 10_000, 25_000, 50_000, 100_000] {
        let model = bpe::train(&freqs, target).map_err(err)?.model;
        specs.push((Strategy::Bpe(target).to_string(), TokenizerSpec::bpe(model)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let sentences: Vec<TaggedSentence> = (0..200).map(|_| fuzz_sentence(&mut rng)).collect();
    for (name, spec) in &specs {
        for (si, s) in sentences.iter().enumerate() {
            let p = propagate_tags(s, spec, Language::Turkish);
            let ctx = format!("{name}, sentence {si}");
            check(
                p.subtokens.len() == p.tags.len() && p.tags.len() == p.origin_word.len(),
                format!("{ctx}: ragged output"),
            )?;
            check(
                p.origin_word.windows(2).all(|w| w[0] <= w[1])
                    && (0..s.words.len()).all(|w| p.origin_word.contains(&w)),
                format!("{ctx}: a word lost its sub-tokens"),
            )?;
            let begins = |tags: &[BioTag]| {
                let mut m: BTreeMap<String, usize> = BTreeMap::new();
                for t in tags {
                    if let BioTag::Begin(x) = t {
                        *m.entry(x.clone()).or_default() += 1;
                    }
                }
                m
            };
            check(begins(&s.tags) == begins(&p.tags), format!("{ctx}: B counts changed"))?;
            for (tag, &w) in p.tags.iter().zip(&p.origin_word) {
                check(
                    tag.is_outside() == s.tags[w].is_outside(),
                    format!("{ctx}: O purity broken at word {w}"),
                )?;
                check(
                    tag.entity_type() == s.tags[w].entity_type(),
                    format!("{ctx}: entity type changed at word {w}"),
                )?;
            }
        }
    }
    let elapsed = started.elapsed();
    check(elapsed < Duration::from_secs(30), format!("took {elapsed:?}"))?;
    Ok(format!("200 sentences x {} strategies", specs.len()))
}

// 8, 9

const HEADLINE: [&str; 5] = ["word", "char", "bigram", "trigram", "bpe-1k"];

fn run_fixture(dir: &Path) -> Result<(Experiment, Vec<SummaryRow>), String> {
    let config_path = synth::write_fixture(dir, &SynthConfig::default(), &HEADLINE).map_err(err)?;
    let exp = Experiment::new(ExperimentConfig::load(&config_path).map_err(err)?).map_err(err)?;
    let rows = exp.run_all().map_err(err)?;
    for r in &rows {
        check(r.status == RunStatus::Ok, format!("{} {:?}", r.strategy, r.status))?;
    }
    Ok((exp, rows))
}

fn macro_f1(rows: &[SummaryRow], name: &str) -> f64 {
    rows.iter()
        .find(|r| r.strategy.to_string() == name)
        .and_then(|r| r.macro_f1)
        .unwrap_or(f64::NAN)
}

fn directional_reproduction(dir: &Path) -> Outcome {
    let started = Instant::now();
    let (exp, rows) = run_fixture(dir)?;
    let (word, char, bpe) = (
        macro_f1(&rows, "word"),
        macro_f1(&rows, "char"),
        macro_f1(&rows, "bpe-1k"),
    );
    check(word > char, format!("word {word} <= char {char}"))?;
    check(bpe > char, format!("bpe-1k {bpe} <= char {char}"))?;
    exp.verify_manifest().map_err(err)?;
    let elapsed = started.elapsed();
    check(elapsed < Duration::from_secs(300), format!("took {elapsed:?}"))?;
    let table: Vec<String> = HEADLINE
        .iter()
        .map(|s| format!("{s}={:.3}", macro_f1(&rows, s)))
        .collect();
    Ok(format!("macro F1 {} in {elapsed:.1?}", table.join(" ")))
}

fn determinism(first: &Path, second: &Path) -> Outcome {
    let started = Instant::now();
    let (a, _) = if first.join("out").exists() {
        let config = ExperimentConfig::load(&first.join("config.toml")).map_err(err)?;
        (Experiment::new(config).map_err(err)?, Vec::new())
    } else {
        run_fixture(first)?
    };
    let (b, _) = run_fixture(second)?;
    let mut files = vec![Path::new("summary.csv").to_path_buf()];
    for s in HEADLINE {
        files.push(Path::new(s).join("report.json"));
        files.push(Path::new("reports").join(format!("tr_{s}_report.json")));
    }
    for f in &files {
        let x = fs::read(a.root().join(f)).map_err(err)?;
        let y = fs::read(b.root().join(f)).map_err(err)?;
        check(x == y, format!("{} differs", f.display()))?;
    }
    let elapsed = started.elapsed();
    check(elapsed < Duration::from_secs(600), format!("took {elapsed:?}"))?;
    Ok(format!("{} files byte-identical across two runs", files.len()))
}

// 10

fn round_trips() -> Outcome {
    let started = Instant::now();
    let freqs = WordFrequencyTable::from_counts([("abcbabcbab", 1), ("cab", 3)], Marker::BeginOfWord);
    let model = bpe::train(&freqs, 12).map_err(err)?.model;
    let mut buf = Vec::new();
    model.save(&mut buf).map_err(err)?;
    let back = BpeModel::load(buf.as_slice()).map_err(err)?;
    check(back == model, "BPE model changed")?;
    check(
        (0..model.vocab_size() as u32).all(|i| back.token(i) == model.token(i)),
        "BPE ids changed",
    )?;

    let docs: Vec<CleanDocument> = synth::ner_sentences(&SynthConfig {
        ner_sentences: 200,
        ..SynthConfig::default()
    })
    .iter()
    .enumerate()
    .map(|(i, s)| CleanDocument {
        id: i.to_string(),
        text: normalize(&s.words.join(" "), Language::Turkish),
    })
    .collect();
    let streams = tokenize_corpus(&docs, &TokenizerSpec::Word);
    let config = EmbedConfig {
        dim: 8,
        epochs: 2,
        min_count: 1,
        table_size: 10_000,
        ..EmbedConfig::default()
    };
    let table: EmbeddingTable<f64> = embed::train(&streams, &config).map_err(err)?;
    let mut buf = Vec::new();
    table.save_text(&mut buf).map_err(err)?;
    let loaded: EmbeddingTable<f64> = EmbeddingTable::load_text(buf.as_slice()).map_err(err)?;
    check(
        loaded.len() == table.len() && loaded.dim() == table.dim(),
        "embedding shape changed",
    )?;
    let mut worst: f64 = 0.0;
    for token in table.vocab().tokens() {
        let (a, b) = (table.lookup(token).unwrap(), loaded.lookup(token).ok_or("token lost")?);
        worst = a.iter().zip(b).fold(worst, |m, (x, y)| m.max((x - y).abs()));
    }
    check(worst <= 1e-6, format!("embedding component error {worst:e}"))?;

    let fs = features(
        4,
        2,
        vec![0.5, 1.0, -0.25, 1.0, 2.0, 1.0, -1.5, 1.0],
        vec![0, 1, 0, 1],
        2,
    );
    let softmax = classify::saga_fit(&fs, &SagaConfig::default()).map_err(err)?;
    let mut buf = Vec::new();
    classify::save(&softmax, &mut buf).map_err(err)?;
    let back: classify::SoftmaxModel<f64> = classify::load(buf.as_slice()).map_err(err)?;
    check(
        back.weights == softmax.weights && back.codec == softmax.codec && back.l2_strength == softmax.l2_strength,
        "softmax model changed",
    )?;

    let report = EvalReport::new(
        "tr",
        "bpe-5k",
        &metrics::score(&["O", "B-PER", "O"], &["O", "O", "B-LOC"]).map_err(err)?,
        3,
        BTreeMap::from([("embed.dim".to_string(), "150".to_string())]),
        BTreeMap::from([("embed".to_string(), 1)]),
    );
    let mut buf = Vec::new();
    metrics::emit_report_json(&report, &mut buf).map_err(err)?;
    let parsed = metrics::parse_report_json(buf.as_slice()).map_err(err)?;
    check(parsed == report, "report changed")?;
    let elapsed = started.elapsed();
    check(elapsed < Duration::from_secs(5), format!("took {elapsed:?}"))?;
    Ok(format!(
        "BPE, embeddings (max error {worst:.1e}), softmax and report reload equal"
    ))
}

fn main() {
    let scratch = tempfile::tempdir().expect("temporary directory");
    let first = scratch.path().join("run-a");
    let second = scratch.path().join("run-b");
    let criteria: Vec<Criterion> = vec![
        ("BPE worked example", Box::new(bpe_worked_example)),
        ("BPE brute-force equivalence", Box::new(bpe_brute_force)),
        ("BPE compression monotonicity", Box::new(bpe_compression)),
        ("SGNS gradient check", Box::new(sgns_gradient_check)),
        (
            "softmax gradient check and SAGA blobs",
            Box::new(softmax_gradient_check_and_blobs),
        ),
        ("metrics oracle", Box::new(metrics_oracle)),
        ("tag propagation invariants", Box::new(propagation_invariants)),
        (
            "directional reproduction",
            Box::new(|| directional_reproduction(&first)),
        ),
        ("determinism", Box::new(|| determinism(&first, &second))),
        ("format round trips", Box::new(round_trips)),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome =
            std::panic::catch_unwind(std::panic::AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".to_string()));
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
