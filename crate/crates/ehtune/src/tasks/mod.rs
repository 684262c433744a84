//! Deterministic synthetic data.
//!
//! A sticky-topic grammar over a 64-id vocabulary supplies the pretraining
//! corpus; the downstream tasks are built from the same generator family so
//! pretrained features are relevant but not sufficient on their own.
//!
//! Token map: 0 = CLS (pooling position), 1 = SEP, 2 = MASK,
//! 3..=62 = content (four topic bands of 15 ids each), 63 unused.

mod eval;

pub use eval::{accuracy, f1, mcc, pearson, spearman};

use std::collections::HashSet;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EhError, Result};

pub const CLS: usize = 0;
pub const SEP: usize = 1;
pub const MASK: usize = 2;
pub const CONTENT_BASE: usize = 3;
pub const N_TOPICS: usize = 4;
pub const BAND: usize = 15;
pub const VOCAB: usize = 64;

/// Probability the latent topic persists between adjacent positions.
const TOPIC_STAY: f64 = 0.92;
/// Probability the next within-band token is prev+1 (ring walk).
const RING_STEP: f64 = 0.75;

fn band_range(topic: usize) -> std::ops::Range<usize> {
    let lo = CONTENT_BASE + topic * BAND;
    lo..lo + BAND
}

fn ring_next(topic: usize, prev: usize) -> usize {
    let lo = CONTENT_BASE + topic * BAND;
    lo + ((prev - lo + 1) % BAND)
}

/// Walk the sticky-topic chain for `len` steps, emitting (token, topic).
fn walk(rng: &mut ChaCha8Rng, len: usize, fixed_topic: Option<usize>) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(len);
    let mut topic = fixed_topic.unwrap_or_else(|| rng.gen_range(0..N_TOPICS));
    let mut prev: Option<usize> = None;
    for _ in 0..len {
        if fixed_topic.is_none() && prev.is_some() && rng.gen_bool(1.0 - TOPIC_STAY) {
            let shift = rng.gen_range(1..N_TOPICS);
            topic = (topic + shift) % N_TOPICS;
            prev = None;
        }
        let tok = match prev {
            Some(p) if rng.gen_bool(RING_STEP) => ring_next(topic, p),
            _ => rng.gen_range(band_range(topic)),
        };
        out.push((tok, topic));
        prev = Some(tok);
    }
    out
}

/// Pretraining corpus: token sequences without the CLS position.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Corpus {
    pub grammar: String,
    pub seed: u64,
    pub sequences: Vec<Vec<usize>>,
}

/// Deterministic corpus of `n` sequences of length 24 (≤ max_seq_len − 1).
pub fn generate_corpus(grammar: &str, seed: u64, n: usize) -> Result<Corpus> {
    if grammar != "sticky-topic" {
        return Err(EhError::Config(format!("unknown grammar {grammar:?}")));
    }
    if n == 0 {
        return Err(EhError::Config("corpus size must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sequences = (0..n)
        .map(|_| walk(&mut rng, 24, None).into_iter().map(|(t, _)| t).collect())
        .collect();
    Ok(Corpus { grammar: grammar.to_string(), seed, sequences })
}

/// Exact stationary unigram distribution of the grammar: uniform over the
/// 60 content ids (the ring walk and topic switches are shift-symmetric).
pub fn stationary_unigram() -> Vec<f64> {
    let mut p = vec![0.0; VOCAB];
    for topic in 0..N_TOPICS {
        for id in band_range(topic) {
            p[id] = 1.0 / (N_TOPICS * BAND) as f64;
        }
    }
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification { n_classes: usize },
    Regression,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    Mcc,
    F1,
    Pearson,
    Spearman,
}

impl Metric {
    pub fn name(&self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::Mcc => "mcc",
            Metric::F1 => "f1",
            Metric::Pearson => "pearson",
            Metric::Spearman => "spearman",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Example {
    pub tokens: Vec<usize>,
    /// Class index (as a whole float) for classification, score for regression.
    pub label: f32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Task {
    pub name: String,
    pub kind: TaskKind,
    pub metric: Metric,
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
}

impl Task {
    pub fn n_classes(&self) -> usize {
        match self.kind {
            TaskKind::Classification { n_classes } => n_classes,
            TaskKind::Regression => 1,
        }
    }

    /// Score predictions against dev labels with the task's metric.
    pub fn score(&self, preds_class: &[usize], preds_value: &[f32]) -> Result<f32> {
        let labels_class: Vec<usize> = self.dev.iter().map(|e| e.label as usize).collect();
        let labels_value: Vec<f32> = self.dev.iter().map(|e| e.label).collect();
        Ok(match self.metric {
            Metric::Accuracy => accuracy(preds_class, &labels_class)?,
            Metric::Mcc => mcc(preds_class, &labels_class)?,
            Metric::F1 => f1(preds_class, &labels_class)?,
            Metric::Pearson => pearson(preds_value, &labels_value)?,
            Metric::Spearman => spearman(preds_value, &labels_value)?,
        })
    }
}

pub const TASK_NAMES: &[&str] = &["topic-pair", "topic-pair-large", "parity", "similarity"];

const SEG_LEN: usize = 10;
const SEG_NOISE: f64 = 0.2;
const PARITY_LEN: usize = 12;
const PARITY_BIGRAM: (usize, usize) = (10, 40);
const SIM_LEN: usize = 7;

fn noisy_segment(rng: &mut ChaCha8Rng, topic: usize, len: usize) -> Vec<usize> {
    walk(rng, len, Some(topic))
        .into_iter()
        .map(|(t, _)| {
            if rng.gen_bool(SEG_NOISE) {
                rng.gen_range(CONTENT_BASE..CONTENT_BASE + N_TOPICS * BAND)
            } else {
                t
            }
        })
        .collect()
}

/// [CLS] s1 [SEP] s2
fn pair_encode(s1: &[usize], s2: &[usize]) -> Vec<usize> {
    let mut t = Vec::with_capacity(s1.len() + s2.len() + 2);
    t.push(CLS);
    t.extend_from_slice(s1);
    t.push(SEP);
    t.extend_from_slice(s2);
    t
}

fn gen_topic_pair(rng: &mut ChaCha8Rng, want_same: bool) -> Example {
    let t1 = rng.gen_range(0..N_TOPICS);
    let t2 = if want_same {
        t1
    } else {
        (t1 + rng.gen_range(1..N_TOPICS)) % N_TOPICS
    };
    let s1 = noisy_segment(rng, t1, SEG_LEN);
    let s2 = noisy_segment(rng, t2, SEG_LEN);
    Example { tokens: pair_encode(&s1, &s2), label: if want_same { 1.0 } else { 0.0 } }
}

fn count_bigram(tokens: &[usize], bigram: (usize, usize)) -> usize {
    tokens.windows(2).filter(|w| w[0] == bigram.0 && w[1] == bigram.1).count()
}

fn gen_parity(rng: &mut ChaCha8Rng, want_label: usize) -> Example {
    loop {
        let mut seq: Vec<usize> = walk(rng, PARITY_LEN, None).into_iter().map(|(t, _)| t).collect();
        let injections = rng.gen_range(0..4usize);
        for _ in 0..injections {
            let pos = rng.gen_range(0..PARITY_LEN - 1);
            seq[pos] = PARITY_BIGRAM.0;
            seq[pos + 1] = PARITY_BIGRAM.1;
        }
        let label = count_bigram(&seq, PARITY_BIGRAM) % 2;
        if label == want_label {
            let mut tokens = Vec::with_capacity(PARITY_LEN + 1);
            tokens.push(CLS);
            tokens.extend_from_slice(&seq);
            return Example { tokens, label: label as f32 };
        }
    }
}

fn gen_similarity(rng: &mut ChaCha8Rng) -> Example {
    let topic = rng.gen_range(0..N_TOPICS);
    let s1: Vec<usize> = walk(rng, SIM_LEN, Some(topic)).into_iter().map(|(t, _)| t).collect();
    let keep = rng.gen_range(0..=SIM_LEN);
    let other_topic = (topic + rng.gen_range(1..N_TOPICS)) % N_TOPICS;
    let mut s2 = s1.clone();
    let mut positions: Vec<usize> = (0..SIM_LEN).collect();
    // Fisher-Yates using the task RNG
    for i in (1..SIM_LEN).rev() {
        let j = rng.gen_range(0..=i);
        positions.swap(i, j);
    }
    for &pos in positions.iter().take(SIM_LEN - keep) {
        s2[pos] = rng.gen_range(band_range(other_topic));
    }
    let equal = s1.iter().zip(&s2).filter(|(a, b)| a == b).count();
    Example { tokens: pair_encode(&s1, &s2), label: equal as f32 / SIM_LEN as f32 }
}

fn fill_unique(
    target: &mut Vec<Example>,
    seen: &mut HashSet<Vec<usize>>,
    n: usize,
    mut gen: impl FnMut(usize) -> Example,
) {
    let mut i = target.len();
    while target.len() < n {
        let ex = gen(i);
        i += 1;
        if seen.insert(ex.tokens.clone()) {
            target.push(ex);
        }
    }
}

/// Built-in tasks, deterministic from (name, seed). Train and dev are
/// disjoint by construction; classification splits are exactly balanced.
pub fn make_task(name: &str, seed: u64) -> Result<Task> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7a5c_1e00);
    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    let (kind, metric, n_train, n_dev): (TaskKind, Metric, usize, usize) = match name {
        "topic-pair" => (TaskKind::Classification { n_classes: 2 }, Metric::Accuracy, 250, 512),
        "topic-pair-large" => {
            (TaskKind::Classification { n_classes: 2 }, Metric::Accuracy, 10_000, 512)
        }
        "parity" => (TaskKind::Classification { n_classes: 2 }, Metric::Mcc, 2000, 512),
        "similarity" => (TaskKind::Regression, Metric::Spearman, 2000, 512),
        _ => {
            return Err(EhError::Config(format!(
                "unknown task {name:?}; built-ins: {TASK_NAMES:?}"
            )))
        }
    };
    let gen_one = |i: usize, rng: &mut ChaCha8Rng| -> Example {
        match name {
            "topic-pair" | "topic-pair-large" => gen_topic_pair(rng, i % 2 == 1),
            "parity" => gen_parity(rng, i % 2),
            "similarity" => gen_similarity(rng),
            _ => unreachable!(),
        }
    };
    let mut train = Vec::with_capacity(n_train);
    fill_unique(&mut train, &mut seen, n_train, |i| gen_one(i, &mut rng));
    let mut dev = Vec::with_capacity(n_dev);
    fill_unique(&mut dev, &mut seen, n_dev, |i| gen_one(i, &mut rng));
    Ok(Task { name: name.to_string(), kind, metric, train, dev })
}

/// One example per line: {"tokens": [...], "label": x}
pub fn export_jsonl(examples: &[Example]) -> Result<String> {
    let mut out = String::new();
    for ex in examples {
        out.push_str(&serde_json::to_string(ex)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn import_jsonl(text: &str) -> Result<Vec<Example>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_deterministic_and_in_vocab() {
        let a = generate_corpus("sticky-topic", 3, 50).unwrap();
        let b = generate_corpus("sticky-topic", 3, 50).unwrap();
        assert_eq!(a.sequences, b.sequences);
        assert!(a
            .sequences
            .iter()
            .flatten()
            .all(|&t| (CONTENT_BASE..CONTENT_BASE + 60).contains(&t)));
        assert!(generate_corpus("nope", 0, 1).is_err());
        assert!(generate_corpus("sticky-topic", 0, 0).is_err());
    }

    /// χ² against the closed-form stationary distribution at n = 1e5 tokens.
    #[test]
    fn unigram_matches_stationary_distribution() {
        let corpus = generate_corpus("sticky-topic", 0, 100_000 / 24 + 1).unwrap();
        let mut counts = vec![0usize; VOCAB];
        let mut total = 0usize;
        for seq in &corpus.sequences {
            for &t in seq {
                counts[t] += 1;
                total += 1;
            }
        }
        let p = stationary_unigram();
        let mut chi2 = 0.0f64;
        for id in 0..VOCAB {
            let expect = p[id] * total as f64;
            if expect > 0.0 {
                chi2 += (counts[id] as f64 - expect).powi(2) / expect;
            } else {
                assert_eq!(counts[id], 0, "reserved id {id} emitted");
            }
        }
        // 59 dof; p=0.001 critical value ~ 98.3
        assert!(chi2 < 98.3, "chi2 = {chi2}");
    }

    #[test]
    fn tasks_are_deterministic_balanced_and_disjoint() {
        for name in TASK_NAMES {
            let a = make_task(name, 1).unwrap();
            let b = make_task(name, 1).unwrap();
            assert_eq!(a.train, b.train);
            assert_eq!(a.dev, b.dev);

            let train_set: HashSet<&Vec<usize>> = a.train.iter().map(|e| &e.tokens).collect();
            assert!(a.dev.iter().all(|e| !train_set.contains(&e.tokens)));

            if let TaskKind::Classification { .. } = a.kind {
                for split in [&a.train, &a.dev] {
                    let pos = split.iter().filter(|e| e.label == 1.0).count() as f64
                        / split.len() as f64;
                    assert!((0.45..=0.55).contains(&pos), "{name}: {pos}");
                }
            }
        }
        assert!(make_task("unknown", 0).is_err());
    }

    #[test]
    fn topic_pair_labels_match_latent_topics() {
        // labels are by construction; spot-check segment band structure on
        // noiseless reconstruction: majority band of each segment must agree
        // with the label for most same-topic pairs
        let t = make_task("topic-pair", 0).unwrap();
        let majority_band = |seg: &[usize]| -> usize {
            let mut counts = [0usize; N_TOPICS];
            for &tok in seg {
                counts[(tok - CONTENT_BASE) / BAND] += 1;
            }
            (0..N_TOPICS).max_by_key(|&i| counts[i]).unwrap()
        };
        let mut agree = 0usize;
        for ex in &t.train {
            let s1 = &ex.tokens[1..1 + SEG_LEN];
            let s2 = &ex.tokens[2 + SEG_LEN..];
            let same = (majority_band(s1) == majority_band(s2)) as usize;
            if same == ex.label as usize {
                agree += 1;
            }
        }
        // noise keeps this below 100% but majority inference must mostly work
        assert!(agree as f64 / t.train.len() as f64 > 0.8);
    }

    #[test]
    fn parity_label_definition() {
        let seq = vec![
            CLS,
            PARITY_BIGRAM.0,
            PARITY_BIGRAM.1,
            5,
            PARITY_BIGRAM.0,
            PARITY_BIGRAM.1,
            9,
            PARITY_BIGRAM.0,
            PARITY_BIGRAM.1,
        ];
        assert_eq!(count_bigram(&seq[1..], PARITY_BIGRAM) % 2, 1);
        let t = make_task("parity", 0).unwrap();
        for ex in t.train.iter().take(100) {
            assert_eq!(
                ex.label as usize,
                count_bigram(&ex.tokens[1..], PARITY_BIGRAM) % 2
            );
        }
    }

    #[test]
    fn similarity_scores_match_overlap() {
        let t = make_task("similarity", 0).unwrap();
        for ex in &t.train {
            let s1 = &ex.tokens[1..1 + SIM_LEN];
            let s2 = &ex.tokens[2 + SIM_LEN..];
            let equal = s1.iter().zip(s2).filter(|(a, b)| a == b).count();
            assert!((ex.label - equal as f32 / SIM_LEN as f32).abs() < 1e-6);
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let t = make_task("topic-pair", 2).unwrap();
        let text = export_jsonl(&t.train).unwrap();
        let back = import_jsonl(&text).unwrap();
        assert_eq!(t.train, back);
    }
}
