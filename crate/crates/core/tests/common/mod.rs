//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use regmapr::{Dataset, EmbeddingTable, Gold, SentencePair, Split, TaskKind};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Character scanner: lowercase, break on whitespace, peel ASCII punctuation
/// off both ends one character at a time.
pub fn reference_tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word: Vec<char> = Vec::new();
    let flush = |word: &mut Vec<char>, out: &mut Vec<String>| {
        let mut lo = 0;
        let mut hi = word.len();
        while lo < hi && word[lo].is_ascii_punctuation() {
            out.push(word[lo].to_string());
            lo += 1;
        }
        let mut tail = Vec::new();
        while hi > lo && word[hi - 1].is_ascii_punctuation() {
            tail.push(word[hi - 1].to_string());
            hi -= 1;
        }
        if hi > lo {
            out.push(word[lo..hi].iter().collect());
        }
        out.extend(tail.into_iter().rev());
        word.clear();
    };
    for c in text.chars() {
        if c.is_whitespace() {
            flush(&mut word, &mut out);
        } else {
            word.extend(c.to_lowercase());
        }
    }
    flush(&mut word, &mut out);
    out
}

/// MA bit straight from the definition: some token of the other sentence is the same string.
pub fn brute_ma(t: &str, other: &[String]) -> bool {
    other.iter().any(|w| w == t)
}

/// PR bit straight from the raw pair list: some listed pair `(t, w)` has `w`
/// in the other sentence. `symmetric` also reads each pair backwards.
pub fn brute_pr(t: &str, other: &[String], pairs: &[(String, String)], symmetric: bool) -> bool {
    pairs.iter().any(|(a, b)| {
        let a = a.to_lowercase();
        let b = b.to_lowercase();
        if a == b {
            return false;
        }
        (a == t && other.contains(&b)) || (symmetric && b == t && other.contains(&a))
    })
}

pub const VOCAB: [&str; 24] = [
    "a", "man", "woman", "dog", "puppy", "cat", "kitten", "runs", "sprints", "jogs", "big", "large", "huge",
    "small", "tiny", "the", "park", "garden", "plays", "guitar", "is", "not", "quickly", "fast",
];

pub fn random_ppdb_pairs(r: &mut ChaCha8Rng, n: usize) -> Vec<(String, String)> {
    (0..n)
        .map(|_| {
            let a = VOCAB.choose(r).unwrap();
            let b = VOCAB.choose(r).unwrap();
            (a.to_string(), b.to_string())
        })
        .collect()
}

pub fn random_sentence(r: &mut ChaCha8Rng, max_len: usize) -> String {
    let n = r.gen_range(1..=max_len);
    (0..n).map(|_| *VOCAB.choose(r).unwrap()).collect::<Vec<_>>().join(" ")
}

pub fn random_table(r: &mut ChaCha8Rng, dim: usize) -> EmbeddingTable {
    EmbeddingTable::from_vectors(
        dim,
        VOCAB
            .iter()
            .map(|w| (w.to_string(), (0..dim).map(|_| r.gen_range(-0.5..0.5)).collect::<Vec<f64>>())),
    )
    .unwrap()
}

/// Pairs whose label is exactly "the sentences share a word": with MA bits
/// on, the label is readable from the input.
pub fn ma_separable(r: &mut ChaCha8Rng, n: usize) -> Dataset {
    let (left, right) = VOCAB.split_at(12);
    let pairs = (0..n)
        .map(|i| {
            let len1 = r.gen_range(2..=4);
            let len2 = r.gen_range(2..=4);
            let s1: Vec<&str> = (0..len1).map(|_| *left.choose(r).unwrap()).collect();
            let mut s2: Vec<&str> = (0..len2).map(|_| *right.choose(r).unwrap()).collect();
            let label = i % 2;
            if label == 1 {
                let k = r.gen_range(0..len2);
                s2[k] = s1[r.gen_range(0..len1)];
            }
            SentencePair::new(&s1.join(" "), &s2.join(" "), Gold::Class(label), TaskKind::Paraphrase2).unwrap()
        })
        .collect();
    Dataset::new("ma-separable", Split::Train, TaskKind::Paraphrase2, pairs).unwrap()
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn naive_pearson(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// O(n²) ranks: 1 + (number strictly smaller) + (number of other equal values) / 2.
pub fn naive_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let less = x.iter().filter(|&&w| w < v).count() as f64;
            let equal = x.iter().filter(|&&w| w == v).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn naive_spearman(x: &[f64], y: &[f64]) -> f64 {
    naive_pearson(&naive_ranks(x), &naive_ranks(y))
}

pub fn naive_accuracy(p: &[usize], g: &[usize]) -> f64 {
    let mut hits = 0;
    for i in 0..p.len() {
        if p[i] == g[i] {
            hits += 1;
        }
    }
    hits as f64 / p.len() as f64
}

pub fn naive_f1(p: &[usize], g: &[usize]) -> f64 {
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut fneg = 0.0;
    for i in 0..p.len() {
        if p[i] == 1 && g[i] == 1 {
            tp += 1.0;
        } else if p[i] == 1 {
            fp += 1.0;
        } else if g[i] == 1 {
            fneg += 1.0;
        }
    }
    if tp == 0.0 {
        return 0.0;
    }
    2.0 * tp / (2.0 * tp + fp + fneg)
}

pub fn naive_mse(p: &[f64], g: &[f64], lo: f64, hi: f64) -> f64 {
    let mut s = 0.0;
    for i in 0..p.len() {
        let a = lo + p[i] * (hi - lo);
        let b = lo + g[i] * (hi - lo);
        s += (a - b) * (a - b);
    }
    s / p.len() as f64
}

pub fn token_strings(p: &SentencePair) -> (Vec<String>, Vec<String>) {
    let f = |s: &regmapr::Sentence| s.tokens.iter().map(|t| t.to_string()).collect::<Vec<_>>();
    (f(&p.s1), f(&p.s2))
}

pub fn unique(v: &[String]) -> HashSet<&str> {
    v.iter().map(String::as_str).collect()
}
