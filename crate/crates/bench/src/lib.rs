//! Synthetic inputs shared by the benchmarks.

use rand::seq::SliceRandom;
use rand::Rng;
use regmapr::rng::{stream, Rng as StreamRng};
use regmapr::{EmbeddingTable, Gold, ParaphraseIndex, SentencePair, TaskKind};

pub fn rng(name: &str) -> StreamRng {
    stream(17, name, &[])
}

pub fn vocabulary(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("w{i}")).collect()
}

pub fn table(vocab: &[String], dim: usize, r: &mut StreamRng) -> EmbeddingTable {
    EmbeddingTable::from_vectors(
        dim,
        vocab.iter().map(|w| (w.clone(), (0..dim).map(|_| r.gen_range(-0.5..0.5)).collect())),
    )
    .expect("consistent widths")
}

/// Random lexical pairs, roughly `per_word` paraphrases per word.
pub fn ppdb_pairs(vocab: &[String], per_word: usize, r: &mut StreamRng) -> Vec<(String, String)> {
    let mut out = Vec::with_capacity(vocab.len() * per_word);
    for w in vocab {
        for _ in 0..per_word {
            out.push((w.clone(), vocab.choose(r).expect("nonempty").clone()));
        }
    }
    out
}

pub fn index(pairs: &[(String, String)]) -> ParaphraseIndex {
    ParaphraseIndex::from_pairs(pairs.iter().map(|(a, b)| (a.as_str(), b.as_str())), false)
}

pub fn sentence(vocab: &[String], len: usize, r: &mut StreamRng) -> String {
    (0..len).map(|_| vocab.choose(r).expect("nonempty").as_str()).collect::<Vec<_>>().join(" ")
}

pub fn pair(vocab: &[String], len: usize, task: TaskKind, r: &mut StreamRng) -> SentencePair {
    let gold = match task {
        TaskKind::Relatedness => Gold::Score(r.gen_range(0.0..1.0)),
        TaskKind::Entailment3 => Gold::Class(r.gen_range(0..3)),
        TaskKind::Paraphrase2 => Gold::Class(r.gen_range(0..2)),
    };
    SentencePair::new(&sentence(vocab, len, r), &sentence(vocab, len, r), gold, task).expect("nonempty sentences")
}
