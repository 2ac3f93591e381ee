use std::hint::black_box;
use std::io::Write;

use criterion::{criterion_group, criterion_main, Criterion};
use regmapr::features::{augment_pair, feature_bits, token_set};
use regmapr::{build_index, tokenize, FeatureMode, TaskKind, GLOVE_DIM};
use regmapr_bench::{index, pair, ppdb_pairs, rng, sentence, table, vocabulary};

fn features(c: &mut Criterion) {
    let mut r = rng("features");
    let vocab = vocabulary(5000);
    let idx = index(&ppdb_pairs(&vocab, 10, &mut r));
    let tab = table(&vocab, GLOVE_DIM, &mut r);
    let pairs: Vec<_> = (0..1000).map(|_| pair(&vocab, 15, TaskKind::Paraphrase2, &mut r)).collect();

    c.bench_function("mapr_bits_1000_pairs", |b| {
        b.iter(|| {
            for p in &pairs {
                let other = token_set(&p.s2.tokens);
                black_box(feature_bits(&p.s1.tokens, &other, FeatureMode::Mapr, Some(&idx)).unwrap());
            }
        })
    });
    c.bench_function("augment_100_pairs", |b| {
        b.iter(|| {
            for p in &pairs[..100] {
                black_box(augment_pair(p, &tab, Some(&idx), FeatureMode::Mapr).unwrap());
            }
        })
    });
    let text: Vec<String> = (0..1000).map(|_| sentence(&vocab, 15, &mut r) + ", it said.").collect();
    c.bench_function("tokenize_1000_sentences", |b| {
        b.iter(|| {
            for s in &text {
                black_box(tokenize(s));
            }
        })
    });
}

fn ppdb(c: &mut Criterion) {
    let mut r = rng("ppdb");
    let vocab = vocabulary(20_000);
    let mut file = tempfile_path();
    for (a, b) in ppdb_pairs(&vocab, 5, &mut r) {
        writeln!(file.1, "[X] ||| {a} ||| {b} ||| PPDB2.0Score=1.0 ||| 0-0").unwrap();
    }
    file.1.flush().unwrap();
    let mut group = c.benchmark_group("ppdb");
    group.sample_size(10);
    group.bench_function("build_index_100k_lines", |b| b.iter(|| build_index(black_box(&file.0), false).unwrap()));
    group.finish();
    std::fs::remove_file(&file.0).ok();
}

fn tempfile_path() -> (std::path::PathBuf, std::io::BufWriter<std::fs::File>) {
    let path = std::env::temp_dir().join(format!("regmapr-bench-{}.ppdb", std::process::id()));
    let f = std::fs::File::create(&path).unwrap();
    (path, std::io::BufWriter::new(f))
}

criterion_group!(benches, features, ppdb);
criterion_main!(benches);
