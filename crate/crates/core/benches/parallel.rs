//! Parallel vs sequential throughput on the two hottest loops: scoring a
//! batch of candidate columns against the target, and fitting one tree per
//! fold. With default features `auto_map` fans out over rayon; built with
//! `--no-default-features` it degrades to the sequential path and the two
//! series coincide.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use smfe_core::evaluator::relevance_on_rows;
use smfe_core::exec::{auto_map, seq_map};
use smfe_core::kg::KnowledgeBase;
use smfe_core::tabular::{Column, Dataset, Task};
use smfe_core::transforms::{apply, lookup};

fn synth_dataset(n_rows: usize, n_feats: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut cols = Vec::with_capacity(n_feats + 1);
    let mut target = vec![0.0; n_rows];
    for j in 0..n_feats {
        let vals: Vec<Option<f64>> = (0..n_rows)
            .map(|_| Some(rng.random_range(-1.0..1.0)))
            .collect();
        for (t, v) in target.iter_mut().zip(&vals) {
            *t += v.unwrap() / (j + 1) as f64;
        }
        cols.push(Column::numeric(format!("f{j}"), vals));
    }
    cols.push(Column::numeric(
        "y",
        target.into_iter().map(Some).collect(),
    ));
    Dataset::new(cols, "y", Task::Regression).unwrap()
}

fn candidate_scoring(c: &mut Criterion) {
    let d = synth_dataset(4000, 48);
    let target = d.column("y").unwrap();
    let rows: Vec<usize> = (0..d.n_rows).collect();
    let candidates: Vec<Column> = d.features().cloned().collect();
    let mut group = c.benchmark_group("candidate_scoring");
    group.bench_function(BenchmarkId::new("auto_map", candidates.len()), |b| {
        b.iter(|| {
            auto_map(&candidates, |col| {
                relevance_on_rows(col, target, Task::Regression, &rows)
            })
        })
    });
    group.bench_function(BenchmarkId::new("seq_map", candidates.len()), |b| {
        b.iter(|| {
            seq_map(&candidates, |col| {
                relevance_on_rows(col, target, Task::Regression, &rows)
            })
        })
    });
    group.finish();
}

fn transform_application(c: &mut Criterion) {
    let d = synth_dataset(2000, 24);
    let kb = KnowledgeBase::default();
    let mul = lookup("mul").unwrap();
    let cols: Vec<&Column> = d.features().collect();
    let tuples: Vec<(usize, usize)> = (0..cols.len())
        .flat_map(|i| (0..cols.len()).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect();
    let mut group = c.benchmark_group("transform_application");
    group.bench_function(BenchmarkId::new("auto_map", tuples.len()), |b| {
        b.iter(|| {
            auto_map(&tuples, |&(i, j)| {
                apply(mul, None, &[cols[i], cols[j]], &kb).unwrap()
            })
        })
    });
    group.bench_function(BenchmarkId::new("seq_map", tuples.len()), |b| {
        b.iter(|| {
            seq_map(&tuples, |&(i, j)| {
                apply(mul, None, &[cols[i], cols[j]], &kb).unwrap()
            })
        })
    });
    group.finish();
}

criterion_group!(benches, candidate_scoring, transform_application);
criterion_main!(benches);
