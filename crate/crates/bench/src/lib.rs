//! Benchmark bodies shared by the criterion targets.

use std::hint::black_box;

use criterion::{BenchmarkId, Criterion};
use covquery_core::linalg::{graded_rank, numerical_rank, DenseMatrix, RankConfig};
use covquery_core::models::{gen_partial_ktree_model, gen_small_block_model, gen_tree_model};
use covquery_core::oracle::{CovarianceOracle, QueryCounter};
use covquery_core::seed::rng_from;
use covquery_core::tree::{s_central_scores, split_at, SeparationPredicate};
use covquery_core::treewidth::{main_reconstruct_report, SeparatorConfig};
use covquery_core::{reconstruct_sb, reconstruct_tree, BlockRecoveryConfig, CentralityConfig};

pub fn oracle_queries(c: &mut Criterion) {
    let inst = gen_tree_model(1 << 14, 5, 0.3, 0.8, 1).unwrap();
    let tree = inst.oracle().unwrap();
    let counted = QueryCounter::new(inst.oracle().unwrap());
    let pairs: Vec<(usize, usize)> = (0..4096).map(|i| ((i * 7919) % (1 << 14), (i * 104_729) % (1 << 14))).collect();
    let mut g = c.benchmark_group("oracle");
    g.bench_function("tree_query", |b| {
        b.iter(|| pairs.iter().map(|&(i, j)| tree.query(i, j)).sum::<f64>())
    });
    g.bench_function("counted_tree_query", |b| {
        b.iter(|| pairs.iter().map(|&(i, j)| counted.query(i, j)).sum::<f64>())
    });
    g.finish();
}

pub fn centrality(c: &mut Criterion) {
    let mut g = c.benchmark_group("s_central_scores");
    for n in [256usize, 1024, 4096] {
        let inst = gen_tree_model(n, 5, 0.3, 0.8, 2).unwrap();
        let o = inst.oracle().unwrap();
        let view: Vec<usize> = (0..n).collect();
        let pred = SeparationPredicate::default();
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| s_central_scores(&view, &o, 64, &pred, &mut rng_from(3)))
        });
    }
    g.finish();
    let inst = gen_tree_model(4096, 5, 0.3, 0.8, 2).unwrap();
    let o = inst.oracle().unwrap();
    let view: Vec<usize> = (0..4096).collect();
    c.bench_function("split_at/4096", |b| {
        b.iter(|| split_at(&view, black_box(17), &o, &SeparationPredicate::default()))
    });
}

pub fn rank(c: &mut Criterion) {
    let mut rng = rng_from(5);
    let m = DenseMatrix::from_fn(24, 24, |_, _| rand::Rng::random_range(&mut rng, -1.0..1.0));
    let mags = DenseMatrix::from_fn(24, 24, |i, j| m[(i, j)].abs());
    let mut g = c.benchmark_group("rank_24x24");
    g.bench_function("elimination", |b| b.iter(|| numerical_rank(black_box(&m), &RankConfig::default())));
    g.bench_function("graded", |b| b.iter(|| graded_rank(black_box(&m), &mags, 1e-8)));
    g.finish();
}

pub fn recovery(c: &mut Criterion) {
    let mut g = c.benchmark_group("recovery");
    g.sample_size(10);
    let tree = gen_tree_model(2048, 5, 0.3, 0.8, 4).unwrap();
    let to = tree.oracle().unwrap();
    let cfg = CentralityConfig::for_failure_probability(2048, 0.1, 4).unwrap();
    g.bench_function("tree/2048", |b| b.iter(|| reconstruct_tree(&to, &cfg, &SeparationPredicate::default()).unwrap()));
    let sb = gen_small_block_model(400, 6, 4, 4).unwrap();
    let so = sb.oracle().unwrap();
    let scfg = BlockRecoveryConfig::for_failure_probability(400, 4, 6, 0.1, 4).unwrap();
    g.bench_function("small_block/400", |b| b.iter(|| reconstruct_sb(&so, &scfg).unwrap()));
    for k in [1usize, 2, 3] {
        let kt = gen_partial_ktree_model(300, k, 8, 0.8, 4).unwrap();
        let ko = kt.oracle().unwrap();
        let kcfg = SeparatorConfig::practical(300, k, 4).unwrap();
        g.bench_with_input(BenchmarkId::new("treewidth/300", k), &k, |b, _| {
            b.iter(|| main_reconstruct_report(&ko, &kcfg).unwrap())
        });
    }
    g.finish();
}
