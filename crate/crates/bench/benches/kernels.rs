use criterion::{criterion_group, criterion_main};

criterion_group!(
    benches,
    covquery_bench::oracle_queries,
    covquery_bench::centrality,
    covquery_bench::rank,
    covquery_bench::recovery,
);
criterion_main!(benches);
