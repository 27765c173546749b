//! Criterion benchmarks for poroforest; see `benches/`.
