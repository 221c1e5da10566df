//! Criterion benchmarks for the data market solver live under `benches/`.
