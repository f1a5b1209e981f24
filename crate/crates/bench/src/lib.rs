//! Criterion benchmarks for `pmr-core`; see `benches/`.
