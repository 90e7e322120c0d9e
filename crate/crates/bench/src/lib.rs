//! Benchmarks for the optimization pipeline live in `benches/`.
