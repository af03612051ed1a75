//! Criterion benchmarks for the extraction and MSE routines; see `benches/`.
