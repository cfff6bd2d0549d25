//! Benchmarks for `ste-core` live in `benches/`.
