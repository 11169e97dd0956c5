//! Benchmarks for the SGSG engine live in `benches/`.
