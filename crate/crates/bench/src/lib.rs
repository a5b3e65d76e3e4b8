//! Criterion benchmarks for the trajlab hot paths; see `benches/`.
