//! Criterion benchmarks for the search core live in `benches/`.
