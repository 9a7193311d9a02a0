//! Criterion benchmarks for dynaseg; see `benches/pipeline.rs`.
