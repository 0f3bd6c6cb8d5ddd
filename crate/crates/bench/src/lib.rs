//! Criterion benchmarks for the headforge pipeline; see `benches/pipeline.rs`.
