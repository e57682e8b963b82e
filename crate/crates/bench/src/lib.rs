//! Benchmarks for the DSP hot paths; see `benches/pipeline.rs`.
