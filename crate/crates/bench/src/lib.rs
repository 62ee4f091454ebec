//! Criterion benchmarks for the EM fit, model selection and billing replay.
//! Run with `cargo bench -p dwellcut-bench`.
