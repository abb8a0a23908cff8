//! Criterion benchmarks for the analysis chain and the gain methods; run
//! with `cargo bench -p maskeq-bench`.
