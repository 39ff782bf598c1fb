//! Benchmark-only crate; the benchmarks live in `benches/estimator.rs` and
//! exercise the estimation hot paths at realistic panel sizes.
