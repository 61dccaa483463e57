//! Criterion micro-benchmarks for the compute kernels and a full training
//! step live under `benches/`. This crate intentionally exports nothing;
//! run `cargo bench -p dynunet-bench` to execute the suite.
