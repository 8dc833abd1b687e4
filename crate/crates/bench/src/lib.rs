//! Criterion benchmarks for kernel evaluation, density gathering, particle
//! transport and remapping; see `benches/transport.rs`.
//!
//! Run with `cargo bench -p tparticles-bench`.
