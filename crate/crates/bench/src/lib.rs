//! Benchmarks for the numeric kernels live under `benches/`.
