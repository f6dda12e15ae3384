//! Criterion benchmarks for the compbind kernels live under `benches/`.
