//! Criterion benchmarks of the simulator live under `benches/`.
