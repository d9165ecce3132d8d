//! Benchmarks for the closed loop; see `benches/`.
