//! Benchmarks for the hot paths of `lexcon-core`; see `benches/`.
