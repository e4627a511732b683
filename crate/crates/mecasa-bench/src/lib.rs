//! Benchmark-only crate; see `benches/attention.rs` for the CASA vs softmax
//! attention scaling comparison. Run with `cargo bench -p mecasa-bench`.
