//! Criterion benchmarks; run with `cargo bench -p adhoc-csi-bench`.
