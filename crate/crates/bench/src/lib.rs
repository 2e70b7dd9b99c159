//! Criterion benchmarks for schedule evaluation, window planning and the
//! search loop. Run with `cargo bench -p layerfuse-bench`.
