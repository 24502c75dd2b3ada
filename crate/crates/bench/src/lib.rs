//! Criterion benchmarks for `sgnet-core`; run with `cargo bench -p sgnet-bench`.
