//! Benchmark harness and command-line front end for the all-reduce runtime.

pub mod bench;
pub mod cli;
pub mod demo;
pub mod error;
pub mod launcher;
pub mod report;

pub use bench::{append_csv, read_csv, run_rank, BenchConfig, BenchRow, BENCH_HEADER};
pub use demo::{run_demo, DemoConfig, DemoResult, DEMO_PARAMS};
pub use error::{BenchError, Result};
pub use report::{summarize, write_summary, SummaryRow};
