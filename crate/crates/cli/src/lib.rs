//! Benchmark harness and output formatting for the `hiermatch` CLI.

pub mod bench;
pub mod output;
