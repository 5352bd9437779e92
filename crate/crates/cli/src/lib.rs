//! Library surface of the command-line tools, split out so the benchmark
//! harness and command implementations are callable from integration tests.

pub mod bench;
pub mod commands;
