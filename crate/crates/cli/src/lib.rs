//! The `lutllm` command line: quantization, inference, the analytic model
//! and the cycle simulator behind one binary.

pub mod args;
pub mod commands;

use std::io::Write;

use anyhow::Result;

use crate::args::{Cli, Command};

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Init(a) => commands::init(a, out),
        Command::Quantize(a) => commands::quantize(a, out),
        Command::Infer(a) => commands::infer(a, out),
        Command::Perf(a) => commands::perf(a, out),
        Command::Simulate(a) => commands::simulate(a, out),
    }
}
