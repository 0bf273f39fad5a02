//! `spixel`: train, decode, evaluate and visualize superpixel models.

mod args;
mod commands;
mod report;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{BalCommand, Cli, Command};
use report::{emit, emit_error};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
            let _ = e.print();
            return ExitCode::from(1);
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            emit(&[("status", "error"), ("class", "usage"), ("kind", "arguments"), ("exit", "1"), ("message", first)]);
            return ExitCode::from(1);
        }
    };
    let (name, outcome) = match &cli.command {
        Command::Train(a) => ("train", commands::train_cmd(a)),
        Command::Infer(a) => ("infer", commands::infer_cmd(a)),
        Command::Eval(a) => ("eval", commands::eval_cmd(a)),
        Command::Bal(BalCommand::Encode(a)) => ("bal-encode", commands::bal_encode_cmd(a)),
        Command::Csf(a) => ("csf", commands::csf_cmd(a)),
        Command::Viz(a) => ("viz", commands::viz_cmd(a)),
        Command::Synth(a) => ("synth", commands::synth_cmd(a)),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            emit_error(name, &e);
            ExitCode::from(report::exit_code(e.class()))
        }
    }
}
