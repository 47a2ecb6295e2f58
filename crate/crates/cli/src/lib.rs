//! Command-line front end and HTTP service for `attriq-core`.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod server;

use std::io::Write;

use args::{Cli, Command, IndexCommand};
use config::Config;
use error::CliError;

/// Runs one parsed invocation, writing results to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    match cli.command {
        Command::Index(IndexCommand::Build(a)) => commands::index_build(a, &config, out),
        Command::Index(IndexCommand::Inspect(a)) => commands::index_inspect(a, &config, out),
        Command::Generate(a) => commands::generate_cmd(a, &config, out),
        Command::Query(a) => commands::query_cmd(a, &config, out),
        Command::Eval(a) => commands::eval_cmd(a, &config, out),
        Command::Serve(a) => commands::serve_cmd(a, &config),
    }
}
