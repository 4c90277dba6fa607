//! `qrel`: the question-relevance pipeline as subcommands.
//!
//! Exit codes: 0 success, 2 configuration error (including bad flags),
//! 3 data error, 4 numeric failure.

mod args;
mod config;
mod data;
mod inputs;
mod learn;
mod run;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use config::{ConfigError, RunConfig};
use run::Run;

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<qrel::Error>() {
            return match e {
                qrel::Error::Numeric(_) => 4,
                qrel::Error::InvalidArgument(_) => 2,
                _ => 3,
            };
        }
        if cause.is::<std::io::Error>() {
            return 3;
        }
    }
    1
}

fn execute(command: &Command) -> anyhow::Result<()> {
    let common = command.common();
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    command.apply(&mut cfg);
    cfg.finish()?;
    if let Some(n) = cfg.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| config::config_error(format!("cannot start {n} workers: {e}")))?;
    }
    let mut run = Run::new(command.name(), cfg)?;
    match command {
        Command::Tag(_) => data::tag(&mut run)?,
        Command::Featurize(_) => data::featurize(&mut run)?,
        Command::Pca(_) => data::pca(&mut run)?,
        Command::Mine(_) => data::mine(&mut run)?,
        Command::BuildDataset(_) => data::build(&mut run)?,
        Command::Stats(_) => data::stats(&mut run)?,
        Command::ExportFeatures(_) => data::export(&mut run)?,
        Command::Train(a) => learn::train(&mut run, a.model)?,
        Command::Evaluate(a) => learn::evaluate(&mut run, a.name.as_deref())?,
        Command::Predict(_) => learn::predict(&mut run)?,
        Command::Report(a) => learn::merge_reports(&mut run, &a.results)?,
    }
    run.finish()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_error_kind() {
        assert_eq!(exit_code(&config::config_error("x")), 2);
        assert_eq!(exit_code(&qrel::Error::Numeric("nan".into()).into()), 4);
        assert_eq!(exit_code(&qrel::Error::InvalidArgument("k".into()).into()), 2);
        let io = qrel::Error::Io {
            path: "features.bin".into(),
            source: std::io::Error::from(std::io::ErrorKind::NotFound),
        };
        assert_eq!(exit_code(&anyhow::Error::from(io).context("loading")), 3);
    }
}
