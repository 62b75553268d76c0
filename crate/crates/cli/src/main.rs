//! `qikt`: synthetic data, training, evaluation, export and ablation runs.
//!
//! Exit codes: 0 success, 1 invalid flags or configuration, 2 runtime or
//! data error.

mod commands;
mod manifest;
mod options;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Arg, ArgMatches, Command};

use options::{ValidationError, Resolved};

const ABOUT: &[(&str, &str)] = &[
    ("synth", "Generate a synthetic interaction log with its true response probabilities"),
    ("train", "Cross-validate one model variant and save per-fold checkpoints"),
    ("eval", "Score trained runs on their test folds and compare them"),
    ("export", "Write per-step module outputs and KC mastery for one student"),
    ("ablate", "Cross-validate every model variant on shared folds"),
];

fn cli() -> Command {
    let mut cmd = Command::new("qikt")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Interpretable question-centric knowledge tracing")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for &(name, about) in ABOUT {
        cmd = cmd.subcommand(options::command(name, about, &commands::opts(name)));
    }
    cmd.subcommand(
        Command::new("replay")
            .about("Re-run a recorded manifest and check that every output matches")
            .arg(Arg::new("manifest").long("manifest").value_name("FILE").required(true))
            .arg(Arg::new("out").long("out").value_name("DIR").required(true)),
    )
}

enum Failure {
    Invalid(anyhow::Error),
    Runtime(anyhow::Error),
}

fn classify(e: anyhow::Error) -> Failure {
    if e.chain().any(|c| c.is::<ValidationError>()) {
        Failure::Invalid(e)
    } else {
        Failure::Runtime(e)
    }
}

fn set_jobs(config: &Resolved) {
    if let Ok(n) = config.get::<usize>("jobs") {
        // Only fails if a pool already exists, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn run(name: &str, sub: &ArgMatches) -> Result<(), Failure> {
    let mut log = String::new();
    let result = if name == "replay" {
        let manifest = PathBuf::from(sub.get_one::<String>("manifest").expect("required"));
        let out = PathBuf::from(sub.get_one::<String>("out").expect("required"));
        commands::replay(&manifest, &out, &mut log).map(drop)
    } else {
        let prepared = Resolved::from_matches(sub, &commands::opts(name))
            .and_then(|config| commands::prepare(name, config))
            .map_err(classify)?;
        set_jobs(&prepared.config);
        prepared.execute(&mut log).map(drop)
    };
    print!("{log}");
    result.map_err(classify)
}

fn main() -> ExitCode {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand required");
    match run(name, sub) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
