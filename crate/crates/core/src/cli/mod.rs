//! Command-line driver: one subcommand per pipeline stage, configured by a
//! flat `key = value` file plus `--set key=value` overrides.
//!
//! Outputs are buffered and written to `output_dir` only when the command
//! succeeds, together with `manifest.txt`: the resolved configuration (usable
//! as a config file to re-run), input digests and timings as comments.

mod commands;
mod config;

pub use commands::Artifacts;
pub use config::{parse_pairs, Command, RunConfig};

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "tabdpt", version, about = "Tabular in-context learning: pre-training, inference and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Debug, Subcommand)]
enum Sub {
    /// Prepare CSV tables into the binary table format.
    Ingest(RunArgs),
    /// Pre-train a model on a corpus of tables.
    Train(RunArgs),
    /// Predict test rows from a labelled table.
    Predict(RunArgs),
    /// Two-stage few-shot prediction with pseudo-labelling.
    Fewshot(RunArgs),
    /// Compute metrics, ranks, win rates and ratings.
    Eval(RunArgs),
    /// Fit the joint parameter/data power law.
    #[command(name = "scaling-fit")]
    ScalingFit(RunArgs),
    /// Flag train/eval table pairs that look like the same data.
    #[command(name = "contam-check")]
    ContamCheck(RunArgs),
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    /// Flat key = value configuration file.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a configuration key.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Worker threads (0 = all cores); same as --set threads=N.
    #[arg(long)]
    threads: Option<usize>,
}

impl Sub {
    fn split(self) -> (Command, RunArgs) {
        match self {
            Sub::Ingest(a) => (Command::Ingest, a),
            Sub::Train(a) => (Command::Train, a),
            Sub::Predict(a) => (Command::Predict, a),
            Sub::Fewshot(a) => (Command::Fewshot, a),
            Sub::Eval(a) => (Command::Eval, a),
            Sub::ScalingFit(a) => (Command::ScalingFit, a),
            Sub::ContamCheck(a) => (Command::ContamCheck, a),
        }
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Write every file or none: each lands under a temporary name first and
/// anything already written is removed on failure.
fn commit(dir: &Path, files: &[(String, Vec<u8>)]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut done: Vec<PathBuf> = Vec::new();
    for (name, bytes) in files {
        let dest = dir.join(name);
        let tmp = dir.join(format!(".{name}.partial"));
        let res = std::fs::write(&tmp, bytes).and_then(|_| std::fs::rename(&tmp, &dest));
        if let Err(e) = res {
            let _ = std::fs::remove_file(&tmp);
            for p in &done {
                let _ = std::fs::remove_file(p);
            }
            return Err(Error::io(dest, e));
        }
        done.push(dest);
    }
    Ok(())
}

/// Resolve the configuration, run the command and write its outputs.
pub fn run(command: Command, config_text: Option<&str>, overrides: &[String]) -> Result<PathBuf> {
    let cfg = RunConfig::resolve(command, config_text, overrides)?;
    let threads: usize = cfg.parse("threads")?;
    if threads > 0 {
        // the global pool can only be configured once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    let inputs = commands::input_paths(&cfg, |k| cfg.has(k));
    let mut digests = Vec::with_capacity(inputs.len());
    for p in &inputs {
        digests.push((p.clone(), sha256_file(p)?));
    }
    let start = Instant::now();
    let mut artifacts = commands::execute(&cfg)?;
    let secs = start.elapsed().as_secs_f64();

    let mut manifest = cfg.to_text();
    for (p, d) in &digests {
        writeln!(manifest, "# input {} sha256 {d}", p.display()).expect("write to string");
    }
    for (name, bytes) in &artifacts.files {
        writeln!(manifest, "# output {name} sha256 {}", hex::encode(Sha256::digest(bytes))).expect("write to string");
    }
    writeln!(manifest, "# seconds {secs:.6}").expect("write to string");
    if let Some(rows) = artifacts.rows.filter(|&r| r > 0) {
        writeln!(manifest, "# seconds_per_1000_rows {:.6}", secs * 1000.0 / rows as f64).expect("write to string");
    }
    if let Some(steps) = artifacts.steps.filter(|&s| s > 0) {
        writeln!(manifest, "# seconds_per_step {:.6}", secs / steps as f64).expect("write to string");
    }
    artifacts.files.push(("manifest.txt".to_string(), manifest.into_bytes()));
    let dir = PathBuf::from(cfg.str("output_dir"));
    commit(&dir, &artifacts.files)?;
    Ok(dir)
}

/// Parse arguments, run, and return the process exit code. Errors are printed
/// to stderr as a single `error[kind]: message` line.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("error[config]: {first}");
            return 2;
        }
    };
    let (command, mut args) = cli.command.split();
    if let Some(t) = args.threads {
        args.set.push(format!("threads={t}"));
    }
    let result = match &args.config {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| Error::io(p, e))
            .and_then(|text| run(command, Some(&text), &args.set)),
        None => run(command, None, &args.set),
    };
    match result {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("error[{}]: {}", e.kind(), e.to_string().replace('\n', " "));
            e.exit_code()
        }
    }
}
