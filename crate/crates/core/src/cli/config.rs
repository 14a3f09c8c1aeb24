//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{bail, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Command {
    Ingest,
    Train,
    Predict,
    Fewshot,
    Eval,
    ScalingFit,
    ContamCheck,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::Ingest,
        Command::Train,
        Command::Predict,
        Command::Fewshot,
        Command::Eval,
        Command::ScalingFit,
        Command::ContamCheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::Train => "train",
            Command::Predict => "predict",
            Command::Fewshot => "fewshot",
            Command::Eval => "eval",
            Command::ScalingFit => "scaling-fit",
            Command::ContamCheck => "contam-check",
        }
    }

    /// Accepted keys with their defaults; `None` marks a required key.
    fn keys(self) -> &'static [(&'static str, Option<&'static str>)] {
        match self {
            Command::Ingest => &[("tables", None), ("targets", Some(""))],
            Command::Train => &[
                ("corpus", None),
                ("corpus_targets", Some("")),
                ("heldout", Some("")),
                ("heldout_targets", Some("")),
                ("layers", Some("3")),
                ("dim", Some("32")),
                ("f_max", Some("100")),
                ("learning_rate", Some("0.0005")),
                ("weight_decay", Some("0.05")),
                ("label_smoothing", Some("0.1")),
                ("batch_size", Some("16")),
                ("context_len", Some("64")),
                ("steps", Some("2000")),
                ("target_mode", Some("ssl")),
                ("task_balance", Some("equal")),
                ("eval_every", Some("100")),
                ("eval_episodes", Some("16")),
                ("prefetch", Some("4")),
            ],
            Command::Predict => &[
                ("checkpoint", None),
                ("train", None),
                ("test", None),
                ("target", None),
                ("task", Some("auto")),
                ("context_size", Some("2048")),
                ("ensembles", Some("8")),
            ],
            Command::Fewshot => &[
                ("checkpoint", None),
                ("shots", None),
                ("pool", None),
                ("test", None),
                ("target", None),
                ("task", Some("auto")),
                ("context_size", Some("2048")),
                ("ensembles", Some("8")),
            ],
            Command::Eval => &[
                ("scores", Some("")),
                ("predictions", Some("")),
                ("classes", Some("")),
                ("truth", Some("")),
                ("target", Some("")),
                ("method", Some("model")),
                ("dataset", Some("dataset")),
                ("bootstrap_iters", Some("1000")),
                ("permutations", Some("100")),
            ],
            Command::ScalingFit => &[("points", None)],
            Command::ContamCheck => &[
                ("train_tables", None),
                ("eval_tables", None),
                ("train_targets", Some("")),
                ("eval_targets", Some("")),
                ("tolerance", Some("0.001")),
                ("threshold", Some("0.8")),
            ],
        }
    }
}

impl FromStr for Command {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match Command::ALL.iter().find(|c| c.name() == s) {
            Some(c) => Ok(*c),
            None => bail!(Config, "unknown command {s:?}"),
        }
    }
}

const COMMON_KEYS: &[(&str, Option<&str>)] = &[("output_dir", None), ("seed", Some("0")), ("threads", Some("0"))];

/// Parse `key = value` lines. `#` starts a comment line; blank lines are skipped.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!(Config, "line {}: expected key = value", i + 1);
        };
        let k = k.trim();
        if k.is_empty() {
            bail!(Config, "line {}: empty key", i + 1);
        }
        if out.iter().any(|(x, _)| x == k) {
            bail!(Config, "line {}: duplicate key {k:?}", i + 1);
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Resolved configuration for one command: defaults, then file, then overrides.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn resolve(command: Command, file: Option<&str>, overrides: &[String]) -> Result<Self> {
        let allowed: Vec<(&str, Option<&str>)> = COMMON_KEYS.iter().chain(command.keys()).copied().collect();
        let mut values = BTreeMap::new();
        for (k, d) in &allowed {
            if let Some(d) = d {
                values.insert(k.to_string(), d.to_string());
            }
        }
        let mut set = |k: &str, v: &str, origin: &str| -> Result<()> {
            if k == "command" {
                if v != command.name() {
                    bail!(Config, "{origin} is for command {v:?}, not {:?}", command.name());
                }
                return Ok(());
            }
            if !allowed.iter().any(|(a, _)| *a == k) {
                bail!(Config, "unknown key {k:?} for {} ({origin})", command.name());
            }
            values.insert(k.to_string(), v.to_string());
            Ok(())
        };
        if let Some(text) = file {
            for (k, v) in parse_pairs(text)? {
                set(&k, &v, "config file")?;
            }
        }
        for o in overrides {
            let Some((k, v)) = o.split_once('=') else {
                bail!(Config, "override {o:?} is not key=value");
            };
            set(k.trim(), v.trim(), "--set")?;
        }
        if let Some((k, _)) = allowed.iter().find(|(k, _)| !values.contains_key(*k)) {
            bail!(Config, "missing required key {k:?} for {}", command.name());
        }
        Ok(RunConfig { command, values })
    }

    pub fn has(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    pub fn str(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("undeclared key {key}"))
    }

    /// Comma-separated list; empty entries dropped.
    pub fn list(&self, key: &str) -> Vec<String> {
        self.str(key).split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.str(key);
        v.parse().map_err(|e| crate::Error::Config(format!("{key} = {v:?}: {e}")))
    }

    /// Configuration text that re-runs the same command.
    pub fn to_text(&self) -> String {
        let mut out = format!("command = {}\n", self.command.name());
        for (k, v) in &self.values {
            writeln!(out, "{k} = {v}").expect("write to string");
        }
        out
    }
}
