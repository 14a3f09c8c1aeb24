use std::fmt::Write as _;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};

use super::config::{Command, RunConfig};
use crate::batcher::CorpusEntry;
use crate::contam_check::{compare_all, fingerprint_all, report_csv, ContamConfig};
use crate::error::{bail, Error, Result};
use crate::evalharness::{
    average_ranks, compute_metrics, elo_ratings, glicko2_ratings, iqm, parse_scores_csv, win_rate_matrix, Metrics,
};
use crate::infer::{fewshot_predict, predict, InferOptions, Predictions, TrainSet};
use crate::net::{ModelConfig, ModelParams};
use crate::scalefit::{excess_csv, fit_csv, fit_power_law, parse_points_csv};
use crate::ssl_tasks::{TargetMode, TaskBalance};
use crate::table_store::{
    load_csv, prepare, read_prepared, write_prepared, ColumnKind, PreparedTable, Preprocessor, RawColumn, RawTable,
};
use crate::trainer::{loss_log_csv, train, Checkpoint, TrainConfig};
use crate::TaskKind;

/// Files produced by a command, held in memory until the run succeeds.
#[derive(Debug, Default)]
pub struct Artifacts {
    pub files: Vec<(String, Vec<u8>)>,
    /// Rows processed, for the per-1000-rows timing.
    pub rows: Option<usize>,
    /// Optimizer steps, for the per-step timing.
    pub steps: Option<usize>,
}

impl Artifacts {
    fn add(&mut self, name: &str, bytes: impl Into<Vec<u8>>) {
        self.files.push((name.to_string(), bytes.into()));
    }
}

/// Keys whose values are input files or lists of input files.
const INPUT_KEYS: &[&str] = &[
    "tables",
    "corpus",
    "heldout",
    "checkpoint",
    "train",
    "test",
    "shots",
    "pool",
    "scores",
    "predictions",
    "classes",
    "truth",
    "points",
    "train_tables",
    "eval_tables",
];

/// Every input file named by the configuration, in key order.
pub fn input_paths(cfg: &RunConfig, declared: impl Fn(&str) -> bool) -> Vec<PathBuf> {
    INPUT_KEYS
        .iter()
        .filter(|k| declared(k))
        .flat_map(|k| cfg.list(k))
        .map(PathBuf::from)
        .collect()
}

pub fn execute(cfg: &RunConfig) -> Result<Artifacts> {
    match cfg.command {
        Command::Ingest => ingest(cfg),
        Command::Train => run_train(cfg),
        Command::Predict => run_predict(cfg),
        Command::Fewshot => run_fewshot(cfg),
        Command::Eval => run_eval(cfg),
        Command::ScalingFit => run_scaling_fit(cfg),
        Command::ContamCheck => run_contam(cfg),
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Pair each path in `list_key` with its target from `targets_key` (`-` or an
/// empty list for none).
fn with_targets(cfg: &RunConfig, list_key: &str, targets_key: &str) -> Result<Vec<(PathBuf, Option<String>)>> {
    let paths = cfg.list(list_key);
    let targets = cfg.list(targets_key);
    if !targets.is_empty() && targets.len() != paths.len() {
        bail!(Config, "{targets_key} has {} entries for {} {list_key}", targets.len(), paths.len());
    }
    Ok(paths
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            let t = targets.get(i).filter(|t| t.as_str() != "-").cloned();
            (PathBuf::from(p), t)
        })
        .collect())
}

fn is_prepared_file(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "tdpt")
}

fn load_prepared(path: &Path, target: Option<&str>) -> Result<PreparedTable> {
    if is_prepared_file(path) {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let t = read_prepared(BufReader::new(f))?;
        if target.is_some() {
            bail!(Config, "{}: targets of prepared tables are fixed at ingest", path.display());
        }
        Ok(t)
    } else {
        prepare(&load_csv(path, target)?)
    }
}

fn ingest(cfg: &RunConfig) -> Result<Artifacts> {
    let mut out = Artifacts::default();
    let mut summary = String::from("table,rows,cols,target,task\n");
    let mut names: Vec<String> = Vec::new();
    let mut rows = 0;
    for (path, target) in with_targets(cfg, "tables", "targets")? {
        let t = prepare(&load_csv(&path, target.as_deref())?)?;
        if names.contains(&t.source) {
            bail!(Config, "two tables are named {:?}", t.source);
        }
        let mut bytes = Vec::new();
        write_prepared(&t, &mut bytes)?;
        out.add(&format!("{}.tdpt", t.source), bytes);
        let task = t.target.as_ref().map_or("", |x| x.task.as_str());
        writeln!(summary, "{},{},{},{},{task}", t.source, t.n_rows(), t.n_cols(), target.unwrap_or_default())
            .expect("write to string");
        rows += t.n_rows();
        names.push(t.source);
    }
    out.add("ingest_summary.csv", summary);
    out.rows = Some(rows);
    Ok(out)
}

fn corpus(cfg: &RunConfig, list_key: &str, targets_key: &str) -> Result<Vec<CorpusEntry>> {
    with_targets(cfg, list_key, targets_key)?
        .iter()
        .map(|(p, t)| CorpusEntry::new(load_prepared(p, t.as_deref())?))
        .collect()
}

fn run_train(cfg: &RunConfig) -> Result<Artifacts> {
    let target_mode = match cfg.str("target_mode") {
        "ssl" => TargetMode::Ssl,
        "supervised" => TargetMode::Supervised,
        v => bail!(Config, "target_mode must be ssl or supervised, got {v:?}"),
    };
    let task_balance = match cfg.str("task_balance") {
        "equal" => TaskBalance::Equal,
        "code" => TaskBalance::Code,
        v => bail!(Config, "task_balance must be equal or code, got {v:?}"),
    };
    let tc = TrainConfig {
        learning_rate: cfg.parse("learning_rate")?,
        weight_decay: cfg.parse("weight_decay")?,
        label_smoothing: cfg.parse("label_smoothing")?,
        batch_size: cfg.parse("batch_size")?,
        context_len: cfg.parse("context_len")?,
        steps: cfg.parse("steps")?,
        seed: cfg.parse("seed")?,
        task_balance,
        target_mode,
        eval_every: cfg.parse("eval_every")?,
        eval_episodes: cfg.parse("eval_episodes")?,
        prefetch: cfg.parse("prefetch")?,
        ..TrainConfig::default()
    };
    tc.validate()?;
    let model = ModelConfig::new(cfg.parse("layers")?, cfg.parse("dim")?).with_f_max(cfg.parse("f_max")?);
    model.validate()?;
    let train_set = corpus(cfg, "corpus", "corpus_targets")?;
    let heldout = corpus(cfg, "heldout", "heldout_targets")?;
    let outcome = train(&train_set, &heldout, &model, &tc)?;
    let mut out = Artifacts::default();
    out.add("checkpoint.bin", outcome.checkpoint.to_bytes());
    out.add("loss_log.csv", loss_log_csv(&outcome.log));
    out.steps = Some(tc.steps);
    Ok(out)
}

fn load_checkpoint(cfg: &RunConfig) -> Result<ModelParams<f32>> {
    let path = PathBuf::from(cfg.str("checkpoint"));
    let f = File::open(&path).map_err(|e| Error::io(&path, e))?;
    Ok(Checkpoint::read(BufReader::new(f))?.params)
}

fn infer_options(cfg: &RunConfig) -> Result<InferOptions> {
    Ok(InferOptions {
        context_size: cfg.parse("context_size")?,
        ensembles: cfg.parse("ensembles")?,
        seed: cfg.parse("seed")?,
    })
}

/// Give `other` the training table's target column, inserting an all-missing
/// one when it is absent (unlabelled rows).
fn align_to(train: &RawTable, mut other: RawTable) -> Result<RawTable> {
    let target = train.target.clone().expect("training table has a target");
    if other.columns.iter().all(|c| c.name != target) {
        let ti = train.target_index().expect("target present");
        if other.n_cols() + 1 != train.n_cols() {
            bail!(Shape, "{}: {} columns, expected {} features", other.name, other.n_cols(), train.n_cols() - 1);
        }
        let n = other.n_rows;
        let col = match train.columns[ti].kind() {
            ColumnKind::Numeric => RawColumn::numeric(target.clone(), vec![None; n]),
            ColumnKind::Categorical => RawColumn::categorical(target.clone(), vec![None; n]),
        };
        other.columns.insert(ti, col);
    }
    other.target = Some(target);
    Ok(other)
}

fn feature_matrix(p: &PreparedTable) -> Array2<f64> {
    let t = p.target.as_ref().map(|t| t.column);
    let cols: Vec<usize> = (0..p.n_cols()).filter(|&j| Some(j) != t).collect();
    p.data.select(Axis(1), &cols)
}

struct Labelled {
    train: TrainSet,
    others: Vec<Array2<f64>>,
    /// CSV `index,value` mapping class ids to original values.
    classes: Option<String>,
}

/// Fit the pipeline on the labelled table and apply it to the others.
fn labelled_and_unlabelled(cfg: &RunConfig, train_key: &str, other_keys: &[&str]) -> Result<Labelled> {
    let target = cfg.str("target");
    let train_raw = load_csv(cfg.str(train_key), Some(target))?;
    let task = match cfg.str("task") {
        "auto" => None,
        v => Some(TaskKind::parse(v).ok_or_else(|| Error::Config(format!("task must be auto, classification or regression, got {v:?}")))?),
    };
    let pipe = Preprocessor::fit(&train_raw)?;
    let mut tr = pipe.transform(&train_raw)?;
    if let Some(t) = task {
        tr = tr.with_task(t);
    }
    let sup = tr.supervised(None)?;
    let others = other_keys
        .iter()
        .map(|k| {
            let raw = align_to(&train_raw, load_csv(cfg.str(k), None)?)?;
            Ok(feature_matrix(&pipe.transform(&raw)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let classes = (sup.task == TaskKind::Classification).then(|| {
        let enc = &tr.encoders[tr.target.as_ref().expect("target").column];
        let mut s = String::from("index,value\n");
        for (i, &code) in sup.classes.iter().enumerate() {
            let value = match enc.kind {
                ColumnKind::Categorical => enc.categories[code as usize].clone(),
                ColumnKind::Numeric => format!("{code}"),
            };
            writeln!(s, "{i},{value}").expect("write to string");
        }
        s
    });
    Ok(Labelled {
        train: TrainSet::from_supervised(&sup)?,
        others,
        classes,
    })
}

fn run_predict(cfg: &RunConfig) -> Result<Artifacts> {
    let params = load_checkpoint(cfg)?;
    let opts = infer_options(cfg)?;
    let data = labelled_and_unlabelled(cfg, "train", &["test"])?;
    let preds = predict(&params, &data.train, &data.others[0], &opts)?;
    let mut out = Artifacts::default();
    out.add("predictions.csv", preds.to_csv());
    if let Some(c) = data.classes {
        out.add("classes.csv", c);
    }
    out.rows = Some(preds.len());
    Ok(out)
}

fn run_fewshot(cfg: &RunConfig) -> Result<Artifacts> {
    let params = load_checkpoint(cfg)?;
    let opts = infer_options(cfg)?;
    let data = labelled_and_unlabelled(cfg, "shots", &["pool", "test"])?;
    let (pool, test) = (&data.others[0], &data.others[1]);
    let res = fewshot_predict(&params, &data.train, pool, test, &opts)?;
    let mut out = Artifacts::default();
    out.add("stage1.csv", Predictions::Classification(res.stage1).to_csv());
    out.add("stage2.csv", Predictions::Classification(res.stage2).to_csv());
    let mut sel = String::from("pool_row\n");
    for r in &res.selected {
        writeln!(sel, "{r}").expect("write to string");
    }
    out.add("pseudo_labels.csv", sel);
    if let Some(c) = data.classes {
        out.add("classes.csv", c);
    }
    out.rows = Some(pool.nrows() + test.nrows());
    Ok(out)
}

fn parse_predictions(text: &str) -> Result<Predictions> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    let rows: Vec<Vec<f64>> = lines
        .map(|l| {
            l.split(',')
                .skip(1)
                .map(|v| v.trim().parse::<f64>().map_err(|e| Error::Data(format!("predictions: {e}"))))
                .collect()
        })
        .collect::<Result<_>>()?;
    if rows.iter().any(|r| r.len() + 1 != header.len()) {
        bail!(Data, "predictions: ragged rows");
    }
    match header[..] {
        ["row_id", "prediction"] => Ok(Predictions::Regression(rows.into_iter().map(|r| r[0]).collect())),
        ["row_id", ref rest @ ..] if !rest.is_empty() && rest.iter().all(|h| h.starts_with("p_")) => {
            let c = rest.len();
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            Ok(Predictions::Classification(
                Array2::from_shape_vec((rows.len(), c), flat).expect("rectangular"),
            ))
        }
        _ => bail!(Data, "predictions: unrecognized header {header:?}"),
    }
}

fn truth_values(cfg: &RunConfig, classification: bool) -> Result<Vec<f64>> {
    let target = cfg.str("target");
    if target.is_empty() {
        bail!(Config, "eval with predictions needs target");
    }
    let raw = load_csv(cfg.str("truth"), Some(target))?;
    let col = &raw.columns[raw.target_index().expect("target present")];
    let strings: Vec<Option<String>> = match &col.values {
        crate::table_store::RawValues::Numeric(v) => v.iter().map(|x| x.map(|x| format!("{x}"))).collect(),
        crate::table_store::RawValues::Categorical(v) => v.clone(),
    };
    let class_map: Option<Vec<String>> = match (classification, cfg.str("classes")) {
        (true, p) if !p.is_empty() => Some(
            read_text(Path::new(p))?
                .lines()
                .skip(1)
                .filter(|l| !l.trim().is_empty())
                .map(|l| l.split_once(',').map(|x| x.1.to_string()).unwrap_or_default())
                .collect(),
        ),
        _ => None,
    };
    strings
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            let Some(s) = s else { bail!(Data, "truth row {i} is missing its target") };
            match &class_map {
                Some(m) => match m.iter().position(|c| *c == s) {
                    Some(k) => Ok(k as f64),
                    None => bail!(Data, "truth row {i}: class {s:?} not among predicted classes"),
                },
                None => s.parse::<f64>().map_err(|e| Error::Data(format!("truth row {i}: {e}"))),
            }
        })
        .collect()
}

fn run_eval(cfg: &RunConfig) -> Result<Artifacts> {
    let mut out = Artifacts::default();
    let (pred_path, scores_path) = (cfg.str("predictions"), cfg.str("scores"));
    if pred_path.is_empty() && scores_path.is_empty() {
        bail!(Config, "eval needs predictions (with truth) or scores");
    }
    if !pred_path.is_empty() {
        let preds = parse_predictions(&read_text(Path::new(pred_path))?)?;
        let truth = truth_values(cfg, matches!(preds, Predictions::Classification(_)))?;
        let m: Metrics = compute_metrics(&preds, &truth)?;
        let mut s = String::from("method,dataset,metric,value\n");
        for (name, v) in m.named() {
            writeln!(s, "{},{},{name},{v}", cfg.str("method"), cfg.str("dataset")).expect("write to string");
        }
        out.add("metrics.csv", s);
        out.rows = Some(truth.len());
    }
    if !scores_path.is_empty() {
        let tables = parse_scores_csv(&read_text(Path::new(scores_path))?)?;
        let seed: u64 = cfg.parse("seed")?;
        let iters: usize = cfg.parse("bootstrap_iters")?;
        let perms: usize = cfg.parse("permutations")?;
        let mut ranks = String::from("metric,method,mean_rank,ci_lo,ci_hi\n");
        let mut wins = String::from("metric,method,opponent,win_rate\n");
        let mut elo = String::from("metric,method,rating,ci_lo,ci_hi\n");
        let mut glicko = String::from("metric,method,rating,rd,volatility\n");
        let mut iqms = String::from("metric,method,iqm,ci_lo,ci_hi\n");
        for t in &tables {
            let metric = &t.metric;
            for r in average_ranks(t, iters, seed)? {
                writeln!(ranks, "{metric},{},{},{},{}", r.method, r.rank.estimate, r.rank.lo, r.rank.hi).expect("write");
            }
            for (i, row) in win_rate_matrix(t)?.iter().enumerate() {
                for (j, w) in row.iter().enumerate() {
                    if let Some(w) = w {
                        writeln!(wins, "{metric},{},{},{w}", t.methods[i], t.methods[j]).expect("write");
                    }
                }
            }
            for e in elo_ratings(t, perms, seed)? {
                writeln!(elo, "{metric},{},{},{},{}", e.method, e.rating.estimate, e.rating.lo, e.rating.hi).expect("write");
            }
            for (m, s) in glicko2_ratings(t)? {
                writeln!(glicko, "{metric},{m},{},{},{}", s.rating, s.rd, s.volatility).expect("write");
            }
            for (m, row) in t.methods.iter().zip(&t.scores) {
                let vals: Vec<f64> = row.iter().flatten().copied().collect();
                if vals.len() >= 4 {
                    let q = iqm(&vals, iters, seed)?;
                    writeln!(iqms, "{metric},{m},{},{},{}", q.estimate, q.lo, q.hi).expect("write");
                }
            }
        }
        out.add("ranks.csv", ranks);
        out.add("win_rates.csv", wins);
        out.add("elo.csv", elo);
        out.add("glicko2.csv", glicko);
        out.add("iqm.csv", iqms);
    }
    Ok(out)
}

fn run_scaling_fit(cfg: &RunConfig) -> Result<Artifacts> {
    let points = parse_points_csv(&read_text(Path::new(cfg.str("points")))?)?;
    let fit = fit_power_law(&points)?;
    let mut out = Artifacts::default();
    out.add("fit.csv", fit_csv(&fit));
    out.add("excess.csv", excess_csv(&fit, &points));
    out.rows = Some(points.len());
    Ok(out)
}

fn run_contam(cfg: &RunConfig) -> Result<Artifacts> {
    let load = |list: &str, targets: &str| -> Result<Vec<RawTable>> {
        with_targets(cfg, list, targets)?
            .iter()
            .map(|(p, t)| load_csv(p, t.as_deref()))
            .collect()
    };
    let train_tables = load("train_tables", "train_targets")?;
    let eval_tables = load("eval_tables", "eval_targets")?;
    let cc = ContamConfig {
        tolerance: cfg.parse("tolerance")?,
        threshold: cfg.parse("threshold")?,
    };
    let reports = compare_all(&fingerprint_all(&train_tables), &fingerprint_all(&eval_tables), &cc)?;
    let mut out = Artifacts::default();
    out.add("report.csv", report_csv(&reports));
    out.rows = Some(train_tables.iter().chain(&eval_tables).map(|t| t.n_rows).sum());
    Ok(out)
}
