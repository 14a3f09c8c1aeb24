//! Method comparison: per-dataset metrics, score tables, rank aggregation,
//! interquartile means, win rates and duel ratings.

mod ranks;
mod ratings;

pub use ranks::{average_ranks, iqm, rank_row, win_rate_matrix, Interval, RankSummary};
pub use ratings::{elo_ratings, glicko2_ratings, glicko2_update, EloSummary, RatingState, ELO_K, GLICKO_TAU};

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;

use crate::error::{bail, Result};
use crate::infer::Predictions;
use crate::seeded_rng;

/// Per-dataset quality measures. Entries that do not apply to the task, or are
/// undefined for the data, are `None`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Metrics {
    pub accuracy: Option<f64>,
    pub auc: Option<f64>,
    pub correlation: Option<f64>,
    pub r2: Option<f64>,
}

impl Metrics {
    /// `(name, value)` for every defined metric.
    pub fn named(&self) -> Vec<(&'static str, f64)> {
        [
            ("accuracy", self.accuracy),
            ("auc", self.auc),
            ("correlation", self.correlation),
            ("r2", self.r2),
        ]
        .into_iter()
        .filter_map(|(n, v)| v.map(|v| (n, v)))
        .collect()
    }
}

/// Probability that a positive outscores a negative, ties counting one half.
/// `None` unless both groups are non-empty.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), positive.len());
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // midranks over tie groups
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += mid * order[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Some((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// Metrics of `predictions` against `targets` (class ids for classification).
pub fn compute_metrics(predictions: &Predictions, targets: &[f64]) -> Result<Metrics> {
    if predictions.len() != targets.len() {
        bail!(Shape, "{} predictions for {} targets", predictions.len(), targets.len());
    }
    match predictions {
        Predictions::Classification(p) => {
            let c = p.ncols();
            let mut labels = Vec::with_capacity(targets.len());
            for &t in targets {
                if t < 0.0 || t.fract() != 0.0 || t as usize >= c {
                    bail!(Data, "target {t} is not a class id below {c}");
                }
                labels.push(t as usize);
            }
            for row in p.rows() {
                if (row.sum() - 1.0).abs() > 1e-6 || row.iter().any(|v| !(0.0..=1.0 + 1e-12).contains(v)) {
                    bail!(Data, "classification predictions must be probability vectors");
                }
            }
            let hits = predictions
                .labels()
                .expect("classification")
                .iter()
                .zip(&labels)
                .filter(|(a, b)| a == b)
                .count();
            let accuracy = (!labels.is_empty()).then(|| hits as f64 / labels.len() as f64);
            let per_class: Vec<f64> = (0..c)
                .filter_map(|k| {
                    let pos: Vec<bool> = labels.iter().map(|&l| l == k).collect();
                    binary_auc(&p.column(k).to_vec(), &pos)
                })
                .collect();
            let auc = (!per_class.is_empty()).then(|| per_class.iter().sum::<f64>() / per_class.len() as f64);
            Ok(Metrics { accuracy, auc, ..Metrics::default() })
        }
        Predictions::Regression(v) => {
            let correlation = if v.len() >= 2 { crate::stats::pearson(v, targets) } else { None };
            let r2 = crate::stats::mean(targets).and_then(|m| {
                let ss_tot: f64 = targets.iter().map(|t| (t - m) * (t - m)).sum();
                let ss_res: f64 = targets.iter().zip(v).map(|(t, p)| (t - p) * (t - p)).sum();
                (ss_tot > 0.0).then(|| 1.0 - ss_res / ss_tot)
            });
            Ok(Metrics { correlation, r2, ..Metrics::default() })
        }
    }
}

/// Whether larger values of a metric are better.
pub fn higher_is_better(metric: &str) -> bool {
    !matches!(metric, "loss" | "log_loss" | "cross_entropy" | "rmse" | "mse" | "mae" | "time" | "seconds")
}

/// Scores of several methods on several datasets for one metric.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreTable {
    pub metric: String,
    pub higher_is_better: bool,
    pub methods: Vec<String>,
    pub datasets: Vec<String>,
    /// `methods x datasets`; `None` where a method was not run.
    pub scores: Vec<Vec<Option<f64>>>,
}

impl ScoreTable {
    pub fn new(
        metric: impl Into<String>,
        higher_is_better: bool,
        methods: Vec<String>,
        datasets: Vec<String>,
        scores: Vec<Vec<Option<f64>>>,
    ) -> Result<Self> {
        if scores.len() != methods.len() || scores.iter().any(|r| r.len() != datasets.len()) {
            bail!(Shape, "score matrix must be {} x {}", methods.len(), datasets.len());
        }
        if scores.iter().flatten().flatten().any(|v| !v.is_finite()) {
            bail!(Data, "scores must be finite");
        }
        Ok(ScoreTable {
            metric: metric.into(),
            higher_is_better,
            methods,
            datasets,
            scores,
        })
    }

    /// Complete table from a dense `methods x datasets` matrix.
    pub fn dense(metric: &str, higher_is_better: bool, scores: &[Vec<f64>]) -> Result<Self> {
        let n_ds = scores.first().map_or(0, Vec::len);
        ScoreTable::new(
            metric,
            higher_is_better,
            (0..scores.len()).map(|i| format!("m{i}")).collect(),
            (0..n_ds).map(|j| format!("d{j}")).collect(),
            scores.iter().map(|r| r.iter().map(|&v| Some(v)).collect()).collect(),
        )
    }

    /// Scores oriented so that larger is better.
    pub(crate) fn oriented(&self, m: usize, d: usize) -> Option<f64> {
        self.scores[m][d].map(|v| if self.higher_is_better { v } else { -v })
    }

    /// Datasets on which every method has a score.
    pub fn complete_datasets(&self) -> Vec<usize> {
        (0..self.datasets.len())
            .filter(|&d| self.scores.iter().all(|r| r[d].is_some()))
            .collect()
    }
}

/// Parse CSV `method,dataset,metric,value` into one table per metric, in order
/// of first appearance. Methods and datasets keep their first-seen order.
pub fn parse_scores_csv(text: &str) -> Result<Vec<ScoreTable>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines.next().map(|h| h.split(',').map(str::trim).collect()).unwrap_or_default();
    if header != ["method", "dataset", "metric", "value"] {
        bail!(Data, "expected header method,dataset,metric,value");
    }
    let mut metrics: Vec<String> = Vec::new();
    let mut methods: Vec<String> = Vec::new();
    let mut datasets: Vec<String> = Vec::new();
    let mut values: BTreeMap<(usize, usize, usize), f64> = BTreeMap::new();
    let intern = |list: &mut Vec<String>, s: &str| match list.iter().position(|x| x == s) {
        Some(i) => i,
        None => {
            list.push(s.to_string());
            list.len() - 1
        }
    };
    for (i, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 4 {
            bail!(Data, "line {}: expected 4 fields", i + 2);
        }
        let v: f64 = f[3]
            .parse()
            .map_err(|e| crate::Error::Data(format!("line {}: {e}", i + 2)))?;
        let key = (intern(&mut metrics, f[2]), intern(&mut methods, f[0]), intern(&mut datasets, f[1]));
        if values.insert(key, v).is_some() {
            bail!(Data, "line {}: duplicate score for {}/{}/{}", i + 2, f[0], f[1], f[2]);
        }
    }
    metrics
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let scores = (0..methods.len())
                .map(|m| (0..datasets.len()).map(|d| values.get(&(k, m, d)).copied()).collect())
                .collect();
            ScoreTable::new(name.clone(), higher_is_better(name), methods.clone(), datasets.clone(), scores)
        })
        .collect()
}

pub fn scores_csv(tables: &[ScoreTable]) -> String {
    let mut out = String::from("method,dataset,metric,value\n");
    for t in tables {
        for (m, row) in t.scores.iter().enumerate() {
            for (d, v) in row.iter().enumerate() {
                if let Some(v) = v {
                    writeln!(out, "{},{},{},{v}", t.methods[m], t.datasets[d], t.metric).expect("write to string");
                }
            }
        }
    }
    out
}

/// Independent seeds for parallel bootstrap iterations.
pub(crate) fn iteration_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut rng = seeded_rng(seed);
    (0..n).map(|_| rng.random()).collect()
}
