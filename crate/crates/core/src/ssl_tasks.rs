//! Self-supervised episode generation.
//!
//! An episode picks an anchor row and a target column, retrieves the anchor's
//! neighbourhood with the target coordinate masked, turns the retrieved target
//! values into a regression or classification task, and keeps a random,
//! shuffled subset of the remaining columns.

use ndarray::{Array2, Axis};
use rand::seq::{index, SliceRandom};
use rand::Rng;

use crate::error::{bail, Result};
use crate::nn_index::NeighborIndex;
use crate::table_store::PreparedTable;
use crate::TaskKind;

/// Columns with more distinct values than this may become regression targets.
pub const CLS_THRESHOLD: usize = 10;
/// Probability that a high-cardinality column is binned into classes.
pub const CLASSIFICATION_PROB: f64 = 0.3;

/// How the regression/classification mix of episodes is controlled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum TaskBalance {
    /// High-cardinality columns become regression 70% of the time.
    Code,
    /// Draw the task kind 50/50 first, then reject columns that cannot serve it.
    #[default]
    Equal,
}

/// Which column supplies the episode target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum TargetMode {
    /// Any column, chosen at random.
    #[default]
    Ssl,
    /// Always the table's designated target (no self-supervision).
    Supervised,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct EpisodeConfig {
    pub task_balance: TaskBalance,
    pub target_mode: TargetMode,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedTarget {
    pub targets: Vec<f64>,
    pub task_kind: TaskKind,
    /// Number of classes present (classification), 0 for regression.
    pub num_classes: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SslEpisode {
    /// `K x f` retained features, rows in retrieval order.
    pub features: Array2<f64>,
    pub targets: Vec<f64>,
    pub task_kind: TaskKind,
    pub num_classes: usize,
    pub source_col: usize,
    /// Table column of each retained feature, in episode order.
    pub feature_perm: Vec<usize>,
    /// Retrieved table rows.
    pub rows: Vec<usize>,
}

/// Random subset of `0..f` whose size is uniform on `[max(f/2, 1), f]`, in random order.
pub fn choose_feature_subset<R: Rng + ?Sized>(f: usize, rng: &mut R) -> Vec<usize> {
    if f == 0 {
        return Vec::new();
    }
    let size = rng.random_range((f / 2).max(1)..=f);
    let mut picked = index::sample(rng, f, size).into_vec();
    picked.shuffle(rng);
    picked
}

/// Sorted distinct values under exact equality.
fn distinct_sorted(values: &[f64]) -> Vec<f64> {
    let mut d = values.to_vec();
    d.sort_by(f64::total_cmp);
    d.dedup();
    d
}

/// Class of each value = number of boundaries strictly below it.
pub fn bin_labels(values: &[f64], boundaries: &[f64]) -> Vec<usize> {
    values
        .iter()
        .map(|v| boundaries.iter().filter(|&&b| *v > b).count())
        .collect()
}

/// Map observed labels onto `0..c` (ascending), then apply a random permutation.
fn dense_shuffled_labels<R: Rng + ?Sized>(keys: &[f64], rng: &mut R) -> (Vec<f64>, usize) {
    let distinct = distinct_sorted(keys);
    let mut perm: Vec<usize> = (0..distinct.len()).collect();
    perm.shuffle(rng);
    let labels = keys
        .iter()
        .map(|k| {
            let pos = distinct.partition_point(|d| d.total_cmp(k).is_lt());
            perm[pos] as f64
        })
        .collect();
    (labels, distinct.len())
}

fn regression_target(column: &[f64]) -> GeneratedTarget {
    let (m, s) = crate::stats::mean_std(column).expect("non-empty column");
    let s = if s > 0.0 { s } else { 1.0 };
    GeneratedTarget {
        targets: column.iter().map(|v| (v - m) / s).collect(),
        task_kind: TaskKind::Regression,
        num_classes: 0,
    }
}

fn binned_target<R: Rng + ?Sized>(column: &[f64], distinct: &[f64], rng: &mut R) -> GeneratedTarget {
    let num_class = rng.random_range(2..CLS_THRESHOLD);
    let inner = &distinct[1..distinct.len() - 1];
    let boundaries: Vec<f64> = index::sample(rng, inner.len(), num_class - 1)
        .into_iter()
        .map(|i| inner[i])
        .collect();
    let bins: Vec<f64> = bin_labels(column, &boundaries).into_iter().map(|b| b as f64).collect();
    let (targets, num_classes) = dense_shuffled_labels(&bins, rng);
    GeneratedTarget {
        targets,
        task_kind: TaskKind::Classification,
        num_classes,
    }
}

fn categorical_target<R: Rng + ?Sized>(column: &[f64], rng: &mut R) -> GeneratedTarget {
    let (targets, num_classes) = dense_shuffled_labels(column, rng);
    GeneratedTarget {
        targets,
        task_kind: TaskKind::Classification,
        num_classes,
    }
}

/// Turn a retrieved column into a training target.
///
/// More than [`CLS_THRESHOLD`] distinct values: regression (standardized) with
/// probability 0.7, otherwise 2..=9 classes by binning at random interior
/// distinct values. Otherwise each distinct value is a class. Class labels are
/// randomly permuted.
pub fn generate_target<R: Rng + ?Sized>(column: &[f64], rng: &mut R) -> Result<GeneratedTarget> {
    let distinct = distinct_sorted(column);
    if distinct.len() < 2 {
        bail!(Precondition, "target column needs at least 2 distinct values");
    }
    if distinct.len() > CLS_THRESHOLD {
        if rng.random::<f64>() > CLASSIFICATION_PROB {
            Ok(regression_target(column))
        } else {
            Ok(binned_target(column, &distinct, rng))
        }
    } else {
        Ok(categorical_target(column, rng))
    }
}

/// Like [`generate_target`] but forcing the task kind; `None` when the
/// column cannot serve it (regression needs more than [`CLS_THRESHOLD`]
/// distinct values).
pub fn generate_target_as<R: Rng + ?Sized>(
    column: &[f64],
    kind: TaskKind,
    rng: &mut R,
) -> Option<GeneratedTarget> {
    let distinct = distinct_sorted(column);
    if distinct.len() < 2 {
        return None;
    }
    let high = distinct.len() > CLS_THRESHOLD;
    match (kind, high) {
        (TaskKind::Regression, true) => Some(regression_target(column)),
        (TaskKind::Regression, false) => None,
        (TaskKind::Classification, true) => Some(binned_target(column, &distinct, rng)),
        (TaskKind::Classification, false) => Some(categorical_target(column, rng)),
    }
}

/// Fixed labels from the designated target column: dense class indices in
/// ascending value order, or standardized values.
fn supervised_target(table: &PreparedTable, rows: &[usize], c_max: usize) -> Result<GeneratedTarget> {
    let Some(t) = &table.target else {
        bail!(Precondition, "{}: supervised episodes need a designated target", table.source);
    };
    let values: Vec<f64> = rows
        .iter()
        .map(|&r| t.raw[r])
        .collect::<Option<_>>()
        .ok_or_else(|| crate::Error::Data(format!("{}: missing target values", table.source)))?;
    match t.task {
        TaskKind::Regression => Ok(regression_target(&values)),
        TaskKind::Classification => {
            let classes = distinct_sorted(&t.raw.iter().flatten().copied().collect::<Vec<_>>());
            if classes.len() > c_max {
                bail!(Precondition, "{}: {} classes exceed {c_max}", table.source, classes.len());
            }
            let targets = values
                .iter()
                .map(|v| classes.partition_point(|c| c < v) as f64)
                .collect();
            Ok(GeneratedTarget {
                targets,
                task_kind: TaskKind::Classification,
                num_classes: classes.len(),
            })
        }
    }
}

/// Build one episode of `k` retrieved rows from `table`.
pub fn make_episode<R: Rng + ?Sized>(
    table: &PreparedTable,
    index: &NeighborIndex,
    k: usize,
    cfg: &EpisodeConfig,
    rng: &mut R,
) -> Result<SslEpisode> {
    let (n, f) = table.data.dim();
    if f < 2 {
        bail!(Precondition, "{}: episodes need at least 2 columns", table.source);
    }
    if k == 0 || k > n {
        bail!(Precondition, "{}: episode length {k} exceeds {n} rows", table.source);
    }
    let anchor = rng.random_range(0..n);
    let anchor_row = table.data.row(anchor);

    let (source_col, rows, target) = match cfg.target_mode {
        TargetMode::Supervised => {
            let col = table
                .target
                .as_ref()
                .map(|t| t.column)
                .ok_or_else(|| crate::Error::Precondition(format!("{}: no target", table.source)))?;
            let nb = index.query_masked(anchor_row, col, k)?;
            let target = supervised_target(table, &nb.row_ids, crate::net::C_MAX)?;
            (col, nb.row_ids, target)
        }
        TargetMode::Ssl => {
            let desired = match cfg.task_balance {
                TaskBalance::Code => None,
                TaskBalance::Equal => Some(if rng.random_bool(0.5) {
                    TaskKind::Regression
                } else {
                    TaskKind::Classification
                }),
            };
            let mut chosen = None;
            let mut fallback = None;
            // each attempt tries a column not tried before
            let mut cols: Vec<usize> = (0..f).collect();
            cols.shuffle(rng);
            for col in cols {
                let nb = index.query_masked(anchor_row, col, k)?;
                let values: Vec<f64> = nb.row_ids.iter().map(|&r| table.data[[r, col]]).collect();
                match desired {
                    None => {
                        if distinct_sorted(&values).len() >= 2 {
                            let t = generate_target(&values, rng)?;
                            chosen = Some((col, nb.row_ids, t));
                            break;
                        }
                    }
                    Some(kind) => {
                        if let Some(t) = generate_target_as(&values, kind, rng) {
                            chosen = Some((col, nb.row_ids, t));
                            break;
                        }
                        if fallback.is_none() && distinct_sorted(&values).len() >= 2 {
                            fallback = Some((col, nb.row_ids, values));
                        }
                    }
                }
            }
            match (chosen, fallback) {
                (Some(c), _) => c,
                (None, Some((col, rows, values))) => {
                    let t = generate_target(&values, rng)?;
                    (col, rows, t)
                }
                (None, None) => bail!(
                    Data,
                    "{}: no column with at least 2 distinct retrieved values after {f} attempts",
                    table.source
                ),
            }
        }
    };

    let rest: Vec<usize> = (0..f).filter(|&j| j != source_col).collect();
    let feature_perm: Vec<usize> = choose_feature_subset(rest.len(), rng)
        .into_iter()
        .map(|i| rest[i])
        .collect();
    let features = table.data.select(Axis(0), &rows).select(Axis(1), &feature_perm);
    Ok(SslEpisode {
        features,
        targets: target.targets,
        task_kind: target.task_kind,
        num_classes: target.num_classes,
        source_col,
        feature_perm,
        rows,
    })
}
