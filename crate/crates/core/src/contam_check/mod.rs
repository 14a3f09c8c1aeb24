//! Train/eval overlap detection.
//!
//! Each table is summarized by a fingerprint: a digest of its canonical
//! serialization, its shape, and per-feature moments (plus the coefficients of
//! a univariate fit against the target when one is designated). Pairs are
//! flagged for manual review on a digest or name match, an exact shape match,
//! or when most eval features have a counterpart train feature with the same
//! statistics, either in the full statistic space or in the scale-invariant
//! (skewness, kurtosis) space.

mod kdtree;

pub use kdtree::KdTree;

use std::fmt::Write as _;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{bail, Result};
use crate::stats::moments;
use crate::table_store::{RawColumn, RawTable, RawValues};

/// Absolute slack added to relative comparisons so that exact zeros match.
const ABS_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContamConfig {
    /// Per-coordinate relative tolerance for two statistics to count as equal.
    pub tolerance: f64,
    /// Matched-feature fraction above which a pair is flagged.
    pub threshold: f64,
}

impl Default for ContamConfig {
    fn default() -> Self {
        ContamConfig { tolerance: 1e-3, threshold: 0.8 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStats {
    pub name: String,
    pub mean: f64,
    pub variance: f64,
    /// `None` for constant columns.
    pub skewness: Option<f64>,
    pub kurtosis: Option<f64>,
    /// `(slope, intercept)` of the least-squares fit target ~ feature.
    pub fit: Option<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetFingerprint {
    pub name: String,
    pub content_hash: [u8; 32],
    pub n_rows: usize,
    pub n_cols: usize,
    pub target_mean: Option<f64>,
    pub target_var: Option<f64>,
    /// Non-target columns in table order.
    pub features: Vec<FeatureStats>,
}

/// Numeric view of a column: numbers as-is, categories as lexicographic codes.
fn column_values(c: &RawColumn) -> Vec<Option<f64>> {
    match &c.values {
        RawValues::Numeric(v) => v.clone(),
        RawValues::Categorical(v) => {
            let mut cats: Vec<&String> = v.iter().flatten().collect();
            cats.sort();
            cats.dedup();
            v.iter()
                .map(|s| s.as_ref().map(|s| cats.binary_search(&s).expect("category present") as f64))
                .collect()
        }
    }
}

fn canonical_number(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else {
        format!("{v}")
    }
}

fn canonical_text(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Canonical CSV text: columns sorted by name, rows in order, shortest
/// round-trip number formatting, empty cells for missing values.
pub fn canonical_serialization(raw: &RawTable) -> String {
    let mut order: Vec<usize> = (0..raw.n_cols()).collect();
    order.sort_by(|&a, &b| raw.columns[a].name.cmp(&raw.columns[b].name));
    let mut out = order
        .iter()
        .map(|&j| canonical_text(&raw.columns[j].name))
        .collect::<Vec<_>>()
        .join(",");
    out.push('\n');
    for i in 0..raw.n_rows {
        let cells: Vec<String> = order
            .iter()
            .map(|&j| match &raw.columns[j].values {
                RawValues::Numeric(v) => v[i].map(canonical_number).unwrap_or_default(),
                RawValues::Categorical(v) => v[i].as_deref().map(canonical_text).unwrap_or_default(),
            })
            .collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

fn linear_fit(x: &[Option<f64>], y: &[Option<f64>]) -> Option<(f64, f64)> {
    let pairs: Vec<(f64, f64)> = x.iter().zip(y).filter_map(|(a, b)| Some(((*a)?, (*b)?))).collect();
    if pairs.len() < 2 {
        return None;
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Deterministic summary of a raw table; the target column, if designated,
/// contributes target moments and per-feature fits instead of feature stats.
pub fn fingerprint(raw: &RawTable) -> DatasetFingerprint {
    let content_hash: [u8; 32] = Sha256::digest(canonical_serialization(raw).as_bytes()).into();
    let target_idx = raw.target_index();
    let target = target_idx.map(|t| column_values(&raw.columns[t]));
    let target_moments = target
        .as_ref()
        .and_then(|t| moments(&t.iter().flatten().copied().collect::<Vec<_>>()));
    let features = raw
        .columns
        .iter()
        .enumerate()
        .filter(|&(j, _)| Some(j) != target_idx)
        .filter_map(|(_, c)| {
            let v = column_values(c);
            let (mean, variance, skewness, kurtosis) = moments(&v.iter().flatten().copied().collect::<Vec<_>>())?;
            Some(FeatureStats {
                name: c.name.clone(),
                mean,
                variance,
                skewness,
                kurtosis,
                fit: target.as_ref().and_then(|t| linear_fit(&v, t)),
            })
        })
        .collect();
    DatasetFingerprint {
        name: raw.name.clone(),
        content_hash,
        n_rows: raw.n_rows,
        n_cols: raw.n_cols(),
        target_mean: target_moments.map(|m| m.0),
        target_var: target_moments.map(|m| m.1),
        features,
    }
}

pub fn fingerprint_all(tables: &[RawTable]) -> Vec<DatasetFingerprint> {
    tables.par_iter().map(fingerprint).collect()
}

/// Which statistics a feature is compared on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StatSpace {
    /// Mean, variance, skewness, kurtosis, and fit coefficients when both sides have them.
    Full { with_fit: bool },
    /// Skewness and kurtosis only; unchanged by positive affine rescaling.
    ScaleInvariant,
}

/// Stat vectors of the features usable in `space`, with their feature indices.
pub fn stat_vectors(fp: &DatasetFingerprint, space: StatSpace) -> Vec<(usize, Vec<f64>)> {
    fp.features
        .iter()
        .enumerate()
        .filter_map(|(i, f)| {
            let (s, k) = (f.skewness?, f.kurtosis?);
            let v = match space {
                StatSpace::ScaleInvariant => vec![s, k],
                StatSpace::Full { with_fit: false } => vec![f.mean, f.variance, s, k],
                StatSpace::Full { with_fit: true } => {
                    let (a, b) = f.fit?;
                    vec![f.mean, f.variance, s, k, a, b]
                }
            };
            Some((i, v))
        })
        .collect()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()) + ABS_FLOOR
}

/// Maximum one-to-one matching between features of `a` and `b` whose stat
/// vectors agree within `tol` in every coordinate. Symmetric in `a` and `b`.
pub fn matched_features(a: &[Vec<f64>], b: &[Vec<f64>], tol: f64) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let tree = KdTree::build(a.to_vec());
    // candidate box is a superset of the relative-tolerance region
    let slack = tol / (1.0 - tol).max(f64::EPSILON);
    let edges: Vec<Vec<usize>> = b
        .iter()
        .map(|q| {
            let lo: Vec<f64> = q.iter().map(|v| v - slack * v.abs() - 2.0 * ABS_FLOOR).collect();
            let hi: Vec<f64> = q.iter().map(|v| v + slack * v.abs() + 2.0 * ABS_FLOOR).collect();
            tree.within_box(&lo, &hi)
                .into_iter()
                .filter(|&i| a[i].iter().zip(q).all(|(x, y)| close(*x, *y, tol)))
                .collect()
        })
        .collect();
    // augmenting paths
    let mut owner: Vec<Option<usize>> = vec![None; a.len()];
    fn augment(j: usize, edges: &[Vec<usize>], owner: &mut [Option<usize>], seen: &mut [bool]) -> bool {
        for &i in &edges[j] {
            if seen[i] {
                continue;
            }
            seen[i] = true;
            if owner[i].is_none_or(|k| augment(k, edges, owner, seen)) {
                owner[i] = Some(j);
                return true;
            }
        }
        false
    }
    (0..b.len())
        .filter(|&j| augment(j, &edges, &mut owner, &mut vec![false; a.len()]))
        .count()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityReport {
    pub train: String,
    pub eval: String,
    pub hash_match: bool,
    pub name_match: bool,
    pub shape_match: bool,
    /// Matched eval features in the full statistic space.
    pub stat_matches: usize,
    /// Matched eval features in the scale-invariant space.
    pub invariant_matches: usize,
    /// Larger of the two matched fractions over the eval features.
    pub match_fraction: f64,
    pub reasons: Vec<&'static str>,
}

impl SimilarityReport {
    pub fn flagged(&self) -> bool {
        !self.reasons.is_empty()
    }
}

fn normalized_name(name: &str) -> String {
    let stem = name.rsplit(['/', '\\']).next().unwrap_or(name);
    let stem = stem.strip_suffix(".csv").unwrap_or(stem);
    stem.chars().filter(|c| c.is_alphanumeric()).flat_map(char::to_lowercase).collect()
}

fn compare(train: &DatasetFingerprint, eval: &DatasetFingerprint, cfg: &ContamConfig) -> SimilarityReport {
    let with_fit = train.target_mean.is_some() && eval.target_mean.is_some();
    let count = |space| {
        let a: Vec<Vec<f64>> = stat_vectors(train, space).into_iter().map(|p| p.1).collect();
        let b: Vec<Vec<f64>> = stat_vectors(eval, space).into_iter().map(|p| p.1).collect();
        (matched_features(&a, &b, cfg.tolerance), b.len())
    };
    let (stat_matches, n_full) = count(StatSpace::Full { with_fit });
    let (invariant_matches, n_inv) = count(StatSpace::ScaleInvariant);
    let frac = |m: usize, n: usize| if n == 0 { 0.0 } else { m as f64 / n as f64 };
    let (full_frac, inv_frac) = (frac(stat_matches, n_full), frac(invariant_matches, n_inv));
    let hash_match = train.content_hash == eval.content_hash;
    let name_match = normalized_name(&train.name) == normalized_name(&eval.name);
    let shape_match = train.n_rows == eval.n_rows && train.n_cols == eval.n_cols;
    let mut reasons = Vec::new();
    for (hit, why) in [
        (hash_match, "hash"),
        (name_match, "name"),
        (shape_match, "shape"),
        (full_frac > cfg.threshold, "moments"),
        (inv_frac > cfg.threshold, "scale_invariant_moments"),
    ] {
        if hit {
            reasons.push(why);
        }
    }
    SimilarityReport {
        train: train.name.clone(),
        eval: eval.name.clone(),
        hash_match,
        name_match,
        shape_match,
        stat_matches,
        invariant_matches,
        match_fraction: full_frac.max(inv_frac),
        reasons,
    }
}

/// Compare every train fingerprint against every eval fingerprint.
pub fn compare_all(
    train: &[DatasetFingerprint],
    eval: &[DatasetFingerprint],
    cfg: &ContamConfig,
) -> Result<Vec<SimilarityReport>> {
    if train.is_empty() || eval.is_empty() {
        bail!(Precondition, "contamination check needs non-empty train and eval lists");
    }
    if !(cfg.tolerance > 0.0 && cfg.tolerance < 1.0) {
        bail!(Config, "tolerance must lie in (0, 1), got {}", cfg.tolerance);
    }
    let pairs: Vec<(usize, usize)> = (0..train.len()).flat_map(|i| (0..eval.len()).map(move |j| (i, j))).collect();
    Ok(pairs.par_iter().map(|&(i, j)| compare(&train[i], &eval[j], cfg)).collect())
}

/// CSV `train_ds,eval_ds,flag_reason,match_fraction` for flagged pairs;
/// multiple reasons are joined with `;`.
pub fn report_csv(reports: &[SimilarityReport]) -> String {
    let mut out = String::from("train_ds,eval_ds,flag_reason,match_fraction\n");
    for r in reports.iter().filter(|r| r.flagged()) {
        writeln!(
            out,
            "{},{},{},{}",
            canonical_text(&r.train),
            canonical_text(&r.eval),
            r.reasons.join(";"),
            r.match_fraction
        )
        .expect("write to string");
    }
    out
}
