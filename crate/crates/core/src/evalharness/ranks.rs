use rand::Rng;
use rayon::prelude::*;

use super::{iteration_seeds, ScoreTable};
use crate::error::{bail, Result};
use crate::seeded_rng;
use crate::stats::{quantile_sorted, sorted};

/// Point estimate with a 95% percentile interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    fn from_samples(estimate: f64, samples: &[f64]) -> Self {
        let s = sorted(samples);
        Interval {
            estimate,
            lo: quantile_sorted(&s, 0.025),
            hi: quantile_sorted(&s, 0.975),
        }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankSummary {
    pub method: String,
    pub rank: Interval,
}

/// Ranks of `values` where larger is better: 1 for the best, ties share the
/// average of their positions.
pub fn rank_row(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Mean rank per method over the datasets every method was scored on, with a
/// bootstrap interval from resampling those datasets.
pub fn average_ranks(table: &ScoreTable, bootstrap_iters: usize, seed: u64) -> Result<Vec<RankSummary>> {
    let n_methods = table.methods.len();
    if n_methods < 2 {
        bail!(Precondition, "ranking needs at least 2 methods, got {n_methods}");
    }
    let datasets = table.complete_datasets();
    if datasets.is_empty() {
        bail!(Data, "no dataset has scores for every method");
    }
    let per_ds: Vec<Vec<f64>> = datasets
        .iter()
        .map(|&d| {
            let row: Vec<f64> = (0..n_methods).map(|m| table.oriented(m, d).expect("complete")).collect();
            rank_row(&row)
        })
        .collect();
    let mean_of = |idx: &mut dyn Iterator<Item = usize>| {
        let mut acc = vec![0.0; n_methods];
        let mut n = 0;
        for i in idx {
            for (a, r) in acc.iter_mut().zip(&per_ds[i]) {
                *a += r;
            }
            n += 1;
        }
        acc.iter_mut().for_each(|a| *a /= n as f64);
        acc
    };
    let point = mean_of(&mut (0..per_ds.len()));
    let boots: Vec<Vec<f64>> = iteration_seeds(seed, bootstrap_iters)
        .par_iter()
        .map(|&s| {
            let mut rng = seeded_rng(s);
            let n = per_ds.len();
            mean_of(&mut (0..n).map(|_| rng.random_range(0..n)))
        })
        .collect();
    Ok((0..n_methods)
        .map(|m| {
            let samples: Vec<f64> = boots.iter().map(|b| b[m]).collect();
            let rank = if samples.is_empty() {
                Interval { estimate: point[m], lo: point[m], hi: point[m] }
            } else {
                Interval::from_samples(point[m], &samples)
            };
            RankSummary { method: table.methods[m].clone(), rank }
        })
        .collect())
}

fn iqm_point(values: &[f64]) -> f64 {
    let s = sorted(values);
    let (lo, hi) = (quantile_sorted(&s, 0.25), quantile_sorted(&s, 0.75));
    let mid: Vec<f64> = s.into_iter().filter(|&v| v >= lo && v <= hi).collect();
    mid.iter().sum::<f64>() / mid.len() as f64
}

/// Interquartile mean: the mean of values between the 25th and 75th
/// percentiles (linear interpolation), with a bootstrap interval.
pub fn iqm(values: &[f64], bootstrap_iters: usize, seed: u64) -> Result<Interval> {
    if values.len() < 4 {
        bail!(Precondition, "IQM needs at least 4 values, got {}", values.len());
    }
    if values.iter().any(|v| !v.is_finite()) {
        bail!(Data, "IQM input must be finite");
    }
    let point = iqm_point(values);
    let samples: Vec<f64> = iteration_seeds(seed, bootstrap_iters)
        .par_iter()
        .map(|&s| {
            let mut rng = seeded_rng(s);
            let resample: Vec<f64> = (0..values.len()).map(|_| values[rng.random_range(0..values.len())]).collect();
            iqm_point(&resample)
        })
        .collect();
    if samples.is_empty() {
        return Ok(Interval { estimate: point, lo: point, hi: point });
    }
    Ok(Interval::from_samples(point, &samples))
}

/// Entry `(i, j)`: share of datasets scored for both where `i` beats `j`, ties
/// counting one half. `None` on the diagonal and for pairs with no shared dataset.
pub fn win_rate_matrix(table: &ScoreTable) -> Result<Vec<Vec<Option<f64>>>> {
    let n = table.methods.len();
    if n < 2 {
        bail!(Precondition, "win rates need at least 2 methods, got {n}");
    }
    let mut out = vec![vec![None; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let (mut wins, mut shared) = (0.0, 0usize);
            for d in 0..table.datasets.len() {
                if let (Some(a), Some(b)) = (table.oriented(i, d), table.oriented(j, d)) {
                    shared += 1;
                    wins += if a > b {
                        1.0
                    } else if a == b {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
            out[i][j] = (shared > 0).then(|| wins / shared as f64);
        }
    }
    Ok(out)
}
