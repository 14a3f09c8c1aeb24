use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::ranks::Interval;
use super::{iteration_seeds, ScoreTable};
use crate::error::{bail, Result};
use crate::seeded_rng;

pub const ELO_K: f64 = 32.0;
const ELO_START: f64 = 1500.0;

pub const GLICKO_TAU: f64 = 0.5;
const GLICKO_START: RatingState = RatingState { rating: 1500.0, rd: 350.0, volatility: 0.06 };
const GLICKO_SCALE: f64 = 173.7178;
const GLICKO_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RatingState {
    pub rating: f64,
    pub rd: f64,
    pub volatility: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EloSummary {
    pub method: String,
    pub rating: Interval,
}

/// One duel: `(i, j, score of i)`.
type Duel = (usize, usize, f64);

fn duels(table: &ScoreTable) -> Vec<Duel> {
    let n = table.methods.len();
    let mut out = Vec::new();
    for d in 0..table.datasets.len() {
        for i in 0..n {
            for j in i + 1..n {
                if let (Some(a), Some(b)) = (table.oriented(i, d), table.oriented(j, d)) {
                    let s = if a > b {
                        1.0
                    } else if a == b {
                        0.5
                    } else {
                        0.0
                    };
                    out.push((i, j, s));
                }
            }
        }
    }
    out
}

fn elo_pass(n: usize, matches: &[Duel]) -> Vec<f64> {
    let mut r = vec![ELO_START; n];
    for &(i, j, s) in matches {
        let expected = 1.0 / (1.0 + 10f64.powf((r[j] - r[i]) / 400.0));
        let delta = ELO_K * (s - expected);
        r[i] += delta;
        r[j] -= delta;
    }
    r
}

/// Sequential Elo over all (method pair, dataset) duels, repeated over
/// `permutations` random match orders. Reports the mean rating with the
/// 2.5 / 97.5 percentiles.
pub fn elo_ratings(table: &ScoreTable, permutations: usize, seed: u64) -> Result<Vec<EloSummary>> {
    let n = table.methods.len();
    if n < 2 {
        bail!(Precondition, "ratings need at least 2 methods, got {n}");
    }
    if permutations == 0 {
        bail!(Precondition, "at least one match order is required");
    }
    let matches = duels(table);
    let runs: Vec<Vec<f64>> = iteration_seeds(seed, permutations)
        .par_iter()
        .map(|&s| {
            let mut order = matches.clone();
            order.shuffle(&mut seeded_rng(s));
            elo_pass(n, &order)
        })
        .collect();
    Ok((0..n)
        .map(|m| {
            let samples: Vec<f64> = runs.iter().map(|r| r[m]).collect();
            let mean = samples.iter().sum::<f64>() / samples.len() as f64;
            let s = crate::stats::sorted(&samples);
            EloSummary {
                method: table.methods[m].clone(),
                rating: Interval {
                    estimate: mean,
                    lo: crate::stats::quantile_sorted(&s, 0.025),
                    hi: crate::stats::quantile_sorted(&s, 0.975),
                },
            }
        })
        .collect())
}

fn g(phi: f64) -> f64 {
    1.0 / (1.0 + 3.0 * phi * phi / (std::f64::consts::PI * std::f64::consts::PI)).sqrt()
}

/// One Glicko-2 rating period for `player` against `(rating, rd, score)` results.
pub fn glicko2_update(player: RatingState, results: &[(f64, f64, f64)], tau: f64) -> RatingState {
    let mu = (player.rating - 1500.0) / GLICKO_SCALE;
    let phi = player.rd / GLICKO_SCALE;
    let sigma = player.volatility;
    if results.is_empty() {
        let phi_star = (phi * phi + sigma * sigma).sqrt();
        return RatingState { rd: phi_star * GLICKO_SCALE, ..player };
    }
    let mut v_inv = 0.0;
    let mut sum = 0.0;
    for &(r, rd, s) in results {
        let mu_j = (r - 1500.0) / GLICKO_SCALE;
        let g_j = g(rd / GLICKO_SCALE);
        let e = 1.0 / (1.0 + (-g_j * (mu - mu_j)).exp());
        v_inv += g_j * g_j * e * (1.0 - e);
        sum += g_j * (s - e);
    }
    let v = 1.0 / v_inv;
    let delta = v * sum;

    // volatility by the Illinois variant of regula falsi
    let a = (sigma * sigma).ln();
    let f = |x: f64| {
        let ex = x.exp();
        let d = phi * phi + v + ex;
        ex * (delta * delta - phi * phi - v - ex) / (2.0 * d * d) - (x - a) / (tau * tau)
    };
    let mut big_a = a;
    let mut big_b = if delta * delta > phi * phi + v {
        (delta * delta - phi * phi - v).ln()
    } else {
        let mut k = 1.0;
        while f(a - k * tau) < 0.0 {
            k += 1.0;
        }
        a - k * tau
    };
    let (mut fa, mut fb) = (f(big_a), f(big_b));
    while (big_b - big_a).abs() > GLICKO_EPS {
        let c = big_a + (big_a - big_b) * fa / (fb - fa);
        let fc = f(c);
        if fc * fb <= 0.0 {
            big_a = big_b;
            fa = fb;
        } else {
            fa /= 2.0;
        }
        big_b = c;
        fb = fc;
    }
    let sigma_new = (big_a / 2.0).exp();
    let phi_star = (phi * phi + sigma_new * sigma_new).sqrt();
    let phi_new = 1.0 / (1.0 / (phi_star * phi_star) + 1.0 / v).sqrt();
    let mu_new = mu + phi_new * phi_new * sum;
    RatingState {
        rating: mu_new * GLICKO_SCALE + 1500.0,
        rd: phi_new * GLICKO_SCALE,
        volatility: sigma_new,
    }
}

/// Glicko-2 ratings after one rating period holding every duel.
pub fn glicko2_ratings(table: &ScoreTable) -> Result<Vec<(String, RatingState)>> {
    let n = table.methods.len();
    if n < 2 {
        bail!(Precondition, "ratings need at least 2 methods, got {n}");
    }
    let mut results: Vec<Vec<(f64, f64, f64)>> = vec![Vec::new(); n];
    for (i, j, s) in duels(table) {
        results[i].push((GLICKO_START.rating, GLICKO_START.rd, s));
        results[j].push((GLICKO_START.rating, GLICKO_START.rd, 1.0 - s));
    }
    Ok(table
        .methods
        .iter()
        .zip(&results)
        .map(|(m, r)| (m.clone(), glicko2_update(GLICKO_START, r, GLICKO_TAU)))
        .collect())
}
