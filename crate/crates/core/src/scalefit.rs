//! Joint power law `loss(P, D) = A P^-alpha + B D^-beta + E`.
//!
//! The fit minimizes a Huber loss on log-space residuals. The prediction is
//! written as `log loss = logsumexp(a - alpha log P, b - beta log D, e)` with
//! `a = log A`, `b = log B`, `e = log E`, and optimized by L-BFGS from a grid
//! of starting points; the best optimum wins.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{bail, Result};

/// Huber threshold on log residuals.
pub const HUBER_DELTA: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalingPoint {
    /// Parameter count.
    pub p: f64,
    /// Training cells.
    pub d: f64,
    pub loss: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalingFit {
    pub a_coef: f64,
    pub b_coef: f64,
    pub e_irr: f64,
    pub alpha: f64,
    pub beta: f64,
}

pub fn predict_loss(fit: &ScalingFit, p: f64, d: f64) -> f64 {
    fit.a_coef * p.powf(-fit.alpha) + fit.b_coef * d.powf(-fit.beta) + fit.e_irr
}

/// Observed loss minus the irreducible term, per point.
pub fn excess_loss(fit: &ScalingFit, points: &[ScalingPoint]) -> Vec<f64> {
    points.iter().map(|pt| pt.loss - fit.e_irr).collect()
}

// theta = [a, b, e, alpha, beta]
fn objective(theta: &[f64; 5], data: &[(f64, f64, f64)], grad: &mut [f64; 5]) -> f64 {
    let [a, b, e, alpha, beta] = *theta;
    *grad = [0.0; 5];
    let mut total = 0.0;
    for &(lp, ld, ll) in data {
        let u = [a - alpha * lp, b - beta * ld, e];
        let m = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = u.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = w.iter().sum();
        let r = m + s.ln() - ll;
        let (h, dh) = if r.abs() <= HUBER_DELTA {
            (0.5 * r * r, r)
        } else {
            (HUBER_DELTA * (r.abs() - 0.5 * HUBER_DELTA), HUBER_DELTA * r.signum())
        };
        total += h;
        let (w0, w1, w2) = (w[0] / s, w[1] / s, w[2] / s);
        grad[0] += dh * w0;
        grad[1] += dh * w1;
        grad[2] += dh * w2;
        grad[3] -= dh * w0 * lp;
        grad[4] -= dh * w1 * ld;
    }
    total
}

fn dot(a: &[f64; 5], b: &[f64; 5]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Limited-memory BFGS with backtracking line search. Returns the final point and value.
fn lbfgs(start: [f64; 5], data: &[(f64, f64, f64)]) -> ([f64; 5], f64) {
    const MEMORY: usize = 8;
    const MAX_ITER: usize = 3000;
    let mut x = start;
    let mut g = [0.0; 5];
    let mut fx = objective(&x, data, &mut g);
    let mut hist: Vec<([f64; 5], [f64; 5], f64)> = Vec::new();
    for _ in 0..MAX_ITER {
        if dot(&g, &g).sqrt() < 1e-15 {
            break;
        }
        // two-loop recursion
        let mut q = g;
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot(s, &q);
            for i in 0..5 {
                q[i] -= a * y[i];
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = hist.last() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for i in 0..5 {
                q[i] += s[i] * (a - b);
            }
        }
        let mut dir = q.map(|v| -v);
        let mut slope = dot(&g, &dir);
        if slope >= 0.0 {
            dir = g.map(|v| -v);
            slope = dot(&g, &dir);
            hist.clear();
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut xn = x;
            for i in 0..5 {
                xn[i] += step * dir[i];
            }
            let mut gn = [0.0; 5];
            let fnew = objective(&xn, data, &mut gn);
            if fnew.is_finite() && fnew <= fx + 1e-4 * step * slope {
                accepted = Some((xn, gn, fnew));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, gn, fnew)) = accepted else { break };
        let s: [f64; 5] = std::array::from_fn(|i| xn[i] - x[i]);
        let y: [f64; 5] = std::array::from_fn(|i| gn[i] - g[i]);
        let sy = dot(&s, &y);
        if sy > 1e-300 {
            hist.push((s, y, 1.0 / sy));
            if hist.len() > MEMORY {
                hist.remove(0);
            }
        }
        let improved = fx - fnew;
        x = xn;
        g = gn;
        fx = fnew;
        if improved <= 1e-18 * fx.abs().max(1e-300) && dot(&s, &s).sqrt() < 1e-14 {
            break;
        }
    }
    (x, fx)
}

/// Fit the joint power law. Needs at least 6 points over at least 2 distinct
/// values of both `P` and `D`.
pub fn fit_power_law(points: &[ScalingPoint]) -> Result<ScalingFit> {
    if points.len() < 6 {
        bail!(Precondition, "{} points; the fit needs at least 6", points.len());
    }
    for pt in points {
        if !(pt.p >= 1.0 && pt.d >= 1.0 && pt.loss.is_finite() && pt.loss > 0.0 && pt.p.is_finite() && pt.d.is_finite()) {
            bail!(Data, "invalid scaling point {pt:?}");
        }
    }
    let distinct = |f: fn(&ScalingPoint) -> f64| {
        let mut v: Vec<f64> = points.iter().map(f).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v.len()
    };
    if distinct(|p| p.p) < 2 || distinct(|p| p.d) < 2 {
        bail!(Precondition, "degenerate design: need at least 2 distinct P and 2 distinct D");
    }
    let data: Vec<(f64, f64, f64)> = points.iter().map(|pt| (pt.p.ln(), pt.d.ln(), pt.loss.ln())).collect();
    let l_min = points.iter().map(|p| p.loss).fold(f64::INFINITY, f64::min);
    let l_max = points.iter().map(|p| p.loss).fold(0.0, f64::max);
    let lp_range = (
        data.iter().map(|d| d.0).fold(f64::INFINITY, f64::min),
        data.iter().map(|d| d.0).fold(f64::NEG_INFINITY, f64::max),
    );
    let ld_range = (
        data.iter().map(|d| d.1).fold(f64::INFINITY, f64::min),
        data.iter().map(|d| d.1).fold(f64::NEG_INFINITY, f64::max),
    );
    // intercepts chosen so each power-law term equals the observed loss scale
    // at the low or high end of its axis
    let exps = [0.0, 0.5, 1.0, 1.5];
    let mut starts = Vec::new();
    for &alpha in &exps {
        for &beta in &exps {
            for &lp in &[lp_range.0, lp_range.1] {
                for &ld in &[ld_range.0, ld_range.1] {
                    for &e in &[(0.5 * l_min).ln(), (0.9 * l_min).ln()] {
                        let a = l_max.ln() + alpha * lp;
                        let b = l_max.ln() + beta * ld;
                        starts.push([a, b, e, alpha, beta]);
                    }
                }
            }
        }
    }
    let results: Vec<([f64; 5], f64)> = starts.par_iter().map(|&s| lbfgs(s, &data)).collect();
    // among optima tied at the best objective, prefer the largest floor: a flat
    // surface is then explained by E_irr alone
    let lowest = results.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    let tol = 1e-12 + 1e-9 * lowest;
    let mut best = 0;
    for (i, r) in results.iter().enumerate() {
        let (cur, cand) = (&results[best], r);
        let tied = cand.1 <= lowest + tol;
        if tied && (cur.1 > lowest + tol || cand.0[2] > cur.0[2]) {
            best = i;
        }
    }
    let [a, b, e, alpha, beta] = results[best].0;
    let fit = ScalingFit {
        a_coef: a.exp(),
        b_coef: b.exp(),
        e_irr: e.exp(),
        alpha,
        beta,
    };
    if ![fit.a_coef, fit.b_coef, fit.e_irr, alpha, beta].iter().all(|v| v.is_finite()) {
        bail!(Numeric, "scaling-law fit diverged");
    }
    Ok(fit)
}

/// Parse CSV `P,D,loss`.
pub fn parse_points_csv(text: &str) -> Result<Vec<ScalingPoint>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<String> = lines
        .next()
        .map(|h| h.split(',').map(|s| s.trim().to_string()).collect())
        .unwrap_or_default();
    if header != ["P", "D", "loss"] {
        bail!(Data, "expected header P,D,loss, found {header:?}");
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            let v: Vec<f64> = l
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| crate::Error::Data(format!("line {}: {e}", i + 2)))?;
            match v[..] {
                [p, d, loss] => Ok(ScalingPoint { p, d, loss }),
                _ => bail!(Data, "line {}: expected 3 fields", i + 2),
            }
        })
        .collect()
}

pub fn fit_csv(fit: &ScalingFit) -> String {
    format!(
        "A,B_coef,E_irr,alpha,beta\n{},{},{},{},{}\n",
        fit.a_coef, fit.b_coef, fit.e_irr, fit.alpha, fit.beta
    )
}

/// Per-point CSV `P,D,loss,fitted,excess,fitted_excess` for log-scale plots.
pub fn excess_csv(fit: &ScalingFit, points: &[ScalingPoint]) -> String {
    let mut out = String::from("P,D,loss,fitted,excess,fitted_excess\n");
    for (pt, ex) in points.iter().zip(excess_loss(fit, points)) {
        let f = predict_loss(fit, pt.p, pt.d);
        writeln!(out, "{},{},{},{},{},{}", pt.p, pt.d, pt.loss, f, ex, f - fit.e_irr).expect("write to string");
    }
    out
}
