//! Base-`C_max` decomposition of many-class problems.

use crate::error::{bail, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DigitTaskPlan {
    pub num_classes: usize,
    pub c_max: usize,
    pub num_digits: usize,
    /// `digits[d][i]` is digit `d` (least significant first) of label `i`.
    pub digits: Vec<Vec<usize>>,
}

/// Smallest `n` with `c_max^n >= c`.
pub fn num_digits(c: usize, c_max: usize) -> usize {
    let mut n = 0;
    let mut span = 1usize;
    while span < c {
        span = span.saturating_mul(c_max);
        n += 1;
    }
    n
}

pub fn digit_of(label: usize, d: usize, c_max: usize) -> usize {
    (label / c_max.pow(d as u32)) % c_max
}

/// Number of values digit `d` can take among labels `< c`.
pub fn digit_classes(c: usize, d: usize, c_max: usize) -> usize {
    c.div_ceil(c_max.pow(d as u32)).min(c_max)
}

pub fn plan_digit_tasks(labels: &[usize], c: usize, c_max: usize) -> Result<DigitTaskPlan> {
    if c_max < 2 {
        bail!(Precondition, "C_max must be at least 2");
    }
    if c <= c_max {
        bail!(Precondition, "{c} classes fit in a single pass (C_max = {c_max})");
    }
    if let Some(l) = labels.iter().find(|&&l| l >= c) {
        bail!(Data, "label {l} outside [0, {c})");
    }
    let n = num_digits(c, c_max);
    let digits = (0..n)
        .map(|d| labels.iter().map(|&l| digit_of(l, d, c_max)).collect())
        .collect();
    Ok(DigitTaskPlan {
        num_classes: c,
        c_max,
        num_digits: n,
        digits,
    })
}

/// Joint label distribution from per-digit distributions (least significant
/// digit first): the product of digit probabilities, renormalized over the `c`
/// valid labels. Digit distributions shorter than `c_max` give zero mass to
/// the missing values.
pub fn combine_digit_predictions(per_digit: &[Vec<f64>], c: usize, c_max: usize) -> Vec<f64> {
    let mut joint: Vec<f64> = (0..c)
        .map(|l| {
            per_digit
                .iter()
                .enumerate()
                .map(|(d, p)| p.get(digit_of(l, d, c_max)).copied().unwrap_or(0.0))
                .product()
        })
        .collect();
    let z: f64 = joint.iter().sum();
    if z > 0.0 && z.is_finite() {
        joint.iter_mut().for_each(|v| *v /= z);
    } else {
        joint.iter_mut().for_each(|v| *v = 1.0 / c as f64);
    }
    joint
}
