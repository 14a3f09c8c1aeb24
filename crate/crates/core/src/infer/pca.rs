//! Principal components fitted on training rows.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, Axis};

use crate::error::{bail, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Pca {
    pub mean: Array1<f64>,
    /// `F x k`, columns ordered by descending explained variance.
    pub components: Array2<f64>,
    pub variances: Vec<f64>,
}

impl Pca {
    /// Top `k` components of the population covariance of `x`. Each
    /// component's largest-magnitude loading is made positive.
    pub fn fit(x: &Array2<f64>, k: usize) -> Result<Self> {
        let (n, f) = x.dim();
        if n == 0 || k == 0 || k > f {
            bail!(Precondition, "cannot fit {k} components to a {n} x {f} matrix");
        }
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let centered = x - &mean;
        let cov = centered.t().dot(&centered) / n as f64;
        let m = DMatrix::from_fn(f, f, |i, j| cov[[i, j]]);
        let eig = SymmetricEigen::new(m);
        let mut order: Vec<usize> = (0..f).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let mut components = Array2::zeros((f, k));
        let mut variances = Vec::with_capacity(k);
        for (c, &idx) in order.iter().take(k).enumerate() {
            let v = eig.eigenvectors.column(idx);
            let mut pivot = 0;
            for i in 1..f {
                if v[i].abs() > v[pivot].abs() {
                    pivot = i;
                }
            }
            let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
            for i in 0..f {
                components[[i, c]] = sign * v[i];
            }
            variances.push(eig.eigenvalues[idx].max(0.0));
        }
        Ok(Pca {
            mean,
            components,
            variances,
        })
    }

    pub fn transform(&self, x: &Array2<f64>) -> Array2<f64> {
        (x - &self.mean).dot(&self.components)
    }

    pub fn inverse(&self, z: &Array2<f64>) -> Array2<f64> {
        z.dot(&self.components.t()) + &self.mean
    }
}

/// Project both splits onto the top `f_max` train components when there are
/// more than `f_max` features; otherwise return them unchanged.
pub fn reduce_features(
    train: &Array2<f64>,
    test: &Array2<f64>,
    f_max: usize,
) -> Result<(Array2<f64>, Array2<f64>, Option<Pca>)> {
    if train.ncols() != test.ncols() {
        bail!(Shape, "train has {} features, test has {}", train.ncols(), test.ncols());
    }
    if train.ncols() <= f_max {
        return Ok((train.clone(), test.clone(), None));
    }
    let pca = Pca::fit(train, f_max)?;
    Ok((pca.transform(train), pca.transform(test), Some(pca)))
}
