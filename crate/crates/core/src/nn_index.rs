//! Exact L2 nearest-neighbour retrieval by linear scan.
//!
//! Squared distances are ranked with ties broken by ascending row id; the
//! reported distances are their square roots.

use std::cmp::Ordering;

use ndarray::{Array2, ArrayView1};

use crate::error::{bail, Result};
use crate::table_store::PreparedTable;

#[derive(Clone, Debug)]
pub struct NeighborIndex {
    data: Array2<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeighborResult {
    pub row_ids: Vec<usize>,
    pub distances: Vec<f64>,
}

impl NeighborIndex {
    pub fn build(table: &PreparedTable) -> Result<Self> {
        Self::from_matrix(table.data.clone())
    }

    pub fn from_matrix(data: Array2<f64>) -> Result<Self> {
        if data.nrows() == 0 {
            bail!(Precondition, "cannot index an empty table");
        }
        Ok(NeighborIndex { data })
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn size(&self) -> usize {
        self.data.nrows()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn query(&self, point: ArrayView1<'_, f64>, k: usize) -> Result<NeighborResult> {
        self.check(point, k)?;
        let mut scored: Vec<(f64, usize)> = self
            .data
            .rows()
            .into_iter()
            .enumerate()
            .map(|(i, row)| (squared_l2(row, point), i))
            .collect();
        let order = |a: &(f64, usize), b: &(f64, usize)| neighbor_order(*a, *b);
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, order);
            scored.truncate(k);
        }
        scored.sort_unstable_by(order);
        Ok(NeighborResult {
            row_ids: scored.iter().map(|s| s.1).collect(),
            distances: scored.iter().map(|s| s.0.sqrt()).collect(),
        })
    }

    /// Query with `point[masked_col]` replaced by `0` (the standardized mean).
    /// Indexed rows are left untouched.
    pub fn query_masked(&self, point: ArrayView1<'_, f64>, masked_col: usize, k: usize) -> Result<NeighborResult> {
        if masked_col >= self.dim() {
            bail!(Precondition, "masked column {masked_col} out of range for dimension {}", self.dim());
        }
        let mut p = point.to_owned();
        p[masked_col] = 0.0;
        self.query(p.view(), k)
    }

    fn check(&self, point: ArrayView1<'_, f64>, k: usize) -> Result<()> {
        if point.len() != self.dim() {
            bail!(Shape, "query has dimension {}, index has {}", point.len(), self.dim());
        }
        if k == 0 || k > self.size() {
            bail!(Precondition, "k = {k} must be in 1..={} (index size)", self.size());
        }
        if point.iter().any(|v| !v.is_finite()) {
            bail!(Precondition, "query point is not finite");
        }
        Ok(())
    }
}

fn squared_l2(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Compare two neighbours by (distance, id).
pub fn neighbor_order(a: (f64, usize), b: (f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn one_dimensional_hand_check() {
        let idx = NeighborIndex::from_matrix(array![[-1.0], [0.1], [5.0]]).unwrap();
        let r = idx.query(array![0.0].view(), 2).unwrap();
        assert_eq!(r.row_ids, vec![1, 0]);
        assert!((r.distances[0] - 0.1).abs() < 1e-15);
        assert_eq!(r.distances[1], 1.0);
    }

    #[test]
    fn single_row_table() {
        let idx = NeighborIndex::from_matrix(array![[3.0, 4.0]]).unwrap();
        let r = idx.query(array![0.0, 0.0].view(), 1).unwrap();
        assert_eq!(r.row_ids, vec![0]);
        assert_eq!(r.distances, vec![5.0]);
    }

    #[test]
    fn ties_prefer_lower_row_id() {
        let idx = NeighborIndex::from_matrix(array![[1.0], [2.0], [1.0], [0.0]]).unwrap();
        let r = idx.query(array![1.0].view(), 2).unwrap();
        assert_eq!(r.row_ids, vec![0, 2]);
        let all = idx.query(array![1.0].view(), 4).unwrap();
        assert_eq!(all.row_ids, vec![0, 2, 1, 3]);
    }

    #[test]
    fn masked_query_hand_check() {
        let idx = NeighborIndex::from_matrix(array![[0.0, 0.0], [0.0, 9.0]]).unwrap();
        let r = idx.query_masked(array![0.0, 9.0].view(), 1, 1).unwrap();
        assert_eq!(r.row_ids, vec![0]);
        assert_eq!(r.distances, vec![0.0]);
        // masking an already-zero coordinate is a no-op
        let p = array![0.5, 0.0];
        assert_eq!(idx.query_masked(p.view(), 1, 2).unwrap(), idx.query(p.view(), 2).unwrap());
    }

    #[test]
    fn errors() {
        let idx = NeighborIndex::from_matrix(array![[0.0], [1.0]]).unwrap();
        assert!(idx.query(array![0.0].view(), 3).is_err());
        assert!(idx.query(array![0.0, 1.0].view(), 1).is_err());
        assert!(idx.query(array![f64::NAN].view(), 1).is_err());
        assert!(idx.query_masked(array![0.0].view(), 1, 1).is_err());
        assert!(NeighborIndex::from_matrix(Array2::zeros((0, 2))).is_err());
    }

    proptest! {
        #[test]
        fn result_for_k_is_prefix_of_k_plus_one(
            pts in prop::collection::vec(-3i32..3, 6..60),
            q in -3i32..3,
            k in 1usize..5,
        ) {
            let n = pts.len() / 2;
            let data = Array2::from_shape_fn((n, 2), |(i, j)| pts[2 * i + j] as f64);
            let idx = NeighborIndex::from_matrix(data).unwrap();
            let p = ndarray::arr1(&[q as f64, 0.5]);
            let k = k.min(n - 1);
            let a = idx.query(p.view(), k).unwrap();
            let b = idx.query(p.view(), k + 1).unwrap();
            prop_assert_eq!(&a.row_ids[..], &b.row_ids[..k]);
            prop_assert!(b.distances.windows(2).all(|w| w[0] <= w[1]));
        }

        #[test]
        fn self_query_returns_first_duplicate(pts in prop::collection::vec(-2i32..2, 4..40), pick in 0usize..20) {
            let n = pts.len();
            let data = Array2::from_shape_fn((n, 1), |(i, _)| pts[i] as f64);
            let idx = NeighborIndex::from_matrix(data).unwrap();
            let i = pick % n;
            let r = idx.query(ndarray::arr1(&[pts[i] as f64]).view(), 1).unwrap();
            let first = pts.iter().position(|&v| v == pts[i]).unwrap();
            prop_assert_eq!(r.row_ids[0], first);
            prop_assert_eq!(r.distances[0], 0.0);
        }
    }
}
