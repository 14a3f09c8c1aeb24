//! Static k-d tree over a small set of points for nearest-neighbour and box queries.

use std::cmp::Ordering;

#[derive(Clone, Debug)]
pub struct KdTree {
    points: Vec<Vec<f64>>,
    dim: usize,
    root: Option<Box<Node>>,
}

#[derive(Clone, Debug)]
struct Node {
    idx: usize,
    axis: usize,
    left: Option<Box<Node>>,
    right: Option<Box<Node>>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl KdTree {
    /// All points must have the same dimension.
    pub fn build(points: Vec<Vec<f64>>) -> Self {
        let dim = points.first().map_or(0, Vec::len);
        assert!(points.iter().all(|p| p.len() == dim), "k-d tree points differ in dimension");
        let mut ids: Vec<usize> = (0..points.len()).collect();
        let root = Self::split(&points, &mut ids, 0, dim);
        KdTree { points, dim, root }
    }

    fn split(points: &[Vec<f64>], ids: &mut [usize], depth: usize, dim: usize) -> Option<Box<Node>> {
        if ids.is_empty() {
            return None;
        }
        let axis = depth % dim.max(1);
        ids.sort_by(|&a, &b| points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b)));
        let mid = ids.len() / 2;
        let idx = ids[mid];
        let (lo, rest) = ids.split_at_mut(mid);
        Some(Box::new(Node {
            idx,
            axis,
            left: Self::split(points, lo, depth + 1, dim),
            right: Self::split(points, &mut rest[1..], depth + 1, dim),
        }))
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Closest point by Euclidean distance; ties go to the lower index.
    pub fn nearest(&self, q: &[f64]) -> Option<(usize, f64)> {
        assert_eq!(q.len(), self.dim);
        let mut best: Option<(usize, f64)> = None;
        self.nearest_in(self.root.as_deref(), q, &mut best);
        best.map(|(i, d)| (i, d.sqrt()))
    }

    fn nearest_in(&self, node: Option<&Node>, q: &[f64], best: &mut Option<(usize, f64)>) {
        let Some(n) = node else { return };
        let d = sq_dist(&self.points[n.idx], q);
        let better = match *best {
            None => true,
            Some((bi, bd)) => match d.total_cmp(&bd) {
                Ordering::Less => true,
                Ordering::Equal => n.idx < bi,
                Ordering::Greater => false,
            },
        };
        if better {
            *best = Some((n.idx, d));
        }
        let diff = q[n.axis] - self.points[n.idx][n.axis];
        let (near, far) = if diff < 0.0 { (&n.left, &n.right) } else { (&n.right, &n.left) };
        self.nearest_in(near.as_deref(), q, best);
        // equality keeps lower-index ties reachable
        if best.is_none_or(|(_, bd)| diff * diff <= bd) {
            self.nearest_in(far.as_deref(), q, best);
        }
    }

    /// Indices of points inside the closed box `[lo, hi]`, ascending.
    pub fn within_box(&self, lo: &[f64], hi: &[f64]) -> Vec<usize> {
        let mut out = Vec::new();
        self.box_in(self.root.as_deref(), lo, hi, &mut out);
        out.sort_unstable();
        out
    }

    fn box_in(&self, node: Option<&Node>, lo: &[f64], hi: &[f64], out: &mut Vec<usize>) {
        let Some(n) = node else { return };
        let p = &self.points[n.idx];
        if p.iter().zip(lo.iter().zip(hi)).all(|(v, (l, h))| v >= l && v <= h) {
            out.push(n.idx);
        }
        let v = p[n.axis];
        if lo[n.axis] <= v {
            self.box_in(n.left.as_deref(), lo, hi, out);
        }
        if hi[n.axis] >= v {
            self.box_in(n.right.as_deref(), lo, hi, out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_nearest(points: &[Vec<f64>], q: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (i, p) in points.iter().enumerate() {
            let d = sq_dist(p, q);
            if d < best.1 {
                best = (i, d);
            }
        }
        (best.0, best.1.sqrt())
    }

    proptest! {
        #[test]
        fn nearest_matches_linear_scan(
            pts in prop::collection::vec(prop::collection::vec(-3i32..3, 4), 1..60),
            q in prop::collection::vec(-4i32..4, 4),
        ) {
            // integer grids produce many exact ties
            let points: Vec<Vec<f64>> = pts.iter().map(|p| p.iter().map(|&v| v as f64).collect()).collect();
            let q: Vec<f64> = q.iter().map(|&v| v as f64).collect();
            let tree = KdTree::build(points.clone());
            prop_assert_eq!(tree.nearest(&q).unwrap(), brute_nearest(&points, &q));
        }

        #[test]
        fn box_matches_linear_scan(
            pts in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 2), 0..80),
            c in prop::collection::vec(-5.0f64..5.0, 2),
            w in 0.0f64..3.0,
        ) {
            let tree = KdTree::build(pts.clone());
            let lo: Vec<f64> = c.iter().map(|v| v - w).collect();
            let hi: Vec<f64> = c.iter().map(|v| v + w).collect();
            let want: Vec<usize> = (0..pts.len())
                .filter(|&i| pts[i].iter().zip(lo.iter().zip(&hi)).all(|(v, (l, h))| v >= l && v <= h))
                .collect();
            prop_assert_eq!(tree.within_box(&lo, &hi), want);
        }
    }
}
