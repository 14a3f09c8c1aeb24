use ndarray::Array2;
use proptest::prelude::*;
use tabdpt::contam_check::{fingerprint, matched_features, stat_vectors, StatSpace};
use tabdpt::evalharness::{average_ranks, binary_auc, compute_metrics, elo_ratings, rank_row, win_rate_matrix, ScoreTable};
use tabdpt::infer::Predictions;
use tabdpt::table_store::{RawColumn, RawTable};

fn score_matrix() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2usize..5, 3usize..12).prop_flat_map(|(m, d)| prop::collection::vec(prop::collection::vec(-5i32..5, d), m))
        .prop_map(|rows| rows.into_iter().map(|r| r.into_iter().map(f64::from).collect()).collect())
}

proptest! {
    #[test]
    fn auc_ignores_monotone_rescoring(scores in prop::collection::vec(-3.0f64..3.0, 4..40), flips in prop::collection::vec(any::<bool>(), 40)) {
        let labels: Vec<bool> = flips[..scores.len()].to_vec();
        let a = binary_auc(&scores, &labels);
        let moved: Vec<f64> = scores.iter().map(|s| (2.0 * s).exp() + 1.0).collect();
        prop_assert_eq!(a, binary_auc(&moved, &labels));
        if let Some(v) = a {
            let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
            let b = binary_auc(&scores, &flipped).unwrap();
            prop_assert!((v + b - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ranks_are_a_permutation_average(values in prop::collection::vec(-3i32..3, 1..9)) {
        let v: Vec<f64> = values.iter().map(|&x| f64::from(x)).collect();
        let r = rank_row(&v);
        let n = v.len() as f64;
        prop_assert!((r.iter().sum::<f64>() - n * (n + 1.0) / 2.0).abs() < 1e-9);
        for i in 0..v.len() {
            for j in 0..v.len() {
                if v[i] > v[j] {
                    prop_assert!(r[i] < r[j]);
                }
            }
        }
    }

    #[test]
    fn dataset_order_does_not_change_mean_ranks(scores in score_matrix(), shift in 0usize..11) {
        let t = ScoreTable::dense("accuracy", true, &scores).unwrap();
        let d = scores[0].len();
        let rotated: Vec<Vec<f64>> = scores.iter().map(|r| (0..d).map(|j| r[(j + shift) % d]).collect()).collect();
        let u = ScoreTable::dense("accuracy", true, &rotated).unwrap();
        let a = average_ranks(&t, 0, 1).unwrap();
        let b = average_ranks(&u, 0, 1).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x.rank.estimate - y.rank.estimate).abs() < 1e-12);
        }
    }

    #[test]
    fn win_rates_pair_up(scores in score_matrix()) {
        let t = ScoreTable::dense("accuracy", true, &scores).unwrap();
        let w = win_rate_matrix(&t).unwrap();
        for i in 0..w.len() {
            prop_assert!(w[i][i].is_none());
            for j in 0..w.len() {
                if i != j {
                    prop_assert!((w[i][j].unwrap() + w[j][i].unwrap() - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn elo_follows_orientation(scores in score_matrix()) {
        let t = ScoreTable::dense("accuracy", true, &scores).unwrap();
        let negated: Vec<Vec<f64>> = scores.iter().map(|r| r.iter().map(|v| -v).collect()).collect();
        let u = ScoreTable::dense("rmse", false, &negated).unwrap();
        prop_assert_eq!(
            elo_ratings(&t, 5, 2).unwrap().iter().map(|e| e.rating).collect::<Vec<_>>(),
            elo_ratings(&u, 5, 2).unwrap().iter().map(|e| e.rating).collect::<Vec<_>>()
        );
    }

    #[test]
    fn stat_matching_is_symmetric(a in prop::collection::vec(prop::collection::vec(-2i32..2, 2), 0..8),
                                  b in prop::collection::vec(prop::collection::vec(-2i32..2, 2), 0..8)) {
        let conv = |v: &Vec<Vec<i32>>| v.iter().map(|r| r.iter().map(|&x| f64::from(x)).collect()).collect::<Vec<Vec<f64>>>();
        let (a, b) = (conv(&a), conv(&b));
        let m = matched_features(&a, &b, 1e-3);
        prop_assert_eq!(m, matched_features(&b, &a, 1e-3));
        prop_assert!(m <= a.len().min(b.len()));
    }

    #[test]
    fn shape_moments_survive_positive_affine_maps(
        values in prop::collection::vec(-50i32..50, 8..60),
        scale in 0.01f64..100.0,
        offset in -100.0f64..100.0,
    ) {
        let col: Vec<Option<f64>> = values.iter().map(|&v| Some(f64::from(v) * 0.1)).collect();
        prop_assume!(values.iter().any(|&v| v != values[0]));
        let moved: Vec<Option<f64>> = col.iter().map(|v| v.map(|x| scale * x + offset)).collect();
        let t = RawTable::new("a", vec![RawColumn::numeric("c", col)], None).unwrap();
        let u = RawTable::new("b", vec![RawColumn::numeric("c", moved)], None).unwrap();
        let x = stat_vectors(&fingerprint(&t), StatSpace::ScaleInvariant);
        let y = stat_vectors(&fingerprint(&u), StatSpace::ScaleInvariant);
        prop_assert_eq!(x.len(), 1);
        for (p, q) in x[0].1.iter().zip(&y[0].1) {
            prop_assert!((p - q).abs() <= 1e-6 * p.abs().max(1.0), "{:?} vs {:?}", x, y);
        }
    }
}

#[test]
fn perfect_classifier_metrics() {
    let probs = Array2::from_shape_vec((4, 2), vec![0.9, 0.1, 0.2, 0.8, 0.7, 0.3, 0.4, 0.6]).unwrap();
    let m = compute_metrics(&Predictions::Classification(probs), &[0.0, 1.0, 0.0, 1.0]).unwrap();
    assert_eq!(m.accuracy, Some(1.0));
    assert_eq!(m.auc, Some(1.0));
}
