//! Retrieval inference.
//!
//! Every test row gets its own context: the `K` nearest training rows. The
//! context features (and regression targets) are standardized with context
//! statistics, the same map is applied to the query row, and predictions are
//! averaged over ensemble members that permute feature columns and rotate
//! class indices. More than `C_max` classes are predicted digit by digit in
//! base `C_max`; more than `F_max` features are first reduced by PCA.

mod digits;
mod pca;

use std::fmt::Write as _;

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;

pub use self::digits::{combine_digit_predictions, digit_classes, digit_of, num_digits, plan_digit_tasks, DigitTaskPlan};
pub use self::pca::{reduce_features, Pca};

use crate::batcher::standardize_by_context;
use crate::error::{bail, Result};
use crate::net::{predict as net_predict, ForwardOutput, ModelParams};
use crate::nn_index::NeighborIndex;
use crate::trainer::masked_softmax;
use crate::{seeded_rng, TaskKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InferOptions {
    pub context_size: usize,
    pub ensembles: usize,
    pub seed: u64,
}

impl Default for InferOptions {
    fn default() -> Self {
        InferOptions {
            context_size: 2048,
            ensembles: 8,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Predictions {
    /// `M x C` class probabilities.
    Classification(Array2<f64>),
    Regression(Vec<f64>),
}

impl Predictions {
    pub fn len(&self) -> usize {
        match self {
            Predictions::Classification(p) => p.nrows(),
            Predictions::Regression(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Arg-max class per row (classification only).
    pub fn labels(&self) -> Option<Vec<usize>> {
        match self {
            Predictions::Classification(p) => Some(p.rows().into_iter().map(argmax).collect()),
            Predictions::Regression(_) => None,
        }
    }

    /// CSV `row_id,prediction` or `row_id,p_0,...,p_{C-1}`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        match self {
            Predictions::Regression(v) => {
                out.push_str("row_id,prediction\n");
                for (i, p) in v.iter().enumerate() {
                    writeln!(out, "{i},{p}").expect("write to string");
                }
            }
            Predictions::Classification(p) => {
                out.push_str("row_id");
                for c in 0..p.ncols() {
                    write!(out, ",p_{c}").expect("write to string");
                }
                out.push('\n');
                for (i, row) in p.rows().into_iter().enumerate() {
                    write!(out, "{i}").expect("write to string");
                    for v in row {
                        write!(out, ",{v}").expect("write to string");
                    }
                    out.push('\n');
                }
            }
        }
        out
    }
}

pub fn argmax(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Labelled training rows for inference.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSet {
    pub x: Array2<f64>,
    /// Class index or real target.
    pub y: Vec<f64>,
    pub task: TaskKind,
    /// Number of classes `C` (classification only).
    pub num_classes: usize,
}

impl TrainSet {
    pub fn new(x: Array2<f64>, y: Vec<f64>, task: TaskKind, num_classes: usize) -> Result<Self> {
        if x.nrows() != y.len() {
            bail!(Shape, "{} rows but {} targets", x.nrows(), y.len());
        }
        if x.nrows() == 0 {
            bail!(Precondition, "empty training set");
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            bail!(Precondition, "training set is not finite (unprepared input?)");
        }
        if task == TaskKind::Classification {
            if num_classes < 2 {
                bail!(Precondition, "classification needs at least 2 classes, got {num_classes}");
            }
            if let Some(v) = y.iter().find(|&&v| v < 0.0 || v.fract() != 0.0 || v >= num_classes as f64) {
                bail!(Data, "label {v} outside [0, {num_classes})");
            }
        }
        Ok(TrainSet {
            x,
            y,
            task,
            num_classes,
        })
    }

    pub fn from_supervised(s: &crate::table_store::Supervised) -> Result<Self> {
        TrainSet::new(s.x.clone(), s.y.clone(), s.task, s.num_classes())
    }
}

struct Member {
    perm: Vec<usize>,
    /// Class rotation offset.
    shift: usize,
}

fn members(f: usize, opts: &InferOptions) -> Vec<Member> {
    (0..opts.ensembles)
        .map(|e| {
            let mut perm: Vec<usize> = (0..f).collect();
            if e > 0 {
                perm.shuffle(&mut seeded_rng(opts.seed.wrapping_add(e as u64)));
            }
            Member { perm, shift: e }
        })
        .collect()
}

/// Class probabilities of one query for a `c`-way task whose context labels
/// are `labels`, averaged over ensemble members.
fn classify_one(
    params: &ModelParams<f32>,
    ctx: &Array2<f32>,
    q: &Array2<f32>,
    labels: &[usize],
    c: usize,
    members: &[Member],
) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; c];
    for m in members {
        let shift = m.shift % c;
        let xc = ctx.select(Axis(1), &m.perm);
        let xq = q.select(Axis(1), &m.perm);
        let yc: Vec<f32> = labels.iter().map(|&l| ((l + shift) % c) as f32).collect();
        let (xc, xq) = (pad(&xc, params)?, pad(&xq, params)?);
        let ForwardOutput::Classification(logits) = net_predict(params, xc.view(), &yc, xq.view(), TaskKind::Classification)? else {
            unreachable!("classification head")
        };
        let p = masked_softmax(&logits, c);
        for (k, a) in acc.iter_mut().enumerate() {
            *a += p[[0, (k + shift) % c]];
        }
    }
    let e = members.len() as f64;
    Ok(acc.into_iter().map(|v| v / e).collect())
}

fn regress_one(
    params: &ModelParams<f32>,
    ctx: &Array2<f32>,
    q: &Array2<f32>,
    y: &[f64],
    members: &[Member],
) -> Result<f64> {
    let (mean, sd) = crate::stats::mean_std(y).expect("non-empty context");
    if sd <= 1e-12 * mean.abs().max(1.0) {
        return Ok(mean);
    }
    let yc: Vec<f32> = y.iter().map(|v| ((v - mean) / sd) as f32).collect();
    let mut acc = 0.0;
    for m in members {
        let xc = pad(&ctx.select(Axis(1), &m.perm), params)?;
        let xq = pad(&q.select(Axis(1), &m.perm), params)?;
        let ForwardOutput::Regression(v) = net_predict(params, xc.view(), &yc, xq.view(), TaskKind::Regression)? else {
            unreachable!("regression head")
        };
        acc += v[0] as f64 * sd + mean;
    }
    Ok(acc / members.len() as f64)
}

fn pad(x: &Array2<f32>, params: &ModelParams<f32>) -> Result<Array2<f32>> {
    let f_max = params.config.f_max;
    if x.ncols() > f_max {
        bail!(Shape, "{} features exceed F_max = {f_max}", x.ncols());
    }
    let mut out = Array2::zeros((x.nrows(), f_max));
    out.slice_mut(s![.., ..x.ncols()]).assign(x);
    Ok(out)
}

/// Predict every row of `test` from `train` by per-row retrieval.
pub fn predict(
    params: &ModelParams<f32>,
    train: &TrainSet,
    test: &Array2<f64>,
    opts: &InferOptions,
) -> Result<Predictions> {
    let n = train.x.nrows();
    if opts.context_size == 0 || opts.context_size > n {
        bail!(Precondition, "context size K = {} must be in 1..={n} (training rows)", opts.context_size);
    }
    if opts.ensembles == 0 {
        bail!(Config, "ensembles must be at least 1");
    }
    if test.ncols() != train.x.ncols() {
        bail!(Shape, "test has {} features, train has {}", test.ncols(), train.x.ncols());
    }
    if test.iter().any(|v| !v.is_finite()) {
        bail!(Precondition, "test rows are not finite (unprepared input?)");
    }
    let (tr_x, te_x, _) = reduce_features(&train.x, test, params.config.f_max)?;
    let index = NeighborIndex::from_matrix(tr_x.clone())?;
    let f = tr_x.ncols();
    let members = members(f, opts);
    let k = opts.context_size;

    let rows = (0..te_x.nrows())
        .into_par_iter()
        .map(|i| {
            let q = te_x.row(i);
            let nb = index.query(q, k)?;
            let mut block = concatenate(Axis(0), &[tr_x.select(Axis(0), &nb.row_ids).view(), q.insert_axis(Axis(0))])
                .expect("equal widths");
            standardize_by_context(&mut block, k);
            let block = block.mapv(|v| v as f32);
            let ctx = block.slice(s![..k, ..]).to_owned();
            let qx = block.slice(s![k.., ..]).to_owned();
            let y: Vec<f64> = nb.row_ids.iter().map(|&r| train.y[r]).collect();
            match train.task {
                TaskKind::Regression => Ok(vec![regress_one(params, &ctx, &qx, &y, &members)?]),
                TaskKind::Classification => {
                    let labels: Vec<usize> = y.iter().map(|&v| v as usize).collect();
                    let c = train.num_classes;
                    let c_max = params.config.c_max;
                    if c <= c_max {
                        classify_one(params, &ctx, &qx, &labels, c, &members)
                    } else {
                        let plan = plan_digit_tasks(&labels, c, c_max)?;
                        let per_digit = plan
                            .digits
                            .iter()
                            .enumerate()
                            .map(|(d, dl)| classify_one(params, &ctx, &qx, dl, digit_classes(c, d, c_max), &members))
                            .collect::<Result<Vec<_>>>()?;
                        Ok(combine_digit_predictions(&per_digit, c, c_max))
                    }
                }
            }
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;

    Ok(match train.task {
        TaskKind::Regression => Predictions::Regression(rows.into_iter().map(|r| r[0]).collect()),
        TaskKind::Classification => {
            let c = train.num_classes;
            let mut p = Array2::zeros((rows.len(), c));
            for (i, r) in rows.iter().enumerate() {
                p.row_mut(i).assign(&Array1::from(r.clone()));
            }
            Predictions::Classification(p)
        }
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FewshotResult {
    /// Test probabilities with only the labelled shots as context.
    pub stage1: Array2<f64>,
    /// Test probabilities with shots plus pseudo-labelled pool rows as context.
    pub stage2: Array2<f64>,
    /// Pool rows that were pseudo-labelled, in selection order.
    pub selected: Vec<usize>,
}

/// Pool rows kept for pseudo-labelling.
pub const PSEUDO_LABEL_TOP: usize = 1000;

/// Two-stage semi-supervised prediction. The context size is capped at the
/// size of each stage's corpus.
pub fn fewshot_predict(
    params: &ModelParams<f32>,
    shots: &TrainSet,
    pool: &Array2<f64>,
    test: &Array2<f64>,
    opts: &InferOptions,
) -> Result<FewshotResult> {
    if shots.task != TaskKind::Classification {
        bail!(Precondition, "few-shot prediction is for classification");
    }
    let present: std::collections::BTreeSet<usize> = shots.y.iter().map(|&v| v as usize).collect();
    if present.len() != shots.num_classes {
        bail!(Precondition, "every class needs at least one labelled shot");
    }
    let capped = |n: usize| InferOptions {
        context_size: opts.context_size.min(n),
        ..*opts
    };
    let stage1_opts = capped(shots.x.nrows());
    let Predictions::Classification(stage1) = predict(params, shots, test, &stage1_opts)? else {
        unreachable!()
    };
    if pool.nrows() == 0 {
        return Ok(FewshotResult {
            stage2: stage1.clone(),
            stage1,
            selected: Vec::new(),
        });
    }
    let Predictions::Classification(pool_p) = predict(params, shots, pool, &stage1_opts)? else {
        unreachable!()
    };
    let conf: Vec<f64> = pool_p.rows().into_iter().map(|r| r.fold(0.0f64, |a, &b| a.max(b))).collect();
    let mut order: Vec<usize> = (0..pool.nrows()).collect();
    order.sort_by(|&a, &b| conf[b].total_cmp(&conf[a]).then(a.cmp(&b)));
    order.truncate(PSEUDO_LABEL_TOP);
    let pseudo_y: Vec<f64> = order.iter().map(|&i| argmax(pool_p.row(i)) as f64).collect();
    let x = concatenate(Axis(0), &[shots.x.view(), pool.select(Axis(0), &order).view()]).expect("equal widths");
    let y: Vec<f64> = shots.y.iter().copied().chain(pseudo_y).collect();
    let corpus = TrainSet::new(x, y, TaskKind::Classification, shots.num_classes)?;
    let Predictions::Classification(stage2) = predict(params, &corpus, test, &capped(corpus.x.nrows()))? else {
        unreachable!()
    };
    Ok(FewshotResult {
        stage1,
        stage2,
        selected: order,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::ModelConfig;
    use ndarray::array;
    use rand::Rng;

    fn model() -> ModelParams<f32> {
        ModelParams::init(&ModelConfig::new(1, 16).with_f_max(6), 2).unwrap()
    }

    fn data(n: usize, f: usize, seed: u64) -> Array2<f64> {
        let mut rng = seeded_rng(seed);
        Array2::from_shape_simple_fn((n, f), || rng.random_range(-1.0..1.0))
    }

    #[test]
    fn constant_regression_target_is_returned_exactly() {
        let train = TrainSet::new(data(30, 3, 1), vec![4.25; 30], TaskKind::Regression, 0).unwrap();
        let p = predict(&model(), &train, &data(5, 3, 2), &InferOptions { context_size: 10, ..Default::default() }).unwrap();
        assert_eq!(p, Predictions::Regression(vec![4.25; 5]));
    }

    #[test]
    fn classification_outputs_are_distributions_and_row_independent() {
        let y: Vec<f64> = (0..40).map(|i| (i % 3) as f64).collect();
        let train = TrainSet::new(data(40, 4, 3), y, TaskKind::Classification, 3).unwrap();
        let test = data(6, 4, 4);
        let opts = InferOptions { context_size: 12, ensembles: 3, seed: 5 };
        let Predictions::Classification(p) = predict(&model(), &train, &test, &opts).unwrap() else { panic!() };
        assert_eq!(p.dim(), (6, 3));
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-6 && row.iter().all(|&v| v >= 0.0));
        }
        let Predictions::Classification(one) =
            predict(&model(), &train, &test.slice(s![2..3, ..]).to_owned(), &opts).unwrap()
        else {
            panic!()
        };
        assert_eq!(one.row(0), p.row(2));
        assert_eq!(predict(&model(), &train, &test, &opts).unwrap(), Predictions::Classification(p));
    }

    #[test]
    fn many_classes_use_digits() {
        let y: Vec<f64> = (0..60).map(|i| (i % 25) as f64).collect();
        let train = TrainSet::new(data(60, 2, 6), y, TaskKind::Classification, 25).unwrap();
        let opts = InferOptions { context_size: 20, ensembles: 2, seed: 0 };
        let Predictions::Classification(p) = predict(&model(), &train, &data(3, 2, 7), &opts).unwrap() else { panic!() };
        assert_eq!(p.ncols(), 25);
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn preconditions() {
        let train = TrainSet::new(data(10, 2, 1), vec![0.0; 10], TaskKind::Regression, 0).unwrap();
        let big = InferOptions { context_size: 11, ..Default::default() };
        assert!(predict(&model(), &train, &data(2, 2, 2), &big).is_err());
        assert!(predict(&model(), &train, &data(2, 3, 2), &InferOptions { context_size: 5, ..Default::default() }).is_err());
        assert!(TrainSet::new(array![[f64::NAN]], vec![0.0], TaskKind::Regression, 0).is_err());
    }

    #[test]
    fn empty_pool_is_plain_prediction() {
        let y: Vec<f64> = (0..20).map(|i| (i % 2) as f64).collect();
        let shots = TrainSet::new(data(20, 3, 8), y, TaskKind::Classification, 2).unwrap();
        let test = data(4, 3, 9);
        let opts = InferOptions { context_size: 50, ensembles: 2, seed: 1 };
        let r = fewshot_predict(&model(), &shots, &Array2::zeros((0, 3)), &test, &opts).unwrap();
        assert_eq!(r.stage1, r.stage2);
        let r = fewshot_predict(&model(), &shots, &data(500, 3, 10), &test, &opts).unwrap();
        assert_eq!(r.selected.len(), 500);
    }
}
