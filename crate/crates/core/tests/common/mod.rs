//! Synthetic desk-scale tables shared by the integration tests.
#![allow(dead_code)]

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use tabdpt::batcher::CorpusEntry;
use tabdpt::infer::TrainSet;
use tabdpt::table_store::{prepare, Preprocessor, RawColumn, RawTable};
use tabdpt::{seeded_rng, SeededRng, TaskKind};

pub fn normal(rng: &mut SeededRng) -> f64 {
    rng.sample(StandardNormal)
}

fn numeric_table(name: &str, x: &Array2<f64>, target: Option<(&str, Vec<Option<String>>)>) -> RawTable {
    let mut columns: Vec<RawColumn> = x
        .axis_iter(Axis(1))
        .enumerate()
        .map(|(j, c)| RawColumn::numeric(format!("x{j}"), c.iter().map(|&v| Some(v)).collect()))
        .collect();
    let target = target.map(|(t, values)| {
        columns.push(RawColumn::categorical(t, values));
        t.to_string()
    });
    RawTable::new(name, columns, target).expect("consistent columns")
}

/// Gaussian blobs in `f` dimensions with a categorical label column.
pub fn blobs(name: &str, n: usize, f: usize, k: usize, spread: f64, rng: &mut SeededRng) -> RawTable {
    let centers: Vec<Vec<f64>> = (0..k).map(|_| (0..f).map(|_| 3.0 * normal(rng)).collect()).collect();
    let mut x = Array2::zeros((n, f));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = rng.random_range(0..k);
        for j in 0..f {
            x[[i, j]] = centers[c][j] + spread * normal(rng);
        }
        labels.push(Some(format!("c{c}")));
    }
    numeric_table(name, &x, Some(("label", labels)))
}

/// `y = w.x + noise` with a numeric target column appended.
pub fn linear(name: &str, n: usize, f: usize, noise: f64, rng: &mut SeededRng) -> RawTable {
    let w: Vec<f64> = (0..f).map(|_| normal(rng)).collect();
    let x = Array2::from_shape_simple_fn((n, f), || normal(rng));
    let y: Vec<f64> = x.rows().into_iter().map(|r| r.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + noise * normal(rng)).collect();
    let mut t = numeric_table(name, &x, None);
    t.columns.push(RawColumn::numeric("y", y.into_iter().map(Some).collect()));
    RawTable::new(name, t.columns, Some("y".into())).expect("consistent columns")
}

/// Smooth nonlinear dependencies between columns.
pub fn nonlinear(name: &str, n: usize, rng: &mut SeededRng) -> RawTable {
    let mut x = Array2::zeros((n, 6));
    for i in 0..n {
        let a = rng.random_range(-2.0..2.0);
        let b = rng.random_range(-2.0..2.0);
        let c = normal(rng);
        x[[i, 0]] = a;
        x[[i, 1]] = b;
        x[[i, 2]] = c;
        x[[i, 3]] = a.sin() + 0.5 * b + 0.05 * normal(rng);
        x[[i, 4]] = a * b + 0.1 * normal(rng);
        x[[i, 5]] = (c * c) - a + 0.1 * normal(rng);
    }
    RawTable::from_matrix(name, &x, None)
}

/// Correlated Gaussian columns from a random mixing matrix.
pub fn correlated(name: &str, n: usize, f: usize, rng: &mut SeededRng) -> RawTable {
    let mix = Array2::from_shape_simple_fn((f, f), || normal(rng));
    let z = Array2::from_shape_simple_fn((n, f), || normal(rng));
    RawTable::from_matrix(name, &z.dot(&mix), None)
}

/// Two interleaved half-moons with a noisy radius column.
pub fn moons(name: &str, n: usize, rng: &mut SeededRng) -> RawTable {
    let mut x = Array2::zeros((n, 3));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = rng.random_range(0..2);
        let t = rng.random_range(0.0..std::f64::consts::PI);
        let (px, py) = if c == 0 { (t.cos(), t.sin()) } else { (1.0 - t.cos(), 0.5 - t.sin()) };
        x[[i, 0]] = px + 0.1 * normal(rng);
        x[[i, 1]] = py + 0.1 * normal(rng);
        x[[i, 2]] = (px * px + py * py).sqrt() + 0.05 * normal(rng);
        labels.push(Some(format!("m{c}")));
    }
    numeric_table(name, &x, Some(("label", labels)))
}

/// Piecewise-constant target from thresholds on two features, plus a categorical driver.
pub fn mixed(name: &str, n: usize, rng: &mut SeededRng) -> RawTable {
    let cats = ["red", "green", "blue", "grey"];
    let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(n); 4];
    let mut cat = Vec::with_capacity(n);
    for _ in 0..n {
        let k = rng.random_range(0..4);
        let a = normal(rng);
        let b = normal(rng) + k as f64;
        cols[0].push(a);
        cols[1].push(b);
        cols[2].push(if a > 0.0 { 2.0 } else { -1.0 } + 0.7 * k as f64 + 0.1 * normal(rng));
        cols[3].push(a - 0.5 * b + 0.2 * normal(rng));
        cat.push(Some(cats[k].to_string()));
    }
    let mut columns: Vec<RawColumn> = cols
        .into_iter()
        .enumerate()
        .map(|(j, v)| RawColumn::numeric(format!("x{j}"), v.into_iter().map(Some).collect()))
        .collect();
    columns.push(RawColumn::categorical("colour", cat));
    RawTable::new(name, columns, Some("colour".into())).expect("consistent columns")
}

/// The six training tables. Each has a designated target so the same corpus
/// serves the fixed-target ablation.
pub fn desk_corpus(seed: u64) -> Vec<RawTable> {
    let mut rng = seeded_rng(seed);
    let with_target = |mut t: RawTable, col: &str| {
        t.target = Some(col.to_string());
        t
    };
    let b = blobs("blobs", 400, 5, 3, 0.8, &mut rng);
    let l = linear("linear", 400, 6, 0.1, &mut rng);
    let nl = with_target(nonlinear("nonlinear", 400, &mut rng), "x3");
    let c = with_target(correlated("correlated", 400, 6, &mut rng), "x5");
    let m = moons("moons", 400, &mut rng);
    let mx = mixed("mixed", 400, &mut rng);
    vec![b, l, nl, c, m, mx]
}

pub fn corpus_entries(tables: &[RawTable]) -> Vec<CorpusEntry> {
    tables
        .iter()
        .map(|t| CorpusEntry::new(prepare(t).expect("prepare")).expect("index"))
        .collect()
}

/// A supervised table split into a prepared train set and prepared test rows
/// (pipeline fitted on the train rows only).
pub struct Split {
    pub train: TrainSet,
    pub test_x: Array2<f64>,
    pub test_y: Vec<f64>,
}

pub fn split_supervised(table: &RawTable, n_train: usize, task: TaskKind) -> Split {
    let n = table.n_rows;
    let train_raw = table.permute_rows(&(0..n_train).collect::<Vec<_>>());
    let test_raw = table.permute_rows(&(n_train..n).collect::<Vec<_>>());
    let pipe = Preprocessor::fit(&train_raw).expect("fit");
    let tr = pipe.transform(&train_raw).expect("transform").with_task(task).supervised(None).expect("supervised");
    let te = pipe
        .transform(&test_raw)
        .expect("transform")
        .with_task(task)
        .supervised(Some(&tr.classes))
        .expect("supervised");
    Split {
        train: TrainSet::from_supervised(&tr).expect("train set"),
        test_x: te.x,
        test_y: te.y,
    }
}

/// Held-out two-Gaussian classification table.
pub fn two_gaussians(n: usize, f: usize, separation: f64, seed: u64) -> RawTable {
    let mut rng = seeded_rng(seed);
    let dir: Array1<f64> = Array1::from_shape_simple_fn(f, || normal(&mut rng));
    let dir = &dir / dir.dot(&dir).sqrt();
    let mut x = Array2::zeros((n, f));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = rng.random_range(0..2);
        let sign = if c == 0 { -0.5 } else { 0.5 };
        for j in 0..f {
            x[[i, j]] = sign * separation * dir[j] + normal(&mut rng);
        }
        labels.push(Some(format!("g{c}")));
    }
    numeric_table("two_gaussians", &x, Some(("label", labels)))
}

/// Like `two_gaussians`, but samples landing within `gap / 2` of the boundary
/// (or on the wrong side) are redrawn, so the classes are linearly separable.
pub fn separable_gaussians(n: usize, f: usize, separation: f64, gap: f64, seed: u64) -> RawTable {
    let mut rng = seeded_rng(seed);
    let dir: Array1<f64> = Array1::from_shape_simple_fn(f, || normal(&mut rng));
    let dir = &dir / dir.dot(&dir).sqrt();
    let mut x = Array2::zeros((n, f));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = rng.random_range(0..2);
        let sign = if c == 0 { -0.5 } else { 0.5 };
        loop {
            let row: Array1<f64> = dir.mapv(|d| sign * separation * d + normal(&mut rng));
            if row.dot(&dir) * sign.signum() >= gap / 2.0 {
                x.row_mut(i).assign(&row);
                break;
            }
        }
        labels.push(Some(format!("g{c}")));
    }
    numeric_table("separable_gaussians", &x, Some(("label", labels)))
}

pub fn accuracy(labels: &[usize], truth: &[f64]) -> f64 {
    labels.iter().zip(truth).filter(|(a, b)| **a as f64 == **b).count() as f64 / truth.len() as f64
}

/// CSV text of a raw table (shortest round-trip numbers, empty cells for missing).
pub fn csv_text(table: &RawTable) -> String {
    use tabdpt::table_store::RawValues;
    let mut out = table.columns.iter().map(|c| c.name.clone()).collect::<Vec<_>>().join(",");
    out.push('\n');
    for i in 0..table.n_rows {
        let cells: Vec<String> = table
            .columns
            .iter()
            .map(|c| match &c.values {
                RawValues::Numeric(v) => v[i].map(|x| format!("{x}")).unwrap_or_default(),
                RawValues::Categorical(v) => v[i].clone().unwrap_or_default(),
            })
            .collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Parity of the unit cell containing `(x0, x1)`, with two noise columns.
pub fn checkerboard(name: &str, n: usize, rng: &mut SeededRng) -> RawTable {
    let mut x = Array2::zeros((n, 4));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let (a, b) = (rng.random_range(-2.0..2.0f64), rng.random_range(-2.0..2.0f64));
        x[[i, 0]] = a;
        x[[i, 1]] = b;
        x[[i, 2]] = normal(rng);
        x[[i, 3]] = normal(rng);
        labels.push(Some(format!("p{}", (a.floor() + b.floor()).rem_euclid(2.0))));
    }
    numeric_table(name, &x, Some(("label", labels)))
}

/// Class = number of positive coordinates among the first four.
pub fn sign_count(name: &str, n: usize, rng: &mut SeededRng) -> RawTable {
    let x = Array2::from_shape_simple_fn((n, 5), || normal(rng));
    let labels = x
        .rows()
        .into_iter()
        .map(|r| Some(format!("k{}", r.iter().take(4).filter(|v| **v > 0.0).count())))
        .collect();
    numeric_table(name, &x, Some(("label", labels)))
}

/// Radius bands of a 2-D Gaussian cloud.
pub fn rings(name: &str, n: usize, rng: &mut SeededRng) -> RawTable {
    let mut x = Array2::zeros((n, 3));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let (a, b) = (normal(rng), normal(rng));
        x[[i, 0]] = a;
        x[[i, 1]] = b;
        x[[i, 2]] = normal(rng);
        let r = (a * a + b * b).sqrt();
        labels.push(Some(format!("r{}", if r < 0.8 { 0 } else if r < 1.6 { 1 } else { 2 })));
    }
    numeric_table(name, &x, Some(("label", labels)))
}

/// `10 sin(pi x0 x1) + 20 (x2 - 0.5)^2 + 10 x3 + 5 x4 + noise` on uniform inputs.
pub fn friedman(name: &str, n: usize, rng: &mut SeededRng) -> RawTable {
    let x = Array2::from_shape_simple_fn((n, 5), || rng.random::<f64>());
    let y: Vec<f64> = x
        .rows()
        .into_iter()
        .map(|r| {
            10.0 * (std::f64::consts::PI * r[0] * r[1]).sin() + 20.0 * (r[2] - 0.5).powi(2) + 10.0 * r[3] + 5.0 * r[4]
                + normal(rng)
        })
        .collect();
    let mut t = numeric_table(name, &x, None);
    t.columns.push(RawColumn::numeric("y", y.into_iter().map(Some).collect()));
    RawTable::new(name, t.columns, Some("y".into())).expect("consistent columns")
}

/// `y = x0 x1 + |x2| + noise`.
pub fn interaction(name: &str, n: usize, rng: &mut SeededRng) -> RawTable {
    let x = Array2::from_shape_simple_fn((n, 4), || normal(rng));
    let y: Vec<f64> = x.rows().into_iter().map(|r| r[0] * r[1] + r[2].abs() + 0.1 * normal(rng)).collect();
    let mut t = numeric_table(name, &x, None);
    t.columns.push(RawColumn::numeric("y", y.into_iter().map(Some).collect()));
    RawTable::new(name, t.columns, Some("y".into())).expect("consistent columns")
}

/// Numeric target set by a categorical column plus a linear term.
pub fn grouped(name: &str, n: usize, rng: &mut SeededRng) -> RawTable {
    let shift = [-2.0, 0.5, 1.0, 3.0, -0.5];
    let mut cols: Vec<Vec<Option<f64>>> = vec![Vec::with_capacity(n); 3];
    let mut cat = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let g = rng.random_range(0..shift.len());
        let (a, b) = (normal(rng), normal(rng));
        cols[0].push(Some(a));
        cols[1].push(Some(b));
        y.push(Some(shift[g] + 0.8 * a + 0.2 * normal(rng)));
        cat.push(Some(format!("g{g}")));
    }
    cols[2] = y;
    let mut columns = vec![
        RawColumn::numeric("a", cols[0].clone()),
        RawColumn::numeric("b", cols[1].clone()),
        RawColumn::categorical("group", cat),
    ];
    columns.push(RawColumn::numeric("y", cols[2].clone()));
    RawTable::new(name, columns, Some("y".into())).expect("consistent columns")
}

/// Held-out tables from generator families absent from the training corpus.
pub fn unseen_suite(seed: u64) -> Vec<RawTable> {
    let mut rng = seeded_rng(seed);
    vec![
        checkerboard("unseen_checkerboard", 600, &mut rng),
        sign_count("unseen_sign_count", 600, &mut rng),
        rings("unseen_rings", 600, &mut rng),
        friedman("unseen_friedman", 600, &mut rng),
        interaction("unseen_interaction", 600, &mut rng),
        grouped("unseen_grouped", 600, &mut rng),
    ]
}
