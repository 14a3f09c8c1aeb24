//! Table ingestion and preparation.
//!
//! Raw columns are label-encoded (categories in lexicographic order),
//! z-scored with population statistics over the non-missing entries, clipped
//! to `[-10, 10]`, and missing cells are then set to `0` (the column mean).
//! Constant columns become all zeros.

mod binary;
mod csv;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;

pub use self::binary::{read_prepared, write_prepared, TABLE_MAGIC};
pub use self::csv::{load_csv, parse_csv};
use crate::error::{bail, Result};
use crate::{seeded_rng, TaskKind};

/// Absolute clip bound applied after standardization.
pub const CLIP: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Clone, Debug, PartialEq)]
pub enum RawValues {
    Numeric(Vec<Option<f64>>),
    Categorical(Vec<Option<String>>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawColumn {
    pub name: String,
    pub values: RawValues,
}

impl RawColumn {
    pub fn numeric(name: impl Into<String>, values: Vec<Option<f64>>) -> Self {
        RawColumn {
            name: name.into(),
            values: RawValues::Numeric(values),
        }
    }

    pub fn categorical(name: impl Into<String>, values: Vec<Option<String>>) -> Self {
        RawColumn {
            name: name.into(),
            values: RawValues::Categorical(values),
        }
    }

    pub fn kind(&self) -> ColumnKind {
        match self.values {
            RawValues::Numeric(_) => ColumnKind::Numeric,
            RawValues::Categorical(_) => ColumnKind::Categorical,
        }
    }

    pub fn len(&self) -> usize {
        match &self.values {
            RawValues::Numeric(v) => v.len(),
            RawValues::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawTable {
    pub name: String,
    pub columns: Vec<RawColumn>,
    pub n_rows: usize,
    /// Designated supervised target column, if any.
    pub target: Option<String>,
}

impl RawTable {
    pub fn new(name: impl Into<String>, columns: Vec<RawColumn>, target: Option<String>) -> Result<Self> {
        let name = name.into();
        let n_rows = columns.first().map_or(0, RawColumn::len);
        if let Some(c) = columns.iter().find(|c| c.len() != n_rows) {
            bail!(Data, "{name}: column {} has {} rows, expected {n_rows}", c.name, c.len());
        }
        if let Some(t) = &target {
            if !columns.iter().any(|c| &c.name == t) {
                bail!(Data, "{name}: target column {t:?} not present");
            }
        }
        Ok(RawTable {
            name,
            columns,
            n_rows,
            target,
        })
    }

    /// Build a numeric table from a dense row-major matrix.
    pub fn from_matrix(name: impl Into<String>, x: &Array2<f64>, names: Option<&[String]>) -> Self {
        let columns = x
            .axis_iter(Axis(1))
            .enumerate()
            .map(|(j, col)| {
                let n = names.map_or_else(|| format!("x{j}"), |n| n[j].clone());
                RawColumn::numeric(n, col.iter().map(|&v| Some(v)).collect())
            })
            .collect();
        RawTable {
            name: name.into(),
            columns,
            n_rows: x.nrows(),
            target: None,
        }
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn target_index(&self) -> Option<usize> {
        let t = self.target.as_ref()?;
        self.columns.iter().position(|c| &c.name == t)
    }

    /// Reorder rows: row `i` of the result is row `perm[i]` of `self`.
    pub fn permute_rows(&self, perm: &[usize]) -> RawTable {
        let columns = self
            .columns
            .iter()
            .map(|c| RawColumn {
                name: c.name.clone(),
                values: match &c.values {
                    RawValues::Numeric(v) => RawValues::Numeric(perm.iter().map(|&i| v[i]).collect()),
                    RawValues::Categorical(v) => {
                        RawValues::Categorical(perm.iter().map(|&i| v[i].clone()).collect())
                    }
                },
            })
            .collect();
        RawTable {
            name: self.name.clone(),
            columns,
            n_rows: perm.len(),
            target: self.target.clone(),
        }
    }
}

/// Fitted per-column encoder: category order plus standardization statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct ColumnEncoder {
    pub name: String,
    pub kind: ColumnKind,
    /// Lexicographically sorted categories; empty for numeric columns.
    pub categories: Vec<String>,
    pub mean: f64,
    pub std: f64,
}

impl ColumnEncoder {
    pub fn is_constant(&self) -> bool {
        !(self.std > 1e-12 * self.mean.abs().max(1.0))
    }

    /// Numeric value before standardization (category code for categoricals).
    fn encode(&self, values: &RawValues, row: usize) -> Option<f64> {
        match values {
            RawValues::Numeric(v) => v[row],
            RawValues::Categorical(v) => v[row].as_ref().and_then(|s| {
                self.categories
                    .binary_search(s)
                    .ok()
                    .map(|code| code as f64)
            }),
        }
    }

    fn standardize(&self, v: f64) -> f64 {
        if self.is_constant() {
            0.0
        } else {
            ((v - self.mean) / self.std).clamp(-CLIP, CLIP)
        }
    }
}

/// Supervised target metadata carried by a prepared table.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetInfo {
    /// Column index of the target within `data`.
    pub column: usize,
    pub task: TaskKind,
    /// Unstandardized encoded target (category code or raw number).
    pub raw: Vec<Option<f64>>,
}

/// Encoders and statistics fitted on one table and applicable to others.
#[derive(Clone, Debug, PartialEq)]
pub struct Preprocessor {
    pub encoders: Vec<ColumnEncoder>,
    pub target: Option<String>,
}

impl Preprocessor {
    pub fn fit(raw: &RawTable) -> Result<Self> {
        if raw.n_rows == 0 || raw.columns.is_empty() {
            bail!(Data, "{}: cannot prepare an empty table", raw.name);
        }
        let encoders = raw
            .columns
            .iter()
            .map(|col| {
                let categories = match &col.values {
                    RawValues::Numeric(_) => Vec::new(),
                    RawValues::Categorical(v) => {
                        let mut cats: Vec<String> = v.iter().flatten().cloned().collect();
                        cats.sort();
                        cats.dedup();
                        cats
                    }
                };
                let mut enc = ColumnEncoder {
                    name: col.name.clone(),
                    kind: col.kind(),
                    categories,
                    mean: 0.0,
                    std: 0.0,
                };
                let present: Vec<f64> = (0..raw.n_rows).filter_map(|i| enc.encode(&col.values, i)).collect();
                if let Some((m, s)) = crate::stats::mean_std(&present) {
                    enc.mean = m;
                    enc.std = s;
                }
                enc
            })
            .collect();
        Ok(Preprocessor {
            encoders,
            target: raw.target.clone(),
        })
    }

    /// Apply the fitted pipeline. Columns are matched by position and name;
    /// unseen categories are treated as missing.
    pub fn transform(&self, raw: &RawTable) -> Result<PreparedTable> {
        if raw.columns.len() != self.encoders.len() {
            bail!(
                Shape,
                "{}: {} columns, pipeline was fitted on {}",
                raw.name,
                raw.columns.len(),
                self.encoders.len()
            );
        }
        for (c, e) in raw.columns.iter().zip(&self.encoders) {
            if c.name != e.name {
                bail!(Data, "{}: column {:?} where {:?} was expected", raw.name, c.name, e.name);
            }
            if e.kind == ColumnKind::Numeric && c.kind() == ColumnKind::Categorical {
                bail!(Data, "{}: column {:?} is not numeric", raw.name, c.name);
            }
        }
        let (n, f) = (raw.n_rows, raw.columns.len());
        let mut data = Array2::<f64>::zeros((n, f));
        let mut missing = Array2::from_elem((n, f), false);
        let mut enc_values: Vec<Vec<Option<f64>>> = Vec::with_capacity(f);
        for (j, (col, enc)) in raw.columns.iter().zip(&self.encoders).enumerate() {
            let values = match (&col.values, enc.kind) {
                // a categorical encoder may receive a column that parsed as numeric
                (RawValues::Numeric(v), ColumnKind::Categorical) => RawValues::Categorical(
                    v.iter().map(|x| x.map(|x| x.to_string())).collect(),
                ),
                (v, _) => v.clone(),
            };
            let encoded: Vec<Option<f64>> = (0..n).map(|i| enc.encode(&values, i)).collect();
            for (i, v) in encoded.iter().enumerate() {
                match v {
                    Some(v) => data[[i, j]] = enc.standardize(*v),
                    None => missing[[i, j]] = true,
                }
            }
            enc_values.push(encoded);
        }
        let target = match &self.target {
            Some(t) => {
                let column = self
                    .encoders
                    .iter()
                    .position(|e| &e.name == t)
                    .expect("target validated at fit time");
                let task = match self.encoders[column].kind {
                    ColumnKind::Categorical => TaskKind::Classification,
                    ColumnKind::Numeric => TaskKind::Regression,
                };
                Some(TargetInfo {
                    column,
                    task,
                    raw: enc_values.swap_remove(column),
                })
            }
            None => None,
        };
        Ok(PreparedTable {
            source: raw.name.clone(),
            encoders: self.encoders.clone(),
            data,
            missing,
            target,
        })
    }
}

/// Numeric, standardized table with its fitted encoders.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedTable {
    pub source: String,
    pub encoders: Vec<ColumnEncoder>,
    pub data: Array2<f64>,
    pub missing: Array2<bool>,
    pub target: Option<TargetInfo>,
}

/// Fit encoders on `raw` and transform it.
pub fn prepare(raw: &RawTable) -> Result<PreparedTable> {
    Preprocessor::fit(raw)?.transform(raw)
}

impl PreparedTable {
    pub fn n_rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn col_means(&self) -> Vec<f64> {
        self.encoders.iter().map(|e| e.mean).collect()
    }

    pub fn col_stds(&self) -> Vec<f64> {
        self.encoders.iter().map(|e| e.std).collect()
    }

    /// Override the inferred supervised task (e.g. integer-coded classes).
    pub fn with_task(mut self, task: TaskKind) -> Self {
        if let Some(t) = &mut self.target {
            t.task = task;
        }
        self
    }

    /// Supervised view: features without the target column, rows whose target
    /// is missing dropped. Class values are taken from `classes` when given
    /// (to share a label map with a training table), otherwise from the
    /// sorted distinct targets of this table.
    pub fn supervised(&self, classes: Option<&[f64]>) -> Result<Supervised> {
        let Some(target) = &self.target else {
            bail!(Precondition, "{}: no target column designated", self.source);
        };
        let feature_cols: Vec<usize> = (0..self.n_cols()).filter(|&j| j != target.column).collect();
        let mut rows = Vec::new();
        let mut y = Vec::new();
        let class_values = match (target.task, classes) {
            (TaskKind::Regression, _) => Vec::new(),
            (TaskKind::Classification, Some(c)) => c.to_vec(),
            (TaskKind::Classification, None) => {
                let mut c: Vec<f64> = target.raw.iter().flatten().copied().collect();
                c.sort_by(f64::total_cmp);
                c.dedup();
                c
            }
        };
        for (i, v) in target.raw.iter().enumerate() {
            let Some(v) = v else { continue };
            let label = match target.task {
                TaskKind::Regression => *v,
                TaskKind::Classification => match class_values.iter().position(|c| c == v) {
                    Some(k) => k as f64,
                    None => bail!(Data, "{}: row {i} has unseen class value {v}", self.source),
                },
            };
            rows.push(i);
            y.push(label);
        }
        let x = self.data.select(Axis(0), &rows).select(Axis(1), &feature_cols);
        Ok(Supervised {
            x,
            y,
            task: target.task,
            classes: class_values,
            rows,
        })
    }
}

/// Feature matrix and target vector ready for inference.
#[derive(Clone, Debug, PartialEq)]
pub struct Supervised {
    pub x: Array2<f64>,
    /// Dense class index (classification) or raw value (regression).
    pub y: Vec<f64>,
    pub task: TaskKind,
    /// Original class values; index `k` corresponds to label `k`.
    pub classes: Vec<f64>,
    /// Source row of each retained row.
    pub rows: Vec<usize>,
}

impl Supervised {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldSplit {
    pub fold_id: usize,
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
    pub seed: u64,
}

/// K-fold split, stratified by class when the table has a classification target.
pub fn make_folds(table: &PreparedTable, k: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    let n = table.n_rows();
    if k < 2 {
        bail!(Precondition, "need at least 2 folds, got {k}");
    }
    if k > n {
        bail!(Precondition, "{k} folds requested for {n} rows");
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded_rng(seed));
    if let Some(t) = table.target.as_ref().filter(|t| t.task == TaskKind::Classification) {
        // missing labels form their own stratum, placed last
        let key = |i: usize| t.raw[i].map_or(f64::INFINITY, |v| v);
        order.sort_by(|&a, &b| key(a).total_cmp(&key(b)));
    }
    let mut test: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (pos, &row) in order.iter().enumerate() {
        test[pos % k].push(row);
    }
    Ok(test
        .into_iter()
        .enumerate()
        .map(|(fold_id, mut test_rows)| {
            test_rows.sort_unstable();
            let mut in_test = vec![false; n];
            for &r in &test_rows {
                in_test[r] = true;
            }
            let train_rows = (0..n).filter(|&r| !in_test[r]).collect();
            FoldSplit {
                fold_id,
                train_rows,
                test_rows,
                seed,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn numeric_table(cols: Vec<Vec<Option<f64>>>) -> RawTable {
        let columns = cols
            .into_iter()
            .enumerate()
            .map(|(j, v)| RawColumn::numeric(format!("c{j}"), v))
            .collect();
        RawTable::new("t", columns, None).unwrap()
    }

    #[test]
    fn z_scores_use_population_std() {
        let t = prepare(&numeric_table(vec![vec![Some(1.0), Some(2.0), Some(3.0)]])).unwrap();
        let expected = [-1.224744871391589, 0.0, 1.224744871391589];
        for (a, b) in t.data.column(0).iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn outliers_clip_at_ten() {
        // 144 zeros and one 1: z of the one is sqrt(144) = 12
        let mut v = vec![Some(0.0); 144];
        v.push(Some(1.0));
        let t = prepare(&numeric_table(vec![v])).unwrap();
        assert_eq!(t.data[[144, 0]], 10.0);
    }

    #[test]
    fn constant_column_zeroed() {
        let t = prepare(&numeric_table(vec![vec![Some(5.0); 3]])).unwrap();
        assert!(t.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn missing_cells_are_zero_and_masked() {
        let t = prepare(&numeric_table(vec![vec![Some(1.0), None, Some(3.0)]])).unwrap();
        assert!(t.missing[[1, 0]]);
        assert_eq!(t.data[[1, 0]], 0.0);
        assert!((t.data[[0, 0]] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn categories_sorted_lexicographically() {
        let col = RawColumn::categorical(
            "c",
            vec![Some("b".into()), Some("a".into()), Some("c".into()), Some("a".into())],
        );
        let t = prepare(&RawTable::new("t", vec![col], Some("c".into())).unwrap()).unwrap();
        assert_eq!(t.encoders[0].categories, vec!["a", "b", "c"]);
        let target = t.target.as_ref().unwrap();
        assert_eq!(target.task, TaskKind::Classification);
        assert_eq!(target.raw, vec![Some(1.0), Some(0.0), Some(2.0), Some(0.0)]);
    }

    #[test]
    fn unseen_category_becomes_missing() {
        let train = RawTable::new(
            "a",
            vec![RawColumn::categorical("c", vec![Some("x".into()), Some("y".into())])],
            None,
        )
        .unwrap();
        let test = RawTable::new("b", vec![RawColumn::categorical("c", vec![Some("z".into())])], None).unwrap();
        let pre = Preprocessor::fit(&train).unwrap();
        let out = pre.transform(&test).unwrap();
        assert!(out.missing[[0, 0]]);
    }

    #[test]
    fn supervised_drops_missing_targets() {
        let raw = RawTable::new(
            "t",
            vec![
                RawColumn::numeric("x", vec![Some(1.0), Some(2.0), Some(3.0)]),
                RawColumn::categorical("y", vec![Some("p".into()), None, Some("q".into())]),
            ],
            Some("y".into()),
        )
        .unwrap();
        let t = prepare(&raw).unwrap();
        assert_eq!(t.n_rows(), 3);
        let s = t.supervised(None).unwrap();
        assert_eq!(s.rows, vec![0, 2]);
        assert_eq!(s.y, vec![0.0, 1.0]);
        assert_eq!(s.x.ncols(), 1);
    }

    #[test]
    fn folds_partition_rows() {
        let t = prepare(&numeric_table(vec![(0..10).map(|i| Some(i as f64)).collect()])).unwrap();
        let folds = make_folds(&t, 2, 7).unwrap();
        assert_eq!(folds.len(), 2);
        assert_eq!(folds[0].test_rows.len(), 5);
        assert_eq!(folds[1].test_rows.len(), 5);
        assert!(folds[0].test_rows.iter().all(|r| !folds[1].test_rows.contains(r)));
        assert_eq!(folds, make_folds(&t, 2, 7).unwrap());
    }

    #[test]
    fn too_many_folds_rejected() {
        let t = prepare(&numeric_table(vec![vec![Some(1.0), Some(2.0), Some(3.0)]])).unwrap();
        assert!(make_folds(&t, 5, 0).is_err());
    }

    #[test]
    fn folds_are_stratified() {
        let labels: Vec<Option<String>> = (0..30)
            .map(|i| Some(if i % 3 == 0 { "a" } else { "b" }.to_string()))
            .collect();
        let raw = RawTable::new(
            "t",
            vec![
                RawColumn::numeric("x", (0..30).map(|i| Some(i as f64)).collect()),
                RawColumn::categorical("y", labels),
            ],
            Some("y".into()),
        )
        .unwrap();
        let t = prepare(&raw).unwrap();
        for f in make_folds(&t, 5, 3).unwrap() {
            let a = f.test_rows.iter().filter(|&&r| r % 3 == 0).count();
            assert_eq!(a, 2);
            assert_eq!(f.test_rows.len(), 6);
        }
    }

    fn column_strategy() -> impl Strategy<Value = Vec<Option<f64>>> {
        prop::collection::vec(prop::option::weighted(0.9, -1e3f64..1e3), 2..60)
    }

    proptest! {
        #[test]
        fn prepared_columns_are_standardized(col in column_strategy()) {
            let raw = numeric_table(vec![col.clone()]);
            let t = prepare(&raw).unwrap();
            prop_assert!(t.data.iter().all(|v| v.abs() <= CLIP));
            let present: Vec<f64> = (0..col.len()).filter(|&i| col[i].is_some()).map(|i| t.data[[i, 0]]).collect();
            for i in 0..col.len() {
                if col[i].is_none() {
                    prop_assert_eq!(t.data[[i, 0]], 0.0);
                }
            }
            // with at most 60 rows |z| <= sqrt(59) < 10, so clipping never fires
            if !t.encoders[0].is_constant() {
                let (m, s) = crate::stats::mean_std(&present).unwrap();
                prop_assert!(m.abs() <= 1e-9);
                prop_assert!((s - 1.0).abs() <= 1e-9);
            }
        }

        #[test]
        fn prepare_is_idempotent(col in column_strategy()) {
            let t = prepare(&numeric_table(vec![col.clone()])).unwrap();
            prop_assume!(!t.encoders[0].is_constant());
            let again: Vec<Option<f64>> = (0..col.len())
                .map(|i| col[i].map(|_| t.data[[i, 0]]))
                .collect();
            let t2 = prepare(&numeric_table(vec![again])).unwrap();
            for (a, b) in t.data.iter().zip(t2.data.iter()) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
        }

        #[test]
        fn preparation_commutes_with_row_permutation(col in column_strategy(), seed in 0u64..1000) {
            let raw = numeric_table(vec![col.clone()]);
            let mut perm: Vec<usize> = (0..col.len()).collect();
            perm.shuffle(&mut seeded_rng(seed));
            let a = prepare(&raw.permute_rows(&perm)).unwrap();
            let b = prepare(&raw).unwrap();
            for (i, &p) in perm.iter().enumerate() {
                prop_assert!((a.data[[i, 0]] - b.data[[p, 0]]).abs() <= 1e-12);
            }
        }
    }
}
