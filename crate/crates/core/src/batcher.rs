//! Training batch assembly.
//!
//! Each batch draws `B` datasets uniformly with replacement, builds one episode
//! per draw, shuffles the episode rows, splits them at a random `eval_pos` into
//! context and query, standardizes features with context statistics, and pads
//! features to `F_max`.

use std::sync::mpsc::{sync_channel, Receiver};
use std::sync::Arc;
use std::thread::JoinHandle;

use ndarray::{s, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{bail, Result};
use crate::nn_index::NeighborIndex;
use crate::ssl_tasks::{make_episode, EpisodeConfig};
use crate::table_store::{PreparedTable, CLIP};
use crate::{seeded_rng, TaskKind};

/// Smallest context an episode may have.
pub const MIN_CONTEXT: usize = 10;

/// A prepared table together with its retrieval index.
#[derive(Clone, Debug)]
pub struct CorpusEntry {
    pub table: PreparedTable,
    pub index: NeighborIndex,
}

impl CorpusEntry {
    pub fn new(table: PreparedTable) -> Result<Self> {
        let index = NeighborIndex::build(&table)?;
        Ok(CorpusEntry { table, index })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchEpisode {
    /// `K x F_max`, standardized by context statistics, zero-padded.
    pub x: Array2<f64>,
    pub y: Vec<f64>,
    pub task_kind: TaskKind,
    pub num_classes: usize,
    /// Rows `[0, eval_pos)` are context, the rest are queries.
    pub eval_pos: usize,
    /// Number of real (unpadded) feature columns.
    pub n_features: usize,
    /// Index of the corpus table this episode came from.
    pub dataset: usize,
}

impl BatchEpisode {
    pub fn x_ctx(&self) -> ndarray::ArrayView2<'_, f64> {
        self.x.slice(s![..self.eval_pos, ..])
    }

    pub fn x_qy(&self) -> ndarray::ArrayView2<'_, f64> {
        self.x.slice(s![self.eval_pos.., ..])
    }

    pub fn y_ctx(&self) -> &[f64] {
        &self.y[..self.eval_pos]
    }

    pub fn y_qy(&self) -> &[f64] {
        &self.y[self.eval_pos..]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainBatch {
    pub episodes: Vec<BatchEpisode>,
    /// Episode length (context + query rows).
    pub k: usize,
}

/// Zero-pad `x` to `f_max` columns.
pub fn pad_features(x: &Array2<f64>, f_max: usize) -> Result<Array2<f64>> {
    if x.ncols() > f_max {
        bail!(Shape, "{} features exceed F_max = {f_max}", x.ncols());
    }
    let mut out = Array2::zeros((x.nrows(), f_max));
    out.slice_mut(s![.., ..x.ncols()]).assign(x);
    Ok(out)
}

/// Draw the context/query boundary uniformly from `[10, k - 1]`.
pub fn split_context_query<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Result<usize> {
    if k <= MIN_CONTEXT {
        bail!(Precondition, "episode length {k} leaves no query after a context of {MIN_CONTEXT}");
    }
    Ok(rng.random_range(MIN_CONTEXT..k))
}

/// Standardize every column with the mean and population std of the first
/// `n_ctx` rows. Zero-variance columns become 0; results are clipped to `[-10, 10]`.
pub fn standardize_by_context(x: &mut Array2<f64>, n_ctx: usize) {
    assert!(n_ctx >= 1 && n_ctx <= x.nrows());
    for mut col in x.axis_iter_mut(Axis(1)) {
        let ctx: Vec<f64> = col.iter().take(n_ctx).copied().collect();
        let (m, sd) = crate::stats::mean_std(&ctx).expect("non-empty context");
        if sd <= 1e-12 * m.abs().max(1.0) {
            col.fill(0.0);
        } else {
            col.mapv_inplace(|v| ((v - m) / sd).clamp(-CLIP, CLIP));
        }
    }
}

/// Build one padded episode from a single table, deterministically in `seed`.
pub fn build_episode(
    entry: &CorpusEntry,
    dataset: usize,
    k: usize,
    f_max: usize,
    cfg: &EpisodeConfig,
    seed: u64,
) -> Result<BatchEpisode> {
    let mut rng = seeded_rng(seed);
    let ep = make_episode(&entry.table, &entry.index, k, cfg, &mut rng)?;
    // the retained columns are already in random order, so a prefix is a uniform subsample
    let f = ep.features.ncols().min(f_max);
    let mut order: Vec<usize> = (0..k).collect();
    order.shuffle(&mut rng);
    let mut x = ep.features.slice(s![.., ..f]).select(Axis(0), &order);
    let y: Vec<f64> = order.iter().map(|&i| ep.targets[i]).collect();
    let eval_pos = split_context_query(k, &mut rng)?;
    standardize_by_context(&mut x, eval_pos);
    Ok(BatchEpisode {
        x: pad_features(&x, f_max)?,
        y,
        task_kind: ep.task_kind,
        num_classes: ep.num_classes,
        eval_pos,
        n_features: f,
        dataset,
    })
}

/// Assemble one batch of `b` episodes of length `k`.
pub fn assemble_batch<R: Rng + ?Sized>(
    corpus: &[CorpusEntry],
    b: usize,
    k: usize,
    f_max: usize,
    cfg: &EpisodeConfig,
    rng: &mut R,
) -> Result<TrainBatch> {
    if corpus.is_empty() {
        bail!(Precondition, "empty corpus");
    }
    if b == 0 {
        bail!(Precondition, "batch size must be at least 1");
    }
    if k <= MIN_CONTEXT {
        bail!(Precondition, "episode length {k} must exceed {MIN_CONTEXT}");
    }
    if let Some(e) = corpus.iter().find(|e| e.table.n_rows() < k) {
        bail!(
            Precondition,
            "{}: {} rows, episodes need {k}",
            e.table.source,
            e.table.n_rows()
        );
    }
    // draw dataset ids and per-episode seeds up front so parallel assembly stays deterministic
    let draws: Vec<(usize, u64)> = (0..b)
        .map(|_| (rng.random_range(0..corpus.len()), rng.random::<u64>()))
        .collect();
    let episodes = draws
        .par_iter()
        .map(|&(d, seed)| build_episode(&corpus[d], d, k, f_max, cfg, seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainBatch { episodes, k })
}

/// Background producer of training batches feeding a bounded queue.
pub struct BatchStream {
    rx: Receiver<Result<TrainBatch>>,
    handle: Option<JoinHandle<()>>,
}

impl BatchStream {
    /// Produce `count` batches on a worker thread, at most `capacity` ahead of the consumer.
    #[allow(clippy::too_many_arguments)]
    pub fn spawn(
        corpus: Arc<Vec<CorpusEntry>>,
        b: usize,
        k: usize,
        f_max: usize,
        cfg: EpisodeConfig,
        seed: u64,
        count: usize,
        capacity: usize,
    ) -> Self {
        let (tx, rx) = sync_channel(capacity.max(1));
        let handle = std::thread::spawn(move || {
            let mut rng = seeded_rng(seed);
            for _ in 0..count {
                let batch = assemble_batch(&corpus, b, k, f_max, &cfg, &mut rng);
                let failed = batch.is_err();
                if tx.send(batch).is_err() || failed {
                    break;
                }
            }
        });
        BatchStream {
            rx,
            handle: Some(handle),
        }
    }
}

impl Iterator for BatchStream {
    type Item = Result<TrainBatch>;

    fn next(&mut self) -> Option<Self::Item> {
        self.rx.recv().ok()
    }
}

impl Drop for BatchStream {
    fn drop(&mut self) {
        // unblock the producer before joining
        let (_tx, rx) = sync_channel(1);
        drop(std::mem::replace(&mut self.rx, rx));
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table_store::{prepare, RawColumn, RawTable};
    use ndarray::array;

    fn corpus_entry(n: usize, f: usize, seed: u64) -> CorpusEntry {
        let mut rng = seeded_rng(seed);
        let columns = (0..f)
            .map(|j| {
                RawColumn::numeric(
                    format!("c{j}"),
                    (0..n).map(|_| Some(rng.random_range(-3.0..3.0))).collect(),
                )
            })
            .collect();
        CorpusEntry::new(prepare(&RawTable::new(format!("t{seed}"), columns, None).unwrap()).unwrap()).unwrap()
    }

    #[test]
    fn padding_rule() {
        let x = array![[1.0], [2.0]];
        assert_eq!(pad_features(&x, 3).unwrap(), array![[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        assert_eq!(pad_features(&x, 1).unwrap(), x);
        assert!(pad_features(&x, 0).is_err());
    }

    #[test]
    fn eval_pos_bounds() {
        let mut rng = seeded_rng(0);
        for _ in 0..50 {
            assert_eq!(split_context_query(11, &mut rng).unwrap(), 10);
            assert!((10..2048).contains(&split_context_query(2048, &mut rng).unwrap()));
        }
        assert!(split_context_query(10, &mut rng).is_err());
    }

    #[test]
    fn context_standardization() {
        let mut x = array![[1.0, 5.0], [3.0, 5.0], [100.0, 7.0]];
        standardize_by_context(&mut x, 2);
        assert_eq!(x.column(0).to_vec(), vec![-1.0, 1.0, 10.0]);
        assert_eq!(x.column(1).to_vec(), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn batches_are_deterministic_and_padded() {
        let corpus = vec![corpus_entry(80, 6, 1), corpus_entry(60, 3, 2)];
        let cfg = EpisodeConfig::default();
        let a = assemble_batch(&corpus, 8, 32, 8, &cfg, &mut seeded_rng(9)).unwrap();
        let b = assemble_batch(&corpus, 8, 32, 8, &cfg, &mut seeded_rng(9)).unwrap();
        assert_eq!(a, b);
        for ep in &a.episodes {
            assert_eq!(ep.x.dim(), (32, 8));
            assert!((10..32).contains(&ep.eval_pos));
            assert!(ep.x.slice(s![.., ep.n_features..]).iter().all(|&v| v == 0.0));
            assert!(ep.n_features >= 1 && ep.n_features < corpus[ep.dataset].table.n_cols());
        }
    }

    #[test]
    fn wide_tables_are_subsampled_to_f_max() {
        let corpus = vec![corpus_entry(40, 12, 3)];
        let batch = assemble_batch(&corpus, 16, 20, 4, &EpisodeConfig::default(), &mut seeded_rng(1)).unwrap();
        assert!(batch.episodes.iter().all(|e| e.n_features <= 4 && e.x.ncols() == 4));
    }

    #[test]
    fn short_tables_rejected() {
        let corpus = vec![corpus_entry(15, 3, 4)];
        assert!(assemble_batch(&corpus, 1, 20, 4, &EpisodeConfig::default(), &mut seeded_rng(1)).is_err());
    }

    #[test]
    fn stream_matches_direct_assembly() {
        let corpus = Arc::new(vec![corpus_entry(50, 4, 5)]);
        let cfg = EpisodeConfig::default();
        let streamed: Vec<TrainBatch> = BatchStream::spawn(corpus.clone(), 4, 16, 4, cfg, 77, 3, 2)
            .map(|b| b.unwrap())
            .collect();
        let mut rng = seeded_rng(77);
        for b in streamed {
            assert_eq!(b, assemble_batch(&corpus, 4, 16, 4, &cfg, &mut rng).unwrap());
        }
    }
}
