//! Training: losses, AdamW, the batch loop, checkpoints and held-out tracking.
//!
//! Each step draws a batch of episodes, runs forward and backward per episode
//! in parallel, averages the per-episode gradients in a fixed order and
//! applies one AdamW update, so a run is bit-reproducible from its seed.

mod checkpoint;
mod loss;
mod optim;

use std::fmt::Write as _;
use std::sync::Arc;

use ndarray::Array2;
use rayon::prelude::*;

pub use self::checkpoint::{corpus_digest, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use self::loss::{episode_loss, masked_softmax, mse, smoothed_cross_entropy};
pub use self::optim::{adamw_step, AdamConfig, AdamState};

use crate::batcher::{build_episode, BatchEpisode, BatchStream, CorpusEntry, TrainBatch, MIN_CONTEXT};
use crate::error::{bail, Result};
use crate::net::{backward, forward, predict, ForwardOutput, ModelConfig, ModelParams};
use crate::ssl_tasks::{EpisodeConfig, TargetMode, TaskBalance};
use crate::TaskKind;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub label_smoothing: f64,
    pub batch_size: usize,
    /// Episode length: context plus query rows.
    pub context_len: usize,
    pub steps: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub task_balance: TaskBalance,
    pub target_mode: TargetMode,
    /// Held-out loss is logged every this many steps (and after the last step); 0 disables it.
    pub eval_every: usize,
    /// Held-out episodes per table.
    pub eval_episodes: usize,
    /// Batches assembled ahead of the optimizer.
    pub prefetch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 5e-4,
            weight_decay: 5e-2,
            label_smoothing: 0.1,
            batch_size: 16,
            context_len: 64,
            steps: 2000,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            task_balance: TaskBalance::Equal,
            target_mode: TargetMode::Ssl,
            eval_every: 100,
            eval_episodes: 16,
            prefetch: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let rate_ok = |v: f64| v.is_finite() && v >= 0.0;
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            bail!(Config, "learning_rate must be positive, got {}", self.learning_rate);
        }
        if !rate_ok(self.weight_decay) || self.learning_rate * self.weight_decay >= 1.0 {
            bail!(Config, "weight_decay {} out of range", self.weight_decay);
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            bail!(Config, "label_smoothing must be in [0, 1), got {}", self.label_smoothing);
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            bail!(Config, "adam betas must be in [0, 1)");
        }
        if !(self.adam_eps.is_finite() && self.adam_eps > 0.0) {
            bail!(Config, "adam_eps must be positive");
        }
        if self.batch_size == 0 {
            bail!(Config, "batch_size must be at least 1");
        }
        if self.context_len <= MIN_CONTEXT {
            bail!(Config, "context_len must be at least {}, got {}", MIN_CONTEXT + 1, self.context_len);
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn episode_config(&self) -> EpisodeConfig {
        EpisodeConfig {
            task_balance: self.task_balance,
            target_mode: self.target_mode,
        }
    }
}

/// One line of the loss log.
#[derive(Clone, Debug, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub split: &'static str,
    /// `all`, `classification` or `regression`.
    pub task: &'static str,
    pub loss: f64,
}

/// Render records as CSV `step,split,task,loss`.
pub fn loss_log_csv(records: &[LossRecord]) -> String {
    let mut out = String::from("step,split,task,loss\n");
    for r in records {
        writeln!(out, "{},{},{},{}", r.step, r.split, r.task, r.loss).expect("write to string");
    }
    out
}

fn episode_inputs(ep: &BatchEpisode) -> (Array2<f32>, Vec<f32>, Array2<f32>) {
    (
        ep.x_ctx().mapv(|v| v as f32),
        ep.y_ctx().iter().map(|&v| v as f32).collect(),
        ep.x_qy().mapv(|v| v as f32),
    )
}

/// Training loss and parameter gradient of one episode.
pub fn episode_gradient(
    params: &ModelParams<f32>,
    ep: &BatchEpisode,
    smoothing: f64,
) -> Result<(f64, ModelParams<f32>)> {
    let (xc, yc, xq) = episode_inputs(ep);
    let (out, trace) = forward(params, xc.view(), &yc, xq.view(), ep.task_kind)?;
    let (loss, seed) = episode_loss(&out, ep.y_qy(), ep.task_kind, ep.num_classes, smoothing)?;
    let grads = backward(params, &trace, &seed)?;
    Ok((loss, grads))
}

/// Forward, backward and one optimizer update on `batch`. Returns the batch
/// loss (mean over episodes) and the per-episode losses.
pub fn train_step(
    params: &mut ModelParams<f32>,
    state: &mut AdamState<f32>,
    batch: &TrainBatch,
    cfg: &TrainConfig,
) -> Result<(f64, Vec<f64>)> {
    let snapshot = &*params;
    let results = batch
        .episodes
        .par_iter()
        .map(|ep| episode_gradient(snapshot, ep, cfg.label_smoothing))
        .collect::<Result<Vec<_>>>()?;
    let b = results.len() as f64;
    let mut total = ModelParams::zeros(&params.config);
    let mut losses = Vec::with_capacity(results.len());
    for (loss, g) in &results {
        if !loss.is_finite() {
            bail!(Numeric, "non-finite episode loss");
        }
        total.add_scaled(g, 1.0 / b as f32);
        losses.push(*loss);
    }
    adamw_step(params, &total, state, &cfg.adam())?;
    Ok((losses.iter().sum::<f64>() / b, losses))
}

/// Output of a training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<LossRecord>,
}

/// Initialize a model from `cfg.seed` and train it.
pub fn train(
    corpus: &[CorpusEntry],
    heldout: &[CorpusEntry],
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let params = ModelParams::<f32>::init(model, cfg.seed)?;
    train_from(Checkpoint::fresh(params, corpus_digest(corpus)), corpus, heldout, cfg)
}

/// Continue training `start` for `cfg.steps` further steps.
pub fn train_from(
    start: Checkpoint,
    corpus: &[CorpusEntry],
    heldout: &[CorpusEntry],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if corpus.is_empty() {
        bail!(Precondition, "empty training corpus");
    }
    let f_max = start.config.f_max;
    let mut ck = start;
    ck.corpus_digest = corpus_digest(corpus);
    let mut log = Vec::new();
    let eval_cfg = heldout_episode_config(heldout, cfg.task_balance);
    let eval_seed = cfg.seed ^ 0x5eed_e7a1_0000_0001;
    let stream_seed = cfg.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ ck.step;
    let stream = BatchStream::spawn(
        Arc::new(corpus.to_vec()),
        cfg.batch_size,
        cfg.context_len,
        f_max,
        cfg.episode_config(),
        stream_seed,
        cfg.steps,
        cfg.prefetch,
    );
    for (i, batch) in stream.enumerate() {
        let batch = batch?;
        let (loss, per_episode) = train_step(&mut ck.params, &mut ck.optimizer, &batch, cfg)?;
        ck.step += 1;
        log.push(LossRecord {
            step: ck.step,
            split: "train",
            task: "all",
            loss,
        });
        for kind in [TaskKind::Classification, TaskKind::Regression] {
            let v: Vec<f64> = batch
                .episodes
                .iter()
                .zip(&per_episode)
                .filter(|(e, _)| e.task_kind == kind)
                .map(|(_, l)| *l)
                .collect();
            if !v.is_empty() {
                log.push(LossRecord {
                    step: ck.step,
                    split: "train",
                    task: kind.as_str(),
                    loss: v.iter().sum::<f64>() / v.len() as f64,
                });
            }
        }
        let last = i + 1 == cfg.steps;
        if !heldout.is_empty() && cfg.eval_every > 0 && ((i + 1) % cfg.eval_every == 0 || last) {
            let h = heldout_loss(&ck.params, heldout, cfg.context_len, cfg.eval_episodes, &eval_cfg, eval_seed)?;
            log.extend(h.records(ck.step));
        }
    }
    Ok(TrainOutcome { checkpoint: ck, log })
}

/// Held-out episodes use each table's designated target when every table has
/// one, and self-supervised targets otherwise.
pub fn heldout_episode_config(tables: &[CorpusEntry], balance: TaskBalance) -> EpisodeConfig {
    let supervised = !tables.is_empty() && tables.iter().all(|e| e.table.target.is_some());
    EpisodeConfig {
        task_balance: balance,
        target_mode: if supervised { TargetMode::Supervised } else { TargetMode::Ssl },
    }
}

/// Held-out score of one episode: cross-entropy over the active classes, or
/// `1 - pearson(prediction, target)` with a degenerate correlation taken as 0.
pub fn episode_metric(output: &ForwardOutput<f32>, y_qy: &[f64], num_classes: usize) -> Result<f64> {
    match output {
        ForwardOutput::Classification(l) => Ok(smoothed_cross_entropy(l, y_qy, num_classes, 0.0)?.0),
        ForwardOutput::Regression(p) => {
            let pred: Vec<f64> = p.iter().map(|&v| v as f64).collect();
            if pred.len() != y_qy.len() {
                bail!(Shape, "{} predictions for {} targets", pred.len(), y_qy.len());
            }
            Ok(1.0 - crate::stats::pearson(&pred, y_qy).unwrap_or(0.0))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeldoutLoss {
    /// Mean over all held-out episodes.
    pub all: f64,
    pub classification: Option<f64>,
    pub regression: Option<f64>,
    pub episodes: usize,
}

impl HeldoutLoss {
    fn records(&self, step: u64) -> Vec<LossRecord> {
        let mut out = vec![LossRecord {
            step,
            split: "heldout",
            task: "all",
            loss: self.all,
        }];
        for (task, v) in [("classification", self.classification), ("regression", self.regression)] {
            if let Some(loss) = v {
                out.push(LossRecord {
                    step,
                    split: "heldout",
                    task,
                    loss,
                });
            }
        }
        out
    }
}

/// Mean held-out metric over `episodes` retrieval episodes per table.
pub fn heldout_loss(
    params: &ModelParams<f32>,
    tables: &[CorpusEntry],
    context_len: usize,
    episodes: usize,
    cfg: &EpisodeConfig,
    seed: u64,
) -> Result<HeldoutLoss> {
    if tables.is_empty() || episodes == 0 {
        bail!(Precondition, "held-out evaluation needs tables and episodes");
    }
    let jobs: Vec<(usize, u64)> = (0..tables.len())
        .flat_map(|t| (0..episodes).map(move |e| (t, seed ^ ((t as u64) << 32) ^ e as u64)))
        .collect();
    let scores = jobs
        .par_iter()
        .map(|&(t, s)| {
            let entry = &tables[t];
            let k = context_len.min(entry.table.n_rows());
            let ep = build_episode(entry, t, k, params.config.f_max, cfg, s)?;
            let (xc, yc, xq) = episode_inputs(&ep);
            let out = predict(params, xc.view(), &yc, xq.view(), ep.task_kind)?;
            Ok((ep.task_kind, episode_metric(&out, ep.y_qy(), ep.num_classes)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = |v: Vec<f64>| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let pick = |kind| mean(scores.iter().filter(|s| s.0 == kind).map(|s| s.1).collect());
    Ok(HeldoutLoss {
        all: mean(scores.iter().map(|s| s.1).collect()).expect("non-empty"),
        classification: pick(TaskKind::Classification),
        regression: pick(TaskKind::Regression),
        episodes: scores.len(),
    })
}
