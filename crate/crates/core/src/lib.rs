//! Retrieval-aligned tabular in-context learning.
//!
//! A row-token transformer is pre-trained on self-supervised episodes built from
//! real tables: a random column becomes the target, the rows are a retrieved
//! neighbourhood of a random anchor, and the model predicts held-out rows from
//! labelled context rows. The same retrieval protocol drives inference.
//!
//! Module map:
//! - [`table_store`]: CSV ingestion, encoding, standardization, folds.
//! - [`nn_index`]: exact L2 nearest-neighbour retrieval.
//! - [`ssl_tasks`]: self-supervised episode generation.
//! - [`batcher`]: batch assembly and context/query splitting.
//! - [`net`]: the transformer, with hand-written reverse-mode gradients.
//! - [`trainer`]: losses, AdamW, the training loop and checkpoints.
//! - [`infer`]: retrieval inference, class-digit decomposition, PCA, few-shot.
//! - [`scalefit`]: joint power-law fitting.
//! - [`evalharness`]: metrics, ranks, win rates, Elo and Glicko-2.
//! - [`contam_check`]: train/eval overlap detection.
//! - [`cli`]: the command-line driver.

pub mod batcher;
pub mod cli;
pub mod contam_check;
pub mod error;
pub mod evalharness;
pub mod infer;
pub mod net;
pub mod nn_index;
pub mod scalefit;
pub mod ssl_tasks;
pub mod stats;
pub mod table_store;
pub mod trainer;

pub use error::{Error, Result};

/// Prediction task of an episode or a supervised table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TaskKind {
    Classification,
    Regression,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Classification => "classification",
            TaskKind::Regression => "regression",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "classification" | "cls" => Some(TaskKind::Classification),
            "regression" | "reg" => Some(TaskKind::Regression),
            _ => None,
        }
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Deterministic generator used everywhere a seed is accepted.
pub type SeededRng = rand_chacha::ChaCha8Rng;

/// Build a [`SeededRng`] from a 64-bit seed.
pub fn seeded_rng(seed: u64) -> SeededRng {
    use rand::SeedableRng;
    SeededRng::seed_from_u64(seed)
}
