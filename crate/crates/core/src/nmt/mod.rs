//! A small encoder-decoder transformer for word-level translation.
//!
//! The architecture is the classic post-norm transformer: sinusoidal
//! positions, multi-head scaled dot-product attention, relu feed-forward
//! blocks, residual connections wrapped in layer norm, label-smoothed
//! cross entropy, and the warmup-then-decay Adam schedule. Sized for desk
//! experiments, not production translation.
//!
//! Sentences are processed one at a time; a batch is a gradient
//! accumulation loop. Decoding therefore never sees padding.

mod decode;
mod model;
mod params;
mod train;
mod vocab;

pub use decode::{BeamResult, DecodeOptions, DecodeResult};
pub use model::{LossGraph, TranslationModel};
pub use params::{Adam, GradSet, ParamSet};
pub use train::{perplexity, train_supervised, TrainReport, TrainSettings};
pub use vocab::{build_vocab, Vocab, BOS_ID, EOS_ID, PAD_ID, UNK_ID};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum NmtError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("loss became non-finite at step {step}")]
    NonFiniteLoss { step: usize },
    #[error(transparent)]
    Checkpoint(#[from] crate::checkpoint::CheckpointError),
}

/// Architecture hyperparameters. `validate` is called wherever a config
/// enters the system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub label_smoothing: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: 2,
            d_model: 64,
            heads: 4,
            d_ff: 128,
            max_len: 64,
            dropout: 0.1,
            label_smoothing: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), NmtError> {
        let bad = |msg: &str| Err(NmtError::InvalidConfig(msg.to_string()));
        if self.layers == 0 || self.d_model == 0 || self.heads == 0 || self.d_ff == 0 {
            return bad("layer, width, head, and feed-forward counts must be positive");
        }
        if self.d_model % self.heads != 0 {
            return bad("d_model must be divisible by heads");
        }
        if self.max_len < 2 {
            return bad("max_len must be at least 2");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return bad("label_smoothing must lie in [0, 1)");
        }
        Ok(())
    }

    pub(crate) fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }
}
