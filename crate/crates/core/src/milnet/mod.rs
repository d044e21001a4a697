//! Bag-level transformer classifier over tile feature vectors.
//!
//! Tiles are projected to the embedding width, a learnable aggregation token is
//! prepended, and the sequence passes through pre-norm encoder blocks without
//! positional embeddings. The final-normalized aggregation token feeds a linear
//! head. Everything runs in `f64` with hand-written backpropagation.

mod infer;
mod model;
mod params;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use infer::{
    attention_map, case_subsets, feature_dropout, feature_dropout_indices, predict_case,
    threshold_accuracy, tune_threshold, Prediction,
};
pub use model::{ForwardOutput, MilModel, Mode};
pub use params::{
    decode_checkpoint, encode_checkpoint, ParamSet, Tensor, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use train::{
    adamw_step, learning_rate, train, AdamState, LogEntry, MilExample, TrainOutcome, TrainingLog,
};

#[derive(Debug, Error, PartialEq)]
pub enum MilError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: model expects {expected}, bag has {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("empty bag")]
    EmptyBag,
    #[error("label {label} out of range for {n_classes} classes")]
    BadLabel { label: usize, n_classes: usize },
    #[error("fold error: {0}")]
    Fold(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("threshold tuning: {0}")]
    Threshold(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MilConfig {
    pub input_dim: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub n_classes: usize,
    pub attention_dropout_p: f64,
    pub feature_dropout_p: f64,
    pub feature_cap: usize,
}

impl MilConfig {
    /// Full-size architecture.
    pub fn paper(input_dim: usize, n_classes: usize) -> Self {
        MilConfig {
            input_dim,
            embed_dim: 192,
            depth: 2,
            heads: 4,
            mlp_ratio: 4,
            n_classes,
            attention_dropout_p: 0.5,
            feature_dropout_p: 0.5,
            feature_cap: 25_000,
        }
    }

    /// Small architecture for CPU tests and demos.
    pub fn desk(input_dim: usize, n_classes: usize) -> Self {
        MilConfig {
            embed_dim: 32,
            ..MilConfig::paper(input_dim, n_classes)
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.embed_dim * self.mlp_ratio
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    pub fn validate(&self) -> Result<(), MilError> {
        let bad = |m: &str| Err(MilError::InvalidConfig(m.to_string()));
        if self.input_dim == 0
            || self.embed_dim == 0
            || self.depth == 0
            || self.heads == 0
            || self.mlp_ratio == 0
        {
            return bad("input_dim, embed_dim, depth, heads and mlp_ratio must be positive");
        }
        if self.embed_dim % self.heads != 0 {
            return bad("embed_dim must be divisible by heads");
        }
        if self.n_classes < 2 {
            return bad("n_classes must be at least 2");
        }
        for (name, p) in [
            ("attention_dropout_p", self.attention_dropout_p),
            ("feature_dropout_p", self.feature_dropout_p),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(MilError::InvalidConfig(format!(
                    "{name} = {p} outside [0, 1)"
                )));
            }
        }
        if self.feature_cap == 0 {
            return bad("feature_cap must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub total_iterations: usize,
    pub grad_accum: usize,
    pub lr0: f64,
    pub lr_halving_period: usize,
    pub validation_period: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    #[serde(default)]
    pub class_weights: Option<Vec<f64>>,
    /// Subset forwards for validation cases above the feature cap.
    pub eval_subsets: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn paper(seed: u64) -> Self {
        TrainConfig {
            total_iterations: 32_000,
            grad_accum: 32,
            lr0: 5e-5,
            lr_halving_period: 6_400,
            validation_period: 320,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            class_weights: None,
            eval_subsets: 10,
            seed,
        }
    }

    pub fn desk(seed: u64) -> Self {
        TrainConfig {
            total_iterations: 2_000,
            grad_accum: 8,
            lr0: 1e-3,
            lr_halving_period: 500,
            validation_period: 100,
            ..TrainConfig::paper(seed)
        }
    }

    pub fn validate(&self, n_classes: usize) -> Result<(), MilError> {
        let bad = |m: String| Err(MilError::InvalidConfig(m));
        if self.total_iterations == 0
            || self.grad_accum == 0
            || self.lr_halving_period == 0
            || self.validation_period == 0
        {
            return bad("iteration counts and periods must be positive".into());
        }
        for (name, p) in [
            ("grad_accum", self.grad_accum),
            ("lr_halving_period", self.lr_halving_period),
            ("validation_period", self.validation_period),
        ] {
            if self.total_iterations % p != 0 {
                return bad(format!(
                    "{name} = {p} does not divide total_iterations = {}",
                    self.total_iterations
                ));
            }
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 = {} must be positive", self.lr0));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("betas must lie in [0, 1)".into());
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("eps must be positive and weight_decay nonnegative".into());
        }
        if let Some(w) = &self.class_weights {
            if w.len() != n_classes {
                return bad(format!("{} class weights for {n_classes} classes", w.len()));
            }
            if w.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
                return bad("class weights must be positive".into());
            }
        }
        if self.eval_subsets == 0 {
            return bad("eval_subsets must be positive".into());
        }
        Ok(())
    }

    pub fn class_weight(&self, label: usize) -> f64 {
        self.class_weights.as_ref().map_or(1.0, |w| w[label])
    }
}
