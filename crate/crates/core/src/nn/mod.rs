//! A small deterministic numeric core: graph convolutions with hand-written
//! reverse-mode gradients, softmax cross-entropy and Adam.

mod adam;
mod gcn;
mod gradcheck;
mod loss;
mod params;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gcn::{backward, gcn_forward, gcn_predict, Activation, Dropout, ForwardTrace, Input};
pub use gradcheck::{gradient_check, GradCheckProblem, GRAD_FLOOR};
pub use loss::{log_softmax_slice, softmax_cross_entropy, softmax_rows, softmax_slice, weighted_cross_entropy, WeightedTarget};
pub use params::{Layer, ModelParams};
pub use train::{initial_params, train, TrainJob, TrainOutcome, Validation};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub weight_decay: f64,
    pub hidden: usize,
    pub dropout: f64,
    pub seed: u64,
    pub activation: Activation,
    /// Early-stopping patience in epochs; `None` trains for all epochs.
    pub patience: Option<usize>,
    /// Number of graph-convolution layers (the depth `s`).
    pub layers: usize,
    pub bias: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            epochs: 200,
            weight_decay: 5e-4,
            hidden: 64,
            dropout: 0.5,
            seed: 0,
            activation: Activation::Relu,
            patience: Some(30),
            layers: 2,
            bias: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!("dropout must be in [0,1), got {}", self.dropout)));
        }
        if self.layers == 0 || self.hidden == 0 {
            return Err(Error::InvalidArgument("layers and hidden width must be >= 1".into()));
        }
        Ok(())
    }
}
