//! Classifiers and their training machinery.
//!
//! Every model exposes its trainable parameters as flat slices and computes
//! exact gradients of the binary cross-entropy by hand-written
//! backpropagation. [`grad_check`] compares those gradients against central
//! finite differences; [`train`] runs seeded mini-batch SGD over any
//! [`BatchSource`].

mod export;
mod gradcheck;
mod io;
mod lr;
mod lstm;
mod mlp;
mod poslstm;
pub mod relnet;
mod train;
mod vocab;

pub use export::{dense_relevance_features, export_features, mlp_input};
pub use gradcheck::{grad_check, grad_check_with};
pub use io::{load_model, save_model, SavedModel};
pub use lr::{lr_predict, lr_train_streaming, LrFeatures, LrInput, LrModel};
pub use lstm::{LstmCell, LstmTrace};
pub use mlp::{mlp_forward, MlpModel};
pub use poslstm::{PosLstmConfig, PosLstmModel};
pub use relnet::{ImagePathway, RelNetConfig, RelNetInput, RelNetModel, RelNetVariant, StepOneMode};
pub use train::{score, train, BatchSource, ShuffledBatches, TrainReport};
pub use vocab::Vocabulary;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Probabilities are kept inside `[PROB_EPS, 1 − PROB_EPS]`.
pub const PROB_EPS: f64 = 1e-12;

/// The parameter initializer: a seeded 64-bit-state PCG (LCG core).
pub type InitRng = rand_pcg::Pcg32;

pub fn init_rng(seed: u64) -> InitRng {
    InitRng::seed_from_u64(seed)
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Sigmoid clamped away from 0 and 1.
pub(crate) fn probability(z: f64) -> f64 {
    sigmoid(z).clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Binary cross-entropy of a (clamped) probability against a 0/1 target.
pub fn bce(p: f64, target: f64) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
}

/// Glorot-uniform matrix: U(−s, s), s = √(6 / (fan_in + fan_out)).
pub(crate) fn glorot(rng: &mut InitRng, rows: usize, cols: usize) -> Matrix {
    let s = (6.0 / (rows + cols) as f64).sqrt();
    let mut m = Matrix::zeros(rows, cols);
    m.as_mut_slice()
        .iter_mut()
        .for_each(|x| *x = rng.random_range(-s..=s));
    m
}

/// `buf[i*cols + j] += scale * y[i] * x[j]`.
pub(crate) fn add_outer_scaled(buf: &mut [f64], cols: usize, y: &[f64], x: &[f64], scale: f64) {
    for (i, &yi) in y.iter().enumerate() {
        let a = scale * yi;
        if a == 0.0 {
            continue;
        }
        for (b, &xj) in buf[i * cols..(i + 1) * cols].iter_mut().zip(x) {
            *b += a * xj;
        }
    }
}

pub(crate) fn add_scaled(buf: &mut [f64], x: &[f64], scale: f64) {
    for (b, &v) in buf.iter_mut().zip(x) {
        *b += scale * v;
    }
}

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}

/// A binary classifier with hand-derived gradients of the cross-entropy loss.
pub trait Differentiable {
    type Input;

    /// Probability of the positive class, strictly inside (0, 1).
    fn predict(&self, x: &Self::Input) -> Result<f64>;

    /// Trainable parameter tensors, flattened row-major.
    fn parameters(&self) -> Vec<(String, &[f64])>;

    /// Same tensors and order as [`Differentiable::parameters`].
    fn parameters_mut(&mut self) -> Vec<&mut [f64]>;

    /// Adds `scale · ∂loss/∂θ` to `grads` (laid out like `parameters`) and
    /// returns the loss for this example.
    fn accumulate_gradients(
        &self,
        x: &Self::Input,
        target: f64,
        scale: f64,
        grads: &mut [Vec<f64>],
    ) -> Result<f64>;

    fn zero_gradients(&self) -> Vec<Vec<f64>> {
        self.parameters()
            .iter()
            .map(|(_, p)| vec![0.0; p.len()])
            .collect()
    }

    fn loss(&self, x: &Self::Input, target: f64) -> Result<f64> {
        Ok(bce(self.predict(x)?, target))
    }
}

/// Optimization settings shared by all trainers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2: f64,
    /// 0 for plain SGD, typically 0.9 with momentum.
    pub momentum: f64,
    pub seed: u64,
    pub threshold: f64,
    /// Build batches on a worker thread (bounded queue, same order).
    pub prefetch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            epochs: 10,
            batch_size: 16,
            l2: 0.0,
            momentum: 0.0,
            seed: 42,
            threshold: 0.5,
            prefetch: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::invalid("l2 must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must be in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::invalid("threshold must be in [0, 1]"));
        }
        Ok(())
    }
}
