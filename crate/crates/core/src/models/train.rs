use std::sync::mpsc::sync_channel;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{init_rng, Differentiable, InitRng, TrainConfig};
use crate::error::{Error, Result};

/// Random-access examples, materialized one at a time so that only the
/// current batch needs to be in memory.
pub trait BatchSource: Sync {
    type Input: Send;

    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The `i`-th example and its 0/1 label.
    fn example(&self, i: usize) -> Result<(Self::Input, f64)>;
}

impl<X: Clone + Send + Sync> BatchSource for [(X, f64)] {
    type Input = X;

    fn len(&self) -> usize {
        <[(X, f64)]>::len(self)
    }

    fn example(&self, i: usize) -> Result<(X, f64)> {
        Ok(self[i].clone())
    }
}

impl<X: Clone + Send + Sync> BatchSource for Vec<(X, f64)> {
    type Input = X;

    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn example(&self, i: usize) -> Result<(X, f64)> {
        Ok(self[i].clone())
    }
}

/// Seeded batch order: a fresh shuffle of `0..n` per epoch, cut into
/// batches of `batch_size` (the last may be short).
#[derive(Debug, Clone)]
pub struct ShuffledBatches {
    rng: InitRng,
    order: Vec<usize>,
    batch_size: usize,
}

impl ShuffledBatches {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Self {
        ShuffledBatches {
            rng: init_rng(seed),
            order: (0..n).collect(),
            batch_size: batch_size.max(1),
        }
    }

    pub fn next_epoch(&mut self) -> Vec<Vec<usize>> {
        self.order.shuffle(&mut self.rng);
        self.order
            .chunks(self.batch_size)
            .map(<[usize]>::to_vec)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean per-example loss of each epoch, measured before each update.
    pub epoch_losses: Vec<f64>,
    pub examples: usize,
}

fn materialize<S: BatchSource + ?Sized>(source: &S, idx: &[usize]) -> Result<Vec<(S::Input, f64)>> {
    idx.iter().map(|&i| source.example(i)).collect()
}

/// Mini-batch SGD on the mean binary cross-entropy.
///
/// Each batch's examples are processed one by one and their gradients
/// averaged. With `cfg.momentum > 0` the update is heavy-ball momentum;
/// `cfg.l2` decays every parameter. With `cfg.prefetch` a worker thread
/// builds the next batches while the current one trains; the order is the
/// same either way.
pub fn train<M, S>(mut model: M, source: &S, cfg: &TrainConfig) -> Result<(M, TrainReport)>
where
    M: Differentiable,
    M::Input: Send,
    S: BatchSource<Input = M::Input> + ?Sized,
{
    cfg.validate()?;
    if source.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let n = source.len();
    let mut batches = ShuffledBatches::new(n, cfg.batch_size, cfg.seed);
    let mut velocity = model.zero_gradients();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let order = batches.next_epoch();
        let mut total = 0.0;
        let mut step = |model: &mut M, batch: Vec<(M::Input, f64)>| -> Result<()> {
            let scale = 1.0 / batch.len() as f64;
            let mut grads = model.zero_gradients();
            for (x, y) in &batch {
                if *y != 0.0 && *y != 1.0 {
                    return Err(Error::InvalidRecord(format!("label {y} is not 0 or 1")));
                }
                total += model.accumulate_gradients(x, *y, scale, &mut grads)?;
            }
            for ((param, g), v) in model.parameters_mut().into_iter().zip(&grads).zip(&mut velocity) {
                for ((p, &g), v) in param.iter_mut().zip(g).zip(v.iter_mut()) {
                    *v = cfg.momentum * *v - cfg.learning_rate * (g + cfg.l2 * *p);
                    *p += *v;
                }
            }
            Ok(())
        };

        if cfg.prefetch {
            std::thread::scope(|scope| -> Result<()> {
                let (tx, rx) = sync_channel(2);
                let order = &order;
                scope.spawn(move || {
                    for idx in order {
                        if tx.send(materialize(source, idx)).is_err() {
                            break;
                        }
                    }
                });
                for batch in rx {
                    step(&mut model, batch?)?;
                }
                Ok(())
            })?;
        } else {
            for idx in &order {
                step(&mut model, materialize(source, idx)?)?;
            }
        }

        let loss = total / n as f64;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("loss became {loss} in epoch {}", epoch + 1)));
        }
        if model.parameters().iter().any(|(_, p)| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::Numeric(format!("parameters diverged in epoch {}", epoch + 1)));
        }
        epoch_losses.push(loss);
    }
    Ok((
        model,
        TrainReport {
            epoch_losses,
            examples: n,
        },
    ))
}

/// Scores every example of `source` in order; returns `(probability, label)`.
pub fn score<M, S>(model: &M, source: &S) -> Result<Vec<(f64, f64)>>
where
    M: Differentiable + Sync,
    S: BatchSource<Input = M::Input> + ?Sized,
{
    (0..source.len())
        .into_par_iter()
        .map(|i| {
            let (x, y) = source.example(i)?;
            Ok((model.predict(&x)?, y))
        })
        .collect()
}
