use rand::seq::index::sample;

use super::{init_rng, Differentiable};
use crate::error::{Error, Result};

/// Coordinates checked per tensor unless it is smaller.
pub const DEFAULT_COORDS: usize = 200;

/// Largest relative error between analytic gradients of the mean BCE over
/// `batch` and central differences with step `eps`.
///
/// Tensors with more than 200 entries are subsampled to 200 coordinates.
pub fn grad_check<M: Differentiable>(model: &mut M, batch: &[(M::Input, f64)], eps: f64) -> Result<f64> {
    grad_check_with(model, batch, eps, DEFAULT_COORDS, 0)
}

/// As [`grad_check`], with an explicit per-tensor coordinate budget and the
/// seed that picks subsampled coordinates.
pub fn grad_check_with<M: Differentiable>(
    model: &mut M,
    batch: &[(M::Input, f64)],
    eps: f64,
    max_coords: usize,
    seed: u64,
) -> Result<f64> {
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::invalid("eps must lie in [1e-7, 1e-3]"));
    }
    if batch.is_empty() || max_coords == 0 {
        return Err(Error::invalid("grad check needs a batch and coordinates"));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut analytic = model.zero_gradients();
    for (x, y) in batch {
        model.accumulate_gradients(x, *y, scale, &mut analytic)?;
    }
    let mean_loss = |m: &M| -> Result<f64> {
        let mut total = 0.0;
        for (x, y) in batch {
            total += m.loss(x, *y)?;
        }
        Ok(total * scale)
    };

    let mut rng = init_rng(seed);
    let mut worst: f64 = 0.0;
    for (t, grad) in analytic.iter().enumerate() {
        let coords: Vec<usize> = if grad.len() > max_coords {
            let mut c = sample(&mut rng, grad.len(), max_coords).into_vec();
            c.sort_unstable();
            c
        } else {
            (0..grad.len()).collect()
        };
        for i in coords {
            let orig = model.parameters_mut()[t][i];
            model.parameters_mut()[t][i] = orig + eps;
            let plus = mean_loss(model)?;
            model.parameters_mut()[t][i] = orig - eps;
            let minus = mean_loss(model)?;
            model.parameters_mut()[t][i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = grad[i];
            worst = worst.max((a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8));
        }
    }
    Ok(worst)
}
