//! Logistic regression over hashed sparse or dense features, trained one
//! example at a time so memory stays O(dim) however long the stream is.

use serde::{Deserialize, Serialize};

use super::{bce, probability, Differentiable, TrainConfig};
use crate::error::{Error, Result};
use crate::textfeat::SparseFeatures;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

/// Anything that can be read as (index, value) pairs.
pub trait LrFeatures {
    fn for_each_entry(&self, f: &mut dyn FnMut(usize, f64));
}

impl LrFeatures for SparseFeatures {
    fn for_each_entry(&self, f: &mut dyn FnMut(usize, f64)) {
        self.iter().for_each(|(i, v)| f(i, v));
    }
}

impl LrFeatures for [f64] {
    fn for_each_entry(&self, f: &mut dyn FnMut(usize, f64)) {
        self.iter().enumerate().for_each(|(i, &v)| f(i, v));
    }
}

impl LrFeatures for Vec<f64> {
    fn for_each_entry(&self, f: &mut dyn FnMut(usize, f64)) {
        self.as_slice().for_each_entry(f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LrInput {
    Sparse(SparseFeatures),
    Dense(Vec<f64>),
}

impl LrFeatures for LrInput {
    fn for_each_entry(&self, f: &mut dyn FnMut(usize, f64)) {
        match self {
            LrInput::Sparse(x) => x.for_each_entry(f),
            LrInput::Dense(x) => x.for_each_entry(f),
        }
    }
}

fn overflow(index: usize, dim: usize) -> Error {
    Error::invalid(format!("feature index {index} exceeds weight dim {dim}"))
}

/// `b + Σ w[i]·x[i]`, with every index checked against the weight dim.
fn margin<X: LrFeatures + ?Sized>(weights: &[f64], scale: f64, bias: f64, x: &X) -> Result<f64> {
    let mut z = 0.0;
    let mut bad = None;
    x.for_each_entry(&mut |i, v| match weights.get(i) {
        Some(w) => z += w * v,
        None => bad = bad.or(Some(i)),
    });
    match bad {
        Some(i) => Err(overflow(i, weights.len())),
        None => Ok(scale * z + bias),
    }
}

impl LrModel {
    pub fn zeros(dim: usize) -> Self {
        LrModel {
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }
}

pub fn lr_predict<X: LrFeatures + ?Sized>(model: &LrModel, x: &X) -> Result<f64> {
    Ok(probability(margin(&model.weights, 1.0, model.bias, x)?))
}

/// Per-example SGD on the logistic loss plus `l2·‖w‖²/2`.
///
/// `stream` is called once per epoch and must yield the same examples in
/// the same order each time. The weight decay is applied lazily through a
/// shared scale factor, so an update costs O(nnz) rather than O(dim).
/// `cfg.batch_size` and `cfg.momentum` do not apply here.
pub fn lr_train_streaming<F, I, X>(dim: usize, mut stream: F, cfg: &TrainConfig) -> Result<LrModel>
where
    F: FnMut() -> I,
    I: IntoIterator<Item = Result<(X, f64)>>,
    X: LrFeatures,
{
    cfg.validate()?;
    let lr = cfg.learning_rate;
    let decay = 1.0 - lr * cfg.l2;
    if decay <= 0.0 {
        return Err(Error::invalid("learning_rate · l2 must be below 1"));
    }
    // w = scale · v
    let mut v = vec![0.0; dim];
    let mut scale = 1.0;
    let mut bias = 0.0;
    for _ in 0..cfg.epochs {
        for item in stream() {
            let (x, y) = item?;
            if y != 0.0 && y != 1.0 {
                return Err(Error::InvalidRecord(format!("label {y} is not 0 or 1")));
            }
            let p = probability(margin(&v, scale, bias, &x)?);
            let g = p - y;
            if !g.is_finite() {
                return Err(Error::Numeric("non-finite gradient".into()));
            }
            scale *= decay;
            let step = lr * g / scale;
            x.for_each_entry(&mut |i, xi| v[i] -= step * xi);
            bias -= lr * g;
            if scale < 1e-9 {
                v.iter_mut().for_each(|w| *w *= scale);
                scale = 1.0;
            }
        }
    }
    v.iter_mut().for_each(|w| *w *= scale);
    if v.iter().any(|w| !w.is_finite()) || !bias.is_finite() {
        return Err(Error::Numeric("weights diverged".into()));
    }
    Ok(LrModel { weights: v, bias })
}

impl Differentiable for LrModel {
    type Input = LrInput;

    fn predict(&self, x: &LrInput) -> Result<f64> {
        lr_predict(self, x)
    }

    fn parameters(&self) -> Vec<(String, &[f64])> {
        vec![
            ("weights".into(), &self.weights),
            ("bias".into(), std::slice::from_ref(&self.bias)),
        ]
    }

    fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.weights, std::slice::from_mut(&mut self.bias)]
    }

    fn accumulate_gradients(
        &self,
        x: &LrInput,
        target: f64,
        scale: f64,
        grads: &mut [Vec<f64>],
    ) -> Result<f64> {
        let p = lr_predict(self, x)?;
        let g = scale * (p - target);
        let (gw, gb) = grads.split_at_mut(1);
        x.for_each_entry(&mut |i, v| gw[0][i] += g * v);
        gb[0][0] += g;
        Ok(bce(p, target))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textfeat::pos_ngrams;

    fn sparse(dim: usize, entries: &[(usize, f64)]) -> SparseFeatures {
        let mut s = SparseFeatures::new(dim);
        for &(i, v) in entries {
            s.add(i, v).unwrap();
        }
        s
    }

    #[test]
    fn predict_examples() {
        let zero = LrModel::zeros(8);
        assert_eq!(lr_predict(&zero, &sparse(8, &[(1, 3.0)])).unwrap(), 0.5);

        let biased = LrModel {
            bias: 20.0,
            ..LrModel::zeros(8)
        };
        let p = lr_predict(&biased, &sparse(8, &[])).unwrap();
        assert!((p - 0.999_999_997_9).abs() < 1e-10);

        let mut hand = LrModel::zeros(8);
        hand.weights[3] = 1.0;
        let p = lr_predict(&hand, &sparse(8, &[(3, 2.0)])).unwrap();
        // 1 / (1 + e^-2)
        assert!((p - 0.880_797_077_977_882_3).abs() < 1e-12);
    }

    #[test]
    fn index_overflow_is_an_error() {
        let m = LrModel::zeros(4);
        assert!(lr_predict(&m, &sparse(16, &[(9, 1.0)])).is_err());
        assert!(lr_predict(&m, &vec![0.0; 5]).is_err());
    }

    #[test]
    fn zero_epochs_gives_zero_model() {
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let m = lr_train_streaming(4, || vec![Ok((sparse(4, &[(0, 1.0)]), 1.0))], &cfg).unwrap();
        assert_eq!(m, LrModel::zeros(4));
    }

    #[test]
    fn separable_one_hot_classes() {
        let data = vec![
            (sparse(6, &[(0, 1.0)]), 1.0),
            (sparse(6, &[(1, 1.0)]), 1.0),
            (sparse(6, &[(4, 1.0)]), 0.0),
            (sparse(6, &[(5, 1.0)]), 0.0),
        ];
        let cfg = TrainConfig {
            epochs: 5,
            ..Default::default()
        };
        let m = lr_train_streaming(6, || data.iter().cloned().map(Ok), &cfg).unwrap();
        for (x, y) in &data {
            let p = lr_predict(&m, x).unwrap();
            assert_eq!(p >= 0.5, *y == 1.0);
        }
    }

    #[test]
    fn non_binary_label_rejected() {
        let cfg = TrainConfig::default();
        let r = lr_train_streaming(4, || vec![Ok((sparse(4, &[]), 0.5))], &cfg);
        assert!(matches!(r, Err(Error::InvalidRecord(_))));
    }

    /// The lazily-scaled update must agree with the textbook dense one.
    #[test]
    fn lazy_decay_matches_dense_update() {
        let tags = [
            vec!["DT", "NN", "VBZ"],
            vec!["WP", "VBZ", "NN"],
            vec!["DT", "JJ", "NN", "VBZ"],
            vec!["WRB", "VBP", "PRP"],
        ];
        let dim = 64;
        let data: Vec<(SparseFeatures, f64)> = tags
            .iter()
            .enumerate()
            .map(|(i, t)| (pos_ngrams(t, 2, dim).unwrap(), (i % 2) as f64))
            .collect();
        let cfg = TrainConfig {
            epochs: 7,
            l2: 0.05,
            learning_rate: 0.3,
            ..Default::default()
        };
        let fast = lr_train_streaming(dim, || data.iter().cloned().map(Ok), &cfg).unwrap();

        let mut w = vec![0.0; dim];
        let mut b = 0.0;
        for _ in 0..cfg.epochs {
            for (x, y) in &data {
                let z: f64 = b + x.iter().map(|(i, v)| w[i] * v).sum::<f64>();
                let g = 1.0 / (1.0 + (-z).exp()) - y;
                let mut grad = vec![0.0; dim];
                for (i, v) in x.iter() {
                    grad[i] = g * v;
                }
                for j in 0..dim {
                    w[j] -= cfg.learning_rate * (grad[j] + cfg.l2 * w[j]);
                }
                b -= cfg.learning_rate * g;
            }
        }
        for j in 0..dim {
            assert!((fast.weights[j] - w[j]).abs() < 1e-12, "w[{j}]");
        }
        assert!((fast.bias - b).abs() < 1e-12);
    }

    #[test]
    fn dense_inputs_train_too() {
        let data = [(vec![1.0, 0.0], 1.0), (vec![0.0, 1.0], 0.0)];
        let m = lr_train_streaming(2, || data.iter().cloned().map(Ok), &TrainConfig::default()).unwrap();
        assert!(lr_predict(&m, &data[0].0).unwrap() > 0.5);
        assert!(lr_predict(&m, &data[1].0).unwrap() < 0.5);
    }
}
