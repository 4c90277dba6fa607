use serde::{Deserialize, Serialize};

use super::{add_outer_scaled, add_scaled, bce, check_dim, glorot, probability, Differentiable, InitRng};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Fully connected network: ReLU hidden layers and a single sigmoid output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub layer_dims: Vec<usize>,
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl MlpModel {
    /// `layer_dims` runs from the input width to a final 1.
    pub fn new(layer_dims: &[usize], rng: &mut InitRng) -> Result<Self> {
        Self::validate_dims(layer_dims)?;
        let weights = layer_dims
            .windows(2)
            .map(|w| glorot(rng, w[1], w[0]))
            .collect();
        Ok(Self::with_weights(layer_dims, weights))
    }

    pub fn zeros(layer_dims: &[usize]) -> Result<Self> {
        Self::validate_dims(layer_dims)?;
        let weights = layer_dims
            .windows(2)
            .map(|w| Matrix::zeros(w[1], w[0]))
            .collect();
        Ok(Self::with_weights(layer_dims, weights))
    }

    fn with_weights(layer_dims: &[usize], weights: Vec<Matrix>) -> Self {
        MlpModel {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases: layer_dims[1..].iter().map(|&d| vec![0.0; d]).collect(),
        }
    }

    fn validate_dims(dims: &[usize]) -> Result<()> {
        if dims.len() < 2 || dims.last() != Some(&1) || dims.contains(&0) {
            return Err(Error::invalid(
                "layer dims need an input width, positive sizes and a final 1",
            ));
        }
        Ok(())
    }

    /// Checks that stored tensors agree with `layer_dims`.
    pub fn validate(&self) -> Result<()> {
        Self::validate_dims(&self.layer_dims)?;
        let n = self.layer_dims.len() - 1;
        if self.weights.len() != n || self.biases.len() != n {
            return Err(Error::Corrupt("layer count mismatch".into()));
        }
        for (l, w) in self.weights.iter().enumerate() {
            check_dim(self.layer_dims[l], w.cols())?;
            check_dim(self.layer_dims[l + 1], w.rows())?;
            check_dim(self.layer_dims[l + 1], self.biases[l].len())?;
        }
        Ok(())
    }

    /// Activations of every layer, input first; the last holds the logit.
    fn activations(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        check_dim(self.layer_dims[0], x.len())?;
        let mut acts = vec![x.to_vec()];
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w.matvec(acts.last().expect("input"));
            add_scaled(&mut z, b, 1.0);
            if l < last {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(z);
        }
        Ok(acts)
    }
}

pub fn mlp_forward(model: &MlpModel, x: &[f64]) -> Result<f64> {
    let acts = model.activations(x)?;
    Ok(probability(acts.last().expect("output")[0]))
}

impl Differentiable for MlpModel {
    type Input = Vec<f64>;

    fn predict(&self, x: &Vec<f64>) -> Result<f64> {
        mlp_forward(self, x)
    }

    fn parameters(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            out.push((format!("w{l}"), w.as_slice()));
            out.push((format!("b{l}"), b.as_slice()));
        }
        out
    }

    fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w.as_mut_slice());
            out.push(b.as_mut_slice());
        }
        out
    }

    fn accumulate_gradients(
        &self,
        x: &Vec<f64>,
        target: f64,
        scale: f64,
        grads: &mut [Vec<f64>],
    ) -> Result<f64> {
        let acts = self.activations(x)?;
        let p = probability(acts.last().expect("output")[0]);
        let mut delta = vec![p - target];
        for l in (0..self.weights.len()).rev() {
            let input = &acts[l];
            add_outer_scaled(&mut grads[2 * l], input.len(), &delta, input, scale);
            add_scaled(&mut grads[2 * l + 1], &delta, scale);
            if l == 0 {
                break;
            }
            let mut back = vec![0.0; input.len()];
            self.weights[l].add_transpose_matvec(&delta, &mut back);
            for (d, &a) in back.iter_mut().zip(input) {
                if a <= 0.0 {
                    *d = 0.0;
                }
            }
            delta = back;
        }
        Ok(bce(p, target))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::init_rng;
    use proptest::prelude::*;

    #[test]
    fn zero_weights_give_one_half() {
        let m = MlpModel::zeros(&[3, 2, 1]).unwrap();
        assert_eq!(mlp_forward(&m, &[1.0, 2.0, 3.0]).unwrap(), 0.5);
    }

    #[test]
    fn one_dimensional_chain() {
        let mut m = MlpModel::zeros(&[1, 1, 1]).unwrap();
        m.weights[0].as_mut_slice()[0] = 1.0;
        m.weights[1].as_mut_slice()[0] = 1.0;
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        assert!((mlp_forward(&m, &[1.5]).unwrap() - sig(1.5)).abs() < 1e-15);
        assert_eq!(mlp_forward(&m, &[-2.0]).unwrap(), 0.5);
    }

    #[test]
    fn rejects_bad_dims() {
        assert!(MlpModel::zeros(&[3]).is_err());
        assert!(MlpModel::zeros(&[3, 2]).is_err());
        let m = MlpModel::zeros(&[3, 1]).unwrap();
        assert!(mlp_forward(&m, &[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn output_in_open_interval(seed in any::<u64>(), x in prop::collection::vec(-50.0f64..50.0, 6)) {
            let m = MlpModel::new(&[6, 4, 3, 1], &mut init_rng(seed)).unwrap();
            let p = mlp_forward(&m, &x).unwrap();
            prop_assert!(p > 0.0 && p < 1.0);
        }
    }
}
