//! Visual vs. non-visual classification from a question's POS tag sequence.

use serde::{Deserialize, Serialize};

use super::lstm::{LstmCell, LstmGrads};
use super::{bce, check_dim, glorot, probability, Differentiable, InitRng, Vocabulary};
use crate::error::{Error, Result};
use crate::numerics::{dot, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PosLstmConfig {
    pub hidden_dim: usize,
    pub tag_dim: usize,
}

impl Default for PosLstmConfig {
    fn default() -> Self {
        PosLstmConfig {
            hidden_dim: 100,
            tag_dim: 32,
        }
    }
}

/// Tag embedding → LSTM → sigmoid on the final hidden state.
#[derive(Debug, Clone, PartialEq)]
pub struct PosLstmModel {
    pub tags: Vocabulary,
    /// One row per tag; row 0 is the learned unknown-tag row.
    pub embedding: Matrix,
    pub cell: LstmCell,
    pub head: Vec<f64>,
    pub head_bias: f64,
}

impl PosLstmModel {
    pub fn new(tags: Vocabulary, cfg: PosLstmConfig, rng: &mut InitRng) -> Self {
        let embedding = glorot(rng, tags.len(), cfg.tag_dim);
        let cell = LstmCell::new(cfg.tag_dim, cfg.hidden_dim, rng);
        let head = glorot(rng, 1, cfg.hidden_dim).as_slice().to_vec();
        PosLstmModel {
            tags,
            embedding,
            cell,
            head,
            head_bias: 0.0,
        }
    }

    pub fn zeros(tags: Vocabulary, cfg: PosLstmConfig) -> Self {
        PosLstmModel {
            embedding: Matrix::zeros(tags.len(), cfg.tag_dim),
            tags,
            cell: LstmCell::zeros(cfg.tag_dim, cfg.hidden_dim),
            head: vec![0.0; cfg.hidden_dim],
            head_bias: 0.0,
        }
    }

    pub fn config(&self) -> PosLstmConfig {
        PosLstmConfig {
            hidden_dim: self.cell.hidden_dim(),
            tag_dim: self.embedding.cols(),
        }
    }

    pub fn encode<S: AsRef<str>>(&self, tags: &[S]) -> Vec<usize> {
        self.tags.encode(tags)
    }

    pub fn predict_tags<S: AsRef<str>>(&self, tags: &[S]) -> Result<f64> {
        self.predict(&self.encode(tags))
    }

    pub fn validate(&self) -> Result<()> {
        check_dim(self.tags.len(), self.embedding.rows())?;
        check_dim(self.embedding.cols(), self.cell.input_dim())?;
        check_dim(self.cell.hidden_dim(), self.head.len())
    }

    fn inputs(&self, ids: &[usize]) -> Result<Vec<Vec<f64>>> {
        if ids.is_empty() {
            return Err(Error::invalid("empty tag sequence"));
        }
        ids.iter()
            .map(|&i| {
                if i >= self.embedding.rows() {
                    return Err(Error::invalid(format!("tag id {i} out of range")));
                }
                Ok(self.embedding.row(i).to_vec())
            })
            .collect()
    }
}

impl Differentiable for PosLstmModel {
    /// Encoded tag ids.
    type Input = Vec<usize>;

    fn predict(&self, ids: &Vec<usize>) -> Result<f64> {
        let trace = self.cell.forward(&self.inputs(ids)?)?;
        Ok(probability(dot(&self.head, trace.last_hidden()) + self.head_bias))
    }

    fn parameters(&self) -> Vec<(String, &[f64])> {
        vec![
            ("embedding".into(), self.embedding.as_slice()),
            ("lstm.w".into(), self.cell.w.as_slice()),
            ("lstm.u".into(), self.cell.u.as_slice()),
            ("lstm.b".into(), &self.cell.b),
            ("head.w".into(), &self.head),
            ("head.b".into(), std::slice::from_ref(&self.head_bias)),
        ]
    }

    fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.embedding.as_mut_slice(),
            self.cell.w.as_mut_slice(),
            self.cell.u.as_mut_slice(),
            &mut self.cell.b,
            &mut self.head,
            std::slice::from_mut(&mut self.head_bias),
        ]
    }

    fn accumulate_gradients(
        &self,
        ids: &Vec<usize>,
        target: f64,
        scale: f64,
        grads: &mut [Vec<f64>],
    ) -> Result<f64> {
        let trace = self.cell.forward(&self.inputs(ids)?)?;
        let h = trace.last_hidden();
        let p = probability(dot(&self.head, h) + self.head_bias);
        let dz = p - target;

        let [g_emb, g_w, g_u, g_b, g_head, g_hb] = grads else {
            return Err(Error::invalid("gradient layout mismatch"));
        };
        g_head.iter_mut().zip(h).for_each(|(g, &hv)| *g += scale * dz * hv);
        g_hb[0] += scale * dz;

        let hd = self.cell.hidden_dim();
        let mut dh = vec![vec![0.0; hd]; ids.len()];
        *dh.last_mut().expect("non-empty") = self.head.iter().map(|w| dz * w).collect();
        let dxs = self.cell.backward(
            &trace,
            &dh,
            scale,
            LstmGrads {
                w: g_w,
                u: g_u,
                b: g_b,
            },
        );
        let td = self.embedding.cols();
        for (&id, dx) in ids.iter().zip(&dxs) {
            for (g, &d) in g_emb[id * td..(id + 1) * td].iter_mut().zip(dx) {
                *g += scale * d;
            }
        }
        Ok(bce(p, target))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::init_rng;

    fn vocab() -> Vocabulary {
        Vocabulary::build(["DT", "NN", "VBZ", "JJ"])
    }

    #[test]
    fn zero_model_gives_one_half() {
        let m = PosLstmModel::zeros(vocab(), PosLstmConfig::default());
        assert_eq!(m.predict_tags(&["DT", "NN", "XX"]).unwrap(), 0.5);
    }

    #[test]
    fn empty_sequence_is_an_error() {
        let m = PosLstmModel::zeros(vocab(), PosLstmConfig::default());
        assert!(m.predict_tags::<&str>(&[]).is_err());
    }

    #[test]
    fn single_tag_is_one_step_plus_head() {
        let cfg = PosLstmConfig {
            hidden_dim: 5,
            tag_dim: 3,
        };
        let m = PosLstmModel::new(vocab(), cfg, &mut init_rng(3));
        let id = m.tags.lookup("nn");
        let (h, _) = m
            .cell
            .step(m.embedding.row(id), &[0.0; 5], &[0.0; 5])
            .unwrap();
        let z: f64 = m.head.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>() + m.head_bias;
        let expected = 1.0 / (1.0 + (-z).exp());
        assert!((m.predict_tags(&["NN"]).unwrap() - expected).abs() < 1e-15);
    }
}
