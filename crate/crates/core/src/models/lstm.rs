//! A standard LSTM cell with backpropagation through time.
//!
//! Gates are stacked in the order input, forget, candidate, output:
//!
//! ```text
//! z  = W x + U h + b
//! i = σ(z_i)  f = σ(z_f)  g = tanh(z_g)  o = σ(z_o)
//! c' = f ⊙ c + i ⊙ g
//! h' = o ⊙ tanh(c')
//! ```

use super::{add_outer_scaled, add_scaled, check_dim, glorot, sigmoid, InitRng};
use crate::error::Result;
use crate::numerics::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    /// 4h × x
    pub w: Matrix,
    /// 4h × h
    pub u: Matrix,
    /// 4h
    pub b: Vec<f64>,
}

/// Activations recorded by a forward pass, consumed by the backward pass.
#[derive(Debug, Clone, Default)]
pub struct LstmTrace {
    xs: Vec<Vec<f64>>,
    /// Hidden states h_0 (zeros) through h_T.
    pub hs: Vec<Vec<f64>>,
    cs: Vec<Vec<f64>>,
    /// Per step: i, f, g, o concatenated.
    gates: Vec<Vec<f64>>,
}

impl LstmTrace {
    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    /// Hidden output after the last step.
    pub fn last_hidden(&self) -> &[f64] {
        self.hs.last().expect("trace always holds h_0")
    }

    /// Hidden outputs h_1..h_T.
    pub fn outputs(&self) -> &[Vec<f64>] {
        &self.hs[1..]
    }
}

/// Gradients of one cell, laid out like `(w, u, b)`.
pub(crate) struct LstmGrads<'a> {
    pub w: &'a mut [f64],
    pub u: &'a mut [f64],
    pub b: &'a mut [f64],
}

impl LstmCell {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        LstmCell {
            w: Matrix::zeros(4 * hidden_dim, input_dim),
            u: Matrix::zeros(4 * hidden_dim, hidden_dim),
            b: vec![0.0; 4 * hidden_dim],
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn new(input_dim: usize, hidden_dim: usize, rng: &mut InitRng) -> Self {
        LstmCell {
            w: glorot(rng, 4 * hidden_dim, input_dim),
            u: glorot(rng, 4 * hidden_dim, hidden_dim),
            b: vec![0.0; 4 * hidden_dim],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.u.cols()
    }

    fn gates(&self, x: &[f64], h: &[f64]) -> Vec<f64> {
        let hd = self.hidden_dim();
        let wx = self.w.matvec(x);
        let uh = self.u.matvec(h);
        let mut z: Vec<f64> = wx
            .iter()
            .zip(&uh)
            .zip(&self.b)
            .map(|((a, b), c)| a + b + c)
            .collect();
        for (k, v) in z.iter_mut().enumerate() {
            *v = if (2 * hd..3 * hd).contains(&k) {
                v.tanh()
            } else {
                sigmoid(*v)
            };
        }
        z
    }

    /// One step: `(h, c) → (h', c')`.
    pub fn step(&self, x: &[f64], h: &[f64], c: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_dim(self.input_dim(), x.len())?;
        check_dim(self.hidden_dim(), h.len())?;
        check_dim(self.hidden_dim(), c.len())?;
        let gates = self.gates(x, h);
        Ok(self.combine(&gates, c))
    }

    fn combine(&self, gates: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let hd = self.hidden_dim();
        let (i, rest) = gates.split_at(hd);
        let (f, rest) = rest.split_at(hd);
        let (g, o) = rest.split_at(hd);
        let c_next: Vec<f64> = (0..hd).map(|k| f[k] * c[k] + i[k] * g[k]).collect();
        let h_next = (0..hd).map(|k| o[k] * c_next[k].tanh()).collect();
        (h_next, c_next)
    }

    /// Runs the cell over `xs` from a zero state.
    pub fn forward(&self, xs: &[Vec<f64>]) -> Result<LstmTrace> {
        let hd = self.hidden_dim();
        let mut trace = LstmTrace {
            xs: Vec::with_capacity(xs.len()),
            hs: vec![vec![0.0; hd]],
            cs: vec![vec![0.0; hd]],
            gates: Vec::with_capacity(xs.len()),
        };
        for x in xs {
            check_dim(self.input_dim(), x.len())?;
            let gates = self.gates(x, trace.hs.last().expect("h_0"));
            let (h, c) = self.combine(&gates, trace.cs.last().expect("c_0"));
            trace.xs.push(x.clone());
            trace.gates.push(gates);
            trace.hs.push(h);
            trace.cs.push(c);
        }
        Ok(trace)
    }

    /// Backpropagation through time. `dh[t]` is the external gradient on
    /// h_{t+1}; gradients are scaled by `scale` and added into `grads`.
    /// Returns the gradient with respect to each input.
    pub(crate) fn backward(
        &self,
        trace: &LstmTrace,
        dh: &[Vec<f64>],
        scale: f64,
        grads: LstmGrads<'_>,
    ) -> Vec<Vec<f64>> {
        let hd = self.hidden_dim();
        let in_dim = self.input_dim();
        let steps = trace.len();
        debug_assert_eq!(dh.len(), steps);
        let mut dxs = vec![vec![0.0; in_dim]; steps];
        let mut dh_next = vec![0.0; hd];
        let mut dc_next = vec![0.0; hd];
        let mut dz = vec![0.0; 4 * hd];

        for t in (0..steps).rev() {
            let gates = &trace.gates[t];
            let (i, rest) = gates.split_at(hd);
            let (f, rest) = rest.split_at(hd);
            let (g, o) = rest.split_at(hd);
            let c = &trace.cs[t + 1];
            let c_prev = &trace.cs[t];
            let mut dc_prev = vec![0.0; hd];
            for k in 0..hd {
                let dhk = dh[t][k] + dh_next[k];
                let tc = c[k].tanh();
                let do_ = dhk * tc;
                let dck = dhk * o[k] * (1.0 - tc * tc) + dc_next[k];
                dz[k] = dck * g[k] * i[k] * (1.0 - i[k]);
                dz[hd + k] = dck * c_prev[k] * f[k] * (1.0 - f[k]);
                dz[2 * hd + k] = dck * i[k] * (1.0 - g[k] * g[k]);
                dz[3 * hd + k] = do_ * o[k] * (1.0 - o[k]);
                dc_prev[k] = dck * f[k];
            }
            add_outer_scaled(grads.w, in_dim, &dz, &trace.xs[t], scale);
            add_outer_scaled(grads.u, hd, &dz, &trace.hs[t], scale);
            add_scaled(grads.b, &dz, scale);
            self.w.add_transpose_matvec(&dz, &mut dxs[t]);
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            self.u.add_transpose_matvec(&dz, &mut dh_next);
            dc_next = dc_prev;
        }
        dxs
    }
}
