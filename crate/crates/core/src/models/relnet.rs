//! The four LSTM fusion networks that score question–image relevance.
//!
//! | variant | image pathway | fusion input at step t |
//! |---|---|---|
//! | 1 | frozen PCA projection | `[h_t ; img]` for every token |
//! | 2 | trainable linear embedding | `[h_t ; img]` for every token |
//! | 3 | trainable linear embedding | `img` at step 1, then `h_1 … h_T` |
//! | 4 | trainable linear embedding | `img` at step 1, then the token embeddings |
//!
//! `h_t` is the question LSTM's output after token t. Variant 4 has no
//! question LSTM. When the step-1 input and the later inputs differ in
//! width, [`StepOneMode`] decides how they are reconciled.

use serde::{Deserialize, Serialize};

use super::lstm::{LstmCell, LstmGrads, LstmTrace};
use super::{
    add_outer_scaled, add_scaled, bce, check_dim, glorot, probability, Differentiable, InitRng,
    Vocabulary,
};
use crate::error::{Error, Result};
use crate::numerics::{dot, Matrix, PcaModel};
use crate::textfeat::EmbeddingTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RelNetVariant {
    #[serde(rename = "relnet1")]
    V1,
    #[serde(rename = "relnet2")]
    V2,
    #[serde(rename = "relnet3")]
    V3,
    #[serde(rename = "relnet4")]
    V4,
}

impl RelNetVariant {
    pub const ALL: [RelNetVariant; 4] = [Self::V1, Self::V2, Self::V3, Self::V4];

    pub fn number(self) -> u8 {
        match self {
            Self::V1 => 1,
            Self::V2 => 2,
            Self::V3 => 3,
            Self::V4 => 4,
        }
    }

    fn has_question_lstm(self) -> bool {
        self != Self::V4
    }

    fn image_first(self) -> bool {
        matches!(self, Self::V3 | Self::V4)
    }
}

/// How variants 3 and 4 feed an image embedding and a differently sized
/// sequence input through the same fusion LSTM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepOneMode {
    /// Zero-pad the narrower input to the wider width.
    #[default]
    Pad,
    /// Map the image embedding to the sequence width with an extra
    /// trainable matrix.
    Project,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RelNetConfig {
    pub variant: RelNetVariant,
    /// Token embedding width.
    pub embed_dim: usize,
    /// Hidden width of both LSTMs.
    pub hidden_dim: usize,
    /// Width of the image after its pathway.
    pub image_embed_dim: usize,
    /// Raw image feature width.
    pub image_dim: usize,
    pub step_one: StepOneMode,
}

impl Default for RelNetConfig {
    fn default() -> Self {
        RelNetConfig {
            variant: RelNetVariant::V4,
            embed_dim: 300,
            hidden_dim: 256,
            image_embed_dim: 300,
            image_dim: 4096,
            step_one: StepOneMode::Pad,
        }
    }
}

impl RelNetConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.embed_dim,
            self.hidden_dim,
            self.image_embed_dim,
            self.image_dim,
        ];
        if dims.contains(&0) {
            return Err(Error::invalid("RelNet dimensions must be positive"));
        }
        Ok(())
    }

    /// Width of the sequence inputs after step 1 (variants 3 and 4).
    fn sequence_width(&self) -> usize {
        match self.variant {
            RelNetVariant::V4 => self.embed_dim,
            _ => self.hidden_dim,
        }
    }

    fn fusion_input_dim(&self) -> usize {
        if !self.variant.image_first() {
            return self.hidden_dim + self.image_embed_dim;
        }
        match self.step_one {
            StepOneMode::Pad => self.sequence_width().max(self.image_embed_dim),
            StepOneMode::Project => self.sequence_width(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ImagePathway {
    /// Fixed projection, not trained.
    Pca(PcaModel),
    Linear { w: Matrix, b: Vec<f64> },
}

impl ImagePathway {
    fn apply(&self, image: &[f64]) -> Result<Vec<f64>> {
        match self {
            ImagePathway::Pca(p) => p.project(image),
            ImagePathway::Linear { w, b } => {
                check_dim(w.cols(), image.len())?;
                let mut y = w.matvec(image);
                add_scaled(&mut y, b, 1.0);
                Ok(y)
            }
        }
    }
}

/// One scored example: raw image features and encoded token ids.
#[derive(Debug, Clone, PartialEq)]
pub struct RelNetInput {
    pub image: Vec<f64>,
    pub tokens: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelNetModel {
    pub config: RelNetConfig,
    pub vocab: Vocabulary,
    pub embedding: Matrix,
    pub image: ImagePathway,
    pub question: Option<LstmCell>,
    pub fusion: LstmCell,
    /// Present only for variants 3 and 4 in [`StepOneMode::Project`].
    pub step_one: Option<Matrix>,
    pub head: Vec<f64>,
    pub head_bias: f64,
}

struct Forward {
    img: Vec<f64>,
    question: Option<LstmTrace>,
    fusion: LstmTrace,
    p: f64,
}

impl RelNetModel {
    /// Seeded initialization. Variant 1 needs a fitted `pca`; token rows
    /// found in `embeddings` start from those vectors.
    pub fn new(
        config: RelNetConfig,
        vocab: Vocabulary,
        pca: Option<PcaModel>,
        embeddings: Option<&EmbeddingTable>,
        rng: &mut InitRng,
    ) -> Result<Self> {
        config.validate()?;
        let mut embedding = glorot(rng, vocab.len(), config.embed_dim);
        if let Some(table) = embeddings {
            check_dim(config.embed_dim, table.dim())?;
            for (i, word) in vocab.words().iter().enumerate().skip(1) {
                if let Some(v) = table.get(word) {
                    embedding.row_mut(i).copy_from_slice(v);
                }
            }
        }
        let image = Self::pathway(&config, pca, |r, c| glorot(rng, r, c))?;
        let question = config
            .variant
            .has_question_lstm()
            .then(|| LstmCell::new(config.embed_dim, config.hidden_dim, rng));
        let fusion = LstmCell::new(config.fusion_input_dim(), config.hidden_dim, rng);
        let step_one = Self::needs_step_one(&config)
            .then(|| glorot(rng, config.sequence_width(), config.image_embed_dim));
        let head = glorot(rng, 1, config.hidden_dim).as_slice().to_vec();
        let model = RelNetModel {
            config,
            vocab,
            embedding,
            image,
            question,
            fusion,
            step_one,
            head,
            head_bias: 0.0,
        };
        model.validate()?;
        Ok(model)
    }

    /// Every trainable parameter zero (the PCA of variant 1 is kept).
    pub fn zeros(config: RelNetConfig, vocab: Vocabulary, pca: Option<PcaModel>) -> Result<Self> {
        config.validate()?;
        let image = Self::pathway(&config, pca, Matrix::zeros)?;
        let model = RelNetModel {
            embedding: Matrix::zeros(vocab.len(), config.embed_dim),
            vocab,
            image,
            question: config
                .variant
                .has_question_lstm()
                .then(|| LstmCell::zeros(config.embed_dim, config.hidden_dim)),
            fusion: LstmCell::zeros(config.fusion_input_dim(), config.hidden_dim),
            step_one: Self::needs_step_one(&config)
                .then(|| Matrix::zeros(config.sequence_width(), config.image_embed_dim)),
            head: vec![0.0; config.hidden_dim],
            head_bias: 0.0,
            config,
        };
        model.validate()?;
        Ok(model)
    }

    fn needs_step_one(config: &RelNetConfig) -> bool {
        config.variant.image_first() && config.step_one == StepOneMode::Project
    }

    fn pathway(
        config: &RelNetConfig,
        pca: Option<PcaModel>,
        mut init: impl FnMut(usize, usize) -> Matrix,
    ) -> Result<ImagePathway> {
        match (config.variant, pca) {
            (RelNetVariant::V1, Some(p)) => Ok(ImagePathway::Pca(p)),
            (RelNetVariant::V1, None) => Err(Error::invalid("RelNet1 needs a fitted PCA model")),
            (_, _) => Ok(ImagePathway::Linear {
                w: init(config.image_embed_dim, config.image_dim),
                b: vec![0.0; config.image_embed_dim],
            }),
        }
    }

    /// Checks every tensor against the configuration.
    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        c.validate()?;
        check_dim(self.vocab.len(), self.embedding.rows())?;
        check_dim(c.embed_dim, self.embedding.cols())?;
        match &self.image {
            ImagePathway::Pca(p) => {
                if c.variant != RelNetVariant::V1 {
                    return Err(Error::invalid("only RelNet1 uses a PCA pathway"));
                }
                check_dim(c.image_dim, p.input_dim())?;
                check_dim(c.image_embed_dim, p.output_dim())?;
            }
            ImagePathway::Linear { w, b } => {
                if c.variant == RelNetVariant::V1 {
                    return Err(Error::invalid("RelNet1 uses a PCA pathway"));
                }
                check_dim(c.image_dim, w.cols())?;
                check_dim(c.image_embed_dim, w.rows())?;
                check_dim(c.image_embed_dim, b.len())?;
            }
        }
        match (&self.question, c.variant.has_question_lstm()) {
            (Some(q), true) => {
                check_dim(c.embed_dim, q.input_dim())?;
                check_dim(c.hidden_dim, q.hidden_dim())?;
            }
            (None, false) => {}
            _ => return Err(Error::invalid("question LSTM does not match the variant")),
        }
        check_dim(c.fusion_input_dim(), self.fusion.input_dim())?;
        check_dim(c.hidden_dim, self.fusion.hidden_dim())?;
        match (&self.step_one, Self::needs_step_one(c)) {
            (Some(p), true) => {
                check_dim(c.sequence_width(), p.rows())?;
                check_dim(c.image_embed_dim, p.cols())?;
            }
            (None, false) => {}
            _ => return Err(Error::invalid("step-one map does not match the configuration")),
        }
        check_dim(c.hidden_dim, self.head.len())
    }

    pub fn variant(&self) -> RelNetVariant {
        self.config.variant
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        self.vocab.encode(tokens)
    }

    fn padded(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.fusion.input_dim()];
        out[..v.len()].copy_from_slice(v);
        out
    }

    fn forward(&self, x: &RelNetInput) -> Result<Forward> {
        if x.tokens.is_empty() {
            return Err(Error::invalid("empty token sequence"));
        }
        check_dim(self.config.image_dim, x.image.len())?;
        let img = self.image.apply(&x.image)?;
        let embedded = x
            .tokens
            .iter()
            .map(|&t| {
                if t >= self.embedding.rows() {
                    return Err(Error::invalid(format!("token id {t} out of range")));
                }
                Ok(self.embedding.row(t).to_vec())
            })
            .collect::<Result<Vec<_>>>()?;
        let question = match &self.question {
            Some(q) => Some(q.forward(&embedded)?),
            None => None,
        };
        let seq: &[Vec<f64>] = match &question {
            Some(tr) => tr.outputs(),
            None => &embedded,
        };
        let inputs: Vec<Vec<f64>> = if self.variant().image_first() {
            let first = match &self.step_one {
                Some(p) => p.matvec(&img),
                None => self.padded(&img),
            };
            std::iter::once(first)
                .chain(seq.iter().map(|s| self.padded(s)))
                .collect()
        } else {
            seq.iter()
                .map(|h| h.iter().chain(&img).copied().collect())
                .collect()
        };
        let fusion = self.fusion.forward(&inputs)?;
        let p = probability(dot(&self.head, fusion.last_hidden()) + self.head_bias);
        Ok(Forward {
            img,
            question,
            fusion,
            p,
        })
    }

    pub fn predict_tokens<S: AsRef<str>>(&self, image: &[f64], tokens: &[S]) -> Result<f64> {
        self.predict(&RelNetInput {
            image: image.to_vec(),
            tokens: self.encode(tokens),
        })
    }
}

impl Differentiable for RelNetModel {
    type Input = RelNetInput;

    fn predict(&self, x: &RelNetInput) -> Result<f64> {
        Ok(self.forward(x)?.p)
    }

    /// Order: embedding, image (2–4), question (1–3), fusion, step-one map
    /// (project mode), head.
    fn parameters(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = vec![("embedding".into(), self.embedding.as_slice())];
        if let ImagePathway::Linear { w, b } = &self.image {
            out.push(("image.w".into(), w.as_slice()));
            out.push(("image.b".into(), b));
        }
        if let Some(q) = &self.question {
            out.push(("question.w".into(), q.w.as_slice()));
            out.push(("question.u".into(), q.u.as_slice()));
            out.push(("question.b".into(), &q.b));
        }
        out.push(("fusion.w".into(), self.fusion.w.as_slice()));
        out.push(("fusion.u".into(), self.fusion.u.as_slice()));
        out.push(("fusion.b".into(), &self.fusion.b));
        if let Some(p) = &self.step_one {
            out.push(("step_one".into(), p.as_slice()));
        }
        out.push(("head.w".into(), &self.head));
        out.push(("head.b".into(), std::slice::from_ref(&self.head_bias)));
        out
    }

    fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![self.embedding.as_mut_slice()];
        if let ImagePathway::Linear { w, b } = &mut self.image {
            out.push(w.as_mut_slice());
            out.push(b);
        }
        if let Some(q) = &mut self.question {
            out.push(q.w.as_mut_slice());
            out.push(q.u.as_mut_slice());
            out.push(&mut q.b);
        }
        out.push(self.fusion.w.as_mut_slice());
        out.push(self.fusion.u.as_mut_slice());
        out.push(&mut self.fusion.b);
        if let Some(p) = &mut self.step_one {
            out.push(p.as_mut_slice());
        }
        out.push(&mut self.head);
        out.push(std::slice::from_mut(&mut self.head_bias));
        out
    }

    fn accumulate_gradients(
        &self,
        x: &RelNetInput,
        target: f64,
        scale: f64,
        grads: &mut [Vec<f64>],
    ) -> Result<f64> {
        let fw = self.forward(x)?;
        let c = &self.config;
        let dz = fw.p - target;
        let n_tokens = x.tokens.len();

        let mut rest: &mut [Vec<f64>] = grads;
        let mut take = || -> Result<&mut Vec<f64>> {
            let (head, tail) = std::mem::take(&mut rest)
                .split_first_mut()
                .ok_or_else(|| Error::invalid("gradient layout mismatch"))?;
            rest = tail;
            Ok(head)
        };
        let g_emb = take()?;
        let g_img = match self.image {
            ImagePathway::Linear { .. } => Some((take()?, take()?)),
            ImagePathway::Pca(_) => None,
        };
        let g_q = match self.question {
            Some(_) => Some((take()?, take()?, take()?)),
            None => None,
        };
        let (g_fw, g_fu, g_fb) = (take()?, take()?, take()?);
        let g_step = match self.step_one {
            Some(_) => Some(take()?),
            None => None,
        };
        let (g_head, g_hb) = (take()?, take()?);

        let h_last = fw.fusion.last_hidden();
        add_scaled(g_head, h_last, scale * dz);
        g_hb[0] += scale * dz;

        let steps = fw.fusion.len();
        let mut dh = vec![vec![0.0; c.hidden_dim]; steps];
        dh[steps - 1] = self.head.iter().map(|w| dz * w).collect();
        let dfs = self.fusion.backward(
            &fw.fusion,
            &dh,
            scale,
            LstmGrads {
                w: g_fw,
                u: g_fu,
                b: g_fb,
            },
        );

        // Unscaled gradients w.r.t. the image embedding and the sequence
        // fed to the fusion LSTM (question outputs or token embeddings).
        let mut d_img = vec![0.0; c.image_embed_dim];
        let seq_width = if self.question.is_some() {
            c.hidden_dim
        } else {
            c.embed_dim
        };
        let mut d_seq = vec![vec![0.0; seq_width]; n_tokens];
        if self.variant().image_first() {
            match &self.step_one {
                Some(p) => {
                    p.add_transpose_matvec(&dfs[0], &mut d_img);
                    let g = g_step.expect("step-one gradient slot");
                    add_outer_scaled(g, c.image_embed_dim, &dfs[0], &fw.img, scale);
                }
                None => d_img.copy_from_slice(&dfs[0][..c.image_embed_dim]),
            }
            for (d, df) in d_seq.iter_mut().zip(&dfs[1..]) {
                d.copy_from_slice(&df[..seq_width]);
            }
        } else {
            for (d, df) in d_seq.iter_mut().zip(&dfs) {
                d.copy_from_slice(&df[..c.hidden_dim]);
                add_scaled(&mut d_img, &df[c.hidden_dim..], 1.0);
            }
        }

        let d_emb = match (&self.question, &fw.question, g_q) {
            (Some(q), Some(trace), Some((w, u, b))) => {
                q.backward(trace, &d_seq, scale, LstmGrads { w, u, b })
            }
            _ => d_seq,
        };
        let ed = c.embed_dim;
        for (&t, d) in x.tokens.iter().zip(&d_emb) {
            add_scaled(&mut g_emb[t * ed..(t + 1) * ed], d, scale);
        }
        if let Some((gw, gb)) = g_img {
            add_outer_scaled(gw, c.image_dim, &d_img, &x.image, scale);
            add_scaled(gb, &d_img, scale);
        }
        Ok(bce(fw.p, target))
    }
}
