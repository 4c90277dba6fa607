//! Model files.
//!
//! Little-endian layout: `"QRMD" | version u32 | header_len u32 | header`
//! (JSON: model kind, dims, variant, vocabulary, seed) `| tensor_count u32`,
//! then per tensor `name_len u16 | name | len u64 | len × f64`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::relnet::ImagePathway;
use super::{
    Differentiable, LrModel, MlpModel, PosLstmConfig, PosLstmModel, RelNetConfig, RelNetModel,
    RelNetVariant, Vocabulary,
};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, PcaModel};

const MAGIC: &[u8; 4] = b"QRMD";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum SavedModel {
    Lr(LrModel),
    Mlp(MlpModel),
    PosLstm(PosLstmModel),
    RelNet(RelNetModel),
}

impl SavedModel {
    pub fn kind(&self) -> String {
        match self {
            SavedModel::Lr(_) => "lr".into(),
            SavedModel::Mlp(_) => "mlp".into(),
            SavedModel::PosLstm(_) => "poslstm".into(),
            SavedModel::RelNet(m) => format!("relnet{}", m.variant().number()),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Shape {
    Lr { dim: usize },
    Mlp { layer_dims: Vec<usize> },
    Poslstm { config: PosLstmConfig, tags: Vocabulary },
    Relnet { config: RelNetConfig, vocab: Vocabulary },
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    seed: u64,
    #[serde(flatten)]
    shape: Shape,
}

fn frozen_tensors(model: &SavedModel) -> Vec<(String, &[f64])> {
    match model {
        SavedModel::RelNet(RelNetModel {
            image: ImagePathway::Pca(p),
            ..
        }) => vec![
            ("pca.mean".into(), p.mean()),
            ("pca.components".into(), p.components().as_slice()),
            ("pca.eigenvalues".into(), p.eigenvalues()),
        ],
        _ => Vec::new(),
    }
}

fn tensors(model: &SavedModel) -> Vec<(String, &[f64])> {
    let mut out = match model {
        SavedModel::Lr(m) => m.parameters(),
        SavedModel::Mlp(m) => m.parameters(),
        SavedModel::PosLstm(m) => m.parameters(),
        SavedModel::RelNet(m) => m.parameters(),
    };
    out.extend(frozen_tensors(model));
    out
}

pub fn save_model(path: impl AsRef<Path>, model: &SavedModel, seed: u64) -> Result<()> {
    let path = path.as_ref();
    let shape = match model {
        SavedModel::Lr(m) => Shape::Lr { dim: m.dim() },
        SavedModel::Mlp(m) => Shape::Mlp {
            layer_dims: m.layer_dims.clone(),
        },
        SavedModel::PosLstm(m) => Shape::Poslstm {
            config: m.config(),
            tags: m.tags.clone(),
        },
        SavedModel::RelNet(m) => Shape::Relnet {
            config: m.config,
            vocab: m.vocab.clone(),
        },
    };
    let header = serde_json::to_vec(&Header { seed, shape })
        .map_err(|e| Error::invalid(format!("model header: {e}")))?;
    let tensors = tensors(model);

    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, values) in &tensors {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(values.len() as u64).to_le_bytes());
        for v in *values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            return Err(Error::Truncated {
                path: self.path.into(),
                what: what.into(),
            });
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }
}

/// Reads a model written by [`save_model`]; returns it with its seed.
pub fn load_model(path: impl AsRef<Path>) -> Result<(SavedModel, u64)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor { path, bytes: &bytes };
    if cur.take(4, "magic").ok() != Some(MAGIC.as_slice()) {
        return Err(Error::BadMagic {
            path: path.into(),
            expected: "QRMD".into(),
        });
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.into(),
            version,
        });
    }
    let header_len = cur.u32("header length")? as usize;
    let header: Header = serde_json::from_slice(cur.take(header_len, "header")?)
        .map_err(|e| Error::Corrupt(format!("{}: model header: {e}", path.display())))?;

    let count = cur.u32("tensor count")? as usize;
    let mut stored = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let name_len = u16::from_le_bytes(cur.array("tensor name")?) as usize;
        let name = String::from_utf8(cur.take(name_len, "tensor name")?.to_vec())
            .map_err(|_| Error::Corrupt("tensor name is not UTF-8".into()))?;
        let len = u64::from_le_bytes(cur.array("tensor length")?) as usize;
        let raw = cur.take(len.saturating_mul(8), &name)?;
        let values: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        stored.push((name, values));
    }
    if !cur.bytes.is_empty() {
        return Err(Error::Corrupt(format!("{}: trailing bytes", path.display())));
    }

    let mut model = match header.shape {
        Shape::Lr { dim } => SavedModel::Lr(LrModel::zeros(dim)),
        Shape::Mlp { layer_dims } => SavedModel::Mlp(MlpModel::zeros(&layer_dims)?),
        Shape::Poslstm { config, tags } => SavedModel::PosLstm(PosLstmModel::zeros(tags, config)),
        Shape::Relnet { config, vocab } => {
            let pca = if config.variant == RelNetVariant::V1 {
                let find = |name: &str| -> Result<Vec<f64>> {
                    stored
                        .iter()
                        .find(|(n, _)| n == name)
                        .map(|(_, v)| v.clone())
                        .ok_or_else(|| Error::Corrupt(format!("missing tensor {name}")))
                };
                let components = Matrix::from_vec(
                    config.image_embed_dim,
                    config.image_dim,
                    find("pca.components")?,
                )?;
                Some(PcaModel::from_parts(
                    find("pca.mean")?,
                    components,
                    find("pca.eigenvalues")?,
                )?)
            } else {
                None
            };
            SavedModel::RelNet(RelNetModel::zeros(config, vocab, pca)?)
        }
    };

    let expected: Vec<(String, usize)> = tensors(&model)
        .into_iter()
        .map(|(n, v)| (n, v.len()))
        .collect();
    if expected.len() != stored.len() {
        return Err(Error::Corrupt(format!(
            "expected {} tensors, found {}",
            expected.len(),
            stored.len()
        )));
    }
    for ((name, len), (got, values)) in expected.iter().zip(&stored) {
        if name != got || *len != values.len() {
            return Err(Error::Corrupt(format!(
                "tensor {got} ({} values) where {name} ({len} values) was expected",
                values.len()
            )));
        }
    }
    let params = match &mut model {
        SavedModel::Lr(m) => m.parameters_mut(),
        SavedModel::Mlp(m) => m.parameters_mut(),
        SavedModel::PosLstm(m) => m.parameters_mut(),
        SavedModel::RelNet(m) => m.parameters_mut(),
    };
    for (dst, (_, src)) in params.into_iter().zip(&stored) {
        dst.copy_from_slice(src);
    }
    Ok((model, header.seed))
}
