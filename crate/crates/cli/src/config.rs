//! JSON run configuration. Every field has a default; a config file only
//! needs the fields it changes, and command-line flags override the file.

use std::fmt;
use std::path::{Path, PathBuf};

use qrel::miner::MinerConfig;
use qrel::models::{PosLstmConfig, RelNetConfig, RelNetVariant, StepOneMode, TrainConfig};
use serde::{Deserialize, Serialize};

/// A problem with flags, the config file or their combination (exit code 2).
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub questions: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub antonyms: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    /// A dataset manifest.
    pub dataset: Option<PathBuf>,
    pub pca: Option<PathBuf>,
    pub model: Option<PathBuf>,
}

impl Paths {
    pub fn require(&self, field: Option<&PathBuf>, name: &str) -> anyhow::Result<PathBuf> {
        field
            .cloned()
            .ok_or_else(|| config_error(format!("missing path: pass --{name} or set paths.{name}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelOptions {
    /// Token embedding width; taken from the embeddings file when unset.
    pub embed_dim: Option<usize>,
    pub hidden_dim: usize,
    /// Image embedding width, also the number of PCA components.
    pub image_embed_dim: usize,
    pub step_one: StepOneMode,
    pub mlp_hidden: Vec<usize>,
    pub poslstm: PosLstmConfig,
    pub hash_dim: usize,
    /// Largest POS n-gram order for the hashed features.
    pub ngram: usize,
    /// Tag for tokens missing from the lexicon.
    pub default_tag: String,
    /// Fit PCA on this many uniformly sampled images instead of all.
    pub pca_sample: Option<usize>,
}

impl Default for ModelOptions {
    fn default() -> Self {
        let relnet = RelNetConfig::default();
        ModelOptions {
            embed_dim: None,
            hidden_dim: relnet.hidden_dim,
            image_embed_dim: relnet.image_embed_dim,
            step_one: relnet.step_one,
            mlp_hidden: vec![5000, 500],
            poslstm: PosLstmConfig::default(),
            hash_dim: 1 << 18,
            ngram: 2,
            default_tag: "NN".into(),
            pca_sample: None,
        }
    }
}

impl ModelOptions {
    pub fn relnet(&self, variant: RelNetVariant, embed_dim: usize, image_dim: usize) -> RelNetConfig {
        RelNetConfig {
            variant,
            embed_dim,
            hidden_dim: self.hidden_dim,
            image_embed_dim: self.image_embed_dim,
            image_dim,
            step_one: self.step_one,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Copied into the miner and trainer sections.
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Worker threads; all available cores when unset.
    pub workers: Option<usize>,
    /// Questions returned per image by `mine`.
    pub dissimilar_k: usize,
    pub paths: Paths,
    pub miner: MinerConfig,
    pub train: TrainConfig,
    pub model: ModelOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            out_dir: PathBuf::from("out"),
            workers: None,
            dissimilar_k: 10,
            paths: Paths::default(),
            miner: MinerConfig::default(),
            train: TrainConfig::default(),
            model: ModelOptions::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))
    }

    /// Propagates the seed and checks the numeric settings.
    pub fn finish(&mut self) -> anyhow::Result<()> {
        self.miner.seed = self.seed;
        self.train.seed = self.seed;
        let invalid = |e: qrel::Error| config_error(e.to_string());
        self.miner.validate().map_err(invalid)?;
        self.train.validate().map_err(invalid)?;
        let m = &self.model;
        if m.hash_dim == 0 {
            return Err(config_error("model.hash_dim must be at least 1"));
        }
        if !(1..=3).contains(&m.ngram) {
            return Err(config_error("model.ngram must be 1, 2 or 3"));
        }
        if m.hidden_dim == 0 || m.image_embed_dim == 0 || m.embed_dim == Some(0) {
            return Err(config_error("model dimensions must be at least 1"));
        }
        if self.workers == Some(0) {
            return Err(config_error("workers must be at least 1"));
        }
        Ok(())
    }
}
