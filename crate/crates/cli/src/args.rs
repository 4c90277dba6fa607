use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qrel::miner::OrderSelection;
use qrel::models::{RelNetVariant, StepOneMode};
use qrel::premise::FalsificationMode;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "qrel", version, about = "Question relevance pipeline for visual question answering")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fill in POS tags from a token→tag lexicon
    Tag(TagArgs),
    /// Hash POS n-grams of each question into sparse features
    Featurize(FeaturizeArgs),
    /// Fit PCA on the image features
    Pca(PcaArgs),
    /// Find the least similar questions for every image
    Mine(MineArgs),
    /// Build the labeled relevance dataset
    BuildDataset(BuildDatasetArgs),
    /// Train a model
    Train(TrainArgs),
    /// Score a labeled set and report metrics
    Evaluate(EvaluateArgs),
    /// Write per-example probabilities
    Predict(EvaluateArgs),
    /// Write dense relevance features as CSV for external learners
    ExportFeatures(ExportArgs),
    /// Print the statistics table of a dataset manifest
    Stats(StatsArgs),
    /// Merge evaluation results into one table
    Report(ReportArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Tag(_) => "tag",
            Command::Featurize(_) => "featurize",
            Command::Pca(_) => "pca",
            Command::Mine(_) => "mine",
            Command::BuildDataset(_) => "build-dataset",
            Command::Train(_) => "train",
            Command::Evaluate(_) => "evaluate",
            Command::Predict(_) => "predict",
            Command::ExportFeatures(_) => "export-features",
            Command::Stats(_) => "stats",
            Command::Report(_) => "report",
        }
    }

    pub fn common(&self) -> &Common {
        match self {
            Command::Tag(a) => &a.common,
            Command::Featurize(a) => &a.common,
            Command::Pca(a) => &a.common,
            Command::Mine(a) => &a.common,
            Command::BuildDataset(a) => &a.common,
            Command::Train(a) => &a.common,
            Command::Evaluate(a) | Command::Predict(a) => &a.common,
            Command::ExportFeatures(a) => &a.common,
            Command::Stats(a) => &a.common,
            Command::Report(a) => &a.common,
        }
    }

    /// Layers the command's flags over `cfg`.
    pub fn apply(&self, cfg: &mut RunConfig) {
        self.common().apply(cfg);
        match self {
            Command::Tag(a) => {
                a.text.apply(cfg);
            }
            Command::Featurize(a) => {
                a.text.apply(cfg);
                set(&mut cfg.model.hash_dim, a.hash_dim);
                set(&mut cfg.model.ngram, a.ngram);
            }
            Command::Pca(a) => {
                a.pca.apply(cfg);
                some(&mut cfg.paths.features, &a.features);
            }
            Command::Mine(a) => {
                some(&mut cfg.paths.questions, &a.questions);
                some(&mut cfg.paths.embeddings, &a.embeddings);
                set(&mut cfg.dissimilar_k, a.k);
            }
            Command::BuildDataset(a) => a.apply(cfg),
            Command::Train(a) => a.apply(cfg),
            Command::Evaluate(a) | Command::Predict(a) => a.apply(cfg),
            Command::ExportFeatures(a) => {
                a.pca.apply(cfg);
                a.relevance.apply(cfg);
                some(&mut cfg.paths.embeddings, &a.embeddings);
            }
            Command::Stats(a) => some(&mut cfg.paths.dataset, &a.dataset),
            Command::Report(_) => {}
        }
    }
}

fn set<T: Copy>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn some<T: Clone>(slot: &mut Option<T>, value: &Option<T>) {
    if value.is_some() {
        slot.clone_from(value);
    }
}

/// Flags shared by every subcommand.
#[derive(Debug, Args)]
pub struct Common {
    /// JSON run configuration; flags override its values
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Directory for all artifacts
    #[arg(long, env = "QREL_OUT_DIR", value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    /// Worker threads [default: available parallelism]
    #[arg(long, env = "QREL_WORKERS", value_name = "N")]
    pub workers: Option<usize>,
    /// Seed for every random choice [default: 42]
    #[arg(long)]
    pub seed: Option<u64>,
}

impl Common {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(d) = &self.out_dir {
            cfg.out_dir.clone_from(d);
        }
        some(&mut cfg.workers, &self.workers);
        set(&mut cfg.seed, self.seed);
    }
}

/// Question text inputs.
#[derive(Debug, Args)]
pub struct TextArgs {
    #[arg(long, value_name = "FILE")]
    pub questions: Option<PathBuf>,
    /// token<TAB>tag lexicon, used when a question has no POS tags
    #[arg(long, value_name = "FILE")]
    pub lexicon: Option<PathBuf>,
    /// Tag for tokens missing from the lexicon [default: NN]
    #[arg(long)]
    pub default_tag: Option<String>,
}

impl TextArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        some(&mut cfg.paths.questions, &self.questions);
        some(&mut cfg.paths.lexicon, &self.lexicon);
        if let Some(t) = &self.default_tag {
            cfg.model.default_tag.clone_from(t);
        }
    }
}

#[derive(Debug, Args)]
pub struct TagArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub text: TextArgs,
}

#[derive(Debug, Args)]
pub struct FeaturizeArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub text: TextArgs,
    /// Hashed feature space size [default: 262144]
    #[arg(long)]
    pub hash_dim: Option<usize>,
    /// Largest n-gram order, 1 to 3 [default: 2]
    #[arg(long)]
    pub ngram: Option<usize>,
}

/// PCA fitting options.
#[derive(Debug, Args)]
pub struct PcaOptionArgs {
    /// Number of components (the image embedding width) [default: 300]
    #[arg(long = "components", value_name = "K")]
    pub components: Option<usize>,
    /// Fit on this many uniformly sampled images
    #[arg(long, value_name = "N")]
    pub pca_sample: Option<usize>,
    /// Use a fitted PCA file instead of fitting
    #[arg(long, value_name = "FILE")]
    pub pca: Option<PathBuf>,
}

impl PcaOptionArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        set(&mut cfg.model.image_embed_dim, self.components);
        some(&mut cfg.model.pca_sample, &self.pca_sample);
        some(&mut cfg.paths.pca, &self.pca);
    }
}

#[derive(Debug, Args)]
pub struct PcaArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub pca: PcaOptionArgs,
    #[arg(long, value_name = "FILE")]
    pub features: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MineArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "FILE")]
    pub questions: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub embeddings: Option<PathBuf>,
    /// Questions kept per image [default: 10]
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OrderArg {
    First,
    Second,
    Both,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FalsificationArg {
    ExactlyOne,
    AtLeastOne,
}

#[derive(Debug, Args)]
pub struct BuildDatasetArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "FILE")]
    pub questions: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub annotations: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub features: Option<PathBuf>,
    /// Object lemmas, one per line (plural<TAB>singular overrides)
    #[arg(long, value_name = "FILE")]
    pub vocab: Option<PathBuf>,
    /// attr<TAB>antonym pairs; needed for second-order mining
    #[arg(long, value_name = "FILE")]
    pub antonyms: Option<PathBuf>,
    /// Similar images searched per question [default: 10]
    #[arg(long)]
    pub k: Option<usize>,
    /// Premise orders to mine [default: both]
    #[arg(long, value_enum)]
    pub order: Option<OrderArg>,
    /// How many premises a negative must falsify [default: at-least-one]
    #[arg(long, value_enum)]
    pub falsification: Option<FalsificationArg>,
    /// Cap on negatives per question [default: 10]
    #[arg(long)]
    pub max_negatives: Option<usize>,
}

impl BuildDatasetArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        let p = &mut cfg.paths;
        some(&mut p.questions, &self.questions);
        some(&mut p.annotations, &self.annotations);
        some(&mut p.features, &self.features);
        some(&mut p.vocab, &self.vocab);
        some(&mut p.antonyms, &self.antonyms);
        let m = &mut cfg.miner;
        set(&mut m.k_similar, self.k);
        set(&mut m.max_negatives_per_question, self.max_negatives);
        if let Some(o) = self.order {
            m.order = match o {
                OrderArg::First => OrderSelection::First,
                OrderArg::Second => OrderSelection::Second,
                OrderArg::Both => OrderSelection::Both,
            };
        }
        if let Some(f) = self.falsification {
            m.falsification_mode = match f {
                FalsificationArg::ExactlyOne => FalsificationMode::ExactlyOne,
                FalsificationArg::AtLeastOne => FalsificationMode::AtLeastOne,
            };
        }
    }
}

/// Trainable model families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelName {
    /// POS n-gram logistic regression (visual vs non-visual)
    LrVisual,
    /// POS-sequence LSTM (visual vs non-visual)
    LstmVisual,
    /// Logistic regression on PCA image + averaged embedding features
    LrPremise,
    /// MLP on raw image + averaged embedding features
    Mlp,
    Relnet1,
    Relnet2,
    Relnet3,
    Relnet4,
}

impl ModelName {
    pub fn relnet(self) -> Option<RelNetVariant> {
        match self {
            ModelName::Relnet1 => Some(RelNetVariant::V1),
            ModelName::Relnet2 => Some(RelNetVariant::V2),
            ModelName::Relnet3 => Some(RelNetVariant::V3),
            ModelName::Relnet4 => Some(RelNetVariant::V4),
            _ => None,
        }
    }

    /// Visual vs non-visual question models, as opposed to relevance models.
    pub fn is_visual_task(self) -> bool {
        matches!(self, ModelName::LrVisual | ModelName::LstmVisual)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelName::LrVisual => "lr-visual",
            ModelName::LstmVisual => "lstm-visual",
            ModelName::LrPremise => "lr-premise",
            ModelName::Mlp => "mlp",
            ModelName::Relnet1 => "relnet1",
            ModelName::Relnet2 => "relnet2",
            ModelName::Relnet3 => "relnet3",
            ModelName::Relnet4 => "relnet4",
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StepOneArg {
    Pad,
    Project,
}

/// Inputs of relevance models.
#[derive(Debug, Args)]
pub struct RelevanceArgs {
    /// Dataset manifest (relevance models)
    #[arg(long, value_name = "FILE")]
    pub dataset: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub features: Option<PathBuf>,
    /// Question records (the labeled set for visual models)
    #[arg(long, value_name = "FILE")]
    pub questions: Option<PathBuf>,
}

impl RelevanceArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        some(&mut cfg.paths.dataset, &self.dataset);
        some(&mut cfg.paths.features, &self.features);
        some(&mut cfg.paths.questions, &self.questions);
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(value_enum)]
    pub model: ModelName,
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub inputs: RelevanceArgs,
    #[command(flatten)]
    pub pca: PcaOptionArgs,
    /// Word vectors (`token v1 .. vd` per line)
    #[arg(long, value_name = "FILE")]
    pub embeddings: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub lexicon: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    /// Build batches on a background thread
    #[arg(long)]
    pub prefetch: bool,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    /// Step-one input reconciliation for relnet3/relnet4
    #[arg(long, value_enum)]
    pub step_one: Option<StepOneArg>,
    /// MLP hidden layer widths, comma separated [default: 5000,500]
    #[arg(long, value_delimiter = ',')]
    pub mlp_hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub hash_dim: Option<usize>,
    #[arg(long)]
    pub ngram: Option<usize>,
    /// POS-LSTM hidden width [default: 100]
    #[arg(long)]
    pub pos_hidden_dim: Option<usize>,
}

impl TrainArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        self.inputs.apply(cfg);
        self.pca.apply(cfg);
        some(&mut cfg.paths.embeddings, &self.embeddings);
        some(&mut cfg.paths.lexicon, &self.lexicon);
        let t = &mut cfg.train;
        set(&mut t.epochs, self.epochs);
        set(&mut t.learning_rate, self.learning_rate);
        set(&mut t.batch_size, self.batch_size);
        set(&mut t.l2, self.l2);
        set(&mut t.momentum, self.momentum);
        t.prefetch |= self.prefetch;
        let m = &mut cfg.model;
        some(&mut m.embed_dim, &self.embed_dim);
        set(&mut m.hidden_dim, self.hidden_dim);
        set(&mut m.hash_dim, self.hash_dim);
        set(&mut m.ngram, self.ngram);
        set(&mut m.poslstm.hidden_dim, self.pos_hidden_dim);
        if let Some(h) = &self.mlp_hidden {
            m.mlp_hidden.clone_from(h);
        }
        if let Some(s) = self.step_one {
            m.step_one = match s {
                StepOneArg::Pad => StepOneMode::Pad,
                StepOneArg::Project => StepOneMode::Project,
            };
        }
    }
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Model file written by `train`
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub inputs: RelevanceArgs,
    /// Dataset label in the report [default: input file stem]
    #[arg(long)]
    pub name: Option<String>,
    /// Probability at or above which the positive class is predicted [default: 0.5]
    #[arg(long)]
    pub threshold: Option<f64>,
}

impl EvaluateArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        some(&mut cfg.paths.model, &self.model);
        self.inputs.apply(cfg);
        set(&mut cfg.train.threshold, self.threshold);
    }
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub relevance: RelevanceArgs,
    #[command(flatten)]
    pub pca: PcaOptionArgs,
    #[arg(long, value_name = "FILE")]
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "FILE")]
    pub dataset: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub common: Common,
    /// eval.json files written by `evaluate`
    #[arg(required = true, value_name = "EVAL_JSON")]
    pub results: Vec<PathBuf>,
}
