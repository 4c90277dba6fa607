//! Training, scoring and reporting subcommands.

use std::collections::HashMap;
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use qrel::corpus::{
    read_manifest, read_question_stream, write_jsonl, DatasetManifest, FeatureStore, LabeledPair, QuestionRecord,
};
use qrel::eval::{confusion, report, report_json, NamedResult};
use qrel::miner::question_map;
use qrel::models::{
    dense_relevance_features, init_rng, load_model, lr_train_streaming, mlp_input, save_model, score,
    train as train_model, BatchSource, Differentiable, LrInput, MlpModel, PosLstmModel,
    RelNetInput, RelNetModel, SavedModel, TrainReport, Vocabulary,
};
use qrel::numerics::PcaModel;
use qrel::textfeat::{pos_ngrams, EmbeddingTable, SparseFeatures};
use serde::{Deserialize, Serialize};

use crate::args::ModelName;
use crate::config::config_error;
use crate::inputs;
use crate::run::{write_file, Run};

/// Written next to every model: what it is and how its inputs were built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCard {
    pub model: ModelName,
    pub seed: u64,
    pub hash_dim: usize,
    pub ngram: usize,
    pub default_tag: String,
    pub questions: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub pca: Option<PathBuf>,
}

impl ModelCard {
    pub fn path_for(model: &Path) -> PathBuf {
        model.with_extension("json")
    }
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    model: ModelName,
    examples: usize,
    /// Mean training loss of each epoch (mini-batch models).
    epoch_losses: Vec<f64>,
    /// Mean training loss after the last epoch (streaming models).
    #[serde(skip_serializing_if = "Option::is_none")]
    final_loss: Option<f64>,
}

fn missing_label(q: &QuestionRecord) -> qrel::Error {
    qrel::Error::InvalidRecord(format!("question {:?} has no visual label", q.qid))
}

fn visual_target(q: &QuestionRecord) -> qrel::Result<f64> {
    q.visual.map(|v| f64::from(u8::from(v))).ok_or_else(|| missing_label(q))
}

fn question_tags(q: &QuestionRecord) -> qrel::Result<&[String]> {
    q.pos_tags.as_deref().ok_or_else(|| {
        qrel::Error::InvalidRecord(format!(
            "question {:?} has no POS tags (pass --lexicon or run `qrel tag`)",
            q.qid
        ))
    })
}

/// Pairs of a manifest, materialized one at a time from the feature store.
struct PairSource<'a, X, F> {
    pairs: &'a [LabeledPair],
    questions: &'a HashMap<String, QuestionRecord>,
    store: &'a FeatureStore,
    encode: F,
    _input: PhantomData<fn() -> X>,
}

impl<'a, X, F> PairSource<'a, X, F>
where
    F: Fn(Vec<f64>, &[String]) -> qrel::Result<X> + Sync,
{
    fn new(rel: &'a Relevance, encode: F) -> Self {
        PairSource {
            pairs: rel.manifest.pairs(),
            questions: &rel.questions,
            store: &rel.store,
            encode,
            _input: PhantomData,
        }
    }
}

impl<X, F> BatchSource for PairSource<'_, X, F>
where
    X: Send,
    F: Fn(Vec<f64>, &[String]) -> qrel::Result<X> + Sync,
{
    type Input = X;

    fn len(&self) -> usize {
        self.pairs.len()
    }

    fn example(&self, i: usize) -> qrel::Result<(X, f64)> {
        let p = &self.pairs[i];
        let q = self.questions.get(&p.qid).ok_or_else(|| qrel::Error::NotFound {
            kind: "question",
            id: p.qid.clone(),
        })?;
        let x = (self.encode)(self.store.vector(&p.iid)?, &q.tokens)?;
        Ok((x, p.label.target()))
    }
}

/// Everything a relevance model reads.
struct Relevance {
    manifest: DatasetManifest,
    questions: HashMap<String, QuestionRecord>,
    store: FeatureStore,
}

impl Relevance {
    fn load(run: &mut Run) -> anyhow::Result<Self> {
        let path = run.cfg.paths.require(run.cfg.paths.dataset.as_ref(), "dataset")?;
        let manifest = read_manifest(run.input("dataset", &path))?;
        let questions = question_map(inputs::questions(run)?);
        if let Some(p) = manifest.pairs().iter().find(|p| !questions.contains_key(&p.qid)) {
            return Err(qrel::Error::NotFound {
                kind: "question",
                id: p.qid.clone(),
            }
            .into());
        }
        let store = inputs::feature_store(run)?;
        Ok(Relevance {
            manifest,
            questions,
            store,
        })
    }

    fn vocabulary(&self) -> Vocabulary {
        let mut qids: Vec<&str> = self.manifest.pairs().iter().map(|p| p.qid.as_str()).collect();
        qids.dedup();
        Vocabulary::build(qids.iter().flat_map(|q| self.questions[*q].tokens.iter()))
    }
}

fn lr_visual_input(q: &QuestionRecord, ngram: usize, dim: usize) -> qrel::Result<SparseFeatures> {
    pos_ngrams(question_tags(q)?, ngram, dim)
}

fn train_lr_visual(run: &mut Run) -> anyhow::Result<(SavedModel, TrainSummary)> {
    let path = run.cfg.paths.require(run.cfg.paths.questions.as_ref(), "questions")?;
    let path = run.input("questions", &path);
    let lexicon = inputs::lexicon(run)?;
    let (ngram, dim) = (run.cfg.model.ngram, run.cfg.model.hash_dim);
    let lexicon = lexicon.as_ref();
    let stream = || -> Box<dyn Iterator<Item = qrel::Result<(SparseFeatures, f64)>> + '_> {
        match read_question_stream(&path) {
            Err(e) => Box::new(std::iter::once(Err(e))),
            Ok(lines) => Box::new(lines.map(move |r| {
                let mut q = r?;
                inputs::complete(&mut q, lexicon);
                Ok((lr_visual_input(&q, ngram, dim)?, visual_target(&q)?))
            })),
        }
    };
    let model = lr_train_streaming(dim, stream, &run.cfg.train)?;
    let (mut n, mut loss) = (0usize, 0.0);
    for item in stream() {
        let (x, y) = item?;
        loss += model.loss(&LrInput::Sparse(x), y)?;
        n += 1;
    }
    let summary = TrainSummary {
        model: ModelName::LrVisual,
        examples: n,
        epoch_losses: Vec::new(),
        final_loss: Some(loss / n.max(1) as f64),
    };
    Ok((SavedModel::Lr(model), summary))
}

fn train_lstm_visual(run: &mut Run) -> anyhow::Result<(SavedModel, TrainSummary)> {
    let questions = inputs::questions(run)?;
    let tags = Vocabulary::build(
        questions
            .iter()
            .map(question_tags)
            .collect::<qrel::Result<Vec<_>>>()?
            .into_iter()
            .flatten(),
    );
    let model = PosLstmModel::new(tags, run.cfg.model.poslstm, &mut init_rng(run.cfg.seed));
    let data = questions
        .iter()
        .map(|q| Ok((model.encode(question_tags(q)?), visual_target(q)?)))
        .collect::<qrel::Result<Vec<_>>>()?;
    let (model, report) = train_model(model, &data, &run.cfg.train)?;
    Ok((SavedModel::PosLstm(model), summary(ModelName::LstmVisual, report)))
}

fn summary(model: ModelName, report: TrainReport) -> TrainSummary {
    TrainSummary {
        model,
        examples: report.examples,
        epoch_losses: report.epoch_losses,
        final_loss: None,
    }
}

fn train_relnet(run: &mut Run, name: ModelName) -> anyhow::Result<(SavedModel, TrainSummary)> {
    let variant = name.relnet().expect("relnet model name");
    let rel = Relevance::load(run)?;
    let table = inputs::embeddings(run, run.cfg.model.embed_dim)?;
    let embed_dim = table
        .as_ref()
        .map(EmbeddingTable::dim)
        .or(run.cfg.model.embed_dim)
        .unwrap_or(qrel::models::RelNetConfig::default().embed_dim);
    let pca = match variant {
        qrel::models::RelNetVariant::V1 => {
            let p = inputs::pca(run, &rel.store)?;
            run.cfg.model.image_embed_dim = p.output_dim();
            Some(p)
        }
        _ => None,
    };
    let config = run.cfg.model.relnet(variant, embed_dim, rel.store.dim());
    let vocab = rel.vocabulary();
    let model = RelNetModel::new(config, vocab.clone(), pca, table.as_ref(), &mut init_rng(run.cfg.seed))?;
    let source = PairSource::new(&rel, |image, tokens| {
        Ok(RelNetInput {
            image,
            tokens: vocab.encode(tokens),
        })
    });
    let (model, report) = train_model(model, &source, &run.cfg.train)?;
    Ok((SavedModel::RelNet(model), summary(name, report)))
}

fn train_mlp(run: &mut Run) -> anyhow::Result<(SavedModel, TrainSummary)> {
    let rel = Relevance::load(run)?;
    let table = inputs::require_embeddings(run, run.cfg.model.embed_dim)?;
    let mut dims = vec![rel.store.dim() + table.dim()];
    dims.extend(&run.cfg.model.mlp_hidden);
    dims.push(1);
    let model = MlpModel::new(&dims, &mut init_rng(run.cfg.seed)).map_err(|e| config_error(e.to_string()))?;
    let source = PairSource::new(&rel, |image, tokens| Ok(mlp_input(&image, tokens, &table)));
    let (model, report) = train_model(model, &source, &run.cfg.train)?;
    Ok((SavedModel::Mlp(model), summary(ModelName::Mlp, report)))
}

fn train_lr_premise(run: &mut Run) -> anyhow::Result<(SavedModel, TrainSummary)> {
    let rel = Relevance::load(run)?;
    let table = inputs::require_embeddings(run, run.cfg.model.embed_dim)?;
    let pca = inputs::pca(run, &rel.store)?;
    let source = PairSource::new(&rel, |image, tokens| {
        dense_relevance_features(&image, tokens, &pca, &table)
    });
    let dim = pca.output_dim() + table.dim();
    let model = lr_train_streaming(dim, || (0..source.len()).map(|i| source.example(i)), &run.cfg.train)?;
    let mut loss = 0.0;
    for i in 0..source.len() {
        let (x, y) = source.example(i)?;
        loss += model.loss(&LrInput::Dense(x), y)?;
    }
    let summary = TrainSummary {
        model: ModelName::LrPremise,
        examples: source.len(),
        epoch_losses: Vec::new(),
        final_loss: Some(loss / source.len().max(1) as f64),
    };
    Ok((SavedModel::Lr(model), summary))
}

pub fn train(run: &mut Run, name: ModelName) -> anyhow::Result<()> {
    let (model, summary) = match name {
        ModelName::LrVisual => train_lr_visual(run)?,
        ModelName::LstmVisual => train_lstm_visual(run)?,
        ModelName::LrPremise => train_lr_premise(run)?,
        ModelName::Mlp => train_mlp(run)?,
        _ => train_relnet(run, name)?,
    };
    let model_path = run.output("model.qrm");
    save_model(&model_path, &model, run.cfg.seed)?;
    let p = &run.cfg.paths;
    let card = ModelCard {
        model: name,
        seed: run.cfg.seed,
        hash_dim: run.cfg.model.hash_dim,
        ngram: run.cfg.model.ngram,
        default_tag: run.cfg.model.default_tag.clone(),
        questions: p.questions.clone(),
        dataset: p.dataset.clone(),
        features: p.features.clone(),
        embeddings: p.embeddings.clone(),
        lexicon: p.lexicon.clone(),
        pca: p.pca.clone(),
    };
    let card_path = ModelCard::path_for(&model_path);
    run.output(card_path.file_name().and_then(|n| n.to_str()).expect("utf-8 file name"));
    write_file(&card_path, serde_json::to_string_pretty(&card)? + "\n")?;
    write_file(
        &run.output("train_report.json"),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    match (summary.epoch_losses.first(), summary.epoch_losses.last()) {
        (Some(a), Some(b)) => eprintln!(
            "{}: {} examples, loss {a:.4} -> {b:.4} over {} epochs",
            name.as_str(),
            summary.examples,
            summary.epoch_losses.len()
        ),
        _ => eprintln!(
            "{}: {} examples, final loss {:.4}",
            name.as_str(),
            summary.examples,
            summary.final_loss.unwrap_or(f64::NAN)
        ),
    }
    Ok(())
}

/// One scored example.
#[derive(Debug, Serialize)]
struct Prediction {
    qid: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    iid: Option<String>,
    label: bool,
    probability: f64,
    predicted: bool,
}

struct Scored {
    ids: Vec<(String, Option<String>)>,
    /// (probability, label)
    scores: Vec<(f64, f64)>,
    dataset: PathBuf,
}

fn score_pairs<M, X, F>(model: &M, rel: &Relevance, encode: F) -> qrel::Result<Vec<(f64, f64)>>
where
    M: Differentiable<Input = X> + Sync,
    X: Send,
    F: Fn(Vec<f64>, &[String]) -> qrel::Result<X> + Sync,
{
    score(model, &PairSource::new(rel, encode))
}

/// Loads the model and its card and scores the configured labeled set.
fn score_model(run: &mut Run) -> anyhow::Result<(ModelCard, Scored)> {
    let model_path = run.cfg.paths.require(run.cfg.paths.model.as_ref(), "model")?;
    let model_path = run.input("model", &model_path);
    let card_path = ModelCard::path_for(&model_path);
    let text = std::fs::read_to_string(&card_path).map_err(|e| qrel::Error::Io {
        path: card_path.clone(),
        source: e,
    })?;
    let card: ModelCard = serde_json::from_str(&text).map_err(|e| qrel::Error::Parse {
        path: card_path.clone(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let (model, _) = load_model(&model_path)?;

    let p = &mut run.cfg.paths;
    for (slot, value) in [
        (&mut p.questions, &card.questions),
        (&mut p.features, &card.features),
        (&mut p.embeddings, &card.embeddings),
        (&mut p.lexicon, &card.lexicon),
        (&mut p.pca, &card.pca),
    ] {
        if slot.is_none() {
            slot.clone_from(value);
        }
    }
    if p.dataset.is_none() && !card.model.is_visual_task() {
        p.dataset.clone_from(&card.dataset);
    }
    run.cfg.model.hash_dim = card.hash_dim;
    run.cfg.model.ngram = card.ngram;
    run.cfg.model.default_tag.clone_from(&card.default_tag);

    let expected = match card.model {
        ModelName::LrVisual | ModelName::LrPremise => "lr",
        ModelName::LstmVisual => "poslstm",
        ModelName::Mlp => "mlp",
        other => other.as_str(),
    };
    if model.kind() != expected {
        return Err(qrel::Error::InvalidRecord(format!(
            "{} holds a {} model but {} says {}",
            model_path.display(),
            model.kind(),
            card_path.display(),
            card.model.as_str()
        ))
        .into());
    }

    let scored = if card.model.is_visual_task() {
        let questions = inputs::questions(run)?;
        let dataset = run.cfg.paths.questions.clone().expect("questions loaded");
        let ids = questions.iter().map(|q| (q.qid.clone(), None)).collect();
        let scores = match &model {
            SavedModel::Lr(m) => {
                let (n, dim) = (card.ngram, card.hash_dim);
                let data = questions
                    .iter()
                    .map(|q| Ok((LrInput::Sparse(lr_visual_input(q, n, dim)?), visual_target(q)?)))
                    .collect::<qrel::Result<Vec<_>>>()?;
                score(m, &data)?
            }
            SavedModel::PosLstm(m) => {
                let data = questions
                    .iter()
                    .map(|q| Ok((m.encode(question_tags(q)?), visual_target(q)?)))
                    .collect::<qrel::Result<Vec<_>>>()?;
                score(m, &data)?
            }
            _ => unreachable!("kind checked against the card"),
        };
        Scored { ids, scores, dataset }
    } else {
        let rel = Relevance::load(run)?;
        let dataset = run.cfg.paths.dataset.clone().expect("dataset loaded");
        let ids = rel
            .manifest
            .pairs()
            .iter()
            .map(|p| (p.qid.clone(), Some(p.iid.clone())))
            .collect();
        let scores = match &model {
            SavedModel::RelNet(m) => score_pairs(m, &rel, |image, tokens| {
                Ok(RelNetInput {
                    image,
                    tokens: m.encode(tokens),
                })
            })?,
            SavedModel::Mlp(m) => {
                let table = inputs::require_embeddings(run, None)?;
                score_pairs(m, &rel, |image, tokens| Ok(mlp_input(&image, tokens, &table)))?
            }
            SavedModel::Lr(m) => {
                let table = inputs::require_embeddings(run, None)?;
                let pca = premise_pca(run)?;
                score_pairs(m, &rel, |image, tokens| {
                    Ok(LrInput::Dense(dense_relevance_features(&image, tokens, &pca, &table)?))
                })?
            }
            SavedModel::PosLstm(_) => unreachable!("kind checked against the card"),
        };
        Scored { ids, scores, dataset }
    };
    Ok((card, scored))
}

fn premise_pca(run: &mut Run) -> anyhow::Result<PcaModel> {
    let path = run.cfg.paths.require(run.cfg.paths.pca.as_ref(), "pca")?;
    Ok(PcaModel::read(run.input("pca", &path))?)
}

fn dataset_name(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("dataset")
        .to_string()
}

pub fn evaluate(run: &mut Run, name: Option<&str>) -> anyhow::Result<()> {
    let (card, scored) = score_model(run)?;
    let (scores, labels): (Vec<f64>, Vec<bool>) =
        scored.scores.iter().map(|&(p, y)| (p, y == 1.0)).unzip();
    let result = NamedResult {
        model: card.model.as_str().to_string(),
        dataset: name.map_or_else(|| dataset_name(&scored.dataset), str::to_string),
        confusion: confusion(&scores, &labels, run.cfg.train.threshold)?,
    };
    let results = [result];
    write_file(
        &run.output("eval.json"),
        serde_json::to_string_pretty(&results)? + "\n",
    )?;
    let table = report(&results);
    write_file(&run.output("report.txt"), &table)?;
    print!("{table}");
    Ok(())
}

pub fn predict(run: &mut Run) -> anyhow::Result<()> {
    let (_, scored) = score_model(run)?;
    let threshold = run.cfg.train.threshold;
    let rows: Vec<Prediction> = scored
        .ids
        .into_iter()
        .zip(&scored.scores)
        .map(|((qid, iid), &(probability, y))| Prediction {
            qid,
            iid,
            label: y == 1.0,
            probability,
            predicted: probability >= threshold,
        })
        .collect();
    let out = run.output("predictions.jsonl");
    write_jsonl(&out, &rows)?;
    eprintln!("{} predictions -> {}", rows.len(), out.display());
    Ok(())
}

pub fn merge_reports(run: &mut Run, files: &[PathBuf]) -> anyhow::Result<()> {
    let mut results: Vec<NamedResult> = Vec::new();
    for (i, file) in files.iter().enumerate() {
        let text = std::fs::read_to_string(file).map_err(|e| qrel::Error::Io {
            path: file.clone(),
            source: e,
        })?;
        let parsed: Vec<NamedResult> = serde_json::from_str(&text).map_err(|e| qrel::Error::Parse {
            path: file.clone(),
            line: e.line(),
            message: e.to_string(),
        })?;
        results.extend(parsed);
        run.input(format!("result{i}"), file);
    }
    let table = report(&results);
    write_file(&run.output("report.txt"), &table)?;
    write_file(
        &run.output("report.json"),
        serde_json::to_string_pretty(&report_json(&results))? + "\n",
    )?;
    print!("{table}");
    Ok(())
}
