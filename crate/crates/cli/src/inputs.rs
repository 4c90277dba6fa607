//! Loading helpers shared by several subcommands.

use std::io::{BufRead, BufReader};
use std::path::Path;

use qrel::corpus::{FeatureStore, QuestionRecord};
use qrel::models::init_rng;
use qrel::numerics::{fit_pca, PcaModel};
use qrel::textfeat::{lexicon_tag, load_embeddings, EmbeddingTable, TagLexicon};
use rand::seq::index::sample;

use crate::config::config_error;
use crate::run::Run;

/// Width of an embeddings file, read from its `count dim` header or its
/// first vector line.
pub fn embedding_dim(path: &Path) -> anyhow::Result<usize> {
    let io = |e| qrel::Error::Io {
        path: path.to_path_buf(),
        source: e,
    };
    let file = std::fs::File::open(path).map_err(io)?;
    for line in BufReader::new(file).lines() {
        let line = line.map_err(io)?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            [] => continue,
            [count, dim] if count.parse::<u64>().is_ok() && dim.parse::<usize>().is_ok() => {
                return Ok(dim.parse()?)
            }
            [_, rest @ ..] => return Ok(rest.len()),
        }
    }
    Err(qrel::Error::InvalidRecord(format!("{}: no embeddings", path.display())).into())
}

/// Loads the embeddings named in the config, if any. `expected` is an
/// explicitly configured width that must agree with the file.
pub fn embeddings(run: &mut Run, expected: Option<usize>) -> anyhow::Result<Option<EmbeddingTable>> {
    let Some(path) = run.cfg.paths.embeddings.clone() else {
        return Ok(None);
    };
    let path = run.input("embeddings", &path);
    let dim = embedding_dim(&path)?;
    if let Some(e) = expected.filter(|&e| e != dim) {
        return Err(config_error(format!(
            "embed_dim is {e} but {} has {dim}-dimensional vectors",
            path.display()
        )));
    }
    Ok(Some(load_embeddings(&path, dim)?))
}

pub fn require_embeddings(run: &mut Run, expected: Option<usize>) -> anyhow::Result<EmbeddingTable> {
    embeddings(run, expected)?
        .ok_or_else(|| config_error(format!("{} needs --embeddings", run.command)))
}

pub fn lexicon(run: &mut Run) -> anyhow::Result<Option<TagLexicon>> {
    let Some(path) = run.cfg.paths.lexicon.clone() else {
        return Ok(None);
    };
    let path = run.input("lexicon", &path);
    Ok(Some(TagLexicon::load(&path, &run.cfg.model.default_tag)?))
}

/// Lowercased word tokens of free text.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Fills missing tokens and, when a lexicon is given, missing POS tags.
pub fn complete(q: &mut QuestionRecord, lexicon: Option<&TagLexicon>) {
    if q.tokens.is_empty() {
        q.tokens = tokenize(&q.text);
    }
    if q.pos_tags.is_none() {
        q.pos_tags = lexicon.map(|l| lexicon_tag(&q.tokens, l));
    }
}

pub fn tags(q: &QuestionRecord) -> anyhow::Result<&[String]> {
    q.pos_tags.as_deref().ok_or_else(|| {
        qrel::Error::InvalidRecord(format!(
            "question {:?} has no POS tags (pass --lexicon or run `qrel tag`)",
            q.qid
        ))
        .into()
    })
}

pub fn questions(run: &mut Run) -> anyhow::Result<Vec<QuestionRecord>> {
    let path = run.cfg.paths.require(run.cfg.paths.questions.as_ref(), "questions")?;
    let path = run.input("questions", &path);
    let lexicon = lexicon(run)?;
    let mut qs = qrel::corpus::read_questions(&path)?;
    qs.iter_mut().for_each(|q| complete(q, lexicon.as_ref()));
    Ok(qs)
}

pub fn feature_store(run: &mut Run) -> anyhow::Result<FeatureStore> {
    let path = run.cfg.paths.require(run.cfg.paths.features.as_ref(), "features")?;
    let path = run.input("features", &path);
    Ok(FeatureStore::open(&path)?)
}

/// Fits PCA with `image_embed_dim` components on every image, or on a
/// seeded uniform sample of `pca_sample` images.
pub fn fit_store_pca(run: &Run, store: &FeatureStore) -> anyhow::Result<PcaModel> {
    let n = store.ids().len();
    let mut rows: Vec<usize> = match run.cfg.model.pca_sample {
        Some(m) if m < n => sample(&mut init_rng(run.cfg.seed), n, m).into_vec(),
        _ => (0..n).collect(),
    };
    rows.sort_unstable();
    let samples: Vec<Vec<f64>> = rows
        .iter()
        .map(|&i| store.row_at(i).iter().map(|&v| f64::from(v)).collect())
        .collect();
    Ok(fit_pca(&samples, run.cfg.model.image_embed_dim)?)
}

/// The configured PCA file, or a fresh fit written to `pca.bin`.
pub fn pca(run: &mut Run, store: &FeatureStore) -> anyhow::Result<PcaModel> {
    if let Some(path) = run.cfg.paths.pca.clone() {
        let path = run.input("pca", &path);
        let model = PcaModel::read(&path)?;
        if model.input_dim() != store.dim() {
            return Err(qrel::Error::DimensionMismatch {
                expected: store.dim(),
                actual: model.input_dim(),
            }
            .into());
        }
        return Ok(model);
    }
    let model = fit_store_pca(run, store)?;
    let out = run.output("pca.bin");
    model.write(&out)?;
    run.cfg.paths.pca = Some(out);
    Ok(model)
}
