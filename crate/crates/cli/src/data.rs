//! Corpus-side subcommands: tagging, featurizing, PCA, mining and dataset
//! statistics.

use std::collections::BTreeSet;

use qrel::corpus::{read_manifest, write_jsonl, write_manifest};
use qrel::miner::{build_dataset, mine_dissimilar_questions, question_map, CorpusPaths};
use qrel::models::export_features;
use qrel::textfeat::pos_ngrams;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::config_error;
use crate::inputs;
use crate::run::{write_file, Run};

pub fn tag(run: &mut Run) -> anyhow::Result<()> {
    if run.cfg.paths.lexicon.is_none() {
        return Err(config_error("tag needs --lexicon"));
    }
    let lexicon = inputs::lexicon(run)?.expect("lexicon path checked above");
    let mut questions = inputs::questions(run)?;
    for q in &mut questions {
        q.pos_tags = Some(qrel::textfeat::lexicon_tag(&q.tokens, &lexicon));
    }
    let out = run.output("questions.tagged.jsonl");
    write_jsonl(&out, &questions)?;
    eprintln!("tagged {} questions -> {}", questions.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct FeatureRow<'a> {
    qid: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    visual: Option<bool>,
    /// (index, count) in ascending index order.
    features: Vec<(usize, f64)>,
}

pub fn featurize(run: &mut Run) -> anyhow::Result<()> {
    let questions = inputs::questions(run)?;
    let (n, dim) = (run.cfg.model.ngram, run.cfg.model.hash_dim);
    let rows = questions
        .iter()
        .map(|q| {
            Ok(FeatureRow {
                qid: &q.qid,
                visual: q.visual,
                features: pos_ngrams(inputs::tags(q)?, n, dim)?.iter().collect(),
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let out = run.output("featurized.jsonl");
    write_jsonl(&out, &rows)?;
    eprintln!("featurized {} questions -> {}", rows.len(), out.display());
    Ok(())
}

pub fn pca(run: &mut Run) -> anyhow::Result<()> {
    let store = inputs::feature_store(run)?;
    // Always fit here, even if a PCA file is configured.
    run.cfg.paths.pca = None;
    let model = inputs::pca(run, &store)?;
    let total: f64 = model.eigenvalues().iter().sum();
    eprintln!(
        "fitted {} components on {} of {} images (retained variance {total:.6})",
        model.output_dim(),
        run.cfg.model.pca_sample.unwrap_or(store.ids().len()).min(store.ids().len()),
        store.ids().len()
    );
    Ok(())
}

#[derive(Serialize)]
struct DissimilarRow<'a> {
    iid: &'a str,
    qid: String,
    similarity: f64,
}

pub fn mine(run: &mut Run) -> anyhow::Result<()> {
    let questions = inputs::questions(run)?;
    let embeddings = inputs::require_embeddings(run, None)?;
    let k = run.cfg.dissimilar_k;
    let images: Vec<&str> = questions
        .iter()
        .filter_map(|q| q.iid.as_deref())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mined = images
        .par_iter()
        .map(|iid| mine_dissimilar_questions(iid, &questions, &embeddings, k))
        .collect::<qrel::Result<Vec<_>>>()?;
    let rows: Vec<DissimilarRow> = images
        .iter()
        .zip(mined)
        .flat_map(|(iid, found)| {
            found
                .into_iter()
                .map(move |(qid, similarity)| DissimilarRow { iid, qid, similarity })
        })
        .collect();
    let out = run.output("dissimilar.jsonl");
    write_jsonl(&out, &rows)?;
    eprintln!("{} questions for {} images -> {}", rows.len(), images.len(), out.display());
    Ok(())
}

pub fn build(run: &mut Run) -> anyhow::Result<()> {
    let p = run.cfg.paths.clone();
    let paths = CorpusPaths {
        questions: run.input("questions", &p.require(p.questions.as_ref(), "questions")?),
        annotations: run.input("annotations", &p.require(p.annotations.as_ref(), "annotations")?),
        features: run.input("features", &p.require(p.features.as_ref(), "features")?),
        vocab: run.input("vocab", &p.require(p.vocab.as_ref(), "vocab")?),
        antonyms: p.antonyms.as_ref().map(|a| run.input("antonyms", a)),
    };
    if paths.antonyms.is_none() && run.cfg.miner.order.second() {
        return Err(config_error("second-order mining needs --antonyms (or --order first)"));
    }
    let manifest = build_dataset(&paths, &run.cfg.miner)?;
    let out = run.output("manifest.jsonl");
    write_manifest(&manifest, &out)?;
    let table = manifest.stats().table();
    write_file(&run.output("stats.txt"), &table)?;
    print!("{table}");
    Ok(())
}

pub fn stats(run: &mut Run) -> anyhow::Result<()> {
    let path = run.cfg.paths.require(run.cfg.paths.dataset.as_ref(), "dataset")?;
    let manifest = read_manifest(run.input("dataset", &path))?;
    let table = manifest.stats().table();
    write_file(&run.output("stats.txt"), &table)?;
    print!("{table}");
    Ok(())
}

pub fn export(run: &mut Run) -> anyhow::Result<()> {
    let path = run.cfg.paths.require(run.cfg.paths.dataset.as_ref(), "dataset")?;
    let manifest = read_manifest(run.input("dataset", &path))?;
    let questions = question_map(inputs::questions(run)?);
    let store = inputs::feature_store(run)?;
    let embeddings = inputs::require_embeddings(run, run.cfg.model.embed_dim)?;
    let pca = inputs::pca(run, &store)?;
    let out = run.output("features.csv");
    let n = export_features(manifest.pairs(), &questions, &store, &embeddings, &pca, &out)?;
    eprintln!(
        "{n} rows x {} columns -> {}",
        1 + pca.output_dim() + embeddings.dim(),
        out.display()
    );
    Ok(())
}
