//! Dataset construction: positives from every question–image pair, negatives
//! mined among the images most similar to the positive image whose
//! annotations falsify a premise of the question.
//!
//! Also hosts the question-dissimilarity miner, which picks the pool
//! questions least similar (by averaged keyword embeddings) to the questions
//! already asked about an image.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use crate::corpus::DatasetStats;
use crate::corpus::{
    read_annotations, read_questions, Coverage, DatasetManifest, FeatureStore, ImageAnnotation,
    JsonLines, Label, LabeledPair, PairOrder, QuestionRecord, Validate,
};
use crate::error::{Error, Result};
use crate::numerics::{cosine, SimilarityIndex};
use crate::premise::{
    extract_first_order, extract_second_order, falsified_first_order, falsified_second_order,
    AntonymLexicon, FalsificationMode, ObjectVocabulary, Premise,
};
use crate::textfeat::{average_embedding, is_keyword_tag, EmbeddingTable};

/// Which premise orders are mined.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrderSelection {
    First,
    Second,
    #[default]
    Both,
}

impl OrderSelection {
    pub fn first(self) -> bool {
        matches!(self, OrderSelection::First | OrderSelection::Both)
    }

    pub fn second(self) -> bool {
        matches!(self, OrderSelection::Second | OrderSelection::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MinerConfig {
    pub k_similar: usize,
    pub order: OrderSelection,
    pub falsification_mode: FalsificationMode,
    /// Recorded for provenance; mining itself is deterministic.
    pub seed: u64,
    pub max_negatives_per_question: usize,
}

impl Default for MinerConfig {
    fn default() -> Self {
        MinerConfig {
            k_similar: 10,
            order: OrderSelection::Both,
            falsification_mode: FalsificationMode::AtLeastOne,
            seed: 42,
            max_negatives_per_question: 10,
        }
    }
}

impl MinerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_similar == 0 {
            return Err(Error::invalid("k_similar must be at least 1"));
        }
        if self.max_negatives_per_question > self.k_similar {
            return Err(Error::invalid(format!(
                "max_negatives_per_question ({}) exceeds k_similar ({})",
                self.max_negatives_per_question, self.k_similar
            )));
        }
        Ok(())
    }
}

/// One relevant pair per question, against the image it was asked about.
/// Errors (listing the qids) when a question has no image or its image is
/// unknown.
pub fn emit_positives<F>(questions: &[QuestionRecord], image_exists: F) -> Result<Vec<LabeledPair>>
where
    F: Fn(&str) -> bool,
{
    let mut dangling = Vec::new();
    let mut out = Vec::with_capacity(questions.len());
    for q in questions {
        match q.iid.as_deref() {
            Some(iid) if image_exists(iid) => {
                out.push(LabeledPair::positive(&q.qid, iid, Coverage::default()))
            }
            _ => dangling.push(q.qid.as_str()),
        }
    }
    if !dangling.is_empty() {
        return Err(Error::InvalidRecord(format!(
            "questions reference missing images: {}",
            dangling.join(", ")
        )));
    }
    Ok(out)
}

/// Premises of a question for the enabled orders.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QuestionPremises {
    pub first: Vec<Premise>,
    pub second: Vec<Premise>,
}

impl QuestionPremises {
    pub fn extract(q: &QuestionRecord, vocab: &ObjectVocabulary, order: OrderSelection) -> Result<Self> {
        Ok(QuestionPremises {
            first: if order.first() {
                extract_first_order(q, vocab)
            } else {
                Vec::new()
            },
            second: if order.second() {
                extract_second_order(q, vocab)?
            } else {
                Vec::new()
            },
        })
    }

    pub fn is_empty(&self) -> bool {
        self.first.is_empty() && self.second.is_empty()
    }

    pub fn coverage(&self) -> Coverage {
        Coverage {
            first: !self.first.is_empty(),
            second: !self.second.is_empty(),
        }
    }

    /// Premises the image falsifies: first order, then second order.
    pub fn falsified_by(&self, ann: &ImageAnnotation, antonyms: &AntonymLexicon) -> (Vec<Premise>, Vec<Premise>) {
        let first = falsified_first_order(&self.first, ann);
        let second = self
            .second
            .iter()
            .filter(|p| falsified_second_order(p, ann, antonyms))
            .cloned()
            .collect();
        (first, second)
    }
}

/// Everything negative mining reads.
pub struct MiningContext<'a> {
    pub index: &'a SimilarityIndex<'a>,
    pub annotations: &'a BTreeMap<String, ImageAnnotation>,
    pub vocab: &'a ObjectVocabulary,
    pub antonyms: &'a AntonymLexicon,
}

/// Irrelevant pairs for `q` among the `k_similar` images closest to its
/// positive image, in similarity rank order and capped per question.
///
/// A negative is attributed to first order when any first-order premise is
/// false, otherwise to second order; `falsified` lists every violated
/// premise. Candidates without an annotation are skipped.
pub fn mine_negative_images(
    q: &QuestionRecord,
    positive_iid: &str,
    ctx: &MiningContext<'_>,
    cfg: &MinerConfig,
) -> Result<Vec<LabeledPair>> {
    if !ctx.annotations.contains_key(positive_iid) {
        return Err(Error::NotFound {
            kind: "annotation",
            id: positive_iid.to_string(),
        });
    }
    let premises = QuestionPremises::extract(q, ctx.vocab, cfg.order)?;
    if premises.is_empty() || cfg.max_negatives_per_question == 0 {
        return Ok(Vec::new());
    }
    let coverage = premises.coverage();
    let mut out = Vec::new();
    for (cand, _) in ctx.index.top_k(positive_iid, cfg.k_similar)? {
        let Some(ann) = ctx.annotations.get(&cand) else {
            continue;
        };
        let (f1, f2) = premises.falsified_by(ann, ctx.antonyms);
        if !cfg.falsification_mode.accepts(f1.len() + f2.len()) {
            continue;
        }
        out.push(LabeledPair {
            qid: q.qid.clone(),
            iid: cand,
            label: Label::Irrelevant,
            order: if f1.is_empty() {
                PairOrder::Second
            } else {
                PairOrder::First
            },
            falsified: f1.iter().chain(&f2).map(Premise::to_string).collect(),
            coverage,
        });
        if out.len() == cfg.max_negatives_per_question {
            break;
        }
    }
    Ok(out)
}

/// Builds the full labeled dataset in memory. Questions rejected by `filter`
/// still contribute their positive pair but are not mined for negatives.
pub fn build_dataset_from<F>(
    questions: &[QuestionRecord],
    ctx: &MiningContext<'_>,
    cfg: &MinerConfig,
    filter: F,
) -> Result<DatasetManifest>
where
    F: Fn(&QuestionRecord) -> bool + Sync,
{
    cfg.validate()?;
    let mut seen = BTreeSet::new();
    for q in questions {
        if !seen.insert(q.qid.as_str()) {
            return Err(Error::DuplicateId { id: q.qid.clone() });
        }
    }
    let store = ctx.index.store();
    let positives = emit_positives(questions, |iid| {
        store.contains(iid) && ctx.annotations.contains_key(iid)
    })?;

    let mined: Vec<(Coverage, Vec<LabeledPair>)> = questions
        .par_iter()
        .zip(positives.par_iter())
        .map(|(q, pos)| {
            let coverage = QuestionPremises::extract(q, ctx.vocab, cfg.order)?.coverage();
            let negatives = if filter(q) {
                mine_negative_images(q, &pos.iid, ctx, cfg)?
            } else {
                Vec::new()
            };
            Ok((coverage, negatives))
        })
        .collect::<Result<_>>()?;

    let mut pairs: BTreeMap<(String, String), LabeledPair> = BTreeMap::new();
    for (mut pos, (coverage, negatives)) in positives.into_iter().zip(mined) {
        pos.coverage = coverage;
        pairs.insert((pos.qid.clone(), pos.iid.clone()), pos);
        for neg in negatives {
            pairs.entry((neg.qid.clone(), neg.iid.clone())).or_insert(neg);
        }
    }
    DatasetManifest::new(pairs.into_values().collect())
}

/// Input files for [`build_dataset`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusPaths {
    pub questions: PathBuf,
    pub annotations: PathBuf,
    pub features: PathBuf,
    pub vocab: PathBuf,
    /// Required when second-order premises are mined.
    pub antonyms: Option<PathBuf>,
}

/// Reads the corpus from disk and builds the dataset.
pub fn build_dataset(paths: &CorpusPaths, cfg: &MinerConfig) -> Result<DatasetManifest> {
    cfg.validate()?;
    let questions = read_questions(&paths.questions)?;
    let annotations = read_annotations(&paths.annotations)?;
    let store = FeatureStore::open(&paths.features)?;
    let vocab = ObjectVocabulary::load(&paths.vocab)?;
    let antonyms = match &paths.antonyms {
        Some(p) => AntonymLexicon::load(p)?,
        None if cfg.order.second() => {
            return Err(Error::invalid("second-order mining needs an antonym lexicon"))
        }
        None => AntonymLexicon::new(),
    };
    let index = SimilarityIndex::new(&store);
    let ctx = MiningContext {
        index: &index,
        annotations: &annotations,
        vocab: &vocab,
        antonyms: &antonyms,
    };
    build_dataset_from(&questions, &ctx, cfg, |_| true)
}

fn keyword_vector(q: &QuestionRecord, embeddings: &EmbeddingTable) -> Result<Vec<f64>> {
    let tags = q.pos_tags.as_ref().ok_or_else(|| {
        Error::InvalidRecord(format!("question {:?} has no POS tags", q.qid))
    })?;
    let keywords: Vec<&str> = q
        .tokens
        .iter()
        .zip(tags)
        .filter(|(_, t)| is_keyword_tag(t))
        .map(|(w, _)| w.as_str())
        .collect();
    Ok(average_embedding(&keywords, embeddings))
}

fn similarity_or_zero(a: &[f64], b: &[f64]) -> f64 {
    cosine(a, b).unwrap_or(0.0)
}

/// The `k` pool questions least similar to the questions asked about `iid`.
///
/// A candidate's score is its maximum keyword-embedding cosine against the
/// image's own questions; questions with no in-vocabulary keywords score 0.
/// Results are ascending by score, ties by qid. The image's own questions
/// are never returned.
pub fn mine_dissimilar_questions(
    iid: &str,
    pool: &[QuestionRecord],
    embeddings: &EmbeddingTable,
    k: usize,
) -> Result<Vec<(String, f64)>> {
    if pool.is_empty() {
        return Err(Error::invalid("question pool is empty"));
    }
    let mut own = Vec::new();
    let mut candidates = Vec::new();
    for q in pool {
        let v = keyword_vector(q, embeddings)?;
        if q.iid.as_deref() == Some(iid) {
            own.push(v);
        } else {
            candidates.push((q.qid.as_str(), v));
        }
    }
    let mut scored: Vec<(String, f64)> = candidates
        .into_iter()
        .map(|(qid, v)| {
            let best = own
                .iter()
                .map(|o| similarity_or_zero(&v, o))
                .fold(None, |m: Option<f64>, s| Some(m.map_or(s, |m| m.max(s))))
                .unwrap_or(0.0);
            (qid.to_string(), best)
        })
        .collect();
    scored.sort_by(|a, b| match a.1.total_cmp(&b.1) {
        Ordering::Equal => a.0.cmp(&b.0),
        o => o,
    });
    scored.truncate(k);
    Ok(scored)
}

/// A human-annotated relevance record (VTFQ-style), one JSON object per line:
/// `{"qid": .., "iid": .., "relevant": bool}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedPair {
    pub qid: String,
    pub iid: String,
    pub relevant: bool,
}

impl Validate for AnnotatedPair {
    fn validate_record(&self) -> Result<()> {
        if self.qid.is_empty() || self.iid.is_empty() {
            return Err(Error::InvalidRecord("empty qid or iid".into()));
        }
        Ok(())
    }
}

/// Premise string recorded on irrelevant pairs read from human annotations.
pub const ANNOTATED_PREMISE: &str = "(annotated irrelevant)";

/// Reads human-annotated pairs as evaluation-only labeled pairs. Irrelevant
/// pairs are filed under first order with a placeholder premise since the
/// annotation does not say which premise fails.
pub fn read_annotated_pairs(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let mut pairs = Vec::new();
    for rec in JsonLines::<AnnotatedPair>::open(path)? {
        let rec = rec?;
        pairs.push(if rec.relevant {
            LabeledPair::positive(rec.qid, rec.iid, Coverage::default())
        } else {
            LabeledPair {
                qid: rec.qid,
                iid: rec.iid,
                label: Label::Irrelevant,
                order: PairOrder::First,
                falsified: vec![ANNOTATED_PREMISE.to_string()],
                coverage: Coverage::default(),
            }
        });
    }
    DatasetManifest::new(pairs)
}

/// Index questions by qid.
pub fn question_map(questions: Vec<QuestionRecord>) -> HashMap<String, QuestionRecord> {
    questions.into_iter().map(|q| (q.qid.clone(), q)).collect()
}
