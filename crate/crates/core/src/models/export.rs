use std::collections::HashMap;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::corpus::{FeatureStore, LabeledPair, QuestionRecord};
use crate::error::{Error, Result};
use crate::numerics::PcaModel;
use crate::textfeat::{average_embedding, EmbeddingTable};

/// `[pca(image) ; mean embedding of tokens]`.
pub fn dense_relevance_features<S: AsRef<str>>(
    image: &[f64],
    tokens: &[S],
    pca: &PcaModel,
    embeddings: &EmbeddingTable,
) -> Result<Vec<f64>> {
    let mut out = pca.project(image)?;
    out.extend(average_embedding(tokens, embeddings));
    Ok(out)
}

/// `[raw image features ; mean embedding of tokens]`.
pub fn mlp_input<S: AsRef<str>>(image: &[f64], tokens: &[S], embeddings: &EmbeddingTable) -> Vec<f64> {
    let mut out = image.to_vec();
    out.extend(average_embedding(tokens, embeddings));
    out
}

/// Writes one dense CSV row per pair: the 0/1 label, then the PCA block and
/// the averaged-embedding block. Returns the number of rows.
pub fn export_features(
    pairs: &[LabeledPair],
    questions: &HashMap<String, QuestionRecord>,
    store: &FeatureStore,
    embeddings: &EmbeddingTable,
    pca: &PcaModel,
    path: impl AsRef<Path>,
) -> Result<usize> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(std::fs::File::create(path).map_err(io)?);
    for pair in pairs {
        let q = questions.get(&pair.qid).ok_or_else(|| Error::NotFound {
            kind: "question",
            id: pair.qid.clone(),
        })?;
        let features = dense_relevance_features(&store.vector(&pair.iid)?, &q.tokens, pca, embeddings)?;
        write!(w, "{}", pair.label.target() as u8).map_err(io)?;
        for v in features {
            write!(w, ",{v}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(pairs.len())
}
