//! Text features: a lexicon POS tagger, hashed POS n-grams and averaged word
//! embeddings.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};

/// Default size of the hashed n-gram space (2^18).
pub const DEFAULT_HASH_DIM: usize = 1 << 18;

const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over raw bytes.
pub fn fnv1a_64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET_BASIS, |h, &b| {
        (h ^ b as u64).wrapping_mul(FNV_PRIME)
    })
}

/// Index of a feature name in a hashed space of size `dim`.
///
/// Stable across runs and platforms: FNV-1a-64 of the UTF-8 bytes, mod `dim`.
pub fn hash_index(feature_name: &str, dim: usize) -> usize {
    assert!(dim > 0, "hashed space must be non-empty");
    (fnv1a_64(feature_name.as_bytes()) % dim as u64) as usize
}

/// Sparse non-negative feature counts over a hashed index space.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseFeatures {
    dim: usize,
    entries: BTreeMap<usize, f64>,
}

impl SparseFeatures {
    pub fn new(dim: usize) -> Self {
        SparseFeatures {
            dim,
            entries: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Adds `count` (> 0) at `index`.
    pub fn add(&mut self, index: usize, count: f64) -> Result<()> {
        if index >= self.dim {
            return Err(Error::invalid(format!(
                "feature index {index} outside space of size {}",
                self.dim
            )));
        }
        if !(count > 0.0 && count.is_finite()) {
            return Err(Error::invalid(format!("feature count must be positive, got {count}")));
        }
        *self.entries.entry(index).or_insert(0.0) += count;
        Ok(())
    }

    pub fn get(&self, index: usize) -> f64 {
        self.entries.get(&index).copied().unwrap_or(0.0)
    }

    /// (index, count) in ascending index order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.entries.iter().map(|(&i, &c)| (i, c))
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn total_mass(&self) -> f64 {
        self.entries.values().sum()
    }
}

/// Hashed bag of POS n-grams for n = 1..=n_max. N-grams are joined with `_`
/// and no boundary padding is added.
pub fn pos_ngrams<S: AsRef<str>>(tags: &[S], n_max: usize, dim: usize) -> Result<SparseFeatures> {
    if tags.is_empty() {
        return Err(Error::invalid("cannot extract n-grams from an empty tag sequence"));
    }
    if !(1..=3).contains(&n_max) {
        return Err(Error::invalid(format!("n_max must be in 1..=3, got {n_max}")));
    }
    let mut out = SparseFeatures::new(dim);
    for n in 1..=n_max {
        for window in tags.windows(n) {
            let name = window
                .iter()
                .map(|t| t.as_ref())
                .collect::<Vec<_>>()
                .join("_");
            out.add(hash_index(&name, dim), 1.0)?;
        }
    }
    Ok(out)
}

/// Token → tag lookup with a fallback tag. Keys are stored lowercase.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagLexicon {
    tags: HashMap<String, String>,
    default_tag: String,
}

impl TagLexicon {
    pub fn new(default_tag: impl Into<String>) -> Result<Self> {
        let default_tag = default_tag.into();
        if default_tag.is_empty() {
            return Err(Error::invalid("default tag must be non-empty"));
        }
        Ok(TagLexicon {
            tags: HashMap::new(),
            default_tag,
        })
    }

    pub fn insert(&mut self, token: &str, tag: impl Into<String>) {
        self.tags.insert(token.to_lowercase(), tag.into());
    }

    pub fn default_tag(&self) -> &str {
        &self.default_tag
    }

    pub fn get(&self, token: &str) -> &str {
        self.tags
            .get(&token.to_lowercase())
            .map(String::as_str)
            .unwrap_or(&self.default_tag)
    }

    /// Loads `token<TAB>tag` lines. Blank lines and `#` comments are skipped.
    pub fn load(path: impl AsRef<Path>, default_tag: &str) -> Result<Self> {
        let path = path.as_ref();
        let mut lex = TagLexicon::new(default_tag)?;
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let line = line.trim_end_matches(['\r', '\n']);
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (token, tag) = line.split_once('\t').ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: "expected `token<TAB>tag`".into(),
            })?;
            lex.insert(token.trim(), tag.trim());
        }
        Ok(lex)
    }
}

/// Tags tokens by case-insensitive lexicon lookup.
pub fn lexicon_tag<S: AsRef<str>>(tokens: &[S], lexicon: &TagLexicon) -> Vec<String> {
    tokens
        .iter()
        .map(|t| lexicon.get(t.as_ref()).to_string())
        .collect()
}

/// True for noun, verb and adjective tags (Penn Treebank or universal tag set).
pub fn is_keyword_tag(tag: &str) -> bool {
    tag.starts_with("NN")
        || tag.starts_with("VB")
        || tag.starts_with("JJ")
        || matches!(tag, "NOUN" | "PROPN" | "VERB" | "ADJ")
}

/// True for adjective tags (Penn `JJ*` or universal `ADJ`).
pub fn is_adjective_tag(tag: &str) -> bool {
    tag.starts_with("JJ") || tag == "ADJ"
}

/// Word vectors of a fixed dimensionality.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            vectors: HashMap::new(),
        }
    }

    pub fn insert(&mut self, token: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: vector.len(),
            });
        }
        self.vectors.insert(token.into(), vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Exact lookup, falling back to the lowercased token.
    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors
            .get(token)
            .or_else(|| self.vectors.get(&token.to_lowercase()))
            .map(Vec::as_slice)
    }
}

/// Loads a whitespace-separated `token v1 .. v_dim` text file. A leading
/// `count dim` header line (word2vec/fastText style) is skipped. When a token
/// repeats, the last occurrence wins.
pub fn load_embeddings(path: impl AsRef<Path>, dim: usize) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut table = EmbeddingTable::new(dim);
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let rest: Vec<&str> = fields.collect();
        if i == 0 && rest.len() == 1 && token.parse::<u64>().is_ok() && rest[0] == dim.to_string()
        {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        if rest.len() != dim {
            return Err(parse_err(format!(
                "token {token:?} has {} values, expected {dim}",
                rest.len()
            )));
        }
        let vector = rest
            .iter()
            .map(|v| {
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| parse_err(format!("bad value {v:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        table.vectors.insert(token.to_string(), vector);
    }
    Ok(table)
}

/// Mean of the in-vocabulary token vectors; zero vector when none are known.
pub fn average_embedding<S: AsRef<str>>(tokens: &[S], table: &EmbeddingTable) -> Vec<f64> {
    let mut sum = vec![0.0; table.dim];
    let mut n = 0usize;
    for v in tokens.iter().filter_map(|t| table.get(t.as_ref())) {
        for (s, x) in sum.iter_mut().zip(v) {
            *s += x;
        }
        n += 1;
    }
    if n > 0 {
        let inv = 1.0 / n as f64;
        sum.iter_mut().for_each(|s| *s *= inv);
    }
    sum
}
