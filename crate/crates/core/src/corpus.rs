//! On-disk data: question streams, image annotations, dense feature stores and
//! dataset manifests.
//!
//! Text data is JSON Lines so it can be streamed; dense image features live in
//! a small binary container (`QRFS`) with O(1) random access by image id.
//!
//! Feature store layout, all integers little-endian:
//!
//! ```text
//! "QRFS" | version: u32 | count: u32 | dim: u32
//! count × (len: u16 | iid: [u8; len])
//! count × dim × f32            (row-major)
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FEATURE_STORE_MAGIC: &[u8; 4] = b"QRFS";
pub const FEATURE_STORE_VERSION: u32 = 1;

/// A question with its tokenization and (optionally) POS tags.
///
/// `iid` and `visual` are optional annotations: the image the question was
/// asked about, and whether it is a visual question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub qid: String,
    pub text: String,
    pub tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pos_tags: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iid: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visual: Option<bool>,
}

impl QuestionRecord {
    pub fn validate(&self) -> Result<()> {
        if self.qid.is_empty() {
            return Err(Error::InvalidRecord("empty qid".into()));
        }
        if self.tokens.is_empty() {
            return Err(Error::InvalidRecord(format!(
                "question {:?} has no tokens",
                self.qid
            )));
        }
        if let Some(tags) = &self.pos_tags {
            if tags.len() != self.tokens.len() {
                return Err(Error::InvalidRecord(format!(
                    "question {:?}: {} tokens but {} pos tags",
                    self.qid,
                    self.tokens.len(),
                    tags.len()
                )));
            }
        }
        Ok(())
    }
}

/// Object classes present in an image plus its object → attributes scene graph.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageAnnotation {
    pub iid: String,
    pub objects: BTreeSet<String>,
    #[serde(default)]
    pub scene_graph: BTreeMap<String, BTreeSet<String>>,
}

impl ImageAnnotation {
    pub fn validate(&self) -> Result<()> {
        if self.iid.is_empty() {
            return Err(Error::InvalidRecord("empty iid".into()));
        }
        if let Some(obj) = self.scene_graph.keys().find(|k| !self.objects.contains(*k)) {
            return Err(Error::InvalidRecord(format!(
                "image {:?}: scene graph object {obj:?} is not in the object set",
                self.iid
            )));
        }
        Ok(())
    }
}

/// Records that can be checked after deserialization.
pub trait Validate {
    fn validate_record(&self) -> Result<()>;
}

impl Validate for QuestionRecord {
    fn validate_record(&self) -> Result<()> {
        self.validate()
    }
}

impl Validate for ImageAnnotation {
    fn validate_record(&self) -> Result<()> {
        self.validate()
    }
}

impl Validate for LabeledPair {
    fn validate_record(&self) -> Result<()> {
        self.validate()
    }
}

/// Streaming JSON Lines reader. Blank lines are skipped; every error carries
/// the 1-based line number.
pub struct JsonLines<T> {
    path: PathBuf,
    reader: BufReader<File>,
    line_no: usize,
    buf: String,
    _marker: PhantomData<T>,
}

impl<T> JsonLines<T> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        Ok(JsonLines {
            path,
            reader: BufReader::new(file),
            line_no: 0,
            buf: String::new(),
            _marker: PhantomData,
        })
    }

    fn parse_error(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line: self.line_no,
            message: message.into(),
        }
    }
}

impl<T: DeserializeOwned + Validate> Iterator for JsonLines<T> {
    type Item = Result<T>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            match self.reader.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => return Some(Err(Error::io(&self.path, e))),
            }
            self.line_no += 1;
            let line = self.buf.trim();
            if line.is_empty() {
                continue;
            }
            let record = serde_json::from_str::<T>(line)
                .map_err(|e| self.parse_error(e.to_string()))
                .and_then(|r| {
                    r.validate_record()
                        .map_err(|e| self.parse_error(e.to_string()))?;
                    Ok(r)
                });
            return Some(record);
        }
    }
}

/// Streams questions in file order.
pub fn read_question_stream(path: impl AsRef<Path>) -> Result<JsonLines<QuestionRecord>> {
    JsonLines::open(path)
}

pub fn read_questions(path: impl AsRef<Path>) -> Result<Vec<QuestionRecord>> {
    read_question_stream(path)?.collect()
}

/// Reads all annotations keyed by image id. Duplicate ids are rejected.
pub fn read_annotations(path: impl AsRef<Path>) -> Result<BTreeMap<String, ImageAnnotation>> {
    let mut out = BTreeMap::new();
    for ann in JsonLines::<ImageAnnotation>::open(path)? {
        let ann = ann?;
        if out.contains_key(&ann.iid) {
            return Err(Error::DuplicateId { id: ann.iid });
        }
        out.insert(ann.iid.clone(), ann);
    }
    Ok(out)
}

/// Writes any serializable records as JSON Lines.
pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, records: &[T]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::invalid(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Dense per-image feature vectors, read-only after opening.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    dim: usize,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f32>,
}

impl FeatureStore {
    /// Builds a store in memory. Rows must all have length `dim`.
    pub fn from_rows<S, R>(dim: usize, rows: impl IntoIterator<Item = (S, R)>) -> Result<Self>
    where
        S: Into<String>,
        R: AsRef<[f32]>,
    {
        let mut ids = Vec::new();
        let mut index = HashMap::new();
        let mut data = Vec::new();
        for (iid, row) in rows {
            let iid = iid.into();
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: row.len(),
                });
            }
            if iid.len() > u16::MAX as usize {
                return Err(Error::invalid(format!("image id longer than {} bytes", u16::MAX)));
            }
            if index.insert(iid.clone(), ids.len()).is_some() {
                return Err(Error::DuplicateId { id: iid });
            }
            ids.push(iid);
            data.extend_from_slice(row);
        }
        Ok(FeatureStore {
            dim,
            ids,
            index,
            data,
        })
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let truncated = |what: &str| Error::Truncated {
            path: path.to_path_buf(),
            what: what.to_string(),
        };

        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| truncated("magic"))?;
        if &magic != FEATURE_STORE_MAGIC {
            return Err(Error::BadMagic {
                path: path.to_path_buf(),
                expected: "QRFS".into(),
            });
        }
        let version = read_u32(&mut r).map_err(|_| truncated("header"))?;
        if version != FEATURE_STORE_VERSION {
            return Err(Error::UnsupportedVersion {
                path: path.to_path_buf(),
                version,
            });
        }
        let count = read_u32(&mut r).map_err(|_| truncated("header"))? as usize;
        let dim = read_u32(&mut r).map_err(|_| truncated("header"))? as usize;

        let mut ids = Vec::with_capacity(count);
        let mut index = HashMap::with_capacity(count);
        for i in 0..count {
            let mut len = [0u8; 2];
            r.read_exact(&mut len).map_err(|_| truncated("id table"))?;
            let mut bytes = vec![0u8; u16::from_le_bytes(len) as usize];
            r.read_exact(&mut bytes).map_err(|_| truncated("id table"))?;
            let iid = String::from_utf8(bytes).map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                message: format!("image id #{i} is not valid UTF-8"),
            })?;
            if index.insert(iid.clone(), i).is_some() {
                return Err(Error::DuplicateId { id: iid });
            }
            ids.push(iid);
        }

        let mut raw = vec![0u8; count * dim * 4];
        r.read_exact(&mut raw).map_err(|_| truncated("matrix"))?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Ok(FeatureStore {
            dim,
            ids,
            index,
            data,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        w.write_all(FEATURE_STORE_MAGIC).map_err(io)?;
        w.write_all(&FEATURE_STORE_VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&(self.ids.len() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(&(self.dim as u32).to_le_bytes()).map_err(io)?;
        for iid in &self.ids {
            w.write_all(&(iid.len() as u16).to_le_bytes()).map_err(io)?;
            w.write_all(iid.as_bytes()).map_err(io)?;
        }
        for v in &self.data {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Image ids in row order.
    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn contains(&self, iid: &str) -> bool {
        self.index.contains_key(iid)
    }

    pub fn position(&self, iid: &str) -> Result<usize> {
        self.index.get(iid).copied().ok_or_else(|| Error::NotFound {
            kind: "image",
            id: iid.to_string(),
        })
    }

    pub fn row_at(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row(&self, iid: &str) -> Result<&[f32]> {
        Ok(self.row_at(self.position(iid)?))
    }

    /// Row widened to `f64`.
    pub fn vector(&self, iid: &str) -> Result<Vec<f64>> {
        Ok(self.row(iid)?.iter().map(|&v| v as f64).collect())
    }
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Relevant,
    Irrelevant,
}

impl Label {
    /// 1.0 for relevant, 0.0 for irrelevant.
    pub fn target(self) -> f64 {
        match self {
            Label::Relevant => 1.0,
            Label::Irrelevant => 0.0,
        }
    }
}

/// Which premise order produced a pair; positives carry `Positive`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairOrder {
    First,
    Second,
    Positive,
}

/// Which premise orders the pair's question has at least one premise of.
/// Used to attribute positives to the per-order rows of the statistics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Coverage {
    pub first: bool,
    pub second: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub qid: String,
    pub iid: String,
    pub label: Label,
    pub order: PairOrder,
    #[serde(default)]
    pub falsified: Vec<String>,
    #[serde(default)]
    pub coverage: Coverage,
}

impl LabeledPair {
    pub fn positive(qid: impl Into<String>, iid: impl Into<String>, coverage: Coverage) -> Self {
        LabeledPair {
            qid: qid.into(),
            iid: iid.into(),
            label: Label::Relevant,
            order: PairOrder::Positive,
            falsified: Vec::new(),
            coverage,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.label {
            Label::Irrelevant if self.falsified.is_empty() => Err(Error::InvalidRecord(format!(
                "irrelevant pair ({}, {}) records no falsified premise",
                self.qid, self.iid
            ))),
            Label::Irrelevant if self.order == PairOrder::Positive => {
                Err(Error::InvalidRecord(format!(
                    "irrelevant pair ({}, {}) has order positive",
                    self.qid, self.iid
                )))
            }
            Label::Relevant if self.order != PairOrder::Positive || !self.falsified.is_empty() => {
                Err(Error::InvalidRecord(format!(
                    "relevant pair ({}, {}) must have order positive and no falsified premises",
                    self.qid, self.iid
                )))
            }
            _ => Ok(()),
        }
    }
}

/// Pair counts laid out like the dataset characteristics table: overall and
/// per premise order, split by label.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub total: u64,
    pub relevant: u64,
    pub non_relevant: u64,
    pub first_order_total: u64,
    pub first_order_relevant: u64,
    pub first_order_non_relevant: u64,
    pub second_order_total: u64,
    pub second_order_relevant: u64,
    pub second_order_non_relevant: u64,
}

impl DatasetStats {
    /// A positive counts towards an order's row iff its question has a premise
    /// of that order; a negative counts towards the order that falsified it.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = &'a LabeledPair>) -> Self {
        let mut s = DatasetStats::default();
        for p in pairs {
            s.total += 1;
            match p.label {
                Label::Relevant => {
                    s.relevant += 1;
                    if p.coverage.first {
                        s.first_order_relevant += 1;
                    }
                    if p.coverage.second {
                        s.second_order_relevant += 1;
                    }
                }
                Label::Irrelevant => {
                    s.non_relevant += 1;
                    match p.order {
                        PairOrder::First => s.first_order_non_relevant += 1,
                        PairOrder::Second => s.second_order_non_relevant += 1,
                        PairOrder::Positive => {}
                    }
                }
            }
        }
        s.first_order_total = s.first_order_relevant + s.first_order_non_relevant;
        s.second_order_total = s.second_order_relevant + s.second_order_non_relevant;
        s
    }

    /// Column-aligned table with Total / Relevant / Non-relevant columns.
    pub fn table(&self) -> String {
        let rows = [
            ("Total", self.total, self.relevant, self.non_relevant),
            (
                "First order",
                self.first_order_total,
                self.first_order_relevant,
                self.first_order_non_relevant,
            ),
            (
                "Second order",
                self.second_order_total,
                self.second_order_relevant,
                self.second_order_non_relevant,
            ),
        ];
        let mut out = format!(
            "{:<14}{:>12}{:>12}{:>14}\n",
            "", "Total", "Relevant", "Non-relevant"
        );
        for (name, t, r, n) in rows {
            out.push_str(&format!("{name:<14}{t:>12}{r:>12}{n:>14}\n"));
        }
        out.push_str(
            "note: a relevant pair is counted under an order when its question has at least \
             one premise of that order\n",
        );
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    pairs: Vec<LabeledPair>,
    stats: DatasetStats,
}

#[derive(Serialize, Deserialize)]
struct ManifestHeader {
    stats: DatasetStats,
}

impl DatasetManifest {
    /// Validates every pair, rejects duplicate (qid, iid) entries and computes
    /// the statistics.
    pub fn new(pairs: Vec<LabeledPair>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(pairs.len());
        for p in &pairs {
            p.validate()?;
            if !seen.insert((p.qid.as_str(), p.iid.as_str())) {
                return Err(Error::DuplicateId {
                    id: format!("({}, {})", p.qid, p.iid),
                });
            }
        }
        let stats = DatasetStats::from_pairs(&pairs);
        Ok(DatasetManifest { pairs, stats })
    }

    pub fn pairs(&self) -> &[LabeledPair] {
        &self.pairs
    }

    pub fn stats(&self) -> &DatasetStats {
        &self.stats
    }

    pub fn into_pairs(self) -> Vec<LabeledPair> {
        self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

pub fn write_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    // Re-check: a manifest built by hand could have been mutated through a clone.
    let checked = DatasetManifest::new(manifest.pairs.clone())?;
    if checked.stats != manifest.stats {
        return Err(Error::Corrupt("stats do not match pairs".into()));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let header = serde_json::to_string(&ManifestHeader {
        stats: manifest.stats,
    })
    .map_err(|e| Error::invalid(e.to_string()))?;
    writeln!(w, "{header}").map_err(io)?;
    for p in &manifest.pairs {
        let line = serde_json::to_string(p).map_err(|e| Error::invalid(e.to_string()))?;
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header_line = match lines.next() {
        Some(l) => l.map_err(|e| Error::io(path, e))?,
        None => return Err(Error::Corrupt(format!("{}: missing header", path.display()))),
    };
    let header: ManifestHeader = serde_json::from_str(&header_line).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        message: e.to_string(),
    })?;
    let mut pairs = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: LabeledPair = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            message: e.to_string(),
        })?;
        pairs.push(pair);
    }
    let manifest = DatasetManifest::new(pairs).map_err(|e| Error::Corrupt(e.to_string()))?;
    if manifest.stats != header.stats {
        return Err(Error::Corrupt(format!(
            "{}: stored stats do not match the pairs",
            path.display()
        )));
    }
    Ok(manifest)
}
