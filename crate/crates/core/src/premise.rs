//! Premise extraction from questions and premise checks against image
//! annotations.
//!
//! A first-order premise asserts that an object exists; a second-order
//! premise asserts that an object carries an attribute. Second-order premises
//! are read off adjective–noun adjacency in the POS tags rather than from a
//! dependency parse.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{ImageAnnotation, QuestionRecord};
use crate::error::{Error, Result};
use crate::textfeat::is_adjective_tag;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PremiseOrder {
    First,
    Second,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Premise {
    pub order: PremiseOrder,
    pub object: String,
    pub attribute: Option<String>,
}

impl Premise {
    pub fn first(object: impl Into<String>) -> Self {
        Premise {
            order: PremiseOrder::First,
            object: object.into(),
            attribute: None,
        }
    }

    pub fn second(attribute: impl Into<String>, object: impl Into<String>) -> Self {
        Premise {
            order: PremiseOrder::Second,
            object: object.into(),
            attribute: Some(attribute.into()),
        }
    }
}

/// `dog` for first order, `small cat` for second order.
impl fmt::Display for Premise {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.attribute {
            Some(a) => write!(f, "{a} {}", self.object),
            None => f.write_str(&self.object),
        }
    }
}

/// Object class lemmas (possibly multiword) with plural overrides.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ObjectVocabulary {
    lemmas: BTreeSet<String>,
    plural_map: HashMap<String, String>,
    max_words: usize,
}

impl ObjectVocabulary {
    pub fn new<S: AsRef<str>>(lemmas: impl IntoIterator<Item = S>) -> Self {
        let mut v = ObjectVocabulary::default();
        for l in lemmas {
            v.add_lemma(l.as_ref());
        }
        v
    }

    pub fn add_lemma(&mut self, lemma: &str) {
        let lemma = lemma.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
        if lemma.is_empty() {
            return;
        }
        self.max_words = self.max_words.max(lemma.split(' ').count());
        self.lemmas.insert(lemma);
    }

    pub fn add_plural(&mut self, plural: &str, singular: &str) {
        self.plural_map
            .insert(plural.to_lowercase(), singular.to_lowercase());
    }

    pub fn contains(&self, lemma: &str) -> bool {
        self.lemmas.contains(lemma)
    }

    pub fn lemmas(&self) -> impl Iterator<Item = &str> {
        self.lemmas.iter().map(String::as_str)
    }

    /// One lemma per line. A line `plural<TAB>singular` adds a plural
    /// override instead. Blank lines and `#` comments are skipped.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut v = ObjectVocabulary::default();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            match line.split_once('\t') {
                Some((plural, singular)) => v.add_plural(plural.trim(), singular.trim()),
                None => v.add_lemma(&line),
            }
        }
        Ok(v)
    }

    /// Singular forms to try for a (lowercase) word, most specific first.
    fn singular_forms<'w>(&'w self, word: &'w str) -> impl Iterator<Item = &'w str> {
        let over = self.plural_map.get(word).map(String::as_str);
        let es = word.strip_suffix("es");
        let s = word.strip_suffix('s');
        std::iter::once(word).chain(over).chain(es).chain(s)
    }

    /// Matched lemma spans as (start token, token count, lemma), in textual
    /// order. Longer lemmas win and no token is used twice.
    pub fn match_spans<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<(usize, usize, String)> {
        let words: Vec<String> = tokens.iter().map(|t| t.as_ref().to_lowercase()).collect();
        let mut out = Vec::new();
        let mut i = 0;
        while i < words.len() {
            let longest = (1..=self.max_words.min(words.len() - i)).rev().find_map(|len| {
                let head = words[i..i + len - 1].join(" ");
                let last = &words[i + len - 1];
                self.singular_forms(last).find_map(|form| {
                    let cand = if head.is_empty() {
                        form.to_string()
                    } else {
                        format!("{head} {form}")
                    };
                    self.lemmas.contains(&cand).then_some((len, cand))
                })
            });
            match longest {
                Some((len, lemma)) => {
                    out.push((i, len, lemma));
                    i += len;
                }
                None => i += 1,
            }
        }
        out
    }
}

/// Object-existence premises in textual order, deduplicated.
pub fn extract_first_order(q: &QuestionRecord, vocab: &ObjectVocabulary) -> Vec<Premise> {
    let mut seen = BTreeSet::new();
    vocab
        .match_spans(&q.tokens)
        .into_iter()
        .filter(|(_, _, lemma)| seen.insert(lemma.clone()))
        .map(|(_, _, lemma)| Premise::first(lemma))
        .collect()
}

/// Attribute–object premises: each matched object whose preceding token is
/// adjective-tagged yields (that adjective, object).
pub fn extract_second_order(q: &QuestionRecord, vocab: &ObjectVocabulary) -> Result<Vec<Premise>> {
    let tags = q.pos_tags.as_ref().ok_or_else(|| {
        Error::InvalidRecord(format!("question {:?} has no POS tags", q.qid))
    })?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (start, _, lemma) in vocab.match_spans(&q.tokens) {
        if start == 0 || !is_adjective_tag(&tags[start - 1]) {
            continue;
        }
        let p = Premise::second(q.tokens[start - 1].to_lowercase(), lemma);
        if seen.insert(p.clone()) {
            out.push(p);
        }
    }
    Ok(out)
}

/// First-order premises whose object is absent from the image, in input order.
pub fn falsified_first_order(premises: &[Premise], ann: &ImageAnnotation) -> Vec<Premise> {
    premises
        .iter()
        .filter(|p| !ann.objects.contains(&p.object))
        .cloned()
        .collect()
}

/// Symmetric attribute antonym relation.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AntonymLexicon {
    antonyms: HashMap<String, BTreeSet<String>>,
}

impl AntonymLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records `a` and `b` as antonyms of each other.
    pub fn insert(&mut self, a: &str, b: &str) {
        let (a, b) = (a.to_lowercase(), b.to_lowercase());
        self.antonyms.entry(a.clone()).or_default().insert(b.clone());
        self.antonyms.entry(b).or_default().insert(a);
    }

    pub fn antonyms(&self, attribute: &str) -> impl Iterator<Item = &str> {
        self.antonyms
            .get(attribute)
            .into_iter()
            .flat_map(|s| s.iter().map(String::as_str))
    }

    pub fn are_antonyms(&self, a: &str, b: &str) -> bool {
        self.antonyms.get(a).is_some_and(|s| s.contains(b))
    }

    /// `attr<TAB>antonym` per line, symmetrized on load.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lex = AntonymLexicon::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (a, b) = line.split_once('\t').ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: "expected `attr<TAB>antonym`".into(),
            })?;
            lex.insert(a.trim(), b.trim());
        }
        Ok(lex)
    }
}

/// True iff the object is present in the image and the scene graph gives it
/// an attribute that is an antonym of the premise's attribute.
pub fn falsified_second_order(premise: &Premise, ann: &ImageAnnotation, antonyms: &AntonymLexicon) -> bool {
    let Some(attr) = premise.attribute.as_deref() else {
        return false;
    };
    if !ann.objects.contains(&premise.object) {
        return false;
    }
    ann.scene_graph
        .get(&premise.object)
        .is_some_and(|attrs| attrs.iter().any(|a| antonyms.are_antonyms(attr, a)))
}

/// How many of a question's premises must be false for an image to count as
/// a negative.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FalsificationMode {
    ExactlyOne,
    #[default]
    AtLeastOne,
}

impl FalsificationMode {
    pub fn accepts(self, falsified: usize) -> bool {
        match self {
            FalsificationMode::ExactlyOne => falsified == 1,
            FalsificationMode::AtLeastOne => falsified >= 1,
        }
    }
}
