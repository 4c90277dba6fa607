//! Brute-force reference for dataset building on the bundled mini corpus.
//!
//! Shares no code with the miner beyond file ingestion: similarity ranking,
//! premise matching and falsification are re-derived here directly from
//! their definitions.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

pub fn mini_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/mini")
}

/// (qid, iid, relevant, order, falsified) with order "positive"/"first"/"second".
pub type OraclePair = (String, String, bool, &'static str, Vec<String>);

#[derive(Debug, Default, PartialEq, Eq)]
pub struct OracleStats {
    pub total: u64,
    pub relevant: u64,
    pub non_relevant: u64,
    pub first: (u64, u64, u64),
    pub second: (u64, u64, u64),
}

pub struct Corpus {
    /// (qid, positive iid, tokens, tags)
    pub questions: Vec<(String, String, Vec<String>, Vec<String>)>,
    pub objects: BTreeMap<String, BTreeSet<String>>,
    pub attributes: BTreeMap<String, BTreeMap<String, BTreeSet<String>>>,
    pub features: BTreeMap<String, Vec<f64>>,
    pub lemmas: Vec<Vec<String>>,
    pub plurals: BTreeMap<String, String>,
    pub antonyms: BTreeSet<(String, String)>,
}

pub fn load(dir: &Path) -> Corpus {
    let read = |name: &str| std::fs::read_to_string(dir.join(name)).unwrap();
    let json_lines = |name: &str| -> Vec<serde_json::Value> {
        read(name)
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).unwrap())
            .collect()
    };
    let strings = |v: &serde_json::Value| -> Vec<String> {
        v.as_array()
            .unwrap()
            .iter()
            .map(|s| s.as_str().unwrap().to_string())
            .collect()
    };

    let questions = json_lines("questions.jsonl")
        .iter()
        .map(|q| {
            (
                q["qid"].as_str().unwrap().to_string(),
                q["iid"].as_str().unwrap().to_string(),
                strings(&q["tokens"]),
                strings(&q["pos_tags"]),
            )
        })
        .collect();

    let mut objects = BTreeMap::new();
    let mut attributes = BTreeMap::new();
    for a in json_lines("annotations.jsonl") {
        let iid = a["iid"].as_str().unwrap().to_string();
        objects.insert(iid.clone(), strings(&a["objects"]).into_iter().collect());
        let sg: BTreeMap<String, BTreeSet<String>> = a["scene_graph"]
            .as_object()
            .map(|m| {
                m.iter()
                    .map(|(k, v)| (k.clone(), strings(v).into_iter().collect()))
                    .collect()
            })
            .unwrap_or_default();
        attributes.insert(iid, sg);
    }

    // QRFS | version | count | dim | (u16 len, id)* | f32 rows
    let bytes = std::fs::read(dir.join("features.bin")).unwrap();
    assert_eq!(&bytes[..4], b"QRFS");
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let (count, dim) = (u32_at(8), u32_at(12));
    let mut off = 16;
    let mut ids = Vec::new();
    for _ in 0..count {
        let len = u16::from_le_bytes(bytes[off..off + 2].try_into().unwrap()) as usize;
        ids.push(String::from_utf8(bytes[off + 2..off + 2 + len].to_vec()).unwrap());
        off += 2 + len;
    }
    let mut features = BTreeMap::new();
    for id in ids {
        let row = (0..dim)
            .map(|j| {
                let o = off + 4 * j;
                f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as f64
            })
            .collect();
        off += 4 * dim;
        features.insert(id, row);
    }

    let mut lemmas = Vec::new();
    let mut plurals = BTreeMap::new();
    for line in read("vocab.txt").lines().filter(|l| !l.trim().is_empty()) {
        match line.split_once('\t') {
            Some((p, s)) => {
                plurals.insert(p.to_string(), s.to_string());
            }
            None => lemmas.push(line.split(' ').map(str::to_string).collect()),
        }
    }
    let mut antonyms = BTreeSet::new();
    for line in read("antonyms.tsv").lines().filter(|l| !l.trim().is_empty()) {
        let (a, b) = line.split_once('\t').unwrap();
        antonyms.insert((a.to_string(), b.to_string()));
        antonyms.insert((b.to_string(), a.to_string()));
    }
    Corpus {
        questions,
        objects,
        attributes,
        features,
        lemmas,
        plurals,
        antonyms,
    }
}

impl Corpus {
    fn word_matches(&self, token: &str, lemma_word: &str) -> bool {
        token == lemma_word
            || self.plurals.get(token).is_some_and(|s| s == lemma_word)
            || token.strip_suffix("es") == Some(lemma_word)
            || token.strip_suffix('s') == Some(lemma_word)
    }

    /// (start, lemma) of every object mention, longest lemma first at each
    /// position, no token reused.
    pub fn mentions(&self, tokens: &[String]) -> Vec<(usize, String)> {
        let words: Vec<String> = tokens.iter().map(|t| t.to_lowercase()).collect();
        let mut by_len = self.lemmas.clone();
        by_len.sort_by_key(|l| std::cmp::Reverse(l.len()));
        let mut out = Vec::new();
        let mut i = 0;
        'outer: while i < words.len() {
            for lemma in &by_len {
                let n = lemma.len();
                if i + n > words.len() {
                    continue;
                }
                let head_ok = (0..n - 1).all(|j| words[i + j] == lemma[j]);
                if head_ok && self.word_matches(&words[i + n - 1], &lemma[n - 1]) {
                    out.push((i, lemma.join(" ")));
                    i += n;
                    continue 'outer;
                }
            }
            i += 1;
        }
        out
    }

    pub fn first_order(&self, tokens: &[String]) -> Vec<String> {
        let mut seen = BTreeSet::new();
        self.mentions(tokens)
            .into_iter()
            .map(|(_, l)| l)
            .filter(|l| seen.insert(l.clone()))
            .collect()
    }

    pub fn second_order(&self, tokens: &[String], tags: &[String]) -> Vec<(String, String)> {
        let mut seen = BTreeSet::new();
        self.mentions(tokens)
            .into_iter()
            .filter(|(s, _)| *s > 0 && (tags[s - 1].starts_with("JJ") || tags[s - 1] == "ADJ"))
            .map(|(s, l)| (tokens[s - 1].to_lowercase(), l))
            .filter(|p| seen.insert(p.clone()))
            .collect()
    }

    /// Every other image ranked by cosine, best first, ties by id.
    pub fn ranking(&self, iid: &str) -> Vec<(String, f64)> {
        let q = &self.features[iid];
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let mut all: Vec<(String, f64)> = self
            .features
            .iter()
            .filter(|(id, v)| id.as_str() != iid && dot(v, v) > 0.0)
            .map(|(id, v)| {
                let s = dot(q, v) / (dot(q, q) * dot(v, v)).sqrt();
                (id.clone(), s.clamp(-1.0, 1.0))
            })
            .collect();
        all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        all
    }
}

pub struct OracleConfig {
    pub first: bool,
    pub second: bool,
    pub k: usize,
    pub exactly_one: bool,
    pub cap: usize,
}

pub fn oracle_dataset(c: &Corpus, cfg: &OracleConfig) -> (BTreeSet<OraclePair>, OracleStats) {
    let mut pairs = BTreeSet::new();
    let mut stats = OracleStats::default();
    for (qid, pos, tokens, tags) in &c.questions {
        let first = if cfg.first { c.first_order(tokens) } else { Vec::new() };
        let second = if cfg.second {
            c.second_order(tokens, tags)
        } else {
            Vec::new()
        };
        pairs.insert((qid.clone(), pos.clone(), true, "positive", Vec::new()));
        stats.relevant += 1;
        if !first.is_empty() {
            stats.first.1 += 1;
        }
        if !second.is_empty() {
            stats.second.1 += 1;
        }
        if first.is_empty() && second.is_empty() {
            continue;
        }
        let mut emitted = 0;
        for (cand, _) in c.ranking(pos).into_iter().take(cfg.k) {
            if emitted == cfg.cap {
                break;
            }
            let Some(objs) = c.objects.get(&cand) else { continue };
            let f1: Vec<String> = first.iter().filter(|o| !objs.contains(*o)).cloned().collect();
            let f2: Vec<String> = second
                .iter()
                .filter(|(attr, obj)| {
                    objs.contains(obj)
                        && c.attributes[&cand]
                            .get(obj)
                            .is_some_and(|s| s.iter().any(|a| c.antonyms.contains(&(attr.clone(), a.clone()))))
                })
                .map(|(a, o)| format!("{a} {o}"))
                .collect();
            let n = f1.len() + f2.len();
            let accepted = if cfg.exactly_one { n == 1 } else { n >= 1 };
            if !accepted {
                continue;
            }
            let order = if f1.is_empty() { "second" } else { "first" };
            if order == "first" {
                stats.first.2 += 1;
            } else {
                stats.second.2 += 1;
            }
            stats.non_relevant += 1;
            emitted += 1;
            pairs.insert((qid.clone(), cand, false, order, f1.into_iter().chain(f2).collect()));
        }
    }
    stats.total = stats.relevant + stats.non_relevant;
    stats.first.0 = stats.first.1 + stats.first.2;
    stats.second.0 = stats.second.1 + stats.second.2;
    (pairs, stats)
}
