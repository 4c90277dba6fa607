//! Exact cosine top-k over a feature store.
//!
//! Results are ordered by descending score, ties by ascending image id. The
//! order is total, so per-worker partial top-k lists merge to exactly the
//! sequential answer.

use std::cmp::Ordering;

use rayon::prelude::*;

use super::cosine_from_parts;
use crate::corpus::FeatureStore;
use crate::error::{Error, Result};

/// Rows above this count are scanned in parallel.
const PARALLEL_THRESHOLD: usize = 4096;

/// A store with cached squared row norms.
pub struct SimilarityIndex<'a> {
    store: &'a FeatureStore,
    sq_norms: Vec<f64>,
}

fn sq_norm(row: &[f32]) -> f64 {
    row.iter().map(|&x| x as f64 * x as f64).sum()
}

fn row_dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

fn rank_order(a: &(usize, f64), b: &(usize, f64), ids: &[String]) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| ids[a.0].cmp(&ids[b.0]))
}

impl<'a> SimilarityIndex<'a> {
    pub fn new(store: &'a FeatureStore) -> Self {
        let sq_norms = (0..store.len())
            .map(|i| sq_norm(store.row_at(i)))
            .collect();
        SimilarityIndex { store, sq_norms }
    }

    pub fn store(&self) -> &FeatureStore {
        self.store
    }

    /// The `k` rows most similar to `query_iid`, excluding the query itself.
    /// Zero-norm rows have no defined cosine and are skipped.
    pub fn top_k(&self, query_iid: &str, k: usize) -> Result<Vec<(String, f64)>> {
        self.top_k_with(query_iid, k, self.store.len() > PARALLEL_THRESHOLD)
    }

    pub fn top_k_with(&self, query_iid: &str, k: usize, parallel: bool) -> Result<Vec<(String, f64)>> {
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        let qi = self.store.position(query_iid)?;
        let q_sq = self.sq_norms[qi];
        if q_sq == 0.0 {
            return Err(Error::Numeric(format!("image {query_iid:?} has a zero feature vector")));
        }
        let query = self.store.row_at(qi);
        let ids = self.store.ids();

        let scan = |range: std::ops::Range<usize>| -> Vec<(usize, f64)> {
            let mut best: Vec<(usize, f64)> = Vec::with_capacity(k + 1);
            for i in range {
                if i == qi || self.sq_norms[i] == 0.0 {
                    continue;
                }
                let score =
                    cosine_from_parts(row_dot(query, self.store.row_at(i)), q_sq, self.sq_norms[i]);
                let cand = (i, score);
                if best.len() == k
                    && rank_order(&cand, best.last().expect("k >= 1"), ids) != Ordering::Less
                {
                    continue;
                }
                let pos = best
                    .binary_search_by(|probe| rank_order(probe, &cand, ids))
                    .unwrap_or_else(|p| p);
                best.insert(pos, cand);
                best.truncate(k);
            }
            best
        };

        let n = self.store.len();
        let mut merged = if parallel {
            let chunk = n.div_ceil(rayon::current_num_threads().max(1)).max(1);
            (0..n.div_ceil(chunk))
                .into_par_iter()
                .map(|c| scan(c * chunk..((c + 1) * chunk).min(n)))
                .reduce(Vec::new, |mut a, b| {
                    a.extend(b);
                    a
                })
        } else {
            scan(0..n)
        };
        merged.sort_by(|a, b| rank_order(a, b, ids));
        merged.truncate(k);
        Ok(merged
            .into_iter()
            .map(|(i, s)| (ids[i].clone(), s))
            .collect())
    }
}

/// Exact top-k most cosine-similar images to `query_iid`.
pub fn top_k_similar(query_iid: &str, store: &FeatureStore, k: usize) -> Result<Vec<(String, f64)>> {
    SimilarityIndex::new(store).top_k(query_iid, k)
}
