//! Question relevance for visual question answering.
//!
//! The crate covers the whole pipeline: deciding whether a question is visual
//! at all, building a large true/false-premise dataset by mining negative
//! images, and training classifiers that score a question's relevance to an
//! image.
//!
//! | module | what it does |
//! |---|---|
//! | [`corpus`] | question streams, annotations, the `QRFS` feature store, manifests |
//! | [`textfeat`] | lexicon tagging, hashed POS n-grams, word embeddings |
//! | [`numerics`] | dense math, PCA, cosine top-k |
//! | [`premise`] | first/second-order premise extraction and checks |
//! | [`miner`] | positive/negative pair mining and dataset statistics |
//! | [`models`] | logistic regression, MLP, POS-LSTM, RelNet 1–4, training |
//! | [`eval`] | confusion matrices, per-class metrics, reports |
//!
//! The guide under `book/` walks through each stage; its code listings are
//! compiled and run as doctests of this crate.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod miner;
pub mod models;
pub mod numerics;
pub mod premise;
pub mod textfeat;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/text.md")]
    mod text {}
    #[doc = include_str!("../../../book/src/premises.md")]
    mod premises {}
    #[doc = include_str!("../../../book/src/mining.md")]
    mod mining {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
