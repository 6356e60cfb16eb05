//! # xlgap
//!
//! Measurements of cross-lingual gaps.
//!
//! Two families of gap are covered:
//!
//! - **Performance gaps** between languages on a downstream task, measured with the
//!   relative percentage difference ([`gap::rpd`]) and summarised by the spread of
//!   scores ([`gap::score_spread`]).
//! - **Representation gaps** between parallel sentence embeddings, measured with linear
//!   centered kernel alignment ([`gap::linear_cka`]) and, on the output-probability
//!   simplex, with an entropic optimal-transport distance ([`transport::sinkhorn`]).
//!
//! Supporting pieces:
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`data`] | domain types, embedding / score loaders, binary interchange format |
//! | [`gap`] | RPD, score spread, linear CKA, pairwise matrices |
//! | [`transport`] | log-domain Sinkhorn solver and an exact assignment oracle |
//! | [`rank`] | Spearman and Kendall tau-b with exact and asymptotic p-values |
//! | [`bound`] | empirical H / HΔH divergence over decision stumps and the risk-gap bound |
//! | [`phonemize`] | rule-driven grapheme-to-phoneme conversion and IPA segmentation |
//! | [`report`] | the aggregated gap report, heatmap CSV and directory-driven runs |
//!
//! All arithmetic is 64-bit. Everything is deterministic: pairwise computations may run
//! on a rayon pool, but results are assembled in input order.

pub mod bound;
pub mod data;
pub mod error;
pub mod gap;
pub mod phonemize;
pub mod rank;
pub mod report;
pub mod transport;

pub use data::{EmbeddingSet, LanguageId, Matrix, ProbabilitySet, ScoreTable};
pub use error::{Error, ErrorKind, Result};
pub use gap::{linear_cka, pairwise_cka, rpd, score_spread, PairwiseMatrix};
pub use report::GapReport;
pub use transport::{exact_ot, sinkhorn, SinkhornConfig, TransportPlan};
