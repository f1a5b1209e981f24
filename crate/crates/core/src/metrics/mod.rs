//! Evaluation metrics: pairwise accuracy, NDCG / T-NDCG, bias statistics and
//! annotator agreement.

mod agreement;
mod bias;
mod intrinsic;
mod ndcg;

use thiserror::Error;

use crate::compare::CompareError;

pub use agreement::{agreement, AgreementReport, Annotation};
pub use bias::{bias_strata, chi_square_test, BiasReport, BiasScheme, ChiSquare, StratumCounts};
pub use intrinsic::{evaluate_pairs, intrinsic_accuracy, intrinsic_report, IntrinsicReport, StratumAccuracy};
pub use ndcg::{
    dcg_at_k, expected_t_ndcg, ndcg_at_k, shuffled_within_classes, t_ndcg_at_k, ExpectedTNdcg, RelevanceMapping,
    DEFAULT_SHUFFLES,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("id {0:?} has no label")]
    MissingLabel(String),
    #[error("id {0:?} has a non-ordinal label")]
    NonOrdinal(String),
    #[error("k must be in 1..={len}, got {k}")]
    BadK { k: usize, len: usize },
    #[error("shuffles must be >= 1")]
    BadShuffles,
    #[error("invalid relevance mapping: {0}")]
    BadMapping(String),
    #[error("no pairs to evaluate")]
    EmptyPairs,
    #[error("outcome {index} does not belong to pair {a_id:?} / {b_id:?}")]
    OutcomeMismatch { index: usize, a_id: String, b_id: String },
    #[error("no usable strata")]
    NoStrata,
    #[error("no pair has exactly two annotations")]
    NoAnnotations,
    #[error("contingency table must be rectangular with non-negative finite counts")]
    BadTable,
    #[error(transparent)]
    Compare(#[from] CompareError),
    #[error("failed to build worker pool: {0}")]
    Pool(String),
}
