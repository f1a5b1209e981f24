//! Pairwise comparators and the two-direction comparison rule.
//!
//! A comparator answers one directed question: given a message already in
//! the inbox (`existing`) and an incoming one (`new`), how strongly is `new`
//! the more urgent of the two? [`compare`] asks it in both prompt orders and
//! turns the pair of scores into a signed margin `eta` and a winner.

mod cache;
mod llm;
mod oracle;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Message;
use crate::gateway::GatewayError;

pub use cache::{cache_key, CacheLoadReport, CacheStore, CachedComparator};
pub use llm::{parse_final_answer, LogprobComparator, ReasoningComparator, RewardComparator};
pub use oracle::{NoisyOracle, DEFAULT_MARGIN};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CompareError {
    #[error("comparison of {a_id} vs {b_id} failed: {reason}")]
    ComparisonFailed {
        a_id: String,
        b_id: String,
        reason: Box<CompareError>,
    },
    #[error("cannot compare message {0} with itself")]
    SameMessage(String),
    #[error("oracle has no ordinal label for message {0}")]
    OracleNeedsLabels(String),
    #[error("invalid oracle configuration: {0}")]
    OracleConfig(String),
    #[error("backend returned no recognizable YES/NO probability")]
    UnparseableLogprobs,
    #[error("no YES/NO answer found in completion {0:?}")]
    UnparseableAnswer(String),
    #[error("bad score: {0}")]
    BadScore(String),
    #[error("direction scores have different kinds ({0:?} vs {1:?})")]
    KindMismatch(ScoreKind, ScoreKind),
    #[error("probability score {0} outside [0, 1]")]
    ProbabilityOutOfRange(f64),
    #[error(transparent)]
    Backend(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    Probability,
    Reward,
}

/// One directed score. `kind == Probability` implies `value` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionScore {
    pub value: f64,
    pub kind: ScoreKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<String>,
    /// Served from a comparison cache rather than the backend.
    #[serde(default, skip_serializing)]
    pub cached: bool,
}

impl DirectionScore {
    pub fn probability(value: f64) -> Self {
        Self {
            value,
            kind: ScoreKind::Probability,
            raw: None,
            cached: false,
        }
    }

    pub fn reward(value: f64) -> Self {
        Self {
            value,
            kind: ScoreKind::Reward,
            raw: None,
            cached: false,
        }
    }

    pub fn with_raw(mut self, raw: impl Into<String>) -> Self {
        self.raw = Some(raw.into());
        self
    }

    fn validate(&self) -> Result<(), CompareError> {
        if !self.value.is_finite() {
            return Err(CompareError::BadScore(self.value.to_string()));
        }
        if self.kind == ScoreKind::Probability && !(0.0..=1.0).contains(&self.value) {
            return Err(CompareError::ProbabilityOutOfRange(self.value));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Winner {
    A,
    B,
    #[serde(rename = "TIE")]
    Tie,
}

impl Winner {
    pub fn flipped(self) -> Self {
        match self {
            Winner::A => Winner::B,
            Winner::B => Winner::A,
            Winner::Tie => Winner::Tie,
        }
    }
}

/// A scored pair. `s_ab` is the score with `a` as the existing message and
/// `b` as the new one; `eta > 0` means `b` is judged more urgent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonOutcome {
    pub a_id: String,
    pub b_id: String,
    pub s_ab: DirectionScore,
    pub s_ba: DirectionScore,
    pub eta: f64,
    pub winner: Winner,
    /// Both directions came from a cache.
    #[serde(default)]
    pub cached: bool,
}

impl ComparisonOutcome {
    /// Applies the two-direction rule to already-obtained scores.
    ///
    /// Probability scores: `eta = s_ab - s_ba`. Reward scores are unbounded,
    /// so they are pair-normalized through the logistic function:
    /// `eta = σ(s_ab - s_ba) - σ(s_ba - s_ab) = tanh((s_ab - s_ba) / 2)`.
    /// Either way `|eta| <= 1`, and equal scores give an exact `TIE`.
    pub fn from_scores(
        a_id: impl Into<String>,
        b_id: impl Into<String>,
        s_ab: DirectionScore,
        s_ba: DirectionScore,
    ) -> Result<Self, CompareError> {
        s_ab.validate()?;
        s_ba.validate()?;
        if s_ab.kind != s_ba.kind {
            return Err(CompareError::KindMismatch(s_ab.kind, s_ba.kind));
        }
        let eta = match s_ab.kind {
            ScoreKind::Probability => s_ab.value - s_ba.value,
            ScoreKind::Reward => ((s_ab.value - s_ba.value) / 2.0).tanh(),
        };
        // Raw comparison keeps the decision strict even where tanh would
        // round a minute difference to zero.
        let winner = match s_ab.value.partial_cmp(&s_ba.value) {
            Some(std::cmp::Ordering::Greater) => Winner::B,
            Some(std::cmp::Ordering::Less) => Winner::A,
            _ => Winner::Tie,
        };
        let cached = s_ab.cached && s_ba.cached;
        Ok(Self {
            a_id: a_id.into(),
            b_id: b_id.into(),
            s_ab,
            s_ba,
            eta,
            winner,
            cached,
        })
    }

    pub fn winner_id(&self) -> Option<&str> {
        match self.winner {
            Winner::A => Some(&self.a_id),
            Winner::B => Some(&self.b_id),
            Winner::Tie => None,
        }
    }
}

/// Directed urgency scorer. Implementations must be shareable across
/// ranking worker threads.
pub trait Comparator: Send + Sync {
    /// Backend identity plus prompt variant; part of every cache key.
    fn identity(&self) -> String;

    fn score_directed(&self, existing: &Message, new: &Message) -> Result<DirectionScore, CompareError>;
}

impl<T: Comparator + ?Sized> Comparator for &T {
    fn identity(&self) -> String {
        (**self).identity()
    }
    fn score_directed(&self, existing: &Message, new: &Message) -> Result<DirectionScore, CompareError> {
        (**self).score_directed(existing, new)
    }
}

impl<T: Comparator + ?Sized> Comparator for Arc<T> {
    fn identity(&self) -> String {
        (**self).identity()
    }
    fn score_directed(&self, existing: &Message, new: &Message) -> Result<DirectionScore, CompareError> {
        (**self).score_directed(existing, new)
    }
}

impl<T: Comparator + ?Sized> Comparator for Box<T> {
    fn identity(&self) -> String {
        (**self).identity()
    }
    fn score_directed(&self, existing: &Message, new: &Message) -> Result<DirectionScore, CompareError> {
        (**self).score_directed(existing, new)
    }
}

/// Scores `(a, b)` in both orders and derives `eta` and the winner.
/// Any failure yields `ComparisonFailed`; there is no partial outcome.
pub fn compare<C: Comparator + ?Sized>(
    comparator: &C,
    a: &Message,
    b: &Message,
) -> Result<ComparisonOutcome, CompareError> {
    if a.id == b.id {
        return Err(CompareError::SameMessage(a.id.clone()));
    }
    let wrap = |reason: CompareError| CompareError::ComparisonFailed {
        a_id: a.id.clone(),
        b_id: b.id.clone(),
        reason: Box::new(reason),
    };
    let s_ab = comparator.score_directed(a, b).map_err(wrap)?;
    let s_ba = comparator.score_directed(b, a).map_err(wrap)?;
    ComparisonOutcome::from_scores(a.id.clone(), b.id.clone(), s_ab, s_ba).map_err(wrap)
}

/// Counts directed calls that reach the wrapped comparator.
pub struct Counting<C> {
    inner: C,
    calls: AtomicUsize,
}

impl<C: Comparator> Counting<C> {
    pub fn new(inner: C) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::SeqCst);
    }
}

impl<C: Comparator> Comparator for Counting<C> {
    fn identity(&self) -> String {
        self.inner.identity()
    }

    fn score_directed(&self, existing: &Message, new: &Message) -> Result<DirectionScore, CompareError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.score_directed(existing, new)
    }
}
