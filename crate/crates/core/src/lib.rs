//! Urgency ranking of patient portal messages by pairwise comparison.

pub mod annotate;
pub mod compare;
pub mod corpus;
pub mod fixtures;
pub mod gateway;
pub mod metrics;
pub mod pairs;
pub mod rank;
pub mod util;

pub use compare::{compare, Comparator, ComparisonOutcome, DirectionScore, ScoreKind, Winner};
pub use corpus::{EhrRecord, Gender, LabeledMessage, Message, Source, UrgencyLabel};
pub use gateway::CATALOG_VERSION;
pub use pairs::{Difficulty, EvalPair, InboxSpec, Triplet};
pub use rank::{run_tournament, TournamentResult};
