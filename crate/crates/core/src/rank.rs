//! Full round-robin tournament over an inbox, sorted by accumulated win score.
//!
//! Every unordered pair is compared once (two directed scores). The winner of
//! a pair is credited `1 + |eta|`; a tie credits each side 0.5. The final
//! ranking sorts by score descending, then id ascending.
//!
//! Pairs are always oriented with the lexicographically smaller id as `a`,
//! and scores are summed in sorted pair order, so the result is bit-identical
//! regardless of input order, thread count, or whether it was built in one
//! pass or by incremental insertion.

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compare::{compare, Comparator, CompareError, ComparisonOutcome, Winner};
use crate::corpus::Message;

#[derive(Debug, Error)]
pub enum RankError {
    #[error("a tournament needs at least 2 messages, got {0}")]
    TooFewMessages(usize),
    #[error("duplicate message id {0:?} in inbox")]
    DuplicateId(String),
    #[error("message {0:?} is already ranked")]
    AlreadyPresent(String),
    #[error("inbox does not match the tournament being extended")]
    InboxMismatch,
    #[error("tournament aborted: {} comparison(s) failed, {} completed", .failures.len(), .completed.len())]
    Aborted {
        failures: Vec<CompareError>,
        completed: Vec<ComparisonOutcome>,
    },
    #[error("failed to build worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TournamentResult {
    /// Message ids, most urgent first.
    pub ranking: Vec<String>,
    pub scores: BTreeMap<String, f64>,
    /// One outcome per unordered pair, sorted by `(a_id, b_id)`.
    pub outcomes: Vec<ComparisonOutcome>,
    pub ties_encountered: usize,
    pub comparisons_made: usize,
    pub cache_hits: usize,
}

impl TournamentResult {
    pub fn score(&self, id: &str) -> Option<f64> {
        self.scores.get(id).copied()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ranking.iter().position(|r| r == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankOptions {
    /// Maximum concurrent comparisons; 1 runs inline.
    pub parallelism: usize,
}

impl Default for RankOptions {
    fn default() -> Self {
        Self { parallelism: 1 }
    }
}

/// Credit each side receives from one outcome.
pub fn pair_credit(outcome: &ComparisonOutcome) -> (f64, f64) {
    match outcome.winner {
        Winner::A => (1.0 + outcome.eta.abs(), 0.0),
        Winner::B => (0.0, 1.0 + outcome.eta.abs()),
        Winner::Tie => (0.5, 0.5),
    }
}

fn accumulate<'a>(ids: impl IntoIterator<Item = &'a str>, outcomes: &[ComparisonOutcome]) -> BTreeMap<String, f64> {
    let mut scores: BTreeMap<String, f64> = ids.into_iter().map(|id| (id.to_string(), 0.0)).collect();
    for o in outcomes {
        let (ca, cb) = pair_credit(o);
        *scores.get_mut(&o.a_id).expect("outcome id in inbox") += ca;
        *scores.get_mut(&o.b_id).expect("outcome id in inbox") += cb;
    }
    scores
}

fn rank_by_score(scores: &BTreeMap<String, f64>) -> Vec<String> {
    let mut ranking: Vec<&String> = scores.keys().collect();
    ranking.sort_by(|x, y| scores[*y].total_cmp(&scores[*x]).then_with(|| x.cmp(y)));
    ranking.into_iter().cloned().collect()
}

fn assemble(
    ids: &[&str],
    mut outcomes: Vec<ComparisonOutcome>,
    comparisons_made: usize,
    cache_hits: usize,
) -> TournamentResult {
    outcomes.sort_by(|x, y| (&x.a_id, &x.b_id).cmp(&(&y.a_id, &y.b_id)));
    let scores = accumulate(ids.iter().copied(), &outcomes);
    TournamentResult {
        ranking: rank_by_score(&scores),
        ties_encountered: outcomes.iter().filter(|o| o.winner == Winner::Tie).count(),
        scores,
        outcomes,
        comparisons_made,
        cache_hits,
    }
}

fn run_pairs<C: Comparator + ?Sized>(
    pairs: &[(&Message, &Message)],
    comparator: &C,
    options: &RankOptions,
) -> Result<(Vec<ComparisonOutcome>, usize, usize), RankError> {
    let job = |&(a, b): &(&Message, &Message)| compare(comparator, a, b);
    let results: Vec<Result<ComparisonOutcome, CompareError>> = if options.parallelism <= 1 {
        pairs.iter().map(job).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(options.parallelism)
            .build()
            .map_err(|e| RankError::Pool(e.to_string()))?;
        pool.install(|| pairs.par_iter().map(job).collect())
    };
    let mut completed = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(o) => completed.push(o),
            Err(e) => failures.push(e),
        }
    }
    if !failures.is_empty() {
        return Err(RankError::Aborted { failures, completed });
    }
    let hits = completed.iter().filter(|o| o.cached).count();
    let made = completed.len() - hits;
    Ok((completed, made, hits))
}

fn sorted_unique(inbox: &[Message]) -> Result<Vec<&Message>, RankError> {
    let mut sorted: Vec<&Message> = inbox.iter().collect();
    sorted.sort_by(|x, y| x.id.cmp(&y.id));
    if let Some(w) = sorted.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(RankError::DuplicateId(w[0].id.clone()));
    }
    Ok(sorted)
}

pub fn run_tournament<C: Comparator + ?Sized>(
    inbox: &[Message],
    comparator: &C,
) -> Result<TournamentResult, RankError> {
    run_tournament_with(inbox, comparator, &RankOptions::default())
}

pub fn run_tournament_with<C: Comparator + ?Sized>(
    inbox: &[Message],
    comparator: &C,
    options: &RankOptions,
) -> Result<TournamentResult, RankError> {
    if inbox.len() < 2 {
        return Err(RankError::TooFewMessages(inbox.len()));
    }
    let sorted = sorted_unique(inbox)?;
    let mut pairs = Vec::with_capacity(sorted.len() * (sorted.len() - 1) / 2);
    for (i, a) in sorted.iter().enumerate() {
        for b in &sorted[i + 1..] {
            pairs.push((*a, *b));
        }
    }
    let (outcomes, made, hits) = run_pairs(&pairs, comparator, options)?;
    let ids: Vec<&str> = sorted.iter().map(|m| m.id.as_str()).collect();
    Ok(assemble(&ids, outcomes, made, hits))
}

/// Adds `new_message` to a finished tournament with `n` fresh comparisons.
///
/// `inbox` must be the messages `result` was built from. Existing outcomes
/// are kept as they are; scores are re-summed in canonical pair order so the
/// result equals a full run over the enlarged inbox with the same scores.
pub fn insert_incremental<C: Comparator + ?Sized>(
    result: &TournamentResult,
    inbox: &[Message],
    new_message: &Message,
    comparator: &C,
    options: &RankOptions,
) -> Result<TournamentResult, RankError> {
    if result.scores.contains_key(&new_message.id) {
        return Err(RankError::AlreadyPresent(new_message.id.clone()));
    }
    let sorted = sorted_unique(inbox)?;
    let known: HashSet<&str> = result.scores.keys().map(String::as_str).collect();
    if sorted.len() != known.len() || sorted.iter().any(|m| !known.contains(m.id.as_str())) {
        return Err(RankError::InboxMismatch);
    }
    let pairs: Vec<(&Message, &Message)> = sorted
        .iter()
        .map(|m| {
            if m.id < new_message.id {
                (*m, new_message)
            } else {
                (new_message, *m)
            }
        })
        .collect();
    let (fresh, made, hits) = run_pairs(&pairs, comparator, options)?;
    let mut outcomes = result.outcomes.clone();
    outcomes.extend(fresh);
    let mut ids: Vec<&str> = sorted.iter().map(|m| m.id.as_str()).collect();
    ids.push(&new_message.id);
    Ok(assemble(
        &ids,
        outcomes,
        result.comparisons_made + made,
        result.cache_hits + hits,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compare::{CacheStore, CachedComparator, Counting, DirectionScore, NoisyOracle};
    use crate::corpus::{LabeledMessage, Source, UrgencyLabel};
    use std::sync::Arc;

    fn lm(id: &str, label: UrgencyLabel) -> LabeledMessage {
        LabeledMessage::new(Message::new(id, id, Source::SyntheticTest), label)
    }

    fn msgs(corpus: &[LabeledMessage]) -> Vec<Message> {
        corpus.iter().map(|m| m.message.clone()).collect()
    }

    struct Script(f64, f64);
    impl Comparator for Script {
        fn identity(&self) -> String {
            "script".into()
        }
        fn score_directed(&self, existing: &Message, _: &Message) -> Result<DirectionScore, CompareError> {
            Ok(DirectionScore::probability(if existing.id == "a" {
                self.0
            } else {
                self.1
            }))
        }
    }

    #[test]
    fn three_message_perfect_oracle() {
        let corpus = [
            lm("m2", UrgencyLabel::L3),
            lm("m3", UrgencyLabel::L5),
            lm("m1", UrgencyLabel::L1),
        ];
        let r = run_tournament(&msgs(&corpus), &NoisyOracle::perfect(&corpus)).unwrap();
        assert_eq!(r.ranking, ["m1", "m2", "m3"]);
        assert!((r.scores["m1"] - 3.6).abs() < 1e-12);
        assert!((r.scores["m2"] - 1.8).abs() < 1e-12);
        assert_eq!(r.scores["m3"], 0.0);
        assert_eq!(r.comparisons_made, 3);
    }

    #[test]
    fn two_messages_eta_credit() {
        let inbox = [
            Message::new("a", "x", Source::SyntheticTest),
            Message::new("b", "y", Source::SyntheticTest),
        ];
        let r = run_tournament(&inbox, &Script(0.9, 0.2)).unwrap();
        assert!((r.scores["b"] - 1.7).abs() < 1e-12);
        assert_eq!(r.scores["a"], 0.0);
        assert_eq!(r.ranking, ["b", "a"]);
    }

    #[test]
    fn tie_splits_credit_and_ranks_by_id() {
        let inbox = [
            Message::new("b", "x", Source::SyntheticTest),
            Message::new("a", "y", Source::SyntheticTest),
        ];
        let r = run_tournament(&inbox, &Script(0.5, 0.5)).unwrap();
        assert_eq!(r.scores["a"], 0.5);
        assert_eq!(r.scores["b"], 0.5);
        assert_eq!(r.ranking, ["a", "b"]);
        assert_eq!(r.ties_encountered, 1);
    }

    #[test]
    fn errors() {
        let one = [Message::new("a", "x", Source::SyntheticTest)];
        assert!(matches!(
            run_tournament(&one, &Script(0.1, 0.2)),
            Err(RankError::TooFewMessages(1))
        ));
        let dup = [one[0].clone(), one[0].clone()];
        assert!(matches!(
            run_tournament(&dup, &Script(0.1, 0.2)),
            Err(RankError::DuplicateId(_))
        ));
    }

    #[test]
    fn failure_aborts_with_partial_report() {
        let corpus = [
            lm("a", UrgencyLabel::L1),
            lm("b", UrgencyLabel::L2),
            lm("c", UrgencyLabel::L3),
        ];
        // Oracle that only knows a and b.
        let oracle = NoisyOracle::perfect(&corpus[..2]);
        match run_tournament(&msgs(&corpus), &oracle) {
            Err(RankError::Aborted { failures, completed }) => {
                assert_eq!(failures.len(), 2);
                assert_eq!(completed.len(), 1);
            }
            other => panic!("expected abort, got {other:?}"),
        }
    }

    #[test]
    fn incremental_matches_full_run() {
        let corpus: Vec<_> = (0..6)
            .map(|i| lm(&format!("m{i}"), UrgencyLabel::ORDINAL[(i * 5) % 6]))
            .collect();
        let all = msgs(&corpus);
        let oracle = NoisyOracle::uniform(&corpus, 0.2, 11).unwrap();
        let store = Arc::new(CacheStore::in_memory());
        let counting = Arc::new(Counting::new(oracle));
        let cached = CachedComparator::new(counting.clone(), store);

        let base = run_tournament(&all[..5], &cached).unwrap();
        assert_eq!(base.comparisons_made, 10);
        let grown = insert_incremental(&base, &all[..5], &all[5], &cached, &RankOptions::default()).unwrap();
        assert_eq!(grown.comparisons_made, 15);
        assert_eq!(counting.calls(), 30);

        counting.reset();
        let rerun = run_tournament(&all, &cached).unwrap();
        assert_eq!(counting.calls(), 0);
        assert_eq!(rerun.cache_hits, 15);
        assert_eq!(rerun.ranking, grown.ranking);
        assert_eq!(rerun.scores, grown.scores);

        assert!(matches!(
            insert_incremental(&grown, &all, &all[0], &cached, &RankOptions::default()),
            Err(RankError::AlreadyPresent(_))
        ));
        assert!(matches!(
            insert_incremental(&base, &all[..4], &all[5], &cached, &RankOptions::default()),
            Err(RankError::InboxMismatch)
        ));
    }

    #[test]
    fn parallel_equals_sequential() {
        let corpus: Vec<_> = (0..12)
            .map(|i| lm(&format!("p{i:02}"), UrgencyLabel::ORDINAL[i % 6]))
            .collect();
        let oracle = NoisyOracle::uniform(&corpus, 0.3, 5).unwrap();
        let seq = run_tournament(&msgs(&corpus), &oracle).unwrap();
        let par = run_tournament_with(&msgs(&corpus), &oracle, &RankOptions { parallelism: 4 }).unwrap();
        assert_eq!(seq, par);
    }
}
