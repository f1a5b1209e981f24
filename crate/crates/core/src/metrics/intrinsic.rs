use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::compare::{compare, Comparator, ComparisonOutcome, Winner};
use crate::pairs::{Difficulty, EvalPair};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StratumAccuracy {
    /// `None` for an empty stratum.
    pub accuracy: Option<f64>,
    pub correct: usize,
    pub n: usize,
}

impl StratumAccuracy {
    fn add(&mut self, correct: bool) {
        self.n += 1;
        self.correct += usize::from(correct);
        self.accuracy = Some(self.correct as f64 / self.n as f64);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicReport {
    pub overall_accuracy: f64,
    pub n: usize,
    pub correct: usize,
    pub per_difficulty: BTreeMap<Difficulty, StratumAccuracy>,
    pub per_gap: BTreeMap<u8, StratumAccuracy>,
    /// Ties count as incorrect.
    pub tie_count: usize,
}

/// Compares each pair as `(a, b)`. Outcomes are returned in pair order.
pub fn evaluate_pairs<C: Comparator + ?Sized>(
    pairs: &[EvalPair],
    comparator: &C,
    parallelism: usize,
) -> Result<Vec<ComparisonOutcome>, MetricsError> {
    let job = |p: &EvalPair| compare(comparator, &p.a.message, &p.b.message);
    let results: Vec<_> = if parallelism <= 1 {
        pairs.iter().map(job).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism)
            .build()
            .map_err(|e| MetricsError::Pool(e.to_string()))?;
        pool.install(|| pairs.par_iter().map(job).collect())
    };
    results.into_iter().map(|r| r.map_err(MetricsError::from)).collect()
}

pub(super) fn check_outcome(index: usize, pair: &EvalPair, o: &ComparisonOutcome) -> Result<(), MetricsError> {
    let (a, b) = (pair.a.id(), pair.b.id());
    let same = (o.a_id == a && o.b_id == b) || (o.a_id == b && o.b_id == a);
    if !same {
        return Err(MetricsError::OutcomeMismatch {
            index,
            a_id: a.into(),
            b_id: b.into(),
        });
    }
    Ok(())
}

pub(super) fn is_correct(pair: &EvalPair, o: &ComparisonOutcome) -> bool {
    o.winner_id() == Some(pair.more_urgent().id())
}

/// Scores precomputed outcomes, index-aligned with `pairs`.
pub fn intrinsic_report(pairs: &[EvalPair], outcomes: &[ComparisonOutcome]) -> Result<IntrinsicReport, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyPairs);
    }
    if pairs.len() != outcomes.len() {
        let i = pairs.len().min(outcomes.len());
        let p = &pairs[i.min(pairs.len() - 1)];
        return Err(MetricsError::OutcomeMismatch {
            index: i,
            a_id: p.a.id().into(),
            b_id: p.b.id().into(),
        });
    }
    let mut per_difficulty: BTreeMap<Difficulty, StratumAccuracy> = Difficulty::ALL
        .into_iter()
        .map(|d| (d, StratumAccuracy::default()))
        .collect();
    let mut per_gap: BTreeMap<u8, StratumAccuracy> = BTreeMap::new();
    let (mut correct, mut tie_count) = (0, 0);
    for (i, (p, o)) in pairs.iter().zip(outcomes).enumerate() {
        check_outcome(i, p, o)?;
        let ok = is_correct(p, o);
        correct += usize::from(ok);
        tie_count += usize::from(o.winner == Winner::Tie);
        per_difficulty
            .get_mut(&p.difficulty)
            .expect("all strata present")
            .add(ok);
        per_gap.entry(p.gap).or_default().add(ok);
    }
    Ok(IntrinsicReport {
        overall_accuracy: correct as f64 / pairs.len() as f64,
        n: pairs.len(),
        correct,
        per_difficulty,
        per_gap,
        tie_count,
    })
}

pub fn intrinsic_accuracy<C: Comparator + ?Sized>(
    pairs: &[EvalPair],
    comparator: &C,
) -> Result<IntrinsicReport, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyPairs);
    }
    let outcomes = evaluate_pairs(pairs, comparator, 1)?;
    intrinsic_report(pairs, &outcomes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compare::{CompareError, DirectionScore, NoisyOracle};
    use crate::corpus::{LabeledMessage, Message, Source, UrgencyLabel};
    use crate::pairs::build_eval_pairs;

    fn corpus(per_level: usize) -> Vec<LabeledMessage> {
        UrgencyLabel::ORDINAL
            .into_iter()
            .flat_map(|l| {
                (0..per_level)
                    .map(move |k| LabeledMessage::new(Message::new(format!("{l}-{k}"), "t", Source::SyntheticTest), l))
            })
            .collect()
    }

    struct AlwaysTie;
    impl Comparator for AlwaysTie {
        fn identity(&self) -> String {
            "tie".into()
        }
        fn score_directed(&self, _: &Message, _: &Message) -> Result<DirectionScore, CompareError> {
            Ok(DirectionScore::probability(0.5))
        }
    }

    #[test]
    fn perfect_oracle_is_perfect() {
        let c = corpus(4);
        let pairs = build_eval_pairs(&c, 200, 1).unwrap();
        let r = intrinsic_accuracy(&pairs, &NoisyOracle::perfect(&c)).unwrap();
        assert_eq!(r.overall_accuracy, 1.0);
        assert!(r.per_difficulty.values().all(|s| s.accuracy == Some(1.0)));
        assert_eq!(r.per_difficulty.values().map(|s| s.n).sum::<usize>(), 200);
        assert_eq!(r.tie_count, 0);
    }

    #[test]
    fn ties_count_as_wrong() {
        let c = corpus(2);
        let pairs = build_eval_pairs(&c, 30, 2).unwrap();
        let r = intrinsic_accuracy(&pairs, &AlwaysTie).unwrap();
        assert_eq!(r.overall_accuracy, 0.0);
        assert_eq!(r.tie_count, 30);
    }

    #[test]
    fn empty_and_mismatch() {
        assert!(matches!(
            intrinsic_accuracy(&[], &AlwaysTie),
            Err(MetricsError::EmptyPairs)
        ));
        let c = corpus(2);
        let pairs = build_eval_pairs(&c, 3, 2).unwrap();
        let mut outs = evaluate_pairs(&pairs, &AlwaysTie, 1).unwrap();
        outs.swap(0, 1);
        assert!(matches!(
            intrinsic_report(&pairs, &outs),
            Err(MetricsError::OutcomeMismatch { .. })
        ));
    }

    #[test]
    fn accuracy_steps_down_with_flip_probability() {
        let c = corpus(10);
        let pairs = build_eval_pairs(&c, 1500, 4).unwrap();
        let acc = |flip: f64| {
            let o = NoisyOracle::uniform(&c, flip, 9).unwrap();
            intrinsic_accuracy(&pairs, &o).unwrap().overall_accuracy
        };
        let (a0, a1, a2) = (acc(0.05), acc(0.2), acc(0.4));
        assert!(a0 > a1 && a1 > a2, "{a0} {a1} {a2}");
    }

    #[test]
    fn parallel_matches_sequential() {
        let c = corpus(5);
        let pairs = build_eval_pairs(&c, 100, 4).unwrap();
        let o = NoisyOracle::uniform(&c, 0.2, 3).unwrap();
        assert_eq!(
            evaluate_pairs(&pairs, &o, 1).unwrap(),
            evaluate_pairs(&pairs, &o, 4).unwrap()
        );
    }
}
