use std::collections::{BTreeMap, HashMap};

use rand::Rng;

use super::{Comparator, CompareError, DirectionScore};
use crate::corpus::{LabeledMessage, Message};
use crate::util::{derive_seed, seeded_rng};

pub const DEFAULT_MARGIN: f64 = 0.4;

/// Test double that knows the gold levels and errs with a gap-dependent
/// probability.
///
/// For a pair with level gap `g`, the pair is "flipped" with probability
/// `flip(g)`; the flip decision is drawn from `(seed, sorted id pair)`, so both
/// prompt orders agree and results do not depend on call order or threading.
/// The believed-more-urgent message gets `0.5 + margin` as the new message and
/// `0.5 - margin` otherwise. Same-level pairs score 0.5 both ways.
#[derive(Debug, Clone)]
pub struct NoisyOracle {
    levels: HashMap<String, u8>,
    flip_by_gap: [f64; 6],
    seed: u64,
    margin: f64,
}

impl NoisyOracle {
    /// `flip_by_gap` maps gap 1..=5 to a flip probability; gaps left out never flip.
    pub fn new<'a>(
        labeled: impl IntoIterator<Item = &'a LabeledMessage>,
        flip_by_gap: &BTreeMap<u8, f64>,
        seed: u64,
    ) -> Result<Self, CompareError> {
        let mut flips = [0.0; 6];
        for (&gap, &p) in flip_by_gap {
            if !(1..=5).contains(&gap) {
                return Err(CompareError::OracleConfig(format!("gap {gap} outside 1..=5")));
            }
            if !(0.0..=1.0).contains(&p) {
                return Err(CompareError::OracleConfig(format!(
                    "flip probability {p} for gap {gap} outside [0, 1]"
                )));
            }
            flips[usize::from(gap)] = p;
        }
        let levels = labeled
            .into_iter()
            .filter_map(|m| m.label.level().map(|l| (m.id().to_string(), l)))
            .collect();
        Ok(Self {
            levels,
            flip_by_gap: flips,
            seed,
            margin: DEFAULT_MARGIN,
        })
    }

    /// Noiseless oracle.
    pub fn perfect<'a>(labeled: impl IntoIterator<Item = &'a LabeledMessage>) -> Self {
        Self::new(labeled, &BTreeMap::new(), 0).expect("empty flip map is valid")
    }

    /// Same flip probability at every gap.
    pub fn uniform<'a>(
        labeled: impl IntoIterator<Item = &'a LabeledMessage>,
        flip: f64,
        seed: u64,
    ) -> Result<Self, CompareError> {
        let map = (1..=5).map(|g| (g, flip)).collect();
        Self::new(labeled, &map, seed)
    }

    pub fn with_margin(mut self, margin: f64) -> Result<Self, CompareError> {
        if !(0.0..=0.5).contains(&margin) {
            return Err(CompareError::OracleConfig(format!("margin {margin} outside [0, 0.5]")));
        }
        self.margin = margin;
        Ok(self)
    }

    pub fn flip_probability(&self, gap: u8) -> f64 {
        self.flip_by_gap.get(usize::from(gap)).copied().unwrap_or(0.0)
    }

    fn level_of(&self, m: &Message) -> Result<u8, CompareError> {
        self.levels
            .get(&m.id)
            .copied()
            .ok_or_else(|| CompareError::OracleNeedsLabels(m.id.clone()))
    }

    fn flipped(&self, x: &str, y: &str, gap: u8) -> bool {
        let p = self.flip_probability(gap);
        if p <= 0.0 {
            return false;
        }
        let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
        let mut rng = seeded_rng(derive_seed(self.seed, &["oracle-flip", lo, hi]));
        rng.random_bool(p)
    }
}

impl Comparator for NoisyOracle {
    fn identity(&self) -> String {
        format!(
            "oracle:seed={}:margin={}:flip={:?}",
            self.seed,
            self.margin,
            &self.flip_by_gap[1..]
        )
    }

    fn score_directed(&self, existing: &Message, new: &Message) -> Result<DirectionScore, CompareError> {
        let le = self.level_of(existing)?;
        let ln = self.level_of(new)?;
        if le == ln {
            return Ok(DirectionScore::probability(0.5));
        }
        let gold_new_more_urgent = ln < le;
        let believed = gold_new_more_urgent ^ self.flipped(&existing.id, &new.id, le.abs_diff(ln));
        let value = if believed { 0.5 + self.margin } else { 0.5 - self.margin };
        Ok(DirectionScore::probability(value))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compare::{compare, Winner};
    use crate::corpus::{Source, UrgencyLabel};

    fn lm(id: &str, label: UrgencyLabel) -> LabeledMessage {
        LabeledMessage::new(Message::new(id, id, Source::SyntheticTest), label)
    }

    #[test]
    fn perfect_oracle_agrees_with_gold() {
        let corpus = [lm("a", UrgencyLabel::L1), lm("b", UrgencyLabel::L4)];
        let o = NoisyOracle::perfect(&corpus);
        let out = compare(&o, &corpus[0].message, &corpus[1].message).unwrap();
        assert_eq!(out.winner, Winner::A);
        assert!((out.eta + 0.8).abs() < 1e-12);
    }

    #[test]
    fn same_level_ties() {
        let corpus = [lm("a", UrgencyLabel::L3), lm("b", UrgencyLabel::L3)];
        let o = NoisyOracle::perfect(&corpus);
        let out = compare(&o, &corpus[0].message, &corpus[1].message).unwrap();
        assert_eq!(out.winner, Winner::Tie);
    }

    #[test]
    fn unlabeled_message_rejected() {
        let corpus = [lm("a", UrgencyLabel::L3), lm("u", UrgencyLabel::Unclear)];
        let o = NoisyOracle::perfect(&corpus);
        let err = o.score_directed(&corpus[0].message, &corpus[1].message).unwrap_err();
        assert!(matches!(err, CompareError::OracleNeedsLabels(id) if id == "u"));
    }

    #[test]
    fn flip_one_always_wrong() {
        let corpus = [lm("a", UrgencyLabel::L1), lm("b", UrgencyLabel::L2)];
        let o = NoisyOracle::uniform(&corpus, 1.0, 9).unwrap();
        let out = compare(&o, &corpus[0].message, &corpus[1].message).unwrap();
        assert_eq!(out.winner, Winner::B);
    }

    #[test]
    fn directions_are_consistent() {
        let corpus: Vec<_> = (0..40)
            .map(|i| lm(&format!("m{i}"), UrgencyLabel::ORDINAL[i % 6]))
            .collect();
        let o = NoisyOracle::uniform(&corpus, 0.5, 3).unwrap();
        for a in &corpus {
            for b in &corpus {
                if a.level() == b.level() {
                    continue;
                }
                let ab = o.score_directed(&a.message, &b.message).unwrap().value;
                let ba = o.score_directed(&b.message, &a.message).unwrap().value;
                assert!((ab + ba - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bad_config_rejected() {
        let m: BTreeMap<u8, f64> = [(1, 1.5)].into();
        assert!(NoisyOracle::new(&[], &m, 0).is_err());
        let m: BTreeMap<u8, f64> = [(6, 0.1)].into();
        assert!(NoisyOracle::new(&[], &m, 0).is_err());
        assert!(NoisyOracle::perfect(&[]).with_margin(0.7).is_err());
    }
}
