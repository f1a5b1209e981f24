//! Evaluation pairs, training triplets, training-data exports and inboxes.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::{index, IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{LabeledMessage, UrgencyLabel};
use crate::gateway::prompts::{completion_text, render_reward, render_sft};
use crate::gateway::{NO, YES};
use crate::util::{seeded_rng, sha256_hex, write_jsonl};

/// Default cap on how often one message may serve as a triplet partner.
pub const DEFAULT_MAX_USES: usize = 4;

#[derive(Debug, Error)]
pub enum PairError {
    #[error("corpus has no two messages with different ordinal levels")]
    NoValidPairs,
    #[error("message {0:?} has a non-ordinal label")]
    NonOrdinal(String),
    #[error("messages {0:?} and {1:?} share the same level")]
    EqualLevels(String, String),
    #[error("max_uses_per_message must be >= 1")]
    InvalidCap,
    #[error("no triplet could be formed")]
    NoTriplets,
    #[error("nothing to export")]
    EmptyInput,
    #[error("export to {path} failed: {source}")]
    ExportFailed {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("inbox needs {needed} {label} message(s), corpus has {available}")]
    InsufficientLevel {
        label: UrgencyLabel,
        needed: usize,
        available: usize,
    },
    #[error("invalid inbox spec: {0}")]
    InvalidInboxSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Medium, Difficulty::Hard];

    /// Easy at a level gap of 4 or more, medium at 2-3, hard at 1.
    pub fn from_gap(gap: u8) -> Option<Self> {
        match gap {
            0 => None,
            1 => Some(Difficulty::Hard),
            2 | 3 => Some(Difficulty::Medium),
            _ => Some(Difficulty::Easy),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Medium => "medium",
            Difficulty::Hard => "hard",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPair {
    pub a: LabeledMessage,
    pub b: LabeledMessage,
    pub gold_more_urgent: Side,
    pub difficulty: Difficulty,
    pub gap: u8,
}

impl EvalPair {
    pub fn new(a: LabeledMessage, b: LabeledMessage) -> Result<Self, PairError> {
        let la = a
            .label
            .level()
            .ok_or_else(|| PairError::NonOrdinal(a.id().to_string()))?;
        let lb = b
            .label
            .level()
            .ok_or_else(|| PairError::NonOrdinal(b.id().to_string()))?;
        let gap = la.abs_diff(lb);
        let difficulty =
            Difficulty::from_gap(gap).ok_or_else(|| PairError::EqualLevels(a.id().into(), b.id().into()))?;
        Ok(Self {
            gold_more_urgent: if la < lb { Side::A } else { Side::B },
            a,
            b,
            difficulty,
            gap,
        })
    }

    pub fn swapped(&self) -> Self {
        Self::new(self.b.clone(), self.a.clone()).expect("swap of a valid pair is valid")
    }

    pub fn more_urgent(&self) -> &LabeledMessage {
        match self.gold_more_urgent {
            Side::A => &self.a,
            Side::B => &self.b,
        }
    }

    pub fn less_urgent(&self) -> &LabeledMessage {
        match self.gold_more_urgent {
            Side::A => &self.b,
            Side::B => &self.a,
        }
    }
}

fn ordinal_levels(corpus: &[LabeledMessage]) -> Result<Vec<u8>, PairError> {
    corpus
        .iter()
        .map(|m| m.label.level().ok_or_else(|| PairError::NonOrdinal(m.id().to_string())))
        .collect()
}

fn feasible_pairs(levels: &[u8], keep: impl Fn(u8) -> bool) -> Vec<(u32, u32)> {
    let mut out = Vec::new();
    for i in 0..levels.len() {
        for j in i + 1..levels.len() {
            let gap = levels[i].abs_diff(levels[j]);
            if gap > 0 && keep(gap) {
                out.push((i as u32, j as u32));
            }
        }
    }
    out
}

fn sample_pairs(
    corpus: &[LabeledMessage],
    candidates: &[(u32, u32)],
    count: usize,
    rng: &mut impl Rng,
) -> Vec<EvalPair> {
    let k = count.min(candidates.len());
    index::sample(rng, candidates.len(), k)
        .into_iter()
        .map(|ix| {
            let (i, j) = candidates[ix];
            let (x, y) = (&corpus[i as usize], &corpus[j as usize]);
            // Random orientation so gold is not always on one side.
            let (a, b) = if rng.random_bool(0.5) { (x, y) } else { (y, x) };
            EvalPair::new(a.clone(), b.clone()).expect("candidate pairs have distinct levels")
        })
        .collect()
}

/// Samples `count` distinct cross-level pairs (all of them if fewer exist).
pub fn build_eval_pairs(corpus: &[LabeledMessage], count: usize, seed: u64) -> Result<Vec<EvalPair>, PairError> {
    let levels = ordinal_levels(corpus)?;
    let candidates = feasible_pairs(&levels, |_| true);
    if candidates.is_empty() {
        return Err(PairError::NoValidPairs);
    }
    Ok(sample_pairs(corpus, &candidates, count, &mut seeded_rng(seed)))
}

/// Per-difficulty pair counts for [`build_eval_pairs_stratified`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DifficultyQuotas {
    pub easy: usize,
    pub medium: usize,
    pub hard: usize,
}

impl DifficultyQuotas {
    pub fn get(&self, d: Difficulty) -> usize {
        match d {
            Difficulty::Easy => self.easy,
            Difficulty::Medium => self.medium,
            Difficulty::Hard => self.hard,
        }
    }
}

/// Like [`build_eval_pairs`] but fills each difficulty stratum separately,
/// returning easy, then medium, then hard pairs.
pub fn build_eval_pairs_stratified(
    corpus: &[LabeledMessage],
    quotas: DifficultyQuotas,
    seed: u64,
) -> Result<Vec<EvalPair>, PairError> {
    let levels = ordinal_levels(corpus)?;
    let mut rng = seeded_rng(seed);
    let mut out = Vec::new();
    let mut any = false;
    for d in Difficulty::ALL {
        let candidates = feasible_pairs(&levels, |gap| Difficulty::from_gap(gap) == Some(d));
        any |= !candidates.is_empty();
        out.extend(sample_pairs(corpus, &candidates, quotas.get(d), &mut rng));
    }
    if !any {
        return Err(PairError::NoValidPairs);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: LabeledMessage,
    pub more_urgent: LabeledMessage,
    pub less_urgent: LabeledMessage,
}

/// Picks a level uniformly among those with an available message, then a
/// message uniformly within it.
fn draw_partner(
    by_level: &[Vec<usize>; 7],
    levels: impl Iterator<Item = u8>,
    uses: &[usize],
    cap: usize,
    rng: &mut impl Rng,
) -> Option<usize> {
    let eligible: Vec<u8> = levels
        .filter(|&l| by_level[usize::from(l)].iter().any(|&i| uses[i] < cap))
        .collect();
    let level = *eligible.choose(rng)?;
    let open: Vec<usize> = by_level[usize::from(level)]
        .iter()
        .copied()
        .filter(|&i| uses[i] < cap)
        .collect();
    open.choose(rng).copied()
}

/// Builds at most one (anchor, more urgent, less urgent) triplet per L2..L5
/// anchor, visiting anchors in seeded random order. No message serves as a
/// more- or less-urgent partner more than `max_uses_per_message` times.
pub fn build_triplets(
    corpus: &[LabeledMessage],
    max_uses_per_message: usize,
    seed: u64,
) -> Result<Vec<Triplet>, PairError> {
    if max_uses_per_message == 0 {
        return Err(PairError::InvalidCap);
    }
    let levels = ordinal_levels(corpus)?;
    let mut by_level: [Vec<usize>; 7] = Default::default();
    for (i, &l) in levels.iter().enumerate() {
        by_level[usize::from(l)].push(i);
    }
    let mut rng = seeded_rng(seed);
    let mut anchors: Vec<usize> = (0..corpus.len()).filter(|&i| (2..=5).contains(&levels[i])).collect();
    anchors.shuffle(&mut rng);

    let mut uses = vec![0usize; corpus.len()];
    let mut triplets = Vec::new();
    for anchor in anchors {
        let level = levels[anchor];
        let more = draw_partner(&by_level, 1..level, &uses, max_uses_per_message, &mut rng);
        let less = draw_partner(&by_level, level + 1..=6, &uses, max_uses_per_message, &mut rng);
        let (Some(more), Some(less)) = (more, less) else {
            continue;
        };
        uses[more] += 1;
        uses[less] += 1;
        triplets.push(Triplet {
            anchor: corpus[anchor].clone(),
            more_urgent: corpus[more].clone(),
            less_urgent: corpus[less].clone(),
        });
    }
    if triplets.is_empty() {
        return Err(PairError::NoTriplets);
    }
    Ok(triplets)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftRecord {
    pub prompt: String,
    pub completion: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExportSummary {
    pub records: usize,
    pub sha256: String,
}

fn sft(existing: &LabeledMessage, new: &LabeledMessage, answer: &str) -> SftRecord {
    SftRecord {
        prompt: render_sft(&existing.message, &new.message),
        completion: answer.to_string(),
    }
}

/// Four records per triplet: (anchor, more, YES), (anchor, less, NO),
/// (more, anchor, NO), (less, anchor, YES), where `(x, y)` asks whether `y`
/// is more urgent than `x`.
pub fn sft_records(triplets: &[Triplet]) -> Vec<SftRecord> {
    triplets
        .iter()
        .flat_map(|t| {
            [
                sft(&t.anchor, &t.more_urgent, YES),
                sft(&t.anchor, &t.less_urgent, NO),
                sft(&t.more_urgent, &t.anchor, NO),
                sft(&t.less_urgent, &t.anchor, YES),
            ]
        })
        .collect()
}

/// Two records per triplet: the "more urgent" prompt preferring the more
/// urgent partner, and the inverse prompt preferring the less urgent one.
pub fn reward_records(triplets: &[Triplet]) -> Vec<RewardRecord> {
    triplets
        .iter()
        .flat_map(|t| {
            let more = completion_text(&t.more_urgent.message);
            let less = completion_text(&t.less_urgent.message);
            [
                RewardRecord {
                    prompt: render_reward(&t.anchor.message, false),
                    chosen: more.clone(),
                    rejected: less.clone(),
                },
                RewardRecord {
                    prompt: render_reward(&t.anchor.message, true),
                    chosen: less,
                    rejected: more,
                },
            ]
        })
        .collect()
}

fn export<T: Serialize>(records: &[T], path: &Path) -> Result<ExportSummary, PairError> {
    if records.is_empty() {
        return Err(PairError::EmptyInput);
    }
    let fail = |source| PairError::ExportFailed {
        path: path.display().to_string(),
        source,
    };
    let n = write_jsonl(path, records).map_err(fail)?;
    let bytes = std::fs::read(path).map_err(fail)?;
    Ok(ExportSummary {
        records: n,
        sha256: sha256_hex(&bytes),
    })
}

pub fn export_sft(triplets: &[Triplet], path: impl AsRef<Path>) -> Result<ExportSummary, PairError> {
    export(&sft_records(triplets), path.as_ref())
}

pub fn export_reward(triplets: &[Triplet], path: impl AsRef<Path>) -> Result<ExportSummary, PairError> {
    export(&reward_records(triplets), path.as_ref())
}

/// Requested per-level inbox composition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InboxSpec {
    pub counts: BTreeMap<UrgencyLabel, usize>,
    pub seed: u64,
}

impl InboxSpec {
    pub fn from_counts(counts: [usize; 6], seed: u64) -> Self {
        Self {
            counts: UrgencyLabel::ORDINAL.into_iter().zip(counts).collect(),
            seed,
        }
    }

    /// Five messages per level (30 total).
    pub fn uniform(seed: u64) -> Self {
        Self::from_counts([5; 6], seed)
    }

    /// The uneven 31-message composition used for the hospital corpus.
    pub fn real(seed: u64) -> Self {
        Self::from_counts([5, 3, 5, 7, 7, 4], seed)
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn validate(&self) -> Result<(), PairError> {
        if let Some(l) = self.counts.keys().find(|l| !l.is_ordinal()) {
            return Err(PairError::InvalidInboxSpec(format!("{l} is not an ordinal level")));
        }
        if self.total() < 2 {
            return Err(PairError::InvalidInboxSpec("total count must be >= 2".into()));
        }
        Ok(())
    }
}

/// Samples the requested number of messages per level, then shuffles.
pub fn assemble_inbox(corpus: &[LabeledMessage], spec: &InboxSpec) -> Result<Vec<LabeledMessage>, PairError> {
    spec.validate()?;
    let mut rng = seeded_rng(spec.seed);
    let mut inbox = Vec::with_capacity(spec.total());
    for (&label, &needed) in &spec.counts {
        let pool: Vec<&LabeledMessage> = corpus.iter().filter(|m| m.label == label).collect();
        if pool.len() < needed {
            return Err(PairError::InsufficientLevel {
                label,
                needed,
                available: pool.len(),
            });
        }
        let mut picked = index::sample(&mut rng, pool.len(), needed).into_vec();
        picked.sort_unstable();
        inbox.extend(picked.into_iter().map(|i| pool[i].clone()));
    }
    inbox.shuffle(&mut rng);
    Ok(inbox)
}
