use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::corpus::UrgencyLabel;
use crate::util::{derive_seed, seeded_rng};

pub const DEFAULT_SHUFFLES: usize = 1000;

/// Ordinal label to integer relevance. Gain is `2^rel - 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<UrgencyLabel, u32>", into = "BTreeMap<UrgencyLabel, u32>")]
pub struct RelevanceMapping {
    rel: [u32; 6],
}

impl Default for RelevanceMapping {
    fn default() -> Self {
        Self {
            rel: [5, 4, 3, 2, 1, 0],
        }
    }
}

impl RelevanceMapping {
    /// Relevances for L1..L6; must be strictly decreasing and end at 0.
    pub fn new(rel: [u32; 6]) -> Result<Self, MetricsError> {
        if rel[5] != 0 {
            return Err(MetricsError::BadMapping("L6 must map to 0".into()));
        }
        if rel.windows(2).any(|w| w[0] <= w[1]) {
            return Err(MetricsError::BadMapping(
                "relevance must strictly decrease with level".into(),
            ));
        }
        if rel[0] > 60 {
            return Err(MetricsError::BadMapping("relevance above 60 overflows the gain".into()));
        }
        Ok(Self { rel })
    }

    pub fn relevance(&self, label: UrgencyLabel) -> Option<u32> {
        label.level().map(|l| self.rel[usize::from(l) - 1])
    }

    pub fn gain(&self, label: UrgencyLabel) -> Option<f64> {
        self.relevance(label).map(|r| 2f64.powi(r as i32) - 1.0)
    }
}

impl TryFrom<BTreeMap<UrgencyLabel, u32>> for RelevanceMapping {
    type Error = MetricsError;

    fn try_from(map: BTreeMap<UrgencyLabel, u32>) -> Result<Self, Self::Error> {
        let mut rel = [0; 6];
        for (i, label) in UrgencyLabel::ORDINAL.into_iter().enumerate() {
            rel[i] = *map
                .get(&label)
                .ok_or_else(|| MetricsError::BadMapping(format!("missing {label}")))?;
        }
        if map.len() != 6 {
            return Err(MetricsError::BadMapping("only L1..L6 may be mapped".into()));
        }
        Self::new(rel)
    }
}

impl From<RelevanceMapping> for BTreeMap<UrgencyLabel, u32> {
    fn from(m: RelevanceMapping) -> Self {
        UrgencyLabel::ORDINAL.into_iter().zip(m.rel).collect()
    }
}

fn gains<S: AsRef<str>>(
    ranking: &[S],
    labels: &BTreeMap<String, UrgencyLabel>,
    mapping: &RelevanceMapping,
) -> Result<Vec<f64>, MetricsError> {
    ranking
        .iter()
        .map(|id| {
            let id = id.as_ref();
            let label = labels.get(id).ok_or_else(|| MetricsError::MissingLabel(id.into()))?;
            mapping.gain(*label).ok_or_else(|| MetricsError::NonOrdinal(id.into()))
        })
        .collect()
}

/// `sum_{i=1..k} g_i / log2(i + 1)` over precomputed gains.
pub fn dcg_at_k(gains: &[f64], k: usize) -> f64 {
    gains
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, g)| g / ((i + 2) as f64).log2())
        .sum()
}

fn check_k(k: usize, len: usize) -> Result<(), MetricsError> {
    if k == 0 || k > len {
        return Err(MetricsError::BadK { k, len });
    }
    Ok(())
}

fn ndcg_of_gains(gains: &[f64], k: usize) -> f64 {
    let mut ideal = gains.to_vec();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg = dcg_at_k(&ideal, k);
    if idcg == 0.0 {
        1.0
    } else {
        dcg_at_k(gains, k) / idcg
    }
}

/// NDCG@k of `ranking` (most urgent first). 1.0 when the ideal DCG is 0.
pub fn ndcg_at_k<S: AsRef<str>>(
    ranking: &[S],
    labels: &BTreeMap<String, UrgencyLabel>,
    mapping: &RelevanceMapping,
    k: usize,
) -> Result<f64, MetricsError> {
    check_k(k, ranking.len())?;
    Ok(ndcg_of_gains(&gains(ranking, labels, mapping)?, k))
}

fn t_ndcg_of_gains(gains: &[f64], k: usize) -> f64 {
    let reversed: Vec<f64> = gains.iter().rev().copied().collect();
    ndcg_of_gains(gains, k) - ndcg_of_gains(&reversed, k)
}

/// `NDCG@k(ranking) - NDCG@k(reverse(ranking))`, in `[-1, 1]`.
pub fn t_ndcg_at_k<S: AsRef<str>>(
    ranking: &[S],
    labels: &BTreeMap<String, UrgencyLabel>,
    mapping: &RelevanceMapping,
    k: usize,
) -> Result<f64, MetricsError> {
    check_k(k, ranking.len())?;
    Ok(t_ndcg_of_gains(&gains(ranking, labels, mapping)?, k))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpectedTNdcg {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single shuffle.
    pub stddev: f64,
    pub shuffles: usize,
}

/// The ranking obtained in shuffle trial `trial`: each predicted class is
/// shuffled independently and the classes are concatenated in order.
pub fn shuffled_within_classes<S: AsRef<str>>(classes: &[Vec<S>], seed: u64, trial: usize) -> Vec<String> {
    let mut rng = seeded_rng(derive_seed(seed, &["t-ndcg-shuffle", &trial.to_string()]));
    let mut out = Vec::with_capacity(classes.iter().map(Vec::len).sum());
    for class in classes {
        let mut ids: Vec<String> = class.iter().map(|s| s.as_ref().to_string()).collect();
        ids.shuffle(&mut rng);
        out.extend(ids);
    }
    out
}

/// Mean and sample stddev of T-NDCG@k over `shuffles` within-class shuffles.
/// Trials run in parallel with per-trial seeds and are summed in trial order,
/// so the result does not depend on thread count.
pub fn expected_t_ndcg<S: AsRef<str> + Sync>(
    classes: &[Vec<S>],
    labels: &BTreeMap<String, UrgencyLabel>,
    mapping: &RelevanceMapping,
    k: usize,
    shuffles: usize,
    seed: u64,
) -> Result<ExpectedTNdcg, MetricsError> {
    if shuffles == 0 {
        return Err(MetricsError::BadShuffles);
    }
    let flat: Vec<&str> = classes.iter().flatten().map(AsRef::as_ref).collect();
    check_k(k, flat.len())?;
    // Validate labels once; trials then work on gains directly.
    let gain_of: BTreeMap<&str, f64> = flat.iter().copied().zip(gains(&flat, labels, mapping)?).collect();
    let values: Vec<f64> = (0..shuffles)
        .into_par_iter()
        .map(|trial| {
            let order = shuffled_within_classes(classes, seed, trial);
            let g: Vec<f64> = order.iter().map(|id| gain_of[id.as_str()]).collect();
            t_ndcg_of_gains(&g, k)
        })
        .collect();
    // Deviations from the first trial keep a constant series at exactly
    // zero spread, which a plain mean would not after rounding.
    let n = values.len() as f64;
    let shifted: Vec<f64> = values.iter().map(|v| v - values[0]).collect();
    let shift_mean = shifted.iter().sum::<f64>() / n;
    let stddev = if values.len() < 2 {
        0.0
    } else {
        (shifted.iter().map(|d| (d - shift_mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Ok(ExpectedTNdcg {
        mean: values[0] + shift_mean,
        stddev,
        shuffles,
    })
}
