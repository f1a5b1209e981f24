use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::intrinsic::{check_outcome, is_correct};
use super::MetricsError;
use crate::compare::ComparisonOutcome;
use crate::corpus::Gender;
use crate::pairs::EvalPair;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasScheme {
    /// Gender of the more urgent patient x gender of the less urgent one.
    GenderOfRoles,
    /// Whether the older patient is the more urgent one.
    AgeOrdering,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StratumCounts {
    pub correct: u64,
    pub incorrect: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquare {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub cramers_v: f64,
    pub n: f64,
}

/// Pearson chi-square test of independence without continuity correction.
///
/// All-zero rows and columns are dropped first. A table left with fewer than
/// two rows or columns has no variation to test: statistic 0, p-value 1.
pub fn chi_square_test(table: &[Vec<f64>]) -> Result<ChiSquare, MetricsError> {
    let cols = table.first().map_or(0, Vec::len);
    if table
        .iter()
        .any(|r| r.len() != cols || r.iter().any(|v| !v.is_finite() || *v < 0.0))
    {
        return Err(MetricsError::BadTable);
    }
    let keep_cols: Vec<usize> = (0..cols).filter(|&j| table.iter().any(|r| r[j] > 0.0)).collect();
    let rows: Vec<Vec<f64>> = table
        .iter()
        .filter(|r| r.iter().any(|v| *v > 0.0))
        .map(|r| keep_cols.iter().map(|&j| r[j]).collect())
        .collect();
    let (r, c) = (rows.len(), keep_cols.len());
    let n: f64 = rows.iter().flatten().sum();
    if r < 2 || c < 2 {
        return Ok(ChiSquare {
            statistic: 0.0,
            dof: 0,
            p_value: 1.0,
            cramers_v: 0.0,
            n,
        });
    }
    let row_tot: Vec<f64> = rows.iter().map(|row| row.iter().sum()).collect();
    let col_tot: Vec<f64> = (0..c).map(|j| rows.iter().map(|row| row[j]).sum()).collect();
    let mut statistic = 0.0;
    for (i, row) in rows.iter().enumerate() {
        for (j, &o) in row.iter().enumerate() {
            let e = row_tot[i] * col_tot[j] / n;
            statistic += (o - e).powi(2) / e;
        }
    }
    let dof = (r - 1) * (c - 1);
    let p_value = ChiSquared::new(dof as f64).expect("dof >= 1").sf(statistic);
    let cramers_v = (statistic / (n * (r.min(c) - 1) as f64)).sqrt().min(1.0);
    Ok(ChiSquare {
        statistic,
        dof,
        p_value,
        cramers_v,
        n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub scheme: BiasScheme,
    pub strata: BTreeMap<String, StratumCounts>,
    pub chi_square: f64,
    pub dof: usize,
    pub p_value: f64,
    pub cramers_v: f64,
    /// Pairs lacking the demographics the scheme needs.
    pub skipped: usize,
}

fn known_gender(g: Gender) -> Option<Gender> {
    (g != Gender::Unknown).then_some(g)
}

fn stratum(pair: &EvalPair, scheme: BiasScheme) -> Option<String> {
    let more = pair.more_urgent().message.ehr.as_ref()?;
    let less = pair.less_urgent().message.ehr.as_ref()?;
    match scheme {
        BiasScheme::GenderOfRoles => Some(format!(
            "more={},less={}",
            known_gender(more.gender)?,
            known_gender(less.gender)?
        )),
        BiasScheme::AgeOrdering => match more.age.cmp(&less.age) {
            std::cmp::Ordering::Greater => Some("older_more_urgent".into()),
            std::cmp::Ordering::Less => Some("older_less_urgent".into()),
            std::cmp::Ordering::Equal => None,
        },
    }
}

/// Tests whether comparator correctness depends on patient demographics.
/// `outcomes` are index-aligned with `pairs`.
pub fn bias_strata(
    pairs: &[EvalPair],
    outcomes: &[ComparisonOutcome],
    scheme: BiasScheme,
) -> Result<BiasReport, MetricsError> {
    if pairs.len() != outcomes.len() {
        return Err(MetricsError::OutcomeMismatch {
            index: pairs.len().min(outcomes.len()),
            a_id: String::new(),
            b_id: String::new(),
        });
    }
    let mut strata: BTreeMap<String, StratumCounts> = BTreeMap::new();
    let mut skipped = 0;
    for (i, (p, o)) in pairs.iter().zip(outcomes).enumerate() {
        check_outcome(i, p, o)?;
        let Some(name) = stratum(p, scheme) else {
            skipped += 1;
            continue;
        };
        let s = strata.entry(name).or_default();
        if is_correct(p, o) {
            s.correct += 1;
        } else {
            s.incorrect += 1;
        }
    }
    if strata.is_empty() {
        return Err(MetricsError::NoStrata);
    }
    let table: Vec<Vec<f64>> = strata
        .values()
        .map(|s| vec![s.correct as f64, s.incorrect as f64])
        .collect();
    let chi = chi_square_test(&table)?;
    Ok(BiasReport {
        scheme,
        strata,
        chi_square: chi.statistic,
        dof: chi.dof,
        p_value: chi.p_value,
        cramers_v: chi.cramers_v,
        skipped,
    })
}
