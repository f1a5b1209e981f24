use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::MetricsError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub pair_id: String,
    pub annotator_id: String,
    pub choice: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub percent_agreement: f64,
    pub cohens_kappa: f64,
    pub pairs_used: usize,
    /// Pairs without exactly two distinct annotators.
    pub pairs_excluded: usize,
}

/// Percent agreement and Cohen's kappa over doubly annotated pairs.
///
/// Within each pair the annotation from the lexicographically smaller
/// annotator id is rater 1. When chance agreement is 1 (both raters always
/// give the same single answer) kappa is reported as 1.
pub fn agreement(annotations: &[Annotation]) -> Result<AgreementReport, MetricsError> {
    let mut by_pair: BTreeMap<&str, Vec<&Annotation>> = BTreeMap::new();
    for a in annotations {
        by_pair.entry(&a.pair_id).or_default().push(a);
    }
    let mut rated: Vec<(&str, &str)> = Vec::new();
    let mut excluded = 0;
    for (_, mut anns) in by_pair {
        if anns.len() != 2 || anns[0].annotator_id == anns[1].annotator_id {
            excluded += 1;
            continue;
        }
        anns.sort_by(|x, y| x.annotator_id.cmp(&y.annotator_id));
        rated.push((&anns[0].choice, &anns[1].choice));
    }
    if rated.is_empty() {
        return Err(MetricsError::NoAnnotations);
    }
    let n = rated.len() as f64;
    let po = rated.iter().filter(|(x, y)| x == y).count() as f64 / n;
    let categories: BTreeSet<&str> = rated.iter().flat_map(|(x, y)| [*x, *y]).collect();
    let pe: f64 = categories
        .iter()
        .map(|c| {
            let p1 = rated.iter().filter(|(x, _)| x == c).count() as f64 / n;
            let p2 = rated.iter().filter(|(_, y)| y == c).count() as f64 / n;
            p1 * p2
        })
        .sum();
    let kappa = if pe >= 1.0 { 1.0 } else { (po - pe) / (1.0 - pe) };
    Ok(AgreementReport {
        percent_agreement: po,
        cohens_kappa: kappa,
        pairs_used: rated.len(),
        pairs_excluded: excluded,
    })
}
