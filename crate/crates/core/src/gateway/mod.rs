//! Remote model access: chat completions with first-token probabilities,
//! scalar reward scoring, and the prompt catalog.

mod client;
pub mod mock;
pub mod prompts;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use client::{EndpointConfig, HttpGateway, API_KEY_ENV, BASE_URL_ENV};
pub use prompts::{Bindings, PromptName, PromptTemplate, CATALOG_VERSION};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GatewayError {
    #[error("endpoint unavailable after {attempts} attempt(s): {last_error}")]
    EndpointUnavailable { attempts: u32, last_error: String },
    #[error("request rejected with HTTP {status}: {body}")]
    RequestRejected { status: u16, body: String },
    #[error("protocol error: {0}")]
    ProtocolError(String),
    #[error("non-finite or non-numeric score: {0}")]
    BadScore(String),
    #[error("unbound placeholder {{{0}}}")]
    MissingBinding(String),
    #[error("invalid endpoint configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    #[serde(default)]
    pub prompt_tokens: u64,
    #[serde(default)]
    pub completion_tokens: u64,
    #[serde(default)]
    pub total_tokens: u64,
}

pub const YES: &str = "YES";
pub const NO: &str = "NO";

/// Fraction of first-position probability mass the returned candidates must
/// cover before a missing YES/NO is filled in as a complement.
pub const EXHAUSTIVE_MASS: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    /// Aggregated `YES`/`NO` probabilities at the first answer position.
    /// Only tokens that were observed (or derived as a complement) appear.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_probabilities: Option<BTreeMap<String, f64>>,
    #[serde(default)]
    pub usage: Usage,
}

impl CompletionResult {
    pub fn prob(&self, token: &str) -> Option<f64> {
        self.token_probabilities.as_ref()?.get(token).copied()
    }
}

/// A chat model reachable through the gateway.
pub trait ChatBackend: Send + Sync {
    /// Stable identity used in cache keys and reports.
    fn identity(&self) -> String;

    fn complete(&self, system: &str, user: &str, want_logprobs: bool) -> Result<CompletionResult, GatewayError>;
}

/// A reward model scoring `completion` as a response to `prompt`.
pub trait ScoreBackend: Send + Sync {
    fn identity(&self) -> String;

    fn score(&self, prompt: &str, completion: &str) -> Result<f64, GatewayError>;
}

fn answer_class(token: &str) -> Option<&'static str> {
    let t = token.trim_start();
    if t.eq_ignore_ascii_case("yes") {
        Some(YES)
    } else if t.eq_ignore_ascii_case("no") {
        Some(NO)
    } else {
        None
    }
}

/// Folds first-position `(token, probability)` candidates into YES/NO mass.
///
/// Surface variants (`" YES"`, `"Yes"`, `"yes"`, ...) are summed. Duplicate
/// token strings count once. When exactly one of YES/NO is present and the
/// candidates cover at least [`EXHAUSTIVE_MASS`], the other is set to the
/// complement; otherwise it is left absent. The result never sums above 1.
pub fn aggregate_yes_no(candidates: &[(String, f64)]) -> BTreeMap<String, f64> {
    let mut seen = std::collections::HashSet::new();
    let mut coverage = 0.0;
    let mut yes: Option<f64> = None;
    let mut no: Option<f64> = None;
    for (token, p) in candidates {
        if !seen.insert(token.as_str()) {
            continue;
        }
        let p = p.clamp(0.0, 1.0);
        coverage += p;
        match answer_class(token) {
            Some(YES) => *yes.get_or_insert(0.0) += p,
            Some(_) => *no.get_or_insert(0.0) += p,
            None => {}
        }
    }
    match (yes, no) {
        (Some(y), None) if coverage >= EXHAUSTIVE_MASS => no = Some((1.0 - y).max(0.0)),
        (None, Some(n)) if coverage >= EXHAUSTIVE_MASS => yes = Some((1.0 - n).max(0.0)),
        _ => {}
    }
    if let (Some(y), Some(n)) = (yes, no) {
        let total = y + n;
        if total > 1.0 {
            yes = Some(y / total);
            no = Some(n / total);
        }
    }
    let mut out = BTreeMap::new();
    if let Some(y) = yes {
        out.insert(YES.to_string(), y.min(1.0));
    }
    if let Some(n) = no {
        out.insert(NO.to_string(), n.min(1.0));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(pairs: &[(&str, f64)]) -> Vec<(String, f64)> {
        pairs.iter().map(|(t, p)| (t.to_string(), *p)).collect()
    }

    #[test]
    fn variants_are_summed() {
        let m = aggregate_yes_no(&c(&[(" YES", 0.5), ("Yes", 0.2), ("yes", 0.1), (" No", 0.15)]));
        assert!((m[YES] - 0.8).abs() < 1e-12);
        assert!((m[NO] - 0.15).abs() < 1e-12);
    }

    #[test]
    fn complement_only_when_exhaustive() {
        let m = aggregate_yes_no(&c(&[("YES", 0.995)]));
        assert!((m[NO] - 0.005).abs() < 1e-12);

        let m = aggregate_yes_no(&c(&[("NO", 0.9)]));
        assert_eq!(m.get(YES), None);
        assert_eq!(m[NO], 0.9);

        let m = aggregate_yes_no(&c(&[("NO", 0.9), ("Maybe", 0.095)]));
        assert!((m[YES] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn duplicate_tokens_count_once() {
        let m = aggregate_yes_no(&c(&[("YES", 0.7), ("YES", 0.7), ("NO", 0.3)]));
        assert!((m[YES] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn unrelated_tokens_yield_empty() {
        assert!(aggregate_yes_no(&c(&[("The", 0.6), ("I", 0.3)])).is_empty());
        assert_eq!(answer_class("yessir"), None);
    }

    proptest! {
        #[test]
        fn mass_never_exceeds_one(
            ps in proptest::collection::vec(0.0f64..1.0, 1..6),
            which in proptest::collection::vec(0u8..3, 6),
        ) {
            let tokens = ["YES", " no", "other"];
            let cands: Vec<(String, f64)> = ps
                .iter()
                .enumerate()
                .map(|(i, p)| (format!("{}{}", " ".repeat(i), tokens[which[i] as usize]), *p))
                .collect();
            let m = aggregate_yes_no(&cands);
            let total: f64 = m.values().sum();
            prop_assert!(total <= 1.0 + 1e-9);
            for v in m.values() {
                prop_assert!((0.0..=1.0).contains(v));
            }
        }
    }
}
