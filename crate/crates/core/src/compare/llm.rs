use std::sync::{Arc, OnceLock};

use regex::Regex;

use super::{Comparator, CompareError, DirectionScore};
use crate::corpus::Message;
use crate::gateway::prompts::{completion_text, render_reward, system_prompt, Bindings};
use crate::gateway::{ChatBackend, PromptName, ScoreBackend, NO, YES};

fn render_pair(variant: PromptName, existing: &Message, new: &Message) -> Result<String, CompareError> {
    Ok(variant
        .template()
        .render(&Bindings::new().message("_1", existing).message("_2", new))?)
}

/// UrgentSFT-style comparator: probability mass on YES for "is `new` more
/// urgent than `existing`?".
pub struct LogprobComparator {
    backend: Arc<dyn ChatBackend>,
    variant: PromptName,
}

impl LogprobComparator {
    pub fn new(backend: Arc<dyn ChatBackend>) -> Self {
        Self::with_variant(backend, PromptName::UrgentSft)
    }

    pub fn with_variant(backend: Arc<dyn ChatBackend>, variant: PromptName) -> Self {
        Self { backend, variant }
    }
}

impl Comparator for LogprobComparator {
    fn identity(&self) -> String {
        format!("logprob:{}:{}", self.backend.identity(), self.variant)
    }

    fn score_directed(&self, existing: &Message, new: &Message) -> Result<DirectionScore, CompareError> {
        let prompt = render_pair(self.variant, existing, new)?;
        let result = self.backend.complete(system_prompt(), &prompt, true)?;
        // YES when reported; otherwise the complement of NO.
        let value = match (result.prob(YES), result.prob(NO)) {
            (Some(yes), _) => yes,
            (None, Some(no)) => 1.0 - no,
            (None, None) => return Err(CompareError::UnparseableLogprobs),
        };
        Ok(DirectionScore::probability(value.clamp(0.0, 1.0)).with_raw(result.text))
    }
}

fn answer_regexes() -> &'static (Regex, Regex) {
    static RE: OnceLock<(Regex, Regex)> = OnceLock::new();
    RE.get_or_init(|| {
        (
            Regex::new(r"\b(YES|NO)\b").unwrap(),
            Regex::new(r"(?i)\b(yes|no)\b").unwrap(),
        )
    })
}

/// Final YES/NO in free text: the last upper-case `YES`/`NO` word, falling
/// back to the last case-insensitive match.
pub fn parse_final_answer(text: &str) -> Option<bool> {
    let (upper, any) = answer_regexes();
    let last = upper.find_iter(text).last().or_else(|| any.find_iter(text).last())?;
    Some(last.as_str().eq_ignore_ascii_case("yes"))
}

/// Reasoning-model comparator: 1.0 for a final YES, 0.0 for NO.
pub struct ReasoningComparator {
    backend: Arc<dyn ChatBackend>,
}

impl ReasoningComparator {
    pub fn new(backend: Arc<dyn ChatBackend>) -> Self {
        Self { backend }
    }
}

impl Comparator for ReasoningComparator {
    fn identity(&self) -> String {
        format!("reasoning:{}:{}", self.backend.identity(), PromptName::UrgentSft)
    }

    fn score_directed(&self, existing: &Message, new: &Message) -> Result<DirectionScore, CompareError> {
        let prompt = render_pair(PromptName::UrgentSft, existing, new)?;
        let result = self.backend.complete(system_prompt(), &prompt, false)?;
        match parse_final_answer(&result.text) {
            Some(true) => Ok(DirectionScore::probability(1.0).with_raw(result.text)),
            Some(false) => Ok(DirectionScore::probability(0.0).with_raw(result.text)),
            None => Err(CompareError::UnparseableAnswer(result.text)),
        }
    }
}

/// UrgentReward-style comparator: the reward for `new` as the completion of
/// the "write a more urgent message" prompt built around `existing`.
pub struct RewardComparator {
    backend: Arc<dyn ScoreBackend>,
}

impl RewardComparator {
    pub fn new(backend: Arc<dyn ScoreBackend>) -> Self {
        Self { backend }
    }
}

impl Comparator for RewardComparator {
    fn identity(&self) -> String {
        format!("reward:{}:{}", self.backend.identity(), PromptName::UrgentReward)
    }

    fn score_directed(&self, existing: &Message, new: &Message) -> Result<DirectionScore, CompareError> {
        let prompt = render_reward(existing, false);
        let score = self.backend.score(&prompt, &completion_text(new))?;
        if !score.is_finite() {
            return Err(CompareError::BadScore(score.to_string()));
        }
        Ok(DirectionScore::reward(score))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn final_answer_parsing() {
        assert_eq!(parse_final_answer("...therefore YES"), Some(true));
        assert_eq!(parse_final_answer("NO"), Some(false));
        assert_eq!(parse_final_answer("I said no at first, but YES"), Some(true));
        assert_eq!(parse_final_answer("Is it? YES. Final answer: NO"), Some(false));
        assert_eq!(parse_final_answer("answer: yes"), Some(true));
        assert_eq!(parse_final_answer("NOTE: YESTERDAY"), None);
        assert_eq!(parse_final_answer(""), None);
    }
}
