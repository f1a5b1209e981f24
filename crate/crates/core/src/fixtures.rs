//! Small bundled corpus for demos, tests and benchmarks.
//!
//! Thirty synthetic messages, five per level, each with a clinician reply
//! and most with an EHR snapshot. `MESSAGES_JSONL` holds the same messages
//! unlabeled plus three extra replies that do not yield an ordinal label.

use crate::corpus::{parse_corpus, parse_messages, LabeledMessage, Message};

pub const CORPUS_JSONL: &str = include_str!("../fixtures/corpus.jsonl");
pub const MESSAGES_JSONL: &str = include_str!("../fixtures/messages.jsonl");

pub fn fixture_corpus() -> Vec<LabeledMessage> {
    parse_corpus(CORPUS_JSONL).expect("bundled corpus is valid")
}

pub fn fixture_messages() -> Vec<Message> {
    parse_messages(MESSAGES_JSONL).expect("bundled messages are valid")
}
