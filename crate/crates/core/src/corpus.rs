//! Message data model and line-delimited JSON corpus ingestion.
//!
//! A corpus file holds one record per line:
//!
//! ```json
//! {"id":"m1","text":"...","label":"L3","source":"synth","ehr":{...},"clinician_response":"..."}
//! ```
//!
//! Loading is all-or-nothing: the first malformed line rejects the whole file
//! and the error carries its 1-based line number.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_AGE: u32 = 150;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: unknown label token {token:?}")]
    BadLabel { line: usize, token: String },
    #[error("line {line}: record has no label")]
    MissingLabel { line: usize },
    #[error("duplicate message id {0:?}")]
    DuplicateId(String),
    #[error("line {line}: message {id:?} has empty text")]
    EmptyMessage { line: usize, id: String },
    #[error("line {line}: age {age} exceeds {MAX_AGE}")]
    BadAge { line: usize, age: u32 },
}

/// Where a message came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Reddit,
    Synth,
    Real,
    SyntheticTest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gender {
    Male,
    Female,
    Other,
    Unknown,
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gender::Male => "male",
            Gender::Female => "female",
            Gender::Other => "other",
            Gender::Unknown => "unknown",
        })
    }
}

/// Structured chart context attached to a message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EhrRecord {
    #[serde(default)]
    pub problem_list: Vec<String>,
    #[serde(default)]
    pub recent_diagnoses: Vec<String>,
    #[serde(default)]
    pub active_medications: Vec<String>,
    pub age: u32,
    pub gender: Gender,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ehr: Option<EhrRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clinician_response: Option<String>,
    pub source: Source,
}

impl Message {
    pub fn new(id: impl Into<String>, text: impl Into<String>, source: Source) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            ehr: None,
            clinician_response: None,
            source,
        }
    }

    pub fn with_ehr(mut self, ehr: EhrRecord) -> Self {
        self.ehr = Some(ehr);
        self
    }

    pub fn with_response(mut self, response: impl Into<String>) -> Self {
        self.clinician_response = Some(response.into());
        self
    }
}

/// Six ordinal urgency tiers (L1 most urgent) plus two filtration sentinels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum UrgencyLabel {
    L1,
    L2,
    L3,
    L4,
    L5,
    L6,
    Unclear,
    SupportiveCare,
}

impl UrgencyLabel {
    pub const ORDINAL: [UrgencyLabel; 6] = [
        UrgencyLabel::L1,
        UrgencyLabel::L2,
        UrgencyLabel::L3,
        UrgencyLabel::L4,
        UrgencyLabel::L5,
        UrgencyLabel::L6,
    ];

    pub const ALL: [UrgencyLabel; 8] = [
        UrgencyLabel::L1,
        UrgencyLabel::L2,
        UrgencyLabel::L3,
        UrgencyLabel::L4,
        UrgencyLabel::L5,
        UrgencyLabel::L6,
        UrgencyLabel::Unclear,
        UrgencyLabel::SupportiveCare,
    ];

    /// Numeric level 1..=6, or `None` for the sentinels.
    pub fn level(self) -> Option<u8> {
        match self {
            UrgencyLabel::L1 => Some(1),
            UrgencyLabel::L2 => Some(2),
            UrgencyLabel::L3 => Some(3),
            UrgencyLabel::L4 => Some(4),
            UrgencyLabel::L5 => Some(5),
            UrgencyLabel::L6 => Some(6),
            UrgencyLabel::Unclear | UrgencyLabel::SupportiveCare => None,
        }
    }

    pub fn from_level(level: u8) -> Option<Self> {
        match level {
            1..=6 => Some(Self::ORDINAL[usize::from(level - 1)]),
            _ => None,
        }
    }

    pub fn is_ordinal(self) -> bool {
        self.level().is_some()
    }

    pub fn token(self) -> &'static str {
        match self {
            UrgencyLabel::L1 => "L1",
            UrgencyLabel::L2 => "L2",
            UrgencyLabel::L3 => "L3",
            UrgencyLabel::L4 => "L4",
            UrgencyLabel::L5 => "L5",
            UrgencyLabel::L6 => "L6",
            UrgencyLabel::Unclear => "UNCLEAR",
            UrgencyLabel::SupportiveCare => "SUPPORTIVE_CARE",
        }
    }
}

impl fmt::Display for UrgencyLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown urgency label {0:?}")]
pub struct ParseLabelError(pub String);

impl FromStr for UrgencyLabel {
    type Err = ParseLabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        UrgencyLabel::ALL
            .into_iter()
            .find(|l| l.token() == s)
            .ok_or_else(|| ParseLabelError(s.to_string()))
    }
}

impl Serialize for UrgencyLabel {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.token())
    }
}

impl<'de> Deserialize<'de> for UrgencyLabel {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let token = String::deserialize(deserializer)?;
        token.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledMessage {
    #[serde(flatten)]
    pub message: Message,
    pub label: UrgencyLabel,
}

impl LabeledMessage {
    pub fn new(message: Message, label: UrgencyLabel) -> Self {
        Self { message, label }
    }

    pub fn id(&self) -> &str {
        &self.message.id
    }

    /// Numeric level; panics on a sentinel label, which never reaches the
    /// pair pipeline after [`filter_ordinal`].
    pub fn level(&self) -> u8 {
        self.label
            .level()
            .unwrap_or_else(|| panic!("message {} carries sentinel label {}", self.id(), self.label))
    }
}

// Raw on-disk shape; label stays a string so a bad token maps to BadLabel
// rather than a generic parse error.
#[derive(Deserialize)]
struct RawRecord {
    id: String,
    text: String,
    #[serde(default)]
    label: Option<String>,
    #[serde(default)]
    ehr: Option<EhrRecord>,
    #[serde(default)]
    clinician_response: Option<String>,
    source: Source,
}

fn read_records(path: &Path) -> Result<Vec<(usize, RawRecord)>, CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    parse_records(
        BufReader::new(File::open(path).map_err(io_err)?),
        &path.display().to_string(),
    )
}

fn parse_records(reader: impl BufRead, origin: &str) -> Result<Vec<(usize, RawRecord)>, CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: origin.to_string(),
        source,
    };
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        if raw.text.trim().is_empty() {
            return Err(CorpusError::EmptyMessage {
                line: line_no,
                id: raw.id,
            });
        }
        if let Some(ehr) = &raw.ehr {
            if ehr.age > MAX_AGE {
                return Err(CorpusError::BadAge {
                    line: line_no,
                    age: ehr.age,
                });
            }
        }
        if !seen.insert(raw.id.clone()) {
            return Err(CorpusError::DuplicateId(raw.id));
        }
        records.push((line_no, raw));
    }
    Ok(records)
}

impl RawRecord {
    fn into_message(self) -> (Message, Option<String>) {
        (
            Message {
                id: self.id,
                text: self.text,
                ehr: self.ehr,
                clinician_response: self.clinician_response,
                source: self.source,
            },
            self.label,
        )
    }
}

fn into_labeled(records: Vec<(usize, RawRecord)>) -> Result<Vec<LabeledMessage>, CorpusError> {
    records
        .into_iter()
        .map(|(line, raw)| {
            let (message, label) = raw.into_message();
            let token = label.ok_or(CorpusError::MissingLabel { line })?;
            let label = token.parse().map_err(|_| CorpusError::BadLabel { line, token })?;
            Ok(LabeledMessage { message, label })
        })
        .collect()
}

/// Loads and validates a labeled corpus file.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<LabeledMessage>, CorpusError> {
    into_labeled(read_records(path.as_ref())?)
}

/// Same validation as [`load_corpus`] over in-memory JSONL.
pub fn parse_corpus(jsonl: &str) -> Result<Vec<LabeledMessage>, CorpusError> {
    into_labeled(parse_records(jsonl.as_bytes(), "<memory>")?)
}

/// Loads messages ignoring any `label` field, for the auto-labelling stage.
pub fn load_messages(path: impl AsRef<Path>) -> Result<Vec<Message>, CorpusError> {
    Ok(read_records(path.as_ref())?
        .into_iter()
        .map(|(_, raw)| raw.into_message().0)
        .collect())
}

pub fn parse_messages(jsonl: &str) -> Result<Vec<Message>, CorpusError> {
    Ok(parse_records(jsonl.as_bytes(), "<memory>")?
        .into_iter()
        .map(|(_, raw)| raw.into_message().0)
        .collect())
}

pub fn write_corpus(path: impl AsRef<Path>, corpus: &[LabeledMessage]) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    for record in corpus {
        let line = serde_json::to_string(record).expect("corpus records always serialize");
        writeln!(out, "{line}").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct FilterSummary {
    pub kept: usize,
    pub removed_unclear: usize,
    pub removed_supportive_care: usize,
}

/// Keeps only L1..L6 records, preserving order.
pub fn filter_ordinal(corpus: Vec<LabeledMessage>) -> (Vec<LabeledMessage>, FilterSummary) {
    let mut summary = FilterSummary::default();
    let kept: Vec<_> = corpus
        .into_iter()
        .filter(|m| match m.label {
            UrgencyLabel::Unclear => {
                summary.removed_unclear += 1;
                false
            }
            UrgencyLabel::SupportiveCare => {
                summary.removed_supportive_care += 1;
                false
            }
            _ => true,
        })
        .collect();
    summary.kept = kept.len();
    (kept, summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    fn lm(id: &str, label: UrgencyLabel) -> LabeledMessage {
        LabeledMessage::new(Message::new(id, "text", Source::SyntheticTest), label)
    }

    #[test]
    fn loads_valid_file() {
        let f = write_lines(&[
            r#"{"id":"a","text":"chest pain","label":"L1","source":"reddit"}"#,
            r#"{"id":"b","text":"rash","label":"L5","source":"synth","ehr":{"problem_list":["asthma"],"recent_diagnoses":[],"active_medications":["albuterol"],"age":34,"gender":"female"}}"#,
        ]);
        let corpus = load_corpus(f.path()).unwrap();
        assert_eq!(corpus.len(), 2);
        assert_eq!(corpus[1].label, UrgencyLabel::L5);
        assert_eq!(corpus[1].message.ehr.as_ref().unwrap().gender, Gender::Female);
    }

    #[test]
    fn bad_label_reports_line() {
        let f = write_lines(&[
            r#"{"id":"a","text":"x","label":"L1","source":"reddit"}"#,
            r#"{"id":"b","text":"y","label":"L2","source":"reddit"}"#,
            r#"{"id":"c","text":"z","label":"L7","source":"reddit"}"#,
        ]);
        match load_corpus(f.path()) {
            Err(CorpusError::BadLabel { line, token }) => {
                assert_eq!(line, 3);
                assert_eq!(token, "L7");
            }
            other => panic!("expected BadLabel, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_id_rejected() {
        let f = write_lines(&[
            r#"{"id":"a","text":"x","label":"L1","source":"reddit"}"#,
            r#"{"id":"a","text":"y","label":"L2","source":"reddit"}"#,
        ]);
        assert!(matches!(load_corpus(f.path()), Err(CorpusError::DuplicateId(id)) if id == "a"));
    }

    #[test]
    fn whitespace_text_is_empty() {
        let f = write_lines(&[r#"{"id":"a","text":"  \n ","label":"L1","source":"reddit"}"#]);
        assert!(matches!(
            load_corpus(f.path()),
            Err(CorpusError::EmptyMessage { line: 1, .. })
        ));
    }

    #[test]
    fn age_over_limit_rejected() {
        let f =
            write_lines(&[r#"{"id":"a","text":"x","label":"L1","source":"real","ehr":{"age":151,"gender":"male"}}"#]);
        assert!(matches!(
            load_corpus(f.path()),
            Err(CorpusError::BadAge { age: 151, .. })
        ));
    }

    #[test]
    fn malformed_json_reports_line() {
        let f = write_lines(&[r#"{"id":"a","text":"x","label":"L1","source":"reddit"}"#, "{not json"]);
        assert!(matches!(
            load_corpus(f.path()),
            Err(CorpusError::Malformed { line: 2, .. })
        ));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_corpus("/nonexistent/corpus.jsonl"),
            Err(CorpusError::Io { .. })
        ));
    }

    #[test]
    fn load_messages_ignores_labels() {
        let f = write_lines(&[r#"{"id":"a","text":"x","source":"reddit","clinician_response":"rest"}"#]);
        let msgs = load_messages(f.path()).unwrap();
        assert_eq!(msgs[0].clinician_response.as_deref(), Some("rest"));
        assert!(matches!(
            load_corpus(f.path()),
            Err(CorpusError::MissingLabel { line: 1 })
        ));
    }

    #[test]
    fn filter_drops_sentinels_in_order() {
        let (kept, summary) = filter_ordinal(vec![
            lm("a", UrgencyLabel::L2),
            lm("b", UrgencyLabel::Unclear),
            lm("c", UrgencyLabel::L5),
        ]);
        let ids: Vec<_> = kept.iter().map(|m| m.id()).collect();
        assert_eq!(ids, ["a", "c"]);
        assert_eq!(summary.removed_unclear, 1);

        let (kept, summary) = filter_ordinal(vec![lm("s", UrgencyLabel::SupportiveCare)]);
        assert!(kept.is_empty());
        assert_eq!(summary.removed_supportive_care, 1);

        assert!(filter_ordinal(Vec::new()).0.is_empty());
    }

    #[test]
    fn label_tokens_round_trip() {
        for label in UrgencyLabel::ALL {
            assert_eq!(label.token().parse::<UrgencyLabel>().unwrap(), label);
        }
        assert!("l1".parse::<UrgencyLabel>().is_err());
        assert_eq!(UrgencyLabel::from_level(3), Some(UrgencyLabel::L3));
        assert_eq!(UrgencyLabel::from_level(7), None);
    }
}
