//! Label derivation: response classification, two-pass judge filtration,
//! and sextile labels from win-rates.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, OnceLock};

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{LabeledMessage, Message, UrgencyLabel};
use crate::gateway::prompts::{system_prompt, Bindings};
use crate::gateway::{ChatBackend, GatewayError, PromptName};
use crate::pairs::Side;
use crate::util::write_jsonl;

#[derive(Debug, Error)]
pub enum AnnotateError {
    #[error("message {0:?} has no clinician response")]
    MissingResponse(String),
    #[error("pair {0:?} / {1:?} has equal labels")]
    EqualLabels(String, String),
    #[error("message {0:?} has a non-ordinal label")]
    NonOrdinal(String),
    #[error("sextile labels need at least 6 messages, got {0}")]
    TooFewMessages(usize),
    #[error("winrate for {0:?} is not finite")]
    NonFiniteWinrate(String),
    #[error("duplicate message id {0:?}")]
    DuplicateId(String),
    #[error("could not parse {what} from model output {text:?}")]
    Unparseable { what: &'static str, text: String },
    #[error(transparent)]
    Backend(#[from] GatewayError),
    #[error("failed to build worker pool: {0}")]
    Pool(String),
    #[error("audit log write failed: {0}")]
    Io(#[from] std::io::Error),
}

/// Maps a clinician reply (and the message it answers) to an urgency label.
pub trait ResponseClassifier: Send + Sync {
    fn classify(&self, response: &str, message: &str) -> Result<UrgencyLabel, AnnotateError>;
}

impl<T: ResponseClassifier + ?Sized> ResponseClassifier for &T {
    fn classify(&self, response: &str, message: &str) -> Result<UrgencyLabel, AnnotateError> {
        (**self).classify(response, message)
    }
}

impl<T: ResponseClassifier + ?Sized> ResponseClassifier for Arc<T> {
    fn classify(&self, response: &str, message: &str) -> Result<UrgencyLabel, AnnotateError> {
        (**self).classify(response, message)
    }
}

/// Offline rule-based classifier over the clinician reply.
///
/// Rules are tried from most to least urgent, with supportive care checked
/// before the routine-visit rule, so "rest at home until urgent care opens"
/// is still L2. Replies matching nothing are UNCLEAR.
pub struct KeywordClassifier {
    rules: Vec<(UrgencyLabel, Regex)>,
}

const KEYWORD_TABLE: &[(UrgencyLabel, &[&str])] = &[
    (
        UrgencyLabel::L1,
        &[
            r"emergency (room|department)",
            r"\b(ER|ED)\b",
            r"call 911",
            r"\b911\b",
            r"ambulance",
            r"go to (the )?hospital (now|immediately|right away)",
        ],
    ),
    (
        UrgencyLabel::L2,
        &[
            r"urgent care",
            r"same[- ]day",
            r"seen today",
            r"\btoday\b",
            r"walk-in clinic",
        ],
    ),
    (
        UrgencyLabel::L3,
        &[
            r"(next|within) (1|one|2|two|3|three|1-3|1 to 3) ?(-|to )?(day|days)",
            r"next (day|couple of days|few days)",
            r"in the next day or two",
            r"within (24|48|72) hours",
            r"appointment (soon|this week)",
            r"see (a|your) (doctor|provider|clinician) soon",
        ],
    ),
    (
        UrgencyLabel::SupportiveCare,
        &[
            r"physical therap",
            r"physiotherap",
            r"counsel(l)?ing",
            r"therapy sessions?",
            r"mental health (services|sessions|support)",
        ],
    ),
    (
        UrgencyLabel::L4,
        &[
            r"routine (appointment|visit|check)",
            r"next (few|couple of) weeks",
            r"next (scheduled )?visit",
            r"follow[- ]up with your (doctor|provider|pcp)",
            r"non-urgent appointment",
            r"when you (can|get a chance)",
        ],
    ),
    (
        UrgencyLabel::L5,
        &[
            r"self[- ]care",
            r"\brest\b",
            r"hydrat",
            r"over[- ]the[- ]counter",
            r"at home",
            r"home remed",
            r"\bice\b",
        ],
    ),
    (
        UrgencyLabel::L6,
        &[
            r"nothing to worry",
            r"no (further|additional) (steps|action|treatment)",
            r"no action (is )?needed",
            r"(results|readings|numbers|that) (are|is|look|looks) normal",
            r"perfectly normal",
        ],
    ),
];

impl KeywordClassifier {
    pub fn new() -> Self {
        let rules = KEYWORD_TABLE
            .iter()
            .map(|(label, pats)| {
                let re = Regex::new(&format!("(?i)(?:{})", pats.join("|"))).expect("keyword table compiles");
                (*label, re)
            })
            .collect();
        Self { rules }
    }

    pub fn classify_response(&self, response: &str) -> UrgencyLabel {
        self.rules
            .iter()
            .find(|(_, re)| re.is_match(response))
            .map(|(l, _)| *l)
            .unwrap_or(UrgencyLabel::Unclear)
    }
}

impl Default for KeywordClassifier {
    fn default() -> Self {
        Self::new()
    }
}

impl ResponseClassifier for KeywordClassifier {
    fn classify(&self, response: &str, _message: &str) -> Result<UrgencyLabel, AnnotateError> {
        Ok(self.classify_response(response))
    }
}

/// Remote classifier using the response-classifier prompt.
pub struct LlmClassifier {
    backend: Arc<dyn ChatBackend>,
}

impl LlmClassifier {
    pub fn new(backend: Arc<dyn ChatBackend>) -> Self {
        Self { backend }
    }
}

/// First label token in model output; `L1`..`L6`, `UNCLEAR` or `SUPPORTIVE_CARE`
/// (space or underscore).
pub fn parse_label(text: &str) -> Option<UrgencyLabel> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"(?i)\b(L[1-6]|UNCLEAR|SUPPORTIVE[ _]CARE)\b").unwrap());
    let m = re.find(text)?;
    m.as_str().to_ascii_uppercase().replace(' ', "_").parse().ok()
}

impl ResponseClassifier for LlmClassifier {
    fn classify(&self, response: &str, message: &str) -> Result<UrgencyLabel, AnnotateError> {
        let msg = Message::new("", message, crate::corpus::Source::Real).with_response(response);
        let prompt = PromptName::ResponseClassifier
            .template()
            .render(&Bindings::new().message("", &msg))?;
        let out = self.backend.complete(system_prompt(), &prompt, false)?;
        parse_label(&out.text).ok_or(AnnotateError::Unparseable {
            what: "urgency label",
            text: out.text,
        })
    }
}

fn pool_map<T: Sync, R: Send>(
    items: &[T],
    parallelism: usize,
    f: impl Fn(&T) -> R + Sync + Send,
) -> Result<Vec<R>, AnnotateError> {
    if parallelism <= 1 {
        return Ok(items.iter().map(f).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| AnnotateError::Pool(e.to_string()))?;
    Ok(pool.install(|| items.par_iter().map(f).collect()))
}

#[derive(Debug, Default)]
pub struct AutoLabelOutput {
    /// One entry per message that had a response, in input order.
    pub labeled: Vec<LabeledMessage>,
    /// Messages skipped for lacking a clinician response.
    pub missing: Vec<AnnotateError>,
}

/// Labels each message from its clinician response. Sentinel labels are kept.
pub fn auto_label_corpus<C: ResponseClassifier + ?Sized>(
    messages: &[Message],
    classifier: &C,
) -> Result<AutoLabelOutput, AnnotateError> {
    auto_label_corpus_with(messages, classifier, 1)
}

pub fn auto_label_corpus_with<C: ResponseClassifier + ?Sized>(
    messages: &[Message],
    classifier: &C,
    parallelism: usize,
) -> Result<AutoLabelOutput, AnnotateError> {
    let results = pool_map(messages, parallelism, |m| match &m.clinician_response {
        None => Err(AnnotateError::MissingResponse(m.id.clone())),
        Some(r) => classifier
            .classify(r, &m.text)
            .map(|label| LabeledMessage::new(m.clone(), label)),
    })?;
    let mut out = AutoLabelOutput::default();
    for r in results {
        match r {
            Ok(l) => out.labeled.push(l),
            Err(e @ AnnotateError::MissingResponse(_)) => out.missing.push(e),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    AMoreUrgent,
    BMoreUrgent,
    Unclear,
}

impl Verdict {
    pub fn side(self) -> Option<Side> {
        match self {
            Verdict::AMoreUrgent => Some(Side::A),
            Verdict::BMoreUrgent => Some(Side::B),
            Verdict::Unclear => None,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Verdict::AMoreUrgent => Verdict::BMoreUrgent,
            Verdict::BMoreUrgent => Verdict::AMoreUrgent,
            Verdict::Unclear => Verdict::Unclear,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JudgeVariant {
    V1,
    V2,
}

pub trait PairJudge: Send + Sync {
    fn judge(&self, a: &LabeledMessage, b: &LabeledMessage, variant: JudgeVariant) -> Result<Verdict, AnnotateError>;
}

/// Offline judge: classifies both clinician replies and prefers the more
/// urgent one. Missing replies, sentinel labels and equal levels are UNCLEAR.
/// Both variants give the same answer.
pub struct ClassifierJudge<C> {
    classifier: C,
}

impl<C: ResponseClassifier> ClassifierJudge<C> {
    pub fn new(classifier: C) -> Self {
        Self { classifier }
    }
}

impl<C: ResponseClassifier> PairJudge for ClassifierJudge<C> {
    fn judge(&self, a: &LabeledMessage, b: &LabeledMessage, _variant: JudgeVariant) -> Result<Verdict, AnnotateError> {
        let level = |m: &LabeledMessage| -> Result<Option<u8>, AnnotateError> {
            match &m.message.clinician_response {
                None => Ok(None),
                Some(r) => Ok(self.classifier.classify(r, &m.message.text)?.level()),
            }
        };
        Ok(match (level(a)?, level(b)?) {
            (Some(la), Some(lb)) if la < lb => Verdict::AMoreUrgent,
            (Some(la), Some(lb)) if lb < la => Verdict::BMoreUrgent,
            _ => Verdict::Unclear,
        })
    }
}

/// Remote judge. Variant v2 uses the second template and presents `b` as
/// patient 1, so the two passes see opposite presentation orders.
pub struct LlmJudge {
    backend: Arc<dyn ChatBackend>,
}

impl LlmJudge {
    pub fn new(backend: Arc<dyn ChatBackend>) -> Self {
        Self { backend }
    }
}

/// `PATIENT 1`, `PATIENT 2` or `UNCLEAR`, taking the first occurrence.
pub fn parse_patient_choice(text: &str) -> Option<Verdict> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"(?i)\b(PATIENT\s*1|PATIENT\s*2|UNCLEAR)\b").unwrap());
    let m = re.find(text)?.as_str().to_ascii_uppercase();
    Some(if m.ends_with('1') {
        Verdict::AMoreUrgent
    } else if m.ends_with('2') {
        Verdict::BMoreUrgent
    } else {
        Verdict::Unclear
    })
}

impl PairJudge for LlmJudge {
    fn judge(&self, a: &LabeledMessage, b: &LabeledMessage, variant: JudgeVariant) -> Result<Verdict, AnnotateError> {
        let (name, first, second) = match variant {
            JudgeVariant::V1 => (PromptName::JudgeV1, a, b),
            JudgeVariant::V2 => (PromptName::JudgeV2, b, a),
        };
        let prompt = name.template().render(
            &Bindings::new()
                .message("_1", &first.message)
                .message("_2", &second.message),
        )?;
        let out = self.backend.complete(system_prompt(), &prompt, false)?;
        let v = parse_patient_choice(&out.text).ok_or(AnnotateError::Unparseable {
            what: "patient choice",
            text: out.text,
        })?;
        Ok(match variant {
            JudgeVariant::V1 => v,
            JudgeVariant::V2 => v.flipped(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgedPair {
    pub a_id: String,
    pub b_id: String,
    pub auto_label: Side,
    pub verdict_v1: Verdict,
    pub verdict_v2: Verdict,
    pub accepted: bool,
}

impl JudgedPair {
    pub fn new(a_id: String, b_id: String, auto_label: Side, verdict_v1: Verdict, verdict_v2: Verdict) -> Self {
        let accepted = verdict_v1.side() == Some(auto_label) && verdict_v2.side() == Some(auto_label);
        Self {
            a_id,
            b_id,
            auto_label,
            verdict_v1,
            verdict_v2,
            accepted,
        }
    }
}

fn auto_side(a: &LabeledMessage, b: &LabeledMessage) -> Result<Side, AnnotateError> {
    let la = a
        .label
        .level()
        .ok_or_else(|| AnnotateError::NonOrdinal(a.id().into()))?;
    let lb = b
        .label
        .level()
        .ok_or_else(|| AnnotateError::NonOrdinal(b.id().into()))?;
    match la.cmp(&lb) {
        std::cmp::Ordering::Less => Ok(Side::A),
        std::cmp::Ordering::Greater => Ok(Side::B),
        std::cmp::Ordering::Equal => Err(AnnotateError::EqualLabels(a.id().into(), b.id().into())),
    }
}

/// Runs both judge passes on every pair. A pair is accepted only when both
/// verdicts confirm the label-derived ordering.
pub fn filter_pairs<J: PairJudge + ?Sized>(
    pairs: &[(LabeledMessage, LabeledMessage)],
    judge: &J,
) -> Result<Vec<JudgedPair>, AnnotateError> {
    filter_pairs_with(pairs, judge, 1)
}

pub fn filter_pairs_with<J: PairJudge + ?Sized>(
    pairs: &[(LabeledMessage, LabeledMessage)],
    judge: &J,
    parallelism: usize,
) -> Result<Vec<JudgedPair>, AnnotateError> {
    // Validate everything before spending judge calls.
    let sides = pairs
        .iter()
        .map(|(a, b)| auto_side(a, b))
        .collect::<Result<Vec<_>, _>>()?;
    let verdicts = pool_map(pairs, parallelism, |(a, b)| {
        Ok::<_, AnnotateError>((
            judge.judge(a, b, JudgeVariant::V1)?,
            judge.judge(a, b, JudgeVariant::V2)?,
        ))
    })?;
    pairs
        .iter()
        .zip(sides)
        .zip(verdicts)
        .map(|(((a, b), side), v)| {
            let (v1, v2) = v?;
            Ok(JudgedPair::new(a.id().into(), b.id().into(), side, v1, v2))
        })
        .collect()
}

pub fn write_audit_log(path: impl AsRef<Path>, judged: &[JudgedPair]) -> Result<usize, AnnotateError> {
    Ok(write_jsonl(path.as_ref(), judged)?)
}

/// Splits an inbox sorted by win-rate (descending, ties by ascending id)
/// into six contiguous blocks labelled L1..L6. When `n` is not a multiple of
/// six the first `n % 6` blocks get one extra message.
pub fn sextile_labels_from_winrate(inbox: &[(String, f64)]) -> Result<BTreeMap<String, UrgencyLabel>, AnnotateError> {
    let n = inbox.len();
    if n < 6 {
        return Err(AnnotateError::TooFewMessages(n));
    }
    if let Some((id, _)) = inbox.iter().find(|(_, w)| !w.is_finite()) {
        return Err(AnnotateError::NonFiniteWinrate(id.clone()));
    }
    let mut sorted: Vec<&(String, f64)> = inbox.iter().collect();
    sorted.sort_by(|x, y| y.1.total_cmp(&x.1).then_with(|| x.0.cmp(&y.0)));
    let mut seen = std::collections::HashSet::new();
    if let Some((id, _)) = inbox.iter().find(|(id, _)| !seen.insert(id.as_str())) {
        return Err(AnnotateError::DuplicateId(id.clone()));
    }
    let (base, extra) = (n / 6, n % 6);
    let mut out = BTreeMap::new();
    let mut it = sorted.into_iter();
    for (block, label) in UrgencyLabel::ORDINAL.into_iter().enumerate() {
        let size = base + usize::from(block < extra);
        for (id, _) in it.by_ref().take(size) {
            out.insert(id.clone(), label);
        }
    }
    Ok(out)
}

/// Sample inclusion: adult patient describing an acute problem.
///
/// Age comes from the EHR when present; otherwise `adult_from_text` decides.
pub struct InclusionCriteria {
    pub min_age: u32,
    pub adult_from_text: Box<dyn Fn(&str) -> bool + Send + Sync>,
    pub acute_onset: Box<dyn Fn(&str) -> bool + Send + Sync>,
}

fn stated_age(text: &str) -> Option<u32> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        Regex::new(r"(?i)\b(?:i am|i'm|im)\s+(?:a\s+)?(\d{1,3})\s*(?:y/?o|years?\s+old|yrs?\b|[mf]\b)?|\b(\d{1,3})\s*(?:[mf]|y/?o)\b")
            .unwrap()
    });
    let caps = re.captures(text)?;
    caps.get(1).or_else(|| caps.get(2))?.as_str().parse().ok()
}

/// Default text age test: a stated age of 18 or more counts as adult; a
/// message with no stated age is given the benefit of the doubt.
pub fn adult_by_stated_age(text: &str) -> bool {
    stated_age(text).is_none_or(|a| a >= 18)
}

/// Default acute-onset test: rejects messages that only describe long-running
/// or chronic problems.
pub fn acute_by_keywords(text: &str) -> bool {
    static RE: OnceLock<(Regex, Regex)> = OnceLock::new();
    let (acute, chronic) = RE.get_or_init(|| {
        (
            Regex::new(r"(?i)\b(suddenly|sudden|today|yesterday|last night|this morning|just|started|since|hours?|new|began|woke up)\b").unwrap(),
            Regex::new(r"(?i)\b(for (years|months)|chronic|long[- ]term|always had|ongoing for)\b").unwrap(),
        )
    });
    acute.is_match(text) || !chronic.is_match(text)
}

impl Default for InclusionCriteria {
    fn default() -> Self {
        Self {
            min_age: 18,
            adult_from_text: Box::new(adult_by_stated_age),
            acute_onset: Box::new(acute_by_keywords),
        }
    }
}

impl InclusionCriteria {
    pub fn includes(&self, message: &Message) -> bool {
        let adult = match &message.ehr {
            Some(e) => e.age >= self.min_age,
            None => (self.adult_from_text)(&message.text),
        };
        adult && (self.acute_onset)(&message.text)
    }

    /// Splits messages into (included, excluded ids).
    pub fn apply(&self, messages: Vec<Message>) -> (Vec<Message>, Vec<String>) {
        let mut excluded = Vec::new();
        let kept = messages
            .into_iter()
            .filter_map(|m| {
                if self.includes(&m) {
                    Some(m)
                } else {
                    excluded.push(m.id);
                    None
                }
            })
            .collect();
        (kept, excluded)
    }
}
