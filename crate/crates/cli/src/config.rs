use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use pmr_core::gateway::EndpointConfig;
use pmr_core::metrics::{RelevanceMapping, DEFAULT_SHUFFLES};
use pmr_core::pairs::{DifficultyQuotas, InboxSpec, DEFAULT_MAX_USES};
use pmr_core::util::sha256_hex;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ComparatorKind {
    /// Label-driven oracle with optional gap-dependent noise.
    Oracle,
    /// YES/NO token probabilities from a chat model.
    Logprob,
    /// Final YES/NO of a reasoning chat model.
    Reasoning,
    /// Reward-model scores.
    Reward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    Keyword,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ComparatorConfig {
    pub kind: ComparatorKind,
    /// JSONL score cache; results do not depend on it.
    pub cache: Option<PathBuf>,
    pub parallelism: usize,
    /// Oracle flip probability per level gap, keyed "1".."5".
    pub flip: BTreeMap<String, f64>,
    pub margin: f64,
}

impl Default for ComparatorConfig {
    fn default() -> Self {
        Self {
            kind: ComparatorKind::Oracle,
            cache: None,
            parallelism: 1,
            flip: BTreeMap::new(),
            margin: pmr_core::compare::DEFAULT_MARGIN,
        }
    }
}

impl ComparatorConfig {
    pub fn flip_by_gap(&self) -> Result<BTreeMap<u8, f64>, CliError> {
        self.flip
            .iter()
            .map(|(k, v)| {
                k.parse::<u8>()
                    .map(|g| (g, *v))
                    .map_err(|_| CliError::Config(format!("comparator.flip key {k:?} is not a level gap")))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PairsConfig {
    pub count: usize,
    /// Per-difficulty quotas; overrides `count` when set.
    pub stratified: Option<DifficultyQuotas>,
}

impl Default for PairsConfig {
    fn default() -> Self {
        Self {
            count: 500,
            stratified: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TripletConfig {
    pub max_uses: usize,
}

impl Default for TripletConfig {
    fn default() -> Self {
        Self {
            max_uses: DEFAULT_MAX_USES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InboxConfig {
    /// "uniform" (5 per level) or "real" (5, 3, 5, 7, 7, 4).
    pub preset: String,
    /// Explicit L1..L6 counts; overrides the preset.
    pub counts: Option<[usize; 6]>,
}

impl Default for InboxConfig {
    fn default() -> Self {
        Self {
            preset: "uniform".into(),
            counts: None,
        }
    }
}

impl InboxConfig {
    pub fn spec(&self, seed: u64) -> Result<InboxSpec, CliError> {
        if let Some(c) = self.counts {
            return Ok(InboxSpec::from_counts(c, seed));
        }
        preset_spec(&self.preset, seed)
    }
}

pub fn preset_spec(name: &str, seed: u64) -> Result<InboxSpec, CliError> {
    match name {
        "uniform" | "reddit" | "synth" => Ok(InboxSpec::uniform(seed)),
        "real" => Ok(InboxSpec::real(seed)),
        other => Err(CliError::Config(format!("unknown inbox preset {other:?}"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub ks: Vec<usize>,
    pub shuffles: usize,
    pub relevance: RelevanceMapping,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            ks: vec![10, 30],
            shuffles: DEFAULT_SHUFFLES,
            relevance: RelevanceMapping::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Labeled corpus (JSONL).
    pub corpus: Option<PathBuf>,
    /// Unlabeled messages with clinician replies, for auto-labelling.
    pub messages: Option<PathBuf>,
    pub classifier: ClassifierKind,
    pub out_dir: PathBuf,
    pub comparator: ComparatorConfig,
    /// Required for the remote comparators and classifier. The API key is
    /// read from the environment only.
    pub endpoint: Option<EndpointConfig>,
    pub pairs: PairsConfig,
    pub triplets: TripletConfig,
    pub inbox: InboxConfig,
    pub metrics: MetricsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            corpus: None,
            messages: None,
            classifier: ClassifierKind::Keyword,
            out_dir: PathBuf::from("pmr-out"),
            comparator: ComparatorConfig::default(),
            endpoint: None,
            pairs: PairsConfig::default(),
            triplets: TripletConfig::default(),
            inbox: InboxConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Hash of every setting that can change results. Output location and
    /// cache path are left out, so identical runs into different
    /// directories share a hash.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        c.comparator.cache = None;
        sha256_hex(serde_json::to_string(&c).expect("config serializes").as_bytes())
    }
}
