use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pmr_core::annotate::{auto_label_corpus_with, KeywordClassifier, LlmClassifier, ResponseClassifier};
use pmr_core::compare::{
    CacheStore, CachedComparator, Comparator, ComparisonOutcome, LogprobComparator, NoisyOracle, ReasoningComparator,
    RewardComparator,
};
use pmr_core::corpus::{filter_ordinal, load_corpus, load_messages, write_corpus, LabeledMessage, UrgencyLabel};
use pmr_core::gateway::HttpGateway;
use pmr_core::metrics::{
    agreement, bias_strata, evaluate_pairs, expected_t_ndcg, intrinsic_report, ndcg_at_k, t_ndcg_at_k, Annotation,
    BiasReport, BiasScheme, ExpectedTNdcg,
};
use pmr_core::pairs::{
    assemble_inbox, build_eval_pairs, build_eval_pairs_stratified, build_triplets, export_reward, export_sft,
    DifficultyQuotas, EvalPair, InboxSpec, Triplet,
};
use pmr_core::rank::{run_tournament_with, RankOptions, TournamentResult};
use serde::Serialize;

use crate::config::{preset_spec, ClassifierKind, ComparatorKind, RunConfig};
use crate::error::CliError;
use crate::report::{self, read_json, read_jsonl, Report};

#[derive(Debug, Parser)]
#[command(name = "pmr", version, about = "Rank patient portal messages by medical urgency")]
pub struct Cli {
    /// TOML run configuration; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a corpus file and summarize it.
    LoadValidate(LoadArgs),
    /// Label messages from their clinician replies.
    AutoLabel(AutoLabelArgs),
    /// Sample cross-level evaluation pairs.
    BuildPairs(BuildPairsArgs),
    /// Build (anchor, more urgent, less urgent) training triplets.
    BuildTriplets(BuildTripletsArgs),
    /// Write the four-per-triplet YES/NO fine-tuning records.
    ExportSft(ExportArgs),
    /// Write forward and inverse chosen/rejected preference records.
    ExportReward(ExportArgs),
    /// Sample an inbox with a fixed per-level composition.
    AssembleInbox(InboxArgs),
    /// Rank an inbox with an all-pairs tournament.
    RankInbox(RankArgs),
    /// Pairwise accuracy overall and per difficulty.
    EvaluateIntrinsic(IntrinsicArgs),
    /// NDCG and T-NDCG of a ranked inbox.
    EvaluateExtrinsic(ExtrinsicArgs),
    /// Chi-square test of correctness against patient demographics.
    BiasReport(BiasArgs),
    /// Percent agreement and Cohen's kappa between two annotators.
    Agreement(AgreementArgs),
    /// Run every stage end to end and write a manifest.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Clone, Copy, Default, ValueEnum)]
pub enum Format {
    #[default]
    Json,
    Table,
}

#[derive(Debug, Args)]
pub struct LoadArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Accept records without labels.
    #[arg(long)]
    pub unlabeled: bool,
}

#[derive(Debug, Args)]
pub struct AutoLabelArgs {
    #[arg(long)]
    pub messages: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub classifier: Option<ClassifierKind>,
    #[arg(long)]
    pub parallelism: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BuildPairsArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub count: Option<usize>,
    /// Per-difficulty quotas as EASY,MEDIUM,HARD.
    #[arg(long, value_parser = parse_quotas)]
    pub stratified: Option<DifficultyQuotas>,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_quotas(s: &str) -> Result<DifficultyQuotas, String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse().map_err(|_| format!("bad quota {p:?}")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [easy, medium, hard] => Ok(DifficultyQuotas { easy, medium, hard }),
        _ => Err("expected EASY,MEDIUM,HARD".into()),
    }
}

#[derive(Debug, Args)]
pub struct BuildTripletsArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Maximum times one message may serve as a partner.
    #[arg(long)]
    pub cap: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub triplets: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InboxArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Preset name (uniform, real) or a JSON inbox spec file.
    #[arg(long)]
    pub spec: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ComparatorArgs {
    #[arg(long, value_enum)]
    pub comparator: Option<ComparatorKind>,
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[arg(long)]
    pub parallelism: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    /// Inbox JSONL; labels are needed only by the oracle.
    #[arg(long)]
    pub inbox: PathBuf,
    #[command(flatten)]
    pub comparator: ComparatorArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IntrinsicArgs {
    #[arg(long)]
    pub pairs: PathBuf,
    #[command(flatten)]
    pub comparator: ComparatorArgs,
    /// Also write per-pair outcomes (input to bias-report).
    #[arg(long)]
    pub outcomes_out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct ExtrinsicArgs {
    /// Tournament result JSON from rank-inbox.
    #[arg(long)]
    pub ranking: PathBuf,
    /// Labeled inbox JSONL with the gold levels.
    #[arg(long)]
    pub inbox: PathBuf,
    #[arg(long = "k")]
    pub ks: Vec<usize>,
    /// JSONL of {"id", "label"} class predictions, for expected T-NDCG.
    #[arg(long)]
    pub predicted: Option<PathBuf>,
    #[arg(long)]
    pub shuffles: Option<usize>,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SchemeArg {
    Age,
    Gender,
    Both,
}

#[derive(Debug, Args)]
pub struct BiasArgs {
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub outcomes: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    pub scheme: SchemeArg,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct AgreementArgs {
    /// JSONL of {"pair_id", "annotator_id", "choice"}.
    #[arg(long)]
    pub annotations: PathBuf,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[command(flatten)]
    pub comparator: ComparatorArgs,
}

pub struct Ctx {
    pub cfg: RunConfig,
    pub hash: String,
}

impl Ctx {
    pub fn new(cfg: RunConfig) -> Self {
        let hash = cfg.hash();
        Self { cfg, hash }
    }

    pub fn report<T: Serialize>(&self, name: &'static str, comparator: Option<String>, body: T) -> Report<T> {
        Report::new(name, self.cfg.seed, &self.hash, comparator, body)
    }
}

/// Folds comparator flags into the config so the report hash covers them.
pub fn apply_comparator_args(cfg: &mut RunConfig, args: &ComparatorArgs) {
    if let Some(k) = args.comparator {
        cfg.comparator.kind = k;
    }
    if let Some(c) = &args.cache {
        cfg.comparator.cache = Some(c.clone());
    }
    if let Some(p) = args.parallelism {
        cfg.comparator.parallelism = p;
    }
}

fn gateway(cfg: &RunConfig) -> Result<Arc<HttpGateway>, CliError> {
    let endpoint = cfg
        .endpoint
        .clone()
        .ok_or_else(|| CliError::Config("an [endpoint] section is required for remote backends".into()))?
        .with_env_overrides();
    HttpGateway::new(endpoint)
        .map(Arc::new)
        .map_err(|e| CliError::from_gateway("config", e))
}

pub fn build_comparator(cfg: &RunConfig, labeled: &[LabeledMessage]) -> Result<Box<dyn Comparator>, CliError> {
    let c = &cfg.comparator;
    let base: Box<dyn Comparator> = match c.kind {
        ComparatorKind::Oracle => Box::new(
            NoisyOracle::new(labeled, &c.flip_by_gap()?, cfg.seed)
                .and_then(|o| o.with_margin(c.margin))
                .map_err(|e| CliError::Config(e.to_string()))?,
        ),
        ComparatorKind::Logprob => Box::new(LogprobComparator::new(gateway(cfg)?)),
        ComparatorKind::Reasoning => Box::new(ReasoningComparator::new(gateway(cfg)?)),
        ComparatorKind::Reward => Box::new(RewardComparator::new(gateway(cfg)?)),
    };
    match &c.cache {
        None => Ok(base),
        Some(path) => {
            let store =
                CacheStore::open(path).map_err(|e| CliError::data("cache", format!("{}: {e}", path.display())))?;
            let r = store.load_report();
            if r.invalid_lines > 0 {
                log::warn!("cache {}: dropped {} invalid line(s)", path.display(), r.invalid_lines);
            }
            Ok(Box::new(CachedComparator::new(base, Arc::new(store))))
        }
    }
}

pub fn rank_options(cfg: &RunConfig) -> RankOptions {
    RankOptions {
        parallelism: cfg.comparator.parallelism.max(1),
    }
}

fn require(path: Option<&PathBuf>, what: &str) -> Result<PathBuf, CliError> {
    path.cloned()
        .ok_or_else(|| CliError::Config(format!("no {what} given (flag or config)")))
}

pub fn load_ordinal(stage: &'static str, path: &Path) -> Result<Vec<LabeledMessage>, CliError> {
    let corpus = load_corpus(path).map_err(|e| CliError::data(stage, e))?;
    let (kept, summary) = filter_ordinal(corpus);
    if summary.removed_unclear + summary.removed_supportive_care > 0 {
        log::info!("{}: dropped {summary:?}", path.display());
    }
    Ok(kept)
}

pub fn label_counts<'a>(labels: impl Iterator<Item = &'a UrgencyLabel>) -> BTreeMap<UrgencyLabel, usize> {
    let mut m = BTreeMap::new();
    for l in labels {
        *m.entry(*l).or_insert(0) += 1;
    }
    m
}

pub fn classifier(cfg: &RunConfig) -> Result<Box<dyn ResponseClassifier>, CliError> {
    Ok(match cfg.classifier {
        ClassifierKind::Keyword => Box::new(KeywordClassifier::new()),
        ClassifierKind::Llm => Box::new(LlmClassifier::new(gateway(cfg)?)),
    })
}

fn print(text: &str) {
    print!("{text}");
}

pub fn run(command: Command, mut cfg: RunConfig) -> Result<(), CliError> {
    match command {
        Command::LoadValidate(a) => {
            let path = require(a.corpus.as_ref().or(cfg.corpus.as_ref()), "corpus")?;
            let ctx = Ctx::new(cfg);
            if a.unlabeled {
                let msgs = load_messages(&path).map_err(|e| CliError::data("load", e))?;
                #[derive(Serialize)]
                struct Body {
                    records: usize,
                    with_ehr: usize,
                    with_response: usize,
                }
                let body = Body {
                    records: msgs.len(),
                    with_ehr: msgs.iter().filter(|m| m.ehr.is_some()).count(),
                    with_response: msgs.iter().filter(|m| m.clinician_response.is_some()).count(),
                };
                print(&ctx.report("load-validate", None, body).to_json());
            } else {
                let corpus = load_corpus(&path).map_err(|e| CliError::data("load", e))?;
                #[derive(Serialize)]
                struct Body {
                    records: usize,
                    by_label: BTreeMap<UrgencyLabel, usize>,
                    with_ehr: usize,
                    with_response: usize,
                    ordinal: usize,
                }
                let body = Body {
                    records: corpus.len(),
                    by_label: label_counts(corpus.iter().map(|m| &m.label)),
                    with_ehr: corpus.iter().filter(|m| m.message.ehr.is_some()).count(),
                    with_response: corpus.iter().filter(|m| m.message.clinician_response.is_some()).count(),
                    ordinal: corpus.iter().filter(|m| m.label.is_ordinal()).count(),
                };
                print(&ctx.report("load-validate", None, body).to_json());
            }
        }
        Command::AutoLabel(a) => {
            if let Some(c) = a.classifier {
                cfg.classifier = c;
            }
            let path = require(a.messages.as_ref().or(cfg.messages.as_ref()), "messages")?;
            let msgs = load_messages(&path).map_err(|e| CliError::data("load", e))?;
            let cls = classifier(&cfg)?;
            let out = auto_label_corpus_with(&msgs, cls.as_ref(), a.parallelism.unwrap_or(1))
                .map_err(|e| CliError::from_annotate("auto-label", e))?;
            write_corpus(&a.out, &out.labeled).map_err(|e| CliError::data("auto-label", e))?;
            #[derive(Serialize)]
            struct Body {
                labeled: usize,
                by_label: BTreeMap<UrgencyLabel, usize>,
                missing_response: Vec<String>,
            }
            let body = Body {
                labeled: out.labeled.len(),
                by_label: label_counts(out.labeled.iter().map(|m| &m.label)),
                missing_response: out.missing.iter().map(|e| e.to_string()).collect(),
            };
            print(&Ctx::new(cfg).report("auto-label", None, body).to_json());
        }
        Command::BuildPairs(a) => {
            let path = require(a.corpus.as_ref().or(cfg.corpus.as_ref()), "corpus")?;
            if let Some(c) = a.count {
                cfg.pairs.count = c;
            }
            if a.stratified.is_some() {
                cfg.pairs.stratified = a.stratified;
            }
            let corpus = load_ordinal("load", &path)?;
            let pairs = make_pairs(&cfg, &corpus)?;
            let sha = report::write_jsonl("pairs", &a.out, &pairs)?;
            let body = pairs_body(&pairs, sha);
            print(&Ctx::new(cfg).report("build-pairs", None, body).to_json());
        }
        Command::BuildTriplets(a) => {
            let path = require(a.corpus.as_ref().or(cfg.corpus.as_ref()), "corpus")?;
            if let Some(c) = a.cap {
                cfg.triplets.max_uses = c;
            }
            let corpus = load_ordinal("load", &path)?;
            let triplets = make_triplets(&cfg, &corpus)?;
            let sha = report::write_jsonl("triplets", &a.out, &triplets)?;
            #[derive(Serialize)]
            struct Body {
                triplets: usize,
                sha256: String,
            }
            let body = Body {
                triplets: triplets.len(),
                sha256: sha,
            };
            print(&Ctx::new(cfg).report("build-triplets", None, body).to_json());
        }
        Command::ExportSft(a) => {
            let triplets: Vec<Triplet> = read_jsonl("export", &a.triplets)?;
            let s = export_sft(&triplets, &a.out).map_err(|e| CliError::data("export", e))?;
            print(&Ctx::new(cfg).report("export-sft", None, s).to_json());
        }
        Command::ExportReward(a) => {
            let triplets: Vec<Triplet> = read_jsonl("export", &a.triplets)?;
            let s = export_reward(&triplets, &a.out).map_err(|e| CliError::data("export", e))?;
            print(&Ctx::new(cfg).report("export-reward", None, s).to_json());
        }
        Command::AssembleInbox(a) => {
            let path = require(a.corpus.as_ref().or(cfg.corpus.as_ref()), "corpus")?;
            let spec = match &a.spec {
                None => cfg.inbox.spec(inbox_seed(&cfg))?,
                Some(s) if Path::new(s).is_file() => {
                    read_json::<InboxSpec>("config", Path::new(s)).map_err(|e| CliError::Config(e.to_string()))?
                }
                Some(s) => preset_spec(s, inbox_seed(&cfg))?,
            };
            cfg.inbox.counts = Some(UrgencyLabel::ORDINAL.map(|l| spec.counts.get(&l).copied().unwrap_or(0)));
            let corpus = load_ordinal("load", &path)?;
            let inbox = assemble_inbox(&corpus, &spec).map_err(|e| CliError::data("inbox", e))?;
            let sha = report::write_jsonl("inbox", &a.out, &inbox)?;
            #[derive(Serialize)]
            struct Body {
                size: usize,
                spec: InboxSpec,
                sha256: String,
            }
            let body = Body {
                size: inbox.len(),
                spec,
                sha256: sha,
            };
            print(&Ctx::new(cfg).report("assemble-inbox", None, body).to_json());
        }
        Command::RankInbox(a) => {
            apply_comparator_args(&mut cfg, &a.comparator);
            let messages = load_messages(&a.inbox).map_err(|e| CliError::data("load", e))?;
            let labeled = if cfg.comparator.kind == ComparatorKind::Oracle {
                load_corpus(&a.inbox).map_err(|e| CliError::data("load", e))?
            } else {
                Vec::new()
            };
            let comparator = build_comparator(&cfg, &labeled)?;
            let result = run_tournament_with(&messages, comparator.as_ref(), &rank_options(&cfg))
                .map_err(|e| CliError::from_rank("rank", e))?;
            let sha = report::write_json("rank", &a.out, &result)?;
            let body = ranking_body(&result, sha);
            print(
                &Ctx::new(cfg)
                    .report("rank-inbox", Some(comparator.identity()), body)
                    .to_json(),
            );
        }
        Command::EvaluateIntrinsic(a) => {
            apply_comparator_args(&mut cfg, &a.comparator);
            let pairs: Vec<EvalPair> = read_jsonl("load", &a.pairs)?;
            let labeled: Vec<LabeledMessage> = pairs.iter().flat_map(|p| [p.a.clone(), p.b.clone()]).collect();
            let comparator = build_comparator(&cfg, &labeled)?;
            let outcomes = evaluate_pairs(&pairs, comparator.as_ref(), cfg.comparator.parallelism)
                .map_err(|e| CliError::from_metrics("intrinsic", e))?;
            let r = intrinsic_report(&pairs, &outcomes).map_err(|e| CliError::from_metrics("intrinsic", e))?;
            if let Some(p) = &a.outcomes_out {
                report::write_jsonl("intrinsic", p, &outcomes)?;
            }
            match a.format {
                Format::Table => print(&report::intrinsic_table(&r)),
                Format::Json => print(
                    &Ctx::new(cfg)
                        .report("evaluate-intrinsic", Some(comparator.identity()), r)
                        .to_json(),
                ),
            }
        }
        Command::EvaluateExtrinsic(a) => {
            if !a.ks.is_empty() {
                cfg.metrics.ks = a.ks.clone();
            }
            if let Some(s) = a.shuffles {
                cfg.metrics.shuffles = s;
            }
            let result: TournamentResult = read_json("load", &a.ranking)?;
            let inbox = load_corpus(&a.inbox).map_err(|e| CliError::data("load", e))?;
            let predicted = match &a.predicted {
                None => None,
                Some(p) => Some(read_jsonl::<Prediction>("load", p)?),
            };
            let body = extrinsic(&cfg, &result.ranking, &inbox, predicted.as_deref())?;
            match a.format {
                Format::Table => print(&report::extrinsic_table(
                    &body.per_k.iter().map(|(k, v)| (*k, v.t_ndcg)).collect::<Vec<_>>(),
                )),
                Format::Json => print(&Ctx::new(cfg).report("evaluate-extrinsic", None, body).to_json()),
            }
        }
        Command::BiasReport(a) => {
            let pairs: Vec<EvalPair> = read_jsonl("load", &a.pairs)?;
            let outcomes: Vec<ComparisonOutcome> = read_jsonl("load", &a.outcomes)?;
            let schemes: &[BiasScheme] = match a.scheme {
                SchemeArg::Age => &[BiasScheme::AgeOrdering],
                SchemeArg::Gender => &[BiasScheme::GenderOfRoles],
                SchemeArg::Both => &[BiasScheme::AgeOrdering, BiasScheme::GenderOfRoles],
            };
            let body = bias(&pairs, &outcomes, schemes)?;
            match a.format {
                Format::Table => {
                    for r in body.values().flatten() {
                        print(&format!("[{:?}]\n{}", r.scheme, report::bias_table(r)));
                    }
                }
                Format::Json => print(&Ctx::new(cfg).report("bias-report", None, body).to_json()),
            }
        }
        Command::Agreement(a) => {
            let anns: Vec<Annotation> = read_jsonl("load", &a.annotations)?;
            let r = agreement(&anns).map_err(|e| CliError::from_metrics("agreement", e))?;
            print(&Ctx::new(cfg).report("agreement", None, r).to_json());
        }
        Command::Pipeline(a) => {
            if let Some(c) = &a.corpus {
                cfg.corpus = Some(c.clone());
            }
            if let Some(d) = &a.out_dir {
                cfg.out_dir = d.clone();
            }
            apply_comparator_args(&mut cfg, &a.comparator);
            let manifest = crate::pipeline::run_pipeline(&Ctx::new(cfg))?;
            print(&manifest);
        }
    }
    Ok(())
}

pub fn inbox_seed(cfg: &RunConfig) -> u64 {
    pmr_core::util::derive_seed(cfg.seed, &["inbox"])
}

pub fn make_pairs(cfg: &RunConfig, corpus: &[LabeledMessage]) -> Result<Vec<EvalPair>, CliError> {
    let seed = pmr_core::util::derive_seed(cfg.seed, &["pairs"]);
    match cfg.pairs.stratified {
        Some(q) => build_eval_pairs_stratified(corpus, q, seed),
        None => build_eval_pairs(corpus, cfg.pairs.count, seed),
    }
    .map_err(|e| CliError::data("pairs", e))
}

pub fn make_triplets(cfg: &RunConfig, corpus: &[LabeledMessage]) -> Result<Vec<Triplet>, CliError> {
    let seed = pmr_core::util::derive_seed(cfg.seed, &["triplets"]);
    build_triplets(corpus, cfg.triplets.max_uses, seed).map_err(|e| CliError::data("triplets", e))
}

#[derive(Debug, Serialize)]
pub struct PairsBody {
    pub pairs: usize,
    pub per_difficulty: BTreeMap<pmr_core::Difficulty, usize>,
    pub sha256: String,
}

pub fn pairs_body(pairs: &[EvalPair], sha256: String) -> PairsBody {
    let mut per_difficulty = BTreeMap::new();
    for p in pairs {
        *per_difficulty.entry(p.difficulty).or_insert(0) += 1;
    }
    PairsBody {
        pairs: pairs.len(),
        per_difficulty,
        sha256,
    }
}

#[derive(Debug, Serialize)]
pub struct RankingBody {
    pub size: usize,
    pub ranking: Vec<String>,
    pub comparisons_made: usize,
    pub cache_hits: usize,
    pub ties_encountered: usize,
    pub sha256: String,
}

pub fn ranking_body(r: &TournamentResult, sha256: String) -> RankingBody {
    RankingBody {
        size: r.ranking.len(),
        ranking: r.ranking.clone(),
        comparisons_made: r.comparisons_made,
        cache_hits: r.cache_hits,
        ties_encountered: r.ties_encountered,
        sha256,
    }
}

#[derive(Debug, Clone, serde::Deserialize)]
pub struct Prediction {
    pub id: String,
    pub label: UrgencyLabel,
}

#[derive(Debug, Serialize)]
pub struct KMetrics {
    pub ndcg: f64,
    pub t_ndcg: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expected_t_ndcg: Option<ExpectedTNdcg>,
}

#[derive(Debug, Serialize)]
pub struct ExtrinsicBody {
    pub size: usize,
    pub per_k: BTreeMap<usize, KMetrics>,
    /// Requested cutoffs larger than the inbox.
    pub skipped_ks: Vec<usize>,
}

pub fn extrinsic(
    cfg: &RunConfig,
    ranking: &[String],
    inbox: &[LabeledMessage],
    predicted: Option<&[Prediction]>,
) -> Result<ExtrinsicBody, CliError> {
    let labels: BTreeMap<String, UrgencyLabel> = inbox.iter().map(|m| (m.id().to_string(), m.label)).collect();
    let classes: Option<Vec<Vec<String>>> = predicted.map(|p| {
        let mut by: BTreeMap<u8, Vec<String>> = BTreeMap::new();
        for x in p {
            if let Some(l) = x.label.level() {
                by.entry(l).or_default().push(x.id.clone());
            }
        }
        by.into_values().collect()
    });
    let m = &cfg.metrics.relevance;
    let mut per_k = BTreeMap::new();
    let mut skipped_ks = Vec::new();
    let err = |e| CliError::from_metrics("extrinsic", e);
    for &k in &cfg.metrics.ks {
        if k == 0 || k > ranking.len() {
            skipped_ks.push(k);
            continue;
        }
        let expected = match &classes {
            Some(c) => Some(
                expected_t_ndcg(
                    c,
                    &labels,
                    m,
                    k,
                    cfg.metrics.shuffles,
                    pmr_core::util::derive_seed(cfg.seed, &["shuffle"]),
                )
                .map_err(err)?,
            ),
            None => None,
        };
        per_k.insert(
            k,
            KMetrics {
                ndcg: ndcg_at_k(ranking, &labels, m, k).map_err(err)?,
                t_ndcg: t_ndcg_at_k(ranking, &labels, m, k).map_err(err)?,
                expected_t_ndcg: expected,
            },
        );
    }
    Ok(ExtrinsicBody {
        size: ranking.len(),
        per_k,
        skipped_ks,
    })
}

/// Per-scheme reports; `None` when no pair carries the needed demographics.
pub fn bias(
    pairs: &[EvalPair],
    outcomes: &[ComparisonOutcome],
    schemes: &[BiasScheme],
) -> Result<BTreeMap<String, Option<BiasReport>>, CliError> {
    let mut out = BTreeMap::new();
    for &s in schemes {
        let name = match s {
            BiasScheme::AgeOrdering => "age_ordering",
            BiasScheme::GenderOfRoles => "gender_of_roles",
        };
        let r = match bias_strata(pairs, outcomes, s) {
            Ok(r) => Some(r),
            Err(pmr_core::metrics::MetricsError::NoStrata) => None,
            Err(e) => return Err(CliError::from_metrics("bias", e)),
        };
        out.insert(name.to_string(), r);
    }
    Ok(out)
}
