use std::collections::BTreeMap;

use pmr_core::annotate::auto_label_corpus;
use pmr_core::corpus::{filter_ordinal, load_corpus, load_messages, LabeledMessage};
use pmr_core::metrics::{evaluate_pairs, intrinsic_report, BiasScheme, IntrinsicReport};
use pmr_core::pairs::{assemble_inbox, reward_records, sft_records};
use pmr_core::rank::run_tournament_with;
use pmr_core::Message;
use serde::Serialize;

use crate::commands::{
    bias, build_comparator, classifier, extrinsic, inbox_seed, label_counts, make_pairs, make_triplets, pairs_body,
    rank_options, ranking_body, Ctx,
};
use crate::error::CliError;
use crate::report::{write_json, write_jsonl};

#[derive(Debug, Serialize)]
struct Summary {
    corpus_size: usize,
    dropped: pmr_core::corpus::FilterSummary,
    by_label: BTreeMap<pmr_core::UrgencyLabel, usize>,
    pairs: usize,
    triplets: usize,
    inbox_size: usize,
    intrinsic_accuracy: f64,
    t_ndcg: BTreeMap<usize, f64>,
}

#[derive(Debug, Serialize)]
struct Manifest {
    /// File name to sha256, relative to the output directory.
    artifacts: BTreeMap<&'static str, String>,
    summary: Summary,
}

/// Runs every stage into `cfg.out_dir` and returns the manifest report.
/// Output bytes depend only on the config and input files.
pub fn run_pipeline(ctx: &Ctx) -> Result<String, CliError> {
    let cfg = &ctx.cfg;
    let dir = &cfg.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| CliError::data("load", format!("{}: {e}", dir.display())))?;
    let mut artifacts = BTreeMap::new();

    let raw = match (&cfg.corpus, &cfg.messages) {
        (Some(p), _) => load_corpus(p).map_err(|e| CliError::data("load", e))?,
        (None, Some(p)) => {
            let msgs = load_messages(p).map_err(|e| CliError::data("load", e))?;
            let out = auto_label_corpus(&msgs, classifier(cfg)?.as_ref())
                .map_err(|e| CliError::from_annotate("auto-label", e))?;
            if !out.missing.is_empty() {
                log::warn!(
                    "{} message(s) without a clinician reply were skipped",
                    out.missing.len()
                );
            }
            artifacts.insert(
                "auto_labeled.jsonl",
                write_jsonl("auto-label", &dir.join("auto_labeled.jsonl"), &out.labeled)?,
            );
            out.labeled
        }
        (None, None) => return Err(CliError::Config("pipeline needs a corpus or messages file".into())),
    };
    let (corpus, dropped) = filter_ordinal(raw);
    artifacts.insert("corpus.jsonl", write_jsonl("load", &dir.join("corpus.jsonl"), &corpus)?);
    log::info!("loaded {} ordinal messages", corpus.len());

    let pairs = make_pairs(cfg, &corpus)?;
    artifacts.insert(
        "eval_pairs.jsonl",
        write_jsonl("pairs", &dir.join("eval_pairs.jsonl"), &pairs)?,
    );

    let triplets = make_triplets(cfg, &corpus)?;
    artifacts.insert(
        "triplets.jsonl",
        write_jsonl("triplets", &dir.join("triplets.jsonl"), &triplets)?,
    );
    artifacts.insert(
        "sft.jsonl",
        write_jsonl("export", &dir.join("sft.jsonl"), &sft_records(&triplets))?,
    );
    artifacts.insert(
        "reward.jsonl",
        write_jsonl("export", &dir.join("reward.jsonl"), &reward_records(&triplets))?,
    );

    let spec = cfg.inbox.spec(inbox_seed(cfg))?;
    let inbox = assemble_inbox(&corpus, &spec).map_err(|e| CliError::data("inbox", e))?;
    artifacts.insert("inbox.jsonl", write_jsonl("inbox", &dir.join("inbox.jsonl"), &inbox)?);

    let comparator = build_comparator(cfg, &corpus)?;
    let identity = Some(comparator.identity());
    let messages: Vec<Message> = inbox.iter().map(|m| m.message.clone()).collect();
    let result = run_tournament_with(&messages, comparator.as_ref(), &rank_options(cfg))
        .map_err(|e| CliError::from_rank("rank", e))?;
    let sha = write_json("rank", &dir.join("ranking.json"), &result)?;
    let body = ranking_body(&result, sha.clone());
    artifacts.insert("ranking.json", sha);
    write_json(
        "rank",
        &dir.join("ranking_report.json"),
        &ctx.report("rank-inbox", identity.clone(), body),
    )
    .map(|s| artifacts.insert("ranking_report.json", s))?;

    let outcomes = evaluate_pairs(&pairs, comparator.as_ref(), cfg.comparator.parallelism)
        .map_err(|e| CliError::from_metrics("intrinsic", e))?;
    artifacts.insert(
        "outcomes.jsonl",
        write_jsonl("intrinsic", &dir.join("outcomes.jsonl"), &outcomes)?,
    );
    let intrinsic: IntrinsicReport =
        intrinsic_report(&pairs, &outcomes).map_err(|e| CliError::from_metrics("intrinsic", e))?;
    let accuracy = intrinsic.overall_accuracy;
    let r = ctx.report("evaluate-intrinsic", identity.clone(), intrinsic);
    artifacts.insert(
        "intrinsic.json",
        write_json("intrinsic", &dir.join("intrinsic.json"), &r)?,
    );

    let ext = extrinsic(cfg, &result.ranking, &inbox, None)?;
    let t_ndcg = ext.per_k.iter().map(|(k, v)| (*k, v.t_ndcg)).collect();
    let r = ctx.report("evaluate-extrinsic", identity.clone(), ext);
    artifacts.insert(
        "extrinsic.json",
        write_json("extrinsic", &dir.join("extrinsic.json"), &r)?,
    );

    let b = bias(&pairs, &outcomes, &[BiasScheme::AgeOrdering, BiasScheme::GenderOfRoles])?;
    let r = ctx.report("bias-report", identity.clone(), b);
    artifacts.insert("bias.json", write_json("bias", &dir.join("bias.json"), &r)?);

    let summary = Summary {
        corpus_size: corpus.len(),
        dropped,
        by_label: label_counts(corpus.iter().map(|m: &LabeledMessage| &m.label)),
        pairs: pairs_body(&pairs, String::new()).pairs,
        triplets: triplets.len(),
        inbox_size: inbox.len(),
        intrinsic_accuracy: accuracy,
        t_ndcg,
    };
    let manifest = ctx
        .report("pipeline", identity, Manifest { artifacts, summary })
        .to_json();
    crate::report::write_file("manifest", &dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}
