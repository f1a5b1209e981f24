//! Acceptance checks for the full system. Prints one PASS/FAIL line per
//! criterion and exits non-zero if any fail.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use pmr_core::compare::{CacheStore, CachedComparator, Counting, LogprobComparator, NoisyOracle};
use pmr_core::corpus::{LabeledMessage, Message, Source, UrgencyLabel};
use pmr_core::gateway::mock::{MockResponse, MockServer};
use pmr_core::gateway::prompts::completion_text;
use pmr_core::gateway::{ChatBackend, EndpointConfig, GatewayError, HttpGateway, ScoreBackend};
use pmr_core::metrics::{
    agreement, chi_square_test, evaluate_pairs, expected_t_ndcg, intrinsic_report, t_ndcg_at_k, Annotation,
    RelevanceMapping,
};
use pmr_core::pairs::{build_eval_pairs, build_triplets, export_reward, export_sft, reward_records, sft_records};
use pmr_core::rank::{insert_incremental, run_tournament, run_tournament_with, RankOptions};
use pmr_core::{fixtures, Comparator, ComparisonOutcome, Difficulty, DirectionScore, Winner};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {{
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    }};
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn labels_of(corpus: &[LabeledMessage]) -> BTreeMap<String, UrgencyLabel> {
    corpus.iter().map(|m| (m.id().to_string(), m.label)).collect()
}

fn synthetic(per_level: usize) -> Vec<LabeledMessage> {
    UrgencyLabel::ORDINAL
        .iter()
        .flat_map(|&l| {
            (0..per_level).map(move |i| {
                LabeledMessage::new(
                    Message::new(
                        format!("{}-{i:03}", l.token()),
                        format!("message {i} at {}", l.token()),
                        Source::SyntheticTest,
                    ),
                    l,
                )
            })
        })
        .collect()
}

fn dcg(gains: &[f64]) -> f64 {
    gains.iter().enumerate().map(|(i, g)| g / ((i + 2) as f64).log2()).sum()
}

fn perfect_oracle_recovery() -> Check {
    let start = Instant::now();
    let corpus = fixtures::fixture_corpus();
    let oracle = NoisyOracle::perfect(&corpus);
    let msgs: Vec<Message> = corpus.iter().map(|m| m.message.clone()).collect();
    let result = run_tournament(&msgs, &oracle).map_err(|e| e.to_string())?;

    let pairs = build_eval_pairs(&corpus, 375, 1).map_err(|e| e.to_string())?;
    let outcomes = evaluate_pairs(&pairs, &oracle, 1).map_err(|e| e.to_string())?;
    let acc = intrinsic_report(&pairs, &outcomes)
        .map_err(|e| e.to_string())?
        .overall_accuracy;
    ensure!(acc == 1.0, "intrinsic accuracy {acc}");

    let labels = labels_of(&corpus);
    let levels: Vec<u8> = result.ranking.iter().map(|id| labels[id].level().unwrap()).collect();
    ensure!(
        levels.windows(2).all(|w| w[0] <= w[1]),
        "cross-level order broken: {levels:?}"
    );

    // Brute force: 1 - NDCG@30 of the reversed ideal ranking.
    let mapping = RelevanceMapping::default();
    let gains: Vec<f64> = levels
        .iter()
        .rev()
        .map(|&l| 2f64.powi(6 - i32::from(l)) - 1.0)
        .collect();
    let mut ideal = gains.clone();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let expected = 1.0 - dcg(&gains) / dcg(&ideal);
    let t = t_ndcg_at_k(&result.ranking, &labels, &mapping, 30).map_err(|e| e.to_string())?;
    ensure!(close(t, expected, 1e-9), "T-NDCG@30 {t} vs brute force {expected}");
    ensure!(close(t, 0.5192992857463741, 1e-12), "T-NDCG@30 {t} vs pinned value");
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 5.0, "took {secs:.2}s");
    Ok(format!("accuracy 1.0, T-NDCG@30 = {t:.12}, {secs:.3}s"))
}

fn eta_mechanics() -> Check {
    let mut runner = TestRunner::new(Config {
        cases: 1000,
        rng_seed: proptest::test_runner::RngSeed::Fixed(2),
        failure_persistence: None,
        ..Config::default()
    });
    // A quarter of the cases reuse one value to exercise ties.
    let strategy = (0.0f64..=1.0, 0.0f64..=1.0, 0u8..4);
    runner
        .run(&strategy, |(p, q, tie)| {
            let q = if tie == 0 { p } else { q };
            let o = ComparisonOutcome::from_scores(
                "a",
                "b",
                DirectionScore::probability(p),
                DirectionScore::probability(q),
            )
            .unwrap();
            prop_assert!(o.eta.abs() <= 1.0);
            match p.partial_cmp(&q).unwrap() {
                std::cmp::Ordering::Greater => prop_assert!(o.winner == Winner::B && o.eta > 0.0),
                std::cmp::Ordering::Less => prop_assert!(o.winner == Winner::A && o.eta < 0.0),
                std::cmp::Ordering::Equal => prop_assert!(o.winner == Winner::Tie && o.eta == 0.0),
            }
            let s = ComparisonOutcome::from_scores(
                "b",
                "a",
                DirectionScore::probability(q),
                DirectionScore::probability(p),
            )
            .unwrap();
            prop_assert_eq!(s.eta, -o.eta);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("1000 random probability pairs".into())
}

fn t_ndcg_antisymmetry() -> Check {
    let mut runner = TestRunner::new(Config {
        cases: 10_000,
        rng_seed: proptest::test_runner::RngSeed::Fixed(3),
        failure_persistence: None,
        ..Config::default()
    });
    let mapping = RelevanceMapping::default();
    let strategy = prop::collection::vec(1u8..=6, 2..=40).prop_flat_map(|levels| {
        let n = levels.len();
        (Just(levels), 1..=n)
    });
    runner
        .run(&strategy, |(levels, k)| {
            let ids: Vec<String> = (0..levels.len()).map(|i| format!("m{i}")).collect();
            let labels: BTreeMap<String, UrgencyLabel> = ids
                .iter()
                .zip(&levels)
                .map(|(id, &l)| (id.clone(), UrgencyLabel::from_level(l).unwrap()))
                .collect();
            let rev: Vec<String> = ids.iter().rev().cloned().collect();
            let a = t_ndcg_at_k(&ids, &labels, &mapping, k).unwrap();
            let b = t_ndcg_at_k(&rev, &labels, &mapping, k).unwrap();
            prop_assert!((a + b).abs() <= 1e-12, "{} + {}", a, b);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("10000 random lists of size 2..=40".into())
}

fn expected_t_ndcg_degenerate() -> Check {
    let corpus = fixtures::fixture_corpus();
    let labels = labels_of(&corpus);
    let mapping = RelevanceMapping::default();
    let all: Vec<String> = corpus.iter().map(|m| m.id().to_string()).collect();
    let mut notes = Vec::new();
    for k in [10, 30] {
        let e =
            expected_t_ndcg(std::slice::from_ref(&all), &labels, &mapping, k, 2000, 4).map_err(|e| e.to_string())?;
        ensure!(e.mean.abs() < 0.05, "single class @{k}: mean {}", e.mean);
        notes.push(format!("mean@{k} = {:.4}", e.mean));
    }
    let singletons: Vec<Vec<String>> = all.iter().map(|id| vec![id.clone()]).collect();
    let e = expected_t_ndcg(&singletons, &labels, &mapping, 10, 2000, 4).map_err(|e| e.to_string())?;
    ensure!(e.stddev == 0.0, "singleton stddev {}", e.stddev);
    Ok(format!("{}, singleton stddev 0", notes.join(", ")))
}

fn export_cardinality() -> Check {
    let corpus = synthetic(40);
    let mut triplets = build_triplets(&corpus, 4, 5).map_err(|e| e.to_string())?;
    ensure!(triplets.len() >= 100, "only {} triplets", triplets.len());
    triplets.truncate(100);

    let sft = sft_records(&triplets);
    ensure!(sft.len() == 400, "sft count {}", sft.len());
    let yes = sft.iter().filter(|r| r.completion == "YES").count();
    ensure!(
        yes == 200 && sft.iter().all(|r| r.completion == "YES" || r.completion == "NO"),
        "YES count {yes}"
    );

    let reward = reward_records(&triplets);
    ensure!(reward.len() == 200, "reward count {}", reward.len());
    for (t, r) in triplets.iter().zip(reward.chunks(2)) {
        let more = completion_text(&t.more_urgent.message);
        let less = completion_text(&t.less_urgent.message);
        ensure!(
            r[0].chosen == more && r[0].rejected == less,
            "forward record mispaired for {}",
            t.anchor.id()
        );
        ensure!(
            r[1].chosen == less && r[1].rejected == more,
            "inverse record mispaired for {}",
            t.anchor.id()
        );
        ensure!(r[0].prompt != r[1].prompt, "forward and inverse prompts identical");
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let s = export_sft(&triplets, dir.path().join("sft.jsonl")).map_err(|e| e.to_string())?;
    let r = export_reward(&triplets, dir.path().join("reward.jsonl")).map_err(|e| e.to_string())?;
    ensure!(
        s.records == 400 && r.records == 200,
        "exported {} / {}",
        s.records,
        r.records
    );
    Ok("100 triplets -> 400 SFT (200 YES), 200 reward".into())
}

fn difficulty_monotonicity() -> Check {
    let corpus = synthetic(100);
    let flips: BTreeMap<u8, f64> = [(1, 0.30), (2, 0.20), (3, 0.15), (4, 0.08), (5, 0.04)].into();
    let oracle = NoisyOracle::new(corpus.iter(), &flips, 6).map_err(|e| e.to_string())?;
    let pairs = build_eval_pairs(&corpus, 5000, 6).map_err(|e| e.to_string())?;
    ensure!(pairs.len() == 5000, "{} pairs", pairs.len());
    let outcomes = evaluate_pairs(&pairs, &oracle, 4).map_err(|e| e.to_string())?;
    let r = intrinsic_report(&pairs, &outcomes).map_err(|e| e.to_string())?;
    let d = |x| r.per_difficulty[&x].accuracy.unwrap_or(f64::NAN);
    let (easy, medium, hard) = (d(Difficulty::Easy), d(Difficulty::Medium), d(Difficulty::Hard));
    ensure!(
        easy > medium && medium > hard,
        "easy {easy} medium {medium} hard {hard}"
    );
    let mut worst: f64 = 0.0;
    for (gap, flip) in &flips {
        let acc = r.per_gap[gap].accuracy.unwrap_or(f64::NAN);
        let dev = (acc - (1.0 - flip)).abs();
        ensure!(dev <= 0.03, "gap {gap}: accuracy {acc} vs {}", 1.0 - flip);
        worst = worst.max(dev);
    }
    Ok(format!(
        "easy {easy:.3} > medium {medium:.3} > hard {hard:.3}, max gap deviation {worst:.4}"
    ))
}

fn cache_incremental_equivalence() -> Check {
    let corpus = synthetic(4);
    let corpus = &corpus[..20];
    let msgs: Vec<Message> = corpus.iter().map(|m| m.message.clone()).collect();
    let oracle = NoisyOracle::uniform(corpus, 0.2, 7).map_err(|e| e.to_string())?;
    let cached = CachedComparator::new(Counting::new(oracle), Arc::new(CacheStore::in_memory()));
    let opts = RankOptions { parallelism: 2 };

    let first = run_tournament_with(&msgs[..19], &cached, &opts).map_err(|e| e.to_string())?;
    let grown = insert_incremental(&first, &msgs[..19], &msgs[19], &cached, &opts).map_err(|e| e.to_string())?;
    ensure!(grown.comparisons_made == 190, "{} comparisons", grown.comparisons_made);
    ensure!(grown.outcomes.len() == 190, "{} outcomes", grown.outcomes.len());

    let calls = cached.inner().calls();
    let rerun = run_tournament_with(&msgs, &cached, &opts).map_err(|e| e.to_string())?;
    ensure!(
        cached.inner().calls() == calls,
        "re-run made {} backend calls",
        cached.inner().calls() - calls
    );
    ensure!(rerun.ranking == grown.ranking, "rankings differ");
    ensure!(rerun.scores == grown.scores, "scores differ");
    ensure!(rerun.cache_hits == 190, "{} cache hits", rerun.cache_hits);
    Ok("190 comparisons, identical ranking, 0 backend calls on re-run".into())
}

fn statistics_oracles() -> Check {
    let c = chi_square_test(&[vec![30.0, 10.0], vec![10.0, 30.0]]).map_err(|e| e.to_string())?;
    ensure!(close(c.statistic, 20.0, 1e-9), "chi2 {}", c.statistic);
    ensure!(close(c.cramers_v, 0.5, 1e-9), "V {}", c.cramers_v);
    ensure!(c.dof == 1, "dof {}", c.dof);
    // erfc(sqrt(10))
    ensure!(close(c.p_value, 7.744216431044074e-06, 1e-12), "p {}", c.p_value);

    let ann = |rows: &[(&str, &str, &str)]| -> Vec<Annotation> {
        rows.iter()
            .map(|(p, a, c)| Annotation {
                pair_id: p.to_string(),
                annotator_id: a.to_string(),
                choice: c.to_string(),
            })
            .collect()
    };
    let (a, b) = ("A_MORE_URGENT", "B_MORE_URGENT");
    // Everyone always picks A: chance agreement is 1, kappa taken as 1.
    let k =
        agreement(&ann(&[("1", "x", a), ("1", "y", a), ("2", "x", a), ("2", "y", a)])).map_err(|e| e.to_string())?;
    ensure!(
        k.percent_agreement == 1.0 && k.cohens_kappa == 1.0,
        "constant raters: {k:?}"
    );
    // Complete disagreement with one-sided marginals: po = 0, pe = 0.
    let k =
        agreement(&ann(&[("1", "x", a), ("1", "y", b), ("2", "x", a), ("2", "y", b)])).map_err(|e| e.to_string())?;
    ensure!(
        k.percent_agreement == 0.0 && k.cohens_kappa == 0.0,
        "opposed raters: {k:?}"
    );
    // po = 3/4, pe = 1/2 * 1/4 + 1/2 * 3/4 = 1/2, kappa = 1/2.
    let k = agreement(&ann(&[
        ("1", "x", a),
        ("1", "y", a),
        ("2", "x", a),
        ("2", "y", b),
        ("3", "x", b),
        ("3", "y", b),
        ("4", "x", b),
        ("4", "y", b),
    ]))
    .map_err(|e| e.to_string())?;
    ensure!(
        close(k.percent_agreement, 0.75, 1e-12) && close(k.cohens_kappa, 0.5, 1e-12),
        "mixed raters: {k:?}"
    );
    Ok("chi2 = 20, V = 0.5, kappa fixtures 1 / 0 / 0.5".into())
}

fn gateway(server: &MockServer, retries: u32) -> Result<HttpGateway, String> {
    let mut cfg = EndpointConfig::new(server.url(), "mock-model");
    cfg.max_retries = retries;
    cfg.retry_base_delay_ms = 1;
    HttpGateway::with_api_key(cfg, None).map_err(|e| e.to_string())
}

fn gateway_protocol() -> Check {
    let existing = Message::new("e", "I have a mild rash.", Source::SyntheticTest);
    let new = Message::new("n", "Crushing chest pain since an hour.", Source::SyntheticTest);

    // Logprob extraction.
    for (fixture, expected) in [
        ("logprobs_yes_no", 0.8),
        ("logprobs_p073", 0.73),
        ("logprobs_no_only", 0.1),
    ] {
        let server = MockServer::scripted(vec![MockResponse::fixture(fixture)]);
        let backend: Arc<dyn ChatBackend> = Arc::new(gateway(&server, 0)?);
        let s = LogprobComparator::new(backend)
            .score_directed(&existing, &new)
            .map_err(|e| format!("{fixture}: {e}"))?;
        ensure!(
            close(s.value, expected, 1e-9),
            "{fixture}: P(YES) {} vs {expected}",
            s.value
        );
        let body = server.requests()[0].body.to_string();
        ensure!(body.contains("\"logprobs\":true"), "{fixture}: logprobs not requested");
    }

    // Retries: transient errors are retried, client errors are not.
    let server = MockServer::scripted(vec![
        MockResponse::fixture("server_error"),
        MockResponse::fixture("server_error"),
        MockResponse::fixture("logprobs_yes_no"),
    ]);
    gateway(&server, 3)?
        .complete("s", "u", true)
        .map_err(|e| format!("recovering server: {e}"))?;
    ensure!(
        server.request_count() == 3,
        "recovering server saw {} requests",
        server.request_count()
    );

    let server = MockServer::scripted(vec![MockResponse::fixture("server_error")]);
    match gateway(&server, 2)?.complete("s", "u", true) {
        Err(GatewayError::EndpointUnavailable { attempts: 3, .. }) => {}
        other => return Err(format!("persistent 500: {other:?}")),
    }
    ensure!(
        server.request_count() == 3,
        "persistent 500 saw {} requests",
        server.request_count()
    );

    let server = MockServer::scripted(vec![MockResponse::fixture("unauthorized")]);
    match gateway(&server, 3)?.complete("s", "u", true) {
        Err(GatewayError::RequestRejected { status: 401, .. }) => {}
        other => return Err(format!("401: {other:?}")),
    }
    ensure!(server.request_count() == 1, "401 was retried");

    // Reward scores.
    for (fixture, expected) in [
        ("score_ok", Some(1.25)),
        ("score_string_number", Some(-0.75)),
        ("score_nan", None),
    ] {
        let server = MockServer::scripted(vec![MockResponse::fixture(fixture)]);
        let got = gateway(&server, 0)?.score("prompt", "completion");
        match (got, expected) {
            (Ok(v), Some(e)) => ensure!(v == e, "{fixture}: {v} vs {e}"),
            (Err(GatewayError::BadScore(_)), None) => {}
            (other, _) => return Err(format!("{fixture}: {other:?}")),
        }
    }
    Ok("3 logprob, 3 retry, 3 score fixtures".into())
}

fn pipeline_determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/corpus.jsonl");
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "seed = 99\n[comparator]\nparallelism = 4\nflip = { \"1\" = 0.25, \"2\" = 0.1 }\n",
    )
    .map_err(|e| e.to_string())?;
    let mut stdouts = Vec::new();
    for run in ["a", "b"] {
        let out = Command::new(env!("CARGO_BIN_EXE_pmr"))
            .arg("pipeline")
            .arg("--config")
            .arg(&cfg)
            .arg("--corpus")
            .arg(&corpus)
            .arg("--out-dir")
            .arg(dir.path().join(run))
            .output()
            .map_err(|e| e.to_string())?;
        ensure!(
            out.status.success(),
            "run {run}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        stdouts.push(out.stdout);
    }
    ensure!(stdouts[0] == stdouts[1], "manifests on stdout differ");
    let mut files = 0;
    for entry in std::fs::read_dir(dir.path().join("a")).map_err(|e| e.to_string())? {
        let name = entry.map_err(|e| e.to_string())?.file_name();
        let a = std::fs::read(dir.path().join("a").join(&name)).map_err(|e| e.to_string())?;
        let b = std::fs::read(dir.path().join("b").join(&name)).map_err(|e| e.to_string())?;
        ensure!(a == b, "{name:?} differs between runs");
        files += 1;
    }
    Ok(format!("{files} artifacts byte-identical"))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("perfect-oracle recovery", perfect_oracle_recovery),
        ("eta mechanics", eta_mechanics),
        ("T-NDCG antisymmetry", t_ndcg_antisymmetry),
        ("expected T-NDCG degenerate cases", expected_t_ndcg_degenerate),
        ("export cardinality and balance", export_cardinality),
        ("difficulty monotonicity", difficulty_monotonicity),
        ("cache/incremental equivalence", cache_incremental_equivalence),
        ("statistics oracles", statistics_oracles),
        ("gateway protocol", gateway_protocol),
        ("pipeline determinism", pipeline_determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {}/{} passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
