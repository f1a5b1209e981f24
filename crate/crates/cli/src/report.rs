use std::fmt::Write as _;
use std::path::Path;

use pmr_core::metrics::{BiasReport, IntrinsicReport};
use pmr_core::pairs::Difficulty;
use pmr_core::util::sha256_hex;
use pmr_core::CATALOG_VERSION;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::CliError;

/// Envelope shared by every emitted report.
#[derive(Debug, Serialize)]
pub struct Report<T> {
    pub report: &'static str,
    pub seed: u64,
    pub config_hash: String,
    pub comparator: Option<String>,
    pub catalog_version: &'static str,
    pub body: T,
}

impl<T: Serialize> Report<T> {
    pub fn new(report: &'static str, seed: u64, config_hash: &str, comparator: Option<String>, body: T) -> Self {
        Self {
            report,
            seed,
            config_hash: config_hash.to_string(),
            comparator,
            catalog_version: CATALOG_VERSION,
            body,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialize");
        s.push('\n');
        s
    }
}

/// Writes `contents` and returns its sha256.
pub fn write_file(stage: &'static str, path: &Path, contents: &str) -> Result<String, CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::data(stage, format!("{}: {e}", path.display())))?;
    Ok(sha256_hex(contents.as_bytes()))
}

pub fn write_json<T: Serialize>(stage: &'static str, path: &Path, value: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::internal(stage, e))?;
    s.push('\n');
    write_file(stage, path, &s)
}

pub fn write_jsonl<T: Serialize>(stage: &'static str, path: &Path, records: &[T]) -> Result<String, CliError> {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r).map_err(|e| CliError::internal(stage, e))?);
        s.push('\n');
    }
    write_file(stage, path, &s)
}

pub fn read_jsonl<T: DeserializeOwned>(stage: &'static str, path: &Path) -> Result<Vec<T>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::data(stage, format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| CliError::data(stage, format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

pub fn read_json<T: DeserializeOwned>(stage: &'static str, path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::data(stage, format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::data(stage, format!("{}: {e}", path.display())))
}

fn pct(x: Option<f64>) -> String {
    x.map_or_else(|| "-".into(), |v| format!("{:.1}", 100.0 * v))
}

pub fn intrinsic_table(r: &IntrinsicReport) -> String {
    let d = |x: Difficulty| r.per_difficulty.get(&x).and_then(|s| s.accuracy);
    let mut s = String::new();
    let _ = writeln!(s, "{:>8} {:>8} {:>8} {:>8}", "Overall", "Easy", "Medium", "Hard");
    let _ = writeln!(
        s,
        "{:>8} {:>8} {:>8} {:>8}",
        pct(Some(r.overall_accuracy)),
        pct(d(Difficulty::Easy)),
        pct(d(Difficulty::Medium)),
        pct(d(Difficulty::Hard))
    );
    let _ = writeln!(s, "pairs: {}  ties: {}", r.n, r.tie_count);
    s
}

pub fn extrinsic_table(t_ndcg: &[(usize, f64)]) -> String {
    let mut s = String::new();
    let header: Vec<String> = t_ndcg.iter().map(|(k, _)| format!("T-NDCG@{k}")).collect();
    let values: Vec<String> = t_ndcg.iter().map(|(_, v)| format!("{v:.4}")).collect();
    let _ = writeln!(s, "{}", header.iter().map(|h| format!("{h:>11}")).collect::<String>());
    let _ = writeln!(s, "{}", values.iter().map(|v| format!("{v:>11}")).collect::<String>());
    s
}

pub fn bias_table(r: &BiasReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<28} {:>8} {:>10}", "stratum", "correct", "incorrect");
    for (name, c) in &r.strata {
        let _ = writeln!(s, "{name:<28} {:>8} {:>10}", c.correct, c.incorrect);
    }
    let _ = writeln!(
        s,
        "chi2 = {:.4} (dof {}), p = {:.4}, Cramer's V = {:.4}, skipped = {}",
        r.chi_square, r.dof, r.p_value, r.cramers_v, r.skipped
    );
    s
}
