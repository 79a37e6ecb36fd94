//! Experiment runs, Hit@k scoring and comparison against published numbers.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::answerparse::parse_predictions;
use crate::corpus::SubstitutionSample;
use crate::llmclient::{GenerationParams, LlmClient};
use crate::promptforge::{render_few_shot, PromptConfig};
use crate::vocab::IngredientVocab;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("cannot score an empty prediction set")]
    NoRecords,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("reports disagree on k values: {0:?} vs {1:?}")]
    MismatchedK(Vec<usize>, Vec<usize>),
    #[error("unknown reference row {0:?}")]
    UnknownReference(String),
    #[error("invalid experiment configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub sample_key: String,
    pub gold: String,
    pub ranked: Vec<String>,
    pub raw: String,
    pub latency_ms: u64,
    pub fingerprint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl PredictionRecord {
    pub fn is_hit(&self, k: usize, vocab: &IngredientVocab) -> bool {
        self.first_hit(k, vocab).is_some()
    }

    /// Zero-based rank of the first correct prediction within the top `k`.
    pub fn first_hit(&self, k: usize, vocab: &IngredientVocab) -> Option<usize> {
        let is_gold = vocab.gold_matcher(&self.gold);
        self.ranked.iter().take(k).position(|p| is_gold(p))
    }
}

/// Resolves each distinct string once; predictions repeat heavily.
struct Resolutions<'a> {
    vocab: &'a IngredientVocab,
    ids: HashMap<&'a str, Option<usize>>,
    canonical: HashMap<String, usize>,
}

impl<'a> Resolutions<'a> {
    fn new(vocab: &'a IngredientVocab) -> Self {
        Resolutions {
            vocab,
            ids: HashMap::new(),
            canonical: HashMap::new(),
        }
    }

    fn id(&mut self, raw: &'a str) -> Option<usize> {
        if let Some(&id) = self.ids.get(raw) {
            return id;
        }
        let id = self.vocab.resolve(raw).map(|c| {
            let next = self.canonical.len();
            *self.canonical.entry(c).or_insert(next)
        });
        self.ids.insert(raw, id);
        id
    }

    /// Same rule as [`IngredientVocab::matches`].
    fn first_hit(&mut self, record: &'a PredictionRecord, k: usize) -> Option<usize> {
        let gold = self.id(&record.gold);
        record.ranked.iter().take(k).position(|p| match (self.id(p), gold) {
            (Some(a), Some(b)) => a == b,
            (None, None) => p.trim().to_lowercase() == record.gold.trim().to_lowercase(),
            _ => false,
        })
    }
}

fn first_hits(records: &[PredictionRecord], k: usize, vocab: &IngredientVocab) -> Vec<Option<usize>> {
    let mut memo = Resolutions::new(vocab);
    records.iter().map(|r| memo.first_hit(r, k)).collect()
}

pub fn hits_at_k(records: &[PredictionRecord], k: usize, vocab: &IngredientVocab) -> Result<usize, EvalError> {
    if k < 1 {
        return Err(EvalError::InvalidK);
    }
    if records.is_empty() {
        return Err(EvalError::NoRecords);
    }
    Ok(first_hits(records, k, vocab).iter().filter(|f| f.is_some()).count())
}

/// Fraction of records whose gold answer appears among the first `k`
/// predictions. Empty rankings are misses.
pub fn hit_at_k(records: &[PredictionRecord], k: usize, vocab: &IngredientVocab) -> Result<f64, EvalError> {
    Ok(hits_at_k(records, k, vocab)? as f64 / records.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub hits: BTreeMap<usize, usize>,
    pub hit_rate: BTreeMap<usize, f64>,
    #[serde(default)]
    pub config: serde_json::Value,
    /// Samples whose request or rendering failed (scored as misses).
    #[serde(default)]
    pub failed: usize,
    #[serde(default)]
    pub skipped: usize,
    #[serde(default)]
    pub orphans: usize,
}

impl EvalReport {
    pub fn ks(&self) -> Vec<usize> {
        self.hits.keys().copied().collect()
    }

    pub fn percent(&self, k: usize) -> Option<f64> {
        let n = self.n;
        self.hits.get(&k).filter(|_| n > 0).map(|&h| h as f64 * 100.0 / n as f64)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, hits) in &self.hits {
            let rate = self.hit_rate[k];
            let _ = writeln!(
                out,
                "Hit@{k}: {:.2}% ({hits}/{}) [{rate:.4}]",
                self.percent(*k).unwrap_or(0.0),
                self.n
            );
        }
        let _ = writeln!(
            out,
            "samples: {}  failed: {}  skipped: {}  orphans: {}",
            self.n, self.failed, self.skipped, self.orphans
        );
        out
    }
}

pub fn score(
    records: &[PredictionRecord],
    ks: &[usize],
    vocab: &IngredientVocab,
) -> Result<EvalReport, EvalError> {
    let mut ks = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    if ks.is_empty() {
        return Err(EvalError::InvalidK);
    }
    if ks[0] < 1 {
        return Err(EvalError::InvalidK);
    }
    if records.is_empty() {
        return Err(EvalError::NoRecords);
    }
    let deepest = ks[ks.len() - 1];
    let first = first_hits(records, deepest, vocab);
    let mut hits = BTreeMap::new();
    let mut hit_rate = BTreeMap::new();
    for &k in &ks {
        let h = first.iter().filter(|f| matches!(f, Some(rank) if *rank < k)).count();
        hits.insert(k, h);
        hit_rate.insert(k, h as f64 / records.len() as f64);
    }
    Ok(EvalReport {
        n: records.len(),
        hits,
        hit_rate,
        config: serde_json::Value::Null,
        failed: records.iter().filter(|r| r.error.is_some()).count(),
        skipped: 0,
        orphans: 0,
    })
}

/// Identifies model, prompt configuration and decoding parameters.
pub fn config_fingerprint(model: &str, prompt: &PromptConfig, params: &GenerationParams, shots: usize) -> String {
    let canonical = json!({
        "model": model,
        "prompt": prompt,
        "params": params,
        "shots": shots,
    });
    hex::encode(Sha256::digest(canonical.to_string().as_bytes()))
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub prompt: PromptConfig,
    pub params: GenerationParams,
    pub ks: Vec<usize>,
    /// Completed exchanges prepended to every query prompt.
    pub exemplars: Vec<SubstitutionSample>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            prompt: PromptConfig::default(),
            params: GenerationParams::default(),
            ks: vec![1],
            exemplars: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub report: EvalReport,
    pub predictions: Vec<PredictionRecord>,
}

/// Render → complete → parse → record for every sample, then score.
pub fn run_experiment(
    samples: &[SubstitutionSample],
    spec: &ExperimentSpec,
    client: &LlmClient,
    vocab: &IngredientVocab,
) -> Result<ExperimentRun, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::NoRecords);
    }
    if spec.ks.is_empty() || spec.ks.contains(&0) {
        return Err(EvalError::InvalidK);
    }
    spec.params
        .validate()
        .map_err(|e| EvalError::Config(e.to_string()))?;
    let fingerprint = config_fingerprint(&client.config().model, &spec.prompt, &spec.params, spec.exemplars.len());

    let rendered: Vec<Result<String, String>> = samples
        .iter()
        .map(|s| {
            let exemplars: Vec<SubstitutionSample> = spec
                .exemplars
                .iter()
                .filter(|e| e.key() != s.key())
                .cloned()
                .collect();
            render_few_shot(s, &exemplars, &spec.prompt).map_err(|e| e.to_string())
        })
        .collect();
    let sendable: Vec<(usize, &str)> = rendered
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.as_ref().ok().map(|p| (i, p.as_str())))
        .collect();
    let prompts: Vec<&str> = sendable.iter().map(|(_, p)| *p).collect();
    let outcome = client.complete_batch(&prompts, &spec.params);

    let mut completions: Vec<Option<Result<crate::llmclient::Completion, String>>> =
        vec![None; samples.len()];
    for ((i, _), result) in sendable.iter().zip(outcome.results) {
        completions[*i] = Some(result.map_err(|e| e.to_string()));
    }

    let mut predictions = Vec::with_capacity(samples.len());
    for (i, sample) in samples.iter().enumerate() {
        let mut record = PredictionRecord {
            sample_key: sample.key(),
            gold: sample.target.clone(),
            ranked: Vec::new(),
            raw: String::new(),
            latency_ms: 0,
            fingerprint: fingerprint.clone(),
            prompt: rendered[i].as_ref().ok().cloned(),
            error: None,
        };
        match (&rendered[i], completions[i].take()) {
            (Err(e), _) => record.error = Some(e.clone()),
            (Ok(_), Some(Ok(completion))) => {
                record.ranked = parse_predictions(&completion.text, vocab.normalizer()).ranked;
                record.raw = completion.text;
                record.latency_ms = completion.latency_ms;
            }
            (Ok(_), Some(Err(e))) => record.error = Some(e),
            (Ok(_), None) => record.error = Some("request not issued".into()),
        }
        if let Some(err) = &record.error {
            log::warn!("sample {}: {err}", record.sample_key);
        }
        predictions.push(record);
    }

    let mut report = score(&predictions, &spec.ks, vocab)?;
    report.config = json!({
        "model": client.config().model,
        "prompt": spec.prompt,
        "params": spec.params,
        "shots": spec.exemplars.len(),
        "fingerprint": fingerprint,
    });
    Ok(ExperimentRun {
        report,
        predictions,
    })
}

/// A published Hit@1 value shown beside measured reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiteratureValue {
    pub label: String,
    pub k: usize,
    pub percent: f64,
}

pub const GISMO_HIT1: f64 = 20.56;
pub const QLORA_SFT_HIT1: f64 = 21.75;
pub const SFT_DPO_SFT_HIT1: f64 = 22.04;

pub fn literature_values() -> Vec<LiteratureValue> {
    [
        ("GISMO (baseline 1)", GISMO_HIT1),
        ("Mistral 7B QLoRA SFT 15k", QLORA_SFT_HIT1),
        ("Mistral 7B SFT+DPO+SFT", SFT_DPO_SFT_HIT1),
    ]
    .into_iter()
    .map(|(label, percent)| LiteratureValue {
        label: label.into(),
        k: 1,
        percent,
    })
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub literature: bool,
    /// Percent per k; `None` where the row has no value for that k.
    pub values: Vec<Option<f64>>,
    /// Hit@1 minus the reference row's Hit@1, in percentage points.
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub ks: Vec<usize>,
    pub reference: String,
    pub rows: Vec<ComparisonRow>,
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Reports first, then literature rows. `reference` names the row every
/// delta is measured against (a report label or a literature label).
pub fn compare_reports(
    reports: &[(String, EvalReport)],
    literature: &[LiteratureValue],
    reference: &str,
) -> Result<ComparisonTable, EvalError> {
    let ks = match reports.first() {
        Some((_, r)) => r.ks(),
        None => vec![1],
    };
    for (_, r) in reports {
        if r.ks() != ks {
            return Err(EvalError::MismatchedK(ks.clone(), r.ks()));
        }
    }

    let mut rows: Vec<ComparisonRow> = reports
        .iter()
        .map(|(label, r)| ComparisonRow {
            label: label.clone(),
            literature: false,
            values: ks.iter().map(|&k| r.percent(k)).collect(),
            delta: None,
        })
        .collect();
    rows.extend(literature.iter().map(|lit| ComparisonRow {
        label: lit.label.clone(),
        literature: true,
        values: ks.iter().map(|&k| (k == lit.k).then_some(lit.percent)).collect(),
        delta: None,
    }));

    let hit1 = |row: &ComparisonRow| ks.iter().position(|&k| k == 1).and_then(|i| row.values[i]);
    let base = rows
        .iter()
        .find(|r| r.label == reference)
        .ok_or_else(|| EvalError::UnknownReference(reference.into()))
        .map(&hit1)?;
    for row in &mut rows {
        row.delta = match (hit1(row), base) {
            (Some(v), Some(b)) => Some(round2(v - b)),
            _ => None,
        };
    }
    Ok(ComparisonTable {
        ks,
        reference: reference.into(),
        rows,
    })
}

impl ComparisonTable {
    pub fn to_text(&self) -> String {
        let label_w = self
            .rows
            .iter()
            .map(|r| r.label.len() + if r.literature { 13 } else { 0 })
            .max()
            .unwrap_or(5)
            .max(5);
        let mut out = String::new();
        let _ = write!(out, "{:<label_w$}", "model");
        for k in &self.ks {
            let _ = write!(out, "  {:>8}", format!("Hit@{k}"));
        }
        let _ = writeln!(out, "  {:>8}", format!("Δ vs ref"));
        for row in &self.rows {
            let label = if row.literature {
                format!("{} [literature]", row.label)
            } else {
                row.label.clone()
            };
            let _ = write!(out, "{label:<label_w$}");
            for v in &row.values {
                let cell = v.map(|v| format!("{v:.2}%")).unwrap_or_else(|| "-".into());
                let _ = write!(out, "  {cell:>8}");
            }
            let delta = row.delta.map(|d| format!("{d:+.2}")).unwrap_or_else(|| "-".into());
            let _ = writeln!(out, "  {delta:>8}");
        }
        let _ = writeln!(out, "reference: {}", self.reference);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::Normalizer;

    fn record(gold: &str, ranked: &[&str]) -> PredictionRecord {
        PredictionRecord {
            sample_key: format!("k-{gold}-{}", ranked.join(",")),
            gold: gold.into(),
            ranked: ranked.iter().map(|s| s.to_string()).collect(),
            raw: String::new(),
            latency_ms: 0,
            fingerprint: String::new(),
            prompt: None,
            error: None,
        }
    }

    fn vocab() -> IngredientVocab {
        IngredientVocab::empty(Normalizer::default())
    }

    #[test]
    fn half_hits() {
        let rs = vec![record("a", &["a"]), record("b", &["c"])];
        assert_eq!(hit_at_k(&rs, 1, &vocab()).unwrap(), 0.5);
    }

    #[test]
    fn all_hits_and_empty_rankings() {
        let rs = vec![record("lime", &["lime"]), record("Lemons", &["lemon", "x"])];
        assert_eq!(hit_at_k(&rs, 1, &vocab()).unwrap(), 1.0);
        let rs = vec![record("lime", &[]), record("lime", &["lime"])];
        assert_eq!(hit_at_k(&rs, 3, &vocab()).unwrap(), 0.5);
    }

    #[test]
    fn errors() {
        assert_eq!(hit_at_k(&[], 1, &vocab()), Err(EvalError::NoRecords));
        assert_eq!(hit_at_k(&[record("a", &["a"])], 0, &vocab()), Err(EvalError::InvalidK));
    }

    #[test]
    fn report_prints_percent() {
        let mut rs: Vec<PredictionRecord> = (0..10_000).map(|i| record(&format!("g{i}"), &["nope"])).collect();
        for r in rs.iter_mut().take(2204) {
            r.ranked = vec![r.gold.clone()];
        }
        let report = score(&rs, &[1], &vocab()).unwrap();
        assert_eq!(report.hits[&1], 2204);
        assert!(report.to_text().contains("Hit@1: 22.04% (2204/10000)"));
    }

    #[test]
    fn comparison_deltas() {
        let lit = literature_values();
        let table = compare_reports(&[], &lit[..2], "GISMO (baseline 1)").unwrap();
        assert_eq!(table.rows.len(), 2);
        assert_eq!(table.rows[1].delta, Some(1.19));
        assert_eq!(table.rows[0].delta, Some(0.0));
        assert!(table.to_text().contains("+1.19"));
    }

    #[test]
    fn comparison_single_report() {
        let rs = vec![record("a", &["a"]), record("b", &["c"])];
        let report = score(&rs, &[1], &vocab()).unwrap();
        let lit = literature_values();
        let table = compare_reports(&[("run".into(), report)], &lit[..1], "GISMO (baseline 1)").unwrap();
        assert_eq!(table.rows.len(), 2);
        assert_eq!(table.rows[0].values, vec![Some(50.0)]);
        assert_eq!(table.rows[0].delta, Some(29.44));
    }

    #[test]
    fn comparison_rejects_mismatched_k() {
        let rs = vec![record("a", &["a"])];
        let a = score(&rs, &[1], &vocab()).unwrap();
        let b = score(&rs, &[1, 3], &vocab()).unwrap();
        assert!(matches!(
            compare_reports(&[("a".into(), a), ("b".into(), b)], &literature_values(), "GISMO (baseline 1)"),
            Err(EvalError::MismatchedK(..))
        ));
    }
}
