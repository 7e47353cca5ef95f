//! Stage drivers shared by the CLI subcommands and the one-shot pipeline.
//! Each stage takes documents in memory and returns its output documents
//! plus named artifacts (file name → bytes), so composability and
//! determinism can be checked without touching the filesystem.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cleaning::{normalize_batch, Cleaner, CleaningRuleSet, NormalizerConfig};
use crate::corpus::{write_docs, Document, PipelineStats, TokenCounter};
use crate::dedup::{dedup, DedupParams, DedupReport};
use crate::filtering::{evaluate, FilterThresholds, FilterVerdict};
use crate::mixture::{self, MixturePlan, PhaseSpec, PoolSummary, SampleOutcome};
use crate::packing::{pack_bins, pack_concat, PackedSequence, PackingReport};
use crate::seed::derive_seed;

/// How many clusters a dedup report lists in full.
pub const CLUSTER_SAMPLE_CAP: usize = 100;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Artifacts(pub BTreeMap<String, Vec<u8>>);

impl Artifacts {
    pub fn put_json<T: Serialize>(&mut self, name: &str, value: &T) {
        let mut bytes = serde_json::to_vec_pretty(value).expect("reports serialize");
        bytes.push(b'\n');
        self.0.insert(name.to_string(), bytes);
    }

    pub fn put_jsonl<T: Serialize>(&mut self, name: &str, records: &[T]) {
        let mut bytes = Vec::new();
        for r in records {
            serde_json::to_writer(&mut bytes, r).expect("records serialize");
            bytes.push(b'\n');
        }
        self.0.insert(name.to_string(), bytes);
    }

    pub fn put_docs(&mut self, name: &str, docs: &[Document]) {
        let mut bytes = Vec::new();
        write_docs(&mut bytes, docs).expect("writing to memory");
        self.0.insert(name.to_string(), bytes);
    }

    pub fn extend(&mut self, other: Artifacts) {
        self.0.extend(other.0);
    }

    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.0.get(name).map(Vec::as_slice)
    }

    pub fn digests(&self) -> BTreeMap<String, String> {
        self.0.iter().map(|(k, v)| (k.clone(), sha256_hex(v))).collect()
    }

    pub fn write_to(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, bytes) in &self.0 {
            std::fs::write(dir.join(name), bytes)?;
        }
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CleanReport {
    pub rules_version: String,
    pub rules_fingerprint: String,
    pub stats: PipelineStats,
    pub docs_normalized: u64,
    pub bytes_removed: u64,
    pub rule_hits: BTreeMap<String, u64>,
}

/// A batch of documents from one input, with its web-scraped flag.
pub struct CleanInput {
    pub docs: Vec<Document>,
    pub web_scraped: bool,
}

pub fn clean_stage(
    inputs: Vec<CleanInput>,
    rules: &CleaningRuleSet,
    cleaner: &Cleaner,
    normalizer: &NormalizerConfig,
    counter: &TokenCounter,
) -> (Vec<Document>, Artifacts) {
    let mut report = CleanReport {
        rules_version: rules.version.clone(),
        rules_fingerprint: rules.fingerprint(),
        ..CleanReport::default()
    };
    let mut out = Vec::new();
    for input in inputs {
        let outcomes: Vec<_> = input.docs.par_iter().map(|d| cleaner.clean(&d.text)).collect();
        let texts: Vec<String> = if input.web_scraped {
            let cleaned: Vec<&str> = outcomes.iter().map(|o| o.text.as_str()).collect();
            report.docs_normalized += cleaned.len() as u64;
            normalize_batch(&cleaned, normalizer)
        } else {
            outcomes.iter().map(|o| o.text.clone()).collect()
        };
        for ((mut doc, outcome), text) in input.docs.into_iter().zip(&outcomes).zip(texts) {
            let tokens_in = doc.token_count;
            report.bytes_removed += outcome.bytes_removed;
            for (rule, hits) in &outcome.applied {
                *report.rule_hits.entry(rule.clone()).or_insert(0) += hits;
            }
            doc.text = text;
            doc.recount(counter);
            report.stats.keep(tokens_in, doc.token_count);
            out.push(doc);
        }
    }
    let mut art = Artifacts::default();
    art.put_docs("clean.jsonl", &out);
    art.put_json("clean_report.json", &report);
    (out, art)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub thresholds: FilterThresholds,
    pub stats: PipelineStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuarantinedDoc {
    #[serde(flatten)]
    pub doc: Document,
    pub verdict: FilterVerdict,
}

pub fn filter_stage(docs: Vec<Document>, thresholds: &FilterThresholds) -> (Vec<Document>, Artifacts) {
    let verdicts: Vec<FilterVerdict> = docs.par_iter().map(|d| evaluate(d, thresholds)).collect();
    let mut stats = PipelineStats::default();
    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    for (doc, verdict) in docs.into_iter().zip(verdicts) {
        match verdict.reason {
            None => {
                stats.keep(doc.token_count, doc.token_count);
                kept.push(doc);
            }
            Some(reason) => {
                stats.remove(reason.as_str(), doc.token_count);
                rejected.push(QuarantinedDoc { doc, verdict });
            }
        }
    }
    let mut art = Artifacts::default();
    art.put_docs("filter.jsonl", &kept);
    art.put_jsonl("filter_rejected.jsonl", &rejected);
    art.put_json(
        "filter_report.json",
        &FilterReport {
            thresholds: thresholds.clone(),
            stats,
        },
    );
    (kept, art)
}

/// The dedup seed actually used: the run seed split by stage name, mixed
/// with the seed in the parameter file.
pub fn dedup_seed(run_seed: u64, params: &DedupParams) -> u64 {
    derive_seed(run_seed, &format!("dedup/{}", params.seed))
}

pub fn dedup_stage(
    docs: Vec<Document>,
    params: &DedupParams,
    run_seed: u64,
) -> Result<(Vec<Document>, Artifacts), crate::dedup::DedupError> {
    let effective = DedupParams {
        seed: dedup_seed(run_seed, params),
        ..params.clone()
    };
    let result = dedup(&docs, &effective)?;
    let report: DedupReport = result.report(&effective, CLUSTER_SAMPLE_CAP);
    let removed: Vec<(String, String)> = result.removed.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    let kept: Vec<Document> = docs.into_iter().filter(|d| result.kept.contains(&d.id)).collect();
    let mut art = Artifacts::default();
    art.put_docs("dedup.jsonl", &kept);
    art.put_json("dedup_report.json", &report);
    art.put_jsonl(
        "dedup_removed.jsonl",
        &removed
            .iter()
            .map(|(id, rep)| serde_json::json!({"id": id, "representative": rep}))
            .collect::<Vec<_>>(),
    );
    Ok((kept, art))
}

pub fn plan_stage(
    spec: &PhaseSpec,
    docs: &[Document],
    exclude: &HashSet<String>,
) -> Result<(MixturePlan, Artifacts), mixture::MixtureError> {
    let pool = PoolSummary::from_documents(docs, spec, exclude);
    let plan = mixture::plan(spec, &pool)?;
    let mut art = Artifacts::default();
    art.put_json("plan_report.json", &plan);
    Ok((plan, art))
}

pub fn sample_seed(run_seed: u64, spec: &PhaseSpec) -> u64 {
    derive_seed(run_seed, &format!("sample/{}", spec.seed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub seed: u64,
    pub plan: MixturePlan,
    pub epochs: BTreeMap<crate::corpus::CellKey, u32>,
    pub deviation: mixture::DeviationReport,
}

/// Samples a feasible plan. Documents drawn more than once (epoching) are
/// written with an `#epN` suffix on their id so the output shard keeps
/// unique ids.
pub fn sample_stage(
    spec: &PhaseSpec,
    mut plan: MixturePlan,
    docs: &[Document],
    run_seed: u64,
    exclude: &HashSet<String>,
) -> Result<(Vec<Document>, Artifacts), mixture::MixtureError> {
    let seed = sample_seed(run_seed, spec);
    let outcome: SampleOutcome = mixture::sample(&plan, docs, seed, exclude)?;
    plan.record(&outcome);
    let by_id: BTreeMap<&str, &Document> = docs.iter().map(|d| (d.id.as_str(), d)).collect();
    let mut seen: BTreeMap<&str, u32> = BTreeMap::new();
    let sequence: Vec<Document> = outcome
        .sequence
        .iter()
        .map(|s| {
            let mut d = by_id[s.id.as_str()].clone();
            let n = seen.entry(by_id[s.id.as_str()].id.as_str()).or_insert(0);
            *n += 1;
            if *n > 1 {
                d.id = format!("{}#ep{}", d.id, n);
            }
            d
        })
        .collect();
    let report = SampleReport {
        seed,
        deviation: mixture::validate(&outcome.achieved, spec, mixture::DEFAULT_TOLERANCE_PP),
        epochs: outcome.epochs.clone(),
        plan,
    };
    let mut art = Artifacts::default();
    art.put_docs("sample.jsonl", &sequence);
    art.put_json("sample_report.json", &report);
    Ok((sequence, art))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum PackMode {
    Concat { boundary_tokens: u64 },
    Bins,
}

impl Default for PackMode {
    fn default() -> Self {
        PackMode::Concat { boundary_tokens: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackStageReport {
    pub context_length: u64,
    pub mode: PackMode,
    #[serde(flatten)]
    pub report: PackingReport,
}

pub fn pack_stage(
    docs: &[Document],
    mode: PackMode,
    context_length: u64,
) -> Result<(Vec<PackedSequence>, Artifacts), crate::packing::PackingError> {
    let (seqs, report) = match mode {
        PackMode::Concat { boundary_tokens } => pack_concat(
            docs.iter().map(|d| (d.id.as_str(), d.token_count)),
            context_length,
            boundary_tokens,
        )?,
        PackMode::Bins => {
            // Empty documents have nothing to pack.
            let samples: Vec<(String, u64)> = docs
                .iter()
                .filter(|d| d.token_count > 0)
                .map(|d| (d.id.clone(), d.token_count))
                .collect();
            pack_bins(&samples, context_length)?
        }
    };
    let mut art = Artifacts::default();
    art.put_jsonl("pack.jsonl", &seqs);
    art.put_json(
        "pack_report.json",
        &PackStageReport {
            context_length,
            mode,
            report,
        },
    );
    Ok((seqs, art))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Clean,
    Filter,
    Dedup,
    Plan,
    Sample,
    Pack,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSpec {
    pub path: PathBuf,
    #[serde(default)]
    pub web_scraped: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PackConfig {
    #[serde(default, flatten)]
    pub mode: Option<PackMode>,
    /// Defaults to the phase context length, else 8192.
    #[serde(default)]
    pub context_length: Option<u64>,
}

/// One-shot pipeline configuration. Relative paths resolve against the
/// directory holding the config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Stages to run; always executed in pipeline order. Defaults to every
    /// stage whose inputs are configured (plan and sample need `phase`).
    #[serde(default)]
    pub stages: Option<Vec<Stage>>,
    #[serde(default)]
    pub inputs: Vec<InputSpec>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub cleaning_rules: Option<PathBuf>,
    #[serde(default)]
    pub normalizer: NormalizerConfig,
    #[serde(default)]
    pub filter_thresholds: Option<PathBuf>,
    #[serde(default)]
    pub dedup: Option<PathBuf>,
    #[serde(default)]
    pub phase: Option<PathBuf>,
    /// Newline-separated ids consumed by an earlier phase.
    #[serde(default)]
    pub exclude_ids: Option<PathBuf>,
    #[serde(default)]
    pub pack: PackConfig,
}

impl RunConfig {
    pub fn stages(&self) -> Vec<Stage> {
        let mut stages = match &self.stages {
            Some(s) => s.clone(),
            None => {
                let mut s = vec![Stage::Clean, Stage::Filter, Stage::Dedup];
                if self.phase.is_some() {
                    s.extend([Stage::Plan, Stage::Sample]);
                }
                s.push(Stage::Pack);
                s
            }
        };
        stages.sort();
        stages.dedup();
        stages
    }
}
