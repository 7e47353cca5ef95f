//! Command-line front end. Every subcommand prints its main report as JSON
//! on stdout; with `--out DIR` it also writes its artifacts and a
//! `run_manifest.json` there.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::arena::{self, Battle, StatedArena, TiePolicy};
use crate::calc::{self, DecayShape, HardwareProfile, ReferenceConfig, TrainConfig};
use crate::cleaning::{CleaningRuleSet, NormalizerConfig};
use crate::corpus::{build_manifest, read_shard, CorpusError, Document, TokenCounter};
use crate::dedup::DedupParams;
use crate::filtering::FilterThresholds;
use crate::fixtures;
use crate::mixture::{self, CompositionTables, MixtureError, PhaseSpec, SamplingMode};
use crate::pipeline::{self, sha256_hex, Artifacts, CleanInput, PackMode, RunConfig, Stage};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const LOG_ENV: &str = "CORPUSFORGE_LOG";

#[derive(Debug)]
pub enum CliError {
    Config(anyhow::Error),
    Data(anyhow::Error),
    Infeasible(String),
    Strict(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Infeasible(_) => 3,
            CliError::Strict(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "config error: {e:#}"),
            CliError::Data(e) => write!(f, "data error: {e:#}"),
            CliError::Infeasible(m) => write!(f, "infeasible plan: {m}"),
            CliError::Strict(m) => write!(f, "strict check failed: {m}"),
        }
    }
}

fn config_err(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Config(e.into())
}

fn data_err(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Data(e.into())
}

impl From<MixtureError> for CliError {
    fn from(e: MixtureError) -> Self {
        match e {
            MixtureError::Infeasible(_) | MixtureError::Exhausted { .. } => CliError::Infeasible(e.to_string()),
            _ => config_err(e),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "corpusforge",
    version,
    about = "Corpus curation, mixture planning and training arithmetic"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct GlobalOpts {
    /// Stage config file (rules, thresholds, dedup params or run config).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run seed; every stage derives its own stream from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Directory for artifacts and the run manifest.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Turn consistency warnings into a failing exit code.
    #[arg(long, global = true)]
    pub strict: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Token totals per (language, category) cell.
    Manifest(InputArgs),
    /// Rule-based cleaning and whitespace normalization.
    Clean(CleanArgs),
    /// Heuristic quality filtering.
    Filter(InputArgs),
    /// Near-duplicate removal.
    Dedup(DedupArgs),
    /// Allocate a phase budget across cells and check feasibility.
    Plan(PhaseArgs),
    /// Plan, then draw documents.
    Sample(PhaseArgs),
    /// Pack documents into fixed-length windows.
    Pack(PackArgs),
    /// Check published composition tables against their token counts.
    Composition(CompositionArgs),
    /// Batch, step, schedule and throughput arithmetic.
    #[command(subcommand)]
    Calc(CalcCommand),
    /// Pairwise preference battle analysis.
    #[command(subcommand)]
    Arena(ArenaCommand),
    /// Run the configured stages in order (needs --config).
    Pipeline,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// JSON Lines shards (.jsonl or .jsonl.gz).
    #[arg(long = "input", required = true)]
    pub inputs: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CleanArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Apply whitespace normalization (web-scraped sources only).
    #[arg(long)]
    pub web_scraped: bool,
    /// External normalizer command, whitespace separated.
    #[arg(long)]
    pub normalizer_command: Option<String>,
}

#[derive(Debug, Args)]
pub struct DedupArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Compare documents only within their own category.
    #[arg(long)]
    pub per_category: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SamplingArg {
    Uniform,
    TokenMass,
}

#[derive(Debug, Args)]
pub struct PhaseArgs {
    /// Phase spec; bundled phase1/2/3.json are found by name.
    #[arg(long)]
    pub phase: PathBuf,
    #[arg(long = "input")]
    pub inputs: Vec<PathBuf>,
    /// Plan from a corpus manifest instead of documents (plan only).
    #[arg(long, conflicts_with = "inputs")]
    pub manifest: Option<PathBuf>,
    /// Newline-separated ids to leave out, e.g. consumed by an earlier phase.
    #[arg(long)]
    pub exclude: Option<PathBuf>,
    /// Override the spec's epoching flag.
    #[arg(long)]
    pub epoching: bool,
    /// Override the spec's sampling mode.
    #[arg(long, value_enum)]
    pub sampling: Option<SamplingArg>,
    /// Override the spec's token budget.
    #[arg(long, value_parser = parse_count)]
    pub budget: Option<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PackModeArg {
    Concat,
    Bins,
}

#[derive(Debug, Args)]
pub struct PackArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_enum, default_value = "concat")]
    pub mode: PackModeArg,
    #[arg(long, default_value_t = 8192)]
    pub context: u64,
    /// Boundary marker cost per document in concat mode.
    #[arg(long, default_value_t = 1)]
    pub boundary: u64,
}

#[derive(Debug, Args)]
pub struct CompositionArgs {
    /// Tables file; defaults to the bundled one.
    #[arg(long)]
    pub tables: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    pub tolerance: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ShapeArg {
    Cosine,
    Linear,
}

#[derive(Debug, Subcommand)]
pub enum CalcCommand {
    /// Global batch size from a token budget and a step count.
    Batch {
        #[arg(long, value_parser = parse_count)]
        tokens: u64,
        #[arg(long)]
        steps: u64,
        #[arg(long)]
        context: u64,
    },
    /// Optimizer steps for a token budget under a training config.
    Steps {
        #[arg(long, value_parser = parse_count)]
        tokens: u64,
        #[arg(long)]
        train_config: PathBuf,
    },
    /// Noise proxy lr / sqrt(batch).
    Noise {
        #[arg(long)]
        lr: f64,
        #[arg(long)]
        batch: u64,
    },
    /// Warmup-Stable-Decay learning rate(s).
    Wsd {
        #[arg(long)]
        train_config: PathBuf,
        #[arg(long)]
        stable: u64,
        #[arg(long)]
        decay: u64,
        /// A single step; otherwise an evenly spaced schedule.
        #[arg(long)]
        step: Option<u64>,
        #[arg(long, default_value_t = 100)]
        points: usize,
        #[arg(long, value_enum, default_value = "cosine")]
        shape: ShapeArg,
    },
    /// Token throughput of a hardware profile.
    Throughput {
        #[arg(long)]
        hw: PathBuf,
    },
    /// Days and cost for a token budget.
    Project {
        #[arg(long)]
        hw: PathBuf,
        #[arg(long, value_parser = parse_count)]
        budget: u64,
    },
    /// Check training configs against a reference and each other.
    Validate {
        #[arg(long = "train-config", required = true)]
        train_configs: Vec<PathBuf>,
        /// Reference to compare against; defaults to each file's own.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TieArg {
    Drop,
    Half,
}

impl From<TieArg> for TiePolicy {
    fn from(t: TieArg) -> Self {
        match t {
            TieArg::Drop => TiePolicy::Drop,
            TieArg::Half => TiePolicy::Half,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum ArenaCommand {
    /// Win, tie and loss shares per model.
    Standings {
        #[arg(long)]
        battles: PathBuf,
    },
    /// Head-to-head records, from a battle log or from published counts.
    H2h {
        #[arg(long, required_unless_present = "stated")]
        battles: Option<PathBuf>,
        #[arg(long, requires = "battles")]
        a: Option<String>,
        #[arg(long, requires = "a")]
        b: Option<String>,
        /// Published counts to cross-check.
        #[arg(long)]
        stated: Option<PathBuf>,
    },
    /// Bradley-Terry strengths.
    Rank {
        #[arg(long)]
        battles: PathBuf,
        #[arg(long, value_enum, default_value = "drop")]
        ties: TieArg,
    },
    /// Standings, head-to-heads, strengths and corrected p-values.
    Report {
        #[arg(long)]
        battles: PathBuf,
        #[arg(long)]
        stated: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "drop")]
        ties: TieArg,
        #[arg(long, default_value_t = arena::DEFAULT_ALPHA)]
        alpha: f64,
    },
}

/// Accepts integers and float notation such as `75.5e9`.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn parse_count(s: &str) -> Result<u64, String> {
    if let Ok(v) = s.parse::<u64>() {
        return Ok(v);
    }
    let f: f64 = s.parse().map_err(|_| format!("not a number: {s}"))?;
    if !(f >= 0.0) || f.fract() != 0.0 || f > u64::MAX as f64 {
        return Err(format!("not a non-negative integer: {s}"));
    }
    Ok(f as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// Provenance for one invocation. Contains no timestamps or host details,
/// so identical runs produce identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config_sha256: Option<String>,
    pub inputs: Vec<InputDigest>,
    pub outputs: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub line_errors: Vec<String>,
}

/// Per-invocation state: what was read, for the run manifest.
struct Session {
    global: GlobalOpts,
    command: String,
    inputs: Vec<InputDigest>,
    config_bytes: Option<Vec<u8>>,
    line_errors: Vec<String>,
    counter: TokenCounter,
}

impl Session {
    fn new(global: GlobalOpts, command: &str) -> Self {
        Session {
            global,
            command: command.to_string(),
            inputs: Vec::new(),
            config_bytes: None,
            line_errors: Vec::new(),
            counter: TokenCounter::default(),
        }
    }

    /// Reads a file, falling back to a bundled fixture of the same name.
    fn read_named(&mut self, path: &Path) -> CliResult<(String, Vec<u8>)> {
        let label = path.display().to_string();
        let bytes = match fs::read(path) {
            Ok(b) => b,
            Err(e) => {
                let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
                match fixtures::get(name) {
                    Some(body) if path.components().count() == 1 => body.as_bytes().to_vec(),
                    _ => return Err(config_err(anyhow!("cannot read {label}: {e}"))),
                }
            }
        };
        self.inputs.push(InputDigest {
            path: label.clone(),
            sha256: sha256_hex(&bytes),
        });
        Ok((label, bytes))
    }

    fn read_json<T: serde::de::DeserializeOwned>(&mut self, path: &Path) -> CliResult<T> {
        let (label, bytes) = self.read_named(path)?;
        serde_json::from_slice(&bytes)
            .with_context(|| format!("parsing {label}"))
            .map_err(config_err)
    }

    /// The global `--config` file, parsed, or the type's default.
    fn stage_config<T: serde::de::DeserializeOwned + Default>(&mut self) -> CliResult<T> {
        let Some(path) = self.global.config.clone() else {
            return Ok(T::default());
        };
        let bytes = fs::read(&path)
            .with_context(|| format!("reading {}", path.display()))
            .map_err(config_err)?;
        let value = serde_json::from_slice(&bytes)
            .with_context(|| format!("parsing {}", path.display()))
            .map_err(config_err)?;
        self.config_bytes = Some(bytes);
        Ok(value)
    }

    fn load_docs(&mut self, path: &Path) -> CliResult<Vec<Document>> {
        let bytes = fs::read(path)
            .with_context(|| format!("reading {}", path.display()))
            .map_err(data_err)?;
        self.inputs.push(InputDigest {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        });
        let contents = read_shard(path, &self.counter).map_err(data_err)?;
        for e in &contents.errors {
            log::warn!("{}: {e}", path.display());
            self.line_errors.push(format!("{}: {e}", path.display()));
        }
        if self.global.strict && !contents.errors.is_empty() {
            return Err(data_err(anyhow!(
                "{} malformed line(s) in {}",
                contents.errors.len(),
                path.display()
            )));
        }
        Ok(contents.docs)
    }

    fn load_all(&mut self, paths: &[PathBuf]) -> CliResult<Vec<Document>> {
        let mut docs = Vec::new();
        for p in paths {
            docs.extend(self.load_docs(p)?);
        }
        check_unique(&docs)?;
        Ok(docs)
    }

    fn load_exclude(&mut self, path: Option<&Path>) -> CliResult<HashSet<String>> {
        let Some(path) = path else {
            return Ok(HashSet::new());
        };
        let (_, bytes) = self.read_named(path)?;
        let text = String::from_utf8(bytes).map_err(data_err)?;
        Ok(text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect())
    }

    /// Writes artifacts plus the run manifest when `--out` is set.
    fn finish(self, artifacts: &Artifacts) -> CliResult<RunManifest> {
        let manifest = RunManifest {
            tool: "corpusforge".into(),
            version: VERSION.into(),
            command: self.command,
            seed: self.global.seed,
            config_sha256: self.config_bytes.as_deref().map(sha256_hex),
            inputs: self.inputs,
            outputs: artifacts.digests(),
            line_errors: self.line_errors,
        };
        if let Some(dir) = &self.global.out {
            artifacts
                .write_to(dir)
                .with_context(|| format!("writing to {}", dir.display()))
                .map_err(data_err)?;
            let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
            bytes.push(b'\n');
            fs::write(dir.join("run_manifest.json"), bytes)
                .with_context(|| format!("writing to {}", dir.display()))
                .map_err(data_err)?;
        }
        Ok(manifest)
    }
}

fn check_unique(docs: &[Document]) -> CliResult<()> {
    let mut seen = HashSet::new();
    for d in docs {
        if !seen.insert(d.id.as_str()) {
            return Err(data_err(CorpusError::DuplicateId {
                id: d.id.clone(),
                location: "across inputs".into(),
            }));
        }
    }
    Ok(())
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("reports serialize"));
}

fn print_artifact(art: &Artifacts, name: &str) {
    if let Some(bytes) = art.get(name) {
        print!("{}", String::from_utf8_lossy(bytes));
    }
}

fn json_artifact<T: Serialize>(name: &str, value: &T) -> Artifacts {
    let mut art = Artifacts::default();
    art.put_json(name, value);
    art
}

/// Parses argv and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    let workers = cli.global.workers;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(config_err)?;
    pool.install(|| dispatch(cli))
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let g = cli.global;
    match cli.command {
        Command::Manifest(a) => cmd_manifest(Session::new(g, "manifest"), a),
        Command::Clean(a) => cmd_clean(Session::new(g, "clean"), a),
        Command::Filter(a) => cmd_filter(Session::new(g, "filter"), a),
        Command::Dedup(a) => cmd_dedup(Session::new(g, "dedup"), a),
        Command::Plan(a) => cmd_plan(Session::new(g, "plan"), a, false),
        Command::Sample(a) => cmd_plan(Session::new(g, "sample"), a, true),
        Command::Pack(a) => cmd_pack(Session::new(g, "pack"), a),
        Command::Composition(a) => cmd_composition(Session::new(g, "composition"), a),
        Command::Calc(c) => cmd_calc(g, c),
        Command::Arena(c) => cmd_arena(g, c),
        Command::Pipeline => cmd_pipeline(Session::new(g, "pipeline")),
    }
}

fn cmd_manifest(mut s: Session, a: InputArgs) -> CliResult<()> {
    for p in &a.inputs {
        let bytes = fs::read(p)
            .with_context(|| format!("reading {}", p.display()))
            .map_err(data_err)?;
        s.inputs.push(InputDigest {
            path: p.display().to_string(),
            sha256: sha256_hex(&bytes),
        });
    }
    let built = build_manifest(&a.inputs, &s.counter).map_err(data_err)?;
    for (shard, e) in &built.line_errors {
        log::warn!("{shard}: {e}");
        s.line_errors.push(format!("{shard}: {e}"));
    }
    let art = json_artifact("corpus_manifest.json", &built.manifest);
    print_artifact(&art, "corpus_manifest.json");
    s.finish(&art)?;
    Ok(())
}

fn normalizer_from(cmd: Option<&str>) -> NormalizerConfig {
    match cmd {
        Some(c) => NormalizerConfig::External {
            command: c.split_whitespace().map(String::from).collect(),
        },
        None => NormalizerConfig::Builtin,
    }
}

fn cmd_clean(mut s: Session, a: CleanArgs) -> CliResult<()> {
    let rules: CleaningRuleSet = s.stage_config()?;
    let cleaner = rules.compile().map_err(config_err)?;
    let docs = s.load_all(&a.input.inputs)?;
    let counter = s.counter;
    let inputs = vec![CleanInput {
        docs,
        web_scraped: a.web_scraped,
    }];
    let normalizer = normalizer_from(a.normalizer_command.as_deref());
    let (_, art) = pipeline::clean_stage(inputs, &rules, &cleaner, &normalizer, &counter);
    print_artifact(&art, "clean_report.json");
    s.finish(&art)?;
    Ok(())
}

fn cmd_filter(mut s: Session, a: InputArgs) -> CliResult<()> {
    let thresholds: FilterThresholds = s.stage_config()?;
    thresholds.validate().map_err(config_err)?;
    let docs = s.load_all(&a.inputs)?;
    let (_, art) = pipeline::filter_stage(docs, &thresholds);
    print_artifact(&art, "filter_report.json");
    s.finish(&art)?;
    Ok(())
}

fn cmd_dedup(mut s: Session, a: DedupArgs) -> CliResult<()> {
    let mut params: DedupParams = s.stage_config()?;
    params.per_category |= a.per_category;
    params.validate().map_err(config_err)?;
    let docs = s.load_all(&a.input.inputs)?;
    let seed = s.global.seed;
    let (_, art) = pipeline::dedup_stage(docs, &params, seed).map_err(data_err)?;
    print_artifact(&art, "dedup_report.json");
    s.finish(&art)?;
    Ok(())
}

fn load_phase(s: &mut Session, a: &PhaseArgs) -> CliResult<PhaseSpec> {
    let mut spec: PhaseSpec = s.read_json(&a.phase)?;
    if a.epoching {
        spec.epoching_allowed = true;
    }
    match a.sampling {
        Some(SamplingArg::Uniform) => spec.sampling = SamplingMode::Uniform,
        Some(SamplingArg::TokenMass) => spec.sampling = SamplingMode::TokenMass,
        None => {}
    }
    if let Some(b) = a.budget {
        spec.token_budget = b;
    }
    spec.validate().map_err(config_err)?;
    Ok(spec)
}

fn cmd_plan(mut s: Session, a: PhaseArgs, draw: bool) -> CliResult<()> {
    let spec = load_phase(&mut s, &a)?;
    let exclude = s.load_exclude(a.exclude.as_deref())?;
    let (plan, mut art) = if let Some(m) = &a.manifest {
        if draw {
            return Err(config_err(anyhow!("sample needs --input documents, not a manifest")));
        }
        let manifest: crate::corpus::CorpusManifest = s.read_json(m)?;
        let plan = mixture::plan(&spec, &mixture::PoolSummary::from_manifest(&manifest))?;
        let art = json_artifact("plan_report.json", &plan);
        (plan, art)
    } else {
        let docs = s.load_all(&a.inputs)?;
        let (plan, mut art) = pipeline::plan_stage(&spec, &docs, &exclude)?;
        if draw && plan.is_feasible() {
            let (_, sampled) = pipeline::sample_stage(&spec, plan.clone(), &docs, s.global.seed, &exclude)?;
            art.extend(sampled);
        }
        (plan, art)
    };
    let main = if draw && plan.is_feasible() {
        "sample_report.json"
    } else {
        "plan_report.json"
    };
    print_artifact(&art, main);
    if !plan.is_feasible() {
        art.0.retain(|k, _| k == "plan_report.json");
        s.finish(&art)?;
        let cells: Vec<String> = plan.infeasible_cells().iter().map(ToString::to_string).collect();
        return Err(CliError::Infeasible(format!(
            "cells short of their plan: {}",
            cells.join(", ")
        )));
    }
    s.finish(&art)?;
    Ok(())
}

fn cmd_pack(mut s: Session, a: PackArgs) -> CliResult<()> {
    let docs = s.load_all(&a.input.inputs)?;
    let mode = match a.mode {
        PackModeArg::Concat => PackMode::Concat {
            boundary_tokens: a.boundary,
        },
        PackModeArg::Bins => PackMode::Bins,
    };
    let (_, art) = pipeline::pack_stage(&docs, mode, a.context).map_err(config_err)?;
    print_artifact(&art, "pack_report.json");
    s.finish(&art)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct CompositionOutcome {
    tolerance_pp: f64,
    tables: BTreeMap<String, mixture::DeviationReport>,
    sft_samples_total: u64,
    sft_samples_printed: u64,
    sft_tokens_total: u64,
    sft_tokens_printed: u64,
}

fn cmd_composition(mut s: Session, a: CompositionArgs) -> CliResult<()> {
    let tables: CompositionTables = match &a.tables {
        Some(p) => s.read_json(p)?,
        None => s.read_json(Path::new("composition_tables.json"))?,
    };
    let out = CompositionOutcome {
        tolerance_pp: a.tolerance,
        tables: [&tables.phase1, &tables.phase2, &tables.phase3]
            .into_iter()
            .map(|t| (t.name.clone(), t.check(a.tolerance)))
            .collect(),
        sft_samples_total: tables.sft.rows.iter().map(|r| r.samples).sum(),
        sft_samples_printed: tables.sft.printed_total_samples,
        sft_tokens_total: tables.sft.rows.iter().map(|r| r.tokens).sum(),
        sft_tokens_printed: tables.sft.printed_total_tokens,
    };
    let flagged: usize = out.tables.values().map(|r| r.flagged).sum();
    let art = json_artifact("composition_report.json", &out);
    print_artifact(&art, "composition_report.json");
    s.finish(&art)?;
    if flagged > 0 {
        log::warn!("{flagged} printed percentage(s) differ from recomputed shares beyond tolerance");
    }
    Ok(())
}

/// A training config file may be a bare config or a reference wrapper.
#[derive(Deserialize)]
#[serde(untagged)]
enum ConfigFile {
    Reference(ReferenceConfig),
    Bare(TrainConfig),
}

impl ConfigFile {
    fn into_reference(self, id: &str) -> ReferenceConfig {
        match self {
            ConfigFile::Reference(r) => r,
            ConfigFile::Bare(config) => ReferenceConfig {
                id: id.to_string(),
                config,
                stated_tokens_per_batch: None,
                text_peak_lr: None,
                text_min_lr: None,
                nodes: None,
                gpus_per_node: None,
            },
        }
    }
}

fn load_train(s: &mut Session, p: &Path) -> CliResult<ReferenceConfig> {
    let f: ConfigFile = s.read_json(p)?;
    let id = p.file_stem().and_then(|x| x.to_str()).unwrap_or("config");
    Ok(f.into_reference(id))
}

#[derive(Debug, Serialize)]
struct ProjectionOutcome {
    hardware: HardwareProfile,
    budget_tokens: u64,
    projection: calc::Projection,
    rounded: calc::Projection,
}

#[derive(Debug, Serialize)]
struct ValidationOutcome {
    findings: BTreeMap<String, Vec<calc::Finding>>,
    stage_consistency: Option<calc::Finding>,
}

fn cmd_calc(g: GlobalOpts, c: CalcCommand) -> CliResult<()> {
    let calc_err = |e: calc::CalcError| config_err(e);
    let (name, art, s) = match c {
        CalcCommand::Batch { tokens, steps, context } => {
            let s = Session::new(g, "calc batch");
            let d = calc::derive_gbs(tokens, steps, context).map_err(calc_err)?;
            ("batch.json", json_artifact("batch.json", &d), s)
        }
        CalcCommand::Steps { tokens, train_config } => {
            let mut s = Session::new(g, "calc steps");
            let r = load_train(&mut s, &train_config)?;
            let d = calc::derive_steps(tokens, &r.config).map_err(calc_err)?;
            ("steps.json", json_artifact("steps.json", &d), s)
        }
        CalcCommand::Noise { lr, batch } => {
            let s = Session::new(g, "calc noise");
            let v = calc::noise_scale(lr, batch).map_err(calc_err)?;
            let body = serde_json::json!({"lr": lr, "batch": batch, "noise_scale": v});
            ("noise.json", json_artifact("noise.json", &body), s)
        }
        CalcCommand::Wsd {
            train_config,
            stable,
            decay,
            step,
            points,
            shape,
        } => {
            let mut s = Session::new(g, "calc wsd");
            let r = load_train(&mut s, &train_config)?;
            let shape = match shape {
                ShapeArg::Cosine => DecayShape::Cosine,
                ShapeArg::Linear => DecayShape::Linear,
            };
            let schedule = match step {
                Some(st) => vec![(st, calc::wsd_lr(st, &r.config, stable, decay, shape).map_err(calc_err)?)],
                None => calc::wsd_schedule(&r.config, stable, decay, shape, points).map_err(calc_err)?,
            };
            let body = serde_json::json!({
                "shape": shape,
                "warmup_iters": r.config.warmup_iters,
                "stable_iters": stable,
                "decay_iters": decay,
                "schedule": schedule.iter().map(|(s, lr)| serde_json::json!({"step": s, "lr": lr})).collect::<Vec<_>>(),
            });
            ("wsd.json", json_artifact("wsd.json", &body), s)
        }
        CalcCommand::Throughput { hw } => {
            let mut s = Session::new(g, "calc throughput");
            let profile: HardwareProfile = s.read_json(&hw)?;
            let t = calc::throughput(&profile).map_err(calc_err)?;
            ("throughput.json", json_artifact("throughput.json", &t), s)
        }
        CalcCommand::Project { hw, budget } => {
            let mut s = Session::new(g, "calc project");
            let profile: HardwareProfile = s.read_json(&hw)?;
            let p = calc::project(budget as f64, &profile).map_err(calc_err)?;
            let body = ProjectionOutcome {
                hardware: profile,
                budget_tokens: budget,
                rounded: p.rounded(),
                projection: p,
            };
            ("projection.json", json_artifact("projection.json", &body), s)
        }
        CalcCommand::Validate {
            train_configs,
            reference,
        } => {
            let mut s = Session::new(g, "calc validate");
            let reference = match &reference {
                Some(p) => Some(load_train(&mut s, p)?),
                None => None,
            };
            let mut findings = BTreeMap::new();
            let mut configs = Vec::new();
            for p in &train_configs {
                let own = load_train(&mut s, p)?;
                let against = reference.as_ref().unwrap_or(&own);
                findings.insert(own.id.clone(), calc::validate_config(&own.config, against));
                configs.push((own.id.clone(), own.config.clone()));
            }
            let stage_consistency = (configs.len() > 1).then(|| {
                let refs: Vec<(&str, &TrainConfig)> = configs.iter().map(|(n, c)| (n.as_str(), c)).collect();
                calc::stage_consistency(&refs)
            });
            let body = ValidationOutcome {
                findings,
                stage_consistency,
            };
            ("validation.json", json_artifact("validation.json", &body), s)
        }
    };
    print_artifact(&art, name);
    s.finish(&art)?;
    Ok(())
}

fn load_battles(s: &mut Session, p: &Path) -> CliResult<Vec<Battle>> {
    let (label, bytes) = s.read_named(p)?;
    let text = String::from_utf8(bytes).map_err(data_err)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .with_context(|| format!("{label}:{}", i + 1))
                .map_err(data_err)
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct ArenaOutcome {
    report: arena::ArenaReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    stated: Option<arena::StatedCheck>,
}

fn cmd_arena(g: GlobalOpts, c: ArenaCommand) -> CliResult<()> {
    let strict = g.strict;
    let arena_err = |e: arena::ArenaError| data_err(e);
    let mut consistent = true;
    let (name, art, s) = match c {
        ArenaCommand::Standings { battles } => {
            let mut s = Session::new(g, "arena standings");
            let b = load_battles(&mut s, &battles)?;
            (
                "standings.json",
                json_artifact("standings.json", &arena::standings(&b)),
                s,
            )
        }
        ArenaCommand::H2h { battles, a, b, stated } => {
            let mut s = Session::new(g, "arena h2h");
            let mut out = serde_json::Map::new();
            if let Some(p) = battles {
                let log = load_battles(&mut s, &p)?;
                let records: Vec<arena::HeadToHead> = match (a, b) {
                    (Some(a), Some(b)) => vec![arena::head_to_head(&log, &a, &b).map_err(arena_err)?],
                    _ => arena::pairs(&log)
                        .into_iter()
                        .map(|(a, b)| arena::head_to_head(&log, &a, &b))
                        .collect::<Result<_, _>>()
                        .map_err(arena_err)?,
                };
                consistent &= records.iter().all(|h| h.consistency_flag);
                out.insert(
                    "head_to_heads".into(),
                    serde_json::to_value(records).expect("serializes"),
                );
            }
            if let Some(p) = stated {
                let st: StatedArena = s.read_json(&p)?;
                let check = st.check();
                consistent &= check.all_consistent();
                out.insert("stated".into(), serde_json::to_value(check).expect("serializes"));
            }
            ("h2h.json", json_artifact("h2h.json", &out), s)
        }
        ArenaCommand::Rank { battles, ties } => {
            let mut s = Session::new(g, "arena rank");
            let b = load_battles(&mut s, &battles)?;
            let st = arena::bt_fit(&b, ties.into()).map_err(arena_err)?;
            ("strengths.json", json_artifact("strengths.json", &st), s)
        }
        ArenaCommand::Report {
            battles,
            stated,
            ties,
            alpha,
        } => {
            let mut s = Session::new(g, "arena report");
            let b = load_battles(&mut s, &battles)?;
            let report = arena::report(&b, ties.into(), alpha).map_err(arena_err)?;
            consistent &= report.all_consistent();
            let stated = match stated {
                Some(p) => {
                    let st: StatedArena = s.read_json(&p)?;
                    let check = st.check();
                    consistent &= check.all_consistent();
                    Some(check)
                }
                None => None,
            };
            let mut art = Artifacts::default();
            art.0
                .insert("report.txt".into(), arena::render_text(&report).into_bytes());
            art.put_json("arena_report.json", &ArenaOutcome { report, stated });
            ("arena_report.json", art, s)
        }
    };
    print_artifact(&art, name);
    s.finish(&art)?;
    if strict && !consistent {
        return Err(CliError::Strict(
            "head-to-head counts are internally inconsistent".into(),
        ));
    }
    if !consistent {
        log::warn!("head-to-head counts are internally inconsistent");
    }
    Ok(())
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

#[derive(Debug, Serialize)]
struct PipelineSummary {
    stages: Vec<Stage>,
    docs_loaded: u64,
    docs_out: u64,
    outputs: BTreeMap<String, String>,
}

fn cmd_pipeline(mut s: Session) -> CliResult<()> {
    let cfg_path = s
        .global
        .config
        .clone()
        .ok_or_else(|| config_err(anyhow!("pipeline needs --config")))?;
    let cfg: RunConfig = s.stage_config()?;
    let base = cfg_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let seed = cfg.seed.unwrap_or(s.global.seed);
    s.global.seed = seed;
    let stages = cfg.stages();
    let (art, docs_loaded, docs_out) = run_pipeline(&mut s, &cfg, &base, &stages, seed)?;
    let summary = PipelineSummary {
        stages,
        docs_loaded,
        docs_out,
        outputs: art.digests(),
    };
    print_json(&summary);
    s.finish(&art)?;
    Ok(())
}

/// Returns the artifacts and the document counts loaded and emitted.
fn run_pipeline(
    s: &mut Session,
    cfg: &RunConfig,
    base: &Path,
    stages: &[Stage],
    seed: u64,
) -> CliResult<(Artifacts, u64, u64)> {
    let load_cfg = |p: &Option<PathBuf>| p.as_ref().map(|p| resolve(base, p));
    let rules: CleaningRuleSet = match load_cfg(&cfg.cleaning_rules) {
        Some(p) => s.read_json(&p)?,
        None => CleaningRuleSet::default(),
    };
    let thresholds: FilterThresholds = match load_cfg(&cfg.filter_thresholds) {
        Some(p) => s.read_json(&p)?,
        None => FilterThresholds::default(),
    };
    thresholds.validate().map_err(config_err)?;
    let params: DedupParams = match load_cfg(&cfg.dedup) {
        Some(p) => s.read_json(&p)?,
        None => DedupParams::default(),
    };
    params.validate().map_err(config_err)?;
    let spec: Option<PhaseSpec> = match load_cfg(&cfg.phase) {
        Some(p) => {
            let spec: PhaseSpec = s.read_json(&p)?;
            spec.validate().map_err(config_err)?;
            Some(spec)
        }
        None => None,
    };
    if stages.iter().any(|st| matches!(st, Stage::Plan | Stage::Sample)) && spec.is_none() {
        return Err(config_err(anyhow!("plan and sample stages need a phase spec")));
    }
    let exclude = match load_cfg(&cfg.exclude_ids) {
        Some(p) => s.load_exclude(Some(&p))?,
        None => HashSet::new(),
    };

    let mut batches = Vec::new();
    for input in &cfg.inputs {
        let docs = s.load_docs(&resolve(base, &input.path))?;
        batches.push(CleanInput {
            docs,
            web_scraped: input.web_scraped,
        });
    }
    check_unique(&batches.iter().flat_map(|b| b.docs.iter().cloned()).collect::<Vec<_>>())?;
    let docs_loaded = batches.iter().map(|b| b.docs.len() as u64).sum();

    let mut art = Artifacts::default();
    let mut docs: Vec<Document> = if stages.contains(&Stage::Clean) {
        let cleaner = rules.compile().map_err(config_err)?;
        let (d, a) = pipeline::clean_stage(batches, &rules, &cleaner, &cfg.normalizer, &s.counter);
        art.extend(a);
        d
    } else {
        batches.into_iter().flat_map(|b| b.docs).collect()
    };
    if stages.contains(&Stage::Filter) {
        let (d, a) = pipeline::filter_stage(docs, &thresholds);
        art.extend(a);
        docs = d;
    }
    if stages.contains(&Stage::Dedup) {
        let (d, a) = pipeline::dedup_stage(docs, &params, seed).map_err(data_err)?;
        art.extend(a);
        docs = d;
    }
    if let Some(spec) = spec
        .as_ref()
        .filter(|_| stages.contains(&Stage::Plan) || stages.contains(&Stage::Sample))
    {
        let (plan, a) = pipeline::plan_stage(spec, &docs, &exclude)?;
        art.extend(a);
        if !plan.is_feasible() {
            let cells: Vec<String> = plan.infeasible_cells().iter().map(ToString::to_string).collect();
            let partial = std::mem::take(&mut art);
            if let Some(dir) = &s.global.out {
                partial.write_to(dir).map_err(data_err)?;
            }
            return Err(CliError::Infeasible(format!(
                "cells short of their plan: {}",
                cells.join(", ")
            )));
        }
        if stages.contains(&Stage::Sample) {
            let (d, a) = pipeline::sample_stage(spec, plan, &docs, seed, &exclude)?;
            art.extend(a);
            docs = d;
        }
    }
    if stages.contains(&Stage::Pack) {
        let mode = cfg.pack.mode.unwrap_or_default();
        let ctx = cfg
            .pack
            .context_length
            .or(spec.as_ref().map(|s| s.context_length))
            .unwrap_or(8192);
        let (_, a) = pipeline::pack_stage(&docs, mode, ctx).map_err(config_err)?;
        art.extend(a);
    }
    Ok((art, docs_loaded, docs.len() as u64))
}

pub fn init_logging() {
    let env = env_logger::Env::new().filter_or(LOG_ENV, "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}
