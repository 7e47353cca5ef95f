//! Training-schedule arithmetic: batch/step derivation, noise scale,
//! Warmup-Stable-Decay learning rates, config validation and
//! throughput/cost projection.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SECONDS_PER_DAY: f64 = 86_400.0;

/// Step band considered stable for a 250B-token stage; scaled linearly
/// with the token budget.
pub const STABLE_STEPS_AT_250B: (f64, f64) = (25_000.0, 100_000.0);
pub const STABLE_BAND_REFERENCE_TOKENS: f64 = 250e9;

#[derive(Debug, Error, PartialEq)]
pub enum CalcError {
    #[error("number of steps must be > 0")]
    ZeroSteps,
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("step {step} outside [0, {total}]")]
    StepOutOfRange { step: u64, total: u64 },
    #[error("warmup {warmup} + stable {stable} + decay {decay} != total_iters {total}")]
    ScheduleMismatch {
        warmup: u64,
        stable: u64,
        decay: u64,
        total: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub context_length: u64,
    pub global_batch_sequences: u64,
    pub micro_batch_sequences: u64,
    pub peak_lr: f64,
    pub min_lr: f64,
    pub warmup_iters: u64,
    pub total_iters: u64,
    pub moe_aux_loss_coeff: f64,
    pub tp: u64,
    pub pp: u64,
    pub ep: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardwareProfile {
    #[serde(default)]
    pub name: String,
    pub gpus: u64,
    pub tokens_per_step: f64,
    /// Seconds.
    pub step_time: f64,
    /// Currency per day.
    pub cost_per_day: f64,
}

impl HardwareProfile {
    // Negated comparisons so that NaN fails too.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), CalcError> {
        if self.gpus == 0 || !(self.tokens_per_step > 0.0) || !(self.step_time > 0.0) {
            return Err(CalcError::Invalid(
                "gpus, tokens_per_step and step_time must be positive".into(),
            ));
        }
        if !(self.cost_per_day >= 0.0) {
            return Err(CalcError::Invalid("cost_per_day must be >= 0".into()));
        }
        Ok(())
    }
}

pub fn global_batch_tokens(cfg: &TrainConfig) -> u64 {
    cfg.global_batch_sequences * cfg.context_length
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbsDerivation {
    /// Tokens per optimizer step, D / n_steps.
    pub gb_tokens: f64,
    pub gbs: u64,
    /// D − GBS · context · n_steps (negative when the rounded batch
    /// overshoots the budget).
    pub residual: i128,
}

pub fn derive_gbs(total_tokens: u64, n_steps: u64, context_length: u64) -> Result<GbsDerivation, CalcError> {
    if n_steps == 0 {
        return Err(CalcError::ZeroSteps);
    }
    if context_length == 0 || total_tokens == 0 {
        return Err(CalcError::Invalid("tokens and context_length must be > 0".into()));
    }
    let gb_tokens = total_tokens as f64 / n_steps as f64;
    let gbs = (gb_tokens / context_length as f64).round() as u64;
    let residual = total_tokens as i128 - (gbs as i128 * context_length as i128 * n_steps as i128);
    Ok(GbsDerivation {
        gb_tokens,
        gbs,
        residual,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepsDerivation {
    pub steps: u64,
    pub in_stable_regime: bool,
    /// The stable band scaled to this budget.
    pub stable_band: (f64, f64),
}

pub fn stable_band(total_tokens: u64) -> (f64, f64) {
    let scale = total_tokens as f64 / STABLE_BAND_REFERENCE_TOKENS;
    (STABLE_STEPS_AT_250B.0 * scale, STABLE_STEPS_AT_250B.1 * scale)
}

pub fn derive_steps(total_tokens: u64, cfg: &TrainConfig) -> Result<StepsDerivation, CalcError> {
    let per_step = global_batch_tokens(cfg);
    if per_step == 0 {
        return Err(CalcError::Invalid("global batch tokens must be > 0".into()));
    }
    let steps = total_tokens.div_ceil(per_step);
    let band = stable_band(total_tokens);
    Ok(StepsDerivation {
        steps,
        in_stable_regime: (band.0..=band.1).contains(&(steps as f64)),
        stable_band: band,
    })
}

/// Optimizer noise proxy η/√B.
pub fn noise_scale(lr: f64, batch: u64) -> Result<f64, CalcError> {
    if batch == 0 || lr < 0.0 {
        return Err(CalcError::Invalid("lr must be >= 0 and batch > 0".into()));
    }
    Ok(lr / (batch as f64).sqrt())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayShape {
    #[default]
    Cosine,
    Linear,
}

/// Warmup-Stable-Decay: linear 0→peak over warmup, flat peak, then peak→min
/// over the decay segment. Continuous at both joins.
pub fn wsd_lr(
    step: u64,
    cfg: &TrainConfig,
    stable_iters: u64,
    decay_iters: u64,
    shape: DecayShape,
) -> Result<f64, CalcError> {
    let total = cfg.total_iters;
    if cfg.warmup_iters + stable_iters + decay_iters != total {
        return Err(CalcError::ScheduleMismatch {
            warmup: cfg.warmup_iters,
            stable: stable_iters,
            decay: decay_iters,
            total,
        });
    }
    if step > total {
        return Err(CalcError::StepOutOfRange { step, total });
    }
    let (peak, min) = (cfg.peak_lr, cfg.min_lr);
    let warmup = cfg.warmup_iters;
    if step < warmup {
        return Ok(peak * step as f64 / warmup as f64);
    }
    let decay_start = warmup + stable_iters;
    if step <= decay_start {
        return Ok(peak);
    }
    let progress = (step - decay_start) as f64 / decay_iters as f64;
    let frac = match shape {
        DecayShape::Cosine => 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()),
        DecayShape::Linear => 1.0 - progress,
    };
    Ok(min + (peak - min) * frac)
}

/// `points` evenly spaced steps from 0 to total_iters inclusive.
pub fn wsd_schedule(
    cfg: &TrainConfig,
    stable_iters: u64,
    decay_iters: u64,
    shape: DecayShape,
    points: usize,
) -> Result<Vec<(u64, f64)>, CalcError> {
    let points = points.max(2);
    (0..points)
        .map(|i| {
            let step = ((i as f64 / (points - 1) as f64) * cfg.total_iters as f64).round() as u64;
            wsd_lr(step, cfg, stable_iters, decay_iters, shape).map(|lr| (step, lr))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Throughput {
    pub tokens_per_sec_gpu: f64,
    pub tokens_per_sec_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub tokens_per_sec_gpu: f64,
    pub tokens_per_sec_total: f64,
    pub days_for_budget: f64,
    pub cost_for_budget: f64,
}

pub fn throughput(hw: &HardwareProfile) -> Result<Throughput, CalcError> {
    hw.validate()?;
    let total = hw.tokens_per_step / hw.step_time;
    Ok(Throughput {
        tokens_per_sec_total: total,
        tokens_per_sec_gpu: total / hw.gpus as f64,
    })
}

#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn project(budget_tokens: f64, hw: &HardwareProfile) -> Result<Projection, CalcError> {
    if !(budget_tokens > 0.0) {
        return Err(CalcError::Invalid("budget must be > 0".into()));
    }
    let t = throughput(hw)?;
    let days = budget_tokens / (t.tokens_per_sec_total * SECONDS_PER_DAY);
    Ok(Projection {
        tokens_per_sec_gpu: t.tokens_per_sec_gpu,
        tokens_per_sec_total: t.tokens_per_sec_total,
        days_for_budget: days,
        cost_for_budget: days * hw.cost_per_day,
    })
}

impl Projection {
    /// The same figures at three significant digits, for reports.
    pub fn rounded(&self) -> Projection {
        Projection {
            tokens_per_sec_gpu: round_sig(self.tokens_per_sec_gpu, 3),
            tokens_per_sec_total: round_sig(self.tokens_per_sec_total, 3),
            days_for_budget: round_sig(self.days_for_budget, 3),
            cost_for_budget: round_sig(self.cost_for_budget, 3),
        }
    }
}

pub fn round_sig(x: f64, digits: u32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let mag = x.abs().log10().floor() as i32;
    let factor = 10f64.powi(digits as i32 - 1 - mag);
    (x * factor).round() / factor
}

/// A published configuration and the figures stated alongside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceConfig {
    pub id: String,
    pub config: TrainConfig,
    #[serde(default)]
    pub stated_tokens_per_batch: Option<f64>,
    /// Learning rates quoted in prose, which may disagree with the table.
    #[serde(default)]
    pub text_peak_lr: Option<f64>,
    #[serde(default)]
    pub text_min_lr: Option<f64>,
    #[serde(default)]
    pub nodes: Option<u64>,
    #[serde(default)]
    pub gpus_per_node: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingKind {
    Consistent,
    Mismatch,
    Info,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub check: String,
    pub kind: FindingKind,
    pub message: String,
}

impl Finding {
    fn new(check: &str, kind: FindingKind, message: String) -> Self {
        Finding {
            check: check.to_string(),
            kind,
            message,
        }
    }
}

/// Relative tolerance for "≈" comparisons against figures printed to
/// three significant digits.
pub const STATED_FIGURE_TOLERANCE: f64 = 0.01;

fn group_thousands(n: u64) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, c) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

fn millions(x: f64) -> String {
    format!("{:.1}M", x / 1e6)
}

pub fn validate_config(cfg: &TrainConfig, reference: &ReferenceConfig) -> Vec<Finding> {
    use FindingKind::*;
    let mut out = Vec::new();

    if cfg.micro_batch_sequences == 0 || !cfg.global_batch_sequences.is_multiple_of(cfg.micro_batch_sequences) {
        out.push(Finding::new(
            "gbs_divisible_by_mbs",
            Mismatch,
            format!(
                "GBS {} is not divisible by MBS {}",
                cfg.global_batch_sequences, cfg.micro_batch_sequences
            ),
        ));
    } else {
        out.push(Finding::new(
            "gbs_divisible_by_mbs",
            Consistent,
            format!(
                "GBS {} = {} x MBS {}",
                cfg.global_batch_sequences,
                cfg.global_batch_sequences / cfg.micro_batch_sequences,
                cfg.micro_batch_sequences
            ),
        ));
    }
    if cfg.min_lr > cfg.peak_lr {
        out.push(Finding::new(
            "lr_order",
            Mismatch,
            format!("min_lr {} exceeds peak_lr {}", cfg.min_lr, cfg.peak_lr),
        ));
    }
    if cfg.warmup_iters > cfg.total_iters {
        out.push(Finding::new(
            "warmup_within_total",
            Mismatch,
            format!("warmup {} exceeds total {}", cfg.warmup_iters, cfg.total_iters),
        ));
    }

    let tokens = global_batch_tokens(cfg);
    if let Some(stated) = reference.stated_tokens_per_batch {
        let rel = (tokens as f64 - stated).abs() / stated;
        let (kind, word) = if rel <= STATED_FIGURE_TOLERANCE {
            (Consistent, "consistent")
        } else {
            (Mismatch, "inconsistent")
        };
        out.push(Finding::new(
            "tokens_per_batch",
            kind,
            format!("{} ≈ {}, {word}", group_thousands(tokens), millions(stated)),
        ));
    }

    let r = &reference.config;
    let fields: [(&str, f64, f64); 11] = [
        ("context_length", cfg.context_length as f64, r.context_length as f64),
        (
            "global_batch_sequences",
            cfg.global_batch_sequences as f64,
            r.global_batch_sequences as f64,
        ),
        (
            "micro_batch_sequences",
            cfg.micro_batch_sequences as f64,
            r.micro_batch_sequences as f64,
        ),
        ("peak_lr", cfg.peak_lr, r.peak_lr),
        ("min_lr", cfg.min_lr, r.min_lr),
        ("warmup_iters", cfg.warmup_iters as f64, r.warmup_iters as f64),
        ("total_iters", cfg.total_iters as f64, r.total_iters as f64),
        ("moe_aux_loss_coeff", cfg.moe_aux_loss_coeff, r.moe_aux_loss_coeff),
        ("tp", cfg.tp as f64, r.tp as f64),
        ("pp", cfg.pp as f64, r.pp as f64),
        ("ep", cfg.ep as f64, r.ep as f64),
    ];
    for (name, got, want) in fields {
        if got != want {
            out.push(Finding::new(
                &format!("reference.{name}"),
                Mismatch,
                format!("{name} = {got} but {} has {want}", reference.id),
            ));
        }
    }

    if let Some(text_peak) = reference.text_peak_lr {
        if text_peak != r.peak_lr {
            out.push(Finding::new(
                "reference.peak_lr_text",
                Mismatch,
                format!(
                    "{} lists peak learning rate {:e} but the accompanying text states {:e}",
                    reference.id, r.peak_lr, text_peak
                ),
            ));
        }
    }
    if let Some(text_min) = reference.text_min_lr {
        if text_min != r.min_lr {
            out.push(Finding::new(
                "reference.min_lr_text",
                Mismatch,
                format!(
                    "{} lists minimum learning rate {:e} but the accompanying text states {:e}",
                    reference.id, r.min_lr, text_min
                ),
            ));
        }
    }

    if let (Some(nodes), Some(per)) = (reference.nodes, reference.gpus_per_node) {
        let devices = nodes * per;
        let model_parallel = cfg.tp * cfg.pp * cfg.ep;
        if model_parallel == 0 || devices % model_parallel != 0 {
            out.push(Finding::new(
                "parallelism",
                Mismatch,
                format!("TPxPPxEP = {model_parallel} does not divide {nodes} nodes x {per} GPUs = {devices} devices"),
            ));
        } else {
            out.push(Finding::new(
                "parallelism",
                Info,
                format!(
                    "TPxPPxEP = {}x{}x{} = {model_parallel} on {nodes} nodes x {per} GPUs = {devices} devices, data-parallel degree {}",
                    cfg.tp,
                    cfg.pp,
                    cfg.ep,
                    devices / model_parallel
                ),
            ));
        }
    }
    out
}

/// Whether every stage uses the same tokens per optimizer step.
pub fn stage_consistency(stages: &[(&str, &TrainConfig)]) -> Finding {
    let tokens: Vec<(&str, u64)> = stages.iter().map(|(n, c)| (*n, global_batch_tokens(c))).collect();
    let listing = tokens
        .iter()
        .map(|(n, t)| format!("{n}: {}", group_thousands(*t)))
        .collect::<Vec<_>>()
        .join(", ");
    let same = tokens.windows(2).all(|w| w[0].1 == w[1].1);
    Finding::new(
        "stage_tokens_per_batch",
        if same {
            FindingKind::Consistent
        } else {
            FindingKind::Mismatch
        },
        listing,
    )
}
