//! Curriculum mixture planning: per-cell token allocation against a phase
//! budget, deterministic document sampling, and composition validation.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Category, CellKey, CorpusManifest, Document, Lang};
use crate::seed::derive_seed;

pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;
pub const DEFAULT_TOLERANCE_PP: f64 = 0.25;

#[derive(Debug, Error, PartialEq)]
pub enum MixtureError {
    #[error("target weights sum to {0}, expected 1")]
    WeightSum(f64),
    #[error("invalid phase spec: {0}")]
    Spec(String),
    #[error("cell {0} is not present in the pool")]
    UnknownCell(CellKey),
    #[error("plan is infeasible for {0:?}")]
    Infeasible(Vec<CellKey>),
    #[error("cell {cell} exhausted after {achieved} of {planned} tokens")]
    Exhausted { cell: CellKey, achieved: u64, planned: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PhaseId {
    P1,
    P2,
    P3,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Every eligible document is equally likely to be drawn next.
    #[default]
    Uniform,
    /// Draw probability proportional to the document's token count.
    TokenMass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSpec {
    pub phase_id: PhaseId,
    pub context_length: u64,
    pub token_budget: u64,
    pub targets: BTreeMap<CellKey, f64>,
    /// Documents must have strictly more words than this.
    #[serde(default)]
    pub min_word_count: Option<u64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub epoching_allowed: bool,
    #[serde(default)]
    pub sampling: SamplingMode,
}

impl PhaseSpec {
    pub fn validate(&self) -> Result<(), MixtureError> {
        if self.token_budget == 0 {
            return Err(MixtureError::Spec("token_budget must be > 0".into()));
        }
        if self.targets.is_empty() {
            return Err(MixtureError::Spec("no target cells".into()));
        }
        if let Some((cell, w)) = self.targets.iter().find(|(_, w)| !(0.0..=1.0).contains(*w)) {
            return Err(MixtureError::Spec(format!("weight {w} for {cell} outside [0, 1]")));
        }
        let sum: f64 = self.targets.values().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(MixtureError::WeightSum(sum));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, MixtureError> {
        let spec: PhaseSpec = serde_json::from_str(text).map_err(|e| MixtureError::Spec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn eligible(&self, doc: &Document) -> bool {
        self.min_word_count.is_none_or(|m| doc.word_count > m)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellPool {
    pub available_tokens: u64,
    pub doc_count: u64,
    pub max_doc_tokens: u64,
}

/// Token availability per cell. Every (lang, category) cell is present,
/// possibly with zero tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSummary {
    pub cells: BTreeMap<CellKey, CellPool>,
}

fn all_cells() -> impl Iterator<Item = CellKey> {
    Lang::ALL
        .into_iter()
        .flat_map(|l| Category::ALL.into_iter().map(move |c| CellKey::new(l, c)))
}

impl PoolSummary {
    pub fn empty() -> Self {
        PoolSummary {
            cells: all_cells().map(|c| (c, CellPool::default())).collect(),
        }
    }

    /// From manifest totals. Document-level filters cannot be applied here.
    pub fn from_manifest(manifest: &CorpusManifest) -> Self {
        let mut pool = PoolSummary::empty();
        for (cell, &tokens) in &manifest.totals {
            pool.cells.entry(*cell).or_default().available_tokens += tokens;
        }
        pool
    }

    pub fn from_documents<'a>(
        docs: impl IntoIterator<Item = &'a Document>,
        spec: &PhaseSpec,
        exclude: &HashSet<String>,
    ) -> Self {
        let mut pool = PoolSummary::empty();
        for d in docs {
            if !spec.eligible(d) || exclude.contains(&d.id) {
                continue;
            }
            let cell = pool.cells.entry(d.cell()).or_default();
            cell.available_tokens += d.token_count;
            cell.doc_count += 1;
            cell.max_doc_tokens = cell.max_doc_tokens.max(d.token_count);
        }
        pool
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFeasibility {
    pub available_tokens: u64,
    pub feasible: bool,
    /// Planned minus available when the pool is too small.
    pub shortfall: u64,
    /// Passes over the pool needed to meet the plan (1.0 when it fits).
    pub epoch_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixturePlan {
    pub phase_id: PhaseId,
    pub token_budget: u64,
    pub min_word_count: Option<u64>,
    pub epoching_allowed: bool,
    pub sampling: SamplingMode,
    pub allocations: BTreeMap<CellKey, u64>,
    pub feasibility: BTreeMap<CellKey, CellFeasibility>,
    pub selected: BTreeMap<CellKey, Vec<String>>,
    pub achieved: BTreeMap<CellKey, u64>,
    /// (achieved − planned) / token_budget per cell.
    pub deviations: BTreeMap<CellKey, f64>,
}

impl MixturePlan {
    pub fn is_feasible(&self) -> bool {
        self.feasibility.values().all(|f| f.feasible)
    }

    pub fn infeasible_cells(&self) -> Vec<CellKey> {
        self.feasibility
            .iter()
            .filter(|(_, f)| !f.feasible)
            .map(|(c, _)| *c)
            .collect()
    }

    pub fn planned_total(&self) -> u64 {
        self.allocations.values().sum()
    }
}

/// Round-half-even per cell, then the largest allocation absorbs the
/// residual so the plan sums exactly to the budget.
pub fn allocate(targets: &BTreeMap<CellKey, f64>, budget: u64) -> BTreeMap<CellKey, u64> {
    let mut alloc: BTreeMap<CellKey, u64> = targets
        .iter()
        .map(|(c, &w)| (*c, (w * budget as f64).round_ties_even().max(0.0) as u64))
        .collect();
    let sum: i128 = alloc.values().map(|&v| v as i128).sum();
    let residual = budget as i128 - sum;
    if residual != 0 {
        let largest = alloc
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
            .map(|(c, _)| *c);
        if let Some(cell) = largest {
            let v = alloc.get_mut(&cell).expect("largest cell exists");
            *v = (*v as i128 + residual).max(0) as u64;
        }
    }
    alloc
}

pub fn plan(spec: &PhaseSpec, pool: &PoolSummary) -> Result<MixturePlan, MixtureError> {
    spec.validate()?;
    for cell in spec.targets.keys() {
        if !pool.cells.contains_key(cell) {
            return Err(MixtureError::UnknownCell(*cell));
        }
    }
    let allocations = allocate(&spec.targets, spec.token_budget);
    let feasibility = allocations
        .iter()
        .map(|(cell, &planned)| {
            let available = pool.cells[cell].available_tokens;
            let short = planned.saturating_sub(available);
            let f = if short == 0 {
                CellFeasibility {
                    available_tokens: available,
                    feasible: true,
                    shortfall: 0,
                    epoch_factor: 1.0,
                }
            } else {
                let can_epoch = spec.epoching_allowed && available > 0;
                CellFeasibility {
                    available_tokens: available,
                    feasible: can_epoch,
                    shortfall: short,
                    epoch_factor: if available > 0 {
                        planned as f64 / available as f64
                    } else {
                        f64::INFINITY
                    },
                }
            };
            (*cell, f)
        })
        .collect();
    Ok(MixturePlan {
        phase_id: spec.phase_id,
        token_budget: spec.token_budget,
        min_word_count: spec.min_word_count,
        epoching_allowed: spec.epoching_allowed,
        sampling: spec.sampling,
        allocations,
        feasibility,
        selected: BTreeMap::new(),
        achieved: BTreeMap::new(),
        deviations: BTreeMap::new(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampledDoc {
    pub id: String,
    pub cell: CellKey,
    pub tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleOutcome {
    /// Cell-interleaved output order.
    pub sequence: Vec<SampledDoc>,
    pub selected: BTreeMap<CellKey, Vec<String>>,
    pub achieved: BTreeMap<CellKey, u64>,
    /// Number of passes started over each cell's pool.
    pub epochs: BTreeMap<CellKey, u32>,
}

fn draw_order(cands: &mut [&Document], mode: SamplingMode, rng: &mut ChaCha8Rng) {
    match mode {
        SamplingMode::Uniform => cands.shuffle(rng),
        SamplingMode::TokenMass => {
            // Weighted sampling without replacement: sort by u^(1/w) desc.
            let mut keyed: Vec<(f64, usize)> = cands
                .iter()
                .enumerate()
                .map(|(i, d)| {
                    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                    let key = if d.token_count == 0 {
                        0.0
                    } else {
                        u.ln() / d.token_count as f64
                    };
                    (key, i)
                })
                .collect();
            keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let snapshot: Vec<&Document> = cands.to_vec();
            for (slot, (_, i)) in cands.iter_mut().zip(keyed) {
                *slot = snapshot[i];
            }
        }
    }
}

/// Draws one cell. Stops at the document boundary nearest the plan: a
/// document that would overshoot is taken only if the overshoot is no
/// larger than the remaining gap.
fn sample_cell(
    cell: CellKey,
    planned: u64,
    mut cands: Vec<&Document>,
    plan: &MixturePlan,
    seed: u64,
) -> Result<(Vec<SampledDoc>, u32), MixtureError> {
    cands.sort_by(|a, b| a.id.cmp(&b.id));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &cell.to_string()));
    let pool_tokens: u64 = cands.iter().map(|d| d.token_count).sum();
    let mut out = Vec::new();
    let mut achieved = 0u64;
    let mut epochs = 0u32;
    if planned == 0 {
        return Ok((out, 0));
    }
    'outer: loop {
        if epochs > 0 && (!plan.epoching_allowed || pool_tokens == 0) {
            return Err(MixtureError::Exhausted {
                cell,
                achieved,
                planned,
            });
        }
        epochs += 1;
        let mut order = cands.clone();
        draw_order(&mut order, plan.sampling, &mut rng);
        for d in order {
            if achieved >= planned {
                break 'outer;
            }
            let gap = planned - achieved;
            if d.token_count <= gap || d.token_count - gap <= gap {
                achieved += d.token_count;
                out.push(SampledDoc {
                    id: d.id.clone(),
                    cell,
                    tokens: d.token_count,
                });
                if d.token_count > gap {
                    break 'outer;
                }
            } else {
                break 'outer;
            }
        }
        if achieved >= planned {
            break;
        }
    }
    Ok((out, epochs))
}

/// Seeded round-robin: each slot goes to a cell with probability
/// proportional to its remaining queued tokens, so prefixes of the stream
/// track the mixture weights.
fn interleave(mut queues: Vec<(CellKey, Vec<SampledDoc>)>, seed: u64) -> Vec<SampledDoc> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "interleave"));
    for (_, q) in queues.iter_mut() {
        q.reverse();
    }
    let mut remaining: Vec<u64> = queues.iter().map(|(_, q)| q.iter().map(|d| d.tokens).sum()).collect();
    let mut out = Vec::with_capacity(queues.iter().map(|(_, q)| q.len()).sum());
    loop {
        let live: Vec<usize> = (0..queues.len()).filter(|&i| !queues[i].1.is_empty()).collect();
        if live.is_empty() {
            break;
        }
        let total: u64 = live.iter().map(|&i| remaining[i]).sum();
        let pick = if total == 0 {
            live[rng.gen_range(0..live.len())]
        } else {
            let mut r = rng.gen_range(0..total);
            let mut chosen = live[live.len() - 1];
            for &i in &live {
                if r < remaining[i] {
                    chosen = i;
                    break;
                }
                r -= remaining[i];
            }
            chosen
        };
        let doc = queues[pick].1.pop().expect("live queue is non-empty");
        remaining[pick] -= doc.tokens;
        out.push(doc);
    }
    out
}

/// Samples every planned cell from `docs`. Fully determined by
/// `(plan, docs, seed, exclude)`; the input order of `docs` is irrelevant.
pub fn sample(
    plan: &MixturePlan,
    docs: &[Document],
    seed: u64,
    exclude: &HashSet<String>,
) -> Result<SampleOutcome, MixtureError> {
    let infeasible = plan.infeasible_cells();
    if !infeasible.is_empty() {
        return Err(MixtureError::Infeasible(infeasible));
    }
    let mut by_cell: BTreeMap<CellKey, Vec<&Document>> = BTreeMap::new();
    for d in docs {
        let eligible = plan.min_word_count.is_none_or(|m| d.word_count > m);
        if eligible && !exclude.contains(&d.id) && plan.allocations.contains_key(&d.cell()) {
            by_cell.entry(d.cell()).or_default().push(d);
        }
    }
    let results: Vec<(CellKey, Vec<SampledDoc>, u32)> = plan
        .allocations
        .par_iter()
        .map(|(cell, &planned)| {
            let cands = by_cell.get(cell).cloned().unwrap_or_default();
            sample_cell(*cell, planned, cands, plan, seed).map(|(d, e)| (*cell, d, e))
        })
        .collect::<Result<_, _>>()?;

    let mut selected = BTreeMap::new();
    let mut achieved = BTreeMap::new();
    let mut epochs = BTreeMap::new();
    let mut queues = Vec::new();
    for (cell, picked, e) in results {
        selected.insert(cell, picked.iter().map(|d| d.id.clone()).collect());
        achieved.insert(cell, picked.iter().map(|d| d.tokens).sum());
        epochs.insert(cell, e);
        queues.push((cell, picked));
    }
    Ok(SampleOutcome {
        sequence: interleave(queues, seed),
        selected,
        achieved,
        epochs,
    })
}

impl MixturePlan {
    /// Copies realized selections into the plan and fills `deviations`.
    pub fn record(&mut self, outcome: &SampleOutcome) {
        self.selected = outcome.selected.clone();
        self.achieved = outcome.achieved.clone();
        self.deviations = self
            .allocations
            .iter()
            .map(|(c, &planned)| {
                let got = outcome.achieved.get(c).copied().unwrap_or(0);
                (*c, (got as f64 - planned as f64) / self.token_budget as f64)
            })
            .collect();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationRow {
    pub cell: String,
    pub achieved_tokens: u64,
    pub achieved_pct: f64,
    pub target_pct: f64,
    /// Achieved minus target, in percentage points.
    pub deviation_pp: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub total_tokens: u64,
    pub tolerance_pp: f64,
    pub rows: Vec<DeviationRow>,
    pub max_abs_deviation_pp: f64,
    pub flagged: usize,
}

impl DeviationReport {
    pub fn within_tolerance(&self) -> bool {
        self.flagged == 0
    }

    pub fn row(&self, cell: &str) -> Option<&DeviationRow> {
        self.rows.iter().find(|r| r.cell == cell)
    }
}

/// Compares realized per-label token counts against target percentages.
/// Labels are free-form so the same check serves mixture cells and other
/// composition tables. Targets are not required to sum to 100.
pub fn validate_composition<K: ToString + Ord>(
    achieved: &BTreeMap<K, u64>,
    target_pct: &BTreeMap<K, f64>,
    tolerance_pp: f64,
) -> DeviationReport {
    let total: u64 = achieved.values().sum();
    let keys: std::collections::BTreeSet<&K> = achieved.keys().chain(target_pct.keys()).collect();
    let rows: Vec<DeviationRow> = keys
        .into_iter()
        .map(|k| {
            let tokens = achieved.get(k).copied().unwrap_or(0);
            let pct = if total == 0 {
                0.0
            } else {
                100.0 * tokens as f64 / total as f64
            };
            let target = target_pct.get(k).copied().unwrap_or(0.0);
            let dev = pct - target;
            DeviationRow {
                cell: k.to_string(),
                achieved_tokens: tokens,
                achieved_pct: pct,
                target_pct: target,
                deviation_pp: dev,
                flagged: dev.abs() > tolerance_pp,
            }
        })
        .collect();
    DeviationReport {
        total_tokens: total,
        tolerance_pp,
        max_abs_deviation_pp: rows.iter().map(|r| r.deviation_pp.abs()).fold(0.0, f64::max),
        flagged: rows.iter().filter(|r| r.flagged).count(),
        rows,
    }
}

/// Deviation of a sampled plan (or a manifest's totals) from a phase spec.
pub fn validate(achieved: &BTreeMap<CellKey, u64>, spec: &PhaseSpec, tolerance_pp: f64) -> DeviationReport {
    let targets: BTreeMap<CellKey, f64> = spec.targets.iter().map(|(c, w)| (*c, 100.0 * w)).collect();
    validate_composition(achieved, &targets, tolerance_pp)
}

/// A published composition table: token totals per cell and the
/// percentages printed next to them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionTable {
    pub name: String,
    pub printed_total_tokens: u64,
    pub cells: Vec<CompositionCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionCell {
    pub cell: CellKey,
    pub tokens: u64,
    pub printed_pct: f64,
}

impl CompositionTable {
    pub fn achieved(&self) -> BTreeMap<CellKey, u64> {
        self.cells.iter().map(|c| (c.cell, c.tokens)).collect()
    }

    pub fn printed(&self) -> BTreeMap<CellKey, f64> {
        self.cells.iter().map(|c| (c.cell, c.printed_pct)).collect()
    }

    /// Recomputes each cell's share from its token count and compares it
    /// with the printed percentage.
    pub fn check(&self, tolerance_pp: f64) -> DeviationReport {
        validate_composition(&self.achieved(), &self.printed(), tolerance_pp)
    }

    /// A phase spec whose weights are this table's exact token shares.
    pub fn to_spec(&self, phase_id: PhaseId, token_budget: u64, context_length: u64) -> PhaseSpec {
        let total: u64 = self.cells.iter().map(|c| c.tokens).sum();
        PhaseSpec {
            phase_id,
            context_length,
            token_budget,
            targets: self
                .cells
                .iter()
                .map(|c| (c.cell, c.tokens as f64 / total as f64))
                .collect(),
            min_word_count: None,
            seed: 0,
            epoching_allowed: false,
            sampling: SamplingMode::Uniform,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftRow {
    pub category: String,
    pub samples: u64,
    pub tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftTable {
    pub printed_total_samples: u64,
    pub printed_total_tokens: u64,
    pub rows: Vec<SftRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionTables {
    pub phase1: CompositionTable,
    pub phase2: CompositionTable,
    pub phase3: CompositionTable,
    pub sft: SftTable,
}

impl CompositionTables {
    pub fn bundled() -> Self {
        let body = crate::fixtures::get("composition_tables.json").expect("bundled fixture");
        serde_json::from_str(body).expect("bundled fixture parses")
    }
}
