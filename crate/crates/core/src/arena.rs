//! Pairwise preference battles: standings, head-to-head records,
//! Bradley-Terry strengths and exact sign tests with Holm correction.
//!
//! The analysis treats every battle as independent. Battles sharing a
//! prompt or an annotator are correlated in practice, so p-values here are
//! optimistic; reports carry that caveat.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ArenaError {
    #[error("no battles between {0} and {1}")]
    NoBattles(String, String),
    #[error("comparison graph is disconnected: {0:?} cannot be ranked against the rest")]
    Disconnected(Vec<String>),
    #[error("{0} has no decisive {1}; strengths are unbounded")]
    Unbounded(String, &'static str),
    #[error("battle {0} pits a model against itself")]
    SelfBattle(String),
    #[error("fit did not converge after {0} iterations")]
    NotConverged(usize),
    #[error("need at least two models")]
    TooFewModels,
    #[error("{0} vs {1} has no decisive battles")]
    NoDecisive(String, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Verdict {
    #[serde(rename = "A")]
    AWins,
    #[serde(rename = "B")]
    BWins,
    #[serde(rename = "tie")]
    Tie,
}

impl Verdict {
    fn flipped(self) -> Verdict {
        match self {
            Verdict::AWins => Verdict::BWins,
            Verdict::BWins => Verdict::AWins,
            Verdict::Tie => Verdict::Tie,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Battle {
    pub battle_id: String,
    #[serde(default)]
    pub prompt_id: String,
    pub model_a: String,
    pub model_b: String,
    pub verdict: Verdict,
    #[serde(default)]
    pub annotator_id: String,
    /// Per-dimension verdicts, e.g. Relevance, Completeness, Factuality,
    /// LanguageQuality.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub dimensions: BTreeMap<String, Verdict>,
}

impl Battle {
    /// The verdict from `model`'s side, if it took part.
    fn outcome_for(&self, model: &str) -> Option<Verdict> {
        if self.model_a == model {
            Some(self.verdict)
        } else if self.model_b == model {
            Some(self.verdict.flipped())
        } else {
            None
        }
    }
}

/// Builds `a_wins + b_wins + ties` synthetic battles, for fixtures and tests.
pub fn battles_from_counts(prefix: &str, a: &str, b: &str, a_wins: u64, b_wins: u64, ties: u64) -> Vec<Battle> {
    let verdicts = std::iter::repeat_n(Verdict::AWins, a_wins as usize)
        .chain(std::iter::repeat_n(Verdict::BWins, b_wins as usize))
        .chain(std::iter::repeat_n(Verdict::Tie, ties as usize));
    verdicts
        .enumerate()
        .map(|(i, verdict)| Battle {
            battle_id: format!("{prefix}-{i:04}"),
            prompt_id: format!("{prefix}-p{i:04}"),
            model_a: a.to_string(),
            model_b: b.to_string(),
            verdict,
            annotator_id: String::new(),
            dimensions: BTreeMap::new(),
        })
        .collect()
}

fn frac(part: u64, whole: u64) -> f64 {
    if whole == 0 {
        0.0
    } else {
        part as f64 / whole as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandingsRow {
    pub model: String,
    pub battles: u64,
    pub wins: u64,
    pub ties: u64,
    pub losses: u64,
    /// Fractions of battles, in [0, 1].
    pub win_pct: f64,
    pub tie_pct: f64,
    pub loss_pct: f64,
}

/// One row per model, sorted by win percentage descending, then by name.
pub fn standings(battles: &[Battle]) -> Vec<StandingsRow> {
    let mut tally: BTreeMap<&str, (u64, u64, u64)> = BTreeMap::new();
    for b in battles {
        let (wa, wb) = match b.verdict {
            Verdict::AWins => ((1, 0, 0), (0, 0, 1)),
            Verdict::BWins => ((0, 0, 1), (1, 0, 0)),
            Verdict::Tie => ((0, 1, 0), (0, 1, 0)),
        };
        for (m, (w, t, l)) in [(&b.model_a, wa), (&b.model_b, wb)] {
            let e = tally.entry(m.as_str()).or_default();
            e.0 += w;
            e.1 += t;
            e.2 += l;
        }
    }
    let mut rows: Vec<StandingsRow> = tally
        .into_iter()
        .map(|(model, (wins, ties, losses))| {
            let n = wins + ties + losses;
            StandingsRow {
                model: model.to_string(),
                battles: n,
                wins,
                ties,
                losses,
                win_pct: frac(wins, n),
                tie_pct: frac(ties, n),
                loss_pct: frac(losses, n),
            }
        })
        .collect();
    rows.sort_by(|x, y| y.win_pct.total_cmp(&x.win_pct).then_with(|| x.model.cmp(&y.model)));
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadToHead {
    pub model_a: String,
    pub model_b: String,
    pub a_wins: u64,
    pub b_wins: u64,
    pub ties: u64,
    pub n: u64,
    /// Fractions of decisive battles; ties are excluded.
    pub decisive_a_pct: f64,
    pub decisive_b_pct: f64,
    /// Whether a_wins + b_wins + ties equals n.
    pub consistency_flag: bool,
}

impl HeadToHead {
    /// From published counts, which may not add up.
    pub fn from_counts(a: &str, b: &str, a_wins: u64, b_wins: u64, ties: u64, n: u64) -> Self {
        let decisive = a_wins + b_wins;
        HeadToHead {
            model_a: a.to_string(),
            model_b: b.to_string(),
            a_wins,
            b_wins,
            ties,
            n,
            decisive_a_pct: frac(a_wins, decisive),
            decisive_b_pct: frac(b_wins, decisive),
            consistency_flag: a_wins + b_wins + ties == n,
        }
    }

    pub fn decisive(&self) -> u64 {
        self.a_wins + self.b_wins
    }
}

/// Record of `a` against `b`, counted from `a`'s side regardless of which
/// slot each model occupied.
pub fn head_to_head(battles: &[Battle], a: &str, b: &str) -> Result<HeadToHead, ArenaError> {
    let (mut aw, mut bw, mut t, mut n) = (0, 0, 0, 0);
    for battle in battles {
        let pair = (battle.model_a.as_str(), battle.model_b.as_str());
        if pair != (a, b) && pair != (b, a) {
            continue;
        }
        n += 1;
        match battle.outcome_for(a).expect("a is in the pair") {
            Verdict::AWins => aw += 1,
            Verdict::BWins => bw += 1,
            Verdict::Tie => t += 1,
        }
    }
    if n == 0 {
        return Err(ArenaError::NoBattles(a.into(), b.into()));
    }
    Ok(HeadToHead::from_counts(a, b, aw, bw, t, n))
}

/// Unordered model pairs that met at least once, each as (smaller, larger).
pub fn pairs(battles: &[Battle]) -> Vec<(String, String)> {
    let set: BTreeSet<(String, String)> = battles
        .iter()
        .map(|b| {
            if b.model_a <= b.model_b {
                (b.model_a.clone(), b.model_b.clone())
            } else {
                (b.model_b.clone(), b.model_a.clone())
            }
        })
        .collect();
    set.into_iter().collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TiePolicy {
    /// Ties carry no information about order.
    #[default]
    Drop,
    /// A tie is half a win for each side.
    Half,
}

pub const BT_TOLERANCE: f64 = 1e-8;
pub const BT_MAX_ITERS: usize = 100_000;

/// Pairwise win counts: `wins[i][j]` is how often model i beat model j.
#[derive(Debug, Clone, PartialEq)]
pub struct WinMatrix {
    pub models: Vec<String>,
    pub wins: Vec<Vec<f64>>,
}

impl WinMatrix {
    pub fn from_battles(battles: &[Battle], ties: TiePolicy) -> Result<Self, ArenaError> {
        let models: Vec<String> = battles
            .iter()
            .flat_map(|b| [b.model_a.clone(), b.model_b.clone()])
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let idx: BTreeMap<&str, usize> = models.iter().enumerate().map(|(i, m)| (m.as_str(), i)).collect();
        let n = models.len();
        let mut wins = vec![vec![0.0; n]; n];
        for b in battles {
            if b.model_a == b.model_b {
                return Err(ArenaError::SelfBattle(b.battle_id.clone()));
            }
            let (i, j) = (idx[b.model_a.as_str()], idx[b.model_b.as_str()]);
            match (b.verdict, ties) {
                (Verdict::AWins, _) => wins[i][j] += 1.0,
                (Verdict::BWins, _) => wins[j][i] += 1.0,
                (Verdict::Tie, TiePolicy::Drop) => {}
                (Verdict::Tie, TiePolicy::Half) => {
                    wins[i][j] += 0.5;
                    wins[j][i] += 0.5;
                }
            }
        }
        Ok(WinMatrix { models, wins })
    }

    #[allow(clippy::needless_range_loop)]
    fn reachable(&self, start: usize, forward: bool) -> Vec<bool> {
        let n = self.models.len();
        let mut seen = vec![false; n];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                let edge = if forward { self.wins[i][j] } else { self.wins[j][i] };
                if edge > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen
    }

    /// The maximum-likelihood strengths exist and are unique (up to the
    /// gauge) exactly when the "i beat j" digraph is strongly connected.
    #[allow(clippy::needless_range_loop)]
    fn check_identifiable(&self) -> Result<(), ArenaError> {
        let n = self.models.len();
        if n < 2 {
            return Err(ArenaError::TooFewModels);
        }
        let games = |i: usize, j: usize| self.wins[i][j] + self.wins[j][i];
        // Undirected connectivity first, for a clearer message.
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if games(i, j) > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        if seen.iter().any(|s| !s) {
            let cut = (0..n).filter(|&i| !seen[i]).map(|i| self.models[i].clone()).collect();
            return Err(ArenaError::Disconnected(cut));
        }
        for i in 0..n {
            if (0..n).all(|j| self.wins[i][j] == 0.0) {
                return Err(ArenaError::Unbounded(self.models[i].clone(), "wins"));
            }
            if (0..n).all(|j| self.wins[j][i] == 0.0) {
                return Err(ArenaError::Unbounded(self.models[i].clone(), "losses"));
            }
        }
        let fwd = self.reachable(0, true);
        let back = self.reachable(0, false);
        if let Some(i) = (0..n).find(|&i| !fwd[i] || !back[i]) {
            return Err(ArenaError::Unbounded(
                self.models[i].clone(),
                if fwd[i] {
                    "path of wins back to the rest"
                } else {
                    "path of losses back to the rest"
                },
            ));
        }
        Ok(())
    }
}

/// Bradley-Terry log-strengths by minorization-maximization, normalized to
/// sum to zero. P(i beats j) = 1 / (1 + exp(s_j − s_i)).
pub fn bt_fit_matrix(m: &WinMatrix) -> Result<BTreeMap<String, f64>, ArenaError> {
    m.check_identifiable()?;
    let n = m.models.len();
    let total_wins: Vec<f64> = (0..n).map(|i| m.wins[i].iter().sum()).collect();
    let mut p = vec![1.0f64; n];
    for iter in 0..BT_MAX_ITERS {
        let mut next = vec![0.0; n];
        for i in 0..n {
            let denom: f64 = (0..n)
                .filter(|&j| j != i)
                .map(|j| (m.wins[i][j] + m.wins[j][i]) / (p[i] + p[j]))
                .sum();
            next[i] = total_wins[i] / denom;
        }
        let mean_log = next.iter().map(|x| x.ln()).sum::<f64>() / n as f64;
        let shift = mean_log.exp();
        next.iter_mut().for_each(|x| *x /= shift);
        let delta = (0..n).map(|i| (next[i].ln() - p[i].ln()).abs()).fold(0.0, f64::max);
        p = next;
        if delta < BT_TOLERANCE {
            log::debug!("bradley-terry converged after {} iterations", iter + 1);
            let logs: Vec<f64> = p.iter().map(|x| x.ln()).collect();
            let mean = logs.iter().sum::<f64>() / n as f64;
            return Ok(m
                .models
                .iter()
                .cloned()
                .zip(logs.into_iter().map(|s| s - mean))
                .collect());
        }
    }
    Err(ArenaError::NotConverged(BT_MAX_ITERS))
}

pub fn bt_fit(battles: &[Battle], ties: TiePolicy) -> Result<BTreeMap<String, f64>, ArenaError> {
    bt_fit_matrix(&WinMatrix::from_battles(battles, ties)?)
}

pub fn bt_probability(strengths: &BTreeMap<String, f64>, a: &str, b: &str) -> Option<f64> {
    let (sa, sb) = (strengths.get(a)?, strengths.get(b)?);
    Some(1.0 / (1.0 + (sb - sa).exp()))
}

/// Exact two-sided sign test on decisive battles (ties dropped):
/// p = min(1, 2·P(X ≤ min(a, b))) with X ~ Binomial(a + b, 1/2).
pub fn sign_test(a_wins: u64, b_wins: u64) -> f64 {
    let n = a_wins + b_wins;
    if n == 0 {
        return 1.0;
    }
    let k = a_wins.min(b_wins);
    // Log pmf via the ratio C(n, i+1)/C(n, i) = (n − i)/(i + 1).
    let mut log_pmf = n as f64 * 0.5f64.ln();
    let mut terms = Vec::with_capacity(k as usize + 1);
    for i in 0..=k {
        terms.push(log_pmf);
        log_pmf += ((n - i) as f64).ln() - ((i + 1) as f64).ln();
    }
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let tail = max.exp() * terms.iter().map(|t| (t - max).exp()).sum::<f64>();
    (2.0 * tail).min(1.0)
}

pub fn pairwise_test(h: &HeadToHead) -> Result<f64, ArenaError> {
    if h.decisive() == 0 {
        return Err(ArenaError::NoDecisive(h.model_a.clone(), h.model_b.clone()));
    }
    Ok(sign_test(h.a_wins, h.b_wins))
}

pub fn pair_key(a: &str, b: &str) -> String {
    format!("{a} vs {b}")
}

/// Holm step-down adjustment. Ties in p are ordered by key so the output is
/// deterministic.
pub fn holm<K: Ord + Clone>(pvalues: &BTreeMap<K, f64>) -> BTreeMap<K, f64> {
    let mut sorted: Vec<(&K, f64)> = pvalues.iter().map(|(k, &p)| (k, p)).collect();
    sorted.sort_by(|x, y| x.1.total_cmp(&y.1).then_with(|| x.0.cmp(y.0)));
    let m = sorted.len();
    let mut running = 0.0f64;
    let mut out = BTreeMap::new();
    for (j, (k, p)) in sorted.into_iter().enumerate() {
        running = running.max(((m - j) as f64 * p).min(1.0));
        out.insert(k.clone(), running);
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionTally {
    pub wins: u64,
    pub ties: u64,
    pub losses: u64,
}

/// Descriptive per-dimension counts for each model. No tests are run on
/// these.
pub fn dimension_tallies(battles: &[Battle]) -> BTreeMap<String, BTreeMap<String, DimensionTally>> {
    let mut out: BTreeMap<String, BTreeMap<String, DimensionTally>> = BTreeMap::new();
    for b in battles {
        for (dim, &v) in &b.dimensions {
            for (model, outcome) in [(&b.model_a, v), (&b.model_b, v.flipped())] {
                let t = out.entry(dim.clone()).or_default().entry(model.clone()).or_default();
                match outcome {
                    Verdict::AWins => t.wins += 1,
                    Verdict::BWins => t.losses += 1,
                    Verdict::Tie => t.ties += 1,
                }
            }
        }
    }
    out
}

pub const DEFAULT_ALPHA: f64 = 0.05;

pub const INDEPENDENCE_CAVEAT: &str = "battles are treated as independent; shared prompts and \
annotators make these p-values optimistic";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArenaReport {
    pub caveat: String,
    pub alpha: f64,
    pub tie_policy: TiePolicy,
    pub standings: Vec<StandingsRow>,
    pub head_to_heads: Vec<HeadToHead>,
    /// Absent when the comparison graph does not identify the model.
    pub strengths: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strengths_error: Option<String>,
    /// Keyed by [`pair_key`]. Pairs with no decisive battles are omitted.
    pub pairwise_p: BTreeMap<String, f64>,
    pub holm_adjusted: BTreeMap<String, f64>,
    pub significant: BTreeMap<String, bool>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub dimensions: BTreeMap<String, BTreeMap<String, DimensionTally>>,
}

impl ArenaReport {
    pub fn head_to_head(&self, a: &str, b: &str) -> Option<&HeadToHead> {
        self.head_to_heads
            .iter()
            .find(|h| (h.model_a == a && h.model_b == b) || (h.model_a == b && h.model_b == a))
    }

    pub fn all_consistent(&self) -> bool {
        self.head_to_heads.iter().all(|h| h.consistency_flag)
    }
}

/// Analyzes a battle log. Extra head-to-head records (for instance counts
/// transcribed from a publication) can be appended with [`add_stated`].
///
/// [`add_stated`]: ArenaReport::add_stated
pub fn report(battles: &[Battle], ties: TiePolicy, alpha: f64) -> Result<ArenaReport, ArenaError> {
    let mut head_to_heads = Vec::new();
    for (a, b) in pairs(battles) {
        head_to_heads.push(head_to_head(battles, &a, &b)?);
    }
    let (strengths, strengths_error) = match bt_fit(battles, ties) {
        Ok(s) => (Some(s), None),
        Err(e @ (ArenaError::SelfBattle(_) | ArenaError::NotConverged(_))) => return Err(e),
        Err(e) => (None, Some(e.to_string())),
    };
    let mut r = ArenaReport {
        caveat: INDEPENDENCE_CAVEAT.to_string(),
        alpha,
        tie_policy: ties,
        standings: standings(battles),
        head_to_heads,
        strengths,
        strengths_error,
        pairwise_p: BTreeMap::new(),
        holm_adjusted: BTreeMap::new(),
        significant: BTreeMap::new(),
        dimensions: dimension_tallies(battles),
    };
    r.recompute_tests();
    Ok(r)
}

impl ArenaReport {
    pub fn add_stated(&mut self, h: HeadToHead) {
        self.head_to_heads.push(h);
        self.recompute_tests();
    }

    fn recompute_tests(&mut self) {
        self.pairwise_p = self
            .head_to_heads
            .iter()
            .filter_map(|h| pairwise_test(h).ok().map(|p| (pair_key(&h.model_a, &h.model_b), p)))
            .collect();
        self.holm_adjusted = holm(&self.pairwise_p);
        self.significant = self
            .holm_adjusted
            .iter()
            .map(|(k, &p)| (k.clone(), p < self.alpha))
            .collect();
    }
}

/// Plain-text tables: overall standings, then head-to-head records.
pub fn render_text(r: &ArenaReport) -> String {
    let mut s = String::new();
    let width = r
        .standings
        .iter()
        .map(|x| x.model.len())
        .chain(r.head_to_heads.iter().map(|h| h.model_a.len() + h.model_b.len() + 4))
        .max()
        .unwrap_or(5)
        .max(5);
    s.push_str(&format!(
        "{:<width$}  {:>7}  {:>5}  {:>5}  {:>6}  {:>6}  {:>6}  {:>6}\n",
        "Model", "Battles", "Wins", "Ties", "Losses", "Win%", "Tie%", "Loss%"
    ));
    for row in &r.standings {
        s.push_str(&format!(
            "{:<width$}  {:>7}  {:>5}  {:>5}  {:>6}  {:>6.1}  {:>6.1}  {:>6.1}\n",
            row.model,
            row.battles,
            row.wins,
            row.ties,
            row.losses,
            100.0 * row.win_pct,
            100.0 * row.tie_pct,
            100.0 * row.loss_pct
        ));
    }
    s.push('\n');
    s.push_str(&format!(
        "{:<width$}  {:>6}  {:>6}  {:>5}  {:>4}  {:>6}  {:>6}  {:>9}  {:>9}\n",
        "Matchup", "A wins", "B wins", "Ties", "N", "A%", "B%", "p", "p (Holm)"
    ));
    for h in &r.head_to_heads {
        let key = pair_key(&h.model_a, &h.model_b);
        let fmt_p = |p: Option<&f64>| p.map_or("-".to_string(), |p| format!("{p:.3e}"));
        let mut notes = Vec::new();
        if !h.consistency_flag {
            notes.push(format!("counts sum to {}, not n", h.a_wins + h.b_wins + h.ties));
        }
        if r.significant.get(&key) == Some(&false) {
            notes.push("n.s.".to_string());
        }
        s.push_str(&format!(
            "{:<width$}  {:>6}  {:>6}  {:>5}  {:>4}  {:>6.1}  {:>6.1}  {:>9}  {:>9}{}\n",
            key,
            h.a_wins,
            h.b_wins,
            h.ties,
            h.n,
            100.0 * h.decisive_a_pct,
            100.0 * h.decisive_b_pct,
            fmt_p(r.pairwise_p.get(&key)),
            fmt_p(r.holm_adjusted.get(&key)),
            if notes.is_empty() {
                String::new()
            } else {
                format!("  ({})", notes.join("; "))
            }
        ));
    }
    if let Some(st) = &r.strengths {
        s.push_str("\nBradley-Terry log-strength\n");
        let mut v: Vec<_> = st.iter().collect();
        v.sort_by(|x, y| y.1.total_cmp(x.1).then_with(|| x.0.cmp(y.0)));
        for (m, x) in v {
            s.push_str(&format!("{:<width$}  {:>+8.4}\n", m, x));
        }
    } else if let Some(e) = &r.strengths_error {
        s.push_str(&format!("\nBradley-Terry: not fitted ({e})\n"));
    }
    s.push_str(&format!("\nNote: {}.\n", r.caveat));
    s
}

/// Counts as printed in a publication, for cross-checking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatedArena {
    #[serde(default)]
    pub pairs: Vec<StatedPair>,
    #[serde(default)]
    pub standings: Vec<StatedStanding>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatedPair {
    pub model_a: String,
    pub model_b: String,
    pub a_wins: u64,
    pub b_wins: u64,
    pub ties: u64,
    pub n: u64,
    /// Printed decisive shares, in percent.
    pub printed_a_pct: f64,
    pub printed_b_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatedStanding {
    pub model: String,
    pub battles: u64,
    pub wins: u64,
    pub ties: u64,
    pub losses: u64,
    /// Printed win/tie/loss percentages.
    pub printed: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatedPairCheck {
    pub head_to_head: HeadToHead,
    pub printed_a_pct: f64,
    pub printed_b_pct: f64,
    /// Recomputed shares agree with the printed ones to one decimal.
    pub shares_match: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatedStandingCheck {
    pub model: String,
    pub counts_sum_to_battles: bool,
    pub recomputed: [f64; 3],
    pub printed: [f64; 3],
    pub shares_match: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatedCheck {
    pub pairs: Vec<StatedPairCheck>,
    pub standings: Vec<StatedStandingCheck>,
}

impl StatedCheck {
    pub fn all_consistent(&self) -> bool {
        self.pairs
            .iter()
            .all(|p| p.head_to_head.consistency_flag && p.shares_match)
            && self.standings.iter().all(|s| s.counts_sum_to_battles && s.shares_match)
    }
}

/// Half-up rounding to one decimal, as tables are printed.
pub fn round1(x: f64) -> f64 {
    (x * 10.0 + 1e-9).round() / 10.0
}

impl StatedArena {
    pub fn bundled() -> Self {
        let body = crate::fixtures::get("arena_stated.json").expect("bundled fixture");
        serde_json::from_str(body).expect("bundled fixture parses")
    }

    pub fn check(&self) -> StatedCheck {
        let pairs = self
            .pairs
            .iter()
            .map(|p| {
                let h = HeadToHead::from_counts(&p.model_a, &p.model_b, p.a_wins, p.b_wins, p.ties, p.n);
                let shares_match = round1(100.0 * h.decisive_a_pct) == p.printed_a_pct
                    && round1(100.0 * h.decisive_b_pct) == p.printed_b_pct;
                StatedPairCheck {
                    head_to_head: h,
                    printed_a_pct: p.printed_a_pct,
                    printed_b_pct: p.printed_b_pct,
                    shares_match,
                }
            })
            .collect();
        let standings = self
            .standings
            .iter()
            .map(|s| {
                let recomputed = [s.wins, s.ties, s.losses].map(|c| round1(100.0 * frac(c, s.battles)));
                StatedStandingCheck {
                    model: s.model.clone(),
                    counts_sum_to_battles: s.wins + s.ties + s.losses == s.battles,
                    recomputed,
                    printed: s.printed,
                    shares_match: recomputed == s.printed,
                }
            })
            .collect();
        StatedCheck { pairs, standings }
    }
}
