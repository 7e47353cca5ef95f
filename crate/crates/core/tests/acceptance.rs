//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero when a criterion fails that is not a recorded known failure.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use corpusforge::arena::{
    bt_fit, head_to_head, holm, pair_key, pairwise_test, round1, standings, Battle, HeadToHead, StatedArena, TiePolicy,
};
use corpusforge::calc::{derive_gbs, derive_steps, project, HardwareProfile, ReferenceConfig};
use corpusforge::corpus::write_shard;
use corpusforge::dedup::{dedup, jaccard_estimate, shingles, DedupParams, Permutations};
use corpusforge::fixtures;
use corpusforge::mixture::CompositionTables;
use corpusforge::packing::{pack_concat, pack_lengths};
use rand::Rng;

/// Share tolerance for composition tables, in percentage points.
const SHARE_TOL_PP: f64 = 0.05;
/// Relative tolerance for throughput and cost figures.
const PROJECTION_TOL: f64 = 0.02;
/// Relative tolerance for 200 x 16,777,216 against 3.36B.
const BATCH_TOKENS_TOL: f64 = 0.005;
const STEPS_TOL: u64 = 1;
const DEDUP_RECALL_MIN: f64 = 0.95;
const DEDUP_BAND: f64 = 0.1;
const MINHASH_MAE_MAX: f64 = 0.05;
const SIGNIFICANCE: f64 = 0.05;

struct Check {
    pass: bool,
    detail: String,
}

impl Check {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Check {
            pass,
            detail: detail.into(),
        }
    }
}

struct Criterion {
    id: u32,
    title: &'static str,
    budget: Option<Duration>,
    run: fn() -> Check,
    /// Why the criterion cannot pass as written, and what `run` still
    /// requires to hold for the failure to count as the known one.
    known_failure: Option<&'static str>,
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn json<T: serde::de::DeserializeOwned>(name: &str) -> T {
    serde_json::from_str(fixtures::get(name).expect("bundled fixture")).expect("fixture parses")
}

// ---------------------------------------------------------------------------
// 1. Composition tables
// ---------------------------------------------------------------------------

fn composition() -> Check {
    let tables = CompositionTables::bundled();
    let mut notes = Vec::new();
    let mut all = true;
    let mut flagged_cells = Vec::new();
    for t in [&tables.phase1, &tables.phase2, &tables.phase3] {
        let rep = t.check(SHARE_TOL_PP);
        all &= rep.within_tolerance();
        for r in rep.rows.iter().filter(|r| r.flagged) {
            notes.push(format!(
                "{} {} computes to {:.2} vs printed {} ({:+.2}pp)",
                t.name, r.cell, r.achieved_pct, r.target_pct, r.deviation_pp
            ));
            flagged_cells.push(format!("{}:{}", t.name, r.cell));
        }
        if rep.within_tolerance() {
            notes.push(format!("{} ok (max {:.3}pp)", t.name, rep.max_abs_deviation_pp));
        }
    }
    let check = Check::new(all, notes.join("; "));
    if !all && flagged_cells != ["phase2:EN/StemReasoning", "phase2:HE/NewsSocialMedia"] {
        return Check::new(
            false,
            format!("UNEXPECTED flagged set {flagged_cells:?}: {}", check.detail),
        );
    }
    check
}

// ---------------------------------------------------------------------------
// 2. Batch and step arithmetic
// ---------------------------------------------------------------------------

fn batch_and_steps() -> Check {
    let gbs = derive_gbs(75_500_000_000, 4500, 8192).map(|d| d.gbs);
    let tokens = 200.0 * 16_777_216.0;
    let tokens_err = rel(tokens, 3.36e9);
    let stage3: ReferenceConfig = json("cpt_stage3.json");
    let steps = derive_steps(2_350_000_000, &stage3.config).map(|d| d.steps);
    let pass =
        gbs == Ok(2048) && tokens_err <= BATCH_TOKENS_TOL && steps.as_ref().is_ok_and(|s| s.abs_diff(140) <= STEPS_TOL);
    Check::new(
        pass,
        format!(
            "gbs(75.5B, 4500, 8192) = {gbs:?}; 200 x 16,777,216 = {:.4}B ({:.2}% from 3.36B); steps(2.35B, stage 3) = {steps:?}",
            tokens / 1e9,
            100.0 * tokens_err
        ),
    )
}

// ---------------------------------------------------------------------------
// 3. Throughput and cost
// ---------------------------------------------------------------------------

fn throughput_cost() -> Check {
    // (profile, tokens/s/GPU, days, cost) as stated, then as rounded in print.
    let cases = [
        ("h200.json", [2_790.0, 6.48, 51_900.0], [2_800.0, 6.5, 52_000.0]),
        ("b300.json", [11_628.0, 12.44, 26_800.0], [11_600.0, 12.5, 26_800.0]),
    ];
    let mut pass = true;
    let mut notes = Vec::new();
    for (name, stated, printed) in cases {
        let hw: HardwareProfile = json(name);
        let p = match project(100e9, &hw) {
            Ok(p) => p,
            Err(e) => return Check::new(false, format!("{name}: {e}")),
        };
        let got = [p.tokens_per_sec_gpu, p.days_for_budget, p.cost_for_budget];
        let err = got
            .iter()
            .zip(stated)
            .chain(got.iter().zip(printed))
            .map(|(g, w)| rel(*g, w))
            .fold(0.0, f64::max);
        pass &= err <= PROJECTION_TOL;
        notes.push(format!(
            "{}: {:.0} tok/s/GPU, {:.2} days, ${:.1}K (max rel err {:.2}%)",
            hw.name,
            got[0],
            got[1],
            got[2] / 1000.0,
            100.0 * err
        ));
    }
    Check::new(pass, notes.join("; "))
}

// ---------------------------------------------------------------------------
// 4. Arena
// ---------------------------------------------------------------------------

const OURS: &str = "Our-Model";
const GEMMA: &str = "Gemma-3-27B-IT";
const DICTA: &str = "DictaLM-3.0-24B-Thinking";

fn battle_log() -> Vec<Battle> {
    fixtures::get("arena_battles.jsonl")
        .expect("bundled fixture")
        .lines()
        .map(|l| serde_json::from_str(l).expect("battle parses"))
        .collect()
}

/// Holm-adjusted p-values for the three pairs with the given Ours-vs-DictaLM
/// record.
fn holm_family(ours_gemma: &HeadToHead, gemma_dicta: &HeadToHead, ours_dicta: &HeadToHead) -> BTreeMap<String, f64> {
    let raw: BTreeMap<String, f64> = [ours_gemma, gemma_dicta, ours_dicta]
        .into_iter()
        .map(|h| {
            (
                pair_key(&h.model_a, &h.model_b),
                pairwise_test(h).expect("decisive battles"),
            )
        })
        .collect();
    holm(&raw)
}

fn arena() -> Check {
    let log = battle_log();
    let stated = StatedArena::bundled();
    let mut pass = true;
    let mut notes = Vec::new();

    // Overall standings, recounted from the battle log.
    let printed = [
        (OURS, [39.1, 19.8, 41.1]),
        (GEMMA, [61.0, 20.0, 19.0]),
        (DICTA, [22.4, 11.5, 66.1]),
    ];
    for (model, pct) in printed {
        if !stated.standings.iter().any(|s| s.model == model && s.printed == pct) {
            return Check::new(false, format!("fixture standings for {model} differ from {pct:?}"));
        }
    }
    let rows = standings(&log);
    for s in &stated.standings {
        let Some(row) = rows.iter().find(|r| r.model == s.model) else {
            return Check::new(false, format!("{} missing from the log", s.model));
        };
        let got = [row.win_pct, row.tie_pct, row.loss_pct].map(|f| round1(100.0 * f));
        pass &= got == s.printed;
        if got != s.printed {
            notes.push(format!("{} standings {got:?} vs printed {:?}", s.model, s.printed));
        }
    }
    if pass {
        notes.push("standings match to one decimal".into());
    }

    // Decisive shares of the two consistent pairs.
    let og = head_to_head(&log, OURS, GEMMA).expect("pair present");
    let gd = head_to_head(&log, GEMMA, DICTA).expect("pair present");
    let shares = [
        (
            round1(100.0 * og.decisive_a_pct),
            round1(100.0 * og.decisive_b_pct),
            (28.2, 71.8),
        ),
        (
            round1(100.0 * gd.decisive_a_pct),
            round1(100.0 * gd.decisive_b_pct),
            (80.5, 19.5),
        ),
    ];
    for (a, b, want) in shares {
        pass &= (a, b) == want;
    }
    notes.push(format!(
        "shares {:.1}/{:.1}, {:.1}/{:.1}",
        shares[0].0, shares[0].1, shares[1].0, shares[1].1
    ));

    // Flag on the published Ours-vs-DictaLM record, and only there.
    let check = stated.check();
    let flagged: Vec<_> = check
        .pairs
        .iter()
        .filter(|p| !p.head_to_head.consistency_flag)
        .map(|p| (p.head_to_head.model_a.clone(), p.head_to_head.model_b.clone()))
        .collect();
    let flag_ok = flagged == [(OURS.to_string(), DICTA.to_string())];
    pass &= flag_ok;
    notes.push(format!("inconsistent pairs {flagged:?}"));

    // Bradley-Terry order over decisive battles.
    match bt_fit(&log, TiePolicy::Drop) {
        Ok(s) => {
            let order_ok = s[GEMMA] > s[OURS] && s[OURS] > s[DICTA];
            pass &= order_ok;
            notes.push(format!(
                "BT {GEMMA} {:.3} > {OURS} {:.3} > {DICTA} {:.3}",
                s[GEMMA], s[OURS], s[DICTA]
            ));
        }
        Err(e) => return Check::new(false, format!("BT fit failed: {e}")),
    }

    // Holm under both readings of the flagged record.
    let stated_od = check
        .pairs
        .iter()
        .find(|p| !p.head_to_head.consistency_flag)
        .map(|p| p.head_to_head.clone())
        .expect("flagged pair");
    let log_od = head_to_head(&log, OURS, DICTA).expect("pair present");
    for (label, od) in [("log", &log_od), ("printed", &stated_od)] {
        let adj = holm_family(&og, &gd, od);
        let consistent = [pair_key(OURS, GEMMA), pair_key(GEMMA, DICTA)];
        pass &= consistent.iter().all(|k| adj[k] < SIGNIFICANCE);
        notes.push(format!(
            "Holm ({label} {}/{}/{}): Ours-Gemma {:.2e}, Gemma-Dicta {:.2e}, Ours-Dicta {:.3} (reported only)",
            od.a_wins,
            od.b_wins,
            od.ties,
            adj[&consistent[0]],
            adj[&consistent[1]],
            adj[&pair_key(OURS, DICTA)],
        ));
    }
    notes.push(format!(
        "Ours-Dicta decisive shares from the log {:.2}/{:.2} (reported only)",
        100.0 * log_od.decisive_a_pct,
        100.0 * log_od.decisive_b_pct
    ));
    Check::new(pass, notes.join("; "))
}

// ---------------------------------------------------------------------------
// 5. Dedup
// ---------------------------------------------------------------------------

const K: usize = 5;

fn dedup_oracle() -> Check {
    let params = DedupParams::default();
    let shape = (params.threshold, params.num_perm, params.bands, params.rows);
    if shape != (0.7, 128, 16, 8) || params.k != K {
        return Check::new(false, format!("default params changed: {shape:?}, k {}", params.k));
    }
    let docs = common::planted_dedup_corpus(43, 200, K);
    let res = match dedup(&docs, &params) {
        Ok(r) => r,
        Err(e) => return Check::new(false, e.to_string()),
    };
    let agree = common::pair_agreement(&docs, &res, K, params.threshold, DEDUP_BAND);

    let perms = Permutations::new(params.num_perm, 3);
    let mut r = common::rng(42);
    let mut total_err = 0.0;
    for _ in 0..1000 {
        let n = r.gen_range(30..80);
        let a = common::sentence(&mut r, n);
        let m = r.gen_range(0..n);
        let b = common::mutate(&mut r, &a, m);
        let (sa, sb) = (shingles("a", &a, K, 9), shingles("b", &b, K, 9));
        let est = jaccard_estimate(&perms.signature(&sa).unwrap(), &perms.signature(&sb).unwrap()).unwrap();
        let exact = common::jaccard(&common::string_shingles(&a, K), &common::string_shingles(&b, K));
        total_err += (est - exact).abs();
    }
    let mae = total_err / 1000.0;
    let pass = agree.recall() >= DEDUP_RECALL_MIN
        && agree.outside_band_agree == agree.outside_band
        && agree.oracle_pairs > 0
        && mae <= MINHASH_MAE_MAX;
    Check::new(
        pass,
        format!(
            "recall {:.3} over {} pairs; outside-band agreement {}/{}; MinHash MAE {mae:.4} over 1000 pairs",
            agree.recall(),
            agree.oracle_pairs,
            agree.outside_band_agree,
            agree.outside_band
        ),
    )
}

// ---------------------------------------------------------------------------
// 6. Packing
// ---------------------------------------------------------------------------

fn packing() -> Check {
    let mut r = common::rng(61);
    let mut worst = i64::MIN;
    let mut split = 0;
    let instances = 300;
    for _ in 0..instances {
        let n = r.gen_range(1..=20);
        let cap = r.gen_range(10..100);
        let lengths: Vec<u64> = (0..n).map(|_| r.gen_range(1..=cap)).collect();
        let (bins, _) = pack_lengths(&lengths, cap).unwrap();
        let opt = common::optimal_bins(&lengths, cap) as i64;
        worst = worst.max(bins.len() as i64 - opt);
        let mut seen = vec![0u32; n];
        for s in bins.iter().flat_map(|b| &b.segments) {
            let i: usize = s.doc_id.parse().unwrap();
            seen[i] += 1;
            if s.start_offset != 0 || s.length != lengths[i] {
                split += 1;
            }
        }
        split += seen.iter().filter(|&&c| c != 1).count();
    }

    let docs: Vec<(String, u64)> = (0..1000).map(|i| (format!("d{i}"), r.gen_range(1..30_000))).collect();
    let (seqs, _) = pack_concat(docs.iter().map(|(id, t)| (id.as_str(), *t)), 8192, 1).unwrap();
    let packed: u64 = seqs.iter().map(|s| s.used()).sum();
    let expected: u64 = docs.iter().map(|(_, t)| t + 1).sum();

    let pass = worst <= 1 && split == 0 && packed == expected;
    Check::new(
        pass,
        format!(
            "bins minus optimum at most {worst} over {instances} instances (n <= 20), {split} split samples; concat {packed} of {expected} tokens"
        ),
    )
}

// ---------------------------------------------------------------------------
// 7. Determinism
// ---------------------------------------------------------------------------

type Files = BTreeMap<String, Vec<u8>>;

fn snapshot(dir: &Path) -> Files {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect()
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    write_shard(&p.join("corpus.jsonl"), &common::pipeline_corpus(3, 400)).unwrap();
    fs::write(p.join("phase.json"), common::pipeline_phase(20_000).to_string()).unwrap();
    fs::write(
        p.join("run.json"),
        r#"{"inputs":[{"path":"corpus.jsonl","web_scraped":true}],"seed":7,"phase":"phase.json"}"#,
    )
    .unwrap();
    fs::write(p.join("battles.jsonl"), fixtures::get("arena_battles.jsonl").unwrap()).unwrap();

    let commands: [(&str, &[&str]); 2] = [
        ("pipeline", &["--config", "run.json", "pipeline"]),
        ("arena", &["arena", "report", "--battles", "battles.jsonl"]),
    ];
    let mut compared = 0;
    for (label, args) in commands {
        let mut first: Option<(Vec<u8>, Files)> = None;
        for (run, workers) in ["1", "2", "8", "8"].into_iter().enumerate() {
            let out = format!("{label}{run}");
            let o = Command::new(env!("CARGO_BIN_EXE_corpusforge"))
                .current_dir(p)
                .args(["--workers", workers, "--out", &out])
                .args(args)
                .output()
                .unwrap();
            if !o.status.success() {
                return Check::new(false, format!("{label} failed: {}", String::from_utf8_lossy(&o.stderr)));
            }
            let got = (o.stdout, snapshot(&p.join(&out)));
            match &first {
                None => first = Some(got),
                Some(f) if *f == got => compared += got.1.len(),
                Some(f) => {
                    let differ: Vec<&String> = f.1.keys().filter(|k| f.1.get(*k) != got.1.get(*k)).collect();
                    return Check::new(false, format!("{label} at {workers} workers differs in {differ:?}"));
                }
            }
        }
    }
    Check::new(
        compared > 0,
        format!("pipeline and arena reruns at 1, 2, 8 and 8 workers byte-identical ({compared} files compared)"),
    )
}

// ---------------------------------------------------------------------------

fn main() {
    let criteria = [
        Criterion {
            id: 1,
            title: "composition tables",
            budget: Some(Duration::from_secs(1)),
            run: composition,
            known_failure: Some(
                "two printed phase 2 shares do not follow from their token counts; no rounding rule gives both",
            ),
        },
        Criterion {
            id: 2,
            title: "batch and step arithmetic",
            budget: Some(Duration::from_secs(1)),
            run: batch_and_steps,
            known_failure: None,
        },
        Criterion {
            id: 3,
            title: "throughput and cost",
            budget: Some(Duration::from_secs(1)),
            run: throughput_cost,
            known_failure: None,
        },
        Criterion {
            id: 4,
            title: "arena",
            budget: Some(Duration::from_secs(1)),
            run: arena,
            known_failure: None,
        },
        Criterion {
            id: 5,
            title: "dedup oracle",
            budget: Some(Duration::from_secs(30)),
            run: dedup_oracle,
            known_failure: None,
        },
        Criterion {
            id: 6,
            title: "packing",
            budget: Some(Duration::from_secs(60)),
            run: packing,
            known_failure: None,
        },
        Criterion {
            id: 7,
            title: "determinism",
            budget: None,
            run: determinism,
            known_failure: None,
        },
    ];

    let mut unexpected = 0;
    for c in &criteria {
        let start = Instant::now();
        let check = (c.run)();
        let elapsed = start.elapsed();
        let in_time = c.budget.is_none_or(|b| elapsed <= b);
        let pass = check.pass && in_time;
        let status = if pass { "PASS" } else { "FAIL" };
        let budget = c.budget.map(|b| format!(" / {}s", b.as_secs())).unwrap_or_default();
        println!(
            "{status} {} {}: {} [{:.2}s{budget}]",
            c.id,
            c.title,
            check.detail,
            elapsed.as_secs_f64()
        );
        match (pass, c.known_failure) {
            (false, Some(why)) if in_time && !check.detail.starts_with("UNEXPECTED") => {
                println!("     known failure: {why}")
            }
            (false, _) => unexpected += 1,
            (true, Some(_)) => println!("     note: recorded as a known failure but passed"),
            (true, None) => {}
        }
    }
    println!(
        "EXCLUDED 8 model-dependent results: the curriculum ablation scores, benchmark scores and the inference \
         throughput ratio need trained models; covered instead by the property suites of every module and the \
         oracle checks above"
    );
    if unexpected > 0 {
        println!("{unexpected} unexpected failure(s)");
        std::process::exit(1);
    }
}
