//! Preference-battle analysis: tallies, Bradley-Terry fit, sign tests and
//! Holm correction.

mod common;

use std::collections::BTreeMap;

use corpusforge::arena::{
    battles_from_counts, bt_fit, bt_probability, head_to_head, holm, pairs, report, sign_test, standings, ArenaError,
    Battle, HeadToHead, StatedArena, TiePolicy, Verdict, DEFAULT_ALPHA,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

const MODELS: [&str; 4] = ["alpha", "bravo", "charlie", "delta"];

fn random_log(seed: u64, n: usize) -> Vec<Battle> {
    let mut r = common::rng(seed);
    (0..n)
        .map(|i| {
            let pair: Vec<&&str> = MODELS.choose_multiple(&mut r, 2).collect();
            let verdict = [Verdict::AWins, Verdict::BWins, Verdict::Tie][r.gen_range(0..3)];
            Battle {
                battle_id: format!("b{i}"),
                prompt_id: format!("p{}", i % 50),
                model_a: pair[0].to_string(),
                model_b: pair[1].to_string(),
                verdict,
                annotator_id: format!("ann{}", i % 7),
                dimensions: BTreeMap::from([("fluency".to_string(), verdict)]),
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Tallies
// ---------------------------------------------------------------------------

#[test]
fn standings_and_head_to_head_match_recount() {
    let log = random_log(81, 500);
    let rows = standings(&log);
    for m in MODELS {
        let (mut w, mut t, mut l) = (0u64, 0u64, 0u64);
        for b in &log {
            let side = if b.model_a == m {
                Some(b.verdict)
            } else if b.model_b == m {
                Some(match b.verdict {
                    Verdict::AWins => Verdict::BWins,
                    Verdict::BWins => Verdict::AWins,
                    Verdict::Tie => Verdict::Tie,
                })
            } else {
                None
            };
            match side {
                Some(Verdict::AWins) => w += 1,
                Some(Verdict::BWins) => l += 1,
                Some(Verdict::Tie) => t += 1,
                None => {}
            }
        }
        let row = rows.iter().find(|r| r.model == m).unwrap();
        assert_eq!(
            (row.wins, row.ties, row.losses, row.battles),
            (w, t, l, w + t + l),
            "{m}"
        );
        assert!((row.win_pct + row.tie_pct + row.loss_pct - 1.0).abs() < 1e-12);
    }
    for (a, b) in pairs(&log) {
        let h = head_to_head(&log, &a, &b).unwrap();
        let direct = |x: &str, y: &str, v: Verdict| {
            log.iter()
                .filter(|t| t.model_a == x && t.model_b == y && t.verdict == v)
                .count() as u64
        };
        assert_eq!(
            h.a_wins,
            direct(&a, &b, Verdict::AWins) + direct(&b, &a, Verdict::BWins)
        );
        assert_eq!(
            h.b_wins,
            direct(&a, &b, Verdict::BWins) + direct(&b, &a, Verdict::AWins)
        );
        assert_eq!(h.ties, direct(&a, &b, Verdict::Tie) + direct(&b, &a, Verdict::Tie));
        assert!(h.consistency_flag);
    }
    let rows_sorted: Vec<f64> = rows.iter().map(|r| r.win_pct).collect();
    assert!(rows_sorted.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn bundled_log_reproduces_published_tallies() {
    let log: Vec<Battle> = corpusforge::fixtures::get("arena_battles.jsonl")
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let stated = StatedArena::bundled();
    let rows = standings(&log);
    for s in &stated.standings {
        let row = rows.iter().find(|r| r.model == s.model).unwrap();
        assert_eq!(
            (row.wins, row.ties, row.losses),
            (s.wins, s.ties, s.losses),
            "{}",
            s.model
        );
    }
    let check = stated.check();
    assert!(!check.all_consistent());
    let flagged: Vec<(&str, &str)> = check
        .pairs
        .iter()
        .filter(|p| !p.head_to_head.consistency_flag)
        .map(|p| (p.head_to_head.model_a.as_str(), p.head_to_head.model_b.as_str()))
        .collect();
    assert_eq!(flagged, vec![("Our-Model", "DictaLM-3.0-24B-Thinking")]);
}

// ---------------------------------------------------------------------------
// Sign test and Holm
// ---------------------------------------------------------------------------

#[test]
fn sign_test_matches_pascal_triangle() {
    let mut row: Vec<u128> = vec![1];
    for n in 1..=100u64 {
        let mut next = vec![1u128; n as usize + 1];
        for i in 1..n as usize {
            next[i] = row[i - 1] + row[i];
        }
        row = next;
        let total = 2f64.powi(n as i32);
        for a in 0..=n {
            let k = a.min(n - a) as usize;
            let tail: u128 = row[..=k].iter().sum();
            let want = (2.0 * tail as f64 / total).min(1.0);
            let got = sign_test(a, n - a);
            assert!(
                (got - want).abs() <= 1e-10 * want.max(1e-300),
                "({a},{}) {got} vs {want}",
                n - a
            );
        }
    }
}

#[test]
fn sign_test_reference_values() {
    assert!((sign_test(10, 0) - 0.001953125).abs() < 1e-15);
    assert!(sign_test(56, 22) < 0.01);
    assert_eq!(sign_test(5, 5), 1.0);
    assert_eq!(sign_test(0, 0), 1.0);
}

#[test]
fn holm_reference_family() {
    let p = BTreeMap::from([("x", 0.01), ("y", 0.02), ("z", 0.04)]);
    let adj = holm(&p);
    for (k, want) in [("x", 0.03), ("y", 0.04), ("z", 0.04)] {
        assert!((adj[k] - want).abs() < 1e-15, "{k}: {}", adj[k]);
    }
}

// ---------------------------------------------------------------------------
// Bradley-Terry
// ---------------------------------------------------------------------------

/// Battles drawn from known strengths; the fit recovers their order.
#[test]
fn bt_recovers_planted_order() {
    let truth = [1.5, 0.5, -0.5, -1.5];
    let mut r = common::rng(82);
    let mut log = Vec::new();
    for i in 0..4000 {
        let (x, y) = loop {
            let x = r.gen_range(0..4);
            let y = r.gen_range(0..4);
            if x != y {
                break (x, y);
            }
        };
        let p: f64 = 1.0 / (1.0 + f64::exp(truth[y] - truth[x]));
        let verdict = if r.gen_bool(p) { Verdict::AWins } else { Verdict::BWins };
        log.push(Battle {
            battle_id: format!("b{i}"),
            prompt_id: String::new(),
            model_a: MODELS[x].into(),
            model_b: MODELS[y].into(),
            verdict,
            annotator_id: String::new(),
            dimensions: BTreeMap::new(),
        });
    }
    let s = bt_fit(&log, TiePolicy::Drop).unwrap();
    let fitted: Vec<f64> = MODELS.iter().map(|m| s[*m]).collect();
    assert!(fitted.windows(2).all(|w| w[0] > w[1]), "{fitted:?}");
    for (f, t) in fitted.iter().zip(truth) {
        assert!((f - t).abs() < 0.25, "{fitted:?}");
    }
    assert!(s.values().sum::<f64>().abs() < 1e-9);
}

#[test]
fn bt_two_player_closed_form() {
    let log = battles_from_counts("x", "A", "B", 30, 10, 7);
    let s = bt_fit(&log, TiePolicy::Drop).unwrap();
    assert!((bt_probability(&s, "A", "B").unwrap() - 0.75).abs() < 1e-7);
    // Half-win ties: (30 + 3.5) / 47.
    let s = bt_fit(&log, TiePolicy::Half).unwrap();
    assert!((bt_probability(&s, "A", "B").unwrap() - 33.5 / 47.0).abs() < 1e-7);
}

#[test]
fn bt_identifiability_errors() {
    let mut log = battles_from_counts("x", "A", "B", 3, 2, 0);
    log.extend(battles_from_counts("y", "C", "D", 3, 2, 0));
    assert!(matches!(
        bt_fit(&log, TiePolicy::Drop),
        Err(ArenaError::Disconnected(_))
    ));
    let log = battles_from_counts("x", "A", "B", 3, 0, 0);
    assert!(matches!(bt_fit(&log, TiePolicy::Drop), Err(ArenaError::Unbounded(..))));
    let log = battles_from_counts("x", "A", "A", 1, 0, 0);
    assert!(matches!(bt_fit(&log, TiePolicy::Drop), Err(ArenaError::SelfBattle(_))));
}

#[test]
fn report_tests_every_pair_with_decisive_votes() {
    let log = random_log(83, 300);
    let r = report(&log, TiePolicy::Drop, DEFAULT_ALPHA).unwrap();
    assert_eq!(r.pairwise_p.len(), 6);
    assert_eq!(r.holm_adjusted.len(), 6);
    for (k, p) in &r.pairwise_p {
        assert!(r.holm_adjusted[k] >= *p);
        assert_eq!(r.significant[k], r.holm_adjusted[k] < DEFAULT_ALPHA);
    }
    assert!(r.caveat.contains("independent"));
    assert!(r.dimensions.contains_key("fluency"));
}

// ---------------------------------------------------------------------------
// Properties
// ---------------------------------------------------------------------------

proptest! {
    #[test]
    fn holm_is_monotone_and_between_raw_and_bonferroni(ps in proptest::collection::vec(0.0..=1.0f64, 1..12)) {
        let m = ps.len() as f64;
        let p: BTreeMap<usize, f64> = ps.iter().copied().enumerate().collect();
        let adj = holm(&p);
        for (k, raw) in &p {
            prop_assert!(adj[k] >= *raw);
            prop_assert!(adj[k] <= (m * raw).min(1.0) + 1e-15);
        }
        for (i, a) in &p {
            for (j, b) in &p {
                if a < b {
                    prop_assert!(adj[i] <= adj[j]);
                }
            }
        }
    }

    #[test]
    fn sign_test_is_symmetric_and_shrinks_with_imbalance(a in 0u64..200, b in 0u64..200) {
        prop_assert_eq!(sign_test(a, b), sign_test(b, a));
        let p = sign_test(a, b);
        prop_assert!(p > 0.0 && p <= 1.0);
        if a >= b {
            prop_assert!(sign_test(a + 1, b) <= p + 1e-15);
        }
    }

    #[test]
    fn bt_probabilities_ignore_order_and_gauge(seed in any::<u64>(), shuffle in any::<u64>()) {
        let log = random_log(seed, 200);
        let Ok(s) = bt_fit(&log, TiePolicy::Drop) else { return Ok(()); };
        prop_assert!(s.values().sum::<f64>().abs() < 1e-9);
        let mut shuffled = log.clone();
        shuffled.shuffle(&mut common::rng(shuffle));
        let t = bt_fit(&shuffled, TiePolicy::Drop).unwrap();
        for a in MODELS {
            for b in MODELS {
                let (x, y) = (bt_probability(&s, a, b).unwrap(), bt_probability(&t, a, b).unwrap());
                prop_assert!((x - y).abs() < 1e-7);
                prop_assert!((x + bt_probability(&s, b, a).unwrap() - 1.0).abs() < 1e-12);
            }
        }
        // Shifting every strength leaves every probability unchanged.
        let shifted: BTreeMap<String, f64> = s.iter().map(|(k, v)| (k.clone(), v + 3.0)).collect();
        prop_assert!((bt_probability(&shifted, "alpha", "bravo").unwrap()
            - bt_probability(&s, "alpha", "bravo").unwrap()).abs() < 1e-12);
    }

    #[test]
    fn standings_balance_wins_and_losses(seed in any::<u64>(), n in 1usize..300) {
        let rows = standings(&random_log(seed, n));
        let wins: u64 = rows.iter().map(|r| r.wins).sum();
        let losses: u64 = rows.iter().map(|r| r.losses).sum();
        let ties: u64 = rows.iter().map(|r| r.ties).sum();
        prop_assert_eq!(wins, losses);
        prop_assert_eq!(ties % 2, 0);
        prop_assert_eq!(rows.iter().map(|r| r.battles).sum::<u64>(), 2 * n as u64);
    }

    #[test]
    fn stated_counts_flag_iff_components_disagree(a in 0u64..100, b in 0u64..100, t in 0u64..100, extra in 0u64..3) {
        let n = a + b + t + extra;
        let h = HeadToHead::from_counts("x", "y", a, b, t, n);
        prop_assert_eq!(h.consistency_flag, extra == 0);
    }
}
