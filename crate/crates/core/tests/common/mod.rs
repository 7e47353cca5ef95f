//! Seeded synthetic corpora shared by the integration tests.

#![allow(dead_code)]

use corpusforge::corpus::{Category, Document, Lang, TokenCounter};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ne", "ru", "sa", "ti", "vo", "ze", "ba", "do", "fi", "gu", "ha", "je",
];
const HEBREW: &[&str] = &["של", "את", "ספר", "בית", "עולם", "מים", "לחם", "שלום", "דבר", "יום"];

/// A pseudo-word of 2 to 4 syllables.
pub fn word(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(2..=4);
    (0..n).map(|_| *SYLLABLES.choose(rng).unwrap()).collect()
}

pub fn words(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    (0..n).map(|_| word(rng)).collect()
}

pub fn sentence(rng: &mut ChaCha8Rng, n: usize) -> String {
    words(rng, n).join(" ")
}

pub fn hebrew_sentence(rng: &mut ChaCha8Rng, n: usize) -> String {
    (0..n)
        .map(|_| *HEBREW.choose(rng).unwrap())
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn doc(id: &str, text: &str, lang: Lang, category: Category) -> Document {
    Document::new(id, text, lang, category, "synthetic", &TokenCounter::default())
}

/// Mixed-language documents with a spread of lengths over every cell.
pub fn corpus(seed: u64, n: usize) -> Vec<Document> {
    let mut r = rng(seed);
    (0..n)
        .map(|i| {
            let lang = if r.gen_bool(0.5) { Lang::En } else { Lang::He };
            let cat = *Category::ALL.choose(&mut r).unwrap();
            let len = r.gen_range(1..200);
            let text = match lang {
                Lang::En => sentence(&mut r, len),
                Lang::He => hebrew_sentence(&mut r, len),
            };
            doc(&format!("d{i:05}"), &text, lang, cat)
        })
        .collect()
}

/// Paragraph-structured English prose that passes the default filters.
pub fn clean_prose(rng: &mut ChaCha8Rng, paragraphs: usize) -> String {
    (0..paragraphs)
        .map(|_| {
            let lines = rng.gen_range(1..4);
            (0..lines)
                .map(|_| {
                    let n = rng.gen_range(12..25);
                    format!("{}.", sentence(rng, n))
                })
                .collect::<Vec<_>>()
                .join("\n")
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Character k-grams of the lowercased, whitespace-collapsed text, as
/// plain strings.
pub fn string_shingles(text: &str, k: usize) -> std::collections::HashSet<String> {
    let canon: Vec<char> = text
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
        .chars()
        .collect();
    if canon.len() < k {
        return Default::default();
    }
    canon.windows(k).map(|w| w.iter().collect()).collect()
}

pub fn jaccard(a: &std::collections::HashSet<String>, b: &std::collections::HashSet<String>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(b).count();
    inter as f64 / (a.len() + b.len() - inter) as f64
}

/// Replaces `m` random words with fresh ones.
pub fn mutate(rng: &mut ChaCha8Rng, text: &str, m: usize) -> String {
    let mut ws: Vec<String> = text.split(' ').map(str::to_string).collect();
    for _ in 0..m {
        let i = rng.gen_range(0..ws.len());
        ws[i] = word(rng);
    }
    ws.join(" ")
}

/// Near-duplicate clusters (every member at exact Jaccard >= 0.8 with its
/// base) plus distractors at <= 0.4 with everything generated before them.
pub fn planted_dedup_corpus(seed: u64, n: usize, k: usize) -> Vec<Document> {
    let mut r = rng(seed);
    let mut texts: Vec<String> = Vec::new();
    let mut sets = Vec::new();
    let max_sim = |s: &std::collections::HashSet<String>, sets: &[std::collections::HashSet<String>]| {
        sets.iter().map(|t| jaccard(s, t)).fold(0.0, f64::max)
    };
    while texts.len() < n {
        let len = r.gen_range(60..100);
        let base = sentence(&mut r, len);
        let base_set = string_shingles(&base, k);
        if max_sim(&base_set, &sets) > 0.4 {
            continue;
        }
        let cluster_size = if r.gen_bool(0.5) { r.gen_range(2..6) } else { 1 };
        texts.push(base.clone());
        sets.push(base_set.clone());
        let mut members = 1;
        while members < cluster_size && texts.len() < n {
            let mutations = r.gen_range(0..3);
            let v = mutate(&mut r, &base, mutations);
            if jaccard(&string_shingles(&v, k), &base_set) >= 0.8 {
                sets.push(string_shingles(&v, k));
                texts.push(v);
                members += 1;
            }
        }
        // A heavily rewritten sibling of the base as a distractor.
        if r.gen_bool(0.3) && texts.len() < n {
            let v = mutate(&mut r, &base, len * 3 / 4);
            let s = string_shingles(&v, k);
            if jaccard(&s, &base_set) <= 0.4 && max_sim(&s, &sets) <= 0.4 {
                sets.push(s);
                texts.push(v);
            }
        }
    }
    let mut order: Vec<usize> = (0..texts.len()).collect();
    order.shuffle(&mut r);
    order
        .into_iter()
        .enumerate()
        .map(|(i, t)| {
            let cat = Category::ALL[i % Category::ALL.len()];
            doc(&format!("p{i:04}"), &texts[t], Lang::En, cat)
        })
        .collect()
}

/// Connected components of the graph joining every pair at exact Jaccard of
/// at least `tau`, by brute force over all pairs. Returns a component label per
/// document and the pairwise similarity matrix.
pub fn exact_partition(docs: &[Document], k: usize, tau: f64) -> (Vec<usize>, Vec<Vec<f64>>) {
    let sets: Vec<_> = docs.iter().map(|d| string_shingles(&d.text, k)).collect();
    let n = docs.len();
    let mut sim = vec![vec![1.0; n]; n];
    let mut label: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in i + 1..n {
            let s = jaccard(&sets[i], &sets[j]);
            sim[i][j] = s;
            sim[j][i] = s;
        }
    }
    // Label propagation until stable: every node takes the smallest label
    // among itself and its neighbours.
    loop {
        let mut changed = false;
        for i in 0..n {
            for j in 0..n {
                if sim[i][j] >= tau && label[j] < label[i] {
                    label[i] = label[j];
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    (label, sim)
}

pub struct PairAgreement {
    /// Same-component pairs of the exact partition.
    pub oracle_pairs: usize,
    /// Of those, pairs that dedup also put in one cluster.
    pub recovered: usize,
    /// Pairs whose similarity lies outside `tau ± band`.
    pub outside_band: usize,
    /// Of those, pairs on which dedup and the exact partition agree.
    pub outside_band_agree: usize,
}

impl PairAgreement {
    pub fn recall(&self) -> f64 {
        if self.oracle_pairs == 0 {
            1.0
        } else {
            self.recovered as f64 / self.oracle_pairs as f64
        }
    }

    pub fn outside_band_rate(&self) -> f64 {
        if self.outside_band == 0 {
            1.0
        } else {
            self.outside_band_agree as f64 / self.outside_band as f64
        }
    }
}

/// Compares dedup clusters with the exact partition pair by pair.
pub fn pair_agreement(
    docs: &[Document],
    result: &corpusforge::dedup::DedupResult,
    k: usize,
    tau: f64,
    band: f64,
) -> PairAgreement {
    let (label, sim) = exact_partition(docs, k, tau);
    let index: std::collections::HashMap<&str, usize> =
        docs.iter().enumerate().map(|(i, d)| (d.id.as_str(), i)).collect();
    let mut cluster: Vec<usize> = (0..docs.len()).collect();
    for (c, members) in result.clusters.iter().enumerate() {
        for id in members {
            cluster[index[id.as_str()]] = docs.len() + c;
        }
    }
    let mut out = PairAgreement {
        oracle_pairs: 0,
        recovered: 0,
        outside_band: 0,
        outside_band_agree: 0,
    };
    for i in 0..docs.len() {
        for j in i + 1..docs.len() {
            let truth = label[i] == label[j];
            let ours = cluster[i] == cluster[j];
            if truth {
                out.oracle_pairs += 1;
                out.recovered += ours as usize;
            }
            if (sim[i][j] - tau).abs() > band {
                out.outside_band += 1;
                out.outside_band_agree += (truth == ours) as usize;
            }
        }
    }
    out
}

/// A web-like corpus for end-to-end runs: prose with markup and messy
/// whitespace, near-duplicate copies, and a share of documents the default
/// filters reject.
pub fn pipeline_corpus(seed: u64, n: usize) -> Vec<Document> {
    let cats = [Category::Web, Category::NewsMedia, Category::StemReasoning];
    let mut r = rng(seed);
    let mut texts: Vec<String> = Vec::new();
    while texts.len() < n {
        let text = match r.gen_range(0..10) {
            0 => {
                let len = r.gen_range(3..20);
                sentence(&mut r, len)
            }
            1 if !texts.is_empty() => {
                let src = texts[r.gen_range(0..texts.len())].clone();
                mutate(&mut r, &src, 1)
            }
            2 => {
                let paragraphs = r.gen_range(2..5);
                format!("<div><p>{}</p></div>", clean_prose(&mut r, paragraphs))
            }
            3 => {
                let paragraphs = r.gen_range(2..5);
                clean_prose(&mut r, paragraphs)
                    .replace(". ", ".   \t")
                    .replace("\n\n", "\n\n\n\n")
            }
            _ => {
                let paragraphs = r.gen_range(2..6);
                clean_prose(&mut r, paragraphs)
            }
        };
        texts.push(text);
    }
    texts
        .iter()
        .enumerate()
        .map(|(i, t)| doc(&format!("w{i:05}"), t, Lang::En, cats[i % cats.len()]))
        .collect()
}

/// A phase spec over the cells of [`pipeline_corpus`].
pub fn pipeline_phase(budget: u64) -> serde_json::Value {
    serde_json::json!({
        "phase_id": "P1",
        "context_length": 2048,
        "token_budget": budget,
        "targets": {"EN/Web": 0.5, "EN/NewsMedia": 0.3, "EN/StemReasoning": 0.2},
        "seed": 5,
    })
}

/// Fewest bins of size `cap` holding every length, by dynamic programming
/// over subsets: for each subset, the minimum (bins, fill of the open bin).
pub fn optimal_bins(lengths: &[u64], cap: u64) -> u32 {
    let n = lengths.len();
    let full = (1usize << n) - 1;
    let mut best = vec![(u32::MAX, 0u64); 1 << n];
    best[0] = (1, 0);
    for mask in 0..=full {
        let (bins, fill) = best[mask];
        if bins == u32::MAX {
            continue;
        }
        for (i, &len) in lengths.iter().enumerate() {
            if mask & (1 << i) != 0 {
                continue;
            }
            let next = if fill + len <= cap {
                (bins, fill + len)
            } else {
                (bins + 1, len)
            };
            let slot = &mut best[mask | (1 << i)];
            if next < *slot {
                *slot = next;
            }
        }
    }
    if n == 0 {
        0
    } else {
        best[full].0
    }
}
