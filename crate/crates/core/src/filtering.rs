//! Document-level heuristic quality filters: length bounds, character
//! distribution and repetition.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{is_hebrew, word_count, Document};

#[derive(Debug, Error, PartialEq)]
pub enum FilterError {
    #[error("repetition metrics are undefined for empty text")]
    EmptyText,
    #[error("invalid thresholds: {0}")]
    Thresholds(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RejectReason {
    TooShort,
    TooLong,
    SymbolRatio,
    DigitRatio,
    DupLines,
    DupParagraphs,
    NgramRepetition,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::TooShort => "TooShort",
            RejectReason::TooLong => "TooLong",
            RejectReason::SymbolRatio => "SymbolRatio",
            RejectReason::DigitRatio => "DigitRatio",
            RejectReason::DupLines => "DupLines",
            RejectReason::DupParagraphs => "DupParagraphs",
            RejectReason::NgramRepetition => "NgramRepetition",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterThresholds {
    pub min_words: u64,
    pub max_words: u64,
    pub max_symbol_ratio: f64,
    pub max_digit_ratio: f64,
    pub max_dup_line_frac: f64,
    pub max_dup_para_frac: f64,
    pub max_top_ngram_char_frac: BTreeMap<usize, f64>,
}

impl Default for FilterThresholds {
    fn default() -> Self {
        FilterThresholds {
            min_words: 50,
            max_words: 100_000,
            max_symbol_ratio: 0.10,
            max_digit_ratio: 0.30,
            max_dup_line_frac: 0.30,
            max_dup_para_frac: 0.30,
            max_top_ngram_char_frac: BTreeMap::from([(2, 0.20), (3, 0.18), (4, 0.16)]),
        }
    }
}

impl FilterThresholds {
    pub fn validate(&self) -> Result<(), FilterError> {
        if self.min_words >= self.max_words {
            return Err(FilterError::Thresholds(format!(
                "min_words {} must be below max_words {}",
                self.min_words, self.max_words
            )));
        }
        let fracs = [
            ("max_symbol_ratio", self.max_symbol_ratio),
            ("max_digit_ratio", self.max_digit_ratio),
            ("max_dup_line_frac", self.max_dup_line_frac),
            ("max_dup_para_frac", self.max_dup_para_frac),
        ];
        for (name, v) in fracs.into_iter().chain(
            self.max_top_ngram_char_frac
                .values()
                .map(|&v| ("max_top_ngram_char_frac", v)),
        ) {
            if !(0.0..=1.0).contains(&v) {
                return Err(FilterError::Thresholds(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if self.max_top_ngram_char_frac.keys().any(|&n| n == 0) {
            return Err(FilterError::Thresholds("n-gram order must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub keep: bool,
    pub reason: Option<RejectReason>,
    pub metrics: BTreeMap<String, f64>,
}

pub fn is_letter(c: char) -> bool {
    c.is_alphabetic() || is_hebrew(c)
}

/// `(symbol_ratio, digit_ratio)` over all codepoints.
pub fn char_ratios(text: &str) -> (f64, f64) {
    let (mut total, mut symbols, mut digits) = (0usize, 0usize, 0usize);
    for c in text.chars() {
        total += 1;
        if c.is_numeric() {
            digits += 1;
        } else if !is_letter(c) && !c.is_whitespace() {
            symbols += 1;
        }
    }
    if total == 0 {
        return (0.0, 0.0);
    }
    (symbols as f64 / total as f64, digits as f64 / total as f64)
}

pub const DUP_LINE_FRAC: &str = "dup_line_frac";
pub const DUP_PARA_FRAC: &str = "dup_para_frac";

pub fn top_ngram_key(n: usize) -> String {
    format!("top_{n}gram_char_frac")
}

/// Character mass of items that occur more than once over total mass.
fn duplicate_mass_fraction<'a>(items: impl Iterator<Item = &'a str>) -> f64 {
    let items: Vec<&str> = items.collect();
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for &it in &items {
        *counts.entry(it).or_insert(0) += 1;
    }
    let total: usize = items.iter().map(|s| s.chars().count()).sum();
    if total == 0 {
        return 0.0;
    }
    let dup: usize = items.iter().filter(|s| counts[*s] > 1).map(|s| s.chars().count()).sum();
    dup as f64 / total as f64
}

fn lines(text: &str) -> impl Iterator<Item = &str> {
    text.lines().map(str::trim).filter(|l| !l.is_empty())
}

fn paragraphs(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                out.push(current.join("\n"));
                current.clear();
            }
        } else {
            current.push(line.trim());
        }
    }
    if !current.is_empty() {
        out.push(current.join("\n"));
    }
    out
}

/// Share of word characters covered by occurrences of the most frequent
/// word n-gram. Zero when no n-gram repeats.
fn top_ngram_char_frac(words: &[&str], n: usize) -> f64 {
    if words.len() < n {
        return 0.0;
    }
    let lens: Vec<usize> = words.iter().map(|w| w.chars().count()).collect();
    let total: usize = lens.iter().sum();
    let mut counts: HashMap<&[&str], usize> = HashMap::new();
    for gram in words.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    let best = counts
        .iter()
        .max_by(|a, b| {
            let mass = |g: &[&str]| g.iter().map(|w| w.len()).sum::<usize>();
            a.1.cmp(b.1)
                .then_with(|| mass(a.0).cmp(&mass(b.0)))
                .then_with(|| b.0.cmp(a.0))
        })
        .map(|(g, c)| (*g, *c));
    let Some((gram, count)) = best else {
        return 0.0;
    };
    if count < 2 || total == 0 {
        return 0.0;
    }
    let mut covered = vec![false; words.len()];
    for (i, w) in words.windows(n).enumerate() {
        if w == gram {
            covered[i..i + n].iter_mut().for_each(|c| *c = true);
        }
    }
    let mass: usize = covered.iter().zip(&lens).filter(|(c, _)| **c).map(|(_, l)| l).sum();
    mass as f64 / total as f64
}

pub const NGRAM_ORDERS: [usize; 3] = [2, 3, 4];

pub fn repetition_metrics(text: &str) -> Result<BTreeMap<String, f64>, FilterError> {
    repetition_metrics_for(text, &NGRAM_ORDERS)
}

pub fn repetition_metrics_for(text: &str, orders: &[usize]) -> Result<BTreeMap<String, f64>, FilterError> {
    if text.is_empty() {
        return Err(FilterError::EmptyText);
    }
    let mut m = BTreeMap::new();
    m.insert(DUP_LINE_FRAC.to_string(), duplicate_mass_fraction(lines(text)));
    let paras = paragraphs(text);
    m.insert(
        DUP_PARA_FRAC.to_string(),
        duplicate_mass_fraction(paras.iter().map(String::as_str)),
    );
    let words: Vec<&str> = text.split_whitespace().collect();
    for &n in orders {
        m.insert(top_ngram_key(n), top_ngram_char_frac(&words, n));
    }
    Ok(m)
}

/// Checks run in order: length, symbol ratio, digit ratio, duplicate
/// lines, duplicate paragraphs, n-gram repetition (ascending n). The first
/// failure is the reason; all metrics are always reported.
pub fn evaluate(doc: &Document, thresholds: &FilterThresholds) -> FilterVerdict {
    evaluate_text(&doc.text, thresholds)
}

pub fn evaluate_text(text: &str, t: &FilterThresholds) -> FilterVerdict {
    let words = word_count(text);
    let (symbol_ratio, digit_ratio) = char_ratios(text);
    let orders: Vec<usize> = t.max_top_ngram_char_frac.keys().copied().collect();
    let mut metrics = repetition_metrics_for(text, &orders).unwrap_or_else(|_| {
        let mut m = BTreeMap::from([(DUP_LINE_FRAC.to_string(), 0.0), (DUP_PARA_FRAC.to_string(), 0.0)]);
        for &n in &orders {
            m.insert(top_ngram_key(n), 0.0);
        }
        m
    });
    metrics.insert("word_count".to_string(), words as f64);
    metrics.insert("symbol_ratio".to_string(), symbol_ratio);
    metrics.insert("digit_ratio".to_string(), digit_ratio);

    let reason = if words < t.min_words {
        Some(RejectReason::TooShort)
    } else if words > t.max_words {
        Some(RejectReason::TooLong)
    } else if symbol_ratio > t.max_symbol_ratio {
        Some(RejectReason::SymbolRatio)
    } else if digit_ratio > t.max_digit_ratio {
        Some(RejectReason::DigitRatio)
    } else if metrics[DUP_LINE_FRAC] > t.max_dup_line_frac {
        Some(RejectReason::DupLines)
    } else if metrics[DUP_PARA_FRAC] > t.max_dup_para_frac {
        Some(RejectReason::DupParagraphs)
    } else if t
        .max_top_ngram_char_frac
        .iter()
        .any(|(&n, &max)| metrics[&top_ngram_key(n)] > max)
    {
        Some(RejectReason::NgramRepetition)
    } else {
        None
    };
    FilterVerdict {
        keep: reason.is_none(),
        reason,
        metrics,
    }
}
