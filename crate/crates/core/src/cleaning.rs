//! Rule-based artifact removal and whitespace normalization.
//!
//! Every rule is a linear-time regex (or a linear scan for punctuation runs).
//! Codepoints inside the preserve ranges survive any match that covers them,
//! so Hebrew letters, niqqud and geresh/gershayim are never deleted.

use std::io::{BufRead, BufReader, Write};
use std::process::{Command, Stdio};

use log::warn;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const HEBREW_BLOCK: (u32, u32) = (0x0590, 0x05FF);

/// Rules are re-applied until nothing changes; every change strictly
/// shortens the text, so this is only a backstop.
const MAX_PASSES: usize = 64;

#[derive(Debug, Error)]
pub enum CleaningError {
    #[error("rule {id}: invalid pattern: {source}")]
    Pattern {
        id: String,
        #[source]
        source: regex::Error,
    },
    #[error("invalid rule set: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Remove the match (preserved codepoints inside it are kept).
    Delete,
    /// Replace the match with a single space.
    Space,
    /// Remove every line containing a match.
    DeleteLine,
    /// The pattern is a single-character class; runs of one repeated
    /// matching character are capped at `max_punct_run`.
    CapRun,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSpec {
    pub id: String,
    pub pattern: String,
    pub policy: Policy,
}

impl RuleSpec {
    fn new(id: &str, pattern: &str, policy: Policy) -> Self {
        RuleSpec {
            id: id.to_string(),
            pattern: pattern.to_string(),
            policy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CleaningRuleSet {
    pub version: String,
    pub rules: Vec<RuleSpec>,
    pub max_punct_run: usize,
    /// Inclusive codepoint ranges.
    pub preserve_ranges: Vec<(u32, u32)>,
    /// Extra boilerplate line patterns, appended after the built-in rules.
    #[serde(default)]
    pub boilerplate_lines: Vec<String>,
}

impl Default for CleaningRuleSet {
    fn default() -> Self {
        CleaningRuleSet {
            version: "default-1".to_string(),
            rules: vec![
                RuleSpec::new("html_comment", r"(?s)<!--.*?-->", Policy::Delete),
                RuleSpec::new(
                    "markup_tag",
                    r"<(?:/?[A-Za-z][A-Za-z0-9:_-]*(?:\s[^<>]*)?/?|[!?][^<>]*)>",
                    Policy::Delete,
                ),
                RuleSpec::new("url", r"(?i)\b(?:[a-z][a-z0-9+.\-]*://|www\.)[^\s<>]+", Policy::Delete),
                RuleSpec::new(
                    "email",
                    r"[A-Za-z0-9._%+\-]+@[A-Za-z0-9\-]+(?:\.[A-Za-z0-9\-]+)*\.[A-Za-z]{2,}",
                    Policy::Delete,
                ),
                RuleSpec::new(
                    "control_chars",
                    r"[\x00-\x08\x0B-\x1F\x7F\u{80}-\u{9F}]",
                    Policy::Delete,
                ),
                RuleSpec::new("punct_run", r"[\p{P}\p{S}]", Policy::CapRun),
            ],
            max_punct_run: 3,
            preserve_ranges: vec![HEBREW_BLOCK],
            boilerplate_lines: Vec::new(),
        }
    }
}

impl CleaningRuleSet {
    pub fn from_json(text: &str) -> Result<Self, CleaningError> {
        serde_json::from_str(text).map_err(|e| CleaningError::Invalid(e.to_string()))
    }

    /// Stable digest of the rule list, order included.
    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("rule set serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn compile(&self) -> Result<Cleaner, CleaningError> {
        if self.max_punct_run == 0 {
            return Err(CleaningError::Invalid("max_punct_run must be >= 1".into()));
        }
        let mut preserve = self.preserve_ranges.clone();
        if !preserve
            .iter()
            .any(|&(lo, hi)| lo <= HEBREW_BLOCK.0 && hi >= HEBREW_BLOCK.1)
        {
            preserve.push(HEBREW_BLOCK);
        }
        let mut specs = self.rules.clone();
        for (i, pat) in self.boilerplate_lines.iter().enumerate() {
            specs.push(RuleSpec::new(&format!("boilerplate_{i}"), pat, Policy::DeleteLine));
        }
        let rules = specs
            .into_iter()
            .map(|spec| {
                let pattern = if spec.policy == Policy::DeleteLine {
                    format!("(?m)^.*(?:{}).*(?:\n|$)", spec.pattern)
                } else {
                    spec.pattern.clone()
                };
                Regex::new(&pattern)
                    .map(|re| CompiledRule {
                        id: spec.id.clone(),
                        policy: spec.policy,
                        re,
                    })
                    .map_err(|source| CleaningError::Pattern { id: spec.id, source })
            })
            .collect::<Result<_, _>>()?;
        Ok(Cleaner {
            rules,
            max_punct_run: self.max_punct_run,
            preserve,
        })
    }
}

struct CompiledRule {
    id: String,
    policy: Policy,
    re: Regex,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanOutcome {
    pub text: String,
    /// `(rule_id, hit_count)` in rule order.
    pub applied: Vec<(String, u64)>,
    pub bytes_removed: u64,
}

pub struct Cleaner {
    rules: Vec<CompiledRule>,
    max_punct_run: usize,
    preserve: Vec<(u32, u32)>,
}

impl Cleaner {
    pub fn is_preserved(&self, c: char) -> bool {
        let c = c as u32;
        self.preserve.iter().any(|&(lo, hi)| lo <= c && c <= hi)
    }

    pub fn clean(&self, raw: &str) -> CleanOutcome {
        let mut hits = vec![0u64; self.rules.len()];
        let mut text = raw.to_string();
        for _ in 0..MAX_PASSES {
            let mut changed = false;
            for (rule, hit) in self.rules.iter().zip(hits.iter_mut()) {
                let (next, n) = self.apply(rule, &text);
                if n > 0 && next != text {
                    *hit += n;
                    text = next;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        CleanOutcome {
            bytes_removed: raw.len().saturating_sub(text.len()) as u64,
            applied: self.rules.iter().zip(hits).map(|(r, h)| (r.id.clone(), h)).collect(),
            text,
        }
    }

    fn apply(&self, rule: &CompiledRule, text: &str) -> (String, u64) {
        match rule.policy {
            Policy::CapRun => self.cap_runs(&rule.re, text),
            Policy::Delete | Policy::DeleteLine | Policy::Space => {
                let mut out = String::with_capacity(text.len());
                let mut last = 0;
                let mut n = 0u64;
                for m in rule.re.find_iter(text) {
                    if m.as_str().is_empty() {
                        continue;
                    }
                    let kept: String = m.as_str().chars().filter(|&c| self.is_preserved(c)).collect();
                    if kept.len() == m.as_str().len() {
                        continue;
                    }
                    if rule.policy == Policy::Space && m.as_str() == " " {
                        continue;
                    }
                    n += 1;
                    out.push_str(&text[last..m.start()]);
                    if rule.policy == Policy::Space && kept.is_empty() {
                        out.push(' ');
                    }
                    out.push_str(&kept);
                    last = m.end();
                }
                if n == 0 {
                    return (text.to_string(), 0);
                }
                out.push_str(&text[last..]);
                (out, n)
            }
        }
    }

    fn cap_runs(&self, class: &Regex, text: &str) -> (String, u64) {
        let mut out = String::with_capacity(text.len());
        let mut n = 0u64;
        let mut chars = text.chars().peekable();
        let mut buf = [0u8; 4];
        while let Some(c) = chars.next() {
            let mut run = 1usize;
            while chars.peek() == Some(&c) {
                chars.next();
                run += 1;
            }
            let cappable = run > self.max_punct_run && !self.is_preserved(c) && class.is_match(c.encode_utf8(&mut buf));
            let emit = if cappable {
                n += 1;
                self.max_punct_run
            } else {
                run
            };
            out.extend(std::iter::repeat_n(c, emit));
        }
        (out, n)
    }
}

pub fn clean_text(raw: &str, rules: &CleaningRuleSet) -> Result<CleanOutcome, CleaningError> {
    Ok(rules.compile()?.clean(raw))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum NormalizerConfig {
    #[default]
    Builtin,
    /// Length-prefixed stdin/stdout protocol: each record is the decimal
    /// byte length, a newline, then that many bytes. Replies use the same
    /// framing, one per request, in order.
    External { command: Vec<String> },
}

/// Collapses space/tab runs to one space and newline runs longer than two
/// to exactly two.
pub fn collapse_whitespace(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            ' ' | '\t' => {
                while matches!(chars.peek(), Some(' ' | '\t')) {
                    chars.next();
                }
                out.push(' ');
            }
            '\n' => {
                let mut run = 1;
                while chars.peek() == Some(&'\n') {
                    chars.next();
                    run += 1;
                }
                out.push_str(if run >= 2 { "\n\n" } else { "\n" });
            }
            other => out.push(other),
        }
    }
    out
}

pub fn normalize_whitespace(text: &str, normalizer: &NormalizerConfig) -> String {
    normalize_batch(&[text], normalizer)
        .pop()
        .unwrap_or_else(|| text.to_string())
}

/// Normalizes a batch; the external command is spawned once per batch. On
/// any external failure the inputs are returned unchanged.
pub fn normalize_batch<S: AsRef<str>>(texts: &[S], normalizer: &NormalizerConfig) -> Vec<String> {
    match normalizer {
        NormalizerConfig::Builtin => texts.iter().map(|t| collapse_whitespace(t.as_ref())).collect(),
        NormalizerConfig::External { command } => match run_external(command, texts) {
            Ok(out) => out,
            Err(e) => {
                warn!("external normalizer failed, passing documents through: {e}");
                texts.iter().map(|t| t.as_ref().to_string()).collect()
            }
        },
    }
}

pub fn write_framed<W: Write>(w: &mut W, payload: &str) -> std::io::Result<()> {
    writeln!(w, "{}", payload.len())?;
    w.write_all(payload.as_bytes())
}

pub fn read_framed<R: BufRead>(r: &mut R) -> std::io::Result<Option<String>> {
    let mut header = String::new();
    if r.read_line(&mut header)? == 0 {
        return Ok(None);
    }
    let len: usize = header
        .trim_end()
        .parse()
        .map_err(|_| std::io::Error::new(std::io::ErrorKind::InvalidData, format!("bad frame header {header:?}")))?;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf)
        .map(Some)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

fn run_external<S: AsRef<str>>(command: &[String], texts: &[S]) -> Result<Vec<String>, String> {
    let (prog, args) = command.split_first().ok_or("empty normalizer command")?;
    let mut child = Command::new(prog)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .map_err(|e| format!("spawn {prog}: {e}"))?;
    let mut stdin = child.stdin.take().ok_or("no stdin")?;
    let payload: Vec<String> = texts.iter().map(|t| t.as_ref().to_string()).collect();
    let writer = std::thread::spawn(move || -> std::io::Result<()> {
        for t in &payload {
            write_framed(&mut stdin, t)?;
        }
        stdin.flush()
    });
    let mut reader = BufReader::new(child.stdout.take().ok_or("no stdout")?);
    let mut out = Vec::with_capacity(texts.len());
    for _ in texts {
        match read_framed(&mut reader).map_err(|e| e.to_string())? {
            Some(t) => out.push(t),
            None => break,
        }
    }
    let write_result = writer.join().map_err(|_| "writer thread panicked")?;
    let status = child.wait().map_err(|e| e.to_string())?;
    write_result.map_err(|e| e.to_string())?;
    if !status.success() {
        return Err(format!("exited with {status}"));
    }
    if out.len() != texts.len() {
        return Err(format!("expected {} records, got {}", texts.len(), out.len()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clean(s: &str) -> String {
        clean_text(s, &CleaningRuleSet::default()).unwrap().text
    }

    #[test]
    fn strips_tags_around_hebrew() {
        assert_eq!(clean("<p>שלום</p>"), "שלום");
    }

    #[test]
    fn caps_punctuation_runs() {
        assert_eq!(clean("!!!!!!"), "!!!");
        assert_eq!(clean("wait..."), "wait...");
        assert_eq!(clean("a----------b"), "a---b");
    }

    #[test]
    fn gershayim_runs_are_preserved() {
        let s = "צה״״״״ל";
        assert_eq!(clean(s), s);
    }

    #[test]
    fn removes_urls_emails_and_controls() {
        assert_eq!(clean("see https://example.com/x?y=1 now"), "see  now");
        assert_eq!(clean("visit www.example.org."), "visit ");
        assert_eq!(clean("mail me@example.co.il today"), "mail  today");
        assert_eq!(clean("a\u{0}b\u{7}c\u{85}d\te\nf"), "abcd\te\nf");
    }

    #[test]
    fn hebrew_inside_a_match_survives() {
        assert_eq!(clean("http://example.com/שלום"), "שלום");
    }

    #[test]
    fn nested_tags_reach_a_fixed_point() {
        let once = clean("<<p>b>text");
        assert_eq!(once, "text");
        assert_eq!(clean(&once), once);
    }

    #[test]
    fn niqqud_is_untouched() {
        let s = "בְּרֵאשִׁית בָּרָא <b>אֱלֹהִים</b>";
        assert_eq!(clean(s), "בְּרֵאשִׁית בָּרָא אֱלֹהִים");
    }

    #[test]
    fn reports_hits_and_bytes() {
        let out = clean_text("<b>x</b>!!!!!", &CleaningRuleSet::default()).unwrap();
        assert_eq!(out.text, "x!!!");
        let tag_hits = out.applied.iter().find(|(id, _)| id == "markup_tag").unwrap().1;
        assert_eq!(tag_hits, 2);
        assert_eq!(out.bytes_removed, 9);
    }

    #[test]
    fn boilerplate_lines_are_removed() {
        let mut rules = CleaningRuleSet::default();
        rules.boilerplate_lines.push("(?i)accept cookies".into());
        let out = clean_text("body\nPlease accept cookies here\nmore", &rules).unwrap();
        assert_eq!(out.text, "body\nmore");
    }

    #[test]
    fn hebrew_block_is_always_preserved() {
        let mut rules = CleaningRuleSet::default();
        rules.preserve_ranges.clear();
        rules
            .rules
            .push(RuleSpec::new("drop_hebrew", r"\p{Hebrew}+", Policy::Delete));
        assert_eq!(clean_text("abc שלום", &rules).unwrap().text, "abc שלום");
    }

    #[test]
    fn bad_pattern_is_reported() {
        let mut rules = CleaningRuleSet::default();
        rules.rules.push(RuleSpec::new("broken", "(", Policy::Delete));
        assert!(matches!(rules.compile(), Err(CleaningError::Pattern { .. })));
    }

    #[test]
    fn whitespace_collapse() {
        assert_eq!(collapse_whitespace("a  b\n\n\n\nc"), "a b\n\nc");
        assert_eq!(collapse_whitespace("a\t \tb\n\nc\nd"), "a b\n\nc\nd");
        let norm = "a b\n\nc";
        assert_eq!(normalize_whitespace(norm, &NormalizerConfig::Builtin), norm);
    }

    #[test]
    fn framing_round_trips_embedded_newlines() {
        let mut buf = Vec::new();
        write_framed(&mut buf, "a\nb\n").unwrap();
        write_framed(&mut buf, "").unwrap();
        let mut r = std::io::Cursor::new(buf);
        assert_eq!(read_framed(&mut r).unwrap().as_deref(), Some("a\nb\n"));
        assert_eq!(read_framed(&mut r).unwrap().as_deref(), Some(""));
        assert_eq!(read_framed(&mut r).unwrap(), None);
    }

    #[test]
    fn external_echo_normalizer() {
        let cfg = NormalizerConfig::External {
            command: vec!["cat".into()],
        };
        let texts = ["x  y", "multi\nline"];
        assert_eq!(normalize_batch(&texts, &cfg), vec!["x  y", "multi\nline"]);
    }

    #[test]
    fn failing_external_passes_through() {
        let cfg = NormalizerConfig::External {
            command: vec!["/nonexistent/normalizer".into()],
        };
        assert_eq!(normalize_whitespace("a   b", &cfg), "a   b");
        let cfg = NormalizerConfig::External {
            command: vec!["false".into()],
        };
        assert_eq!(normalize_whitespace("a   b", &cfg), "a   b");
    }
}
