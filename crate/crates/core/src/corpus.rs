//! Document records, token counting, JSON Lines shard I/O and corpus manifests.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub const PIPELINE_VERSION: &str = concat!("corpusforge/", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid UTF-8 at byte offset {offset}")]
    Utf8 { offset: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("duplicate document id {id:?} at {location}")]
    DuplicateId { id: String, location: String },
    #[error("unknown cell key {0:?} (expected LANG/Category)")]
    UnknownCell(String),
    #[error("malformed manifest: {0}")]
    Manifest(String),
}

impl CorpusError {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        CorpusError::Io {
            path: path.into(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Lang {
    #[serde(rename = "EN")]
    En,
    #[serde(rename = "HE")]
    He,
}

impl Lang {
    pub const ALL: [Lang; 2] = [Lang::En, Lang::He];

    pub fn as_str(self) -> &'static str {
        match self {
            Lang::En => "EN",
            Lang::He => "HE",
        }
    }
}

impl FromStr for Lang {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "EN" => Ok(Lang::En),
            "HE" => Ok(Lang::He),
            _ => Err(CorpusError::UnknownCell(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    Web,
    CulturalAcademic,
    LegalGovernment,
    NewsMedia,
    NewsSocialMedia,
    SocialColloquial,
    StemReasoning,
}

impl Category {
    pub const ALL: [Category; 7] = [
        Category::Web,
        Category::CulturalAcademic,
        Category::LegalGovernment,
        Category::NewsMedia,
        Category::NewsSocialMedia,
        Category::SocialColloquial,
        Category::StemReasoning,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Web => "Web",
            Category::CulturalAcademic => "CulturalAcademic",
            Category::LegalGovernment => "LegalGovernment",
            Category::NewsMedia => "NewsMedia",
            Category::NewsSocialMedia => "NewsSocialMedia",
            Category::SocialColloquial => "SocialColloquial",
            Category::StemReasoning => "StemReasoning",
        }
    }
}

impl FromStr for Category {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| CorpusError::UnknownCell(s.to_string()))
    }
}

/// A (language, category) mixture cell. Serialized as `"LANG/Category"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellKey {
    pub lang: Lang,
    pub category: Category,
}

impl CellKey {
    pub fn new(lang: Lang, category: Category) -> Self {
        CellKey { lang, category }
    }
}

impl fmt::Display for CellKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.lang.as_str(), self.category.as_str())
    }
}

impl FromStr for CellKey {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (lang, cat) = s
            .split_once('/')
            .ok_or_else(|| CorpusError::UnknownCell(s.to_string()))?;
        let lang = lang.parse().map_err(|_| CorpusError::UnknownCell(s.to_string()))?;
        let category = cat.parse().map_err(|_| CorpusError::UnknownCell(s.to_string()))?;
        Ok(CellKey { lang, category })
    }
}

impl Serialize for CellKey {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CellKey {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Byte-ratio token estimator. Divisors are fixed-point in thousandths so
/// that 2.5 bytes/token is exactly representable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenCounter {
    pub en_divisor_milli: u64,
    pub he_divisor_milli: u64,
}

impl Default for TokenCounter {
    fn default() -> Self {
        TokenCounter {
            en_divisor_milli: 4000,
            he_divisor_milli: 2500,
        }
    }
}

impl TokenCounter {
    pub fn count(&self, text: &str) -> u64 {
        if text.is_empty() {
            return 0;
        }
        let divisor = match majority_script(text) {
            Lang::He => self.he_divisor_milli,
            Lang::En => self.en_divisor_milli,
        }
        .max(1);
        let scaled = text.len() as u64 * 1000;
        scaled.div_ceil(divisor)
    }

    pub fn count_bytes(&self, bytes: &[u8]) -> Result<u64, CorpusError> {
        let text = std::str::from_utf8(bytes).map_err(|e| CorpusError::Utf8 {
            offset: e.valid_up_to(),
        })?;
        Ok(self.count(text))
    }
}

pub fn count_tokens(text: &str, counter: &TokenCounter) -> u64 {
    counter.count(text)
}

pub fn is_hebrew(c: char) -> bool {
    ('\u{0590}'..='\u{05FF}').contains(&c)
}

/// Hebrew when Hebrew-block letters outnumber other alphabetic codepoints.
fn majority_script(text: &str) -> Lang {
    let (mut he, mut other) = (0usize, 0usize);
    for c in text.chars() {
        if is_hebrew(c) {
            if c.is_alphabetic() {
                he += 1;
            }
        } else if c.is_alphabetic() {
            other += 1;
        }
    }
    if he > other {
        Lang::He
    } else {
        Lang::En
    }
}

pub fn word_count(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub lang: Lang,
    pub category: Category,
    pub source: String,
    pub word_count: u64,
    pub token_count: u64,
}

impl Document {
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        lang: Lang,
        category: Category,
        source: impl Into<String>,
        counter: &TokenCounter,
    ) -> Self {
        let text = text.into();
        Document {
            id: id.into(),
            word_count: word_count(&text),
            token_count: counter.count(&text),
            text,
            lang,
            category,
            source: source.into(),
        }
    }

    pub fn cell(&self) -> CellKey {
        CellKey::new(self.lang, self.category)
    }

    /// Recompute `word_count` and `token_count` after the text changed.
    pub fn recount(&mut self, counter: &TokenCounter) {
        self.word_count = word_count(&self.text);
        self.token_count = counter.count(&self.text);
    }
}

#[derive(Deserialize)]
struct RawDocument {
    id: String,
    text: String,
    lang: Lang,
    category: Category,
    source: String,
    word_count: Option<u64>,
    token_count: Option<u64>,
}

impl RawDocument {
    fn into_document(self, counter: &TokenCounter) -> Result<Document, String> {
        let words = word_count(&self.text);
        if let Some(given) = self.word_count {
            if given != words {
                return Err(format!("word_count {given} disagrees with text ({words} words)"));
            }
        }
        let tokens = match self.token_count {
            Some(t) => {
                if (t == 0) != self.text.is_empty() {
                    return Err(format!(
                        "token_count {t} inconsistent with {} text",
                        if self.text.is_empty() { "empty" } else { "non-empty" }
                    ));
                }
                t
            }
            None => counter.count(&self.text),
        };
        Ok(Document {
            id: self.id,
            text: self.text,
            lang: self.lang,
            category: self.category,
            source: self.source,
            word_count: words,
            token_count: tokens,
        })
    }
}

/// A recoverable per-line load failure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for LineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

pub enum ShardItem {
    Doc(Document),
    Malformed(LineError),
}

/// Streaming reader over a JSON Lines shard. Malformed lines are yielded as
/// [`ShardItem::Malformed`]; a duplicate id ends the stream with an error.
pub struct ShardReader<R> {
    lines: R,
    label: String,
    counter: TokenCounter,
    line_no: usize,
    seen: HashSet<String>,
    failed: bool,
    buf: Vec<u8>,
}

impl<R: BufRead> ShardReader<R> {
    pub fn new(reader: R, label: impl Into<String>, counter: TokenCounter) -> Self {
        ShardReader {
            lines: reader,
            label: label.into(),
            counter,
            line_no: 0,
            seen: HashSet::new(),
            failed: false,
            buf: Vec::new(),
        }
    }
}

impl ShardReader<Box<dyn BufRead + Send>> {
    pub fn open(path: &Path, counter: TokenCounter) -> Result<Self, CorpusError> {
        let reader = open_read(path)?;
        Ok(ShardReader::new(reader, path.display().to_string(), counter))
    }
}

impl<R: BufRead> Iterator for ShardReader<R> {
    type Item = Result<ShardItem, CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            self.buf.clear();
            match self.lines.read_until(b'\n', &mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => {
                    self.failed = true;
                    return Some(Err(CorpusError::io(&self.label, e)));
                }
            }
            self.line_no += 1;
            let mut line = self.buf.as_slice();
            if line.ends_with(b"\n") {
                line = &line[..line.len() - 1];
            }
            if line.ends_with(b"\r") {
                line = &line[..line.len() - 1];
            }
            if line.iter().all(|b| b.is_ascii_whitespace()) {
                continue;
            }
            let text = match std::str::from_utf8(line) {
                Ok(t) => t,
                Err(e) => {
                    return Some(Ok(ShardItem::Malformed(LineError {
                        line: self.line_no,
                        message: format!("invalid UTF-8 at byte offset {}", e.valid_up_to()),
                    })))
                }
            };
            let parsed = serde_json::from_str::<RawDocument>(text)
                .map_err(|e| e.to_string())
                .and_then(|raw| raw.into_document(&self.counter));
            let doc = match parsed {
                Ok(d) => d,
                Err(message) => {
                    return Some(Ok(ShardItem::Malformed(LineError {
                        line: self.line_no,
                        message,
                    })))
                }
            };
            if !self.seen.insert(doc.id.clone()) {
                self.failed = true;
                return Some(Err(CorpusError::DuplicateId {
                    id: doc.id,
                    location: format!("{}:{}", self.label, self.line_no),
                }));
            }
            return Some(Ok(ShardItem::Doc(doc)));
        }
    }
}

#[derive(Debug, Default)]
pub struct ShardContents {
    pub docs: Vec<Document>,
    pub errors: Vec<LineError>,
}

pub fn read_shard(path: &Path, counter: &TokenCounter) -> Result<ShardContents, CorpusError> {
    collect_shard(ShardReader::open(path, *counter)?)
}

pub fn read_shard_from<R: BufRead>(
    reader: R,
    label: &str,
    counter: &TokenCounter,
) -> Result<ShardContents, CorpusError> {
    collect_shard(ShardReader::new(reader, label, *counter))
}

fn collect_shard<R: BufRead>(reader: ShardReader<R>) -> Result<ShardContents, CorpusError> {
    let mut out = ShardContents::default();
    for item in reader {
        match item? {
            ShardItem::Doc(d) => out.docs.push(d),
            ShardItem::Malformed(e) => out.errors.push(e),
        }
    }
    Ok(out)
}

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

pub fn open_read(path: &Path) -> Result<Box<dyn BufRead + Send>, CorpusError> {
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let inner: Box<dyn Read + Send> = if is_gz(path) {
        Box::new(GzDecoder::new(file))
    } else {
        Box::new(file)
    };
    Ok(Box::new(BufReader::new(inner)))
}

pub fn write_shard<'a, I>(path: &Path, docs: I) -> Result<(), CorpusError>
where
    I: IntoIterator<Item = &'a Document>,
{
    let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
    let result = if is_gz(path) {
        let mut enc = GzEncoder::new(BufWriter::new(file), Compression::default());
        write_docs(&mut enc, docs).and_then(|_| enc.finish().map(|_| ()))
    } else {
        let mut w = BufWriter::new(file);
        write_docs(&mut w, docs).and_then(|_| w.flush())
    };
    result.map_err(|e| CorpusError::io(path, e))
}

pub fn write_docs<'a, W, I>(w: &mut W, docs: I) -> io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a Document>,
{
    for doc in docs {
        serde_json::to_writer(&mut *w, doc)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Serialize any records as JSON Lines.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), CorpusError> {
    let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res: io::Result<()> = (|| {
        for r in records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    })();
    res.map_err(|e| CorpusError::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardEntry {
    pub path: String,
    pub doc_count: u64,
    pub token_total: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub shards: Vec<ShardEntry>,
    pub totals: BTreeMap<CellKey, u64>,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
    pub pipeline_version: String,
}

impl Default for CorpusManifest {
    fn default() -> Self {
        CorpusManifest {
            shards: Vec::new(),
            totals: BTreeMap::new(),
            created_at: build_timestamp(),
            pipeline_version: PIPELINE_VERSION.to_string(),
        }
    }
}

impl CorpusManifest {
    /// A manifest carrying only cell totals, e.g. reported token counts.
    pub fn from_totals(totals: impl IntoIterator<Item = (CellKey, u64)>) -> Self {
        let mut m = CorpusManifest::default();
        for (cell, tokens) in totals {
            *m.totals.entry(cell).or_insert(0) += tokens;
        }
        m
    }

    pub fn grand_total(&self) -> u64 {
        self.totals.values().sum()
    }

    pub fn shard_token_total(&self) -> u64 {
        self.shards.iter().map(|s| s.token_total).sum()
    }

    /// Per-cell share of the grand total. Empty when the total is zero.
    pub fn composition(&self) -> BTreeMap<CellKey, f64> {
        let total = self.grand_total();
        if total == 0 {
            return BTreeMap::new();
        }
        self.totals
            .iter()
            .map(|(k, &v)| (*k, v as f64 / total as f64))
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CorpusError::Manifest(e.to_string()))
    }
}

/// `SOURCE_DATE_EPOCH` when set, otherwise 0. Never the wall clock, so
/// rebuilding a manifest from the same shards gives the same bytes.
pub fn build_timestamp() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or(0)
}

/// Mergeable per-shard summary used to assemble a manifest.
#[derive(Debug, Default)]
struct ManifestPart {
    shards: Vec<ShardEntry>,
    totals: BTreeMap<CellKey, u64>,
    ids: HashSet<String>,
    line_errors: Vec<(String, LineError)>,
}

impl ManifestPart {
    fn merge(mut self, other: ManifestPart) -> Result<ManifestPart, CorpusError> {
        let (small, mut large) = if self.ids.len() <= other.ids.len() {
            (std::mem::take(&mut self.ids), other.ids)
        } else {
            (other.ids, std::mem::take(&mut self.ids))
        };
        let mut dups: Vec<&String> = small.iter().filter(|id| large.contains(*id)).collect();
        if !dups.is_empty() {
            dups.sort();
            return Err(CorpusError::DuplicateId {
                id: dups[0].clone(),
                location: "across shards".to_string(),
            });
        }
        large.extend(small);
        self.ids = large;
        self.shards.extend(other.shards);
        for (k, v) in other.totals {
            *self.totals.entry(k).or_insert(0) += v;
        }
        self.line_errors.extend(other.line_errors);
        Ok(self)
    }
}

#[derive(Debug)]
pub struct ManifestBuild {
    pub manifest: CorpusManifest,
    pub line_errors: Vec<(String, LineError)>,
}

/// Reads every shard (in parallel) and sums token totals per cell.
pub fn build_manifest<P: AsRef<Path> + Sync>(
    shards: &[P],
    counter: &TokenCounter,
) -> Result<ManifestBuild, CorpusError> {
    let parts: Vec<ManifestPart> = shards
        .par_iter()
        .map(|p| {
            let path = p.as_ref();
            let label = path.display().to_string();
            let contents = read_shard(path, counter)?;
            let mut part = ManifestPart::default();
            let mut entry = ShardEntry {
                path: label.clone(),
                doc_count: 0,
                token_total: 0,
            };
            for doc in contents.docs {
                entry.doc_count += 1;
                entry.token_total += doc.token_count;
                *part.totals.entry(doc.cell()).or_insert(0) += doc.token_count;
                part.ids.insert(doc.id);
            }
            part.shards.push(entry);
            part.line_errors = contents.errors.into_iter().map(|e| (label.clone(), e)).collect();
            Ok(part)
        })
        .collect::<Result<_, CorpusError>>()?;
    let merged = parts
        .into_iter()
        .try_fold(ManifestPart::default(), ManifestPart::merge)?;
    let manifest = CorpusManifest {
        shards: merged.shards,
        totals: merged.totals,
        ..CorpusManifest::default()
    };
    Ok(ManifestBuild {
        manifest,
        line_errors: merged.line_errors,
    })
}

/// Document-level accounting for a pipeline stage.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineStats {
    pub docs_in: u64,
    pub docs_out: u64,
    pub removed_by_reason: BTreeMap<String, u64>,
    pub tokens_in: u64,
    pub tokens_out: u64,
}

impl PipelineStats {
    pub fn keep(&mut self, tokens_in: u64, tokens_out: u64) {
        self.docs_in += 1;
        self.docs_out += 1;
        self.tokens_in += tokens_in;
        self.tokens_out += tokens_out;
    }

    pub fn remove(&mut self, reason: &str, tokens_in: u64) {
        self.docs_in += 1;
        self.tokens_in += tokens_in;
        *self.removed_by_reason.entry(reason.to_string()).or_insert(0) += 1;
    }

    pub fn merge(mut self, other: PipelineStats) -> PipelineStats {
        self.docs_in += other.docs_in;
        self.docs_out += other.docs_out;
        self.tokens_in += other.tokens_in;
        self.tokens_out += other.tokens_out;
        for (k, v) in other.removed_by_reason {
            *self.removed_by_reason.entry(k).or_insert(0) += v;
        }
        self
    }

    pub fn is_balanced(&self) -> bool {
        self.docs_out + self.removed_by_reason.values().sum::<u64>() == self.docs_in
    }
}
