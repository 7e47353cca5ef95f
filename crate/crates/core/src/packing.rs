//! Fixed-length context windows from variable-length samples.
//!
//! Concatenation mode streams documents back to back, each followed by a
//! boundary marker, splitting across windows as needed. Bin mode packs whole
//! samples with first-fit-decreasing and never splits.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PackingError {
    #[error("context_length must be >= 1")]
    ZeroContext,
    #[error("sample {0:?} has zero length")]
    EmptySample(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub doc_id: String,
    /// Offset into the document's token stream. In concat mode the stream
    /// is the document followed by its boundary marker.
    pub start_offset: u64,
    pub length: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackedSequence {
    pub context_length: u64,
    pub segments: Vec<Segment>,
    pub pad_tokens: u64,
}

impl PackedSequence {
    pub fn used(&self) -> u64 {
        self.segments.iter().map(|s| s.length).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackingReport {
    pub sequences: u64,
    /// Non-pad tokens over total tokens; 0 when nothing was packed.
    pub utilization: f64,
    pub docs_packed: u64,
    pub docs_oversize: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub oversize_ids: Vec<String>,
}

impl PackingReport {
    fn from_sequences(seqs: &[PackedSequence], docs_packed: u64, oversize_ids: Vec<String>) -> Self {
        let total: u64 = seqs.iter().map(|s| s.context_length).sum();
        let used: u64 = seqs.iter().map(PackedSequence::used).sum();
        PackingReport {
            sequences: seqs.len() as u64,
            utilization: if total == 0 { 0.0 } else { used as f64 / total as f64 },
            docs_packed,
            docs_oversize: oversize_ids.len() as u64,
            oversize_ids,
        }
    }
}

/// Streaming concatenation packer. Feed documents with [`push`], then call
/// [`finish`] to flush the final (possibly padded) window.
///
/// [`push`]: ConcatPacker::push
/// [`finish`]: ConcatPacker::finish
#[derive(Debug)]
pub struct ConcatPacker {
    context_length: u64,
    boundary_tokens: u64,
    current: Vec<Segment>,
    fill: u64,
    docs: u64,
}

impl ConcatPacker {
    pub fn new(context_length: u64, boundary_tokens: u64) -> Result<Self, PackingError> {
        if context_length == 0 {
            return Err(PackingError::ZeroContext);
        }
        Ok(ConcatPacker {
            context_length,
            boundary_tokens,
            current: Vec::new(),
            fill: 0,
            docs: 0,
        })
    }

    /// Appends one document; returns the windows it completed.
    pub fn push(&mut self, doc_id: &str, tokens: u64) -> Vec<PackedSequence> {
        let mut done = Vec::new();
        let unit = tokens + self.boundary_tokens;
        self.docs += 1;
        let mut offset = 0;
        while offset < unit {
            let take = (unit - offset).min(self.context_length - self.fill);
            self.current.push(Segment {
                doc_id: doc_id.to_string(),
                start_offset: offset,
                length: take,
            });
            offset += take;
            self.fill += take;
            if self.fill == self.context_length {
                done.push(PackedSequence {
                    context_length: self.context_length,
                    segments: std::mem::take(&mut self.current),
                    pad_tokens: 0,
                });
                self.fill = 0;
            }
        }
        done
    }

    pub fn finish(self) -> Option<PackedSequence> {
        (!self.current.is_empty()).then(|| PackedSequence {
            context_length: self.context_length,
            pad_tokens: self.context_length - self.fill,
            segments: self.current,
        })
    }

    pub fn docs(&self) -> u64 {
        self.docs
    }
}

/// Concatenates `(doc_id, tokens)` in order; only the last window is padded.
pub fn pack_concat<'a, I>(
    docs: I,
    context_length: u64,
    boundary_tokens: u64,
) -> Result<(Vec<PackedSequence>, PackingReport), PackingError>
where
    I: IntoIterator<Item = (&'a str, u64)>,
{
    let mut packer = ConcatPacker::new(context_length, boundary_tokens)?;
    let mut out = Vec::new();
    for (id, tokens) in docs {
        out.extend(packer.push(id, tokens));
    }
    let docs = packer.docs();
    out.extend(packer.finish());
    let report = PackingReport::from_sequences(&out, docs, Vec::new());
    Ok((out, report))
}

/// Max segment tree over bin free space, answering "leftmost bin with at
/// least `need` free" in O(log n).
struct FreeSpaceTree {
    size: usize,
    tree: Vec<u64>,
}

impl FreeSpaceTree {
    fn new(leaves: usize, capacity: u64) -> Self {
        let size = leaves.next_power_of_two().max(1);
        let mut tree = vec![0; 2 * size];
        for leaf in tree[size..size + leaves].iter_mut() {
            *leaf = capacity;
        }
        for i in (1..size).rev() {
            tree[i] = tree[2 * i].max(tree[2 * i + 1]);
        }
        FreeSpaceTree { size, tree }
    }

    fn leftmost_fit(&self, need: u64) -> Option<usize> {
        if self.tree[1] < need {
            return None;
        }
        let mut i = 1;
        while i < self.size {
            i = if self.tree[2 * i] >= need { 2 * i } else { 2 * i + 1 };
        }
        Some(i - self.size)
    }

    fn consume(&mut self, leaf: usize, amount: u64) {
        let mut i = leaf + self.size;
        self.tree[i] -= amount;
        while i > 1 {
            i /= 2;
            self.tree[i] = self.tree[2 * i].max(self.tree[2 * i + 1]);
        }
    }
}

/// First-fit-decreasing over whole samples. Samples longer than the
/// context are excluded and listed in the report. Ties in length keep input
/// order.
pub fn pack_bins(
    samples: &[(String, u64)],
    context_length: u64,
) -> Result<(Vec<PackedSequence>, PackingReport), PackingError> {
    if context_length == 0 {
        return Err(PackingError::ZeroContext);
    }
    if let Some((id, _)) = samples.iter().find(|(_, len)| *len == 0) {
        return Err(PackingError::EmptySample(id.clone()));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| samples[b].1.cmp(&samples[a].1).then(a.cmp(&b)));

    let mut oversize = Vec::new();
    let fitting: Vec<usize> = order
        .into_iter()
        .filter(|&i| {
            let ok = samples[i].1 <= context_length;
            if !ok {
                oversize.push(samples[i].0.clone());
            }
            ok
        })
        .collect();

    let mut tree = FreeSpaceTree::new(fitting.len(), context_length);
    let mut bins: Vec<PackedSequence> = Vec::new();
    for &i in &fitting {
        let (id, len) = &samples[i];
        let b = tree.leftmost_fit(*len).expect("an empty bin always fits");
        if b == bins.len() {
            bins.push(PackedSequence {
                context_length,
                segments: Vec::new(),
                pad_tokens: context_length,
            });
        }
        tree.consume(b, *len);
        let bin = &mut bins[b];
        bin.segments.push(Segment {
            doc_id: id.clone(),
            start_offset: 0,
            length: *len,
        });
        bin.pad_tokens -= len;
    }
    oversize.sort();
    let report = PackingReport::from_sequences(&bins, fitting.len() as u64, oversize);
    Ok((bins, report))
}

/// [`pack_bins`] over bare lengths; sample ids are their input indices.
pub fn pack_lengths(
    lengths: &[u64],
    context_length: u64,
) -> Result<(Vec<PackedSequence>, PackingReport), PackingError> {
    let samples: Vec<(String, u64)> = lengths.iter().enumerate().map(|(i, &l)| (i.to_string(), l)).collect();
    pack_bins(&samples, context_length)
}
