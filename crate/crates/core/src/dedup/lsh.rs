use std::collections::BTreeMap;

use rayon::prelude::*;
use xxhash_rust::xxh3::xxh3_64_with_seed;

use super::{DedupError, MinHashSignature};

/// Banded LSH index over signature positions. Bucket members are indices
/// into the signature slice the index was built from, kept sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LshIndex {
    pub bands: usize,
    pub rows: usize,
    pub buckets: BTreeMap<(usize, u64), Vec<usize>>,
}

/// Probability that a pair with Jaccard `j` shares at least one bucket.
pub fn candidate_probability(j: f64, bands: usize, rows: usize) -> f64 {
    1.0 - (1.0 - j.powi(rows as i32)).powi(bands as i32)
}

/// Jaccard at which the candidate curve is steepest, `(1/b)^(1/r)`.
pub fn threshold_estimate(bands: usize, rows: usize) -> f64 {
    (1.0 / bands as f64).powf(1.0 / rows as f64)
}

fn band_hash(mins: &[u64], band: usize) -> u64 {
    let mut bytes = Vec::with_capacity(mins.len() * 8);
    for m in mins {
        bytes.extend_from_slice(&m.to_le_bytes());
    }
    xxh3_64_with_seed(&bytes, band as u64)
}

impl LshIndex {
    pub fn new(bands: usize, rows: usize) -> Self {
        LshIndex {
            bands,
            rows,
            buckets: BTreeMap::new(),
        }
    }

    fn check(&self, sig: &MinHashSignature) -> Result<(), DedupError> {
        if sig.mins.len() != self.bands * self.rows {
            return Err(DedupError::Config(format!(
                "signature length {} != bands {} x rows {}",
                sig.mins.len(),
                self.bands,
                self.rows
            )));
        }
        Ok(())
    }

    pub fn insert(&mut self, idx: usize, sig: &MinHashSignature) -> Result<(), DedupError> {
        self.check(sig)?;
        for (band, chunk) in sig.mins.chunks(self.rows).enumerate() {
            let members = self.buckets.entry((band, band_hash(chunk, band))).or_default();
            if let Err(pos) = members.binary_search(&idx) {
                members.insert(pos, idx);
            }
        }
        Ok(())
    }

    /// Key-union merge; member lists stay sorted.
    pub fn merge(mut self, other: LshIndex) -> LshIndex {
        for (key, members) in other.buckets {
            let slot = self.buckets.entry(key).or_default();
            slot.extend(members);
            slot.sort_unstable();
            slot.dedup();
        }
        self
    }

    /// Builds shard-local indexes in parallel and merges them. The result
    /// is identical for any chunk size or thread count.
    pub fn build(sigs: &[MinHashSignature], bands: usize, rows: usize, chunk: usize) -> Result<LshIndex, DedupError> {
        let chunk = chunk.max(1);
        sigs.par_chunks(chunk)
            .enumerate()
            .map(|(c, part)| {
                let mut idx = LshIndex::new(bands, rows);
                for (i, sig) in part.iter().enumerate() {
                    idx.insert(c * chunk + i, sig)?;
                }
                Ok(idx)
            })
            .try_reduce(|| LshIndex::new(bands, rows), |a, b| Ok(a.merge(b)))
    }

    /// Buckets holding more than one member, in key order.
    pub fn collisions(&self) -> impl Iterator<Item = &[usize]> {
        self.buckets.values().filter(|m| m.len() > 1).map(Vec::as_slice)
    }
}
