//! Near-duplicate detection: character shingles, MinHash signatures, LSH
//! banding and connected-component clustering.

mod lsh;
mod minhash;
mod shingle;
mod union_find;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Category, Document};

pub use lsh::{candidate_probability, threshold_estimate, LshIndex};
pub use minhash::{jaccard_estimate, signature, universal_hash, MinHashSignature, Permutations, PRIME};
pub use shingle::{canonicalize, shingles, ShingleSet};
pub use union_find::UnionFind;

#[derive(Debug, Error, PartialEq)]
pub enum DedupError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("document {0:?} has no shingles")]
    EmptyShingles(String),
    #[error("duplicate document id {0:?}")]
    DuplicateId(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DedupParams {
    /// Shingle width in codepoints.
    pub k: usize,
    /// Signature length.
    pub num_perm: usize,
    pub bands: usize,
    pub rows: usize,
    pub threshold: f64,
    pub seed: u64,
    /// Only compare documents within the same category.
    #[serde(default)]
    pub per_category: bool,
}

impl Default for DedupParams {
    fn default() -> Self {
        DedupParams {
            k: 5,
            num_perm: 128,
            bands: 16,
            rows: 8,
            threshold: 0.7,
            seed: 0,
            per_category: false,
        }
    }
}

impl DedupParams {
    pub fn validate(&self) -> Result<(), DedupError> {
        if self.k == 0 {
            return Err(DedupError::Config("k must be >= 1".into()));
        }
        if self.num_perm == 0 {
            return Err(DedupError::Config("num_perm must be >= 1".into()));
        }
        if self.bands * self.rows != self.num_perm {
            return Err(DedupError::Config(format!(
                "bands {} x rows {} != num_perm {}",
                self.bands, self.rows, self.num_perm
            )));
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(DedupError::Config(format!(
                "threshold {} outside (0, 1]",
                self.threshold
            )));
        }
        Ok(())
    }

    pub fn shingle_seed(&self) -> u64 {
        self.seed
    }

    pub fn permutation_seed(&self) -> u64 {
        self.seed ^ 0x9E37_79B9_7F4A_7C15
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupResult {
    pub kept: BTreeSet<String>,
    /// Removed id → surviving representative.
    pub removed: BTreeMap<String, String>,
    /// Clusters with two or more members, each sorted, ordered by
    /// representative.
    pub clusters: Vec<Vec<String>>,
}

impl DedupResult {
    pub fn report(&self, params: &DedupParams, sample_cap: usize) -> DedupReport {
        DedupReport {
            params: params.clone(),
            kept_count: self.kept.len() as u64,
            removed_count: self.removed.len() as u64,
            cluster_count: self.clusters.len() as u64,
            clusters: self.clusters.iter().take(sample_cap).cloned().collect(),
            removed: self.removed.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DedupReport {
    pub params: DedupParams,
    pub kept_count: u64,
    pub removed_count: u64,
    pub cluster_count: u64,
    pub clusters: Vec<Vec<String>>,
    pub removed: BTreeMap<String, String>,
}

/// Runs near-duplicate detection. The representative of every cluster is
/// its lexicographically smallest id; the output does not depend on input
/// order or on the rayon thread count.
pub fn dedup(docs: &[Document], params: &DedupParams) -> Result<DedupResult, DedupError> {
    params.validate()?;
    let mut order: Vec<&Document> = docs.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    if let Some(w) = order.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(DedupError::DuplicateId(w[0].id.clone()));
    }

    let mut scopes: BTreeMap<Option<Category>, Vec<&Document>> = BTreeMap::new();
    for d in order {
        let key = params.per_category.then_some(d.category);
        scopes.entry(key).or_default().push(d);
    }

    let perms = Permutations::new(params.num_perm, params.permutation_seed());
    let mut result = DedupResult::default();
    for docs in scopes.values() {
        let clusters = cluster_scope(docs, params, &perms)?;
        let mut in_cluster = vec![false; docs.len()];
        for group in clusters {
            for &i in &group {
                in_cluster[i] = true;
            }
            let rep = &docs[group[0]].id;
            result.kept.insert(rep.clone());
            for &i in &group[1..] {
                result.removed.insert(docs[i].id.clone(), rep.clone());
            }
            result
                .clusters
                .push(group.iter().map(|&i| docs[i].id.clone()).collect());
        }
        for (i, d) in docs.iter().enumerate() {
            if !in_cluster[i] {
                result.kept.insert(d.id.clone());
            }
        }
    }
    result.clusters.sort();
    Ok(result)
}

/// Returns multi-member components as sorted index lists into `docs`
/// (which is sorted by id, so index order is id order).
fn cluster_scope(
    docs: &[&Document],
    params: &DedupParams,
    perms: &Permutations,
) -> Result<Vec<Vec<usize>>, DedupError> {
    let sets: Vec<ShingleSet> = docs
        .par_iter()
        .map(|d| shingles(&d.id, &d.text, params.k, params.shingle_seed()))
        .collect();

    let mut uf = UnionFind::new(docs.len());

    // Too short to shingle: exact match on canonical text only.
    let mut exact: HashMap<String, usize> = HashMap::new();
    for (i, s) in sets.iter().enumerate() {
        if s.is_empty() {
            let canon = canonicalize(&docs[i].text);
            match exact.get(&canon) {
                Some(&j) => {
                    uf.union(j, i);
                }
                None => {
                    exact.insert(canon, i);
                }
            }
        }
    }

    let with_sig: Vec<usize> = (0..docs.len()).filter(|&i| !sets[i].is_empty()).collect();
    let sigs: Vec<MinHashSignature> = with_sig
        .par_iter()
        .map(|&i| perms.signature(&sets[i]))
        .collect::<Result<_, _>>()?;
    let chunk = sigs.len().div_ceil(rayon::current_num_threads().max(1)).max(1);
    let index = LshIndex::build(&sigs, params.bands, params.rows, chunk)?;

    for members in index.collisions() {
        for (x, &a) in members.iter().enumerate() {
            for &b in &members[x + 1..] {
                let (da, db) = (with_sig[a], with_sig[b]);
                if uf.connected(da, db) {
                    continue;
                }
                if jaccard_estimate(&sigs[a], &sigs[b])? >= params.threshold {
                    uf.union(da, db);
                }
            }
        }
    }

    Ok(uf.groups().into_iter().filter(|g| g.len() > 1).collect())
}

/// Exact Jaccard similarity of two sorted, deduplicated hash lists.
pub fn exact_jaccard(a: &[u64], b: &[u64]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    inter as f64 / (a.len() + b.len() - inter) as f64
}
