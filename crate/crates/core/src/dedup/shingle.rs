use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_64_with_seed;

/// Hashed character k-grams of one document, sorted and deduplicated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShingleSet {
    pub doc_id: String,
    pub hashes: Vec<u64>,
    pub k: usize,
}

impl ShingleSet {
    pub fn len(&self) -> usize {
        self.hashes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hashes.is_empty()
    }
}

/// Lowercases and collapses every whitespace run to a single space.
pub fn canonicalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for word in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.extend(word.chars().flat_map(char::to_lowercase));
    }
    out
}

/// Sliding codepoint window over the canonical text. Texts shorter than `k`
/// codepoints yield an empty set.
pub fn shingles(doc_id: &str, text: &str, k: usize, hasher_seed: u64) -> ShingleSet {
    assert!(k >= 1, "shingle width must be >= 1");
    let canon = canonicalize(text);
    let bounds: Vec<usize> = canon
        .char_indices()
        .map(|(i, _)| i)
        .chain(std::iter::once(canon.len()))
        .collect();
    let n_chars = bounds.len() - 1;
    let mut hashes: Vec<u64> = if n_chars < k {
        Vec::new()
    } else {
        (0..=n_chars - k)
            .map(|i| xxh3_64_with_seed(&canon.as_bytes()[bounds[i]..bounds[i + k]], hasher_seed))
            .collect()
    };
    hashes.sort_unstable();
    hashes.dedup();
    ShingleSet {
        doc_id: doc_id.to_string(),
        hashes,
        k,
    }
}
