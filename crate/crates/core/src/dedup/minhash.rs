use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DedupError, ShingleSet};

/// Mersenne prime 2^61 - 1.
pub const PRIME: u64 = (1 << 61) - 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinHashSignature {
    pub doc_id: String,
    pub mins: Vec<u64>,
    pub param_seed: u64,
}

/// The `(a_i, b_i)` coefficients of the universal hash family
/// `(a·x + b) mod p`, drawn deterministically from a seed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutations {
    pub coeffs: Vec<(u64, u64)>,
    pub param_seed: u64,
}

impl Permutations {
    pub fn new(num_perm: usize, param_seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(param_seed);
        let coeffs = (0..num_perm)
            .map(|_| (rng.gen_range(1..PRIME), rng.gen_range(0..PRIME)))
            .collect();
        Permutations { coeffs, param_seed }
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn signature(&self, shingles: &ShingleSet) -> Result<MinHashSignature, DedupError> {
        if self.coeffs.is_empty() {
            return Err(DedupError::Config("signature length must be >= 1".into()));
        }
        if shingles.is_empty() {
            return Err(DedupError::EmptyShingles(shingles.doc_id.clone()));
        }
        let mut mins = vec![u64::MAX; self.coeffs.len()];
        for &h in &shingles.hashes {
            let x = mod_mersenne(h as u128);
            for (slot, &(a, b)) in mins.iter_mut().zip(&self.coeffs) {
                let v = universal_hash(a, b, x);
                if v < *slot {
                    *slot = v;
                }
            }
        }
        Ok(MinHashSignature {
            doc_id: shingles.doc_id.clone(),
            mins,
            param_seed: self.param_seed,
        })
    }
}

#[inline]
fn mod_mersenne(x: u128) -> u64 {
    let p = PRIME as u128;
    let folded = (x & p) + (x >> 61);
    let folded = (folded & p) + (folded >> 61);
    (if folded >= p { folded - p } else { folded }) as u64
}

#[inline]
pub fn universal_hash(a: u64, b: u64, x: u64) -> u64 {
    mod_mersenne(a as u128 * x as u128 + b as u128)
}

pub fn signature(shingles: &ShingleSet, num_perm: usize, param_seed: u64) -> Result<MinHashSignature, DedupError> {
    Permutations::new(num_perm, param_seed).signature(shingles)
}

/// Fraction of signature positions that agree.
pub fn jaccard_estimate(a: &MinHashSignature, b: &MinHashSignature) -> Result<f64, DedupError> {
    if a.mins.len() != b.mins.len() || a.param_seed != b.param_seed {
        return Err(DedupError::Config(format!(
            "signature parameters differ: H {} vs {}, seed {} vs {}",
            a.mins.len(),
            b.mins.len(),
            a.param_seed,
            b.param_seed
        )));
    }
    if a.mins.is_empty() {
        return Err(DedupError::Config("empty signatures".into()));
    }
    let agree = a.mins.iter().zip(&b.mins).filter(|(x, y)| x == y).count();
    Ok(agree as f64 / a.mins.len() as f64)
}
