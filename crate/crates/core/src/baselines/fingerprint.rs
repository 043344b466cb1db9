//! Circular (Morgan-style) fingerprints and Tanimoto similarity.
//!
//! Hashes go through SplitMix64 (see [`crate::molgraph::hash`]), so bit
//! positions are identical on every platform.

use serde::{Deserialize, Serialize};

use super::BaselineError;
use crate::molgraph::hash::{combine, hash_all};
use crate::molgraph::MolGraph;

pub const DEFAULT_BITS: usize = 2048;
pub const DEFAULT_RADIUS: usize = 2;

/// Fixed-width bit vector.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Fingerprint {
    nbits: usize,
    words: Vec<u64>,
}

impl Fingerprint {
    pub fn zeros(nbits: usize) -> Self {
        Fingerprint {
            nbits,
            words: vec![0; nbits.div_ceil(64)],
        }
    }

    pub fn nbits(&self) -> usize {
        self.nbits
    }

    pub fn set(&mut self, bit: usize) {
        assert!(bit < self.nbits, "bit {bit} out of range {}", self.nbits);
        self.words[bit / 64] |= 1 << (bit % 64);
    }

    pub fn get(&self, bit: usize) -> bool {
        bit < self.nbits && self.words[bit / 64] >> (bit % 64) & 1 == 1
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nbits).filter(|&b| self.get(b))
    }
}

fn atom_invariant(g: &MolGraph, i: usize) -> u64 {
    let a = g.atom(i);
    hash_all([
        a.element as u64,
        g.degree(i) as u64,
        a.formal_charge as i64 as u64,
        a.aromatic as u64,
        g.total_h(i) as u64,
    ])
}

/// Folds the atom hashes of rounds `0..=radius` into `nbits` bits.
pub fn ecfp_fingerprint(g: &MolGraph, radius: usize, nbits: usize) -> Fingerprint {
    assert!(nbits > 0, "fingerprint width must be positive");
    let mut fp = Fingerprint::zeros(nbits);
    let mut hashes: Vec<u64> = (0..g.n_atoms()).map(|i| atom_invariant(g, i)).collect();
    for round in 0..=radius {
        for &h in &hashes {
            fp.set((h % nbits as u64) as usize);
        }
        if round == radius {
            break;
        }
        hashes = (0..g.n_atoms())
            .map(|i| {
                let mut pairs: Vec<(usize, u64)> = g
                    .adjacency(i)
                    .iter()
                    .map(|&(j, b)| (g.bond(b).order.index(), hashes[j]))
                    .collect();
                pairs.sort_unstable();
                pairs
                    .into_iter()
                    .fold(combine(round as u64 + 1, hashes[i]), |acc, (order, h)| {
                        combine(combine(acc, order as u64), h)
                    })
            })
            .collect();
    }
    fp
}

/// `|a ∧ b| / |a ∨ b|`, zero when both are empty.
pub fn tanimoto(a: &Fingerprint, b: &Fingerprint) -> Result<f64, BaselineError> {
    if a.nbits != b.nbits {
        return Err(BaselineError::WidthMismatch {
            left: a.nbits,
            right: b.nbits,
        });
    }
    let (mut both, mut either) = (0u32, 0u32);
    for (x, y) in a.words.iter().zip(&b.words) {
        both += (x & y).count_ones();
        either += (x | y).count_ones();
    }
    Ok(if either == 0 {
        0.0
    } else {
        both as f64 / either as f64
    })
}
