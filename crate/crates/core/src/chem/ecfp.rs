//! Extended-connectivity (circular) fingerprints.
//!
//! Each atom starts from a hash of its local invariants. Every iteration
//! rehashes an atom's identifier with the sorted `(bond code, neighbour
//! identifier)` pairs of its neighbours. An environment is recorded only the
//! first time its bond set is seen; atoms whose environment repeats an earlier
//! one stop contributing. Identifiers are folded into `n_bits` by modulo.

use serde::{Deserialize, Serialize};

use super::smiles::Molecule;
use crate::error::{Error, Result};

pub const DEFAULT_BITS: usize = 2048;
pub const DEFAULT_RADIUS: usize = 2;

/// 32-bit FNV-1a over a sequence of little-endian `u32` words.
fn fnv1a32(words: &[u32]) -> u32 {
    let mut h: u32 = 0x811c_9dc5;
    for w in words {
        for b in w.to_le_bytes() {
            h ^= b as u32;
            h = h.wrapping_mul(0x0100_0193);
        }
    }
    h
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Fingerprint {
    n_bits: usize,
    words: Vec<u64>,
}

impl Fingerprint {
    pub fn empty(n_bits: usize) -> Self {
        Self {
            n_bits,
            words: vec![0; n_bits.div_ceil(64)],
        }
    }

    pub fn from_indices(n_bits: usize, idx: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut fp = Self::empty(n_bits);
        for i in idx {
            if i >= n_bits {
                return Err(Error::invalid(format!("bit {i} out of range for {n_bits} bits")));
            }
            fp.set(i);
        }
        Ok(fp)
    }

    pub fn n_bits(&self) -> usize {
        self.n_bits
    }

    pub fn set(&mut self, i: usize) {
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn get(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn indices(&self) -> Vec<usize> {
        (0..self.n_bits).filter(|&i| self.get(i)).collect()
    }

    /// Dense 0/1 vector, as fed to the compound encoder.
    pub fn to_dense(&self) -> Vec<f64> {
        (0..self.n_bits)
            .map(|i| if self.get(i) { 1.0 } else { 0.0 })
            .collect()
    }
}

/// Radius-0 identifier of every atom.
pub fn atom_invariants(mol: &Molecule) -> Vec<u32> {
    let adj = mol.neighbors();
    let in_ring = mol.ring_atoms();
    mol.atoms
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let heavy_degree = adj[i].len() as u32;
            let h = a.hydrogens as u32;
            let mut words = vec![
                a.atomic_number as u32,
                heavy_degree + h,
                h,
                a.charge as i32 as u32,
            ];
            if in_ring[i] {
                words.push(1);
            }
            fnv1a32(&words)
        })
        .collect()
}

/// Every identifier produced up to `radius`, in discovery order. Duplicates
/// are kept (two atoms can share an identifier).
pub fn environment_ids(mol: &Molecule, radius: usize) -> Vec<u32> {
    let n = mol.atoms.len();
    let n_bonds = mol.bonds.len();
    let adj = mol.neighbors();
    let mut current = atom_invariants(mol);
    let mut out = current.clone();

    // bond set covered by each atom's environment at the previous radius
    let mut env: Vec<Vec<bool>> = vec![vec![false; n_bonds]; n];
    let mut seen: Vec<Vec<bool>> = Vec::new();
    let mut dead = vec![false; n];

    for layer in 0..radius {
        let mut next_ids = vec![0u32; n];
        let mut next_env = env.clone();
        let mut round: Vec<(Vec<bool>, u32, usize)> = Vec::new();
        for atom in 0..n {
            if dead[atom] {
                continue;
            }
            if adj[atom].is_empty() {
                dead[atom] = true;
                continue;
            }
            let mut nbrs: Vec<(u32, u32)> = Vec::with_capacity(adj[atom].len());
            for &(other, bond) in &adj[atom] {
                next_env[atom][bond] = true;
                for (k, covered) in env[other].iter().enumerate() {
                    if *covered {
                        next_env[atom][k] = true;
                    }
                }
                nbrs.push((mol.bonds[bond].order.code(), current[other]));
            }
            nbrs.sort_unstable();
            let mut words = vec![layer as u32, current[atom]];
            for (code, id) in nbrs {
                words.push(code);
                words.push(id);
            }
            let id = fnv1a32(&words);
            next_ids[atom] = id;
            round.push((next_env[atom].clone(), id, atom));
        }
        // ties on the bond set go to the smaller identifier
        round.sort();
        for (bonds, id, atom) in round {
            if seen.contains(&bonds) {
                dead[atom] = true;
            } else {
                out.push(id);
                seen.push(bonds);
            }
        }
        current = next_ids;
        env = next_env;
    }
    out
}

pub fn ecfp(mol: &Molecule, radius: usize, n_bits: usize) -> Result<Fingerprint> {
    if n_bits == 0 {
        return Err(Error::invalid("fingerprint needs at least one bit"));
    }
    let mut fp = Fingerprint::empty(n_bits);
    for id in environment_ids(mol, radius) {
        fp.set(id as usize % n_bits);
    }
    Ok(fp)
}

/// Signed-radius entry point for callers holding untrusted input.
pub fn ecfp_checked(mol: &Molecule, radius: i64, n_bits: usize) -> Result<Fingerprint> {
    if radius < 0 {
        return Err(Error::invalid(format!("radius {radius} must be >= 0")));
    }
    ecfp(mol, radius as usize, n_bits)
}

pub fn tanimoto(a: &Fingerprint, b: &Fingerprint) -> Result<f64> {
    if a.n_bits != b.n_bits {
        return Err(Error::Dim(format!(
            "tanimoto between {} and {} bit fingerprints",
            a.n_bits, b.n_bits
        )));
    }
    let (mut inter, mut union) = (0u32, 0u32);
    for (x, y) in a.words.iter().zip(&b.words) {
        inter += (x & y).count_ones();
        union += (x | y).count_ones();
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}
