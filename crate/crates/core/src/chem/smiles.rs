//! SMILES reader for the subset needed to fingerprint drug-like compounds.
//!
//! Supported: organic-subset atoms (`B C N O P S F Cl Br I`), lowercase
//! aromatic atoms (`b c n o p s`), bracket atoms with hydrogen count and
//! charge, bonds `- = # :`, branches, ring closures (`1`..`9`, `%nn`) and
//! `.` for disconnected parts. Isotopes, chirality (`@`, `@@`) and
//! directional bonds (`/`, `\`) are accepted and dropped.
//!
//! Implicit hydrogens are filled for organic-subset atoms from the lowest
//! default valence that accommodates the explicit bonds. Aromatic atoms
//! count one valence unit for the delocalised bond when there is room for it.

use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Valence units contributed to each endpoint (aromatic counts as 1).
    fn valence(self) -> u32 {
        match self {
            BondOrder::Single | BondOrder::Aromatic => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
        }
    }

    /// Code mixed into fingerprint identifiers.
    pub fn code(self) -> u32 {
        match self {
            BondOrder::Single => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
            BondOrder::Aromatic => 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Atom {
    pub symbol: String,
    pub atomic_number: u8,
    pub charge: i8,
    pub aromatic: bool,
    /// Total attached hydrogens (implicit plus bracket count).
    pub hydrogens: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Molecule {
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
}

const ELEMENTS: &[(&str, u8)] = &[
    ("H", 1), ("He", 2), ("Li", 3), ("Be", 4), ("B", 5), ("C", 6), ("N", 7), ("O", 8),
    ("F", 9), ("Ne", 10), ("Na", 11), ("Mg", 12), ("Al", 13), ("Si", 14), ("P", 15),
    ("S", 16), ("Cl", 17), ("Ar", 18), ("K", 19), ("Ca", 20), ("Ti", 22), ("Cr", 24),
    ("Mn", 25), ("Fe", 26), ("Co", 27), ("Ni", 28), ("Cu", 29), ("Zn", 30), ("Ga", 31),
    ("Ge", 32), ("As", 33), ("Se", 34), ("Br", 35), ("Kr", 36), ("Rb", 37), ("Sr", 38),
    ("Zr", 40), ("Mo", 42), ("Ru", 44), ("Rh", 45), ("Pd", 46), ("Ag", 47), ("Cd", 48),
    ("Sn", 50), ("Sb", 51), ("Te", 52), ("I", 53), ("Xe", 54), ("Cs", 55), ("Ba", 56),
    ("Gd", 64), ("Pt", 78), ("Au", 79), ("Hg", 80), ("Tl", 81), ("Pb", 82), ("Bi", 83),
];

fn atomic_number(symbol: &str) -> Option<u8> {
    ELEMENTS.iter().find(|(s, _)| *s == symbol).map(|(_, z)| *z)
}

fn default_valences(z: u8) -> &'static [u32] {
    match z {
        5 => &[3],
        6 => &[4],
        7 => &[3, 5],
        8 => &[2],
        15 => &[3, 5],
        16 => &[2, 4, 6],
        9 | 17 | 35 | 53 => &[1],
        _ => &[],
    }
}

struct PendingAtom {
    atom: Atom,
    /// Organic-subset atoms get implicit hydrogens after parsing.
    implicit_h: bool,
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    atoms: Vec<PendingAtom>,
    bonds: Vec<Bond>,
    /// ring digit -> (atom index, bond symbol at opening, byte offset)
    open_rings: BTreeMap<u32, (usize, Option<BondOrder>, usize)>,
}

impl<'a> Parser<'a> {
    fn err<T>(&self, offset: usize, msg: impl Into<String>) -> Result<T> {
        Err(Error::Smiles {
            offset,
            msg: msg.into(),
        })
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn parse(mut self) -> Result<Molecule> {
        if self.src.is_empty() {
            return self.err(0, "empty input");
        }
        // previous atom on the current chain, per branch depth
        let mut stack: Vec<(Option<usize>, usize)> = Vec::new();
        let mut prev: Option<usize> = None;
        let mut pending_bond: Option<(BondOrder, usize)> = None;
        let mut expect_atom_after_dot = false;

        while let Some(c) = self.peek() {
            let start = self.pos;
            match c {
                b'(' => {
                    if prev.is_none() {
                        return self.err(start, "branch without a preceding atom");
                    }
                    if pending_bond.is_some() {
                        return self.err(start, "bond symbol before branch");
                    }
                    stack.push((prev, start));
                    self.pos += 1;
                }
                b')' => {
                    let Some((p, _)) = stack.pop() else {
                        return self.err(start, "unmatched ')'");
                    };
                    if pending_bond.is_some() {
                        return self.err(start, "bond symbol at end of branch");
                    }
                    prev = p;
                    self.pos += 1;
                }
                b'-' | b'=' | b'#' | b':' | b'/' | b'\\' => {
                    if pending_bond.is_some() {
                        return self.err(start, "two consecutive bond symbols");
                    }
                    let order = match c {
                        b'=' => BondOrder::Double,
                        b'#' => BondOrder::Triple,
                        b':' => BondOrder::Aromatic,
                        b'/' | b'\\' => {
                            warn!("directional bond at byte {start} treated as single");
                            BondOrder::Single
                        }
                        _ => BondOrder::Single,
                    };
                    pending_bond = Some((order, start));
                    self.pos += 1;
                }
                b'.' => {
                    if pending_bond.is_some() || prev.is_none() {
                        return self.err(start, "misplaced '.'");
                    }
                    prev = None;
                    expect_atom_after_dot = true;
                    self.pos += 1;
                }
                b'0'..=b'9' | b'%' => {
                    let Some(cur) = prev else {
                        return self.err(start, "ring closure without a preceding atom");
                    };
                    let label = self.ring_label()?;
                    let order = pending_bond.take().map(|(o, _)| o);
                    self.ring_bond(cur, label, order, start)?;
                }
                _ => {
                    let idx = self.atom()?;
                    if let Some(p) = prev {
                        let order = match pending_bond.take() {
                            Some((o, _)) => o,
                            None => self.default_order(p, idx),
                        };
                        self.add_bond(p, idx, order, start)?;
                    } else if let Some((_, at)) = pending_bond {
                        return self.err(at, "bond symbol without a preceding atom");
                    }
                    prev = Some(idx);
                    expect_atom_after_dot = false;
                }
            }
        }
        let end = self.src.len();
        if let Some((_, at)) = pending_bond {
            return self.err(at.max(end), "dangling bond at end of input");
        }
        if !stack.is_empty() {
            return self.err(end, "unclosed branch");
        }
        if expect_atom_after_dot {
            return self.err(end, "'.' at end of input");
        }
        if let Some((label, (_, _, at))) = self.open_rings.iter().next() {
            return self.err(*at, format!("ring bond {label} never closed"));
        }
        Ok(self.finish())
    }

    fn ring_label(&mut self) -> Result<u32> {
        let start = self.pos;
        if self.peek() == Some(b'%') {
            self.pos += 1;
            let digits = self.src.get(self.pos..self.pos + 2);
            match digits {
                Some(d) if d.iter().all(u8::is_ascii_digit) => {
                    self.pos += 2;
                    Ok(((d[0] - b'0') * 10 + (d[1] - b'0')) as u32)
                }
                _ => self.err(start, "'%' must be followed by two digits"),
            }
        } else {
            let d = self.src[self.pos] - b'0';
            self.pos += 1;
            Ok(d as u32)
        }
    }

    fn ring_bond(&mut self, cur: usize, label: u32, order: Option<BondOrder>, at: usize) -> Result<()> {
        match self.open_rings.remove(&label) {
            None => {
                self.open_rings.insert(label, (cur, order, at));
                Ok(())
            }
            Some((other, open_order, _)) => {
                let order = match (open_order, order) {
                    (Some(a), Some(b)) if a != b => {
                        return self.err(at, format!("ring bond {label} has conflicting orders"))
                    }
                    (Some(a), _) | (None, Some(a)) => a,
                    (None, None) => self.default_order(other, cur),
                };
                if other == cur {
                    return self.err(at, format!("ring bond {label} closes on itself"));
                }
                self.add_bond(other, cur, order, at)
            }
        }
    }

    fn default_order(&self, a: usize, b: usize) -> BondOrder {
        if self.atoms[a].atom.aromatic && self.atoms[b].atom.aromatic {
            BondOrder::Aromatic
        } else {
            BondOrder::Single
        }
    }

    fn add_bond(&mut self, a: usize, b: usize, order: BondOrder, at: usize) -> Result<()> {
        let dup = self
            .bonds
            .iter()
            .any(|x| (x.a == a && x.b == b) || (x.a == b && x.b == a));
        if dup {
            return self.err(at, "duplicate bond between the same atoms");
        }
        self.bonds.push(Bond { a, b, order });
        Ok(())
    }

    fn atom(&mut self) -> Result<usize> {
        let start = self.pos;
        let c = self.src[self.pos];
        if c == b'[' {
            return self.bracket_atom();
        }
        let two = self.src.get(self.pos..self.pos + 2);
        let (symbol, aromatic, len) = match (c, two) {
            (b'C', Some(b"Cl")) => ("Cl", false, 2),
            (b'B', Some(b"Br")) => ("Br", false, 2),
            (b'B', _) => ("B", false, 1),
            (b'C', _) => ("C", false, 1),
            (b'N', _) => ("N", false, 1),
            (b'O', _) => ("O", false, 1),
            (b'P', _) => ("P", false, 1),
            (b'S', _) => ("S", false, 1),
            (b'F', _) => ("F", false, 1),
            (b'I', _) => ("I", false, 1),
            (b'b', _) => ("B", true, 1),
            (b'c', _) => ("C", true, 1),
            (b'n', _) => ("N", true, 1),
            (b'o', _) => ("O", true, 1),
            (b'p', _) => ("P", true, 1),
            (b's', _) => ("S", true, 1),
            _ => return self.err(start, format!("unexpected character '{}'", c as char)),
        };
        self.pos += len;
        let z = atomic_number(symbol).expect("organic subset is in the table");
        self.atoms.push(PendingAtom {
            atom: Atom {
                symbol: symbol.to_string(),
                atomic_number: z,
                charge: 0,
                aromatic,
                hydrogens: 0,
            },
            implicit_h: true,
        });
        Ok(self.atoms.len() - 1)
    }

    fn bracket_atom(&mut self) -> Result<usize> {
        let open = self.pos;
        self.pos += 1;
        let Some(close_rel) = self.src[self.pos..].iter().position(|&b| b == b']') else {
            return self.err(open, "unclosed '['");
        };
        let close = self.pos + close_rel;

        // isotope
        let iso_start = self.pos;
        while self.pos < close && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos > iso_start {
            warn!("isotope at byte {iso_start} ignored");
        }

        // element symbol
        let sym_start = self.pos;
        let (symbol, aromatic) = {
            let rest = &self.src[self.pos..close];
            let two_lower = rest.get(..2).map(|s| std::str::from_utf8(s).unwrap_or(""));
            match rest.first() {
                Some(c) if c.is_ascii_lowercase() => {
                    // aromatic: se, as, or single lowercase
                    let cand = match two_lower {
                        Some("se") => "se",
                        Some("as") => "as",
                        _ => std::str::from_utf8(&rest[..1]).unwrap_or(""),
                    };
                    let upper = {
                        let mut s = cand.to_string();
                        s[..1].make_ascii_uppercase();
                        s
                    };
                    if !matches!(cand, "b" | "c" | "n" | "o" | "p" | "s" | "se" | "as") {
                        return self.err(sym_start, format!("unknown aromatic element '{cand}'"));
                    }
                    self.pos += cand.len();
                    (upper, true)
                }
                Some(c) if c.is_ascii_uppercase() => {
                    let two = rest
                        .get(..2)
                        .filter(|s| s[1].is_ascii_lowercase())
                        .and_then(|s| std::str::from_utf8(s).ok())
                        .filter(|s| atomic_number(s).is_some());
                    let sym = match two {
                        Some(s) => s.to_string(),
                        None => (*c as char).to_string(),
                    };
                    if atomic_number(&sym).is_none() {
                        return self.err(sym_start, format!("unknown element '{sym}'"));
                    }
                    self.pos += sym.len();
                    (sym, false)
                }
                _ => return self.err(sym_start, "missing element symbol"),
            }
        };
        let z = atomic_number(&symbol)
            .ok_or(())
            .or_else(|_| self.err(sym_start, format!("unknown element '{symbol}'")))?;

        // chirality
        if self.pos < close && self.src[self.pos] == b'@' {
            warn!("chirality at byte {} ignored", self.pos);
            while self.pos < close
                && (self.src[self.pos] == b'@' || self.src[self.pos].is_ascii_alphanumeric())
                && self.src[self.pos] != b'H'
            {
                self.pos += 1;
            }
        }

        // hydrogen count
        let mut hydrogens = 0u8;
        if self.pos < close && self.src[self.pos] == b'H' {
            self.pos += 1;
            hydrogens = 1;
            let d0 = self.pos;
            while self.pos < close && self.src[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if self.pos > d0 {
                hydrogens = std::str::from_utf8(&self.src[d0..self.pos])
                    .ok()
                    .and_then(|s| s.parse().ok())
                    .ok_or(())
                    .or_else(|_| self.err(d0, "bad hydrogen count"))?;
            }
        }

        // charge
        let mut charge: i32 = 0;
        if self.pos < close && matches!(self.src[self.pos], b'+' | b'-') {
            let sign_ch = self.src[self.pos];
            let sign = if sign_ch == b'+' { 1 } else { -1 };
            self.pos += 1;
            let d0 = self.pos;
            while self.pos < close && self.src[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if self.pos > d0 {
                let n: i32 = std::str::from_utf8(&self.src[d0..self.pos])
                    .ok()
                    .and_then(|s| s.parse().ok())
                    .unwrap_or(0);
                charge = sign * n;
            } else {
                let mut n = 1;
                while self.pos < close && self.src[self.pos] == sign_ch {
                    n += 1;
                    self.pos += 1;
                }
                charge = sign * n;
            }
        }

        // atom class
        if self.pos < close && self.src[self.pos] == b':' {
            self.pos += 1;
            while self.pos < close && self.src[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
        }
        if self.pos != close {
            return self.err(self.pos, "unexpected character in bracket atom");
        }
        self.pos = close + 1;
        self.atoms.push(PendingAtom {
            atom: Atom {
                symbol,
                atomic_number: z,
                charge: charge as i8,
                aromatic,
                hydrogens,
            },
            implicit_h: false,
        });
        Ok(self.atoms.len() - 1)
    }

    fn finish(self) -> Molecule {
        let mut bond_sum = vec![0u32; self.atoms.len()];
        for b in &self.bonds {
            bond_sum[b.a] += b.order.valence();
            bond_sum[b.b] += b.order.valence();
        }
        let mut atoms: Vec<Atom> = Vec::with_capacity(self.atoms.len());
        for (i, p) in self.atoms.into_iter().enumerate() {
            let mut atom = p.atom;
            if p.implicit_h {
                let sum = bond_sum[i];
                let target = default_valences(atom.atomic_number)
                    .iter()
                    .copied()
                    .find(|&v| v >= sum);
                atom.hydrogens = match target {
                    Some(t) => {
                        let mut free = t - sum;
                        if atom.aromatic && free > 0 {
                            free -= 1;
                        }
                        free as u8
                    }
                    None => 0,
                };
            }
            atoms.push(atom);
        }
        absorb_explicit_hydrogens(Molecule {
            atoms,
            bonds: self.bonds,
        })
    }
}

/// Fold neutral single-bonded `[H]` atoms into their neighbour's hydrogen count.
fn absorb_explicit_hydrogens(mol: Molecule) -> Molecule {
    let n = mol.atoms.len();
    let mut degree = vec![0usize; n];
    for b in &mol.bonds {
        degree[b.a] += 1;
        degree[b.b] += 1;
    }
    let removable: Vec<bool> = (0..n)
        .map(|i| {
            let a = &mol.atoms[i];
            a.atomic_number == 1 && a.charge == 0 && a.hydrogens == 0 && degree[i] == 1
        })
        .collect();
    // keep H2 and similar: only drop an H bonded to a heavy atom
    let mut drop = vec![false; n];
    let mut atoms = mol.atoms.clone();
    for b in &mol.bonds {
        for (h, heavy) in [(b.a, b.b), (b.b, b.a)] {
            if removable[h] && mol.atoms[heavy].atomic_number != 1 && b.order == BondOrder::Single {
                drop[h] = true;
                atoms[heavy].hydrogens += 1;
            }
        }
    }
    if !drop.iter().any(|d| *d) {
        return mol;
    }
    let mut remap = vec![usize::MAX; n];
    let mut kept = Vec::new();
    for (i, a) in atoms.into_iter().enumerate() {
        if !drop[i] {
            remap[i] = kept.len();
            kept.push(a);
        }
    }
    let bonds = mol
        .bonds
        .iter()
        .filter(|b| !drop[b.a] && !drop[b.b])
        .map(|b| Bond {
            a: remap[b.a],
            b: remap[b.b],
            order: b.order,
        })
        .collect();
    Molecule { atoms: kept, bonds }
}

pub fn parse_smiles(text: &str) -> Result<Molecule> {
    Parser {
        src: text.trim_end().as_bytes(),
        pos: 0,
        atoms: Vec::new(),
        bonds: Vec::new(),
        open_rings: BTreeMap::new(),
    }
    .parse()
}

impl Molecule {
    pub fn neighbors(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.atoms.len()];
        for (k, b) in self.bonds.iter().enumerate() {
            adj[b.a].push((b.b, k));
            adj[b.b].push((b.a, k));
        }
        adj
    }

    /// Ring membership per bond: a bond is in a ring when its endpoints stay
    /// connected without it.
    pub fn ring_bonds(&self) -> Vec<bool> {
        let adj = self.neighbors();
        (0..self.bonds.len())
            .map(|k| {
                let Bond { a, b, .. } = self.bonds[k];
                let mut seen = vec![false; self.atoms.len()];
                let mut stack = vec![a];
                seen[a] = true;
                while let Some(u) = stack.pop() {
                    if u == b {
                        return true;
                    }
                    for &(v, e) in &adj[u] {
                        if e != k && !seen[v] {
                            seen[v] = true;
                            stack.push(v);
                        }
                    }
                }
                false
            })
            .collect()
    }

    pub fn ring_atoms(&self) -> Vec<bool> {
        let rb = self.ring_bonds();
        let mut out = vec![false; self.atoms.len()];
        for (b, r) in self.bonds.iter().zip(rb) {
            if r {
                out[b.a] = true;
                out[b.b] = true;
            }
        }
        out
    }

    /// Same molecule with atom `i` moved to position `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Molecule {
        let mut atoms = vec![self.atoms[0].clone(); self.atoms.len()];
        for (i, a) in self.atoms.iter().enumerate() {
            atoms[perm[i]] = a.clone();
        }
        let bonds = self
            .bonds
            .iter()
            .map(|b| Bond {
                a: perm[b.a],
                b: perm[b.b],
                order: b.order,
            })
            .collect();
        Molecule { atoms, bonds }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn offset(s: &str) -> usize {
        match parse_smiles(s) {
            Err(Error::Smiles { offset, .. }) => offset,
            other => panic!("expected parse error for {s:?}, got {other:?}"),
        }
    }

    #[test]
    fn methane() {
        let m = parse_smiles("C").unwrap();
        assert_eq!(m.atoms.len(), 1);
        assert_eq!(m.atoms[0].hydrogens, 4);
        assert!(m.bonds.is_empty());
    }

    #[test]
    fn cyclopropane_ring_closure() {
        let m = parse_smiles("C1CC1").unwrap();
        assert_eq!(m.atoms.len(), 3);
        assert_eq!(m.bonds.len(), 3);
        assert!(m.ring_atoms().iter().all(|r| *r));
        assert!(m.atoms.iter().all(|a| a.hydrogens == 2));
    }

    #[test]
    fn error_offsets() {
        assert_eq!(offset("C("), 2);
        assert_eq!(offset(""), 0);
        assert_eq!(offset("CC)"), 2);
        assert_eq!(offset("C1CC"), 1);
        assert_eq!(offset("CXC"), 1);
        assert_eq!(offset("C[Xx]"), 2);
    }

    #[test]
    fn aromatic_hydrogens() {
        let benzene = parse_smiles("c1ccccc1").unwrap();
        assert!(benzene.atoms.iter().all(|a| a.hydrogens == 1 && a.aromatic));
        assert!(benzene.bonds.iter().all(|b| b.order == BondOrder::Aromatic));

        let pyridine = parse_smiles("c1ccncc1").unwrap();
        assert_eq!(pyridine.atoms[3].hydrogens, 0);

        let thiophene = parse_smiles("c1ccsc1").unwrap();
        assert_eq!(thiophene.atoms[3].hydrogens, 0);

        let pyrrole = parse_smiles("c1cc[nH]c1").unwrap();
        assert_eq!(pyrrole.atoms[3].hydrogens, 1);

        let methylimidazole = parse_smiles("Cn1ccnc1").unwrap();
        assert_eq!(methylimidazole.atoms[1].hydrogens, 0);

        let toluene = parse_smiles("Cc1ccccc1").unwrap();
        assert_eq!(toluene.atoms[1].hydrogens, 0);
        assert_eq!(toluene.atoms[0].hydrogens, 3);
    }

    #[test]
    fn bracket_atoms_and_charges() {
        let m = parse_smiles("[NH4+]").unwrap();
        assert_eq!(m.atoms[0].hydrogens, 4);
        assert_eq!(m.atoms[0].charge, 1);
        let m = parse_smiles("CC(=O)[O-]").unwrap();
        assert_eq!(m.atoms[3].charge, -1);
        assert_eq!(m.atoms[3].hydrogens, 0);
        let m = parse_smiles("[Fe+2]").unwrap();
        assert_eq!(m.atoms[0].charge, 2);
        let m = parse_smiles("[O--]").unwrap();
        assert_eq!(m.atoms[0].charge, -2);
        let m = parse_smiles("[Na+].[Cl-]").unwrap();
        assert_eq!(m.atoms.len(), 2);
        assert!(m.bonds.is_empty());
    }

    #[test]
    fn stereo_and_isotopes_ignored() {
        let a = parse_smiles("N[C@@H](C)C(=O)O").unwrap();
        let b = parse_smiles("NC(C)C(=O)O").unwrap();
        assert_eq!(a, b);
        let a = parse_smiles("F/C=C/F").unwrap();
        let b = parse_smiles("FC=CF").unwrap();
        assert_eq!(a, b);
        let a = parse_smiles("[13CH4]").unwrap();
        assert_eq!(a.atoms[0].hydrogens, 4);
    }

    #[test]
    fn explicit_hydrogen_atoms_absorbed() {
        let a = parse_smiles("[H]C([H])([H])[H]").unwrap();
        assert_eq!(a.atoms.len(), 1);
        assert_eq!(a.atoms[0].hydrogens, 4);
    }

    #[test]
    fn percent_ring_labels_and_ring_bond_orders() {
        let m = parse_smiles("C%12CCCCC%12").unwrap();
        assert_eq!(m.bonds.len(), 6);
        let m = parse_smiles("C=1CCCCC=1").unwrap();
        assert_eq!(m.bonds.last().unwrap().order, BondOrder::Double);
    }

    #[test]
    fn branches() {
        let m = parse_smiles("CC(C)(C)O").unwrap();
        assert_eq!(m.atoms.len(), 5);
        let deg: Vec<usize> = m.neighbors().iter().map(Vec::len).collect();
        assert_eq!(deg, vec![1, 4, 1, 1, 1]);
    }
}
