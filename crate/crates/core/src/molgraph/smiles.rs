//! Parser for a practical subset of SMILES.
//!
//! Supported: organic-subset atoms, lowercase aromatic atoms, bracket atoms
//! (isotope and chirality are read and discarded; hydrogen count and charge
//! are kept), bonds `- = # : / \`, the `.` separator, branches and ring
//! closures (`1`..`9`, `%nn`). Node ids follow atom order in the string.

use std::collections::BTreeMap;

use thiserror::Error;

use super::elements::{self, AROMATIC_BRACKET, AROMATIC_ORGANIC, ORGANIC_SUBSET};
use super::{Atom, Bond, BondDirection, BondOrder, GraphError, MolGraph};

#[derive(Debug, Error, PartialEq)]
pub enum SmilesError {
    #[error("empty SMILES")]
    EmptyInput,
    #[error("non-ASCII character at position {0}")]
    NonAscii(usize),
    #[error("unbalanced branch parenthesis at position {0}")]
    UnbalancedBranch(usize),
    #[error("ring-closure bond {label} opened at position {position} is never closed")]
    UnmatchedRingBond { label: u32, position: usize },
    #[error("unknown element '{symbol}' at position {position}")]
    UnknownElement { symbol: String, position: usize },
    #[error("unexpected character '{ch}' at position {position}")]
    Unexpected { ch: char, position: usize },
    #[error("unexpected end of input after position {0}")]
    UnexpectedEnd(usize),
    #[error("invalid molecular graph: {0}")]
    InvalidGraph(#[from] GraphError),
}

#[derive(Clone, Copy)]
struct PendingBond {
    order: Option<BondOrder>,
    direction: BondDirection,
    position: usize,
}

struct RingOpen {
    atom: usize,
    bond: Option<PendingBond>,
    position: usize,
}

struct Parser<'a> {
    text: &'a [u8],
    pos: usize,
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    prev: Option<usize>,
    pending: Option<PendingBond>,
    branches: Vec<(Option<usize>, usize)>,
    rings: BTreeMap<u32, RingOpen>,
}

pub fn parse_smiles(text: &str) -> Result<MolGraph, SmilesError> {
    if text.is_empty() {
        return Err(SmilesError::EmptyInput);
    }
    if let Some(p) = text.bytes().position(|b| !b.is_ascii()) {
        return Err(SmilesError::NonAscii(p));
    }
    let mut p = Parser {
        text: text.as_bytes(),
        pos: 0,
        atoms: Vec::new(),
        bonds: Vec::new(),
        prev: None,
        pending: None,
        branches: Vec::new(),
        rings: BTreeMap::new(),
    };
    p.run()?;
    Ok(MolGraph::new(p.atoms, p.bonds)?)
}

impl Parser<'_> {
    fn peek(&self) -> Option<u8> {
        self.text.get(self.pos).copied()
    }

    fn unexpected(&self) -> SmilesError {
        match self.peek() {
            Some(c) => SmilesError::Unexpected {
                ch: c as char,
                position: self.pos,
            },
            None => SmilesError::UnexpectedEnd(self.pos),
        }
    }

    fn run(&mut self) -> Result<(), SmilesError> {
        while let Some(c) = self.peek() {
            match c {
                b'(' => {
                    if self.prev.is_none() || self.pending.is_some() {
                        return Err(self.unexpected());
                    }
                    self.branches.push((self.prev, self.pos));
                    self.pos += 1;
                }
                b')' => {
                    if self.pending.is_some() {
                        return Err(self.unexpected());
                    }
                    let Some((prev, _)) = self.branches.pop() else {
                        return Err(SmilesError::UnbalancedBranch(self.pos));
                    };
                    self.prev = prev;
                    self.pos += 1;
                }
                b'-' | b'=' | b'#' | b':' | b'/' | b'\\' => {
                    if self.prev.is_none() || self.pending.is_some() {
                        return Err(self.unexpected());
                    }
                    let (order, direction) = match c {
                        b'-' => (BondOrder::Single, BondDirection::None),
                        b'=' => (BondOrder::Double, BondDirection::None),
                        b'#' => (BondOrder::Triple, BondDirection::None),
                        b':' => (BondOrder::Aromatic, BondDirection::None),
                        b'/' => (BondOrder::Single, BondDirection::Up),
                        _ => (BondOrder::Single, BondDirection::Down),
                    };
                    let explicit = !matches!(c, b'/' | b'\\');
                    self.pending = Some(PendingBond {
                        order: explicit.then_some(order),
                        direction,
                        position: self.pos,
                    });
                    self.pos += 1;
                }
                b'.' => {
                    if self.prev.is_none() || self.pending.is_some() {
                        return Err(self.unexpected());
                    }
                    self.prev = None;
                    self.pos += 1;
                }
                b'0'..=b'9' | b'%' => self.ring_closure()?,
                b'[' => {
                    let atom = self.bracket_atom()?;
                    self.add_atom(atom);
                }
                _ => {
                    let atom = self.organic_atom()?;
                    self.add_atom(atom);
                }
            }
        }
        if let Some(pending) = self.pending {
            return Err(SmilesError::UnexpectedEnd(pending.position));
        }
        if let Some(&(_, pos)) = self.branches.last() {
            return Err(SmilesError::UnbalancedBranch(pos));
        }
        if let Some((&label, open)) = self.rings.iter().next() {
            return Err(SmilesError::UnmatchedRingBond {
                label,
                position: open.position,
            });
        }
        Ok(())
    }

    fn default_order(&self, a: usize, b: usize) -> BondOrder {
        if self.atoms[a].aromatic && self.atoms[b].aromatic {
            BondOrder::Aromatic
        } else {
            BondOrder::Single
        }
    }

    fn push_bond(&mut self, a: usize, b: usize, spec: Option<PendingBond>) {
        let order = spec
            .and_then(|s| s.order)
            .unwrap_or_else(|| self.default_order(a, b));
        let mut bond = Bond::new(a, b, order);
        bond.direction = spec.map_or(BondDirection::None, |s| s.direction);
        self.bonds.push(bond);
    }

    fn add_atom(&mut self, atom: Atom) {
        let id = self.atoms.len();
        self.atoms.push(atom);
        if let Some(prev) = self.prev {
            let spec = self.pending.take();
            self.push_bond(prev, id, spec);
        }
        self.prev = Some(id);
    }

    fn ring_closure(&mut self) -> Result<(), SmilesError> {
        let start = self.pos;
        let Some(atom) = self.prev else {
            return Err(self.unexpected());
        };
        let label = if self.peek() == Some(b'%') {
            let digits = self.text.get(self.pos + 1..self.pos + 3);
            match digits {
                Some(d) if d.iter().all(u8::is_ascii_digit) => {
                    self.pos += 3;
                    ((d[0] - b'0') * 10 + (d[1] - b'0')) as u32
                }
                _ => {
                    self.pos += 1;
                    return Err(self.unexpected());
                }
            }
        } else {
            let d = self.text[self.pos] - b'0';
            self.pos += 1;
            d as u32
        };
        let here = self.pending.take();
        match self.rings.remove(&label) {
            Some(open) => {
                if open.atom == atom {
                    return Err(SmilesError::Unexpected {
                        ch: self.text[start] as char,
                        position: start,
                    });
                }
                let spec = match (open.bond, here) {
                    (Some(a), Some(b)) if a.order.is_some() || b.order.is_none() => Some(a),
                    (Some(_), Some(b)) => Some(b),
                    (a, b) => a.or(b),
                };
                self.push_bond(open.atom, atom, spec);
            }
            None => {
                self.rings.insert(
                    label,
                    RingOpen {
                        atom,
                        bond: here,
                        position: start,
                    },
                );
            }
        }
        Ok(())
    }

    fn organic_atom(&mut self) -> Result<Atom, SmilesError> {
        let rest = &self.text[self.pos..];
        for (sym, z) in ORGANIC_SUBSET {
            if rest.starts_with(sym.as_bytes()) {
                self.pos += sym.len();
                return Ok(Atom::new(z));
            }
        }
        for (sym, z) in AROMATIC_ORGANIC {
            if rest.starts_with(sym.as_bytes()) {
                self.pos += sym.len();
                return Ok(Atom::aromatic(z));
            }
        }
        let c = rest[0];
        if c.is_ascii_alphabetic() || c == b'*' {
            let len = if rest.len() > 1 && rest[1].is_ascii_lowercase() && c.is_ascii_uppercase() {
                2
            } else {
                1
            };
            return Err(SmilesError::UnknownElement {
                symbol: String::from_utf8_lossy(&rest[..len]).into_owned(),
                position: self.pos,
            });
        }
        Err(self.unexpected())
    }

    fn digits(&mut self) -> Option<u32> {
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        (self.pos > start).then(|| {
            std::str::from_utf8(&self.text[start..self.pos])
                .unwrap()
                .parse()
                .unwrap_or(u32::MAX)
        })
    }

    fn bracket_atom(&mut self) -> Result<Atom, SmilesError> {
        self.pos += 1; // '['
        let _isotope = self.digits();
        let sym_pos = self.pos;
        let rest = &self.text[self.pos..];
        let mut atom = None;
        for (sym, z) in AROMATIC_BRACKET {
            if rest.starts_with(sym.as_bytes()) {
                self.pos += sym.len();
                atom = Some(Atom::aromatic(z));
                break;
            }
        }
        if atom.is_none() {
            let first = *rest.first().ok_or(SmilesError::UnexpectedEnd(self.pos))?;
            if !first.is_ascii_uppercase() {
                if first == b'*' || first.is_ascii_alphabetic() {
                    return Err(SmilesError::UnknownElement {
                        symbol: (first as char).to_string(),
                        position: sym_pos,
                    });
                }
                return Err(self.unexpected());
            }
            let two = rest
                .get(..2)
                .filter(|s| s[1].is_ascii_lowercase())
                .and_then(|s| elements::atomic_number(std::str::from_utf8(s).ok()?));
            let z = match two {
                Some(z) => {
                    self.pos += 2;
                    z
                }
                None => {
                    let one = std::str::from_utf8(&rest[..1]).unwrap();
                    let z = elements::atomic_number(one).ok_or_else(|| {
                        SmilesError::UnknownElement {
                            symbol: one.to_string(),
                            position: sym_pos,
                        }
                    })?;
                    self.pos += 1;
                    z
                }
            };
            atom = Some(Atom::new(z));
        }
        let mut atom = atom.expect("set above");
        while self.peek() == Some(b'@') {
            self.pos += 1;
        }
        let mut h = 0u8;
        if self.peek() == Some(b'H') {
            self.pos += 1;
            h = self.digits().map_or(1, |d| d.min(u8::MAX as u32) as u8);
        }
        atom.explicit_h = Some(h);
        if let Some(sign @ (b'+' | b'-')) = self.peek() {
            let unit: i32 = if sign == b'+' { 1 } else { -1 };
            self.pos += 1;
            let mut charge = unit;
            if let Some(d) = self.digits() {
                charge = unit * d.min(127) as i32;
            } else {
                while self.peek() == Some(sign) {
                    self.pos += 1;
                    charge += unit;
                }
            }
            atom.formal_charge = charge.clamp(-127, 127) as i8;
        }
        if self.peek() == Some(b':') {
            self.pos += 1;
            if self.digits().is_none() {
                return Err(self.unexpected());
            }
        }
        if self.peek() != Some(b']') {
            return Err(self.unexpected());
        }
        self.pos += 1;
        Ok(atom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h_counts(g: &MolGraph) -> Vec<u8> {
        (0..g.n_atoms()).map(|i| g.total_h(i)).collect()
    }

    #[test]
    fn ethanol() {
        let g = parse_smiles("CCO").unwrap();
        assert_eq!(
            g.atoms().iter().map(|a| a.element).collect::<Vec<_>>(),
            vec![6, 6, 8]
        );
        let bonds: Vec<_> = g.bonds().iter().map(|b| (b.a, b.b, b.order)).collect();
        assert_eq!(
            bonds,
            vec![(0, 1, BondOrder::Single), (1, 2, BondOrder::Single)]
        );
        assert_eq!(h_counts(&g), vec![3, 2, 1]);
    }

    #[test]
    fn cyclopropane_all_in_ring() {
        let g = parse_smiles("C1CC1").unwrap();
        assert_eq!(g.n_atoms(), 3);
        assert_eq!(g.n_bonds(), 3);
        assert!((0..3).all(|i| g.atom_in_ring(i) && g.bond_in_ring(i)));
    }

    #[test]
    fn benzene() {
        let g = parse_smiles("c1ccccc1").unwrap();
        assert_eq!(g.n_atoms(), 6);
        assert!(g.atoms().iter().all(|a| a.aromatic));
        assert!(g.bonds().iter().all(|b| b.order == BondOrder::Aromatic));
        assert_eq!(h_counts(&g), vec![1; 6]);
    }

    #[test]
    fn dangling_ring_closure() {
        assert!(matches!(
            parse_smiles("C1CC"),
            Err(SmilesError::UnmatchedRingBond { label: 1, position: 1 })
        ));
    }

    #[test]
    fn error_kinds() {
        assert_eq!(parse_smiles(""), Err(SmilesError::EmptyInput));
        assert_eq!(parse_smiles("CC(C"), Err(SmilesError::UnbalancedBranch(2)));
        assert_eq!(parse_smiles("CC)C"), Err(SmilesError::UnbalancedBranch(2)));
        assert!(matches!(
            parse_smiles("CXC"),
            Err(SmilesError::UnknownElement { position: 1, .. })
        ));
        assert!(matches!(
            parse_smiles("C[Xy]"),
            Err(SmilesError::UnknownElement { .. })
        ));
        assert!(matches!(parse_smiles("CC="), Err(SmilesError::UnexpectedEnd(_))));
        assert!(matches!(parse_smiles("Cé"), Err(SmilesError::NonAscii(1))));
    }

    #[test]
    fn branches_and_bond_symbols() {
        let g = parse_smiles("CC(=O)C#N").unwrap();
        let bonds: Vec<_> = g.bonds().iter().map(|b| (b.a, b.b, b.order)).collect();
        assert_eq!(
            bonds,
            vec![
                (0, 1, BondOrder::Single),
                (1, 2, BondOrder::Double),
                (1, 3, BondOrder::Single),
                (3, 4, BondOrder::Triple)
            ]
        );
        assert_eq!(h_counts(&g), vec![3, 0, 0, 0, 0]);
    }

    #[test]
    fn bracket_atoms() {
        let g = parse_smiles("[NH4+].[O-]C(=O)c1cc[nH]c1").unwrap();
        assert_eq!(g.atom(0).element, 7);
        assert_eq!(g.atom(0).formal_charge, 1);
        assert_eq!(g.total_h(0), 4);
        assert_eq!(g.atom(1).formal_charge, -1);
        assert_eq!(g.total_h(1), 0);
        let nh = g.atoms().iter().position(|a| a.aromatic && a.element == 7).unwrap();
        assert_eq!(g.total_h(nh), 1);
        let g = parse_smiles("[13CH3][C@@H](Cl)[Fe++]").unwrap();
        assert_eq!(g.atom(0).element, 6);
        assert_eq!(g.total_h(0), 3);
        assert_eq!(g.atom(3).element, 26);
        assert_eq!(g.atom(3).formal_charge, 2);
    }

    #[test]
    fn two_digit_ring_labels_and_directions() {
        let g = parse_smiles("C%10CCC%10").unwrap();
        assert_eq!(g.n_bonds(), 4);
        assert!(g.bond_in_ring(3));
        let g = parse_smiles("F/C=C\\F").unwrap();
        assert_eq!(g.bond(0).direction, BondDirection::Up);
        assert_eq!(g.bond(2).direction, BondDirection::Down);
        assert_eq!(g.bond(1).order, BondOrder::Double);
    }

    #[test]
    fn ring_bond_order_from_either_end() {
        let g = parse_smiles("C=1CCC1").unwrap();
        assert_eq!(g.bond(3).order, BondOrder::Double);
        let g = parse_smiles("C1CCC=1").unwrap();
        assert_eq!(g.bond(3).order, BondOrder::Double);
    }

    #[test]
    fn chlorine_and_bromine_are_two_letter() {
        let g = parse_smiles("ClCBr").unwrap();
        assert_eq!(
            g.atoms().iter().map(|a| a.element).collect::<Vec<_>>(),
            vec![17, 6, 35]
        );
    }
}
