//! Molecular graph data model.
//!
//! A [`MolGraph`] is a simple undirected graph whose nodes are atoms and whose
//! edges are bonds. Ring membership, implicit hydrogens, hybridization and
//! conjugation are derived once at construction.

pub mod dataset;
pub mod elements;
pub mod features;
pub mod hash;
pub mod smiles;
pub mod subgraph;

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dataset::{load_dataset, SCHEMA_VERSION, sample_from_json, sample_to_json, save_dataset, DatasetError, Sample};
pub use features::{featurize, FeatureEncoding, ATOM_FEATURES, BOND_FEATURES};
pub use smiles::{parse_smiles, SmilesError};
pub use subgraph::{
    connected_components, induced_subgraph, is_connected_subset, one_hop_frontier, InducedSubgraph,
};

/// Sorted set of node ids.
pub type NodeSet = BTreeSet<usize>;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("node id {id} out of range for a graph with {n} atoms")]
    InvalidNodeId { id: usize, n: usize },
    #[error("selection is empty")]
    EmptySelection,
    #[error("bond {index} joins atom {atom} to itself")]
    SelfLoop { index: usize, atom: usize },
    #[error("duplicate bond between atoms {a} and {b}")]
    DuplicateBond { a: usize, b: usize },
    #[error("unsupported atomic number {0}")]
    UnknownElement(u32),
    #[error("stereo category {0} out of range (0..6)")]
    BadStereo(u8),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Contribution to an atom's valence; aromatic bonds count 1.5.
    pub fn valence(self) -> f64 {
        match self {
            BondOrder::Single => 1.0,
            BondOrder::Double => 2.0,
            BondOrder::Triple => 3.0,
            BondOrder::Aromatic => 1.5,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Bond direction from `/` and `\` tokens.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum BondDirection {
    #[default]
    None = 0,
    Up = 1,
    Down = 2,
}

impl BondDirection {
    pub fn from_index(i: u8) -> Option<Self> {
        match i {
            0 => Some(BondDirection::None),
            1 => Some(BondDirection::Up),
            2 => Some(BondDirection::Down),
            _ => None,
        }
    }
}

/// Number of bond stereo categories (none, any, Z, E, cis, trans).
pub const STEREO_CATEGORIES: u8 = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Hybridization {
    Sp = 0,
    Sp2 = 1,
    Sp3 = 2,
    Sp3d = 3,
    Sp3d2 = 4,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Atom {
    /// Atomic number.
    pub element: u8,
    pub formal_charge: i8,
    pub aromatic: bool,
    /// Hydrogen count written in a bracket atom; `None` means implicit.
    pub explicit_h: Option<u8>,
}

impl Atom {
    pub fn new(element: u8) -> Self {
        Atom {
            element,
            formal_charge: 0,
            aromatic: false,
            explicit_h: None,
        }
    }

    pub fn aromatic(element: u8) -> Self {
        Atom {
            aromatic: true,
            ..Atom::new(element)
        }
    }

    pub fn symbol(&self) -> &'static str {
        elements::symbol(self.element).unwrap_or("?")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
    /// Stereo category in `0..STEREO_CATEGORIES`.
    pub stereo: u8,
    pub direction: BondDirection,
}

impl Bond {
    pub fn new(a: usize, b: usize, order: BondOrder) -> Self {
        Bond {
            a,
            b,
            order,
            stereo: 0,
            direction: BondDirection::None,
        }
    }

    /// The endpoint opposite `atom`.
    pub fn other(&self, atom: usize) -> usize {
        if self.a == atom {
            self.b
        } else {
            self.a
        }
    }
}

/// Undirected simple molecular graph with dense node ids `0..n`.
#[derive(Clone, PartialEq)]
pub struct MolGraph {
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    /// Per node: (neighbor, bond index), in bond insertion order.
    adjacency: Vec<Vec<(usize, usize)>>,
    atom_in_ring: Vec<bool>,
    bond_in_ring: Vec<bool>,
    bond_conjugated: Vec<bool>,
    implicit_h: Vec<u8>,
    hybridization: Vec<Hybridization>,
}

impl fmt::Debug for MolGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let atoms: Vec<_> = self.atoms.iter().map(Atom::symbol).collect();
        let bonds: Vec<_> = self
            .bonds
            .iter()
            .map(|b| (b.a, b.b, b.order))
            .collect();
        f.debug_struct("MolGraph")
            .field("atoms", &atoms)
            .field("bonds", &bonds)
            .finish()
    }
}

impl MolGraph {
    /// Validates the atom and bond lists and computes derived attributes.
    pub fn new(atoms: Vec<Atom>, bonds: Vec<Bond>) -> Result<Self, GraphError> {
        let n = atoms.len();
        for atom in &atoms {
            if atom.element == 0 || atom.element > elements::MAX_ATOMIC_NUMBER {
                return Err(GraphError::UnknownElement(atom.element as u32));
            }
        }
        let mut adjacency = vec![Vec::new(); n];
        let mut seen = BTreeSet::new();
        for (i, bond) in bonds.iter().enumerate() {
            for id in [bond.a, bond.b] {
                if id >= n {
                    return Err(GraphError::InvalidNodeId { id, n });
                }
            }
            if bond.a == bond.b {
                return Err(GraphError::SelfLoop {
                    index: i,
                    atom: bond.a,
                });
            }
            if bond.stereo >= STEREO_CATEGORIES {
                return Err(GraphError::BadStereo(bond.stereo));
            }
            let key = (bond.a.min(bond.b), bond.a.max(bond.b));
            if !seen.insert(key) {
                return Err(GraphError::DuplicateBond { a: key.0, b: key.1 });
            }
            adjacency[bond.a].push((bond.b, i));
            adjacency[bond.b].push((bond.a, i));
        }
        let mut g = MolGraph {
            atoms,
            bonds,
            adjacency,
            atom_in_ring: vec![false; n],
            bond_in_ring: Vec::new(),
            bond_conjugated: Vec::new(),
            implicit_h: vec![0; n],
            hybridization: vec![Hybridization::Sp3; n],
        };
        g.derive();
        Ok(g)
    }

    pub fn empty() -> Self {
        MolGraph::new(Vec::new(), Vec::new()).expect("empty graph is valid")
    }

    fn derive(&mut self) {
        let n = self.atoms.len();
        self.bond_in_ring = (0..self.bonds.len()).map(|i| self.bond_on_cycle(i)).collect();
        for (i, bond) in self.bonds.iter().enumerate() {
            if self.bond_in_ring[i] {
                self.atom_in_ring[bond.a] = true;
                self.atom_in_ring[bond.b] = true;
            }
        }
        for i in 0..n {
            self.implicit_h[i] = self.compute_implicit_h(i);
        }
        for i in 0..n {
            self.hybridization[i] = self.compute_hybridization(i);
        }
        self.bond_conjugated = self
            .bonds
            .iter()
            .map(|b| {
                let conj = |i: usize| {
                    self.atoms[i].aromatic
                        || matches!(self.hybridization[i], Hybridization::Sp | Hybridization::Sp2)
                };
                conj(b.a) && conj(b.b)
            })
            .collect();
    }

    /// A bond lies on a cycle iff its endpoints stay connected without it.
    fn bond_on_cycle(&self, bond: usize) -> bool {
        let Bond { a, b, .. } = self.bonds[bond];
        let mut visited = vec![false; self.atoms.len()];
        let mut queue = VecDeque::from([a]);
        visited[a] = true;
        while let Some(u) = queue.pop_front() {
            for &(v, e) in &self.adjacency[u] {
                if e == bond || visited[v] {
                    continue;
                }
                if v == b {
                    return true;
                }
                visited[v] = true;
                queue.push_back(v);
            }
        }
        false
    }

    fn bond_order_sum(&self, i: usize) -> f64 {
        self.adjacency[i]
            .iter()
            .map(|&(_, e)| self.bonds[e].order.valence())
            .sum()
    }

    fn compute_implicit_h(&self, i: usize) -> u8 {
        let atom = &self.atoms[i];
        if atom.explicit_h.is_some() {
            return 0;
        }
        let valences = elements::default_valences(atom.element);
        let Some(&largest) = valences.last() else {
            return 0;
        };
        let used = self.bond_order_sum(i);
        let target = valences
            .iter()
            .copied()
            .find(|&v| v as f64 >= used)
            .unwrap_or(largest);
        (target as f64 - used).floor().max(0.0) as u8
    }

    fn compute_hybridization(&self, i: usize) -> Hybridization {
        let atom = &self.atoms[i];
        if matches!(atom.element, 15 | 16) {
            match self.total_degree(i) {
                5 => return Hybridization::Sp3d,
                d if d >= 6 => return Hybridization::Sp3d2,
                _ => {}
            }
        }
        if atom.aromatic {
            return Hybridization::Sp2;
        }
        let mut doubles = 0;
        let mut triples = 0;
        for &(_, e) in &self.adjacency[i] {
            match self.bonds[e].order {
                BondOrder::Double => doubles += 1,
                BondOrder::Triple => triples += 1,
                BondOrder::Aromatic => return Hybridization::Sp2,
                BondOrder::Single => {}
            }
        }
        if triples > 0 || doubles >= 2 {
            Hybridization::Sp
        } else if doubles == 1 {
            Hybridization::Sp2
        } else {
            Hybridization::Sp3
        }
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn atom(&self, i: usize) -> &Atom {
        &self.atoms[i]
    }

    pub fn bond(&self, i: usize) -> &Bond {
        &self.bonds[i]
    }

    pub fn n_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn n_bonds(&self) -> usize {
        self.bonds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn contains(&self, id: usize) -> bool {
        id < self.atoms.len()
    }

    pub fn check_id(&self, id: usize) -> Result<(), GraphError> {
        if self.contains(id) {
            Ok(())
        } else {
            Err(GraphError::InvalidNodeId {
                id,
                n: self.atoms.len(),
            })
        }
    }

    /// (neighbor, bond index) pairs of node `i`.
    pub fn adjacency(&self, i: usize) -> &[(usize, usize)] {
        &self.adjacency[i]
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency[i].iter().map(|&(v, _)| v)
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn bond_between(&self, a: usize, b: usize) -> Option<usize> {
        self.adjacency
            .get(a)?
            .iter()
            .find(|&&(v, _)| v == b)
            .map(|&(_, e)| e)
    }

    pub fn atom_in_ring(&self, i: usize) -> bool {
        self.atom_in_ring[i]
    }

    pub fn bond_in_ring(&self, i: usize) -> bool {
        self.bond_in_ring[i]
    }

    pub fn bond_conjugated(&self, i: usize) -> bool {
        self.bond_conjugated[i]
    }

    pub fn implicit_h(&self, i: usize) -> u8 {
        self.implicit_h[i]
    }

    /// Explicit (bracket) plus implicit hydrogens.
    pub fn total_h(&self, i: usize) -> u8 {
        self.atoms[i].explicit_h.unwrap_or(0) + self.implicit_h[i]
    }

    /// Heavy-atom degree plus attached hydrogens.
    pub fn total_degree(&self, i: usize) -> usize {
        self.degree(i) + self.total_h(i) as usize
    }

    /// Bond-order sum (aromatic 1.5, rounded) plus bracket hydrogens.
    pub fn explicit_valence(&self, i: usize) -> usize {
        self.bond_order_sum(i).round() as usize + self.atoms[i].explicit_h.unwrap_or(0) as usize
    }

    pub fn hybridization(&self, i: usize) -> Hybridization {
        self.hybridization[i]
    }

    /// Relabels nodes: old node `i` becomes node `perm[i]`. Bonds keep their
    /// order.
    pub fn permuted(&self, perm: &[usize]) -> Result<MolGraph, GraphError> {
        let n = self.n_atoms();
        let mut atoms = vec![Atom::new(6); n];
        let mut placed = vec![false; n];
        for (old, &new) in perm.iter().enumerate().take(n) {
            if new >= n || placed[new] {
                return Err(GraphError::InvalidNodeId { id: new, n });
            }
            placed[new] = true;
            atoms[new] = self.atoms[old].clone();
        }
        if perm.len() != n {
            return Err(GraphError::InvalidNodeId { id: perm.len(), n });
        }
        let bonds = self
            .bonds
            .iter()
            .map(|b| Bond {
                a: perm[b.a],
                b: perm[b.b],
                ..b.clone()
            })
            .collect();
        MolGraph::new(atoms, bonds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(n: usize) -> MolGraph {
        let atoms = vec![Atom::new(6); n];
        let bonds = (1..n).map(|i| Bond::new(i - 1, i, BondOrder::Single)).collect();
        MolGraph::new(atoms, bonds).unwrap()
    }

    #[test]
    fn rejects_self_loops_and_duplicates() {
        let atoms = vec![Atom::new(6); 2];
        assert!(matches!(
            MolGraph::new(atoms.clone(), vec![Bond::new(1, 1, BondOrder::Single)]),
            Err(GraphError::SelfLoop { .. })
        ));
        assert!(matches!(
            MolGraph::new(
                atoms,
                vec![
                    Bond::new(0, 1, BondOrder::Single),
                    Bond::new(1, 0, BondOrder::Double)
                ]
            ),
            Err(GraphError::DuplicateBond { a: 0, b: 1 })
        ));
    }

    #[test]
    fn ring_flags_follow_cycles() {
        // triangle 0-1-2 with tail 2-3
        let atoms = vec![Atom::new(6); 4];
        let bonds = vec![
            Bond::new(0, 1, BondOrder::Single),
            Bond::new(1, 2, BondOrder::Single),
            Bond::new(2, 0, BondOrder::Single),
            Bond::new(2, 3, BondOrder::Single),
        ];
        let g = MolGraph::new(atoms, bonds).unwrap();
        assert_eq!(
            (0..4).map(|i| g.bond_in_ring(i)).collect::<Vec<_>>(),
            vec![true, true, true, false]
        );
        assert_eq!(
            (0..4).map(|i| g.atom_in_ring(i)).collect::<Vec<_>>(),
            vec![true, true, true, false]
        );
    }

    #[test]
    fn implicit_hydrogens_on_path() {
        let g = path(3);
        assert_eq!((0..3).map(|i| g.implicit_h(i)).collect::<Vec<_>>(), vec![3, 2, 3]);
    }

    #[test]
    fn permutation_preserves_structure() {
        let g = path(4);
        let p = g.permuted(&[3, 1, 0, 2]).unwrap();
        assert!(p.bond_between(3, 1).is_some());
        assert!(p.bond_between(1, 0).is_some());
        assert!(p.bond_between(0, 2).is_some());
        assert!(g.permuted(&[0, 0, 1, 2]).is_err());
    }
}
