//! One-hot atom and bond featurization.
//!
//! Atom vector (135): atom type 100 | total degree 6 | explicit valence 6 |
//! implicit valence 6 | hybridization 5 | #Hs 5 | formal charge 5 |
//! aromatic 1 | in ring 1.
//!
//! Bond vector (15): type 4 | conjugated 1 | in ring 1 | stereo 6 |
//! direction 3.
//!
//! A categorical value past the end of its block lands on the block's last
//! index. Formal charge categories are `[0, +1, −1, +2, other]`.

use super::MolGraph;

pub const ATOM_FEATURES: usize = 135;
pub const BOND_FEATURES: usize = 15;

/// (name, width) of each atom feature block, in vector order.
pub const ATOM_BLOCKS: [(&str, usize); 9] = [
    ("atom_type", 100),
    ("total_degree", 6),
    ("explicit_valence", 6),
    ("implicit_valence", 6),
    ("hybridization", 5),
    ("num_hs", 5),
    ("formal_charge", 5),
    ("aromatic", 1),
    ("in_ring", 1),
];

pub const BOND_BLOCKS: [(&str, usize); 5] = [
    ("bond_type", 4),
    ("conjugated", 1),
    ("in_ring", 1),
    ("stereo", 6),
    ("direction", 3),
];

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureEncoding {
    /// `n_atoms × 135`, row-major.
    pub atom_features: Vec<f64>,
    /// `n_bonds × 15`, row-major, in bond order.
    pub bond_features: Vec<f64>,
}

impl FeatureEncoding {
    pub fn atom_row(&self, i: usize) -> &[f64] {
        &self.atom_features[i * ATOM_FEATURES..(i + 1) * ATOM_FEATURES]
    }

    pub fn bond_row(&self, i: usize) -> &[f64] {
        &self.bond_features[i * BOND_FEATURES..(i + 1) * BOND_FEATURES]
    }
}

struct Writer<'a> {
    row: &'a mut [f64],
    offset: usize,
}

impl Writer<'_> {
    fn one_hot(&mut self, width: usize, index: usize) {
        self.row[self.offset + index.min(width - 1)] = 1.0;
        self.offset += width;
    }

    fn flag(&mut self, on: bool) {
        if on {
            self.row[self.offset] = 1.0;
        }
        self.offset += 1;
    }
}

fn charge_index(charge: i8) -> usize {
    match charge {
        0 => 0,
        1 => 1,
        -1 => 2,
        2 => 3,
        _ => 4,
    }
}

pub fn atom_features(g: &MolGraph, i: usize, row: &mut [f64]) {
    let atom = g.atom(i);
    let mut w = Writer { row, offset: 0 };
    w.one_hot(100, atom.element as usize - 1);
    w.one_hot(6, g.total_degree(i));
    w.one_hot(6, g.explicit_valence(i));
    w.one_hot(6, g.implicit_h(i) as usize);
    w.one_hot(5, g.hybridization(i) as usize);
    w.one_hot(5, g.total_h(i) as usize);
    w.one_hot(5, charge_index(atom.formal_charge));
    w.flag(atom.aromatic);
    w.flag(g.atom_in_ring(i));
    debug_assert_eq!(w.offset, ATOM_FEATURES);
}

pub fn bond_features(g: &MolGraph, i: usize, row: &mut [f64]) {
    let bond = g.bond(i);
    let mut w = Writer { row, offset: 0 };
    w.one_hot(4, bond.order.index());
    w.flag(g.bond_conjugated(i));
    w.flag(g.bond_in_ring(i));
    w.one_hot(6, bond.stereo as usize);
    w.one_hot(3, bond.direction as usize);
    debug_assert_eq!(w.offset, BOND_FEATURES);
}

pub fn featurize(g: &MolGraph) -> FeatureEncoding {
    let mut atoms = vec![0.0; g.n_atoms() * ATOM_FEATURES];
    for (i, row) in atoms.chunks_exact_mut(ATOM_FEATURES).enumerate() {
        atom_features(g, i, row);
    }
    let mut bonds = vec![0.0; g.n_bonds() * BOND_FEATURES];
    for (i, row) in bonds.chunks_exact_mut(BOND_FEATURES).enumerate() {
        bond_features(g, i, row);
    }
    FeatureEncoding {
        atom_features: atoms,
        bond_features: bonds,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::parse_smiles;

    fn block(row: &[f64], blocks: &[(&str, usize)], name: &str) -> Vec<f64> {
        let mut off = 0;
        for &(n, w) in blocks {
            if n == name {
                return row[off..off + w].to_vec();
            }
            off += w;
        }
        panic!("no block {name}");
    }

    #[test]
    fn block_widths_sum_to_totals() {
        assert_eq!(ATOM_BLOCKS.iter().map(|b| b.1).sum::<usize>(), 135);
        assert_eq!(BOND_BLOCKS.iter().map(|b| b.1).sum::<usize>(), 15);
    }

    #[test]
    fn carbon_sets_index_five() {
        let g = parse_smiles("CCO").unwrap();
        let f = featurize(&g);
        let t = block(f.atom_row(0), &ATOM_BLOCKS, "atom_type");
        assert_eq!(t.iter().position(|&x| x == 1.0), Some(5));
        assert_eq!(t.iter().sum::<f64>(), 1.0);
        let o = block(f.atom_row(2), &ATOM_BLOCKS, "atom_type");
        assert_eq!(o.iter().position(|&x| x == 1.0), Some(7));
    }

    #[test]
    fn methane_carbon_blocks() {
        // CH3 of ethanol: degree 1 + 3 H = 4, explicit valence 1, implicit 3
        let g = parse_smiles("CCO").unwrap();
        let f = featurize(&g);
        let row = f.atom_row(0);
        let hot = |name| {
            block(row, &ATOM_BLOCKS, name)
                .iter()
                .position(|&x| x == 1.0)
        };
        assert_eq!(hot("total_degree"), Some(4));
        assert_eq!(hot("explicit_valence"), Some(1));
        assert_eq!(hot("implicit_valence"), Some(3));
        assert_eq!(hot("hybridization"), Some(2));
        assert_eq!(hot("num_hs"), Some(3));
        assert_eq!(hot("formal_charge"), Some(0));
        assert_eq!(hot("aromatic"), None);
    }

    #[test]
    fn out_of_range_clamps_to_last_index() {
        // sulfur with six fluorines: degree 6 -> last total_degree slot (5)
        let g = parse_smiles("FS(F)(F)(F)(F)F").unwrap();
        let f = featurize(&g);
        let row = f.atom_row(1);
        let deg = block(row, &ATOM_BLOCKS, "total_degree");
        assert_eq!(deg[5], 1.0);
        let ev = block(row, &ATOM_BLOCKS, "explicit_valence");
        assert_eq!(ev[5], 1.0);
        let hyb = block(row, &ATOM_BLOCKS, "hybridization");
        assert_eq!(hyb[4], 1.0);
        let g = parse_smiles("[Fe+3]").unwrap();
        let f = featurize(&g);
        assert_eq!(block(f.atom_row(0), &ATOM_BLOCKS, "formal_charge")[4], 1.0);
    }

    #[test]
    fn aromatic_bonds_are_conjugated_ring_bonds() {
        let g = parse_smiles("c1ccccc1C").unwrap();
        let f = featurize(&g);
        let ring = f.bond_row(0);
        assert_eq!(&ring[..6], &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let methyl = f.bond_row(6);
        assert_eq!(&methyl[..6], &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(methyl[6], 1.0, "stereo none");
        assert_eq!(methyl[12], 1.0, "direction none");
    }
}
