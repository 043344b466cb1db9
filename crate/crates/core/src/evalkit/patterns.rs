//! Canonical keys for labeled reaction-center patterns.
//!
//! Nodes are colored by (element, aromatic) and refined by hashing each
//! color with the sorted multiset of (bond order, neighbor color) pairs until
//! the number of color classes stops growing. The key hashes the sorted final
//! colors together with node and edge counts.
//!
//! Isomorphic patterns always share a key. Distinct patterns that color
//! refinement cannot separate (e.g. regular graphs of equal degree with the
//! same labels) collide; the smallest such pairs have six atoms, twice the
//! largest synthetic motif.

use std::collections::BTreeSet;

use crate::molgraph::hash::{combine, hash_all, splitmix64};
use crate::molgraph::{induced_subgraph, MolGraph, NodeSet, Sample};

/// Key of a whole graph.
pub fn pattern_key(g: &MolGraph) -> u64 {
    let n = g.n_atoms();
    let mut colors: Vec<u64> = g
        .atoms()
        .iter()
        .map(|a| splitmix64(((a.element as u64) << 1) | a.aromatic as u64))
        .collect();
    let classes = |c: &[u64]| c.iter().collect::<BTreeSet<_>>().len();
    let mut n_classes = classes(&colors);
    for _ in 0..n {
        let next: Vec<u64> = (0..n)
            .map(|i| {
                let mut nbrs: Vec<u64> = g
                    .adjacency(i)
                    .iter()
                    .map(|&(j, b)| combine(g.bond(b).order.index() as u64, colors[j]))
                    .collect();
                nbrs.sort_unstable();
                combine(colors[i], hash_all(nbrs))
            })
            .collect();
        let c = classes(&next);
        colors = next;
        if c == n_classes {
            break;
        }
        n_classes = c;
    }
    colors.sort_unstable();
    combine(hash_all(colors), ((n as u64) << 32) | g.n_bonds() as u64)
}

/// Key of the subgraph induced by a sample's label.
pub fn pattern_key_of(s: &Sample) -> u64 {
    pattern_key_for(&s.graph, &s.label)
}

pub(crate) fn pattern_key_for(g: &MolGraph, nodes: &NodeSet) -> u64 {
    induced_subgraph(g, nodes)
        .map(|sub| pattern_key(&sub.graph))
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::parse_smiles;
    use std::collections::HashMap;

/// Groups keys for collision diagnostics.
fn key_histogram<'a>(graphs: impl IntoIterator<Item = &'a MolGraph>) -> HashMap<u64, usize> {
    let mut m = HashMap::new();
    for g in graphs {
        *m.entry(pattern_key(g)).or_insert(0) += 1;
    }
    m
}

    #[test]
    fn isomorphs_share_keys() {
        let a = parse_smiles("CC(=O)N").unwrap();
        let b = parse_smiles("NC(C)=O").unwrap();
        assert_eq!(pattern_key(&a), pattern_key(&b));
        let c = parse_smiles("CC(O)=N").unwrap();
        assert_ne!(pattern_key(&a), pattern_key(&c));
    }

    #[test]
    fn small_patterns_are_separated() {
        let smiles = [
            "C", "N", "O", "c", "CC", "C=C", "C#C", "CO", "C=O", "CN", "CCC", "CCO", "COC", "OCO",
            "C=CO", "C1CC1", "CC=O", "C(=O)O", "CC(C)C", "CCCC", "C1CCC1", "C1CC1C",
        ];
        let graphs: Vec<_> = smiles.iter().map(|s| parse_smiles(s).unwrap()).collect();
        let hist = key_histogram(&graphs);
        assert_eq!(hist.len(), smiles.len());
    }
}
