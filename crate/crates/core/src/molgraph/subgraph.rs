//! Node-induced subgraphs, frontiers and connectivity of node subsets.

use std::collections::{BTreeMap, VecDeque};

use super::{Bond, GraphError, MolGraph, NodeSet};

#[derive(Clone, Debug)]
pub struct InducedSubgraph {
    pub graph: MolGraph,
    /// `original[i]` is the id in the parent graph of subgraph node `i`.
    pub original: Vec<usize>,
}

fn check_all(g: &MolGraph, nodes: &NodeSet) -> Result<(), GraphError> {
    nodes.iter().try_for_each(|&id| g.check_id(id))
}

/// The subgraph on `nodes` with every bond whose endpoints are both inside.
/// Nodes are relabeled densely in ascending original id order.
pub fn induced_subgraph(g: &MolGraph, nodes: &NodeSet) -> Result<InducedSubgraph, GraphError> {
    check_all(g, nodes)?;
    let original: Vec<usize> = nodes.iter().copied().collect();
    let new_id: BTreeMap<usize, usize> = original.iter().enumerate().map(|(i, &o)| (o, i)).collect();
    let atoms = original.iter().map(|&o| g.atom(o).clone()).collect();
    let bonds = g
        .bonds()
        .iter()
        .filter_map(|b| {
            let (a, c) = (new_id.get(&b.a)?, new_id.get(&b.b)?);
            Some(Bond {
                a: *a,
                b: *c,
                ..b.clone()
            })
        })
        .collect();
    Ok(InducedSubgraph {
        graph: MolGraph::new(atoms, bonds)?,
        original,
    })
}

/// Nodes adjacent to any selected node, excluding the selection itself.
pub fn one_hop_frontier(g: &MolGraph, selected: &NodeSet) -> Result<NodeSet, GraphError> {
    if selected.is_empty() {
        return Err(GraphError::EmptySelection);
    }
    check_all(g, selected)?;
    Ok(selected
        .iter()
        .flat_map(|&u| g.neighbors(u))
        .filter(|v| !selected.contains(v))
        .collect())
}

/// Connected components of the subgraph induced by `nodes`, each sorted,
/// ordered by smallest member.
pub fn connected_components(g: &MolGraph, nodes: &NodeSet) -> Result<Vec<NodeSet>, GraphError> {
    check_all(g, nodes)?;
    let mut remaining = nodes.clone();
    let mut out = Vec::new();
    while let Some(&start) = remaining.iter().next() {
        remaining.remove(&start);
        let mut comp = NodeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for v in g.neighbors(u) {
                if remaining.remove(&v) {
                    comp.insert(v);
                    queue.push_back(v);
                }
            }
        }
        out.push(comp);
    }
    Ok(out)
}

/// True iff `nodes` is non-empty and induces a connected subgraph.
pub fn is_connected_subset(g: &MolGraph, nodes: &NodeSet) -> Result<bool, GraphError> {
    if nodes.is_empty() {
        check_all(g, nodes)?;
        return Ok(false);
    }
    Ok(connected_components(g, nodes)?.len() == 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::parse_smiles;

    fn set(ids: &[usize]) -> NodeSet {
        ids.iter().copied().collect()
    }

    #[test]
    fn induced_examples() {
        let g = parse_smiles("CCO").unwrap();
        let s = induced_subgraph(&g, &set(&[0, 1])).unwrap();
        assert_eq!((s.graph.n_atoms(), s.graph.n_bonds()), (2, 1));
        let s = induced_subgraph(&g, &set(&[0, 2])).unwrap();
        assert_eq!((s.graph.n_atoms(), s.graph.n_bonds()), (2, 0));
        assert_eq!(s.original, vec![0, 2]);
        let s = induced_subgraph(&g, &set(&[])).unwrap();
        assert!(s.graph.is_empty());
        assert!(matches!(
            induced_subgraph(&g, &set(&[5])),
            Err(GraphError::InvalidNodeId { id: 5, n: 3 })
        ));
    }

    #[test]
    fn frontier_examples() {
        let g = parse_smiles("CCC").unwrap();
        assert_eq!(one_hop_frontier(&g, &set(&[1])).unwrap(), set(&[0, 2]));
        assert_eq!(one_hop_frontier(&g, &set(&[0, 1])).unwrap(), set(&[2]));
        assert_eq!(one_hop_frontier(&g, &set(&[0, 1, 2])).unwrap(), set(&[]));
        assert_eq!(
            one_hop_frontier(&g, &set(&[])),
            Err(GraphError::EmptySelection)
        );
    }

    #[test]
    fn connectivity_examples() {
        let g = parse_smiles("CCC").unwrap();
        assert!(!is_connected_subset(&g, &set(&[0, 2])).unwrap());
        assert!(is_connected_subset(&g, &set(&[0, 1])).unwrap());
        assert!(is_connected_subset(&g, &set(&[1])).unwrap());
        assert!(!is_connected_subset(&g, &set(&[])).unwrap());
        assert!(is_connected_subset(&g, &set(&[7])).is_err());
        assert_eq!(
            connected_components(&g, &set(&[0, 2])).unwrap(),
            vec![set(&[0]), set(&[2])]
        );
    }
}
