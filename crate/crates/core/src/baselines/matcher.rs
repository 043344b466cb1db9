//! Node-induced labeled subgraph matching by backtracking.
//!
//! Atoms match on (element, aromatic). Every pair of pattern atoms must be
//! bonded in the target exactly when it is bonded in the pattern, with the
//! same bond order. Pattern atoms are visited in breadth-first order from
//! atom 0 (then from the lowest unvisited atom of each further component),
//! and candidates are tried in ascending target id, so the output order is
//! fixed for a given input.

use std::collections::BTreeSet;

use super::BaselineError;
use crate::molgraph::{MolGraph, NodeSet};

pub const DEFAULT_MATCH_BOUND: usize = 10_000;

/// One embedding: `map[i]` is the target atom of pattern atom `i`.
pub type Embedding = Vec<usize>;

fn label(g: &MolGraph, i: usize) -> (u8, bool) {
    let a = g.atom(i);
    (a.element, a.aromatic)
}

fn visit_order(p: &MolGraph) -> Vec<usize> {
    let n = p.n_atoms();
    let mut seen = vec![false; n];
    let mut order = Vec::with_capacity(n);
    for root in 0..n {
        if seen[root] {
            continue;
        }
        seen[root] = true;
        let start = order.len();
        order.push(root);
        let mut head = start;
        while head < order.len() {
            let u = order[head];
            head += 1;
            let mut nbrs: Vec<usize> = p.neighbors(u).filter(|&v| !seen[v]).collect();
            nbrs.sort_unstable();
            for v in nbrs {
                seen[v] = true;
                order.push(v);
            }
        }
    }
    order
}

struct Search<'a> {
    pattern: &'a MolGraph,
    target: &'a MolGraph,
    order: Vec<usize>,
    /// For each position in `order`, an earlier-placed pattern neighbor.
    anchor: Vec<Option<usize>>,
    map: Vec<usize>,
    used: Vec<bool>,
    out: Vec<Embedding>,
    bound: usize,
}

impl Search<'_> {
    fn consistent(&self, depth: usize, t: usize) -> bool {
        let p = self.order[depth];
        if label(self.pattern, p) != label(self.target, t) {
            return false;
        }
        self.order[..depth].iter().all(|&q| {
            let pb = self.pattern.bond_between(p, q).map(|b| self.pattern.bond(b).order);
            let tb = self.target.bond_between(t, self.map[q]).map(|b| self.target.bond(b).order);
            pb == tb
        })
    }

    fn extend(&mut self, depth: usize) -> Result<(), BaselineError> {
        if depth == self.order.len() {
            if self.out.len() == self.bound {
                return Err(BaselineError::MatchExplosion { bound: self.bound });
            }
            self.out.push(self.map.clone());
            return Ok(());
        }
        let candidates: Vec<usize> = match self.anchor[depth] {
            Some(q) => {
                let mut c: Vec<usize> = self.target.neighbors(self.map[q]).collect();
                c.sort_unstable();
                c
            }
            None => (0..self.target.n_atoms()).collect(),
        };
        for t in candidates {
            if self.used[t] || !self.consistent(depth, t) {
                continue;
            }
            self.used[t] = true;
            self.map[self.order[depth]] = t;
            self.extend(depth + 1)?;
            self.used[t] = false;
        }
        Ok(())
    }
}

/// All node-induced embeddings of `pattern` into `target`.
pub fn subgraph_match(
    pattern: &MolGraph,
    target: &MolGraph,
    bound: usize,
) -> Result<Vec<Embedding>, BaselineError> {
    if pattern.is_empty() {
        return Err(BaselineError::EmptyPattern);
    }
    if pattern.n_atoms() > target.n_atoms() {
        return Ok(Vec::new());
    }
    let order = visit_order(pattern);
    let anchor = order
        .iter()
        .enumerate()
        .map(|(depth, &p)| order[..depth].iter().copied().find(|&q| pattern.bond_between(p, q).is_some()))
        .collect();
    let mut search = Search {
        pattern,
        target,
        order,
        anchor,
        map: vec![usize::MAX; pattern.n_atoms()],
        used: vec![false; target.n_atoms()],
        out: Vec::new(),
        bound,
    };
    search.extend(0)?;
    Ok(search.out)
}

/// Distinct target atom sets covered by the embeddings, in first-seen order.
pub fn match_sets(embeddings: &[Embedding]) -> Vec<NodeSet> {
    let mut seen = BTreeSet::new();
    embeddings
        .iter()
        .map(|m| m.iter().copied().collect::<NodeSet>())
        .filter(|s| seen.insert(s.clone()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::parse_smiles;

    fn sets(p: &str, t: &str) -> Vec<Vec<usize>> {
        let m = subgraph_match(&parse_smiles(p).unwrap(), &parse_smiles(t).unwrap(), DEFAULT_MATCH_BOUND)
            .unwrap();
        match_sets(&m).into_iter().map(|s| s.into_iter().collect()).collect()
    }

    #[test]
    fn examples() {
        assert_eq!(sets("C", "CCO"), vec![vec![0], vec![1]]);
        assert_eq!(sets("CO", "CCO"), vec![vec![1, 2]]);
        assert!(sets("CCC", "CCO").is_empty());
        // induced: a C-C-C path does not match inside a 3-ring
        assert!(sets("CCC", "C1CC1").is_empty());
        assert_eq!(sets("C=O", "CC(=O)O"), vec![vec![1, 2]]);
    }

    #[test]
    fn automorphisms_are_separate_embeddings() {
        let m = subgraph_match(&parse_smiles("CC").unwrap(), &parse_smiles("CCO").unwrap(), 10).unwrap();
        assert_eq!(m, vec![vec![0, 1], vec![1, 0]]);
    }

    #[test]
    fn bound_and_empty_pattern() {
        let t = parse_smiles("CCCCCC").unwrap();
        assert!(matches!(
            subgraph_match(&parse_smiles("C").unwrap(), &t, 5),
            Err(BaselineError::MatchExplosion { bound: 5 })
        ));
        assert!(subgraph_match(&parse_smiles("C").unwrap(), &t, 6).is_ok());
        assert!(matches!(
            subgraph_match(&MolGraph::empty(), &t, 5),
            Err(BaselineError::EmptyPattern)
        ));
    }
}
