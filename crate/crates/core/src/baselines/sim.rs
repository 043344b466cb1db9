//! Similarity retrieval: borrow reaction-center patterns from the most
//! similar training products and locate them in the query by subgraph
//! matching.

use std::collections::{BTreeSet, HashMap};

use rand::Rng;

use super::fingerprint::{ecfp_fingerprint, tanimoto, Fingerprint};
use super::matcher::{match_sets, subgraph_match};
use super::BaselineError;
use crate::evalkit::pattern_key;
use crate::molgraph::{induced_subgraph, MolGraph, NodeSet, Sample};
use crate::search::Prediction;

/// Fingerprints and labeled patterns of a training set.
#[derive(Clone, Debug)]
pub struct SimIndex {
    radius: usize,
    nbits: usize,
    fingerprints: Vec<Fingerprint>,
    /// Index into `patterns` for each training sample.
    pattern_of: Vec<usize>,
    patterns: Vec<MolGraph>,
    match_bound: usize,
}

impl SimIndex {
    pub fn new(
        train: &[Sample],
        radius: usize,
        nbits: usize,
        match_bound: usize,
    ) -> Result<Self, BaselineError> {
        if train.is_empty() {
            return Err(BaselineError::EmptyTrainSet);
        }
        let mut by_key: HashMap<u64, usize> = HashMap::new();
        let mut patterns = Vec::new();
        let mut pattern_of = Vec::with_capacity(train.len());
        for s in train {
            let pattern = induced_subgraph(&s.graph, &s.label)?.graph;
            let id = *by_key.entry(pattern_key(&pattern)).or_insert_with(|| {
                patterns.push(pattern);
                patterns.len() - 1
            });
            pattern_of.push(id);
        }
        Ok(SimIndex {
            radius,
            nbits,
            fingerprints: train.iter().map(|s| ecfp_fingerprint(&s.graph, radius, nbits)).collect(),
            pattern_of,
            patterns,
            match_bound,
        })
    }

    pub fn len(&self) -> usize {
        self.fingerprints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fingerprints.is_empty()
    }

    /// Training indices by descending similarity to `query`, ties in
    /// training order.
    pub fn ranking(&self, query: &MolGraph) -> Result<Vec<(usize, f64)>, BaselineError> {
        let fp = ecfp_fingerprint(query, self.radius, self.nbits);
        let mut ranked = self
            .fingerprints
            .iter()
            .enumerate()
            .map(|(i, f)| Ok((i, tanimoto(&fp, f)?)))
            .collect::<Result<Vec<_>, BaselineError>>()?;
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
        Ok(ranked)
    }
}

/// One ranked list of up to `kmax` distinct node sets per repeat, each
/// scored by the similarity of the neighbor it came from.
///
/// The ranking is walked from the most similar product down. Each
/// neighbor's pattern is matched into `query`; a unique placement is taken
/// as is, several placements are resolved by a uniform draw, and neighbors
/// without a placement (or whose draw repeats an earlier prediction) are
/// skipped.
pub fn sim_predict<R: Rng + ?Sized>(
    query: &MolGraph,
    index: &SimIndex,
    kmax: usize,
    repeats: usize,
    rng: &mut R,
) -> Result<Vec<Vec<Prediction>>, BaselineError> {
    let ranking = index.ranking(query)?;
    let mut placements: Vec<Option<Vec<NodeSet>>> = vec![None; index.patterns.len()];
    let mut out = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let mut list: Vec<Prediction> = Vec::with_capacity(kmax);
        let mut seen = BTreeSet::new();
        for &(neighbor, similarity) in &ranking {
            if list.len() == kmax {
                break;
            }
            let pid = index.pattern_of[neighbor];
            if placements[pid].is_none() {
                let m = subgraph_match(&index.patterns[pid], query, index.match_bound)?;
                placements[pid] = Some(match_sets(&m));
            }
            let sets = placements[pid].as_ref().expect("filled above");
            let pick = match sets.len() {
                0 => continue,
                1 => &sets[0],
                n => &sets[rng.gen_range(0..n)],
            };
            if seen.insert(pick.clone()) {
                list.push(Prediction {
                    nodes: pick.clone(),
                    score: similarity,
                });
            }
        }
        out.push(list);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::parse_smiles;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample(smiles: &str, label: &[usize]) -> Sample {
        Sample {
            id: smiles.into(),
            smiles: Some(smiles.into()),
            graph: parse_smiles(smiles).unwrap(),
            label: label.iter().copied().collect(),
        }
    }

    #[test]
    fn identical_product_reproduces_label() {
        let train = vec![sample("CCOC(=O)C", &[3, 4]), sample("CCN", &[1, 2])];
        let index = SimIndex::new(&train, 2, 2048, 10_000).unwrap();
        let q = parse_smiles("CCOC(=O)C").unwrap();
        assert_eq!(index.ranking(&q).unwrap()[0], (0, 1.0));
        let out = sim_predict(&q, &index, 3, 2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0][0].nodes, [3, 4].into_iter().collect());
        assert_eq!(out[0][0].score, 1.0);
    }

    #[test]
    fn symmetric_placements_split_evenly() {
        let train = vec![sample("CO", &[1])];
        let index = SimIndex::new(&train, 2, 2048, 10_000).unwrap();
        let q = parse_smiles("OCCO").unwrap();
        let out = sim_predict(&q, &index, 1, 10_000, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let first = out.iter().filter(|l| l[0].nodes == [0].into_iter().collect()).count();
        // binomial(10000, 0.5): 4 sigma is 200
        assert!((first as i64 - 5000).abs() < 200, "{first}");
    }

    #[test]
    fn deterministic_under_seed() {
        let train = vec![sample("CO", &[1]), sample("CCN", &[2]), sample("CC=O", &[1, 2])];
        let index = SimIndex::new(&train, 2, 2048, 10_000).unwrap();
        let q = parse_smiles("OCC(N)C=O").unwrap();
        let a = sim_predict(&q, &index, 4, 5, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sim_predict(&q, &index, 4, 5, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert!(SimIndex::new(&[], 2, 2048, 10).is_err());
    }
}
