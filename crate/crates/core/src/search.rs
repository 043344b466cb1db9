//! Beam-search decoding of reaction centers and an exhaustive reference.
//!
//! Beam search expands all alive hypotheses one level at a time. Each
//! hypothesis proposes its `k` best actions; stop proposals complete their
//! hypothesis into a pool that persists across levels, while select
//! proposals are merged by resulting node set (keeping the higher Q) and the
//! best `k` survive as the next level's beam. Completed hypotheses are scored
//! by `Q(s, STOP)` and the best `k` are returned.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{AgentError, GraphScorer, QNetwork};
use crate::encoder::PreparedGraph;
use crate::env::{legal_actions, Action, ActionSpace, RcState};
use crate::molgraph::{MolGraph, NodeSet};

/// Default cap on the number of enumerated subsets.
pub const DEFAULT_SUBSET_BOUND: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("graph has no atoms")]
    EmptyGraph,
    #[error("beam width must be at least 1")]
    ZeroBeam,
    #[error("max_size must be at least 1")]
    ZeroSize,
    #[error("more than {bound} connected subsets")]
    SizeExplosion { bound: usize },
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: malformed prediction record: {message}")]
    Malformed { line: usize, message: String },
}

/// A ranked node set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    #[serde(with = "node_list")]
    pub nodes: NodeSet,
    pub score: f64,
}

mod node_list {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::molgraph::NodeSet;

    pub fn serialize<S: Serializer>(set: &NodeSet, s: S) -> Result<S::Ok, S::Error> {
        set.iter().copied().collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<NodeSet, D::Error> {
        Ok(Vec::<usize>::deserialize(d)?.into_iter().collect())
    }
}

/// Descending score, then smaller set, then lexicographic ids.
pub fn rank_order(a: &Prediction, b: &Prediction) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.nodes.len().cmp(&b.nodes.len()))
        .then_with(|| a.nodes.iter().cmp(b.nodes.iter()))
}

fn merge_max(map: &mut HashMap<NodeSet, f64>, set: NodeSet, score: f64) {
    map.entry(set)
        .and_modify(|s| *s = s.max(score))
        .or_insert(score);
}

/// Beam search with an already encoded graph.
pub fn beam_search_with(
    scorer: &GraphScorer,
    graph: &MolGraph,
    k: usize,
    space: ActionSpace,
) -> Result<Vec<Prediction>, SearchError> {
    if graph.is_empty() {
        return Err(SearchError::EmptyGraph);
    }
    if k == 0 {
        return Err(SearchError::ZeroBeam);
    }
    let n = graph.n_atoms();
    let mut alive: Vec<Prediction> = vec![Prediction {
        nodes: NodeSet::new(),
        score: 0.0,
    }];
    let mut completed: HashMap<NodeSet, f64> = HashMap::new();
    while !alive.is_empty() {
        let mut next: HashMap<NodeSet, f64> = HashMap::new();
        for hyp in &alive {
            let state = RcState::with_selection(hyp.nodes.clone());
            let actions = legal_actions(graph, &state, space);
            let q = scorer.score_actions(&hyp.nodes, &actions);
            let mut order: Vec<usize> = (0..actions.len()).collect();
            // stable: equal Q keeps the action order
            order.sort_by(|&a, &b| q[b].total_cmp(&q[a]));
            for &i in order.iter().take(k) {
                match actions[i] {
                    Action::Stop => merge_max(&mut completed, hyp.nodes.clone(), q[i]),
                    Action::Select(v) => {
                        let mut set = hyp.nodes.clone();
                        set.insert(v);
                        if set.len() >= n {
                            let stop_q = scorer.score(&set, Action::Stop);
                            merge_max(&mut completed, set, stop_q);
                        } else {
                            merge_max(&mut next, set, q[i]);
                        }
                    }
                }
            }
        }
        let mut level: Vec<Prediction> = next
            .into_iter()
            .map(|(nodes, score)| Prediction { nodes, score })
            .collect();
        level.sort_by(rank_order);
        level.truncate(k);
        alive = level;
    }
    let mut out: Vec<Prediction> = completed
        .into_iter()
        .map(|(nodes, score)| Prediction { nodes, score })
        .collect();
    out.sort_by(rank_order);
    out.truncate(k);
    Ok(out)
}

pub fn beam_search(
    net: &QNetwork,
    graph: &MolGraph,
    k: usize,
    space: ActionSpace,
) -> Result<Vec<Prediction>, SearchError> {
    if graph.is_empty() {
        return Err(SearchError::EmptyGraph);
    }
    let scorer = net.scorer(&PreparedGraph::new(graph))?;
    beam_search_with(&scorer, graph, k, space)
}

/// Every connected node subset of size `1..=max_size`, each exactly once.
///
/// Each subset is grown from its smallest node, only ever adding nodes that
/// are larger than that root and not yet adjacent to the current subset.
pub fn enumerate_connected_subsets(
    graph: &MolGraph,
    max_size: usize,
    bound: usize,
) -> Result<Vec<NodeSet>, SearchError> {
    if max_size == 0 {
        return Err(SearchError::ZeroSize);
    }
    let mut out = Vec::new();
    for root in 0..graph.n_atoms() {
        let ext: Vec<usize> = graph.neighbors(root).filter(|&u| u > root).collect();
        let mut sub = NodeSet::from([root]);
        extend(graph, &mut sub, ext, root, max_size, bound, &mut out)?;
    }
    Ok(out)
}

fn extend(
    graph: &MolGraph,
    sub: &mut NodeSet,
    mut ext: Vec<usize>,
    root: usize,
    max_size: usize,
    bound: usize,
    out: &mut Vec<NodeSet>,
) -> Result<(), SearchError> {
    if out.len() >= bound {
        return Err(SearchError::SizeExplosion { bound });
    }
    out.push(sub.clone());
    if sub.len() == max_size {
        return Ok(());
    }
    while let Some(w) = ext.pop() {
        let mut next_ext = ext.clone();
        for u in graph.neighbors(w) {
            let exclusive = u > root
                && !sub.contains(&u)
                && !next_ext.contains(&u)
                && !sub.iter().any(|&s| graph.bond_between(s, u).is_some());
            if exclusive {
                next_ext.push(u);
            }
        }
        sub.insert(w);
        extend(graph, sub, next_ext, root, max_size, bound, out)?;
        sub.remove(&w);
    }
    Ok(())
}

/// Scores every connected subset by `Q(S, STOP)` and keeps the best `k`.
pub fn exhaustive_topk_with(
    scorer: &GraphScorer,
    graph: &MolGraph,
    k: usize,
    max_size: usize,
    bound: usize,
) -> Result<Vec<Prediction>, SearchError> {
    let mut all: Vec<Prediction> = enumerate_connected_subsets(graph, max_size, bound)?
        .into_iter()
        .map(|nodes| Prediction {
            score: scorer.score(&nodes, Action::Stop),
            nodes,
        })
        .collect();
    all.sort_by(rank_order);
    all.truncate(k);
    Ok(all)
}

pub fn exhaustive_topk(
    net: &QNetwork,
    graph: &MolGraph,
    k: usize,
    max_size: usize,
) -> Result<Vec<Prediction>, SearchError> {
    let scorer = net.scorer(&PreparedGraph::new(graph))?;
    exhaustive_topk_with(&scorer, graph, k, max_size, DEFAULT_SUBSET_BOUND)
}

/// Beam search with a width no smaller than the number of connected subsets
/// never prunes, so under the one-hop action space it must return exactly the
/// exhaustive ranking. Returns both lists.
pub fn saturating_comparison(
    scorer: &GraphScorer,
    graph: &MolGraph,
    bound: usize,
) -> Result<(Vec<Prediction>, Vec<Prediction>), SearchError> {
    let n = graph.n_atoms();
    let subsets = enumerate_connected_subsets(graph, n.max(1), bound)?.len();
    let beam = beam_search_with(scorer, graph, subsets, ActionSpace::OneHop)?;
    let exhaustive = exhaustive_topk_with(scorer, graph, subsets, n.max(1), bound)?;
    Ok((beam, exhaustive))
}

/// One line of a prediction file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub id: String,
    pub predictions: Vec<Prediction>,
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repeat: Option<usize>,
}

pub fn write_predictions(records: &[PredictionRecord], path: &Path) -> Result<(), SearchError> {
    let io = |source| SearchError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    for r in records {
        let line = serde_json::to_string(r).expect("prediction records serialize");
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>, SearchError> {
    let io = |source| SearchError::Io {
        path: path.display().to_string(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| SearchError::Malformed {
                line: i + 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(out)
}

/// Groups prediction records by sample id, keeping file order within an id.
pub fn group_by_id(records: Vec<PredictionRecord>) -> BTreeMap<String, Vec<PredictionRecord>> {
    let mut map: BTreeMap<String, Vec<PredictionRecord>> = BTreeMap::new();
    for r in records {
        map.entry(r.id.clone()).or_default().push(r);
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::greedy_rollout;
    use crate::encoder::EncoderConfig;
    use crate::molgraph::parse_smiles;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net(seed: u64) -> QNetwork {
        let cfg = EncoderConfig {
            layers: 2,
            heads: 2,
            hidden: 8,
            self_loops: true,
        };
        QNetwork::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn sets(v: &[&[usize]]) -> Vec<NodeSet> {
        v.iter().map(|s| s.iter().copied().collect()).collect()
    }

    #[test]
    fn enumeration_examples() {
        let path = parse_smiles("CCC").unwrap();
        let mut got = enumerate_connected_subsets(&path, 3, 100).unwrap();
        got.sort();
        let mut want = sets(&[&[0], &[1], &[2], &[0, 1], &[1, 2], &[0, 1, 2]]);
        want.sort();
        assert_eq!(got, want);
        let tri = parse_smiles("C1CC1").unwrap();
        assert_eq!(enumerate_connected_subsets(&tri, 3, 100).unwrap().len(), 7);
        let star = parse_smiles("CC(C)(C)C").unwrap();
        assert_eq!(enumerate_connected_subsets(&star, 2, 100).unwrap().len(), 9);
        assert!(matches!(
            enumerate_connected_subsets(&tri, 3, 5),
            Err(SearchError::SizeExplosion { bound: 5 })
        ));
        assert!(matches!(
            enumerate_connected_subsets(&tri, 0, 5),
            Err(SearchError::ZeroSize)
        ));
    }

    #[test]
    fn beam_one_is_greedy() {
        for seed in 0..10 {
            let n = net(seed);
            let mol = parse_smiles("CC(=O)Nc1ccc(O)cc1").unwrap();
            let scorer = n.scorer(&PreparedGraph::new(&mol)).unwrap();
            let beam = beam_search_with(&scorer, &mol, 1, ActionSpace::OneHop).unwrap();
            assert_eq!(beam.len(), 1);
            assert_eq!(beam[0].nodes, greedy_rollout(&scorer, &mol, ActionSpace::OneHop));
        }
    }

    #[test]
    fn saturating_beam_matches_oracle_on_small_graphs() {
        for (smiles, count) in [("CCC", 6), ("C1CC1", 7), ("C", 1)] {
            let n = net(7);
            let mol = parse_smiles(smiles).unwrap();
            let scorer = n.scorer(&PreparedGraph::new(&mol)).unwrap();
            let k = count + 2;
            let beam = beam_search_with(&scorer, &mol, k, ActionSpace::OneHop).unwrap();
            let oracle = exhaustive_topk_with(&scorer, &mol, k, mol.n_atoms(), 1000).unwrap();
            assert_eq!(beam.len(), count);
            assert_eq!(beam, oracle);
        }
    }

    #[test]
    fn empty_graph_and_zero_beam() {
        let n = net(0);
        assert!(matches!(
            beam_search(&n, &MolGraph::empty(), 3, ActionSpace::OneHop),
            Err(SearchError::EmptyGraph)
        ));
        let mol = parse_smiles("CC").unwrap();
        assert!(matches!(
            beam_search(&n, &mol, 0, ActionSpace::OneHop),
            Err(SearchError::ZeroBeam)
        ));
    }

    #[test]
    fn prediction_file_round_trip() {
        let recs = vec![
            PredictionRecord {
                id: "a".into(),
                predictions: vec![Prediction {
                    nodes: NodeSet::from([2, 0]),
                    score: 0.5,
                }],
                k: 3,
                repeat: None,
            },
            PredictionRecord {
                id: "b".into(),
                predictions: vec![],
                k: 3,
                repeat: Some(1),
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pred.jsonl");
        write_predictions(&recs, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with(r#"{"id":"a","predictions":[{"nodes":[0,2],"score":0.5}],"k":3}"#));
        assert_eq!(read_predictions(&p).unwrap(), recs);
    }
}
