//! Bond-classification baseline: an edge-featured attention encoder scores
//! each bond as part of the reaction center and a count head predicts how
//! many bonds to take.
//!
//! Joint probability of predicting count `n` with bond set `S`:
//! `q(n) · Π_{b∈S} p_b · Π_{b∉S} (1 − p_b)`. For a fixed `n` the best `S`
//! is the `n` highest-scoring bonds; further candidates come from a
//! best-first walk over swaps.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, HashSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rcq_tensor::{glorot_uniform, AdamConfig, Graph, ParamId, ParamStore, Tensor, Var};
use serde::{Deserialize, Serialize};

use super::BaselineError;
use crate::encoder::{Encoder, EncoderConfig, GraphBatch, Mlp2, PreparedGraph};
use crate::molgraph::{MolGraph, NodeSet, Sample};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BondClassifierConfig {
    /// Count classes `1..=count_classes`; larger label counts are clamped.
    pub count_classes: usize,
    pub iterations: usize,
    pub batch_size: usize,
}

impl Default for BondClassifierConfig {
    fn default() -> Self {
        BondClassifierConfig {
            count_classes: 6,
            iterations: 2000,
            batch_size: 32,
        }
    }
}

impl BondClassifierConfig {
    pub fn validate(&self) -> Result<(), BaselineError> {
        if self.count_classes == 0 || self.batch_size == 0 {
            return Err(BaselineError::Config(
                "count_classes and batch_size must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct BondClassifier {
    pub store: ParamStore,
    pub encoder: Encoder,
    pub bond_w: ParamId,
    pub bond_b: ParamId,
    pub count_head: Mlp2,
    pub count_classes: usize,
}

/// Bonds with both endpoints in the label.
pub fn label_bonds(g: &MolGraph, label: &NodeSet) -> Vec<usize> {
    (0..g.n_bonds())
        .filter(|&b| label.contains(&g.bond(b).a) && label.contains(&g.bond(b).b))
        .collect()
}

struct Forward {
    bond_logits: Var,
    count_logits: Var,
}

impl BondClassifier {
    pub fn new<R: Rng + ?Sized>(
        config: EncoderConfig,
        count_classes: usize,
        rng: &mut R,
    ) -> Result<Self, BaselineError> {
        if count_classes == 0 {
            return Err(BaselineError::Config("count_classes must be >= 1".into()));
        }
        let mut store = ParamStore::new();
        let encoder = Encoder::init(&mut store, config, rng)?;
        let d = config.hidden;
        let bond_w = store.insert("bond.w", glorot_uniform(d, 1, rng))?;
        let bond_b = store.insert("bond.b", Tensor::zeros(1, 1))?;
        let count_head = Mlp2::register(&mut store, "count", d, d, count_classes, rng)?;
        Ok(BondClassifier {
            store,
            encoder,
            bond_w,
            bond_b,
            count_head,
            count_classes,
        })
    }

    /// Wraps a loaded store; the class count is read from the count head.
    pub fn from_store(store: ParamStore, config: EncoderConfig) -> Result<Self, BaselineError> {
        let encoder = Encoder::bind(&store, config)?;
        let bond_w = store.expect_id("bond.w")?;
        let bond_b = store.expect_id("bond.b")?;
        let count_head = Mlp2::bind(&store, "count")?;
        let count_classes = store.value(count_head.b2).cols();
        Ok(BondClassifier {
            store,
            encoder,
            bond_w,
            bond_b,
            count_head,
            count_classes,
        })
    }

    fn forward(&self, g: &mut Graph, graphs: &[&PreparedGraph]) -> Result<Forward, BaselineError> {
        let batch = GraphBatch::new(graphs, self.encoder.config.self_loops);
        let emb = self.encoder.encode(g, &self.store, &batch)?;
        let n_bonds = batch.n_bond_edges / 2;
        let even: Arc<[usize]> = (0..n_bonds).map(|b| 2 * b).collect();
        let odd: Arc<[usize]> = (0..n_bonds).map(|b| 2 * b + 1).collect();
        let fwd = g.gather_rows(emb.edges, even)?;
        let bwd = g.gather_rows(emb.edges, odd)?;
        let sum = g.add(fwd, bwd)?;
        let bonds = g.scale(sum, 0.5);
        let w = g.param(&self.store, self.bond_w);
        let b = g.param(&self.store, self.bond_b);
        let z = g.matmul(bonds, w)?;
        let bond_logits = g.add(z, b)?;
        let count_logits = self.count_head.forward(g, &self.store, emb.graphs)?;
        Ok(Forward {
            bond_logits,
            count_logits,
        })
    }

    /// Per-bond probabilities and per-count probabilities (index `n − 1`).
    pub fn probabilities(&self, graph: &MolGraph) -> Result<(Vec<f64>, Vec<f64>), BaselineError> {
        let p = PreparedGraph::new(graph);
        let mut g = Graph::no_grad();
        let out = self.forward(&mut g, &[&p])?;
        let bonds = g
            .value(out.bond_logits)
            .data()
            .iter()
            .map(|&z| 1.0 / (1.0 + (-z).exp()))
            .collect();
        let logits = g.value(out.count_logits).row(0).to_vec();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
        let total: f64 = e.iter().sum();
        Ok((bonds, e.into_iter().map(|v| v / total).collect()))
    }

    /// Up to `k` distinct node sets in descending joint probability.
    pub fn predict(&self, graph: &MolGraph, k: usize) -> Result<Vec<(NodeSet, f64)>, BaselineError> {
        if graph.n_bonds() == 0 || k == 0 {
            return Ok(Vec::new());
        }
        let (p, q) = self.probabilities(graph)?;
        let mut candidates = Vec::new();
        for n in 1..=q.len().min(p.len()) {
            for (bonds, score) in top_subsets(&p, n, k) {
                candidates.push((bonds, q[n - 1] * score));
            }
        }
        candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(k);
        for (bonds, score) in candidates {
            let nodes: NodeSet = bonds
                .iter()
                .flat_map(|&b| [graph.bond(b).a, graph.bond(b).b])
                .collect();
            if seen.insert(nodes.clone()) {
                out.push((nodes, score));
                if out.len() == k {
                    break;
                }
            }
        }
        Ok(out)
    }
}

#[derive(PartialEq)]
struct Entry(f64, Vec<usize>);

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then_with(|| other.1.cmp(&self.1))
    }
}

/// The `k` most probable size-`n` bond subsets under independent
/// Bernoulli(`p`), each with its probability; bond ids sorted ascending.
pub fn top_subsets(p: &[f64], n: usize, k: usize) -> Vec<(Vec<usize>, f64)> {
    let m = p.len();
    if n == 0 || n > m || k == 0 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    let prob = |positions: &[usize]| -> f64 {
        let chosen: BTreeSet<usize> = positions.iter().map(|&i| order[i]).collect();
        (0..m)
            .map(|b| if chosen.contains(&b) { p[b] } else { 1.0 - p[b] })
            .product()
    };
    // Positions into `order`, strictly increasing. Moving one chosen position
    // to the next free slot never increases the probability, so a best-first
    // walk from the first `n` positions yields subsets in descending order.
    let start: Vec<usize> = (0..n).collect();
    let mut heap = BinaryHeap::new();
    let mut visited = HashSet::new();
    heap.push(Entry(prob(&start), start.clone()));
    visited.insert(start);
    let mut out = Vec::with_capacity(k);
    while let Some(Entry(score, pos)) = heap.pop() {
        let mut bonds: Vec<usize> = pos.iter().map(|&i| order[i]).collect();
        bonds.sort_unstable();
        out.push((bonds, score));
        if out.len() == k {
            break;
        }
        for j in 0..n {
            let next = pos[j] + 1;
            if next < m && (j + 1 == n || pos[j + 1] != next) {
                let mut succ = pos.clone();
                succ[j] = next;
                if visited.insert(succ.clone()) {
                    heap.push(Entry(prob(&succ), succ));
                }
            }
        }
    }
    out
}

/// Samples whose label induces at least one bond, with their targets.
struct TrainItem {
    prepared: PreparedGraph,
    bond_targets: Vec<f64>,
    count_class: usize,
}

/// Trains on samples whose label contains a bond; returns the model and the
/// number of excluded (atom-only) samples.
pub fn train_bond_classifier(
    samples: &[Sample],
    encoder: EncoderConfig,
    cfg: &BondClassifierConfig,
    adam: &AdamConfig,
    seed: u64,
) -> Result<(BondClassifier, usize), BaselineError> {
    cfg.validate()?;
    encoder.validate()?;
    adam.validate()?;
    let items: Vec<TrainItem> = samples
        .iter()
        .filter_map(|s| {
            let bonds = label_bonds(&s.graph, &s.label);
            if bonds.is_empty() {
                return None;
            }
            let mut targets = vec![0.0; s.graph.n_bonds()];
            for &b in &bonds {
                targets[b] = 1.0;
            }
            Some(TrainItem {
                prepared: PreparedGraph::new(&s.graph),
                bond_targets: targets,
                count_class: bonds.len().min(cfg.count_classes) - 1,
            })
        })
        .collect();
    let excluded = samples.len() - items.len();
    if items.is_empty() {
        return Err(BaselineError::EmptyTrainSet);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = BondClassifier::new(encoder, cfg.count_classes, &mut rng)?;
    let all: Vec<usize> = (0..items.len()).collect();
    for _ in 0..cfg.iterations {
        let picked: Vec<&TrainItem> = all
            .choose_multiple(&mut rng, cfg.batch_size.min(items.len()))
            .map(|&i| &items[i])
            .collect();
        let graphs: Vec<&PreparedGraph> = picked.iter().map(|t| &t.prepared).collect();
        let mut g = Graph::with_grad();
        let out = model.forward(&mut g, &graphs)?;
        let targets: Vec<f64> = picked.iter().flat_map(|t| t.bond_targets.iter().copied()).collect();
        let n = targets.len();
        let target = g.constant(Tensor::from_vec(n, 1, targets)?);
        let bce = g.bce_with_logits(out.bond_logits, target)?;
        let classes: Vec<usize> = picked.iter().map(|t| t.count_class).collect();
        let ce = g.softmax_cross_entropy(out.count_logits, classes)?;
        let loss = g.add(bce, ce)?;
        g.backward(loss)?;
        model.store.accumulate(&g);
        model.store.adam_step(adam);
    }
    Ok((model, excluded))
}
