//! Deep Q-network over (graph, selected set, action) triples.
//!
//! `Q(s, a) = MLP(h_G ‖ h_sel ‖ h_a)` where `h_G` is the graph embedding,
//! `h_sel` the mean embedding of the selected atoms (zero when nothing is
//! selected) and `h_a` either the chosen atom's embedding or the learned stop
//! vector `h_stop`.
//!
//! Two evaluation paths exist. [`QNetwork::q_forward`] records on a tape and
//! is used for training. [`GraphScorer`] precomputes the per-graph parts of
//! the first head layer once, after which each query costs `O(d²)`; it backs
//! acting, bootstrapping and search.

mod replay;
mod train;

use std::path::Path;

use rand::Rng;
use rcq_tensor::{checkpoint, glorot_uniform, Graph, ParamId, ParamStore, Tensor, TensorError, Var};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{
    normal_row, BatchEmbeddings, Encoder, EncoderConfig, EncoderError, GraphBatch, PreparedGraph,
    ELU_ALPHA,
};
use crate::env::{is_legal, legal_actions, Action, ActionSpace, EnvError, RcState};
use crate::molgraph::{DatasetError, MolGraph, NodeSet};

pub use replay::ReplayBuffer;
pub use train::{
    epsilon_at, greedy_accuracy, imitation_transitions, run_training, train_step, Corpus, LogRecord, TargetNet,
    TrainConfig, TrainOutcome,
};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("replay buffer holds {have} transitions, batch needs {need}")]
    BufferTooSmall { have: usize, need: usize },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// How the bootstrapped regression target combines reward and next value.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetMode {
    /// `r + γ·max Q'`
    #[default]
    Standard,
    /// `γ·r + max Q'`
    PaperLiteral,
}

#[derive(Clone, Debug)]
pub struct QHead {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub w3: ParamId,
    pub b3: ParamId,
}

/// Encoder, stop vector and Q-head sharing one parameter store.
#[derive(Clone, Debug)]
pub struct QNetwork {
    pub store: ParamStore,
    pub encoder: Encoder,
    pub h_stop: ParamId,
    pub head: QHead,
}

/// One `(graph, selection, action)` query into a [`GraphBatch`].
#[derive(Clone, Copy, Debug)]
pub struct QQuery<'a> {
    pub graph: usize,
    pub selected: &'a NodeSet,
    pub action: Action,
}

impl QNetwork {
    pub fn new<R: Rng + ?Sized>(config: EncoderConfig, rng: &mut R) -> Result<Self, AgentError> {
        let mut store = ParamStore::new();
        let encoder = Encoder::init(&mut store, config, rng)?;
        let d = config.hidden;
        let h_stop = store.insert("h_stop", normal_row(d, 0.1, rng))?;
        let head = QHead {
            w1: store.insert("qhead.w1", glorot_uniform(3 * d, d, rng))?,
            b1: store.insert("qhead.b1", Tensor::zeros(1, d))?,
            w2: store.insert("qhead.w2", glorot_uniform(d, d, rng))?,
            b2: store.insert("qhead.b2", Tensor::zeros(1, d))?,
            w3: store.insert("qhead.w3", glorot_uniform(d, 1, rng))?,
            b3: store.insert("qhead.b3", Tensor::zeros(1, 1))?,
        };
        Ok(QNetwork {
            store,
            encoder,
            h_stop,
            head,
        })
    }

    /// Wraps an existing store, checking names and shapes against `config`.
    pub fn from_store(store: ParamStore, config: EncoderConfig) -> Result<Self, AgentError> {
        let d = config.hidden;
        let h_stop = store.expect_id("h_stop")?;
        let found = store.value(h_stop).shape();
        if found != (1, d) {
            return Err(TensorError::VersionMismatch(format!(
                "checkpoint hidden size {} does not match configured {d}",
                found.1
            ))
            .into());
        }
        let encoder = Encoder::bind(&store, config).map_err(|e| {
            TensorError::VersionMismatch(format!("checkpoint does not fit configuration: {e}"))
        })?;
        let id = |n: &str| store.expect_id(n);
        let head = QHead {
            w1: id("qhead.w1")?,
            b1: id("qhead.b1")?,
            w2: id("qhead.w2")?,
            b2: id("qhead.b2")?,
            w3: id("qhead.w3")?,
            b3: id("qhead.b3")?,
        };
        Ok(QNetwork {
            store,
            encoder,
            h_stop,
            head,
        })
    }

    pub fn config(&self) -> EncoderConfig {
        self.encoder.config
    }

    pub fn hidden(&self) -> usize {
        self.encoder.config.hidden
    }

    /// Records Q values of `queries` on `g`; returns a `queries.len() × 1` var.
    pub fn q_forward(
        &self,
        g: &mut Graph,
        batch: &GraphBatch,
        emb: &BatchEmbeddings,
        queries: &[QQuery<'_>],
    ) -> Result<Var, AgentError> {
        self.q_forward_with(&self.store, g, batch, emb, queries)
    }

    /// Like [`QNetwork::q_forward`] but reads parameters from `store`, which
    /// must share this network's layout.
    pub fn q_forward_with(
        &self,
        store: &ParamStore,
        g: &mut Graph,
        batch: &GraphBatch,
        emb: &BatchEmbeddings,
        queries: &[QQuery<'_>],
    ) -> Result<Var, AgentError> {
        let d = self.hidden();
        let n_q = queries.len();
        let mut graph_rows = Vec::with_capacity(n_q);
        let mut sel_rows = Vec::new();
        let mut sel_seg = Vec::new();
        let mut act_rows = Vec::with_capacity(n_q);
        for (qi, q) in queries.iter().enumerate() {
            if q.graph >= batch.n_graphs() {
                return Err(EncoderError::InvalidGraph(q.graph).into());
            }
            graph_rows.push(q.graph);
            for &i in q.selected {
                sel_rows.push(batch.global_node(q.graph, i)?);
                sel_seg.push(qi);
            }
            act_rows.push(match q.action {
                Action::Select(i) => batch.global_node(q.graph, i)?,
                Action::Stop => batch.n_nodes,
            });
        }
        let h_g = g.gather_rows(emb.graphs, graph_rows)?;
        let h_sel = if sel_rows.is_empty() {
            g.constant(Tensor::zeros(n_q, d))
        } else {
            let rows = g.gather_rows(emb.nodes, sel_rows)?;
            g.segment_mean(rows, sel_seg, n_q)?
        };
        let stop = g.param(store, self.h_stop);
        let table = g.concat(&[emb.nodes, stop], 0)?;
        let h_a = g.gather_rows(table, act_rows)?;
        let x = g.concat(&[h_g, h_sel, h_a], 1)?;
        self.head_forward(store, g, x)
    }

    fn head_forward(&self, s: &ParamStore, g: &mut Graph, x: Var) -> Result<Var, AgentError> {
        let h = &self.head;
        let mut out = x;
        for (w, b, act) in [(h.w1, h.b1, true), (h.w2, h.b2, true), (h.w3, h.b3, false)] {
            let w = g.param(s, w);
            let b = g.param(s, b);
            out = g.matmul(out, w)?;
            out = g.add(out, b)?;
            if act {
                out = g.elu(out, ELU_ALPHA);
            }
        }
        Ok(out)
    }

    /// Encodes `graphs` together without gradients and returns one scorer each.
    pub fn scorers(&self, graphs: &[&PreparedGraph]) -> Result<Vec<GraphScorer>, AgentError> {
        if graphs.is_empty() {
            return Ok(Vec::new());
        }
        let batch = GraphBatch::new(graphs, self.encoder.config.self_loops);
        let mut g = Graph::no_grad();
        let emb = self.encoder.encode(&mut g, &self.store, &batch)?;
        let nodes = g.value(emb.nodes);
        let graph_emb = g.value(emb.graphs);
        let d = self.hidden();
        let w1 = self.store.value(self.head.w1);
        let b1 = self.store.value(self.head.b1);
        let block = |k: usize| {
            Tensor::from_vec(d, d, w1.data()[k * d * d..(k + 1) * d * d].to_vec()).expect("sized")
        };
        let (w_g, w_sel, w_act) = (block(0), block(1), block(2));
        let node_sel = nodes.matmul(&w_sel);
        let node_act = nodes.matmul(&w_act);
        let stop_act = self.store.value(self.h_stop).matmul(&w_act);
        let graph_term = graph_emb.matmul(&w_g);
        let mut out = Vec::with_capacity(graphs.len());
        for gi in 0..batch.n_graphs() {
            let range = batch.node_range(gi);
            let base: Vec<f64> = graph_term
                .row(gi)
                .iter()
                .zip(b1.data())
                .map(|(a, b)| a + b)
                .collect();
            out.push(GraphScorer {
                d,
                base,
                node_sel: rows_of(&node_sel, range.clone()),
                node_act: rows_of(&node_act, range.clone()),
                stop_act: stop_act.data().to_vec(),
                nodes: rows_of(nodes, range),
                w2: self.store.value(self.head.w2).clone(),
                b2: self.store.value(self.head.b2).data().to_vec(),
                w3: self.store.value(self.head.w3).data().to_vec(),
                b3: self.store.value(self.head.b3).data()[0],
            });
        }
        Ok(out)
    }

    pub fn scorer(&self, graph: &PreparedGraph) -> Result<GraphScorer, AgentError> {
        Ok(self.scorers(&[graph])?.pop().expect("one graph in, one scorer out"))
    }

    /// Q value of a single legal `(state, action)` pair.
    pub fn q_value(
        &self,
        graph: &MolGraph,
        state: &RcState,
        action: Action,
        space: ActionSpace,
    ) -> Result<f64, AgentError> {
        if !is_legal(graph, state, action, space) {
            return Err(EnvError::IllegalAction {
                action,
                step: state.step,
            }
            .into());
        }
        let scorer = self.scorer(&PreparedGraph::new(graph))?;
        Ok(scorer.score(&state.selected, action))
    }
}

fn rows_of(t: &Tensor, range: std::ops::Range<usize>) -> Tensor {
    let c = t.cols();
    Tensor::from_vec(range.len(), c, t.data()[range.start * c..range.end * c].to_vec())
        .expect("sized")
}

/// Frozen per-graph Q evaluator.
#[derive(Clone, Debug)]
pub struct GraphScorer {
    d: usize,
    /// `h_G · W1[graph] + b1`.
    base: Vec<f64>,
    /// Node embeddings times the selection block of `W1`.
    node_sel: Tensor,
    /// Node embeddings times the action block of `W1`.
    node_act: Tensor,
    stop_act: Vec<f64>,
    nodes: Tensor,
    w2: Tensor,
    b2: Vec<f64>,
    w3: Vec<f64>,
    b3: f64,
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        ELU_ALPHA * x.exp_m1()
    }
}

impl GraphScorer {
    pub fn n_atoms(&self) -> usize {
        self.nodes.rows()
    }

    /// Final node embeddings of the graph.
    pub fn node_embeddings(&self) -> &Tensor {
        &self.nodes
    }

    /// First-layer pre-activation shared by every action of `selected`.
    fn state_term(&self, selected: &NodeSet) -> Vec<f64> {
        let mut out = self.base.clone();
        if !selected.is_empty() {
            let inv = 1.0 / selected.len() as f64;
            let mut acc = vec![0.0; self.d];
            for &i in selected {
                for (a, v) in acc.iter_mut().zip(self.node_sel.row(i)) {
                    *a += v;
                }
            }
            for (o, a) in out.iter_mut().zip(acc) {
                *o += a * inv;
            }
        }
        out
    }

    fn finish(&self, state: &[f64], action: Action) -> f64 {
        let act = match action {
            Action::Select(i) => self.node_act.row(i),
            Action::Stop => &self.stop_act,
        };
        let h1: Vec<f64> = state.iter().zip(act).map(|(s, a)| elu(s + a)).collect();
        let mut h2 = self.b2.clone();
        for (k, &x) in h1.iter().enumerate() {
            if x != 0.0 {
                for (o, w) in h2.iter_mut().zip(self.w2.row(k)) {
                    *o += x * w;
                }
            }
        }
        h2.iter()
            .zip(&self.w3)
            .fold(self.b3, |acc, (&h, &w)| acc + elu(h) * w)
    }

    pub fn score(&self, selected: &NodeSet, action: Action) -> f64 {
        self.finish(&self.state_term(selected), action)
    }

    pub fn score_actions(&self, selected: &NodeSet, actions: &[Action]) -> Vec<f64> {
        let state = self.state_term(selected);
        actions.iter().map(|&a| self.finish(&state, a)).collect()
    }

    /// Largest Q over the legal actions of `state`; `None` when there are none.
    pub fn max_q(&self, graph: &MolGraph, state: &RcState, space: ActionSpace) -> Option<f64> {
        let actions = legal_actions(graph, state, space);
        self.score_actions(&state.selected, &actions)
            .into_iter()
            .reduce(f64::max)
    }
}

/// Regression target for one transition. `next_max` is the bootstrap value
/// (ignored for terminal transitions; `None` means no legal action).
pub fn bellman_target(
    reward: f64,
    terminal: bool,
    next_max: Option<f64>,
    gamma: f64,
    mode: TargetMode,
) -> f64 {
    if terminal {
        return reward;
    }
    let next = next_max.unwrap_or(0.0);
    match mode {
        TargetMode::Standard => reward + gamma * next,
        TargetMode::PaperLiteral => gamma * reward + next,
    }
}

/// Index of the first maximum.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.map_or(true, |(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Uniform random legal action with probability `epsilon`, else the greedy one.
pub fn act_epsilon_greedy<R: Rng + ?Sized>(
    scorer: &GraphScorer,
    graph: &MolGraph,
    state: &RcState,
    epsilon: f64,
    space: ActionSpace,
    rng: &mut R,
) -> Option<Action> {
    let actions = legal_actions(graph, state, space);
    if actions.is_empty() {
        return None;
    }
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        return Some(actions[rng.gen_range(0..actions.len())]);
    }
    let q = scorer.score_actions(&state.selected, &actions);
    argmax(&q).map(|i| actions[i])
}

/// Follows the greedy policy until termination and returns the final set.
pub fn greedy_rollout(scorer: &GraphScorer, graph: &MolGraph, space: ActionSpace) -> NodeSet {
    let mut state = RcState::default();
    loop {
        let actions = legal_actions(graph, &state, space);
        let Some(best) = argmax(&scorer.score_actions(&state.selected, &actions)) else {
            return state.selected;
        };
        match actions[best] {
            Action::Stop => return state.selected,
            Action::Select(i) => {
                state.selected.insert(i);
                state.step += 1;
                if state.step >= graph.n_atoms() {
                    return state.selected;
                }
            }
        }
    }
}

pub fn save_checkpoint(net: &QNetwork, path: &Path) -> Result<(), AgentError> {
    Ok(checkpoint::save(&net.store, path)?)
}

pub fn load_checkpoint(path: &Path, config: EncoderConfig) -> Result<QNetwork, AgentError> {
    QNetwork::from_store(checkpoint::load(path)?, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::parse_smiles;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net(seed: u64, d: usize) -> QNetwork {
        let cfg = EncoderConfig {
            layers: 2,
            heads: 2,
            hidden: d,
            self_loops: true,
        };
        QNetwork::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn tape_q(net: &QNetwork, mol: &MolGraph, sel: &NodeSet, actions: &[Action]) -> Vec<f64> {
        let p = PreparedGraph::new(mol);
        let batch = GraphBatch::new(&[&p], true);
        let mut g = Graph::no_grad();
        let emb = net.encoder.encode(&mut g, &net.store, &batch).unwrap();
        let queries: Vec<_> = actions
            .iter()
            .map(|&action| QQuery {
                graph: 0,
                selected: sel,
                action,
            })
            .collect();
        let q = net.q_forward(&mut g, &batch, &emb, &queries).unwrap();
        g.value(q).data().to_vec()
    }

    #[test]
    fn head_input_width_is_three_d() {
        let n = net(0, 256);
        assert_eq!(n.store.value(n.head.w1).shape(), (768, 256));
    }

    #[test]
    fn scorer_matches_tape() {
        let n = net(1, 8);
        let mol = parse_smiles("CC(=O)Oc1ccccc1").unwrap();
        let scorer = n.scorer(&PreparedGraph::new(&mol)).unwrap();
        for sel in [NodeSet::new(), NodeSet::from([1]), NodeSet::from([1, 2, 3])] {
            let actions: Vec<_> = (0..mol.n_atoms())
                .map(Action::Select)
                .chain([Action::Stop])
                .collect();
            let tape = tape_q(&n, &mol, &sel, &actions);
            let fast = scorer.score_actions(&sel, &actions);
            for (a, b) in tape.iter().zip(&fast) {
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn stop_depends_on_h_stop() {
        let mut n = net(2, 8);
        let mol = parse_smiles("CCO").unwrap();
        let s = RcState::with_selection(NodeSet::from([1]));
        let before = n.q_value(&mol, &s, Action::Stop, ActionSpace::OneHop).unwrap();
        let sel_before = n.q_value(&mol, &s, Action::Select(0), ActionSpace::OneHop).unwrap();
        let id = n.h_stop;
        n.store.value_mut(id).data_mut()[0] += 0.5;
        let after = n.q_value(&mol, &s, Action::Stop, ActionSpace::OneHop).unwrap();
        let sel_after = n.q_value(&mol, &s, Action::Select(0), ActionSpace::OneHop).unwrap();
        assert_ne!(before, after);
        assert_eq!(sel_before, sel_after);
        assert!(matches!(
            n.q_value(&mol, &RcState::default(), Action::Stop, ActionSpace::OneHop),
            Err(AgentError::Env(EnvError::IllegalAction { .. }))
        ));
    }

    #[test]
    fn q_depends_only_on_the_set() {
        let n = net(3, 8);
        let mol = parse_smiles("CCCO").unwrap();
        let a = RcState {
            selected: NodeSet::from([1, 2]),
            step: 2,
            terminal: false,
        };
        let b = RcState {
            step: 7,
            ..a.clone()
        };
        let qa = n.q_value(&mol, &a, Action::Select(0), ActionSpace::OneHop).unwrap();
        let qb = n.q_value(&mol, &b, Action::Select(0), ActionSpace::OneHop).unwrap();
        assert!((qa - qb).abs() < 1e-6);
    }

    #[test]
    fn bellman_examples() {
        let s = TargetMode::Standard;
        let p = TargetMode::PaperLiteral;
        assert_eq!(bellman_target(1.0, true, Some(5.0), 0.99, s), 1.0);
        assert_eq!(bellman_target(0.0, false, Some(2.0), 0.5, s), 1.0);
        assert_eq!(bellman_target(0.0, false, Some(2.0), 0.5, p), 2.0);
        assert_eq!(bellman_target(1.0, true, None, 0.5, p), 1.0);
        assert_eq!(bellman_target(0.0, false, None, 0.5, s), 0.0);
    }

    #[test]
    fn greedy_breaks_ties_on_first_maximum() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), Some(1));
        assert_eq!(argmax(&[2.0, 2.0, 2.0]), Some(0));
        assert_eq!(argmax(&[]), None);
        let mut n = net(4, 8);
        // zero final layer: every Q equals the bias
        let w3 = n.head.w3;
        n.store.value_mut(w3).fill(0.0);
        let mol = parse_smiles("CCO").unwrap();
        let scorer = n.scorer(&PreparedGraph::new(&mol)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = act_epsilon_greedy(&scorer, &mol, &RcState::default(), 0.0, ActionSpace::OneHop, &mut rng);
        assert_eq!(a, Some(Action::Select(0)));
    }

    #[test]
    fn epsilon_one_is_uniform() {
        let n = net(5, 8);
        let mol = parse_smiles("CCCCC").unwrap();
        let scorer = n.scorer(&PreparedGraph::new(&mol)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut counts = [0usize; 5];
        let draws = 10_000;
        for _ in 0..draws {
            if let Some(Action::Select(i)) = act_epsilon_greedy(
                &scorer,
                &mol,
                &RcState::default(),
                1.0,
                ActionSpace::OneHop,
                &mut rng,
            ) {
                counts[i] += 1;
            }
        }
        let p = 0.2;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - draws as f64 * p).abs() < 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn constant_shift_keeps_argmax() {
        let mut n = net(6, 8);
        let mol = parse_smiles("CC(C)O").unwrap();
        let s = RcState::with_selection(NodeSet::from([1]));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pick = |n: &QNetwork, rng: &mut ChaCha8Rng| {
            let sc = n.scorer(&PreparedGraph::new(&mol)).unwrap();
            act_epsilon_greedy(&sc, &mol, &s, 0.0, ActionSpace::OneHop, rng)
        };
        let before = pick(&n, &mut rng);
        let b3 = n.head.b3;
        n.store.value_mut(b3).data_mut()[0] += 17.0;
        assert_eq!(before, pick(&n, &mut rng));
    }

    #[test]
    fn checkpoint_round_trip_and_dimension_check() {
        let n = net(7, 8);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("q.rcq");
        save_checkpoint(&n, &p).unwrap();
        let back = load_checkpoint(&p, n.config()).unwrap();
        let p2 = dir.path().join("q2.rcq");
        save_checkpoint(&back, &p2).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&p2).unwrap());
        let wrong = EncoderConfig {
            hidden: 16,
            ..n.config()
        };
        assert!(matches!(
            load_checkpoint(&p, wrong),
            Err(AgentError::Tensor(TensorError::VersionMismatch(_)))
        ));
    }
}
