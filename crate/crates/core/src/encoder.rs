//! Edge-featured graph attention encoder.
//!
//! Each layer runs `K` attention heads. For a directed message edge `j → i`
//! with feature `f_ij`, head `k` computes
//!
//! ```text
//! f'_ij = LeakyReLU([h_i W ‖ f_ij ‖ h_j W] A)
//! e_ij  = a · f'_ij
//! α_ij  = softmax of e_ij over the incoming edges of i
//! h'_i  = MLP(‖_k ELU(Σ_j α_ij h_j W))
//! ```
//!
//! and the next layer's edge features are a linear fusion of the per-head
//! `f'`. The `3d × d` map `A` is applied as three `d × d` row blocks so that
//! the node terms are computed once per node rather than once per edge.
//!
//! Every bond becomes two directed message edges sharing its input feature,
//! and every node gets a self-loop whose input feature is the learnable
//! `input.self_bond` row.
//!
//! Several graphs are encoded at once as a disjoint union; attention never
//! crosses graph boundaries.

use std::sync::Arc;

use rand::Rng;
use rcq_tensor::{glorot_uniform, Graph, ParamId, ParamStore, Tensor, TensorError, Var};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::molgraph::{featurize, MolGraph, NodeSet, ATOM_FEATURES, BOND_FEATURES};

/// LeakyReLU negative slope inside attention.
pub const LEAKY_SLOPE: f64 = 0.2;
/// ELU α.
pub const ELU_ALPHA: f64 = 1.0;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("node {0} has no incoming message edge")]
    IsolatedNode(usize),
    #[error("node id {id} out of range for a graph with {n} atoms")]
    InvalidNodeId { id: usize, n: usize },
    #[error("graph index {0} out of range for the batch")]
    InvalidGraph(usize),
    #[error("invalid encoder configuration: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub self_loops: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            layers: 4,
            heads: 4,
            hidden: 256,
            self_loops: true,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.layers == 0 || self.heads == 0 || self.hidden == 0 {
            return Err(EncoderError::Config(format!(
                "layers, heads and hidden must be >= 1 (got {}, {}, {})",
                self.layers, self.heads, self.hidden
            )));
        }
        Ok(())
    }
}

/// Parameter handles of one attention head.
#[derive(Clone, Debug)]
pub struct HeadParams {
    pub w: ParamId,
    pub a_mat: ParamId,
    pub a_vec: ParamId,
}

/// Affine-ELU-affine block.
#[derive(Clone, Debug)]
pub struct Mlp2 {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl Mlp2 {
    pub(crate) fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        output: usize,
        rng: &mut R,
    ) -> Result<Self, TensorError> {
        Ok(Mlp2 {
            w1: store.insert(&format!("{prefix}.w1"), glorot_uniform(input, hidden, rng))?,
            b1: store.insert(&format!("{prefix}.b1"), Tensor::zeros(1, hidden))?,
            w2: store.insert(&format!("{prefix}.w2"), glorot_uniform(hidden, output, rng))?,
            b2: store.insert(&format!("{prefix}.b2"), Tensor::zeros(1, output))?,
        })
    }

    pub(crate) fn bind(store: &ParamStore, prefix: &str) -> Result<Self, TensorError> {
        Ok(Mlp2 {
            w1: store.expect_id(&format!("{prefix}.w1"))?,
            b1: store.expect_id(&format!("{prefix}.b1"))?,
            w2: store.expect_id(&format!("{prefix}.w2"))?,
            b2: store.expect_id(&format!("{prefix}.b2"))?,
        })
    }

    pub(crate) fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
    ) -> Result<Var, TensorError> {
        let w1 = g.param(store, self.w1);
        let b1 = g.param(store, self.b1);
        let w2 = g.param(store, self.w2);
        let b2 = g.param(store, self.b2);
        let h = g.matmul(x, w1)?;
        let h = g.add(h, b1)?;
        let h = g.elu(h, ELU_ALPHA);
        let o = g.matmul(h, w2)?;
        g.add(o, b2)
    }
}

#[derive(Clone, Debug)]
pub struct LayerParams {
    pub heads: Vec<HeadParams>,
    pub edge_fusion: ParamId,
    pub node_mlp: Mlp2,
}

/// Resolved parameter handles of the whole encoder.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub input_atom: ParamId,
    pub input_bond: ParamId,
    pub self_bond: ParamId,
    pub layers: Vec<LayerParams>,
    pub readout: Mlp2,
}

/// Row of independent `N(0, scale²)` draws (Box-Muller).
pub fn normal_row<R: Rng + ?Sized>(d: usize, scale: f64, rng: &mut R) -> Tensor {
    let data = (0..d)
        .map(|_| {
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen();
            scale * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        })
        .collect();
    Tensor::row_vector(data)
}

impl Encoder {
    /// Registers freshly initialized encoder parameters in `store`.
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        config: EncoderConfig,
        rng: &mut R,
    ) -> Result<Self, EncoderError> {
        config.validate()?;
        let d = config.hidden;
        let input_atom = store.insert("input.atom", glorot_uniform(ATOM_FEATURES, d, rng))?;
        let input_bond = store.insert("input.bond", glorot_uniform(BOND_FEATURES, d, rng))?;
        let self_bond = store.insert("input.self_bond", normal_row(d, 0.1, rng))?;
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let mut heads = Vec::with_capacity(config.heads);
            for k in 0..config.heads {
                heads.push(HeadParams {
                    w: store.insert(&format!("egat.{l}.{k}.W"), glorot_uniform(d, d, rng))?,
                    a_mat: store.insert(&format!("egat.{l}.{k}.A"), glorot_uniform(3 * d, d, rng))?,
                    a_vec: store.insert(&format!("egat.{l}.{k}.a"), glorot_uniform(1, d, rng))?,
                });
            }
            let edge_fusion = store.insert(
                &format!("egat.{l}.edge_fusion"),
                glorot_uniform(config.heads * d, d, rng),
            )?;
            let node_mlp = Mlp2::register(
                store,
                &format!("egat.{l}.node_mlp"),
                config.heads * d,
                d,
                d,
                rng,
            )?;
            layers.push(LayerParams {
                heads,
                edge_fusion,
                node_mlp,
            });
        }
        let readout = Mlp2::register(store, "readout", 2 * d, d, d, rng)?;
        Ok(Encoder {
            config,
            input_atom,
            input_bond,
            self_bond,
            layers,
            readout,
        })
    }

    /// Resolves handles of an encoder already present in `store` and checks
    /// its shapes against `config`.
    pub fn bind(store: &ParamStore, config: EncoderConfig) -> Result<Self, EncoderError> {
        config.validate()?;
        let d = config.hidden;
        let expect = |name: String, shape: (usize, usize)| -> Result<ParamId, EncoderError> {
            let id = store.expect_id(&name)?;
            if store.value(id).shape() != shape {
                return Err(EncoderError::Config(format!(
                    "{name} has shape {:?}, expected {shape:?}",
                    store.value(id).shape()
                )));
            }
            Ok(id)
        };
        let mut layers = Vec::new();
        for l in 0..config.layers {
            let heads = (0..config.heads)
                .map(|k| {
                    Ok(HeadParams {
                        w: expect(format!("egat.{l}.{k}.W"), (d, d))?,
                        a_mat: expect(format!("egat.{l}.{k}.A"), (3 * d, d))?,
                        a_vec: expect(format!("egat.{l}.{k}.a"), (1, d))?,
                    })
                })
                .collect::<Result<Vec<_>, EncoderError>>()?;
            layers.push(LayerParams {
                heads,
                edge_fusion: expect(format!("egat.{l}.edge_fusion"), (config.heads * d, d))?,
                node_mlp: Mlp2::bind(store, &format!("egat.{l}.node_mlp"))?,
            });
        }
        Ok(Encoder {
            config,
            input_atom: expect("input.atom".into(), (ATOM_FEATURES, d))?,
            input_bond: expect("input.bond".into(), (BOND_FEATURES, d))?,
            self_bond: expect("input.self_bond".into(), (1, d))?,
            layers,
            readout: Mlp2::bind(store, "readout")?,
        })
    }
}

/// Featurized graph in the layout the encoder consumes.
#[derive(Clone, Debug)]
pub struct PreparedGraph {
    pub n_atoms: usize,
    /// Bond endpoints in bond order.
    pub bonds: Vec<(usize, usize)>,
    pub atom_features: Tensor,
    pub bond_features: Tensor,
}

impl PreparedGraph {
    pub fn new(g: &MolGraph) -> Self {
        let f = featurize(g);
        PreparedGraph {
            n_atoms: g.n_atoms(),
            bonds: g.bonds().iter().map(|b| (b.a, b.b)).collect(),
            atom_features: Tensor::from_vec(g.n_atoms(), ATOM_FEATURES, f.atom_features)
                .expect("sized"),
            bond_features: Tensor::from_vec(g.n_bonds(), BOND_FEATURES, f.bond_features)
                .expect("sized"),
        }
    }
}

/// Index bookkeeping for a disjoint union of graphs.
///
/// Directed edges are laid out as: for every graph, for every bond `(a, b)`,
/// the pair `b → a`, `a → b`; then one self-loop per node of the batch.
#[derive(Clone, Debug)]
pub struct GraphBatch {
    pub node_offsets: Vec<usize>,
    pub n_nodes: usize,
    pub n_bond_edges: usize,
    atom_features: Tensor,
    bond_features: Tensor,
    /// For each bond-directed edge, the row of `bond_features` it copies.
    bond_edge_source_row: Arc<[usize]>,
    dst: Arc<[usize]>,
    src: Arc<[usize]>,
    node_graph: Arc<[usize]>,
    bond_edge_graph: Arc<[usize]>,
    self_loops: bool,
}

impl GraphBatch {
    pub fn new(graphs: &[&PreparedGraph], self_loops: bool) -> Self {
        let n_nodes: usize = graphs.iter().map(|g| g.n_atoms).sum();
        let n_bonds: usize = graphs.iter().map(|g| g.bonds.len()).sum();
        let mut node_offsets = Vec::with_capacity(graphs.len() + 1);
        let mut atom_data = Vec::with_capacity(n_nodes * ATOM_FEATURES);
        let mut bond_data = Vec::with_capacity(n_bonds * BOND_FEATURES);
        let mut dst = Vec::with_capacity(2 * n_bonds + n_nodes);
        let mut src = Vec::with_capacity(2 * n_bonds + n_nodes);
        let mut bond_edge_source_row = Vec::with_capacity(2 * n_bonds);
        let mut node_graph = Vec::with_capacity(n_nodes);
        let mut bond_edge_graph = Vec::with_capacity(2 * n_bonds);
        let mut offset = 0;
        let mut bond_row = 0;
        for (gi, g) in graphs.iter().enumerate() {
            node_offsets.push(offset);
            atom_data.extend_from_slice(g.atom_features.data());
            bond_data.extend_from_slice(g.bond_features.data());
            for &(a, b) in &g.bonds {
                for (d, s) in [(a, b), (b, a)] {
                    dst.push(offset + d);
                    src.push(offset + s);
                    bond_edge_source_row.push(bond_row);
                    bond_edge_graph.push(gi);
                }
                bond_row += 1;
            }
            node_graph.extend(std::iter::repeat(gi).take(g.n_atoms));
            offset += g.n_atoms;
        }
        node_offsets.push(offset);
        if self_loops {
            for i in 0..n_nodes {
                dst.push(i);
                src.push(i);
            }
        }
        GraphBatch {
            node_offsets,
            n_nodes,
            n_bond_edges: 2 * n_bonds,
            atom_features: Tensor::from_vec(n_nodes, ATOM_FEATURES, atom_data).expect("sized"),
            bond_features: Tensor::from_vec(n_bonds, BOND_FEATURES, bond_data).expect("sized"),
            bond_edge_source_row: bond_edge_source_row.into(),
            dst: dst.into(),
            src: src.into(),
            node_graph: node_graph.into(),
            bond_edge_graph: bond_edge_graph.into(),
            self_loops,
        }
    }

    pub fn n_graphs(&self) -> usize {
        self.node_offsets.len() - 1
    }

    pub fn n_edges(&self) -> usize {
        self.dst.len()
    }

    /// Nodes of graph `g` in batch numbering.
    pub fn node_range(&self, g: usize) -> std::ops::Range<usize> {
        self.node_offsets[g]..self.node_offsets[g + 1]
    }

    /// Batch-global id of local node `node` of graph `graph`.
    pub fn global_node(&self, graph: usize, node: usize) -> Result<usize, EncoderError> {
        if graph >= self.n_graphs() {
            return Err(EncoderError::InvalidGraph(graph));
        }
        let range = self.node_range(graph);
        if node >= range.len() {
            return Err(EncoderError::InvalidNodeId {
                id: node,
                n: range.len(),
            });
        }
        Ok(range.start + node)
    }

    /// `(receiver, sender)` of every directed message edge.
    pub fn edge_endpoints(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.dst.iter().copied().zip(self.src.iter().copied())
    }
}

/// Encoder outputs recorded on a [`Graph`].
#[derive(Clone, Debug)]
pub struct BatchEmbeddings {
    /// `n_nodes × d`.
    pub nodes: Var,
    /// All directed edges (bond pairs then self-loops) `× d`.
    pub edges: Var,
    /// `n_graphs × d`.
    pub graphs: Var,
    /// Attention coefficients per layer and head, one column over all edges.
    pub attention: Vec<Vec<Var>>,
}

impl Encoder {
    pub fn hidden(&self) -> usize {
        self.config.hidden
    }

    fn layer(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        batch: &GraphBatch,
        layer: &LayerParams,
        h: Var,
        f: Var,
    ) -> Result<(Var, Var, Vec<Var>), EncoderError> {
        let d = self.config.hidden;
        let mut head_nodes = Vec::with_capacity(layer.heads.len());
        let mut head_edges = Vec::with_capacity(layer.heads.len());
        let mut attention = Vec::with_capacity(layer.heads.len());
        for head in &layer.heads {
            let w = g.param(store, head.w);
            let a_mat = g.param(store, head.a_mat);
            let a_vec = g.param(store, head.a_vec);
            let projected = g.matmul(h, w)?;
            let a_recv = g.slice_rows(a_mat, 0, d)?;
            let a_edge = g.slice_rows(a_mat, d, d)?;
            let a_send = g.slice_rows(a_mat, 2 * d, d)?;
            let recv_term = g.matmul(projected, a_recv)?;
            let send_term = g.matmul(projected, a_send)?;
            let recv = g.gather_rows(recv_term, batch.dst.clone())?;
            let send = g.gather_rows(send_term, batch.src.clone())?;
            let edge_term = g.matmul(f, a_edge)?;
            let pre = g.add(recv, edge_term)?;
            let pre = g.add(pre, send)?;
            let f_new = g.leaky_relu(pre, LEAKY_SLOPE);
            let logits = g.matmul_nt(f_new, a_vec)?;
            let alpha = g
                .segment_softmax(logits, batch.dst.clone(), batch.n_nodes)
                .map_err(|e| match e {
                    TensorError::EmptySegment(node) => EncoderError::IsolatedNode(node),
                    other => other.into(),
                })?;
            let messages = g.gather_rows(projected, batch.src.clone())?;
            let weighted = g.mul(messages, alpha)?;
            let agg = g.segment_sum(weighted, batch.dst.clone(), batch.n_nodes)?;
            head_nodes.push(g.elu(agg, ELU_ALPHA));
            head_edges.push(f_new);
            attention.push(alpha);
        }
        let nodes_cat = g.concat(&head_nodes, 1)?;
        let h_next = layer.node_mlp.forward(g, store, nodes_cat)?;
        let edges_cat = g.concat(&head_edges, 1)?;
        let fusion = g.param(store, layer.edge_fusion);
        let f_next = g.matmul(edges_cat, fusion)?;
        Ok((h_next, f_next, attention))
    }

    /// Runs the encoder over every graph of `batch`.
    pub fn encode(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        batch: &GraphBatch,
    ) -> Result<BatchEmbeddings, EncoderError> {
        if batch.self_loops != self.config.self_loops {
            return Err(EncoderError::Config(
                "batch self-loop policy differs from encoder configuration".into(),
            ));
        }
        let atom_in = g.constant(batch.atom_features.clone());
        let w_atom = g.param(store, self.input_atom);
        let mut h = g.matmul(atom_in, w_atom)?;

        let bond_in = g.constant(batch.bond_features.clone());
        let w_bond = g.param(store, self.input_bond);
        let bond_proj = g.matmul(bond_in, w_bond)?;
        let bond_edges = g.gather_rows(bond_proj, batch.bond_edge_source_row.clone())?;
        let mut f = if batch.self_loops {
            let self_bond = g.param(store, self.self_bond);
            let loops = g.gather_rows(self_bond, vec![0usize; batch.n_nodes])?;
            g.concat(&[bond_edges, loops], 0)?
        } else {
            bond_edges
        };

        let mut attention = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (h_next, f_next, att) = self.layer(g, store, batch, layer, h, f)?;
            h = h_next;
            f = f_next;
            attention.push(att);
        }

        let n_graphs = batch.n_graphs();
        let node_mean = g.segment_mean(h, batch.node_graph.clone(), n_graphs)?;
        let bond_part = g.slice_rows(f, 0, batch.n_bond_edges)?;
        let edge_mean = g.segment_mean(bond_part, batch.bond_edge_graph.clone(), n_graphs)?;
        let diff = g.sub(node_mean, edge_mean)?;
        let diff = g.abs(diff);
        let sum = g.add(node_mean, edge_mean)?;
        let pooled = g.concat(&[diff, sum], 1)?;
        let graphs = self.readout.forward(g, store, pooled)?;
        Ok(BatchEmbeddings {
            nodes: h,
            edges: f,
            graphs,
            attention,
        })
    }
}

/// Embeddings of a single product graph, detached from any tape.
#[derive(Clone, Debug)]
pub struct GraphEmbeddings {
    /// `n × d`.
    pub nodes: Tensor,
    /// `m × d`, one row per bond (mean of its two directed copies).
    pub edges: Tensor,
    /// `1 × d`.
    pub graph: Tensor,
}

/// Inference-only encoding of one molecule.
pub fn encode_product(
    encoder: &Encoder,
    store: &ParamStore,
    graph: &MolGraph,
) -> Result<GraphEmbeddings, EncoderError> {
    let prepared = PreparedGraph::new(graph);
    let batch = GraphBatch::new(&[&prepared], encoder.config.self_loops);
    let mut g = Graph::no_grad();
    let out = encoder.encode(&mut g, store, &batch)?;
    let f = g.value(out.edges);
    let d = encoder.hidden();
    let mut edges = Tensor::zeros(graph.n_bonds(), d);
    for b in 0..graph.n_bonds() {
        for c in 0..d {
            edges.set(b, c, 0.5 * (f.get(2 * b, c) + f.get(2 * b + 1, c)));
        }
    }
    Ok(GraphEmbeddings {
        nodes: g.value(out.nodes).clone(),
        edges,
        graph: g.value(out.graphs).clone(),
    })
}

/// Mean of the selected nodes' embeddings; the zero row for an empty set.
pub fn subgraph_embedding(nodes: &Tensor, selected: &NodeSet) -> Result<Tensor, EncoderError> {
    let mut out = Tensor::zeros(1, nodes.cols());
    for &i in selected {
        if i >= nodes.rows() {
            return Err(EncoderError::InvalidNodeId {
                id: i,
                n: nodes.rows(),
            });
        }
        for (o, &v) in out.data_mut().iter_mut().zip(nodes.row(i)) {
            *o += v;
        }
    }
    if !selected.is_empty() {
        let inv = 1.0 / selected.len() as f64;
        out.data_mut().iter_mut().for_each(|v| *v *= inv);
    }
    Ok(out)
}

/// What an action is embedded as: a node's row or the shared stop vector.
pub fn action_embedding(
    nodes: &Tensor,
    stop: &Tensor,
    action: Option<usize>,
) -> Result<Tensor, EncoderError> {
    match action {
        None => Ok(stop.clone()),
        Some(i) if i < nodes.rows() => Ok(Tensor::row_vector(nodes.row(i).to_vec())),
        Some(i) => Err(EncoderError::InvalidNodeId {
            id: i,
            n: nodes.rows(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::parse_smiles;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(seed: u64, d: usize, heads: usize, layers: usize) -> (ParamStore, Encoder) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let cfg = EncoderConfig {
            layers,
            heads,
            hidden: d,
            self_loops: true,
        };
        let enc = Encoder::init(&mut store, cfg, &mut rng).unwrap();
        (store, enc)
    }

    #[test]
    fn parameter_names_and_shapes() {
        let (store, enc) = small(0, 8, 2, 2);
        for name in [
            "egat.0.0.W",
            "egat.1.1.A",
            "egat.1.0.a",
            "egat.0.edge_fusion",
            "egat.1.node_mlp.w1",
            "readout.w2",
            "input.atom",
            "input.bond",
        ] {
            assert!(store.id(name).is_some(), "{name}");
        }
        assert_eq!(store.value(store.id("egat.0.0.A").unwrap()).shape(), (24, 8));
        assert_eq!(store.value(store.id("egat.0.edge_fusion").unwrap()).shape(), (16, 8));
        assert!(Encoder::bind(&store, enc.config).is_ok());
        let wrong = EncoderConfig { hidden: 4, ..enc.config };
        assert!(Encoder::bind(&store, wrong).is_err());
    }

    #[test]
    fn output_shapes() {
        let (store, enc) = small(1, 8, 2, 2);
        let mol = parse_smiles("CC(=O)Nc1ccccc1").unwrap();
        let p = PreparedGraph::new(&mol);
        let batch = GraphBatch::new(&[&p], true);
        let mut g = Graph::no_grad();
        let out = enc.encode(&mut g, &store, &batch).unwrap();
        let (n, m) = (mol.n_atoms(), mol.n_bonds());
        assert_eq!(g.shape(out.nodes), (n, 8));
        assert_eq!(g.shape(out.edges), (2 * m + n, 8));
        assert_eq!(g.shape(out.graphs), (1, 8));
    }

    #[test]
    fn single_atom_attention_is_exactly_one() {
        let (store, enc) = small(2, 8, 2, 2);
        let mol = parse_smiles("C").unwrap();
        let p = PreparedGraph::new(&mol);
        let batch = GraphBatch::new(&[&p], true);
        let mut g = Graph::no_grad();
        let out = enc.encode(&mut g, &store, &batch).unwrap();
        for layer in &out.attention {
            for &a in layer {
                assert_eq!(g.value(a).data(), &[1.0]);
            }
        }
        let emb = encode_product(&enc, &store, &mol).unwrap();
        assert_eq!(emb.edges.rows(), 0);
        assert!(emb.graph.all_finite());
    }

    #[test]
    fn symmetric_pair_attention() {
        let (store, enc) = small(3, 8, 2, 1);
        let mol = parse_smiles("CC").unwrap();
        let p = PreparedGraph::new(&mol);
        let batch = GraphBatch::new(&[&p], true);
        let mut g = Graph::no_grad();
        let out = enc.encode(&mut g, &store, &batch).unwrap();
        // edges: 1->0, 0->1, 0->0, 1->1
        for &a in &out.attention[0] {
            let v = g.value(a).data();
            assert!((v[0] - v[1]).abs() < 1e-12);
            assert!((v[0] + v[2] - 1.0).abs() < 1e-12);
            assert!((v[1] + v[3] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn isolated_node_without_self_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let cfg = EncoderConfig {
            layers: 1,
            heads: 1,
            hidden: 4,
            self_loops: false,
        };
        let enc = Encoder::init(&mut store, cfg, &mut rng).unwrap();
        let mol = parse_smiles("C.CC").unwrap();
        let p = PreparedGraph::new(&mol);
        let batch = GraphBatch::new(&[&p], false);
        let mut g = Graph::no_grad();
        assert!(matches!(
            enc.encode(&mut g, &store, &batch),
            Err(EncoderError::IsolatedNode(0))
        ));
    }

    #[test]
    fn batching_matches_individual_encoding() {
        let (store, enc) = small(4, 8, 2, 2);
        let mols: Vec<_> = ["CCO", "c1ccccc1N", "C"]
            .iter()
            .map(|s| parse_smiles(s).unwrap())
            .collect();
        let prepared: Vec<_> = mols.iter().map(PreparedGraph::new).collect();
        let refs: Vec<_> = prepared.iter().collect();
        let batch = GraphBatch::new(&refs, true);
        let mut g = Graph::no_grad();
        let out = enc.encode(&mut g, &store, &batch).unwrap();
        for (i, mol) in mols.iter().enumerate() {
            let single = encode_product(&enc, &store, mol).unwrap();
            let gv = g.value(out.graphs);
            for c in 0..8 {
                assert!((gv.get(i, c) - single.graph.get(0, c)).abs() < 1e-12);
            }
            let nv = g.value(out.nodes);
            for (local, global) in batch.node_range(i).enumerate() {
                for c in 0..8 {
                    assert!((nv.get(global, c) - single.nodes.get(local, c)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn subgraph_and_action_embeddings() {
        let nodes = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 6.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(
            subgraph_embedding(&nodes, &NodeSet::new()).unwrap().data(),
            &[0.0, 0.0]
        );
        assert_eq!(
            subgraph_embedding(&nodes, &NodeSet::from([1])).unwrap().data(),
            &[3.0, 6.0]
        );
        assert_eq!(
            subgraph_embedding(&nodes, &NodeSet::from([0, 1])).unwrap().data(),
            &[2.0, 4.0]
        );
        assert!(subgraph_embedding(&nodes, &NodeSet::from([3])).is_err());
        let stop = Tensor::row_vector(vec![9.0, 9.0]);
        assert_eq!(action_embedding(&nodes, &stop, None).unwrap(), stop);
        assert_eq!(
            action_embedding(&nodes, &stop, Some(2)).unwrap().data(),
            &[0.0, 1.0]
        );
        assert!(action_embedding(&nodes, &stop, Some(5)).is_err());
    }
}
