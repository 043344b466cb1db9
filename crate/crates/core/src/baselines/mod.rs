//! Comparison baselines: similarity retrieval with subgraph matching, and a
//! bond classifier with a disconnection-count head.

mod classifier;
mod fingerprint;
mod matcher;
mod sim;

use rcq_tensor::TensorError;
use thiserror::Error;

use crate::encoder::EncoderError;
use crate::molgraph::GraphError;

pub use classifier::{
    label_bonds, top_subsets, train_bond_classifier, BondClassifier, BondClassifierConfig,
};
pub use fingerprint::{ecfp_fingerprint, tanimoto, Fingerprint, DEFAULT_BITS, DEFAULT_RADIUS};
pub use matcher::{match_sets, subgraph_match, Embedding, DEFAULT_MATCH_BOUND};
pub use sim::{sim_predict, SimIndex};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("fingerprint widths differ: {left} vs {right}")]
    WidthMismatch { left: usize, right: usize },
    #[error("pattern graph is empty")]
    EmptyPattern,
    #[error("more than {bound} subgraph matches")]
    MatchExplosion { bound: usize },
    #[error("no usable training samples")]
    EmptyTrainSet,
    #[error("invalid baseline configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
