//! Synthetic product graphs with one planted reaction-center motif each.
//!
//! The background is a random connected graph over the palette elements with
//! single bonds only. Every default motif carries an element or bond order
//! that never occurs in the background, and it attaches to background carbons
//! through designated anchor atoms, so its labeled pattern occurs exactly once
//! per graph. Sample `i` draws from its own ChaCha stream `i`, which keeps the
//! output independent of generation order.

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::molgraph::elements::atomic_number;
use crate::molgraph::{Atom, Bond, BondOrder, GraphError, MolGraph, NodeSet, Sample};

#[derive(Debug, Error, PartialEq)]
pub enum GeneratorError {
    #[error("invalid generator configuration: {0}")]
    Config(String),
    #[error("could not plant a motif in sample {sample} after {attempts} attempts")]
    MotifPlantFailure { sample: usize, attempts: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// A reaction-center motif: atoms by symbol, internal bonds, and the atoms
/// that bond to the background.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotifSpec {
    pub name: String,
    pub atoms: Vec<String>,
    pub bonds: Vec<(usize, usize, BondOrder)>,
    pub anchors: Vec<usize>,
}

impl MotifSpec {
    fn new(name: &str, atoms: &[&str], bonds: &[(usize, usize, BondOrder)], anchors: &[usize]) -> Self {
        MotifSpec {
            name: name.into(),
            atoms: atoms.iter().map(|s| s.to_string()).collect(),
            bonds: bonds.to_vec(),
            anchors: anchors.to_vec(),
        }
    }

    /// The motif as a standalone graph.
    pub fn graph(&self) -> Result<MolGraph, GeneratorError> {
        let atoms = self
            .atoms
            .iter()
            .map(|s| {
                atomic_number(s)
                    .map(Atom::new)
                    .ok_or_else(|| GeneratorError::Config(format!("unknown element `{s}`")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let bonds = self
            .bonds
            .iter()
            .map(|&(a, b, o)| Bond::new(a, b, o))
            .collect();
        Ok(MolGraph::new(atoms, bonds)?)
    }
}

pub fn default_motifs() -> Vec<MotifSpec> {
    use BondOrder::*;
    vec![
        MotifSpec::new("bromide", &["Br"], &[], &[0]),
        MotifSpec::new("nitrile", &["C", "N"], &[(0, 1, Triple)], &[0]),
        MotifSpec::new("disulfide", &["S", "S"], &[(0, 1, Single)], &[0, 1]),
        MotifSpec::new("azo", &["N", "N"], &[(0, 1, Double)], &[0, 1]),
        MotifSpec::new("carboxyl", &["C", "O", "O"], &[(0, 1, Double), (0, 2, Single)], &[0, 2]),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub samples: usize,
    /// Inclusive atom-count range, motif included.
    pub min_atoms: usize,
    pub max_atoms: usize,
    /// Background elements, drawn uniformly (repeat a symbol to weight it).
    pub palette: Vec<String>,
    pub motifs: Vec<MotifSpec>,
    /// Extra background bonds per background atom, on top of a spanning tree.
    pub edge_density: f64,
    pub seed: u64,
    pub max_attempts: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            samples: 2400,
            min_atoms: 12,
            max_atoms: 20,
            palette: ["C", "C", "C", "C", "N", "O"].map(String::from).to_vec(),
            motifs: default_motifs(),
            edge_density: 0.1,
            seed: 0,
            max_attempts: 20,
        }
    }
}

/// Single-bond capacity of a background element.
fn max_degree(z: u8) -> usize {
    match z {
        6 | 14 => 4,
        7 | 5 | 15 => 3,
        8 | 16 => 2,
        _ => 1,
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), GeneratorError> {
        let bad = |m: String| Err(GeneratorError::Config(m));
        if self.min_atoms == 0 || self.min_atoms > self.max_atoms {
            return bad(format!(
                "atom range {}..={} is empty",
                self.min_atoms, self.max_atoms
            ));
        }
        if self.palette.is_empty() || self.motifs.is_empty() {
            return bad("palette and motif set must be non-empty".into());
        }
        for s in &self.palette {
            if atomic_number(s).is_none() {
                return bad(format!("unknown palette element `{s}`"));
            }
        }
        if !(self.edge_density >= 0.0 && self.edge_density.is_finite()) {
            return bad(format!("edge_density must be >= 0, got {}", self.edge_density));
        }
        for m in &self.motifs {
            let g = m.graph()?;
            if g.is_empty() || m.anchors.is_empty() || m.anchors.iter().any(|&a| a >= g.n_atoms()) {
                return bad(format!("motif `{}` needs atoms and valid anchors", m.name));
            }
            if m.atoms.len() >= self.min_atoms {
                return bad(format!("motif `{}` does not fit min_atoms", m.name));
            }
        }
        if self.max_attempts == 0 {
            return bad("max_attempts must be >= 1".into());
        }
        Ok(())
    }
}

fn try_sample<R: Rng + ?Sized>(
    cfg: &GeneratorConfig,
    palette: &[u8],
    motif: &MotifSpec,
    rng: &mut R,
) -> Result<Option<(MolGraph, NodeSet)>, GeneratorError> {
    let n = rng.gen_range(cfg.min_atoms..=cfg.max_atoms);
    let m = motif.atoms.len();
    let n_bg = n - m;
    let elements: Vec<u8> = (0..n_bg)
        .map(|_| *palette.choose(rng).expect("palette non-empty"))
        .collect();
    let mut degree = vec![0usize; n];
    let mut bonds: Vec<Bond> = Vec::new();
    let adjacent = |bonds: &Vec<Bond>, a: usize, b: usize| {
        bonds.iter().any(|x| (x.a == a && x.b == b) || (x.a == b && x.b == a))
    };
    for i in 1..n_bg {
        let open: Vec<usize> = (0..i)
            .filter(|&j| degree[j] < max_degree(elements[j]))
            .collect();
        let Some(&j) = open.choose(rng) else {
            return Ok(None);
        };
        bonds.push(Bond::new(j, i, BondOrder::Single));
        degree[i] += 1;
        degree[j] += 1;
    }
    let extra = (cfg.edge_density * n_bg as f64).round() as usize;
    for _ in 0..extra {
        let a = rng.gen_range(0..n_bg);
        let b = rng.gen_range(0..n_bg);
        if a == b
            || degree[a] >= max_degree(elements[a])
            || degree[b] >= max_degree(elements[b])
            || adjacent(&bonds, a, b)
        {
            continue;
        }
        bonds.push(Bond::new(a, b, BondOrder::Single));
        degree[a] += 1;
        degree[b] += 1;
    }

    let motif_graph = motif.graph()?;
    let mut atoms: Vec<Atom> = elements.iter().map(|&z| Atom::new(z)).collect();
    atoms.extend(motif_graph.atoms().iter().cloned());
    for b in motif_graph.bonds() {
        bonds.push(Bond::new(n_bg + b.a, n_bg + b.b, b.order));
    }
    let mut hosts: Vec<usize> = (0..n_bg)
        .filter(|&j| elements[j] == 6 && degree[j] < 4)
        .collect();
    if hosts.len() < motif.anchors.len() {
        return Ok(None);
    }
    hosts.shuffle(rng);
    for (&anchor, &host) in motif.anchors.iter().zip(&hosts) {
        bonds.push(Bond::new(host, n_bg + anchor, BondOrder::Single));
    }

    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let graph = MolGraph::new(atoms, bonds)?.permuted(&perm)?;
    let label = (n_bg..n).map(|i| perm[i]).collect();
    Ok(Some((graph, label)))
}

fn generate_one(cfg: &GeneratorConfig, palette: &[u8], i: usize) -> Result<Sample, GeneratorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(i as u64);
    let motif = cfg.motifs.choose(&mut rng).expect("motifs non-empty");
    let mut planted = None;
    for attempt in 1..=cfg.max_attempts {
        planted = try_sample(cfg, palette, motif, &mut rng)?;
        if planted.is_some() {
            break;
        }
        warn!("sample {i}: motif `{}` plant attempt {attempt} failed", motif.name);
    }
    let (graph, label) = planted.ok_or(GeneratorError::MotifPlantFailure {
        sample: i,
        attempts: cfg.max_attempts,
    })?;
    Ok(Sample {
        id: format!("syn-{i:05}"),
        smiles: None,
        graph,
        label,
    })
}

fn palette_numbers(cfg: &GeneratorConfig) -> Vec<u8> {
    cfg.palette
        .iter()
        .map(|s| atomic_number(s).expect("validated"))
        .collect()
}

/// Deterministic synthetic corpus; sample ids are `syn-00000`, `syn-00001`, ...
pub fn generate_synthetic_dataset(cfg: &GeneratorConfig) -> Result<Vec<Sample>, GeneratorError> {
    cfg.validate()?;
    let palette = palette_numbers(cfg);
    (0..cfg.samples).map(|i| generate_one(cfg, &palette, i)).collect()
}

/// Same output as [`generate_synthetic_dataset`], split over `workers` threads.
pub fn generate_synthetic_dataset_parallel(
    cfg: &GeneratorConfig,
    workers: usize,
) -> Result<Vec<Sample>, GeneratorError> {
    cfg.validate()?;
    let palette = palette_numbers(cfg);
    let workers = workers.clamp(1, cfg.samples.max(1));
    let chunk = cfg.samples.div_ceil(workers);
    let parts: Vec<Result<Vec<Sample>, GeneratorError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let palette = &palette;
                scope.spawn(move || {
                    let end = ((w + 1) * chunk).min(cfg.samples);
                    (w * chunk..end).map(|i| generate_one(cfg, palette, i)).collect()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("generator worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(cfg.samples);
    for part in parts {
        out.extend(part?);
    }
    Ok(out)
}

/// A random connected graph over `elements`: a uniform random spanning tree
/// plus each remaining pair bonded with probability `extra`. Bonds are single
/// except for a `double` fraction of double bonds.
pub fn random_connected_graph<R: Rng + ?Sized>(
    n: usize,
    elements: &[u8],
    extra: f64,
    double: f64,
    rng: &mut R,
) -> Result<MolGraph, GeneratorError> {
    if elements.is_empty() {
        return Err(GeneratorError::Config("element list is empty".into()));
    }
    let atoms: Vec<Atom> = (0..n)
        .map(|_| Atom::new(*elements.choose(rng).expect("non-empty")))
        .collect();
    let order = |rng: &mut R| {
        if rng.gen_bool(double.clamp(0.0, 1.0)) {
            BondOrder::Double
        } else {
            BondOrder::Single
        }
    };
    let mut bonds = Vec::new();
    let mut tree = vec![false; n * n];
    for i in 1..n {
        let j = rng.gen_range(0..i);
        tree[i * n + j] = true;
        bonds.push(Bond::new(j, i, order(rng)));
    }
    for i in 0..n {
        for j in 0..i {
            if !tree[i * n + j] && rng.gen_bool(extra.clamp(0.0, 1.0)) {
                bonds.push(Bond::new(j, i, order(rng)));
            }
        }
    }
    Ok(MolGraph::new(atoms, bonds)?)
}

/// The labeled motif graph of a sample (its label-induced subgraph).
pub fn plant_signature(sample: &Sample) -> Result<MolGraph, GraphError> {
    Ok(crate::molgraph::induced_subgraph(&sample.graph, &sample.label)?.graph)
}
