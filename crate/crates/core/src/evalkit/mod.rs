//! Evaluation: top-k exact match, stratified reports, pattern novelty
//! counts, dataset splits and the synthetic corpus generator.

mod generator;
mod patterns;

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{initial_state, legal_actions, step, ActionSpace};
use crate::molgraph::{connected_components, MolGraph, NodeSet, Sample};

pub use generator::{
    generate_synthetic_dataset, generate_synthetic_dataset_parallel, plant_signature,
    random_connected_graph, GeneratorConfig, GeneratorError, MotifSpec,
};
pub use patterns::{pattern_key, pattern_key_of};

/// Largest k reported.
pub const KMAX: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no prediction for sample `{0}`")]
    MissingPrediction(String),
    #[error("need at least 10 samples to split, got {0}")]
    TooFewSamples(usize),
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    BadRatios((f64, f64, f64)),
}

/// `hits[k-1]` is true iff `label` equals one of the first `k` predictions.
pub fn topk_exact_match(predictions: &[NodeSet], label: &NodeSet, kmax: usize) -> Vec<bool> {
    let first = predictions.iter().position(|p| p == label);
    (1..=kmax).map(|k| first.is_some_and(|r| r < k)).collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    pub count: usize,
    pub top1: f64,
    pub top2: f64,
    pub top3: f64,
    pub top4: f64,
}

#[derive(Default)]
struct Tally {
    count: usize,
    hits: [usize; KMAX],
}

impl Tally {
    fn add(&mut self, hits: &[bool]) {
        self.count += 1;
        for (h, &b) in self.hits.iter_mut().zip(hits) {
            *h += b as usize;
        }
    }

    fn stratum(&self) -> Stratum {
        let acc = |i: usize| {
            if self.count == 0 {
                0.0
            } else {
                self.hits[i] as f64 / self.count as f64
            }
        };
        Stratum {
            count: self.count,
            top1: acc(0),
            top2: acc(1),
            top3: acc(2),
            top4: acc(3),
        }
    }
}

/// Novel patterns among correctly predicted test samples.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Extrapolation {
    /// Correct top-1 test samples whose pattern is absent from training.
    pub per_sample: usize,
    /// Distinct such patterns.
    pub unique_patterns: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub top1: f64,
    pub top2: f64,
    pub top3: f64,
    pub top4: f64,
    /// Keyed by edge count of the label-induced subgraph:
    /// `atom_only`, `1`, `2`, `3+`.
    pub by_edge_count: BTreeMap<String, Stratum>,
    /// `single` (one atom or one bond) or `multiple`.
    pub by_multiplicity: BTreeMap<String, Stratum>,
    /// Connected components of the label: `1`, `2`, `3+`.
    pub by_branches: BTreeMap<String, Stratum>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extrapolation: Option<Extrapolation>,
    /// Number of averaged repeats for randomized predictors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repeats: Option<usize>,
}

impl EvalReport {
    pub fn topk(&self) -> [f64; KMAX] {
        [self.top1, self.top2, self.top3, self.top4]
    }

    /// `acc(1) <= acc(2) <= acc(3) <= acc(4)`.
    pub fn is_monotone(&self) -> bool {
        self.topk().windows(2).all(|w| w[0] <= w[1])
    }

    /// Accuracy-wise mean of reports over the same samples.
    pub fn mean(reports: &[EvalReport]) -> Option<EvalReport> {
        let first = reports.first()?;
        let n = reports.len() as f64;
        let avg = |f: &dyn Fn(&EvalReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        let avg_map = |get: &dyn Fn(&EvalReport) -> &BTreeMap<String, Stratum>| {
            get(first)
                .iter()
                .map(|(key, s)| {
                    let pick = |f: &dyn Fn(&Stratum) -> f64| {
                        reports.iter().map(|r| f(&get(r)[key])).sum::<f64>() / n
                    };
                    (
                        key.clone(),
                        Stratum {
                            count: s.count,
                            top1: pick(&|s| s.top1),
                            top2: pick(&|s| s.top2),
                            top3: pick(&|s| s.top3),
                            top4: pick(&|s| s.top4),
                        },
                    )
                })
                .collect()
        };
        Some(EvalReport {
            samples: first.samples,
            top1: avg(&|r| r.top1),
            top2: avg(&|r| r.top2),
            top3: avg(&|r| r.top3),
            top4: avg(&|r| r.top4),
            by_edge_count: avg_map(&|r| &r.by_edge_count),
            by_multiplicity: avg_map(&|r| &r.by_multiplicity),
            by_branches: avg_map(&|r| &r.by_branches),
            extrapolation: None,
            repeats: Some(reports.len()),
        })
    }
}

/// Number of bonds with both endpoints in `nodes`.
pub fn induced_edge_count(g: &MolGraph, nodes: &NodeSet) -> usize {
    g.bonds()
        .iter()
        .filter(|b| nodes.contains(&b.a) && nodes.contains(&b.b))
        .count()
}

fn edge_key(edges: usize) -> &'static str {
    match edges {
        0 => "atom_only",
        1 => "1",
        2 => "2",
        _ => "3+",
    }
}

fn branch_key(branches: usize) -> &'static str {
    match branches {
        0 | 1 => "1",
        2 => "2",
        _ => "3+",
    }
}

/// Aggregates per-sample ranked predictions (keyed by sample id).
pub fn stratified_report(
    predictions: &HashMap<String, Vec<NodeSet>>,
    dataset: &[Sample],
) -> Result<EvalReport, EvalError> {
    let mut all = Tally::default();
    let mut edges: BTreeMap<&str, Tally> = BTreeMap::new();
    let mut mult: BTreeMap<&str, Tally> = BTreeMap::new();
    let mut branches: BTreeMap<&str, Tally> = BTreeMap::new();
    for s in dataset {
        let preds = predictions
            .get(&s.id)
            .ok_or_else(|| EvalError::MissingPrediction(s.id.clone()))?;
        let hits = topk_exact_match(preds, &s.label, KMAX);
        let e = induced_edge_count(&s.graph, &s.label);
        let single = s.label.len() == 1 || (s.label.len() == 2 && e == 1);
        let b = connected_components(&s.graph, &s.label)
            .map(|c| c.len())
            .unwrap_or(0);
        all.add(&hits);
        edges.entry(edge_key(e)).or_default().add(&hits);
        mult.entry(if single { "single" } else { "multiple" })
            .or_default()
            .add(&hits);
        branches.entry(branch_key(b)).or_default().add(&hits);
    }
    let finish = |m: BTreeMap<&str, Tally>| {
        m.into_iter()
            .map(|(k, t)| (k.to_string(), t.stratum()))
            .collect()
    };
    let overall = all.stratum();
    Ok(EvalReport {
        samples: overall.count,
        top1: overall.top1,
        top2: overall.top2,
        top3: overall.top3,
        top4: overall.top4,
        by_edge_count: finish(edges),
        by_multiplicity: finish(mult),
        by_branches: finish(branches),
        extrapolation: None,
        repeats: None,
    })
}

/// Counts correct top-1 test predictions whose label pattern never occurs as
/// a training label pattern.
pub fn extrapolation_count(
    predictions: &HashMap<String, Vec<NodeSet>>,
    test: &[Sample],
    train: &[Sample],
) -> Extrapolation {
    let known: HashSet<u64> = train.iter().map(pattern_key_of).collect();
    let mut novel = HashSet::new();
    let mut per_sample = 0;
    for s in test {
        let correct = predictions
            .get(&s.id)
            .and_then(|p| p.first())
            .is_some_and(|p| *p == s.label);
        let key = pattern_key_of(s);
        if correct && !known.contains(&key) {
            per_sample += 1;
            novel.insert(key);
        }
    }
    Extrapolation {
        per_sample,
        unique_patterns: novel.len(),
    }
}

/// Seeded shuffle split into train / validation / test.
pub fn split_dataset(
    samples: &[Sample],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<Sample>, Vec<Sample>, Vec<Sample>), EvalError> {
    let n = samples.len();
    if n < 10 {
        return Err(EvalError::TooFewSamples(n));
    }
    let (a, b, c) = ratios;
    if a < 0.0 || b < 0.0 || c < 0.0 || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(EvalError::BadRatios(ratios));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((n as f64) * a).round() as usize;
    let n_val = (((n as f64) * b).round() as usize).min(n - n_train);
    let pick = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect::<Vec<_>>();
    Ok((
        pick(&order[..n_train]),
        pick(&order[n_train..n_train + n_val]),
        pick(&order[n_train + n_val..]),
    ))
}

/// Top-1 exact match of a uniformly random legal policy, averaged over
/// `rollouts` episodes per sample.
pub fn random_policy_top1<R: Rng + ?Sized>(
    samples: &[Sample],
    rollouts: usize,
    space: ActionSpace,
    rng: &mut R,
) -> f64 {
    if samples.is_empty() || rollouts == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    for s in samples {
        for _ in 0..rollouts {
            let Ok(mut state) = initial_state(&s.graph) else {
                continue;
            };
            let reward = loop {
                let actions = legal_actions(&s.graph, &state, space);
                let a = actions[rng.gen_range(0..actions.len())];
                let o = step(&s.graph, &state, a, &s.label, space).expect("legal action");
                if o.terminal {
                    break o.reward;
                }
                state = o.next;
            };
            if reward > 0.0 {
                hits += 1;
            }
        }
    }
    hits as f64 / (samples.len() * rollouts) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::parse_smiles;

    fn set(ids: &[usize]) -> NodeSet {
        ids.iter().copied().collect()
    }

    fn sample(id: &str, smiles: &str, label: &[usize]) -> Sample {
        Sample {
            id: id.into(),
            smiles: Some(smiles.into()),
            graph: parse_smiles(smiles).unwrap(),
            label: set(label),
        }
    }

    #[test]
    fn topk_examples() {
        let label = set(&[1, 2]);
        let preds = vec![set(&[1]), set(&[2, 1]), set(&[0])];
        assert_eq!(topk_exact_match(&preds, &label, 4), vec![false, true, true, true]);
        assert_eq!(topk_exact_match(&[], &label, 4), vec![false; 4]);
        let dup = vec![set(&[0]), set(&[0]), set(&[1, 2])];
        assert_eq!(topk_exact_match(&dup, &label, 4), vec![false, false, true, true]);
    }

    #[test]
    fn report_strata() {
        let data = vec![
            sample("a", "CCO", &[1, 2]),
            sample("b", "CCO", &[0]),
            sample("c", "CCCC", &[0, 3]),
            sample("d", "CCCC", &[0, 1, 2]),
        ];
        let mut preds = HashMap::new();
        for s in &data {
            preds.insert(s.id.clone(), vec![s.label.clone()]);
        }
        let r = stratified_report(&preds, &data).unwrap();
        assert_eq!(r.topk(), [1.0; 4]);
        assert_eq!(r.by_edge_count["1"].count, 1);
        assert_eq!(r.by_edge_count["atom_only"].count, 2);
        assert_eq!(r.by_edge_count["2"].count, 1);
        assert_eq!(r.by_multiplicity["single"].count, 2);
        assert_eq!(r.by_multiplicity["multiple"].count, 2);
        assert_eq!(r.by_branches["2"].count, 1);
        for m in [&r.by_edge_count, &r.by_multiplicity, &r.by_branches] {
            assert_eq!(m.values().map(|s| s.count).sum::<usize>(), 4);
            assert!(m.values().all(|s| s.top1 == 1.0));
        }
        preds.remove("c");
        assert_eq!(
            stratified_report(&preds, &data),
            Err(EvalError::MissingPrediction("c".into()))
        );
    }

    #[test]
    fn split_sizes_and_determinism() {
        let base = sample("x", "CC", &[0]);
        let data: Vec<Sample> = (0..1000)
            .map(|i| Sample {
                id: format!("s{i}"),
                ..base.clone()
            })
            .collect();
        let (a, b, c) = split_dataset(&data, (0.8, 0.1, 0.1), 4).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (800, 100, 100));
        let (a2, ..) = split_dataset(&data, (0.8, 0.1, 0.1), 4).unwrap();
        assert_eq!(a, a2);
        let mut ids: Vec<_> = a.iter().chain(&b).chain(&c).map(|s| s.id.clone()).collect();
        ids.sort();
        let mut want: Vec<_> = data.iter().map(|s| s.id.clone()).collect();
        want.sort();
        assert_eq!(ids, want);
        assert_eq!(
            split_dataset(&data[..9], (0.8, 0.1, 0.1), 0).unwrap_err(),
            EvalError::TooFewSamples(9)
        );
    }

    #[test]
    fn extrapolation_examples() {
        let train = vec![sample("t", "CCO", &[1, 2])];
        let test = vec![
            // same C-O pattern, different ids
            sample("a", "OCC", &[0, 1]),
            sample("b", "CC(N)O", &[1, 2, 3]),
            sample("c", "CCN", &[1, 2]),
        ];
        let mut preds = HashMap::new();
        for s in &test {
            preds.insert(s.id.clone(), vec![s.label.clone()]);
        }
        preds.insert("c".into(), vec![set(&[0])]);
        let e = extrapolation_count(&preds, &test, &train);
        assert_eq!(e, Extrapolation { per_sample: 1, unique_patterns: 1 });
    }

    #[test]
    fn mean_of_reports() {
        let mut a = EvalReport {
            samples: 2,
            top1: 0.5,
            top2: 0.5,
            top3: 1.0,
            top4: 1.0,
            ..EvalReport::default()
        };
        a.by_branches.insert(
            "1".into(),
            Stratum {
                count: 2,
                top1: 0.5,
                top2: 0.5,
                top3: 1.0,
                top4: 1.0,
            },
        );
        let mut b = a.clone();
        b.top1 = 0.0;
        b.by_branches.get_mut("1").unwrap().top1 = 0.0;
        let m = EvalReport::mean(&[a, b]).unwrap();
        assert_eq!(m.top1, 0.25);
        assert_eq!(m.by_branches["1"].top1, 0.25);
        assert_eq!(m.repeats, Some(2));
    }

    #[test]
    fn random_policy_on_single_atom() {
        let data = vec![sample("a", "C", &[0])];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        // select the only atom hits the step cap with an exact match
        assert_eq!(random_policy_top1(&data, 5, ActionSpace::OneHop, &mut rng), 1.0);
    }
}
