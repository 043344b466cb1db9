//! Sequential reaction-center selection as a Markov decision process.
//!
//! A state is the set of already selected atoms. At `t = 0` any atom may be
//! picked and stopping is not allowed. Afterwards the agent either adds an
//! atom from the one-hop frontier of the selection or stops. The only reward
//! is `1` for stopping on exactly the labeled set. Episodes end after `|V|`
//! selections at the latest.

use rand::seq::IteratorRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::molgraph::{is_connected_subset, one_hop_frontier, MolGraph, NodeSet};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EnvError {
    #[error("graph has no atoms")]
    EmptyGraph,
    #[error("illegal action {action:?} at step {step}")]
    IllegalAction { action: Action, step: usize },
    #[error("episode already terminated")]
    Terminated,
    #[error("label is empty")]
    EmptyLabel,
    #[error("label is not connected and cannot be reached under the one-hop constraint")]
    UnreachableTarget,
    #[error("label node {id} out of range for {n} atoms")]
    InvalidLabel { id: usize, n: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Select(usize),
    Stop,
}

/// Which nodes may be added once something is selected.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActionSpace {
    /// First-order neighbors of the selection.
    #[default]
    OneHop,
    /// Every unselected node.
    Unconstrained,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RcState {
    pub selected: NodeSet,
    pub step: usize,
    pub terminal: bool,
}

impl RcState {
    /// Snapshot of a non-terminal state holding `selected`.
    pub fn with_selection(selected: NodeSet) -> Self {
        RcState {
            step: selected.len(),
            selected,
            terminal: false,
        }
    }
}

/// One experience tuple; `graph` indexes the training corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub graph: usize,
    pub state: RcState,
    pub action: Action,
    pub reward: f64,
    pub next: RcState,
    pub terminal: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub next: RcState,
    pub reward: f64,
    pub terminal: bool,
}

pub fn initial_state(g: &MolGraph) -> Result<RcState, EnvError> {
    if g.is_empty() {
        return Err(EnvError::EmptyGraph);
    }
    Ok(RcState::default())
}

/// Legal actions in ascending node order, `Stop` last.
pub fn legal_actions(g: &MolGraph, s: &RcState, space: ActionSpace) -> Vec<Action> {
    if s.terminal {
        return Vec::new();
    }
    if s.selected.is_empty() {
        return (0..g.n_atoms()).map(Action::Select).collect();
    }
    let mut out: Vec<Action> = match space {
        ActionSpace::OneHop => one_hop_frontier(g, &s.selected)
            .expect("state selection is valid")
            .into_iter()
            .map(Action::Select)
            .collect(),
        ActionSpace::Unconstrained => (0..g.n_atoms())
            .filter(|i| !s.selected.contains(i))
            .map(Action::Select)
            .collect(),
    };
    out.push(Action::Stop);
    out
}

pub fn is_legal(g: &MolGraph, s: &RcState, a: Action, space: ActionSpace) -> bool {
    if s.terminal {
        return false;
    }
    match a {
        Action::Stop => !s.selected.is_empty(),
        Action::Select(i) => {
            i < g.n_atoms()
                && !s.selected.contains(&i)
                && (s.selected.is_empty()
                    || space == ActionSpace::Unconstrained
                    || g.neighbors(i).any(|j| s.selected.contains(&j)))
        }
    }
}

/// Reward for ending an episode on `selected`.
pub fn terminal_reward(selected: &NodeSet, label: &NodeSet) -> f64 {
    if selected == label {
        1.0
    } else {
        0.0
    }
}

pub fn step(
    g: &MolGraph,
    s: &RcState,
    a: Action,
    label: &NodeSet,
    space: ActionSpace,
) -> Result<StepOutcome, EnvError> {
    if s.terminal {
        return Err(EnvError::Terminated);
    }
    if !is_legal(g, s, a, space) {
        return Err(EnvError::IllegalAction { action: a, step: s.step });
    }
    let mut next = s.clone();
    match a {
        Action::Stop => next.terminal = true,
        Action::Select(i) => {
            next.selected.insert(i);
            next.step += 1;
            next.terminal = next.step >= g.n_atoms();
        }
    }
    let reward = if next.terminal {
        terminal_reward(&next.selected, label)
    } else {
        0.0
    };
    Ok(StepOutcome {
        terminal: next.terminal,
        next,
        reward,
    })
}

fn check_label(g: &MolGraph, label: &NodeSet) -> Result<(), EnvError> {
    if label.is_empty() {
        return Err(EnvError::EmptyLabel);
    }
    if let Some(&id) = label.iter().find(|&&id| id >= g.n_atoms()) {
        return Err(EnvError::InvalidLabel { id, n: g.n_atoms() });
    }
    Ok(())
}

/// True when the one-hop constraint can realize `label`.
pub fn label_reachable(g: &MolGraph, label: &NodeSet) -> bool {
    !label.is_empty() && is_connected_subset(g, label).unwrap_or(false)
}

/// A random legal expansion order of `label` followed by `Stop`.
pub fn ground_truth_trajectory<R: Rng + ?Sized>(
    g: &MolGraph,
    label: &NodeSet,
    rng: &mut R,
) -> Result<Vec<(RcState, Action)>, EnvError> {
    check_label(g, label)?;
    if !label_reachable(g, label) {
        return Err(EnvError::UnreachableTarget);
    }
    let mut state = initial_state(g)?;
    let mut out = Vec::with_capacity(label.len() + 1);
    while state.selected.len() < label.len() {
        let pick = if state.selected.is_empty() {
            label.iter().copied().choose(rng)
        } else {
            one_hop_frontier(g, &state.selected)
                .expect("selection is valid")
                .into_iter()
                .filter(|i| label.contains(i))
                .choose(rng)
        }
        .expect("connected label always has a next node");
        out.push((state.clone(), Action::Select(pick)));
        state = step(g, &state, Action::Select(pick), label, ActionSpace::OneHop)?.next;
    }
    out.push((state, Action::Stop));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::parse_smiles;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn set(ids: &[usize]) -> NodeSet {
        ids.iter().copied().collect()
    }

    #[test]
    fn initial_states() {
        assert_eq!(
            initial_state(&parse_smiles("CCO").unwrap()).unwrap(),
            RcState::default()
        );
        assert!(initial_state(&parse_smiles("C").unwrap()).is_ok());
        assert_eq!(initial_state(&MolGraph::empty()), Err(EnvError::EmptyGraph));
    }

    #[test]
    fn legal_action_examples() {
        let g = parse_smiles("CCO").unwrap();
        let sp = ActionSpace::OneHop;
        assert_eq!(
            legal_actions(&g, &RcState::default(), sp),
            vec![Action::Select(0), Action::Select(1), Action::Select(2)]
        );
        assert_eq!(
            legal_actions(&g, &RcState::with_selection(set(&[1])), sp),
            vec![Action::Select(0), Action::Select(2), Action::Stop]
        );
        assert_eq!(
            legal_actions(&g, &RcState::with_selection(set(&[0, 1, 2])), sp),
            vec![Action::Stop]
        );
        assert_eq!(
            legal_actions(&g, &RcState::with_selection(set(&[0])), ActionSpace::Unconstrained),
            vec![Action::Select(1), Action::Select(2), Action::Stop]
        );
    }

    #[test]
    fn step_examples() {
        let g = parse_smiles("CCO").unwrap();
        let label = set(&[1]);
        let sp = ActionSpace::OneHop;
        let s1 = step(&g, &RcState::default(), Action::Select(1), &label, sp).unwrap();
        assert_eq!((s1.reward, s1.terminal), (0.0, false));
        let end = step(&g, &s1.next, Action::Stop, &label, sp).unwrap();
        assert_eq!((end.reward, end.terminal), (1.0, true));

        let s0 = step(&g, &RcState::default(), Action::Select(0), &label, sp).unwrap();
        let end = step(&g, &s0.next, Action::Stop, &label, sp).unwrap();
        assert_eq!(end.reward, 0.0);
        assert_eq!(
            step(&g, &s0.next, Action::Select(2), &label, sp),
            Err(EnvError::IllegalAction {
                action: Action::Select(2),
                step: 1
            })
        );
        assert!(step(&g, &RcState::default(), Action::Stop, &label, sp).is_err());
        assert!(step(&g, &s0.next, Action::Select(0), &label, sp).is_err());
        assert_eq!(
            step(&g, &end.next, Action::Stop, &label, sp),
            Err(EnvError::Terminated)
        );
    }

    #[test]
    fn step_cap_forces_terminal_with_exact_match_reward() {
        let g = parse_smiles("CC").unwrap();
        let label = set(&[0, 1]);
        let sp = ActionSpace::OneHop;
        let a = step(&g, &RcState::default(), Action::Select(0), &label, sp).unwrap();
        let b = step(&g, &a.next, Action::Select(1), &label, sp).unwrap();
        assert!(b.terminal);
        assert_eq!(b.reward, 1.0);
    }

    #[test]
    fn trajectory_examples() {
        let g = parse_smiles("CCO").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = ground_truth_trajectory(&g, &set(&[1]), &mut rng).unwrap();
        assert_eq!(
            t,
            vec![
                (RcState::default(), Action::Select(1)),
                (RcState::with_selection(set(&[1])), Action::Stop)
            ]
        );
        let path = parse_smiles("CCCC").unwrap();
        assert_eq!(
            ground_truth_trajectory(&path, &set(&[0, 3]), &mut rng),
            Err(EnvError::UnreachableTarget)
        );
        let mut firsts = NodeSet::new();
        for seed in 0..20 {
            let mut a = ChaCha8Rng::seed_from_u64(seed);
            let mut b = ChaCha8Rng::seed_from_u64(seed);
            let ta = ground_truth_trajectory(&g, &set(&[0, 1]), &mut a).unwrap();
            assert_eq!(ta, ground_truth_trajectory(&g, &set(&[0, 1]), &mut b).unwrap());
            assert_eq!(ta.len(), 3);
            if let Action::Select(i) = ta[0].1 {
                firsts.insert(i);
            }
        }
        assert_eq!(firsts, set(&[0, 1]));
        assert_eq!(
            ground_truth_trajectory(&g, &set(&[]), &mut rng),
            Err(EnvError::EmptyLabel)
        );
    }
}
