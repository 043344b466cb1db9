//! Replay-based Q-learning with an imitation warm-up.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rcq_tensor::{AdamConfig, Graph};
use serde::{Deserialize, Serialize};

use super::{
    act_epsilon_greedy, bellman_target, greedy_rollout, save_checkpoint, AgentError, GraphScorer,
    QNetwork, QQuery, ReplayBuffer, TargetMode,
};
use crate::encoder::{EncoderConfig, GraphBatch, PreparedGraph};
use crate::env::{
    ground_truth_trajectory, initial_state, label_reachable, legal_actions, step, ActionSpace,
    EnvError, Transition,
};
use crate::molgraph::Sample;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub gamma: f64,
    pub total_iterations: usize,
    /// Iterations `1..=imitation_iterations` replay expert trajectories.
    pub imitation_iterations: usize,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_decay_start: usize,
    pub eps_decay_end: usize,
    pub target_sync: usize,
    pub use_target_network: bool,
    pub target_mode: TargetMode,
    pub checkpoint_period: usize,
    pub log_period: usize,
    pub action_space: ActionSpace,
    /// Also store every legal sibling action along expert trajectories.
    pub counterfactuals: bool,
    /// Bootstrap value 0 once the selection has left the label: the exact
    /// match reward is then unreachable because selections only grow.
    pub dead_end_cutoff: bool,
    /// Self-play also on samples whose label is disconnected.
    pub include_unreachable: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 0.99,
            total_iterations: 100_000,
            imitation_iterations: 10_000,
            batch_size: 32,
            replay_capacity: 100_000,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_decay_start: 10_000,
            eps_decay_end: 60_000,
            target_sync: 1000,
            use_target_network: true,
            target_mode: TargetMode::Standard,
            checkpoint_period: 1000,
            log_period: 100,
            action_space: ActionSpace::OneHop,
            counterfactuals: true,
            dead_end_cutoff: true,
            include_unreachable: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: String| Err(AgentError::Config(m));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if self.imitation_iterations > self.total_iterations {
            return bad(format!(
                "imitation_iterations ({}) exceeds total_iterations ({})",
                self.imitation_iterations, self.total_iterations
            ));
        }
        if self.batch_size == 0 || self.replay_capacity < self.batch_size {
            return bad(format!(
                "need 1 <= batch_size <= replay_capacity, got {} and {}",
                self.batch_size, self.replay_capacity
            ));
        }
        for (name, e) in [("eps_start", self.eps_start), ("eps_end", self.eps_end)] {
            if !(0.0..=1.0).contains(&e) {
                return bad(format!("{name} must lie in [0, 1], got {e}"));
            }
        }
        if self.eps_decay_end < self.eps_decay_start {
            return bad("eps_decay_end precedes eps_decay_start".into());
        }
        if self.target_sync == 0 || self.checkpoint_period == 0 || self.log_period == 0 {
            return bad("target_sync, checkpoint_period and log_period must be >= 1".into());
        }
        Ok(())
    }
}

/// Linear decay from `eps_start` to `eps_end` between the two decay marks.
pub fn epsilon_at(cfg: &TrainConfig, iter: usize) -> f64 {
    if iter <= cfg.eps_decay_start {
        return cfg.eps_start;
    }
    if iter >= cfg.eps_decay_end {
        return cfg.eps_end;
    }
    let frac = (iter - cfg.eps_decay_start) as f64 / (cfg.eps_decay_end - cfg.eps_decay_start) as f64;
    cfg.eps_start + frac * (cfg.eps_end - cfg.eps_start)
}

/// Training samples with their featurized graphs.
pub struct Corpus<'a> {
    pub samples: &'a [Sample],
    pub prepared: Vec<PreparedGraph>,
}

impl<'a> Corpus<'a> {
    pub fn new(samples: &'a [Sample]) -> Self {
        Corpus {
            samples,
            prepared: samples.iter().map(|s| PreparedGraph::new(&s.graph)).collect(),
        }
    }
}

/// Bootstrap network plus per-graph scorers cached until the next sync.
///
/// Without a separate target network the online parameters are used and the
/// cache lives for one training step only.
pub struct TargetNet {
    net: Option<QNetwork>,
    cache: HashMap<usize, GraphScorer>,
}

impl TargetNet {
    pub fn new(online: &QNetwork, enabled: bool) -> Self {
        TargetNet {
            net: enabled.then(|| online.clone()),
            cache: HashMap::new(),
        }
    }

    pub fn sync(&mut self, online: &QNetwork) {
        if let Some(net) = &mut self.net {
            net.store
                .copy_values_from(&online.store)
                .expect("target mirrors online layout");
        }
        self.cache.clear();
    }

    fn ensure(
        &mut self,
        online: &QNetwork,
        corpus: &Corpus<'_>,
        graphs: &[usize],
    ) -> Result<(), AgentError> {
        if self.net.is_none() {
            self.cache.clear();
        }
        let mut missing: Vec<usize> = graphs
            .iter()
            .copied()
            .filter(|g| !self.cache.contains_key(g))
            .collect();
        missing.sort_unstable();
        missing.dedup();
        if missing.is_empty() {
            return Ok(());
        }
        let net = self.net.as_ref().unwrap_or(online);
        let refs: Vec<_> = missing.iter().map(|&g| &corpus.prepared[g]).collect();
        for (g, scorer) in missing.into_iter().zip(net.scorers(&refs)?) {
            self.cache.insert(g, scorer);
        }
        Ok(())
    }
}

/// One gradient step on a uniformly drawn minibatch; returns the batch loss.
#[allow(clippy::too_many_arguments)]
pub fn train_step<R: Rng + ?Sized>(
    online: &mut QNetwork,
    target: &mut TargetNet,
    buffer: &ReplayBuffer,
    corpus: &Corpus<'_>,
    cfg: &TrainConfig,
    adam: &AdamConfig,
    rng: &mut R,
) -> Result<f64, AgentError> {
    let batch: Vec<&Transition> = buffer.sample(cfg.batch_size, rng)?;

    let dead = |t: &Transition| {
        cfg.dead_end_cutoff && !t.next.selected.is_subset(&corpus.samples[t.graph].label)
    };
    let bootstrap: Vec<usize> = batch
        .iter()
        .filter(|t| !t.terminal && !dead(t))
        .map(|t| t.graph)
        .collect();
    target.ensure(online, corpus, &bootstrap)?;
    let targets: Vec<f64> = batch
        .iter()
        .map(|t| {
            if t.terminal || dead(t) {
                return bellman_target(t.reward, true, None, cfg.gamma, cfg.target_mode);
            }
            let g = &corpus.samples[t.graph].graph;
            let next_max = target.cache[&t.graph].max_q(g, &t.next, cfg.action_space);
            bellman_target(t.reward, false, next_max, cfg.gamma, cfg.target_mode)
        })
        .collect();

    let mut slot_of: HashMap<usize, usize> = HashMap::new();
    let mut graphs = Vec::new();
    for t in &batch {
        slot_of.entry(t.graph).or_insert_with(|| {
            graphs.push(&corpus.prepared[t.graph]);
            graphs.len() - 1
        });
    }
    let gb = GraphBatch::new(&graphs, online.encoder.config.self_loops);
    let queries: Vec<QQuery<'_>> = batch
        .iter()
        .map(|t| QQuery {
            graph: slot_of[&t.graph],
            selected: &t.state.selected,
            action: t.action,
        })
        .collect();

    let mut g = Graph::with_grad();
    let emb = online.encoder.encode(&mut g, &online.store, &gb)?;
    let q = online.q_forward(&mut g, &gb, &emb, &queries)?;
    let y = g.constant(rcq_tensor::Tensor::from_vec(targets.len(), 1, targets)?);
    let loss = g.squared_error(q, y)?;
    g.backward(loss)?;
    let value = g.value(loss).data()[0];
    online.store.accumulate(&g);
    online.store.adam_step(adam);
    Ok(value)
}

/// Expert trajectory transitions for one sample. With `counterfactuals`,
/// every other legal action at each expert state is stepped as well.
pub fn imitation_transitions<R: Rng + ?Sized>(
    graph_id: usize,
    sample: &Sample,
    counterfactuals: bool,
    space: ActionSpace,
    rng: &mut R,
) -> Result<Vec<Transition>, EnvError> {
    let g = &sample.graph;
    let mut out = Vec::new();
    for (state, expert) in ground_truth_trajectory(g, &sample.label, rng)? {
        let actions = if counterfactuals {
            legal_actions(g, &state, space)
        } else {
            vec![expert]
        };
        for action in actions {
            let o = step(g, &state, action, &sample.label, space)?;
            out.push(Transition {
                graph: graph_id,
                state: state.clone(),
                action,
                reward: o.reward,
                next: o.next,
                terminal: o.terminal,
            });
        }
    }
    Ok(out)
}

fn self_play_episode<R: Rng + ?Sized>(
    scorer: &GraphScorer,
    graph_id: usize,
    sample: &Sample,
    epsilon: f64,
    space: ActionSpace,
    rng: &mut R,
) -> Result<Vec<Transition>, AgentError> {
    let g = &sample.graph;
    let mut state = initial_state(g)?;
    let mut out = Vec::new();
    while let Some(action) = act_epsilon_greedy(scorer, g, &state, epsilon, space, rng) {
        let o = step(g, &state, action, &sample.label, space)?;
        out.push(Transition {
            graph: graph_id,
            state,
            action,
            reward: o.reward,
            next: o.next.clone(),
            terminal: o.terminal,
        });
        if o.terminal {
            break;
        }
        state = o.next;
    }
    Ok(out)
}

/// Fraction of `samples` whose greedy rollout equals the label.
pub fn greedy_accuracy(
    net: &QNetwork,
    samples: &[Sample],
    prepared: &[PreparedGraph],
    space: ActionSpace,
) -> Result<f64, AgentError> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for (chunk_s, chunk_p) in samples.chunks(64).zip(prepared.chunks(64)) {
        let refs: Vec<_> = chunk_p.iter().collect();
        for (s, scorer) in chunk_s.iter().zip(net.scorers(&refs)?) {
            if greedy_rollout(&scorer, &s.graph, space) == s.label {
                hits += 1;
            }
        }
    }
    Ok(hits as f64 / samples.len() as f64)
}

/// One training log line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iter: usize,
    /// Mean minibatch loss since the previous record; `null` before the
    /// buffer first holds a full batch.
    pub loss: Option<f64>,
    pub eps: f64,
    pub buffer: usize,
    pub val_top1: Option<f64>,
}

pub struct TrainOutcome {
    pub online: QNetwork,
    /// Parameters with the best validation top-1 (the final ones without a
    /// validation split).
    pub best: QNetwork,
    pub best_iter: usize,
    pub best_val: Option<f64>,
    pub log: Vec<LogRecord>,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> AgentError + '_ {
    move |source| AgentError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Full training run. With `out_dir`, writes `train_log.jsonl`,
/// `checkpoints/iter_NNNNNN.rcq` and `best.rcq` there.
#[allow(clippy::too_many_arguments)]
pub fn run_training(
    train: &[Sample],
    val: &[Sample],
    encoder: EncoderConfig,
    cfg: &TrainConfig,
    adam: &AdamConfig,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome, AgentError> {
    cfg.validate()?;
    adam.validate()?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
    init_rng.set_stream(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);

    let corpus = Corpus::new(train);
    let val_prepared: Vec<PreparedGraph> = val.iter().map(|s| PreparedGraph::new(&s.graph)).collect();
    let reachable: Vec<usize> = (0..train.len())
        .filter(|&i| label_reachable(&train[i].graph, &train[i].label))
        .collect();
    let skipped = train.len() - reachable.len();
    if skipped > 0 {
        warn!("{skipped} training samples have unreachable labels and are skipped for imitation");
    }
    let pool: Vec<usize> = if cfg.include_unreachable {
        (0..train.len()).collect()
    } else {
        reachable.clone()
    };
    if pool.is_empty() {
        return Err(AgentError::Config("no usable training samples".into()));
    }

    let mut online = QNetwork::new(encoder, &mut init_rng)?;
    let mut target = TargetNet::new(&online, cfg.use_target_network);
    let mut buffer = ReplayBuffer::new(cfg.replay_capacity);

    let mut log_file = None;
    let ckpt_dir = out_dir.map(|d| d.join("checkpoints"));
    if let (Some(dir), Some(ckpt)) = (out_dir, &ckpt_dir) {
        fs::create_dir_all(ckpt).map_err(io_err(ckpt))?;
        let p = dir.join("train_log.jsonl");
        log_file = Some((BufWriter::new(File::create(&p).map_err(io_err(&p))?), p));
    }

    let mut log = Vec::new();
    let mut best: Option<(QNetwork, usize, f64)> = None;
    let (mut loss_sum, mut loss_n) = (0.0, 0usize);

    for iter in 1..=cfg.total_iterations {
        let eps = epsilon_at(cfg, iter);
        if iter <= cfg.imitation_iterations {
            if let Some(&gid) = reachable.choose(&mut rng) {
                for t in imitation_transitions(
                    gid,
                    &train[gid],
                    cfg.counterfactuals,
                    cfg.action_space,
                    &mut rng,
                )? {
                    buffer.push(t);
                }
            }
        } else {
            let gid = *pool.choose(&mut rng).expect("pool is non-empty");
            let scorer = online.scorer(&corpus.prepared[gid])?;
            for t in self_play_episode(&scorer, gid, &train[gid], eps, cfg.action_space, &mut rng)? {
                buffer.push(t);
            }
        }

        if buffer.len() >= cfg.batch_size {
            let l = train_step(&mut online, &mut target, &buffer, &corpus, cfg, adam, &mut rng)?;
            loss_sum += l;
            loss_n += 1;
        }
        if cfg.use_target_network && iter % cfg.target_sync == 0 {
            target.sync(&online);
        }

        let last = iter == cfg.total_iterations;
        let mut val_top1 = None;
        if iter % cfg.checkpoint_period == 0 || last {
            if !val.is_empty() {
                let acc = greedy_accuracy(&online, val, &val_prepared, cfg.action_space)?;
                val_top1 = Some(acc);
                if best.as_ref().map_or(true, |(_, _, b)| acc > *b) {
                    best = Some((online.clone(), iter, acc));
                    if let Some(dir) = out_dir {
                        save_checkpoint(&online, &dir.join("best.rcq"))?;
                    }
                }
            }
            if let Some(ckpt) = &ckpt_dir {
                save_checkpoint(&online, &ckpt.join(format!("iter_{iter:06}.rcq")))?;
            }
        }
        if iter % cfg.log_period == 0 || last {
            let rec = LogRecord {
                iter,
                loss: (loss_n > 0).then(|| loss_sum / loss_n as f64),
                eps,
                buffer: buffer.len(),
                val_top1,
            };
            info!(
                "iter {iter} loss {:?} eps {eps:.3} buffer {} val {:?}",
                rec.loss, rec.buffer, rec.val_top1
            );
            if let Some((w, p)) = &mut log_file {
                let line = serde_json::to_string(&rec).expect("log records serialize");
                writeln!(w, "{line}").map_err(io_err(p))?;
            }
            log.push(rec);
            loss_sum = 0.0;
            loss_n = 0;
        }
    }
    if let Some((mut w, p)) = log_file {
        w.flush().map_err(io_err(&p))?;
    }

    let (best_net, best_iter, best_val) = match best {
        Some((n, i, v)) => (n, i, Some(v)),
        None => {
            if let Some(dir) = out_dir {
                save_checkpoint(&online, &dir.join("best.rcq"))?;
            }
            (online.clone(), cfg.total_iterations, None)
        }
    };
    Ok(TrainOutcome {
        online,
        best: best_net,
        best_iter,
        best_val,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Action, RcState};
    use crate::molgraph::{parse_smiles, NodeSet};

    fn sample(smiles: &str, label: &[usize]) -> Sample {
        Sample {
            id: smiles.into(),
            smiles: Some(smiles.into()),
            graph: parse_smiles(smiles).unwrap(),
            label: label.iter().copied().collect(),
        }
    }

    fn tiny_cfg() -> EncoderConfig {
        EncoderConfig {
            layers: 1,
            heads: 2,
            hidden: 8,
            self_loops: true,
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let c = TrainConfig {
            gamma: 0.0,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
        let c = TrainConfig {
            imitation_iterations: 10,
            total_iterations: 5,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
        let parsed: Result<TrainConfig, _> = serde_json::from_str(r#"{"gama":0.9}"#);
        assert!(parsed.is_err());
        let parsed: TrainConfig = serde_json::from_str(r#"{"gamma":0.9}"#).unwrap();
        assert_eq!(parsed.batch_size, 32);
    }

    #[test]
    fn epsilon_schedule() {
        let c = TrainConfig::default();
        assert_eq!(epsilon_at(&c, 1), 1.0);
        assert_eq!(epsilon_at(&c, 10_000), 1.0);
        assert!((epsilon_at(&c, 35_000) - 0.525).abs() < 1e-12);
        assert_eq!(epsilon_at(&c, 60_000), 0.05);
        assert_eq!(epsilon_at(&c, 99_999), 0.05);
    }

    #[test]
    fn imitation_with_siblings() {
        let s = sample("CCO", &[1]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let plain = imitation_transitions(0, &s, false, ActionSpace::OneHop, &mut rng).unwrap();
        assert_eq!(plain.len(), 2);
        assert_eq!(plain[1].reward, 1.0);
        let all = imitation_transitions(0, &s, true, ActionSpace::OneHop, &mut rng).unwrap();
        // t=0: three selects; t=1: select 0, select 2, stop
        assert_eq!(all.len(), 6);
        assert_eq!(all.iter().filter(|t| t.reward == 1.0).count(), 1);
        assert!(all.iter().all(|t| t.reward == 0.0 || t.terminal));
    }

    #[test]
    fn buffer_too_small() {
        let samples = vec![sample("CCO", &[1])];
        let corpus = Corpus::new(&samples);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = QNetwork::new(tiny_cfg(), &mut rng).unwrap();
        let mut target = TargetNet::new(&net, true);
        let buffer = ReplayBuffer::new(8);
        let err = train_step(
            &mut net,
            &mut target,
            &buffer,
            &corpus,
            &TrainConfig::default(),
            &AdamConfig::default(),
            &mut rng,
        );
        assert!(matches!(err, Err(AgentError::BufferTooSmall { have: 0, need: 32 })));
    }

    #[test]
    fn overfitting_one_transition_reduces_loss() {
        let samples = vec![sample("CC(=O)O", &[1, 2])];
        let corpus = Corpus::new(&samples);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = QNetwork::new(tiny_cfg(), &mut rng).unwrap();
        let mut target = TargetNet::new(&net, true);
        let mut buffer = ReplayBuffer::new(4);
        buffer.push(Transition {
            graph: 0,
            state: RcState::with_selection(NodeSet::from([1, 2])),
            action: Action::Stop,
            reward: 1.0,
            next: RcState {
                selected: NodeSet::from([1, 2]),
                step: 2,
                terminal: true,
            },
            terminal: true,
        });
        let cfg = TrainConfig {
            batch_size: 1,
            ..TrainConfig::default()
        };
        let adam = AdamConfig {
            learning_rate: 3e-5,
            ..AdamConfig::default()
        };
        let losses: Vec<f64> = (0..200)
            .map(|_| train_step(&mut net, &mut target, &buffer, &corpus, &cfg, &adam, &mut rng).unwrap())
            .collect();
        assert!(losses[199] < losses[0] * 0.1, "{} -> {}", losses[0], losses[199]);
        let rises = losses.windows(2).filter(|w| w[1] >= w[0]).count();
        assert_eq!(rises, 0);
    }

    #[test]
    fn short_run_is_reproducible_and_logs() {
        let train: Vec<Sample> = ["CCO", "CC(=O)O", "c1ccccc1O", "CCN", "CCCl"]
            .iter()
            .map(|s| sample(s, &[1, 2]))
            .collect();
        let val = train[..2].to_vec();
        let cfg = TrainConfig {
            total_iterations: 40,
            imitation_iterations: 20,
            batch_size: 8,
            replay_capacity: 200,
            eps_decay_start: 20,
            eps_decay_end: 40,
            target_sync: 10,
            checkpoint_period: 20,
            log_period: 10,
            ..TrainConfig::default()
        };
        let adam = AdamConfig::default();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let a = run_training(&train, &val, tiny_cfg(), &cfg, &adam, 5, Some(d1.path())).unwrap();
        let b = run_training(&train, &val, tiny_cfg(), &cfg, &adam, 5, Some(d2.path())).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.log.len(), 4);
        assert!(a.log[3].val_top1.is_some());
        assert!(a.log[0].val_top1.is_none());
        for f in ["best.rcq", "train_log.jsonl", "checkpoints/iter_000020.rcq", "checkpoints/iter_000040.rcq"] {
            assert_eq!(
                std::fs::read(d1.path().join(f)).unwrap(),
                std::fs::read(d2.path().join(f)).unwrap(),
                "{f}"
            );
        }
        let line = std::fs::read_to_string(d1.path().join("train_log.jsonl")).unwrap();
        let first: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
        for key in ["iter", "loss", "eps", "buffer", "val_top1"] {
            assert!(first.get(key).is_some(), "{key}");
        }
    }
}
