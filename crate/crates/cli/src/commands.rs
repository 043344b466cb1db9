//! Subcommand implementations.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rcq_core::agent::{load_checkpoint, run_training, QNetwork};
use rcq_core::baselines::{sim_predict, train_bond_classifier, SimIndex};
use rcq_core::encoder::PreparedGraph;
use rcq_core::evalkit::{
    extrapolation_count, generate_synthetic_dataset_parallel, random_connected_graph, split_dataset,
    stratified_report, EvalReport, KMAX,
};
use rcq_core::molgraph::{load_dataset, save_dataset, DatasetError, NodeSet, Sample};
use rcq_core::search::{
    beam_search, read_predictions, saturating_comparison, write_predictions, Prediction, PredictionRecord,
    DEFAULT_SUBSET_BOUND,
};
use serde::{Deserialize, Serialize};

use crate::config::{BaselineMethod, Component, RunConfig};
use crate::{runtime, write_file, CliError, Command, Common};

const DATASET_FILE: &str = "dataset.jsonl";
const SPLIT_FILE: &str = "split.json";

/// Sample ids of each split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitManifest {
    pub seed: u64,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

fn resolve(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
        cfg.derive_seeds();
    }
    if let Some(w) = common.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn required(flag: Option<PathBuf>, fallback: &Option<PathBuf>, name: &str) -> Result<PathBuf, CliError> {
    flag.or_else(|| fallback.clone()).ok_or_else(|| {
        CliError::Validation(format!("missing --{name} (or the matching `paths` entry in the config)"))
    })
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))
}

fn dataset_error(e: DatasetError) -> CliError {
    CliError::Validation(e.to_string())
}

struct DataDir {
    samples: Vec<Sample>,
    manifest: SplitManifest,
}

impl DataDir {
    fn load(dir: &Path) -> Result<Self, CliError> {
        let samples = load_dataset(&dir.join(DATASET_FILE)).map_err(dataset_error)?;
        let path = dir.join(SPLIT_FILE);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        let manifest: SplitManifest = serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        Ok(DataDir { samples, manifest })
    }

    fn split(&self, name: &str) -> Result<Vec<Sample>, CliError> {
        let ids: &[String] = match name {
            "train" => &self.manifest.train,
            "val" => &self.manifest.val,
            "test" => &self.manifest.test,
            "all" => return Ok(self.samples.clone()),
            other => {
                return Err(CliError::Validation(format!(
                    "unknown split `{other}` (expected train, val, test or all)"
                )))
            }
        };
        let by_id: HashMap<&str, &Sample> = self.samples.iter().map(|s| (s.id.as_str(), s)).collect();
        ids.iter()
            .map(|id| {
                by_id.get(id.as_str()).map(|s| (*s).clone()).ok_or_else(|| {
                    CliError::Validation(format!("split manifest names unknown sample `{id}`"))
                })
            })
            .collect()
    }
}

/// Order-preserving map over `items` on `workers` threads.
fn par_map<T: Sync, U: Send>(
    items: &[T],
    workers: usize,
    f: impl Fn(usize, &T) -> Result<U, CliError> + Sync,
) -> Result<Vec<U>, CliError> {
    if items.is_empty() {
        return Ok(Vec::new());
    }
    let chunk = items.len().div_ceil(workers.max(1));
    let parts: Vec<Result<Vec<U>, CliError>> = std::thread::scope(|scope| {
        let f = &f;
        let handles: Vec<_> = items
            .chunks(chunk)
            .enumerate()
            .map(|(c, part)| {
                scope.spawn(move || {
                    part.iter()
                        .enumerate()
                        .map(|(i, item)| f(c * chunk + i, item))
                        .collect()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(items.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::GenData { common, out } => gen_data(&common, out),
        Command::Train {
            common,
            input,
            out,
            mode,
        } => train(&common, input, out, mode),
        Command::Predict {
            common,
            input,
            checkpoint,
            out,
            beam,
            split,
        } => predict(&common, input, checkpoint, out, beam, &split),
        Command::Evaluate {
            common,
            input,
            data,
            out,
            split,
        } => evaluate(&common, &input, data, out, &split),
        Command::OracleCheck { common } => oracle_check(&common),
        Command::Baseline {
            common,
            input,
            out,
            method,
        } => baseline(&common, input, out, method),
    }
}

fn gen_data(common: &Common, out: Option<PathBuf>) -> Result<(), CliError> {
    let cfg = resolve(common)?;
    let out = required(out, &cfg.paths.out, "out")?;
    create_dir(&out)?;
    let samples = generate_synthetic_dataset_parallel(&cfg.generator, cfg.workers).map_err(runtime)?;
    let split_seed = cfg.seed_for(Component::Split);
    let ratios = (cfg.split.train, cfg.split.val, cfg.split.test);
    let (train, val, test) = split_dataset(&samples, ratios, split_seed).map_err(|e| CliError::Validation(e.to_string()))?;
    let ids = |v: &[Sample]| v.iter().map(|s| s.id.clone()).collect();
    let manifest = SplitManifest {
        seed: split_seed,
        train: ids(&train),
        val: ids(&val),
        test: ids(&test),
    };
    save_dataset(&samples, &out.join(DATASET_FILE)).map_err(runtime)?;
    write_file(
        &out.join(SPLIT_FILE),
        &serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    cfg.echo(&out)?;
    info!(
        "wrote {} samples ({} train / {} val / {} test) to {}",
        samples.len(),
        train.len(),
        val.len(),
        test.len(),
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct TrainMetrics {
    iterations: usize,
    best_iter: usize,
    best_val_top1: Option<f64>,
    final_loss: Option<f64>,
}

fn train(
    common: &Common,
    input: Option<PathBuf>,
    out: Option<PathBuf>,
    mode: Option<rcq_core::agent::TargetMode>,
) -> Result<(), CliError> {
    let mut cfg = resolve(common)?;
    if let Some(m) = mode {
        cfg.train.target_mode = m;
    }
    let input = required(input, &cfg.paths.data, "in")?;
    let out = required(out, &cfg.paths.out, "out")?;
    let data = DataDir::load(&input)?;
    let (train_set, val_set) = (data.split("train")?, data.split("val")?);
    create_dir(&out)?;
    cfg.echo(&out)?;
    let outcome = run_training(
        &train_set,
        &val_set,
        cfg.encoder,
        &cfg.train,
        &cfg.adam,
        cfg.seed_for(Component::Train),
        Some(&out),
    )
    .map_err(runtime)?;
    let metrics = TrainMetrics {
        iterations: cfg.train.total_iterations,
        best_iter: outcome.best_iter,
        best_val_top1: outcome.best_val,
        final_loss: outcome.log.iter().rev().find_map(|r| r.loss),
    };
    write_file(
        &out.join("metrics.json"),
        &serde_json::to_string_pretty(&metrics).expect("metrics serialize"),
    )?;
    info!(
        "training done: best validation top-1 {:?} at iteration {}",
        outcome.best_val, outcome.best_iter
    );
    Ok(())
}

fn predict(
    common: &Common,
    input: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    out: Option<PathBuf>,
    beam: Option<usize>,
    split: &str,
) -> Result<(), CliError> {
    let mut cfg = resolve(common)?;
    if let Some(k) = beam {
        cfg.beam = k;
        cfg.validate()?;
    }
    let input = required(input, &cfg.paths.data, "in")?;
    let checkpoint = required(checkpoint, &cfg.paths.checkpoint, "checkpoint")?;
    let out = required(out, &cfg.paths.out, "out")?;
    let samples = DataDir::load(&input)?.split(split)?;
    let net = load_checkpoint(&checkpoint, cfg.encoder).map_err(|e| CliError::Validation(e.to_string()))?;
    let space = cfg.train.action_space;
    let records = par_map(&samples, cfg.workers, |_, s| {
        let predictions = beam_search(&net, &s.graph, cfg.beam, space).map_err(runtime)?;
        Ok(PredictionRecord {
            id: s.id.clone(),
            predictions,
            k: cfg.beam,
            repeat: None,
        })
    })?;
    write_predictions(&records, &out).map_err(runtime)?;
    info!("wrote {} prediction records to {}", records.len(), out.display());
    Ok(())
}

/// Report over `test`; randomized predictors (records with `repeat`) are
/// averaged over their repeats.
fn report(records: Vec<PredictionRecord>, test: &[Sample], train: &[Sample]) -> Result<EvalReport, CliError> {
    let invalid = |e: rcq_core::evalkit::EvalError| CliError::Validation(e.to_string());
    let mut by_repeat: std::collections::BTreeMap<Option<usize>, HashMap<String, Vec<NodeSet>>> =
        Default::default();
    for r in records {
        by_repeat
            .entry(r.repeat)
            .or_default()
            .insert(r.id, r.predictions.into_iter().map(|p| p.nodes).collect());
    }
    if by_repeat.is_empty() {
        by_repeat.insert(None, HashMap::new());
    }
    let single = by_repeat.len() == 1 && by_repeat.contains_key(&None);
    let mut reports = Vec::with_capacity(by_repeat.len());
    for preds in by_repeat.values() {
        let mut r = stratified_report(preds, test).map_err(invalid)?;
        if single {
            r.extrapolation = Some(extrapolation_count(preds, test, train));
        }
        reports.push(r);
    }
    let rep = if single {
        reports.pop().expect("one report")
    } else {
        EvalReport::mean(&reports).expect("non-empty")
    };
    if !rep.is_monotone() {
        warn!("top-k accuracies are not monotone: {:?}", rep.topk());
    }
    Ok(rep)
}

fn evaluate(
    common: &Common,
    input: &Path,
    data: Option<PathBuf>,
    out: Option<PathBuf>,
    split: &str,
) -> Result<(), CliError> {
    let cfg = resolve(common)?;
    let data = required(data, &cfg.paths.data, "data")?;
    let dir = DataDir::load(&data)?;
    let (test, train) = (dir.split(split)?, dir.split("train")?);
    let records = read_predictions(input).map_err(|e| CliError::Validation(e.to_string()))?;
    let rep = report(records, &test, &train)?;
    let text = serde_json::to_string_pretty(&rep).expect("report serializes");
    match out.or(cfg.paths.out) {
        Some(path) => write_file(&path, &text)?,
        None => println!("{text}"),
    }
    info!(
        "top-1 {:.4}  top-2 {:.4}  top-3 {:.4}  top-4 {:.4}  ({} samples)",
        rep.top1, rep.top2, rep.top3, rep.top4, rep.samples
    );
    Ok(())
}

fn oracle_check(common: &Common) -> Result<(), CliError> {
    let cfg = resolve(common)?;
    if cfg.oracle.max_nodes == 0 {
        return Err(CliError::Validation("oracle.max_nodes must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed_for(Component::Oracle));
    let mut mismatches = 0;
    for i in 0..cfg.oracle.graphs {
        let n = rng.gen_range(1..=cfg.oracle.max_nodes);
        let graph = random_connected_graph(n, &[6, 7, 8], 0.25, 0.3, &mut rng).map_err(runtime)?;
        let net = QNetwork::new(cfg.encoder, &mut rng).map_err(runtime)?;
        let scorer = net.scorer(&PreparedGraph::new(&graph)).map_err(runtime)?;
        let (beam, exhaustive) = saturating_comparison(&scorer, &graph, DEFAULT_SUBSET_BOUND).map_err(runtime)?;
        if beam != exhaustive {
            mismatches += 1;
            warn!("graph {i} ({n} atoms): beam and exhaustive rankings differ");
        }
    }
    println!("oracle-check: {} graphs, {mismatches} mismatches", cfg.oracle.graphs);
    if mismatches > 0 {
        return Err(CliError::Runtime(format!("{mismatches} oracle mismatches")));
    }
    Ok(())
}

fn baseline(
    common: &Common,
    input: Option<PathBuf>,
    out: Option<PathBuf>,
    method: Option<BaselineMethod>,
) -> Result<(), CliError> {
    let mut cfg = resolve(common)?;
    if let Some(m) = method {
        cfg.baseline.method = m;
    }
    let input = required(input, &cfg.paths.data, "in")?;
    let out = required(out, &cfg.paths.out, "out")?;
    let dir = DataDir::load(&input)?;
    let (train_set, test) = (dir.split("train")?, dir.split("test")?);
    create_dir(&out)?;
    cfg.echo(&out)?;
    let seed = cfg.seed_for(Component::Baseline);
    let b = &cfg.baseline;
    let records: Vec<PredictionRecord> = match b.method {
        BaselineMethod::Sim => {
            let index = SimIndex::new(&train_set, b.radius, b.nbits, b.match_bound).map_err(runtime)?;
            let per_sample = par_map(&test, cfg.workers, |i, s| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                let lists = sim_predict(&s.graph, &index, KMAX, b.repeats, &mut rng).map_err(runtime)?;
                Ok(lists
                    .into_iter()
                    .enumerate()
                    .map(|(r, predictions)| PredictionRecord {
                        id: s.id.clone(),
                        predictions,
                        k: KMAX,
                        repeat: Some(r),
                    })
                    .collect::<Vec<_>>())
            })?;
            per_sample.into_iter().flatten().collect()
        }
        BaselineMethod::BondClassifier => {
            let (model, excluded) =
                train_bond_classifier(&train_set, cfg.encoder, &b.classifier, &cfg.adam, seed).map_err(runtime)?;
            info!("bond classifier trained; {excluded} atom-only training samples excluded");
            rcq_tensor::checkpoint::save(&model.store, &out.join("bond_classifier.rcq")).map_err(runtime)?;
            par_map(&test, cfg.workers, |_, s| {
                let predictions = model
                    .predict(&s.graph, KMAX)
                    .map_err(runtime)?
                    .into_iter()
                    .map(|(nodes, score)| Prediction { nodes, score })
                    .collect();
                Ok(PredictionRecord {
                    id: s.id.clone(),
                    predictions,
                    k: KMAX,
                    repeat: None,
                })
            })?
        }
    };
    write_predictions(&records, &out.join("predictions.jsonl")).map_err(runtime)?;
    let rep = report(records, &test, &train_set)?;
    write_file(
        &out.join("report.json"),
        &serde_json::to_string_pretty(&rep).expect("report serializes"),
    )?;
    info!("baseline top-1 {:.4} top-4 {:.4}", rep.top1, rep.top4);
    Ok(())
}
