//! Multi-seed experiment orchestration: pretrain the marginals, train every
//! requested model kind for every seed on a bounded worker pool, and keep a
//! manifest of artifacts with content hashes.
//!
//! The manifest makes runs resumable: a completed run whose checkpoint still
//! matches its recorded hash is skipped; a missing or corrupted checkpoint
//! is retrained. Failed runs (divergence; in practice only the adversarial
//! baseline) are recorded with their error and excluded from downstream
//! aggregation. Each job is internally single-threaded, the manifest has a
//! single writer.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::models::{Checkpoint, MarginalComponent, ModelKind};
use crate::util::fingerprint;

use super::{
    PreparedData, RunLog, TrainConfig, TrainingError, marginal_decoder_set, train_marginal,
    train_model,
};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// What to train and where to put it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub kinds: Vec<ModelKind>,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    /// Hash over everything that determines the artifacts: training config,
    /// model selection, and the identity of the dataset.
    pub fn config_hash(&self, dataset_seed: u64, n_records: usize) -> String {
        #[derive(Serialize)]
        struct Identity<'a> {
            train: &'a TrainConfig,
            kinds: &'a [ModelKind],
            dataset_seed: u64,
            n_records: usize,
        }
        let id = Identity {
            train: &self.train,
            kinds: &self.kinds,
            dataset_seed,
            n_records,
        };
        fingerprint(&serde_json::to_vec(&id).expect("config serializes"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Completed,
    Failed,
}

/// One artifact row of the manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunEntry {
    pub kind: String,
    pub seed: u64,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub checkpoint: String,
    pub checkpoint_hash: String,
    pub runlog: String,
    pub elapsed_secs: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub config_hash: String,
    pub dataset_seed: u64,
    pub runs: BTreeMap<String, RunEntry>,
    pub total_seconds: f64,
    pub workers: usize,
}

impl Manifest {
    fn fresh(config_hash: String, dataset_seed: u64, workers: usize) -> Self {
        Self {
            schema_version: MANIFEST_SCHEMA_VERSION,
            config_hash,
            dataset_seed,
            runs: BTreeMap::new(),
            total_seconds: 0.0,
            workers,
        }
    }

    pub fn load(path: &Path) -> Result<Self, TrainingError> {
        let bytes = std::fs::read(path)
            .map_err(|source| TrainingError::Io { path: path.display().to_string(), source })?;
        serde_json::from_slice(&bytes)
            .map_err(|e| TrainingError::Manifest(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainingError> {
        let tmp = path.with_extension("json.tmp");
        let bytes = serde_json::to_vec_pretty(self).expect("manifest serializes");
        std::fs::write(&tmp, bytes)
            .map_err(|source| TrainingError::Io { path: tmp.display().to_string(), source })?;
        std::fs::rename(&tmp, path)
            .map_err(|source| TrainingError::Io { path: path.display().to_string(), source })
    }

    /// Completed run entries only.
    pub fn completed(&self) -> impl Iterator<Item = (&String, &RunEntry)> {
        self.runs.iter().filter(|(_, e)| e.status == RunStatus::Completed)
    }

    /// Failed run entries (reported, excluded from aggregation).
    pub fn failed(&self) -> impl Iterator<Item = (&String, &RunEntry)> {
        self.runs.iter().filter(|(_, e)| e.status == RunStatus::Failed)
    }

    pub fn checkpoint_hashes(&self) -> Vec<String> {
        self.completed().map(|(_, e)| e.checkpoint_hash.clone()).collect()
    }
}

pub fn marginal_run_id(component: MarginalComponent) -> String {
    format!("marginal-{component}")
}

pub fn system_run_id(kind: ModelKind, seed: u64) -> String {
    format!("{kind}-s{seed}")
}

#[derive(Clone, Copy)]
enum JobSpec {
    Marginal(MarginalComponent),
    System { kind: ModelKind, seed: u64 },
}

impl JobSpec {
    fn id(&self) -> String {
        match self {
            JobSpec::Marginal(c) => marginal_run_id(*c),
            JobSpec::System { kind, seed } => system_run_id(*kind, *seed),
        }
    }

    fn seed(&self, cfg: &TrainConfig) -> u64 {
        match self {
            JobSpec::Marginal(_) => cfg.marginal_seed,
            JobSpec::System { seed, .. } => *seed,
        }
    }
}

struct JobOutcome {
    id: String,
    entry: RunEntry,
}

/// True when a previous manifest entry can stand in for re-running the job:
/// either it completed and the checkpoint bytes still match its hash, or it
/// failed under the identical config (training is deterministic, it would
/// fail identically).
fn reusable(entry: &RunEntry, out_dir: &Path) -> bool {
    match entry.status {
        RunStatus::Failed => true,
        RunStatus::Completed => {
            let path = out_dir.join(&entry.checkpoint);
            match std::fs::read(&path) {
                Ok(bytes) => fingerprint(&bytes) == entry.checkpoint_hash,
                Err(_) => false,
            }
        }
    }
}

fn execute_job(
    spec: JobSpec,
    data: &PreparedData,
    marginals: Option<&crate::models::MarginalDecoderSet>,
    cfg: &TrainConfig,
    config_hash: &str,
    out_dir: &Path,
) -> Result<JobOutcome, TrainingError> {
    let id = spec.id();
    let started = Instant::now();
    let result: Result<(Checkpoint, RunLog), TrainingError> = match spec {
        JobSpec::Marginal(component) => train_marginal(data, component, cfg, config_hash)
            .map(|(model, log)| {
                let ckpt = model.to_checkpoint(
                    &cfg.model,
                    cfg.marginal_seed,
                    config_hash.to_string(),
                    data.normalizer,
                );
                (ckpt, log)
            }),
        JobSpec::System { kind, seed } => {
            train_model(kind, data, marginals, cfg, seed, config_hash)
        }
    };
    let elapsed = started.elapsed().as_secs_f64();

    match result {
        Ok((ckpt, log)) => {
            let ckpt_name = format!("{id}.ckpt.json");
            let log_name = format!("{id}.log.csv");
            ckpt.save(&out_dir.join(&ckpt_name))?;
            log.save(&out_dir.join(&log_name))?;
            let hash = fingerprint(&ckpt.to_bytes());
            Ok(JobOutcome {
                id: id.clone(),
                entry: RunEntry {
                    kind: log.kind,
                    seed: log.seed,
                    status: RunStatus::Completed,
                    error: None,
                    checkpoint: ckpt_name,
                    checkpoint_hash: hash,
                    runlog: log_name,
                    elapsed_secs: elapsed,
                },
            })
        }
        Err(e @ TrainingError::Diverged { .. }) => Ok(JobOutcome {
            id: id.clone(),
            entry: RunEntry {
                kind: match spec {
                    JobSpec::Marginal(c) => format!("marginal-{c}"),
                    JobSpec::System { kind, .. } => kind.as_str().to_string(),
                },
                seed: spec.seed(cfg),
                status: RunStatus::Failed,
                error: Some(e.to_string()),
                checkpoint: String::new(),
                checkpoint_hash: String::new(),
                runlog: String::new(),
                elapsed_secs: elapsed,
            },
        }),
        Err(e) => Err(e),
    }
}

/// Runs all queued jobs on `workers` threads, updating and saving the
/// manifest after each completion (single writer).
#[allow(clippy::too_many_arguments)]
fn run_pool(
    jobs: Vec<JobSpec>,
    workers: usize,
    data: &PreparedData,
    marginals: Option<&crate::models::MarginalDecoderSet>,
    cfg: &TrainConfig,
    config_hash: &str,
    out_dir: &Path,
    manifest: &mut Manifest,
) -> Result<(), TrainingError> {
    if jobs.is_empty() {
        return Ok(());
    }
    let workers = workers.clamp(1, jobs.len());
    let queue = Mutex::new(jobs);
    let (tx, rx) = std::sync::mpsc::channel::<Result<JobOutcome, TrainingError>>();

    std::thread::scope(|scope| -> Result<(), TrainingError> {
        for _ in 0..workers {
            let tx = tx.clone();
            let queue = &queue;
            scope.spawn(move || {
                loop {
                    let spec = { queue.lock().expect("queue lock").pop() };
                    let Some(spec) = spec else { break };
                    let outcome = execute_job(spec, data, marginals, cfg, config_hash, out_dir);
                    if tx.send(outcome).is_err() {
                        break;
                    }
                }
            });
        }
        drop(tx);

        let mut first_error = None;
        for outcome in rx {
            match outcome {
                Ok(JobOutcome { id, entry }) => {
                    manifest.runs.insert(id, entry);
                    manifest.save(&out_dir.join(MANIFEST_FILE))?;
                }
                Err(e) => {
                    // remember the error but drain remaining results
                    if first_error.is_none() {
                        first_error = Some(e);
                    }
                }
            }
        }
        match first_error {
            Some(e) => Err(e),
            None => Ok(()),
        }
    })
}

/// Pretrains marginals and trains `kinds x seeds` system models, resuming
/// from any hash-verified artifacts already present in `cfg.out_dir`.
pub fn run_experiment(
    data: &PreparedData,
    cfg: &ExperimentConfig,
    workers: usize,
) -> Result<Manifest, TrainingError> {
    cfg.train.validate()?;
    let started = Instant::now();
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|source| TrainingError::Io { path: cfg.out_dir.display().to_string(), source })?;
    let config_hash = cfg.config_hash(data.dataset.header.seed, data.n());
    let manifest_path = cfg.out_dir.join(MANIFEST_FILE);

    let mut manifest = match Manifest::load(&manifest_path) {
        Ok(old) if old.config_hash == config_hash => old,
        _ => Manifest::fresh(config_hash.clone(), data.dataset.header.seed, workers),
    };
    manifest.workers = workers;

    // drop entries that no longer verify (deleted or corrupted checkpoints)
    let stale: Vec<String> = manifest
        .runs
        .iter()
        .filter(|(_, e)| !reusable(e, &cfg.out_dir))
        .map(|(id, _)| id.clone())
        .collect();
    for id in stale {
        manifest.runs.remove(&id);
    }

    // phase 1: marginal pretraining
    let marginal_jobs: Vec<JobSpec> = MarginalComponent::ALL
        .into_iter()
        .filter(|c| !manifest.runs.contains_key(&marginal_run_id(*c)))
        .map(JobSpec::Marginal)
        .collect();
    run_pool(
        marginal_jobs,
        workers,
        data,
        None,
        &cfg.train,
        &config_hash,
        &cfg.out_dir,
        &mut manifest,
    )?;

    // phase 2: system models, with the frozen marginal decoders loaded once
    let marginal_ckpts: Vec<Checkpoint> = MarginalComponent::ALL
        .iter()
        .map(|c| {
            let entry = manifest
                .runs
                .get(&marginal_run_id(*c))
                .ok_or(TrainingError::MissingMarginals)?;
            if entry.status != RunStatus::Completed {
                return Err(TrainingError::MissingMarginals);
            }
            Checkpoint::load(&cfg.out_dir.join(&entry.checkpoint)).map_err(Into::into)
        })
        .collect::<Result<_, TrainingError>>()?;
    let marginals = marginal_decoder_set(&marginal_ckpts)?;

    let system_jobs: Vec<JobSpec> = cfg
        .kinds
        .iter()
        .flat_map(|&kind| cfg.train.seeds.iter().map(move |&seed| JobSpec::System { kind, seed }))
        .filter(|spec| !manifest.runs.contains_key(&spec.id()))
        .collect();
    run_pool(
        system_jobs,
        workers,
        data,
        Some(&marginals),
        &cfg.train,
        &config_hash,
        &cfg.out_dir,
        &mut manifest,
    )?;

    manifest.total_seconds = started.elapsed().as_secs_f64();
    manifest.save(&manifest_path)?;
    Ok(manifest)
}
