//! Deterministic training: data preparation, per-model training loops with
//! per-epoch CSV logs, and the multi-seed experiment runner (see
//! [`experiment`]).
//!
//! Every source of randomness derives from `(seed, role)` via
//! [`role_rng`](crate::models::role_rng), so a `(dataset seed, model seed,
//! config)` triple reproduces checkpoints bit for bit. The train/validation
//! split is a pure function of the dataset seed and identical for every
//! model kind; batch order is a pure function of `(seed, epoch)`.

pub mod experiment;

use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tape;
use crate::autodiff::adam::{AdamConfig, AdamState};
use crate::datagen::Dataset;
use crate::domain::{Circle, estimate_radius, render_system_with_points};
use crate::models::{
    Cgan, Checkpoint, Cvae, MarginalComponent, MarginalDecoderSet, MarginalVae, MetaVae,
    ModelConfig, ModelError, ModelKind, Normalizer, Smvae, meta::SystemForward, role_rng,
    system_loss, tensor_sizes, tensors_mut,
};
use crate::util::derive_seed;

pub use experiment::{ExperimentConfig, Manifest, RunEntry, RunStatus, run_experiment};

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{kind} (seed {seed}) diverged at epoch {epoch}: loss {loss}")]
    Diverged { kind: String, seed: u64, epoch: usize, loss: f64 },
    #[error("the meta-vae needs the four marginal checkpoints before training")]
    MissingMarginals,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("dataset error: {0}")]
    Dataset(String),
}

/// Budget and optimizer knobs for one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seeds: Vec<u64>,
    /// Pretraining budget for the marginal VAEs.
    pub marginal_epochs: usize,
    /// The marginals are shared across model seeds; one seed trains them.
    pub marginal_seed: u64,
    pub optimizer: AdamConfig,
    pub gan_optimizer: AdamConfig,
    pub model: ModelConfig,
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 128,
            seeds: vec![0, 1, 2, 3, 4],
            marginal_epochs: 200,
            marginal_seed: 0,
            optimizer: AdamConfig::default(),
            gan_optimizer: AdamConfig::for_gan(),
            model: ModelConfig::default(),
            val_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainingError> {
        if self.epochs == 0 || self.marginal_epochs == 0 {
            return Err(TrainingError::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainingError::InvalidConfig("batch size must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(TrainingError::InvalidConfig("at least one seed is required".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(TrainingError::InvalidConfig("seeds must be distinct".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(TrainingError::InvalidConfig("val fraction must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// One epoch of a run log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

/// Per-run training curve plus identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub kind: String,
    pub seed: u64,
    pub config_hash: String,
    pub entries: Vec<EpochLog>,
}

impl RunLog {
    fn new(kind: String, seed: u64, config_hash: String) -> Self {
        Self { kind, seed, config_hash, entries: Vec::new() }
    }

    pub fn total_seconds(&self) -> f64 {
        self.entries.iter().map(|e| e.seconds).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,seconds\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{},{:.3}\n",
                e.epoch, e.train_loss, e.val_loss, e.seconds
            ));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainingError> {
        std::fs::write(path, self.to_csv())
            .map_err(|source| TrainingError::Io { path: path.display().to_string(), source })
    }
}

/// Dataset rendered to normalized training tensors with a frozen split.
pub struct PreparedData {
    pub systems: Vec<f64>, // n x system_dim, normalized
    pub conds: Vec<f64>,   // n x 3, normalized
    pub dataset: Dataset,
    pub normalizer: Normalizer,
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
    pub model: ModelConfig,
}

impl PreparedData {
    pub fn system_dim(&self) -> usize {
        self.model.system_dim()
    }

    pub fn n(&self) -> usize {
        self.dataset.records.len()
    }

    fn gather_rows(&self, src: &[f64], width: usize, idx: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(idx.len() * width);
        for &i in idx {
            out.extend_from_slice(&src[i * width..(i + 1) * width]);
        }
        out
    }

    pub fn gather_systems(&self, idx: &[usize]) -> Vec<f64> {
        self.gather_rows(&self.systems, self.system_dim(), idx)
    }

    pub fn gather_conds(&self, idx: &[usize]) -> Vec<f64> {
        self.gather_rows(&self.conds, 3, idx)
    }

    /// Gathers the four component sub-batches of the given rows.
    pub fn gather_components(&self, idx: &[usize]) -> [Vec<f64>; 4] {
        let dim = self.system_dim();
        let ranges = self.model.component_ranges();
        let mut out: [Vec<f64>; 4] =
            ranges.clone().map(|r| Vec::with_capacity(idx.len() * (r.end - r.start)));
        for &i in idx {
            let row = &self.systems[i * dim..(i + 1) * dim];
            for (k, r) in ranges.iter().enumerate() {
                out[k].extend_from_slice(&row[r.clone()]);
            }
        }
        out
    }

    /// Gathers one component's sub-batch.
    pub fn gather_component(&self, component: MarginalComponent, idx: &[usize]) -> Vec<f64> {
        let dim = self.system_dim();
        let range = component.range(&self.model);
        let mut out = Vec::with_capacity(idx.len() * (range.end - range.start));
        for &i in idx {
            out.extend_from_slice(&self.systems[i * dim + range.start..i * dim + range.end]);
        }
        out
    }
}

/// Renders and normalizes the dataset and freezes the train/validation
/// split (a pure function of the dataset seed).
pub fn prepare(
    dataset: Dataset,
    model: &ModelConfig,
    val_fraction: f64,
) -> Result<PreparedData, TrainingError> {
    if dataset.records.is_empty() {
        return Err(TrainingError::Dataset("dataset has no records".into()));
    }
    if dataset.header.n_points != model.n_points {
        return Err(TrainingError::Dataset(format!(
            "dataset renders {} points per circle, models expect {}",
            dataset.header.n_points, model.n_points
        )));
    }
    let n = dataset.records.len();
    let dim = model.system_dim();
    let mut systems = Vec::with_capacity(n * dim);
    for r in &dataset.records {
        let pc = render_system_with_points(&r.params, model.n_points)
            .map_err(|e| TrainingError::Dataset(format!("record does not render: {e}")))?;
        systems.extend_from_slice(&pc.to_flat());
    }

    // split before fitting statistics so they come from the train side only
    let mut order: Vec<usize> = (0..n).collect();
    use rand::seq::SliceRandom;
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(dataset.header.seed, "split")));
    let n_val = ((n as f64) * val_fraction).floor() as usize;
    let (val_idx, train_idx) = order.split_at(n_val);
    let (mut train_idx, mut val_idx) = (train_idx.to_vec(), val_idx.to_vec());
    train_idx.sort_unstable();
    val_idx.sort_unstable();

    let train_conds: Vec<_> = train_idx.iter().map(|&i| dataset.records[i].cond).collect();
    let normalizer = Normalizer::fit(&train_conds);
    normalizer.normalize_flat(&mut systems);

    let mut conds = Vec::with_capacity(n * 3);
    for r in &dataset.records {
        conds.extend_from_slice(&normalizer.cond(&r.cond)?);
    }

    Ok(PreparedData {
        systems,
        conds,
        dataset,
        normalizer,
        train_idx,
        val_idx,
        model: model.clone(),
    })
}

fn epoch_batches(
    train_idx: &[usize],
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Vec<Vec<usize>> {
    use rand::seq::SliceRandom;
    let mut order = train_idx.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("batch:{epoch}"))));
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}

fn check_finite(loss: f64, kind: &str, seed: u64, epoch: usize) -> Result<(), TrainingError> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(TrainingError::Diverged { kind: kind.to_string(), seed, epoch, loss })
    }
}

/// Non-finite activations trip the op-level guards before any loss value
/// exists; classify those aborts as divergence at the offending epoch too.
fn promote_nonfinite(
    e: TrainingError,
    kind: &str,
    seed: u64,
    epoch: usize,
) -> TrainingError {
    match &e {
        TrainingError::Model(ModelError::Autodiff(crate::autodiff::AutodiffError::NonFinite(
            _,
        ))) => TrainingError::Diverged { kind: kind.to_string(), seed, epoch, loss: f64::NAN },
        _ => e,
    }
}

/// Closed-form KL of a diagonal Gaussian batch against the unit prior,
/// summed over dimensions and averaged over the batch (inference-side
/// mirror of the tape op).
fn kl_value(mu: &[f64], logvar: &[f64], batch: usize) -> f64 {
    mu.iter()
        .zip(logvar.iter())
        .map(|(m, lv)| 0.5 * (m * m + lv.exp() - 1.0 - lv))
        .sum::<f64>()
        / batch as f64
}

fn sum_se_data_units(a: &[f64], b: &[f64], batch: usize, coord_scale: f64) -> f64 {
    let se: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
    se * coord_scale * coord_scale / batch as f64
}

/// Trains one marginal VAE on its component slice.
pub fn train_marginal(
    data: &PreparedData,
    component: MarginalComponent,
    cfg: &TrainConfig,
    config_hash: &str,
) -> Result<(MarginalVae, RunLog), TrainingError> {
    cfg.validate()?;
    let seed = cfg.marginal_seed;
    let kind = format!("marginal-{component}");
    let mut model =
        MarginalVae::init(component, &cfg.model, &mut role_rng(seed, &format!("init:{kind}")));
    let mut adam = AdamState::new(&tensor_sizes(&model.layers()));
    let mut log = RunLog::new(kind.clone(), seed, config_hash.to_string());
    let scale = data.normalizer.coord_scale;

    let val_x = data.gather_component(component, &data.val_idx);
    let val_batch = data.val_idx.len();

    for epoch in 0..cfg.marginal_epochs {
        let started = Instant::now();
        let mut noise = role_rng(seed, &format!("noise:{kind}:{epoch}"));
        let mut train_loss = 0.0;
        let batches = epoch_batches(&data.train_idx, cfg.batch_size, seed, epoch);
        let n_batches = batches.len();
        for idx in batches {
            let x = data.gather_component(component, &idx);
            let mut tape = Tape::new();
            let fwd = model
                .forward(&mut tape, &x, idx.len(), &mut noise)
                .map_err(|e| promote_nonfinite(e.into(), &kind, seed, epoch))?;
            let loss = model
                .loss(&mut tape, &fwd, scale)
                .map_err(|e| promote_nonfinite(e.into(), &kind, seed, epoch))?;
            let v = tape.value_scalar(loss);
            check_finite(v, &kind, seed, epoch)?;
            train_loss += v;
            tape.backward(loss).map_err(ModelError::from)?;
            let grads = fwd.lease.grads(&tape);
            adam.step(&cfg.optimizer, &mut tensors_mut(model.layers_mut()), &grads);
        }

        // deterministic validation through the posterior mean
        let recon = model.reconstruct_infer(&val_x, val_batch);
        let (mu, lv) = marginal_posterior_infer(&model, &val_x, val_batch);
        let val_loss =
            sum_se_data_units(&recon, &val_x, val_batch, scale) + kl_value(&mu, &lv, val_batch);
        check_finite(val_loss, &kind, seed, epoch)?;

        log.entries.push(EpochLog {
            epoch,
            train_loss: train_loss / n_batches as f64,
            val_loss,
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok((model, log))
}

fn marginal_posterior_infer(
    model: &MarginalVae,
    x: &[f64],
    batch: usize,
) -> (Vec<f64>, Vec<f64>) {
    use crate::autodiff::relu_infer;
    use crate::models::LOGVAR_CLAMP;
    let mut h = model.enc1.forward_infer(x, batch);
    relu_infer(&mut h);
    let mut h = model.enc2.forward_infer(&h, batch);
    relu_infer(&mut h);
    let mu = model.mu.forward_infer(&h, batch);
    let mut lv = model.logvar.forward_infer(&h, batch);
    for v in lv.iter_mut() {
        *v = v.clamp(LOGVAR_CLAMP.0, LOGVAR_CLAMP.1);
    }
    (mu, lv)
}

/// Trains all four marginal VAEs and returns their checkpoints in component
/// order (outer cylinder, inner cylinder, density 1, density 2).
pub fn train_marginals(
    data: &PreparedData,
    cfg: &TrainConfig,
    config_hash: &str,
) -> Result<Vec<(Checkpoint, RunLog)>, TrainingError> {
    MarginalComponent::ALL
        .into_iter()
        .map(|component| {
            let (model, log) = train_marginal(data, component, cfg, config_hash)?;
            let ckpt = model.to_checkpoint(
                &cfg.model,
                cfg.marginal_seed,
                config_hash.to_string(),
                data.normalizer,
            );
            Ok((ckpt, log))
        })
        .collect()
}

/// Mean absolute radius reconstruction error of a marginal VAE on the
/// validation split, in data units. Cylinders average over both border
/// circles.
pub fn marginal_radius_error(model: &MarginalVae, data: &PreparedData) -> f64 {
    let component = model.component;
    let x = data.gather_component(component, &data.val_idx);
    let batch = data.val_idx.len();
    let mut recon = model.reconstruct_infer(&x, batch);
    data.normalizer.denormalize_flat(&mut recon);

    let n = data.model.n_points;
    let dim = component.dim(&data.model);
    let circle = |row: &[f64], which: usize| Circle {
        points: (0..n)
            .map(|k| [row[which * 2 * n + 2 * k], row[which * 2 * n + 2 * k + 1]])
            .collect(),
    };
    let mut total = 0.0;
    let mut count = 0usize;
    for (b, &i) in data.val_idx.iter().enumerate() {
        let row = &recon[b * dim..(b + 1) * dim];
        let p = &data.dataset.records[i].params;
        let truths: &[f64] = match component {
            MarginalComponent::OuterCylinder => &[p.r_ext1, p.r_int1],
            MarginalComponent::InnerCylinder => &[p.r_ext2, p.r_int2],
            MarginalComponent::Density1 => &[p.d1],
            MarginalComponent::Density2 => &[p.d2],
        };
        for (which, truth) in truths.iter().enumerate() {
            total += (estimate_radius(&circle(row, which)) - truth).abs();
            count += 1;
        }
    }
    total / count as f64
}

/// System-level model under training.
#[allow(clippy::large_enum_variant)]
enum SystemNet {
    Meta(MetaVae),
    Smvae(Smvae),
    Cvae(Cvae),
    Cgan(Cgan),
}

/// Trains one system-level model for one seed. The meta-vae requires the
/// pretrained marginal decoder set.
pub fn train_model(
    kind: ModelKind,
    data: &PreparedData,
    marginals: Option<&MarginalDecoderSet>,
    cfg: &TrainConfig,
    seed: u64,
    config_hash: &str,
) -> Result<(Checkpoint, RunLog), TrainingError> {
    cfg.validate()?;
    if kind == ModelKind::MetaVae && marginals.is_none() {
        return Err(TrainingError::MissingMarginals);
    }
    let kind_str = kind.as_str().to_string();
    let mut log = RunLog::new(kind_str.clone(), seed, config_hash.to_string());
    let mut init_rng = role_rng(seed, &format!("init:{kind_str}"));
    let scale = data.normalizer.coord_scale;

    let mut net = match kind {
        ModelKind::MetaVae => {
            SystemNet::Meta(MetaVae::init(&cfg.model, marginals.unwrap().clone(), &mut init_rng))
        }
        ModelKind::Smvae => SystemNet::Smvae(Smvae::init(&cfg.model, &mut init_rng)),
        ModelKind::VanillaVae => SystemNet::Cvae(Cvae::init(&cfg.model, &mut init_rng)),
        ModelKind::VanillaGan => SystemNet::Cgan(Cgan::init(&cfg.model, &mut init_rng)),
    };

    let mut adam = match &net {
        SystemNet::Meta(m) => AdamState::new(&tensor_sizes(&m.layers())),
        SystemNet::Smvae(m) => AdamState::new(&tensor_sizes(&m.layers())),
        SystemNet::Cvae(m) => AdamState::new(&tensor_sizes(&m.layers())),
        SystemNet::Cgan(m) => AdamState::new(&tensor_sizes(&m.disc_layers())),
    };
    // second optimizer only for the GAN generator
    let mut gen_adam = match &net {
        SystemNet::Cgan(m) => Some(AdamState::new(&tensor_sizes(&m.gen_layers()))),
        _ => None,
    };

    let val_comps = data.gather_components(&data.val_idx);
    let val_sys = data.gather_systems(&data.val_idx);
    let val_cond = data.gather_conds(&data.val_idx);
    let val_batch = data.val_idx.len();

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let mut noise = role_rng(seed, &format!("noise:{kind_str}:{epoch}"));
        let mut train_loss = 0.0;
        let batches = epoch_batches(&data.train_idx, cfg.batch_size, seed, epoch);
        let n_batches = batches.len();

        for idx in batches {
            let batch = idx.len();
            let cond = data.gather_conds(&idx);
            let v = (|| match &mut net {
                SystemNet::Meta(model) => {
                    let comps = data.gather_components(&idx);
                    let refs = [&comps[0][..], &comps[1][..], &comps[2][..], &comps[3][..]];
                    let mut tape = Tape::new();
                    let fwd = model.forward(&mut tape, refs, &cond, batch, &mut noise)?;
                    step_vae(&mut tape, &fwd, cfg, &mut adam, model.layers_mut(), scale)
                }
                SystemNet::Smvae(model) => {
                    let comps = data.gather_components(&idx);
                    let refs = [&comps[0][..], &comps[1][..], &comps[2][..], &comps[3][..]];
                    let mut tape = Tape::new();
                    let fwd = model.forward(&mut tape, refs, &cond, batch, &mut noise)?;
                    step_vae(&mut tape, &fwd, cfg, &mut adam, model.layers_mut(), scale)
                }
                SystemNet::Cvae(model) => {
                    let sys = data.gather_systems(&idx);
                    let mut tape = Tape::new();
                    let fwd = model.forward(&mut tape, &sys, &cond, batch, &mut noise)?;
                    let loss = model.loss(&mut tape, &fwd, scale)?;
                    let v = tape.value_scalar(loss);
                    if v.is_finite() {
                        tape.backward(loss).map_err(ModelError::from)?;
                        let grads = fwd.lease.grads(&tape);
                        adam.step(&cfg.optimizer, &mut tensors_mut(model.layers_mut()), &grads);
                    }
                    Ok(v)
                }
                SystemNet::Cgan(model) => {
                    let sys = data.gather_systems(&idx);
                    let (g_loss, d_loss) = model.step(
                        &sys,
                        &cond,
                        batch,
                        &mut noise,
                        &mut adam,
                        gen_adam.as_mut().expect("gan has a generator optimizer"),
                        &cfg.gan_optimizer,
                    )?;
                    Ok(g_loss + d_loss)
                }
            })()
            .map_err(|e| promote_nonfinite(e, &kind_str, seed, epoch))?;
            check_finite(v, &kind_str, seed, epoch)?;
            train_loss += v;
        }

        let val_loss = match &net {
            SystemNet::Meta(model) => {
                let (mu, lv) = model.enc.infer(
                    [&val_comps[0], &val_comps[1], &val_comps[2], &val_comps[3]],
                    &val_cond,
                    val_batch,
                );
                let recon = model.decode_infer(&mu, &val_cond, val_batch);
                vae_val_loss(&recon, &val_sys, &mu, &lv, val_batch, data, scale)
            }
            SystemNet::Smvae(model) => {
                let (mu, lv) = model.enc.infer(
                    [&val_comps[0], &val_comps[1], &val_comps[2], &val_comps[3]],
                    &val_cond,
                    val_batch,
                );
                let recon = model.decode_infer(&mu, &val_cond, val_batch);
                vae_val_loss(&recon, &val_sys, &mu, &lv, val_batch, data, scale)
            }
            SystemNet::Cvae(model) => {
                let (mu, lv) = model.encode_infer(&val_sys, &val_cond, val_batch);
                let recon = model.decode_infer(&mu, &val_cond, val_batch);
                let n = (recon.len() / val_batch) as f64;
                sum_se_data_units(&recon, &val_sys, val_batch, scale) / n
                    + kl_value(&mu, &lv, val_batch)
            }
            SystemNet::Cgan(model) => {
                let mut rng = role_rng(seed, &format!("val:{kind_str}:{epoch}"));
                model.disc_loss_infer(&val_sys, &val_cond, val_batch, &mut rng)?
            }
        };
        check_finite(val_loss, &kind_str, seed, epoch)?;

        log.entries.push(EpochLog {
            epoch,
            train_loss: train_loss / n_batches as f64,
            val_loss,
            seconds: started.elapsed().as_secs_f64(),
        });
    }

    let ckpt = match net {
        SystemNet::Meta(m) => {
            m.to_checkpoint(&cfg.model, seed, config_hash.to_string(), data.normalizer)
        }
        SystemNet::Smvae(m) => {
            m.to_checkpoint(&cfg.model, seed, config_hash.to_string(), data.normalizer)
        }
        SystemNet::Cvae(m) => {
            m.to_checkpoint(&cfg.model, seed, config_hash.to_string(), data.normalizer)
        }
        SystemNet::Cgan(m) => {
            m.to_checkpoint(&cfg.model, seed, config_hash.to_string(), data.normalizer)
        }
    };
    Ok((ckpt, log))
}

fn step_vae(
    tape: &mut Tape,
    fwd: &SystemForward,
    cfg: &TrainConfig,
    adam: &mut AdamState,
    layers: Vec<&mut crate::autodiff::AffineParams>,
    scale: f64,
) -> Result<f64, TrainingError> {
    let loss = system_loss(tape, &fwd.recons, &fwd.inputs, fwd.mu, fwd.logvar, scale)
        .map_err(ModelError::from)?;
    let v = tape.value_scalar(loss);
    if v.is_finite() {
        tape.backward(loss).map_err(ModelError::from)?;
        let grads = fwd.lease.grads(tape);
        adam.step(&cfg.optimizer, &mut tensors_mut(layers), &grads);
    }
    Ok(v)
}

/// Component-wise mean-SE in data units plus KL, mirroring the training
/// objective on the deterministic (posterior-mean) path.
fn vae_val_loss(
    recon: &[f64],
    target: &[f64],
    mu: &[f64],
    logvar: &[f64],
    batch: usize,
    data: &PreparedData,
    scale: f64,
) -> f64 {
    let dim = data.system_dim();
    let ranges = data.model.component_ranges();
    let n_comps = ranges.len() as f64;
    let mut recon_total = 0.0;
    for range in ranges {
        let width = range.end - range.start;
        let mut se = 0.0;
        for b in 0..batch {
            let r = &recon[b * dim + range.start..b * dim + range.end];
            let t = &target[b * dim + range.start..b * dim + range.end];
            se += r.iter().zip(t.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        }
        recon_total += se * scale * scale / (batch * width) as f64 / n_comps;
    }
    recon_total + kl_value(mu, logvar, batch)
}

/// Extracts the frozen decoder set from the four marginal checkpoints.
pub fn marginal_decoder_set(
    checkpoints: &[Checkpoint],
) -> Result<MarginalDecoderSet, TrainingError> {
    let mut decoders: [Option<crate::models::VaeDecoder>; 4] = [None, None, None, None];
    for ckpt in checkpoints {
        let vae = MarginalVae::from_checkpoint(ckpt)?;
        decoders[vae.component.index()] = Some(vae.dec);
    }
    let [outer, inner, d1, d2] = decoders;
    match (outer, inner, d1, d2) {
        (Some(outer), Some(inner), Some(d1), Some(d2)) => {
            Ok(MarginalDecoderSet { outer, inner, d1, d2 })
        }
        _ => Err(TrainingError::MissingMarginals),
    }
}
