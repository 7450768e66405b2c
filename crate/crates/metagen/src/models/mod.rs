//! The five architectures of the benchmark and their shared plumbing:
//! input normalization, checkpoint serialization, loss assembly, and
//! condition-driven sampling.
//!
//! All models are fully connected ReLU stacks over the flattened 360-real
//! point-cloud system. Marginal VAEs autoencode one component each; the
//! Meta-VAE encodes the whole system plus its condition into one latent,
//! whose meta-decoder emits a latent code per pretrained (frozen) marginal
//! decoder. The simplified variant keeps the parallel block structure but
//! decodes components directly, and the vanilla conditional VAE/GAN operate
//! on the flat concatenation.
//!
//! Reconstruction terms are measured in data units (coordinates in their
//! native 0..100 scale) rather than in network units: marginal VAEs use the
//! summed squared error so their latents autoencode sharply, system-level
//! models use per-component mean squared error so the KL term keeps enough
//! weight to force condition usage at generation time.

pub mod marginal;
pub mod meta;
pub mod vanilla;

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AffineParams, AutodiffError, NodeId, Tape};
use crate::domain::{Condition, PointCloudSystem};
use crate::util::derive_seed;

pub use marginal::{MarginalComponent, MarginalVae, VaeDecoder};
pub use meta::{MarginalDecoderSet, MetaEncoder, MetaVae, Smvae};
pub use vanilla::{Cgan, Cvae};

/// On-disk schema version of checkpoints.
pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

/// Coordinates are divided by this before entering any network.
pub const COORD_SCALE: f64 = 100.0;

/// Log-variance heads are clamped to this interval.
pub const LOGVAR_CLAMP: (f64, f64) = (-10.0, 10.0);

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("condition does not normalize to finite values: {0:?}")]
    BadCondition(Condition),
    #[error("non-finite {what} loss")]
    NonFiniteLoss { what: &'static str },
}

/// The four system-level generative model kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    MetaVae,
    Smvae,
    VanillaVae,
    VanillaGan,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] =
        [ModelKind::MetaVae, ModelKind::Smvae, ModelKind::VanillaVae, ModelKind::VanillaGan];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::MetaVae => "meta-vae",
            ModelKind::Smvae => "smvae",
            ModelKind::VanillaVae => "vanilla-vae",
            ModelKind::VanillaGan => "vanilla-gan",
        }
    }

    pub fn parse(s: &str) -> Option<ModelKind> {
        ModelKind::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Architecture hyperparameters; everything is overridable, the defaults are
/// the desk-scale sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Points per circle in the system representation.
    pub n_points: usize,
    /// Marginal cylinder VAE: hidden width and latent size.
    pub cyl_hidden: usize,
    pub cyl_latent: usize,
    /// Marginal density VAE: hidden width and latent size.
    pub dens_hidden: usize,
    pub dens_latent: usize,
    /// Per-component encoder block width (Meta-VAE family).
    pub block_hidden: usize,
    /// Encoder merge width (Meta-VAE family).
    pub merge_hidden: usize,
    /// Meta latent size.
    pub meta_latent: usize,
    /// Meta-decoder trunk width (two hidden layers).
    pub trunk_hidden: usize,
    /// Width of the simplified variant's parallel decoder blocks.
    pub smvae_dec_hidden: usize,
    /// Vanilla VAE/GAN hidden width.
    pub vanilla_hidden: usize,
    /// Vanilla VAE latent / GAN noise size.
    pub vanilla_latent: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_points: 30,
            cyl_hidden: 128,
            cyl_latent: 8,
            dens_hidden: 64,
            dens_latent: 4,
            block_hidden: 128,
            merge_hidden: 256,
            meta_latent: 16,
            trunk_hidden: 256,
            smvae_dec_hidden: 256,
            vanilla_hidden: 256,
            vanilla_latent: 16,
        }
    }
}

impl ModelConfig {
    /// Flattened length of one cylinder component (two circles).
    pub fn cyl_dim(&self) -> usize {
        4 * self.n_points
    }

    /// Flattened length of one density circle.
    pub fn dens_dim(&self) -> usize {
        2 * self.n_points
    }

    /// Flattened length of a whole system.
    pub fn system_dim(&self) -> usize {
        12 * self.n_points
    }

    /// Flat-index ranges of the four components:
    /// outer cylinder, inner cylinder, density 1, density 2.
    pub fn component_ranges(&self) -> [std::ops::Range<usize>; 4] {
        let n = self.n_points;
        [0..4 * n, 4 * n..8 * n, 8 * n..10 * n, 10 * n..12 * n]
    }

    pub fn component_dims(&self) -> [usize; 4] {
        [self.cyl_dim(), self.cyl_dim(), self.dens_dim(), self.dens_dim()]
    }
}

/// Input normalization, frozen from the training split and stored in every
/// checkpoint. Coordinates divide by [`COORD_SCALE`]; the condition maps to
/// `(x/100, y/100, standardized ln m_cube)` since the mass spans several
/// orders of magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub coord_scale: f64,
    pub logm_mean: f64,
    pub logm_std: f64,
}

impl Normalizer {
    pub fn fit(conds: &[Condition]) -> Self {
        let logs: Vec<f64> = conds.iter().map(|c| c.m_cube.ln()).collect();
        let n = logs.len().max(1) as f64;
        let mean = logs.iter().sum::<f64>() / n;
        let var = logs.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / n;
        Self { coord_scale: COORD_SCALE, logm_mean: mean, logm_std: var.sqrt().max(1e-9) }
    }

    pub fn cond(&self, c: &Condition) -> Result<[f64; 3], ModelError> {
        let v = [
            c.x / self.coord_scale,
            c.y / self.coord_scale,
            (c.m_cube.ln() - self.logm_mean) / self.logm_std,
        ];
        if v.iter().all(|x| x.is_finite()) { Ok(v) } else { Err(ModelError::BadCondition(*c)) }
    }

    pub fn normalize_flat(&self, flat: &mut [f64]) {
        for v in flat.iter_mut() {
            *v /= self.coord_scale;
        }
    }

    pub fn denormalize_flat(&self, flat: &mut [f64]) {
        for v in flat.iter_mut() {
            *v *= self.coord_scale;
        }
    }
}

/// Sum over elements of the squared error, measured in data units
/// (`coord_scale^2 *` normalized values), averaged over the batch.
pub fn recon_sum_se(
    tape: &mut Tape,
    pred: NodeId,
    target: NodeId,
    coord_scale: f64,
) -> Result<NodeId, AutodiffError> {
    let n = tape.shape(pred).cols as f64;
    let m = tape.mse(pred, target)?;
    Ok(tape.scale(m, coord_scale * coord_scale * n))
}

/// Mean over elements of the squared error, in data units, averaged over the
/// batch.
pub fn recon_mean_se(
    tape: &mut Tape,
    pred: NodeId,
    target: NodeId,
    coord_scale: f64,
) -> Result<NodeId, AutodiffError> {
    let m = tape.mse(pred, target)?;
    Ok(tape.scale(m, coord_scale * coord_scale))
}

/// Balanced per-component reconstruction plus KL: the training loss of the
/// Meta-VAE and its simplified variant. Each component contributes its mean
/// squared error in data units with equal weight (a mean over components),
/// so small-amplitude density circles count as much as cylinder borders
/// while the overall reconstruction:KL balance matches a flat objective of
/// the same scale.
pub fn system_loss(
    tape: &mut Tape,
    recons: &[NodeId],
    targets: &[NodeId],
    mu: NodeId,
    logvar: NodeId,
    coord_scale: f64,
) -> Result<NodeId, AutodiffError> {
    debug_assert_eq!(recons.len(), targets.len());
    let mut total: Option<NodeId> = None;
    for (&r, &t) in recons.iter().zip(targets.iter()) {
        let se = recon_mean_se(tape, r, t, coord_scale)?;
        let se = tape.scale(se, 1.0 / recons.len() as f64);
        total = Some(match total {
            Some(acc) => tape.add(acc, se)?,
            None => se,
        });
    }
    let kl = tape.gaussian_kl(mu, logvar)?;
    tape.add(total.expect("at least one component"), kl)
}

/// Records leased layer ids in a fixed order so gradients can be read back
/// aligned with a model's `layers_mut()` listing.
#[derive(Default)]
pub struct Lease {
    pub ids: Vec<(NodeId, NodeId)>,
}

impl Lease {
    pub fn new() -> Self {
        Self { ids: Vec::new() }
    }

    /// Leases a trainable layer, recording it for gradient collection.
    pub fn layer(&mut self, tape: &mut Tape, p: &AffineParams) -> (NodeId, NodeId) {
        let ids = p.lease(tape, true);
        self.ids.push(ids);
        ids
    }

    /// Gradients in lease order, `(w, b)` per layer, flattened.
    pub fn grads<'t>(&self, tape: &'t Tape) -> Vec<&'t [f64]> {
        let mut out = Vec::with_capacity(self.ids.len() * 2);
        for &(w, b) in &self.ids {
            out.push(tape.grad(w).expect("trainable layer"));
            out.push(tape.grad(b).expect("trainable layer"));
        }
        out
    }
}

/// Tensor sizes for Adam state allocation, `(w, b)` per layer.
pub fn tensor_sizes(layers: &[&AffineParams]) -> Vec<usize> {
    layers.iter().flat_map(|l| [l.w.len(), l.b.len()]).collect()
}

/// Flat `&mut` tensor list aligned with [`tensor_sizes`] and [`Lease::grads`].
pub fn tensors_mut(layers: Vec<&mut AffineParams>) -> Vec<&mut Vec<f64>> {
    let mut out = Vec::with_capacity(layers.len() * 2);
    for l in layers {
        let AffineParams { w, b, .. } = l;
        out.push(w);
        out.push(b);
    }
    out
}

/// A named flat tensor inside a checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

/// What a checkpoint holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckpointKind {
    Marginal(MarginalComponent),
    System(ModelKind),
}

impl std::fmt::Display for CheckpointKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CheckpointKind::Marginal(c) => write!(f, "marginal-{c}"),
            CheckpointKind::System(k) => write!(f, "{k}"),
        }
    }
}

/// Self-describing serialized model: weights, architecture, normalization
/// statistics, seed, and the hash of the training config that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub kind: CheckpointKind,
    pub config: ModelConfig,
    pub seed: u64,
    pub config_hash: String,
    pub normalizer: Normalizer,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new(
        kind: CheckpointKind,
        config: ModelConfig,
        seed: u64,
        config_hash: String,
        normalizer: Normalizer,
        tensors: Vec<NamedTensor>,
    ) -> Self {
        Self {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            kind,
            config,
            seed,
            config_hash,
            normalizer,
            tensors,
        }
    }

    /// Canonical bytes for fingerprinting; identical checkpoints hash
    /// identically.
    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("checkpoint serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_bytes())
            .map_err(|source| ModelError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let bytes = std::fs::read(path)
            .map_err(|source| ModelError::Io { path: path.display().to_string(), source })?;
        let ckpt: Checkpoint = serde_json::from_slice(&bytes)
            .map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))?;
        if ckpt.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(ModelError::Checkpoint(format!(
                "schema version {} != {}",
                ckpt.schema_version, CHECKPOINT_SCHEMA_VERSION
            )));
        }
        Ok(ckpt)
    }
}

pub(crate) fn push_layer(tensors: &mut Vec<NamedTensor>, name: &str, p: &AffineParams) {
    tensors.push(NamedTensor {
        name: format!("{name}.w"),
        rows: p.out_dim,
        cols: p.in_dim,
        data: p.w.clone(),
    });
    tensors.push(NamedTensor {
        name: format!("{name}.b"),
        rows: 1,
        cols: p.out_dim,
        data: p.b.clone(),
    });
}

pub(crate) struct TensorMap(BTreeMap<String, NamedTensor>);

impl TensorMap {
    pub fn new(tensors: &[NamedTensor]) -> Self {
        Self(tensors.iter().map(|t| (t.name.clone(), t.clone())).collect())
    }

    pub fn take_layer(&mut self, name: &str) -> Result<AffineParams, ModelError> {
        let w = self
            .0
            .remove(&format!("{name}.w"))
            .ok_or_else(|| ModelError::Checkpoint(format!("missing tensor {name}.w")))?;
        let b = self
            .0
            .remove(&format!("{name}.b"))
            .ok_or_else(|| ModelError::Checkpoint(format!("missing tensor {name}.b")))?;
        if w.data.len() != w.rows * w.cols || b.data.len() != b.cols || b.rows != 1 {
            return Err(ModelError::Checkpoint(format!("tensor {name} has inconsistent shape")));
        }
        Ok(AffineParams { w: w.data, b: b.data, in_dim: w.cols, out_dim: w.rows })
    }
}

/// Any trained system-level generator, restored from a checkpoint.
#[allow(clippy::large_enum_variant)]
pub enum SystemModel {
    MetaVae(MetaVae),
    Smvae(Smvae),
    VanillaVae(Cvae),
    VanillaGan(Cgan),
}

impl SystemModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            SystemModel::MetaVae(_) => ModelKind::MetaVae,
            SystemModel::Smvae(_) => ModelKind::Smvae,
            SystemModel::VanillaVae(_) => ModelKind::VanillaVae,
            SystemModel::VanillaGan(_) => ModelKind::VanillaGan,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, ModelError> {
        match ckpt.kind {
            CheckpointKind::System(ModelKind::MetaVae) => {
                Ok(SystemModel::MetaVae(MetaVae::from_checkpoint(ckpt)?))
            }
            CheckpointKind::System(ModelKind::Smvae) => {
                Ok(SystemModel::Smvae(Smvae::from_checkpoint(ckpt)?))
            }
            CheckpointKind::System(ModelKind::VanillaVae) => {
                Ok(SystemModel::VanillaVae(Cvae::from_checkpoint(ckpt)?))
            }
            CheckpointKind::System(ModelKind::VanillaGan) => {
                Ok(SystemModel::VanillaGan(Cgan::from_checkpoint(ckpt)?))
            }
            CheckpointKind::Marginal(c) => {
                Err(ModelError::Checkpoint(format!("expected a system model, found marginal-{c}")))
            }
        }
    }

    /// Latent/noise dimension drawn at sampling time.
    pub fn latent_dim(&self, cfg: &ModelConfig) -> usize {
        match self {
            SystemModel::MetaVae(_) | SystemModel::Smvae(_) => cfg.meta_latent,
            SystemModel::VanillaVae(_) | SystemModel::VanillaGan(_) => cfg.vanilla_latent,
        }
    }

    /// Decodes `z` rows (one latent per normalized condition row) into
    /// normalized flat systems.
    pub fn decode_flat(&self, z: &[f64], conds: &[f64], batch: usize) -> Vec<f64> {
        match self {
            SystemModel::MetaVae(m) => m.decode_infer(z, conds, batch),
            SystemModel::Smvae(m) => m.decode_infer(z, conds, batch),
            SystemModel::VanillaVae(m) => m.decode_infer(z, conds, batch),
            SystemModel::VanillaGan(m) => m.generate_infer(z, conds, batch),
        }
    }
}

/// Draws `z ~ N(0, I)` and decodes one system per condition. Conditions are
/// normalized with the checkpoint statistics; point clouds come back in data
/// units. Fixed `(seed, cond)` gives a fixed sample.
pub fn sample_systems(
    model: &SystemModel,
    cfg: &ModelConfig,
    normalizer: &Normalizer,
    conds: &[Condition],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<PointCloudSystem>, ModelError> {
    use rand::Rng;
    use rand_distr::StandardNormal;

    let latent = model.latent_dim(cfg);
    let mut out = Vec::with_capacity(conds.len());
    // decode in batches to keep the matmuls dense
    const BATCH: usize = 512;
    for chunk in conds.chunks(BATCH) {
        let mut cond_rows = Vec::with_capacity(chunk.len() * 3);
        for c in chunk {
            cond_rows.extend_from_slice(&normalizer.cond(c)?);
        }
        let z: Vec<f64> = (0..chunk.len() * latent).map(|_| rng.sample(StandardNormal)).collect();
        let mut flat = model.decode_flat(&z, &cond_rows, chunk.len());
        normalizer.denormalize_flat(&mut flat);
        let dim = cfg.system_dim();
        for row in flat.chunks(dim) {
            out.push(
                PointCloudSystem::from_flat(row, cfg.n_points).expect("decoder emits full systems"),
            );
        }
    }
    Ok(out)
}

/// Convenience wrapper over [`sample_systems`] for one condition.
pub fn sample_system(
    model: &SystemModel,
    cfg: &ModelConfig,
    normalizer: &Normalizer,
    cond: &Condition,
    rng: &mut ChaCha8Rng,
) -> Result<PointCloudSystem, ModelError> {
    Ok(sample_systems(model, cfg, normalizer, std::slice::from_ref(cond), rng)?
        .pop()
        .expect("one system per condition"))
}

/// Seeded RNG for a specific role within a run, so independent consumers
/// never share a stream.
pub fn role_rng(seed: u64, role: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, role))
}
