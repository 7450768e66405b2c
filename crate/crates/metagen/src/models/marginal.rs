//! Marginal VAEs: one autoencoder per unitary component (each cylinder, each
//! density circle). Their decoders become the frozen marginal generators of
//! the Meta-VAE after pretraining.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AffineParams, NodeId, Shape, Tape, relu_infer};

use super::{
    Checkpoint, CheckpointKind, Lease, LOGVAR_CLAMP, ModelConfig, ModelError, NamedTensor,
    Normalizer, TensorMap, push_layer, recon_sum_se,
};

/// Which slice of the flattened system a marginal model owns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MarginalComponent {
    OuterCylinder,
    InnerCylinder,
    Density1,
    Density2,
}

impl MarginalComponent {
    pub const ALL: [MarginalComponent; 4] = [
        MarginalComponent::OuterCylinder,
        MarginalComponent::InnerCylinder,
        MarginalComponent::Density1,
        MarginalComponent::Density2,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            MarginalComponent::OuterCylinder => "outer-cyl",
            MarginalComponent::InnerCylinder => "inner-cyl",
            MarginalComponent::Density1 => "density1",
            MarginalComponent::Density2 => "density2",
        }
    }

    pub fn is_cylinder(&self) -> bool {
        matches!(self, MarginalComponent::OuterCylinder | MarginalComponent::InnerCylinder)
    }

    /// Index into the four component slots of a flattened system.
    pub fn index(&self) -> usize {
        match self {
            MarginalComponent::OuterCylinder => 0,
            MarginalComponent::InnerCylinder => 1,
            MarginalComponent::Density1 => 2,
            MarginalComponent::Density2 => 3,
        }
    }

    pub fn range(&self, cfg: &ModelConfig) -> std::ops::Range<usize> {
        cfg.component_ranges()[self.index()].clone()
    }

    pub fn dim(&self, cfg: &ModelConfig) -> usize {
        if self.is_cylinder() { cfg.cyl_dim() } else { cfg.dens_dim() }
    }

    pub fn hidden(&self, cfg: &ModelConfig) -> usize {
        if self.is_cylinder() { cfg.cyl_hidden } else { cfg.dens_hidden }
    }

    pub fn latent(&self, cfg: &ModelConfig) -> usize {
        if self.is_cylinder() { cfg.cyl_latent } else { cfg.dens_latent }
    }
}

impl std::fmt::Display for MarginalComponent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A marginal generator: two hidden ReLU layers and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct VaeDecoder {
    pub l1: AffineParams,
    pub l2: AffineParams,
    pub out: AffineParams,
}

impl VaeDecoder {
    pub fn init(latent: usize, hidden: usize, out: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            l1: AffineParams::init(latent, hidden, rng),
            l2: AffineParams::init(hidden, hidden, rng),
            out: AffineParams::init(hidden, out, rng),
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.l1.in_dim
    }

    /// Tape forward; `lease` is `None` for a frozen decoder (constants on
    /// the tape: gradients flow through, none accumulate).
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        z: NodeId,
        lease: Option<&mut Lease>,
    ) -> Result<NodeId, ModelError> {
        let mut leased = Vec::with_capacity(3);
        match lease {
            Some(l) => {
                leased.push(l.layer(tape, &self.l1));
                leased.push(l.layer(tape, &self.l2));
                leased.push(l.layer(tape, &self.out));
            }
            None => {
                leased.push(self.l1.lease(tape, false));
                leased.push(self.l2.lease(tape, false));
                leased.push(self.out.lease(tape, false));
            }
        }
        let h = tape.affine(leased[0].0, leased[0].1, z)?;
        let h = tape.relu(h);
        let h = tape.affine(leased[1].0, leased[1].1, h)?;
        let h = tape.relu(h);
        Ok(tape.affine(leased[2].0, leased[2].1, h)?)
    }

    pub fn infer(&self, z: &[f64], batch: usize) -> Vec<f64> {
        let mut h = self.l1.forward_infer(z, batch);
        relu_infer(&mut h);
        let mut h = self.l2.forward_infer(&h, batch);
        relu_infer(&mut h);
        self.out.forward_infer(&h, batch)
    }

    pub fn layers(&self) -> Vec<&AffineParams> {
        vec![&self.l1, &self.l2, &self.out]
    }

    pub fn layers_mut(&mut self) -> Vec<&mut AffineParams> {
        vec![&mut self.l1, &mut self.l2, &mut self.out]
    }

    pub(crate) fn push_tensors(&self, tensors: &mut Vec<NamedTensor>, prefix: &str) {
        push_layer(tensors, &format!("{prefix}.l1"), &self.l1);
        push_layer(tensors, &format!("{prefix}.l2"), &self.l2);
        push_layer(tensors, &format!("{prefix}.out"), &self.out);
    }

    pub(crate) fn from_tensors(map: &mut TensorMap, prefix: &str) -> Result<Self, ModelError> {
        Ok(Self {
            l1: map.take_layer(&format!("{prefix}.l1"))?,
            l2: map.take_layer(&format!("{prefix}.l2"))?,
            out: map.take_layer(&format!("{prefix}.out"))?,
        })
    }
}

/// Outputs of one marginal forward pass.
pub struct MarginalForward {
    pub recon: NodeId,
    pub mu: NodeId,
    pub logvar: NodeId,
    pub input: NodeId,
    pub lease: Lease,
}

/// VAE over one component slice: encoder `in -> h -> h -> (mu, logvar)`,
/// decoder `latent -> h -> h -> in`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalVae {
    pub component: MarginalComponent,
    pub enc1: AffineParams,
    pub enc2: AffineParams,
    pub mu: AffineParams,
    pub logvar: AffineParams,
    pub dec: VaeDecoder,
}

impl MarginalVae {
    pub fn init(component: MarginalComponent, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let (dim, hidden, latent) = (component.dim(cfg), component.hidden(cfg), component.latent(cfg));
        Self {
            component,
            enc1: AffineParams::init(dim, hidden, rng),
            enc2: AffineParams::init(hidden, hidden, rng),
            mu: AffineParams::init(hidden, latent, rng),
            logvar: AffineParams::init(hidden, latent, rng),
            dec: VaeDecoder::init(latent, hidden, dim, rng),
        }
    }

    /// Standard VAE forward on a normalized component batch.
    pub fn forward(
        &self,
        tape: &mut Tape,
        x: &[f64],
        batch: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<MarginalForward, ModelError> {
        let mut lease = Lease::new();
        let input = tape.constant(x, Shape::new(batch, self.enc1.in_dim));
        let e1 = lease.layer(tape, &self.enc1);
        let e2 = lease.layer(tape, &self.enc2);
        let muh = lease.layer(tape, &self.mu);
        let lvh = lease.layer(tape, &self.logvar);

        let h = tape.affine(e1.0, e1.1, input)?;
        let h = tape.relu(h);
        let h = tape.affine(e2.0, e2.1, h)?;
        let h = tape.relu(h);
        let mu = tape.affine(muh.0, muh.1, h)?;
        let lv = tape.affine(lvh.0, lvh.1, h)?;
        let lv = tape.clamp(lv, LOGVAR_CLAMP.0, LOGVAR_CLAMP.1);

        let z = tape.reparameterize(mu, lv, rng)?;
        let recon = self.dec.forward_tape(tape, z, Some(&mut lease))?;
        Ok(MarginalForward { recon, mu, logvar: lv, input, lease })
    }

    /// Reconstruction (summed squared error in data units) plus KL.
    pub fn loss(
        &self,
        tape: &mut Tape,
        fwd: &MarginalForward,
        coord_scale: f64,
    ) -> Result<NodeId, ModelError> {
        let se = recon_sum_se(tape, fwd.recon, fwd.input, coord_scale)?;
        let kl = tape.gaussian_kl(fwd.mu, fwd.logvar)?;
        Ok(tape.add(se, kl)?)
    }

    /// Posterior mean, tape-free.
    pub fn encode_mu_infer(&self, x: &[f64], batch: usize) -> Vec<f64> {
        let mut h = self.enc1.forward_infer(x, batch);
        relu_infer(&mut h);
        let mut h = self.enc2.forward_infer(&h, batch);
        relu_infer(&mut h);
        self.mu.forward_infer(&h, batch)
    }

    /// Deterministic reconstruction through the posterior mean.
    pub fn reconstruct_infer(&self, x: &[f64], batch: usize) -> Vec<f64> {
        let z = self.encode_mu_infer(x, batch);
        self.dec.infer(&z, batch)
    }

    pub fn layers(&self) -> Vec<&AffineParams> {
        let mut v = vec![&self.enc1, &self.enc2, &self.mu, &self.logvar];
        v.extend(self.dec.layers());
        v
    }

    pub fn layers_mut(&mut self) -> Vec<&mut AffineParams> {
        let mut v = vec![&mut self.enc1, &mut self.enc2, &mut self.mu, &mut self.logvar];
        v.extend(self.dec.layers_mut());
        v
    }

    pub fn to_checkpoint(
        &self,
        cfg: &ModelConfig,
        seed: u64,
        config_hash: String,
        normalizer: Normalizer,
    ) -> Checkpoint {
        let mut tensors = Vec::new();
        push_layer(&mut tensors, "enc1", &self.enc1);
        push_layer(&mut tensors, "enc2", &self.enc2);
        push_layer(&mut tensors, "mu", &self.mu);
        push_layer(&mut tensors, "logvar", &self.logvar);
        self.dec.push_tensors(&mut tensors, "dec");
        Checkpoint::new(
            CheckpointKind::Marginal(self.component),
            cfg.clone(),
            seed,
            config_hash,
            normalizer,
            tensors,
        )
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, ModelError> {
        let CheckpointKind::Marginal(component) = ckpt.kind else {
            return Err(ModelError::Checkpoint(format!(
                "expected a marginal checkpoint, found {}",
                ckpt.kind
            )));
        };
        let mut map = TensorMap::new(&ckpt.tensors);
        Ok(Self {
            component,
            enc1: map.take_layer("enc1")?,
            enc2: map.take_layer("enc2")?,
            mu: map.take_layer("mu")?,
            logvar: map.take_layer("logvar")?,
            dec: VaeDecoder::from_tensors(&mut map, "dec")?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;

    fn cfg() -> ModelConfig {
        ModelConfig::default()
    }

    #[test]
    fn untrained_loss_is_finite_and_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let vae = MarginalVae::init(MarginalComponent::OuterCylinder, &cfg(), &mut rng);
        let batch = 4;
        let x: Vec<f64> = (0..batch * 120).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut tape = Tape::new();
        let fwd = vae.forward(&mut tape, &x, batch, &mut rng).unwrap();
        let loss = vae.loss(&mut tape, &fwd, super::super::COORD_SCALE).unwrap();
        let v = tape.value_scalar(loss);
        assert!(v.is_finite() && v > 0.0, "loss {v}");
        tape.backward(loss).unwrap();
        assert!(fwd.lease.grads(&tape).iter().all(|g| g.iter().all(|x| x.is_finite())));
    }

    #[test]
    fn decoder_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let vae = MarginalVae::init(MarginalComponent::Density1, &cfg(), &mut rng);
        let z: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        assert_eq!(vae.dec.infer(&z, 2), vae.dec.infer(&z, 2));
    }

    #[test]
    fn checkpoint_roundtrip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let vae = MarginalVae::init(MarginalComponent::InnerCylinder, &cfg(), &mut rng);
        let norm = Normalizer { coord_scale: 100.0, logm_mean: 8.0, logm_std: 2.0 };
        let ckpt = vae.to_checkpoint(&cfg(), 7, "abc".into(), norm);
        let back = MarginalVae::from_checkpoint(&ckpt).unwrap();
        assert_eq!(vae, back);
    }

    #[test]
    fn component_slices_line_up() {
        let c = cfg();
        assert_eq!(MarginalComponent::OuterCylinder.range(&c), 0..120);
        assert_eq!(MarginalComponent::Density2.range(&c), 300..360);
        assert_eq!(MarginalComponent::OuterCylinder.dim(&c), 120);
        assert_eq!(MarginalComponent::Density1.dim(&c), 60);
        assert_eq!(MarginalComponent::Density1.latent(&c), 4);
    }
}
