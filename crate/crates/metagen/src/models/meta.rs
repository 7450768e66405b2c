//! The Meta-VAE and its simplified variant.
//!
//! Both share the same block-structured encoder: one ReLU block per system
//! component (outer cylinder, inner cylinder, each density) plus one for the
//! condition, merged by concatenation into the posterior heads. They differ
//! in the decoder: the Meta-VAE's meta-decoder emits one latent code per
//! pretrained marginal generator and routes it through those frozen
//! decoders, while the simplified variant decodes each component directly
//! with parallel blocks.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{AffineParams, NodeId, Shape, Tape, relu_infer};

use super::{
    Checkpoint, CheckpointKind, LOGVAR_CLAMP, Lease, ModelConfig, ModelError, ModelKind,
    NamedTensor, Normalizer, TensorMap, VaeDecoder, push_layer,
};

const COMPONENT_KEYS: [&str; 4] = ["outer", "inner", "d1", "d2"];

/// Block-structured conditional encoder shared by both models.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaEncoder {
    pub blocks: [AffineParams; 4],
    pub cond_block: AffineParams,
    pub merge: AffineParams,
    pub mu: AffineParams,
    pub logvar: AffineParams,
}

impl MetaEncoder {
    pub fn init(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let dims = cfg.component_dims();
        let blocks = [
            AffineParams::init(dims[0], cfg.block_hidden, rng),
            AffineParams::init(dims[1], cfg.block_hidden, rng),
            AffineParams::init(dims[2], cfg.block_hidden, rng),
            AffineParams::init(dims[3], cfg.block_hidden, rng),
        ];
        Self {
            blocks,
            cond_block: AffineParams::init(3, cfg.block_hidden, rng),
            merge: AffineParams::init(5 * cfg.block_hidden, cfg.merge_hidden, rng),
            mu: AffineParams::init(cfg.merge_hidden, cfg.meta_latent, rng),
            logvar: AffineParams::init(cfg.merge_hidden, cfg.meta_latent, rng),
        }
    }

    /// Tape forward from component/condition constants to `(mu, logvar)`.
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        comps: [NodeId; 4],
        cond: NodeId,
        lease: &mut Lease,
    ) -> Result<(NodeId, NodeId), ModelError> {
        let mut encoded = Vec::with_capacity(5);
        for (block, &x) in self.blocks.iter().zip(comps.iter()) {
            let l = lease.layer(tape, block);
            let h = tape.affine(l.0, l.1, x)?;
            encoded.push(tape.relu(h));
        }
        let l = lease.layer(tape, &self.cond_block);
        let h = tape.affine(l.0, l.1, cond)?;
        encoded.push(tape.relu(h));

        let merged = tape.concat(&encoded)?;
        let l = lease.layer(tape, &self.merge);
        let h = tape.affine(l.0, l.1, merged)?;
        let h = tape.relu(h);
        let l = lease.layer(tape, &self.mu);
        let mu = tape.affine(l.0, l.1, h)?;
        let l = lease.layer(tape, &self.logvar);
        let lv = tape.affine(l.0, l.1, h)?;
        Ok((mu, tape.clamp(lv, LOGVAR_CLAMP.0, LOGVAR_CLAMP.1)))
    }

    /// Tape-free `(mu, logvar)` for validation passes.
    pub fn infer(&self, comps: [&[f64]; 4], cond: &[f64], batch: usize) -> (Vec<f64>, Vec<f64>) {
        let mut encoded: Vec<Vec<f64>> = Vec::with_capacity(5);
        for (block, x) in self.blocks.iter().zip(comps.iter()) {
            let mut h = block.forward_infer(x, batch);
            relu_infer(&mut h);
            encoded.push(h);
        }
        let mut h = self.cond_block.forward_infer(cond, batch);
        relu_infer(&mut h);
        encoded.push(h);
        let widths: Vec<usize> = encoded.iter().map(|e| e.len() / batch).collect();
        let parts: Vec<&[f64]> = encoded.iter().map(|e| e.as_slice()).collect();
        let merged = concat_rows(&parts, &widths, batch);
        let mut h = self.merge.forward_infer(&merged, batch);
        relu_infer(&mut h);
        let mu = self.mu.forward_infer(&h, batch);
        let mut lv = self.logvar.forward_infer(&h, batch);
        for v in lv.iter_mut() {
            *v = v.clamp(LOGVAR_CLAMP.0, LOGVAR_CLAMP.1);
        }
        (mu, lv)
    }

    pub fn layers(&self) -> Vec<&AffineParams> {
        let mut v: Vec<&AffineParams> = self.blocks.iter().collect();
        v.push(&self.cond_block);
        v.push(&self.merge);
        v.push(&self.mu);
        v.push(&self.logvar);
        v
    }

    pub fn layers_mut(&mut self) -> Vec<&mut AffineParams> {
        let mut v: Vec<&mut AffineParams> = self.blocks.iter_mut().collect();
        v.push(&mut self.cond_block);
        v.push(&mut self.merge);
        v.push(&mut self.mu);
        v.push(&mut self.logvar);
        v
    }

    fn push_tensors(&self, tensors: &mut Vec<NamedTensor>) {
        for (key, block) in COMPONENT_KEYS.iter().zip(self.blocks.iter()) {
            push_layer(tensors, &format!("enc.block_{key}"), block);
        }
        push_layer(tensors, "enc.cond", &self.cond_block);
        push_layer(tensors, "enc.merge", &self.merge);
        push_layer(tensors, "enc.mu", &self.mu);
        push_layer(tensors, "enc.logvar", &self.logvar);
    }

    fn from_tensors(map: &mut TensorMap) -> Result<Self, ModelError> {
        Ok(Self {
            blocks: [
                map.take_layer("enc.block_outer")?,
                map.take_layer("enc.block_inner")?,
                map.take_layer("enc.block_d1")?,
                map.take_layer("enc.block_d2")?,
            ],
            cond_block: map.take_layer("enc.cond")?,
            merge: map.take_layer("enc.merge")?,
            mu: map.take_layer("enc.mu")?,
            logvar: map.take_layer("enc.logvar")?,
        })
    }
}

/// The four pretrained marginal decoders, frozen inside a Meta-VAE.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalDecoderSet {
    pub outer: VaeDecoder,
    pub inner: VaeDecoder,
    pub d1: VaeDecoder,
    pub d2: VaeDecoder,
}

impl MarginalDecoderSet {
    pub fn as_array(&self) -> [&VaeDecoder; 4] {
        [&self.outer, &self.inner, &self.d1, &self.d2]
    }

    fn push_tensors(&self, tensors: &mut Vec<NamedTensor>) {
        for (key, dec) in COMPONENT_KEYS.iter().zip(self.as_array()) {
            dec.push_tensors(tensors, &format!("marginal.{key}"));
        }
    }

    fn from_tensors(map: &mut TensorMap) -> Result<Self, ModelError> {
        Ok(Self {
            outer: VaeDecoder::from_tensors(map, "marginal.outer")?,
            inner: VaeDecoder::from_tensors(map, "marginal.inner")?,
            d1: VaeDecoder::from_tensors(map, "marginal.d1")?,
            d2: VaeDecoder::from_tensors(map, "marginal.d2")?,
        })
    }
}

/// Outputs of one system-level forward pass (shared by both models).
pub struct SystemForward {
    pub recons: [NodeId; 4],
    pub mu: NodeId,
    pub logvar: NodeId,
    pub inputs: [NodeId; 4],
    pub lease: Lease,
}

/// Conditional VAE whose decoder coordinates frozen marginal generators:
/// `z_meta (+ cond) -> trunk -> four latent heads -> marginal decoders`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaVae {
    pub enc: MetaEncoder,
    pub trunk1: AffineParams,
    pub trunk2: AffineParams,
    pub heads: [AffineParams; 4],
    pub marginals: MarginalDecoderSet,
}

impl MetaVae {
    pub fn init(cfg: &ModelConfig, marginals: MarginalDecoderSet, rng: &mut ChaCha8Rng) -> Self {
        let enc = MetaEncoder::init(cfg, rng);
        let trunk1 = AffineParams::init(cfg.meta_latent + 3, cfg.trunk_hidden, rng);
        let trunk2 = AffineParams::init(cfg.trunk_hidden, cfg.trunk_hidden, rng);
        let latents = [
            marginals.outer.latent_dim(),
            marginals.inner.latent_dim(),
            marginals.d1.latent_dim(),
            marginals.d2.latent_dim(),
        ];
        let heads = latents.map(|l| AffineParams::init(cfg.trunk_hidden, l, rng));
        Self { enc, trunk1, trunk2, heads, marginals }
    }

    /// Encode, reparameterize, meta-decode, and emit the four components
    /// through the frozen marginal decoders. Gradients reach every meta
    /// parameter; the marginal decoders accumulate none.
    pub fn forward(
        &self,
        tape: &mut Tape,
        comps: [&[f64]; 4],
        cond: &[f64],
        batch: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<SystemForward, ModelError> {
        let mut lease = Lease::new();
        let dims = [comps[0].len(), comps[1].len(), comps[2].len(), comps[3].len()];
        let inputs = [
            tape.constant(comps[0], Shape::new(batch, dims[0] / batch)),
            tape.constant(comps[1], Shape::new(batch, dims[1] / batch)),
            tape.constant(comps[2], Shape::new(batch, dims[2] / batch)),
            tape.constant(comps[3], Shape::new(batch, dims[3] / batch)),
        ];
        let cond_node = tape.constant(cond, Shape::new(batch, 3));

        let (mu, logvar) = self.enc.forward_tape(tape, inputs, cond_node, &mut lease)?;
        let z = tape.reparameterize(mu, logvar, rng)?;
        let recons = self.decode_tape(tape, z, cond_node, &mut lease)?;
        Ok(SystemForward { recons, mu, logvar, inputs, lease })
    }

    fn decode_tape(
        &self,
        tape: &mut Tape,
        z: NodeId,
        cond: NodeId,
        lease: &mut Lease,
    ) -> Result<[NodeId; 4], ModelError> {
        let zc = tape.concat(&[z, cond])?;
        let l = lease.layer(tape, &self.trunk1);
        let h = tape.affine(l.0, l.1, zc)?;
        let h = tape.relu(h);
        let l = lease.layer(tape, &self.trunk2);
        let h = tape.affine(l.0, l.1, h)?;
        let h = tape.relu(h);
        let mut recons = Vec::with_capacity(4);
        for (head, dec) in self.heads.iter().zip(self.marginals.as_array()) {
            let l = lease.layer(tape, head);
            let zi = tape.affine(l.0, l.1, h)?;
            // frozen marginal generator: no lease, no gradient accumulation
            recons.push(dec.forward_tape(tape, zi, None)?);
        }
        Ok(recons.try_into().expect("four components"))
    }

    /// Tape-free conditional generation from latent rows.
    pub fn decode_infer(&self, z: &[f64], cond: &[f64], batch: usize) -> Vec<f64> {
        let latent = self.trunk1.in_dim - 3;
        let zc = concat_rows(&[z, cond], &[latent, 3], batch);
        let mut h = self.trunk1.forward_infer(&zc, batch);
        relu_infer(&mut h);
        let mut h = self.trunk2.forward_infer(&h, batch);
        relu_infer(&mut h);
        let mut comps = Vec::with_capacity(4);
        for (head, dec) in self.heads.iter().zip(self.marginals.as_array()) {
            let zi = head.forward_infer(&h, batch);
            comps.push(dec.infer(&zi, batch));
        }
        let widths: Vec<usize> = comps.iter().map(|c| c.len() / batch).collect();
        let parts: Vec<&[f64]> = comps.iter().map(|c| c.as_slice()).collect();
        concat_rows(&parts, &widths, batch)
    }

    /// Trainable layers only; the frozen marginal decoders are excluded.
    pub fn layers(&self) -> Vec<&AffineParams> {
        let mut v = self.enc.layers();
        v.push(&self.trunk1);
        v.push(&self.trunk2);
        v.extend(self.heads.iter());
        v
    }

    pub fn layers_mut(&mut self) -> Vec<&mut AffineParams> {
        let mut v = self.enc.layers_mut();
        v.push(&mut self.trunk1);
        v.push(&mut self.trunk2);
        v.extend(self.heads.iter_mut());
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
        self.enc.push_tensors(&mut tensors);
        push_layer(&mut tensors, "dec.trunk1", &self.trunk1);
        push_layer(&mut tensors, "dec.trunk2", &self.trunk2);
        for (key, head) in COMPONENT_KEYS.iter().zip(self.heads.iter()) {
            push_layer(&mut tensors, &format!("dec.head_{key}"), head);
        }
        self.marginals.push_tensors(&mut tensors);
        Checkpoint::new(
            CheckpointKind::System(ModelKind::MetaVae),
            cfg.clone(),
            seed,
            config_hash,
            normalizer,
            tensors,
        )
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, ModelError> {
        let mut map = TensorMap::new(&ckpt.tensors);
        Ok(Self {
            enc: MetaEncoder::from_tensors(&mut map)?,
            trunk1: map.take_layer("dec.trunk1")?,
            trunk2: map.take_layer("dec.trunk2")?,
            heads: [
                map.take_layer("dec.head_outer")?,
                map.take_layer("dec.head_inner")?,
                map.take_layer("dec.head_d1")?,
                map.take_layer("dec.head_d2")?,
            ],
            marginals: MarginalDecoderSet::from_tensors(&mut map)?,
        })
    }
}

/// Simplified variant: same encoder, but the decoder's parallel blocks emit
/// the components directly with no marginal generators.
#[derive(Debug, Clone, PartialEq)]
pub struct Smvae {
    pub enc: MetaEncoder,
    pub blocks: [AffineParams; 4],
    pub outs: [AffineParams; 4],
}

impl Smvae {
    pub fn init(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let enc = MetaEncoder::init(cfg, rng);
        let zc = cfg.meta_latent + 3;
        let dims = cfg.component_dims();
        let width = cfg.smvae_dec_hidden;
        let blocks = [
            AffineParams::init(zc, width, rng),
            AffineParams::init(zc, width, rng),
            AffineParams::init(zc, width, rng),
            AffineParams::init(zc, width, rng),
        ];
        let outs = [
            AffineParams::init(width, dims[0], rng),
            AffineParams::init(width, dims[1], rng),
            AffineParams::init(width, dims[2], rng),
            AffineParams::init(width, dims[3], rng),
        ];
        Self { enc, blocks, outs }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        comps: [&[f64]; 4],
        cond: &[f64],
        batch: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<SystemForward, ModelError> {
        let mut lease = Lease::new();
        let dims = [comps[0].len(), comps[1].len(), comps[2].len(), comps[3].len()];
        let inputs = [
            tape.constant(comps[0], Shape::new(batch, dims[0] / batch)),
            tape.constant(comps[1], Shape::new(batch, dims[1] / batch)),
            tape.constant(comps[2], Shape::new(batch, dims[2] / batch)),
            tape.constant(comps[3], Shape::new(batch, dims[3] / batch)),
        ];
        let cond_node = tape.constant(cond, Shape::new(batch, 3));

        let (mu, logvar) = self.enc.forward_tape(tape, inputs, cond_node, &mut lease)?;
        let z = tape.reparameterize(mu, logvar, rng)?;
        let zc = tape.concat(&[z, cond_node])?;
        let mut recons = Vec::with_capacity(4);
        for (block, out) in self.blocks.iter().zip(self.outs.iter()) {
            let l = lease.layer(tape, block);
            let h = tape.affine(l.0, l.1, zc)?;
            let h = tape.relu(h);
            let l = lease.layer(tape, out);
            recons.push(tape.affine(l.0, l.1, h)?);
        }
        Ok(SystemForward {
            recons: recons.try_into().expect("four components"),
            mu,
            logvar,
            inputs,
            lease,
        })
    }

    pub fn decode_infer(&self, z: &[f64], cond: &[f64], batch: usize) -> Vec<f64> {
        let latent = self.blocks[0].in_dim - 3;
        let zc = concat_rows(&[z, cond], &[latent, 3], batch);
        let mut comps = Vec::with_capacity(4);
        for (block, out) in self.blocks.iter().zip(self.outs.iter()) {
            let mut h = block.forward_infer(&zc, batch);
            relu_infer(&mut h);
            comps.push(out.forward_infer(&h, batch));
        }
        let widths: Vec<usize> = comps.iter().map(|c| c.len() / batch).collect();
        let parts: Vec<&[f64]> = comps.iter().map(|c| c.as_slice()).collect();
        concat_rows(&parts, &widths, batch)
    }

    // layer listing interleaves (block, out) per component to match the
    // forward lease order
    pub fn layers(&self) -> Vec<&AffineParams> {
        let mut v = self.enc.layers();
        for (block, out) in self.blocks.iter().zip(self.outs.iter()) {
            v.push(block);
            v.push(out);
        }
        v
    }

    pub fn layers_mut(&mut self) -> Vec<&mut AffineParams> {
        let mut v = self.enc.layers_mut();
        for (block, out) in self.blocks.iter_mut().zip(self.outs.iter_mut()) {
            v.push(block);
            v.push(out);
        }
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
        self.enc.push_tensors(&mut tensors);
        for (key, (block, out)) in
            COMPONENT_KEYS.iter().zip(self.blocks.iter().zip(self.outs.iter()))
        {
            push_layer(&mut tensors, &format!("dec.block_{key}"), block);
            push_layer(&mut tensors, &format!("dec.out_{key}"), out);
        }
        Checkpoint::new(
            CheckpointKind::System(ModelKind::Smvae),
            cfg.clone(),
            seed,
            config_hash,
            normalizer,
            tensors,
        )
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, ModelError> {
        let mut map = TensorMap::new(&ckpt.tensors);
        Ok(Self {
            enc: MetaEncoder::from_tensors(&mut map)?,
            blocks: [
                map.take_layer("dec.block_outer")?,
                map.take_layer("dec.block_inner")?,
                map.take_layer("dec.block_d1")?,
                map.take_layer("dec.block_d2")?,
            ],
            outs: [
                map.take_layer("dec.out_outer")?,
                map.take_layer("dec.out_inner")?,
                map.take_layer("dec.out_d1")?,
                map.take_layer("dec.out_d2")?,
            ],
        })
    }
}

/// Row-wise concatenation of equally batched parts.
pub(crate) fn concat_rows(parts: &[&[f64]], widths: &[usize], batch: usize) -> Vec<f64> {
    let total: usize = widths.iter().sum();
    let mut out = vec![0.0; batch * total];
    for r in 0..batch {
        let mut offset = 0;
        for (part, &w) in parts.iter().zip(widths.iter()) {
            out[r * total + offset..r * total + offset + w].copy_from_slice(&part[r * w..(r + 1) * w]);
            offset += w;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{COORD_SCALE, system_loss};
    use crate::util::fingerprint;
    use rand::Rng;
    use rand::SeedableRng;

    fn cfg() -> ModelConfig {
        ModelConfig::default()
    }

    fn random_marginals(rng: &mut ChaCha8Rng) -> MarginalDecoderSet {
        let c = cfg();
        MarginalDecoderSet {
            outer: VaeDecoder::init(c.cyl_latent, c.cyl_hidden, c.cyl_dim(), rng),
            inner: VaeDecoder::init(c.cyl_latent, c.cyl_hidden, c.cyl_dim(), rng),
            d1: VaeDecoder::init(c.dens_latent, c.dens_hidden, c.dens_dim(), rng),
            d2: VaeDecoder::init(c.dens_latent, c.dens_hidden, c.dens_dim(), rng),
        }
    }

    fn random_batch(rng: &mut ChaCha8Rng, batch: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let mk = |rng: &mut ChaCha8Rng, n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
        };
        (
            mk(rng, batch * 120),
            mk(rng, batch * 120),
            mk(rng, batch * 60),
            mk(rng, batch * 60),
            mk(rng, batch * 3),
        )
    }

    #[test]
    fn meta_forward_shapes_and_frozen_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let marginals = random_marginals(&mut rng);
        let marginals_fp = fingerprint(&format!("{marginals:?}").into_bytes());
        let model = MetaVae::init(&cfg(), marginals, &mut rng);
        let batch = 3;
        let (outer, inner, d1, d2, cond) = random_batch(&mut rng, batch);

        let mut tape = Tape::new();
        let fwd = model
            .forward(&mut tape, [&outer, &inner, &d1, &d2], &cond, batch, &mut rng)
            .unwrap();
        let dims: Vec<usize> = fwd.recons.iter().map(|&r| tape.shape(r).cols).collect();
        assert_eq!(dims, vec![120, 120, 60, 60]);

        let loss =
            system_loss(&mut tape, &fwd.recons, &fwd.inputs, fwd.mu, fwd.logvar, COORD_SCALE)
                .unwrap();
        tape.backward(loss).unwrap();
        // every meta parameter receives a gradient...
        for g in fwd.lease.grads(&tape) {
            assert!(g.iter().all(|v| v.is_finite()));
        }
        assert!(fwd.lease.grads(&tape).iter().any(|g| g.iter().any(|v| *v != 0.0)));
        // ...and the frozen marginals are untouched
        let after = fingerprint(&format!("{:?}", model.marginals).into_bytes());
        assert_eq!(marginals_fp, after);
    }

    #[test]
    fn meta_decode_is_deterministic_and_matches_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = MetaVae::init(&cfg(), random_marginals(&mut rng), &mut rng);
        let z: Vec<f64> = (0..2 * 16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cond: Vec<f64> = (0..2 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = model.decode_infer(&z, &cond, 2);
        let b = model.decode_infer(&z, &cond, 2);
        assert_eq!(a, b);
        assert_eq!(a.len(), 2 * 360);
    }

    #[test]
    fn smvae_forward_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = Smvae::init(&cfg(), &mut rng);
        let batch = 2;
        let (outer, inner, d1, d2, cond) = random_batch(&mut rng, batch);
        let mut tape = Tape::new();
        let fwd =
            model.forward(&mut tape, [&outer, &inner, &d1, &d2], &cond, batch, &mut rng).unwrap();
        let dims: Vec<usize> = fwd.recons.iter().map(|&r| tape.shape(r).cols).collect();
        assert_eq!(dims, vec![120, 120, 60, 60]);
        assert_eq!(model.decode_infer(&vec![0.1; 2 * 16], &vec![0.2; 6], 2).len(), 720);
    }

    #[test]
    fn checkpoints_roundtrip_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let norm = Normalizer { coord_scale: 100.0, logm_mean: 8.0, logm_std: 2.0 };
        let meta = MetaVae::init(&cfg(), random_marginals(&mut rng), &mut rng);
        let back = MetaVae::from_checkpoint(&meta.to_checkpoint(&cfg(), 5, "h".into(), norm))
            .unwrap();
        assert_eq!(meta, back);

        let smvae = Smvae::init(&cfg(), &mut rng);
        let back = Smvae::from_checkpoint(&smvae.to_checkpoint(&cfg(), 5, "h".into(), norm))
            .unwrap();
        assert_eq!(smvae, back);
    }
}
