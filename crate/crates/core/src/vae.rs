//! Keyframe variational autoencoder: a transformer encoder compresses K
//! keyframes (row content plus normalized position indices) into a small
//! set of latent tokens, and a transformer decoder reconstructs both the
//! keyframe rows and their positions from a latent sample.
//!
//! The loss combines four terms: mean per-keyframe ℓ2 reconstruction
//! error, a KL penalty against the standard normal, a bone-length
//! consistency term computed on keyframes treated as isolated poses (root
//! at the origin, so bone vectors come straight from the local-position
//! channels), and an ℓ1 penalty on the normalized indices.

use crate::error::{Error, Result};
use crate::motion::{MotionSequence, Skeleton};
use crate::nn::{
    sinusoidal_pe, DecoderLayer, EncoderLayer, ForwardCtx, Adam, LayerConfig, Linear, ParamSet, Tensor,
};
use crate::real::Real;
use crate::rng::{fnv1a, Prng};
use crate::select::KeyframeSet;

/// Hyperparameters of the keyframe VAE. `model_dim` is always
/// `kf_embed_dim + idx_embed_dim` because the two embeddings are
/// concatenated per token.
#[derive(Debug, Clone)]
pub struct VaeConfig {
    /// Sequence length N the indices are normalized against.
    pub motion_len: usize,
    /// Number of keyframes K per sample; fixed per trained model.
    pub keyframes: usize,
    /// Width d of one motion frame.
    pub frame_dim: usize,
    /// Number of latent tokens s_l.
    pub latent_tokens: usize,
    /// Width d_l of each latent token.
    pub latent_dim: usize,
    /// Keyframe-content embedding width.
    pub kf_embed_dim: usize,
    /// Index embedding width (must be even).
    pub idx_embed_dim: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub heads: usize,
    pub hidden_dim: usize,
    pub dropout: f64,
    pub lambda_kl: f64,
    pub lambda_bl: f64,
    pub lambda_pos: f64,
}

impl VaeConfig {
    /// Defaults: s_l = 2, d_l = 256, embeddings 256 + 16 (model_dim 272),
    /// 8 encoder and decoder layers, 4 heads, hidden 1024,
    /// λ_kl = 1e-4, λ_bl = 1, λ_pos = 1.
    pub fn new(motion_len: usize, keyframes: usize, frame_dim: usize) -> Self {
        VaeConfig {
            motion_len,
            keyframes,
            frame_dim,
            latent_tokens: 2,
            latent_dim: 256,
            kf_embed_dim: 256,
            idx_embed_dim: 16,
            enc_layers: 8,
            dec_layers: 8,
            heads: 4,
            hidden_dim: 1024,
            dropout: 0.0,
            lambda_kl: 1e-4,
            lambda_bl: 1.0,
            lambda_pos: 1.0,
        }
    }

    pub fn model_dim(&self) -> usize {
        self.kf_embed_dim + self.idx_embed_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.motion_len < 2 {
            return Err(Error::invalid("motion_len must be at least 2"));
        }
        if self.keyframes < 2 || self.keyframes > self.motion_len {
            return Err(Error::invalid(format!(
                "keyframe count must satisfy 2 <= K <= N, got K = {}, N = {}",
                self.keyframes, self.motion_len
            )));
        }
        if self.frame_dim == 0 || self.latent_tokens == 0 || self.latent_dim == 0 {
            return Err(Error::invalid("frame_dim, latent_tokens and latent_dim must be positive"));
        }
        if self.idx_embed_dim == 0 || self.idx_embed_dim % 2 != 0 {
            return Err(Error::invalid("idx_embed_dim must be positive and even"));
        }
        if self.enc_layers == 0 || self.dec_layers == 0 {
            return Err(Error::invalid("layer counts must be at least 1"));
        }
        LayerConfig::new(self.model_dim(), self.hidden_dim, self.heads, self.dropout)?;
        if self.model_dim() % 2 != 0 {
            return Err(Error::invalid("model_dim must be even for the positional encoding"));
        }
        if !(self.lambda_kl >= 0.0 && self.lambda_bl >= 0.0 && self.lambda_pos >= 0.0) {
            return Err(Error::invalid("loss coefficients must be non-negative"));
        }
        Ok(())
    }

    /// Stable hash of every architecture-relevant field; stored in
    /// checkpoints and compared on load.
    pub fn hash(&self) -> u64 {
        let canon = format!(
            "vae:{}:{}:{}:{}:{}:{}:{}:{}:{}:{}:{}",
            self.motion_len,
            self.keyframes,
            self.frame_dim,
            self.latent_tokens,
            self.latent_dim,
            self.kf_embed_dim,
            self.idx_embed_dim,
            self.enc_layers,
            self.dec_layers,
            self.heads,
            self.hidden_dim,
        );
        fnv1a(canon.as_bytes())
    }

    fn layer_config(&self) -> LayerConfig {
        LayerConfig {
            model_dim: self.model_dim(),
            hidden_dim: self.hidden_dim,
            head_count: self.heads,
            dropout_rate: self.dropout,
            activation: crate::nn::Activation::Relu,
        }
    }
}

/// Keyframe rows extracted from a motion sequence together with their
/// source indices; the unit the VAE trains on.
#[derive(Debug, Clone)]
pub struct Keyframes<T: Real> {
    rows: Vec<T>,
    indices: Vec<usize>,
    motion_len: usize,
    frame_dim: usize,
}

impl<T: Real> Keyframes<T> {
    pub fn new(rows: Vec<T>, indices: Vec<usize>, motion_len: usize, frame_dim: usize) -> Result<Self> {
        if frame_dim == 0 {
            return Err(Error::invalid("frame_dim must be positive"));
        }
        if indices.is_empty() || rows.len() != indices.len() * frame_dim {
            return Err(Error::dim(
                "keyframe rows",
                indices.len() * frame_dim,
                rows.len(),
            ));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) || *indices.last().unwrap() >= motion_len {
            return Err(Error::invalid(format!(
                "keyframe indices must be strictly increasing and below {motion_len}, got {indices:?}"
            )));
        }
        Ok(Keyframes { rows, indices, motion_len, frame_dim })
    }

    /// Copies the selected rows out of a motion sequence.
    pub fn extract(seq: &MotionSequence<T>, set: &KeyframeSet) -> Result<Self> {
        if set.motion_len() != seq.len() {
            return Err(Error::dim("keyframe selection length", seq.len(), set.motion_len()));
        }
        let d = seq.dim();
        let mut rows = Vec::with_capacity(set.count() * d);
        for &idx in set.indices() {
            rows.extend_from_slice(seq.frame(idx));
        }
        Keyframes::new(rows, set.indices().to_vec(), seq.len(), d)
    }

    pub fn rows(&self) -> &[T] {
        &self.rows
    }

    pub fn row(&self, k: usize) -> &[T] {
        &self.rows[k * self.frame_dim..(k + 1) * self.frame_dim]
    }

    pub fn rows_mut(&mut self) -> &mut [T] {
        &mut self.rows
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn count(&self) -> usize {
        self.indices.len()
    }

    pub fn motion_len(&self) -> usize {
        self.motion_len
    }

    pub fn frame_dim(&self) -> usize {
        self.frame_dim
    }

    /// Indices mapped to [0, 1] as p / (N−1).
    pub fn normalized_indices(&self) -> Vec<T> {
        let denom = T::from_usize(self.motion_len - 1).unwrap();
        self.indices.iter().map(|&p| T::from_usize(p).unwrap() / denom).collect()
    }
}

/// Sinusoidal features of a scalar position `q` (a frame index): the
/// same angle table as the token positional encoding, evaluated at an
/// arbitrary (possibly fractional) position.
fn index_features<T: Real>(q: f64, dim: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(dim);
    for c in 0..dim {
        let i = (c / 2) as f64;
        let angle = q / 10000f64.powf(2.0 * i / dim as f64);
        out.push(T::c(if c % 2 == 0 { angle.sin() } else { angle.cos() }));
    }
    out
}

/// Output of [`KeyframeVae::decode`]: reconstructed rows, the raw
/// (differentiable) normalized index predictions, and the repaired
/// integer indices.
pub struct DecodeOutput<T: Real> {
    pub keyframes: Tensor<T>,
    pub raw_indices: Tensor<T>,
    pub indices: Vec<usize>,
}

/// Makes rounded index candidates strictly increasing inside [0, N−1]:
/// a cumulative-max pass with minimal forward shifts (each entry bumped
/// to at least predecessor + 1), then a backward clamp so the tail stays
/// in range. Example: (3, 2, 7) becomes (3, 4, 7).
pub fn repair_indices(candidates: &[i64], motion_len: usize) -> Result<Vec<usize>> {
    let k = candidates.len();
    if k == 0 || k > motion_len {
        return Err(Error::invalid(format!(
            "cannot place {k} strictly increasing indices in a sequence of length {motion_len}"
        )));
    }
    let top = (motion_len - 1) as i64;
    let mut v: Vec<i64> = candidates.iter().map(|&c| c.clamp(0, top)).collect();
    for i in 1..k {
        v[i] = v[i].max(v[i - 1] + 1);
    }
    v[k - 1] = v[k - 1].min(top);
    for i in (0..k - 1).rev() {
        v[i] = v[i].min(v[i + 1] - 1);
    }
    Ok(v.into_iter().map(|x| x as usize).collect())
}

/// The keyframe VAE model. Parameters live in a [`ParamSet`] shared with
/// the optimizer and checkpoint code; the layer structs hold aliases of
/// the same tensors.
pub struct KeyframeVae<T: Real> {
    cfg: VaeConfig,
    params: ParamSet<T>,
    kf_embed: Linear<T>,
    idx_embed: Linear<T>,
    latent_tokens: Tensor<T>,
    enc: Vec<EncoderLayer<T>>,
    mu_head: Linear<T>,
    logsigma_head: Linear<T>,
    z_proj: Linear<T>,
    dec: Vec<DecoderLayer<T>>,
    kf_head: Linear<T>,
    idx_head: Linear<T>,
}

impl<T: Real> KeyframeVae<T> {
    pub fn new(cfg: VaeConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = Prng::derive(seed, "vae-init");
        let mut params = ParamSet::new();
        let lc = cfg.layer_config();
        let m = cfg.model_dim();
        let kf_embed = Linear::new(&mut params, "vae.kf_embed", cfg.frame_dim, cfg.kf_embed_dim, &mut rng);
        let idx_embed = Linear::new(&mut params, "vae.idx_embed", cfg.idx_embed_dim, cfg.idx_embed_dim, &mut rng);
        let latent_tokens = params.register(
            "vae.latent_tokens",
            Tensor::param(
                (0..cfg.latent_tokens * m).map(|_| T::c(rng.normal_f64() * 0.02)).collect(),
                &[cfg.latent_tokens, m],
            ),
        );
        let enc = (0..cfg.enc_layers)
            .map(|i| EncoderLayer::new(&mut params, &format!("vae.enc.{i}"), &lc, &mut rng))
            .collect();
        let mu_head = Linear::new(&mut params, "vae.mu_head", m, cfg.latent_dim, &mut rng);
        let logsigma_head = Linear::new(&mut params, "vae.logsigma_head", m, cfg.latent_dim, &mut rng);
        // The σ head starts input-independent at σ = e⁻¹. A randomly
        // initialized head emits σ as large as e², and reparameterization
        // noise of that size pushes the decoder into reconstructing the
        // dataset mean while ignoring the latent — a basin training does
        // not escape.
        logsigma_head.weight.set_data(&vec![T::zero(); m * cfg.latent_dim]);
        logsigma_head.bias.set_data(&vec![T::c(-1.0); cfg.latent_dim]);
        let z_proj = Linear::new(&mut params, "vae.z_proj", cfg.latent_dim, m, &mut rng);
        let dec = (0..cfg.dec_layers)
            .map(|i| DecoderLayer::new(&mut params, &format!("vae.dec.{i}"), &lc, &mut rng))
            .collect();
        let kf_head = Linear::new(&mut params, "vae.kf_head", m, cfg.frame_dim, &mut rng);
        let idx_head = Linear::new(&mut params, "vae.idx_head", m, 1, &mut rng);
        Ok(KeyframeVae {
            cfg,
            params,
            kf_embed,
            idx_embed,
            latent_tokens,
            enc,
            mu_head,
            logsigma_head,
            z_proj,
            dec,
            kf_head,
            idx_head,
        })
    }

    pub fn config(&self) -> &VaeConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    fn check_input(&self, kf: &Keyframes<T>) -> Result<()> {
        if kf.count() != self.cfg.keyframes {
            return Err(Error::dim("keyframe count", self.cfg.keyframes, kf.count()));
        }
        if kf.frame_dim() != self.cfg.frame_dim {
            return Err(Error::dim("keyframe width", self.cfg.frame_dim, kf.frame_dim()));
        }
        if kf.motion_len() != self.cfg.motion_len {
            return Err(Error::dim("motion length", self.cfg.motion_len, kf.motion_len()));
        }
        Ok(())
    }

    /// Latent distribution of one keyframe set: μ and σ, each
    /// `[latent_tokens, latent_dim]`. σ = exp(log σ) clamped to
    /// [1e-8, 1e3].
    pub fn encode(&self, kf: &Keyframes<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        self.encode_ctx(kf, &mut ForwardCtx::eval())
    }

    pub fn encode_ctx(&self, kf: &Keyframes<T>, ctx: &mut ForwardCtx<'_>) -> Result<(Tensor<T>, Tensor<T>)> {
        self.check_input(kf)?;
        let k = kf.count();
        let rows = Tensor::from_vec(kf.rows().to_vec(), &[k, self.cfg.frame_dim]);
        let kf_emb = self.kf_embed.forward(&rows)?;
        let mut idx_feat = Vec::with_capacity(k * self.cfg.idx_embed_dim);
        for p in kf.indices() {
            // Integer frame index, not the normalized one: the sinusoidal
            // feature frequencies are laid out for positions spanning the
            // whole sequence, and squeezing them into [0, 1] would leave
            // every channel but the first nearly constant.
            idx_feat.extend(index_features::<T>(*p as f64, self.cfg.idx_embed_dim));
        }
        let idx_emb = self.idx_embed.forward(&Tensor::from_vec(idx_feat, &[k, self.cfg.idx_embed_dim]))?;
        let tokens = Tensor::cat(&[&kf_emb, &idx_emb], 1);
        let mut x = Tensor::cat(&[&self.latent_tokens, &tokens], 0);
        x = x.add(&sinusoidal_pe(self.cfg.latent_tokens + k, self.cfg.model_dim())?);
        for layer in &self.enc {
            x = layer.forward(&x, ctx)?;
        }
        let latent_rows = x.narrow(0, 0, self.cfg.latent_tokens);
        let mu = self.mu_head.forward(&latent_rows)?;
        let sigma = self.logsigma_head.forward(&latent_rows)?.exp().clamp(T::c(1e-8), T::c(1e3));
        Ok((mu, sigma))
    }

    /// z = μ + σ ⊙ ε with ε drawn from the given generator.
    pub fn reparameterize(&self, mu: &Tensor<T>, sigma: &Tensor<T>, rng: &mut Prng) -> Result<Tensor<T>> {
        if mu.shape() != sigma.shape() {
            return Err(Error::dim("latent moments", format!("{:?}", mu.shape()), format!("{:?}", sigma.shape())));
        }
        if sigma.data().iter().any(|s| *s <= T::zero()) {
            return Err(Error::invalid("sigma must be positive elementwise"));
        }
        let eps = Tensor::from_vec(rng.normal_vec(mu.numel()), mu.shape());
        Ok(mu.add(&sigma.mul(&eps)))
    }

    /// Reconstructs keyframe rows and indices from a latent sample. The
    /// integer indices are rounded, clamped and repaired to be strictly
    /// increasing (see [`repair_indices`]).
    pub fn decode(&self, z: &Tensor<T>) -> Result<DecodeOutput<T>> {
        self.decode_ctx(z, &mut ForwardCtx::eval())
    }

    pub fn decode_ctx(&self, z: &Tensor<T>, ctx: &mut ForwardCtx<'_>) -> Result<DecodeOutput<T>> {
        if z.shape() != [self.cfg.latent_tokens, self.cfg.latent_dim] {
            return Err(Error::dim(
                "latent sample",
                format!("[{}, {}]", self.cfg.latent_tokens, self.cfg.latent_dim),
                format!("{:?}", z.shape()),
            ));
        }
        let k = self.cfg.keyframes;
        let memory = self.z_proj.forward(z)?;
        let mut x = sinusoidal_pe(k, self.cfg.model_dim())?;
        for layer in &self.dec {
            x = layer.forward(&x, &memory, ctx)?;
        }
        let keyframes = self.kf_head.forward(&x)?;
        let raw_indices = self.idx_head.forward(&x)?.reshape(&[k]);
        let denom = (self.cfg.motion_len - 1) as f64;
        let mut candidates: Vec<i64> = raw_indices
            .data()
            .iter()
            .map(|q| (q.f64() * denom).round_ties_even() as i64)
            .collect();
        // Every keyframe set includes both endpoints (a KeyframeSet
        // invariant all selectors uphold), so decoding projects onto that
        // structure instead of asking the regression head to re-derive
        // the two constants.
        candidates[0] = 0;
        *candidates.last_mut().unwrap() = denom as i64;
        let indices = repair_indices(&candidates, self.cfg.motion_len)?;
        Ok(DecodeOutput { keyframes, raw_indices, indices })
    }
}

/// Per-term values of one VAE loss evaluation (plain numbers for
/// logging; the tensor returned alongside carries the gradient).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VaeLossBreakdown {
    pub total: f64,
    pub reconstruction: f64,
    pub kl: f64,
    pub bone_length: f64,
    pub position: f64,
}

/// Column offsets of each non-root joint's local-position block and its
/// parent's (None when the parent is the root, which sits at the origin
/// in an isolated pose).
pub(crate) fn bone_columns<T: Real>(skel: &Skeleton<T>) -> Vec<(usize, Option<usize>)> {
    let base = skel.layout().local_positions().start;
    (1..skel.joints())
        .map(|j| {
            let parent = skel.parent_of(j).expect("non-root joint has a parent");
            let parent_cols = if parent == 0 { None } else { Some(base + 3 * (parent - 1)) };
            (base + 3 * (j - 1), parent_cols)
        })
        .collect()
}

/// Differentiable bone lengths of every row of `rows` (one isolated pose
/// per row): `[rows, joints-1]` flattened per joint into a vector of
/// per-bone length tensors of shape `[rows]`.
pub(crate) fn bone_length_tensors<T: Real>(rows: &Tensor<T>, skel: &Skeleton<T>) -> Vec<Tensor<T>> {
    bone_columns(skel)
        .into_iter()
        .map(|(child, parent)| {
            let child_pos = rows.narrow(1, child, 3);
            let vec = match parent {
                Some(p) => child_pos.sub(&rows.narrow(1, p, 3)),
                None => child_pos,
            };
            vec.mul(&vec).sum_axis(1).sqrt()
        })
        .collect()
}

/// Full VAE objective. Returns the scalar loss tensor (for backward) and
/// the per-term breakdown. `skel` enables the bone-length term; pass
/// `None` when the rows are not motion frames of a known skeleton.
#[allow(clippy::too_many_arguments)]
pub fn vae_loss<T: Real>(
    kf: &Keyframes<T>,
    recon: &Tensor<T>,
    raw_indices: &Tensor<T>,
    mu: &Tensor<T>,
    sigma: &Tensor<T>,
    skel: Option<&Skeleton<T>>,
    cfg: &VaeConfig,
) -> Result<(Tensor<T>, VaeLossBreakdown)> {
    let k = kf.count();
    let d = kf.frame_dim();
    if recon.shape() != [k, d] {
        return Err(Error::dim("reconstruction", format!("[{k}, {d}]"), format!("{:?}", recon.shape())));
    }
    if raw_indices.shape() != [k] {
        return Err(Error::dim("index predictions", k, raw_indices.numel()));
    }
    if mu.shape() != sigma.shape() {
        return Err(Error::dim("latent moments", format!("{:?}", mu.shape()), format!("{:?}", sigma.shape())));
    }
    if let Some(s) = skel {
        if s.layout().dim() != d {
            return Err(Error::dim("skeleton frame width", s.layout().dim(), d));
        }
    }
    let inv_k = T::one() / T::from_usize(k).unwrap();

    let target = Tensor::from_vec(kf.rows().to_vec(), &[k, d]);
    let diff = recon.sub(&target);
    let rec = diff.mul(&diff).sum_axis(1).sqrt().sum_all().scale(inv_k);

    let s2 = sigma.mul(sigma);
    let kl = s2
        .add(&mu.mul(mu))
        .add_scalar(-T::one())
        .sub(&s2.ln())
        .sum_all()
        .scale(T::c(0.5));

    let bone = match skel {
        Some(s) => {
            let recon_bones = bone_length_tensors(recon, s);
            let target_bones = bone_length_tensors(&target, s);
            let mut acc = Tensor::scalar(T::zero());
            for (r, t) in recon_bones.iter().zip(&target_bones) {
                acc = acc.add(&r.sub(t).abs().sum_all());
            }
            acc.scale(inv_k / T::from_usize(s.joints() - 1).unwrap())
        }
        None => Tensor::scalar(T::zero()),
    };

    let target_idx = Tensor::from_vec(kf.normalized_indices(), &[k]);
    let pos = raw_indices.sub(&target_idx).abs().sum_all().scale(inv_k);

    let total = rec
        .add(&kl.scale(T::c(cfg.lambda_kl)))
        .add(&bone.scale(T::c(cfg.lambda_bl)))
        .add(&pos.scale(T::c(cfg.lambda_pos)));
    let breakdown = VaeLossBreakdown {
        total: total.item().f64(),
        reconstruction: rec.item().f64(),
        kl: kl.item().f64(),
        bone_length: bone.item().f64(),
        position: pos.item().f64(),
    };
    Ok((total, breakdown))
}

/// Per-epoch averages of each loss term over the dataset.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct VaeEpochStats {
    pub total: f64,
    pub reconstruction: f64,
    pub kl: f64,
    pub bone_length: f64,
    pub position: f64,
}

/// Trains the VAE in place with Adam and a two-phase learning rate: the
/// first half of the epoch budget runs at `base_lr`, the second half at
/// 0.4 × `base_lr`. Returns one stats entry per epoch.
pub fn train_vae<T: Real>(
    vae: &KeyframeVae<T>,
    dataset: &[Keyframes<T>],
    skel: Option<&Skeleton<T>>,
    epochs: usize,
    base_lr: f64,
    rng: &mut Prng,
) -> Result<Vec<VaeEpochStats>> {
    if dataset.is_empty() {
        return Err(Error::invalid("training dataset must not be empty"));
    }
    for kf in dataset {
        vae.check_input(kf)?;
    }
    let mut adam = Adam::new(base_lr);
    let mut history = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        if epochs >= 2 && epoch == epochs / 2 {
            adam.set_lr(base_lr * 0.4);
        }
        let mut sums = [0.0f64; 5];
        for kf in dataset {
            let mut drop_rng = Prng::seed_from_u64(rng.next_u64());
            let mut ctx = ForwardCtx::train(&mut drop_rng);
            let (mu, sigma) = vae.encode_ctx(kf, &mut ctx)?;
            let z = vae.reparameterize(&mu, &sigma, rng)?;
            let out = vae.decode_ctx(&z, &mut ctx)?;
            let (loss, terms) = vae_loss(kf, &out.keyframes, &out.raw_indices, &mu, &sigma, skel, vae.config())?;
            loss.backward();
            adam.step(&vae.params);
            vae.params.zero_grads();
            sums[0] += terms.total;
            sums[1] += terms.reconstruction;
            sums[2] += terms.kl;
            sums[3] += terms.bone_length;
            sums[4] += terms.position;
        }
        let n = dataset.len() as f64;
        history.push(VaeEpochStats {
            total: sums[0] / n,
            reconstruction: sums[1] / n,
            kl: sums[2] / n,
            bone_length: sums[3] / n,
            position: sums[4] / n,
        });
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check;
    use approx::assert_relative_eq;

    /// Tiny configuration for fast tests; `frame_dim` is free-standing
    /// (the model treats rows as opaque vectors unless a skeleton is
    /// supplied for the bone term).
    fn tiny_cfg(frame_dim: usize, k: usize) -> VaeConfig {
        VaeConfig {
            latent_tokens: 2,
            latent_dim: 3,
            kf_embed_dim: 4,
            idx_embed_dim: 4,
            enc_layers: 1,
            dec_layers: 1,
            heads: 2,
            hidden_dim: 8,
            dropout: 0.0,
            ..VaeConfig::new(10, k, frame_dim)
        }
    }

    fn random_keyframes(cfg: &VaeConfig, seed: u64) -> Keyframes<f64> {
        let mut rng = Prng::seed_from_u64(seed);
        let rows = (0..cfg.keyframes * cfg.frame_dim).map(|_| rng.normal_f64()).collect();
        let mut indices = vec![0, cfg.motion_len - 1];
        while indices.len() < cfg.keyframes {
            let cand = 1 + rng.below(cfg.motion_len - 2);
            if !indices.contains(&cand) {
                indices.push(cand);
            }
        }
        indices.sort_unstable();
        Keyframes::new(rows, indices, cfg.motion_len, cfg.frame_dim).unwrap()
    }

    #[test]
    fn encode_shapes_and_determinism() {
        let cfg = tiny_cfg(11, 3);
        let vae = KeyframeVae::<f64>::new(cfg.clone(), 1).unwrap();
        let kf = random_keyframes(&cfg, 2);
        let (mu, sigma) = vae.encode(&kf).unwrap();
        assert_eq!(mu.shape(), &[2, 3]);
        assert_eq!(sigma.shape(), &[2, 3]);
        assert!(sigma.data().iter().all(|s| *s > 0.0));
        let (mu2, sigma2) = vae.encode(&kf).unwrap();
        assert_eq!(mu.data_vec(), mu2.data_vec());
        assert_eq!(sigma.data_vec(), sigma2.data_vec());
    }

    #[test]
    fn encode_rejects_mismatched_inputs() {
        let cfg = tiny_cfg(11, 3);
        let vae = KeyframeVae::<f64>::new(cfg.clone(), 1).unwrap();
        let wrong_k = random_keyframes(&tiny_cfg(11, 4), 3);
        assert!(vae.encode(&wrong_k).is_err());
        let wrong_d = random_keyframes(&tiny_cfg(12, 3), 3);
        assert!(vae.encode(&wrong_d).is_err());
    }

    #[test]
    fn reparameterize_at_sigma_floor_returns_mu() {
        let cfg = tiny_cfg(11, 3);
        let vae = KeyframeVae::<f64>::new(cfg, 1).unwrap();
        let mu = Tensor::from_fn(&[2, 3], |i| i as f64 * 0.3 - 0.5);
        let sigma = Tensor::full(&[2, 3], 1e-8);
        let mut rng = Prng::seed_from_u64(7);
        let z = vae.reparameterize(&mu, &sigma, &mut rng).unwrap();
        for (zi, mi) in z.data_vec().iter().zip(mu.data_vec()) {
            assert_relative_eq!(zi, &mi, epsilon = 1e-6);
        }
        let bad = Tensor::from_vec(vec![1.0, -0.5, 1.0, 1.0, 1.0, 1.0], &[2, 3]);
        assert!(vae.reparameterize(&mu, &bad, &mut rng).is_err());
    }

    #[test]
    fn reparameterize_is_seeded_and_unbiased() {
        let cfg = tiny_cfg(11, 3);
        let vae = KeyframeVae::<f64>::new(cfg, 1).unwrap();
        let mu = Tensor::from_vec(vec![0.7], &[1, 1]);
        let sigma = Tensor::from_vec(vec![1.3], &[1, 1]);
        let mut a = Prng::seed_from_u64(5);
        let mut b = Prng::seed_from_u64(5);
        let za = vae.reparameterize(&mu, &sigma, &mut a).unwrap();
        let zb = vae.reparameterize(&mu, &sigma, &mut b).unwrap();
        assert_eq!(za.data_vec(), zb.data_vec());

        let draws = 100_000;
        let mut rng = Prng::seed_from_u64(11);
        let mut sum = 0.0;
        for _ in 0..draws {
            sum += vae.reparameterize(&mu, &sigma, &mut rng).unwrap().item();
        }
        let mean = sum / draws as f64;
        let standard_error = 1.3 / (draws as f64).sqrt();
        assert!(
            (mean - 0.7).abs() < 3.0 * standard_error,
            "sample mean {mean} outside 3 standard errors of 0.7"
        );
    }

    #[test]
    fn decode_shapes_and_index_validity() {
        let cfg = tiny_cfg(11, 4);
        let vae = KeyframeVae::<f64>::new(cfg.clone(), 3).unwrap();
        let mut rng = Prng::seed_from_u64(9);
        for _ in 0..25 {
            let z = Tensor::from_vec(rng.normal_vec(6), &[2, 3]);
            let out = vae.decode(&z).unwrap();
            assert_eq!(out.keyframes.shape(), &[4, 11]);
            assert_eq!(out.raw_indices.shape(), &[4]);
            assert_eq!(out.indices.len(), 4);
            assert!(out.indices.windows(2).all(|w| w[0] < w[1]), "{:?}", out.indices);
            assert!(*out.indices.last().unwrap() < cfg.motion_len);
        }
    }

    #[test]
    fn index_repair_examples() {
        assert_eq!(repair_indices(&[3, 2, 7], 10).unwrap(), vec![3, 4, 7]);
        assert_eq!(repair_indices(&[6, 7, 7], 8).unwrap(), vec![5, 6, 7]);
        assert_eq!(repair_indices(&[5, 5, 5], 10).unwrap(), vec![5, 6, 7]);
        assert_eq!(repair_indices(&[0, 4, 9], 10).unwrap(), vec![0, 4, 9]);
        assert_eq!(repair_indices(&[-3, -1, 2], 10).unwrap(), vec![0, 1, 2]);
        assert!(repair_indices(&[0, 1, 2], 2).is_err());
    }

    #[test]
    fn perfect_reconstruction_and_standard_moments_give_zero_loss() {
        let skel = Skeleton::<f64>::toy();
        let d = skel.layout().dim();
        let cfg = tiny_cfg(d, 3);
        let kf = random_keyframes(&cfg, 4);
        let recon = Tensor::from_vec(kf.rows().to_vec(), &[3, d]);
        let raw_idx = Tensor::from_vec(kf.normalized_indices(), &[3]);
        let mu = Tensor::zeros(&[2, 3]);
        let sigma = Tensor::ones(&[2, 3]);
        let (total, terms) = vae_loss(&kf, &recon, &raw_idx, &mu, &sigma, Some(&skel), &cfg).unwrap();
        assert!(total.item().abs() < 1e-12, "total = {}", total.item());
        assert_eq!(terms.reconstruction, 0.0);
        assert!(terms.kl.abs() < 1e-12);
        assert_eq!(terms.bone_length, 0.0);
        assert_eq!(terms.position, 0.0);
    }

    #[test]
    fn kl_of_unit_mean_unit_sigma_single_latent_is_half() {
        let cfg = VaeConfig { latent_tokens: 1, latent_dim: 1, ..tiny_cfg(5, 2) };
        let kf = random_keyframes(&cfg, 6);
        let recon = Tensor::from_vec(kf.rows().to_vec(), &[2, 5]);
        let raw_idx = Tensor::from_vec(kf.normalized_indices(), &[2]);
        let mu = Tensor::from_vec(vec![1.0], &[1, 1]);
        let sigma = Tensor::from_vec(vec![1.0], &[1, 1]);
        let (_, terms) = vae_loss(&kf, &recon, &raw_idx, &mu, &sigma, None, &cfg).unwrap();
        assert_relative_eq!(terms.kl, 0.5, epsilon = 1e-12);
    }

    /// Every term recomputed with plain scalar loops.
    #[test]
    fn loss_terms_match_loop_oracle() {
        let skel = Skeleton::<f64>::toy();
        let d = skel.layout().dim();
        let cfg = tiny_cfg(d, 3);
        let kf = random_keyframes(&cfg, 8);
        let mut rng = Prng::seed_from_u64(13);
        let recon_v: Vec<f64> = (0..3 * d).map(|_| rng.normal_f64()).collect();
        let raw_v: Vec<f64> = (0..3).map(|_| rng.uniform_f64()).collect();
        let mu_v: Vec<f64> = (0..6).map(|_| rng.normal_f64()).collect();
        let sigma_v: Vec<f64> = (0..6).map(|_| 0.3 + rng.uniform_f64()).collect();
        let recon = Tensor::from_vec(recon_v.clone(), &[3, d]);
        let raw_idx = Tensor::from_vec(raw_v.clone(), &[3]);
        let mu = Tensor::from_vec(mu_v.clone(), &[2, 3]);
        let sigma = Tensor::from_vec(sigma_v.clone(), &[2, 3]);
        let (total, terms) = vae_loss(&kf, &recon, &raw_idx, &mu, &sigma, Some(&skel), &cfg).unwrap();

        let mut rec = 0.0;
        for k in 0..3 {
            let mut sq = 0.0;
            for c in 0..d {
                let e = recon_v[k * d + c] - kf.rows()[k * d + c];
                sq += e * e;
            }
            rec += sq.sqrt();
        }
        rec /= 3.0;
        assert_relative_eq!(terms.reconstruction, rec, epsilon = 1e-12);

        let mut kl = 0.0;
        for i in 0..6 {
            kl += sigma_v[i] * sigma_v[i] + mu_v[i] * mu_v[i] - 1.0 - (sigma_v[i] * sigma_v[i]).ln();
        }
        kl *= 0.5;
        assert_relative_eq!(terms.kl, kl, epsilon = 1e-12);

        let layout = skel.layout();
        let base = layout.local_positions().start;
        let pos_of = |rows: &[f64], k: usize, j: usize| -> [f64; 3] {
            if j == 0 {
                [0.0; 3]
            } else {
                let s = k * d + base + 3 * (j - 1);
                [rows[s], rows[s + 1], rows[s + 2]]
            }
        };
        let mut bl = 0.0;
        for k in 0..3 {
            for j in 1..skel.joints() {
                let p = skel.parent_of(j).unwrap();
                let a = pos_of(&recon_v, k, j);
                let b = pos_of(&recon_v, k, p);
                let la = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
                let ga = pos_of(kf.rows(), k, j);
                let gb = pos_of(kf.rows(), k, p);
                let lg = ((ga[0] - gb[0]).powi(2) + (ga[1] - gb[1]).powi(2) + (ga[2] - gb[2]).powi(2)).sqrt();
                bl += (la - lg).abs();
            }
        }
        bl /= 3.0 * (skel.joints() - 1) as f64;
        assert_relative_eq!(terms.bone_length, bl, epsilon = 1e-12);

        let norm_idx = kf.normalized_indices();
        let pos: f64 = (0..3).map(|k| (raw_v[k] - norm_idx[k]).abs()).sum::<f64>() / 3.0;
        assert_relative_eq!(terms.position, pos, epsilon = 1e-12);

        let want_total = rec + cfg.lambda_kl * kl + cfg.lambda_bl * bl + cfg.lambda_pos * pos;
        assert_relative_eq!(total.item(), want_total, epsilon = 1e-12);
        assert_relative_eq!(terms.total, want_total, epsilon = 1e-12);
    }

    #[test]
    fn kl_is_nonnegative_over_random_moments() {
        let cfg = tiny_cfg(5, 2);
        let kf = random_keyframes(&cfg, 20);
        let recon = Tensor::from_vec(kf.rows().to_vec(), &[2, 5]);
        let raw_idx = Tensor::from_vec(kf.normalized_indices(), &[2]);
        let mut rng = Prng::seed_from_u64(31);
        for _ in 0..200 {
            let mu = Tensor::from_vec((0..6).map(|_| rng.normal_f64() * 3.0).collect(), &[2, 3]);
            let sigma =
                Tensor::from_vec((0..6).map(|_| 1e-3 + rng.uniform_f64() * 10.0).collect(), &[2, 3]);
            let (_, terms) = vae_loss(&kf, &recon, &raw_idx, &mu, &sigma, None, &cfg).unwrap();
            assert!(terms.kl >= -1e-12, "KL went negative: {}", terms.kl);
        }
    }

    #[test]
    fn kl_gradient_through_encoder_matches_finite_differences() {
        let cfg = tiny_cfg(11, 3);
        let vae = KeyframeVae::<f64>::new(cfg.clone(), 17).unwrap();
        let kf = random_keyframes(&cfg, 18);
        let rel = grad_check(
            vae.params(),
            || {
                let (mu, sigma) = vae.encode(&kf)?;
                let s2 = sigma.mul(&sigma);
                Ok(s2.add(&mu.mul(&mu)).add_scalar(-1.0).sub(&s2.ln()).sum_all().scale(0.5))
            },
            1e-5,
        )
        .unwrap();
        assert!(rel < 1e-5, "KL gradient mismatch: rel = {rel}");
    }

    #[test]
    fn full_loss_gradient_matches_finite_differences_without_skeleton() {
        let cfg = tiny_cfg(11, 3);
        let vae = KeyframeVae::<f64>::new(cfg.clone(), 23).unwrap();
        let kf = random_keyframes(&cfg, 24);
        let eps0: Vec<f64> = Prng::seed_from_u64(25).normal_vec(6);
        let rel = grad_check(
            vae.params(),
            || {
                let (mu, sigma) = vae.encode(&kf)?;
                let z = mu.add(&sigma.mul(&Tensor::from_vec(eps0.clone(), &[2, 3])));
                let out = vae.decode(&z)?;
                let (loss, _) = vae_loss(&kf, &out.keyframes, &out.raw_indices, &mu, &sigma, None, &cfg)?;
                Ok(loss)
            },
            1e-5,
        )
        .unwrap();
        assert!(rel < 1e-5, "VAE loss gradient mismatch: rel = {rel}");
    }

    #[test]
    fn full_loss_gradient_matches_finite_differences_with_bone_term() {
        let skel = Skeleton::<f64>::toy();
        let d = skel.layout().dim();
        let cfg = tiny_cfg(d, 2);
        let vae = KeyframeVae::<f64>::new(cfg.clone(), 29).unwrap();
        let kf = random_keyframes(&cfg, 30);
        let eps0: Vec<f64> = Prng::seed_from_u64(33).normal_vec(6);
        let rel = grad_check(
            vae.params(),
            || {
                let (mu, sigma) = vae.encode(&kf)?;
                let z = mu.add(&sigma.mul(&Tensor::from_vec(eps0.clone(), &[2, 3])));
                let out = vae.decode(&z)?;
                let (loss, _) =
                    vae_loss(&kf, &out.keyframes, &out.raw_indices, &mu, &sigma, Some(&skel), &cfg)?;
                Ok(loss)
            },
            1e-5,
        )
        .unwrap();
        assert!(rel < 1e-5, "VAE loss gradient mismatch with bone term: rel = {rel}");
    }

    #[test]
    fn zero_epochs_leave_parameters_unchanged() {
        let cfg = tiny_cfg(11, 3);
        let vae = KeyframeVae::<f64>::new(cfg.clone(), 41).unwrap();
        let before: Vec<Vec<f64>> = vae.params().iter().map(|(_, t)| t.data_vec()).collect();
        let data = vec![random_keyframes(&cfg, 42)];
        let mut rng = Prng::seed_from_u64(43);
        let history = train_vae(&vae, &data, None, 0, 1e-3, &mut rng).unwrap();
        assert!(history.is_empty());
        let after: Vec<Vec<f64>> = vae.params().iter().map(|(_, t)| t.data_vec()).collect();
        assert_eq!(before, after);
        assert!(train_vae(&vae, &[], None, 1, 1e-3, &mut rng).is_err());
    }

    #[test]
    fn training_reduces_the_loss_on_a_small_dataset() {
        let cfg = tiny_cfg(11, 3);
        let vae = KeyframeVae::<f64>::new(cfg.clone(), 51).unwrap();
        let data: Vec<Keyframes<f64>> = (0..4).map(|i| random_keyframes(&cfg, 100 + i)).collect();
        let mut rng = Prng::seed_from_u64(53);
        let history = train_vae(&vae, &data, None, 60, 3e-3, &mut rng).unwrap();
        assert_eq!(history.len(), 60);
        let first = history.first().unwrap().total;
        let last = history.last().unwrap().total;
        assert!(
            last < 0.7 * first,
            "training did not reduce the loss: first = {first}, last = {last}"
        );
        assert!(history.last().unwrap().reconstruction < history.first().unwrap().reconstruction);
    }
}
