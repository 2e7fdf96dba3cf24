//! Latent diffusion over keyframe latents: scaled-linear noise schedule,
//! forward diffusion, a two-stream parallel skip transformer denoiser,
//! classifier-free guidance, and DDPM/DDIM sampling loops.
//!
//! The denoiser runs a condition stream (text token + timestep token
//! through self-attention layers) and a latent stream (projected latent
//! tokens) through a stack of two-way co-attention layers: each stream
//! queries itself against keys/values from the other stream's previous
//! output, followed by a feed-forward block. Early-layer outputs are
//! skip-connected into late-layer inputs (layer i feeds layer N_c − i)
//! by concatenation and a learned two-layer MLP projection, applied in
//! both streams. The output head is zero-initialized so an untrained
//! model predicts zero noise.

use crate::error::{Error, Result};
use crate::features::Condition;
use crate::nn::{
    sinusoidal_pe, Adam, EncoderLayer, FeedForward, ForwardCtx, LayerConfig, LayerNorm, Linear,
    MultiHeadAttention, ParamSet, Tensor,
};
use crate::real::Real;
use crate::rng::{fnv1a, Prng};

/// Scaled-linear diffusion schedule: β is linear in √β between the two
/// endpoints; α = 1 − β and ᾱ is the running product.
#[derive(Debug, Clone)]
pub struct NoiseSchedule<T: Real> {
    betas: Vec<T>,
    alphas: Vec<T>,
    alpha_bars: Vec<T>,
}

impl<T: Real> NoiseSchedule<T> {
    /// β_t = (√β_start + (t−1)/(T−1) · (√β_end − √β_start))² for
    /// t = 1..T; T = 1 degenerates to [β_start].
    pub fn new(t_max: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if t_max == 0 {
            return Err(Error::invalid("schedule needs at least one step"));
        }
        if !(0.0 < beta_start && beta_start < beta_end && beta_end < 1.0) {
            return Err(Error::invalid(format!(
                "schedule bounds must satisfy 0 < beta_start < beta_end < 1, got ({beta_start}, {beta_end})"
            )));
        }
        let (s0, s1) = (beta_start.sqrt(), beta_end.sqrt());
        let mut betas = Vec::with_capacity(t_max);
        for t in 0..t_max {
            let frac = if t_max == 1 { 0.0 } else { t as f64 / (t_max - 1) as f64 };
            let root = s0 + frac * (s1 - s0);
            betas.push(T::c(root * root));
        }
        let alphas: Vec<T> = betas.iter().map(|b| T::one() - *b).collect();
        let mut alpha_bars = Vec::with_capacity(t_max);
        let mut prod = T::one();
        for a in &alphas {
            prod *= *a;
            alpha_bars.push(prod);
        }
        Ok(NoiseSchedule { betas, alphas, alpha_bars })
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.len() {
            return Err(Error::IndexOutOfRange {
                what: "diffusion timestep".into(),
                index: t,
                len: self.len(),
            });
        }
        Ok(())
    }

    /// β_t for 1-based t.
    pub fn beta(&self, t: usize) -> T {
        self.betas[t - 1]
    }

    /// α_t for 1-based t.
    pub fn alpha(&self, t: usize) -> T {
        self.alphas[t - 1]
    }

    /// ᾱ_t for 1-based t; ᾱ_0 is defined as 1.
    pub fn alpha_bar(&self, t: usize) -> T {
        if t == 0 {
            T::one()
        } else {
            self.alpha_bars[t - 1]
        }
    }
}

/// z_t = √ᾱ_t · z0 + √(1 − ᾱ_t) · ε for 1 ≤ t ≤ T. Differentiable in
/// both inputs.
pub fn forward_diffuse<T: Real>(
    z0: &Tensor<T>,
    t: usize,
    eps: &Tensor<T>,
    sched: &NoiseSchedule<T>,
) -> Result<Tensor<T>> {
    sched.check_t(t)?;
    if z0.shape() != eps.shape() {
        return Err(Error::dim("noise shape", format!("{:?}", z0.shape()), format!("{:?}", eps.shape())));
    }
    let ab = sched.alpha_bar(t);
    Ok(z0.scale(ab.sqrt()).add(&eps.scale((T::one() - ab).sqrt())))
}

/// ε̂ = s · ε_cond + (1 − s) · ε_uncond, computed as
/// ε_uncond + s · (ε_cond − ε_uncond) so equal inputs return exactly
/// themselves for any guidance factor.
pub fn cfg_combine<T: Real>(eps_cond: &Tensor<T>, eps_uncond: &Tensor<T>, s: T) -> Result<Tensor<T>> {
    if eps_cond.shape() != eps_uncond.shape() {
        return Err(Error::dim(
            "guidance operands",
            format!("{:?}", eps_cond.shape()),
            format!("{:?}", eps_uncond.shape()),
        ));
    }
    Ok(eps_uncond.add(&eps_cond.sub(eps_uncond).scale(s)))
}

/// Hyperparameters of the parallel skip transformer denoiser.
#[derive(Debug, Clone)]
pub struct PstConfig {
    /// Latent token count s_l (matches the VAE).
    pub latent_tokens: usize,
    /// Latent token width d_l (matches the VAE).
    pub latent_dim: usize,
    /// Raw condition-embedding width fed by the text encoder.
    pub cond_dim: usize,
    /// Self-attention layers over the condition stream (N_s).
    pub self_layers: usize,
    /// Two-way co-attention layers (N_c).
    pub cross_layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub hidden_dim: usize,
    pub dropout: f64,
    /// Training steps T the timestep embedding is built for.
    pub t_max: usize,
    /// Probability of replacing the condition by the unconditional token
    /// during training.
    pub p_uncond: f64,
    /// Default classifier-free guidance factor used at sampling time.
    pub guidance: f64,
}

impl PstConfig {
    /// Defaults: N_s = 2, N_c = 5, model_dim 256, 4 heads, hidden 1024,
    /// T = 1000, p_u = 0.1, guidance 7.5.
    pub fn new(latent_tokens: usize, latent_dim: usize, cond_dim: usize) -> Self {
        PstConfig {
            latent_tokens,
            latent_dim,
            cond_dim,
            self_layers: 2,
            cross_layers: 5,
            model_dim: 256,
            heads: 4,
            hidden_dim: 1024,
            dropout: 0.0,
            t_max: 1000,
            p_uncond: 0.1,
            guidance: 7.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_tokens == 0 || self.latent_dim == 0 || self.cond_dim == 0 {
            return Err(Error::invalid("latent and condition dimensions must be positive"));
        }
        if self.self_layers == 0 || self.cross_layers == 0 {
            return Err(Error::invalid("layer counts must be at least 1"));
        }
        if self.t_max == 0 {
            return Err(Error::invalid("t_max must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.p_uncond) {
            return Err(Error::invalid(format!("p_uncond must be in [0, 1], got {}", self.p_uncond)));
        }
        if self.model_dim % 2 != 0 {
            return Err(Error::invalid("model_dim must be even for the positional encoding"));
        }
        LayerConfig::new(self.model_dim, self.hidden_dim, self.heads, self.dropout)?;
        Ok(())
    }

    pub fn hash(&self) -> u64 {
        let canon = format!(
            "pst:{}:{}:{}:{}:{}:{}:{}:{}:{}",
            self.latent_tokens,
            self.latent_dim,
            self.cond_dim,
            self.self_layers,
            self.cross_layers,
            self.model_dim,
            self.heads,
            self.hidden_dim,
            self.t_max,
        );
        fnv1a(canon.as_bytes())
    }

    fn layer_config(&self) -> LayerConfig {
        LayerConfig {
            model_dim: self.model_dim,
            hidden_dim: self.hidden_dim,
            head_count: self.heads,
            dropout_rate: self.dropout,
            activation: crate::nn::Activation::Relu,
        }
    }
}

/// One co-attention block: cross-attention (queries from this stream,
/// keys/values from the other stream) plus feed-forward, both post-norm.
struct CoAttnBlock<T: Real> {
    attn: MultiHeadAttention<T>,
    ff: FeedForward<T>,
    ln1: LayerNorm<T>,
    ln2: LayerNorm<T>,
    dropout_rate: f64,
}

impl<T: Real> CoAttnBlock<T> {
    fn new(params: &mut ParamSet<T>, name: &str, cfg: &LayerConfig, rng: &mut Prng) -> Self {
        CoAttnBlock {
            attn: MultiHeadAttention::new(params, &format!("{name}.attn"), cfg, rng),
            ff: FeedForward::new(params, &format!("{name}.ff"), cfg, rng),
            ln1: LayerNorm::new(params, &format!("{name}.ln1"), cfg.model_dim),
            ln2: LayerNorm::new(params, &format!("{name}.ln2"), cfg.model_dim),
            dropout_rate: cfg.dropout_rate,
        }
    }

    fn forward(&self, x: &Tensor<T>, other: &Tensor<T>, ctx: &mut ForwardCtx<'_>) -> Result<Tensor<T>> {
        let ca = self.attn.forward(x, other, None)?;
        let ca = ctx.dropout(ca, self.dropout_rate);
        let x = self.ln1.forward(&x.add(&ca))?;
        let ff = self.ff.forward(&x)?;
        let ff = ctx.dropout(ff, self.dropout_rate);
        self.ln2.forward(&x.add(&ff))
    }
}

/// Two-layer skip projection mapping `[tokens, 2·model_dim]` (current
/// input concatenated with the stored early-layer output) back to
/// `[tokens, model_dim]`.
struct SkipMlp<T: Real> {
    l1: Linear<T>,
    l2: Linear<T>,
}

impl<T: Real> SkipMlp<T> {
    fn new(params: &mut ParamSet<T>, name: &str, model_dim: usize, rng: &mut Prng) -> Self {
        SkipMlp {
            l1: Linear::new(params, &format!("{name}.l1"), 2 * model_dim, 2 * model_dim, rng),
            l2: Linear::new(params, &format!("{name}.l2"), 2 * model_dim, model_dim, rng),
        }
    }

    fn forward(&self, x: &Tensor<T>, skip: &Tensor<T>) -> Result<Tensor<T>> {
        let joined = Tensor::cat(&[x, skip], 1);
        self.l2.forward(&self.l1.forward(&joined)?.relu())
    }

    /// Overwrites the weights so the block returns its first input
    /// exactly: layer 1 maps cat(h, s) to [h, −h] (ignoring s), ReLU,
    /// layer 2 computes relu(h) − relu(−h) = h.
    #[cfg(test)]
    fn set_through_path(&self, model_dim: usize) {
        let m = model_dim;
        let mut w1 = vec![T::zero(); 2 * m * 2 * m];
        for i in 0..m {
            w1[i * 2 * m + i] = T::one();
            w1[i * 2 * m + m + i] = -T::one();
        }
        self.l1.weight.set_data(&w1);
        self.l1.bias.set_data(&vec![T::zero(); 2 * m]);
        let mut w2 = vec![T::zero(); 2 * m * m];
        for i in 0..m {
            w2[i * m + i] = T::one();
            w2[(m + i) * m + i] = -T::one();
        }
        self.l2.weight.set_data(&w2);
        self.l2.bias.set_data(&vec![T::zero(); m]);
    }
}

/// The parallel skip transformer noise predictor.
pub struct PstDenoiser<T: Real> {
    cfg: PstConfig,
    params: ParamSet<T>,
    cond_proj: Linear<T>,
    null_cond: Tensor<T>,
    time_l1: Linear<T>,
    time_l2: Linear<T>,
    cond_encoder: Vec<EncoderLayer<T>>,
    z_proj: Linear<T>,
    cond_blocks: Vec<CoAttnBlock<T>>,
    latent_blocks: Vec<CoAttnBlock<T>>,
    cond_skips: Vec<(usize, SkipMlp<T>)>,
    latent_skips: Vec<(usize, SkipMlp<T>)>,
    out_proj: Linear<T>,
}

/// Receiver layers of the skip rule: every 1-based layer pair (i, N_c−i)
/// with i < N_c − i, keyed by receiver.
fn skip_pairs(cross_layers: usize) -> Vec<(usize, usize)> {
    (1..=cross_layers)
        .filter(|&i| i < cross_layers - i)
        .map(|i| (cross_layers - i, i))
        .collect()
}

impl<T: Real> PstDenoiser<T> {
    pub fn new(cfg: PstConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = Prng::derive(seed, "pst-init");
        let mut params = ParamSet::new();
        let lc = cfg.layer_config();
        let m = cfg.model_dim;
        let cond_proj = Linear::new(&mut params, "pst.cond_proj", cfg.cond_dim, m, &mut rng);
        let null_cond = params.register(
            "pst.null_cond",
            Tensor::param((0..cfg.cond_dim).map(|_| T::c(rng.normal_f64() * 0.02)).collect(), &[1, cfg.cond_dim]),
        );
        let time_l1 = Linear::new(&mut params, "pst.time_mlp.l1", m, m, &mut rng);
        let time_l2 = Linear::new(&mut params, "pst.time_mlp.l2", m, m, &mut rng);
        let cond_encoder = (0..cfg.self_layers)
            .map(|i| EncoderLayer::new(&mut params, &format!("pst.cond_enc.{i}"), &lc, &mut rng))
            .collect();
        let z_proj = Linear::new(&mut params, "pst.z_proj", cfg.latent_dim, m, &mut rng);
        let cond_blocks = (0..cfg.cross_layers)
            .map(|i| CoAttnBlock::new(&mut params, &format!("pst.cross.{i}.cond"), &lc, &mut rng))
            .collect();
        let latent_blocks = (0..cfg.cross_layers)
            .map(|i| CoAttnBlock::new(&mut params, &format!("pst.cross.{i}.latent"), &lc, &mut rng))
            .collect();
        let pairs = skip_pairs(cfg.cross_layers);
        let cond_skips = pairs
            .iter()
            .map(|&(recv, _)| (recv, SkipMlp::new(&mut params, &format!("pst.skip.{recv}.cond"), m, &mut rng)))
            .collect();
        let latent_skips = pairs
            .iter()
            .map(|&(recv, _)| (recv, SkipMlp::new(&mut params, &format!("pst.skip.{recv}.latent"), m, &mut rng)))
            .collect();
        let out_proj = Linear::new(&mut params, "pst.out_proj", 2 * m, cfg.latent_dim, &mut rng);
        // Zero-initialized head: an untrained model predicts zero noise,
        // which keeps the initial training loss at the ‖ε‖ scale.
        out_proj.weight.set_data(&vec![T::zero(); 2 * m * cfg.latent_dim]);
        Ok(PstDenoiser {
            cfg,
            params,
            cond_proj,
            null_cond,
            time_l1,
            time_l2,
            cond_encoder,
            z_proj,
            cond_blocks,
            latent_blocks,
            cond_skips,
            latent_skips,
            out_proj,
        })
    }

    pub fn config(&self) -> &PstConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    fn timestep_features(&self, t: usize) -> Tensor<T> {
        let m = self.cfg.model_dim;
        let mut data = Vec::with_capacity(m);
        for c in 0..m {
            let i = (c / 2) as f64;
            let angle = t as f64 / 10000f64.powf(2.0 * i / m as f64);
            data.push(T::c(if c % 2 == 0 { angle.sin() } else { angle.cos() }));
        }
        Tensor::from_vec(data, &[1, m])
    }

    /// Predicted noise ε̂ for a noisy latent `z_t` at timestep `t`.
    pub fn forward(&self, z_t: &Tensor<T>, t: usize, cond: &Condition<T>) -> Result<Tensor<T>> {
        self.forward_ctx(z_t, t, cond, &mut ForwardCtx::eval())
    }

    pub fn forward_ctx(
        &self,
        z_t: &Tensor<T>,
        t: usize,
        cond: &Condition<T>,
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<Tensor<T>> {
        self.forward_opts(z_t, t, cond, ctx, true)
    }

    /// `use_skips = false` runs the skip-free parallel network; used to
    /// verify that a through-path skip initialization is equivalent.
    pub(crate) fn forward_opts(
        &self,
        z_t: &Tensor<T>,
        t: usize,
        cond: &Condition<T>,
        ctx: &mut ForwardCtx<'_>,
        use_skips: bool,
    ) -> Result<Tensor<T>> {
        let (s_l, d_l) = (self.cfg.latent_tokens, self.cfg.latent_dim);
        if z_t.shape() != [s_l, d_l] {
            return Err(Error::dim("latent tokens", format!("[{s_l}, {d_l}]"), format!("{:?}", z_t.shape())));
        }
        if t == 0 || t > self.cfg.t_max {
            return Err(Error::IndexOutOfRange { what: "denoiser timestep".into(), index: t, len: self.cfg.t_max });
        }
        if !cond.is_unconditional() && cond.dim() != self.cfg.cond_dim {
            return Err(Error::dim("condition embedding", self.cfg.cond_dim, cond.dim()));
        }

        // Condition stream: [condition token, timestep token].
        let cond_row = if cond.is_unconditional() {
            self.null_cond.clone()
        } else {
            Tensor::from_vec(cond.embedding().to_vec(), &[1, self.cfg.cond_dim])
        };
        let cond_tok = self.cond_proj.forward(&cond_row)?;
        let time_tok = self.time_l2.forward(&self.time_l1.forward(&self.timestep_features(t))?.relu())?;
        let mut hc = Tensor::cat(&[&cond_tok, &time_tok], 0);
        hc = hc.add(&sinusoidal_pe(2, self.cfg.model_dim)?);
        for layer in &self.cond_encoder {
            hc = layer.forward(&hc, ctx)?;
        }

        // Latent stream: projected latent tokens.
        let mut hl = self.z_proj.forward(z_t)?;
        hl = hl.add(&sinusoidal_pe(s_l, self.cfg.model_dim)?);

        let mut stored_c: Vec<Option<Tensor<T>>> = vec![None; self.cfg.cross_layers + 1];
        let mut stored_l: Vec<Option<Tensor<T>>> = vec![None; self.cfg.cross_layers + 1];
        let senders: Vec<usize> = skip_pairs(self.cfg.cross_layers).iter().map(|&(_, s)| s).collect();
        for i in 1..=self.cfg.cross_layers {
            if use_skips {
                if let Some(pos) = self.cond_skips.iter().position(|(recv, _)| *recv == i) {
                    let (_, mlp) = &self.cond_skips[pos];
                    hc = mlp.forward(&hc, stored_c[skip_sender(i, self.cfg.cross_layers)].as_ref().unwrap())?;
                    let (_, mlp) = &self.latent_skips[pos];
                    hl = mlp.forward(&hl, stored_l[skip_sender(i, self.cfg.cross_layers)].as_ref().unwrap())?;
                }
            }
            let next_c = self.cond_blocks[i - 1].forward(&hc, &hl, ctx)?;
            let next_l = self.latent_blocks[i - 1].forward(&hl, &hc, ctx)?;
            hc = next_c;
            hl = next_l;
            if senders.contains(&i) {
                stored_c[i] = Some(hc.clone());
                stored_l[i] = Some(hl.clone());
            }
        }

        // Concatenate the two final token sets along the feature axis and
        // project to the latent shape. When the token counts differ the
        // condition stream is mean-pooled and broadcast.
        let joined = if hc.rows() == hl.rows() {
            Tensor::cat(&[&hl, &hc], 1)
        } else {
            let pooled = hc.sum_axis(0).scale(T::one() / T::from_usize(hc.rows()).unwrap()).reshape(&[
                1,
                self.cfg.model_dim,
            ]);
            let broadcast = Tensor::ones(&[s_l, 1]).matmul(&pooled);
            Tensor::cat(&[&hl, &broadcast], 1)
        };
        self.out_proj.forward(&joined)
    }

    /// Initializes every skip MLP to the exact through-path (see
    /// [`SkipMlp::set_through_path`]); test hook.
    #[cfg(test)]
    pub(crate) fn set_skips_to_through_path(&self) {
        for (_, mlp) in self.cond_skips.iter().chain(&self.latent_skips) {
            mlp.set_through_path(self.cfg.model_dim);
        }
    }
}

/// Sender layer paired with receiver `recv` under the rule (i, N_c − i).
fn skip_sender(recv: usize, cross_layers: usize) -> usize {
    cross_layers - recv
}

/// ‖a − b‖₂ over all entries, as a scalar tensor.
pub fn noise_l2<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let d = a.sub(b);
    d.mul(&d).sum_all().sqrt()
}

/// One stochastic denoising objective draw: t ~ U[1, T], ε standard
/// normal, the condition dropped to unconditional with probability
/// `p_uncond`, returning ‖ε − ε̂(z_t, t, c)‖₂.
pub fn denoise_loss<T: Real>(
    pst: &PstDenoiser<T>,
    z0: &Tensor<T>,
    cond: &Condition<T>,
    sched: &NoiseSchedule<T>,
    rng: &mut Prng,
    ctx: &mut ForwardCtx<'_>,
) -> Result<Tensor<T>> {
    if sched.len() != pst.config().t_max {
        return Err(Error::dim("schedule length", pst.config().t_max, sched.len()));
    }
    let t = 1 + rng.below(sched.len());
    let eps = Tensor::from_vec(rng.normal_vec(z0.numel()), z0.shape());
    let dropped = rng.uniform_f64() < pst.config().p_uncond;
    let uncond = Condition::unconditional(pst.config().cond_dim);
    let used = if dropped { &uncond } else { cond };
    let z_t = forward_diffuse(z0, t, &eps, sched)?;
    let eps_hat = pst.forward_ctx(&z_t, t, used, ctx)?;
    Ok(noise_l2(&eps, &eps_hat))
}

/// Sampling algorithm for the reverse process.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    /// Stochastic ancestral sampling with the generalized strided
    /// posterior.
    Ddpm,
    /// Deterministic update (stride-1 case degenerates to the full
    /// chain).
    Ddim,
}

/// Evenly strided 1-based timesteps τ_s = ⌊s·T/steps⌋, ascending,
/// ending exactly at T.
pub fn sample_timesteps(t_max: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 || steps > t_max {
        return Err(Error::invalid(format!("steps must satisfy 1 <= steps <= {t_max}, got {steps}")));
    }
    Ok((1..=steps).map(|s| s * t_max / steps).collect())
}

/// Draws one latent sample by running the reverse process from z_T ~
/// N(0, I). Every step evaluates the denoiser twice (conditional and
/// unconditional) and blends the predictions with guidance factor `s`.
pub fn sample<T: Real>(
    pst: &PstDenoiser<T>,
    cond: &Condition<T>,
    sched: &NoiseSchedule<T>,
    mode: SampleMode,
    steps: usize,
    guidance: f64,
    rng: &mut Prng,
) -> Result<Tensor<T>> {
    if sched.len() != pst.config().t_max {
        return Err(Error::dim("schedule length", pst.config().t_max, sched.len()));
    }
    let taus = sample_timesteps(sched.len(), steps)?;
    let (s_l, d_l) = (pst.config().latent_tokens, pst.config().latent_dim);
    let uncond = Condition::unconditional(pst.config().cond_dim);
    let mut z = Tensor::from_vec(rng.normal_vec(s_l * d_l), &[s_l, d_l]);
    for s in (0..taus.len()).rev() {
        let t = taus[s];
        let t_prev = if s == 0 { 0 } else { taus[s - 1] };
        let eps_c = pst.forward(&z, t, cond)?;
        let eps_u = pst.forward(&z, t, &uncond)?;
        let eps_hat = cfg_combine(&eps_c, &eps_u, T::c(guidance))?;
        let ab_t = sched.alpha_bar(t);
        let ab_prev = sched.alpha_bar(t_prev);
        let x0 = z.sub(&eps_hat.scale((T::one() - ab_t).sqrt())).scale(T::one() / ab_t.sqrt());
        z = match mode {
            SampleMode::Ddim => x0.scale(ab_prev.sqrt()).add(&eps_hat.scale((T::one() - ab_prev).sqrt())),
            SampleMode::Ddpm => {
                let alpha_eff = ab_t / ab_prev;
                let beta_eff = T::one() - alpha_eff;
                let one_m_ab = T::one() - ab_t;
                let mean = x0
                    .scale(ab_prev.sqrt() * beta_eff / one_m_ab)
                    .add(&z.scale(alpha_eff.sqrt() * (T::one() - ab_prev) / one_m_ab));
                if t_prev == 0 {
                    mean
                } else {
                    let var = beta_eff * (T::one() - ab_prev) / one_m_ab;
                    let noise = Tensor::from_vec(rng.normal_vec(s_l * d_l), &[s_l, d_l]);
                    mean.add(&noise.scale(var.sqrt()))
                }
            }
        };
        z = z.detach();
    }
    Ok(z)
}

/// Per-dimension standardization statistics of a latent training set.
/// Training runs in standardized space; samples are mapped back through
/// [`LatentStats::destandardize`].
#[derive(Debug, Clone)]
pub struct LatentStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl LatentStats {
    /// Sample mean and Bessel-corrected standard deviation per latent
    /// dimension; constant dimensions get a floor of 1e-8.
    pub fn fit<T: Real>(latents: &[Vec<T>]) -> Result<Self> {
        if latents.len() < 2 {
            return Err(Error::invalid("need at least two latents to fit statistics"));
        }
        let dim = latents[0].len();
        if latents.iter().any(|l| l.len() != dim) {
            return Err(Error::invalid("latents must share one dimension"));
        }
        let n = latents.len() as f64;
        let mut mean = vec![0.0; dim];
        for l in latents {
            for (m, v) in mean.iter_mut().zip(l) {
                *m += v.f64();
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; dim];
        for l in latents {
            for ((v, x), m) in var.iter_mut().zip(l).zip(&mean) {
                let d = x.f64() - m;
                *v += d * d;
            }
        }
        let std = var.into_iter().map(|v| (v / (n - 1.0)).sqrt().max(1e-8)).collect();
        Ok(LatentStats { mean, std })
    }

    pub fn standardize<T: Real>(&self, z: &[T]) -> Vec<T> {
        z.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| T::c((v.f64() - m) / s))
            .collect()
    }

    pub fn destandardize<T: Real>(&self, z: &[T]) -> Vec<T> {
        z.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| T::c(v.f64() * s + m))
            .collect()
    }
}

/// Trains the denoiser with Adam on (standardized) latent vectors and
/// their conditions. Returns the mean loss per epoch.
pub fn train_denoiser<T: Real>(
    pst: &PstDenoiser<T>,
    latents: &[(Vec<T>, Condition<T>)],
    sched: &NoiseSchedule<T>,
    epochs: usize,
    lr: f64,
    rng: &mut Prng,
) -> Result<Vec<f64>> {
    if latents.is_empty() {
        return Err(Error::invalid("training dataset must not be empty"));
    }
    let (s_l, d_l) = (pst.config().latent_tokens, pst.config().latent_dim);
    for (z, cond) in latents {
        if z.len() != s_l * d_l {
            return Err(Error::dim("latent length", s_l * d_l, z.len()));
        }
        if !cond.is_unconditional() && cond.dim() != pst.config().cond_dim {
            return Err(Error::dim("condition embedding", pst.config().cond_dim, cond.dim()));
        }
    }
    let mut adam = Adam::new(lr);
    let mut history = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let mut sum = 0.0;
        for (z, cond) in latents {
            let z0 = Tensor::from_vec(z.clone(), &[s_l, d_l]);
            let mut drop_rng = Prng::seed_from_u64(rng.next_u64());
            let mut ctx = ForwardCtx::train(&mut drop_rng);
            let loss = denoise_loss(pst, &z0, cond, sched, rng, &mut ctx)?;
            sum += loss.item().f64();
            loss.backward();
            adam.step(&pst.params);
            pst.params.zero_grads();
        }
        history.push(sum / latents.len() as f64);
    }
    Ok(history)
}
