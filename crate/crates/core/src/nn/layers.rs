//! Transformer building blocks: dense layers, multi-head attention,
//! encoder/decoder layers (post-norm), feed-forward blocks, and sinusoidal
//! positional encodings.

use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::Prng;

/// Feed-forward activation choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

/// Shared transformer-layer hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct LayerConfig {
    pub model_dim: usize,
    pub hidden_dim: usize,
    pub head_count: usize,
    pub dropout_rate: f64,
    pub activation: Activation,
}

impl LayerConfig {
    pub fn new(model_dim: usize, hidden_dim: usize, head_count: usize, dropout_rate: f64) -> Result<Self> {
        let cfg = LayerConfig {
            model_dim,
            hidden_dim,
            head_count,
            dropout_rate,
            activation: Activation::Relu,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.model_dim == 0 || self.head_count == 0 || self.model_dim % self.head_count != 0 {
            return Err(Error::invalid(format!(
                "model_dim {} must be a positive multiple of head_count {}",
                self.model_dim, self.head_count
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid(format!(
                "dropout_rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

/// Per-call forward state: training flag plus the generator that feeds
/// dropout masks. Evaluation mode never touches the generator, so
/// inference is deterministic.
pub struct ForwardCtx<'a> {
    pub training: bool,
    pub rng: Option<&'a mut Prng>,
}

impl<'a> ForwardCtx<'a> {
    pub fn eval() -> ForwardCtx<'static> {
        ForwardCtx { training: false, rng: None }
    }

    pub fn train(rng: &'a mut Prng) -> ForwardCtx<'a> {
        ForwardCtx { training: true, rng: Some(rng) }
    }

    pub(crate) fn dropout<T: Real>(&mut self, x: Tensor<T>, rate: f64) -> Tensor<T> {
        if !self.training || rate == 0.0 {
            return x;
        }
        let rng = self.rng.as_deref_mut().expect("training forward needs an RNG for dropout");
        x.dropout(rate, true, rng)
    }
}

/// Dense layer computing `x W + b` with Xavier-uniform initialization.
pub struct Linear<T: Real> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> Linear<T> {
    pub fn new(params: &mut ParamSet<T>, name: &str, fan_in: usize, fan_out: usize, rng: &mut Prng) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weight = Tensor::param(
            (0..fan_in * fan_out).map(|_| T::c(rng.uniform_range(-limit, limit))).collect(),
            &[fan_in, fan_out],
        );
        let bias = Tensor::param(vec![T::zero(); fan_out], &[fan_out]);
        Linear {
            weight: params.register(&format!("{name}.weight"), weight),
            bias: params.register(&format!("{name}.bias"), bias),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        linear(x, &self.weight, &self.bias)
    }
}

/// `x W + b` for a 2-D input `[rows, fan_in]`.
pub fn linear<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if x.rank() != 2 || x.cols() != w.rows() || b.shape() != [w.cols()] {
        return Err(Error::dim(
            "linear layer input",
            format!("[*, {}] x [{}, {}] + [{}]", w.rows(), w.rows(), w.cols(), w.cols()),
            format!("x {:?}, W {:?}, b {:?}", x.shape(), w.shape(), b.shape()),
        ));
    }
    Ok(x.matmul(w).add_bias(b))
}

/// Row-wise layer normalization with affine parameters (eps 1e-5).
pub fn layer_norm<T: Real>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<Tensor<T>> {
    if x.rank() != 2 || gamma.shape() != [x.cols()] || beta.shape() != [x.cols()] {
        return Err(Error::dim(
            "layer_norm input",
            format!("x [*, n], gamma/beta [n]"),
            format!("x {:?}, gamma {:?}, beta {:?}", x.shape(), gamma.shape(), beta.shape()),
        ));
    }
    Ok(x.layer_norm(gamma, beta, T::c(1e-5)))
}

/// Learned normalization parameters for one site.
pub struct LayerNorm<T: Real> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

impl<T: Real> LayerNorm<T> {
    pub fn new(params: &mut ParamSet<T>, name: &str, dim: usize) -> Self {
        LayerNorm {
            gamma: params.register(&format!("{name}.gamma"), Tensor::param(vec![T::one(); dim], &[dim])),
            beta: params.register(&format!("{name}.beta"), Tensor::param(vec![T::zero(); dim], &[dim])),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        layer_norm(x, &self.gamma, &self.beta)
    }
}

/// Single-head scaled dot-product attention; returns the context rows and
/// the attention weights (each row sums to 1).
pub fn scaled_dot_attention<T: Real>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    mask: Option<&[bool]>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    if q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.cols() != k.cols() || k.rows() != v.rows() {
        return Err(Error::dim(
            "attention inputs",
            "q [lq, d], k [lk, d], v [lk, dv]",
            format!("q {:?}, k {:?}, v {:?}", q.shape(), k.shape(), v.shape()),
        ));
    }
    let scale = T::one() / T::from_usize(q.cols()).unwrap().sqrt();
    let mut scores = q.matmul(&k.transpose()).scale(scale);
    if let Some(m) = mask {
        if m.len() != k.rows() {
            return Err(Error::dim("attention mask", k.rows(), m.len()));
        }
        // Additive mask: blocked keys get a large negative score.
        let penalty = Tensor::from_fn(&[q.rows(), k.rows()], |idx| {
            if m[idx % k.rows()] {
                T::zero()
            } else {
                T::c(-1e30)
            }
        });
        scores = scores.add(&penalty);
    }
    let weights = scores.softmax(1);
    Ok((weights.matmul(v), weights))
}

/// Multi-head attention with per-head column slicing, scale
/// `1/sqrt(model_dim / head_count)`, concatenation, and output projection.
/// Self-attention is the `kv_in = q_in` case.
pub struct MultiHeadAttention<T: Real> {
    wq: Linear<T>,
    wk: Linear<T>,
    wv: Linear<T>,
    wo: Linear<T>,
    heads: usize,
    model_dim: usize,
}

impl<T: Real> MultiHeadAttention<T> {
    pub fn new(params: &mut ParamSet<T>, name: &str, cfg: &LayerConfig, rng: &mut Prng) -> Self {
        let d = cfg.model_dim;
        MultiHeadAttention {
            wq: Linear::new(params, &format!("{name}.wq"), d, d, rng),
            wk: Linear::new(params, &format!("{name}.wk"), d, d, rng),
            wv: Linear::new(params, &format!("{name}.wv"), d, d, rng),
            wo: Linear::new(params, &format!("{name}.wo"), d, d, rng),
            heads: cfg.head_count,
            model_dim: d,
        }
    }

    pub fn forward(&self, q_in: &Tensor<T>, kv_in: &Tensor<T>, mask: Option<&[bool]>) -> Result<Tensor<T>> {
        if q_in.rank() != 2 || q_in.cols() != self.model_dim || kv_in.rank() != 2 || kv_in.cols() != self.model_dim
        {
            return Err(Error::dim(
                "attention token dims",
                format!("[*, {}]", self.model_dim),
                format!("q_in {:?}, kv_in {:?}", q_in.shape(), kv_in.shape()),
            ));
        }
        let q = self.wq.forward(q_in)?;
        let k = self.wk.forward(kv_in)?;
        let v = self.wv.forward(kv_in)?;
        let hd = self.model_dim / self.heads;
        let mut head_outputs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = q.narrow(1, h * hd, hd);
            let kh = k.narrow(1, h * hd, hd);
            let vh = v.narrow(1, h * hd, hd);
            let (ctx, _) = scaled_dot_attention(&qh, &kh, &vh, mask)?;
            head_outputs.push(ctx);
        }
        let refs: Vec<&Tensor<T>> = head_outputs.iter().collect();
        self.wo.forward(&Tensor::cat(&refs, 1))
    }
}

/// Position-wise feed-forward block.
pub struct FeedForward<T: Real> {
    l1: Linear<T>,
    l2: Linear<T>,
    activation: Activation,
}

impl<T: Real> FeedForward<T> {
    pub fn new(params: &mut ParamSet<T>, name: &str, cfg: &LayerConfig, rng: &mut Prng) -> Self {
        FeedForward {
            l1: Linear::new(params, &format!("{name}.l1"), cfg.model_dim, cfg.hidden_dim, rng),
            l2: Linear::new(params, &format!("{name}.l2"), cfg.hidden_dim, cfg.model_dim, rng),
            activation: cfg.activation,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let h = self.l1.forward(x)?;
        let h = match self.activation {
            Activation::Relu => h.relu(),
            Activation::Tanh => h.tanh(),
        };
        self.l2.forward(&h)
    }
}

/// Post-norm transformer encoder layer:
/// `x = LN(x + Drop(SelfAttn(x)))`, then `x = LN(x + Drop(FF(x)))`.
pub struct EncoderLayer<T: Real> {
    attn: MultiHeadAttention<T>,
    ff: FeedForward<T>,
    ln1: LayerNorm<T>,
    ln2: LayerNorm<T>,
    dropout_rate: f64,
}

impl<T: Real> EncoderLayer<T> {
    pub fn new(params: &mut ParamSet<T>, name: &str, cfg: &LayerConfig, rng: &mut Prng) -> Self {
        EncoderLayer {
            attn: MultiHeadAttention::new(params, &format!("{name}.attn"), cfg, rng),
            ff: FeedForward::new(params, &format!("{name}.ff"), cfg, rng),
            ln1: LayerNorm::new(params, &format!("{name}.ln1"), cfg.model_dim),
            ln2: LayerNorm::new(params, &format!("{name}.ln2"), cfg.model_dim),
            dropout_rate: cfg.dropout_rate,
        }
    }

    pub fn forward(&self, x: &Tensor<T>, ctx: &mut ForwardCtx<'_>) -> Result<Tensor<T>> {
        let sa = self.attn.forward(x, x, None)?;
        let sa = ctx.dropout(sa, self.dropout_rate);
        let x = self.ln1.forward(&x.add(&sa))?;
        let ff = self.ff.forward(&x)?;
        let ff = ctx.dropout(ff, self.dropout_rate);
        self.ln2.forward(&x.add(&ff))
    }
}

/// Post-norm transformer decoder layer: self-attention, cross-attention
/// to `memory`, then feed-forward, each with residual + normalization.
pub struct DecoderLayer<T: Real> {
    self_attn: MultiHeadAttention<T>,
    cross_attn: MultiHeadAttention<T>,
    ff: FeedForward<T>,
    ln1: LayerNorm<T>,
    ln2: LayerNorm<T>,
    ln3: LayerNorm<T>,
    dropout_rate: f64,
}

impl<T: Real> DecoderLayer<T> {
    pub fn new(params: &mut ParamSet<T>, name: &str, cfg: &LayerConfig, rng: &mut Prng) -> Self {
        DecoderLayer {
            self_attn: MultiHeadAttention::new(params, &format!("{name}.self_attn"), cfg, rng),
            cross_attn: MultiHeadAttention::new(params, &format!("{name}.cross_attn"), cfg, rng),
            ff: FeedForward::new(params, &format!("{name}.ff"), cfg, rng),
            ln1: LayerNorm::new(params, &format!("{name}.ln1"), cfg.model_dim),
            ln2: LayerNorm::new(params, &format!("{name}.ln2"), cfg.model_dim),
            ln3: LayerNorm::new(params, &format!("{name}.ln3"), cfg.model_dim),
            dropout_rate: cfg.dropout_rate,
        }
    }

    pub fn forward(&self, x: &Tensor<T>, memory: &Tensor<T>, ctx: &mut ForwardCtx<'_>) -> Result<Tensor<T>> {
        let sa = self.self_attn.forward(x, x, None)?;
        let sa = ctx.dropout(sa, self.dropout_rate);
        let x = self.ln1.forward(&x.add(&sa))?;
        let ca = self.cross_attn.forward(&x, memory, None)?;
        let ca = ctx.dropout(ca, self.dropout_rate);
        let x = self.ln2.forward(&x.add(&ca))?;
        let ff = self.ff.forward(&x)?;
        let ff = ctx.dropout(ff, self.dropout_rate);
        self.ln3.forward(&x.add(&ff))
    }
}

/// Sinusoidal positional encoding `[length, dim]`:
/// `pe[p, 2i] = sin(p / 10000^(2i/dim))`, `pe[p, 2i+1] = cos(...)`.
/// Requires an even dimension.
pub fn sinusoidal_pe<T: Real>(length: usize, dim: usize) -> Result<Tensor<T>> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::invalid(format!("sinusoidal encoding needs an even dimension, got {dim}")));
    }
    let mut data = Vec::with_capacity(length * dim);
    for p in 0..length {
        for c in 0..dim {
            let i = c / 2;
            let angle = p as f64 / 10000f64.powf(2.0 * i as f64 / dim as f64);
            data.push(T::c(if c % 2 == 0 { angle.sin() } else { angle.cos() }));
        }
    }
    Ok(Tensor::from_vec(data, &[length, dim]))
}
