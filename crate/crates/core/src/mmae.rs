//! Motion masked autoencoder: a text-conditioned residual transformer
//! that reconstructs a full N-frame sequence from keyframes placed at
//! their indices, with all other rows zeroed.
//!
//! The condition embedding, projected to model width, is added to the
//! token at position 0 at the input of every layer (residual
//! conditioning); the output head predicts every frame, including the
//! keyframe rows. The training objective combines frame reconstruction
//! with forward-kinematic position, bone-length, and velocity-smoothness
//! terms, all differentiable.

use crate::error::{Error, Result};
use crate::features::Condition;
use crate::motion::{FrameLayout, MotionSequence, Skeleton};
use crate::nn::{
    exclusive_prefix_sum_matrix, sinusoidal_pe, Adam, EncoderLayer, ForwardCtx, LayerConfig, Linear,
    ParamSet, Tensor,
};
use crate::real::Real;
use crate::rng::{fnv1a, Prng};
use crate::select::{keyframe_count, SelectorKind};
use crate::vae::{bone_length_tensors, Keyframes};

/// A full-length sequence with non-keyframe rows zeroed, the keyframe
/// mask, and the text condition.
#[derive(Debug, Clone)]
pub struct MaskedSequence<T: Real> {
    frames: Vec<T>,
    mask: Vec<bool>,
    condition: Condition<T>,
    motion_len: usize,
    frame_dim: usize,
}

impl<T: Real> MaskedSequence<T> {
    pub fn frames_flat(&self) -> &[T] {
        &self.frames
    }

    pub fn frame(&self, k: usize) -> &[T] {
        &self.frames[k * self.frame_dim..(k + 1) * self.frame_dim]
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn condition(&self) -> &Condition<T> {
        &self.condition
    }

    pub fn motion_len(&self) -> usize {
        self.motion_len
    }

    pub fn frame_dim(&self) -> usize {
        self.frame_dim
    }

    /// Number of keyframe rows (mask popcount).
    pub fn keyframe_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

/// Places keyframe payloads at their indices in an otherwise zero
/// `N × d` grid. Index validity (strictly increasing, in range) is
/// guaranteed by the [`Keyframes`] invariants.
pub fn build_masked<T: Real>(kf: &Keyframes<T>, condition: Condition<T>) -> MaskedSequence<T> {
    let (n, d) = (kf.motion_len(), kf.frame_dim());
    let mut frames = vec![T::zero(); n * d];
    let mut mask = vec![false; n];
    for (slot, &idx) in kf.indices().iter().enumerate() {
        frames[idx * d..(idx + 1) * d].copy_from_slice(kf.row(slot));
        mask[idx] = true;
    }
    MaskedSequence { frames, mask, condition, motion_len: n, frame_dim: d }
}

/// Hyperparameters of the masked autoencoder.
#[derive(Debug, Clone)]
pub struct MmaeConfig {
    pub motion_len: usize,
    pub frame_dim: usize,
    /// Raw condition-embedding width fed by the text encoder.
    pub cond_dim: usize,
    pub layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub hidden_dim: usize,
    pub dropout: f64,
    pub lambda_fk: f64,
    pub lambda_bl: f64,
    pub lambda_sm: f64,
    /// Probability of replacing the condition by the unconditional token
    /// during training.
    pub p_uncond: f64,
}

impl MmaeConfig {
    /// Defaults: 8 layers, model_dim 512, 8 heads, hidden 2048, dropout
    /// 0.1, unit loss weights, p_u = 0.1.
    pub fn new(motion_len: usize, frame_dim: usize, cond_dim: usize) -> Self {
        MmaeConfig {
            motion_len,
            frame_dim,
            cond_dim,
            layers: 8,
            model_dim: 512,
            heads: 8,
            hidden_dim: 2048,
            dropout: 0.1,
            lambda_fk: 1.0,
            lambda_bl: 1.0,
            lambda_sm: 1.0,
            p_uncond: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.motion_len < 2 {
            return Err(Error::invalid("motion_len must be at least 2"));
        }
        if self.frame_dim == 0 || self.cond_dim == 0 {
            return Err(Error::invalid("frame and condition dimensions must be positive"));
        }
        if self.layers == 0 {
            return Err(Error::invalid("layer count must be at least 1"));
        }
        if self.model_dim % 2 != 0 {
            return Err(Error::invalid("model_dim must be even for the positional encoding"));
        }
        if !(0.0..=1.0).contains(&self.p_uncond) {
            return Err(Error::invalid(format!("p_uncond must be in [0, 1], got {}", self.p_uncond)));
        }
        LayerConfig::new(self.model_dim, self.hidden_dim, self.heads, self.dropout)?;
        Ok(())
    }

    pub fn hash(&self) -> u64 {
        let canon = format!(
            "mmae:{}:{}:{}:{}:{}:{}:{}",
            self.motion_len, self.frame_dim, self.cond_dim, self.layers, self.model_dim, self.heads, self.hidden_dim,
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

/// The conditioned infilling transformer.
pub struct Mmae<T: Real> {
    cfg: MmaeConfig,
    params: ParamSet<T>,
    in_embed: Linear<T>,
    cond_proj: Linear<T>,
    null_cond: Tensor<T>,
    layers: Vec<EncoderLayer<T>>,
    out_head: Linear<T>,
}

impl<T: Real> Mmae<T> {
    pub fn new(cfg: MmaeConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = Prng::derive(seed, "mmae-init");
        let mut params = ParamSet::new();
        let lc = cfg.layer_config();
        let in_embed = Linear::new(&mut params, "mmae.in_embed", cfg.frame_dim, cfg.model_dim, &mut rng);
        let cond_proj = Linear::new(&mut params, "mmae.cond_proj", cfg.cond_dim, cfg.model_dim, &mut rng);
        let null_cond = params.register(
            "mmae.null_cond",
            Tensor::param((0..cfg.cond_dim).map(|_| T::c(rng.normal_f64() * 0.02)).collect(), &[1, cfg.cond_dim]),
        );
        let layers = (0..cfg.layers)
            .map(|i| EncoderLayer::new(&mut params, &format!("mmae.enc.{i}"), &lc, &mut rng))
            .collect();
        let out_head = Linear::new(&mut params, "mmae.out_head", cfg.model_dim, cfg.frame_dim, &mut rng);
        Ok(Mmae { cfg, params, in_embed, cond_proj, null_cond, layers, out_head })
    }

    pub fn config(&self) -> &MmaeConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    /// Predicted full sequence `[N, d]` in evaluation mode.
    pub fn forward(&self, ms: &MaskedSequence<T>) -> Result<Tensor<T>> {
        self.forward_ctx(ms, &mut ForwardCtx::eval())
    }

    pub fn forward_ctx(&self, ms: &MaskedSequence<T>, ctx: &mut ForwardCtx<'_>) -> Result<Tensor<T>> {
        let (n, d) = (self.cfg.motion_len, self.cfg.frame_dim);
        if ms.motion_len() != n || ms.frame_dim() != d {
            return Err(Error::dim(
                "masked sequence",
                format!("[{n}, {d}]"),
                format!("[{}, {}]", ms.motion_len(), ms.frame_dim()),
            ));
        }
        let cond = ms.condition();
        if !cond.is_unconditional() && cond.dim() != self.cfg.cond_dim {
            return Err(Error::dim("condition embedding", self.cfg.cond_dim, cond.dim()));
        }
        let cond_row = if cond.is_unconditional() {
            self.null_cond.clone()
        } else {
            Tensor::from_vec(cond.embedding().to_vec(), &[1, self.cfg.cond_dim])
        };
        let cond_tok = self.cond_proj.forward(&cond_row)?;
        let frames = Tensor::from_vec(ms.frames_flat().to_vec(), &[n, d]);
        let mut x = self.in_embed.forward(&frames)?.add(&sinusoidal_pe(n, self.cfg.model_dim)?);
        for layer in &self.layers {
            let head = x.narrow(0, 0, 1).add(&cond_tok);
            x = if n == 1 { head } else { Tensor::cat(&[&head, &x.narrow(0, 1, n - 1)], 0) };
            x = layer.forward(&x, ctx)?;
        }
        self.out_head.forward(&x)
    }
}

/// Differentiable world-space joint positions `[N, 3·J]` of a frame
/// tensor `[N, d]`, mirroring [`forward_kinematics`]: yaw integrates the
/// angular-velocity channel from zero, the planar root integrates the
/// yaw-rotated XZ velocity from the origin, and each non-root joint is
/// its local position rotated by the current yaw and offset by the root.
pub fn fk_positions_tensor<T: Real>(frames: &Tensor<T>, skel: &Skeleton<T>) -> Result<Tensor<T>> {
    let layout = skel.layout();
    if frames.rank() != 2 || frames.cols() != layout.dim() {
        return Err(Error::dim("frame tensor width", layout.dim(), frames.cols()));
    }
    let n = frames.rows();
    let prefix = exclusive_prefix_sum_matrix(n);
    let psi = prefix.matmul(&frames.narrow(1, 0, 1));
    let (c, s) = (psi.cos(), psi.sin());
    let vx = frames.narrow(1, 1, 1);
    let vz = frames.narrow(1, 2, 1);
    let wvx = c.mul(&vx).add(&s.mul(&vz));
    let wvz = c.mul(&vz).sub(&s.mul(&vx));
    let rx = prefix.matmul(&wvx);
    let rz = prefix.matmul(&wvz);
    let ry = frames.narrow(1, 3, 1);
    let mut cols = vec![rx.clone(), ry.clone(), rz.clone()];
    let base = layout.local_positions().start;
    for j in 1..skel.joints() {
        let lx = frames.narrow(1, base + 3 * (j - 1), 1);
        let ly = frames.narrow(1, base + 3 * (j - 1) + 1, 1);
        let lz = frames.narrow(1, base + 3 * (j - 1) + 2, 1);
        cols.push(rx.add(&c.mul(&lx).add(&s.mul(&lz))));
        cols.push(ry.add(&ly));
        cols.push(rz.add(&c.mul(&lz).sub(&s.mul(&lx))));
    }
    let refs: Vec<&Tensor<T>> = cols.iter().collect();
    Ok(Tensor::cat(&refs, 1))
}

/// `[N, N]` forward-difference operator: row k maps positions to
/// `p_{k+1} − p_k`; the last row duplicates the previous velocity.
fn forward_diff_matrix<T: Real>(n: usize) -> Tensor<T> {
    debug_assert!(n >= 2);
    let mut data = vec![T::zero(); n * n];
    for k in 0..n - 1 {
        data[k * n + k] = -T::one();
        data[k * n + k + 1] = T::one();
    }
    data[(n - 1) * n + n - 2] = -T::one();
    data[(n - 1) * n + n - 1] = T::one();
    Tensor::from_vec(data, &[n, n])
}

/// Mean over rows of the row-wise Euclidean norm.
fn mean_row_l2<T: Real>(diff: &Tensor<T>) -> Tensor<T> {
    let n = diff.rows();
    diff.mul(diff).sum_axis(1).sqrt().sum_all().scale(T::one() / T::from_usize(n).unwrap())
}

/// Per-term values of the infilling objective.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct MmaeLossBreakdown {
    pub total: f64,
    pub reconstruction: f64,
    pub fk_position: f64,
    pub bone_length: f64,
    pub smoothness: f64,
}

/// Full infilling objective. Returns the scalar loss tensor (for
/// backward) and the per-term breakdown:
/// reconstruction = mean per-frame ℓ2 of (pred − target);
/// fk_position = mean per-frame ℓ2 between world joint positions;
/// bone_length = mean absolute bone-length deviation over frames and
/// bones; smoothness = mean per-joint ℓ2 between forward-difference
/// velocities of the world positions.
pub fn mmae_loss<T: Real>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    skel: &Skeleton<T>,
    cfg: &MmaeConfig,
) -> Result<(Tensor<T>, MmaeLossBreakdown)> {
    let (n, d) = (cfg.motion_len, cfg.frame_dim);
    if skel.layout().dim() != d {
        return Err(Error::dim("skeleton frame width", d, skel.layout().dim()));
    }
    if pred.shape() != [n, d] {
        return Err(Error::dim("prediction", format!("[{n}, {d}]"), format!("{:?}", pred.shape())));
    }
    if target.shape() != [n, d] {
        return Err(Error::dim("target", format!("[{n}, {d}]"), format!("{:?}", target.shape())));
    }
    let joints = skel.joints();

    let l_rec = mean_row_l2(&pred.sub(target));

    let fk_pred = fk_positions_tensor(pred, skel)?;
    let fk_target = fk_positions_tensor(target, skel)?;
    let l_fk = mean_row_l2(&fk_pred.sub(&fk_target));

    let bones_pred = bone_length_tensors(pred, skel);
    let bones_target = bone_length_tensors(target, skel);
    let mut bl_sum = Tensor::zeros(&[1]);
    for (bp, bt) in bones_pred.iter().zip(&bones_target) {
        bl_sum = bl_sum.add(&bp.sub(bt).abs().sum_all());
    }
    let l_bl = bl_sum.scale(T::one() / T::from_usize(n * (joints - 1)).unwrap());

    let diff_op = forward_diff_matrix(n);
    let vel_diff = diff_op.matmul(&fk_pred).sub(&diff_op.matmul(&fk_target));
    let mut sm_sum = Tensor::zeros(&[1]);
    for j in 0..joints {
        let block = vel_diff.narrow(1, 3 * j, 3);
        sm_sum = sm_sum.add(&block.mul(&block).sum_axis(1).sqrt().sum_all());
    }
    let l_sm = sm_sum.scale(T::one() / T::from_usize(n * joints).unwrap());

    let total = l_rec
        .add(&l_fk.scale(T::c(cfg.lambda_fk)))
        .add(&l_bl.scale(T::c(cfg.lambda_bl)))
        .add(&l_sm.scale(T::c(cfg.lambda_sm)));
    let breakdown = MmaeLossBreakdown {
        total: total.item().f64(),
        reconstruction: l_rec.item().f64(),
        fk_position: l_fk.item().f64(),
        bone_length: l_bl.item().f64(),
        smoothness: l_sm.item().f64(),
    };
    Ok((total, breakdown))
}

/// Fills the gaps between keyframes: builds the masked input, runs the
/// model, and returns the predicted sequence. Keyframe rows are the
/// model's predictions; `pin_keyframes` overwrites them with the inputs
/// instead.
pub fn infill<T: Real>(
    mmae: &Mmae<T>,
    kf: &Keyframes<T>,
    condition: Condition<T>,
    frame_rate: f64,
    pin_keyframes: bool,
) -> Result<MotionSequence<T>> {
    let ms = build_masked(kf, condition);
    let pred = mmae.forward(&ms)?;
    let mut data = pred.data_vec();
    if pin_keyframes {
        let d = kf.frame_dim();
        for (slot, &idx) in kf.indices().iter().enumerate() {
            data[idx * d..(idx + 1) * d].copy_from_slice(kf.row(slot));
        }
    }
    let layout = FrameLayout::from_dim(kf.frame_dim())?;
    MotionSequence::new(data, kf.motion_len(), layout.joints, frame_rate)
}

/// Per-epoch mean loss terms of a training run.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct MmaeEpochStats {
    pub total: f64,
    pub reconstruction: f64,
    pub fk_position: f64,
    pub bone_length: f64,
    pub smoothness: f64,
}

/// Trains the infilling model: per sample, keyframes are selected at
/// `rate`, the masked input is built, the condition is dropped to the
/// unconditional token with probability `p_uncond`, and the full
/// objective is optimized with Adam.
#[allow(clippy::too_many_arguments)]
pub fn train_mmae<T: Real>(
    mmae: &Mmae<T>,
    dataset: &[(MotionSequence<T>, Condition<T>)],
    selector: SelectorKind,
    rate: f64,
    skel: &Skeleton<T>,
    epochs: usize,
    lr: f64,
    rng: &mut Prng,
) -> Result<Vec<MmaeEpochStats>> {
    if dataset.is_empty() {
        return Err(Error::invalid("training dataset must not be empty"));
    }
    let cfg = mmae.config();
    for (seq, cond) in dataset {
        if seq.len() != cfg.motion_len || seq.dim() != cfg.frame_dim {
            return Err(Error::dim(
                "training sequence",
                format!("[{}, {}]", cfg.motion_len, cfg.frame_dim),
                format!("[{}, {}]", seq.len(), seq.dim()),
            ));
        }
        if !cond.is_unconditional() && cond.dim() != cfg.cond_dim {
            return Err(Error::dim("condition embedding", cfg.cond_dim, cond.dim()));
        }
    }
    let mut adam = Adam::new(lr);
    let mut history = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let mut acc = MmaeEpochStats {
            total: 0.0,
            reconstruction: 0.0,
            fk_position: 0.0,
            bone_length: 0.0,
            smoothness: 0.0,
        };
        for (seq, cond) in dataset {
            let k = keyframe_count(seq.len(), rate);
            let set = selector.select(seq, k)?;
            let kf = Keyframes::extract(seq, &set)?;
            let used = if rng.uniform_f64() < cfg.p_uncond {
                Condition::unconditional(cfg.cond_dim)
            } else {
                cond.clone()
            };
            let ms = build_masked(&kf, used);
            let mut drop_rng = Prng::seed_from_u64(rng.next_u64());
            let mut ctx = ForwardCtx::train(&mut drop_rng);
            let pred = mmae.forward_ctx(&ms, &mut ctx)?;
            let target = Tensor::from_vec(seq.frames_flat().to_vec(), &[cfg.motion_len, cfg.frame_dim]);
            let (loss, br) = mmae_loss(&pred, &target, skel, cfg)?;
            loss.backward();
            adam.step(&mmae.params);
            mmae.params.zero_grads();
            acc.total += br.total;
            acc.reconstruction += br.reconstruction;
            acc.fk_position += br.fk_position;
            acc.bone_length += br.bone_length;
            acc.smoothness += br.smoothness;
        }
        let m = dataset.len() as f64;
        history.push(MmaeEpochStats {
            total: acc.total / m,
            reconstruction: acc.reconstruction / m,
            fk_position: acc.fk_position / m,
            bone_length: acc.bone_length / m,
            smoothness: acc.smoothness / m,
        });
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::{bone_lengths, forward_kinematics, forward_kinematics_isolated, JointPositions};
    use crate::nn::grad_check;
    use crate::select::KeyframeSet;
    use approx::assert_relative_eq;

    fn toy_sequence(n: usize, seed: u64, scale: f64) -> MotionSequence<f64> {
        let skel = Skeleton::<f64>::toy();
        let d = skel.layout().dim();
        let mut rng = Prng::seed_from_u64(seed);
        let frames: Vec<f64> = rng.normal_vec::<f64>(n * d).iter().map(|v| v * scale).collect();
        MotionSequence::new(frames, n, skel.joints(), 20.0).unwrap()
    }

    fn tiny_cfg(n: usize) -> MmaeConfig {
        let d = Skeleton::<f64>::toy().layout().dim();
        MmaeConfig {
            layers: 1,
            model_dim: 8,
            heads: 2,
            hidden_dim: 16,
            dropout: 0.0,
            ..MmaeConfig::new(n, d, 6)
        }
    }

    fn extract_kf(seq: &MotionSequence<f64>, indices: Vec<usize>) -> Keyframes<f64> {
        let set = KeyframeSet::new(indices, seq.len()).unwrap();
        Keyframes::extract(seq, &set).unwrap()
    }

    fn seq_tensor(seq: &MotionSequence<f64>) -> Tensor<f64> {
        Tensor::from_vec(seq.frames_flat().to_vec(), &[seq.len(), seq.dim()])
    }

    #[test]
    fn build_masked_places_payloads_and_zeros() {
        let seq = toy_sequence(6, 1, 0.5);
        let cond = Condition::from_text("walk", 6).unwrap();
        let kf = extract_kf(&seq, vec![0, 5]);
        let ms = build_masked(&kf, cond.clone());
        assert_eq!(ms.keyframe_count(), 2);
        assert_eq!(ms.mask(), &[true, false, false, false, false, true]);
        assert_eq!(ms.frame(0), seq.frame(0));
        assert_eq!(ms.frame(5), seq.frame(5));
        for k in 1..5 {
            assert!(ms.frame(k).iter().all(|v| *v == 0.0), "row {k} should be zero");
        }

        // K = N leaves no zero rows and every payload intact.
        let full = build_masked(&extract_kf(&seq, (0..6).collect()), cond);
        assert_eq!(full.keyframe_count(), 6);
        assert_eq!(full.frames_flat(), seq.frames_flat());
    }

    #[test]
    fn invalid_keyframes_are_rejected_upstream() {
        assert!(KeyframeSet::new(vec![0, 0, 3], 6).is_err());
        assert!(KeyframeSet::new(vec![0, 7], 6).is_err());
        assert!(KeyframeSet::new(vec![3, 1], 6).is_err());
    }

    #[test]
    fn forward_shape_and_eval_determinism() {
        let cfg = tiny_cfg(6);
        let (n, d) = (cfg.motion_len, cfg.frame_dim);
        let mmae = Mmae::<f64>::new(cfg, 2).unwrap();
        let seq = toy_sequence(6, 3, 0.5);
        let ms = build_masked(&extract_kf(&seq, vec![0, 2, 5]), Condition::from_text("walk", 6).unwrap());
        let a = mmae.forward(&ms).unwrap();
        assert_eq!(a.shape(), &[n, d]);
        let b = mmae.forward(&ms).unwrap();
        assert_eq!(a.data_vec(), b.data_vec());
        let mu = build_masked(&extract_kf(&seq, vec![0, 2, 5]), Condition::unconditional(6));
        assert_eq!(mmae.forward(&mu).unwrap().shape(), &[n, d]);
    }

    #[test]
    fn tensor_fk_matches_scalar_forward_kinematics() {
        let skel = Skeleton::<f64>::toy();
        for seed in 0..5u64 {
            let seq = toy_sequence(7, 40 + seed, 0.8);
            let got = fk_positions_tensor(&seq_tensor(&seq), &skel).unwrap();
            let want = forward_kinematics(&seq, &skel).unwrap();
            let g = got.data_vec();
            let w = want.as_slice();
            assert_eq!(g.len(), w.len());
            for (a, b) in g.iter().zip(w) {
                assert_relative_eq!(a, b, epsilon = 1e-12, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn loss_is_zero_for_perfect_prediction() {
        let skel = Skeleton::<f64>::toy();
        let cfg = tiny_cfg(5);
        let seq = toy_sequence(5, 7, 0.5);
        let t = seq_tensor(&seq);
        let (total, br) = mmae_loss(&t, &t, &skel, &cfg).unwrap();
        assert_eq!(total.item(), 0.0);
        assert_eq!(br.reconstruction, 0.0);
        assert_eq!(br.fk_position, 0.0);
        assert_eq!(br.bone_length, 0.0);
        assert_eq!(br.smoothness, 0.0);
    }

    #[test]
    fn constant_height_offset_moves_fk_but_not_smoothness() {
        let skel = Skeleton::<f64>::toy();
        let cfg = tiny_cfg(6);
        let seq = toy_sequence(6, 8, 0.5);
        let target = seq_tensor(&seq);
        let mut data = seq.frames_flat().to_vec();
        let height_col = skel.layout().root_height().start;
        for k in 0..seq.len() {
            data[k * seq.dim() + height_col] += 0.37;
        }
        let pred = Tensor::from_vec(data, &[seq.len(), seq.dim()]);
        let (_, br) = mmae_loss(&pred, &target, &skel, &cfg).unwrap();
        assert!(br.fk_position > 0.1, "height offset must move world positions");
        assert!(br.smoothness < 1e-9, "differencing kills constants, got {}", br.smoothness);
        assert!(br.bone_length < 1e-12, "bone lengths do not involve the root height");
    }

    #[test]
    fn loss_matches_scalar_loop_oracle() {
        let skel = Skeleton::<f64>::toy();
        let j = skel.joints();
        let cfg = tiny_cfg(6);
        let seq_p = toy_sequence(6, 9, 0.6);
        let seq_t = toy_sequence(6, 10, 0.6);
        let (n, d) = (seq_p.len(), seq_p.dim());
        let (_, br) = mmae_loss(&seq_tensor(&seq_p), &seq_tensor(&seq_t), &skel, &cfg).unwrap();

        let mut rec = 0.0;
        for k in 0..n {
            let mut sq = 0.0;
            for c in 0..d {
                let diff = seq_p.frame(k)[c] - seq_t.frame(k)[c];
                sq += diff * diff;
            }
            rec += sq.sqrt();
        }
        rec /= n as f64;
        assert_relative_eq!(br.reconstruction, rec, max_relative = 1e-10);

        let fp = forward_kinematics(&seq_p, &skel).unwrap();
        let ft = forward_kinematics(&seq_t, &skel).unwrap();
        let mut fk = 0.0;
        for k in 0..n {
            let mut sq = 0.0;
            for joint in 0..j {
                let a = fp.get(k, joint);
                let b = ft.get(k, joint);
                for c in 0..3 {
                    sq += (a[c] - b[c]) * (a[c] - b[c]);
                }
            }
            fk += sq.sqrt();
        }
        fk /= n as f64;
        assert_relative_eq!(br.fk_position, fk, max_relative = 1e-10);

        let bp = bone_lengths(&forward_kinematics_isolated(&seq_p, &skel).unwrap(), &skel).unwrap();
        let bt = bone_lengths(&forward_kinematics_isolated(&seq_t, &skel).unwrap(), &skel).unwrap();
        let bl = bp.iter().zip(&bt).map(|(a, b)| (a - b).abs()).sum::<f64>() / (n * (j - 1)) as f64;
        assert_relative_eq!(br.bone_length, bl, max_relative = 1e-10);

        let vel = |p: &JointPositions<f64>, k: usize, joint: usize| -> [f64; 3] {
            let k = if k == n - 1 { n - 2 } else { k };
            let a = p.get(k + 1, joint);
            let b = p.get(k, joint);
            [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
        };
        let mut sm = 0.0;
        for k in 0..n {
            for joint in 0..j {
                let vp = vel(&fp, k, joint);
                let vt = vel(&ft, k, joint);
                let mut sq = 0.0;
                for c in 0..3 {
                    sq += (vp[c] - vt[c]) * (vp[c] - vt[c]);
                }
                sm += sq.sqrt();
            }
        }
        sm /= (n * j) as f64;
        assert_relative_eq!(br.smoothness, sm, max_relative = 1e-10);

        let explicit = rec + cfg.lambda_fk * fk + cfg.lambda_bl * bl + cfg.lambda_sm * sm;
        assert_relative_eq!(br.total, explicit, max_relative = 1e-10);
    }

    #[test]
    fn full_objective_gradient_matches_finite_differences() {
        let skel = Skeleton::<f64>::toy();
        let cfg = tiny_cfg(4);
        let mmae = Mmae::<f64>::new(cfg.clone(), 20).unwrap();
        let seq = toy_sequence(4, 21, 0.5);
        let ms = build_masked(&extract_kf(&seq, vec![0, 3]), Condition::from_text("walk fast", 6).unwrap());
        let target_data = seq.frames_flat().to_vec();
        let rel = grad_check(
            mmae.params(),
            || {
                let pred = mmae.forward(&ms)?;
                let target = Tensor::from_vec(target_data.clone(), &[4, cfg.frame_dim]);
                Ok(mmae_loss(&pred, &target, &skel, &cfg)?.0)
            },
            1e-5,
        )
        .unwrap();
        assert!(rel < 1e-5, "infilling gradient mismatch: rel = {rel}");
    }

    #[test]
    fn infill_returns_sequence_and_pins_keyframes_on_request() {
        let cfg = tiny_cfg(6);
        let mmae = Mmae::<f64>::new(cfg, 22).unwrap();
        let seq = toy_sequence(6, 23, 0.5);
        let kf = extract_kf(&seq, vec![0, 2, 5]);
        let cond = Condition::from_text("walk", 6).unwrap();
        let free = infill(&mmae, &kf, cond.clone(), 20.0, false).unwrap();
        assert_eq!(free.len(), 6);
        assert_eq!(free.dim(), seq.dim());
        assert_relative_eq!(free.frame_rate, 20.0);
        let again = infill(&mmae, &kf, cond.clone(), 20.0, false).unwrap();
        assert_eq!(free.frames_flat(), again.frames_flat());
        // Untrained model does not reproduce keyframes exactly...
        assert_ne!(free.frame(2), seq.frame(2));
        // ...unless they are pinned.
        let pinned = infill(&mmae, &kf, cond, 20.0, true).unwrap();
        assert_eq!(pinned.frame(0), seq.frame(0));
        assert_eq!(pinned.frame(2), seq.frame(2));
        assert_eq!(pinned.frame(5), seq.frame(5));
        assert_ne!(pinned.frame(1), seq.frame(1));
    }

    #[test]
    fn training_reduces_loss_and_conditioning_matters() {
        let cfg = tiny_cfg(6);
        let mmae = Mmae::<f64>::new(MmaeConfig { p_uncond: 0.2, ..cfg }, 24).unwrap();
        let skel = Skeleton::<f64>::toy();
        let dataset: Vec<(MotionSequence<f64>, Condition<f64>)> = (0..3)
            .map(|i| {
                let seq = toy_sequence(6, 30 + i, 0.4);
                let text = if i % 2 == 0 { "walk forward" } else { "jump high" };
                (seq, Condition::from_text(text, 6).unwrap())
            })
            .collect();
        let mut rng = Prng::seed_from_u64(25);

        let before: Vec<Vec<f64>> = mmae.params().iter().map(|(_, t)| t.data_vec()).collect();
        let empty =
            train_mmae(&mmae, &dataset, SelectorKind::Uniform, 0.4, &skel, 0, 1e-3, &mut rng).unwrap();
        assert!(empty.is_empty());
        let after: Vec<Vec<f64>> = mmae.params().iter().map(|(_, t)| t.data_vec()).collect();
        assert_eq!(before, after);

        let history =
            train_mmae(&mmae, &dataset, SelectorKind::Uniform, 0.4, &skel, 30, 3e-3, &mut rng).unwrap();
        assert_eq!(history.len(), 30);
        assert!(
            history.last().unwrap().total < 0.8 * history[0].total,
            "loss did not decrease: first {}, last {}",
            history[0].total,
            history.last().unwrap().total
        );

        // Trained conditioning is non-degenerate: different text changes
        // the prediction.
        let kf = extract_kf(&dataset[0].0, vec![0, 2, 5]);
        let a = mmae.forward(&build_masked(&kf, Condition::from_text("walk forward", 6).unwrap())).unwrap();
        let b = mmae.forward(&build_masked(&kf, Condition::from_text("jump high", 6).unwrap())).unwrap();
        let diff = noise_l2_like(&a, &b);
        assert!(diff > 0.0, "conditioning has no effect on the output");

        assert!(train_mmae(&mmae, &[], SelectorKind::Uniform, 0.4, &skel, 1, 1e-3, &mut rng).is_err());
    }

    fn noise_l2_like(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
        a.data_vec().iter().zip(b.data_vec()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    }

    #[test]
    fn forward_diff_matrix_repeats_last_velocity() {
        let d = forward_diff_matrix::<f64>(4);
        let p = Tensor::from_vec(vec![0.0, 1.0, 3.0, 6.0], &[4, 1]);
        let v = d.matmul(&p).data_vec();
        assert_eq!(v, vec![1.0, 2.0, 3.0, 3.0]);
    }

    #[test]
    fn config_validation_and_hash() {
        let cfg = tiny_cfg(6);
        assert!(cfg.validate().is_ok());
        assert_ne!(cfg.hash(), MmaeConfig { model_dim: 16, ..tiny_cfg(6) }.hash());
        assert!(MmaeConfig { motion_len: 1, ..tiny_cfg(6) }.validate().is_err());
        assert!(MmaeConfig { layers: 0, ..tiny_cfg(6) }.validate().is_err());
        assert!(MmaeConfig { p_uncond: 1.5, ..tiny_cfg(6) }.validate().is_err());
    }
}
