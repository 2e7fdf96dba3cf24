//! Pipeline configuration: a single JSON document with sections
//! `motion` / `select` / `vae` / `diff` / `mmae` / `metrics`, plus
//! optional top-level `seed` and `out` defaults that the command-line
//! flags override. Unknown keys anywhere are rejected.
//!
//! Every field has a default, documented on the field itself, tuned so
//! the whole pipeline runs in minutes on the 5-joint toy skeleton. The
//! in-crate model defaults target the full-scale setup instead; this
//! file is the desk-scale profile.

use keymotion::diffusion::{NoiseSchedule, PstConfig, SampleMode};
use keymotion::mmae::MmaeConfig;
use keymotion::motion::{FrameLayout, Skeleton};
use keymotion::select::{keyframe_count, SelectorKind};
use keymotion::vae::VaeConfig;
use keymotion::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Skeleton, sequence shape, and conditioning width shared by all stages.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MotionSection {
    /// Joint count: 5 (toy) or 22 (humanoid). Default 5.
    pub joints: usize,
    /// Frames per sequence N. Default 48.
    pub length: usize,
    /// Frames per second stamped on generated files. Default 20.
    pub frame_rate: f64,
    /// Width of the hashed text embedding. Default 32.
    pub cond_dim: usize,
}

impl Default for MotionSection {
    fn default() -> Self {
        MotionSection { joints: 5, length: 48, frame_rate: 20.0, cond_dim: 32 }
    }
}

/// Keyframe selection used for VAE training data and MMAE masking.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectSection {
    /// Selector: `uniform`, `mdo`, `mieo`, or `imdo`. Default `mdo`.
    pub method: String,
    /// Keyframe ratio in (0, 1]; K = max(2, round(rate * N)). Default 0.1.
    pub rate: f64,
}

impl Default for SelectSection {
    fn default() -> Self {
        SelectSection { method: "mdo".to_string(), rate: 0.1 }
    }
}

/// Keyframe VAE architecture and training schedule.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VaeSection {
    /// Latent token count s_l. Default 2.
    pub latent_tokens: usize,
    /// Latent token width d_l. Default 16.
    pub latent_dim: usize,
    /// Keyframe-content embedding width. Default 48.
    pub kf_embed_dim: usize,
    /// Keyframe-index embedding width (even). Default 16.
    pub idx_embed_dim: usize,
    /// Encoder depth. Default 2.
    pub enc_layers: usize,
    /// Decoder depth. Default 2.
    pub dec_layers: usize,
    /// Attention heads. Default 4.
    pub heads: usize,
    /// Feed-forward width. Default 128.
    pub hidden_dim: usize,
    /// Dropout rate. Default 0.
    pub dropout: f64,
    /// KL weight. Default 1e-4.
    pub lambda_kl: f64,
    /// Bone-length consistency weight. Default 1.
    pub lambda_bl: f64,
    /// Index regression weight. Default 1.
    pub lambda_pos: f64,
    /// Training epochs. Default 400.
    pub epochs: usize,
    /// Adam learning rate (halved to 0.4x midway). Default 1e-3.
    pub lr: f64,
}

impl Default for VaeSection {
    fn default() -> Self {
        VaeSection {
            latent_tokens: 2,
            latent_dim: 16,
            kf_embed_dim: 48,
            idx_embed_dim: 16,
            enc_layers: 2,
            dec_layers: 2,
            heads: 4,
            hidden_dim: 128,
            dropout: 0.0,
            lambda_kl: 1e-4,
            lambda_bl: 1.0,
            lambda_pos: 1.0,
            epochs: 400,
            lr: 1e-3,
        }
    }
}

/// Latent diffusion: noise schedule, denoiser architecture, sampling.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffSection {
    /// Training timesteps T. Default 200.
    pub t_max: usize,
    /// Scaled-linear schedule start. Default 0.00085.
    pub beta_start: f64,
    /// Scaled-linear schedule end. Default 0.012.
    pub beta_end: f64,
    /// Condition-stream self-attention layers N_s. Default 1.
    pub self_layers: usize,
    /// Co-attention layers N_c. Default 3.
    pub cross_layers: usize,
    /// Transformer width. Default 32.
    pub model_dim: usize,
    /// Attention heads. Default 4.
    pub heads: usize,
    /// Feed-forward width. Default 64.
    pub hidden_dim: usize,
    /// Dropout rate. Default 0.
    pub dropout: f64,
    /// Training probability of dropping the condition. Default 0.1.
    pub p_uncond: f64,
    /// Classifier-free guidance factor at sampling time. Default 2.5.
    pub guidance: f64,
    /// Reverse-process steps at sampling time. Default 25.
    pub steps: usize,
    /// Sampler: `ddim` (deterministic) or `ddpm`. Default `ddim`.
    pub mode: String,
    /// Training epochs. Default 400.
    pub epochs: usize,
    /// Adam learning rate. Default 1e-3.
    pub lr: f64,
}

impl Default for DiffSection {
    fn default() -> Self {
        DiffSection {
            t_max: 200,
            beta_start: 0.00085,
            beta_end: 0.012,
            self_layers: 1,
            cross_layers: 3,
            model_dim: 32,
            heads: 4,
            hidden_dim: 64,
            dropout: 0.0,
            p_uncond: 0.1,
            guidance: 2.5,
            steps: 25,
            mode: "ddim".to_string(),
            epochs: 400,
            lr: 1e-3,
        }
    }
}

/// Masked-autoencoder infilling model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MmaeSection {
    /// Encoder depth. Default 2.
    pub layers: usize,
    /// Transformer width. Default 48.
    pub model_dim: usize,
    /// Attention heads. Default 4.
    pub heads: usize,
    /// Feed-forward width. Default 128.
    pub hidden_dim: usize,
    /// Dropout rate. Default 0.
    pub dropout: f64,
    /// Forward-kinematics position weight. Default 1.
    pub lambda_fk: f64,
    /// Bone-length weight. Default 1.
    pub lambda_bl: f64,
    /// Velocity-smoothness weight. Default 1.
    pub lambda_sm: f64,
    /// Training probability of dropping the condition. Default 0.1.
    pub p_uncond: f64,
    /// Training epochs. Default 300.
    pub epochs: usize,
    /// Adam learning rate. Default 1e-3.
    pub lr: f64,
}

impl Default for MmaeSection {
    fn default() -> Self {
        MmaeSection {
            layers: 2,
            model_dim: 48,
            heads: 4,
            hidden_dim: 128,
            dropout: 0.0,
            lambda_fk: 1.0,
            lambda_bl: 1.0,
            lambda_sm: 1.0,
            p_uncond: 0.1,
            epochs: 300,
            lr: 1e-3,
        }
    }
}

/// Evaluation protocol.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsSection {
    /// Repeats behind every mean ± CI. Default 20.
    pub repeats: usize,
    /// Subset size for diversity (clamped to half the corpus). Default 8.
    pub diversity_subset: usize,
    /// Candidate pool for R-precision. Default 4.
    pub rprecision_pool: usize,
    /// Top-k for R-precision. Default 1.
    pub rprecision_topk: usize,
    /// Seed of the fixed feature projection. Default 97.
    pub feature_seed: u64,
}

impl Default for MetricsSection {
    fn default() -> Self {
        MetricsSection {
            repeats: 20,
            diversity_subset: 8,
            rprecision_pool: 4,
            rprecision_topk: 1,
            feature_seed: 97,
        }
    }
}

/// The whole configuration document.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Seed used when `--seed` is not given. Default 0.
    pub seed: Option<u64>,
    /// Output directory used when `--out` is not given. Default `out`.
    pub out: Option<String>,
    pub motion: MotionSection,
    pub select: SelectSection,
    pub vae: VaeSection,
    pub diff: DiffSection,
    pub mmae: MmaeSection,
    pub metrics: MetricsSection,
}

impl PipelineConfig {
    /// Reads and validates a configuration file; `None` yields defaults.
    pub fn load(path: Option<&Path>) -> Result<PipelineConfig> {
        let cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                serde_json::from_str::<PipelineConfig>(&text)
                    .map_err(|e| Error::invalid(format!("config {}: {e}", p.display())))?
            }
            None => PipelineConfig::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Cross-field checks plus the per-model validators.
    pub fn validate(&self) -> Result<()> {
        if !(self.select.rate > 0.0 && self.select.rate <= 1.0) {
            return Err(Error::invalid(format!(
                "select.rate must be in (0, 1], got {}",
                self.select.rate
            )));
        }
        if self.motion.length < 4 {
            return Err(Error::invalid("motion.length must be at least 4"));
        }
        if self.metrics.repeats < 2 {
            return Err(Error::invalid("metrics.repeats must be at least 2"));
        }
        self.skeleton()?;
        self.selector()?;
        self.sample_mode()?;
        self.vae_config()?;
        self.pst_config()?;
        self.mmae_config()?;
        NoiseSchedule::<f64>::new(self.diff.t_max, self.diff.beta_start, self.diff.beta_end)?;
        if self.diff.steps == 0 || self.diff.steps > self.diff.t_max {
            return Err(Error::invalid(format!(
                "diff.steps must be in [1, {}], got {}",
                self.diff.t_max, self.diff.steps
            )));
        }
        Ok(())
    }

    pub fn skeleton(&self) -> Result<Skeleton<f64>> {
        match self.motion.joints {
            5 => Ok(Skeleton::toy()),
            22 => Ok(Skeleton::humanoid22()),
            other => Err(Error::invalid(format!(
                "motion.joints must be 5 (toy) or 22 (humanoid), got {other}"
            ))),
        }
    }

    pub fn frame_dim(&self) -> usize {
        FrameLayout::new(self.motion.joints).dim()
    }

    /// Keyframes per sequence implied by the selection rate.
    pub fn keyframe_k(&self) -> usize {
        keyframe_count(self.motion.length, self.select.rate)
    }

    pub fn selector(&self) -> Result<SelectorKind> {
        self.select.method.parse()
    }

    pub fn sample_mode(&self) -> Result<SampleMode> {
        match self.diff.mode.as_str() {
            "ddim" => Ok(SampleMode::Ddim),
            "ddpm" => Ok(SampleMode::Ddpm),
            other => Err(Error::invalid(format!("diff.mode must be ddim or ddpm, got '{other}'"))),
        }
    }

    pub fn vae_config(&self) -> Result<VaeConfig> {
        let v = &self.vae;
        let cfg = VaeConfig {
            latent_tokens: v.latent_tokens,
            latent_dim: v.latent_dim,
            kf_embed_dim: v.kf_embed_dim,
            idx_embed_dim: v.idx_embed_dim,
            enc_layers: v.enc_layers,
            dec_layers: v.dec_layers,
            heads: v.heads,
            hidden_dim: v.hidden_dim,
            dropout: v.dropout,
            lambda_kl: v.lambda_kl,
            lambda_bl: v.lambda_bl,
            lambda_pos: v.lambda_pos,
            ..VaeConfig::new(self.motion.length, self.keyframe_k(), self.frame_dim())
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn pst_config(&self) -> Result<PstConfig> {
        let d = &self.diff;
        let cfg = PstConfig {
            self_layers: d.self_layers,
            cross_layers: d.cross_layers,
            model_dim: d.model_dim,
            heads: d.heads,
            hidden_dim: d.hidden_dim,
            dropout: d.dropout,
            t_max: d.t_max,
            p_uncond: d.p_uncond,
            guidance: d.guidance,
            ..PstConfig::new(self.vae.latent_tokens, self.vae.latent_dim, self.motion.cond_dim)
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn mmae_config(&self) -> Result<MmaeConfig> {
        let m = &self.mmae;
        let cfg = MmaeConfig {
            layers: m.layers,
            model_dim: m.model_dim,
            heads: m.heads,
            hidden_dim: m.hidden_dim,
            dropout: m.dropout,
            lambda_fk: m.lambda_fk,
            lambda_bl: m.lambda_bl,
            lambda_sm: m.lambda_sm,
            p_uncond: m.p_uncond,
            ..MmaeConfig::new(self.motion.length, self.frame_dim(), self.motion.cond_dim)
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn schedule(&self) -> Result<NoiseSchedule<f64>> {
        NoiseSchedule::new(self.diff.t_max, self.diff.beta_start, self.diff.beta_end)
    }
}
