//! Command implementations. Every command is a plain function over the
//! parsed configuration and filesystem paths, so integration tests can
//! drive the full pipeline in-process; the binary is a thin argument
//! parser on top.
//!
//! Determinism: every stochastic step draws from an RNG derived from
//! the user seed and a stage-specific label, so reruns with the same
//! seed produce bit-identical artifacts (wall-clock timing fields
//! excepted).

use crate::artifacts::*;
use crate::config::PipelineConfig;
use keymotion::diffusion::{
    forward_diffuse, sample, train_denoiser, LatentStats, NoiseSchedule, PstConfig, PstDenoiser,
};
use keymotion::features::Condition;
use keymotion::metrics::{
    diversity, fid, mpjpe, multimodality, pampjpe, r_precision, repeat_eval, FeatureDistribution,
    FeatureExtractor, StatProjection,
};
use keymotion::mmae::{build_masked, infill, mmae_loss, train_mmae, Mmae, MmaeConfig};
use keymotion::motion::{
    forward_kinematics, forward_kinematics_isolated, load_motion, load_motion_json, save_motion,
    FrameLayout, MotionSequence, Skeleton,
};
use keymotion::nn::{
    grad_check, load_checkpoint_into, save_checkpoint, CheckpointMeta, EncoderLayer, ForwardCtx,
    LayerConfig, ParamSet, Tensor,
};
use keymotion::rng::Prng;
use keymotion::select::{accumulated_distance, keyframe_count, KeyframeSet, SelectorKind};
use keymotion::synth::{generate, Family};
use keymotion::vae::{train_vae, vae_loss, KeyframeVae, Keyframes, VaeConfig};
use keymotion::{Error, Result};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const VAE_CKPT: &str = "vae.ckpt";
pub const DENOISER_CKPT: &str = "denoiser.ckpt";
pub const MMAE_CKPT: &str = "mmae.ckpt";

/// Stable per-purpose seed derivation so commands never share streams.
fn derive_seed(seed: u64, label: &str) -> u64 {
    Prng::derive(seed, label).next_u64()
}

/// The toy or humanoid skeleton for a joint count found in a file.
pub fn skeleton_for(joints: usize) -> Result<Skeleton<f64>> {
    match joints {
        5 => Ok(Skeleton::toy()),
        22 => Ok(Skeleton::humanoid22()),
        other => Err(Error::invalid(format!(
            "no skeleton with {other} joints (supported: 5, 22)"
        ))),
    }
}

/// Loads `.json` motion via the text format, anything else as binary.
pub fn load_motion_any(path: &Path) -> Result<MotionSequence<f64>> {
    if path.extension().is_some_and(|e| e == "json") {
        load_motion_json(path)
    } else {
        load_motion(path)
    }
}

// ---------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------

/// Generates `count` sequences per family into `out_dir` and writes the
/// manifest. Bit-identical for a given seed; `count = 0` produces an
/// empty manifest.
pub fn cmd_synth(
    cfg: &PipelineConfig,
    families: &[Family],
    count: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    std::fs::create_dir_all(out_dir)?;
    let skel = cfg.skeleton()?;
    let mut entries = Vec::new();
    for family in families {
        for i in 0..count {
            let mut rng = Prng::derive(seed, &format!("synth-{}-{i}", family.name()));
            let (seq, text) =
                generate(*family, &skel, cfg.motion.length, cfg.motion.frame_rate, &mut rng)?;
            let file = format!("{}_{i:04}.kmbin", family.name());
            save_motion(&seq, &out_dir.join(&file))?;
            entries.push(ManifestEntry { file, family: family.name().to_string(), text });
        }
    }
    let manifest = DatasetManifest {
        format: MANIFEST_FORMAT.to_string(),
        version: 1,
        seed,
        joints: cfg.motion.joints,
        frame_dim: cfg.frame_dim(),
        length: cfg.motion.length,
        frame_rate: cfg.motion.frame_rate,
        entries,
    };
    write_json(&manifest, MANIFEST_SCHEMA, &out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Reads a dataset directory written by [`cmd_synth`] (or `sample`).
pub fn read_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<(MotionSequence<f64>, String)>)> {
    let manifest: DatasetManifest = read_json(&dir.join(MANIFEST_FILE), MANIFEST_SCHEMA)?;
    let mut items = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        let seq = load_motion(&dir.join(&entry.file))?;
        if seq.len() != manifest.length || seq.joints() != manifest.joints {
            return Err(Error::dim(
                format!("dataset entry {}", entry.file),
                format!("[{}, {} joints]", manifest.length, manifest.joints),
                format!("[{}, {} joints]", seq.len(), seq.joints()),
            ));
        }
        items.push((seq, entry.text.clone()));
    }
    Ok((manifest, items))
}

// ---------------------------------------------------------------------
// select
// ---------------------------------------------------------------------

/// Selects keyframes from one motion file; `count` overrides the rate.
pub fn cmd_select(
    cfg: &PipelineConfig,
    input: &Path,
    method: Option<&str>,
    rate: Option<f64>,
    count: Option<usize>,
    emit_keyframes: bool,
    out_dir: &Path,
) -> Result<SelectReport> {
    std::fs::create_dir_all(out_dir)?;
    let seq = load_motion_any(input)?;
    let selector: SelectorKind = method.unwrap_or(&cfg.select.method).parse()?;
    let k = match count {
        Some(k) => k,
        None => {
            let r = rate.unwrap_or(cfg.select.rate);
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::invalid(format!("rate must be in (0, 1], got {r}")));
            }
            keyframe_count(seq.len(), r)
        }
    };
    let set = selector.select(&seq, k)?;
    let keyframes_file = if emit_keyframes {
        let kf = Keyframes::extract(&seq, &set)?;
        let file = KeyframesFile {
            format: KEYFRAMES_FORMAT.to_string(),
            version: 1,
            motion_len: seq.len(),
            frame_dim: seq.dim(),
            frame_rate: seq.frame_rate,
            indices: set.indices().to_vec(),
            rows: kf.rows().chunks(seq.dim()).map(|r| r.to_vec()).collect(),
        };
        let name = "keyframes.json".to_string();
        write_json(&kf_file_validate(file)?, KEYFRAMES_SCHEMA, &out_dir.join(&name))?;
        Some(name)
    } else {
        None
    };
    let report = SelectReport {
        method: selector.name().to_string(),
        input: input.display().to_string(),
        motion_len: seq.len(),
        count: set.count(),
        indices: set.indices().to_vec(),
        adjacent_distance_total: accumulated_distance(&seq, &set),
        keyframes_file,
    };
    write_json(&report, SELECT_REPORT_SCHEMA, &out_dir.join("select.json"))?;
    Ok(report)
}

// Keyframe-file consistency shared by writer and reader.
fn kf_file_validate(file: KeyframesFile) -> Result<KeyframesFile> {
    if file.indices.len() != file.rows.len() {
        return Err(Error::dim("keyframe rows", file.indices.len(), file.rows.len()));
    }
    if file.rows.iter().any(|r| r.len() != file.frame_dim) {
        return Err(Error::invalid("every keyframe row must have frame_dim values"));
    }
    if file.indices.windows(2).any(|w| w[0] >= w[1])
        || file.indices.last().is_some_and(|&l| l >= file.motion_len)
    {
        return Err(Error::invalid("keyframe indices must be strictly increasing and inside the sequence"));
    }
    Ok(file)
}

// ---------------------------------------------------------------------
// infill
// ---------------------------------------------------------------------

/// Infill method token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InfillMethod {
    Lerp,
    Slerp,
    Mmae,
}

impl std::str::FromStr for InfillMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lerp" => Ok(InfillMethod::Lerp),
            "slerp" => Ok(InfillMethod::Slerp),
            "mmae" => Ok(InfillMethod::Mmae),
            other => Err(Error::invalid(format!(
                "unknown infill method '{other}' (expected lerp|slerp|mmae)"
            ))),
        }
    }
}

impl InfillMethod {
    pub fn name(&self) -> &'static str {
        match self {
            InfillMethod::Lerp => "lerp",
            InfillMethod::Slerp => "slerp",
            InfillMethod::Mmae => "mmae",
        }
    }
}

/// Rebuilds a full sequence from a keyframe file and reports MPJPE /
/// PA-MPJPE against an optional reference sequence.
#[allow(clippy::too_many_arguments)]
pub fn cmd_infill(
    cfg: &PipelineConfig,
    keyframes_path: &Path,
    method: InfillMethod,
    text: Option<&str>,
    reference: Option<&Path>,
    checkpoint: Option<&Path>,
    out_dir: &Path,
) -> Result<InfillReport> {
    std::fs::create_dir_all(out_dir)?;
    let file: KeyframesFile = kf_file_validate(read_json(keyframes_path, KEYFRAMES_SCHEMA)?)?;
    let rows_flat: Vec<f64> = file.rows.iter().flatten().copied().collect();
    let kf = Keyframes::new(rows_flat, file.indices.clone(), file.motion_len, file.frame_dim)?;
    let layout = FrameLayout::from_dim(file.frame_dim)?;

    let out = match method {
        InfillMethod::Lerp | InfillMethod::Slerp => {
            let set = KeyframeSet::new(file.indices.clone(), file.motion_len)?;
            let mut scaffold = vec![0.0f64; file.motion_len * file.frame_dim];
            for (slot, &idx) in file.indices.iter().enumerate() {
                scaffold[idx * file.frame_dim..(idx + 1) * file.frame_dim]
                    .copy_from_slice(kf.row(slot));
            }
            let scaffold =
                MotionSequence::new(scaffold, file.motion_len, layout.joints, file.frame_rate)?;
            match method {
                InfillMethod::Lerp => keymotion::interp::lerp_infill(&scaffold, &set)?,
                _ => keymotion::interp::slerp_infill(&scaffold, &set)?,
            }
        }
        InfillMethod::Mmae => {
            let ckpt = checkpoint.ok_or_else(|| {
                Error::invalid("infilling with mmae requires --checkpoint pointing at mmae.ckpt")
            })?;
            let mmae_cfg = cfg.mmae_config()?;
            if mmae_cfg.motion_len != file.motion_len || mmae_cfg.frame_dim != file.frame_dim {
                return Err(Error::dim(
                    "keyframe file vs mmae configuration",
                    format!("[{}, {}]", mmae_cfg.motion_len, mmae_cfg.frame_dim),
                    format!("[{}, {}]", file.motion_len, file.frame_dim),
                ));
            }
            let model = Mmae::new(mmae_cfg.clone(), 0)?;
            let meta = load_checkpoint_into(model.params(), ckpt)?;
            if meta.config_hash != mmae_cfg.hash() {
                return Err(Error::CheckpointMismatch(format!(
                    "mmae checkpoint was trained under a different configuration ({:016x} != {:016x})",
                    meta.config_hash,
                    mmae_cfg.hash()
                )));
            }
            let cond = match text {
                Some(t) => Condition::from_text(t, cfg.motion.cond_dim)?,
                None => Condition::unconditional(cfg.motion.cond_dim),
            };
            infill(&model, &kf, cond, file.frame_rate, true)?
        }
    };

    let output = "infill.kmbin".to_string();
    save_motion(&out, &out_dir.join(&output))?;

    let (mut mpjpe_mm, mut pampjpe_mm) = (None, None);
    if let Some(ref_path) = reference {
        let gt = load_motion_any(ref_path)?;
        if gt.len() != out.len() || gt.dim() != out.dim() {
            return Err(Error::dim(
                "reference sequence",
                format!("[{}, {}]", out.len(), out.dim()),
                format!("[{}, {}]", gt.len(), gt.dim()),
            ));
        }
        let skel = skeleton_for(out.joints())?;
        let pred = forward_kinematics(&out, &skel)?;
        let gt_pos = forward_kinematics(&gt, &skel)?;
        mpjpe_mm = Some(mpjpe(&pred, &gt_pos)?);
        pampjpe_mm = Some(pampjpe(&pred, &gt_pos)?);
    }

    let report = InfillReport {
        method: method.name().to_string(),
        output,
        motion_len: out.len(),
        keyframes: kf.count(),
        mpjpe_mm,
        pampjpe_mm,
    };
    write_json(&report, INFILL_REPORT_SCHEMA, &out_dir.join("infill_report.json"))?;
    Ok(report)
}

// ---------------------------------------------------------------------
// train
// ---------------------------------------------------------------------

/// Trainable pipeline stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Vae,
    Denoiser,
    Mmae,
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vae" => Ok(Stage::Vae),
            "denoiser" => Ok(Stage::Denoiser),
            "mmae" => Ok(Stage::Mmae),
            other => Err(Error::invalid(format!(
                "unknown training stage '{other}' (expected vae|denoiser|mmae)"
            ))),
        }
    }
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Vae => "vae",
            Stage::Denoiser => "denoiser",
            Stage::Mmae => "mmae",
        }
    }
}

fn check_dataset_matches(cfg: &PipelineConfig, manifest: &DatasetManifest) -> Result<()> {
    if manifest.length != cfg.motion.length || manifest.joints != cfg.motion.joints {
        return Err(Error::dim(
            "dataset vs motion config",
            format!("[N={}, J={}]", cfg.motion.length, cfg.motion.joints),
            format!("[N={}, J={}]", manifest.length, manifest.joints),
        ));
    }
    Ok(())
}

/// Extracts per-sequence keyframes with the configured selector.
fn dataset_keyframes(
    cfg: &PipelineConfig,
    items: &[(MotionSequence<f64>, String)],
) -> Result<Vec<Keyframes<f64>>> {
    let selector = cfg.selector()?;
    let k = cfg.keyframe_k();
    items
        .iter()
        .map(|(seq, _)| Keyframes::extract(seq, &selector.select(seq, k)?))
        .collect()
}

/// Trains one stage on a synthesized dataset and writes the checkpoint
/// plus a per-epoch loss history.
pub fn cmd_train(
    cfg: &PipelineConfig,
    stage: Stage,
    data_dir: &Path,
    out_dir: &Path,
    seed: u64,
) -> Result<TrainReport> {
    std::fs::create_dir_all(out_dir)?;
    let (manifest, items) = read_dataset(data_dir)?;
    check_dataset_matches(cfg, &manifest)?;
    if items.is_empty() {
        return Err(Error::invalid("training dataset is empty"));
    }

    let entries: Vec<LossEntry> = match stage {
        Stage::Vae => {
            let skel = cfg.skeleton()?;
            let kfs = dataset_keyframes(cfg, &items)?;
            let vae_cfg = cfg.vae_config()?;
            let vae = KeyframeVae::<f64>::new(vae_cfg.clone(), derive_seed(seed, "vae-init"))?;
            let mut rng = Prng::derive(seed, "train-vae");
            let stats =
                train_vae(&vae, &kfs, Some(&skel), cfg.vae.epochs, cfg.vae.lr, &mut rng)?;
            save_checkpoint(
                vae.params(),
                &CheckpointMeta { seed, config_hash: vae_cfg.hash(), extras: BTreeMap::new() },
                &out_dir.join(VAE_CKPT),
            )?;
            stats
                .iter()
                .map(|s| LossEntry {
                    total: s.total,
                    reconstruction: Some(s.reconstruction),
                    kl: Some(s.kl),
                    bone_length: Some(s.bone_length),
                    position: Some(s.position),
                    fk_position: None,
                    smoothness: None,
                })
                .collect()
        }
        Stage::Denoiser => {
            let (vae, _) = load_vae(cfg, out_dir)?;
            let kfs = dataset_keyframes(cfg, &items)?;
            let mut raw = Vec::with_capacity(kfs.len());
            for kf in &kfs {
                let (mu, _sigma) = vae.encode(kf)?;
                raw.push(mu.data_vec());
            }
            let stats = LatentStats::fit(&raw)?;
            let mut pairs = Vec::with_capacity(raw.len());
            for (z, (_, text)) in raw.iter().zip(&items) {
                pairs.push((
                    stats.standardize(z),
                    Condition::from_text(text, cfg.motion.cond_dim)?,
                ));
            }
            let pst_cfg = cfg.pst_config()?;
            let pst = PstDenoiser::<f64>::new(pst_cfg.clone(), derive_seed(seed, "denoiser-init"))?;
            let sched = cfg.schedule()?;
            let mut rng = Prng::derive(seed, "train-denoiser");
            let history =
                train_denoiser(&pst, &pairs, &sched, cfg.diff.epochs, cfg.diff.lr, &mut rng)?;
            let mut extras = BTreeMap::new();
            extras.insert("latent_mean".to_string(), stats.mean.clone());
            extras.insert("latent_std".to_string(), stats.std.clone());
            save_checkpoint(
                pst.params(),
                &CheckpointMeta { seed, config_hash: pst_cfg.hash(), extras },
                &out_dir.join(DENOISER_CKPT),
            )?;
            history.iter().map(|&total| LossEntry::total_only(total)).collect()
        }
        Stage::Mmae => {
            let skel = cfg.skeleton()?;
            let mmae_cfg = cfg.mmae_config()?;
            let model = Mmae::<f64>::new(mmae_cfg.clone(), derive_seed(seed, "mmae-init"))?;
            let mut pairs = Vec::with_capacity(items.len());
            for (seq, text) in &items {
                pairs.push((seq.clone(), Condition::from_text(text, cfg.motion.cond_dim)?));
            }
            let mut rng = Prng::derive(seed, "train-mmae");
            let stats = train_mmae(
                &model,
                &pairs,
                cfg.selector()?,
                cfg.select.rate,
                &skel,
                cfg.mmae.epochs,
                cfg.mmae.lr,
                &mut rng,
            )?;
            save_checkpoint(
                model.params(),
                &CheckpointMeta { seed, config_hash: mmae_cfg.hash(), extras: BTreeMap::new() },
                &out_dir.join(MMAE_CKPT),
            )?;
            stats
                .iter()
                .map(|s| LossEntry {
                    total: s.total,
                    reconstruction: Some(s.reconstruction),
                    kl: None,
                    bone_length: Some(s.bone_length),
                    position: None,
                    fk_position: Some(s.fk_position),
                    smoothness: Some(s.smoothness),
                })
                .collect()
        }
    };

    let history = LossHistory { stage: stage.name().to_string(), entries };
    let loss_file = format!("{}_loss.json", stage.name());
    write_json(&history, LOSS_HISTORY_SCHEMA, &out_dir.join(&loss_file))?;
    Ok(TrainReport {
        stage: stage.name().to_string(),
        checkpoint: match stage {
            Stage::Vae => VAE_CKPT,
            Stage::Denoiser => DENOISER_CKPT,
            Stage::Mmae => MMAE_CKPT,
        }
        .to_string(),
        loss_file,
        epochs: history.entries.len(),
        final_loss: history.entries.last().map(|e| e.total).unwrap_or(f64::NAN),
    })
}

// ---------------------------------------------------------------------
// checkpoint loading
// ---------------------------------------------------------------------

fn require_ckpt(dir: &Path, name: &str, stage: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    if !path.exists() {
        return Err(Error::invalid(format!(
            "missing {name} in {}; run `keymotion train --stage {stage}` first",
            dir.display()
        )));
    }
    Ok(path)
}

pub fn load_vae(cfg: &PipelineConfig, dir: &Path) -> Result<(KeyframeVae<f64>, CheckpointMeta)> {
    let path = require_ckpt(dir, VAE_CKPT, "vae")?;
    let vae_cfg: VaeConfig = cfg.vae_config()?;
    let vae = KeyframeVae::new(vae_cfg.clone(), 0)?;
    let meta = load_checkpoint_into(vae.params(), &path)?;
    check_hash("VAE", meta.config_hash, vae_cfg.hash())?;
    Ok((vae, meta))
}

pub fn load_denoiser(cfg: &PipelineConfig, dir: &Path) -> Result<(PstDenoiser<f64>, CheckpointMeta)> {
    let path = require_ckpt(dir, DENOISER_CKPT, "denoiser")?;
    let pst_cfg: PstConfig = cfg.pst_config()?;
    let pst = PstDenoiser::new(pst_cfg.clone(), 0)?;
    let meta = load_checkpoint_into(pst.params(), &path)?;
    check_hash("denoiser", meta.config_hash, pst_cfg.hash())?;
    Ok((pst, meta))
}

pub fn load_mmae(cfg: &PipelineConfig, dir: &Path) -> Result<(Mmae<f64>, CheckpointMeta)> {
    let path = require_ckpt(dir, MMAE_CKPT, "mmae")?;
    let mmae_cfg: MmaeConfig = cfg.mmae_config()?;
    let model = Mmae::new(mmae_cfg.clone(), 0)?;
    let meta = load_checkpoint_into(model.params(), &path)?;
    check_hash("mmae", meta.config_hash, mmae_cfg.hash())?;
    Ok((model, meta))
}

fn check_hash(what: &str, stored: u64, active: u64) -> Result<()> {
    if stored != active {
        return Err(Error::CheckpointMismatch(format!(
            "{what} checkpoint was trained under a different configuration ({stored:016x} != {active:016x})"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------
// sample
// ---------------------------------------------------------------------

/// All three trained models plus sampling context.
pub struct GenerativeStack {
    pub vae: KeyframeVae<f64>,
    pub pst: PstDenoiser<f64>,
    pub mmae: Mmae<f64>,
    pub stats: LatentStats,
    pub sched: NoiseSchedule<f64>,
}

/// Loads the three checkpoints, verifying each configuration hash.
pub fn load_stack(cfg: &PipelineConfig, dir: &Path) -> Result<GenerativeStack> {
    let (vae, _) = load_vae(cfg, dir)?;
    let (pst, meta) = load_denoiser(cfg, dir)?;
    let (mmae, _) = load_mmae(cfg, dir)?;
    let stats = LatentStats {
        mean: meta
            .extras
            .get("latent_mean")
            .cloned()
            .ok_or_else(|| Error::CheckpointMismatch("denoiser checkpoint lacks latent_mean".into()))?,
        std: meta
            .extras
            .get("latent_std")
            .cloned()
            .ok_or_else(|| Error::CheckpointMismatch("denoiser checkpoint lacks latent_std".into()))?,
    };
    let sched = cfg.schedule()?;
    Ok(GenerativeStack { vae, pst, mmae, stats, sched })
}

/// One text-conditioned draw through the full pipeline: latent sample →
/// keyframe decode → infilling. Returns the motion and the decoded
/// keyframe indices.
pub fn generate_one(
    stack: &GenerativeStack,
    cfg: &PipelineConfig,
    cond: &Condition<f64>,
    guidance: f64,
    rng: &mut Prng,
) -> Result<(MotionSequence<f64>, Vec<usize>)> {
    let mode = cfg.sample_mode()?;
    let z = sample(&stack.pst, cond, &stack.sched, mode, cfg.diff.steps, guidance, rng)?;
    let raw = stack.stats.destandardize(&z.data_vec());
    let z = Tensor::from_vec(raw, &[cfg.vae.latent_tokens, cfg.vae.latent_dim]);
    let decoded = stack.vae.decode(&z)?;
    let kf = Keyframes::new(
        decoded.keyframes.data_vec(),
        decoded.indices.clone(),
        cfg.motion.length,
        cfg.frame_dim(),
    )?;
    let seq = infill(&stack.mmae, &kf, cond.clone(), cfg.motion.frame_rate, true)?;
    Ok((seq, decoded.indices))
}

/// Samples `count` motions for one sentence and writes them plus a
/// manifest (for evaluation) and a sample report.
pub fn cmd_sample(
    cfg: &PipelineConfig,
    ckpt_dir: &Path,
    text: &str,
    count: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<SampleReport> {
    std::fs::create_dir_all(out_dir)?;
    let stack = load_stack(cfg, ckpt_dir)?;
    let cond = Condition::from_text(text, cfg.motion.cond_dim)?;
    let mut files = Vec::with_capacity(count);
    let mut all_indices = Vec::with_capacity(count);
    let mut entries = Vec::with_capacity(count);
    let started = Instant::now();
    for i in 0..count {
        let mut rng = Prng::derive(seed, &format!("sample-{i}"));
        let (seq, indices) = generate_one(&stack, cfg, &cond, cfg.diff.guidance, &mut rng)?;
        let file = format!("sample_{i:03}.kmbin");
        save_motion(&seq, &out_dir.join(&file))?;
        entries.push(ManifestEntry {
            file: file.clone(),
            family: "sampled".to_string(),
            text: text.to_string(),
        });
        files.push(file);
        all_indices.push(indices);
    }
    let elapsed = started.elapsed().as_secs_f64();
    let manifest = DatasetManifest {
        format: MANIFEST_FORMAT.to_string(),
        version: 1,
        seed,
        joints: cfg.motion.joints,
        frame_dim: cfg.frame_dim(),
        length: cfg.motion.length,
        frame_rate: cfg.motion.frame_rate,
        entries,
    };
    write_json(&manifest, MANIFEST_SCHEMA, &out_dir.join(MANIFEST_FILE))?;
    let report = SampleReport {
        text: text.to_string(),
        count,
        guidance: cfg.diff.guidance,
        steps: cfg.diff.steps,
        mode: cfg.diff.mode.clone(),
        files,
        keyframe_indices: all_indices,
        avg_seconds_per_sentence: if count == 0 { 0.0 } else { elapsed / count as f64 },
    };
    write_json(&report, SAMPLE_REPORT_SCHEMA, &out_dir.join("sample_report.json"))?;
    Ok(report)
}

// ---------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------

pub const DEFAULT_METRICS: [&str; 4] = ["fid", "diversity", "mmd", "rprecision"];

/// Reads an evaluation directory: manifest when present, otherwise all
/// `.kmbin` files sorted by name (with empty condition texts).
pub fn read_eval_dir(dir: &Path) -> Result<(Vec<MotionSequence<f64>>, Vec<String>)> {
    if dir.join(MANIFEST_FILE).exists() {
        let (_, items) = read_dataset(dir)?;
        let texts = items.iter().map(|(_, t)| t.clone()).collect();
        Ok((items.into_iter().map(|(s, _)| s).collect(), texts))
    } else {
        let mut names: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "kmbin"))
            .collect();
        names.sort();
        let mut seqs = Vec::with_capacity(names.len());
        for name in &names {
            seqs.push(load_motion(name)?);
        }
        let texts = vec![String::new(); seqs.len()];
        Ok((seqs, texts))
    }
}

struct EvalData {
    gen_feats: Vec<Vec<f64>>,
    ref_feats: Vec<Vec<f64>>,
    gen_text_feats: Vec<Vec<f64>>,
    gen_texts: Vec<String>,
    gen_seqs: Vec<MotionSequence<f64>>,
    ref_seqs: Vec<MotionSequence<f64>>,
    diversity_subset: usize,
    rprecision_pool: usize,
    rprecision_topk: usize,
}

fn eval_metric(name: &str, data: &EvalData, rng: &mut Prng) -> Result<f64> {
    match name {
        "fid" => fid(
            &FeatureDistribution::fit(&data.gen_feats)?,
            &FeatureDistribution::fit(&data.ref_feats)?,
        ),
        "diversity" => {
            let s = data.diversity_subset.min(data.gen_feats.len() / 2).max(1);
            diversity(&data.gen_feats, s, rng)
        }
        "mmd" => {
            require_texts(data, "mmd")?;
            keymotion::metrics::mmd(&data.gen_text_feats, &data.gen_feats)
        }
        "rprecision" => {
            require_texts(data, "rprecision")?;
            let pool = data.rprecision_pool.min(data.gen_feats.len());
            let top_k = data.rprecision_topk.min(pool.saturating_sub(1)).max(1);
            r_precision(&data.gen_text_feats, &data.gen_feats, pool, top_k, rng)
        }
        "multimodality" => {
            require_texts(data, "multimodality")?;
            let mut groups: BTreeMap<&str, Vec<Vec<f64>>> = BTreeMap::new();
            for (text, feat) in data.gen_texts.iter().zip(&data.gen_feats) {
                groups.entry(text).or_default().push(feat.clone());
            }
            let groups: Vec<Vec<Vec<f64>>> =
                groups.into_values().filter(|g| g.len() >= 2).collect();
            if groups.is_empty() {
                return Err(Error::invalid(
                    "multimodality needs at least one condition with two or more sequences",
                ));
            }
            let smallest = groups.iter().map(Vec::len).min().unwrap_or(2);
            let s = data.diversity_subset.min(smallest / 2).max(1);
            multimodality(&groups, s, rng)
        }
        "mpjpe" | "pampjpe" => {
            if data.gen_seqs.len() != data.ref_seqs.len() {
                return Err(Error::dim(
                    "paired position metrics",
                    data.ref_seqs.len(),
                    data.gen_seqs.len(),
                ));
            }
            let mut sum = 0.0;
            for (g, r) in data.gen_seqs.iter().zip(&data.ref_seqs) {
                let skel = skeleton_for(g.joints())?;
                let gp = forward_kinematics(g, &skel)?;
                let rp = forward_kinematics(r, &skel)?;
                sum += if name == "mpjpe" { mpjpe(&gp, &rp)? } else { pampjpe(&gp, &rp)? };
            }
            Ok(sum / data.gen_seqs.len() as f64)
        }
        other => Err(Error::invalid(format!(
            "unknown metric '{other}' (expected fid|diversity|mmd|rprecision|multimodality|mpjpe|pampjpe)"
        ))),
    }
}

fn dir_label(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

fn require_texts(data: &EvalData, metric: &str) -> Result<()> {
    if data.gen_texts.iter().any(String::is_empty) {
        return Err(Error::invalid(format!(
            "{metric} needs condition texts; evaluate a directory with a dataset manifest"
        )));
    }
    Ok(())
}

/// Evaluates a generated directory against a reference directory with
/// the repeat protocol (mean ± 95% CI over seeded repeats).
pub fn cmd_eval(
    cfg: &PipelineConfig,
    generated: &Path,
    reference: &Path,
    metric_names: &[String],
    seed: u64,
    out_dir: &Path,
) -> Result<EvalReport> {
    std::fs::create_dir_all(out_dir)?;
    let (gen_seqs, gen_texts) = read_eval_dir(generated)?;
    let (ref_seqs, _ref_texts) = read_eval_dir(reference)?;
    if gen_seqs.is_empty() || ref_seqs.is_empty() {
        return Err(Error::invalid("evaluation needs non-empty directories on both sides"));
    }
    let d = gen_seqs[0].dim();
    for seq in gen_seqs.iter().chain(&ref_seqs) {
        if seq.dim() != d {
            return Err(Error::dim("feature extractor input", d, seq.dim()));
        }
    }
    let extractor = StatProjection::new(d, cfg.metrics.feature_seed)?;
    let gen_feats: Vec<Vec<f64>> =
        gen_seqs.iter().map(|s| extractor.motion(s)).collect::<Result<_>>()?;
    let ref_feats: Vec<Vec<f64>> =
        ref_seqs.iter().map(|s| extractor.motion(s)).collect::<Result<_>>()?;
    let gen_text_feats: Vec<Vec<f64>> = gen_texts
        .iter()
        .map(|t| FeatureExtractor::<f64>::text(&extractor, t))
        .collect::<Result<_>>()?;
    let data = EvalData {
        gen_feats,
        ref_feats,
        gen_text_feats,
        gen_texts,
        gen_seqs,
        ref_seqs,
        diversity_subset: cfg.metrics.diversity_subset,
        rprecision_pool: cfg.metrics.rprecision_pool,
        rprecision_topk: cfg.metrics.rprecision_topk,
    };
    let mut metrics = Vec::with_capacity(metric_names.len());
    for name in metric_names {
        metrics.push(repeat_eval(name, cfg.metrics.repeats, seed, |rng| {
            eval_metric(name, &data, rng)
        })?);
    }
    // Only the leaf names go into the report so that identically seeded
    // runs rooted at different directories stay byte-identical.
    let report = EvalReport {
        generated: dir_label(generated),
        reference: dir_label(reference),
        metrics,
    };
    write_json(&report, EVAL_REPORT_SCHEMA, &out_dir.join("eval.json"))?;
    Ok(report)
}

// ---------------------------------------------------------------------
// sweeps
// ---------------------------------------------------------------------

/// Samples with several guidance factors and scores each against the
/// reference set, reproducing the shape of a guidance-sweep study.
pub fn cmd_guidance_sweep(
    cfg: &PipelineConfig,
    ckpt_dir: &Path,
    reference: &Path,
    values: &[f64],
    count_per_value: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<SweepReport> {
    std::fs::create_dir_all(out_dir)?;
    if values.is_empty() {
        return Err(Error::invalid("a sweep needs at least one value"));
    }
    if count_per_value < 2 {
        return Err(Error::invalid("sweep needs at least 2 samples per value to fit moments"));
    }
    let (ref_seqs, ref_texts) = read_eval_dir(reference)?;
    if ref_seqs.is_empty() {
        return Err(Error::invalid("reference directory is empty"));
    }
    if ref_texts.iter().all(String::is_empty) {
        return Err(Error::invalid("guidance sweep needs condition texts in the reference manifest"));
    }
    let stack = load_stack(cfg, ckpt_dir)?;
    let d = ref_seqs[0].dim();
    let extractor = StatProjection::new(d, cfg.metrics.feature_seed)?;
    let ref_feats: Vec<Vec<f64>> =
        ref_seqs.iter().map(|s| extractor.motion(s)).collect::<Result<_>>()?;
    let ref_dist = FeatureDistribution::fit(&ref_feats)?;
    let mut rows = Vec::with_capacity(values.len());
    for (vi, &g) in values.iter().enumerate() {
        let mut feats = Vec::with_capacity(count_per_value);
        for i in 0..count_per_value {
            let text = &ref_texts[i % ref_texts.len()];
            let cond = Condition::from_text(text, cfg.motion.cond_dim)?;
            let mut rng = Prng::derive(seed, &format!("sweep-guidance-{vi}-{i}"));
            let (seq, _) = generate_one(&stack, cfg, &cond, g, &mut rng)?;
            feats.push(extractor.motion(&seq)?);
        }
        let mut metrics = BTreeMap::new();
        metrics.insert("fid".to_string(), fid(&FeatureDistribution::fit(&feats)?, &ref_dist)?);
        let s = (count_per_value / 2).max(1);
        let mut div_rng = Prng::derive(seed, &format!("sweep-guidance-div-{vi}"));
        metrics.insert("diversity".to_string(), diversity(&feats, s, &mut div_rng)?);
        rows.push(SweepRow { value: g, metrics });
    }
    let report = SweepReport { sweep: "guidance".to_string(), rows };
    write_json(&report, SWEEP_SCHEMA, &out_dir.join("sweep.json"))?;
    Ok(report)
}

/// Trains the full stack at each keyframe rate, samples, and scores the
/// distribution match, emitting one table row per rate.
pub fn rate_sweep(
    cfg: &PipelineConfig,
    data_dir: &Path,
    rates: &[f64],
    count_per_rate: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<SweepReport> {
    std::fs::create_dir_all(out_dir)?;
    if rates.is_empty() {
        return Err(Error::invalid("a sweep needs at least one rate"));
    }
    let (ref_seqs, ref_texts) = read_eval_dir(data_dir)?;
    if ref_seqs.is_empty() {
        return Err(Error::invalid("reference dataset is empty"));
    }
    let d = ref_seqs[0].dim();
    let extractor = StatProjection::new(d, cfg.metrics.feature_seed)?;
    let ref_feats: Vec<Vec<f64>> =
        ref_seqs.iter().map(|s| extractor.motion(s)).collect::<Result<_>>()?;
    let ref_dist = FeatureDistribution::fit(&ref_feats)?;
    let mut rows = Vec::with_capacity(rates.len());
    for (ri, &rate) in rates.iter().enumerate() {
        let mut cfg_r = cfg.clone();
        cfg_r.select.rate = rate;
        cfg_r.validate()?;
        let stage_dir = out_dir.join(format!("rate_{:03}", (rate * 100.0).round() as u32));
        std::fs::create_dir_all(&stage_dir)?;
        let stage_seed = derive_seed(seed, &format!("rate-{ri}"));
        cmd_train(&cfg_r, Stage::Vae, data_dir, &stage_dir, stage_seed)?;
        cmd_train(&cfg_r, Stage::Denoiser, data_dir, &stage_dir, stage_seed)?;
        cmd_train(&cfg_r, Stage::Mmae, data_dir, &stage_dir, stage_seed)?;
        let stack = load_stack(&cfg_r, &stage_dir)?;
        let mut feats = Vec::with_capacity(count_per_rate);
        for i in 0..count_per_rate {
            let text = &ref_texts[i % ref_texts.len()];
            let cond = Condition::from_text(text, cfg_r.motion.cond_dim)?;
            let mut rng = Prng::derive(stage_seed, &format!("rate-sample-{i}"));
            let (seq, _) = generate_one(&stack, &cfg_r, &cond, cfg_r.diff.guidance, &mut rng)?;
            feats.push(extractor.motion(&seq)?);
        }
        let mut metrics = BTreeMap::new();
        metrics.insert("fid".to_string(), fid(&FeatureDistribution::fit(&feats)?, &ref_dist)?);
        rows.push(SweepRow { value: rate, metrics });
    }
    let report = SweepReport { sweep: "rate".to_string(), rows };
    write_json(&report, SWEEP_SCHEMA, &out_dir.join("rate_sweep.json"))?;
    Ok(report)
}

// ---------------------------------------------------------------------
// fk
// ---------------------------------------------------------------------

/// Runs forward kinematics over a motion file and writes world-space
/// (or root-isolated) joint positions.
pub fn cmd_fk(input: &Path, isolated: bool, out_dir: &Path) -> Result<FkReport> {
    std::fs::create_dir_all(out_dir)?;
    let seq = load_motion_any(input)?;
    let skel = skeleton_for(seq.joints())?;
    let positions = if isolated {
        forward_kinematics_isolated(&seq, &skel)?
    } else {
        forward_kinematics(&seq, &skel)?
    };
    let mut nested = Vec::with_capacity(seq.len());
    for k in 0..seq.len() {
        let mut row = Vec::with_capacity(seq.joints());
        for j in 0..seq.joints() {
            row.push(positions.get(k, j));
        }
        nested.push(row);
    }
    let report = FkReport {
        input: input.display().to_string(),
        isolated,
        frames: seq.len(),
        joints: seq.joints(),
        positions: nested,
    };
    write_json(&report, FK_SCHEMA, &out_dir.join("fk.json"))?;
    Ok(report)
}

// ---------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------

const GRAD_TOLERANCE: f64 = 1e-5;
const GRAD_EPS: f64 = 1e-5;

fn values(label: &str, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut rng = Prng::derive(0x6772_6164, label);
    (0..n).map(|_| rng.uniform_range(lo, hi)).collect()
}

/// Values bounded away from the non-smooth points of |x|, relu, clamp.
fn kink_free(label: &str, n: usize, kinks: &[f64], margin: f64) -> Vec<f64> {
    let mut rng = Prng::derive(0x6b69_6e6b, label);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let v = rng.uniform_range(-2.0, 2.0);
        if kinks.iter().all(|k| (v - k).abs() > margin) {
            out.push(v);
        }
    }
    out
}

fn scalarize(t: &Tensor<f64>, label: &str) -> Tensor<f64> {
    let w = values(label, t.numel(), 0.25, 1.0);
    t.mul(&Tensor::from_vec(w, t.shape())).sum_all()
}

fn op_case(
    cases: &mut Vec<GradCase>,
    name: &str,
    inputs: &[(&str, Vec<f64>, Vec<usize>)],
    f: impl Fn(&ParamSet<f64>) -> Result<Tensor<f64>>,
) -> Result<()> {
    let mut params = ParamSet::new();
    for (pname, data, shape) in inputs {
        params.register(pname, Tensor::param(data.clone(), shape));
    }
    let rel = grad_check(&params, || f(&params), GRAD_EPS)?;
    cases.push(GradCase { name: name.to_string(), max_rel_error: rel });
    Ok(())
}

fn p<'a>(params: &'a ParamSet<f64>, name: &str) -> &'a Tensor<f64> {
    params.get(name).expect("registered input")
}

/// Central finite-difference checks for every differentiable tensor
/// operation and (in full mode) the three complete model objectives.
pub fn gradient_suite(full: bool) -> Result<GradReport> {
    let mut cases = Vec::new();
    let x34 = ("x", values("x34", 12, -1.0, 1.0), vec![3, 4]);
    let y34 = ("y", values("y34", 12, -1.0, 1.0), vec![3, 4]);

    op_case(&mut cases, "add", &[x34.clone(), y34.clone()], |ps| {
        Ok(scalarize(&p(ps, "x").add(p(ps, "y")), "add"))
    })?;
    op_case(&mut cases, "sub", &[x34.clone(), y34.clone()], |ps| {
        Ok(scalarize(&p(ps, "x").sub(p(ps, "y")), "sub"))
    })?;
    op_case(&mut cases, "mul", &[x34.clone(), y34.clone()], |ps| {
        Ok(scalarize(&p(ps, "x").mul(p(ps, "y")), "mul"))
    })?;
    op_case(&mut cases, "scale", &[x34.clone()], |ps| {
        Ok(scalarize(&p(ps, "x").scale(0.7), "scale"))
    })?;
    op_case(&mut cases, "neg", &[x34.clone()], |ps| Ok(scalarize(&p(ps, "x").neg(), "neg")))?;
    op_case(&mut cases, "add_scalar", &[x34.clone()], |ps| {
        Ok(scalarize(&p(ps, "x").add_scalar(0.3), "add_scalar"))
    })?;
    op_case(
        &mut cases,
        "add_bias",
        &[x34.clone(), ("b", values("bias", 4, -1.0, 1.0), vec![4])],
        |ps| Ok(scalarize(&p(ps, "x").add_bias(p(ps, "b")), "add_bias")),
    )?;
    op_case(
        &mut cases,
        "relu",
        &[("x", kink_free("relu", 12, &[0.0], 0.05), vec![3, 4])],
        |ps| Ok(scalarize(&p(ps, "x").relu(), "relu")),
    )?;
    op_case(
        &mut cases,
        "abs",
        &[("x", kink_free("abs", 12, &[0.0], 0.05), vec![3, 4])],
        |ps| Ok(scalarize(&p(ps, "x").abs(), "abs")),
    )?;
    op_case(
        &mut cases,
        "clamp",
        &[("x", kink_free("clamp", 12, &[-1.0, 1.0], 0.05), vec![3, 4])],
        |ps| Ok(scalarize(&p(ps, "x").clamp(-1.0, 1.0), "clamp")),
    )?;
    op_case(&mut cases, "exp", &[x34.clone()], |ps| Ok(scalarize(&p(ps, "x").exp(), "exp")))?;
    op_case(&mut cases, "ln", &[("x", values("ln", 12, 0.5, 2.0), vec![3, 4])], |ps| {
        Ok(scalarize(&p(ps, "x").ln(), "ln"))
    })?;
    op_case(&mut cases, "sqrt", &[("x", values("sqrt", 12, 0.5, 2.0), vec![3, 4])], |ps| {
        Ok(scalarize(&p(ps, "x").sqrt(), "sqrt"))
    })?;
    op_case(&mut cases, "sin", &[x34.clone()], |ps| Ok(scalarize(&p(ps, "x").sin(), "sin")))?;
    op_case(&mut cases, "cos", &[x34.clone()], |ps| Ok(scalarize(&p(ps, "x").cos(), "cos")))?;
    op_case(&mut cases, "tanh", &[x34.clone()], |ps| Ok(scalarize(&p(ps, "x").tanh(), "tanh")))?;
    op_case(&mut cases, "reshape", &[x34.clone()], |ps| {
        Ok(scalarize(&p(ps, "x").reshape(&[2, 6]), "reshape"))
    })?;
    op_case(&mut cases, "transpose", &[x34.clone()], |ps| {
        Ok(scalarize(&p(ps, "x").transpose(), "transpose"))
    })?;
    op_case(&mut cases, "narrow", &[x34.clone()], |ps| {
        Ok(scalarize(&p(ps, "x").narrow(1, 1, 2), "narrow"))
    })?;
    op_case(&mut cases, "cat_rows", &[x34.clone(), y34.clone()], |ps| {
        Ok(scalarize(&Tensor::cat(&[p(ps, "x"), p(ps, "y")], 0), "cat_rows"))
    })?;
    op_case(&mut cases, "cat_cols", &[x34.clone(), y34.clone()], |ps| {
        Ok(scalarize(&Tensor::cat(&[p(ps, "x"), p(ps, "y")], 1), "cat_cols"))
    })?;
    op_case(
        &mut cases,
        "matmul",
        &[x34.clone(), ("m", values("m42", 8, -1.0, 1.0), vec![4, 2])],
        |ps| Ok(scalarize(&p(ps, "x").matmul(p(ps, "m")), "matmul")),
    )?;
    op_case(&mut cases, "sum_axis_rows", &[x34.clone()], |ps| {
        Ok(scalarize(&p(ps, "x").sum_axis(0), "sum_axis_rows"))
    })?;
    op_case(&mut cases, "sum_axis_cols", &[x34.clone()], |ps| {
        Ok(scalarize(&p(ps, "x").sum_axis(1), "sum_axis_cols"))
    })?;
    op_case(&mut cases, "sum_all", &[x34.clone()], |ps| Ok(p(ps, "x").sum_all()))?;
    op_case(&mut cases, "mean_all", &[x34.clone()], |ps| Ok(p(ps, "x").mean_all()))?;
    op_case(&mut cases, "softmax", &[x34.clone()], |ps| {
        Ok(scalarize(&p(ps, "x").softmax(1), "softmax"))
    })?;
    op_case(
        &mut cases,
        "layer_norm",
        &[
            x34.clone(),
            ("g", values("gamma", 4, 0.5, 1.5), vec![4]),
            ("b", values("beta", 4, -0.5, 0.5), vec![4]),
        ],
        |ps| Ok(scalarize(&p(ps, "x").layer_norm(p(ps, "g"), p(ps, "b"), 1e-5), "layer_norm")),
    )?;
    op_case(&mut cases, "dropout", &[x34.clone()], |ps| {
        let mut rng = Prng::seed_from_u64(4242);
        Ok(scalarize(&p(ps, "x").dropout(0.3, true, &mut rng), "dropout"))
    })?;

    // A full post-norm transformer block exercises the composition.
    {
        let mut params = ParamSet::new();
        let lcfg = LayerConfig::new(8, 16, 2, 0.0)?;
        let mut init = Prng::seed_from_u64(91);
        let layer = EncoderLayer::new(&mut params, "enc", &lcfg, &mut init);
        let xv = values("encoder-in", 3 * 8, -1.0, 1.0);
        let rel = grad_check(
            &params,
            || {
                let x = Tensor::from_vec(xv.clone(), &[3, 8]);
                let out = layer.forward(&x, &mut ForwardCtx::eval())?;
                Ok(scalarize(&out, "encoder"))
            },
            GRAD_EPS,
        )?;
        cases.push(GradCase { name: "encoder_layer".to_string(), max_rel_error: rel });
    }

    if full {
        cases.push(vae_loss_case()?);
        cases.push(denoise_loss_case()?);
        cases.push(mmae_loss_case()?);
    }

    let max_rel_error = cases.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    Ok(GradReport {
        tolerance: GRAD_TOLERANCE,
        max_rel_error,
        pass: max_rel_error < GRAD_TOLERANCE,
        cases,
    })
}

fn vae_loss_case() -> Result<GradCase> {
    let skel = Skeleton::<f64>::toy();
    let d = skel.layout().dim();
    let cfg = VaeConfig {
        latent_tokens: 2,
        latent_dim: 3,
        kf_embed_dim: 8,
        idx_embed_dim: 4,
        enc_layers: 1,
        dec_layers: 1,
        heads: 2,
        hidden_dim: 16,
        dropout: 0.0,
        ..VaeConfig::new(12, 3, d)
    };
    let vae = KeyframeVae::<f64>::new(cfg.clone(), 101)?;
    let rows: Vec<f64> = Prng::seed_from_u64(102).normal_vec(3 * d);
    let kf = Keyframes::new(rows, vec![0, 5, 11], 12, d)?;
    let eps: Vec<f64> = Prng::seed_from_u64(103).normal_vec(2 * 3);
    let rel = grad_check(
        vae.params(),
        || {
            let (mu, sigma) = vae.encode(&kf)?;
            let z = mu.add(&sigma.mul(&Tensor::from_vec(eps.clone(), &[2, 3])));
            let out = vae.decode(&z)?;
            let (loss, _) =
                vae_loss(&kf, &out.keyframes, &out.raw_indices, &mu, &sigma, Some(&skel), &cfg)?;
            Ok(loss)
        },
        GRAD_EPS,
    )?;
    Ok(GradCase { name: "vae_loss".to_string(), max_rel_error: rel })
}

fn denoise_loss_case() -> Result<GradCase> {
    let cfg = PstConfig {
        self_layers: 1,
        cross_layers: 3,
        model_dim: 8,
        heads: 2,
        hidden_dim: 16,
        dropout: 0.0,
        t_max: 10,
        ..PstConfig::new(2, 3, 6)
    };
    let pst = PstDenoiser::<f64>::new(cfg, 111)?;
    // The prediction head starts at zero; randomize it so gradients
    // reach every upstream parameter.
    let head = pst.params().get("pst.out_proj.weight").expect("head weight");
    let hv: Vec<f64> = Prng::seed_from_u64(112).normal_vec(head.numel());
    head.set_data(&hv.iter().map(|v| v * 0.2).collect::<Vec<_>>());
    let sched = NoiseSchedule::<f64>::new(10, 0.001, 0.2)?;
    let z0: Vec<f64> = Prng::seed_from_u64(113).normal_vec(6);
    let eps: Vec<f64> = Prng::seed_from_u64(114).normal_vec(6);
    let cond = Condition::from_text("walk in a circle", 6)?;
    let rel = grad_check(
        pst.params(),
        || {
            let z0 = Tensor::from_vec(z0.clone(), &[2, 3]);
            let eps = Tensor::from_vec(eps.clone(), &[2, 3]);
            let z_t = forward_diffuse(&z0, 6, &eps, &sched)?;
            let eps_hat = pst.forward(&z_t, 6, &cond)?;
            Ok(keymotion::diffusion::noise_l2(&eps, &eps_hat))
        },
        GRAD_EPS,
    )?;
    Ok(GradCase { name: "denoise_loss".to_string(), max_rel_error: rel })
}

fn mmae_loss_case() -> Result<GradCase> {
    let skel = Skeleton::<f64>::toy();
    let d = skel.layout().dim();
    let cfg = MmaeConfig {
        layers: 1,
        model_dim: 8,
        heads: 2,
        hidden_dim: 16,
        dropout: 0.0,
        ..MmaeConfig::new(4, d, 6)
    };
    let model = Mmae::<f64>::new(cfg.clone(), 121)?;
    let mut rng = Prng::seed_from_u64(122);
    let (seq, _) = generate(Family::Walk, &skel, 4, 20.0, &mut rng)?;
    let set = KeyframeSet::new(vec![0, 3], 4)?;
    let kf = Keyframes::extract(&seq, &set)?;
    let ms = build_masked(&kf, Condition::from_text("walk fast", 6)?);
    let target_data = seq.frames_flat().to_vec();
    let rel = grad_check(
        model.params(),
        || {
            let pred = model.forward(&ms)?;
            let target = Tensor::from_vec(target_data.clone(), &[4, cfg.frame_dim]);
            Ok(mmae_loss(&pred, &target, &skel, &cfg)?.0)
        },
        GRAD_EPS,
    )?;
    Ok(GradCase { name: "mmae_loss".to_string(), max_rel_error: rel })
}

/// Runs the gradient suite and writes the report; fails (with the
/// report still written) when any case exceeds the tolerance.
pub fn cmd_gradcheck(full: bool, out_dir: &Path) -> Result<GradReport> {
    std::fs::create_dir_all(out_dir)?;
    let report = gradient_suite(full)?;
    write_json(&report, GRADCHECK_SCHEMA, &out_dir.join("gradcheck.json"))?;
    if !report.pass {
        return Err(Error::invalid(format!(
            "gradient check failed: max relative error {} exceeds {}",
            report.max_rel_error, report.tolerance
        )));
    }
    Ok(report)
}

/// Parses `--family` tokens, deduplicating while preserving order.
pub fn parse_families(tokens: &[String]) -> Result<Vec<Family>> {
    let mut families = Vec::new();
    for token in tokens {
        let family: Family = token.parse()?;
        if !families.contains(&family) {
            families.push(family);
        }
    }
    if families.is_empty() {
        return Err(Error::invalid("synth needs at least one --family"));
    }
    Ok(families)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::PipelineConfig;

    fn tiny_cfg() -> PipelineConfig {
        let mut cfg = PipelineConfig::default();
        cfg.motion.length = 16;
        cfg.motion.cond_dim = 8;
        cfg.select.rate = 0.2;
        cfg.vae.latent_tokens = 1;
        cfg.vae.latent_dim = 4;
        cfg.vae.kf_embed_dim = 12;
        cfg.vae.idx_embed_dim = 4;
        cfg.vae.enc_layers = 1;
        cfg.vae.dec_layers = 1;
        cfg.vae.heads = 2;
        cfg.vae.hidden_dim = 24;
        cfg.vae.epochs = 2;
        cfg.diff.t_max = 10;
        cfg.diff.steps = 5;
        cfg.diff.cross_layers = 3;
        cfg.diff.model_dim = 8;
        cfg.diff.heads = 2;
        cfg.diff.hidden_dim = 16;
        cfg.diff.epochs = 2;
        cfg.mmae.layers = 1;
        cfg.mmae.model_dim = 8;
        cfg.mmae.heads = 2;
        cfg.mmae.hidden_dim = 16;
        cfg.mmae.epochs = 2;
        cfg.validate().unwrap();
        cfg
    }

    #[test]
    fn synth_is_deterministic_and_respects_count_zero() {
        let cfg = tiny_cfg();
        let dir = tempfile::tempdir().unwrap();
        let a = cmd_synth(&cfg, &[Family::Walk], 2, 7, &dir.path().join("a")).unwrap();
        let b = cmd_synth(&cfg, &[Family::Walk], 2, 7, &dir.path().join("b")).unwrap();
        assert_eq!(a.entries.len(), 2);
        for (ea, eb) in a.entries.iter().zip(&b.entries) {
            let ba = std::fs::read(dir.path().join("a").join(&ea.file)).unwrap();
            let bb = std::fs::read(dir.path().join("b").join(&eb.file)).unwrap();
            assert_eq!(ba, bb);
            assert_eq!(ea.text, eb.text);
        }
        let empty = cmd_synth(&cfg, &[Family::Jump], 0, 7, &dir.path().join("c")).unwrap();
        assert!(empty.entries.is_empty());
        let (_, items) = read_dataset(&dir.path().join("c")).unwrap();
        assert!(items.is_empty());
    }

    #[test]
    fn select_report_matches_direct_selector_output() {
        let cfg = tiny_cfg();
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        let manifest = cmd_synth(&cfg, &[Family::Walk], 1, 3, &data).unwrap();
        let input = data.join(&manifest.entries[0].file);
        let report = cmd_select(&cfg, &input, Some("mdo"), Some(0.25), None, true, dir.path()).unwrap();
        assert_eq!(report.count, keyframe_count(16, 0.25));
        assert_eq!(report.indices.first(), Some(&0));
        assert_eq!(report.indices.last(), Some(&15));
        let seq = load_motion_any(&input).unwrap();
        let set = KeyframeSet::new(report.indices.clone(), 16).unwrap();
        assert_eq!(report.adjacent_distance_total, accumulated_distance(&seq, &set));
        // The emitted keyframe file loads and lerp-infills back.
        let kf_path = dir.path().join(report.keyframes_file.as_deref().unwrap());
        let infill_dir = dir.path().join("infill");
        let inf = cmd_infill(&cfg, &kf_path, InfillMethod::Lerp, None, Some(&input), None, &infill_dir)
            .unwrap();
        assert!(inf.mpjpe_mm.is_some());
        assert!(inf.mpjpe_mm.unwrap() >= 0.0);
    }

    #[test]
    fn unknown_tokens_are_validation_errors() {
        assert!("best".parse::<InfillMethod>().is_err());
        assert!("warmup".parse::<Stage>().is_err());
        assert!(parse_families(&["walk".into(), "slide".into()]).is_err());
        let dedup = parse_families(&["walk".into(), "walk".into(), "jump".into()]).unwrap();
        assert_eq!(dedup, vec![Family::Walk, Family::Jump]);
    }

    #[test]
    fn quick_gradient_suite_passes() {
        let report = gradient_suite(false).unwrap();
        assert!(
            report.pass,
            "max rel error {} (worst case: {:?})",
            report.max_rel_error,
            report.cases.iter().max_by(|a, b| {
                a.max_rel_error.total_cmp(&b.max_rel_error)
            })
        );
        assert!(report.cases.len() >= 28);
    }

    #[test]
    fn train_sample_eval_round_trip_smoke() {
        let cfg = tiny_cfg();
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        cmd_synth(&cfg, &[Family::Walk, Family::Jump], 3, 11, &data).unwrap();
        let out = dir.path().join("out");
        cmd_train(&cfg, Stage::Vae, &data, &out, 11).unwrap();
        // Denoiser before VAE checkpoint exists elsewhere: validation error.
        let other = dir.path().join("other");
        std::fs::create_dir_all(&other).unwrap();
        let missing = cmd_train(&cfg, Stage::Denoiser, &data, &other, 11).unwrap_err();
        assert!(missing.is_validation(), "unexpected error: {missing}");
        cmd_train(&cfg, Stage::Denoiser, &data, &out, 11).unwrap();
        cmd_train(&cfg, Stage::Mmae, &data, &out, 11).unwrap();

        let samples = dir.path().join("samples");
        let report = cmd_sample(&cfg, &out, "a person walks", 2, 13, &samples).unwrap();
        assert_eq!(report.files.len(), 2);
        for f in &report.files {
            let seq: MotionSequence<f64> = load_motion(&samples.join(f)).unwrap();
            assert_eq!(seq.len(), 16);
            assert_eq!(seq.dim(), 59);
        }

        // Same seed → bit-identical sample files.
        let samples2 = dir.path().join("samples2");
        cmd_sample(&cfg, &out, "a person walks", 2, 13, &samples2).unwrap();
        for f in &report.files {
            assert_eq!(
                std::fs::read(samples.join(f)).unwrap(),
                std::fs::read(samples2.join(f)).unwrap()
            );
        }

        let mut eval_cfg = cfg.clone();
        eval_cfg.metrics.repeats = 3;
        let eval = cmd_eval(
            &eval_cfg,
            &samples,
            &data,
            &["fid".to_string(), "diversity".to_string()],
            17,
            &dir.path().join("eval"),
        )
        .unwrap();
        assert_eq!(eval.metrics.len(), 2);
        assert!(eval.metrics[0].mean.is_finite());

        // A config drift flips the hash check.
        let mut drifted = cfg.clone();
        drifted.mmae.model_dim = 16;
        let err = cmd_sample(&drifted, &out, "x", 1, 1, &dir.path().join("s3")).unwrap_err();
        assert!(matches!(err, Error::CheckpointMismatch(_)), "unexpected error: {err}");

        // FID of the dataset against itself is numerically zero.
        let self_eval = cmd_eval(
            &eval_cfg,
            &data,
            &data,
            &["fid".to_string()],
            17,
            &dir.path().join("eval_self"),
        )
        .unwrap();
        assert!(self_eval.metrics[0].mean < 1e-6, "self-FID = {}", self_eval.metrics[0].mean);
    }

    #[test]
    fn fk_report_has_world_positions() {
        let cfg = tiny_cfg();
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        let manifest = cmd_synth(&cfg, &[Family::Walk], 1, 5, &data).unwrap();
        let input = data.join(&manifest.entries[0].file);
        let report = cmd_fk(&input, false, dir.path()).unwrap();
        assert_eq!(report.frames, 16);
        assert_eq!(report.joints, 5);
        assert_eq!(report.positions.len(), 16);
        assert_eq!(report.positions[0].len(), 5);
        let walked: f64 = {
            let first = report.positions[0][0];
            let last = report.positions[15][0];
            ((last[0] - first[0]).powi(2) + (last[2] - first[2]).powi(2)).sqrt()
        };
        assert!(walked > 0.05, "walking root should move, got {walked}");
    }
}
