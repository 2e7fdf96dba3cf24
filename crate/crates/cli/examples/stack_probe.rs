//! Training probe for the denoiser and infiller stages: loads (or
//! trains and caches) the keyframe VAE, then trains the latent denoiser
//! and the masked infiller while printing loss curves and the family
//! statistics / infill-vs-interpolation numbers the acceptance gate
//! checks. Usage:
//!   stack_probe <cache-dir> [pst_epochs] [pst_lr] [mmae_epochs] [mmae_lr] [guidance] [steps]

use keymotion::diffusion::{
    sample, train_denoiser, LatentStats, NoiseSchedule, PstDenoiser, SampleMode,
};
use keymotion::features::Condition;
use keymotion::interp::lerp_infill;
use keymotion::metrics::mpjpe;
use keymotion::mmae::{infill, train_mmae, Mmae};
use keymotion::motion::{forward_kinematics, MotionSequence, Skeleton};
use keymotion::nn::{load_checkpoint_into, save_checkpoint, CheckpointMeta};
use keymotion::rng::Prng;
use keymotion::synth::{generate, Family};
use keymotion::vae::{train_vae, KeyframeVae, Keyframes};
use keymotion_cli::config::PipelineConfig;
use std::collections::BTreeMap;
use std::path::Path;

const SEED: u64 = 0x5eed_ac;

fn world_mpjpe(skel: &Skeleton<f64>, a: &MotionSequence<f64>, b: &MotionSequence<f64>) -> f64 {
    let pa = forward_kinematics(a, skel).unwrap();
    let pb = forward_kinematics(b, skel).unwrap();
    mpjpe(&pa, &pb).unwrap()
}

fn fixture_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.motion.length = 48;
    cfg.motion.cond_dim = 32;
    cfg.select.rate = 0.1;
    cfg.vae.latent_tokens = 2;
    cfg.vae.latent_dim = 16;
    cfg.vae.kf_embed_dim = 56;
    cfg.vae.idx_embed_dim = 16;
    cfg.vae.enc_layers = 2;
    cfg.vae.dec_layers = 2;
    cfg.vae.heads = 4;
    cfg.vae.hidden_dim = 192;
    cfg.vae.lambda_pos = 4.0;
    cfg.vae.epochs = 420;
    cfg.vae.lr = 1.2e-3;
    cfg.diff.t_max = 100;
    cfg.diff.beta_start = 1e-3;
    cfg.diff.beta_end = 0.2;
    cfg.diff.self_layers = 1;
    cfg.diff.cross_layers = 3;
    cfg.diff.model_dim = 48;
    cfg.diff.heads = 4;
    cfg.diff.hidden_dim = 96;
    cfg.diff.guidance = 2.5;
    cfg.diff.steps = 20;
    cfg.diff.epochs = 300;
    cfg.mmae.layers = 2;
    cfg.mmae.model_dim = 48;
    cfg.mmae.heads = 4;
    cfg.mmae.hidden_dim = 160;
    cfg.mmae.epochs = 220;
    cfg.mmae.lr = 1.2e-3;
    cfg.validate().unwrap();
    cfg
}

#[allow(clippy::too_many_lines)]
fn main() {
    let args: Vec<String> = std::env::args().collect();
    let cache = args.get(1).cloned().unwrap_or_else(|| "/tmp/stack_probe".into());
    let fetch = |i: usize, default: f64| -> f64 {
        args.get(i).map(|s| s.parse().expect("numeric arg")).unwrap_or(default)
    };
    let mut cfg = fixture_config();
    cfg.diff.epochs = fetch(2, cfg.diff.epochs as f64) as usize;
    cfg.diff.lr = fetch(3, cfg.diff.lr);
    cfg.mmae.epochs = fetch(4, cfg.mmae.epochs as f64) as usize;
    cfg.mmae.lr = fetch(5, cfg.mmae.lr);
    cfg.diff.guidance = fetch(6, cfg.diff.guidance);
    cfg.diff.steps = fetch(7, cfg.diff.steps as f64) as usize;
    std::fs::create_dir_all(&cache).unwrap();
    let skel = cfg.skeleton().unwrap();

    let mut train = Vec::new();
    let mut held = Vec::new();
    for family in [Family::Walk, Family::Jump] {
        for i in 0..100usize {
            let mut rng = Prng::derive(SEED, &format!("fix-{}-{i}", family.name()));
            let (seq, text) =
                generate(family, &skel, cfg.motion.length, cfg.motion.frame_rate, &mut rng)
                    .unwrap();
            if i < 80 {
                train.push((seq, text, family));
            } else {
                held.push((seq, text, family));
            }
        }
    }
    let selector = cfg.selector().unwrap();
    let k = cfg.keyframe_k();
    let extract = |items: &[(MotionSequence<f64>, String, Family)]| -> Vec<Keyframes<f64>> {
        items
            .iter()
            .map(|(seq, _, _)| Keyframes::extract(seq, &selector.select(seq, k).unwrap()).unwrap())
            .collect()
    };
    let train_kfs = extract(&train);
    let held_kfs = extract(&held);

    // VAE: load from cache or train once and save.
    let vae = KeyframeVae::<f64>::new(cfg.vae_config().unwrap(), SEED ^ 1).unwrap();
    let vae_path = Path::new(&cache).join("probe_vae.ckpt");
    if vae_path.exists() {
        load_checkpoint_into(vae.params(), &vae_path).unwrap();
        println!("loaded cached VAE from {}", vae_path.display());
    } else {
        let started = std::time::Instant::now();
        let mut rng = Prng::derive(SEED, "fix-train-vae");
        let hist =
            train_vae(&vae, &train_kfs, Some(&skel), cfg.vae.epochs, cfg.vae.lr, &mut rng).unwrap();
        println!(
            "VAE trained {} epochs in {:.0}s, final rec {:.4} pos {:.5}",
            cfg.vae.epochs,
            started.elapsed().as_secs_f64(),
            hist.last().unwrap().reconstruction,
            hist.last().unwrap().position
        );
        save_checkpoint(
            vae.params(),
            &CheckpointMeta {
                seed: SEED,
                config_hash: cfg.vae_config().unwrap().hash(),
                extras: BTreeMap::new(),
            },
            &vae_path,
        )
        .unwrap();
    }

    // Latent dataset for the denoiser.
    let raw: Vec<Vec<f64>> =
        train_kfs.iter().map(|kf| vae.encode(kf).unwrap().0.data_vec()).collect();
    let stats = LatentStats::fit(&raw).unwrap();
    let train_latents_std: Vec<Vec<f64>> = raw.iter().map(|z| stats.standardize(z)).collect();
    let pairs: Vec<(Vec<f64>, Condition<f64>)> = train_latents_std
        .iter()
        .zip(&train)
        .map(|(z, (_, text, _))| {
            (z.clone(), Condition::from_text(text, cfg.motion.cond_dim).unwrap())
        })
        .collect();

    let sched = NoiseSchedule::new(cfg.diff.t_max, cfg.diff.beta_start, cfg.diff.beta_end).unwrap();
    let pst = PstDenoiser::<f64>::new(cfg.pst_config().unwrap(), SEED ^ 2).unwrap();
    let started = std::time::Instant::now();
    let mut rng = Prng::derive(SEED, "fix-train-denoiser");
    let hist =
        train_denoiser(&pst, &pairs, &sched, cfg.diff.epochs, cfg.diff.lr, &mut rng).unwrap();
    println!(
        "PST trained {} epochs in {:.0}s (lr {})",
        cfg.diff.epochs,
        started.elapsed().as_secs_f64(),
        cfg.diff.lr
    );
    for (e, l) in hist.iter().enumerate() {
        if e % 20 == 0 || e + 1 == hist.len() {
            println!("  pst epoch {e:4}  loss {l:8.4}");
        }
    }

    // Family statistics in standardized latent space (criterion 6 logic).
    let dims = train_latents_std[0].len();
    let families = [Family::Walk, Family::Jump];
    let mean_of = |zs: Vec<&Vec<f64>>| -> Vec<f64> {
        let mut m = vec![0.0; dims];
        for z in &zs {
            for (acc, v) in m.iter_mut().zip(z.iter()) {
                *acc += v / zs.len() as f64;
            }
        }
        m
    };
    let enc_means: Vec<Vec<f64>> = families
        .iter()
        .map(|fam| {
            mean_of(
                train_latents_std
                    .iter()
                    .zip(&train)
                    .filter(|(_, (_, _, f))| f == fam)
                    .map(|(z, _)| z)
                    .collect(),
            )
        })
        .collect();
    let dist = |z: &[f64], m: &[f64]| -> f64 {
        z.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    };
    let per_family = 40usize;
    let mut closer_own = 0usize;
    for (fi, fam) in families.iter().enumerate() {
        let texts: Vec<&String> =
            train.iter().filter(|(_, _, f)| f == fam).map(|(_, t, _)| t).collect();
        let mut draws = Vec::with_capacity(per_family);
        for i in 0..per_family {
            let cond = Condition::from_text(texts[i % texts.len()], cfg.motion.cond_dim).unwrap();
            let mut rng = Prng::derive(SEED, &format!("c6-{}-{i}", fam.name()));
            let z = sample(
                &pst,
                &cond,
                &sched,
                SampleMode::Ddim,
                cfg.diff.steps,
                cfg.diff.guidance,
                &mut rng,
            )
            .unwrap();
            draws.push(z.data_vec());
        }
        for z in &draws {
            if dist(z, &enc_means[fi]) < dist(z, &enc_means[1 - fi]) {
                closer_own += 1;
            }
        }
        let sampled_mean = mean_of(draws.iter().collect());
        let rms = (sampled_mean
            .iter()
            .zip(&enc_means[fi])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / dims as f64)
            .sqrt();
        let sep = dist(&enc_means[fi], &enc_means[1 - fi]) / (dims as f64).sqrt();
        println!(
            "  family {}: sampled-mean RMS dev {rms:.3} (limit 0.15), family-mean separation {sep:.3}",
            fam.name()
        );
    }
    println!("  own-family wins {closer_own}/{} (need {})", 2 * per_family, 72);

    // Infiller (criterion 7 logic).
    let mmae = Mmae::<f64>::new(cfg.mmae_config().unwrap(), SEED ^ 3).unwrap();
    let seq_pairs: Vec<(MotionSequence<f64>, Condition<f64>)> = train
        .iter()
        .map(|(seq, text, _)| {
            (seq.clone(), Condition::from_text(text, cfg.motion.cond_dim).unwrap())
        })
        .collect();
    let started = std::time::Instant::now();
    let mut rng = Prng::derive(SEED, "fix-train-mmae");
    let hist = train_mmae(
        &mmae,
        &seq_pairs,
        selector,
        cfg.select.rate,
        &skel,
        cfg.mmae.epochs,
        cfg.mmae.lr,
        &mut rng,
    )
    .unwrap();
    println!(
        "MMAE trained {} epochs in {:.0}s (lr {})",
        cfg.mmae.epochs,
        started.elapsed().as_secs_f64(),
        cfg.mmae.lr
    );
    for (e, h) in hist.iter().enumerate() {
        if e % 20 == 0 || e + 1 == hist.len() {
            println!(
                "  mmae epoch {e:4}  total {:8.4}  rec {:8.4}  fk {:8.4}  bone {:7.4}  smooth {:7.4}",
                h.total, h.reconstruction, h.fk_position, h.bone_length, h.smoothness
            );
        }
    }

    let mut lerp_sum = 0.0;
    let mut mmae_sum = 0.0;
    for ((seq, text, _), kf) in held.iter().zip(&held_kfs) {
        let set = selector.select(seq, k).unwrap();
        let lerped = lerp_infill(seq, &set).unwrap();
        lerp_sum += world_mpjpe(&skel, &lerped, seq);
        let cond = Condition::from_text(text, cfg.motion.cond_dim).unwrap();
        let filled = infill(&mmae, kf, cond, cfg.motion.frame_rate, true).unwrap();
        mmae_sum += world_mpjpe(&skel, &filled, seq);
    }
    println!(
        "held-out infill MPJPE: trained {:.2} mm vs linear {:.2} mm",
        mmae_sum / held.len() as f64,
        lerp_sum / held.len() as f64
    );
}
