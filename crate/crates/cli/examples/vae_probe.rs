//! Training probe: prints the VAE loss curve and held-out decoding
//! quality so acceptance-fixture budgets can be sized from evidence.
//! Usage: vae_probe [epochs] [lr] [lambda_pos] [kf_embed] [hidden] [latent_dim]

use keymotion::metrics::mpjpe;
use keymotion::motion::{forward_kinematics_isolated, MotionSequence, Skeleton};
use keymotion::rng::Prng;
use keymotion::synth::{generate, Family};
use keymotion::vae::{train_vae, KeyframeVae, Keyframes};
use keymotion_cli::config::PipelineConfig;

const SEED: u64 = 0x5eed_ac;

fn rows_mpjpe(skel: &Skeleton<f64>, a: &[f64], b: &[f64], rows: usize) -> f64 {
    let sa = MotionSequence::new(a.to_vec(), rows, skel.joints(), 20.0).unwrap();
    let sb = MotionSequence::new(b.to_vec(), rows, skel.joints(), 20.0).unwrap();
    let pa = forward_kinematics_isolated(&sa, skel).unwrap();
    let pb = forward_kinematics_isolated(&sb, skel).unwrap();
    mpjpe(&pa, &pb).unwrap()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let fetch = |i: usize, default: f64| -> f64 {
        args.get(i).map(|s| s.parse().expect("numeric arg")).unwrap_or(default)
    };
    let epochs = fetch(1, 150.0) as usize;
    let lr = fetch(2, 1.2e-3);
    let lambda_pos = fetch(3, 4.0);
    let kf_embed = fetch(4, 56.0) as usize;
    let hidden = fetch(5, 192.0) as usize;
    let latent_dim = fetch(6, 16.0) as usize;
    let dropout = fetch(7, 0.0);
    let lambda_kl = fetch(8, 1e-4);

    let mut cfg = PipelineConfig::default();
    cfg.motion.length = 48;
    cfg.motion.cond_dim = 32;
    cfg.select.rate = 0.1;
    cfg.vae.latent_tokens = 2;
    cfg.vae.latent_dim = latent_dim;
    cfg.vae.kf_embed_dim = kf_embed;
    cfg.vae.idx_embed_dim = 16;
    cfg.vae.enc_layers = 2;
    cfg.vae.dec_layers = 2;
    cfg.vae.heads = 4;
    cfg.vae.hidden_dim = hidden;
    cfg.vae.lambda_pos = lambda_pos;
    cfg.vae.dropout = dropout;
    cfg.vae.lambda_kl = lambda_kl;
    cfg.vae.epochs = epochs;
    cfg.vae.lr = lr;
    cfg.validate().unwrap();
    let skel = cfg.skeleton().unwrap();

    let mut train = Vec::new();
    let mut held = Vec::new();
    for family in [Family::Walk, Family::Jump] {
        for i in 0..100usize {
            let mut rng = Prng::derive(SEED, &format!("fix-{}-{i}", family.name()));
            let (seq, _text) =
                generate(family, &skel, cfg.motion.length, cfg.motion.frame_rate, &mut rng)
                    .unwrap();
            if i < 80 {
                train.push(seq);
            } else {
                held.push(seq);
            }
        }
    }
    let selector = cfg.selector().unwrap();
    let k = cfg.keyframe_k();
    let extract = |items: &[MotionSequence<f64>]| -> Vec<Keyframes<f64>> {
        items
            .iter()
            .map(|seq| Keyframes::extract(seq, &selector.select(seq, k).unwrap()).unwrap())
            .collect()
    };
    let train_kfs = extract(&train);
    let held_kfs = extract(&held);
    let d = skel.layout().dim();

    // Baseline: reconstruct every held-out keyframe stack with the mean
    // training keyframe rows (what a collapsed decoder would emit).
    let mut mean_rows = vec![0.0f64; k * d];
    for kf in &train_kfs {
        for (m, v) in mean_rows.iter_mut().zip(kf.rows()) {
            *m += v / train_kfs.len() as f64;
        }
    }
    let base: f64 = held_kfs
        .iter()
        .map(|kf| rows_mpjpe(&skel, &mean_rows, kf.rows(), k))
        .sum::<f64>()
        / held_kfs.len() as f64;
    println!("mean-rows baseline MPJPE on held-out: {base:.2} mm  (k = {k}, d = {d})");

    let started = std::time::Instant::now();
    let vae = KeyframeVae::<f64>::new(cfg.vae_config().unwrap(), SEED ^ 1).unwrap();
    let mut rng = Prng::derive(SEED, "fix-train-vae");
    let history =
        train_vae(&vae, &train_kfs, Some(&skel), cfg.vae.epochs, cfg.vae.lr, &mut rng).unwrap();
    println!("trained {} epochs in {:.1}s", epochs, started.elapsed().as_secs_f64());
    for (e, h) in history.iter().enumerate() {
        if e % 10 == 0 || e + 1 == history.len() {
            println!(
                "epoch {e:4}  total {:8.4}  rec {:8.4}  kl {:9.3}  bone {:7.4}  pos {:8.5}",
                h.total, h.reconstruction, h.kl, h.bone_length, h.position
            );
        }
    }

    let mut mpjpe_sum = 0.0;
    let mut exact = 0usize;
    let mut shown = 0;
    for kf in &held_kfs {
        let (mu, _sigma) = vae.encode(kf).unwrap();
        let out = vae.decode(&mu).unwrap();
        mpjpe_sum += rows_mpjpe(&skel, &out.keyframes.data_vec(), kf.rows(), k);
        if out.indices == kf.indices() {
            exact += 1;
        } else if shown < 4 {
            println!("  idx mismatch: got {:?} want {:?}", out.indices, kf.indices());
            shown += 1;
        }
    }
    println!(
        "held-out: keyframe MPJPE {:.2} mm, exact index sets {}/{}",
        mpjpe_sum / held_kfs.len() as f64,
        exact,
        held_kfs.len()
    );
}
