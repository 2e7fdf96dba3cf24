//! `keymotion` — synthesize, select, train, sample, and evaluate
//! keyframe-based motion generation pipelines from the command line.
//!
//! Exit codes: 0 success, 2 invalid input (bad arguments, malformed
//! files, dimension mismatches), 1 runtime failure.

use clap::{Parser, Subcommand};
use keymotion::Error;
use keymotion_cli::config::PipelineConfig;
use keymotion_cli::pipeline;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "keymotion",
    about = "Keyframe-based text-conditioned motion generation toolkit",
    version
)]
struct Cli {
    /// JSON configuration file (defaults apply when omitted).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed; every stage derives its own stream from it.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory for artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic motion dataset with condition sentences.
    Synth {
        /// Motion family (repeatable): walk|turn|jump|sit|compose.
        #[arg(long, required = true)]
        family: Vec<String>,
        /// Sequences per family.
        #[arg(long, default_value_t = 8)]
        count: usize,
    },
    /// Pick keyframes from a motion file and report the selection.
    Select {
        /// Motion file (.kmbin or .json).
        input: PathBuf,
        /// Selector: uniform|mdo|mieo|imdo (default from config).
        #[arg(long)]
        method: Option<String>,
        /// Keyframe rate in (0, 1]; K = max(2, round(rate * N)).
        #[arg(long)]
        rate: Option<f64>,
        /// Exact keyframe count (overrides --rate).
        #[arg(long)]
        count: Option<usize>,
        /// Also write the selected rows as a keyframes.json file.
        #[arg(long)]
        emit_keyframes: bool,
    },
    /// Rebuild a full sequence from a keyframe file.
    Infill {
        /// Keyframe file produced by `select --emit-keyframes`.
        keyframes: PathBuf,
        /// Infill method: lerp|slerp|mmae.
        #[arg(long, default_value = "lerp")]
        method: String,
        /// Condition sentence (mmae only).
        #[arg(long)]
        text: Option<String>,
        /// Ground-truth motion for MPJPE / PA-MPJPE reporting.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Trained masked-autoencoder checkpoint (mmae only).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train one stage: vae|denoiser|mmae.
    Train {
        /// Stage to train.
        #[arg(long)]
        stage: String,
        /// Dataset directory written by `synth`.
        #[arg(long)]
        data: PathBuf,
    },
    /// Sample motions for a sentence through the full trained stack.
    Sample {
        /// Condition sentence.
        text: String,
        /// Number of motions to draw.
        #[arg(long, default_value_t = 1)]
        count: usize,
        /// Directory holding the three checkpoints (defaults to --out).
        #[arg(long)]
        checkpoints: Option<PathBuf>,
    },
    /// Score a generated directory against a reference directory.
    Eval {
        /// Directory of generated motions.
        generated: PathBuf,
        /// Directory of reference motions.
        reference: PathBuf,
        /// Comma-separated metrics
        /// (fid|diversity|mmd|rprecision|multimodality|mpjpe|pampjpe).
        #[arg(long)]
        metrics: Option<String>,
        /// Sweep mode instead of plain evaluation: guidance.
        #[arg(long)]
        sweep: Option<String>,
        /// Comma-separated sweep values.
        #[arg(long)]
        values: Option<String>,
        /// Checkpoint directory for sweep sampling (defaults to --out).
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        /// Samples drawn per sweep value.
        #[arg(long, default_value_t = 8)]
        sweep_count: usize,
    },
    /// Finite-difference gradient verification of ops and model losses.
    Gradcheck {
        /// Skip the three full model-loss cases.
        #[arg(long)]
        quick: bool,
    },
    /// Forward kinematics: world-space joint positions for a motion file.
    Fk {
        /// Motion file (.kmbin or .json).
        input: PathBuf,
        /// Ignore root translation/yaw (root-isolated positions).
        #[arg(long)]
        isolated: bool,
    },
}

fn run(cli: Cli) -> keymotion::Result<()> {
    let cfg = PipelineConfig::load(cli.config.as_deref())?;
    cfg.validate()?;
    let seed = cli.seed.or(cfg.seed).unwrap_or(0);
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.out.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));

    match cli.command {
        Command::Synth { family, count } => {
            let families = pipeline::parse_families(&family)?;
            let manifest = pipeline::cmd_synth(&cfg, &families, count, seed, &out)?;
            print_json(&manifest)
        }
        Command::Select { input, method, rate, count, emit_keyframes } => {
            let report = pipeline::cmd_select(
                &cfg,
                &input,
                method.as_deref(),
                rate,
                count,
                emit_keyframes,
                &out,
            )?;
            print_json(&report)
        }
        Command::Infill { keyframes, method, text, reference, checkpoint } => {
            let method: pipeline::InfillMethod = method.parse()?;
            let report = pipeline::cmd_infill(
                &cfg,
                &keyframes,
                method,
                text.as_deref(),
                reference.as_deref(),
                checkpoint.as_deref(),
                &out,
            )?;
            print_json(&report)
        }
        Command::Train { stage, data } => {
            let stage: pipeline::Stage = stage.parse()?;
            let report = pipeline::cmd_train(&cfg, stage, &data, &out, seed)?;
            print_json(&report)
        }
        Command::Sample { text, count, checkpoints } => {
            let ckpt_dir = checkpoints.unwrap_or_else(|| out.clone());
            let report = pipeline::cmd_sample(&cfg, &ckpt_dir, &text, count, seed, &out)?;
            print_json(&report)
        }
        Command::Eval { generated, reference, metrics, sweep, values, checkpoints, sweep_count } => {
            match sweep.as_deref() {
                None => {
                    let names: Vec<String> = match metrics {
                        Some(list) => list.split(',').map(|s| s.trim().to_string()).collect(),
                        None => pipeline::DEFAULT_METRICS.iter().map(|s| s.to_string()).collect(),
                    };
                    let report =
                        pipeline::cmd_eval(&cfg, &generated, &reference, &names, seed, &out)?;
                    print_json(&report)
                }
                Some("guidance") => {
                    let values = parse_values(values.as_deref().unwrap_or("1.5,2.5,4.0"))?;
                    let ckpt_dir = checkpoints.unwrap_or_else(|| out.clone());
                    let report = pipeline::cmd_guidance_sweep(
                        &cfg,
                        &ckpt_dir,
                        &reference,
                        &values,
                        sweep_count,
                        seed,
                        &out,
                    )?;
                    print_json(&report)
                }
                Some(other) => {
                    Err(Error::invalid(format!("unknown sweep '{other}' (expected guidance)")))
                }
            }
        }
        Command::Gradcheck { quick } => {
            let report = pipeline::cmd_gradcheck(!quick, &out)?;
            print_json(&report)
        }
        Command::Fk { input, isolated } => {
            let report = pipeline::cmd_fk(&input, isolated, &out)?;
            print_json(&report)
        }
    }
}

fn parse_values(list: &str) -> keymotion::Result<Vec<f64>> {
    list.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("'{s}' is not a number")))
        })
        .collect()
}

fn print_json<D: serde::Serialize>(doc: &D) -> keymotion::Result<()> {
    println!("{}", serde_json::to_string_pretty(doc)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            if err.is_validation() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
