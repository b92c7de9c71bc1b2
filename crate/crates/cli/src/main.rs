//! `lpca`: synthetic data, training, evaluation, inference, gradient checks
//! and benchmarks for LPCANet.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric failure (non-finite values or a failed gradient check).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lpca_core::model::Preset;
use lpca_core::{Error, Result};
use lpca_tensor::layers::UpsampleMode;
use lpca_tensor::TensorError;

use commands::{BenchArgs, GradcheckArgs};
use config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "lpca", version, about = "LPCANet rail-defect segmentation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` configuration file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Set any configuration key, e.g. `--set train.lr=0.001` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic RGB-D dataset with a manifest.
    Synth {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        /// Image size as HxW.
        #[arg(long)]
        size: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Defects per image, N or LO-HI.
        #[arg(long)]
        defects: Option<String>,
        /// Overwrite previously generated files in a non-empty directory.
        #[arg(long)]
        force: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Train a model and write checkpoints and a CSV log.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Held-out manifest evaluated during training.
        #[arg(long)]
        eval_data: Option<PathBuf>,
        #[arg(long)]
        preset: Option<Preset>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Input size HxW; defaults to the size of the training images.
        #[arg(long)]
        input: Option<String>,
        #[arg(long, value_parser = ["on", "off"])]
        augment: Option<String>,
        /// Remove cross-modal attention.
        #[arg(long)]
        no_cam: bool,
        /// Remove every feature-enhancement block.
        #[arg(long)]
        no_sfe: bool,
        /// Feature-enhancement stages as four 0/1 digits, e.g. 1110.
        #[arg(long)]
        sfe_stages: Option<String>,
        /// Stage-1 depth width; later stages double.
        #[arg(long)]
        lpm_width: Option<usize>,
        #[arg(long)]
        upsample: Option<UpsampleMode>,
        #[command(flatten)]
        common: Common,
    },
    /// Score a checkpoint on a manifest; writes metrics, curves and predicted masks.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Predict one mask.
    Infer {
        #[arg(long)]
        rgb: PathBuf,
        #[arg(long)]
        depth: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Finite-difference gradient checks of every op and the whole model.
    Gradcheck {
        #[arg(long, default_value = "tiny")]
        preset: Preset,
        /// `all` or a comma-separated list of op names.
        #[arg(long, default_value = "all")]
        ops: String,
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
        /// Tolerance for the end-to-end model check.
        #[arg(long, default_value_t = 1e-4)]
        model_tolerance: f64,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        /// Add a check with a deliberately wrong backward pass.
        #[arg(long)]
        inject_fault: bool,
    },
    /// Parameter count, mult-adds and forward latency.
    Bench {
        #[arg(long)]
        preset: Option<Preset>,
        /// Input size HxW.
        #[arg(long)]
        input: Option<String>,
        #[arg(long, default_value_t = 3)]
        warmup: usize,
        #[arg(long, default_value_t = 20)]
        runs: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
}

fn overrides(common: &Common) -> Result<Overrides> {
    let mut o = match &common.config {
        Some(p) => Overrides::read(p)?,
        None => Overrides::default(),
    };
    apply_sets(&mut o, &common.set)?;
    Ok(o)
}

fn apply_sets(o: &mut Overrides, sets: &[String]) -> Result<()> {
    for kv in sets {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set {kv:?}: expected KEY=VALUE")))?;
        o.set(k.trim(), v.trim())?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            out,
            n,
            size,
            seed,
            defects,
            force,
            common,
        } => {
            let mut o = overrides(&common)?;
            o.set_opt("out", out.map(|p| p.display().to_string()))?;
            o.set_opt("synth.n", n)?;
            o.set_opt("synth.size", size)?;
            o.set_opt("seed", seed)?;
            o.set_opt("synth.defects", defects)?;
            commands::synth_cmd(&RunConfig::resolve(&o)?, force)
        }
        Command::Train {
            data,
            eval_data,
            preset,
            epochs,
            batch,
            lr,
            seed,
            out,
            input,
            augment,
            no_cam,
            no_sfe,
            sfe_stages,
            lpm_width,
            upsample,
            common,
        } => {
            let mut o = overrides(&common)?;
            o.set_opt("data", data.map(|p| p.display().to_string()))?;
            o.set_opt("eval_data", eval_data.map(|p| p.display().to_string()))?;
            o.set_opt("preset", preset)?;
            o.set_opt("train.epochs", epochs)?;
            o.set_opt("train.batch", batch)?;
            o.set_opt("train.lr", lr)?;
            o.set_opt("seed", seed)?;
            o.set_opt("out", out.map(|p| p.display().to_string()))?;
            o.set_opt("model.input", input)?;
            o.set_opt("augment", augment)?;
            if no_cam {
                o.set("model.cam", "disabled")?;
            }
            if no_sfe && sfe_stages.is_some() {
                return Err(Error::Config("--no-sfe and --sfe-stages are mutually exclusive".into()));
            }
            if no_sfe {
                o.set("model.sfe_stages", "0000")?;
            }
            o.set_opt("model.sfe_stages", sfe_stages)?;
            o.set_opt("model.depth_channels", lpm_width.map(|c| format!("{c},{},{},{}", 2 * c, 4 * c, 8 * c)))?;
            o.set_opt("model.upsample", upsample)?;
            let input_given = o.contains("model.input");
            commands::train_cmd(&mut RunConfig::resolve(&o)?, input_given)
        }
        Command::Eval {
            data,
            checkpoint,
            out,
            common,
        } => {
            let o = checkpoint_overrides(&common, checkpoint.as_ref(), |o| {
                o.set("data", data.display().to_string())?;
                o.set("out", out.display().to_string())
            })?;
            commands::eval_cmd(&RunConfig::resolve(&o)?)
        }
        Command::Infer {
            rgb,
            depth,
            checkpoint,
            out,
            common,
        } => {
            let o = checkpoint_overrides(&common, checkpoint.as_ref(), |_| Ok(()))?;
            commands::infer_cmd(&RunConfig::resolve(&o)?, &rgb, &depth, &out)
        }
        Command::Gradcheck {
            preset,
            ops,
            tolerance,
            model_tolerance,
            seeds,
            inject_fault,
        } => commands::gradcheck_cmd(&GradcheckArgs {
            preset,
            ops,
            tolerance,
            model_tolerance,
            seeds,
            inject_fault,
        }),
        Command::Bench {
            preset,
            input,
            warmup,
            runs,
            seed,
            common,
        } => {
            let mut o = overrides(&common)?;
            o.set_opt("preset", preset)?;
            o.set_opt("model.input", input)?;
            o.set_opt("seed", seed)?;
            commands::bench_cmd(&RunConfig::resolve(&o)?, &BenchArgs { warmup, runs })
        }
    }
}

/// Eval and infer take the model configuration from `--config`, or from the
/// `config.resolved` beside the checkpoint when no config is given.
fn checkpoint_overrides(
    common: &Common,
    checkpoint: Option<&PathBuf>,
    extra: impl FnOnce(&mut Overrides) -> Result<()>,
) -> Result<Overrides> {
    let mut o = match (&common.config, checkpoint) {
        (Some(p), _) => Overrides::read(p)?,
        (None, Some(ck)) => Overrides::read(&commands::config_beside(ck)?)?,
        (None, None) => return Err(Error::Config("--checkpoint or --config is required".into())),
    };
    apply_sets(&mut o, &common.set)?;
    if let Some(ck) = checkpoint {
        o.set("checkpoint", ck.display().to_string())?;
    }
    extra(&mut o)?;
    Ok(o)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Tensor(TensorError::Config(_)) => 1,
        e if e.is_numeric() => 3,
        _ => 2,
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("LPCA_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("LPCA_THREADS={v:?} must be a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match configure_threads().and_then(|_| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
