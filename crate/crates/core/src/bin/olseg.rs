use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use olseg::harness::{self, RunConfig};
use olseg::{Error, Result};

/// Retinal layer segmentation of OCT volumes with cross-slice feature fusion.
#[derive(Parser)]
#[command(version)]
struct Cli {
    /// Run configuration (`key = value` lines); defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides `out_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Extra `key=value` overrides, applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Flatten, crop, denoise, equalize and resize every slice of a volume.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
    },
    /// Train on the split manifest in `data_dir`.
    Train,
    /// Score a checkpoint on `eval_split` and draw overlays.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Mean change of predicted surfaces between adjacent slices.
    Consistency {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        volume: PathBuf,
    },
    /// Write a synthetic dataset (volumes, annotations, split manifest).
    PhantomGen,
    /// Render a loss log as PNG curves.
    Plot {
        #[arg(long)]
        log: PathBuf,
    },
    /// Print the effective configuration.
    ShowConfig,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for kv in &cli.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Preprocess { input } => {
            let s = harness::cmd_preprocess(&cfg, input, &cfg.out_dir)
                .map_err(|e| stage("preprocess", input, e))?;
            for (j, why) in &s.failures {
                eprintln!("slice {j} unusable: {why}");
            }
            println!("{}", s.volume.display());
            println!("{}", s.transforms.display());
        }
        Command::Train => {
            let t = harness::cmd_train(&cfg)?;
            let best = &t.log[t.best_epoch - 1];
            println!(
                "best epoch {} (val MAD {})",
                t.best_epoch,
                best.val_mad.map_or("-".into(), |m| format!("{m:.4}"))
            );
        }
        Command::Eval { checkpoint } => {
            let r = harness::cmd_eval(&cfg, checkpoint)?;
            println!("{:<10} {:>9} {:>9} {:>9} {:>9}", "surface", "mad", "mad_std", "rmse", "rmse_std");
            for s in &r.summary {
                println!(
                    "{:<10} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
                    s.surface, s.mad_mean, s.mad_std, s.rmse_mean, s.rmse_std
                );
            }
        }
        Command::Consistency { checkpoint, volume } => {
            println!("{:.6}", harness::cmd_consistency(&cfg, checkpoint, volume)?);
        }
        Command::PhantomGen => {
            // Without --out the dataset goes where training will look for it.
            let dir = cli.out.clone().unwrap_or_else(|| cfg.data_dir.clone());
            let m = harness::cmd_phantom_gen(&cfg, &dir)?;
            println!(
                "{}: {} train, {} val, {} test volumes",
                dir.display(),
                m.train.len(),
                m.val.len(),
                m.test.len()
            );
        }
        Command::Plot { log } => {
            let out = cfg.out_dir.join("loss_curves.png");
            harness::cmd_plot(log, &out)?;
            println!("{}", out.display());
        }
        Command::ShowConfig => print!("{cfg}"),
    }
    Ok(())
}

fn stage(name: &str, input: &Path, e: Error) -> Error {
    let msg = format!("{name} {}: {e}", input.display());
    match e {
        Error::Config(_) => Error::Config(msg),
        Error::Numeric(_) => Error::Numeric(msg),
        _ => Error::Data(msg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(harness::exit_code(&e) as u8)
        }
    }
}
