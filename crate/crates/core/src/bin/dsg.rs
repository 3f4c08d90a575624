use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dsg::experiment::{ablation_text, cmd_ablate, cmd_eval, cmd_gen, cmd_train, ExperimentConfig, ExperimentError};

#[derive(Parser)]
#[command(name = "dsg", version, about = "Differentiable scene graphs on synthetic referring-relationship data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/val/test splits and their images.
    Gen {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a generated dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the test split and print the report as JSON.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint file, or a training output directory holding `model.dsg`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        render_dir: Option<PathBuf>,
    },
    /// Train and evaluate all five variants and write the comparison table.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// `key = value` config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// One of dsg, two-step, no-sgl, no-br, no-dsg.
    #[arg(long)]
    ablation: Option<String>,
    /// sum or attention.
    #[arg(long)]
    mode: Option<String>,
}

impl Common {
    /// Loads the config (falling back to `echo` when no file was given) and
    /// applies the flag overrides.
    fn resolve(&self, echo: Option<&Path>) -> Result<ExperimentConfig, ExperimentError> {
        let mut cfg = match (&self.config, echo) {
            (Some(p), _) => ExperimentConfig::load(p)?,
            (None, Some(p)) if p.is_file() => ExperimentConfig::load(p)?,
            _ => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.set("seed", &s.to_string())?;
        }
        if let Some(a) = &self.ablation {
            cfg.set("ablation", a)?;
        }
        if let Some(m) = &self.mode {
            cfg.set("mode", m)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), ExperimentError> {
    match cli.command {
        Command::Gen { common, out } => {
            cmd_gen(&common.resolve(None)?, &out)?;
            eprintln!("wrote dataset to {}", out.display());
        }
        Command::Train { common, data, out } => {
            let run = cmd_train(&common.resolve(None)?, &data, Some(&out))?;
            if let Some(m) = run.metrics.last() {
                eprintln!(
                    "epoch {}: val subject IOU {:.4}, object IOU {:.4}",
                    m.epoch, m.val_subj_iou, m.val_obj_iou
                );
            }
            eprintln!("wrote checkpoint to {}", out.join("model.dsg").display());
        }
        Command::Eval {
            common,
            model,
            data,
            out,
            render_dir,
        } => {
            let (ckpt, echo) = if model.is_dir() {
                (model.join("model.dsg"), Some(model.join("config.txt")))
            } else {
                (model.clone(), model.parent().map(|d| d.join("config.txt")))
            };
            let cfg = common.resolve(echo.as_deref())?;
            let report = cmd_eval(&cfg, &ckpt, &data, render_dir.as_deref())?;
            let json = serde_json::to_string_pretty(&report).expect("report serializes");
            println!("{json}");
            if let Some(p) = out {
                std::fs::write(&p, format!("{json}\n")).map_err(|source| ExperimentError::Io { path: p, source })?;
            }
        }
        Command::Ablate { common, data, out } => {
            let rows = cmd_ablate(&common.resolve(None)?, &data, &out)?;
            print!("{}", ablation_text(&rows));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
