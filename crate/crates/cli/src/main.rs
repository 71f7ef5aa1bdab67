//! `ilora` — training, analysis and mask-prompt tools.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ilora::harness::{ModelKind, DEFAULT_TIE_TOLERANCE};
use ilora::maskgeom::{DEFAULT_IOU_CAP, DEFAULT_POINTS};
use ilora::{Error, ErrorKind};

use config::{resolve_out_dir, ExperimentConfig};

#[derive(Parser)]
#[command(name = "ilora", version, about = "Routed low-rank adapters: experiments and tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compare analytic gradients with central differences.
    GradCheck {
        /// JSON gradient-check config; defaults apply to missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the report here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train one arm on the synthetic task suite and write its artifacts.
    Train {
        /// JSON experiment config; defaults apply to missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_parser = parse_arm)]
        arm: Option<ModelKind>,
        /// Output directory (overrides ILORA_OUT_DIR and the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Held-out loss of a checkpoint on the config's task suite.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_parser = parse_arm)]
        arm: Option<ModelKind>,
    },
    /// Head similarity from checkpoints and gate statistics from traces.
    Analyze {
        /// One checkpoint per layer.
        #[arg(long = "checkpoint")]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        traces: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Bounding box and inscribed-circle point prompts for a PGM mask.
    Maskprompt {
        mask: PathBuf,
        #[arg(long, default_value_t = DEFAULT_IOU_CAP)]
        iou_cap: f64,
        #[arg(long, default_value_t = DEFAULT_POINTS)]
        k: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Synergy summary of a multi-task report against single-task baselines.
    Report {
        #[arg(long)]
        multi: PathBuf,
        /// Single-task reports; if omitted, the baselines stored in the
        /// multi-task report are used.
        #[arg(long = "single", num_args = 1..)]
        singles: Vec<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_TIE_TOLERANCE)]
        tie_tolerance: f64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn parse_arm(s: &str) -> Result<ModelKind, String> {
    ModelKind::ALL
        .into_iter()
        .find(|k| k.as_str() == s)
        .ok_or_else(|| {
            let names: Vec<_> = ModelKind::ALL.iter().map(|k| k.as_str()).collect();
            format!("unknown arm {s:?}; expected one of {}", names.join(", "))
        })
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Validation => 1,
        ErrorKind::Numerical => 2,
        ErrorKind::Io => 3,
    }
}

fn experiment(config: Option<PathBuf>, seed: Option<u64>, arm: Option<ModelKind>) -> ilora::Result<ExperimentConfig> {
    let mut cfg = match config {
        Some(p) => ExperimentConfig::load(&p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(a) = arm {
        cfg.arm = a;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::GradCheck { config, seed, output } => {
            let (report, text) = commands::grad_check(config.as_deref(), seed)?;
            commands::emit(&text, output.as_deref())?;
            if !report.passed {
                for t in report.tensors.iter().filter(|t| !t.passed) {
                    eprintln!(
                        "{}: relative error {:.3e} at instance {}, index {:?}",
                        t.name, t.max_rel_err, t.worst_instance, t.worst_index
                    );
                }
                return Ok(2);
            }
        }
        Command::Train { config, seed, arm, out } => {
            let cfg = experiment(config, seed, arm)?;
            let dir = resolve_out_dir(out, &cfg.output_dir);
            let report = commands::train_cmd(&cfg, &dir)?;
            eprintln!(
                "{}: mean final loss {:.6e} over {} tasks; artifacts in {}",
                report.kind,
                report.total_loss / report.final_loss.len() as f64,
                report.final_loss.len(),
                dir.display()
            );
        }
        Command::Eval {
            config,
            checkpoint,
            seed,
            arm,
        } => {
            let cfg = experiment(config, seed, arm)?;
            print!("{}", commands::eval_cmd(&cfg, &checkpoint)?);
        }
        Command::Analyze {
            checkpoints,
            traces,
            out,
        } => {
            let dir = resolve_out_dir(out, &PathBuf::from("."));
            for p in commands::analyze(&checkpoints, traces.as_deref(), &dir)? {
                eprintln!("wrote {}", p.display());
            }
        }
        Command::Maskprompt {
            mask,
            iou_cap,
            k,
            output,
        } => {
            commands::emit(&commands::maskprompt(&mask, k, iou_cap)?, output.as_deref())?;
        }
        Command::Report {
            multi,
            singles,
            tie_tolerance,
            output,
        } => {
            commands::emit(&commands::report(&multi, &singles, tie_tolerance)?, output.as_deref())?;
        }
    }
    Ok(0)
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
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
