use std::path::PathBuf;
use std::process::ExitCode;

use art_core::harness::config::RunConfig;
use art_core::harness::{eval, macs, sweep, train, viz};
use art_core::ArtError;
use clap::{Args, Parser, Subcommand};

/// Adaptive relational transformer for pedestrian trajectory prediction.
///
/// Exit status: 0 success, 1 usage or configuration error, 2 data error,
/// 3 checkpoint incompatibility.
#[derive(Parser, Debug)]
#[command(name = "art", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Configuration file of `key = value` lines; omitted keys keep defaults.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set model.k=5`. Applied after the file, in order.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train and write `loss.csv` and `checkpoint.artc` into `output.dir`.
    Train(Common),
    /// Score a checkpoint (or the constant-velocity baseline) on the validation split.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Shorthand for `--set eval.checkpoint=PATH`.
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        /// Shorthand for `--set eval.baseline=true`.
        #[arg(long)]
        baseline: bool,
    },
    /// Metrics and mean k* across top-p thresholds.
    SweepP {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        /// Comma-separated thresholds; shorthand for `--set sweep.p_values=...`.
        #[arg(long, value_name = "LIST")]
        p: Option<String>,
        /// Train one model per threshold instead of reusing one checkpoint.
        #[arg(long)]
        retrain: bool,
    },
    /// Analytic multiply-accumulate count per module.
    Macs {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Per-step attention of one agent pair as CSV and SVG.
    VizAttention {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        /// Validation scene index.
        #[arg(long)]
        scene: Option<usize>,
        /// Agent pair as `I,J`.
        #[arg(long, value_name = "I,J")]
        pair: Option<String>,
    },
}

fn load(common: &Common, extra: Vec<String>) -> Result<RunConfig, ArtError> {
    let mut overrides = common.set.clone();
    overrides.extend(extra);
    RunConfig::load(common.config.as_deref(), &overrides)
}

fn checkpoint_override(path: &Option<PathBuf>) -> Vec<String> {
    path.iter().map(|p| format!("eval.checkpoint={}", p.display())).collect()
}

fn run(cli: Cli) -> Result<(), ArtError> {
    match cli.command {
        Command::Train(common) => {
            let cfg = load(&common, vec![])?;
            let out = train::cmd_train(&cfg)?;
            match out.history.last() {
                Some(r) => println!(
                    "trained {} epochs: train_loss {:.6}, val minADE {:.6}, minFDE {:.6}",
                    r.epoch, r.train_loss, r.val_min_ade, r.val_min_fde
                ),
                None => println!("saved initial parameters (0 epochs)"),
            }
            println!("wrote {}", cfg.output_dir.display());
        }
        Command::Eval {
            common,
            checkpoint,
            baseline,
        } => {
            let mut extra = checkpoint_override(&checkpoint);
            if baseline {
                extra.push("eval.baseline=true".into());
            }
            let cfg = load(&common, extra)?;
            let (report, path) = eval::cmd_eval(&cfg)?;
            println!(
                "minADE {:.6} minFDE {:.6} over {} scenes (k = {})",
                report.min_ade,
                report.min_fde,
                report.per_scene.len(),
                report.k_used
            );
            println!("wrote {}", path.display());
        }
        Command::SweepP {
            common,
            checkpoint,
            p,
            retrain,
        } => {
            let mut extra = checkpoint_override(&checkpoint);
            extra.extend(p.map(|p| format!("sweep.p_values={p}")));
            if retrain {
                extra.push("sweep.retrain=true".into());
            }
            let cfg = load(&common, extra)?;
            let (rows, path) = sweep::cmd_sweep_p(&cfg)?;
            print!("{}", sweep::sweep_csv(&rows));
            println!("wrote {}", path.display());
        }
        Command::Macs { common, checkpoint } => {
            let cfg = load(&common, checkpoint_override(&checkpoint))?;
            let (sparse, dense, path) = macs::cmd_macs(&cfg)?;
            print!("{}", macs::report_csv(&sparse));
            let (s, d) = (sparse.counter.get("rt_attention"), dense.counter.get("rt_attention"));
            if d > 0.0 {
                println!("rt_attention sparse/dense = {:.6}", s / d);
            }
            println!("wrote {}", path.display());
        }
        Command::VizAttention {
            common,
            checkpoint,
            scene,
            pair,
        } => {
            let mut extra = checkpoint_override(&checkpoint);
            extra.extend(scene.map(|s| format!("viz.scene={s}")));
            if let Some(pair) = pair {
                let (i, j) = pair
                    .split_once(',')
                    .ok_or_else(|| ArtError::Config(format!("--pair `{pair}` is not I,J")))?;
                extra.push(format!("viz.i={}", i.trim()));
                extra.push(format!("viz.j={}", j.trim()));
            }
            let cfg = load(&common, extra)?;
            let (pa, path) = viz::cmd_viz_attention(&cfg)?;
            println!(
                "attention peak at t = {}, closest approach at t = {}",
                pa.peak_step(),
                pa.closest_step()
            );
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
