//! `part`: command-line front end for multi-task path training experiments.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use part_core::experiment::{self, ExperimentConfig};
use part_core::training::{RunReport, TrainMode};
use part_core::Error;

#[derive(Parser)]
#[command(
    name = "part",
    version,
    about = "Parallel multi-task training on a modular network"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Parallel,
    Sequential,
    Single,
}

impl From<ModeArg> for TrainMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Parallel => TrainMode::Parallel,
            ModeArg::Sequential => TrainMode::Sequential,
            ModeArg::Single => TrainMode::Single,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write each task's train/val split as CSV.
    GenData {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to `<out_dir>/data`, or `./data`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and write report.json and model.ckpt.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's mode.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Defaults to the config's out_dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Validation accuracy of a saved model.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
    /// CKA and sharing analysis of a saved model.
    Analyze {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Defaults to `analysis/` next to the checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-task accuracy deltas between two reports (B − A).
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Defaults to `compare.json` next to B.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Module-sharing histogram of the config's paths and its expectation.
    ProfileSharing {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn read_report(path: &Path) -> anyhow::Result<RunReport> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

fn print_epochs(report: &RunReport) {
    for e in &report.epochs {
        let accs: Vec<String> = e
            .per_task
            .iter()
            .map(|t| format!("{:.3}", t.val_acc))
            .collect();
        let losses: Vec<String> = e
            .per_task
            .iter()
            .map(|t| t.loss.map_or("-".into(), |l| format!("{l:.4}")))
            .collect();
        println!(
            "epoch {:>3}  lr {:.2e}  loss [{}]  val_acc [{}]",
            e.epoch,
            e.lr,
            losses.join(" "),
            accs.join(" ")
        );
    }
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenData { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let dir = out
                .or_else(|| cfg.out_dir.as_ref().map(|d| d.join("data")))
                .unwrap_or_else(|| PathBuf::from("data"));
            for p in experiment::gen_data(&cfg, &dir)? {
                println!("{}", p.display());
            }
        }
        Command::Train { config, mode, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(m) = mode {
                cfg.mode = m.into();
                cfg.validate()?;
            }
            let out = out
                .or_else(|| cfg.out_dir.clone())
                .ok_or_else(|| Error::Config {
                    field: "out_dir".into(),
                    msg: "no --out given and the config has no out_dir".into(),
                })?;
            let outcome = experiment::run_to_dir(&cfg, &out)?;
            print_epochs(&outcome.report);
            for f in &outcome.report.final_acc {
                println!("final task {:>2}  val_acc {:.4}", f.task, f.val_acc);
            }
            println!(
                "{} run, mean val_acc {:.4}, artifacts in {}",
                cfg.mode,
                outcome.report.mean_final_accuracy(),
                out.display()
            );
        }
        Command::Eval { ckpt, config } => {
            let cfg = ExperimentConfig::load(&config)?;
            for f in experiment::evaluate(&ckpt, &cfg)? {
                println!("task {:>2}  val_acc {:.4}", f.task, f.val_acc);
            }
        }
        Command::Analyze { ckpt, config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let analysis = experiment::analyze(&ckpt, &cfg)?;
            let dir =
                out.unwrap_or_else(|| ckpt.parent().unwrap_or(Path::new(".")).join("analysis"));
            for layer in &analysis.cka.layers {
                let v = layer
                    .task_cka
                    .map_or("undefined".into(), |v| format!("{v:.4}"));
                println!(
                    "layer {}  task cka {v}  shared modules {:?}",
                    layer.layer + 1,
                    layer.shared_modules
                );
            }
            for p in analysis.write(&dir)? {
                println!("{}", p.display());
            }
        }
        Command::Compare { a, b, out } => {
            let table = experiment::compare(&read_report(&a)?, &read_report(&b)?)?;
            println!("{table}");
            let out =
                out.unwrap_or_else(|| b.parent().unwrap_or(Path::new(".")).join("compare.json"));
            write_json(&out, &table)?;
        }
        Command::ProfileSharing { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let result = experiment::profile_sharing(&cfg)?;
            println!(
                "{:>3} {:>8} {:>10} {:>10}",
                "t", "count", "expected", "mean"
            );
            for (t, count) in &result.profile.histogram {
                let mean = result
                    .empirical_mean
                    .as_ref()
                    .map_or("-".into(), |m| format!("{:.3}", m[t]));
                println!("{t:>3} {count:>8} {:>10.3} {mean:>10}", result.expected[t]);
            }
            if let Some(out) = out {
                write_json(&out, &result)?;
            }
        }
    }
    Ok(())
}

/// 2 for invalid configuration, 3 for numeric failure, 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::Config { .. }) => 2,
        Some(Error::Numeric(_)) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
