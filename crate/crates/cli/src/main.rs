//! `agro`: command-line orchestrator for the worst-group robustness
//! experiments.
//!
//! A run is a directory of flat artifacts (CSV datasets, binary checkpoints,
//! trace CSVs, JSON metrics) plus per-stage manifests with content hashes.
//! Stages consume each other's artifacts from disk, so any stage can be
//! re-run in isolation and reproduces its outputs byte for byte.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 missing input artifact,
//! 3 configuration error.

mod config;
mod manifest;
mod runs;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use agro_core::Error;
use clap::{Args, Parser, Subcommand};

use config::{resolve_config, SelectionRule};
use runs::RunDir;

/// Environment variable naming the directory that holds all runs.
const RUNS_ROOT_ENV: &str = "AGRO_RUNS_ROOT";

#[derive(Parser)]
#[command(name = "agro", about = "Adversarial group discovery with worst-group robust training on synthetic spurious-correlation benchmarks", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Run directory (relative paths resolve under the runs root).
    #[arg(long)]
    run_dir: PathBuf,
    /// Runs root; defaults to $AGRO_RUNS_ROOT, then `runs`.
    #[arg(long)]
    runs_root: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(&self) -> RunDir {
        if self.run_dir.is_absolute() {
            return RunDir::new(self.run_dir.clone());
        }
        let root = self
            .runs_root
            .clone()
            .or_else(|| std::env::var_os(RUNS_ROOT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("runs"));
        RunDir::new(root.join(&self.run_dir))
    }

    fn run_id(&self) -> String {
        self.run_dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".to_string())
    }
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// JSON config file; omitted fields take the documented defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Experiment seed (overrides the config file).
    #[arg(long)]
    seed: Option<u64>,
    /// Named parameter override, e.g. --override alpha=0.1 (repeatable).
    #[arg(long = "override", value_parser = parse_override)]
    overrides: Vec<(String, String)>,
}

fn parse_override(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .ok_or_else(|| format!("expected param=value, got `{s}`"))
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset splits.
    Generate {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train the ERM baseline with per-epoch checkpoints.
    TrainErm {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Build K-fold out-of-fold grouper features.
    ExtractFeatures {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Fit the error-aware slice mixture on the features.
    FitSlices {
        #[command(flatten)]
        run: RunArgs,
        /// `gamma1` (error-aware, default) or `gamma0` (plain clustering).
        #[arg(long, default_value = "gamma1")]
        variant: String,
    },
    /// Pretrain the grouper to the slice responsibilities.
    PretrainGrouper {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Worst-group training over hard groups from the given source.
    TrainGdro {
        #[command(flatten)]
        run: RunArgs,
        /// oracle | labels | slices | slices-gamma0
        #[arg(long, default_value = "oracle")]
        groups: String,
    },
    /// The adversarial rounds: warm-up, adversary, final primary phase.
    TrainAgro {
        #[command(flatten)]
        run: RunArgs,
        /// Start the adversary from a random grouper instead of the
        /// pretrained one (reproduces the degenerate failure mode).
        #[arg(long)]
        random_adversary_init: bool,
    },
    /// Select a checkpoint and evaluate it; writes the metrics file.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        /// erm | agro | gdro-oracle | gdro-labels | gdro-slices | gdro-slices-gamma0
        #[arg(long, default_value = "agro")]
        model: String,
        /// Evaluation split for the main accuracy numbers.
        #[arg(long, default_value = "test")]
        split: String,
        /// full-dev | oracle | predicted (defaults per model).
        #[arg(long)]
        selection: Option<String>,
        /// Aggregate metrics over this many seed subruns instead.
        #[arg(long)]
        seeds: Option<u64>,
    },
    /// Checkpoint selection only; writes the selection file.
    Select {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "agro")]
        model: String,
        #[arg(long)]
        selection: Option<String>,
    },
    /// Run every stage end to end (optionally over several seeds).
    Pipeline {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        config: ConfigArgs,
        /// Number of consecutive seeds to run.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Run the pipeline once per value of a hyperparameter.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        config: ConfigArgs,
        /// alpha | m | t2 | lr | weight_decay | hidden
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[arg(long, default_value = "test")]
        split: String,
    },
}

fn parse_rule(s: &Option<String>) -> Result<Option<SelectionRule>, Error> {
    match s.as_deref() {
        None => Ok(None),
        Some("full-dev") => Ok(Some(SelectionRule::FullDev)),
        Some("oracle") => Ok(Some(SelectionRule::Oracle)),
        Some("predicted") => Ok(Some(SelectionRule::Predicted)),
        Some(other) => Err(Error::Config(format!(
            "unknown selection rule `{other}`; expected full-dev, oracle, or predicted"
        ))),
    }
}

fn dispatch(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Generate { run, config } => {
            let dir = run.resolve();
            let cfg = resolve_config(&run.run_id(), config.config.as_deref(), config.seed, &config.overrides)?;
            stages::cmd_generate(&dir, &cfg)
        }
        Command::TrainErm { run } => stages::cmd_train_erm(&run.resolve()),
        Command::ExtractFeatures { run } => stages::cmd_extract_features(&run.resolve()),
        Command::FitSlices { run, variant } => {
            if variant != "gamma1" && variant != "gamma0" {
                return Err(Error::Config(format!(
                    "unknown slice variant `{variant}`; expected gamma1 or gamma0"
                )));
            }
            stages::cmd_fit_slices(&run.resolve(), &variant)
        }
        Command::PretrainGrouper { run } => stages::cmd_pretrain_grouper(&run.resolve()),
        Command::TrainGdro { run, groups } => stages::cmd_train_gdro(&run.resolve(), &groups),
        Command::TrainAgro {
            run,
            random_adversary_init,
        } => stages::cmd_train_agro(&run.resolve(), random_adversary_init),
        Command::Evaluate {
            run,
            model,
            split,
            selection,
            seeds,
        } => {
            let dir = run.resolve();
            match seeds {
                Some(n) if n > 1 => {
                    let cfg = config::read_config(&dir.config())?;
                    let seed_list: Vec<u64> = (cfg.seed..cfg.seed + n).collect();
                    let report = stages::cmd_evaluate_multiseed(&dir, &model, &seed_list)?;
                    println!(
                        "{model}: avg {:.4} ({:.4}) worst {:.4} ({:.4}) ood {:.4} ({:.4})",
                        report.avg_accuracy_mean,
                        report.avg_accuracy_std,
                        report.worst_group_accuracy_mean,
                        report.worst_group_accuracy_std,
                        report.ood_accuracy_mean,
                        report.ood_accuracy_std,
                    );
                    Ok(())
                }
                _ => {
                    let rule = parse_rule(&selection)?;
                    let report = stages::cmd_evaluate(&dir, &model, &split, rule)?;
                    println!(
                        "{model} [{split}]: avg {:.4} worst {} ood {} (checkpoint {})",
                        report.avg_accuracy,
                        report
                            .worst_group_accuracy
                            .map_or("n/a".into(), |v| format!("{v:.4}")),
                        report
                            .ood_accuracy
                            .map_or("n/a".into(), |v| format!("{v:.4}")),
                        report.selected_checkpoint.unwrap_or(0),
                    );
                    Ok(())
                }
            }
        }
        Command::Select {
            run,
            model,
            selection,
        } => {
            let rule = parse_rule(&selection)?;
            let file = stages::cmd_select(&run.resolve(), &model, rule)?;
            println!(
                "{model}: checkpoint {} (score {:.4}, rule {})",
                file.selected_checkpoint, file.score, file.rule
            );
            Ok(())
        }
        Command::Pipeline {
            run,
            config,
            seeds,
            split,
        } => {
            let dir = run.resolve();
            let cfg = resolve_config(&run.run_id(), config.config.as_deref(), config.seed, &config.overrides)?;
            stages::cmd_pipeline(&dir, &cfg, seeds, &split)
        }
        Command::Sweep {
            run,
            config,
            param,
            values,
            seeds,
            split,
        } => {
            if !config::OVERRIDE_PARAMS.contains(&param.as_str()) {
                return Err(Error::Config(format!(
                    "unknown sweep parameter `{param}`; expected one of {:?}",
                    config::OVERRIDE_PARAMS
                )));
            }
            let dir = run.resolve();
            let cfg = resolve_config(&run.run_id(), config.config.as_deref(), config.seed, &config.overrides)?;
            let rows = stages::cmd_sweep(&dir, &cfg, &param, &values, seeds, &split)?;
            println!("{param},avg_accuracy,worst_group_accuracy,ood_accuracy");
            for r in rows {
                println!(
                    "{},{:.4},{:.4},{:.4}",
                    r.value, r.avg_accuracy, r.worst_group_accuracy, r.ood_accuracy
                );
            }
            Ok(())
        }
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::MissingInput(_) => 2,
        Error::Config(_) | Error::Parse(_) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version are not errors
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(3);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
