use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use bdris_core::experiments::{
    classifier, describe_training, run_complexity, run_nmse_vs_snr, run_nmse_vs_t, run_overhead, run_prediction, run_sumrate, train_classifier,
    write_atomic, ExperimentSpec, Selection, Table,
};

/// Channel estimation, aging prediction and reflection design experiments
/// for BD-RIS assisted multi-user MIMO.
#[derive(Parser, Debug)]
#[command(name = "bdris", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Mean cascade NMSE of Tucker2-BALS and DFT-LS against the pilot SNR.
    Estimate(Common),
    /// Tucker2-BALS NMSE against the number of training blocks T.
    Sweep(Common),
    /// Prediction NMSE of CNN-AR and sample-fitted AR against the horizon.
    Predict {
        #[command(flatten)]
        common: Common,
        /// Classifier weights written by `train-cnn`.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Average downlink sum rate for perfect, proposed and conventional CSI.
    Sumrate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Pilot overhead table, or the operation counts with `--complexity`.
    Overhead {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        complexity: bool,
    },
    /// Trains the aging classifier and writes its weights to `--output`.
    TrainCnn(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// TOML experiment file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    drops: Option<usize>,
    /// Output file; CSV commands print to stdout when neither this nor the
    /// config names one.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Worker threads (0 = BDRIS_THREADS or the CPU count).
    #[arg(long)]
    parallelism: Option<usize>,
    /// Check the configuration and exit.
    #[arg(long)]
    validate: bool,
}

impl Common {
    fn spec(&self) -> Result<ExperimentSpec> {
        let mut spec = match &self.config {
            Some(p) => ExperimentSpec::load(p)?,
            None => ExperimentSpec::default(),
        };
        if let Some(s) = self.seed {
            spec.seed = s;
        }
        if let Some(d) = self.drops {
            spec.drops = d;
        }
        if let Some(o) = &self.output {
            spec.output = Some(o.clone());
        }
        if let Some(p) = self.parallelism {
            spec.parallelism = p;
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn emit(spec: &ExperimentSpec, table: &Table) -> Result<()> {
    let csv = table.to_csv();
    match &spec.output {
        Some(p) => write_atomic(p, &csv).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn with_model(mut spec: ExperimentSpec, model: &Option<PathBuf>) -> ExperimentSpec {
    if let Some(m) = model {
        spec.cnn.weights = Some(m.clone());
    }
    spec
}

fn run(cli: Cli) -> Result<()> {
    let (common, spec) = match &cli.command {
        Command::Estimate(c) | Command::Sweep(c) | Command::TrainCnn(c) => (c, c.spec()?),
        Command::Predict { common, model } | Command::Sumrate { common, model } => (common, with_model(common.spec()?, model)),
        Command::Overhead { common, .. } => (common, common.spec()?),
    };
    if common.validate {
        eprintln!("configuration `{}` is valid", spec.name);
        return Ok(());
    }
    match &cli.command {
        Command::Estimate(_) => emit(&spec, &run_nmse_vs_snr(&spec)?),
        Command::Sweep(_) => emit(&spec, &run_nmse_vs_t(&spec)?),
        Command::Predict { .. } | Command::Sumrate { .. } => {
            let model = match spec.predictor.selection {
                Selection::Cnn => Some(classifier(&spec)?),
                Selection::Oracle => None,
            };
            let table = if matches!(cli.command, Command::Predict { .. }) {
                run_prediction(&spec, model.as_ref())?
            } else {
                run_sumrate(&spec, model.as_ref())?
            };
            emit(&spec, &table)
        }
        Command::Overhead { complexity, .. } => emit(&spec, &if *complexity { run_complexity(&spec)? } else { run_overhead(&spec)? }),
        Command::TrainCnn(_) => {
            let out = spec.output.clone().context("train-cnn needs --output (or `output` in the config) for the weights")?;
            let (model, report, acc) = train_classifier(&spec)?;
            let tmp = out.with_extension("partial");
            model.save(&tmp)?;
            std::fs::rename(&tmp, &out).with_context(|| format!("writing {}", out.display()))?;
            eprintln!("{}", describe_training(&report, acc));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
