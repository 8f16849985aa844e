use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use posterfuse::cli::{self, Overrides, RunConfig};
use posterfuse::Error;

#[derive(Parser)]
#[command(name = "posterfuse", version, about = "Poster genre fusion model: data, training, evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    disable_mcam: bool,
    #[arg(long, global = true)]
    disable_smsam: bool,
    #[arg(long, global = true, value_name = "L")]
    depth_smsam: Option<usize>,
    /// Decision threshold.
    #[arg(long, global = true, value_name = "T")]
    tau: Option<f64>,
    /// Output file (gen-synth, predict) or directory (train, evaluate, ablate).
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic planted-signal dataset.
    GenSynth {
        /// Number of records (default from config).
        #[arg(long)]
        records: Option<usize>,
    },
    /// Split, train, and write checkpoint, history and test report.
    Train { dataset: Option<PathBuf> },
    /// Metric report of a checkpoint on a dataset.
    Evaluate { checkpoint: PathBuf, dataset: PathBuf },
    /// Per-record confidences and thresholded genres as JSON lines.
    Predict { checkpoint: PathBuf, dataset: PathBuf },
    /// Train the module and modality ablation grid.
    Ablate { dataset: Option<PathBuf> },
}

fn run(command: Command, common: Common) -> posterfuse::Result<()> {
    let overrides = Overrides {
        seed: common.seed,
        disable_mcam: common.disable_mcam,
        disable_smsam: common.disable_smsam,
        depth_smsam: common.depth_smsam,
        tau: common.tau,
        out: common.out,
    };
    let mut config = RunConfig::resolve(common.config.as_deref(), &overrides)?;
    match command {
        Command::GenSynth { records } => {
            if let Some(n) = records {
                config.generator.n_records = n;
            }
            let out = config
                .paths
                .out
                .clone()
                .ok_or_else(|| Error::Config(vec!["gen-synth needs --out".into()]))?;
            let n = cli::cmd_gen_synth(&config, &out)?;
            eprintln!("wrote {n} records to {}", out.display());
        }
        Command::Train { dataset } => {
            if dataset.is_some() {
                config.paths.dataset = dataset;
            }
            let s = cli::cmd_train(&config)?;
            eprintln!(
                "best epoch {}: test macro-F1 {:.2}, hit ratio {:.2}; checkpoint {}",
                s.history.best_epoch,
                s.test.f1_macro,
                100.0 * s.test.hit_ratio,
                s.checkpoint.display()
            );
        }
        Command::Evaluate { checkpoint, dataset } => {
            let r = cli::cmd_evaluate(&config, &checkpoint, &dataset)?;
            eprintln!("{} records: macro-F1 {:.2}", r.records, r.metrics.f1_macro);
        }
        Command::Predict { checkpoint, dataset } => {
            let lines = cli::cmd_predict(&config, &checkpoint, &dataset)?;
            let text = cli::predictions_to_jsonl(&lines)?;
            match &config.paths.out {
                Some(p) => std::fs::write(p, text).map_err(|e| Error::Io {
                    path: p.clone(),
                    source: e,
                })?,
                None => {
                    let _ = std::io::stdout().write_all(text.as_bytes());
                }
            }
        }
        Command::Ablate { dataset } => {
            if dataset.is_some() {
                config.paths.dataset = dataset;
            }
            let rows = cli::cmd_ablate(&config)?;
            print!("{}", cli::ablation_table(&rows));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let parsed = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(parsed.command, parsed.common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
