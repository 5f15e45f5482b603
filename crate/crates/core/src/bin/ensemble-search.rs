use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ensemble_search::harness::{self, ExperimentConfig};

#[derive(Parser)]
#[command(
    name = "ensemble-search",
    version,
    about = "Grow neural-network ensembles under a parameter budget"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of an experiment config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output root; overrides `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// First seed; overrides `seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Candidate-training threads; overrides `workers`.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Re-score a saved ensemble on the test split.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        /// Dataset source; defaults to the config stored with the run.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write the metrics as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate and plot completed runs.
    Report {
        /// Run, experiment or output directories.
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(harness::exit_code(&e) as u8)
        }
    }
}

fn dispatch(cmd: Command) -> ensemble_search::Result<()> {
    match cmd {
        Command::Run {
            config,
            out,
            seed,
            workers,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.workers = workers.unwrap_or(cfg.workers);
            for s in harness::cmd_run(&cfg, out.as_deref())? {
                let err = s.test_error.map_or("n/a".into(), |e| format!("{:.2}%", 100.0 * e));
                println!(
                    "{} seed {}: {} members, {} params, test error {err}",
                    s.name,
                    s.seed,
                    s.members.len(),
                    s.total_params
                );
            }
        }
        Command::Evaluate { manifest, config, out } => {
            let cfg = config.as_deref().map(ExperimentConfig::load).transpose()?;
            let eval = harness::cmd_evaluate(&manifest, cfg.as_ref())?;
            let text = serde_json::to_string_pretty(&eval)?;
            println!("{text}");
            if let Some(out) = out {
                std::fs::write(&out, text + "\n").map_err(|e| ensemble_search::Error::io(out, e))?;
            }
        }
        Command::Report { dirs, out } => {
            let rows = harness::cmd_report(&dirs, &out)?;
            print!("{}", harness::render_table(&rows));
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}
