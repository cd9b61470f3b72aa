use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ctflow_cli::{config::VERSION, oracle_cmd, run, verify_cmd, ConfigError, ExperimentConfig};

#[derive(Parser)]
#[command(name = "ctflow", version = VERSION, about = "Continuous-time value flows and actor-critic experiments")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Train an agent or iterate a value flow described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; defaults to the config's `out_dir`, then `runs/<hash>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run invariant suites and print a pass/fail table.
    Verify {
        #[arg(long, default_value = "all")]
        suite: String,
    },
    /// Compute or load the cached reference solution for a config's environment.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        /// Cache directory; defaults to the config's `out_dir`, then `oracle-cache`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(path: &Path, seed: Option<u64>) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.resolve()
}

fn main_inner(cli: Cli) -> anyhow::Result<bool> {
    match cli.verb {
        Verb::Run { config, seed, out } => {
            let cfg = load(&config, seed)?;
            let out = out
                .or_else(|| cfg.out_dir.clone().map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("runs").join(&cfg.hash()[..12]));
            let summary = run(&cfg, &out)?;
            println!("config_hash={} out={}", summary.config_hash, summary.out_dir.display());
            if let Some(last) = summary.rows.last() {
                let f = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "-".into());
                println!(
                    "final: step={} eval_return_mean={} sup_err_vs_oracle={} loss={}",
                    last.step,
                    f(last.eval_return_mean),
                    f(last.sup_err_vs_oracle),
                    f(last.loss)
                );
            }
            Ok(true)
        }
        Verb::Verify { suite } => verify_cmd(&suite, std::io::stdout().lock()),
        Verb::Oracle { config, out } => {
            let cfg = load(&config, None)?;
            let dir = out.or_else(|| cfg.out_dir.clone().map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("oracle-cache"));
            oracle_cmd(&cfg, &dir, std::io::stdout().lock())?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match main_inner(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
