use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use guidelab_cli::{run_experiment, write_outputs, Config, ConfigError, Experiment, RunError};

const SCHEMAS: &str = "\
Outputs (in --out): <experiment> CSV tables, verdict.csv, config.echo, run.meta.
Every CSV row starts with config_hash; floats carry 17 significant digits.

  regimes.csv        regime,n,delta_n,kl_mean,kl_se,kl_rejected,guidance_mean,guidance_se
  sharpness.csv      eps,kl_mean,kl_se,kl_oracle,guidance_mean,guidance_se,guidance_oracle
  regimes_fits.csv, sharpness_fits.csv
                     series,slope,intercept,r_squared,trimmed
                     (trimmed = smallest-x points dropped when r^2 < 0.98)
  logistic_trials.csv
                     v,n,trial,status,iterations,beta_error,kl_mean,kl_se,
                     guidance0_mean,guidance0_se,guidance1_mean,guidance1_se
  logistic_summary.csv
                     v,n,fit_failures,median_kl,median_guidance0,median_guidance1,
                     mean_guidance0,se_guidance0,mean_guidance1,se_guidance1
  sample.csv         run,label,gamma_c,n_paths,steps,center,proportion,target
                     (plus samples_<run>.txt point tables with .meta sidecars)
  oracle_check.csv   suite,probes,worst,tolerance
  verdict.csv        check,measured,target,source,status (last row: overall)

Exit status: 0 on PASS, 1 on FAIL or runtime error, 2 on configuration error.";

/// Reproducible experiments on classifier guidance error.
#[derive(Debug, Parser)]
#[command(name = "guidelab", version, about, after_long_help = SCHEMAS)]
struct Cli {
    experiment: Experiment,
    /// Flat `key = value` file; list values are comma-separated.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Monte Carlo draws per estimate.
    #[arg(long)]
    n_mc: Option<usize>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

fn load_config(cli: &Cli) -> Result<Config, ConfigError> {
    let text = match &cli.config {
        Some(path) => std::fs::read_to_string(path)?,
        None => String::new(),
    };
    let mut cfg = Config::parse(&text)?;
    cfg.set("seed", cli.seed);
    if let Some(n) = cli.n_mc {
        if !cli.experiment.uses_n_mc() {
            return Err(ConfigError::Invalid {
                key: "n_mc".into(),
                message: format!("not used by {}", cli.experiment),
            });
        }
        cfg.set("n_mc", n);
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if threads == 0 || rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().is_err() {
            eprintln!("error: invalid --threads {threads}");
            return ExitCode::from(2);
        }
    }
    let mut cfg = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
    };
    let report = match run_experiment(cli.experiment, &mut cfg) {
        Ok(r) => r,
        Err(RunError::Config(e)) => {
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
        Err(RunError::Core(e)) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    if let Err(e) = write_outputs(&cli.out, cli.experiment, &cfg, &report) {
        eprintln!("error writing {}: {e}", cli.out.display());
        return ExitCode::from(1);
    }
    for c in &report.checks {
        println!("{} {} measured={} target={} ({})", c.status(), c.name, c.measured, c.target, c.source.as_str());
    }
    if report.passed() {
        println!("PASS {}", cli.experiment);
        ExitCode::SUCCESS
    } else {
        println!("FAIL {}", cli.experiment);
        ExitCode::from(1)
    }
}
