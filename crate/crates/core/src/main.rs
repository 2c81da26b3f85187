use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use semiband::design::{deo, FeatureSet, DEFAULT_FW_TOL};
use semiband::harness::{policy_csv, run_experiment, ExperimentConfig, Mode};
use semiband::HarnessError;

#[derive(Parser)]
#[command(
    name = "semiband",
    version,
    about = "Semiparametric bandit designs and simulations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the orthogonalized design and its certificate for a feature file.
    Design {
        features: PathBuf,
        #[arg(long, default_value_t = 0)]
        anchor: usize,
        #[arg(long, default_value_t = DEFAULT_FW_TOL)]
        fw_tol: f64,
    },
    /// Run an experiment described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        mode: Option<Mode>,
        /// Base seed; replication r uses seed + r.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        reps: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Check a config without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn design(features: PathBuf, anchor: usize, fw_tol: f64) -> Result<(), HarnessError> {
    let x = FeatureSet::from_file(&features)
        .map_err(|e| HarnessError::config("features", format!("{}: {e}", features.display())))?;
    if anchor >= x.len() {
        return Err(HarnessError::config(
            "anchor",
            format!("arm {anchor} out of range for {} arms", x.len()),
        ));
    }
    if fw_tol.is_nan() || fw_tol <= 0.0 {
        return Err(HarnessError::config("fw-tol", "must be positive"));
    }
    let (policy, cert) = deo(&x, anchor, fw_tol)?;
    print!("{}", policy_csv(&policy));
    println!(
        "# certificate max_anchor_norm={:.16e} max_centered_norm={:.16e} support_size={} rank={}",
        cert.max_anchor_norm, cert.max_centered_norm, cert.support_size, cert.rank
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Design {
            features,
            anchor,
            fw_tol,
        } => design(features, anchor, fw_tol),
        Command::Run {
            config,
            mode,
            seed,
            reps,
            out,
            threads,
        } => ExperimentConfig::from_file(&config).and_then(|mut cfg| {
            if let Some(m) = mode {
                cfg.mode = m;
            }
            if let Some(s) = seed {
                cfg.base_seed = s;
            }
            if let Some(r) = reps {
                cfg.replications = r;
            }
            if let Some(o) = out {
                cfg.output = o;
            }
            if threads.is_some() {
                cfg.threads = threads;
            }
            let outcomes = run_experiment(&cfg)?;
            for o in &outcomes {
                let ok = o.summaries.iter().filter(|s| s.success).count();
                println!(
                    "{}: {} replications, {} successful",
                    o.dir.display(),
                    o.summaries.len(),
                    ok
                );
            }
            Ok(())
        }),
        Command::Validate { config } => ExperimentConfig::from_file(&config).and_then(|cfg| {
            cfg.validate()?;
            println!("ok: {:?} mode, {} replications", cfg.mode, cfg.replications);
            Ok(())
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
