use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use safari_cli::experiment::Problem;
use safari_cli::verify::{bound_instances, lipschitz_violations, selftest};
use safari_cli::{load_config, run_experiment, run_sweep, ConfigError, ExperimentConfig, HarnessError, SweepAxis};
use safari_core::theory::write_reports_csv;
use safari_core::Seed;

#[derive(Parser)]
#[command(name = "safari", version, about = "Spatial- and frequency-aware guided diffusion restoration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides `experiment.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `experiment.output`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `dotted.key=value`, applied in order before validation.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig, ConfigError> {
        let mut overrides = self.overrides.clone();
        if let Some(seed) = self.seed {
            overrides.push(format!("experiment.seed={seed}"));
        }
        if let Some(out) = &self.out {
            overrides.push(format!("experiment.output={:?}", out.display().to_string()));
        }
        load_config(&self.config, &overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Restore a batch and write panels, traces and metrics.
    Run(ConfigArgs),
    /// Evaluate the batch for each value of one hyperparameter.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// r0, rho_H, rho_L, upsample_factor, sr_factor or sigma.
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Check the likelihood-approximation bound on random instances.
    VerifyTheory {
        #[arg(long, default_value_t = 200)]
        instances: usize,
        #[arg(long, default_value_t = 10_000)]
        pairs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for `bound_reports.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Quick numerical sanity battery.
    Selftest,
    /// Answer score requests for the config's prior on stdin/stdout.
    ServeScore(ConfigArgs),
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if let HarnessError::Run(inner) = &e {
                for cause in inner.chain().skip(1) {
                    eprintln!("  caused by: {cause}");
                }
            }
            ExitCode::from(e.exit_code())
        }
    }
}

fn dispatch(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Run(args) => {
            let cfg = args.load()?;
            let s = run_experiment(&cfg)?;
            println!(
                "{} images -> {}  PSNR {:.2} ± {:.2} dB  SSIM {:.4} ± {:.4}  manifest {}",
                s.items.len(),
                cfg.output.display(),
                s.psnr_mean,
                s.psnr_std,
                s.ssim_mean,
                s.ssim_std,
                &s.manifest_hash[..12]
            );
        }
        Command::Sweep { config, axis, values } => {
            let cfg = config.load()?;
            let axis: SweepAxis = axis.parse().map_err(|reason| ConfigError::Invalid {
                key: "--axis".into(),
                reason,
            })?;
            for r in run_sweep(&cfg, axis, &values)? {
                println!("{} = {}: PSNR {:.2} ± {:.2} dB  SSIM {:.4}", r.axis, r.value, r.psnr_mean, r.psnr_std, r.ssim_mean);
            }
        }
        Command::VerifyTheory { instances, pairs, seed, out } => verify_theory(instances, pairs, seed, out.as_deref())?,
        Command::Selftest => {
            let checks = selftest();
            for c in &checks {
                println!("[{}] {} ({})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            let failed = checks.iter().filter(|c| !c.passed).count();
            if failed > 0 {
                return Err(anyhow::anyhow!("{failed} selftest checks failed").into());
            }
        }
        Command::ServeScore(args) => {
            let cfg = args.load()?;
            let problem = Problem::build(&cfg)?;
            let stdin = std::io::stdin().lock();
            let stdout = BufWriter::new(std::io::stdout().lock());
            safari_core::score::serve(&problem.prior, &problem.schedule, stdin, stdout).context("serving scores")?;
        }
    }
    Ok(())
}

fn verify_theory(instances: usize, pairs: usize, seed: u64, out: Option<&Path>) -> Result<(), HarnessError> {
    let reports = bound_instances(instances, Seed(seed))?;
    let tightest = reports.iter().map(|r| r.lhs / r.rhs.max(1e-300)).fold(0.0, f64::max);
    println!("bound: {} instances, 0 violations, max lhs/rhs {tightest:.4}", reports.len());
    let violations = lipschitz_violations(pairs, Seed(seed).derive(1));
    println!("kernel Lipschitz: {pairs} pairs, {violations} violations");
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join("bound_reports.csv");
        let mut w = BufWriter::new(std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?);
        write_reports_csv(&reports, &mut w).context("writing bound reports")?;
        w.flush().context("writing bound reports")?;
    }
    if violations > 0 {
        return Err(anyhow::anyhow!("{violations} Lipschitz violations").into());
    }
    Ok(())
}
