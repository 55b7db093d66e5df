use clap::{Args, Parser, Subcommand, ValueEnum};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use vacuumlab::config::RunConfig;
use vacuumlab::harness;
use vacuumlab::ode::{fit_h_envelope, h_exponent, solve_correction, verify_theta_properties, DEFAULT_ATOL, DEFAULT_RTOL};
use vacuumlab::params::{barenblatt_fields, derive_constants, PhysParams, SelfSimilarProfile};
use vacuumlab::suite::{verify, Fault, SuiteOptions};
use vacuumlab::Error;

/// Exit status when a run completes but an assertion fails.
const FAILED: u8 = 1;
/// Exit status for configuration, input and solver errors.
const ERROR: u8 = 2;

#[derive(Parser)]
#[command(
    name = "vacuumlab",
    version,
    about = "Expanding gas balls with a physical vacuum boundary: self-similar profiles, perturbation runs and decay diagnostics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ParamArgs {
    /// Read the parameters from a run configuration instead.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    n: usize,
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    #[arg(long, default_value_t = 2.0)]
    gamma: f64,
    #[arg(long = "mass", default_value_t = 1.0)]
    mass: f64,
}

impl ParamArgs {
    fn resolve(&self) -> Result<(PhysParams, Option<RunConfig>), Error> {
        match &self.config {
            Some(path) => {
                let cfg = RunConfig::load(path)?;
                Ok((cfg.physical()?, Some(cfg)))
            }
            None => Ok((derive_constants(self.n, self.lambda, self.gamma, self.mass)?, None)),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    PressureSign,
}

#[derive(Subcommand)]
enum Command {
    /// Tabulate the self-similar density and velocity along a ray.
    Selfsim {
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long, default_value_t = 0.0)]
        t: f64,
        #[arg(long, default_value_t = 101)]
        points: usize,
        /// Write the CSV here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the correction ODE and check its qualitative properties.
    Ode {
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long = "t-end", default_value_t = 1e6)]
        t_end: f64,
        /// Directory for correction.csv and properties.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one configuration into its run directory.
    Evolve {
        #[arg(long)]
        config: PathBuf,
        /// Override the configured run directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the configured RNG seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run every cell of the configured parameter grid.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the self-check suite.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Run only this group of checks.
        #[arg(long)]
        only: Option<String>,
        /// Write the report as JSON to this file.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, hide = true)]
        fault: Option<FaultArg>,
    },
    /// Recompute rates and energy ratios of an existing run directory.
    Fit {
        #[arg(long)]
        out: PathBuf,
    },
}

fn overridden(config: &Path, out: &Option<PathBuf>, seed: Option<u64>) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(dir) = out {
        cfg.outputs.directory = dir.clone();
    }
    if let Some(s) = seed {
        cfg.rng_seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn status(pass: bool) -> ExitCode {
    if pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(FAILED)
    }
}

fn selfsim(params: &PhysParams, t: f64, points: usize, out: &Option<PathBuf>) -> Result<(), Error> {
    let support = SelfSimilarProfile::new(*params).support_radius(t);
    let mut text = String::from("r,density,velocity\n");
    for k in 0..points.max(2) {
        let r = support * k as f64 / (points.max(2) - 1) as f64;
        let mut x = vec![0.0; params.n];
        x[0] = r;
        let (rho, u) = barenblatt_fields(params, t, &x)?;
        text.push_str(&format!("{r:e},{rho:e},{:e}\n", u[0]));
    }
    match out {
        Some(path) => fs::write(path, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn ode(params: &PhysParams, t_end: f64, rtol: f64, atol: f64, out: &Option<PathBuf>) -> Result<bool, Error> {
    let path = solve_correction(params, t_end, rtol, atol)?;
    let props = verify_theta_properties(&path);
    println!("samples            {}", path.len());
    println!("min θ_t            {:.4e}", props.min_theta_t);
    println!("θ/ν range          [{:.6}, {:.6}]", props.ratio_min, props.ratio_max);
    println!("lyapunov breaks    {}", props.lyapunov_violations);
    println!("max ODE residual   {:.3e}", props.max_ode_residual);
    if t_end >= 1e4 {
        let fit = fit_h_envelope(&path)?;
        println!("|h| exponent       {:.4} (expected {:.4})", fit.exponent, h_exponent(params));
    }
    if let Some(v) = &props.first_violation {
        println!("violation          {} = {:e} at t = {:e}", v.quantity, v.value, v.t);
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        path.write_csv(fs::File::create(dir.join(harness::CORRECTION_FILE))?)?;
        fs::write(dir.join("properties.json"), serde_json::to_string_pretty(&props)?)?;
    }
    println!("{}", if props.passed { "ok" } else { "FAIL" });
    Ok(props.passed)
}

fn dispatch(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Selfsim { params, t, points, out } => {
            let (p, _) = params.resolve()?;
            selfsim(&p, t, points, &out)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Ode { params, t_end, out } => {
            let (p, cfg) = params.resolve()?;
            let (t_end, rtol, atol) = match cfg {
                Some(c) => (c.ode.t_end, c.ode.rtol, c.ode.atol),
                None => (t_end, DEFAULT_RTOL, DEFAULT_ATOL),
            };
            Ok(status(ode(&p, t_end, rtol, atol, &out)?))
        }
        Command::Evolve { config, out, seed } => {
            let cfg = overridden(&config, &out, seed)?;
            let report = harness::run(&cfg)?;
            for c in &report.checks {
                println!(
                    "{:<4} {:<22} {:>12.4e}  {}",
                    if c.pass { "ok" } else { "FAIL" },
                    c.name,
                    c.value,
                    c.criterion
                );
            }
            if let Some(f) = &report.failure {
                eprintln!("solver stopped at t = {:e}: {}", f.t, f.message);
            }
            println!("run directory {}", report.directory.display());
            Ok(status(report.pass))
        }
        Command::Sweep { config, out, seed } => {
            let cfg = overridden(&config, &out, seed)?;
            let summary = harness::sweep(&cfg)?;
            println!("{:>4} {:>8} {:>8} {:>10}  status", "cell", "lambda", "gamma", "epsilon");
            for r in &summary.rows {
                println!(
                    "{:>4} {:>8} {:>8} {:>10.3e}  {} {}",
                    r.cell, r.lambda, r.gamma, r.epsilon, r.status, r.message
                );
            }
            Ok(status(summary.pass))
        }
        Command::Verify { seed, only, out, fault } => {
            let report = verify(&SuiteOptions {
                seed,
                only,
                fault: fault.map(|FaultArg::PressureSign| Fault::PressureSign),
                ..Default::default()
            })?;
            print!("{}", report.summary());
            if let Some(path) = out {
                fs::write(path, serde_json::to_string_pretty(&report)?)?;
            }
            Ok(status(report.pass))
        }
        Command::Fit { out } => {
            let d = harness::fit(&out)?;
            if let Some(r) = &d.rates {
                print!("{}", r.summary());
            }
            if let Some(b) = &d.boundedness {
                println!("sup E/E(0) total {:?}", b.total.ratio);
            }
            Ok(status(d.checks.iter().all(|c| c.pass)))
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(ERROR)
        }
    }
}
