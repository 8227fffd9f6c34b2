//! Command-line front end for the shallow-lake control toolkit.

use clap::{Args, Parser, Subcommand};
use shallow_lake::cli;
use shallow_lake::config::{self, Command, Overrides};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "lake",
    version,
    about = "Stochastic shallow-lake optimal control: HJB solver, invariant density, \
             bifurcation sweeps, path simulation, escape times and verification"
)]
struct LakeCli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve the HJB equation and emit the value function and policy
    Solve(CommonArgs),
    /// Solve, then emit the invariant density, CDF and transformation invariant
    Density(CommonArgs),
    /// Bifurcation sweep over sigma, c or rho (requires --sweep)
    Sweep(CommonArgs),
    /// Simulate one path of the optimally controlled lake
    Simulate(CommonArgs),
    /// Sample first-passage times between the two stochastic attractors
    Escape(CommonArgs),
    /// Run the verification suite (proven bounds, tails, Monte Carlo checks)
    Verify(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Flat key-value config file; CLI flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    /// Phosphorus loss rate (default 0.65)
    #[arg(long)]
    b: Option<f64>,
    /// Pollution cost weight (default 0.5)
    #[arg(long)]
    c: Option<f64>,
    /// Discount rate (default 0.03)
    #[arg(long)]
    rho: Option<f64>,
    /// Noise intensity (default 0.1)
    #[arg(long)]
    sigma: Option<f64>,
    /// Recycling rate kind: standard | tanh | step
    #[arg(long)]
    rate: Option<String>,
    /// Center of the tanh recycling rate (default 3)
    #[arg(long)]
    rate_center: Option<f64>,
    /// Slope of the tanh recycling rate (default 1)
    #[arg(long)]
    rate_slope: Option<f64>,
    /// Scale of the tanh recycling rate (default 1)
    #[arg(long)]
    rate_scale: Option<f64>,
    /// Threshold of the step recycling rate (default 3)
    #[arg(long)]
    rate_threshold: Option<f64>,
    /// Right endpoint of the computational domain (default: parameter-dependent)
    #[arg(long)]
    l: Option<f64>,
    /// Number of grid intervals (default 4000)
    #[arg(long)]
    n: Option<usize>,
    /// Euler-Maruyama time step (default 1e-3)
    #[arg(long)]
    dt: Option<f64>,
    /// Simulation horizon (defaults: 2e3 simulate, 1e4 elsewhere)
    #[arg(long)]
    horizon: Option<f64>,
    /// Monte Carlo ensemble size (defaults: 1 simulate, 2000 verify)
    #[arg(long)]
    paths: Option<usize>,
    /// RNG seed; per-path streams derive from (seed, path index) (default 7)
    #[arg(long)]
    seed: Option<u64>,
    /// Initial state for simulation and Monte Carlo checks (default 1)
    #[arg(long)]
    x0: Option<f64>,
    /// Escape-time sample count (default 1000)
    #[arg(long)]
    samples: Option<usize>,
    /// Store every k-th state of a simulated path (default: automatic)
    #[arg(long)]
    sample_every: Option<usize>,
    /// Sweep spec name:start:stop:count with name in {sigma, c, rho}
    #[arg(long)]
    sweep: Option<String>,
    /// Output directory (default lake-out)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for sweeps and ensembles (default: all processors)
    #[arg(long)]
    jobs: Option<usize>,
}

impl CommonArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            b: self.b,
            c: self.c,
            rho: self.rho,
            sigma: self.sigma,
            rate: self.rate.clone(),
            rate_center: self.rate_center,
            rate_slope: self.rate_slope,
            rate_scale: self.rate_scale,
            rate_threshold: self.rate_threshold,
            l: self.l,
            n: self.n,
            dt: self.dt,
            horizon: self.horizon,
            paths: self.paths,
            seed: self.seed,
            x0: self.x0,
            samples: self.samples,
            sample_every: self.sample_every,
            sweep: self.sweep.clone(),
            out: self.out.clone(),
            jobs: self.jobs,
        }
    }
}

fn main() -> ExitCode {
    let cli = LakeCli::parse();
    let (command, args) = match &cli.command {
        Cmd::Solve(a) => (Command::Solve, a),
        Cmd::Density(a) => (Command::Density, a),
        Cmd::Sweep(a) => (Command::Sweep, a),
        Cmd::Simulate(a) => (Command::Simulate, a),
        Cmd::Escape(a) => (Command::Escape, a),
        Cmd::Verify(a) => (Command::Verify, a),
    };

    let cfg = match config::resolve(command, args.config.as_deref(), &args.overrides()) {
        Ok(cfg) => cfg,
        Err(e) => return fail(2, &e.to_string()),
    };

    if cfg.jobs > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build_global()
        {
            return fail(2, &format!("cannot size worker pool: {e}"));
        }
    }

    match cli::run(&cfg) {
        Ok(outputs) => {
            for path in &outputs {
                println!("wrote {}", path.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => fail(e.exit_code(), &e.to_string()),
    }
}

fn fail(code: i32, message: &str) -> ExitCode {
    // Machine-readable error report on stderr.
    eprintln!(
        "{}",
        serde_json::json!({ "error": { "code": code, "message": message } })
    );
    ExitCode::from(code as u8)
}
