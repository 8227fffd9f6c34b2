//! Simulation of the optimally controlled lake: Euler-Maruyama in log
//! coordinates (which keeps every path strictly positive), Monte Carlo
//! estimation of discounted payoffs for cross-validating the solver, and
//! first-passage times between stochastic attractors.
//!
//! In log coordinates `y = ln x` the controlled dynamics reads
//! `dy = (e^-y h(e^y) - sigma^2/2) dt + sigma dW` with
//! `h(x) = u(x) - b x + r(x)`.
//!
//! Reproducibility: every path draws from a counter-based stream derived
//! from `(seed, path index)`, so ensembles are bitwise deterministic no
//! matter how they are scheduled across threads.

use crate::invariant::InvariantDensity;
use crate::model::{LakeParams, RecyclingRate};
use crate::solver::{PolicyCurve, ValueSolution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SdeError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("start state must be positive, got {0}")]
    NonpositiveStart(f64),
    #[error("state {x} left the validity range of the policy extension (limit {limit})")]
    DriftEvaluationOutOfRange { x: f64, limit: f64 },
    #[error("escape times need at least two attractors, found {0}")]
    NoSecondAttractor(usize),
    #[error("all {0} escape samples were censored at the horizon")]
    AllCensored(usize),
}

/// Euler-Maruyama settings. The scheme is fixed: log-coordinate
/// Euler-Maruyama with equidistant steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    pub n_paths: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 1e-3,
            horizon: 1e4,
            seed: 7,
            n_paths: 1,
        }
    }
}

impl SimConfig {
    fn check(&self) -> Result<(), SdeError> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(SdeError::InvalidConfig(format!("dt = {}", self.dt)));
        }
        if self.horizon < self.dt {
            return Err(SdeError::InvalidConfig(format!(
                "horizon {} below dt {}",
                self.horizon, self.dt
            )));
        }
        if self.n_paths == 0 {
            return Err(SdeError::InvalidConfig("n_paths = 0".into()));
        }
        Ok(())
    }

    fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

/// Loading policy fed to the dynamics and the payoff integrand.
pub trait Control: Sync {
    fn loading(&self, x: f64) -> f64;
}

/// The solver's optimal feedback `u(x) = -1/V'(x)`.
pub struct OptimalControl(PolicyCurve);

impl Control for OptimalControl {
    fn loading(&self, x: f64) -> f64 {
        self.0.u(x)
    }
}

/// Optimal feedback capped at `N`, the bounded-control approximation.
pub struct CappedControl {
    curve: PolicyCurve,
    cap: f64,
}

impl Control for CappedControl {
    fn loading(&self, x: f64) -> f64 {
        self.curve.u(x).min(self.cap)
    }
}

/// The explicit suboptimal benchmark `u(x) = (1 v x)/(1 + x^2) + a - r(x)`
/// used to prove the lower value-function bound.
pub struct BenchmarkFeedback {
    pub a: f64,
    pub rate: RecyclingRate,
}

impl Control for BenchmarkFeedback {
    fn loading(&self, x: f64) -> f64 {
        x.max(1.0) / (1.0 + x * x) + self.a - self.rate.eval(x)
    }
}

/// Arbitrary state-feedback loading, mostly for tests and experiments.
pub struct FnControl<F: Fn(f64) -> f64 + Sync>(pub F);

impl<F: Fn(f64) -> f64 + Sync> Control for FnControl<F> {
    fn loading(&self, x: f64) -> f64 {
        (self.0)(x)
    }
}

/// Controlled lake dynamics: drift `h(x) = u(x) - b x + r(x)`, diffusion
/// `sigma x`, with a validity limit for the policy's asymptotic extension.
struct Dynamics<'c> {
    control: &'c dyn Control,
    b: f64,
    rate: RecyclingRate,
    sigma: f64,
    x_limit: f64,
}

impl Dynamics<'_> {
    fn from_solution<'c>(s: &ValueSolution, control: &'c dyn Control) -> Dynamics<'c> {
        Dynamics {
            control,
            b: s.params().b(),
            rate: *s.params().rate(),
            sigma: s.params().sigma(),
            x_limit: 100.0 * s.grid().l(),
        }
    }

    #[inline]
    fn h(&self, x: f64) -> f64 {
        self.control.loading(x) - self.b * x + self.rate.eval(x)
    }
}

fn stream_rng(seed: u64, path: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}

/// Log-space Euler-Maruyama; calls the observer with `(step, x)` after
/// every step (and with `(0, x0)` first). The observer returns whether to
/// keep going, so first-passage runs stop at the barrier instead of
/// integrating to the horizon. Errors out when the state leaves the
/// validity range of the policy extension.
fn run_path(
    dyn_: &Dynamics,
    x0: f64,
    dt: f64,
    steps: usize,
    rng: &mut ChaCha12Rng,
    mut observe: impl FnMut(usize, f64) -> bool,
) -> Result<(), SdeError> {
    if !(x0 > 0.0) {
        return Err(SdeError::NonpositiveStart(x0));
    }
    let half_sig_sq = 0.5 * dyn_.sigma * dyn_.sigma;
    let sq_dt = dt.sqrt();
    let mut y = x0.ln();
    if !observe(0, x0) {
        return Ok(());
    }
    for k in 1..=steps {
        let x = y.exp();
        if x > dyn_.x_limit {
            return Err(SdeError::DriftEvaluationOutOfRange {
                x,
                limit: dyn_.x_limit,
            });
        }
        let z: f64 = rng.sample(StandardNormal);
        y += (dyn_.h(x) / x - half_sig_sq) * dt + dyn_.sigma * sq_dt * z;
        if !observe(k, y.exp()) {
            return Ok(());
        }
    }
    Ok(())
}

/// A simulated trajectory of the optimally controlled lake.
#[derive(Debug, Clone)]
pub struct PathSample {
    pub times: Vec<f64>,
    pub states: Vec<f64>,
    pub seed: u64,
    pub params: LakeParams,
}

/// Simulate one path of the optimally controlled lake, storing every
/// `sample_every`-th state.
pub fn simulate_path_sampled(
    s: &ValueSolution,
    cfg: &SimConfig,
    x0: f64,
    sample_every: usize,
) -> Result<PathSample, SdeError> {
    cfg.check()?;
    let every = sample_every.max(1);
    let control = OptimalControl(s.policy_curve());
    let dyn_ = Dynamics::from_solution(s, &control);
    let steps = cfg.steps();
    let mut times = Vec::with_capacity(steps / every + 1);
    let mut states = Vec::with_capacity(steps / every + 1);
    let mut rng = stream_rng(cfg.seed, 0);
    run_path(&dyn_, x0, cfg.dt, steps, &mut rng, |k, x| {
        if k % every == 0 {
            times.push(k as f64 * cfg.dt);
            states.push(x);
        }
        true
    })?;
    Ok(PathSample {
        times,
        states,
        seed: cfg.seed,
        params: *s.params().params(),
    })
}

/// Simulate one path, storing every state.
pub fn simulate_path(s: &ValueSolution, cfg: &SimConfig, x0: f64) -> Result<PathSample, SdeError> {
    simulate_path_sampled(s, cfg, x0, 1)
}

/// Monte Carlo estimate of a discounted payoff.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub stderr: f64,
    /// Bound on the truncation bias `S e^(-rho T)/rho`.
    pub bias_bound: f64,
    pub t_cutoff: f64,
    pub n_paths: usize,
}

/// Magnitude bound `S` for the payoff integrand, taken over the solver grid.
fn integrand_scale(s: &ValueSolution) -> f64 {
    let c = s.params().c();
    s.policy()
        .iter()
        .zip(s.grid().xs())
        .map(|(&u, &x)| (u.ln() - c * x * x).abs())
        .fold(0.0, f64::max)
}

/// Default cutoff `(1/rho) ln(S / eps)` with `eps = 1e-3`.
pub fn default_cutoff(s: &ValueSolution) -> f64 {
    let rho = s.params().rho();
    (integrand_scale(s) / 1e-3).ln() / rho
}

/// Discounted payoff of an arbitrary loading policy, by left-endpoint
/// quadrature along Euler-Maruyama paths.
pub fn control_payoff_mc(
    s: &ValueSolution,
    control: &dyn Control,
    cfg: &SimConfig,
    x0: f64,
    t_cutoff: Option<f64>,
) -> Result<McEstimate, SdeError> {
    cfg.check()?;
    let cutoff = t_cutoff.unwrap_or_else(|| default_cutoff(s));
    let steps = (cutoff / cfg.dt).round() as usize;
    let dyn_ = Dynamics::from_solution(s, control);
    let (rho, c) = (s.params().rho(), s.params().c());
    let dt = cfg.dt;
    let disc_step = (-rho * dt).exp();

    let payoffs: Result<Vec<f64>, SdeError> = (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|path| {
            let mut rng = stream_rng(cfg.seed, path);
            let mut acc = 0.0;
            let mut disc = 1.0;
            run_path(&dyn_, x0, dt, steps, &mut rng, |k, x| {
                if k < steps {
                    acc += disc * (dyn_.control.loading(x).ln() - c * x * x);
                    disc *= disc_step;
                }
                true
            })?;
            Ok(acc * dt)
        })
        .collect();
    let payoffs = payoffs?;

    let n = payoffs.len() as f64;
    let mean = payoffs.iter().sum::<f64>() / n;
    let var = if payoffs.len() > 1 {
        payoffs.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let bias = integrand_scale(s) * (-rho * cutoff).exp() / rho;
    Ok(McEstimate {
        estimate: mean,
        stderr: (var / n).sqrt(),
        bias_bound: bias,
        t_cutoff: cutoff,
        n_paths: payoffs.len(),
    })
}

/// Monte Carlo estimate of the value function under the solver's optimal
/// feedback; the cross-validation companion of the HJB solve.
pub fn estimate_value_mc(
    s: &ValueSolution,
    cfg: &SimConfig,
    x0: f64,
    t_cutoff: Option<f64>,
) -> Result<McEstimate, SdeError> {
    let control = OptimalControl(s.policy_curve());
    control_payoff_mc(s, &control, cfg, x0, t_cutoff)
}

/// Payoff of the explicit benchmark feedback; suboptimal by construction,
/// so its estimate must stay below the value function.
pub fn feedback_benchmark_payoff(
    s: &ValueSolution,
    cfg: &SimConfig,
    x0: f64,
    t_cutoff: Option<f64>,
) -> Result<McEstimate, SdeError> {
    let control = BenchmarkFeedback {
        a: s.params().a(),
        rate: *s.params().rate(),
    };
    control_payoff_mc(s, &control, cfg, x0, t_cutoff)
}

/// Payoff of the optimal feedback capped at `n_cap`, for the bounded-control
/// sandwich `0 <= V - V_N <= (rho+b)^2 / (4 rho c N^2)`.
pub fn truncated_policy_value(
    s: &ValueSolution,
    n_cap: f64,
    cfg: &SimConfig,
    x0: f64,
    t_cutoff: Option<f64>,
) -> Result<McEstimate, SdeError> {
    if !(n_cap > 0.0) {
        return Err(SdeError::InvalidConfig(format!("cap N = {n_cap}")));
    }
    let control = CappedControl {
        curve: s.policy_curve(),
        cap: n_cap,
    };
    control_payoff_mc(s, &control, cfg, x0, t_cutoff)
}

/// First-passage times from the oligotrophic to the eutrophic attractor.
#[derive(Debug, Clone, Serialize)]
pub struct EscapeSample {
    /// Per-sample outcome in stream order; `None` marks a sample censored
    /// at the horizon.
    pub samples: Vec<Option<f64>>,
    /// Uncensored first-passage times, in sample order.
    pub raw_times: Vec<f64>,
    pub mean: f64,
    /// `raw_times / mean`; sample mean exactly one by construction.
    pub normalized: Vec<f64>,
    /// Kolmogorov-Smirnov distance of the normalized times to Exp(1).
    pub ks_statistic: f64,
    pub x_minus: f64,
    pub x_plus: f64,
    /// Samples that hit the horizon before the barrier; excluded above.
    pub censored: usize,
    pub horizon: f64,
}

/// Sample `n_samples` first-passage times of the optimally controlled lake
/// from the leftmost attractor `x_-` to the rightmost one `x_+`. Passage is
/// recorded at the first grid time with `x >= x_+`; samples still short of
/// the barrier at the horizon are censored and excluded from the statistics.
pub fn escape_times(
    s: &ValueSolution,
    d: &InvariantDensity,
    cfg: &SimConfig,
    n_samples: usize,
) -> Result<EscapeSample, SdeError> {
    cfg.check()?;
    if d.modes().len() < 2 {
        return Err(SdeError::NoSecondAttractor(d.modes().len()));
    }
    let x_minus = d.modes()[0];
    let x_plus = *d.modes().last().unwrap();
    let control = OptimalControl(s.policy_curve());
    let dyn_ = Dynamics::from_solution(s, &control);
    let samples = first_passage(&dyn_, x_minus, x_plus, cfg, n_samples)?;
    let censored = samples.iter().filter(|t| t.is_none()).count();
    let raw_times: Vec<f64> = samples.iter().copied().flatten().collect();
    if raw_times.is_empty() {
        return Err(SdeError::AllCensored(n_samples));
    }
    let mean = raw_times.iter().sum::<f64>() / raw_times.len() as f64;
    let normalized: Vec<f64> = raw_times.iter().map(|t| t / mean).collect();
    let mut sorted = normalized.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let ks = ks_statistic_sorted(&sorted, |t| 1.0 - (-t).exp());
    Ok(EscapeSample {
        samples,
        raw_times,
        mean,
        normalized,
        ks_statistic: ks,
        x_minus,
        x_plus,
        censored,
        horizon: cfg.horizon,
    })
}

/// First crossing times of `barrier` from below, one per stream;
/// `None` marks a censored sample.
fn first_passage(
    dyn_: &Dynamics,
    x0: f64,
    barrier: f64,
    cfg: &SimConfig,
    n_samples: usize,
) -> Result<Vec<Option<f64>>, SdeError> {
    let steps = cfg.steps();
    (0..n_samples as u64)
        .into_par_iter()
        .map(|sample| {
            let mut rng = stream_rng(cfg.seed, sample);
            let mut hit = None;
            run_path(dyn_, x0, cfg.dt, steps, &mut rng, |k, x| {
                if x >= barrier && k > 0 {
                    hit = Some(k as f64 * cfg.dt);
                    return false;
                }
                true
            })?;
            Ok(hit)
        })
        .collect()
}

/// Kolmogorov-Smirnov distance of sorted samples to a given CDF.
pub fn ks_statistic_sorted(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let n = sorted.len() as f64;
    let mut d = 0.0f64;
    for (i, &t) in sorted.iter().enumerate() {
        let f = cdf(t);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    d
}
