//! Python bindings for the shallow-lake control toolkit.
//!
//! Exposes the main pipeline: parameter validation, the HJB solve, the
//! invariant density with its attractors, path simulation, Monte Carlo
//! payoff estimates and escape-time sampling.
//!
//! ```python
//! import lake_py as lake
//! p = lake.LakeParams(b=0.65, c=0.5, rho=0.03, sigma=0.1)
//! sol = lake.solve(p, n=2000)
//! dens = sol.invariant_density()
//! print(sol.value_at(1.0), dens.modes)
//! ```

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use shallow_lake as core;

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_rate(
    kind: &str,
    center: f64,
    slope: f64,
    scale: f64,
    threshold: f64,
) -> PyResult<core::RecyclingRate> {
    match kind {
        "standard" => Ok(core::RecyclingRate::Standard),
        "tanh" => Ok(core::RecyclingRate::TanhShifted {
            center,
            slope,
            scale,
        }),
        "step" => Ok(core::RecyclingRate::Step { threshold }),
        other => Err(PyValueError::new_err(format!(
            "rate must be standard, tanh or step, got {other}"
        ))),
    }
}

/// Problem parameters. Validation runs on construction.
#[pyclass(frozen)]
struct LakeParams {
    inner: core::ValidatedParams,
}

#[pymethods]
impl LakeParams {
    #[new]
    #[pyo3(signature = (b=0.65, c=0.5, rho=0.03, sigma=0.1, rate="standard",
                        rate_center=3.0, rate_slope=1.0, rate_scale=1.0, rate_threshold=3.0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        b: f64,
        c: f64,
        rho: f64,
        sigma: f64,
        rate: &str,
        rate_center: f64,
        rate_slope: f64,
        rate_scale: f64,
        rate_threshold: f64,
    ) -> PyResult<Self> {
        let rate = parse_rate(rate, rate_center, rate_slope, rate_scale, rate_threshold)?;
        let inner = core::validate_params(core::LakeParams {
            b,
            c,
            rho,
            sigma,
            rate,
        })
        .map_err(err)?;
        Ok(LakeParams { inner })
    }

    #[getter]
    fn b(&self) -> f64 {
        self.inner.b()
    }
    #[getter]
    fn c(&self) -> f64 {
        self.inner.c()
    }
    #[getter]
    fn rho(&self) -> f64 {
        self.inner.rho()
    }
    #[getter]
    fn sigma(&self) -> f64 {
        self.inner.sigma()
    }
    /// Asymptotic recycling limit `a`.
    #[getter]
    fn a(&self) -> f64 {
        self.inner.a()
    }
    /// Quadratic coefficient of the value function at infinity.
    #[getter]
    fn big_a(&self) -> f64 {
        self.inner.derived().big_a
    }
    /// Additive constant of the asymptotic expansion.
    #[getter]
    fn k_asymptotic(&self) -> f64 {
        self.inner.derived().k_asymptotic
    }
    /// Upper bound on V(0).
    #[getter]
    fn v0_upper(&self) -> f64 {
        self.inner.derived().v0_upper
    }
    /// Non-fatal validation warnings.
    #[getter]
    fn warnings(&self) -> Vec<String> {
        self.inner.warnings().to_vec()
    }

    /// Evaluate the recycling rate.
    fn recycling(&self, x: f64) -> f64 {
        self.inner.r(x)
    }

    fn __repr__(&self) -> String {
        format!(
            "LakeParams(b={}, c={}, rho={}, sigma={})",
            self.inner.b(),
            self.inner.c(),
            self.inner.rho(),
            self.inner.sigma()
        )
    }
}

/// Converged value function with its optimal feedback policy.
#[pyclass(frozen)]
struct Solution {
    inner: core::ValueSolution,
}

#[pymethods]
impl Solution {
    /// Grid nodes.
    #[getter]
    fn x(&self) -> Vec<f64> {
        self.inner.grid().xs().to_vec()
    }
    /// Nodal values of the value function.
    #[getter]
    fn v(&self) -> Vec<f64> {
        self.inner.v().to_vec()
    }
    /// Nodal optimal loading.
    #[getter]
    fn policy(&self) -> Vec<f64> {
        self.inner.policy().to_vec()
    }
    #[getter]
    fn residual_norm(&self) -> f64 {
        self.inner.residual_norm()
    }
    #[getter]
    fn newton_iters(&self) -> usize {
        self.inner.newton_iters()
    }
    #[getter]
    fn l(&self) -> f64 {
        self.inner.grid().l()
    }

    /// Value function at an arbitrary state (asymptotic beyond the domain).
    fn value_at(&self, x: f64) -> f64 {
        self.inner.value_at(x)
    }

    /// Optimal loading at an arbitrary state.
    fn policy_at(&self, x: f64) -> f64 {
        self.inner.policy_curve().u(x)
    }

    /// Stationary density of the optimally controlled lake.
    #[pyo3(signature = (points=8000))]
    fn invariant_density(&self, points: usize) -> PyResult<Density> {
        let mesh = core::MeshSpec {
            points,
            ..Default::default()
        };
        let inner = core::invariant_density(&self.inner, &mesh).map_err(err)?;
        Ok(Density { inner })
    }

    /// Simulate one path; returns (times, states).
    #[pyo3(signature = (x0=1.0, horizon=2e3, dt=1e-3, seed=7, sample_every=1))]
    fn simulate(
        &self,
        x0: f64,
        horizon: f64,
        dt: f64,
        seed: u64,
        sample_every: usize,
    ) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let cfg = core::SimConfig {
            dt,
            horizon,
            seed,
            n_paths: 1,
        };
        let path = core::simulate_path_sampled(&self.inner, &cfg, x0, sample_every).map_err(err)?;
        Ok((path.times, path.states))
    }

    /// Monte Carlo estimate of the value at `x0` under the optimal policy;
    /// returns (estimate, stderr, bias_bound).
    #[pyo3(signature = (x0=1.0, paths=1000, dt=1e-3, seed=7, t_cutoff=None))]
    fn value_mc(
        &self,
        x0: f64,
        paths: usize,
        dt: f64,
        seed: u64,
        t_cutoff: Option<f64>,
    ) -> PyResult<(f64, f64, f64)> {
        let cfg = core::SimConfig {
            dt,
            horizon: 1.0,
            seed,
            n_paths: paths,
        };
        let mc = core::estimate_value_mc(&self.inner, &cfg, x0, t_cutoff).map_err(err)?;
        Ok((mc.estimate, mc.stderr, mc.bias_bound))
    }

    /// First-passage times between the two attractors; returns
    /// (times, normalized, ks_statistic, censored).
    #[pyo3(signature = (samples=100, dt=1e-3, seed=7, horizon=1e4))]
    fn escape_times(
        &self,
        samples: usize,
        dt: f64,
        seed: u64,
        horizon: f64,
    ) -> PyResult<(Vec<f64>, Vec<f64>, f64, usize)> {
        let dens = core::invariant_density(&self.inner, &core::MeshSpec::default()).map_err(err)?;
        let cfg = core::SimConfig {
            dt,
            horizon,
            seed,
            n_paths: 1,
        };
        let esc = core::escape_times(&self.inner, &dens, &cfg, samples).map_err(err)?;
        Ok((
            esc.raw_times,
            esc.normalized,
            esc.ks_statistic,
            esc.censored,
        ))
    }

    fn __repr__(&self) -> String {
        format!(
            "Solution(n={}, l={}, iters={}, residual={:.2e})",
            self.inner.grid().n(),
            self.inner.grid().l(),
            self.inner.newton_iters(),
            self.inner.residual_norm()
        )
    }
}

/// Invariant density, CDF and transformation invariant on a positive mesh.
#[pyclass(frozen)]
struct Density {
    inner: core::InvariantDensity,
}

#[pymethods]
impl Density {
    #[getter]
    fn x(&self) -> Vec<f64> {
        self.inner.xs().to_vec()
    }
    #[getter]
    fn f(&self) -> Vec<f64> {
        self.inner.f().to_vec()
    }
    #[getter]
    fn cdf(&self) -> Vec<f64> {
        self.inner.cdf().to_vec()
    }
    /// Transformation invariant `I = sigma x f`.
    #[getter]
    fn invariant(&self) -> Vec<f64> {
        self.inner.invariant().to_vec()
    }
    /// Stochastic attractors (locations of the maxima of I).
    #[getter]
    fn modes(&self) -> Vec<f64> {
        self.inner.modes().to_vec()
    }
    /// Regime-switching thresholds (minima of I).
    #[getter]
    fn antimodes(&self) -> Vec<f64> {
        self.inner.antimodes().to_vec()
    }
    #[getter]
    fn ln_z(&self) -> f64 {
        self.inner.ln_z()
    }

    fn cdf_at(&self, x: f64) -> f64 {
        self.inner.cdf_at(x)
    }

    fn __repr__(&self) -> String {
        format!(
            "Density(points={}, modes={:?})",
            self.inner.xs().len(),
            self.inner.modes()
        )
    }
}

/// Solve the HJB equation on `[0, l]` with `n` intervals.
#[pyfunction]
#[pyo3(signature = (params, l=None, n=4000, tol=1e-10, max_iter=200))]
fn solve(
    params: &LakeParams,
    l: Option<f64>,
    n: usize,
    tol: f64,
    max_iter: usize,
) -> PyResult<Solution> {
    let p = &params.inner;
    let l = l.unwrap_or_else(|| core::default_domain_length(p));
    let grid = core::build_grid(p, l, n).map_err(err)?;
    let inner = core::solve(&grid, p, tol, max_iter).map_err(err)?;
    Ok(Solution { inner })
}

#[pymodule]
fn lake_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<LakeParams>()?;
    m.add_class::<Solution>()?;
    m.add_class::<Density>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    Ok(())
}
