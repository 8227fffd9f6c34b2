//! Monotone finite-difference discretisation of the lake HJB equation and
//! its damped Newton solver.
//!
//! The unknowns are the nodal values `V_0 .. V_{N-1}` on a uniform grid over
//! `[0, l]`; `V_N` is pinned by the asymptotic right-boundary closure. The
//! discrete operator uses a backward difference for the linear advection
//! term, a forward difference inside the logarithm and a central second
//! difference, which is monotone under the grid condition
//! `dx * (r(x) - b x) <= sigma^2 / 2`.

use crate::model::ValidatedParams;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("grid must have l > 0 and n >= 8, got l = {l}, n = {n}")]
    InvalidGrid { l: f64, n: usize },
    #[error(
        "monotonicity condition violated at x = {worst_x}: dx*(r - b x) = {lhs} > sigma^2/2 = {rhs}{}",
        match .min_n {
            Some(n) => format!("; smallest admissible n for this l is {n}"),
            None => "; no n satisfies it (sigma = 0 and r(x) > b x somewhere)".to_string(),
        }
    )]
    MonotonicityViolation {
        worst_x: f64,
        lhs: f64,
        rhs: f64,
        min_n: Option<usize>,
    },
    #[error(
        "right boundary value {v_n} at l = {l} is not below the V(0) bound {v0_upper}; increase l"
    )]
    DomainTooSmall { l: f64, v_n: f64, v0_upper: f64 },
    #[error("nonnegative forward difference at node {index}; iterate outside the scheme's domain")]
    NonnegativeForwardDifference { index: usize },
    #[error("quadratic initial guess has a nonnegative forward difference at node {index}")]
    DegenerateQuadratic { index: usize },
    #[error("zero pivot in tridiagonal elimination at row {row}")]
    ZeroPivot { row: usize },
    #[error("Newton damping could not restore negative forward differences")]
    InfeasibleIterate,
    #[error("Newton did not converge in {iters} iterations; best residual norm {best_norm}")]
    MaxIterationsExceeded {
        iters: usize,
        best_norm: f64,
        best: Vec<f64>,
    },
    #[error("solution violates V + A x^2 monotonicity at node {index}")]
    InvariantViolation { index: usize },
}

/// Uniform grid on `[0, l]` with recycling-rate values cached at the nodes.
#[derive(Debug, Clone)]
pub struct Grid {
    l: f64,
    n: usize,
    dx: f64,
    xs: Vec<f64>,
    rs: Vec<f64>,
}

impl Grid {
    pub fn l(&self) -> f64 {
        self.l
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn dx(&self) -> f64 {
        self.dx
    }
    pub fn x(&self, i: usize) -> f64 {
        self.xs[i]
    }
    pub fn xs(&self) -> &[f64] {
        &self.xs
    }
    pub fn r(&self, i: usize) -> f64 {
        self.rs[i]
    }
}

/// Default right endpoint: far enough beyond the asymptotic shift that the
/// quadratic term dominates at the boundary.
pub fn default_domain_length(p: &ValidatedParams) -> f64 {
    4.0 * p.shift().max(1.0) + 2.0
}

pub const DEFAULT_GRID_POINTS: usize = 4000;
pub const DEFAULT_TOLERANCE: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 200;

/// Build the uniform grid and verify the monotonicity condition at every
/// node. On violation the error reports the worst node and the smallest `n`
/// that would satisfy the condition for this `l` (if one exists).
pub fn build_grid(p: &ValidatedParams, l: f64, n: usize) -> Result<Grid, SolverError> {
    if !(l > 0.0) || !l.is_finite() || n < 8 {
        return Err(SolverError::InvalidGrid { l, n });
    }
    let dx = l / n as f64;
    let xs: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64 * l).collect();
    let rs: Vec<f64> = xs.iter().map(|&x| p.r(x)).collect();
    let rhs = 0.5 * p.sigma() * p.sigma();
    let mut worst = (0usize, f64::NEG_INFINITY);
    for i in 0..=n {
        let lhs = dx * (rs[i] - p.b() * xs[i]);
        if lhs > worst.1 {
            worst = (i, lhs);
        }
    }
    if worst.1 > rhs + 1e-15 {
        // Fine scan so the suggested n is valid independently of this grid.
        let fine = 10 * n;
        let sup = (0..=fine)
            .map(|i| {
                let x = i as f64 / fine as f64 * l;
                p.r(x) - p.b() * x
            })
            .fold(f64::NEG_INFINITY, f64::max);
        let min_n = if rhs > 0.0 && sup > 0.0 {
            Some((l * sup / rhs).ceil().max(8.0) as usize)
        } else {
            None
        };
        return Err(SolverError::MonotonicityViolation {
            worst_x: xs[worst.0],
            lhs: worst.1,
            rhs,
            min_n,
        });
    }
    Ok(Grid { l, n, dx, xs, rs })
}

/// Asymptotic expansion of `V` evaluated with the boundary constant.
fn asymptote(p: &ValidatedParams, x: f64) -> f64 {
    let d = p.derived();
    let y = x + p.shift();
    -d.big_a * y * y - (2.0 * d.big_a * y).ln() / p.rho() + d.k_boundary
}

/// Derivative of the asymptotic expansion; also the tail extension of the
/// policy interpolant.
fn asymptote_vprime(big_a: f64, shift: f64, rho: f64, x: f64) -> f64 {
    let y = x + shift;
    -2.0 * big_a * y - 1.0 / (rho * y)
}

/// Value pinned at the right endpoint.
pub fn right_boundary_value(p: &ValidatedParams, l: f64) -> f64 {
    asymptote(p, l)
}

/// Residual of the discrete system for a feasible nodal vector `v` of
/// length `n + 1` (last entry pinned). Component `i = 0` is the discrete
/// left boundary condition, which coincides with the interior stencil
/// because `x_0 = 0`.
pub fn residual(v: &[f64], g: &Grid, p: &ValidatedParams) -> Result<Vec<f64>, SolverError> {
    residual_two_part(v, None, g, p)
}

/// Residual with an optional low-order correction of the iterate.
///
/// The second-difference coefficient grows like `sigma^2 x^2 / (rho dx^2)`,
/// so on fine grids one ulp of a nodal value of size ~1e2 moves the residual
/// by more than the solver tolerance; the Newton iterate is therefore kept
/// as an unevaluated sum `hi + lo`. Differences of the `hi` part between
/// neighbouring nodes are exact in floating point (the values share a
/// binade), the `lo` part is folded in afterwards and the final sum is
/// compensated.
fn residual_two_part(
    hi: &[f64],
    lo: Option<&[f64]>,
    g: &Grid,
    p: &ValidatedParams,
) -> Result<Vec<f64>, SolverError> {
    let n = g.n;
    assert_eq!(hi.len(), n + 1, "nodal vector must have n + 1 entries");
    let (b, c, rho, sigma) = (p.b(), p.c(), p.rho(), p.sigma());
    let dx = g.dx;
    let half_sig_sq = 0.5 * sigma * sigma;
    let mut dh = vec![0.0; n];
    let mut dl = vec![0.0; n];
    for i in 0..n {
        dh[i] = hi[i + 1] - hi[i];
        if let Some(lo) = lo {
            dl[i] = lo[i + 1] - lo[i];
        }
        if !(dh[i] + dl[i] < 0.0) {
            return Err(SolverError::NonnegativeForwardDifference { index: i });
        }
    }
    let mut out = vec![0.0; n];
    for i in 0..n {
        let x = g.xs[i];
        let d = dh[i] + dl[i];
        let log_term = (c * x * x + 1.0 + (-d / dx).ln()) / rho;
        let mut terms = [hi[i], log_term, 0.0, 0.0, 0.0];
        if let Some(lo) = lo {
            terms[2] = lo[i];
        }
        if i > 0 {
            let second = ((dh[i] - dh[i - 1]) + (dl[i] - dl[i - 1])) / (dx * dx);
            terms[3] = -(g.rs[i] - b * x) * ((dh[i - 1] + dl[i - 1]) / dx) / rho;
            terms[4] = -half_sig_sq * x * x * second / rho;
        }
        out[i] = neumaier_sum(&terms);
    }
    Ok(out)
}

/// Compensated summation; keeps the cancellation noise of the residual
/// well below the convergence tolerance.
fn neumaier_sum(terms: &[f64]) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for &t in terms {
        let s = sum + t;
        comp += if sum.abs() >= t.abs() {
            (sum - s) + t
        } else {
            (t - s) + sum
        };
        sum = s;
    }
    sum + comp
}

/// Tridiagonal matrix bands `(sub, diag, super)`.
pub type Tridiagonal = (Vec<f64>, Vec<f64>, Vec<f64>);

/// Tridiagonal Jacobian of [`residual`], rows `0..n` over unknowns
/// `V_0..V_{n-1}`; the pinned `V_n` column is folded away.
pub fn jacobian(v: &[f64], g: &Grid, p: &ValidatedParams) -> Result<Tridiagonal, SolverError> {
    let n = g.n;
    assert_eq!(v.len(), n + 1, "nodal vector must have n + 1 entries");
    let (b, rho, sigma) = (p.b(), p.rho(), p.sigma());
    let dx = g.dx;
    let half_sig_sq = 0.5 * sigma * sigma;
    let mut sub = vec![0.0; n - 1];
    let mut diag = vec![0.0; n];
    let mut sup = vec![0.0; n - 1];
    for i in 0..n {
        let gap = v[i] - v[i + 1];
        if !(gap > 0.0) {
            return Err(SolverError::NonnegativeForwardDifference { index: i });
        }
        let x = g.xs[i];
        let log_d = 1.0 / (rho * gap);
        let mut d = 1.0 + log_d;
        if i > 0 {
            let adv = (g.rs[i] - b * x) / (rho * dx);
            let dif = half_sig_sq * x * x / (rho * dx * dx);
            d += -adv + 2.0 * dif;
            sub[i - 1] = adv - dif;
            if i < n - 1 {
                sup[i] = -log_d - dif;
            }
        } else if n > 1 {
            sup[0] = -log_d;
        }
        diag[i] = d;
    }
    Ok((sub, diag, sup))
}

/// Thomas elimination for a general tridiagonal system, no pivoting.
/// Diagonal dominance under the monotonicity condition keeps it stable.
fn solve_tridiagonal(
    sub: &[f64],
    diag: &[f64],
    sup: &[f64],
    rhs: &[f64],
) -> Result<Vec<f64>, SolverError> {
    let n = diag.len();
    let mut c_prime = vec![0.0; n.saturating_sub(1)];
    let mut d_prime = vec![0.0; n];
    let mut denom = diag[0];
    if denom.abs() < 1e-300 || !denom.is_finite() {
        return Err(SolverError::ZeroPivot { row: 0 });
    }
    if n > 1 {
        c_prime[0] = sup[0] / denom;
    }
    d_prime[0] = rhs[0] / denom;
    for i in 1..n {
        denom = diag[i] - sub[i - 1] * c_prime[i - 1];
        if denom.abs() < 1e-300 || !denom.is_finite() {
            return Err(SolverError::ZeroPivot { row: i });
        }
        if i < n - 1 {
            c_prime[i] = sup[i] / denom;
        }
        d_prime[i] = (rhs[i] - sub[i - 1] * d_prime[i - 1]) / denom;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d_prime[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d_prime[i] - c_prime[i] * x[i + 1];
    }
    Ok(x)
}

/// Quadratic Newton start: matches the `V(0)` upper bound, the discrete
/// left boundary condition at `x_1` and the pinned right boundary value.
/// Falls back to the asymptotic expansion when the quadratic would have a
/// nonnegative forward difference somewhere.
pub fn initial_guess(g: &Grid, p: &ValidatedParams) -> Result<Vec<f64>, SolverError> {
    let d = p.derived();
    let v0 = d.v0_upper;
    let vn = right_boundary_value(p, g.l);
    if vn >= v0 {
        return Err(SolverError::DomainTooSmall {
            l: g.l,
            v_n: vn,
            v0_upper: v0,
        });
    }
    let x1 = g.xs[1];
    let v1 = v0 - g.dx * (-(p.rho() * v0 + 1.0)).exp();
    // Unique quadratic through (0, v0), (x1, v1), (l, vn).
    let d1 = v1 - v0;
    let dn = vn - v0;
    let gamma = (dn - d1 * g.l / x1) / (g.l * (g.l - x1));
    let beta = d1 / x1 - gamma * x1;
    let quad: Vec<f64> =
        g.xs.iter()
            .map(|&x| v0 + beta * x + gamma * x * x)
            .collect();
    match first_nonneg_diff(&quad) {
        None => Ok(quad),
        Some(_) => {
            // Strictly decreasing replacement on the same boundary data.
            let fallback: Vec<f64> =
                g.xs.iter()
                    .map(|&x| asymptote(p, x.max(0.5 * g.dx)))
                    .collect();
            match first_nonneg_diff(&fallback) {
                None => Ok(fallback),
                Some(i) => Err(SolverError::DegenerateQuadratic { index: i }),
            }
        }
    }
}

fn first_nonneg_diff(v: &[f64]) -> Option<usize> {
    (0..v.len() - 1).find(|&i| v[i + 1] - v[i] >= 0.0)
}

/// Converged approximation of the value function with its nodal policy.
#[derive(Debug, Clone)]
pub struct ValueSolution {
    grid: Grid,
    params: ValidatedParams,
    v: Vec<f64>,
    /// Sub-ulp remainder of the Newton iterate; `v + v_lo` is what attains
    /// the reported residual norm.
    v_lo: Vec<f64>,
    policy: Vec<f64>,
    residual_norm: f64,
    newton_iters: usize,
}

impl ValueSolution {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    pub fn params(&self) -> &ValidatedParams {
        &self.params
    }
    /// Nodal values `V_0 ..= V_n` (the last entry is the pinned boundary).
    pub fn v(&self) -> &[f64] {
        &self.v
    }
    /// Nodal policy `u_i = -dx / (V_{i+1} - V_i)`, `i = 0..n-1`.
    pub fn policy(&self) -> &[f64] {
        &self.policy
    }
    pub fn residual_norm(&self) -> f64 {
        self.residual_norm
    }
    pub fn newton_iters(&self) -> usize {
        self.newton_iters
    }

    /// Forward difference quotients `(V_{i+1} - V_i)/dx`, `i = 0..n-1`.
    pub fn forward_slopes(&self) -> Vec<f64> {
        let dx = self.grid.dx;
        (0..self.grid.n)
            .map(|i| ((self.v[i + 1] - self.v[i]) + (self.v_lo[i + 1] - self.v_lo[i])) / dx)
            .collect()
    }

    /// Residual norm recomputed from the stored iterate.
    pub fn recomputed_residual_norm(&self) -> f64 {
        residual_two_part(&self.v, Some(&self.v_lo), &self.grid, &self.params)
            .map(|f| f.iter().fold(0.0f64, |m, &x| m.max(x.abs())))
            .unwrap_or(f64::INFINITY)
    }

    /// Piecewise-linear value inside the domain, asymptotic expansion
    /// beyond it.
    pub fn value_at(&self, x: f64) -> f64 {
        if x >= self.grid.l {
            return asymptote(&self.params, x);
        }
        let pos = (x.max(0.0) / self.grid.dx).floor() as usize;
        let i = pos.min(self.grid.n - 1);
        let t = (x - self.grid.xs[i]) / self.grid.dx;
        self.v[i] * (1.0 - t) + self.v[i + 1] * t
    }

    /// `|ln(-(V_1 - V_0)/dx) + rho V_0 + 1|`, the discrete version of the
    /// mixed boundary condition at zero.
    pub fn boundary_identity_error(&self) -> f64 {
        let fwd = ((self.v[1] - self.v[0]) + (self.v_lo[1] - self.v_lo[0])) / self.grid.dx;
        ((-fwd).ln() + self.params.rho() * (self.v[0] + self.v_lo[0]) + 1.0).abs()
    }

    /// Residual against the asymptotic expansion, `V_i - asymptote(x_i)`,
    /// over the trailing `fraction` of the domain.
    pub fn asymptote_residual_tail(&self, fraction: f64) -> f64 {
        let start = ((1.0 - fraction) * self.grid.n as f64).floor() as usize;
        (start..=self.grid.n)
            .map(|i| (self.v[i] - asymptote(&self.params, self.grid.xs[i])).abs())
            .fold(0.0, f64::max)
    }

    pub fn policy_curve(&self) -> PolicyCurve {
        let d = self.params.derived();
        PolicyCurve {
            dx: self.grid.dx,
            l: self.grid.l,
            dv: self.forward_slopes(),
            big_a: d.big_a,
            shift: self.params.shift(),
            rho: self.params.rho(),
        }
    }
}

/// Damped Newton iteration from the quadratic initial guess.
///
/// Steps are halved (at most 60 times) until every forward difference of
/// the candidate stays below `-1e-14 |V_N| / l`, keeping the logarithm
/// defined at every iterate. Corrections below one ulp of the nodal values
/// accumulate in the low-order part of the iterate.
pub fn solve(
    g: &Grid,
    p: &ValidatedParams,
    tol: f64,
    max_iter: usize,
) -> Result<ValueSolution, SolverError> {
    assert!(tol > 0.0, "tolerance must be positive");
    let n = g.n;
    let mut hi = initial_guess(g, p)?;
    let mut lo = vec![0.0; n + 1];
    let floor = 1e-14 * hi[n].abs() / g.l;
    let mut best_norm = f64::INFINITY;
    let mut best = hi.clone();

    for iter in 0..=max_iter {
        let f = residual_two_part(&hi, Some(&lo), g, p)?;
        let norm = f.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
        if norm < best_norm {
            best_norm = norm;
            best.copy_from_slice(&hi);
        }
        if norm <= tol {
            return finish(g, p, hi, lo, norm, iter);
        }
        if iter == max_iter {
            break;
        }
        let (sub, diag, sup) = jacobian(&hi, g, p)?;
        let rhs: Vec<f64> = f.iter().map(|&x| -x).collect();
        let delta = solve_tridiagonal(&sub, &diag, &sup, &rhs)?;

        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..=60 {
            let feasible = (0..n).all(|i| {
                let wi = t * delta[i] + lo[i];
                let wip = if i + 1 < n {
                    t * delta[i + 1] + lo[i + 1]
                } else {
                    lo[n]
                };
                (hi[i + 1] - hi[i]) + (wip - wi) < -floor * g.dx
            });
            if feasible {
                for i in 0..n {
                    // Two-sum keeps the part of the update that rounding
                    // would otherwise drop.
                    let w = t * delta[i] + lo[i];
                    let s = hi[i] + w;
                    let bb = s - hi[i];
                    lo[i] = (hi[i] - (s - bb)) + (w - bb);
                    hi[i] = s;
                }
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(SolverError::InfeasibleIterate);
        }
    }

    Err(SolverError::MaxIterationsExceeded {
        iters: max_iter,
        best_norm,
        best,
    })
}

fn finish(
    g: &Grid,
    p: &ValidatedParams,
    hi: Vec<f64>,
    lo: Vec<f64>,
    norm: f64,
    iters: usize,
) -> Result<ValueSolution, SolverError> {
    let big_a = p.derived().big_a;
    let v = hi;
    for i in 0..g.n {
        let lhs = v[i + 1] + lo[i + 1] + big_a * g.xs[i + 1] * g.xs[i + 1];
        let rhs = v[i] + lo[i] + big_a * g.xs[i] * g.xs[i];
        if lhs >= rhs {
            return Err(SolverError::InvariantViolation { index: i });
        }
    }
    let dx = g.dx;
    let policy: Vec<f64> = (0..g.n)
        .map(|i| -dx / ((v[i + 1] - v[i]) + (lo[i + 1] - lo[i])))
        .collect();
    debug_assert!(policy.iter().all(|&u| u > 0.0));
    Ok(ValueSolution {
        grid: g.clone(),
        params: p.clone(),
        v,
        v_lo: lo,
        policy,
        residual_norm: norm,
        newton_iters: iters,
    })
}

/// Continuous optimal-loading interpolant `u(x) = -1/V'(x)`.
///
/// `V'` is taken piecewise linear through the forward difference quotients
/// located at the cell midpoints, blended into the asymptotic derivative at
/// the right endpoint and extended by it beyond the domain. All pieces are
/// strictly negative, so `u > 0` everywhere.
#[derive(Debug, Clone)]
pub struct PolicyCurve {
    dx: f64,
    l: f64,
    dv: Vec<f64>,
    big_a: f64,
    shift: f64,
    rho: f64,
}

impl PolicyCurve {
    pub fn vprime(&self, x: f64) -> f64 {
        let n = self.dv.len();
        if x >= self.l {
            return asymptote_vprime(self.big_a, self.shift, self.rho, x);
        }
        let first_mid = 0.5 * self.dx;
        if x <= first_mid {
            return self.dv[0];
        }
        let last_mid = (n as f64 - 0.5) * self.dx;
        if x >= last_mid {
            let t = (x - last_mid) / (self.l - last_mid);
            let end = asymptote_vprime(self.big_a, self.shift, self.rho, self.l);
            return self.dv[n - 1] * (1.0 - t) + end * t;
        }
        let i = ((x / self.dx - 0.5).floor() as usize).min(n - 2);
        let t = (x - (i as f64 + 0.5) * self.dx) / self.dx;
        self.dv[i] * (1.0 - t) + self.dv[i + 1] * t
    }

    pub fn u(&self, x: f64) -> f64 {
        -1.0 / self.vprime(x)
    }

    /// Domain end; the asymptotic extension is considered trustworthy up to
    /// `100 l`.
    pub fn l(&self) -> f64 {
        self.l
    }
}

/// Nodal policy plus the continuous interpolant.
pub fn policy_from_solution(s: &ValueSolution) -> (Vec<f64>, PolicyCurve) {
    (s.policy().to_vec(), s.policy_curve())
}
