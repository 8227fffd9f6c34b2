//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line (visible with `--nocapture`). Thresholds are fixed here,
//! not tuned at runtime.
//!
//! Run with `cargo test -p shallow-lake --test acceptance`.

use shallow_lake::invariant::{
    bifurcation_sweep, invariant_density, MeshSpec, SolveSpec, SweepParam,
};
use shallow_lake::sde::{self, SimConfig};
use shallow_lake::solver::{
    build_grid, default_domain_length, initial_guess, jacobian, residual, solve,
};
use shallow_lake::{
    estimate_value_mc, feedback_benchmark_payoff, simulate_path_sampled, truncated_policy_value,
    validate_params, LakeParams, RecyclingRate, ValidatedParams, ValueSolution,
};
use std::time::Instant;

fn params(b: f64, c: f64, rho: f64, sigma: f64) -> ValidatedParams {
    validate_params(LakeParams {
        b,
        c,
        rho,
        sigma,
        rate: RecyclingRate::Standard,
    })
    .unwrap()
}

fn solve_default(p: &ValidatedParams, n: usize) -> ValueSolution {
    let g = build_grid(p, default_domain_length(p), n).unwrap();
    solve(&g, p, 1e-10, 200).unwrap()
}

fn report(criterion: &str, detail: String) {
    println!("[PASS] {criterion}: {detail}");
}

#[test]
fn criterion_01_solver_convergence_and_feasibility() {
    let sets = [
        (0.65, 1.0, 0.03),
        (0.65, 0.5, 0.03),
        (0.8, 0.5, 0.03),
        (0.65, 0.512, 0.03),
    ];
    let mut worst_iters = 0;
    let mut worst_norm = 0.0f64;
    let mut worst_secs = 0.0f64;
    for (b, c, rho) in sets {
        for sigma in [0.05, 0.1, 0.2] {
            let p = params(b, c, rho, sigma);
            let t0 = Instant::now();
            let s = solve_default(&p, 4000);
            let secs = t0.elapsed().as_secs_f64();
            assert!(
                s.newton_iters() <= 60,
                "({b},{c},{rho},{sigma}): {} iterations",
                s.newton_iters()
            );
            assert!(
                s.residual_norm() <= 1e-10,
                "({b},{c},{rho},{sigma}): residual {}",
                s.residual_norm()
            );
            assert!(
                s.forward_slopes().iter().all(|&d| d < 0.0),
                "({b},{c},{rho},{sigma}): nonnegative forward difference"
            );
            assert!(
                secs < 5.0,
                "({b},{c},{rho},{sigma}): solve took {secs:.2} s"
            );
            worst_iters = worst_iters.max(s.newton_iters());
            worst_norm = worst_norm.max(s.residual_norm());
            worst_secs = worst_secs.max(secs);
        }
    }
    report(
        "criterion 1 (solver convergence & feasibility)",
        format!(
            "12 solves converged; worst: {worst_iters} iterations, residual {worst_norm:.2e}, {worst_secs:.3} s"
        ),
    );
}

#[test]
fn criterion_02_proven_bound_suite() {
    let sets = [
        (0.65, 1.0, 0.03),
        (0.65, 0.5, 0.03),
        (0.8, 0.5, 0.03),
        (0.65, 0.512, 0.03),
    ];
    for (b, c, rho) in sets {
        for sigma in [0.05, 0.1, 0.2] {
            let p = params(b, c, rho, sigma);
            let s = solve_default(&p, 4000);
            let s2 = solve_default(&p, 8000);
            let d = p.derived();
            let g = s.grid();

            // V + A x^2 strictly decreasing.
            for i in 0..g.n() {
                let a0 = s.v()[i] + d.big_a * g.x(i) * g.x(i);
                let a1 = s.v()[i + 1] + d.big_a * g.x(i + 1) * g.x(i + 1);
                assert!(
                    a1 < a0,
                    "({b},{c},{rho},{sigma}): V + A x^2 rises at node {i}"
                );
            }
            // Boundary value bound.
            assert!(
                s.v()[0] <= d.v0_upper + 10.0 * g.dx(),
                "({b},{c},{rho},{sigma}): V(0) = {} above bound {}",
                s.v()[0],
                d.v0_upper
            );
            // Uniformly negative slope with a refinement-stable constant.
            let c1 = |s: &ValueSolution| {
                s.forward_slopes()
                    .iter()
                    .map(|v| -v)
                    .fold(f64::INFINITY, f64::min)
            };
            let (c1_a, c1_b) = (c1(&s), c1(&s2));
            assert!(c1_a > 0.0);
            assert!(
                (c1_b / c1_a - 1.0).abs() <= 0.2,
                "({b},{c},{rho},{sigma}): slope constant drifts {c1_a} -> {c1_b}"
            );
            // Discrete boundary identity.
            assert!(
                s.boundary_identity_error() <= 1e-9,
                "({b},{c},{rho},{sigma}): boundary identity {}",
                s.boundary_identity_error()
            );
            // Bracket of the growth bounds: spread stable under refinement.
            let spread = |s: &ValueSolution| {
                let m = s.params().shift();
                let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                for i in 0..=s.grid().n() {
                    let x = s.grid().x(i);
                    let v =
                        s.v()[i] + d.big_a * (x + m) * (x + m) + (x + m).ln() / s.params().rho();
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
                hi - lo
            };
            let (sp_a, sp_b) = (spread(&s), spread(&s2));
            assert!(
                (sp_b / sp_a - 1.0).abs() < 0.05,
                "({b},{c},{rho},{sigma}): bracket spread {sp_a} -> {sp_b}"
            );
        }
    }
    report(
        "criterion 2 (proven-bound suite)",
        "monotonicity, V(0) bound, slope bound, boundary identity, bracket stability on 12 solutions".into(),
    );
}

#[test]
fn criterion_03_asymptotic_closure() {
    // The additive constant of the value function's expansion at infinity
    // is attained at rates like x^(-rho/b), so the closure residual can only
    // be observed small when rho/b is large; this parameter set reaches the
    // asymptotic regime well inside the default domain.
    let p = params(0.1, 0.5, 2.0, 0.5);
    let l = default_domain_length(&p);
    let g = build_grid(&p, l, 4000).unwrap();
    let s = solve(&g, &p, 1e-10, 200).unwrap();
    let tail = s.asymptote_residual_tail(0.05);
    assert!(tail < 1e-2, "tail residual {tail}");
    // Doubling l with n/l fixed shrinks the residual.
    let g2 = build_grid(&p, 2.0 * l, 8000).unwrap();
    let s2 = solve(&g2, &p, 1e-10, 200).unwrap();
    let tail2 = s2.asymptote_residual_tail(0.05);
    assert!(tail2 < tail, "tail residual grew: {tail} -> {tail2}");
    report(
        "criterion 3 (asymptotic closure)",
        format!("max |v| over last 5% of nodes: {tail:.3e} at l = {l}, {tail2:.3e} at 2l"),
    );
}

#[test]
fn criterion_04_self_convergence() {
    let p = params(0.65, 0.5, 0.03, 0.1);
    let l = default_domain_length(&p);
    let dist = |n: usize| -> f64 {
        let ga = build_grid(&p, l, n).unwrap();
        let gb = build_grid(&p, l, 2 * n).unwrap();
        let sa = solve(&ga, &p, 1e-10, 200).unwrap();
        let sb = solve(&gb, &p, 1e-10, 200).unwrap();
        (0..=n)
            .map(|i| (sa.v()[i] - sb.v()[2 * i]).abs())
            .fold(0.0, f64::max)
    };
    let d1 = dist(1000);
    let d2 = dist(2000);
    let d3 = dist(4000);
    let r1 = d1 / d2;
    let r2 = d2 / d3;
    assert!(
        r1 >= 1.8 && r2 >= 1.8,
        "refinement ratios {r1:.2}, {r2:.2} below 1.8 (first-order behaviour)"
    );
    report(
        "criterion 4 (self-convergence)",
        format!("|V_n - V_2n| = {d1:.2e} -> {d2:.2e} -> {d3:.2e}; ratios {r1:.2}, {r2:.2}"),
    );
}

#[test]
fn criterion_05_jacobian_against_finite_differences() {
    use rand::Rng;
    use rand::SeedableRng;
    let p = params(0.65, 0.5, 0.03, 0.1);
    let g = build_grid(&p, 4.0, 80).unwrap();
    let base = initial_guess(&g, &p).unwrap();
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(17);
    let n = g.n();
    let mut worst = 0.0f64;
    for trial in 0..10 {
        // Random feasible iterate: perturb without closing any gap.
        let mut v = base.clone();
        loop {
            for vi in v.iter_mut().take(n) {
                *vi += 0.05 * rng.random_range(-1.0..1.0);
            }
            if v.windows(2).all(|w| w[1] < w[0]) {
                break;
            }
            v.copy_from_slice(&base);
        }
        let min_gap = v
            .windows(2)
            .map(|w| w[0] - w[1])
            .fold(f64::INFINITY, f64::min);
        let h = 1e-3 * min_gap;
        let (sub, diag, sup) = jacobian(&v, &g, &p).unwrap();
        for col in 0..n {
            let mut vp = v.clone();
            let mut vm = v.clone();
            vp[col] += h;
            vm[col] -= h;
            let fp = residual(&vp, &g, &p).unwrap();
            let fm = residual(&vm, &g, &p).unwrap();
            for row in col.saturating_sub(1)..(col + 2).min(n) {
                let fd = (fp[row] - fm[row]) / (2.0 * h);
                let an = if row == col {
                    diag[row]
                } else if col + 1 == row {
                    sub[col]
                } else if row + 1 == col {
                    sup[row]
                } else {
                    0.0
                };
                let rel = (fd - an).abs() / an.abs().max(1e-8);
                assert!(
                    rel < 1e-6,
                    "trial {trial}, entry ({row},{col}): rel error {rel}"
                );
                worst = worst.max(rel);
            }
        }
    }
    report(
        "criterion 5 (Jacobian correctness)",
        format!("10 random feasible iterates, worst relative error {worst:.2e}"),
    );
}

#[test]
fn criterion_06_invariant_density_tails() {
    let p = params(0.65, 0.5, 0.03, 0.1);
    let s = solve_default(&p, 4000);
    let d = invariant_density(&s, &MeshSpec::default()).unwrap();
    let norm_err = (d.cdf()[d.cdf().len() - 1] - 1.0).abs();
    assert!(norm_err <= 1e-6, "normalization error {norm_err}");
    let t = d.tail();
    assert!((t.target_exponent + 132.0).abs() < 1e-9);
    let exp_err = (t.fitted_exponent / t.target_exponent - 1.0).abs();
    assert!(
        exp_err < 0.02,
        "tail exponent {} vs -132 (rel {exp_err})",
        t.fitted_exponent
    );
    let lim_err = (t.eq_limit_x_phi / t.eq_limit_target - 1.0).abs();
    assert!(
        lim_err < 0.05,
        "x Phi(x) at 1e-4: {} vs 1/|V'(0)| = {} (rel {lim_err})",
        t.eq_limit_x_phi,
        t.eq_limit_target
    );
    report(
        "criterion 6 (invariant density)",
        format!(
            "normalization {norm_err:.1e}; tail exponent {:.2} (target -132, rel {exp_err:.4}); small-x limit rel {lim_err:.4}",
            t.fitted_exponent
        ),
    );
}

#[test]
fn criterion_07_bifurcation_reproduction() {
    let t0 = Instant::now();
    let spec = SolveSpec::default();
    let mesh = MeshSpec::default();

    // Noise sweep of the bistable set: two modes at sigma = 0.1, one at 0.6.
    let base = LakeParams {
        b: 0.65,
        c: 0.5,
        rho: 0.03,
        sigma: 0.1,
        rate: RecyclingRate::Standard,
    };
    let values: Vec<f64> = (0..12).map(|k| 0.05 + 0.05 * k as f64).collect();
    let sw = bifurcation_sweep(&base, SweepParam::Sigma, &values, &spec, &mesh);
    assert_eq!(sw.failed, 0);
    for p in &sw.points {
        if !p.modes.is_empty() {
            assert_eq!(
                p.modes.len(),
                p.antimodes.len() + 1,
                "extrema counts inconsistent at sigma {}",
                p.value
            );
        }
    }
    let at = |v: f64| {
        sw.points
            .iter()
            .find(|p| (p.value - v).abs() < 1e-12)
            .unwrap()
    };
    assert_eq!(
        at(0.1).modes.len(),
        2,
        "modes at sigma 0.1: {:?}",
        at(0.1).modes
    );
    assert_eq!(
        at(0.6).modes.len(),
        1,
        "modes at sigma 0.6: {:?}",
        at(0.6).modes
    );

    // Unique-equilibrium set: one mode moving to cleaner states with noise.
    let base8 = LakeParams { b: 0.8, ..base };
    let sw8 = bifurcation_sweep(
        &base8,
        SweepParam::Sigma,
        &[0.1, 0.2, 0.3, 0.4],
        &spec,
        &mesh,
    );
    assert_eq!(sw8.failed, 0);
    let mut prev = f64::INFINITY;
    for p in &sw8.points {
        assert_eq!(p.modes.len(), 1, "sigma {}: modes {:?}", p.value, p.modes);
        assert!(
            p.modes[0] < prev,
            "mode location not strictly decreasing at sigma {}",
            p.value
        );
        prev = p.modes[0];
    }

    // Pollution-cost sweep: attractors move to cleaner states as c grows.
    let cvals: Vec<f64> = (0..10).map(|k| 0.4 + 0.1 * k as f64).collect();
    let swc = bifurcation_sweep(&base, SweepParam::C, &cvals, &spec, &mesh);
    assert_eq!(swc.failed, 0);
    let tol = 1e-6;
    for pair in swc.points.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let max_a = a.modes.iter().cloned().fold(f64::NAN, f64::max);
        let max_b = b.modes.iter().cloned().fold(f64::NAN, f64::max);
        let min_a = a.modes.iter().cloned().fold(f64::NAN, f64::min);
        let min_b = b.modes.iter().cloned().fold(f64::NAN, f64::min);
        assert!(
            max_b <= max_a + tol && min_b <= min_a + tol,
            "modes moved dirtier from c = {} to {}: {:?} -> {:?}",
            a.value,
            b.value,
            a.modes,
            b.modes
        );
    }

    // Discount sweep: attractors move toward eutrophic states as rho grows.
    let base_rho = LakeParams { c: 0.8, ..base };
    let rvals: Vec<f64> = (0..10).map(|k| 0.02 + 0.08 * k as f64 / 9.0).collect();
    let swr = bifurcation_sweep(&base_rho, SweepParam::Rho, &rvals, &spec, &mesh);
    assert_eq!(swr.failed, 0);
    for pair in swr.points.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let max_a = a.modes.iter().cloned().fold(f64::NAN, f64::max);
        let max_b = b.modes.iter().cloned().fold(f64::NAN, f64::max);
        let min_a = a.modes.iter().cloned().fold(f64::NAN, f64::min);
        let min_b = b.modes.iter().cloned().fold(f64::NAN, f64::min);
        assert!(
            max_b >= max_a - tol && min_b >= min_a - tol,
            "attractors moved cleaner from rho = {} to {}: {:?} -> {:?}",
            a.value,
            b.value,
            a.modes,
            b.modes
        );
    }

    let secs = t0.elapsed().as_secs_f64();
    assert!(secs < 300.0, "sweep suite took {secs:.1} s");
    report(
        "criterion 7 (bifurcation reproduction)",
        format!("36 sweep points in {secs:.1} s; counts and monotone trends as published"),
    );
}

#[test]
fn criterion_08_monte_carlo_cross_validation() {
    let p = params(0.65, 0.5, 0.03, 0.1);
    let s = solve_default(&p, 4000);
    let cfg = SimConfig {
        dt: 1e-3,
        horizon: 1.0,
        seed: 7,
        n_paths: 10_000,
    };
    let mc = estimate_value_mc(&s, &cfg, 1.0, None).unwrap();
    let v1 = s.value_at(1.0);
    let gap = (mc.estimate - v1).abs();
    let band = 3.0 * mc.stderr + mc.bias_bound;
    assert!(gap <= band, "|MC - V(1)| = {gap} > {band}");

    let bench = feedback_benchmark_payoff(&s, &cfg, 1.0, None).unwrap();
    assert!(
        bench.estimate <= v1 + 3.0 * bench.stderr,
        "benchmark payoff {} above V(1) = {v1} + 3 x {}",
        bench.estimate,
        bench.stderr
    );
    report(
        "criterion 8 (Monte Carlo cross-validation)",
        format!(
            "V(1) = {v1:.4}; MC {:.4} +- {:.4} (bias {:.1e}), gap {gap:.4} <= {band:.4}; benchmark {:.4} below",
            mc.estimate, mc.stderr, mc.bias_bound, bench.estimate
        ),
    );
}

#[test]
fn criterion_09_bounded_control_sandwich() {
    let p = params(0.65, 0.5, 0.03, 0.1);
    let s = solve_default(&p, 4000);
    let cfg = SimConfig {
        dt: 1e-3,
        horizon: 1.0,
        seed: 7,
        n_paths: 10_000,
    };
    let u_peak = s.policy().iter().cloned().fold(0.0, f64::max);
    let n_cap = 0.5 * u_peak;
    let est = truncated_policy_value(&s, n_cap, &cfg, 1.0, None).unwrap();
    let gap = s.value_at(1.0) - est.estimate;
    let bound = (p.rho() + p.b()).powi(2) / (4.0 * p.rho() * p.c() * n_cap * n_cap);
    assert!(
        gap >= -3.0 * est.stderr,
        "V - V_N = {gap} below -3 stderr = {}",
        -3.0 * est.stderr
    );
    assert!(
        gap <= bound + 3.0 * est.stderr + est.bias_bound,
        "V - V_N = {gap} above {bound} + noise"
    );
    report(
        "criterion 9 (bounded-control sandwich)",
        format!("N = {n_cap:.3}: 0 - 3se <= V - V_N = {gap:.4} <= {bound:.3} + 3se + bias"),
    );
}

#[test]
fn criterion_10_occupation_measure_consistency() {
    let p = params(0.65, 0.512, 0.03, 0.1);
    let s = solve_default(&p, 4000);
    let d = invariant_density(&s, &MeshSpec::default()).unwrap();
    let cfg = SimConfig {
        dt: 1e-3,
        horizon: 1e5,
        seed: 7,
        n_paths: 1,
    };
    let every = 100;
    let path = simulate_path_sampled(&s, &cfg, 1.0, every).unwrap();
    let burn = (1e3 / (cfg.dt * every as f64)) as usize;
    let mut xs: Vec<f64> = path.states[burn..].to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let ks = sde::ks_statistic_sorted(&xs, |x| d.cdf_at(x));
    assert!(ks < 0.05, "occupation KS distance {ks}");
    report(
        "criterion 10 (occupation-measure consistency)",
        format!(
            "{} samples after burn-in; KS distance {ks:.4} < 0.05",
            xs.len()
        ),
    );
}

#[test]
fn criterion_11_escape_time_exponential_law() {
    let p = params(0.65, 0.5, 0.03, 0.08);
    let s = solve_default(&p, 4000);
    let d = invariant_density(&s, &MeshSpec::default()).unwrap();
    let cfg = SimConfig {
        dt: 1e-3,
        horizon: 1e4, // 1e7 steps, the default censoring horizon
        seed: 7,
        n_paths: 1,
    };

    // Smoke variant: 100 samples in under 3 minutes, KS < 0.15.
    let t0 = Instant::now();
    let smoke = sde::escape_times(&s, &d, &cfg, 100).unwrap();
    let smoke_secs = t0.elapsed().as_secs_f64();
    assert!(smoke_secs < 180.0, "smoke run took {smoke_secs:.1} s");
    assert!(smoke.ks_statistic < 0.15, "smoke KS {}", smoke.ks_statistic);

    // Full run: 1000 samples, KS < 0.06, no censoring, under 30 minutes.
    let t0 = Instant::now();
    let esc = sde::escape_times(&s, &d, &cfg, 1000).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    assert!(secs < 1800.0, "full run took {secs:.1} s");
    assert_eq!(esc.censored, 0, "censored samples at the default horizon");
    assert!(esc.ks_statistic < 0.06, "KS distance {}", esc.ks_statistic);
    report(
        "criterion 11 (escape-time exponential law)",
        format!(
            "mean {:.1}, KS {:.4} (1000 samples, {secs:.0} s); smoke KS {:.4} ({smoke_secs:.0} s)",
            esc.mean, esc.ks_statistic, smoke.ks_statistic
        ),
    );
}

#[test]
fn criterion_12_small_noise_stability() {
    // Common grid valid at sigma = 0 (r(x) <= b x holds for b = 0.65).
    let base = params(0.65, 0.5, 0.03, 0.0);
    let l = default_domain_length(&base);
    let solve_sigma = |sigma: f64| {
        let p = params(0.65, 0.5, 0.03, sigma);
        let g = build_grid(&p, l, 4000).unwrap();
        solve(&g, &p, 1e-10, 200).unwrap()
    };
    let dist = |a: &ValueSolution, b: &ValueSolution, upto: usize| {
        (0..=upto)
            .map(|i| (a.v()[i] - b.v()[i]).abs())
            .fold(0.0, f64::max)
    };
    let (s2, s1, s05, s025) = (
        solve_sigma(0.2),
        solve_sigma(0.1),
        solve_sigma(0.05),
        solve_sigma(0.025),
    );
    let coarse_pair = dist(&s2, &s1, 4000);
    let fine_pair = dist(&s05, &s025, 4000);
    assert!(
        fine_pair < coarse_pair,
        "|V_0.05 - V_0.025| = {fine_pair} not below |V_0.2 - V_0.1| = {coarse_pair}"
    );
    // Away from the right-boundary layer the convergence is locally
    // uniform and the distances scale with the sigma^2 gaps.
    let coarse_int = dist(&s2, &s1, 3800);
    let fine_int = dist(&s05, &s025, 3800);
    assert!(
        10.0 * fine_int < coarse_int,
        "interior pair distances do not contract: {fine_int} vs {coarse_int}"
    );
    report(
        "criterion 12 (sigma -> 0 stability)",
        format!(
            "full grid {fine_pair:.4} < {coarse_pair:.4}; interior {fine_int:.4} vs {coarse_int:.4}"
        ),
    );
}

#[test]
fn criterion_13_recycling_rate_robustness() {
    // Steepening tanh rates approach the step-rate solution pointwise.
    let l = 8.0;
    let n = 4000;
    let solve_rate = |rate: RecyclingRate| {
        let p = validate_params(LakeParams {
            b: 0.65,
            c: 0.5,
            rho: 0.03,
            sigma: 0.1,
            rate,
        })
        .unwrap();
        let g = build_grid(&p, l, n).unwrap();
        solve(&g, &p, 1e-10, 200).unwrap()
    };
    let step = solve_rate(RecyclingRate::Step { threshold: 3.0 });
    let mut gaps = Vec::new();
    for slope in [1.0, 2.0, 4.0, 8.0] {
        let s = solve_rate(RecyclingRate::TanhShifted {
            center: 3.0,
            slope,
            scale: 0.5,
        });
        let gap = s
            .v()
            .iter()
            .zip(step.v())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        gaps.push((slope, gap));
    }
    let first = gaps[0].1;
    let last = gaps[gaps.len() - 1].1;
    assert!(
        last < first,
        "no convergence toward the step solution: gaps {gaps:?}"
    );
    report(
        "criterion 13 (recycling-rate robustness)",
        format!("max |V_tanh - V_step| by steepness: {gaps:?}"),
    );
}
