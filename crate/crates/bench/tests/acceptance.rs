//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use lazy_newton::cubic::cubic_step_from_gradient;
use lazy_newton::linalg::{HessianSnapshot, NormContext};
use lazy_newton::methods::{run, Method, SolverConfig};
use lazy_newton::oracles::{
    finite_diff_hessian, LogSumExpProblem, Objective, ProblemOracle, QuadraticProblem, Ridge,
    ScalarLoss, SeparableNorm, SeparableProblem,
};
use lazy_newton::trace::{stationarity_report, IterationRecord, Trace};
use lazy_newton_bench::{run_experiment, theoretical_optimum, ExperimentSpec, MValue};

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn fail(detail: impl Into<String>) -> Outcome {
    outcome(false, detail)
}

/// Log-sum-exp instance shared by criteria 2, 3, 5 and 6.
fn small_logsumexp() -> Arc<LogSumExpProblem> {
    Arc::new(LogSumExpProblem::generate(20, 10, 0.2, None, 1))
}

fn solve(
    problem: Arc<dyn Objective>,
    cfg: &SolverConfig,
    x0: &DVector<f64>,
) -> Result<Trace, String> {
    let ctx = NormContext::new(problem.norm_matrix()).map_err(|e| e.to_string())?;
    let oracle = ProblemOracle::new(problem);
    run(&oracle, &ctx, cfg, x0).map_err(|e| e.to_string())
}

fn random_orthogonal(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    g.qr().q()
}

fn model_value(g: &[f64], h: &DMatrix<f64>, b: &DMatrix<f64>, m: f64, s: &[f64]) -> f64 {
    let d = g.len();
    let mut lin = 0.0;
    let mut quad = 0.0;
    let mut bnorm2 = 0.0;
    for i in 0..d {
        lin += g[i] * s[i];
        for j in 0..d {
            quad += s[i] * h[(i, j)] * s[j];
            bnorm2 += s[i] * b[(i, j)] * s[j];
        }
    }
    lin + 0.5 * quad + m / 6.0 * bnorm2.max(0.0).powf(1.5)
}

fn grid_minimum(g: &[f64], h: &DMatrix<f64>, b: &DMatrix<f64>, m: f64) -> f64 {
    const POINTS: usize = 201;
    let d = g.len();
    let axis: Vec<f64> = (0..POINTS)
        .map(|i| -3.0 + 6.0 * i as f64 / (POINTS - 1) as f64)
        .collect();
    let total = POINTS.pow(d as u32);
    let mut best = f64::INFINITY;
    let mut s = vec![0.0; d];
    for idx in 0..total {
        let mut rest = idx;
        for c in s.iter_mut() {
            *c = axis[rest % POINTS];
            rest /= POINTS;
        }
        best = best.min(model_value(g, h, b, m, &s));
    }
    best
}

/// Cubic subproblem steps against a dense grid search.
fn criterion_1() -> Outcome {
    let started = Instant::now();
    let regs = [0.5, 2.0, 10.0];
    let results: Vec<Result<(f64, f64), String>> = (0..100u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + i);
            let d = 1 + (i % 3) as usize;
            let m = regs[((i / 3) % 3) as usize];
            let q = random_orthogonal(&mut rng, d);
            let eig = DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0));
            let h = &q * DMatrix::from_diagonal(&eig) * q.transpose();
            let h = (&h + h.transpose()) * 0.5;
            let g = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
            let b = if i % 2 == 0 {
                DMatrix::identity(d, d)
            } else {
                let f = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
                f.transpose() * f + DMatrix::identity(d, d) * 0.2
            };
            let ctx = NormContext::new(b.clone()).map_err(|e| e.to_string())?;
            let x = DVector::zeros(d);
            let snap =
                HessianSnapshot::factorize(&ctx, &h, x.clone()).map_err(|e| e.to_string())?;
            let res = cubic_step_from_gradient(&snap, &x, &g, m)
                .map_err(|e| format!("instance {i}: {e}"))?;
            let s = res.step;
            let value = model_value(g.as_slice(), &h, &b, m, s.as_slice());
            let grid = grid_minimum(g.as_slice(), &h, &b, m);
            let r = ctx.primal_norm(&s).map_err(|e| e.to_string())?;
            let residual = &g + &h * &s + &b * &s * (0.5 * m * r);
            let residual = ctx.dual_norm(&residual).map_err(|e| e.to_string())?;
            Ok((value - grid, residual))
        })
        .collect();
    let elapsed = started.elapsed();
    let mut worst_gap = f64::NEG_INFINITY;
    let mut worst_res: f64 = 0.0;
    for r in results {
        match r {
            Ok((gap, res)) => {
                worst_gap = worst_gap.max(gap);
                worst_res = worst_res.max(res);
            }
            Err(e) => return fail(e),
        }
    }
    outcome(
        worst_gap <= 1e-3 && worst_res <= 1e-8 && elapsed < Duration::from_secs(30),
        format!(
            "max(model - grid) = {worst_gap:.3e}, max residual = {worst_res:.3e}, {:.2} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn by_k(trace: &Trace) -> Vec<&IterationRecord> {
    let recs: Vec<&IterationRecord> = trace.accepted().collect();
    debug_assert!(recs.iter().enumerate().all(|(i, r)| r.k == i));
    recs
}

/// Per-phase decrease of lazy cubic steps with M = 6mL.
fn criterion_2() -> Outcome {
    let problem = small_logsumexp();
    let l = problem.lipschitz();
    let mut phases = 0;
    let mut worst = f64::INFINITY;
    for m in [1, 2, 5, 10] {
        let reg = 6.0 * m as f64 * l;
        let cfg = SolverConfig::new(Method::Cubic, m)
            .with_reg(reg)
            .with_record_xi(true)
            .with_max_iters(100_000);
        let trace = match solve(problem.clone(), &cfg, &DVector::zeros(10)) {
            Ok(t) => t,
            Err(e) => return fail(format!("m = {m}: {e}")),
        };
        if trace.final_grad_norm() > 1e-9 {
            return fail(format!(
                "m = {m}: stopped at {:.3e}",
                trace.final_grad_norm()
            ));
        }
        let recs = by_k(&trace);
        for p in trace.phases.iter().filter(|p| p.completed) {
            let s = p.start_k;
            let bound: f64 = recs[s + 1..=s + m]
                .iter()
                .map(|r| {
                    let xi = r.xi.expect("xi recorded at every iterate");
                    f64::max(
                        xi.powi(3) / (648.0 * reg * reg),
                        r.grad_dual_norm.powf(1.5) / (72.0 * (2.0 * reg).sqrt()),
                    )
                })
                .sum();
            let decrease = recs[s].f - recs[s + m].f;
            worst = worst.min(decrease - bound);
            phases += 1;
        }
    }
    outcome(
        worst >= -1e-12,
        format!("{phases} phases, min(decrease - bound) = {worst:.3e}"),
    )
}

/// Per-phase decrease of gradient-regularized steps with M = 3mL.
fn criterion_3() -> Outcome {
    let problem = small_logsumexp();
    let l = problem.lipschitz();
    let mut phases = 0;
    let mut worst = f64::INFINITY;
    let mut worst_ratio: f64 = 0.0;
    for m in [1, 2, 5, 10] {
        let reg = 3.0 * m as f64 * l;
        let cfg = SolverConfig::new(Method::GradReg, m)
            .with_reg(reg)
            .with_max_iters(100_000);
        let x0 = DVector::zeros(10);
        let trace = match solve(problem.clone(), &cfg, &x0) {
            Ok(t) => t,
            Err(e) => return fail(format!("m = {m}: {e}")),
        };
        if trace.final_grad_norm() > 1e-9 {
            return fail(format!(
                "m = {m}: stopped at {:.3e}",
                trace.final_grad_norm()
            ));
        }
        let recs = by_k(&trace);
        for p in trace.phases.iter().filter(|p| p.completed) {
            let s = p.start_k;
            let bound: f64 = (s + 1..=s + m)
                .map(|j| recs[j].grad_dual_norm.powi(2) / recs[j - 1].grad_dual_norm.sqrt())
                .sum::<f64>()
                * 9.0
                / (244.0 * reg.sqrt());
            worst = worst.min(recs[s].f - recs[s + m].f - bound);
            phases += 1;
        }
        for r in recs.iter().skip(1) {
            let lambda = r.lambda.expect("gradreg records lambda");
            if lambda > 0.0 {
                worst_ratio = worst_ratio.max(reg * r.step_r / lambda);
            }
        }
    }
    outcome(
        worst >= -1e-12 && worst_ratio <= 1.0 + 1e-10,
        format!(
            "{phases} phases, min(decrease - bound) = {worst:.3e}, max M·r/λ = {worst_ratio:.6}"
        ),
    )
}

/// Total work of the m sweep on the default instance.
fn criterion_4() -> Outcome {
    let started = Instant::now();
    let spec = ExperimentSpec {
        methods: vec![Method::GradReg],
        m_values: vec![MValue::Int(1), MValue::Int(5), MValue::Int(20)],
        max_iters: 1_000_000,
        ..ExperimentSpec::default()
    };
    let report = match run_experiment(&spec) {
        Ok(r) => r,
        Err(e) => return fail(e.to_string()),
    };
    let elapsed = started.elapsed();
    if let Some(run) = report.runs.iter().find(|r| r.result.is_err()) {
        return fail(format!("m = {} errored", run.m));
    }
    let w = |m| {
        report
            .row(Method::GradReg, m)
            .map(|r| (r.work_units, r.status.clone()))
    };
    let (Some((w1, s1)), Some((w5, _)), Some((w20, s20))) = (w(1), w(5), w(20)) else {
        return fail("missing summary rows");
    };
    let curve_min = report
        .summary
        .iter()
        .min_by(|a, b| a.theoretical_work.total_cmp(&b.theoretical_work))
        .map(|r| r.m);
    let converged = s1 == "converged" && s20 == "converged";
    let d = spec.d;
    outcome(
        converged
            && w20 < w1
            && curve_min == Some(d)
            && theoretical_optimum(d, 10 * d) == d
            && elapsed < Duration::from_secs(60),
        format!(
            "work units m=1: {w1}, m=5: {w5}, m=20: {w20}; curve minimized at m = {}; {:.2} s",
            curve_min.unwrap_or(0),
            elapsed.as_secs_f64()
        ),
    )
}

/// Gradient norms at least halve once inside the local region.
fn criterion_5() -> Outcome {
    let inner: Arc<dyn Objective> = small_logsumexp();
    let problem = Arc::new(Ridge::new(inner, 1.0));
    let info = problem.info();
    let (Some(l), Some(mu_sc)) = (info.lipschitz, info.strong_convexity) else {
        return fail("ridge problem lacks constants");
    };
    let mut checked = 0;
    let mut worst_ratio: f64 = 0.0;
    for m in [1, 3] {
        let reg = 3.0 * m as f64 * l;
        let region = mu_sc * mu_sc / (16.0 * (3.0 * l + 4.0 * reg));
        let cfg = SolverConfig::new(Method::GradReg, m)
            .with_reg(reg)
            .with_eps(1e-13)
            .with_max_iters(100_000);
        let trace = match solve(problem.clone(), &cfg, &DVector::zeros(10)) {
            Ok(t) => t,
            Err(e) => return fail(format!("m = {m}: {e}")),
        };
        let norms = trace.grad_norms();
        let Some(entry) = norms.iter().position(|&g| g <= region) else {
            return fail(format!("m = {m}: never entered region {region:.3e}"));
        };
        for k in entry..norms.len() - 1 {
            if norms[k] < 1e-13 {
                break;
            }
            worst_ratio = worst_ratio.max(norms[k + 1] / norms[k]);
            checked += 1;
        }
    }
    outcome(
        checked > 0 && worst_ratio <= 0.5,
        format!("{checked} steps checked, max ratio = {worst_ratio:.3e}"),
    )
}

/// Adaptive cubic regularization stays bounded and obeys the call count identity.
fn criterion_6() -> Outcome {
    let problem = small_logsumexp();
    let l = problem.lipschitz();
    let mut details = Vec::new();
    let mut ok = true;
    for m in [1, 2, 5, 10] {
        for m0 in [1e-3, 1.0, 1e3] {
            let cfg = SolverConfig::new(Method::AdaptiveCubic, m)
                .with_reg(m0)
                .with_max_iters(100_000);
            let trace = match solve(problem.clone(), &cfg, &DVector::zeros(10)) {
                Ok(t) => t,
                Err(e) => return fail(format!("m = {m}, M0 = {m0}: {e}")),
            };
            let cap = f64::max(2.0 * m0, 512.0 * 243.0 * m as f64 * l);
            let max_trial = trace
                .phases
                .iter()
                .flat_map(|p| p.trials.iter().copied())
                .fold(m0, f64::max);
            let t = trace.phases.len();
            let m_final = trace.phases.last().map_or(m0, |p| p.carry);
            let expected = (2.0 * t as f64 + (m_final / m0).log2()) * m as f64;
            let calls = (trace.counts.n_grad - 1) as f64;
            let identity = (calls - expected).abs() < 1e-6;
            let one_hessian = trace.counts.n_hess == t;
            let converged = trace.final_grad_norm() <= 1e-9;
            if !(max_trial <= cap && identity && one_hessian && converged) {
                ok = false;
                details.push(format!(
                    "m={m} M0={m0}: max M {max_trial:.3e} (cap {cap:.3e}), calls {calls} vs {expected}, hess {} vs t {t}, |g| {:.2e}",
                    trace.counts.n_hess,
                    trace.final_grad_norm()
                ));
            }
        }
    }
    if ok {
        details.push("12 runs within cap, identity exact, one Hessian per phase".into());
    }
    outcome(ok, details.join("; "))
}

/// Sampled Lipschitz constant of the Hessian in the `B` geometry.
fn sampled_lipschitz(
    problem: &dyn Objective,
    ctx: &NormContext,
    rng: &mut ChaCha8Rng,
    radius: f64,
) -> f64 {
    let d = problem.dim();
    let mut best: f64 = 0.0;
    for _ in 0..2000 {
        let x = DVector::from_fn(d, |_, _| rng.random_range(-radius..radius));
        let scale = 10f64.powf(rng.random_range(-4.0..0.0));
        let dir = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
        let y = &x + dir * scale;
        let diff = problem.hessian(&x) - problem.hessian(&y);
        let spectral = ctx
            .relative_eigenvalues(&diff)
            .expect("symmetric difference")
            .into_iter()
            .fold(0.0f64, |a, v| a.max(v.abs()));
        let dist = ctx.primal_norm(&(x - y)).expect("dimension");
        if dist > 0.0 {
            best = best.max(spectral / dist);
        }
    }
    best
}

/// Second-order stationarity of lazy cubic steps on a nonconvex problem.
fn criterion_7() -> Outcome {
    let problem = Arc::new(SeparableProblem::generate(
        10,
        5,
        ScalarLoss::DoubleWell,
        SeparableNorm::Identity,
        3,
    ));
    let ctx = NormContext::new(problem.norm_matrix()).expect("SPD norm");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let l_sampled = sampled_lipschitz(problem.as_ref(), &ctx, &mut rng, 2.0);
    let x0 = DVector::from_fn(5, |_, _| rng.random_range(-0.1..0.1));
    let mut ok = true;
    let mut details = vec![format!("sampled L = {l_sampled:.4}")];
    for m in [1, 5] {
        // the quartic loss has no global Hessian Lipschitz constant
        let cfg = SolverConfig::new(Method::Cubic, m)
            .with_lipschitz(l_sampled)
            .with_eps(1e-6)
            .with_record_xi(true)
            .with_max_iters(100_000);
        let trace = match solve(problem.clone(), &cfg, &x0) {
            Ok(t) => t,
            Err(e) => return fail(format!("m = {m}: {e}")),
        };
        match stationarity_report(&trace, m as f64 * l_sampled) {
            Ok(rep) => {
                ok &= rep.satisfied && trace.final_grad_norm() <= 1e-6;
                details.push(format!(
                    "m={m}: min xi = {:.3e} <= {:.3e} after {} iterations",
                    rep.min_xi,
                    rep.bound,
                    trace.iterations()
                ));
            }
            Err(e) => return fail(format!("m = {m}: {e}")),
        }
    }
    outcome(ok, details.join(", "))
}

fn central_gradient(p: &dyn Objective, x: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| {
        let h = 1e-6 * (1.0 + x[i].abs());
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        (p.value(&xp) - p.value(&xm)) / (2.0 * h)
    })
}

fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-12)
}

/// Analytic derivatives of every built-in problem against finite differences.
fn criterion_8() -> Outcome {
    // Points are drawn from [-s, s]^d. Log-sum-exp uses s = mu: much farther
    // out the softmax saturates, the Hessian drops below the rounding noise
    // of the gradient, and no finite-difference reference is accurate.
    let mut problems: Vec<(String, Arc<dyn Objective>, f64)> = vec![
        (
            "logsumexp(mu=0.05)".into(),
            Arc::new(LogSumExpProblem::generate(50, 20, 0.05, None, 42)),
            0.05,
        ),
        ("logsumexp(mu=0.2)".into(), small_logsumexp(), 0.2),
        (
            "quadratic".into(),
            Arc::new(QuadraticProblem::generate(6, 2)),
            1.0,
        ),
        (
            "ridge".into(),
            Arc::new(Ridge::new(small_logsumexp(), 1.0)),
            0.2,
        ),
    ];
    for loss in [
        ScalarLoss::Square,
        ScalarLoss::DoubleWell,
        ScalarLoss::Logistic,
    ] {
        for norm in [SeparableNorm::Identity, SeparableNorm::Gram { delta: 1e-3 }] {
            problems.push((
                format!("separable({}, {norm:?})", loss.name()),
                Arc::new(SeparableProblem::generate(12, 5, loss, norm, 9)),
                1.0,
            ));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst_g: f64 = 0.0;
    let mut worst_h: f64 = 0.0;
    for (name, p, scale) in &problems {
        let d = p.dim();
        for _ in 0..10 {
            let x = DVector::from_fn(d, |_, _| scale * rng.random_range(-1.0..1.0));
            let g = p.gradient(&x);
            let g_fd = central_gradient(p.as_ref(), &x);
            let eg = (&g - &g_fd).norm() / g.norm().max(1e-12);
            let oracle = ProblemOracle::new(p.clone());
            let h_fd = finite_diff_hessian(&oracle, &x, lazy_newton::oracles::default_fd_step(&x));
            let counts = oracle.counts();
            if counts.n_grad != d + 1 || counts.n_hess != 0 {
                return fail(format!(
                    "{name}: finite differences used {} gradients",
                    counts.n_grad
                ));
            }
            let eh = rel_err(&h_fd, &p.hessian(&x));
            worst_g = worst_g.max(eg);
            worst_h = worst_h.max(eh);
            if eg > 1e-5 || eh > 1e-4 {
                return fail(format!(
                    "{name}: gradient err {eg:.2e}, Hessian err {eh:.2e}"
                ));
            }
        }
    }
    outcome(
        true,
        format!(
            "{} problems x 10 points, max gradient err {worst_g:.2e}, max Hessian err {worst_h:.2e}",
            problems.len()
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("1 subproblem exactness", criterion_1),
        ("2 cubic phase progress", criterion_2),
        ("3 gradreg phase progress", criterion_3),
        ("4 work-model optimum", criterion_4),
        ("5 local superlinear envelope", criterion_5),
        ("6 adaptive bounds", criterion_6),
        ("7 second-order stationarity", criterion_7),
        ("8 oracle consistency", criterion_8),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let res = check();
        let tag = if res.passed { "PASS" } else { "FAIL" };
        println!("criterion {name}: {tag} ({})", res.detail);
        failed += usize::from(!res.passed);
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
