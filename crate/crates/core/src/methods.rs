//! Outer loops with lazy Hessian updates.
//!
//! All four methods share the same schedule: the Hessian is evaluated and
//! factorized at the snapshot point `x_{π(k)}`, `π(k) = k − k mod m`, and
//! reused for the `m` steps of that phase while gradients stay fresh.
//!
//! * [`Method::Cubic`]: lazy cubic steps with a fixed `M` (default `6mL`).
//! * [`Method::GradReg`]: `x⁺ = x − (∇²f(z) + λB)⁻¹∇f(x)` with
//!   `λ = √(M‖∇f(x)‖*)` and fixed `M` (default `3mL`); convex problems only.
//! * [`Method::AdaptiveCubic`] / [`Method::AdaptiveGradReg`]: per phase,
//!   double `M` and redo the `m` steps from the snapshot point until a
//!   sufficient-decrease test passes, then quarter `M` for the next phase.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DVector;

use crate::cubic::cubic_step_from_gradient;
use crate::error::{Error, Result};
use crate::linalg::{xi_of, HessianSnapshot, NormContext};
use crate::oracles::ProblemOracle;
use crate::trace::{IterationRecord, PhaseRecord, Status, Trace};

/// Adaptive regularization above this value aborts the run.
pub const ADAPTIVE_CAP: f64 = 1e30;
/// Snapshot eigenvalues below this trigger a nonconvexity warning in
/// gradient-regularized runs.
pub const NONCONVEX_TOL: f64 = -1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Cubic,
    GradReg,
    AdaptiveCubic,
    AdaptiveGradReg,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Cubic,
        Method::GradReg,
        Method::AdaptiveCubic,
        Method::AdaptiveGradReg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Cubic => "cubic",
            Self::GradReg => "gradreg",
            Self::AdaptiveCubic => "adaptive-cubic",
            Self::AdaptiveGradReg => "adaptive-gradreg",
        }
    }

    pub fn is_adaptive(self) -> bool {
        matches!(self, Self::AdaptiveCubic | Self::AdaptiveGradReg)
    }

    pub fn is_cubic(self) -> bool {
        matches!(self, Self::Cubic | Self::AdaptiveCubic)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method `{s}`")))
    }
}

/// Index of the snapshot used at iteration `k`: the largest multiple of `m`
/// not exceeding `k`.
pub fn pi(k: usize, m: usize) -> usize {
    assert!(m >= 1, "phase length must be at least 1");
    k - k % m
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub method: Method,
    /// Phase length.
    pub m: usize,
    /// `M` for fixed methods, `M₀` for adaptive ones. `None` selects the
    /// default rule (`6mL`, `3mL`, or `M₀ = 1`).
    pub reg: Option<f64>,
    /// Target dual gradient norm.
    pub eps: f64,
    pub max_iters: usize,
    /// Overrides the oracle's Lipschitz constant.
    pub lipschitz: Option<f64>,
    /// Evaluate `ξ` at every iterate through uncounted Hessian calls.
    pub record_xi: bool,
    /// Run gradient-regularized methods on problems not flagged convex.
    pub allow_nonconvex: bool,
}

impl SolverConfig {
    pub fn new(method: Method, m: usize) -> Self {
        Self {
            method,
            m,
            reg: None,
            eps: 1e-9,
            max_iters: 10_000,
            lipschitz: None,
            record_xi: false,
            allow_nonconvex: false,
        }
    }

    pub fn with_reg(mut self, reg: f64) -> Self {
        self.reg = Some(reg);
        self
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn with_lipschitz(mut self, l: f64) -> Self {
        self.lipschitz = Some(l);
        self
    }

    pub fn with_record_xi(mut self, on: bool) -> Self {
        self.record_xi = on;
        self
    }

    pub fn with_allow_nonconvex(mut self, on: bool) -> Self {
        self.allow_nonconvex = on;
        self
    }

    /// The regularization value the run will start from.
    pub fn resolve_reg(&self, oracle_lipschitz: Option<f64>) -> Result<f64> {
        if self.m == 0 {
            return Err(Error::InvalidConfig(
                "phase length m must be at least 1".into(),
            ));
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::InvalidConfig("eps must be positive".into()));
        }
        let lipschitz = self.lipschitz.or(oracle_lipschitz);
        let reg = match (self.method, self.reg) {
            (_, Some(r)) => r,
            (Method::Cubic, None) => {
                6.0 * self.m as f64 * lipschitz.ok_or(Error::NoLipschitzConstant)?
            }
            (Method::GradReg, None) => {
                3.0 * self.m as f64 * lipschitz.ok_or(Error::NoLipschitzConstant)?
            }
            (Method::AdaptiveCubic | Method::AdaptiveGradReg, None) => 1.0,
        };
        let valid = match self.method {
            Method::GradReg => reg >= 0.0,
            _ => reg > 0.0,
        };
        if !valid || !reg.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "regularization {reg} is not valid for {}",
                self.method
            )));
        }
        Ok(reg)
    }
}

/// Runs the configured method from `x0`.
pub fn run(
    oracle: &ProblemOracle,
    ctx: &NormContext,
    cfg: &SolverConfig,
    x0: &DVector<f64>,
) -> Result<Trace> {
    if !cfg.method.is_cubic() && !cfg.allow_nonconvex && !oracle.info().convex {
        return Err(Error::NotConvex);
    }
    let reg = cfg.resolve_reg(oracle.info().lipschitz)?;
    for len in [ctx.dim(), x0.len()] {
        if len != oracle.dim() {
            return Err(Error::DimensionMismatch {
                expected: oracle.dim(),
                actual: len,
            });
        }
    }
    let mut state = MethodState::start(oracle, ctx, cfg, reg, x0.clone());
    let status = if cfg.method.is_adaptive() {
        state.run_adaptive()?
    } else {
        state.run_fixed()?
    };
    Ok(state.finish(status))
}

/// Algorithm with fixed `M` and lazy cubic steps.
pub fn run_cubic(
    oracle: &ProblemOracle,
    ctx: &NormContext,
    cfg: &SolverConfig,
    x0: &DVector<f64>,
) -> Result<Trace> {
    run(
        oracle,
        ctx,
        &SolverConfig {
            method: Method::Cubic,
            ..cfg.clone()
        },
        x0,
    )
}

pub fn run_gradreg(
    oracle: &ProblemOracle,
    ctx: &NormContext,
    cfg: &SolverConfig,
    x0: &DVector<f64>,
) -> Result<Trace> {
    run(
        oracle,
        ctx,
        &SolverConfig {
            method: Method::GradReg,
            ..cfg.clone()
        },
        x0,
    )
}

pub fn run_adaptive_cubic(
    oracle: &ProblemOracle,
    ctx: &NormContext,
    cfg: &SolverConfig,
    x0: &DVector<f64>,
) -> Result<Trace> {
    run(
        oracle,
        ctx,
        &SolverConfig {
            method: Method::AdaptiveCubic,
            ..cfg.clone()
        },
        x0,
    )
}

pub fn run_adaptive_gradreg(
    oracle: &ProblemOracle,
    ctx: &NormContext,
    cfg: &SolverConfig,
    x0: &DVector<f64>,
) -> Result<Trace> {
    run(
        oracle,
        ctx,
        &SolverConfig {
            method: Method::AdaptiveGradReg,
            ..cfg.clone()
        },
        x0,
    )
}

/// Current point with its cached function value and gradient.
#[derive(Clone)]
struct Point {
    x: DVector<f64>,
    f: f64,
    g: DVector<f64>,
    gnorm: f64,
}

struct Step {
    delta: DVector<f64>,
    r: f64,
    lambda: Option<f64>,
}

struct MethodState<'a> {
    oracle: &'a ProblemOracle,
    ctx: &'a NormContext,
    cfg: &'a SolverConfig,
    reg: f64,
    k: usize,
    current: Point,
    snapshot: Option<HessianSnapshot>,
    records: Vec<IterationRecord>,
    phases: Vec<PhaseRecord>,
    warnings: Vec<String>,
    started: Instant,
}

impl<'a> MethodState<'a> {
    fn start(
        oracle: &'a ProblemOracle,
        ctx: &'a NormContext,
        cfg: &'a SolverConfig,
        reg: f64,
        x0: DVector<f64>,
    ) -> Self {
        let started = Instant::now();
        let f = oracle.value(&x0);
        let g = oracle.gradient(&x0);
        let gnorm = ctx.dual_norm(&g).expect("dimension checked");
        let mut state = Self {
            oracle,
            ctx,
            cfg,
            reg,
            k: 0,
            current: Point { x: x0, f, g, gnorm },
            snapshot: None,
            records: Vec::new(),
            phases: Vec::new(),
            warnings: Vec::new(),
            started,
        };
        let first = state.current.clone();
        let rec = state.record(0, 0, false, reg, &first, 0.0, None);
        state.records.push(rec);
        state
    }

    #[allow(clippy::too_many_arguments)]
    fn record(
        &self,
        k: usize,
        phase: usize,
        retry: bool,
        m_used: f64,
        p: &Point,
        step_r: f64,
        lambda: Option<f64>,
    ) -> IterationRecord {
        let xi = if self.cfg.record_xi {
            let h = self.oracle.problem().hessian(&p.x);
            xi_of(self.ctx, &h).ok()
        } else {
            None
        };
        let counts = self.oracle.counts();
        IterationRecord {
            k,
            phase,
            retry,
            m_used,
            f: p.f,
            grad_dual_norm: p.gnorm,
            xi,
            step_r,
            lambda,
            n_f: counts.n_f,
            n_grad: counts.n_grad,
            n_hess: counts.n_hess,
            work_units: counts.work_units(self.oracle.dim()),
            wall_ns: self.started.elapsed().as_nanos() as u64,
        }
    }

    /// Evaluates and factorizes the Hessian at the current point.
    fn refresh_snapshot(&mut self) -> Result<()> {
        let h = self.oracle.hessian(&self.current.x);
        let snap = HessianSnapshot::factorize(self.ctx, &h, self.current.x.clone())?;
        let min_eig = snap.min_eigval();
        if !self.cfg.method.is_cubic() && min_eig < NONCONVEX_TOL {
            self.warnings.push(format!(
                "nonconvex snapshot at k = {}: smallest eigenvalue {min_eig:e}",
                self.k
            ));
        }
        if let Some(last) = self.records.iter_mut().rev().find(|r| !r.retry) {
            last.xi.get_or_insert(snap.xi());
        }
        self.phases.push(PhaseRecord {
            index: self.phases.len(),
            start_k: self.k,
            trials: Vec::new(),
            carry: f64::NAN,
            snapshot_xi: snap.xi(),
            snapshot_min_eig: min_eig,
            completed: false,
        });
        self.snapshot = Some(snap);
        Ok(())
    }

    fn step(&self, from: &Point, reg: f64) -> Result<Step> {
        let snap = self
            .snapshot
            .as_ref()
            .expect("snapshot computed before stepping");
        if self.cfg.method.is_cubic() {
            let res = cubic_step_from_gradient(snap, &from.x, &from.g, reg)?;
            Ok(Step {
                delta: res.step,
                r: res.r,
                lambda: None,
            })
        } else {
            let lambda = (reg * from.gnorm).sqrt();
            let delta = if from.gnorm == 0.0 {
                DVector::zeros(from.x.len())
            } else {
                snap.solve_shifted(lambda, &from.g)?
            };
            let r = self.ctx.primal_norm(&delta)?;
            Ok(Step {
                delta,
                r,
                lambda: Some(lambda),
            })
        }
    }

    fn advance(&self, from: &Point, step: &Step) -> Point {
        let x = &from.x + &step.delta;
        let f = self.oracle.value(&x);
        let g = self.oracle.gradient(&x);
        let gnorm = self.ctx.dual_norm(&g).expect("dimension checked");
        Point { x, f, g, gnorm }
    }

    fn run_fixed(&mut self) -> Result<Status> {
        let m = self.cfg.m;
        loop {
            if self.current.gnorm <= self.cfg.eps {
                return Ok(Status::Converged);
            }
            if self.k >= self.cfg.max_iters {
                return Ok(Status::MaxIterations);
            }
            if self.k.is_multiple_of(m) {
                if let Some(last) = self.phases.last_mut() {
                    last.completed = true;
                }
                self.refresh_snapshot()?;
                let reg = self.reg;
                let phase = self.phases.last_mut().expect("just pushed");
                phase.trials.push(reg);
                phase.carry = reg;
            }
            let phase = self.k / m;
            let step = self.step(&self.current, self.reg)?;
            let next = self.advance(&self.current, &step);
            self.k += 1;
            let rec = self.record(self.k, phase, false, self.reg, &next, step.r, step.lambda);
            self.records.push(rec);
            self.current = next;
            if self.k.is_multiple_of(m) {
                self.phases.last_mut().expect("phase exists").completed = true;
            }
        }
    }

    fn run_adaptive(&mut self) -> Result<Status> {
        let m = self.cfg.m;
        let mut reg = self.reg;
        loop {
            if self.current.gnorm <= self.cfg.eps {
                return Ok(Status::Converged);
            }
            if self.k >= self.cfg.max_iters {
                return Ok(Status::MaxIterations);
            }
            self.refresh_snapshot()?;
            let phase = self.phases.len() - 1;
            let start = self.current.clone();
            loop {
                reg *= 2.0;
                if reg > ADAPTIVE_CAP {
                    return Err(Error::AdaptiveDivergence {
                        value: reg,
                        cap: ADAPTIVE_CAP,
                    });
                }
                self.phases[phase].trials.push(reg);

                let mut point = start.clone();
                let mut pending = Vec::with_capacity(m);
                let mut required = 0.0;
                for i in 1..=m {
                    let step = self.step(&point, reg)?;
                    let next = self.advance(&point, &step);
                    required += match step.lambda {
                        None => next.gnorm.powf(1.5) / reg.sqrt(),
                        Some(l) if l > 0.0 => next.gnorm * next.gnorm / l,
                        Some(_) => 0.0,
                    };
                    pending.push(self.record(
                        self.k + i,
                        phase,
                        false,
                        reg,
                        &next,
                        step.r,
                        step.lambda,
                    ));
                    point = next;
                }
                let accepted = start.f - point.f >= required;
                for mut rec in pending {
                    rec.retry = !accepted;
                    self.records.push(rec);
                }
                if accepted {
                    self.current = point;
                    self.k += m;
                    break;
                }
            }
            reg /= 4.0;
            let p = &mut self.phases[phase];
            p.carry = reg;
            p.completed = true;
        }
    }

    fn finish(self, status: Status) -> Trace {
        Trace {
            method: self.cfg.method,
            m: self.cfg.m,
            dim: self.oracle.dim(),
            eps: self.cfg.eps,
            reg: self.reg,
            records: self.records,
            phases: self.phases,
            status,
            x_final: self.current.x,
            counts: self.oracle.counts(),
            warnings: self.warnings,
        }
    }
}
