//! Per-iteration telemetry of a solver run.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::methods::Method;
use crate::oracles::EvalCounts;

/// State at one iterate `x_k`, together with the step that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub k: usize,
    /// Phase whose snapshot produced this iterate (0 for the starting point).
    pub phase: usize,
    /// Set on iterates of a rejected adaptive attempt.
    pub retry: bool,
    /// Regularization parameter used for the step into `x_k`.
    pub m_used: f64,
    pub f: f64,
    pub grad_dual_norm: f64,
    /// `ξ(x_k)`; known for snapshot points, and for every iterate when
    /// diagnostics are enabled.
    pub xi: Option<f64>,
    /// `‖x_k − x_{k−1}‖`.
    pub step_r: f64,
    /// Quadratic regularization `λ_{k−1}` (gradient-regularized methods).
    pub lambda: Option<f64>,
    pub n_f: usize,
    pub n_grad: usize,
    pub n_hess: usize,
    pub work_units: usize,
    /// Monotonic nanoseconds since the start of the run.
    pub wall_ns: u64,
}

/// One Hessian snapshot and the attempts made with it.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseRecord {
    pub index: usize,
    /// Iteration index of the snapshot point, always `index · m`.
    pub start_k: usize,
    /// Regularization values tried, in order; the last one was accepted
    /// when the phase completed.
    pub trials: Vec<f64>,
    /// Value carried into the next phase (adaptive methods: accepted / 4).
    pub carry: f64,
    pub snapshot_xi: f64,
    pub snapshot_min_eig: f64,
    pub completed: bool,
}

impl PhaseRecord {
    pub fn attempts(&self) -> usize {
        self.trials.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Converged,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct Trace {
    pub method: Method,
    pub m: usize,
    pub dim: usize,
    pub eps: f64,
    /// `M` for fixed methods, `M₀` for adaptive ones.
    pub reg: f64,
    pub records: Vec<IterationRecord>,
    pub phases: Vec<PhaseRecord>,
    pub status: Status,
    pub x_final: DVector<f64>,
    pub counts: EvalCounts,
    pub warnings: Vec<String>,
}

impl Trace {
    /// Iterates of the accepted trajectory, `x_0, x_1, …`.
    pub fn accepted(&self) -> impl Iterator<Item = &IterationRecord> + '_ {
        self.records.iter().filter(|r| !r.retry)
    }

    pub fn iterations(&self) -> usize {
        self.accepted().last().map_or(0, |r| r.k)
    }

    pub fn hessian_updates(&self) -> usize {
        self.phases.len()
    }

    pub fn work_units(&self) -> usize {
        self.counts.work_units(self.dim)
    }

    pub fn final_grad_norm(&self) -> f64 {
        self.accepted()
            .last()
            .map_or(f64::NAN, |r| r.grad_dual_norm)
    }

    /// Gradient dual norms of the accepted trajectory, indexed by `k`.
    pub fn grad_norms(&self) -> Vec<f64> {
        self.accepted().map(|r| r.grad_dual_norm).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.accepted().map(|r| r.f).collect()
    }
}

/// Outcome of [`stationarity_report`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StationarityReport {
    pub min_grad_norm: f64,
    pub min_xi: f64,
    /// `2^{5/3} · 3² · √(mL·ε)`
    pub bound: f64,
    pub satisfied: bool,
}

/// Compares the smallest `ξ(x_i)`, `i ≥ 1`, along the accepted trajectory
/// with the `O(√(mLε))` level expected of lazy cubic steps.
pub fn stationarity_report(trace: &Trace, ml: f64) -> Result<StationarityReport> {
    if !trace.phases.iter().any(|p| p.completed) {
        return Err(Error::EmptyTrace);
    }
    let later: Vec<&IterationRecord> = trace.accepted().filter(|r| r.k >= 1).collect();
    let min_grad_norm = later
        .iter()
        .map(|r| r.grad_dual_norm)
        .fold(f64::INFINITY, f64::min);
    let min_xi = later
        .iter()
        .filter_map(|r| r.xi)
        .fold(f64::INFINITY, f64::min);
    if !min_xi.is_finite() {
        return Err(Error::EmptyTrace);
    }
    let bound = 2f64.powf(5.0 / 3.0) * 9.0 * (ml * trace.eps).sqrt();
    Ok(StationarityReport {
        min_grad_norm,
        min_xi,
        bound,
        satisfied: min_xi <= bound,
    })
}
