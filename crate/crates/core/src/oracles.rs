//! Objective functions and the counting evaluation oracle.
//!
//! Problems implement [`Objective`] with pure, uncounted evaluations. Solvers
//! only ever talk to a [`ProblemOracle`], which wraps a shared problem and
//! keeps atomic evaluation counters. Diagnostics that must not perturb the
//! work accounting (e.g. the eigenvalue of the Hessian at every iterate) go
//! through [`ProblemOracle::problem`] instead.

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Known analytic constants of a problem.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ProblemInfo {
    /// Lipschitz constant of the Hessian in the problem's own norm.
    pub lipschitz: Option<f64>,
    /// `μ` with `∇²f ⪰ μB` everywhere.
    pub strong_convexity: Option<f64>,
    pub convex: bool,
}

pub trait Objective: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64>;

    fn info(&self) -> ProblemInfo {
        ProblemInfo::default()
    }

    /// The matrix `B` this problem is naturally measured in.
    fn norm_matrix(&self) -> DMatrix<f64> {
        DMatrix::identity(self.dim(), self.dim())
    }
}

/// Default forward-difference step, `√ε_mach · (1 + ‖x‖∞)`.
pub fn default_fd_step(x: &DVector<f64>) -> f64 {
    f64::EPSILON.sqrt() * (1.0 + x.amax())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HessianSource {
    Analytic,
    /// Forward differences of the gradient; `None` uses [`default_fd_step`].
    FiniteDifference {
        step: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalCounts {
    pub n_f: usize,
    pub n_grad: usize,
    pub n_hess: usize,
}

impl EvalCounts {
    /// Gradient-equivalent cost: one Hessian is worth `d` gradients.
    pub fn work_units(&self, dim: usize) -> usize {
        self.n_grad + dim * self.n_hess
    }
}

/// Counting front end to a shared [`Objective`].
#[derive(Debug)]
pub struct ProblemOracle {
    problem: Arc<dyn Objective>,
    hessian_source: HessianSource,
    n_f: AtomicUsize,
    n_grad: AtomicUsize,
    n_hess: AtomicUsize,
}

impl ProblemOracle {
    pub fn new(problem: Arc<dyn Objective>) -> Self {
        Self {
            problem,
            hessian_source: HessianSource::Analytic,
            n_f: AtomicUsize::new(0),
            n_grad: AtomicUsize::new(0),
            n_hess: AtomicUsize::new(0),
        }
    }

    pub fn with_hessian_source(mut self, source: HessianSource) -> Self {
        self.hessian_source = source;
        self
    }

    pub fn hessian_source(&self) -> HessianSource {
        self.hessian_source
    }

    pub fn problem(&self) -> &dyn Objective {
        self.problem.as_ref()
    }

    pub fn shared_problem(&self) -> Arc<dyn Objective> {
        Arc::clone(&self.problem)
    }

    pub fn dim(&self) -> usize {
        self.problem.dim()
    }

    pub fn info(&self) -> ProblemInfo {
        self.problem.info()
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        self.n_f.fetch_add(1, Ordering::Relaxed);
        self.problem.value(x)
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.n_grad.fetch_add(1, Ordering::Relaxed);
        self.problem.gradient(x)
    }

    /// Hessian according to the configured source. A finite-difference
    /// Hessian is charged as `d + 1` gradient evaluations, not as a Hessian.
    pub fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        match self.hessian_source {
            HessianSource::Analytic => {
                self.n_hess.fetch_add(1, Ordering::Relaxed);
                self.problem.hessian(x)
            }
            HessianSource::FiniteDifference { step } => {
                let step = step.unwrap_or_else(|| default_fd_step(x));
                finite_diff_hessian(self, x, step)
            }
        }
    }

    pub fn counts(&self) -> EvalCounts {
        EvalCounts {
            n_f: self.n_f.load(Ordering::Relaxed),
            n_grad: self.n_grad.load(Ordering::Relaxed),
            n_hess: self.n_hess.load(Ordering::Relaxed),
        }
    }
}

/// Symmetrized forward-difference Hessian `(H + Hᵀ)/2`, where row `i` of `H`
/// is `(∇f(x + δeᵢ) − ∇f(x))/δ`. Uses exactly `d + 1` gradient calls.
pub fn finite_diff_hessian(oracle: &ProblemOracle, x: &DVector<f64>, step: f64) -> DMatrix<f64> {
    assert!(step > 0.0, "finite-difference step must be positive");
    let d = x.len();
    let g0 = oracle.gradient(x);
    let mut h = DMatrix::zeros(d, d);
    let mut xp = x.clone();
    for i in 0..d {
        xp[i] = x[i] + step;
        let gi = oracle.gradient(&xp);
        xp[i] = x[i];
        for j in 0..d {
            h[(i, j)] = (gi[j] - g0[j]) / step;
        }
    }
    (&h + h.transpose()) * 0.5
}

/// Portable uniform stream on `[−1, 1)`: ChaCha8 seeded with
/// `seed_from_u64`, top 53 bits of each `u64` mapped to `[0, 1)` and then
/// affinely to `[−1, 1)`.
#[derive(Debug, Clone)]
pub struct UniformStream {
    rng: ChaCha8Rng,
}

impl UniformStream {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn next_unit(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_symmetric(&mut self) -> f64 {
        2.0 * self.next_unit() - 1.0
    }

    /// Row-major fill.
    pub fn matrix(&mut self, rows: usize, cols: usize) -> DMatrix<f64> {
        DMatrix::from_row_iterator(rows, cols, (0..rows * cols).map(|_| self.next_symmetric()))
    }

    pub fn vector(&mut self, len: usize) -> DVector<f64> {
        DVector::from_iterator(len, (0..len).map(|_| self.next_symmetric()))
    }
}

/// `AᵀA + δI`.
pub fn gram_plus_delta(a: &DMatrix<f64>, delta: f64) -> DMatrix<f64> {
    let d = a.ncols();
    a.tr_mul(a) + DMatrix::identity(d, d) * delta
}

/// Default perturbation `1e−6 · trace(AᵀA) / d`.
pub fn default_delta(a: &DMatrix<f64>) -> f64 {
    1e-6 * a.norm_squared() / a.ncols() as f64
}

/// Smoothed maximum `μ ln Σ exp((⟨aᵢ, x⟩ − bᵢ)/μ)`, measured in
/// `B = AᵀA + δI`, where its Hessian is `2/μ²`-Lipschitz.
#[derive(Debug, Clone, PartialEq)]
pub struct LogSumExpProblem {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub mu: f64,
    pub delta: f64,
    pub seed: u64,
}

/// Value, gradient and Hessian of a log-sum-exp objective at one point.
#[derive(Debug, Clone)]
pub struct LogSumExpEval {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
    /// Softmax weights; they sum to one.
    pub weights: DVector<f64>,
}

impl LogSumExpProblem {
    /// Draws `A` (row-major) and then `b` from [`UniformStream`]. `delta`
    /// defaults to [`default_delta`].
    pub fn generate(n: usize, d: usize, mu: f64, delta: Option<f64>, seed: u64) -> Self {
        assert!(n >= 1 && d >= 1, "dimensions must be positive");
        assert!(mu > 0.0, "smoothing parameter must be positive");
        let mut stream = UniformStream::new(seed);
        let a = stream.matrix(n, d);
        let b = stream.vector(n);
        let delta = delta.unwrap_or_else(|| default_delta(&a));
        assert!(delta > 0.0, "delta must be positive");
        Self {
            a,
            b,
            mu,
            delta,
            seed,
        }
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn lipschitz(&self) -> f64 {
        2.0 / (self.mu * self.mu)
    }

    fn weights(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        let z = (&self.a * x - &self.b) / self.mu;
        let zmax = z.max();
        let mut w = z.map(|zi| (zi - zmax).exp());
        let total = w.sum();
        let value = self.mu * (zmax + total.ln());
        w /= total;
        // renormalize so the weights sum to one as closely as rounding allows
        let total = w.sum();
        w /= total;
        (value, w)
    }

    pub fn evaluate(&self, x: &DVector<f64>) -> LogSumExpEval {
        let (value, weights) = self.weights(x);
        let gradient = self.a.tr_mul(&weights);
        let mut scaled = self.a.clone();
        for (mut row, &wi) in scaled.row_iter_mut().zip(weights.iter()) {
            row *= wi.sqrt();
        }
        let hessian = (scaled.tr_mul(&scaled) - &gradient * gradient.transpose()) / self.mu;
        LogSumExpEval {
            value,
            gradient,
            hessian,
            weights,
        }
    }
}

impl Objective for LogSumExpProblem {
    fn dim(&self) -> usize {
        self.a.ncols()
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        self.weights(x).0
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.a.tr_mul(&self.weights(x).1)
    }

    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.evaluate(x).hessian
    }

    fn info(&self) -> ProblemInfo {
        ProblemInfo {
            lipschitz: Some(self.lipschitz()),
            strong_convexity: None,
            convex: true,
        }
    }

    fn norm_matrix(&self) -> DMatrix<f64> {
        gram_plus_delta(&self.a, self.delta)
    }
}

/// Scalar loss for [`SeparableProblem`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarLoss {
    /// `t²/2`
    Square,
    /// `t⁴/4 − t²/2`, nonconvex with a local maximum at zero.
    DoubleWell,
    /// `ln(1 + eᵗ)`
    Logistic,
}

impl ScalarLoss {
    pub fn value(self, t: f64) -> f64 {
        match self {
            Self::Square => 0.5 * t * t,
            Self::DoubleWell => 0.25 * t.powi(4) - 0.5 * t * t,
            Self::Logistic => t.max(0.0) + (-t.abs()).exp().ln_1p(),
        }
    }

    pub fn derivative(self, t: f64) -> f64 {
        match self {
            Self::Square => t,
            Self::DoubleWell => t.powi(3) - t,
            Self::Logistic => sigmoid(t),
        }
    }

    pub fn second_derivative(self, t: f64) -> f64 {
        match self {
            Self::Square => 1.0,
            Self::DoubleWell => 3.0 * t * t - 1.0,
            Self::Logistic => {
                let s = sigmoid(t);
                s * (1.0 - s)
            }
        }
    }

    /// `sup |φ'''|`, when finite.
    pub fn third_derivative_bound(self) -> Option<f64> {
        match self {
            Self::Square => Some(0.0),
            Self::DoubleWell => None,
            Self::Logistic => Some(1.0 / (6.0 * 3f64.sqrt())),
        }
    }

    pub fn is_convex(self) -> bool {
        !matches!(self, Self::DoubleWell)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Square => "square",
            Self::DoubleWell => "double-well",
            Self::Logistic => "logistic",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "square" => Some(Self::Square),
            "double-well" => Some(Self::DoubleWell),
            "logistic" => Some(Self::Logistic),
            _ => None,
        }
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Geometry used by a [`SeparableProblem`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SeparableNorm {
    Identity,
    /// `AᵀA + δI`
    Gram {
        delta: f64,
    },
}

/// `f(x) = (1/n) Σ φ(⟨aᵢ, x⟩)`, with `∇f = Aᵀs(x)` and `∇²f = AᵀQ(x)A`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparableProblem {
    pub a: DMatrix<f64>,
    pub loss: ScalarLoss,
    pub norm: SeparableNorm,
    pub seed: u64,
}

impl SeparableProblem {
    pub fn generate(n: usize, d: usize, loss: ScalarLoss, norm: SeparableNorm, seed: u64) -> Self {
        assert!(n >= 1 && d >= 1, "dimensions must be positive");
        let a = UniformStream::new(seed).matrix(n, d);
        Self {
            a,
            loss,
            norm,
            seed,
        }
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// `sᵢ = φ'(⟨aᵢ, x⟩)/n`
    pub fn s(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = self.n() as f64;
        (&self.a * x).map(|t| self.loss.derivative(t) / n)
    }

    /// Diagonal of `Q`, `φ''(⟨aᵢ, x⟩)/n`.
    pub fn q(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = self.n() as f64;
        (&self.a * x).map(|t| self.loss.second_derivative(t) / n)
    }
}

impl Objective for SeparableProblem {
    fn dim(&self) -> usize {
        self.a.ncols()
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        let t = &self.a * x;
        t.iter().map(|&ti| self.loss.value(ti)).sum::<f64>() / self.n() as f64
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.a.tr_mul(&self.s(x))
    }

    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let q = self.q(x);
        let mut qa = self.a.clone();
        for (mut row, &qi) in qa.row_iter_mut().zip(q.iter()) {
            row *= qi;
        }
        let h = self.a.tr_mul(&qa);
        (&h + h.transpose()) * 0.5
    }

    fn info(&self) -> ProblemInfo {
        let n = self.n() as f64;
        let lipschitz = self.loss.third_derivative_bound().map(|c| match self.norm {
            // |⟨aᵢ, h⟩| ≤ ‖Ah‖ ≤ ‖h‖_B and AᵀA ⪯ B
            SeparableNorm::Gram { .. } => c / n,
            SeparableNorm::Identity => {
                let row_max = self.a.row_iter().map(|r| r.norm()).fold(0.0_f64, f64::max);
                let spectral = self.a.tr_mul(&self.a).symmetric_eigenvalues().max();
                c / n * row_max * spectral
            }
        });
        ProblemInfo {
            lipschitz,
            strong_convexity: None,
            convex: self.loss.is_convex(),
        }
    }

    fn norm_matrix(&self) -> DMatrix<f64> {
        match self.norm {
            SeparableNorm::Identity => DMatrix::identity(self.dim(), self.dim()),
            SeparableNorm::Gram { delta } => gram_plus_delta(&self.a, delta),
        }
    }
}

/// `½ xᵀQx − cᵀx` in the Euclidean geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProblem {
    pub q: DMatrix<f64>,
    pub c: DVector<f64>,
    pub seed: u64,
}

impl QuadraticProblem {
    pub fn new(q: DMatrix<f64>, c: DVector<f64>) -> Self {
        Self { q, c, seed: 0 }
    }

    /// `Q = GᵀG/d + I/2` with uniform `G`, then uniform `c`.
    pub fn generate(d: usize, seed: u64) -> Self {
        let mut stream = UniformStream::new(seed);
        let g = stream.matrix(d, d);
        let q = g.tr_mul(&g) / d as f64 + DMatrix::identity(d, d) * 0.5;
        let c = stream.vector(d);
        Self { q, c, seed }
    }
}

impl Objective for QuadraticProblem {
    fn dim(&self) -> usize {
        self.c.len()
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.q * x)) - self.c.dot(x)
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.q * x - &self.c
    }

    fn hessian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.q.clone()
    }

    fn info(&self) -> ProblemInfo {
        let vals = self.q.symmetric_eigenvalues();
        let min = vals.min();
        ProblemInfo {
            lipschitz: Some(0.0),
            strong_convexity: (min > 0.0).then_some(min),
            convex: min >= 0.0,
        }
    }
}

/// Adds `(weight/2)‖x‖₂²` to another objective, keeping its geometry. Since
/// `I ⪰ B / λ_max(B)`, the result is `weight/λ_max(B)`-strongly convex
/// relative to `B`.
#[derive(Debug, Clone)]
pub struct Ridge {
    inner: Arc<dyn Objective>,
    weight: f64,
    strong_convexity: f64,
}

impl Ridge {
    pub fn new(inner: Arc<dyn Objective>, weight: f64) -> Self {
        let b_max = inner.norm_matrix().symmetric_eigenvalues().max();
        let strong_convexity = weight / b_max + inner.info().strong_convexity.unwrap_or(0.0);
        Self {
            inner,
            weight,
            strong_convexity,
        }
    }
}

impl Objective for Ridge {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        self.inner.value(x) + 0.5 * self.weight * x.norm_squared()
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.inner.gradient(x) + x * self.weight
    }

    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let d = self.dim();
        self.inner.hessian(x) + DMatrix::identity(d, d) * self.weight
    }

    fn info(&self) -> ProblemInfo {
        let inner = self.inner.info();
        ProblemInfo {
            lipschitz: inner.lipschitz,
            strong_convexity: Some(self.strong_convexity),
            convex: inner.convex,
        }
    }

    fn norm_matrix(&self) -> DMatrix<f64> {
        self.inner.norm_matrix()
    }
}
