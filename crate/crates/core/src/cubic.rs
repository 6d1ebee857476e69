//! Global minimization of the lazy cubic model
//!
//! ```text
//! min_h ⟨g, h⟩ + ½⟨H h, h⟩ + (M/6)‖h‖³
//! ```
//!
//! where `g = ∇f(x)` is fresh and `H = ∇²f(z)` comes from a [`HessianSnapshot`].
//! In the snapshot eigenbasis the model separates: with `ĝ = U⁻¹g` and
//! `h = U⁻ᵀy` it reads `ĝᵀy + ½ Σ λᵢ yᵢ² + (M/6)‖y‖₂³`. The minimizer has
//! `yᵢ = −ĝᵢ / (λᵢ + Mr/2)` where `r = ‖y‖` solves `φ(r) = ‖s(r)‖ − r = 0`,
//! except in the hard case where `ĝ` has no weight on the leftmost eigenspace.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linalg::HessianSnapshot;
use crate::oracles::ProblemOracle;

/// `|φ(r)| ≤ TOL_ROOT · (1 + r)` ends the root search.
pub const TOL_ROOT: f64 = 1e-10;
/// Stationarity residual tolerance, relative to `1 + ‖g‖*`.
pub const TOL_STAT: f64 = 1e-8;
pub const MAX_ROOT_ITERS: usize = 200;
/// Leftmost-eigenspace weight below `HARD_CASE_TOL · ‖g‖*` counts as zero.
pub const HARD_CASE_TOL: f64 = 1e-11;
/// Gradients with dual norm at most this are treated as exactly zero.
pub const ZERO_GRADIENT: f64 = 1e-15;

/// Outcome of one lazy cubic step `T_M(x, z)`.
#[derive(Debug, Clone)]
pub struct CubicStepResult {
    /// New point `T`.
    pub point: DVector<f64>,
    /// `T − x`.
    pub step: DVector<f64>,
    /// `‖T − x‖` in the primal norm.
    pub r: f64,
    /// Final shift `Mr/2` of the linear system.
    pub tau: f64,
    pub hard_case: bool,
    pub root_iters: usize,
    /// Model value at `x` minus model value at `T`; never negative.
    pub model_decrease: f64,
}

/// Root of the secular equation together with the step it defines.
#[derive(Debug, Clone)]
pub struct RootSolution {
    pub r: f64,
    /// Primal step `T − x`.
    pub step: DVector<f64>,
    pub hard_case: bool,
    pub iters: usize,
    /// Step in eigenbasis coordinates.
    coords: DVector<f64>,
}

/// Shifted spectrum measured from the left edge of the domain of `φ`.
struct Secular<'a> {
    /// `λᵢ + M r_min / 2`, all nonnegative.
    base: Vec<f64>,
    ghat: &'a DVector<f64>,
    m: f64,
    r_min: f64,
}

impl Secular<'_> {
    /// `φ` and `φ'` at `r = r_min + delta`, skipping the indices in `skip`.
    fn eval(&self, delta: f64, skip: &[bool]) -> (f64, f64) {
        let shift = 0.5 * self.m * delta;
        let mut sq = 0.0;
        let mut cube = 0.0;
        for (i, (&b, &gi)) in self.base.iter().zip(self.ghat.iter()).enumerate() {
            if gi == 0.0 || skip[i] {
                continue;
            }
            let den = b + shift;
            let t = gi / den;
            sq += t * t;
            cube += t * t / den;
        }
        let norm = sq.sqrt();
        let phi = norm - (self.r_min + delta);
        let dphi = if norm > 0.0 {
            -0.5 * self.m * cube / norm - 1.0
        } else {
            -1.0
        };
        (phi, dphi)
    }

    fn coords(&self, delta: f64, skip: &[bool]) -> DVector<f64> {
        let shift = 0.5 * self.m * delta;
        DVector::from_iterator(
            self.base.len(),
            self.base
                .iter()
                .zip(self.ghat.iter())
                .enumerate()
                .map(|(i, (&b, &gi))| {
                    if gi == 0.0 || skip[i] {
                        0.0
                    } else {
                        -gi / (b + shift)
                    }
                }),
        )
    }
}

fn check_reg(m: f64) -> Result<()> {
    if !(m > 0.0 && m.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "cubic regularization must be positive and finite, got {m}"
        )));
    }
    Ok(())
}

/// `φ(r) = ‖s(r)‖ − r` with `(∇²f(z) + (Mr/2)B) s(r) = ∇f(x)`.
pub fn phi(snap: &HessianSnapshot, g: &DVector<f64>, m: f64, r: f64) -> Result<f64> {
    check_reg(m)?;
    let tau = 0.5 * m * r;
    let shifted_min = snap.min_eigval() + tau;
    if shifted_min.is_nan() || shifted_min <= 0.0 {
        return Err(Error::SingularShift { shifted_min });
    }
    let ghat = snap.coords(g)?;
    let norm = ghat
        .iter()
        .zip(snap.eigvals().iter())
        .map(|(&gi, &li)| (gi / (li + tau)).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(norm - r)
}

/// Solves for the step length of the cubic subproblem.
///
/// The easy case runs univariate Newton on `φ` inside a bisection bracket.
/// The hard case returns `r = 2ξ/M` and fills the leftmost eigendirection
/// with a nonnegative coefficient so that `‖step‖ = r`.
pub fn solve_root(snap: &HessianSnapshot, g: &DVector<f64>, m: f64) -> Result<RootSolution> {
    check_reg(m)?;
    let ghat = snap.coords(g)?;
    let eig = snap.eigvals();
    let d = eig.len();
    let lam0 = eig[0];
    let gnorm = ghat.norm();

    let finish = |r: f64, coords: DVector<f64>, hard_case: bool, iters: usize| RootSolution {
        r,
        step: snap.from_coords(&coords),
        hard_case,
        iters,
        coords,
    };

    if gnorm <= ZERO_GRADIENT && lam0 >= 0.0 {
        return Ok(finish(0.0, DVector::zeros(d), false, 0));
    }

    let indefinite = lam0 < 0.0;
    let r_min = if indefinite { -2.0 * lam0 / m } else { 0.0 };
    let sec = Secular {
        base: eig
            .iter()
            .map(|&l| if indefinite { l - lam0 } else { l })
            .collect(),
        ghat: &ghat,
        m,
        r_min,
    };
    let no_skip = vec![false; d];

    if indefinite {
        let scale = eig.amax().max(1.0);
        let cluster: Vec<bool> = sec.base.iter().map(|&b| b <= 1e-12 * scale).collect();
        let cluster_weight = ghat
            .iter()
            .zip(&cluster)
            .filter(|(_, &c)| c)
            .map(|(g, _)| g * g)
            .sum::<f64>()
            .sqrt();
        if cluster_weight <= HARD_CASE_TOL * gnorm {
            let (phi_edge, _) = sec.eval(0.0, &cluster);
            if phi_edge <= 0.0 {
                let mut y = sec.coords(0.0, &cluster);
                let rest = y.norm_squared();
                let lead = cluster.iter().position(|&c| c).unwrap_or(0);
                y[lead] = (r_min * r_min - rest).max(0.0).sqrt();
                return Ok(finish(r_min, y, true, 0));
            }
        }
    }

    // Bracket the root in delta = r − r_min; φ is positive to the left.
    let mut lo = 0.0_f64;
    let mut hi = r_min.max(1.0);
    let mut iters = 0;
    loop {
        let (phi_hi, _) = sec.eval(hi, &no_skip);
        if phi_hi < 0.0 {
            break;
        }
        if phi_hi.abs() <= TOL_ROOT * (1.0 + r_min + hi) {
            return Ok(finish(r_min + hi, sec.coords(hi, &no_skip), false, iters));
        }
        lo = hi;
        hi *= 2.0;
        iters += 1;
        if !hi.is_finite() || iters > 2048 {
            return Err(Error::RootFindFailure {
                iterations: iters,
                residual: phi_hi,
            });
        }
    }

    let mut delta = hi;
    let mut last_phi = f64::NAN;
    for it in 0..MAX_ROOT_ITERS {
        let (phi, dphi) = sec.eval(delta, &no_skip);
        last_phi = phi;
        if phi.abs() <= TOL_ROOT * (1.0 + r_min + delta) {
            return Ok(finish(
                r_min + delta,
                sec.coords(delta, &no_skip),
                false,
                iters + it + 1,
            ));
        }
        if phi > 0.0 {
            lo = delta;
        } else {
            hi = delta;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            // The bracket cannot shrink further in floating point.
            return Ok(finish(
                r_min + delta,
                sec.coords(delta, &no_skip),
                false,
                iters + it + 1,
            ));
        }
        let newton = delta - phi / dphi;
        delta = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Err(Error::RootFindFailure {
        iterations: iters + MAX_ROOT_ITERS,
        residual: last_phi,
    })
}

/// Lazy cubic step from a gradient that has already been evaluated.
pub fn cubic_step_from_gradient(
    snap: &HessianSnapshot,
    x: &DVector<f64>,
    g: &DVector<f64>,
    m: f64,
) -> Result<CubicStepResult> {
    let root = solve_root(snap, g, m)?;
    let y = &root.coords;
    let ghat = snap.coords(g)?;
    let r = y.norm();
    let quad: f64 = y
        .iter()
        .zip(snap.eigvals().iter())
        .map(|(&yi, &li)| li * yi * yi)
        .sum();
    let model = ghat.dot(y) + 0.5 * quad + m / 6.0 * r.powi(3);
    Ok(CubicStepResult {
        point: x + &root.step,
        step: root.step,
        r,
        tau: 0.5 * m * root.r,
        hard_case: root.hard_case,
        root_iters: root.iters,
        model_decrease: (-model).max(0.0),
    })
}

/// `T_M(x, z)` for the snapshot point `z`; evaluates `∇f(x)` once.
pub fn cubic_step(
    oracle: &ProblemOracle,
    snap: &HessianSnapshot,
    x: &DVector<f64>,
    m: f64,
) -> Result<CubicStepResult> {
    let g = oracle.gradient(x);
    cubic_step_from_gradient(snap, x, &g, m)
}
