//! Newton-type methods that reuse a stale Hessian for `m` consecutive steps.
//!
//! The Hessian is evaluated and factorized once per phase, at the snapshot
//! point, while each step uses a fresh gradient. Steps are globalized either
//! by cubic regularization (general nonconvex problems) or by gradient
//! regularization (convex problems), with a fixed or an adaptively searched
//! regularization parameter.
//!
//! ```
//! use std::sync::Arc;
//! use lazy_newton::{
//!     methods::{run, Method, SolverConfig},
//!     linalg::NormContext,
//!     oracles::{LogSumExpProblem, Objective, ProblemOracle},
//! };
//!
//! let problem = Arc::new(LogSumExpProblem::generate(30, 8, 0.2, None, 7));
//! let ctx = NormContext::new(problem.norm_matrix()).unwrap();
//! let oracle = ProblemOracle::new(problem);
//! let cfg = SolverConfig::new(Method::GradReg, 8).with_eps(1e-8);
//! let trace = run(&oracle, &ctx, &cfg, &nalgebra::DVector::zeros(8)).unwrap();
//! assert!(trace.final_grad_norm() <= 1e-8);
//! ```

pub mod cubic;
pub mod error;
pub mod instance;
pub mod linalg;
pub mod methods;
pub mod oracles;
pub mod trace;

pub use error::{Error, Result};
pub use linalg::{HessianSnapshot, NormContext};
pub use methods::{run, Method, SolverConfig};
pub use oracles::{Objective, ProblemOracle};
pub use trace::{IterationRecord, Trace};
