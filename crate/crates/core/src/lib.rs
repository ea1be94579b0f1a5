//! Successive convex relaxation for constrained policy optimization.
//!
//! The solver replaces a nonconvex objective `J` and constraint `D ≤ D0` by
//! running averages of sampled quadratic surrogates, solves the resulting
//! convex QCQP exactly each iteration (falling back to a minimum-relaxation
//! problem when it is infeasible) and moves the iterate a decreasing step
//! toward the surrogate solution.
//!
//! Module map:
//!
//! - [`mat`]: dense kernels (Lyapunov fixed points, spectral radius, Gaussian sampling)
//! - [`quadform`]: scaled-identity quadratics and surrogate averaging
//! - [`subproblem`]: exact QCQP / feasibility solver
//! - [`sca`]: the outer loop, configuration and iterate logs
//! - [`lqr`]: constrained linear-quadratic regulator environments
//! - [`mdp_oracle`]: Monte-Carlo policy-gradient oracles for tabular CMDPs
//! - [`actor_critic`]: TD(0) critics feeding the same surrogate machinery online
//! - [`lagrangian`]: primal-dual baseline
//! - [`distributed`]: parallel-worker averaging and per-agent decomposition

pub mod actor_critic;
pub mod distributed;
mod error;
pub mod lagrangian;
pub mod lqr;
pub mod mat;
pub mod mdp_oracle;
pub mod quadform;
pub mod rng;
pub mod sca;
pub mod subproblem;

pub use error::{Error, Result};
pub use mat::{Matrix, Vector};
pub use rng::SimRng;
