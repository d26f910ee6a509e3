//! Smooth over-parameterized solvers for group-sparse regularized regression.
//!
//! A non-smooth penalty `‖Lx‖_{1,2}` is rewritten through the Hadamard
//! factorization `Lx = u ⊙ v` and the inner variable is marginalized
//! (variable projection), leaving a smooth outer objective `f(v)` whose
//! gradient is `v − v ⊙ ‖α_g‖²` with `α` the solution of a linear system.
//!
//! Around that core the crate provides the operators the problems are built
//! from ([`linops`], [`groups`]), the inner linear solvers ([`inner`]), the
//! outer drivers ([`varpro`]), direct gradient descent on the factorization
//! and its diagnostics ([`hadamard_flow`]), Bregman proximal gradient
//! ([`mirror`]), classical baselines ([`baselines`]), nonconvex `ℓ_q`
//! variational forms ([`lq_forms`]) and instance generators ([`problems`]).

pub mod baselines;
pub mod error;
pub mod groups;
pub mod hadamard_flow;
pub mod inner;
pub mod linalg;
pub mod linops;
pub mod lq_forms;
pub mod mirror;
pub mod model;
pub mod phase;
pub mod problems;
pub mod trace;
pub mod varpro;

pub use error::{Error, Result};
pub use groups::{GroupMode, GroupStructure, GroupedVector};
pub use linalg::{Matrix, SparseRows, Vector};
pub use linops::{FourierSystemSpec, Grad2DSpec, LinearOperator, OperatorKind};
pub use trace::SolverTrace;
