//! Bregman proximal gradient descent for `‖x‖₁ + (1/2λ)‖Ax − y‖²` with a
//! quadratic or hyperbolic entropy.
//!
//! With [`MirrorScaling::Consistent`] the update is
//! `∇η(x⁺) = T_τ(∇η(x) − τ∇F(x))`, the exact Bregman prox-gradient step for
//! the objective above. [`MirrorScaling::Literal`] divides the gradient step
//! by `n`, which is the same method applied to `‖x‖₁ + F(x)/n`.

use std::time::Instant;

use crate::error::{check_len, Error, Result};
use crate::linalg::Vector;
use crate::model::{Loss, RegressionProblem};
use crate::trace::{SolverTrace, TraceStatus};

/// Largest mirror coordinate passed to `sinh` before clamping.
const MIRROR_CLAMP: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Entropy {
    /// `η(x) = (s/2)‖x‖²`.
    Quadratic { scale: f64 },
    /// `η_c(x) = Σ x asinh(x/c) − √(x² + c²) + c`.
    Hyperbolic { c: f64 },
}

impl Entropy {
    pub fn quadratic(scale: f64) -> Result<Self> {
        if !(scale > 0.0) {
            return Err(Error::InvalidArgument("entropy scale must be positive".into()));
        }
        Ok(Entropy::Quadratic { scale })
    }

    pub fn hyperbolic(c: f64) -> Result<Self> {
        if !(c > 0.0) {
            return Err(Error::InvalidArgument("hyperbolic entropy needs c > 0".into()));
        }
        Ok(Entropy::Hyperbolic { c })
    }

    pub fn value(&self, x: &Vector) -> f64 {
        match *self {
            Entropy::Quadratic { scale } => 0.5 * scale * x.norm_squared(),
            Entropy::Hyperbolic { c } => x
                .iter()
                .map(|&s| s * (s / c).asinh() - s.hypot(c) + c)
                .sum(),
        }
    }

    pub fn grad(&self, x: &Vector) -> Vector {
        match *self {
            Entropy::Quadratic { scale } => x * scale,
            Entropy::Hyperbolic { c } => x.map(|s| (s / c).asinh()),
        }
    }

    pub fn grad_inverse(&self, t: &Vector) -> Vector {
        match *self {
            Entropy::Quadratic { scale } => t / scale,
            Entropy::Hyperbolic { c } => t.map(|s| c * s.sinh()),
        }
    }

    /// Modulus `σ` with `D_η(a, b) ≥ (σ/2)‖a − b‖₁²` for `a, b` in the ℓ1 ball
    /// of the given radius in dimension `n`.
    pub fn l1_modulus(&self, n: usize, radius: f64) -> f64 {
        match *self {
            Entropy::Quadratic { scale } => scale / n as f64,
            Entropy::Hyperbolic { c } => 1.0 / (radius + c * n as f64),
        }
    }
}

/// `η(a) − η(b) − ⟨∇η(b), a − b⟩`.
pub fn bregman_div(e: &Entropy, a: &Vector, b: &Vector) -> f64 {
    e.value(a) - e.value(b) - e.grad(b).dot(&(a - b))
}

pub fn soft_threshold_scalar(z: f64, t: f64) -> f64 {
    z.signum() * (z.abs() - t).max(0.0)
}

pub fn soft_threshold(z: &Vector, t: f64) -> Vector {
    z.map(|s| soft_threshold_scalar(s, t))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MirrorScaling {
    Consistent,
    Literal,
}

#[derive(Debug, Clone)]
pub struct BpgdConfig {
    pub entropy: Entropy,
    /// Defaults to `σ/M₁` with `M₁ = max_i ‖a_i‖²/λ` and `σ` the ℓ1 modulus
    /// of the entropy on the sublevel ball `‖x‖₁ ≤ Φ(x₀)`.
    pub step: Option<f64>,
    pub scaling: MirrorScaling,
    pub max_iter: usize,
    /// Stop when `‖x⁺ − x‖_∞ ≤ tol`; `0` runs all iterations.
    pub tol: f64,
    /// Defaults to `(1/n)·1`.
    pub x0: Option<Vector>,
}

impl BpgdConfig {
    pub fn new(entropy: Entropy) -> Self {
        Self {
            entropy,
            step: None,
            scaling: MirrorScaling::Consistent,
            max_iter: 1000,
            tol: 0.0,
            x0: None,
        }
    }
}

/// The ℓ1-regularized least-squares data used by BPGD and ISTA.
#[derive(Debug, Clone, Copy)]
pub struct L1View<'a> {
    pub problem: &'a RegressionProblem,
    pub lambda: f64,
    pub y: &'a Vector,
}

impl<'a> L1View<'a> {
    pub fn new(problem: &'a RegressionProblem) -> Result<Self> {
        if !problem.l.is_identity() {
            return Err(Error::InvalidArgument("needs L = Id".into()));
        }
        match &problem.loss {
            Loss::Quadratic { lambda, y } => Ok(Self {
                problem,
                lambda: *lambda,
                y,
            }),
            _ => Err(Error::InvalidArgument("needs a quadratic loss".into())),
        }
    }

    pub fn fit_grad(&self, x: &Vector) -> Vector {
        let a = &self.problem.a;
        a.adj(&(a.fwd(x) - self.y)) / self.lambda
    }

    pub fn fit(&self, x: &Vector) -> f64 {
        (self.problem.a.fwd(x) - self.y).norm_squared() / (2.0 * self.lambda)
    }
}

/// One BPGD step; returns the new iterate and whether mirror coordinates had
/// to be clamped to keep `sinh` finite.
pub fn bpgd_step(
    view: &L1View<'_>,
    e: &Entropy,
    x: &Vector,
    tau: f64,
    scaling: MirrorScaling,
) -> (Vector, bool) {
    let g = view.fit_grad(x);
    let gstep = match scaling {
        MirrorScaling::Consistent => tau,
        MirrorScaling::Literal => tau / x.len() as f64,
    };
    let mut t = soft_threshold(&(e.grad(x) - gstep * g), tau);
    let mut clamped = false;
    if matches!(e, Entropy::Hyperbolic { .. }) {
        for s in t.iter_mut() {
            if s.abs() > MIRROR_CLAMP {
                *s = s.signum() * MIRROR_CLAMP;
                clamped = true;
            }
        }
    }
    (e.grad_inverse(&t), clamped)
}

#[derive(Debug, Clone)]
pub struct BpgdRun {
    pub x: Vector,
    pub step: f64,
    pub trace: SolverTrace,
}

pub fn run_bpgd(problem: &RegressionProblem, cfg: &BpgdConfig) -> Result<BpgdRun> {
    let view = L1View::new(problem)?;
    if !problem.reg_groups.is_trivial() {
        return Err(Error::InvalidArgument("BPGD is implemented for trivial groups".into()));
    }
    let n = problem.n();
    let x0 = match &cfg.x0 {
        Some(x) => {
            check_len("x0", n, x.len())?;
            x.clone()
        }
        None => Vector::from_element(n, 1.0 / n as f64),
    };
    let fit_weight = match cfg.scaling {
        MirrorScaling::Consistent => 1.0,
        MirrorScaling::Literal => 1.0 / n as f64,
    };
    let objective = |x: &Vector| x.lp_norm(1) + fit_weight * view.fit(x);
    let tau = match cfg.step {
        Some(t) if t > 0.0 => t,
        Some(_) => return Err(Error::InvalidArgument("step must be positive".into())),
        None => {
            let c = problem.a.max_column_norm();
            let m1 = fit_weight * c * c / view.lambda;
            cfg.entropy.l1_modulus(n, objective(&x0)) / m1
        }
    };
    let clock = Instant::now();
    let mut trace = SolverTrace::new(match cfg.entropy {
        Entropy::Quadratic { .. } => "bpgd-quadratic",
        Entropy::Hyperbolic { .. } => "bpgd-hyperbolic",
    });
    let mut x = x0;
    trace.push(0, objective(&x), f64::NAN, &clock);
    let mut status = TraceStatus::MaxIterations;
    for k in 1..=cfg.max_iter {
        let (xn, clamped) = bpgd_step(&view, &cfg.entropy, &x, tau, cfg.scaling);
        if clamped && !trace.notes.iter().any(|s| s.starts_with("mirror clamp")) {
            trace.notes.push(format!("mirror clamp at iteration {k}"));
        }
        let change = (&xn - &x).amax();
        x = xn;
        let f = objective(&x);
        trace.push(k, f, change / tau, &clock);
        if !f.is_finite() {
            status = TraceStatus::Diverged;
            break;
        }
        if change <= cfg.tol {
            status = TraceStatus::Converged;
            break;
        }
    }
    trace.status = status;
    trace.x = Some(x.clone());
    Ok(BpgdRun { x, step: tau, trace })
}
