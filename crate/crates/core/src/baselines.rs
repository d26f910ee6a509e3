//! Reference solvers: proximal gradient (ISTA, FISTA, BB), ADMM and
//! Chambolle–Pock primal-dual for quadratic and robust losses, IRLS and
//! reweighted ℓ1 for `ℓ_q`, and the scaled lasso for the square-root lasso.

use std::cell::RefCell;
use std::collections::VecDeque;
use std::time::Instant;

use crate::error::{check_len, Error, Result};
use crate::groups::{extend, group_sq_norms, GroupStructure, GroupedVector};
use crate::linalg::{conjugate_gradient, general_solve, power_norm, Matrix, SpdFactor, Vector};
use crate::linops::LinearOperator;
use crate::lq_forms::lq_value;
use crate::mirror::{soft_threshold_scalar, L1View};
use crate::model::{Loss, RegressionProblem};
use crate::trace::{SolverTrace, TraceStatus};
use crate::varpro::{minimize, OuterConfig, VarProProblem};

/// Dense factorizations are used up to this many unknowns, CG beyond.
const DENSE_LIMIT: usize = 3000;

/// `prox` of `t·Σ_g ‖z_g‖` over a partition.
pub fn group_soft_threshold(z: &Vector, gs: &GroupStructure, t: f64) -> Vector {
    let mut out = z.clone();
    for idx in gs.groups() {
        if idx.len() == 1 {
            out[idx[0]] = soft_threshold_scalar(z[idx[0]], t);
            continue;
        }
        let norm = idx.iter().map(|&i| z[i] * z[i]).sum::<f64>().sqrt();
        let scale = if norm > t { 1.0 - t / norm } else { 0.0 };
        for &i in idx {
            out[i] = z[i] * scale;
        }
    }
    out
}

/// Projection onto `{ξ : ‖ξ_g‖ ≤ 1 ∀g}`.
pub fn project_unit_groups(z: &Vector, gs: &GroupStructure) -> Vector {
    let mut out = z.clone();
    for idx in gs.groups() {
        let norm = idx.iter().map(|&i| z[i] * z[i]).sum::<f64>().sqrt();
        if norm > 1.0 {
            for &i in idx {
                out[i] = z[i] / norm;
            }
        }
    }
    out
}

/// Solver for `(c₀ I + Σ c_j K_jᵀK_j) x = b`, factorized once.
struct NormalSystem<'a> {
    shift: f64,
    terms: Vec<(f64, &'a LinearOperator)>,
    factor: Option<SpdFactor>,
    warm: RefCell<Option<Vector>>,
}

impl<'a> NormalSystem<'a> {
    fn new(shift: f64, terms: Vec<(f64, &'a LinearOperator)>) -> Result<Self> {
        let n = terms[0].1.cols();
        let factor = if n <= DENSE_LIMIT {
            let mut m = Matrix::identity(n, n) * shift;
            for (c, k) in &terms {
                if k.is_identity() {
                    for i in 0..n {
                        m[(i, i)] += c;
                    }
                } else {
                    m += k.gram() * *c;
                }
            }
            Some(SpdFactor::new(m)?)
        } else {
            None
        };
        Ok(Self {
            shift,
            terms,
            factor,
            warm: RefCell::new(None),
        })
    }

    fn apply(&self, x: &Vector) -> Vector {
        let mut out = x * self.shift;
        for (c, k) in &self.terms {
            out += k.adj(&k.fwd(x)) * *c;
        }
        out
    }

    fn solve(&self, b: &Vector) -> Result<Vector> {
        if let Some(f) = &self.factor {
            return Ok(f.solve(b));
        }
        let warm = self.warm.borrow().clone();
        let out = conjugate_gradient(|x| self.apply(x), b, warm.as_ref(), 1e-12, 10 * b.len())?;
        *self.warm.borrow_mut() = Some(out.x.clone());
        Ok(out.x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Acceleration {
    None,
    Fista,
    BarzilaiBorwein,
}

#[derive(Debug, Clone)]
pub struct IstaConfig {
    pub accel: Acceleration,
    /// Defaults to `λ/‖A‖²`.
    pub step: Option<f64>,
    pub max_iter: usize,
    /// Stop when `‖x⁺ − x‖/s ≤ tol`.
    pub tol: f64,
    pub x0: Option<Vector>,
}

impl Default for IstaConfig {
    fn default() -> Self {
        Self {
            accel: Acceleration::None,
            step: None,
            max_iter: 10_000,
            tol: 1e-10,
            x0: None,
        }
    }
}

/// `T_s(x − s∇F(x))` with the group soft-thresholding.
pub fn ista_step(view: &L1View<'_>, x: &Vector, s: f64) -> Vector {
    let g = view.fit_grad(x);
    group_soft_threshold(&(x - s * g), &view.problem.reg_groups, s)
}

pub fn default_ista_step(problem: &RegressionProblem, lambda: f64) -> f64 {
    let norm = if problem.n().max(problem.m()) <= 1000 {
        problem.a.to_dense().singular_values().max()
    } else {
        1.001 * problem.a.norm_estimate(200)
    };
    lambda / (norm * norm).max(f64::MIN_POSITIVE)
}

pub fn run_ista(problem: &RegressionProblem, cfg: &IstaConfig) -> Result<SolverTrace> {
    let view = L1View::new(problem)?;
    let n = problem.n();
    let s0 = match cfg.step {
        Some(s) if s > 0.0 => s,
        Some(_) => return Err(Error::InvalidArgument("step must be positive".into())),
        None => default_ista_step(problem, view.lambda),
    };
    let mut x = match &cfg.x0 {
        Some(x) => {
            check_len("x0", n, x.len())?;
            x.clone()
        }
        None => Vector::zeros(n),
    };
    let clock = Instant::now();
    let mut trace = SolverTrace::new(match cfg.accel {
        Acceleration::None => "ista",
        Acceleration::Fista => "fista",
        Acceleration::BarzilaiBorwein => "ista-bb",
    });
    trace.push(0, problem.objective(&x), f64::NAN, &clock);
    let mut status = TraceStatus::MaxIterations;
    let mut yk = x.clone();
    let mut t: f64 = 1.0;
    let mut prev: Option<(Vector, Vector)> = None;
    let mut recent: VecDeque<f64> = VecDeque::from(vec![problem.objective(&x)]);
    for k in 1..=cfg.max_iter {
        let (xn, s) = match cfg.accel {
            Acceleration::None => (ista_step(&view, &x, s0), s0),
            Acceleration::Fista => {
                let xn = ista_step(&view, &yk, s0);
                let tn = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
                yk = &xn + ((t - 1.0) / tn) * (&xn - &x);
                t = tn;
                (xn, s0)
            }
            Acceleration::BarzilaiBorwein => {
                let g = view.fit_grad(&x);
                let mut s = match &prev {
                    Some((xp, gp)) => {
                        let ds = &x - xp;
                        let dg = &g - gp;
                        let sy = ds.dot(&dg);
                        if sy > 0.0 {
                            (ds.norm_squared() / sy).clamp(s0, 1e6 * s0)
                        } else {
                            s0
                        }
                    }
                    None => s0,
                };
                let fref = recent.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut xn;
                loop {
                    xn = group_soft_threshold(&(&x - s * &g), &problem.reg_groups, s);
                    if s <= s0 || problem.objective(&xn) <= fref {
                        break;
                    }
                    s = (0.5 * s).max(s0);
                }
                prev = Some((x.clone(), g));
                (xn, s)
            }
        };
        let change = (&xn - &x).norm() / s;
        x = xn;
        let f = problem.objective(&x);
        trace.push(k, f, change, &clock);
        recent.push_back(f);
        if recent.len() > 10 {
            recent.pop_front();
        }
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
    trace.x = Some(x);
    Ok(trace)
}

#[derive(Debug, Clone)]
pub struct AdmmConfig {
    /// Augmented Lagrangian penalty `τ`.
    pub tau: f64,
    pub max_iter: usize,
    /// Stop when primal and dual residuals are both below `tol`.
    pub tol: f64,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            tau: 1.0,
            max_iter: 10_000,
            tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdmmRun {
    pub x: Vector,
    pub z: Vector,
    pub psi: Vector,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub trace: SolverTrace,
}

/// ADMM on `min ‖z‖_{1,2} + loss(Ax − y)` s.t. `z = Lx`, with multiplier
/// `ψ` on `z − Lx`. Robust losses add a second splitting `z₂ = Ax − y`.
pub fn run_admm(problem: &RegressionProblem, cfg: &AdmmConfig) -> Result<AdmmRun> {
    if !(cfg.tau > 0.0) {
        return Err(Error::InvalidArgument("ADMM penalty must be positive".into()));
    }
    match &problem.loss {
        Loss::Quadratic { lambda, y } => admm_quadratic(problem, *lambda, y, cfg),
        Loss::Robust { lambda, y, groups } => admm_robust(problem, *lambda, y, groups, cfg),
        Loss::BasisPursuit { .. } => Err(Error::InvalidArgument(
            "ADMM is implemented for quadratic and robust losses".into(),
        )),
    }
}

fn admm_quadratic(
    problem: &RegressionProblem,
    lambda: f64,
    y: &Vector,
    cfg: &AdmmConfig,
) -> Result<AdmmRun> {
    let (a, l, gs) = (&problem.a, &problem.l, &problem.reg_groups);
    let tau = cfg.tau;
    let sys = NormalSystem::new(0.0, vec![(1.0, a), (lambda * tau, l)])?;
    let aty = a.adj(y);
    let clock = Instant::now();
    let mut trace = SolverTrace::new("admm");
    let mut x = Vector::zeros(problem.n());
    let mut z = Vector::zeros(l.rows());
    let mut psi = Vector::zeros(l.rows());
    trace.push(0, problem.objective(&x), f64::NAN, &clock);
    let (mut primal, mut dual) = (f64::INFINITY, f64::INFINITY);
    let mut status = TraceStatus::MaxIterations;
    for k in 1..=cfg.max_iter {
        let rhs = &aty + l.adj(&(lambda * &psi + lambda * tau * &z));
        x = sys.solve(&rhs)?;
        let lx = l.fwd(&x);
        let zn = group_soft_threshold(&(&lx - &psi / tau), gs, 1.0 / tau);
        psi += tau * (&zn - &lx);
        primal = (&zn - &lx).norm();
        dual = tau * l.adj(&(&zn - &z)).norm();
        z = zn;
        trace.push(k, problem.objective(&x), primal.max(dual), &clock);
        if primal <= cfg.tol && dual <= cfg.tol {
            status = TraceStatus::Converged;
            break;
        }
    }
    trace.status = status;
    trace.x = Some(x.clone());
    Ok(AdmmRun {
        x,
        z,
        psi,
        primal_residual: primal,
        dual_residual: dual,
        trace,
    })
}

fn admm_robust(
    problem: &RegressionProblem,
    lambda: f64,
    y: &Vector,
    loss_groups: &GroupStructure,
    cfg: &AdmmConfig,
) -> Result<AdmmRun> {
    let (a, l, gs) = (&problem.a, &problem.l, &problem.reg_groups);
    let tau = cfg.tau;
    let sys = NormalSystem::new(0.0, vec![(1.0, l), (1.0, a)])?;
    let (p, m) = (l.rows(), a.rows());
    let clock = Instant::now();
    let mut trace = SolverTrace::new("admm-robust");
    let mut x = Vector::zeros(problem.n());
    let mut z1 = Vector::zeros(p);
    let mut z2 = -y;
    let mut psi1 = Vector::zeros(p);
    let mut psi2 = Vector::zeros(m);
    trace.push(0, problem.objective(&x), f64::NAN, &clock);
    let (mut primal, mut dual) = (f64::INFINITY, f64::INFINITY);
    let mut status = TraceStatus::MaxIterations;
    for k in 1..=cfg.max_iter {
        let rhs = l.adj(&(&z1 + &psi1 / tau)) + a.adj(&(y + &z2 + &psi2 / tau));
        x = sys.solve(&rhs)?;
        let lx = l.fwd(&x);
        let r = a.fwd(&x) - y;
        let z1n = group_soft_threshold(&(&lx - &psi1 / tau), gs, 1.0 / tau);
        let z2n = group_soft_threshold(&(&r - &psi2 / tau), loss_groups, 1.0 / (lambda * tau));
        psi1 += tau * (&z1n - &lx);
        psi2 += tau * (&z2n - &r);
        primal = ((&z1n - &lx).norm_squared() + (&z2n - &r).norm_squared()).sqrt();
        dual = tau * (l.adj(&(&z1n - &z1)) + a.adj(&(&z2n - &z2))).norm();
        z1 = z1n;
        z2 = z2n;
        trace.push(k, problem.objective(&x), primal.max(dual), &clock);
        if primal <= cfg.tol && dual <= cfg.tol {
            status = TraceStatus::Converged;
            break;
        }
    }
    trace.status = status;
    trace.x = Some(x.clone());
    let mut z = Vector::zeros(p + m);
    z.rows_mut(0, p).copy_from(&z1);
    z.rows_mut(p, m).copy_from(&z2);
    let mut psi = Vector::zeros(p + m);
    psi.rows_mut(0, p).copy_from(&psi1);
    psi.rows_mut(p, m).copy_from(&psi2);
    Ok(AdmmRun {
        x,
        z,
        psi,
        primal_residual: primal,
        dual_residual: dual,
        trace,
    })
}

#[derive(Debug, Clone)]
pub struct PrimalDualConfig {
    /// Both default to `0.99/‖K‖`.
    pub sigma: Option<f64>,
    pub tau: Option<f64>,
    pub theta: f64,
    pub max_iter: usize,
    /// Stop when `‖x⁺ − x‖ ≤ tol·(1 + ‖x‖)` and the dual change is as small.
    pub tol: f64,
    pub power_iters: usize,
}

impl Default for PrimalDualConfig {
    fn default() -> Self {
        Self {
            sigma: None,
            tau: None,
            theta: 1.0,
            max_iter: 100_000,
            tol: 1e-12,
            power_iters: 50,
        }
    }
}

impl PrimalDualConfig {
    fn steps(&self, k_norm: f64) -> Result<(f64, f64)> {
        let d = 0.99 / k_norm.max(f64::MIN_POSITIVE);
        let sigma = self.sigma.unwrap_or(d);
        let tau = self.tau.unwrap_or(d);
        if !(sigma > 0.0 && tau > 0.0) {
            return Err(Error::InvalidArgument("primal-dual steps must be positive".into()));
        }
        if sigma * tau * k_norm * k_norm > 1.0 + 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "primal-dual steps violate στ‖K‖² ≤ 1 (‖K‖ ≈ {k_norm})"
            )));
        }
        Ok((sigma, tau))
    }
}

/// Chambolle–Pock on `min_x sup_ξ ⟨Kx, ξ⟩ − F*(ξ) + G(x)`.
pub fn run_primal_dual(problem: &RegressionProblem, cfg: &PrimalDualConfig) -> Result<SolverTrace> {
    match &problem.loss {
        Loss::Quadratic { lambda, y } => pd_quadratic(problem, *lambda, y, cfg),
        Loss::Robust { lambda, y, groups } => pd_robust(problem, *lambda, y, groups, cfg),
        Loss::BasisPursuit { .. } => Err(Error::InvalidArgument(
            "primal-dual is implemented for quadratic and robust losses".into(),
        )),
    }
}

/// `K = L`, `F = ‖·‖_{1,2}`, `G = (1/2λ)‖A· − y‖²`.
fn pd_quadratic(
    problem: &RegressionProblem,
    lambda: f64,
    y: &Vector,
    cfg: &PrimalDualConfig,
) -> Result<SolverTrace> {
    let (a, l, gs) = (&problem.a, &problem.l, &problem.reg_groups);
    let k_norm = l.norm_estimate(cfg.power_iters);
    let (sigma, tau) = cfg.steps(k_norm)?;
    let sys = NormalSystem::new(1.0, vec![(tau / lambda, a)])?;
    let aty = a.adj(y) * (tau / lambda);
    let clock = Instant::now();
    let mut trace = SolverTrace::new("primal-dual");
    let mut x = Vector::zeros(problem.n());
    let mut xbar = x.clone();
    let mut xi = Vector::zeros(l.rows());
    trace.push(0, problem.objective(&x), f64::NAN, &clock);
    let mut status = TraceStatus::MaxIterations;
    for k in 1..=cfg.max_iter {
        let xin = project_unit_groups(&(&xi + sigma * l.fwd(&xbar)), gs);
        let xn = sys.solve(&(&aty + &x - tau * l.adj(&xin)))?;
        xbar = &xn + cfg.theta * (&xn - &x);
        let dx = (&xn - &x).norm();
        let dxi = (&xin - &xi).norm();
        x = xn;
        xi = xin;
        trace.push(k, problem.objective(&x), dx / tau + dxi / sigma, &clock);
        if dx <= cfg.tol * (1.0 + x.norm()) && dxi <= cfg.tol * (1.0 + xi.norm()) {
            status = TraceStatus::Converged;
            break;
        }
    }
    trace.status = status;
    trace.x = Some(x);
    Ok(trace)
}

/// `K = [[L, −I, 0], [A, 0, −I]]` on `(x, z₁, z₂)`, `F*(ξ) = ⟨(0, y), ξ⟩` and
/// `G(x, z₁, z₂) = ‖z₁‖_{1,2} + (1/λ)‖z₂‖_{loss}`.
fn pd_robust(
    problem: &RegressionProblem,
    lambda: f64,
    y: &Vector,
    loss_groups: &GroupStructure,
    cfg: &PrimalDualConfig,
) -> Result<SolverTrace> {
    let (a, l, gs) = (&problem.a, &problem.l, &problem.reg_groups);
    let (n, p, m) = (problem.n(), l.rows(), a.rows());
    let split = |w: &Vector| {
        (
            w.rows(0, n).into_owned(),
            w.rows(n, p).into_owned(),
            w.rows(n + p, m).into_owned(),
        )
    };
    let k_fwd = |w: &Vector| {
        let (x, z1, z2) = split(w);
        let mut out = Vector::zeros(p + m);
        out.rows_mut(0, p).copy_from(&(l.fwd(&x) - z1));
        out.rows_mut(p, m).copy_from(&(a.fwd(&x) - z2));
        out
    };
    let k_adj = |xi: &Vector| {
        let xi1 = xi.rows(0, p).into_owned();
        let xi2 = xi.rows(p, m).into_owned();
        let mut out = Vector::zeros(n + p + m);
        out.rows_mut(0, n).copy_from(&(l.adj(&xi1) + a.adj(&xi2)));
        out.rows_mut(n, p).copy_from(&(-xi1));
        out.rows_mut(n + p, m).copy_from(&(-xi2));
        out
    };
    let k_norm = power_norm(k_fwd, k_adj, n + p + m, cfg.power_iters, 11);
    let (sigma, tau) = cfg.steps(k_norm)?;
    let mut shift = Vector::zeros(p + m);
    shift.rows_mut(p, m).copy_from(y);
    shift *= sigma;
    let clock = Instant::now();
    let mut trace = SolverTrace::new("primal-dual-robust");
    let mut w = Vector::zeros(n + p + m);
    w.rows_mut(n + p, m).copy_from(&(-y));
    let mut wbar = w.clone();
    let mut xi = Vector::zeros(p + m);
    let objective = |w: &Vector| problem.objective(&w.rows(0, n).into_owned());
    trace.push(0, objective(&w), f64::NAN, &clock);
    let mut status = TraceStatus::MaxIterations;
    for k in 1..=cfg.max_iter {
        let xin = &xi + sigma * k_fwd(&wbar) - &shift;
        let v = &w - tau * k_adj(&xin);
        let (x, z1, z2) = split(&v);
        let mut wn = Vector::zeros(n + p + m);
        wn.rows_mut(0, n).copy_from(&x);
        wn.rows_mut(n, p).copy_from(&group_soft_threshold(&z1, gs, tau));
        wn.rows_mut(n + p, m)
            .copy_from(&group_soft_threshold(&z2, loss_groups, tau / lambda));
        wbar = &wn + cfg.theta * (&wn - &w);
        let dw = (&wn - &w).norm();
        let dxi = (&xin - &xi).norm();
        w = wn;
        xi = xin;
        trace.push(k, objective(&w), dw / tau + dxi / sigma, &clock);
        if dw <= cfg.tol * (1.0 + w.norm()) && dxi <= cfg.tol * (1.0 + xi.norm()) {
            status = TraceStatus::Converged;
            break;
        }
    }
    trace.status = status;
    trace.x = Some(w.rows(0, n).into_owned());
    Ok(trace)
}

/// Data for `(1/q) Σ_g ‖x_g‖^q + (1/2λ)‖Ax − y‖²`, or `Ax = y` when `λ = 0`.
#[derive(Debug, Clone)]
pub struct LqRegression {
    pub a: LinearOperator,
    pub groups: GroupStructure,
    pub y: Vector,
    pub lambda: f64,
    pub q: f64,
}

impl LqRegression {
    pub fn new(a: LinearOperator, groups: GroupStructure, y: Vector, lambda: f64, q: f64) -> Result<Self> {
        check_len("observations", a.rows(), y.len())?;
        check_len("groups", a.cols(), groups.dim())?;
        groups.require_partition()?;
        if !(lambda >= 0.0) {
            return Err(Error::InvalidArgument("λ must be nonnegative".into()));
        }
        if !(q > 0.0 && q < 2.0) {
            return Err(Error::InvalidArgument(format!("q must lie in (0, 2), got {q}")));
        }
        Ok(Self { a, groups, y, lambda, q })
    }

    pub fn residual(&self, x: &Vector) -> Vector {
        self.a.fwd(x) - &self.y
    }

    /// Penalty plus data term; for `λ = 0` the data term is dropped and the
    /// constraint residual is reported separately by callers.
    pub fn objective(&self, x: &Vector) -> f64 {
        let pen = lq_value(x, &self.groups, self.q);
        if self.lambda > 0.0 {
            pen + self.residual(x).norm_squared() / (2.0 * self.lambda)
        } else {
            pen
        }
    }
}

/// `x = D Aᵀ(A D Aᵀ + λI)⁻¹ y` for a nonnegative diagonal `D`, sharing one
/// factorization across the copies of a repeated operator.
pub fn weighted_min_norm(a: &LinearOperator, d: &Vector, lambda: f64, y: &Vector) -> Result<Vector> {
    let solve = |op: &Matrix, d: &Vector, rhs: &Matrix| -> Result<Matrix> {
        let scaled = Matrix::from_fn(op.nrows(), op.ncols(), |i, j| op[(i, j)] * d[j]);
        let sys = &scaled * op.transpose() + Matrix::identity(op.nrows(), op.nrows()) * lambda;
        match SpdFactor::new(sys.clone()) {
            Ok(f) => Ok(scaled.transpose() * f.solve_matrix(rhs)),
            Err(_) => {
                let mut out = Matrix::zeros(op.ncols(), rhs.ncols());
                for t in 0..rhs.ncols() {
                    let (c, _) = general_solve(&sys, &rhs.column(t).into_owned())?;
                    out.set_column(t, &(scaled.transpose() * c));
                }
                Ok(out)
            }
        }
    };
    match a {
        LinearOperator::Repeated { op, copies } => {
            let (mb, nb) = (op.rows(), op.cols());
            let base = op.to_dense();
            let shared = (1..*copies).all(|t| d.rows(t * nb, nb) == d.rows(0, nb));
            let rhs = Matrix::from_fn(mb, *copies, |i, t| y[t * mb + i]);
            let mut x = Vector::zeros(nb * copies);
            if shared {
                let sol = solve(&base, &d.rows(0, nb).into_owned(), &rhs)?;
                for t in 0..*copies {
                    x.rows_mut(t * nb, nb).copy_from(&sol.column(t));
                }
            } else {
                for t in 0..*copies {
                    let col = Matrix::from_column_slice(mb, 1, rhs.column(t).as_slice());
                    let sol = solve(&base, &d.rows(t * nb, nb).into_owned(), &col)?;
                    x.rows_mut(t * nb, nb).copy_from(&sol.column(0));
                }
            }
            Ok(x)
        }
        _ => {
            let rhs = Matrix::from_column_slice(y.len(), 1, y.as_slice());
            Ok(solve(&a.to_dense(), d, &rhs)?.column(0).into_owned())
        }
    }
}

#[derive(Debug, Clone)]
pub struct IrlsConfig {
    pub eps0: f64,
    pub decay: f64,
    pub floor: f64,
    pub max_iter: usize,
}

impl Default for IrlsConfig {
    fn default() -> Self {
        Self {
            eps0: 1.0,
            decay: 10.0,
            floor: 1e-8,
            max_iter: 1000,
        }
    }
}

/// Iteratively reweighted least squares with weights `(‖x_g‖² + ε)^{q/2−1}`;
/// `ε` shrinks by `decay` whenever `‖x⁺ − x‖ < √ε/100`.
pub fn run_irls(p: &LqRegression, cfg: &IrlsConfig) -> Result<SolverTrace> {
    if !(cfg.eps0 > 0.0 && cfg.decay > 1.0 && cfg.floor > 0.0) {
        return Err(Error::InvalidArgument("invalid IRLS ε schedule".into()));
    }
    let clock = Instant::now();
    let mut trace = SolverTrace::new("irls");
    let mut eps = cfg.eps0;
    // ε large makes the first step a ridge solution
    let mut x = weighted_min_norm(&p.a, &Vector::from_element(p.a.cols(), 1.0), p.lambda, &p.y)?;
    trace.push(0, p.objective(&x), f64::NAN, &clock);
    let mut status = TraceStatus::MaxIterations;
    for k in 1..=cfg.max_iter {
        let w = group_sq_norms(&x, &p.groups)
            .iter()
            .map(|s| (s + eps).powf(1.0 - 0.5 * p.q))
            .collect::<Vec<_>>();
        let d = extend(&GroupedVector::from_vec(w), &p.groups);
        let xn = weighted_min_norm(&p.a, &d, p.lambda, &p.y)?;
        let change = (&xn - &x).norm();
        x = xn;
        trace.push(k, p.objective(&x), change, &clock);
        if change < eps.sqrt() / 100.0 {
            if eps <= cfg.floor {
                status = TraceStatus::Converged;
                break;
            }
            eps = (eps / cfg.decay).max(cfg.floor);
        }
    }
    trace.notes.push(format!("final eps {eps:e}"));
    trace.status = status;
    trace.x = Some(x);
    Ok(trace)
}

/// Solves `Σ_g ω_g ‖x_g‖ + (1/2λ)‖Ax − y‖²` by VarPro on the column-scaled
/// design `A diag(1/ω̄)`.
pub fn weighted_group_lasso(
    a: &LinearOperator,
    groups: &GroupStructure,
    weights: &[f64],
    lambda: f64,
    y: &Vector,
    outer: &OuterConfig,
) -> Result<Vector> {
    let inv = extend(
        &GroupedVector::from_vec(weights.iter().map(|w| 1.0 / w).collect()),
        groups,
    );
    let scaled = LinearOperator::column_scaled(a.clone(), inv.clone())?;
    let vp = VarProProblem::new(RegressionProblem::group_lasso(
        scaled,
        groups.clone(),
        lambda,
        y.clone(),
    )?);
    let run = minimize(&vp, outer)?;
    Ok(vp.recover(&run.z)?.component_mul(&inv))
}

#[derive(Debug, Clone)]
pub struct ReweightedConfig {
    pub eps: f64,
    pub max_outer: usize,
    /// Stop when `‖x⁺ − x‖ ≤ tol·(1 + ‖x‖)`.
    pub tol: f64,
    pub inner: OuterConfig,
}

impl Default for ReweightedConfig {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            max_outer: 30,
            tol: 1e-8,
            inner: OuterConfig {
                grad_tol: 1e-10,
                max_iter: 5000,
                ..OuterConfig::default()
            },
        }
    }
}

/// Reweighted ℓ1: starts from the plain group lasso, then reweights by
/// `(‖x_g‖ + ε)^{q−1}`. The recorded objective is the majorized surrogate
/// `(1/q) Σ (‖x_g‖ + ε)^q + (1/2λ)‖Ax − y‖²`. Needs `λ > 0`.
pub fn run_reweighted_l1(p: &LqRegression, cfg: &ReweightedConfig) -> Result<SolverTrace> {
    if !(p.lambda > 0.0) {
        return Err(Error::InvalidArgument("reweighted ℓ1 needs λ > 0".into()));
    }
    let surrogate = |x: &Vector| {
        group_sq_norms(x, &p.groups)
            .iter()
            .map(|s| (s.sqrt() + cfg.eps).powf(p.q))
            .sum::<f64>()
            / p.q
            + p.residual(x).norm_squared() / (2.0 * p.lambda)
    };
    let clock = Instant::now();
    let mut trace = SolverTrace::new("reweighted-l1");
    let mut weights = vec![1.0; p.groups.len()];
    let mut x = Vector::zeros(p.a.cols());
    let mut status = TraceStatus::MaxIterations;
    for k in 1..=cfg.max_outer {
        let xn = weighted_group_lasso(&p.a, &p.groups, &weights, p.lambda, &p.y, &cfg.inner)?;
        let change = (&xn - &x).norm();
        x = xn;
        trace.push(k, surrogate(&x), change, &clock);
        if k > 1 && change <= cfg.tol * (1.0 + x.norm()) {
            status = TraceStatus::Converged;
            break;
        }
        weights = group_sq_norms(&x, &p.groups)
            .iter()
            .map(|s| (s.sqrt() + cfg.eps).powf(p.q - 1.0))
            .collect();
    }
    trace.status = status;
    trace.x = Some(x);
    Ok(trace)
}

#[derive(Debug, Clone)]
pub struct ScaledLassoConfig {
    pub max_iter: usize,
    /// Stop when `|η⁺ − η| ≤ tol·η`.
    pub tol: f64,
    pub inner: OuterConfig,
}

impl Default for ScaledLassoConfig {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-10,
            inner: OuterConfig {
                grad_tol: 1e-10,
                max_iter: 5000,
                ..OuterConfig::default()
            },
        }
    }
}

/// Alternating minimization for `‖x‖_{1,2} + ‖Ax − y‖/(λ√m)`: with
/// `η = ‖Ax − y‖`, the x-step is the group lasso with parameter `λ√m·η`.
pub fn run_scaled_lasso(
    a: &LinearOperator,
    groups: &GroupStructure,
    y: &Vector,
    lambda: f64,
    cfg: &ScaledLassoConfig,
) -> Result<SolverTrace> {
    check_len("observations", a.rows(), y.len())?;
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument("λ must be positive".into()));
    }
    let scale = lambda * (a.rows() as f64).sqrt();
    let objective = |x: &Vector| {
        let reg: f64 = group_sq_norms(x, groups).iter().map(|s| s.sqrt()).sum();
        reg + (a.fwd(x) - y).norm() / scale
    };
    let clock = Instant::now();
    let mut trace = SolverTrace::new("scaled-lasso");
    let mut x = Vector::zeros(a.cols());
    let mut eta = y.norm();
    trace.push(0, objective(&x), eta, &clock);
    let mut status = TraceStatus::MaxIterations;
    for k in 1..=cfg.max_iter {
        if eta == 0.0 {
            status = TraceStatus::Degenerate;
            break;
        }
        x = weighted_group_lasso(a, groups, &vec![1.0; groups.len()], scale * eta, y, &cfg.inner)?;
        let eta_new = (a.fwd(&x) - y).norm();
        trace.push(k, objective(&x), eta_new, &clock);
        let done = (eta_new - eta).abs() <= cfg.tol * eta;
        eta = eta_new;
        if eta == 0.0 {
            status = TraceStatus::Degenerate;
            break;
        }
        if done {
            status = TraceStatus::Converged;
            break;
        }
    }
    trace.status = status;
    trace.x = Some(x);
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linops::Grad2DSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.random::<f64>() * 2.0 - 1.0)
    }

    fn varpro_objective(problem: &RegressionProblem) -> f64 {
        let vp = VarProProblem::new(problem.clone());
        let cfg = OuterConfig {
            grad_tol: 1e-10,
            max_iter: 5000,
            ..OuterConfig::default()
        };
        let run = minimize(&vp, &cfg).unwrap();
        problem.objective(&vp.recover(&run.z).unwrap())
    }

    #[test]
    fn thresholds() {
        let gs = GroupStructure::contiguous(&[2, 1]).unwrap();
        let z = Vector::from_vec(vec![3.0, 4.0, -0.5]);
        let t = group_soft_threshold(&z, &gs, 1.0);
        assert!((t[0] - 2.4).abs() < 1e-15 && (t[1] - 3.2).abs() < 1e-15);
        assert_eq!(t[2], 0.0);
        let p = project_unit_groups(&z, &gs);
        assert!((p[0] - 0.6).abs() < 1e-15);
        assert_eq!(p[2], -0.5);
    }

    #[test]
    fn ista_scalar_and_zero() {
        let p = RegressionProblem::group_lasso(
            LinearOperator::identity(1),
            GroupStructure::trivial(1),
            1.0,
            Vector::from_vec(vec![2.0]),
        )
        .unwrap();
        let t = run_ista(&p, &IstaConfig::default()).unwrap();
        assert!((t.x.unwrap()[0] - 1.0).abs() < 1e-8);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = rand_mat(&mut rng, 6, 10);
        let y = Vector::from_fn(6, |_, _| rng.random::<f64>());
        let lmax = a.tr_mul(&y).amax();
        let p = RegressionProblem::group_lasso(LinearOperator::dense(a), GroupStructure::trivial(10), lmax, y)
            .unwrap();
        let t = run_ista(&p, &IstaConfig::default()).unwrap();
        assert_eq!(t.x.unwrap().amax(), 0.0);
    }

    #[test]
    fn proximal_gradient_variants_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = LinearOperator::dense(rand_mat(&mut rng, 12, 20));
        let gs = GroupStructure::contiguous(&[4; 5]).unwrap();
        let y = Vector::from_fn(12, |_, _| rng.random::<f64>() - 0.5);
        let p = RegressionProblem::group_lasso(a, gs, 0.1, y).unwrap();
        let plain = run_ista(&p, &IstaConfig { max_iter: 200_000, ..Default::default() }).unwrap();
        assert!(plain.is_nonincreasing(1e-14));
        let target = varpro_objective(&p);
        for accel in [Acceleration::None, Acceleration::Fista, Acceleration::BarzilaiBorwein] {
            let t = run_ista(&p, &IstaConfig { accel, max_iter: 200_000, ..Default::default() }).unwrap();
            let f = t.final_objective().unwrap();
            assert!((f - target).abs() < 1e-8 * target, "{accel:?} {f} {target}");
        }
    }

    #[test]
    fn admm_and_primal_dual_on_tv() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = Grad2DSpec::new(4, 4, 2);
        let y = Vector::from_fn(32, |_, _| rng.random::<f64>());
        let p = RegressionProblem::new(
            LinearOperator::identity(32),
            LinearOperator::grad2d(spec),
            GroupStructure::gradient_pixels(4, 4, 2),
            Loss::Quadratic { lambda: 0.2, y },
        )
        .unwrap();
        let target = varpro_objective(&p);
        let admm = run_admm(&p, &AdmmConfig::default()).unwrap();
        assert!(admm.primal_residual < 1e-6 && admm.dual_residual < 1e-6);
        // fixed point: Lx = z
        assert!((p.l.fwd(&admm.x) - &admm.z).norm() < 1e-6);
        let fa = p.objective(&admm.x);
        assert!((fa - target).abs() < 1e-7 * target, "{fa} {target}");
        let pd = run_primal_dual(&p, &PrimalDualConfig::default()).unwrap();
        let fp = pd.final_objective().unwrap();
        assert!((fp - target).abs() < 1e-7 * target, "{fp} {target}");
    }

    #[test]
    fn robust_admm_and_primal_dual_on_tv_l1() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y = Vector::from_fn(18, |_, _| rng.random::<f64>());
        let p = RegressionProblem::new(
            LinearOperator::identity(18),
            LinearOperator::grad2d(Grad2DSpec::new(3, 3, 2)),
            GroupStructure::gradient_pixels(3, 3, 2),
            Loss::Robust {
                lambda: 0.8,
                y,
                groups: GroupStructure::rows_across(9, 2),
            },
        )
        .unwrap();
        let target = varpro_objective(&p);
        let admm = run_admm(&p, &AdmmConfig { max_iter: 50_000, ..Default::default() }).unwrap();
        let fa = p.objective(&admm.x);
        assert!((fa - target).abs() < 1e-6 * target, "{fa} {target}");
        let pd = run_primal_dual(&p, &PrimalDualConfig::default()).unwrap();
        let fp = pd.final_objective().unwrap();
        assert!((fp - target).abs() < 1e-6 * target, "{fp} {target}");
    }

    #[test]
    fn primal_dual_rejects_large_steps() {
        let cfg = PrimalDualConfig {
            sigma: Some(1.0),
            tau: Some(1.0),
            ..Default::default()
        };
        assert!(cfg.steps(2.0).is_err());
    }

    #[test]
    fn irls_recovers_a_spike_and_large_eps_is_ridge() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = rand_mat(&mut rng, 8, 32);
        let mut xs = Vector::zeros(32);
        xs[7] = 1.5;
        let y = &a * &xs;
        let p = LqRegression::new(LinearOperator::dense(a.clone()), GroupStructure::trivial(32), y.clone(), 0.0, 2.0 / 3.0)
            .unwrap();
        let t = run_irls(&p, &IrlsConfig::default()).unwrap();
        let x = t.x.unwrap();
        assert!((&x - &xs).norm() / xs.norm() < 0.01);
        // ε fixed at a huge value: weights ~ constant, x is the minimum-norm solution
        let cfg = IrlsConfig {
            eps0: 1e12,
            floor: 1e12,
            max_iter: 3,
            ..Default::default()
        };
        let x = run_irls(&p, &cfg).unwrap().x.unwrap();
        let ridge = a.transpose() * (&a * a.transpose()).lu().solve(&y).unwrap();
        assert!((x - ridge).amax() < 1e-8);
    }

    #[test]
    fn reweighted_first_step_is_group_lasso() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = LinearOperator::dense(rand_mat(&mut rng, 10, 16));
        let gs = GroupStructure::contiguous(&[2; 8]).unwrap();
        let y = Vector::from_fn(10, |_, _| rng.random::<f64>());
        let p = LqRegression::new(a.clone(), gs.clone(), y.clone(), 0.1, 0.5).unwrap();
        let one = run_reweighted_l1(&p, &ReweightedConfig { max_outer: 1, ..Default::default() }).unwrap();
        let gl = RegressionProblem::group_lasso(a, gs, 0.1, y).unwrap();
        let target = varpro_objective(&gl);
        assert!((gl.objective(one.x.as_ref().unwrap()) - target).abs() < 1e-8);
        let many = run_reweighted_l1(&p, &ReweightedConfig::default()).unwrap();
        assert!(many.records.windows(2).skip(1).all(|w| w[1].objective <= w[0].objective + 1e-8));
    }

    #[test]
    fn scaled_lasso_matches_sqrt_lasso() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = rand_mat(&mut rng, 12, 20);
        let y = Vector::from_fn(12, |_, _| rng.random::<f64>() - 0.5);
        let lmax = a.tr_mul(&y).amax() / (y.norm() * 12f64.sqrt());
        let op = LinearOperator::dense(a);
        let gs = GroupStructure::trivial(20);
        let t = run_scaled_lasso(&op, &gs, &y, 0.3 * lmax, &ScaledLassoConfig::default()).unwrap();
        let p = RegressionProblem::new(op.clone(), LinearOperator::identity(20), gs.clone(), Loss::sqrt_lasso(0.3 * lmax, y.clone()))
            .unwrap();
        let target = varpro_objective(&p);
        assert!((t.final_objective().unwrap() - target).abs() < 1e-6 * target);
        let etas: Vec<f64> = t.records.iter().map(|r| r.grad_norm).collect();
        assert!(etas.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        let zero = run_scaled_lasso(&op, &gs, &y, 1.01 * lmax, &ScaledLassoConfig::default()).unwrap();
        assert!(zero.x.unwrap().amax() < 1e-8);
    }
}
