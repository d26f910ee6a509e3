//! Outer smooth objectives obtained by marginalizing the Hadamard factor
//! `u`, and the quasi-Newton / gradient drivers that minimize them.
//!
//! For the quadratic loss, `f(v) = ½‖v‖² + min_x ½‖Lx / v̄‖² + F₀(Ax)` and
//! `∇f(v)_g = v_g − v_g ‖α_g‖²`. The value is computed from the primal pair
//! returned by the inner solve, which equals the dual value at optimum.

use std::cell::RefCell;
use std::collections::VecDeque;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_len, Error, Result};
use crate::groups::{extend, group_inner, group_sq_norms, GroupStructure, GroupedVector};
use crate::inner::{
    solve_basis_pursuit, solve_grouplasso_dual, solve_multitask_nuclear, solve_overlap_woodbury,
    solve_quadratic, solve_robust, InnerConfig, InnerSolution,
};
use crate::linalg::{Matrix, Vector};
use crate::linops::{block_extract, LinearOperator};
use crate::model::{Loss, MultitaskProblem, RegressionProblem};
use crate::trace::{SolverTrace, TraceStatus};

/// A differentiable objective over a flat parameter vector.
pub trait SmoothObjective {
    fn dim(&self) -> usize;
    fn value_grad(&self, z: &Vector) -> Result<(f64, Vector)>;
}

/// Outer variable layout: `v` over the regularizer groups, followed by `w`
/// over the loss groups for robust losses.
pub struct VarProProblem {
    problem: RegressionProblem,
    /// Overlapping structure behind a block-extractor `L`, enabling the
    /// Woodbury inner solve.
    overlap: Option<GroupStructure>,
    inner: RefCell<InnerConfig>,
    warm_start: bool,
}

impl VarProProblem {
    pub fn new(problem: RegressionProblem) -> Self {
        Self {
            problem,
            overlap: None,
            inner: RefCell::new(InnerConfig::default()),
            warm_start: true,
        }
    }

    /// Overlapping group lasso `Σ_g s_g ‖x_{I_g}‖ + (1/2λ)‖Ax − y‖²`.
    pub fn overlapping(
        a: LinearOperator,
        groups: GroupStructure,
        lambda: f64,
        y: Vector,
    ) -> Result<Self> {
        let l = block_extract(&groups, a.cols())?;
        let problem =
            RegressionProblem::new(a, l, groups.stacked_blocks(), Loss::Quadratic { lambda, y })?;
        Ok(Self {
            overlap: Some(groups),
            ..Self::new(problem)
        })
    }

    pub fn with_inner_config(self, cfg: InnerConfig) -> Self {
        *self.inner.borrow_mut() = cfg;
        self
    }

    pub fn without_warm_start(mut self) -> Self {
        self.warm_start = false;
        self
    }

    pub fn problem(&self) -> &RegressionProblem {
        &self.problem
    }

    pub fn n_reg(&self) -> usize {
        self.problem.reg_groups.len()
    }

    pub fn n_loss(&self) -> usize {
        match &self.problem.loss {
            Loss::Robust { groups, .. } => groups.len(),
            _ => 0,
        }
    }

    fn remember(&self, sol: &InnerSolution) {
        if self.warm_start {
            self.inner.borrow_mut().warm_start = sol.system_solution.clone();
        }
    }

    /// Inner solve at `v` for quadratic and basis-pursuit losses.
    pub fn inner_solve(&self, v: &GroupedVector) -> Result<InnerSolution> {
        let p = &self.problem;
        let cfg = self.inner.borrow().clone();
        let sol = match (&p.loss, &self.overlap) {
            (Loss::Quadratic { lambda, y }, Some(groups)) => {
                solve_overlap_woodbury(&p.a, groups, v, *lambda, y, &cfg)?
            }
            (Loss::Quadratic { lambda, y }, None) => {
                solve_quadratic(&p.a, &p.l, &p.reg_groups, v, *lambda, y, &cfg)?
            }
            (Loss::BasisPursuit { y }, _) => {
                solve_basis_pursuit(&p.a, &p.l, &p.reg_groups, v, y, &cfg)?
            }
            (Loss::Robust { .. }, _) => {
                return Err(Error::InvalidArgument(
                    "robust loss needs the (v, w) evaluator".into(),
                ))
            }
        };
        self.remember(&sol);
        Ok(sol)
    }

    /// `f(v)`, `∇f(v) = v − v ⊙ ‖α_g‖²` and the inner solution.
    pub fn eval_f_grad(&self, v: &GroupedVector) -> Result<(f64, GroupedVector, InnerSolution)> {
        v.check(&self.problem.reg_groups)?;
        let sol = self.inner_solve(v)?;
        let gs = &self.problem.reg_groups;
        let a2 = group_sq_norms(&sol.alpha, gs);
        let d = extend(v, gs).map(|x| x * x);
        let fit = match &self.problem.loss {
            Loss::Quadratic { lambda, y } => {
                (self.problem.a.fwd(&sol.x) - y).norm_squared() / (2.0 * lambda)
            }
            _ => 0.0,
        };
        let reg: f64 = d
            .iter()
            .zip(sol.alpha.iter())
            .map(|(di, ai)| di * ai * ai)
            .sum();
        let f = 0.5 * v.norm_squared() + 0.5 * reg + fit;
        let grad = GroupedVector::new(Vector::from_fn(v.len(), |g, _| v[g] - v[g] * a2[g]));
        Ok((f, grad, sol))
    }

    /// Robust loss: `f(v, w)` with `∂_v f = v − v ⊙ ‖α_g‖²` and
    /// `∂_w f = w/λ − λ w ⊙ ‖ξ_h‖²`.
    pub fn eval_f_grad_robust(
        &self,
        v: &GroupedVector,
        w: &GroupedVector,
    ) -> Result<(f64, GroupedVector, GroupedVector, InnerSolution)> {
        let p = &self.problem;
        let (lambda, y, loss_groups) = match &p.loss {
            Loss::Robust { lambda, y, groups } => (*lambda, y, groups),
            _ => return Err(Error::InvalidArgument("not a robust loss".into())),
        };
        let cfg = self.inner.borrow().clone();
        let sol = solve_robust(&p.a, &p.l, &p.reg_groups, loss_groups, v, w, lambda, y, &cfg)?;
        let a2 = group_sq_norms(&sol.alpha, &p.reg_groups);
        let x2 = group_sq_norms(&sol.xi, loss_groups);
        let f = 0.5 * v.norm_squared()
            + w.norm_squared() / (2.0 * lambda)
            + 0.5 * v.iter().zip(&a2).map(|(vi, ai)| vi * vi * ai).sum::<f64>()
            + 0.5 * lambda * w.iter().zip(&x2).map(|(wi, xi)| wi * wi * xi).sum::<f64>();
        let gv = Vector::from_fn(v.len(), |g, _| v[g] - v[g] * a2[g]);
        let gw = Vector::from_fn(w.len(), |h, _| w[h] / lambda - lambda * w[h] * x2[h]);
        Ok((f, gv.into(), gw.into(), sol))
    }

    /// Splits a flat outer vector into `(v, w)`.
    pub fn split(&self, z: &Vector) -> (GroupedVector, GroupedVector) {
        let k = self.n_reg();
        (
            GroupedVector::new(z.rows(0, k).into_owned()),
            GroupedVector::new(z.rows(k, z.len() - k).into_owned()),
        )
    }

    /// Primal solution carried by the inner solve at `z`.
    pub fn recover(&self, z: &Vector) -> Result<Vector> {
        match self.problem.loss {
            Loss::Robust { .. } => {
                let (v, w) = self.split(z);
                Ok(self.eval_f_grad_robust(&v, &w)?.3.x)
            }
            _ => Ok(self.inner_solve(&GroupedVector::new(z.clone()))?.x),
        }
    }

    /// `u = Lx / v̄` on the support of `v`, zero elsewhere.
    pub fn recover_u(&self, v: &GroupedVector, x: &Vector) -> Vector {
        let vbar = extend(v, &self.problem.reg_groups);
        let lx = self.problem.l.fwd(x);
        Vector::from_fn(lx.len(), |i, _| if vbar[i] != 0.0 { lx[i] / vbar[i] } else { 0.0 })
    }
}

impl SmoothObjective for VarProProblem {
    fn dim(&self) -> usize {
        self.n_reg() + self.n_loss()
    }

    fn value_grad(&self, z: &Vector) -> Result<(f64, Vector)> {
        check_len("outer variable", self.dim(), z.len())?;
        match self.problem.loss {
            Loss::Robust { .. } => {
                let (v, w) = self.split(z);
                let (f, gv, gw, _) = self.eval_f_grad_robust(&v, &w)?;
                let mut g = Vector::zeros(z.len());
                g.rows_mut(0, gv.len()).copy_from(gv.as_vector());
                g.rows_mut(gv.len(), gw.len()).copy_from(gw.as_vector());
                Ok((f, g))
            }
            _ => {
                let (f, g, _) = self.eval_f_grad(&GroupedVector::new(z.clone()))?;
                Ok((f, g.into_inner()))
            }
        }
    }
}

/// `ℓ_q` regression `(1/q) Σ_g ‖x_g‖^q + (1/2λ)‖Ax − y‖²` through the
/// three-factor form `x = u ⊙ (v·w)` with `u` marginalized (two outer
/// variables). `β = q / (2 − 2q)`.
pub struct LqOption2 {
    pub a: LinearOperator,
    pub groups: GroupStructure,
    pub lambda: f64,
    pub y: Vector,
    pub beta: f64,
    inner: InnerConfig,
}

impl LqOption2 {
    pub fn new(
        a: LinearOperator,
        groups: GroupStructure,
        lambda: f64,
        y: Vector,
        q: f64,
    ) -> Result<Self> {
        check_len("observations", a.rows(), y.len())?;
        check_len("groups", a.cols(), groups.dim())?;
        groups.require_partition()?;
        if !(q > 0.5 && q < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "three-factor form needs q in (1/2, 1), got {q}"
            )));
        }
        Ok(Self {
            a,
            groups,
            lambda,
            y,
            beta: q / (2.0 - 2.0 * q),
            inner: InnerConfig::default(),
        })
    }

    pub fn q(&self) -> f64 {
        2.0 * self.beta / (1.0 + 2.0 * self.beta)
    }

    fn product(&self, v: &GroupedVector, w: &GroupedVector) -> GroupedVector {
        GroupedVector::new(v.component_mul(w))
    }

    /// `f(v, w)` with `∂_v f = v − v w² ‖A_gᵀα‖²` and
    /// `∂_w f = |w|^{2β−2} w − w v² ‖A_gᵀα‖²`.
    pub fn eval(
        &self,
        v: &GroupedVector,
        w: &GroupedVector,
    ) -> Result<(f64, GroupedVector, GroupedVector, InnerSolution)> {
        v.check(&self.groups)?;
        w.check(&self.groups)?;
        let s = self.product(v, w);
        let sol = solve_grouplasso_dual(&self.a, &self.groups, &s, self.lambda, &self.y, &self.inner)?;
        let a2 = group_sq_norms(&sol.alpha, &self.groups);
        let b2 = 2.0 * self.beta;
        let pen: f64 = w.iter().map(|x| x.abs().powf(b2)).sum::<f64>() / b2;
        let reg: f64 = s.iter().zip(&a2).map(|(si, ai)| si * si * ai).sum();
        let fit = (self.a.fwd(&sol.x) - &self.y).norm_squared() / (2.0 * self.lambda);
        let f = 0.5 * v.norm_squared() + pen + 0.5 * reg + fit;
        let gv = Vector::from_fn(v.len(), |g, _| v[g] - v[g] * w[g] * w[g] * a2[g]);
        let gw = Vector::from_fn(w.len(), |g, _| {
            let wg = w[g];
            let pow = if wg == 0.0 { 0.0 } else { wg.abs().powf(b2 - 2.0) * wg };
            pow - wg * v[g] * v[g] * a2[g]
        });
        Ok((f, gv.into(), gw.into(), sol))
    }

    pub fn split(&self, z: &Vector) -> (GroupedVector, GroupedVector) {
        let k = self.groups.len();
        (
            GroupedVector::new(z.rows(0, k).into_owned()),
            GroupedVector::new(z.rows(k, k).into_owned()),
        )
    }

    pub fn recover(&self, z: &Vector) -> Result<Vector> {
        let (v, w) = self.split(z);
        Ok(self.eval(&v, &w)?.3.x)
    }
}

impl SmoothObjective for LqOption2 {
    fn dim(&self) -> usize {
        2 * self.groups.len()
    }

    fn value_grad(&self, z: &Vector) -> Result<(f64, Vector)> {
        check_len("outer variable", self.dim(), z.len())?;
        let (v, w) = self.split(z);
        let (f, gv, gw, _) = self.eval(&v, &w)?;
        let k = gv.len();
        let mut g = Vector::zeros(2 * k);
        g.rows_mut(0, k).copy_from(gv.as_vector());
        g.rows_mut(k, k).copy_from(gw.as_vector());
        Ok((f, g))
    }
}

/// `ℓ_{2/3}` regression with a single outer variable:
/// `f(v) = ½‖v‖² + min_z ‖z‖_{1,2} + F₀(A(v̄ ⊙ z))`, the inner group lasso
/// being solved by a nested VarPro run.
pub struct LqOption3 {
    pub a: LinearOperator,
    pub groups: GroupStructure,
    pub lambda: f64,
    pub y: Vector,
    pub nested: OuterConfig,
    last_s: RefCell<Option<Vector>>,
}

/// Outcome of an Option-3 evaluation.
#[derive(Debug, Clone)]
pub struct NestedEval {
    pub f: f64,
    pub grad: GroupedVector,
    /// Inner group-lasso solution `z`.
    pub z: Vector,
    /// `(A(v̄ ⊙ z) − y) / λ`.
    pub residual_dual: Vector,
    pub nested_grad_norm: f64,
}

impl LqOption3 {
    pub fn new(
        a: LinearOperator,
        groups: GroupStructure,
        lambda: f64,
        y: Vector,
        outer_grad_tol: f64,
    ) -> Result<Self> {
        check_len("observations", a.rows(), y.len())?;
        check_len("groups", a.cols(), groups.dim())?;
        groups.require_partition()?;
        let nested = OuterConfig {
            grad_tol: (1e-2 * outer_grad_tol).max(1e-10),
            max_iter: 5000,
            init: Init::Ones,
            ..OuterConfig::default()
        };
        Ok(Self {
            a,
            groups,
            lambda,
            y,
            nested,
            last_s: RefCell::new(None),
        })
    }

    pub fn eval(&self, v: &GroupedVector) -> Result<NestedEval> {
        v.check(&self.groups)?;
        let vbar = extend(v, &self.groups);
        let av = LinearOperator::column_scaled(self.a.clone(), vbar.clone())?;
        let inner = VarProProblem::new(RegressionProblem::group_lasso(
            av.clone(),
            self.groups.clone(),
            self.lambda,
            self.y.clone(),
        )?);
        let mut cfg = self.nested.clone();
        let start = match self.last_s.borrow().as_ref() {
            Some(s) if s.len() == self.groups.len() => {
                // inactive groups restart away from zero so they can re-enter
                s.map(|x| if x.abs() < 1e-6 { 1e-2 } else { x.abs() })
            }
            _ => Vector::from_element(self.groups.len(), 1.0),
        };
        cfg.init = Init::User(start);
        let run = minimize(&inner, &cfg)?;
        let s = run.z.clone();
        let (f_inner, gs, sol) = inner.eval_f_grad(&GroupedVector::new(s.clone()))?;
        let nested_grad_norm = gs.norm();
        if !nested_grad_norm.is_finite() || nested_grad_norm > 1e3 * cfg.grad_tol.max(1e-8) {
            return Err(Error::NestedNotConverged {
                grad_norm: nested_grad_norm,
            });
        }
        *self.last_s.borrow_mut() = Some(s);
        let z = sol.x;
        let residual_dual = (av.fwd(&z) - &self.y) / self.lambda;
        let atr = self.a.adj(&residual_dual);
        let coupling = group_inner(&z, &atr, &self.groups);
        let grad = Vector::from_fn(v.len(), |g, _| v[g] + coupling[g]);
        Ok(NestedEval {
            f: 0.5 * v.norm_squared() + f_inner,
            grad: grad.into(),
            z,
            residual_dual,
            nested_grad_norm,
        })
    }

    pub fn recover(&self, v: &Vector) -> Result<Vector> {
        let e = self.eval(&GroupedVector::new(v.clone()))?;
        Ok(extend(&GroupedVector::new(v.clone()), &self.groups).component_mul(&e.z))
    }
}

impl SmoothObjective for LqOption3 {
    fn dim(&self) -> usize {
        self.groups.len()
    }

    fn value_grad(&self, z: &Vector) -> Result<(f64, Vector)> {
        check_len("outer variable", self.dim(), z.len())?;
        let e = self.eval(&GroupedVector::new(z.clone()))?;
        Ok((e.f, e.grad.into_inner()))
    }
}

/// Multitask row-sparse regression with nuclear-norm loss; outer variables
/// `v ∈ ℝⁿ` and `W ∈ ℝ^{m×m}` (column-major after `v`).
pub struct MultitaskVarPro {
    pub problem: MultitaskProblem,
    inner: InnerConfig,
}

#[derive(Debug, Clone)]
pub struct MultitaskEval {
    pub f: f64,
    pub grad_v: Vector,
    pub grad_w: Matrix,
    pub alpha: Matrix,
    pub x: Matrix,
}

impl MultitaskVarPro {
    pub fn new(problem: MultitaskProblem) -> Self {
        Self {
            problem,
            inner: InnerConfig::default(),
        }
    }

    pub fn with_inner_config(mut self, cfg: InnerConfig) -> Self {
        self.inner = cfg;
        self
    }

    /// `f = ½‖v‖² + (λ/2)‖W‖² − ½‖v ⊙ Aᵀα‖² − (1/2λ)‖Wᵀα‖² − ⟨α, Y⟩` with
    /// `∂_v f = v − v_i ‖(Aᵀα)_i‖²` and `∂_W f = λW − (1/λ) α αᵀ W`.
    pub fn eval_multitask(&self, v: &Vector, w: &Matrix) -> Result<MultitaskEval> {
        let p = &self.problem;
        let lambda = p.lambda;
        let sol = solve_multitask_nuclear(&p.a, v, w, lambda, &p.y, &self.inner)?;
        let at = p.a.tr_mul(&sol.alpha);
        let row2: Vec<f64> = at.row_iter().map(|r| r.norm_squared()).collect();
        let wt = w.tr_mul(&sol.alpha);
        let f = 0.5 * v.norm_squared() + 0.5 * lambda * w.norm_squared()
            - 0.5 * v.iter().zip(&row2).map(|(vi, r)| vi * vi * r).sum::<f64>()
            - wt.norm_squared() / (2.0 * lambda)
            - sol.alpha.dot(&p.y);
        let grad_v = Vector::from_fn(v.len(), |i, _| v[i] - v[i] * row2[i]);
        let grad_w = lambda * w - (&sol.alpha * sol.alpha.transpose() * w) / lambda;
        Ok(MultitaskEval {
            f,
            grad_v,
            grad_w,
            alpha: sol.alpha,
            x: sol.x,
        })
    }

    pub fn split(&self, z: &Vector) -> (Vector, Matrix) {
        let n = self.problem.a.ncols();
        let m = self.problem.a.nrows();
        (
            z.rows(0, n).into_owned(),
            Matrix::from_column_slice(m, m, &z.as_slice()[n..]),
        )
    }
}

impl SmoothObjective for MultitaskVarPro {
    fn dim(&self) -> usize {
        let (m, n) = self.problem.a.shape();
        n + m * m
    }

    fn value_grad(&self, z: &Vector) -> Result<(f64, Vector)> {
        check_len("outer variable", self.dim(), z.len())?;
        let (v, w) = self.split(z);
        let e = self.eval_multitask(&v, &w)?;
        let mut g = Vector::zeros(z.len());
        let n = v.len();
        g.rows_mut(0, n).copy_from(&e.grad_v);
        g.rows_mut(n, z.len() - n)
            .copy_from_slice(e.grad_w.as_slice());
        Ok((f_or_nan(e.f), g))
    }
}

fn f_or_nan(f: f64) -> f64 {
    if f.is_finite() {
        f
    } else {
        f64::NAN
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OuterAlgorithm {
    Lbfgs,
    GradientDescentBb,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    /// Entries drawn uniformly in `[low, high]`.
    Uniform { low: f64, high: f64, seed: u64 },
    Ones,
    User(Vector),
}

impl Init {
    pub fn point(&self, dim: usize) -> Result<Vector> {
        match self {
            Init::Uniform { low, high, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                Ok(Vector::from_fn(dim, |_, _| rng.random_range(*low..=*high)))
            }
            Init::Ones => Ok(Vector::from_element(dim, 1.0)),
            Init::User(v) => {
                check_len("initial point", dim, v.len())?;
                Ok(v.clone())
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct OuterConfig {
    pub algorithm: OuterAlgorithm,
    pub memory: usize,
    pub max_iter: usize,
    pub grad_tol: f64,
    pub init: Init,
    pub time_limit: Option<f64>,
    pub armijo: f64,
    pub backtrack: f64,
    pub max_halvings: usize,
}

impl Default for OuterConfig {
    fn default() -> Self {
        Self {
            algorithm: OuterAlgorithm::Lbfgs,
            memory: 10,
            max_iter: 1000,
            grad_tol: 1e-8,
            init: Init::Uniform {
                low: 0.5,
                high: 1.5,
                seed: 0,
            },
            time_limit: None,
            armijo: 1e-4,
            backtrack: 0.5,
            max_halvings: 50,
        }
    }
}

impl OuterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.memory == 0 {
            return Err(Error::InvalidArgument("memory must be at least 1".into()));
        }
        if !(self.grad_tol > 0.0) {
            return Err(Error::InvalidArgument("grad_tol must be positive".into()));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Error::InvalidArgument("backtrack factor must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Final point and trace of an outer run.
#[derive(Debug, Clone)]
pub struct OuterResult {
    pub z: Vector,
    pub f: f64,
    pub grad: Vector,
    pub trace: SolverTrace,
}

pub fn minimize(obj: &dyn SmoothObjective, cfg: &OuterConfig) -> Result<OuterResult> {
    match cfg.algorithm {
        OuterAlgorithm::Lbfgs => lbfgs_minimize(obj, cfg),
        OuterAlgorithm::GradientDescentBb => gradient_descent_bb(obj, cfg),
    }
}

/// Evaluation that maps solver failures and non-finite values to `None` so
/// line searches can back off.
fn try_eval(obj: &dyn SmoothObjective, z: &Vector) -> Option<(f64, Vector)> {
    match obj.value_grad(z) {
        Ok((f, g)) if f.is_finite() && g.iter().all(|x| x.is_finite()) => Some((f, g)),
        _ => None,
    }
}

/// Sufficient decrease, or (when the decrease is lost in rounding) a
/// smaller gradient at an equal objective.
fn accept(f0: f64, f1: f64, slope: f64, t: f64, c1: f64, g0: f64, g1: f64) -> bool {
    if f1 <= f0 + c1 * t * slope {
        return true;
    }
    let noise = 64.0 * f64::EPSILON * (1.0 + f0.abs());
    f1 <= f0 + noise && g1 < g0
}

/// Consecutive L-BFGS steps without a decrease above rounding level before
/// the run is declared stalled.
const STALL_ITERS: usize = 20;

/// Limited-memory BFGS with backtracking Armijo line search.
pub fn lbfgs_minimize(obj: &dyn SmoothObjective, cfg: &OuterConfig) -> Result<OuterResult> {
    cfg.validate()?;
    let clock = Instant::now();
    let mut trace = SolverTrace::new("varpro-lbfgs");
    let mut z = cfg.init.point(obj.dim())?;
    let (mut f, mut g) = obj.value_grad(&z)?;
    let mut mem: VecDeque<(Vector, Vector, f64)> = VecDeque::with_capacity(cfg.memory);
    trace.push(0, f, g.norm(), &clock);
    let mut status = TraceStatus::MaxIterations;
    let mut flat = 0;
    for k in 1..=cfg.max_iter {
        let gnorm = g.norm();
        if gnorm <= cfg.grad_tol {
            status = TraceStatus::Converged;
            break;
        }
        if flat >= STALL_ITERS {
            status = TraceStatus::Stalled;
            break;
        }
        if cfg.time_limit.is_some_and(|t| clock.elapsed().as_secs_f64() > t) {
            status = TraceStatus::TimeLimit;
            break;
        }
        let mut d = two_loop(&g, &mem);
        let mut slope = g.dot(&d);
        if !(slope < 0.0) {
            mem.clear();
            d = -&g;
            slope = -gnorm * gnorm;
        }
        let mut t = if mem.is_empty() { (1.0 / gnorm).min(1.0) } else { 1.0 };
        let mut accepted = None;
        for _ in 0..cfg.max_halvings {
            let zt = &z + t * &d;
            if let Some((ft, gt)) = try_eval(obj, &zt) {
                if accept(f, ft, slope, t, cfg.armijo, gnorm, gt.norm()) {
                    accepted = Some((zt, ft, gt));
                    break;
                }
            }
            t *= cfg.backtrack;
        }
        let Some((zn, fnew, gn)) = accepted else {
            if !mem.is_empty() {
                // retry from steepest descent before giving up
                mem.clear();
                continue;
            }
            status = TraceStatus::LineSearchFailed;
            break;
        };
        let s = &zn - &z;
        let yv = &gn - &g;
        let sy = s.dot(&yv);
        if sy > 1e-12 * s.norm() * yv.norm() {
            if mem.len() == cfg.memory {
                mem.pop_front();
            }
            mem.push_back((s, yv, 1.0 / sy));
        }
        flat = if f - fnew > 64.0 * f64::EPSILON * (1.0 + f.abs()) { 0 } else { flat + 1 };
        z = zn;
        f = fnew;
        g = gn;
        trace.push(k, f, g.norm(), &clock);
    }
    if g.norm() <= cfg.grad_tol {
        status = TraceStatus::Converged;
    }
    trace.status = status;
    trace.v = Some(z.clone());
    Ok(OuterResult { z, f, grad: g, trace })
}

fn two_loop(g: &Vector, mem: &VecDeque<(Vector, Vector, f64)>) -> Vector {
    let mut q = -g;
    let mut alphas = Vec::with_capacity(mem.len());
    for (s, y, rho) in mem.iter().rev() {
        let a = rho * s.dot(&q);
        q.axpy(-a, y, 1.0);
        alphas.push(a);
    }
    if let Some((s, y, _)) = mem.back() {
        q *= s.dot(y) / y.norm_squared();
    }
    for ((s, y, rho), a) in mem.iter().zip(alphas.into_iter().rev()) {
        let b = rho * y.dot(&q);
        q.axpy(a - b, s, 1.0);
    }
    q
}

/// Gradient descent with Barzilai–Borwein steps and a nonmonotone Armijo
/// safeguard over the last ten objective values.
pub fn gradient_descent_bb(obj: &dyn SmoothObjective, cfg: &OuterConfig) -> Result<OuterResult> {
    cfg.validate()?;
    let clock = Instant::now();
    let mut trace = SolverTrace::new("varpro-gd-bb");
    let mut z = cfg.init.point(obj.dim())?;
    let (mut f, mut g) = obj.value_grad(&z)?;
    trace.push(0, f, g.norm(), &clock);
    let mut recent: VecDeque<f64> = VecDeque::from(vec![f]);
    let mut step = (1.0 / g.norm().max(1e-12)).min(1.0);
    let mut status = TraceStatus::MaxIterations;
    for k in 1..=cfg.max_iter {
        let gnorm = g.norm();
        if gnorm <= cfg.grad_tol {
            status = TraceStatus::Converged;
            break;
        }
        if cfg.time_limit.is_some_and(|t| clock.elapsed().as_secs_f64() > t) {
            status = TraceStatus::TimeLimit;
            break;
        }
        let fref = recent.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut t = step;
        let mut accepted = None;
        for _ in 0..cfg.max_halvings {
            let zt = &z - t * &g;
            if let Some((ft, gt)) = try_eval(obj, &zt) {
                if accept(fref, ft, -gnorm * gnorm, t, cfg.armijo, gnorm, gt.norm()) {
                    accepted = Some((zt, ft, gt));
                    break;
                }
            }
            t *= cfg.backtrack;
        }
        let Some((zn, fnew, gn)) = accepted else {
            status = TraceStatus::LineSearchFailed;
            break;
        };
        let s = &zn - &z;
        let yv = &gn - &g;
        let sy = s.dot(&yv);
        step = if sy > 0.0 { (s.norm_squared() / sy).clamp(1e-10, 1e10) } else { t * 2.0 };
        z = zn;
        f = fnew;
        g = gn;
        recent.push_back(f);
        if recent.len() > 10 {
            recent.pop_front();
        }
        trace.push(k, f, g.norm(), &clock);
    }
    if g.norm() <= cfg.grad_tol {
        status = TraceStatus::Converged;
    }
    trace.status = status;
    trace.v = Some(z.clone());
    Ok(OuterResult { z, f, grad: g, trace })
}

/// Central finite-difference gradient, used by tests and diagnostics.
pub fn finite_difference_gradient(obj: &dyn SmoothObjective, z: &Vector, h: f64) -> Result<Vector> {
    let mut g = Vector::zeros(z.len());
    let mut zp = z.clone();
    for i in 0..z.len() {
        let step = h * (1.0 + z[i].abs());
        zp[i] = z[i] + step;
        let fp = obj.value_grad(&zp)?.0;
        zp[i] = z[i] - step;
        let fm = obj.value_grad(&zp)?.0;
        zp[i] = z[i];
        g[i] = (fp - fm) / (2.0 * step);
    }
    Ok(g)
}
