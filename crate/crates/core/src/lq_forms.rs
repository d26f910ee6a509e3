//! Quadratic variational forms of the group `ℓ_q` penalty
//! `(1/q) Σ_g ‖x_g‖^q` and the factorized objectives built on them.

use crate::error::{check_len, Error, Result};
use crate::groups::{extend, group_inner, group_sq_norms, GroupStructure, GroupedVector};
use crate::linalg::{Matrix, Vector};
use crate::linops::LinearOperator;
use crate::trace::SolverTrace;
use crate::varpro::{finite_difference_gradient, minimize, Init, LqOption2, OuterConfig, SmoothObjective};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorCount {
    Two,
    Three,
}

/// Exponent bookkeeping for a two- or three-factor form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LqSpec {
    q: f64,
    factors: FactorCount,
}

impl LqSpec {
    pub fn new(q: f64, factors: FactorCount) -> Result<Self> {
        let ok = match factors {
            FactorCount::Two => q > 0.0 && q < 2.0,
            FactorCount::Three => q > 0.5 && q < 1.0,
        };
        if !ok {
            return Err(Error::InvalidArgument(format!("q = {q} outside the range of the {factors:?}-factor form")));
        }
        Ok(Self { q, factors })
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn factors(&self) -> FactorCount {
        self.factors
    }

    /// `q = 2β/(1+β)` for two factors, `q = 2β/(1+2β)` for three.
    pub fn beta(&self) -> f64 {
        match self.factors {
            FactorCount::Two => self.q / (2.0 - self.q),
            FactorCount::Three => self.q / (2.0 - 2.0 * self.q),
        }
    }

    /// Whether the factorized penalty is continuously differentiable.
    pub fn is_smooth(&self) -> bool {
        2.0 * self.beta() > 1.0
    }
}

/// `(1/q) Σ_g ‖x_g‖^q`.
pub fn lq_value(x: &Vector, gs: &GroupStructure, q: f64) -> f64 {
    group_sq_norms(x, gs).iter().map(|s| s.powf(0.5 * q)).sum::<f64>() / q
}

/// A candidate in one of the variational forms.
#[derive(Debug, Clone)]
pub enum Factorization {
    /// `½ Σ ‖x_g‖²/η_g + (1/2β) Σ η_g^β`.
    Eta(Vec<f64>),
    /// `x = u ⊙ v̄` with `½‖u‖² + (1/2β) Σ |v_g|^{2β}`.
    Two { u: Vector, v: GroupedVector },
    /// `x = u ⊙ (v·w)‾` with `½‖u‖² + ½‖v‖² + (1/2β) Σ |w_g|^{2β}`.
    Three {
        u: Vector,
        v: GroupedVector,
        w: GroupedVector,
    },
}

fn pow_sum(v: &[f64], p: f64) -> f64 {
    v.iter().map(|x| x.abs().powf(p)).sum()
}

/// Value of the variational objective at a candidate for `x`. Factor
/// candidates must reproduce `x` to `1e-12·(1 + ‖x‖)`.
pub fn variational_value(x: &Vector, gs: &GroupStructure, spec: &LqSpec, cand: &Factorization) -> Result<f64> {
    check_len("x", gs.dim(), x.len())?;
    let beta = spec.beta();
    let implied = |u: &Vector, s: &GroupedVector| -> Result<()> {
        check_len("u", x.len(), u.len())?;
        s.check(gs)?;
        let prod = u.component_mul(&extend(s, gs));
        if (&prod - x).norm() > 1e-12 * (1.0 + x.norm()) {
            return Err(Error::InvalidArgument("factors do not multiply to x".into()));
        }
        Ok(())
    };
    match (cand, spec.factors()) {
        (Factorization::Eta(eta), FactorCount::Two) => {
            check_len("η", gs.len(), eta.len())?;
            let mut val = 0.0;
            for (s, &e) in group_sq_norms(x, gs).iter().zip(eta) {
                if e < 0.0 {
                    return Err(Error::InvalidArgument("η must be nonnegative".into()));
                }
                val += if *s == 0.0 {
                    0.0
                } else if e == 0.0 {
                    f64::INFINITY
                } else {
                    0.5 * s / e
                };
                val += e.powf(beta) / (2.0 * beta);
            }
            Ok(val)
        }
        (Factorization::Two { u, v }, FactorCount::Two) => {
            implied(u, v)?;
            Ok(0.5 * u.norm_squared() + pow_sum(v.as_slice(), 2.0 * beta) / (2.0 * beta))
        }
        (Factorization::Three { u, v, w }, FactorCount::Three) => {
            w.check(gs)?;
            implied(u, &GroupedVector::new(v.component_mul(w)))?;
            Ok(0.5 * u.norm_squared() + 0.5 * v.norm_squared() + pow_sum(w.as_slice(), 2.0 * beta) / (2.0 * beta))
        }
        _ => Err(Error::InvalidArgument("candidate does not match the factor count".into())),
    }
}

/// Variational value minus `lq_value`; nonnegative up to rounding and zero
/// at the closed-form minimizer.
pub fn lq_variational_check(x: &Vector, gs: &GroupStructure, spec: &LqSpec, cand: &Factorization) -> Result<f64> {
    Ok(variational_value(x, gs, spec, cand)? - lq_value(x, gs, spec.q()))
}

/// Closed-form minimizer of the two-factor form at `t = ‖x_g‖`:
/// `η = t^{2−q}`, `v = t^{1−q/2}`, `u_g = x_g / v_g`.
pub fn optimal_eta(x: &Vector, gs: &GroupStructure, q: f64) -> Vec<f64> {
    group_sq_norms(x, gs).iter().map(|s| s.powf(1.0 - 0.5 * q)).collect()
}

fn divide_groups(x: &Vector, gs: &GroupStructure, s: &GroupedVector) -> Vector {
    let ext = extend(s, gs);
    Vector::from_fn(x.len(), |i, _| if ext[i] == 0.0 { 0.0 } else { x[i] / ext[i] })
}

pub fn optimal_factorization(x: &Vector, gs: &GroupStructure, spec: &LqSpec) -> Factorization {
    let t: Vec<f64> = group_sq_norms(x, gs).iter().map(|s| s.sqrt()).collect();
    match spec.factors() {
        FactorCount::Two => {
            let v = GroupedVector::from_vec(t.iter().map(|t| t.powf(1.0 - 0.5 * spec.q())).collect());
            Factorization::Two {
                u: divide_groups(x, gs, &v),
                v,
            }
        }
        FactorCount::Three => {
            let b = spec.beta();
            let v = GroupedVector::from_vec(t.iter().map(|t| t.powf(b / (1.0 + 2.0 * b))).collect());
            let w = GroupedVector::from_vec(t.iter().map(|t| t.powf(1.0 / (1.0 + 2.0 * b))).collect());
            let s = GroupedVector::new(v.component_mul(&w));
            Factorization::Three {
                u: divide_groups(x, gs, &s),
                v,
                w,
            }
        }
    }
}

/// Minimum over `η > 0` of `½t²/η + (1/2β)η^β`, attained at
/// `η = t^{2/(1+β)}`.
fn two_factor_min(t: f64, beta: f64) -> (f64, f64) {
    let eta = t.powf(2.0 / (1.0 + beta));
    let val = if t == 0.0 {
        0.0
    } else {
        0.5 * t * t / eta + eta.powf(beta) / (2.0 * beta)
    };
    (val, eta)
}

/// The three-factor value obtained by nesting the two-factor form: the
/// outer level with exponent `r = β/(1+β)` in the `s = v·w` variable, the
/// inner level replacing `(1/2r)|s|^{2r}` by `min_{vw=s} ½v² + (1/2β)|w|^{2β}`.
pub fn nested_lq_value(x: &Vector, gs: &GroupStructure, q: f64) -> Result<f64> {
    let spec = LqSpec::new(q, FactorCount::Three)?;
    let beta = spec.beta();
    let r = beta / (1.0 + beta);
    let mut total = 0.0;
    for s2 in group_sq_norms(x, gs) {
        let t = s2.sqrt();
        let (_, eta) = two_factor_min(t, r);
        let s = eta.sqrt();
        let (inner, _) = two_factor_min(s, beta);
        total += if t == 0.0 { 0.0 } else { 0.5 * t * t / eta } + inner;
    }
    Ok(total)
}

/// Value and gradients of the three-factor objective
/// `½‖u‖² + ½‖v‖² + (1/2β)Σ|w|^{2β} + (1/2λ)‖A(u ⊙ (v·w)‾) − y‖²`.
#[derive(Debug, Clone)]
pub struct ThreeFactorEval {
    pub value: f64,
    pub gu: Vector,
    pub gv: GroupedVector,
    pub gw: GroupedVector,
}

pub struct ThreeFactor {
    pub a: LinearOperator,
    pub groups: GroupStructure,
    pub lambda: f64,
    pub y: Vector,
    pub beta: f64,
}

impl ThreeFactor {
    pub fn new(a: LinearOperator, groups: GroupStructure, lambda: f64, y: Vector, q: f64) -> Result<Self> {
        check_len("observations", a.rows(), y.len())?;
        check_len("groups", a.cols(), groups.dim())?;
        groups.require_partition()?;
        if !(lambda > 0.0) {
            return Err(Error::InvalidArgument("λ must be positive".into()));
        }
        let beta = LqSpec::new(q, FactorCount::Three)?.beta();
        Ok(Self { a, groups, lambda, y, beta })
    }

    pub fn objective(&self, u: &Vector, v: &GroupedVector, w: &GroupedVector) -> Result<ThreeFactorEval> {
        check_len("u", self.a.cols(), u.len())?;
        v.check(&self.groups)?;
        w.check(&self.groups)?;
        let b2 = 2.0 * self.beta;
        let s = GroupedVector::new(v.component_mul(w));
        let sbar = extend(&s, &self.groups);
        let x = u.component_mul(&sbar);
        let r = self.a.fwd(&x) - &self.y;
        let g = self.a.adj(&r) / self.lambda;
        let ug = group_inner(u, &g, &self.groups);
        let value = 0.5 * u.norm_squared()
            + 0.5 * v.norm_squared()
            + pow_sum(w.as_slice(), b2) / b2
            + r.norm_squared() / (2.0 * self.lambda);
        let gu = u + sbar.component_mul(&g);
        let gv = Vector::from_fn(v.len(), |k, _| v[k] + w[k] * ug[k]);
        let gw = Vector::from_fn(w.len(), |k, _| {
            let wk = w[k];
            let pow = if wk == 0.0 { 0.0 } else { wk.abs().powf(b2 - 2.0) * wk };
            pow + v[k] * ug[k]
        });
        Ok(ThreeFactorEval {
            value,
            gu,
            gv: gv.into(),
            gw: gw.into(),
        })
    }

    fn split(&self, z: &Vector) -> (Vector, GroupedVector, GroupedVector) {
        let (n, k) = (self.a.cols(), self.groups.len());
        (
            z.rows(0, n).into_owned(),
            GroupedVector::new(z.rows(n, k).into_owned()),
            GroupedVector::new(z.rows(n + k, k).into_owned()),
        )
    }
}

impl SmoothObjective for ThreeFactor {
    fn dim(&self) -> usize {
        self.a.cols() + 2 * self.groups.len()
    }

    fn value_grad(&self, z: &Vector) -> Result<(f64, Vector)> {
        check_len("outer variable", self.dim(), z.len())?;
        let (u, v, w) = self.split(z);
        let e = self.objective(&u, &v, &w)?;
        let (n, k) = (u.len(), v.len());
        let mut g = Vector::zeros(n + 2 * k);
        g.rows_mut(0, n).copy_from(&e.gu);
        g.rows_mut(n, k).copy_from(e.gv.as_vector());
        g.rows_mut(n + k, k).copy_from(e.gw.as_vector());
        Ok((e.value, g))
    }
}

/// Condition number `|μ_max|/|μ_min|` of the symmetrized finite-difference
/// Hessian at `z`.
pub fn hessian_condition(obj: &dyn SmoothObjective, z: &Vector, h: f64) -> Result<f64> {
    let n = obj.dim();
    check_len("point", n, z.len())?;
    let mut hess = Matrix::zeros(n, n);
    for j in 0..n {
        let mut zp = z.clone();
        let mut zm = z.clone();
        zp[j] += h;
        zm[j] -= h;
        let gp = obj.value_grad(&zp)?.1;
        let gm = obj.value_grad(&zm)?.1;
        hess.set_column(j, &((gp - gm) / (2.0 * h)));
    }
    let sym = (&hess + hess.transpose()) * 0.5;
    let eig = sym.symmetric_eigenvalues();
    let big = eig.iter().fold(0.0f64, |m, e| m.max(e.abs()));
    let small = eig.iter().fold(f64::INFINITY, |m, e| m.min(e.abs()));
    Ok(big / small)
}

/// Settings for the restarted Option-2 solve.
#[derive(Debug, Clone)]
pub struct LqSolveConfig {
    pub restarts: usize,
    pub outer: OuterConfig,
    /// Closed-form factor initialization from this point for the first run.
    pub warm_start: Option<Vector>,
    pub seed: u64,
}

impl Default for LqSolveConfig {
    fn default() -> Self {
        Self {
            restarts: 3,
            outer: OuterConfig {
                max_iter: 3000,
                grad_tol: 1e-9,
                ..OuterConfig::default()
            },
            warm_start: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LqSolveResult {
    pub x: Vector,
    /// `(1/q)Σ‖x_g‖^q + (1/2λ)‖Ax − y‖²` at `x`.
    pub objective: f64,
    pub runs: Vec<SolverTrace>,
}

/// Outer point `(v, w)` of the Option-2 form matching `x`; groups of `x`
/// below `floor·max_g ‖x_g‖` are lifted to the floor so they can re-enter.
pub fn option2_init(x: &Vector, gs: &GroupStructure, q: f64, floor: f64) -> Result<Vector> {
    let spec = LqSpec::new(q, FactorCount::Three)?;
    let t: Vec<f64> = group_sq_norms(x, gs).iter().map(|s| s.sqrt()).collect();
    let top = t.iter().cloned().fold(0.0, f64::max);
    let lo = if top > 0.0 { floor * top } else { 1.0 };
    let b = spec.beta();
    let k = gs.len();
    let mut z = Vector::zeros(2 * k);
    for (g, &tg) in t.iter().enumerate() {
        let tg = tg.max(lo);
        z[g] = tg.powf(b / (1.0 + 2.0 * b));
        z[k + g] = tg.powf(1.0 / (1.0 + 2.0 * b));
    }
    Ok(z)
}

/// `ℓ_q` regression through Option 2, keeping the best of `restarts` runs
/// (the first from `warm_start` when given, the rest from random points).
pub fn solve_lq_option2(
    a: &LinearOperator,
    gs: &GroupStructure,
    lambda: f64,
    y: &Vector,
    q: f64,
    cfg: &LqSolveConfig,
) -> Result<LqSolveResult> {
    if cfg.restarts == 0 {
        return Err(Error::InvalidArgument("at least one run is needed".into()));
    }
    let obj = LqOption2::new(a.clone(), gs.clone(), lambda, y.clone(), q)?;
    let score = |x: &Vector| lq_value(x, gs, q) + (a.fwd(x) - y).norm_squared() / (2.0 * lambda);
    let mut best: Option<(f64, Vector)> = None;
    let mut runs = Vec::with_capacity(cfg.restarts);
    let mut last_err = None;
    for r in 0..cfg.restarts {
        let init = match (&cfg.warm_start, r) {
            (Some(x0), 0) => Init::User(option2_init(x0, gs, q, 1e-3)?),
            _ => Init::Uniform {
                low: 0.5,
                high: 1.5,
                seed: cfg.seed.wrapping_add(r as u64),
            },
        };
        let outer = OuterConfig { init, ..cfg.outer.clone() };
        let run = match minimize(&obj, &outer) {
            Ok(run) => run,
            Err(e) => {
                last_err = Some(e);
                continue;
            }
        };
        let x = obj.recover(&run.z)?;
        let f = score(&x);
        runs.push(run.trace);
        if best.as_ref().is_none_or(|(fb, _)| f < *fb) {
            best = Some((f, x));
        }
    }
    match best {
        Some((objective, x)) => Ok(LqSolveResult { x, objective, runs }),
        None => Err(last_err.expect("no run recorded an error")),
    }
}

/// Largest relative deviation between the analytic and central-difference
/// gradients of `obj` at `z`.
pub fn gradient_check(obj: &dyn SmoothObjective, z: &Vector, h: f64) -> Result<f64> {
    let g = obj.value_grad(z)?.1;
    let fd = finite_difference_gradient(obj, z, h)?;
    Ok((&g - &fd).norm() / g.norm().max(fd.norm()).max(1e-300))
}
