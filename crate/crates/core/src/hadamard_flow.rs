//! Plain gradient descent on `G(u, v) = (μ/2)(‖u‖² + ‖v‖²) + F(u ⊙ v̄)` with
//! `F(x) = (1/2λ)‖Ax − y‖²`, the stepsize constants that make it a descent
//! method, and the diagnostics relating it to mirror descent.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_len, Error, Result};
use crate::groups::{extend, group_inner, group_sq_norms, GroupStructure, GroupedVector};
use crate::linalg::Vector;
use crate::linops::LinearOperator;
use crate::trace::{SolverTrace, TraceStatus};

/// Group lasso `μ‖x‖_{1,2} + (1/2λ)‖Ax − y‖²` seen through `x = u ⊙ v̄`.
#[derive(Debug, Clone)]
pub struct HadamardProblem {
    pub a: LinearOperator,
    pub groups: GroupStructure,
    pub y: Vector,
    pub lambda: f64,
    /// Weight `μ` of the quadratic penalty; `0` gives the unregularized flow.
    pub penalty: f64,
}

impl HadamardProblem {
    pub fn new(a: LinearOperator, groups: GroupStructure, y: Vector, lambda: f64) -> Result<Self> {
        check_len("observations", a.rows(), y.len())?;
        check_len("groups", a.cols(), groups.dim())?;
        groups.require_partition()?;
        if !(lambda > 0.0) {
            return Err(Error::InvalidArgument("λ must be positive".into()));
        }
        Ok(Self {
            a,
            groups,
            y,
            lambda,
            penalty: 1.0,
        })
    }

    pub fn with_penalty(mut self, penalty: f64) -> Result<Self> {
        if !(penalty >= 0.0) {
            return Err(Error::InvalidArgument("penalty must be nonnegative".into()));
        }
        self.penalty = penalty;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.a.cols()
    }

    pub fn fit(&self, x: &Vector) -> f64 {
        (self.a.fwd(x) - &self.y).norm_squared() / (2.0 * self.lambda)
    }

    pub fn fit_grad(&self, x: &Vector) -> Vector {
        self.a.adj(&(self.a.fwd(x) - &self.y)) / self.lambda
    }

    /// `Φ(x) = μ‖x‖_{1,2} + F(x)`.
    pub fn objective(&self, x: &Vector) -> f64 {
        let norms: f64 = group_sq_norms(x, &self.groups).iter().map(|s| s.sqrt()).sum();
        self.penalty * norms + self.fit(x)
    }

    /// `‖Aᵀy‖_{∞,2}`; the group lasso solution is zero iff `λ·μ ≥ λ_max`
    /// (with `μ = 1`, iff `λ ≥ λ_max`).
    pub fn lambda_max(&self) -> f64 {
        let aty = self.a.adj(&self.y);
        group_sq_norms(&aty, &self.groups)
            .iter()
            .fold(0.0f64, |m, s| m.max(s.sqrt()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub u: Vector,
    pub v: GroupedVector,
    pub iteration: usize,
}

impl FlowState {
    pub fn new(u: Vector, v: GroupedVector, groups: &GroupStructure) -> Result<Self> {
        check_len("u", groups.dim(), u.len())?;
        v.check(groups)?;
        Ok(Self { u, v, iteration: 0 })
    }

    /// `u₀, v₀ ~ U[low, high]` from two independent streams of `seed`.
    pub fn uniform(groups: &GroupStructure, low: f64, high: f64, seed: u64) -> Self {
        let mut ru = ChaCha8Rng::seed_from_u64(seed);
        let mut rv = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let u = Vector::from_fn(groups.dim(), |_, _| ru.random_range(low..=high));
        let v = Vector::from_fn(groups.len(), |_, _| rv.random_range(low..=high));
        Self {
            u,
            v: GroupedVector::new(v),
            iteration: 0,
        }
    }

    /// Like [`FlowState::uniform`] for trivial groups, but with the larger of
    /// each pair of draws in `u`, so `u₀² − v₀²` has one sign.
    pub fn ordered(n: usize, low: f64, high: f64, seed: u64) -> Self {
        let s = Self::uniform(&GroupStructure::trivial(n), low, high, seed);
        let u = s.u.zip_map(&s.v, f64::max);
        let v = s.u.zip_map(&s.v, f64::min);
        Self {
            u,
            v: GroupedVector::new(v),
            iteration: 0,
        }
    }

    pub fn x(&self, groups: &GroupStructure) -> Vector {
        self.u.component_mul(&extend(&self.v, groups))
    }

    /// `‖u‖² − ‖v‖²`.
    pub fn imbalance(&self) -> f64 {
        self.u.norm_squared() - self.v.norm_squared()
    }

    /// `Σ_g |‖u_g‖² − v_g²|`.
    pub fn imbalance_l1(&self, groups: &GroupStructure) -> f64 {
        group_sq_norms(&self.u, groups)
            .iter()
            .zip(self.v.iter())
            .map(|(u2, v)| (u2 - v * v).abs())
            .sum()
    }
}

/// Value and both partial gradients of `G`.
#[derive(Debug, Clone)]
pub struct FlowEval {
    pub g: f64,
    pub gu: Vector,
    pub gv: Vector,
    pub x: Vector,
    pub fit_grad: Vector,
}

impl FlowEval {
    pub fn grad_norm_sq(&self) -> f64 {
        self.gu.norm_squared() + self.gv.norm_squared()
    }
}

pub fn evaluate(p: &HadamardProblem, s: &FlowState) -> FlowEval {
    let vbar = extend(&s.v, &p.groups);
    let x = s.u.component_mul(&vbar);
    let r = p.a.fwd(&x) - &p.y;
    let fit = r.norm_squared() / (2.0 * p.lambda);
    let fit_grad = p.a.adj(&r) / p.lambda;
    let mu = p.penalty;
    let g = 0.5 * mu * (s.u.norm_squared() + s.v.norm_squared()) + fit;
    let gu = mu * &s.u + vbar.component_mul(&fit_grad);
    let cross = group_inner(&s.u, &fit_grad, &p.groups);
    let gv = Vector::from_fn(s.v.len(), |g, _| mu * s.v[g] + cross[g]);
    FlowEval { g, gu, gv, x, fit_grad }
}

/// One gradient step with stepsize `tau`.
pub fn gd_step(p: &HadamardProblem, s: &FlowState, tau: f64) -> Result<FlowState> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument("stepsize must be positive".into()));
    }
    let e = evaluate(p, s);
    Ok(step_with(s, &e, tau))
}

fn step_with(s: &FlowState, e: &FlowEval, tau: f64) -> FlowState {
    FlowState {
        u: &s.u - tau * &e.gu,
        v: GroupedVector::new(s.v.as_vector() - tau * &e.gv),
        iteration: s.iteration + 1,
    }
}

/// How the gradient bound `K` over the sublevel ball is obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GradientBound {
    /// `‖A‖_{(1,2)→2} (‖A‖_{(1,2)→2} B²/2 + ‖y‖) / λ`, valid on the whole ball.
    Certified,
    /// Twice the largest `‖∇F‖_{∞,2}` over random points of the ball and `x₀`.
    Sampled { samples: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzBounds {
    pub m_f: f64,
    pub k: f64,
    pub b: f64,
    pub m_g: f64,
    pub kappa: f64,
    pub rho: f64,
}

impl LipschitzBounds {
    pub fn tau(&self) -> f64 {
        1.0 / self.m_g
    }

    pub fn tau_contractive(&self) -> f64 {
        1.0 / (self.kappa * self.m_g)
    }
}

/// `max_g ‖A_g‖₂`, the `(1,2) → 2` operator norm.
pub fn block_norm_12_to_2(a: &LinearOperator, groups: &GroupStructure) -> f64 {
    let dense = a.to_dense();
    groups
        .groups()
        .iter()
        .map(|idx| {
            if idx.len() == 1 {
                dense.column(idx[0]).norm()
            } else {
                dense
                    .select_columns(idx.iter())
                    .singular_values()
                    .max()
            }
        })
        .fold(0.0, f64::max)
}

pub fn lipschitz_bounds(
    p: &HadamardProblem,
    s0: &FlowState,
    bound: GradientBound,
) -> Result<LipschitzBounds> {
    if !(p.penalty > 0.0) {
        return Err(Error::InvalidArgument(
            "Lipschitz bounds need a positive penalty".into(),
        ));
    }
    let a12 = block_norm_12_to_2(&p.a, &p.groups);
    let m_f = a12 * a12 / p.lambda;
    let g0 = evaluate(p, s0).g;
    // ½(‖u‖² + ‖v‖²) ≤ G₀/μ along a descent path
    let b2 = 2.0 * g0 / p.penalty;
    let radius = 0.5 * b2;
    let k = match bound {
        GradientBound::Certified => a12 * (a12 * radius + p.y.norm()) / p.lambda,
        GradientBound::Sampled { samples, seed } => {
            let inf2 = |x: &Vector| {
                group_sq_norms(&p.fit_grad(x), &p.groups)
                    .iter()
                    .fold(0.0f64, |m, s| m.max(s.sqrt()))
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut best = inf2(&s0.x(&p.groups));
            for _ in 0..samples {
                let mut x = Vector::from_fn(p.n(), |_, _| rng.random::<f64>() * 2.0 - 1.0);
                let norm: f64 = group_sq_norms(&x, &p.groups).iter().map(|s| s.sqrt()).sum();
                let scale = radius * rng.random::<f64>() / norm.max(f64::MIN_POSITIVE);
                x *= scale;
                best = best.max(inf2(&x));
            }
            2.0 * best
        }
    };
    let m_g = 2.0 * (k.max(p.penalty) + m_f * b2);
    let kappa = ((1.0 + k * k) / m_g).max(1.0);
    let rho = 1.0 - 1.0 / (kappa * m_g);
    Ok(LipschitzBounds {
        m_f,
        k,
        b: b2.sqrt(),
        m_g,
        kappa,
        rho,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    Fixed(f64),
    /// Barzilai–Borwein steps clipped to `[1e-8, 1e8]·tau0`, falling back to
    /// `tau0` when the secant quotient is not positive and finite.
    BarzilaiBorwein { tau0: f64 },
}

/// Per-iteration diagnostics; `records[k]` describes the k-th iterate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowRecord {
    pub iter: usize,
    pub g: f64,
    pub grad_norm: f64,
    pub imbalance: f64,
    pub imbalance_l1: f64,
    pub objective: f64,
    /// `F(x) + 2μ Σ_g ‖u_g‖² v_g² / (‖u_g‖² + v_g²)`.
    pub surrogate: f64,
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct FlowRun {
    pub state: FlowState,
    pub records: Vec<FlowRecord>,
    pub trace: SolverTrace,
}

fn surrogate(p: &HadamardProblem, s: &FlowState, e: &FlowEval) -> f64 {
    let u2 = group_sq_norms(&s.u, &p.groups);
    let h: f64 = u2
        .iter()
        .zip(s.v.iter())
        .map(|(a, v)| {
            let d = a + v * v;
            if d > 0.0 {
                2.0 * a * v * v / d
            } else {
                0.0
            }
        })
        .sum();
    let fit = e.g - 0.5 * p.penalty * (s.u.norm_squared() + s.v.norm_squared());
    fit + p.penalty * h
}

fn record(p: &HadamardProblem, s: &FlowState, e: &FlowEval, step: f64) -> FlowRecord {
    FlowRecord {
        iter: s.iteration,
        g: e.g,
        grad_norm: e.grad_norm_sq().sqrt(),
        imbalance: s.imbalance(),
        imbalance_l1: s.imbalance_l1(&p.groups),
        objective: p.objective(&e.x),
        surrogate: surrogate(p, s, e),
        step,
    }
}

/// Runs `iters` gradient steps from `s0`, recording every iterate.
pub fn run_gd(p: &HadamardProblem, s0: FlowState, rule: StepRule, iters: usize) -> Result<FlowRun> {
    let tau0 = match rule {
        StepRule::Fixed(t) | StepRule::BarzilaiBorwein { tau0: t } => t,
    };
    if !(tau0 > 0.0) {
        return Err(Error::InvalidArgument("stepsize must be positive".into()));
    }
    let clock = Instant::now();
    let mut trace = SolverTrace::new(match rule {
        StepRule::Fixed(_) => "hadamard-gd",
        StepRule::BarzilaiBorwein { .. } => "hadamard-gd-bb",
    });
    let mut s = s0;
    let mut e = evaluate(p, &s);
    let g0 = e.g;
    let mut records = Vec::with_capacity(iters + 1);
    let mut tau = tau0;
    let mut status = TraceStatus::MaxIterations;
    for _ in 0..iters {
        let rec = record(p, &s, &e, tau);
        trace.push(rec.iter, rec.objective, rec.grad_norm, &clock);
        records.push(rec);
        let next = step_with(&s, &e, tau);
        let en = evaluate(p, &next);
        if !en.g.is_finite() || (matches!(rule, StepRule::BarzilaiBorwein { .. }) && en.g > 10.0 * g0.abs().max(f64::MIN_POSITIVE)) {
            status = TraceStatus::Diverged;
            s = next;
            e = en;
            break;
        }
        if let StepRule::BarzilaiBorwein { .. } = rule {
            let su = &next.u - &s.u;
            let sv = next.v.as_vector() - s.v.as_vector();
            let yu = &en.gu - &e.gu;
            let yv = &en.gv - &e.gv;
            let ss = su.norm_squared() + sv.norm_squared();
            let sy = su.dot(&yu) + sv.dot(&yv);
            let bb = ss / sy;
            tau = if bb.is_finite() && bb > 0.0 {
                bb.clamp(1e-8 * tau0, 1e8 * tau0)
            } else {
                tau0
            };
        }
        s = next;
        e = en;
    }
    let rec = record(p, &s, &e, tau);
    trace.push(rec.iter, rec.objective, rec.grad_norm, &clock);
    records.push(rec);
    if status != TraceStatus::Diverged && rec.grad_norm < 1e-12 {
        status = TraceStatus::Converged;
    }
    trace.status = status;
    trace.x = Some(e.x.clone());
    Ok(FlowRun {
        state: s,
        records,
        trace,
    })
}

/// First iteration breaking an inequality, with both sides.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violation {
    pub iter: usize,
    pub lhs: f64,
    pub rhs: f64,
}

fn slack(x: f64) -> f64 {
    1e-12 * (1.0 + x.abs())
}

/// `G_{k+1} ≤ G_k − τ(1 − τM/2)‖∇G_k‖²`, which is `‖∇G_k‖²/(2M)` at `τ = 1/M`.
pub fn check_descent(records: &[FlowRecord], tau: f64, m_g: f64) -> Option<Violation> {
    let c = tau * (1.0 - 0.5 * tau * m_g);
    records.windows(2).find_map(|w| {
        let rhs = w[0].g - c * w[0].grad_norm * w[0].grad_norm;
        (w[1].g > rhs + slack(w[0].g)).then_some(Violation {
            iter: w[0].iter,
            lhs: w[1].g,
            rhs,
        })
    })
}

/// `min_{k≤T} ‖∇G_k‖² ≤ 2M(G₀ − G_{T+1})/T` for every `T ≥ 1`.
pub fn check_min_gradient(records: &[FlowRecord], m_g: f64) -> Option<Violation> {
    let g0 = records.first()?.g;
    let mut best = f64::INFINITY;
    for t in 1..records.len().saturating_sub(1) {
        best = best.min(records[t - 1].grad_norm.powi(2)).min(records[t].grad_norm.powi(2));
        let rhs = 2.0 * m_g * (g0 - records[t + 1].g) / t as f64;
        if best > rhs + slack(g0) {
            return Some(Violation { iter: t, lhs: best, rhs });
        }
    }
    None
}

/// `Σ_{j≥k} ‖∇G_j‖² ≤ (G_k − G_end)/(τ(1 − τM/2))` over the recorded run,
/// which reads `2M(G_k − G_end)` at `τ = 1/M`.
pub fn check_gradient_sum(records: &[FlowRecord], tau: f64, m_g: f64) -> Option<Violation> {
    let g_end = records.last()?.g;
    let inv_c = 1.0 / (tau * (1.0 - 0.5 * tau * m_g));
    let mut tail = 0.0;
    for k in (0..records.len() - 1).rev() {
        tail += records[k].grad_norm.powi(2);
        let rhs = inv_c * (records[k].g - g_end);
        if tail > rhs + inv_c * slack(records[k].g) {
            return Some(Violation { iter: records[k].iter, lhs: tail, rhs });
        }
    }
    None
}

/// `|‖u_k‖² − ‖v_k‖²| ≤ ρᵏ |‖u₀‖² − ‖v₀‖²|`.
pub fn check_contraction(records: &[FlowRecord], rho: f64) -> Option<Violation> {
    let d0 = records.first()?.imbalance.abs();
    let mut bound = d0;
    for r in records {
        let lhs = r.imbalance.abs();
        if lhs > bound + slack(d0) {
            return Some(Violation { iter: r.iter, lhs, rhs: bound });
        }
        bound *= rho;
    }
    None
}

/// Per-step contraction of `Σ_g |‖u_g‖² − v_g²|` by `ρ`.
pub fn check_contraction_l1(records: &[FlowRecord], rho: f64) -> Option<Violation> {
    records.windows(2).find_map(|w| {
        let rhs = rho * w[0].imbalance_l1;
        (w[1].imbalance_l1 > rhs + slack(w[0].imbalance_l1)).then_some(Violation {
            iter: w[1].iter,
            lhs: w[1].imbalance_l1,
            rhs,
        })
    })
}

/// `Φ(x_k) − Φ_k ≤ |‖u_k‖² − ‖v_k‖²|` (scaled by `μ`); pass `componentwise`
/// to compare against `Σ_g |‖u_g‖² − v_g²|` instead.
pub fn check_surrogate_gap(
    records: &[FlowRecord],
    penalty: f64,
    componentwise: bool,
) -> Option<Violation> {
    records.iter().find_map(|r| {
        let lhs = r.objective - r.surrogate;
        let rhs = penalty * if componentwise { r.imbalance_l1 } else { r.imbalance.abs() };
        (lhs > rhs + slack(r.objective)).then_some(Violation { iter: r.iter, lhs, rhs })
    })
}

/// Outcome of a small-step run compared with the mirror flow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MirrorResidual {
    /// `max_k ‖Δ_t arcsinh(x_k/γ(t_k)) + 2∇F(x_k)‖_∞ / (1 + ‖2∇F(x_k)‖_∞)`.
    pub residual: f64,
    /// `max_{k,i} |d_i(t_k) − e^{−2μt_k} d_i(0)| / t_k` with `d = u² − v²`.
    pub conservation_drift: f64,
    pub steps: usize,
}

/// Runs gradient descent with stepsize `tau` up to time `horizon` (with
/// `t_k = kτ`) and measures how far it is from
/// `d/dt ∇η_{γ(t)}(x(t)) = −2∇F(x(t))`, `γ(t) = ½|u₀² − v₀²| e^{−2μt}`.
pub fn mirror_equivalence_residual(
    p: &HadamardProblem,
    s0: &FlowState,
    tau: f64,
    horizon: f64,
) -> Result<MirrorResidual> {
    if !p.groups.is_trivial() {
        return Err(Error::InvalidArgument(
            "the mirror-flow identity needs trivial groups".into(),
        ));
    }
    if !(tau > 0.0 && horizon > 0.0) {
        return Err(Error::InvalidArgument("stepsize and horizon must be positive".into()));
    }
    let d0 = s0.u.component_mul(&s0.u) - s0.v.component_mul(s0.v.as_vector());
    if d0.iter().any(|d| d.abs() < 1e-12) {
        return Err(Error::InvalidArgument(
            "needs |u₀| ≠ |v₀| componentwise".into(),
        ));
    }
    let c = d0.map(|d| 0.5 * d.abs());
    let mu = p.penalty;
    let steps = (horizon / tau).round().max(1.0) as usize;
    let mirror = |x: &Vector, t: f64| {
        let decay = (-2.0 * mu * t).exp();
        Vector::from_fn(x.len(), |i, _| (x[i] / (c[i] * decay)).asinh())
    };
    let mut s = s0.clone();
    let mut e = evaluate(p, &s);
    let mut residual = 0.0f64;
    let mut drift = 0.0f64;
    let mut eta = mirror(&e.x, 0.0);
    for k in 0..steps {
        let next = step_with(&s, &e, tau);
        let en = evaluate(p, &next);
        let t1 = (k + 1) as f64 * tau;
        let eta1 = mirror(&en.x, t1);
        let force = 2.0 * &e.fit_grad;
        let r = ((&eta1 - &eta) / tau + &force).amax() / (1.0 + force.amax());
        residual = residual.max(r);
        let d = next.u.component_mul(&next.u) - next.v.component_mul(next.v.as_vector());
        let expected = (-2.0 * mu * t1).exp() * &d0;
        drift = drift.max((d - expected).amax() / t1);
        s = next;
        e = en;
        eta = eta1;
    }
    Ok(MirrorResidual {
        residual,
        conservation_drift: drift,
        steps,
    })
}
