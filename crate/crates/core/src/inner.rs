//! Inner linear solves. For a fixed outer variable `v` the marginalized
//! problem is a least-squares problem whose optimality system yields the
//! primal `x` and the dual pair `(α, ξ)` with
//!
//! ```text
//! λξ = Ax − y,   Lx = v̄² ⊙ α,   Lᵀα + Aᵀξ = 0.
//! ```
//!
//! The robust-loss solver uses the opposite sign on `α` (`Lx = −v̄² ⊙ α`).

use crate::error::{check_len, Error, Result};
use crate::groups::{extend, GroupMode, GroupStructure, GroupedVector};
use crate::linalg::{
    condition_estimate, conjugate_gradient, general_solve, sparse_transpose, Matrix, SpdFactor,
    SparseSystem, Vector,
};
use crate::linops::LinearOperator;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerMethod {
    /// Sparse direct when every operator is sparse, otherwise dense direct
    /// below `direct_max` and conjugate gradient above.
    Auto,
    Direct,
    ConjugateGradient,
}

#[derive(Debug, Clone)]
pub struct InnerConfig {
    pub method: InnerMethod,
    pub cg_tol: f64,
    /// `None` means `10 · system size`.
    pub cg_max_iter: Option<usize>,
    /// Added to `v̄²` entries that fall below `zero_ratio · max v̄²`. With the
    /// default of zero such entries route the solve to the extended system.
    pub epsilon_floor: f64,
    pub zero_ratio: f64,
    pub direct_max: usize,
    /// Initial guess for conjugate gradient, used when its length matches.
    pub warm_start: Option<Vector>,
}

impl Default for InnerConfig {
    fn default() -> Self {
        Self {
            method: InnerMethod::Auto,
            cg_tol: 1e-10,
            cg_max_iter: None,
            epsilon_floor: 0.0,
            zero_ratio: 1e-8,
            direct_max: 2000,
            warm_start: None,
        }
    }
}

impl InnerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cg_tol > 0.0) {
            return Err(Error::InvalidArgument("cg_tol must be positive".into()));
        }
        if !(self.epsilon_floor >= 0.0) {
            return Err(Error::InvalidArgument("epsilon_floor must be nonnegative".into()));
        }
        Ok(())
    }

    fn use_direct(&self, size: usize) -> bool {
        match self.method {
            InnerMethod::Direct => true,
            InnerMethod::ConjugateGradient => false,
            InnerMethod::Auto => size <= self.direct_max,
        }
    }

    fn cg_iters(&self, size: usize) -> usize {
        self.cg_max_iter.unwrap_or(10 * size.max(1))
    }

    fn warm(&self, size: usize) -> Option<&Vector> {
        self.warm_start.as_ref().filter(|w| w.len() == size)
    }
}

/// Largest saddle system of the robust solve factorized densely; above it,
/// vanishing weights are floored instead.
const INDEFINITE_DENSE_MAX: usize = 1000;

/// Which linear system produced a solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolvePath {
    Reduced,
    Extended,
    GroupDual,
    Prox,
    Woodbury,
    Trivial,
}

#[derive(Debug, Clone)]
pub struct InnerSolution {
    pub x: Vector,
    pub alpha: Vector,
    pub xi: Vector,
    /// Largest violation (max norm) of the stationarity equations.
    pub kkt_residual: f64,
    /// Dimension of the linear system that was factorized or iterated on.
    pub system_size: usize,
    pub path: SolvePath,
    pub cg_iterations: usize,
    /// Unknowns of the solved system, usable as a warm start.
    pub system_solution: Option<Vector>,
}

/// Returns the primal `x` carried by an inner solution.
pub fn recover_x(sol: &InnerSolution) -> &Vector {
    &sol.x
}

fn check_shapes(a: &LinearOperator, l: &LinearOperator, y: &Vector) -> Result<()> {
    check_len("observations", a.rows(), y.len())?;
    check_len("analysis operator columns", a.cols(), l.cols())
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("λ must be positive, got {lambda}")))
    }
}

/// `v̄²` with the configured floor; the flag reports entries treated as zero.
fn weights_sq(v: &GroupedVector, gs: &GroupStructure, cfg: &InnerConfig) -> (Vector, bool) {
    let mut d = extend(v, gs).map(|x| x * x);
    let max = d.amax();
    let cut = cfg.zero_ratio * cfg.zero_ratio * max;
    let mut degenerate = max == 0.0;
    for di in d.iter_mut() {
        if *di <= cut {
            if cfg.epsilon_floor > 0.0 {
                *di += cfg.epsilon_floor;
            } else {
                degenerate = true;
            }
        }
    }
    (d, degenerate)
}

/// `max(‖λξ − (Ax − y)‖∞, ‖Lx − σ D α‖∞, ‖Lᵀα + Aᵀξ‖∞)`; `sign` is `+1` for
/// the quadratic convention and `-1` for the robust one (where the first
/// equation reads `Ax = y − λ D_w ξ`).
fn quadratic_kkt(
    a: &LinearOperator,
    l: &LinearOperator,
    d: &Vector,
    lambda: f64,
    y: &Vector,
    x: &Vector,
    alpha: &Vector,
    xi: &Vector,
) -> f64 {
    let r1 = (lambda * xi - (a.fwd(x) - y)).amax();
    let r2 = (l.fwd(x) - d.component_mul(alpha)).amax();
    let r3 = (l.adj(alpha) + a.adj(xi)).amax();
    r1.max(r2).max(r3)
}

/// `Mᵀ diag(d) M`, accumulated row by row when `M` is mostly zeros.
fn weighted_gram(m: &Matrix, d: &Vector) -> Matrix {
    let (r, c) = m.shape();
    let nnz = m.iter().filter(|v| **v != 0.0).count();
    if nnz * 8 >= r * c {
        let mut scaled = m.clone();
        for (i, mut row) in scaled.row_iter_mut().enumerate() {
            row *= d[i];
        }
        return m.tr_mul(&scaled);
    }
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); r];
    for (j, col) in m.column_iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            if v != 0.0 {
                rows[i].push((j, v));
            }
        }
    }
    let mut g = Matrix::zeros(c, c);
    for (i, row) in rows.iter().enumerate() {
        for &(a, va) in row {
            let s = d[i] * va;
            for &(b, vb) in row {
                g[(a, b)] += s * vb;
            }
        }
    }
    g
}

fn a_weighted_gram(a: &LinearOperator, d: &Vector) -> Matrix {
    // A diag(d) Aᵀ
    weighted_gram(&a.to_dense().transpose(), d)
}

fn at_weighted_gram(a: &LinearOperator, d: &Vector) -> Matrix {
    // Aᵀ diag(d) A
    weighted_gram(&a.to_dense(), d)
}

/// `Σ scale · Mᵀ diag(d) M + diag(extra)` assembled sparsely; `None` when an
/// operator has no sparse form.
fn sparse_gram(
    n: usize,
    terms: &[(&LinearOperator, Option<&Vector>, f64)],
    extra: Option<&Vector>,
) -> Option<SparseSystem> {
    let mut sys = SparseSystem::new(n);
    for &(op, d, scale) in terms {
        sys.add_weighted_gram(0, &op.sparse_rows()?, d, scale);
    }
    if let Some(e) = extra {
        sys.add_diagonal(0, e, 1.0);
    }
    Some(sys)
}

/// `Σ scale · M diag(d) Mᵀ + diag(extra)`, the row-space counterpart of
/// [`sparse_gram`].
fn sparse_outer_gram(
    n: usize,
    terms: &[(&LinearOperator, Option<&Vector>, f64)],
    extra: Option<&Vector>,
) -> Option<SparseSystem> {
    let mut sys = SparseSystem::new(n);
    for &(op, d, scale) in terms {
        let cols = sparse_transpose(&op.sparse_rows()?, op.cols());
        sys.add_weighted_gram(0, &cols, d, scale);
    }
    if let Some(e) = extra {
        sys.add_diagonal(0, e, 1.0);
    }
    Some(sys)
}

/// Solves an SPD system by sparse Cholesky when `sparse()` assembles one,
/// else by dense Cholesky on `build()` or by CG on `apply`.
fn spd_system<B, S, F>(
    cfg: &InnerConfig,
    size: usize,
    rhs: &Vector,
    build: B,
    sparse: S,
    apply: F,
) -> Result<(Vector, usize)>
where
    B: FnOnce() -> Matrix,
    S: FnOnce() -> Option<SparseSystem>,
    F: Fn(&Vector) -> Vector,
{
    if cfg.method != InnerMethod::ConjugateGradient {
        if let Some(sys) = sparse() {
            return Ok((sys.solve_spd(rhs)?, 0));
        }
    }
    if cfg.use_direct(size) {
        let m = build();
        match SpdFactor::new(m.clone()) {
            Ok(f) => Ok((f.solve(rhs), 0)),
            Err(_) => {
                let (x, _) = general_solve(&m, rhs)?;
                Ok((x, 0))
            }
        }
    } else {
        let out = conjugate_gradient(apply, rhs, cfg.warm(size), cfg.cg_tol, cfg.cg_iters(size))?;
        Ok((out.x, out.iterations))
    }
}

/// General quadratic-loss inner solve for `min ‖Lx‖_{1,2} + (1/2λ)‖Ax − y‖²`
/// at fixed `v`. Uses the reduced normal equations
/// `(AᵀA + λ Lᵀ diag(1/v̄²) L) x = Aᵀy` when every `v̄_i` is nonzero and the
/// extended saddle system otherwise.
pub fn solve_quadratic_general(
    a: &LinearOperator,
    l: &LinearOperator,
    gs: &GroupStructure,
    v: &GroupedVector,
    lambda: f64,
    y: &Vector,
    cfg: &InnerConfig,
) -> Result<InnerSolution> {
    check_shapes(a, l, y)?;
    check_lambda(lambda)?;
    gs.require_partition()?;
    check_len("regularizer groups", l.rows(), gs.dim())?;
    v.check(gs)?;
    let (d, degenerate) = weights_sq(v, gs, cfg);
    if degenerate {
        return solve_quadratic_extended(a, l, &d, lambda, y, cfg);
    }
    let n = a.cols();
    let rhs = a.adj(y);
    let inv_d = d.map(|x| 1.0 / x);
    let (x, iters) = spd_system(
        cfg,
        n,
        &rhs,
        || a.gram() + lambda * at_weighted_gram(l, &inv_d),
        || sparse_gram(n, &[(a, None, 1.0), (l, Some(&inv_d), lambda)], None),
        |x| a.adj(&a.fwd(x)) + lambda * l.adj(&l.fwd(x).component_mul(&inv_d)),
    )?;
    let alpha = l.fwd(&x).component_mul(&inv_d);
    let xi = (a.fwd(&x) - y) / lambda;
    let kkt = quadratic_kkt(a, l, &d, lambda, y, &x, &alpha, &xi);
    Ok(InnerSolution {
        system_solution: Some(x.clone()),
        x,
        alpha,
        xi,
        kkt_residual: kkt,
        system_size: n,
        path: SolvePath::Reduced,
        cg_iterations: iters,
    })
}

/// Extended saddle system in the unknowns `(ξ, α, x)`:
///
/// ```text
/// [ −λI   0   A ] [ξ]   [y]
/// [  0   −D   L ] [α] = [0]
/// [  Aᵀ   Lᵀ  0 ] [x]   [0]
/// ```
fn solve_quadratic_extended(
    a: &LinearOperator,
    l: &LinearOperator,
    d: &Vector,
    lambda: f64,
    y: &Vector,
    cfg: &InnerConfig,
) -> Result<InnerSolution> {
    let (m, p, n) = (a.rows(), l.rows(), a.cols());
    let size = m + p + n;
    let mut rhs = Vector::zeros(size);
    rhs.rows_mut(0, m).copy_from(y);
    let sol = if let (Some(ar), Some(lr)) = (a.sparse_rows(), l.sparse_rows()) {
        // zero weights leave α undetermined on null(Lᵀ); a floor far below
        // the other pivots pins it without moving x
        let floor = d.amax().max(1.0) * 1e-14;
        let mut k = SparseSystem::new(size);
        k.add_diagonal(0, &Vector::from_element(m, lambda), -1.0);
        k.add_diagonal(m, &d.map(|x| x.max(floor)), -1.0);
        k.add_symmetric_block(0, m + p, &ar);
        k.add_symmetric_block(m, m + p, &lr);
        k.solve_lu(&rhs)?
    } else if size > cfg.direct_max.max(4000) {
        // the saddle system is indefinite, so for large sizes fall back to a
        // floored reduced solve
        let floor = d.amax().max(1.0) * 1e-14;
        let mut floored_cfg = cfg.clone();
        floored_cfg.epsilon_floor = floor;
        let vv = GroupedVector::new(d.map(|x| (x + floor).sqrt()));
        let gs = GroupStructure::trivial(p);
        return solve_quadratic_general(a, l, &gs, &vv, lambda, y, &floored_cfg);
    } else {
        let ad = a.to_dense();
        let ld = l.to_dense();
        let mut k = Matrix::zeros(size, size);
        for i in 0..m {
            k[(i, i)] = -lambda;
        }
        for i in 0..p {
            k[(m + i, m + i)] = -d[i];
        }
        k.view_mut((0, m + p), (m, n)).copy_from(&ad);
        k.view_mut((m, m + p), (p, n)).copy_from(&ld);
        k.view_mut((m + p, 0), (n, m)).copy_from(&ad.transpose());
        k.view_mut((m + p, m), (n, p)).copy_from(&ld.transpose());
        general_solve(&k, &rhs)?.0
    };
    let xi = sol.rows(0, m).into_owned();
    let alpha = sol.rows(m, p).into_owned();
    let x = sol.rows(m + p, n).into_owned();
    let kkt = quadratic_kkt(a, l, d, lambda, y, &x, &alpha, &xi);
    Ok(InnerSolution {
        x,
        alpha,
        xi,
        kkt_residual: kkt,
        system_size: size,
        path: SolvePath::Extended,
        cg_iterations: 0,
        system_solution: None,
    })
}

/// Group lasso (`L = Id`) through the `m × m` dual system
/// `(A diag(v̄²) Aᵀ + λ I) ξ = −y`, then `α = −Aᵀξ`, `x = v̄² ⊙ α`.
///
/// When `A` is a repeated block operator and `v̄²` is identical on every
/// copy, the single block system is factorized once for all copies.
pub fn solve_grouplasso_dual(
    a: &LinearOperator,
    gs: &GroupStructure,
    v: &GroupedVector,
    lambda: f64,
    y: &Vector,
    cfg: &InnerConfig,
) -> Result<InnerSolution> {
    check_len("observations", a.rows(), y.len())?;
    check_len("groups", a.cols(), gs.dim())?;
    check_lambda(lambda)?;
    gs.require_partition()?;
    v.check(gs)?;
    let d = extend(v, gs).map(|x| x * x + cfg.epsilon_floor * f64::from(x == 0.0));
    let m = a.rows();
    let (xi, iters, size) = match a {
        LinearOperator::Repeated { op, copies } if copies_share_weights(&d, op.cols(), *copies) => {
            let (mb, nb) = (op.rows(), op.cols());
            let d0 = d.rows(0, nb).into_owned();
            let rhs = Matrix::from_fn(mb, *copies, |i, t| -y[t * mb + i]);
            let sys = a_weighted_gram(op, &d0) + lambda * Matrix::identity(mb, mb);
            let sol = match SpdFactor::new(sys.clone()) {
                Ok(f) => f.solve_matrix(&rhs),
                Err(_) => {
                    let mut out = Matrix::zeros(mb, *copies);
                    for t in 0..*copies {
                        let (c, _) = general_solve(&sys, &rhs.column(t).into_owned())?;
                        out.set_column(t, &c);
                    }
                    out
                }
            };
            let mut xi = Vector::zeros(m);
            for t in 0..*copies {
                xi.rows_mut(t * mb, mb).copy_from(&sol.column(t));
            }
            (xi, 0, mb)
        }
        _ => {
            let rhs = -y;
            let (xi, iters) = spd_system(
                cfg,
                m,
                &rhs,
                || a_weighted_gram(a, &d) + lambda * Matrix::identity(m, m),
                || sparse_outer_gram(m, &[(a, Some(&d), 1.0)], Some(&Vector::from_element(m, lambda))),
                |g| a.fwd(&a.adj(g).component_mul(&d)) + lambda * g,
            )?;
            (xi, iters, m)
        }
    };
    let alpha = -a.adj(&xi);
    let x = d.component_mul(&alpha);
    let id = LinearOperator::identity(a.cols());
    let kkt = quadratic_kkt(a, &id, &d, lambda, y, &x, &alpha, &xi);
    Ok(InnerSolution {
        system_solution: Some(xi.clone()),
        x,
        alpha,
        xi,
        kkt_residual: kkt,
        system_size: size,
        path: SolvePath::GroupDual,
        cg_iterations: iters,
    })
}

fn copies_share_weights(d: &Vector, block: usize, copies: usize) -> bool {
    (1..copies).all(|t| (0..block).all(|i| d[t * block + i] == d[i]))
}

/// Analysis prior with `A = Id`: `(λ L Lᵀ + diag(v̄²)) α = L y`,
/// `x = y − λ Lᵀ α`, `ξ = −Lᵀα`.
pub fn solve_analysis_prox(
    l: &LinearOperator,
    gs: &GroupStructure,
    v: &GroupedVector,
    lambda: f64,
    y: &Vector,
    cfg: &InnerConfig,
) -> Result<InnerSolution> {
    check_len("observations", l.cols(), y.len())?;
    check_len("regularizer groups", l.rows(), gs.dim())?;
    check_lambda(lambda)?;
    gs.require_partition()?;
    v.check(gs)?;
    let d = extend(v, gs).map(|x| x * x + cfg.epsilon_floor * f64::from(x == 0.0));
    let p = l.rows();
    let rhs = l.fwd(y);
    // λLLᵀ + D is (nearly) singular on null(Lᵀ) where D vanishes; flooring
    // only moves α along null(Lᵀ), which x = y − λLᵀα does not see
    let floor = d.amax().max(lambda).max(1.0) * 1e-14;
    let floored = d.map(|x| x.max(floor));
    let sparse = || sparse_outer_gram(p, &[(l, None, lambda)], Some(&floored));
    let (alpha, iters) = if d.iter().all(|&x| x > 0.0) {
        spd_system(
            cfg,
            p,
            &rhs,
            || {
                let ld = l.to_dense();
                lambda * (&*ld * ld.transpose()) + Matrix::from_diagonal(&d)
            },
            sparse,
            |a| lambda * l.fwd(&l.adj(a)) + d.component_mul(a),
        )?
    } else if let Some(sys) = sparse() {
        (sys.solve_spd(&rhs)?, 0)
    } else {
        let ld = l.to_dense();
        let sys = lambda * (&*ld * ld.transpose()) + Matrix::from_diagonal(&d);
        (general_solve(&sys, &rhs)?.0, 0)
    };
    let xi = -l.adj(&alpha);
    let x = y + lambda * &xi;
    let id = LinearOperator::identity(y.len());
    let kkt = quadratic_kkt(&id, l, &d, lambda, y, &x, &alpha, &xi);
    Ok(InnerSolution {
        system_solution: Some(alpha.clone()),
        x,
        alpha,
        xi,
        kkt_residual: kkt,
        system_size: p,
        path: SolvePath::Prox,
        cg_iterations: iters,
    })
}

/// Diagonal `W = Lᵀ diag(1/v̄²) L` of the weighted block extractor:
/// `W_ii = Σ_{g ∋ i} s_g² / v_g²`.
pub fn woodbury_diagonal(groups: &GroupStructure, v: &GroupedVector) -> Vector {
    let w = groups.weights();
    Vector::from_fn(groups.dim(), |i, _| {
        groups
            .groups_of(i)
            .iter()
            .map(|&g| w[g] * w[g] / (v[g] * v[g]))
            .sum()
    })
}

/// Overlapping group lasso with `L` the weighted block extractor of
/// `groups`. The `n × n` reduced system is inverted through the `m × m`
/// matrix `λ I + A W⁻¹ Aᵀ`. Falls back to the general solver when some
/// `v_g` vanishes or the groups do not cover every index.
pub fn solve_overlap_woodbury(
    a: &LinearOperator,
    groups: &GroupStructure,
    v: &GroupedVector,
    lambda: f64,
    y: &Vector,
    cfg: &InnerConfig,
) -> Result<InnerSolution> {
    check_len("observations", a.rows(), y.len())?;
    check_len("groups", a.cols(), groups.dim())?;
    check_lambda(lambda)?;
    v.check(groups)?;
    let l = crate::linops::block_extract(groups, a.cols())?;
    let blocks = groups.stacked_blocks();
    if !groups.covers() || v.iter().any(|&x| x == 0.0) {
        return solve_quadratic_general(a, &l, &blocks, v, lambda, y, cfg);
    }
    let m = a.rows();
    let winv = woodbury_diagonal(groups, v).map(|x| 1.0 / x);
    let (g, iters) = spd_system(
        cfg,
        m,
        y,
        || a_weighted_gram(a, &winv) + lambda * Matrix::identity(m, m),
        || sparse_outer_gram(m, &[(a, Some(&winv), 1.0)], Some(&Vector::from_element(m, lambda))),
        |g| a.fwd(&a.adj(g).component_mul(&winv)) + lambda * g,
    )?;
    let x = a.adj(&g).component_mul(&winv);
    let d = extend(v, &blocks).map(|x| x * x);
    let alpha = l.fwd(&x).component_div(&d);
    let xi = (a.fwd(&x) - y) / lambda;
    let kkt = quadratic_kkt(a, &l, &d, lambda, y, &x, &alpha, &xi);
    Ok(InnerSolution {
        system_solution: Some(g),
        x,
        alpha,
        xi,
        kkt_residual: kkt,
        system_size: m,
        path: SolvePath::Woodbury,
        cg_iterations: iters,
    })
}

/// Robust loss `min ‖Lx‖_{1,2} + (1/λ) Σ_h ‖(Ax − y)_h‖` with both terms in
/// quadratic variational form at fixed `(v, w)`:
///
/// ```text
/// [ D_v   0    L ] [α]   [0]
/// [  0  λD_w   A ] [ξ] = [y]
/// [ Lᵀ   Aᵀ    0 ] [x]   [0]
/// ```
///
/// so `Lx = −v̄² ⊙ α` and `Ax = y − λ w̄² ⊙ ξ`.
#[allow(clippy::too_many_arguments)]
pub fn solve_robust(
    a: &LinearOperator,
    l: &LinearOperator,
    reg_groups: &GroupStructure,
    loss_groups: &GroupStructure,
    v: &GroupedVector,
    w: &GroupedVector,
    lambda: f64,
    y: &Vector,
    cfg: &InnerConfig,
) -> Result<InnerSolution> {
    check_shapes(a, l, y)?;
    check_lambda(lambda)?;
    reg_groups.require_partition()?;
    if loss_groups.mode() != GroupMode::Partition {
        return Err(Error::NotPartition("loss groups must partition the observations".into()));
    }
    check_len("regularizer groups", l.rows(), reg_groups.dim())?;
    check_len("loss groups", a.rows(), loss_groups.dim())?;
    v.check(reg_groups)?;
    w.check(loss_groups)?;
    let (dv, deg_v) = weights_sq(v, reg_groups, cfg);
    let (dw, deg_w) = weights_sq(w, loss_groups, cfg);
    let (m, p, n) = (a.rows(), l.rows(), a.cols());
    // with A = Id the floored prox branch below is cheaper than any saddle solve
    let sparse_ops = match a.is_identity() {
        true => None,
        false => a.sparse_rows().zip(l.sparse_rows()),
    };
    let large = m + p + n > INDEFINITE_DENSE_MAX;
    if (deg_v || deg_w) && large && sparse_ops.is_none() && cfg.epsilon_floor == 0.0 {
        // the dense indefinite factorization is too costly here, so floor the
        // vanishing weights and take a reduced path instead
        let mut floored = cfg.clone();
        floored.epsilon_floor = 1e-14 * dv.amax().max(dw.amax()).max(1.0);
        return solve_robust(a, l, reg_groups, loss_groups, v, w, lambda, y, &floored);
    }
    let (x, alpha, xi, size, path, iters) = if deg_v || deg_w {
        let size = m + p + n;
        let mut rhs = Vector::zeros(size);
        rhs.rows_mut(p, m).copy_from(y);
        let sol = if let Some((ar, lr)) = sparse_ops {
            let floor = 1e-14 * dv.amax().max(lambda * dw.amax()).max(1.0);
            let mut k = SparseSystem::new(size);
            k.add_diagonal(0, &dv.map(|x| x.max(floor)), 1.0);
            k.add_diagonal(p, &dw.map(|x| (lambda * x).max(floor)), 1.0);
            k.add_symmetric_block(0, p + m, &lr);
            k.add_symmetric_block(p, p + m, &ar);
            k.solve_lu(&rhs)?
        } else {
            let ad = a.to_dense();
            let ld = l.to_dense();
            let mut k = Matrix::zeros(size, size);
            for i in 0..p {
                k[(i, i)] = dv[i];
            }
            for i in 0..m {
                k[(p + i, p + i)] = lambda * dw[i];
            }
            k.view_mut((0, p + m), (p, n)).copy_from(&ld);
            k.view_mut((p, p + m), (m, n)).copy_from(&ad);
            k.view_mut((p + m, 0), (n, p)).copy_from(&ld.transpose());
            k.view_mut((p + m, p), (n, m)).copy_from(&ad.transpose());
            general_solve(&k, &rhs)?.0
        };
        (
            sol.rows(p + m, n).into_owned(),
            sol.rows(0, p).into_owned(),
            sol.rows(p, m).into_owned(),
            size,
            SolvePath::Extended,
            0,
        )
    } else if a.is_identity() && (p <= n || cfg.epsilon_floor > 0.0) {
        // (D_v + λ L D_w Lᵀ) α = −L y,  ξ = −Lᵀα,  x = y − λ D_w ξ; a floor
        // only perturbs this system additively
        let rhs = -l.fwd(y);
        let (alpha, iters) = spd_system(
            cfg,
            p,
            &rhs,
            || Matrix::from_diagonal(&dv) + lambda * a_weighted_gram(l, &dw),
            || sparse_outer_gram(p, &[(l, Some(&dw), lambda)], Some(&dv)),
            |al| dv.component_mul(al) + lambda * l.fwd(&l.adj(al).component_mul(&dw)),
        )?;
        let xi = -l.adj(&alpha);
        let x = y - lambda * dw.component_mul(&xi);
        (x, alpha, xi, p, SolvePath::Prox, iters)
    } else {
        // (λ Lᵀ D_v⁻¹ L + Aᵀ D_w⁻¹ A) x = Aᵀ D_w⁻¹ y
        let inv_v = dv.map(|x| 1.0 / x);
        let inv_w = dw.map(|x| 1.0 / x);
        let rhs = a.adj(&y.component_mul(&inv_w));
        let (x, iters) = spd_system(
            cfg,
            n,
            &rhs,
            || lambda * at_weighted_gram(l, &inv_v) + at_weighted_gram(a, &inv_w),
            || sparse_gram(n, &[(l, Some(&inv_v), lambda), (a, Some(&inv_w), 1.0)], None),
            |x| {
                lambda * l.adj(&l.fwd(x).component_mul(&inv_v))
                    + a.adj(&a.fwd(x).component_mul(&inv_w))
            },
        )?;
        let alpha = -l.fwd(&x).component_mul(&inv_v);
        let xi = (y - a.fwd(&x)).component_mul(&inv_w) / lambda;
        (x, alpha, xi, n, SolvePath::Reduced, iters)
    };
    let r1 = (a.fwd(&x) - y + lambda * dw.component_mul(&xi)).amax();
    let r2 = (l.fwd(&x) + dv.component_mul(&alpha)).amax();
    let r3 = (l.adj(&alpha) + a.adj(&xi)).amax();
    Ok(InnerSolution {
        system_solution: None,
        x,
        alpha,
        xi,
        kkt_residual: r1.max(r2).max(r3),
        system_size: size,
        path,
        cg_iterations: iters,
    })
}

/// Equality-constrained inner problem `min ½‖Lx / v̄‖² s.t. Ax = y`, the
/// marginalized form of `min ‖Lx‖_{1,2} s.t. Ax = y`. Returns `α = Lx / v̄²`
/// (extended form when `v̄` has zeros) and the multiplier `ξ` with
/// `Lᵀα + Aᵀξ = 0`.
pub fn solve_basis_pursuit(
    a: &LinearOperator,
    l: &LinearOperator,
    gs: &GroupStructure,
    v: &GroupedVector,
    y: &Vector,
    cfg: &InnerConfig,
) -> Result<InnerSolution> {
    check_shapes(a, l, y)?;
    gs.require_partition()?;
    check_len("regularizer groups", l.rows(), gs.dim())?;
    v.check(gs)?;
    if v.iter().all(|&x| x == 0.0) {
        return Err(Error::InvalidArgument("basis pursuit needs v ≠ 0".into()));
    }
    let (m, p, n) = (a.rows(), l.rows(), a.cols());
    let ad = a.to_dense().into_owned();
    let svd = ad.clone().svd(true, false);
    let smax = svd.singular_values.max();
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > smax * 1e-12 * (m.max(n) as f64))
        .count();
    if rank < m {
        let u = svd.u.as_ref().expect("left singular vectors");
        let ur = u.columns(0, rank);
        let proj = &ur * ur.tr_mul(y);
        if (y - proj).norm() > 1e-9 * (1.0 + y.norm()) {
            return Err(Error::RankDeficient { rank, rows: m });
        }
    }
    let (d, degenerate) = weights_sq(v, gs, cfg);
    let (x, alpha, xi, size, path) = if degenerate {
        // [−D  L  0; Lᵀ 0 Aᵀ; 0 A 0] (α, x, ξ) = (0, 0, y)
        let size = p + n + m;
        let ld = l.to_dense();
        let mut k = Matrix::zeros(size, size);
        for i in 0..p {
            k[(i, i)] = -d[i];
        }
        k.view_mut((0, p), (p, n)).copy_from(&ld);
        k.view_mut((p, 0), (n, p)).copy_from(&ld.transpose());
        k.view_mut((p, p + n), (n, m)).copy_from(&ad.transpose());
        k.view_mut((p + n, p), (m, n)).copy_from(&ad);
        let mut rhs = Vector::zeros(size);
        rhs.rows_mut(p + n, m).copy_from(y);
        let (sol, _) = general_solve(&k, &rhs)?;
        (
            sol.rows(p, n).into_owned(),
            sol.rows(0, p).into_owned(),
            sol.rows(p + n, m).into_owned(),
            size,
            SolvePath::Extended,
        )
    } else {
        // [Lᵀ D⁻¹ L  Aᵀ; A  0] (x, ξ) = (0, y)
        let size = n + m;
        let inv_d = d.map(|x| 1.0 / x);
        let mut k = Matrix::zeros(size, size);
        k.view_mut((0, 0), (n, n)).copy_from(&at_weighted_gram(l, &inv_d));
        k.view_mut((0, n), (n, m)).copy_from(&ad.transpose());
        k.view_mut((n, 0), (m, n)).copy_from(&ad);
        let mut rhs = Vector::zeros(size);
        rhs.rows_mut(n, m).copy_from(y);
        let (sol, _) = general_solve(&k, &rhs)?;
        let x = sol.rows(0, n).into_owned();
        let alpha = l.fwd(&x).component_mul(&inv_d);
        (x, alpha, sol.rows(n, m).into_owned(), size, SolvePath::Reduced)
    };
    let feas = (a.fwd(&x) - y).amax();
    if feas > 1e-7 * (1.0 + y.amax()) {
        return Err(Error::Infeasible(format!(
            "no x with Ax = y on the support of v (residual {feas:.3e})"
        )));
    }
    let r2 = (l.fwd(&x) - d.component_mul(&alpha)).amax();
    let r3 = (l.adj(&alpha) + a.adj(&xi)).amax();
    Ok(InnerSolution {
        system_solution: None,
        x,
        alpha,
        xi,
        kkt_residual: feas.max(r2).max(r3),
        system_size: size,
        path,
        cg_iterations: 0,
    })
}

/// Multitask inner system `(A diag(v²) Aᵀ + (1/λ) W Wᵀ) α = −Y`, solved
/// column-wise with one factorization; `X = −diag(v²) Aᵀ α`.
#[derive(Debug, Clone)]
pub struct MultitaskSolution {
    pub alpha: Matrix,
    pub x: Matrix,
    pub residual: f64,
}

pub fn solve_multitask_nuclear(
    a: &Matrix,
    v: &Vector,
    w: &Matrix,
    lambda: f64,
    y: &Matrix,
    cfg: &InnerConfig,
) -> Result<MultitaskSolution> {
    check_lambda(lambda)?;
    let (m, n) = a.shape();
    check_len("multitask weights", n, v.len())?;
    check_len("multitask observations", m, y.nrows())?;
    check_len("nuclear factor rows", m, w.nrows())?;
    check_len("nuclear factor columns", m, w.ncols())?;
    let d = v.map(|x| x * x);
    let op = LinearOperator::Dense(a.clone());
    let mut sys = a_weighted_gram(&op, &d) + (w * w.transpose()) / lambda;
    let rhs = -y;
    let alpha = match SpdFactor::new(sys.clone()) {
        Ok(f) => f.solve_matrix(&rhs),
        Err(_) => {
            let eps = if cfg.epsilon_floor > 0.0 {
                cfg.epsilon_floor
            } else {
                1e-12 * (1.0 + sys.trace().abs() / m as f64)
            };
            for i in 0..m {
                sys[(i, i)] += eps;
            }
            SpdFactor::new(sys.clone())
                .map_err(|_| Error::Singular {
                    condition: condition_estimate(&sys),
                })?
                .solve_matrix(&rhs)
        }
    };
    let residual = (&sys * &alpha + y).amax();
    let mut x = -(a.tr_mul(&alpha));
    for (i, mut row) in x.row_iter_mut().enumerate() {
        row *= d[i];
    }
    Ok(MultitaskSolution { alpha, x, residual })
}

/// Chooses the cheapest applicable quadratic-loss inner solver.
pub fn solve_quadratic(
    a: &LinearOperator,
    l: &LinearOperator,
    gs: &GroupStructure,
    v: &GroupedVector,
    lambda: f64,
    y: &Vector,
    cfg: &InnerConfig,
) -> Result<InnerSolution> {
    if l.is_identity() && (a.rows() < a.cols() || matches!(a, LinearOperator::Repeated { .. })) {
        return solve_grouplasso_dual(a, gs, v, lambda, y, cfg);
    }
    if a.is_identity() {
        // the prox system stays SPD under a floor, unlike the saddle system the
        // general solver switches to on vanishing weights
        let sparse_degenerate = || {
            l.has_sparse_form()
                && v.check(gs).is_ok()
                && gs.require_partition().is_ok()
                && weights_sq(v, gs, cfg).1
        };
        if l.rows() < l.cols() || sparse_degenerate() {
            return solve_analysis_prox(l, gs, v, lambda, y, cfg);
        }
    }
    solve_quadratic_general(a, l, gs, v, lambda, y, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linops::{block_extract, Grad2DSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar(x: f64) -> Vector {
        Vector::from_vec(vec![x])
    }

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.random::<f64>() * 2.0 - 1.0)
    }

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vector {
        Vector::from_fn(n, |_, _| rng.random::<f64>() * 2.0 - 1.0)
    }

    fn rand_pos(rng: &mut ChaCha8Rng, n: usize) -> GroupedVector {
        GroupedVector::new(Vector::from_fn(n, |_, _| 0.5 + rng.random::<f64>()))
    }

    #[test]
    fn sparse_weighted_gram_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let l = LinearOperator::grad2d(Grad2DSpec::new(3, 4, 2));
        let d = Vector::from_fn(l.rows(), |_, _| rng.random::<f64>());
        let dense = l.to_dense();
        let expect = dense.transpose() * Matrix::from_diagonal(&d) * dense.as_ref();
        assert!((at_weighted_gram(&l, &d) - &expect).amax() < 1e-13);
        let a = LinearOperator::dense(rand_mat(&mut rng, 4, 6));
        let e = Vector::from_fn(6, |_, _| rng.random::<f64>());
        let ad = a.to_dense();
        let expect = ad.as_ref() * Matrix::from_diagonal(&e) * ad.transpose();
        assert!((a_weighted_gram(&a, &e) - expect).amax() < 1e-13);
    }

    #[test]
    fn large_degenerate_robust_solve_is_floored() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let (h, w, c) = (10, 10, 3);
        let n = h * w * c;
        let l = LinearOperator::grad2d(Grad2DSpec::new(h, w, c));
        let gs = GroupStructure::gradient_pixels(h, w, c);
        let lg = GroupStructure::rows_across(h * w, c);
        let mut v = rand_pos(&mut rng, gs.len());
        for g in (0..gs.len()).step_by(3) {
            v[g] = 0.0;
        }
        let wv = rand_pos(&mut rng, lg.len());
        let y = Vector::from_fn(n, |_, _| rng.random::<f64>());
        let a = LinearOperator::identity(n);
        let cfg = InnerConfig::default();
        let s = solve_robust(&a, &l, &gs, &lg, &v, &wv, 0.7, &y, &cfg).unwrap();
        assert!(n + l.rows() + n > INDEFINITE_DENSE_MAX);
        assert_ne!(s.path, SolvePath::Extended);
        assert!(s.kkt_residual < 1e-8, "{}", s.kkt_residual);
        // groups with v = 0 have zero gradient
        let lx = l.fwd(&s.x);
        for g in (0..gs.len()).step_by(3) {
            let norm: f64 = gs.group(g).iter().map(|&i| lx[i] * lx[i]).sum::<f64>().sqrt();
            assert!(norm < 1e-9, "group {g}: {norm}");
        }
    }

    #[test]
    fn one_dimensional_lasso() {
        let a = LinearOperator::dense(Matrix::from_element(1, 1, 1.0));
        let l = LinearOperator::identity(1);
        let gs = GroupStructure::trivial(1);
        let v = GroupedVector::from_vec(vec![1.0]);
        let cfg = InnerConfig::default();
        let s = solve_quadratic_general(&a, &l, &gs, &v, 1.0, &scalar(2.0), &cfg).unwrap();
        assert!((s.x[0] - 1.0).abs() < 1e-14);
        assert!((s.xi[0] + 1.0).abs() < 1e-14);
        assert!((s.alpha[0] - 1.0).abs() < 1e-14);
        let d = solve_grouplasso_dual(&a, &gs, &v, 1.0, &scalar(2.0), &cfg).unwrap();
        assert!((d.x[0] - 1.0).abs() < 1e-14 && (d.xi[0] + 1.0).abs() < 1e-14);
        let p = solve_analysis_prox(&l, &gs, &v, 1.0, &scalar(2.0), &cfg).unwrap();
        assert!((p.x[0] - 1.0).abs() < 1e-14 && (p.alpha[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn zero_data_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = LinearOperator::dense(rand_mat(&mut rng, 4, 6));
        let l = LinearOperator::identity(6);
        let gs = GroupStructure::trivial(6);
        let v = rand_pos(&mut rng, 6);
        let y = Vector::zeros(4);
        let cfg = InnerConfig::default();
        let s = solve_quadratic_general(&a, &l, &gs, &v, 0.5, &y, &cfg).unwrap();
        assert_eq!(s.x.amax(), 0.0);
        assert_eq!(s.alpha.amax(), 0.0);
        assert_eq!(s.xi.amax(), 0.0);
        let p = solve_analysis_prox(&l, &gs, &v, 0.5, &Vector::zeros(6), &cfg).unwrap();
        assert_eq!(p.x.amax(), 0.0);
    }

    #[test]
    fn zero_v_dual_and_extended() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = LinearOperator::dense(rand_mat(&mut rng, 3, 5));
        let gs = GroupStructure::trivial(5);
        let y = rand_vec(&mut rng, 3);
        let v = GroupedVector::zeros(5);
        let cfg = InnerConfig::default();
        let d = solve_grouplasso_dual(&a, &gs, &v, 2.0, &y, &cfg).unwrap();
        assert!((d.xi.clone() + &y / 2.0).amax() < 1e-14);
        assert_eq!(d.x.amax(), 0.0);
        let mut half = rand_pos(&mut rng, 5);
        half[1] = 0.0;
        half[3] = 0.0;
        let l = LinearOperator::identity(5);
        let e = solve_quadratic_general(&a, &l, &gs, &half, 2.0, &y, &cfg).unwrap();
        assert_eq!(e.path, SolvePath::Extended);
        assert!(e.kkt_residual < 1e-12);
        assert!(e.x[1].abs() < 1e-14 && e.x[3].abs() < 1e-14);
        let d = solve_grouplasso_dual(&a, &gs, &half, 2.0, &y, &cfg).unwrap();
        assert!((d.x - e.x).amax() < 1e-12);
    }

    #[test]
    fn direct_and_cg_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = LinearOperator::dense(rand_mat(&mut rng, 15, 20));
        let l = LinearOperator::dense(rand_mat(&mut rng, 12, 20));
        let gs = GroupStructure::contiguous(&[3, 3, 2, 4]).unwrap();
        let v = rand_pos(&mut rng, 4);
        let y = rand_vec(&mut rng, 15);
        let direct = InnerConfig {
            method: InnerMethod::Direct,
            ..Default::default()
        };
        let cg = InnerConfig {
            method: InnerMethod::ConjugateGradient,
            cg_tol: 1e-13,
            ..Default::default()
        };
        let s1 = solve_quadratic_general(&a, &l, &gs, &v, 0.7, &y, &direct).unwrap();
        let s2 = solve_quadratic_general(&a, &l, &gs, &v, 0.7, &y, &cg).unwrap();
        assert!((&s1.x - &s2.x).amax() < 1e-8);
        assert!(s1.kkt_residual < 1e-8 && s2.kkt_residual < 1e-8);
        assert!(s2.cg_iterations > 0);
    }

    #[test]
    fn grouplasso_dual_matches_general() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = LinearOperator::dense(rand_mat(&mut rng, 10, 40));
        let gs = GroupStructure::contiguous(&[5; 8]).unwrap();
        let v = rand_pos(&mut rng, 8);
        let y = rand_vec(&mut rng, 10);
        let cfg = InnerConfig::default();
        let g = solve_quadratic_general(&a, &LinearOperator::identity(40), &gs, &v, 0.3, &y, &cfg)
            .unwrap();
        let d = solve_grouplasso_dual(&a, &gs, &v, 0.3, &y, &cfg).unwrap();
        assert!((&g.x - &d.x).amax() < 1e-9);
        assert!((&g.alpha - &d.alpha).amax() < 1e-9);
        assert!((&g.xi - &d.xi).amax() < 1e-9);
        assert_eq!(d.system_size, 10);
    }

    #[test]
    fn repeated_dual_shares_factorization() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a0 = rand_mat(&mut rng, 6, 9);
        let a = LinearOperator::repeated(LinearOperator::dense(a0), 3);
        let gs = GroupStructure::rows_across(9, 3);
        let v = rand_pos(&mut rng, 9);
        let y = rand_vec(&mut rng, 18);
        let cfg = InnerConfig::default();
        let d = solve_grouplasso_dual(&a, &gs, &v, 0.4, &y, &cfg).unwrap();
        assert_eq!(d.system_size, 6);
        assert!(d.kkt_residual < 1e-10);
        let dense = LinearOperator::dense(a.to_dense().into_owned());
        let g = solve_grouplasso_dual(&dense, &gs, &v, 0.4, &y, &cfg).unwrap();
        assert!((&g.x - &d.x).amax() < 1e-10);
    }

    #[test]
    fn prox_matches_general_on_tv() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let l = LinearOperator::grad2d(Grad2DSpec::new(8, 8, 1));
        let gs = GroupStructure::gradient_pixels(8, 8, 1);
        let v = rand_pos(&mut rng, 64);
        let y = rand_vec(&mut rng, 64);
        let cfg = InnerConfig::default();
        let p = solve_analysis_prox(&l, &gs, &v, 0.2, &y, &cfg).unwrap();
        let g = solve_quadratic_general(&LinearOperator::identity(64), &l, &gs, &v, 0.2, &y, &cfg)
            .unwrap();
        assert!((&p.x - &g.x).amax() < 1e-9);
        assert!((&p.alpha - &g.alpha).amax() < 1e-9);
        assert!(p.kkt_residual < 1e-9);
    }

    fn as_dense(op: &LinearOperator) -> LinearOperator {
        LinearOperator::dense(op.to_dense().into_owned())
    }

    fn zero_every(v: &mut GroupedVector, k: usize) {
        for g in (0..v.len()).step_by(k) {
            v[g] = 0.0;
        }
    }

    #[test]
    fn sparse_matches_dense_on_masked_tv() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (h, w, c) = (6, 5, 2);
        let n = h * w * c;
        let keep: Vec<usize> = (0..n).filter(|i| i % 3 != 1).collect();
        let a = LinearOperator::mask(n, &keep).unwrap();
        let l = LinearOperator::grad2d(Grad2DSpec::new(h, w, c));
        let gs = GroupStructure::gradient_pixels(h, w, c);
        let y = rand_vec(&mut rng, keep.len());
        let cfg = InnerConfig::default();
        let mut v = rand_pos(&mut rng, gs.len());
        for degenerate in [false, true] {
            if degenerate {
                zero_every(&mut v, 4);
            }
            let s = solve_quadratic_general(&a, &l, &gs, &v, 0.3, &y, &cfg).unwrap();
            let d = solve_quadratic_general(&as_dense(&a), &as_dense(&l), &gs, &v, 0.3, &y, &cfg)
                .unwrap();
            assert_eq!(s.path, d.path);
            assert!((&s.x - &d.x).amax() < 1e-8, "degenerate {degenerate}");
            assert!(s.kkt_residual < 1e-8, "{}", s.kkt_residual);
        }
    }

    #[test]
    fn sparse_prox_matches_dense_with_zero_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let l = LinearOperator::grad2d(Grad2DSpec::new(7, 6, 3));
        let gs = GroupStructure::gradient_pixels(7, 6, 3);
        let n = l.cols();
        let y = rand_vec(&mut rng, n);
        let mut v = rand_pos(&mut rng, gs.len());
        zero_every(&mut v, 3);
        let cfg = InnerConfig::default();
        let id = LinearOperator::identity(n);
        let s = solve_quadratic(&id, &l, &gs, &v, 0.4, &y, &cfg).unwrap();
        assert_eq!(s.path, SolvePath::Prox);
        let d = solve_quadratic_general(&id, &as_dense(&l), &gs, &v, 0.4, &y, &cfg).unwrap();
        assert_eq!(d.path, SolvePath::Extended);
        assert!((&s.x - &d.x).amax() < 1e-8);
        assert!(s.kkt_residual < 1e-8, "{}", s.kkt_residual);
    }

    #[test]
    fn sparse_robust_extended_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let (h, w, c) = (5, 5, 2);
        let n = h * w * c;
        let keep: Vec<usize> = (0..h * w).filter(|i| i % 4 != 0).collect();
        let keep: Vec<usize> = (0..c).flat_map(|t| keep.iter().map(move |i| t * h * w + i)).collect();
        let a = LinearOperator::mask(n, &keep).unwrap();
        let l = LinearOperator::grad2d(Grad2DSpec::new(h, w, c));
        let gs = GroupStructure::gradient_pixels(h, w, c);
        let lg = GroupStructure::rows_across(keep.len() / c, c);
        let y = rand_vec(&mut rng, keep.len());
        let mut v = rand_pos(&mut rng, gs.len());
        let mut wv = rand_pos(&mut rng, lg.len());
        zero_every(&mut v, 3);
        zero_every(&mut wv, 5);
        let cfg = InnerConfig::default();
        let s = solve_robust(&a, &l, &gs, &lg, &v, &wv, 0.6, &y, &cfg).unwrap();
        let d = solve_robust(&as_dense(&a), &as_dense(&l), &gs, &lg, &v, &wv, 0.6, &y, &cfg).unwrap();
        assert_eq!((s.path, d.path), (SolvePath::Extended, SolvePath::Extended));
        assert!((&s.x - &d.x).amax() < 1e-8);
        assert!(s.kkt_residual < 1e-8, "{}", s.kkt_residual);
    }

    #[test]
    fn woodbury_diagonal_example() {
        let gs = GroupStructure::overlapping(3, vec![vec![0, 1], vec![1, 2]], None).unwrap();
        let w = woodbury_diagonal(&gs, &GroupedVector::ones(2));
        assert!((w - Vector::from_vec(vec![2.0, 4.0, 2.0])).amax() < 1e-14);
    }

    #[test]
    fn woodbury_matches_dense_and_dual() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = LinearOperator::dense(rand_mat(&mut rng, 30, 300));
        let mut groups = Vec::new();
        let mut start = 0;
        while start < 300 {
            let end = (start + 12).min(300);
            groups.push((start..end).collect::<Vec<_>>());
            start = end - 2;
            if end == 300 {
                break;
            }
        }
        let gs = GroupStructure::overlapping(300, groups, None).unwrap();
        let v = rand_pos(&mut rng, gs.len());
        let y = rand_vec(&mut rng, 30);
        let cfg = InnerConfig::default();
        let wd = solve_overlap_woodbury(&a, &gs, &v, 0.5, &y, &cfg).unwrap();
        assert_eq!(wd.system_size, 30);
        assert_eq!(wd.path, SolvePath::Woodbury);
        let l = block_extract(&gs, 300).unwrap();
        let g = solve_quadratic_general(&a, &l, &gs.stacked_blocks(), &v, 0.5, &y, &cfg).unwrap();
        assert!((&wd.x - &g.x).amax() < 1e-8);
        assert!(wd.kkt_residual < 1e-8);
        // disjoint groups reduce to the group-lasso dual with rescaled v
        let part = GroupStructure::overlapping(300, (0..30).map(|g| (g * 10..g * 10 + 10).collect()).collect(), None)
            .unwrap();
        let vp = rand_pos(&mut rng, 30);
        let wd = solve_overlap_woodbury(&a, &part, &vp, 0.5, &y, &cfg).unwrap();
        let pgs = GroupStructure::contiguous(&[10; 30]).unwrap();
        let scaled = GroupedVector::new(vp.map(|x| x / 10f64.sqrt()));
        let d = solve_grouplasso_dual(&a, &pgs, &scaled, 0.5, &y, &cfg).unwrap();
        assert!((&wd.x - &d.x).amax() < 1e-9);
    }

    #[test]
    fn woodbury_zero_v_falls_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = LinearOperator::dense(rand_mat(&mut rng, 4, 6));
        let gs = GroupStructure::overlapping(6, vec![vec![0, 1, 2], vec![2, 3], vec![3, 4, 5]], None).unwrap();
        let v = GroupedVector::from_vec(vec![1.0, 0.0, 0.8]);
        let y = rand_vec(&mut rng, 4);
        let s = solve_overlap_woodbury(&a, &gs, &v, 0.5, &y, &InnerConfig::default()).unwrap();
        assert_eq!(s.path, SolvePath::Extended);
        assert!(s.kkt_residual < 1e-10);
    }

    #[test]
    fn robust_zero_data_and_remark_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let l = LinearOperator::grad2d(Grad2DSpec::new(3, 3, 1));
        let rg = GroupStructure::gradient_pixels(3, 3, 1);
        let lg = GroupStructure::trivial(9);
        let v = rand_pos(&mut rng, 9);
        let w = rand_pos(&mut rng, 9);
        let id = LinearOperator::identity(9);
        let cfg = InnerConfig::default();
        let z = solve_robust(&id, &l, &rg, &lg, &v, &w, 0.7, &Vector::zeros(9), &cfg).unwrap();
        assert_eq!(z.x.amax(), 0.0);
        let y = rand_vec(&mut rng, 9);
        let prox = solve_robust(&id, &l, &rg, &lg, &v, &w, 0.7, &y, &cfg).unwrap();
        assert_eq!(prox.path, SolvePath::Reduced);
        // force the reduced general path through a dense copy of the identity
        let dense_id = LinearOperator::dense(Matrix::identity(9, 9));
        let gen = solve_robust(&dense_id, &l, &rg, &lg, &v, &w, 0.7, &y, &cfg).unwrap();
        assert!((&prox.x - &gen.x).amax() < 1e-9);
        assert!(gen.kkt_residual < 1e-10);
        // the A = Id remark system on a square analysis operator
        let l2 = LinearOperator::dense(rand_mat(&mut rng, 6, 9));
        let rg2 = GroupStructure::contiguous(&[2, 2, 2]).unwrap();
        let v2 = rand_pos(&mut rng, 3);
        let r1 = solve_robust(&id, &l2, &rg2, &lg, &v2, &w, 0.7, &y, &cfg).unwrap();
        assert_eq!(r1.path, SolvePath::Prox);
        let r2 = solve_robust(&dense_id, &l2, &rg2, &lg, &v2, &w, 0.7, &y, &cfg).unwrap();
        assert!((&r1.x - &r2.x).amax() < 1e-9);
        assert!((&r1.alpha - &r2.alpha).amax() < 1e-9);
        assert!(r1.kkt_residual < 1e-10);
        let mut w0 = w.clone();
        w0[2] = 0.0;
        let ext = solve_robust(&dense_id, &l2, &rg2, &lg, &v2, &w0, 0.7, &y, &cfg).unwrap();
        assert_eq!(ext.path, SolvePath::Extended);
        assert!(ext.kkt_residual < 1e-10);
        assert!((ext.x[2] - y[2]).abs() < 1e-12);
    }

    #[test]
    fn basis_pursuit_two_variables() {
        let a = LinearOperator::dense(Matrix::from_row_slice(1, 2, &[1.0, 1.0]));
        let l = LinearOperator::identity(2);
        let gs = GroupStructure::trivial(2);
        let cfg = InnerConfig::default();
        let s = solve_basis_pursuit(&a, &l, &gs, &GroupedVector::ones(2), &scalar(2.0), &cfg).unwrap();
        assert!((s.x.clone() - Vector::from_vec(vec![1.0, 1.0])).amax() < 1e-12);
        assert!((s.alpha.clone() - Vector::from_vec(vec![1.0, 1.0])).amax() < 1e-12);
        let psi = 0.5 * s.alpha.norm_squared();
        assert!((psi - 1.0).abs() < 1e-12);
        let z = solve_basis_pursuit(&a, &l, &gs, &GroupedVector::ones(2), &scalar(0.0), &cfg).unwrap();
        assert_eq!(z.x.amax(), 0.0);
        assert!(solve_basis_pursuit(&a, &l, &gs, &GroupedVector::zeros(2), &scalar(1.0), &cfg).is_err());
        let e = solve_basis_pursuit(&a, &l, &gs, &GroupedVector::from_vec(vec![0.0, 2.0]), &scalar(2.0), &cfg)
            .unwrap();
        assert!((e.x.clone() - Vector::from_vec(vec![0.0, 2.0])).amax() < 1e-12);
    }

    #[test]
    fn basis_pursuit_errors_and_large_v_limit() {
        let cfg = InnerConfig::default();
        let a = LinearOperator::dense(Matrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]));
        let l = LinearOperator::identity(2);
        let gs = GroupStructure::trivial(2);
        let bad = Vector::from_vec(vec![1.0, 0.0]);
        assert!(matches!(
            solve_basis_pursuit(&a, &l, &gs, &GroupedVector::ones(2), &bad, &cfg),
            Err(Error::RankDeficient { rank: 1, rows: 2 })
        ));
        let ok = Vector::from_vec(vec![1.0, 2.0]);
        let s = solve_basis_pursuit(&a, &l, &gs, &GroupedVector::ones(2), &ok, &cfg).unwrap();
        assert!((s.x.clone() - Vector::from_vec(vec![0.5, 0.5])).amax() < 1e-10);
        let a1 = LinearOperator::dense(Matrix::from_row_slice(1, 2, &[1.0, 0.0]));
        assert!(matches!(
            solve_basis_pursuit(&a1, &l, &gs, &GroupedVector::from_vec(vec![0.0, 1.0]), &scalar(1.0), &cfg),
            Err(Error::Infeasible(_))
        ));
        // uniform v: minimum-norm interpolant regardless of scale
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let am = rand_mat(&mut rng, 3, 7);
        let y = rand_vec(&mut rng, 3);
        let pinv = am.clone().pseudo_inverse(1e-14).unwrap() * &y;
        for scale in [1.0, 1e3] {
            let s = solve_basis_pursuit(
                &LinearOperator::dense(am.clone()),
                &LinearOperator::identity(7),
                &GroupStructure::trivial(7),
                &GroupedVector::new(Vector::from_element(7, scale)),
                &y,
                &cfg,
            )
            .unwrap();
            assert!((&s.x - &pinv).amax() < 1e-9);
        }
    }

    #[test]
    fn multitask_residual_and_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = rand_mat(&mut rng, 5, 8);
        let v = rand_vec(&mut rng, 8);
        let w = rand_mat(&mut rng, 5, 5);
        let y = rand_mat(&mut rng, 5, 3);
        let cfg = InnerConfig::default();
        let s = solve_multitask_nuclear(&a, &v, &w, 0.6, &y, &cfg).unwrap();
        assert!(s.residual < 1e-10);
        let z = solve_multitask_nuclear(&a, &v, &w, 0.6, &Matrix::zeros(5, 3), &cfg).unwrap();
        assert_eq!(z.alpha.amax(), 0.0);
        // W = Id, T = 1: the dual system with (1/λ) in place of λ
        let y1 = rand_mat(&mut rng, 5, 1);
        let s = solve_multitask_nuclear(&a, &v, &Matrix::identity(5, 5), 0.6, &y1, &cfg).unwrap();
        let d = solve_grouplasso_dual(
            &LinearOperator::dense(a.clone()),
            &GroupStructure::trivial(8),
            &GroupedVector::new(v.clone()),
            1.0 / 0.6,
            &y1.column(0).into_owned(),
            &cfg,
        )
        .unwrap();
        assert!((s.alpha.column(0) - &d.xi).amax() < 1e-10);
        assert!((s.x.column(0) - &d.x).amax() < 1e-10);
        // W = 0 needs the floor only when A diag(v²) Aᵀ is singular
        let s = solve_multitask_nuclear(&a, &v, &Matrix::zeros(5, 5), 0.6, &y, &cfg).unwrap();
        assert!(s.residual < 1e-8);
    }
}
