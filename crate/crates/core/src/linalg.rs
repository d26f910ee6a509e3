//! Dense and sparse factorizations and a matrix-free conjugate gradient used
//! by the inner solvers.

use faer::prelude::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Col, Side};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Rough 2-norm condition number from singular values. Only used for error
/// reporting, so the cost of an SVD is acceptable.
pub fn condition_estimate(m: &Matrix) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0_f64, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solves `m x = b` for symmetric positive definite `m`.
pub fn spd_solve(m: Matrix, b: &Vector) -> Result<Vector> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular {
            condition: condition_estimate(&m),
        })?;
    Ok(chol.solve(b))
}

/// Cholesky factor kept around for repeated solves (ADMM, primal-dual, IRLS
/// with several right-hand sides).
pub struct SpdFactor {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl SpdFactor {
    pub fn new(m: Matrix) -> Result<Self> {
        match m.clone().cholesky() {
            Some(chol) => Ok(Self { chol }),
            None => Err(Error::Singular {
                condition: condition_estimate(&m),
            }),
        }
    }

    pub fn solve(&self, b: &Vector) -> Vector {
        self.chol.solve(b)
    }

    pub fn solve_matrix(&self, b: &Matrix) -> Matrix {
        self.chol.solve(b)
    }
}

/// Solves a general square system with partial-pivoting LU and falls back to
/// an SVD least-squares solution when the matrix is numerically singular.
/// The returned flag is `true` when the fallback was used.
pub fn general_solve(m: &Matrix, b: &Vector) -> Result<(Vector, bool)> {
    let n = m.nrows();
    let scale = m.amax().max(1.0);
    let lu = m.clone().lu();
    if let Some(x) = lu.solve(b) {
        if x.iter().all(|v| v.is_finite()) {
            let res = (m * &x - b).amax();
            if res <= 1e-8 * scale * (1.0 + b.amax()) * (n as f64).sqrt() {
                return Ok((x, false));
            }
        }
    }
    let svd = m.clone().svd(true, true);
    let tol = svd.singular_values.max() * 1e-12 * n as f64;
    let x = svd
        .solve(b, tol)
        .map_err(|_| Error::Singular {
            condition: f64::INFINITY,
        })?;
    Ok((x, true))
}

/// Nonzeros `(column, value)` of each row of a sparse operator.
pub type SparseRows = Vec<Vec<(usize, f64)>>;

/// Rows of `Mᵀ` given the rows of an `r × cols` matrix `M`.
pub fn sparse_transpose(rows: &SparseRows, cols: usize) -> SparseRows {
    let mut out = vec![Vec::new(); cols];
    for (i, row) in rows.iter().enumerate() {
        for &(j, v) in row {
            out[j].push((i, v));
        }
    }
    out
}

/// Square sparse system assembled from coordinate entries; repeated entries
/// are summed.
#[derive(Debug, Clone)]
pub struct SparseSystem {
    dim: usize,
    entries: Vec<Triplet<usize, usize, f64>>,
}

impl SparseSystem {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        if value != 0.0 {
            self.entries.push(Triplet::new(row, col, value));
        }
    }

    /// Adds `scale · diag(d)` starting at `(offset, offset)`.
    pub fn add_diagonal(&mut self, offset: usize, d: &Vector, scale: f64) {
        for (i, &v) in d.iter().enumerate() {
            self.push(offset + i, offset + i, scale * v);
        }
    }

    /// Adds `scale · Mᵀ diag(d) M` at `(offset, offset)`, with `d = 1` when
    /// absent.
    pub fn add_weighted_gram(&mut self, offset: usize, m: &SparseRows, d: Option<&Vector>, scale: f64) {
        for (i, row) in m.iter().enumerate() {
            let s = scale * d.map_or(1.0, |d| d[i]);
            for &(a, va) in row {
                for &(b, vb) in row {
                    self.push(offset + a, offset + b, s * va * vb);
                }
            }
        }
    }

    /// Places `M` at `(row_off, col_off)` and `Mᵀ` at `(col_off, row_off)`.
    pub fn add_symmetric_block(&mut self, row_off: usize, col_off: usize, m: &SparseRows) {
        for (i, row) in m.iter().enumerate() {
            for &(j, v) in row {
                self.push(row_off + i, col_off + j, v);
                self.push(col_off + j, row_off + i, v);
            }
        }
    }

    fn matrix(&self) -> Result<SparseColMat<usize, f64>> {
        SparseColMat::try_new_from_triplets(self.dim, self.dim, &self.entries).map_err(|e| {
            Error::InvalidArgument(format!("sparse assembly failed: {e:?}"))
        })
    }

    /// Sparse Cholesky solve; falls back to LU when the matrix is not
    /// numerically positive definite.
    pub fn solve_spd(&self, b: &Vector) -> Result<Vector> {
        let m = self.matrix()?;
        match m.sp_cholesky(Side::Lower) {
            Ok(f) => finite(self.dim, f.solve(to_col(b))),
            Err(_) => self.solve_lu(b),
        }
    }

    /// Sparse LU with partial pivoting.
    pub fn solve_lu(&self, b: &Vector) -> Result<Vector> {
        let m = self.matrix()?;
        let f = m.sp_lu().map_err(|_| Error::Singular {
            condition: f64::INFINITY,
        })?;
        finite(self.dim, f.solve(to_col(b)))
    }
}

fn to_col(b: &Vector) -> Col<f64> {
    Col::from_fn(b.len(), |i| b[i])
}

fn finite(n: usize, x: Col<f64>) -> Result<Vector> {
    let out = Vector::from_fn(n, |i, _| x[i]);
    if out.iter().all(|v| v.is_finite()) {
        Ok(out)
    } else {
        Err(Error::Singular {
            condition: f64::INFINITY,
        })
    }
}

/// Outcome of a conjugate gradient run.
#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub x: Vector,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Conjugate gradient for a symmetric positive definite operator given as a
/// closure. Starts from `x0` when provided (warm start).
pub fn conjugate_gradient<F>(
    apply: F,
    b: &Vector,
    x0: Option<&Vector>,
    rel_tol: f64,
    max_iter: usize,
) -> Result<CgOutcome>
where
    F: Fn(&Vector) -> Vector,
{
    let b_norm = b.norm();
    let mut x = match x0 {
        Some(x0) if x0.len() == b.len() => x0.clone(),
        _ => Vector::zeros(b.len()),
    };
    if b_norm == 0.0 {
        return Ok(CgOutcome {
            x: Vector::zeros(b.len()),
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut r = b - apply(&x);
    let mut p = r.clone();
    let mut rs = r.norm_squared();
    let mut iterations = 0;
    while iterations < max_iter {
        if rs.sqrt() <= rel_tol * b_norm {
            break;
        }
        let ap = apply(&p);
        let curvature = p.dot(&ap);
        if curvature <= 0.0 {
            return Err(Error::Singular {
                condition: f64::INFINITY,
            });
        }
        let step = rs / curvature;
        x.axpy(step, &p, 1.0);
        r.axpy(-step, &ap, 1.0);
        let rs_new = r.norm_squared();
        p = &r + (rs_new / rs) * &p;
        rs = rs_new;
        iterations += 1;
    }
    // recompute the true residual, the recursive one drifts
    let true_res = (b - apply(&x)).norm() / b_norm;
    if true_res > rel_tol * 10.0 {
        return Err(Error::CgNotConverged {
            residual: true_res,
            iterations,
        });
    }
    Ok(CgOutcome {
        x,
        iterations,
        relative_residual: true_res,
    })
}

/// Largest singular value by power iteration on `AᵀA`.
pub fn power_norm<F, G>(apply: F, adjoint: G, cols: usize, iters: usize, seed: u64) -> f64
where
    F: Fn(&Vector) -> Vector,
    G: Fn(&Vector) -> Vector,
{
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vector::from_fn(cols, |_, _| rng.random::<f64>() - 0.5);
    let mut est = 0.0;
    for _ in 0..iters {
        let nx = x.norm();
        if nx == 0.0 {
            return 0.0;
        }
        x /= nx;
        let y = adjoint(&apply(&x));
        est = y.norm();
        x = y;
    }
    est.sqrt()
}

pub fn inf_norm(v: &Vector) -> f64 {
    v.amax()
}
