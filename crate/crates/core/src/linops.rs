//! Linear operators: dense design matrices, masks, image gradients, block
//! extractors and the real-stacked low-pass Fourier system.

use std::borrow::Cow;
use std::f64::consts::PI;
use std::io::{Read, Write};

use crate::error::{check_len, Error, Result};
use crate::groups::GroupStructure;
use crate::linalg::{Matrix, SparseRows, Vector};

/// Image gradient layout. Pixels are stored channel-major, row-major inside a
/// channel: index `t·H·W + i·W + j`. The output stacks, per channel,
/// `D^h x = x_{i,j} − x_{i+1,j}` then `D^v x = x_{i,j} − x_{i,j+1}`, both zero
/// on the last row/column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grad2DSpec {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Grad2DSpec {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
        }
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }
}

/// Low-pass Fourier measurements of a signal sampled on a regular grid of the
/// unit torus in dimension `dim`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FourierSystemSpec {
    pub dim: usize,
    /// Frequencies range over `{-⌊m/2⌋, …, ⌊m/2⌋}` per axis.
    pub cutoff: usize,
    /// Grid points per axis, `θ_k = k / grid`.
    pub grid: usize,
}

impl FourierSystemSpec {
    pub fn frequencies_per_axis(&self) -> usize {
        2 * (self.cutoff / 2) + 1
    }

    pub fn complex_rows(&self) -> usize {
        self.frequencies_per_axis().pow(self.dim as u32)
    }

    pub fn grid_points(&self) -> usize {
        self.grid.pow(self.dim as u32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    Dense,
    Identity,
    Mask,
    Grad2d,
    MultichannelGrad,
    BlockExtract,
    PartialFourierReal,
    Repeated,
    ColumnScaled,
    Stacked,
}

#[derive(Debug, Clone)]
pub enum LinearOperator {
    Dense(Matrix),
    Identity(usize),
    /// Keeps the listed (0-based, sorted) coordinates of a length-`len` vector.
    Mask { len: usize, keep: Vec<usize> },
    Grad2d(Grad2DSpec),
    /// Stacks `scales[g] · x[blocks[g]]` for every block.
    BlockExtract {
        len: usize,
        blocks: Vec<Vec<usize>>,
        scales: Vec<f64>,
    },
    PartialFourier {
        spec: FourierSystemSpec,
        matrix: Matrix,
    },
    /// Block-diagonal `I_copies ⊗ op`, acting on task-major stacked vectors.
    Repeated {
        op: Box<LinearOperator>,
        copies: usize,
    },
    /// `op · diag(scale)`.
    ColumnScaled {
        op: Box<LinearOperator>,
        scale: Vector,
    },
    /// Vertical concatenation of operators sharing the same column count.
    Stacked(Vec<LinearOperator>),
}

impl LinearOperator {
    pub fn dense(m: Matrix) -> Self {
        LinearOperator::Dense(m)
    }

    pub fn identity(n: usize) -> Self {
        LinearOperator::Identity(n)
    }

    /// Mask from 0-based indices.
    pub fn mask(len: usize, keep: &[usize]) -> Result<Self> {
        let mut keep = keep.to_vec();
        keep.sort_unstable();
        keep.dedup();
        if let Some(&bad) = keep.iter().find(|&&i| i >= len) {
            return Err(Error::IndexOutOfRange {
                index: bad,
                dim: len,
            });
        }
        Ok(LinearOperator::Mask { len, keep })
    }

    pub fn grad2d(spec: Grad2DSpec) -> Self {
        LinearOperator::Grad2d(spec)
    }

    pub fn repeated(op: LinearOperator, copies: usize) -> Self {
        LinearOperator::Repeated {
            op: Box::new(op),
            copies,
        }
    }

    pub fn column_scaled(op: LinearOperator, scale: Vector) -> Result<Self> {
        check_len("column scale", op.cols(), scale.len())?;
        Ok(LinearOperator::ColumnScaled {
            op: Box::new(op),
            scale,
        })
    }

    pub fn stacked(ops: Vec<LinearOperator>) -> Result<Self> {
        if let Some(first) = ops.first() {
            for op in &ops[1..] {
                check_len("stacked operator columns", first.cols(), op.cols())?;
            }
        } else {
            return Err(Error::InvalidArgument("empty operator stack".into()));
        }
        Ok(LinearOperator::Stacked(ops))
    }

    pub fn kind(&self) -> OperatorKind {
        match self {
            LinearOperator::Dense(_) => OperatorKind::Dense,
            LinearOperator::Identity(_) => OperatorKind::Identity,
            LinearOperator::Mask { .. } => OperatorKind::Mask,
            LinearOperator::Grad2d(s) if s.channels > 1 => OperatorKind::MultichannelGrad,
            LinearOperator::Grad2d(_) => OperatorKind::Grad2d,
            LinearOperator::BlockExtract { .. } => OperatorKind::BlockExtract,
            LinearOperator::PartialFourier { .. } => OperatorKind::PartialFourierReal,
            LinearOperator::Repeated { .. } => OperatorKind::Repeated,
            LinearOperator::ColumnScaled { .. } => OperatorKind::ColumnScaled,
            LinearOperator::Stacked(_) => OperatorKind::Stacked,
        }
    }

    pub fn rows(&self) -> usize {
        match self {
            LinearOperator::Dense(m) => m.nrows(),
            LinearOperator::Identity(n) => *n,
            LinearOperator::Mask { keep, .. } => keep.len(),
            LinearOperator::Grad2d(s) => 2 * s.channels * s.pixels(),
            LinearOperator::BlockExtract { blocks, .. } => blocks.iter().map(Vec::len).sum(),
            LinearOperator::PartialFourier { matrix, .. } => matrix.nrows(),
            LinearOperator::Repeated { op, copies } => op.rows() * copies,
            LinearOperator::ColumnScaled { op, .. } => op.rows(),
            LinearOperator::Stacked(ops) => ops.iter().map(LinearOperator::rows).sum(),
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            LinearOperator::Dense(m) => m.ncols(),
            LinearOperator::Identity(n) => *n,
            LinearOperator::Mask { len, .. } => *len,
            LinearOperator::Grad2d(s) => s.channels * s.pixels(),
            LinearOperator::BlockExtract { len, .. } => *len,
            LinearOperator::PartialFourier { matrix, .. } => matrix.ncols(),
            LinearOperator::Repeated { op, copies } => op.cols() * copies,
            LinearOperator::ColumnScaled { op, .. } => op.cols(),
            LinearOperator::Stacked(ops) => ops[0].cols(),
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, LinearOperator::Identity(_))
    }

    pub fn apply(&self, x: &Vector) -> Result<Vector> {
        check_len("operator input", self.cols(), x.len())?;
        Ok(self.fwd(x))
    }

    pub fn adjoint(&self, y: &Vector) -> Result<Vector> {
        check_len("adjoint input", self.rows(), y.len())?;
        Ok(self.adj(y))
    }

    /// Forward product without the length check.
    pub(crate) fn fwd(&self, x: &Vector) -> Vector {
        match self {
            LinearOperator::Dense(m) => m * x,
            LinearOperator::Identity(_) => x.clone(),
            LinearOperator::Mask { keep, .. } => {
                Vector::from_iterator(keep.len(), keep.iter().map(|&i| x[i]))
            }
            LinearOperator::Grad2d(s) => grad_apply(s, x),
            LinearOperator::BlockExtract { blocks, scales, .. } => {
                let mut out = Vec::with_capacity(self.rows());
                for (b, &s) in blocks.iter().zip(scales) {
                    out.extend(b.iter().map(|&i| s * x[i]));
                }
                Vector::from_vec(out)
            }
            LinearOperator::PartialFourier { matrix, .. } => matrix * x,
            LinearOperator::Repeated { op, copies } => {
                let (r, c) = (op.rows(), op.cols());
                let mut out = Vector::zeros(r * copies);
                for k in 0..*copies {
                    let part = op.fwd(&x.rows(k * c, c).into_owned());
                    out.rows_mut(k * r, r).copy_from(&part);
                }
                out
            }
            LinearOperator::ColumnScaled { op, scale } => op.fwd(&x.component_mul(scale)),
            LinearOperator::Stacked(ops) => {
                let mut out = Vector::zeros(self.rows());
                let mut off = 0;
                for op in ops {
                    let part = op.fwd(x);
                    out.rows_mut(off, part.len()).copy_from(&part);
                    off += part.len();
                }
                out
            }
        }
    }

    /// Adjoint product without the length check.
    pub(crate) fn adj(&self, y: &Vector) -> Vector {
        match self {
            LinearOperator::Dense(m) => m.tr_mul(y),
            LinearOperator::Identity(_) => y.clone(),
            LinearOperator::Mask { len, keep } => {
                let mut out = Vector::zeros(*len);
                for (k, &i) in keep.iter().enumerate() {
                    out[i] = y[k];
                }
                out
            }
            LinearOperator::Grad2d(s) => grad_adjoint(s, y),
            LinearOperator::BlockExtract {
                len,
                blocks,
                scales,
            } => {
                let mut out = Vector::zeros(*len);
                let mut k = 0;
                for (b, &s) in blocks.iter().zip(scales) {
                    for &i in b {
                        out[i] += s * y[k];
                        k += 1;
                    }
                }
                out
            }
            LinearOperator::PartialFourier { matrix, .. } => matrix.tr_mul(y),
            LinearOperator::Repeated { op, copies } => {
                let (r, c) = (op.rows(), op.cols());
                let mut out = Vector::zeros(c * copies);
                for k in 0..*copies {
                    let part = op.adj(&y.rows(k * r, r).into_owned());
                    out.rows_mut(k * c, c).copy_from(&part);
                }
                out
            }
            LinearOperator::ColumnScaled { op, scale } => op.adj(y).component_mul(scale),
            LinearOperator::Stacked(ops) => {
                let mut out = Vector::zeros(self.cols());
                let mut off = 0;
                for op in ops {
                    let r = op.rows();
                    out += op.adj(&y.rows(off, r).into_owned());
                    off += r;
                }
                out
            }
        }
    }

    /// Whether [`Self::sparse_rows`] returns a value.
    pub fn has_sparse_form(&self) -> bool {
        match self {
            LinearOperator::Dense(_) | LinearOperator::PartialFourier { .. } => false,
            LinearOperator::Repeated { op, .. } | LinearOperator::ColumnScaled { op, .. } => {
                op.has_sparse_form()
            }
            LinearOperator::Stacked(ops) => ops.iter().all(LinearOperator::has_sparse_form),
            _ => true,
        }
    }

    /// Nonzeros of every row, or `None` for the dense kinds.
    pub fn sparse_rows(&self) -> Option<SparseRows> {
        let rows = match self {
            LinearOperator::Dense(_) | LinearOperator::PartialFourier { .. } => return None,
            LinearOperator::Identity(n) => (0..*n).map(|i| vec![(i, 1.0)]).collect(),
            LinearOperator::Mask { keep, .. } => keep.iter().map(|&i| vec![(i, 1.0)]).collect(),
            LinearOperator::Grad2d(s) => {
                let (h, w) = (s.height, s.width);
                let hw = h * w;
                let mut rows = vec![Vec::new(); 2 * s.channels * hw];
                for t in 0..s.channels {
                    let (src, dst) = (t * hw, 2 * t * hw);
                    for i in 0..h {
                        for j in 0..w {
                            let p = i * w + j;
                            if i + 1 < h {
                                rows[dst + p] = vec![(src + p, 1.0), (src + p + w, -1.0)];
                            }
                            if j + 1 < w {
                                rows[dst + hw + p] = vec![(src + p, 1.0), (src + p + 1, -1.0)];
                            }
                        }
                    }
                }
                rows
            }
            LinearOperator::BlockExtract { blocks, scales, .. } => blocks
                .iter()
                .zip(scales)
                .flat_map(|(b, &s)| b.iter().map(move |&i| vec![(i, s)]))
                .collect(),
            LinearOperator::Repeated { op, copies } => {
                let inner = op.sparse_rows()?;
                let c = op.cols();
                (0..*copies)
                    .flat_map(|k| {
                        inner
                            .iter()
                            .map(move |r| r.iter().map(|&(j, v)| (k * c + j, v)).collect())
                    })
                    .collect()
            }
            LinearOperator::ColumnScaled { op, scale } => op
                .sparse_rows()?
                .into_iter()
                .map(|r| r.into_iter().map(|(j, v)| (j, v * scale[j])).collect())
                .collect(),
            LinearOperator::Stacked(ops) => {
                let mut rows = Vec::with_capacity(self.rows());
                for op in ops {
                    rows.extend(op.sparse_rows()?);
                }
                rows
            }
        };
        Some(rows)
    }

    /// Dense matrix of the operator. Borrowed for dense kinds.
    pub fn to_dense(&self) -> Cow<'_, Matrix> {
        match self {
            LinearOperator::Dense(m) => Cow::Borrowed(m),
            LinearOperator::PartialFourier { matrix, .. } => Cow::Borrowed(matrix),
            LinearOperator::Identity(n) => Cow::Owned(Matrix::identity(*n, *n)),
            LinearOperator::Repeated { op, copies } => {
                let inner = op.to_dense();
                let (r, c) = (inner.nrows(), inner.ncols());
                let mut out = Matrix::zeros(r * copies, c * copies);
                for k in 0..*copies {
                    out.view_mut((k * r, k * c), (r, c)).copy_from(&inner);
                }
                Cow::Owned(out)
            }
            LinearOperator::ColumnScaled { op, scale } => {
                let mut m = op.to_dense().into_owned();
                for (j, mut col) in m.column_iter_mut().enumerate() {
                    col *= scale[j];
                }
                Cow::Owned(m)
            }
            _ => {
                let n = self.cols();
                let mut out = Matrix::zeros(self.rows(), n);
                let mut e = Vector::zeros(n);
                for j in 0..n {
                    e[j] = 1.0;
                    out.set_column(j, &self.fwd(&e));
                    e[j] = 0.0;
                }
                Cow::Owned(out)
            }
        }
    }

    /// `opᵀ·op` as a dense matrix, exploiting structure where it is cheap.
    pub fn gram(&self) -> Matrix {
        match self {
            LinearOperator::Identity(n) => Matrix::identity(*n, *n),
            _ => {
                let d = self.to_dense();
                d.tr_mul(&d)
            }
        }
    }

    /// Largest singular value by power iteration.
    pub fn norm_estimate(&self, iters: usize) -> f64 {
        match self {
            LinearOperator::Identity(_) => 1.0,
            _ => crate::linalg::power_norm(|x| self.fwd(x), |y| self.adj(y), self.cols(), iters, 7),
        }
    }

    /// Largest column norm, `‖op‖_{1→2}`.
    pub fn max_column_norm(&self) -> f64 {
        let d = self.to_dense();
        d.column_iter().map(|c| c.norm()).fold(0.0, f64::max)
    }
}

fn grad_apply(s: &Grad2DSpec, x: &Vector) -> Vector {
    let (h, w) = (s.height, s.width);
    let hw = h * w;
    let mut out = Vector::zeros(2 * s.channels * hw);
    for t in 0..s.channels {
        let src = t * hw;
        let dst = 2 * t * hw;
        for i in 0..h {
            for j in 0..w {
                let p = i * w + j;
                if i + 1 < h {
                    out[dst + p] = x[src + p] - x[src + p + w];
                }
                if j + 1 < w {
                    out[dst + hw + p] = x[src + p] - x[src + p + 1];
                }
            }
        }
    }
    out
}

fn grad_adjoint(s: &Grad2DSpec, y: &Vector) -> Vector {
    let (h, w) = (s.height, s.width);
    let hw = h * w;
    let mut out = Vector::zeros(s.channels * hw);
    for t in 0..s.channels {
        let dst = t * hw;
        let src = 2 * t * hw;
        for i in 0..h {
            for j in 0..w {
                let p = i * w + j;
                if i + 1 < h {
                    let g = y[src + p];
                    out[dst + p] += g;
                    out[dst + p + w] -= g;
                }
                if j + 1 < w {
                    let g = y[src + hw + p];
                    out[dst + p] += g;
                    out[dst + p + 1] -= g;
                }
            }
        }
    }
    out
}

/// Real-stacked low-pass Fourier system. Rows are the frequencies
/// `ℓ ∈ {-⌊m/2⌋..⌊m/2⌋}^d` (cosine rows, then sine rows), columns are the grid
/// points `θ_k = k/p`, entries `e^{2πi⟨θ,ℓ⟩} / m^{d/2}`.
pub fn fourier_system(spec: FourierSystemSpec) -> Result<LinearOperator> {
    if spec.cutoff == 0 || spec.grid == 0 || spec.dim == 0 {
        return Err(Error::InvalidArgument(
            "fourier system needs dim, cutoff and grid ≥ 1".into(),
        ));
    }
    let nf = spec.frequencies_per_axis();
    let half = (spec.cutoff / 2) as i64;
    let rows = spec.complex_rows();
    let cols = spec.grid_points();
    if rows.saturating_mul(cols) > 1 << 26 {
        return Err(Error::InvalidArgument("fourier system too large".into()));
    }
    let scale = (spec.cutoff as f64).powf(-(spec.dim as f64) / 2.0);
    let mut matrix = Matrix::zeros(2 * rows, cols);
    let mut freq = vec![0i64; spec.dim];
    let mut point = vec![0usize; spec.dim];
    for r in 0..rows {
        let mut rem = r;
        for f in freq.iter_mut().rev() {
            *f = (rem % nf) as i64 - half;
            rem /= nf;
        }
        for c in 0..cols {
            let mut rem = c;
            for p in point.iter_mut().rev() {
                *p = rem % spec.grid;
                rem /= spec.grid;
            }
            // reduce ⟨k,ℓ⟩ mod p before scaling so the phase stays exact
            let mut dot: i64 = 0;
            for (f, &p) in freq.iter().zip(&point) {
                dot += f * p as i64;
            }
            let phase = 2.0 * PI * (dot.rem_euclid(spec.grid as i64) as f64) / spec.grid as f64;
            matrix[(r, c)] = scale * phase.cos();
            matrix[(rows + r, c)] = scale * phase.sin();
        }
    }
    Ok(LinearOperator::PartialFourier { spec, matrix })
}

/// Stacks `weight_g · x_{I_g}` for every group, using the structure's weights
/// (√n_g unless configured otherwise).
pub fn block_extract(groups: &GroupStructure, n: usize) -> Result<LinearOperator> {
    for g in groups.groups() {
        if let Some(&bad) = g.iter().find(|&&i| i >= n) {
            return Err(Error::IndexOutOfRange {
                index: bad + 1,
                dim: n,
            });
        }
    }
    Ok(LinearOperator::BlockExtract {
        len: n,
        blocks: groups.groups().to_vec(),
        scales: groups.weights().to_vec(),
    })
}

const MATRIX_MAGIC: &[u8; 4] = b"SOPM";

/// Writes a matrix as `SOPM`, u32 rows, u32 cols, row-major little-endian f64.
pub fn write_matrix<W: Write>(mut out: W, m: &Matrix) -> Result<()> {
    let rows = u32::try_from(m.nrows()).map_err(|_| Error::Format("too many rows".into()))?;
    let cols = u32::try_from(m.ncols()).map_err(|_| Error::Format("too many columns".into()))?;
    out.write_all(MATRIX_MAGIC)?;
    out.write_all(&rows.to_le_bytes())?;
    out.write_all(&cols.to_le_bytes())?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.write_all(&m[(i, j)].to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_matrix<R: Read>(mut input: R) -> Result<Matrix> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MATRIX_MAGIC {
        return Err(Error::Format("bad matrix magic".into()));
    }
    let rows = read_u32(&mut input)? as usize;
    let cols = read_u32(&mut input)? as usize;
    read_f64_payload(&mut input, rows * cols)
        .map(|data| Matrix::from_row_slice(rows, cols, &data))
}

pub(crate) fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_f64_payload<R: Read>(input: &mut R, count: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; count * 8];
    input
        .read_exact(&mut buf)
        .map_err(|e| Error::Format(format!("truncated payload: {e}")))?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}
