//! Problem data shared by the VarPro evaluators and the baselines, and the
//! original non-smooth objectives used to compare solvers.

use crate::error::{check_len, Error, Result};
use crate::groups::{group_norm_12, group_sq_norms, GroupStructure};
use crate::linalg::{Matrix, Vector};
use crate::linops::LinearOperator;

/// Data-fit term.
#[derive(Debug, Clone)]
pub enum Loss {
    /// `(1/2λ)‖Ax − y‖²`.
    Quadratic { lambda: f64, y: Vector },
    /// `(1/λ) Σ_h ‖(Ax − y)_h‖` over a partition of the observations.
    Robust {
        lambda: f64,
        y: Vector,
        groups: GroupStructure,
    },
    /// Constraint `Ax = y`.
    BasisPursuit { y: Vector },
}

impl Loss {
    pub fn y(&self) -> &Vector {
        match self {
            Loss::Quadratic { y, .. } | Loss::Robust { y, .. } | Loss::BasisPursuit { y } => y,
        }
    }

    pub fn lambda(&self) -> Option<f64> {
        match self {
            Loss::Quadratic { lambda, .. } | Loss::Robust { lambda, .. } => Some(*lambda),
            Loss::BasisPursuit { .. } => None,
        }
    }

    /// Square-root lasso `(1/(λ√m))‖Ax − y‖` as a robust loss with a single
    /// group and effective parameter `λ√m`.
    pub fn sqrt_lasso(lambda: f64, y: Vector) -> Self {
        let m = y.len();
        Loss::Robust {
            lambda: lambda * (m as f64).sqrt(),
            groups: GroupStructure::single(m),
            y,
        }
    }

    /// Value of the loss at residual `r = Ax − y`. Infinite for basis
    /// pursuit unless `r` vanishes (within `1e-9·(1+‖y‖)`).
    pub fn value_at_residual(&self, r: &Vector) -> f64 {
        match self {
            Loss::Quadratic { lambda, .. } => r.norm_squared() / (2.0 * lambda),
            Loss::Robust { lambda, groups, .. } => {
                group_sq_norms(r, groups).iter().map(|s| s.sqrt()).sum::<f64>() / lambda
            }
            Loss::BasisPursuit { y } => {
                if r.amax() <= 1e-9 * (1.0 + y.amax()) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        }
    }
}

/// `min_x ‖Lx‖_{1,2} + loss(Ax − y)`.
#[derive(Debug, Clone)]
pub struct RegressionProblem {
    pub a: LinearOperator,
    pub l: LinearOperator,
    /// Partition of the rows of `L`.
    pub reg_groups: GroupStructure,
    pub loss: Loss,
}

impl RegressionProblem {
    pub fn new(
        a: LinearOperator,
        l: LinearOperator,
        reg_groups: GroupStructure,
        loss: Loss,
    ) -> Result<Self> {
        check_len("observations", a.rows(), loss.y().len())?;
        check_len("analysis operator columns", a.cols(), l.cols())?;
        check_len("regularizer groups", l.rows(), reg_groups.dim())?;
        reg_groups.require_partition()?;
        if let Some(lambda) = loss.lambda() {
            if !(lambda > 0.0) {
                return Err(Error::InvalidArgument("λ must be positive".into()));
            }
        }
        if let Loss::Robust { groups, .. } = &loss {
            groups.require_partition()?;
            check_len("loss groups", a.rows(), groups.dim())?;
        }
        Ok(Self {
            a,
            l,
            reg_groups,
            loss,
        })
    }

    /// Group lasso `‖x‖_{1,2} + (1/2λ)‖Ax − y‖²`.
    pub fn group_lasso(a: LinearOperator, groups: GroupStructure, lambda: f64, y: Vector) -> Result<Self> {
        let n = a.cols();
        Self::new(a, LinearOperator::identity(n), groups, Loss::Quadratic { lambda, y })
    }

    pub fn n(&self) -> usize {
        self.a.cols()
    }

    pub fn m(&self) -> usize {
        self.a.rows()
    }

    /// The non-smooth objective `‖Lx‖_{1,2} + loss(Ax − y)`.
    pub fn objective(&self, x: &Vector) -> f64 {
        let reg = group_norm_12(&self.l.fwd(x), &self.reg_groups).expect("partition groups");
        let r = self.a.fwd(x) - self.loss.y();
        reg + self.loss.value_at_residual(&r)
    }
}

/// `‖X‖_{1,2} + λ‖AX − Y‖_*` with row groups on `X`; the scaling of the
/// nuclear term is the one reproduced by the variational form
/// `min (λ/2)(‖W‖² + ‖Z‖²)` over `WZ = AX − Y`.
#[derive(Debug, Clone)]
pub struct MultitaskProblem {
    pub a: Matrix,
    pub y: Matrix,
    pub lambda: f64,
}

impl MultitaskProblem {
    pub fn new(a: Matrix, y: Matrix, lambda: f64) -> Result<Self> {
        check_len("multitask observations", a.nrows(), y.nrows())?;
        if !(lambda > 0.0) {
            return Err(Error::InvalidArgument("λ must be positive".into()));
        }
        Ok(Self { a, y, lambda })
    }

    pub fn objective(&self, x: &Matrix) -> f64 {
        let rows: f64 = x.row_iter().map(|r| r.norm()).sum();
        let r = &self.a * x - &self.y;
        let nuclear: f64 = r.singular_values().iter().sum();
        rows + self.lambda * nuclear
    }
}
