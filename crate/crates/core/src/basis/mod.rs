//! Spline design matrices and their penalties.

mod bspline;
mod constraint;
mod matrix;
mod penalty;
mod tensor;

pub use bspline::{bspline_design, BSplineBasis};
pub(crate) use bspline::quantile_sorted;
pub use constraint::apply_sum_to_zero;
pub use matrix::{matrix_knot_values, matrix_smooth_design, matrix_tensor_design};
pub use penalty::{basis_penalty, difference_penalty, PenaltyBlock};
pub use tensor::{row_kronecker, tensor_design, tensor_penalties};

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BasisError {
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("difference order {order} invalid for {k} basis functions")]
    BadOrder { k: usize, order: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid basis dimension: {0}")]
    InvalidK(String),
}

/// Realized columns of one model term.
#[derive(Debug, Clone, PartialEq)]
pub struct TermDesign {
    pub columns: DMatrix<f64>,
    pub penalty_blocks: Vec<PenaltyBlock>,
    pub constraint_applied: bool,
    pub label: String,
}

impl TermDesign {
    /// Reparameterize by `z` (columns `X Z`, penalties `Zᵀ S Z`).
    pub fn reparameterize(mut self, z: &DMatrix<f64>) -> Self {
        self.columns = &self.columns * z;
        for b in &mut self.penalty_blocks {
            b.s = z.transpose() * &b.s * z;
        }
        self
    }

    /// Apply a sum-to-zero constraint to the columns and the penalties.
    pub fn centered(self) -> (Self, DMatrix<f64>) {
        let (_, z) = apply_sum_to_zero(&self.columns);
        let mut t = self.reparameterize(&z);
        t.constraint_applied = true;
        (t, z)
    }
}
