use super::{BSplineBasis, BasisError};
use nalgebra::DMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyBlock {
    pub s: DMatrix<f64>,
    pub null_space_dim: usize,
    pub term_index: usize,
}

/// Forward difference matrix of the given order, `(k - order) x k`.
fn difference_matrix(k: usize, order: usize) -> DMatrix<f64> {
    let mut d = DMatrix::<f64>::identity(k, k);
    for _ in 0..order {
        let r = d.nrows();
        d = DMatrix::from_fn(r - 1, k, |i, j| d[(i + 1, j)] - d[(i, j)]);
    }
    d
}

/// `S = DᵀD` for the `order`-th difference matrix `D`.
pub fn difference_penalty(k: usize, order: usize) -> Result<PenaltyBlock, BasisError> {
    if order < 1 || order >= k {
        return Err(BasisError::BadOrder { k, order });
    }
    let d = difference_matrix(k, order);
    Ok(PenaltyBlock {
        s: d.transpose() * d,
        null_space_dim: order,
        term_index: 0,
    })
}

/// Penalty on `order`-th divided differences of the coefficients taken over
/// the basis' knot averages. Its null space is exactly the polynomials of
/// degree below `order`, whatever the knot placement.
pub fn basis_penalty(basis: &BSplineBasis, order: usize) -> Result<PenaltyBlock, BasisError> {
    let k = basis.k();
    if order < 1 || order >= k {
        return Err(BasisError::BadOrder { k, order });
    }
    let xi = basis.greville();
    let mean_gap = (xi[k - 1] - xi[0]) / (k - 1) as f64;
    let mut d = DMatrix::<f64>::identity(k, k);
    for m in 1..=order {
        let r = d.nrows();
        d = DMatrix::from_fn(r - 1, k, |i, j| (d[(i + 1, j)] - d[(i, j)]) / ((xi[i + m] - xi[i]) / m as f64) * mean_gap);
    }
    Ok(PenaltyBlock {
        s: d.transpose() * d,
        null_space_dim: order,
        term_index: 0,
    })
}
