use super::{BasisError, PenaltyBlock, TermDesign};
use nalgebra::DMatrix;

/// Row-wise Kronecker product: row `i` of the result is `a_i ⊗ b_i`.
pub fn row_kronecker(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>, BasisError> {
    if a.nrows() != b.nrows() {
        return Err(BasisError::ShapeMismatch(format!(
            "margins have {} and {} rows",
            a.nrows(),
            b.nrows()
        )));
    }
    let (pa, pb) = (a.ncols(), b.ncols());
    Ok(DMatrix::from_fn(a.nrows(), pa * pb, |i, j| a[(i, j / pb)] * b[(i, j % pb)]))
}

/// One penalty per margin, `I ⊗ .. ⊗ S_m ⊗ .. ⊗ I`.
pub fn tensor_penalties(dims: &[usize], margin_penalties: &[PenaltyBlock]) -> Vec<PenaltyBlock> {
    margin_penalties
        .iter()
        .enumerate()
        .map(|(m, pen)| {
            let before: usize = dims[..m].iter().product();
            let after: usize = dims[m + 1..].iter().product();
            let s = DMatrix::<f64>::identity(before, before)
                .kronecker(&pen.s)
                .kronecker(&DMatrix::<f64>::identity(after, after));
            PenaltyBlock {
                s,
                null_space_dim: pen.null_space_dim * before * after,
                term_index: pen.term_index,
            }
        })
        .collect()
}

pub fn tensor_design(margin_designs: &[DMatrix<f64>], margin_penalties: &[PenaltyBlock]) -> Result<TermDesign, BasisError> {
    if margin_designs.is_empty() || margin_designs.len() != margin_penalties.len() {
        return Err(BasisError::ShapeMismatch("one penalty per margin required".into()));
    }
    for (d, p) in margin_designs.iter().zip(margin_penalties) {
        if p.s.nrows() != d.ncols() {
            return Err(BasisError::ShapeMismatch(format!(
                "margin with {} columns has a {}x{} penalty",
                d.ncols(),
                p.s.nrows(),
                p.s.ncols()
            )));
        }
    }
    let mut columns = margin_designs[0].clone();
    for d in &margin_designs[1..] {
        columns = row_kronecker(&columns, d)?;
    }
    let dims: Vec<usize> = margin_designs.iter().map(|d| d.ncols()).collect();
    Ok(TermDesign {
        columns,
        penalty_blocks: tensor_penalties(&dims, margin_penalties),
        constraint_applied: false,
        label: String::new(),
    })
}
