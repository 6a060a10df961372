use super::{basis_penalty, tensor_penalties, BSplineBasis, BasisError, TermDesign};
use nalgebra::DMatrix;
use rayon::prelude::*;

fn check_shape(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(), BasisError> {
    if a.shape() != b.shape() {
        return Err(BasisError::ShapeMismatch(format!(
            "{}x{} covariate matrix against {}x{} weights",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    Ok(())
}

/// Entries of `x_mat` whose weight is nonzero, pooled for knot placement.
pub fn matrix_knot_values(x_mat: &DMatrix<f64>, by_mat: Option<&DMatrix<f64>>) -> Vec<f64> {
    match by_mat {
        None => x_mat.iter().copied().collect(),
        Some(w) => x_mat.iter().zip(w.iter()).filter(|(_, &w)| w != 0.0).map(|(&x, _)| x).collect(),
    }
}

fn assemble(n: usize, p: usize, rows: Vec<Vec<f64>>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, p);
    for (i, r) in rows.into_iter().enumerate() {
        for (j, v) in r.into_iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    m
}

/// Linear functional term: row `i` is `Σ_q B(x[i,q]) w[i,q]`.
pub fn matrix_smooth_design(
    x_mat: &DMatrix<f64>,
    by_mat: &DMatrix<f64>,
    basis: &BSplineBasis,
) -> Result<TermDesign, BasisError> {
    check_shape(x_mat, by_mat)?;
    let (n, q) = x_mat.shape();
    let k = basis.k();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut row = vec![0.0; k];
            for c in 0..q {
                let w = by_mat[(i, c)];
                if w != 0.0 {
                    basis.add_scaled_row(x_mat[(i, c)], w, &mut row);
                }
            }
            row
        })
        .collect();
    let order = 2.min(k.saturating_sub(1)).max(1);
    Ok(TermDesign {
        columns: assemble(n, k, rows),
        penalty_blocks: if k > 1 { vec![basis_penalty(basis, order)?] } else { Vec::new() },
        constraint_applied: false,
        label: String::new(),
    })
}

/// Tensor version: row `i` is `Σ_q w[i,q] ⊗_m B_m(x_m[i,q])`.
pub fn matrix_tensor_design(
    x_mats: &[&DMatrix<f64>],
    by_mat: &DMatrix<f64>,
    bases: &[BSplineBasis],
) -> Result<TermDesign, BasisError> {
    if x_mats.len() != bases.len() || x_mats.is_empty() {
        return Err(BasisError::ShapeMismatch("one basis per margin required".into()));
    }
    for x in x_mats {
        check_shape(x, by_mat)?;
    }
    let (n, q) = by_mat.shape();
    let dims: Vec<usize> = bases.iter().map(|b| b.k()).collect();
    let p: usize = dims.iter().product();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut row = vec![0.0; p];
            for c in 0..q {
                let w = by_mat[(i, c)];
                if w == 0.0 {
                    continue;
                }
                let mut prod = vec![w];
                for (x, b) in x_mats.iter().zip(bases) {
                    let marg = b.row(x[(i, c)]);
                    prod = prod.iter().flat_map(|a| marg.iter().map(move |m| a * m)).collect();
                }
                row.iter_mut().zip(prod).for_each(|(r, v)| *r += v);
            }
            row
        })
        .collect();
    let pens = bases
        .iter()
        .map(|b| basis_penalty(b, 2.min(b.k() - 1).max(1)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TermDesign {
        columns: assemble(n, p, rows),
        penalty_blocks: tensor_penalties(&dims, &pens),
        constraint_applied: false,
        label: String::new(),
    })
}
