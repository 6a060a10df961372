use nalgebra::{DMatrix, DVector};

/// Absorb the constraint `1ᵀ X β = 0` into the parameterization.
///
/// With `c = Xᵀ1` and the Householder reflection `H` mapping `c` onto the
/// first axis, the last `p - 1` columns of `H` span the null space of `cᵀ`.
/// Returns `(X Z, Z)`.
pub fn apply_sum_to_zero(design: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let p = design.ncols();
    let c: DVector<f64> = design.row_sum().transpose();
    let norm = c.norm();
    let z = if norm == 0.0 {
        DMatrix::identity(p, p).columns(1, p.saturating_sub(1)).into_owned()
    } else {
        let mut v = c.clone();
        v[0] += if c[0] >= 0.0 { norm } else { -norm };
        let vv = v.dot(&v);
        let h = DMatrix::identity(p, p) - (&v * v.transpose()) * (2.0 / vv);
        h.columns(1, p - 1).into_owned()
    };
    let mut xz = design * &z;
    // constant columns can only contribute round-off
    let scale = design.amax().max(1.0);
    xz.iter_mut().for_each(|v| {
        if v.abs() < 1e-14 * scale {
            *v = 0.0
        }
    });
    (xz, z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::bspline_design;

    fn residual(basis: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
        let qr = basis.clone().qr();
        let q = qr.q();
        let r = qr.r();
        // drop numerically null directions
        let keep: Vec<usize> = (0..r.ncols()).filter(|&i| r[(i, i)].abs() > 1e-9).collect();
        let qk = q.select_columns(keep.iter());
        y - &qk * (qk.transpose() * y)
    }

    #[test]
    fn columns_sum_to_zero_and_span_kept() {
        let x: Vec<f64> = (0..80).map(|i| (i as f64 * 0.731).cos() * 3.0 + i as f64 / 40.0).collect();
        let b = bspline_design(&x, 8, 3).unwrap();
        let (xz, z) = apply_sum_to_zero(&b);
        assert_eq!(xz.shape(), (80, 7));
        assert_eq!(z.shape(), (8, 7));
        assert!(xz.row_sum().amax() < 1e-8);
        let y = DVector::from_fn(80, |i, _| ((i * 7919) % 97) as f64 / 97.0);
        let ones = DMatrix::from_element(80, 1, 1.0);
        let a = residual(&ones.hstack(&b), &y);
        let c = residual(&ones.hstack(&xz), &y);
        assert!((a - c).amax() < 1e-8);
    }

    #[test]
    fn constant_column_is_removed() {
        let d = DMatrix::from_element(6, 1, 2.0);
        let (xz, _) = apply_sum_to_zero(&d);
        assert_eq!(xz.ncols(), 0);
        let d = DMatrix::from_fn(5, 2, |_, j| j as f64 + 1.0);
        let (xz, _) = apply_sum_to_zero(&d);
        assert!(xz.iter().all(|&v| v == 0.0));
    }

    trait HStack {
        fn hstack(&self, other: &DMatrix<f64>) -> DMatrix<f64>;
    }
    impl HStack for DMatrix<f64> {
        fn hstack(&self, other: &DMatrix<f64>) -> DMatrix<f64> {
            let mut m = DMatrix::zeros(self.nrows(), self.ncols() + other.ncols());
            m.columns_mut(0, self.ncols()).copy_from(self);
            m.columns_mut(self.ncols(), other.ncols()).copy_from(other);
            m
        }
    }
}
