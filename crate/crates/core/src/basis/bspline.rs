use super::BasisError;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// B-spline basis given by a full (boundary-replicated) knot vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BSplineBasis {
    pub degree: usize,
    pub knots: Vec<f64>,
}

/// Linear-interpolation quantile of sorted data.
pub(crate) fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl BSplineBasis {
    pub fn with_knots(knots: Vec<f64>, degree: usize) -> Result<Self, BasisError> {
        if knots.len() < degree + 2 {
            return Err(BasisError::InvalidK(format!(
                "{} knots cannot carry a degree-{degree} basis",
                knots.len()
            )));
        }
        if knots.windows(2).any(|w| w[1] < w[0]) || knots.iter().any(|k| !k.is_finite()) {
            return Err(BasisError::InvalidK("knots must be finite and nondecreasing".into()));
        }
        let b = BSplineBasis { degree, knots };
        if !(b.upper() > b.lower()) {
            return Err(BasisError::DegenerateData("empty knot domain".into()));
        }
        Ok(b)
    }

    /// `k` basis functions with interior knots at quantiles of the distinct
    /// values of `x` and boundary knots replicated `degree + 1` times.
    pub fn from_data(x: &[f64], k: usize, degree: usize) -> Result<Self, BasisError> {
        if k < degree + 1 {
            return Err(BasisError::InvalidK(format!("k = {k} is below degree + 1 = {}", degree + 1)));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(BasisError::DegenerateData("non-finite covariate values".into()));
        }
        let mut u: Vec<f64> = x.to_vec();
        u.sort_by(f64::total_cmp);
        u.dedup();
        let n_interior = k - degree - 1;
        if u.len() < n_interior + 2 {
            return Err(BasisError::DegenerateData(format!(
                "{} distinct values cannot support {n_interior} interior knots",
                u.len()
            )));
        }
        let (lo, hi) = (u[0], u[u.len() - 1]);
        let mut knots = vec![lo; degree + 1];
        for i in 1..=n_interior {
            knots.push(quantile_sorted(&u, i as f64 / (n_interior + 1) as f64));
        }
        knots.extend(std::iter::repeat_n(hi, degree + 1));
        Self::with_knots(knots, degree)
    }

    /// Number of basis functions.
    pub fn k(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    /// Knot averages `ξ_j`; `Σ_j ξ_j B_j(x) = x` on the domain.
    pub fn greville(&self) -> Vec<f64> {
        let p = self.degree.max(1);
        (0..self.k())
            .map(|j| {
                if self.degree == 0 {
                    0.5 * (self.knots[j] + self.knots[j + 1])
                } else {
                    self.knots[j + 1..=j + p].iter().sum::<f64>() / p as f64
                }
            })
            .collect()
    }

    pub fn lower(&self) -> f64 {
        self.knots[self.degree]
    }

    pub fn upper(&self) -> f64 {
        self.knots[self.k()]
    }

    fn span(&self, x: f64) -> usize {
        let k = self.k();
        if x >= self.upper() {
            // last non-empty span
            let mut i = k - 1;
            while self.knots[i] >= self.knots[i + 1] {
                i -= 1;
            }
            return i;
        }
        // largest i in [degree, k-1] with knots[i] <= x
        let mut lo = self.degree;
        let mut hi = k - 1;
        while lo < hi {
            let mid = (lo + hi).div_ceil(2);
            if self.knots[mid] <= x {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        lo
    }

    /// Nonzero basis values at `x` (clamped to the knot domain): returns the
    /// index of the first nonzero function and `degree + 1` values.
    pub fn eval_nonzero(&self, x: f64) -> (usize, Vec<f64>) {
        let x = x.clamp(self.lower(), self.upper());
        let p = self.degree;
        let i = self.span(x);
        let t = &self.knots;
        let mut n = vec![0.0; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        n[0] = 1.0;
        for j in 1..=p {
            left[j] = x - t[i + 1 - j];
            right[j] = t[i + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom != 0.0 { n[r] / denom } else { 0.0 };
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        (i - p, n)
    }

    /// Accumulate `weight * B(x)` into `row`.
    pub fn add_scaled_row(&self, x: f64, weight: f64, row: &mut [f64]) {
        let (first, vals) = self.eval_nonzero(x);
        for (j, v) in vals.into_iter().enumerate() {
            row[first + j] += weight * v;
        }
    }

    pub fn row(&self, x: f64) -> Vec<f64> {
        let mut r = vec![0.0; self.k()];
        self.add_scaled_row(x, 1.0, &mut r);
        r
    }

    pub fn design(&self, x: &[f64]) -> DMatrix<f64> {
        let k = self.k();
        let mut m = DMatrix::zeros(x.len(), k);
        for (i, &xi) in x.iter().enumerate() {
            let (first, vals) = self.eval_nonzero(xi);
            for (j, v) in vals.into_iter().enumerate() {
                m[(i, first + j)] = v;
            }
        }
        m
    }
}

/// Design matrix of a degree-`degree` B-spline basis with `k` functions and
/// quantile-placed knots.
pub fn bspline_design(x: &[f64], k: usize, degree: usize) -> Result<DMatrix<f64>, BasisError> {
    Ok(BSplineBasis::from_data(x, k, degree)?.design(x))
}
