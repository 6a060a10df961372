use super::{DesignBundle, FitError};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;

const MAX_ITER: usize = 100;
const REL_TOL: f64 = 1e-8;
const STEP_TOL: f64 = 1e-6;
const MAX_HALVINGS: usize = 40;
const ETA_MAX: f64 = 700.0;
const ROW_BLOCK: usize = 4096;

/// Cholesky factor of a symmetric matrix, adding diagonal jitter (scaled by
/// the mean diagonal) when the plain factorization fails.
pub fn robust_cholesky(a: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>, FitError> {
    if let Some(c) = a.clone().cholesky() {
        return Ok(c);
    }
    let p = a.nrows();
    let mean_diag = (a.trace() / p.max(1) as f64).abs().max(f64::MIN_POSITIVE);
    for e in [1e-10, 1e-9, 1e-8, 1e-7, 1e-6] {
        let mut j = a.clone();
        for i in 0..p {
            j[(i, i)] += e * mean_diag;
        }
        if let Some(c) = j.cholesky() {
            return Ok(c);
        }
    }
    Err(FitError::RankDeficient)
}

/// `Xᵀ diag(w) X` accumulated over fixed row blocks, summed in block order.
pub fn weighted_crossprod(x: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let (n, p) = x.shape();
    let starts: Vec<usize> = (0..n).step_by(ROW_BLOCK).collect();
    let parts: Vec<DMatrix<f64>> = starts
        .par_iter()
        .map(|&s| {
            let len = ROW_BLOCK.min(n - s);
            let xb = x.rows(s, len);
            let mut xw = xb.clone_owned();
            for (i, mut row) in xw.row_iter_mut().enumerate() {
                row *= w[s + i];
            }
            xb.transpose() * xw
        })
        .collect();
    parts.into_iter().fold(DMatrix::zeros(p, p), |acc, m| acc + m)
}

pub fn linear_predictor(b: &DesignBundle, beta: &DVector<f64>) -> DVector<f64> {
    &b.x * beta + &b.offset
}

/// Poisson deviance `2 Σ [y log(y/μ) − (y − μ)]`.
pub fn poisson_deviance(y: &DVector<f64>, mu: &DVector<f64>) -> f64 {
    2.0 * y
        .iter()
        .zip(mu.iter())
        .map(|(&y, &m)| if y > 0.0 { y * (y / m).ln() - (y - m) } else { m })
        .sum::<f64>()
}

fn mean_fn(eta: &DVector<f64>) -> DVector<f64> {
    eta.map(|e| e.min(ETA_MAX).exp())
}

/// Penalized log-likelihood `Σ [y η − exp(η)] − ½ βᵀ Sλ β` (η with offset)
/// and its gradient.
pub fn penalized_loglik_and_gradient(b: &DesignBundle, beta: &DVector<f64>, lambda: &[f64]) -> (f64, DVector<f64>) {
    let eta = linear_predictor(b, beta);
    let mu = eta.map(f64::exp);
    let s = b.penalty_matrix(lambda);
    let sb = &s * beta;
    let ll: f64 = b.y.iter().zip(eta.iter()).zip(mu.iter()).map(|((y, e), m)| y * e - m).sum();
    let value = ll - 0.5 * beta.dot(&sb);
    let grad = b.x.transpose() * (&b.y - &mu) - sb;
    (value, grad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PirlsResult {
    pub beta: DVector<f64>,
    /// Working weights `μ` at convergence.
    pub weights: DVector<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub deviance: f64,
    pub penalized_deviance: f64,
}

fn start_beta(b: &DesignBundle) -> DVector<f64> {
    let mut beta = DVector::zeros(b.p());
    if let Some(t) = b.terms.iter().find(|t| matches!(t.kind, super::TermKind::Intercept)) {
        let events = b.y.sum();
        let exposure: f64 = b.offset.iter().map(|o| o.exp()).sum();
        beta[t.start] = (events / exposure).ln();
    }
    beta
}

/// Penalized iteratively reweighted least squares for the Poisson log link.
pub fn pirls(b: &DesignBundle, lambda: &[f64], init: Option<&DVector<f64>>) -> Result<PirlsResult, FitError> {
    if lambda.iter().any(|&l| !(l >= 0.0) || !l.is_finite()) {
        return Err(FitError::InvalidLambda);
    }
    if b.y.iter().all(|&y| y == 0.0) {
        return Err(FitError::NoEvents);
    }
    let s = b.penalty_matrix(lambda);
    let pdev = |beta: &DVector<f64>| -> (f64, f64, DVector<f64>) {
        let mu = mean_fn(&linear_predictor(b, beta));
        let dev = poisson_deviance(&b.y, &mu);
        (dev, dev + beta.dot(&(&s * beta)), mu)
    };

    let mut beta = init.cloned().unwrap_or_else(|| start_beta(b));
    let (mut dev, mut pd, mut mu) = pdev(&beta);
    if !pd.is_finite() {
        beta = start_beta(b);
        (dev, pd, mu) = pdev(&beta);
    }
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITER {
        iterations += 1;
        if mu.iter().any(|m| !m.is_finite()) {
            return Err(FitError::Diverged);
        }
        // Newton step on the penalized likelihood
        let h = weighted_crossprod(&b.x, &mu) + &s;
        let rhs = b.x.transpose() * (&b.y - &mu) - &s * &beta;
        let step = robust_cholesky(&h)?.solve(&rhs);
        let mut cand = &beta + &step;
        let (mut cdev, mut cpd, mut cmu) = pdev(&cand);
        let mut halvings = 0;
        while !(cpd.is_finite() && cpd <= pd + 1e-12 * pd.abs()) && halvings < MAX_HALVINGS {
            halvings += 1;
            cand = &beta + &step * 0.5f64.powi(halvings as i32);
            (cdev, cpd, cmu) = pdev(&cand);
        }
        if !cpd.is_finite() {
            return Err(FitError::Diverged);
        }
        let change = (pd - cpd).abs() / (cpd.abs() + 0.1);
        beta = cand;
        dev = cdev;
        pd = cpd;
        mu = cmu;
        // the deviance flattens before β does; also ask for a small step
        if change < REL_TOL && step.amax() < STEP_TOL {
            converged = true;
            break;
        }
    }
    Ok(PirlsResult {
        beta,
        weights: mu,
        converged,
        iterations,
        deviance: dev,
        penalized_deviance: pd,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::{build_design, ModelData};
    use crate::formula::parse_model_formula;
    use crate::frame::{Column, Frame};

    fn data(n: usize) -> ModelData {
        let mut f = Frame::new(n);
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.618).fract() * 2.0 - 1.0).collect();
        let y: Vec<f64> = x.iter().enumerate().map(|(i, &x)| ((1.0 + x) * 1.3 + (i % 3) as f64 * 0.4).floor()).collect();
        f.insert("x", Column::Numeric(x));
        f.insert("y", Column::Numeric(y));
        f.insert("offset", Column::Numeric((0..n).map(|i| (i % 4) as f64 * 0.1).collect()));
        ModelData::new(f)
    }

    #[test]
    fn intercept_only_is_events_over_exposure() {
        let d = data(40);
        let b = build_design(&d, &parse_model_formula("y ~ 1").unwrap()).unwrap();
        let r = pirls(&b, &[], None).unwrap();
        let want = (b.y.sum() / b.offset.iter().map(|o| o.exp()).sum::<f64>()).ln();
        assert!((r.beta[0] - want).abs() < 1e-12);
        assert!(r.converged);
    }

    #[test]
    fn no_events() {
        let mut d = data(10);
        d.frame.insert("y", Column::Numeric(vec![0.0; 10]));
        let b = build_design(&d, &parse_model_formula("y ~ x").unwrap()).unwrap();
        assert_eq!(pirls(&b, &[], None), Err(FitError::NoEvents));
    }

    #[test]
    fn stationary_at_optimum() {
        let d = data(80);
        let b = build_design(&d, &parse_model_formula("y ~ x").unwrap()).unwrap();
        let r = pirls(&b, &[], None).unwrap();
        let (_, g) = penalized_loglik_and_gradient(&b, &r.beta, &[]);
        assert!(g.amax() < 1e-6);
    }

    #[test]
    fn jitter_rescues_singular_matrix() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(robust_cholesky(&a).is_ok());
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert_eq!(robust_cholesky(&a).err(), Some(FitError::RankDeficient));
    }
}
