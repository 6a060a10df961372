//! Penalized Poisson fitting of piecewise-exponential models.

mod design;
mod pirls;
pub mod serde_mat;

pub use design::{
    build_design, design_matrix, term_columns, ByCoding, Coding, DesignBundle, EmbeddedPenalty, ModelData, TermKind,
    TermMeta,
};
pub use pirls::{
    linear_predictor, penalized_loglik_and_gradient, pirls, poisson_deviance, robust_cholesky, weighted_crossprod,
    PirlsResult,
};

use crate::basis::BasisError;
use crate::formula::ModelSpec;
use crate::ped::PedDataset;
use indexmap::IndexMap;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Version of the persisted model layout.
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("term `{term}`: no column named `{name}`")]
    UnresolvedTerm { term: String, name: String },
    #[error("term `{0}` mixes scalar and matrix columns")]
    MixedScalarMatrixTerm(String),
    #[error("{0}")]
    InvalidTerm(String),
    #[error("level `{level}` of `{var}` was not seen when fitting")]
    UnknownLevel { var: String, level: String },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("response has no events")]
    NoEvents,
    #[error("fit diverged: non-finite working weights")]
    Diverged,
    #[error("penalized normal matrix is singular")]
    RankDeficient,
    #[error("model has no penalized terms")]
    NoPenalty,
    #[error("smoothing parameters must be finite and nonnegative")]
    InvalidLambda,
    #[error("covariance matrix is not positive semidefinite")]
    NotPositiveDefinite,
    #[error(transparent)]
    Basis(#[from] BasisError),
}

/// One evaluated point of the smoothing-parameter search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcvPoint {
    pub lambda: Vec<f64>,
    pub score: f64,
    pub edf: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GcvTrace {
    pub points: Vec<GcvPoint>,
}

/// log10 grid searched per penalty block.
pub const LOG10_LAMBDA_GRID: [f64; 11] = [-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0];
const GCV_PASSES: usize = 2;

/// Posterior quantities at a fitted `β`.
struct Inference {
    v: DMatrix<f64>,
    edf_diag: DVector<f64>,
}

fn inference(b: &DesignBundle, fit: &PirlsResult, lambda: &[f64]) -> Result<Inference, FitError> {
    let xtwx = weighted_crossprod(&b.x, &fit.weights);
    let h = &xtwx + b.penalty_matrix(lambda);
    let chol = robust_cholesky(&h)?;
    let v = chol.inverse();
    let f = &v * &xtwx;
    Ok(Inference {
        v: (&v + v.transpose()) * 0.5,
        edf_diag: f.diagonal(),
    })
}

fn gcv_score(n: usize, deviance: f64, edf: f64) -> f64 {
    let denom = n as f64 - edf;
    if denom <= 0.0 {
        f64::INFINITY
    } else {
        n as f64 * deviance / (denom * denom)
    }
}

/// Coordinate-wise grid search of the GCV score over each block's λ.
pub fn select_lambda_gcv(b: &DesignBundle) -> Result<(Vec<f64>, GcvTrace), FitError> {
    if b.penalties.is_empty() {
        return Err(FitError::NoPenalty);
    }
    let mut lambda = vec![1.0; b.penalties.len()];
    let mut trace = GcvTrace::default();
    let mut warm: Option<DVector<f64>> = None;
    for _ in 0..GCV_PASSES {
        for blk in 0..lambda.len() {
            let mut best = (f64::INFINITY, lambda[blk]);
            for g in LOG10_LAMBDA_GRID {
                let mut l = lambda.clone();
                l[blk] = 10f64.powf(g);
                let fit = pirls(b, &l, warm.as_ref())?;
                let inf = inference(b, &fit, &l)?;
                let edf = inf.edf_diag.sum();
                let score = gcv_score(b.n(), fit.deviance, edf);
                trace.points.push(GcvPoint {
                    lambda: l.clone(),
                    score,
                    edf,
                });
                if score < best.0 {
                    best = (score, l[blk]);
                    warm = Some(fit.beta);
                }
            }
            lambda[blk] = best.1;
        }
    }
    Ok((lambda, trace))
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaChoice {
    #[default]
    Gcv,
    /// Same value for every penalty block.
    Fixed(f64),
    PerBlock(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FitOptions {
    pub lambda: LambdaChoice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedPamm {
    pub format_version: u32,
    pub formula: String,
    pub model: ModelSpec,
    pub terms: Vec<TermMeta>,
    #[serde(with = "serde_mat::vector")]
    pub beta: DVector<f64>,
    #[serde(with = "serde_mat::matrix")]
    pub v_beta: DMatrix<f64>,
    pub lambda: Vec<f64>,
    /// Term index penalized by each entry of `lambda`.
    pub lambda_terms: Vec<usize>,
    pub edf: IndexMap<String, f64>,
    pub edf_total: f64,
    pub chi_sq: IndexMap<String, f64>,
    pub deviance: f64,
    pub converged: bool,
    pub iterations: usize,
    pub n: usize,
    /// Cut points of the training data, when fitted on PED.
    pub cuts: Option<Vec<f64>>,
    pub gcv: Option<GcvTrace>,
}

impl FittedPamm {
    pub fn p(&self) -> usize {
        self.beta.len()
    }

    pub fn term(&self, label: &str) -> Option<&TermMeta> {
        self.terms.iter().find(|t| t.label == label)
    }
}

/// Fit a model to arbitrary model data.
pub fn fit_model(data: &ModelData, model: &ModelSpec, options: &FitOptions) -> Result<FittedPamm, FitError> {
    let b = build_design(data, model)?;
    fit_bundle(&b, model, options)
}

pub fn fit_bundle(b: &DesignBundle, model: &ModelSpec, options: &FitOptions) -> Result<FittedPamm, FitError> {
    let nb = b.penalties.len();
    let (lambda, gcv) = match &options.lambda {
        LambdaChoice::Gcv if nb == 0 => (Vec::new(), None),
        LambdaChoice::Gcv => {
            let (l, t) = select_lambda_gcv(b)?;
            (l, Some(t))
        }
        LambdaChoice::Fixed(v) => (vec![*v; nb], None),
        LambdaChoice::PerBlock(v) => {
            if v.len() != nb {
                return Err(FitError::ShapeMismatch(format!("{} smoothing parameters for {nb} penalties", v.len())));
            }
            (v.clone(), None)
        }
    };
    let fit = pirls(b, &lambda, None)?;
    let inf = inference(b, &fit, &lambda)?;
    let mut edf = IndexMap::new();
    let mut chi_sq = IndexMap::new();
    for t in &b.terms {
        let r = t.range();
        edf.insert(t.label.clone(), inf.edf_diag.rows(r.start, r.len()).sum());
        let bt = fit.beta.rows(r.start, r.len()).clone_owned();
        let vt = inf.v.view((r.start, r.start), (r.len(), r.len())).clone_owned();
        let eps = 1e-12 * vt.amax().max(f64::MIN_POSITIVE);
        let chi = vt
            .pseudo_inverse(eps)
            .map(|vi| bt.dot(&(vi * &bt)))
            .unwrap_or(f64::NAN);
        chi_sq.insert(t.label.clone(), chi);
    }
    Ok(FittedPamm {
        format_version: MODEL_FORMAT_VERSION,
        formula: model.to_string(),
        model: model.clone(),
        terms: b.terms.clone(),
        beta: fit.beta,
        v_beta: inf.v,
        lambda,
        lambda_terms: b.penalties.iter().map(|p| p.term_index).collect(),
        edf_total: inf.edf_diag.sum(),
        edf,
        chi_sq,
        deviance: fit.deviance,
        converged: fit.converged,
        iterations: fit.iterations,
        n: b.n(),
        cuts: None,
        gcv,
    })
}

pub fn fit_pamm(ped: &PedDataset, model: &ModelSpec, options: &FitOptions) -> Result<FittedPamm, FitError> {
    let mut f = fit_model(&ModelData::from_ped(ped), model, options)?;
    f.cuts = Some(ped.cuts.values().to_vec());
    Ok(f)
}

/// Square-root factor `L` with `L Lᵀ = V`: Cholesky when possible,
/// otherwise from the eigen decomposition of a semidefinite `V`.
pub fn covariance_factor(v: &DMatrix<f64>) -> Result<DMatrix<f64>, FitError> {
    if let Some(c) = v.clone().cholesky() {
        return Ok(c.l());
    }
    let e = v.clone().symmetric_eigen();
    let scale = e.eigenvalues.amax();
    if e.eigenvalues.iter().any(|&l| l < -1e-8 * scale.max(1e-300) || !l.is_finite()) {
        return Err(FitError::NotPositiveDefinite);
    }
    let sqrt = e.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&e.eigenvectors * DMatrix::from_diagonal(&sqrt))
}

/// `n_draws x p` matrix of draws from `N(β, V)`.
pub fn posterior_draws(fit: &FittedPamm, n_draws: usize, seed: u64) -> Result<DMatrix<f64>, FitError> {
    mvn_draws(&fit.beta, &fit.v_beta, n_draws, seed)
}

pub fn mvn_draws(mean: &DVector<f64>, cov: &DMatrix<f64>, n_draws: usize, seed: u64) -> Result<DMatrix<f64>, FitError> {
    let p = mean.len();
    let l = covariance_factor(cov)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = DMatrix::from_fn(p, n_draws, |_, _| StandardNormal.sample(&mut rng));
    let mut d = (l * z).transpose();
    for mut row in d.row_iter_mut() {
        row += mean.transpose();
    }
    Ok(d)
}
