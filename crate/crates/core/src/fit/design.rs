use super::serde_mat;
use super::FitError;
use crate::basis::{
    apply_sum_to_zero, basis_penalty, matrix_knot_values, matrix_tensor_design, row_kronecker, tensor_penalties,
    BSplineBasis,
};
use crate::formula::{ByVar, ModelSpec, TermSpec};
use crate::frame::{Column, Frame};
use crate::ped::PedDataset;
use indexmap::IndexMap;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::ops::Range;

const SPLINE_DEGREE: usize = 3;
const PENALTY_ORDER: usize = 2;

/// Scalar columns plus aligned matrix columns, as seen by a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelData {
    pub frame: Frame,
    pub matrices: IndexMap<String, DMatrix<f64>>,
}

pub(crate) enum VarRef<'a> {
    Scalar(&'a Column),
    Matrix(&'a DMatrix<f64>),
}

impl ModelData {
    pub fn new(frame: Frame) -> Self {
        ModelData {
            frame,
            matrices: IndexMap::new(),
        }
    }

    pub fn from_ped(ped: &PedDataset) -> Self {
        ModelData {
            frame: ped.frame(),
            matrices: ped.matrices.clone(),
        }
    }

    pub fn nrows(&self) -> usize {
        self.frame.nrows()
    }

    pub(crate) fn var(&self, name: &str) -> Option<VarRef<'_>> {
        if let Some(c) = self.frame.get(name) {
            Some(VarRef::Scalar(c))
        } else {
            self.matrices.get(name).map(VarRef::Matrix)
        }
    }
}

/// How a parametric covariate enters the design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Coding {
    Numeric(String),
    /// Treatment contrasts: one dummy per level after the first.
    Factor { var: String, levels: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ByCoding {
    None,
    /// Product of numeric scalar or matrix columns.
    Weights(Vec<String>),
    /// Indicator of one factor level.
    Level { var: String, level: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TermKind {
    Intercept,
    Parametric(Vec<Coding>),
    Smooth {
        vars: Vec<String>,
        bases: Vec<BSplineBasis>,
        by: ByCoding,
        /// Covariates are matrix columns contracted over exposure times.
        matrix: bool,
        #[serde(with = "serde_mat::opt_matrix")]
        constraint: Option<DMatrix<f64>>,
        /// Multipliers applied to the raw marginal penalties.
        penalty_scale: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermMeta {
    pub label: String,
    pub kind: TermKind,
    pub start: usize,
    pub ncols: usize,
    pub column_names: Vec<String>,
}

impl TermMeta {
    pub fn range(&self) -> Range<usize> {
        self.start..self.start + self.ncols
    }

    pub fn is_smooth(&self) -> bool {
        matches!(self.kind, TermKind::Smooth { .. })
    }

    /// Every covariate the term reads.
    pub fn variables(&self) -> Vec<String> {
        match &self.kind {
            TermKind::Intercept => Vec::new(),
            TermKind::Parametric(c) => c
                .iter()
                .map(|c| match c {
                    Coding::Numeric(v) | Coding::Factor { var: v, .. } => v.clone(),
                })
                .collect(),
            TermKind::Smooth { vars, by, .. } => {
                let mut v = vars.clone();
                match by {
                    ByCoding::None => {}
                    ByCoding::Weights(w) => v.extend(w.iter().cloned()),
                    ByCoding::Level { var, .. } => v.push(var.clone()),
                }
                v
            }
        }
    }

    /// Penalty matrices in the term's own (constrained) coordinates.
    pub fn penalties(&self) -> Vec<DMatrix<f64>> {
        let TermKind::Smooth {
            bases,
            constraint,
            penalty_scale,
            ..
        } = &self.kind
        else {
            return Vec::new();
        };
        raw_penalties(bases)
            .into_iter()
            .zip(penalty_scale)
            .map(|(s, &c)| {
                let s = match constraint {
                    Some(z) => z.transpose() * s * z,
                    None => s,
                };
                s * c
            })
            .collect()
    }
}

fn penalty_order(k: usize) -> usize {
    PENALTY_ORDER.min(k - 1)
}

fn raw_penalties(bases: &[BSplineBasis]) -> Vec<DMatrix<f64>> {
    let dims: Vec<usize> = bases.iter().map(|b| b.k()).collect();
    let margins: Vec<_> = bases
        .iter()
        .map(|b| basis_penalty(b, penalty_order(b.k())).expect("k >= 2 checked at build time"))
        .collect();
    tensor_penalties(&dims, &margins).into_iter().map(|b| b.s).collect()
}

/// A penalty embedded at `start` in coefficient space.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedPenalty {
    pub s: DMatrix<f64>,
    pub start: usize,
    pub term_index: usize,
    pub null_space_dim: usize,
}

impl EmbeddedPenalty {
    pub fn embedded(&self, p: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(p, p);
        let k = self.s.nrows();
        m.view_mut((self.start, self.start), (k, k)).copy_from(&self.s);
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignBundle {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub offset: DVector<f64>,
    pub penalties: Vec<EmbeddedPenalty>,
    pub terms: Vec<TermMeta>,
}

impl DesignBundle {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn term_map(&self) -> IndexMap<String, Range<usize>> {
        self.terms.iter().map(|t| (t.label.clone(), t.range())).collect()
    }

    /// `Σ_b λ_b S_b` in full coordinates.
    pub fn penalty_matrix(&self, lambda: &[f64]) -> DMatrix<f64> {
        let p = self.p();
        let mut m = DMatrix::zeros(p, p);
        for (pen, &l) in self.penalties.iter().zip(lambda) {
            let k = pen.s.nrows();
            let mut v = m.view_mut((pen.start, pen.start), (k, k));
            v += &pen.s * l;
        }
        m
    }

    pub fn has_intercept(&self) -> bool {
        self.terms.iter().any(|t| matches!(t.kind, TermKind::Intercept))
    }
}

fn numeric_scalar<'a>(data: &'a ModelData, label: &str, name: &str) -> Result<&'a [f64], FitError> {
    match data.var(name) {
        Some(VarRef::Scalar(Column::Numeric(v))) => Ok(v),
        Some(VarRef::Scalar(Column::Categorical(_))) => {
            Err(FitError::InvalidTerm(format!("`{name}` in `{label}` must be numeric")))
        }
        Some(VarRef::Matrix(_)) => Err(FitError::MixedScalarMatrixTerm(label.to_string())),
        None => Err(unresolved(label, name)),
    }
}

fn unresolved(label: &str, name: &str) -> FitError {
    FitError::UnresolvedTerm {
        term: label.to_string(),
        name: name.to_string(),
    }
}

fn coding_columns(data: &ModelData, label: &str, c: &Coding) -> Result<(DMatrix<f64>, Vec<String>), FitError> {
    let n = data.nrows();
    match c {
        Coding::Numeric(v) => {
            let x = numeric_scalar(data, label, v)?;
            Ok((DMatrix::from_column_slice(n, 1, x), vec![v.clone()]))
        }
        Coding::Factor { var, levels } => {
            let col = match data.var(var) {
                Some(VarRef::Scalar(c)) => c,
                Some(VarRef::Matrix(_)) => return Err(FitError::MixedScalarMatrixTerm(label.to_string())),
                None => return Err(unresolved(label, var)),
            };
            let mut m = DMatrix::zeros(n, levels.len().saturating_sub(1));
            for i in 0..n {
                let v = col.value(i).to_string();
                match levels.iter().position(|l| *l == v) {
                    Some(0) => {}
                    Some(j) => m[(i, j - 1)] = 1.0,
                    None => {
                        return Err(FitError::UnknownLevel {
                            var: var.clone(),
                            level: v,
                        })
                    }
                }
            }
            Ok((m, levels[1..].iter().map(|l| format!("{var}{l}")).collect()))
        }
    }
}

/// Per-row weights (scalar smooths) of a `by` coding.
fn scalar_by(data: &ModelData, label: &str, by: &ByCoding) -> Result<Option<Vec<f64>>, FitError> {
    match by {
        ByCoding::None => Ok(None),
        ByCoding::Weights(names) => {
            let mut w = vec![1.0; data.nrows()];
            for n in names {
                let x = numeric_scalar(data, label, n)?;
                w.iter_mut().zip(x).for_each(|(a, b)| *a *= b);
            }
            Ok(Some(w))
        }
        ByCoding::Level { var, level } => {
            let col = match data.var(var) {
                Some(VarRef::Scalar(c)) => c,
                _ => return Err(unresolved(label, var)),
            };
            Ok(Some(
                (0..data.nrows())
                    .map(|i| if col.value(i).to_string() == *level { 1.0 } else { 0.0 })
                    .collect(),
            ))
        }
    }
}

fn matrix_var<'a>(data: &'a ModelData, label: &str, name: &str) -> Result<&'a DMatrix<f64>, FitError> {
    match data.var(name) {
        Some(VarRef::Matrix(m)) => Ok(m),
        Some(VarRef::Scalar(_)) => Err(FitError::MixedScalarMatrixTerm(label.to_string())),
        None => Err(unresolved(label, name)),
    }
}

/// Combined weight matrix of a matrix term; scalar factors broadcast over
/// exposure columns.
fn matrix_by(data: &ModelData, label: &str, by: &ByCoding, shape: (usize, usize)) -> Result<DMatrix<f64>, FitError> {
    let mut w = DMatrix::from_element(shape.0, shape.1, 1.0);
    match by {
        ByCoding::None => {}
        ByCoding::Weights(names) => {
            for n in names {
                match data.var(n) {
                    Some(VarRef::Matrix(m)) => {
                        if m.shape() != shape {
                            return Err(FitError::ShapeMismatch(format!("`{n}` in `{label}`")));
                        }
                        w.component_mul_assign(m);
                    }
                    Some(VarRef::Scalar(Column::Numeric(x))) => {
                        for (i, xi) in x.iter().enumerate() {
                            w.row_mut(i).scale_mut(*xi);
                        }
                    }
                    Some(VarRef::Scalar(_)) => {
                        return Err(FitError::InvalidTerm(format!("`{n}` in `{label}` must be numeric")))
                    }
                    None => return Err(unresolved(label, n)),
                }
            }
        }
        ByCoding::Level { .. } => {
            return Err(FitError::InvalidTerm(format!("factor `by` is not supported for matrix term `{label}`")))
        }
    }
    Ok(w)
}

/// Columns of a term before any identifiability constraint.
fn raw_columns(data: &ModelData, meta: &TermMeta) -> Result<DMatrix<f64>, FitError> {
    let n = data.nrows();
    let label = &meta.label;
    match &meta.kind {
        TermKind::Intercept => Ok(DMatrix::from_element(n, 1, 1.0)),
        TermKind::Parametric(codings) => {
            let mut m = coding_columns(data, label, &codings[0])?.0;
            for c in &codings[1..] {
                m = row_kronecker(&m, &coding_columns(data, label, c)?.0)?;
            }
            Ok(m)
        }
        TermKind::Smooth {
            vars, bases, by, matrix, ..
        } => {
            if *matrix {
                let xs = vars
                    .iter()
                    .map(|v| matrix_var(data, label, v))
                    .collect::<Result<Vec<_>, _>>()?;
                let w = matrix_by(data, label, by, xs[0].shape())?;
                Ok(matrix_tensor_design(&xs, &w, bases)?.columns)
            } else {
                let mut m: Option<DMatrix<f64>> = None;
                for (v, b) in vars.iter().zip(bases) {
                    let d = b.design(numeric_scalar(data, label, v)?);
                    m = Some(match m {
                        None => d,
                        Some(acc) => row_kronecker(&acc, &d)?,
                    });
                }
                let mut m = m.expect("smooth has at least one variable");
                if let Some(w) = scalar_by(data, label, by)? {
                    for (i, wi) in w.iter().enumerate() {
                        m.row_mut(i).scale_mut(*wi);
                    }
                }
                Ok(m)
            }
        }
    }
}

/// Evaluate one term on (possibly new) data.
pub fn term_columns(data: &ModelData, meta: &TermMeta) -> Result<DMatrix<f64>, FitError> {
    let raw = raw_columns(data, meta)?;
    Ok(match &meta.kind {
        TermKind::Smooth {
            constraint: Some(z), ..
        } => raw * z,
        _ => raw,
    })
}

/// Full design matrix for `terms` on `data`.
pub fn design_matrix(data: &ModelData, terms: &[TermMeta]) -> Result<DMatrix<f64>, FitError> {
    let p: usize = terms.iter().map(|t| t.ncols).sum();
    let mut x = DMatrix::zeros(data.nrows(), p);
    for t in terms {
        let cols = term_columns(data, t)?;
        if cols.ncols() != t.ncols {
            return Err(FitError::ShapeMismatch(format!(
                "term `{}` produced {} columns, expected {}",
                t.label,
                cols.ncols(),
                t.ncols
            )));
        }
        x.columns_mut(t.start, t.ncols).copy_from(&cols);
    }
    Ok(x)
}

enum VarKind {
    Numeric,
    Factor(Vec<String>),
    Matrix,
}

fn var_kind(data: &ModelData, label: &str, name: &str) -> Result<VarKind, FitError> {
    match data.var(name) {
        Some(VarRef::Scalar(Column::Numeric(_))) => Ok(VarKind::Numeric),
        Some(VarRef::Scalar(Column::Categorical(f))) => Ok(VarKind::Factor(f.levels.clone())),
        Some(VarRef::Matrix(_)) => Ok(VarKind::Matrix),
        None => Err(unresolved(label, name)),
    }
}

fn coding_for(data: &ModelData, label: &str, name: &str) -> Result<Coding, FitError> {
    match var_kind(data, label, name)? {
        VarKind::Numeric => Ok(Coding::Numeric(name.to_string())),
        VarKind::Factor(levels) => Ok(Coding::Factor {
            var: name.to_string(),
            levels,
        }),
        VarKind::Matrix => Err(FitError::MixedScalarMatrixTerm(label.to_string())),
    }
}

/// Unresolved smooth: knots are chosen once the term's data are known.
struct SmoothDraft {
    label: String,
    vars: Vec<String>,
    ks: Vec<usize>,
    by: ByCoding,
    matrix: bool,
    centered: bool,
}

fn smooth_drafts(data: &ModelData, term: &TermSpec) -> Result<Vec<SmoothDraft>, FitError> {
    let label = term.label();
    let (vars, ks, by) = match term {
        TermSpec::Smooth { var, by, k } => (vec![var.clone()], vec![*k], by.as_ref()),
        TermSpec::Tensor { vars, by, k } => {
            let ks = if k.len() == vars.len() {
                k.clone()
            } else if k.len() == 1 {
                vec![k[0]; vars.len()]
            } else {
                return Err(FitError::InvalidTerm(format!("`{label}` needs one k per margin")));
            };
            (vars.clone(), ks, by.as_ref())
        }
        _ => unreachable!(),
    };
    if let Some(&k) = ks.iter().find(|&&k| k < SPLINE_DEGREE + 1) {
        return Err(FitError::InvalidTerm(format!("`{label}`: k = {k} is below {}", SPLINE_DEGREE + 1)));
    }
    let mut n_matrix = 0;
    for v in &vars {
        match var_kind(data, &label, v)? {
            VarKind::Matrix => n_matrix += 1,
            VarKind::Numeric => {}
            VarKind::Factor(_) => return Err(FitError::InvalidTerm(format!("`{v}` in `{label}` must be numeric"))),
        }
    }
    if n_matrix != 0 && n_matrix != vars.len() {
        return Err(FitError::MixedScalarMatrixTerm(label));
    }
    let matrix = n_matrix > 0;
    let draft = |by: ByCoding, label: String, centered: bool| SmoothDraft {
        label,
        vars: vars.clone(),
        ks: ks.clone(),
        by,
        matrix,
        centered,
    };
    let Some(by) = by else {
        return Ok(vec![draft(ByCoding::None, label, !matrix)]);
    };
    let names: Vec<String> = by.names().into_iter().map(String::from).collect();
    if let (ByVar::Single(name), false) = (by, matrix) {
        if let VarKind::Factor(levels) = var_kind(data, &label, name)? {
            return Ok(levels[1..]
                .iter()
                .map(|lvl| {
                    draft(
                        ByCoding::Level {
                            var: name.clone(),
                            level: lvl.clone(),
                        },
                        format!("{label}{lvl}"),
                        true,
                    )
                })
                .collect());
        }
    }
    for n in &names {
        match var_kind(data, &label, n)? {
            VarKind::Factor(_) => {
                return Err(FitError::InvalidTerm(format!("factor `{n}` cannot weight `{label}`")));
            }
            VarKind::Matrix if !matrix => return Err(FitError::MixedScalarMatrixTerm(label)),
            _ => {}
        }
    }
    Ok(vec![draft(ByCoding::Weights(names), label, false)])
}

fn resolve_smooth(data: &ModelData, d: SmoothDraft) -> Result<(TermKind, DMatrix<f64>), FitError> {
    let bases = if d.matrix {
        let shape = matrix_var(data, &d.label, &d.vars[0])?.shape();
        let w = matrix_by(data, &d.label, &d.by, shape)?;
        d.vars
            .iter()
            .zip(&d.ks)
            .map(|(v, &k)| {
                let x = matrix_var(data, &d.label, v)?;
                if x.shape() != shape {
                    return Err(FitError::ShapeMismatch(format!("`{v}` in `{}`", d.label)));
                }
                Ok(BSplineBasis::from_data(&matrix_knot_values(x, Some(&w)), k, SPLINE_DEGREE)?)
            })
            .collect::<Result<Vec<_>, FitError>>()?
    } else {
        d.vars
            .iter()
            .zip(&d.ks)
            .map(|(v, &k)| {
                let x = numeric_scalar(data, &d.label, v)?;
                Ok(BSplineBasis::from_data(x, k, SPLINE_DEGREE)?)
            })
            .collect::<Result<Vec<_>, FitError>>()?
    };
    let mut meta = TermMeta {
        label: d.label,
        kind: TermKind::Smooth {
            vars: d.vars,
            bases,
            by: d.by,
            matrix: d.matrix,
            constraint: None,
            penalty_scale: Vec::new(),
        },
        start: 0,
        ncols: 0,
        column_names: Vec::new(),
    };
    let raw = raw_columns(data, &meta)?;
    let (cols, z) = if d.centered {
        let (xz, z) = apply_sum_to_zero(&raw);
        (xz, Some(z))
    } else {
        (raw, None)
    };
    let TermKind::Smooth {
        bases,
        constraint,
        penalty_scale,
        ..
    } = &mut meta.kind
    else {
        unreachable!()
    };
    // put every penalty on the scale of the term's cross-product
    let xtx = cols.transpose() * &cols;
    let xnorm = xtx.norm();
    *penalty_scale = raw_penalties(bases)
        .into_iter()
        .map(|s| {
            let s = match &z {
                Some(z) => z.transpose() * s * z,
                None => s,
            };
            let sn = s.norm();
            if sn > 0.0 && xnorm > 0.0 {
                xnorm / sn
            } else {
                1.0
            }
        })
        .collect();
    *constraint = z;
    Ok((meta.kind, cols))
}

/// Assemble the design, response, offset and penalties of a model.
pub fn build_design(data: &ModelData, model: &ModelSpec) -> Result<DesignBundle, FitError> {
    let n = data.nrows();
    let y = numeric_scalar(data, "response", &model.response)?.to_vec();
    let offset = match data.frame.get(&model.offset_col) {
        Some(Column::Numeric(v)) => v.clone(),
        Some(_) => return Err(FitError::InvalidTerm(format!("offset `{}` must be numeric", model.offset_col))),
        None => vec![0.0; n],
    };

    let mut blocks: Vec<(TermKind, String, DMatrix<f64>, Vec<String>)> = vec![(
        TermKind::Intercept,
        "(Intercept)".to_string(),
        DMatrix::from_element(n, 1, 1.0),
        vec!["(Intercept)".to_string()],
    )];
    for term in &model.terms {
        let label = term.label();
        match term {
            TermSpec::Linear(v) => {
                let c = coding_for(data, &label, v)?;
                let (m, names) = coding_columns(data, &label, &c)?;
                blocks.push((TermKind::Parametric(vec![c]), label, m, names));
            }
            TermSpec::Interaction(a, b) => {
                let ca = coding_for(data, &label, a)?;
                let cb = coding_for(data, &label, b)?;
                let (ma, na) = coding_columns(data, &label, &ca)?;
                let (mb, nb) = coding_columns(data, &label, &cb)?;
                let names = na.iter().flat_map(|x| nb.iter().map(move |y| format!("{x}:{y}"))).collect();
                blocks.push((TermKind::Parametric(vec![ca, cb]), label, row_kronecker(&ma, &mb)?, names));
            }
            TermSpec::Smooth { .. } | TermSpec::Tensor { .. } => {
                for d in smooth_drafts(data, term)? {
                    let label = d.label.clone();
                    let (kind, cols) = resolve_smooth(data, d)?;
                    let names = (1..=cols.ncols()).map(|j| format!("{label}.{j}")).collect();
                    blocks.push((kind, label, cols, names));
                }
            }
        }
    }

    let p: usize = blocks.iter().map(|b| b.2.ncols()).sum();
    let mut x = DMatrix::zeros(n, p);
    let mut terms = Vec::with_capacity(blocks.len());
    let mut penalties = Vec::new();
    let mut start = 0;
    for (kind, label, cols, column_names) in blocks {
        let ncols = cols.ncols();
        x.columns_mut(start, ncols).copy_from(&cols);
        let meta = TermMeta {
            label,
            kind,
            start,
            ncols,
            column_names,
        };
        if let TermKind::Smooth { bases, .. } = &meta.kind {
            let nulls: Vec<usize> = {
                let dims: Vec<usize> = bases.iter().map(|b| b.k()).collect();
                (0..dims.len())
                    .map(|m| {
                        let others: usize = dims.iter().enumerate().filter(|&(i, _)| i != m).map(|(_, d)| d).product();
                        penalty_order(dims[m]) * others
                    })
                    .collect()
            };
            for (s, null_space_dim) in meta.penalties().into_iter().zip(nulls) {
                penalties.push(EmbeddedPenalty {
                    s,
                    start,
                    term_index: terms.len(),
                    null_space_dim,
                });
            }
        }
        terms.push(meta);
        start += ncols;
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(FitError::InvalidTerm("design contains non-finite values".into()));
    }
    Ok(DesignBundle {
        x,
        y: DVector::from_vec(y),
        offset: DVector::from_vec(offset),
        penalties,
        terms,
    })
}
