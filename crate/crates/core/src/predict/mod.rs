//! Prediction grids and post-processing of fitted models.

mod curves;
mod effects;

use crate::fit::{design_matrix, FitError, FittedPamm, ModelData};
use crate::frame::{Column, Factor, Frame, Value};
use crate::ped::{int_info, interval_label, MatrixRole, PedDataset, SurvDataset, STRUCTURAL_COLUMNS};
use indexmap::IndexMap;
use nalgebra::DMatrix;
use thiserror::Error;

pub use curves::{
    add_cumu_hazard, add_hazard, add_surv_prob, cumu_coef_frame, get_cumu_coef, predict_cumu_hazard, predict_hazard, surv_from_cumu,
    CumuCoefRow, CumuPrediction, HazardPrediction, Scale, SurvPrediction,
};
pub use effects::{export_cumu_effect, export_laglead, export_partial_effect};

/// Normal quantile used for pointwise intervals.
pub const Z_CRIT: f64 = 1.96;
pub const DEFAULT_DRAWS: usize = 100;

const INTERVAL_VARS: [&str; 5] = ["tstart", "tend", "intlen", "interval", "offset"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PredictError {
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("tend = {0} is not a training cut point")]
    TendNotOnGrid(f64),
    #[error("`{0}` follows from tend; specify tend instead")]
    DerivedIntervalVariable(String),
    #[error("`{level}` is not a level of `{var}`")]
    UnknownLevel { var: String, level: String },
    #[error("value `{value}` does not fit column `{var}`")]
    TypeMismatch { var: String, value: String },
    #[error("new data lacks `{0}`, which the model uses")]
    MissingTermColumns(String),
    #[error("rows within a group must have increasing tend and positive intlen")]
    UnorderedIntervals,
    #[error("unknown term `{0}`")]
    UnknownTerm(String),
    #[error(transparent)]
    Fit(#[from] FitError),
}

/// Rows to predict on: scalar columns, matrix columns and a group index
/// per row. Cumulative quantities accumulate within groups.
#[derive(Debug, Clone, PartialEq)]
pub struct Newdata {
    pub frame: Frame,
    pub matrices: IndexMap<String, DMatrix<f64>>,
    pub groups: Vec<usize>,
}

impl Newdata {
    pub fn from_frame(frame: Frame) -> Self {
        let n = frame.nrows();
        Newdata {
            frame,
            matrices: IndexMap::new(),
            groups: vec![0; n],
        }
    }

    pub fn nrows(&self) -> usize {
        self.frame.nrows()
    }

    pub fn model_data(&self) -> ModelData {
        ModelData {
            frame: self.frame.clone(),
            matrices: self.matrices.clone(),
        }
    }

    /// Design matrix of `fit` on these rows.
    pub fn design(&self, fit: &FittedPamm) -> Result<DMatrix<f64>, PredictError> {
        design_matrix(&self.model_data(), &fit.terms).map_err(missing_columns)
    }

    /// Row indices of each group, in row order.
    pub fn group_rows(&self) -> Vec<Vec<usize>> {
        let mut out: Vec<Vec<usize>> = Vec::new();
        for (i, &g) in self.groups.iter().enumerate() {
            if g >= out.len() {
                out.resize(g + 1, Vec::new());
            }
            out[g].push(i);
        }
        out.retain(|g| !g.is_empty());
        out
    }
}

pub(crate) fn missing_columns(e: FitError) -> PredictError {
    match e {
        FitError::UnresolvedTerm { name, .. } => PredictError::MissingTermColumns(name),
        other => PredictError::Fit(other),
    }
}

/// Column holding `vals`, typed like `template` (categorical columns keep
/// their levels).
fn column_like(template: &Column, var: &str, vals: &[Value]) -> Result<Column, PredictError> {
    match template {
        Column::Numeric(_) => vals
            .iter()
            .map(|v| match v {
                Value::Num(x) => Ok(*x),
                Value::Str(s) => s.parse::<f64>().map_err(|_| PredictError::TypeMismatch {
                    var: var.to_string(),
                    value: s.clone(),
                }),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Column::Numeric),
        Column::Categorical(f) => {
            let labels: Vec<String> = vals.iter().map(|v| v.to_string()).collect();
            if let Some(bad) = labels.iter().find(|l| !f.levels.contains(l)) {
                return Err(PredictError::UnknownLevel {
                    var: var.to_string(),
                    level: bad.clone(),
                });
            }
            Ok(Column::Categorical(Factor::with_levels(&labels, &f.levels).expect("levels checked")))
        }
    }
}

fn group_keys(frame: &Frame, group_by: &[String]) -> Result<(Vec<usize>, Vec<usize>), PredictError> {
    let cols = group_by
        .iter()
        .map(|g| frame.get(g).ok_or_else(|| PredictError::UnknownColumn(g.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    let mut keys: Vec<Vec<String>> = Vec::new();
    let mut first_rows = Vec::new();
    let mut group = Vec::with_capacity(frame.nrows());
    for i in 0..frame.nrows() {
        let key: Vec<String> = cols.iter().map(|c| c.format_cell(i)).collect();
        let g = match keys.iter().position(|k| *k == key) {
            Some(g) => g,
            None => {
                keys.push(key);
                first_rows.push(i);
                keys.len() - 1
            }
        };
        group.push(g);
    }
    Ok((group, first_rows))
}

/// Means of numeric and modes of categorical columns, one row per group
/// (groups in order of first appearance). Interval bookkeeping columns are
/// left out.
pub fn sample_info(frame: &Frame, group_by: &[String]) -> Result<Frame, PredictError> {
    if frame.nrows() == 0 {
        return Ok(Frame::new(0));
    }
    let (group, first_rows) = group_keys(frame, group_by)?;
    let rows_of: Vec<Vec<usize>> = (0..first_rows.len())
        .map(|g| (0..frame.nrows()).filter(|&i| group[i] == g).collect())
        .collect();
    let mut out = Frame::new(first_rows.len());
    for (name, col) in frame.iter() {
        if STRUCTURAL_COLUMNS.contains(&name) {
            continue;
        }
        let vals: Vec<Value> = if group_by.iter().any(|g| g == name) {
            first_rows.iter().map(|&r| col.value(r)).collect()
        } else {
            rows_of.iter().map(|rows| col.summary(rows)).collect()
        };
        out.insert(name, column_like(col, name, &vals)?);
    }
    Ok(out)
}

/// Base data for [`make_newdata`].
#[derive(Debug, Clone, Copy)]
pub enum Base<'a> {
    Surv(&'a SurvDataset),
    Ped(&'a PedDataset),
}

fn cartesian(lens: &[usize]) -> Vec<Vec<usize>> {
    let total: usize = lens.iter().product();
    (0..total)
        .map(|mut r| {
            let mut idx = vec![0; lens.len()];
            for k in (0..lens.len()).rev() {
                idx[k] = r % lens[k];
                r /= lens[k];
            }
            idx
        })
        .collect()
}

/// Scalar interval columns and matrix rows for PED-shaped new data.
/// `interval` holds the cut interval of each row; exposure matrices take
/// `exposure[name]` when given, else their training column means.
pub(crate) fn ped_rows(
    ped: &PedDataset,
    interval: &[usize],
    covariates: &Frame,
    exposure: &IndexMap<String, f64>,
) -> Result<(Frame, IndexMap<String, DMatrix<f64>>), PredictError> {
    let n = interval.len();
    let bounds: Vec<(f64, f64)> = ped.cuts.intervals().collect();
    let tstart: Vec<f64> = interval.iter().map(|&j| bounds[j].0).collect();
    let tend: Vec<f64> = interval.iter().map(|&j| bounds[j].1).collect();
    let intlen: Vec<f64> = tend.iter().zip(&tstart).map(|(e, s)| e - s).collect();
    let mut f = Frame::new(n);
    f.insert("tstart", Column::Numeric(tstart));
    f.insert("tend", Column::Numeric(tend.clone()));
    f.insert("intlen", Column::Numeric(intlen.clone()));
    f.insert(
        "interval",
        Column::Categorical(Factor {
            levels: bounds.iter().map(|&(s, e)| interval_label(s, e)).collect(),
            codes: interval.to_vec(),
        }),
    );
    f.insert("offset", Column::Numeric(intlen.iter().map(|l| l.ln()).collect()));
    for (name, col) in covariates.iter() {
        f.insert(name, col.clone());
    }

    let mut matrices = IndexMap::new();
    for (name, m) in &ped.matrices {
        let role = ped.matrix_role(name).unwrap_or(MatrixRole::Exposure);
        let out = if role.interval_determined() {
            let mut out = DMatrix::zeros(n, m.ncols());
            for (r, &j) in interval.iter().enumerate() {
                let src = ped.interval.iter().position(|&k| k == j).ok_or(PredictError::TendNotOnGrid(tend[r]))?;
                out.set_row(r, &m.row(src));
            }
            out
        } else {
            match exposure.get(name) {
                Some(&z) => DMatrix::from_element(n, m.ncols(), z),
                None => {
                    let means = m.row_mean();
                    DMatrix::from_fn(n, m.ncols(), |_, q| means[q])
                }
            }
        };
        matrices.insert(name.clone(), out);
    }
    Ok((f, matrices))
}

/// Cartesian product of the specified values; everything else at sample
/// means or modes. With a PED base, specified `tend` values select training
/// intervals and the remaining interval columns follow; otherwise the first
/// interval is used. Rows sharing the non-interval values form a group.
pub fn make_newdata(base: Base<'_>, specified: &IndexMap<String, Vec<Value>>) -> Result<Newdata, PredictError> {
    let covariates = match base {
        Base::Surv(s) => &s.covariates,
        Base::Ped(p) => &p.covariates,
    };
    let ped = match base {
        Base::Ped(p) => Some(p),
        Base::Surv(_) => None,
    };
    let mut exposure_names = Vec::new();
    for name in specified.keys() {
        let is_tend = name == "tend" && ped.is_some();
        if !is_tend && ped.is_some() && INTERVAL_VARS.contains(&name.as_str()) {
            return Err(PredictError::DerivedIntervalVariable(name.clone()));
        }
        let is_exposure = ped.is_some_and(|p| p.matrices.contains_key(name) && p.matrix_role(name) == Some(MatrixRole::Exposure));
        if is_exposure {
            exposure_names.push(name.clone());
        } else if !is_tend && !covariates.contains(name) {
            return Err(PredictError::UnknownColumn(name.clone()));
        }
    }

    let names: Vec<&String> = specified.keys().collect();
    let lens: Vec<usize> = specified.values().map(|v| v.len()).collect();
    let combos = cartesian(&lens);
    let n = combos.len();

    let summary = sample_info(covariates, &[])?;
    let mut cov = Frame::new(n);
    for (name, col) in covariates.iter() {
        match names.iter().position(|s| *s == name) {
            Some(k) => {
                let vals: Vec<Value> = combos.iter().map(|c| specified[k][c[k]].clone()).collect();
                cov.insert(name, column_like(col, name, &vals)?);
            }
            None => {
                if let Some(c) = summary.get(name) {
                    cov.insert(name, c.take(&vec![0; n]));
                }
            }
        }
    }

    // groups: distinct combinations of everything except tend
    let tend_pos = names.iter().position(|s| *s == "tend" && ped.is_some());
    let mut keys: Vec<Vec<usize>> = Vec::new();
    let groups: Vec<usize> = combos
        .iter()
        .map(|c| {
            let key: Vec<usize> = c.iter().enumerate().filter(|(k, _)| Some(*k) != tend_pos).map(|(_, &v)| v).collect();
            match keys.iter().position(|k| *k == key) {
                Some(g) => g,
                None => {
                    keys.push(key);
                    keys.len() - 1
                }
            }
        })
        .collect();

    let Some(ped) = ped else {
        return Ok(Newdata {
            frame: cov,
            matrices: IndexMap::new(),
            groups,
        });
    };
    let interval = match tend_pos {
        Some(k) => combos
            .iter()
            .map(|c| {
                let v = match &specified[k][c[k]] {
                    Value::Num(x) => *x,
                    Value::Str(s) => s.parse().map_err(|_| PredictError::TypeMismatch {
                        var: "tend".into(),
                        value: s.clone(),
                    })?,
                };
                ped.cuts.interval_ending_at(v).ok_or(PredictError::TendNotOnGrid(v))
            })
            .collect::<Result<Vec<_>, _>>()?,
        None => vec![0; n],
    };
    let mut exposure = IndexMap::new();
    for name in &exposure_names {
        let vals = &specified[name.as_str()];
        if vals.len() != 1 {
            return Err(PredictError::TypeMismatch {
                var: name.clone(),
                value: format!("{} values; exposure matrices take one constant", vals.len()),
            });
        }
        let Value::Num(z) = vals[0] else {
            return Err(PredictError::TypeMismatch {
                var: name.clone(),
                value: vals[0].to_string(),
            });
        };
        exposure.insert(name.clone(), z);
    }
    let (frame, matrices) = ped_rows(ped, &interval, &cov, &exposure)?;
    Ok(Newdata { frame, matrices, groups })
}

/// One row per observed interval (per group), covariates at sample means
/// or modes.
pub fn ped_info(ped: &PedDataset, group_by: &[String]) -> Result<Newdata, PredictError> {
    let summary = sample_info(&ped.covariates, group_by)?;
    let n_groups = if ped.covariates.ncols() == 0 { 1 } else { summary.nrows() };
    let present: Vec<usize> = int_info(ped)
        .iter()
        .map(|i| ped.cuts.interval_ending_at(i.tend).expect("interval from cuts"))
        .collect();
    let mut rows = Vec::new();
    let mut interval = Vec::new();
    let mut groups = Vec::new();
    for g in 0..n_groups {
        for &j in &present {
            rows.push(g);
            interval.push(j);
            groups.push(g);
        }
    }
    let cov = if summary.ncols() == 0 { Frame::new(rows.len()) } else { summary.take(&rows) };
    let (frame, matrices) = ped_rows(ped, &interval, &cov, &IndexMap::new())?;
    Ok(Newdata { frame, matrices, groups })
}
