//! Piecewise-exponential data (PED): splitting follow-up into intervals,
//! interval event indicators, log-exposure offsets, concurrent
//! time-dependent covariates and cumulative-effect matrix columns.

mod cumulative;
mod laglead;
mod split;

use crate::formula::{ConcurrentTerm, LagLeadSpec, TransformSpec};
use crate::frame::{format_f64, Column, Factor, Frame};
use indexmap::IndexMap;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cumulative::split_cumulative;
pub use laglead::{grid_weights, make_lag_lead, LagLeadMatrix};
pub use split::{default_cuts, split_concurrent, split_tcc};

/// Names of the structural PED columns.
pub const STRUCTURAL_COLUMNS: [&str; 7] = ["id", "tstart", "tend", "intlen", "interval", "offset", "ped_status"];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransformError {
    #[error("no events (status = 1) and no max_time given")]
    NoEvents,
    #[error("subject {id} has non-positive time {time}")]
    NonPositiveTime { id: i64, time: f64 },
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("subject {0} has no exposure at or before the start of follow-up")]
    MissingBaselineExposure(i64),
    #[error("exposure grid for `{tz_var}` differs for subject {id}; grids must be shared by all subjects")]
    RaggedExposureGrid { tz_var: String, id: i64 },
    #[error("subject {id} has no exposure series for `{tz_var}`")]
    MissingExposureSeries { tz_var: String, id: i64 },
    #[error("no exposure table for tz_var `{0}`")]
    MissingExposureTable(String),
    #[error("invalid cut points: {0}")]
    InvalidCuts(String),
    #[error("concurrent and cumulative specials cannot be combined in one transformation")]
    CombinedSpecials,
    #[error("invalid data: {0}")]
    InvalidData(String),
}

/// Strictly increasing interval boundaries `k_0 < ... < k_J`, `J >= 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct CutPoints(Vec<f64>);

impl CutPoints {
    pub fn new(values: Vec<f64>) -> Result<Self, TransformError> {
        if values.len() < 2 {
            return Err(TransformError::InvalidCuts("need at least two cut points".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(TransformError::InvalidCuts("cut points must be finite".into()));
        }
        if values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(TransformError::InvalidCuts("cut points must be strictly increasing".into()));
        }
        Ok(CutPoints(values))
    }

    /// `from, from + step, ...` up to `to`; `to` is included when it lies on
    /// the grid within 1e-9.
    pub fn seq(from: f64, to: f64, step: f64) -> Result<Self, TransformError> {
        Self::new(seq(from, to, step)?)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn n_intervals(&self) -> usize {
        self.0.len() - 1
    }

    pub fn first(&self) -> f64 {
        self.0[0]
    }

    pub fn last(&self) -> f64 {
        self.0[self.0.len() - 1]
    }

    pub fn intervals(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.0.windows(2).map(|w| (w[0], w[1]))
    }

    /// Index of the interval `(k_{j-1}, k_j]` whose end is `tend`.
    pub fn interval_ending_at(&self, tend: f64) -> Option<usize> {
        let tol = 1e-9 * (1.0 + tend.abs());
        self.0.iter().skip(1).position(|&c| (c - tend).abs() <= tol)
    }
}

impl TryFrom<Vec<f64>> for CutPoints {
    type Error = TransformError;
    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        CutPoints::new(v)
    }
}

impl From<CutPoints> for Vec<f64> {
    fn from(c: CutPoints) -> Self {
        c.0
    }
}

/// Regular grid helper shared by cut points and exposure grids.
pub fn seq(from: f64, to: f64, step: f64) -> Result<Vec<f64>, TransformError> {
    if !(step > 0.0) || !from.is_finite() || !to.is_finite() || to < from {
        return Err(TransformError::InvalidCuts(format!("bad sequence {from}:{to}:{step}")));
    }
    let span = (to - from) / step;
    let n = (span + 1e-9).floor() as usize;
    let mut out: Vec<f64> = (0..=n).map(|i| from + i as f64 * step).collect();
    // snap the end point when it is an exact multiple
    if (span - n as f64).abs() < 1e-9 {
        *out.last_mut().unwrap() = to;
    }
    Ok(out)
}

/// `"(a,b]"` with up to six significant digits.
pub fn interval_label(start: f64, end: f64) -> String {
    format!("({},{}]", sig6(start), sig6(end))
}

fn sig6(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let rounded: f64 = format!("{v:.5e}").parse().unwrap_or(v);
    format_f64(rounded)
}

/// Exposure measurements of one tz variable: rows `(id, tz, values...)`,
/// kept sorted by `(id, tz)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExposureTable {
    pub tz_var: String,
    pub ids: Vec<i64>,
    pub tz: Vec<f64>,
    pub values: Frame,
}

impl ExposureTable {
    pub fn new(tz_var: impl Into<String>, ids: Vec<i64>, tz: Vec<f64>, values: Frame) -> Result<Self, TransformError> {
        if ids.len() != tz.len() || values.nrows() != ids.len() {
            return Err(TransformError::InvalidData("exposure table columns differ in length".into()));
        }
        let mut order: Vec<usize> = (0..ids.len()).collect();
        order.sort_by(|&a, &b| ids[a].cmp(&ids[b]).then(tz[a].total_cmp(&tz[b])));
        let ids = order.iter().map(|&i| ids[i]).collect();
        let tz = order.iter().map(|&i| tz[i]).collect();
        let values = values.take(&order);
        Ok(ExposureTable {
            tz_var: tz_var.into(),
            ids,
            tz,
            values,
        })
    }

    /// Row range belonging to subject `id`.
    pub fn rows_for(&self, id: i64) -> std::ops::Range<usize> {
        let lo = self.ids.partition_point(|&x| x < id);
        let hi = self.ids.partition_point(|&x| x <= id);
        lo..hi
    }
}

/// Subject-level survival data: one row per subject plus optional exposure
/// tables keyed by tz variable.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvDataset {
    pub ids: Vec<i64>,
    pub time: Vec<f64>,
    pub status: Vec<u8>,
    pub covariates: Frame,
    pub exposures: IndexMap<String, ExposureTable>,
}

impl SurvDataset {
    pub fn new(ids: Vec<i64>, time: Vec<f64>, status: Vec<u8>, covariates: Frame) -> Result<Self, TransformError> {
        let n = ids.len();
        if time.len() != n || status.len() != n || (covariates.ncols() > 0 && covariates.nrows() != n) {
            return Err(TransformError::InvalidData("subject columns differ in length".into()));
        }
        if let Some(s) = status.iter().find(|&&s| s > 1) {
            return Err(TransformError::InvalidData(format!("status must be 0 or 1, got {s}")));
        }
        let mut sorted = ids.clone();
        sorted.sort_unstable();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(TransformError::InvalidData(format!("duplicate subject id {}", w[0])));
        }
        let covariates = if covariates.ncols() == 0 { Frame::new(n) } else { covariates };
        Ok(SurvDataset {
            ids,
            time,
            status,
            covariates,
            exposures: IndexMap::new(),
        })
    }

    pub fn with_exposure(mut self, table: ExposureTable) -> Self {
        self.exposures.insert(table.tz_var.clone(), table);
        self
    }

    pub fn n_subjects(&self) -> usize {
        self.ids.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixRole {
    /// Follow-up time of the interval, replicated over exposure times.
    Time,
    /// Time since exposure.
    Latency,
    /// Exposure time itself.
    ExposureTime,
    /// Exposure values z(tz).
    Exposure,
    /// Lag-lead weights.
    LagLead,
}

impl MatrixRole {
    /// Whether the column is fully determined by the interval (as opposed to
    /// the subject's exposure history).
    pub fn interval_determined(self) -> bool {
        !matches!(self, MatrixRole::Exposure)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixColumnMeta {
    pub name: String,
    pub role: MatrixRole,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumulativeMeta {
    pub tz_var: String,
    pub ll: LagLeadSpec,
    pub tz_grid: Vec<f64>,
    pub columns: Vec<MatrixColumnMeta>,
}

/// Long-format piecewise-exponential data.
#[derive(Debug, Clone, PartialEq)]
pub struct PedDataset {
    pub ids: Vec<i64>,
    /// Zero-based interval index into `cuts` for every row.
    pub interval: Vec<usize>,
    pub tstart: Vec<f64>,
    pub tend: Vec<f64>,
    pub offset: Vec<f64>,
    pub ped_status: Vec<u8>,
    pub covariates: Frame,
    pub matrices: IndexMap<String, DMatrix<f64>>,
    pub cuts: CutPoints,
    pub cumulative: Vec<CumulativeMeta>,
    pub concurrent: Vec<ConcurrentTerm>,
}

impl PedDataset {
    pub fn nrows(&self) -> usize {
        self.ids.len()
    }

    pub fn intlen(&self) -> Vec<f64> {
        self.tstart.iter().zip(&self.tend).map(|(s, e)| e - s).collect()
    }

    pub fn interval_labels(&self) -> Vec<String> {
        self.tstart.iter().zip(&self.tend).map(|(&s, &e)| interval_label(s, e)).collect()
    }

    /// Interval factor with one level per cut interval, in time order.
    pub fn interval_factor(&self) -> Factor {
        let levels: Vec<String> = self.cuts.intervals().map(|(s, e)| interval_label(s, e)).collect();
        Factor {
            levels,
            codes: self.interval.clone(),
        }
    }

    /// All scalar columns: structural ones first, then covariates.
    pub fn frame(&self) -> Frame {
        let mut f = Frame::new(self.nrows());
        f.insert("id", Column::Numeric(self.ids.iter().map(|&i| i as f64).collect()));
        f.insert("tstart", Column::Numeric(self.tstart.clone()));
        f.insert("tend", Column::Numeric(self.tend.clone()));
        f.insert("intlen", Column::Numeric(self.intlen()));
        f.insert("interval", Column::Categorical(self.interval_factor()));
        f.insert("offset", Column::Numeric(self.offset.clone()));
        f.insert(
            "ped_status",
            Column::Numeric(self.ped_status.iter().map(|&s| s as f64).collect()),
        );
        for (name, col) in self.covariates.iter() {
            f.insert(name, col.clone());
        }
        f
    }

    pub fn matrix_role(&self, name: &str) -> Option<MatrixRole> {
        self.cumulative
            .iter()
            .flat_map(|c| c.columns.iter())
            .find(|c| c.name == name)
            .map(|c| c.role)
    }
}

/// Transform subject data into PED, dispatching on the specials in `spec`.
pub fn as_ped(
    data: &SurvDataset,
    spec: &TransformSpec,
    cuts: Option<&CutPoints>,
    max_time: Option<f64>,
) -> Result<PedDataset, TransformError> {
    match (spec.concurrent.is_empty(), spec.cumulative.is_empty()) {
        (false, false) => Err(TransformError::CombinedSpecials),
        (false, true) => split_concurrent(data, spec, cuts, max_time),
        (true, false) => {
            let cuts = match cuts {
                Some(c) => c.clone(),
                None => default_cuts(data, max_time)?,
            };
            split_cumulative(data, spec, &cuts)
        }
        (true, true) => {
            let cuts = match cuts {
                Some(c) => c.clone(),
                None => default_cuts(data, max_time)?,
            };
            split_tcc(data, spec, &cuts, max_time)
        }
    }
}

/// One row per unique interval of a PED.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntervalInfo {
    pub tstart: f64,
    pub tend: f64,
    pub intlen: f64,
    pub intmid: f64,
    pub interval: String,
}

/// Interval table for a set of cut points.
pub fn int_info_from_cuts(cuts: &CutPoints) -> Vec<IntervalInfo> {
    cuts.intervals()
        .map(|(s, e)| IntervalInfo {
            tstart: s,
            tend: e,
            intlen: e - s,
            intmid: s + (e - s) / 2.0,
            interval: interval_label(s, e),
        })
        .collect()
}

/// Unique intervals present in the PED, sorted by start time.
pub fn int_info(ped: &PedDataset) -> Vec<IntervalInfo> {
    let mut present = vec![false; ped.cuts.n_intervals()];
    for &j in &ped.interval {
        present[j] = true;
    }
    int_info_from_cuts(&ped.cuts)
        .into_iter()
        .zip(present)
        .filter_map(|(info, p)| p.then_some(info))
        .collect()
}
