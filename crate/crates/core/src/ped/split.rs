use super::{CutPoints, PedDataset, SurvDataset, TransformError};
use crate::formula::{KeepCovariates, TransformSpec};
use crate::frame::{Column, Frame};
use indexmap::IndexMap;
use rayon::prelude::*;

/// Sorted unique event times prefixed with 0, truncated to / extended by
/// `max_time` when given.
pub fn default_cuts(data: &SurvDataset, max_time: Option<f64>) -> Result<CutPoints, TransformError> {
    let mut events: Vec<f64> = data
        .time
        .iter()
        .zip(&data.status)
        .filter(|(_, &s)| s == 1)
        .map(|(&t, _)| t)
        .collect();
    if events.is_empty() && max_time.is_none() {
        return Err(TransformError::NoEvents);
    }
    events.sort_by(f64::total_cmp);
    events.dedup();
    let mut cuts = vec![0.0];
    cuts.extend(events.into_iter().filter(|&t| t > 0.0));
    if let Some(m) = max_time {
        cuts.retain(|&c| c < m);
        cuts.push(m);
    }
    CutPoints::new(cuts)
}

fn truncate_cuts(cuts: &CutPoints, max_time: Option<f64>) -> Result<CutPoints, TransformError> {
    match max_time {
        None => Ok(cuts.clone()),
        Some(m) => {
            let mut v: Vec<f64> = cuts.values().iter().copied().filter(|&c| c < m).collect();
            v.push(m);
            CutPoints::new(v)
        }
    }
}

pub(crate) struct SubjectRow {
    pub interval: usize,
    pub tstart: f64,
    pub tend: f64,
    pub offset: f64,
    pub status: u8,
}

/// Intervals at risk for one subject. An event exactly at a cut point falls
/// into the interval that ends there.
pub(crate) fn subject_rows(time: f64, status: u8, cuts: &CutPoints) -> Vec<SubjectRow> {
    let c = cuts.values();
    let horizon = time.min(cuts.last());
    let event_inside = status == 1 && time <= cuts.last();
    let mut rows = Vec::new();
    for j in 0..cuts.n_intervals() {
        let (start, end) = (c[j], c[j + 1]);
        if start >= horizon {
            break;
        }
        let at_risk = end.min(time) - start;
        debug_assert!(at_risk > 0.0, "zero-length exposure at interval {j}");
        rows.push(SubjectRow {
            interval: j,
            tstart: start,
            tend: end,
            offset: at_risk.ln(),
            status: 0,
        });
    }
    if event_inside {
        if let Some(last) = rows.last_mut() {
            last.status = 1;
        }
    }
    rows
}

fn kept_columns(data: &SurvDataset, spec: &TransformSpec) -> Result<Vec<String>, TransformError> {
    match &spec.keep {
        KeepCovariates::All => Ok(data
            .covariates
            .names()
            .filter(|n| *n != spec.time_col && *n != spec.status_col && *n != "id")
            .map(String::from)
            .collect()),
        KeepCovariates::Names(names) => {
            for n in names {
                if !data.covariates.contains(n) {
                    return Err(TransformError::UnknownColumn(n.clone()));
                }
            }
            Ok(names.clone())
        }
    }
}

/// Split time-constant covariate data at `cuts`. Subjects followed beyond the
/// last cut are administratively censored there.
pub fn split_tcc(
    data: &SurvDataset,
    spec: &TransformSpec,
    cuts: &CutPoints,
    max_time: Option<f64>,
) -> Result<PedDataset, TransformError> {
    let cuts = truncate_cuts(cuts, max_time)?;
    for (i, &t) in data.time.iter().enumerate() {
        if !(t > cuts.first()) || !t.is_finite() {
            return Err(TransformError::NonPositiveTime { id: data.ids[i], time: t });
        }
    }
    let keep = kept_columns(data, spec)?;

    let per_subject: Vec<Vec<SubjectRow>> = (0..data.n_subjects())
        .into_par_iter()
        .map(|i| subject_rows(data.time[i], data.status[i], &cuts))
        .collect();

    let total: usize = per_subject.iter().map(|r| r.len()).sum();
    let mut ped = PedDataset {
        ids: Vec::with_capacity(total),
        interval: Vec::with_capacity(total),
        tstart: Vec::with_capacity(total),
        tend: Vec::with_capacity(total),
        offset: Vec::with_capacity(total),
        ped_status: Vec::with_capacity(total),
        covariates: Frame::new(total),
        matrices: IndexMap::new(),
        cuts,
        cumulative: Vec::new(),
        concurrent: Vec::new(),
    };
    let mut source_row = Vec::with_capacity(total);
    for (i, rows) in per_subject.into_iter().enumerate() {
        for r in rows {
            ped.ids.push(data.ids[i]);
            ped.interval.push(r.interval);
            ped.tstart.push(r.tstart);
            ped.tend.push(r.tend);
            ped.offset.push(r.offset);
            ped.ped_status.push(r.status);
            source_row.push(i);
        }
    }
    ped.covariates = data.covariates.select(&keep).take(&source_row);
    Ok(ped)
}

/// Split with concurrent time-dependent covariates: cut points are the union
/// of the base cuts and all measurement times, and covariate values are
/// carried forward from the last measurement at or before each interval start.
pub fn split_concurrent(
    data: &SurvDataset,
    spec: &TransformSpec,
    cuts: Option<&CutPoints>,
    max_time: Option<f64>,
) -> Result<PedDataset, TransformError> {
    let base = match cuts {
        Some(c) => truncate_cuts(c, max_time)?,
        None => default_cuts(data, max_time)?,
    };
    let (lo, hi) = (base.first(), base.last());
    let mut all: Vec<f64> = base.values().to_vec();
    for term in &spec.concurrent {
        let table = data
            .exposures
            .get(&term.tz_var)
            .ok_or_else(|| TransformError::MissingExposureTable(term.tz_var.clone()))?;
        for c in &term.covariates {
            if !table.values.get(c).is_some_and(|col| col.is_numeric()) {
                return Err(TransformError::UnknownColumn(c.clone()));
            }
        }
        all.extend(table.tz.iter().copied().filter(|&t| t > lo && t < hi));
    }
    all.sort_by(f64::total_cmp);
    all.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + b.abs()));
    let cuts = CutPoints::new(all)?;

    let mut ped = split_tcc(data, spec, &cuts, None)?;
    for term in &spec.concurrent {
        let table = &data.exposures[&term.tz_var];
        let mut filled: Vec<Vec<f64>> = vec![Vec::with_capacity(ped.nrows()); term.covariates.len()];
        for r in 0..ped.nrows() {
            let id = ped.ids[r];
            let rows = table.rows_for(id);
            let tstart = ped.tstart[r];
            let src = rows.clone().rev().find(|&k| table.tz[k] <= tstart + 1e-12);
            let Some(k) = src else {
                return Err(TransformError::MissingBaselineExposure(id));
            };
            for (ci, c) in term.covariates.iter().enumerate() {
                filled[ci].push(table.values.numeric(c).unwrap()[k]);
            }
        }
        for (c, vals) in term.covariates.iter().zip(filled) {
            ped.covariates.insert(c.clone(), Column::Numeric(vals));
        }
    }
    ped.concurrent = spec.concurrent.clone();
    Ok(ped)
}
