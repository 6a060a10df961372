use super::curves::{bands, rowwise_se};
use super::{missing_columns, ped_rows, sample_info, PredictError, Z_CRIT};
use crate::fit::{posterior_draws, term_columns, ByCoding, Coding, FittedPamm, ModelData, TermKind, TermMeta};
use crate::formula::LagLeadSpec;
use crate::frame::{Column, Factor, Frame};
use crate::ped::{int_info, interval_label, make_lag_lead, CutPoints, MatrixRole, PedDataset};
use indexmap::IndexMap;
use nalgebra::DMatrix;

/// A term by label, else the first term whose leading variable is `name`.
fn find_term<'a>(fit: &'a FittedPamm, name: &str) -> Result<&'a TermMeta, PredictError> {
    fit.term(name)
        .or_else(|| {
            fit.terms
                .iter()
                .find(|t| !matches!(t.kind, TermKind::Intercept) && t.variables().first().is_some_and(|v| v == name))
        })
        .ok_or_else(|| PredictError::UnknownTerm(name.to_string()))
}

/// Data carrying only what `meta` reads. Term covariates come from
/// `assign`, else sample means/modes; `by` weights default to 1, and matrix
/// covariates become single pseudo-columns.
fn term_data(
    meta: &TermMeta,
    summary: &Frame,
    assign: &IndexMap<String, Vec<f64>>,
    n: usize,
) -> Result<ModelData, PredictError> {
    let mut frame = Frame::new(n);
    let mut matrices = IndexMap::new();
    let scalar = |v: &str| -> Result<Column, PredictError> {
        if let Some(x) = assign.get(v) {
            return Ok(Column::Numeric(x.clone()));
        }
        summary
            .get(v)
            .map(|c| c.take(&vec![0; n]))
            .ok_or_else(|| PredictError::MissingTermColumns(v.to_string()))
    };
    match &meta.kind {
        TermKind::Intercept => {}
        TermKind::Parametric(codings) => {
            for c in codings {
                let (Coding::Numeric(v) | Coding::Factor { var: v, .. }) = c;
                frame.insert(v.clone(), scalar(v)?);
            }
        }
        TermKind::Smooth { vars, by, matrix, .. } => {
            for v in vars {
                if *matrix {
                    let x = assign.get(v).ok_or_else(|| PredictError::MissingTermColumns(v.clone()))?;
                    matrices.insert(v.clone(), DMatrix::from_column_slice(n, 1, x));
                } else {
                    frame.insert(v.clone(), scalar(v)?);
                }
            }
            match by {
                ByCoding::None => {}
                ByCoding::Weights(ws) => {
                    for w in ws {
                        let x = assign.get(w).cloned().unwrap_or_else(|| vec![1.0; n]);
                        if *matrix {
                            matrices.insert(w.clone(), DMatrix::from_column_slice(n, 1, &x));
                        } else {
                            frame.insert(w.clone(), Column::Numeric(x));
                        }
                    }
                }
                ByCoding::Level { var, level } => frame.insert(
                    var.clone(),
                    Column::Categorical(Factor {
                        levels: vec![level.clone()],
                        codes: vec![0; n],
                    }),
                ),
            }
        }
    }
    Ok(ModelData { frame, matrices })
}

fn cartesian_grid(grids: &IndexMap<String, Vec<f64>>) -> (IndexMap<String, Vec<f64>>, usize) {
    let lens: Vec<usize> = grids.values().map(|v| v.len()).collect();
    let n: usize = lens.iter().product();
    let mut out = IndexMap::new();
    let mut inner = n;
    for (k, (name, vals)) in grids.iter().enumerate() {
        inner /= lens[k].max(1);
        let col: Vec<f64> = (0..n).map(|r| vals[(r / inner) % lens[k]]).collect();
        out.insert(name.clone(), col);
    }
    (out, n)
}

/// One term's contribution on a grid (Cartesian product of `grids`, first
/// name varying slowest). With a reference, each row is contrasted with the
/// same row after overwriting the reference values, and the interval uses
/// the covariance of that difference.
pub fn export_partial_effect(
    fit: &FittedPamm,
    ped: &PedDataset,
    term: &str,
    grids: &IndexMap<String, Vec<f64>>,
    reference: Option<&IndexMap<String, f64>>,
) -> Result<Frame, PredictError> {
    let meta = find_term(fit, term)?;
    let vars = meta.variables();
    if let Some(bad) = grids.keys().find(|g| !vars.contains(g)) {
        return Err(PredictError::UnknownColumn(bad.clone()));
    }
    let summary = sample_info(&ped.covariates, &[])?;
    let (assign, n) = cartesian_grid(grids);
    let mut x = term_columns(&term_data(meta, &summary, &assign, n)?, meta).map_err(missing_columns)?;
    if let Some(r) = reference {
        let mut shifted = assign.clone();
        for (k, &v) in r {
            if !vars.contains(k) {
                return Err(PredictError::UnknownColumn(k.clone()));
            }
            shifted.insert(k.clone(), vec![v; n]);
        }
        x -= term_columns(&term_data(meta, &summary, &shifted, n)?, meta).map_err(missing_columns)?;
    }
    let range = meta.range();
    let beta = fit.beta.rows(range.start, range.len());
    let v = fit.v_beta.view((range.start, range.start), (range.len(), range.len())).clone_owned();
    let est = &x * beta;
    let se = rowwise_se(&x, &v);

    let mut out = Frame::new(n);
    for (name, col) in assign {
        out.insert(name, Column::Numeric(col));
    }
    out.insert("fit", Column::Numeric(est.iter().copied().collect()));
    out.insert("ci_lower", Column::Numeric(est.iter().zip(&se).map(|(e, s)| e - Z_CRIT * s).collect()));
    out.insert("ci_upper", Column::Numeric(est.iter().zip(&se).map(|(e, s)| e + Z_CRIT * s).collect()));
    out.insert("se", Column::Numeric(se));
    Ok(out)
}

/// Cumulative effect of a matrix term per training interval for a constant
/// exposure profile `z`, with Monte Carlo bands.
pub fn export_cumu_effect(
    fit: &FittedPamm,
    ped: &PedDataset,
    term: &str,
    z: f64,
    n_draws: usize,
    seed: u64,
) -> Result<Frame, PredictError> {
    let meta = find_term(fit, term)?;
    if !matches!(meta.kind, TermKind::Smooth { matrix: true, .. }) {
        return Err(PredictError::UnknownTerm(format!("{term} (not a cumulative term)")));
    }
    let info = int_info(ped);
    let interval: Vec<usize> = info
        .iter()
        .map(|i| ped.cuts.interval_ending_at(i.tend).expect("interval from cuts"))
        .collect();
    let n = interval.len();
    let summary = sample_info(&ped.covariates, &[])?;
    let cov = if summary.ncols() == 0 { Frame::new(n) } else { summary.take(&vec![0; n]) };
    let exposure: IndexMap<String, f64> = ped
        .matrices
        .keys()
        .filter(|k| ped.matrix_role(k) == Some(MatrixRole::Exposure))
        .map(|k| (k.clone(), z))
        .collect();
    let (frame, matrices) = ped_rows(ped, &interval, &cov, &exposure)?;
    let x = term_columns(&ModelData { frame, matrices }, meta).map_err(missing_columns)?;
    let range = meta.range();
    let g = &x * fit.beta.rows(range.start, range.len());
    let draws = posterior_draws(fit, n_draws, seed)?;
    let sims = &x * draws.columns(range.start, range.len()).transpose();
    let (lo, hi) = bands(&sims);

    let mut out = Frame::new(n);
    out.insert("tstart", Column::Numeric(info.iter().map(|i| i.tstart).collect()));
    out.insert("tend", Column::Numeric(info.iter().map(|i| i.tend).collect()));
    out.insert("cumu_effect", Column::Numeric(g.iter().copied().collect()));
    out.insert("ci_lower", Column::Numeric(lo));
    out.insert("ci_upper", Column::Numeric(hi));
    Ok(out)
}

/// Long table of lag-lead weights: one row per (interval, exposure time).
pub fn export_laglead(cuts: &CutPoints, tz_grid: &[f64], ll: LagLeadSpec) -> Frame {
    let m = make_lag_lead(cuts, tz_grid, ll);
    let (nj, nq) = m.weights.shape();
    let rows: Vec<(usize, usize)> = (0..nj).flat_map(|j| (0..nq).map(move |q| (j, q))).collect();
    let levels: Vec<String> = m.intervals.iter().map(|&(s, e)| interval_label(s, e)).collect();
    let mut f = Frame::new(rows.len());
    f.insert(
        "interval",
        Column::Categorical(Factor {
            levels,
            codes: rows.iter().map(|r| r.0).collect(),
        }),
    );
    f.insert("tstart", Column::Numeric(rows.iter().map(|r| m.intervals[r.0].0).collect()));
    f.insert("tend", Column::Numeric(rows.iter().map(|r| m.intervals[r.0].1).collect()));
    f.insert("tz", Column::Numeric(rows.iter().map(|r| m.tz_grid[r.1]).collect()));
    f.insert("weight", Column::Numeric(rows.iter().map(|&(j, q)| m.weights[(j, q)]).collect()));
    f
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::{fit_pamm, FitOptions};
    use crate::formula::{parse_hazard_expression, parse_model_formula, parse_transform_formula};
    use crate::ped::{as_ped, seq};
    use crate::simulate::{add_tdc, sim_pexp, simulate_covariates, CovariateDist, SimSpec, TdcProcess};

    fn wce_setup(n: usize) -> (PedDataset, FittedPamm) {
        let cov = simulate_covariates(n, &[("x1".into(), CovariateDist::Uniform(-3.0, 3.0))], 11);
        let ids: Vec<i64> = (1..=n as i64).collect();
        let grid = seq(-5.0, 5.0, 0.25).unwrap();
        let cuts = CutPoints::seq(0.0, 10.0, 1.0).unwrap();
        let shell = crate::ped::SurvDataset::new(ids, vec![1.0; n], vec![0; n], cov).unwrap();
        let shell = add_tdc(shell, "tz", "z.tz", &grid, TdcProcess::default(), 11).unwrap();
        let spec = SimSpec {
            hazard: parse_hazard_expression("~ -2.5 - 0.2*x1 | fcumu(t, tz, z.tz, f_xyz = f_wce, ll_fun = window(0, 12))").unwrap(),
            cuts: cuts.clone(),
            ids: shell.ids.clone(),
            covariates: shell.covariates.clone(),
            exposures: shell.exposures.clone(),
            seed: 11,
        };
        let sim = sim_pexp(&spec).unwrap();
        let t = parse_transform_formula("Surv(time, status) ~ . | cumulative(latency(tz), z.tz, tz_var = \"tz\", ll_fun = window(0, 12))")
            .unwrap();
        let ped = as_ped(&sim, &t, Some(&cuts), None).unwrap();
        let fit = fit_pamm(
            &ped,
            &parse_model_formula("ped_status ~ x1 + s(tz_latency, by = z.tz * LL)").unwrap(),
            &FitOptions::default(),
        )
        .unwrap();
        (ped, fit)
    }

    #[test]
    fn reference_point_cancels() {
        let (ped, fit) = wce_setup(150);
        let mut grids = IndexMap::new();
        grids.insert("tz_latency".to_string(), vec![0.0, 3.0, 6.0, 9.0]);
        let mut r = IndexMap::new();
        r.insert("tz_latency".to_string(), 6.0);
        let t = export_partial_effect(&fit, &ped, "tz_latency", &grids, Some(&r)).unwrap();
        assert_eq!(t.numeric("fit").unwrap()[2], 0.0);
        assert_eq!(t.numeric("se").unwrap()[2], 0.0);
        assert!(matches!(
            export_partial_effect(&fit, &ped, "nope", &grids, None),
            Err(PredictError::UnknownTerm(_))
        ));
    }

    #[test]
    fn cumulative_effect_is_weighted_partial_effect() {
        let (ped, fit) = wce_setup(150);
        let z = 0.7;
        let g = export_cumu_effect(&fit, &ped, "tz_latency", z, 20, 3).unwrap();
        let lat = &ped.matrices["tz_latency"];
        let ll = &ped.matrices["LL"];
        for (r, &tend) in g.numeric("tend").unwrap().iter().enumerate() {
            let row = ped.tend.iter().position(|&t| t == tend).unwrap();
            let mut grids = IndexMap::new();
            grids.insert("tz_latency".to_string(), lat.row(row).iter().copied().collect());
            grids.insert("z.tz".to_string(), vec![z]);
            let h = export_partial_effect(&fit, &ped, "tz_latency", &grids, None).unwrap();
            let want: f64 = h.numeric("fit").unwrap().iter().zip(ll.row(row).iter()).map(|(a, w)| a * w).sum();
            assert!((g.numeric("cumu_effect").unwrap()[r] - want).abs() < 1e-10);
        }
        let g2 = export_cumu_effect(&fit, &ped, "tz_latency", 2.0 * z, 20, 3).unwrap();
        for (a, b) in g.numeric("cumu_effect").unwrap().iter().zip(g2.numeric("cumu_effect").unwrap()) {
            assert!((2.0 * a - b).abs() < 1e-10);
        }
        let mut zero = fit.clone();
        zero.beta.fill(0.0);
        zero.v_beta.fill(0.0);
        let g0 = export_cumu_effect(&zero, &ped, "tz_latency", z, 5, 3).unwrap();
        assert!(g0.numeric("cumu_effect").unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn laglead_table() {
        let f = export_laglead(&CutPoints::new(vec![0.0, 1.0]).unwrap(), &[0.0], LagLeadSpec::Default);
        assert_eq!(f.nrows(), 1);
        assert_eq!(f.numeric("weight").unwrap(), &[1.0]);
        let cuts = CutPoints::seq(0.0, 10.0, 1.0).unwrap();
        let grid = seq(0.0, 10.0, 1.0).unwrap();
        let f = export_laglead(&cuts, &grid, LagLeadSpec::Default);
        assert_eq!(f.nrows(), 110);
        let active: Vec<f64> = (0..f.nrows())
            .filter(|&i| f.numeric("tz").unwrap()[i] == 5.0 && f.numeric("weight").unwrap()[i] > 0.0)
            .map(|i| f.numeric("tend").unwrap()[i])
            .collect();
        assert_eq!(active, vec![6.0, 7.0, 8.0, 9.0, 10.0]);
    }
}
