use super::split::split_tcc;
use super::{
    make_lag_lead, CumulativeMeta, CutPoints, ExposureTable, MatrixColumnMeta, MatrixRole, PedDataset, SurvDataset,
    TransformError,
};
use crate::formula::{CumulativeTerm, TransformSpec};
use nalgebra::DMatrix;

/// Shared exposure grid of one tz variable plus, per subject, the row range
/// into the exposure table.
struct SharedGrid {
    grid: Vec<f64>,
    rows: Vec<std::ops::Range<usize>>,
}

fn shared_grid(data: &SurvDataset, table: &ExposureTable) -> Result<SharedGrid, TransformError> {
    let mut grid: Option<Vec<f64>> = None;
    let mut rows = Vec::with_capacity(data.n_subjects());
    for &id in &data.ids {
        let r = table.rows_for(id);
        if r.is_empty() {
            return Err(TransformError::MissingExposureSeries {
                tz_var: table.tz_var.clone(),
                id,
            });
        }
        let tz = &table.tz[r.clone()];
        match &grid {
            None => grid = Some(tz.to_vec()),
            Some(g) => {
                let same = g.len() == tz.len() && g.iter().zip(tz).all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + a.abs()));
                if !same {
                    return Err(TransformError::RaggedExposureGrid {
                        tz_var: table.tz_var.clone(),
                        id,
                    });
                }
            }
        }
        rows.push(r);
    }
    Ok(SharedGrid {
        grid: grid.unwrap_or_default(),
        rows,
    })
}

/// Matrix column names. A lone cumulative term gets the short names
/// (`tz_latency`, `z.tz`, `LL`); with several terms names are suffixed by
/// the tz variable.
fn column_name(spec: &TransformSpec, term: &CumulativeTerm, role: MatrixRole, comp: &str, single: bool) -> String {
    let tz = &term.tz_var;
    match role {
        MatrixRole::Time if single => format!("{}_mat", spec.time_col),
        MatrixRole::Time => format!("{}_{tz}_mat", spec.time_col),
        MatrixRole::Latency => format!("{tz}_latency"),
        MatrixRole::ExposureTime => tz.clone(),
        MatrixRole::Exposure if single => comp.to_string(),
        MatrixRole::Exposure => format!("{comp}_{tz}"),
        MatrixRole::LagLead if single => "LL".to_string(),
        MatrixRole::LagLead => format!("LL_{tz}"),
    }
}

/// Split data and attach, for every cumulative term, matrix columns aligned
/// with the PED rows. The follow-up time of a row is its interval start,
/// which is also the time the lag-lead window is evaluated at; latencies
/// below zero are reported as zero.
pub fn split_cumulative(data: &SurvDataset, spec: &TransformSpec, cuts: &CutPoints) -> Result<PedDataset, TransformError> {
    let mut ped = split_tcc(data, spec, cuts, None)?;
    let n = ped.nrows();
    let single = spec.cumulative.len() == 1;

    // subject index of every PED row
    let mut subject_of_row = Vec::with_capacity(n);
    {
        let mut i = 0;
        for r in 0..n {
            while data.ids[i] != ped.ids[r] {
                i += 1;
            }
            subject_of_row.push(i);
        }
    }

    for term in &spec.cumulative {
        let table = data
            .exposures
            .get(&term.tz_var)
            .ok_or_else(|| TransformError::MissingExposureTable(term.tz_var.clone()))?;
        let shared = shared_grid(data, table)?;
        let q = shared.grid.len();
        let ll = make_lag_lead(&ped.cuts, &shared.grid, term.ll);
        let mut meta = CumulativeMeta {
            tz_var: term.tz_var.clone(),
            ll: term.ll,
            tz_grid: shared.grid.clone(),
            columns: Vec::new(),
        };

        for comp in &term.components {
            let role = if comp.name == spec.time_col {
                MatrixRole::Time
            } else if comp.name == term.tz_var {
                if comp.latency {
                    MatrixRole::Latency
                } else {
                    MatrixRole::ExposureTime
                }
            } else {
                MatrixRole::Exposure
            };
            let m = match role {
                MatrixRole::Time => DMatrix::from_fn(n, q, |r, _| ped.tstart[r]),
                MatrixRole::Latency => DMatrix::from_fn(n, q, |r, k| (ped.tstart[r] - shared.grid[k]).max(0.0)),
                MatrixRole::ExposureTime => DMatrix::from_fn(n, q, |_, k| shared.grid[k]),
                MatrixRole::Exposure => {
                    let values = table
                        .values
                        .numeric(&comp.name)
                        .ok_or_else(|| TransformError::UnknownColumn(comp.name.clone()))?;
                    DMatrix::from_fn(n, q, |r, k| values[shared.rows[subject_of_row[r]].start + k])
                }
                MatrixRole::LagLead => unreachable!(),
            };
            let name = column_name(spec, term, role, &comp.name, single);
            ped.matrices.insert(name.clone(), m);
            meta.columns.push(MatrixColumnMeta { name, role });
        }

        let name = column_name(spec, term, MatrixRole::LagLead, "", single);
        let w = DMatrix::from_fn(n, q, |r, k| ll.weights[(ped.interval[r], k)]);
        ped.matrices.insert(name.clone(), w);
        meta.columns.push(MatrixColumnMeta {
            name,
            role: MatrixRole::LagLead,
        });
        ped.cumulative.push(meta);
    }
    Ok(ped)
}
