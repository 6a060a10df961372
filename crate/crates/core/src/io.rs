//! CSV tables, PED bundles and model files.

use crate::fit::{FittedPamm, MODEL_FORMAT_VERSION};
use crate::formula::{ConcurrentTerm, TransformSpec};
use crate::frame::{Column, Factor, Frame};
use crate::ped::{CumulativeMeta, CutPoints, ExposureTable, MatrixColumnMeta, PedDataset, SurvDataset, TransformError};
use indexmap::IndexMap;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const BUNDLE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Csv { path: PathBuf, message: String },
    #[error("{0} is not a PED bundle (no meta.json)")]
    NotABundle(PathBuf),
    #[error("{path}: format_version {found} is not supported (expected {expected})")]
    FormatVersion { path: PathBuf, found: u32, expected: u32 },
    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path}: {message}")]
    InvalidData { path: PathBuf, message: String },
    #[error("{path}: {message}")]
    Json { path: PathBuf, message: String },
    #[error(transparent)]
    Transform(#[from] TransformError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c == "NA"
}

/// Numeric when every non-missing cell parses as a number (missing cells
/// become NaN); categorical otherwise.
fn parse_column(cells: &[String]) -> Column {
    let parsed: Option<Vec<f64>> = cells
        .iter()
        .map(|c| if is_missing(c) { Some(f64::NAN) } else { c.trim().parse().ok() })
        .collect();
    match parsed {
        Some(v) if cells.iter().any(|c| !is_missing(c)) => Column::Numeric(v),
        _ => Column::parse(cells),
    }
}

/// Parse CSV text with a header row.
pub fn parse_csv(text: &str, path: &Path) -> Result<Frame, IoError> {
    let csv_err = |e: csv::Error| IoError::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let headers: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(|h| h.trim().to_string()).collect();
    if headers.is_empty() || headers.iter().all(|h| h.is_empty()) {
        return Err(IoError::Csv {
            path: path.to_path_buf(),
            message: "missing header row".into(),
        });
    }
    let mut cells: Vec<Vec<String>> = vec![Vec::new(); headers.len()];
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        for (k, c) in rec.iter().enumerate() {
            cells[k].push(c.to_string());
        }
    }
    let n = cells.first().map_or(0, |c| c.len());
    let mut f = Frame::new(n);
    for (h, c) in headers.into_iter().zip(cells) {
        f.insert(h, parse_column(&c));
    }
    Ok(f)
}

pub fn read_csv(path: &Path) -> Result<Frame, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_csv(&text, path)
}

/// RFC-4180 text of a frame; floats use shortest round-trip formatting.
pub fn frame_to_csv(frame: &Frame) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
    w.write_record(frame.names()).expect("in-memory write");
    let cols: Vec<&Column> = frame.iter().map(|(_, c)| c).collect();
    for i in 0..frame.nrows() {
        w.write_record(cols.iter().map(|c| c.format_cell(i))).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells")
}

/// Write through a temporary sibling file and rename into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), IoError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    fs::write(&tmp, contents).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        io_err(path)(e)
    })
}

pub fn write_csv(path: &Path, frame: &Frame) -> Result<(), IoError> {
    write_atomic(path, frame_to_csv(frame).as_bytes())
}

fn numeric_col<'a>(f: &'a Frame, name: &str, path: &Path) -> Result<&'a [f64], IoError> {
    match f.get(name) {
        Some(Column::Numeric(v)) => Ok(v),
        Some(_) => Err(IoError::InvalidData {
            path: path.to_path_buf(),
            message: format!("column `{name}` must be numeric"),
        }),
        None => Err(IoError::MissingColumn {
            path: path.to_path_buf(),
            column: name.to_string(),
        }),
    }
}

fn to_ids(v: &[f64], path: &Path) -> Result<Vec<i64>, IoError> {
    v.iter()
        .map(|&x| {
            if x.fract() == 0.0 && x.is_finite() {
                Ok(x as i64)
            } else {
                Err(IoError::InvalidData {
                    path: path.to_path_buf(),
                    message: format!("id {x} is not an integer"),
                })
            }
        })
        .collect()
}

/// Subject table: `id` (optional, else 1..n), the time and status columns
/// named by `spec`, everything else as covariates.
pub fn surv_from_frame(mut f: Frame, spec: &TransformSpec, path: &Path) -> Result<SurvDataset, IoError> {
    let n = f.nrows();
    let ids = match f.get("id") {
        Some(_) => to_ids(numeric_col(&f, "id", path)?, path)?,
        None => (1..=n as i64).collect(),
    };
    let time = numeric_col(&f, &spec.time_col, path)?.to_vec();
    let status = numeric_col(&f, &spec.status_col, path)?
        .iter()
        .map(|&s| {
            if s == 0.0 || s == 1.0 {
                Ok(s as u8)
            } else {
                Err(IoError::InvalidData {
                    path: path.to_path_buf(),
                    message: format!("status must be 0 or 1, got {s}"),
                })
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    for c in ["id", spec.time_col.as_str(), spec.status_col.as_str()] {
        f.remove(c);
    }
    let cov = if f.ncols() == 0 { Frame::new(n) } else { f };
    Ok(SurvDataset::new(ids, time, status, cov)?)
}

pub fn read_surv_data(path: &Path, spec: &TransformSpec) -> Result<SurvDataset, IoError> {
    surv_from_frame(read_csv(path)?, spec, path)
}

/// Exposure table with columns `id`, `tz_var` and value columns.
pub fn exposure_from_frame(mut f: Frame, tz_var: &str, path: &Path) -> Result<ExposureTable, IoError> {
    let ids = to_ids(numeric_col(&f, "id", path)?, path)?;
    let tz = numeric_col(&f, tz_var, path)?.to_vec();
    f.remove("id");
    f.remove(tz_var);
    Ok(ExposureTable::new(tz_var, ids, tz, f)?)
}

/// Reads an exposure CSV; the exposure-time column is the first of
/// `tz_vars` present in the header.
pub fn read_exposure(path: &Path, tz_vars: &[&str]) -> Result<ExposureTable, IoError> {
    let f = read_csv(path)?;
    let tz = tz_vars.iter().find(|t| f.contains(t)).ok_or_else(|| IoError::MissingColumn {
        path: path.to_path_buf(),
        column: tz_vars.join(" | "),
    })?;
    exposure_from_frame(f, tz, path)
}

/// Exposure table as a flat frame `(id, tz, values...)`.
pub fn exposure_frame(t: &ExposureTable) -> Frame {
    let mut f = Frame::new(t.ids.len());
    f.insert("id", Column::Numeric(t.ids.iter().map(|&i| i as f64).collect()));
    f.insert(t.tz_var.clone(), Column::Numeric(t.tz.clone()));
    for (n, c) in t.values.iter() {
        f.insert(n, c.clone());
    }
    f
}

/// Subject table as a flat frame `(id, time, status, covariates...)`.
pub fn surv_frame(d: &SurvDataset) -> Frame {
    let mut f = Frame::new(d.n_subjects());
    f.insert("id", Column::Numeric(d.ids.iter().map(|&i| i as f64).collect()));
    f.insert("time", Column::Numeric(d.time.clone()));
    f.insert("status", Column::Numeric(d.status.iter().map(|&s| s as f64).collect()));
    for (n, c) in d.covariates.iter() {
        f.insert(n, c.clone());
    }
    f
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub name: String,
    /// Level order of categorical columns; absent for numeric ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixMeta {
    pub name: String,
    pub ncols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub format_version: u32,
    pub cuts: CutPoints,
    pub n_rows: usize,
    pub n_subjects: usize,
    pub covariates: Vec<ColumnMeta>,
    pub matrices: Vec<MatrixMeta>,
    pub cumulative: Vec<CumulativeMeta>,
    pub concurrent: Vec<ConcurrentTerm>,
}

impl BundleMeta {
    pub fn of(ped: &PedDataset) -> Self {
        let mut ids = ped.ids.clone();
        ids.dedup();
        BundleMeta {
            format_version: BUNDLE_FORMAT_VERSION,
            cuts: ped.cuts.clone(),
            n_rows: ped.nrows(),
            n_subjects: ids.len(),
            covariates: ped
                .covariates
                .iter()
                .map(|(n, c)| ColumnMeta {
                    name: n.to_string(),
                    levels: match c {
                        Column::Categorical(f) => Some(f.levels.clone()),
                        Column::Numeric(_) => None,
                    },
                })
                .collect(),
            matrices: ped
                .matrices
                .iter()
                .map(|(n, m)| MatrixMeta {
                    name: n.clone(),
                    ncols: m.ncols(),
                })
                .collect(),
            cumulative: ped.cumulative.clone(),
            concurrent: ped.concurrent.clone(),
        }
    }

    pub fn matrix_roles(&self) -> impl Iterator<Item = &MatrixColumnMeta> {
        self.cumulative.iter().flat_map(|c| c.columns.iter())
    }
}

fn matrix_frame(name: &str, m: &DMatrix<f64>) -> Frame {
    let mut f = Frame::new(m.nrows());
    for q in 0..m.ncols() {
        f.insert(format!("{name}.{}", q + 1), Column::Numeric(m.column(q).iter().copied().collect()));
    }
    f
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

/// `ped.csv`, one `mat_<name>.csv` per matrix column and `meta.json`.
pub fn write_ped_bundle(dir: &Path, ped: &PedDataset) -> Result<(), IoError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_csv(&dir.join("ped.csv"), &ped.frame())?;
    for (name, m) in &ped.matrices {
        write_csv(&dir.join(format!("mat_{name}.csv")), &matrix_frame(name, m))?;
    }
    // meta last: a bundle without it is not a bundle
    write_atomic(&dir.join("meta.json"), to_json(&BundleMeta::of(ped)).as_bytes())
}

pub fn read_bundle_meta(dir: &Path) -> Result<BundleMeta, IoError> {
    let path = dir.join("meta.json");
    if !path.is_file() {
        return Err(IoError::NotABundle(dir.to_path_buf()));
    }
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| IoError::Json {
        path: path.clone(),
        message: e.to_string(),
    })?;
    let found = v.get("format_version").and_then(|x| x.as_u64()).unwrap_or(0) as u32;
    if found != BUNDLE_FORMAT_VERSION {
        return Err(IoError::FormatVersion {
            path,
            found,
            expected: BUNDLE_FORMAT_VERSION,
        });
    }
    serde_json::from_value(v).map_err(|e| IoError::Json {
        path,
        message: e.to_string(),
    })
}

pub fn read_ped_bundle(dir: &Path) -> Result<PedDataset, IoError> {
    let meta = read_bundle_meta(dir)?;
    let path = dir.join("ped.csv");
    let f = read_csv(&path)?;
    let invalid = |message: String| IoError::InvalidData {
        path: path.clone(),
        message,
    };
    if f.nrows() != meta.n_rows {
        return Err(invalid(format!("{} rows, meta.json says {}", f.nrows(), meta.n_rows)));
    }
    let ids = to_ids(numeric_col(&f, "id", &path)?, &path)?;
    let tstart = numeric_col(&f, "tstart", &path)?.to_vec();
    let tend = numeric_col(&f, "tend", &path)?.to_vec();
    let offset = numeric_col(&f, "offset", &path)?.to_vec();
    let ped_status = numeric_col(&f, "ped_status", &path)?.iter().map(|&s| s as u8).collect();
    let interval = tend
        .iter()
        .map(|&t| meta.cuts.interval_ending_at(t).ok_or_else(|| invalid(format!("tend {t} is not a cut point"))))
        .collect::<Result<Vec<_>, _>>()?;

    let mut covariates = Frame::new(f.nrows());
    for c in &meta.covariates {
        let col = f.get(&c.name).ok_or_else(|| IoError::MissingColumn {
            path: path.clone(),
            column: c.name.clone(),
        })?;
        let col = match &c.levels {
            None => match col {
                Column::Numeric(_) => col.clone(),
                Column::Categorical(_) => return Err(invalid(format!("column `{}` must be numeric", c.name))),
            },
            Some(levels) => {
                let labels: Vec<String> = (0..col.len()).map(|i| col.format_cell(i)).collect();
                Column::Categorical(
                    Factor::with_levels(&labels, levels)
                        .ok_or_else(|| invalid(format!("column `{}` has values outside its levels", c.name)))?,
                )
            }
        };
        covariates.insert(c.name.clone(), col);
    }

    let mut matrices = IndexMap::new();
    for m in &meta.matrices {
        let mpath = dir.join(format!("mat_{}.csv", m.name));
        let mf = read_csv(&mpath)?;
        if mf.nrows() != meta.n_rows || mf.ncols() != m.ncols {
            return Err(IoError::InvalidData {
                path: mpath,
                message: format!("expected {} x {} values", meta.n_rows, m.ncols),
            });
        }
        let mut mat = DMatrix::zeros(mf.nrows(), m.ncols);
        for (q, (name, _)) in mf.iter().enumerate() {
            mat.set_column(q, &nalgebra::DVector::from_column_slice(numeric_col(&mf, name, &mpath)?));
        }
        matrices.insert(m.name.clone(), mat);
    }
    Ok(PedDataset {
        ids,
        interval,
        tstart,
        tend,
        offset,
        ped_status,
        covariates,
        matrices,
        cuts: meta.cuts,
        cumulative: meta.cumulative,
        concurrent: meta.concurrent,
    })
}

pub fn model_to_json(fit: &FittedPamm) -> String {
    to_json(fit)
}

pub fn write_model(path: &Path, fit: &FittedPamm) -> Result<(), IoError> {
    write_atomic(path, model_to_json(fit).as_bytes())
}

pub fn read_model(path: &Path) -> Result<FittedPamm, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let json_err = |e: serde_json::Error| IoError::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let v: serde_json::Value = serde_json::from_str(&text).map_err(json_err)?;
    let found = v.get("format_version").and_then(|x| x.as_u64()).unwrap_or(0) as u32;
    if found != MODEL_FORMAT_VERSION {
        return Err(IoError::FormatVersion {
            path: path.to_path_buf(),
            found,
            expected: MODEL_FORMAT_VERSION,
        });
    }
    serde_json::from_value(v).map_err(json_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formula::parse_transform_formula;
    use crate::ped::{as_ped, seq};
    use crate::simulate::{add_tdc, TdcProcess};

    #[test]
    fn csv_round_trip() {
        let mut f = Frame::new(3);
        f.insert("a", Column::Numeric(vec![1.0, 0.1 + 0.2, -1e-300]));
        f.insert("b", Column::Categorical(Factor::from_strings(&["x, y", "z", "x, y"])));
        let text = frame_to_csv(&f);
        assert!(text.starts_with("a,b\r\n1,\"x, y\"\r\n"));
        assert_eq!(parse_csv(&text, Path::new("t")).unwrap(), f);
    }

    #[test]
    fn missing_cells_are_nan() {
        let f = parse_csv("a,b\n1,u\nNA,v\n", Path::new("t")).unwrap();
        let a = f.numeric("a").unwrap();
        assert!(a[0] == 1.0 && a[1].is_nan());
    }

    #[test]
    fn subject_table() {
        let spec = parse_transform_formula("Surv(days, status) ~ .").unwrap();
        let f = parse_csv("days,status,sex\n5,1,m\n7,0,f\n", Path::new("t")).unwrap();
        let d = surv_from_frame(f, &spec, Path::new("t")).unwrap();
        assert_eq!(d.ids, vec![1, 2]);
        assert_eq!(d.covariates.names().collect::<Vec<_>>(), ["sex"]);
        let bad = parse_csv("days,status\n5,2\n", Path::new("t")).unwrap();
        assert!(matches!(surv_from_frame(bad, &spec, Path::new("t")), Err(IoError::InvalidData { .. })));
        let missing = parse_csv("time,status\n5,1\n", Path::new("t")).unwrap();
        assert!(matches!(surv_from_frame(missing, &spec, Path::new("t")), Err(IoError::MissingColumn { .. })));
    }

    #[test]
    fn bundle_round_trip() {
        let mut cov = Frame::new(3);
        cov.insert("sex", Column::Categorical(Factor::from_strings(&["m", "f", "m"])));
        let d = SurvDataset::new(vec![1, 2, 3], vec![2.5, 4.0, 1.2], vec![1, 0, 1], cov).unwrap();
        let d = add_tdc(d, "tz", "z.tz", &seq(0.0, 4.0, 0.5).unwrap(), TdcProcess::default(), 3).unwrap();
        let spec =
            parse_transform_formula("Surv(time, status) ~ . | cumulative(latency(tz), z.tz, tz_var = \"tz\")").unwrap();
        let ped = as_ped(&d, &spec, Some(&CutPoints::seq(0.0, 4.0, 1.0).unwrap()), None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_ped_bundle(dir.path(), &ped).unwrap();
        let back = read_ped_bundle(dir.path()).unwrap();
        assert_eq!(back, ped);
        let leftovers = fs::read_dir(dir.path()).unwrap().filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with('.')).count();
        assert_eq!(leftovers, 0);
    }

    #[test]
    fn not_a_bundle_and_version_check() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(read_ped_bundle(dir.path()), Err(IoError::NotABundle(_))));
        fs::write(dir.path().join("meta.json"), "{\"format_version\": 99}").unwrap();
        assert!(matches!(read_ped_bundle(dir.path()), Err(IoError::FormatVersion { found: 99, .. })));
    }

    #[test]
    fn model_round_trip() {
        use crate::fit::{fit_pamm, FitOptions};
        use crate::formula::parse_model_formula;
        let mut cov = Frame::new(40);
        cov.insert("x", Column::Numeric((0..40).map(|i| (i as f64 * 0.37).sin()).collect()));
        let time = (0..40).map(|i| 0.5 + (i % 9) as f64).collect();
        let status = (0..40).map(|i| (i % 3 != 0) as u8).collect();
        let d = SurvDataset::new((1..=40).collect(), time, status, cov).unwrap();
        let spec = parse_transform_formula("Surv(time, status) ~ .").unwrap();
        let ped = as_ped(&d, &spec, Some(&CutPoints::seq(0.0, 9.0, 1.0).unwrap()), None).unwrap();
        let fit = fit_pamm(&ped, &parse_model_formula("ped_status ~ s(tend, k = 5) + x").unwrap(), &FitOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        write_model(&path, &fit).unwrap();
        assert_eq!(read_model(&path).unwrap(), fit);
    }
}
