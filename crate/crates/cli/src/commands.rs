use indexmap::IndexMap;
use pamm_core::fit::{fit_pamm, FitError, FitOptions, LambdaChoice};
use pamm_core::formula::{parse_hazard_expression, parse_model_formula, parse_transform_formula, LagLeadSpec};
use pamm_core::frame::{Column, Frame, Value};
use pamm_core::io::{self, IoError};
use pamm_core::ped::{self, as_ped, CutPoints, SurvDataset};
use pamm_core::predict::{
    add_cumu_hazard, add_hazard, add_surv_prob, cumu_coef_frame, export_laglead, get_cumu_coef, make_newdata,
    ped_info, Base, Newdata, PredictError, Scale,
};
use pamm_core::simulate::{add_tdc, sim_pexp, simulate_covariates, CovariateDist, SimError, SimSpec, TdcProcess};
use serde::Deserialize;
use std::path::Path;

use crate::args::*;
use crate::CliError;

fn log(msg: impl AsRef<str>) {
    eprintln!("pamm: {}", msg.as_ref());
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::user(e.to_string())
    }
}

impl From<FitError> for CliError {
    fn from(e: FitError) -> Self {
        match e {
            FitError::Diverged | FitError::RankDeficient | FitError::NotPositiveDefinite => {
                CliError::internal(e.to_string())
            }
            _ => CliError::user(e.to_string()),
        }
    }
}

impl From<PredictError> for CliError {
    fn from(e: PredictError) -> Self {
        match e {
            PredictError::Fit(f) => f.into(),
            e => CliError::user(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::user(e.to_string())
    }
}

impl From<ped::TransformError> for CliError {
    fn from(e: ped::TransformError) -> Self {
        CliError::user(e.to_string())
    }
}

fn number(flag: &str, s: &str) -> Result<f64, CliError> {
    s.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| CliError::user(format!("{flag}: `{s}` is not a finite number")))
}

fn numbers(flag: &str, s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',').map(|v| number(flag, v)).collect()
}

/// `from:to:step`.
fn grid(flag: &str, s: &str) -> Result<Vec<f64>, CliError> {
    let parts: Vec<&str> = s.split(':').collect();
    let [a, b, step] = parts[..] else {
        return Err(CliError::user(format!("{flag}: expected from:to:step, got `{s}`")));
    };
    ped::seq(number(flag, a)?, number(flag, b)?, number(flag, step)?)
        .map_err(|e| CliError::user(format!("{flag}: {e}")))
}

fn cuts_from(flag: &str, values: Vec<f64>) -> Result<CutPoints, CliError> {
    CutPoints::new(values).map_err(|e| CliError::user(format!("{flag}: {e}")))
}

fn parse_ll(s: &str) -> Result<LagLeadSpec, CliError> {
    let bad = |m: String| CliError::user(format!("--ll: {m}"));
    let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
    match kind {
        "default" if rest.is_empty() => Ok(LagLeadSpec::Default),
        "lag" => LagLeadSpec::lagged(number("--ll", rest)?).map_err(|e| bad(e.to_string())),
        "window" => match numbers("--ll", rest)?[..] {
            [lag, lead] => LagLeadSpec::window(lag, lead).map_err(|e| bad(e.to_string())),
            _ => Err(bad(format!("expected window:<lag>,<lead>, got `{s}`"))),
        },
        _ => Err(bad(format!("expected default, lag:<l> or window:<lag>,<lead>, got `{s}`"))),
    }
}

fn parse_covariate(s: &str) -> Result<(String, CovariateDist), CliError> {
    let bad = || CliError::user(format!("--covariate: expected name=uniform:a,b or name=normal:mean,sd, got `{s}`"));
    let (name, dist) = s.split_once('=').ok_or_else(bad)?;
    let (kind, params) = dist.split_once(':').ok_or_else(bad)?;
    let p = numbers("--covariate", params)?;
    let d = match (kind, &p[..]) {
        ("uniform", &[a, b]) if a < b => CovariateDist::Uniform(a, b),
        ("normal", &[m, sd]) if sd > 0.0 => CovariateDist::Normal(m, sd),
        _ => return Err(bad()),
    };
    if name.is_empty() {
        return Err(bad());
    }
    Ok((name.to_string(), d))
}

fn parse_process(s: &str) -> Result<TdcProcess, CliError> {
    match s.split_once(':') {
        Some(("ar2", p)) => match numbers("--tdc-process", p)?[..] {
            [phi1, phi2] => Ok(TdcProcess::Ar2 { phi1, phi2 }),
            _ => Err(CliError::user(format!("--tdc-process: expected ar2:phi1,phi2, got `{s}`"))),
        },
        _ => Err(CliError::user(format!("--tdc-process: expected ar2:phi1,phi2, got `{s}`"))),
    }
}

pub fn as_ped_cmd(a: &AsPedArgs) -> Result<(), CliError> {
    let spec = parse_transform_formula(&a.formula).map_err(|e| CliError::user(format!("--formula: {e}")))?;
    let mut data = io::read_surv_data(&a.data, &spec)?;
    let tz_vars = spec.tz_vars();
    for path in &a.tdc {
        data = data.with_exposure(io::read_exposure(path, &tz_vars)?);
    }
    let cuts = match (&a.cut, &a.cut_list) {
        (Some(c), _) => Some(cuts_from("--cut", grid("--cut", c)?)?),
        (None, Some(l)) => Some(cuts_from("--cut-list", numbers("--cut-list", l)?)?),
        (None, None) => None,
    };
    if let Some(m) = a.max_time {
        if !(m > 0.0 && m.is_finite()) {
            return Err(CliError::user(format!("--max-time: must be positive, got {m}")));
        }
    }
    let ped = as_ped(&data, &spec, cuts.as_ref(), a.max_time)?;
    io::write_ped_bundle(&a.out, &ped).map_err(CliError::write)?;
    log(format!(
        "as-ped: {} subjects, {} intervals, {} rows -> {}",
        data.n_subjects(),
        ped.cuts.n_intervals(),
        ped.nrows(),
        a.out.display()
    ));
    Ok(())
}

pub fn simulate_cmd(a: &SimulateArgs) -> Result<(), CliError> {
    let hazard = parse_hazard_expression(&a.hazard).map_err(|e| CliError::user(format!("--hazard: {e}")))?;
    let cuts = cuts_from("--cut", grid("--cut", &a.cut)?)?;
    let (ids, covariates) = match &a.data {
        Some(path) => {
            let mut f = io::read_csv(path)?;
            let ids = match f.remove("id") {
                Some(Column::Numeric(v)) if v.iter().all(|x| x.fract() == 0.0) => {
                    Some(v.iter().map(|&x| x as i64).collect::<Vec<_>>())
                }
                Some(_) => return Err(CliError::user(format!("{}: column `id` must hold integers", path.display()))),
                None => None,
            };
            (ids, f)
        }
        None => {
            let n = a.n.ok_or_else(|| CliError::user("--n is required without --data"))?;
            if n == 0 {
                return Err(CliError::user("--n must be positive"));
            }
            let cols = a.covariate.iter().map(|s| parse_covariate(s)).collect::<Result<Vec<_>, _>>()?;
            (None, simulate_covariates(n, &cols, a.seed))
        }
    };
    let mut spec = SimSpec::new(hazard.clone(), cuts.clone(), covariates, a.seed);
    if let Some(ids) = ids {
        spec.ids = ids;
    }

    let mut tdc = None;
    if let Some(node) = hazard.cumulative.first() {
        if hazard.cumulative.iter().any(|n| n.tz_var != node.tz_var || n.z_var != node.z_var) {
            return Err(CliError::user("--hazard: all cumulative terms must share one exposure series"));
        }
        let g = a
            .tdc_grid
            .as_ref()
            .ok_or_else(|| CliError::user("--tdc-grid is required when the hazard has cumulative terms"))?;
        let g = grid("--tdc-grid", g)?;
        let process = parse_process(&a.tdc_process)?;
        let n = spec.ids.len();
        let carrier = SurvDataset::new(spec.ids.clone(), vec![cuts.last(); n], vec![0; n], Frame::new(n))?;
        let with = add_tdc(carrier, &node.tz_var, &node.z_var, &g, process, a.seed)?;
        let table = with.exposures.into_iter().next().expect("one exposure table").1;
        tdc = Some(table.clone());
        spec = spec.with_exposure(table);
    } else if a.tdc_out.is_some() {
        return Err(CliError::user("--tdc-out requires cumulative terms in --hazard"));
    }

    let sim = sim_pexp(&spec)?;
    io::write_csv(&a.out, &io::surv_frame(&sim)).map_err(CliError::write)?;
    if let (Some(path), Some(t)) = (&a.tdc_out, &tdc) {
        io::write_csv(path, &io::exposure_frame(t)).map_err(CliError::write)?;
    }
    let events = sim.status.iter().filter(|&&s| s == 1).count();
    log(format!("simulate: {} subjects, {} events -> {}", sim.n_subjects(), events, a.out.display()));
    Ok(())
}

pub fn fit_cmd(a: &FitArgs) -> Result<(), CliError> {
    let model = parse_model_formula(&a.model).map_err(|e| CliError::user(format!("--model: {e}")))?;
    let lambda = match a.lambda.split_once(':') {
        None if a.lambda == "gcv" => LambdaChoice::Gcv,
        Some(("fixed", v)) => {
            let v = number("--lambda", v)?;
            if v < 0.0 {
                return Err(CliError::user("--lambda: must be nonnegative"));
            }
            LambdaChoice::Fixed(v)
        }
        _ => return Err(CliError::user(format!("--lambda: expected gcv or fixed:<value>, got `{}`", a.lambda))),
    };
    let ped = io::read_ped_bundle(&a.ped)?;
    let fit = fit_pamm(&ped, &model, &FitOptions { lambda })?;
    io::write_model(&a.out, &fit).map_err(CliError::write)?;
    log(format!(
        "fit: {} rows, {} coefficients, edf {:.3}, converged {} -> {}",
        fit.n,
        fit.p(),
        fit.edf_total,
        fit.converged,
        a.out.display()
    ));
    Ok(())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(Value),
    Many(Vec<Value>),
}

fn read_newdata_spec(path: &Path) -> Result<IndexMap<String, Vec<Value>>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::user(format!("--newdata {}: {e}", path.display())))?;
    let raw: IndexMap<String, OneOrMany> = serde_json::from_str(&text).map_err(|e| {
        CliError::user(format!(
            "--newdata {}: expected an object of column names to values: {e}",
            path.display()
        ))
    })?;
    Ok(raw
        .into_iter()
        .map(|(k, v)| match v {
            OneOrMany::One(x) => (k, vec![x]),
            OneOrMany::Many(x) => (k, x),
        })
        .collect())
}

pub fn predict_cmd(a: &PredictArgs) -> Result<(), CliError> {
    let mut want = (false, false, false);
    for item in a.add.split(',').map(str::trim) {
        match item {
            "hazard" => want.0 = true,
            "cumu" => want.1 = true,
            "surv" => want.2 = true,
            _ => return Err(CliError::user(format!("--add: unknown output `{item}` (expected hazard, cumu, surv)"))),
        }
    }
    let scale = match a.scale.as_str() {
        "response" => Scale::Response,
        "link" => Scale::Link,
        s => return Err(CliError::user(format!("--scale: expected response or link, got `{s}`"))),
    };
    let stochastic = want.1 || want.2;
    let seed = match (stochastic, a.seed) {
        (true, None) => return Err(CliError::user("--seed is required for cumu and surv outputs")),
        (_, s) => s.unwrap_or(0),
    };
    if stochastic && a.n_draws < 2 {
        return Err(CliError::user("--n-draws must be at least 2"));
    }
    let fit = io::read_model(&a.model)?;
    let ped = io::read_ped_bundle(&a.ped)?;
    let mut nd: Newdata = match &a.newdata {
        Some(p) => make_newdata(Base::Ped(&ped), &read_newdata_spec(p)?)?,
        None => ped_info(&ped, &[])?,
    };
    if want.0 {
        add_hazard(&mut nd, &fit, scale)?;
    }
    if want.1 {
        add_cumu_hazard(&mut nd, &fit, a.n_draws, seed)?;
    }
    if want.2 {
        add_surv_prob(&mut nd, &fit, a.n_draws, seed)?;
    }
    io::write_csv(&a.out, &nd.frame).map_err(CliError::write)?;
    log(format!("predict: {} rows -> {}", nd.nrows(), a.out.display()));
    Ok(())
}

pub fn cumu_coef_cmd(a: &CumuCoefArgs) -> Result<(), CliError> {
    if a.term.is_empty() {
        return Err(CliError::user("--term is required"));
    }
    if a.n_draws < 2 {
        return Err(CliError::user("--n-draws must be at least 2"));
    }
    let fit = io::read_model(&a.model)?;
    let ped = io::read_ped_bundle(&a.ped)?;
    let mut rows = Vec::new();
    for t in &a.term {
        rows.extend(get_cumu_coef(&fit, &ped, t, a.n_draws, a.seed).map_err(|e| match e {
            PredictError::UnknownTerm(_) => CliError::user(format!("--term: {e}")),
            e => e.into(),
        })?);
    }
    io::write_csv(&a.out, &cumu_coef_frame(&rows)).map_err(CliError::write)?;
    log(format!("cumu-coef: {} rows -> {}", rows.len(), a.out.display()));
    Ok(())
}

pub fn lag_lead_cmd(a: &LagLeadArgs) -> Result<(), CliError> {
    let with_var = |mut f: Frame, tz_var: &str| -> Frame {
        let n = f.nrows();
        let mut out = Frame::new(n);
        out.insert("tz_var", Column::Categorical(pamm_core::frame::Factor::from_strings(&vec![tz_var; n])));
        for name in f.names().map(str::to_string).collect::<Vec<_>>() {
            out.insert(name.clone(), f.remove(&name).expect("listed column"));
        }
        out
    };
    let frame = match &a.ped {
        Some(dir) => {
            let meta = io::read_bundle_meta(dir)?;
            if meta.cumulative.is_empty() {
                return Err(CliError::user(format!("--ped {}: bundle has no cumulative terms", dir.display())));
            }
            let cuts = meta.cuts.clone();
            let mut all = Vec::new();
            for c in &meta.cumulative {
                all.push(with_var(export_laglead(&cuts, &c.tz_grid, c.ll), &c.tz_var));
            }
            concat(all)
        }
        None => {
            let (Some(cut), Some(g)) = (&a.cut, &a.tz_grid) else {
                return Err(CliError::user("either --ped or both --cut and --tz-grid are required"));
            };
            let cuts = cuts_from("--cut", grid("--cut", cut)?)?;
            let g = grid("--tz-grid", g)?;
            with_var(export_laglead(&cuts, &g, parse_ll(&a.ll)?), "tz")
        }
    };
    io::write_csv(&a.out, &frame).map_err(CliError::write)?;
    log(format!("lag-lead: {} rows -> {}", frame.nrows(), a.out.display()));
    Ok(())
}

/// Row-binds frames with identical numeric columns and a leading label column.
fn concat(frames: Vec<Frame>) -> Frame {
    let n: usize = frames.iter().map(Frame::nrows).sum();
    let names: Vec<String> = frames[0].names().map(str::to_string).collect();
    let mut out = Frame::new(n);
    for name in &names {
        let col = if frames[0].get(name).is_some_and(Column::is_numeric) {
            Column::Numeric(frames.iter().flat_map(|f| f.numeric(name).unwrap().to_vec()).collect())
        } else {
            let labels: Vec<String> = frames
                .iter()
                .flat_map(|f| {
                    let c = f.get(name).unwrap();
                    (0..f.nrows()).map(|r| c.format_cell(r)).collect::<Vec<_>>()
                })
                .collect();
            Column::Categorical(pamm_core::frame::Factor::from_strings(&labels))
        };
        out.insert(name.clone(), col);
    }
    out
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| pamm_core::frame::format_f64(*x)).collect::<Vec<_>>().join(", ")
}

pub fn info_cmd(a: &InfoArgs) -> Result<(), CliError> {
    let p = &a.path;
    let mut text = String::new();
    macro_rules! line {
        ($($t:tt)*) => {{
            text.push_str(&format!($($t)*));
            text.push('\n');
        }};
    }
    if p.is_dir() {
        let m = io::read_bundle_meta(p)?;
        line!("PED bundle: {}", p.display());
        line!("format_version: {}", m.format_version);
        line!("intervals: {}", m.cuts.n_intervals());
        line!("cuts: {}", fmt_list(m.cuts.values()));
        line!("rows: {}", m.n_rows);
        line!("subjects: {}", m.n_subjects);
        for c in &m.covariates {
            match &c.levels {
                Some(l) => line!("covariate: {} (categorical: {})", c.name, l.join(", ")),
                None => line!("covariate: {} (numeric)", c.name),
            }
        }
        for mm in &m.matrices {
            line!("matrix: {} ({} x {})", mm.name, m.n_rows, mm.ncols);
        }
        for c in &m.cumulative {
            let cols: Vec<&str> = c.columns.iter().map(|x| x.name.as_str()).collect();
            line!("cumulative: {} [{}] grid of {} points", c.tz_var, cols.join(", "), c.tz_grid.len());
        }
        for c in &m.concurrent {
            line!("concurrent: {} [{}]", c.tz_var, c.covariates.join(", "));
        }
    } else if p.is_file() {
        let f = io::read_model(p)?;
        line!("model: {}", p.display());
        line!("format_version: {}", f.format_version);
        line!("formula: {}", f.formula);
        line!("rows: {}", f.n);
        line!("coefficients: {}", f.p());
        line!("edf: {}", pamm_core::frame::format_f64(f.edf_total));
        line!("deviance: {}", pamm_core::frame::format_f64(f.deviance));
        line!("converged: {} ({} iterations)", f.converged, f.iterations);
        if let Some(c) = &f.cuts {
            line!("cuts: {}", fmt_list(c));
        }
        for (term, edf) in &f.edf {
            line!("term: {term} edf {}", pamm_core::frame::format_f64(*edf));
        }
        if !f.lambda.is_empty() {
            line!("lambda: {}", fmt_list(&f.lambda));
        }
    } else {
        return Err(CliError::user(format!("{}: no such file or directory", p.display())));
    }
    // a closed pipe (`pamm info m.json | head`) is not an error
    match std::io::Write::write_all(&mut std::io::stdout().lock(), text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::internal(format!("stdout: {e}"))),
        _ => Ok(()),
    }
}
