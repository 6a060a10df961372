use super::{ped_info, Newdata, PredictError, Z_CRIT};
use crate::basis::quantile_sorted;
use crate::fit::{posterior_draws, FittedPamm};
use crate::frame::{Column, Factor, Frame, Value};
use crate::ped::PedDataset;
use nalgebra::DMatrix;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Link,
    Response,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HazardPrediction {
    pub fit: Vec<f64>,
    pub se: Vec<f64>,
    pub ci_lower: Vec<f64>,
    pub ci_upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CumuPrediction {
    pub cumu_hazard: Vec<f64>,
    pub cumu_lower: Vec<f64>,
    pub cumu_upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurvPrediction {
    pub surv_prob: Vec<f64>,
    pub surv_lower: Vec<f64>,
    pub surv_upper: Vec<f64>,
}

/// `sqrt(diag(X V Xᵀ))`.
pub(crate) fn rowwise_se(x: &DMatrix<f64>, v: &DMatrix<f64>) -> Vec<f64> {
    let xv = x * v;
    (0..x.nrows())
        .map(|i| xv.row(i).dot(&x.row(i)).max(0.0).sqrt())
        .collect()
}

/// Linear predictor without offset, its standard error and a normal
/// interval; the response scale exponentiates all three point columns.
pub fn predict_hazard(nd: &Newdata, fit: &FittedPamm, scale: Scale) -> Result<HazardPrediction, PredictError> {
    let x = nd.design(fit)?;
    let eta = &x * &fit.beta;
    let se = rowwise_se(&x, &fit.v_beta);
    let lo: Vec<f64> = eta.iter().zip(&se).map(|(e, s)| e - Z_CRIT * s).collect();
    let hi: Vec<f64> = eta.iter().zip(&se).map(|(e, s)| e + Z_CRIT * s).collect();
    let eta: Vec<f64> = eta.iter().copied().collect();
    Ok(match scale {
        Scale::Link => HazardPrediction {
            fit: eta,
            se,
            ci_lower: lo,
            ci_upper: hi,
        },
        Scale::Response => HazardPrediction {
            fit: eta.iter().map(|e| e.exp()).collect(),
            se,
            ci_lower: lo.iter().map(|e| e.exp()).collect(),
            ci_upper: hi.iter().map(|e| e.exp()).collect(),
        },
    })
}

pub fn add_hazard(nd: &mut Newdata, fit: &FittedPamm, scale: Scale) -> Result<(), PredictError> {
    let p = predict_hazard(nd, fit, scale)?;
    let name = match scale {
        Scale::Link => "log_hazard",
        Scale::Response => "hazard",
    };
    nd.frame.insert(name, Column::Numeric(p.fit));
    nd.frame.insert("se", Column::Numeric(p.se));
    nd.frame.insert("ci_lower", Column::Numeric(p.ci_lower));
    nd.frame.insert("ci_upper", Column::Numeric(p.ci_upper));
    Ok(())
}

/// Interval lengths after checking that each group runs forward in time.
fn checked_intlen(nd: &Newdata) -> Result<Vec<f64>, PredictError> {
    let get = |name: &str| {
        nd.frame
            .numeric(name)
            .ok_or_else(|| PredictError::MissingTermColumns(name.to_string()))
    };
    let tend = get("tend")?;
    let intlen = get("intlen")?;
    for rows in nd.group_rows() {
        if rows.iter().any(|&i| !(intlen[i] > 0.0)) || rows.windows(2).any(|w| !(tend[w[1]] > tend[w[0]])) {
            return Err(PredictError::UnorderedIntervals);
        }
    }
    Ok(intlen.to_vec())
}

/// Per-group running sums of `exp(eta) * intlen`, one column per linear
/// predictor column.
fn cumulate(eta: &DMatrix<f64>, intlen: &[f64], groups: &[Vec<usize>]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(eta.nrows(), eta.ncols());
    for c in 0..eta.ncols() {
        for rows in groups {
            let mut acc = 0.0;
            for &i in rows {
                acc += eta[(i, c)].exp() * intlen[i];
                out[(i, c)] = acc;
            }
        }
    }
    out
}

/// Pointwise 2.5% and 97.5% quantiles (linear interpolation) across columns.
pub(crate) fn bands(paths: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    (0..paths.nrows())
        .map(|i| {
            let mut v: Vec<f64> = paths.row(i).iter().copied().collect();
            v.sort_by(f64::total_cmp);
            (quantile_sorted(&v, 0.025), quantile_sorted(&v, 0.975))
        })
        .unzip()
}

/// Point estimate and per-draw cumulative hazards.
fn cumu_paths(
    nd: &Newdata,
    fit: &FittedPamm,
    draws: &DMatrix<f64>,
) -> Result<(Vec<f64>, DMatrix<f64>), PredictError> {
    let intlen = checked_intlen(nd)?;
    let groups = nd.group_rows();
    let x = nd.design(fit)?;
    let eta = DMatrix::from_column_slice(x.nrows(), 1, (&x * &fit.beta).as_slice());
    let point = cumulate(&eta, &intlen, &groups);
    let sims = cumulate(&(&x * draws.transpose()), &intlen, &groups);
    Ok((point.column(0).iter().copied().collect(), sims))
}

/// Cumulative hazard per group with Monte Carlo bands from `n_draws`
/// posterior coefficient draws.
pub fn predict_cumu_hazard(
    nd: &Newdata,
    fit: &FittedPamm,
    n_draws: usize,
    seed: u64,
) -> Result<CumuPrediction, PredictError> {
    let draws = posterior_draws(fit, n_draws, seed)?;
    let (point, sims) = cumu_paths(nd, fit, &draws)?;
    let (lo, hi) = bands(&sims);
    Ok(CumuPrediction {
        cumu_hazard: point,
        cumu_lower: lo,
        cumu_upper: hi,
    })
}

pub fn add_cumu_hazard(nd: &mut Newdata, fit: &FittedPamm, n_draws: usize, seed: u64) -> Result<(), PredictError> {
    let c = predict_cumu_hazard(nd, fit, n_draws, seed)?;
    nd.frame.insert("cumu_hazard", Column::Numeric(c.cumu_hazard));
    nd.frame.insert("cumu_lower", Column::Numeric(c.cumu_lower));
    nd.frame.insert("cumu_upper", Column::Numeric(c.cumu_upper));
    Ok(())
}

/// `S = exp(-Λ)`; the bounds swap because the map is decreasing.
pub fn surv_from_cumu(c: &CumuPrediction) -> SurvPrediction {
    let s = |v: &[f64]| v.iter().map(|l| (-l).exp()).collect::<Vec<_>>();
    SurvPrediction {
        surv_prob: s(&c.cumu_hazard),
        surv_lower: s(&c.cumu_upper),
        surv_upper: s(&c.cumu_lower),
    }
}

pub fn add_surv_prob(nd: &mut Newdata, fit: &FittedPamm, n_draws: usize, seed: u64) -> Result<(), PredictError> {
    let s = surv_from_cumu(&predict_cumu_hazard(nd, fit, n_draws, seed)?);
    nd.frame.insert("surv_prob", Column::Numeric(s.surv_prob));
    nd.frame.insert("surv_lower", Column::Numeric(s.surv_lower));
    nd.frame.insert("surv_upper", Column::Numeric(s.surv_upper));
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CumuCoefRow {
    pub method: String,
    pub variable: String,
    pub time: f64,
    pub cumu_hazard: f64,
    pub cumu_lower: f64,
    pub cumu_upper: f64,
}

/// Cumulative hazard difference `Λ(t | x + 1) − Λ(t | x)` over the training
/// intervals (non-reference minus reference level for factors), other
/// covariates at sample means or modes. Paths start at 0 at the first cut.
pub fn get_cumu_coef(
    fit: &FittedPamm,
    ped: &PedDataset,
    term: &str,
    n_draws: usize,
    seed: u64,
) -> Result<Vec<CumuCoefRow>, PredictError> {
    let used = fit.terms.iter().any(|t| t.variables().iter().any(|v| v == term));
    let col = ped.covariates.get(term).filter(|_| used).ok_or_else(|| PredictError::UnknownTerm(term.into()))?;
    let base = ped_info(ped, &[])?;
    let n = base.nrows();
    let with = |v: Value| -> Newdata {
        let mut nd = base.clone();
        let c = match (col, v) {
            (Column::Numeric(_), Value::Num(x)) => Column::Numeric(vec![x; n]),
            (Column::Categorical(f), Value::Str(s)) => {
                Column::Categorical(Factor::with_levels(&vec![s; n], &f.levels).expect("known level"))
            }
            _ => unreachable!("value matches column type"),
        };
        nd.frame.insert(term, c);
        nd
    };
    let contrasts: Vec<(String, Newdata, Newdata)> = match col {
        Column::Numeric(_) => {
            let x = base.frame.numeric(term).expect("numeric covariate")[0];
            vec![(term.to_string(), with(Value::Num(x)), with(Value::Num(x + 1.0)))]
        }
        Column::Categorical(f) => f.levels[1..]
            .iter()
            .map(|l| {
                (
                    format!("{term} ({l})"),
                    with(Value::Str(f.levels[0].clone())),
                    with(Value::Str(l.clone())),
                )
            })
            .collect(),
    };

    let draws = posterior_draws(fit, n_draws, seed)?;
    let tend = base.frame.numeric("tend").expect("interval columns").to_vec();
    let mut out = Vec::new();
    for (label, nd0, nd1) in contrasts {
        let (p0, s0) = cumu_paths(&nd0, fit, &draws)?;
        let (p1, s1) = cumu_paths(&nd1, fit, &draws)?;
        let (lo, hi) = bands(&(s1 - s0));
        let row = |time, cumu_hazard, cumu_lower, cumu_upper| CumuCoefRow {
            method: "pam".into(),
            variable: label.clone(),
            time,
            cumu_hazard,
            cumu_lower,
            cumu_upper,
        };
        out.push(row(ped.cuts.first(), 0.0, 0.0, 0.0));
        for i in 0..n {
            out.push(row(tend[i], p1[i] - p0[i], lo[i], hi[i]));
        }
    }
    Ok(out)
}

/// Rows as a frame with the documented column order.
pub fn cumu_coef_frame(rows: &[CumuCoefRow]) -> Frame {
    let mut f = Frame::new(rows.len());
    f.insert(
        "method",
        Column::Categorical(Factor::from_strings(&rows.iter().map(|r| r.method.as_str()).collect::<Vec<_>>())),
    );
    f.insert(
        "variable",
        Column::Categorical(Factor::from_strings(&rows.iter().map(|r| r.variable.as_str()).collect::<Vec<_>>())),
    );
    f.insert("time", Column::Numeric(rows.iter().map(|r| r.time).collect()));
    f.insert("cumu_hazard", Column::Numeric(rows.iter().map(|r| r.cumu_hazard).collect()));
    f.insert("cumu_lower", Column::Numeric(rows.iter().map(|r| r.cumu_lower).collect()));
    f.insert("cumu_upper", Column::Numeric(rows.iter().map(|r| r.cumu_upper).collect()));
    f
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::{fit_pamm, FitOptions};
    use nalgebra::DVector;
    use crate::formula::{parse_model_formula, parse_transform_formula};
    use crate::ped::{as_ped, CutPoints, SurvDataset};
    use crate::predict::{make_newdata, Base};
    use indexmap::IndexMap;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_ped(n: usize, seed: u64) -> PedDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let sex: Vec<&str> = (0..n).map(|i| if i % 3 == 0 { "f" } else { "m" }).collect();
        let time: Vec<f64> = x
            .iter()
            .zip(&sex)
            .map(|(x, s)| {
                let rate = (0.3 * x + if *s == "f" { -0.4 } else { 0.0 }).exp() * 0.3;
                let u: f64 = rng.random_range(1e-9..1.0);
                (-u.ln() / rate).min(10.0)
            })
            .collect();
        let status = time.iter().map(|&t| (t < 10.0) as u8).collect();
        let mut f = Frame::new(n);
        f.insert("x", Column::Numeric(x));
        f.insert("sex", Column::Categorical(Factor::from_strings(&sex)));
        let s = SurvDataset::new((1..=n as i64).collect(), time, status, f).unwrap();
        let spec = parse_transform_formula("Surv(time, status) ~ .").unwrap();
        as_ped(&s, &spec, Some(&CutPoints::seq(0.0, 10.0, 1.0).unwrap()), None).unwrap()
    }

    fn fit(ped: &PedDataset, formula: &str) -> FittedPamm {
        fit_pamm(ped, &parse_model_formula(formula).unwrap(), &FitOptions::default()).unwrap()
    }

    fn with_beta(mut f: FittedPamm, beta: &[f64]) -> FittedPamm {
        f.beta = DVector::from_row_slice(beta);
        f.v_beta = DMatrix::zeros(beta.len(), beta.len());
        f
    }

    #[test]
    fn intercept_only_hazard() {
        let ped = toy_ped(60, 1);
        let f = with_beta(fit(&ped, "ped_status ~ 1"), &[2f64.ln()]);
        let nd = ped_info(&ped, &[]).unwrap();
        let h = predict_hazard(&nd, &f, Scale::Response).unwrap();
        assert!(h.fit.iter().all(|&v| (v - 2.0).abs() < 1e-12));
        assert_eq!(h.ci_lower, h.fit);
        let l = predict_hazard(&nd, &f, Scale::Link).unwrap();
        assert!((l.fit[0] + 0.5f64.ln()).abs() < 1e-12 && (l.fit[0] - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn link_interval_width() {
        let ped = toy_ped(200, 2);
        let f = fit(&ped, "ped_status ~ s(tend) + x");
        let nd = ped_info(&ped, &[]).unwrap();
        let h = predict_hazard(&nd, &f, Scale::Link).unwrap();
        for i in 0..nd.nrows() {
            assert!((h.ci_upper[i] - h.ci_lower[i] - 2.0 * 1.96 * h.se[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_hazard_cumulates() {
        let ped = toy_ped(60, 3);
        let f = with_beta(fit(&ped, "ped_status ~ 1"), &[2f64.ln()]);
        let mut spec = IndexMap::new();
        spec.insert("tend".to_string(), vec![Value::Num(1.0), Value::Num(2.0)]);
        let nd = make_newdata(Base::Ped(&ped), &spec).unwrap();
        let c = predict_cumu_hazard(&nd, &f, 100, 1).unwrap();
        assert!((c.cumu_hazard[0] - 2.0).abs() < 1e-12 && (c.cumu_hazard[1] - 4.0).abs() < 1e-12);
        let s = surv_from_cumu(&c);
        assert!((s.surv_prob[0] - 0.1353353).abs() < 1e-7);
        assert!((s.surv_prob[1] - 0.0183156).abs() < 1e-7);
    }

    #[test]
    fn unordered_groups_rejected() {
        let ped = toy_ped(60, 3);
        let f = fit(&ped, "ped_status ~ 1");
        let mut spec = IndexMap::new();
        spec.insert("tend".to_string(), vec![Value::Num(2.0), Value::Num(1.0)]);
        let nd = make_newdata(Base::Ped(&ped), &spec).unwrap();
        assert_eq!(predict_cumu_hazard(&nd, &f, 10, 1), Err(PredictError::UnorderedIntervals));
    }

    #[test]
    fn survival_identities_and_determinism() {
        let ped = toy_ped(300, 4);
        let f = fit(&ped, "ped_status ~ s(tend) + x + sex");
        let nd = ped_info(&ped, &["sex".into()]).unwrap();
        let c = predict_cumu_hazard(&nd, &f, 100, 9).unwrap();
        assert_eq!(c, predict_cumu_hazard(&nd, &f, 100, 9).unwrap());
        let s = surv_from_cumu(&c);
        for rows in nd.group_rows() {
            for w in rows.windows(2) {
                assert!(c.cumu_hazard[w[1]] >= c.cumu_hazard[w[0]]);
            }
        }
        for i in 0..nd.nrows() {
            assert!((s.surv_prob[i] - (-c.cumu_hazard[i]).exp()).abs() < 1e-12);
            assert!(s.surv_lower[i] <= s.surv_prob[i] && s.surv_prob[i] <= s.surv_upper[i]);
        }
    }

    #[test]
    fn rescaled_time_keeps_cumulative_hazard() {
        let ped = toy_ped(100, 5);
        let f = fit(&ped, "ped_status ~ x");
        let nd = ped_info(&ped, &[]).unwrap();
        let base = predict_cumu_hazard(&nd, &f, 5, 1).unwrap();
        let c = 3.0;
        let mut scaled = nd.clone();
        let intlen: Vec<f64> = nd.frame.numeric("intlen").unwrap().iter().map(|l| l * c).collect();
        let tend: Vec<f64> = nd.frame.numeric("tend").unwrap().iter().map(|t| t * c).collect();
        scaled.frame.insert("intlen", Column::Numeric(intlen));
        scaled.frame.insert("tend", Column::Numeric(tend));
        let mut g = f.clone();
        g.beta[0] -= c.ln();
        let r = predict_cumu_hazard(&scaled, &g, 5, 1).unwrap();
        for (a, b) in base.cumu_hazard.iter().zip(&r.cumu_hazard) {
            assert!((a - b).abs() < 1e-12 * a.max(1.0));
        }
    }

    #[test]
    fn cumu_coef_closed_form() {
        let ped = toy_ped(300, 6);
        let f = fit(&ped, "ped_status ~ x");
        let rows = get_cumu_coef(&f, &ped, "x", 50, 1).unwrap();
        let nd = ped_info(&ped, &[]).unwrap();
        let base = predict_cumu_hazard(&nd, &f, 5, 1).unwrap();
        let b = f.beta[1];
        assert_eq!(rows[0].time, 0.0);
        assert_eq!(rows[0].cumu_hazard, 0.0);
        for (r, l) in rows[1..].iter().zip(&base.cumu_hazard) {
            assert!((r.cumu_hazard - (b.exp() - 1.0) * l).abs() < 1e-10);
            assert_eq!(r.method, "pam");
        }

        let g = with_beta(f.clone(), &[f.beta[0], 0.0]);
        assert!(get_cumu_coef(&g, &ped, "x", 20, 1).unwrap().iter().all(|r| r.cumu_hazard == 0.0 && r.cumu_upper == 0.0));

        let h = fit(&ped, "ped_status ~ x + sex");
        let rows = get_cumu_coef(&h, &ped, "sex", 20, 1).unwrap();
        assert_eq!(rows[0].variable, "sex (m)");
        assert_eq!(get_cumu_coef(&h, &ped, "age", 20, 1), Err(PredictError::UnknownTerm("age".into())));
        assert_eq!(cumu_coef_frame(&rows).names().collect::<Vec<_>>(), ["method", "variable", "time", "cumu_hazard", "cumu_lower", "cumu_upper"]);
    }

    #[test]
    fn bands_cover_point_estimate_mostly() {
        let ped = toy_ped(300, 7);
        let f = fit(&ped, "ped_status ~ s(tend) + x");
        let nd = ped_info(&ped, &[]).unwrap();
        let mut covered = 0;
        let mut total = 0;
        for seed in 0..20 {
            let c = predict_cumu_hazard(&nd, &f, 100, seed).unwrap();
            for i in 0..nd.nrows() {
                total += 1;
                covered += (c.cumu_lower[i] <= c.cumu_hazard[i] && c.cumu_hazard[i] <= c.cumu_upper[i]) as usize;
            }
        }
        assert!(covered as f64 >= 0.95 * total as f64);
    }

    #[test]
    fn missing_columns_reported() {
        let ped = toy_ped(60, 8);
        let f = fit(&ped, "ped_status ~ x");
        let mut nd = ped_info(&ped, &[]).unwrap();
        nd.frame.remove("x");
        assert_eq!(predict_hazard(&nd, &f, Scale::Response), Err(PredictError::MissingTermColumns("x".into())));
    }
}
