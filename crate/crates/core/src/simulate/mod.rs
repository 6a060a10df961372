//! Survival times from piecewise-exponential hazards.

use crate::formula::{dnorm, HazardExpr, LagLeadSpec, PartialEffect};
use crate::frame::{Column, Frame};
use crate::ped::{grid_weights, CutPoints, ExposureTable, SurvDataset, TransformError};
use indexmap::IndexMap;
use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

/// RNG stream offsets; subject streams use the subject index directly.
const TDC_STREAM: u64 = 1 << 40;
const COVARIATE_STREAM: u64 = 1 << 41;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("hazard is not finite for subject {id} in interval {interval}")]
    NonFiniteHazard { id: i64, interval: usize },
    #[error("hazard reads unknown or non-numeric variable `{0}`")]
    UnknownVariable(String),
    #[error("no exposure series `{z_var}` on grid `{tz_var}`")]
    MissingExposure { tz_var: String, z_var: String },
    #[error("rates must be positive and finite, one per interval")]
    InvalidRates,
    #[error("{0}")]
    InvalidProcess(String),
    #[error(transparent)]
    Transform(#[from] TransformError),
}

pub fn subject_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Piecewise-exponential distribution: constant rate per cut interval.
#[derive(Debug, Clone, PartialEq)]
pub struct PexpDist {
    pub cuts: CutPoints,
    pub rates: Vec<f64>,
}

impl PexpDist {
    pub fn new(cuts: CutPoints, rates: Vec<f64>) -> Result<Self, SimError> {
        if rates.len() != cuts.n_intervals() || rates.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
            return Err(SimError::InvalidRates);
        }
        Ok(PexpDist { cuts, rates })
    }

    pub fn cumulative_hazard(&self, t: f64) -> f64 {
        let mut acc = 0.0;
        for ((s, e), r) in self.cuts.intervals().zip(&self.rates) {
            if t <= s {
                break;
            }
            acc += r * (t.min(e) - s);
        }
        acc
    }

    pub fn cdf(&self, t: f64) -> f64 {
        1.0 - (-self.cumulative_hazard(t)).exp()
    }

    pub fn survival(&self, t: f64) -> f64 {
        (-self.cumulative_hazard(t)).exp()
    }

    /// Time where the cumulative hazard reaches `-ln u`; infinite past the
    /// last cut point.
    pub fn quantile_survival(&self, u: f64) -> f64 {
        rpexp_inverse(self, u)
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        rpexp_inverse(self, rng.sample(Open01))
    }
}

pub fn rpexp_inverse(dist: &PexpDist, u: f64) -> f64 {
    let target = -u.ln();
    let mut acc = 0.0;
    for ((s, e), &r) in dist.cuts.intervals().zip(&dist.rates) {
        let next = acc + r * (e - s);
        if target <= next {
            return s + (target - acc) / r;
        }
        acc = next;
    }
    f64::INFINITY
}

impl PartialEffect {
    pub fn eval(self, t: f64, tz: f64, z: f64) -> f64 {
        match self {
            PartialEffect::Wce => 0.5 * dnorm(t - tz, 6.0, 2.5) * z,
            PartialEffect::Dlnm => 20.0 * (dnorm(t - tz, 6.0, 2.5) * (dnorm(z, 1.25, 2.5) - dnorm(-1.0, 1.25, 2.5))),
            PartialEffect::Elra => 5.0 * (-dnorm(tz, -1.0, 2.5) * (dnorm(t, 5.0, 1.5) - dnorm(5.0, 5.0, 1.5))) * z,
        }
    }
}

/// `Σ_q 1{tz_q in window of (tstart, tend]} Δ_q f(tstart, tz_q, z_q)`, matching
/// the latency convention of the PED matrix columns.
pub fn eval_cumulative_node<F>(f: F, interval: (f64, f64), tz_grid: &[f64], z: &[f64], ll: LagLeadSpec) -> f64
where
    F: Fn(f64, f64, f64) -> f64,
{
    let (s, e) = interval;
    grid_weights(tz_grid)
        .iter()
        .zip(tz_grid)
        .zip(z)
        .filter(|((_, &tz), _)| ll.contains(s, e, tz))
        .map(|((w, &tz), &zq)| w * f(s, tz, zq))
        .sum()
}

/// Inputs of a simulation run.
#[derive(Debug, Clone)]
pub struct SimSpec {
    pub hazard: HazardExpr,
    pub cuts: CutPoints,
    pub ids: Vec<i64>,
    pub covariates: Frame,
    pub exposures: IndexMap<String, ExposureTable>,
    pub seed: u64,
}

impl SimSpec {
    pub fn new(hazard: HazardExpr, cuts: CutPoints, covariates: Frame, seed: u64) -> Self {
        let n = covariates.nrows();
        SimSpec {
            hazard,
            cuts,
            ids: (1..=n as i64).collect(),
            covariates,
            exposures: IndexMap::new(),
            seed,
        }
    }

    pub fn with_exposure(mut self, table: ExposureTable) -> Self {
        self.exposures.insert(table.tz_var.clone(), table);
        self
    }
}

/// Per-interval rates of subject `i`.
fn subject_rates(spec: &SimSpec, i: usize) -> Result<Vec<f64>, SimError> {
    let id = spec.ids[i];
    let mut series = Vec::with_capacity(spec.hazard.cumulative.len());
    for node in &spec.hazard.cumulative {
        let missing = || SimError::MissingExposure {
            tz_var: node.tz_var.clone(),
            z_var: node.z_var.clone(),
        };
        let table = spec.exposures.get(&node.tz_var).ok_or_else(missing)?;
        let z = table.values.numeric(&node.z_var).ok_or_else(missing)?;
        let rows = table.rows_for(id);
        series.push((&table.tz[rows.clone()], &z[rows]));
    }
    spec.cuts
        .intervals()
        .enumerate()
        .map(|(j, (s, e))| {
            let lookup = |name: &str| -> f64 {
                if name == "t" {
                    e
                } else {
                    spec.covariates.numeric(name).map(|c| c[i]).unwrap_or(f64::NAN)
                }
            };
            let mut eta = spec.hazard.linear.eval(&lookup, None);
            for (node, (tz, z)) in spec.hazard.cumulative.iter().zip(&series) {
                eta += eval_cumulative_node(|t, tz, z| node.effect.eval(t, tz, z), (s, e), tz, z, node.ll);
            }
            let rate = eta.exp();
            if rate.is_finite() && !eta.is_nan() {
                Ok(rate)
            } else {
                Err(SimError::NonFiniteHazard { id, interval: j })
            }
        })
        .collect()
}

/// Draw one event time per subject; times past the last cut point are
/// censored there.
pub fn sim_pexp(spec: &SimSpec) -> Result<SurvDataset, SimError> {
    for v in spec.hazard.variables() {
        if v != "t" && spec.covariates.numeric(&v).is_none() {
            return Err(SimError::UnknownVariable(v));
        }
    }
    let last = spec.cuts.last();
    let draws: Vec<(f64, u8)> = (0..spec.ids.len())
        .into_par_iter()
        .map(|i| {
            let dist = PexpDist {
                cuts: spec.cuts.clone(),
                rates: subject_rates(spec, i)?,
            };
            let t = dist.sample(&mut subject_rng(spec.seed, i as u64));
            Ok(if t < last { (t, 1) } else { (last, 0) })
        })
        .collect::<Result<_, SimError>>()?;
    let (time, status) = draws.into_iter().unzip();
    let mut out = SurvDataset::new(spec.ids.clone(), time, status, spec.covariates.clone())?;
    for t in spec.exposures.values() {
        out = out.with_exposure(t.clone());
    }
    Ok(out)
}

/// Exposure process generating one series per subject.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TdcProcess {
    Ar2 { phi1: f64, phi2: f64 },
}

impl Default for TdcProcess {
    fn default() -> Self {
        TdcProcess::Ar2 { phi1: 0.8, phi2: -0.1 }
    }
}

impl TdcProcess {
    fn validate(self) -> Result<(), SimError> {
        let TdcProcess::Ar2 { phi1, phi2 } = self;
        if phi1 + phi2 < 1.0 && phi2 - phi1 < 1.0 && phi2.abs() < 1.0 {
            Ok(())
        } else {
            Err(SimError::InvalidProcess(format!("AR(2) with ({phi1}, {phi2}) is not stationary")))
        }
    }

    /// A stationary series of length `len`.
    pub fn generate<R: Rng>(self, len: usize, rng: &mut R) -> Vec<f64> {
        let TdcProcess::Ar2 { phi1, phi2 } = self;
        let mut normal = || -> f64 { rng.sample(StandardNormal) };
        let gamma0 = (1.0 - phi2) / ((1.0 + phi2) * ((1.0 - phi2).powi(2) - phi1 * phi1));
        let rho1 = phi1 / (1.0 - phi2);
        let mut x = Vec::with_capacity(len);
        if len > 0 {
            x.push(gamma0.sqrt() * normal());
        }
        if len > 1 {
            x.push(rho1 * x[0] + (gamma0 * (1.0 - rho1 * rho1)).sqrt() * normal());
        }
        for t in 2..len {
            let v = phi1 * x[t - 1] + phi2 * x[t - 2] + normal();
            x.push(v);
        }
        x
    }
}

/// Attach one exposure series per subject on a shared grid.
pub fn add_tdc(
    data: SurvDataset,
    tz_var: &str,
    z_var: &str,
    tz_grid: &[f64],
    process: TdcProcess,
    seed: u64,
) -> Result<SurvDataset, SimError> {
    process.validate()?;
    if tz_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(SimError::InvalidProcess("exposure grid must be sorted".into()));
    }
    let q = tz_grid.len();
    let series: Vec<Vec<f64>> = (0..data.n_subjects())
        .into_par_iter()
        .map(|i| process.generate(q, &mut subject_rng(seed, TDC_STREAM + i as u64)))
        .collect();
    let ids: Vec<i64> = data.ids.iter().flat_map(|&id| std::iter::repeat_n(id, q)).collect();
    let tz: Vec<f64> = (0..data.n_subjects()).flat_map(|_| tz_grid.iter().copied()).collect();
    let mut values = Frame::new(ids.len());
    values.insert(z_var, Column::Numeric(series.concat()));
    let table = ExposureTable::new(tz_var, ids, tz, values)?;
    Ok(data.with_exposure(table))
}

/// Covariate distributions for generated subject tables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CovariateDist {
    Uniform(f64, f64),
    Normal(f64, f64),
}

/// `n` rows of independent covariates; column `c` uses its own stream.
pub fn simulate_covariates(n: usize, columns: &[(String, CovariateDist)], seed: u64) -> Frame {
    let mut f = Frame::new(n);
    for (c, (name, dist)) in columns.iter().enumerate() {
        let mut rng = subject_rng(seed, COVARIATE_STREAM + c as u64);
        let v: Vec<f64> = (0..n)
            .map(|_| match *dist {
                CovariateDist::Uniform(a, b) => a + (b - a) * rng.random::<f64>(),
                CovariateDist::Normal(m, s) => m + s * rng.sample::<f64, _>(StandardNormal),
            })
            .collect();
        f.insert(name.clone(), Column::Numeric(v));
    }
    f
}

/// Kaplan–Meier survivor estimate as `(event time, S)` steps.
pub fn kaplan_meier(time: &[f64], status: &[u8]) -> Vec<(f64, f64)> {
    let mut order: Vec<usize> = (0..time.len()).collect();
    order.sort_by(|&a, &b| time[a].total_cmp(&time[b]));
    let mut at_risk = time.len() as f64;
    let mut s = 1.0;
    let mut out = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let t = time[order[i]];
        let mut events = 0.0;
        let mut leaving = 0.0;
        while i < order.len() && time[order[i]] == t {
            events += status[order[i]] as f64;
            leaving += 1.0;
            i += 1;
        }
        if events > 0.0 {
            s *= 1.0 - events / at_risk;
            out.push((t, s));
        }
        at_risk -= leaving;
    }
    out
}

/// Evaluate a Kaplan–Meier step function (right-continuous).
pub fn km_at(km: &[(f64, f64)], t: f64) -> f64 {
    let k = km.partition_point(|&(u, _)| u <= t);
    if k == 0 {
        1.0
    } else {
        km[k - 1].1
    }
}

/// Largest gap between a Kaplan–Meier curve and a survivor function,
/// checked on both sides of every jump and at the given extra points.
pub fn km_sup_gap<S: Fn(f64) -> f64>(km: &[(f64, f64)], survivor: S, extra: &[f64]) -> f64 {
    let mut gap: f64 = 0.0;
    let mut prev = 1.0;
    for &(t, s) in km {
        let truth = survivor(t);
        gap = gap.max((prev - truth).abs()).max((s - truth).abs());
        prev = s;
    }
    for &t in extra {
        gap = gap.max((km_at(km, t) - survivor(t)).abs());
    }
    gap
}

/// Two-sided Kolmogorov–Smirnov distance between a sample and a CDF.
pub fn ks_statistic<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> f64 {
    let mut x = sample.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = cdf(v);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}
