//! Fixtures shared by the pipeline benchmarks.

use pamm_core::fit::{fit_pamm, FitOptions, FittedPamm};
use pamm_core::formula::{parse_hazard_expression, parse_model_formula, parse_transform_formula};
use pamm_core::ped::{as_ped, CutPoints, PedDataset, SurvDataset};
use pamm_core::simulate::{sim_pexp, simulate_covariates, CovariateDist, SimSpec};

pub const HAZARD: &str = "~ -3.5 + f0(t) - 0.5*x1 + sqrt(x2)";
pub const MODEL: &str = "ped_status ~ s(tend) + x1 + s(x2)";

pub fn cuts() -> CutPoints {
    CutPoints::seq(0.0, 10.0, 0.5).unwrap()
}

pub fn sim_spec(n: usize, seed: u64) -> SimSpec {
    let cov = simulate_covariates(
        n,
        &[("x1".into(), CovariateDist::Uniform(-3.0, 3.0)), ("x2".into(), CovariateDist::Uniform(0.0, 6.0))],
        seed,
    );
    SimSpec::new(parse_hazard_expression(HAZARD).unwrap(), cuts(), cov, seed)
}

pub fn survival_data(n: usize, seed: u64) -> SurvDataset {
    sim_pexp(&sim_spec(n, seed)).unwrap()
}

pub fn ped(data: &SurvDataset) -> PedDataset {
    let spec = parse_transform_formula("Surv(time, status) ~ .").unwrap();
    as_ped(data, &spec, Some(&cuts()), None).unwrap()
}

pub fn fitted(ped: &PedDataset) -> FittedPamm {
    fit_pamm(ped, &parse_model_formula(MODEL).unwrap(), &FitOptions::default()).unwrap()
}
