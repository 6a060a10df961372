use super::CutPoints;
use crate::formula::LagLeadSpec;
use nalgebra::DMatrix;

/// Quadrature weights of an exposure grid: the spacing to the previous grid
/// point, with the first weight copied from the second. A single-point grid
/// gets weight 1.
pub fn grid_weights(tz_grid: &[f64]) -> Vec<f64> {
    match tz_grid.len() {
        0 => Vec::new(),
        1 => vec![1.0],
        _ => {
            let mut w: Vec<f64> = Vec::with_capacity(tz_grid.len());
            w.push(tz_grid[1] - tz_grid[0]);
            w.extend(tz_grid.windows(2).map(|p| p[1] - p[0]));
            w
        }
    }
}

/// Lag-lead weights `W[j, q] = 1{tz_q in window of interval j} * delta_q`.
#[derive(Debug, Clone, PartialEq)]
pub struct LagLeadMatrix {
    pub intervals: Vec<(f64, f64)>,
    pub tz_grid: Vec<f64>,
    pub ll: LagLeadSpec,
    pub weights: DMatrix<f64>,
}

pub fn make_lag_lead(cuts: &CutPoints, tz_grid: &[f64], ll: LagLeadSpec) -> LagLeadMatrix {
    let intervals: Vec<(f64, f64)> = cuts.intervals().collect();
    let delta = grid_weights(tz_grid);
    let weights = DMatrix::from_fn(intervals.len(), tz_grid.len(), |j, q| {
        let (s, e) = intervals[j];
        if ll.contains(s, e, tz_grid[q]) {
            delta[q]
        } else {
            0.0
        }
    });
    LagLeadMatrix {
        intervals,
        tz_grid: tz_grid.to_vec(),
        ll,
        weights,
    }
}
