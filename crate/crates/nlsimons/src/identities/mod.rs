//! Assembly and checking of the identities: the nonlocal Simons formula, its
//! classical limit, the classical Simons identity and the stability algebra.

mod classical;
mod limit;
mod simons;
mod stability;

pub use classical::{classical_simons_residual, classical_simons_residual_param, ClassicalResidual, GraphParam};
pub use limit::{limit_study, ColumnSummary, LimitColumn, LimitStudy, LimitStudyOptions, LimitStudyRow};
pub(crate) use simons::fit_order;
pub use simons::{
    residual_convergence, simons_context, simons_residual, ConvergenceStudy, ResidualParameters, ResidualReport,
};
pub use stability::{
    stability_conclusion_check, stability_decomposition_check, Check, ConclusionReport, DecompositionReport,
    StabilityHypothesis,
};

use serde::Serialize;

/// One term of an identity with its error budget.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Term {
    pub value: f64,
    pub budget: f64,
}

impl Term {
    pub fn new(value: f64, budget: f64) -> Self {
        Term { value, budget }
    }
}

/// Safety factor applied to summed budgets.
pub const SAFETY: f64 = 10.0;

/// Least-squares slope of `ln y` against `ln x`; `None` with fewer than two
/// positive points.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let (mx, my) = (
        pts.iter().map(|p| p.0).sum::<f64>() / n,
        pts.iter().map(|p| p.1).sum::<f64>() / n,
    );
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let xs = [0.1, 0.05, 0.025];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(1.7)).collect();
        assert!((loglog_slope(&xs, &ys).unwrap() - 1.7).abs() < 1e-12);
        assert!(loglog_slope(&[1.0], &[1.0]).is_none());
    }
}
