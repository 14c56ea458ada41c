//! Principal-value surface sums with Richardson extrapolation in the
//! exclusion radius.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{Node, QuadratureRule};
use crate::quadrature::reduce::pairwise_sum;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PVIntegralResult {
    /// Truncated sum at the smallest exclusion radius.
    pub value: f64,
    pub delta: f64,
    #[serde(rename = "R")]
    pub truncation: f64,
    pub tail_bound: f64,
    pub extrapolated_value: f64,
    pub error_estimate: f64,
    /// Truncated sums, one per exclusion radius.
    pub iterates: Vec<(f64, f64)>,
}

/// [`pv_surface_integral_with`] with `γ = 1`.
pub fn pv_surface_integral<F>(integrand: F, rule: &QuadratureRule, deltas: &[f64]) -> Result<PVIntegralResult>
where
    F: Fn(&Node) -> f64 + Sync + Send,
{
    pv_surface_integral_with(integrand, rule, deltas, 1.0)
}

/// Sums `w_k f(x_k)` over nodes outside `B_δ(base)` for each `δ` and
/// extrapolates linearly in `δ^γ`.
pub fn pv_surface_integral_with<F>(
    integrand: F,
    rule: &QuadratureRule,
    deltas: &[f64],
    gamma: f64,
) -> Result<PVIntegralResult>
where
    F: Fn(&Node) -> f64 + Sync + Send,
{
    if deltas.is_empty() {
        return Err(Error::Parameter("empty exclusion schedule".into()));
    }
    if deltas.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::Parameter("exclusion schedule must be strictly decreasing".into()));
    }
    if deltas.iter().any(|&d| !(d >= 0.0) || d >= rule.truncation) {
        return Err(Error::Parameter(format!(
            "exclusion radii must lie in [0, R) with R = {}",
            rule.truncation
        )));
    }
    if !(gamma > 0.0) {
        return Err(Error::Parameter("Richardson exponent must be positive".into()));
    }
    let base = rule.base.point.x;
    let dist: Vec<f64> = rule
        .nodes
        .iter()
        .map(|n| if n.rho.is_nan() { (n.point.x - base).norm() } else { n.rho })
        .collect();
    let d_min = *deltas.last().unwrap();
    let retained = |r: f64, n: &Node| if d_min == 0.0 { true } else { r >= d_min && n.rho != 0.0 };
    let contrib = evaluate(&integrand, rule, &dist, &retained)?;

    let mut iterates = Vec::with_capacity(deltas.len());
    let mut magnitude: f64 = 0.0;
    for &d in deltas {
        let kept: Vec<f64> = contrib
            .iter()
            .zip(&dist)
            .zip(&rule.nodes)
            .map(|((c, r), n)| {
                let keep = if d == 0.0 { true } else { *r >= d && !(n.rho == 0.0) };
                if keep {
                    *c
                } else {
                    0.0
                }
            })
            .collect();
        magnitude = magnitude.max(pairwise_sum(&kept.iter().map(|v| v.abs()).collect::<Vec<_>>()));
        iterates.push((d, pairwise_sum(&kept)));
    }
    let floor = 1e-14 * magnitude;
    let (delta, value) = *iterates.last().unwrap();
    let extrapolate = |(d1, v1): (f64, f64), (d2, v2): (f64, f64)| {
        let (a, b) = (d1.powf(gamma), d2.powf(gamma));
        (v2 * a - v1 * b) / (a - b)
    };
    let (extrapolated_value, error_estimate) = match iterates.len() {
        1 => (value, floor),
        2 => {
            let e = extrapolate(iterates[0], iterates[1]);
            (e, (e - value).abs().max(floor))
        }
        k => {
            let e1 = extrapolate(iterates[k - 3], iterates[k - 2]);
            let e2 = extrapolate(iterates[k - 2], iterates[k - 1]);
            (e2, (e2 - e1).abs().max((e2 - value).abs()).max(floor))
        }
    };
    Ok(PVIntegralResult {
        value,
        delta,
        truncation: rule.truncation,
        tail_bound: 0.0,
        extrapolated_value,
        error_estimate,
        iterates,
    })
}

fn evaluate<F, R>(integrand: &F, rule: &QuadratureRule, dist: &[f64], retained: &R) -> Result<Vec<f64>>
where
    F: Fn(&Node) -> f64 + Sync + Send,
    R: Fn(f64, &Node) -> bool + Sync,
{
    use rayon::prelude::*;
    let values: Vec<f64> = rule
        .nodes
        .par_iter()
        .zip(dist.par_iter())
        .map(|(n, &r)| if retained(r, n) { n.weight * integrand(n) } else { 0.0 })
        .collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Integrand {
            node: i,
            message: format!("non-finite value at {:?}", rule.nodes[i].point.x.as_slice()),
        });
    }
    Ok(values)
}

impl PVIntegralResult {
    pub fn with_tail_bound(mut self, tail: f64) -> Self {
        self.tail_bound = tail;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{box_chart_rule, build_quadrature, Plane, Polynomial, Surface};
    use crate::kernels::Kernel;
    use std::sync::Arc;

    fn plane_rule(level: u32) -> QuadratureRule {
        let s = Surface::new(Arc::new(Plane));
        build_quadrature(&s, &s.base_frame(), 0.0, 1.0, level).unwrap()
    }

    #[test]
    fn zero_integrand() {
        let r = pv_surface_integral(|_| 0.0, &plane_rule(4), &[0.1, 0.05]).unwrap();
        assert_eq!(r.extrapolated_value, 0.0);
        assert_eq!(r.error_estimate, 0.0);
    }

    #[test]
    fn odd_integrand_cancels() {
        let k = Kernel::simons_limit(3, 0.3).unwrap();
        let rule = plane_rule(6);
        let r = pv_surface_integral(
            |n| n.point.x.x * k.value(n.point.x.norm()),
            &rule,
            &[0.1, 0.05, 0.025],
        )
        .unwrap();
        assert!(r.extrapolated_value.abs() < 1e-10, "{}", r.extrapolated_value);
    }

    #[test]
    fn linear_in_delta_is_extrapolated() {
        // on the plane ∫_{δ<|y|<1} 1/|y| = 2π(1−δ)
        let rule = plane_rule(8);
        let r = pv_surface_integral(|n| 1.0 / n.rho.max(1e-300), &rule.excluding(1e-9), &[0.2, 0.1, 0.05])
            .unwrap();
        let two_pi = 2.0 * std::f64::consts::PI;
        for &(d, v) in &r.iterates {
            // δ cuts through a radial panel of relative width 2π/256
            assert!((v - two_pi * (1.0 - d)).abs() < two_pi * d * 0.025, "{d}: {v}");
        }
        assert!((r.extrapolated_value - two_pi).abs() < 5e-3);
    }

    #[test]
    fn non_finite_values_are_reported() {
        let s = Surface::new(Arc::new(Polynomial::paraboloid(1.0, 1.0)));
        let rule = box_chart_rule(&s, 0.5, 4).unwrap();
        let err = pv_surface_integral(|n| if n.y[0] > 0.2 { f64::NAN } else { 1.0 }, &rule, &[0.1]).unwrap_err();
        assert!(matches!(err, Error::Integrand { .. }));
    }

    #[test]
    fn schedule_is_validated() {
        let rule = plane_rule(3);
        assert!(pv_surface_integral(|_| 1.0, &rule, &[0.1, 0.2]).is_err());
        assert!(pv_surface_integral(|_| 1.0, &rule, &[]).is_err());
        assert!(pv_surface_integral(|_| 1.0, &rule, &[2.0]).is_err());
    }
}
