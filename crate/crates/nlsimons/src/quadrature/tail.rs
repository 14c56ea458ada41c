//! Dyadic-shell bounds for the part of a surface integral outside `B_r`.
//!
//! With `∫_{∂E∩B_R}(|H|+1) ≤ C R^β` and `|K|` radially nonincreasing, the shell
//! `2^k r ≤ |y| < 2^{k+1} r` contributes at most `C (2^{k+1} r)^β |K|(2^k r)`.

use crate::error::{Error, Result};
use crate::geometry::{GrowthCertificate, QuadratureRule};
use crate::kernels::Kernel;

const MAX_SHELLS: usize = 2000;

/// Bound for `∫_{∂E∖B_r}(|H|+1)|K(y−x)|`.
pub fn tail_bound(rule: &QuadratureRule, kernel: &Kernel, r: f64) -> Result<f64> {
    tail_bound_scaled(&rule.growth, kernel, r, 1.0)
}

/// [`tail_bound`] multiplied by `factor`, for integrands dominated by
/// `factor·(|H|+1)|K|` outside `B_r`.
pub fn tail_bound_scaled(g: &GrowthCertificate, kernel: &Kernel, r: f64, factor: f64) -> Result<f64> {
    if !(r > 0.0) || !(factor >= 0.0) {
        return Err(Error::Parameter(format!("tail radius {r} and factor {factor} must be positive")));
    }
    if let Some(support) = kernel.support_radius() {
        if support <= r {
            return Ok(0.0);
        }
    }
    if r < g.r0 * (1.0 - 1e-12) {
        return Err(Error::Parameter(format!(
            "tail radius {r} is below the growth radius R₀ = {}",
            g.r0
        )));
    }
    let b = kernel.decay_order();
    if b <= g.beta {
        return Err(Error::DivergentTail { decay: b, growth: g.beta });
    }
    if let Some(a) = kernel.envelope_amplitude() {
        return power_envelope_tail(g, factor * a, b, r);
    }
    // Integrable families without a power envelope: sum shells until the
    // remainder is negligible against the running total.
    let mut total = 0.0;
    for k in 0..MAX_SHELLS {
        let rk = r * 2f64.powi(k as i32);
        let term = g.c * (2.0 * rk).powf(g.beta) * kernel.value(rk).abs();
        total += term;
        if term == 0.0 || (k > 4 && term < 1e-17 * total) {
            return Ok(factor * total);
        }
    }
    Err(Error::Numeric("tail shell sum did not settle".into()))
}

/// Bound for `∫_{∂E∖B_r}(|H|+1) A|y|^{-b}` given the growth certificate.
pub fn power_envelope_tail(g: &GrowthCertificate, amplitude: f64, decay: f64, r: f64) -> Result<f64> {
    if decay <= g.beta {
        return Err(Error::DivergentTail { decay, growth: g.beta });
    }
    if r < g.r0 * (1.0 - 1e-12) {
        return Err(Error::Parameter(format!(
            "tail radius {r} is below the growth radius R₀ = {}",
            g.r0
        )));
    }
    let q = 2f64.powf(g.beta - decay);
    Ok(amplitude.abs() * g.c * 2f64.powf(g.beta) * r.powf(g.beta - decay) / (1.0 - q))
}

/// Direct partial sum over `shells` dyadic shells, used to check the closed form.
pub fn shell_sum(g: &GrowthCertificate, kernel: &Kernel, r: f64, shells: usize) -> f64 {
    (0..shells)
        .map(|k| {
            let rk = r * 2f64.powi(k as i32);
            g.c * (2.0 * rk).powf(g.beta) * kernel.value(rk).abs()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_quadrature, Plane, Shape, Sphere, Surface};
    use std::sync::Arc;

    #[test]
    fn compact_support_inside_ball_gives_zero() {
        let s = Surface::new(Arc::new(Plane));
        let rule = build_quadrature(&s, &s.base_frame(), 0.0, 1.0, 3).unwrap();
        let k = Kernel::mollifier(3, 0.5).unwrap();
        assert_eq!(tail_bound(&rule, &k, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn closed_form_matches_fifty_shells() {
        let g = GrowthCertificate::sample(&Sphere::new(1.0), 1.0, 10);
        assert_eq!(g.beta, 2.0);
        for eps in [0.1, 0.5, 0.9] {
            let k = Kernel::simons_limit(3, eps).unwrap();
            for r in [1.0, 2.0, 4.0, 8.0] {
                let closed = tail_bound_scaled(&g, &k, r, 1.0).unwrap();
                let b = 4.0 - eps;
                let expect = eps * g.c * 4.0 * r.powf(2.0 - b) / (1.0 - 2f64.powf(2.0 - b));
                assert!((closed - expect).abs() < 1e-13 * expect);
                let direct = shell_sum(&g, &k, r, 50);
                let rest = expect * 2f64.powf(50.0 * (2.0 - b));
                assert!((closed - direct - rest).abs() < 1e-12 * closed, "eps {eps} r {r}");
            }
        }
    }

    #[test]
    fn doubling_radius_divides_bound() {
        let g = GrowthCertificate::sample(&Sphere::new(1.0), 1.0, 10);
        let k = Kernel::fractional(3, 0.4, 1.0).unwrap();
        let b1 = tail_bound_scaled(&g, &k, 2.0, 1.0).unwrap();
        let b2 = tail_bound_scaled(&g, &k, 4.0, 1.0).unwrap();
        assert!(b1 / b2 >= 2f64.powf(3.4 - 2.0) * (1.0 - 1e-12));
    }

    #[test]
    fn divergent_tail_is_rejected() {
        let g = GrowthCertificate {
            beta: 4.0,
            c: 1.0,
            r0: 1.0,
            radii: vec![],
            masses: vec![],
        };
        let k = Kernel::simons_limit(3, 0.1).unwrap();
        assert!(matches!(tail_bound_scaled(&g, &k, 1.0, 1.0), Err(Error::DivergentTail { .. })));
        assert!(tail_bound_scaled(&g, &k, 0.5, 1.0).is_err());
    }

    #[test]
    fn plane_tail_dominates_exact_remainder() {
        // ∫_{|y|>R} ε|y|^{-b} over the plane is 2πε R^{2-b}/(b-2).
        let plane = Plane;
        let g = GrowthCertificate::sample(&plane, 1.0, 20);
        for eps in [0.1, 0.5] {
            let k = Kernel::simons_limit(3, eps).unwrap();
            let b = 4.0 - eps;
            for r in [1.0f64, 2.0, 4.0, 8.0] {
                let exact = 2.0 * std::f64::consts::PI * eps * r.powf(2.0 - b) / (b - 2.0);
                assert!(tail_bound_scaled(&g, &k, r, 1.0).unwrap() >= exact);
            }
        }
        assert!(plane.growth_mass(3.0) > 0.0);
    }

    #[test]
    fn sphere_tail_is_certified() {
        // a unit sphere has diameter 2, so the omitted part beyond R ≥ 2 is empty
        let s = Surface::new(Arc::new(Sphere::new(1.0)));
        let k = Kernel::simons_limit(3, 0.1).unwrap();
        let fine = crate::geometry::sphere_global_rule(&s, 64).unwrap();
        for r in [2.0, 4.0, 8.0] {
            let rule = build_quadrature(&s, &s.base_frame(), 0.0, r, 4).unwrap();
            let omitted = fine.integrate(|n| {
                let d = (n.point.x - s.base_point()).norm();
                if d > r {
                    (n.point.h.abs() + 1.0) * k.value(d)
                } else {
                    0.0
                }
            });
            let bound = tail_bound(&rule, &k, r).unwrap();
            assert!(omitted <= bound && bound > 0.0, "R={r}: {omitted} > {bound}");
        }
    }

    #[test]
    fn gaussian_tail_uses_shell_sum() {
        let g = GrowthCertificate::sample(&Plane, 1.0, 10);
        let k = Kernel::gaussian(3, 1.0, 0.5).unwrap();
        let b = tail_bound_scaled(&g, &k, 1.0, 1.0).unwrap();
        // exact plane remainder 2π a σ² e^{-R²/2σ²}
        let exact = 2.0 * std::f64::consts::PI * 0.25 * (-2.0f64).exp();
        assert!(b >= exact && b < 100.0 * exact);
    }
}
