//! The classical Simons identity `Δc² + 2c⁴ = 2Σ|δ_k h_ij|²` on minimal
//! surfaces, from parametrization jets and nested finite differences.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{ParamJet, ParamSurface, Shape, Surface, M3};

/// Tolerance on `|H_E(x)|` for the minimality hypothesis.
pub const MINIMALITY_TOL: f64 = 1e-10;

/// Graph chart of a shape seen as a parametrization.
#[derive(Clone, Debug)]
pub struct GraphParam {
    pub shape: Arc<dyn Shape>,
}

impl GraphParam {
    pub fn new(shape: Arc<dyn Shape>) -> Self {
        GraphParam { shape }
    }
}

impl ParamSurface for GraphParam {
    /// Panics outside the chart; callers stay within a few FD steps of the base.
    fn jet(&self, a: f64, b: f64) -> ParamJet {
        self.shape
            .graph_jet([a, b])
            .expect("graph parametrization evaluated outside its chart")
            .to_param()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ClassicalResidual {
    pub at: [f64; 2],
    pub mean_curvature: f64,
    pub c_squared: f64,
    /// `Δ_{∂E} c²`.
    pub laplacian_c2: f64,
    /// `2c⁴`.
    pub quartic: f64,
    /// `2Σ_{i,j,k}(δ_k h_ij)²`.
    pub gradient_sq: f64,
    pub residual: f64,
    pub fd_step: f64,
}

const STENCIL: [(f64, f64); 4] = [(-2.0, 1.0), (-1.0, -8.0), (1.0, 8.0), (2.0, -1.0)];

fn d1<T, F>(f: F, h: f64) -> T
where
    F: Fn(f64) -> T,
    T: std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T>,
{
    let mut it = STENCIL.iter().map(|&(t, w)| f(t * h) * (w / (12.0 * h)));
    let first = it.next().unwrap();
    it.fold(first, |a, b| a + b)
}

fn metric(j: &ParamJet) -> ([[f64; 2]; 2], f64) {
    let g = [[j.xa.dot(&j.xa), j.xa.dot(&j.xb)], [j.xa.dot(&j.xb), j.xb.dot(&j.xb)]];
    let det = g[0][0] * g[1][1] - g[0][1] * g[0][1];
    (g, det)
}

/// Residual at parameter point `at` with FD step `h`.
pub fn classical_simons_residual_param(p: &dyn ParamSurface, at: [f64; 2], h: f64) -> Result<ClassicalResidual> {
    if !(h > 0.0) {
        return Err(Error::Parameter("FD step must be positive".into()));
    }
    let [a0, b0] = at;
    let jet0 = p.jet(a0, b0);
    let pt = jet0.surface_point();
    if pt.h.abs() > MINIMALITY_TOL {
        return Err(Error::Hypothesis(format!(
            "the classical identity needs H_E = 0, got |H_E(x)| = {:.3e}",
            pt.h.abs()
        )));
    }
    let c2 = |a: f64, b: f64| p.jet(a, b).surface_point().s.norm_squared();

    // (1/√g) ∂_a(√g g^{ab} ∂_b c²)
    let flux = |a: f64, b: f64| -> [f64; 2] {
        let (g, det) = metric(&p.jet(a, b));
        let da = d1(|t| c2(a + t, b), h);
        let db = d1(|t| c2(a, b + t), h);
        let s = det.sqrt();
        [
            s * (g[1][1] * da - g[0][1] * db) / det,
            s * (-g[0][1] * da + g[0][0] * db) / det,
        ]
    };
    let div = d1(|t| flux(a0 + t, b0)[0], h) + d1(|t| flux(a0, b0 + t)[1], h);
    let laplacian_c2 = div / metric(&jet0).1.sqrt();

    let ds_a: M3 = d1(|t| p.jet(a0 + t, b0).surface_point().s, h);
    let ds_b: M3 = d1(|t| p.jet(a0, b0 + t).surface_point().s, h);
    let (g, det) = metric(&jet0);
    let t1 = jet0.xa.normalize();
    let t2 = pt.nu.cross(&t1);
    let tangents = [t1, t2];
    let mut grad = 0.0;
    for tk in tangents {
        // tk = α xa + β xb
        let (pa, pb) = (jet0.xa.dot(&tk), jet0.xb.dot(&tk));
        let alpha = (g[1][1] * pa - g[0][1] * pb) / det;
        let beta = (-g[0][1] * pa + g[0][0] * pb) / det;
        let dk = ds_a * alpha + ds_b * beta;
        for ti in &tangents {
            for tj in &tangents {
                let v: f64 = ti.dot(&(dk * tj));
                grad += v * v;
            }
        }
    }
    let c = pt.s.norm_squared();
    let quartic = 2.0 * c * c;
    let gradient_sq = 2.0 * grad;
    Ok(ClassicalResidual {
        at,
        mean_curvature: pt.h,
        c_squared: c,
        laplacian_c2,
        quartic,
        gradient_sq,
        residual: laplacian_c2 + quartic - gradient_sq,
        fd_step: h,
    })
}

/// Residual at the base point of a surface, using its analytic
/// parametrization when it has one and its graph chart otherwise.
pub fn classical_simons_residual(surface: &Surface) -> Result<ClassicalResidual> {
    let h = 1e-3 * surface.shape.scale();
    if let Some(p) = surface.shape.param() {
        return classical_simons_residual_param(p, [0.0, 0.0], h);
    }
    let g = GraphParam::new(surface.shape.clone());
    if surface.shape.chart_limit() < 5.0 * h {
        return Err(Error::Capability("chart too small for the classical stencil".into()));
    }
    classical_simons_residual_param(&g, [0.0, 0.0], h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{parse_surface, Catenoid, Helicoid};

    #[test]
    fn plane_is_zero() {
        let s = Surface::new(parse_surface("plane").unwrap());
        let r = classical_simons_residual(&s).unwrap();
        assert_eq!(r.residual, 0.0);
    }

    #[test]
    fn catenoid_neck() {
        let s = Surface::new(parse_surface("catenoid").unwrap());
        let r = classical_simons_residual(&s).unwrap();
        // c² = 2/cosh⁴v at v = 0.
        assert!((r.c_squared - 2.0).abs() < 1e-12);
        assert!(r.residual.abs() < 1e-6, "{r:?}");
    }

    #[test]
    fn catenoid_laplacian_matches_closed_form() {
        // Unit neck: c² = 2 cosh⁻⁴v, Δ = (∂_u² + ∂_v²)/cosh²v and
        // ∂_v² cosh⁻⁴v = 20 cosh⁻⁶v sinh²v − 4 cosh⁻⁴v.
        let c = Catenoid::new(1.0);
        for v in [0.0, 0.3, -0.7] {
            let r = classical_simons_residual_param(&c, [0.4, v], 1e-3).unwrap();
            let (ch, sh) = (f64::cosh(v), f64::sinh(v));
            let d2 = 2.0 * (20.0 * sh * sh / ch.powi(6) - 4.0 / ch.powi(4));
            let lap = d2 / (ch * ch);
            assert!((r.laplacian_c2 - lap).abs() < 1e-6, "v={v}: {} vs {lap}", r.laplacian_c2);
            assert!(r.residual.abs() < 1e-6);
        }
    }

    #[test]
    fn helicoid_ruling_point() {
        let h = Helicoid { pitch: 1.0 };
        for s in [0.0, 0.5, 1.3] {
            let r = classical_simons_residual_param(&h, [s, 0.2], 1e-3).unwrap();
            assert!((r.c_squared - 2.0 / (1.0 + s * s).powi(2)).abs() < 1e-12);
            assert!(r.residual.abs() < 1e-6, "s={s}: {r:?}");
        }
    }

    #[test]
    fn non_minimal_is_a_hypothesis_error() {
        let s = Surface::new(parse_surface("sphere").unwrap());
        assert!(matches!(classical_simons_residual(&s), Err(Error::Hypothesis(_))));
    }
}
