//! Surface quadrature rules.
//!
//! The near field is a graded polar mesh on the base chart: `M = 2^L` angles,
//! geometric radial panels with ratio `≈ 1 + 2π/M` between `R_c 2^{-L}` and the
//! outer radius, two Gauss points per panel. Shapes that leave their chart are
//! completed by far-field nodes blended with a smooth partition of unity.

use rayon::prelude::*;
use serde::Serialize;

use super::{FramedPoint, Surface, SurfacePoint};
use crate::error::{Error, Result};
use crate::quadrature::gauss::gauss_legendre_on;
use crate::quadrature::reduce::pairwise_sum;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    /// Graded polar chart only.
    PolarChart,
    /// Graded polar chart blended with far-field nodes.
    ChartWithFar,
    /// Uniform midpoint rule on a square chart.
    Box,
    /// Global rule with no distinguished grading point.
    Global,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Node {
    pub point: SurfacePoint,
    /// `H²` weight.
    pub weight: f64,
    /// Parameter-cell weight (no area element, no partition of unity).
    pub w_param: f64,
    /// Chart radius `|y'|`, or `NaN` for far nodes.
    pub rho: f64,
    pub ring: Option<u32>,
    /// Chart coordinates for chart nodes.
    pub y: [f64; 2],
}

impl Node {
    pub fn is_chart(&self) -> bool {
        !self.rho.is_nan()
    }
}

/// Sampled version of `∫_{∂E∩B_R}(|H|+1) ≤ C R^β` on dyadic radii `R ≥ R₀`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GrowthCertificate {
    pub beta: f64,
    pub c: f64,
    pub r0: f64,
    pub radii: Vec<f64>,
    pub masses: Vec<f64>,
}

impl GrowthCertificate {
    pub fn sample(shape: &dyn super::Shape, r0: f64, doublings: u32) -> Self {
        let beta = shape.growth_beta();
        let radii: Vec<f64> = (0..=doublings).map(|k| r0 * 2f64.powi(k as i32)).collect();
        let masses: Vec<f64> = radii.iter().map(|&r| shape.growth_mass(r)).collect();
        let c = radii
            .iter()
            .zip(&masses)
            .map(|(r, m)| m / r.powf(beta))
            .fold(0.0, f64::max);
        GrowthCertificate {
            beta,
            c,
            r0,
            radii,
            masses,
        }
    }

    /// Whether every sampled mass respects `C R^β`.
    pub fn holds(&self) -> bool {
        self.radii
            .iter()
            .zip(&self.masses)
            .all(|(r, m)| *m <= self.c * r.powf(self.beta) * (1.0 + 1e-12))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RuleSpec {
    pub level: u32,
    /// Exclusion radius around the base (in chart radius).
    pub delta: f64,
    /// Truncation radius.
    pub truncation: f64,
    /// Grading radius `R_c`; defaults depend on the shape.
    pub chart_radius: Option<f64>,
    /// Adds a centre node for the disk inside the innermost ring.
    pub center_node: bool,
    /// `R₀` of the growth certificate; defaults to the shape scale.
    pub r0: Option<f64>,
}

impl RuleSpec {
    pub fn new(level: u32, truncation: f64) -> Self {
        RuleSpec {
            level,
            delta: 0.0,
            truncation,
            chart_radius: None,
            center_node: true,
            r0: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct QuadratureRule {
    pub nodes: Vec<Node>,
    pub base: FramedPoint,
    pub kind: RuleKind,
    pub level: u32,
    pub delta: f64,
    pub truncation: f64,
    pub chart_radius: f64,
    /// Characteristic node spacing `R_c 2^{-L}`.
    pub spacing: f64,
    pub angles: usize,
    /// Radii of the chart rings, increasing.
    pub ring_radii: Vec<f64>,
    /// Radial panel boundaries of the chart mesh, increasing from `spacing`.
    pub panel_edges: Vec<f64>,
    /// Whether the rule covers the whole (bounded) surface.
    pub complete: bool,
    pub growth: GrowthCertificate,
    pub area: f64,
    pub area_error: f64,
    pub surface_name: String,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Deterministic `Σ w_k f(node_k)`.
    pub fn integrate<F>(&self, f: F) -> f64
    where
        F: Fn(&Node) -> f64 + Sync + Send,
    {
        let v: Vec<f64> = self.nodes.par_iter().map(|n| n.weight * f(n)).collect();
        pairwise_sum(&v)
    }

    /// Deterministic componentwise `Σ w_k f(node_k)`.
    pub fn integrate_n<const K: usize, F>(&self, f: F) -> [f64; K]
    where
        F: Fn(&Node) -> [f64; K] + Sync + Send,
    {
        crate::quadrature::reduce::sum_map_n(self.nodes.len(), |i| {
            let n = &self.nodes[i];
            let mut r = f(n);
            for v in r.iter_mut() {
                *v *= n.weight;
            }
            r
        })
    }

    /// Keeps chart nodes with `ρ ≥ delta`; far nodes are kept.
    pub fn excluding(&self, delta: f64) -> QuadratureRule {
        let mut r = self.clone();
        r.nodes.retain(|n| !n.is_chart() || (n.rho >= delta && !(delta > 0.0 && n.rho == 0.0)));
        r.delta = delta.max(self.delta);
        r
    }

    pub fn total_weight(&self) -> f64 {
        self.integrate(|_| 1.0)
    }
}

/// χ: 1 below `r1`, 0 above `r2`, smooth in between.
pub(crate) fn partition(d: f64, r1: f64, r2: f64) -> f64 {
    if d <= r1 {
        return 1.0;
    }
    if d >= r2 {
        return 0.0;
    }
    let t = (r2 - d) / (r2 - r1);
    let g = |s: f64| if s <= 0.0 { 0.0 } else { (-1.0 / s).exp() };
    g(t) / (g(t) + g(1.0 - t))
}

struct PolarMesh {
    angles: usize,
    rho0: f64,
    rings: Vec<(f64, f64)>,
    edges: Vec<f64>,
}

fn polar_mesh(level: u32, r_c: f64, outer: f64) -> PolarMesh {
    let angles = (1usize << level).max(8);
    let rho0 = r_c * 0.5f64.powi(level as i32);
    let q_target = 1.0 + 2.0 * std::f64::consts::PI / angles as f64;
    let panels = ((outer / rho0).ln() / q_target.ln()).ceil().max(1.0) as usize;
    let q = (outer / rho0).powf(1.0 / panels as f64);
    let mut rings = Vec::with_capacity(2 * panels);
    let mut edges = vec![rho0];
    let mut a = rho0;
    for p in 0..panels {
        let b = if p + 1 == panels { outer } else { a * q };
        rings.extend(gauss_legendre_on(2, a, b));
        edges.push(b);
        a = b;
    }
    PolarMesh {
        angles,
        rho0,
        rings,
        edges,
    }
}

pub fn build_quadrature(
    surface: &Surface,
    base: &FramedPoint,
    delta: f64,
    truncation: f64,
    level: u32,
) -> Result<QuadratureRule> {
    let mut spec = RuleSpec::new(level, truncation);
    spec.delta = delta;
    build_quadrature_with(surface, base, &spec)
}

pub fn build_quadrature_with(
    surface: &Surface,
    base: &FramedPoint,
    spec: &RuleSpec,
) -> Result<QuadratureRule> {
    let rule = build_level(surface, base, spec)?;
    let area_prev = if spec.level > 0 {
        let mut coarse = *spec;
        coarse.level -= 1;
        Some(build_level(surface, base, &coarse)?.total_weight())
    } else {
        None
    };
    let mut rule = rule;
    rule.area = rule.total_weight();
    rule.area_error = match area_prev {
        Some(a) => (rule.area - a).abs().max(1e-12 * rule.area.abs()),
        None => rule.area.abs(),
    };
    Ok(rule)
}

fn build_level(surface: &Surface, base: &FramedPoint, spec: &RuleSpec) -> Result<QuadratureRule> {
    let shape = surface.shape.as_ref();
    let scale = shape.scale();
    if (base.point.x - surface.base_point()).norm() > 1e-12 * scale.max(1.0) {
        return Err(Error::Geometry(
            "quadrature rules are graded about the surface base point; move the surface instead".into(),
        ));
    }
    let (delta, r) = (spec.delta, spec.truncation);
    if !(delta >= 0.0) || !(delta < r) {
        return Err(Error::Parameter(format!("need 0 ≤ δ < R, got δ={delta}, R={r}")));
    }
    let limit = shape.chart_limit();
    let needs_far = r > limit;
    let (r_c, outer, pu) = if needs_far {
        if shape.far_nodes(0, 0.0).is_none() {
            return Err(Error::Parameter(format!(
                "truncation {r} exceeds the chart of {} and no far-field rule exists",
                shape.name()
            )));
        }
        let rc = spec.chart_radius.unwrap_or(0.8 * scale).min(0.8 * scale);
        (rc, rc, Some((0.35 * scale, 0.7 * scale)))
    } else if limit.is_finite() {
        let rc = spec.chart_radius.unwrap_or(r);
        (rc, r, None)
    } else {
        let rc = spec.chart_radius.unwrap_or(r.min(scale));
        (rc, r, None)
    };
    let spacing = r_c * 0.5f64.powi(spec.level as i32);
    if r < spacing {
        return Err(Error::Parameter(format!(
            "truncation {r} is below the mesh resolution {spacing}"
        )));
    }
    if let Some((r1, r2)) = pu {
        if r_c < r2 {
            return Err(Error::Parameter("chart radius too small for the blending window".into()));
        }
        debug_assert!(r1 < r2);
    }
    let mesh = polar_mesh(spec.level, r_c, outer);
    let m = mesh.angles;
    let dth = 2.0 * std::f64::consts::PI / m as f64;
    let chi = |d: f64| match pu {
        Some((r1, r2)) => partition(d, r1, r2),
        None => 1.0,
    };

    let mut nodes = Vec::new();
    if spec.center_node && delta == 0.0 {
        let jet = shape
            .graph_jet([0.0, 0.0])
            .ok_or_else(|| Error::Geometry("missing base chart".into()))?;
        let w_param = std::f64::consts::PI * mesh.rho0 * mesh.rho0;
        nodes.push(Node {
            point: surface.motion.apply(&jet.surface_point()),
            weight: w_param * jet.area_element(),
            w_param,
            rho: 0.0,
            ring: None,
            y: [0.0, 0.0],
        });
    }
    let ring_radii: Vec<f64> = mesh.rings.iter().map(|r| r.0).collect();
    let chart_nodes: Vec<Vec<Node>> = mesh
        .rings
        .par_iter()
        .enumerate()
        .map(|(ri, &(rho, wr))| {
            let mut out = Vec::with_capacity(m);
            if rho < delta {
                return out;
            }
            for k in 0..m {
                let th = (k as f64 + 0.5) * dth;
                let y = [rho * th.cos(), rho * th.sin()];
                let Some(jet) = shape.graph_jet(y) else { continue };
                let body = jet.surface_point();
                let c = chi(body.x.norm());
                if c == 0.0 {
                    continue;
                }
                let w_param = wr * rho * dth;
                out.push(Node {
                    point: surface.motion.apply(&body),
                    weight: w_param * jet.area_element() * c,
                    w_param,
                    rho,
                    ring: Some(ri as u32),
                    y,
                });
            }
            out
        })
        .collect();
    nodes.extend(chart_nodes.into_iter().flatten());

    let mut complete = false;
    let kind = if pu.is_some() {
        let far = shape.far_nodes(spec.level, r).unwrap_or_default();
        if shape.bounded() {
            let all = shape.far_nodes(spec.level, f64::INFINITY).unwrap_or_default();
            complete = all.len() == far.len();
        }
        for (p, w) in far {
            let d = p.x.norm();
            let c = 1.0 - chi(d);
            if c == 0.0 || d < delta {
                continue;
            }
            nodes.push(Node {
                point: surface.motion.apply(&p),
                weight: w * c,
                w_param: w,
                rho: f64::NAN,
                ring: None,
                y: [f64::NAN; 2],
            });
        }
        RuleKind::ChartWithFar
    } else {
        RuleKind::PolarChart
    };

    let r0 = spec.r0.unwrap_or(scale);
    Ok(QuadratureRule {
        nodes,
        base: *base,
        kind,
        level: spec.level,
        delta,
        truncation: r,
        chart_radius: r_c,
        spacing,
        angles: m,
        ring_radii,
        panel_edges: mesh.edges,
        complete,
        growth: GrowthCertificate::sample(shape, r0, 30),
        area: 0.0,
        area_error: 0.0,
        surface_name: shape.name(),
    })
}

/// Uniform `n × n` midpoint rule on the chart square `[−a, a]²`.
pub fn box_chart_rule(surface: &Surface, half_width: f64, n: usize) -> Result<QuadratureRule> {
    let shape = surface.shape.as_ref();
    if half_width * std::f64::consts::SQRT_2 > shape.chart_limit() {
        return Err(Error::Parameter("box chart exceeds the chart of the shape".into()));
    }
    let h = 2.0 * half_width / n as f64;
    let mut nodes = Vec::with_capacity(n * n);
    for a in 0..n {
        for b in 0..n {
            let y = [-half_width + (a as f64 + 0.5) * h, -half_width + (b as f64 + 0.5) * h];
            let jet = shape.graph_jet(y).expect("inside chart");
            nodes.push(Node {
                point: surface.motion.apply(&jet.surface_point()),
                weight: h * h * jet.area_element(),
                w_param: h * h,
                rho: (y[0] * y[0] + y[1] * y[1]).sqrt(),
                ring: None,
                y,
            });
        }
    }
    let mut rule = QuadratureRule {
        nodes,
        base: surface.base_frame(),
        kind: RuleKind::Box,
        level: 0,
        delta: 0.0,
        truncation: half_width,
        chart_radius: half_width,
        spacing: h,
        angles: 0,
        ring_radii: Vec::new(),
        panel_edges: Vec::new(),
        complete: false,
        growth: GrowthCertificate::sample(shape, shape.scale(), 30),
        area: 0.0,
        area_error: 0.0,
        surface_name: shape.name(),
    };
    rule.area = rule.total_weight();
    Ok(rule)
}

/// Latitude–longitude Gauss rule on a whole sphere, `n_theta × 2 n_theta` nodes.
pub fn sphere_global_rule(surface: &Surface, n_theta: usize) -> Result<QuadratureRule> {
    let radius = surface.shape.scale();
    if !surface.shape.bounded() || !surface.shape.name().starts_with("sphere") {
        return Err(Error::Parameter("global latitude–longitude rule needs a sphere".into()));
    }
    let sphere = super::Sphere::new(radius);
    let nodes: Vec<Node> = sphere
        .lat_long_nodes(n_theta, 2 * n_theta)
        .into_iter()
        .map(|(p, w)| Node {
            point: surface.motion.apply(&p),
            weight: w,
            w_param: w,
            rho: f64::NAN,
            ring: None,
            y: [f64::NAN; 2],
        })
        .collect();
    let mut rule = QuadratureRule {
        nodes,
        base: surface.base_frame(),
        kind: RuleKind::Global,
        level: 0,
        delta: 0.0,
        truncation: 2.0 * radius,
        chart_radius: 0.0,
        spacing: std::f64::consts::PI * radius / n_theta as f64,
        angles: 2 * n_theta,
        ring_radii: Vec::new(),
        panel_edges: Vec::new(),
        complete: false,
        growth: GrowthCertificate::sample(surface.shape.as_ref(), radius, 30),
        area: 0.0,
        area_error: 0.0,
        surface_name: surface.shape.name(),
    };
    rule.area = rule.total_weight();
    Ok(rule)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Plane, Polynomial, RigidMotion, Sphere, V3};
    use std::sync::Arc;

    #[test]
    fn whole_sphere_area() {
        let s = Surface::new(Arc::new(Sphere::new(1.0)));
        let rule = build_quadrature(&s, &s.base_frame(), 0.0, 2.0, 6).unwrap();
        assert_eq!(rule.kind, RuleKind::ChartWithFar);
        assert!((rule.area - 4.0 * std::f64::consts::PI).abs() < 1e-4, "{}", rule.area);
        assert!(rule.nodes.iter().all(|n| n.weight > 0.0));
    }

    #[test]
    fn plane_box_area_is_exact() {
        let s = Surface::new(Arc::new(Plane));
        let rule = box_chart_rule(&s, 1.0, 37).unwrap();
        assert!((rule.area - 4.0).abs() < 1e-13);
    }

    #[test]
    fn paraboloid_disk_area() {
        let s = Surface::new(Arc::new(Polynomial::paraboloid(1.0, 1.0)));
        let rule = build_quadrature(&s, &s.base_frame(), 0.0, 1.0, 7).unwrap();
        let exact = 2.0 * std::f64::consts::PI / 3.0 * (2.0 * 2f64.sqrt() - 1.0);
        assert!((rule.area - exact).abs() < 1e-5, "{} vs {exact}", rule.area);
    }

    #[test]
    fn refinement_quadruples_nodes_and_is_consistent() {
        let s = Surface::new(Arc::new(Polynomial::paraboloid(1.0, 1.0)));
        let b = s.base_frame();
        let mut prev: Option<QuadratureRule> = None;
        for level in 3..=8 {
            let rule = build_quadrature(&s, &b, 0.0, 1.0, level).unwrap();
            if let Some(p) = prev {
                assert!(rule.len() >= 4 * p.len() - 4, "level {level}: {} vs {}", rule.len(), p.len());
                assert!((rule.area - p.area).abs() <= p.area_error, "level {level}");
            }
            prev = Some(rule);
        }
    }

    #[test]
    fn exclusion_is_mirror_symmetric() {
        let s = Surface::new(Arc::new(Polynomial::paraboloid(1.0, 2.0)));
        let rule = build_quadrature(&s, &s.base_frame(), 0.01, 0.5, 6).unwrap();
        assert!(rule.nodes.iter().all(|n| n.rho >= 0.01));
        // each near node has its antipode with equal parameter weight
        let near: Vec<&Node> = rule.nodes.iter().filter(|n| n.rho < 0.05).collect();
        for n in &near {
            let mirror = near.iter().find(|m| {
                (m.y[0] + n.y[0]).abs() < 1e-14 && (m.y[1] + n.y[1]).abs() < 1e-14
            });
            let m = mirror.expect("mirror node retained");
            assert_eq!(m.w_param, n.w_param);
            assert!((m.weight - n.weight).abs() < 1e-12 * n.weight);
        }
    }

    #[test]
    fn growth_certificate_holds() {
        for shape in [
            crate::geometry::parse_surface("sphere").unwrap(),
            crate::geometry::parse_surface("catenoid").unwrap(),
            crate::geometry::parse_surface("paraboloid").unwrap(),
        ] {
            let g = GrowthCertificate::sample(shape.as_ref(), 1.0, 20);
            assert!(g.holds());
            assert!(g.c.is_finite() && g.c > 0.0);
        }
    }

    #[test]
    fn rule_must_be_centred_at_base() {
        let s = Surface::new(Arc::new(Sphere::new(1.0)));
        let mut f = s.base_frame();
        f.point.x = V3::new(0.1, 0.0, 0.0);
        assert!(build_quadrature(&s, &f, 0.0, 0.5, 4).is_err());
        let mut spec = RuleSpec::new(4, 1e-3);
        spec.chart_radius = Some(0.5);
        assert!(build_quadrature_with(&s, &s.base_frame(), &spec).is_err());
        let moved = s.moved(&RigidMotion::from_axis_angle(V3::x(), 0.4, V3::new(1.0, 2.0, 3.0)));
        assert!(build_quadrature(&moved, &moved.base_frame(), 0.0, 0.5, 4).is_ok());
    }
}
