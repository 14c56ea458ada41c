//! Surface catalog in body coordinates.

use std::fmt::Debug;
use std::path::Path;
use std::sync::Arc;

use super::{SurfacePoint, M3, V3};
use crate::error::{Error, Result};
use crate::quadrature::gauss::{adaptive_gk15, gauss_legendre_on};

const ON_SURFACE_TOL: f64 = 1e-9;

/// Local graph data `y3 = f(y1, y2)` over the base tangent plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GraphJet {
    pub y: [f64; 2],
    pub f: f64,
    pub grad: [f64; 2],
    pub hess: [[f64; 2]; 2],
}

impl GraphJet {
    pub fn to_param(&self) -> ParamJet {
        let [f1, f2] = self.grad;
        let h = self.hess;
        ParamJet {
            x: V3::new(self.y[0], self.y[1], self.f),
            xa: V3::new(1.0, 0.0, f1),
            xb: V3::new(0.0, 1.0, f2),
            xaa: V3::new(0.0, 0.0, h[0][0]),
            xab: V3::new(0.0, 0.0, h[0][1]),
            xbb: V3::new(0.0, 0.0, h[1][1]),
        }
    }

    /// Normal `(−∇f, 1)/√(1+|∇f|²)` and the shape matrix of the subgraph.
    pub fn surface_point(&self) -> SurfacePoint {
        self.to_param().surface_point()
    }

    /// Area element `√(1+|∇f|²)`.
    pub fn area_element(&self) -> f64 {
        (1.0 + self.grad[0] * self.grad[0] + self.grad[1] * self.grad[1]).sqrt()
    }
}

/// Position and derivatives up to second order of a parametrization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParamJet {
    pub x: V3,
    pub xa: V3,
    pub xb: V3,
    pub xaa: V3,
    pub xab: V3,
    pub xbb: V3,
}

impl ParamJet {
    pub fn area_element(&self) -> f64 {
        self.xa.cross(&self.xb).norm()
    }

    /// Data with normal `xa × xb / |xa × xb|` and `S = −X G⁻¹ II G⁻¹ Xᵀ`.
    pub fn surface_point(&self) -> SurfacePoint {
        let nu = self.xa.cross(&self.xb).normalize();
        let g = [
            [self.xa.dot(&self.xa), self.xa.dot(&self.xb)],
            [self.xa.dot(&self.xb), self.xb.dot(&self.xb)],
        ];
        let det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
        let gi = [[g[1][1] / det, -g[0][1] / det], [-g[1][0] / det, g[0][0] / det]];
        let ii = [
            [nu.dot(&self.xaa), nu.dot(&self.xab)],
            [nu.dot(&self.xab), nu.dot(&self.xbb)],
        ];
        // B = G⁻¹ II G⁻¹
        let mut t = [[0.0; 2]; 2];
        let mut b = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                t[i][j] = gi[i][0] * ii[0][j] + gi[i][1] * ii[1][j];
            }
        }
        for i in 0..2 {
            for j in 0..2 {
                b[i][j] = t[i][0] * gi[0][j] + t[i][1] * gi[1][j];
            }
        }
        let cols = [self.xa, self.xb];
        let mut s = M3::zeros();
        for a in 0..2 {
            for c in 0..2 {
                s -= cols[a] * cols[c].transpose() * b[a][c];
            }
        }
        let s = 0.5 * (s + s.transpose());
        SurfacePoint::new(self.x, nu, s)
    }
}

/// A parametrized surface patch with analytic second-order jets.
pub trait ParamSurface: Send + Sync + Debug {
    fn jet(&self, a: f64, b: f64) -> ParamJet;
}

/// Growth bound `∫_{∂E ∩ B_r}(|H|+1) ≤ C r^β` data supplied by a shape.
pub trait Shape: Send + Sync + Debug {
    fn name(&self) -> String;
    /// Curvature length scale.
    fn scale(&self) -> f64 {
        1.0
    }
    /// Local graph jet; `None` outside the chart.
    fn graph_jet(&self, y: [f64; 2]) -> Option<GraphJet>;
    /// Parameter radius of chart validity (infinite for global graphs).
    fn chart_limit(&self) -> f64;
    /// Closed-form data at a body-coordinate point on the surface.
    fn exact_point(&self, x: &V3) -> Option<SurfacePoint>;
    /// Far-field nodes `(point, area weight)` covering the surface within ambient
    /// distance `truncation` of the base. Only shapes that leave their chart carry them.
    fn far_nodes(&self, _level: u32, _truncation: f64) -> Option<Vec<(SurfacePoint, f64)>> {
        None
    }
    fn growth_beta(&self) -> f64 {
        2.0
    }
    /// Upper bound on `∫_{∂E ∩ B_r(base)}(|H|+1) dH²`.
    fn growth_mass(&self, r: f64) -> f64;
    /// Whether the mean curvature vanishes identically.
    fn minimal(&self) -> bool {
        false
    }
    /// Analytic parametrization around the base, for the classical identity.
    fn param(&self) -> Option<&dyn ParamSurface> {
        None
    }
    /// Whether `∂E` is bounded.
    fn bounded(&self) -> bool {
        false
    }
}

fn graph_exact(shape: &dyn Shape, x: &V3) -> Option<SurfacePoint> {
    let j = shape.graph_jet([x.x, x.y])?;
    if (j.f - x.z).abs() <= ON_SURFACE_TOL * shape.scale().max(1.0) {
        Some(j.surface_point())
    } else {
        None
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Plane;

impl Shape for Plane {
    fn name(&self) -> String {
        "plane".into()
    }
    fn graph_jet(&self, y: [f64; 2]) -> Option<GraphJet> {
        Some(GraphJet {
            y,
            f: 0.0,
            grad: [0.0; 2],
            hess: [[0.0; 2]; 2],
        })
    }
    fn chart_limit(&self) -> f64 {
        f64::INFINITY
    }
    fn exact_point(&self, x: &V3) -> Option<SurfacePoint> {
        graph_exact(self, x)
    }
    fn growth_mass(&self, r: f64) -> f64 {
        std::f64::consts::PI * r * r
    }
    fn minimal(&self) -> bool {
        true
    }
}

/// Sphere of radius `R` bounding a ball, centred at `(0, 0, −R)`.
#[derive(Clone, Copy, Debug)]
pub struct Sphere {
    pub radius: f64,
}

impl Sphere {
    pub fn new(radius: f64) -> Self {
        assert!(radius > 0.0);
        Sphere { radius }
    }

    fn center(&self) -> V3 {
        V3::new(0.0, 0.0, -self.radius)
    }

    fn at_direction(&self, nu: V3) -> SurfacePoint {
        let s = (M3::identity() - nu * nu.transpose()) / self.radius;
        SurfacePoint::new(self.center() + nu * self.radius, nu, s)
    }

    /// Latitude–longitude nodes about the base direction.
    pub fn lat_long_nodes(&self, n_theta: usize, n_phi: usize) -> Vec<(SurfacePoint, f64)> {
        let r = self.radius;
        let mut out = Vec::with_capacity(n_theta * n_phi);
        let dphi = 2.0 * std::f64::consts::PI / n_phi as f64;
        for (theta, wt) in gauss_legendre_on(n_theta, 0.0, std::f64::consts::PI) {
            for k in 0..n_phi {
                let phi = (k as f64 + 0.5) * dphi;
                let nu = V3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos());
                out.push((self.at_direction(nu), r * r * theta.sin() * wt * dphi));
            }
        }
        out
    }
}

impl Shape for Sphere {
    fn name(&self) -> String {
        format!("sphere:{}", self.radius)
    }
    fn scale(&self) -> f64 {
        self.radius
    }
    fn graph_jet(&self, y: [f64; 2]) -> Option<GraphJet> {
        let r = self.radius;
        let rho2 = y[0] * y[0] + y[1] * y[1];
        if rho2 >= (self.chart_limit() * 1.0001).powi(2) {
            return None;
        }
        let w = (r * r - rho2).sqrt();
        let w3 = w * w * w;
        let mut hess = [[0.0; 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                hess[a][b] = -y[a] * y[b] / w3 - if a == b { 1.0 / w } else { 0.0 };
            }
        }
        Some(GraphJet {
            y,
            f: w - r,
            grad: [-y[0] / w, -y[1] / w],
            hess,
        })
    }
    fn chart_limit(&self) -> f64 {
        0.9 * self.radius
    }
    fn exact_point(&self, x: &V3) -> Option<SurfacePoint> {
        let d = x - self.center();
        if (d.norm() - self.radius).abs() > ON_SURFACE_TOL * self.radius {
            return None;
        }
        Some(self.at_direction(d.normalize()))
    }
    fn far_nodes(&self, level: u32, truncation: f64) -> Option<Vec<(SurfacePoint, f64)>> {
        let n_theta = (2usize << level).max(32);
        let nodes = self.lat_long_nodes(n_theta, 2 * n_theta);
        Some(nodes.into_iter().filter(|(p, _)| p.x.norm() <= truncation).collect())
    }
    fn growth_mass(&self, r: f64) -> f64 {
        let area = (std::f64::consts::PI * r * r).min(4.0 * std::f64::consts::PI * self.radius.powi(2));
        (2.0 / self.radius + 1.0) * area
    }
    fn bounded(&self) -> bool {
        true
    }
}

/// Round cylinder of radius `R` with axis parallel to `e2` through `(0, ·, −R)`.
#[derive(Clone, Copy, Debug)]
pub struct Cylinder {
    pub radius: f64,
}

impl Cylinder {
    pub fn new(radius: f64) -> Self {
        assert!(radius > 0.0);
        Cylinder { radius }
    }

    fn at_angle(&self, theta: f64, z: f64) -> SurfacePoint {
        let r = self.radius;
        let nu = V3::new(theta.sin(), 0.0, theta.cos());
        let s = (M3::identity() - nu * nu.transpose() - V3::y() * V3::y().transpose()) / r;
        SurfacePoint::new(V3::new(r * theta.sin(), z, r * theta.cos() - r), nu, s)
    }
}

impl Shape for Cylinder {
    fn name(&self) -> String {
        format!("cylinder:{}", self.radius)
    }
    fn scale(&self) -> f64 {
        self.radius
    }
    fn graph_jet(&self, y: [f64; 2]) -> Option<GraphJet> {
        let r = self.radius;
        if y[0] * y[0] + y[1] * y[1] >= (self.chart_limit() * 1.0001).powi(2) {
            return None;
        }
        let w = (r * r - y[0] * y[0]).sqrt();
        Some(GraphJet {
            y,
            f: w - r,
            grad: [-y[0] / w, 0.0],
            hess: [[-r * r / (w * w * w), 0.0], [0.0, 0.0]],
        })
    }
    fn chart_limit(&self) -> f64 {
        0.9 * self.radius
    }
    fn exact_point(&self, x: &V3) -> Option<SurfacePoint> {
        let (a, c) = (x.x, x.z + self.radius);
        let rr = (a * a + c * c).sqrt();
        if (rr - self.radius).abs() > ON_SURFACE_TOL * self.radius {
            return None;
        }
        Some(self.at_angle(a.atan2(c), x.y))
    }
    fn far_nodes(&self, level: u32, truncation: f64) -> Option<Vec<(SurfacePoint, f64)>> {
        let r = self.radius;
        let m = (1usize << level).max(16);
        let dth = 2.0 * std::f64::consts::PI / m as f64;
        let half = truncation.min(1e6 * r);
        let mut out = Vec::new();
        for (z, wz) in graded_axis(half, 2.0 * r, 0.1 * r, 0.5 * r) {
            for k in 0..m {
                let th = (k as f64 + 0.5) * dth;
                let p = self.at_angle(th, z);
                if p.x.norm() <= truncation {
                    out.push((p, r * dth * wz));
                }
            }
        }
        Some(out)
    }
    fn growth_mass(&self, r: f64) -> f64 {
        (1.0 / self.radius + 1.0) * 4.0 * std::f64::consts::PI * self.radius * r
    }
}

/// Symmetric GL8 panels on `[−half, half]`: width `fine` for `|z| ≤ inner`,
/// width `coarse` beyond.
fn graded_axis(half: f64, inner: f64, fine: f64, coarse: f64) -> Vec<(f64, f64)> {
    let mut edges = vec![0.0];
    let mut z = 0.0;
    while z < half {
        let step = if z < inner { fine } else { coarse.max(0.25 * z) };
        z = (z + step).min(half);
        edges.push(z);
    }
    let mut out = Vec::new();
    for w in edges.windows(2) {
        for (p, wt) in gauss_legendre_on(8, w[0], w[1]) {
            out.push((p, wt));
            out.push((-p, wt));
        }
    }
    out
}

/// Catenoid with neck radius `a`, axis parallel to `e2` through `(0, ·, −a)`,
/// parametrized by `(a cosh v sin u, a v, a cosh v cos u − a)`.
#[derive(Clone, Copy, Debug)]
pub struct Catenoid {
    pub neck: f64,
}

impl Catenoid {
    pub fn new(neck: f64) -> Self {
        assert!(neck > 0.0);
        Catenoid { neck }
    }

    /// Largest `|v|` reached by the far nodes for a given truncation.
    pub fn v_extent(&self, truncation: f64) -> f64 {
        (1.0 + truncation / self.neck).acosh().min(40.0)
    }
}

impl ParamSurface for Catenoid {
    fn jet(&self, u: f64, v: f64) -> ParamJet {
        let a = self.neck;
        let (ch, sh) = (v.cosh(), v.sinh());
        let (su, cu) = u.sin_cos();
        ParamJet {
            x: V3::new(a * ch * su, a * v, a * ch * cu - a),
            xa: V3::new(a * ch * cu, 0.0, -a * ch * su),
            xb: V3::new(a * sh * su, a, a * sh * cu),
            xaa: V3::new(-a * ch * su, 0.0, -a * ch * cu),
            xab: V3::new(a * sh * cu, 0.0, -a * sh * su),
            xbb: V3::new(a * ch * su, 0.0, a * ch * cu),
        }
    }
}

impl Shape for Catenoid {
    fn name(&self) -> String {
        format!("catenoid:{}", self.neck)
    }
    fn scale(&self) -> f64 {
        self.neck
    }
    fn graph_jet(&self, y: [f64; 2]) -> Option<GraphJet> {
        let a = self.neck;
        if y[0] * y[0] + y[1] * y[1] >= (self.chart_limit() * 1.0001).powi(2) {
            return None;
        }
        let t = y[1] / a;
        let (c, c1, c2) = (a * t.cosh(), t.sinh(), t.cosh() / a);
        let w = (c * c - y[0] * y[0]).sqrt();
        let w3 = w * w * w;
        let f2 = c * c1 / w;
        Some(GraphJet {
            y,
            f: w - a,
            grad: [-y[0] / w, f2],
            hess: [
                [-c * c / w3, y[0] * c * c1 / w3],
                [y[0] * c * c1 / w3, (c1 * c1 + c * c2) / w - (c * c1).powi(2) / w3],
            ],
        })
    }
    fn chart_limit(&self) -> f64 {
        0.9 * self.neck
    }
    fn exact_point(&self, x: &V3) -> Option<SurfacePoint> {
        let a = self.neck;
        let v = x.y / a;
        let (p, q) = (x.x, x.z + a);
        if ((p * p + q * q).sqrt() - a * v.cosh()).abs() > ON_SURFACE_TOL * a * v.cosh() {
            return None;
        }
        Some(self.jet(p.atan2(q), v).surface_point())
    }
    fn far_nodes(&self, level: u32, truncation: f64) -> Option<Vec<(SurfacePoint, f64)>> {
        let m = (1usize << level).max(16);
        let du = 2.0 * std::f64::consts::PI / m as f64;
        let vmax = self.v_extent(truncation);
        let mut out = Vec::new();
        for (v, wv) in graded_axis(vmax, 2.0, 0.1, 0.5) {
            for k in 0..m {
                let u = (k as f64 + 0.5) * du;
                let j = self.jet(u, v);
                if j.x.norm() <= truncation {
                    out.push((j.surface_point(), j.area_element() * du * wv));
                }
            }
        }
        Some(out)
    }
    fn growth_mass(&self, r: f64) -> f64 {
        let a = self.neck;
        let v = (1.0 + r / a).acosh();
        2.0 * std::f64::consts::PI * a * a * (v + 0.5 * (2.0 * v).sinh())
    }
    fn minimal(&self) -> bool {
        true
    }
    fn param(&self) -> Option<&dyn ParamSurface> {
        Some(self)
    }
}

/// Helicoid `(s cos t, s sin t, c t)`, used only through its parametrization.
#[derive(Clone, Copy, Debug)]
pub struct Helicoid {
    pub pitch: f64,
}

impl ParamSurface for Helicoid {
    fn jet(&self, s: f64, t: f64) -> ParamJet {
        let (st, ct) = t.sin_cos();
        ParamJet {
            x: V3::new(s * ct, s * st, self.pitch * t),
            xa: V3::new(ct, st, 0.0),
            xb: V3::new(-s * st, s * ct, self.pitch),
            xaa: V3::zeros(),
            xab: V3::new(-st, ct, 0.0),
            xbb: V3::new(-s * ct, -s * st, 0.0),
        }
    }
}

/// Polynomial graph `f(y1, y2) = Σ c y1^i y2^j` with no constant or linear part.
#[derive(Clone, Debug)]
pub struct Polynomial {
    pub terms: Vec<(u32, u32, f64)>,
    label: String,
}

fn dpow(y: f64, e: u32, d: u32) -> f64 {
    if d > e {
        return 0.0;
    }
    let mut c = 1.0;
    for k in 0..d {
        c *= f64::from(e - k);
    }
    c * y.powi((e - d) as i32)
}

impl Polynomial {
    pub fn new(terms: Vec<(u32, u32, f64)>, label: impl Into<String>) -> Result<Self> {
        for &(i, j, c) in &terms {
            if i + j <= 1 && c != 0.0 {
                return Err(Error::Geometry(format!(
                    "graph chart term y1^{i} y2^{j} would move the base point or tilt its normal"
                )));
            }
            if !c.is_finite() {
                return Err(Error::Geometry("non-finite polynomial coefficient".into()));
            }
        }
        Ok(Polynomial {
            terms,
            label: label.into(),
        })
    }

    /// `(k1 y1² + k2 y2²)/2`.
    pub fn paraboloid(k1: f64, k2: f64) -> Self {
        Polynomial::new(
            vec![(2, 0, 0.5 * k1), (0, 2, 0.5 * k2)],
            if k1 == k2 {
                format!("paraboloid:{k1}")
            } else {
                format!("anisotropic-paraboloid:{k1},{k2}")
            },
        )
        .expect("quadratic terms are admissible")
    }

    /// Parses lines `i j coeff`; `#` starts a comment.
    pub fn parse(text: &str, label: impl Into<String>) -> Result<Self> {
        let mut terms = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::Geometry(format!("polynomial line {}: expected `i j coeff`", lineno + 1));
            if parts.len() != 3 {
                return Err(bad());
            }
            let i: u32 = parts[0].parse().map_err(|_| bad())?;
            let j: u32 = parts[1].parse().map_err(|_| bad())?;
            let c: f64 = parts[2].parse().map_err(|_| bad())?;
            terms.push((i, j, c));
        }
        Polynomial::new(terms, label)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Polynomial::parse(&text, format!("polynomial:{}", path.display()))
    }

    pub fn degree(&self) -> u32 {
        self.terms
            .iter()
            .filter(|t| t.2 != 0.0)
            .map(|t| t.0 + t.1)
            .max()
            .unwrap_or(0)
    }

    fn partial(&self, y: [f64; 2], d1: u32, d2: u32) -> f64 {
        self.terms
            .iter()
            .map(|&(i, j, c)| c * dpow(y[0], i, d1) * dpow(y[1], j, d2))
            .sum()
    }
}

impl Shape for Polynomial {
    fn name(&self) -> String {
        self.label.clone()
    }
    fn graph_jet(&self, y: [f64; 2]) -> Option<GraphJet> {
        let h12 = self.partial(y, 1, 1);
        Some(GraphJet {
            y,
            f: self.partial(y, 0, 0),
            grad: [self.partial(y, 1, 0), self.partial(y, 0, 1)],
            hess: [[self.partial(y, 2, 0), h12], [h12, self.partial(y, 0, 2)]],
        })
    }
    fn chart_limit(&self) -> f64 {
        f64::INFINITY
    }
    fn exact_point(&self, x: &V3) -> Option<SurfacePoint> {
        graph_exact(self, x)
    }
    fn growth_beta(&self) -> f64 {
        (f64::from(self.degree()) + 1.0).max(2.0)
    }
    /// The graph over the disk of radius `r` contains `∂E ∩ B_r`.
    fn growth_mass(&self, r: f64) -> f64 {
        let m = 64;
        let ring = |rho: f64| -> f64 {
            let mut s = 0.0;
            for k in 0..m {
                let th = 2.0 * std::f64::consts::PI * (k as f64 + 0.5) / m as f64;
                let j = self.graph_jet([rho * th.cos(), rho * th.sin()]).unwrap();
                let p = j.surface_point();
                s += (p.h.abs() + 1.0) * j.area_element();
            }
            s * rho * 2.0 * std::f64::consts::PI / m as f64
        };
        let tol = 1e-9 * (r * r).max(r.powf(self.growth_beta()));
        adaptive_gk15(&ring, 0.0, r, tol).map(|v| v.0 * (1.0 + 1e-6)).unwrap_or(f64::INFINITY)
    }
    fn minimal(&self) -> bool {
        self.terms.iter().all(|t| t.2 == 0.0)
    }
}

/// Parses surface shorthand: `plane`, `sphere[:R]`, `cylinder[:R]`,
/// `catenoid[:a]`, `paraboloid[:k]`, `anisotropic-paraboloid[:k1,k2]`,
/// `polynomial:<path>`.
pub fn parse_surface(spec: &str) -> Result<Arc<dyn Shape>> {
    let (name, args) = match spec.split_once(':') {
        Some((n, a)) => (n.trim(), a.trim()),
        None => (spec.trim(), ""),
    };
    let nums = || -> Result<Vec<f64>> {
        if args.is_empty() {
            return Ok(Vec::new());
        }
        args.split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::config("surface", format!("bad number `{v}` in `{spec}`")))
            })
            .collect()
    };
    let positive = |v: f64| -> Result<f64> {
        if v > 0.0 && v.is_finite() {
            Ok(v)
        } else {
            Err(Error::config("surface", format!("`{spec}` needs a positive parameter")))
        }
    };
    let first = |d: f64| -> Result<f64> { positive(nums()?.first().copied().unwrap_or(d)) };
    Ok(match name {
        "plane" | "half-space" => Arc::new(Plane),
        "sphere" => Arc::new(Sphere::new(first(1.0)?)),
        "cylinder" => Arc::new(Cylinder::new(first(1.0)?)),
        "catenoid" => Arc::new(Catenoid::new(first(1.0)?)),
        "paraboloid" => {
            let k = nums()?.first().copied().unwrap_or(1.0);
            Arc::new(Polynomial::paraboloid(k, k))
        }
        "anisotropic-paraboloid" => {
            let v = nums()?;
            let (k1, k2) = match v.as_slice() {
                [] => (1.0, 2.0),
                [a, b] => (*a, *b),
                _ => return Err(Error::config("surface", "anisotropic-paraboloid takes k1,k2")),
            };
            Arc::new(Polynomial::paraboloid(k1, k2))
        }
        "polynomial" => {
            if args.is_empty() {
                return Err(Error::config("surface", "polynomial needs a coefficient file path"));
            }
            Arc::new(Polynomial::from_file(Path::new(args))?)
        }
        other => return Err(Error::config("surface", format!("unknown surface `{other}`"))),
    })
}
