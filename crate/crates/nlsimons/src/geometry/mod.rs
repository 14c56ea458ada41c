//! Hypersurfaces of `R³`, adapted frames, tangential derivatives and surface
//! quadrature rules.
//!
//! Every shape lives in body coordinates with its base point at the origin and
//! exterior normal `e3` there; a [`RigidMotion`] places it in ambient space.

mod rule;
mod shapes;

pub use rule::{
    box_chart_rule, build_quadrature, build_quadrature_with, sphere_global_rule, GrowthCertificate,
    Node, QuadratureRule, RuleKind, RuleSpec,
};
pub use shapes::{
    parse_surface, Catenoid, Cylinder, GraphJet, Helicoid, ParamJet, ParamSurface, Plane, Polynomial,
    Shape, Sphere,
};

use std::sync::Arc;

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use serde::Serialize;

use crate::error::{Error, Result};

pub type V3 = Vector3<f64>;
pub type M3 = Matrix3<f64>;

/// First- and second-order data of the surface at one point: position, exterior
/// normal, the ambient shape matrix `S_ij = δ_j ν_i` and `H = tr S`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfacePoint {
    pub x: V3,
    pub nu: V3,
    pub s: M3,
    pub h: f64,
}

impl SurfacePoint {
    pub fn new(x: V3, nu: V3, s: M3) -> Self {
        SurfacePoint { x, nu, s, h: s.trace() }
    }
}

/// Orthogonal map `x ↦ Qx + t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RigidMotion {
    #[serde(serialize_with = "ser_matrix")]
    pub q: M3,
    #[serde(serialize_with = "ser_vector")]
    pub t: V3,
}

fn ser_matrix<S: serde::Serializer>(m: &M3, s: S) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<[f64; 3]> = (0..3).map(|i| [m[(i, 0)], m[(i, 1)], m[(i, 2)]]).collect();
    serde::Serialize::serialize(&rows, s)
}

fn ser_vector<S: serde::Serializer>(v: &V3, s: S) -> std::result::Result<S::Ok, S::Error> {
    serde::Serialize::serialize(&[v.x, v.y, v.z], s)
}

impl Default for RigidMotion {
    fn default() -> Self {
        RigidMotion::identity()
    }
}

impl RigidMotion {
    pub fn identity() -> Self {
        RigidMotion {
            q: M3::identity(),
            t: V3::zeros(),
        }
    }

    /// Rotation by `angle` about `axis`, followed by translation.
    pub fn from_axis_angle(axis: V3, angle: f64, t: V3) -> Self {
        let r = Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle);
        RigidMotion {
            q: *r.matrix(),
            t,
        }
    }

    pub fn apply_point(&self, x: &V3) -> V3 {
        self.q * x + self.t
    }

    pub fn apply_vector(&self, v: &V3) -> V3 {
        self.q * v
    }

    pub fn apply_matrix(&self, s: &M3) -> M3 {
        self.q * s * self.q.transpose()
    }

    pub fn inverse(&self) -> Self {
        let qt = self.q.transpose();
        RigidMotion {
            q: qt,
            t: -(qt * self.t),
        }
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &RigidMotion) -> Self {
        RigidMotion {
            q: self.q * other.q,
            t: self.q * other.t + self.t,
        }
    }

    pub fn apply(&self, p: &SurfacePoint) -> SurfacePoint {
        SurfacePoint {
            x: self.apply_point(&p.x),
            nu: self.apply_vector(&p.nu),
            s: self.apply_matrix(&p.s),
            h: p.h,
        }
    }
}

/// A shape placed in ambient space.
#[derive(Clone, Debug)]
pub struct Surface {
    pub shape: Arc<dyn Shape>,
    pub motion: RigidMotion,
}

impl Surface {
    pub fn new(shape: Arc<dyn Shape>) -> Self {
        Surface {
            shape,
            motion: RigidMotion::identity(),
        }
    }

    pub fn with_motion(shape: Arc<dyn Shape>, motion: RigidMotion) -> Self {
        Surface { shape, motion }
    }

    pub fn moved(&self, m: &RigidMotion) -> Self {
        Surface {
            shape: self.shape.clone(),
            motion: m.compose(&self.motion),
        }
    }

    pub fn name(&self) -> String {
        self.shape.name()
    }

    /// Ambient position of the base point.
    pub fn base_point(&self) -> V3 {
        self.motion.t
    }

    /// Surface data at the chart point `y'` (body chart coordinates), in ambient coordinates.
    pub fn chart_point(&self, y: [f64; 2]) -> Option<SurfacePoint> {
        self.shape
            .graph_jet(y)
            .map(|j| self.motion.apply(&j.surface_point()))
    }

    /// Closed-form data at an ambient point lying on the surface.
    pub fn point_data(&self, x: &V3) -> Result<SurfacePoint> {
        let inv = self.motion.inverse();
        let xb = inv.apply_point(x);
        self.shape
            .exact_point(&xb)
            .map(|p| self.motion.apply(&p))
            .ok_or_else(|| {
                Error::Geometry(format!(
                    "point ({:.6}, {:.6}, {:.6}) is not on the {} surface",
                    x.x,
                    x.y,
                    x.z,
                    self.shape.name()
                ))
            })
    }

    /// Adapted frame at the base point: tangents are the images of the body axes.
    pub fn base_frame(&self) -> FramedPoint {
        let p = self
            .chart_point([0.0, 0.0])
            .expect("every shape has a chart at its base point");
        let e1 = self.motion.apply_vector(&V3::x());
        let e2 = self.motion.apply_vector(&V3::y());
        FramedPoint::from_tangents(p, e1, e2)
    }
}

/// A surface point together with an orthonormal adapted frame `(e1, e2, ν)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FramedPoint {
    pub point: SurfacePoint,
    pub tangents: [V3; 2],
    /// Rows `e1, e2, ν`: maps ambient vectors to adapted components.
    pub rotation: M3,
    /// `h_ij = e_iᵀ S e_j`.
    pub h: [[f64; 2]; 2],
    pub mean_curvature: f64,
    /// `δ_k h_ij` with index order `[k][i][j]`, when requested.
    pub dh: Option<[[[f64; 2]; 2]; 2]>,
}

impl FramedPoint {
    pub fn from_tangents(point: SurfacePoint, e1: V3, e2: V3) -> Self {
        let nu = point.nu;
        let rotation = M3::from_rows(&[e1.transpose(), e2.transpose(), nu.transpose()]);
        let e = [e1, e2];
        let mut h = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                h[i][j] = e[i].dot(&(point.s * e[j]));
            }
        }
        FramedPoint {
            point,
            tangents: e,
            rotation,
            h,
            mean_curvature: point.h,
            dh: None,
        }
    }

    /// Adapted components of an ambient vector.
    pub fn adapted(&self, v: &V3) -> V3 {
        self.rotation * v
    }

    /// Unit vector of adapted index `i` (0, 1 tangential, 2 normal).
    pub fn axis(&self, i: usize) -> V3 {
        match i {
            0 => self.tangents[0],
            1 => self.tangents[1],
            _ => self.point.nu,
        }
    }

    pub fn c_squared(&self) -> f64 {
        self.point.s.norm_squared()
    }
}

/// Adapted frame at an arbitrary point of the surface.
pub fn surface_frame(surface: &Surface, x: &V3) -> Result<FramedPoint> {
    let p = surface.point_data(x)?;
    let nu = p.nu;
    // Tangent seed: the ambient axis least aligned with the normal.
    let mut seed = V3::x();
    let mut best = nu.x.abs();
    for (v, c) in [(V3::y(), nu.y.abs()), (V3::z(), nu.z.abs())] {
        if c < best {
            best = c;
            seed = v;
        }
    }
    if (x - surface.base_point()).norm() < 1e-13 {
        return Ok(surface.base_frame());
    }
    let e1 = (seed - nu * nu.dot(&seed)).normalize();
    let e2 = nu.cross(&e1);
    Ok(FramedPoint::from_tangents(p, e1, e2))
}

/// Frame at the base point with third-order data `δ_k h_ij` from fourth-order
/// central differences of the analytic chart with step `h_fd`.
pub fn base_frame_with_third_order(surface: &Surface, h_fd: f64) -> Result<FramedPoint> {
    let mut frame = surface.base_frame();
    let hij = |y: [f64; 2]| -> Result<[[f64; 2]; 2]> {
        let p = surface
            .chart_point(y)
            .ok_or_else(|| Error::Capability("chart unavailable for third-order data".into()))?;
        let mut out = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                out[i][j] = frame.tangents[i].dot(&(p.s * frame.tangents[j]));
            }
        }
        Ok(out)
    };
    let mut dh = [[[0.0; 2]; 2]; 2];
    for k in 0..2 {
        let at = |t: f64| {
            let mut y = [0.0, 0.0];
            y[k] = t;
            hij(y)
        };
        let (m2, m1, p1, p2) = (at(-2.0 * h_fd)?, at(-h_fd)?, at(h_fd)?, at(2.0 * h_fd)?);
        for i in 0..2 {
            for j in 0..2 {
                let d = (m2[i][j] - 8.0 * m1[i][j] + 8.0 * p1[i][j] - p2[i][j]) / (12.0 * h_fd);
                if !d.is_finite() {
                    return Err(Error::Numeric(format!("third-order stencil k={k} failed")));
                }
                dh[k][i][j] = d;
            }
        }
    }
    frame.dh = Some(dh);
    Ok(frame)
}

/// Closed-form ambient scalar field with optional analytic gradient.
pub trait ScalarField: Sync + Send {
    fn value(&self, x: &V3) -> f64;
    fn gradient(&self, _x: &V3) -> Option<V3> {
        None
    }
}

impl<F: Fn(&V3) -> f64 + Sync + Send> ScalarField for F {
    fn value(&self, x: &V3) -> f64 {
        self(x)
    }
}

/// Central-difference gradient with step `h`.
pub fn fd_gradient(g: &dyn ScalarField, x: &V3, h: f64) -> Result<V3> {
    let mut out = V3::zeros();
    for i in 0..3 {
        let mut e = V3::zeros();
        e[i] = h;
        let (a, b) = (g.value(&(x + e)), g.value(&(x - e)));
        if !a.is_finite() || !b.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite field value in central stencil along axis {i} with step {h}"
            )));
        }
        out[i] = (a - b) / (2.0 * h);
    }
    Ok(out)
}

/// `δ_i g = ∂_i g − ν_i (ν·∇g)` at a surface point, `i` a 0-based ambient index.
pub fn tangential_derivative(
    point: &SurfacePoint,
    g: &dyn ScalarField,
    i: usize,
    h_fd: f64,
) -> Result<f64> {
    if i > 2 {
        return Err(Error::Parameter(format!("direction index {i} out of range")));
    }
    let grad = match g.gradient(&point.x) {
        Some(v) => v,
        None => fd_gradient(g, &point.x, h_fd)?,
    };
    Ok(grad[i] - point.nu[i] * point.nu.dot(&grad))
}

/// Tangential gradient `∇g − ν(ν·∇g)`.
pub fn tangential_gradient(point: &SurfacePoint, grad: &V3) -> V3 {
    grad - point.nu * point.nu.dot(grad)
}
