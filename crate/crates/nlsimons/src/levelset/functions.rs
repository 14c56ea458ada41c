//! Closed-form test functions `u` whose level sets are planes, spheres or
//! ellipsoids, in body coordinates. Every catalog entry puts a regular level
//! through the origin with `ν_u = e3` there.

use std::fmt::Debug;

use crate::error::{Error, Result};
use crate::geometry::{M3, V3};
use crate::quadrature::gauss::gauss_legendre_on;

pub trait LevelSetFunction: Send + Sync + Debug {
    fn name(&self) -> String;
    fn value(&self, y: &V3) -> f64;
    fn gradient(&self, y: &V3) -> V3;
    fn hessian(&self, y: &V3) -> M3;
    /// `sup|u|`; infinite when `u` is unbounded.
    fn bound(&self) -> f64;
    /// Area-weighted nodes on `{u = t}` covering its part inside the ball
    /// `near = (center, radius)`; empty when the level is absent there.
    fn level_set_nodes(&self, t: f64, n: usize, near: (V3, f64)) -> Vec<(V3, f64)>;
}

/// Logistic `s(z) = 1/(1 + e^{−z})` with `s'` and `s''`, stable for large `|z|`.
fn logistic(z: f64) -> (f64, f64, f64) {
    let e = (-z.abs()).exp();
    let s = if z >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
    let d1 = e / ((1.0 + e) * (1.0 + e));
    (s, d1, d1 * (1.0 - 2.0 * s))
}

fn logit(t: f64) -> f64 {
    (t / (1.0 - t)).ln()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LevelSetKind {
    Constant { c: f64 },
    /// `u = a·y + b`.
    Linear { a: V3, b: f64 },
    /// `u = exp(−|y − c|²/(2σ²))` with `c = (0, 0, −σ)`.
    RadialGaussian { sigma: f64 },
    /// `u = s(k(R − |y − c|))` with `c = (0, 0, −R)`.
    SigmoidSphere { radius: f64, steepness: f64 },
    /// `u = s(−k y3)`.
    SigmoidPlane { steepness: f64 },
    /// `u = s(k(1 − q(y − c)))`, `q(d) = Σ d_i²/a_i²`, `c = (0, 0, −a3)`.
    AnisotropicSigmoid { axes: [f64; 3], steepness: f64 },
}

impl LevelSetKind {
    fn center(&self) -> V3 {
        match *self {
            LevelSetKind::RadialGaussian { sigma } => V3::new(0.0, 0.0, -sigma),
            LevelSetKind::SigmoidSphere { radius, .. } => V3::new(0.0, 0.0, -radius),
            LevelSetKind::AnisotropicSigmoid { axes, .. } => V3::new(0.0, 0.0, -axes[2]),
            _ => V3::zeros(),
        }
    }

    /// `(u, ∇u, ∇²u)`.
    fn jet(&self, y: &V3) -> (f64, V3, M3) {
        match *self {
            LevelSetKind::Constant { c } => (c, V3::zeros(), M3::zeros()),
            LevelSetKind::Linear { a, b } => (a.dot(y) + b, a, M3::zeros()),
            LevelSetKind::RadialGaussian { sigma } => {
                let d = y - self.center();
                let s2 = sigma * sigma;
                let u = (-d.norm_squared() / (2.0 * s2)).exp();
                let g = d * (-u / s2);
                let h = (d * d.transpose() / s2 - M3::identity()) * (u / s2);
                (u, g, h)
            }
            LevelSetKind::SigmoidSphere { radius, steepness: k } => {
                let d = y - self.center();
                let r = d.norm();
                let (s, s1, s2) = logistic(k * (radius - r));
                if r == 0.0 {
                    return (s, V3::zeros(), M3::zeros());
                }
                let e = d / r;
                // z = k(R − r): ∇z = −k e, ∇²z = −k(I − eeᵀ)/r.
                let g = e * (-k * s1);
                let p = M3::identity() - e * e.transpose();
                let h = e * e.transpose() * (k * k * s2) - p * (k * s1 / r);
                (s, g, h)
            }
            LevelSetKind::SigmoidPlane { steepness: k } => {
                let (s, s1, s2) = logistic(-k * y.z);
                let e3 = V3::z();
                (s, e3 * (-k * s1), e3 * e3.transpose() * (k * k * s2))
            }
            LevelSetKind::AnisotropicSigmoid { axes, steepness: k } => {
                let d = y - self.center();
                let inv = V3::new(axes[0].powi(-2), axes[1].powi(-2), axes[2].powi(-2));
                let q = d.dot(&d.component_mul(&inv));
                let gq = d.component_mul(&inv) * 2.0;
                let hq = M3::from_diagonal(&inv) * 2.0;
                let (s, s1, s2) = logistic(k * (1.0 - q));
                let gz = gq * (-k);
                (s, gz * s1, gz * gz.transpose() * s2 - hq * (k * s1))
            }
        }
    }
}

impl LevelSetFunction for LevelSetKind {
    fn name(&self) -> String {
        match *self {
            LevelSetKind::Constant { c } => format!("constant:{c}"),
            LevelSetKind::Linear { a, b } => format!("linear:{},{},{},{b}", a.x, a.y, a.z),
            LevelSetKind::RadialGaussian { sigma } => format!("radial-gaussian:{sigma}"),
            LevelSetKind::SigmoidSphere { radius, steepness } => format!("sigmoid-sphere:{radius},{steepness}"),
            LevelSetKind::SigmoidPlane { steepness } => format!("sigmoid-plane:{steepness}"),
            LevelSetKind::AnisotropicSigmoid { axes, steepness } => {
                format!("anisotropic-sigmoid:{},{},{},{steepness}", axes[0], axes[1], axes[2])
            }
        }
    }

    fn value(&self, y: &V3) -> f64 {
        self.jet(y).0
    }

    fn gradient(&self, y: &V3) -> V3 {
        self.jet(y).1
    }

    fn hessian(&self, y: &V3) -> M3 {
        self.jet(y).2
    }

    fn bound(&self) -> f64 {
        match *self {
            LevelSetKind::Constant { c } => c.abs(),
            LevelSetKind::Linear { a, .. } if a == V3::zeros() => 0.0,
            LevelSetKind::Linear { .. } => f64::INFINITY,
            _ => 1.0,
        }
    }

    fn level_set_nodes(&self, t: f64, n: usize, near: (V3, f64)) -> Vec<(V3, f64)> {
        match *self {
            LevelSetKind::Constant { .. } => Vec::new(),
            LevelSetKind::Linear { a, b } => {
                let an = a.norm();
                if an == 0.0 {
                    return Vec::new();
                }
                plane_disk(a / an, (t - b) / an, near, n)
            }
            LevelSetKind::SigmoidPlane { steepness } => {
                if !(t > 0.0 && t < 1.0) {
                    return Vec::new();
                }
                // s(−k y3) = t  ⇔  y3 = −logit(t)/k; unit normal −e3 gives −y3 = logit/k.
                plane_disk(-V3::z(), logit(t) / steepness, near, n)
            }
            LevelSetKind::RadialGaussian { sigma } => {
                if !(t > 0.0 && t < 1.0) {
                    return Vec::new();
                }
                ellipsoid(self.center(), [sigma * (-2.0 * t.ln()).sqrt(); 3], n)
            }
            LevelSetKind::SigmoidSphere { radius, steepness } => {
                if !(t > 0.0 && t < 1.0) {
                    return Vec::new();
                }
                let r = radius - logit(t) / steepness;
                if r <= 0.0 {
                    return Vec::new();
                }
                ellipsoid(self.center(), [r; 3], n)
            }
            LevelSetKind::AnisotropicSigmoid { axes, steepness } => {
                if !(t > 0.0 && t < 1.0) {
                    return Vec::new();
                }
                let q = 1.0 - logit(t) / steepness;
                if q <= 0.0 {
                    return Vec::new();
                }
                let s = q.sqrt();
                ellipsoid(self.center(), [axes[0] * s, axes[1] * s, axes[2] * s], n)
            }
        }
    }
}

/// Polar Gauss rule on the disk `{m·y = d} ∩ B(near)`.
fn plane_disk(m: V3, d: f64, near: (V3, f64), n: usize) -> Vec<(V3, f64)> {
    let (c, r) = near;
    let off = m.dot(&c) - d;
    if off.abs() >= r {
        return Vec::new();
    }
    let p0 = c - m * off;
    let rho = (r * r - off * off).sqrt();
    let seed = if m.x.abs() < 0.9 { V3::x() } else { V3::y() };
    let t1 = (seed - m * m.dot(&seed)).normalize();
    let t2 = m.cross(&t1);
    let na = 2 * n;
    let dth = 2.0 * std::f64::consts::PI / na as f64;
    let mut out = Vec::with_capacity(n * na);
    for (s, w) in gauss_legendre_on(n, 0.0, rho) {
        for k in 0..na {
            let th = (k as f64 + 0.5) * dth;
            out.push((p0 + t1 * (s * th.cos()) + t2 * (s * th.sin()), w * s * dth));
        }
    }
    out
}

/// Latitude–longitude Gauss rule on the ellipsoid with semi-axes `ax` about `c`.
fn ellipsoid(c: V3, ax: [f64; 3], n: usize) -> Vec<(V3, f64)> {
    let np = 2 * n;
    let dphi = 2.0 * std::f64::consts::PI / np as f64;
    let mut out = Vec::with_capacity(n * np);
    for (th, wt) in gauss_legendre_on(n, 0.0, std::f64::consts::PI) {
        let (st, ct) = th.sin_cos();
        for k in 0..np {
            let ph = (k as f64 + 0.5) * dphi;
            let (sp, cp) = ph.sin_cos();
            let x = V3::new(ax[0] * st * cp, ax[1] * st * sp, ax[2] * ct);
            let xt = V3::new(ax[0] * ct * cp, ax[1] * ct * sp, -ax[2] * st);
            let xp = V3::new(-ax[0] * st * sp, ax[1] * st * cp, 0.0);
            out.push((c + x, xt.cross(&xp).norm() * wt * dphi));
        }
    }
    out
}

/// Parses `constant[:c]`, `linear[:a1,a2,a3,b]`, `radial-gaussian[:σ]`,
/// `sigmoid-sphere[:R,k]`, `sigmoid-plane[:k]`, `anisotropic-sigmoid[:a1,a2,a3,k]`.
pub fn parse_level_set(spec: &str) -> Result<LevelSetKind> {
    let (name, args) = match spec.split_once(':') {
        Some((n, a)) => (n.trim(), a.trim()),
        None => (spec.trim(), ""),
    };
    let nums: Vec<f64> = if args.is_empty() {
        Vec::new()
    } else {
        args.split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::config("levelset.function", format!("bad number `{v}` in `{spec}`")))
            })
            .collect::<Result<_>>()?
    };
    let arity = |want: usize| -> Result<()> {
        if nums.is_empty() || nums.len() == want {
            Ok(())
        } else {
            Err(Error::config("levelset.function", format!("`{name}` takes {want} parameters")))
        }
    };
    let get = |i: usize, d: f64| nums.get(i).copied().unwrap_or(d);
    let positive = |v: f64| -> Result<f64> {
        if v > 0.0 && v.is_finite() {
            Ok(v)
        } else {
            Err(Error::config("levelset.function", format!("`{spec}` needs positive parameters")))
        }
    };
    Ok(match name {
        "constant" => {
            arity(1)?;
            LevelSetKind::Constant { c: get(0, 0.5) }
        }
        "linear" => {
            arity(4)?;
            LevelSetKind::Linear {
                a: V3::new(get(0, 0.0), get(1, 0.0), get(2, -1.0)),
                b: get(3, 0.0),
            }
        }
        "radial-gaussian" => {
            arity(1)?;
            LevelSetKind::RadialGaussian { sigma: positive(get(0, 1.0))? }
        }
        "sigmoid-sphere" => {
            arity(2)?;
            LevelSetKind::SigmoidSphere {
                radius: positive(get(0, 1.0))?,
                steepness: positive(get(1, 10.0))?,
            }
        }
        "sigmoid-plane" => {
            arity(1)?;
            LevelSetKind::SigmoidPlane { steepness: positive(get(0, 10.0))? }
        }
        "anisotropic-sigmoid" => {
            arity(4)?;
            LevelSetKind::AnisotropicSigmoid {
                axes: [positive(get(0, 1.0))?, positive(get(1, 1.5))?, positive(get(2, 0.8))?],
                steepness: positive(get(3, 10.0))?,
            }
        }
        other => return Err(Error::config("levelset.function", format!("unknown test function `{other}`"))),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(u: &LevelSetKind, y: V3) {
        let h = 1e-5;
        let (_, g, hs) = u.jet(&y);
        for i in 0..3 {
            let mut e = V3::zeros();
            e[i] = h;
            let dg = (u.value(&(y + e)) - u.value(&(y - e))) / (2.0 * h);
            assert!((dg - g[i]).abs() < 1e-6 * (1.0 + g.norm()), "{u:?} grad {i}");
            let dh = (u.gradient(&(y + e)) - u.gradient(&(y - e))) / (2.0 * h);
            for j in 0..3 {
                assert!((dh[j] - hs[(j, i)]).abs() < 1e-5 * (1.0 + hs.norm()), "{u:?} hess {i}{j}");
            }
        }
    }

    #[test]
    fn jets_match_differences() {
        let y = V3::new(0.13, -0.21, 0.07);
        for spec in [
            "linear:0.3,-0.2,-1,0.4",
            "radial-gaussian:0.9",
            "sigmoid-sphere:1,6",
            "sigmoid-plane:5",
            "anisotropic-sigmoid:1,1.5,0.8,4",
        ] {
            fd_check(&parse_level_set(spec).unwrap(), y);
        }
    }

    #[test]
    fn base_level_has_upward_normal() {
        for spec in ["linear", "radial-gaussian", "sigmoid-sphere", "sigmoid-plane", "anisotropic-sigmoid"] {
            let u = parse_level_set(spec).unwrap();
            let g = u.gradient(&V3::zeros());
            let nu = -g / g.norm();
            assert!((nu - V3::z()).norm() < 1e-14, "{spec}");
        }
    }

    #[test]
    fn level_nodes_lie_on_levels() {
        let near = (V3::new(0.1, 0.0, -0.1), 0.5);
        for spec in ["linear", "radial-gaussian", "sigmoid-sphere", "sigmoid-plane", "anisotropic-sigmoid"] {
            let u = parse_level_set(spec).unwrap();
            let t = u.value(&V3::new(0.0, 0.05, -0.1));
            let nodes = u.level_set_nodes(t, 16, near);
            assert!(!nodes.is_empty());
            for (p, _) in nodes {
                assert!((u.value(&p) - t).abs() < 1e-12, "{spec}");
            }
        }
    }

    #[test]
    fn ellipsoid_area() {
        let nodes = ellipsoid(V3::zeros(), [2.0; 3], 32);
        let a: f64 = nodes.iter().map(|p| p.1).sum();
        assert!((a - 16.0 * std::f64::consts::PI).abs() < 1e-10);
    }

    #[test]
    fn parse_errors() {
        assert!(parse_level_set("sigmoid-sphere:1").is_err());
        assert!(parse_level_set("radial-gaussian:-1").is_err());
        assert!(parse_level_set("torus").is_err());
    }
}
