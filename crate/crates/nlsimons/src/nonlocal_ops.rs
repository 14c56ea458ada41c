//! Nonlocal curvature operators on a surface: `H_{K,E}`, its gradient,
//! `c²_{K,E}`, `L_{K,E}`, the bilinear forms and the tangential divergence
//! harness.
//!
//! Every surface integral is evaluated on the context rule and, when present,
//! on the next coarser rule; the difference is reported as the quadrature
//! error. Tails beyond the truncation radius come from the growth certificate.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{
    build_quadrature_with, FramedPoint, Node, QuadratureRule, RuleKind, RuleSpec, ScalarField, Surface,
    SurfacePoint, V3,
};
use crate::kernels::{Family, Kernel, SmoothProfile};
use crate::quadrature::gauss::gauss_legendre_on;
use crate::quadrature::reduce::{pairwise_sum, sum_map, sum_map_n};
use crate::quadrature::tail::{power_envelope_tail, tail_bound_scaled};

/// Standing data `(E, K, x)` with the rules used to integrate over `∂E`.
#[derive(Clone, Debug)]
pub struct OperatorContext {
    pub surface: Surface,
    pub kernel: Kernel,
    pub rule: QuadratureRule,
    /// Rule one level coarser, for quadrature error estimates.
    pub coarse: Option<QuadratureRule>,
    pub base: FramedPoint,
}

impl OperatorContext {
    pub fn new(surface: Surface, kernel: Kernel, rule: QuadratureRule) -> Result<Self> {
        if kernel.dimension() != 3 {
            return Err(Error::Parameter(format!(
                "kernel dimension {} does not match the ambient dimension 3",
                kernel.dimension()
            )));
        }
        if (rule.base.point.x - surface.base_point()).norm() > 1e-12 * surface.shape.scale().max(1.0) {
            return Err(Error::Geometry("rule is not built around the surface base point".into()));
        }
        let base = rule.base;
        Ok(OperatorContext {
            surface,
            kernel,
            rule,
            coarse: None,
            base,
        })
    }

    /// Builds the rule at `spec.level` and one level below.
    pub fn build(surface: Surface, kernel: Kernel, spec: &RuleSpec) -> Result<Self> {
        let base = surface.base_frame();
        let mut spec = *spec;
        if kernel.is_singular() {
            spec.center_node = false;
        }
        let rule = build_quadrature_with(&surface, &base, &spec)?;
        let coarse = if spec.level > 0 {
            let mut c = spec;
            c.level -= 1;
            Some(build_quadrature_with(&surface, &base, &c)?)
        } else {
            None
        };
        let mut ctx = OperatorContext::new(surface, kernel, rule)?;
        ctx.coarse = coarse;
        Ok(ctx)
    }

    pub fn with_coarse(mut self, coarse: QuadratureRule) -> Self {
        self.coarse = Some(coarse);
        self
    }

    pub fn x(&self) -> V3 {
        self.base.point.x
    }

    /// Radius of the ambient ball around the base covered by the rule.
    pub fn coverage(&self) -> f64 {
        if self.rule.kind == RuleKind::Global || self.rule.complete {
            f64::INFINITY
        } else {
            self.rule.truncation
        }
    }

    /// Tail bound for an integrand dominated by `factor·(|H|+1)|K|` outside
    /// the covered ball.
    pub fn tail(&self, factor: f64) -> Result<f64> {
        let r = self.coverage();
        if r.is_infinite() || factor == 0.0 {
            return Ok(0.0);
        }
        tail_bound_scaled(&self.rule.growth, &self.kernel, r, factor)
    }

    fn kernel_at(&self, z: &V3) -> Option<(f64, f64)> {
        let r = z.norm();
        if r == 0.0 && self.kernel.is_singular() {
            return None;
        }
        Some((r, self.kernel.value(r)))
    }

    /// Evaluates `rule ↦ value` on the fine and coarse rules.
    fn two_level<T, F>(&self, f: F) -> Result<(T, Option<T>)>
    where
        F: Fn(&QuadratureRule) -> Result<T>,
    {
        let fine = f(&self.rule)?;
        let coarse = match &self.coarse {
            Some(c) => Some(f(c)?),
            None => None,
        };
        Ok((fine, coarse))
    }
}

/// A value with its error budget.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Evaluated<T> {
    pub value: T,
    pub quadrature_error: f64,
    pub tail_bound: f64,
    /// Summation roundoff allowance.
    pub roundoff: f64,
}

impl<T> Evaluated<T> {
    pub fn budget(&self) -> f64 {
        self.quadrature_error + self.tail_bound + self.roundoff
    }
}

/// Node sum with its absolute-value companion.
#[derive(Clone, Copy, Debug)]
struct Sum {
    value: f64,
    abs: f64,
    len: usize,
}

impl Sum {
    fn roundoff(&self) -> f64 {
        let depth = (self.len.max(2) as f64).log2().ceil();
        4.0 * f64::EPSILON * depth * self.abs
    }
}

fn node_sum<F>(rule: &QuadratureRule, f: F) -> Sum
where
    F: Fn(&Node) -> f64 + Sync + Send,
{
    let [value, abs] = sum_map_n::<2, _>(rule.nodes.len(), |i| {
        let n = &rule.nodes[i];
        let v = n.weight * f(n);
        [v, v.abs()]
    });
    Sum {
        value,
        abs,
        len: rule.nodes.len(),
    }
}

fn assemble(fine: Sum, coarse: Option<Sum>, tail: f64) -> Evaluated<f64> {
    let quadrature_error = match coarse {
        Some(c) => (fine.value - c.value).abs(),
        None => 0.0,
    };
    Evaluated {
        value: fine.value,
        quadrature_error,
        tail_bound: tail,
        roundoff: fine.roundoff(),
    }
}

/// `∇K(z) = k'(|z|) z/|z|`.
pub fn kernel_gradient_vec(kernel: &Kernel, z: &V3) -> V3 {
    let r = z.norm();
    if r == 0.0 {
        return V3::zeros();
    }
    z * (kernel.radial_derivative(r) / r)
}

/// `Ψ(r) = ∫_r^∞ t^{n-1} k(t) dt`, so that `div(z Ψ(|z|)/|z|^n) = −K(z)`.
pub fn shell_potential(kernel: &Kernel, r: f64) -> f64 {
    let n = kernel.dimension() as i32;
    match *kernel.family() {
        Family::Fractional { .. } | Family::SimonsLimit { .. } => {
            let b = kernel.decay_order();
            let a = kernel.envelope_amplitude().expect("power envelope");
            a * r.powf(n as f64 - b) / (b - n as f64)
        }
        Family::Mollifier { eps, .. } => {
            if r >= eps {
                return 0.0;
            }
            gauss_legendre_on(48, r, eps)
                .into_iter()
                .map(|(t, w)| w * t.powi(n - 1) * kernel.value(t))
                .sum()
        }
        Family::SmoothIntegrable {
            profile: SmoothProfile::Gaussian { sigma, .. },
        } => {
            let hi = r + 14.0 * sigma;
            gauss_legendre_on(96, r, hi)
                .into_iter()
                .map(|(t, w)| w * t.powi(n - 1) * kernel.value(t))
                .sum()
        }
    }
}

/// Form used to evaluate `H_{K,E}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HForm {
    /// Volume form for compactly supported kernels, flux form otherwise.
    Auto,
    /// `C_K − ∫_E K(x−y) dy`.
    Volume,
    /// `∫(χ_{E^c} − χ_E)K` on spheres about `x`.
    Difference,
    /// `∫_{∂E} Ψ(|y−x|)|y−x|^{-n} (y−x)·ν(y)`, the boundary form of the
    /// difference integral; finite for the singular families.
    Flux,
}

/// Tensor Gauss rule sizes for ball integrals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct VolumeOptions {
    pub n_rho: usize,
    pub n_phi: usize,
    pub n_t: usize,
}

impl Default for VolumeOptions {
    fn default() -> Self {
        VolumeOptions {
            n_rho: 40,
            n_phi: 80,
            n_t: 40,
        }
    }
}

impl VolumeOptions {
    fn halved(&self) -> Self {
        VolumeOptions {
            n_rho: (self.n_rho / 2).max(4),
            n_phi: (self.n_phi / 2).max(8),
            n_t: (self.n_t / 2).max(4),
        }
    }
}

pub fn nonlocal_mean_curvature(ctx: &OperatorContext, form: HForm) -> Result<Evaluated<f64>> {
    let compact = ctx.kernel.support_radius().is_some();
    match form {
        HForm::Auto if compact => nonlocal_mean_curvature_at(&ctx.surface, &ctx.kernel, &ctx.x(), &VolumeOptions::default()),
        HForm::Auto | HForm::Flux => flux_mean_curvature(ctx),
        HForm::Volume => nonlocal_mean_curvature_at(&ctx.surface, &ctx.kernel, &ctx.x(), &VolumeOptions::default()),
        HForm::Difference => difference_mean_curvature(&ctx.surface, &ctx.kernel, &VolumeOptions::default()),
    }
}

/// Volume form `C_K − ∫_{E∩B_ε(x)} K(x−y) dy` at an ambient point `x` near the
/// base, with `E` the subgraph of the base chart.
pub fn nonlocal_mean_curvature_at(
    surface: &Surface,
    kernel: &Kernel,
    x: &V3,
    opts: &VolumeOptions,
) -> Result<Evaluated<f64>> {
    let (eps, ck) = match (kernel.support_radius(), kernel.mass_constant()) {
        (Some(e), Some(c)) => (e, c),
        _ => {
            return Err(Error::Unsupported(format!(
                "volume form of H needs a compactly supported integrable kernel, got {}",
                kernel.label()
            )))
        }
    };
    let xb = surface.motion.inverse().apply_point(x);
    let reach = (xb.x * xb.x + xb.y * xb.y).sqrt() + eps;
    if reach > surface.shape.chart_limit() {
        return Err(Error::Unsupported(format!(
            "ball of radius {eps} at the evaluation point leaves the chart of {}",
            surface.name()
        )));
    }
    let fine = ball_integral(surface, kernel, &xb, eps, opts)?;
    let coarse = ball_integral(surface, kernel, &xb, eps, &opts.halved())?;
    Ok(Evaluated {
        value: ck - fine.0,
        quadrature_error: (fine.0 - coarse.0).abs(),
        tail_bound: 0.0,
        roundoff: 16.0 * f64::EPSILON * (ck.abs() + fine.1),
    })
}

fn ball_integral(surface: &Surface, kernel: &Kernel, xb: &V3, eps: f64, opts: &VolumeOptions) -> Result<(f64, f64)> {
    let rhos = gauss_legendre_on(opts.n_rho, 0.0, eps);
    let dphi = 2.0 * std::f64::consts::PI / opts.n_phi as f64;
    let shape = surface.shape.as_ref();
    let cols: Vec<Result<f64>> = rhos
        .par_iter()
        .map(|&(rho, wr)| {
            let w = (eps * eps - rho * rho).max(0.0).sqrt();
            let (lo, hi) = (xb.z - w, xb.z + w);
            let mut acc = Vec::with_capacity(opts.n_phi);
            for k in 0..opts.n_phi {
                let phi = (k as f64 + 0.5) * dphi;
                let y = [xb.x + rho * phi.cos(), xb.y + rho * phi.sin()];
                let jet = shape
                    .graph_jet(y)
                    .ok_or_else(|| Error::Geometry("ball column outside the chart".into()))?;
                let up = jet.f.min(hi);
                if up <= lo {
                    acc.push(0.0);
                    continue;
                }
                let col: f64 = gauss_legendre_on(opts.n_t, lo, up)
                    .into_iter()
                    .map(|(t, wt)| wt * kernel.value((rho * rho + (t - xb.z).powi(2)).sqrt()))
                    .sum();
                acc.push(col);
            }
            Ok(wr * rho * dphi * pairwise_sum(&acc))
        })
        .collect();
    let cols: Vec<f64> = cols.into_iter().collect::<Result<_>>()?;
    let abs = cols.iter().map(|c| c.abs()).sum();
    Ok((pairwise_sum(&cols), abs))
}

/// Difference form at the base: `½∫_0^ε k(r) r² (−2∫ cos θ*(r, φ) dφ) dr`,
/// where `θ*` is the polar angle from `ν(x)` at which the sphere of radius `r`
/// about `x` crosses `∂E`.
pub fn difference_mean_curvature(surface: &Surface, kernel: &Kernel, opts: &VolumeOptions) -> Result<Evaluated<f64>> {
    let eps = kernel.support_radius().ok_or_else(|| {
        Error::Unsupported(format!(
            "difference form of H is evaluated only for compactly supported kernels, got {}",
            kernel.label()
        ))
    })?;
    if eps > surface.shape.chart_limit() {
        return Err(Error::Unsupported("kernel support leaves the base chart".into()));
    }
    let eval = |o: &VolumeOptions| -> Result<(f64, f64)> {
        let shape = surface.shape.as_ref();
        let dphi = 2.0 * std::f64::consts::PI / o.n_phi as f64;
        let shells: Vec<Result<f64>> = gauss_legendre_on(o.n_rho, 0.0, eps)
            .par_iter()
            .map(|&(r, wr)| {
                let mut acc = Vec::with_capacity(o.n_phi);
                for k in 0..o.n_phi {
                    let phi = (k as f64 + 0.5) * dphi;
                    let (c, s) = (phi.cos(), phi.sin());
                    let g = |th: f64| -> Result<f64> {
                        let jet = shape
                            .graph_jet([r * th.sin() * c, r * th.sin() * s])
                            .ok_or_else(|| Error::Geometry("shell leaves the chart".into()))?;
                        Ok(r * th.cos() - jet.f)
                    };
                    let (mut a, mut b) = (0.0, std::f64::consts::PI);
                    for _ in 0..80 {
                        let m = 0.5 * (a + b);
                        if g(m)? > 0.0 {
                            a = m;
                        } else {
                            b = m;
                        }
                    }
                    acc.push((0.5 * (a + b)).cos());
                }
                Ok(-wr * kernel.value(r) * r * r * dphi * pairwise_sum(&acc))
            })
            .collect();
        let shells: Vec<f64> = shells.into_iter().collect::<Result<_>>()?;
        Ok((pairwise_sum(&shells), shells.iter().map(|v| v.abs()).sum()))
    };
    let fine = eval(opts)?;
    let coarse = eval(&opts.halved())?;
    Ok(Evaluated {
        value: fine.0,
        quadrature_error: (fine.0 - coarse.0).abs(),
        tail_bound: 0.0,
        roundoff: 16.0 * f64::EPSILON * fine.1,
    })
}

fn flux_mean_curvature(ctx: &OperatorContext) -> Result<Evaluated<f64>> {
    let x = ctx.x();
    let n = ctx.kernel.dimension() as i32;
    let f = |rule: &QuadratureRule| {
        Ok(node_sum(rule, |node| {
            let z = node.point.x - x;
            let r = z.norm();
            if r == 0.0 {
                return 0.0;
            }
            shell_potential(&ctx.kernel, r) / r.powi(n) * z.dot(&node.point.nu)
        }))
    };
    let (fine, coarse) = ctx.two_level(f)?;
    let tail = match (ctx.coverage(), ctx.kernel.envelope_amplitude()) {
        (r, _) if r.is_infinite() => 0.0,
        (r, Some(a)) => {
            // |(y−x)·ν| Ψ(r)/r^n ≤ A r^{1−b}/(b−n)
            let b = ctx.kernel.decay_order();
            power_envelope_tail(&ctx.rule.growth, a / (b - n as f64), b - 1.0, r)?
        }
        (r, None) => match ctx.kernel.support_radius() {
            Some(s) if s <= r => 0.0,
            _ => {
                return Err(Error::Capability(
                    "flux form tail needs a power envelope or compact support".into(),
                ))
            }
        },
    };
    Ok(assemble(fine, coarse, tail))
}

/// `G(y) = ∫_{∂E} ν(z) K(y−z) dH²_z` on one rule, at an ambient point `y`.
pub fn boundary_gradient_on(rule: &QuadratureRule, kernel: &Kernel, y: &V3) -> [f64; 4] {
    sum_map_n::<4, _>(rule.nodes.len(), |i| {
        let n = &rule.nodes[i];
        let r = (y - n.point.x).norm();
        if r == 0.0 && kernel.is_singular() {
            return [0.0; 4];
        }
        let wk = n.weight * kernel.value(r);
        [wk * n.point.nu.x, wk * n.point.nu.y, wk * n.point.nu.z, wk.abs()]
    })
}

/// `∇H_{K,E}(x) = ∫_{∂E} ν(y) K(x−y) dH²_y`.
pub fn nonlocal_mean_curvature_gradient(ctx: &OperatorContext) -> Result<Evaluated<V3>> {
    gradient_at(ctx, &ctx.x())
}

/// Boundary-integral gradient at an ambient point near the base.
pub fn gradient_at(ctx: &OperatorContext, y: &V3) -> Result<Evaluated<V3>> {
    if ctx.kernel.is_singular() {
        return Err(Error::Unsupported(
            "the boundary-integral gradient needs an integrable kernel".into(),
        ));
    }
    let reach = (y - ctx.x()).norm();
    let tail = match ctx.kernel.support_radius() {
        Some(s) if s + reach <= ctx.coverage() => 0.0,
        Some(_) => {
            return Err(Error::Truncation(
                "kernel support around the evaluation point exceeds the rule coverage".into(),
            ))
        }
        None => ctx.tail(1.0).map_err(|e| Error::Config {
            path: "truncation".into(),
            message: format!("no tail certificate for the gradient: {e}"),
        })?,
    };
    let (fine, coarse) = ctx.two_level(|r| Ok(boundary_gradient_on(r, &ctx.kernel, y)))?;
    let v = V3::new(fine[0], fine[1], fine[2]);
    let quadrature_error = coarse
        .map(|c| (v - V3::new(c[0], c[1], c[2])).norm())
        .unwrap_or(0.0);
    let depth = (ctx.rule.len().max(2) as f64).log2().ceil();
    Ok(Evaluated {
        value: v,
        quadrature_error,
        tail_bound: tail,
        roundoff: 4.0 * f64::EPSILON * depth * fine[3],
    })
}

/// Both forms of `c²_{K,E}(x)` on the same nodes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TotalCurvature {
    /// `½∫|ν(x)−ν(y)|²K`.
    pub value: f64,
    /// `∫K − ν(x)·∫ν(y)K`.
    pub rearranged: f64,
    pub quadrature_error: f64,
    pub tail_bound: f64,
    pub roundoff: f64,
    /// Roundoff scale of the rearranged form, `Σ w K`.
    pub rearranged_scale: f64,
}

impl TotalCurvature {
    pub fn budget(&self) -> f64 {
        self.quadrature_error + self.tail_bound + self.roundoff
    }

    pub fn evaluated(&self) -> Evaluated<f64> {
        Evaluated {
            value: self.value,
            quadrature_error: self.quadrature_error,
            tail_bound: self.tail_bound,
            roundoff: self.roundoff,
        }
    }
}

fn c2_on(rule: &QuadratureRule, kernel: &Kernel, x: &V3, nu: &V3) -> [f64; 6] {
    sum_map_n::<6, _>(rule.nodes.len(), |i| {
        let n = &rule.nodes[i];
        let r = (x - n.point.x).norm();
        if r == 0.0 && kernel.is_singular() {
            return [0.0; 6];
        }
        let wk = n.weight * kernel.value(r);
        let d = nu - n.point.nu;
        let v = 0.5 * d.norm_squared() * wk;
        [v, v.abs(), wk, wk * n.point.nu.x, wk * n.point.nu.y, wk * n.point.nu.z]
    })
}

pub fn total_curvature_sq(ctx: &OperatorContext) -> Result<TotalCurvature> {
    let x = ctx.x();
    let nu = ctx.base.point.nu;
    let (fine, coarse) = ctx.two_level(|r| Ok(c2_on(r, &ctx.kernel, &x, &nu)))?;
    let rearranged = fine[2] - nu.dot(&V3::new(fine[3], fine[4], fine[5]));
    let depth = (ctx.rule.len().max(2) as f64).log2().ceil();
    Ok(TotalCurvature {
        value: fine[0],
        rearranged,
        quadrature_error: coarse.map(|c| (fine[0] - c[0]).abs()).unwrap_or(0.0),
        tail_bound: ctx.tail(2.0)?,
        roundoff: 4.0 * f64::EPSILON * depth * fine[1],
        rearranged_scale: fine[2].abs(),
    })
}

/// Scalar field on `∂E`, with a bound on `|g|` for tail certificates.
pub struct SurfaceField<'a> {
    f: Box<dyn Fn(&SurfacePoint) -> f64 + Sync + Send + 'a>,
    pub sup: f64,
}

impl<'a> SurfaceField<'a> {
    pub fn new(f: impl Fn(&SurfacePoint) -> f64 + Sync + Send + 'a, sup: f64) -> Self {
        SurfaceField { f: Box::new(f), sup }
    }

    pub fn constant(c: f64) -> Self {
        SurfaceField::new(move |_| c, c.abs())
    }

    /// Restriction of an ambient field.
    pub fn ambient(g: impl ScalarField + 'a, sup: f64) -> Self {
        SurfaceField::new(move |p| g.value(&p.x), sup)
    }

    /// `δ_j ν_i = a_iᵀ S a_j` for fixed ambient vectors `a_i`, `a_j`.
    pub fn shape_entry(ai: V3, aj: V3, sup: f64) -> Self {
        SurfaceField::new(move |p| ai.dot(&(p.s * aj)), sup)
    }

    /// Component `a·ν`.
    pub fn normal_component(a: V3) -> Self {
        SurfaceField::new(move |p| a.dot(&p.nu), a.norm())
    }

    pub fn at(&self, p: &SurfacePoint) -> f64 {
        (self.f)(p)
    }
}

/// `L_{K,E} g(x) = ∫(g(x) − g(y)) K(x−y) dH²_y`.
pub fn lk_apply(ctx: &OperatorContext, g: &SurfaceField) -> Result<Evaluated<f64>> {
    let x = ctx.x();
    let gx = g.at(&ctx.base.point);
    let (fine, coarse) = ctx.two_level(|rule| {
        let s = node_sum(rule, |n| match ctx.kernel_at(&(x - n.point.x)) {
            Some((_, k)) => (gx - g.at(&n.point)) * k,
            None => 0.0,
        });
        if !s.value.is_finite() {
            return Err(Error::Integrand {
                node: 0,
                message: "non-finite L_K integrand".into(),
            });
        }
        Ok(s)
    })?;
    Ok(assemble(fine, coarse, ctx.tail(2.0 * g.sup)?))
}

/// `B(u, v; x) = ½∫(u(x)−u(y))(v(x)−v(y))K(x−y) dH²_y`.
pub fn bilinear_form_pointwise(ctx: &OperatorContext, u: &SurfaceField, v: &SurfaceField) -> Result<Evaluated<f64>> {
    let x = ctx.x();
    let (ux, vx) = (u.at(&ctx.base.point), v.at(&ctx.base.point));
    let (fine, coarse) = ctx.two_level(|rule| {
        Ok(node_sum(rule, |n| match ctx.kernel_at(&(x - n.point.x)) {
            Some((_, k)) => 0.5 * (ux - u.at(&n.point)) * (vx - v.at(&n.point)) * k,
            None => 0.0,
        }))
    })?;
    Ok(assemble(fine, coarse, ctx.tail(2.0 * u.sup * v.sup)?))
}

/// `Σ_a w_a Σ_b w_b K(x_a − x_b) f(a, b)` with a deterministic reduction.
pub fn pair_sum<F>(rule: &QuadratureRule, kernel: &Kernel, f: F) -> f64
where
    F: Fn(usize, usize) -> f64 + Sync + Send,
{
    let support = kernel.support_radius().unwrap_or(f64::INFINITY);
    sum_map(rule.nodes.len(), |a| {
        let xa = rule.nodes[a].point.x;
        let row: Vec<f64> = rule
            .nodes
            .iter()
            .enumerate()
            .map(|(b, nb)| {
                let r = (xa - nb.point.x).norm();
                if r >= support || (r == 0.0 && kernel.is_singular()) {
                    0.0
                } else {
                    nb.weight * kernel.value(r) * f(a, b)
                }
            })
            .collect();
        rule.nodes[a].weight * pairwise_sum(&row)
    })
}

/// `B(u, v) = ∫ B(u, v; x) dH²_x` with inner and outer integrals on `outer`.
pub fn bilinear_form_total(kernel: &Kernel, u: &SurfaceField, v: &SurfaceField, outer: &QuadratureRule) -> Result<f64> {
    let uv: Vec<f64> = outer.nodes.iter().map(|n| u.at(&n.point)).collect();
    let vv: Vec<f64> = outer.nodes.iter().map(|n| v.at(&n.point)).collect();
    check_support(outer, &uv)?;
    check_support(outer, &vv)?;
    Ok(pair_sum(outer, kernel, |a, b| 0.5 * (uv[a] - uv[b]) * (vv[a] - vv[b])))
}

/// Fails if a field does not vanish near the outer edge of a bounded-coverage rule.
pub fn check_support(rule: &QuadratureRule, values: &[f64]) -> Result<()> {
    if rule.kind == RuleKind::Global || rule.complete {
        return Ok(());
    }
    let base = rule.base.point.x;
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let edge = 0.95 * rule.truncation;
    for (n, v) in rule.nodes.iter().zip(values) {
        let d = if n.rho.is_nan() {
            (n.point.x - base).norm()
        } else {
            n.rho.max(n.y[0].abs().max(n.y[1].abs()))
        };
        if d >= edge && v.abs() > 1e-12 * scale {
            return Err(Error::Truncation(format!(
                "field does not vanish near the edge of the rule (|value| = {:.3e} at distance {d:.4})",
                v.abs()
            )));
        }
    }
    Ok(())
}

/// Both sides of `∫ δ_j g = ∫ H ν_j g`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DivergenceCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    pub quadrature_error: f64,
}

fn tangential_part(p: &SurfacePoint, g: &dyn ScalarField, j: usize) -> Result<f64> {
    crate::geometry::tangential_derivative(p, g, j, 1e-5)
}

/// Integration by parts for tangential derivatives, `j` a 0-based ambient index.
pub fn tangential_divergence_check(rule: &QuadratureRule, g: &dyn ScalarField, j: usize) -> Result<DivergenceCheck> {
    let values: Vec<f64> = rule.nodes.iter().map(|n| g.value(&n.point.x)).collect();
    check_support(rule, &values)?;
    let d: Vec<Result<[f64; 2]>> = rule
        .nodes
        .par_iter()
        .map(|n| {
            let dj = tangential_part(&n.point, g, j)?;
            Ok([n.weight * dj, n.weight * n.point.h * n.point.nu[j] * g.value(&n.point.x)])
        })
        .collect();
    let d: Vec<[f64; 2]> = d.into_iter().collect::<Result<_>>()?;
    let lhs = pairwise_sum(&d.iter().map(|v| v[0]).collect::<Vec<_>>());
    let rhs = pairwise_sum(&d.iter().map(|v| v[1]).collect::<Vec<_>>());
    Ok(DivergenceCheck {
        lhs,
        rhs,
        residual: lhs - rhs,
        quadrature_error: rule.area_error / rule.area.max(f64::MIN_POSITIVE) * (lhs.abs() + rhs.abs()),
    })
}

/// `∫ g₁δ_j g₂ + ∫ g₂δ_j g₁` against `∫ H ν_j g₁g₂`.
pub fn product_rule_check(
    rule: &QuadratureRule,
    g1: &dyn ScalarField,
    g2: &dyn ScalarField,
    j: usize,
) -> Result<DivergenceCheck> {
    let values: Vec<f64> = rule
        .nodes
        .iter()
        .map(|n| g1.value(&n.point.x) * g2.value(&n.point.x))
        .collect();
    check_support(rule, &values)?;
    let d: Vec<Result<[f64; 2]>> = rule
        .nodes
        .par_iter()
        .map(|n| {
            let (a, b) = (g1.value(&n.point.x), g2.value(&n.point.x));
            let (da, db) = (tangential_part(&n.point, g1, j)?, tangential_part(&n.point, g2, j)?);
            Ok([n.weight * (a * db + b * da), n.weight * n.point.h * n.point.nu[j] * a * b])
        })
        .collect();
    let d: Vec<[f64; 2]> = d.into_iter().collect::<Result<_>>()?;
    let lhs = pairwise_sum(&d.iter().map(|v| v[0]).collect::<Vec<_>>());
    let rhs = pairwise_sum(&d.iter().map(|v| v[1]).collect::<Vec<_>>());
    Ok(DivergenceCheck {
        lhs,
        rhs,
        residual: lhs - rhs,
        quadrature_error: rule.area_error / rule.area.max(f64::MIN_POSITIVE) * (lhs.abs() + rhs.abs()),
    })
}

/// Divergence and product-rule residuals over a refinement schedule.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DivergenceStudy {
    pub surface: String,
    pub j: usize,
    pub levels: Vec<u32>,
    pub spacings: Vec<f64>,
    pub divergence: Vec<DivergenceCheck>,
    pub product_rule: Vec<DivergenceCheck>,
    /// Log-log slopes of `|residual|` against the spacing, over points above
    /// the floor `max(1e-10(|lhs|+|rhs|), 1e-14)`; `None` when fewer than two remain.
    pub divergence_slope: Option<f64>,
    pub product_slope: Option<f64>,
    pub pass: bool,
}

/// Plane residuals must vanish to this absolute level.
pub const FLAT_TOL: f64 = 1e-10;

fn residual_slope(spacings: &[f64], checks: &[DivergenceCheck]) -> Option<f64> {
    let floor = checks
        .iter()
        .map(|c| 1e-10 * (c.lhs.abs() + c.rhs.abs()))
        .fold(1e-14, f64::max);
    let pts: Vec<(f64, f64)> = spacings
        .iter()
        .zip(checks)
        .filter(|(_, c)| c.residual.abs() > floor)
        .map(|(h, c)| (*h, c.residual.abs()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    crate::identities::loglog_slope(&xs, &ys)
}

/// Runs [`tangential_divergence_check`] on `g1` and [`product_rule_check`] on
/// `(g1, g2)` at every level, on chart rules of radius `truncation`.
pub fn divergence_convergence(
    surface: &Surface,
    g1: &dyn ScalarField,
    g2: &dyn ScalarField,
    j: usize,
    truncation: f64,
    levels: &[u32],
) -> Result<DivergenceStudy> {
    if j > 2 {
        return Err(Error::Parameter(format!("ambient index {j} outside 0..=2")));
    }
    let base = surface.base_frame();
    let mut spacings = Vec::new();
    let mut divergence = Vec::new();
    let mut product_rule = Vec::new();
    for &l in levels {
        let rule = build_quadrature_with(surface, &base, &RuleSpec::new(l, truncation))?;
        spacings.push(rule.spacing);
        divergence.push(tangential_divergence_check(&rule, g1, j)?);
        product_rule.push(product_rule_check(&rule, g1, g2, j)?);
    }
    let divergence_slope = residual_slope(&spacings, &divergence);
    let product_slope = residual_slope(&spacings, &product_rule);
    let flat = surface.shape.name() == "plane";
    let pass = if flat {
        divergence.iter().chain(&product_rule).all(|c| c.residual.abs() <= FLAT_TOL)
    } else {
        divergence_slope.is_none_or(|s| s >= 1.0) && product_slope.is_none_or(|s| s >= 1.0)
    };
    Ok(DivergenceStudy {
        surface: surface.name(),
        j,
        levels: levels.to_vec(),
        spacings,
        divergence,
        product_rule,
        divergence_slope,
        product_slope,
        pass,
    })
}

/// Smooth bump `exp(1 − 1/(1 − |x−c|²/a²))` times an optional linear factor,
/// with analytic gradient.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bump {
    pub center: V3,
    pub radius: f64,
    /// Multiplies the bump by `1 + slope·(x − c)` when nonzero.
    pub slope: V3,
}

impl Bump {
    pub fn new(center: V3, radius: f64) -> Self {
        Bump {
            center,
            radius,
            slope: V3::zeros(),
        }
    }

    pub fn with_slope(mut self, slope: V3) -> Self {
        self.slope = slope;
        self
    }

    fn core(&self, x: &V3) -> (f64, V3) {
        let d = x - self.center;
        let t = d.norm_squared() / (self.radius * self.radius);
        if t >= 1.0 {
            return (0.0, V3::zeros());
        }
        let v = (1.0 - 1.0 / (1.0 - t)).exp();
        let dv = -v / (1.0 - t).powi(2) * 2.0 / (self.radius * self.radius);
        (v, d * dv)
    }
}

impl ScalarField for Bump {
    fn value(&self, x: &V3) -> f64 {
        let (v, _) = self.core(x);
        v * (1.0 + self.slope.dot(&(x - self.center)))
    }

    fn gradient(&self, x: &V3) -> Option<V3> {
        let (v, dv) = self.core(x);
        let l = 1.0 + self.slope.dot(&(x - self.center));
        Some(dv * l + self.slope * v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_quadrature, sphere_global_rule, Plane, Polynomial, RigidMotion, Sphere};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn ctx(shape: Arc<dyn crate::geometry::Shape>, kernel: Kernel, level: u32, r: f64) -> OperatorContext {
        let s = Surface::new(shape);
        let mut spec = RuleSpec::new(level, r);
        spec.chart_radius = Some(r.min(0.8 * s.shape.scale()));
        OperatorContext::build(s, kernel, &spec).unwrap()
    }

    #[test]
    fn half_space_mean_curvature_vanishes() {
        let k = Kernel::mollifier(3, 0.5).unwrap();
        let c = ctx(Arc::new(Plane), k, 5, 0.6);
        for form in [HForm::Volume, HForm::Difference, HForm::Flux] {
            let h = nonlocal_mean_curvature(&c, form).unwrap();
            assert!(h.value.abs() <= h.budget() + 1e-12, "{form:?}: {h:?}");
        }
        let fr = ctx(Arc::new(Plane), Kernel::fractional(3, 0.5, 1.0).unwrap(), 5, 2.0);
        assert_eq!(nonlocal_mean_curvature(&fr, HForm::Auto).unwrap().value, 0.0);
        assert!(nonlocal_mean_curvature(&fr, HForm::Volume).is_err());
    }

    #[test]
    fn unit_ball_mean_curvature_forms_agree() {
        let k = Kernel::mollifier(3, 0.5).unwrap();
        let c = ctx(Arc::new(Sphere::new(1.0)), k, 7, 0.6);
        let v = nonlocal_mean_curvature(&c, HForm::Volume).unwrap();
        let d = nonlocal_mean_curvature(&c, HForm::Difference).unwrap();
        let f = nonlocal_mean_curvature(&c, HForm::Flux).unwrap();
        assert!(v.value > 0.0);
        assert!((v.value - d.value).abs() <= 10.0 * (v.budget() + d.budget()) + 1e-9, "{v:?} {d:?}");
        assert!((v.value - f.value).abs() <= 10.0 * (v.budget() + f.budget()) + 1e-9, "{v:?} {f:?}");
    }

    #[test]
    fn gradient_matches_finite_differences_of_volume_form() {
        let k = Kernel::mollifier(3, 0.4).unwrap();
        let c = ctx(Arc::new(Polynomial::paraboloid(1.0, 2.0)), k.clone(), 7, 0.6);
        let g = nonlocal_mean_curvature_gradient(&c).unwrap();
        let h = 1e-4;
        let opts = VolumeOptions { n_rho: 64, n_phi: 128, n_t: 64 };
        for a in 0..3 {
            let mut e = V3::zeros();
            e[a] = h;
            let p = nonlocal_mean_curvature_at(&c.surface, &k, &(c.x() + e), &opts).unwrap();
            let m = nonlocal_mean_curvature_at(&c.surface, &k, &(c.x() - e), &opts).unwrap();
            let fd = (p.value - m.value) / (2.0 * h);
            assert!((fd - g.value[a]).abs() <= 1e-6f64.max(10.0 * g.budget()), "axis {a}: {fd} vs {}", g.value[a]);
        }
        // tangential parts vanish by the mirror symmetry of the paraboloid
        assert!(g.value.x.abs() < 1e-12 && g.value.y.abs() < 1e-12);
    }

    #[test]
    fn half_space_gradient_is_normal() {
        let k = Kernel::mollifier(3, 0.3).unwrap();
        let c = ctx(Arc::new(Plane), k.clone(), 6, 0.5);
        let g = nonlocal_mean_curvature_gradient(&c).unwrap();
        assert_eq!((g.value.x, g.value.y), (0.0, 0.0));
        // ∫_{plane} K = 2π∫_0^ε k(r) r dr
        let exact: f64 = gauss_legendre_on(64, 0.0, 0.3)
            .into_iter()
            .map(|(r, w)| w * 2.0 * std::f64::consts::PI * r * k.value(r))
            .sum();
        assert!((g.value.z - exact).abs() <= g.budget(), "{g:?} vs {exact}");
    }

    #[test]
    fn sphere_gradient_is_radial() {
        let k = Kernel::mollifier(3, 0.5).unwrap();
        let m = RigidMotion::from_axis_angle(V3::new(1.0, 2.0, 0.5), 1.1, V3::new(0.3, 0.0, -2.0));
        let s = Surface::new(Arc::new(Sphere::new(1.0))).moved(&m);
        let mut spec = RuleSpec::new(6, 0.6);
        spec.chart_radius = Some(0.6);
        let c = OperatorContext::build(s, k, &spec).unwrap();
        let g = nonlocal_mean_curvature_gradient(&c).unwrap();
        let nu = c.base.point.nu;
        let tangential = g.value - nu * nu.dot(&g.value);
        assert!(tangential.norm() < 1e-8);
    }

    #[test]
    fn c2_forms_and_plane() {
        let k = Kernel::mollifier(3, 0.3).unwrap();
        let plane = ctx(Arc::new(Plane), k.clone(), 5, 0.4);
        assert_eq!(total_curvature_sq(&plane).unwrap().value, 0.0);
        for shape in [
            crate::geometry::parse_surface("sphere").unwrap(),
            crate::geometry::parse_surface("paraboloid").unwrap(),
            crate::geometry::parse_surface("catenoid").unwrap(),
            crate::geometry::parse_surface("cylinder").unwrap(),
        ] {
            let c = ctx(shape, k.clone(), 6, 0.4);
            let t = total_curvature_sq(&c).unwrap();
            assert!((t.value - t.rearranged).abs() <= 1e-12 * t.rearranged_scale.max(1.0), "{t:?}");
            // Σ_m B(ν_m, ν_m; x) = c²
            let sum: f64 = (0..3)
                .map(|m| {
                    let mut a = V3::zeros();
                    a[m] = 1.0;
                    let f = SurfaceField::normal_component(a);
                    bilinear_form_pointwise(&c, &f, &f).unwrap().value
                })
                .sum();
            assert!((sum - t.value).abs() <= 1e-12 * t.value.max(1e-300) + 1e-15);
        }
    }

    #[test]
    fn lk_annihilates_constants_and_odd_linear_fields() {
        let k = Kernel::simons_limit(3, 0.3).unwrap();
        let mut spec = RuleSpec::new(6, 1.0);
        spec.chart_radius = Some(1.0);
        let s = Surface::new(Arc::new(Plane));
        let c = OperatorContext::build(s, k, &spec).unwrap();
        assert_eq!(lk_apply(&c, &SurfaceField::constant(2.5)).unwrap().value, 0.0);
        let lin = SurfaceField::new(|p| 0.7 * p.x.x - 1.3 * p.x.y, 10.0);
        assert!(lk_apply(&c, &lin).unwrap().value.abs() < 1e-10);
    }

    #[test]
    fn lk_of_x1_on_sphere_is_eigenfunction_like() {
        // at the base, x_1 vanishes; L f(x) = ∫(0 − y_1)K is zero by symmetry,
        // while g = x_3 + 1 (cos of polar angle) gives a positive value
        let k = Kernel::mollifier(3, 0.3).unwrap();
        let c = ctx(Arc::new(Sphere::new(1.0)), k, 7, 0.4);
        let x1 = SurfaceField::new(|p| p.x.x, 2.0);
        assert!(lk_apply(&c, &x1).unwrap().value.abs() < 1e-12);
        let z = SurfaceField::new(|p| p.x.z + 1.0, 2.0);
        assert!(lk_apply(&c, &z).unwrap().value > 0.0);
    }

    #[test]
    fn bilinear_total_is_symmetric_and_nonnegative() {
        let k = Kernel::mollifier(3, 0.6).unwrap();
        let s = Surface::new(Arc::new(Sphere::new(1.0)));
        let rule = sphere_global_rule(&s, 16).unwrap();
        let u = SurfaceField::new(|p| (p.x.x * 3.0).sin() + p.x.y, 2.0);
        let v = SurfaceField::new(|p| (p.x.z * 2.0).cos() * p.x.x, 1.0);
        let uv = bilinear_form_total(&k, &u, &v, &rule).unwrap();
        let vu = bilinear_form_total(&k, &v, &u, &rule).unwrap();
        assert!((uv - vu).abs() <= 1e-12 * uv.abs().max(1.0));
        assert!(bilinear_form_total(&k, &u, &u, &rule).unwrap() >= 0.0);
        let zero = SurfaceField::constant(0.0);
        assert_eq!(bilinear_form_total(&k, &u, &zero, &rule).unwrap(), 0.0);
    }

    #[test]
    fn support_leakage_is_reported() {
        let s = Surface::new(Arc::new(Plane));
        let rule = build_quadrature(&s, &s.base_frame(), 0.0, 1.0, 5).unwrap();
        let wide = Bump::new(V3::zeros(), 2.0);
        assert!(matches!(tangential_divergence_check(&rule, &wide, 0), Err(Error::Truncation(_))));
    }

    #[test]
    fn divergence_theorem_on_plane_and_sphere() {
        let s = Surface::new(Arc::new(Plane));
        let rule = build_quadrature(&s, &s.base_frame(), 0.0, 1.0, 6).unwrap();
        // centred even bump: δ_j g is odd about the base and cancels on mirrored rings
        let g = Bump::new(V3::zeros(), 0.6);
        for j in 0..3 {
            let r = tangential_divergence_check(&rule, &g, j).unwrap();
            assert!(r.residual.abs() < 1e-10, "{r:?}");
        }
        let off = Bump::new(V3::new(0.1, -0.05, 0.0), 0.6).with_slope(V3::new(1.0, 0.5, 0.0));
        let r = tangential_divergence_check(&rule, &off, 0).unwrap();
        assert!(r.residual.abs() < 1e-3, "{r:?}");
        let sph = Surface::new(Arc::new(Sphere::new(1.0)));
        let rule = build_quadrature(&sph, &sph.base_frame(), 0.0, 2.5, 7).unwrap();
        let g = Bump::new(V3::new(0.0, 0.0, -0.2), 0.9).with_slope(V3::new(2.0, 0.0, 0.0));
        let r = tangential_divergence_check(&rule, &g, 0).unwrap();
        assert!(r.residual.abs() < 1e-5, "{r:?}");
    }

    #[test]
    fn divergence_study_orders() {
        let g1 = Bump::new(V3::zeros(), 0.6);
        let g2 = Bump::new(V3::zeros(), 0.45);
        let plane = Surface::new(Arc::new(Plane));
        let st = divergence_convergence(&plane, &g1, &g2, 0, 0.8, &[5, 6]).unwrap();
        assert!(st.pass);
        let sph = Surface::new(Arc::new(Sphere::new(1.0)));
        let st = divergence_convergence(&sph, &g1, &g2, 2, 0.8, &[5, 6, 7]).unwrap();
        assert!(st.pass && st.divergence_slope.unwrap() >= 1.0, "{st:?}");
        assert!(divergence_convergence(&sph, &g1, &g2, 3, 0.8, &[5]).is_err());
    }

    #[test]
    fn lk_singular_kernel_needs_tail_certificate() {
        let k = Kernel::simons_limit(3, 0.3).unwrap();
        let s = Surface::new(Arc::new(Polynomial::paraboloid(1.0, 1.0)));
        let mut spec = RuleSpec::new(4, 0.5);
        spec.chart_radius = Some(0.5);
        spec.r0 = Some(1.0);
        let c = OperatorContext::build(s, k, &spec).unwrap();
        assert!(lk_apply(&c, &SurfaceField::constant(1.0)).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn operators_are_rigid_motion_invariant(angle in 0.0f64..6.0, ax in -1.0f64..1.0, tz in -3.0f64..3.0) {
            let k = Kernel::mollifier(3, 0.3).unwrap();
            let shape: Arc<dyn crate::geometry::Shape> = Arc::new(Polynomial::paraboloid(1.0, 2.0));
            let c0 = ctx(shape.clone(), k.clone(), 5, 0.4);
            let m = RigidMotion::from_axis_angle(V3::new(ax, 1.0, 0.3), angle, V3::new(1.0, -2.0, tz));
            let mut spec = RuleSpec::new(5, 0.4);
            spec.chart_radius = Some(0.4);
            let c1 = OperatorContext::build(Surface::new(shape).moved(&m), k, &spec).unwrap();
            let a = total_curvature_sq(&c0).unwrap().value;
            let b = total_curvature_sq(&c1).unwrap().value;
            prop_assert!((a - b).abs() < 1e-10 * a.abs().max(1.0));
            let e0 = (c0.base.tangents[0], c0.base.tangents[1]);
            let e1 = (c1.base.tangents[0], c1.base.tangents[1]);
            let l0 = lk_apply(&c0, &SurfaceField::shape_entry(e0.0, e0.1, 10.0)).unwrap().value;
            let l1 = lk_apply(&c1, &SurfaceField::shape_entry(e1.0, e1.1, 10.0)).unwrap().value;
            prop_assert!((l0 - l1).abs() < 1e-10 * l0.abs().max(1.0));
            let g0 = nonlocal_mean_curvature_gradient(&c0).unwrap().value;
            let g1 = nonlocal_mean_curvature_gradient(&c1).unwrap().value;
            prop_assert!((m.apply_vector(&g0) - g1).norm() < 1e-10 * g0.norm().max(1.0));
        }
    }
}
