//! Residual of the nonlocal Simons formula
//! `δ_iδ_j H = −L(δ_jν_i) + c²δ_jν_i − ∫(H K − ν·∇K)ν_iν_j` at the base point.

use serde::Serialize;

use super::{loglog_slope, Term, SAFETY};
use crate::error::{Error, Result};
use crate::geometry::{QuadratureRule, RuleSpec, Surface, V3};
use crate::kernels::Kernel;
use crate::nonlocal_ops::{
    boundary_gradient_on, kernel_gradient_vec, lk_apply, total_curvature_sq, OperatorContext, SurfaceField,
};
use crate::quadrature::reduce::sum_map_n;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResidualParameters {
    pub surface: String,
    pub kernel: String,
    pub i: usize,
    pub j: usize,
    pub delta: f64,
    #[serde(rename = "R")]
    pub truncation: f64,
    #[serde(rename = "L")]
    pub level: u32,
    pub spacing: f64,
    pub fd_step: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResidualReport {
    pub parameters: ResidualParameters,
    pub term_lhs: Term,
    pub term_lk: Term,
    pub term_c2: Term,
    pub term_geo: Term,
    pub residual: f64,
    pub budget: f64,
    pub pass: bool,
    /// `δ_jδ_i H` from the swapped stencil.
    pub lhs_swapped: f64,
    pub symmetry_defect: f64,
    pub symmetry_pass: bool,
    /// Summation roundoff part of `budget`; residuals below
    /// `SAFETY·roundoff` are excluded from order fits.
    pub roundoff: f64,
}

/// Context with `R_c = R = 1.5 ε` for a kernel supported in `B_ε`.
pub fn simons_context(surface: &Surface, kernel: &Kernel, level: u32) -> Result<OperatorContext> {
    let eps = compact_support(kernel)?;
    let mut spec = RuleSpec::new(level, 1.5 * eps);
    spec.chart_radius = Some(1.5 * eps);
    OperatorContext::build(surface.clone(), kernel.clone(), &spec)
}

fn compact_support(kernel: &Kernel) -> Result<f64> {
    match kernel.support_radius() {
        Some(e) if !kernel.is_singular() => Ok(e),
        _ => Err(Error::Unsupported(format!(
            "the Simons residual needs a smooth compactly supported kernel, got {}",
            kernel.label()
        ))),
    }
}

struct Stencil<'a> {
    ctx: &'a OperatorContext,
}

impl Stencil<'_> {
    /// `δ_j H(y) = G_j(y) − ν_j(y)(ν(y)·G(y))` at the chart point `t·ê_dir`.
    fn tangential_gradient(&self, rule: &QuadratureRule, dir: usize, comp: usize, t: f64) -> Result<(f64, f64)> {
        let mut y = [0.0, 0.0];
        y[dir] = t;
        let p = self
            .ctx
            .surface
            .chart_point(y)
            .ok_or_else(|| Error::Capability("chart data unavailable for the tangential stencil".into()))?;
        let g = boundary_gradient_on(rule, &self.ctx.kernel, &p.x);
        let gv = V3::new(g[0], g[1], g[2]);
        let e = self.ctx.base.tangents[comp];
        Ok((e.dot(&gv) - e.dot(&p.nu) * p.nu.dot(&gv), g[3]))
    }

    fn derivative(&self, rule: &QuadratureRule, dir: usize, comp: usize, h: f64) -> Result<(f64, f64)> {
        let (p, a) = self.tangential_gradient(rule, dir, comp, h)?;
        let (m, b) = self.tangential_gradient(rule, dir, comp, -h)?;
        Ok(((p - m) / (2.0 * h), a.max(b)))
    }
}

/// Mixed derivative `δ_iδ_j H` (0-based `i`, `j`) with FD, quadrature and
/// roundoff budgets, and the roundoff part alone.
fn second_derivative(ctx: &OperatorContext, i: usize, j: usize, h: f64) -> Result<(Term, f64)> {
    let st = Stencil { ctx };
    let (d1, scale) = st.derivative(&ctx.rule, i, j, h)?;
    let (d2, _) = st.derivative(&ctx.rule, i, j, 2.0 * h)?;
    let fd = (d1 - d2).abs() / 3.0;
    let quad = match &ctx.coarse {
        Some(c) => (d1 - st.derivative(c, i, j, h)?.0).abs(),
        None => 0.0,
    };
    let depth = (ctx.rule.len().max(2) as f64).log2().ceil();
    let roundoff = 8.0 * f64::EPSILON * depth * scale / h;
    Ok((Term::new(d1, fd + quad + roundoff), roundoff))
}

/// `∫(H(y)K(x−y) − ν(y)·∇K(x−y)) ν_i(y)ν_j(y)` on one rule.
fn correction_on(rule: &QuadratureRule, kernel: &Kernel, x: &V3, ei: &V3, ej: &V3) -> [f64; 2] {
    sum_map_n::<2, _>(rule.nodes.len(), |k| {
        let n = &rule.nodes[k];
        let z = x - n.point.x;
        let r = z.norm();
        if r == 0.0 && kernel.is_singular() {
            return [0.0; 2];
        }
        let grad = kernel_gradient_vec(kernel, &z);
        let v = n.weight
            * (n.point.h * kernel.value(r) - n.point.nu.dot(&grad))
            * ei.dot(&n.point.nu)
            * ej.dot(&n.point.nu);
        [v, v.abs()]
    })
}

/// Correction integral with its budget and the roundoff part of the budget.
fn correction_integral(ctx: &OperatorContext, i: usize, j: usize) -> Result<(f64, f64, f64)> {
    let x = ctx.x();
    let (ei, ej) = (ctx.base.tangents[i], ctx.base.tangents[j]);
    let fine = correction_on(&ctx.rule, &ctx.kernel, &x, &ei, &ej);
    let quad = match &ctx.coarse {
        Some(c) => (fine[0] - correction_on(c, &ctx.kernel, &x, &ei, &ej)[0]).abs(),
        None => 0.0,
    };
    let depth = (ctx.rule.len().max(2) as f64).log2().ceil();
    let b = ctx.kernel.decay_order();
    let r = ctx.coverage();
    let factor = if b.is_finite() && r.is_finite() { (b / r).max(1.0) } else { 1.0 };
    let tail = ctx.tail(factor)?;
    let roundoff = 4.0 * f64::EPSILON * depth * fine[1];
    Ok((fine[0], quad + tail + roundoff, roundoff))
}

/// Largest `|S|` entry bound over the rule nodes (sampled, for tail factors).
pub(crate) fn sampled_shape_bound(rule: &QuadratureRule) -> f64 {
    rule.nodes
        .iter()
        .map(|n| n.point.s.norm())
        .fold(0.0, f64::max)
}

/// Every term of the nonlocal Simons formula at the base, `i, j ∈ {1, 2}`.
pub fn simons_residual(ctx: &OperatorContext, i: usize, j: usize) -> Result<ResidualReport> {
    if !(1..=2).contains(&i) || !(1..=2).contains(&j) {
        return Err(Error::Parameter(format!("tangential indices must lie in 1..=2, got ({i}, {j})")));
    }
    let eps = compact_support(&ctx.kernel)?;
    let (a, b) = (i - 1, j - 1);
    let h = 4.0 * ctx.rule.spacing;
    if eps + 2.0 * h > ctx.coverage() {
        return Err(Error::Parameter(format!(
            "rule coverage {} does not contain the kernel support {eps} around the stencil (step {h})",
            ctx.coverage()
        )));
    }
    let (lhs, lhs_roundoff) = second_derivative(ctx, a, b, h)?;
    let (swapped, _) = second_derivative(ctx, b, a, h)?;

    let (ei, ej) = (ctx.base.tangents[a], ctx.base.tangents[b]);
    let shape_sup = sampled_shape_bound(&ctx.rule);
    let hij = SurfaceField::shape_entry(ei, ej, shape_sup);
    let hx = hij.at(&ctx.base.point);
    let lk = lk_apply(ctx, &hij)?;
    let c2 = total_curvature_sq(ctx)?;
    let (corr, corr_budget, corr_roundoff) = correction_integral(ctx, a, b)?;

    let term_lk = Term::new(-lk.value, lk.budget());
    let term_c2 = Term::new(c2.value * hx, c2.budget() * hx.abs());
    let term_geo = Term::new(-corr, corr_budget);
    let residual = lhs.value - (term_lk.value + term_c2.value + term_geo.value);
    let budget = lhs.budget + term_lk.budget + term_c2.budget + term_geo.budget;
    let defect = (lhs.value - swapped.value).abs();
    Ok(ResidualReport {
        parameters: ResidualParameters {
            surface: ctx.surface.name(),
            kernel: ctx.kernel.label(),
            i,
            j,
            delta: ctx.rule.delta,
            truncation: ctx.rule.truncation,
            level: ctx.rule.level,
            spacing: ctx.rule.spacing,
            fd_step: h,
        },
        term_lhs: lhs,
        term_lk,
        term_c2,
        term_geo,
        residual,
        budget,
        pass: residual.abs() <= SAFETY * budget,
        lhs_swapped: swapped.value,
        symmetry_defect: defect,
        symmetry_pass: defect <= SAFETY * (lhs.budget + swapped.budget),
        roundoff: lhs_roundoff + lk.roundoff + c2.roundoff * hx.abs() + corr_roundoff,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceStudy {
    pub levels: Vec<u32>,
    pub spacings: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Log-log slope of |residual| against spacing; `None` when every residual
    /// is at the roundoff floor.
    pub slope: Option<f64>,
    pub reports: Vec<ResidualReport>,
    pub pass: bool,
}

/// Spacings, `|residual|` and the log-log slope over residuals above the
/// floor `max(1e-13·Σ|terms|, SAFETY·roundoff)`.
pub(crate) fn fit_order(reports: &[ResidualReport]) -> (Vec<f64>, Vec<f64>, Option<f64>) {
    let spacings: Vec<f64> = reports.iter().map(|r| r.parameters.spacing).collect();
    let residuals: Vec<f64> = reports.iter().map(|r| r.residual.abs()).collect();
    let floor = reports
        .iter()
        .map(|r| {
            let terms = r.term_lhs.value.abs() + r.term_lk.value.abs() + r.term_c2.value.abs() + r.term_geo.value.abs();
            (1e-13 * terms).max(SAFETY * r.roundoff)
        })
        .fold(0.0, f64::max);
    let pts: Vec<(f64, f64)> = spacings
        .iter()
        .zip(&residuals)
        .filter(|(_, r)| **r > floor)
        .map(|(h, r)| (*h, *r))
        .collect();
    let slope = if pts.len() >= 2 {
        let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        loglog_slope(&xs, &ys)
    } else {
        None
    };
    (spacings, residuals, slope)
}

/// Residuals over a refinement schedule with the fitted order.
pub fn residual_convergence(
    surface: &Surface,
    kernel: &Kernel,
    i: usize,
    j: usize,
    levels: &[u32],
) -> Result<ConvergenceStudy> {
    let mut reports = Vec::with_capacity(levels.len());
    for &l in levels {
        let ctx = simons_context(surface, kernel, l)?;
        reports.push(simons_residual(&ctx, i, j)?);
    }
    let (spacings, residuals, slope) = fit_order(&reports);
    let pass = reports.iter().all(|r| r.pass) && slope.is_none_or(|s| s >= 1.0);
    Ok(ConvergenceStudy {
        levels: levels.to_vec(),
        spacings,
        residuals,
        slope,
        reports,
        pass,
    })
}
