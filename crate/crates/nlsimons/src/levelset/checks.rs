//! Coarea slicing and sharp-interface comparisons against the surface
//! operators.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use super::{c_ku_sq, h_ku, l_ku_apply, GridOptions, GridValue, LevelSetField, LevelSetFunction, LevelSetKind, LevelSetProblem, VolumeGrid};
use crate::error::{Error, Result};
use crate::geometry::{sphere_global_rule, ScalarField, Sphere, Surface, V3};
use crate::identities::SAFETY;
use crate::kernels::Kernel;
use crate::nonlocal_ops::{lk_apply, nonlocal_mean_curvature, total_curvature_sq, Bump, HForm, OperatorContext, SurfaceField};
use crate::quadrature::gauss::gauss_legendre_on;
use crate::quadrature::reduce::pairwise_sum;

/// Relative tolerance of the coarea cross-check.
pub const COAREA_TOL: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoareaReport {
    pub function: String,
    pub bump_center: [f64; 3],
    pub bump_radius: f64,
    /// `∫g|∇u|dy` on the midpoint grid.
    pub volume: f64,
    /// `∫(∫_{u=t} g dH²)dt` with Gauss–Legendre levels.
    pub sliced: f64,
    pub t_range: [f64; 2],
    pub relative_error: f64,
    pub pass: bool,
}

/// Compares `∫g dμ_u` with the integral over `t` of the level-set integrals
/// of `g`, for `g` a bump.
pub fn coarea_check(
    u: &dyn LevelSetFunction,
    g: &Bump,
    grid_n: usize,
    levels: usize,
    level_nodes: usize,
) -> Result<CoareaReport> {
    if grid_n < 4 || grid_n % 2 != 0 || levels == 0 || level_nodes == 0 {
        return Err(Error::Parameter(
            "coarea check needs an even grid ≥ 4 and positive level counts".into(),
        ));
    }
    let grid = VolumeGrid {
        center: g.center,
        axes: [V3::x(), V3::y(), V3::z()],
        half_width: g.radius,
        n: grid_n,
    };
    let [vol] = grid.sum::<1, _>(|z| [g.value(z) * u.gradient(z).norm()]);
    let volume = vol * grid.cell_volume();
    let [lo, hi, gmax] = scan(u, &grid);
    let pad = 2.0 * grid.spacing() * gmax;
    let (t0, t1) = (lo - pad, hi + pad);
    let slices: Vec<f64> = gauss_legendre_on(levels, t0, t1)
        .into_par_iter()
        .map(|(t, w)| {
            let nodes = u.level_set_nodes(t, level_nodes, (g.center, g.radius));
            let vals: Vec<f64> = nodes.iter().map(|(p, a)| a * g.value(p)).collect();
            w * pairwise_sum(&vals)
        })
        .collect();
    let sliced = pairwise_sum(&slices);
    let relative_error = (volume - sliced).abs() / volume.abs().max(f64::MIN_POSITIVE);
    Ok(CoareaReport {
        function: u.name(),
        bump_center: [g.center.x, g.center.y, g.center.z],
        bump_radius: g.radius,
        volume,
        sliced,
        t_range: [t0, t1],
        relative_error,
        pass: relative_error <= COAREA_TOL,
    })
}

/// `(min u, max u, max|∇u|)` over the cells of `grid`.
fn scan(u: &dyn LevelSetFunction, grid: &VolumeGrid) -> [f64; 3] {
    let n = grid.n;
    let w2 = grid.half_width * grid.half_width;
    (0..n)
        .into_par_iter()
        .map(|i| {
            let ci = grid.coord(i);
            let mut acc = [f64::INFINITY, f64::NEG_INFINITY, 0.0f64];
            for j in 0..n {
                let cj = grid.coord(j);
                for k in 0..n {
                    let ck = grid.coord(k);
                    if ci * ci + cj * cj + ck * ck >= w2 {
                        continue;
                    }
                    let z = grid.center + V3::new(ci, cj, ck);
                    let v = u.value(&z);
                    acc = [acc[0].min(v), acc[1].max(v), acc[2].max(u.gradient(&z).norm())];
                }
            }
            acc
        })
        .reduce(
            || [f64::INFINITY, f64::NEG_INFINITY, 0.0],
            |a, b| [a[0].min(b[0]), a[1].max(b[1]), a[2].max(b[2])],
        )
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SharpInterfaceRow {
    pub steepness: f64,
    /// `mean_curvature`, `total_curvature_sq` or `laplace_beltrami`.
    pub quantity: String,
    pub level_set: GridValue,
    pub surface_value: f64,
    pub surface_budget: f64,
    /// `π²/(6k²)·sup|Φ''|`, the smoothing error of the logistic profile.
    pub interface_budget: f64,
    pub difference: f64,
    /// `∫w(τ)Φ(τ)dτ` from concentric-shell integrals, `w` the logistic
    /// density of the profile.
    pub shell_prediction: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SharpInterfaceReport {
    pub radius: f64,
    pub kernel: String,
    pub grid_n: usize,
    pub rows: Vec<SharpInterfaceRow>,
    pub pass: bool,
}

/// Cap rule on the sphere `|y − c| = r`, `c = (0, 0, −R)`, covering the part
/// within `eps` of the origin: `(unit normal, weight)` pairs.
fn cap_nodes(big_r: f64, r: f64, eps: f64, n: usize) -> Vec<(V3, f64)> {
    let cmax = (big_r * big_r + r * r - eps * eps) / (2.0 * big_r * r);
    if cmax >= 1.0 {
        return Vec::new();
    }
    let tmax = cmax.max(-1.0).acos();
    let dphi = 2.0 * PI / n as f64;
    let mut out = Vec::with_capacity(n * n);
    for (th, w) in gauss_legendre_on(n, 0.0, tmax) {
        let (st, ct) = th.sin_cos();
        for k in 0..n {
            let ph = (k as f64 + 0.5) * dphi;
            out.push((V3::new(st * ph.cos(), st * ph.sin(), ct), w * dphi * r * r * st));
        }
    }
    out
}

/// `(∫K, ∫(1 − ν·e3)K, ∫(1/R − (1 − ν1²)/r)K)` over the concentric sphere of
/// radius `R + τ`, seen from the origin.
fn shell_profiles(kernel: &Kernel, big_r: f64, tau: f64, eps: f64, n: usize) -> [f64; 3] {
    let r = big_r + tau;
    if r <= 0.0 {
        return [0.0; 3];
    }
    let c = V3::new(0.0, 0.0, -big_r);
    let mut acc = [Vec::new(), Vec::new(), Vec::new()];
    for (nu, w) in cap_nodes(big_r, r, eps, n) {
        let k = w * kernel.value((c + nu * r).norm());
        acc[0].push(k);
        acc[1].push((1.0 - nu.z) * k);
        acc[2].push((1.0 / big_r - (1.0 - nu.x * nu.x) / r) * k);
    }
    acc.map(|v| pairwise_sum(&v))
}

/// `sup|Φ''|` over `|τ| ≤ ε` for the three profiles. Outside that range the
/// shells miss the kernel support and every `Φ''` vanishes.
fn profile_curvature_bounds(kernel: &Kernel, big_r: f64, eps: f64, n: usize) -> [f64; 3] {
    let m = 64;
    let d = eps / m as f64;
    let taus: Vec<f64> = (-(m as i64) - 1..=(m as i64) + 1).map(|k| k as f64 * d).collect();
    let vals: Vec<[f64; 3]> = taus
        .par_iter()
        .map(|&t| shell_profiles(kernel, big_r, t, eps, n))
        .collect();
    let mut sup = [0.0f64; 3];
    for k in 1..taus.len() - 1 {
        // Φ_H' = −∫_{S_{R+τ}} K, so Φ_H'' = −d/dτ of the first profile.
        let h2 = (vals[k + 1][0] - vals[k - 1][0]) / (2.0 * d);
        sup[0] = sup[0].max(h2.abs());
        for q in 1..3 {
            let v2 = (vals[k + 1][q] - 2.0 * vals[k][q] + vals[k - 1][q]) / (d * d);
            sup[q] = sup[q].max(v2.abs());
        }
    }
    sup
}

/// Level-set values predicted from concentric shells: with `W` the logistic
/// CDF of scale `1/k`, `H_u = −C_K + ∫W(τ)Ψ(τ)dτ` (`Ψ` the first profile) and
/// `V = ∫W'(τ)Φ(τ)dτ` for the other two.
fn shell_prediction(kernel: &Kernel, big_r: f64, k: f64, eps: f64, n: usize) -> Result<[f64; 3]> {
    let ck = kernel
        .mass_constant()
        .ok_or_else(|| Error::Unsupported("kernel mass is not available".into()))?;
    let mut nodes = gauss_legendre_on(128, -eps, 0.0);
    nodes.extend(gauss_legendre_on(128, 0.0, eps));
    let terms: Vec<[f64; 3]> = nodes
        .par_iter()
        .map(|&(t, w)| {
            let prof = shell_profiles(kernel, big_r, t, eps, n);
            let e = (-(k * t).abs()).exp();
            let cdf = if t >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
            let dens = k * e / ((1.0 + e) * (1.0 + e));
            [w * cdf * prof[0], w * dens * prof[1], w * dens * prof[2]]
        })
        .collect();
    let col = |q: usize| pairwise_sum(&terms.iter().map(|t| t[q]).collect::<Vec<_>>());
    Ok([col(0) - ck, col(1), col(2)])
}

/// Sigmoid profiles `u = s(k(R − |y − c|))` of steepness `k ∈ steepness`
/// against the sphere of radius `R` at its top point, for `H`, `c²` and
/// `L(δ_1ν_1)`.
pub fn sharp_interface_check(
    radius: f64,
    kernel: &Kernel,
    steepness: &[f64],
    grid_n: usize,
    sphere_n: usize,
) -> Result<SharpInterfaceReport> {
    let eps = kernel
        .support_radius()
        .filter(|_| !kernel.is_singular())
        .ok_or_else(|| Error::Unsupported("sharp-interface check needs a compact smooth kernel".into()))?;
    if eps >= radius {
        return Err(Error::Parameter("kernel support must be smaller than the sphere radius".into()));
    }
    let surface = Surface::new(Arc::new(Sphere::new(radius)));
    let ctx = OperatorContext::new(surface.clone(), kernel.clone(), sphere_global_rule(&surface, sphere_n)?)?
        .with_coarse(sphere_global_rule(&surface, sphere_n / 2)?);
    let e1 = V3::x();
    let h = nonlocal_mean_curvature(&ctx, HForm::Volume)?;
    let c = total_curvature_sq(&ctx)?.evaluated();
    let l = lk_apply(&ctx, &SurfaceField::shape_entry(e1, e1, 1.0 / radius))?;
    let surface_values = [(h.value, h.budget()), (c.value, c.budget()), (l.value, l.budget())];
    let sup = profile_curvature_bounds(kernel, radius, eps, 64);

    let x = V3::zeros();
    let opts = GridOptions::with_n(grid_n);
    let mut rows = Vec::new();
    for &k in steepness {
        let p = LevelSetProblem::from_kind(LevelSetKind::SigmoidSphere { radius, steepness: k });
        let vals = [
            h_ku(&p, kernel, &x, &opts)?,
            c_ku_sq(&p, kernel, &x, &opts)?.value,
            l_ku_apply(&p, kernel, &LevelSetField::shape_entry(e1, e1), &x, &opts)?,
        ];
        let pred = shell_prediction(kernel, radius, k, eps, 64)?;
        for (q, name) in ["mean_curvature", "total_curvature_sq", "laplace_beltrami"].iter().enumerate() {
            let (sv, sb) = surface_values[q];
            let interface_budget = PI * PI / (6.0 * k * k) * sup[q];
            let difference = (vals[q].value - sv).abs();
            rows.push(SharpInterfaceRow {
                steepness: k,
                quantity: name.to_string(),
                level_set: vals[q],
                surface_value: sv,
                surface_budget: sb,
                interface_budget,
                difference,
                shell_prediction: pred[q],
                pass: difference <= interface_budget + SAFETY * (vals[q].budget() + sb),
            });
        }
    }
    let pass = rows.iter().all(|r| r.pass);
    Ok(SharpInterfaceReport {
        radius,
        kernel: kernel.label(),
        grid_n,
        rows,
        pass,
    })
}
