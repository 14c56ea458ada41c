//! Function-case operators `H_{K,u}`, `c²_{K,u}`, `L_{K,u}` with the measure
//! `dμ_u = |∇u| dy`, and the residual of the corresponding Simons formula.
//!
//! Volume integrals use a tensor midpoint grid on a box aligned with the
//! adapted frame at the evaluation point. Cells where `|∇u| < g_min` are left
//! out of every integrand that needs `ν_u`, `S_u` or `H_u`; their possible
//! contribution is bounded and added to the budget.

mod checks;
mod functions;

pub use checks::{coarea_check, sharp_interface_check, CoareaReport, SharpInterfaceReport, SharpInterfaceRow};
pub use functions::{parse_level_set, LevelSetFunction, LevelSetKind};

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{fd_gradient, RigidMotion, ScalarField, M3, V3};
use crate::identities::{fit_order, ConvergenceStudy, ResidualParameters, ResidualReport, Term, SAFETY};
use crate::kernels::{Family, Kernel, SmoothProfile};
use crate::nonlocal_ops::{kernel_gradient_vec, shell_potential};
use crate::quadrature::reduce::{pairwise_sum, sum_map_n};

/// Default ratio `g_min / max|∇u|`.
pub const GMIN_RATIO: f64 = 1e-3;

/// A test function placed in space by a rigid motion: `u_w(y) = u(Qᵀ(y − t))`.
#[derive(Clone, Debug)]
pub struct LevelSetProblem {
    pub function: Arc<dyn LevelSetFunction>,
    pub motion: RigidMotion,
}

/// Pointwise level-set data.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LevelSetPoint {
    pub x: V3,
    pub u: f64,
    pub grad: V3,
    pub grad_norm: f64,
    /// `−∇u/|∇u|`, zero at critical points.
    pub nu: V3,
    /// `δ_jν_i = −(P∇²uP)_ij/|∇u|`.
    pub s: M3,
    /// Mean curvature of the level set, `tr S`.
    pub h: f64,
    pub hessian_norm: f64,
}

impl LevelSetProblem {
    pub fn new(function: Arc<dyn LevelSetFunction>) -> Self {
        LevelSetProblem {
            function,
            motion: RigidMotion::identity(),
        }
    }

    pub fn from_kind(kind: LevelSetKind) -> Self {
        LevelSetProblem::new(Arc::new(kind))
    }

    pub fn moved(&self, m: &RigidMotion) -> Self {
        LevelSetProblem {
            function: self.function.clone(),
            motion: m.compose(&self.motion),
        }
    }

    pub fn name(&self) -> String {
        self.function.name()
    }

    /// Image of the body origin, where the catalog functions have `ν_u = e3`.
    pub fn base_point(&self) -> V3 {
        self.motion.t
    }

    fn body(&self, y: &V3) -> V3 {
        self.motion.q.transpose() * (y - self.motion.t)
    }

    pub fn value(&self, y: &V3) -> f64 {
        self.function.value(&self.body(y))
    }

    pub fn point(&self, y: &V3) -> LevelSetPoint {
        let yb = self.body(y);
        let q = &self.motion.q;
        let grad = q * self.function.gradient(&yb);
        let hess = q * self.function.hessian(&yb) * q.transpose();
        let gn = grad.norm();
        let (nu, s) = if gn > 0.0 {
            let nu = -grad / gn;
            let p = M3::identity() - nu * nu.transpose();
            (nu, -(p * hess * p) / gn)
        } else {
            (V3::zeros(), M3::zeros())
        };
        LevelSetPoint {
            x: *y,
            u: self.function.value(&yb),
            grad,
            grad_norm: gn,
            nu,
            s,
            h: s.trace(),
            hessian_norm: hess.norm(),
        }
    }

    /// Adapted frame `(t1, t2, ν_u)` at `x`, built in body coordinates so that
    /// it moves with the problem.
    pub fn adapted_frame(&self, x: &V3) -> Result<[V3; 3]> {
        let yb = self.body(x);
        let g = self.function.gradient(&yb);
        if g.norm() == 0.0 {
            return Err(Error::Degenerate(format!("∇u vanishes at {x:?}")));
        }
        let nu = -g / g.norm();
        let seed = if nu.x.abs() < 0.9 { V3::x() } else { V3::y() };
        let t1 = (seed - nu * nu.dot(&seed)).normalize();
        let t2 = nu.cross(&t1);
        let q = &self.motion.q;
        Ok([q * t1, q * t2, q * nu])
    }
}

/// Midpoint grid with `n³` cells on the box `x + Σ c_k a_k`, `|c_k| ≤ w`,
/// restricted to the ball `|z − x| < w`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VolumeGrid {
    pub center: V3,
    pub axes: [V3; 3],
    pub half_width: f64,
    pub n: usize,
}

impl VolumeGrid {
    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.n as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(3)
    }

    pub fn coarsened(&self) -> Self {
        VolumeGrid {
            n: self.n / 2,
            ..*self
        }
    }

    fn coord(&self, i: usize) -> f64 {
        -self.half_width + (i as f64 + 0.5) * self.spacing()
    }

    /// `Σ_cells f(z)` (unweighted), reduced slab by slab so the result does
    /// not depend on the thread count.
    pub fn sum<const K: usize, F>(&self, f: F) -> [f64; K]
    where
        F: Fn(&V3) -> [f64; K] + Sync + Send,
    {
        let n = self.n;
        let w2 = self.half_width * self.half_width;
        sum_map_n::<K, _>(n, |i| {
            let ci = self.coord(i);
            let mut rows = vec![[0.0; K]; n];
            for (j, row) in rows.iter_mut().enumerate() {
                let cj = self.coord(j);
                for k in 0..n {
                    let ck = self.coord(k);
                    if ci * ci + cj * cj + ck * ck >= w2 {
                        continue;
                    }
                    let z = self.center + self.axes[0] * ci + self.axes[1] * cj + self.axes[2] * ck;
                    let v = f(&z);
                    for (a, b) in row.iter_mut().zip(v) {
                        *a += b;
                    }
                }
            }
            let mut out = [0.0; K];
            let mut col = vec![0.0; n];
            for (c, o) in out.iter_mut().enumerate() {
                for (dst, row) in col.iter_mut().zip(&rows) {
                    *dst = row[c];
                }
                *o = pairwise_sum(&col);
            }
            out
        })
    }

    fn depth(&self) -> f64 {
        ((self.n * self.n * self.n).max(2) as f64).log2().ceil()
    }

    /// Roundoff allowance for a sum with absolute sum `abs` (already weighted).
    fn roundoff(&self, abs: f64) -> f64 {
        8.0 * f64::EPSILON * (self.depth() + self.n as f64) * abs
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GridOptions {
    /// Cells per axis; even, at least 4.
    pub n: usize,
    pub gmin_ratio: f64,
    /// Box half-width for kernels without compact support, in units of the
    /// kernel width.
    pub width_factor: f64,
}

impl Default for GridOptions {
    fn default() -> Self {
        GridOptions {
            n: 128,
            gmin_ratio: GMIN_RATIO,
            width_factor: 8.0,
        }
    }
}

impl GridOptions {
    pub fn with_n(n: usize) -> Self {
        GridOptions {
            n,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n < 4 || self.n % 2 != 0 {
            return Err(Error::Parameter(format!("grid size must be even and ≥ 4, got {}", self.n)));
        }
        if !(self.gmin_ratio > 0.0 && self.gmin_ratio < 1.0) {
            return Err(Error::Parameter("g_min ratio must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// A grid value with its error budget.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GridValue {
    pub value: f64,
    /// `|V_N − V_{N/2}|`.
    pub quadrature_error: f64,
    /// Bound on the contribution of cells with `|∇u| < g_min`.
    pub excluded_bound: f64,
    pub tail_bound: f64,
    pub roundoff: f64,
}

impl GridValue {
    pub fn budget(&self) -> f64 {
        self.quadrature_error + self.excluded_bound + self.tail_bound + self.roundoff
    }

    fn term(&self) -> Term {
        Term::new(self.value, self.budget())
    }

    fn scaled(&self, c: f64) -> GridValue {
        GridValue {
            value: c * self.value,
            quadrature_error: c.abs() * self.quadrature_error,
            excluded_bound: c.abs() * self.excluded_bound,
            tail_bound: c.abs() * self.tail_bound,
            roundoff: c.abs() * self.roundoff,
        }
    }
}

fn compact_support(kernel: &Kernel) -> Result<f64> {
    check_dimension(kernel)?;
    match kernel.support_radius() {
        Some(e) if !kernel.is_singular() => Ok(e),
        _ => Err(Error::Unsupported(format!(
            "level-set operators need a smooth compactly supported kernel, got {}",
            kernel.label()
        ))),
    }
}

fn check_dimension(kernel: &Kernel) -> Result<()> {
    if kernel.dimension() != 3 {
        return Err(Error::Parameter(format!(
            "kernel dimension {} does not match the ambient dimension 3",
            kernel.dimension()
        )));
    }
    Ok(())
}

fn grid_at(p: &LevelSetProblem, x: &V3, half_width: f64, n: usize) -> VolumeGrid {
    // Critical points (e.g. a constant u) fall back to the body axes.
    let q = &p.motion.q;
    let axes = p
        .adapted_frame(x)
        .unwrap_or_else(|_| [q.column(0).into(), q.column(1).into(), q.column(2).into()]);
    VolumeGrid {
        center: *x,
        axes,
        half_width,
        n,
    }
}

/// `g_min = ratio · max|∇u|` over the grid cells.
fn gmin(p: &LevelSetProblem, grid: &VolumeGrid, ratio: f64) -> f64 {
    use rayon::prelude::*;
    let n = grid.n;
    let w2 = grid.half_width * grid.half_width;
    let best = (0..n)
        .into_par_iter()
        .map(|i| {
            let ci = grid.coord(i);
            let mut m = 0.0f64;
            for j in 0..n {
                let cj = grid.coord(j);
                for k in 0..n {
                    let ck = grid.coord(k);
                    if ci * ci + cj * cj + ck * ck >= w2 {
                        continue;
                    }
                    let z = grid.center + grid.axes[0] * ci + grid.axes[1] * cj + grid.axes[2] * ck;
                    m = m.max(p.point(&z).grad_norm);
                }
            }
            m
        })
        .reduce(|| 0.0, f64::max);
    ratio * best
}

/// Point data at `x`, rejecting critical points.
fn regular_point(p: &LevelSetProblem, x: &V3, g_min: f64) -> Result<LevelSetPoint> {
    let px = p.point(x);
    if !(px.grad_norm >= g_min) || px.grad_norm == 0.0 {
        return Err(Error::Degenerate(format!(
            "|∇u(x)| = {:.3e} is below g_min = {g_min:.3e}",
            px.grad_norm
        )));
    }
    Ok(px)
}

/// `H_{K,u}(x) = C_K − ∫u(y)K(x−y)dy`, evaluated as `∫(½ − u(y))K(x−y)dy`.
pub fn h_ku(p: &LevelSetProblem, kernel: &Kernel, x: &V3, opts: &GridOptions) -> Result<GridValue> {
    opts.validate()?;
    check_dimension(kernel)?;
    let sup = p.function.bound();
    if !sup.is_finite() {
        return Err(Error::Hypothesis(format!("H_K,u needs a bounded u, {} is unbounded", p.name())));
    }
    if kernel.is_singular() || kernel.mass_constant().is_none() {
        return Err(Error::Unsupported(format!("H_K,u needs an integrable kernel, got {}", kernel.label())));
    }
    let (w, tail) = match (kernel.support_radius(), kernel.family()) {
        (Some(e), _) => (e, 0.0),
        (
            None,
            Family::SmoothIntegrable {
                profile: SmoothProfile::Gaussian { sigma, .. },
            },
        ) => {
            let w = opts.width_factor * sigma;
            (w, (0.5 + sup) * 4.0 * std::f64::consts::PI * shell_potential(kernel, w))
        }
        _ => return Err(Error::Unsupported(format!("no truncation rule for {}", kernel.label()))),
    };
    let grid = grid_at(p, x, w, opts.n);
    let eval = |g: &VolumeGrid| {
        let s = g.sum::<2, _>(|z| {
            let v = (0.5 - p.value(z)) * kernel.value((x - z).norm());
            [v, v.abs()]
        });
        [s[0] * g.cell_volume(), s[1] * g.cell_volume()]
    };
    let fine = eval(&grid);
    let coarse = eval(&grid.coarsened());
    Ok(GridValue {
        value: fine[0],
        quadrature_error: (fine[0] - coarse[0]).abs(),
        excluded_bound: 0.0,
        tail_bound: tail,
        roundoff: grid.roundoff(fine[1]),
    })
}

/// Both forms of `c²_{K,u}(x)` on the same cells.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LevelSetCurvature {
    /// `½∫|ν(x) − ν(y)|²K dμ`.
    pub value: GridValue,
    /// `∫K dμ − ν(x)·∫νK dμ`.
    pub rearranged: f64,
    /// Roundoff scale of the rearranged form, `∫K dμ`.
    pub rearranged_scale: f64,
    pub g_min: f64,
}

pub fn c_ku_sq(p: &LevelSetProblem, kernel: &Kernel, x: &V3, opts: &GridOptions) -> Result<LevelSetCurvature> {
    opts.validate()?;
    let eps = compact_support(kernel)?;
    let grid = grid_at(p, x, eps, opts.n);
    let g_min = gmin(p, &grid, opts.gmin_ratio);
    let px = regular_point(p, x, g_min)?;
    let eval = |g: &VolumeGrid| {
        let s = g.sum::<7, _>(|z| {
            let q = p.point(z);
            let k = kernel.value((x - z).norm());
            if q.grad_norm < g_min {
                return [0.0, 0.0, 2.0 * k * q.grad_norm, 0.0, 0.0, 0.0, 0.0];
            }
            let wk = k * q.grad_norm;
            let v = 0.5 * (px.nu - q.nu).norm_squared() * wk;
            [v, v.abs(), 0.0, wk, wk * q.nu.x, wk * q.nu.y, wk * q.nu.z]
        });
        s.map(|v| v * g.cell_volume())
    };
    let fine = eval(&grid);
    let coarse = eval(&grid.coarsened());
    let rearranged = fine[3] - px.nu.dot(&V3::new(fine[4], fine[5], fine[6]));
    Ok(LevelSetCurvature {
        value: GridValue {
            value: fine[0],
            quadrature_error: (fine[0] - coarse[0]).abs(),
            excluded_bound: fine[2],
            tail_bound: 0.0,
            roundoff: grid.roundoff(fine[1]),
        },
        rearranged,
        rearranged_scale: fine[3].abs(),
        g_min,
    })
}

/// Field on space evaluated through the level-set data.
pub struct LevelSetField<'a> {
    f: Box<dyn Fn(&LevelSetPoint) -> f64 + Sync + Send + 'a>,
    bound: FieldBound,
}

#[derive(Clone, Copy, Debug)]
enum FieldBound {
    Sup(f64),
    /// `|g(y)||∇u(y)| ≤ |∇²u(y)|`, true for entries of `S_u`.
    Shape,
}

impl<'a> LevelSetField<'a> {
    pub fn new(f: impl Fn(&LevelSetPoint) -> f64 + Sync + Send + 'a, sup: f64) -> Self {
        LevelSetField {
            f: Box::new(f),
            bound: FieldBound::Sup(sup),
        }
    }

    pub fn constant(c: f64) -> Self {
        LevelSetField::new(move |_| c, c.abs())
    }

    pub fn ambient(g: impl ScalarField + 'a, sup: f64) -> Self {
        LevelSetField::new(move |q| g.value(&q.x), sup)
    }

    /// `a_iᵀ S_u a_j` for fixed ambient vectors.
    pub fn shape_entry(ai: V3, aj: V3) -> Self {
        LevelSetField {
            f: Box::new(move |q| ai.dot(&(q.s * aj))),
            bound: FieldBound::Shape,
        }
    }

    pub fn at(&self, q: &LevelSetPoint) -> f64 {
        (self.f)(q)
    }

    /// Bound on `|g(x) − g(y)||∇u(y)|` at an excluded cell.
    fn excluded(&self, gx: f64, q: &LevelSetPoint) -> f64 {
        match self.bound {
            FieldBound::Sup(s) => (gx.abs() + s) * q.grad_norm,
            FieldBound::Shape => gx.abs() * q.grad_norm + q.hessian_norm,
        }
    }
}

/// `L_{K,u} g(x) = ∫(g(x) − g(y))K(x−y) dμ_u`.
pub fn l_ku_apply(p: &LevelSetProblem, kernel: &Kernel, g: &LevelSetField, x: &V3, opts: &GridOptions) -> Result<GridValue> {
    opts.validate()?;
    let eps = compact_support(kernel)?;
    let grid = grid_at(p, x, eps, opts.n);
    let g_min = gmin(p, &grid, opts.gmin_ratio);
    let px = regular_point(p, x, g_min)?;
    let gx = g.at(&px);
    let eval = |gr: &VolumeGrid| {
        let s = gr.sum::<3, _>(|z| {
            let q = p.point(z);
            let k = kernel.value((x - z).norm());
            if q.grad_norm < g_min {
                return [0.0, 0.0, g.excluded(gx, &q) * k];
            }
            let v = (gx - g.at(&q)) * k * q.grad_norm;
            [v, v.abs(), 0.0]
        });
        s.map(|v| v * gr.cell_volume())
    };
    let fine = eval(&grid);
    let coarse = eval(&grid.coarsened());
    Ok(GridValue {
        value: fine[0],
        quadrature_error: (fine[0] - coarse[0]).abs(),
        excluded_bound: fine[2],
        tail_bound: 0.0,
        roundoff: grid.roundoff(fine[1]),
    })
}

/// Tangential derivative `δ_{u,i} f = ∂_i f − ν_i ν·∇f` along the level set
/// through `x` (ambient index `i ∈ {1,2,3}`), by central differences.
pub fn delta_u(p: &LevelSetProblem, f: &dyn ScalarField, x: &V3, i: usize, h: f64) -> Result<f64> {
    if !(1..=3).contains(&i) {
        return Err(Error::Parameter(format!("index {i} outside 1..=3")));
    }
    let q = p.point(x);
    if q.grad_norm == 0.0 {
        return Err(Error::Degenerate(format!("∇u vanishes at {x:?}")));
    }
    let g = fd_gradient(f, x, h)?;
    Ok(g[i - 1] - q.nu[i - 1] * q.nu.dot(&g))
}

/// Residual of `δ_iδ_j H_{K,u} = −L_{K,u}S_ij + c²_{K,u}S_ij − ∫(H_u K − ν·∇K)ν_iν_j dμ`
/// at `x`, with `i, j ∈ {1, 2}` in the adapted frame there.
///
/// The left side uses `∇H_{K,u} = ∫νK dμ`, differentiated under the integral:
/// `∫ν_i(y)∂_jK(x−y)dμ − S_ij(x) ν(x)·∫ν(y)K(x−y)dμ`. Since `ν dμ = −∇u dy`
/// this needs no low-gradient cut.
pub fn simons_u_residual(
    p: &LevelSetProblem,
    kernel: &Kernel,
    x: &V3,
    i: usize,
    j: usize,
    opts: &GridOptions,
) -> Result<ResidualReport> {
    opts.validate()?;
    if !(1..=2).contains(&i) || !(1..=2).contains(&j) {
        return Err(Error::Parameter(format!("tangential indices must lie in 1..=2, got ({i}, {j})")));
    }
    let eps = compact_support(kernel)?;
    let frame = p.adapted_frame(x)?;
    let grid = grid_at(p, x, eps, opts.n);
    let g_min = gmin(p, &grid, opts.gmin_ratio);
    let px = regular_point(p, x, g_min)?;
    let (ti, tj) = (frame[i - 1], frame[j - 1]);
    let sij = ti.dot(&(px.s * tj));
    let sji = tj.dot(&(px.s * ti));
    let nux = px.nu;

    let eval = |gr: &VolumeGrid| {
        let s = gr.sum::<14, _>(|z| {
            let q = p.point(z);
            let d = x - z;
            let k = kernel.value(d.norm());
            let dk = kernel_gradient_vec(kernel, &d);
            // ν dμ = −∇u dy
            let nmu = -q.grad;
            let l1 = ti.dot(&nmu) * tj.dot(&dk);
            let l1s = tj.dot(&nmu) * ti.dot(&dk);
            let l2 = nux.dot(&nmu) * k;
            let mut out = [0.0; 14];
            out[0] = l1;
            out[1] = l1s;
            out[2] = l2;
            out[3] = l1.abs() + l1s.abs() + l2.abs();
            if q.grad_norm < g_min {
                let g = q.grad_norm;
                out[10] = (sij.abs() * g + q.hessian_norm) * k;
                out[11] = 2.0 * k * g;
                out[12] = std::f64::consts::SQRT_2 * q.hessian_norm * k + dk.norm() * g;
                return out;
            }
            let wmu = q.grad_norm;
            let lk = (sij - ti.dot(&(q.s * tj))) * k * wmu;
            let c2 = 0.5 * (nux - q.nu).norm_squared() * k * wmu;
            let geo = (q.h * k - q.nu.dot(&dk)) * ti.dot(&q.nu) * tj.dot(&q.nu) * wmu;
            out[4] = lk;
            out[5] = lk.abs();
            out[6] = c2;
            out[7] = c2.abs();
            out[8] = geo;
            out[9] = geo.abs();
            out
        });
        s.map(|v| v * gr.cell_volume())
    };
    let fine = eval(&grid);
    let coarse = eval(&grid.coarsened());

    let lhs_of = |s: &[f64; 14]| s[0] - sij * s[2];
    let lhs_swapped_of = |s: &[f64; 14]| s[1] - sji * s[2];
    let value = |f: &dyn Fn(&[f64; 14]) -> f64, ex: f64, abs: f64| GridValue {
        value: f(&fine),
        quadrature_error: (f(&fine) - f(&coarse)).abs(),
        excluded_bound: ex,
        tail_bound: 0.0,
        roundoff: grid.roundoff(abs),
    };
    let lhs = value(&lhs_of, 0.0, fine[3] * (1.0 + sij.abs()));
    let lhs_sw = value(&lhs_swapped_of, 0.0, fine[3] * (1.0 + sji.abs()));
    let lk = value(&|s| s[4], fine[10], fine[5]).scaled(-1.0);
    let c2 = value(&|s| s[6], fine[11], fine[7]).scaled(sij);
    let geo = value(&|s| s[8], fine[12], fine[9]).scaled(-1.0);

    let residual = lhs.value - (lk.value + c2.value + geo.value);
    let budget = lhs.budget() + lk.budget() + c2.budget() + geo.budget();
    let defect = (lhs.value - lhs_sw.value).abs();
    Ok(ResidualReport {
        parameters: ResidualParameters {
            surface: p.name(),
            kernel: kernel.label(),
            i,
            j,
            delta: 0.0,
            truncation: eps,
            level: opts.n.trailing_zeros(),
            spacing: grid.spacing(),
            fd_step: 0.0,
        },
        term_lhs: lhs.term(),
        term_lk: lk.term(),
        term_c2: c2.term(),
        term_geo: geo.term(),
        residual,
        budget,
        pass: residual.abs() <= SAFETY * budget,
        lhs_swapped: lhs_sw.value,
        symmetry_defect: defect,
        symmetry_pass: defect <= SAFETY * (lhs.budget() + lhs_sw.budget()),
        roundoff: lhs.roundoff + lk.roundoff + c2.roundoff + geo.roundoff,
    })
}

/// Residuals on grids `n ∈ sizes` with the log-log slope of `|residual|`
/// against the cell size over the points above the roundoff floor.
pub fn simons_u_convergence(
    p: &LevelSetProblem,
    kernel: &Kernel,
    x: &V3,
    i: usize,
    j: usize,
    sizes: &[usize],
) -> Result<ConvergenceStudy> {
    let mut reports = Vec::with_capacity(sizes.len());
    for &n in sizes {
        reports.push(simons_u_residual(p, kernel, x, i, j, &GridOptions::with_n(n))?);
    }
    let (spacings, residuals, slope) = fit_order(&reports);
    let pass = reports.iter().all(|r| r.pass) && slope.is_none_or(|s| s >= 1.0);
    Ok(ConvergenceStudy {
        levels: sizes.iter().map(|n| n.trailing_zeros()).collect(),
        spacings,
        residuals,
        slope,
        reports,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::gauss::gauss_legendre_on;
    use std::f64::consts::PI;

    fn problem(spec: &str) -> LevelSetProblem {
        LevelSetProblem::from_kind(parse_level_set(spec).unwrap())
    }

    fn moll(eps: f64) -> Kernel {
        Kernel::mollifier(3, eps).unwrap()
    }

    /// `∫F(x + rω)K(r)` in spherical coordinates about `x` with the polar
    /// axis along `axis`, for integrands depending on `(r, cos θ)` only.
    fn axisymmetric(f: impl Fn(f64, f64) -> f64, kernel: &Kernel, rmax: f64, n: usize) -> f64 {
        let mut s = 0.0;
        for (r, wr) in gauss_legendre_on(n, 0.0, rmax) {
            for (m, wm) in gauss_legendre_on(n, -1.0, 1.0) {
                s += wr * wm * 2.0 * PI * r * r * kernel.value(r) * f(r, m);
            }
        }
        s
    }

    #[test]
    fn constant_half_has_zero_mean_curvature() {
        let p = problem("constant:0.5");
        let v = h_ku(&p, &moll(0.3), &V3::zeros(), &GridOptions::with_n(16)).unwrap();
        assert_eq!(v.value, 0.0);
    }

    #[test]
    fn midlevel_of_odd_profile_has_zero_mean_curvature() {
        let p = problem("sigmoid-plane:7");
        let v = h_ku(&p, &moll(0.3), &V3::zeros(), &GridOptions::with_n(32)).unwrap();
        assert!(v.value.abs() < 1e-15, "{v:?}");
    }

    #[test]
    fn unbounded_u_is_rejected() {
        let p = problem("linear");
        assert!(matches!(
            h_ku(&p, &moll(0.3), &V3::zeros(), &GridOptions::with_n(8)),
            Err(Error::Hypothesis(_))
        ));
    }

    #[test]
    fn radial_gaussian_mean_curvature_matches_spherical_oracle() {
        let sigma = 0.8;
        let p = problem(&format!("radial-gaussian:{sigma}"));
        let k = moll(0.3);
        let v = h_ku(&p, &k, &V3::zeros(), &GridOptions::with_n(128)).unwrap();
        // |x + rω − c|² = σ² + r² + 2σ r cos θ with the axis along x − c = σ e3.
        let conv = axisymmetric(
            |r, m| (-(sigma * sigma + r * r + 2.0 * sigma * r * m) / (2.0 * sigma * sigma)).exp(),
            &k,
            0.3,
            64,
        );
        let oracle = k.mass_constant().unwrap() - conv;
        assert!((v.value - oracle).abs() < 1e-6, "{} vs {oracle}", v.value);
        assert!(v.budget() < 1e-6);
    }

    #[test]
    fn gaussian_kernel_has_tail_budget() {
        let p = problem("radial-gaussian:1");
        let k = Kernel::gaussian(3, 1.0, 0.1).unwrap();
        let v = h_ku(&p, &k, &V3::zeros(), &GridOptions::with_n(32)).unwrap();
        assert!(v.tail_bound > 0.0 && v.tail_bound < 1e-10);
    }

    #[test]
    fn linear_has_zero_total_curvature() {
        let p = problem("linear:0.2,0.1,-1,0");
        let c = c_ku_sq(&p, &moll(0.3), &V3::zeros(), &GridOptions::with_n(16)).unwrap();
        assert!(c.value.value.abs() < 1e-15);
        assert_eq!(c.value.excluded_bound, 0.0);
    }

    #[test]
    fn radial_total_curvature_matches_angular_reduction() {
        // Level sets are spheres about c; ν(y) = (y − c)/|y − c| outward.
        let (radius, k_steep) = (1.0, 6.0);
        let p = problem(&format!("sigmoid-sphere:{radius},{k_steep}"));
        let k = moll(0.3);
        let c = c_ku_sq(&p, &k, &V3::zeros(), &GridOptions::with_n(96)).unwrap();
        let oracle = axisymmetric(
            |r, m| {
                // y − c = R e3 + r ω; cos of the angle between ν(x) = e3 and ν(y).
                let d = (radius * radius + r * r + 2.0 * radius * r * m).sqrt();
                let cosang = (radius + r * m) / d;
                let z = k_steep * (radius - d);
                let sp = (-z.abs()).exp() / (1.0 + (-z.abs()).exp()).powi(2);
                (1.0 - cosang) * k_steep * sp
            },
            &k,
            0.3,
            96,
        );
        assert!((c.value.value - oracle).abs() < 1e-6, "{} vs {oracle}", c.value.value);
    }

    #[test]
    fn rearranged_total_curvature_agrees() {
        for spec in ["sigmoid-sphere:1,5", "anisotropic-sigmoid:1,1.5,0.8,4", "radial-gaussian:0.9"] {
            let c = c_ku_sq(&problem(spec), &moll(0.3), &V3::zeros(), &GridOptions::with_n(24)).unwrap();
            assert!((c.value.value - c.rearranged).abs() <= 1e-12 * c.rearranged_scale.max(1.0), "{spec}");
        }
    }

    #[test]
    fn operator_annihilates_constants() {
        let p = problem("sigmoid-sphere:1,5");
        let v = l_ku_apply(&p, &moll(0.3), &LevelSetField::constant(2.5), &V3::zeros(), &GridOptions::with_n(16)).unwrap();
        assert_eq!(v.value, 0.0);
    }

    #[test]
    fn linear_data_cancels_on_symmetric_box() {
        let p = problem("linear:0,0,-2,0");
        let g = LevelSetField::ambient(|y: &V3| 0.3 * y.x - 0.7 * y.y + 0.2 * y.z + 1.0, 2.0);
        let v = l_ku_apply(&p, &moll(0.3), &g, &V3::zeros(), &GridOptions::with_n(32)).unwrap();
        assert!(v.value.abs() < 1e-10, "{v:?}");
    }

    #[test]
    fn delta_u_kills_constants() {
        let p = problem("anisotropic-sigmoid");
        let x = V3::new(0.1, -0.2, 0.05);
        for i in 1..=3 {
            assert_eq!(delta_u(&p, &|_: &V3| 3.0, &x, i, 1e-3).unwrap(), 0.0);
        }
        // u itself is constant along its level sets.
        let u = p.function.clone();
        let d = delta_u(&p, &move |y: &V3| u.value(y), &x, 1, 1e-5).unwrap();
        assert!(d.abs() < 1e-6);
    }

    #[test]
    fn linear_residual_terms_vanish() {
        let p = problem("linear");
        for (i, j) in [(1, 1), (1, 2), (2, 2)] {
            let r = simons_u_residual(&p, &moll(0.3), &V3::zeros(), i, j, &GridOptions::with_n(16)).unwrap();
            for t in [r.term_lhs, r.term_lk, r.term_c2, r.term_geo] {
                assert!(t.value.abs() < 1e-15, "{r:?}");
            }
            assert!(r.pass);
        }
    }

    #[test]
    fn sigmoid_sphere_residual_passes() {
        let p = problem("sigmoid-sphere:1,8");
        for (i, j) in [(1, 1), (1, 2), (2, 2)] {
            let r = simons_u_residual(&p, &moll(0.3), &V3::zeros(), i, j, &GridOptions::with_n(48)).unwrap();
            assert!(r.pass && r.symmetry_pass, "{r:?}");
        }
    }

    #[test]
    fn anisotropic_residual_passes_off_base() {
        let p = problem("anisotropic-sigmoid:1,1.5,0.8,4");
        let x = V3::new(0.05, 0.1, -0.05);
        let r = simons_u_residual(&p, &moll(0.3), &x, 1, 2, &GridOptions::with_n(48)).unwrap();
        assert!(r.pass, "{r:?}");
        let largest = [r.term_lhs, r.term_lk, r.term_c2, r.term_geo]
            .iter()
            .map(|t| t.value.abs())
            .fold(0.0, f64::max);
        assert!(largest > 1e3 * r.residual.abs(), "{r:?}");
    }

    #[test]
    fn residual_is_frame_covariant() {
        let p = problem("anisotropic-sigmoid:1,1.5,0.8,4");
        let m = RigidMotion::from_axis_angle(V3::new(0.3, -1.0, 0.5), 0.9, V3::new(0.4, 1.1, -0.2));
        let q = p.moved(&m);
        let k = moll(0.3);
        let opts = GridOptions::with_n(24);
        let a = simons_u_residual(&p, &k, &V3::zeros(), 1, 2, &opts).unwrap();
        let b = simons_u_residual(&q, &k, &q.base_point(), 1, 2, &opts).unwrap();
        for (s, t) in [
            (a.term_lhs, b.term_lhs),
            (a.term_lk, b.term_lk),
            (a.term_c2, b.term_c2),
            (a.term_geo, b.term_geo),
        ] {
            assert!((s.value - t.value).abs() < 1e-10, "{s:?} {t:?}");
        }
    }

    #[test]
    fn degenerate_point_is_an_error() {
        let p = problem("radial-gaussian:1");
        let c = V3::new(0.0, 0.0, -1.0);
        assert!(matches!(
            c_ku_sq(&p, &moll(0.3), &c, &GridOptions::with_n(8)),
            Err(Error::Degenerate(_))
        ));
    }
}
