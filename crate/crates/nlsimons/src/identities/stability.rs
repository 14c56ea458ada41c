//! Algebra of the stability argument on shared quadrature nodes: the
//! decomposition of `B(cη, cη)`, the bound on its cross term, and the final
//! inequality `−∫{½L_K c² + B(c,c) − c⁴}η² ≤ ∫c²B(η,η)`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::nonlocal_ops::{check_support, nonlocal_mean_curvature, HForm, OperatorContext, SurfaceField};
use crate::quadrature::reduce::pairwise_sum;

/// Relative tolerance for the exact algebraic steps.
pub const ALGEBRA_TOL: f64 = 1e-12;

/// `Σ_a w_a Σ_b w_b K(x_a − x_b) f(a, b)` for `K` components at once, with
/// the matching sums of absolute values.
fn pair_sums<const K: usize, F>(ctx: &OperatorContext, f: F) -> ([f64; K], [f64; K])
where
    F: Fn(usize, usize) -> [f64; K] + Sync + Send,
{
    let rule = &ctx.rule;
    let kernel = &ctx.kernel;
    let support = kernel.support_radius().unwrap_or(f64::INFINITY);
    let per_node: Vec<([f64; K], [f64; K])> = {
        use rayon::prelude::*;
        (0..rule.nodes.len())
            .into_par_iter()
            .map(|a| {
                let xa = rule.nodes[a].point.x;
                let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(rule.nodes.len()); K];
                for (b, nb) in rule.nodes.iter().enumerate() {
                    let r = (xa - nb.point.x).norm();
                    if r >= support || (r == 0.0 && kernel.is_singular()) {
                        continue;
                    }
                    let wk = nb.weight * kernel.value(r);
                    let v = f(a, b);
                    for k in 0..K {
                        cols[k].push(wk * v[k]);
                    }
                }
                let wa = rule.nodes[a].weight;
                let mut s = [0.0; K];
                let mut m = [0.0; K];
                for k in 0..K {
                    s[k] = wa * pairwise_sum(&cols[k]);
                    m[k] = wa * cols[k].iter().map(|v| v.abs()).sum::<f64>();
                }
                (s, m)
            })
            .collect()
    };
    let mut s = [0.0; K];
    let mut m = [0.0; K];
    for k in 0..K {
        let col: Vec<f64> = per_node.iter().map(|p| p.0[k]).collect();
        s[k] = pairwise_sum(&col);
        m[k] = per_node.iter().map(|p| p.1[k]).sum();
    }
    (s, m)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Check {
    pub lhs: f64,
    pub rhs: f64,
    pub defect: f64,
    /// Scale of the summands the defect is measured against.
    pub scale: f64,
    pub pass: bool,
}

impl Check {
    fn equality(lhs: f64, rhs: f64, scale: f64) -> Self {
        let defect = lhs - rhs;
        Check {
            lhs,
            rhs,
            defect,
            scale,
            pass: defect.abs() <= ALGEBRA_TOL * scale.max(f64::MIN_POSITIVE),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecompositionReport {
    /// `B(cη, cη)`.
    pub b_c_eta: f64,
    /// `∫c² B(η,η; x)`.
    pub c2_b_eta: f64,
    /// `∫η² B(c,c; x)`.
    pub eta2_b_c: f64,
    /// `I = ∬ c(x)η(y)(c(x)−c(y))(η(x)−η(y))K`.
    pub cross: f64,
    /// `¼∬(η²(x)−η²(y))(c²(x)−c²(y))K`.
    pub cross_bound: f64,
    /// `½∫η² L_K c²`.
    pub half_eta2_lc2: f64,
    /// `¼∬(c(x)−c(y))²(η(x)−η(y))²K`, the square dropped by the bound.
    pub discarded: f64,
    /// (a) `B(cη,cη) = ∫c²B(η,η) + ∫η²B(c,c) + I`.
    pub step_a: Check,
    /// (b) largest node-pair defect of the polarization expansion, relative.
    pub step_b_max_relative: f64,
    pub step_b_pass: bool,
    /// (c) `cross_bound − I = discarded`, with `discarded ≥ 0`.
    pub step_c: Check,
    /// `cross_bound = ½∫η² L_K c²`.
    pub step_c_rewrite: Check,
    pub inequality_c_holds: bool,
    pub pass: bool,
}

fn node_values(ctx: &OperatorContext, f: &SurfaceField) -> Vec<f64> {
    ctx.rule.nodes.iter().map(|n| f.at(&n.point)).collect()
}

fn decomposition_from_values(ctx: &OperatorContext, eta: &[f64], c: &[f64]) -> DecompositionReport {
    let (s, m) = pair_sums::<7, _>(ctx, |a, b| {
        let (ca, cb, ea, eb) = (c[a], c[b], eta[a], eta[b]);
        let (dc, de) = (ca - cb, ea - eb);
        let dce = ca * ea - cb * eb;
        [
            0.5 * dce * dce,
            0.5 * ca * ca * de * de,
            0.5 * ea * ea * dc * dc,
            ca * eb * dc * de,
            0.25 * (ea * ea - eb * eb) * (ca * ca - cb * cb),
            0.5 * ea * ea * (ca * ca - cb * cb),
            0.25 * dc * dc * de * de,
        ]
    });
    let [b_c_eta, c2_b_eta, eta2_b_c, cross, cross_bound, half_eta2_lc2, discarded] = s;
    let scale_a = m[0] + m[1] + m[2] + m[3];
    let step_a = Check::equality(b_c_eta, c2_b_eta + eta2_b_c + cross, scale_a);
    let step_c = Check::equality(cross_bound - cross, discarded, m[3] + m[4] + m[6]);
    let step_c_rewrite = Check::equality(cross_bound, half_eta2_lc2, m[4] + m[5]);

    let n = eta.len();
    let worst = {
        use rayon::prelude::*;
        (0..n)
            .into_par_iter()
            .map(|a| {
                let mut w = 0.0f64;
                for b in 0..n {
                    let (ca, cb, ea, eb) = (c[a], c[b], eta[a], eta[b]);
                    let lhs = (ca * ea - cb * eb).powi(2);
                    let t = [ca * ca * (ea - eb).powi(2), eb * eb * (ca - cb).powi(2), 2.0 * ca * eb * (ca - cb) * (ea - eb)];
                    // Roundoff scale of the unsquared products.
                    let scale = ((ca.abs() + cb.abs()) * (ea.abs() + eb.abs())).powi(2);
                    if scale > 0.0 {
                        w = w.max((lhs - t.iter().sum::<f64>()).abs() / scale);
                    }
                }
                w
            })
            .reduce(|| 0.0, f64::max)
    };
    let tol_c = ALGEBRA_TOL * (m[3] + m[4] + m[6]);
    let inequality_c_holds = cross <= cross_bound + tol_c && discarded >= -tol_c;
    let step_b_pass = worst <= ALGEBRA_TOL;
    DecompositionReport {
        b_c_eta,
        c2_b_eta,
        eta2_b_c,
        cross,
        cross_bound,
        half_eta2_lc2,
        discarded,
        step_a,
        step_b_max_relative: worst,
        step_b_pass,
        step_c,
        step_c_rewrite,
        inequality_c_holds,
        pass: step_a.pass && step_b_pass && step_c.pass && step_c_rewrite.pass && inequality_c_holds,
    }
}

/// Checks steps (a), (b), (c) for test fields `η` and `c ≥ 0` on the
/// context's rule.
pub fn stability_decomposition_check(
    ctx: &OperatorContext,
    eta: &SurfaceField,
    c_field: &SurfaceField,
) -> Result<DecompositionReport> {
    let eta_v = node_values(ctx, eta);
    let c_v = node_values(ctx, c_field);
    check_support(&ctx.rule, &eta_v)?;
    if let Some(v) = c_v.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::Parameter(format!("c_field must be non-negative, got {v}")));
    }
    Ok(decomposition_from_values(ctx, &eta_v, &c_v))
}

/// How the K-stability of the surface enters the conclusion check.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StabilityHypothesis {
    /// Verify `|H_{K,E}| ≤ tol` at the base point; stability itself is assumed.
    VerifyMeanCurvature { tol: f64 },
    /// Both stationarity and stability are assumed.
    Assumed,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConclusionReport {
    /// `−∫{½L_K c² + B(c,c;x) − c⁴}η²`.
    pub lhs: f64,
    /// `∫c² B(η,η; x)`.
    pub rhs: f64,
    pub gap: f64,
    /// `B(cη, cη) − ∫c⁴η²`: the stability inequality sampled at `f = cη`.
    pub stability_sample: f64,
    /// `gap = stability_sample + discarded` on the shared nodes.
    pub chain: Check,
    pub decomposition: DecompositionReport,
    pub mean_curvature: Option<f64>,
    /// Inputs taken on trust rather than computed.
    pub assumed: Vec<String>,
    /// Whether `c` came from the caller instead of `c²_{K,E}` on the nodes.
    pub synthetic: bool,
    pub inequality_holds: bool,
    pub pass: bool,
}

/// `c²_{K,E}(x_a) = ½Σ_b w_b|ν_a − ν_b|²K` at every node.
fn nodal_c_squared(ctx: &OperatorContext) -> Vec<f64> {
    let rule = &ctx.rule;
    let support = ctx.kernel.support_radius().unwrap_or(f64::INFINITY);
    use rayon::prelude::*;
    (0..rule.nodes.len())
        .into_par_iter()
        .map(|a| {
            let na = &rule.nodes[a].point;
            let row: Vec<f64> = rule
                .nodes
                .iter()
                .map(|nb| {
                    let r = (na.x - nb.point.x).norm();
                    if r >= support || (r == 0.0 && ctx.kernel.is_singular()) {
                        0.0
                    } else {
                        0.5 * nb.weight * (na.nu - nb.point.nu).norm_squared() * ctx.kernel.value(r)
                    }
                })
                .collect();
            pairwise_sum(&row)
        })
        .collect()
}

/// Evaluates both sides of the final inequality. With `synthetic_c` the
/// field `c` is taken from the caller and the report is flagged.
pub fn stability_conclusion_check(
    ctx: &OperatorContext,
    eta: &SurfaceField,
    hypothesis: StabilityHypothesis,
    synthetic_c: Option<&SurfaceField>,
) -> Result<ConclusionReport> {
    let mut assumed = vec!["K-stability of E (sampled only at f = c·η)".to_string()];
    let mean_curvature = match hypothesis {
        StabilityHypothesis::VerifyMeanCurvature { tol } => {
            let h = nonlocal_mean_curvature(ctx, HForm::Auto)?;
            if h.value.abs() > tol + h.budget() {
                return Err(Error::Hypothesis(format!(
                    "H_K,E = {:.3e} at the base exceeds the tolerance {tol:.1e}",
                    h.value
                )));
            }
            assumed.push("H_K,E = 0 away from the base point".into());
            Some(h.value)
        }
        StabilityHypothesis::Assumed => {
            assumed.push("H_K,E = 0 on the surface".into());
            None
        }
    };
    let eta_v = node_values(ctx, eta);
    check_support(&ctx.rule, &eta_v)?;
    let c_v: Vec<f64> = match synthetic_c {
        Some(f) => {
            assumed.push("c supplied as synthetic node data".into());
            node_values(ctx, f)
        }
        None => nodal_c_squared(ctx).into_iter().map(|v| v.max(0.0).sqrt()).collect(),
    };
    let d = decomposition_from_values(ctx, &eta_v, &c_v);
    let quartic_terms: Vec<f64> = ctx
        .rule
        .nodes
        .iter()
        .zip(eta_v.iter().zip(&c_v))
        .map(|(n, (e, c))| n.weight * c.powi(4) * e * e)
        .collect();
    let quartic = pairwise_sum(&quartic_terms);
    let quartic_abs: f64 = quartic_terms.iter().map(|v| v.abs()).sum();
    // −∫{½Lc² + B(c,c) − c⁴}η² = −(half_eta2_lc2 + eta2_b_c) + ∫c⁴η².
    let lhs = -(d.half_eta2_lc2 + d.eta2_b_c) + quartic;
    let rhs = d.c2_b_eta;
    let gap = rhs - lhs;
    let stability_sample = d.b_c_eta - quartic;
    let scale = d.step_a.scale + d.step_c.scale + d.step_c_rewrite.scale + quartic_abs;
    let chain = Check::equality(gap, stability_sample + d.discarded, scale);
    let tol = ALGEBRA_TOL * scale;
    let inequality_holds = gap >= -tol;
    let pass = chain.pass && d.pass;
    Ok(ConclusionReport {
        lhs,
        rhs,
        gap,
        stability_sample,
        chain,
        decomposition: d,
        mean_curvature,
        assumed,
        synthetic: synthetic_c.is_some(),
        inequality_holds,
        pass,
    })
}
