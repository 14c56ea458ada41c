//! One function per command. Each returns its checks, a JSON report and
//! CSV tables; nothing here touches the filesystem.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use super::config::{parse_dimensions, parse_indices, parse_pairs, Command, ExperimentConfig};
use crate::error::{Error, Result};
use crate::geometry::{parse_surface, sphere_global_rule, RuleSpec, Surface, V3};
use crate::identities::{
    classical_simons_residual, limit_study, residual_convergence, stability_conclusion_check,
    stability_decomposition_check, LimitStudyOptions, StabilityHypothesis,
};
use crate::kernels::{parse_kernel, Kernel};
use crate::levelset::{
    coarea_check, parse_level_set, sharp_interface_check, simons_u_convergence, LevelSetProblem,
};
use crate::nonlocal_ops::{divergence_convergence, Bump, OperatorContext, SurfaceField};
use crate::quadrature::moments::{identity_defects, moment_row, monte_carlo_ball_moments};

/// Closed-form moment identities hold to this absolute level.
pub const MOMENT_TOL: f64 = 1e-12;
/// Monte-Carlo estimates must lie within this many standard errors.
pub const MC_SIGMAS: f64 = 3.0;
/// Bound on the classical residual from analytic fundamental forms.
pub const CLASSICAL_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckLine {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl CheckLine {
    fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        CheckLine {
            name: name.into(),
            pass,
            detail: detail.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    /// File stem under `tables/`.
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &str, header: &[&str]) -> Self {
        Table {
            name: name.into(),
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::Numeric(format!("csv: {e}"));
        w.write_record(&self.header).map_err(err)?;
        for r in &self.rows {
            w.write_record(r).map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Numeric(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub checks: Vec<CheckLine>,
    pub report: Value,
    pub tables: Vec<Table>,
}

impl Outcome {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Shortest round-trip form, so tables are stable and lossless.
fn num(x: f64) -> String {
    format!("{x:e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn to_json<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("reports serialize")
}

fn slope_text(s: Option<f64>) -> String {
    s.map(|v| format!("{v:.2}")).unwrap_or_else(|| "none".into())
}

/// Runs a resolved config.
pub fn execute(cfg: &ExperimentConfig) -> Result<Outcome> {
    match cfg.command {
        Command::Moments => moments(cfg),
        Command::Verify => verify(cfg),
        Command::LimitStudy => limit(cfg),
        Command::LevelsetVerify => levelset(cfg),
        Command::StabilityCheck => stability(cfg),
        Command::DivergenceCheck => divergence(cfg),
    }
}

fn surface_of(cfg: &ExperimentConfig) -> Result<Surface> {
    let spec = cfg.surface.spec.as_deref().expect("resolved surface");
    Ok(Surface::new(parse_surface(spec)?))
}

fn kernel_of(cfg: &ExperimentConfig) -> Result<Kernel> {
    parse_kernel(cfg.kernel.spec.as_deref().expect("resolved kernel"), 3)
}

fn moments(cfg: &ExperimentConfig) -> Result<Outcome> {
    let m = cfg.moments.as_ref().expect("resolved section");
    let dims = parse_dimensions(&m.n)?;
    let mut checks = Vec::new();
    let mut closed = Table::new("moments", &["n", "Q", "D", "sphere_moment", "varpi"]);
    let mut mc = Table::new(
        "monte_carlo",
        &["n", "samples", "seed", "quantity", "estimate", "std_error", "exact", "sigmas"],
    );
    let rows: Vec<_> = dims.iter().map(|&n| moment_row(n)).collect();
    let samples: Vec<_> = dims
        .par_iter()
        .map(|&n| monte_carlo_ball_moments(n, m.samples, cfg.seed.wrapping_add(n as u64)))
        .collect();
    let mut mc_json = Vec::new();
    for ((&n, row), s) in dims.iter().zip(&rows).zip(&samples) {
        closed.push(vec![n.to_string(), num(row.q), num(row.d), num(row.sphere_moment), num(row.varpi)]);
        let defect = identity_defects(n).into_iter().fold(0.0, f64::max);
        checks.push(CheckLine::new(
            format!("closed-forms n={n}"),
            defect <= MOMENT_TOL,
            format!("max defect {defect:.2e}"),
        ));
        let cases = [
            ("Q", s.q, row.q),
            ("D", s.d, row.d),
            ("rotated", s.rotated, 2.0 * row.q - 2.0 * row.d),
        ];
        let mut worst: f64 = 0.0;
        for (name, est, exact) in cases {
            let z = (est.mean - exact).abs() / est.std_error;
            worst = worst.max(z);
            mc.push(vec![
                n.to_string(),
                m.samples.to_string(),
                s.seed.to_string(),
                name.into(),
                num(est.mean),
                num(est.std_error),
                num(exact),
                num(z),
            ]);
        }
        checks.push(CheckLine::new(
            format!("monte-carlo n={n}"),
            worst <= MC_SIGMAS,
            format!("worst deviation {worst:.2} standard errors"),
        ));
        mc_json.push(json!({"sample": to_json(s), "worst_sigmas": worst}));
    }
    Ok(Outcome {
        checks,
        report: json!({"closed_forms": to_json(&rows), "monte_carlo": mc_json}),
        tables: vec![closed, mc],
    })
}

fn verify(cfg: &ExperimentConfig) -> Result<Outcome> {
    let v = cfg.verify.as_ref().expect("resolved section");
    let surface = surface_of(cfg)?;
    let kernel = kernel_of(cfg)?;
    let pairs = parse_pairs(&v.ij, "verify.ij")?;
    let studies = pairs
        .par_iter()
        .map(|&(i, j)| residual_convergence(&surface, &kernel, i, j, &v.levels))
        .collect::<Result<Vec<_>>>()?;
    let mut table = Table::new(
        "residuals",
        &["i", "j", "L", "spacing", "lhs", "lk", "c2", "geo", "residual", "budget", "pass"],
    );
    let mut checks = Vec::new();
    for (&(i, j), st) in pairs.iter().zip(&studies) {
        for r in &st.reports {
            table.push(vec![
                i.to_string(),
                j.to_string(),
                r.parameters.level.to_string(),
                num(r.parameters.spacing),
                num(r.term_lhs.value),
                num(r.term_lk.value),
                num(r.term_c2.value),
                num(r.term_geo.value),
                num(r.residual),
                num(r.budget),
                r.pass.to_string(),
            ]);
        }
        let last = st.reports.last().expect("non-empty schedule");
        checks.push(CheckLine::new(
            format!("simons i={i} j={j}"),
            st.pass,
            format!(
                "residual {:.3e} budget {:.3e} slope {}",
                last.residual,
                last.budget,
                slope_text(st.slope)
            ),
        ));
    }
    Ok(Outcome {
        checks,
        report: json!({"surface": surface.name(), "kernel": kernel.label(), "studies": to_json(&studies)}),
        tables: vec![table],
    })
}

fn limit(cfg: &ExperimentConfig) -> Result<Outcome> {
    let l = cfg.limit.as_ref().expect("resolved section");
    let surface = surface_of(cfg)?;
    let pairs = parse_pairs(&l.ij, "limit.ij")?;
    let studies = pairs
        .par_iter()
        .map(|&(i, j)| {
            let opts = LimitStudyOptions {
                level: l.level,
                truncation: l.truncation,
                chart_radius: l.chart_radius,
                i,
                j,
            };
            limit_study(&surface, &l.eps, &opts)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut checks = Vec::new();
    let mut tables = Vec::new();
    for (&(i, j), st) in pairs.iter().zip(&studies) {
        for c in &st.columns {
            let last = c.errors.last().copied().unwrap_or(f64::NAN);
            checks.push(CheckLine::new(
                format!("limit {} i={i} j={j}", c.column.name()),
                c.pass,
                format!(
                    "target {:.6e} final error {:.3e} monotone {} rate {}",
                    c.target,
                    last,
                    c.monotone,
                    slope_text(c.rate)
                ),
            ));
        }
        let mut t = Table::new(
            &format!("limit_{i}{j}"),
            &["column", "eps", "observed", "target", "budget", "rate"],
        );
        for c in &st.columns {
            for row in &st.rows {
                let term = row.column(c.column);
                t.push(vec![
                    c.column.name().into(),
                    num(row.eps),
                    num(term.value),
                    num(c.target),
                    num(term.budget),
                    opt(c.rate),
                ]);
            }
        }
        tables.push(t);
    }
    let classical = match classical_simons_residual(&surface) {
        Ok(r) => {
            checks.push(CheckLine::new(
                "classical-simons",
                r.residual.abs() <= CLASSICAL_TOL,
                format!("residual {:.3e} c² {:.6e}", r.residual, r.c_squared),
            ));
            Some(r)
        }
        // The classical identity is stated for minimal surfaces only.
        Err(Error::Hypothesis(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(Outcome {
        checks,
        report: json!({"studies": to_json(&studies), "classical": to_json(&classical)}),
        tables,
    })
}

fn levelset(cfg: &ExperimentConfig) -> Result<Outcome> {
    let l = cfg.levelset.as_ref().expect("resolved section");
    let kind = parse_level_set(&l.function)?;
    let kernel = kernel_of(cfg)?;
    let problem = LevelSetProblem::from_kind(kind.clone());
    let x = problem.base_point();
    let pairs = parse_pairs(&l.ij, "levelset.ij")?;
    let studies = pairs
        .par_iter()
        .map(|&(i, j)| simons_u_convergence(&problem, &kernel, &x, i, j, &l.grids))
        .collect::<Result<Vec<_>>>()?;
    let mut checks = Vec::new();
    let mut residuals = Table::new(
        "levelset_residuals",
        &["i", "j", "grid", "spacing", "lhs", "lk", "c2", "geo", "residual", "budget", "pass"],
    );
    for (&(i, j), st) in pairs.iter().zip(&studies) {
        for (r, n) in st.reports.iter().zip(&l.grids) {
            residuals.push(vec![
                i.to_string(),
                j.to_string(),
                n.to_string(),
                num(r.parameters.spacing),
                num(r.term_lhs.value),
                num(r.term_lk.value),
                num(r.term_c2.value),
                num(r.term_geo.value),
                num(r.residual),
                num(r.budget),
                r.pass.to_string(),
            ]);
        }
        let last = st.reports.last().expect("non-empty schedule");
        checks.push(CheckLine::new(
            format!("levelset-simons i={i} j={j}"),
            st.pass,
            format!(
                "residual {:.3e} budget {:.3e} slope {}",
                last.residual,
                last.budget,
                slope_text(st.slope)
            ),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let bumps: Vec<Bump> = (0..l.coarea_bumps)
        .map(|_| {
            let c = V3::new(rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2));
            Bump::new(x + c, rng.gen_range(0.15..0.35))
        })
        .collect();
    let coarea = bumps
        .par_iter()
        .map(|g| coarea_check(&kind, g, l.coarea_grid, l.coarea_levels, l.coarea_nodes))
        .collect::<Result<Vec<_>>>()?;
    let mut coarea_t = Table::new(
        "coarea",
        &["bump", "cx", "cy", "cz", "radius", "volume", "sliced", "relative_error", "pass"],
    );
    for (k, r) in coarea.iter().enumerate() {
        coarea_t.push(vec![
            k.to_string(),
            num(r.bump_center[0]),
            num(r.bump_center[1]),
            num(r.bump_center[2]),
            num(r.bump_radius),
            num(r.volume),
            num(r.sliced),
            num(r.relative_error),
            r.pass.to_string(),
        ]);
        checks.push(CheckLine::new(
            format!("coarea bump={k}"),
            r.pass,
            format!("relative error {:.2e}", r.relative_error),
        ));
    }

    let sharp = sharp_interface_check(l.sharp_radius, &kernel, &l.steepness, l.sharp_grid, l.sharp_sphere_nodes)?;
    let mut sharp_t = Table::new(
        "sharp_interface",
        &[
            "steepness",
            "quantity",
            "level_set",
            "level_set_budget",
            "surface",
            "surface_budget",
            "interface_budget",
            "difference",
            "shell_prediction",
            "pass",
        ],
    );
    for row in &sharp.rows {
        sharp_t.push(vec![
            num(row.steepness),
            row.quantity.clone(),
            num(row.level_set.value),
            num(row.level_set.budget()),
            num(row.surface_value),
            num(row.surface_budget),
            num(row.interface_budget),
            num(row.difference),
            num(row.shell_prediction),
            row.pass.to_string(),
        ]);
        checks.push(CheckLine::new(
            format!("sharp-interface {} k={}", row.quantity, row.steepness),
            row.pass,
            format!("difference {:.3e} interface budget {:.3e}", row.difference, row.interface_budget),
        ));
    }
    Ok(Outcome {
        checks,
        report: json!({
            "function": problem.name(),
            "kernel": kernel.label(),
            "studies": to_json(&studies),
            "coarea": to_json(&coarea),
            "sharp_interface": to_json(&sharp),
        }),
        tables: vec![residuals, coarea_t, sharp_t],
    })
}

fn stability(cfg: &ExperimentConfig) -> Result<Outcome> {
    let s = cfg.stability.as_ref().expect("resolved section");
    let surface = surface_of(cfg)?;
    let kernel = kernel_of(cfg)?;
    let ctx = if surface.shape.name() == "sphere" {
        let rule = sphere_global_rule(&surface, s.n_theta)?;
        OperatorContext::new(surface.clone(), kernel, rule)?
    } else {
        OperatorContext::build(surface.clone(), kernel, &RuleSpec::new(s.level, s.truncation))?
    };
    let base = surface.base_point();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let coeffs: Vec<[f64; 6]> = (0..s.samples)
        .map(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0)))
        .collect();
    let envelope = Bump::new(base, s.eta_radius);
    let mut checks = Vec::new();
    let mut table = Table::new(
        "stability",
        &[
            "sample",
            "b_c_eta",
            "c2_b_eta",
            "eta2_b_c",
            "cross",
            "cross_bound",
            "half_eta2_lc2",
            "discarded",
            "step_a_defect",
            "step_b_max_relative",
            "step_c_defect",
            "chain_defect",
        ],
    );
    let mut samples_json = Vec::new();
    for (k, a) in coeffs.iter().enumerate() {
        let a = *a;
        use crate::geometry::ScalarField;
        let eta = SurfaceField::new(
            move |p| envelope.value(&p.x) * (a[0] * p.x.x + a[1] * p.x.y * p.x.z + a[2]).sin(),
            1.0,
        );
        let c = SurfaceField::new(move |p| 1.5 + (a[3] * p.x.z + a[4] * p.x.x * p.x.x + a[5]).cos(), 2.5);
        let d = stability_decomposition_check(&ctx, &eta, &c)?;
        let chain = stability_conclusion_check(&ctx, &eta, StabilityHypothesis::Assumed, Some(&c))?;
        table.push(vec![
            k.to_string(),
            num(d.b_c_eta),
            num(d.c2_b_eta),
            num(d.eta2_b_c),
            num(d.cross),
            num(d.cross_bound),
            num(d.half_eta2_lc2),
            num(d.discarded),
            num(d.step_a.defect),
            num(d.step_b_max_relative),
            num(d.step_c.defect),
            num(chain.chain.defect),
        ]);
        checks.push(CheckLine::new(
            format!("decomposition sample={k}"),
            d.pass,
            format!(
                "step (a) {:.2e} step (b) {:.2e} step (c) {:.2e}",
                d.step_a.defect.abs() / d.step_a.scale.max(f64::MIN_POSITIVE),
                d.step_b_max_relative,
                d.step_c.defect.abs() / d.step_c.scale.max(f64::MIN_POSITIVE)
            ),
        ));
        checks.push(CheckLine::new(
            format!("conclusion-chain sample={k}"),
            chain.chain.pass,
            format!("gap {:.6e} discarded {:.6e}", chain.gap, d.discarded),
        ));
        samples_json.push(json!({"decomposition": to_json(&d), "conclusion": to_json(&chain)}));
    }

    let plane = Surface::new(parse_surface("half-space")?);
    let hk = parse_kernel(&s.half_space_kernel, 3)?;
    let hctx = OperatorContext::build(plane, hk, &RuleSpec::new(s.half_space_level, s.half_space_truncation))?;
    let eta = SurfaceField::ambient(Bump::new(V3::zeros(), s.eta_radius), 1.0);
    let half = stability_conclusion_check(&hctx, &eta, StabilityHypothesis::VerifyMeanCurvature { tol: 1e-12 }, None)?;
    let zero = [half.lhs, half.rhs, half.gap, half.stability_sample, half.decomposition.discarded]
        .iter()
        .all(|v| *v == 0.0);
    checks.push(CheckLine::new(
        "half-space",
        half.pass && zero,
        format!("lhs {:e} rhs {:e} gap {:e}", half.lhs, half.rhs, half.gap),
    ));
    Ok(Outcome {
        checks,
        report: json!({"surface": surface.name(), "samples": samples_json, "half_space": to_json(&half)}),
        tables: vec![table],
    })
}

fn divergence(cfg: &ExperimentConfig) -> Result<Outcome> {
    let d = cfg.divergence.as_ref().expect("resolved section");
    let surface = surface_of(cfg)?;
    let base = surface.base_point();
    let g1 = Bump::new(base, d.bump_radius).with_slope(V3::from(d.slope));
    let g2 = Bump::new(base, d.second_radius);
    let js = parse_indices(&d.j)?;
    let studies = js
        .par_iter()
        .map(|&j| divergence_convergence(&surface, &g1, &g2, j, d.truncation, &d.levels))
        .collect::<Result<Vec<_>>>()?;
    let mut table = Table::new(
        "divergence",
        &[
            "j",
            "L",
            "spacing",
            "divergence_lhs",
            "divergence_rhs",
            "divergence_residual",
            "product_lhs",
            "product_rhs",
            "product_residual",
        ],
    );
    let mut checks = Vec::new();
    for st in &studies {
        for (k, l) in st.levels.iter().enumerate() {
            let (a, b) = (&st.divergence[k], &st.product_rule[k]);
            table.push(vec![
                (st.j + 1).to_string(),
                l.to_string(),
                num(st.spacings[k]),
                num(a.lhs),
                num(a.rhs),
                num(a.residual),
                num(b.lhs),
                num(b.rhs),
                num(b.residual),
            ]);
        }
        let (a, b) = (st.divergence.last().unwrap(), st.product_rule.last().unwrap());
        checks.push(CheckLine::new(
            format!("divergence j={}", st.j + 1),
            st.pass,
            format!(
                "residuals {:.3e} / {:.3e} slopes {} / {}",
                a.residual,
                b.residual,
                slope_text(st.divergence_slope),
                slope_text(st.product_slope)
            ),
        ));
    }
    Ok(Outcome {
        checks,
        report: json!({"surface": surface.name(), "studies": to_json(&studies)}),
        tables: vec![table],
    })
}
