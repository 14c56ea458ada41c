//! Python bindings. Reports are returned as plain dicts with the same field
//! names as the JSON written by the command-line runner.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::Serialize;

use nlsimons::cli::{self, ExperimentConfig};
use nlsimons::geometry::{parse_surface, RigidMotion, V3};
use nlsimons::identities;
use nlsimons::kernels::parse_kernel;
use nlsimons::levelset::{self, parse_level_set, GridOptions, LevelSetProblem};
use nlsimons::nonlocal_ops::{self, Bump, HForm};
use nlsimons::quadrature::moments;
use nlsimons::Error;

fn err(e: Error) -> PyErr {
    match e {
        Error::Config { .. } | Error::Parameter(_) | Error::Domain(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn to_py<T: Serialize>(py: Python<'_>, v: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn motion(axis: [f64; 3], angle: f64, translation: [f64; 3]) -> PyResult<RigidMotion> {
    let a = V3::from(axis);
    if angle != 0.0 && a.norm() == 0.0 {
        return Err(PyValueError::new_err("rotation axis must be nonzero"));
    }
    if angle == 0.0 {
        let mut m = RigidMotion::identity();
        m.t = V3::from(translation);
        return Ok(m);
    }
    Ok(RigidMotion::from_axis_angle(a, angle, V3::from(translation)))
}

/// Radial kernel on `R³`, built from shorthand such as `mollifier:0.3`.
#[pyclass(frozen, skip_from_py_object, module = "nlsimons_py")]
#[derive(Clone)]
struct Kernel {
    inner: nlsimons::kernels::Kernel,
}

#[pymethods]
impl Kernel {
    #[new]
    fn new(spec: &str) -> PyResult<Self> {
        Ok(Kernel {
            inner: parse_kernel(spec, 3).map_err(err)?,
        })
    }

    #[getter]
    fn label(&self) -> String {
        self.inner.label()
    }

    #[getter]
    fn support_radius(&self) -> Option<f64> {
        self.inner.support_radius()
    }

    /// `½∫K` for integrable kernels.
    #[getter]
    fn mass_constant(&self) -> Option<f64> {
        self.inner.mass_constant()
    }

    fn value(&self, r: f64) -> f64 {
        self.inner.value(r)
    }

    fn __repr__(&self) -> String {
        format!("Kernel({:?})", self.inner.label())
    }
}

/// Surface placed in space, with its base point at the origin before motion.
#[pyclass(frozen, skip_from_py_object, module = "nlsimons_py")]
#[derive(Clone)]
struct Surface {
    inner: nlsimons::geometry::Surface,
}

#[pymethods]
impl Surface {
    #[new]
    fn new(spec: &str) -> PyResult<Self> {
        Ok(Surface {
            inner: nlsimons::geometry::Surface::new(parse_surface(spec).map_err(err)?),
        })
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name()
    }

    #[getter]
    fn base_point(&self) -> [f64; 3] {
        let x = self.inner.base_point();
        [x.x, x.y, x.z]
    }

    /// Applies the rotation by `angle` about `axis`, then the translation.
    #[pyo3(signature = (axis = [0.0, 0.0, 1.0], angle = 0.0, translation = [0.0, 0.0, 0.0]))]
    fn moved(&self, axis: [f64; 3], angle: f64, translation: [f64; 3]) -> PyResult<Self> {
        Ok(Surface {
            inner: self.inner.moved(&motion(axis, angle, translation)?),
        })
    }

    fn __repr__(&self) -> String {
        format!("Surface({:?})", self.inner.name())
    }
}

/// Level-set test function, e.g. `sigmoid-sphere:1,10`.
#[pyclass(frozen, skip_from_py_object, module = "nlsimons_py")]
#[derive(Clone)]
struct LevelSet {
    kind: levelset::LevelSetKind,
    inner: LevelSetProblem,
}

#[pymethods]
impl LevelSet {
    #[new]
    fn new(spec: &str) -> PyResult<Self> {
        let kind = parse_level_set(spec).map_err(err)?;
        Ok(LevelSet {
            inner: LevelSetProblem::from_kind(kind.clone()),
            kind,
        })
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name()
    }

    #[getter]
    fn base_point(&self) -> [f64; 3] {
        let x = self.inner.base_point();
        [x.x, x.y, x.z]
    }

    fn value(&self, y: [f64; 3]) -> f64 {
        self.inner.value(&V3::from(y))
    }

    #[pyo3(signature = (axis = [0.0, 0.0, 1.0], angle = 0.0, translation = [0.0, 0.0, 0.0]))]
    fn moved(&self, axis: [f64; 3], angle: f64, translation: [f64; 3]) -> PyResult<Self> {
        Ok(LevelSet {
            kind: self.kind.clone(),
            inner: self.inner.moved(&motion(axis, angle, translation)?),
        })
    }

    fn __repr__(&self) -> String {
        format!("LevelSet({:?})", self.inner.name())
    }
}

/// Closed-form moments `Q`, `D`, the sphere moment and `ϖ` at dimension `n`.
#[pyfunction]
fn moment_row(py: Python<'_>, n: usize) -> PyResult<Py<PyAny>> {
    if n < 2 {
        return Err(PyValueError::new_err("n must be at least 2"));
    }
    to_py(py, &moments::moment_row(n))
}

#[pyfunction]
fn identity_defects(n: usize) -> PyResult<[f64; 4]> {
    if n < 2 {
        return Err(PyValueError::new_err("n must be at least 2"));
    }
    Ok(moments::identity_defects(n))
}

#[pyfunction]
#[pyo3(signature = (n, samples = 1_000_000, seed = 1))]
fn monte_carlo_ball_moments(py: Python<'_>, n: usize, samples: u64, seed: u64) -> PyResult<Py<PyAny>> {
    if n < 2 || samples < 2 {
        return Err(PyValueError::new_err("need n ≥ 2 and at least 2 samples"));
    }
    let s = py.detach(|| moments::monte_carlo_ball_moments(n, samples, seed));
    to_py(py, &s)
}

/// Nonlocal mean curvature at the base point (volume form).
#[pyfunction]
#[pyo3(signature = (surface, kernel, level = 6))]
fn nonlocal_mean_curvature(py: Python<'_>, surface: &Surface, kernel: &Kernel, level: u32) -> PyResult<Py<PyAny>> {
    let v = py.detach(|| {
        let ctx = identities::simons_context(&surface.inner, &kernel.inner, level)?;
        nonlocal_ops::nonlocal_mean_curvature(&ctx, HForm::Volume)
    });
    to_py(py, &v.map_err(err)?)
}

/// Every term of the nonlocal Simons formula at the base point.
#[pyfunction]
#[pyo3(signature = (surface, kernel, i, j, level = 6))]
fn simons_residual(
    py: Python<'_>,
    surface: &Surface,
    kernel: &Kernel,
    i: usize,
    j: usize,
    level: u32,
) -> PyResult<Py<PyAny>> {
    let r = py.detach(|| {
        let ctx = identities::simons_context(&surface.inner, &kernel.inner, level)?;
        identities::simons_residual(&ctx, i, j)
    });
    to_py(py, &r.map_err(err)?)
}

#[pyfunction]
#[pyo3(signature = (surface, kernel, i, j, levels = vec![5, 6, 7]))]
fn residual_convergence(
    py: Python<'_>,
    surface: &Surface,
    kernel: &Kernel,
    i: usize,
    j: usize,
    levels: Vec<u32>,
) -> PyResult<Py<PyAny>> {
    let r = py.detach(|| identities::residual_convergence(&surface.inner, &kernel.inner, i, j, &levels));
    to_py(py, &r.map_err(err)?)
}

#[pyfunction]
#[pyo3(signature = (surface, eps, level = 8, truncation = 16.0, i = 1, j = 1))]
fn limit_study(
    py: Python<'_>,
    surface: &Surface,
    eps: Vec<f64>,
    level: u32,
    truncation: f64,
    i: usize,
    j: usize,
) -> PyResult<Py<PyAny>> {
    let opts = identities::LimitStudyOptions {
        level,
        truncation,
        chart_radius: None,
        i,
        j,
    };
    let r = py.detach(|| identities::limit_study(&surface.inner, &eps, &opts));
    to_py(py, &r.map_err(err)?)
}

/// Classical Simons residual at the base point of a minimal surface.
#[pyfunction]
fn classical_simons_residual(py: Python<'_>, surface: &Surface) -> PyResult<Py<PyAny>> {
    to_py(py, &identities::classical_simons_residual(&surface.inner).map_err(err)?)
}

/// Divergence and product-rule study with bumps centred at the base point;
/// `j` is a 1-based ambient index.
#[pyfunction]
#[pyo3(signature = (surface, j, levels = vec![5, 6, 7, 8], truncation = 0.8, bump_radius = 0.6, second_radius = 0.45, slope = [0.0, 0.0, 0.0]))]
#[allow(clippy::too_many_arguments)]
fn divergence_convergence(
    py: Python<'_>,
    surface: &Surface,
    j: usize,
    levels: Vec<u32>,
    truncation: f64,
    bump_radius: f64,
    second_radius: f64,
    slope: [f64; 3],
) -> PyResult<Py<PyAny>> {
    if !(1..=3).contains(&j) {
        return Err(PyValueError::new_err("j must lie in 1..=3"));
    }
    let base = surface.inner.base_point();
    let g1 = Bump::new(base, bump_radius).with_slope(V3::from(slope));
    let g2 = Bump::new(base, second_radius);
    let r = py.detach(|| nonlocal_ops::divergence_convergence(&surface.inner, &g1, &g2, j - 1, truncation, &levels));
    to_py(py, &r.map_err(err)?)
}

/// Level-set Simons residual at `point` (default: the base point).
#[pyfunction]
#[pyo3(signature = (levelset, kernel, i, j, n = 64, point = None))]
fn levelset_residual(
    py: Python<'_>,
    levelset: &LevelSet,
    kernel: &Kernel,
    i: usize,
    j: usize,
    n: usize,
    point: Option<[f64; 3]>,
) -> PyResult<Py<PyAny>> {
    let x = point.map(V3::from).unwrap_or_else(|| levelset.inner.base_point());
    let r = py.detach(|| levelset::simons_u_residual(&levelset.inner, &kernel.inner, &x, i, j, &GridOptions::with_n(n)));
    to_py(py, &r.map_err(err)?)
}

#[pyfunction]
#[pyo3(signature = (levelset, center, radius, grid_n = 64, levels = 64, nodes = 192))]
fn coarea_check(
    py: Python<'_>,
    levelset: &LevelSet,
    center: [f64; 3],
    radius: f64,
    grid_n: usize,
    levels: usize,
    nodes: usize,
) -> PyResult<Py<PyAny>> {
    let g = Bump::new(V3::from(center), radius);
    let r = py.detach(|| levelset::coarea_check(&levelset.kind, &g, grid_n, levels, nodes));
    to_py(py, &r.map_err(err)?)
}

#[pyfunction]
#[pyo3(signature = (kernel, steepness, radius = 1.0, grid_n = 64, sphere_n = 96))]
fn sharp_interface_check(
    py: Python<'_>,
    kernel: &Kernel,
    steepness: Vec<f64>,
    radius: f64,
    grid_n: usize,
    sphere_n: usize,
) -> PyResult<Py<PyAny>> {
    let r = py.detach(|| levelset::sharp_interface_check(radius, &kernel.inner, &steepness, grid_n, sphere_n));
    to_py(py, &r.map_err(err)?)
}

/// Runs a TOML experiment config and returns the output directory, the
/// overall verdict and the individual checks.
#[pyfunction]
#[pyo3(signature = (config, output_root = None, workers = None))]
fn run_config(
    py: Python<'_>,
    config: &str,
    output_root: Option<PathBuf>,
    workers: Option<usize>,
) -> PyResult<Py<PyAny>> {
    let mut cfg = ExperimentConfig::from_toml_str(config).map_err(err)?;
    if output_root.is_some() {
        cfg.output.root = output_root;
    }
    if workers.is_some() {
        cfg.workers = workers;
    }
    let out = py.detach(|| cli::run(&cfg)).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("dir", out.dir.display().to_string())?;
    d.set_item("config_hash", &out.hash)?;
    d.set_item("pass", out.pass())?;
    d.set_item("checks", to_py(py, &out.outcome.checks)?)?;
    Ok(d.into_any().unbind())
}

#[pymodule]
fn nlsimons_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Kernel>()?;
    m.add_class::<Surface>()?;
    m.add_class::<LevelSet>()?;
    m.add_function(wrap_pyfunction!(moment_row, m)?)?;
    m.add_function(wrap_pyfunction!(identity_defects, m)?)?;
    m.add_function(wrap_pyfunction!(monte_carlo_ball_moments, m)?)?;
    m.add_function(wrap_pyfunction!(nonlocal_mean_curvature, m)?)?;
    m.add_function(wrap_pyfunction!(simons_residual, m)?)?;
    m.add_function(wrap_pyfunction!(residual_convergence, m)?)?;
    m.add_function(wrap_pyfunction!(limit_study, m)?)?;
    m.add_function(wrap_pyfunction!(classical_simons_residual, m)?)?;
    m.add_function(wrap_pyfunction!(divergence_convergence, m)?)?;
    m.add_function(wrap_pyfunction!(levelset_residual, m)?)?;
    m.add_function(wrap_pyfunction!(coarea_check, m)?)?;
    m.add_function(wrap_pyfunction!(sharp_interface_check, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    Ok(())
}
