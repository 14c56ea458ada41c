//! Experiment configuration: a TOML file with one section per command,
//! overridden by command-line flags and resolved to a canonical form.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::parse_surface;
use crate::kernels::parse_kernel;
use crate::levelset::parse_level_set;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Moments,
    Verify,
    LimitStudy,
    LevelsetVerify,
    StabilityCheck,
    DivergenceCheck,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Moments => "moments",
            Command::Verify => "verify",
            Command::LimitStudy => "limit-study",
            Command::LevelsetVerify => "levelset-verify",
            Command::StabilityCheck => "stability-check",
            Command::DivergenceCheck => "divergence-check",
        }
    }

    fn default_surface(&self) -> Option<&'static str> {
        match self {
            Command::Moments | Command::LevelsetVerify => None,
            Command::Verify => Some("plane"),
            Command::LimitStudy => Some("catenoid"),
            Command::StabilityCheck | Command::DivergenceCheck => Some("sphere"),
        }
    }

    fn default_kernel(&self) -> Option<&'static str> {
        match self {
            Command::Moments | Command::LimitStudy | Command::DivergenceCheck => None,
            Command::Verify | Command::LevelsetVerify => Some("mollifier:0.3"),
            Command::StabilityCheck => Some("mollifier:0.6"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceSection {
    /// Shorthand such as `sphere:1` or `anisotropic-paraboloid:1,2`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spec: Option<String>,
    /// `base`, or `neck` for the catenoid (the same point).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub point: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spec: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MomentsConfig {
    /// Inclusive range `a..b` or a comma list.
    pub n: String,
    pub samples: u64,
}

impl Default for MomentsConfig {
    fn default() -> Self {
        MomentsConfig {
            n: "2..8".into(),
            samples: 10_000_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    /// `all` or pairs like `1,1;1,2`.
    pub ij: String,
    pub levels: Vec<u32>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            ij: "all".into(),
            levels: vec![5, 6, 7],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LimitConfig {
    pub eps: Vec<f64>,
    pub level: u32,
    pub truncation: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chart_radius: Option<f64>,
    pub ij: String,
}

impl Default for LimitConfig {
    fn default() -> Self {
        LimitConfig {
            eps: vec![0.4, 0.2, 0.1, 0.05],
            level: 8,
            truncation: 16.0,
            chart_radius: None,
            ij: "1,1".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LevelSetConfig {
    pub function: String,
    pub ij: String,
    pub grids: Vec<usize>,
    pub coarea_bumps: usize,
    pub coarea_grid: usize,
    pub coarea_levels: usize,
    pub coarea_nodes: usize,
    pub steepness: Vec<f64>,
    pub sharp_grid: usize,
    pub sharp_sphere_nodes: usize,
    pub sharp_radius: f64,
}

impl Default for LevelSetConfig {
    fn default() -> Self {
        LevelSetConfig {
            function: "sigmoid-sphere:1,10".into(),
            ij: "all".into(),
            grids: vec![32, 64, 128],
            coarea_bumps: 5,
            coarea_grid: 64,
            coarea_levels: 64,
            coarea_nodes: 192,
            steepness: vec![10.0, 20.0, 40.0],
            sharp_grid: 128,
            sharp_sphere_nodes: 128,
            sharp_radius: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StabilityConfig {
    /// Latitude rows of the global rule when the surface is a sphere.
    pub n_theta: usize,
    /// Chart rule level and radius for other surfaces.
    pub level: u32,
    pub truncation: f64,
    pub samples: usize,
    pub half_space_level: u32,
    pub half_space_truncation: f64,
    pub half_space_kernel: String,
    pub eta_radius: f64,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        StabilityConfig {
            n_theta: 24,
            level: 4,
            truncation: 3.0,
            samples: 3,
            half_space_level: 4,
            half_space_truncation: 3.0,
            half_space_kernel: "mollifier:0.5".into(),
            eta_radius: 1.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DivergenceConfig {
    pub levels: Vec<u32>,
    pub truncation: f64,
    /// `all` or a comma list of 1-based ambient indices.
    pub j: String,
    pub bump_radius: f64,
    /// Linear factor `1 + slope·(x − c)` on the first bump.
    pub slope: [f64; 3],
    pub second_radius: f64,
}

impl Default for DivergenceConfig {
    fn default() -> Self {
        DivergenceConfig {
            levels: vec![5, 6, 7, 8],
            truncation: 0.8,
            j: "all".into(),
            bump_radius: 0.6,
            slope: [0.0, 0.0, 0.0],
            second_radius: 0.45,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub root: Option<PathBuf>,
}

/// Full experiment description. `workers` and `output` steer execution only
/// and are left out of the resolved form and the hash.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Command,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default, skip_serializing)]
    pub workers: Option<usize>,
    #[serde(default, skip_serializing)]
    pub output: OutputSection,
    #[serde(default)]
    pub surface: SurfaceSection,
    #[serde(default)]
    pub kernel: KernelSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moments: Option<MomentsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<LimitConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levelset: Option<LevelSetConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stability: Option<StabilityConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub divergence: Option<DivergenceConfig>,
}

fn default_seed() -> u64 {
    1
}

/// Environment variable holding the default output root.
pub const OUTPUT_ROOT_ENV: &str = "NLSIMONS_OUTPUT_ROOT";

impl ExperimentConfig {
    pub fn new(command: Command) -> Self {
        ExperimentConfig {
            command,
            seed: default_seed(),
            workers: None,
            output: OutputSection::default(),
            surface: SurfaceSection::default(),
            kernel: KernelSection::default(),
            moments: None,
            verify: None,
            limit: None,
            levelset: None,
            stability: None,
            divergence: None,
        }
    }

    /// Deserializes a TOML table, reporting the offending field path.
    pub fn from_table(table: toml::Table) -> Result<Self> {
        let de = toml::Value::Table(table);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(if path.is_empty() { ".".into() } else { path }, e.into_inner().to_string())
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_table(parse_table(text)?)
    }

    /// Fills command defaults, drops sections of other commands and
    /// validates every shorthand.
    pub fn resolve(&self) -> Result<Self> {
        let mut r = ExperimentConfig::new(self.command);
        r.seed = self.seed;
        r.workers = self.workers;
        r.output = self.output.clone();
        if let Some(w) = self.workers {
            if w == 0 {
                return Err(Error::config("workers", "must be at least 1"));
            }
        }
        if let Some(d) = self.command.default_surface() {
            let spec = self.surface.spec.clone().unwrap_or_else(|| d.into());
            parse_surface(&spec).map_err(|e| relabel(e, "surface.spec"))?;
            let point = self.surface.point.clone().unwrap_or_else(|| "base".into());
            match point.as_str() {
                "base" => {}
                "neck" if spec.starts_with("catenoid") => {}
                other => {
                    return Err(Error::config(
                        "surface.point",
                        format!("unknown point `{other}` for `{spec}`"),
                    ))
                }
            }
            r.surface = SurfaceSection {
                spec: Some(spec),
                point: Some(point),
            };
        }
        if let Some(d) = self.command.default_kernel() {
            let spec = self.kernel.spec.clone().unwrap_or_else(|| d.into());
            parse_kernel(&spec, 3).map_err(|e| relabel(e, "kernel.spec"))?;
            r.kernel = KernelSection { spec: Some(spec) };
        }
        match self.command {
            Command::Moments => {
                let m = self.moments.clone().unwrap_or_default();
                parse_dimensions(&m.n)?;
                if m.samples < 2 {
                    return Err(Error::config("moments.samples", "needs at least 2 samples"));
                }
                r.moments = Some(m);
            }
            Command::Verify => {
                let v = self.verify.clone().unwrap_or_default();
                parse_pairs(&v.ij, "verify.ij")?;
                if v.levels.is_empty() {
                    return Err(Error::config("verify.levels", "needs at least one level"));
                }
                r.verify = Some(v);
            }
            Command::LimitStudy => {
                let l = self.limit.clone().unwrap_or_default();
                parse_pairs(&l.ij, "limit.ij")?;
                if l.eps.is_empty() {
                    return Err(Error::config("limit.eps", "needs at least one ε"));
                }
                r.limit = Some(l);
            }
            Command::LevelsetVerify => {
                let l = self.levelset.clone().unwrap_or_default();
                parse_level_set(&l.function)?;
                parse_pairs(&l.ij, "levelset.ij")?;
                if l.grids.is_empty() || l.grids.iter().any(|n| *n < 4 || n % 2 != 0) {
                    return Err(Error::config("levelset.grids", "grid sizes must be even and ≥ 4"));
                }
                r.levelset = Some(l);
            }
            Command::StabilityCheck => {
                let s = self.stability.clone().unwrap_or_default();
                parse_kernel(&s.half_space_kernel, 3).map_err(|e| relabel(e, "stability.half_space_kernel"))?;
                r.stability = Some(s);
            }
            Command::DivergenceCheck => {
                let d = self.divergence.clone().unwrap_or_default();
                parse_indices(&d.j)?;
                if d.levels.is_empty() {
                    return Err(Error::config("divergence.levels", "needs at least one level"));
                }
                if d.bump_radius.max(d.second_radius) >= d.truncation {
                    return Err(Error::config("divergence.truncation", "must exceed both bump radii"));
                }
                r.divergence = Some(d);
            }
        }
        Ok(r)
    }

    /// Canonical TOML of the resolved config.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(".", e.to_string()))
    }

    /// SHA-256 of [`Self::to_toml`], hex encoded.
    pub fn content_hash(&self) -> Result<String> {
        let text = self.to_toml()?;
        Ok(hex::encode(Sha256::digest(text.as_bytes())))
    }

    /// Output root: the config value, then the environment, then `runs`.
    pub fn output_root(&self) -> PathBuf {
        if let Some(r) = &self.output.root {
            return r.clone();
        }
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => PathBuf::from("runs"),
        }
    }
}

fn relabel(e: Error, path: &str) -> Error {
    match e {
        Error::Config { message, .. } => Error::config(path, message),
        other => Error::config(path, other.to_string()),
    }
}

pub fn parse_table(text: &str) -> Result<toml::Table> {
    text.parse::<toml::Table>().map_err(|e| Error::config(".", e.to_string()))
}

pub fn read_table(path: &Path) -> Result<toml::Table> {
    let text = std::fs::read_to_string(path)?;
    parse_table(&text).map_err(|e| match e {
        Error::Config { message, .. } => Error::config(path.display().to_string(), message),
        other => other,
    })
}

/// Sets a dotted key, creating intermediate tables.
pub fn set_path(table: &mut toml::Table, path: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = path.split('.').collect();
    let last = parts.pop().expect("non-empty path");
    let mut cur = table;
    for p in parts {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(path, format!("`{p}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// `all` or `i,j;i,j…`, 1-based tangential indices.
pub fn parse_pairs(s: &str, path: &str) -> Result<Vec<(usize, usize)>> {
    if s.trim() == "all" {
        return Ok(vec![(1, 1), (1, 2), (2, 1), (2, 2)]);
    }
    s.split(';')
        .map(|p| {
            let v: Vec<usize> = p
                .split(',')
                .map(|x| x.trim().parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::config(path, format!("bad index pair `{p}`")))?;
            match v.as_slice() {
                [i, j] if (1..=2).contains(i) && (1..=2).contains(j) => Ok((*i, *j)),
                _ => Err(Error::config(path, format!("index pair `{p}` must be two of 1, 2"))),
            }
        })
        .collect()
}

/// `all` or a comma list of ambient indices `1..=3`; returns 0-based values.
pub fn parse_indices(s: &str) -> Result<Vec<usize>> {
    if s.trim() == "all" {
        return Ok(vec![0, 1, 2]);
    }
    s.split(',')
        .map(|x| match x.trim().parse::<usize>() {
            Ok(j @ 1..=3) => Ok(j - 1),
            _ => Err(Error::config("divergence.j", format!("bad index `{x}`"))),
        })
        .collect()
}

/// `a..b` (inclusive) or a comma list of dimensions `≥ 2`.
pub fn parse_dimensions(s: &str) -> Result<Vec<usize>> {
    let bad = || Error::config("moments.n", format!("bad dimension list `{s}`"));
    let v: Vec<usize> = if let Some((a, b)) = s.split_once("..") {
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim().parse().map_err(|_| bad())?;
        (a..=b).collect()
    } else {
        s.split(',')
            .map(|x| x.trim().parse::<usize>().map_err(|_| bad()))
            .collect::<Result<_>>()?
    };
    if v.is_empty() || v.iter().any(|&n| !(2..=64).contains(&n)) {
        return Err(Error::config("moments.n", "dimensions must lie in 2..=64"));
    }
    Ok(v)
}
