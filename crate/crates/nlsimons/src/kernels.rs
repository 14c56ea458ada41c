//! Radial kernel families.
//!
//! Every kernel is a function of `|x|` only. Values and radial derivatives are
//! evaluated in closed form; the mass constant `C_K = ½∫K` is integrated
//! numerically by radial reduction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::gauss::adaptive_gk15;
use crate::quadrature::moments::unit_sphere_area;

/// Absolute tolerance of the radial mass integration.
pub const MASS_TOLERANCE: f64 = 1e-10;

/// Compact profile `ρ` on `[0, 1)` used by the mollifier family.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Profile {
    /// `exp(-1/(1-t²))`, smooth with compact support.
    Bump,
    /// `(1-t²)^power`, only `C^{power-1}` at the edge.
    Polynomial { power: u32 },
    /// Identically zero.
    Zero,
}

impl Profile {
    pub fn value(&self, t: f64) -> f64 {
        if !(0.0..1.0).contains(&t) {
            return 0.0;
        }
        match *self {
            Profile::Bump => (-1.0 / (1.0 - t * t)).exp(),
            Profile::Polynomial { power } => (1.0 - t * t).powi(power as i32),
            Profile::Zero => 0.0,
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        if !(0.0..1.0).contains(&t) {
            return 0.0;
        }
        match *self {
            Profile::Bump => {
                let q = 1.0 - t * t;
                (-1.0 / q).exp() * (-2.0 * t / (q * q))
            }
            Profile::Polynomial { power } => {
                if power == 0 {
                    0.0
                } else {
                    -2.0 * t * f64::from(power) * (1.0 - t * t).powi(power as i32 - 1)
                }
            }
            Profile::Zero => 0.0,
        }
    }
}

/// Profile of the smooth integrable family, defined on all of `[0, ∞)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SmoothProfile {
    /// `amplitude · exp(-r²/(2σ²))`.
    Gaussian { amplitude: f64, sigma: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    /// `amplitude · r^{-(n+s)}` with user-supplied envelope constant `c`.
    Fractional { s: f64, amplitude: f64, c: f64 },
    /// `ε · r^{-(n+1-ε)}`.
    SimonsLimit { eps: f64 },
    /// `ε^{-n-2} ρ(r/ε)`.
    Mollifier { eps: f64, profile: Profile },
    SmoothIntegrable { profile: SmoothProfile },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    dimension: usize,
    family: Family,
    mass: Option<f64>,
}

fn check_dimension(n: usize, min: usize) -> Result<()> {
    if n < min {
        return Err(Error::Parameter(format!(
            "kernel dimension must be at least {min}, got {n}"
        )));
    }
    Ok(())
}

impl Kernel {
    /// Fractional kernel with envelope constant `c`. The profile amplitude is
    /// `c/(n+s)`, the largest one for which both the value and the gradient
    /// envelopes hold with the same constant.
    pub fn fractional(n: usize, s: f64, c: f64) -> Result<Self> {
        let amplitude = c / (n as f64 + s);
        Self::fractional_with_amplitude(n, s, c, amplitude)
    }

    pub fn fractional_with_amplitude(n: usize, s: f64, c: f64, amplitude: f64) -> Result<Self> {
        check_dimension(n, 2)?;
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::Parameter(format!("fractional order s must lie in (0,1), got {s}")));
        }
        if !(c > 0.0) || !(amplitude > 0.0) {
            return Err(Error::Parameter("fractional constants must be positive".into()));
        }
        Ok(Kernel {
            dimension: n,
            family: Family::Fractional { s, amplitude, c },
            mass: None,
        })
    }

    pub fn simons_limit(n: usize, eps: f64) -> Result<Self> {
        check_dimension(n, 2)?;
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::Parameter(format!("simons_limit ε must lie in (0,1), got {eps}")));
        }
        Ok(Kernel {
            dimension: n,
            family: Family::SimonsLimit { eps },
            mass: None,
        })
    }

    pub fn mollifier(n: usize, eps: f64) -> Result<Self> {
        Self::mollifier_with_profile(n, eps, Profile::Bump)
    }

    pub fn mollifier_with_profile(n: usize, eps: f64, profile: Profile) -> Result<Self> {
        check_dimension(n, 1)?;
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::Parameter(format!("mollifier ε must be positive, got {eps}")));
        }
        let mut k = Kernel {
            dimension: n,
            family: Family::Mollifier { eps, profile },
            mass: None,
        };
        k.mass = Some(k.integrate_mass()?);
        Ok(k)
    }

    pub fn gaussian(n: usize, amplitude: f64, sigma: f64) -> Result<Self> {
        check_dimension(n, 1)?;
        if !(sigma > 0.0) || !amplitude.is_finite() {
            return Err(Error::Parameter("gaussian profile needs σ > 0".into()));
        }
        let mut k = Kernel {
            dimension: n,
            family: Family::SmoothIntegrable {
                profile: SmoothProfile::Gaussian { amplitude, sigma },
            },
            mass: None,
        };
        k.mass = Some(k.integrate_mass()?);
        Ok(k)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn is_singular(&self) -> bool {
        matches!(self.family, Family::Fractional { .. } | Family::SimonsLimit { .. })
    }

    /// Radius beyond which the kernel vanishes identically.
    pub fn support_radius(&self) -> Option<f64> {
        match self.family {
            Family::Mollifier { eps, .. } => Some(eps),
            _ => None,
        }
    }

    /// Exponent `a` with `value(r) ~ r^{-a}` as `r → 0`.
    pub fn singularity_order(&self) -> f64 {
        let n = self.dimension as f64;
        match self.family {
            Family::Fractional { s, .. } => n + s,
            Family::SimonsLimit { eps } => n + 1.0 - eps,
            _ => 0.0,
        }
    }

    /// Exponent `b` with `value(r) ≲ r^{-b}` as `r → ∞`.
    pub fn decay_order(&self) -> f64 {
        let n = self.dimension as f64;
        match self.family {
            Family::Fractional { s, .. } => n + s,
            Family::SimonsLimit { eps } => n + 1.0 - eps,
            _ => f64::INFINITY,
        }
    }

    /// Amplitude `A` of the power-law envelope `|K(r)| ≤ A r^{-b}` for the
    /// singular families.
    pub fn envelope_amplitude(&self) -> Option<f64> {
        match self.family {
            Family::Fractional { amplitude, .. } => Some(amplitude),
            Family::SimonsLimit { eps } => Some(eps),
            _ => None,
        }
    }

    /// `C_K`, present only for integrable families.
    pub fn mass_constant(&self) -> Option<f64> {
        self.mass
    }

    pub fn value(&self, r: f64) -> f64 {
        let n = self.dimension as f64;
        match self.family {
            Family::Fractional { s, amplitude, .. } => amplitude * r.powf(-(n + s)),
            Family::SimonsLimit { eps } => eps * r.powf(-(n + 1.0 - eps)),
            Family::Mollifier { eps, profile } => {
                if r >= eps {
                    0.0
                } else {
                    eps.powi(-(self.dimension as i32) - 2) * profile.value(r / eps)
                }
            }
            Family::SmoothIntegrable {
                profile: SmoothProfile::Gaussian { amplitude, sigma },
            } => amplitude * (-r * r / (2.0 * sigma * sigma)).exp(),
        }
    }

    pub fn radial_derivative(&self, r: f64) -> f64 {
        let n = self.dimension as f64;
        match self.family {
            Family::Fractional { s, amplitude, .. } => -(n + s) * amplitude * r.powf(-(n + s) - 1.0),
            Family::SimonsLimit { eps } => {
                let a = n + 1.0 - eps;
                -a * eps * r.powf(-a - 1.0)
            }
            Family::Mollifier { eps, profile } => {
                if r >= eps {
                    0.0
                } else {
                    eps.powi(-(self.dimension as i32) - 3) * profile.derivative(r / eps)
                }
            }
            Family::SmoothIntegrable {
                profile: SmoothProfile::Gaussian { amplitude, sigma },
            } => {
                let s2 = sigma * sigma;
                -amplitude * r / s2 * (-r * r / (2.0 * s2)).exp()
            }
        }
    }

    fn check_point(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dimension {
            return Err(Error::Parameter(format!(
                "point has {} coordinates, kernel dimension is {}",
                x.len(),
                self.dimension
            )));
        }
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if r == 0.0 && self.is_singular() {
            return Err(Error::Domain("singular kernel evaluated at the origin".into()));
        }
        Ok(r)
    }

    pub fn kernel_value(&self, x: &[f64]) -> Result<f64> {
        let r = self.check_point(x)?;
        Ok(self.value(r))
    }

    pub fn kernel_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let r = self.check_point(x)?;
        if r == 0.0 {
            return Ok(vec![0.0; x.len()]);
        }
        let d = self.radial_derivative(r) / r;
        Ok(x.iter().map(|v| d * v).collect())
    }

    /// `½|S^{n-1}| ∫_0^∞ K(r) r^{n-1} dr` by adaptive Gauss–Kronrod.
    pub fn kernel_mass(&self) -> Result<f64> {
        match self.family {
            Family::Mollifier { .. } | Family::SmoothIntegrable { .. } => self.integrate_mass(),
            _ => Err(Error::Unsupported(
                "mass constant requested for a non-integrable kernel".into(),
            )),
        }
    }

    fn integrate_mass(&self) -> Result<f64> {
        let upper = match self.family {
            Family::Mollifier { eps, .. } => eps,
            Family::SmoothIntegrable {
                profile: SmoothProfile::Gaussian { sigma, .. },
            } => 40.0 * sigma,
            _ => unreachable!("only integrable families reach here"),
        };
        let m = self.dimension as i32 - 1;
        let f = |r: f64| self.value(r) * r.powi(m);
        let (integral, _) = adaptive_gk15(&f, 0.0, upper, MASS_TOLERANCE)?;
        Ok(0.5 * unit_sphere_area(self.dimension) * integral)
    }

    /// Short label such as `mollifier:0.3`.
    pub fn label(&self) -> String {
        match self.family {
            Family::Fractional { s, c, .. } => format!("fractional:{s},{c}"),
            Family::SimonsLimit { eps } => format!("simons:{eps}"),
            Family::Mollifier { eps, .. } => format!("mollifier:{eps}"),
            Family::SmoothIntegrable {
                profile: SmoothProfile::Gaussian { amplitude, sigma },
            } => format!("gaussian:{amplitude},{sigma}"),
        }
    }

    /// Checks `|K| ≤ C r^{-(n+s)}` and `|∇K| ≤ C r^{-(n+s+1)}` on the given radii.
    /// Only meaningful for the fractional family.
    pub fn envelope_holds(&self, radii: &[f64]) -> bool {
        let Family::Fractional { s, c, .. } = self.family else {
            return true;
        };
        let e = self.dimension as f64 + s;
        radii.iter().all(|&r| {
            self.value(r).abs() <= c * r.powf(-e) * (1.0 + 1e-14)
                && self.radial_derivative(r).abs() <= c * r.powf(-e - 1.0) * (1.0 + 1e-14)
        })
    }
}

/// Parses shorthand like `mollifier:0.3`, `simons:0.1`, `fractional:0.5,1`,
/// `gaussian:1,0.5` or `mollifier:0.3:poly4`.
pub fn parse_kernel(spec: &str, n: usize) -> Result<Kernel> {
    let mut parts = spec.split(':');
    let name = parts.next().unwrap_or_default().trim();
    let args: Vec<f64> = match parts.next() {
        Some(a) if !a.trim().is_empty() => a
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::config("kernel", format!("bad number `{v}` in `{spec}`")))
            })
            .collect::<Result<_>>()?,
        _ => Vec::new(),
    };
    let extra = parts.next();
    let need = |k: usize| -> Result<()> {
        if args.len() < k {
            Err(Error::config("kernel", format!("`{spec}` needs {k} parameter(s)")))
        } else {
            Ok(())
        }
    };
    match name {
        "mollifier" => {
            need(1)?;
            let profile = match extra {
                None | Some("bump") => Profile::Bump,
                Some("zero") => Profile::Zero,
                Some(p) if p.starts_with("poly") => Profile::Polynomial {
                    power: p[4..]
                        .parse()
                        .map_err(|_| Error::config("kernel", format!("bad profile `{p}`")))?,
                },
                Some(p) => return Err(Error::config("kernel", format!("unknown profile `{p}`"))),
            };
            Kernel::mollifier_with_profile(n, args[0], profile)
        }
        "simons" | "simons_limit" => {
            need(1)?;
            Kernel::simons_limit(n, args[0])
        }
        "fractional" => {
            need(2)?;
            Kernel::fractional(n, args[0], args[1])
        }
        "gaussian" => {
            need(2)?;
            Kernel::gaussian(n, args[0], args[1])
        }
        other => Err(Error::config("kernel", format!("unknown kernel family `{other}`"))),
    }
}
