//! Closed-form moments of the unit ball and sphere, and their Monte-Carlo
//! cross-checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// `H^{n-1}(S^{n-1})` for the unit sphere of `R^n`, `n ≥ 1`, through
/// `|S^0| = 2`, `|S^1| = 2π`, `|S^{m+1}| = 2π|S^{m-1}|/m`.
pub fn unit_sphere_area(n: usize) -> f64 {
    assert!(n >= 1, "sphere area needs n ≥ 1");
    let two_pi = 2.0 * std::f64::consts::PI;
    let (mut even, mut odd) = (2.0, two_pi);
    if n == 1 {
        return even;
    }
    // even holds |S^{m-1}|, odd holds |S^m|
    let mut m = 1;
    while m + 1 < n {
        let next = two_pi * even / m as f64;
        even = odd;
        odd = next;
        m += 1;
    }
    odd
}

/// `Q = ∫_{B_1} x_1⁴ dx = 3|S^{n-1}|/(n(n+2)(n+4))`.
pub fn ball_moment_x1_4(n: usize) -> f64 {
    let nf = n as f64;
    3.0 * unit_sphere_area(n) / (nf * (nf + 2.0) * (nf + 4.0))
}

/// `∫_{S^{n-1}} ϑ_1⁴ = 3|S^{n-1}|/(n(n+2))`.
pub fn sphere_moment_theta1_4(n: usize) -> f64 {
    let nf = n as f64;
    3.0 * unit_sphere_area(n) / (nf * (nf + 2.0))
}

/// `D = ∫_{B_1} x_1² x_2² dx = Q/3`.
pub fn ball_moment_x1sq_x2sq(n: usize) -> f64 {
    assert!(n >= 2, "D needs two coordinates");
    ball_moment_x1_4(n) / 3.0
}

/// `ϖ = H^{n-2}(S^{n-2})/(n-1)`.
pub fn varpi(n: usize) -> f64 {
    assert!(n >= 2, "ϖ needs n ≥ 2");
    unit_sphere_area(n - 1) / (n as f64 - 1.0)
}

/// `C⋆ = 3ϖ/(n+1)`.
pub fn c_star(n: usize) -> f64 {
    3.0 * varpi(n) / (n as f64 + 1.0)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct BallMomentSample {
    pub n: usize,
    pub samples: u64,
    pub seed: u64,
    /// `∫ x_1⁴`
    pub q: Estimate,
    /// `∫ x_1² x_2²`
    pub d: Estimate,
    /// `∫ 4 X_1² X_2²` with `X` rotated by 45° in the `(x_1, x_2)` plane.
    pub rotated: Estimate,
}

/// Monte-Carlo moments of the unit ball from uniform samples of `[-1,1]^n`.
pub fn monte_carlo_ball_moments(n: usize, samples: u64, seed: u64) -> BallMomentSample {
    assert!(n >= 2 && samples > 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cube = 2f64.powi(n as i32);
    let mut acc = [[0.0f64; 2]; 3];
    let mut x = vec![0.0; n];
    for _ in 0..samples {
        let mut r2 = 0.0;
        for xi in x.iter_mut() {
            *xi = rng.gen_range(-1.0..1.0);
            r2 += *xi * *xi;
        }
        if r2 > 1.0 {
            continue;
        }
        let (a, b) = (x[0] * x[0], x[1] * x[1]);
        let u = (x[0] - x[1]) / std::f64::consts::SQRT_2;
        let v = (x[0] + x[1]) / std::f64::consts::SQRT_2;
        let vals = [a * a, a * b, 4.0 * u * u * v * v];
        for (s, val) in acc.iter_mut().zip(vals) {
            s[0] += val;
            s[1] += val * val;
        }
    }
    let m = samples as f64;
    let est = |s: [f64; 2]| {
        let mean = s[0] / m;
        let var = (s[1] / m - mean * mean).max(0.0);
        Estimate {
            mean: cube * mean,
            std_error: cube * (var / (m - 1.0)).sqrt(),
        }
    };
    BallMomentSample {
        n,
        samples,
        seed,
        q: est(acc[0]),
        d: est(acc[1]),
        rotated: est(acc[2]),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MomentRow {
    pub n: usize,
    pub q: f64,
    pub d: f64,
    pub sphere_moment: f64,
    pub varpi: f64,
}

pub fn moment_row(n: usize) -> MomentRow {
    MomentRow {
        n,
        q: ball_moment_x1_4(n),
        d: ball_moment_x1sq_x2sq(n),
        sphere_moment: sphere_moment_theta1_4(n),
        varpi: varpi(n),
    }
}

/// Largest defect among the closed-form identities at dimension `n`:
/// `Q = 3D`, `Q(n+4) = sphere moment`, `nQ + n(n-1)D = |S^{n-1}|/(n+4)`,
/// `C⋆ = sphere_moment(n-1)`.
pub fn identity_defects(n: usize) -> [f64; 4] {
    let nf = n as f64;
    let q = ball_moment_x1_4(n);
    let d = ball_moment_x1sq_x2sq(n);
    let defect3 = (c_star(n) - sphere_moment_theta1_4(n - 1)).abs();
    [
        (q - 3.0 * d).abs(),
        (q * (nf + 4.0) - sphere_moment_theta1_4(n)).abs(),
        (nf * q + nf * (nf - 1.0) * d - unit_sphere_area(n) / (nf + 4.0)).abs(),
        defect3,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn sphere_areas() {
        assert_eq!(unit_sphere_area(1), 2.0);
        assert!((unit_sphere_area(2) - 2.0 * PI).abs() < 1e-15);
        assert!((unit_sphere_area(3) - 4.0 * PI).abs() < 1e-14);
        assert!((unit_sphere_area(4) - 2.0 * PI * PI).abs() < 1e-13);
    }

    #[test]
    fn sphere_area_matches_gamma_formula() {
        for n in 1..=12usize {
            let g = statrs::function::gamma::gamma(n as f64 / 2.0);
            let expected = 2.0 * PI.powf(n as f64 / 2.0) / g;
            assert!((unit_sphere_area(n) - expected).abs() <= 1e-13 * expected, "n={n}");
        }
    }

    #[test]
    fn substituted_values() {
        assert!((ball_moment_x1_4(3) - 4.0 * PI / 35.0).abs() < 1e-15);
        assert!((ball_moment_x1_4(3) - 0.359039).abs() < 1e-6);
        assert!((ball_moment_x1_4(2) - PI / 8.0).abs() < 1e-15);
        assert!((sphere_moment_theta1_4(3) - 4.0 * PI / 5.0).abs() < 1e-14);
        assert!((ball_moment_x1sq_x2sq(3) - 4.0 * PI / 105.0).abs() < 1e-15);
        assert!((varpi(3) - PI).abs() < 1e-15);
        assert_eq!(varpi(2), 2.0);
    }

    #[test]
    fn ball_to_sphere_ratio() {
        for n in 2..=8 {
            let r = ball_moment_x1_4(n) / sphere_moment_theta1_4(n);
            assert!((r - 1.0 / (n as f64 + 4.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn algebraic_identities() {
        for n in 2..=10 {
            for d in identity_defects(n) {
                assert!(d < 1e-12, "n={n}: {d}");
            }
        }
    }

    #[test]
    fn icosahedron_design_reproduces_sphere_moment() {
        // The 12 icosahedron vertices integrate polynomials of degree ≤ 5 exactly.
        let phi = 0.5 * (1.0 + 5f64.sqrt());
        let mut verts = Vec::new();
        for &a in &[-1.0, 1.0] {
            for &b in &[-phi, phi] {
                verts.push([0.0, a, b]);
                verts.push([a, b, 0.0]);
                verts.push([b, 0.0, a]);
            }
        }
        let norm = (1.0 + phi * phi).sqrt();
        let avg: f64 = verts.iter().map(|v| (v[0] / norm).powi(4)).sum::<f64>() / 12.0;
        let estimate = 4.0 * PI * avg;
        assert!((estimate - sphere_moment_theta1_4(3)).abs() < 1e-6);
    }

    #[test]
    fn monte_carlo_small_run_within_three_sigma() {
        let s = monte_carlo_ball_moments(3, 400_000, 7);
        let q = ball_moment_x1_4(3);
        let d = ball_moment_x1sq_x2sq(3);
        assert!((s.q.mean - q).abs() <= 3.0 * s.q.std_error);
        assert!((s.d.mean - d).abs() <= 3.0 * s.d.std_error);
        assert!((s.rotated.mean - (2.0 * q - 2.0 * d)).abs() <= 3.0 * s.rotated.std_error);
    }

    #[test]
    fn monte_carlo_is_reproducible() {
        let a = monte_carlo_ball_moments(4, 10_000, 3);
        let b = monte_carlo_ball_moments(4, 10_000, 3);
        assert_eq!(a.q.mean.to_bits(), b.q.mean.to_bits());
    }
}
