//! Semicircle-law quantities: density, Stieltjes transform, distribution
//! function, quantiles and the index-scale quantities derived from them.
//!
//! Indices follow the eigenvalue labeling convention: `1..=N`, descending
//! in energy, so `gamma(1)` sits next to the upper edge `+2`. The stored
//! arrays are ordinary zero-based vectors (`gamma[k - 1]` is `γ_k`).

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point `E + iη` of the closed upper half plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexEnergy {
    pub re: f64,
    pub im: f64,
}

impl ComplexEnergy {
    /// Panics if `im` is negative or either part is not finite.
    pub fn new(re: f64, im: f64) -> Self {
        assert!(re.is_finite() && im.is_finite(), "non-finite energy");
        assert!(im >= 0.0, "energy must lie in the closed upper half plane");
        // normalize -0.0 so that principal roots pick the upper side of cuts
        let im = if im == 0.0 { 0.0 } else { im };
        Self { re, im }
    }

    pub fn real(e: f64) -> Self {
        Self::new(e, 0.0)
    }

    pub fn to_complex(self) -> Complex64 {
        Complex64::new(self.re, self.im)
    }
}

impl From<ComplexEnergy> for Complex64 {
    fn from(z: ComplexEnergy) -> Self {
        z.to_complex()
    }
}

/// Semicircle density `√(4−E²)/(2π)` on `[-2, 2]`, zero outside.
pub fn rho_sc(e: f64) -> f64 {
    if e.abs() >= 2.0 {
        0.0
    } else {
        ((2.0 - e) * (2.0 + e)).sqrt() / (2.0 * PI)
    }
}

/// `√(z²−4)` on the branch `√(z−2)·√(z+2)`, which behaves like `z` at
/// infinity and has positive imaginary part above `[-2, 2]`.
pub fn sqrt_z2_minus_4(z: Complex64) -> Complex64 {
    let z = if z.im == 0.0 { Complex64::new(z.re, 0.0) } else { z };
    (z - 2.0).sqrt() * (z + 2.0).sqrt()
}

/// Stieltjes transform of the semicircle law.
///
/// Evaluated as `-2 / (z + √(z²−4))`, algebraically equal to
/// `(-z + √(z²−4))/2` but free of cancellation for large `|z|`. The two
/// edge points `±2` are accepted and return the boundary value `∓1`.
pub fn msc(z: ComplexEnergy) -> Result<Complex64> {
    if z.im == 0.0 && z.re.abs() < 2.0 {
        return Err(Error::OnCut { re: z.re, im: z.im });
    }
    Ok(msc_unchecked(z.to_complex()))
}

/// `msc` for any complex argument off the cut, without the domain check.
/// On the real segment `(-2, 2)` with `im = +0.0` this is the boundary
/// value from above.
pub fn msc_unchecked(z: Complex64) -> Complex64 {
    let s = sqrt_z2_minus_4(z);
    -2.0 / (z + s)
}

/// Boundary value `msc(E + i0)` for `|E| ≤ 2`.
pub fn msc_boundary(e: f64) -> Complex64 {
    debug_assert!(e.abs() <= 2.0);
    let r = ((2.0 - e) * (2.0 + e)).max(0.0).sqrt();
    Complex64::new(-e / 2.0, r / 2.0)
}

/// `∫_{-2}^{min(E,2)} ρ_sc`, clamped to `[0, 1]`.
pub fn semicircle_cdf(e: f64) -> f64 {
    if e <= -2.0 {
        0.0
    } else if e >= 2.0 {
        1.0
    } else {
        1.0 - upper_tail_angle((e / 2.0).acos())
    }
}

/// Mass of the semicircle to the right of `2cos θ`, for `θ ∈ [0, π]`:
/// `(2θ − sin 2θ)/(2π)`. A series is used for small angles where the
/// closed form cancels.
fn upper_tail_angle(theta: f64) -> f64 {
    let x = 2.0 * theta;
    let num = if x < 0.1 {
        // x − sin x = x³/6 − x⁵/120 + x⁷/5040 − x⁹/362880 + ...
        let x2 = x * x;
        x * x2 / 6.0 * (1.0 - x2 / 20.0 * (1.0 - x2 / 42.0 * (1.0 - x2 / 72.0 * (1.0 - x2 / 110.0))))
    } else {
        x - x.sin()
    };
    num / (2.0 * PI)
}

/// `κ(z) = dist(z, {−2, 2})`.
pub fn kappa(z: ComplexEnergy) -> f64 {
    let w = z.to_complex();
    (w - 2.0).norm().min((w + 2.0).norm())
}

/// `î = min(i, N+1−i)` for a one-based index.
pub fn hat_index(i: usize, n: usize) -> usize {
    i.min(n + 1 - i)
}

/// Semicircle quantiles `γ_k` with `∫_{γ_k}^2 ρ_sc = (k − 1/2)/N`, together
/// with `ρ_k = √(4−γ_k²)` and `κ_k = dist(γ_k, {−2, 2})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralQuantiles {
    pub n: usize,
    pub gamma: Vec<f64>,
    pub rho: Vec<f64>,
    pub kappa: Vec<f64>,
}

impl SpectralQuantiles {
    /// Builds the table for dimension `n ≥ 1`.
    ///
    /// The quantile is located in the angle variable `γ = 2cos θ`, where the
    /// tail mass is monotone with a closed form and `ρ = 2 sin θ` is free of
    /// cancellation at the edges. Bisection runs to width 1e-13, followed
    /// by one Newton polish.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "dimension must be positive");
        let mut theta = vec![0.0; n];
        let half = n.div_ceil(2);
        for k in 1..=half {
            let target = (k as f64 - 0.5) / n as f64;
            theta[k - 1] = solve_angle(target);
        }
        for k in half + 1..=n {
            theta[k - 1] = PI - theta[n - k];
        }
        let mut gamma = Vec::with_capacity(n);
        let mut rho = Vec::with_capacity(n);
        let mut kappa = Vec::with_capacity(n);
        for k in 1..=n {
            let mirrored = k > half;
            let th = if mirrored { theta[n - k] } else { theta[k - 1] };
            let g = 2.0 * th.cos();
            gamma.push(if mirrored { -g } else { g });
            rho.push(2.0 * th.sin());
            let s = (0.5 * th).sin();
            kappa.push(4.0 * s * s);
        }
        if n % 2 == 1 {
            gamma[n / 2] = 0.0;
            rho[n / 2] = 2.0;
            kappa[n / 2] = 2.0;
        }
        Self { n, gamma, rho, kappa }
    }

    /// `γ_k` for a one-based index.
    pub fn gamma_at(&self, k: usize) -> Result<f64> {
        self.check(k)?;
        Ok(self.gamma[k - 1])
    }

    /// `ρ_k` for a one-based index.
    pub fn rho_at(&self, k: usize) -> Result<f64> {
        self.check(k)?;
        Ok(self.rho[k - 1])
    }

    pub fn check(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.n {
            Err(Error::IndexOutOfRange { index: k, n: self.n })
        } else {
            Ok(())
        }
    }
}

/// Alias matching the operation name used elsewhere in the crate.
pub fn build_quantiles(n: usize) -> SpectralQuantiles {
    SpectralQuantiles::new(n)
}

fn solve_angle(target: f64) -> f64 {
    let (mut lo, mut hi) = (0.0_f64, PI);
    while hi - lo > 1e-13 {
        let mid = 0.5 * (lo + hi);
        if upper_tail_angle(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let th = 0.5 * (lo + hi);
    // d/dθ tail = 2 sin²θ / π
    let s = th.sin();
    let slope = 2.0 * s * s / PI;
    if slope > 0.0 {
        let polished = th - (upper_tail_angle(th) - target) / slope;
        if polished > lo - 1e-13 && polished < hi + 1e-13 {
            return polished;
        }
    }
    th
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn density_values() {
        assert!((rho_sc(0.0) - 1.0 / PI).abs() < 1e-15);
        assert_eq!(rho_sc(2.0), 0.0);
        assert_eq!(rho_sc(-3.0), 0.0);
        assert!((rho_sc(1.0) - 3f64.sqrt() / (2.0 * PI)).abs() < 1e-15);
    }

    #[test]
    fn msc_at_i_is_golden() {
        let m = msc(ComplexEnergy::new(0.0, 1.0)).unwrap();
        let expect = (5f64.sqrt() - 1.0) / 2.0;
        assert!(m.re.abs() < 1e-15);
        assert!((m.im - expect).abs() < 1e-15);
        let z = Complex64::new(0.0, 1.0);
        assert!((m * m + z * m + 1.0).norm() < 1e-15);
    }

    #[test]
    fn msc_edges_and_cut() {
        let m = msc(ComplexEnergy::real(2.0)).unwrap();
        assert!((m - Complex64::new(-1.0, 0.0)).norm() < 1e-15);
        let m = msc(ComplexEnergy::real(-2.0)).unwrap();
        assert!((m - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        assert!(matches!(msc(ComplexEnergy::real(0.5)), Err(Error::OnCut { .. })));
        // outside the support the transform is real with the decaying branch
        let m = msc(ComplexEnergy::real(-3.0)).unwrap();
        assert!((m.re - (3.0 - 5f64.sqrt()) / 2.0).abs() < 1e-15 && m.im == 0.0);
        let m = msc(ComplexEnergy::real(3.0)).unwrap();
        assert!((m.re - (-3.0 + 5f64.sqrt()) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn msc_decays_at_infinity() {
        let m = msc(ComplexEnergy::new(1e8, 1.0)).unwrap();
        assert!((m.re + 1e-8).abs() < 1e-20);
    }

    #[test]
    fn boundary_value_matches_limit() {
        for e in [-1.9, -0.3, 0.0, 1.2, 1.99] {
            let m = msc_unchecked(Complex64::new(e, 1e-14));
            assert!((m - msc_boundary(e)).norm() < 1e-6, "{e}");
        }
    }

    #[test]
    fn cdf_values() {
        assert_eq!(semicircle_cdf(-2.0), 0.0);
        assert!((semicircle_cdf(0.0) - 0.5).abs() < 1e-15);
        assert_eq!(semicircle_cdf(2.0), 1.0);
        assert_eq!(semicircle_cdf(5.0), 1.0);
    }

    #[test]
    fn kappa_values() {
        assert!((kappa(ComplexEnergy::real(0.0)) - 2.0).abs() < 1e-15);
        assert!((kappa(ComplexEnergy::new(2.0, 0.1)) - 0.1).abs() < 1e-15);
        assert!((kappa(ComplexEnergy::real(1.9)) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn single_quantile_is_median() {
        let q = SpectralQuantiles::new(1);
        assert_eq!(q.gamma, vec![0.0]);
        assert!((semicircle_cdf(q.gamma[0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn quantiles_symmetric_and_descending() {
        let q = SpectralQuantiles::new(10);
        for k in 1..=10 {
            assert!((q.gamma[k - 1] + q.gamma[10 - k]).abs() < 1e-10);
        }
        assert!(q.gamma.windows(2).all(|w| w[0] > w[1]));
        assert!(q.gamma.iter().all(|g| g.abs() < 2.0));
    }

    #[test]
    fn msc_solves_its_quadratic_on_a_grid() {
        for i in 0..40 {
            let e = -3.0 + 6.0 * i as f64 / 39.0;
            for j in 0..25 {
                let eta = 1e-4 * 1e4f64.powf(j as f64 / 24.0);
                let z = ComplexEnergy::new(e, eta);
                let m = msc(z).unwrap();
                let zc = z.to_complex();
                assert!((m * m + zc * m + 1.0).norm() < 1e-12);
                assert!(m.im > 0.0);
                if e.abs() <= 2.0 {
                    let r = m.im / (kappa(z) + eta).sqrt();
                    assert!((0.2..=3.0).contains(&r), "E={e} eta={eta} ratio {r}");
                }
            }
        }
    }

    #[test]
    fn density_has_unit_mass() {
        // x = 2cos φ removes the square-root endpoints
        let mass = crate::quadrature::integrate_adaptive(0.0, PI, 1e-12, 30, &|p: f64| rho_sc(2.0 * p.cos()) * 2.0 * p.sin())
            .unwrap();
        assert!((mass - 1.0).abs() < 1e-10);
    }

    #[test]
    fn edge_quantile_matches_bisection() {
        let (mut lo, mut hi) = (0.0, 2.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if 1.0 - semicircle_cdf(mid) > 0.005 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let q = SpectralQuantiles::new(100);
        assert!((q.gamma[0] - 0.5 * (lo + hi)).abs() < 1e-10);
        assert!((1.0 - semicircle_cdf(q.gamma[0]) - 0.005).abs() < 1e-10);
    }

    #[test]
    fn local_scale_is_comparable_to_cube_root() {
        // the measured range is about [2.5, 3.3]; only comparability is asserted
        for n in [10, 100, 1000, 10_000] {
            let q = SpectralQuantiles::new(n);
            for k in 1..=n / 2 {
                let r = q.rho[k - 1] / (k as f64 / n as f64).cbrt();
                assert!((1.5..=3.5).contains(&r), "n={n} k={k} ratio {r}");
            }
        }
    }

    #[test]
    fn index_checks() {
        let q = SpectralQuantiles::new(5);
        assert!(q.gamma_at(0).is_err());
        assert!(q.gamma_at(6).is_err());
        assert_eq!(q.gamma_at(3).unwrap(), 0.0);
        assert_eq!(hat_index(1, 5), 1);
        assert_eq!(hat_index(5, 5), 1);
        assert_eq!(hat_index(3, 5), 3);
    }
}
