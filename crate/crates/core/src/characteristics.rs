//! Complex characteristics `z_t = z cosh(t/2) + √(z²−4) sinh(t/2)` of the
//! limiting advection equation `ż = msc(z) + z/2`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::spectral::{kappa, msc_unchecked, sqrt_z2_minus_4, ComplexEnergy, SpectralQuantiles};

/// A characteristic started at `z0` and evaluated at time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CharacteristicPath {
    pub z0: ComplexEnergy,
    pub t: f64,
    #[serde(with = "complex_serde")]
    pub zt: Complex64,
}

impl CharacteristicPath {
    pub fn new(z0: ComplexEnergy, t: f64) -> Self {
        Self { z0, t, zt: advance(z0, t) }
    }
}

/// Closed-form characteristic. Real starting points inside `[-2, 2]` are
/// taken on the upper side of the cut.
pub fn advance(z0: ComplexEnergy, t: f64) -> Complex64 {
    advance_complex(z0.to_complex(), t)
}

/// [`advance`] for an arbitrary complex starting point.
pub fn advance_complex(z0: Complex64, t: f64) -> Complex64 {
    let (s, c) = ((0.5 * t).sinh(), (0.5 * t).cosh());
    z0 * c + sqrt_z2_minus_4(z0) * s
}

/// `γ_k^t = γ_k cosh(t/2) + i ρ_k sinh(t/2)` for a one-based index.
pub fn gamma_k_t(q: &SpectralQuantiles, k: usize, t: f64) -> Result<Complex64> {
    q.check(k)?;
    Ok(gamma_t_from(q.gamma[k - 1], q.rho[k - 1], t))
}

/// The lifted characteristic from `γ + i0`, given `ρ = √(4−γ²)`.
pub(crate) fn gamma_t_from(gamma: f64, rho: f64, t: f64) -> Complex64 {
    let (s, c) = ((0.5 * t).sinh(), (0.5 * t).cosh());
    Complex64::new(gamma * c, rho * s)
}

/// `|(z_{t+h} − z_{t−h})/(2h) − msc(z_t) − z_t/2|`.
pub fn ode_residual(z0: ComplexEnergy, t: f64, h: f64) -> f64 {
    let fwd = advance(z0, t + h);
    let bwd = advance(z0, t - h);
    let zt = advance(z0, t);
    ((fwd - bwd) / (2.0 * h) - msc_unchecked(zt) - zt / 2.0).norm()
}

/// Default for the constant that stands in for the slowly growing control
/// parameter in the edge part of the spectral domain.
pub const DOMAIN_CONSTANT: f64 = 5.0;

/// Membership in the spectral domain: `η ∈ (0, 1)` above `[−2, 2]`, and
/// `η ∈ [c·N^{−2/3}, 1]` for `2 ≤ |E| ≤ 2 + c·N^{−2/3}`.
pub fn in_domain(z: ComplexEnergy, n: usize, c: f64) -> bool {
    let w = c * (n as f64).powf(-2.0 / 3.0);
    let e = z.re.abs();
    (e <= 2.0 && z.im > 0.0 && z.im < 1.0) || (e <= 2.0 + w && z.im >= w && z.im <= 1.0)
}

/// Control scale `η_u = u² + u√(κ(E)+η) + η`.
pub fn eta_u(u: f64, e: f64, eta: f64) -> f64 {
    let k = kappa(ComplexEnergy::real(e));
    u * u + u * (k + eta).sqrt() + eta
}

pub(crate) mod complex_serde {
    use num_complex::Complex64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(z: &Complex64, s: S) -> Result<S::Ok, S::Error> {
        [z.re, z.im].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Complex64, D::Error> {
        let [re, im] = <[f64; 2]>::deserialize(d)?;
        Ok(Complex64::new(re, im))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::msc;

    #[test]
    fn edge_start_stays_real() {
        for t in [0.0, 0.3, 1.0] {
            let z = advance(ComplexEnergy::real(2.0), t);
            assert!((z.re - 2.0 * (0.5 * t).cosh()).abs() < 1e-15);
            assert_eq!(z.im, 0.0);
        }
    }

    #[test]
    fn identity_at_zero_time() {
        let z0 = ComplexEnergy::new(0.7, 0.2);
        assert_eq!(advance(z0, 0.0), z0.to_complex());
    }

    #[test]
    fn msc_decays_along_characteristic() {
        let z0 = ComplexEnergy::new(0.0, 1.0);
        let zt = advance(z0, 0.5);
        let lhs = msc_unchecked(zt);
        let rhs = (-0.25f64).exp() * msc(z0).unwrap();
        assert!((lhs - rhs).norm() < 1e-11);
    }

    #[test]
    fn median_quantile_lifts_vertically() {
        let q = SpectralQuantiles::new(7);
        let z = gamma_k_t(&q, 4, 0.6).unwrap();
        assert_eq!(z.re, 0.0);
        assert!((z.im - 2.0 * 0.3f64.sinh()).abs() < 1e-15);
        assert!(gamma_k_t(&q, 8, 0.6).is_err());
    }

    #[test]
    fn lifted_quantile_matches_limit() {
        let q = SpectralQuantiles::new(50);
        for k in [1, 10, 25, 50] {
            let lim = advance_complex(Complex64::new(q.gamma[k - 1], 1e-13), 0.4);
            assert!((lim - gamma_k_t(&q, k, 0.4).unwrap()).norm() < 1e-6);
        }
    }

    #[test]
    fn residual_is_second_order() {
        let z0 = ComplexEnergy::new(3.0, 0.0);
        assert!(ode_residual(z0, 0.3, 1e-5) < 1e-8);
        assert!(ode_residual(ComplexEnergy::new(0.0, 1.0), 0.0, 1e-5) < 1e-8);
        let z0 = ComplexEnergy::new(0.4, 0.3);
        let r1 = ode_residual(z0, 0.5, 1e-2);
        let r2 = ode_residual(z0, 0.5, 5e-3);
        let ratio = r1 / r2;
        assert!((ratio - 4.0).abs() < 0.2, "ratio {ratio}");
    }

    #[test]
    fn eta_u_values() {
        assert_eq!(eta_u(0.0, 0.4, 0.3), 0.3);
        assert_eq!(eta_u(0.5, 2.0, 0.0), 0.25);
        assert!((eta_u(1.0, 0.0, 0.0) - (1.0 + 2f64.sqrt())).abs() < 1e-15);
    }
}
