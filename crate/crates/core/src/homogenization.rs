//! The homogenized predictor `ū` of the coupled eigenvalue difference, its
//! space and time derivatives, the principal-value form of the limiting
//! nonlocal operator, the control quantities `B` and `Q_a`, and the report
//! comparing a coupled trajectory with the prediction.
//!
//! Throughout, `ρ_k = √(4−γ_k²)` and the time-`t` weights are
//! `D_j(y) = (cosh(t/2)·y − γ_j)² + sinh²(t/2)·(4 − y²)`, so that
//! `ū(y, t) = (2e^{t/2}sinh(t/2)/N)·Σ_j f_j/D_j(y)`.

use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::characteristics::gamma_t_from;
use crate::error::{Error, Result};
use crate::flow::CoupledTrajectory;
use crate::quadrature::integrate_refined;
use crate::spectral::{msc_unchecked, rho_sc, SpectralQuantiles};

/// `f_j = λ_j(0) − μ_j(0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialDifference {
    pub f: Vec<f64>,
}

impl InitialDifference {
    pub fn new(f: Vec<f64>) -> Self {
        Self { f }
    }

    pub fn from_spectra(l0: &[f64], m0: &[f64]) -> Result<Self> {
        if l0.len() != m0.len() {
            return Err(Error::DimensionMismatch {
                expected: l0.len(),
                got: m0.len(),
            });
        }
        Ok(Self::new(l0.iter().zip(m0).map(|(a, b)| a - b).collect()))
    }

    pub fn n(&self) -> usize {
        self.f.len()
    }

    fn check(&self, q: &SpectralQuantiles) -> Result<()> {
        if self.n() != q.n {
            return Err(Error::DimensionMismatch {
                expected: q.n,
                got: self.n(),
            });
        }
        Ok(())
    }
}

/// Tolerance for agreement of the complex and real forms of `ū_k`,
/// relative to the sum of absolute terms.
const FORM_AGREEMENT: f64 = 1e-12;

fn check_time(t: f64) -> Result<()> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::domain(format!("predictor time must lie in (0, 1], got {t}")));
    }
    Ok(())
}

fn check_interior(x: f64) -> Result<()> {
    if !(x.abs() < 2.0) {
        return Err(Error::domain(format!("energy must lie in (-2, 2), got {x}")));
    }
    Ok(())
}

struct Weights {
    c: f64,
    s: f64,
    pref: f64,
}

impl Weights {
    fn new(n: usize, t: f64) -> Self {
        let (s, c) = ((0.5 * t).sinh(), (0.5 * t).cosh());
        Self {
            c,
            s,
            pref: 2.0 * (0.5 * t).exp() * s / n as f64,
        }
    }

    /// `D_j` evaluated with the squared imaginary part supplied.
    #[inline]
    fn denom(&self, y: f64, gamma_j: f64, rho2: f64) -> f64 {
        let a = self.c * y - gamma_j;
        a * a + self.s * self.s * rho2
    }
}

/// `ū_k(t)` for a one-based index, via the real form. The complex form
/// `Im[Σ_j (f_j/N)/(γ_j − γ_k^t)] / Im msc(γ_k^t)` is evaluated alongside
/// and must agree.
pub fn ubar_k(f: &InitialDifference, q: &SpectralQuantiles, k: usize, t: f64) -> Result<f64> {
    f.check(q)?;
    q.check(k)?;
    check_time(t)?;
    let w = Weights::new(q.n, t);
    let (gk, rk) = (q.gamma[k - 1], q.rho[k - 1]);
    let rho2 = rk * rk;
    let mut real = 0.0;
    let mut abs = 0.0;
    let zt = gamma_t_from(gk, rk, t);
    let mut cplx = Complex64::new(0.0, 0.0);
    for (fj, gj) in f.f.iter().zip(&q.gamma) {
        let d = w.denom(gk, *gj, rho2);
        real += fj / d;
        abs += fj.abs() / d;
        cplx += fj / (gj - zt);
    }
    let real = w.pref * real;
    let complex = (cplx / q.n as f64).im / msc_unchecked(zt).im;
    let scale = w.pref * abs;
    if (real - complex).abs() > FORM_AGREEMENT * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::domain(format!(
            "complex and real forms of the predictor disagree at k = {k}, t = {t}: {real:e} vs {complex:e}"
        )));
    }
    Ok(real)
}

/// `ū_k(t)` for every `k`, real form only.
pub fn ubar_all(f: &InitialDifference, q: &SpectralQuantiles, t: f64) -> Result<Vec<f64>> {
    f.check(q)?;
    check_time(t)?;
    let w = Weights::new(q.n, t);
    Ok(q.gamma
        .iter()
        .zip(&q.rho)
        .map(|(gk, rk)| {
            let rho2 = rk * rk;
            w.pref * f.f.iter().zip(&q.gamma).map(|(fj, gj)| fj / w.denom(*gk, *gj, rho2)).sum::<f64>()
        })
        .collect())
}

/// `ū(x, t)` for `x ∈ (−2, 2)`, the predictor along the characteristic
/// from `x + i0`.
pub fn ubar_x(f: &InitialDifference, q: &SpectralQuantiles, x: f64, t: f64) -> Result<f64> {
    f.check(q)?;
    check_time(t)?;
    check_interior(x)?;
    Ok(ubar_x_unchecked(f, q, x, t))
}

fn ubar_x_unchecked(f: &InitialDifference, q: &SpectralQuantiles, x: f64, t: f64) -> f64 {
    let w = Weights::new(q.n, t);
    let rho2 = (2.0 - x) * (2.0 + x);
    w.pref * f.f.iter().zip(&q.gamma).map(|(fj, gj)| fj / w.denom(x, *gj, rho2)).sum::<f64>()
}

/// `∂_t ū(x, t) = ū/2 + (1/(2N·Im msc(x_t)))·Σ_j f_j Im[(sinh(t/2)x +
/// cosh(t/2)√(x²−4))/(γ_j − x_t)²]` with `√(x²−4) = i√(4−x²)`.
pub fn ubar_dt(f: &InitialDifference, q: &SpectralQuantiles, x: f64, t: f64) -> Result<f64> {
    f.check(q)?;
    check_time(t)?;
    check_interior(x)?;
    let u = ubar_x_unchecked(f, q, x, t);
    let r = ((2.0 - x) * (2.0 + x)).sqrt();
    let (s, c) = ((0.5 * t).sinh(), (0.5 * t).cosh());
    let xt = Complex64::new(x * c, r * s);
    let num = Complex64::new(s * x, c * r);
    let im_m = (-0.5 * t).exp() * 0.5 * r;
    let sum: f64 = f
        .f
        .iter()
        .zip(&q.gamma)
        .map(|(fj, gj)| {
            let d = gj - xt;
            fj * (num / (d * d)).im
        })
        .sum();
    Ok(0.5 * u + sum / (2.0 * q.n as f64 * im_m))
}

/// `∂_y ū(y, t)` at `y = x`.
pub fn ubar_dy(f: &InitialDifference, q: &SpectralQuantiles, x: f64, t: f64) -> Result<f64> {
    f.check(q)?;
    check_time(t)?;
    check_interior(x)?;
    let w = Weights::new(q.n, t);
    let rho2 = (2.0 - x) * (2.0 + x);
    let s2 = w.s * w.s;
    let sum: f64 = f
        .f
        .iter()
        .zip(&q.gamma)
        .map(|(fj, gj)| {
            let a = w.c * x - gj;
            let d = a * a + s2 * rho2;
            let dd = 2.0 * w.c * a - 2.0 * s2 * x;
            fj * dd / (d * d)
        })
        .sum();
    Ok(-w.pref * sum)
}

/// Controls for [`pv_nonlocal`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PvConfig {
    /// Half-width of the excised window around the singular point.
    pub epsilon: f64,
    pub rel_tol: f64,
    /// Absolute floor for the refinement test, for integrals near zero.
    pub abs_floor: f64,
    pub start_panels: usize,
    pub max_panels: usize,
}

impl Default for PvConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-4,
            rel_tol: 1e-8,
            abs_floor: 1e-14,
            start_panels: 2,
            max_panels: 4096,
        }
    }
}

/// Principal value of `∫(g(y) − g(x))/(x−y)² ρ_sc(y) dy` over `[−2, 2]`.
///
/// The pairs `y = x ± s` are combined so the integrand in `s` is regular;
/// the window `s < ε` is replaced by `ε` times that integrand at `s = ε/2`;
/// the part of the longer side beyond `|y − x| = min(2 − x, x + 2)` is
/// integrated on its own. Square-root edge behaviour is removed by the
/// substitutions `s = d − (d−ε)w²` and `y = ∓2 ± Lw²`.
pub fn pv_nonlocal<G: Fn(f64) -> f64>(g: G, x: f64, cfg: &PvConfig) -> Result<f64> {
    check_interior(x)?;
    let d = (2.0 - x).min(x + 2.0);
    let eps = cfg.epsilon;
    if !(eps > 0.0 && eps < d) {
        return Err(Error::domain(format!(
            "excision half-width {eps} must lie in (0, {d}) at x = {x}"
        )));
    }
    let g0 = g(x);
    let pair = |s: f64| ((g(x + s) - g0) * rho_sc(x + s) + (g(x - s) - g0) * rho_sc(x - s)) / (s * s);
    let span = d - eps;
    let sym = integrate_refined(0.0, 1.0, cfg.rel_tol, cfg.abs_floor, cfg.start_panels, cfg.max_panels, |w| {
        pair(d - span * w * w) * 2.0 * span * w
    })?;
    let window = eps * pair(0.5 * eps);
    let rest = if x > 0.0 {
        let len = x - d + 2.0;
        integrate_refined(0.0, 1.0, cfg.rel_tol, cfg.abs_floor, cfg.start_panels, cfg.max_panels, |w| {
            let y = -2.0 + len * w * w;
            (g(y) - g0) * rho_sc(y) / ((x - y) * (x - y)) * 2.0 * len * w
        })?
    } else if x < 0.0 {
        let len = 2.0 - (x + d);
        integrate_refined(0.0, 1.0, cfg.rel_tol, cfg.abs_floor, cfg.start_panels, cfg.max_panels, |w| {
            let y = 2.0 - len * w * w;
            (g(y) - g0) * rho_sc(y) / ((x - y) * (x - y)) * 2.0 * len * w
        })?
    } else {
        0.0
    };
    Ok(sym + window + rest)
}

/// `B(t, k) = N t ρ_k (t + ρ_k)`.
pub fn bound_b(q: &SpectralQuantiles, t: f64, k: usize) -> Result<f64> {
    q.check(k)?;
    if !(t > 0.0) {
        return Err(Error::domain(format!("t must be positive, got {t}")));
    }
    let r = q.rho[k - 1];
    Ok(q.n as f64 * t * r * (t + r))
}

/// `Q_a(t, k) = N(t + ρ_k)·B(t, k)^{1−a}`.
pub fn bound_q(q: &SpectralQuantiles, t: f64, k: usize, a: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&a) {
        return Err(Error::domain(format!("exponent a must lie in [0, 1], got {a}")));
    }
    let b = bound_b(q, t, k)?;
    let r = q.rho[k - 1];
    Ok(q.n as f64 * (t + r) * b.powf(1.0 - a))
}

/// Error profile `1/(N² t ρ_k (t+ρ_k)²)`.
pub fn residual_bound(n: usize, t: f64, rho: f64) -> f64 {
    let nf = n as f64;
    1.0 / (nf * nf * t * rho * (t + rho) * (t + rho))
}

/// Per-index comparison of a coupled trajectory with the predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogReport {
    pub t: f64,
    pub gamma: Vec<f64>,
    pub rho: Vec<f64>,
    pub ubar: Vec<f64>,
    /// `λ_k(t) − μ_k(t)`.
    pub actual: Vec<f64>,
    /// `|actual − e^{−t/2} ū_k|`.
    pub residual: Vec<f64>,
    pub bound: Vec<f64>,
    pub normalized: Vec<f64>,
}

impl HomogReport {
    pub fn n(&self) -> usize {
        self.ubar.len()
    }

    /// Writes `k,gamma_k,rho_k,ubar,actual,residual,bound,normalized`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "k,gamma_k,rho_k,ubar,actual,residual,bound,normalized")?;
        for k in 0..self.n() {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                k + 1,
                self.gamma[k],
                self.rho[k],
                self.ubar[k],
                self.actual[k],
                self.residual[k],
                self.bound[k],
                self.normalized[k]
            )?;
        }
        Ok(())
    }
}

/// Builds the report at checkpoint `t > 0`, taking `f` from the `t = 0`
/// checkpoint.
pub fn homog_report(traj: &CoupledTrajectory, q: &SpectralQuantiles, t: f64) -> Result<HomogReport> {
    let (l0, m0) = traj.at(0.0)?;
    let (lt, mt) = traj.at(t)?;
    let f = InitialDifference::from_spectra(&l0.x, &m0.x)?;
    let ubar = ubar_all(&f, q, t)?;
    let decay = (-0.5 * t).exp();
    let n = q.n;
    let actual: Vec<f64> = lt.x.iter().zip(&mt.x).map(|(a, b)| a - b).collect();
    let residual: Vec<f64> = actual.iter().zip(&ubar).map(|(a, u)| (a - decay * u).abs()).collect();
    let bound: Vec<f64> = q.rho.iter().map(|&r| residual_bound(n, t, r)).collect();
    let normalized = residual.iter().zip(&bound).map(|(r, b)| r / b).collect();
    Ok(HomogReport {
        t,
        gamma: q.gamma.clone(),
        rho: q.rho.clone(),
        ubar,
        actual,
        residual,
        bound,
        normalized,
    })
}

/// Outcome of one family of regularity checks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckTally {
    pub checked: usize,
    pub passed: usize,
    /// Largest observed `value / bound`.
    pub worst_ratio: f64,
}

impl CheckTally {
    fn record(&mut self, value: f64, bound: f64) {
        self.checked += 1;
        let ratio = value / bound;
        if ratio <= 1.0 {
            self.passed += 1;
        }
        self.worst_ratio = self.worst_ratio.max(ratio);
    }

    pub fn pass_fraction(&self) -> f64 {
        if self.checked == 0 {
            1.0
        } else {
            self.passed as f64 / self.checked as f64
        }
    }

    pub fn all_pass(&self) -> bool {
        self.passed == self.checked
    }
}

/// Results of [`regularity_checks`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    pub t: f64,
    pub constant: f64,
    /// `|ū_k|` against the sup bound, both regimes.
    pub sup: CheckTally,
    /// `|ū_a − ū_b|` against `C|γ_a−γ_b|/(Nt(t+ρ_a)²)`, `ρ_a ≤ ρ_b`.
    pub modulus: CheckTally,
    /// `|∂_yū(E)|` against `C/(Nt(t+ρ(E))²)` where `t²+tρ(E) ≥ (Nρ(E))⁻¹`.
    pub derivative: CheckTally,
}

impl RegularityReport {
    pub fn all_pass(&self) -> bool {
        self.sup.all_pass() && self.modulus.all_pass() && self.derivative.all_pass()
    }
}

/// Index offsets used for the modulus check.
const MODULUS_OFFSETS: [usize; 4] = [1, 4, 16, 64];

/// Evaluates the sup, modulus and derivative bounds of `ū` with multiplier
/// `constant`. The derivative is sampled at every `γ_k` and at the
/// midpoints between neighbours.
pub fn regularity_checks(f: &InitialDifference, q: &SpectralQuantiles, t: f64, constant: f64) -> Result<RegularityReport> {
    let n = q.n;
    let nf = n as f64;
    let ubar = ubar_all(f, q, t)?;
    let mut sup = CheckTally::default();
    for k in 0..n {
        let r = q.rho[k];
        let main = 1.0 / (nf * (t + r));
        let bound = if t * t + t * r >= 1.0 / (nf * r) {
            constant * main
        } else {
            constant * (main + 1.0 / (nf * nf * r * (t + r) * (t + r) * t))
        };
        sup.record(ubar[k].abs(), bound);
    }
    let mut modulus = CheckTally::default();
    for &off in &MODULUS_OFFSETS {
        for a in 0..n.saturating_sub(off) {
            let b = a + off;
            let (lo, _) = if q.rho[a] <= q.rho[b] { (a, b) } else { (b, a) };
            let r = q.rho[lo];
            let bound = constant * (q.gamma[a] - q.gamma[b]).abs() / (nf * t * (t + r) * (t + r));
            modulus.record((ubar[a] - ubar[b]).abs(), bound);
        }
    }
    let mut derivative = CheckTally::default();
    let mut points: Vec<f64> = q.gamma.clone();
    points.extend(q.gamma.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    for e in points {
        if e.abs() >= 2.0 {
            continue;
        }
        let r = ((2.0 - e) * (2.0 + e)).sqrt();
        if t * t + t * r < 1.0 / (nf * r) {
            continue;
        }
        let bound = constant / (nf * t * (t + r) * (t + r));
        derivative.record(ubar_dy(f, q, e, t)?.abs(), bound);
    }
    Ok(RegularityReport {
        t,
        constant,
        sup,
        modulus,
        derivative,
    })
}

/// Initial difference at the rigidity scale: `f_j = N^{−2/3} ĵ^{−1/3}·U_j`
/// with `U_j` uniform on `[−1, 1]`.
pub fn rigidity_scale_difference<R: rand::Rng>(n: usize, rng: &mut R) -> InitialDifference {
    let nf = n as f64;
    InitialDifference::new(
        (1..=n)
            .map(|j| {
                let jh = j.min(n + 1 - j) as f64;
                nf.powf(-2.0 / 3.0) * jh.powf(-1.0 / 3.0) * rng.gen_range(-1.0..=1.0)
            })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensembles::RngStream;

    fn random_f(n: usize, seed: u64) -> InitialDifference {
        rigidity_scale_difference(n, &mut RngStream::new(seed, 0).rng())
    }

    #[test]
    fn zero_difference_gives_zero() {
        let q = SpectralQuantiles::new(50);
        let f = InitialDifference::new(vec![0.0; 50]);
        assert_eq!(ubar_k(&f, &q, 7, 0.5).unwrap(), 0.0);
        assert_eq!(ubar_x(&f, &q, 0.3, 0.5).unwrap(), 0.0);
        assert_eq!(ubar_dt(&f, &q, 0.3, 0.5).unwrap(), 0.0);
        let r = regularity_checks(&f, &q, 0.5, 20.0).unwrap();
        assert!(r.all_pass());
    }

    #[test]
    fn rejects_out_of_contract() {
        let q = SpectralQuantiles::new(10);
        let f = InitialDifference::new(vec![1.0; 10]);
        assert!(ubar_k(&f, &q, 3, 0.0).is_err());
        assert!(ubar_k(&f, &q, 11, 0.5).is_err());
        assert!(ubar_x(&f, &q, 2.0, 0.5).is_err());
        assert!(ubar_x(&InitialDifference::new(vec![1.0; 9]), &q, 0.0, 0.5).is_err());
    }

    #[test]
    fn constant_difference_is_nearly_preserved() {
        let n = 1000;
        let q = SpectralQuantiles::new(n);
        let c = 0.37;
        let f = InitialDifference::new(vec![c; n]);
        let u = ubar_k(&f, &q, n / 2, 0.5).unwrap();
        assert!(((u - c) / c).abs() < 0.02, "{u}");
    }

    #[test]
    fn single_spike_closed_form() {
        let n = 40;
        let q = SpectralQuantiles::new(n);
        let (j, k, t) = (12, 30, 0.3);
        let mut f = vec![0.0; n];
        f[j - 1] = 1.0;
        let u = ubar_k(&InitialDifference::new(f), &q, k, t).unwrap();
        let (s, c) = ((0.5f64 * t).sinh(), (0.5f64 * t).cosh());
        let d = (c * q.gamma[k - 1] - q.gamma[j - 1]).powi(2) + (s * q.rho[k - 1]).powi(2);
        let expect = 2.0 * (0.5 * t).exp() * s / n as f64 / d;
        assert!(u > 0.0);
        assert!((u - expect).abs() <= 1e-15 * expect);
    }

    #[test]
    fn forms_agree_and_x_matches_k() {
        let n = 300;
        let q = SpectralQuantiles::new(n);
        for seed in 0..3 {
            let f = random_f(n, seed);
            for t in [0.1, 0.5, 1.0] {
                for k in [1, 2, 17, n / 2, n - 1, n] {
                    let uk = ubar_k(&f, &q, k, t).unwrap();
                    let ux = ubar_x(&f, &q, q.gamma[k - 1], t).unwrap();
                    assert!((uk - ux).abs() <= 1e-14 * uk.abs().max(1e-300) + 1e-18, "{k} {t}");
                }
            }
        }
    }

    #[test]
    fn time_derivative_matches_finite_differences() {
        let n = 200;
        let q = SpectralQuantiles::new(n);
        let f = random_f(n, 4);
        let h = 1e-6;
        for &t in &[0.1, 0.5, 0.9] {
            for &x in &[-1.7, -0.3, 0.8, 1.9] {
                let fd = (ubar_x(&f, &q, x, t + h).unwrap() - ubar_x(&f, &q, x, t - h).unwrap()) / (2.0 * h);
                let an = ubar_dt(&f, &q, x, t).unwrap();
                assert!((fd - an).abs() <= 1e-4 * an.abs().max(1e-10), "x={x} t={t}: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn space_derivative_matches_finite_differences() {
        let n = 200;
        let q = SpectralQuantiles::new(n);
        let f = random_f(n, 5);
        let h = 1e-6;
        for &x in &[-1.5, 0.1, 1.2] {
            let fd = (ubar_x(&f, &q, x + h, 0.4).unwrap() - ubar_x(&f, &q, x - h, 0.4).unwrap()) / (2.0 * h);
            let an = ubar_dy(&f, &q, x, 0.4).unwrap();
            assert!((fd - an).abs() <= 1e-5 * an.abs().max(1e-10));
        }
    }

    #[test]
    fn pv_trivial_cases() {
        let cfg = PvConfig::default();
        assert_eq!(pv_nonlocal(|_| 3.0, 0.4, &cfg).unwrap(), 0.0);
        assert!(pv_nonlocal(|y| y, 0.0, &cfg).unwrap().abs() < 1e-12);
    }

    #[test]
    fn pv_against_boundary_stieltjes() {
        // g(y) = y gives PV∫ρ(y)/(y−x) dy = Re msc(x + i0) = −x/2
        let cfg = PvConfig::default();
        for &x in &[-1.3, 0.5, 1.8] {
            let v = pv_nonlocal(|y| y, x, &cfg).unwrap();
            assert!((v + 0.5 * x).abs() < 1e-7, "{x}: {v}");
        }
    }

    #[test]
    fn pv_against_quadratic_closed_form() {
        // (y²−x²)/(x−y)² = 1 + 2x/(y−x), so the PV integral is 1 + 2x·Re msc(x + i0) = 1 − x²
        let cfg = PvConfig::default();
        for &x in &[-1.9, -0.6, 0.0, 0.3, 1.4] {
            let v = pv_nonlocal(|y| y * y, x, &cfg).unwrap();
            assert!((v - (1.0 - x * x)).abs() < 1e-7, "{x}: {v}");
        }
    }

    #[test]
    fn pv_identity_for_predictor() {
        let n = 400;
        let q = SpectralQuantiles::new(n);
        let f = random_f(n, 9);
        for &(x, t) in &[(0.0, 0.5), (-1.95, 0.25), (1.95, 1.0), (1.0, 0.1)] {
            let lhs = ubar_dt(&f, &q, x, t).unwrap();
            let rhs = pv_nonlocal(|y| ubar_x_unchecked(&f, &q, y, t), x, &PvConfig::default()).unwrap();
            assert!((lhs - rhs).abs() / (lhs.abs() + 1e-12) < 2e-3, "x={x} t={t}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn pv_converges_as_window_shrinks() {
        let n = 200;
        let q = SpectralQuantiles::new(n);
        let f = random_f(n, 2);
        let g = |y: f64| ubar_x_unchecked(&f, &q, y, 0.5);
        let at = |eps: f64| {
            pv_nonlocal(g, 0.7, &PvConfig {
                epsilon: eps,
                ..PvConfig::default()
            })
            .unwrap()
        };
        let (a, b, c) = (at(4e-3), at(2e-3), at(1e-3));
        assert!((c - b).abs() < (b - a).abs() + 1e-12);
    }

    #[test]
    fn bounds() {
        let q = SpectralQuantiles::new(100);
        let (t, k) = (0.3, 20);
        let r = q.rho[k - 1];
        let b = bound_b(&q, t, k).unwrap();
        assert!((bound_q(&q, t, k, 1.0).unwrap() - 100.0 * (t + r)).abs() < 1e-12);
        let q0 = 1e4 * t * r * (t + r) * (t + r);
        assert!((bound_q(&q, t, k, 0.0).unwrap() - q0).abs() < 1e-9 * q0);
        assert!(bound_b(&q, 0.6, k).unwrap() > b);
        assert!(bound_q(&q, t, k, 1.5).is_err());
    }

    #[test]
    fn spike_decays_at_its_own_site() {
        // ū_k ≈ 4/(N t ρ_k²) for a spike at k and small t, so the derivative is large and negative
        let n = 200;
        let q = SpectralQuantiles::new(n);
        let k = n / 2;
        let mut f = vec![0.0; n];
        f[k - 1] = 1.0;
        let f = InitialDifference::new(f);
        let t = 1e-3;
        let d = ubar_dt(&f, &q, q.gamma[k - 1], t).unwrap();
        let approx = -4.0 / (n as f64 * t * t * q.rho[k - 1].powi(2));
        assert!(d < 0.0 && (d / approx - 1.0).abs() < 0.05, "{d} vs {approx}");
    }

    #[test]
    fn values_between_quantiles_stay_in_the_neighbourhood() {
        let n = 200;
        let q = SpectralQuantiles::new(n);
        let f = random_f(n, 4);
        let t = 0.5;
        let u = ubar_all(&f, &q, t).unwrap();
        for k in 2..n - 1 {
            let near = &u[k - 2..k + 2];
            let (lo, hi) = near.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            let rho = q.rho[k - 1].min(q.rho[k]);
            let slack = 20.0 * (q.gamma[k - 1] - q.gamma[k]) / (n as f64 * t * (t + rho).powi(2));
            for i in 1..20 {
                let x = q.gamma[k] + (q.gamma[k - 1] - q.gamma[k]) * i as f64 / 20.0;
                let v = ubar_x(&f, &q, x, t).unwrap();
                assert!(v >= lo - slack && v <= hi + slack, "k={k} x={x}: {v} outside [{lo}, {hi}] ± {slack}");
            }
        }
    }

    #[test]
    fn residual_bound_decreases_with_density() {
        let (n, t) = (500, 0.5);
        let q = SpectralQuantiles::new(n);
        let bounds: Vec<f64> = (1..=n / 2).map(|k| residual_bound(n, t, q.rho[k - 1])).collect();
        assert!(bounds.windows(2).all(|w| w[1] < w[0]));
        let (r1, rb) = (q.rho[0], q.rho[n / 2 - 1]);
        let ratio = (rb / r1) * ((t + rb) / (t + r1)).powi(2);
        assert!((bounds[0] / bounds[n / 2 - 1] / ratio - 1.0).abs() < 1e-12);
    }

    #[test]
    fn regularity_at_rigidity_scale() {
        let n = 1000;
        let q = SpectralQuantiles::new(n);
        let f = random_f(n, 1);
        let r = regularity_checks(&f, &q, 0.5, 20.0).unwrap();
        assert!(r.sup.all_pass(), "{r:?}");
        assert!(r.modulus.all_pass(), "{r:?}");
        assert!(r.derivative.checked > 0);
    }
}
