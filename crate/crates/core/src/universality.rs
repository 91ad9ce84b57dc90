//! Edge statistics built on the coupled flow: top gap and top eigenvalue,
//! the two-sample KS distance, the log-determinant statistic `ξ` and its
//! prediction of `λ_1(t) − μ_1(t)`, and the fourth-cumulant mean shift of
//! the largest eigenvalue.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::characteristics::advance;
use crate::ensembles::{eigenvalues_desc, fourth_cumulant, sample, EnsembleSpec, RngStream};
use crate::error::{Error, Result, ResultExt};
use crate::flow::{evolve_coupled, CoupledTrajectory, FlowConfig};
use crate::quadrature::integrate_refined;
use crate::spectral::{msc, ComplexEnergy, SpectralQuantiles};

/// One scalar statistic per trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub label: String,
    pub seed: u64,
    pub values: Vec<f64>,
}

impl SampleSet {
    pub fn new(label: impl Into<String>, seed: u64, values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::domain(format!("a sample set needs at least 2 values, got {}", values.len())));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!("non-finite value at trial {i}")));
        }
        Ok(Self {
            label: label.into(),
            seed,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        mean(&self.values)
    }

    /// Standard error of the mean.
    pub fn stderr(&self) -> f64 {
        (variance(&self.values) / self.len() as f64).sqrt()
    }

    pub fn median(&self) -> f64 {
        median(&self.values)
    }

    pub fn ks_distance(&self, other: &SampleSet) -> f64 {
        ks_distance(&self.values, &other.values)
    }

    /// Writes `trial,value` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "trial,value")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(w, "{i},{v}")?;
        }
        Ok(())
    }
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Unbiased sample variance.
pub fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0)
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Empirical quantile with linear interpolation, `p ∈ [0, 1]`.
pub fn quantile(v: &[f64], p: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = p.clamp(0.0, 1.0) * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    s[lo] + (pos - lo as f64) * (s[hi] - s[lo])
}

/// Least-squares slope and intercept of `log y` against `log x`.
pub fn loglog_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::domain("log-log fit needs at least two matching points"));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return Err(Error::domain("log-log fit needs positive data"));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let (mx, my) = (mean(&lx), mean(&ly));
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Two-sample KS distance `sup_x |F_a(x) − F_b(x)|` with right-continuous
/// empirical CDFs. Both samples must be nonempty.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "KS distance of an empty sample");
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(&p), Some(&q)) => p.min(q),
            (Some(&p), None) => p,
            (None, Some(&q)) => q,
            (None, None) => unreachable!(),
        };
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// `N^{2/3}(λ_1 − λ_2)` of a descending spectrum.
pub fn gap_statistic(eigs: &[f64]) -> Result<f64> {
    if eigs.len() < 2 {
        return Err(Error::domain("the top gap needs at least two eigenvalues"));
    }
    Ok((eigs.len() as f64).powf(2.0 / 3.0) * (eigs[0] - eigs[1]))
}

/// `N^{2/3}(λ_1 − 2)` of a descending spectrum.
pub fn top_statistic(eigs: &[f64]) -> f64 {
    (eigs.len() as f64).powf(2.0 / 3.0) * (eigs[0] - 2.0)
}

/// Top statistics of one coupled trial at one time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapRecord {
    pub trial: usize,
    pub gap_lambda: f64,
    pub top_lambda: f64,
    pub gap_mu: f64,
    pub top_mu: f64,
}

impl GapRecord {
    pub fn from_spectra(trial: usize, lambda: &[f64], mu: &[f64]) -> Result<Self> {
        Ok(Self {
            trial,
            gap_lambda: gap_statistic(lambda)?,
            top_lambda: top_statistic(lambda),
            gap_mu: gap_statistic(mu)?,
            top_mu: top_statistic(mu),
        })
    }

    /// `|gap_λ − gap_μ|`.
    pub fn gap_difference(&self) -> f64 {
        (self.gap_lambda - self.gap_mu).abs()
    }
}

/// `N^{2/3}|(λ_1−λ_2) − (μ_1−μ_2)|` at checkpoint `t`.
pub fn coupled_gap_difference(traj: &CoupledTrajectory, t: f64) -> Result<f64> {
    let (l, m) = traj.at(t)?;
    Ok(GapRecord::from_spectra(0, &l.x, &m.x)?.gap_difference())
}

/// The probe `γ_1 + iN^{−2/3+ε₁}` used for `ξ`.
pub fn edge_probe(n: usize, eps1: f64) -> ComplexEnergy {
    let q = SpectralQuantiles::new(n);
    ComplexEnergy::new(q.gamma[0], (n as f64).powf(-2.0 / 3.0 + eps1))
}

/// Relative accuracy of the reference integral in [`xi_statistic`].
const XI_QUAD_TOL: f64 = 1e-10;

/// `Im ∫ log(x − w) ρ_sc(x) dx` for `Im w > 0`, principal branch, by
/// quadrature in `x = 2cos φ`.
pub fn log_potential_im(w: Complex64) -> Result<f64> {
    integrate_refined(0.0, PI, XI_QUAD_TOL, 1e-12, 4, 8192, |phi| {
        let x = 2.0 * phi.cos();
        let s = phi.sin();
        (Complex64::new(x, 0.0) - w).ln().im * 2.0 / PI * s * s
    })
    .context(|| format!("log potential at {w}"))
}

/// `ξ(z, t) = Im[Σ_i log(λ_i − z_t) − N∫log(x − z_t)ρ_sc(x)dx] / Im msc(z)`
/// for the spectrum `eigs` (any order).
pub fn xi_statistic(eigs: &[f64], z: ComplexEnergy, t: f64) -> Result<f64> {
    let zt = advance(z, t);
    if !(zt.im > 0.0) {
        return Err(Error::domain(format!("characteristic {zt} is not in the upper half plane")));
    }
    let mut sum = 0.0;
    for &l in eigs {
        let arg = (Complex64::new(l, 0.0) - zt).ln().im;
        // each argument must sit strictly in the lower half plane
        assert!(arg < 0.0 && arg > -PI, "log branch violated at eigenvalue {l}: arg {arg}");
        sum += arg;
    }
    let reference = eigs.len() as f64 * log_potential_im(zt)?;
    Ok((sum - reference) / msc(z)?.im)
}

/// `(ξ^X − ξ^Y)/N` from the two initial spectra, the predicted
/// `λ_1(t) − μ_1(t)`.
pub fn lss_gap_prediction(l0: &[f64], m0: &[f64], z: ComplexEnergy, t: f64) -> Result<f64> {
    if l0.len() != m0.len() {
        return Err(Error::DimensionMismatch {
            expected: l0.len(),
            got: m0.len(),
        });
    }
    Ok((xi_statistic(l0, z, t)? - xi_statistic(m0, z, t)?) / l0.len() as f64)
}

/// Initial spectra of one coupled trial: `X` from `spec_x` and an
/// independent Gaussian matrix of the same symmetry class, drawn from the
/// substreams 0 and 1 of `stream`.
pub fn sample_pair(spec_x: &EnsembleSpec, stream: &RngStream) -> Result<(Vec<f64>, Vec<f64>)> {
    let spec_y = EnsembleSpec::gaussian(spec_x.n, spec_x.symmetry);
    let l0 = eigenvalues_desc(&sample(spec_x, &stream.substream(0)))?;
    let m0 = eigenvalues_desc(&sample(&spec_y, &stream.substream(1)))?;
    Ok((l0, m0))
}

/// Mean shift summary at one time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanShiftEstimate {
    #[serde(rename = "N")]
    pub n: usize,
    pub t: f64,
    #[serde(rename = "M")]
    pub m: usize,
    pub estimate: f64,
    pub stderr: f64,
    /// `e^{−2t} s₄ N^{−1/3}`.
    pub theory: f64,
    pub seed: u64,
}

/// Per-trial `N^{2/3}(λ_1(t) − μ_1(t))` for every requested time, and the
/// resulting estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanShiftRun {
    pub samples: Vec<SampleSet>,
    pub estimates: Vec<MeanShiftEstimate>,
}

/// Estimates `E[N^{2/3}(λ_1−2)]_X − E[N^{2/3}(μ_1−2)]_Gauss` at each time
/// in `ts` from `m` coupled trials. Trial `i` uses substream `i` of
/// `stream`; the shared noise cancels most of the edge fluctuation.
pub fn mean_shift_estimate(
    spec_x: &EnsembleSpec,
    ts: &[f64],
    m: usize,
    stream: &RngStream,
    flow: &FlowConfig,
) -> Result<MeanShiftRun> {
    if m < 2 {
        return Err(Error::domain("the mean shift needs at least two trials"));
    }
    if ts.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
        return Err(Error::domain("mean-shift times must lie in (0, 1]"));
    }
    let n = spec_x.n;
    let t_final = ts.iter().cloned().fold(0.0, f64::max);
    let scale = (n as f64).powf(2.0 / 3.0);
    let beta = spec_x.symmetry.beta();
    let per_trial: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let s = stream.substream(i as u64);
            let (l0, m0) = sample_pair(spec_x, &s)?;
            let traj = evolve_coupled(&l0, &m0, t_final, beta, &s.substream(2), ts, flow)?;
            ts.iter()
                .map(|&t| {
                    let (l, mu) = traj.at(t)?;
                    Ok(scale * (l.x[0] - mu.x[0]))
                })
                .collect()
        })
        .enumerate()
        .map(|(i, r)| r.context(|| format!("mean-shift trial {i}")))
        .collect::<Result<_>>()?;
    let s4 = fourth_cumulant(spec_x.entry_law);
    let mut samples = Vec::with_capacity(ts.len());
    let mut estimates = Vec::with_capacity(ts.len());
    for (c, &t) in ts.iter().enumerate() {
        let set = SampleSet::new(format!("mean-shift N={n} t={t}"), stream.seed, per_trial.iter().map(|v| v[c]).collect())?;
        estimates.push(MeanShiftEstimate {
            n,
            t,
            m,
            estimate: set.mean(),
            stderr: set.stderr(),
            theory: (-2.0 * t).exp() * s4 * (n as f64).powf(-1.0 / 3.0),
            seed: stream.seed,
        });
        samples.push(set);
    }
    Ok(MeanShiftRun { samples, estimates })
}

/// Ratio of means `ā/b̄` of paired samples with its delta-method standard
/// error, which accounts for the correlation between the pairs.
pub fn paired_ratio(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::domain("paired ratio needs two equal samples of size ≥ 2"));
    }
    let (ma, mb) = (mean(a), mean(b));
    if mb == 0.0 {
        return Err(Error::domain("paired ratio with zero denominator mean"));
    }
    let r = ma / mb;
    let n = a.len() as f64;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (n - 1.0);
    let var = (variance(a) + r * r * variance(b) - 2.0 * r * cov) / (mb * mb * n);
    Ok((r, var.max(0.0).sqrt()))
}
