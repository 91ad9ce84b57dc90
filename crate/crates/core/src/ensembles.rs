//! Generalized Wigner ensembles: variance profiles, entry laws, sampling,
//! the Ornstein–Uhlenbeck matrix interpolation and eigenvalue extraction.

use std::io::{Read, Write};

use nalgebra::{DMatrix, SymmetricTridiagonal};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Symmetry class of the ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Symmetry {
    /// Real symmetric, β = 1.
    RealSymmetric,
    /// Complex Hermitian, β = 2.
    ComplexHermitian,
}

impl Symmetry {
    pub fn beta(self) -> f64 {
        match self {
            Symmetry::RealSymmetric => 1.0,
            Symmetry::ComplexHermitian => 2.0,
        }
    }

    pub fn from_beta(beta: u8) -> Result<Self> {
        match beta {
            1 => Ok(Symmetry::RealSymmetric),
            2 => Ok(Symmetry::ComplexHermitian),
            b => Err(Error::domain(format!("beta must be 1 or 2, got {b}"))),
        }
    }
}

/// Law of the normalized entry `√N H_ij / √(N S_ij)`: centered, unit variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntryLaw {
    Gaussian,
    /// Uniform on `{−1, +1}`.
    Rademacher,
    /// Uniform on `[−√3, √3]`.
    Uniform,
    /// Equal-weight mixture of `N(±a, 1−a²)` with `a² = 1/2`: a smooth
    /// positive density with nonzero fourth cumulant.
    SmoothMixture,
}

const MIXTURE_SHIFT_SQ: f64 = 0.5;

impl EntryLaw {
    /// Draws one unit-variance sample.
    pub fn draw<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            EntryLaw::Gaussian => rng.sample(StandardNormal),
            EntryLaw::Rademacher => {
                if rng.gen::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            EntryLaw::Uniform => {
                let r3 = 3f64.sqrt();
                rng.gen_range(-r3..r3)
            }
            EntryLaw::SmoothMixture => {
                let a = MIXTURE_SHIFT_SQ.sqrt();
                let s = (1.0 - MIXTURE_SHIFT_SQ).sqrt();
                let z: f64 = rng.sample(StandardNormal);
                if rng.gen::<bool>() {
                    a + s * z
                } else {
                    -a + s * z
                }
            }
        }
    }

    /// Fourth moment `E[x⁴]` of the unit-variance law.
    pub fn fourth_moment(self) -> f64 {
        match self {
            EntryLaw::Gaussian => 3.0,
            EntryLaw::Rademacher => 1.0,
            EntryLaw::Uniform => 9.0 / 5.0,
            EntryLaw::SmoothMixture => {
                let a2 = MIXTURE_SHIFT_SQ;
                let s2 = 1.0 - a2;
                a2 * a2 + 6.0 * a2 * s2 + 3.0 * s2 * s2
            }
        }
    }
}

/// `s₄ = E[x⁴] − 3(E[x²])²` of the normalized off-diagonal entry.
pub fn fourth_cumulant(law: EntryLaw) -> f64 {
    law.fourth_moment() - 3.0
}

/// Shape of the variance profile before normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileKind {
    /// Standard Wigner: `(1+δ_ij)/N` for real symmetric, `1/N` for Hermitian.
    Flat,
    /// Weight 1 within `|i−j| < width`, 0.1 elsewhere, then balanced.
    Banded,
    /// Two blocks of sizes `⌊N/3⌋` and `N − ⌊N/3⌋`; cross-block weight
    /// `param`, then balanced.
    TwoBlock,
}

const BAND_FLOOR: f64 = 0.1;
const SINKHORN_MAX_SWEEPS: usize = 1000;

/// Matrix of entry variances `S_ij`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceProfile {
    pub n: usize,
    /// Row-major `n × n`.
    pub s: Vec<f64>,
    /// Comparability constant `C` with `1/(CN) ≤ S_ij ≤ C/N`.
    pub c_bound: f64,
}

impl VarianceProfile {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.s[i * self.n + j]
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let n = self.n;
        (0..n).map(|j| (0..n).map(|i| self.s[i * n + j]).sum()).collect()
    }

    /// Standard Wigner profile for the given symmetry class.
    pub fn wigner(n: usize, symmetry: Symmetry) -> Self {
        let mut s = vec![1.0 / n as f64; n * n];
        if symmetry == Symmetry::RealSymmetric {
            for i in 0..n {
                s[i * n + i] = 2.0 / n as f64;
            }
        }
        Self::with_bound(n, s)
    }

    fn with_bound(n: usize, s: Vec<f64>) -> Self {
        let nf = n as f64;
        let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
        for &v in &s {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let c_bound = (hi * nf).max(1.0 / (lo * nf));
        Self { n, s, c_bound }
    }
}

/// Builds a variance profile.
///
/// `Flat` returns the standard Wigner normalization, whose real-symmetric
/// column sums are `1 + 1/N`. `Banded` (param = band width) and `TwoBlock`
/// (param = cross-block weight) are balanced by symmetric Sinkhorn scaling
/// to unit column sums.
pub fn make_profile(kind: ProfileKind, n: usize, param: f64, symmetry: Symmetry) -> Result<VarianceProfile> {
    if n < 2 {
        return Err(Error::domain(format!("profile dimension must be at least 2, got {n}")));
    }
    let pattern: Vec<f64> = match kind {
        ProfileKind::Flat => return Ok(VarianceProfile::wigner(n, symmetry)),
        ProfileKind::Banded => {
            if !(param >= 1.0) {
                return Err(Error::domain(format!("band width must be >= 1, got {param}")));
            }
            let w = param.floor() as usize;
            let mut a = vec![BAND_FLOOR; n * n];
            for i in 0..n {
                for j in 0..n {
                    if i.abs_diff(j) < w {
                        a[i * n + j] = 1.0;
                    }
                }
            }
            a
        }
        ProfileKind::TwoBlock => {
            if !(param > 0.0) {
                return Err(Error::domain(format!("cross-block weight must be positive, got {param}")));
            }
            let b = n / 3;
            let mut a = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    a[i * n + j] = if (i < b) == (j < b) { 1.0 } else { param };
                }
            }
            a
        }
    };
    let s = sinkhorn_symmetric(n, &pattern)?;
    Ok(VarianceProfile::with_bound(n, s))
}

/// Finds `d > 0` with `Σ_i d_i A_ij d_j = 1` for every column and returns
/// `D A D`.
fn sinkhorn_symmetric(n: usize, a: &[f64]) -> Result<Vec<f64>> {
    let mut d = vec![1.0 / (n as f64).sqrt(); n];
    for _ in 0..SINKHORN_MAX_SWEEPS {
        let ad: Vec<f64> = (0..n).map(|i| (0..n).map(|j| a[i * n + j] * d[j]).sum()).collect();
        let err = (0..n).map(|i| (d[i] * ad[i] - 1.0).abs()).fold(0.0, f64::max);
        if err < 1e-14 {
            let mut s = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..=i {
                    let v = d[i] * a[i * n + j] * d[j];
                    s[i * n + j] = v;
                    s[j * n + i] = v;
                }
            }
            return Ok(s);
        }
        for i in 0..n {
            d[i] = (d[i] / ad[i]).sqrt();
        }
    }
    Err(Error::Normalization(SINKHORN_MAX_SWEEPS))
}

/// Full description of a generalized Wigner ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub n: usize,
    pub symmetry: Symmetry,
    pub entry_law: EntryLaw,
    pub profile: VarianceProfile,
}

impl EnsembleSpec {
    /// Standard Wigner matrix with the given entry law.
    pub fn wigner(n: usize, symmetry: Symmetry, entry_law: EntryLaw) -> Self {
        Self {
            n,
            symmetry,
            entry_law,
            profile: VarianceProfile::wigner(n, symmetry),
        }
    }

    /// GOE (real) or GUE (complex).
    pub fn gaussian(n: usize, symmetry: Symmetry) -> Self {
        Self::wigner(n, symmetry, EntryLaw::Gaussian)
    }
}

/// Reproducible random stream identified by `(seed, stream_id)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    /// A fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(self.stream_id);
        r
    }

    /// An independent stream for a named purpose within the same trial.
    pub fn substream(&self, tag: u64) -> Self {
        Self {
            seed: splitmix64(self.seed ^ splitmix64(tag.wrapping_add(0x5851_f42d_4c95_7f2d))),
            stream_id: self.stream_id,
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Dense self-adjoint matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum SymmetricMatrix {
    Real(DMatrix<f64>),
    Complex(DMatrix<Complex64>),
}

impl SymmetricMatrix {
    pub fn dim(&self) -> usize {
        match self {
            SymmetricMatrix::Real(m) => m.nrows(),
            SymmetricMatrix::Complex(m) => m.nrows(),
        }
    }

    pub fn symmetry(&self) -> Symmetry {
        match self {
            SymmetricMatrix::Real(_) => Symmetry::RealSymmetric,
            SymmetricMatrix::Complex(_) => Symmetry::ComplexHermitian,
        }
    }

    /// `|H_ij|²`.
    pub fn abs2(&self, i: usize, j: usize) -> f64 {
        match self {
            SymmetricMatrix::Real(m) => m[(i, j)] * m[(i, j)],
            SymmetricMatrix::Complex(m) => m[(i, j)].norm_sqr(),
        }
    }

    pub fn is_self_adjoint(&self) -> bool {
        match self {
            SymmetricMatrix::Real(m) => m == &m.transpose(),
            SymmetricMatrix::Complex(m) => m == &m.adjoint(),
        }
    }
}

/// Samples a matrix, filling the lower triangle in row-major order and
/// mirroring it.
pub fn sample(spec: &EnsembleSpec, stream: &RngStream) -> SymmetricMatrix {
    let n = spec.n;
    assert_eq!(spec.profile.n, n, "profile dimension mismatch");
    let mut rng = stream.rng();
    match spec.symmetry {
        Symmetry::RealSymmetric => {
            let mut m = DMatrix::<f64>::zeros(n, n);
            for i in 0..n {
                for j in 0..=i {
                    let v = spec.profile.get(i, j).sqrt() * spec.entry_law.draw(&mut rng);
                    m[(i, j)] = v;
                    m[(j, i)] = v;
                }
            }
            SymmetricMatrix::Real(m)
        }
        Symmetry::ComplexHermitian => {
            let mut m = DMatrix::<Complex64>::zeros(n, n);
            let half = std::f64::consts::FRAC_1_SQRT_2;
            for i in 0..n {
                for j in 0..=i {
                    let sd = spec.profile.get(i, j).sqrt();
                    if i == j {
                        m[(i, i)] = Complex64::new(sd * spec.entry_law.draw(&mut rng), 0.0);
                    } else {
                        let re = spec.entry_law.draw(&mut rng);
                        let im = spec.entry_law.draw(&mut rng);
                        let v = Complex64::new(re, im) * (sd * half);
                        m[(i, j)] = v;
                        m[(j, i)] = v.conj();
                    }
                }
            }
            SymmetricMatrix::Complex(m)
        }
    }
}

/// `H_t = e^{−t/2} H_0 + √(1 − e^{−t}) G`.
pub fn ou_interpolate(h0: &SymmetricMatrix, g: &SymmetricMatrix, t: f64) -> Result<SymmetricMatrix> {
    if h0.dim() != g.dim() {
        return Err(Error::DimensionMismatch {
            expected: h0.dim(),
            got: g.dim(),
        });
    }
    if t < 0.0 {
        return Err(Error::domain(format!("interpolation time must be >= 0, got {t}")));
    }
    let a = (-0.5 * t).exp();
    let b = (-(-t).exp_m1()).sqrt();
    match (h0, g) {
        (SymmetricMatrix::Real(h), SymmetricMatrix::Real(g)) => Ok(SymmetricMatrix::Real(h * a + g * b)),
        (SymmetricMatrix::Complex(h), SymmetricMatrix::Complex(g)) => {
            Ok(SymmetricMatrix::Complex(h * Complex64::new(a, 0.0) + g * Complex64::new(b, 0.0)))
        }
        _ => Err(Error::domain("symmetry classes of H0 and G differ")),
    }
}

const QL_MAX_ITER: usize = 60;

/// Eigenvalues in descending order: Householder tridiagonalization followed
/// by implicit QL with Wilkinson shifts.
pub fn eigenvalues_desc(h: &SymmetricMatrix) -> Result<Vec<f64>> {
    let (d, e) = match h {
        SymmetricMatrix::Real(m) => {
            if m.nrows() == 1 {
                return Ok(vec![m[(0, 0)]]);
            }
            let tri = SymmetricTridiagonal::new(m.clone());
            (tri.diagonal().as_slice().to_vec(), tri.off_diagonal().as_slice().to_vec())
        }
        SymmetricMatrix::Complex(m) => {
            if m.nrows() == 1 {
                return Ok(vec![m[(0, 0)].re]);
            }
            let tri = SymmetricTridiagonal::new(m.clone());
            (tri.diagonal().as_slice().to_vec(), tri.off_diagonal().as_slice().to_vec())
        }
    };
    tridiagonal_eigenvalues_desc(d, &e)
}

/// Eigenvalues of the symmetric tridiagonal matrix with diagonal `d` and
/// off-diagonal `e` (`e[i]` couples `i` and `i+1`), in descending order.
pub fn tridiagonal_eigenvalues_desc(mut d: Vec<f64>, off: &[f64]) -> Result<Vec<f64>> {
    let n = d.len();
    if n == 0 {
        return Ok(d);
    }
    if off.len() + 1 != n {
        return Err(Error::DimensionMismatch {
            expected: n - 1,
            got: off.len(),
        });
    }
    let mut e = off.to_vec();
    e.push(0.0);
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m < n - 1 {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > QL_MAX_ITER {
                return Err(Error::EigenConvergence(QL_MAX_ITER));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut underflow = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    d.sort_by(|a, b| b.total_cmp(a));
    Ok(d)
}

/// Tridiagonal β-Hermite model with the Wigner normalization: diagonal
/// `N(0, 2/(βN))`, off-diagonal `χ_{β(N−i)}/√(βN)`. Its eigenvalues have
/// the GOE (β=1) or GUE (β=2) law; used for fixtures and cross-checks.
pub fn gaussian_tridiagonal_eigenvalues(n: usize, symmetry: Symmetry, stream: &RngStream) -> Result<Vec<f64>> {
    let beta = symmetry.beta();
    let scale = 1.0 / (beta * n as f64).sqrt();
    let mut rng = stream.rng();
    let d: Vec<f64> = (0..n)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            z * 2f64.sqrt() * scale
        })
        .collect();
    let e: Vec<f64> = (1..n)
        .map(|i| {
            let k = beta * (n - i) as f64;
            let chi2 = ChiSquared::new(k).expect("positive degrees of freedom");
            chi2.sample(&mut rng).sqrt() * scale
        })
        .collect();
    tridiagonal_eigenvalues_desc(d, &e)
}

/// Writes `(n: u64, β: u8, dtype: u8)` little-endian followed by the lower
/// triangle in row-major order. `dtype` is 0 for `f64` entries and 1 for
/// `(re, im)` pairs of `f64`.
pub fn write_matrix_dump<W: Write>(h: &SymmetricMatrix, mut w: W) -> Result<()> {
    let n = h.dim();
    w.write_all(&(n as u64).to_le_bytes())?;
    match h {
        SymmetricMatrix::Real(m) => {
            w.write_all(&[1u8, 0u8])?;
            for i in 0..n {
                for j in 0..=i {
                    w.write_all(&m[(i, j)].to_le_bytes())?;
                }
            }
        }
        SymmetricMatrix::Complex(m) => {
            w.write_all(&[2u8, 1u8])?;
            for i in 0..n {
                for j in 0..=i {
                    w.write_all(&m[(i, j)].re.to_le_bytes())?;
                    w.write_all(&m[(i, j)].im.to_le_bytes())?;
                }
            }
        }
    }
    Ok(())
}

/// Inverse of [`write_matrix_dump`].
pub fn read_matrix_dump<R: Read>(mut r: R) -> Result<SymmetricMatrix> {
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let n = u64::from_le_bytes(b8) as usize;
    let mut hdr = [0u8; 2];
    r.read_exact(&mut hdr)?;
    let mut next = |r: &mut R| -> Result<f64> {
        r.read_exact(&mut b8)?;
        Ok(f64::from_le_bytes(b8))
    };
    match hdr {
        [1, 0] => {
            let mut m = DMatrix::<f64>::zeros(n, n);
            for i in 0..n {
                for j in 0..=i {
                    let v = next(&mut r)?;
                    m[(i, j)] = v;
                    m[(j, i)] = v;
                }
            }
            Ok(SymmetricMatrix::Real(m))
        }
        [2, 1] => {
            let mut m = DMatrix::<Complex64>::zeros(n, n);
            for i in 0..n {
                for j in 0..=i {
                    let v = Complex64::new(next(&mut r)?, next(&mut r)?);
                    m[(i, j)] = v;
                    m[(j, i)] = v.conj();
                }
            }
            Ok(SymmetricMatrix::Complex(m))
        }
        other => Err(Error::domain(format!("unknown matrix dump header {other:?}"))),
    }
}
