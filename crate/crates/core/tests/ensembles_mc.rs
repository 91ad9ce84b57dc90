use dbmh::ensembles::{
    eigenvalues_desc, make_profile, ou_interpolate, sample, EnsembleSpec, EntryLaw, ProfileKind, RngStream,
    SymmetricMatrix, Symmetry,
};
use dbmh::universality::ks_distance;
use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

const DRAWS: u64 = 10_000;

fn entry(h: &SymmetricMatrix, i: usize, j: usize) -> Complex64 {
    match h {
        SymmetricMatrix::Real(m) => Complex64::new(m[(i, j)], 0.0),
        SymmetricMatrix::Complex(m) => m[(i, j)],
    }
}

/// Per-entry sums of `|H_ij|²`, `|H_ij|⁴` and `H_ij²` over the draws.
fn moments(draws: impl Iterator<Item = SymmetricMatrix>, n: usize) -> (Vec<f64>, Vec<f64>, Vec<Complex64>) {
    let (mut m2, mut m4, mut sq) = (vec![0.0; n * n], vec![0.0; n * n], vec![Complex64::new(0.0, 0.0); n * n]);
    for h in draws {
        for i in 0..n {
            for j in 0..n {
                let x = entry(&h, i, j);
                m2[i * n + j] += x.norm_sqr();
                m4[i * n + j] += x.norm_sqr() * x.norm_sqr();
                sq[i * n + j] += x * x;
            }
        }
    }
    (m2, m4, sq)
}

#[test]
fn entry_variances_follow_the_profile() {
    let n = 6;
    for (sym, law) in [(Symmetry::RealSymmetric, EntryLaw::Uniform), (Symmetry::ComplexHermitian, EntryLaw::SmoothMixture)] {
        let profile = make_profile(ProfileKind::TwoBlock, n, 0.5, sym).unwrap();
        let spec = EnsembleSpec { n, symmetry: sym, entry_law: law, profile: profile.clone() };
        let root = RngStream::new(1, 0);
        let (m2, m4, sq) = moments((0..DRAWS).map(|i| sample(&spec, &root.substream(i))), n);
        let d = DRAWS as f64;
        for i in 0..n {
            for j in 0..n {
                let mean = m2[i * n + j] / d;
                let se = ((m4[i * n + j] / d - mean * mean) / d).sqrt();
                assert!((mean - profile.get(i, j)).abs() < 3.5 * se, "{sym:?} ({i},{j}): {mean} vs {}", profile.get(i, j));
                if sym == Symmetry::ComplexHermitian && i != j {
                    // E[H_ij²] = 0 off the diagonal
                    assert!((sq[i * n + j] / d).norm() < 4.0 * profile.get(i, j) / d.sqrt());
                }
            }
        }
    }
}

#[test]
fn trace_of_square_has_the_profile_mass() {
    let n = 2;
    for law in [EntryLaw::Gaussian, EntryLaw::Rademacher, EntryLaw::Uniform] {
        let spec = EnsembleSpec::wigner(n, Symmetry::RealSymmetric, law);
        let exact: f64 = spec.profile.s.iter().sum();
        let root = RngStream::new(2, 0);
        let tr: Vec<f64> = (0..DRAWS)
            .map(|i| match sample(&spec, &root.substream(i)) {
                SymmetricMatrix::Real(m) => (&m * &m).trace(),
                SymmetricMatrix::Complex(_) => unreachable!(),
            })
            .collect();
        let mean = tr.iter().sum::<f64>() / DRAWS as f64;
        let var = tr.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (DRAWS - 1) as f64;
        // Rademacher entries make the trace deterministic
        assert!((mean - exact).abs() < 3.0 * (var / DRAWS as f64).sqrt() + 1e-12, "{law:?}: {mean} vs {exact}");
    }
}

#[test]
fn ou_interpolation_mixes_variances() {
    let (n, t) = (4, 0.7);
    let sym = Symmetry::RealSymmetric;
    let spec = EnsembleSpec { n, symmetry: sym, entry_law: EntryLaw::Rademacher, profile: make_profile(ProfileKind::Banded, n, 1.0, sym).unwrap() };
    let gauss = EnsembleSpec::gaussian(n, sym);
    let root = RngStream::new(3, 0);
    let draws = (0..DRAWS).map(|i| {
        let s = root.substream(i);
        ou_interpolate(&sample(&spec, &s.substream(0)), &sample(&gauss, &s.substream(1)), t).unwrap()
    });
    let (m2, m4, _) = moments(draws, n);
    let d = DRAWS as f64;
    let a = (-t).exp();
    for i in 0..n {
        for j in 0..n {
            let expect = a * spec.profile.get(i, j) + (1.0 - a) * gauss.profile.get(i, j);
            let mean = m2[i * n + j] / d;
            let se = ((m4[i * n + j] / d - mean * mean) / d).sqrt();
            assert!((mean - expect).abs() < 3.5 * se, "({i},{j}): {mean} vs {expect}");
        }
    }
}

#[test]
fn eigenvalues_match_an_independent_decomposition() {
    let root = RngStream::new(4, 0);
    for (i, n) in [1usize, 2, 7, 40, 150].into_iter().enumerate() {
        let spec = EnsembleSpec::wigner(n, Symmetry::RealSymmetric, EntryLaw::Uniform);
        let SymmetricMatrix::Real(h) = sample(&spec, &root.substream(i as u64)) else { unreachable!() };
        let eig = SymmetricEigen::new(h.clone());
        let v = &eig.eigenvectors;
        let recon = (&h * v - v * DMatrix::from_diagonal(&eig.eigenvalues)).norm() / h.norm().max(1e-300);
        assert!(recon < 1e-9);
        let mut oracle: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        oracle.sort_by(|a, b| b.total_cmp(a));
        let ours = eigenvalues_desc(&SymmetricMatrix::Real(h.clone())).unwrap();
        let scale = h.norm().max(1.0);
        for (a, b) in ours.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-9 * scale, "n={n}: {a} vs {b}");
        }
    }
}

#[test]
fn hermitian_eigenvalues_match_the_real_embedding() {
    // [[A, −B], [B, A]] carries each eigenvalue of A + iB twice
    let n = 12;
    let spec = EnsembleSpec::gaussian(n, Symmetry::ComplexHermitian);
    let h = sample(&spec, &RngStream::new(6, 0));
    let SymmetricMatrix::Complex(m) = &h else { unreachable!() };
    let big = DMatrix::from_fn(2 * n, 2 * n, |i, j| {
        let z = m[(i % n, j % n)];
        match (i < n, j < n) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    });
    let mut oracle: Vec<f64> = SymmetricEigen::new(big).eigenvalues.iter().copied().collect();
    oracle.sort_by(|a, b| b.total_cmp(a));
    let ours = eigenvalues_desc(&h).unwrap();
    for (k, a) in ours.iter().enumerate() {
        assert!((a - oracle[2 * k]).abs() < 1e-9, "{a} vs {}", oracle[2 * k]);
    }
}

#[test]
fn goe_extremes_sit_near_the_edges() {
    let n = 500;
    let spec = EnsembleSpec::gaussian(n, Symmetry::RealSymmetric);
    let root = RngStream::new(7, 0);
    let inside = (0..100u64)
        .filter(|&i| {
            let e = eigenvalues_desc(&sample(&spec, &root.substream(i))).unwrap();
            e[0] <= 2.5 && e[n - 1] >= -2.5
        })
        .count();
    assert!(inside >= 99, "{inside}/100");
}

#[test]
fn ou_flow_of_a_gaussian_is_gaussian() {
    let (n, m, t) = (20, 500u64, 0.8);
    let spec = EnsembleSpec::gaussian(n, Symmetry::RealSymmetric);
    let root = RngStream::new(8, 0);
    let (mut flowed, mut fresh) = (Vec::new(), Vec::new());
    for i in 0..m {
        let s = root.substream(i);
        let h = ou_interpolate(&sample(&spec, &s.substream(0)), &sample(&spec, &s.substream(1)), t).unwrap();
        flowed.push(eigenvalues_desc(&h).unwrap()[n / 2 - 1]);
        fresh.push(eigenvalues_desc(&sample(&spec, &s.substream(2))).unwrap()[n / 2 - 1]);
    }
    // two-sample critical value at level 0.01
    let crit = 1.628 * (2.0 / m as f64).sqrt();
    let d = ks_distance(&flowed, &fresh);
    assert!(d < crit, "KS distance {d} >= {crit}");
}
