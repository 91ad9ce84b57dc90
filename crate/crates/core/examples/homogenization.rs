// The homogenized predictor against a coupled simulation.
//
// Computes `ū_k(t)` from the initial spectra, compares `e^{−t/2}ū_k` with
// the simulated `λ_k(t) − μ_k(t)`, and checks the nonlocal equation
// `∂_t ū = PV∫(ū(y) − ū(x))/(x−y)² ρ_sc(y) dy` at one point.

use dbmh::ensembles::{EnsembleSpec, EntryLaw, RngStream, Symmetry};
use dbmh::flow::{evolve_coupled, FlowConfig};
use dbmh::homogenization::{homog_report, pv_nonlocal, ubar_dt, ubar_x, InitialDifference, PvConfig};
use dbmh::spectral::SpectralQuantiles;
use dbmh::universality::sample_pair;

pub fn run_example() -> dbmh::Result<()> {
    let n = 150;
    let t = 0.5;
    let q = SpectralQuantiles::new(n);
    let spec = EnsembleSpec::wigner(n, Symmetry::RealSymmetric, EntryLaw::Rademacher);
    let stream = RngStream::new(11, 0);
    let (l0, m0) = sample_pair(&spec, &stream)?;
    let cfg = FlowConfig::semi_implicit(2, (n as f64).powf(-1.5));
    let traj = evolve_coupled(&l0, &m0, t, 1.0, &stream.substream(2), &[], &cfg)?;
    let report = homog_report(&traj, &q, t)?;
    println!("{:>4} {:>12} {:>12} {:>12} {:>10}", "k", "actual", "predicted", "residual", "res/bound");
    for k in [1, 2, 5, n / 4, n / 2] {
        let i = k - 1;
        let pred = (-0.5 * t).exp() * report.ubar[i];
        println!("{k:>4} {:>12.4e} {pred:>12.4e} {:>12.3e} {:>10.2}", report.actual[i], report.residual[i], report.normalized[i]);
    }

    let f = InitialDifference::from_spectra(&l0, &m0)?;
    let x = 0.4;
    let lhs = ubar_dt(&f, &q, x, t)?;
    let rhs = pv_nonlocal(|y| ubar_x(&f, &q, y, t).expect("interior"), x, &PvConfig::default())?;
    println!("at x = {x}: ∂_t ū = {lhs:.6e}, nonlocal operator = {rhs:.6e}");
    Ok(())
}

#[allow(dead_code)]
fn main() -> dbmh::Result<()> {
    run_example()
}
