// The short-range propagator and its finite speed of propagation.
//
// Evolves one flow, builds `𝒰^𝒮(0, T)` for band half-width `ℓ`, and prints
// how fast the column of the edge index decays with distance.

use dbmh::ensembles::{EnsembleSpec, EntryLaw, RngStream, Symmetry};
use dbmh::experiment::fsp_horizon;
use dbmh::flow::{evolve_semigroup, evolve_single, stochastic_defect, FlowConfig, SemigroupConfig};
use dbmh::universality::sample_pair;

pub fn run_example() -> dbmh::Result<()> {
    let (n, ell) = (80, 4);
    let spec = EnsembleSpec::wigner(n, Symmetry::RealSymmetric, EntryLaw::Gaussian);
    let stream = RngStream::new(3, 0);
    let (x0, _) = sample_pair(&spec, &stream)?;
    let t_end = fsp_horizon(n, ell, 1, 0.1);
    let grid: Vec<f64> = (0..=64).map(|i| t_end * i as f64 / 64.0).collect();
    let (path, _) = evolve_single(&x0, t_end, 1.0, &stream.substream(2), &grid, &FlowConfig::semi_implicit(2, t_end / 64.0))?;
    let u = evolve_semigroup(&path, ell, 0.0, t_end, &SemigroupConfig::default())?;
    println!("T = {t_end:.4}, doubly stochastic defect = {:.1e}", stochastic_defect(&u)?);
    for d in [0, 1, 2, ell, 2 * ell, 4 * ell, 6 * ell] {
        println!("|U[1 + {d:>2}, 1]| = {:.2e}", u[(d, 0)].abs());
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> dbmh::Result<()> {
    run_example()
}
