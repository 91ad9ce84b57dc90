// Semicircle quantiles, the Stieltjes transform and its characteristics.
//
// Prints the quantile table edges for a small `N` and checks that
// `msc(z_t) = e^{−t/2} msc(z)` along a few characteristics.

use dbmh::characteristics::advance;
use dbmh::spectral::{msc, msc_unchecked, semicircle_cdf, ComplexEnergy, SpectralQuantiles};

pub fn run_example() -> dbmh::Result<()> {
    let n = 12;
    let q = SpectralQuantiles::new(n);
    println!("{:>3} {:>10} {:>10} {:>12}", "k", "gamma_k", "rho_k", "tail mass");
    for k in [1, 2, n / 2, n - 1, n] {
        let g = q.gamma_at(k)?;
        println!("{k:>3} {g:>10.6} {:>10.6} {:>12.6}", q.rho_at(k)?, 1.0 - semicircle_cdf(g));
    }

    for (e, eta) in [(0.3, 0.01), (1.99, 1e-4), (-2.5, 0.2)] {
        let z = ComplexEnergy::new(e, eta);
        let m0 = msc(z)?;
        for t in [0.25, 1.0] {
            let zt = advance(z, t);
            let drift = (msc_unchecked(zt) - (-0.5 * t).exp() * m0).norm();
            println!("z = {e}+{eta}i, t = {t}: z_t = {zt:.5}, |msc(z_t) − e^(-t/2) msc(z)| = {drift:.1e}");
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> dbmh::Result<()> {
    run_example()
}
