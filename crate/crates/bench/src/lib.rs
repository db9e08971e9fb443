//! Shared fixtures for the benchmarks.

use krylov_core::Spectrum;

/// Levels of the unit square, `pi^2 (p^2 + q^2)`, lowest `n` of them.
pub fn square_spectrum(n: usize) -> Spectrum {
    let side = (n as f64).sqrt() as usize * 2 + 2;
    let mut levels: Vec<f64> = (1..=side)
        .flat_map(|p| {
            (1..=side).map(move |q| ((p * p + q * q) as f64) * std::f64::consts::PI.powi(2))
        })
        .collect();
    levels.sort_by(f64::total_cmp);
    levels.truncate(n);
    // break the p <-> q degeneracy so gaps stay generic
    let levels = levels
        .iter()
        .enumerate()
        .map(|(i, e)| e + 1e-3 * i as f64)
        .collect();
    Spectrum::from_energies(levels).expect("valid levels")
}
