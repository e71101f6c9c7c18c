//! Normalizing `K` by its trace `c` gives a density matrix with `ħ = 1/c`; its
//! eigen-decomposition is a mixture of orthogonal pure states.

use emergent_qm::ensemble::{moment_matrix, DistributionSpec, Ensemble};
use emergent_qm::linalg::frobenius;
use emergent_qm::observable::PhasePoint;
use emergent_qm::quantum::{normalize_density, pure_state_decomposition};
use num_complex::Complex64;

fn point(re: &[f64]) -> DistributionSpec {
    DistributionSpec::Delta(PhasePoint(re.iter().map(|&x| Complex64::new(x, 0.0)).collect()))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Two non-orthogonal pure states with total weight 2.
    let spec = DistributionSpec::Mixture(vec![(0.7, point(&[1.2, 0.0, 0.0])), (0.3, point(&[0.6, 0.8, 0.0]))]);
    let k = moment_matrix(&Ensemble::exact(&spec)?);
    let rho = normalize_density(&k)?;
    println!("Tr K = {:.6}, hbar = 1/Tr K = {:.6}, Tr rho = {:.6}", k.trace(), rho.hbar(), rho.trace());

    let mix = pure_state_decomposition(&k)?;
    for c in &mix.components {
        println!("weight {:.6}: state {:.4?}", c.weight, c.state.iter().map(|z| (z.re, z.im)).collect::<Vec<_>>());
    }
    println!("probabilities {:.6?}", mix.probabilities());
    println!("reconstruction error {:.2e}", frobenius(&(mix.reconstruct() - k.operator())));
    Ok(())
}
