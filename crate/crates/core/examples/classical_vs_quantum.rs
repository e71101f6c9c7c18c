//! For a quadratic Hamiltonian the classically evolved moment matrix is
//! exactly the quantum evolution `K(t) = U K U†`, `U = exp(−iĥt)`.

use emergent_qm::dynamics::IntegratorConfig;
use emergent_qm::ensemble::{sample, DistributionSpec, Ensemble};
use emergent_qm::experiment::classical_vs_quantum;
use emergent_qm::linalg::HermitianMatrix;
use emergent_qm::observable::PolynomialObservable;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n = 3;
    let hhat = HermitianMatrix::random_gue(n, &mut ChaCha8Rng::seed_from_u64(11));
    let h = PolynomialObservable::from_hermitian(&hhat);

    // Exact-weight mixture of sampled points, so K has no sampling error.
    let pts = sample(&DistributionSpec::UniformSphere { dim: n, radius: 1.0 }, 5, 2)?;
    let e = Ensemble::weighted(pts.points().to_vec(), vec![0.2; 5])?;

    for row in classical_vs_quantum(&e, &h, &[0.5, 1.0, 2.0, 5.0], &IntegratorConfig::default())? {
        println!("t = {:4}: relative distance {:.2e}", row.time, row.deviation);
    }
    Ok(())
}
