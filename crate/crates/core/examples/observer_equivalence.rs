//! An observer restricted to quadratic observables sees a state only through
//! its moment matrix `K = E[z z†]`. Two very different distributions with
//! the same `K` are indistinguishable; orthogonal point masses are not.

use emergent_qm::ensemble::{compare_states, expectation_quadratic, moment_matrix, sample, trace_observable, DistributionSpec, Ensemble};
use emergent_qm::linalg::HermitianMatrix;
use emergent_qm::observable::PhasePoint;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn delta(re: &[f64]) -> DistributionSpec {
    DistributionSpec::Delta(PhasePoint(re.iter().map(|&x| Complex64::new(x, 0.0)).collect()))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Equal mixture of the two basis points against an equal mixture of the
    // two diagonal points: both have K = I/2.
    let basis = DistributionSpec::Mixture(vec![(0.5, delta(&[1.0, 0.0])), (0.5, delta(&[0.0, 1.0]))]);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let diagonal = DistributionSpec::Mixture(vec![(0.5, delta(&[s, s])), (0.5, delta(&[s, -s]))]);
    let (a, b) = (Ensemble::exact(&basis)?, Ensemble::exact(&diagonal)?);
    println!("basis vs diagonal mixtures: {:?}", compare_states(&a, &b, None)?);

    let (x, y) = (Ensemble::exact(&delta(&[1.0, 0.0]))?, Ensemble::exact(&delta(&[0.0, 1.0]))?);
    println!("orthogonal point masses:    {:?}", compare_states(&x, &y, None)?);

    // A sampled Gaussian and the uniform sphere of radius √2 share K = I.
    let g = sample(&DistributionSpec::standard_gaussian(2), 200_000, 7)?;
    let u = sample(&DistributionSpec::UniformSphere { dim: 2, radius: 2f64.sqrt() }, 200_000, 8)?;
    println!("gaussian vs sphere (sampled): {:?}", compare_states(&g, &u, None)?);

    // Every quadratic expectation is a trace against K.
    let c = HermitianMatrix::random_gue(2, &mut ChaCha8Rng::seed_from_u64(4));
    println!(
        "E[<z,Cz>] = {:.12}, Tr(CK) = {:.12}",
        expectation_quadratic(&a, &c)?,
        trace_observable(&c, &moment_matrix(&a))
    );
    Ok(())
}
