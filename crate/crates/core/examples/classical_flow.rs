//! Integrates the Hamiltonian flow of a quadratic-plus-quartic observable and
//! reports energy and norm conservation; the trajectory goes to stdout as CSV.

use emergent_qm::dynamics::{integrate, IntegratorConfig, Method};
use emergent_qm::observable::{random_graded, PhasePoint};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h = random_graded(2, 1.0, 0.3, 2, &mut rng);
    let z0 = PhasePoint::from_canonical(&[0.8, -0.2], &[0.1, 0.5])?;
    for method in [Method::SplitStep, Method::Rk4Adaptive] {
        let cfg = IntegratorConfig::default().with_method(method);
        let tr = integrate(&h, &z0, 10.0, &cfg)?;
        eprintln!(
            "{method:?}: {} steps, energy drift {:.2e}/unit, norm drift {:.2e}/unit",
            tr.times.len(),
            tr.energy_drift,
            tr.norm_drift
        );
        if method == Method::SplitStep {
            print!("{}", tr.to_csv());
        }
    }
    Ok(())
}
