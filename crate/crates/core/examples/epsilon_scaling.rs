//! With `u = √ε z` the quartic part of `H` enters the flow in `z` with weight
//! `ε`, so the gap between classical and quadratic-quantum moment matrices
//! shrinks linearly as `ε → 0`. Here `ε` plays the role of `ħ`.

use emergent_qm::dynamics::IntegratorConfig;
use emergent_qm::ensemble::{sample, DistributionSpec, Ensemble};
use emergent_qm::experiment::epsilon_scaling;
use emergent_qm::observable::random_graded;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let h = random_graded(2, 1.0, 1.0, 2, &mut ChaCha8Rng::seed_from_u64(5));
    let pts = sample(&DistributionSpec::UniformSphere { dim: 2, radius: 1.0 }, 8, 9)?;
    let e = Ensemble::weighted(pts.points().to_vec(), vec![0.125; 8])?;
    let rows = epsilon_scaling(&e, &h, &[0.2, 0.1, 0.05, 0.025, 0.0125], 1.0, &IntegratorConfig::default())?;
    for r in rows {
        let ratio = r.ratio.map_or(String::from("-"), |x| format!("{x:.3}"));
        println!("eps = {:<7} deviation {:.4e}  halving ratio {ratio}", r.epsilon, r.deviation);
    }
    Ok(())
}
