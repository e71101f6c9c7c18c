//! Poisson brackets of polynomial observables, and the closure of the
//! quadratic ones under the bracket: `{⟨z,Az⟩, ⟨z,Bz⟩} = −i⟨z,[A,B]z⟩`.

use emergent_qm::linalg::{commutator, HermitianMatrix};
use emergent_qm::observable::{Monomial, PolynomialObservable};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Number operator of mode 1 and a hopping term between modes 1 and 2.
    let n1 = PolynomialObservable::new(2, [Monomial::new(Complex64::ONE, vec![1, 0], vec![1, 0])])?;
    let hop = PolynomialObservable::new(
        2,
        [
            Monomial::new(Complex64::ONE, vec![1, 0], vec![0, 1]),
            Monomial::new(Complex64::ONE, vec![0, 1], vec![1, 0]),
        ],
    )?;
    println!("{{n1, hop}} = {}", n1.poisson_bracket(&hop)?);
    println!("{{hop, n1}} = {}", hop.poisson_bracket(&n1)?);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = HermitianMatrix::random_gue(3, &mut rng);
    let b = HermitianMatrix::random_gue(3, &mut rng);
    let lhs = PolynomialObservable::from_hermitian(&a).poisson_bracket(&PolynomialObservable::from_hermitian(&b))?;
    // −i[A,B] is Hermitian, so the right side is again a real quadratic observable.
    let c = HermitianMatrix::new(commutator(a.matrix(), b.matrix()) * Complex64::new(0.0, -1.0))?;
    let rhs = PolynomialObservable::from_hermitian(&c);
    let residual = lhs.sub(&rhs)?;
    let worst = residual.terms().map(|t| t.coefficient.norm()).fold(0.0, f64::max);
    println!("closure residual over {} terms: {worst:.2e}", lhs.len());
    println!("U(1)-invariant: {}", lhs.is_u1_invariant());
    Ok(())
}
