//! Exact quantum-side evolution of moment matrices and observables.
//!
//! States evolve as `i dK̂/dt = [ĥ, K̂]`, observables as `i dĈ/dt = [Ĉ, ĥ]`.
//! For constant `ĥ` both are unitary conjugations by `U = exp(-iĥt)`:
//! `K̂(t) = U K̂ U†` and `Ĉ(t) = U† Ĉ U`, so `Tr(Ĉ K̂(t)) = Tr(Ĉ(t) K̂)`.
//! Time-dependent generators are handled by Magnus steps, each of which is
//! itself an exact unitary.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::ensemble::{KMatrix, PSD_TOL};
use crate::error::{Error, Result};
use crate::linalg::{commutator, conjugate, exp_anti_hermitian, frobenius, trace_product, CMatrix, CVector, HermitianMatrix, Spectrum, I};

/// A Hermitian generator that may depend on time.
pub trait HamiltonianPath: Sync {
    fn dim(&self) -> usize;
    fn at(&self, t: f64) -> HermitianMatrix;
}

impl HamiltonianPath for HermitianMatrix {
    fn dim(&self) -> usize {
        HermitianMatrix::dim(self)
    }

    fn at(&self, _t: f64) -> HermitianMatrix {
        self.clone()
    }
}

/// A path given by a closure.
pub struct FnPath<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(f64) -> HermitianMatrix + Sync> FnPath<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(f64) -> HermitianMatrix + Sync> HamiltonianPath for FnPath<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn at(&self, t: f64) -> HermitianMatrix {
        (self.f)(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MagnusOrder {
    /// Midpoint exponential.
    Second,
    /// Two-point Gauss rule with the commutator correction.
    Fourth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MagnusConfig {
    pub order: MagnusOrder,
    /// Steps per unit time for the first attempt.
    pub steps_per_unit: f64,
    /// Frobenius distance per unit time between the propagators at `N` and
    /// `2N` steps below which the finer one is accepted.
    pub tolerance: f64,
    pub max_doublings: u32,
}

impl Default for MagnusConfig {
    fn default() -> Self {
        Self { order: MagnusOrder::Fourth, steps_per_unit: 8.0, tolerance: 1e-10, max_doublings: 16 }
    }
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// `exp(-iĥt)`.
pub fn propagator(h: &HermitianMatrix, t: f64) -> CMatrix {
    h.propagator(t)
}

fn magnus_step(path: &dyn HamiltonianPath, t: f64, dt: f64, order: MagnusOrder) -> CMatrix {
    match order {
        MagnusOrder::Second => path.at(t + dt / 2.0).propagator(dt),
        MagnusOrder::Fourth => {
            let off = 3f64.sqrt() / 6.0;
            let a1 = path.at(t + (0.5 - off) * dt).matrix() * (-I);
            let a2 = path.at(t + (0.5 + off) * dt).matrix() * (-I);
            let omega = (&a1 + &a2) * Complex64::new(dt / 2.0, 0.0)
                - commutator(&a1, &a2) * Complex64::new(3f64.sqrt() * dt * dt / 12.0, 0.0);
            exp_anti_hermitian(&omega)
        }
    }
}

fn propagate_steps(path: &dyn HamiltonianPath, t0: f64, t1: f64, steps: usize, order: MagnusOrder) -> CMatrix {
    let n = path.dim();
    let dt = (t1 - t0) / steps as f64;
    let mut u = CMatrix::identity(n, n);
    for k in 0..steps {
        let step = magnus_step(path, t0 + k as f64 * dt, dt, order);
        u = step * u;
    }
    u
}

/// Polar factor `W V†` of `U = W Σ V†`; removes the rounding drift that a
/// long product of step propagators accumulates.
fn nearest_unitary(u: CMatrix) -> CMatrix {
    let svd = u.svd(true, true);
    svd.u.expect("requested") * svd.v_t.expect("requested")
}

/// Propagator of `i dψ/dt = ĥ(t) ψ` from `t0` to `t1`, refined by step
/// doubling until successive estimates agree within `cfg.tolerance` per unit
/// time.
pub fn propagator_path(path: &dyn HamiltonianPath, t0: f64, t1: f64, cfg: &MagnusConfig) -> Result<CMatrix> {
    let n = path.dim();
    if t1 == t0 {
        return Ok(CMatrix::identity(n, n));
    }
    let mut steps = ((t1 - t0).abs() * cfg.steps_per_unit).ceil().max(1.0) as usize;
    let tol = cfg.tolerance * (t1 - t0).abs().max(1.0);
    let mut coarse = propagate_steps(path, t0, t1, steps, cfg.order);
    for _ in 0..cfg.max_doublings {
        steps *= 2;
        let fine = propagate_steps(path, t0, t1, steps, cfg.order);
        if frobenius(&(&fine - &coarse)) <= tol {
            return Ok(nearest_unitary(fine));
        }
        coarse = fine;
    }
    Err(Error::NoConvergence { tol: cfg.tolerance, steps })
}

/// `K̂(t) = U K̂ U†`, `U = exp(-iĥt)`.
pub fn evolve_k(k0: &KMatrix, h: &HermitianMatrix, t: f64) -> Result<KMatrix> {
    check_dim(k0.dim(), h.dim())?;
    Ok(conjugated(k0, &h.propagator(t)))
}

/// `K̂(t1)` for a time-dependent generator, starting from `K̂(t0) = k0`.
pub fn evolve_k_path(k0: &KMatrix, path: &dyn HamiltonianPath, t0: f64, t1: f64, cfg: &MagnusConfig) -> Result<KMatrix> {
    check_dim(k0.dim(), path.dim())?;
    Ok(conjugated(k0, &propagator_path(path, t0, t1, cfg)?))
}

pub(crate) fn conjugated(k: &KMatrix, u: &CMatrix) -> KMatrix {
    let n = k.dim();
    KMatrix::from_pipeline(&conjugate(u, k.operator()), k.samples(), DMatrix::zeros(n, n))
}

/// Heisenberg picture: `Ĉ(t) = U† Ĉ U`.
pub fn evolve_observable(c0: &HermitianMatrix, h: &HermitianMatrix, t: f64) -> Result<HermitianMatrix> {
    check_dim(c0.dim(), h.dim())?;
    let u = h.propagator(t);
    Ok(HermitianMatrix::symmetrized(&(u.adjoint() * c0.matrix() * u)))
}

pub fn evolve_observable_path(
    c0: &HermitianMatrix,
    path: &dyn HamiltonianPath,
    t0: f64,
    t1: f64,
    cfg: &MagnusConfig,
) -> Result<HermitianMatrix> {
    check_dim(c0.dim(), path.dim())?;
    let u = propagator_path(path, t0, t1, cfg)?;
    Ok(HermitianMatrix::symmetrized(&(u.adjoint() * c0.matrix() * u)))
}

/// `|Tr(Ĉ K̂(t)) - Tr(Ĉ(t) K̂)|`.
pub fn duality_check(c: &HermitianMatrix, k: &KMatrix, h: &HermitianMatrix, t: f64) -> Result<f64> {
    let schrodinger = trace_product(c.matrix(), evolve_k(k, h, t)?.operator());
    let heisenberg = trace_product(evolve_observable(c, h, t)?.matrix(), k.operator());
    Ok((schrodinger - heisenberg).norm())
}

/// A unit-trace state `K̃ = K̂ / c` together with `ħ = 1/c`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    entries: CMatrix,
    hbar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityMatrixJson {
    pub n: usize,
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
    pub hbar: f64,
}

impl DensityMatrix {
    pub fn operator(&self) -> &CMatrix {
        &self.entries
    }

    pub fn hbar(&self) -> f64 {
        self.hbar
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.entries.trace().re
    }

    /// Solves `iħ dK̃/dt = [Ĥ, K̃]` for a constant Hamiltonian `Ĥ` given in
    /// energy units, i.e. `K̃(t) = exp(-iĤt/ħ) K̃ exp(iĤt/ħ)`.
    pub fn evolve(&self, energy: &HermitianMatrix, t: f64) -> Result<DensityMatrix> {
        check_dim(self.dim(), energy.dim())?;
        let u = energy.propagator(t / self.hbar);
        Ok(Self { entries: HermitianMatrix::symmetrized(&conjugate(&u, &self.entries)).into_matrix(), hbar: self.hbar })
    }

    pub fn to_json(&self) -> DensityMatrixJson {
        let n = self.dim();
        DensityMatrixJson {
            n,
            re: (0..n).map(|a| (0..n).map(|b| self.entries[(a, b)].re).collect()).collect(),
            im: (0..n).map(|a| (0..n).map(|b| self.entries[(a, b)].im).collect()).collect(),
            hbar: self.hbar,
        }
    }
}

/// Divides `K̂` by its trace `c` (conserved by the evolution) and records
/// `ħ = 1/c`.
pub fn normalize_density(k: &KMatrix) -> Result<DensityMatrix> {
    let c = k.trace();
    if !(c > 0.0) {
        return Err(Error::DegenerateState { trace: c });
    }
    let entries = k.operator() / Complex64::new(c, 0.0);
    Ok(DensityMatrix { entries, hbar: 1.0 / c })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    pub weight: f64,
    /// Unit vector `z`; the pure state is `z z†`.
    pub state: CVector,
    /// Index of the eigenvalue cluster this component belongs to.
    pub cluster: usize,
}

/// `K̂ = Σ_i w_i z_i z_i†` with orthonormal `z_i` and weights sorted
/// descending. Unique up to phases when the spectrum is simple.
#[derive(Debug, Clone, PartialEq)]
pub struct PureStateMixture {
    pub components: Vec<PureState>,
    pub simple_spectrum: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PureStateJson {
    pub weight: f64,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
    pub cluster: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PureStateMixtureJson {
    pub components: Vec<PureStateJson>,
    pub simple_spectrum: bool,
    pub probabilities: Vec<f64>,
}

impl PureStateMixture {
    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    /// Weights divided by their sum.
    pub fn probabilities(&self) -> Vec<f64> {
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        self.components.iter().map(|c| c.weight / total).collect()
    }

    pub fn reconstruct(&self) -> CMatrix {
        let n = self.components.first().map(|c| c.state.len()).unwrap_or(0);
        self.components.iter().fold(CMatrix::zeros(n, n), |acc, c| {
            acc + &c.state * c.state.adjoint() * Complex64::new(c.weight, 0.0)
        })
    }

    pub fn to_json(&self) -> PureStateMixtureJson {
        PureStateMixtureJson {
            components: self
                .components
                .iter()
                .map(|c| PureStateJson {
                    weight: c.weight,
                    re: c.state.iter().map(|x| x.re).collect(),
                    im: c.state.iter().map(|x| x.im).collect(),
                    cluster: c.cluster,
                })
                .collect(),
            simple_spectrum: self.simple_spectrum,
            probabilities: self.probabilities(),
        }
    }
}

/// Relative separation below which eigenvalues are reported as one cluster.
pub const CLUSTER_GAP: f64 = 1e-9;

pub fn pure_state_decomposition(k: &KMatrix) -> Result<PureStateMixture> {
    let n = k.dim();
    let m = k.operator();
    let trace = k.trace();
    let diagonal = (0..n).all(|a| (0..n).all(|b| a == b || m[(a, b)] == Complex64::new(0.0, 0.0)));
    let (values, vectors) = if diagonal {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| m[(b, b)].re.total_cmp(&m[(a, a)].re));
        let values = order.iter().map(|&a| m[(a, a)].re).collect::<Vec<_>>();
        let vectors = order
            .iter()
            .map(|&a| CVector::from_fn(n, |i, _| if i == a { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) }))
            .collect::<Vec<_>>();
        (values, vectors)
    } else {
        let spec = Spectrum::of(m);
        let values = spec.values.iter().rev().copied().collect::<Vec<_>>();
        let vectors = (0..n).rev().map(|j| spec.vectors.column(j).into_owned()).collect();
        (values, vectors)
    };
    let min = values.last().copied().unwrap_or(0.0);
    if min < -PSD_TOL * trace.abs().max(f64::MIN_POSITIVE) {
        return Err(Error::NotPositive { min_eigenvalue: min });
    }
    let gap = CLUSTER_GAP * trace.abs().max(1.0);
    let mut cluster = 0;
    let mut simple = true;
    let mut components = Vec::with_capacity(n);
    for (i, (w, v)) in values.iter().zip(vectors).enumerate() {
        if i > 0 {
            if values[i - 1] - w <= gap {
                simple = false;
            } else {
                cluster += 1;
            }
        }
        components.push(PureState { weight: w.max(0.0), state: v, cluster });
    }
    Ok(PureStateMixture { components, simple_spectrum: simple })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_k(n: usize, rng: &mut ChaCha8Rng) -> KMatrix {
        let g = HermitianMatrix::random_gue(n, rng);
        KMatrix::from_operator(g.matrix() * g.matrix().adjoint()).unwrap()
    }

    #[test]
    fn diagonal_h_only_rotates_phases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let k0 = random_k(2, &mut rng);
        let h = HermitianMatrix::from_diagonal(&[0.4, -1.1]);
        let k = evolve_k(&k0, &h, 2.3).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                assert!((k.operator()[(a, b)].norm() - k0.operator()[(a, b)].norm()).abs() < 1e-14);
            }
            assert!((k.operator()[(a, a)] - k0.operator()[(a, a)]).norm() < 1e-14);
        }
        // operator entry picks up exp(-i(ε_1 - ε_2)t); the raw moment the opposite phase
        let phase = Complex64::from_polar(1.0, -(0.4 + 1.1) * 2.3);
        assert!((k.operator()[(0, 1)] - k0.operator()[(0, 1)] * phase).norm() < 1e-14);
        assert!((k.raw(0, 1) - k0.raw(0, 1) * phase.conj()).norm() < 1e-14);
    }

    #[test]
    fn trivial_generators() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let k0 = random_k(3, &mut rng);
        let same = evolve_k(&k0, &HermitianMatrix::zeros(3), 5.0).unwrap();
        assert!(frobenius(&(same.operator() - k0.operator())) < 1e-14);
        // h = K0 commutes with K0
        let h = HermitianMatrix::new(k0.operator().clone()).unwrap();
        let k = evolve_k(&k0, &h, 1.7).unwrap();
        assert!(frobenius(&(k.operator() - k0.operator())) < 1e-12);
    }

    #[test]
    fn observable_evolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = HermitianMatrix::random_gue(3, &mut rng);
        let id = evolve_observable(&HermitianMatrix::identity(3), &h, 0.9).unwrap();
        assert!(frobenius(&(id.matrix() - CMatrix::identity(3, 3))) < 1e-14);
        let hh = evolve_observable(&h, &h, 0.9).unwrap();
        assert!(frobenius(&(hh.matrix() - h.matrix())) < 1e-13);
    }

    #[test]
    fn heisenberg_equation_sign() {
        // i dC/dt = [C, h] at t = 0, by central differences
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = HermitianMatrix::random_gue(3, &mut rng);
        let c0 = HermitianMatrix::random_gue(3, &mut rng);
        let d = 1e-5;
        let plus = evolve_observable(&c0, &h, d).unwrap();
        let minus = evolve_observable(&c0, &h, -d).unwrap();
        let deriv = (plus.matrix() - minus.matrix()) / c(2.0 * d, 0.0);
        let rhs = commutator(c0.matrix(), h.matrix());
        assert!(frobenius(&(deriv * I - rhs)) < 1e-8);

        let k0 = random_k(3, &mut rng);
        let plus = evolve_k(&k0, &h, d).unwrap();
        let minus = evolve_k(&k0, &h, -d).unwrap();
        let deriv = (plus.operator() - minus.operator()) / c(2.0 * d, 0.0);
        let rhs = commutator(h.matrix(), k0.operator());
        assert!(frobenius(&(deriv * I - rhs)) < 1e-8);
    }

    #[test]
    fn duality() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in 1..=5 {
            let h = HermitianMatrix::random_gue(n, &mut rng);
            let cm = HermitianMatrix::random_gue(n, &mut rng);
            let k = random_k(n, &mut rng);
            let scale = trace_product(cm.matrix(), k.operator()).norm().max(1e-300);
            assert!(duality_check(&cm, &k, &h, 0.7).unwrap() <= 1e-12 * scale.max(1.0));
            assert!(duality_check(&cm, &k, &h, 0.0).unwrap() <= 1e-15 * scale.max(1.0));
            assert!(duality_check(&HermitianMatrix::identity(n), &k, &h, 2.0).unwrap() <= 1e-13 * k.trace());
        }
    }

    #[test]
    fn normalization() {
        let k = KMatrix::from_operator(CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![c(0.5, 0.0), c(0.5, 0.0)]))).unwrap();
        let d = normalize_density(&k).unwrap();
        assert_eq!(d.hbar(), 1.0);
        assert_eq!(d.operator()[(0, 0)], c(0.5, 0.0));
        let k = KMatrix::from_operator(CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![c(2.0, 0.0), c(2.0, 0.0)]))).unwrap();
        let d = normalize_density(&k).unwrap();
        assert_eq!(d.hbar(), 0.25);
        assert_eq!(d.operator()[(1, 1)], c(0.5, 0.0));
        let zero = KMatrix::from_operator(CMatrix::zeros(2, 2)).unwrap();
        assert!(matches!(normalize_density(&zero), Err(Error::DegenerateState { .. })));
    }

    #[test]
    fn normalized_evolution_is_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let h = HermitianMatrix::random_gue(3, &mut rng);
        let k = random_k(3, &mut rng);
        let cval = k.trace();
        let d = normalize_density(&k).unwrap();
        assert!((d.trace() - 1.0).abs() < 1e-12);
        let kt = evolve_k(&k, &h, 1.3).unwrap();
        // linearity: the normalized state follows the same equation
        let kd = evolve_k(&KMatrix::from_operator(d.operator().clone()).unwrap(), &h, 1.3).unwrap();
        assert!(frobenius(&(kd.operator() - kt.operator() / c(cval, 0.0))) < 1e-12);
        // with ħ = 1/c, the energy ħĥ reproduces the same trajectory
        let dt = d.evolve(&h.scale(d.hbar()), 1.3).unwrap();
        assert!(frobenius(&(dt.operator() - kt.operator() / c(cval, 0.0))) < 1e-12);
    }

    #[test]
    fn decomposition_cases() {
        let diag = KMatrix::from_operator(CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![c(0.3, 0.0), c(0.7, 0.0)]))).unwrap();
        let mix = pure_state_decomposition(&diag).unwrap();
        assert_eq!(mix.weights(), vec![0.7, 0.3]);
        assert_eq!(mix.components[0].state[1], c(1.0, 0.0));
        assert_eq!(mix.components[1].state[0], c(1.0, 0.0));
        assert!(mix.simple_spectrum);

        let z0 = CVector::from_vec(vec![c(0.6, 0.0), c(0.0, 0.8)]);
        let pure = KMatrix::from_operator(&z0 * z0.adjoint()).unwrap();
        let mix = pure_state_decomposition(&pure).unwrap();
        assert!((mix.components[0].weight - 1.0).abs() < 1e-12);
        assert!(mix.components[1].weight.abs() < 1e-12);
        let overlap = (mix.components[0].state.adjoint() * &z0)[(0, 0)].norm();
        assert!((overlap - 1.0).abs() < 1e-12);

        let degenerate = KMatrix::from_operator(CMatrix::identity(3, 3)).unwrap();
        let mix = pure_state_decomposition(&degenerate).unwrap();
        assert!(!mix.simple_spectrum);
        assert!(mix.components.iter().all(|c| c.cluster == 0));
    }

    #[test]
    fn decomposition_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let k = random_k(4, &mut rng);
        let mix = pure_state_decomposition(&k).unwrap();
        let total: f64 = mix.weights().iter().sum();
        assert!((total - k.trace()).abs() < 1e-10);
        assert!(frobenius(&(mix.reconstruct() - k.operator())) < 1e-10);
        assert!(mix.weights().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn magnus_matches_constant_propagator() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let h = HermitianMatrix::random_gue(3, &mut rng);
        for order in [MagnusOrder::Second, MagnusOrder::Fourth] {
            let cfg = MagnusConfig { order, ..Default::default() };
            let u = propagator_path(&h, 0.0, 2.0, &cfg).unwrap();
            assert!(frobenius(&(u - h.propagator(2.0))) < 1e-12);
        }
    }

    #[test]
    fn magnus_orders_converge() {
        // rotating frame: h(t) = R(t) diag(1, -1) R(t)†, R = exp(-iσ_y ω t)
        let omega = 0.7;
        let path = FnPath::new(2, move |t: f64| {
            let (s, co) = (omega * t).sin_cos();
            HermitianMatrix::from_rows(&[
                vec![c(co * co - s * s, 0.0), c(2.0 * s * co, 0.0)],
                vec![c(2.0 * s * co, 0.0), c(s * s - co * co, 0.0)],
            ])
            .unwrap()
        });
        let reference = propagate_steps(&path, 0.0, 3.0, 4096, MagnusOrder::Fourth);
        for (order, expected) in [(MagnusOrder::Second, 4.0), (MagnusOrder::Fourth, 16.0)] {
            let e1 = frobenius(&(propagate_steps(&path, 0.0, 3.0, 32, order) - &reference));
            let e2 = frobenius(&(propagate_steps(&path, 0.0, 3.0, 64, order) - &reference));
            let ratio = e1 / e2;
            assert!((ratio / expected - 1.0).abs() < 0.2, "{order:?}: {ratio}");
        }
    }
}
