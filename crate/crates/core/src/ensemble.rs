//! Classical states as probability distributions on phase space, their
//! Monte Carlo ensembles, and the moment matrix seen by an observer who can
//! only measure quadratic observables.
//!
//! # Index convention
//!
//! [`KMatrix`] stores the operator `K̂ = E[z z†]`, i.e. `K̂_ab = E[z_a z̄_b]`.
//! The raw moment array `K_ab = E[z̄_a z_b]` is its transpose and is exposed
//! through [`KMatrix::raw`]. With this choice `Σ C_ab K_ab = Tr(Ĉ K̂)`, the
//! classical flow `ż = -iĥz` maps to `i dK̂/dt = [ĥ, K̂]`, and a point mass
//! at `z0` has the eigenvector `z0` itself.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{propagate_with, Flow, IntegratorConfig};
use crate::error::{Error, Result};
use crate::linalg::{frobenius, trace_product, CMatrix, HermitianMatrix, Spectrum};
use crate::observable::{PhasePoint, PolynomialObservable};
use crate::rng::{substream, Domain};

/// Samples per block in the fixed-order reductions.
const BLOCK: usize = 4096;
const WEIGHT_TOL: f64 = 1e-9;
/// PSD tolerance, relative to the trace.
pub const PSD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub enum DistributionSpec {
    /// Point mass at `z0`.
    Delta(PhasePoint),
    /// Circularly symmetric complex Gaussian with `E[z] = mean` and
    /// `E[(z - mean)(z - mean)†] = covariance`, `E[(z - mean)(z - mean)ᵀ] = 0`.
    ComplexGaussian { mean: Vec<Complex64>, covariance: HermitianMatrix },
    /// Uniform on the sphere `|z| = radius` in `Cⁿ`.
    UniformSphere { dim: usize, radius: f64 },
    /// Convex combination of components.
    Mixture(Vec<(f64, DistributionSpec)>),
}

impl DistributionSpec {
    pub fn dim(&self) -> usize {
        match self {
            DistributionSpec::Delta(z) => z.dim(),
            DistributionSpec::ComplexGaussian { mean, .. } => mean.len(),
            DistributionSpec::UniformSphere { dim, .. } => *dim,
            DistributionSpec::Mixture(parts) => parts.first().map(|(_, s)| s.dim()).unwrap_or(0),
        }
    }

    /// `CN(0, I)` in `n` dimensions.
    pub fn standard_gaussian(n: usize) -> Self {
        DistributionSpec::ComplexGaussian {
            mean: vec![Complex64::default(); n],
            covariance: HermitianMatrix::identity(n),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DistributionSpec::Delta(z) => {
                if z.dim() == 0 {
                    return Err(Error::invalid("delta", "empty point"));
                }
            }
            DistributionSpec::ComplexGaussian { mean, covariance } => {
                if mean.is_empty() {
                    return Err(Error::invalid("mean", "empty"));
                }
                if covariance.dim() != mean.len() {
                    return Err(Error::DimensionMismatch { expected: mean.len(), found: covariance.dim() });
                }
                let spec = covariance.eigh();
                let floor = -PSD_TOL * covariance.trace().abs().max(1.0);
                if spec.values[0] < floor {
                    return Err(Error::NotPositive { min_eigenvalue: spec.values[0] });
                }
            }
            DistributionSpec::UniformSphere { dim, radius } => {
                if *dim == 0 {
                    return Err(Error::invalid("dim", "must be at least 1"));
                }
                if !(*radius >= 0.0 && radius.is_finite()) {
                    return Err(Error::invalid("radius", "must be non-negative"));
                }
            }
            DistributionSpec::Mixture(parts) => {
                if parts.is_empty() {
                    return Err(Error::invalid("components", "mixture needs at least one component"));
                }
                let n = parts[0].1.dim();
                let mut total = 0.0;
                for (w, s) in parts {
                    if !(*w >= 0.0) {
                        return Err(Error::invalid("weight", format!("negative mixture weight {w}")));
                    }
                    if s.dim() != n {
                        return Err(Error::DimensionMismatch { expected: n, found: s.dim() });
                    }
                    s.validate()?;
                    total += w;
                }
                if (total - 1.0).abs() > WEIGHT_TOL {
                    return Err(Error::invalid("weight", format!("mixture weights sum to {total}, not 1")));
                }
            }
        }
        Ok(())
    }

    /// Closed-form `E[z z†]`.
    pub fn exact_moment(&self) -> CMatrix {
        let n = self.dim();
        match self {
            DistributionSpec::Delta(z) => outer(z.coords()),
            DistributionSpec::ComplexGaussian { mean, covariance } => covariance.matrix() + outer(mean),
            DistributionSpec::UniformSphere { radius, .. } => {
                CMatrix::identity(n, n) * Complex64::new(radius * radius / n as f64, 0.0)
            }
            DistributionSpec::Mixture(parts) => parts
                .iter()
                .fold(CMatrix::zeros(n, n), |acc, (w, s)| acc + s.exact_moment() * Complex64::new(*w, 0.0)),
        }
    }

    /// Flattens a mixture made only of point masses into `(weight, point)`.
    fn atoms(&self, scale: f64, out: &mut Vec<(f64, PhasePoint)>) -> bool {
        match self {
            DistributionSpec::Delta(z) => {
                out.push((scale, z.clone()));
                true
            }
            DistributionSpec::Mixture(parts) => parts.iter().all(|(w, s)| s.atoms(scale * w, out)),
            _ => false,
        }
    }

    /// Caches the covariance factors so that drawing is cheap.
    fn prepare(&self) -> Prepared {
        match self {
            DistributionSpec::Delta(z) => Prepared::Delta(z.0.clone()),
            DistributionSpec::ComplexGaussian { mean, covariance } => {
                Prepared::Gaussian { mean: mean.clone(), factor: psd_factor(covariance) }
            }
            DistributionSpec::UniformSphere { dim, radius } => Prepared::Sphere { dim: *dim, radius: *radius },
            DistributionSpec::Mixture(parts) => {
                Prepared::Mixture(parts.iter().map(|(w, s)| (*w, s.prepare())).collect())
            }
        }
    }
}

enum Prepared {
    Delta(Vec<Complex64>),
    Gaussian { mean: Vec<Complex64>, factor: CMatrix },
    Sphere { dim: usize, radius: f64 },
    Mixture(Vec<(f64, Prepared)>),
}

impl Prepared {
    fn draw<R: Rng>(&self, rng: &mut R) -> Vec<Complex64> {
        match self {
            Prepared::Delta(z) => z.clone(),
            Prepared::Gaussian { mean, factor } => {
                let w = standard_complex_normal(mean.len(), rng);
                let n = mean.len();
                (0..n)
                    .map(|i| mean[i] + (0..n).map(|j| factor[(i, j)] * w[j]).sum::<Complex64>())
                    .collect()
            }
            Prepared::Sphere { dim, radius } => {
                let w = standard_complex_normal(*dim, rng);
                let norm = w.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
                w.into_iter().map(|c| c * (radius / norm)).collect()
            }
            Prepared::Mixture(parts) => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (w, s) in parts {
                    acc += w;
                    if u < acc {
                        return s.draw(rng);
                    }
                }
                parts.last().expect("validated mixture").1.draw(rng)
            }
        }
    }
}

fn outer(z: &[Complex64]) -> CMatrix {
    let n = z.len();
    CMatrix::from_fn(n, n, |a, b| z[a] * z[b].conj())
}

/// `L` with `L L† = Σ` for positive semidefinite `Σ`.
fn psd_factor(cov: &HermitianMatrix) -> CMatrix {
    let spec: Spectrum = cov.eigh();
    let mut l = spec.vectors.clone();
    for (j, &v) in spec.values.iter().enumerate() {
        let s = v.max(0.0).sqrt();
        for i in 0..l.nrows() {
            l[(i, j)] *= s;
        }
    }
    l
}

/// Components with `E|w|² = 1` and `E w² = 0`.
fn standard_complex_normal<R: Rng>(n: usize, rng: &mut R) -> Vec<Complex64> {
    (0..n)
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Provenance {
    /// Weighted points given exactly; no sampling noise.
    Exact,
    Sampled { seed: u64, count: usize },
}

/// Weighted phase points representing a classical state.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    points: Vec<PhasePoint>,
    weights: Vec<f64>,
    provenance: Provenance,
}

impl Ensemble {
    /// An exactly weighted ensemble. Weights must be non-negative and sum to 1.
    pub fn weighted(points: Vec<PhasePoint>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() || points.len() != weights.len() {
            return Err(Error::invalid("weights", "need one weight per point, at least one point"));
        }
        let n = points[0].dim();
        if let Some(p) = points.iter().find(|p| p.dim() != n) {
            return Err(Error::DimensionMismatch { expected: n, found: p.dim() });
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::invalid("weights", "must be non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("weights", format!("sum to {total}, not 1")));
        }
        Ok(Self { points, weights, provenance: Provenance::Exact })
    }

    /// Exact ensemble of a point mass or a mixture of point masses.
    pub fn exact(spec: &DistributionSpec) -> Result<Self> {
        spec.validate()?;
        let mut atoms = Vec::new();
        if !spec.atoms(1.0, &mut atoms) {
            return Err(Error::invalid("distribution", "only point masses and their mixtures have exact ensembles"));
        }
        let total: f64 = atoms.iter().map(|(w, _)| w).sum();
        let (weights, points) = atoms.into_iter().map(|(w, p)| (w / total, p)).unzip();
        Self::weighted(points, weights)
    }

    pub fn dim(&self) -> usize {
        self.points[0].dim()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[PhasePoint] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }
}

/// Draws `count` points. Point `i` comes from its own substream of `seed`,
/// so the ensemble is identical for any thread count.
pub fn sample(spec: &DistributionSpec, count: usize, seed: u64) -> Result<Ensemble> {
    if count == 0 {
        return Err(Error::invalid("count", "must be at least 1"));
    }
    spec.validate()?;
    let prepared = spec.prepare();
    let points: Vec<PhasePoint> = (0..count)
        .into_par_iter()
        .map(|i| PhasePoint(prepared.draw(&mut substream(seed, Domain::Sample, i as u64))))
        .collect();
    Ok(Ensemble {
        points,
        weights: vec![1.0 / count as f64; count],
        provenance: Provenance::Sampled { seed, count },
    })
}

/// The moment matrix of a state together with the per-entry standard error
/// of its Monte Carlo estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct KMatrix {
    entries: CMatrix,
    samples: usize,
    stderr: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMatrixJson {
    pub n: usize,
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
    pub trace: f64,
    pub stderr: Vec<Vec<f64>>,
    pub samples: usize,
}

impl KMatrix {
    /// Wraps an operator `K̂` after checking Hermiticity and positivity.
    pub fn from_operator(m: CMatrix) -> Result<Self> {
        let n = m.nrows();
        let h = HermitianMatrix::new(m)?;
        let k = Self { entries: h.into_matrix(), samples: 0, stderr: DMatrix::zeros(n, n) };
        k.check_psd()?;
        Ok(k)
    }

    /// Symmetrizes and clamps nothing; used for results of unitary pipelines.
    pub(crate) fn from_pipeline(m: &CMatrix, samples: usize, stderr: DMatrix<f64>) -> Self {
        Self { entries: HermitianMatrix::symmetrized(m).into_matrix(), samples, stderr }
    }

    pub fn check_psd(&self) -> Result<()> {
        let min = Spectrum::of(&self.entries).values.first().copied().unwrap_or(0.0);
        if min < -PSD_TOL * self.trace().abs().max(f64::MIN_POSITIVE) {
            return Err(Error::NotPositive { min_eigenvalue: min });
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    /// The operator `K̂`, `K̂_ab = E[z_a z̄_b]`.
    pub fn operator(&self) -> &CMatrix {
        &self.entries
    }

    /// The raw moment `E[z̄_a z_b]`.
    pub fn raw(&self, a: usize, b: usize) -> Complex64 {
        self.entries[(b, a)]
    }

    pub fn trace(&self) -> f64 {
        self.entries.trace().re
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn stderr(&self) -> &DMatrix<f64> {
        &self.stderr
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        Spectrum::of(&self.entries).values
    }

    pub fn to_json(&self) -> KMatrixJson {
        let n = self.dim();
        let grid = |f: &dyn Fn(usize, usize) -> f64| (0..n).map(|a| (0..n).map(|b| f(a, b)).collect()).collect();
        KMatrixJson {
            n,
            re: grid(&|a, b| self.entries[(a, b)].re),
            im: grid(&|a, b| self.entries[(a, b)].im),
            trace: self.trace(),
            stderr: grid(&|a, b| self.stderr[(a, b)]),
            samples: self.samples,
        }
    }

    pub fn from_json(j: &KMatrixJson) -> Result<Self> {
        let n = j.n;
        if j.re.len() != n || j.im.len() != n || j.re.iter().chain(&j.im).any(|r| r.len() != n) {
            return Err(Error::invalid("K", "re/im must be n x n"));
        }
        let m = CMatrix::from_fn(n, n, |a, b| Complex64::new(j.re[a][b], j.im[a][b]));
        let mut k = Self::from_operator(m)?;
        if j.stderr.len() == n && j.stderr.iter().all(|r| r.len() == n) {
            k.stderr = DMatrix::from_fn(n, n, |a, b| j.stderr[a][b]);
        }
        k.samples = j.samples;
        Ok(k)
    }
}

/// `K̂ = Σ_i w_i z⁽ⁱ⁾ z⁽ⁱ⁾†` with per-entry standard errors
/// `sqrt(Σ_i w_i² |z_a z̄_b - K̂_ab|²)` (zero for exact ensembles).
pub fn moment_matrix(e: &Ensemble) -> KMatrix {
    let n = e.dim();
    let zero = || CMatrix::zeros(n, n);
    let sum = e
        .points
        .par_chunks(BLOCK)
        .zip(e.weights.par_chunks(BLOCK))
        .map(|(pts, ws)| {
            let mut acc = zero();
            for (p, w) in pts.iter().zip(ws) {
                accumulate_outer(&mut acc, p.coords(), *w);
            }
            acc
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(zero(), |a, b| a + b);

    let stderr = match e.provenance {
        Provenance::Exact => DMatrix::zeros(n, n),
        Provenance::Sampled { .. } => {
            let var = e
                .points
                .par_chunks(BLOCK)
                .zip(e.weights.par_chunks(BLOCK))
                .map(|(pts, ws)| {
                    let mut acc = DMatrix::<f64>::zeros(n, n);
                    for (p, w) in pts.iter().zip(ws) {
                        let z = p.coords();
                        for a in 0..n {
                            for b in 0..n {
                                acc[(a, b)] += w * w * (z[a] * z[b].conj() - sum[(a, b)]).norm_sqr();
                            }
                        }
                    }
                    acc
                })
                .collect::<Vec<_>>()
                .into_iter()
                .fold(DMatrix::zeros(n, n), |a, b| a + b);
            var.map(f64::sqrt)
        }
    };
    KMatrix::from_pipeline(&sum, e.len(), stderr)
}

fn accumulate_outer(acc: &mut CMatrix, z: &[Complex64], w: f64) {
    let n = z.len();
    for a in 0..n {
        let za = z[a] * w;
        for b in 0..n {
            acc[(a, b)] += za * z[b].conj();
        }
    }
}

/// `Σ_i w_i ⟨z⁽ⁱ⁾, Ĉ z⁽ⁱ⁾⟩`, the ensemble average of the quadratic observable.
pub fn expectation_quadratic(e: &Ensemble, c: &HermitianMatrix) -> Result<f64> {
    if c.dim() != e.dim() {
        return Err(Error::DimensionMismatch { expected: e.dim(), found: c.dim() });
    }
    let total = e
        .points
        .par_chunks(BLOCK)
        .zip(e.weights.par_chunks(BLOCK))
        .map(|(pts, ws)| pts.iter().zip(ws).map(|(p, w)| w * c.quadratic_form(p.coords())).sum::<f64>())
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    Ok(total)
}

/// `Tr(Ĉ K̂)`.
pub fn trace_observable(c: &HermitianMatrix, k: &KMatrix) -> f64 {
    trace_product(c.matrix(), k.operator()).re
}

/// Outcome of comparing two states through their moment matrices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Equivalence {
    pub distance: f64,
    pub tolerance: f64,
    pub equivalent: bool,
}

/// Default tolerance: five combined standard errors plus a rounding floor.
pub fn default_tolerance(k1: &KMatrix, k2: &KMatrix) -> f64 {
    let se = (frobenius_real(k1.stderr()).powi(2) + frobenius_real(k2.stderr()).powi(2)).sqrt();
    5.0 * se + 1e-10 * (k1.trace().abs() + k2.trace().abs()).max(1e-300)
}

fn frobenius_real(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn compare_states(e1: &Ensemble, e2: &Ensemble, tol: Option<f64>) -> Result<Equivalence> {
    if e1.dim() != e2.dim() {
        return Err(Error::DimensionMismatch { expected: e1.dim(), found: e2.dim() });
    }
    compare_moments(&moment_matrix(e1), &moment_matrix(e2), tol)
}

/// Frobenius distance between two moment matrices against `tol`, or
/// [`default_tolerance`] when `tol` is `None`.
pub fn compare_moments(k1: &KMatrix, k2: &KMatrix, tol: Option<f64>) -> Result<Equivalence> {
    if k1.dim() != k2.dim() {
        return Err(Error::DimensionMismatch { expected: k1.dim(), found: k2.dim() });
    }
    let distance = frobenius(&(k1.operator() - k2.operator()));
    let tolerance = tol.unwrap_or_else(|| default_tolerance(k1, k2));
    Ok(Equivalence { distance, tolerance, equivalent: distance <= tolerance })
}

/// Whether an observer restricted to quadratic observables can tell the two
/// states apart (`false`) or not (`true`).
pub fn equivalent_states(e1: &Ensemble, e2: &Ensemble, tol: Option<f64>) -> Result<bool> {
    Ok(compare_states(e1, e2, tol)?.equivalent)
}

/// Pushes the state forward under the flow of `h`, point by point; weights
/// are carried along unchanged.
pub fn evolve_ensemble(e: &Ensemble, h: &PolynomialObservable, t: f64, cfg: &IntegratorConfig) -> Result<Ensemble> {
    if h.dim() != e.dim() {
        return Err(Error::DimensionMismatch { expected: e.dim(), found: h.dim() });
    }
    if t < 0.0 || !t.is_finite() {
        return Err(Error::invalid("t", "must be non-negative"));
    }
    cfg.validate()?;
    let flow = Flow::new(h, cfg.method)?;
    let points = e
        .points
        .par_iter()
        .map(|p| propagate_with(&flow, p, t, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(Ensemble { points, weights: e.weights.clone(), provenance: e.provenance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn basis(n: usize, a: usize) -> PhasePoint {
        let mut v = vec![c(0.0, 0.0); n];
        v[a] = c(1.0, 0.0);
        PhasePoint(v)
    }

    #[test]
    fn delta_samples_are_the_point() {
        let z0 = PhasePoint(vec![c(0.3, 0.4), c(-1.0, 0.2)]);
        let e = sample(&DistributionSpec::Delta(z0.clone()), 17, 1).unwrap();
        assert!(e.points().iter().all(|p| p == &z0));
        let k = moment_matrix(&e);
        assert!((k.trace() - z0.norm_sqr()).abs() < 1e-12);
        let ev = k.eigenvalues();
        assert!(ev[0].abs() < 1e-12);
        assert!((k.raw(0, 1) - z0.0[0].conj() * z0.0[1]).norm() < 1e-12);
    }

    #[test]
    fn gaussian_mean_is_small() {
        let count = 100_000;
        let e = sample(&DistributionSpec::standard_gaussian(2), count, 42).unwrap();
        for a in 0..2 {
            let mean: Complex64 = e.points().iter().map(|p| p.0[a]).sum::<Complex64>() / count as f64;
            assert!(mean.norm() <= 4.0 / (count as f64).sqrt(), "{mean}");
        }
    }

    #[test]
    fn mixture_fraction() {
        let spec = DistributionSpec::Mixture(vec![
            (0.5, DistributionSpec::Delta(basis(2, 0))),
            (0.5, DistributionSpec::Delta(basis(2, 1))),
        ]);
        let e = sample(&spec, 10_000, 5).unwrap();
        let frac = e.points().iter().filter(|p| **p == basis(2, 0)).count() as f64 / 1e4;
        assert!((frac - 0.5).abs() <= 0.02);
        let exact = moment_matrix(&Ensemble::exact(&spec).unwrap());
        assert_eq!(exact.operator()[(0, 0)], c(0.5, 0.0));
        assert_eq!(exact.operator()[(1, 1)], c(0.5, 0.0));
        assert_eq!(exact.operator()[(0, 1)], c(0.0, 0.0));
    }

    #[test]
    fn invalid_specs() {
        let bad_weights = DistributionSpec::Mixture(vec![
            (0.5, DistributionSpec::Delta(basis(2, 0))),
            (0.4, DistributionSpec::Delta(basis(2, 1))),
        ]);
        assert!(sample(&bad_weights, 10, 1).is_err());
        let negative = DistributionSpec::Mixture(vec![
            (1.5, DistributionSpec::Delta(basis(2, 0))),
            (-0.5, DistributionSpec::Delta(basis(2, 1))),
        ]);
        assert!(sample(&negative, 10, 1).is_err());
        let not_psd = DistributionSpec::ComplexGaussian {
            mean: vec![c(0.0, 0.0); 2],
            covariance: HermitianMatrix::from_diagonal(&[1.0, -0.5]),
        };
        assert!(matches!(sample(&not_psd, 10, 1), Err(Error::NotPositive { .. })));
        assert!(sample(&DistributionSpec::standard_gaussian(2), 0, 1).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let spec = DistributionSpec::Mixture(vec![
            (0.3, DistributionSpec::standard_gaussian(3)),
            (0.7, DistributionSpec::UniformSphere { dim: 3, radius: 2.0 }),
        ]);
        let a = sample(&spec, 5000, 9).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| sample(&spec, 5000, 9).unwrap());
        assert_eq!(a, b);
        let ka = moment_matrix(&a);
        let kb = pool.install(|| moment_matrix(&b));
        assert_eq!(ka, kb);
    }

    #[test]
    fn gaussian_moment_within_stderr() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cov = {
            let g = HermitianMatrix::random_gue(2, &mut rng);
            HermitianMatrix::symmetrized(&(g.matrix() * g.matrix().adjoint() + CMatrix::identity(2, 2) * c(0.1, 0.0)))
        };
        let mean = vec![c(0.5, -0.2), c(0.1, 0.3)];
        let spec = DistributionSpec::ComplexGaussian { mean, covariance: cov };
        let k = moment_matrix(&sample(&spec, 200_000, 3).unwrap());
        let exact = spec.exact_moment();
        for a in 0..2 {
            for b in 0..2 {
                let err = (k.operator()[(a, b)] - exact[(a, b)]).norm();
                assert!(err <= 5.0 * k.stderr()[(a, b)], "{a}{b}: {err} vs {}", k.stderr()[(a, b)]);
            }
        }
    }

    #[test]
    fn expectation_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let e = sample(&DistributionSpec::standard_gaussian(3), 500, 2).unwrap();
        let k = moment_matrix(&e);
        let id = HermitianMatrix::identity(3);
        assert!((expectation_quadratic(&e, &id).unwrap() - k.trace()).abs() < 1e-12 * k.trace());
        assert_eq!(expectation_quadratic(&e, &HermitianMatrix::zeros(3)).unwrap(), 0.0);
        let cm = HermitianMatrix::random_gue(3, &mut rng);
        let lhs = expectation_quadratic(&e, &cm).unwrap();
        assert!((lhs - trace_observable(&cm, &k)).abs() <= 1e-12 * lhs.abs().max(1.0));
        assert!(expectation_quadratic(&e, &HermitianMatrix::identity(2)).is_err());
    }

    #[test]
    fn equivalence_relation() {
        let mix = Ensemble::exact(&DistributionSpec::Mixture(vec![
            (0.5, DistributionSpec::Delta(basis(2, 0))),
            (0.5, DistributionSpec::Delta(basis(2, 1))),
        ]))
        .unwrap();
        assert!(equivalent_states(&mix, &mix, None).unwrap());
        // e^{iθ}(e1 + e^{iφ} e2)/√2 with φ on a uniform 4-point grid: K = diag(½, ½)
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let circle: Vec<PhasePoint> = (0..4)
            .map(|k| {
                let phi = k as f64 * std::f64::consts::FRAC_PI_2;
                let theta = 0.3 * k as f64;
                let g = Complex64::from_polar(s, theta);
                PhasePoint(vec![g, g * Complex64::from_polar(1.0, phi)])
            })
            .collect();
        let circle = Ensemble::weighted(circle, vec![0.25; 4]).unwrap();
        assert!(equivalent_states(&mix, &circle, None).unwrap());
        let d1 = Ensemble::exact(&DistributionSpec::Delta(basis(2, 0))).unwrap();
        let d2 = Ensemble::exact(&DistributionSpec::Delta(basis(2, 1))).unwrap();
        assert!(!equivalent_states(&d1, &d2, None).unwrap());
    }

    #[test]
    fn number_flow_keeps_k() {
        let e = sample(&DistributionSpec::standard_gaussian(2), 200, 4).unwrap();
        let h = PolynomialObservable::number_operator(2).scale(1.3);
        let cfg = IntegratorConfig::default();
        let out = evolve_ensemble(&e, &h, 0.8, &cfg).unwrap();
        let phase = Complex64::from_polar(1.0, -1.3 * 0.8);
        for (p, q) in e.points().iter().zip(out.points()) {
            for (a, b) in p.0.iter().zip(&q.0) {
                assert!((a * phase - b).norm() < 1e-12);
            }
        }
        let dk = frobenius(&(moment_matrix(&e).operator() - moment_matrix(&out).operator()));
        assert!(dk < 1e-12);
        assert_eq!(evolve_ensemble(&e, &PolynomialObservable::zero(2), 1.0, &cfg).unwrap(), e);
    }

    #[test]
    fn json_round_trip() {
        let e = sample(&DistributionSpec::standard_gaussian(2), 100, 8).unwrap();
        let k = moment_matrix(&e);
        let text = serde_json::to_string(&k.to_json()).unwrap();
        let back = KMatrix::from_json(&serde_json::from_str(&text).unwrap()).unwrap();
        assert!(frobenius(&(back.operator() - k.operator())) < 1e-15);
        assert_eq!(back.samples(), 100);
    }
}
