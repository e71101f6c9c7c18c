//! Polynomial observables on complex phase space.
//!
//! A point of phase space is a vector `z` with `z_a = (q_a + i p_a)/√2`.
//! Observables are real polynomials in `(z̄, z)` stored as monomials
//! `c · z̄^α z^β` keyed by the pair of multi-indices `(α, β)`. The bracket
//! is fixed by `{z_a, z̄_b} = -i δ_ab` and the Leibniz rule:
//!
//! ```text
//! {f, g} = -i Σ_a (∂f/∂z_a ∂g/∂z̄_a - ∂f/∂z̄_a ∂g/∂z_a)
//! ```

use std::collections::BTreeMap;
use std::fmt;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, HermitianMatrix, I};

/// Coefficients with magnitude below this are dropped from canonical form.
pub const SYMBOLIC_ZERO: f64 = 1e-14;
/// Default bound on `|α| + |β|` accepted by [`PolynomialObservable::new`].
pub const DEFAULT_MAX_DEGREE: u32 = 6;
const REALITY_TOL: f64 = 1e-12;
const RESIDUE_TOL: f64 = 1e-12;

pub type MultiIndex = Vec<u16>;
type Key = (MultiIndex, MultiIndex);

/// A point `z ∈ Cⁿ` of phase space.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint(pub Vec<Complex64>);

impl PhasePoint {
    pub fn new(z: Vec<Complex64>) -> Result<Self> {
        if z.is_empty() {
            return Err(Error::invalid("z", "phase point needs at least one coordinate"));
        }
        Ok(Self(z))
    }

    /// Builds `z = (q + i p)/√2` from real canonical coordinates.
    pub fn from_canonical(q: &[f64], p: &[f64]) -> Result<Self> {
        if q.len() != p.len() {
            return Err(Error::DimensionMismatch { expected: q.len(), found: p.len() });
        }
        Self::new(
            q.iter()
                .zip(p)
                .map(|(&q, &p)| Complex64::new(q, p) / std::f64::consts::SQRT_2)
                .collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[Complex64] {
        &self.0
    }

    /// `Σ_a |z_a|²`.
    pub fn norm_sqr(&self) -> f64 {
        self.0.iter().map(|c| c.norm_sqr()).sum()
    }
}

/// A single term `coefficient · z̄^zbar · z^z`.
#[derive(Debug, Clone, PartialEq)]
pub struct Monomial {
    pub coefficient: Complex64,
    pub zbar: MultiIndex,
    pub z: MultiIndex,
}

impl Monomial {
    pub fn new(coefficient: Complex64, zbar: MultiIndex, z: MultiIndex) -> Self {
        Self { coefficient, zbar, z }
    }

    pub fn degree(&self) -> u32 {
        total(&self.zbar) + total(&self.z)
    }
}

fn total(idx: &[u16]) -> u32 {
    idx.iter().map(|&k| k as u32).sum()
}

/// A real polynomial observable `A(z̄, z)` in canonical form.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialObservable {
    dim: usize,
    terms: BTreeMap<Key, Complex64>,
}

impl PolynomialObservable {
    /// Collects `terms` (merging duplicate keys, dropping zeros) and checks
    /// the reality condition `c(α,β) = conj(c(β,α))`.
    pub fn new(dim: usize, terms: impl IntoIterator<Item = Monomial>) -> Result<Self> {
        Self::with_max_degree(dim, terms, DEFAULT_MAX_DEGREE)
    }

    pub fn with_max_degree(
        dim: usize,
        terms: impl IntoIterator<Item = Monomial>,
        max_degree: u32,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension", "must be at least 1"));
        }
        let mut map: BTreeMap<Key, Complex64> = BTreeMap::new();
        for m in terms {
            for idx in [&m.zbar, &m.z] {
                if idx.len() != dim {
                    return Err(Error::DimensionMismatch { expected: dim, found: idx.len() });
                }
            }
            if m.degree() > max_degree {
                return Err(Error::invalid(
                    "degree",
                    format!("term of degree {} exceeds maximum {max_degree}", m.degree()),
                ));
            }
            *map.entry((m.zbar, m.z)).or_default() += m.coefficient;
        }
        map.retain(|_, c| c.norm() >= SYMBOLIC_ZERO);
        for ((zbar, z), c) in &map {
            let partner = map.get(&(z.clone(), zbar.clone())).copied();
            let ok = match partner {
                Some(p) => (p - c.conj()).norm() <= REALITY_TOL * c.norm().max(1.0),
                None => false,
            };
            if !ok {
                return Err(Error::RealityViolation { zbar: zbar.clone(), z: z.clone() });
            }
        }
        Ok(Self::from_map_realified(dim, map))
    }

    /// Averages each coefficient with its conjugate partner and prunes zeros.
    fn from_map_realified(dim: usize, map: BTreeMap<Key, Complex64>) -> Self {
        let mut out = BTreeMap::new();
        for ((zbar, z), c) in &map {
            let partner = map
                .get(&(z.clone(), zbar.clone()))
                .copied()
                .unwrap_or_default();
            let v = (c + partner.conj()) * 0.5;
            if v.norm() >= SYMBOLIC_ZERO {
                out.insert((zbar.clone(), z.clone()), v);
            }
        }
        // a surviving term whose partner was pruned is restored symmetric
        let keys: Vec<Key> = out.keys().cloned().collect();
        for (zbar, z) in keys {
            let c = out[&(zbar.clone(), z.clone())];
            out.entry((z, zbar)).or_insert(c.conj());
        }
        Self { dim, terms: out }
    }

    pub fn zero(dim: usize) -> Self {
        Self { dim, terms: BTreeMap::new() }
    }

    /// `⟨z, C z⟩ = Σ C_ab z̄_a z_b`.
    pub fn from_hermitian(c: &HermitianMatrix) -> Self {
        let n = c.dim();
        let mut map = BTreeMap::new();
        for a in 0..n {
            for b in 0..n {
                let v = c.matrix()[(a, b)];
                if v.norm() >= SYMBOLIC_ZERO {
                    map.insert((unit(n, a), unit(n, b)), v);
                }
            }
        }
        Self { dim: n, terms: map }
    }

    /// `N = Σ_a z̄_a z_a`.
    pub fn number_operator(dim: usize) -> Self {
        Self::from_hermitian(&HermitianMatrix::identity(dim))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = Monomial> + '_ {
        self.terms
            .iter()
            .map(|((zbar, z), c)| Monomial::new(*c, zbar.clone(), z.clone()))
    }

    pub fn coefficient(&self, zbar: &[u16], z: &[u16]) -> Complex64 {
        self.terms
            .get(&(zbar.to_vec(), z.to_vec()))
            .copied()
            .unwrap_or_default()
    }

    pub fn degree(&self) -> u32 {
        self.terms
            .keys()
            .map(|(a, b)| total(a) + total(b))
            .max()
            .unwrap_or(0)
    }

    /// True iff every term has as many `z̄` as `z` factors, i.e. the
    /// observable is invariant under `z → e^{iθ} z`.
    pub fn is_u1_invariant(&self) -> bool {
        self.terms.keys().all(|(a, b)| total(a) == total(b))
    }

    fn first_non_invariant(&self) -> Option<&Key> {
        self.terms.keys().find(|(a, b)| total(a) != total(b))
    }

    pub(crate) fn require_invariant(&self) -> Result<()> {
        match self.first_non_invariant() {
            Some((zbar, z)) => Err(Error::NotInvariant { zbar: zbar.clone(), z: z.clone() }),
            None => Ok(()),
        }
    }

    fn check_dim(&self, other: &Self) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: other.dim });
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_dim(other)?;
        let mut map = self.terms.clone();
        for (k, c) in &other.terms {
            *map.entry(k.clone()).or_default() += c;
        }
        Ok(Self::from_map_realified(self.dim, map))
    }

    pub fn scale(&self, s: f64) -> Self {
        let map = self.terms.iter().map(|(k, c)| (k.clone(), c * s)).collect();
        Self::from_map_realified(self.dim, map)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scale(-1.0))
    }

    /// Rewrites every coefficient through `f(key_degree, c)`. The closure
    /// must preserve the reality condition (real factors do).
    pub(crate) fn map_coefficients(&self, f: impl Fn(u32, Complex64) -> Complex64) -> Self {
        let map = self
            .terms
            .iter()
            .map(|((a, b), c)| ((a.clone(), b.clone()), f(total(a) + total(b), *c)))
            .collect();
        Self::from_map_realified(self.dim, map)
    }

    /// Poisson bracket `{self, other}`.
    pub fn poisson_bracket(&self, other: &Self) -> Result<Self> {
        self.check_dim(other)?;
        let mut acc: BTreeMap<Key, Complex64> = BTreeMap::new();
        for a in 0..self.dim {
            let df_dz = derivative(&self.terms, a, Var::Z);
            let dg_dzbar = derivative(&other.terms, a, Var::ZBar);
            let df_dzbar = derivative(&self.terms, a, Var::ZBar);
            let dg_dz = derivative(&other.terms, a, Var::Z);
            multiply_into(&mut acc, &df_dz, &dg_dzbar, -I);
            multiply_into(&mut acc, &df_dzbar, &dg_dz, I);
        }
        Ok(Self::from_map_realified(self.dim, acc))
    }

    /// The Hermitian matrix `h` of the degree-(1,1) part `h_ab z̄_a z_b`.
    pub fn quadratic_part(&self) -> Result<HermitianMatrix> {
        self.require_invariant()?;
        let n = self.dim;
        let mut m = CMatrix::zeros(n, n);
        for ((zbar, z), c) in &self.terms {
            if total(zbar) == 1 && total(z) == 1 {
                let a = zbar.iter().position(|&k| k == 1).unwrap();
                let b = z.iter().position(|&k| k == 1).unwrap();
                m[(a, b)] = *c;
            }
        }
        Ok(HermitianMatrix::symmetrized(&m))
    }

    /// Everything except the degree-(1,1) part.
    pub fn remainder(&self) -> Self {
        let terms = self
            .terms
            .iter()
            .filter(|((a, b), _)| !(total(a) == 1 && total(b) == 1))
            .map(|(k, c)| (k.clone(), *c))
            .collect();
        Self { dim: self.dim, terms }
    }

    /// Whether the observable generates a trivial flow (only a constant term).
    pub fn is_constant(&self) -> bool {
        self.terms.keys().all(|(a, b)| total(a) + total(b) == 0)
    }

    fn evaluate_complex(&self, z: &[Complex64]) -> (Complex64, f64) {
        let pw = Powers::new(z, self.degree() as usize);
        let mut acc = Complex64::new(0.0, 0.0);
        let mut scale = 0.0;
        for ((zbar, zi), c) in &self.terms {
            let v = c * pw.monomial(zbar, zi);
            scale += v.norm();
            acc += v;
        }
        (acc, scale)
    }

    /// Value at `x`. The imaginary part must vanish to rounding; a large
    /// residue means the observable was corrupted.
    pub fn evaluate(&self, x: &PhasePoint) -> Result<f64> {
        if x.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: x.dim() });
        }
        let (v, scale) = self.evaluate_complex(x.coords());
        if v.im.abs() > RESIDUE_TOL * scale.max(1.0) {
            return Err(Error::ImaginaryResidue { residue: v.im.abs() });
        }
        Ok(v.re)
    }

    /// The Hamiltonian vector field `ż_a = {z_a, H} = -i ∂H/∂z̄_a`.
    pub fn hamiltonian_vector_field(&self) -> VectorField {
        VectorField::new(self)
    }
}

/// All multi-indices over `n` slots with total degree `d`, in lexicographic order.
pub fn multi_indices(n: usize, d: u16) -> Vec<MultiIndex> {
    if n == 1 {
        return vec![vec![d]];
    }
    let mut out = Vec::new();
    for first in (0..=d).rev() {
        for rest in multi_indices(n - 1, d - first) {
            let mut v = vec![first];
            v.extend(rest);
            out.push(v);
        }
    }
    out
}

/// A random real U(1)-invariant polynomial: a GUE quadratic part scaled by
/// `quadratic_scale` plus, for every pair of degree-(k,k) keys with
/// `2 ≤ k ≤ max_half_degree`, a Gaussian coefficient scaled by `higher_scale`.
pub fn random_graded<R: rand::Rng + ?Sized>(
    n: usize,
    quadratic_scale: f64,
    higher_scale: f64,
    max_half_degree: u16,
    rng: &mut R,
) -> PolynomialObservable {
    use rand_distr::StandardNormal;
    let quad = HermitianMatrix::random_gue(n, rng).scale(quadratic_scale);
    let mut map: BTreeMap<Key, Complex64> = PolynomialObservable::from_hermitian(&quad).terms;
    for k in 2..=max_half_degree {
        let keys = multi_indices(n, k);
        for (i, a) in keys.iter().enumerate() {
            for b in &keys[i..] {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = if a == b { 0.0 } else { rng.sample(StandardNormal) };
                let c = Complex64::new(re, im) * higher_scale;
                map.insert((a.clone(), b.clone()), c);
                map.insert((b.clone(), a.clone()), c.conj());
            }
        }
    }
    PolynomialObservable::from_map_realified(n, map)
}

fn unit(n: usize, a: usize) -> MultiIndex {
    let mut v = vec![0; n];
    v[a] = 1;
    v
}

#[derive(Clone, Copy)]
enum Var {
    Z,
    ZBar,
}

/// Wirtinger derivative treating `z` and `z̄` as independent.
fn derivative(terms: &BTreeMap<Key, Complex64>, a: usize, var: Var) -> Vec<(Key, Complex64)> {
    let mut out = Vec::new();
    for ((zbar, z), c) in terms {
        let (mut zbar, mut z) = (zbar.clone(), z.clone());
        let slot = match var {
            Var::Z => &mut z[a],
            Var::ZBar => &mut zbar[a],
        };
        if *slot == 0 {
            continue;
        }
        let k = *slot as f64;
        *slot -= 1;
        out.push(((zbar, z), c * k));
    }
    out
}

fn multiply_into(
    acc: &mut BTreeMap<Key, Complex64>,
    f: &[(Key, Complex64)],
    g: &[(Key, Complex64)],
    factor: Complex64,
) {
    for ((fa, fb), cf) in f {
        for ((ga, gb), cg) in g {
            let zbar = fa.iter().zip(ga).map(|(x, y)| x + y).collect();
            let z = fb.iter().zip(gb).map(|(x, y)| x + y).collect();
            *acc.entry((zbar, z)).or_default() += factor * cf * cg;
        }
    }
}

/// Power tables `z_k^p` and `z̄_k^p` for monomial evaluation.
struct Powers {
    z: Vec<Vec<Complex64>>,
    zbar: Vec<Vec<Complex64>>,
}

impl Powers {
    fn new(z: &[Complex64], max: usize) -> Self {
        let table = |w: &dyn Fn(Complex64) -> Complex64| {
            z.iter()
                .map(|&c| {
                    let c = w(c);
                    let mut row = Vec::with_capacity(max + 1);
                    let mut p = Complex64::new(1.0, 0.0);
                    for _ in 0..=max {
                        row.push(p);
                        p *= c;
                    }
                    row
                })
                .collect()
        };
        Self { z: table(&|c| c), zbar: table(&|c: Complex64| c.conj()) }
    }

    fn monomial(&self, zbar: &[u16], z: &[u16]) -> Complex64 {
        let mut v = Complex64::new(1.0, 0.0);
        for k in 0..zbar.len() {
            if zbar[k] > 0 {
                v *= self.zbar[k][zbar[k] as usize];
            }
            if z[k] > 0 {
                v *= self.z[k][z[k] as usize];
            }
        }
        v
    }
}

/// Compiled form of `ż = -i ∂H/∂z̄` for repeated evaluation.
#[derive(Debug, Clone)]
pub struct VectorField {
    dim: usize,
    /// `(component, coefficient, z̄ exponents, z exponents)`
    terms: Vec<(usize, Complex64, MultiIndex, MultiIndex)>,
}

impl VectorField {
    fn new(h: &PolynomialObservable) -> Self {
        let mut terms = Vec::new();
        for a in 0..h.dim {
            for ((zbar, z), c) in derivative(&h.terms, a, Var::ZBar) {
                terms.push((a, -I * c, zbar, z));
            }
        }
        Self { dim: h.dim, terms }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Writes `dz/dt` at `z` into `out`.
    pub fn eval_into(&self, z: &[Complex64], out: &mut [Complex64]) {
        out.iter_mut().for_each(|o| *o = Complex64::new(0.0, 0.0));
        for (a, c, zbar, zi) in &self.terms {
            let mut v = *c;
            for k in 0..self.dim {
                for _ in 0..zbar[k] {
                    v *= z[k].conj();
                }
                for _ in 0..zi[k] {
                    v *= z[k];
                }
            }
            out[*a] += v;
        }
    }

    pub fn eval(&self, z: &PhasePoint) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.dim];
        self.eval_into(z.coords(), &mut out);
        out
    }
}

impl fmt::Display for PolynomialObservable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for ((zbar, z), c) in &self.terms {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            write!(f, "({:.6}{:+.6}i)", c.re, c.im)?;
            for (k, &e) in zbar.iter().enumerate() {
                for _ in 0..e {
                    write!(f, " z̄{}", k + 1)?;
                }
            }
            for (k, &e) in z.iter().enumerate() {
                for _ in 0..e {
                    write!(f, " z{}", k + 1)?;
                }
            }
        }
        Ok(())
    }
}
