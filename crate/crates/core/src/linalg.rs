//! Small dense complex linear algebra on top of `nalgebra`: the Hermitian
//! matrix newtype, sorted spectra with a fixed eigenvector phase, and the
//! unitary propagators built from them.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Tolerance used when validating Hermiticity on construction.
pub const HERMITIAN_TOL: f64 = 1e-12;

pub(crate) const I: Complex64 = Complex64::new(0.0, 1.0);

/// An `n x n` complex matrix equal to its own conjugate transpose.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix(CMatrix);

impl HermitianMatrix {
    /// Validates Hermiticity within [`HERMITIAN_TOL`] (relative to the largest
    /// entry) and stores the symmetrized matrix.
    pub fn new(m: CMatrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch { expected: m.nrows(), found: m.ncols() });
        }
        let dev = hermitian_deviation(&m);
        let scale = m.iter().map(|c| c.norm()).fold(1.0_f64, f64::max);
        if dev > HERMITIAN_TOL * scale {
            return Err(Error::NotHermitian { deviation: dev });
        }
        Ok(Self(symmetrize(&m)))
    }

    /// Symmetrizes `(M + M†)/2` without validation. Used at the end of
    /// floating-point pipelines; the deviation removed is logged.
    pub fn symmetrized(m: &CMatrix) -> Self {
        let dev = hermitian_deviation(m);
        if dev > 0.0 {
            log::debug!("symmetrizing matrix, pre-symmetrization deviation {dev:e}");
        }
        Self(symmetrize(m))
    }

    pub fn from_rows(rows: &[Vec<Complex64>]) -> Result<Self> {
        let n = rows.len();
        for r in rows {
            if r.len() != n {
                return Err(Error::DimensionMismatch { expected: n, found: r.len() });
            }
        }
        Self::new(CMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        Self(CMatrix::from_fn(n, n, |i, j| {
            if i == j {
                Complex64::new(diag[i], 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        }))
    }

    pub fn zeros(n: usize) -> Self {
        Self(CMatrix::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        Self(CMatrix::identity(n, n))
    }

    /// Gaussian unitary ensemble sample: real diagonal and complex
    /// off-diagonal entries, each with variance `1/n`.
    pub fn random_gue<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let var = 1.0 / n as f64;
        let mut m = CMatrix::zeros(n, n);
        for i in 0..n {
            let d: f64 = rng.sample(StandardNormal);
            m[(i, i)] = Complex64::new(d * var.sqrt(), 0.0);
            for j in (i + 1)..n {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                let c = Complex64::new(re, im) * (var / 2.0).sqrt();
                m[(i, j)] = c;
                m[(j, i)] = c.conj();
            }
        }
        Self(m)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace().re
    }

    pub fn scale(&self, s: f64) -> Self {
        Self(self.0.map(|c| c * s))
    }

    pub fn add(&self, other: &Self) -> Self {
        Self(&self.0 + &other.0)
    }

    /// `⟨z, M z⟩`, real for Hermitian `M`.
    pub fn quadratic_form(&self, z: &[Complex64]) -> f64 {
        let n = self.dim();
        let mut acc = Complex64::new(0.0, 0.0);
        for a in 0..n {
            let row: Complex64 = z.iter().enumerate().map(|(b, zb)| self.0[(a, b)] * zb).sum();
            acc += z[a].conj() * row;
        }
        acc.re
    }

    pub fn eigh(&self) -> Spectrum {
        Spectrum::of(&self.0)
    }

    /// `exp(-i M t)`.
    pub fn propagator(&self, t: f64) -> CMatrix {
        self.eigh().propagator(t)
    }
}

/// Eigen-decomposition of a Hermitian matrix with ascending eigenvalues.
/// Each eigenvector has its largest-magnitude component real and positive.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub values: Vec<f64>,
    /// Eigenvectors as columns, ordered like `values`.
    pub vectors: CMatrix,
}

impl Spectrum {
    pub fn of(m: &CMatrix) -> Self {
        let n = m.nrows();
        if n == 0 {
            return Self { values: vec![], vectors: CMatrix::zeros(0, 0) };
        }
        let eig = nalgebra::SymmetricEigen::new(symmetrize(m));
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        let mut vectors = CMatrix::zeros(n, n);
        for (col, &k) in order.iter().enumerate() {
            let v = eig.eigenvectors.column(k).into_owned();
            let v = fix_phase(v);
            vectors.set_column(col, &v);
        }
        Self { values, vectors }
    }

    /// `V diag(exp(-i λ t)) V†`.
    pub fn propagator(&self, t: f64) -> CMatrix {
        let phases: Vec<Complex64> =
            self.values.iter().map(|&l| Complex64::from_polar(1.0, -l * t)).collect();
        self.conjugate_diagonal(&phases)
    }

    /// `V diag(d) V†`.
    pub fn conjugate_diagonal(&self, d: &[Complex64]) -> CMatrix {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for (j, dj) in d.iter().enumerate() {
            for i in 0..n {
                scaled[(i, j)] *= dj;
            }
        }
        &scaled * self.vectors.adjoint()
    }

    /// Smallest separation between consecutive eigenvalues (infinite for n = 1).
    pub fn min_gap(&self) -> f64 {
        self.values.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
    }

    pub fn range(&self) -> f64 {
        match (self.values.first(), self.values.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }
}

/// Row-major real and imaginary parts of a complex matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexMatrixJson {
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
}

impl From<&CMatrix> for ComplexMatrixJson {
    fn from(m: &CMatrix) -> Self {
        let rows = |f: fn(&Complex64) -> f64| (0..m.nrows()).map(|a| (0..m.ncols()).map(|b| f(&m[(a, b)])).collect()).collect();
        Self { re: rows(|c| c.re), im: rows(|c| c.im) }
    }
}

/// Rescales `v` so that its largest-magnitude component is real positive.
pub fn fix_phase(mut v: CVector) -> CVector {
    let mut best = 0;
    let mut best_norm = -1.0;
    for (i, c) in v.iter().enumerate() {
        // a small slack keeps the choice stable under rounding
        if c.norm() > best_norm * (1.0 + 1e-12) {
            best = i;
            best_norm = c.norm();
        }
    }
    if best_norm > 0.0 {
        let phase = v[best].conj() / best_norm;
        v *= phase;
    }
    v
}

pub fn symmetrize(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * Complex64::new(0.5, 0.0)
}

pub fn hermitian_deviation(m: &CMatrix) -> f64 {
    (m - m.adjoint()).iter().map(|c| c.norm()).fold(0.0, f64::max)
}

pub fn commutator(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a * b - b * a
}

pub fn frobenius(m: &CMatrix) -> f64 {
    m.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

/// `Tr(A B)` without forming the product.
pub fn trace_product(a: &CMatrix, b: &CMatrix) -> Complex64 {
    let n = a.nrows();
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..n {
        for k in 0..n {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

/// `U M U†`.
pub fn conjugate(u: &CMatrix, m: &CMatrix) -> CMatrix {
    u * m * u.adjoint()
}

/// `exp(X)` for anti-Hermitian `X`, through the Hermitian matrix `iX`.
pub fn exp_anti_hermitian(x: &CMatrix) -> CMatrix {
    let h = x * I;
    Spectrum::of(&h).propagator(1.0)
}
