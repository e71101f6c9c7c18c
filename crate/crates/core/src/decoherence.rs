//! Slow random environments, instantaneous spectral frames and the
//! adiabatic (phase-only) evolution of `K̂`, together with the ensemble
//! experiment in which off-diagonal entries dephase across runs while the
//! diagonal ones stay put.
//!
//! In the instantaneous eigenbasis `φ_n(t)` of `ĥ(t)` the adiabatic
//! approximation keeps `|K_mn|` fixed and only accumulates the dynamic phase
//! `∫(ε_m − ε_n)`. Frames are parallel-transported (each overlap with the
//! previous grid point is made real positive), which is the gauge in which
//! no geometric phase has to be added by hand.

use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::KMatrix;
use crate::error::{Error, Result};
use crate::linalg::{frobenius, CMatrix, ComplexMatrixJson, HermitianMatrix, Spectrum};
use crate::quantum::{conjugated, propagator_path, HamiltonianPath, MagnusConfig};
use crate::rng::{substream, Domain};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProcessParams {
    /// Perturbation strength `λ`.
    pub lambda: f64,
    /// Period of the slowest mode; larger is slower.
    pub tau: f64,
    /// Number of Fourier modes `M_f`.
    pub modes: usize,
}

impl Default for ProcessParams {
    fn default() -> Self {
        Self { lambda: 0.2, tau: 50.0, modes: 1 }
    }
}

impl ProcessParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda", "must be finite and >= 0"));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::invalid("tau", "must be finite and > 0"));
        }
        if self.modes == 0 {
            return Err(Error::invalid("modes", "must be >= 1"));
        }
        Ok(())
    }
}

/// `ĥ(t) = ĥ₀ + λ Σ_k A_k cos(2πk t/τ + φ_k)` with GUE amplitudes `A_k`
/// and uniform phases `φ_k`.
#[derive(Debug, Clone)]
pub struct AdiabaticProcess {
    base: HermitianMatrix,
    params: ProcessParams,
    amplitudes: Vec<CMatrix>,
    phases: Vec<f64>,
}

impl AdiabaticProcess {
    /// Draws the process from substream `index` of the process domain.
    pub fn sample(base: &HermitianMatrix, params: &ProcessParams, seed: u64, index: u64) -> Result<Self> {
        params.validate()?;
        let mut rng = substream(seed, Domain::Process, index);
        let mut amplitudes = Vec::with_capacity(params.modes);
        let mut phases = Vec::with_capacity(params.modes);
        for _ in 0..params.modes {
            amplitudes.push(HermitianMatrix::random_gue(base.dim(), &mut rng).into_matrix());
            phases.push(TAU * rng.random::<f64>());
        }
        Ok(Self { base: base.clone(), params: *params, amplitudes, phases })
    }

    pub fn params(&self) -> &ProcessParams {
        &self.params
    }

    pub fn base(&self) -> &HermitianMatrix {
        &self.base
    }

    fn angular(&self, k: usize) -> f64 {
        TAU * (k + 1) as f64 / self.params.tau
    }

    /// `dĥ/dt` in closed form.
    pub fn derivative(&self, t: f64) -> CMatrix {
        let n = self.base.dim();
        let mut d = CMatrix::zeros(n, n);
        for (k, (a, phi)) in self.amplitudes.iter().zip(&self.phases).enumerate() {
            let w = self.angular(k);
            d += a * Complex64::new(-self.params.lambda * w * (w * t + phi).sin(), 0.0);
        }
        d
    }

    /// `2πλ M_f² max_k ‖A_k‖ / τ`, an upper bound on `‖dĥ/dt‖` (spectral norm).
    pub fn derivative_bound(&self) -> f64 {
        let max_norm = self
            .amplitudes
            .iter()
            .map(|a| Spectrum::of(a).values.iter().fold(0.0f64, |m, v| m.max(v.abs())))
            .fold(0.0, f64::max);
        let m = self.params.modes as f64;
        TAU * self.params.lambda * m * m * max_norm / self.params.tau
    }
}

impl HamiltonianPath for AdiabaticProcess {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn at(&self, t: f64) -> HermitianMatrix {
        let mut h = self.base.matrix().clone();
        for (k, (a, phi)) in self.amplitudes.iter().zip(&self.phases).enumerate() {
            h += a * Complex64::new(self.params.lambda * (self.angular(k) * t + phi).cos(), 0.0);
        }
        HermitianMatrix::symmetrized(&h)
    }
}

pub fn sample_process(base: &HermitianMatrix, params: &ProcessParams, seed: u64) -> Result<AdiabaticProcess> {
    AdiabaticProcess::sample(base, params, seed, 0)
}

/// Eigenvalues and parallel-transported eigenvectors of `ĥ(t)` on a grid.
#[derive(Debug, Clone)]
pub struct SpectralFrame {
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
    /// Eigenvectors as columns, labelled consistently along the grid.
    vectors: Vec<CMatrix>,
    min_gap: f64,
}

/// Overlap below which two successive eigenvectors are not matched.
pub const MIN_OVERLAP: f64 = 0.9;
/// Default `gap_min` relative to the largest spectral range on the grid.
pub const RELATIVE_GAP_MIN: f64 = 1e-6;

impl SpectralFrame {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self, index: usize) -> &[f64] {
        &self.values[index]
    }

    pub fn vectors(&self, index: usize) -> &CMatrix {
        &self.vectors[index]
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map(|v| v.nrows()).unwrap_or(0)
    }

    pub fn end(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }

    pub fn min_gap(&self) -> f64 {
        self.min_gap
    }

    /// Grid index of `t`, matched to within `1e-12 max(1, |t|)`.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let tol = 1e-12 * t.abs().max(1.0);
        self.times
            .iter()
            .position(|&s| (s - t).abs() <= tol)
            .ok_or(Error::FrameMismatch { requested: t, end: self.end() })
    }

    /// `∫₀^{t_j} ε_m dt` for every level `m`, by composite Simpson.
    pub fn phase_integrals(&self, index: usize) -> Vec<f64> {
        let n = self.dim();
        (0..n).map(|m| simpson(&self.times[..=index], |k| self.values[k][m])).collect()
    }

    /// `Φ(t_j)† K̂ Φ(t_j)`.
    pub fn in_frame(&self, k: &CMatrix, index: usize) -> CMatrix {
        let phi = &self.vectors[index];
        phi.adjoint() * k * phi
    }
}

/// Composite Simpson on a possibly non-uniform grid; an odd trailing
/// interval is integrated with the quadratic through the last three points.
fn simpson(x: &[f64], f: impl Fn(usize) -> f64) -> f64 {
    let intervals = x.len().saturating_sub(1);
    if intervals == 0 {
        return 0.0;
    }
    if intervals == 1 {
        return 0.5 * (x[1] - x[0]) * (f(0) + f(1));
    }
    let mut sum = 0.0;
    let mut i = 0;
    while i + 2 <= intervals {
        let (h0, h1) = (x[i + 1] - x[i], x[i + 2] - x[i + 1]);
        sum += (h0 + h1) / 6.0
            * ((2.0 - h1 / h0) * f(i) + (h0 + h1) * (h0 + h1) / (h0 * h1) * f(i + 1) + (2.0 - h0 / h1) * f(i + 2));
        i += 2;
    }
    if i < intervals {
        let (x0, x1, x2) = (x[i - 1], x[i], x[i + 1]);
        let (f0, f1, f2) = (f(i - 1), f(i), f(i + 1));
        let quad = |s: f64| {
            f0 * (s - x1) * (s - x2) / ((x0 - x1) * (x0 - x2))
                + f1 * (s - x0) * (s - x2) / ((x1 - x0) * (x1 - x2))
                + f2 * (s - x0) * (s - x1) / ((x2 - x0) * (x2 - x1))
        };
        sum += (x2 - x1) / 6.0 * (f1 + 4.0 * quad(0.5 * (x1 + x2)) + f2);
    }
    sum
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::invalid("grid", "must contain at least one time"));
    }
    if grid.iter().any(|t| !t.is_finite()) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("grid", "times must be finite and strictly increasing"));
    }
    Ok(())
}

fn spectra(path: &dyn HamiltonianPath, grid: &[f64]) -> Vec<Spectrum> {
    grid.par_iter().map(|&t| path.at(t).eigh()).collect()
}

/// Gap guard and overlap matching over precomputed spectra.
fn assemble(grid: &[f64], spectra: &[Spectrum], gap_min: Option<f64>) -> Result<SpectralFrame> {
    let n = spectra[0].values.len();
    let range = spectra.iter().map(Spectrum::range).fold(0.0, f64::max);
    let gap_min = gap_min.unwrap_or(RELATIVE_GAP_MIN * range);
    let mut min_gap = f64::INFINITY;
    if n >= 2 {
        let (mut worst, mut worst_t) = (f64::INFINITY, grid[0]);
        for (s, &t) in spectra.iter().zip(grid) {
            let g = s.min_gap();
            if g < worst {
                worst = g;
                worst_t = t;
            }
        }
        if !(worst > gap_min) {
            return Err(Error::SpectralGap { time: worst_t, gap: worst, gap_min });
        }
        min_gap = worst;
    }

    let mut values = Vec::with_capacity(grid.len());
    let mut vectors: Vec<CMatrix> = Vec::with_capacity(grid.len());
    values.push(spectra[0].values.clone());
    vectors.push(spectra[0].vectors.clone());
    for (k, s) in spectra.iter().enumerate().skip(1) {
        let prev = &vectors[k - 1];
        let overlaps = prev.adjoint() * &s.vectors;
        let mut vals = vec![0.0; n];
        let mut vecs = CMatrix::zeros(n, n);
        let mut taken = vec![false; n];
        for i in 0..n {
            let (j, o) = (0..n)
                .map(|j| (j, overlaps[(i, j)]))
                .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
                .expect("n >= 1");
            if o.norm() < MIN_OVERLAP || taken[j] {
                return Err(Error::FrameTooCoarse { time: grid[k], overlap: o.norm() });
            }
            taken[j] = true;
            vals[i] = s.values[j];
            let phase = o.conj() / o.norm();
            vecs.set_column(i, &(s.vectors.column(j) * phase));
        }
        values.push(vals);
        vectors.push(vecs);
    }
    Ok(SpectralFrame { times: grid.to_vec(), values, vectors, min_gap })
}

/// Instantaneous frame on a given grid. `gap_min` defaults to
/// [`RELATIVE_GAP_MIN`] times the largest spectral range on the grid.
pub fn spectral_frame(path: &dyn HamiltonianPath, grid: &[f64], gap_min: Option<f64>) -> Result<SpectralFrame> {
    check_grid(grid)?;
    assemble(grid, &spectra(path, grid), gap_min)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrameConfig {
    /// Grid intervals per unit time on the first attempt.
    pub intervals_per_unit: f64,
    /// Accept when the phase integrals change by less than this on refinement.
    pub phase_tolerance: f64,
    /// ... and the transported end frame moves by less than this (Frobenius).
    pub frame_tolerance: f64,
    pub max_doublings: u32,
    /// Absolute gap floor; `None` means relative to the spectral range.
    pub gap_min: Option<f64>,
}

impl Default for FrameConfig {
    fn default() -> Self {
        Self { intervals_per_unit: 16.0, phase_tolerance: 1e-8, frame_tolerance: 1e-6, max_doublings: 16, gap_min: None }
    }
}

/// Uniform frame on `[0, t_end]`, refined by doubling until the phase
/// integrals and the end frame are converged.
pub fn adaptive_frame(path: &dyn HamiltonianPath, t_end: f64, cfg: &FrameConfig) -> Result<SpectralFrame> {
    adaptive_frame_aligned(path, t_end, cfg, 2)
}

/// As [`adaptive_frame`], with the interval count kept a multiple of `align`
/// so that `j t_end / align` are grid points.
pub(crate) fn adaptive_frame_aligned(
    path: &dyn HamiltonianPath,
    t_end: f64,
    cfg: &FrameConfig,
    align: usize,
) -> Result<SpectralFrame> {
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(Error::invalid("t_end", "must be finite and >= 0"));
    }
    if t_end == 0.0 {
        return spectral_frame(path, &[0.0], cfg.gap_min);
    }
    let align = align.max(1);
    let blocks = (t_end * cfg.intervals_per_unit / align as f64).ceil().max(1.0) as usize;
    let mut intervals = blocks * align;
    let grid_of = |m: usize| (0..=m).map(|j| t_end * j as f64 / m as f64).collect::<Vec<_>>();
    let mut grid = grid_of(intervals);
    let mut spec = spectra(path, &grid);
    let mut previous: Option<SpectralFrame> = None;
    for _ in 0..=cfg.max_doublings {
        match assemble(&grid, &spec, cfg.gap_min) {
            Ok(frame) => {
                if let Some(prev) = &previous {
                    let last = frame.len() - 1;
                    let a = frame.phase_integrals(last);
                    let b = prev.phase_integrals(prev.len() - 1);
                    let phase_change = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
                    let frame_change = frobenius(&(frame.vectors(last) - prev.vectors(prev.len() - 1)));
                    if phase_change < cfg.phase_tolerance && frame_change < cfg.frame_tolerance {
                        return Ok(frame);
                    }
                }
                previous = Some(frame);
            }
            Err(Error::FrameTooCoarse { .. }) => previous = None,
            Err(e) => return Err(e),
        }
        // refine: old points become the even points of the new grid
        let finer = grid_of(2 * intervals);
        let mids: Vec<f64> = finer.iter().skip(1).step_by(2).copied().collect();
        let mid_spec = spectra(path, &mids);
        let mut merged = Vec::with_capacity(finer.len());
        for (j, s) in spec.into_iter().enumerate() {
            merged.push(s);
            if j < mid_spec.len() {
                merged.push(mid_spec[j].clone());
            }
        }
        spec = merged;
        grid = finer;
        intervals *= 2;
    }
    Err(Error::NoConvergence { tol: cfg.phase_tolerance, steps: intervals })
}

/// Adiabatic evolution: in the frame at `t = 0`, entry `(m, n)` of the
/// operator `K̂` acquires `exp(-i∫₀ᵀ(ε_m − ε_n))` (the raw array `E[z̄_a z_b]`
/// the conjugate phase), and the result is mapped back with the frame at `T`.
pub fn evolve_adiabatic(k0: &KMatrix, frame: &SpectralFrame, t: f64) -> Result<KMatrix> {
    if k0.dim() != frame.dim() {
        return Err(Error::DimensionMismatch { expected: frame.dim(), found: k0.dim() });
    }
    let j = frame.index_of(t)?;
    if frame.times()[0] != 0.0 {
        return Err(Error::FrameMismatch { requested: 0.0, end: frame.end() });
    }
    let mut kf = frame.in_frame(k0.operator(), 0);
    let integrals = frame.phase_integrals(j);
    let n = k0.dim();
    for a in 0..n {
        for b in 0..n {
            if a != b {
                kf[(a, b)] *= Complex64::from_polar(1.0, -(integrals[a] - integrals[b]));
            }
        }
    }
    Ok(conjugated(&KMatrix::from_pipeline(&kf, k0.samples(), k0.stderr().clone()), frame.vectors(j)))
}

#[derive(Debug, Clone)]
pub struct AdiabaticComparison {
    pub full: KMatrix,
    pub adiabatic: KMatrix,
    /// Frobenius distance between the two.
    pub deviation: f64,
}

/// Exact time-dependent evolution against the adiabatic approximation.
pub fn full_vs_adiabatic(
    k0: &KMatrix,
    path: &dyn HamiltonianPath,
    t_end: f64,
    magnus: &MagnusConfig,
    frame_cfg: &FrameConfig,
) -> Result<AdiabaticComparison> {
    let frame = adaptive_frame(path, t_end, frame_cfg)?;
    let adiabatic = evolve_adiabatic(k0, &frame, t_end)?;
    let full = conjugated(k0, &propagator_path(path, 0.0, t_end, magnus)?);
    let deviation = frobenius(&(full.operator() - adiabatic.operator()));
    Ok(AdiabaticComparison { full, adiabatic, deviation })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Evolution {
    /// Magnus propagation of the time-dependent generator.
    Full,
    /// Phase-only evolution in the instantaneous frame.
    Adiabatic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoherenceConfig {
    pub process: ProcessParams,
    pub runs: usize,
    pub t_end: f64,
    /// Number of equally spaced reporting times including 0 and `t_end`.
    pub report_points: usize,
    pub evolution: Evolution,
    pub magnus: MagnusConfig,
    pub frame: FrameConfig,
    /// Redraws allowed per run when a process violates the gap floor.
    pub max_resamples: u32,
}

impl Default for DecoherenceConfig {
    fn default() -> Self {
        Self {
            process: ProcessParams::default(),
            runs: 200,
            t_end: 200.0,
            report_points: 21,
            evolution: Evolution::Full,
            magnus: MagnusConfig::default(),
            frame: FrameConfig::default(),
            max_resamples: 16,
        }
    }
}

impl DecoherenceConfig {
    pub fn validate(&self) -> Result<()> {
        self.process.validate()?;
        if self.runs < 2 {
            return Err(Error::invalid("runs", "must be >= 2"));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::invalid("t_end", "must be finite and > 0"));
        }
        if self.report_points < 2 {
            return Err(Error::invalid("report_points", "must be >= 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    /// Processes discarded for this run before one passed the gap floor.
    pub discarded: u32,
    pub min_gap: f64,
    /// `K̂(T)` in the transported frame at `T`.
    pub final_in_frame: ComplexMatrixJson,
    /// `K̂(T)` in the eigenbasis of `ĥ₀`.
    pub final_reference: ComplexMatrixJson,
    /// Largest in-frame diagonal change between `0` and `T`.
    pub diagonal_drift: f64,
    /// Largest change of any in-frame `|K_mn|` between `0` and `T`.
    pub magnitude_drift: f64,
    /// Distance to the adiabatic prediction (full evolution only).
    pub adiabatic_deviation: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OffDiagonalStat {
    pub m: usize,
    pub n: usize,
    /// `|K_mn(0)|` in the `ĥ₀` eigenbasis.
    pub initial_abs: f64,
    pub min_individual_abs: f64,
    pub max_individual_abs: f64,
    pub mean_individual_abs: f64,
    /// `|K̄_mn(T)|`, average over runs in the `ĥ₀` eigenbasis.
    pub average_abs: f64,
    /// Same, averaging the in-frame entries.
    pub average_in_frame_abs: f64,
    /// `1 − |mean e^{i arg K_mn(T)}|` of the in-frame entries across runs.
    pub circular_variance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecoherenceReport {
    pub runs: Vec<RunRecord>,
    pub initial_reference: ComplexMatrixJson,
    pub average_reference: ComplexMatrixJson,
    pub average_in_frame: ComplexMatrixJson,
    pub off_diagonal: Vec<OffDiagonalStat>,
    pub max_diagonal_drift: f64,
    pub max_magnitude_drift: f64,
    pub max_adiabatic_deviation: Option<f64>,
    pub discarded: u64,
    /// Reporting times.
    pub times: Vec<f64>,
    /// `|K̄_mn(t)|` in the `ĥ₀` eigenbasis for each `m < n`, one row per time.
    pub decay: Vec<Vec<f64>>,
    /// `Tr K̄(t)` per reporting time.
    pub trace: Vec<f64>,
}

struct Run {
    record: RunRecord,
    in_frame: CMatrix,
    reference: Vec<CMatrix>,
}

fn run_one(
    index: usize,
    k0: &KMatrix,
    base: &HermitianMatrix,
    reference: &CMatrix,
    cfg: &DecoherenceConfig,
    seed: u64,
) -> Result<Run> {
    let segments = cfg.report_points - 1;
    let mut discarded = 0;
    let (process, frame) = loop {
        let process = AdiabaticProcess::sample(base, &cfg.process, seed, ((index as u64) << 16) | discarded as u64)?;
        match adaptive_frame_aligned(&process, cfg.t_end, &cfg.frame, segments) {
            Ok(frame) => break (process, frame),
            Err(Error::SpectralGap { .. }) if discarded < cfg.max_resamples => discarded += 1,
            Err(e) => return Err(e),
        }
    };
    let times: Vec<f64> = (0..=segments).map(|j| cfg.t_end * j as f64 / segments as f64).collect();
    let adiabatic_end = evolve_adiabatic(k0, &frame, cfg.t_end)?;
    let (states, adiabatic_deviation) = match cfg.evolution {
        Evolution::Full => {
            let mut states = vec![k0.clone()];
            for w in times.windows(2) {
                let u = propagator_path(&process, w[0], w[1], &cfg.magnus)?;
                let next = conjugated(states.last().expect("non-empty"), &u);
                states.push(next);
            }
            let dev = frobenius(&(states[segments].operator() - adiabatic_end.operator()));
            (states, Some(dev))
        }
        Evolution::Adiabatic => {
            let states = times.iter().map(|&t| evolve_adiabatic(k0, &frame, t)).collect::<Result<Vec<_>>>()?;
            (states, None)
        }
    };
    let last = frame.len() - 1;
    let start = frame.in_frame(k0.operator(), 0);
    let end = frame.in_frame(states[segments].operator(), last);
    let n = k0.dim();
    let mut diagonal_drift: f64 = 0.0;
    let mut magnitude_drift: f64 = 0.0;
    for a in 0..n {
        diagonal_drift = diagonal_drift.max((end[(a, a)] - start[(a, a)]).norm());
        for b in 0..n {
            magnitude_drift = magnitude_drift.max((end[(a, b)].norm() - start[(a, b)].norm()).abs());
        }
    }
    let to_reference = |k: &KMatrix| reference.adjoint() * k.operator() * reference;
    let reference_states: Vec<CMatrix> = states.iter().map(to_reference).collect();
    Ok(Run {
        record: RunRecord {
            run: index,
            discarded,
            min_gap: frame.min_gap(),
            final_in_frame: (&end).into(),
            final_reference: (&reference_states[segments]).into(),
            diagonal_drift,
            magnitude_drift,
            adiabatic_deviation,
        },
        in_frame: end,
        reference: reference_states,
    })
}

/// Runs `cfg.runs` independent environments on the same initial state `k0`
/// (given in the lab basis) and collects the dephasing statistics. Run `r`
/// draws its process from substream `(r << 16) | attempt`; aggregation is
/// in run order, so the report does not depend on the thread count.
pub fn decoherence_experiment(
    k0: &KMatrix,
    base: &HermitianMatrix,
    cfg: &DecoherenceConfig,
    seed: u64,
) -> Result<DecoherenceReport> {
    cfg.validate()?;
    if k0.dim() != base.dim() {
        return Err(Error::DimensionMismatch { expected: base.dim(), found: k0.dim() });
    }
    let reference = base.eigh().vectors;
    let runs = (0..cfg.runs)
        .into_par_iter()
        .map(|r| run_one(r, k0, base, &reference, cfg, seed))
        .collect::<Result<Vec<_>>>()?;

    let n = k0.dim();
    let m = runs.len() as f64;
    let mean = |f: &dyn Fn(&Run) -> &CMatrix| {
        runs.iter().fold(CMatrix::zeros(n, n), |acc, r| acc + f(r)) / Complex64::new(m, 0.0)
    };
    let average_in_frame = mean(&|r| &r.in_frame);
    let averages: Vec<CMatrix> = (0..cfg.report_points).map(|j| mean(&|r| &r.reference[j])).collect();
    let initial = reference.adjoint() * k0.operator() * &reference;
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
    let last = cfg.report_points - 1;

    let off_diagonal = pairs
        .iter()
        .map(|&(a, b)| {
            let abs: Vec<f64> = runs.iter().map(|r| r.in_frame[(a, b)].norm()).collect();
            let unit = runs.iter().fold(Complex64::new(0.0, 0.0), |acc, r| {
                let z = r.in_frame[(a, b)];
                acc + if z.norm() > 0.0 { z / z.norm() } else { Complex64::new(0.0, 0.0) }
            }) / m;
            OffDiagonalStat {
                m: a,
                n: b,
                initial_abs: initial[(a, b)].norm(),
                min_individual_abs: abs.iter().copied().fold(f64::INFINITY, f64::min),
                max_individual_abs: abs.iter().copied().fold(0.0, f64::max),
                mean_individual_abs: abs.iter().sum::<f64>() / m,
                average_abs: averages[last][(a, b)].norm(),
                average_in_frame_abs: average_in_frame[(a, b)].norm(),
                circular_variance: 1.0 - unit.norm(),
            }
        })
        .collect();

    let times = (0..cfg.report_points).map(|j| cfg.t_end * j as f64 / last as f64).collect();
    let decay = averages.iter().map(|k| pairs.iter().map(|&(a, b)| k[(a, b)].norm()).collect()).collect();
    let trace = averages.iter().map(|k| k.trace().re).collect();
    let records: Vec<RunRecord> = runs.into_iter().map(|r| r.record).collect();
    let max_adiabatic_deviation = records
        .iter()
        .filter_map(|r| r.adiabatic_deviation)
        .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a| a.max(d))));
    Ok(DecoherenceReport {
        max_diagonal_drift: records.iter().map(|r| r.diagonal_drift).fold(0.0, f64::max),
        max_magnitude_drift: records.iter().map(|r| r.magnitude_drift).fold(0.0, f64::max),
        max_adiabatic_deviation,
        discarded: records.iter().map(|r| r.discarded as u64).sum(),
        runs: records,
        initial_reference: (&initial).into(),
        average_reference: (&averages[last]).into(),
        average_in_frame: (&average_in_frame).into(),
        off_diagonal,
        times,
        decay,
        trace,
    })
}
