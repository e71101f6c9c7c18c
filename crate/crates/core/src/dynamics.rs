//! Classical flow `ż = {z, H}` with drift monitoring, and the coordinate
//! rescaling `u = √ε z` that turns `ε` into Planck's constant.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{HermitianMatrix, Spectrum};
use crate::observable::{PhasePoint, PolynomialObservable, VectorField};

/// Relative drift per unit time above which a trajectory is flagged.
pub const DRIFT_LIMIT: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Strang splitting: exact rotation by the quadratic part around an
    /// RK4 step of the remainder.
    SplitStep,
    /// Classical RK4 on the full field.
    Rk4Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub method: Method,
    /// Initial step; the controller adapts it.
    pub base_step: f64,
    /// Accepted local error per step, relative to `1 + |z|`.
    pub tolerance: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self { method: Method::SplitStep, base_step: 1e-2, tolerance: 1e-12 }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_step > 0.0 && self.base_step.is_finite()) {
            return Err(Error::invalid("base_step", "must be positive"));
        }
        if !(self.tolerance > 0.0 && self.tolerance <= 1e-2) {
            return Err(Error::invalid("tolerance", "must lie in (0, 1e-2]"));
        }
        Ok(())
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub points: Vec<PhasePoint>,
    /// `max_t |H(z_t) - H(z_0)| / |H(z_0)|`, divided by the duration.
    pub energy_drift: f64,
    /// Same for `Σ|z_a|²`.
    pub norm_drift: f64,
    pub flagged: bool,
}

impl Trajectory {
    pub fn last(&self) -> &PhasePoint {
        self.points.last().expect("trajectory is never empty")
    }

    /// Columns `time, re_z1, im_z1, …`, in the runner's CSV format.
    pub fn to_csv(&self) -> String {
        let n = self.points.first().map_or(0, |p| p.0.len());
        let mut header = vec!["time".to_string()];
        for a in 1..=n {
            header.push(format!("re_z{a}"));
            header.push(format!("im_z{a}"));
        }
        let rows: Vec<Vec<Option<f64>>> = self
            .times
            .iter()
            .zip(&self.points)
            .map(|(t, p)| std::iter::once(Some(*t)).chain(p.0.iter().flat_map(|z| [Some(z.re), Some(z.im)])).collect())
            .collect();
        crate::experiment::csv(&header, &rows)
    }
}

/// A Hamiltonian prepared for stepping.
#[derive(Debug, Clone)]
pub struct Flow {
    dim: usize,
    kind: FlowKind,
}

#[derive(Debug, Clone)]
enum FlowKind {
    Split { quadratic: Spectrum, remainder: VectorField },
    Rk4 { field: VectorField },
}

impl Flow {
    pub fn new(h: &PolynomialObservable, method: Method) -> Result<Self> {
        h.require_invariant()?;
        let kind = match method {
            Method::SplitStep => FlowKind::Split {
                quadratic: h.quadratic_part()?.eigh(),
                remainder: h.remainder().hamiltonian_vector_field(),
            },
            Method::Rk4Adaptive => FlowKind::Rk4 { field: h.hamiltonian_vector_field() },
        };
        Ok(Self { dim: h.dim(), kind })
    }

    /// Local error order `p` (error ∝ dt^p) of one step.
    fn local_order(&self) -> f64 {
        match self.kind {
            FlowKind::Split { .. } => 3.0,
            FlowKind::Rk4 { .. } => 5.0,
        }
    }

    /// The exact flow is a single rotation (no remainder) or the identity.
    fn is_linear(&self) -> bool {
        match &self.kind {
            FlowKind::Split { remainder, .. } => remainder.is_zero(),
            FlowKind::Rk4 { field } => field.is_zero(),
        }
    }

    pub fn step(&self, z: &[Complex64], dt: f64) -> Vec<Complex64> {
        match &self.kind {
            FlowKind::Split { quadratic, remainder } => {
                if remainder.is_zero() {
                    return rotate(quadratic, z, dt);
                }
                let half = rotate(quadratic, z, dt / 2.0);
                let mid = rk4(remainder, &half, dt);
                rotate(quadratic, &mid, dt / 2.0)
            }
            FlowKind::Rk4 { field } => rk4(field, z, dt),
        }
    }
}

fn rotate(spec: &Spectrum, z: &[Complex64], dt: f64) -> Vec<Complex64> {
    let u = spec.propagator(dt);
    let n = z.len();
    (0..n)
        .map(|i| (0..n).map(|j| u[(i, j)] * z[j]).sum())
        .collect()
}

fn rk4(field: &VectorField, z: &[Complex64], dt: f64) -> Vec<Complex64> {
    let n = z.len();
    let mut k1 = vec![Complex64::default(); n];
    let mut k2 = k1.clone();
    let mut k3 = k1.clone();
    let mut k4 = k1.clone();
    let axpy = |k: &[Complex64], s: f64| -> Vec<Complex64> {
        z.iter().zip(k).map(|(a, b)| a + b * s).collect()
    };
    field.eval_into(z, &mut k1);
    field.eval_into(&axpy(&k1, dt / 2.0), &mut k2);
    field.eval_into(&axpy(&k2, dt / 2.0), &mut k3);
    field.eval_into(&axpy(&k3, dt), &mut k4);
    (0..n)
        .map(|i| z[i] + (k1[i] + k2[i] * 2.0 + k3[i] * 2.0 + k4[i]) * (dt / 6.0))
        .collect()
}

/// One split step: half rotation by `exp(-iĥ dt/2)`, an RK4 step of the
/// remainder's flow, another half rotation.
pub fn split_step(h: &PolynomialObservable, z: &PhasePoint, dt: f64) -> Result<PhasePoint> {
    if z.dim() != h.dim() {
        return Err(Error::DimensionMismatch { expected: h.dim(), found: z.dim() });
    }
    let flow = Flow::new(h, Method::SplitStep)?;
    Ok(PhasePoint(flow.step(z.coords(), dt)))
}

fn max_abs_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

fn norm(z: &[Complex64]) -> f64 {
    z.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

/// Adaptive driver with step-doubling error control. Calls `visit` on every
/// accepted `(t, z)`, including the start.
fn drive(
    flow: &Flow,
    z0: &[Complex64],
    t_end: f64,
    cfg: &IntegratorConfig,
    mut visit: impl FnMut(f64, &[Complex64]),
) -> Result<Vec<Complex64>> {
    visit(0.0, z0);
    if flow.is_linear() {
        let z = flow.step(z0, t_end);
        visit(t_end, &z);
        return Ok(z);
    }
    let order = flow.local_order();
    let min_dt = 1e-13 * t_end.max(1.0);
    let mut z = z0.to_vec();
    let mut t = 0.0;
    let mut dt = cfg.base_step.min(t_end);
    while t < t_end {
        let last = t + dt >= t_end * (1.0 - 1e-14);
        let h = if last { t_end - t } else { dt };
        let full = flow.step(&z, h);
        let half = flow.step(&flow.step(&z, h / 2.0), h / 2.0);
        let err = max_abs_diff(&full, &half);
        let allowed = cfg.tolerance * (1.0 + norm(&z));
        let factor = if err == 0.0 {
            4.0
        } else {
            (0.9 * (allowed / err).powf(1.0 / order)).clamp(0.2, 4.0)
        };
        if err <= allowed {
            z = half;
            t = if last { t_end } else { t + h };
            visit(t, &z);
            if !last {
                dt = h * factor;
            }
        } else {
            dt = h * factor;
            if dt < min_dt {
                return Err(Error::StepUnderflow { time: t, dt });
            }
        }
    }
    Ok(z)
}

fn check_inputs(h: &PolynomialObservable, z0: &PhasePoint, t_end: f64, cfg: &IntegratorConfig) -> Result<()> {
    cfg.validate()?;
    if z0.dim() != h.dim() {
        return Err(Error::DimensionMismatch { expected: h.dim(), found: z0.dim() });
    }
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::invalid("t_end", "must be positive"));
    }
    Ok(())
}

/// Integrates `ż = {z, H}` from `t = 0` to `t_end`, recording every accepted
/// step and the conservation diagnostics.
pub fn integrate(
    h: &PolynomialObservable,
    z0: &PhasePoint,
    t_end: f64,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    check_inputs(h, z0, t_end, cfg)?;
    let flow = Flow::new(h, cfg.method)?;
    let mut times = Vec::new();
    let mut points = Vec::new();
    drive(&flow, z0.coords(), t_end, cfg, |t, z| {
        times.push(t);
        points.push(PhasePoint(z.to_vec()));
    })?;
    let e0 = h.evaluate(z0)?;
    let n0 = z0.norm_sqr();
    let mut de: f64 = 0.0;
    let mut dn: f64 = 0.0;
    for p in &points {
        de = de.max((h.evaluate(p)? - e0).abs());
        dn = dn.max((p.norm_sqr() - n0).abs());
    }
    let rel = |d: f64, base: f64| if base.abs() > 0.0 { d / base.abs() } else { d };
    let energy_drift = rel(de, e0) / t_end;
    let norm_drift = rel(dn, n0) / t_end;
    let flagged = energy_drift > DRIFT_LIMIT || norm_drift > DRIFT_LIMIT;
    if flagged {
        log::warn!("trajectory drift above limit: energy {energy_drift:e}, norm {norm_drift:e}");
    }
    Ok(Trajectory { times, points, energy_drift, norm_drift, flagged })
}

/// End point of the flow only; no trajectory storage or diagnostics.
pub fn propagate(
    h: &PolynomialObservable,
    z0: &PhasePoint,
    t_end: f64,
    cfg: &IntegratorConfig,
) -> Result<PhasePoint> {
    check_inputs(h, z0, t_end, cfg)?;
    let flow = Flow::new(h, cfg.method)?;
    propagate_with(&flow, z0, t_end, cfg)
}

/// Like [`propagate`] with a prepared flow, for repeated use across points.
pub fn propagate_with(flow: &Flow, z0: &PhasePoint, t_end: f64, cfg: &IntegratorConfig) -> Result<PhasePoint> {
    if z0.dim() != flow.dim {
        return Err(Error::DimensionMismatch { expected: flow.dim, found: z0.dim() });
    }
    if t_end == 0.0 {
        return Ok(z0.clone());
    }
    Ok(PhasePoint(drive(flow, z0.coords(), t_end, cfg, |_, _| {})?))
}

/// Expresses `P(z̄, z)` in the coordinates `u = √ε z`: a term of total
/// degree `d` is multiplied by `ε^{-d/2}`, so that the result evaluated at
/// `u = √ε z` equals `P` at `z`.
pub fn scale_coordinates(p: &PolynomialObservable, eps: f64) -> Result<PolynomialObservable> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::invalid("epsilon", "must be positive"));
    }
    Ok(p.map_coefficients(|deg, c| c * eps.powf(-(deg as f64) / 2.0)))
}

/// The generator of the flow in `z` when the physical Hamiltonian `h` lives
/// in `u = √ε z`: `H(√ε z)/ε`. Its quadratic part is the same matrix as
/// that of `h`; terms of degree `2k` pick up `ε^{k-1}`.
pub fn rescaled_generator(h: &PolynomialObservable, eps: f64) -> Result<PolynomialObservable> {
    Ok(scale_coordinates(h, 1.0 / eps)?.scale(1.0 / eps))
}

/// `exp(-iĥt) z`, the exact flow of a quadratic Hamiltonian.
pub fn quadratic_flow(h: &HermitianMatrix, z: &PhasePoint, t: f64) -> PhasePoint {
    PhasePoint(rotate(&h.eigh(), z.coords(), t))
}
