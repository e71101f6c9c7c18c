//! Declarative experiments: a TOML config names a pipeline and its inputs,
//! and a run produces deterministic JSON/CSV artifacts plus a manifest with
//! the SHA-256 of every file.
//!
//! The config schema is documented in the crate README. Parsing is strict:
//! unknown keys are errors, and every reported problem names the dotted path
//! of the offending field.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::decoherence::{decoherence_experiment, DecoherenceConfig, Evolution, FrameConfig, ProcessParams};
use crate::dynamics::{rescaled_generator, IntegratorConfig};
use crate::ensemble::{
    compare_moments, evolve_ensemble, moment_matrix, sample, DistributionSpec, Ensemble, Equivalence, KMatrix,
    KMatrixJson,
};
use crate::error::Error;
use crate::linalg::{frobenius, CMatrix, HermitianMatrix};
use crate::observable::{random_graded, Monomial, PhasePoint, PolynomialObservable};
use crate::quantum::{evolve_k, normalize_density, pure_state_decomposition, DensityMatrixJson, MagnusConfig, PureStateMixtureJson};
use crate::rng::{substream, Domain};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const TOOL: &str = env!("CARGO_PKG_NAME");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    ClassicalVsQuantum,
    EpsilonScaling,
    Decoherence,
    StateEquivalence,
    PureDecomposition,
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ExperimentKind::ClassicalVsQuantum => "classical-vs-quantum",
            ExperimentKind::EpsilonScaling => "epsilon-scaling",
            ExperimentKind::Decoherence => "decoherence",
            ExperimentKind::StateEquivalence => "state-equivalence",
            ExperimentKind::PureDecomposition => "pure-decomposition",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub n: usize,
    pub seed: u64,
    #[serde(default)]
    pub times: Vec<f64>,
    /// Monte Carlo sample count; `0` evaluates finite mixtures exactly.
    #[serde(default)]
    pub samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hamiltonian: Option<HamiltonianLiteral>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distribution: Option<DistributionLiteral>,
    /// Second state for `state-equivalence`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distribution_b: Option<DistributionLiteral>,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<EpsilonBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decoherence: Option<DecoherenceBlock>,
}

/// A polynomial as explicit term records, a seeded random graded
/// polynomial, or the sum of both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HamiltonianLiteral {
    #[serde(default)]
    pub terms: Vec<TermLiteral>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random: Option<RandomHamiltonian>,
}

/// `(re + i im) z̄^zbar z^z` with exponent vectors of length `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermLiteral {
    pub re: f64,
    #[serde(default)]
    pub im: f64,
    pub zbar: Vec<u16>,
    pub z: Vec<u16>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomHamiltonian {
    /// Scale of the GUE quadratic part.
    pub quadratic_scale: f64,
    /// Scale of the degree-(2,2) part; zero for a purely quadratic `H`.
    pub quartic_scale: f64,
}

impl Default for RandomHamiltonian {
    fn default() -> Self {
        Self { quadratic_scale: 1.0, quartic_scale: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DistributionLiteral {
    Delta {
        re: Vec<f64>,
        #[serde(default)]
        im: Vec<f64>,
    },
    /// Complex Gaussian; mean defaults to 0 and covariance to the identity.
    Gaussian {
        #[serde(default)]
        mean_re: Vec<f64>,
        #[serde(default)]
        mean_im: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        covariance_re: Option<Vec<Vec<f64>>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        covariance_im: Option<Vec<Vec<f64>>>,
    },
    Sphere {
        radius: f64,
    },
    Mixture {
        components: Vec<ComponentLiteral>,
    },
    /// Equal-weight mixture of `count` point masses drawn uniformly from the
    /// sphere of the given radius (seeded).
    RandomDeltas {
        count: usize,
        #[serde(default = "one")]
        radius: f64,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentLiteral {
    pub weight: f64,
    pub state: DistributionLiteral,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Relative Frobenius deviation accepted by `classical-vs-quantum`.
    pub deviation: f64,
    /// Absolute distance for `state-equivalence`; `None` uses the
    /// standard-error based default.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub equivalence: Option<f64>,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { deviation: 1e-6, equivalence: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpsilonBlock {
    pub values: Vec<f64>,
    pub t_end: f64,
}

impl Default for EpsilonBlock {
    fn default() -> Self {
        Self { values: vec![0.2, 0.1, 0.05, 0.025], t_end: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoherenceBlock {
    pub lambda: f64,
    pub tau: f64,
    pub modes: usize,
    pub runs: usize,
    pub t_end: f64,
    pub report_points: usize,
    pub evolution: Evolution,
    pub max_resamples: u32,
    pub magnus: MagnusConfig,
    pub frame: FrameConfig,
}

impl Default for DecoherenceBlock {
    fn default() -> Self {
        let d = DecoherenceConfig::default();
        Self {
            lambda: d.process.lambda,
            tau: d.process.tau,
            modes: d.process.modes,
            runs: d.runs,
            t_end: d.t_end,
            report_points: d.report_points,
            evolution: d.evolution,
            max_resamples: d.max_resamples,
            magnus: d.magnus,
            frame: d.frame,
        }
    }
}

impl DecoherenceBlock {
    pub fn to_config(&self) -> DecoherenceConfig {
        DecoherenceConfig {
            process: ProcessParams { lambda: self.lambda, tau: self.tau, modes: self.modes },
            runs: self.runs,
            t_end: self.t_end,
            report_points: self.report_points,
            evolution: self.evolution,
            magnus: self.magnus,
            frame: self.frame,
            max_resamples: self.max_resamples,
        }
    }
}

/// One problem found in a config, located by its dotted field path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigIssue {
    pub path: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let path = if self.path.is_empty() { "<root>" } else { &self.path };
        match self.line {
            Some(line) => write!(f, "{path} (line {line}): {}", self.message),
            None => write!(f, "{path}: {}", self.message),
        }
    }
}

fn issue(path: impl Into<String>, message: impl fmt::Display) -> ConfigIssue {
    ConfigIssue { path: path.into(), line: None, message: message.to_string() }
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("invalid configuration:\n{}", .0.iter().map(|i| format!("  {i}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<ConfigIssue>),
    #[error("{stage}: {source}")]
    Numerical { stage: String, source: Error },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl ExperimentError {
    /// 2 for validation failures, 3 for numerical failures, 1 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Invalid(_) => 2,
            ExperimentError::Numerical { .. } => 3,
            ExperimentError::Io { .. } => 1,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            ExperimentError::Invalid(issues) => serde_json::json!({"error": "validation", "issues": issues}),
            ExperimentError::Numerical { stage, source } => {
                serde_json::json!({"error": "numerical", "stage": stage, "message": source.to_string()})
            }
            ExperimentError::Io { path, message } => serde_json::json!({"error": "io", "path": path, "message": message}),
        }
    }
}

fn numerical(stage: &str) -> impl FnOnce(Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Numerical { stage: stage.to_string(), source }
}

/// Parses and fully validates a config.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ExperimentError> {
    let cfg = deserialize(text)?;
    plan(&cfg)?;
    Ok(cfg)
}

fn deserialize(text: &str) -> Result<ExperimentConfig, ExperimentError> {
    let line_of = |span: Option<std::ops::Range<usize>>| span.map(|s| text[..s.start.min(text.len())].lines().count().max(1));
    let de = toml::Deserializer::parse(text).map_err(|e| {
        ExperimentError::Invalid(vec![ConfigIssue { path: String::new(), line: line_of(e.span()), message: e.message().to_string() }])
    })?;
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let path = if path == "." { String::new() } else { path };
        ExperimentError::Invalid(vec![ConfigIssue { path, line: line_of(inner.span()), message: inner.message().to_string() }])
    })
}

/// A validated config turned into library objects.
struct Plan {
    hamiltonian: Option<PolynomialObservable>,
    state: Option<DistributionSpec>,
    state_b: Option<DistributionSpec>,
    times: Vec<f64>,
}

fn plan(cfg: &ExperimentConfig) -> Result<Plan, ExperimentError> {
    let mut issues = Vec::new();
    let n = cfg.n;
    if n == 0 {
        issues.push(issue("n", "must be at least 1"));
    }
    if let Err(e) = cfg.integrator.validate() {
        issues.push(issue("integrator", e));
    }
    for (i, t) in cfg.times.iter().enumerate() {
        if !(t.is_finite() && *t >= 0.0) {
            issues.push(issue(format!("times[{i}]"), "must be finite and >= 0"));
        }
    }
    if !(cfg.tolerances.deviation > 0.0) {
        issues.push(issue("tolerances.deviation", "must be > 0"));
    }

    let hamiltonian = cfg.hamiltonian.as_ref().and_then(|h| match hamiltonian(h, n, cfg.seed) {
        Ok(p) => Some(p),
        Err(mut e) => {
            issues.append(&mut e);
            None
        }
    });
    let mut state_of = |lit: &Option<DistributionLiteral>, path: &str, index: u64| {
        lit.as_ref().and_then(|d| {
            let mut rng = substream(cfg.seed, Domain::Experiment, index);
            match distribution(d, path, n, &mut rng) {
                Ok(spec) => Some(spec),
                Err(mut e) => {
                    issues.append(&mut e);
                    None
                }
            }
        })
    };
    let state = state_of(&cfg.distribution, "distribution", 0);
    let state_b = state_of(&cfg.distribution_b, "distribution_b", 1);

    let needs = |issues: &mut Vec<ConfigIssue>, present: bool, path: &str| {
        if !present {
            issues.push(issue(path, format!("required for experiment `{}`", cfg.experiment)));
        }
    };
    let is_finite_mixture = |s: &DistributionSpec| Ensemble::exact(s).is_ok();
    let needs_ensemble = |issues: &mut Vec<ConfigIssue>, s: &Option<DistributionSpec>, path: &str| {
        if let Some(s) = s {
            if cfg.samples == 0 && !is_finite_mixture(s) {
                issues.push(issue(
                    "samples",
                    format!("{path} is not a finite mixture of point masses; set samples > 0"),
                ));
            }
        }
    };
    let quadratic_only = |issues: &mut Vec<ConfigIssue>| {
        if let Some(h) = &hamiltonian {
            if !h.remainder().is_zero() {
                issues.push(issue("hamiltonian", "must be quadratic for this experiment"));
            }
        }
    };
    let mut times = cfg.times.clone();
    match cfg.experiment {
        ExperimentKind::ClassicalVsQuantum => {
            needs(&mut issues, hamiltonian.is_some() || cfg.hamiltonian.is_some(), "hamiltonian");
            needs(&mut issues, cfg.distribution.is_some(), "distribution");
            needs(&mut issues, !cfg.times.is_empty(), "times");
            needs_ensemble(&mut issues, &state, "distribution");
        }
        ExperimentKind::EpsilonScaling => {
            needs(&mut issues, cfg.hamiltonian.is_some(), "hamiltonian");
            needs(&mut issues, cfg.distribution.is_some(), "distribution");
            needs_ensemble(&mut issues, &state, "distribution");
            let eps = cfg.epsilon.clone().unwrap_or_default();
            if eps.values.is_empty() {
                issues.push(issue("epsilon.values", "must not be empty"));
            }
            for (i, e) in eps.values.iter().enumerate() {
                if !(e.is_finite() && *e > 0.0) {
                    issues.push(issue(format!("epsilon.values[{i}]"), "must be finite and > 0"));
                }
            }
            if !(eps.t_end.is_finite() && eps.t_end >= 0.0) {
                issues.push(issue("epsilon.t_end", "must be finite and >= 0"));
            }
        }
        ExperimentKind::Decoherence => {
            needs(&mut issues, cfg.hamiltonian.is_some(), "hamiltonian");
            needs(&mut issues, cfg.distribution.is_some(), "distribution");
            quadratic_only(&mut issues);
            let block = cfg.decoherence.unwrap_or_default();
            if let Err(e) = block.to_config().validate() {
                issues.push(issue("decoherence", e));
            }
        }
        ExperimentKind::StateEquivalence => {
            needs(&mut issues, cfg.distribution.is_some(), "distribution");
            needs(&mut issues, cfg.distribution_b.is_some(), "distribution_b");
            needs_ensemble(&mut issues, &state, "distribution");
            needs_ensemble(&mut issues, &state_b, "distribution_b");
            if times.is_empty() {
                times.push(0.0);
            }
            needs(&mut issues, times.iter().all(|&t| t == 0.0) || cfg.hamiltonian.is_some(), "hamiltonian");
        }
        ExperimentKind::PureDecomposition => {
            needs(&mut issues, cfg.distribution.is_some(), "distribution");
            if times.is_empty() {
                times.push(0.0);
            }
            needs(&mut issues, times.iter().all(|&t| t == 0.0) || cfg.hamiltonian.is_some(), "hamiltonian");
        }
    }
    if issues.is_empty() {
        Ok(Plan { hamiltonian, state, state_b, times })
    } else {
        Err(ExperimentError::Invalid(issues))
    }
}

fn hamiltonian(lit: &HamiltonianLiteral, n: usize, seed: u64) -> Result<PolynomialObservable, Vec<ConfigIssue>> {
    let mut issues = Vec::new();
    for (i, t) in lit.terms.iter().enumerate() {
        for (name, idx) in [("zbar", &t.zbar), ("z", &t.z)] {
            if idx.len() != n {
                issues.push(issue(format!("hamiltonian.terms[{i}].{name}"), format!("needs {n} exponents, found {}", idx.len())));
            }
        }
    }
    if !issues.is_empty() {
        return Err(issues);
    }
    let explicit = PolynomialObservable::new(
        n,
        lit.terms.iter().map(|t| Monomial::new(Complex64::new(t.re, t.im), t.zbar.clone(), t.z.clone())),
    )
    .map_err(|e| vec![issue("hamiltonian.terms", e)])?;
    let total = match &lit.random {
        Some(r) => {
            let mut rng = substream(seed, Domain::Hamiltonian, 0);
            let max_half = if r.quartic_scale != 0.0 { 2 } else { 1 };
            let random = random_graded(n, r.quadratic_scale, r.quartic_scale, max_half, &mut rng);
            explicit.add(&random).map_err(|e| vec![issue("hamiltonian.random", e)])?
        }
        None => explicit,
    };
    if !total.is_u1_invariant() {
        return Err(vec![issue("hamiltonian", "not U(1)-invariant: every term needs |zbar| = |z|")]);
    }
    Ok(total)
}

fn complex_vector(re: &[f64], im: &[f64], n: usize, path: &str, what: &str) -> Result<Vec<Complex64>, Vec<ConfigIssue>> {
    let mut issues = Vec::new();
    if re.len() != n {
        issues.push(issue(format!("{path}.{what}_re").replace("._re", ".re"), format!("needs {n} entries, found {}", re.len())));
    }
    if !im.is_empty() && im.len() != n {
        issues.push(issue(format!("{path}.{what}_im").replace("._im", ".im"), format!("needs {n} entries, found {}", im.len())));
    }
    if !issues.is_empty() {
        return Err(issues);
    }
    Ok((0..n).map(|a| Complex64::new(re[a], im.get(a).copied().unwrap_or(0.0))).collect())
}

fn distribution<R: Rng>(lit: &DistributionLiteral, path: &str, n: usize, rng: &mut R) -> Result<DistributionSpec, Vec<ConfigIssue>> {
    let spec = match lit {
        DistributionLiteral::Delta { re, im } => {
            DistributionSpec::Delta(PhasePoint(complex_vector(re, im, n, path, "")?))
        }
        DistributionLiteral::Gaussian { mean_re, mean_im, covariance_re, covariance_im } => {
            let mean = if mean_re.is_empty() && mean_im.is_empty() {
                vec![Complex64::default(); n]
            } else {
                complex_vector(mean_re, mean_im, n, path, "mean")?
            };
            let square = |m: &Option<Vec<Vec<f64>>>, name: &str| -> Result<Option<CMatrix>, Vec<ConfigIssue>> {
                match m {
                    None => Ok(None),
                    Some(rows) if rows.len() == n && rows.iter().all(|r| r.len() == n) => {
                        Ok(Some(CMatrix::from_fn(n, n, |a, b| Complex64::new(rows[a][b], 0.0))))
                    }
                    Some(_) => Err(vec![issue(format!("{path}.{name}"), format!("must be {n} x {n}"))]),
                }
            };
            let re = square(covariance_re, "covariance_re")?;
            let im = square(covariance_im, "covariance_im")?;
            let cov = match (re, im) {
                (None, None) => CMatrix::identity(n, n),
                (r, i) => r.unwrap_or_else(|| CMatrix::zeros(n, n)) + i.unwrap_or_else(|| CMatrix::zeros(n, n)) * crate::linalg::I,
            };
            let covariance =
                HermitianMatrix::new(cov).map_err(|e| vec![issue(format!("{path}.covariance_re"), e)])?;
            DistributionSpec::ComplexGaussian { mean, covariance }
        }
        DistributionLiteral::Sphere { radius } => DistributionSpec::UniformSphere { dim: n, radius: *radius },
        DistributionLiteral::Mixture { components } => {
            let mut parts = Vec::with_capacity(components.len());
            let mut issues = Vec::new();
            for (i, c) in components.iter().enumerate() {
                match distribution(&c.state, &format!("{path}.components[{i}].state"), n, rng) {
                    Ok(s) => parts.push((c.weight, s)),
                    Err(mut e) => issues.append(&mut e),
                }
            }
            if !issues.is_empty() {
                return Err(issues);
            }
            let total: f64 = components.iter().map(|c| c.weight).sum();
            if components.iter().any(|c| !(c.weight >= 0.0)) {
                return Err(vec![issue(format!("{path}.components"), "weights must be >= 0")]);
            }
            if (total - 1.0).abs() > 1e-9 {
                return Err(vec![issue(format!("{path}.components"), format!("weights sum to {total}, not 1"))]);
            }
            DistributionSpec::Mixture(parts)
        }
        DistributionLiteral::RandomDeltas { count, radius } => {
            if *count == 0 {
                return Err(vec![issue(format!("{path}.count"), "must be >= 1")]);
            }
            let sphere = DistributionSpec::UniformSphere { dim: n, radius: *radius };
            sphere.validate().map_err(|e| vec![issue(format!("{path}.radius"), e)])?;
            let draws = sample(&sphere, *count, rng.random()).map_err(|e| vec![issue(path, e)])?;
            let w = 1.0 / *count as f64;
            DistributionSpec::Mixture(draws.points().iter().map(|p| (w, DistributionSpec::Delta(p.clone()))).collect())
        }
    };
    spec.validate().map_err(|e| vec![issue(path, e)])?;
    Ok(spec)
}

/// A named output file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub sha256: String,
    pub bytes: usize,
}

/// Written last; lists every other artifact with its hash. Contains no
/// timings or host details so that reruns are byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub config_sha256: String,
    pub config: serde_json::Value,
    pub artifacts: Vec<ManifestEntry>,
}

pub const MANIFEST: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Floats with 17 significant digits; `None` becomes an empty cell.
pub fn csv(header: &[String], rows: &[Vec<Option<f64>>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|c| c.map(|x| format!("{x:.16e}")).unwrap_or_default()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

fn json_artifact(name: &str, value: &impl Serialize) -> Artifact {
    let mut bytes = serde_json::to_vec_pretty(value).expect("artifact types serialize");
    bytes.push(b'\n');
    Artifact { name: name.to_string(), bytes }
}

fn csv_artifact(name: &str, header: &[&str], rows: &[Vec<Option<f64>>]) -> Artifact {
    let header: Vec<String> = header.iter().map(|s| s.to_string()).collect();
    Artifact { name: name.to_string(), bytes: csv(&header, rows).into_bytes() }
}

fn ensemble_of(spec: &DistributionSpec, samples: usize, seed: u64) -> Result<Ensemble, Error> {
    if samples == 0 {
        Ensemble::exact(spec)
    } else {
        sample(spec, samples, seed)
    }
}

fn relative_distance(a: &KMatrix, b: &KMatrix) -> f64 {
    frobenius(&(a.operator() - b.operator())) / frobenius(b.operator()).max(f64::MIN_POSITIVE)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeviationRow {
    pub time: f64,
    /// `‖K_classical − K_quantum‖_F / ‖K_quantum‖_F`.
    pub deviation: f64,
    pub classical: KMatrixJson,
    pub quantum: KMatrixJson,
}

/// Moment matrix of the classically evolved ensemble against the quantum
/// evolution of the initial moment matrix under the quadratic part of `h`.
pub fn classical_vs_quantum(
    e: &Ensemble,
    h: &PolynomialObservable,
    times: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Vec<DeviationRow>, Error> {
    let k0 = moment_matrix(e);
    let quad = h.quadratic_part()?;
    times
        .iter()
        .map(|&t| {
            let classical = moment_matrix(&evolve_ensemble(e, h, t, cfg)?);
            let quantum = evolve_k(&k0, &quad, t)?;
            Ok(DeviationRow {
                time: t,
                deviation: relative_distance(&classical, &quantum),
                classical: classical.to_json(),
                quantum: quantum.to_json(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpsilonRow {
    pub epsilon: f64,
    pub time: f64,
    pub deviation: f64,
    /// Previous row's deviation divided by this one.
    pub ratio: Option<f64>,
}

/// The state `e` lives at unit scale in `z`; the physical state is
/// `u = √ε z`. The flow of `h` in `u` is the flow of `H(√ε z)/ε` in `z`,
/// whose quadratic part is that of `h` and whose quartic part is scaled by
/// `ε`. Reports the relative distance between the classical `K` at `t_end`
/// and the quadratic quantum oracle, both in `z` units.
pub fn epsilon_scaling(
    e: &Ensemble,
    h: &PolynomialObservable,
    epsilons: &[f64],
    t_end: f64,
    cfg: &IntegratorConfig,
) -> Result<Vec<EpsilonRow>, Error> {
    let quantum = evolve_k(&moment_matrix(e), &h.quadratic_part()?, t_end)?;
    let mut rows: Vec<EpsilonRow> = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let g = rescaled_generator(h, eps)?;
        let classical = moment_matrix(&evolve_ensemble(e, &g, t_end, cfg)?);
        let deviation = relative_distance(&classical, &quantum);
        let ratio = rows.last().map(|r| r.deviation / deviation);
        rows.push(EpsilonRow { epsilon: eps, time: t_end, deviation, ratio });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EquivalenceRow {
    pub time: f64,
    #[serde(flatten)]
    pub outcome: Equivalence,
    pub k_a: KMatrixJson,
    pub k_b: KMatrixJson,
}

/// Compares two ensembles through their moment matrices, after evolving both
/// under `h` to each time.
pub fn state_equivalence(
    a: &Ensemble,
    b: &Ensemble,
    h: Option<&PolynomialObservable>,
    times: &[f64],
    tol: Option<f64>,
    cfg: &IntegratorConfig,
) -> Result<Vec<EquivalenceRow>, Error> {
    times
        .iter()
        .map(|&t| {
            let (ea, eb) = match h {
                Some(h) if t > 0.0 => (evolve_ensemble(a, h, t, cfg)?, evolve_ensemble(b, h, t, cfg)?),
                _ => (a.clone(), b.clone()),
            };
            let (ka, kb) = (moment_matrix(&ea), moment_matrix(&eb));
            Ok(EquivalenceRow { time: t, outcome: compare_moments(&ka, &kb, tol)?, k_a: ka.to_json(), k_b: kb.to_json() })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecompositionRow {
    pub time: f64,
    pub k: KMatrixJson,
    pub density: DensityMatrixJson,
    pub mixture: PureStateMixtureJson,
}

/// Pure-state decomposition of `K̂(t)` evolved by the quantum oracle under
/// the quadratic part of `h`.
pub fn decomposition_series(
    k0: &KMatrix,
    h: Option<&PolynomialObservable>,
    times: &[f64],
) -> Result<Vec<DecompositionRow>, Error> {
    let quad = match h {
        Some(h) => Some(h.quadratic_part()?),
        None => None,
    };
    times
        .iter()
        .map(|&t| {
            let k = match &quad {
                Some(q) if t > 0.0 => evolve_k(k0, q, t)?,
                _ => k0.clone(),
            };
            Ok(DecompositionRow {
                time: t,
                density: normalize_density(&k)?.to_json(),
                mixture: pure_state_decomposition(&k)?.to_json(),
                k: k.to_json(),
            })
        })
        .collect()
}

/// Second seed for the second state of `state-equivalence`, so the two
/// samples do not share substreams.
fn seed_b(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

fn initial_moment(spec: &DistributionSpec, samples: usize, seed: u64) -> Result<KMatrix, Error> {
    if samples == 0 {
        KMatrix::from_operator(spec.exact_moment())
    } else {
        Ok(moment_matrix(&sample(spec, samples, seed)?))
    }
}

fn pair_labels(n: usize, prefix: &str) -> Vec<String> {
    (0..n).flat_map(|a| (a + 1..n).map(move |b| format!("{prefix}{}{}", a + 1, b + 1))).collect()
}

/// Runs the pipeline and returns the result artifacts followed by the
/// manifest, without touching the file system.
pub fn render(cfg: &ExperimentConfig, config_text: &str) -> Result<Vec<Artifact>, ExperimentError> {
    let plan = plan(cfg)?;
    let started = std::time::Instant::now();
    let mut artifacts = Vec::new();
    let ic = &cfg.integrator;
    match cfg.experiment {
        ExperimentKind::ClassicalVsQuantum => {
            let h = plan.hamiltonian.as_ref().expect("validated");
            let e = ensemble_of(plan.state.as_ref().expect("validated"), cfg.samples, cfg.seed)
                .map_err(numerical("sampling"))?;
            let rows = classical_vs_quantum(&e, h, &plan.times, ic).map_err(numerical("classical-vs-quantum"))?;
            let max = rows.iter().map(|r| r.deviation).fold(0.0, f64::max);
            artifacts.push(json_artifact(
                "result.json",
                &serde_json::json!({
                    "max_deviation": max,
                    "tolerance": cfg.tolerances.deviation,
                    "within_tolerance": max <= cfg.tolerances.deviation,
                    "rows": rows,
                }),
            ));
            let data: Vec<_> = rows
                .iter()
                .map(|r| vec![Some(r.time), Some(r.deviation), Some(r.classical.trace), Some(r.quantum.trace)])
                .collect();
            artifacts.push(csv_artifact("series.csv", &["time", "dev_frobenius", "tr_K_classical", "tr_K_quantum"], &data));
        }
        ExperimentKind::EpsilonScaling => {
            let h = plan.hamiltonian.as_ref().expect("validated");
            let e = ensemble_of(plan.state.as_ref().expect("validated"), cfg.samples, cfg.seed)
                .map_err(numerical("sampling"))?;
            let block = cfg.epsilon.clone().unwrap_or_default();
            let rows = epsilon_scaling(&e, h, &block.values, block.t_end, ic).map_err(numerical("epsilon-scaling"))?;
            artifacts.push(json_artifact("result.json", &serde_json::json!({ "rows": rows })));
            let data: Vec<_> =
                rows.iter().map(|r| vec![Some(r.time), Some(r.epsilon), Some(r.deviation), r.ratio]).collect();
            artifacts.push(csv_artifact("series.csv", &["time", "epsilon", "dev_frobenius", "ratio_previous"], &data));
        }
        ExperimentKind::Decoherence => {
            let h = plan.hamiltonian.as_ref().expect("validated");
            let base = h.quadratic_part().map_err(numerical("hamiltonian"))?;
            let k0 = initial_moment(plan.state.as_ref().expect("validated"), cfg.samples, cfg.seed)
                .map_err(numerical("initial state"))?;
            let dc = cfg.decoherence.unwrap_or_default().to_config();
            let report = decoherence_experiment(&k0, &base, &dc, cfg.seed).map_err(numerical("decoherence"))?;
            artifacts.push(json_artifact("result.json", &report));
            let mut header = vec!["time".to_string(), "tr_Kbar".to_string()];
            header.extend(pair_labels(cfg.n, "absKbar_"));
            let data: Vec<_> = report
                .times
                .iter()
                .zip(&report.trace)
                .zip(&report.decay)
                .map(|((t, tr), d)| [Some(*t), Some(*tr)].into_iter().chain(d.iter().map(|x| Some(*x))).collect())
                .collect();
            artifacts.push(Artifact { name: "decay.csv".into(), bytes: csv(&header, &data).into_bytes() });
        }
        ExperimentKind::StateEquivalence => {
            let a = ensemble_of(plan.state.as_ref().expect("validated"), cfg.samples, cfg.seed)
                .map_err(numerical("sampling"))?;
            let b = ensemble_of(plan.state_b.as_ref().expect("validated"), cfg.samples, seed_b(cfg.seed))
                .map_err(numerical("sampling"))?;
            let rows = state_equivalence(&a, &b, plan.hamiltonian.as_ref(), &plan.times, cfg.tolerances.equivalence, ic)
                .map_err(numerical("state-equivalence"))?;
            artifacts.push(json_artifact("result.json", &serde_json::json!({ "rows": rows })));
            let data: Vec<_> = rows
                .iter()
                .map(|r| {
                    let eq = if r.outcome.equivalent { 1.0 } else { 0.0 };
                    vec![Some(r.time), Some(r.outcome.distance), Some(r.outcome.tolerance), Some(eq)]
                })
                .collect();
            artifacts.push(csv_artifact("series.csv", &["time", "distance", "tolerance", "equivalent"], &data));
        }
        ExperimentKind::PureDecomposition => {
            let k0 = initial_moment(plan.state.as_ref().expect("validated"), cfg.samples, cfg.seed)
                .map_err(numerical("initial state"))?;
            let rows = decomposition_series(&k0, plan.hamiltonian.as_ref(), &plan.times)
                .map_err(numerical("pure-decomposition"))?;
            artifacts.push(json_artifact("result.json", &serde_json::json!({ "rows": rows })));
            let mut header = vec!["time".to_string(), "tr_K".to_string(), "hbar".to_string()];
            header.extend((1..=cfg.n).map(|i| format!("w_{i}")));
            let data: Vec<_> = rows
                .iter()
                .map(|r| {
                    [Some(r.time), Some(r.k.trace), Some(r.density.hbar)]
                        .into_iter()
                        .chain(r.mixture.components.iter().map(|c| Some(c.weight)))
                        .collect()
                })
                .collect();
            artifacts.push(Artifact { name: "series.csv".into(), bytes: csv(&header, &data).into_bytes() });
        }
    }
    log::info!("{} finished in {:.3?}", cfg.experiment, started.elapsed());

    let manifest = Manifest {
        tool: TOOL.to_string(),
        version: VERSION.to_string(),
        experiment: cfg.experiment,
        seed: cfg.seed,
        config_sha256: sha256_hex(config_text.as_bytes()),
        config: serde_json::to_value(cfg).expect("config serializes"),
        artifacts: artifacts
            .iter()
            .map(|a| ManifestEntry { file: a.name.clone(), sha256: sha256_hex(&a.bytes), bytes: a.bytes.len() })
            .collect(),
    };
    artifacts.push(json_artifact(MANIFEST, &manifest));
    Ok(artifacts)
}

/// Renders the experiment and writes every artifact into `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, config_text: &str, out_dir: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
    let artifacts = render(cfg, config_text)?;
    let io = |path: &Path, e: std::io::Error| ExperimentError::Io { path: path.display().to_string(), message: e.to_string() };
    fs::create_dir_all(out_dir).map_err(|e| io(out_dir, e))?;
    let mut written = Vec::with_capacity(artifacts.len());
    for a in &artifacts {
        let path = out_dir.join(&a.name);
        fs::write(&path, &a.bytes).map_err(|e| io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
