//! Experiment configuration files (TOML).
//!
//! ```toml
//! dimension = 2
//! alphabet = ["I", "X", "Y", "Z"]      # optional; checked against the fibers
//! output = "results"                   # relative to the config file
//!
//! [environment]
//! kind = "markov"                      # constant | periodic | quasiperiodic | iid | markov
//! transition = [[0.8, 0.2], [0.3, 0.7]]
//! stationary = [0.6, 0.4]              # optional, checked
//!
//! [[environment.fibers]]               # one per symbol (one base set on the circle)
//! preset = "depolarizing"
//! p = 0.4
//!
//! [[environment.fibers]]
//! ops = [ { label = "0", re = [[1, 0], [0, 0]] }, { label = "1", re = [[0, 0], [0, 1]] } ]
//! rotation = { axis = "x", angle = 0.3 }
//!
//! [initial_state]
//! kind = "pure"                        # maximally_mixed | pure | matrix
//! index = 0
//!
//! [experiment]
//! kind = "lln"
//! seed = 7
//! steps = 5000
//! ```
//!
//! Fiber presets: `identity`, `projective`, `depolarizing` (`p`),
//! `amplitude_damping` (`gamma`), `diagonal_measurement` (`weights`).
//! Complex matrices are given as `re` and optional `im` arrays of rows.
//! A fiber may be pre-multiplied by `rotation = { axis, angle }` (qubits) or
//! `unitary = { re, im }`.
//!
//! Circle environments take `alpha` (default `(√5 − 1)/2`), a registered
//! `family` (`phase`, `spin_x`) and `params = [coupling]`.

use std::fmt;
use std::path::{Path, PathBuf};

use dqtraj::channels::{kraus_validate, qubit_rotation, KrausSet};
use dqtraj::environment::{EnvSystem, ParametricFamily};
use dqtraj::matrix::{CMatrix, QuantumState};
use serde::Deserialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Every problem found in a configuration file.
#[derive(Debug, Error)]
pub struct ConfigErrors {
    pub path: PathBuf,
    pub errors: Vec<String>,
}

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config {}: {} error(s)", self.path.display(), self.errors.len())?;
        for e in &self.errors {
            write!(f, "\n  - {e}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    dimension: usize,
    alphabet: Option<Vec<String>>,
    output: Option<PathBuf>,
    environment: RawEnvironment,
    initial_state: Option<RawState>,
    #[serde(default)]
    experiment: RawExperiment,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEnvironment {
    kind: String,
    alpha: Option<f64>,
    family: Option<String>,
    params: Option<Vec<f64>>,
    weights: Option<Vec<f64>>,
    transition: Option<Vec<Vec<f64>>>,
    stationary: Option<Vec<f64>>,
    #[serde(default)]
    fibers: Vec<RawFiber>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFiber {
    preset: Option<String>,
    p: Option<f64>,
    gamma: Option<f64>,
    weights: Option<Vec<Vec<f64>>>,
    ops: Option<Vec<RawOp>>,
    rotation: Option<RawRotation>,
    unitary: Option<RawMatrix>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOp {
    label: Option<String>,
    re: Vec<Vec<f64>>,
    im: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMatrix {
    re: Vec<Vec<f64>>,
    im: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRotation {
    axis: char,
    angle: f64,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RawState {
    pub kind: String,
    pub index: Option<usize>,
    pub re: Option<Vec<Vec<f64>>>,
    pub im: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExperiment {
    kind: Option<String>,
    seed: Option<u64>,
    steps: Option<usize>,
    trajectories: Option<usize>,
    patterns: Option<Vec<Vec<String>>>,
    word: Option<Vec<String>>,
    start: Option<usize>,
    event: Option<Vec<usize>>,
    n_max: Option<usize>,
    tol: Option<f64>,
    stationary_n_max: Option<usize>,
    anchors: Option<usize>,
    seeds: Option<usize>,
    orbit_len: Option<usize>,
    omega_mode: Option<String>,
    omega_samples: Option<usize>,
    thetas: Option<Vec<RawState>>,
    z_crit: Option<f64>,
    allow_unconverged: Option<bool>,
    require_certified: Option<bool>,
    shift_n: Option<usize>,
    instances: Option<usize>,
    integration: Option<String>,
    mc_samples: Option<usize>,
    target_samples: Option<usize>,
    from_stationary: Option<bool>,
}

/// The experiments a configuration can run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExperimentKind {
    Validate,
    Simulate,
    Stationary,
    Certify,
    Lln,
    AnnealedLln,
    QuenchedErg,
    ShiftCheck,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 8] = [
        ExperimentKind::Validate,
        ExperimentKind::Simulate,
        ExperimentKind::Stationary,
        ExperimentKind::Certify,
        ExperimentKind::Lln,
        ExperimentKind::AnnealedLln,
        ExperimentKind::QuenchedErg,
        ExperimentKind::ShiftCheck,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Validate => "validate",
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::Stationary => "stationary",
            ExperimentKind::Certify => "certify",
            ExperimentKind::Lln => "lln",
            ExperimentKind::AnnealedLln => "annealed-lln",
            ExperimentKind::QuenchedErg => "quenched-erg",
            ExperimentKind::ShiftCheck => "shift-check",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OmegaChoice {
    Resample,
    Fixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IntegrationChoice {
    Exact,
    Mc,
}

/// Numeric knobs, with defaults filled in.
#[derive(Clone, Debug)]
pub struct Knobs {
    pub seed: u64,
    pub steps: usize,
    pub trajectories: usize,
    /// Patterns as label indices.
    pub patterns: Vec<Vec<usize>>,
    pub word: Vec<usize>,
    pub start: usize,
    /// Symbols allowed at coordinate 0 for annealed sets.
    pub event: Option<Vec<usize>>,
    pub n_max: usize,
    pub tol: Option<f64>,
    pub stationary_n_max: usize,
    pub anchors: usize,
    pub seeds: usize,
    pub orbit_len: usize,
    pub omega_mode: OmegaChoice,
    pub omega_samples: usize,
    pub thetas: Vec<QuantumState>,
    pub z_crit: Option<f64>,
    pub allow_unconverged: bool,
    pub require_certified: bool,
    pub shift_n: usize,
    pub instances: usize,
    pub integration: IntegrationChoice,
    pub mc_samples: usize,
    pub target_samples: usize,
    /// Start the annealed verifier from the stationary state instead.
    pub from_stationary: bool,
}

/// A fully validated configuration.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub path: PathBuf,
    /// SHA-256 of the file bytes, hex encoded.
    pub hash: String,
    pub dimension: usize,
    pub env: EnvSystem,
    pub initial: QuantumState,
    pub kind: Option<ExperimentKind>,
    pub knobs: Knobs,
    pub output: PathBuf,
}

fn matrix(re: &[Vec<f64>], im: Option<&[Vec<f64>]>, dim: usize, what: &str) -> Result<CMatrix, String> {
    let m = CMatrix::from_re_im(re, im).map_err(|e| format!("{what}: {e}"))?;
    if m.dim() != dim {
        return Err(format!("{what}: expected {dim}x{dim}, got {}x{}", m.dim(), m.dim()));
    }
    Ok(m)
}

fn build_fiber(raw: &RawFiber, dim: usize, index: usize) -> Result<KrausSet, String> {
    let what = format!("fiber {index}");
    let base = match (&raw.preset, &raw.ops) {
        (Some(_), Some(_)) => return Err(format!("{what}: give either `preset` or `ops`, not both")),
        (None, None) => return Err(format!("{what}: needs `preset` or `ops`")),
        (None, Some(ops)) => {
            let mats = ops
                .iter()
                .enumerate()
                .map(|(a, op)| matrix(&op.re, op.im.as_deref(), dim, &format!("{what} op {a}")))
                .collect::<Result<Vec<_>, _>>()?;
            let labels: Vec<String> =
                ops.iter().enumerate().map(|(a, op)| op.label.clone().unwrap_or_else(|| a.to_string())).collect();
            KrausSet::new(labels, mats).map_err(|e| format!("{what}: {e}"))?
        }
        (Some(name), None) => {
            let k = match name.as_str() {
                "identity" => Ok(KrausSet::identity(dim)),
                "projective" => Ok(KrausSet::projective(dim)),
                "depolarizing" => KrausSet::depolarizing(raw.p.ok_or(format!("{what}: depolarizing needs `p`"))?),
                "amplitude_damping" => {
                    KrausSet::amplitude_damping(raw.gamma.ok_or(format!("{what}: amplitude_damping needs `gamma`"))?)
                }
                "diagonal_measurement" => KrausSet::diagonal_measurement(
                    raw.weights.as_deref().ok_or(format!("{what}: diagonal_measurement needs `weights`"))?,
                ),
                other => return Err(format!("{what}: unknown preset `{other}`")),
            }
            .map_err(|e| format!("{what}: {e}"))?;
            if k.dim() != dim {
                return Err(format!("{what}: preset `{name}` has dimension {}, config says {dim}", k.dim()));
            }
            k
        }
    };
    let mut k = base;
    if let Some(r) = &raw.rotation {
        if dim != 2 {
            return Err(format!("{what}: `rotation` is only defined for qubits"));
        }
        let u = qubit_rotation(r.axis, r.angle).map_err(|e| format!("{what}: {e}"))?;
        k = k.premultiply(&u).map_err(|e| format!("{what}: {e}"))?;
    }
    if let Some(u) = &raw.unitary {
        let u = matrix(&u.re, u.im.as_deref(), dim, &format!("{what} unitary"))?;
        let defect = (&(&u.adjoint() * &u) - &CMatrix::identity(dim)).max_abs_diff(&CMatrix::zeros(dim));
        if defect > 1e-10 {
            return Err(format!("{what}: `unitary` is not unitary (defect {defect:e})"));
        }
        k = k.premultiply(&u).map_err(|e| format!("{what}: {e}"))?;
    }
    let report = kraus_validate(&k);
    if !report.pass {
        return Err(format!("{what}: sum of v†v differs from the identity (residual {:e})", report.residual));
    }
    Ok(k)
}

/// Builds a state of dimension `dim`.
pub fn build_state(raw: &RawState, dim: usize, what: &str) -> Result<QuantumState, String> {
    match raw.kind.as_str() {
        "maximally_mixed" => Ok(QuantumState::maximally_mixed(dim)),
        "pure" => {
            let i = raw.index.ok_or(format!("{what}: pure state needs `index`"))?;
            QuantumState::pure_basis(dim, i).map_err(|e| format!("{what}: {e}"))
        }
        "matrix" => {
            let re = raw.re.as_ref().ok_or(format!("{what}: matrix state needs `re`"))?;
            let m = matrix(re, raw.im.as_deref(), dim, what)?;
            QuantumState::new(m).map_err(|e| format!("{what}: {e}"))
        }
        other => Err(format!("{what}: unknown state kind `{other}`")),
    }
}

fn build_env(raw: &RawEnvironment, fibers: Vec<KrausSet>, errors: &mut Vec<String>) -> Option<EnvSystem> {
    let unexpected = |name: &str, present: bool, errors: &mut Vec<String>| {
        if present {
            errors.push(format!("environment: `{name}` does not apply to kind `{}`", raw.kind));
        }
    };
    let single = |fibers: Vec<KrausSet>, errors: &mut Vec<String>| -> Option<KrausSet> {
        if fibers.len() != 1 {
            errors.push(format!("environment: kind `{}` needs exactly one fiber, got {}", raw.kind, fibers.len()));
            return None;
        }
        fibers.into_iter().next()
    };
    let result = match raw.kind.as_str() {
        "constant" => {
            unexpected("transition", raw.transition.is_some(), errors);
            unexpected("weights", raw.weights.is_some(), errors);
            single(fibers, errors).map(EnvSystem::constant)
        }
        "periodic" => Some(EnvSystem::periodic(fibers)),
        "iid" => match &raw.weights {
            Some(w) => Some(EnvSystem::iid(w.clone(), fibers)),
            None => {
                errors.push("environment: iid needs `weights`".into());
                None
            }
        },
        "markov" => match &raw.transition {
            Some(p) => Some(EnvSystem::markov(p.clone(), fibers, raw.stationary.clone())),
            None => {
                errors.push("environment: markov needs `transition`".into());
                None
            }
        },
        "quasiperiodic" => {
            let family = match raw.family.as_deref().map(ParametricFamily::from_name) {
                Some(Ok(f)) => Some(f),
                Some(Err(e)) => {
                    errors.push(e.to_string());
                    None
                }
                None => {
                    errors.push("environment: quasiperiodic needs `family`".into());
                    None
                }
            };
            let coupling = match raw.params.as_deref() {
                None => 1.0,
                Some([c]) => *c,
                Some(other) => {
                    errors.push(format!("environment: `params` takes one coupling, got {}", other.len()));
                    1.0
                }
            };
            let base = single(fibers, errors);
            match (family, base) {
                (Some(f), Some(b)) => Some(EnvSystem::quasiperiodic(raw.alpha, f, coupling, b)),
                _ => None,
            }
        }
        other => {
            errors.push(format!(
                "environment: unknown kind `{other}` (constant, periodic, quasiperiodic, iid, markov)"
            ));
            None
        }
    };
    match result {
        Some(Ok(env)) => Some(env),
        Some(Err(e)) => {
            errors.push(e.to_string());
            None
        }
        None => None,
    }
}

fn labels_to_indices(labels: &[String], alphabet: &[String], what: &str, errors: &mut Vec<String>) -> Vec<usize> {
    labels
        .iter()
        .filter_map(|l| match alphabet.iter().position(|a| a == l) {
            Some(i) => Some(i),
            None => {
                errors.push(format!("{what}: label `{l}` is not in the alphabet {alphabet:?}"));
                None
            }
        })
        .collect()
}

fn positive(name: &str, v: Option<usize>, default: usize, errors: &mut Vec<String>) -> usize {
    match v {
        Some(0) => {
            errors.push(format!("experiment: `{name}` must be positive"));
            default
        }
        Some(x) => x,
        None => default,
    }
}

fn build_knobs(raw: &RawExperiment, env: Option<&EnvSystem>, dim: usize, errors: &mut Vec<String>) -> Knobs {
    let alphabet: Vec<String> = env.map(|e| e.alphabet().to_vec()).unwrap_or_default();
    let patterns = match &raw.patterns {
        Some(ps) => {
            if ps.iter().any(|p| p.is_empty()) {
                errors.push("experiment: patterns must be non-empty".into());
            }
            ps.iter().map(|p| labels_to_indices(p, &alphabet, "experiment.patterns", errors)).collect()
        }
        None => (0..alphabet.len()).map(|a| vec![a]).collect(),
    };
    let word = match &raw.word {
        Some(w) if w.is_empty() => {
            errors.push("experiment: `word` must be non-empty".into());
            vec![0]
        }
        Some(w) => labels_to_indices(w, &alphabet, "experiment.word", errors),
        None => vec![0],
    };
    if let (Some(ev), Some(k)) = (&raw.event, env.and_then(|e| e.num_symbols())) {
        if let Some(bad) = ev.iter().find(|&&s| s >= k) {
            errors.push(format!("experiment: event symbol {bad} out of range (environment has {k} symbols)"));
        }
    }
    if raw.event.is_some() && env.is_some_and(|e| !e.is_finite()) {
        errors.push("experiment: `event` needs a finite environment".into());
    }
    let omega_mode = match raw.omega_mode.as_deref() {
        None | Some("resample") => OmegaChoice::Resample,
        Some("fixed") => OmegaChoice::Fixed,
        Some(other) => {
            errors.push(format!("experiment: unknown omega_mode `{other}` (resample, fixed)"));
            OmegaChoice::Resample
        }
    };
    let integration = match raw.integration.as_deref() {
        None | Some("exact") => IntegrationChoice::Exact,
        Some("mc") => IntegrationChoice::Mc,
        Some(other) => {
            errors.push(format!("experiment: unknown integration `{other}` (exact, mc)"));
            IntegrationChoice::Exact
        }
    };
    let thetas = match &raw.thetas {
        Some(ts) => ts
            .iter()
            .enumerate()
            .filter_map(|(i, t)| build_state(t, dim, &format!("experiment.thetas[{i}]")).map_err(|e| errors.push(e)).ok())
            .collect(),
        None => match QuantumState::pure_basis(dim, 0) {
            Ok(p) => vec![p, QuantumState::maximally_mixed(dim)],
            Err(_) => vec![QuantumState::maximally_mixed(dim)],
        },
    };
    if let Some(t) = raw.tol {
        if t.is_nan() || t <= 0.0 {
            errors.push("experiment: `tol` must be positive".into());
        }
    }
    if let Some(z) = raw.z_crit {
        if z.is_nan() || z <= 0.0 {
            errors.push("experiment: `z_crit` must be positive".into());
        }
    }
    let anchors = positive("anchors", raw.anchors, 4, errors);
    let seeds = positive("seeds", raw.seeds, 4, errors);
    if anchors < 2 || seeds < 2 {
        errors.push("experiment: `anchors` and `seeds` must be at least 2".into());
    }
    let trajectories = positive("trajectories", raw.trajectories, 100, errors);
    Knobs {
        seed: raw.seed.unwrap_or(0),
        steps: positive("steps", raw.steps, 1000, errors),
        trajectories,
        patterns,
        word,
        start: positive("start", raw.start, 1, errors),
        event: raw.event.clone(),
        n_max: positive("n_max", raw.n_max, 1000, errors),
        tol: raw.tol,
        stationary_n_max: positive("stationary_n_max", raw.stationary_n_max, 1 << 16, errors),
        anchors,
        seeds,
        orbit_len: raw.orbit_len.unwrap_or(8),
        omega_mode,
        omega_samples: positive("omega_samples", raw.omega_samples, 3, errors),
        thetas,
        z_crit: raw.z_crit,
        allow_unconverged: raw.allow_unconverged.unwrap_or(false),
        require_certified: raw.require_certified.unwrap_or(true),
        shift_n: raw.shift_n.unwrap_or(3),
        instances: positive("instances", raw.instances, 10, errors),
        integration,
        mc_samples: positive("mc_samples", raw.mc_samples, 4096, errors),
        target_samples: positive("target_samples", raw.target_samples, 256, errors),
        from_stationary: raw.from_stationary.unwrap_or(false),
    }
}

/// Parses and validates a configuration file, reporting every problem found.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigErrors> {
    let fail = |errors: Vec<String>| ConfigErrors { path: path.to_path_buf(), errors };
    let bytes = std::fs::read(path).map_err(|e| fail(vec![format!("cannot read file: {e}")]))?;
    let hash = hex::encode(Sha256::digest(&bytes));
    let text = String::from_utf8(bytes).map_err(|_| fail(vec!["file is not UTF-8".into()]))?;
    let raw: RawConfig = toml::from_str(&text).map_err(|e| fail(vec![format!("parse error: {e}")]))?;

    let mut errors = Vec::new();
    let dim = raw.dimension;
    if dim == 0 {
        errors.push("`dimension` must be positive".into());
    }
    if raw.environment.fibers.is_empty() {
        errors.push("environment: at least one `[[environment.fibers]]` is required".into());
    }
    let mut fibers = Vec::new();
    for (i, f) in raw.environment.fibers.iter().enumerate() {
        match build_fiber(f, dim.max(1), i) {
            Ok(k) => fibers.push(k),
            Err(e) => errors.push(e),
        }
    }
    if let Some(first) = fibers.first() {
        for (i, k) in fibers.iter().enumerate().skip(1) {
            if k.labels() != first.labels() {
                errors.push(format!("fiber {i}: alphabet {:?} differs from fiber 0 alphabet {:?}", k.labels(), first.labels()));
            }
        }
        if let Some(alpha) = &raw.alphabet {
            if alpha.as_slice() != first.labels() {
                errors.push(format!("`alphabet` {alpha:?} differs from the fiber labels {:?}", first.labels()));
            }
        }
    }
    let env = if errors.is_empty() { build_env(&raw.environment, fibers, &mut errors) } else { None };
    let initial = match &raw.initial_state {
        Some(s) => build_state(s, dim.max(1), "initial_state").map_err(|e| errors.push(e)).ok(),
        None => Some(QuantumState::maximally_mixed(dim.max(1))),
    };
    let kind = match raw.experiment.kind.as_deref() {
        None => None,
        Some(name) => match ExperimentKind::from_name(name) {
            Some(k) => Some(k),
            None => {
                errors.push(format!("experiment: unknown kind `{name}`"));
                None
            }
        },
    };
    let knobs = build_knobs(&raw.experiment, env.as_ref(), dim.max(1), &mut errors);
    if !errors.is_empty() {
        return Err(fail(errors));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let output = base.join(raw.output.unwrap_or_else(|| PathBuf::from("results")));
    Ok(ExperimentConfig {
        path: path.to_path_buf(),
        hash,
        dimension: dim,
        env: env.expect("no errors implies an environment"),
        initial: initial.expect("no errors implies an initial state"),
        kind,
        knobs,
        output,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn load(text: &str) -> Result<ExperimentConfig, ConfigErrors> {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        load_config(f.path())
    }

    const MINIMAL: &str = r#"
dimension = 2
[environment]
kind = "constant"
[[environment.fibers]]
preset = "depolarizing"
p = 0.4
"#;

    #[test]
    fn minimal_constant_config_loads() {
        let c = load(MINIMAL).unwrap();
        assert_eq!(c.env.kind_name(), "constant");
        assert_eq!(c.env.alphabet(), ["I", "X", "Y", "Z"]);
        assert_eq!(c.knobs.patterns.len(), 4);
        assert_eq!(c.hash.len(), 64);
    }

    #[test]
    fn non_stochastic_fiber_names_fiber_and_residual() {
        let err = load(
            r#"
dimension = 2
[environment]
kind = "periodic"
[[environment.fibers]]
preset = "projective"
[[environment.fibers]]
ops = [ { re = [[1, 0], [0, 1]] }, { re = [[0, 0], [0, 1]] } ]
"#,
        )
        .unwrap_err();
        assert_eq!(err.errors.len(), 1);
        assert!(err.errors[0].starts_with("fiber 1:") && err.errors[0].contains("residual"), "{err}");
    }

    #[test]
    fn mismatched_alphabets_are_reported() {
        let err = load(
            r#"
dimension = 2
[environment]
kind = "periodic"
[[environment.fibers]]
preset = "projective"
[[environment.fibers]]
preset = "depolarizing"
p = 0.1
"#,
        )
        .unwrap_err();
        assert!(err.errors.iter().any(|e| e.contains("alphabet")), "{err}");
    }

    #[test]
    fn all_errors_are_collected() {
        let err = load(
            r#"
dimension = 2
[environment]
kind = "constant"
[[environment.fibers]]
preset = "depolarizing"
p = 2.0
[initial_state]
kind = "pure"
index = 5
[experiment]
kind = "bogus"
steps = 0
"#,
        )
        .unwrap_err();
        assert!(err.errors.len() >= 4, "{err}");
    }

    #[test]
    fn unknown_family_is_rejected() {
        let err = load(
            r#"
dimension = 2
[environment]
kind = "quasiperiodic"
family = "wobble"
[[environment.fibers]]
preset = "depolarizing"
p = 0.1
"#,
        )
        .unwrap_err();
        assert!(err.errors.iter().any(|e| e.contains("unknown parametric family")), "{err}");
    }

    #[test]
    fn explicit_matrices_and_rotations() {
        let c = load(
            r#"
dimension = 2
alphabet = ["up", "down"]
[environment]
kind = "markov"
transition = [[0.8, 0.2], [0.3, 0.7]]
stationary = [0.6, 0.4]
[[environment.fibers]]
ops = [ { label = "up", re = [[1, 0], [0, 0]] }, { label = "down", re = [[0, 0], [0, 1]] } ]
[[environment.fibers]]
ops = [ { label = "up", re = [[1, 0], [0, 0]] }, { label = "down", re = [[0, 0], [0, 1]] } ]
rotation = { axis = "y", angle = 0.5 }
[initial_state]
kind = "matrix"
re = [[0.5, 0], [0, 0.5]]
im = [[0, 0.1], [-0.1, 0]]
[experiment]
patterns = [["up", "down"]]
"#,
        )
        .unwrap();
        assert_eq!(c.knobs.patterns, vec![vec![0, 1]]);
        assert_eq!(c.env.kind_name(), "markov");
    }

    #[test]
    fn parse_errors_are_reported() {
        let err = load("dimension = [").unwrap_err();
        assert!(err.errors[0].starts_with("parse error"));
        let err = load_config(Path::new("/nonexistent/config.toml")).unwrap_err();
        assert!(err.errors[0].starts_with("cannot read file"));
    }
}
