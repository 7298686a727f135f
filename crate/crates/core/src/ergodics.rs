//! Stationary states, a dynamical-ergodicity certifier, and verifiers for the
//! outcome and annealed laws of large numbers.
//!
//! # Stationary states
//!
//! The stationary profile is `ρ_ω = lim (1/N) Σ_{n≤N} Φ^{(−n)}_ω(ϑ)` with
//! `Φ^{(−n)}_ω = φ_ω ∘ φ_{θ⁻¹ω} ∘ ⋯ ∘ φ_{θ^{1−n}ω}`. The plain Cesàro mean
//! carries an `O(1/N)` transient bias, so [`stationary_state`] reports the
//! tail window `W_N = (1/N) Σ_{n=N+1}^{2N} Φ^{(−n)}_ω(ϑ)`, which has the same
//! limit and no such bias when the pushforwards themselves converge. `N`
//! doubles (staying a multiple of the period) until successive windows
//! agree within `tol` and the stationarity residual is below `tol`.
//!
//! The residual is `‖φ_{θω}(ρ_ω) − ρ_{θω}‖₁` where `ρ_{θω}` is the window
//! the solver would return at `θω` for the same `N`, which the backward
//! orbit of `ω` already determines.
//!
//! # Exact annealed stationarity
//!
//! For finite environments the lifted recursion of [`crate::measures`] has a
//! unique fixed point `W∞` under dynamical ergodicity; `W∞(s)/π(s)` is the
//! conditional mean of `ρ_ω` given the current symbol, which is all the
//! annealed measure of cylinders depends on.
//!
//! Certification is heuristic: PASS means every probe agreed, not that the
//! stationary state is unique.

use std::borrow::Cow;

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::channels::{channel_of, KrausSet, SuperOp};
use crate::environment::{EnvKind, EnvPoint, EnvSystem, StateAssignment};
use crate::error::{Error, Result};
use crate::matrix::{psd_repair, trace_norm, CMatrix, QuantumState, C64};
use crate::measures::{
    annealed_cylinder, annealed_dual, initial_weights, lift_forward, AnnealedSet, CylinderSet, Estimate, Integration,
    LiftStep,
};
use crate::rng::{stream_rng, with_threads, RngStream};
use crate::trajectory::{sample_batch, OmegaMode};

/// Lifted fixed points whose second-smallest singular value of `L − I`
/// falls below this are treated as non-unique.
pub const UNIQUENESS_TOL: f64 = 1e-9;

const SEED_STREAM_BIT: u64 = 1 << 62;

fn is_stochastic(env: &EnvSystem) -> bool {
    matches!(env.kind(), EnvKind::Iid { .. } | EnvKind::Markov { .. })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StationaryOptions {
    pub n_max: usize,
    pub tol: f64,
}

impl StationaryOptions {
    /// `tol` is 1e-5 for iid/markov environments and 1e-8 otherwise.
    pub fn for_env(env: &EnvSystem) -> Self {
        StationaryOptions { n_max: 1 << 16, tol: if is_stochastic(env) { 1e-5 } else { 1e-8 } }
    }
}

#[derive(Clone, Debug)]
pub struct StationaryOutcome {
    pub state: QuantumState,
    pub residual: f64,
    /// Trace distance between the last two windows.
    pub window_change: f64,
    /// Backward steps taken (`2N`).
    pub iterations: usize,
    pub converged: bool,
}

/// Superoperators of fibers, cached per symbol for finite environments.
struct ChannelCache<'a> {
    env: &'a EnvSystem,
    table: Option<Vec<SuperOp>>,
}

impl<'a> ChannelCache<'a> {
    fn new(env: &'a EnvSystem) -> Result<Self> {
        let table = match env.fiber_table() {
            Some(t) => Some(t.iter().map(channel_of).collect::<Result<Vec<_>>>()?),
            None => None,
        };
        Ok(ChannelCache { env, table })
    }

    fn at(&self, omega: &EnvPoint) -> Result<Cow<'_, SuperOp>> {
        match (&self.table, self.env.symbol(omega)) {
            (Some(t), Some(s)) => Ok(Cow::Borrowed(&t[s])),
            _ => channel_of(&self.env.ensemble_at(omega)).map(Cow::Owned),
        }
    }
}

fn mean_of(xs: &[DVector<C64>]) -> DVector<C64> {
    let mut acc = DVector::zeros(xs[0].len());
    for x in xs {
        acc += x;
    }
    acc / C64::new(xs.len() as f64, 0.0)
}

/// Solves for `ρ_ω` by the tail-window Cesàro iteration along the backward
/// orbit of `ω`. Non-convergence is reported through `converged`.
pub fn stationary_state(
    env: &EnvSystem,
    omega: &EnvPoint,
    seed_state: &QuantumState,
    opts: StationaryOptions,
) -> Result<StationaryOutcome> {
    env.check_point(omega)?;
    if seed_state.dim() != env.dim() {
        return Err(Error::DimensionMismatch { left: seed_state.dim(), right: env.dim() });
    }
    if opts.tol.is_nan() || opts.tol <= 0.0 {
        return Err(Error::Ergodics("tolerance must be positive".into()));
    }
    let dim = env.dim();
    let cache = ChannelCache::new(env)?;
    let period = env.period();
    let mut n = period * 4usize.div_ceil(period);
    let seed_vec = seed_state.matrix().vectorize();
    let forward = cache.at(&env.step(omega))?.into_owned();

    let mut s = DMatrix::<C64>::identity(dim * dim, dim * dim);
    let mut back = omega.clone();
    let mut xs: Vec<DVector<C64>> = Vec::new();
    let mut previous: Option<CMatrix> = None;
    let mut best: Option<StationaryOutcome> = None;
    loop {
        while xs.len() < 2 * n {
            s *= cache.at(&back)?.matrix();
            xs.push(&s * &seed_vec);
            back = env.step_back(&back);
        }
        let window = CMatrix::from_vector(dim, &mean_of(&xs[n..2 * n]));
        let shifted = CMatrix::from_vector(dim, &mean_of(&xs[n - 1..2 * n - 1]));
        let state = psd_repair(&window)?;
        let residual = trace_norm(&(&forward.apply(state.matrix())? - &forward.apply(&shifted)?));
        let window_change = previous.as_ref().map_or(f64::INFINITY, |p| trace_norm(&(&window - p)));
        let converged = window_change < opts.tol && residual < opts.tol;
        let outcome = StationaryOutcome { state, residual, window_change, iterations: 2 * n, converged };
        if converged {
            return Ok(outcome);
        }
        let iterations = outcome.iterations;
        if best.as_ref().is_none_or(|b| outcome.residual <= b.residual) {
            best = Some(outcome);
        }
        if 4 * n > opts.n_max {
            let mut b = best.expect("at least one window evaluated");
            b.iterations = iterations;
            return Ok(b);
        }
        previous = Some(window);
        n *= 2;
    }
}

/// Stationary states at a set of anchor points.
#[derive(Clone, Debug)]
pub struct StationaryProfile {
    pub anchors: Vec<EnvPoint>,
    pub states: Vec<QuantumState>,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub fn stationary_profile(
    env: &EnvSystem,
    anchors: &[EnvPoint],
    seed_state: &QuantumState,
    opts: StationaryOptions,
    threads: Option<usize>,
) -> Result<StationaryProfile> {
    let outcomes: Vec<StationaryOutcome> = with_threads(threads, || {
        anchors.par_iter().map(|w| stationary_state(env, &w.detached(), seed_state, opts)).collect::<Result<_>>()
    })?;
    Ok(StationaryProfile {
        anchors: anchors.to_vec(),
        residual: outcomes.iter().map(|o| o.residual).fold(0.0, f64::max),
        iterations: outcomes.iter().map(|o| o.iterations).max().unwrap_or(0),
        converged: outcomes.iter().all(|o| o.converged),
        states: outcomes.into_iter().map(|o| o.state).collect(),
    })
}

#[derive(Clone, Debug)]
pub struct CertifyOptions {
    pub anchors: usize,
    pub seeds: usize,
    pub stationary: StationaryOptions,
    /// Length of the orbit segment checked for transport consistency.
    pub orbit_len: usize,
    pub master_seed: u64,
    pub threads: Option<usize>,
}

impl CertifyOptions {
    pub fn for_env(env: &EnvSystem, master_seed: u64) -> Self {
        CertifyOptions {
            anchors: 4,
            seeds: 4,
            stationary: StationaryOptions::for_env(env),
            orbit_len: 8,
            master_seed,
            threads: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AnchorCertificate {
    pub anchor: EnvPoint,
    pub limits: Vec<QuantumState>,
    pub residuals: Vec<f64>,
    pub converged: bool,
    pub max_pairwise: f64,
    /// Max over the orbit segment of `‖φ_{θ^{k+1}ω}(ρ_{θᵏω}) − ρ_{θ^{k+1}ω}‖₁`.
    pub transport: f64,
}

/// Two seed states whose limits at one anchor differ.
#[derive(Clone, Debug, PartialEq)]
pub struct Separation {
    pub anchor: usize,
    pub seed_a: usize,
    pub seed_b: usize,
    pub distance: f64,
}

#[derive(Clone, Debug)]
pub struct CertifyReport {
    pub pass: bool,
    pub tol: f64,
    pub anchors: Vec<AnchorCertificate>,
    pub max_pairwise: f64,
    pub max_residual: f64,
    pub max_transport: f64,
    /// The most separated pair, when the pairwise check fails.
    pub separation: Option<Separation>,
}

/// Seed states for the certifier: computational basis states first, then
/// Haar-random pure states.
pub fn certifier_seeds(dim: usize, count: usize, master_seed: u64) -> Vec<QuantumState> {
    (0..count)
        .map(|j| {
            if j < dim {
                QuantumState::pure_basis(dim, j).expect("index below dimension")
            } else {
                QuantumState::random_pure(dim, &mut stream_rng(master_seed, SEED_STREAM_BIT | j as u64))
            }
        })
        .collect()
}

/// Heuristic check of a unique stationary profile; see the module docs.
pub fn dyn_erg_certify(env: &EnvSystem, opts: &CertifyOptions) -> Result<CertifyReport> {
    if opts.anchors < 2 || opts.seeds < 2 {
        return Err(Error::Ergodics("certification needs at least 2 anchors and 2 seeds".into()));
    }
    let seeds = certifier_seeds(env.dim(), opts.seeds, opts.master_seed);
    let anchors: Vec<EnvPoint> =
        (0..opts.anchors as u64).map(|a| env.sample_invariant(&mut RngStream::new(opts.master_seed, a).rng())).collect();
    let tol = opts.stationary.tol;
    let certs: Vec<AnchorCertificate> = with_threads(opts.threads, || {
        anchors
            .par_iter()
            .map(|anchor| {
                let runs: Vec<StationaryOutcome> = seeds
                    .par_iter()
                    .map(|s| stationary_state(env, &anchor.detached(), s, opts.stationary))
                    .collect::<Result<_>>()?;
                let orbit: Vec<StationaryOutcome> = (1..=opts.orbit_len as i64)
                    .into_par_iter()
                    .map(|k| stationary_state(env, &env.advance(&anchor.detached(), k), &seeds[0], opts.stationary))
                    .collect::<Result<_>>()?;
                let mut transport: f64 = 0.0;
                let mut prev = &runs[0].state;
                for (k, o) in orbit.iter().enumerate() {
                    let here = env.advance(anchor, k as i64 + 1);
                    let pushed = crate::channels::apply_channel(&env.ensemble_at(&here), prev.matrix())?;
                    transport = transport.max(trace_norm(&(&pushed - o.state.matrix())));
                    prev = &o.state;
                }
                let mut max_pairwise: f64 = 0.0;
                for i in 0..runs.len() {
                    for j in i + 1..runs.len() {
                        max_pairwise = max_pairwise.max(runs[i].state.trace_norm_distance(&runs[j].state));
                    }
                }
                Ok(AnchorCertificate {
                    anchor: anchor.clone(),
                    converged: runs.iter().chain(&orbit).all(|o| o.converged),
                    residuals: runs.iter().map(|o| o.residual).collect(),
                    limits: runs.into_iter().map(|o| o.state).collect(),
                    max_pairwise,
                    transport,
                })
            })
            .collect::<Result<_>>()
    })?;

    let max_pairwise = certs.iter().map(|c| c.max_pairwise).fold(0.0, f64::max);
    let max_residual = certs.iter().flat_map(|c| c.residuals.iter().copied()).fold(0.0, f64::max);
    let max_transport = certs.iter().map(|c| c.transport).fold(0.0, f64::max);
    let pairwise_ok = max_pairwise <= 10.0 * tol;
    let separation = (!pairwise_ok).then(|| {
        let mut best = Separation { anchor: 0, seed_a: 0, seed_b: 1, distance: -1.0 };
        for (a, c) in certs.iter().enumerate() {
            for i in 0..c.limits.len() {
                for j in i + 1..c.limits.len() {
                    let d = c.limits[i].trace_norm_distance(&c.limits[j]);
                    if d > best.distance {
                        best = Separation { anchor: a, seed_a: i, seed_b: j, distance: d };
                    }
                }
            }
        }
        best
    });
    let pass = pairwise_ok
        && max_residual < tol
        && max_transport <= 10.0 * tol
        && certs.iter().all(|c| c.converged);
    Ok(CertifyReport { pass, tol, anchors: certs, max_pairwise, max_residual, max_transport, separation })
}

/// The fixed point of the lifted recursion of a finite environment.
#[derive(Clone, Debug)]
pub struct StationaryLift {
    /// `W∞(s)`, summing to unit trace.
    pub weights: Vec<CMatrix>,
    /// `W∞(s) / π(s)`.
    pub states: Vec<QuantumState>,
    /// Second-smallest singular value of `L − I`.
    pub gap: f64,
}

impl StationaryLift {
    pub fn assignment(&self) -> StateAssignment {
        StateAssignment::PerSymbol(self.states.clone())
    }
}

/// Basis of the fixed space of the lifted map, plus the smallest singular
/// value of `L − I` outside it.
fn lifted_fixed_space(env: &EnvSystem) -> Result<(Vec<Vec<CMatrix>>, f64)> {
    let chain = env.finite_chain().ok_or(Error::QuadratureUnavailable)?;
    let k = chain.stationary.len();
    let d2 = env.dim() * env.dim();
    let channels: Vec<SuperOp> = chain.fibers.iter().map(channel_of).collect::<Result<_>>()?;
    let mut l = DMatrix::<C64>::zeros(k * d2, k * d2);
    for s in 0..k {
        for t in 0..k {
            let p = chain.transition[s][t];
            if p != 0.0 {
                let block = channels[t].matrix() * C64::new(p, 0.0);
                l.view_mut((t * d2, s * d2), (d2, d2)).copy_from(&block);
            }
        }
    }
    for i in 0..k * d2 {
        l[(i, i)] -= C64::new(1.0, 0.0);
    }
    let svd = l.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let sv = &svd.singular_values;
    let basis: Vec<Vec<CMatrix>> = (0..sv.len())
        .filter(|&i| sv[i] < UNIQUENESS_TOL)
        .map(|i| {
            let null: DVector<C64> = v_t.row(i).adjoint();
            (0..k).map(|s| CMatrix::from_vector(env.dim(), &null.rows(s * d2, d2).into_owned())).collect()
        })
        .collect();
    let gap = sv.iter().copied().filter(|&x| x >= UNIQUENESS_TOL).fold(f64::INFINITY, f64::min);
    if basis.is_empty() {
        return Err(Error::Ergodics("lifted map has no fixed point".into()));
    }
    Ok((basis, gap))
}

fn lifted_trace(w: &[CMatrix]) -> C64 {
    w.iter().map(|m| m.trace()).sum()
}

/// Bilinear pairing `Σ_s Tr(G(s) W(s))`.
fn lifted_pair(w: &[CMatrix], g: &[CMatrix]) -> C64 {
    w.iter().zip(g).map(|(a, b)| (b * a).trace()).sum()
}

/// The unique fixed point of the lifted recursion of a finite environment.
pub fn annealed_stationary(env: &EnvSystem) -> Result<StationaryLift> {
    let chain = env.finite_chain().ok_or(Error::QuadratureUnavailable)?;
    let (basis, gap) = lifted_fixed_space(env)?;
    if basis.len() > 1 {
        return Err(Error::Ergodics(format!("stationary state is not unique ({}-dimensional fixed space)", basis.len())));
    }
    let total = lifted_trace(&basis[0]);
    let weights: Vec<CMatrix> = basis[0].iter().map(|w| w.scale(C64::new(1.0, 0.0) / total)).collect();
    let states = weights
        .iter()
        .zip(&chain.stationary)
        .map(|(w, &p)| {
            if p > 0.0 {
                psd_repair(&w.scale_real(1.0 / p))
            } else {
                Ok(QuantumState::maximally_mixed(env.dim()))
            }
        })
        .collect::<Result<_>>()?;
    Ok(StationaryLift { weights, states, gap })
}

/// `ℚ̄_{ρ∞}(Γ)` for a finite environment. When the stationary state is not
/// unique the value is returned only if every stationary state gives the
/// same one.
pub fn stationary_annealed_value(env: &EnvSystem, set: &AnnealedSet) -> Result<f64> {
    let dual = annealed_dual(env, set)?;
    let (basis, _) = lifted_fixed_space(env)?;
    let traces: Vec<C64> = basis.iter().map(|b| lifted_trace(b)).collect();
    let pivot = (0..basis.len()).max_by(|&i, &j| traces[i].norm().total_cmp(&traces[j].norm())).unwrap();
    let value = lifted_pair(&basis[pivot], &dual) / traces[pivot];
    for (b, t) in basis.iter().zip(&traces) {
        let defect = (lifted_pair(b, &dual) - value * t).norm();
        if defect > UNIQUENESS_TOL.sqrt() {
            return Err(Error::Ergodics(format!(
                "stationary states disagree on the target ({}-dimensional fixed space, spread {defect:e})",
                basis.len()
            )));
        }
    }
    Ok(value.re)
}

/// Options shared by the outcome law-of-large-numbers verifiers.
#[derive(Clone, Debug)]
pub struct LlnOptions {
    pub trajectories: usize,
    pub steps: usize,
    pub master_seed: u64,
    pub threads: Option<usize>,
    /// Run even when the stationary target cannot be certified.
    pub allow_unconverged: bool,
    pub z_crit: f64,
    /// Monte Carlo samples for targets on the circle.
    pub target_samples: usize,
}

impl LlnOptions {
    pub fn new(trajectories: usize, steps: usize, master_seed: u64) -> Self {
        LlnOptions {
            trajectories,
            steps,
            master_seed,
            threads: None,
            allow_unconverged: false,
            z_crit: 3.0,
            target_samples: 256,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LlnReport {
    pub pattern: Vec<usize>,
    pub frequencies: Vec<f64>,
    pub mean: f64,
    pub stderr: f64,
    pub target: f64,
    pub target_stderr: f64,
    pub trajectories: usize,
    pub steps: usize,
    pub z: f64,
    pub z_crit: f64,
    pub pass: bool,
}

/// `𝔼_ℙ[ℚ_{ρ∞}](A_1(pattern))`. Exact for finite environments; on the
/// circle a Monte Carlo average over `ω` of solved stationary states.
pub fn lln_target(env: &EnvSystem, pattern: &[usize], samples: usize, seed: u64) -> Result<Estimate> {
    let cyl = CylinderSet::new(1, pattern.to_vec())?;
    if env.is_finite() {
        return stationary_annealed_value(env, &AnnealedSet::cylinder(cyl)).map(Estimate::exact);
    }
    let opts = StationaryOptions::for_env(env);
    let solver_env = env.clone();
    let seed_state = QuantumState::maximally_mixed(env.dim());
    let failure = std::sync::Arc::new(std::sync::Mutex::new(None::<Error>));
    let sink = std::sync::Arc::clone(&failure);
    let assignment = StateAssignment::Custom(std::sync::Arc::new(move |w: &EnvPoint| {
        match stationary_state(&solver_env, w, &seed_state, opts) {
            Ok(o) if o.converged => o.state,
            Ok(o) => {
                *sink.lock().unwrap() = Some(Error::Unconverged { iterations: o.iterations, residual: o.residual });
                o.state
            }
            Err(e) => {
                *sink.lock().unwrap() = Some(e);
                QuantumState::maximally_mixed(solver_env.dim())
            }
        }
    }));
    let est = annealed_cylinder(env, &assignment, &cyl, Integration::Mc { samples, seed })?;
    let err = failure.lock().unwrap().take();
    match err {
        Some(e) => Err(e),
        None => Ok(est),
    }
}

/// Number of time blocks used for batch-means errors at a fixed `ω`.
pub const TIME_BLOCKS: usize = 50;

/// Window counts of one pattern over a batch of trajectories.
#[derive(Clone, Debug)]
pub struct PatternSamples {
    /// Frequency per trajectory.
    pub per_trajectory: Vec<f64>,
    /// Frequency per time block, pooled over trajectories.
    pub per_block: Vec<f64>,
}

impl PatternSamples {
    /// Mean frequency and its standard error. At a fixed `ω` the
    /// trajectories share one environment path, so the error comes from
    /// batch means along time; otherwise trajectories are independent.
    pub fn estimate(&self, mode: &OmegaMode) -> Estimate {
        let by_trajectory = Estimate::from_samples(&self.per_trajectory);
        match mode {
            OmegaMode::ResampleInvariant => by_trajectory,
            OmegaMode::Fixed(_) => {
                let by_block = Estimate::from_samples(&self.per_block);
                Estimate { value: by_trajectory.value, ..by_block }
            }
        }
    }
}

fn block_bounds(steps: usize) -> Vec<usize> {
    let blocks = TIME_BLOCKS.min(steps).max(1);
    (0..=blocks).map(|k| k * steps / blocks).collect()
}

/// Sliding-window frequencies of each pattern over the first `steps`
/// windows of every trajectory.
pub fn pattern_frequencies(
    env: &EnvSystem,
    patterns: &[Vec<usize>],
    initial: &StateAssignment,
    mode: &OmegaMode,
    opts: &LlnOptions,
) -> Result<Vec<PatternSamples>> {
    let longest = patterns.iter().map(|p| p.len()).max().unwrap_or(1);
    let records = sample_batch(
        env,
        initial,
        opts.steps + longest - 1,
        opts.trajectories,
        opts.master_seed,
        mode,
        opts.threads,
        false,
    );
    let records: Vec<_> = records.into_iter().collect::<Result<_>>()?;
    let bounds = block_bounds(opts.steps);
    Ok(patterns
        .iter()
        .map(|p| {
            let hits: Vec<Vec<bool>> = records
                .iter()
                .map(|r| (0..opts.steps).map(|n| r.outcomes[n..n + p.len()] == *p).collect())
                .collect();
            let per_trajectory =
                hits.iter().map(|h| h.iter().filter(|&&x| x).count() as f64 / opts.steps as f64).collect();
            let per_block = bounds
                .windows(2)
                .map(|b| {
                    let count: usize = hits.iter().map(|h| h[b[0]..b[1]].iter().filter(|&&x| x).count()).sum();
                    count as f64 / ((b[1] - b[0]) * hits.len()) as f64
                })
                .collect();
            PatternSamples { per_trajectory, per_block }
        })
        .collect())
}

fn z_score(diff: f64, sd: f64) -> f64 {
    if sd > 0.0 {
        diff / sd
    } else if diff.abs() <= 1e-12 {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    }
}

fn target_or_override(env: &EnvSystem, pattern: &[usize], opts: &LlnOptions) -> Result<Estimate> {
    match lln_target(env, pattern, opts.target_samples, opts.master_seed ^ SEED_STREAM_BIT) {
        Ok(t) => Ok(t),
        Err(_) if opts.allow_unconverged => Ok(Estimate { value: f64::NAN, stderr: 0.0, half_width: 0.0, samples: 0 }),
        Err(e) => Err(e),
    }
}

/// Outcome law of large numbers for several patterns sharing one batch of
/// trajectories. Each trajectory runs `steps + m − 1` steps so that exactly
/// `steps` windows are counted.
pub fn verify_lln_outcomes(
    env: &EnvSystem,
    patterns: &[Vec<usize>],
    initial: &StateAssignment,
    mode: &OmegaMode,
    opts: &LlnOptions,
) -> Result<Vec<LlnReport>> {
    if opts.trajectories < 2 || opts.steps == 0 {
        return Err(Error::Ergodics("need at least 2 trajectories and 1 step".into()));
    }
    if patterns.iter().any(|p| p.is_empty()) {
        return Err(Error::Ergodics("patterns must be non-empty".into()));
    }
    let targets: Vec<Estimate> = patterns.iter().map(|p| target_or_override(env, p, opts)).collect::<Result<_>>()?;
    let freqs = pattern_frequencies(env, patterns, initial, mode, opts)?;
    Ok(patterns
        .iter()
        .zip(freqs)
        .zip(targets)
        .map(|((p, f), t)| {
            let est = f.estimate(mode);
            let z = z_score(est.value - t.value, est.stderr.hypot(t.stderr));
            LlnReport {
                pattern: p.clone(),
                mean: est.value,
                stderr: est.stderr,
                target: t.value,
                target_stderr: t.stderr,
                trajectories: opts.trajectories,
                steps: opts.steps,
                pass: z.abs() <= opts.z_crit,
                z,
                z_crit: opts.z_crit,
                frequencies: f.per_trajectory,
            }
        })
        .collect())
}

/// Two-sided critical value for `comparisons` simultaneous tests at the
/// familywise level of a single 3σ test.
pub fn bonferroni_z(comparisons: usize) -> f64 {
    let normal = Normal::standard();
    let alpha = 2.0 * (1.0 - normal.cdf(3.0));
    normal.inverse_cdf(1.0 - alpha / (2.0 * comparisons.max(1) as f64))
}

#[derive(Clone, Debug)]
pub struct ErgodicCell {
    pub omega: usize,
    pub theta: usize,
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug)]
pub struct Comparison {
    pub name: String,
    pub z: f64,
    pub pass: bool,
}

#[derive(Clone, Debug)]
pub struct QuenchedErgodicReport {
    pub cells: Vec<ErgodicCell>,
    pub comparisons: Vec<Comparison>,
    pub target: f64,
    pub target_stderr: f64,
    pub z_crit: f64,
    pub pass: bool,
}

/// Runs the outcome law at every `(ω, ϑ)` pair and tests all means for
/// pairwise compatibility and compatibility with the common target. With
/// `z_crit = None` the threshold is Bonferroni-corrected.
pub fn verify_quenched_ergodic(
    env: &EnvSystem,
    pattern: &[usize],
    omegas: &[EnvPoint],
    thetas: &[QuantumState],
    opts: &LlnOptions,
    z_crit: Option<f64>,
) -> Result<QuenchedErgodicReport> {
    let target = target_or_override(env, pattern, opts)?;
    let mut cells = Vec::new();
    for (i, w) in omegas.iter().enumerate() {
        for (j, t) in thetas.iter().enumerate() {
            let cell_seed = stream_rng(opts.master_seed, SEED_STREAM_BIT | (i * thetas.len() + j) as u64).next_u64();
            let cell_opts = LlnOptions { master_seed: cell_seed, ..opts.clone() };
            let mode = OmegaMode::Fixed(w.clone());
            let f = pattern_frequencies(env, &[pattern.to_vec()], &StateAssignment::Fixed(t.clone()), &mode, &cell_opts)?;
            let est = f[0].estimate(&mode);
            cells.push(ErgodicCell { omega: i, theta: j, mean: est.value, stderr: est.stderr });
        }
    }
    let count = cells.len() * (cells.len() - 1) / 2 + cells.len();
    let z_crit = z_crit.unwrap_or_else(|| bonferroni_z(count));
    let mut comparisons = Vec::with_capacity(count);
    for a in 0..cells.len() {
        for b in a + 1..cells.len() {
            let (x, y) = (&cells[a], &cells[b]);
            let z = z_score(x.mean - y.mean, x.stderr.hypot(y.stderr));
            comparisons.push(Comparison {
                name: format!("omega{}_theta{}~omega{}_theta{}", x.omega, x.theta, y.omega, y.theta),
                z,
                pass: z.abs() <= z_crit,
            });
        }
    }
    for c in &cells {
        let z = z_score(c.mean - target.value, c.stderr.hypot(target.stderr));
        comparisons.push(Comparison {
            name: format!("omega{}_theta{}~target", c.omega, c.theta),
            z,
            pass: z.abs() <= z_crit,
        });
    }
    let pass = comparisons.iter().all(|c| c.pass);
    Ok(QuenchedErgodicReport { cells, comparisons, target: target.value, target_stderr: target.stderr, z_crit, pass })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnnealedLlnRow {
    pub n: usize,
    pub term: f64,
    pub cesaro: f64,
    pub gap: f64,
    pub term_gap: f64,
}

#[derive(Clone, Debug)]
pub struct AnnealedLlnTable {
    pub rows: Vec<AnnealedLlnRow>,
    pub target: f64,
    /// Doubling checkpoints `1, 2, 4, …` plus the final `N`.
    pub checkpoints: Vec<usize>,
    /// Whether the Cesàro gap is non-increasing over the checkpoints.
    pub monotone: bool,
    pub max_term_gap: f64,
}

impl AnnealedLlnTable {
    pub fn row(&self, n: usize) -> &AnnealedLlnRow {
        &self.rows[n - 1]
    }
}

/// Slack allowed when comparing gaps at consecutive checkpoints.
pub const MONOTONE_SLACK: f64 = 1e-12;

/// Exact terms `ℚ̄_ϑ(τ⁻ⁿΓ)` for `n = 1..=n_max`, their Cesàro means, and
/// the gap to `ℚ̄_{ρ∞}(Γ)`.
pub fn verify_annealed_lln(
    env: &EnvSystem,
    initial: &StateAssignment,
    set: &AnnealedSet,
    n_max: usize,
) -> Result<AnnealedLlnTable> {
    if n_max == 0 {
        return Err(Error::Ergodics("n_max must be positive".into()));
    }
    let chain = env.finite_chain().ok_or(Error::QuadratureUnavailable)?;
    let dual = annealed_dual(env, set)?;
    let pair = |w: &[CMatrix]| lifted_pair(w, &dual).re;
    let target = stationary_annealed_value(env, set)?;
    let mut w = initial_weights(env, &chain, initial)?;
    let mut rows = Vec::with_capacity(n_max);
    let mut sum = 0.0;
    for n in 1..=n_max {
        w = lift_forward(&chain, &w, LiftStep::Channel)?;
        let term = pair(&w);
        sum += term;
        let cesaro = sum / n as f64;
        rows.push(AnnealedLlnRow { n, term, cesaro, gap: (cesaro - target).abs(), term_gap: (term - target).abs() });
    }
    let mut checkpoints: Vec<usize> = std::iter::successors(Some(1usize), |&c| Some(c * 2)).take_while(|&c| c <= n_max).collect();
    if *checkpoints.last().unwrap() != n_max {
        checkpoints.push(n_max);
    }
    let monotone = checkpoints.windows(2).all(|c| rows[c[1] - 1].gap <= rows[c[0] - 1].gap + MONOTONE_SLACK);
    let max_term_gap = rows.iter().map(|r| r.term_gap).fold(0.0, f64::max);
    Ok(AnnealedLlnTable { rows, target, checkpoints, monotone, max_term_gap })
}

/// The `K`-step composition of a periodic environment starting after `ω`.
pub fn period_channel(env: &EnvSystem, omega: &EnvPoint) -> Result<SuperOp> {
    let fibers: Vec<Cow<'_, KrausSet>> = env.fibers_along(omega, env.period());
    crate::channels::compose_forward(env.dim(), &fibers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::{qubit_rotation, KrausSet};

    fn dep(p: f64) -> KrausSet {
        KrausSet::depolarizing(p).unwrap()
    }

    fn rotated_dep(p: f64, axis: char, angle: f64) -> KrausSet {
        dep(p).premultiply(&qubit_rotation(axis, angle).unwrap()).unwrap()
    }

    #[test]
    fn depolarizing_stationary_state_is_maximally_mixed() {
        let env = EnvSystem::constant(dep(0.4)).unwrap();
        let o = stationary_state(&env, &EnvPoint::Constant, &QuantumState::pure_basis(2, 0).unwrap(), StationaryOptions::for_env(&env)).unwrap();
        assert!(o.converged);
        assert!(o.residual <= 1e-10);
        assert!(o.state.trace_norm_distance(&QuantumState::maximally_mixed(2)) <= 1e-10);
    }

    #[test]
    fn projective_channel_fixes_diagonal_seed() {
        let env = EnvSystem::constant(KrausSet::projective(2)).unwrap();
        let seed = QuantumState::diagonal(&[0.3, 0.7]).unwrap();
        let o = stationary_state(&env, &EnvPoint::Constant, &seed, StationaryOptions::for_env(&env)).unwrap();
        assert!(o.converged);
        assert!(o.state.trace_norm_distance(&seed) < 1e-12);
    }

    #[test]
    fn periodic_solution_matches_spectral_oracle() {
        let env = EnvSystem::periodic(vec![rotated_dep(0.2, 'x', 0.7), rotated_dep(0.3, 'y', 1.1)]).unwrap();
        let w0 = EnvPoint::Index(0);
        let o = stationary_state(&env, &w0, &QuantumState::pure_basis(2, 1).unwrap(), StationaryOptions::for_env(&env)).unwrap();
        assert!(o.converged);
        // Fixed point at index 0 of fiber(1) then fiber(0), by power iteration.
        let two_step = period_channel(&env, &EnvPoint::Index(1)).unwrap();
        let mut m = CMatrix::identity(2).scale_real(0.5);
        for _ in 0..2000 {
            m = two_step.apply(&m).unwrap();
        }
        assert!(trace_norm(&(o.state.matrix() - &m)) < 1e-8);
    }

    #[test]
    fn certifier_pass_and_fail() {
        let env = EnvSystem::constant(dep(0.4)).unwrap();
        let mut opts = CertifyOptions::for_env(&env, 1);
        opts.anchors = 2;
        let r = dyn_erg_certify(&env, &opts).unwrap();
        assert!(r.pass, "{r:?}");
        let proj = EnvSystem::constant(KrausSet::projective(2)).unwrap();
        let r = dyn_erg_certify(&proj, &CertifyOptions::for_env(&proj, 1)).unwrap();
        assert!(!r.pass);
        let sep = r.separation.unwrap();
        assert!(sep.distance >= 0.5);
        assert!(dyn_erg_certify(&env, &CertifyOptions { seeds: 1, ..opts }).is_err());
    }

    #[test]
    fn lifted_stationary_matches_solver_on_periodic_env() {
        let env = EnvSystem::periodic(vec![rotated_dep(0.2, 'x', 0.7), rotated_dep(0.3, 'y', 1.1), dep(0.1)]).unwrap();
        let lift = annealed_stationary(&env).unwrap();
        for k in 0..3 {
            let o = stationary_state(&env, &EnvPoint::Index(k), &QuantumState::maximally_mixed(2), StationaryOptions::for_env(&env)).unwrap();
            assert!(o.state.trace_norm_distance(&lift.states[k]) < 1e-8);
        }
        let proj = EnvSystem::constant(KrausSet::projective(2)).unwrap();
        assert!(annealed_stationary(&proj).is_err());
    }

    #[test]
    fn lln_identity_ensemble_is_exact() {
        let env = EnvSystem::constant(KrausSet::identity(2)).unwrap();
        let opts = LlnOptions::new(4, 50, 0);
        let r = verify_lln_outcomes(&env, &[vec![0]], &StateAssignment::Fixed(QuantumState::maximally_mixed(2)), &OmegaMode::Fixed(EnvPoint::Constant), &opts).unwrap();
        assert!(r[0].frequencies.iter().all(|&f| f == 1.0));
        assert_eq!(r[0].target, 1.0);
        assert!(r[0].pass);
    }

    #[test]
    fn lln_depolarizing_small_run() {
        let env = EnvSystem::constant(dep(0.4)).unwrap();
        let opts = LlnOptions::new(20, 500, 3);
        let patterns: Vec<Vec<usize>> = (0..4).map(|a| vec![a]).collect();
        let r = verify_lln_outcomes(&env, &patterns, &StateAssignment::Fixed(QuantumState::pure_basis(2, 0).unwrap()), &OmegaMode::Fixed(EnvPoint::Constant), &opts).unwrap();
        for (rep, t) in r.iter().zip([0.7, 0.1, 0.1, 0.1]) {
            assert!((rep.target - t).abs() < 1e-12);
            assert!(rep.pass, "{rep:?}");
        }
    }

    #[test]
    fn lln_target_ignores_initial_state_and_needs_uniqueness() {
        let proj = EnvSystem::constant(KrausSet::projective(2)).unwrap();
        let opts = LlnOptions::new(4, 10, 0);
        let init = StateAssignment::Fixed(QuantumState::maximally_mixed(2));
        assert!(verify_lln_outcomes(&proj, &[vec![0]], &init, &OmegaMode::Fixed(EnvPoint::Constant), &opts).is_err());
        let forced = LlnOptions { allow_unconverged: true, ..opts };
        let r = verify_lln_outcomes(&proj, &[vec![0]], &init, &OmegaMode::Fixed(EnvPoint::Constant), &forced).unwrap();
        assert!(r[0].target.is_nan() && !r[0].pass);
    }

    #[test]
    fn annealed_lln_at_stationarity_and_from_a_pure_state() {
        let env = EnvSystem::constant(dep(0.4)).unwrap();
        let set = AnnealedSet::cylinder(CylinderSet::new(1, vec![0]).unwrap());
        let stationary = annealed_stationary(&env).unwrap().assignment();
        let t = verify_annealed_lln(&env, &stationary, &set, 50).unwrap();
        assert!(t.max_term_gap <= 1e-9);
        // non-unital fibers make the terms depend on the initial state
        let amp = EnvSystem::periodic(vec![
            KrausSet::amplitude_damping(0.3).unwrap().premultiply(&qubit_rotation('x', 0.4).unwrap()).unwrap(),
            KrausSet::amplitude_damping(0.6).unwrap(),
        ])
        .unwrap();
        let t = verify_annealed_lln(&amp, &StateAssignment::Fixed(QuantumState::pure_basis(2, 1).unwrap()), &set, 200).unwrap();
        assert!(t.row(200).gap < t.row(20).gap);
        assert!(t.row(200).gap > 0.0);
    }

    #[test]
    fn bonferroni_threshold_grows_with_comparisons() {
        assert!((bonferroni_z(1) - 3.0).abs() < 1e-9);
        assert!(bonferroni_z(10) > 3.0);
    }

    #[test]
    fn quenched_ergodic_constant_env() {
        let env = EnvSystem::constant(dep(0.4)).unwrap();
        let opts = LlnOptions::new(10, 300, 8);
        let thetas = vec![QuantumState::pure_basis(2, 0).unwrap(), QuantumState::maximally_mixed(2)];
        let r = verify_quenched_ergodic(&env, &[0], &[EnvPoint::Constant], &thetas, &opts, None).unwrap();
        assert!(r.pass, "{r:?}");
        assert_eq!(r.comparisons.len(), 3);
    }

    #[test]
    fn circle_target_by_monte_carlo() {
        let env = EnvSystem::quasiperiodic(None, crate::environment::ParametricFamily::SpinX, 1.0, dep(0.3)).unwrap();
        // unital fibers: ρ∞ = I/2 everywhere, so the identity-branch weight is exact
        let t = lln_target(&env, &[0], 16, 0).unwrap();
        assert!((t.value - 0.775).abs() < 1e-8);
    }
}
