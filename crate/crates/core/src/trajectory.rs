//! Quantum trajectories: the state-valued Markov chain driven by Born-rule
//! sampling along an environment orbit.
//!
//! Trajectory `i` of a batch draws its outcomes from stream `(master_seed, i)`
//! and, when `ω` is resampled, its starting point from stream
//! `(master_seed, i | 2^63)`. Results depend only on these streams, so any
//! worker count gives bitwise-identical records.

use std::io::{self, Write};
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;

use crate::environment::{EnvPoint, EnvSystem, StateAssignment};
use crate::error::{Error, Result};
use crate::matrix::{psd_repair, QuantumState};
use crate::rng::{with_threads, RngStream};

/// Branches with Born probability at or below this are never sampled.
pub const BRANCH_TOL: f64 = 1e-12;

const ENV_STREAM_BIT: u64 = 1 << 63;

#[derive(Clone, Debug)]
pub struct TrajectoryRecord {
    pub env_start: EnvPoint,
    pub seed: RngStream,
    /// Outcome label indices; `outcomes[n-1]` is the outcome at step `n`.
    pub outcomes: Vec<usize>,
    /// `states[n]` is the state after `n` steps when stored.
    pub states: Option<Vec<QuantumState>>,
    pub step_probs: Vec<f64>,
    pub wall_clock: f64,
}

impl TrajectoryRecord {
    pub fn steps(&self) -> usize {
        self.outcomes.len()
    }

    /// Same sample path, ignoring timing.
    pub fn same_path(&self, other: &TrajectoryRecord) -> bool {
        self.env_start == other.env_start
            && self.seed == other.seed
            && self.outcomes == other.outcomes
            && self.step_probs == other.step_probs
            && self.states == other.states
    }
}

/// Chooses a label from Born probabilities with one uniform draw.
fn choose(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (a, &p) in probs.iter().enumerate() {
        if p <= BRANCH_TOL {
            continue;
        }
        acc += p;
        last = a;
        if u < acc {
            return a;
        }
    }
    last
}

/// Runs one trajectory of `steps` steps from `(ω₀, ϑ₀)`.
///
/// At step `n` the fiber at `θⁿ(ω₀)` is used.
pub fn sample_trajectory(
    env: &EnvSystem,
    omega0: &EnvPoint,
    theta0: &QuantumState,
    steps: usize,
    seed: RngStream,
    store_states: bool,
) -> Result<TrajectoryRecord> {
    if steps == 0 {
        return Err(Error::Trajectory("at least one step is required".into()));
    }
    env.check_point(omega0)?;
    if theta0.dim() != env.dim() {
        return Err(Error::DimensionMismatch { left: theta0.dim(), right: env.dim() });
    }
    let started = Instant::now();
    let mut rng = seed.rng();
    let mut outcomes = Vec::with_capacity(steps);
    let mut step_probs = Vec::with_capacity(steps);
    let mut states = store_states.then(|| {
        let mut v = Vec::with_capacity(steps + 1);
        v.push(theta0.clone());
        v
    });
    let mut rho = theta0.clone();
    let mut omega = omega0.clone();
    let mut branches = Vec::with_capacity(env.alphabet_size());
    let mut probs = Vec::with_capacity(env.alphabet_size());
    for n in 1..=steps {
        omega = env.step(&omega);
        let fiber = env.ensemble_at(&omega);
        branches.clear();
        probs.clear();
        for v in fiber.ops() {
            let m = rho.matrix().conjugate_by(v);
            probs.push(m.trace().re.max(0.0));
            branches.push(m);
        }
        let total: f64 = probs.iter().sum();
        if probs.iter().all(|&p| p <= BRANCH_TOL) {
            return Err(Error::NullBranching { step: n, total });
        }
        let u: f64 = rng.random();
        let a = choose(&probs, u);
        let p = probs[a];
        rho = psd_repair(&branches[a].scale_real(1.0 / p))?;
        outcomes.push(a);
        step_probs.push(p);
        if let Some(s) = states.as_mut() {
            s.push(rho.clone());
        }
    }
    Ok(TrajectoryRecord {
        env_start: omega0.clone(),
        seed,
        outcomes,
        states,
        step_probs,
        wall_clock: started.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Debug)]
pub enum OmegaMode {
    Fixed(EnvPoint),
    ResampleInvariant,
}

/// Starting point of trajectory `index` under `mode`.
pub fn batch_start(env: &EnvSystem, mode: &OmegaMode, master_seed: u64, index: u64) -> EnvPoint {
    match mode {
        OmegaMode::Fixed(w) => w.detached(),
        OmegaMode::ResampleInvariant => {
            env.sample_invariant(&mut RngStream::new(master_seed, index | ENV_STREAM_BIT).rng())
        }
    }
}

/// Samples `count` trajectories in parallel; errors are kept per index.
#[allow(clippy::too_many_arguments)]
pub fn sample_batch(
    env: &EnvSystem,
    initial: &StateAssignment,
    steps: usize,
    count: usize,
    master_seed: u64,
    mode: &OmegaMode,
    threads: Option<usize>,
    store_states: bool,
) -> Vec<Result<TrajectoryRecord>> {
    with_threads(threads, || {
        (0..count)
            .into_par_iter()
            .map(|i| {
                let omega = batch_start(env, mode, master_seed, i as u64);
                let theta = initial.state_at(env, &omega)?;
                sample_trajectory(env, &omega, &theta, steps, RngStream::new(master_seed, i as u64), store_states)
            })
            .collect()
    })
}

/// Writes one row per step: `trajectory_id,n,outcome,step_prob`, preceded
/// by a `#` metadata line.
pub fn write_csv<W: Write>(mut out: W, env: &EnvSystem, master_seed: u64, records: &[TrajectoryRecord]) -> io::Result<()> {
    writeln!(
        out,
        "# d={},alphabet={},env={},master_seed={},trajectories={}",
        env.dim(),
        env.alphabet().join("|"),
        env.kind_name(),
        master_seed,
        records.len()
    )?;
    writeln!(out, "trajectory_id,n,outcome,step_prob")?;
    let labels = env.alphabet();
    for (id, r) in records.iter().enumerate() {
        for (n, (&a, &p)) in r.outcomes.iter().zip(&r.step_probs).enumerate() {
            writeln!(out, "{id},{},{},{p}", n + 1, labels[a])?;
        }
    }
    Ok(())
}
