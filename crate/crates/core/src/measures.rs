//! Quenched, matrix-valued and annealed measures of cylinder sets.
//!
//! Outcome coordinates are 1-based: `A_n(b₁,…,b_m)` constrains `a_n … a_{n+m−1}`,
//! and outcome `a_k` is produced by the fiber at `θᵏ(ω)`.
//!
//! Exact annealed integration for the finite kinds runs a lifted recursion
//! over the symbol chain: `W_t(s)` is the unnormalized state jointly with
//! the event `{s_t = s}`, and
//!
//! ```text
//! W_0(s)    = π(s) ϑ_s
//! W_{t+1}(s') = Σ_s P(s,s') Op_{s'}(W_t(s))
//! ```
//!
//! where `Op` is the fiber channel (free coordinates) or the single branch
//! `T_b` (constrained coordinates). The measure is `Σ_s Tr W_T(s)`.

use std::io::{self, Write};

use rayon::prelude::*;

use crate::channels::{apply_channel, apply_channel_adjoint, apply_t, apply_t_adjoint, compose_forward, word_operator};
use crate::environment::{EnvKind, EnvPoint, EnvSystem, FiniteChain, StateAssignment};
use crate::error::{Error, Result};
use crate::matrix::{trace_norm, CMatrix, QuantumState};
use crate::rng::RngStream;

/// Default cap on `|𝒜|ⁿ` for enumerations.
pub const DEFAULT_ENUMERATION_BUDGET: u128 = 1 << 22;

/// `A_start(word)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CylinderSet {
    pub start: usize,
    pub word: Vec<usize>,
}

impl CylinderSet {
    pub fn new(start: usize, word: Vec<usize>) -> Result<Self> {
        if start == 0 {
            return Err(Error::Measure("cylinder start must be at least 1".into()));
        }
        if word.is_empty() {
            return Err(Error::Measure("cylinder word must be non-empty".into()));
        }
        Ok(CylinderSet { start, word })
    }

    /// Last constrained coordinate.
    pub fn end(&self) -> usize {
        self.start + self.word.len() - 1
    }

    /// `σ⁻ⁿ(A_start(w)) = A_{start+n}(w)`.
    pub fn shifted(&self, n: usize) -> Self {
        CylinderSet { start: self.start + n, word: self.word.clone() }
    }
}

/// Environment event `{ω : s_coordinate(ω) ∈ symbols}` for finite kinds.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EnvEvent {
    pub coordinate: usize,
    pub symbols: Vec<bool>,
}

/// `Γ = F × E` with `F` an optional environment event and `E` a cylinder.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnnealedSet {
    pub event: Option<EnvEvent>,
    pub cylinder: CylinderSet,
}

impl AnnealedSet {
    pub fn cylinder(cylinder: CylinderSet) -> Self {
        AnnealedSet { event: None, cylinder }
    }

    /// `τ⁻ⁿ(Γ)`, using `(τ⁻ⁿΓ)^ω = σ⁻ⁿ(Γ^{θⁿω})`.
    pub fn tau_preimage(&self, n: usize) -> Self {
        AnnealedSet {
            event: self.event.as_ref().map(|e| EnvEvent { coordinate: e.coordinate + n, symbols: e.symbols.clone() }),
            cylinder: self.cylinder.shifted(n),
        }
    }

    fn horizon(&self) -> usize {
        self.cylinder.end().max(self.event.as_ref().map_or(0, |e| e.coordinate))
    }
}

fn check_word(env: &EnvSystem, word: &[usize]) -> Result<()> {
    let size = env.alphabet_size();
    match word.iter().find(|&&b| b >= size) {
        Some(&index) => Err(Error::UnknownLabel { index, size }),
        None => Ok(()),
    }
}

/// `ℚ_{ϑ;ω}(A_1(word)) = Tr(V ϑ V†)`; the empty word has measure 1.
pub fn quenched_cylinder(env: &EnvSystem, omega: &EnvPoint, theta: &QuantumState, word: &[usize]) -> Result<f64> {
    check_word(env, word)?;
    let chain = env.fibers_along(omega, word.len());
    let v = word_operator(env.dim(), &chain, word)?;
    Ok(theta.matrix().conjugate_by(&v).trace().re)
}

/// `ℚ_{ϑ;ω}(A_n(word))`: the free prefix is summed out by pushing `ϑ`
/// through the first `n − 1` fiber channels.
pub fn quenched_cylinder_set(env: &EnvSystem, omega: &EnvPoint, theta: &QuantumState, cyl: &CylinderSet) -> Result<f64> {
    check_word(env, &cyl.word)?;
    let mut m = theta.matrix().clone();
    let mut w = omega.clone();
    for _ in 1..cyl.start {
        w = env.step(&w);
        m = apply_channel(&env.ensemble_at(&w), &m)?;
    }
    for &b in &cyl.word {
        w = env.step(&w);
        m = apply_t(&env.ensemble_at(&w), b, &m)?;
    }
    Ok(m.trace().re)
}

/// `ℚ_{ϑ;ω}(Γ^ω)` for `Γ = F × E`.
pub fn quenched_set(env: &EnvSystem, omega: &EnvPoint, theta: &QuantumState, set: &AnnealedSet) -> Result<f64> {
    if let Some(e) = &set.event {
        let s = env
            .symbol(&env.advance(omega, e.coordinate as i64))
            .ok_or_else(|| Error::Measure("environment events need a finite environment".into()))?;
        if !e.symbols.get(s).copied().unwrap_or(false) {
            return Ok(0.0);
        }
    }
    quenched_cylinder_set(env, omega, theta, &set.cylinder)
}

/// `ℚ*_ω(A_1(word)) = T†_{b₁;θω} ∘ ⋯ ∘ T†_{b_m;θᵐω}(I)`.
pub fn matrix_measure_cylinder(env: &EnvSystem, omega: &EnvPoint, word: &[usize]) -> Result<CMatrix> {
    check_word(env, word)?;
    let chain = env.fibers_along(omega, word.len());
    let mut m = CMatrix::identity(env.dim());
    for (k, &b) in chain.iter().zip(word).rev() {
        m = apply_t_adjoint(k, b, &m)?;
    }
    Ok(m)
}

/// Trace-norm residual of `ℚ*_ω(σ⁻ⁿE) = Φ^{(n)†}_ω(ℚ*_{θⁿω}(E))` for
/// `E = A_1(word)`. The left side enumerates all `|𝒜|ⁿ` prefixes.
pub fn shift_identity_check(env: &EnvSystem, omega: &EnvPoint, n: usize, word: &[usize], budget: u128) -> Result<f64> {
    check_word(env, word)?;
    let size = env.alphabet_size();
    let needed = (size as u128).checked_pow(n as u32).unwrap_or(u128::MAX);
    if needed > budget {
        return Err(Error::BudgetExceeded { needed, budget });
    }
    let mut lhs = CMatrix::zeros(env.dim());
    let mut full = vec![0usize; n];
    full.extend_from_slice(word);
    for index in 0..needed {
        let mut r = index;
        for slot in full.iter_mut().take(n).rev() {
            *slot = (r % size as u128) as usize;
            r /= size as u128;
        }
        lhs = &lhs + &matrix_measure_cylinder(env, omega, &full)?;
    }
    let shifted = env.advance(omega, n as i64);
    let inner = matrix_measure_cylinder(env, &shifted, word)?;
    let rhs = compose_forward(env.dim(), &env.fibers_along(omega, n))?.adjoint().apply(&inner)?;
    Ok(trace_norm(&(&lhs - &rhs)))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Integration {
    Exact,
    Mc { samples: usize, seed: u64 },
}

impl Integration {
    pub fn name(&self) -> &'static str {
        match self {
            Integration::Exact => "exact",
            Integration::Mc { .. } => "mc",
        }
    }
}

/// A value with a Monte Carlo error bar (zero for exact results).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    /// Three standard errors.
    pub half_width: f64,
    pub samples: usize,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Estimate { value, stderr: 0.0, half_width: 0.0, samples: 0 }
    }

    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        let stderr = (var / n).sqrt();
        Estimate { value: mean, stderr, half_width: 3.0 * stderr, samples: xs.len() }
    }
}

/// One step of the lifted recursion.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LiftStep {
    Channel,
    Letter(usize),
}

fn lift_op(chain: &FiniteChain<'_>, s: usize, step: LiftStep, m: &CMatrix) -> Result<CMatrix> {
    match step {
        LiftStep::Channel => apply_channel(&chain.fibers[s], m),
        LiftStep::Letter(b) => apply_t(&chain.fibers[s], b, m),
    }
}

fn lift_op_adjoint(chain: &FiniteChain<'_>, s: usize, step: LiftStep, m: &CMatrix) -> Result<CMatrix> {
    match step {
        LiftStep::Channel => apply_channel_adjoint(&chain.fibers[s], m),
        LiftStep::Letter(b) => apply_t_adjoint(&chain.fibers[s], b, m),
    }
}

fn weighted_sum(weights: impl Iterator<Item = f64>, ms: &[CMatrix], dim: usize) -> CMatrix {
    let mut acc = CMatrix::zeros(dim);
    for (p, m) in weights.zip(ms) {
        if p != 0.0 {
            acc = &acc + &m.scale_real(p);
        }
    }
    acc
}

/// `W ↦ W'` with `W'(s') = Op_{s'}(Σ_s P(s,s') W(s))`.
pub fn lift_forward(chain: &FiniteChain<'_>, w: &[CMatrix], step: LiftStep) -> Result<Vec<CMatrix>> {
    let k = chain.stationary.len();
    let dim = chain.fibers[0].dim();
    (0..k)
        .map(|t| {
            let x = weighted_sum((0..k).map(|s| chain.transition[s][t]), w, dim);
            lift_op(chain, t, step, &x)
        })
        .collect()
}

/// Dual of [`lift_forward`]: `G(s) = Σ_{s'} P(s,s') Op†_{s'}(G'(s'))`.
pub fn lift_backward(chain: &FiniteChain<'_>, g: &[CMatrix], step: LiftStep) -> Result<Vec<CMatrix>> {
    let k = chain.stationary.len();
    let dim = chain.fibers[0].dim();
    let y: Vec<CMatrix> = (0..k).map(|t| lift_op_adjoint(chain, t, step, &g[t])).collect::<Result<_>>()?;
    Ok((0..k).map(|s| weighted_sum(chain.transition[s].iter().copied(), &y, dim)).collect())
}

/// Restricts lifted weights to the symbols allowed by `symbols`.
pub fn lift_mask(w: &mut [CMatrix], symbols: &[bool]) {
    for (s, m) in w.iter_mut().enumerate() {
        if !symbols.get(s).copied().unwrap_or(false) {
            *m = CMatrix::zeros(m.dim());
        }
    }
}

/// `ϑ_s` for each symbol of a finite environment.
pub fn states_per_symbol(env: &EnvSystem, assignment: &StateAssignment) -> Result<Vec<QuantumState>> {
    let k = env.num_symbols().ok_or(Error::QuadratureUnavailable)?;
    match assignment {
        StateAssignment::Fixed(t) => Ok(vec![t.clone(); k]),
        StateAssignment::PerSymbol(v) if v.len() == k => Ok(v.clone()),
        StateAssignment::PerSymbol(v) => Err(Error::Measure(format!("{} per-symbol states for {k} symbols", v.len()))),
        StateAssignment::Custom(_) => match env.kind() {
            EnvKind::Constant => Ok(vec![assignment.state_at(env, &EnvPoint::Constant)?]),
            EnvKind::Periodic { .. } => (0..k).map(|s| assignment.state_at(env, &EnvPoint::Index(s))).collect(),
            _ => Err(Error::Measure(
                "exact integration needs a state assignment that depends on the current symbol only".into(),
            )),
        },
    }
}

/// `W_0(s) = π(s) ϑ_s`.
pub fn initial_weights(env: &EnvSystem, chain: &FiniteChain<'_>, assignment: &StateAssignment) -> Result<Vec<CMatrix>> {
    let states = states_per_symbol(env, assignment)?;
    for st in &states {
        if st.dim() != env.dim() {
            return Err(Error::DimensionMismatch { left: st.dim(), right: env.dim() });
        }
    }
    Ok(states.iter().zip(&chain.stationary).map(|(st, &p)| st.matrix().scale_real(p)).collect())
}

/// Steps `1..=horizon` of the lifted recursion for `set`.
fn set_steps(set: &AnnealedSet) -> Vec<LiftStep> {
    let c = &set.cylinder;
    (1..=set.horizon())
        .map(|t| if t >= c.start && t <= c.end() { LiftStep::Letter(c.word[t - c.start]) } else { LiftStep::Channel })
        .collect()
}

fn exact_annealed(env: &EnvSystem, assignment: &StateAssignment, set: &AnnealedSet) -> Result<f64> {
    let chain = env.finite_chain().ok_or(Error::QuadratureUnavailable)?;
    let mut w = initial_weights(env, &chain, assignment)?;
    let mask_at = |t: usize, w: &mut [CMatrix]| {
        if let Some(e) = &set.event {
            if e.coordinate == t {
                lift_mask(w, &e.symbols);
            }
        }
    };
    mask_at(0, &mut w);
    for (i, step) in set_steps(set).into_iter().enumerate() {
        w = lift_forward(&chain, &w, step)?;
        mask_at(i + 1, &mut w);
    }
    Ok(w.iter().map(|m| m.trace().re).sum())
}

/// Dual weights `G` with `ℚ̄_ϑ(τ⁻ⁿΓ) = Σ_s ⟨W_n(s), G(s)⟩`, where `W_n` is the
/// lifted state after `n` free steps.
pub fn annealed_dual(env: &EnvSystem, set: &AnnealedSet) -> Result<Vec<CMatrix>> {
    let chain = env.finite_chain().ok_or(Error::QuadratureUnavailable)?;
    let k = chain.stationary.len();
    let mut g = vec![CMatrix::identity(env.dim()); k];
    let steps = set_steps(set);
    for t in (0..=steps.len()).rev() {
        if t < steps.len() {
            g = lift_backward(&chain, &g, steps[t])?;
        }
        if let Some(e) = &set.event {
            if e.coordinate == t {
                lift_mask(&mut g, &e.symbols);
            }
        }
    }
    Ok(g)
}

fn check_set(env: &EnvSystem, set: &AnnealedSet) -> Result<()> {
    check_word(env, &set.cylinder.word)?;
    if let Some(e) = &set.event {
        match env.num_symbols() {
            Some(k) if k == e.symbols.len() => {}
            Some(k) => {
                return Err(Error::Measure(format!("event lists {} symbols, environment has {k}", e.symbols.len())))
            }
            None => return Err(Error::Measure("environment events need a finite environment".into())),
        }
    }
    Ok(())
}

/// `ℚ̄_ϑ(Γ) = ∫ ℚ_{ϑ;ω}(Γ^ω) dℙ(ω)`.
pub fn annealed_set(env: &EnvSystem, assignment: &StateAssignment, set: &AnnealedSet, integration: Integration) -> Result<Estimate> {
    check_set(env, set)?;
    match integration {
        Integration::Exact => exact_annealed(env, assignment, set).map(Estimate::exact),
        Integration::Mc { samples, seed } => {
            if samples == 0 {
                return Err(Error::Measure("mc integration needs at least one sample".into()));
            }
            let xs: Vec<f64> = (0..samples as u64)
                .into_par_iter()
                .map(|i| {
                    let omega = env.sample_invariant(&mut RngStream::new(seed, i).rng());
                    let theta = assignment.state_at(env, &omega)?;
                    quenched_set(env, &omega, &theta, set)
                })
                .collect::<Result<_>>()?;
            Ok(Estimate::from_samples(&xs))
        }
    }
}

/// Annealed measure of a cylinder.
pub fn annealed_cylinder(env: &EnvSystem, assignment: &StateAssignment, cyl: &CylinderSet, integration: Integration) -> Result<Estimate> {
    annealed_set(env, assignment, &AnnealedSet::cylinder(cyl.clone()), integration)
}

/// One CSV row: `word,start,mode,value,stderr`.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasureRow {
    pub word: String,
    pub start: usize,
    pub mode: String,
    pub value: f64,
    pub stderr: f64,
}

pub fn write_csv<W: Write>(mut out: W, rows: &[MeasureRow]) -> io::Result<()> {
    writeln!(out, "word,start,mode,value,stderr")?;
    for r in rows {
        writeln!(out, "{},{},{},{},{}", r.word, r.start, r.mode, r.value, r.stderr)?;
    }
    Ok(())
}

/// Renders a word as its labels joined by `|`.
pub fn format_word(env: &EnvSystem, word: &[usize]) -> String {
    word.iter().map(|&b| env.alphabet()[b].as_str()).collect::<Vec<_>>().join("|")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::KrausSet;
    use crate::matrix::hs_inner;
    use crate::rng::stream_rng;

    fn dep(p: f64) -> KrausSet {
        KrausSet::depolarizing(p).unwrap()
    }

    fn all_words(size: usize, n: usize) -> Vec<Vec<usize>> {
        (0..size.pow(n as u32))
            .map(|mut i| {
                let mut w = vec![0; n];
                for slot in w.iter_mut().rev() {
                    *slot = i % size;
                    i /= size;
                }
                w
            })
            .collect()
    }

    #[test]
    fn identity_ensemble_words_have_measure_one() {
        let env = EnvSystem::constant(KrausSet::identity(3)).unwrap();
        let theta = QuantumState::random_mixed(3, &mut stream_rng(0, 0));
        assert!((quenched_cylinder(&env, &EnvPoint::Constant, &theta, &[0, 0, 0]).unwrap() - 1.0).abs() < 1e-14);
        assert!(matrix_measure_cylinder(&env, &EnvPoint::Constant, &[0, 0]).unwrap().max_abs_diff(&CMatrix::identity(3)) < 1e-14);
        assert_eq!(matrix_measure_cylinder(&env, &EnvPoint::Constant, &[]).unwrap(), CMatrix::identity(3));
    }

    #[test]
    fn projective_cylinders() {
        let env = EnvSystem::constant(KrausSet::projective(2)).unwrap();
        let theta = QuantumState::diagonal(&[0.3, 0.7]).unwrap();
        let w = EnvPoint::Constant;
        assert!((quenched_cylinder(&env, &w, &theta, &[0, 0, 0, 0]).unwrap() - 0.3).abs() < 1e-14);
        assert!(quenched_cylinder(&env, &w, &theta, &[0, 1]).unwrap().abs() < 1e-14);
    }

    #[test]
    fn depolarizing_single_letters() {
        let env = EnvSystem::constant(dep(0.4)).unwrap();
        let theta = QuantumState::maximally_mixed(2);
        let got: Vec<f64> = (0..4).map(|a| quenched_cylinder(&env, &EnvPoint::Constant, &theta, &[a]).unwrap()).collect();
        // Tr(v_a v_a†)/2 computed directly
        for (a, v) in dep(0.4).ops().iter().enumerate() {
            let oracle = (v * &v.adjoint()).trace().re / 2.0;
            assert!((got[a] - oracle).abs() < 1e-14);
        }
        let expected = [0.7, 0.1, 0.1, 0.1];
        for (g, e) in got.iter().zip(expected) {
            assert!((g - e).abs() < 1e-14);
        }
        assert!((got.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn normalization_and_consistency_on_a_periodic_env() {
        let mut rng = stream_rng(1, 0);
        let env = EnvSystem::periodic((0..3).map(|_| KrausSet::random(2, 3, &mut rng)).collect()).unwrap();
        let theta = QuantumState::random_mixed(2, &mut rng);
        let w = EnvPoint::Index(1);
        for n in 1..=5 {
            let total: f64 = all_words(3, n).iter().map(|word| quenched_cylinder(&env, &w, &theta, word).unwrap()).sum();
            assert!((total - 1.0).abs() < 1e-10);
        }
        for word in all_words(3, 3) {
            let parent = quenched_cylinder(&env, &w, &theta, &word).unwrap();
            let children: f64 = (0..3)
                .map(|a| {
                    let mut ext = word.clone();
                    ext.push(a);
                    quenched_cylinder(&env, &w, &theta, &ext).unwrap()
                })
                .sum();
            assert!((parent - children).abs() < 1e-12);
        }
    }

    #[test]
    fn pairing_identity() {
        let mut rng = stream_rng(2, 0);
        let env = EnvSystem::periodic((0..2).map(|_| KrausSet::random(3, 2, &mut rng)).collect()).unwrap();
        for i in 0..20 {
            let theta = QuantumState::random_mixed(3, &mut rng);
            let word: Vec<usize> = (0..1 + i % 6).map(|j| (i + j) % 2).collect();
            let w = env.sample_invariant(&mut rng);
            let q = quenched_cylinder(&env, &w, &theta, &word).unwrap();
            let m = matrix_measure_cylinder(&env, &w, &word).unwrap();
            assert!((q - hs_inner(theta.matrix(), &m).unwrap().re).abs() < 1e-10);
        }
    }

    #[test]
    fn shift_identity_examples() {
        let mut rng = stream_rng(3, 0);
        let c = EnvSystem::constant(KrausSet::random(2, 2, &mut rng)).unwrap();
        assert_eq!(shift_identity_check(&c, &EnvPoint::Constant, 0, &[1, 0], DEFAULT_ENUMERATION_BUDGET).unwrap(), 0.0);
        assert!(shift_identity_check(&c, &EnvPoint::Constant, 3, &[1, 0], DEFAULT_ENUMERATION_BUDGET).unwrap() <= 1e-10);
        let p = EnvSystem::periodic(vec![KrausSet::random(2, 2, &mut rng), KrausSet::random(2, 2, &mut rng)]).unwrap();
        assert!(shift_identity_check(&p, &EnvPoint::Index(1), 4, &[0, 1, 1], DEFAULT_ENUMERATION_BUDGET).unwrap() <= 1e-10);
        assert!(matches!(
            shift_identity_check(&p, &EnvPoint::Index(1), 12, &[0], 1000),
            Err(Error::BudgetExceeded { needed: 4096, budget: 1000 })
        ));
    }

    #[test]
    fn start_shifted_cylinder_matches_prefix_enumeration() {
        let mut rng = stream_rng(4, 0);
        let env = EnvSystem::periodic((0..3).map(|_| KrausSet::random(2, 3, &mut rng)).collect()).unwrap();
        let theta = QuantumState::random_mixed(2, &mut rng);
        let w = EnvPoint::Index(2);
        let cyl = CylinderSet::new(3, vec![2, 0]).unwrap();
        let by_push = quenched_cylinder_set(&env, &w, &theta, &cyl).unwrap();
        let by_enum: f64 = all_words(3, 2)
            .into_iter()
            .map(|mut p| {
                p.extend_from_slice(&cyl.word);
                quenched_cylinder(&env, &w, &theta, &p).unwrap()
            })
            .sum();
        assert!((by_push - by_enum).abs() < 1e-13);
    }

    #[test]
    fn annealed_constant_and_periodic() {
        let mut rng = stream_rng(5, 0);
        let theta = QuantumState::random_mixed(2, &mut rng);
        let fixed = StateAssignment::Fixed(theta.clone());
        let k = KrausSet::random(2, 2, &mut rng);
        let c = EnvSystem::constant(k.clone()).unwrap();
        let cyl = CylinderSet::new(1, vec![1, 0]).unwrap();
        let a = annealed_cylinder(&c, &fixed, &cyl, Integration::Exact).unwrap();
        assert!((a.value - quenched_cylinder(&c, &EnvPoint::Constant, &theta, &[1, 0]).unwrap()).abs() < 1e-14);

        let p = EnvSystem::periodic(vec![k, KrausSet::random(2, 2, &mut rng)]).unwrap();
        let single = CylinderSet::new(1, vec![1]).unwrap();
        let a = annealed_cylinder(&p, &fixed, &single, Integration::Exact).unwrap();
        let avg = 0.5
            * (quenched_cylinder(&p, &EnvPoint::Index(0), &theta, &[1]).unwrap()
                + quenched_cylinder(&p, &EnvPoint::Index(1), &theta, &[1]).unwrap());
        assert!((a.value - avg).abs() < 1e-14);
    }

    #[test]
    fn markov_exact_matches_window_sum_and_mc() {
        let mut rng = stream_rng(6, 0);
        let p = vec![vec![0.8, 0.2], vec![0.3, 0.7]];
        let fibers = vec![KrausSet::random(2, 2, &mut rng), KrausSet::random(2, 2, &mut rng)];
        let env = EnvSystem::markov(p.clone(), fibers.clone(), None).unwrap();
        let theta = QuantumState::random_mixed(2, &mut rng);
        let fixed = StateAssignment::Fixed(theta.clone());
        let cyl = CylinderSet::new(2, vec![1]).unwrap();
        let exact = annealed_cylinder(&env, &fixed, &cyl, Integration::Exact).unwrap().value;
        let pi = [0.6, 0.4];
        let mut window = 0.0;
        for s1 in 0..2 {
            for s2 in 0..2 {
                let m = apply_t(&fibers[s2], 1, &apply_channel(&fibers[s1], theta.matrix()).unwrap()).unwrap();
                window += pi[s1] * p[s1][s2] * m.trace().re;
            }
        }
        assert!((exact - window).abs() < 1e-13);
        let mc = annealed_cylinder(&env, &fixed, &cyl, Integration::Mc { samples: 4000, seed: 1 }).unwrap();
        assert!((mc.value - exact).abs() <= mc.half_width, "{mc:?} vs {exact}");
    }

    #[test]
    fn torus_exact_is_unavailable() {
        let env = EnvSystem::quasiperiodic(None, crate::environment::ParametricFamily::SpinX, 1.0, dep(0.3)).unwrap();
        let fixed = StateAssignment::Fixed(QuantumState::maximally_mixed(2));
        let cyl = CylinderSet::new(1, vec![0]).unwrap();
        let err = annealed_cylinder(&env, &fixed, &cyl, Integration::Exact).unwrap_err();
        assert_eq!(err.to_string(), "measures: quadrature unavailable; use mc");
        let mc = annealed_cylinder(&env, &fixed, &cyl, Integration::Mc { samples: 200, seed: 0 }).unwrap();
        assert!((mc.value - 0.775).abs() < 1e-12);
    }

    #[test]
    fn dual_weights_reproduce_forward_values() {
        let mut rng = stream_rng(7, 0);
        let env = EnvSystem::markov(
            vec![vec![0.5, 0.5, 0.0], vec![0.1, 0.6, 0.3], vec![0.4, 0.0, 0.6]],
            (0..3).map(|_| KrausSet::random(2, 2, &mut rng)).collect(),
            None,
        )
        .unwrap();
        let init = StateAssignment::Fixed(QuantumState::random_mixed(2, &mut rng));
        let set = AnnealedSet {
            event: Some(EnvEvent { coordinate: 0, symbols: vec![true, false, true] }),
            cylinder: CylinderSet::new(2, vec![1, 0]).unwrap(),
        };
        let chain = env.finite_chain().unwrap();
        let g = annealed_dual(&env, &set).unwrap();
        let mut w = initial_weights(&env, &chain, &init).unwrap();
        for n in 0..5 {
            let forward = annealed_set(&env, &init, &set.tau_preimage(n), Integration::Exact).unwrap().value;
            let dual: f64 = w.iter().zip(&g).map(|(a, b)| hs_inner(a, b).unwrap().re).sum();
            assert!((forward - dual).abs() < 1e-13);
            w = lift_forward(&chain, &w, LiftStep::Channel).unwrap();
        }
    }

    #[test]
    fn event_sets_match_mc() {
        let env = EnvSystem::iid(vec![0.3, 0.7], vec![dep(0.1), dep(0.5)]).unwrap();
        let init = StateAssignment::Fixed(QuantumState::pure_basis(2, 0).unwrap());
        let set = AnnealedSet {
            event: Some(EnvEvent { coordinate: 1, symbols: vec![false, true] }),
            cylinder: CylinderSet::new(1, vec![0]).unwrap(),
        };
        let exact = annealed_set(&env, &init, &set, Integration::Exact).unwrap().value;
        // symbol 1 w.p. 0.7, then identity branch of depolarizing 0.5 has weight 1 − 3·0.5/4
        assert!((exact - 0.7 * 0.625).abs() < 1e-14);
        let mc = annealed_set(&env, &init, &set, Integration::Mc { samples: 4000, seed: 3 }).unwrap();
        assert!((mc.value - exact).abs() <= mc.half_width);
    }

    #[test]
    fn csv_rows() {
        let mut buf = Vec::new();
        write_csv(&mut buf, &[MeasureRow { word: "I|X".into(), start: 2, mode: "exact".into(), value: 0.07, stderr: 0.0 }]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "word,start,mode,value,stderr\nI|X,2,exact,0.07,0\n");
    }
}
