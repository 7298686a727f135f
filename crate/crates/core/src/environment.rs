//! Invertible ergodic base systems `(Ω, ℙ, θ)` and the fiber assignment
//! `ω ↦ 𝒱_ω`.
//!
//! Five kinds are supported:
//!
//! | kind            | Ω                         | θ                         | ℙ              |
//! |-----------------|---------------------------|---------------------------|----------------|
//! | `constant`      | a single point            | identity                  | point mass     |
//! | `periodic`      | `{0, …, K−1}`             | `k ↦ k+1 mod K`           | uniform        |
//! | `quasiperiodic` | the circle `[0, 1)`       | `x ↦ x + α mod 1`         | Lebesgue       |
//! | `iid`           | `S^ℤ`, finite `S`         | left shift                | product law    |
//! | `markov`        | `S^ℤ`, finite `S`         | left shift                | stationary chain |
//!
//! Circle points are stored in 64-bit fixed point so the rotation is exactly
//! invertible. The default rotation number is `(√5 − 1)/2` rounded to the
//! nearest double; as a binary fraction it is rational, which is harmless over
//! orbit lengths far below `2^53`.
//!
//! Sequence points (`iid`, `markov`) are two-sided sequences realized lazily:
//! coordinate 0 and the forward symbols come from ChaCha stream 0 of the
//! point's seed, the backward symbols from stream 1 using the time-reversed
//! chain. Realized symbols are cached, so a point and all its shifts describe
//! one fixed bi-infinite sequence.

use std::borrow::Cow;
use std::fmt;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::channels::{kraus_validate, KrausSet};
use crate::error::{Error, Result};
use crate::matrix::{unitary_exp, CMatrix, QuantumState};
use crate::rng::stream_rng;

/// Default quasiperiodic rotation number, `(√5 − 1)/2`.
pub const GOLDEN_ALPHA: f64 = 0.618_033_988_749_894_9;

const ROW_SUM_TOL: f64 = 1e-12;
const USER_STATIONARY_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub enum EnvKind {
    Constant,
    Periodic { period: usize },
    Quasiperiodic { alpha: f64 },
    Iid { weights: Vec<f64> },
    Markov { transition: Vec<Vec<f64>>, stationary: Vec<f64> },
}

impl EnvKind {
    pub fn name(&self) -> &'static str {
        match self {
            EnvKind::Constant => "constant",
            EnvKind::Periodic { .. } => "periodic",
            EnvKind::Quasiperiodic { .. } => "quasiperiodic",
            EnvKind::Iid { .. } => "iid",
            EnvKind::Markov { .. } => "markov",
        }
    }
}

/// Named unitary families `x ↦ U(x) = exp(−i·2π·c·x·H)` used to build circle
/// fibers `v_a(x) = U(x) v_a`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParametricFamily {
    /// `H = diag(0, 1, …, d−1)`.
    Phase,
    /// `H = J_x`, the spin-`(d−1)/2` x-generator; for a qubit this is a
    /// rotation by angle `2πcx` about the x axis.
    SpinX,
}

impl ParametricFamily {
    pub const NAMES: [&'static str; 2] = ["phase", "spin_x"];

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "phase" => Ok(ParametricFamily::Phase),
            "spin_x" => Ok(ParametricFamily::SpinX),
            other => Err(Error::Environment(format!(
                "unknown parametric family `{other}` (known: {})",
                Self::NAMES.join(", ")
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ParametricFamily::Phase => "phase",
            ParametricFamily::SpinX => "spin_x",
        }
    }

    fn generator(&self, dim: usize) -> CMatrix {
        match self {
            ParametricFamily::Phase => CMatrix::diag(&(0..dim).map(|k| k as f64).collect::<Vec<_>>()),
            ParametricFamily::SpinX => {
                let j = (dim as f64 - 1.0) / 2.0;
                CMatrix::from_fn(dim, |r, c| {
                    if r + 1 == c || c + 1 == r {
                        let k = r.max(c);
                        let m = j - k as f64;
                        (0.5 * (j * (j + 1.0) - m * (m + 1.0)).sqrt()).into()
                    } else {
                        0.0.into()
                    }
                })
            }
        }
    }
}

#[derive(Clone, Debug)]
struct Parametric {
    family: ParametricFamily,
    coupling: f64,
    base: KrausSet,
    generator: CMatrix,
}

impl Parametric {
    fn unitary(&self, x: f64) -> CMatrix {
        unitary_exp(&self.generator, 2.0 * std::f64::consts::PI * self.coupling * x)
    }
}

#[derive(Clone, Debug)]
enum Fibers {
    Table(Vec<KrausSet>),
    Parametric(Parametric),
}

/// Transition law of a two-sided stationary symbol sequence.
#[derive(Debug, PartialEq)]
struct SequenceLaw {
    stationary_cum: Vec<f64>,
    forward_cum: Vec<Vec<f64>>,
    backward_cum: Vec<Vec<f64>>,
}

fn cumulative(row: &[f64]) -> Vec<f64> {
    row.iter()
        .scan(0.0, |acc, &p| {
            *acc += p;
            Some(*acc)
        })
        .collect()
}

/// Inverse-CDF draw; residual roundoff mass goes to the last positive entry.
fn draw(cum: &[f64], u: f64) -> usize {
    if let Some(k) = cum.iter().position(|&c| u < c) {
        return k;
    }
    let mut prev = 0.0;
    let mut last = 0;
    for (k, &c) in cum.iter().enumerate() {
        if c > prev {
            last = k;
        }
        prev = c;
    }
    last
}

#[derive(Debug)]
struct SequenceCache {
    forward: Vec<usize>,
    backward: Vec<usize>,
    fwd_rng: ChaCha8Rng,
    bwd_rng: ChaCha8Rng,
}

#[derive(Debug)]
struct Realization {
    seed: u64,
    law: Arc<SequenceLaw>,
    cache: Mutex<SequenceCache>,
}

impl Realization {
    fn new(seed: u64, law: Arc<SequenceLaw>) -> Self {
        Realization {
            seed,
            law,
            cache: Mutex::new(SequenceCache {
                forward: Vec::new(),
                backward: Vec::new(),
                fwd_rng: stream_rng(seed, 0),
                bwd_rng: stream_rng(seed, 1),
            }),
        }
    }

    fn symbol(&self, index: i64) -> usize {
        let mut c = self.cache.lock().expect("sequence cache poisoned");
        let c = &mut *c;
        if c.forward.is_empty() {
            let u: f64 = c.fwd_rng.random();
            c.forward.push(draw(&self.law.stationary_cum, u));
        }
        if index >= 0 {
            let i = index as usize;
            while c.forward.len() <= i {
                let prev = *c.forward.last().unwrap();
                let u: f64 = c.fwd_rng.random();
                c.forward.push(draw(&self.law.forward_cum[prev], u));
            }
            c.forward[i]
        } else {
            let j = (-(index + 1)) as usize;
            while c.backward.len() <= j {
                let prev = c.backward.last().copied().unwrap_or(c.forward[0]);
                let u: f64 = c.bwd_rng.random();
                c.backward.push(draw(&self.law.backward_cum[prev], u));
            }
            c.backward[j]
        }
    }

    fn detached(&self) -> Self {
        let c = self.cache.lock().expect("sequence cache poisoned");
        Realization {
            seed: self.seed,
            law: Arc::clone(&self.law),
            cache: Mutex::new(SequenceCache {
                forward: c.forward.clone(),
                backward: c.backward.clone(),
                fwd_rng: c.fwd_rng.clone(),
                bwd_rng: c.bwd_rng.clone(),
            }),
        }
    }
}

/// A point of the circle in 64-bit fixed point: `x = k / 2^64`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TorusPoint(pub u64);

impl TorusPoint {
    pub fn from_coordinate(x: f64) -> Self {
        let x = x.rem_euclid(1.0);
        TorusPoint((x * 18_446_744_073_709_551_616.0) as u64)
    }

    /// The coordinate in `[0, 1)`, truncated to 53 bits.
    pub fn coordinate(&self) -> f64 {
        (self.0 >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
    }
}

/// A point of a two-sided symbol sequence, viewed from coordinate `offset`.
#[derive(Clone, Debug)]
pub struct SequencePoint {
    realization: Arc<Realization>,
    offset: i64,
}

impl SequencePoint {
    pub fn seed(&self) -> u64 {
        self.realization.seed
    }

    pub fn offset(&self) -> i64 {
        self.offset
    }

    /// Symbol at coordinate `k` relative to this point (`k = 0` is the point itself).
    pub fn symbol(&self, k: i64) -> usize {
        self.realization.symbol(self.offset + k)
    }

    fn shifted(&self, n: i64) -> Self {
        SequencePoint { realization: Arc::clone(&self.realization), offset: self.offset + n }
    }
}

impl PartialEq for SequencePoint {
    fn eq(&self, other: &Self) -> bool {
        self.offset == other.offset
            && self.realization.seed == other.realization.seed
            && (Arc::ptr_eq(&self.realization.law, &other.realization.law)
                || self.realization.law == other.realization.law)
    }
}

/// `ω ∈ Ω`, tagged by environment kind.
#[derive(Clone, Debug, PartialEq)]
pub enum EnvPoint {
    Constant,
    Index(usize),
    Torus(TorusPoint),
    Sequence(SequencePoint),
}

impl EnvPoint {
    /// A copy that owns a private symbol cache, for handing to another worker.
    pub fn detached(&self) -> Self {
        match self {
            EnvPoint::Sequence(p) => EnvPoint::Sequence(SequencePoint {
                realization: Arc::new(p.realization.detached()),
                offset: p.offset,
            }),
            other => other.clone(),
        }
    }
}

impl fmt::Display for EnvPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnvPoint::Constant => write!(f, "const"),
            EnvPoint::Index(k) => write!(f, "k={k}"),
            EnvPoint::Torus(t) => write!(f, "x={}", t.coordinate()),
            EnvPoint::Sequence(p) => write!(f, "seq(seed={},offset={})", p.seed(), p.offset),
        }
    }
}

/// Finite-state Markov description of an environment whose fibers depend on
/// one symbol: the fiber at `θⁿω` is `fibers[s_n]`, where `(s_n)` is a
/// stationary chain with the given law.
#[derive(Clone, Debug)]
pub struct FiniteChain<'a> {
    pub stationary: Vec<f64>,
    pub transition: Vec<Vec<f64>>,
    pub fibers: &'a [KrausSet],
}

/// An ergodic invertible environment together with its fiber map.
#[derive(Clone, Debug)]
pub struct EnvSystem {
    kind: EnvKind,
    fibers: Fibers,
    law: Option<Arc<SequenceLaw>>,
    alpha_fixed: u64,
}

fn check_fibers(fibers: &[KrausSet]) -> Result<()> {
    let first = fibers
        .first()
        .ok_or_else(|| Error::Environment("at least one fiber is required".into()))?;
    for (i, k) in fibers.iter().enumerate() {
        if k.dim() != first.dim() {
            return Err(Error::Environment(format!(
                "fiber {i} has dimension {} but fiber 0 has {}",
                k.dim(),
                first.dim()
            )));
        }
        if k.labels() != first.labels() {
            return Err(Error::Environment(format!(
                "alphabet mismatch: fiber {i} has {:?} but fiber 0 has {:?}",
                k.labels(),
                first.labels()
            )));
        }
        let report = kraus_validate(k);
        if !report.pass {
            return Err(Error::NotStochastic { name: format!("fiber {i}"), residual: report.residual });
        }
    }
    Ok(())
}

fn check_probability_row(row: &[f64], what: &str) -> Result<()> {
    if row.iter().any(|&p| p < 0.0 || !p.is_finite()) {
        return Err(Error::Environment(format!("{what} has a negative or non-finite entry")));
    }
    let s: f64 = row.iter().sum();
    if (s - 1.0).abs() > ROW_SUM_TOL {
        return Err(Error::Environment(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

fn is_irreducible(p: &[Vec<f64>]) -> bool {
    let k = p.len();
    let reach = |forward: bool| {
        let mut seen = vec![false; k];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(s) = stack.pop() {
            for t in 0..k {
                let w = if forward { p[s][t] } else { p[t][s] };
                if w > 0.0 && !seen[t] {
                    seen[t] = true;
                    stack.push(t);
                }
            }
        }
        seen.into_iter().all(|b| b)
    };
    reach(true) && reach(false)
}

/// Solves `πP = π`, `Σπ = 1` by a direct linear solve.
pub fn stationary_distribution(p: &[Vec<f64>]) -> Result<Vec<f64>> {
    let k = p.len();
    let mut a = DMatrix::from_fn(k, k, |i, j| p[j][i] - if i == j { 1.0 } else { 0.0 });
    for j in 0..k {
        a[(k - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(k);
    b[k - 1] = 1.0;
    let pi = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Environment("transition matrix has no unique stationary law".into()))?;
    Ok(pi.iter().map(|&x| x.max(0.0)).collect())
}

impl EnvSystem {
    fn finite(kind: EnvKind, fibers: Vec<KrausSet>, law: Option<Arc<SequenceLaw>>) -> Result<Self> {
        check_fibers(&fibers)?;
        Ok(EnvSystem { kind, fibers: Fibers::Table(fibers), law, alpha_fixed: 0 })
    }

    pub fn constant(fiber: KrausSet) -> Result<Self> {
        Self::finite(EnvKind::Constant, vec![fiber], None)
    }

    /// `fibers[k]` is the Kraus set at index `k`; the period is `fibers.len()`.
    pub fn periodic(fibers: Vec<KrausSet>) -> Result<Self> {
        let period = fibers.len();
        Self::finite(EnvKind::Periodic { period }, fibers, None)
    }

    pub fn iid(weights: Vec<f64>, fibers: Vec<KrausSet>) -> Result<Self> {
        if weights.len() != fibers.len() {
            return Err(Error::Environment(format!(
                "{} weights for {} fibers",
                weights.len(),
                fibers.len()
            )));
        }
        check_probability_row(&weights, "iid weights")?;
        let cum = cumulative(&weights);
        let law = SequenceLaw {
            stationary_cum: cum.clone(),
            forward_cum: vec![cum.clone(); weights.len()],
            backward_cum: vec![cum; weights.len()],
        };
        Self::finite(EnvKind::Iid { weights }, fibers, Some(Arc::new(law)))
    }

    /// Markov environment; the stationary law is solved for and checked
    /// against `stationary` when supplied.
    pub fn markov(transition: Vec<Vec<f64>>, fibers: Vec<KrausSet>, stationary: Option<Vec<f64>>) -> Result<Self> {
        let k = transition.len();
        if k != fibers.len() {
            return Err(Error::Environment(format!("{k} chain states for {} fibers", fibers.len())));
        }
        for (i, row) in transition.iter().enumerate() {
            if row.len() != k {
                return Err(Error::Environment(format!("transition row {i} has length {}", row.len())));
            }
            check_probability_row(row, &format!("transition row {i}"))?;
        }
        if !is_irreducible(&transition) {
            return Err(Error::Environment("transition matrix is not irreducible".into()));
        }
        let pi = stationary_distribution(&transition)?;
        let defect: f64 = (0..k)
            .map(|j| ((0..k).map(|i| pi[i] * transition[i][j]).sum::<f64>() - pi[j]).abs())
            .sum();
        if defect > ROW_SUM_TOL {
            return Err(Error::Environment(format!("stationary law residual {defect:e}")));
        }
        if let Some(user) = &stationary {
            let diff: f64 = user.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum::<f64>()
                + (user.len() as f64 - k as f64).abs();
            if diff > USER_STATIONARY_TOL {
                return Err(Error::Environment(format!(
                    "supplied stationary law {user:?} disagrees with solved {pi:?}"
                )));
            }
        }
        let backward: Vec<Vec<f64>> = (0..k)
            .map(|s| (0..k).map(|t| if pi[s] > 0.0 { pi[t] * transition[t][s] / pi[s] } else { 0.0 }).collect())
            .collect();
        let law = SequenceLaw {
            stationary_cum: cumulative(&pi),
            forward_cum: transition.iter().map(|r| cumulative(r)).collect(),
            backward_cum: backward.iter().map(|r| cumulative(r)).collect(),
        };
        Self::finite(EnvKind::Markov { transition, stationary: pi }, fibers, Some(Arc::new(law)))
    }

    /// Circle rotation by `alpha` with fibers `U(x)·base` from a named family.
    pub fn quasiperiodic(alpha: Option<f64>, family: ParametricFamily, coupling: f64, base: KrausSet) -> Result<Self> {
        let alpha = alpha.unwrap_or(GOLDEN_ALPHA);
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::Environment(format!("rotation number {alpha} outside [0, 1)")));
        }
        if !coupling.is_finite() {
            return Err(Error::Environment("non-finite coupling".into()));
        }
        check_fibers(std::slice::from_ref(&base))?;
        let generator = family.generator(base.dim());
        Ok(EnvSystem {
            kind: EnvKind::Quasiperiodic { alpha },
            fibers: Fibers::Parametric(Parametric { family, coupling, base, generator }),
            law: None,
            alpha_fixed: TorusPoint::from_coordinate(alpha).0,
        })
    }

    pub fn kind(&self) -> &EnvKind {
        &self.kind
    }

    pub fn kind_name(&self) -> &'static str {
        self.kind.name()
    }

    pub fn dim(&self) -> usize {
        self.reference_fiber().dim()
    }

    pub fn alphabet(&self) -> &[String] {
        self.reference_fiber().labels()
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet().len()
    }

    fn reference_fiber(&self) -> &KrausSet {
        match &self.fibers {
            Fibers::Table(t) => &t[0],
            Fibers::Parametric(p) => &p.base,
        }
    }

    /// The explicit fiber table of a finite kind.
    pub fn fiber_table(&self) -> Option<&[KrausSet]> {
        match &self.fibers {
            Fibers::Table(t) => Some(t),
            Fibers::Parametric(_) => None,
        }
    }

    pub fn parametric_family(&self) -> Option<(ParametricFamily, f64)> {
        match &self.fibers {
            Fibers::Parametric(p) => Some((p.family, p.coupling)),
            Fibers::Table(_) => None,
        }
    }

    /// Number of distinct symbols, for the finite kinds.
    pub fn num_symbols(&self) -> Option<usize> {
        self.fiber_table().map(|t| t.len())
    }

    /// Period of θ on fibers (1 for non-periodic kinds).
    pub fn period(&self) -> usize {
        match self.kind {
            EnvKind::Periodic { period } => period,
            _ => 1,
        }
    }

    pub fn is_finite(&self) -> bool {
        !matches!(self.kind, EnvKind::Quasiperiodic { .. })
    }

    /// Draws `ω ~ ℙ`.
    pub fn sample_invariant<R: Rng + ?Sized>(&self, rng: &mut R) -> EnvPoint {
        match &self.kind {
            EnvKind::Constant => EnvPoint::Constant,
            EnvKind::Periodic { period } => EnvPoint::Index(rng.random_range(0..*period)),
            EnvKind::Quasiperiodic { .. } => EnvPoint::Torus(TorusPoint(rng.next_u64())),
            EnvKind::Iid { .. } | EnvKind::Markov { .. } => self.sequence_point(rng.next_u64()),
        }
    }

    /// The sequence point with the given realization seed, at offset 0.
    pub fn sequence_point(&self, seed: u64) -> EnvPoint {
        let law = self.law.as_ref().expect("sequence_point on a non-sequence environment");
        EnvPoint::Sequence(SequencePoint { realization: Arc::new(Realization::new(seed, Arc::clone(law))), offset: 0 })
    }

    /// Checks that `omega` is a point of this environment.
    pub fn check_point(&self, omega: &EnvPoint) -> Result<()> {
        let ok = match (&self.kind, omega) {
            (EnvKind::Constant, EnvPoint::Constant) => true,
            (EnvKind::Periodic { period }, EnvPoint::Index(k)) => k < period,
            (EnvKind::Quasiperiodic { .. }, EnvPoint::Torus(_)) => true,
            (EnvKind::Iid { .. } | EnvKind::Markov { .. }, EnvPoint::Sequence(p)) => {
                self.law.as_ref().is_some_and(|l| **l == *p.realization.law)
            }
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Environment(format!("point {omega} does not belong to a {} environment", self.kind_name())))
        }
    }

    /// `θⁿ(ω)` for any `n ∈ ℤ`.
    pub fn advance(&self, omega: &EnvPoint, n: i64) -> EnvPoint {
        match (&self.kind, omega) {
            (EnvKind::Constant, EnvPoint::Constant) => EnvPoint::Constant,
            (EnvKind::Periodic { period }, EnvPoint::Index(k)) => {
                EnvPoint::Index((*k as i64 + n).rem_euclid(*period as i64) as usize)
            }
            (EnvKind::Quasiperiodic { .. }, EnvPoint::Torus(t)) => {
                EnvPoint::Torus(TorusPoint(t.0.wrapping_add(self.alpha_fixed.wrapping_mul(n as u64))))
            }
            (EnvKind::Iid { .. } | EnvKind::Markov { .. }, EnvPoint::Sequence(p)) => EnvPoint::Sequence(p.shifted(n)),
            _ => panic!("point {omega} does not belong to a {} environment", self.kind_name()),
        }
    }

    /// `θ(ω)`
    pub fn step(&self, omega: &EnvPoint) -> EnvPoint {
        self.advance(omega, 1)
    }

    /// `θ⁻¹(ω)`
    pub fn step_back(&self, omega: &EnvPoint) -> EnvPoint {
        self.advance(omega, -1)
    }

    /// The symbol selecting the fiber at `ω` (finite kinds only).
    pub fn symbol(&self, omega: &EnvPoint) -> Option<usize> {
        match omega {
            EnvPoint::Constant => Some(0),
            EnvPoint::Index(k) => Some(*k),
            EnvPoint::Sequence(p) => Some(p.symbol(0)),
            EnvPoint::Torus(_) => None,
        }
    }

    /// The fiber `𝒱_ω`.
    pub fn ensemble_at(&self, omega: &EnvPoint) -> Cow<'_, KrausSet> {
        match (&self.fibers, omega) {
            (Fibers::Parametric(p), EnvPoint::Torus(t)) => Cow::Owned(
                p.base.premultiply(&p.unitary(t.coordinate())).expect("generator has the base dimension"),
            ),
            (Fibers::Table(table), _) => {
                let s = self.symbol(omega).expect("finite environments have symbols");
                Cow::Borrowed(&table[s])
            }
            _ => panic!("point {omega} does not belong to a {} environment", self.kind_name()),
        }
    }

    /// Fibers at `θ(ω), θ²(ω), …, θⁿ(ω)`.
    pub fn fibers_along(&self, omega: &EnvPoint, n: usize) -> Vec<Cow<'_, KrausSet>> {
        let mut out = Vec::with_capacity(n);
        let mut w = omega.clone();
        for _ in 0..n {
            w = self.step(&w);
            out.push(self.ensemble_at(&w));
        }
        out
    }

    /// Finite Markov description of the finite kinds.
    pub fn finite_chain(&self) -> Option<FiniteChain<'_>> {
        let fibers = self.fiber_table()?;
        let k = fibers.len();
        let (stationary, transition) = match &self.kind {
            EnvKind::Constant => (vec![1.0], vec![vec![1.0]]),
            EnvKind::Periodic { period } => (
                vec![1.0 / *period as f64; *period],
                (0..k).map(|i| (0..k).map(|j| if j == (i + 1) % k { 1.0 } else { 0.0 }).collect()).collect(),
            ),
            EnvKind::Iid { weights } => (weights.clone(), vec![weights.clone(); k]),
            EnvKind::Markov { transition, stationary } => (stationary.clone(), transition.clone()),
            EnvKind::Quasiperiodic { .. } => return None,
        };
        Some(FiniteChain { stationary, transition, fibers })
    }
}

/// A state assignment `ω ↦ ϑ_ω`.
#[derive(Clone)]
pub enum StateAssignment {
    Fixed(QuantumState),
    /// One state per symbol of a finite environment.
    PerSymbol(Vec<QuantumState>),
    Custom(Arc<dyn Fn(&EnvPoint) -> QuantumState + Send + Sync>),
}

impl fmt::Debug for StateAssignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StateAssignment::Fixed(s) => f.debug_tuple("Fixed").field(s).finish(),
            StateAssignment::PerSymbol(v) => f.debug_tuple("PerSymbol").field(v).finish(),
            StateAssignment::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl StateAssignment {
    pub fn state_at(&self, env: &EnvSystem, omega: &EnvPoint) -> Result<QuantumState> {
        let state = match self {
            StateAssignment::Fixed(s) => s.clone(),
            StateAssignment::PerSymbol(states) => {
                let s = env.symbol(omega).ok_or_else(|| {
                    Error::Environment("per-symbol state assignment on an environment without symbols".into())
                })?;
                states.get(s).cloned().ok_or_else(|| {
                    Error::Environment(format!("no state assigned to symbol {s} ({} given)", states.len()))
                })?
            }
            StateAssignment::Custom(f) => f(omega),
        };
        if state.dim() != env.dim() {
            return Err(Error::DimensionMismatch { left: state.dim(), right: env.dim() });
        }
        Ok(state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::qubit_rotation;
    use crate::rng::stream_rng;

    fn dep(p: f64) -> KrausSet {
        KrausSet::depolarizing(p).unwrap()
    }

    fn markov_env() -> EnvSystem {
        EnvSystem::markov(
            vec![vec![0.8, 0.2], vec![0.3, 0.7]],
            vec![dep(0.4), dep(0.1)],
            Some(vec![0.6, 0.4]),
        )
        .unwrap()
    }

    fn within_3_sigma(count: usize, n: usize, p: f64) -> bool {
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        (count as f64 / n as f64 - p).abs() <= 3.0 * sigma
    }

    #[test]
    fn constant_environment() {
        let env = EnvSystem::constant(dep(0.4)).unwrap();
        let w = env.sample_invariant(&mut stream_rng(0, 0));
        assert_eq!(w, EnvPoint::Constant);
        assert_eq!(env.step(&w), w);
        assert_eq!(*env.ensemble_at(&w), dep(0.4));
    }

    #[test]
    fn periodic_invariant_frequencies() {
        let env = EnvSystem::periodic(vec![dep(0.1), dep(0.2), dep(0.3), dep(0.4)]).unwrap();
        let mut rng = stream_rng(1, 0);
        let n = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            match env.sample_invariant(&mut rng) {
                EnvPoint::Index(k) => counts[k] += 1,
                other => panic!("unexpected {other}"),
            }
        }
        for c in counts {
            assert!(within_3_sigma(c, n, 0.25), "{counts:?}");
        }
    }

    #[test]
    fn periodic_fibers_alternate() {
        let a = dep(0.1);
        let b = dep(0.3);
        let env = EnvSystem::periodic(vec![a.clone(), b.clone()]).unwrap();
        let w0 = EnvPoint::Index(0);
        assert_eq!(*env.ensemble_at(&w0), a);
        assert_eq!(*env.ensemble_at(&env.step(&w0)), b);
        assert_eq!(env.advance(&w0, 2), w0);
    }

    #[test]
    fn markov_invariant_and_shifted_frequencies() {
        let env = markov_env();
        let mut rng = stream_rng(2, 0);
        let n = 20_000;
        let (mut at0, mut at1, mut at_back) = (0, 0, 0);
        for _ in 0..n {
            let w = env.sample_invariant(&mut rng);
            at0 += (env.symbol(&w) == Some(0)) as usize;
            at1 += (env.symbol(&env.step(&w)) == Some(0)) as usize;
            at_back += (env.symbol(&env.step_back(&w)) == Some(0)) as usize;
        }
        assert!(within_3_sigma(at0, n, 0.6));
        assert!(within_3_sigma(at1, n, 0.6));
        assert!(within_3_sigma(at_back, n, 0.6));
    }

    #[test]
    fn markov_pair_law_forward_and_backward() {
        // P(s_0 = 0, s_1 = 1) = π_0 P_01 = 0.12 ; P(s_{-1} = 1, s_0 = 0) = π_1 P_10 = 0.12
        let env = markov_env();
        let mut rng = stream_rng(3, 0);
        let n = 20_000;
        let (mut fwd, mut bwd) = (0, 0);
        for _ in 0..n {
            let EnvPoint::Sequence(p) = env.sample_invariant(&mut rng) else { unreachable!() };
            fwd += (p.symbol(0) == 0 && p.symbol(1) == 1) as usize;
            bwd += (p.symbol(-1) == 1 && p.symbol(0) == 0) as usize;
        }
        assert!(within_3_sigma(fwd, n, 0.12));
        assert!(within_3_sigma(bwd, n, 0.12));
    }

    #[test]
    fn markov_stationary_is_solved_and_checked() {
        let env = markov_env();
        match env.kind() {
            EnvKind::Markov { stationary, .. } => {
                assert!((stationary[0] - 0.6).abs() < 1e-14 && (stationary[1] - 0.4).abs() < 1e-14)
            }
            _ => unreachable!(),
        }
        let wrong = EnvSystem::markov(vec![vec![0.8, 0.2], vec![0.3, 0.7]], vec![dep(0.4), dep(0.1)], Some(vec![0.5, 0.5]));
        assert!(wrong.is_err());
        let reducible = EnvSystem::markov(vec![vec![1.0, 0.0], vec![0.3, 0.7]], vec![dep(0.4), dep(0.1)], None);
        assert!(reducible.is_err());
        let not_stochastic = EnvSystem::markov(vec![vec![0.9, 0.2], vec![0.3, 0.7]], vec![dep(0.4), dep(0.1)], None);
        assert!(not_stochastic.is_err());
    }

    #[test]
    fn iid_weights_must_sum_to_one() {
        assert!(EnvSystem::iid(vec![0.5, 0.6], vec![dep(0.1), dep(0.2)]).is_err());
        assert!(EnvSystem::iid(vec![0.5, 0.5], vec![dep(0.1), dep(0.2)]).is_ok());
    }

    #[test]
    fn quasiperiodic_rotation() {
        let env = EnvSystem::quasiperiodic(Some(0.25), ParametricFamily::SpinX, 1.0, dep(0.2)).unwrap();
        let w = EnvPoint::Torus(TorusPoint::from_coordinate(0.9));
        let EnvPoint::Torus(t) = env.step(&w) else { unreachable!() };
        assert!((t.coordinate() - 0.15).abs() < 1e-15);
    }

    #[test]
    fn step_back_inverts_step_for_every_kind() {
        let envs = vec![
            EnvSystem::constant(dep(0.4)).unwrap(),
            EnvSystem::periodic(vec![dep(0.1), dep(0.2), dep(0.3)]).unwrap(),
            EnvSystem::quasiperiodic(None, ParametricFamily::SpinX, 1.0, dep(0.2)).unwrap(),
            EnvSystem::iid(vec![0.3, 0.7], vec![dep(0.1), dep(0.2)]).unwrap(),
            markov_env(),
        ];
        let mut rng = stream_rng(4, 0);
        for env in &envs {
            for _ in 0..100 {
                let w = env.sample_invariant(&mut rng);
                assert_eq!(env.step_back(&env.step(&w)), w, "{}", env.kind_name());
                assert_eq!(env.step(&env.step_back(&w)), w, "{}", env.kind_name());
                assert_eq!(env.advance(&env.advance(&w, 17), -17), w);
                env.check_point(&w).unwrap();
            }
        }
    }

    #[test]
    fn sequence_shifts_share_one_realization() {
        let env = markov_env();
        let w = env.sample_invariant(&mut stream_rng(5, 0));
        let EnvPoint::Sequence(p) = &w else { unreachable!() };
        let later = env.advance(&w, 5);
        assert_eq!(env.symbol(&later), Some(p.symbol(5)));
        let earlier = env.advance(&w, -3);
        assert_eq!(env.symbol(&earlier), Some(p.symbol(-3)));
        // realization does not depend on the order symbols were requested in
        let fresh = env.sequence_point(p.seed());
        let EnvPoint::Sequence(q) = fresh else { unreachable!() };
        let back: Vec<usize> = (-10..0).rev().map(|k| q.symbol(k)).collect();
        let back_ref: Vec<usize> = (-10..0).rev().map(|k| p.symbol(k)).collect();
        assert_eq!(back, back_ref);
        assert_eq!(w.detached(), w);
    }

    #[test]
    fn ensemble_at_is_deterministic_and_valid_on_the_circle() {
        let base = dep(0.3);
        let env = EnvSystem::quasiperiodic(None, ParametricFamily::SpinX, 1.0, base).unwrap();
        let mut rng = stream_rng(6, 0);
        for _ in 0..1000 {
            let w = env.sample_invariant(&mut rng);
            let k = env.ensemble_at(&w);
            assert!(kraus_validate(&k).pass);
            assert_eq!(*k, *env.ensemble_at(&w));
        }
        let phase = EnvSystem::quasiperiodic(None, ParametricFamily::Phase, 2.0, KrausSet::projective(3)).unwrap();
        let w = phase.sample_invariant(&mut rng);
        assert!(kraus_validate(&phase.ensemble_at(&w)).pass);
    }

    #[test]
    fn spin_x_family_is_an_x_rotation_for_qubits() {
        let env = EnvSystem::quasiperiodic(None, ParametricFamily::SpinX, 1.0, KrausSet::identity(2)).unwrap();
        let x = 0.3;
        let k = env.ensemble_at(&EnvPoint::Torus(TorusPoint::from_coordinate(x)));
        let expected = qubit_rotation('x', 2.0 * std::f64::consts::PI * TorusPoint::from_coordinate(x).coordinate()).unwrap();
        assert!(k.ops()[0].max_abs_diff(&expected) < 1e-12);
    }

    #[test]
    fn fiber_configuration_errors() {
        let two = KrausSet::projective(2);
        let other_labels = KrausSet::new(vec!["a".into(), "b".into()], two.ops().to_vec()).unwrap();
        assert!(matches!(
            EnvSystem::periodic(vec![two.clone(), other_labels]),
            Err(Error::Environment(m)) if m.contains("alphabet mismatch")
        ));
        let bad = KrausSet::unlabeled(vec![CMatrix::identity(2), CMatrix::identity(2)]).unwrap();
        assert!(matches!(
            EnvSystem::periodic(vec![two, bad]),
            Err(Error::NotStochastic { name, .. }) if name == "fiber 1"
        ));
        assert!(ParametricFamily::from_name("nope").is_err());
    }

    #[test]
    fn finite_chain_descriptions() {
        let env = EnvSystem::periodic(vec![dep(0.1), dep(0.2), dep(0.3)]).unwrap();
        let c = env.finite_chain().unwrap();
        assert_eq!(c.transition[2][0], 1.0);
        assert_eq!(c.stationary, vec![1.0 / 3.0; 3]);
        let q = EnvSystem::quasiperiodic(None, ParametricFamily::Phase, 1.0, dep(0.1)).unwrap();
        assert!(q.finite_chain().is_none());
    }

    #[test]
    fn state_assignments() {
        let env = EnvSystem::periodic(vec![dep(0.1), dep(0.2)]).unwrap();
        let per = StateAssignment::PerSymbol(vec![QuantumState::pure_basis(2, 0).unwrap(), QuantumState::pure_basis(2, 1).unwrap()]);
        let s = per.state_at(&env, &EnvPoint::Index(1)).unwrap();
        assert_eq!(s, QuantumState::pure_basis(2, 1).unwrap());
        let q = EnvSystem::quasiperiodic(None, ParametricFamily::Phase, 1.0, dep(0.1)).unwrap();
        assert!(per.state_at(&q, &EnvPoint::Torus(TorusPoint(0))).is_err());
        let wrong_dim = StateAssignment::Fixed(QuantumState::maximally_mixed(3));
        assert!(wrong_dim.state_at(&env, &EnvPoint::Index(0)).is_err());
    }

    #[test]
    fn draw_assigns_residual_mass_to_last_positive_entry() {
        assert_eq!(draw(&[0.5, 0.9999999999, 0.9999999999], 0.99999999995), 1);
        assert_eq!(draw(&[0.5, 1.0], 0.2), 0);
    }
}
