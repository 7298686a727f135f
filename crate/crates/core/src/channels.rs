//! Kraus sets, the single-outcome super-operators `T_a(M) = v_a M v_a†`,
//! channels `φ = Σ_a T_a`, forward compositions and word operators.

use std::borrow::Borrow;
use std::collections::HashSet;

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::{pauli, trace_norm, unitary_exp, CMatrix, C64};

/// Stochasticity tolerance for a single Kraus set.
pub const CPTP_TOL: f64 = 1e-10;

/// Allowed trace-preservation drift after composing channels.
pub const COMPOSITION_TOL: f64 = 1e-9;

/// One fiber `{v_a}_{a∈𝒜}` of a random Kraus ensemble. Outcomes are
/// identified by their position in the ordered alphabet.
#[derive(Clone, Debug, PartialEq)]
pub struct KrausSet {
    labels: Vec<String>,
    ops: Vec<CMatrix>,
}

impl KrausSet {
    /// Checks shapes and labels only; stochasticity is reported by
    /// [`kraus_validate`] and enforced by [`channel_of`].
    pub fn new(labels: Vec<String>, ops: Vec<CMatrix>) -> Result<Self> {
        if ops.is_empty() {
            return Err(Error::Channel("a Kraus set needs at least one operator".into()));
        }
        if labels.len() != ops.len() {
            return Err(Error::Channel(format!(
                "{} labels for {} operators",
                labels.len(),
                ops.len()
            )));
        }
        let mut seen = HashSet::new();
        for l in &labels {
            if !seen.insert(l.as_str()) {
                return Err(Error::Channel(format!("duplicate outcome label `{l}`")));
            }
        }
        let d = ops[0].dim();
        if let Some(bad) = ops.iter().find(|m| m.dim() != d) {
            return Err(Error::DimensionMismatch { left: d, right: bad.dim() });
        }
        Ok(KrausSet { labels, ops })
    }

    /// Labels the operators `"0"`, `"1"`, ...
    pub fn unlabeled(ops: Vec<CMatrix>) -> Result<Self> {
        let labels = (0..ops.len()).map(|i| i.to_string()).collect();
        Self::new(labels, ops)
    }

    /// `{I}` with the single label `"id"`.
    pub fn identity(dim: usize) -> Self {
        KrausSet { labels: vec!["id".into()], ops: vec![CMatrix::identity(dim)] }
    }

    /// Computational-basis projective measurement `{|k⟩⟨k|}`, labels `"0".."d-1"`.
    pub fn projective(dim: usize) -> Self {
        Self::unlabeled((0..dim).map(|k| CMatrix::ket_bra(dim, k, k)).collect()).unwrap()
    }

    /// Qubit depolarizing channel `{√(1−3p/4) I, √(p/4) X, √(p/4) Y, √(p/4) Z}`.
    pub fn depolarizing(p: f64) -> Result<Self> {
        if !(0.0..=4.0 / 3.0).contains(&p) {
            return Err(Error::Channel(format!("depolarizing parameter {p} outside [0, 4/3]")));
        }
        let a = (1.0 - 0.75 * p).sqrt();
        let b = (0.25 * p).sqrt();
        Self::new(
            ["I", "X", "Y", "Z"].iter().map(|s| s.to_string()).collect(),
            vec![
                CMatrix::identity(2).scale_real(a),
                pauli::x().scale_real(b),
                pauli::y().scale_real(b),
                pauli::z().scale_real(b),
            ],
        )
    }

    /// Qubit amplitude damping `{|0⟩⟨0| + √(1−γ)|1⟩⟨1|, √γ |0⟩⟨1|}`.
    pub fn amplitude_damping(gamma: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::Channel(format!("damping rate {gamma} outside [0, 1]")));
        }
        Self::unlabeled(vec![
            CMatrix::diag(&[1.0, (1.0 - gamma).sqrt()]),
            CMatrix::ket_bra(2, 0, 1).scale_real(gamma.sqrt()),
        ])
    }

    /// Diagonal measurement `v_a = diag(√w_a)`, where `weights[a][k]` is the
    /// probability of outcome `a` in basis state `k`.
    pub fn diagonal_measurement(weights: &[Vec<f64>]) -> Result<Self> {
        let ops = weights
            .iter()
            .map(|w| {
                if w.iter().any(|&x| x.is_nan() || x < 0.0) {
                    return Err(Error::Channel("negative measurement weight".into()));
                }
                Ok(CMatrix::diag(&w.iter().map(|x| x.sqrt()).collect::<Vec<_>>()))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::unlabeled(ops)
    }

    /// A random valid Kraus set: Gaussian `G_a` normalized by `(Σ G_a†G_a)^{-1/2}`.
    pub fn random<R: Rng + ?Sized>(dim: usize, outcomes: usize, rng: &mut R) -> Self {
        let gs: Vec<CMatrix> = (0..outcomes).map(|_| CMatrix::random_gaussian(dim, rng)).collect();
        let mut s = CMatrix::zeros(dim);
        for g in &gs {
            s = &s + &(&g.adjoint() * g);
        }
        let eig = s.as_dmatrix().clone().symmetric_eigen();
        let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| C64::new(l.powf(-0.5), 0.0)));
        let norm = CMatrix::from_dmatrix(&eig.eigenvectors * inv_sqrt * eig.eigenvectors.adjoint())
            .expect("Gaussian Gram matrix is invertible with probability one");
        Self::unlabeled(gs.iter().map(|g| g * &norm).collect()).unwrap()
    }

    /// `{u v_a}`: the same measurement followed by the unitary `u`.
    pub fn premultiply(&self, u: &CMatrix) -> Result<Self> {
        if u.dim() != self.dim() {
            return Err(Error::DimensionMismatch { left: self.dim(), right: u.dim() });
        }
        Ok(KrausSet { labels: self.labels.clone(), ops: self.ops.iter().map(|v| u * v).collect() })
    }

    pub fn dim(&self) -> usize {
        self.ops[0].dim()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn ops(&self) -> &[CMatrix] {
        &self.ops
    }

    pub fn op(&self, a: usize) -> Result<&CMatrix> {
        self.ops.get(a).ok_or(Error::UnknownLabel { index: a, size: self.ops.len() })
    }

    pub fn index_of(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::Channel(format!("unknown outcome label `{label}`")))
    }
}

/// Outcome of [`kraus_validate`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValidationReport {
    pub pass: bool,
    /// `‖Σ_a v_a†v_a − I‖₁`
    pub residual: f64,
}

pub fn kraus_validate(k: &KrausSet) -> ValidationReport {
    let d = k.dim();
    let mut sum = CMatrix::zeros(d);
    for v in k.ops() {
        sum = &sum + &(&v.adjoint() * v);
    }
    let residual = trace_norm(&(&sum - &CMatrix::identity(d)));
    ValidationReport { pass: residual <= CPTP_TOL, residual }
}

fn check_dim(k: &KrausSet, m: &CMatrix) -> Result<()> {
    if k.dim() != m.dim() {
        return Err(Error::DimensionMismatch { left: k.dim(), right: m.dim() });
    }
    Ok(())
}

/// `T_a(M) = v_a M v_a†`
pub fn apply_t(k: &KrausSet, a: usize, m: &CMatrix) -> Result<CMatrix> {
    check_dim(k, m)?;
    Ok(m.conjugate_by(k.op(a)?))
}

/// `T_a†(M) = v_a† M v_a`
pub fn apply_t_adjoint(k: &KrausSet, a: usize, m: &CMatrix) -> Result<CMatrix> {
    check_dim(k, m)?;
    Ok(m.conjugate_by_adjoint(k.op(a)?))
}

/// `φ(M) = Σ_a v_a M v_a†`, summed directly in Kraus form.
pub fn apply_channel(k: &KrausSet, m: &CMatrix) -> Result<CMatrix> {
    check_dim(k, m)?;
    let mut out = CMatrix::zeros(k.dim());
    for v in k.ops() {
        out = &out + &m.conjugate_by(v);
    }
    Ok(out)
}

/// `φ†(M) = Σ_a v_a† M v_a`
pub fn apply_channel_adjoint(k: &KrausSet, m: &CMatrix) -> Result<CMatrix> {
    check_dim(k, m)?;
    let mut out = CMatrix::zeros(k.dim());
    for v in k.ops() {
        out = &out + &m.conjugate_by_adjoint(v);
    }
    Ok(out)
}

/// A linear map on `d × d` matrices, stored as its `d² × d²` matrix acting on
/// column-major vectorizations.
#[derive(Clone, Debug, PartialEq)]
pub struct SuperOp {
    dim: usize,
    mat: DMatrix<C64>,
    cptp: bool,
}

impl SuperOp {
    pub fn identity(dim: usize) -> Self {
        SuperOp { dim, mat: DMatrix::identity(dim * dim, dim * dim), cptp: true }
    }

    /// The super-operator `M ↦ v M v†`, i.e. `conj(v) ⊗ v`.
    pub fn conjugation(v: &CMatrix) -> Self {
        let m = v.as_dmatrix();
        SuperOp { dim: v.dim(), mat: m.conjugate().kronecker(m), cptp: false }
    }

    /// Wraps a raw `d² × d²` matrix; the result is not flagged CPTP.
    pub fn from_matrix(dim: usize, mat: DMatrix<C64>) -> Result<Self> {
        if mat.nrows() != dim * dim || mat.ncols() != dim * dim {
            return Err(Error::Channel(format!(
                "super-operator for d={dim} must be {0}x{0}, got {1}x{2}",
                dim * dim,
                mat.nrows(),
                mat.ncols()
            )));
        }
        Ok(SuperOp { dim, mat, cptp: false })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.mat
    }

    pub fn is_cptp(&self) -> bool {
        self.cptp
    }

    pub fn apply(&self, m: &CMatrix) -> Result<CMatrix> {
        if m.dim() != self.dim {
            return Err(Error::DimensionMismatch { left: self.dim, right: m.dim() });
        }
        Ok(CMatrix::from_vector(self.dim, &(&self.mat * m.vectorize())))
    }

    /// The Hilbert-Schmidt adjoint. CPTP maps become unital, so the flag is dropped.
    pub fn adjoint(&self) -> Self {
        SuperOp { dim: self.dim, mat: self.mat.adjoint(), cptp: false }
    }

    /// `next ∘ self`: apply `self` first.
    pub fn then(&self, next: &SuperOp) -> Result<Self> {
        if next.dim != self.dim {
            return Err(Error::DimensionMismatch { left: self.dim, right: next.dim });
        }
        Ok(SuperOp { dim: self.dim, mat: &next.mat * &self.mat, cptp: self.cptp && next.cptp })
    }

    pub fn add(&self, other: &SuperOp) -> Result<Self> {
        if other.dim != self.dim {
            return Err(Error::DimensionMismatch { left: self.dim, right: other.dim });
        }
        Ok(SuperOp { dim: self.dim, mat: &self.mat + &other.mat, cptp: false })
    }

    pub fn power(&self, n: u32) -> Self {
        let mut out = SuperOp::identity(self.dim);
        for _ in 0..n {
            out.mat = &self.mat * &out.mat;
        }
        out.cptp = self.cptp || n == 0;
        out
    }

    /// `‖φ†(I) − I‖₁`; zero for trace-preserving maps.
    pub fn trace_preservation_residual(&self) -> f64 {
        let id = CMatrix::identity(self.dim);
        let back = self.adjoint().apply(&id).expect("dimension matches by construction");
        trace_norm(&(&back - &id))
    }
}

/// `φ_K = Σ_a T_a` as a CPTP-flagged super-operator.
pub fn channel_of(k: &KrausSet) -> Result<SuperOp> {
    let report = kraus_validate(k);
    if !report.pass {
        return Err(Error::NotStochastic { name: format!("{:?}", k.labels()), residual: report.residual });
    }
    let d = k.dim();
    let mut mat = DMatrix::zeros(d * d, d * d);
    for v in k.ops() {
        mat += SuperOp::conjugation(v).mat;
    }
    Ok(SuperOp { dim: d, mat, cptp: true })
}

/// `φ_N ∘ ⋯ ∘ φ_1` for `chain = [K_1, …, K_N]`; the identity for an empty chain.
pub fn compose_forward<K: Borrow<KrausSet>>(dim: usize, chain: &[K]) -> Result<SuperOp> {
    let mut out = SuperOp::identity(dim);
    for k in chain {
        let k = k.borrow();
        if k.dim() != dim {
            return Err(Error::DimensionMismatch { left: dim, right: k.dim() });
        }
        out = out.then(&channel_of(k)?)?;
    }
    Ok(out)
}

/// `V(a_1..a_n) = v^{(n)}_{a_n} ⋯ v^{(1)}_{a_1}`, later steps on the left.
pub fn word_operator<K: Borrow<KrausSet>>(dim: usize, chain: &[K], word: &[usize]) -> Result<CMatrix> {
    if chain.len() != word.len() {
        return Err(Error::Channel(format!(
            "chain of length {} for a word of length {}",
            chain.len(),
            word.len()
        )));
    }
    let mut v = CMatrix::identity(dim);
    for (k, &a) in chain.iter().zip(word) {
        let k = k.borrow();
        if k.dim() != dim {
            return Err(Error::DimensionMismatch { left: dim, right: k.dim() });
        }
        v = k.op(a)? * &v;
    }
    Ok(v)
}

/// Qubit rotation `exp(−i θ σ/2)` about a Pauli axis.
pub fn qubit_rotation(axis: char, angle: f64) -> Result<CMatrix> {
    let sigma = match axis {
        'x' | 'X' => pauli::x(),
        'y' | 'Y' => pauli::y(),
        'z' | 'Z' => pauli::z(),
        other => return Err(Error::Channel(format!("unknown rotation axis `{other}`"))),
    };
    Ok(unitary_exp(&sigma, 0.5 * angle))
}
