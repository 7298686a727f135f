//! Dense complex matrix kernel: quantum states, Hilbert-Schmidt pairing,
//! trace norm, the projective action `M·ϑ` and positive-semidefinite repair.
//!
//! Matrices are small (d ≤ 32) and dense. Storage is a column-major
//! `nalgebra::DMatrix<Complex64>`; all decompositions used here (Hermitian
//! eigendecomposition, SVD) are deterministic for a fixed input.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Tolerance used for the `QuantumState` invariants (Hermiticity, PSD, trace).
pub const STATE_TOL: f64 = 1e-10;

/// Normalization threshold below which `project_action` falls back to `I/d`.
pub const DEGENERATE_TOL: f64 = 1e-12;

/// Inputs within this distance of a valid state are returned untouched by
/// [`psd_repair`].
pub const REPAIR_IDENTITY_TOL: f64 = 1e-12;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// A square `d × d` complex matrix with finite entries.
#[derive(Clone, PartialEq)]
pub struct CMatrix(DMatrix<C64>);

impl fmt::Debug for CMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CMatrix{:?}", self.0.row_iter().map(|r| r.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>())
    }
}

impl CMatrix {
    /// Wraps a dense matrix, checking that it is square, non-empty and finite.
    pub fn from_dmatrix(m: DMatrix<C64>) -> Result<Self> {
        if m.nrows() == 0 || m.nrows() != m.ncols() {
            return Err(Error::InvalidMatrix(format!(
                "expected a non-empty square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if !m.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            return Err(Error::InvalidMatrix("non-finite entry".into()));
        }
        Ok(CMatrix(m))
    }

    pub fn zeros(dim: usize) -> Self {
        CMatrix(DMatrix::zeros(dim, dim))
    }

    pub fn identity(dim: usize) -> Self {
        CMatrix(DMatrix::identity(dim, dim))
    }

    pub fn from_fn(dim: usize, f: impl FnMut(usize, usize) -> C64) -> Self {
        CMatrix(DMatrix::from_fn(dim, dim, f))
    }

    /// Builds a matrix from row-major rows.
    pub fn from_rows(rows: &[Vec<C64>]) -> Result<Self> {
        let d = rows.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidMatrix(format!("rows do not form a {d}x{d} matrix")));
        }
        Self::from_dmatrix(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
    }

    /// Builds a matrix from paired real and imaginary row-major arrays.
    pub fn from_re_im(re: &[Vec<f64>], im: Option<&[Vec<f64>]>) -> Result<Self> {
        let d = re.len();
        if re.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidMatrix(format!("real part is not a {d}x{d} array")));
        }
        if let Some(im) = im {
            if im.len() != d || im.iter().any(|r| r.len() != d) {
                return Err(Error::InvalidMatrix(format!("imaginary part is not a {d}x{d} array")));
            }
        }
        Self::from_dmatrix(DMatrix::from_fn(d, d, |i, j| {
            C64::new(re[i][j], im.map_or(0.0, |im| im[i][j]))
        }))
    }

    pub fn diag(values: &[f64]) -> Self {
        let d = values.len();
        CMatrix(DMatrix::from_fn(d, d, |i, j| if i == j { C64::new(values[i], 0.0) } else { ZERO }))
    }

    /// The matrix unit `|i⟩⟨j|`.
    pub fn ket_bra(dim: usize, i: usize, j: usize) -> Self {
        let mut m = DMatrix::zeros(dim, dim);
        m[(i, j)] = ONE;
        CMatrix(m)
    }

    /// Matrix with i.i.d. standard complex Gaussian entries.
    pub fn random_gaussian<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        CMatrix(DMatrix::from_fn(dim, dim, |_, _| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
        }))
    }

    pub fn random_hermitian<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        let g = Self::random_gaussian(dim, rng);
        (&g + &g.adjoint()).scale_real(0.5)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.0[(i, j)]
    }

    pub fn as_dmatrix(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn into_dmatrix(self) -> DMatrix<C64> {
        self.0
    }

    pub fn adjoint(&self) -> Self {
        CMatrix(self.0.adjoint())
    }

    pub fn trace(&self) -> C64 {
        self.0.trace()
    }

    pub fn scale(&self, z: C64) -> Self {
        CMatrix(&self.0 * z)
    }

    pub fn scale_real(&self, x: f64) -> Self {
        CMatrix(self.0.map(|z| z * x))
    }

    /// `v · self · v†`
    pub fn conjugate_by(&self, v: &CMatrix) -> Self {
        CMatrix(&v.0 * &self.0 * v.0.adjoint())
    }

    /// `v† · self · v`
    pub fn conjugate_by_adjoint(&self, v: &CMatrix) -> Self {
        CMatrix(v.0.adjoint() * &self.0 * &v.0)
    }

    /// Column-major vectorization; `vec(A X B) = (Bᵀ ⊗ A) vec(X)`.
    pub fn vectorize(&self) -> DVector<C64> {
        DVector::from_column_slice(self.0.as_slice())
    }

    pub fn from_vector(dim: usize, v: &DVector<C64>) -> Self {
        CMatrix(DMatrix::from_column_slice(dim, dim, v.as_slice()))
    }

    pub fn max_abs_diff(&self, other: &CMatrix) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Trace norm of `self − self†`.
    pub fn hermitian_defect(&self) -> f64 {
        trace_norm(&(self - &self.adjoint()))
    }

    /// Eigenvalues of the Hermitian part `(M + M†)/2`, ascending.
    pub fn hermitian_eigenvalues(&self) -> Vec<f64> {
        let h = (&self.0 + self.0.adjoint()) * C64::new(0.5, 0.0);
        let mut ev: Vec<f64> = h.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    fn check_same_dim(&self, other: &CMatrix) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch { left: self.dim(), right: other.dim() });
        }
        Ok(())
    }
}

impl<'a> Add<&'a CMatrix> for &'a CMatrix {
    type Output = CMatrix;
    fn add(self, rhs: &'a CMatrix) -> CMatrix {
        CMatrix(&self.0 + &rhs.0)
    }
}

impl<'a> Sub<&'a CMatrix> for &'a CMatrix {
    type Output = CMatrix;
    fn sub(self, rhs: &'a CMatrix) -> CMatrix {
        CMatrix(&self.0 - &rhs.0)
    }
}

impl<'a> Mul<&'a CMatrix> for &'a CMatrix {
    type Output = CMatrix;
    fn mul(self, rhs: &'a CMatrix) -> CMatrix {
        CMatrix(&self.0 * &rhs.0)
    }
}

/// Hilbert-Schmidt inner product `⟨M, L⟩ = Tr(M† L)`, conjugate-linear in `M`.
pub fn hs_inner(m: &CMatrix, l: &CMatrix) -> Result<C64> {
    m.check_same_dim(l)?;
    Ok(m.0.iter().zip(l.0.iter()).map(|(a, b)| a.conj() * b).sum())
}

/// Schatten 1-norm: the sum of singular values.
pub fn trace_norm(m: &CMatrix) -> f64 {
    m.0.clone().svd(false, false).singular_values.sum()
}

/// A density matrix: Hermitian, positive semi-definite, unit trace.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantumState(CMatrix);

impl QuantumState {
    /// Validates `m` against the state invariants at [`STATE_TOL`].
    pub fn new(m: CMatrix) -> Result<Self> {
        let defect = m.hermitian_defect();
        if defect > STATE_TOL {
            return Err(Error::InvalidState(format!("not Hermitian (defect {defect:e})")));
        }
        let tr = m.trace();
        if (tr - ONE).norm() > STATE_TOL {
            return Err(Error::InvalidState(format!("trace {tr} != 1")));
        }
        let min = m.hermitian_eigenvalues()[0];
        if min < -STATE_TOL {
            return Err(Error::InvalidState(format!("negative eigenvalue {min:e}")));
        }
        Ok(QuantumState(m))
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        QuantumState(CMatrix::identity(dim).scale_real(1.0 / dim as f64))
    }

    /// The pure state `|k⟩⟨k|` of the computational basis.
    pub fn pure_basis(dim: usize, k: usize) -> Result<Self> {
        if k >= dim {
            return Err(Error::InvalidState(format!("basis index {k} out of range for d={dim}")));
        }
        Ok(QuantumState(CMatrix::ket_bra(dim, k, k)))
    }

    /// `|ψ⟩⟨ψ|/⟨ψ|ψ⟩` for a non-zero vector `ψ`.
    pub fn from_ket(psi: &[C64]) -> Result<Self> {
        let norm2: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        if norm2 <= DEGENERATE_TOL || !norm2.is_finite() {
            return Err(Error::InvalidState("zero or non-finite ket".into()));
        }
        let d = psi.len();
        Ok(QuantumState(CMatrix::from_fn(d, |i, j| psi[i] * psi[j].conj() / norm2)))
    }

    /// Diagonal state from a probability vector.
    pub fn diagonal(probs: &[f64]) -> Result<Self> {
        Self::new(CMatrix::diag(probs))
    }

    /// Ginibre-distributed mixed state `GG†/Tr(GG†)`.
    pub fn random_mixed<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        let g = CMatrix::random_gaussian(dim, rng);
        let p = &g * &g.adjoint();
        let t = p.trace().re;
        QuantumState(p.scale_real(1.0 / t))
    }

    /// Haar-random pure state.
    pub fn random_pure<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        let psi: Vec<C64> = (0..dim)
            .map(|_| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
            .collect();
        Self::from_ket(&psi).expect("gaussian ket is non-zero with probability one")
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    /// `‖self − other‖₁` (twice the trace distance).
    pub fn trace_norm_distance(&self, other: &QuantumState) -> f64 {
        trace_norm(&(&self.0 - &other.0))
    }
}

/// The projective action `M·ϑ`: `MϑM†/Tr(MϑM†)`, or `I/d` when the
/// normalization is at most `tol`.
pub fn project_action(m: &CMatrix, state: &QuantumState, tol: f64) -> Result<QuantumState> {
    m.check_same_dim(state.matrix())?;
    let raw = state.matrix().conjugate_by(m);
    let t = raw.trace().re;
    if t > tol {
        psd_repair(&raw.scale_real(1.0 / t))
    } else {
        Ok(QuantumState::maximally_mixed(m.dim()))
    }
}

/// Symmetrizes, clips negative eigenvalues and renormalizes the trace.
///
/// Inputs that already satisfy the state invariants within
/// [`REPAIR_IDENTITY_TOL`] (with no negative eigenvalue) are returned as-is,
/// which also makes the repair idempotent.
pub fn psd_repair(raw: &CMatrix) -> Result<QuantumState> {
    let d = raw.dim();
    let h = (&raw.0 + raw.0.adjoint()) * C64::new(0.5, 0.0);
    let asym = raw.0.iter().zip(h.iter()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    let eig = h.clone().symmetric_eigen();
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let tr: f64 = eig.eigenvalues.iter().sum();

    if min >= 0.0 && asym <= REPAIR_IDENTITY_TOL && (tr - 1.0).abs() <= REPAIR_IDENTITY_TOL {
        return Ok(QuantumState(raw.clone()));
    }
    if min >= 0.0 {
        if tr < DEGENERATE_TOL {
            return Err(Error::NullState(tr));
        }
        return Ok(QuantumState(CMatrix(h / C64::new(tr, 0.0))));
    }
    let clipped: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
    let total: f64 = clipped.iter().sum();
    if total < DEGENERATE_TOL {
        return Err(Error::NullState(total));
    }
    let v = &eig.eigenvectors;
    let mut out = DMatrix::zeros(d, d);
    for (k, &lam) in clipped.iter().enumerate() {
        if lam == 0.0 {
            continue;
        }
        let col = v.column(k);
        out += (col * col.adjoint()) * C64::new(lam / total, 0.0);
    }
    Ok(QuantumState(CMatrix(out)))
}

/// `exp(−i t H)` for Hermitian `H`, via its eigendecomposition.
pub fn unitary_exp(h: &CMatrix, t: f64) -> CMatrix {
    let herm = (&h.0 + h.0.adjoint()) * C64::new(0.5, 0.0);
    let eig = herm.symmetric_eigen();
    let v = &eig.eigenvectors;
    let phases = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| C64::from_polar(1.0, -t * l)));
    CMatrix(v * phases * v.adjoint())
}

/// Pauli matrices, handy for fixtures and tests.
pub mod pauli {
    use super::{CMatrix, C64, I, ONE, ZERO};

    pub fn x() -> CMatrix {
        CMatrix::from_rows(&[vec![ZERO, ONE], vec![ONE, ZERO]]).unwrap()
    }

    pub fn y() -> CMatrix {
        CMatrix::from_rows(&[vec![ZERO, -I], vec![I, ZERO]]).unwrap()
    }

    pub fn z() -> CMatrix {
        CMatrix::from_rows(&[vec![ONE, ZERO], vec![ZERO, C64::new(-1.0, 0.0)]]).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn hs_inner_examples() {
        let id = CMatrix::identity(2);
        assert_eq!(hs_inner(&id, &id).unwrap(), C64::new(2.0, 0.0));
        assert_eq!(hs_inner(&pauli::x(), &pauli::z()).unwrap(), ZERO);
        assert!(matches!(
            hs_inner(&id, &CMatrix::identity(3)),
            Err(Error::DimensionMismatch { left: 2, right: 3 })
        ));
    }

    #[test]
    fn hs_inner_matches_double_loop() {
        let mut r = rng(7);
        let m = CMatrix::random_gaussian(3, &mut r);
        let l = CMatrix::random_gaussian(3, &mut r);
        let mut expected = ZERO;
        for i in 0..3 {
            for j in 0..3 {
                expected += m.get(i, j).conj() * l.get(i, j);
            }
        }
        assert!((hs_inner(&m, &l).unwrap() - expected).norm() < 1e-12);
        // conjugate-linear in the first slot
        let z = C64::new(0.3, -1.2);
        let lhs = hs_inner(&m.scale(z), &l).unwrap();
        assert!((lhs - z.conj() * expected).norm() < 1e-12);
    }

    #[test]
    fn trace_norm_examples() {
        assert!((trace_norm(&CMatrix::identity(5)) - 5.0).abs() < 1e-12);
        assert!((trace_norm(&CMatrix::diag(&[1.0, -2.0])) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn trace_norm_of_hermitian_is_sum_of_abs_eigenvalues() {
        let h = CMatrix::random_hermitian(4, &mut rng(11));
        let eig = h.as_dmatrix().clone().symmetric_eigen();
        let expected: f64 = eig.eigenvalues.iter().map(|l| l.abs()).sum();
        assert!((trace_norm(&h) - expected).abs() < 1e-10);
    }

    #[test]
    fn project_action_examples() {
        let mut r = rng(3);
        let theta = QuantumState::random_mixed(3, &mut r);
        let out = project_action(&CMatrix::identity(3), &theta, DEGENERATE_TOL).unwrap();
        assert!(out.matrix().max_abs_diff(theta.matrix()) < 1e-14);

        let p0 = CMatrix::ket_bra(2, 0, 0);
        let out = project_action(&p0, &QuantumState::maximally_mixed(2), DEGENERATE_TOL).unwrap();
        assert!(out.matrix().max_abs_diff(&p0) < 1e-15);

        let one = QuantumState::pure_basis(2, 1).unwrap();
        let out = project_action(&p0, &one, DEGENERATE_TOL).unwrap();
        assert_eq!(out, QuantumState::maximally_mixed(2));
    }

    #[test]
    fn psd_repair_examples() {
        let s = QuantumState::diagonal(&[0.3, 0.7]).unwrap();
        assert_eq!(psd_repair(s.matrix()).unwrap(), s);

        let out = psd_repair(&CMatrix::diag(&[1.0 + 1e-13, -1e-13])).unwrap();
        assert!(out.matrix().max_abs_diff(&CMatrix::diag(&[1.0, 0.0])) < 1e-15);
        assert!(out.matrix().hermitian_eigenvalues()[0] >= 0.0);

        let out = psd_repair(&CMatrix::diag(&[0.6, 0.6])).unwrap();
        assert!(out.matrix().max_abs_diff(&CMatrix::diag(&[0.5, 0.5])) < 1e-15);
    }

    #[test]
    fn psd_repair_rejects_null_state() {
        assert!(matches!(
            psd_repair(&CMatrix::diag(&[-0.5, 1e-14])),
            Err(Error::NullState(_))
        ));
    }

    #[test]
    fn state_validation() {
        assert!(QuantumState::new(CMatrix::diag(&[0.5, 0.6])).is_err());
        assert!(QuantumState::new(CMatrix::diag(&[1.2, -0.2])).is_err());
        assert!(QuantumState::new(CMatrix::ket_bra(2, 0, 1)).is_err());
        assert!(QuantumState::pure_basis(2, 2).is_err());
        assert!(CMatrix::from_re_im(&[vec![f64::NAN]], None).is_err());
        assert!(CMatrix::from_re_im(&[vec![1.0, 0.0]], None).is_err());
    }

    #[test]
    fn random_states_are_valid() {
        let mut r = rng(5);
        for d in 1..=5 {
            QuantumState::new(QuantumState::random_mixed(d, &mut r).into_matrix()).unwrap();
            QuantumState::new(QuantumState::random_pure(d, &mut r).into_matrix()).unwrap();
        }
    }

    #[test]
    fn unitary_exp_of_pauli_x() {
        let u = unitary_exp(&pauli::x(), 0.7);
        let expected = &CMatrix::identity(2).scale_real(0.7f64.cos()) - &pauli::x().scale(I * 0.7f64.sin());
        assert!(u.max_abs_diff(&expected) < 1e-14);
        assert!((&u * &u.adjoint()).max_abs_diff(&CMatrix::identity(2)) < 1e-14);
    }

    #[test]
    fn vectorization_round_trip_and_kronecker_rule() {
        let mut r = rng(9);
        let a = CMatrix::random_gaussian(3, &mut r);
        let x = CMatrix::random_gaussian(3, &mut r);
        let b = CMatrix::random_gaussian(3, &mut r);
        let lhs = (&(&a * &x) * &b).vectorize();
        let rhs = b.as_dmatrix().transpose().kronecker(a.as_dmatrix()) * x.vectorize();
        assert!((lhs - rhs).norm() < 1e-12);
        assert_eq!(CMatrix::from_vector(3, &x.vectorize()), x);
    }
}
