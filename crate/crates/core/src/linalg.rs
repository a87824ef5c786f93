//! Dense real symmetric linear algebra: eigendecomposition, clamped matrix
//! powers, and construction of the unit-trace reduction operator.
//!
//! Matrix functions are evaluated spectrally: `f(A) = sum_k f(s_k) u_k u_k^T`
//! over the eigenpairs of `A`. Eigenvalues below the condition floor
//! `s_max / kappa` are either discarded (set to zero) or floored before the
//! power is applied, which keeps inverse square roots bounded.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

/// Absolute tolerance for the symmetry of inputs.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Dense real symmetric matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    entries: Vec<f64>,
}

impl SymMatrix {
    /// Build from row-major entries, checking symmetry within [`SYMMETRY_TOL`].
    ///
    /// The stored matrix is symmetrized as `(A + A^T) / 2` to absorb
    /// accumulation error from the caller.
    pub fn new(dim: usize, entries: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::DimensionMismatch { context: "SymMatrix dim must be >= 1".into() });
        }
        if entries.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                context: format!("expected {} entries for dim {}, got {}", dim * dim, dim, entries.len()),
            });
        }
        // Reject with the worst-violating pair so the caller can locate the bug.
        let mut worst = (0usize, 0usize, 0.0f64);
        for a in 0..dim {
            for b in (a + 1)..dim {
                let delta = (entries[a * dim + b] - entries[b * dim + a]).abs();
                if delta > worst.2 {
                    worst = (a, b, delta);
                }
            }
        }
        if worst.2 > SYMMETRY_TOL {
            return Err(Error::NotSymmetric { row: worst.0, col: worst.1, delta: worst.2 });
        }
        let mut sym = entries;
        for a in 0..dim {
            for b in (a + 1)..dim {
                let m = 0.5 * (sym[a * dim + b] + sym[b * dim + a]);
                sym[a * dim + b] = m;
                sym[b * dim + a] = m;
            }
        }
        Ok(SymMatrix { dim, entries: sym })
    }

    /// Build from an `nalgebra` matrix, symmetry-checked.
    pub fn from_dmatrix(m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                context: format!("matrix is {}x{}, expected square", m.nrows(), m.ncols()),
            });
        }
        let dim = m.nrows();
        let mut entries = vec![0.0; dim * dim];
        for a in 0..dim {
            for b in 0..dim {
                entries[a * dim + b] = m[(a, b)];
            }
        }
        SymMatrix::new(dim, entries)
    }

    pub fn identity(dim: usize) -> Self {
        let mut entries = vec![0.0; dim * dim];
        for a in 0..dim {
            entries[a * dim + a] = 1.0;
        }
        SymMatrix { dim, entries }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let dim = diag.len();
        let mut entries = vec![0.0; dim * dim];
        for a in 0..dim {
            entries[a * dim + a] = diag[a];
        }
        SymMatrix { dim, entries }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries[row * self.dim + col]
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|a| self.get(a, a)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.entries.iter().map(|e| e * e).sum::<f64>().sqrt()
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |a, b| self.get(a, b))
    }

    /// Matrix-vector product.
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        self.to_dmatrix() * v
    }
}

/// Full spectrum of a symmetric matrix, descending, with orthonormal vectors.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub values: Vec<f64>,
    /// Column `j` pairs with `values[j]`.
    pub vectors: Vec<DVector<f64>>,
}

impl EigenDecomposition {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Vectors as columns of a dense matrix.
    pub fn basis_matrix(&self) -> DMatrix<f64> {
        let dim = self.dim();
        DMatrix::from_fn(dim, dim, |r, c| self.vectors[c][r])
    }
}

/// Condition-number clamp for matrix powers.
///
/// Eigenvalues below `s_max / kappa` are excluded from powering: zeroed under
/// [`ClampMode::Discard`], raised to the floor under [`ClampMode::Floor`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClampPolicy {
    pub kappa: f64,
    pub mode: ClampMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ClampMode {
    Discard,
    Floor,
}

impl ClampPolicy {
    pub fn new(kappa: f64, mode: ClampMode) -> Result<Self> {
        if !kappa.is_finite() || kappa <= 1.0 {
            return Err(Error::InvalidConfig(format!(
                "clamp kappa must be finite and > 1, got {kappa}"
            )));
        }
        Ok(ClampPolicy { kappa, mode })
    }

    pub fn discard(kappa: f64) -> Result<Self> {
        ClampPolicy::new(kappa, ClampMode::Discard)
    }

    /// A clamp so wide it never activates at f64 precision.
    pub fn inactive() -> Self {
        ClampPolicy { kappa: 1e300, mode: ClampMode::Discard }
    }
}

/// Signed half-power selector for [`mat_power_half`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HalfPower {
    /// `A^{+1/2}`
    Sqrt,
    /// `A^{-1/2}`
    InvSqrt,
}

/// Full eigendecomposition of a symmetric matrix, eigenvalues descending.
///
/// Ties keep the pre-sort order (stable), and each vector is sign-fixed so
/// its largest-magnitude entry is positive.
pub fn sym_eig(a: &SymMatrix) -> Result<EigenDecomposition> {
    let m = a.to_dmatrix();
    let eig = m.clone().symmetric_eigen();
    let dim = a.dim();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&p, &q| {
        eig.eigenvalues[q]
            .partial_cmp(&eig.eigenvalues[p])
            .expect("eigenvalues of a real symmetric matrix are finite")
    });
    let mut values = Vec::with_capacity(dim);
    let mut vectors = Vec::with_capacity(dim);
    for &k in &order {
        values.push(eig.eigenvalues[k]);
        let mut v: DVector<f64> = eig.eigenvectors.column(k).into_owned();
        sign_fix(&mut v);
        vectors.push(v);
    }
    Ok(EigenDecomposition { values, vectors })
}

/// Sign convention: the largest-magnitude entry of each eigenvector is positive.
fn sign_fix(v: &mut DVector<f64>) {
    let mut best = 0usize;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}

/// Clamped signed half-power `A^{+-1/2}` of a positive-semidefinite matrix.
///
/// The power is applied only to eigenvalues at or above `s_max / kappa`;
/// the rest are zeroed (discard) or set to the floor before powering.
/// Eigenvalues in `[-1e-10 * s_max, floor)` are treated as clamped zeros,
/// anything more negative is rejected.
pub fn mat_power_half(a: &SymMatrix, sign: HalfPower, clamp: ClampPolicy) -> Result<SymMatrix> {
    let eig = sym_eig(a)?;
    let s_max = eig.values[0];
    if s_max <= 0.0 {
        return Err(Error::BelowConditionFloor);
    }
    let min = *eig.values.last().expect("non-empty spectrum");
    if min < -1e-10 * s_max {
        return Err(Error::NotPositiveSemidefinite { min_eigenvalue: min });
    }
    let floor = s_max / clamp.kappa;
    let dim = a.dim();
    let mut out = DMatrix::<f64>::zeros(dim, dim);
    for (value, vector) in eig.values.iter().zip(&eig.vectors) {
        let kept = if *value >= floor {
            *value
        } else {
            match clamp.mode {
                ClampMode::Discard => continue,
                ClampMode::Floor => floor,
            }
        };
        let powered = match sign {
            HalfPower::Sqrt => kept.sqrt(),
            HalfPower::InvSqrt => 1.0 / kept.sqrt(),
        };
        out.ger(powered, vector, vector, 1.0);
    }
    SymMatrix::from_dmatrix(&symmetrize(&out))
}

/// Unit-trace reduction operator `S_W^{-1/2} S_B S_W^{-1/2} / trace(...)`.
///
/// `sw` must be positive definite after regularization and `sb` positive
/// semidefinite; the clamp governs the inverse square root of `sw`.
pub fn build_rho(sw: &SymMatrix, sb: &SymMatrix, clamp: ClampPolicy) -> Result<SymMatrix> {
    if sw.dim() != sb.dim() {
        return Err(Error::DimensionMismatch {
            context: format!("sw is {}x{0}, sb is {1}x{1}", sw.dim(), sb.dim()),
        });
    }
    let inv_half = mat_power_half(sw, HalfPower::InvSqrt, clamp)?;
    let w = inv_half.to_dmatrix();
    let raw = &w * sb.to_dmatrix() * &w;
    let trace = raw.trace();
    if trace <= 0.0 {
        return Err(Error::NotPositiveSemidefinite { min_eigenvalue: trace });
    }
    SymMatrix::from_dmatrix(&symmetrize(&(raw / trace)))
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    0.5 * (m + m.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rejects_asymmetric_input_naming_worst_pair() {
        let err = SymMatrix::new(2, vec![1.0, 2.0, 3.0, 1.0]).unwrap_err();
        match err {
            Error::NotSymmetric { row, col, delta } => {
                assert_eq!((row, col), (0, 1));
                assert_abs_diff_eq!(delta, 1.0, epsilon = 1e-15);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn identity_spectrum() {
        let eig = sym_eig(&SymMatrix::identity(2)).unwrap();
        assert_eq!(eig.values, vec![1.0, 1.0]);
        for i in 0..2 {
            for j in 0..2 {
                let dot = eig.vectors[i].dot(&eig.vectors[j]);
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(dot, expect, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn diagonal_spectrum_descending() {
        let a = SymMatrix::new(2, vec![2.0, 0.0, 0.0, 1.0]).unwrap();
        let eig = sym_eig(&a).unwrap();
        assert_abs_diff_eq!(eig.values[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(eig.values[1], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(eig.vectors[0][0].abs(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(eig.vectors[1][1].abs(), 1.0, epsilon = 1e-12);
        // sign convention: dominant entry positive
        assert!(eig.vectors[0][0] > 0.0);
        assert!(eig.vectors[1][1] > 0.0);
    }

    #[test]
    fn inv_sqrt_of_identity_is_identity() {
        let r = mat_power_half(&SymMatrix::identity(3), HalfPower::InvSqrt, ClampPolicy::inactive())
            .unwrap();
        for a in 0..3 {
            for b in 0..3 {
                let expect = if a == b { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(r.get(a, b), expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn sqrt_of_diagonal() {
        let a = SymMatrix::from_diagonal(&[4.0, 1.0]);
        let r = mat_power_half(&a, HalfPower::Sqrt, ClampPolicy::inactive()).unwrap();
        assert_abs_diff_eq!(r.get(0, 0), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.get(1, 1), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.get(0, 1), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn clamp_discard_zeroes_small_block() {
        let a = SymMatrix::from_diagonal(&[1.0, 1e-9]);
        let clamp = ClampPolicy::discard(100.0).unwrap();
        let r = mat_power_half(&a, HalfPower::InvSqrt, clamp).unwrap();
        assert_abs_diff_eq!(r.get(0, 0), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.get(1, 1), 0.0, epsilon = 1e-300);
    }

    #[test]
    fn clamp_floor_raises_small_block() {
        let a = SymMatrix::from_diagonal(&[1.0, 1e-9]);
        let clamp = ClampPolicy::new(100.0, ClampMode::Floor).unwrap();
        let r = mat_power_half(&a, HalfPower::InvSqrt, clamp).unwrap();
        assert_abs_diff_eq!(r.get(1, 1), 10.0, epsilon = 1e-9); // (1/100)^{-1/2}
    }

    #[test]
    fn zero_matrix_is_entirely_below_floor() {
        let a = SymMatrix::from_diagonal(&[0.0, 0.0]);
        let err = mat_power_half(&a, HalfPower::Sqrt, ClampPolicy::inactive()).unwrap_err();
        assert!(matches!(err, Error::BelowConditionFloor));
    }

    #[test]
    fn rho_reduces_to_sb_for_identity_sw() {
        let sw = SymMatrix::identity(2);
        let sb = SymMatrix::from_diagonal(&[1.0, 0.0]);
        let rho = build_rho(&sw, &sb, ClampPolicy::inactive()).unwrap();
        assert_abs_diff_eq!(rho.get(0, 0), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rho.get(1, 1), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn rho_diagonal_arithmetic() {
        // sw = diag(4,1), sb = I: raw diag(1/4, 1), trace 5/4 -> diag(0.2, 0.8).
        let sw = SymMatrix::from_diagonal(&[4.0, 1.0]);
        let sb = SymMatrix::identity(2);
        let rho = build_rho(&sw, &sb, ClampPolicy::inactive()).unwrap();
        assert_abs_diff_eq!(rho.get(0, 0), 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(rho.get(1, 1), 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(rho.trace(), 1.0, epsilon = 1e-12);
    }
}
