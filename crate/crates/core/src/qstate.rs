//! Exact statevector engine with named registers.
//!
//! A [`QuantumState`] is a unit-norm complex amplitude vector over the
//! computational basis of a [`RegisterLayout`]. Registers are ordered: the
//! first register holds the most significant bits of the basis index, and
//! within a register the first qubit is the most significant bit of its
//! value. Appending a register therefore multiplies every index by its size.
//!
//! All operations are pure: they borrow the input state and return a new
//! one. Measurement probabilities are exact amplitude masses, never samples,
//! and discarding a register demands separability so that pipeline bugs
//! surface as errors instead of silently mixed states.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lda::Dataset;

/// Hard cap on total qubits (amplitude vectors stay desk-scale).
pub const QUBIT_CAP: usize = 30;

/// Norm tolerance for state vectors.
pub const NORM_TOL: f64 = 1e-12;

/// Frobenius tolerance for unitarity checks.
pub const UNITARY_TOL: f64 = 1e-10;

/// Product-state residual admitted by [`QuantumState::discard_register`].
/// Purity of the reduced state is at least `1 - 2 * residual`, so this
/// threshold keeps purity within `1e-10` of one.
pub const SEPARABILITY_RESIDUAL: f64 = 5e-11;

#[derive(Debug, Clone, PartialEq, Eq)]
struct Register {
    name: String,
    qubits: usize,
}

/// Ordered list of named registers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegisterLayout {
    registers: Vec<Register>,
}

impl RegisterLayout {
    pub fn new<S: Into<String>>(registers: Vec<(S, usize)>) -> Result<Self> {
        let registers: Vec<Register> = registers
            .into_iter()
            .map(|(name, qubits)| Register { name: name.into(), qubits })
            .collect();
        if registers.is_empty() {
            return Err(Error::InvalidLayout { reason: "at least one register required".into() });
        }
        for (i, reg) in registers.iter().enumerate() {
            if reg.qubits == 0 {
                return Err(Error::InvalidLayout {
                    reason: format!("register {:?} has zero qubits", reg.name),
                });
            }
            if registers[..i].iter().any(|r| r.name == reg.name) {
                return Err(Error::InvalidLayout {
                    reason: format!("duplicate register name {:?}", reg.name),
                });
            }
        }
        let total: usize = registers.iter().map(|r| r.qubits).sum();
        if total > QUBIT_CAP {
            return Err(Error::QubitCapExceeded { requested: total, cap: QUBIT_CAP });
        }
        Ok(RegisterLayout { registers })
    }

    pub fn total_qubits(&self) -> usize {
        self.registers.iter().map(|r| r.qubits).sum()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.registers.iter().map(|r| r.name.as_str())
    }

    pub fn width(&self, name: &str) -> Result<usize> {
        self.find(name).map(|r| self.registers[r].qubits)
    }

    /// Bit shift of a register's value inside the basis index (from the
    /// least significant end).
    pub fn shift(&self, name: &str) -> Result<usize> {
        let idx = self.find(name)?;
        Ok(self.registers[idx + 1..].iter().map(|r| r.qubits).sum())
    }

    /// Global qubit positions of a register, most significant first.
    pub fn qubit_positions(&self, name: &str) -> Result<Vec<usize>> {
        let idx = self.find(name)?;
        let before: usize = self.registers[..idx].iter().map(|r| r.qubits).sum();
        Ok((0..self.registers[idx].qubits).map(|k| before + k).collect())
    }

    fn find(&self, name: &str) -> Result<usize> {
        self.registers
            .iter()
            .position(|r| r.name == name)
            .ok_or_else(|| Error::UnknownRegister { name: name.to_string() })
    }
}

/// Exact post-selection outcome: register, bit pattern, amplitude mass.
#[derive(Debug, Clone, Serialize)]
pub struct MeasurementRecord {
    pub register: String,
    pub outcome: u64,
    pub probability: f64,
}

/// A unitary matrix validated on construction (`|U^H U - I|_F <= 1e-10`).
#[derive(Debug, Clone)]
pub struct Unitary {
    matrix: DMatrix<Complex64>,
    qubits: usize,
}

impl Unitary {
    pub fn new(matrix: DMatrix<Complex64>) -> Result<Self> {
        let dim = matrix.nrows();
        if dim == 0 || matrix.ncols() != dim || !dim.is_power_of_two() {
            return Err(Error::DimensionMismatch {
                context: format!("unitary must be square with power-of-two size, got {}x{}", dim, matrix.ncols()),
            });
        }
        let residual = (matrix.adjoint() * &matrix - DMatrix::identity(dim, dim)).norm();
        if residual > UNITARY_TOL {
            return Err(Error::NotUnitary { residual });
        }
        Ok(Unitary { matrix, qubits: dim.trailing_zeros() as usize })
    }

    pub fn from_real(matrix: &DMatrix<f64>) -> Result<Self> {
        Unitary::new(matrix.map(|x| Complex64::new(x, 0.0)))
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn qubits(&self) -> usize {
        self.qubits
    }
}

/// Normalized pure state over a register layout.
#[derive(Debug, Clone)]
pub struct QuantumState {
    layout: RegisterLayout,
    amplitudes: Vec<Complex64>,
}

impl QuantumState {
    /// All-zeros basis state.
    pub fn zero(layout: RegisterLayout) -> Self {
        let mut amplitudes = vec![Complex64::ZERO; 1usize << layout.total_qubits()];
        amplitudes[0] = Complex64::ONE;
        QuantumState { layout, amplitudes }
    }

    /// Wrap an amplitude vector, checking the norm within [`NORM_TOL`] and
    /// renormalizing the residual rounding error away.
    pub fn from_amplitudes(layout: RegisterLayout, amplitudes: Vec<Complex64>) -> Result<Self> {
        if amplitudes.len() != 1usize << layout.total_qubits() {
            return Err(Error::DimensionMismatch {
                context: format!(
                    "layout spans {} amplitudes, got {}",
                    1usize << layout.total_qubits(),
                    amplitudes.len()
                ),
            });
        }
        let norm = l2_norm(&amplitudes);
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::InvalidLayout {
                reason: format!("state norm {norm} deviates from 1 beyond {NORM_TOL}"),
            });
        }
        let mut amplitudes = amplitudes;
        for a in amplitudes.iter_mut() {
            *a /= norm;
        }
        Ok(QuantumState { layout, amplitudes })
    }

    pub fn layout(&self) -> &RegisterLayout {
        &self.layout
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.amplitudes)
    }

    /// Tensor a fresh `|0...0>` register onto the least significant end.
    pub fn append_register(&self, name: &str, qubits: usize) -> Result<Self> {
        let mut registers: Vec<(String, usize)> = self
            .layout
            .registers
            .iter()
            .map(|r| (r.name.clone(), r.qubits))
            .collect();
        registers.push((name.to_string(), qubits));
        let layout = RegisterLayout::new(registers)?;
        let mut amplitudes = vec![Complex64::ZERO; self.amplitudes.len() << qubits];
        for (idx, amp) in self.amplitudes.iter().enumerate() {
            amplitudes[idx << qubits] = *amp;
        }
        Ok(QuantumState { layout, amplitudes })
    }

    /// Apply a unitary to the listed registers (first register = most
    /// significant bits of the unitary's index).
    pub fn apply_unitary(&self, u: &Unitary, targets: &[&str]) -> Result<Self> {
        self.apply_unitary_controlled(u, targets, &[])
    }

    /// Apply a unitary to `targets`, conditioned on every control register
    /// holding its given bit pattern.
    pub fn apply_unitary_controlled(
        &self,
        u: &Unitary,
        targets: &[&str],
        controls: &[(&str, u64)],
    ) -> Result<Self> {
        let mut positions = Vec::new();
        for name in targets {
            positions.extend(self.layout.qubit_positions(name)?);
        }
        if positions.len() != u.qubits() {
            return Err(Error::DimensionMismatch {
                context: format!(
                    "unitary acts on {} qubits but targets span {}",
                    u.qubits(),
                    positions.len()
                ),
            });
        }
        let bit_controls = self.pattern_bit_controls(controls)?;
        self.apply_matrix_on_qubits(u.matrix(), &positions, &bit_controls)
    }

    /// Apply a validated unitary on explicit qubit positions with
    /// per-qubit value controls. Qubit 0 is the most significant.
    pub fn apply_on_qubits(
        &self,
        u: &Unitary,
        qubits: &[usize],
        controls: &[(usize, bool)],
    ) -> Result<Self> {
        self.apply_matrix_on_qubits(u.matrix(), qubits, controls)
    }

    /// Expand `(register, pattern)` conditions into per-qubit value controls.
    pub fn pattern_bit_controls(&self, controls: &[(&str, u64)]) -> Result<Vec<(usize, bool)>> {
        let mut out = Vec::new();
        for (name, pattern) in controls {
            let width = self.layout.width(name)?;
            if *pattern >= (1u64 << width) {
                return Err(Error::DimensionMismatch {
                    context: format!("pattern {pattern} exceeds register {name:?} width {width}"),
                });
            }
            for (k, pos) in self.layout.qubit_positions(name)?.into_iter().enumerate() {
                let bit = (pattern >> (width - 1 - k)) & 1 == 1;
                out.push((pos, bit));
            }
        }
        Ok(out)
    }

    fn apply_matrix_on_qubits(
        &self,
        m: &DMatrix<Complex64>,
        qubits: &[usize],
        controls: &[(usize, bool)],
    ) -> Result<Self> {
        let n = self.layout.total_qubits();
        let k = qubits.len();
        if m.nrows() != (1usize << k) {
            return Err(Error::DimensionMismatch {
                context: format!("matrix of size {} cannot act on {k} qubits", m.nrows()),
            });
        }
        for &q in qubits {
            if q >= n {
                return Err(Error::DimensionMismatch { context: format!("qubit {q} out of range") });
            }
        }
        for &(c, _) in controls {
            if c >= n || qubits.contains(&c) {
                return Err(Error::DimensionMismatch {
                    context: format!("control qubit {c} invalid or overlaps a target"),
                });
            }
        }
        // bit position (from LSB) of qubit q
        let bit = |q: usize| n - 1 - q;
        let target_mask: usize = qubits.iter().map(|&q| 1usize << bit(q)).sum();
        let mut control_mask = 0usize;
        let mut control_value = 0usize;
        for &(c, v) in controls {
            control_mask |= 1usize << bit(c);
            if v {
                control_value |= 1usize << bit(c);
            }
        }

        let mut amplitudes = self.amplitudes.clone();
        let block = 1usize << k;
        let mut gathered = vec![Complex64::ZERO; block];
        let mut offsets = vec![0usize; block];
        for (p, offset) in offsets.iter_mut().enumerate() {
            let mut o = 0usize;
            for (t, &q) in qubits.iter().enumerate() {
                if (p >> (k - 1 - t)) & 1 == 1 {
                    o |= 1usize << bit(q);
                }
            }
            *offset = o;
        }

        for base in 0..self.amplitudes.len() {
            if base & target_mask != 0 || base & control_mask != control_value {
                continue;
            }
            for (p, &offset) in offsets.iter().enumerate() {
                gathered[p] = self.amplitudes[base | offset];
            }
            for (row, &offset) in offsets.iter().enumerate() {
                let mut acc = Complex64::ZERO;
                for (col, &g) in gathered.iter().enumerate() {
                    acc += m[(row, col)] * g;
                }
                amplitudes[base | offset] = acc;
            }
        }
        Ok(QuantumState { layout: self.layout.clone(), amplitudes })
    }

    /// Exact probabilities of every bit pattern of a register.
    pub fn marginal(&self, register: &str) -> Result<Vec<f64>> {
        let width = self.layout.width(register)?;
        let shift = self.layout.shift(register)?;
        let mask = (1usize << width) - 1;
        let mut probs = vec![0.0; 1usize << width];
        for (idx, amp) in self.amplitudes.iter().enumerate() {
            probs[(idx >> shift) & mask] += amp.norm_sqr();
        }
        Ok(probs)
    }

    pub fn probability_of(&self, register: &str, outcome: u64) -> Result<f64> {
        let probs = self.marginal(register)?;
        probs
            .get(outcome as usize)
            .copied()
            .ok_or_else(|| Error::DimensionMismatch {
                context: format!("outcome {outcome} exceeds register {register:?}"),
            })
    }

    /// Project onto `register == outcome` and renormalize.
    ///
    /// The returned record carries the exact pre-measurement probability of
    /// the outcome; the register itself stays in the layout, collapsed.
    pub fn postselect(&self, register: &str, outcome: u64) -> Result<(Self, MeasurementRecord)> {
        let width = self.layout.width(register)?;
        if outcome >= (1u64 << width) {
            return Err(Error::DimensionMismatch {
                context: format!("outcome {outcome} exceeds register {register:?} width {width}"),
            });
        }
        let shift = self.layout.shift(register)?;
        let mask = (1usize << width) - 1;
        let target = outcome as usize;
        let mut probability = 0.0;
        for (idx, amp) in self.amplitudes.iter().enumerate() {
            if (idx >> shift) & mask == target {
                probability += amp.norm_sqr();
            }
        }
        if probability < 1e-15 {
            return Err(Error::NullPostSelection { probability });
        }
        let scale = probability.sqrt();
        let amplitudes: Vec<Complex64> = self
            .amplitudes
            .iter()
            .enumerate()
            .map(|(idx, amp)| {
                if (idx >> shift) & mask == target {
                    amp / scale
                } else {
                    Complex64::ZERO
                }
            })
            .collect();
        let record = MeasurementRecord { register: register.to_string(), outcome, probability };
        Ok((QuantumState { layout: self.layout.clone(), amplitudes }, record))
    }

    /// Remove an unentangled register, returning the pure state of the rest.
    ///
    /// The state is fit as `phi_register (x) chi_rest`; if the residual of
    /// that fit exceeds [`SEPARABILITY_RESIDUAL`] the discard is rejected,
    /// because tracing out an entangled register would leave a mixed state.
    pub fn discard_register(&self, register: &str) -> Result<Self> {
        if self.layout.registers.len() == 1 {
            return Err(Error::InvalidLayout {
                reason: "cannot discard the only register".into(),
            });
        }
        let width = self.layout.width(register)?;
        let shift = self.layout.shift(register)?;
        let reg_size = 1usize << width;
        let rest_size = self.amplitudes.len() >> width;
        let low_mask = (1usize << shift) - 1;

        let rest_index = |idx: usize| -> usize {
            let low = idx & low_mask;
            let high = idx >> (shift + width);
            (high << shift) | low
        };
        let full_index = |r: usize, rest: usize| -> usize {
            let low = rest & low_mask;
            let high = rest >> shift;
            (high << (shift + width)) | (r << shift) | low
        };

        // Most likely register value anchors the factor state.
        let mut best = 0usize;
        let mut best_mass = -1.0;
        for r in 0..reg_size {
            let mut mass = 0.0;
            for rest in 0..rest_size {
                mass += self.amplitudes[full_index(r, rest)].norm_sqr();
            }
            if mass > best_mass {
                best_mass = mass;
                best = r;
            }
        }
        if best_mass <= 0.0 {
            return Err(Error::NullPostSelection { probability: best_mass.max(0.0) });
        }
        let scale = best_mass.sqrt();
        let mut chi = vec![Complex64::ZERO; rest_size];
        for rest in 0..rest_size {
            chi[rest] = self.amplitudes[full_index(best, rest)] / scale;
        }
        // Residual of the product fit: 1 - sum_r |<chi|slice_r>|^2.
        let mut explained = 0.0;
        for r in 0..reg_size {
            let mut overlap = Complex64::ZERO;
            for (rest, c) in chi.iter().enumerate() {
                overlap += c.conj() * self.amplitudes[full_index(r, rest)];
            }
            explained += overlap.norm_sqr();
        }
        let residual = (1.0 - explained).max(0.0);
        if residual > SEPARABILITY_RESIDUAL {
            return Err(Error::EntangledDiscard { name: register.to_string(), residual });
        }

        let registers: Vec<(String, usize)> = self
            .layout
            .registers
            .iter()
            .filter(|r| r.name != register)
            .map(|r| (r.name.clone(), r.qubits))
            .collect();
        debug_assert_eq!(rest_index(full_index(best, 0)), 0);
        QuantumState::from_amplitudes(RegisterLayout::new(registers)?, chi)
    }

    /// Rename a register without touching amplitudes.
    pub fn rename_register(&self, from: &str, to: &str) -> Result<Self> {
        self.layout.find(from)?;
        let registers: Vec<(String, usize)> = self
            .layout
            .registers
            .iter()
            .map(|r| {
                let name = if r.name == from { to.to_string() } else { r.name.clone() };
                (name, r.qubits)
            })
            .collect();
        Ok(QuantumState {
            layout: RegisterLayout::new(registers)?,
            amplitudes: self.amplitudes.clone(),
        })
    }

    /// Relabel one register as two adjacent ones (no amplitude change).
    /// The first `high_qubits` become `high_name`, the rest `low_name`.
    pub fn split_register(
        &self,
        register: &str,
        high_qubits: usize,
        high_name: &str,
        low_name: &str,
    ) -> Result<Self> {
        let width = self.layout.width(register)?;
        if high_qubits == 0 || high_qubits >= width {
            return Err(Error::InvalidLayout {
                reason: format!(
                    "cannot split {width}-qubit register {register:?} at {high_qubits}"
                ),
            });
        }
        let registers: Vec<(String, usize)> = self
            .layout
            .registers
            .iter()
            .flat_map(|r| {
                if r.name == register {
                    vec![
                        (high_name.to_string(), high_qubits),
                        (low_name.to_string(), width - high_qubits),
                    ]
                } else {
                    vec![(r.name.clone(), r.qubits)]
                }
            })
            .collect();
        Ok(QuantumState {
            layout: RegisterLayout::new(registers)?,
            amplitudes: self.amplitudes.clone(),
        })
    }

    /// Magnitude of the inner product with another state (1 means identical
    /// up to a global phase). Layouts must agree.
    pub fn fidelity(&self, other: &QuantumState) -> Result<f64> {
        if self.layout != other.layout {
            return Err(Error::DimensionMismatch {
                context: "fidelity requires identical register layouts".into(),
            });
        }
        let mut acc = Complex64::ZERO;
        for (a, b) in self.amplitudes.iter().zip(&other.amplitudes) {
            acc += a.conj() * b;
        }
        Ok(acc.norm())
    }
}

fn l2_norm(amps: &[Complex64]) -> f64 {
    amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
}

/// Amplitude-encode a matrix: the amplitude at `|i>|j>` is
/// `x_ij / |X|_F`, rows and columns zero-padded to powers of two.
///
/// Single-row matrices omit the index register entirely.
pub fn amplitude_encode(
    matrix: &DMatrix<f64>,
    index_name: &str,
    feature_name: &str,
) -> Result<QuantumState> {
    let norm = matrix.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::ZeroFrobeniusNorm);
    }
    let mi = ceil_log2(matrix.nrows());
    let mf = ceil_log2(matrix.ncols().max(2));
    let layout = if mi == 0 {
        RegisterLayout::new(vec![(feature_name, mf)])?
    } else {
        RegisterLayout::new(vec![(index_name, mi), (feature_name, mf)])?
    };
    let mut amplitudes = vec![Complex64::ZERO; 1usize << (mi + mf)];
    for i in 0..matrix.nrows() {
        for j in 0..matrix.ncols() {
            amplitudes[(i << mf) | j] = Complex64::new(matrix[(i, j)] / norm, 0.0);
        }
    }
    QuantumState::from_amplitudes(layout, amplitudes)
}

/// Initial state of the pipeline: the dataset amplitude-encoded over
/// an `index` and a `feature` register.
pub fn prepare_psi_x(ds: &Dataset) -> Result<QuantumState> {
    amplitude_encode(ds.samples(), "index", "feature")
}

/// Smallest `k` with `2^k >= x` (0 for `x <= 1`).
pub fn ceil_log2(x: usize) -> usize {
    let mut k = 0;
    while (1usize << k) < x {
        k += 1;
    }
    k
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn x_gate() -> Unitary {
        Unitary::new(DMatrix::from_row_slice(
            2,
            2,
            &[Complex64::ZERO, Complex64::ONE, Complex64::ONE, Complex64::ZERO],
        ))
        .unwrap()
    }

    #[test]
    fn layout_rejects_duplicates_and_cap() {
        assert!(RegisterLayout::new(vec![("a", 1), ("a", 2)]).is_err());
        assert!(RegisterLayout::new(vec![("a", 31)]).is_err());
        assert!(RegisterLayout::new(vec![("a", 0)]).is_err());
    }

    #[test]
    fn amplitude_encode_identity_rows() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let psi = amplitude_encode(&x, "index", "feature").unwrap();
        let inv = 1.0 / 2.0f64.sqrt();
        assert_abs_diff_eq!(psi.amplitudes()[0].re, inv, epsilon = 1e-14);
        assert_abs_diff_eq!(psi.amplitudes()[3].re, inv, epsilon = 1e-14);
        assert_abs_diff_eq!(psi.amplitudes()[1].re, 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(psi.amplitudes()[2].re, 0.0, epsilon = 1e-14);
    }

    #[test]
    fn amplitude_encode_single_row_normalizes() {
        let x = DMatrix::from_row_slice(1, 2, &[3.0, 4.0]);
        let psi = amplitude_encode(&x, "index", "feature").unwrap();
        assert_eq!(psi.layout().total_qubits(), 1);
        assert_abs_diff_eq!(psi.amplitudes()[0].re, 0.6, epsilon = 1e-14);
        assert_abs_diff_eq!(psi.amplitudes()[1].re, 0.8, epsilon = 1e-14);
    }

    #[test]
    fn amplitude_encode_rejects_zero_matrix() {
        let x = DMatrix::zeros(2, 2);
        assert!(matches!(
            amplitude_encode(&x, "i", "f").unwrap_err(),
            Error::ZeroFrobeniusNorm
        ));
    }

    #[test]
    fn x_gate_flips_single_qubit() {
        let layout = RegisterLayout::new(vec![("q", 1)]).unwrap();
        let state = QuantumState::zero(layout);
        let flipped = state.apply_unitary(&x_gate(), &["q"]).unwrap();
        assert_abs_diff_eq!(flipped.amplitudes()[1].re, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn identity_leaves_state_unchanged() {
        let layout = RegisterLayout::new(vec![("a", 1), ("b", 1)]).unwrap();
        let state = QuantumState::zero(layout)
            .apply_unitary(&x_gate(), &["b"])
            .unwrap();
        let id = Unitary::new(DMatrix::identity(2, 2).map(|x: f64| Complex64::new(x, 0.0))).unwrap();
        let after = state.apply_unitary(&id, &["a"]).unwrap();
        assert_abs_diff_eq!(state.fidelity(&after).unwrap(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn postselect_plus_state() {
        let layout = RegisterLayout::new(vec![("q", 1)]).unwrap();
        let inv = Complex64::new(1.0 / 2.0f64.sqrt(), 0.0);
        let state = QuantumState::from_amplitudes(layout, vec![inv, inv]).unwrap();
        let (post, record) = state.postselect("q", 1).unwrap();
        assert_abs_diff_eq!(record.probability, 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(post.amplitudes()[1].re, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(post.amplitudes()[0].re, 0.0, epsilon = 1e-14);
    }

    #[test]
    fn postselect_null_branch_rejected() {
        let layout = RegisterLayout::new(vec![("q", 1)]).unwrap();
        let state = QuantumState::zero(layout);
        assert!(matches!(
            state.postselect("q", 1).unwrap_err(),
            Error::NullPostSelection { .. }
        ));
    }

    #[test]
    fn postselect_product_state_leaves_other_factor() {
        let layout = RegisterLayout::new(vec![("a", 1), ("b", 1)]).unwrap();
        let inv = Complex64::new(1.0 / 2.0f64.sqrt(), 0.0);
        // |+>|1>
        let state = QuantumState::from_amplitudes(
            layout,
            vec![Complex64::ZERO, inv, Complex64::ZERO, inv],
        )
        .unwrap();
        let (post, record) = state.postselect("b", 1).unwrap();
        assert_abs_diff_eq!(record.probability, 1.0, epsilon = 1e-14);
        let marg = post.marginal("a").unwrap();
        assert_abs_diff_eq!(marg[0], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(marg[1], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn discard_product_register() {
        let layout = RegisterLayout::new(vec![("a", 1), ("b", 1)]).unwrap();
        let inv = Complex64::new(1.0 / 2.0f64.sqrt(), 0.0);
        // (|0> + |1>)/sqrt(2) (x) |0>
        let state = QuantumState::from_amplitudes(
            layout,
            vec![inv, Complex64::ZERO, inv, Complex64::ZERO],
        )
        .unwrap();
        let rest = state.discard_register("b").unwrap();
        assert_eq!(rest.layout().total_qubits(), 1);
        assert_abs_diff_eq!(rest.amplitudes()[0].re, inv.re, epsilon = 1e-14);
        assert_abs_diff_eq!(rest.amplitudes()[1].re, inv.re, epsilon = 1e-14);
    }

    #[test]
    fn discard_bell_half_rejected() {
        let layout = RegisterLayout::new(vec![("a", 1), ("b", 1)]).unwrap();
        let inv = Complex64::new(1.0 / 2.0f64.sqrt(), 0.0);
        let state = QuantumState::from_amplitudes(
            layout,
            vec![inv, Complex64::ZERO, Complex64::ZERO, inv],
        )
        .unwrap();
        assert!(matches!(
            state.discard_register("b").unwrap_err(),
            Error::EntangledDiscard { .. }
        ));
    }

    #[test]
    fn split_register_relabels_without_touching_amplitudes() {
        let layout = RegisterLayout::new(vec![("r", 3)]).unwrap();
        let mut amps = vec![Complex64::ZERO; 8];
        amps[5] = Complex64::ONE; // 101
        let state = QuantumState::from_amplitudes(layout, amps).unwrap();
        let split = state.split_register("r", 1, "hi", "lo").unwrap();
        assert_abs_diff_eq!(split.probability_of("hi", 1).unwrap(), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(split.probability_of("lo", 1).unwrap(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn controlled_apply_respects_pattern() {
        let layout = RegisterLayout::new(vec![("c", 2), ("t", 1)]).unwrap();
        let mut amps = vec![Complex64::ZERO; 8];
        amps[0b100] = Complex64::ONE; // c = 10, t = 0
        let state = QuantumState::from_amplitudes(layout, amps).unwrap();
        let missed = state
            .apply_unitary_controlled(&x_gate(), &["t"], &[("c", 0b01)])
            .unwrap();
        assert_abs_diff_eq!(missed.probability_of("t", 0).unwrap(), 1.0, epsilon = 1e-14);
        let hit = state
            .apply_unitary_controlled(&x_gate(), &["t"], &[("c", 0b10)])
            .unwrap();
        assert_abs_diff_eq!(hit.probability_of("t", 1).unwrap(), 1.0, epsilon = 1e-14);
    }
}
