//! Phase estimation on the statevector.
//!
//! The pipeline uses an exact form of phase estimation: the target register
//! is decomposed in the operator's eigenbasis and the bit register receives
//! the rounded eigenphase of each component. For a Hermitian generator `A`
//! and evolution `exp(-i A t)`, the eigenvalue `a` maps to the phase
//! `a * t / (2 pi)` and the register reads `round(phase * 2^bits)`. This is
//! what the textbook controlled-power + inverse-QFT circuit produces when
//! the phases are exactly representable, and it makes the truncation error
//! of generic spectra analyzable: the only deviation is the rounding of each
//! eigenvalue to the grid.
//!
//! Eigenvalues sharing a rounded pattern are handled as one spectral group,
//! so degenerate subspaces never depend on an arbitrary eigenbasis choice.
//!
//! [`gate_level_qpe`] provides the literal circuit construction on small
//! registers; on dyadic spectra it reproduces [`PhaseGroups::append`]
//! exactly and serves as a cross-check.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::qstate::{QuantumState, Unitary};

/// Largest admissible eigenphase; larger values would wrap around the
/// register and alias onto smaller patterns.
pub const MAX_PHASE: f64 = 0.5;

/// Rounded register pattern for an eigenvalue under evolution time `t`.
pub fn pattern_of(value: f64, t: f64, bits: usize) -> Result<u64> {
    let phase = value * (t / (2.0 * PI));
    if !(-1e-12..=MAX_PHASE + 1e-12).contains(&phase) {
        return Err(Error::InvalidConfig(format!(
            "eigenvalue {value} maps to phase {phase}, outside [0, 1/2]; \
             shrink the evolution time"
        )));
    }
    Ok((phase.max(0.0) * (1u64 << bits) as f64).round() as u64)
}

/// Eigenvalue represented by a register pattern (inverse of [`pattern_of`]).
pub fn value_of_pattern(pattern: u64, t: f64, bits: usize) -> f64 {
    pattern as f64 / (1u64 << bits) as f64 * (2.0 * PI) / t
}

/// Spectral projectors of an operator, grouped by rounded phase pattern.
#[derive(Debug, Clone)]
pub struct PhaseGroups {
    bits: usize,
    /// `(pattern, projector)` pairs; projectors act on the embedded register
    /// space and sum to the identity.
    groups: Vec<(u64, DMatrix<f64>)>,
}

impl PhaseGroups {
    /// Group eigenpairs by pattern. Vectors shorter than `2^register_qubits`
    /// are zero-padded; the leftover padding coordinates join the zero
    /// pattern so the projectors resolve the identity.
    pub fn new(
        values: &[f64],
        vectors: &[DVector<f64>],
        register_qubits: usize,
        t: f64,
        bits: usize,
    ) -> Result<Self> {
        if values.len() != vectors.len() {
            return Err(Error::DimensionMismatch {
                context: format!("{} eigenvalues, {} eigenvectors", values.len(), vectors.len()),
            });
        }
        let dim = 1usize << register_qubits;
        if values.is_empty() || values.len() > dim {
            return Err(Error::DimensionMismatch {
                context: format!("{} eigenpairs cannot fill {register_qubits} qubits", values.len()),
            });
        }
        let mut groups: Vec<(u64, DMatrix<f64>)> = Vec::new();
        let mut add = |pattern: u64, update: &dyn Fn(&mut DMatrix<f64>)| {
            if let Some((_, p)) = groups.iter_mut().find(|(q, _)| *q == pattern) {
                update(p);
            } else {
                let mut p = DMatrix::<f64>::zeros(dim, dim);
                update(&mut p);
                groups.push((pattern, p));
            }
        };
        for (value, vector) in values.iter().zip(vectors) {
            if vector.len() > dim {
                return Err(Error::DimensionMismatch {
                    context: format!("eigenvector of length {} exceeds register {dim}", vector.len()),
                });
            }
            let mut padded = DVector::<f64>::zeros(dim);
            for (i, &x) in vector.iter().enumerate() {
                padded[i] = x;
            }
            let pattern = pattern_of(*value, t, bits)?;
            add(pattern, &|p: &mut DMatrix<f64>| p.ger(1.0, &padded, &padded, 1.0));
        }
        for pad in values.len()..dim {
            add(0, &|p: &mut DMatrix<f64>| p[(pad, pad)] += 1.0);
        }
        Ok(PhaseGroups { bits, groups })
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn patterns(&self) -> impl Iterator<Item = u64> + '_ {
        self.groups.iter().map(|(p, _)| *p)
    }

    /// Phase estimation: append `pattern_register` (`bits` qubits) holding
    /// the rounded eigenphase entangled with each spectral component of
    /// `target_register`.
    pub fn append(
        &self,
        state: &QuantumState,
        target_register: &str,
        pattern_register: &str,
    ) -> Result<QuantumState> {
        let appended = state.append_register(pattern_register, self.bits)?;
        let layout = appended.layout().clone();
        let width = state.layout().width(target_register)?;
        let t_shift = state.layout().shift(target_register)?;
        let dim = 1usize << width;
        self.check_dim(dim)?;

        let old = state.amplitudes();
        let mut amplitudes = vec![Complex64::ZERO; appended.amplitudes().len()];
        let t_mask = (dim - 1) << t_shift;
        let mut x = vec![Complex64::ZERO; dim];
        for context in 0..old.len() {
            if context & t_mask != 0 {
                continue;
            }
            for (f, slot) in x.iter_mut().enumerate() {
                *slot = old[context | (f << t_shift)];
            }
            for (pattern, projector) in &self.groups {
                for f in 0..dim {
                    let mut acc = Complex64::ZERO;
                    for (fp, &amp) in x.iter().enumerate() {
                        let w = projector[(f, fp)];
                        if w != 0.0 {
                            acc += w * amp;
                        }
                    }
                    if acc != Complex64::ZERO {
                        let idx = ((context | (f << t_shift)) << self.bits) | *pattern as usize;
                        amplitudes[idx] = acc;
                    }
                }
            }
        }
        QuantumState::from_amplitudes(layout, amplitudes)
    }

    /// Undo [`PhaseGroups::append`]: fold each pattern slice back through its
    /// projector and clear the pattern register to `|0>`. The register is
    /// left in the layout for the caller to discard.
    pub fn invert(
        &self,
        state: &QuantumState,
        target_register: &str,
        pattern_register: &str,
    ) -> Result<QuantumState> {
        let layout = state.layout().clone();
        let width = layout.width(target_register)?;
        let t_shift = layout.shift(target_register)?;
        let p_width = layout.width(pattern_register)?;
        let p_shift = layout.shift(pattern_register)?;
        if p_width != self.bits {
            return Err(Error::DimensionMismatch {
                context: format!("pattern register holds {p_width} qubits, expected {}", self.bits),
            });
        }
        let dim = 1usize << width;
        self.check_dim(dim)?;

        let old = state.amplitudes();
        let mut amplitudes = vec![Complex64::ZERO; old.len()];
        let t_mask = (dim - 1) << t_shift;
        let p_mask = ((1usize << p_width) - 1) << p_shift;
        let mut x = vec![Complex64::ZERO; dim];
        for context in 0..old.len() {
            if context & t_mask != 0 || context & p_mask != 0 {
                continue;
            }
            for (pattern, projector) in &self.groups {
                let p_bits = (*pattern as usize) << p_shift;
                for (f, slot) in x.iter_mut().enumerate() {
                    *slot = old[context | (f << t_shift) | p_bits];
                }
                for f in 0..dim {
                    let mut acc = Complex64::ZERO;
                    for (fp, &amp) in x.iter().enumerate() {
                        let w = projector[(f, fp)];
                        if w != 0.0 {
                            acc += w * amp;
                        }
                    }
                    if acc != Complex64::ZERO {
                        amplitudes[context | (f << t_shift)] += acc;
                    }
                }
            }
        }
        QuantumState::from_amplitudes(layout, amplitudes)
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        let g = &self.groups[0].1;
        if g.nrows() != dim {
            return Err(Error::DimensionMismatch {
                context: format!("projectors span {} but the register spans {dim}", g.nrows()),
            });
        }
        Ok(())
    }
}

/// Literal phase-estimation circuit: Hadamards, controlled powers of the
/// conjugate evolution `exp(+i A t)` (so the register reads the positive
/// phase), and an inverse Fourier transform.
///
/// Exact powers are synthesized from the eigenpairs, so the only
/// approximation is the phase truncation itself; on spectra whose phases
/// are exact `bits`-bit fractions this reproduces [`PhaseGroups::append`].
pub fn gate_level_qpe(
    state: &QuantumState,
    target_register: &str,
    values: &[f64],
    vectors: &[DVector<f64>],
    t: f64,
    bits: usize,
    pattern_register: &str,
) -> Result<QuantumState> {
    let width = state.layout().width(target_register)?;
    let dim = 1usize << width;

    let mut state = state.append_register(pattern_register, bits)?;
    let h = Unitary::new(DMatrix::from_fn(2, 2, |r, c| {
        let x = 1.0 / 2.0f64.sqrt();
        Complex64::new(if r == 1 && c == 1 { -x } else { x }, 0.0)
    }))?;
    let pattern_qubits = state.layout().qubit_positions(pattern_register)?;
    for &q in &pattern_qubits {
        state = state.apply_on_qubits(&h, &[q], &[])?;
    }

    // controlled U^(2^k), qubit k of the register controlling the power 2^(bits-1-k)
    for (k, &control) in pattern_qubits.iter().enumerate() {
        let power = 1u64 << (bits - 1 - k);
        let mut u = DMatrix::<Complex64>::zeros(dim, dim);
        for (value, vector) in values.iter().zip(vectors) {
            let angle = value * t * power as f64;
            let phase = Complex64::new(angle.cos(), angle.sin());
            let mut padded = DVector::<Complex64>::zeros(dim);
            for (i, &x) in vector.iter().enumerate() {
                padded[i] = Complex64::new(x, 0.0);
            }
            u.gerc(phase, &padded, &padded, Complex64::ONE);
        }
        for pad in values.len()..dim {
            u[(pad, pad)] = Complex64::ONE;
        }
        let u = Unitary::new(u)?;
        let targets = state.layout().qubit_positions(target_register)?;
        state = state.apply_on_qubits(&u, &targets, &[(control, true)])?;
    }

    // inverse Fourier transform on the pattern register
    let n = 1usize << bits;
    let scale = 1.0 / (n as f64).sqrt();
    let qft_inv = DMatrix::from_fn(n, n, |r, c| {
        let angle = -2.0 * PI * (r as f64) * (c as f64) / n as f64;
        Complex64::new(angle.cos() * scale, angle.sin() * scale)
    });
    state.apply_unitary(&Unitary::new(qft_inv)?, &[pattern_register])
}
