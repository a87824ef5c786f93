//! Elementary-gate circuits and gate-count accounting.
//!
//! Two circuits matter to the pipeline. The branch circuit flips a signal
//! qubit and rewrites the eigenvalue register to a component index exactly
//! when the register holds that component's bit pattern. The replacement
//! circuit compares a register holding a shadow component against a freshly
//! prepared copy and clears the first register on a match.
//!
//! Both are exact transpositions of computational basis states, which is
//! what lets several of them compose in sequence without disturbing branches
//! already processed.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};

/// Cap for dense matrix construction in [`circuit_to_unitary`].
pub const UNITARY_BUILD_CAP: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GateKind {
    X,
    Cx,
    Mcx,
    EmbeddedUnitary,
}

/// One gate. Qubit 0 is the most significant bit of the circuit's index
/// space; controls are positive-polarity.
#[derive(Debug, Clone)]
pub struct Gate {
    pub kind: GateKind,
    pub controls: Vec<usize>,
    pub targets: Vec<usize>,
    /// Dense matrix for [`GateKind::EmbeddedUnitary`], `None` otherwise.
    pub payload: Option<DMatrix<Complex64>>,
}

impl Gate {
    fn validate(&self, qubit_count: usize) -> Result<()> {
        for &q in self.controls.iter().chain(&self.targets) {
            if q >= qubit_count {
                return Err(Error::InvalidCircuit(format!(
                    "gate touches qubit {q} but the circuit has {qubit_count}"
                )));
            }
        }
        for &c in &self.controls {
            if self.targets.contains(&c) {
                return Err(Error::InvalidCircuit(format!(
                    "qubit {c} is both control and target"
                )));
            }
        }
        let mut sorted = self.targets.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.targets.len() {
            return Err(Error::InvalidCircuit("duplicate target qubit".into()));
        }
        match self.kind {
            GateKind::X => {
                if !self.controls.is_empty() || self.targets.len() != 1 {
                    return Err(Error::InvalidCircuit("X takes no controls and one target".into()));
                }
            }
            GateKind::Cx => {
                if self.controls.len() != 1 || self.targets.len() != 1 {
                    return Err(Error::InvalidCircuit("CX takes one control and one target".into()));
                }
            }
            GateKind::Mcx => {
                if self.controls.len() < 2 || self.targets.len() != 1 {
                    return Err(Error::InvalidCircuit(
                        "MCX takes at least two controls and one target".into(),
                    ));
                }
            }
            GateKind::EmbeddedUnitary => {
                let payload = self.payload.as_ref().ok_or_else(|| {
                    Error::InvalidCircuit("embedded gate without payload".into())
                })?;
                let dim = 1usize << self.targets.len();
                if payload.nrows() != dim || payload.ncols() != dim {
                    return Err(Error::InvalidCircuit(format!(
                        "payload is {}x{} but {} targets span dimension {dim}",
                        payload.nrows(),
                        payload.ncols(),
                        self.targets.len()
                    )));
                }
                let residual =
                    (payload.adjoint() * payload - DMatrix::<Complex64>::identity(dim, dim)).norm();
                if residual > 1e-10 {
                    return Err(Error::NotUnitary { residual });
                }
            }
        }
        if self.kind != GateKind::EmbeddedUnitary && self.payload.is_some() {
            return Err(Error::InvalidCircuit("payload on a non-embedded gate".into()));
        }
        Ok(())
    }
}

/// Ordered gate list on a fixed qubit count.
#[derive(Debug, Clone, Default)]
pub struct Circuit {
    qubit_count: usize,
    gates: Vec<Gate>,
}

impl Circuit {
    pub fn new(qubit_count: usize) -> Self {
        Circuit { qubit_count, gates: Vec::new() }
    }

    pub fn qubit_count(&self) -> usize {
        self.qubit_count
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    pub fn push(&mut self, gate: Gate) -> Result<()> {
        gate.validate(self.qubit_count)?;
        self.gates.push(gate);
        Ok(())
    }

    pub fn x(&mut self, target: usize) -> Result<()> {
        self.push(Gate { kind: GateKind::X, controls: vec![], targets: vec![target], payload: None })
    }

    pub fn cx(&mut self, control: usize, target: usize) -> Result<()> {
        self.push(Gate {
            kind: GateKind::Cx,
            controls: vec![control],
            targets: vec![target],
            payload: None,
        })
    }

    /// Controlled flip with however many controls are given (X/CX/MCX).
    pub fn controlled_x(&mut self, controls: &[usize], target: usize) -> Result<()> {
        let kind = match controls.len() {
            0 => GateKind::X,
            1 => GateKind::Cx,
            _ => GateKind::Mcx,
        };
        self.push(Gate { kind, controls: controls.to_vec(), targets: vec![target], payload: None })
    }

    pub fn embedded(
        &mut self,
        controls: &[usize],
        targets: &[usize],
        payload: DMatrix<Complex64>,
    ) -> Result<()> {
        self.push(Gate {
            kind: GateKind::EmbeddedUnitary,
            controls: controls.to_vec(),
            targets: targets.to_vec(),
            payload: Some(payload),
        })
    }

    /// Serializable gate list (embedded payloads are reported by size only).
    pub fn dump(&self, name: &str) -> CircuitDump {
        CircuitDump {
            name: name.to_string(),
            qubit_count: self.qubit_count,
            gates: self
                .gates
                .iter()
                .map(|g| GateDump {
                    kind: g.kind,
                    controls: g.controls.clone(),
                    targets: g.targets.clone(),
                })
                .collect(),
            counts: gate_count_report(self),
        }
    }
}

/// JSON-facing circuit description.
#[derive(Debug, Clone, Serialize)]
pub struct CircuitDump {
    pub name: String,
    pub qubit_count: usize,
    pub gates: Vec<GateDump>,
    pub counts: GateCountReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct GateDump {
    pub kind: GateKind,
    pub controls: Vec<usize>,
    pub targets: Vec<usize>,
}

/// Per-kind tally plus the elementary-gate total. Every multi-controlled
/// flip is costed at the Toffoli-ladder rate of `2 * (controls - 1)` with a
/// borrowed ancilla; embedded unitaries are tallied but not costed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GateCountReport {
    pub x: usize,
    pub cx: usize,
    pub mcx: usize,
    pub embedded: usize,
    pub elementary_total: usize,
}

pub fn gate_count_report(c: &Circuit) -> GateCountReport {
    let mut report = GateCountReport { x: 0, cx: 0, mcx: 0, embedded: 0, elementary_total: 0 };
    for gate in &c.gates {
        match gate.kind {
            GateKind::X => {
                report.x += 1;
                report.elementary_total += 1;
            }
            GateKind::Cx => {
                report.cx += 1;
                report.elementary_total += 1;
            }
            GateKind::Mcx => {
                report.mcx += 1;
                report.elementary_total += 2 * (gate.controls.len() - 1);
            }
            GateKind::EmbeddedUnitary => {
                report.embedded += 1;
            }
        }
    }
    report
}

/// Branch circuit on `l + 1` qubits (eigenvalue register + signal).
///
/// Acting on basis states with the signal clear, it maps
/// `|lambda_bits>|0> -> |index_bits>|1>` (the index zero-extended to `l`
/// bits) and leaves every other `|x>|0>` unchanged. The gate sequence is an
/// exact transposition of those two basis states:
///
/// 1. an X layer on the zero bits of the pattern, taking the match to
///    all-ones,
/// 2. a signal-controlled flip layer on the bits where pattern and index
///    differ,
/// 3. one multi-controlled X flipping the signal off the all-ones register,
/// 4. the flip layer again,
/// 5. the X layer again.
///
/// Being a transposition lets the `d` branch circuits compose: a branch
/// already rewritten to `|index>|1>` is a fixed point of every later one.
pub fn build_u_lambda(lambda_bits: u64, index_bits: u64, l: usize, q: usize) -> Result<Circuit> {
    if l == 0 {
        return Err(Error::InvalidConfig("eigenvalue register needs at least one qubit".into()));
    }
    if q > l {
        return Err(Error::IndexWidthExceeded { q, l });
    }
    if lambda_bits >= (1u64 << l) {
        return Err(Error::InvalidConfig(format!(
            "pattern {lambda_bits:#b} does not fit {l} bits"
        )));
    }
    if q < 64 && index_bits >= (1u64 << q) {
        return Err(Error::InvalidConfig(format!(
            "index {index_bits:#b} does not fit {q} bits"
        )));
    }

    let signal = l;
    let mut circuit = Circuit::new(l + 1);
    // qubit k holds bit (l - 1 - k) of the register value
    let bit_of = |value: u64, k: usize| (value >> (l - 1 - k)) & 1;
    let flip_mask = lambda_bits ^ index_bits;

    let x_layer = |c: &mut Circuit| -> Result<()> {
        for k in 0..l {
            if bit_of(lambda_bits, k) == 0 {
                c.x(k)?;
            }
        }
        Ok(())
    };
    let rewrite_layer = |c: &mut Circuit| -> Result<()> {
        for k in 0..l {
            if bit_of(flip_mask, k) == 1 {
                c.cx(signal, k)?;
            }
        }
        Ok(())
    };

    x_layer(&mut circuit)?;
    rewrite_layer(&mut circuit)?;
    let register: Vec<usize> = (0..l).collect();
    circuit.controlled_x(&register, signal)?;
    rewrite_layer(&mut circuit)?;
    x_layer(&mut circuit)?;
    Ok(circuit)
}

/// Replacement circuit on `2 * log_d + 1` qubits (component register,
/// comparator register, signal).
///
/// For an orthonormal eigenbasis `v_1..v_D` it maps
/// `|v_j>|v_j'>|0> -> |0>|v_j'>|1>` when `j = j'` and acts as the identity
/// on `|v_j>|v_j'>|0>` otherwise. Realized by rotating both registers into
/// the computational basis, running a bitwise comparator that flips the
/// signal and then clears the first register through a Toffoli cascade, and
/// rotating back: unconditionally on the comparator register, signal-off
/// controlled on the component register so the cleared `|0>` survives.
pub fn build_u_v(v_index: usize, eigenbasis: &[DVector<f64>], log_d: usize) -> Result<Circuit> {
    let dim = 1usize << log_d;
    if eigenbasis.is_empty() || eigenbasis.len() > dim {
        return Err(Error::InvalidConfig(format!(
            "{} basis vectors cannot fill {log_d} qubits",
            eigenbasis.len()
        )));
    }
    if v_index >= eigenbasis.len() {
        return Err(Error::InvalidConfig(format!(
            "component index {v_index} out of range for basis of {}",
            eigenbasis.len()
        )));
    }
    let v = basis_unitary(eigenbasis, log_d)?;
    let v_dagger = v.adjoint();

    let m = log_d;
    let signal = 2 * m;
    let vreg: Vec<usize> = (0..m).collect();
    let cmp: Vec<usize> = (m..2 * m).collect();

    let mut circuit = Circuit::new(2 * m + 1);
    circuit.embedded(&[], &vreg, v_dagger.clone())?;
    circuit.embedded(&[], &cmp, v_dagger)?;
    // equality test: xor the comparator in, mark all-ones, flip the signal
    for k in 0..m {
        circuit.cx(cmp[k], vreg[k])?;
        circuit.x(vreg[k])?;
    }
    circuit.controlled_x(&vreg, signal)?;
    for k in 0..m {
        circuit.x(vreg[k])?;
        circuit.cx(cmp[k], vreg[k])?;
    }
    // signal-controlled clearing of the component register
    for k in 0..m {
        circuit.controlled_x(&[signal, cmp[k]], vreg[k])?;
    }
    circuit.embedded(&[], &cmp, v.clone())?;
    // restore the basis on the component register only where no match fired
    circuit.x(signal)?;
    circuit.embedded(&[signal], &vreg, v)?;
    circuit.x(signal)?;
    Ok(circuit)
}

/// Unitary with the eigenbasis as leading columns, identity on padding.
fn basis_unitary(eigenbasis: &[DVector<f64>], log_d: usize) -> Result<DMatrix<Complex64>> {
    let dim = 1usize << log_d;
    let d = eigenbasis.len();
    for (i, v) in eigenbasis.iter().enumerate() {
        if v.len() > dim {
            return Err(Error::DimensionMismatch {
                context: format!("basis vector of length {} exceeds register size {dim}", v.len()),
            });
        }
        for (j, w) in eigenbasis.iter().enumerate() {
            let dot: f64 = v.iter().zip(w.iter()).map(|(a, b)| a * b).sum();
            let expect = if i == j { 1.0 } else { 0.0 };
            if (dot - expect).abs() > 1e-10 {
                return Err(Error::InvalidConfig(format!(
                    "eigenbasis not orthonormal: <v{i}, v{j}> = {dot}"
                )));
            }
        }
    }
    let mut m = DMatrix::<Complex64>::zeros(dim, dim);
    for (col, v) in eigenbasis.iter().enumerate() {
        for (row, &x) in v.iter().enumerate() {
            m[(row, col)] = Complex64::new(x, 0.0);
        }
    }
    for col in d..dim {
        m[(col, col)] = Complex64::ONE;
    }
    Ok(m)
}

/// Dense matrix of the ordered gate product, restricted to small circuits.
pub fn circuit_to_unitary(c: &Circuit) -> Result<DMatrix<Complex64>> {
    if c.qubit_count() > UNITARY_BUILD_CAP {
        return Err(Error::QubitCapExceeded {
            requested: c.qubit_count(),
            cap: UNITARY_BUILD_CAP,
        });
    }
    let n = c.qubit_count();
    let size = 1usize << n;
    let mut u = DMatrix::<Complex64>::identity(size, size);
    let mut column = vec![Complex64::ZERO; size];
    for gate in c.gates() {
        for col in 0..size {
            for row in 0..size {
                column[row] = u[(row, col)];
            }
            apply_gate_to_amplitudes(gate, n, &mut column);
            for row in 0..size {
                u[(row, col)] = column[row];
            }
        }
    }
    Ok(u)
}

/// Apply one gate to a raw amplitude vector over `n` qubits
/// (qubit 0 = most significant bit).
pub fn apply_gate_to_amplitudes(gate: &Gate, n: usize, amps: &mut [Complex64]) {
    debug_assert_eq!(amps.len(), 1usize << n);
    let bit = |q: usize| n - 1 - q;
    let mut control_mask = 0usize;
    for &c in &gate.controls {
        control_mask |= 1usize << bit(c);
    }
    match gate.kind {
        GateKind::X | GateKind::Cx | GateKind::Mcx => {
            let t = 1usize << bit(gate.targets[0]);
            for idx in 0..amps.len() {
                if idx & t == 0 && idx & control_mask == control_mask {
                    amps.swap(idx, idx | t);
                }
            }
        }
        GateKind::EmbeddedUnitary => {
            let payload = gate.payload.as_ref().expect("validated on push");
            let k = gate.targets.len();
            let block = 1usize << k;
            let mut offsets = vec![0usize; block];
            for (p, offset) in offsets.iter_mut().enumerate() {
                let mut o = 0usize;
                for (t, &q) in gate.targets.iter().enumerate() {
                    if (p >> (k - 1 - t)) & 1 == 1 {
                        o |= 1usize << bit(q);
                    }
                }
                *offset = o;
            }
            let target_mask: usize = offsets[block - 1];
            let mut gathered = vec![Complex64::ZERO; block];
            for base in 0..amps.len() {
                if base & target_mask != 0 || base & control_mask != control_mask {
                    continue;
                }
                for (p, &offset) in offsets.iter().enumerate() {
                    gathered[p] = amps[base | offset];
                }
                for (row, &offset) in offsets.iter().enumerate() {
                    let mut acc = Complex64::ZERO;
                    for (col, &g) in gathered.iter().enumerate() {
                        acc += payload[(row, col)] * g;
                    }
                    amps[base | offset] = acc;
                }
            }
        }
    }
}
