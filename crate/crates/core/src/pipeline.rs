//! Orchestration of the three-stage dimensionality-reduction pipeline.
//!
//! A run proceeds: extract the shadow spectrum classically and validate the
//! configuration against it; prepare the intermediate state (amplitude
//! encoding, phase estimation of the scatter square root, a controlled
//! rotation, uncomputation, and post-selection); branch on the reduction
//! operator's eigenphases and intercept the retained components; replace
//! each retained component register by its index. The result encodes the
//! reduced dataset, and the report carries the exact branch probabilities,
//! fidelities against the classical oracle, and gate counts.
//!
//! Branch probabilities are exact amplitude masses. Instead of simulating
//! amplitude amplification, the report states the implied repetition counts
//! `ceil(1 / sqrt(p))`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::circuit::{
    build_u_lambda, build_u_v, gate_count_report, Circuit, GateCountReport, GateKind,
};
use crate::error::{Error, Result};
use crate::lda::{
    project_eq9, project_pipeline_oracle, solve_shadow, Dataset, ScatterModel, ShadowSpectrum,
};
use crate::linalg::{
    build_rho, mat_power_half, sym_eig, ClampMode, ClampPolicy, HalfPower, SymMatrix,
};
use crate::qpe::{pattern_of, value_of_pattern, PhaseGroups};
use crate::qstate::{
    ceil_log2, prepare_psi_x, MeasurementRecord, QuantumState, RegisterLayout, Unitary,
};

/// Register names used by the pipeline.
pub const REG_INDEX: &str = "index";
pub const REG_FEATURE: &str = "feature";
pub const REG_SIGMA: &str = "sigma";
pub const REG_ROTATION: &str = "rot";
pub const REG_LAMBDA: &str = "lambda";
pub const REG_SIGNAL: &str = "signal";
pub const REG_COMPARATOR: &str = "cmp";
pub const REG_OUT: &str = "index_out";

/// Eigenvalues closer than this are treated as one degenerate cluster when
/// fidelities are compared.
pub const DEGENERACY_TOL: f64 = 1e-9;

/// Pipeline configuration.
///
/// `lambda_bits` is the eigenvalue-register width for the reduction
/// operator, `sigma_bits` the width for the scatter square root; each plays
/// the role of `ceil(log2(1/epsilon))` for its phase estimation.
#[derive(Debug, Clone, Serialize)]
pub struct PipelineConfig {
    pub lambda_bits: usize,
    pub sigma_bits: usize,
    /// Condition window for eigenvalues of the reduction operator: retained
    /// values below `1 / kappa_lambda` draw a warning.
    pub kappa_lambda: f64,
    /// Effective condition number clamping every power of the within-class
    /// scatter.
    pub kappa_sigma: f64,
    pub clamp_mode: ClampMode,
    /// Cumulative eigenvalue mass that fixes the retained dimension.
    pub threshold: f64,
    /// Rotation constant; `None` resolves to `1 / sigma_max` so the rotation
    /// amplitudes stay within 1.
    pub c1: Option<f64>,
    /// Evolution time for both phase estimations. The default maps
    /// eigenvalues in (0, 1] to phases in (0, 1/2], so no phase wraps.
    pub t_evolution: f64,
    /// Scatter regularization magnitude.
    pub alpha: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            lambda_bits: 10,
            sigma_bits: 10,
            kappa_lambda: 100.0,
            kappa_sigma: 100.0,
            clamp_mode: ClampMode::Discard,
            threshold: 0.95,
            c1: None,
            t_evolution: PI,
            alpha: 0.0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_bits == 0 || self.lambda_bits > 20 {
            return Err(Error::InvalidConfig(format!(
                "lambda_bits must lie in 1..=20, got {}",
                self.lambda_bits
            )));
        }
        if self.sigma_bits == 0 || self.sigma_bits > 20 {
            return Err(Error::InvalidConfig(format!(
                "sigma_bits must lie in 1..=20, got {}",
                self.sigma_bits
            )));
        }
        for (name, kappa) in [("kappa_lambda", self.kappa_lambda), ("kappa_sigma", self.kappa_sigma)]
        {
            if !kappa.is_finite() || kappa <= 1.0 {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be finite and > 1, got {kappa}"
                )));
            }
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "threshold must lie in (0, 1], got {}",
                self.threshold
            )));
        }
        if let Some(c1) = self.c1 {
            if !c1.is_finite() || c1 <= 0.0 {
                return Err(Error::InvalidConfig(format!("c1 must be positive, got {c1}")));
            }
        }
        if !(self.t_evolution > 0.0 && self.t_evolution <= PI + 1e-12) {
            return Err(Error::InvalidConfig(format!(
                "t_evolution must lie in (0, pi], got {}",
                self.t_evolution
            )));
        }
        if self.alpha < 0.0 {
            return Err(Error::InvalidConfig(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        Ok(())
    }

    pub fn clamp_sigma(&self) -> Result<ClampPolicy> {
        ClampPolicy::new(self.kappa_sigma, self.clamp_mode)
    }
}

/// Per-circuit gate tally in the report.
#[derive(Debug, Clone, Serialize)]
pub struct CircuitGateCount {
    pub name: String,
    pub counts: GateCountReport,
}

/// Everything one run reports.
#[derive(Debug, Clone, Serialize)]
pub struct PipelineReport {
    pub d: usize,
    /// Full spectrum of the reduction operator, descending.
    pub spectrum: Vec<f64>,
    /// Resolved rotation constant.
    pub c1: f64,
    /// Whether the condition clamp removed part of the scatter spectrum.
    pub clamp_active: bool,
    /// Exact success probability of the intermediate post-selection.
    pub p1: f64,
    /// Exact success probability of the interception post-selection.
    pub p2: f64,
    pub repetition_estimate_p1: u64,
    pub repetition_estimate_p2: u64,
    /// `1 / kappa_sigma^2`; `p1` is expected to dominate it when the clamp
    /// is inactive.
    pub p1_lower_bound: f64,
    pub p1_bound_satisfied: bool,
    /// `d / D`, reported but not asserted.
    pub p2_lower_bound: f64,
    pub p2_bound_satisfied: bool,
    pub fidelity_pipeline_oracle: f64,
    pub fidelity_eq9: f64,
    pub gate_counts: Vec<CircuitGateCount>,
    pub warnings: Vec<String>,
}

/// Intermediate-state stage output with its mid-stage snapshot.
#[derive(Debug, Clone)]
pub struct IntermediateTrace {
    /// State right after the scatter-root phase estimation.
    pub after_phase_estimate: QuantumState,
    /// The intermediate state itself.
    pub state: QuantumState,
    pub record: MeasurementRecord,
    pub c1: f64,
    pub clamp_active: bool,
}

/// Branch stage output with its mid-stage snapshot.
#[derive(Debug, Clone)]
pub struct BranchTrace {
    /// State right after the reduction-operator phase estimation.
    pub after_phase_estimate: QuantumState,
    /// Intercepted state (signal measured and removed, eigenvalue register
    /// still holding the zero-extended component indexes).
    pub state: QuantumState,
    pub record: MeasurementRecord,
    pub gate_counts: Vec<CircuitGateCount>,
}

/// Replacement round snapshots: right after the component circuit (the
/// comparator register still in place), then after its discard.
#[derive(Debug, Clone)]
pub struct ReplacementRound {
    pub after_replacement: QuantumState,
    pub after_discard: QuantumState,
}

/// Snapshot bundle collected by [`run_with_model`] when asked.
#[derive(Debug, Clone, Default)]
pub struct Snapshots {
    pub sigma_phase_estimate: Option<QuantumState>,
    pub intermediate: Option<QuantumState>,
    pub lambda_phase_estimate: Option<QuantumState>,
    pub intercepted: Option<QuantumState>,
    pub replacement_rounds: Vec<ReplacementRound>,
}

/// Result of a full pipeline run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub psi_y: QuantumState,
    pub report: PipelineReport,
    pub snapshots: Snapshots,
}

/// Classical stage: build the scatter model internally and return the
/// shadow spectrum with the retained dimension.
pub fn extract_shadow(ds: &Dataset, cfg: &PipelineConfig) -> Result<ShadowSpectrum> {
    let (model, _) = ScatterModel::from_dataset(ds, cfg.alpha)?;
    Ok(extract_shadow_with_model(&model, cfg)?.0)
}

/// Classical stage on a prebuilt model. Verifies that phase estimation of
/// the reduction operator reads out each retained eigenvalue exactly at the
/// configured register width.
pub fn extract_shadow_with_model(
    model: &ScatterModel,
    cfg: &PipelineConfig,
) -> Result<(ShadowSpectrum, Vec<String>)> {
    cfg.validate()?;
    let (spectrum, mut warnings) = solve_shadow(model, cfg.clamp_sigma()?, cfg.threshold)?;
    for j in 0..spectrum.d {
        if spectrum.values[j] < 1.0 / cfg.kappa_lambda - 1e-12 {
            warnings.push(format!(
                "retained eigenvalue {} = {:.6e} lies below 1/kappa_lambda = {:.3e}; \
                 phase estimation at this condition window would not resolve it",
                j + 1,
                spectrum.values[j],
                1.0 / cfg.kappa_lambda
            ));
        }
    }

    // Readout check: each retained eigenstate must land on its own pattern
    // with certainty.
    let mf = ceil_log2(model.sw.dim().max(2));
    let groups = PhaseGroups::new(
        &spectrum.values,
        &spectrum.vectors,
        mf,
        cfg.t_evolution,
        cfg.lambda_bits,
    )?;
    for j in 0..spectrum.d {
        let layout = RegisterLayout::new(vec![(REG_FEATURE, mf)])?;
        let mut amps = vec![Complex64::ZERO; 1usize << mf];
        for (i, &x) in spectrum.vectors[j].iter().enumerate() {
            amps[i] = Complex64::new(x, 0.0);
        }
        let eigenstate = QuantumState::from_amplitudes(layout, amps)?;
        let after = groups.append(&eigenstate, REG_FEATURE, REG_LAMBDA)?;
        let expected = pattern_of(spectrum.values[j], cfg.t_evolution, cfg.lambda_bits)?;
        let p = after.probability_of(REG_LAMBDA, expected)?;
        if p < 1.0 - 1e-10 {
            return Err(Error::InvalidConfig(format!(
                "eigenphase readout for component {} returned pattern probability {p}",
                j + 1
            )));
        }
    }
    Ok((spectrum, warnings))
}

/// Quantum stage one: amplitude-encode the dataset and weight every sample
/// by the scatter square root, via phase estimation, a controlled rotation,
/// uncomputation, and post-selection of the rotated flag.
pub fn prepare_intermediate(
    ds: &Dataset,
    model: &ScatterModel,
    cfg: &PipelineConfig,
) -> Result<(QuantumState, MeasurementRecord)> {
    let trace = prepare_intermediate_traced(ds, model, cfg)?;
    Ok((trace.state, trace.record))
}

pub fn prepare_intermediate_traced(
    ds: &Dataset,
    model: &ScatterModel,
    cfg: &PipelineConfig,
) -> Result<IntermediateTrace> {
    cfg.validate()?;
    if ds.n_features() != model.sw.dim() {
        return Err(Error::DimensionMismatch {
            context: format!(
                "dataset has {} features, model has {}",
                ds.n_features(),
                model.sw.dim()
            ),
        });
    }
    let psi_x = prepare_psi_x(ds)?;

    let clamp = cfg.clamp_sigma()?;
    let sw_eig = sym_eig(&model.sw)?;
    let clamp_active =
        *sw_eig.values.last().expect("non-empty spectrum") < sw_eig.values[0] / cfg.kappa_sigma;
    let sw_half = mat_power_half(&model.sw, HalfPower::Sqrt, clamp)?;
    let half_eig = sym_eig(&sw_half)?;

    let mf = ceil_log2(ds.n_features().max(2));
    let groups = PhaseGroups::new(
        &half_eig.values,
        &half_eig.vectors,
        mf,
        cfg.t_evolution,
        cfg.sigma_bits,
    )?;

    let sigma_max = half_eig.values[0];
    let sigma_bar_max = groups
        .patterns()
        .map(|p| value_of_pattern(p, cfg.t_evolution, cfg.sigma_bits))
        .fold(0.0, f64::max);
    let c1 = match cfg.c1 {
        Some(c1) => c1,
        None => 1.0 / sigma_max.max(sigma_bar_max),
    };
    let reach = c1 * sigma_max.max(sigma_bar_max);
    if reach > 1.0 + 1e-9 {
        return Err(Error::InvalidConfig(format!(
            "rotation amplitude c1 * sigma = {reach} exceeds 1; lower c1"
        )));
    }

    let after_qpe = groups.append(&psi_x, REG_FEATURE, REG_SIGMA)?;
    let mut state = after_qpe.append_register(REG_ROTATION, 1)?;
    for pattern in groups.patterns() {
        let s = (c1 * value_of_pattern(pattern, cfg.t_evolution, cfg.sigma_bits)).min(1.0);
        let c = (1.0 - s * s).max(0.0).sqrt();
        let rotation = Unitary::from_real(&DMatrix::from_row_slice(2, 2, &[c, -s, s, c]))?;
        state =
            state.apply_unitary_controlled(&rotation, &[REG_ROTATION], &[(REG_SIGMA, pattern)])?;
    }
    let state = groups.invert(&state, REG_FEATURE, REG_SIGMA)?;
    let state = state.discard_register(REG_SIGMA)?;
    let (state, record) = state.postselect(REG_ROTATION, 1)?;
    let state = state.discard_register(REG_ROTATION)?;

    Ok(IntermediateTrace { after_phase_estimate: after_qpe, state, record, c1, clamp_active })
}

/// Quantum stage two: phase-estimate the reduction operator, run the branch
/// circuits for the retained components, and post-select the flagged branch.
pub fn branch_and_intercept(
    psi_t: &QuantumState,
    spectrum: &ShadowSpectrum,
    rho: &SymMatrix,
    cfg: &PipelineConfig,
) -> Result<(QuantumState, MeasurementRecord)> {
    let trace = branch_and_intercept_traced(psi_t, spectrum, rho, cfg)?;
    Ok((trace.state, trace.record))
}

pub fn branch_and_intercept_traced(
    psi_t: &QuantumState,
    spectrum: &ShadowSpectrum,
    rho: &SymMatrix,
    cfg: &PipelineConfig,
) -> Result<BranchTrace> {
    cfg.validate()?;
    verify_spectrum(spectrum, rho)?;
    let l = cfg.lambda_bits;
    let d = spectrum.d;
    let q = ceil_log2(d);
    if q > l {
        return Err(Error::IndexWidthExceeded { q, l });
    }

    // Every retained pattern must be unique across the whole spectrum,
    // otherwise a branch circuit would intercept the wrong component.
    let patterns: Vec<u64> = spectrum
        .values
        .iter()
        .map(|&v| pattern_of(v, cfg.t_evolution, l))
        .collect::<Result<_>>()?;
    for kept in 0..d {
        for other in 0..patterns.len() {
            if other != kept && patterns[other] == patterns[kept] {
                return Err(Error::BranchAmbiguity { bits: l, first: kept + 1, second: other + 1 });
            }
        }
    }
    let mf = psi_t.layout().width(REG_FEATURE)?;
    if (1usize << mf) > spectrum.values.len() && patterns[..d].contains(&0) {
        // zero-padded feature coordinates share the zero pattern
        return Err(Error::BranchAmbiguity { bits: l, first: d, second: 0 });
    }

    let groups = PhaseGroups::new(&spectrum.values, &spectrum.vectors, mf, cfg.t_evolution, l)?;
    let after_qpe = groups.append(psi_t, REG_FEATURE, REG_LAMBDA)?;

    let mut state = after_qpe.append_register(REG_SIGNAL, 1)?;
    let mut gate_counts = Vec::with_capacity(d);
    for (j, &pattern) in patterns.iter().take(d).enumerate() {
        let circuit = build_u_lambda(pattern, j as u64, l, q)?;
        gate_counts.push(CircuitGateCount {
            name: format!("u_lambda_{}", j + 1),
            counts: gate_count_report(&circuit),
        });
        state = apply_circuit(&state, &circuit, &[REG_LAMBDA, REG_SIGNAL], &[])?;
    }
    let (state, record) = state.postselect(REG_SIGNAL, 1)?;
    let state = state.discard_register(REG_SIGNAL)?;

    Ok(BranchTrace { after_phase_estimate: after_qpe, state, record, gate_counts })
}

/// Quantum stage three: for each retained component, compare the component
/// register against a freshly prepared copy, clear it on the match, and
/// discard the comparator; finish by discarding the cleared register and
/// the flag, leaving the reduced-dataset state.
pub fn replacement(
    psi: &QuantumState,
    spectrum: &ShadowSpectrum,
    cfg: &PipelineConfig,
) -> Result<QuantumState> {
    let (state, _, _) = replacement_traced(psi, spectrum, cfg, false)?;
    Ok(state)
}

pub fn replacement_traced(
    psi: &QuantumState,
    spectrum: &ShadowSpectrum,
    cfg: &PipelineConfig,
    collect: bool,
) -> Result<(QuantumState, Vec<ReplacementRound>, Vec<CircuitGateCount>)> {
    cfg.validate()?;
    let d = spectrum.d;
    let l = psi.layout().width(REG_LAMBDA)?;
    let q = ceil_log2(d);

    // The eigenvalue register now holds zero-extended indexes below 2^q;
    // drop the exactly-zero high qubits to keep the amplitude vector small.
    let mut state = if q == 0 {
        psi.discard_register(REG_LAMBDA)?
    } else if q < l {
        psi.split_register(REG_LAMBDA, l - q, "lambda_pad", REG_OUT)?
            .discard_register("lambda_pad")?
    } else {
        psi.rename_register(REG_LAMBDA, REG_OUT)?
    };

    let mf = state.layout().width(REG_FEATURE)?;
    let x_gate = Unitary::new(DMatrix::from_row_slice(
        2,
        2,
        &[Complex64::ZERO, Complex64::ONE, Complex64::ONE, Complex64::ZERO],
    ))?;
    let basis = basis_preparation_unitary(spectrum, mf)?;

    state = state.append_register(REG_SIGNAL, 1)?;
    let mut rounds = Vec::new();
    let mut gate_counts = Vec::with_capacity(d);
    for j in 0..d {
        // fresh comparator register carrying the selected component
        state = state.append_register(REG_COMPARATOR, mf)?;
        let cmp_qubits = state.layout().qubit_positions(REG_COMPARATOR)?;
        for (k, &pos) in cmp_qubits.iter().enumerate() {
            if (j >> (mf - 1 - k)) & 1 == 1 {
                state = state.apply_on_qubits(&x_gate, &[pos], &[])?;
            }
        }
        state = state.apply_unitary(&basis, &[REG_COMPARATOR])?;

        let circuit = build_u_v(j, &spectrum.vectors, mf)?;
        gate_counts.push(CircuitGateCount {
            name: format!("u_v_{}", j + 1),
            counts: gate_count_report(&circuit),
        });
        let controls: Vec<(&str, u64)> = if q == 0 { vec![] } else { vec![(REG_OUT, j as u64)] };
        state = apply_circuit(
            &state,
            &circuit,
            &[REG_FEATURE, REG_COMPARATOR, REG_SIGNAL],
            &controls,
        )?;
        let after_replacement = if collect { Some(state.clone()) } else { None };
        state = state.discard_register(REG_COMPARATOR)?;
        if let Some(after) = after_replacement {
            rounds
                .push(ReplacementRound { after_replacement: after, after_discard: state.clone() });
        }
    }

    let state = state.discard_register(REG_FEATURE)?;
    let state = state.discard_register(REG_SIGNAL)?;
    Ok((state, rounds, gate_counts))
}

/// Index-to-component preparation: maps the basis pattern `|j>` to `|v_j>`.
fn basis_preparation_unitary(spectrum: &ShadowSpectrum, mf: usize) -> Result<Unitary> {
    let dim = 1usize << mf;
    if spectrum.vectors.len() > dim {
        return Err(Error::DimensionMismatch {
            context: format!("{} components exceed a {mf}-qubit register", spectrum.vectors.len()),
        });
    }
    let mut m = DMatrix::<f64>::zeros(dim, dim);
    for (col, v) in spectrum.vectors.iter().enumerate() {
        for (row, &x) in v.iter().enumerate() {
            m[(row, col)] = x;
        }
    }
    for col in spectrum.vectors.len()..dim {
        m[(col, col)] = 1.0;
    }
    Unitary::from_real(&m)
}

/// Apply a circuit's gates to the state, mapping circuit qubits onto the
/// listed registers in order, optionally conditioned on register patterns.
pub fn apply_circuit(
    state: &QuantumState,
    circuit: &Circuit,
    registers: &[&str],
    extra_controls: &[(&str, u64)],
) -> Result<QuantumState> {
    let mut positions = Vec::new();
    for name in registers {
        positions.extend(state.layout().qubit_positions(name)?);
    }
    if positions.len() != circuit.qubit_count() {
        return Err(Error::DimensionMismatch {
            context: format!(
                "circuit spans {} qubits, registers span {}",
                circuit.qubit_count(),
                positions.len()
            ),
        });
    }
    let extra = state.pattern_bit_controls(extra_controls)?;
    let x_gate = Unitary::new(DMatrix::from_row_slice(
        2,
        2,
        &[Complex64::ZERO, Complex64::ONE, Complex64::ONE, Complex64::ZERO],
    ))?;

    let mut out = state.clone();
    for gate in circuit.gates() {
        let targets: Vec<usize> = gate.targets.iter().map(|&k| positions[k]).collect();
        let mut controls: Vec<(usize, bool)> =
            gate.controls.iter().map(|&k| (positions[k], true)).collect();
        controls.extend_from_slice(&extra);
        out = match gate.kind {
            GateKind::X | GateKind::Cx | GateKind::Mcx => {
                out.apply_on_qubits(&x_gate, &targets, &controls)?
            }
            GateKind::EmbeddedUnitary => {
                let payload = gate.payload.as_ref().expect("validated on push").clone();
                out.apply_on_qubits(&Unitary::new(payload)?, &targets, &controls)?
            }
        };
    }
    Ok(out)
}

fn verify_spectrum(spectrum: &ShadowSpectrum, rho: &SymMatrix) -> Result<()> {
    if spectrum.vectors.is_empty() || spectrum.vectors[0].len() != rho.dim() {
        return Err(Error::DimensionMismatch {
            context: "spectrum and operator disagree on dimension".into(),
        });
    }
    let scale = rho.frobenius_norm().max(1e-30);
    for (value, vector) in spectrum.values.iter().zip(&spectrum.vectors) {
        let residual = (rho.apply(vector) - vector * *value).norm();
        if residual > 1e-8 * scale {
            return Err(Error::DimensionMismatch {
                context: format!(
                    "spectrum does not diagonalize the reduction operator (residual {residual:.3e})"
                ),
            });
        }
    }
    Ok(())
}

/// Run the full pipeline, building the scatter model from the dataset.
pub fn run_full(ds: &Dataset, cfg: &PipelineConfig) -> Result<(QuantumState, PipelineReport)> {
    let (model, model_warnings) =
        ScatterModel::from_dataset(ds, cfg.alpha).map_err(|e| e.in_stage("scatter_model"))?;
    let mut outcome = run_with_model(ds, &model, cfg, false)?;
    for (i, w) in model_warnings.into_iter().enumerate() {
        outcome.report.warnings.insert(i, w);
    }
    Ok((outcome.psi_y, outcome.report))
}

/// Run the pipeline against a prebuilt scatter model (synthetic fixtures
/// choose their spectra first and enter here).
pub fn run_with_model(
    ds: &Dataset,
    model: &ScatterModel,
    cfg: &PipelineConfig,
    collect_snapshots: bool,
) -> Result<RunOutcome> {
    cfg.validate()?;
    let (spectrum, mut warnings) =
        extract_shadow_with_model(model, cfg).map_err(|e| e.in_stage("extract_shadow"))?;

    // Reject impossible index widths before any statevector work.
    let q = ceil_log2(spectrum.d);
    if q > cfg.lambda_bits {
        return Err(Error::IndexWidthExceeded { q, l: cfg.lambda_bits });
    }

    let rho = build_rho(&model.sw, &model.sb, cfg.clamp_sigma()?)
        .map_err(|e| e.in_stage("extract_shadow"))?;

    let intermediate = prepare_intermediate_traced(ds, model, cfg)
        .map_err(|e| e.in_stage("prepare_intermediate"))?;
    let branch = branch_and_intercept_traced(&intermediate.state, &spectrum, &rho, cfg)
        .map_err(|e| e.in_stage("branch_and_intercept"))?;
    let (psi_y, rounds, uv_counts) =
        replacement_traced(&branch.state, &spectrum, cfg, collect_snapshots)
            .map_err(|e| e.in_stage("replacement"))?;

    let y_oracle =
        project_pipeline_oracle(ds, model, &spectrum).map_err(|e| e.in_stage("oracle"))?;
    let fidelity_pipeline_oracle =
        oracle_fidelity(&psi_y, &y_oracle, &spectrum.values[..spectrum.d])?;
    let y_eq9 = project_eq9(ds, model, &spectrum).map_err(|e| e.in_stage("oracle"))?;
    let fidelity_eq9 = oracle_fidelity(&psi_y, &y_eq9, &spectrum.values[..spectrum.d])?;

    let mut gate_counts = branch.gate_counts.clone();
    gate_counts.extend(uv_counts);

    let p1 = intermediate.record.probability;
    let p2 = branch.record.probability;
    let p1_lower_bound = 1.0 / (cfg.kappa_sigma * cfg.kappa_sigma);
    let p2_lower_bound = spectrum.d as f64 / model.sw.dim() as f64;
    let report = PipelineReport {
        d: spectrum.d,
        spectrum: spectrum.values.clone(),
        c1: intermediate.c1,
        clamp_active: intermediate.clamp_active,
        p1,
        p2,
        repetition_estimate_p1: repetitions(p1),
        repetition_estimate_p2: repetitions(p2),
        p1_lower_bound,
        p1_bound_satisfied: p1 >= p1_lower_bound * (1.0 - 1e-9),
        p2_lower_bound,
        p2_bound_satisfied: p2 >= p2_lower_bound * (1.0 - 1e-9),
        fidelity_pipeline_oracle,
        fidelity_eq9,
        gate_counts,
        warnings: std::mem::take(&mut warnings),
    };

    let snapshots = if collect_snapshots {
        Snapshots {
            sigma_phase_estimate: Some(intermediate.after_phase_estimate),
            intermediate: Some(intermediate.state),
            lambda_phase_estimate: Some(branch.after_phase_estimate),
            intercepted: Some(branch.state),
            replacement_rounds: rounds,
        }
    } else {
        Snapshots::default()
    };

    Ok(RunOutcome { psi_y, report, snapshots })
}

fn repetitions(p: f64) -> u64 {
    if p <= 0.0 {
        return u64::MAX;
    }
    (1.0 / p.sqrt()).ceil() as u64
}

/// Fidelity of the final state against the normalized flattening of a
/// projection matrix, modulo per-column sign (and, within eigenvalue
/// clusters closer than [`DEGENERACY_TOL`], modulo an orthogonal mixing of
/// the cluster's columns).
pub fn oracle_fidelity(
    psi_y: &QuantumState,
    y: &DMatrix<f64>,
    kept_values: &[f64],
) -> Result<f64> {
    let mi = psi_y.layout().width(REG_INDEX)?;
    let q = psi_y.layout().total_qubits() - mi;
    let cols = 1usize << q;
    let rows = 1usize << mi;
    if y.nrows() > rows || y.ncols() > cols || y.ncols() != kept_values.len() {
        return Err(Error::DimensionMismatch {
            context: format!(
                "oracle matrix {}x{} does not fit the {}x{} state grid",
                y.nrows(),
                y.ncols(),
                rows,
                cols
            ),
        });
    }
    let norm = y.norm();
    if norm == 0.0 {
        return Err(Error::ZeroFrobeniusNorm);
    }

    // cluster retained columns by eigenvalue degeneracy
    let mut clusters: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    for j in 1..=kept_values.len() {
        if j == kept_values.len() || (kept_values[j - 1] - kept_values[j]).abs() > DEGENERACY_TOL {
            clusters.push((start, j));
            start = j;
        }
    }

    let amps = psi_y.amplitudes();
    let mut fidelity = 0.0;
    for (from, to) in clusters {
        let width = to - from;
        let mut overlap = DMatrix::<Complex64>::zeros(width, width);
        for a in 0..width {
            for b in 0..width {
                let mut acc = Complex64::ZERO;
                for i in 0..y.nrows() {
                    let amp = amps[i * cols + (from + a)];
                    acc += amp.conj() * (y[(i, from + b)] / norm);
                }
                overlap[(a, b)] = acc;
            }
        }
        if width == 1 {
            fidelity += overlap[(0, 0)].norm();
        } else {
            fidelity += overlap.svd(false, false).singular_values.iter().sum::<f64>();
        }
    }
    Ok(fidelity.min(1.0))
}
