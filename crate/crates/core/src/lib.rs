//! Exact desk-scale simulation of a quantum linear-discriminant-analysis
//! dimensionality-reduction pipeline, paired with a closed-form classical
//! oracle.
//!
//! The crate is organised around the data flow of the algorithm:
//!
//! - [`linalg`] — dense symmetric eigendecomposition, clamped matrix powers,
//!   and construction of the unit-trace operator driving the reduction.
//! - [`lda`] — scatter-matrix construction, shadow-spectrum solution, and the
//!   two classical projection variants used to certify the quantum pipeline.
//! - [`qstate`] — an exact statevector engine with named registers:
//!   amplitude encoding, unitary application, post-selection, and register
//!   discard with a separability guard.
//! - [`circuit`] — elementary-gate circuits: the eigenvalue branch circuit,
//!   the component-replacement comparator, and gate-count accounting.
//! - [`pipeline`] — orchestration of the three pipeline stages and the run
//!   report (branch probabilities, fidelities, gate counts).
//!
//! Everything is computed exactly: measurement probabilities come from
//! amplitude mass, never sampling, and phase estimation resolves eigenphases
//! to a configurable number of bits so truncation error is analyzable.

pub mod circuit;
pub mod error;
pub mod lda;
pub mod linalg;
pub mod pipeline;
pub mod qpe;
pub mod qstate;

pub use error::{Error, ErrorCategory, Result};
