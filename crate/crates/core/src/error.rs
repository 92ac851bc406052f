use thiserror::Error;

use crate::gates::GateKind;

/// Errors raised across the simulator, gradient engines and training loop.
#[derive(Debug, Error)]
pub enum Error {
    #[error("qubit count {0} outside supported range 1..={max}", max = crate::kernel::MAX_QUBITS)]
    QubitCount(usize),
    #[error("qubit index {index} out of range for {n_qubits}-qubit register")]
    QubitOutOfRange { index: usize, n_qubits: usize },
    #[error("matrix is not unitary (defect {0:e})")]
    NonUnitary(f64),
    #[error("control and target must differ (both {0})")]
    SameControlTarget(usize),
    #[error("duplicate qubit index {0}")]
    DuplicateQubit(usize),
    #[error("amplitude vector is not a valid state: {0}")]
    InvalidState(String),
    #[error("{kind:?} takes {expected} parameter(s), got {got}")]
    Arity {
        kind: GateKind,
        expected: usize,
        got: usize,
    },
    #[error("{kind:?} acts on {expected} qubit(s), got {got}")]
    QubitArity {
        kind: GateKind,
        expected: usize,
        got: usize,
    },
    #[error("{0:?} has no parameter to differentiate")]
    NotParameterized(GateKind),
    #[error("invalid rotation pool: {0}")]
    InvalidPool(String),
    #[error("measurement value {0} outside [0, 1]")]
    MeasurementRange(f64),
    #[error("invalid circuit: {0}")]
    InvalidCircuit(String),
    #[error("register {0} read before any measurement wrote it")]
    UnsetRegister(usize),
    #[error("dimension mismatch: {what} expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid noise specification: {0}")]
    InvalidNoise(String),
    #[error("{method} gradients are unavailable on the {backend} backend")]
    Dispatch {
        method: &'static str,
        backend: &'static str,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("series diverged at step {step} (|y| = {value}) for seed {seed}")]
    Divergence { step: usize, value: f64, seed: u64 },
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
