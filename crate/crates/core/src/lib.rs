//! Differentiable quantum circuit simulation with mid-circuit measurement,
//! conditional rotation pools, and hybrid classical-quantum training.
//!
//! ```
//! use qpie::{run, Backend, GateOp, Observable, ParamCircuit};
//!
//! let circuit = ParamCircuit::from_nodes(1, 0, vec![GateOp::h(0).into()])?;
//! let result = run(&circuit, &[], &[], &Backend::Analytic, &[Observable::z(0)])?;
//! assert!(result.expectations[0].abs() < 1e-12);
//! # Ok::<(), qpie::Error>(())
//! ```

pub mod analysis;
pub mod circuit;
pub mod data;
pub mod engine;
pub mod error;
pub mod gates;
pub mod grad;
pub mod hybrid;
pub mod kernel;

pub use circuit::{
    build_ppel, build_qpie_vqc, build_sel, evaluate_conditional, random_circuit, CircuitNode, ParamCircuit,
    RandomCircuitSpec, RotationPool, SlotAllocator,
};
pub use engine::{apply_channel, decode_prediction, run, softmax, Backend, NoiseSpec, Observable, RunResult, ZTerm};
pub use error::{Error, Result};
pub use gates::{cyz, matrix_of, param_derivative, target_matrix, GateKind, GateOp, ParamSlot};
pub use grad::{
    aao_step, grad_adjoint, grad_dispatch, grad_finite_diff, grad_param_shift, gradient, CandidatePool,
    GradMethod, GradientVector,
};
pub use hybrid::{train, HybridModel, ModelSpec, TrainConfig, TrainTrace};
pub use kernel::{DensityMatrix, StateVector, Unitary2};
