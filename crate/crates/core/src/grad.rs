//! Gradient engines: parameter shift, adjoint sweep and finite differences,
//! plus the backend dispatcher and the angle-adaptive growth step.
//!
//! All three engines differentiate a recorded [`Tape`], so branch decisions
//! taken by conditional nodes in the forward pass stay fixed while angles
//! are perturbed.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::ParamCircuit;
use crate::engine::{record, AngleSource, Backend, FinalState, Observable, Tape};
use crate::error::{Error, Result};
use crate::gates::{target_derivative, target_matrix, GateKind};
use crate::kernel::StateVector;

/// Default finite-difference step.
pub const FD_STEP: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", content = "h", rename_all = "snake_case")]
pub enum GradMethod {
    ParamShift,
    Adjoint,
    FiniteDiff(f64),
}

impl GradMethod {
    pub fn name(&self) -> &'static str {
        match self {
            GradMethod::ParamShift => "param_shift",
            GradMethod::Adjoint => "adjoint",
            GradMethod::FiniteDiff(_) => "finite_diff",
        }
    }
}

/// Gradient of one expectation with respect to the trainable slots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientVector {
    pub values: Vec<f64>,
    /// Gradient with respect to the embedded features, when requested.
    pub feature_values: Option<Vec<f64>>,
    pub method: GradMethod,
    /// Full circuit evaluations performed (the adjoint sweep counts as one).
    pub circuit_evals: u64,
    /// Gate or derivative-generator applications on a state buffer.
    pub gate_applications: u64,
}

/// Picks the gradient method a backend supports natively.
pub fn grad_dispatch(backend: &Backend) -> GradMethod {
    match backend {
        Backend::Analytic => GradMethod::Adjoint,
        Backend::Sampled { .. } | Backend::Noisy { .. } => GradMethod::ParamShift,
    }
}

/// Shift terms `(coefficient, shift)` for one parameter of `kind`.
///
/// Single-qubit rotations and each R3 angle have a generator with two
/// eigenvalues one apart, so the two-term pi/2 rule is exact. Controlled
/// rotations have generator eigenvalues {0, +-1/2} and need four terms.
fn shift_terms(kind: GateKind) -> Result<&'static [(f64, f64)]> {
    use std::f64::consts::{FRAC_PI_2, SQRT_2};
    const TWO: [(f64, f64); 2] = [(0.5, FRAC_PI_2), (-0.5, -FRAC_PI_2)];
    const DP: f64 = (SQRT_2 + 1.0) / (4.0 * SQRT_2);
    const DM: f64 = (SQRT_2 - 1.0) / (4.0 * SQRT_2);
    const FOUR: [(f64, f64); 4] = [
        (DP, FRAC_PI_2),
        (-DP, -FRAC_PI_2),
        (-DM, 3.0 * FRAC_PI_2),
        (DM, -3.0 * FRAC_PI_2),
    ];
    match kind {
        GateKind::RX | GateKind::RY | GateKind::RZ | GateKind::R3 => Ok(&TWO),
        GateKind::CRY | GateKind::CRZ => Ok(&FOUR),
        k => Err(Error::NotParameterized(k)),
    }
}

/// Per-slot sums of angle gradients; `angle_grads[k][p]` is the derivative
/// with respect to angle `p` of tape gate `k`.
struct Routed {
    theta: Vec<f64>,
    features: Vec<f64>,
}

fn route(tape: &Tape, angle_grads: &[[f64; 3]], n_trainable: usize, n_features: usize) -> Routed {
    let mut out = Routed { theta: vec![0.0; n_trainable], features: vec![0.0; n_features] };
    for (gate, g) in tape.gates.iter().zip(angle_grads) {
        for p in 0..gate.n_params() {
            match gate.sources[p] {
                AngleSource::Trainable(j) => out.theta[j] += g[p],
                AngleSource::Feature { index, scale } => out.features[index] += scale * g[p],
                AngleSource::Constant => {}
            }
        }
    }
    out
}

fn wanted(source: AngleSource, features: bool) -> bool {
    match source {
        AngleSource::Trainable(_) => true,
        AngleSource::Feature { .. } => features,
        AngleSource::Constant => false,
    }
}

/// Streams 0 and 1 belong to the forward pass; shifted evaluations use
/// streams from here on.
const SHIFT_STREAM_BASE: u64 = 2;

pub(crate) struct TapeGradient {
    pub theta: Vec<f64>,
    pub features: Vec<f64>,
    pub circuit_evals: u64,
    pub gate_applications: u64,
}

/// Parameter-shift gradient of a tape. Each (gate, angle) occurrence is
/// shifted on its own and results are summed into the owning slot.
pub(crate) fn tape_param_shift(
    tape: &Tape,
    backend: &Backend,
    obs: &Observable,
    n_trainable: usize,
    n_features: usize,
    with_features: bool,
) -> Result<TapeGradient> {
    let mut jobs = Vec::new();
    for (k, gate) in tape.gates.iter().enumerate() {
        for p in 0..gate.n_params() {
            if wanted(gate.sources[p], with_features) {
                for &(coeff, shift) in shift_terms(gate.kind)? {
                    jobs.push((k, p, coeff, shift));
                }
            }
        }
    }
    let values: Vec<f64> = jobs
        .par_iter()
        .enumerate()
        .map(|(i, &(k, p, coeff, shift))| {
            let mut shifted = tape.clone();
            shifted.gates[k].angles[p] += shift;
            Ok(coeff * shifted.expectation(backend, obs, SHIFT_STREAM_BASE + i as u64)?)
        })
        .collect::<Result<_>>()?;
    let mut angle_grads = vec![[0.0; 3]; tape.gates.len()];
    for (&(k, p, _, _), v) in jobs.iter().zip(&values) {
        angle_grads[k][p] += v;
    }
    let routed = route(tape, &angle_grads, n_trainable, n_features);
    let evals = jobs.len() as u64;
    Ok(TapeGradient {
        theta: routed.theta,
        features: routed.features,
        circuit_evals: evals,
        gate_applications: evals * tape.gates.len() as u64,
    })
}

/// Central finite differences on a tape: every occurrence of a slot is
/// perturbed together.
pub(crate) fn tape_finite_diff(
    tape: &Tape,
    backend: &Backend,
    obs: &Observable,
    n_trainable: usize,
    n_features: usize,
    with_features: bool,
    h: f64,
) -> Result<TapeGradient> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!("finite-difference step {h} must be positive")));
    }
    #[derive(Clone, Copy)]
    enum Target {
        Theta(usize),
        Feature(usize),
    }
    let mut targets: Vec<Target> = (0..n_trainable).map(Target::Theta).collect();
    if with_features {
        targets.extend((0..n_features).map(Target::Feature));
    }
    let perturbed = |t: Target, delta: f64| {
        let mut out = tape.clone();
        for gate in &mut out.gates {
            for p in 0..gate.n_params() {
                match (t, gate.sources[p]) {
                    (Target::Theta(j), AngleSource::Trainable(s)) if s == j => gate.angles[p] += delta,
                    (Target::Feature(i), AngleSource::Feature { index, scale }) if index == i => {
                        gate.angles[p] += delta * scale
                    }
                    _ => {}
                }
            }
        }
        out
    };
    let values: Vec<f64> = targets
        .par_iter()
        .enumerate()
        .map(|(i, &t)| {
            let stream = SHIFT_STREAM_BASE + 2 * i as u64;
            let plus = perturbed(t, h).expectation(backend, obs, stream)?;
            let minus = perturbed(t, -h).expectation(backend, obs, stream + 1)?;
            Ok((plus - minus) / (2.0 * h))
        })
        .collect::<Result<_>>()?;
    let evals = 2 * targets.len() as u64;
    let features = if with_features { values[n_trainable..].to_vec() } else { vec![0.0; n_features] };
    Ok(TapeGradient {
        theta: values[..n_trainable].to_vec(),
        features,
        circuit_evals: evals,
        gate_applications: evals * tape.gates.len() as u64,
    })
}

/// Adjoint sweep over a pure-state tape. `psi` must be the tape's final
/// state. Every parameterized occurrence is differentiated, so the work
/// depends only on the tape, never on how many angles are trainable.
pub(crate) fn tape_adjoint(
    tape: &Tape,
    mut psi: StateVector,
    obs: &Observable,
    n_trainable: usize,
    n_features: usize,
) -> Result<TapeGradient> {
    let n = tape.n_qubits;
    let mut lambda = psi.clone();
    lambda.scale_diagonal(&obs.diagonal(n));
    let mut applications = tape.gates.len() as u64 + 1;
    let mut angle_grads = vec![[0.0; 3]; tape.gates.len()];
    for (k, gate) in tape.gates.iter().enumerate().rev() {
        let params = &gate.angles[..gate.n_params()];
        let u_dag = target_matrix(gate.kind, params)?.dagger();
        if gate.kind.is_controlled() {
            psi.apply_controlled(&u_dag, gate.qubits[0], gate.qubits[1])?;
        } else {
            psi.apply_1q(&u_dag, gate.qubits[0])?;
        }
        applications += 1;
        for p in 0..gate.n_params() {
            let d = target_derivative(gate.kind, params, p);
            let mut mu = psi.clone();
            if gate.kind.is_controlled() {
                mu.apply_controlled_matrix(&d, gate.qubits[0], gate.qubits[1], true);
            } else {
                mu.apply_matrix(&d, gate.qubits[0]);
            }
            applications += 1;
            angle_grads[k][p] = 2.0 * lambda.inner(&mu).re;
        }
        if k > 0 {
            if gate.kind.is_controlled() {
                lambda.apply_controlled(&u_dag, gate.qubits[0], gate.qubits[1])?;
            } else {
                lambda.apply_1q(&u_dag, gate.qubits[0])?;
            }
            applications += 1;
        }
    }
    let routed = route(tape, &angle_grads, n_trainable, n_features);
    Ok(TapeGradient {
        theta: routed.theta,
        features: routed.features,
        circuit_evals: 1,
        gate_applications: applications,
    })
}

/// Gradient of a recorded tape by `method`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn tape_gradient(
    method: GradMethod,
    tape: &Tape,
    state: FinalState,
    backend: &Backend,
    obs: &Observable,
    n_trainable: usize,
    n_features: usize,
    with_features: bool,
) -> Result<TapeGradient> {
    match method {
        GradMethod::Adjoint => match (backend, state) {
            (Backend::Analytic, FinalState::Pure(psi)) => tape_adjoint(tape, psi, obs, n_trainable, n_features),
            _ => Err(Error::Dispatch { method: "adjoint", backend: backend.name() }),
        },
        GradMethod::ParamShift => tape_param_shift(tape, backend, obs, n_trainable, n_features, with_features),
        GradMethod::FiniteDiff(h) => {
            tape_finite_diff(tape, backend, obs, n_trainable, n_features, with_features, h)
        }
    }
}

/// Gradient of `<obs>` with respect to the trainable slots (and, when
/// `with_features`, the embedded features).
pub fn gradient(
    method: GradMethod,
    circuit: &ParamCircuit,
    theta: &[f64],
    features: &[f64],
    backend: &Backend,
    obs: &Observable,
    with_features: bool,
) -> Result<GradientVector> {
    if method == GradMethod::Adjoint && *backend != Backend::Analytic {
        return Err(Error::Dispatch { method: "adjoint", backend: backend.name() });
    }
    obs.validate(circuit.n_qubits())?;
    let (tape, state) = record(circuit, theta, features, backend, 0)?;
    let forward = tape.gates.len() as u64;
    let g = tape_gradient(
        method,
        &tape,
        state,
        backend,
        obs,
        circuit.n_trainable(),
        circuit.n_features(),
        with_features,
    )?;
    if let Some(bad) = g.theta.iter().chain(&g.features).find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("gradient entry {bad}")));
    }
    // The adjoint sweep reuses the recording pass as its forward pass.
    let gate_applications = match method {
        GradMethod::Adjoint => g.gate_applications,
        _ => g.gate_applications + forward,
    };
    Ok(GradientVector {
        values: g.theta,
        feature_values: with_features.then_some(g.features),
        method,
        circuit_evals: g.circuit_evals,
        gate_applications,
    })
}

pub fn grad_param_shift(
    circuit: &ParamCircuit,
    theta: &[f64],
    features: &[f64],
    backend: &Backend,
    obs: &Observable,
) -> Result<GradientVector> {
    gradient(GradMethod::ParamShift, circuit, theta, features, backend, obs, false)
}

pub fn grad_adjoint(
    circuit: &ParamCircuit,
    theta: &[f64],
    features: &[f64],
    obs: &Observable,
) -> Result<GradientVector> {
    gradient(GradMethod::Adjoint, circuit, theta, features, &Backend::Analytic, obs, false)
}

pub fn grad_finite_diff(
    circuit: &ParamCircuit,
    theta: &[f64],
    features: &[f64],
    backend: &Backend,
    obs: &Observable,
    h: f64,
) -> Result<GradientVector> {
    gradient(GradMethod::FiniteDiff(h), circuit, theta, features, backend, obs, false)
}

/// One growth candidate for [`aao_step`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub kind: GateKind,
    pub qubits: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidatePool {
    candidates: Vec<Candidate>,
}

impl CandidatePool {
    pub fn new(candidates: Vec<Candidate>) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::InvalidArgument("candidate pool is empty".into()));
        }
        for c in &candidates {
            if !matches!(c.kind, GateKind::RY | GateKind::CRY | GateKind::CRZ) {
                return Err(Error::InvalidArgument(format!("{:?} is not a growth gate", c.kind)));
            }
        }
        Ok(Self { candidates })
    }

    /// RY on every qubit plus CRY and CRZ on every ordered pair.
    pub fn full(n_qubits: usize) -> Result<Self> {
        let mut candidates: Vec<Candidate> =
            (0..n_qubits).map(|q| Candidate { kind: GateKind::RY, qubits: vec![q] }).collect();
        for kind in [GateKind::CRY, GateKind::CRZ] {
            for c in 0..n_qubits {
                for t in (0..n_qubits).filter(|&t| t != c) {
                    candidates.push(Candidate { kind, qubits: vec![c, t] });
                }
            }
        }
        Self::new(candidates)
    }

    pub fn candidates(&self) -> &[Candidate] {
        &self.candidates
    }
}

/// Index of the largest magnitude; ties go to the lowest index.
pub fn argmax_abs(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if best.is_none_or(|b| v.abs() > values[b].abs()) {
            best = Some(i);
        }
    }
    best
}

/// Result of one [`aao_step`].
#[derive(Clone, Debug)]
pub struct AaoStep {
    pub circuit: ParamCircuit,
    pub theta: Vec<f64>,
    pub chosen: usize,
    /// Parameter-shift gradient of every candidate at angle 0.
    pub candidate_gradients: Vec<f64>,
}

/// Appends the pool candidate whose fresh angle has the steepest cost
/// gradient at zero.
pub fn aao_step(
    circuit: &ParamCircuit,
    theta: &[f64],
    features: &[f64],
    backend: &Backend,
    obs: &Observable,
    pool: &CandidatePool,
) -> Result<AaoStep> {
    let mut extended = Vec::with_capacity(pool.candidates.len());
    let mut grads = Vec::with_capacity(pool.candidates.len());
    for cand in &pool.candidates {
        let mut c = circuit.clone();
        let slot = c.push_trainable_gate(cand.kind, cand.qubits.clone())?;
        let mut t = theta.to_vec();
        t.push(0.0);
        let g = grad_param_shift(&c, &t, features, backend, obs)?;
        grads.push(g.values[slot]);
        extended.push((c, t));
    }
    let chosen = argmax_abs(&grads).expect("pool is non-empty");
    let (circuit, theta) = extended.swap_remove(chosen);
    Ok(AaoStep { circuit, theta, chosen, candidate_gradients: grads })
}
