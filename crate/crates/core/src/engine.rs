//! Circuit execution on three backends.
//!
//! Execution first *records* a circuit: slots are resolved to angles,
//! mid-circuit measurements are read and conditional nodes are turned into
//! concrete rotations (or dropped, for switched conditionals that are off).
//! The result is a [`Tape`], a straight-line gate list. Gradient engines
//! re-simulate tapes with perturbed angles, so every shifted evaluation
//! reuses the branch decisions of the unshifted forward pass.
//!
//! Mid-circuit measurement never collapses the simulated state. The register
//! holds the outcome-1 probability on the analytic and noisy backends and an
//! empirical frequency over the configured shots on the sampled backend.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::circuit::{CircuitNode, ParamCircuit};
use crate::error::{Error, Result};
use crate::gates::{target_matrix, GateKind, ParamSlot};
use crate::kernel::{histogram_expectation_z, DensityMatrix, Histogram, StateVector};

/// Per-gate error probabilities applied to every qubit a gate touches.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub p_depol: f64,
    pub p_bitflip: f64,
    pub p_phaseflip: f64,
}

impl NoiseSpec {
    pub fn new(p_depol: f64, p_bitflip: f64, p_phaseflip: f64) -> Result<Self> {
        let spec = Self { p_depol, p_bitflip, p_phaseflip };
        spec.validate()?;
        Ok(spec)
    }

    /// Uniform 1% on each channel.
    pub fn benchmark_default() -> Self {
        Self { p_depol: 0.01, p_bitflip: 0.01, p_phaseflip: 0.01 }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p_depol", self.p_depol),
            ("p_bitflip", self.p_bitflip),
            ("p_phaseflip", self.p_phaseflip),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidNoise(format!("{name} = {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Backend {
    /// Exact statevector expectations.
    Analytic,
    /// Statevector with shot-sampled readout; `shots = None` means `2^n`.
    Sampled { shots: Option<u64>, seed: u64 },
    /// Density matrix with per-gate noise.
    Noisy { noise: NoiseSpec, seed: u64 },
}

impl Backend {
    pub fn name(&self) -> &'static str {
        match self {
            Backend::Analytic => "analytic",
            Backend::Sampled { .. } => "sampled",
            Backend::Noisy { .. } => "noisy",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Backend::Sampled { shots: Some(0), .. } => {
                Err(Error::InvalidArgument("sampled backend needs at least one shot".into()))
            }
            Backend::Noisy { noise, .. } => noise.validate(),
            _ => Ok(()),
        }
    }

    /// Shot count used on an `n_qubits` register.
    pub fn shots_for(&self, n_qubits: usize) -> u64 {
        match self {
            Backend::Sampled { shots: Some(s), .. } => *s,
            _ => 1u64 << n_qubits,
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            Backend::Analytic => None,
            Backend::Sampled { seed, .. } | Backend::Noisy { seed, .. } => Some(*seed),
        }
    }

    /// The same backend with its seed replaced; the analytic backend is
    /// returned unchanged.
    pub fn with_seed(&self, seed: u64) -> Backend {
        match *self {
            Backend::Analytic => Backend::Analytic,
            Backend::Sampled { shots, .. } => Backend::Sampled { shots, seed },
            Backend::Noisy { noise, .. } => Backend::Noisy { noise, seed },
        }
    }

    /// Seeded generator for evaluation number `stream`.
    pub(crate) fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed().unwrap_or(0));
        rng.set_stream(stream);
        rng
    }
}

/// One weighted Pauli-Z string.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZTerm {
    pub coeff: f64,
    pub qubits: Vec<usize>,
}

/// Weighted sum of Z-strings; diagonal in the computational basis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observable {
    pub terms: Vec<ZTerm>,
}

impl Observable {
    pub fn z(q: usize) -> Self {
        Self::z_string(vec![q])
    }

    pub fn z_string(qubits: Vec<usize>) -> Self {
        Self { terms: vec![ZTerm { coeff: 1.0, qubits }] }
    }

    pub fn from_terms(terms: Vec<ZTerm>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::InvalidArgument("observable has no terms".into()));
        }
        Ok(Self { terms })
    }

    /// `sum_k weights[k] * observables[k]`.
    pub fn weighted_sum(observables: &[Observable], weights: &[f64]) -> Self {
        let terms = observables
            .iter()
            .zip(weights)
            .flat_map(|(o, w)| {
                o.terms.iter().map(move |t| ZTerm { coeff: t.coeff * w, qubits: t.qubits.clone() })
            })
            .collect();
        Self { terms }
    }

    pub fn validate(&self, n_qubits: usize) -> Result<()> {
        for t in &self.terms {
            if t.qubits.is_empty() {
                return Err(Error::InvalidArgument("empty Z-string".into()));
            }
            let mut seen = 0usize;
            for &q in &t.qubits {
                if q >= n_qubits {
                    return Err(Error::QubitOutOfRange { index: q, n_qubits });
                }
                if seen & (1 << q) != 0 {
                    return Err(Error::DuplicateQubit(q));
                }
                seen |= 1 << q;
            }
        }
        Ok(())
    }

    /// Eigenvalue of the observable on every basis state.
    pub fn diagonal(&self, n_qubits: usize) -> Vec<f64> {
        let masks: Vec<(f64, usize)> = self
            .terms
            .iter()
            .map(|t| (t.coeff, t.qubits.iter().fold(0usize, |m, q| m | 1 << q)))
            .collect();
        (0..1usize << n_qubits)
            .map(|i| {
                masks
                    .iter()
                    .map(|&(c, m)| if (i & m).count_ones() % 2 == 0 { c } else { -c })
                    .sum()
            })
            .collect()
    }

    pub fn expectation_pure(&self, state: &StateVector) -> Result<f64> {
        self.terms
            .iter()
            .map(|t| Ok(t.coeff * state.expectation_z(&t.qubits)?))
            .sum()
    }

    pub fn expectation_mixed(&self, rho: &DensityMatrix) -> Result<f64> {
        self.terms
            .iter()
            .map(|t| Ok(t.coeff * rho.expectation_z(&t.qubits)?))
            .sum()
    }

    pub fn expectation_histogram(&self, hist: &Histogram) -> Result<f64> {
        self.terms
            .iter()
            .map(|t| Ok(t.coeff * histogram_expectation_z(hist, &t.qubits)?))
            .sum()
    }
}

/// Outcome of [`run`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub expectations: Vec<f64>,
    /// Register values in id order; `None` for ids never written.
    pub registers: Vec<Option<f64>>,
    pub samples: Option<Histogram>,
    pub seed: Option<u64>,
}

impl RunResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Where a recorded angle came from; used to route angle gradients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum AngleSource {
    Constant,
    Trainable(usize),
    /// `d angle / d feature = scale`.
    Feature { index: usize, scale: f64 },
}

impl AngleSource {
    fn of(slot: &ParamSlot) -> Self {
        match *slot {
            ParamSlot::Trainable(j) => AngleSource::Trainable(j),
            ParamSlot::Embedded { feature, range } => AngleSource::Feature { index: feature, scale: range.1 - range.0 },
            ParamSlot::Fixed(_) => AngleSource::Constant,
        }
    }
}

/// A concrete gate on the tape. `kind` is never `CYZ`.
#[derive(Clone, Debug)]
pub(crate) struct TapeGate {
    pub kind: GateKind,
    pub qubits: [usize; 2],
    pub angles: [f64; 3],
    pub sources: [AngleSource; 3],
}

impl TapeGate {
    pub fn n_params(&self) -> usize {
        self.kind.n_params()
    }

    pub fn touched(&self) -> &[usize] {
        &self.qubits[..self.kind.n_qubits()]
    }

    fn apply_pure(&self, state: &mut StateVector) -> Result<()> {
        let u = target_matrix(self.kind, &self.angles[..self.n_params()])?;
        if self.kind.is_controlled() {
            state.apply_controlled(&u, self.qubits[0], self.qubits[1])
        } else {
            state.apply_1q(&u, self.qubits[0])
        }
    }

    fn apply_mixed(&self, rho: &mut DensityMatrix, noise: &NoiseSpec) -> Result<()> {
        let u = target_matrix(self.kind, &self.angles[..self.n_params()])?;
        if self.kind.is_controlled() {
            rho.apply_controlled(&u, self.qubits[0], self.qubits[1])?;
        } else {
            rho.apply_1q(&u, self.qubits[0])?;
        }
        for &q in self.touched() {
            apply_channel(rho, noise, q)?;
        }
        Ok(())
    }
}

/// Straight-line record of one execution.
#[derive(Clone, Debug)]
pub(crate) struct Tape {
    pub n_qubits: usize,
    pub gates: Vec<TapeGate>,
    pub registers: Vec<Option<f64>>,
}

pub(crate) enum FinalState {
    Pure(StateVector),
    Mixed(DensityMatrix),
}

fn push_gate(
    tape: &mut Vec<TapeGate>,
    kind: GateKind,
    qubits: &[usize],
    slots: &[ParamSlot],
    theta: &[f64],
    features: &[f64],
) -> Result<()> {
    let mut angles = [0.0; 3];
    let mut sources = [AngleSource::Constant; 3];
    for (k, slot) in slots.iter().enumerate() {
        angles[k] = slot.resolve(theta, features)?;
        sources[k] = AngleSource::of(slot);
    }
    let q = [qubits[0], qubits.get(1).copied().unwrap_or(usize::MAX)];
    if kind == GateKind::CYZ {
        tape.push(TapeGate { kind: GateKind::CRY, qubits: q, angles: [angles[0], 0.0, 0.0], sources: [sources[0], AngleSource::Constant, AngleSource::Constant] });
        tape.push(TapeGate { kind: GateKind::CRZ, qubits: q, angles: [angles[1], 0.0, 0.0], sources: [sources[1], AngleSource::Constant, AngleSource::Constant] });
    } else {
        tape.push(TapeGate { kind, qubits: q, angles, sources });
    }
    Ok(())
}

fn check_inputs(circuit: &ParamCircuit, theta: &[f64], features: &[f64]) -> Result<()> {
    if theta.len() != circuit.n_trainable() {
        return Err(Error::Dimension { what: "theta", expected: circuit.n_trainable(), got: theta.len() });
    }
    if features.len() != circuit.n_features() {
        return Err(Error::Dimension { what: "features", expected: circuit.n_features(), got: features.len() });
    }
    if let Some(bad) = theta.iter().chain(features).find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("circuit input {bad}")));
    }
    Ok(())
}

/// Executes `circuit` once on `backend`, recording the straight-line tape.
/// `stream` selects the random stream used by sampled registers.
pub(crate) fn record(
    circuit: &ParamCircuit,
    theta: &[f64],
    features: &[f64],
    backend: &Backend,
    stream: u64,
) -> Result<(Tape, FinalState)> {
    check_inputs(circuit, theta, features)?;
    backend.validate()?;
    let n = circuit.n_qubits();
    let mut rng = backend.rng(stream);
    let mut state = match backend {
        Backend::Noisy { .. } => FinalState::Mixed(DensityMatrix::zero(n)?),
        _ => FinalState::Pure(StateVector::zero(n)?),
    };
    let noise = match backend {
        Backend::Noisy { noise, .. } => *noise,
        _ => NoiseSpec::default(),
    };
    let mut gates = Vec::new();
    let mut registers: Vec<Option<f64>> = vec![None; circuit.n_registers()];
    let mut applied = 0;
    for node in circuit.nodes() {
        match node {
            CircuitNode::Gate(op) => {
                push_gate(&mut gates, op.kind, &op.qubits, &op.params, theta, features)?;
            }
            CircuitNode::MidMeasure { qubit, register } => {
                // Bring the state up to date before reading it.
                advance(&mut state, &gates[applied..], &noise)?;
                applied = gates.len();
                let p1 = match &state {
                    FinalState::Pure(s) => s.probability_one(*qubit)?,
                    FinalState::Mixed(r) => r.probability_one(*qubit)?,
                }
                .clamp(0.0, 1.0);
                let value = match backend {
                    Backend::Sampled { .. } => {
                        let shots = backend.shots_for(n);
                        let dist = Binomial::new(shots, p1)
                            .map_err(|e| Error::InvalidArgument(format!("binomial: {e}")))?;
                        dist.sample(&mut rng) as f64 / shots as f64
                    }
                    _ => p1,
                };
                registers[*register] = Some(value);
            }
            CircuitNode::Conditional { register, pool, target, param, switched } => {
                let meas = registers
                    .get(*register)
                    .copied()
                    .flatten()
                    .ok_or(Error::UnsetRegister(*register))?;
                if *switched && !pool.switch_on(meas)? {
                    continue;
                }
                let kind = pool.select(meas)?;
                push_gate(&mut gates, kind, &[*target], std::slice::from_ref(param), theta, features)?;
            }
            CircuitNode::Barrier => {}
        }
    }
    advance(&mut state, &gates[applied..], &noise)?;
    Ok((Tape { n_qubits: n, gates, registers }, state))
}

fn advance(state: &mut FinalState, gates: &[TapeGate], noise: &NoiseSpec) -> Result<()> {
    for g in gates {
        match state {
            FinalState::Pure(s) => g.apply_pure(s)?,
            FinalState::Mixed(r) => g.apply_mixed(r, noise)?,
        }
    }
    Ok(())
}

impl Tape {
    pub(crate) fn simulate(&self, backend: &Backend) -> Result<FinalState> {
        let mut state = match backend {
            Backend::Noisy { .. } => FinalState::Mixed(DensityMatrix::zero(self.n_qubits)?),
            _ => FinalState::Pure(StateVector::zero(self.n_qubits)?),
        };
        let noise = match backend {
            Backend::Noisy { noise, .. } => *noise,
            _ => NoiseSpec::default(),
        };
        advance(&mut state, &self.gates, &noise)?;
        Ok(state)
    }

    /// Expectation of `obs` after re-simulating the tape. On the sampled
    /// backend readout uses shots drawn from random stream `stream`.
    pub(crate) fn expectation(&self, backend: &Backend, obs: &Observable, stream: u64) -> Result<f64> {
        let state = self.simulate(backend)?;
        Ok(final_expectations(&state, backend, std::slice::from_ref(obs), stream)?.0[0])
    }
}

/// Expectations of every observable on a final state. The sampled backend
/// draws one histogram from stream `stream` and estimates all of them from it.
pub(crate) fn final_expectations(
    state: &FinalState,
    backend: &Backend,
    observables: &[Observable],
    stream: u64,
) -> Result<(Vec<f64>, Option<Histogram>)> {
    match (state, backend) {
        (FinalState::Pure(s), Backend::Sampled { .. }) => {
            let mut rng = backend.rng(stream);
            let hist = s.sample_with(backend.shots_for(s.n_qubits()), &mut rng)?;
            let e = observables.iter().map(|o| o.expectation_histogram(&hist)).collect::<Result<_>>()?;
            Ok((e, Some(hist)))
        }
        (FinalState::Pure(s), _) => Ok((observables.iter().map(|o| o.expectation_pure(s)).collect::<Result<_>>()?, None)),
        (FinalState::Mixed(r), _) => Ok((observables.iter().map(|o| o.expectation_mixed(r)).collect::<Result<_>>()?, None)),
    }
}

/// Runs `circuit` and evaluates each observable.
///
/// On the sampled backend one histogram of `shots` outcomes is drawn from
/// the final state and every observable is estimated from it.
pub fn run(
    circuit: &ParamCircuit,
    theta: &[f64],
    features: &[f64],
    backend: &Backend,
    observables: &[Observable],
) -> Result<RunResult> {
    let n = circuit.n_qubits();
    for o in observables {
        o.validate(n)?;
    }
    let (tape, state) = record(circuit, theta, features, backend, 0)?;
    let (expectations, samples) = final_expectations(&state, backend, observables, 1)?;
    Ok(RunResult { expectations, registers: tape.registers, samples, seed: backend.seed() })
}

/// Applies depolarizing, bit-flip and phase-flip channels, in that order, to
/// qubit `q`.
pub fn apply_channel(rho: &mut DensityMatrix, spec: &NoiseSpec, q: usize) -> Result<()> {
    if spec.p_depol > 0.0 {
        rho.depolarize(q, spec.p_depol)?;
    }
    if spec.p_bitflip > 0.0 {
        rho.bit_flip(q, spec.p_bitflip)?;
    }
    if spec.p_phaseflip > 0.0 {
        rho.phase_flip(q, spec.p_phaseflip)?;
    }
    Ok(())
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Maps a run's expectations through a linear head and softmax into class
/// probabilities.
pub fn decode_prediction(
    result: &RunResult,
    head: &crate::hybrid::LinearHead,
    n_classes: usize,
) -> Result<Vec<f64>> {
    let needed = crate::circuit::prediction_ancilla_count(n_classes);
    if result.expectations.len() < needed {
        return Err(Error::Dimension {
            what: "prediction expectations",
            expected: needed,
            got: result.expectations.len(),
        });
    }
    if head.n_out() != n_classes {
        return Err(Error::Dimension { what: "head outputs", expected: n_classes, got: head.n_out() });
    }
    Ok(softmax(&head.forward(&result.expectations)?))
}
