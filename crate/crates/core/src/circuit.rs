//! Circuit representation and the QPIE layer builders.
//!
//! A [`ParamCircuit`] is an ordered list of [`CircuitNode`]s over
//! `n_data_qubits + n_ancilla` qubits. Data qubits come first; ancillas
//! follow, and the last ancilla is the switch qubit whose mid-circuit
//! measurement drives the conditional rotation pool.

use std::f64::consts::{FRAC_PI_4, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gates::{cyz, GateKind, GateOp, ParamSlot};

/// Hands out consecutive trainable indices.
#[derive(Clone, Copy, Debug, Default)]
pub struct SlotAllocator {
    next: usize,
}

impl SlotAllocator {
    pub fn starting_at(next: usize) -> Self {
        Self { next }
    }

    pub fn fresh(&mut self) -> ParamSlot {
        let slot = ParamSlot::Trainable(self.next);
        self.next += 1;
        slot
    }

    pub fn allocated(&self) -> usize {
        self.next
    }
}

/// Three-way rotation selector keyed on a measured value.
///
/// Branch `b` is 0 below `tau1`, 1 on `[tau1, tau2)` and 2 from `tau2` up;
/// row `b` of the one-hot matrix picks the rotation among `[RX, RY, RZ]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotationPool {
    one_hot: [[u8; 3]; 3],
    tau1: f64,
    tau2: f64,
}

impl Default for RotationPool {
    fn default() -> Self {
        Self {
            one_hot: [[1, 0, 0], [0, 1, 0], [0, 0, 1]],
            tau1: 1.0 / 3.0,
            tau2: 2.0 / 3.0,
        }
    }
}

impl RotationPool {
    const ROTATIONS: [GateKind; 3] = [GateKind::RX, GateKind::RY, GateKind::RZ];

    pub fn new(one_hot: [[u8; 3]; 3], tau1: f64, tau2: f64) -> Result<Self> {
        let pool = Self { one_hot, tau1, tau2 };
        pool.validate()?;
        Ok(pool)
    }

    pub fn with_thresholds(tau1: f64, tau2: f64) -> Result<Self> {
        Self::new(Self::default().one_hot, tau1, tau2)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.tau1 && self.tau1 < self.tau2 && self.tau2 < 1.0) {
            return Err(Error::InvalidPool(format!(
                "thresholds must satisfy 0 < tau1 < tau2 < 1, got {} and {}",
                self.tau1, self.tau2
            )));
        }
        for i in 0..3 {
            let row: u8 = self.one_hot[i].iter().sum();
            let col: u8 = (0..3).map(|r| self.one_hot[r][i]).sum();
            if row != 1 || col != 1 || self.one_hot[i].iter().any(|&v| v > 1) {
                return Err(Error::InvalidPool("one-hot matrix is not a permutation".into()));
            }
        }
        Ok(())
    }

    pub fn thresholds(&self) -> (f64, f64) {
        (self.tau1, self.tau2)
    }

    pub fn one_hot(&self) -> [[u8; 3]; 3] {
        self.one_hot
    }

    /// Threshold branch for `meas`.
    pub fn branch(&self, meas: f64) -> Result<usize> {
        if !(0.0..=1.0).contains(&meas) {
            return Err(Error::MeasurementRange(meas));
        }
        Ok(if meas < self.tau1 {
            0
        } else if meas < self.tau2 {
            1
        } else {
            2
        })
    }

    /// Rotation kind for `meas`.
    pub fn select(&self, meas: f64) -> Result<GateKind> {
        let row = self.one_hot[self.branch(meas)?];
        let col = row.iter().position(|&v| v == 1).expect("validated permutation row");
        Ok(Self::ROTATIONS[col])
    }

    /// Whether `meas` falls in the "on" region of a switched conditional.
    pub fn switch_on(&self, meas: f64) -> Result<bool> {
        Ok(self.branch(meas)? == 2)
    }
}

/// Rotation type chosen by a conditional node for a measured register value.
pub fn evaluate_conditional(pool: &RotationPool, meas: f64) -> Result<GateKind> {
    pool.select(meas)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum CircuitNode {
    Gate(GateOp),
    /// Reads the outcome-1 probability (or frequency) of `qubit` into `register`.
    MidMeasure { qubit: usize, register: usize },
    /// Applies `pool.select(register)` with angle `param` to `target`. A
    /// switched conditional is skipped unless the register is in the
    /// pool's top branch.
    Conditional {
        register: usize,
        pool: RotationPool,
        target: usize,
        param: ParamSlot,
        switched: bool,
    },
    Barrier,
}

impl From<GateOp> for CircuitNode {
    fn from(op: GateOp) -> Self {
        CircuitNode::Gate(op)
    }
}

impl CircuitNode {
    fn slots(&self) -> Vec<ParamSlot> {
        match self {
            CircuitNode::Gate(op) => op.params.clone(),
            CircuitNode::Conditional { param, .. } => vec![*param],
            _ => vec![],
        }
    }

    fn qubits(&self) -> Vec<usize> {
        match self {
            CircuitNode::Gate(op) => op.qubits.clone(),
            CircuitNode::MidMeasure { qubit, .. } => vec![*qubit],
            CircuitNode::Conditional { target, .. } => vec![*target],
            CircuitNode::Barrier => vec![],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CircuitDoc", into = "CircuitDoc")]
pub struct ParamCircuit {
    n_data_qubits: usize,
    n_ancilla: usize,
    nodes: Vec<CircuitNode>,
    n_trainable: usize,
    n_features: usize,
}

/// Serialized form; deserialization re-runs validation.
#[derive(Serialize, Deserialize)]
struct CircuitDoc {
    n_data_qubits: usize,
    n_ancilla: usize,
    n_trainable: usize,
    n_features: usize,
    nodes: Vec<CircuitNode>,
}

impl TryFrom<CircuitDoc> for ParamCircuit {
    type Error = Error;

    fn try_from(d: CircuitDoc) -> Result<Self> {
        ParamCircuit::new(d.n_data_qubits, d.n_ancilla, d.nodes, d.n_trainable, d.n_features)
    }
}

impl From<ParamCircuit> for CircuitDoc {
    fn from(c: ParamCircuit) -> Self {
        CircuitDoc {
            n_data_qubits: c.n_data_qubits,
            n_ancilla: c.n_ancilla,
            n_trainable: c.n_trainable,
            n_features: c.n_features,
            nodes: c.nodes,
        }
    }
}

impl ParamCircuit {
    pub fn new(
        n_data_qubits: usize,
        n_ancilla: usize,
        nodes: Vec<CircuitNode>,
        n_trainable: usize,
        n_features: usize,
    ) -> Result<Self> {
        let c = Self { n_data_qubits, n_ancilla, nodes, n_trainable, n_features };
        c.validate()?;
        Ok(c)
    }

    /// Builds a circuit whose trainable and feature counts are inferred from
    /// the largest indices used.
    pub fn from_nodes(n_data_qubits: usize, n_ancilla: usize, nodes: Vec<CircuitNode>) -> Result<Self> {
        let mut n_trainable = 0;
        let mut n_features = 0;
        for slot in nodes.iter().flat_map(|n| n.slots()) {
            match slot {
                ParamSlot::Trainable(j) => n_trainable = n_trainable.max(j + 1),
                ParamSlot::Embedded { feature, .. } => n_features = n_features.max(feature + 1),
                ParamSlot::Fixed(_) => {}
            }
        }
        Self::new(n_data_qubits, n_ancilla, nodes, n_trainable, n_features)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_qubits();
        if n == 0 || n > crate::kernel::MAX_QUBITS {
            return Err(Error::QubitCount(n));
        }
        let mut used = vec![false; self.n_trainable];
        let mut written: Vec<usize> = Vec::new();
        let mut any_measure = false;
        for (i, node) in self.nodes.iter().enumerate() {
            for q in node.qubits() {
                if q >= n {
                    return Err(Error::QubitOutOfRange { index: q, n_qubits: n });
                }
            }
            match node {
                CircuitNode::Gate(op) => op.validate()?,
                CircuitNode::MidMeasure { register, .. } => {
                    any_measure = true;
                    written.push(*register);
                }
                CircuitNode::Conditional { register, pool, .. } => {
                    pool.validate()?;
                    if !written.contains(register) {
                        return Err(Error::InvalidCircuit(format!(
                            "node {i}: conditional reads register {register} before it is measured"
                        )));
                    }
                }
                CircuitNode::Barrier => {}
            }
            for slot in node.slots() {
                match slot {
                    ParamSlot::Trainable(j) => {
                        if j >= self.n_trainable {
                            return Err(Error::InvalidCircuit(format!(
                                "node {i}: trainable index {j} >= {}",
                                self.n_trainable
                            )));
                        }
                        used[j] = true;
                    }
                    ParamSlot::Embedded { feature, range } => {
                        if feature >= self.n_features {
                            return Err(Error::InvalidCircuit(format!(
                                "node {i}: feature index {feature} >= {}",
                                self.n_features
                            )));
                        }
                        if !(range.0.is_finite() && range.1.is_finite()) {
                            return Err(Error::InvalidCircuit(format!("node {i}: non-finite range")));
                        }
                    }
                    ParamSlot::Fixed(v) if !v.is_finite() => {
                        return Err(Error::InvalidCircuit(format!("node {i}: non-finite fixed angle")));
                    }
                    ParamSlot::Fixed(_) => {}
                }
            }
        }
        if let Some(j) = used.iter().position(|u| !u) {
            return Err(Error::InvalidCircuit(format!("trainable index {j} is never used")));
        }
        if any_measure && self.n_ancilla == 0 {
            return Err(Error::InvalidCircuit("mid-circuit measurement needs an ancilla".into()));
        }
        Ok(())
    }

    pub fn n_qubits(&self) -> usize {
        self.n_data_qubits + self.n_ancilla
    }

    pub fn n_data_qubits(&self) -> usize {
        self.n_data_qubits
    }

    pub fn n_ancilla(&self) -> usize {
        self.n_ancilla
    }

    pub fn nodes(&self) -> &[CircuitNode] {
        &self.nodes
    }

    pub fn n_trainable(&self) -> usize {
        self.n_trainable
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Highest register id used plus one.
    pub fn n_registers(&self) -> usize {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                CircuitNode::MidMeasure { register, .. } => Some(register + 1),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }

    /// Ancillas used for class readout: every ancilla except the switch.
    pub fn prediction_ancillas(&self) -> std::ops::Range<usize> {
        let end = self.n_qubits().saturating_sub(1).max(self.n_data_qubits);
        self.n_data_qubits..end
    }

    pub fn switch_ancilla(&self) -> Option<usize> {
        (self.n_ancilla > 0).then(|| self.n_qubits() - 1)
    }

    /// Appends a gate bound to a new trainable index and returns its index.
    pub fn push_trainable_gate(&mut self, kind: GateKind, qubits: Vec<usize>) -> Result<usize> {
        if kind.n_params() != 1 {
            return Err(Error::InvalidArgument(format!("{kind:?} is not a one-parameter gate")));
        }
        let index = self.n_trainable;
        let op = GateOp::new(kind, qubits, vec![ParamSlot::Trainable(index)])?;
        let mut next = self.clone();
        next.nodes.push(CircuitNode::Gate(op));
        next.n_trainable += 1;
        next.validate()?;
        *self = next;
        Ok(index)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Hadamard layer, Y-angle embedding of features
/// `feature_offset..feature_offset+n_qubits` onto `[0, pi]`, Hadamard layer.
pub fn build_sel(n_qubits: usize, feature_offset: usize) -> Vec<CircuitNode> {
    let mut nodes = Vec::with_capacity(3 * n_qubits);
    nodes.extend((0..n_qubits).map(|q| GateOp::h(q).into()));
    nodes.extend(
        (0..n_qubits).map(|q| GateOp::ry(q, ParamSlot::embedded(feature_offset + q, (0.0, PI))).into()),
    );
    nodes.extend((0..n_qubits).map(|q| GateOp::h(q).into()));
    nodes
}

/// Partial entanglement layers over data qubits `0..n_data`.
///
/// Layer `l` uses `l mod 3`: 0 is a CNOT ring `(q, q+1 mod n)`; 1 puts CRY on
/// even pair indices and CYZ on odd ones; 2 puts an R3 on every qubit. Every
/// parameterized gate gets fresh trainable slots from `alloc`.
pub fn build_ppel(n_data: usize, layers: usize, alloc: &mut SlotAllocator) -> Result<Vec<CircuitNode>> {
    if n_data < 2 {
        return Err(Error::InvalidArgument(format!("PPEL needs at least 2 data qubits, got {n_data}")));
    }
    if layers == 0 {
        return Err(Error::InvalidArgument("PPEL needs at least one layer".into()));
    }
    let mut nodes = Vec::new();
    for layer in 0..layers {
        match layer % 3 {
            0 => {
                for q in 0..n_data {
                    nodes.push(GateOp::cnot(q, (q + 1) % n_data)?.into());
                }
            }
            1 => {
                for q in 0..n_data {
                    let t = (q + 1) % n_data;
                    if q % 2 == 0 {
                        nodes.push(GateOp::cry(q, t, alloc.fresh())?.into());
                    } else {
                        let (y, z) = (alloc.fresh(), alloc.fresh());
                        nodes.extend(cyz(q, t, y, z)?.into_iter().map(CircuitNode::Gate));
                    }
                }
            }
            _ => {
                for q in 0..n_data {
                    nodes.push(GateOp::r3(q, [alloc.fresh(), alloc.fresh(), alloc.fresh()]).into());
                }
            }
        }
    }
    Ok(nodes)
}

/// Number of class-readout ancillas for `n_classes` outcomes.
pub fn prediction_ancilla_count(n_classes: usize) -> usize {
    let mut bits = 0;
    while (1usize << bits) < n_classes {
        bits += 1;
    }
    bits.max(1)
}

/// The full QPIE variational circuit.
///
/// Layout: data qubits `0..n_data`, then `ceil(log2 n_classes)` readout
/// ancillas, then the switch ancilla. Node order:
///
/// 1. symmetric embedding layer on the data qubits (features `0..n_data`);
/// 2. `ppel_layers` partial entanglement layers on the data qubits;
/// 3. a CRY from each data qubit onto the switch ancilla;
/// 4. mid-circuit measurement of the switch ancilla into register 0;
/// 5. a switched conditional rotation on each data qubit;
/// 6. the closing Hadamard layer on the data qubits;
/// 7. a CRY from each data qubit onto each readout ancilla.
pub fn build_qpie_vqc(
    n_data: usize,
    n_classes: usize,
    pool: RotationPool,
    ppel_layers: usize,
) -> Result<ParamCircuit> {
    if n_data < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 data qubits, got {n_data}")));
    }
    if n_classes < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 classes, got {n_classes}")));
    }
    pool.validate()?;
    let n_pred = prediction_ancilla_count(n_classes);
    let n_ancilla = n_pred + 1;
    let switch = n_data + n_pred;
    let mut alloc = SlotAllocator::default();

    let mut nodes = build_sel(n_data, 0);
    nodes.extend(build_ppel(n_data, ppel_layers, &mut alloc)?);
    for q in 0..n_data {
        nodes.push(GateOp::cry(q, switch, alloc.fresh())?.into());
    }
    nodes.push(CircuitNode::MidMeasure { qubit: switch, register: 0 });
    for q in 0..n_data {
        nodes.push(CircuitNode::Conditional {
            register: 0,
            pool,
            target: q,
            param: alloc.fresh(),
            switched: true,
        });
    }
    nodes.extend((0..n_data).map(|q| GateOp::h(q).into()));
    for a in n_data..switch {
        for q in 0..n_data {
            nodes.push(GateOp::cry(q, a, alloc.fresh())?.into());
        }
    }
    ParamCircuit::new(n_data, n_ancilla, nodes, alloc.allocated(), n_data)
}

/// Options for [`random_circuit`].
#[derive(Clone, Copy, Debug)]
pub struct RandomCircuitSpec {
    pub n_qubits: usize,
    pub n_trainable: usize,
    /// Number of extra unparameterized gates (H, X, CNOT) interleaved.
    pub n_fixed_gates: usize,
    /// Adds an ancilla, a mid-measurement and switched/unswitched conditionals.
    pub conditionals: bool,
    /// Number of embedded feature slots (RY on `[0, pi]`).
    pub n_features: usize,
}

/// Seeded random circuit mixing every parameterized gate kind. Each
/// trainable index is used exactly once.
pub fn random_circuit(spec: RandomCircuitSpec, seed: u64) -> Result<ParamCircuit> {
    let n = spec.n_qubits;
    if n < 2 {
        return Err(Error::InvalidArgument("random circuits need at least 2 qubits".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick_pair = |rng: &mut ChaCha8Rng| {
        let a = rng.random_range(0..n);
        let mut b = rng.random_range(0..n - 1);
        if b >= a {
            b += 1;
        }
        (a, b)
    };
    let mut nodes: Vec<CircuitNode> = (0..n).map(|q| GateOp::h(q).into()).collect();
    for f in 0..spec.n_features {
        nodes.push(GateOp::ry(f % n, ParamSlot::embedded(f, (0.0, PI))).into());
    }
    let mut remaining_fixed = spec.n_fixed_gates;
    let mut alloc = SlotAllocator::default();
    while alloc.allocated() < spec.n_trainable {
        let left = spec.n_trainable - alloc.allocated();
        let choice = rng.random_range(0..7);
        let node: Vec<CircuitNode> = match choice {
            0 => vec![GateOp::rotation(GateKind::RX, rng.random_range(0..n), alloc.fresh())?.into()],
            1 => vec![GateOp::ry(rng.random_range(0..n), alloc.fresh()).into()],
            2 => vec![GateOp::rotation(GateKind::RZ, rng.random_range(0..n), alloc.fresh())?.into()],
            3 if left >= 3 => {
                vec![GateOp::r3(rng.random_range(0..n), [alloc.fresh(), alloc.fresh(), alloc.fresh()]).into()]
            }
            4 => {
                let (c, t) = pick_pair(&mut rng);
                vec![GateOp::cry(c, t, alloc.fresh())?.into()]
            }
            5 => {
                let (c, t) = pick_pair(&mut rng);
                vec![GateOp::crz(c, t, alloc.fresh())?.into()]
            }
            6 if left >= 2 => {
                let (c, t) = pick_pair(&mut rng);
                cyz(c, t, alloc.fresh(), alloc.fresh())?.into_iter().map(CircuitNode::Gate).collect()
            }
            _ => continue,
        };
        nodes.extend(node);
        if remaining_fixed > 0 && rng.random_bool(0.5) {
            remaining_fixed -= 1;
            let op = match rng.random_range(0..3) {
                0 => GateOp::h(rng.random_range(0..n)),
                1 => GateOp::x(rng.random_range(0..n)),
                _ => {
                    let (c, t) = pick_pair(&mut rng);
                    GateOp::cnot(c, t)?
                }
            };
            nodes.push(op.into());
        }
    }
    for _ in 0..remaining_fixed {
        let (c, t) = pick_pair(&mut rng);
        nodes.push(GateOp::cnot(c, t)?.into());
    }
    let mut n_ancilla = 0;
    if spec.conditionals {
        n_ancilla = 1;
        let anc = n;
        let angle = rng.random_range(-FRAC_PI_4..FRAC_PI_4) + PI / 2.0;
        nodes.push(GateOp::cry(rng.random_range(0..n), anc, ParamSlot::Fixed(angle))?.into());
        nodes.push(GateOp::ry(anc, ParamSlot::Fixed(rng.random_range(0.0..PI))).into());
        nodes.push(CircuitNode::MidMeasure { qubit: anc, register: 0 });
        for (i, switched) in [(0usize, false), (1, true)] {
            nodes.push(CircuitNode::Conditional {
                register: 0,
                pool: RotationPool::default(),
                target: i % n,
                param: ParamSlot::Fixed(rng.random_range(-PI..PI)),
                switched,
            });
        }
        // Trainable conditional and a trailing gate so the branch matters.
        let extra = alloc.fresh();
        nodes.push(CircuitNode::Conditional {
            register: 0,
            pool: RotationPool::default(),
            target: rng.random_range(0..n),
            param: extra,
            switched: false,
        });
        nodes.push(GateOp::h(rng.random_range(0..n)).into());
    }
    ParamCircuit::new(n, n_ancilla, nodes, alloc.allocated(), spec.n_features)
}
