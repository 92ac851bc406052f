//! Hybrid classical-quantum models and their training loop.
//!
//! A [`HybridModel`] is a dense frontend whose squashed outputs are split
//! contiguously across parallel quantum nodes as embedded features. Node
//! expectations are concatenated and fed through a linear head. With no
//! quantum nodes the head reads the frontend output directly, which gives
//! the classical baseline.
//!
//! Flat parameter order (used by the optimizer and the Fisher analysis):
//! quantum thetas node by node, head weights (row-major) then head bias,
//! then the unfrozen frontend layers from last to first, each as weights
//! then bias.

use std::f64::consts::FRAC_PI_4;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::{build_qpie_vqc, ParamCircuit, RotationPool};
use crate::data::Dataset;
use crate::engine::{final_expectations, record, softmax, Backend, FinalState, Observable};
use crate::error::{Error, Result};
use crate::grad::{grad_dispatch, gradient, tape_gradient, GradMethod};

const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;

/// Lower bound applied to the label probability inside the log.
pub const PROB_FLOOR: f64 = 1e-12;

pub fn selu(z: f64) -> f64 {
    if z > 0.0 {
        SELU_LAMBDA * z
    } else {
        SELU_LAMBDA * SELU_ALPHA * (z.exp() - 1.0)
    }
}

fn selu_grad(z: f64) -> f64 {
    if z > 0.0 {
        SELU_LAMBDA
    } else {
        SELU_LAMBDA * SELU_ALPHA * z.exp()
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// splitmix64 finaliser used to derive per-sample seeds.
fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix(base), |acc, p| mix(acc ^ p))
}

/// `-ln pred[label]`, with the probability floored at [`PROB_FLOOR`]. The
/// flag reports whether the floor was hit.
pub fn cross_entropy(pred: &[f64], label: usize) -> Result<(f64, bool)> {
    let p = *pred
        .get(label)
        .ok_or_else(|| Error::InvalidArgument(format!("label {label} >= {} classes", pred.len())))?;
    let clamped = !(p >= PROB_FLOOR);
    Ok((-p.max(PROB_FLOOR).ln(), clamped))
}

/// Fully connected layer, `out = w x + b` with `w` stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub n_in: usize,
    pub n_out: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl DenseLayer {
    /// LeCun-normal weights, zero bias.
    pub fn lecun(n_in: usize, n_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let normal = Normal::new(0.0, (1.0 / n_in as f64).sqrt()).expect("positive sd");
        let w = (0..n_in * n_out).map(|_| normal.sample(rng)).collect();
        Self { n_in, n_out, w, b: vec![0.0; n_out] }
    }

    fn affine(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_out)
            .map(|o| {
                let row = &self.w[o * self.n_in..(o + 1) * self.n_in];
                row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + self.b[o]
            })
            .collect()
    }

    /// Accumulates `dW`, `db` into `gw`, `gb` and returns `dL/dx`.
    fn backward(&self, x: &[f64], dz: &[f64], gw: &mut [f64], gb: &mut [f64]) -> Vec<f64> {
        let mut dx = vec![0.0; self.n_in];
        for o in 0..self.n_out {
            gb[o] += dz[o];
            let row = &self.w[o * self.n_in..(o + 1) * self.n_in];
            let grow = &mut gw[o * self.n_in..(o + 1) * self.n_in];
            for i in 0..self.n_in {
                grow[i] += dz[o] * x[i];
                dx[i] += row[i] * dz[o];
            }
        }
        dx
    }

    fn n_params(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

/// Stack of SeLU layers with inverted dropout after selected layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    pub layers: Vec<DenseLayer>,
    pub dropout: f64,
    /// Layer indices followed by dropout.
    pub dropout_after: Vec<usize>,
    pub frozen: Vec<bool>,
}

struct NetCache {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    masks: Vec<Option<Vec<f64>>>,
}

impl DenseNet {
    /// Widths `dims[0] -> dims[1] -> ... -> dims[last]`.
    pub fn new(dims: &[usize], dropout: f64, dropout_after: Vec<usize>, seed: u64) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidArgument(format!("bad layer widths {dims:?}")));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::InvalidArgument(format!("dropout {dropout} outside [0, 1)")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers: Vec<DenseLayer> = dims.windows(2).map(|w| DenseLayer::lecun(w[0], w[1], &mut rng)).collect();
        if let Some(&bad) = dropout_after.iter().find(|&&i| i >= layers.len()) {
            return Err(Error::InvalidArgument(format!("dropout after missing layer {bad}")));
        }
        let frozen = vec![false; layers.len()];
        Ok(Self { layers, dropout, dropout_after, frozen })
    }

    /// Five layers `n_in -> 32 -> 32 -> 16 -> 16 -> n_out`, dropout after
    /// the second and fifth.
    pub fn desk(n_in: usize, n_out: usize, dropout: f64, seed: u64) -> Result<Self> {
        Self::new(&[n_in, 32, 32, 16, 16, n_out], dropout, vec![1, 4], seed)
    }

    pub fn n_in(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn n_out(&self) -> usize {
        self.layers.last().expect("at least one layer").n_out
    }

    /// Marks the first `k` layers frozen and the rest trainable.
    pub fn freeze_first(&mut self, k: usize) -> Result<()> {
        if k >= self.layers.len() {
            return Err(Error::InvalidArgument(format!(
                "cannot freeze {k} of {} layers",
                self.layers.len()
            )));
        }
        for (i, f) in self.frozen.iter_mut().enumerate() {
            *f = i < k;
        }
        Ok(())
    }

    fn forward_cached(&self, x: &[f64], rng: Option<&mut ChaCha8Rng>) -> (Vec<f64>, NetCache) {
        let mut cache = NetCache { inputs: Vec::new(), pre: Vec::new(), masks: Vec::new() };
        let mut rng = rng;
        let mut a = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.affine(&a);
            let mut out: Vec<f64> = z.iter().map(|&v| selu(v)).collect();
            let mut mask = None;
            if self.dropout > 0.0 && self.dropout_after.contains(&l) {
                if let Some(r) = rng.as_deref_mut() {
                    let keep = 1.0 - self.dropout;
                    let m: Vec<f64> =
                        (0..out.len()).map(|_| if r.random::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
                    for (o, m) in out.iter_mut().zip(&m) {
                        *o *= m;
                    }
                    mask = Some(m);
                }
            }
            cache.inputs.push(std::mem::replace(&mut a, out));
            cache.pre.push(z);
            cache.masks.push(mask);
        }
        (a, cache)
    }

    /// Evaluation-mode forward pass (no dropout).
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_cached(x, None).0
    }

    /// Returns per-layer `(dW, db)` for unfrozen layers (zeros for frozen)
    /// and `dL/dx` when `need_input` is set.
    fn backward(&self, cache: &NetCache, grad_out: &[f64]) -> Vec<(Vec<f64>, Vec<f64>)> {
        let mut grads: Vec<(Vec<f64>, Vec<f64>)> =
            self.layers.iter().map(|l| (vec![0.0; l.w.len()], vec![0.0; l.b.len()])).collect();
        let last_trainable = self.frozen.iter().position(|f| !f);
        let Some(stop) = last_trainable else { return grads };
        let mut g = grad_out.to_vec();
        for l in (stop..self.layers.len()).rev() {
            if let Some(m) = &cache.masks[l] {
                for (g, m) in g.iter_mut().zip(m) {
                    *g *= m;
                }
            }
            let dz: Vec<f64> = g.iter().zip(&cache.pre[l]).map(|(g, z)| g * selu_grad(*z)).collect();
            let (gw, gb) = &mut grads[l];
            g = self.layers[l].backward(&cache.inputs[l], &dz, gw, gb);
        }
        grads
    }

    fn n_trainable_params(&self) -> usize {
        self.layers.iter().zip(&self.frozen).filter(|(_, f)| !**f).map(|(l, _)| l.n_params()).sum()
    }
}

/// Linear layer mapping expectations to logits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearHead {
    pub layer: DenseLayer,
}

impl LinearHead {
    pub fn new(n_in: usize, n_out: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self { layer: DenseLayer::lecun(n_in, n_out, &mut rng) }
    }

    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Self { layer: DenseLayer { n_in, n_out, w: vec![0.0; n_in * n_out], b: vec![0.0; n_out] } }
    }

    pub fn n_in(&self) -> usize {
        self.layer.n_in
    }

    pub fn n_out(&self) -> usize {
        self.layer.n_out
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_in() {
            return Err(Error::Dimension { what: "head input", expected: self.n_in(), got: x.len() });
        }
        Ok(self.layer.affine(x))
    }
}

/// One parallel quantum node with its own parameter block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantumNode {
    pub circuit: ParamCircuit,
    pub observables: Vec<Observable>,
    pub theta: Vec<f64>,
}

impl QuantumNode {
    /// Trainable angles drawn uniformly from `[-pi/4, pi/4]`.
    pub fn new(circuit: ParamCircuit, observables: Vec<Observable>, seed: u64) -> Result<Self> {
        for o in &observables {
            o.validate(circuit.n_qubits())?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta = (0..circuit.n_trainable()).map(|_| rng.random_range(-FRAC_PI_4..=FRAC_PI_4)).collect();
        Ok(Self { circuit, observables, theta })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Task {
    /// Softmax head with cross-entropy loss.
    Classification { n_classes: usize },
    /// Single linear output with squared-error loss.
    Regression,
}

/// Training target of one sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Target {
    Class(usize),
    Value(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HybridModel {
    pub frontend: DenseNet,
    pub nodes: Vec<QuantumNode>,
    pub head: LinearHead,
    pub pool: RotationPool,
    pub task: Task,
}

/// Shape of a QPIE model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub n_classes: usize,
    pub n_nodes: usize,
    pub data_qubits: usize,
    pub ppel_layers: usize,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub tau1: f64,
    pub tau2: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            input_dim: 2,
            n_classes: 2,
            n_nodes: 2,
            data_qubits: 4,
            ppel_layers: 6,
            hidden: vec![32, 32, 16, 16],
            dropout: 0.2,
            tau1: 1.0 / 3.0,
            tau2: 2.0 / 3.0,
        }
    }
}

/// Readout observables of a QPIE node: Z on each prediction ancilla, then
/// Z on each data qubit.
pub fn qpie_observables(circuit: &ParamCircuit) -> Vec<Observable> {
    circuit.prediction_ancillas().chain(0..circuit.n_data_qubits()).map(Observable::z).collect()
}

/// Output of one per-sample pass.
struct SamplePass {
    output: Vec<f64>,
    loss: f64,
    grad: Option<Vec<f64>>,
}

impl HybridModel {
    /// QPIE classifier: dense frontend, `n_nodes` QPIE circuits, softmax head.
    /// With `n_nodes = 0` this is the classical baseline of the same shape.
    pub fn qpie(spec: &ModelSpec, seed: u64) -> Result<Self> {
        let pool = RotationPool::with_thresholds(spec.tau1, spec.tau2)?;
        let n_features = if spec.n_nodes == 0 { spec.data_qubits } else { spec.n_nodes * spec.data_qubits };
        let mut dims = vec![spec.input_dim];
        dims.extend(&spec.hidden);
        dims.push(n_features);
        let dropout_after = if dims.len() == 6 { vec![1, 4] } else { vec![] };
        let frontend = DenseNet::new(&dims, spec.dropout, dropout_after, derive_seed(seed, &[0]))?;
        let mut nodes = Vec::with_capacity(spec.n_nodes);
        for k in 0..spec.n_nodes {
            let circuit = build_qpie_vqc(spec.data_qubits, spec.n_classes, pool, spec.ppel_layers)?;
            let obs = qpie_observables(&circuit);
            nodes.push(QuantumNode::new(circuit, obs, derive_seed(seed, &[1, k as u64]))?);
        }
        Self::assemble(frontend, nodes, pool, Task::Classification { n_classes: spec.n_classes }, seed)
    }

    /// Builds a model around given parts with a fresh head.
    pub fn assemble(
        frontend: DenseNet,
        nodes: Vec<QuantumNode>,
        pool: RotationPool,
        task: Task,
        seed: u64,
    ) -> Result<Self> {
        let head_in = if nodes.is_empty() {
            frontend.n_out()
        } else {
            nodes.iter().map(|n| n.observables.len()).sum()
        };
        let n_out = match task {
            Task::Classification { n_classes } => n_classes,
            Task::Regression => 1,
        };
        let model = Self { frontend, nodes, head: LinearHead::new(head_in, n_out, derive_seed(seed, &[2])), pool, task };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.nodes.is_empty() {
            let needed: usize = self.nodes.iter().map(|n| n.circuit.n_features()).sum();
            if needed != self.frontend.n_out() {
                return Err(Error::Dimension { what: "frontend output", expected: needed, got: self.frontend.n_out() });
            }
        }
        let head_in = if self.nodes.is_empty() {
            self.frontend.n_out()
        } else {
            self.nodes.iter().map(|n| n.observables.len()).sum()
        };
        if head_in != self.head.n_in() {
            return Err(Error::Dimension { what: "head input", expected: head_in, got: self.head.n_in() });
        }
        for n in &self.nodes {
            if n.theta.len() != n.circuit.n_trainable() {
                return Err(Error::Dimension { what: "node theta", expected: n.circuit.n_trainable(), got: n.theta.len() });
            }
        }
        if let Task::Classification { n_classes } = self.task {
            if self.head.n_out() != n_classes {
                return Err(Error::Dimension { what: "head output", expected: n_classes, got: self.head.n_out() });
            }
        }
        if self.frontend.frozen.len() != self.frontend.layers.len() {
            return Err(Error::Dimension {
                what: "freeze mask",
                expected: self.frontend.layers.len(),
                got: self.frontend.frozen.len(),
            });
        }
        Ok(())
    }

    /// Number of entries in the flat trainable vector.
    pub fn n_params(&self) -> usize {
        self.nodes.iter().map(|n| n.theta.len()).sum::<usize>()
            + self.head.layer.n_params()
            + self.frontend.n_trainable_params()
    }

    /// Trainable parameters in flat order.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for n in &self.nodes {
            out.extend(&n.theta);
        }
        out.extend(&self.head.layer.w);
        out.extend(&self.head.layer.b);
        for (l, frozen) in self.frontend.layers.iter().zip(&self.frontend.frozen).rev() {
            if !frozen {
                out.extend(&l.w);
                out.extend(&l.b);
            }
        }
        out
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.n_params() {
            return Err(Error::Dimension { what: "parameter vector", expected: self.n_params(), got: p.len() });
        }
        let mut it = p.iter().copied();
        let mut fill = |dst: &mut [f64]| {
            for d in dst {
                *d = it.next().expect("length checked");
            }
        };
        for n in &mut self.nodes {
            fill(&mut n.theta);
        }
        fill(&mut self.head.layer.w);
        fill(&mut self.head.layer.b);
        for (l, frozen) in self.frontend.layers.iter_mut().zip(&self.frontend.frozen).rev() {
            if !frozen {
                fill(&mut l.w);
                fill(&mut l.b);
            }
        }
        Ok(())
    }

    /// Splits frontend features contiguously across nodes.
    fn node_slices(&self) -> Vec<std::ops::Range<usize>> {
        let mut start = 0;
        self.nodes
            .iter()
            .map(|n| {
                let r = start..start + n.circuit.n_features();
                start = r.end;
                r
            })
            .collect()
    }

    /// One forward (and optionally backward) pass on a single sample.
    /// `dropout_seed = None` runs in evaluation mode.
    fn pass(
        &self,
        x: &[f64],
        target: Option<Target>,
        backend: &Backend,
        sample_seed: u64,
        dropout_seed: Option<u64>,
        method: Option<GradMethod>,
    ) -> Result<SamplePass> {
        if x.len() != self.frontend.n_in() {
            return Err(Error::Dimension { what: "input", expected: self.frontend.n_in(), got: x.len() });
        }
        let mut rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);
        let (h, cache) = self.frontend.forward_cached(x, rng.as_mut());

        // Quantum stage.
        let slices = self.node_slices();
        let mut records: Vec<(crate::engine::Tape, FinalState, Backend)> = Vec::with_capacity(self.nodes.len());
        let (q, feats) = if self.nodes.is_empty() {
            (h.clone(), Vec::new())
        } else {
            let feats: Vec<f64> = h.iter().map(|&v| sigmoid(v)).collect();
            let mut q = Vec::new();
            for (k, (node, range)) in self.nodes.iter().zip(&slices).enumerate() {
                let b = backend.with_seed(derive_seed(sample_seed, &[k as u64]));
                let (tape, state) = record(&node.circuit, &node.theta, &feats[range.clone()], &b, 0)?;
                let (e, _) = final_expectations(&state, &b, &node.observables, 1)?;
                q.extend(e);
                records.push((tape, state, b));
            }
            (q, feats)
        };

        let logits = self.head.forward(&q)?;
        let (output, loss, dlogits) = match (self.task, target) {
            (Task::Classification { .. }, t) => {
                let p = softmax(&logits);
                match t {
                    Some(Target::Class(label)) => {
                        let (loss, _) = cross_entropy(&p, label)?;
                        let mut d = p.clone();
                        d[label] -= 1.0;
                        (p, loss, Some(d))
                    }
                    Some(Target::Value(_)) => {
                        return Err(Error::InvalidArgument("classification model needs class targets".into()))
                    }
                    None => (p, f64::NAN, None),
                }
            }
            (Task::Regression, Some(Target::Value(y))) => {
                let r = logits[0] - y;
                (logits, r * r, Some(vec![2.0 * r]))
            }
            (Task::Regression, Some(Target::Class(_))) => {
                return Err(Error::InvalidArgument("regression model needs value targets".into()))
            }
            (Task::Regression, None) => (logits, f64::NAN, None),
        };
        if !loss.is_nan() && !loss.is_finite() || output.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("forward pass output {output:?} loss {loss}")));
        }
        let (Some(method), Some(dlogits)) = (method, dlogits) else {
            return Ok(SamplePass { output, loss, grad: None });
        };

        // Backward: head.
        let mut gw = vec![0.0; self.head.layer.w.len()];
        let mut gb = vec![0.0; self.head.layer.b.len()];
        let dq = self.head.layer.backward(&q, &dlogits, &mut gw, &mut gb);

        // Quantum nodes.
        let need_features = self.frontend.frozen.iter().any(|f| !f);
        let mut theta_grads = Vec::with_capacity(self.nodes.iter().map(|n| n.theta.len()).sum());
        let mut dh = vec![0.0; h.len()];
        if self.nodes.is_empty() {
            dh.copy_from_slice(&dq);
        } else {
            let mut offset = 0;
            for ((node, range), (tape, state, b)) in self.nodes.iter().zip(&slices).zip(records) {
                let n_obs = node.observables.len();
                let weights = &dq[offset..offset + n_obs];
                offset += n_obs;
                let obs = Observable::weighted_sum(&node.observables, weights);
                let m = match method {
                    GradMethod::Adjoint if b != Backend::Analytic => grad_dispatch(&b),
                    m => m,
                };
                let g = tape_gradient(
                    m,
                    &tape,
                    state,
                    &b,
                    &obs,
                    node.circuit.n_trainable(),
                    node.circuit.n_features(),
                    need_features,
                )?;
                theta_grads.extend(g.theta);
                for (i, gf) in range.clone().zip(g.features) {
                    dh[i] = gf * feats[i] * (1.0 - feats[i]);
                }
            }
        }

        let layer_grads = self.frontend.backward(&cache, &dh);
        let mut grad = theta_grads;
        grad.extend(gw);
        grad.extend(gb);
        for ((w, b), frozen) in layer_grads.into_iter().zip(&self.frontend.frozen).rev() {
            if !frozen {
                grad.extend(w);
                grad.extend(b);
            }
        }
        if grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter gradient".into()));
        }
        Ok(SamplePass { output, loss, grad: Some(grad) })
    }

    /// Evaluation-mode output: class probabilities, or the regression value.
    pub fn forward(&self, x: &[f64], backend: &Backend) -> Result<Vec<f64>> {
        let seed = backend.seed().unwrap_or(0);
        Ok(self.pass(x, None, backend, seed, None, None)?.output)
    }

    /// Evaluation-mode loss and flat gradient for one sample.
    pub fn sample_gradient(&self, x: &[f64], target: Target, backend: &Backend) -> Result<(f64, Vec<f64>)> {
        let seed = backend.seed().unwrap_or(0);
        let p = self.pass(x, Some(target), backend, seed, None, Some(grad_dispatch(backend)))?;
        Ok((p.loss, p.grad.expect("gradient requested")))
    }

    /// Forward passes over every row, in row order.
    pub fn predict_all(&self, xs: &[Vec<f64>], backend: &Backend) -> Result<Vec<Vec<f64>>> {
        let base = backend.seed().unwrap_or(0);
        xs.par_iter()
            .enumerate()
            .map(|(i, x)| {
                let seed = derive_seed(base, &[u64::MAX, i as u64]);
                Ok(self.pass(x, None, backend, seed, None, None)?.output)
            })
            .collect()
    }

    pub fn accuracy(&self, ds: &Dataset, backend: &Backend) -> Result<f64> {
        let preds = self.predict_all(ds.features(), backend)?;
        let hits = preds.iter().zip(ds.labels()).filter(|(p, &l)| argmax(p) == l).count();
        Ok(hits as f64 / ds.len().max(1) as f64)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub gamma: f64,
    pub decay_every: usize,
    pub seed: u64,
    pub backend: Backend,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 0.01,
            gamma: 0.1,
            decay_every: 50,
            seed: 0,
            backend: Backend::Analytic,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("lr {} must be positive", self.lr)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidArgument(format!("gamma {} outside (0, 1]", self.gamma)));
        }
        if self.decay_every == 0 {
            return Err(Error::InvalidArgument("decay_every must be at least 1".into()));
        }
        self.backend.validate()
    }

    /// Learning rate in effect during `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.gamma.powi((epoch / self.decay_every) as i32)
    }
}

/// Adam with the usual defaults.
#[derive(Clone, Debug)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Per-epoch training record.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    /// Mean training loss of the epoch's forward pass.
    pub loss: Vec<f64>,
    /// Evaluation metric after the epoch's update: accuracy for
    /// classification, mean squared error against the clean targets for
    /// regression.
    pub metric: Vec<f64>,
    pub grad_norm: Vec<f64>,
    pub lr: Vec<f64>,
}

impl TrainTrace {
    pub fn len(&self) -> usize {
        self.loss.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loss.is_empty()
    }
}

/// Generic full-batch loop. `targets_at(epoch)` supplies the training
/// targets of each epoch; `metric` is evaluated after every update.
pub fn train_loop(
    model: &mut HybridModel,
    inputs: &[Vec<f64>],
    targets_at: &dyn Fn(usize) -> Result<Vec<Target>>,
    metric: &dyn Fn(&HybridModel) -> Result<f64>,
    config: &TrainConfig,
) -> Result<TrainTrace> {
    config.validate()?;
    model.validate()?;
    if inputs.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let method = grad_dispatch(&config.backend);
    let mut params = model.params();
    let mut adam = Adam::new(params.len());
    let mut trace = TrainTrace::default();
    let n = inputs.len() as f64;
    for epoch in 0..config.epochs {
        let targets = targets_at(epoch)?;
        if targets.len() != inputs.len() {
            return Err(Error::Dimension { what: "targets", expected: inputs.len(), got: targets.len() });
        }
        let snapshot: &HybridModel = model;
        let passes: Vec<(f64, Vec<f64>)> = inputs
            .par_iter()
            .zip(&targets)
            .enumerate()
            .map(|(i, (x, t))| {
                let sample_seed = derive_seed(config.seed, &[epoch as u64, i as u64]);
                let dropout_seed = derive_seed(config.seed, &[epoch as u64, i as u64, 1]);
                let p = snapshot.pass(x, Some(*t), &config.backend, sample_seed, Some(dropout_seed), Some(method))?;
                Ok((p.loss, p.grad.expect("gradient requested")))
            })
            .collect::<Result<_>>()?;
        let mut loss = 0.0;
        let mut grad = vec![0.0; params.len()];
        for (l, g) in &passes {
            loss += l;
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
        }
        loss /= n;
        for g in &mut grad {
            *g /= n;
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
        }
        let lr = config.lr_at(epoch);
        match config.optimizer {
            OptimizerKind::Adam => adam.step(&mut params, &grad, lr),
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(&grad) {
                    *p -= lr * g;
                }
            }
        }
        model.set_params(&params)?;
        trace.loss.push(loss);
        trace.grad_norm.push(grad.iter().map(|g| g * g).sum::<f64>().sqrt());
        trace.lr.push(lr);
        trace.metric.push(metric(model)?);
    }
    Ok(trace)
}

/// Full-batch classification training; the trace metric is accuracy on
/// `ds` after each epoch.
pub fn train(model: &mut HybridModel, ds: &Dataset, config: &TrainConfig) -> Result<TrainTrace> {
    let Task::Classification { n_classes } = model.task else {
        return Err(Error::InvalidArgument("train expects a classification model".into()));
    };
    if ds.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    if ds.n_classes() > n_classes {
        return Err(Error::Dimension { what: "classes", expected: n_classes, got: ds.n_classes() });
    }
    let targets: Vec<Target> = ds.labels().iter().map(|&l| Target::Class(l)).collect();
    train_loop(
        model,
        ds.features(),
        &|_| Ok(targets.clone()),
        &|m| m.accuracy(ds, &config.backend),
        config,
    )
}

/// Trains `frontend` on `source` behind a temporary softmax head, then
/// freezes its first `freeze_first` layers.
pub fn pretrain_transfer(
    frontend: DenseNet,
    source: &Dataset,
    freeze_first: usize,
    config: &TrainConfig,
) -> Result<DenseNet> {
    let mut model = HybridModel::assemble(
        frontend,
        Vec::new(),
        RotationPool::default(),
        Task::Classification { n_classes: source.n_classes() },
        config.seed,
    )?;
    train(&mut model, source, config)?;
    let mut frontend = model.frontend;
    frontend.freeze_first(freeze_first)?;
    Ok(frontend)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VqeConfig {
    pub max_iters: usize,
    pub lr: f64,
    /// Converged once `|dC|` stays below this for `patience` iterations.
    pub tol: f64,
    pub patience: usize,
    pub backend: Backend,
}

impl Default for VqeConfig {
    fn default() -> Self {
        Self { max_iters: 500, lr: 0.2, tol: 1e-6, patience: 5, backend: Backend::Analytic }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VqeResult {
    pub theta: Vec<f64>,
    /// Energy before each update, then the final energy.
    pub energies: Vec<f64>,
    pub converged: bool,
}

/// Gradient descent on `<H>`. Stops after `patience` consecutive
/// iterations with `|dC| < tol`, or at `max_iters`.
pub fn vqe_minimize(
    circuit: &ParamCircuit,
    hamiltonian: &Observable,
    theta0: &[f64],
    config: &VqeConfig,
) -> Result<VqeResult> {
    if hamiltonian.terms.is_empty() {
        return Err(Error::InvalidArgument("empty Hamiltonian".into()));
    }
    hamiltonian.validate(circuit.n_qubits())?;
    if circuit.n_features() != 0 {
        return Err(Error::InvalidArgument("VQE circuits take no features".into()));
    }
    let method = grad_dispatch(&config.backend);
    let energy = |theta: &[f64], it: usize| -> Result<f64> {
        let b = config.backend.with_seed(derive_seed(config.backend.seed().unwrap_or(0), &[it as u64]));
        let (_, state) = record(circuit, theta, &[], &b, 0)?;
        Ok(final_expectations(&state, &b, std::slice::from_ref(hamiltonian), 1)?.0[0])
    };
    let mut theta = theta0.to_vec();
    let mut energies = vec![energy(&theta, 0)?];
    let mut calm = 0;
    let mut converged = false;
    for it in 0..config.max_iters {
        let b = config.backend.with_seed(derive_seed(config.backend.seed().unwrap_or(0), &[it as u64, 1]));
        let g = gradient(method, circuit, &theta, &[], &b, hamiltonian, false)?;
        for (t, g) in theta.iter_mut().zip(&g.values) {
            *t -= config.lr * g;
        }
        let e = energy(&theta, it + 1)?;
        if !e.is_finite() {
            return Err(Error::NonFinite(format!("VQE energy at iteration {it}")));
        }
        let delta = (e - energies.last().expect("non-empty")).abs();
        energies.push(e);
        calm = if delta < config.tol { calm + 1 } else { 0 };
        if calm >= config.patience {
            converged = true;
            break;
        }
    }
    Ok(VqeResult { theta, energies, converged })
}

/// NARMA regression experiment settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NarmaConfig {
    pub order: usize,
    /// Number of predicted steps.
    pub steps: usize,
    /// Noise scale; `None` uses the order's default.
    pub alpha: Option<f64>,
    pub n_nodes: usize,
    pub data_qubits: usize,
    pub ppel_layers: usize,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub train: TrainConfig,
}

impl Default for NarmaConfig {
    fn default() -> Self {
        Self {
            order: 5,
            steps: 100,
            alpha: None,
            n_nodes: 1,
            data_qubits: 4,
            ppel_layers: 3,
            hidden: vec![32, 32, 16, 16],
            dropout: 0.0,
            train: TrainConfig { lr: 0.05, optimizer: OptimizerKind::Sgd, ..TrainConfig::default() },
        }
    }
}

/// One row of the per-epoch NARMA table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NarmaEpoch {
    pub epoch: usize,
    pub eta: f64,
    pub sigma: f64,
    pub loss: f64,
    /// Mean squared error against the clean series after the update.
    pub mse: f64,
}

/// One row of the prediction table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NarmaStep {
    pub t: usize,
    pub target: f64,
    pub prediction: f64,
    /// Noise amplitude of the final epoch.
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NarmaReport {
    pub epochs: Vec<NarmaEpoch>,
    pub steps: Vec<NarmaStep>,
    pub final_mse: f64,
    pub model: HybridModel,
}

/// Trains a QPIE regressor to predict `y(t+1)` from the last `order`
/// inputs and outputs, against targets carrying decaying noise.
pub fn run_narma(config: &NarmaConfig) -> Result<NarmaReport> {
    let order = config.order;
    let seed = config.train.seed;
    let mut series = crate::data::gen_narma(order, config.steps + order + 1, seed)?;
    if let Some(a) = config.alpha {
        if !(a >= 0.0 && a.is_finite()) {
            return Err(Error::InvalidArgument(format!("alpha {a} must be non-negative")));
        }
        series.alpha = a;
    }
    let rows: Vec<usize> = (order - 1..order - 1 + config.steps).collect();
    let inputs: Vec<Vec<f64>> = rows
        .iter()
        .map(|&t| {
            let mut x: Vec<f64> = series.u[t + 1 - order..=t].to_vec();
            x.extend(&series.y[t + 1 - order..=t]);
            x
        })
        .collect();
    let clean: Vec<f64> = rows.iter().map(|&t| series.y[t + 1]).collect();

    let pool = RotationPool::default();
    let mut dims = vec![2 * order];
    dims.extend(&config.hidden);
    dims.push(config.n_nodes.max(1) * config.data_qubits);
    let dropout_after = if dims.len() == 6 { vec![1, 4] } else { vec![] };
    let frontend = DenseNet::new(&dims, config.dropout, dropout_after, derive_seed(seed, &[0]))?;
    let mut nodes = Vec::new();
    for k in 0..config.n_nodes {
        let circuit = build_qpie_vqc(config.data_qubits, 2, pool, config.ppel_layers)?;
        let obs = qpie_observables(&circuit);
        nodes.push(QuantumNode::new(circuit, obs, derive_seed(seed, &[1, k as u64]))?);
    }
    let mut model = HybridModel::assemble(frontend, nodes, pool, Task::Regression, seed)?;

    let noise_seed = derive_seed(seed, &[3]);
    let noisy = |epoch: usize| crate::data::noisy_target(&series, epoch, noise_seed);
    let backend = config.train.backend;
    let mse = |m: &HybridModel| -> Result<f64> {
        let preds = m.predict_all(&inputs, &backend)?;
        Ok(preds.iter().zip(&clean).map(|(p, y)| (p[0] - y).powi(2)).sum::<f64>() / clean.len() as f64)
    };
    let trace = train_loop(
        &mut model,
        &inputs,
        &|epoch| Ok(rows.iter().map(|&t| Target::Value(noisy(epoch).values[t + 1])).collect()),
        &mse,
        &config.train,
    )?;
    let epochs = (0..trace.len())
        .map(|e| {
            let n = noisy(e);
            NarmaEpoch { epoch: e, eta: n.eta, sigma: n.sigma, loss: trace.loss[e], mse: trace.metric[e] }
        })
        .collect();
    let last = noisy(config.train.epochs.saturating_sub(1));
    let preds = model.predict_all(&inputs, &backend)?;
    let steps = rows
        .iter()
        .zip(&preds)
        .zip(&clean)
        .map(|((&t, p), &y)| NarmaStep { t: t + 1, target: y, prediction: p[0], sigma: last.eta })
        .collect();
    let final_mse = mse(&model)?;
    Ok(NarmaReport { epochs, steps, final_mse, model })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::CircuitNode;
    use crate::data::gen_moon;
    use crate::gates::{GateOp, ParamSlot};

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(cross_entropy(&[1.0, 0.0], 0).unwrap(), (0.0, false));
        assert!((cross_entropy(&[0.5, 0.5], 1).unwrap().0 - 2f64.ln()).abs() < 1e-15);
        assert!((cross_entropy(&[0.75, 0.25], 1).unwrap().0 - 4f64.ln()).abs() < 1e-15);
        let (v, clamped) = cross_entropy(&[1.0, 0.0], 1).unwrap();
        assert!(clamped && (v + PROB_FLOOR.ln()).abs() < 1e-12);
    }

    fn tiny_model(seed: u64) -> HybridModel {
        let spec = ModelSpec { data_qubits: 2, ppel_layers: 3, hidden: vec![4, 4, 4, 4], ..Default::default() };
        HybridModel::qpie(&spec, seed).unwrap()
    }

    #[test]
    fn params_round_trip_and_count() {
        let mut m = tiny_model(1);
        let p = m.params();
        assert_eq!(p.len(), m.n_params());
        let shifted: Vec<f64> = p.iter().map(|v| v + 1.0).collect();
        m.set_params(&shifted).unwrap();
        assert_eq!(m.params(), shifted);
        m.frontend.freeze_first(2).unwrap();
        assert_eq!(m.params().len(), m.n_params());
    }

    #[test]
    fn identity_frontend_single_hadamard_node() {
        let circuit = ParamCircuit::new(
            1,
            0,
            vec![CircuitNode::Gate(GateOp::ry(0, ParamSlot::embedded(0, (0.0, 0.0)))), GateOp::h(0).into()],
            0,
            1,
        )
        .unwrap();
        let node = QuantumNode::new(circuit, vec![Observable::z(0)], 0).unwrap();
        let frontend = DenseNet::new(&[1, 1], 0.0, vec![], 0).unwrap();
        let mut m = HybridModel::assemble(frontend, vec![node], RotationPool::default(), Task::Classification { n_classes: 2 }, 0)
            .unwrap();
        m.head = LinearHead::zeros(1, 2);
        m.head.layer.w = vec![1.0, -1.0];
        let p = m.forward(&[0.3], &Backend::Analytic).unwrap();
        assert_eq!(p, softmax(&[0.0, 0.0]));
    }

    #[test]
    fn sample_gradient_matches_finite_differences() {
        let mut m = tiny_model(3);
        m.frontend.freeze_first(1).unwrap();
        let x = [0.4, -0.2];
        let (_, g) = m.sample_gradient(&x, Target::Class(1), &Backend::Analytic).unwrap();
        let p0 = m.params();
        let h = 1e-6;
        for i in (0..p0.len()).step_by(7) {
            let mut plus = m.clone();
            let mut pp = p0.clone();
            pp[i] += h;
            plus.set_params(&pp).unwrap();
            let mut minus = m.clone();
            pp[i] -= 2.0 * h;
            minus.set_params(&pp).unwrap();
            let lp = cross_entropy(&plus.forward(&x, &Backend::Analytic).unwrap(), 1).unwrap().0;
            let lm = cross_entropy(&minus.forward(&x, &Backend::Analytic).unwrap(), 1).unwrap().0;
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6, "param {i}: fd {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn zero_epochs_leave_model_unchanged() {
        let mut m = tiny_model(2);
        let before = m.clone();
        let ds = gen_moon(10, 0.1, 0).unwrap();
        let cfg = TrainConfig { epochs: 0, ..Default::default() };
        let trace = train(&mut m, &ds, &cfg).unwrap();
        assert!(trace.is_empty());
        assert_eq!(m, before);
    }

    #[test]
    fn frozen_layers_untouched_and_trace_deterministic() {
        let ds = gen_moon(20, 0.1, 0).unwrap();
        let cfg = TrainConfig { epochs: 10, ..Default::default() };
        let mut a = tiny_model(5);
        a.frontend.freeze_first(2).unwrap();
        let frozen_before = a.frontend.layers[..2].to_vec();
        let mut b = a.clone();
        let ta = train(&mut a, &ds, &cfg).unwrap();
        let tb = train(&mut b, &ds, &cfg).unwrap();
        assert_eq!(a.frontend.layers[..2], frozen_before[..]);
        assert_eq!(ta.loss.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), tb.loss.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(ta.len(), 10);
    }

    #[test]
    fn lr_schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr_at(0), 0.01);
        assert!((cfg.lr_at(50) - 0.001).abs() < 1e-18);
        assert!(TrainConfig { gamma: 0.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn vqe_single_z() {
        let c = ParamCircuit::from_nodes(1, 0, vec![GateOp::ry(0, ParamSlot::Trainable(0)).into()]).unwrap();
        let r = vqe_minimize(&c, &Observable::z(0), &[0.3], &VqeConfig::default()).unwrap();
        assert!((r.energies.last().unwrap() + 1.0).abs() < 1e-4);
        let none = vqe_minimize(&c, &Observable::z(0), &[0.3], &VqeConfig { max_iters: 0, ..Default::default() }).unwrap();
        assert_eq!(none.energies.len(), 1);
        assert!((none.energies[0] - 0.3f64.cos()).abs() < 1e-15);
    }
}
