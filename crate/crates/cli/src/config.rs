//! Experiment configuration documents.
//!
//! Every section is optional and falls back to its defaults; unknown keys
//! are rejected. [`ExperimentConfig::validate`] runs before any compute.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use qpie::engine::{Backend, NoiseSpec, Observable, ZTerm};
use qpie::hybrid::{ModelSpec, OptimizerKind, TrainConfig, VqeConfig};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub backend: BackendSpec,
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    pub train: TrainSpec,
    pub gradcheck: GradcheckSpec,
    pub narma: NarmaSpec,
    pub fim: FimSpec,
    pub vqe: VqeSpec,
    pub aao: AaoSpec,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Analytic,
    Sampled,
    Noisy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSpec {
    pub kind: BackendKind,
    /// Shot count for the sampled backend; `null` means `2^n`.
    pub shots: Option<u64>,
    pub noise: NoiseSpec,
}

impl Default for BackendSpec {
    fn default() -> Self {
        Self { kind: BackendKind::Analytic, shots: None, noise: NoiseSpec::benchmark_default() }
    }
}

impl BackendSpec {
    pub fn build(&self, seed: u64) -> Backend {
        match self.kind {
            BackendKind::Analytic => Backend::Analytic,
            BackendKind::Sampled => Backend::Sampled { shots: self.shots, seed },
            BackendKind::Noisy => Backend::Noisy { noise: self.noise, seed },
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetName {
    #[default]
    Moon,
    Spiral,
    Circles,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub name: DatasetName,
    pub n: usize,
    pub noise_sd: f64,
    /// Spiral turns.
    pub turns: f64,
    /// Inner radius for circles.
    pub factor: f64,
    /// Mislabelled moon points added at the arc midpoints.
    pub outliers: usize,
    /// Load the dataset from a CSV table instead of generating it.
    pub csv: Option<PathBuf>,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            name: DatasetName::Moon,
            n: 600,
            noise_sd: 0.1,
            turns: 1.0,
            factor: 0.5,
            outliers: 0,
            csv: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainSpec {
    pub n: usize,
    pub epochs: usize,
    pub freeze_first: usize,
}

impl Default for PretrainSpec {
    fn default() -> Self {
        Self { n: 400, epochs: 50, freeze_first: 2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSpec {
    pub epochs: usize,
    pub lr: f64,
    pub gamma: f64,
    pub decay_every: usize,
    pub optimizer: OptimizerKind,
    /// Side length of the decision-boundary grid; 0 disables it.
    pub grid: usize,
    /// Pretrain the frontend on concentric circles and freeze early layers.
    pub pretrain: Option<PretrainSpec>,
}

impl Default for TrainSpec {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            lr: t.lr,
            gamma: t.gamma,
            decay_every: t.decay_every,
            optimizer: t.optimizer,
            grid: 200,
            pretrain: None,
        }
    }
}

impl TrainSpec {
    pub fn build(&self, seed: u64, backend: Backend) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            gamma: self.gamma,
            decay_every: self.decay_every,
            seed,
            backend,
            optimizer: self.optimizer,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    ParamShift,
    Adjoint,
    FiniteDiff,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckSpec {
    pub circuits: usize,
    pub max_qubits: usize,
    pub max_params: usize,
    pub tolerance: f64,
    pub fd_step: f64,
    pub methods: Vec<MethodName>,
    /// Test hook: perturbs the adjoint column so the check must fail.
    pub corrupt: bool,
}

impl Default for GradcheckSpec {
    fn default() -> Self {
        Self {
            circuits: 50,
            max_qubits: 6,
            max_params: 30,
            tolerance: 1e-6,
            fd_step: qpie::grad::FD_STEP,
            methods: vec![MethodName::ParamShift, MethodName::Adjoint, MethodName::FiniteDiff],
            corrupt: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NarmaSpec {
    pub order: usize,
    pub steps: usize,
    pub alpha: Option<f64>,
    pub epochs: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub n_nodes: usize,
    pub data_qubits: usize,
    pub ppel_layers: usize,
}

impl Default for NarmaSpec {
    fn default() -> Self {
        let d = qpie::hybrid::NarmaConfig::default();
        Self {
            order: d.order,
            steps: d.steps,
            alpha: d.alpha,
            epochs: d.train.epochs,
            lr: d.train.lr,
            optimizer: d.train.optimizer,
            n_nodes: d.n_nodes,
            data_qubits: d.data_qubits,
            ppel_layers: d.ppel_layers,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FimSpec {
    /// Rows of the dataset used for the score vectors.
    pub samples: usize,
    pub max_params: usize,
    pub bins: usize,
    /// Epochs of training before the spectrum is taken.
    pub train_epochs: usize,
    /// Use a trained hybrid checkpoint instead of training one.
    pub checkpoint: Option<PathBuf>,
    /// Also compute a classical baseline and the comparison report.
    pub compare: bool,
}

impl Default for FimSpec {
    fn default() -> Self {
        Self { samples: 100, max_params: 100, bins: 50, train_epochs: 10, checkpoint: None, compare: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VqeSpec {
    pub n_qubits: usize,
    pub hamiltonian: Vec<ZTerm>,
    /// Initial angles of the product-RY ansatz; defaults to 0.3 on each qubit.
    pub init: Option<Vec<f64>>,
    pub max_iters: usize,
    pub lr: f64,
    pub tol: f64,
    pub patience: usize,
}

impl Default for VqeSpec {
    fn default() -> Self {
        let d = VqeConfig::default();
        Self {
            n_qubits: 2,
            hamiltonian: vec![ZTerm { coeff: 1.0, qubits: vec![0] }, ZTerm { coeff: 1.0, qubits: vec![1] }],
            init: None,
            max_iters: d.max_iters,
            lr: d.lr,
            tol: d.tol,
            patience: d.patience,
        }
    }
}

impl VqeSpec {
    pub fn observable(&self) -> Observable {
        Observable { terms: self.hamiltonian.clone() }
    }

    pub fn build(&self, backend: Backend) -> VqeConfig {
        VqeConfig { max_iters: self.max_iters, lr: self.lr, tol: self.tol, patience: self.patience, backend }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AaoSpec {
    pub n_qubits: usize,
    /// Number of gates to grow.
    pub steps: usize,
    /// Re-optimization iterations after each growth step.
    pub optimize_iters: usize,
    pub lr: f64,
    /// Cost observable; defaults to `Z0 Z1 + 0.5 Z0`.
    pub hamiltonian: Vec<ZTerm>,
}

impl Default for AaoSpec {
    fn default() -> Self {
        Self {
            n_qubits: 2,
            steps: 4,
            optimize_iters: 50,
            lr: 0.2,
            hamiltonian: vec![
                ZTerm { coeff: 1.0, qubits: vec![0, 1] },
                ZTerm { coeff: 0.5, qubits: vec![0] },
            ],
        }
    }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn check_hamiltonian(h: &[ZTerm], n: usize, what: &str) -> Result<(), String> {
    check(!h.is_empty(), || format!("{what}: hamiltonian has no terms"))?;
    Observable { terms: h.to_vec() }.validate(n).map_err(|e| format!("{what}: {e}"))?;
    check(h.iter().all(|t| t.coeff.is_finite()), || format!("{what}: non-finite coefficient"))
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| format!("config: {e}"))
    }

    /// Semantic checks beyond the document shape.
    pub fn validate(&self) -> Result<(), String> {
        let b = &self.backend;
        b.noise.validate().map_err(|e| format!("backend.noise: {e}"))?;
        check(b.shots != Some(0), || "backend.shots must be at least 1".into())?;

        let d = &self.dataset;
        if d.csv.is_none() {
            check(d.n > 0 && d.n.is_multiple_of(2), || format!("dataset.n = {} must be even and positive", d.n))?;
        }
        check(d.noise_sd >= 0.0 && d.noise_sd.is_finite(), || "dataset.noise_sd must be >= 0".into())?;
        check(d.turns > 0.0 && d.turns.is_finite(), || "dataset.turns must be > 0".into())?;
        check(d.factor > 0.0 && d.factor < 1.0, || "dataset.factor must be in (0, 1)".into())?;

        let m = &self.model;
        check(m.input_dim >= 1, || "model.input_dim must be >= 1".into())?;
        check(m.n_classes >= 2, || "model.n_classes must be >= 2".into())?;
        check((2..=10).contains(&m.data_qubits), || "model.data_qubits must be in 2..=10".into())?;
        check(m.ppel_layers >= 1, || "model.ppel_layers must be >= 1".into())?;
        check(m.hidden.iter().all(|&h| h > 0), || "model.hidden widths must be positive".into())?;
        check((0.0..1.0).contains(&m.dropout), || "model.dropout must be in [0, 1)".into())?;
        check(0.0 < m.tau1 && m.tau1 < m.tau2 && m.tau2 < 1.0, || "model thresholds need 0 < tau1 < tau2 < 1".into())?;

        let t = &self.train;
        t.build(self.seed, Backend::Analytic).validate().map_err(|e| format!("train: {e}"))?;
        check(t.grid <= 1000, || "train.grid must be <= 1000".into())?;
        if let Some(p) = &t.pretrain {
            check(p.n > 0 && p.n % 2 == 0, || "train.pretrain.n must be even and positive".into())?;
            check(p.freeze_first < m.hidden.len() + 1, || "train.pretrain.freeze_first too large".into())?;
        }

        let g = &self.gradcheck;
        check(g.circuits >= 1, || "gradcheck.circuits must be >= 1".into())?;
        check((2..=10).contains(&g.max_qubits), || "gradcheck.max_qubits must be in 2..=10".into())?;
        check(g.max_params >= 1, || "gradcheck.max_params must be >= 1".into())?;
        check(g.tolerance > 0.0, || "gradcheck.tolerance must be > 0".into())?;
        check(g.fd_step > 0.0, || "gradcheck.fd_step must be > 0".into())?;
        check(g.methods.len() >= 2, || "gradcheck.methods needs at least two methods".into())?;

        let n = &self.narma;
        check(n.order == 5 || n.order == 10, || "narma.order must be 5 or 10".into())?;
        check(n.steps >= 1, || "narma.steps must be >= 1".into())?;
        check(n.lr > 0.0, || "narma.lr must be > 0".into())?;
        check(n.alpha.is_none_or(|a| a >= 0.0), || "narma.alpha must be >= 0".into())?;
        check((2..=10).contains(&n.data_qubits), || "narma.data_qubits must be in 2..=10".into())?;
        check(n.ppel_layers >= 1, || "narma.ppel_layers must be >= 1".into())?;

        let f = &self.fim;
        check(f.samples >= 1, || "fim.samples must be >= 1".into())?;
        check(f.max_params >= 1, || "fim.max_params must be >= 1".into())?;
        check(f.bins >= 1, || "fim.bins must be >= 1".into())?;

        let v = &self.vqe;
        check((1..=10).contains(&v.n_qubits), || "vqe.n_qubits must be in 1..=10".into())?;
        check_hamiltonian(&v.hamiltonian, v.n_qubits, "vqe")?;
        if let Some(init) = &v.init {
            check(init.len() == v.n_qubits, || "vqe.init needs one angle per qubit".into())?;
        }
        check(v.lr > 0.0 && v.tol > 0.0 && v.patience >= 1, || "vqe: lr, tol > 0 and patience >= 1".into())?;

        let a = &self.aao;
        check((2..=8).contains(&a.n_qubits), || "aao.n_qubits must be in 2..=8".into())?;
        check_hamiltonian(&a.hamiltonian, a.n_qubits, "aao")?;
        check(a.lr > 0.0, || "aao.lr must be > 0".into())
    }
}
