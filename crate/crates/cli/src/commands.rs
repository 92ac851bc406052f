//! One function per subcommand. Each returns a one-line summary.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use qpie::analysis::{empirical_fim, spectrum_compare, write_heatmap, write_spectrum, FimSpectrum};
use qpie::circuit::{random_circuit, CircuitNode, ParamCircuit, RandomCircuitSpec};
use qpie::data::{add_moon_outliers, gen_circles, gen_moon, gen_spiral, Dataset};
use qpie::engine::{Backend, Observable};
use qpie::gates::{GateOp, ParamSlot};
use qpie::grad::{aao_step, gradient, CandidatePool, GradMethod};
use qpie::hybrid::{
    pretrain_transfer, run_narma, train as train_model, HybridModel, ModelSpec, NarmaConfig, Task,
    TrainConfig, VqeConfig,
};

use crate::config::{DatasetName, ExperimentConfig, MethodName};
use crate::{CliError, Context};

/// Everything needed to reload a trained model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub model: HybridModel,
}

impl Checkpoint {
    /// Reads a checkpoint, skipping `#` header lines.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read checkpoint {}: {e}", path.display())))?;
        let body: String = text.lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n");
        let ck: Checkpoint = serde_json::from_str(&body).map_err(|e| CliError::Usage(format!("checkpoint: {e}")))?;
        ck.model.validate().map_err(|e| CliError::Usage(format!("checkpoint: {e}")))?;
        Ok(ck)
    }
}

fn f(v: f64) -> String {
    format!("{v:?}")
}

fn csv_writer(buf: &mut Vec<u8>) -> csv::Writer<&mut Vec<u8>> {
    csv::Writer::from_writer(buf)
}

pub fn load_dataset(config: &ExperimentConfig) -> Result<Dataset, CliError> {
    let d = &config.dataset;
    if let Some(path) = &d.csv {
        let file = std::fs::File::open(path)
            .map_err(|e| CliError::Usage(format!("cannot read dataset {}: {e}", path.display())))?;
        return Ok(Dataset::read_csv(file, &path.display().to_string())?);
    }
    let ds = match d.name {
        DatasetName::Moon => gen_moon(d.n, d.noise_sd, config.seed)?,
        DatasetName::Spiral => gen_spiral(d.n, d.turns, d.noise_sd, config.seed)?,
        DatasetName::Circles => gen_circles(d.n, d.factor, d.noise_sd, config.seed)?,
    };
    if d.outliers > 0 {
        if d.name != DatasetName::Moon {
            return Err(CliError::Usage("dataset.outliers applies to the moon dataset only".into()));
        }
        return Ok(add_moon_outliers(&ds, d.outliers)?);
    }
    Ok(ds)
}

fn model_spec(config: &ExperimentConfig, ds: &Dataset) -> ModelSpec {
    ModelSpec {
        input_dim: ds.n_dims(),
        n_classes: config.model.n_classes.max(ds.n_classes()),
        ..config.model.clone()
    }
}

/// Builds the hybrid model, optionally pretraining and freezing its
/// frontend on concentric circles first.
fn build_model(ctx: &Context, ds: &Dataset) -> Result<HybridModel, CliError> {
    let c = &ctx.config;
    let spec = model_spec(c, ds);
    let mut model = HybridModel::qpie(&spec, c.seed)?;
    if let Some(p) = &c.train.pretrain {
        if ds.n_dims() != 2 {
            return Err(CliError::Usage("pretraining needs 2-D inputs".into()));
        }
        let source = gen_circles(p.n, 0.5, 0.05, c.seed.wrapping_add(1))?;
        let cfg = TrainConfig { epochs: p.epochs, ..c.train.build(c.seed, Backend::Analytic) };
        let frontend = pretrain_transfer(model.frontend.clone(), &source, p.freeze_first, &cfg)?;
        model = HybridModel::assemble(frontend, model.nodes, model.pool, model.task, c.seed)?;
    }
    Ok(model)
}

pub fn train(ctx: &Context) -> Result<String, CliError> {
    let c = &ctx.config;
    let ds = load_dataset(c)?;
    let backend = c.backend.build(c.seed);
    let mut model = build_model(ctx, &ds)?;
    let cfg = c.train.build(c.seed, backend);
    let trace = train_model(&mut model, &ds, &cfg)?;

    ctx.write("trace.csv", |buf| {
        let mut w = csv_writer(buf);
        w.write_record(["epoch", "loss", "accuracy", "grad_norm", "lr"])?;
        for e in 0..trace.len() {
            w.write_record([e.to_string(), f(trace.loss[e]), f(trace.metric[e]), f(trace.grad_norm[e]), f(trace.lr[e])])?;
        }
        w.flush()?;
        Ok(())
    })?;

    let ck = Checkpoint { config: c.clone(), seed: c.seed, model: model.clone() };
    ctx.write("checkpoint.json", |buf| {
        serde_json::to_writer_pretty(&mut *buf, &ck)?;
        buf.push(b'\n');
        Ok(())
    })?;

    if ds.n_dims() == 2 && c.train.grid > 0 {
        let grid = decision_grid(&model, &ds, c.train.grid, &backend)?;
        let n_classes = model.head.n_out();
        ctx.write("grid.csv", |buf| {
            let mut w = csv_writer(buf);
            let mut header = vec!["x0".to_string(), "x1".to_string()];
            header.extend((0..n_classes).map(|k| format!("p{k}")));
            w.write_record(&header)?;
            for (x, p) in &grid {
                let mut rec = vec![f(x[0]), f(x[1])];
                rec.extend(p.iter().map(|v| f(*v)));
                w.write_record(&rec)?;
            }
            w.flush()?;
            Ok(())
        })?;
    }

    let final_acc = trace.metric.last().copied().unwrap_or(f64::NAN);
    let final_loss = trace.loss.last().copied().unwrap_or(f64::NAN);
    ctx.write("summary.csv", |buf| {
        let mut w = csv_writer(buf);
        w.write_record(["key", "value"])?;
        w.write_record(["dataset", &ds.meta.name])?;
        w.write_record(["backend", backend.name()])?;
        w.write_record(["epochs", &trace.len().to_string()])?;
        w.write_record(["n_params", &model.n_params().to_string()])?;
        w.write_record(["final_loss", &f(final_loss)])?;
        w.write_record(["final_accuracy", &f(final_acc)])?;
        w.flush()?;
        Ok(())
    })?;
    Ok(format!("train: {} epochs, final accuracy {final_acc:.4}, loss {final_loss:.4}", trace.len()))
}

/// A grid coordinate and the class probabilities there.
pub type GridPoint = ([f64; 2], Vec<f64>);

/// Class probabilities on a `side x side` grid over the data's bounding
/// box, padded by a quarter of each span.
pub fn decision_grid(
    model: &HybridModel,
    ds: &Dataset,
    side: usize,
    backend: &Backend,
) -> Result<Vec<GridPoint>, CliError> {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for x in ds.features() {
        for d in 0..2 {
            lo[d] = lo[d].min(x[d]);
            hi[d] = hi[d].max(x[d]);
        }
    }
    for d in 0..2 {
        let pad = 0.25 * (hi[d] - lo[d]).max(1e-9);
        lo[d] -= pad;
        hi[d] += pad;
    }
    let coord = |d: usize, i: usize| {
        if side == 1 {
            (lo[d] + hi[d]) / 2.0
        } else {
            lo[d] + (hi[d] - lo[d]) * i as f64 / (side - 1) as f64
        }
    };
    let points: Vec<Vec<f64>> =
        (0..side).flat_map(|j| (0..side).map(move |i| (i, j))).map(|(i, j)| vec![coord(0, i), coord(1, j)]).collect();
    let probs = model.predict_all(&points, backend)?;
    Ok(points.into_iter().zip(probs).map(|(p, q)| ([p[0], p[1]], q)).collect())
}

fn method_of(m: MethodName, fd_step: f64) -> GradMethod {
    match m {
        MethodName::ParamShift => GradMethod::ParamShift,
        MethodName::Adjoint => GradMethod::Adjoint,
        MethodName::FiniteDiff => GradMethod::FiniteDiff(fd_step),
    }
}

/// The seeded circuit family used by `gradcheck`: 2 to `max_qubits`
/// qubits, 1 to `max_params` trainables, no mid-circuit measurement.
pub fn gradcheck_suite(
    count: usize,
    max_qubits: usize,
    max_params: usize,
    seed: u64,
) -> Result<Vec<(ParamCircuit, Vec<f64>, Observable)>, CliError> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let n_qubits = rng.random_range(2..=max_qubits);
            let spec = RandomCircuitSpec {
                n_qubits,
                n_trainable: rng.random_range(1..=max_params),
                n_fixed_gates: rng.random_range(0..=n_qubits),
                conditionals: false,
                n_features: 0,
            };
            let circuit = random_circuit(spec, seed.wrapping_mul(1000).wrapping_add(i as u64))?;
            let theta: Vec<f64> = (0..circuit.n_trainable())
                .map(|_| rng.random_range(-std::f64::consts::PI..std::f64::consts::PI))
                .collect();
            let a = rng.random_range(0..n_qubits);
            let b = (a + 1 + rng.random_range(0..n_qubits - 1)) % n_qubits;
            let obs = Observable::weighted_sum(&[Observable::z(a), Observable::z_string(vec![a, b])], &[1.0, 0.5]);
            Ok((circuit, theta, obs))
        })
        .collect()
}

pub fn gradcheck(ctx: &Context) -> Result<String, CliError> {
    let c = &ctx.config;
    let g = &c.gradcheck;
    let backend = c.backend.build(c.seed);
    let methods: Vec<GradMethod> = g.methods.iter().map(|&m| method_of(m, g.fd_step)).collect();
    if methods.contains(&GradMethod::Adjoint) && backend != Backend::Analytic {
        return Err(qpie::Error::Dispatch { method: "adjoint", backend: backend.name() }.into());
    }
    let suite = gradcheck_suite(g.circuits, g.max_qubits, g.max_params, c.seed)?;
    let mut rows: Vec<(usize, usize, Vec<f64>, f64)> = Vec::new();
    let mut worst = 0.0f64;
    for (k, (circuit, theta, obs)) in suite.iter().enumerate() {
        let mut columns = Vec::with_capacity(methods.len());
        for &m in &methods {
            let mut v = gradient(m, circuit, theta, &[], &backend, obs, false)?.values;
            if g.corrupt && m == GradMethod::Adjoint {
                for x in &mut v {
                    *x += 1e-3;
                }
            }
            columns.push(v);
        }
        for p in 0..theta.len() {
            let vals: Vec<f64> = columns.iter().map(|col| col[p]).collect();
            let mut dev = 0.0f64;
            for i in 0..vals.len() {
                for j in i + 1..vals.len() {
                    dev = dev.max((vals[i] - vals[j]).abs());
                }
            }
            worst = worst.max(dev);
            rows.push((k, p, vals, dev));
        }
    }
    ctx.write("gradcheck.csv", |buf| {
        let mut w = csv_writer(buf);
        let mut header = vec!["circuit".to_string(), "param".to_string()];
        header.extend(methods.iter().map(|m| m.name().to_string()));
        header.push("max_deviation".into());
        w.write_record(&header)?;
        for (k, p, vals, dev) in &rows {
            let mut rec = vec![k.to_string(), p.to_string()];
            rec.extend(vals.iter().map(|v| f(*v)));
            rec.push(f(*dev));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    })?;
    ctx.write("gradcheck_summary.csv", |buf| {
        let mut w = csv_writer(buf);
        w.write_record(["circuits", "parameters", "max_deviation", "tolerance", "pass"])?;
        w.write_record([
            suite.len().to_string(),
            rows.len().to_string(),
            f(worst),
            f(g.tolerance),
            (worst < g.tolerance).to_string(),
        ])?;
        w.flush()?;
        Ok(())
    })?;
    let line = format!("gradcheck: {} circuits, {} parameters, max deviation {worst:.3e}", suite.len(), rows.len());
    if worst < g.tolerance {
        Ok(line)
    } else {
        Err(CliError::Check(format!("{line} exceeds tolerance {:e}", g.tolerance)))
    }
}

pub fn narma(ctx: &Context) -> Result<String, CliError> {
    let c = &ctx.config;
    let n = &c.narma;
    let base = NarmaConfig::default();
    let cfg = NarmaConfig {
        order: n.order,
        steps: n.steps,
        alpha: n.alpha,
        n_nodes: n.n_nodes,
        data_qubits: n.data_qubits,
        ppel_layers: n.ppel_layers,
        train: TrainConfig {
            epochs: n.epochs,
            lr: n.lr,
            optimizer: n.optimizer,
            seed: c.seed,
            backend: c.backend.build(c.seed),
            ..base.train.clone()
        },
        ..base
    };
    let report = run_narma(&cfg)?;
    ctx.write("narma_epochs.csv", |buf| {
        let mut w = csv_writer(buf);
        w.write_record(["epoch", "eta", "sigma", "loss", "mse"])?;
        for e in &report.epochs {
            w.write_record([e.epoch.to_string(), f(e.eta), f(e.sigma), f(e.loss), f(e.mse)])?;
        }
        w.flush()?;
        Ok(())
    })?;
    ctx.write("narma_predictions.csv", |buf| {
        let mut w = csv_writer(buf);
        w.write_record(["t", "target", "prediction", "sigma"])?;
        for s in &report.steps {
            w.write_record([s.t.to_string(), f(s.target), f(s.prediction), f(s.sigma)])?;
        }
        w.flush()?;
        Ok(())
    })?;
    let alpha = n.alpha.unwrap_or_else(|| qpie::data::default_alpha(n.order));
    ctx.write("narma_summary.csv", |buf| {
        let mut w = csv_writer(buf);
        w.write_record(["order", "steps", "epochs", "alpha", "final_mse"])?;
        w.write_record([
            n.order.to_string(),
            report.steps.len().to_string(),
            report.epochs.len().to_string(),
            f(alpha),
            f(report.final_mse),
        ])?;
        w.flush()?;
        Ok(())
    })?;
    Ok(format!("narma: order {}, {} steps, final MSE {:.6}", n.order, report.steps.len(), report.final_mse))
}

fn subset(ds: &Dataset, n: usize) -> Result<Dataset, CliError> {
    let n = n.min(ds.len());
    Ok(Dataset::new(ds.features()[..n].to_vec(), ds.labels()[..n].to_vec(), ds.n_classes(), ds.meta.clone())?)
}

fn write_spectrum_files(ctx: &Context, label: &str, s: &FimSpectrum) -> Result<(), CliError> {
    ctx.write(&format!("fim_{label}_heatmap.csv"), |buf| Ok(write_heatmap(s, buf, None)?))?;
    ctx.write(&format!("fim_{label}_spectrum.csv"), |buf| Ok(write_spectrum(s, buf, None)?))?;
    ctx.write(&format!("fim_{label}_eigenvalues.csv"), |buf| {
        let mut w = csv_writer(buf);
        w.write_record(["index", "eigenvalue"])?;
        for (i, l) in s.eigenvalues.iter().enumerate() {
            w.write_record([i.to_string(), f(*l)])?;
        }
        w.flush()?;
        Ok(())
    })
}

pub fn fim(ctx: &Context) -> Result<String, CliError> {
    let c = &ctx.config;
    let fs = &c.fim;
    let backend = c.backend.build(c.seed);
    let ds = load_dataset(c)?;
    let sample = subset(&ds, fs.samples)?;
    let train_cfg = TrainConfig { epochs: fs.train_epochs, ..c.train.build(c.seed, backend) };

    let hybrid = match &fs.checkpoint {
        Some(path) => Checkpoint::load(path)?.model,
        None => {
            let mut m = HybridModel::qpie(&model_spec(c, &ds), c.seed)?;
            train_model(&mut m, &ds, &train_cfg)?;
            m
        }
    };
    if !matches!(hybrid.task, Task::Classification { .. }) {
        return Err(CliError::Usage("fim needs a classification model".into()));
    }
    let hs = empirical_fim(&hybrid, &sample, &backend, Some(fs.max_params), fs.bins)?;
    write_spectrum_files(ctx, "hybrid", &hs)?;
    let mut line = format!(
        "fim: hybrid {} params, max eigenvalue {:.4}",
        hs.n_params,
        hs.eigenvalues.last().copied().unwrap_or(0.0)
    );

    if fs.compare {
        let spec = ModelSpec { n_nodes: 0, ..model_spec(c, &ds) };
        let mut classical = HybridModel::qpie(&spec, c.seed)?;
        train_model(&mut classical, &ds, &TrainConfig { backend: Backend::Analytic, ..train_cfg.clone() })?;
        let cs = empirical_fim(&classical, &sample, &Backend::Analytic, Some(fs.max_params), fs.bins)?;
        write_spectrum_files(ctx, "classical", &cs)?;
        let report = spectrum_compare(&cs, &hs);
        ctx.write("fim_report.csv", |buf| Ok(report.write_csv(buf, None)?))?;
        line.push_str(&format!(
            "; classical {} params, max eigenvalue {:.4}",
            cs.n_params,
            cs.eigenvalues.last().copied().unwrap_or(0.0)
        ));
    }
    Ok(line)
}

/// `RY(theta_q)` on each of `n` qubits.
pub fn product_ry(n: usize) -> Result<ParamCircuit, CliError> {
    let nodes: Vec<CircuitNode> = (0..n).map(|q| GateOp::ry(q, ParamSlot::Trainable(q)).into()).collect();
    Ok(ParamCircuit::from_nodes(n, 0, nodes)?)
}

/// Smallest diagonal entry of a Z-string Hamiltonian.
pub fn ground_energy(h: &Observable, n: usize) -> f64 {
    h.diagonal(n).into_iter().fold(f64::INFINITY, f64::min)
}

pub fn vqe(ctx: &Context) -> Result<String, CliError> {
    let c = &ctx.config;
    let v = &c.vqe;
    let circuit = product_ry(v.n_qubits)?;
    let h = v.observable();
    let theta0 = v.init.clone().unwrap_or_else(|| vec![0.3; v.n_qubits]);
    let result = qpie::hybrid::vqe_minimize(&circuit, &h, &theta0, &v.build(c.backend.build(c.seed)))?;
    let ground = ground_energy(&h, v.n_qubits);
    ctx.write("vqe_trace.csv", |buf| {
        let mut w = csv_writer(buf);
        w.write_record(["iteration", "energy"])?;
        for (i, e) in result.energies.iter().enumerate() {
            w.write_record([i.to_string(), f(*e)])?;
        }
        w.flush()?;
        Ok(())
    })?;
    let last = *result.energies.last().expect("initial energy recorded");
    ctx.write("vqe_summary.csv", |buf| {
        let mut w = csv_writer(buf);
        w.write_record(["final_energy", "ground_energy", "iterations", "converged"])?;
        w.write_record([f(last), f(ground), (result.energies.len() - 1).to_string(), result.converged.to_string()])?;
        w.flush()?;
        Ok(())
    })?;
    Ok(format!("vqe: energy {last:.6} (ground {ground:.6}), converged {}", result.converged))
}

pub fn aao_grow(ctx: &Context) -> Result<String, CliError> {
    let c = &ctx.config;
    let a = &c.aao;
    let backend = c.backend.build(c.seed);
    let h = Observable { terms: a.hamiltonian.clone() };
    let pool = CandidatePool::full(a.n_qubits)?;
    let mut circuit = ParamCircuit::from_nodes(a.n_qubits, 0, (0..a.n_qubits).map(|q| GateOp::h(q).into()).collect())?;
    let mut theta: Vec<f64> = Vec::new();
    let vqe_cfg = VqeConfig { max_iters: a.optimize_iters, lr: a.lr, backend, ..VqeConfig::default() };
    let mut rows = Vec::new();
    for step in 0..a.steps {
        let grown = aao_step(&circuit, &theta, &[], &backend, &h, &pool)?;
        let chosen = pool.candidates()[grown.chosen].clone();
        let grad = grown.candidate_gradients[grown.chosen];
        circuit = grown.circuit;
        let opt = qpie::hybrid::vqe_minimize(&circuit, &h, &grown.theta, &vqe_cfg)?;
        theta = opt.theta;
        let energy = *opt.energies.last().expect("initial energy recorded");
        rows.push((step, chosen, grad, energy));
    }
    ctx.write("aao_growth.csv", |buf| {
        let mut w = csv_writer(buf);
        w.write_record(["step", "gate", "qubits", "gradient", "energy"])?;
        for (step, cand, grad, energy) in &rows {
            let qubits = cand.qubits.iter().map(|q| q.to_string()).collect::<Vec<_>>().join("-");
            w.write_record([step.to_string(), format!("{:?}", cand.kind), qubits, f(*grad), f(*energy)])?;
        }
        w.flush()?;
        Ok(())
    })?;
    ctx.write("aao_circuit.json", |buf| {
        buf.write_all(circuit.to_json()?.as_bytes())?;
        buf.push(b'\n');
        Ok(())
    })?;
    let energy = rows.last().map_or(f64::NAN, |r| r.3);
    Ok(format!("aao-grow: {} gates added, energy {energy:.6}", rows.len()))
}

