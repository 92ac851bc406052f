//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, SymmetricEigen};

use qpie::analysis::{empirical_fim, spectrum_compare};
use qpie::circuit::{evaluate_conditional, CircuitNode, ParamCircuit, RotationPool};
use qpie::data::{gen_moon, gen_narma, gen_spiral, noisy_target, Dataset};
use qpie::engine::{run, Backend, NoiseSpec, Observable};
use qpie::gates::{GateKind, GateOp, ParamSlot};
use qpie::grad::{gradient, GradMethod};
use qpie::hybrid::{run_narma, train, vqe_minimize, HybridModel, ModelSpec, NarmaConfig, Target, TrainConfig, VqeConfig};
use qpie::kernel::DensityMatrix;
use qpie_cli::commands::{gradcheck_suite, product_ry};

const GRAD_AGREEMENT_TOL: f64 = 1e-6;
const GRAD_RUNTIME: Duration = Duration::from_secs(60);
const PSR_TOL: f64 = 1e-12;
const ADJOINT_SPEEDUP: f64 = 10.0;
const MOON_ACCURACY: f64 = 0.95;
const SPIRAL_ACCURACY: f64 = 0.90;
const BENCH_RUNTIME: Duration = Duration::from_secs(300);
const NOISE_DEGRADATION: f64 = 0.10;
const CHANNEL_TOL: f64 = 1e-15;
const SIGMA_REL_TOL: f64 = 0.10;
const FIM_PSD_TOL: f64 = 1e-9;
const FIM_ORACLE_TOL: f64 = 1e-10;
const DENSITY_SUM_TOL: f64 = 1e-12;
const VQE_TOL: f64 = 1e-3;
const VQE_BOUND_TOL: f64 = 1e-9;
const POOL_TOL: f64 = 1e-12;

type Outcome = Result<String, String>;

fn check(cond: bool, ok: String, bad: String) -> Outcome {
    if cond {
        Ok(ok)
    } else {
        Err(bad)
    }
}

fn gradient_agreement() -> Outcome {
    let start = Instant::now();
    let suite = gradcheck_suite(50, 6, 30, 0).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for (circuit, theta, obs) in &suite {
        let b = Backend::Analytic;
        let ps = gradient(GradMethod::ParamShift, circuit, theta, &[], &b, obs, false).map_err(|e| e.to_string())?;
        let adj = gradient(GradMethod::Adjoint, circuit, theta, &[], &b, obs, false).map_err(|e| e.to_string())?;
        let fd = gradient(GradMethod::FiniteDiff(1e-5), circuit, theta, &[], &b, obs, false)
            .map_err(|e| e.to_string())?;
        for i in 0..theta.len() {
            let v = [ps.values[i], adj.values[i], fd.values[i]];
            worst = worst.max((v[0] - v[1]).abs()).max((v[0] - v[2]).abs()).max((v[1] - v[2]).abs());
        }
    }
    let elapsed = start.elapsed();
    let msg = format!("50 circuits, max pairwise deviation {worst:.2e} in {elapsed:.1?}");
    check(worst < GRAD_AGREEMENT_TOL && elapsed < GRAD_RUNTIME, msg.clone(), msg)
}

fn psr_exactness() -> Outcome {
    let circuit = ParamCircuit::from_nodes(1, 0, vec![GateOp::ry(0, ParamSlot::Trainable(0)).into()])
        .map_err(|e| e.to_string())?;
    let obs = Observable::z(0);
    let mut worst = 0.0f64;
    for k in 0..100 {
        let theta = -PI + 2.0 * PI * k as f64 / 99.0;
        let g = gradient(GradMethod::ParamShift, &circuit, &[theta], &[], &Backend::Analytic, &obs, false)
            .map_err(|e| e.to_string())?;
        worst = worst.max((g.values[0] + theta.sin()).abs());
    }
    let msg = format!("100 angles, max |g + sin| {worst:.2e}");
    check(worst <= PSR_TOL, msg.clone(), msg)
}

/// 40 parameterized gates on 4 qubits with a CNOT ring between layers;
/// the first `trainable` are trainable, the rest fixed.
fn scaling_circuit(trainable: usize) -> ParamCircuit {
    let kinds = [GateKind::RY, GateKind::RX, GateKind::RZ];
    let mut nodes: Vec<CircuitNode> = Vec::new();
    let mut k = 0;
    for layer in 0..10 {
        for q in 0..4 {
            let slot = if k < trainable { ParamSlot::Trainable(k) } else { ParamSlot::Fixed(0.1 * k as f64) };
            nodes.push(GateOp::rotation(kinds[(layer + q) % 3], q, slot).unwrap().into());
            k += 1;
        }
        for q in 0..4 {
            nodes.push(GateOp::cnot(q, (q + 1) % 4).unwrap().into());
        }
    }
    ParamCircuit::new(4, 0, nodes, trainable, 0).unwrap()
}

fn adjoint_scaling() -> Outcome {
    let obs = Observable::z_string(vec![0, 3]);
    let mut counts = Vec::new();
    for n in [1, 10, 20, 40] {
        let c = scaling_circuit(n);
        let theta: Vec<f64> = (0..n).map(|j| 0.05 * j as f64 + 0.2).collect();
        let g = gradient(GradMethod::Adjoint, &c, &theta, &[], &Backend::Analytic, &obs, false)
            .map_err(|e| e.to_string())?;
        counts.push(g.gate_applications);
    }
    let c = scaling_circuit(40);
    let theta: Vec<f64> = (0..40).map(|j| 0.05 * j as f64 + 0.2).collect();
    let ps = gradient(GradMethod::ParamShift, &c, &theta, &[], &Backend::Analytic, &obs, false)
        .map_err(|e| e.to_string())?;
    let ratio = ps.gate_applications as f64 / counts[3] as f64;
    let flat = counts.iter().all(|&c| c == counts[0]);
    let msg = format!(
        "adjoint counts {counts:?} for 1/10/20/40 trainables, PSR {} at 40, ratio {ratio:.1}",
        ps.gate_applications
    );
    check(flat && ratio >= ADJOINT_SPEEDUP, msg.clone(), msg)
}

struct Benchmarks {
    moon: Dataset,
    model: HybridModel,
    moon_acc: f64,
    moon_time: Duration,
}

fn train_benchmark(ds: &Dataset) -> Result<(HybridModel, f64, Duration), String> {
    let start = Instant::now();
    let mut model = HybridModel::qpie(&ModelSpec::default(), 0).map_err(|e| e.to_string())?;
    let trace = train(&mut model, ds, &TrainConfig::default()).map_err(|e| e.to_string())?;
    Ok((model, *trace.metric.last().unwrap(), start.elapsed()))
}

fn benchmarks(bench: &mut Option<Benchmarks>) -> Outcome {
    let moon = gen_moon(600, 0.1, 0).map_err(|e| e.to_string())?;
    let (model, moon_acc, moon_time) = train_benchmark(&moon)?;
    let spiral = gen_spiral(600, 1.0, 0.0, 0).map_err(|e| e.to_string())?;
    let (_, spiral_acc, spiral_time) = train_benchmark(&spiral)?;
    let msg = format!(
        "moon accuracy {moon_acc:.3} in {moon_time:.1?}, spiral accuracy {spiral_acc:.3} in {spiral_time:.1?}"
    );
    *bench = Some(Benchmarks { moon, model, moon_acc, moon_time });
    check(
        moon_acc >= MOON_ACCURACY
            && spiral_acc >= SPIRAL_ACCURACY
            && moon_time < BENCH_RUNTIME
            && spiral_time < BENCH_RUNTIME,
        msg.clone(),
        msg,
    )
}

fn noise_resilience(bench: &Option<Benchmarks>) -> Outcome {
    let b = bench.as_ref().ok_or("moon benchmark did not run")?;
    let analytic = b.model.accuracy(&b.moon, &Backend::Analytic).map_err(|e| e.to_string())?;
    let noisy = b
        .model
        .accuracy(&b.moon, &Backend::Noisy { noise: NoiseSpec::benchmark_default(), seed: 0 })
        .map_err(|e| e.to_string())?;
    let drop = analytic - noisy;
    let msg = format!(
        "analytic {analytic:.3}, noisy {noisy:.3}, degradation {drop:.3} (training took {:.1?}, final {:.3})",
        b.moon_time, b.moon_acc
    );
    check(drop < NOISE_DEGRADATION, msg.clone(), msg)
}

fn channel_closed_forms() -> Outcome {
    let mut worst = 0.0f64;
    for k in 0..=10 {
        let p = k as f64 / 10.0;
        let mut rho = DensityMatrix::zero(1).map_err(|e| e.to_string())?;
        rho.bit_flip(0, p).map_err(|e| e.to_string())?;
        worst = worst.max((rho.expectation_z(&[0]).unwrap() - (1.0 - 2.0 * p)).abs());
        let mut rho = DensityMatrix::zero(1).map_err(|e| e.to_string())?;
        rho.depolarize(0, p).map_err(|e| e.to_string())?;
        worst = worst.max((rho.expectation_z(&[0]).unwrap() - (1.0 - p)).abs());
    }
    let msg = format!("11 values of p, max deviation {worst:.1e}");
    check(worst <= CHANNEL_TOL, msg.clone(), msg)
}

fn narma_harness() -> Outcome {
    let report = run_narma(&NarmaConfig::default()).map_err(|e| e.to_string())?;
    let mse: Vec<f64> = report.epochs.iter().map(|e| e.mse).collect();
    if mse.len() < 50 {
        return Err(format!("only {} epochs", mse.len()));
    }
    let ma: Vec<f64> = mse[..50].windows(5).map(|w| w.iter().sum::<f64>() / 5.0).collect();
    let monotone = ma.windows(2).all(|w| w[1] < w[0]);

    let series = gen_narma(5, 10_000, 0).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for epoch in [0, 25, 50, 100] {
        let noisy = noisy_target(&series, epoch, 1);
        let eps: Vec<f64> = noisy.values.iter().zip(&series.y).map(|(v, y)| v - y).collect();
        let n = eps.len() as f64;
        let mean = eps.iter().sum::<f64>() / n;
        let sd = (eps.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let eta = series.alpha * (-(epoch as f64) / 50.0).exp();
        worst = worst.max((sd - eta).abs() / eta).max((noisy.sigma - eta).abs() / eta);
    }
    let msg = format!(
        "5-epoch moving MSE {:.5} -> {:.5}, monotone {monotone}; sigma relative error {:.2}%",
        ma[0],
        ma[ma.len() - 1],
        100.0 * worst
    );
    check(monotone && worst < SIGMA_REL_TOL, msg.clone(), msg)
}

fn fim_properties() -> Outcome {
    let ds = gen_moon(40, 0.1, 0).map_err(|e| e.to_string())?;
    let hybrid = HybridModel::qpie(&ModelSpec::default(), 0).map_err(|e| e.to_string())?;
    let classical = HybridModel::qpie(&ModelSpec { n_nodes: 0, ..ModelSpec::default() }, 0).map_err(|e| e.to_string())?;
    let b = Backend::Analytic;
    let hs = empirical_fim(&hybrid, &ds, &b, Some(100), 50).map_err(|e| e.to_string())?;
    let cs = empirical_fim(&classical, &ds, &b, Some(100), 50).map_err(|e| e.to_string())?;

    // Direct loop oracle: average outer product of negated loss gradients.
    let p = hs.n_params;
    let mut oracle = vec![0.0; p * p];
    for (x, &label) in ds.features().iter().zip(ds.labels()) {
        let (_, g) = hybrid.sample_gradient(x, Target::Class(label), &b).map_err(|e| e.to_string())?;
        for i in 0..p {
            for j in 0..p {
                oracle[i * p + j] += g[i] * g[j];
            }
        }
    }
    let oracle_dev = oracle
        .iter()
        .zip(&hs.matrix)
        .map(|(o, m)| (o / ds.len() as f64 - m).abs())
        .fold(0.0, f64::max);
    let min_l = hs.raw_min_eigenvalue.min(cs.raw_min_eigenvalue);
    let dsum = [&hs, &cs]
        .iter()
        .map(|s| s.density.as_ref().map_or(0.0, |d| (d.total() - 1.0).abs()))
        .fold(0.0, f64::max);
    let have_density = hs.density.is_some() && cs.density.is_some();
    let report = spectrum_compare(&cs, &hs);
    let mut csv = Vec::new();
    report.write_csv(&mut csv, None).map_err(|e| e.to_string())?;
    let report_ok = cs.n_params == 100 && hs.n_params == 100 && String::from_utf8_lossy(&csv).lines().count() == 3;
    let msg = format!(
        "min eigenvalue {min_l:.2e}, oracle deviation {oracle_dev:.1e}, density sum error {dsum:.1e}; \
         report: classical max {:.4} ({} positive), hybrid max {:.4} ({} positive)",
        report.classical.max_eigenvalue,
        report.classical.positive_count,
        report.hybrid.max_eigenvalue,
        report.hybrid.positive_count
    );
    check(
        min_l >= -FIM_PSD_TOL && oracle_dev <= FIM_ORACLE_TOL && have_density && dsum <= DENSITY_SUM_TOL && report_ok,
        msg.clone(),
        msg,
    )
}

fn vqe_bound() -> Outcome {
    let z = DMatrix::from_diagonal(&nalgebra::dvector![1.0, -1.0]);
    let id = DMatrix::<f64>::identity(2, 2);
    let h = z.kronecker(&id) + id.kronecker(&z);
    let ground = SymmetricEigen::new(h).eigenvalues.min();

    let circuit = product_ry(2).map_err(|e| e.to_string())?;
    let ham = Observable::weighted_sum(&[Observable::z(0), Observable::z(1)], &[1.0, 1.0]);
    let r = vqe_minimize(&circuit, &ham, &[0.3, -0.2], &VqeConfig::default()).map_err(|e| e.to_string())?;
    let last = *r.energies.last().unwrap();
    let lowest = r.energies.iter().copied().fold(f64::INFINITY, f64::min);
    let msg = format!(
        "energy {last:.6} vs oracle {ground:.6} after {} iterations, converged {}, lowest {lowest:.9}",
        r.energies.len() - 1,
        r.converged
    );
    check(r.converged && (last - ground).abs() < VQE_TOL && lowest >= ground - VQE_BOUND_TOL, msg.clone(), msg)
}

fn artifacts(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = tmp.path().join("small.json");
    std::fs::write(
        &config,
        r#"{"seed": 11, "dataset": {"n": 60}, "train": {"epochs": 3, "grid": 10},
            "gradcheck": {"circuits": 5, "max_qubits": 4, "max_params": 8},
            "narma": {"steps": 20, "epochs": 5},
            "fim": {"samples": 10, "max_params": 20, "bins": 10, "train_epochs": 1},
            "aao": {"steps": 2, "optimize_iters": 10}}"#,
    )
    .map_err(|e| e.to_string())?;
    let mut files = 0;
    for cmd in ["train", "gradcheck", "narma", "fim", "vqe", "aao-grow"] {
        let mut runs = Vec::new();
        for rep in 0..2 {
            for backend in ["analytic", "sampled"] {
                if cmd == "gradcheck" && backend == "sampled" {
                    continue;
                }
                let out = tmp.path().join(format!("{cmd}-{backend}-{rep}"));
                let status = Command::new(env!("CARGO_BIN_EXE_qpie"))
                    .args([cmd, "--config"])
                    .arg(&config)
                    .args(["--backend", backend, "--out"])
                    .arg(&out)
                    .output()
                    .map_err(|e| e.to_string())?;
                if !status.status.success() {
                    return Err(format!("{cmd} --backend {backend} failed: {}", String::from_utf8_lossy(&status.stderr)));
                }
                runs.push(artifacts(&out));
            }
        }
        let half = runs.len() / 2;
        for i in 0..half {
            if runs[i] != runs[i + half] || runs[i].is_empty() {
                return Err(format!("{cmd}: artifacts differ between runs"));
            }
            files += runs[i].len();
        }
    }
    Ok(format!("6 commands, {files} artifacts byte-identical across two runs"))
}

fn conditional_pool() -> Outcome {
    let pool = RotationPool::default();
    let mut mismatches = 0;
    for k in 0..=100 {
        let meas = k as f64 / 100.0;
        let expected = if meas < 1.0 / 3.0 {
            GateKind::RX
        } else if meas < 2.0 / 3.0 {
            GateKind::RY
        } else {
            GateKind::RZ
        };
        if evaluate_conditional(&pool, meas).map_err(|e| e.to_string())? != expected {
            mismatches += 1;
        }
    }

    // Ancilla 1 is the switch; a switched RY(pi) on qubit 0 flips it only
    // when the ancilla reads 1.
    let switch_z = |prep_one: bool, backend: &Backend| -> Result<f64, String> {
        let mut nodes: Vec<CircuitNode> = Vec::new();
        if prep_one {
            nodes.push(GateOp::x(1).into());
        }
        nodes.push(CircuitNode::MidMeasure { qubit: 1, register: 0 });
        nodes.push(CircuitNode::Conditional {
            register: 0,
            pool: RotationPool::new([[1, 0, 0], [0, 0, 1], [0, 1, 0]], 1.0 / 3.0, 2.0 / 3.0).unwrap(),
            target: 0,
            param: ParamSlot::Fixed(PI),
            switched: true,
        });
        let c = ParamCircuit::from_nodes(1, 1, nodes).map_err(|e| e.to_string())?;
        Ok(run(&c, &[], &[], backend, &[Observable::z(0)]).map_err(|e| e.to_string())?.expectations[0])
    };
    let mut worst = 0.0f64;
    for backend in [Backend::Analytic, Backend::Sampled { shots: None, seed: 3 }] {
        worst = worst.max((switch_z(true, &backend)? + 1.0).abs());
        worst = worst.max((switch_z(false, &backend)? - 1.0).abs());
    }
    let msg = format!("101 table rows, {mismatches} mismatches; switch semantics deviation {worst:.1e}");
    check(mismatches == 0 && worst <= POOL_TOL, msg.clone(), msg)
}

fn main() {
    let mut bench = None;
    let mut failed = 0;
    let mut report = |n: usize, name: &str, out: Outcome| {
        match out {
            Ok(m) => println!("PASS {n:>2} {name}: {m}"),
            Err(m) => {
                failed += 1;
                println!("FAIL {n:>2} {name}: {m}");
            }
        }
    };
    report(1, "gradient triple agreement", gradient_agreement());
    report(2, "parameter-shift exactness", psr_exactness());
    report(3, "adjoint cost scaling", adjoint_scaling());
    report(4, "moon and spiral benchmarks", benchmarks(&mut bench));
    report(5, "noise resilience", noise_resilience(&bench));
    report(6, "noise channel closed forms", channel_closed_forms());
    report(7, "NARMA harness", narma_harness());
    report(8, "Fisher information properties", fim_properties());
    report(9, "VQE variational bound", vqe_bound());
    report(10, "CLI determinism", determinism());
    report(11, "conditional pool", conditional_pool());
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
