use std::path::Path;
use std::process::{Command, Output};

fn qpie(args: &[&str], config: Option<&str>, dir: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_qpie"));
    cmd.args(args).arg("--out").arg(dir.join("out"));
    if let Some(text) = config {
        let path = dir.join("config.json");
        std::fs::write(&path, text).unwrap();
        cmd.arg("--config").arg(path);
    }
    cmd.output().unwrap()
}

const SMALL_GRADCHECK: &str = r#"{"gradcheck": {"circuits": 3, "max_qubits": 3, "max_params": 5}}"#;

#[test]
fn gradcheck_passes_with_exit_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let out = qpie(&["gradcheck"], Some(SMALL_GRADCHECK), tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(tmp.path().join("out/gradcheck.csv")).unwrap();
    assert!(text.starts_with("# qpie gradcheck config_hash="));
    assert!(text.lines().nth(1).unwrap().starts_with("circuit,param,param_shift,adjoint"));
}

#[test]
fn corrupted_gradient_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = r#"{"gradcheck": {"circuits": 2, "max_qubits": 3, "max_params": 4, "corrupt": true}}"#;
    let out = qpie(&["gradcheck"], Some(cfg), tmp.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn adjoint_on_noisy_backend_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = qpie(&["gradcheck", "--backend", "noisy"], Some(SMALL_GRADCHECK), tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("adjoint"));
}

#[test]
fn unknown_config_field_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = qpie(&["vqe"], Some(r#"{"vqe": {"n_qbits": 2}}"#), tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn semantically_invalid_config_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = qpie(&["train"], Some(r#"{"model": {"tau1": 0.8, "tau2": 0.2}}"#), tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_subcommand_exits_two() {
    let out = Command::new(env!("CARGO_BIN_EXE_qpie")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn seed_flag_changes_header_and_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let a = qpie(&["vqe", "--seed", "1"], None, tmp.path());
    assert!(a.status.success());
    let first = std::fs::read_to_string(tmp.path().join("out/vqe_trace.csv")).unwrap();
    let b = qpie(&["vqe", "--seed", "2"], None, tmp.path());
    assert!(b.status.success());
    let second = std::fs::read_to_string(tmp.path().join("out/vqe_trace.csv")).unwrap();
    let h1 = first.lines().next().unwrap();
    let h2 = second.lines().next().unwrap();
    assert!(h1.ends_with("seed=1") && h2.ends_with("seed=2"));
    assert_ne!(h1, h2);
}

#[test]
fn fim_reads_train_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = r#"{"dataset": {"n": 40}, "train": {"epochs": 2, "grid": 0},
                  "fim": {"samples": 8, "max_params": 12, "bins": 5, "compare": false}}"#;
    let out = qpie(&["train"], Some(cfg), tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!tmp.path().join("out/grid.csv").exists());
    let ck = tmp.path().join("out/checkpoint.json");
    let with_ck = cfg.replace(r#""compare": false"#, &format!(r#""compare": false, "checkpoint": {ck:?}"#));
    let out = qpie(&["fim"], Some(&with_ck), tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let heat = std::fs::read_to_string(tmp.path().join("out/fim_hybrid_heatmap.csv")).unwrap();
    assert_eq!(heat.lines().filter(|l| !l.starts_with('#')).count(), 12);
}

#[test]
fn missing_checkpoint_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = qpie(&["fim"], Some(r#"{"fim": {"checkpoint": "/nonexistent/ck.json"}}"#), tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn guide_schema_block_matches_defaults() {
    let chapter = include_str!("../../../book/src/cli.md");
    let start = chapter.find("```json\n").unwrap() + "```json\n".len();
    let end = start + chapter[start..].find("```").unwrap();
    let documented = qpie_cli::config::ExperimentConfig::from_json(&chapter[start..end]).unwrap();
    assert_eq!(documented, qpie_cli::config::ExperimentConfig::default());
}
