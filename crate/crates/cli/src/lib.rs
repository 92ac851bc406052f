//! Command-line front end for qpie experiments.
//!
//! Every command reads an optional JSON [`config::ExperimentConfig`],
//! applies flag overrides, validates, and writes delimited-text artifacts
//! into the output directory. Each artifact starts with one line
//! `# qpie <command> config_hash=<hex> seed=<n>`.
//!
//! Exit codes: 0 success, 1 tolerance or runtime failure, 2 usage,
//! configuration or dispatch error.

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

pub mod commands;
pub mod config;

use config::{BackendKind, ExperimentConfig};

#[derive(Debug, Parser)]
#[command(name = "qpie", version, about = "Hybrid quantum-classical experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a hybrid classifier on a 2-D dataset.
    Train(Common),
    /// Compare parameter-shift, adjoint and finite-difference gradients.
    Gradcheck(Common),
    /// Train a regressor on the NARMA benchmark with decaying target noise.
    Narma(Common),
    /// Empirical Fisher information heatmap and spectrum.
    Fim(Common),
    /// Minimize a Z-string Hamiltonian with a product-RY ansatz.
    Vqe(Common),
    /// Grow a circuit gate by gate with the angle-adaptive rule.
    AaoGrow(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// JSON experiment configuration; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configuration seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configuration backend kind.
    #[arg(long, value_enum)]
    backend: Option<BackendKind>,
    /// Output directory for artifacts.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unreadable or invalid configuration, unsupported method.
    Usage(String),
    /// A tolerance check failed.
    Check(String),
    /// Any other error raised by the library or the file system.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Check(_) | CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Check(m) => write!(f, "check failed: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<qpie::Error> for CliError {
    fn from(e: qpie::Error) -> Self {
        match e {
            qpie::Error::Dispatch { .. } => CliError::Usage(e.to_string()),
            e => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

/// A validated configuration plus where and how to write artifacts.
pub struct Context {
    pub command: &'static str,
    pub config: ExperimentConfig,
    pub out: PathBuf,
    pub header: String,
}

impl Context {
    /// Writes `name` into the output directory, header line first.
    pub fn write(&self, name: &str, body: impl FnOnce(&mut Vec<u8>) -> Result<(), CliError>) -> Result<(), CliError> {
        let mut buf = format!("# {}\n", self.header).into_bytes();
        body(&mut buf)?;
        std::fs::write(self.out.join(name), buf)?;
        Ok(())
    }
}

/// First 16 hex digits of the SHA-256 of the canonical config JSON.
pub fn config_hash(config: &ExperimentConfig) -> String {
    let json = serde_json::to_string(config).expect("config serializes");
    hex::encode(Sha256::digest(json.as_bytes()))[..16].to_string()
}

fn resolve(command: &'static str, common: &Common) -> Result<Context, CliError> {
    let mut config = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
            ExperimentConfig::from_json(&text).map_err(CliError::Usage)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(kind) = common.backend {
        config.backend.kind = kind;
    }
    config.validate().map_err(CliError::Usage)?;
    std::fs::create_dir_all(&common.out)?;
    let header = format!("qpie {command} config_hash={} seed={}", config_hash(&config), config.seed);
    Ok(Context { command, config, out: common.out.clone(), header })
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let (name, common): (&'static str, &Common) = match &cli.command {
        Command::Train(c) => ("train", c),
        Command::Gradcheck(c) => ("gradcheck", c),
        Command::Narma(c) => ("narma", c),
        Command::Fim(c) => ("fim", c),
        Command::Vqe(c) => ("vqe", c),
        Command::AaoGrow(c) => ("aao-grow", c),
    };
    let result = resolve(name, common).and_then(|ctx| match &cli.command {
        Command::Train(_) => commands::train(&ctx),
        Command::Gradcheck(_) => commands::gradcheck(&ctx),
        Command::Narma(_) => commands::narma(&ctx),
        Command::Fim(_) => commands::fim(&ctx),
        Command::Vqe(_) => commands::vqe(&ctx),
        Command::AaoGrow(_) => commands::aao_grow(&ctx),
    });
    match result {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("qpie {name}: {e}");
            e.exit_code()
        }
    }
}
