//! `swapkd`: run scenario evaluations, sweeps, optimisations and the
//! decoy comparison, writing CSV tables plus a JSON run manifest.

mod commands;
mod config;
mod figures;
mod table;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use config::{parse_axis, CommandKind, ConstraintParams, RunConfig};

pub const MANIFEST_SCHEMA: &str = "swapkd-manifest/1";
const THREADS_ENV: &str = "SWAPKD_THREADS";

#[derive(Debug)]
pub enum CliError {
    Invalid(String),
    Numerical { error: swapkd::Error, point: Option<Value> },
    Io(String),
}

impl CliError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        CliError::Invalid(msg.into())
    }

    pub fn numerical(error: swapkd::Error, point: Option<Value>) -> Self {
        match error {
            swapkd::Error::InvalidArgument(_) | swapkd::Error::ConstraintViolation { .. } => {
                CliError::Invalid(error.to_string())
            }
            error => CliError::Numerical { error, point },
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Invalid(_) => 2,
            CliError::Numerical { .. } => 3,
        }
    }

    fn to_json(&self) -> Value {
        match self {
            CliError::Invalid(msg) => json!({ "error": "invalid-input", "exit_code": 2, "message": msg }),
            CliError::Io(msg) => json!({ "error": "io", "exit_code": 1, "message": msg }),
            CliError::Numerical { error, point } => json!({
                "error": error.kind(),
                "exit_code": 3,
                "message": error.to_string(),
                "point": point,
            }),
        }
    }
}

impl From<swapkd::Error> for CliError {
    fn from(e: swapkd::Error) -> Self {
        CliError::numerical(e, None)
    }
}

#[derive(Debug, Clone)]
struct Axis(Vec<f64>);

fn axis(text: &str) -> Result<Axis, String> {
    parse_axis(text).map(Axis)
}

#[derive(Parser)]
#[command(
    name = "swapkd",
    version,
    about = "Entanglement-swapping QKD key rates with PDC sources and threshold detectors",
    after_help = "Axes (--alpha-d, --chi, --eta0, --mu) accept `v`, `v1,v2,…`, `lo:hi:step`, `log:lo:hi:n` or `lin:lo:hi:n`."
)]
struct Cli {
    /// Worker threads (default: $SWAPKD_THREADS, else all cores)
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Directory for CSV tables and the manifest
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Evaluate one scenario
    Evaluate(ParamArgs),
    /// Evaluate every point of an alpha_d × eta0 × chi grid
    Sweep(ParamArgs),
    /// Optimal brightness (and efficiency, under the constraint) per loss
    Optimize(ParamArgs),
    /// Swapping and decoy-BB84 key rates side by side
    CompareDecoy(ParamArgs),
    /// Loss at which decoy-BB84 falls below swapping, and both ranges
    Crossover(ParamArgs),
    /// Data for one figure family (fig3 … fig8)
    Figure {
        id: String,
        #[arg(long)]
        variant: Option<String>,
        #[command(flatten)]
        params: ParamArgs,
    },
    /// Re-run the command recorded in a manifest
    Replay { manifest: PathBuf },
}

#[derive(Args, Default)]
struct ParamArgs {
    /// JSON config; flags override its fields
    #[arg(long)]
    config: Option<PathBuf>,
    /// Total loss αd in dB
    #[arg(long = "alpha-d", visible_alias = "alpha-d-grid", value_parser = axis, allow_hyphen_values = true)]
    alpha_d: Option<Axis>,
    /// Source brightness χ
    #[arg(long, visible_alias = "chi-grid", value_parser = axis)]
    chi: Option<Axis>,
    /// Detector efficiency η₀
    #[arg(long, visible_alias = "eta0-grid", value_parser = axis)]
    eta0: Option<Axis>,
    /// Fixed dark-count probability per detector and pulse
    #[arg(long)]
    pdc: Option<f64>,
    /// Tie dark counts to efficiency: p_dc = A·exp(B·η₀)
    #[arg(long)]
    constraint: bool,
    /// Constraint prefactor A (default 6.1e-7); implies --constraint
    #[arg(long, value_name = "A")]
    constraint_a: Option<f64>,
    /// Constraint exponent B (default 17); implies --constraint
    #[arg(long, value_name = "B")]
    constraint_b: Option<f64>,
    /// Error-correction inefficiency
    #[arg(long)]
    kappa: Option<f64>,
    /// Initial photon-number cutoff per mode
    #[arg(long)]
    n_max: Option<usize>,
    /// Truncation convergence tolerance on QBER and V
    #[arg(long)]
    tol: Option<f64>,
    /// Decoy signal intensity (default: optimised per loss)
    #[arg(long, value_parser = axis)]
    mu: Option<Axis>,
    /// Decoy intensity
    #[arg(long)]
    nu: Option<f64>,
    /// Dark-counting detectors in the decoy background yield
    #[arg(long)]
    background_detectors: Option<u32>,
    /// Coarse loss step for range and crossover scans, dB
    #[arg(long)]
    step: Option<f64>,
    /// Bisection tolerance for range and crossover, dB
    #[arg(long)]
    bisection_tol: Option<f64>,
}

impl ParamArgs {
    fn to_config(&self) -> Result<RunConfig, CliError> {
        let mut base = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let constraint = if self.constraint || self.constraint_a.is_some() || self.constraint_b.is_some() {
            let d = swapkd::detectors::DetectorConstraint::default();
            Some(ConstraintParams {
                a: self.constraint_a.unwrap_or(d.a),
                b: self.constraint_b.unwrap_or(d.b),
            })
        } else {
            None
        };
        let flags = RunConfig {
            alpha_d_db: self.alpha_d.clone().map(|a| a.0),
            chi: self.chi.clone().map(|a| a.0),
            eta0: self.eta0.clone().map(|a| a.0),
            p_dc: self.pdc,
            constraint,
            kappa: self.kappa,
            n_max: self.n_max,
            convergence_tol: self.tol,
            mu: self.mu.clone().map(|a| a.0),
            nu: self.nu,
            background_detectors: self.background_detectors,
            alpha_d_step: self.step,
            bisection_tol: self.bisection_tol,
        };
        // a dark-count flag replaces whichever mode the file chose
        if flags.p_dc.is_some() || flags.constraint.is_some() {
            base.p_dc = None;
            base.constraint = None;
        }
        let merged = base.overridden_by(flags);
        merged.dark_counts()?;
        Ok(merged)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    schema: String,
    tool_version: String,
    command: CommandKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    figure: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    variant: Option<String>,
    config: RunConfig,
    threads: usize,
    wall_time_s: f64,
    outputs: Vec<String>,
    summary: Value,
    diagnostics: Vec<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<Value>,
}

struct Job {
    command: CommandKind,
    figure: Option<String>,
    variant: Option<String>,
    config: RunConfig,
}

impl Job {
    fn stem(&self) -> String {
        match (&self.figure, &self.variant) {
            (Some(f), Some(v)) => format!("{f}{v}"),
            (Some(f), None) => f.clone(),
            _ => self.command.name().to_string(),
        }
    }
}

fn job(cmd: &Cmd) -> Result<Job, CliError> {
    let plain = |command, p: &ParamArgs| -> Result<Job, CliError> {
        Ok(Job {
            command,
            figure: None,
            variant: None,
            config: p.to_config()?,
        })
    };
    match cmd {
        Cmd::Evaluate(p) => plain(CommandKind::Evaluate, p),
        Cmd::Sweep(p) => plain(CommandKind::Sweep, p),
        Cmd::Optimize(p) => plain(CommandKind::Optimize, p),
        Cmd::CompareDecoy(p) => plain(CommandKind::CompareDecoy, p),
        Cmd::Crossover(p) => plain(CommandKind::Crossover, p),
        Cmd::Figure { id, variant, params } => {
            figures::variants(id)?;
            Ok(Job {
                command: CommandKind::Figure,
                figure: Some(id.clone()),
                variant: variant.clone(),
                config: params.to_config()?,
            })
        }
        Cmd::Replay { manifest } => {
            let text = std::fs::read_to_string(manifest)
                .map_err(|e| CliError::invalid(format!("cannot read manifest {}: {e}", manifest.display())))?;
            let m: Manifest = serde_json::from_str(&text)
                .map_err(|e| CliError::invalid(format!("manifest {}: {e}", manifest.display())))?;
            if m.schema != MANIFEST_SCHEMA {
                return Err(CliError::invalid(format!("unsupported manifest schema {:?}", m.schema)));
            }
            m.config.dark_counts()?;
            Ok(Job {
                command: m.command,
                figure: m.figure,
                variant: m.variant,
                config: m.config,
            })
        }
    }
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    let n = match (flag, std::env::var(THREADS_ENV)) {
        (Some(n), _) => Some(n),
        (None, Ok(v)) => Some(
            v.trim()
                .parse::<usize>()
                .map_err(|_| CliError::invalid(format!("{THREADS_ENV}={v:?} is not a thread count")))?,
        ),
        (None, Err(_)) => None,
    };
    if n == Some(0) {
        return Err(CliError::invalid("thread count must be at least 1"));
    }
    Ok(n)
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn execute(cli: &Cli) -> Result<Value, CliError> {
    let job = job(&cli.command)?;
    let threads = thread_count(cli.threads)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| CliError::Io(format!("thread pool: {e}")))?;
    let started = Instant::now();
    let output = pool.install(|| match &job.figure {
        Some(id) => figures::emit(id, job.variant.as_deref(), &job.config),
        None => commands::run(job.command, &job.config),
    })?;
    std::fs::create_dir_all(&cli.out_dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", cli.out_dir.display())))?;
    for (name, csv) in &output.files {
        write(&cli.out_dir.join(name), csv)?;
    }
    let manifest = Manifest {
        schema: MANIFEST_SCHEMA.into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        command: job.command,
        figure: job.figure.clone(),
        variant: job.variant.clone(),
        config: job.config.clone(),
        threads: pool.current_num_threads(),
        wall_time_s: started.elapsed().as_secs_f64(),
        outputs: output.files.iter().map(|(n, _)| n.clone()).collect(),
        summary: output.summary,
        diagnostics: output.diagnostics,
        error: output.failure.as_ref().map(CliError::to_json),
    };
    let manifest_path = cli.out_dir.join(format!("{}_manifest.json", job.stem()));
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    write(&manifest_path, &(text + "\n"))?;
    if let Some(failure) = output.failure {
        return Err(failure);
    }
    Ok(json!({ "manifest": manifest_path, "outputs": manifest.outputs, "summary": manifest.summary }))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(report) => {
            println!("{}", serde_json::to_string_pretty(&report).expect("report serialises"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code())
        }
    }
}
