//! The `meshpsn` command line: `simulate`, `smc` and `check`.
//!
//! Exit codes: 0 ok, 1 property violated, 2 configuration or usage error,
//! 3 engine fault, 4 inconclusive.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use meshpsn::config::NocConfig;
use meshpsn::engine::{run_rng, CycleRecord};
use meshpsn::explorer::{explore, ExploreOptions, Property, Verdict};
use meshpsn::smc::{estimate_cdf, PsnQuery, SmcSettings};
use meshpsn::{step_cycle, ConfigError, EngineConfig, EngineFault, NocState, NoiseKind, PsnScope, SmcError};
use serde::Serialize;
use thiserror::Error;

mod grid;

pub use grid::parse_grid;

pub const EXIT_OK: u8 = 0;
pub const EXIT_VIOLATED: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_FAULT: u8 = 3;
pub const EXIT_INCONCLUSIVE: u8 = 4;

/// Environment variable naming the default configuration file.
pub const CONFIG_ENV: &str = "MESHPSN_CONFIG";

#[derive(Debug, Parser)]
#[command(
    name = "meshpsn",
    version,
    about = "Mesh NoC simulator, PSN estimator and property checker"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one seeded simulation and write a per-cycle trace.
    Simulate(SimulateArgs),
    /// Estimate PSN first-hit CDFs by Monte-Carlo simulation.
    Smc(SmcArgs),
    /// Exhaustively explore the state space and check properties.
    Check(CheckArgs),
}

/// Configuration file plus per-field overrides.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML configuration file; built-in defaults when absent.
    #[arg(long, short = 'c', env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    /// Mesh side length.
    #[arg(long = "mesh")]
    pub n: Option<usize>,
    #[arg(long)]
    pub buffer_size: Option<usize>,
    #[arg(long)]
    pub activity_thresh: Option<u8>,
    /// Traffic policy name (disabled, periodic, bursty, fixed).
    #[arg(long)]
    pub traffic: Option<String>,
    /// Periodic traffic on-window length.
    #[arg(long)]
    pub duty_on: Option<u64>,
    /// Periodic traffic period.
    #[arg(long)]
    pub period: Option<u64>,
    /// PSN counter scope: global, router:<id> or class:<name>.
    #[arg(long)]
    pub scope: Option<PsnScope>,
}

impl ConfigArgs {
    /// Loads the file (if any) and applies the flag overrides.
    pub fn resolve(&self) -> Result<NocConfig, ConfigError> {
        let mut cfg = match &self.config {
            Some(path) => NocConfig::from_path(path)?,
            None => NocConfig::default(),
        };
        if let Some(n) = self.n {
            cfg.n = n;
        }
        if let Some(b) = self.buffer_size {
            cfg.buffer_size = b;
        }
        if let Some(t) = self.activity_thresh {
            cfg.activity_thresh = t;
        }
        if let Some(t) = &self.traffic {
            cfg.traffic = t.clone();
        }
        if let Some(d) = self.duty_on {
            cfg.periodic.duty_on = d;
        }
        if let Some(p) = self.period {
            cfg.periodic.period = p;
        }
        if let Some(s) = self.scope {
            cfg.psn_scope = s;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, default_value_t = 100)]
    pub cycles: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Trace destination; stdout when absent.
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SmcArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Noise kinds to estimate.
    #[arg(long, value_delimiter = ',', default_values = ["resistive", "inductive"])]
    pub kind: Vec<NoiseKind>,
    /// Counter thresholds.
    #[arg(short = 'K', long = "thresholds", value_delimiter = ',', default_values_t = [1u64, 3, 10])]
    pub k: Vec<u64>,
    /// Horizon grid, e.g. `0..=100`, `0..100:10` or `5,10,20`.
    #[arg(short = 'N', long = "horizons", default_value = "0..=100:10", value_parser = grid_arg)]
    pub horizons: Grid,
    #[arg(long, default_value_t = 1000)]
    pub runs: u64,
    #[arg(long, default_value_t = 0.95)]
    pub confidence: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; the output does not depend on it.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// A sorted, deduplicated list of horizons.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grid(pub Vec<u64>);

fn grid_arg(text: &str) -> Result<Grid, String> {
    parse_grid(text).map(Grid)
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Properties to check; all when absent.
    #[arg(long, value_delimiter = ',')]
    pub properties: Vec<Property>,
    #[arg(long, default_value_t = 20_000_000)]
    pub max_states: usize,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error("{fault}")]
    Fault { fault: EngineFault },

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Fault { .. } => EXIT_FAULT,
            CliError::Io(_) => EXIT_CONFIG,
        }
    }
}

impl From<EngineFault> for CliError {
    fn from(fault: EngineFault) -> Self {
        CliError::Fault { fault }
    }
}

impl From<SmcError> for CliError {
    fn from(e: SmcError) -> Self {
        match e {
            SmcError::Config(c) => CliError::Config(c),
            SmcError::Engine(fault) => CliError::Fault { fault },
            SmcError::Mismatch(m) => CliError::Config(ConfigError::Parse(m)),
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{}", e.render());
                return EXIT_CONFIG;
            }
            let _ = write!(out, "{}", e.render());
            return EXIT_OK;
        }
    };
    let result = match &cli.command {
        Command::Simulate(a) => simulate(a, out, err),
        Command::Smc(a) => smc(a, out),
        Command::Check(a) => check(a, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "meshpsn: {e}");
            e.exit_code()
        }
    }
}

fn open_output<'a>(path: &Option<PathBuf>, stdout: &'a mut dyn Write) -> Result<Box<dyn Write + 'a>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(stdout),
    })
}

#[derive(Serialize)]
struct Tagged<'a, T: Serialize> {
    record: &'static str,
    #[serde(flatten)]
    body: &'a T,
}

fn emit<T: Serialize>(w: &mut dyn Write, record: &'static str, body: &T) -> Result<(), CliError> {
    serde_json::to_writer(&mut *w, &Tagged { record, body }).map_err(io::Error::from)?;
    writeln!(w)?;
    Ok(())
}

#[derive(Serialize)]
struct Header<'a> {
    command: &'a str,
    config_digest: String,
    seed: Option<u64>,
    config: &'a NocConfig,
}

/// End-of-run totals for `simulate`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct Summary {
    pub cycles: u64,
    pub injected: u64,
    pub consumed: u64,
    pub in_flight: u64,
    pub resistive: u64,
    pub inductive: u64,
    pub conserved: bool,
}

impl Summary {
    fn of(cycles: u64, state: &NocState) -> Summary {
        Summary {
            cycles,
            injected: state.flow.injected,
            consumed: state.flow.consumed,
            in_flight: state.in_flight() as u64,
            resistive: state.psn.global.resistive,
            inductive: state.psn.global.inductive,
            conserved: state.conserves_flits(),
        }
    }
}

fn simulate(a: &SimulateArgs, stdout: &mut dyn Write, err: &mut dyn Write) -> Result<u8, CliError> {
    let noc = a.config.resolve()?;
    let cfg = noc.build()?;
    let header = Header {
        command: "simulate",
        config_digest: noc.digest(),
        seed: Some(a.seed),
        config: &noc,
    };
    let to_file = a.trace_out.is_some();
    let mut summary_sink: Vec<u8> = Vec::new();
    let summary = {
        let mut w = open_output(&a.trace_out, stdout)?;
        emit(&mut *w, "header", &header)?;
        let mut state = cfg.initial_state();
        let mut rng = run_rng(a.seed, 0);
        for _ in 0..a.cycles {
            match step_cycle(&mut state, &cfg, &mut rng) {
                Ok(ev) => emit(&mut *w, "cycle", &CycleRecord::new(ev, &state))?,
                Err(fault) => {
                    emit(&mut *w, "fault", &fault_record(&fault))?;
                    w.flush()?;
                    let _ = writeln!(err, "meshpsn: trace written up to cycle {}", fault.cycle);
                    return Err(fault.into());
                }
            }
        }
        let summary = Summary::of(a.cycles, &state);
        emit(&mut *w, "summary", &summary)?;
        w.flush()?;
        summary
    };
    if to_file {
        emit(&mut summary_sink, "summary", &summary)?;
        stdout.write_all(&summary_sink)?;
    }
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct FaultRecord {
    cycle: u64,
    phase: String,
    router: Option<usize>,
    port: Option<String>,
    message: String,
}

fn fault_record(f: &EngineFault) -> FaultRecord {
    FaultRecord {
        cycle: f.cycle,
        phase: format!("{:?}", f.phase),
        router: f.router,
        port: f.port.map(|d| format!("{d:?}")),
        message: f.message.clone(),
    }
}

fn smc(a: &SmcArgs, stdout: &mut dyn Write) -> Result<u8, CliError> {
    let noc = a.config.resolve()?;
    let cfg = noc.build()?;
    let query = PsnQuery::new(a.kind.clone(), a.k.clone(), a.horizons.0.clone(), noc.psn_scope)?;
    let settings = SmcSettings {
        runs: a.runs,
        confidence: a.confidence,
        seed: a.seed,
        jobs: a.jobs,
    };
    let table = estimate_cdf(&cfg, &query, settings)?.with_digest(noc.digest());
    let mut w = open_output(&a.out, stdout)?;
    table.write_csv(&mut *w)?;
    w.flush()?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct VerdictRecord<'a> {
    property: &'a str,
    verdict: &'static str,
    detail: Option<&'a str>,
    counterexample_cycles: Option<usize>,
}

#[derive(Serialize)]
struct CheckSummary {
    states: usize,
    transitions: u64,
    complete: bool,
    fault: Option<FaultRecord>,
}

fn check(a: &CheckArgs, stdout: &mut dyn Write) -> Result<u8, CliError> {
    let noc = a.config.resolve()?;
    let cfg: EngineConfig = noc.build()?;
    let properties = if a.properties.is_empty() {
        Property::ALL.to_vec()
    } else {
        a.properties.clone()
    };
    let options = ExploreOptions {
        max_states: a.max_states,
        jobs: a.jobs,
        ..Default::default()
    };
    let graph = match explore(&cfg, options) {
        Ok(g) => g,
        Err(meshpsn::ExploreError::Config(c)) => return Err(c.into()),
        Err(meshpsn::ExploreError::Engine(f)) => return Err(f.into()),
        Err(e) => return Err(ConfigError::Parse(e.to_string()).into()),
    };
    let w = stdout;
    emit(
        w,
        "header",
        &Header {
            command: "check",
            config_digest: noc.digest(),
            seed: None,
            config: &noc,
        },
    )?;
    let (mut violated, mut inconclusive) = (false, false);
    for p in properties {
        let verdict = match graph.check(p) {
            Ok(v) => v,
            Err(e) => Verdict::Inconclusive {
                states: graph.state_count(),
                reason: e.to_string(),
            },
        };
        let name = p.name();
        match &verdict {
            Verdict::Holds => emit(
                w,
                "verdict",
                &VerdictRecord {
                    property: name,
                    verdict: "holds",
                    detail: None,
                    counterexample_cycles: None,
                },
            )?,
            Verdict::Violated { detail, path } => {
                violated = true;
                emit(
                    w,
                    "verdict",
                    &VerdictRecord {
                        property: name,
                        verdict: "violated",
                        detail: Some(detail),
                        counterexample_cycles: path.as_ref().map(|p| p.len()),
                    },
                )?;
                for rec in path.iter().flat_map(|p| &p.trace.records) {
                    emit(w, "cycle", rec)?;
                }
            }
            Verdict::Inconclusive { reason, .. } => {
                inconclusive = true;
                emit(
                    w,
                    "verdict",
                    &VerdictRecord {
                        property: name,
                        verdict: "inconclusive",
                        detail: Some(reason),
                        counterexample_cycles: None,
                    },
                )?;
            }
        }
    }
    emit(
        w,
        "summary",
        &CheckSummary {
            states: graph.state_count(),
            transitions: graph.transition_count(),
            complete: graph.is_complete(),
            fault: graph.fault().map(fault_record),
        },
    )?;
    Ok(if violated {
        EXIT_VIOLATED
    } else if graph.fault().is_some() {
        EXIT_FAULT
    } else if inconclusive {
        EXIT_INCONCLUSIVE
    } else {
        EXIT_OK
    })
}
