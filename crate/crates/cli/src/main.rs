//! `pafd`: run simulations, load sweeps and queue-manager trace replays.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use pafd::engine::{run, sweep, Combo, SimConfig};
use pafd::metrics::write_csv;
use pafd::npdataplane::{parse_trace, replay};

/// Exit statuses.
const EXIT_IO: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_INVARIANT: u8 = 3;

#[derive(Parser)]
#[command(name = "pafd", version, about = "Shared-buffer queue management simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its report.
    Run {
        config: PathBuf,
        /// Overrides the config seed. Falls back to PAFD_SEED, then the config.
        #[arg(long, env = "PAFD_SEED")]
        seed: Option<u64>,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Run every (combo, load) cell and write one CSV row per cell.
    Sweep {
        config: PathBuf,
        /// Offered loads relative to the link rate.
        #[arg(long, value_delimiter = ',', default_value = "0.2,0.6,1.0,1.4,1.8")]
        loads: Vec<f64>,
        /// `all` or a comma list such as `PAFD-BCF,TD-LQF`.
        #[arg(long, default_value = "all")]
        combos: String,
        #[arg(long, env = "PAFD_SEED")]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replay a queue-manager trace and print the transition messages.
    Nptrace { trace: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::new(EXIT_IO, format!("cannot read {}: {e}", path.display())))
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<SimConfig, Failure> {
    let text = read(path)?;
    let mut cfg = SimConfig::from_json(&text)
        .map_err(|e| Failure::new(EXIT_INVALID, format!("{}: {e}", path.display())))?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn emit(out: Option<&Path>, body: &[u8]) -> CmdResult {
    let result = match out {
        Some(path) => fs::write(path, body),
        None => io::stdout().write_all(body),
    };
    result.map_err(|e| {
        let target = out.map_or("stdout".to_string(), |p| p.display().to_string());
        Failure::new(EXIT_IO, format!("cannot write {target}: {e}"))
    })
}

fn cmd_run(config: &Path, seed: Option<u64>, out: Option<&Path>, format: Format) -> CmdResult {
    let cfg = load_config(config, seed)?;
    let report = run(&cfg).map_err(|e| Failure::new(EXIT_INVALID, e.to_string()))?;
    let body = match format {
        Format::Csv => {
            let mut buf = Vec::new();
            write_csv(std::slice::from_ref(&report), &mut buf)
                .map_err(|e| Failure::new(EXIT_IO, e.to_string()))?;
            buf
        }
        Format::Json => {
            let mut s = serde_json::to_string_pretty(&report).expect("reports serialize");
            s.push('\n');
            s.into_bytes()
        }
    };
    emit(out, &body)
}

fn parse_combos(spec: &str) -> Result<Vec<Combo>, Failure> {
    if spec.trim().eq_ignore_ascii_case("all") {
        return Ok(Combo::paper_six());
    }
    spec.split(',')
        .map(|s| {
            s.trim()
                .parse::<Combo>()
                .map_err(|e| Failure::new(EXIT_INVALID, format!("invalid combos: {e}")))
        })
        .collect()
}

fn cmd_sweep(config: &Path, loads: &[f64], combos: &str, seed: Option<u64>, out: Option<&Path>) -> CmdResult {
    let cfg = load_config(config, seed)?;
    let combos = parse_combos(combos)?;
    if let Some(bad) = loads.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
        return Err(Failure::new(EXIT_INVALID, format!("invalid loads: {bad} is not positive")));
    }
    let mut reports = Vec::new();
    for cell in sweep(&cfg, loads, &combos) {
        let report = cell.result.map_err(|e| {
            Failure::new(EXIT_INVALID, format!("cell {} at load {}: {e}", cell.combo, cell.load))
        })?;
        reports.push(report);
    }
    let mut buf = Vec::new();
    write_csv(&reports, &mut buf).map_err(|e| Failure::new(EXIT_IO, e.to_string()))?;
    emit(out, &buf)
}

fn cmd_nptrace(trace: &Path) -> CmdResult {
    let text = read(trace)?;
    let ops = parse_trace(&text).map_err(|e| Failure::new(EXIT_IO, format!("{}: {e}", trace.display())))?;
    let messages = replay(&ops).map_err(|e| Failure::new(EXIT_INVARIANT, format!("invariant violated: {e}")))?;
    let mut body = String::new();
    for m in messages {
        body.push_str(&m.to_string());
        body.push('\n');
    }
    emit(None, body.as_bytes())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run {
            config,
            seed,
            out,
            format,
        } => cmd_run(config, *seed, out.as_deref(), *format),
        Command::Sweep {
            config,
            loads,
            combos,
            seed,
            out,
        } => cmd_sweep(config, loads, combos, *seed, out.as_deref()),
        Command::Nptrace { trace } => cmd_nptrace(trace),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("pafd: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
