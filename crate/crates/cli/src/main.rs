//! `condwalk`: run experiments from config files and write reports.

mod config;
mod experiments;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use condwalk::report::{CheckResult, Table};
use condwalk::{Environment, Error};

use config::{ConfigError, Kind, Resolved, Source};
use experiments::Outcome;

/// Format tag of `report.json`.
const REPORT_VERSION: &str = "condwalk-report-1";

#[derive(Parser)]
#[command(name = "condwalk", version, about = "Conditioned random walks among random conductances")]
struct Cli {
    /// Experiment config (TOML); defaults apply when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads. Results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory; also settable with CONDWALK_OUT.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the kind named in the config.
    Run,
    Simulate,
    Condition,
    VerifyMain,
    VerifyFdd,
    VerifyUclt,
    VerifyTightness,
    VerifyHeatkernel,
    VerifyLemmas,
    MeanderTable,
    SigmaEstimate,
    /// Write one table of an existing report as CSV.
    EmitPlotData {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        table: String,
    },
}

impl Command {
    fn kind(&self) -> Option<Kind> {
        Some(match self {
            Command::Simulate => Kind::Simulate,
            Command::Condition => Kind::Condition,
            Command::VerifyMain => Kind::VerifyMain,
            Command::VerifyFdd => Kind::VerifyFdd,
            Command::VerifyUclt => Kind::VerifyUclt,
            Command::VerifyTightness => Kind::VerifyTightness,
            Command::VerifyHeatkernel => Kind::VerifyHeatkernel,
            Command::VerifyLemmas => Kind::VerifyLemmas,
            Command::MeanderTable => Kind::MeanderTable,
            Command::SigmaEstimate => Kind::SigmaEstimate,
            Command::Run | Command::EmitPlotData { .. } => return None,
        })
    }
}

enum Failure {
    Config(String),
    Core(Error),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.0)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(e.into())
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Core(e) => match e {
                Error::InvalidEdge(_)
                | Error::InvalidParameter(_)
                | Error::Domain(_)
                | Error::SingularQuery(_)
                | Error::Unsupported(_)
                | Error::Manifest(_)
                | Error::NotFound(_)
                | Error::Io(_)
                | Error::Csv(_) => 2,
                // budgets, resources and numerical breakdowns: the run could
                // not be completed as configured
                _ => 3,
            },
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Config(m) => m.clone(),
            Failure::Core(e) => e.to_string(),
        }
    }
}

#[derive(Serialize)]
struct Report {
    artifact_version: String,
    kind: Kind,
    /// The resolved config; re-running it reproduces this report.
    config: Value,
    environment_sha256: String,
    pass: bool,
    checks: Vec<CheckResult>,
    result: Value,
    tables: BTreeMap<String, Table>,
    files: Vec<String>,
    wall_clock_s: f64,
}

/// Print a line; a closed stdout (say, piped into `head`) is not an error.
fn say(line: &str) {
    let _ = writeln!(std::io::stdout().lock(), "{line}");
}

fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

fn out_dir(cli: &Cli, from_config: Option<PathBuf>, kind: Kind) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| std::env::var_os("CONDWALK_OUT").map(PathBuf::from))
        .or(from_config)
        .unwrap_or_else(|| PathBuf::from("condwalk-out").join(kind.to_string()))
}

fn write_outputs(dir: &Path, report: &Report, config_toml: &str, extra: &[(String, Vec<u8>)]) -> Result<(), Failure> {
    fs::create_dir_all(dir)?;
    for (name, table) in &report.tables {
        table.write_csv(fs::File::create(dir.join(format!("{name}.csv")))?)?;
    }
    for (name, bytes) in extra {
        fs::write(dir.join(name), bytes)?;
    }
    fs::write(dir.join("config.toml"), config_toml)?;
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::Data(e.to_string()))?;
    fs::write(dir.join("report.json"), json + "\n")?;
    Ok(())
}

fn execute<P, F>(cli: &Cli, src: &Source, kind: Kind, run: F) -> Result<bool, Failure>
where
    P: DeserializeOwned + Serialize + Default,
    F: FnOnce(&Environment, &P, u64) -> condwalk::Result<Outcome>,
{
    let (resolved, rest): (Resolved<P>, _) = src.resolve(kind, cli.seed)?;
    let env = Environment::from_manifest(&resolved.environment)?;
    if let Some(w) = cli.workers.or(rest.workers) {
        if w == 0 {
            return Err(Failure::Config("workers must be at least 1".into()));
        }
        // fails only when a pool already exists, which is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(w).build_global();
    }
    let dir = out_dir(cli, rest.out.clone(), kind);

    let started = Instant::now();
    let outcome = run(&env, &resolved.params, resolved.seed)?;
    let wall_clock_s = started.elapsed().as_secs_f64();

    let mut files: Vec<String> = outcome.bundle.tables.keys().map(|n| format!("{n}.csv")).collect();
    files.extend(outcome.files.iter().map(|(n, _)| n.clone()));
    let report = Report {
        artifact_version: format!("{REPORT_VERSION} (condwalk {})", env!("CARGO_PKG_VERSION")),
        kind,
        config: serde_json::to_value(&resolved).map_err(|e| Error::Data(e.to_string()))?,
        environment_sha256: sha256_hex(&resolved.environment.to_toml()),
        pass: outcome.bundle.all_pass(),
        checks: outcome.bundle.checks,
        result: outcome.result,
        tables: outcome.bundle.tables,
        files,
        wall_clock_s,
    };
    write_outputs(&dir, &report, &resolved.to_toml(), &outcome.files)?;

    if !cli.quiet {
        for c in &report.checks {
            say(&c.summary_line());
        }
        say(&format!(
            "{kind}: {} in {wall_clock_s:.1}s, report at {}",
            if report.pass { "ok" } else { "checks failed" },
            dir.join("report.json").display()
        ));
    }
    Ok(report.pass)
}

/// The tables of a stored report. JSON has no NaN, so non-finite entries
/// come back as `null`.
#[derive(Deserialize)]
struct StoredTables {
    tables: BTreeMap<String, StoredTable>,
}

#[derive(Deserialize)]
struct StoredTable {
    columns: Vec<String>,
    rows: Vec<Vec<Option<f64>>>,
}

impl StoredTable {
    fn to_table(&self) -> Table {
        let mut t = Table::new(self.columns.iter().cloned());
        for r in &self.rows {
            t.push(r.iter().map(|v| v.unwrap_or(f64::NAN)).collect());
        }
        t
    }
}

fn emit_plot_data(cli: &Cli, report: &Path, table: &str) -> Result<bool, Failure> {
    let text = fs::read_to_string(report).map_err(|e| Failure::Config(format!("{}: {e}", report.display())))?;
    let parsed: StoredTables =
        serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: not a report: {e}", report.display())))?;
    let t = parsed.tables.get(table).map(StoredTable::to_table).ok_or_else(|| {
        let names: Vec<_> = parsed.tables.keys().map(String::as_str).collect();
        let listed = if names.is_empty() { "none".to_string() } else { names.join(", ") };
        Error::NotFound(format!("table {table:?} is not in the report; available: {listed}"))
    })?;
    let dir = cli
        .out
        .clone()
        .or_else(|| std::env::var_os("CONDWALK_OUT").map(PathBuf::from))
        .unwrap_or_else(|| report.parent().unwrap_or(Path::new(".")).to_path_buf());
    fs::create_dir_all(&dir)?;
    let path = dir.join(format!("{table}.csv"));
    t.write_csv(fs::File::create(&path)?)?;
    if !cli.quiet {
        say(&format!("wrote {}", path.display()));
    }
    Ok(true)
}

fn dispatch(cli: &Cli) -> Result<bool, Failure> {
    use experiments as x;
    if let Command::EmitPlotData { report, table } = &cli.command {
        return emit_plot_data(cli, report, table);
    }
    let src = Source::read(cli.config.as_deref())?;
    let kind = match cli.command.kind() {
        Some(k) => k,
        None => src
            .kind()?
            .ok_or_else(|| Failure::Config("`run` needs a config with a `kind` key".into()))?,
    };
    match kind {
        Kind::Simulate => execute(cli, &src, kind, x::simulate),
        Kind::Condition => execute(cli, &src, kind, x::condition),
        Kind::VerifyMain => execute(cli, &src, kind, x::verify_main),
        Kind::VerifyFdd => execute(cli, &src, kind, x::verify_fdd),
        Kind::VerifyUclt => execute(cli, &src, kind, x::verify_uclt),
        Kind::VerifyTightness => execute(cli, &src, kind, x::verify_tightness),
        Kind::VerifyHeatkernel => execute(cli, &src, kind, |env, p, _| x::verify_heatkernel(env, p)),
        Kind::VerifyLemmas => execute(cli, &src, kind, x::verify_lemmas),
        Kind::MeanderTable => execute(cli, &src, kind, |_, p, _| x::meander_table(p)),
        Kind::SigmaEstimate => execute(cli, &src, kind, x::sigma_estimate),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.exit_code())
        }
    }
}
