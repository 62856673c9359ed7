//! Command-line front end: `run`, `netbench` and `report`.
//!
//! Every flag can also come from a JSON object passed with `--config`;
//! keys are flag names (`"out": "results"`, `"rates": [10, 60]`, `"no_loss":
//! true`) plus an optional `"command"`. Flags given on the command line win.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::metrics::{netbench, write_cdf_csv, write_distributions, Backend, MetricsSummary, NetbenchConfig, NetbenchResult};
use crate::runtime::{load_trace_dir, run_experiment, run_wallclock_experiment, EpisodeTrace, ExperimentPlan, ModeVariant, WallClockOptions};
use crate::transport::TransportPreset;
use crate::{Error, Result};

/// Overrides the seed of `run` plans and `netbench` sweeps.
pub const SEED_ENV: &str = "SWARM_MESH_SEED";
pub const SUMMARY_SCHEMA: u32 = 1;

const COMMANDS: [&str; 3] = ["run", "netbench", "report"];

#[derive(Debug, Parser)]
#[command(name = "swarm-mesh", version, about = "Run, benchmark and evaluate decentralized GNN swarm policies")]
pub struct Cli {
    /// JSON file supplying any of the flags below.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// More logging (-v info, -vv debug). RUST_LOG takes precedence.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Execute an experiment plan and write one trace per episode.
    Run(RunArgs),
    /// Measure one-way delivery delay across transport presets and rates.
    Netbench(NetbenchArgs),
    /// Summarize trace directories into JSON and plot-ready CSV files.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Clock {
    /// Deterministic discrete-event schedule.
    Virtual,
    /// Real time over UDP, one thread per agent.
    Wall,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, value_name = "FILE")]
    pub plan: PathBuf,
    /// `<mode>` or `<mode>:<preset name or file>`; overrides the plan.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value = "virtual")]
    pub clock: Clock,
    /// Give agents seeded clock phases (virtual clock).
    #[arg(long)]
    pub unaligned: bool,
}

#[derive(Debug, Args)]
pub struct NetbenchArgs {
    #[arg(long, default_value_t = 5)]
    pub nodes: usize,
    /// Aggregate message rates, msg/s.
    #[arg(long, value_delimiter = ',', required = true)]
    pub rates: Vec<f64>,
    /// Transport presets (name or file) or execution modes, whose default
    /// preset is used.
    #[arg(long, value_delimiter = ',', required = true)]
    pub mode: Vec<String>,
    #[arg(long, default_value = "emu")]
    pub backend: String,
    /// Seconds per (preset, rate) cell.
    #[arg(long, default_value_t = 10.0)]
    pub duration: f64,
    /// Exact messages per cell, instead of a duration.
    #[arg(long)]
    pub messages: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// UDP backend: do not inject the preset's loss.
    #[arg(long)]
    pub no_loss: bool,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long, value_name = "DIR")]
    pub traces: PathBuf,
    /// Second trace directory summarized alongside the first.
    #[arg(long, value_name = "DIR")]
    pub compare: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long)]
    pub compare_label: Option<String>,
}

/// What `summary.json` holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryFile {
    pub schema: u32,
    pub sets: Vec<MetricsSummary>,
}

/// Process exit code for an error: 2 validation or parse, 3 I/O, 1 transport.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => 3,
        Error::Transport(_) => 1,
        Error::Shape { .. } | Error::Validation(_) | Error::Parse { .. } | Error::NonFinite(_) => 2,
    }
}

/// Parses `args` (including the program name), runs the command and maps
/// the outcome to an exit code.
pub fn main_with_args(args: Vec<OsString>) -> ExitCode {
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code(&e));
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    init_logging(cli.verbose);
    match execute(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
}

pub fn execute(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Run(a) => run(a),
        Command::Netbench(a) => bench(a),
        Command::Report(a) => report(a),
    }
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::validation(format!("{SEED_ENV} must be an unsigned integer, got '{v}'"))),
        Err(_) => Ok(None),
    }
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v).map_err(|e| Error::validation(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn run(a: &RunArgs) -> Result<()> {
    let mut plan = ExperimentPlan::load(&a.plan)?;
    if let Some(m) = &a.mode {
        plan.mode = m.clone();
    }
    if let Some(seed) = a.seed.or(env_seed()?) {
        plan.seed = seed;
    }
    if a.unaligned {
        plan.aligned = false;
    }
    let mode = plan.mode_config()?;
    let traces = match a.clock {
        Clock::Virtual => run_experiment(&plan, Some(&a.out))?.traces,
        Clock::Wall => {
            let spec = plan.scenario_spec()?;
            let opts = WallClockOptions::for_mode(&mode, spec.n, spec.world.dt, plan.seed);
            run_wallclock_experiment(&plan, &opts, Some(&a.out))?.traces
        }
    };
    let summary = MetricsSummary::from_traces(mode.variant.name(), &traces)?;
    println!("{}", summary.row());
    write_json(
        &a.out.join("summary.json"),
        &SummaryFile {
            schema: SUMMARY_SCHEMA,
            sets: vec![summary],
        },
    )
}

/// A preset name or file, or a mode name standing for its default preset.
fn resolve_preset(s: &str) -> Result<TransportPreset> {
    match s.parse::<ModeVariant>() {
        Ok(m) => TransportPreset::builtin(m.default_preset()),
        Err(_) => TransportPreset::resolve(s),
    }
}

fn bench(a: &NetbenchArgs) -> Result<()> {
    let presets = a.mode.iter().map(|m| resolve_preset(m)).collect::<Result<Vec<_>>>()?;
    let mut cfg = NetbenchConfig::new(presets, a.rates.clone());
    cfg.nodes = a.nodes;
    cfg.duration = a.duration;
    cfg.messages = a.messages;
    cfg.backend = a.backend.parse::<Backend>()?;
    cfg.inject_loss = !a.no_loss;
    cfg.seed = a.seed.or(env_seed()?).unwrap_or(0);
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let results = netbench(&cfg)?;
    for r in &results {
        write_cdf_csv(&a.out.join(format!("{}.csv", r.file_stem())), &r.cdf(0.5, 200.0))?;
        println!("{}", bench_row(r));
    }
    write_json(&a.out.join("netbench.json"), &results)
}

fn bench_row(r: &NetbenchResult) -> String {
    format!(
        "{:<20} {:>6} msg/s  delivered {:.3}  within 20 ms {:.3}  median {}{}",
        r.preset,
        r.rate,
        r.delivered_fraction,
        r.within_20ms,
        r.median_delay_ms.map_or("-".into(), |m| format!("{m:.2} ms")),
        if r.saturated { "  SATURATED" } else { "" }
    )
}

fn default_label(traces: &[EpisodeTrace], dir: &Path) -> String {
    traces.first().map_or_else(
        || dir.file_name().map_or("traces".into(), |n| n.to_string_lossy().into_owned()),
        |t| t.header.mode.clone(),
    )
}

fn same_dir(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => a == b,
    }
}

fn report(a: &ReportArgs) -> Result<()> {
    let inputs: Vec<&PathBuf> = std::iter::once(&a.traces).chain(a.compare.as_ref()).collect();
    if inputs.iter().any(|d| same_dir(d, &a.out)) {
        return Err(Error::validation("report output must not be an input trace directory"));
    }
    let mut sets: Vec<(String, Vec<EpisodeTrace>)> = Vec::new();
    for (k, dir) in inputs.iter().enumerate() {
        let traces = load_trace_dir(dir)?;
        if traces.is_empty() {
            return Err(Error::validation(format!("no traces in {}", dir.display())));
        }
        let given = if k == 0 { &a.label } else { &a.compare_label };
        let mut label = given.clone().unwrap_or_else(|| default_label(&traces, dir));
        if sets.iter().any(|(l, _)| *l == label) {
            label = dir.file_name().map_or(format!("{label}-{k}"), |n| n.to_string_lossy().into_owned());
        }
        sets.push((label, traces));
    }
    let summaries = sets
        .iter()
        .map(|(l, t)| MetricsSummary::from_traces(l.clone(), t))
        .collect::<Result<Vec<_>>>()?;
    for s in &summaries {
        println!("{}", s.row());
    }
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let borrowed: Vec<(&str, &[EpisodeTrace])> = sets.iter().map(|(l, t)| (l.as_str(), t.as_slice())).collect();
    write_distributions(&a.out, &borrowed)?;
    write_json(
        &a.out.join("summary.json"),
        &SummaryFile {
            schema: SUMMARY_SCHEMA,
            sets: summaries,
        },
    )
}

fn config_tokens(key: &str, value: &serde_json::Value) -> Result<Vec<String>> {
    use serde_json::Value;
    let flag = format!("--{}", key.replace('_', "-"));
    let scalar = |v: &Value| match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        _ => Err(Error::validation(format!("config key '{key}' has an unsupported value"))),
    };
    Ok(match value {
        Value::Null | Value::Bool(false) => vec![],
        Value::Bool(true) => vec![flag],
        Value::Array(items) => {
            let parts = items.iter().map(scalar).collect::<Result<Vec<_>>>()?;
            vec![flag, parts.join(",")]
        }
        Value::Number(_) if key == "verbose" => vec![format!("-{}", "v".repeat(value.as_u64().unwrap_or(0) as usize))],
        v => vec![flag, scalar(v)?],
    })
}

/// Splices the flags of a `--config` file into `args`, behind the
/// subcommand and before the flags that were typed.
pub fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut rest = Vec::with_capacity(args.len());
    let mut path: Option<PathBuf> = None;
    let mut it = args.into_iter();
    let program = it.next().unwrap_or_else(|| "swarm-mesh".into());
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            let p = it.next().ok_or_else(|| Error::validation("--config needs a file"))?;
            path = Some(p.into());
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(p.into());
        } else {
            rest.push(a);
        }
    }
    let Some(path) = path else {
        let mut out = vec![program];
        out.extend(rest);
        return Ok(out);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::from_json(e, &text))?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::validation("config file must hold a JSON object"))?;
    let typed: Vec<String> = rest.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let sub_at = typed.iter().position(|a| COMMANDS.contains(&a.as_str()));
    let mut out = vec![program];
    match sub_at {
        Some(i) => out.extend(rest.drain(..=i)),
        None => {
            let cmd = obj
                .get("command")
                .and_then(|c| c.as_str())
                .ok_or_else(|| Error::validation("no subcommand given on the command line or in the config"))?;
            out.push(cmd.into());
        }
    }
    for (k, v) in obj {
        if k == "command" {
            continue;
        }
        let flag = format!("--{}", k.replace('_', "-"));
        let given = typed.iter().any(|a| *a == flag || a.starts_with(&format!("{flag}=")));
        if !given {
            out.extend(config_tokens(k, v)?.into_iter().map(OsString::from));
        }
    }
    out.extend(rest);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    fn strings(v: Vec<OsString>) -> Vec<String> {
        v.into_iter().map(|s| s.into_string().unwrap()).collect()
    }

    #[test]
    fn config_flags_fill_in_behind_typed_ones() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        std::fs::write(&cfg, r#"{"command":"netbench","rates":[10,60],"mode":"ideal","out":"x","no_loss":true,"seed":4}"#)
            .unwrap();
        let args = expand_config(os(&["sm", "--config", cfg.to_str().unwrap(), "--out", "y"])).unwrap();
        let s = strings(args.clone());
        assert_eq!(s[1], "netbench");
        assert!(!s.contains(&"x".to_string()));
        assert!(s.windows(2).any(|w| w == ["--rates", "10,60"]));
        let cli = Cli::try_parse_from(args).unwrap();
        match cli.command {
            Command::Netbench(a) => {
                assert_eq!(a.rates, vec![10.0, 60.0]);
                assert_eq!(a.out, PathBuf::from("y"));
                assert!(a.no_loss);
                assert_eq!(a.seed, Some(4));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn typed_subcommand_wins_and_missing_config_is_io() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        std::fs::write(&cfg, r#"{"command":"netbench","traces":"t","out":"o"}"#).unwrap();
        let args = expand_config(os(&["sm", "report", "--config", cfg.to_str().unwrap()])).unwrap();
        assert!(matches!(Cli::try_parse_from(args).unwrap().command, Command::Report(_)));
        let err = expand_config(os(&["sm", "--config", "/nonexistent/c.json"])).unwrap_err();
        assert_eq!(exit_code(&err), 3);
        std::fs::write(&cfg, "[1]").unwrap();
        assert_eq!(exit_code(&expand_config(os(&["sm", "--config", cfg.to_str().unwrap()])).unwrap_err()), 2);
    }

    #[test]
    fn mode_names_stand_for_their_default_preset() {
        assert_eq!(resolve_preset("onboard-adhoc").unwrap().name, "adhoc-multicast-r1");
        assert_eq!(resolve_preset("unicast-default-r7").unwrap().name, "unicast-default-r7");
        assert!(resolve_preset("no-such-preset").is_err());
    }

    #[test]
    fn exit_codes_follow_error_class() {
        assert_eq!(exit_code(&Error::validation("x")), 2);
        assert_eq!(exit_code(&Error::io("p", std::io::Error::other("x"))), 3);
        assert_eq!(exit_code(&Error::Transport("x".into())), 1);
    }
}
