//! Command-line front end: `simulate`, `realdata` and `infer`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::Config;
use crate::environment::{ColumnSelector, LabelMap, ReplayTable};
use crate::error::{Error, Result};
use crate::harness::{self, CoverageTable, RunRecord, Scenario};
use crate::infer::{self, InferenceSettings, ScoreSpec};

#[derive(Debug, Parser)]
#[command(name = "ksib", version, about = "Kernel single-index bandits: simulation, replay and offline inference")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the synthetic replication grid and export coverage, length and regret tables
    Simulate(SimulateArgs),
    /// Replay a labelled CSV as a two-armed bandit
    Realdata(RealdataArgs),
    /// Recompute inference for one arm at one time from a round log
    Infer(InferArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML configuration; flags override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// replication pool size
    #[arg(long, env = "KSIB_THREADS")]
    pub threads: Option<usize>,
    /// also write per-trajectory round logs
    #[arg(long)]
    pub keep_logs: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    /// context dimensions, comma separated
    #[arg(long, value_delimiter = ',')]
    pub d: Vec<usize>,
    /// noise levels, comma separated
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub sigma: Vec<f64>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// skip the pointwise intervals
    #[arg(long)]
    pub no_pointwise: bool,
}

#[derive(Debug, Args)]
pub struct RealdataArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// label column, by header name or zero-based index
    #[arg(long)]
    pub label_col: Option<ColumnSelector>,
    /// feature columns, comma separated; all other columns by default
    #[arg(long, value_delimiter = ',')]
    pub features: Vec<ColumnSelector>,
    /// label mapping such as `neg=0,pos=1`
    #[arg(long, value_delimiter = ',', value_parser = parse_label_pair)]
    pub label_map: Vec<(String, usize)>,
    #[arg(long)]
    pub perms: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// round log CSV
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long)]
    pub arm: usize,
    #[arg(long)]
    pub t: usize,
    /// evaluation context, comma separated; defaults to the context of round t + 1
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub x: Vec<f64>,
    #[arg(long, default_value_t = 2)]
    pub arms: usize,
    #[arg(long, default_value_t = 50)]
    pub warm_start: usize,
    #[arg(long, value_enum, default_value_t = ScoreArg::StandardGaussian)]
    pub score: ScoreArg,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub level: Option<f64>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum ScoreArg {
    StandardGaussian,
    Empirical,
}

fn parse_label_pair(s: &str) -> std::result::Result<(String, usize), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected label=class, got '{s}'"))?;
    let v: usize = v.parse().map_err(|_| format!("class in '{s}' is not 0 or 1"))?;
    if v > 1 {
        return Err(format!("class in '{s}' is not 0 or 1"));
    }
    Ok((k.to_string(), v))
}

fn load_config(common: &Common) -> Result<Config> {
    let mut cfg = match &common.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out = o.clone();
    }
    if let Some(t) = common.threads {
        cfg.threads = t;
    }
    if common.keep_logs {
        cfg.keep_logs = true;
    }
    if cfg.threads == 0 {
        return Err(Error::Config("threads must be at least 1".into()));
    }
    Ok(cfg)
}

/// The part of the resolved configuration echoed into summary.json. Output
/// location and pool size are left out: they do not change any number.
#[derive(Debug, Serialize)]
struct SimulateEcho<'a> {
    seed: u64,
    keep_logs: bool,
    scenarios: &'a [Scenario],
}

#[derive(Debug, Default, Serialize)]
struct ScenarioDiagnostics {
    clamped_d2: usize,
    degenerate_bandwidths: usize,
    min_gram_eigenvalue: Option<f64>,
}

fn diagnostics(records: &[RunRecord]) -> ScenarioDiagnostics {
    let mut d = ScenarioDiagnostics::default();
    for r in records {
        d.clamped_d2 += r.diagnostics.clamped_d2;
        d.degenerate_bandwidths += r.diagnostics.degenerate_bandwidths;
        for &(_, _, l) in &r.diagnostics.gram_min_eigenvalues {
            d.min_gram_eigenvalue = Some(d.min_gram_eigenvalue.map_or(l, |m: f64| m.min(l)));
        }
    }
    d
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let mut cfg = load_config(&args.common)?;
    if !args.d.is_empty() {
        cfg.simulate.d = args.d.clone();
    }
    if !args.sigma.is_empty() {
        cfg.simulate.sigma = args.sigma.clone();
    }
    if let Some(r) = args.reps {
        cfg.simulate.scenario.reps = r;
    }
    if args.no_pointwise {
        cfg.simulate.scenario.pointwise = false;
    }
    let scenarios = cfg.simulate.scenarios()?;
    let mut table = CoverageTable::default();
    let mut per_scenario = Vec::with_capacity(scenarios.len());
    let mut diags = BTreeMap::new();
    for sc in &scenarios {
        eprintln!("simulate: {} with {} replications", sc.id(), sc.reps);
        let records = harness::run_scenario(sc, cfg.seed, cfg.threads, cfg.keep_logs)?;
        let failed = records.iter().filter(|r| !r.succeeded()).count();
        if failed > 0 {
            eprintln!("simulate: {}: {failed} failed replications", sc.id());
        }
        table.merge(harness::aggregate(&sc.id(), sc.d, sc.sigma, &records)?);
        diags.insert(sc.id(), diagnostics(&records));
        per_scenario.push((sc.id(), records));
    }
    let echo = SimulateEcho {
        seed: cfg.seed,
        keep_logs: cfg.keep_logs,
        scenarios: &scenarios,
    };
    let files = harness::export(&table, &echo, &diags, &cfg.out)?;
    for (id, records) in &per_scenario {
        harness::write_run_tables(&cfg.out, id, records)?;
    }
    eprintln!("simulate: wrote {}", files.coverage.parent().unwrap_or(&cfg.out).display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct RealdataEcho<'a> {
    seed: u64,
    keep_logs: bool,
    csv: String,
    label_col: &'a ColumnSelector,
    features: &'a [String],
    label_map: &'a LabelMap,
    replay: &'a harness::ReplayScenario,
}

pub fn cmd_realdata(args: &RealdataArgs) -> Result<()> {
    let mut cfg = load_config(&args.common)?;
    let rd = &mut cfg.realdata;
    if let Some(c) = &args.csv {
        rd.csv = Some(c.clone());
    }
    if let Some(l) = &args.label_col {
        rd.label_col = Some(l.clone());
    }
    if !args.features.is_empty() {
        rd.features = Some(args.features.clone());
    }
    if !args.label_map.is_empty() {
        rd.label_map = args.label_map.iter().cloned().collect();
    }
    if let Some(p) = args.perms {
        rd.replay.perms = p;
    }
    if let Some(h) = args.horizon {
        rd.replay.horizon = h;
    }
    let csv = rd.csv.clone().ok_or_else(|| Error::Config("realdata needs --csv".into()))?;
    let label = rd
        .label_col
        .clone()
        .ok_or_else(|| Error::Config("realdata needs --label-col".into()))?;
    rd.replay.validate()?;
    let table = ReplayTable::load(&csv, &label, rd.features.as_deref(), &rd.label_map)?;
    eprintln!(
        "realdata: {} rows, {} features, {} permutations",
        table.len(),
        table.dim(),
        rd.replay.perms
    );
    let records = harness::run_replays(&table, &rd.replay, cfg.seed, cfg.threads, cfg.keep_logs)?;
    for r in records.iter().filter(|r| r.failure.is_some()) {
        eprintln!("realdata: permutation {} failed: {}", r.perm, r.failure.as_deref().unwrap_or(""));
    }
    let echo = RealdataEcho {
        seed: cfg.seed,
        keep_logs: cfg.keep_logs,
        csv: csv.display().to_string(),
        label_col: &label,
        features: &table.feature_names,
        label_map: &rd.label_map,
        replay: &rd.replay,
    };
    harness::export_replays(&records, &echo, &cfg.out)?;
    eprintln!("realdata: wrote {}", cfg.out.display());
    Ok(())
}

pub fn cmd_infer(args: &InferArgs) -> Result<infer::InferReport> {
    let log = crate::log::read_log_file(&args.log)?;
    let mut s = InferenceSettings {
        arms: args.arms,
        warm_start: args.warm_start,
        score: match args.score {
            ScoreArg::StandardGaussian => ScoreSpec::StandardGaussian,
            ScoreArg::Empirical => ScoreSpec::Empirical,
        },
        ..InferenceSettings::default()
    };
    if let Some(a) = args.alpha {
        s.alpha = a;
    }
    if let Some(l) = args.level {
        s.level = l;
    }
    let x = (!args.x.is_empty()).then_some(args.x.as_slice());
    infer::infer(&log, args.t, args.arm, x, &s)
}

/// Parses the process arguments and runs; returns the exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Realdata(a) => cmd_realdata(a),
        Command::Infer(a) => cmd_infer(a).and_then(|report| {
            let mut out = std::io::stdout().lock();
            serde_json::to_writer_pretty(&mut out, &report)?;
            writeln!(out).map_err(|e| Error::io("stdout", e))
        }),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
