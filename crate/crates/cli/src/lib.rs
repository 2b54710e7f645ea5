//! Command-line front end: single runs, Monte-Carlo campaigns, self tests
//! and manifest replay.
//!
//! Every file a command writes is listed with its SHA-256 in
//! `manifest.json` in the output directory.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use relnav::eval::{comparison_table, format_comparison, write_comparison_csv, write_nees_csv, ModeArmse};
use relnav::ranging::measurement_covariance;
use relnav::selftest::{run_all, SelftestOptions, SuiteReport};
use relnav_sim::output::{
    write_clocks, write_errors, write_estimates, write_nees, write_summaries, write_truth,
};
use relnav_sim::{run_scenario, run_trials, Mode, ScenarioConfig, ScenarioError, ScenarioResult, TrialSummary};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Config(_) | CliError::Io { .. } => 2,
            CliError::Numerical(_) => 3,
        }
    }

    fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
        let context = context.into();
        move |source| CliError::Io { context, source }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Config(m) => CliError::Config(m),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "relnav", version, about = "Relative navigation simulations with UWB ranging and IMU preintegration")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one scenario and write its error, clock and pose streams.
    Run(RunArgs),
    /// Run paired-seed trials for several modes and tabulate position aRMSE.
    Montecarlo(MonteCarloArgs),
    /// Run the numerical oracle suites.
    Selftest(SelftestArgs),
    /// Re-run the command recorded in a manifest and compare checksums.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML file whose keys mirror the scenario configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Flight time [s].
    #[arg(long)]
    pub duration: Option<f64>,
    /// Probability that an RMI broadcast is lost.
    #[arg(long = "drop-prob")]
    pub drop_prob: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: Overrides,
    #[arg(long)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub robots: Option<usize>,
}

#[derive(Debug, Args)]
pub struct MonteCarloArgs {
    #[command(flatten)]
    pub common: Overrides,
    /// Modes to compare; all three when omitted.
    #[arg(long, value_delimiter = ',')]
    pub mode: Vec<Mode>,
    /// Team sizes, one table row each.
    #[arg(long, value_delimiter = ',')]
    pub robots: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    /// Also write the full per-trial streams.
    #[arg(long)]
    pub traces: bool,
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    #[arg(long, default_value_t = SelftestOptions::default().seed)]
    pub seed: u64,
    /// Transactions per role in the covariance suite.
    #[arg(long, default_value_t = SelftestOptions::default().covariance_samples)]
    pub covariance_samples: usize,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    /// Directory for the regenerated outputs.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandKind {
    Run,
    Montecarlo,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub file: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: CommandKind,
    pub config: ScenarioConfig,
    pub seed: u64,
    pub modes: Vec<Mode>,
    pub robots: Vec<usize>,
    pub trials: usize,
    pub traces: bool,
    pub output_dir: PathBuf,
    pub artifacts: Vec<Artifact>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(CliError::io(format!("reading {}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

pub fn parse_config(text: &str) -> Result<ScenarioConfig, CliError> {
    let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn config_to_toml(cfg: &ScenarioConfig) -> Result<String, CliError> {
    toml::to_string(cfg).map_err(|e| CliError::Config(e.to_string()))
}

pub fn load_config(path: Option<&Path>) -> Result<ScenarioConfig, CliError> {
    match path {
        None => Ok(ScenarioConfig::default()),
        Some(p) => {
            if !p.is_file() {
                return Err(CliError::Usage(format!("config file {} not found", p.display())));
            }
            let text = fs::read_to_string(p).map_err(CliError::io(format!("reading {}", p.display())))?;
            parse_config(&text).map_err(|e| match e {
                CliError::Config(m) => CliError::Config(format!("{}: {m}", p.display())),
                other => other,
            })
        }
    }
}

fn apply(common: &Overrides, cfg: &mut ScenarioConfig) {
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(d) = common.duration {
        cfg.duration_s = d;
    }
    if let Some(p) = common.drop_prob {
        cfg.drop_prob = p;
    }
}

/// Writes artifacts into one directory and records their checksums.
struct ArtifactWriter {
    dir: PathBuf,
    artifacts: Vec<Artifact>,
}

impl ArtifactWriter {
    fn new(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(CliError::io(format!("creating {}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            artifacts: Vec::new(),
        })
    }

    fn write<F>(&mut self, name: &str, fill: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut Vec<u8>) -> Result<(), String>,
    {
        let mut buf = Vec::new();
        fill(&mut buf).map_err(|e| CliError::Numerical(format!("{name}: {e}")))?;
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(CliError::io(format!("creating {}", parent.display())))?;
        }
        let mut f = BufWriter::new(File::create(&path).map_err(CliError::io(format!("creating {}", path.display())))?);
        f.write_all(&buf)
            .and_then(|_| f.flush())
            .map_err(CliError::io(format!("writing {}", path.display())))?;
        self.artifacts.push(Artifact {
            file: name.to_string(),
            bytes: buf.len() as u64,
            sha256: hex::encode(Sha256::digest(&buf)),
        });
        Ok(())
    }

    /// Declares a file written by another writer.
    fn record(&mut self, name: &str) -> Result<(), CliError> {
        let bytes = fs::read(self.dir.join(name)).map_err(CliError::io(format!("reading {name}")))?;
        self.artifacts.push(Artifact {
            file: name.to_string(),
            bytes: bytes.len() as u64,
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
        Ok(())
    }

    fn finish(mut self, mut manifest: RunManifest) -> Result<RunManifest, CliError> {
        self.artifacts.sort_by(|a, b| a.file.cmp(&b.file));
        manifest.artifacts = self.artifacts;
        manifest.output_dir = self.dir.clone();
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Numerical(e.to_string()))? + "\n";
        let path = self.dir.join(MANIFEST_FILE);
        fs::write(&path, text).map_err(CliError::io(format!("writing {}", path.display())))?;
        Ok(manifest)
    }
}

fn csv_err(e: csv::Error) -> String {
    e.to_string()
}

fn write_run_streams(w: &mut ArtifactWriter, prefix: &str, r: &ScenarioResult) -> Result<(), CliError> {
    w.write(&format!("{prefix}errors.csv"), |b| write_errors(b, r).map_err(csv_err))?;
    w.write(&format!("{prefix}clocks.csv"), |b| write_clocks(b, r).map_err(csv_err))?;
    w.write(&format!("{prefix}truth.csv"), |b| write_truth(b, r).map_err(csv_err))?;
    w.write(&format!("{prefix}estimates.csv"), |b| write_estimates(b, r).map_err(csv_err))?;
    w.write(&format!("{prefix}nees.csv"), |b| write_nees(b, r).map_err(csv_err))
}

/// One scenario; returns the manifest written to `out`.
pub fn execute_run(cfg: &ScenarioConfig, out: &Path) -> Result<RunManifest, CliError> {
    let r = run_scenario(cfg)?;
    let mut w = ArtifactWriter::new(out)?;
    write_run_streams(&mut w, "", &r)?;
    let summary = TrialSummary::from_result(0, &r);
    w.write("summary.csv", |b| write_summaries(b, std::slice::from_ref(&summary)).map_err(csv_err))?;
    w.finish(RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: CommandKind::Run,
        config: cfg.clone(),
        seed: cfg.seed,
        modes: vec![cfg.mode],
        robots: vec![cfg.robots],
        trials: 1,
        traces: false,
        output_dir: PathBuf::new(),
        artifacts: Vec::new(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignEntry {
    pub robots: usize,
    pub mode: Mode,
    pub trials: Vec<TrialSummary>,
    pub position_armse: f64,
    pub clock_offset_armse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignReport {
    pub manifest: RunManifest,
    pub entries: Vec<CampaignEntry>,
    pub table: String,
}

impl CampaignReport {
    pub fn entry(&self, robots: usize, mode: Mode) -> Option<&CampaignEntry> {
        self.entries.iter().find(|e| e.robots == robots && e.mode == mode)
    }
}

/// Paired-seed campaign over `robots` x `modes`; trial `k` of every mode
/// uses seed `cfg.seed + k`.
pub fn execute_montecarlo(
    cfg: &ScenarioConfig,
    modes: &[Mode],
    robots: &[usize],
    trials: usize,
    traces: bool,
    out: &Path,
) -> Result<CampaignReport, CliError> {
    if trials == 0 {
        return Err(CliError::Usage("--trials must be at least 1".into()));
    }
    if modes.is_empty() || robots.is_empty() {
        return Err(CliError::Usage("at least one mode and one team size are required".into()));
    }
    let mut w = ArtifactWriter::new(out)?;
    let mut entries = Vec::new();
    let mut rows = Vec::new();
    for &n in robots {
        let mut row = ModeArmse {
            robots: n,
            centralized: None,
            no_passive: None,
            proposed: f64::NAN,
        };
        for &mode in modes {
            let c = ScenarioConfig {
                robots: n,
                mode,
                ..cfg.clone()
            };
            let tag = format!("r{n}_{}", mode.name());
            let traces_dir = format!("traces/{tag}");
            // each trial owns its files; checksums are gathered afterwards
            let mc = run_trials(&c, trials, |k, r| {
                if traces {
                    let mut tw = ArtifactWriter::new(&out.join(&traces_dir))
                        .map_err(|e| ScenarioError::Config(e.to_string()))?;
                    write_run_streams(&mut tw, &format!("trial_{k:04}_"), r)
                        .map_err(|e| ScenarioError::Config(e.to_string()))?;
                }
                Ok(())
            })?;
            if traces {
                for k in 0..trials {
                    for s in ["errors", "clocks", "truth", "estimates", "nees"] {
                        w.record(&format!("{traces_dir}/trial_{k:04}_{s}.csv"))?;
                    }
                }
            }
            w.write(&format!("trials_{tag}.csv"), |b| write_summaries(b, &mc.trials).map_err(csv_err))?;
            w.write(&format!("nees_{tag}.csv"), |b| {
                write_nees_csv(b, &mc.nees, c.time_step()).map_err(|e| e.to_string())
            })?;
            match mode {
                Mode::Proposed => row.proposed = mc.position_armse,
                Mode::Centralized => row.centralized = Some(mc.position_armse),
                Mode::NoPassive => row.no_passive = Some(mc.position_armse),
            }
            entries.push(CampaignEntry {
                robots: n,
                mode,
                position_armse: mc.position_armse,
                clock_offset_armse: mc.clock_offset_armse,
                trials: mc.trials,
            });
        }
        rows.push(row);
    }
    let mut table = String::new();
    if modes.contains(&Mode::Proposed) {
        let rows = comparison_table(&rows);
        w.write("comparison.csv", |b| write_comparison_csv(b, &rows).map_err(|e| e.to_string()))?;
        table = format_comparison(&rows);
    }
    let manifest = w.finish(RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: CommandKind::Montecarlo,
        config: cfg.clone(),
        seed: cfg.seed,
        modes: modes.to_vec(),
        robots: robots.to_vec(),
        trials,
        traces,
        output_dir: PathBuf::new(),
        artifacts: Vec::new(),
    })?;
    Ok(CampaignReport {
        manifest,
        entries,
        table,
    })
}

pub fn execute_selftest(args: &SelftestArgs) -> Vec<SuiteReport> {
    let opts = SelftestOptions {
        seed: args.seed,
        covariance_samples: args.covariance_samples,
        ..Default::default()
    };
    run_all(&opts, measurement_covariance)
}

/// Re-runs a manifest into `out`; returns the new manifest and the
/// artifacts whose checksum changed.
pub fn execute_replay(manifest: &RunManifest, out: &Path) -> Result<(RunManifest, Vec<String>), CliError> {
    let fresh = match manifest.command {
        CommandKind::Run => execute_run(&manifest.config, out)?,
        CommandKind::Montecarlo => {
            execute_montecarlo(
                &manifest.config,
                &manifest.modes,
                &manifest.robots,
                manifest.trials,
                manifest.traces,
                out,
            )?
            .manifest
        }
    };
    let mismatched = manifest
        .artifacts
        .iter()
        .filter(|a| !fresh.artifacts.contains(a))
        .map(|a| a.file.clone())
        .chain(
            fresh
                .artifacts
                .iter()
                .filter(|a| !manifest.artifacts.iter().any(|b| b.file == a.file))
                .map(|a| a.file.clone()),
        )
        .collect();
    Ok((fresh, mismatched))
}

fn summary_line(entry: &CampaignEntry) -> String {
    format!(
        "robots={} mode={:<11} position_armse_m={:.4} clock_offset_armse_ns={:.4}",
        entry.robots,
        entry.mode.name(),
        entry.position_armse,
        entry.clock_offset_armse
    )
}

/// Executes a parsed command, writing human-readable output to `out`.
pub fn dispatch<W: Write>(cli: Cli, out: &mut W) -> Result<(), CliError> {
    let say = |out: &mut W, s: String| writeln!(out, "{s}").map_err(CliError::io("writing to stdout"));
    match cli.command {
        Command::Run(args) => {
            let mut cfg = load_config(args.common.config.as_deref())?;
            apply(&args.common, &mut cfg);
            if let Some(m) = args.mode {
                cfg.mode = m;
            }
            if let Some(n) = args.robots {
                cfg.robots = n;
            }
            cfg.validate()?;
            let m = execute_run(&cfg, &args.common.out)?;
            let summary = fs::read_to_string(args.common.out.join("summary.csv"))
                .map_err(CliError::io("reading summary.csv"))?;
            say(out, summary.trim_end().to_string())?;
            say(out, format!("{} artifacts in {}", m.artifacts.len(), m.output_dir.display()))
        }
        Command::Montecarlo(args) => {
            let mut cfg = load_config(args.common.config.as_deref())?;
            apply(&args.common, &mut cfg);
            cfg.validate()?;
            let modes = if args.mode.is_empty() { Mode::ALL.to_vec() } else { args.mode };
            let robots = if args.robots.is_empty() { vec![cfg.robots] } else { args.robots };
            let report = execute_montecarlo(&cfg, &modes, &robots, args.trials, args.traces, &args.common.out)?;
            for e in &report.entries {
                say(out, summary_line(e))?;
            }
            if !report.table.is_empty() {
                say(out, report.table.trim_end().to_string())?;
            }
            say(
                out,
                format!("{} artifacts in {}", report.manifest.artifacts.len(), report.manifest.output_dir.display()),
            )
        }
        Command::Selftest(args) => {
            let reports = execute_selftest(&args);
            for r in &reports {
                say(out, r.line())?;
            }
            let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.name).collect();
            if failed.is_empty() {
                Ok(())
            } else {
                Err(CliError::Numerical(format!("failed suites: {}", failed.join(", "))))
            }
        }
        Command::Replay(args) => {
            let m = RunManifest::load(&args.manifest)?;
            let (fresh, mismatched) = execute_replay(&m, &args.out)?;
            say(out, format!("{} artifacts regenerated in {}", fresh.artifacts.len(), fresh.output_dir.display()))?;
            if mismatched.is_empty() {
                say(out, "all checksums match".into())
            } else {
                Err(CliError::Numerical(format!("checksum mismatch: {}", mismatched.join(", "))))
            }
        }
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with_args<I, T, W, E>(args: I, out: &mut W, err: &mut E) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
    W: Write,
    E: Write,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if let CliError::Usage(_) = e {
                let _ = writeln!(err, "usage: relnav <run|montecarlo|selftest|replay> --out <DIR> [--config <FILE>]");
            }
            e.exit_code()
        }
    }
}
