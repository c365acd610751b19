//! Command-line front end for the simulator.
//!
//! Exit codes: 0 success, 1 property or replay failure, 2 configuration,
//! input or parse error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use slim_abc::metrics::{scaling_fit, CsvRow, ScalingFit};
use slim_abc::simnet::check;
use slim_abc::simnet::trace::{replay, Trace};
use slim_abc::simnet::{sim_run_traced, SimError};
use slim_abc::{sim_run, Policy, RunReport, SimConfig};

#[derive(Parser)]
#[command(name = "slim-abc", version, about = "Asynchronous atomic broadcast simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its report.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Report destination; stdout if absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        /// Also write a JSON-lines delivery trace.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run a scenario over several n and seeds; emit CSV and scaling fits.
    Sweep {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, value_delimiter = ',', default_value = "4,7,10,13")]
        n_list: Vec<usize>,
        #[arg(long, default_value_t = 30)]
        seeds: u64,
        /// CSV destination; stdout if absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the property suite over a range of seeds.
    Check {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value_t = 200)]
        seeds: u64,
    },
    /// Re-execute a trace and compare every delivery.
    Replay {
        #[arg(long)]
        trace: PathBuf,
    },
}

#[derive(Args, Clone)]
struct ScenarioArgs {
    /// Versioned scenario JSON; a four-party honest run if absent.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    f: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// fifo, random, adversarial-delay or targeted-starve.
    #[arg(long)]
    policy: Option<String>,
    #[arg(long)]
    overlap: Option<f64>,
    #[arg(long)]
    instances: Option<u64>,
    #[arg(long)]
    max_steps: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

/// A failure that maps to an exit code.
#[derive(Debug)]
enum Failure {
    Usage(anyhow::Error),
    Property(String),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Usage(e)
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        Failure::Usage(e.into())
    }
}

impl ScenarioArgs {
    fn load(&self) -> Result<SimConfig> {
        let mut c = match &self.scenario {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => SimConfig::honest(4, 0),
        };
        if let Some(n) = self.n {
            c.n = n;
            c.f = self.f.unwrap_or((n.max(1) - 1) / 3);
        } else if let Some(f) = self.f {
            c.f = f;
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(p) = &self.policy {
            c.policy = Policy::from_name(p, c.n).with_context(|| format!("unknown policy {p}"))?;
        }
        if let Some(o) = self.overlap {
            c.scenario.overlap_ratio = o;
        }
        if let Some(i) = self.instances {
            c.instances = i;
        }
        if let Some(m) = self.max_steps {
            c.max_steps = m;
        }
        c.validate()?;
        Ok(c)
    }
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn csv_text(rows: &[CsvRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

fn cmd_run(args: &ScenarioArgs, out: Option<&Path>, format: Format, trace: Option<&Path>) -> Result<(), Failure> {
    let config = args.load()?;
    let report = match trace {
        Some(t) => {
            let (report, tr) = sim_run_traced(config)?;
            fs::write(t, tr.to_jsonl()).with_context(|| format!("writing {}", t.display()))?;
            report
        }
        None => sim_run(config)?,
    };
    let text = match format {
        Format::Json => report.to_json() + "\n",
        Format::Csv => csv_text(&[report.csv_row()])?,
    };
    write_out(out, &text)?;
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Property(format!(
            "status {:?}, failed: {}",
            report.status,
            report.failed_assertions().join(", ")
        )))
    }
}

fn band_line(metric: &str, fit: &ScalingFit, band: (f64, f64)) {
    let pass = (band.0..=band.1).contains(&fit.slope);
    eprintln!(
        "{metric}: slope {:.3} band [{}, {}] {}",
        fit.slope,
        band.0,
        band.1,
        if pass { "pass" } else { "fail" }
    );
}

fn cmd_sweep(args: &ScenarioArgs, n_list: &[usize], seeds: u64, out: Option<&Path>) -> Result<(), Failure> {
    let base = args.load()?;
    let mut ns = n_list.to_vec();
    ns.sort_unstable();
    ns.dedup();
    if ns.len() < 3 {
        return Err(Failure::Usage(anyhow::anyhow!("sweep needs at least 3 distinct n values")));
    }
    let mut configs = Vec::new();
    for &n in &ns {
        for s in 0..seeds {
            let mut c = base.clone();
            c.n = n;
            c.f = (n.max(1) - 1) / 3;
            c.seed = base.seed.wrapping_add(s);
            c.byzantine.retain(|b| (b.party as usize) < n);
            c.byzantine.truncate(c.f);
            if let Policy::AdversarialDelay { .. } | Policy::TargetedStarve { .. } = c.policy {
                c.policy = Policy::from_name(c.policy.label(), n).expect("known label");
            }
            c.validate().map_err(anyhow::Error::from)?;
            configs.push(c);
        }
    }
    let mut reports: Vec<RunReport> = configs
        .into_par_iter()
        .map(|c| sim_run(c).expect("validated"))
        .collect();
    reports.sort_by_key(|r| (r.config.n, r.config.seed));
    let rows: Vec<CsvRow> = reports.iter().map(RunReport::csv_row).collect();
    write_out(out, &csv_text(&rows)?)?;

    let msgs: Vec<(f64, f64)> = reports.iter().map(|r| (r.config.n as f64, r.messages_honest as f64)).collect();
    let bytes: Vec<(f64, f64)> = reports.iter().map(|r| (r.config.n as f64, r.bytes_honest as f64)).collect();
    match (scaling_fit(&msgs, 3), scaling_fit(&bytes, 3)) {
        (Ok(m), Ok(b)) => {
            // C fitted with the exponent pinned at 2.
            let c = (m.points.iter().map(|(n, y)| (y / (n * n)).ln()).sum::<f64>() / m.points.len() as f64).exp();
            let over = msgs.iter().filter(|(n, y)| *y > c * n * n).count();
            eprintln!("C = {c:.3}; runs above C*n^2: {over}/{}", msgs.len());
            band_line("messages_vs_n", &m, (1.7, 2.4));
            band_line("bytes_vs_n", &b, (1.7, 2.4));
        }
        (Err(e), _) | (_, Err(e)) => eprintln!("scaling fit: {e}"),
    }
    let failed: Vec<String> = reports
        .iter()
        .filter(|r| !r.passed())
        .map(|r| format!("n={} seed={}", r.config.n, r.config.seed))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Property(format!("flagged runs: {}", failed.join(", "))))
    }
}

fn cmd_check(args: &ScenarioArgs, seeds: u64) -> Result<(), Failure> {
    let base = args.load()?;
    let reports: Vec<RunReport> = (0..seeds)
        .into_par_iter()
        .map(|s| {
            let mut c = base.clone();
            c.seed = base.seed.wrapping_add(s);
            sim_run(c).expect("validated")
        })
        .collect();
    let mut failures = Vec::new();
    for name in check::ALL {
        let ok = reports.iter().filter(|r| r.assertions.get(name) == Some(&true)).count();
        println!("{name:<22} {ok}/{}", reports.len());
        for r in reports.iter().filter(|r| r.assertions.get(name) != Some(&true)) {
            failures.push(format!("(seed {}, {name})", r.config.seed));
        }
    }
    let completed = reports.iter().filter(|r| r.status == slim_abc::metrics::RunStatus::Completed).count();
    println!("{:<22} {completed}/{}", "completed", reports.len());
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Property(failures.join(" ")))
    }
}

fn cmd_replay(path: &Path) -> Result<(), Failure> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let trace = Trace::from_jsonl(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
    let outcome = replay(&trace)?;
    match outcome.divergence {
        None => {
            println!("replayed {} steps, 0 divergences", outcome.steps);
            Ok(())
        }
        Some(step) => Err(Failure::Property(format!("divergence at step {step}"))),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Run {
            scenario,
            out,
            format,
            trace,
        } => cmd_run(scenario, out.as_deref(), *format, trace.as_deref()),
        Command::Sweep {
            scenario,
            n_list,
            seeds,
            out,
        } => cmd_sweep(scenario, n_list, *seeds, out.as_deref()),
        Command::Check { scenario, seeds } => cmd_check(scenario, *seeds),
        Command::Replay { trace } => cmd_replay(trace),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SLIM_ABC_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Property(msg)) => {
            eprintln!("failed: {msg}");
            ExitCode::from(1)
        }
    }
}
