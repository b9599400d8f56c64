use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use orpe::classify::classify_manifest;
use orpe::harness::config::RunConfig;
use orpe::harness::scenario::switching_scenario;
use orpe::harness::{run_experiment, Report};
use orpe::metrics::write_summary;
use orpe::sg::SerializationGraph;
use orpe::trace::read_trace;

#[derive(Parser)]
#[command(name = "orpe", version, about = "Adaptive multimodel concurrency control engine and workload harness")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an experiment described by a `key = value` config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `out_dir` from the config.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Replay a scripted scenario on the virtual clock.
    ReplayScenario {
        /// Scenario name (`fig7`).
        name: String,
        /// Also write the report files here.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Classify items from a property manifest; prints `id,class`.
    Classify {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Check a trace for serialization-graph cycles.
    SgCheck {
        #[arg(long)]
        trace: PathBuf,
    },
}

fn print_report(r: &Report) -> Result<()> {
    let mut out = io::stdout().lock();
    write_summary(&r.summary, &mut out)?;
    writeln!(out, "adaptations: {}", r.switches.len())?;
    Ok(())
}

fn run(config: PathBuf, out_dir: Option<PathBuf>) -> Result<()> {
    let mut cfg = RunConfig::from_path(&config).with_context(|| format!("loading {}", config.display()))?;
    if out_dir.is_some() {
        cfg.out_dir = out_dir;
    }
    let report = run_experiment(&cfg)?;
    print_report(&report)?;
    if let Some(dir) = &cfg.out_dir {
        eprintln!("wrote reports to {}", dir.display());
    }
    Ok(())
}

fn replay(name: &str, out_dir: Option<PathBuf>) -> Result<()> {
    if name != "fig7" {
        bail!("unknown scenario `{name}` (available: fig7)");
    }
    let s = switching_scenario()?;
    let mut out = io::stdout().lock();
    writeln!(out, "window,committed,counted,cr")?;
    for (i, ((c, n), cr)) in s.windows.iter().zip(&s.cr).enumerate() {
        writeln!(out, "{},{c},{n},{cr}", i + 1)?;
    }
    writeln!(out, "switches:")?;
    for w in &s.switches {
        writeln!(out, "  t={} {} {}->{} cr={} rule={}", w.time, w.item, w.from, w.to, w.cr, w.rule)?;
    }
    writeln!(out, "terminations:")?;
    for n in &s.termination_order {
        writeln!(out, "  ta{n}: {}", describe(s.outcomes[n]))?;
    }
    if let Some(dir) = out_dir {
        s.report.write_dir(&dir)?;
        eprintln!("wrote reports to {}", dir.display());
    }
    Ok(())
}

fn describe(o: orpe::Outcome) -> String {
    match o.reason() {
        None => "commit".into(),
        Some(r) => format!("abort ({r})"),
    }
}

fn classify(manifest: PathBuf) -> Result<()> {
    let f = File::open(&manifest).with_context(|| format!("opening {}", manifest.display()))?;
    classify_manifest(BufReader::new(f), io::stdout().lock())?;
    Ok(())
}

fn sg_check(trace: PathBuf) -> Result<bool> {
    let f = File::open(&trace).with_context(|| format!("opening {}", trace.display()))?;
    let events = read_trace(BufReader::new(f))?;
    let g = SerializationGraph::build(&events)?;
    match g.find_cycle() {
        None => {
            println!("acyclic: {} committed transactions, {} edges", g.nodes.len(), g.edges.len());
            Ok(true)
        }
        Some(c) => {
            let path: Vec<String> = c.iter().map(|t| t.to_string()).collect();
            println!("cycle: {}", path.join(" -> "));
            Ok(false)
        }
    }
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Run { config, out_dir } => run(config, out_dir)?,
        Cmd::ReplayScenario { name, out_dir } => replay(&name, out_dir)?,
        Cmd::Classify { manifest } => classify(manifest)?,
        Cmd::SgCheck { trace } => {
            if !sg_check(trace)? {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
