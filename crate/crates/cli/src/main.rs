use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use qnet::capacity::{check_admissible_with, AdmissibilityOptions};
use qnet::harness::{
    run_validated, sweep, validate_experiment, Experiment, ExperimentConfig, HarnessError,
    RunSummary,
};
use qnet::regions::{MAX_CONTENTION_NODES, MAX_SWITCH_PORTS};

#[derive(Parser)]
#[command(
    name = "qnet",
    version,
    about = "Constrained queueing network simulator"
)]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    slots: Option<u64>,
    /// Output directory for CSV and JSON artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    replications: Option<usize>,
    #[arg(long, global = true)]
    quiet: bool,
    /// Run even if the policy potential fails its checks.
    #[arg(long, global = true)]
    allow_unvalidated: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the configured experiment.
    Run,
    /// Repeat the experiment at scaled loads.
    Sweep {
        /// Comma-separated load multipliers; defaults to the config's grid.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
    },
    /// Check whether the configured load lies in the capacity region.
    Capacity {
        /// Use the componentwise-dominance form of the program.
        #[arg(long)]
        relaxed: bool,
    },
    /// Check topology, potential and admissibility without simulating.
    Validate,
    /// Built-in region presets and expression syntax.
    Presets {
        #[command(subcommand)]
        action: PresetAction,
    },
}

#[derive(Subcommand)]
enum PresetAction {
    List,
}

/// Error carrying the process exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        Failure {
            code: e.exit_code() as u8,
            error: e.into(),
        }
    }
}

fn config_failure(e: anyhow::Error) -> Failure {
    Failure { code: 1, error: e }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<u8, Failure> {
    if let Command::Presets {
        action: PresetAction::List,
    } = cli.command
    {
        print!("{}", presets_text());
        return Ok(0);
    }
    let exp = load(cli)?;
    match &cli.command {
        Command::Run => {
            report_admissibility(&exp, cli.quiet);
            let out = out_dir(cli, &exp);
            let summary = run_validated(&exp, Some(&out))?;
            if !cli.quiet {
                print_summary(&summary, &out);
            }
            Ok(0)
        }
        Command::Sweep { grid } => {
            let grid = grid
                .clone()
                .or_else(|| exp.config.sweep.as_ref().map(|s| s.grid.clone()))
                .ok_or_else(|| {
                    config_failure(anyhow::anyhow!(
                        "no grid given and the config has no [sweep] table"
                    ))
                })?;
            let out = out_dir(cli, &exp);
            let rows = sweep(&exp, &grid, Some(&out))?;
            if !cli.quiet {
                println!(
                    "{:>8} {:>12} {:>20} {:>12} {:>12} {:>13}",
                    "rho", "margin", "verdict", "backlog", "slope", "class"
                );
                for r in &rows {
                    let f = |v: Option<f64>, p: usize| {
                        v.map_or("-".to_string(), |v| format!("{v:.p$}"))
                    };
                    println!(
                        "{:>8} {:>12} {:>20} {:>12} {:>12} {:>13}",
                        r.rho,
                        f(r.margin, 6),
                        r.verdict.as_deref().unwrap_or("-"),
                        f(r.mean_backlog, 3),
                        f(r.slope, 6),
                        r.classification.as_deref().unwrap_or("-")
                    );
                    if let Some(e) = &r.error {
                        println!("         error: {e}");
                    }
                }
                println!("wrote {}", out.join("sweep.csv").display());
            }
            Ok(if rows.iter().any(|r| r.error.is_some()) {
                2
            } else {
                0
            })
        }
        Command::Capacity { relaxed } => {
            let res = check_admissible_with(
                &exp.lambda,
                &exp.topology,
                &exp.constraints,
                &exp.regions,
                AdmissibilityOptions { relaxed: *relaxed },
            )
            .map_err(|e| config_failure(e.into()))?;
            println!("workload: {:?}", res.workload);
            if res.unbounded {
                println!("verdict: {} (unbounded margin)", res.verdict.label());
            } else {
                println!("verdict: {}", res.verdict.label());
                println!("margin: {:.9}", res.margin);
            }
            println!("witness:");
            println!(
                "  {:>5} {:>10} {:>8} {:>12}  vertex",
                "state", "region", "pi", "weight"
            );
            for sw in &res.witness {
                let region = exp.regions.iter().find(|r| r.label() == sw.region);
                for &(id, w) in &sw.weights {
                    let v = region
                        .map(|r| format!("{:?}", r.vertex(id)))
                        .unwrap_or_default();
                    println!(
                        "  {:>5} {:>10} {:>8.4} {:>12.6}  {v}",
                        sw.state, sw.region, sw.probability, w
                    );
                }
            }
            Ok(0)
        }
        Command::Validate => {
            let report = validate_experiment(&exp);
            print!("{}", report.render());
            Ok(if report.hard_failure() { 1 } else { 0 })
        }
        Command::Presets { .. } => unreachable!("handled above"),
    }
}

fn load(cli: &Cli) -> Result<Experiment, Failure> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| config_failure(anyhow::anyhow!("--config <file> is required")))?;
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(config_failure)?;
    let mut cfg = ExperimentConfig::from_toml(&text)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(s) = cli.slots {
        cfg.slots = s;
    }
    if let Some(r) = cli.replications {
        cfg.replications = r;
    }
    if cli.allow_unvalidated {
        cfg.allow_unvalidated = true;
    }
    if cfg.name.is_none() {
        cfg.name = path.file_stem().map(|s| s.to_string_lossy().into_owned());
    }
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(Experiment::from_config(cfg, base)?)
}

fn out_dir(cli: &Cli, exp: &Experiment) -> PathBuf {
    cli.out
        .clone()
        .unwrap_or_else(|| PathBuf::from("out").join(exp.config.name.as_deref().unwrap_or("run")))
}

fn report_admissibility(exp: &Experiment, quiet: bool) {
    let report = validate_experiment(exp);
    for w in report.warnings() {
        eprintln!("warning: {w}");
    }
    if !quiet {
        if let Ok(a) = &report.admissibility {
            if !a.unbounded {
                println!(
                    "admissibility: {} (margin {:.6})",
                    a.verdict.label(),
                    a.margin
                );
            }
        }
    }
}

fn print_summary(s: &RunSummary, out: &Path) {
    println!("policy: {}", s.policy);
    println!(
        "{:>4} {:>12} {:>12} {:>13} {:>9} {:>9}",
        "rep", "backlog", "slope", "class", "ratio h1", "ratio h2"
    );
    for r in &s.replications {
        let ratio = |h: usize| {
            r.moments
                .get(h - 1)
                .map_or("-".into(), |m| format!("{:.3}", m.ratio))
        };
        println!(
            "{:>4} {:>12.3} {:>12.6} {:>13} {:>9} {:>9}",
            r.replication,
            r.mean_backlog,
            r.slope.map_or(f64::NAN, |s| s.slope),
            r.slope.map_or("-", |s| s.classification.label()),
            ratio(1),
            ratio(2)
        );
    }
    println!(
        "merged: backlog {:.3}, verdict {}",
        s.merged.mean_backlog,
        s.merged.classification.map_or("-", |c| c.label())
    );
    if let Some(a) = &s.merged.audit {
        println!(
            "memory audit: {} violations in {} checks, exact argmax {:.4} (floor {:.4})",
            a.violations,
            a.checks,
            a.argmax_frequency(),
            a.delta()
        );
    }
    println!("wall clock: {:.2} s", s.wall_clock_secs);
    println!("wrote {}", out.display());
}

fn presets_text() -> String {
    format!(
        "region presets:
  switch      n = 1..{MAX_SWITCH_PORTS}              n x n input-queued switch, all (partial) matchings
  path        nodes = 1..{MAX_CONTENTION_NODES}          links on a path contention graph, independent sets
  contention  nodes, edges = [[a, b], ...]  arbitrary contention graph, independent sets
  vertices    explicit list (must contain the zero vector)
  base + drop another region minus some vertices

kernels:     pow(alpha) log lpf(theta) identity
potentials:  sum_scalar(k) linear quad(k, Q=M) lpf_quad(theta=1, P=M)
             add(G1, a, G2, b) mul(G1, G2) outer(k, G) inner(G, k)
matrices:    [[..], ..] inline, @name from [matrices], @conflict, or @path/to/file
policies:    max_scalar(G) memory(G) memory_dyn(G) stale(P, delay=d) frame(P, k=k)
"
    )
}
