//! Experiment plumbing: configuration, the simulation loop, load sweeps
//! and config validation.

mod config;
mod run;

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{
    ArrivalSpec, ConstraintSpec, Experiment, ExperimentConfig, LabSpec, MatrixSpec, RegionSpec,
    SweepSpec, TopologySpec,
};
pub use run::{
    expected_regeneration_gap, run_experiment, write_summary, AdmissibilitySummary, MergedSummary,
    ReplicationSummary, RunSummary, SUMMARY_SCHEMA,
};

use crate::capacity::{check_admissible, AdmissibilityResult, Verdict as Admissibility};
use crate::model::{validate_topology, TopologyReport};
use crate::potentials::{check_potential, ValidityReport};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("runtime fault in replication {replication} at slot {slot}: {message}")]
    Runtime {
        replication: usize,
        slot: u64,
        message: String,
    },
}

impl HarnessError {
    /// 1 for configuration problems, 2 for faults while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 1,
            HarnessError::Io(_) | HarnessError::Runtime { .. } => 2,
        }
    }
}

pub fn potential_report(exp: &Experiment) -> ValidityReport {
    let cfg = exp.config.check.clone().unwrap_or_default();
    check_potential(exp.policy.potential(), &exp.topology, &exp.regions, &cfg)
}

/// Fails unless the policy potential passes its checks or the config
/// explicitly allows unvalidated potentials.
pub fn ensure_validated(exp: &Experiment) -> Result<(), HarnessError> {
    if exp.config.allow_unvalidated {
        return Ok(());
    }
    let report = potential_report(exp);
    if report.is_valid() {
        return Ok(());
    }
    let failed: Vec<&str> = report
        .verdicts()
        .iter()
        .filter(|(_, v)| v.is_fail())
        .map(|(n, _)| *n)
        .collect();
    Err(HarnessError::Config(format!(
        "potential {} fails {}; set allow_unvalidated = true (or pass --allow-unvalidated) to run anyway",
        report.potential,
        failed.join(", ")
    )))
}

/// Validates the potential, then runs.
pub fn run_validated(exp: &Experiment, out: Option<&Path>) -> Result<RunSummary, HarnessError> {
    ensure_validated(exp)?;
    run_experiment(exp, out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub rho: f64,
    pub margin: Option<f64>,
    pub verdict: Option<String>,
    pub mean_backlog: Option<f64>,
    pub slope: Option<f64>,
    pub classification: Option<String>,
    pub error: Option<String>,
}

/// Runs the experiment at each load multiple `rho`; cells fail
/// independently. Cell outputs go to `out/rho_<rho>/`.
pub fn sweep(
    exp: &Experiment,
    grid: &[f64],
    out: Option<&Path>,
) -> Result<Vec<SweepRow>, HarnessError> {
    if grid.is_empty() {
        return Err(HarnessError::Config("sweep grid is empty".into()));
    }
    ensure_validated(exp)?;
    let rows = grid
        .iter()
        .map(|&rho| {
            let mut row = SweepRow {
                rho,
                margin: None,
                verdict: None,
                mean_backlog: None,
                slope: None,
                classification: None,
                error: None,
            };
            let cell = exp.scaled(rho).and_then(|e| {
                let adm = check_admissible(&e.lambda, &e.topology, &e.constraints, &e.regions)
                    .map_err(|err| HarnessError::Config(err.to_string()))?;
                row.margin = adm.margin.is_finite().then_some(adm.margin);
                row.verdict = Some(adm.verdict.label().to_string());
                let dir = out.map(|d| d.join(format!("rho_{rho}")));
                run_experiment(&e, dir.as_deref())
            });
            match cell {
                Ok(s) => {
                    row.mean_backlog = Some(s.merged.mean_backlog);
                    row.slope = s.merged.mean_slope;
                    row.classification = s.merged.classification.map(|c| c.label().to_string());
                }
                Err(e) => row.error = Some(e.to_string()),
            }
            row
        })
        .collect::<Vec<_>>();
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::Io(e.to_string()))?;
        let text = serde_json::to_string_pretty(&rows)
            .map_err(|e| HarnessError::Io(e.to_string()))?
            + "\n";
        std::fs::write(dir.join("sweep.json"), text)
            .map_err(|e| HarnessError::Io(e.to_string()))?;
        std::fs::write(dir.join("sweep.csv"), sweep_csv(&rows))
            .map_err(|e| HarnessError::Io(e.to_string()))?;
    }
    Ok(rows)
}

fn opt<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map(|v| v.to_string()).unwrap_or_default()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("rho,margin,verdict,mean_backlog,slope,classification,error\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.rho,
            opt(&r.margin),
            opt(&r.verdict),
            opt(&r.mean_backlog),
            opt(&r.slope),
            opt(&r.classification),
            opt(&r.error).replace(',', ";")
        );
    }
    s
}

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub topology: TopologyReport,
    pub potential: ValidityReport,
    pub admissibility: Result<AdmissibilityResult, String>,
}

impl ValidationReport {
    /// Invalid topology, failed potential checks or an unusable capacity
    /// computation. Inadmissible load only warns.
    pub fn hard_failure(&self) -> bool {
        !self.topology.is_valid() || !self.potential.is_valid() || self.admissibility.is_err()
    }

    pub fn warnings(&self) -> Vec<String> {
        match &self.admissibility {
            Ok(a) if a.verdict == Admissibility::Inadmissible => {
                vec![format!("load is outside the capacity region (margin {:.6}); the run will be overloaded", a.margin)]
            }
            Ok(a) if a.verdict == Admissibility::Boundary => {
                vec!["load lies on the capacity boundary".into()]
            }
            _ => Vec::new(),
        }
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "topology: {}",
            if self.topology.is_valid() {
                "ok"
            } else {
                "INVALID"
            }
        );
        for v in &self.topology.violations {
            let _ = writeln!(s, "  - {v}");
        }
        let _ = writeln!(
            s,
            "potential: {} ({})",
            self.potential.potential,
            if self.potential.is_valid() {
                "ok"
            } else {
                "FAILED"
            }
        );
        for (name, v) in self.potential.verdicts() {
            let _ = writeln!(s, "  {name:<17} {}", v.label());
        }
        let _ = writeln!(s, "  h0                {}", self.potential.h0);
        match &self.admissibility {
            Ok(a) => {
                let margin = if a.unbounded {
                    "unbounded".to_string()
                } else {
                    format!("{:.6}", a.margin)
                };
                let _ = writeln!(s, "admissibility: {} (margin {margin})", a.verdict.label());
            }
            Err(e) => {
                let _ = writeln!(s, "admissibility: ERROR {e}");
            }
        }
        for w in self.warnings() {
            let _ = writeln!(s, "warning: {w}");
        }
        s
    }
}

pub fn validate_experiment(exp: &Experiment) -> ValidationReport {
    ValidationReport {
        topology: validate_topology(&exp.topology),
        potential: potential_report(exp),
        admissibility: check_admissible(&exp.lambda, &exp.topology, &exp.constraints, &exp.regions)
            .map_err(|e| e.to_string()),
    }
}
