//! The slot loop and per-replication statistics.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::Experiment;
use super::HarnessError;
use crate::capacity::{check_admissible, AdmissibilityResult};
use crate::lab::{
    drift_profile, moment_report, slope_test, Classification, DriftAccumulator, DriftProfile,
    LabError, MomentReport, RegenerationLog, RegenerationTracker, SlopeResult, StatsRecorder,
};
use crate::model::{sample_arrivals_into, steady_state, step_in_place};
use crate::policies::{MonotonicityAudit, Policy, SlotContext};
use crate::rng::{stream, Stream};

pub const SUMMARY_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationSummary {
    pub replication: usize,
    pub mean_backlog: f64,
    pub final_backlog: Vec<u64>,
    pub moments: Vec<MomentReport>,
    pub slope: Option<SlopeResult>,
    pub drift: Option<DriftProfile>,
    pub regeneration: Option<RegenerationLog>,
    pub audit: Option<MonotonicityAudit>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedSummary {
    pub mean_backlog: f64,
    pub moments: Vec<MomentReport>,
    /// Stable (unstable) only when every replication agrees.
    pub classification: Option<Classification>,
    pub mean_slope: Option<f64>,
    pub drift: Option<DriftProfile>,
    pub regeneration: Option<RegenerationLog>,
    pub audit: Option<MonotonicityAudit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilitySummary {
    pub margin: Option<f64>,
    pub verdict: String,
    pub unbounded: bool,
}

impl From<&AdmissibilityResult> for AdmissibilitySummary {
    fn from(a: &AdmissibilityResult) -> Self {
        Self {
            margin: a.margin.is_finite().then_some(a.margin),
            verdict: a.verdict.label().into(),
            unbounded: a.unbounded,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema: u32,
    pub name: Option<String>,
    pub policy: String,
    pub drift_potential: String,
    pub slots: u64,
    pub seed: u64,
    pub warmup_slots: u64,
    pub lambda: Vec<f64>,
    pub admissibility: Option<AdmissibilitySummary>,
    pub replications: Vec<ReplicationSummary>,
    pub merged: MergedSummary,
    /// Kept out of the JSON so that summaries are byte-reproducible.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

/// Raw per-replication state, reduced in replication order.
struct ReplicationOutput {
    summary: ReplicationSummary,
    recorder: StatsRecorder,
    drift: DriftAccumulator,
    regeneration: RegenerationTracker,
    audit: Option<MonotonicityAudit>,
}

/// Runs every replication (in parallel) and writes `timeseries_rep<k>.csv`
/// plus `summary.json` into `out` when given.
pub fn run_experiment(exp: &Experiment, out: Option<&Path>) -> Result<RunSummary, HarnessError> {
    let started = Instant::now();
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)
            .map_err(|e| HarnessError::Io(format!("{}: {e}", dir.display())))?;
    }
    let admissibility =
        check_admissible(&exp.lambda, &exp.topology, &exp.constraints, &exp.regions)
            .ok()
            .map(|a| (&a).into());
    let outputs: Vec<ReplicationOutput> = (0..exp.config.replications)
        .into_par_iter()
        .map(|rep| run_replication(exp, rep, out))
        .collect::<Result<_, _>>()?;
    let merged = merge(exp, &outputs)?;
    let summary = RunSummary {
        schema: SUMMARY_SCHEMA,
        name: exp.config.name.clone(),
        policy: exp.policy.describe(),
        drift_potential: exp.drift_potential.describe(),
        slots: exp.config.slots,
        seed: exp.config.seed,
        warmup_slots: exp.config.warmup_slots(),
        lambda: exp.lambda.clone(),
        admissibility,
        replications: outputs.into_iter().map(|o| o.summary).collect(),
        merged,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    if let Some(dir) = out {
        write_summary(&summary, &dir.join("summary.json"))?;
    }
    Ok(summary)
}

pub fn write_summary(summary: &RunSummary, path: &Path) -> Result<(), HarnessError> {
    let mut text =
        serde_json::to_string_pretty(summary).map_err(|e| HarnessError::Io(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))
}

fn csv_header(m: usize) -> String {
    let mut h = String::from("slot,l1,l2");
    for q in 0..m {
        h.push_str(&format!(",q_{q}"));
    }
    h.push_str(",vertex_id,s_d\n");
    h
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> HarnessError + '_ {
    move |e| HarnessError::Io(format!("{}: {e}", path.display()))
}

fn run_replication(
    exp: &Experiment,
    rep: usize,
    out: Option<&Path>,
) -> Result<ReplicationOutput, HarnessError> {
    let cfg = &exp.config;
    let m = exp.topology.m();
    let seed = cfg.seed;
    let mut rng_arrival_chain = stream(seed, rep as u64, Stream::ArrivalChain);
    let mut rng_arrivals = stream(seed, rep as u64, Stream::Arrivals);
    let mut rng_constraint_chain = stream(seed, rep as u64, Stream::ConstraintChain);
    let mut rng_policy = stream(seed, rep as u64, Stream::Policy);

    let zero_ids = exp.zero_ids();
    let mut policy = Policy::new(exp.policy.clone(), &zero_ids)
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let n_d = exp.constraints.chain().n_states();
    let mut audit = (cfg.lab.audit && exp.policy.uses_memory())
        .then(|| MonotonicityAudit::new(n_d, exp.policy.is_dynamic_memory()));
    // The certificate concerns the undelayed rule only.
    if matches!(exp.policy, crate::policies::PolicySpec::Stale { .. }) {
        audit = None;
    }
    let mut recorder = StatsRecorder::new(
        cfg.slots,
        cfg.warmup_slots(),
        cfg.record_every,
        cfg.lab.max_moment,
    )
    .map_err(|e| HarnessError::Config(e.to_string()))?;
    let mut drift = DriftAccumulator::new();
    let mut s_a = exp.arrivals.chain().initial();
    let mut s_d = exp.constraints.chain().initial();
    let anchor = s_a * n_d + s_d;
    let mut regeneration = RegenerationTracker::new(anchor);

    let mut csv = match out {
        Some(dir) => {
            let path = dir.join(format!("timeseries_rep{rep}.csv"));
            let mut w = BufWriter::new(File::create(&path).map_err(io(&path))?);
            w.write_all(csv_header(m).as_bytes()).map_err(io(&path))?;
            Some((w, path))
        }
        None => None,
    };
    let csv_every = cfg.csv_stride();

    let g = &exp.drift_potential;
    let policy_g = exp.policy.potential();
    let mut x = vec![0u64; m];
    let mut a = vec![0u64; m];
    let mut xf = vec![0.0; m];
    let mut grad = vec![0.0; m];
    let mut pressure = vec![0.0; m];
    let mut policy_grad = vec![0.0; m];
    let same_potential = g == policy_g;
    let mut g_now = g.value(&x);
    let mut line = String::new();

    for t in 0..cfg.slots {
        let region = &exp.regions[exp.constraints.region_of(s_d)];
        sample_arrivals_into(&exp.arrivals, s_a, &mut rng_arrivals, &mut a);
        let ctx = SlotContext {
            topology: &exp.topology,
            region,
            constraint_state: s_d,
        };
        let sel = policy
            .select(&x, &ctx, &mut rng_policy)
            .map_err(|e| HarnessError::Runtime {
                replication: rep,
                slot: t,
                message: e.to_string(),
            })?;

        xf.iter_mut().zip(&x).for_each(|(f, &v)| *f = v as f64);
        g.value_and_gradient(&xf, &mut grad);
        let grad_norm = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
        if let Some(audit) = audit.as_mut() {
            if same_potential {
                exp.topology.pressure_into(&grad, &mut pressure);
            } else {
                policy_g.value_and_gradient(&xf, &mut policy_grad);
                exp.topology.pressure_into(&policy_grad, &mut pressure);
            }
            audit.observe(&pressure, &x, region, s_d, &sel.departure);
        }
        let l1_before: u64 = x.iter().sum();

        step_in_place(&mut x, &a, &sel.departure, &exp.topology).map_err(|e| {
            HarnessError::Runtime {
                replication: rep,
                slot: t,
                message: format!("policy produced an infeasible departure: {e}"),
            }
        })?;
        let g_next = g.value(&x);
        drift.push(l1_before, g_next - g_now, grad_norm);
        g_now = g_next;
        recorder.record(t, &x);
        regeneration.push(s_a * n_d + s_d);

        if let Some((w, path)) = csv.as_mut() {
            if t % csv_every == 0 {
                line.clear();
                let l1: u64 = x.iter().sum();
                let l2 = crate::model::l2_norm(&x);
                use std::fmt::Write as _;
                let _ = write!(line, "{t},{l1},{l2}");
                for q in &x {
                    let _ = write!(line, ",{q}");
                }
                let _ = writeln!(line, ",{},{s_d}", sel.vertex_id);
                w.write_all(line.as_bytes()).map_err(io(path))?;
            }
        }

        s_a = exp.arrivals.chain().next_state(s_a, &mut rng_arrival_chain);
        s_d = exp
            .constraints
            .chain()
            .next_state(s_d, &mut rng_constraint_chain);
    }
    if let Some((mut w, path)) = csv {
        w.flush().map_err(io(&path))?;
    }

    let mut notes = Vec::new();
    let moments = (1..=recorder.max_h())
        .map(|h| moment_report(&recorder, h))
        .collect::<Result<Vec<_>, _>>();
    let moments = moments.map_err(|e| HarnessError::Config(e.to_string()))?;
    let slope = note(
        slope_test(recorder.series(), &cfg.lab.slope()),
        "slope",
        &mut notes,
    );
    let drift_table = note(
        drift_profile(&drift, cfg.lab.drift_bins),
        "drift",
        &mut notes,
    );
    let regen = note(regeneration.finish(), "regeneration", &mut notes);
    let summary = ReplicationSummary {
        replication: rep,
        mean_backlog: recorder.mean_l1(),
        final_backlog: x,
        moments,
        slope,
        drift: drift_table,
        regeneration: regen,
        audit: audit.clone(),
        notes,
    };
    Ok(ReplicationOutput {
        summary,
        recorder,
        drift,
        regeneration,
        audit,
    })
}

fn note<T>(r: Result<T, LabError>, what: &str, notes: &mut Vec<String>) -> Option<T> {
    r.map_err(|e| notes.push(format!("{what}: {e}"))).ok()
}

fn merge(exp: &Experiment, outputs: &[ReplicationOutput]) -> Result<MergedSummary, HarnessError> {
    let first = &outputs[0];
    let mut recorder = first.recorder.clone();
    let mut drift = first.drift.clone();
    let mut regeneration = first.regeneration.clone();
    let mut audit = first.audit.clone();
    for o in &outputs[1..] {
        recorder
            .merge(&o.recorder)
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        drift.merge(&o.drift);
        regeneration.merge(&o.regeneration);
        if let (Some(a), Some(b)) = (audit.as_mut(), o.audit.as_ref()) {
            a.merge(b);
        }
    }
    let n = outputs.len() as f64;
    let moments = (1..=recorder.max_h())
        .map(|h| moment_report(&recorder, h))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let slopes: Vec<&SlopeResult> = outputs
        .iter()
        .filter_map(|o| o.summary.slope.as_ref())
        .collect();
    let classification = (slopes.len() == outputs.len()).then(|| {
        let all = |c: Classification| slopes.iter().all(|s| s.classification == c);
        if all(Classification::Stable) {
            Classification::Stable
        } else if all(Classification::Unstable) {
            Classification::Unstable
        } else {
            Classification::Inconclusive
        }
    });
    let mean_slope = (!slopes.is_empty())
        .then(|| slopes.iter().map(|s| s.slope).sum::<f64>() / slopes.len() as f64);
    Ok(MergedSummary {
        mean_backlog: outputs.iter().map(|o| o.summary.mean_backlog).sum::<f64>() / n,
        moments,
        classification,
        mean_slope,
        drift: drift_profile(&drift, exp.config.lab.drift_bins).ok(),
        regeneration: regeneration.finish().ok(),
        audit,
    })
}

/// `1 / pi(anchor)` for the joint arrival/constraint chain.
pub fn expected_regeneration_gap(exp: &Experiment) -> Option<f64> {
    let pa = steady_state(exp.arrivals.chain()).ok()?;
    let pd = steady_state(exp.constraints.chain()).ok()?;
    Some(1.0 / (pa[exp.arrivals.chain().initial()] * pd[exp.constraints.chain().initial()]))
}
