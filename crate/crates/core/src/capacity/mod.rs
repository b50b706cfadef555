//! Capacity-region admissibility.
//!
//! A workload `W = lambda (I - R)^{-1}` is admissible when `W (1 + eps)` is a
//! stationary mixture `sum_S pi_S D(S)` of points of the per-state regions.
//! The largest such `eps` is found by linear programming over convex
//! weights on region vertices.

mod simplex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use simplex::{solve, Constraint, LinearProgram, LpOutcome, Relation};

use crate::model::{
    steady_state, validate_topology, workload, ConstraintProcess, ModelError, NetworkTopology,
};
use crate::regions::DepartureRegion;

/// `|eps| <= BOUNDARY_TOL` is reported as the boundary.
pub const BOUNDARY_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum CapacityError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid topology: {0}")]
    Topology(String),
    #[error("constraint chain is reducible")]
    Reducible,
    #[error(
        "constraint state {state} refers to region {region}, but only {available} regions exist"
    )]
    MissingRegion {
        state: usize,
        region: usize,
        available: usize,
    },
    #[error("region '{label}' has dimension {got}, expected {expected}")]
    Dimension {
        label: String,
        expected: usize,
        got: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    StrictlyAdmissible,
    Boundary,
    Inadmissible,
}

impl Verdict {
    pub fn from_margin(eps: f64) -> Self {
        if eps > BOUNDARY_TOL {
            Verdict::StrictlyAdmissible
        } else if eps >= -BOUNDARY_TOL {
            Verdict::Boundary
        } else {
            Verdict::Inadmissible
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Verdict::StrictlyAdmissible => "strictly-admissible",
            Verdict::Boundary => "boundary",
            Verdict::Inadmissible => "inadmissible",
        }
    }
}

/// Convex weights over one state's region vertices; zero weights omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateWitness {
    pub state: usize,
    pub region: String,
    pub probability: f64,
    pub weights: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityResult {
    /// Largest `eps`; `+inf` when `unbounded`.
    pub margin: f64,
    pub verdict: Verdict,
    pub witness: Vec<StateWitness>,
    pub unbounded: bool,
    pub workload: Vec<f64>,
    /// Max-norm distance between the witness mixture and `W (1 + eps)`.
    pub residual: f64,
    pub relaxed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AdmissibilityOptions {
    /// Use `mixture >= W (1 + eps)`; equivalent for regions closed under
    /// componentwise decrease.
    pub relaxed: bool,
}

/// Regions are indexed by `c.region_of(state)`.
pub fn check_admissible(
    lambda: &[f64],
    t: &NetworkTopology,
    c: &ConstraintProcess,
    regions: &[DepartureRegion],
) -> Result<AdmissibilityResult, CapacityError> {
    check_admissible_with(lambda, t, c, regions, AdmissibilityOptions::default())
}

pub fn check_admissible_with(
    lambda: &[f64],
    t: &NetworkTopology,
    c: &ConstraintProcess,
    regions: &[DepartureRegion],
    opts: AdmissibilityOptions,
) -> Result<AdmissibilityResult, CapacityError> {
    let report = validate_topology(t);
    if !report.is_valid() {
        let msg = report
            .violations
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join("; ");
        return Err(CapacityError::Topology(msg));
    }
    let w = workload(lambda, t)?;
    let pi = match steady_state(c.chain()) {
        Ok(pi) => pi,
        Err(ModelError::Reducible) => return Err(CapacityError::Reducible),
        Err(e) => return Err(e.into()),
    };
    let m = t.m();
    let mut state_regions = Vec::with_capacity(pi.len());
    for s in 0..pi.len() {
        let idx = c.region_of(s);
        let r = regions.get(idx).ok_or(CapacityError::MissingRegion {
            state: s,
            region: idx,
            available: regions.len(),
        })?;
        if r.dim() != m {
            return Err(CapacityError::Dimension {
                label: r.label().to_string(),
                expected: m,
                got: r.dim(),
            });
        }
        state_regions.push(r);
    }

    if w.iter().all(|&v| v == 0.0) {
        let witness = state_regions
            .iter()
            .enumerate()
            .map(|(s, r)| StateWitness {
                state: s,
                region: r.label().to_string(),
                probability: pi[s],
                weights: vec![(r.zero_id(), 1.0)],
            })
            .collect();
        return Ok(AdmissibilityResult {
            margin: f64::INFINITY,
            verdict: Verdict::StrictlyAdmissible,
            witness,
            unbounded: true,
            workload: w,
            residual: 0.0,
            relaxed: opts.relaxed,
        });
    }

    // Variables: e = 1 + eps, then w_{S,v} state by state.
    let offsets: Vec<usize> = state_regions
        .iter()
        .scan(1, |acc, r| {
            let o = *acc;
            *acc += r.len();
            Some(o)
        })
        .collect();
    let n = 1 + state_regions.iter().map(|r| r.len()).sum::<usize>();
    let mut constraints = Vec::with_capacity(m + pi.len());
    for q in 0..m {
        let mut row = vec![0.0; n];
        row[0] = -w[q];
        for (s, r) in state_regions.iter().enumerate() {
            for (id, v) in r.vertices().iter().enumerate() {
                row[offsets[s] + id] = pi[s] * v[q] as f64;
            }
        }
        let relation = if opts.relaxed {
            Relation::Ge
        } else {
            Relation::Eq
        };
        constraints.push(Constraint {
            coefficients: row,
            relation,
            rhs: 0.0,
        });
    }
    for (s, r) in state_regions.iter().enumerate() {
        let mut row = vec![0.0; n];
        row[offsets[s]..offsets[s] + r.len()]
            .iter_mut()
            .for_each(|v| *v = 1.0);
        constraints.push(Constraint {
            coefficients: row,
            relation: Relation::Eq,
            rhs: 1.0,
        });
    }
    let mut objective = vec![0.0; n];
    objective[0] = 1.0;

    let x = match solve(&LinearProgram {
        objective,
        constraints,
    }) {
        LpOutcome::Optimal { x, .. } => x,
        // Unreachable with a zero vertex in every region; clamp as documented.
        LpOutcome::Infeasible | LpOutcome::Unbounded => {
            return Ok(AdmissibilityResult {
                margin: -1.0,
                verdict: Verdict::Inadmissible,
                witness: Vec::new(),
                unbounded: false,
                workload: w,
                residual: f64::NAN,
                relaxed: opts.relaxed,
            })
        }
    };
    let eps = x[0] - 1.0;
    let witness: Vec<StateWitness> = state_regions
        .iter()
        .enumerate()
        .map(|(s, r)| {
            let raw = &x[offsets[s]..offsets[s] + r.len()];
            let total: f64 = raw.iter().sum();
            StateWitness {
                state: s,
                region: r.label().to_string(),
                probability: pi[s],
                weights: raw
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| v > 1e-12)
                    .map(|(id, &v)| (id, v / total))
                    .collect(),
            }
        })
        .collect();
    let residual = mixture_residual(&witness, &state_regions, &w, x[0], opts.relaxed);
    Ok(AdmissibilityResult {
        margin: eps,
        verdict: Verdict::from_margin(eps),
        witness,
        unbounded: false,
        workload: w,
        residual,
        relaxed: opts.relaxed,
    })
}

fn mixture_residual(
    witness: &[StateWitness],
    regions: &[&DepartureRegion],
    w: &[f64],
    scale: f64,
    relaxed: bool,
) -> f64 {
    let mut mix = vec![0.0; w.len()];
    for (sw, r) in witness.iter().zip(regions) {
        for &(id, weight) in &sw.weights {
            for (acc, &v) in mix.iter_mut().zip(r.vertex(id)) {
                *acc += sw.probability * weight * v as f64;
            }
        }
    }
    mix.iter()
        .zip(w)
        .map(|(a, b)| {
            let gap = a - b * scale;
            if relaxed {
                (-gap).max(0.0)
            } else {
                gap.abs()
            }
        })
        .fold(0.0, f64::max)
}
