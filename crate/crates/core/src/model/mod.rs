//! System model: topology, queue-state evolution and the Markov-modulated
//! processes driving arrivals and constraint states.

mod arrivals;
mod chain;
mod topology;

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use arrivals::{
    mean_rate, sample_arrivals, sample_arrivals_into, ArrivalProcess, BatchDist, ConstraintProcess,
};
pub use chain::{steady_state, FiniteMarkovChain};
pub use topology::{validate_topology, Flow, NetworkTopology, TopologyReport, TopologyViolation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("malformed topology: {0}")]
    Shape(String),
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("invalid Markov chain: {0}")]
    Chain(String),
    #[error("Markov chain is reducible")]
    Reducible,
    #[error("invalid arrival process: {0}")]
    Arrivals(String),
    #[error("infeasible departure at queue {queue}: {departure} > backlog {backlog}")]
    InfeasibleDeparture {
        queue: usize,
        departure: u64,
        backlog: u64,
    },
    #[error("vector length {got} does not match {expected} queues")]
    Length { expected: usize, got: usize },
}

/// Customers waiting in each virtual queue.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct QueueState(pub Vec<u64>);

impl QueueState {
    pub fn zeros(m: usize) -> Self {
        Self(vec![0; m])
    }

    pub fn l1(&self) -> u64 {
        self.0.iter().sum()
    }

    pub fn l2(&self) -> f64 {
        l2_norm(&self.0)
    }
}

impl Deref for QueueState {
    type Target = [u64];

    fn deref(&self) -> &[u64] {
        &self.0
    }
}

impl DerefMut for QueueState {
    fn deref_mut(&mut self) -> &mut [u64] {
        &mut self.0
    }
}

impl From<Vec<u64>> for QueueState {
    fn from(v: Vec<u64>) -> Self {
        Self(v)
    }
}

pub(crate) fn l2_norm(x: &[u64]) -> f64 {
    x.iter()
        .map(|&v| (v as f64) * (v as f64))
        .sum::<f64>()
        .sqrt()
}

/// One slot of `X' = X + A - D (I - R)`.
pub fn step(
    x: &QueueState,
    a: &[u64],
    d: &[u64],
    t: &NetworkTopology,
) -> Result<QueueState, ModelError> {
    let mut next = x.clone();
    step_in_place(&mut next, a, d, t)?;
    Ok(next)
}

/// In-place form of [`step`]; leaves `x` untouched on error.
pub fn step_in_place(
    x: &mut [u64],
    a: &[u64],
    d: &[u64],
    t: &NetworkTopology,
) -> Result<(), ModelError> {
    let m = t.m();
    if let Some(got) = [x.len(), a.len(), d.len()]
        .into_iter()
        .find(|&len| len != m)
    {
        return Err(ModelError::Length { expected: m, got });
    }
    if let Some(q) = (0..m).find(|&q| d[q] > x[q]) {
        return Err(ModelError::InfeasibleDeparture {
            queue: q,
            departure: d[q],
            backlog: x[q],
        });
    }
    for q in 0..m {
        x[q] = x[q] - d[q] + a[q];
    }
    for q in 0..m {
        if d[q] > 0 {
            for &s in t.successors(q) {
                x[s] += d[q];
            }
        }
    }
    Ok(())
}

/// Workload `W = Lambda (I - R)^{-1}`.
pub fn workload(lambda: &[f64], t: &NetworkTopology) -> Result<Vec<f64>, ModelError> {
    let report = validate_topology(t);
    let inv = report.inverse.ok_or_else(|| {
        let msgs: Vec<String> = report.violations.iter().map(ToString::to_string).collect();
        ModelError::InvalidTopology(msgs.join("; "))
    })?;
    if lambda.len() != t.m() {
        return Err(ModelError::Length {
            expected: t.m(),
            got: lambda.len(),
        });
    }
    Ok((0..t.m())
        .map(|j| {
            lambda
                .iter()
                .zip(&inv)
                .map(|(l, row)| l * row[j] as f64)
                .sum()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tandem() -> NetworkTopology {
        NetworkTopology::new(vec![vec![0, 1], vec![0, 0]], None, None).unwrap()
    }

    fn chain3() -> NetworkTopology {
        NetworkTopology::new(
            vec![vec![0, 1, 0], vec![0, 0, 1], vec![0, 0, 0]],
            None,
            None,
        )
        .unwrap()
    }

    #[test]
    fn step_examples() {
        let x = QueueState(vec![3, 1]);
        assert_eq!(step(&x, &[1, 0], &[1, 0], &tandem()).unwrap().0, vec![3, 2]);
        assert_eq!(step(&x, &[0, 0], &[0, 0], &tandem()).unwrap(), x);
        let single = NetworkTopology::single_hop(2);
        assert_eq!(
            step(&QueueState(vec![2, 2]), &[0, 1], &[2, 0], &single)
                .unwrap()
                .0,
            vec![0, 3]
        );
    }

    #[test]
    fn infeasible_departure_is_a_fault() {
        let err = step(&QueueState(vec![0, 1]), &[0, 0], &[1, 0], &tandem()).unwrap_err();
        assert_eq!(
            err,
            ModelError::InfeasibleDeparture {
                queue: 0,
                departure: 1,
                backlog: 0
            }
        );
    }

    #[test]
    fn workload_examples() {
        assert_eq!(workload(&[0.3, 0.0], &tandem()).unwrap(), vec![0.3, 0.3]);
        assert_eq!(
            workload(&[0.1, 0.7], &NetworkTopology::single_hop(2)).unwrap(),
            vec![0.1, 0.7]
        );
        let w = workload(&[0.2, 0.1, 0.0], &chain3()).unwrap();
        // (I - R)^{-1} for the 3-chain is upper triangular ones.
        for (got, want) in w.iter().zip([0.2, 0.3, 0.3]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn workload_rejects_invalid_topology() {
        let cyc = NetworkTopology::new(
            vec![vec![0, 1], vec![1, 0]],
            None,
            Some(vec![Flow { path: vec![0] }]),
        )
        .unwrap();
        assert!(matches!(
            workload(&[0.1, 0.1], &cyc),
            Err(ModelError::InvalidTopology(_))
        ));
    }
}
