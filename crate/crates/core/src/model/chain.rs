//! Finite discrete-time Markov chains modulating arrivals and constraints.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::ModelError;

const ROW_SUM_TOL: f64 = 1e-12;
const RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMarkovChain {
    transition: Vec<Vec<f64>>,
    initial: usize,
    cumulative: Vec<Vec<f64>>,
}

impl FiniteMarkovChain {
    /// Checks that `transition` is square and row-stochastic. Irreducibility
    /// is checked separately by [`FiniteMarkovChain::is_irreducible`].
    pub fn new(transition: Vec<Vec<f64>>, initial: usize) -> Result<Self, ModelError> {
        let n = transition.len();
        if n == 0 {
            return Err(ModelError::Chain("chain needs at least one state".into()));
        }
        for (i, row) in transition.iter().enumerate() {
            if row.len() != n {
                return Err(ModelError::Chain(format!(
                    "row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(ModelError::Chain(format!(
                    "row {i} has an entry outside [0, 1]"
                )));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(ModelError::Chain(format!("row {i} sums to {s}")));
            }
        }
        if initial >= n {
            return Err(ModelError::Chain(format!(
                "initial state {initial} out of range"
            )));
        }
        let mut chain = Self {
            transition,
            initial,
            cumulative: Vec::new(),
        };
        chain.rebuild_cache();
        Ok(chain)
    }

    /// The one-state chain: i.i.d. arrivals or static constraints.
    pub fn trivial() -> Self {
        Self::new(vec![vec![1.0]], 0).expect("trivial chain")
    }

    pub fn n_states(&self) -> usize {
        self.transition.len()
    }

    pub fn initial(&self) -> usize {
        self.initial
    }

    pub fn transition(&self) -> &[Vec<f64>] {
        &self.transition
    }

    /// Every state reaches every other state through positive-probability steps.
    pub fn is_irreducible(&self) -> bool {
        let n = self.n_states();
        let reach = |forward: bool| {
            let mut seen = vec![false; n];
            let mut stack = vec![0usize];
            seen[0] = true;
            while let Some(i) = stack.pop() {
                for j in 0..n {
                    let p = if forward {
                        self.transition[i][j]
                    } else {
                        self.transition[j][i]
                    };
                    if p > 0.0 && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
            seen.into_iter().all(|s| s)
        };
        reach(true) && reach(false)
    }

    /// Samples the successor of `state`.
    pub fn next_state<R: Rng + ?Sized>(&self, state: usize, rng: &mut R) -> usize {
        let cdf = &self.cumulative[state];
        if cdf.len() == 1 {
            return 0;
        }
        let u: f64 = rng.random();
        cdf.iter().position(|&c| u < c).unwrap_or(cdf.len() - 1)
    }

    fn rebuild_cache(&mut self) {
        self.cumulative = self
            .transition
            .iter()
            .map(|row| {
                let mut acc = 0.0;
                row.iter()
                    .map(|p| {
                        acc += p;
                        acc
                    })
                    .collect()
            })
            .collect();
    }
}

/// Stationary distribution of an irreducible chain.
///
/// Solves `pi (P - I) = 0` with one balance equation replaced by `sum(pi) = 1`.
pub fn steady_state(c: &FiniteMarkovChain) -> Result<Vec<f64>, ModelError> {
    if !c.is_irreducible() {
        return Err(ModelError::Reducible);
    }
    let n = c.n_states();
    let p = DMatrix::from_fn(n, n, |i, j| c.transition[i][j]);
    let mut a = p.transpose() - DMatrix::identity(n, n);
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let pi = a
        .lu()
        .solve(&b)
        .ok_or_else(|| ModelError::Chain("singular balance equations".into()))?;
    let pi: Vec<f64> = pi.iter().copied().collect();
    let residual = (0..n)
        .map(|j| ((0..n).map(|i| pi[i] * c.transition[i][j]).sum::<f64>() - pi[j]).abs())
        .fold(0.0, f64::max);
    if residual >= RESIDUAL_TOL {
        return Err(ModelError::Chain(format!(
            "stationary residual {residual:e} too large"
        )));
    }
    Ok(pi)
}
