//! Markov-modulated batch arrivals and Markov-modulated constraint states.

use rand::Rng;

use super::chain::{steady_state, FiniteMarkovChain};
use super::ModelError;

const PMF_TOL: f64 = 1e-9;

/// Batch-size law with finite support `0..=c_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchDist {
    pmf: Vec<f64>,
    cdf: Vec<f64>,
}

impl BatchDist {
    pub fn new(pmf: Vec<f64>) -> Result<Self, ModelError> {
        if pmf.is_empty() {
            return Err(ModelError::Arrivals("empty batch distribution".into()));
        }
        if pmf.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(ModelError::Arrivals(format!(
                "pmf {pmf:?} has entries outside [0, 1]"
            )));
        }
        let total: f64 = pmf.iter().sum();
        if (total - 1.0).abs() > PMF_TOL {
            return Err(ModelError::Arrivals(format!("pmf {pmf:?} sums to {total}")));
        }
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = pmf
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        *cdf.last_mut().unwrap() = 1.0;
        Ok(Self { pmf, cdf })
    }

    /// Support `{0, 1}` with `P(1) = p`.
    pub fn bernoulli(p: f64) -> Result<Self, ModelError> {
        if !(0.0..=1.0).contains(&p) {
            return Err(ModelError::Arrivals(format!(
                "Bernoulli parameter {p} outside [0, 1]"
            )));
        }
        Self::new(vec![1.0 - p, p])
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    pub fn mean(&self) -> f64 {
        self.pmf.iter().enumerate().map(|(k, p)| k as f64 * p).sum()
    }

    /// Largest batch with positive probability.
    pub fn max_batch(&self) -> u64 {
        self.pmf.iter().rposition(|&p| p > 0.0).unwrap_or(0) as u64
    }

    /// Thins (or inflates) the positive batches by `rho`, moving the
    /// remaining mass to zero. The mean scales exactly by `rho`.
    pub fn scaled(&self, rho: f64) -> Result<Self, ModelError> {
        if rho < 0.0 {
            return Err(ModelError::Arrivals(format!("negative scale {rho}")));
        }
        let mut pmf: Vec<f64> = self.pmf.iter().map(|p| p * rho).collect();
        let positive: f64 = pmf[1..].iter().sum();
        if positive > 1.0 + PMF_TOL {
            return Err(ModelError::Arrivals(format!(
                "scaling by {rho} needs {positive} probability mass on positive batches"
            )));
        }
        pmf[0] = (1.0 - positive).max(0.0);
        Self::new(pmf)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let u: f64 = rng.random();
        self.cdf
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.cdf.len() - 1) as u64
    }
}

/// Markov-modulated batch arrivals: in modulating state `s`, queue `m`
/// receives an independent batch drawn from `per_state[s][m]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalProcess {
    chain: FiniteMarkovChain,
    per_state: Vec<Vec<BatchDist>>,
}

impl ArrivalProcess {
    pub fn new(
        chain: FiniteMarkovChain,
        per_state: Vec<Vec<BatchDist>>,
    ) -> Result<Self, ModelError> {
        if per_state.len() != chain.n_states() {
            return Err(ModelError::Arrivals(format!(
                "{} arrival laws for a {}-state chain",
                per_state.len(),
                chain.n_states()
            )));
        }
        let m = per_state[0].len();
        if m == 0 || per_state.iter().any(|s| s.len() != m) {
            return Err(ModelError::Arrivals(
                "every state needs one law per queue".into(),
            ));
        }
        Ok(Self { chain, per_state })
    }

    /// I.i.d. Bernoulli arrivals with the given per-queue probabilities.
    pub fn iid_bernoulli(rates: &[f64]) -> Result<Self, ModelError> {
        let laws = rates
            .iter()
            .map(|&p| BatchDist::bernoulli(p))
            .collect::<Result<_, _>>()?;
        Self::new(FiniteMarkovChain::trivial(), vec![laws])
    }

    pub fn chain(&self) -> &FiniteMarkovChain {
        &self.chain
    }

    pub fn m(&self) -> usize {
        self.per_state[0].len()
    }

    pub fn laws(&self, state: usize) -> &[BatchDist] {
        &self.per_state[state]
    }

    /// Largest possible batch into any queue.
    pub fn c_max(&self) -> u64 {
        self.per_state
            .iter()
            .flatten()
            .map(BatchDist::max_batch)
            .max()
            .unwrap_or(0)
    }

    /// Mean arrival vector while the modulating chain is in `state`.
    pub fn state_rate(&self, state: usize) -> Vec<f64> {
        self.per_state[state].iter().map(BatchDist::mean).collect()
    }

    pub fn scaled(&self, rho: f64) -> Result<Self, ModelError> {
        let per_state = self
            .per_state
            .iter()
            .map(|laws| {
                laws.iter()
                    .map(|l| l.scaled(rho))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(self.chain.clone(), per_state)
    }
}

/// Draws the arrival vector for one slot in modulating state `state`.
pub fn sample_arrivals<R: Rng + ?Sized>(p: &ArrivalProcess, state: usize, rng: &mut R) -> Vec<u64> {
    let mut out = vec![0; p.m()];
    sample_arrivals_into(p, state, rng, &mut out);
    out
}

pub fn sample_arrivals_into<R: Rng + ?Sized>(
    p: &ArrivalProcess,
    state: usize,
    rng: &mut R,
    out: &mut [u64],
) {
    for (a, law) in out.iter_mut().zip(&p.per_state[state]) {
        *a = law.sample(rng);
    }
}

/// Long-run arrival rate `sum_s pi_s * rate(s)`.
pub fn mean_rate(p: &ArrivalProcess) -> Result<Vec<f64>, ModelError> {
    let pi = steady_state(&p.chain)?;
    let mut rate = vec![0.0; p.m()];
    for (s, w) in pi.iter().enumerate() {
        for (r, law) in rate.iter_mut().zip(&p.per_state[s]) {
            *r += w * law.mean();
        }
    }
    Ok(rate)
}

/// Constraint-state chain and the departure region each state selects.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintProcess {
    chain: FiniteMarkovChain,
    region_of_state: Vec<usize>,
}

impl ConstraintProcess {
    pub fn new(chain: FiniteMarkovChain, region_of_state: Vec<usize>) -> Result<Self, ModelError> {
        if region_of_state.len() != chain.n_states() {
            return Err(ModelError::Chain(format!(
                "{} region assignments for a {}-state chain",
                region_of_state.len(),
                chain.n_states()
            )));
        }
        Ok(Self {
            chain,
            region_of_state,
        })
    }

    /// A single state using region 0.
    pub fn static_region() -> Self {
        Self::new(FiniteMarkovChain::trivial(), vec![0]).expect("static constraints")
    }

    pub fn chain(&self) -> &FiniteMarkovChain {
        &self.chain
    }

    pub fn region_of(&self, state: usize) -> usize {
        self.region_of_state[state]
    }

    pub fn region_of_state(&self) -> &[usize] {
        &self.region_of_state
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn degenerate_bernoulli() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ones = ArrivalProcess::iid_bernoulli(&[1.0; 3]).unwrap();
        let zeros = ArrivalProcess::iid_bernoulli(&[0.0; 3]).unwrap();
        for _ in 0..1000 {
            assert_eq!(sample_arrivals(&ones, 0, &mut rng), vec![1, 1, 1]);
            assert_eq!(sample_arrivals(&zeros, 0, &mut rng), vec![0, 0, 0]);
        }
    }

    #[test]
    fn bernoulli_mean_within_binomial_ci() {
        // sd of the mean: sqrt(0.4 * 0.6 / 1e5) ~ 0.00155, so 0.005 is > 3 sd.
        let p = ArrivalProcess::iid_bernoulli(&[0.4, 0.4]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let mut sum = [0u64; 2];
        for _ in 0..n {
            let a = sample_arrivals(&p, 0, &mut rng);
            sum[0] += a[0];
            sum[1] += a[1];
        }
        for s in sum {
            assert!((s as f64 / n as f64 - 0.4).abs() < 0.005);
        }
    }

    #[test]
    fn mean_rates() {
        let p = ArrivalProcess::iid_bernoulli(&[0.4]).unwrap();
        assert!((mean_rate(&p).unwrap()[0] - 0.4).abs() < 1e-12);

        let half = FiniteMarkovChain::new(vec![vec![0.5, 0.5], vec![0.5, 0.5]], 0).unwrap();
        let laws = vec![
            vec![BatchDist::bernoulli(0.8).unwrap()],
            vec![BatchDist::bernoulli(0.0).unwrap()],
        ];
        let p = ArrivalProcess::new(half, laws).unwrap();
        assert!((mean_rate(&p).unwrap()[0] - 0.4).abs() < 1e-12);

        let skew = FiniteMarkovChain::new(vec![vec![0.9, 0.1], vec![0.2, 0.8]], 0).unwrap();
        let laws = vec![
            vec![BatchDist::bernoulli(0.3).unwrap()],
            vec![BatchDist::bernoulli(0.6).unwrap()],
        ];
        let p = ArrivalProcess::new(skew, laws).unwrap();
        // 2/3 * 0.3 + 1/3 * 0.6
        assert!((mean_rate(&p).unwrap()[0] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn batch_support_and_scaling() {
        let d = BatchDist::new(vec![0.0, 0.8, 0.2]).unwrap();
        assert!((d.mean() - 1.2).abs() < 1e-12);
        assert_eq!(d.max_batch(), 2);
        let half = d.scaled(0.5).unwrap();
        assert!((half.mean() - 0.6).abs() < 1e-12);
        assert!(d.scaled(1.5).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        assert!((0..1000).all(|_| (1..=2).contains(&d.sample(&mut rng))));
    }

    #[test]
    fn invalid_laws() {
        assert!(BatchDist::bernoulli(1.5).is_err());
        assert!(BatchDist::new(vec![0.5, 0.4]).is_err());
        assert!(BatchDist::new(vec![]).is_err());
    }
}
