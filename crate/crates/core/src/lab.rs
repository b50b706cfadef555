//! Empirical stability diagnostics.
//!
//! None of these decide stability; they are finite-horizon heuristics with
//! explicit thresholds. Everything that is accumulated online supports an
//! associative merge so replications can be reduced in a fixed order.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::potentials::Potential;

pub const DEFAULT_MAX_MOMENT: usize = 4;
pub const DEFAULT_DRIFT_BINS: usize = 20;
pub const MIN_SLOPE_POINTS: usize = 100;
pub const MIN_REGENERATIONS: u64 = 30;
pub const BOUNDED_RATIO: (f64, f64) = (0.8, 1.25);
/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("moment order {h} exceeds the recorded maximum {max}")]
    MomentOrder { h: usize, max: usize },
    #[error("anchor state {0} never visited")]
    AnchorNeverVisited(usize),
    #[error("anchor state {anchor} visited {visits} times, need {need}")]
    TooFewVisits {
        anchor: usize,
        visits: u64,
        need: u64,
    },
    #[error("{0}")]
    Config(String),
}

/// Streaming mean and variance; `merge` is Chan's pairwise update.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Welford {
    pub count: u64,
    pub mean: f64,
    m2: f64,
}

impl Welford {
    pub fn push(&mut self, v: f64) {
        self.count += 1;
        let d = v - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (v - self.mean);
    }

    pub fn merge(&mut self, o: &Welford) {
        if o.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *o;
            return;
        }
        let n = (self.count + o.count) as f64;
        let d = o.mean - self.mean;
        self.mean += d * o.count as f64 / n;
        self.m2 += o.m2 + d * d * self.count as f64 * o.count as f64 / n;
        self.count += o.count;
    }

    /// Unbiased sample variance; `NaN` below two samples.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            f64::NAN
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn std_err(&self) -> f64 {
        (self.variance() / self.count as f64).sqrt()
    }
}

/// One recorded slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub slot: u64,
    pub l1: u64,
    pub l2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRecorder {
    sample_every: u64,
    warmup: u64,
    horizon: u64,
    max_h: usize,
    #[serde(skip)]
    series: Vec<Sample>,
    /// Post-warm-up sums of `||X||_2^h`, `h = 1..=max_h`.
    moment_sums: Vec<f64>,
    moment_count: u64,
    /// The same sums split by quarter of the post-warm-up span.
    quarter_sums: [Vec<f64>; 4],
    quarter_counts: [u64; 4],
}

impl StatsRecorder {
    pub fn new(
        horizon: u64,
        warmup: u64,
        sample_every: u64,
        max_h: usize,
    ) -> Result<Self, LabError> {
        if sample_every == 0 {
            return Err(LabError::Config("recording stride must be >= 1".into()));
        }
        if warmup >= horizon {
            return Err(LabError::Config(format!(
                "warm-up {warmup} must be shorter than the horizon {horizon}"
            )));
        }
        if max_h == 0 {
            return Err(LabError::Config("need at least one moment".into()));
        }
        Ok(Self {
            sample_every,
            warmup,
            horizon,
            max_h,
            series: Vec::with_capacity((horizon / sample_every + 1).min(1 << 24) as usize),
            moment_sums: vec![0.0; max_h],
            moment_count: 0,
            quarter_sums: std::array::from_fn(|_| vec![0.0; max_h]),
            quarter_counts: [0; 4],
        })
    }

    pub fn sample_every(&self) -> u64 {
        self.sample_every
    }

    pub fn max_h(&self) -> usize {
        self.max_h
    }

    pub fn series(&self) -> &[Sample] {
        &self.series
    }

    /// Whether `slot` falls on the recording stride.
    pub fn records(&self, slot: u64) -> bool {
        slot.is_multiple_of(self.sample_every)
    }

    /// Records `x` as the backlog at the end of `slot` if the stride selects it.
    pub fn record(&mut self, slot: u64, x: &[u64]) -> bool {
        if !self.records(slot) {
            return false;
        }
        let l1: u64 = x.iter().sum();
        let l2 = crate::model::l2_norm(x);
        self.series.push(Sample { slot, l1, l2 });
        if slot >= self.warmup {
            let quarter =
                (((slot - self.warmup) * 4) / (self.horizon - self.warmup)).min(3) as usize;
            let mut p = 1.0;
            for h in 0..self.max_h {
                p *= l2;
                self.moment_sums[h] += p;
                self.quarter_sums[quarter][h] += p;
            }
            self.moment_count += 1;
            self.quarter_counts[quarter] += 1;
        }
        true
    }

    /// Adds another replication's accumulators; the series is left alone.
    pub fn merge(&mut self, o: &StatsRecorder) -> Result<(), LabError> {
        if o.max_h != self.max_h || o.horizon != self.horizon || o.warmup != self.warmup {
            return Err(LabError::Config(
                "recorders disagree on horizon, warm-up or moment order".into(),
            ));
        }
        self.moment_sums
            .iter_mut()
            .zip(&o.moment_sums)
            .for_each(|(a, b)| *a += b);
        self.moment_count += o.moment_count;
        for q in 0..4 {
            self.quarter_sums[q]
                .iter_mut()
                .zip(&o.quarter_sums[q])
                .for_each(|(a, b)| *a += b);
            self.quarter_counts[q] += o.quarter_counts[q];
        }
        Ok(())
    }

    /// Post-warm-up time-average of `||X||_1` over the recorded series.
    pub fn mean_l1(&self) -> f64 {
        let post: Vec<_> = self
            .series
            .iter()
            .filter(|s| s.slot >= self.warmup)
            .collect();
        if post.is_empty() {
            0.0
        } else {
            post.iter().map(|s| s.l1 as f64).sum::<f64>() / post.len() as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub h: usize,
    pub time_average: f64,
    /// Mean over the last quarter divided by the mean over the second
    /// quarter of the post-warm-up span.
    pub ratio: f64,
    pub bounded: bool,
}

/// Time-averaged `||X||_2^h` after warm-up, with a growth ratio.
pub fn moment_report(rec: &StatsRecorder, h: usize) -> Result<MomentReport, LabError> {
    if h == 0 || h > rec.max_h {
        return Err(LabError::MomentOrder { h, max: rec.max_h });
    }
    let avg = |sum: f64, n: u64| if n == 0 { 0.0 } else { sum / n as f64 };
    let time_average = avg(rec.moment_sums[h - 1], rec.moment_count);
    let early = avg(rec.quarter_sums[1][h - 1], rec.quarter_counts[1]);
    let late = avg(rec.quarter_sums[3][h - 1], rec.quarter_counts[3]);
    let ratio = match (early == 0.0, late == 0.0) {
        (true, true) => 1.0,
        (true, false) => f64::INFINITY,
        _ => late / early,
    };
    Ok(MomentReport {
        h,
        time_average,
        ratio,
        bounded: (BOUNDED_RATIO.0..=BOUNDED_RATIO.1).contains(&ratio),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Stable,
    Unstable,
    Inconclusive,
}

impl Classification {
    pub fn label(&self) -> &'static str {
        match self {
            Classification::Stable => "stable",
            Classification::Unstable => "unstable",
            Classification::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeConfig {
    /// Number of windows the second half is split into.
    pub windows: usize,
    pub tau_stable: f64,
    pub tau_unstable: f64,
}

impl Default for SlopeConfig {
    fn default() -> Self {
        Self {
            windows: 50,
            tau_stable: 1e-3,
            tau_unstable: 1e-2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeResult {
    /// Customers per slot.
    pub slope: f64,
    pub classification: Classification,
}

/// Least-squares slope of windowed means of `||X||_1` against the slot,
/// over the second half of the series.
pub fn slope_test(series: &[Sample], cfg: &SlopeConfig) -> Result<SlopeResult, LabError> {
    if series.len() < MIN_SLOPE_POINTS {
        return Err(LabError::TooFewPoints {
            need: MIN_SLOPE_POINTS,
            got: series.len(),
        });
    }
    if cfg.windows < 2 {
        return Err(LabError::Config(
            "slope test needs at least two windows".into(),
        ));
    }
    let half = &series[series.len() / 2..];
    let windows = cfg.windows.min(half.len());
    let points: Vec<(f64, f64)> = (0..windows)
        .map(|k| {
            let w = &half[k * half.len() / windows..(k + 1) * half.len() / windows];
            let n = w.len() as f64;
            (
                w.iter().map(|s| s.slot as f64).sum::<f64>() / n,
                w.iter().map(|s| s.l1 as f64).sum::<f64>() / n,
            )
        })
        .collect();
    let slope = least_squares_slope(&points);
    let classification = if slope.abs() < cfg.tau_stable {
        Classification::Stable
    } else if slope > cfg.tau_unstable {
        Classification::Unstable
    } else {
        Classification::Inconclusive
    };
    Ok(SlopeResult {
        slope,
        classification,
    })
}

fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// Online drift statistics keyed by the exact value of `||X_t||_1`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DriftAccumulator {
    /// `(Delta L, Delta L / ||grad G(X_t)||)` per `||X_t||_1`.
    cells: Vec<(Welford, Welford)>,
    transitions: u64,
}

impl DriftAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// One transition out of a state with `||X_t||_1 = l1`. `grad_norm` of
    /// zero leaves the normalized statistic untouched.
    pub fn push(&mut self, l1: u64, delta: f64, grad_norm: f64) {
        let i = l1 as usize;
        if i >= self.cells.len() {
            self.cells.resize(i + 1, Default::default());
        }
        let cell = &mut self.cells[i];
        cell.0.push(delta);
        if grad_norm > 0.0 {
            cell.1.push(delta / grad_norm);
        }
        self.transitions += 1;
    }

    /// Records the transition `x -> y` under potential `g`.
    pub fn push_transition(&mut self, g: &Potential, x: &[u64], y: &[u64]) {
        let xf: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        let mut grad = vec![0.0; x.len()];
        let before = g.value_and_gradient(&xf, &mut grad);
        let norm = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
        self.push(x.iter().sum(), g.value(y) - before, norm);
    }

    pub fn transitions(&self) -> u64 {
        self.transitions
    }

    pub fn merge(&mut self, o: &DriftAccumulator) {
        if o.cells.len() > self.cells.len() {
            self.cells.resize(o.cells.len(), Default::default());
        }
        for (a, b) in self.cells.iter_mut().zip(&o.cells) {
            a.0.merge(&b.0);
            a.1.merge(&b.1);
        }
        self.transitions += o.transitions;
    }

    fn max_l1(&self) -> u64 {
        self.cells.iter().rposition(|c| c.0.count > 0).unwrap_or(0) as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftBin {
    /// `lo <= ||X||_1 < hi`.
    pub lo: f64,
    pub hi: f64,
    pub count: u64,
    pub mean: f64,
    pub std_err: f64,
    pub normalized_count: u64,
    pub normalized_mean: f64,
    pub normalized_std_err: f64,
}

impl DriftBin {
    /// Upper end of the 95% interval for the normalized drift.
    pub fn normalized_upper95(&self) -> f64 {
        let se = self.normalized_std_err;
        if se.is_nan() {
            f64::INFINITY
        } else {
            self.normalized_mean + Z95 * se
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftProfile {
    pub edges: Vec<f64>,
    pub bins: Vec<DriftBin>,
    /// Lower edge of the first bin above which every non-empty bin has
    /// negative mean drift.
    pub negative_from: Option<f64>,
}

impl DriftProfile {
    pub fn top_nonempty(&self) -> Option<&DriftBin> {
        self.bins.iter().rev().find(|b| b.count > 0)
    }
}

/// Geometric bins from 1 to the largest observed `||X||_1` (zero falls in
/// the first bin).
pub fn drift_profile(acc: &DriftAccumulator, bins: usize) -> Result<DriftProfile, LabError> {
    if bins == 0 {
        return Err(LabError::Config("need at least one drift bin".into()));
    }
    let need = 10 * bins;
    if (acc.transitions as usize) < need {
        return Err(LabError::TooFewPoints {
            need,
            got: acc.transitions as usize,
        });
    }
    let top = acc.max_l1() as f64 + 1.0;
    let mut edges: Vec<f64> = (0..=bins)
        .map(|k| top.powf(k as f64 / bins as f64))
        .collect();
    edges[0] = 0.0;
    *edges.last_mut().expect("bins >= 1") = top;
    let mut out = Vec::with_capacity(bins);
    for k in 0..bins {
        let (lo, hi) = (edges[k], edges[k + 1]);
        let (mut raw, mut norm) = (Welford::default(), Welford::default());
        for (l1, cell) in acc.cells.iter().enumerate() {
            let v = l1 as f64;
            if v >= lo && v < hi {
                raw.merge(&cell.0);
                norm.merge(&cell.1);
            }
        }
        out.push(DriftBin {
            lo,
            hi,
            count: raw.count,
            mean: raw.mean,
            std_err: raw.std_err(),
            normalized_count: norm.count,
            normalized_mean: norm.mean,
            normalized_std_err: norm.std_err(),
        });
    }
    let negative_from = {
        let mut from = None;
        for b in out.iter().rev().filter(|b| b.count > 0) {
            if b.mean < 0.0 {
                from = Some(b.lo);
            } else {
                break;
            }
        }
        from
    };
    Ok(DriftProfile {
        edges,
        bins: out,
        negative_from,
    })
}

/// Return-time statistics of an anchor state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegenerationTracker {
    anchor: usize,
    t: u64,
    last: Option<u64>,
    visits: u64,
    gaps: Welford,
    squared: Welford,
}

impl RegenerationTracker {
    pub fn new(anchor: usize) -> Self {
        Self {
            anchor,
            t: 0,
            last: None,
            visits: 0,
            gaps: Welford::default(),
            squared: Welford::default(),
        }
    }

    pub fn push(&mut self, state: usize) {
        if state == self.anchor {
            if let Some(prev) = self.last {
                let z = (self.t - prev) as f64;
                self.gaps.push(z);
                self.squared.push(z * z);
            }
            self.last = Some(self.t);
            self.visits += 1;
        }
        self.t += 1;
    }

    /// Pools gaps; the boundary between replications is not a gap.
    pub fn merge(&mut self, o: &RegenerationTracker) {
        self.visits += o.visits;
        self.gaps.merge(&o.gaps);
        self.squared.merge(&o.squared);
    }

    pub fn finish(&self) -> Result<RegenerationLog, LabError> {
        if self.visits == 0 {
            return Err(LabError::AnchorNeverVisited(self.anchor));
        }
        if self.visits < MIN_REGENERATIONS {
            return Err(LabError::TooFewVisits {
                anchor: self.anchor,
                visits: self.visits,
                need: MIN_REGENERATIONS,
            });
        }
        Ok(RegenerationLog {
            anchor: self.anchor,
            visits: self.visits,
            mean_gap: self.gaps.mean,
            mean_gap_std_err: zero_if_nan(self.gaps.std_err()),
            mean_sq_gap: self.squared.mean,
            mean_sq_gap_std_err: zero_if_nan(self.squared.std_err()),
            gap_variance: zero_if_nan(self.gaps.variance()),
        })
    }
}

fn zero_if_nan(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegenerationLog {
    pub anchor: usize,
    pub visits: u64,
    pub mean_gap: f64,
    pub mean_gap_std_err: f64,
    pub mean_sq_gap: f64,
    pub mean_sq_gap_std_err: f64,
    pub gap_variance: f64,
}

impl RegenerationLog {
    pub fn mean_gap_ci95(&self) -> (f64, f64) {
        (
            self.mean_gap - Z95 * self.mean_gap_std_err,
            self.mean_gap + Z95 * self.mean_gap_std_err,
        )
    }
}

pub fn regeneration_moments(states: &[usize], anchor: usize) -> Result<RegenerationLog, LabError> {
    let mut tr = RegenerationTracker::new(anchor);
    states.iter().for_each(|&s| tr.push(s));
    tr.finish()
}
