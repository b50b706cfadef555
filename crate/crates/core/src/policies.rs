//! Per-slot departure selection.
//!
//! Every policy scores a departure `D` by `<p . D>`, where `p` is the
//! pressure `grad G(Z)(I - R)^T` at some weighting state `Z` (the current
//! backlog, or a stale copy of it), and always returns a vertex of the
//! current region truncated by the *true* backlog. Ties go to the lowest
//! vertex id.
//!
//! The memory variants compare one uniformly drawn vertex against the
//! vertex used last (per constraint state for the dynamic variant), both
//! truncated by the current backlog, and keep the better one; the memorized
//! vertex wins ties. This makes the selected objective nondecreasing
//! against the previous choice by construction, and the exact argmax is
//! selected whenever the draw hits it, i.e. with probability at least
//! `1 / |vertices|`.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::NetworkTopology;
use crate::potentials::Potential;
use crate::regions::{truncate, DepartureRegion};

/// Relative tolerance under which two objective values count as tied.
pub const TIE_TOL: f64 = 1e-12;
/// Tolerance of the monotonicity audit.
pub const MONOTONICITY_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("unknown constraint state {state} (policy knows {known})")]
    UnknownConstraintState { state: usize, known: usize },
    #[error("stale policy needs delay/frame >= 1, got {0}")]
    StaleParameter(usize),
    #[error(
        "memory policy requires static constraints; use memory_dyn with {0} constraint states"
    )]
    MemoryNeedsStatic(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StaleMode {
    /// Weights from the backlog observed `d` slots ago.
    Delay(usize),
    /// Recompute the vertex every `k` slots and hold it in between.
    Frame(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum PolicySpec {
    MaxScalar(Potential),
    Memory(Potential),
    MemoryDynamic(Potential),
    Stale {
        inner: Box<PolicySpec>,
        mode: StaleMode,
    },
}

impl PolicySpec {
    pub fn potential(&self) -> &Potential {
        match self {
            PolicySpec::MaxScalar(g) | PolicySpec::Memory(g) | PolicySpec::MemoryDynamic(g) => g,
            PolicySpec::Stale { inner, .. } => inner.potential(),
        }
    }

    /// Wraps `inner` with stale queue information.
    pub fn wrap_stale(inner: PolicySpec, mode: StaleMode) -> Result<Self, PolicyError> {
        match mode {
            StaleMode::Delay(0) | StaleMode::Frame(0) => Err(PolicyError::StaleParameter(0)),
            _ => Ok(PolicySpec::Stale {
                inner: Box::new(inner),
                mode,
            }),
        }
    }

    /// Innermost selection rule.
    pub fn base(&self) -> &PolicySpec {
        match self {
            PolicySpec::Stale { inner, .. } => inner.base(),
            other => other,
        }
    }

    pub fn uses_memory(&self) -> bool {
        matches!(
            self.base(),
            PolicySpec::Memory(_) | PolicySpec::MemoryDynamic(_)
        )
    }

    pub fn is_dynamic_memory(&self) -> bool {
        matches!(self.base(), PolicySpec::MemoryDynamic(_))
    }

    pub fn describe(&self) -> String {
        match self {
            PolicySpec::MaxScalar(g) => format!("max_scalar({})", g.describe()),
            PolicySpec::Memory(g) => format!("memory({})", g.describe()),
            PolicySpec::MemoryDynamic(g) => format!("memory_dyn({})", g.describe()),
            PolicySpec::Stale {
                inner,
                mode: StaleMode::Delay(d),
            } => format!("stale({}, delay={d})", inner.describe()),
            PolicySpec::Stale {
                inner,
                mode: StaleMode::Frame(k),
            } => format!("frame({}, k={k})", inner.describe()),
        }
    }
}

/// Memorized vertex id per constraint state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyMemory {
    last_vertex: Vec<usize>,
}

impl PolicyMemory {
    /// One entry per constraint state, each starting at that state's zero vertex.
    pub fn new(zero_ids: &[usize]) -> Self {
        Self {
            last_vertex: zero_ids.to_vec(),
        }
    }

    /// Memory for a single static region.
    pub fn for_region(r: &DepartureRegion) -> Self {
        Self::new(&[r.zero_id()])
    }

    pub fn get(&self, state: usize) -> Option<usize> {
        self.last_vertex.get(state).copied()
    }

    pub fn n_states(&self) -> usize {
        self.last_vertex.len()
    }
}

/// A chosen departure.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub vertex_id: usize,
    pub departure: Vec<u64>,
    /// `<pressure . departure>` under the policy's weighting state.
    pub objective: f64,
}

/// `<p . min(v, x)>`.
#[inline]
pub fn truncated_objective(pressure: &[f64], vertex: &[u64], x: &[u64]) -> f64 {
    pressure
        .iter()
        .zip(vertex)
        .zip(x)
        .map(|((p, &v), &q)| p * v.min(q) as f64)
        .sum()
}

#[inline]
fn tie_tol(v: f64) -> f64 {
    TIE_TOL * v.abs().max(1.0)
}

/// Lowest vertex id whose truncated objective is within tie tolerance of
/// the maximum.
pub fn argmax_vertex(pressure: &[f64], x: &[u64], r: &DepartureRegion) -> (usize, f64) {
    let best = r
        .vertices()
        .iter()
        .map(|v| truncated_objective(pressure, v, x))
        .fold(f64::NEG_INFINITY, f64::max);
    let cut = best - tie_tol(best);
    r.vertices()
        .iter()
        .enumerate()
        .map(|(id, v)| (id, truncated_objective(pressure, v, x)))
        .find(|&(_, val)| val >= cut)
        .expect("regions are non-empty")
}

fn pressure_at(g: &Potential, z: &[u64], t: &NetworkTopology) -> Vec<f64> {
    crate::potentials::pressure(g, z, t)
}

fn selection(r: &DepartureRegion, x: &[u64], vertex_id: usize, objective: f64) -> Selection {
    Selection {
        vertex_id,
        departure: truncate(r.vertex(vertex_id), x),
        objective,
    }
}

/// The gradient max-scalar choice at backlog `x`.
pub fn select_max_scalar(
    g: &Potential,
    x: &[u64],
    r: &DepartureRegion,
    t: &NetworkTopology,
) -> Selection {
    let p = pressure_at(g, x, t);
    let (id, obj) = argmax_vertex(&p, x, r);
    selection(r, x, id, obj)
}

/// Keeps the memorized vertex unless the candidate strictly improves on it.
fn pick_and_compare(
    pressure: &[f64],
    x: &[u64],
    r: &DepartureRegion,
    memorized: usize,
    candidate: usize,
) -> (usize, f64) {
    let mem_val = truncated_objective(pressure, r.vertex(memorized), x);
    let cand_val = truncated_objective(pressure, r.vertex(candidate), x);
    if cand_val > mem_val + tie_tol(mem_val) {
        (candidate, cand_val)
    } else {
        (memorized, mem_val)
    }
}

/// Memory policy under static constraints (single memory slot).
pub fn select_with_memory<R: Rng + ?Sized>(
    g: &Potential,
    x: &[u64],
    r: &DepartureRegion,
    t: &NetworkTopology,
    mem: &mut PolicyMemory,
    rng: &mut R,
) -> Selection {
    let p = pressure_at(g, x, t);
    let candidate = rng.random_range(0..r.len());
    let (id, obj) = pick_and_compare(&p, x, r, mem.last_vertex[0], candidate);
    mem.last_vertex[0] = id;
    selection(r, x, id, obj)
}

/// Memory policy under dynamic constraints: compares against the vertex
/// used the last time constraint state `s_d` was visited.
pub fn select_memory_dynamic<R: Rng + ?Sized>(
    g: &Potential,
    x: &[u64],
    r: &DepartureRegion,
    t: &NetworkTopology,
    mem: &mut PolicyMemory,
    s_d: usize,
    rng: &mut R,
) -> Result<Selection, PolicyError> {
    let known = mem.n_states();
    let memorized = mem
        .get(s_d)
        .ok_or(PolicyError::UnknownConstraintState { state: s_d, known })?;
    let p = pressure_at(g, x, t);
    let candidate = rng.random_range(0..r.len());
    let (id, obj) = pick_and_compare(&p, x, r, memorized, candidate);
    mem.last_vertex[s_d] = id;
    Ok(selection(r, x, id, obj))
}

/// Everything a policy sees in one slot.
#[derive(Debug, Clone, Copy)]
pub struct SlotContext<'a> {
    pub topology: &'a NetworkTopology,
    pub region: &'a DepartureRegion,
    pub constraint_state: usize,
}

/// Stateful policy instance owned by one replication.
#[derive(Debug, Clone)]
pub struct Policy {
    spec: PolicySpec,
    runtime: Runtime,
}

#[derive(Debug, Clone)]
enum Runtime {
    MaxScalar {
        g: Potential,
        scratch: Scratch,
    },
    Memory {
        g: Potential,
        memory: PolicyMemory,
        dynamic: bool,
        scratch: Scratch,
    },
    Delay {
        inner: Box<Runtime>,
        delay: usize,
        history: VecDeque<Vec<u64>>,
    },
    Frame {
        inner: Box<Runtime>,
        k: usize,
        age: usize,
        held: Option<(usize, usize)>,
    },
}

#[derive(Debug, Clone, Default)]
struct Scratch {
    xf: Vec<f64>,
    w: Vec<f64>,
    p: Vec<f64>,
}

impl Scratch {
    fn pressure(&mut self, g: &Potential, z: &[u64], t: &NetworkTopology) -> &[f64] {
        let m = z.len();
        self.xf.clear();
        self.xf.extend(z.iter().map(|&v| v as f64));
        self.w.resize(m, 0.0);
        self.p.resize(m, 0.0);
        g.value_and_gradient(&self.xf, &mut self.w);
        t.pressure_into(&self.w, &mut self.p);
        &self.p
    }
}

impl Policy {
    /// `zero_ids[s]` is the zero-vertex id of the region of constraint
    /// state `s`.
    pub fn new(spec: PolicySpec, zero_ids: &[usize]) -> Result<Self, PolicyError> {
        let runtime = build_runtime(&spec, zero_ids)?;
        Ok(Self { spec, runtime })
    }

    pub fn spec(&self) -> &PolicySpec {
        &self.spec
    }

    /// Chooses the departure for backlog `x`.
    pub fn select<R: Rng + ?Sized>(
        &mut self,
        x: &[u64],
        ctx: &SlotContext<'_>,
        rng: &mut R,
    ) -> Result<Selection, PolicyError> {
        let (id, objective) = self.runtime.decide(x, x, ctx, rng)?;
        Ok(selection(ctx.region, x, id, objective))
    }
}

fn build_runtime(spec: &PolicySpec, zero_ids: &[usize]) -> Result<Runtime, PolicyError> {
    Ok(match spec {
        PolicySpec::MaxScalar(g) => Runtime::MaxScalar {
            g: g.clone(),
            scratch: Scratch::default(),
        },
        PolicySpec::Memory(g) => {
            if zero_ids.len() != 1 {
                return Err(PolicyError::MemoryNeedsStatic(zero_ids.len()));
            }
            Runtime::Memory {
                g: g.clone(),
                memory: PolicyMemory::new(zero_ids),
                dynamic: false,
                scratch: Scratch::default(),
            }
        }
        PolicySpec::MemoryDynamic(g) => Runtime::Memory {
            g: g.clone(),
            memory: PolicyMemory::new(zero_ids),
            dynamic: true,
            scratch: Scratch::default(),
        },
        PolicySpec::Stale { inner, mode } => {
            let inner = Box::new(build_runtime(inner, zero_ids)?);
            match *mode {
                StaleMode::Delay(0) | StaleMode::Frame(0) => {
                    return Err(PolicyError::StaleParameter(0))
                }
                StaleMode::Delay(delay) => Runtime::Delay {
                    inner,
                    delay,
                    history: VecDeque::with_capacity(delay + 1),
                },
                StaleMode::Frame(k) => Runtime::Frame {
                    inner,
                    k,
                    age: 0,
                    held: None,
                },
            }
        }
    })
}

impl Runtime {
    /// Returns (vertex id, objective under weighting state `z`); truncation
    /// always uses the true backlog `x`.
    fn decide<R: Rng + ?Sized>(
        &mut self,
        z: &[u64],
        x: &[u64],
        ctx: &SlotContext<'_>,
        rng: &mut R,
    ) -> Result<(usize, f64), PolicyError> {
        match self {
            Runtime::MaxScalar { g, scratch } => {
                let p = scratch.pressure(g, z, ctx.topology);
                Ok(argmax_vertex(p, x, ctx.region))
            }
            Runtime::Memory {
                g,
                memory,
                dynamic,
                scratch,
            } => {
                let slot = if *dynamic { ctx.constraint_state } else { 0 };
                let known = memory.n_states();
                let memorized = memory
                    .get(slot)
                    .ok_or(PolicyError::UnknownConstraintState { state: slot, known })?;
                let p = scratch.pressure(g, z, ctx.topology);
                let candidate = rng.random_range(0..ctx.region.len());
                let (id, obj) = pick_and_compare(p, x, ctx.region, memorized, candidate);
                memory.last_vertex[slot] = id;
                Ok((id, obj))
            }
            Runtime::Delay {
                inner,
                delay,
                history,
            } => {
                history.push_back(z.to_vec());
                if history.len() > *delay + 1 {
                    history.pop_front();
                }
                // Before `delay` slots have elapsed the oldest observation is used.
                let stale = history.front().expect("just pushed").clone();
                inner.decide(&stale, x, ctx, rng)
            }
            Runtime::Frame {
                inner,
                k,
                age,
                held,
            } => {
                let refresh = *age % *k == 0 || held.is_none_or(|(s, _)| s != ctx.constraint_state);
                *age += 1;
                if refresh {
                    let (id, obj) = inner.decide(z, x, ctx, rng)?;
                    *held = Some((ctx.constraint_state, id));
                    Ok((id, obj))
                } else {
                    let (_, id) = held.expect("held after refresh");
                    let xf: Vec<u64> = z.to_vec();
                    let p = crate::potentials::pressure(self_potential(inner), &xf, ctx.topology);
                    Ok((id, truncated_objective(&p, ctx.region.vertex(id), x)))
                }
            }
        }
    }
}

fn self_potential(r: &Runtime) -> &Potential {
    match r {
        Runtime::MaxScalar { g, .. } | Runtime::Memory { g, .. } => g,
        Runtime::Delay { inner, .. } | Runtime::Frame { inner, .. } => self_potential(inner),
    }
}

/// Per-slot certificate for memory policies: the chosen objective never
/// falls below that of the previous departure (the previous one for the
/// same constraint state when `per_state`), and how often the choice is an
/// exact argmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityAudit {
    per_state: bool,
    #[serde(skip)]
    last: Vec<Option<Vec<u64>>>,
    pub slots: u64,
    pub checks: u64,
    pub violations: u64,
    pub worst_shortfall: f64,
    pub argmax_hits: u64,
    /// Sum over slots of `1 / |vertices|`, the guaranteed hit rate.
    pub delta_sum: f64,
}

impl MonotonicityAudit {
    pub fn new(n_states: usize, per_state: bool) -> Self {
        Self {
            per_state,
            last: vec![None; if per_state { n_states } else { 1 }],
            slots: 0,
            checks: 0,
            violations: 0,
            worst_shortfall: 0.0,
            argmax_hits: 0,
            delta_sum: 0.0,
        }
    }

    /// `pressure` must be evaluated at the current backlog `x`.
    pub fn observe(
        &mut self,
        pressure: &[f64],
        x: &[u64],
        region: &DepartureRegion,
        s_d: usize,
        departure: &[u64],
    ) {
        let key = if self.per_state { s_d } else { 0 };
        let chosen: f64 = pressure
            .iter()
            .zip(departure)
            .map(|(p, &d)| p * d as f64)
            .sum();
        if let Some(prev) = &self.last[key] {
            let before: f64 = pressure.iter().zip(prev).map(|(p, &d)| p * d as f64).sum();
            self.checks += 1;
            let shortfall = before - chosen;
            if shortfall > MONOTONICITY_TOL * before.abs().max(1.0) {
                self.violations += 1;
            }
            self.worst_shortfall = self.worst_shortfall.max(shortfall);
        }
        let (_, best) = argmax_vertex(pressure, x, region);
        if chosen >= best - tie_tol(best) {
            self.argmax_hits += 1;
        }
        self.slots += 1;
        self.delta_sum += 1.0 / region.len() as f64;
        self.last[key] = Some(departure.to_vec());
    }

    /// Pools counts from another replication.
    pub fn merge(&mut self, o: &MonotonicityAudit) {
        self.slots += o.slots;
        self.checks += o.checks;
        self.violations += o.violations;
        self.worst_shortfall = self.worst_shortfall.max(o.worst_shortfall);
        self.argmax_hits += o.argmax_hits;
        self.delta_sum += o.delta_sum;
    }

    pub fn argmax_frequency(&self) -> f64 {
        if self.slots == 0 {
            0.0
        } else {
            self.argmax_hits as f64 / self.slots as f64
        }
    }

    /// Mean guaranteed hit probability `delta` over the audited slots.
    pub fn delta(&self) -> f64 {
        if self.slots == 0 {
            0.0
        } else {
            self.delta_sum / self.slots as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::{combine, Combine, Kernel};
    use crate::regions::{feasible_candidates, switch_region};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn quadratic() -> Potential {
        Potential::sum_scalar(Kernel::Power { alpha: 1.0 })
    }

    fn id_of(r: &DepartureRegion, v: &[u64]) -> usize {
        r.vertices().iter().position(|u| u == v).unwrap()
    }

    /// Exhaustive oracle over the deduplicated truncated candidates.
    fn brute_force(p: &[f64], x: &[u64], r: &DepartureRegion) -> (usize, f64) {
        let vals: Vec<(usize, f64)> = feasible_candidates(r, x)
            .into_iter()
            .map(|c| {
                (
                    c.vertex_id,
                    c.departure.iter().zip(p).map(|(&d, w)| d as f64 * w).sum(),
                )
            })
            .collect();
        let best = vals.iter().map(|v| v.1).fold(f64::NEG_INFINITY, f64::max);
        *vals
            .iter()
            .filter(|v| v.1 >= best - TIE_TOL * best.abs().max(1.0))
            .min_by_key(|v| v.0)
            .unwrap()
    }

    #[test]
    fn switch_identity_matching() {
        // Linear weights: the quadratic potential's gradient is the backlog.
        let r = switch_region(2).unwrap();
        let t = NetworkTopology::single_hop(4);
        let s = select_max_scalar(&quadratic(), &[3, 1, 2, 4], &r, &t);
        assert_eq!(s.departure, vec![1, 0, 0, 1]);
        assert_eq!(s.objective, 7.0);
        let zero = select_max_scalar(&quadratic(), &[0; 4], &r, &t);
        assert_eq!(zero.departure, vec![0; 4]);
        assert_eq!(zero.objective, 0.0);
    }

    #[test]
    fn tandem_serves_downstream() {
        let t = NetworkTopology::new(vec![vec![0, 1], vec![0, 0]], None, None).unwrap();
        let r = DepartureRegion::new("r", vec![vec![0, 0], vec![1, 0], vec![0, 1], vec![1, 1]])
            .unwrap();
        let s = select_max_scalar(&quadratic(), &[1, 9], &r, &t);
        assert_eq!(s.departure, vec![0, 1]);
        assert_eq!(s.objective, 9.0);
    }

    #[test]
    fn memory_adopts_better_candidate() {
        let r = switch_region(2).unwrap();
        let t = NetworkTopology::single_hop(4);
        let anti = id_of(&r, &[0, 1, 1, 0]);
        let ident = id_of(&r, &[1, 0, 0, 1]);
        let mut mem = PolicyMemory::new(&[anti]);
        // Draw until the identity matching comes up.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        loop {
            let before = mem.get(0).unwrap();
            let s = select_with_memory(&quadratic(), &[3, 1, 2, 4], &r, &t, &mut mem, &mut rng);
            if s.vertex_id == ident {
                assert_eq!(before, anti);
                assert_eq!(s.objective, 7.0);
                assert_eq!(mem.get(0), Some(ident));
                break;
            }
            assert_eq!(s.vertex_id, anti);
            assert_eq!(s.objective, 3.0);
        }
        // Once the argmax is memorized it is kept.
        for _ in 0..50 {
            let s = select_with_memory(&quadratic(), &[3, 1, 2, 4], &r, &t, &mut mem, &mut rng);
            assert_eq!(s.vertex_id, ident);
        }
    }

    #[test]
    fn memory_on_empty_system_idles() {
        let r = switch_region(2).unwrap();
        let t = NetworkTopology::single_hop(4);
        let mut mem = PolicyMemory::for_region(&r);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let s = select_with_memory(&quadratic(), &[0; 4], &r, &t, &mut mem, &mut rng);
            assert_eq!(s.departure, vec![0; 4]);
        }
    }

    #[test]
    fn dynamic_memory_is_per_state() {
        let full = switch_region(2).unwrap();
        let t = NetworkTopology::single_hop(4);
        let mut mem = PolicyMemory::new(&[0, 0]);
        assert_eq!(mem.get(1), Some(0));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            select_memory_dynamic(
                &quadratic(),
                &[3, 1, 2, 4],
                &full,
                &t,
                &mut mem,
                0,
                &mut rng,
            )
            .unwrap();
        }
        assert_eq!(mem.get(0), Some(id_of(&full, &[1, 0, 0, 1])));
        // State 1 was never visited; it still compares against the zero vertex.
        assert_eq!(mem.get(1), Some(0));
        let err = select_memory_dynamic(&quadratic(), &[1; 4], &full, &t, &mut mem, 2, &mut rng)
            .unwrap_err();
        assert_eq!(
            err,
            PolicyError::UnknownConstraintState { state: 2, known: 2 }
        );
    }

    #[test]
    fn single_state_dynamic_equals_static() {
        let r = switch_region(2).unwrap();
        let t = NetworkTopology::single_hop(4);
        let mut a = Policy::new(PolicySpec::Memory(quadratic()), &[0]).unwrap();
        let mut b = Policy::new(PolicySpec::MemoryDynamic(quadratic()), &[0]).unwrap();
        let (mut ra, mut rb) = (ChaCha8Rng::seed_from_u64(8), ChaCha8Rng::seed_from_u64(8));
        let mut xr = ChaCha8Rng::seed_from_u64(9);
        let ctx = SlotContext {
            topology: &t,
            region: &r,
            constraint_state: 0,
        };
        for _ in 0..500 {
            let x: Vec<u64> = (0..4)
                .map(|_| rand::Rng::random_range(&mut xr, 0..6))
                .collect();
            assert_eq!(
                a.select(&x, &ctx, &mut ra).unwrap(),
                b.select(&x, &ctx, &mut rb).unwrap()
            );
        }
    }

    #[test]
    fn stale_parameters() {
        assert_eq!(
            PolicySpec::wrap_stale(PolicySpec::MaxScalar(quadratic()), StaleMode::Delay(0)),
            Err(PolicyError::StaleParameter(0))
        );
        assert!(
            PolicySpec::wrap_stale(PolicySpec::MaxScalar(quadratic()), StaleMode::Frame(0))
                .is_err()
        );
        assert_eq!(
            Policy::new(PolicySpec::Memory(quadratic()), &[0, 0]).unwrap_err(),
            PolicyError::MemoryNeedsStatic(2)
        );
    }

    #[test]
    fn delay_one_with_constant_state_matches_inner() {
        let r = switch_region(2).unwrap();
        let t = NetworkTopology::single_hop(4);
        let ctx = SlotContext {
            topology: &t,
            region: &r,
            constraint_state: 0,
        };
        let inner = PolicySpec::MaxScalar(quadratic());
        let mut plain = Policy::new(inner.clone(), &[0]).unwrap();
        let mut stale = Policy::new(
            PolicySpec::wrap_stale(inner, StaleMode::Delay(1)).unwrap(),
            &[0],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            let x = [3, 1, 2, 4];
            assert_eq!(
                plain.select(&x, &ctx, &mut rng).unwrap(),
                stale.select(&x, &ctx, &mut rng).unwrap()
            );
        }
    }

    #[test]
    fn delay_uses_old_weights_but_true_truncation() {
        let r = switch_region(2).unwrap();
        let t = NetworkTopology::single_hop(4);
        let ctx = SlotContext {
            topology: &t,
            region: &r,
            constraint_state: 0,
        };
        let mut stale = Policy::new(
            PolicySpec::wrap_stale(PolicySpec::MaxScalar(quadratic()), StaleMode::Delay(1))
                .unwrap(),
            &[0],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        stale.select(&[5, 0, 0, 5], &ctx, &mut rng).unwrap();
        // Weights still favour the identity matching, which is now empty.
        let s = stale.select(&[0, 5, 5, 0], &ctx, &mut rng).unwrap();
        assert_eq!(s.departure, vec![0, 0, 0, 0]);
    }

    #[test]
    fn frame_holds_vertex_between_refreshes() {
        let r = switch_region(2).unwrap();
        let t = NetworkTopology::single_hop(4);
        let ctx = SlotContext {
            topology: &t,
            region: &r,
            constraint_state: 0,
        };
        let mut framed = Policy::new(
            PolicySpec::wrap_stale(PolicySpec::MaxScalar(quadratic()), StaleMode::Frame(3))
                .unwrap(),
            &[0],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let first = framed.select(&[5, 0, 0, 5], &ctx, &mut rng).unwrap();
        let held = framed.select(&[0, 5, 5, 1], &ctx, &mut rng).unwrap();
        assert_eq!(held.vertex_id, first.vertex_id);
        assert_eq!(held.departure, vec![0, 0, 0, 1]);
        framed.select(&[0, 5, 5, 1], &ctx, &mut rng).unwrap();
        let refreshed = framed.select(&[0, 5, 5, 1], &ctx, &mut rng).unwrap();
        assert_eq!(refreshed.departure, vec![0, 1, 1, 0]);
    }

    #[test]
    fn audit_counts() {
        let r = switch_region(2).unwrap();
        let mut audit = MonotonicityAudit::new(1, false);
        let p = [3.0, 1.0, 2.0, 4.0];
        audit.observe(&p, &[3, 1, 2, 4], &r, 0, &[1, 0, 0, 1]);
        audit.observe(&p, &[3, 1, 2, 4], &r, 0, &[0, 1, 1, 0]);
        assert_eq!(audit.checks, 1);
        assert_eq!(audit.violations, 1);
        assert_eq!(audit.argmax_hits, 1);
        assert!((audit.delta() - 1.0 / 7.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn max_scalar_matches_exhaustive_search(
            x in prop::collection::vec(0u64..4, 9),
            w in prop::collection::vec(-5.0f64..10.0, 9),
        ) {
            let r = switch_region(3).unwrap();
            prop_assert_eq!(argmax_vertex(&w, &x, &r), brute_force(&w, &x, &r));
        }

        #[test]
        fn positive_scaling_keeps_vertex(
            x in prop::collection::vec(0u64..6, 4),
            c in 0.01f64..100.0,
        ) {
            let r = switch_region(2).unwrap();
            let t = NetworkTopology::single_hop(4);
            let g = Potential::sum_scalar(Kernel::Log);
            let scaled = combine(Combine::Sum(c, g.clone(), 0.0, g.clone())).unwrap();
            prop_assert_eq!(
                select_max_scalar(&g, &x, &r, &t).vertex_id,
                select_max_scalar(&scaled, &x, &r, &t).vertex_id
            );
        }

        #[test]
        fn selections_are_truncated_vertices(x in prop::collection::vec(0u64..3, 4), seed in 0u64..1000) {
            let r = switch_region(2).unwrap();
            let t = NetworkTopology::single_hop(4);
            let mut mem = PolicyMemory::for_region(&r);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for s in [
                select_max_scalar(&quadratic(), &x, &r, &t),
                select_with_memory(&quadratic(), &x, &r, &t, &mut mem, &mut rng),
            ] {
                prop_assert!(s.departure.iter().zip(&x).all(|(d, q)| d <= q));
                prop_assert_eq!(truncate(r.vertex(s.vertex_id), &x), s.departure);
            }
        }
    }
}
