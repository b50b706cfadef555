//! Departure regions as explicit vertex lists.
//!
//! A region is the convex hull of finitely many feasible departure vectors.
//! Only the vertices are stored: every max-scalar objective is linear, so an
//! argmax over the hull is attained at a vertex. Backlog feasibility
//! (`D <= X`) is imposed by truncating vertices componentwise, which keeps
//! the idle vector and every partial service available.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest switch size whose matchings are enumerated (13,327 at 6 ports).
pub const MAX_SWITCH_PORTS: usize = 6;
/// Largest contention graph whose independent sets are enumerated.
pub const MAX_CONTENTION_NODES: usize = 24;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegionError {
    #[error("{what} of size {size} exceeds the enumeration limit {limit}")]
    TooLarge {
        what: &'static str,
        size: usize,
        limit: usize,
    },
    #[error("invalid region: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepartureRegion {
    label: String,
    vertices: Vec<Vec<u64>>,
}

impl DepartureRegion {
    /// Validates that vertices share one length, are distinct and include
    /// the zero vector.
    pub fn new(label: impl Into<String>, vertices: Vec<Vec<u64>>) -> Result<Self, RegionError> {
        let label = label.into();
        let Some(first) = vertices.first() else {
            return Err(RegionError::Invalid(format!(
                "region {label:?} has no vertices"
            )));
        };
        let m = first.len();
        if m == 0 {
            return Err(RegionError::Invalid(format!(
                "region {label:?} has zero-length vertices"
            )));
        }
        if vertices.iter().any(|v| v.len() != m) {
            return Err(RegionError::Invalid(format!(
                "region {label:?} mixes vertex lengths"
            )));
        }
        let mut seen = HashSet::with_capacity(vertices.len());
        if let Some(dup) = vertices.iter().find(|v| !seen.insert(*v)) {
            return Err(RegionError::Invalid(format!(
                "region {label:?} repeats vertex {dup:?}"
            )));
        }
        if !vertices.iter().any(|v| v.iter().all(|&c| c == 0)) {
            return Err(RegionError::Invalid(format!(
                "region {label:?} lacks the idle (zero) vertex"
            )));
        }
        Ok(Self { label, vertices })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn vertices(&self) -> &[Vec<u64>] {
        &self.vertices
    }

    pub fn vertex(&self, id: usize) -> &[u64] {
        &self.vertices[id]
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Queue count `M`.
    pub fn dim(&self) -> usize {
        self.vertices[0].len()
    }

    /// Componentwise bound on every vertex.
    pub fn d_max(&self) -> u64 {
        self.vertices.iter().flatten().copied().max().unwrap_or(0)
    }

    pub fn zero_id(&self) -> usize {
        self.vertices
            .iter()
            .position(|v| v.iter().all(|&c| c == 0))
            .expect("validated at construction")
    }

    /// Queues `a` and `b` conflict when no vertex serves both. Each queue
    /// conflicts with itself.
    pub fn conflicts(&self, a: usize, b: usize) -> bool {
        a == b || !self.vertices.iter().any(|v| v[a] > 0 && v[b] > 0)
    }

    /// 0/1 matrix of [`DepartureRegion::conflicts`], the LPF weighting matrix.
    pub fn conflict_matrix(&self) -> Vec<Vec<f64>> {
        let m = self.dim();
        (0..m)
            .map(|a| {
                (0..m)
                    .map(|b| if self.conflicts(a, b) { 1.0 } else { 0.0 })
                    .collect()
            })
            .collect()
    }

    /// Copy without the listed vertices (the zero vertex cannot be removed).
    pub fn without(
        &self,
        label: impl Into<String>,
        drop: &[Vec<u64>],
    ) -> Result<Self, RegionError> {
        let kept = self
            .vertices
            .iter()
            .filter(|v| !drop.contains(v))
            .cloned()
            .collect();
        Self::new(label, kept)
    }
}

/// Undirected conflict graph, one node per virtual queue.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContentionGraph {
    n_vertices: usize,
    edges: Vec<(usize, usize)>,
}

impl ContentionGraph {
    pub fn new(n_vertices: usize, edges: Vec<(usize, usize)>) -> Result<Self, RegionError> {
        for &(a, b) in &edges {
            if a == b {
                return Err(RegionError::Invalid(format!("self-loop at node {a}")));
            }
            if a >= n_vertices || b >= n_vertices {
                return Err(RegionError::Invalid(format!(
                    "edge ({a}, {b}) out of range"
                )));
            }
        }
        Ok(Self { n_vertices, edges })
    }

    /// Path graph `0 - 1 - ... - (n-1)`.
    pub fn path(n: usize) -> Self {
        Self::new(n, (1..n).map(|i| (i - 1, i)).collect()).expect("path graph")
    }

    /// Conflicts of an `n x n` input-queued switch: VOQ `i*n + j` conflicts
    /// with every VOQ on input `i` or towards output `j`.
    pub fn switch(n: usize) -> Self {
        let mut edges = Vec::new();
        for a in 0..n * n {
            for b in a + 1..n * n {
                if a / n == b / n || a % n == b % n {
                    edges.push((a, b));
                }
            }
        }
        Self::new(n * n, edges).expect("switch graph")
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }
}

/// Sub-permutation matrices of an `n x n` switch, flattened row-major so
/// that VOQ `i*n + j` is input `i`, output `j`. The zero matching is id 0.
pub fn switch_region(n: usize) -> Result<DepartureRegion, RegionError> {
    if n == 0 {
        return Err(RegionError::Invalid(
            "switch needs at least one port".into(),
        ));
    }
    if n > MAX_SWITCH_PORTS {
        return Err(RegionError::TooLarge {
            what: "switch",
            size: n,
            limit: MAX_SWITCH_PORTS,
        });
    }
    fn extend(
        row: usize,
        n: usize,
        used: &mut [bool],
        cur: &mut Vec<u64>,
        out: &mut Vec<Vec<u64>>,
    ) {
        if row == n {
            out.push(cur.clone());
            return;
        }
        extend(row + 1, n, used, cur, out);
        for col in 0..n {
            if !used[col] {
                used[col] = true;
                cur[row * n + col] = 1;
                extend(row + 1, n, used, cur, out);
                cur[row * n + col] = 0;
                used[col] = false;
            }
        }
    }
    let mut out = Vec::new();
    extend(0, n, &mut vec![false; n], &mut vec![0; n * n], &mut out);
    DepartureRegion::new(format!("switch{n}"), out)
}

/// Indicator vectors of all independent sets, in increasing bitmask order
/// (the empty set is id 0).
pub fn independent_set_region(g: &ContentionGraph) -> Result<DepartureRegion, RegionError> {
    let n = g.n_vertices;
    if n == 0 {
        return Err(RegionError::Invalid("contention graph has no nodes".into()));
    }
    if n > MAX_CONTENTION_NODES {
        return Err(RegionError::TooLarge {
            what: "contention graph",
            size: n,
            limit: MAX_CONTENTION_NODES,
        });
    }
    let mut adj = vec![0u32; n];
    for &(a, b) in &g.edges {
        adj[a] |= 1 << b;
        adj[b] |= 1 << a;
    }
    let mut out = Vec::new();
    for mask in 0u32..(1u32 << n) {
        let independent = (0..n).all(|v| mask & (1 << v) == 0 || adj[v] & mask == 0);
        if independent {
            out.push((0..n).map(|v| u64::from(mask & (1 << v) != 0)).collect());
        }
    }
    DepartureRegion::new("contention", out)
}

/// Componentwise `min(d, x)`.
pub fn truncate(d: &[u64], x: &[u64]) -> Vec<u64> {
    d.iter().zip(x).map(|(&a, &b)| a.min(b)).collect()
}

/// A backlog-feasible departure vector and the vertex it was cut from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub vertex_id: usize,
    pub departure: Vec<u64>,
}

/// Distinct truncations of the region's vertices by `x`, each tagged with the
/// lowest vertex id producing it.
pub fn feasible_candidates(r: &DepartureRegion, x: &[u64]) -> Vec<Candidate> {
    let mut seen = HashSet::with_capacity(r.len());
    r.vertices
        .iter()
        .enumerate()
        .filter_map(|(vertex_id, v)| {
            let departure = truncate(v, x);
            seen.insert(departure.clone()).then_some(Candidate {
                vertex_id,
                departure,
            })
        })
        .collect()
}
