//! Network topology: virtual queues, the routing matrix and the index maps
//! between physical queues, virtual queues and flows.

use serde::{Deserialize, Serialize};

use super::ModelError;

/// A flow enters the network at `path[0]` and traverses `path` in order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flow {
    pub path: Vec<usize>,
}

impl Flow {
    pub fn source(&self) -> usize {
        self.path[0]
    }

    pub fn destination(&self) -> usize {
        *self.path.last().expect("flow path is non-empty")
    }
}

/// Virtual queues connected by a 0/1 routing matrix.
///
/// Row `m` of the routing matrix names the queue that receives customers
/// departing from queue `m`; an all-zero row means departures leave the
/// network. Construction only checks shapes. Use [`validate_topology`] for
/// the structural invariants (no forking, nilpotent routing, consistent
/// flow paths).
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkTopology {
    routing: Vec<Vec<i64>>,
    physical_of: Vec<usize>,
    n_physical: usize,
    flows: Vec<Flow>,
    successors: Vec<Vec<usize>>,
}

impl NetworkTopology {
    /// Single-hop network: `m` virtual queues, `R = 0`, each queue its own
    /// physical queue and its own flow.
    pub fn single_hop(m: usize) -> Self {
        Self::new(vec![vec![0; m]; m], None, None).expect("zero routing is well-formed")
    }

    /// Builds a topology from a square routing matrix.
    ///
    /// `physical_of[m]` is the physical queue hosting virtual queue `m`
    /// (defaults to one physical queue per virtual queue). When `flows` is
    /// `None` one flow is derived per queue without upstream neighbours by
    /// following the first nonzero entry of each row.
    pub fn new(
        routing: Vec<Vec<i64>>,
        physical_of: Option<Vec<usize>>,
        flows: Option<Vec<Flow>>,
    ) -> Result<Self, ModelError> {
        let m = routing.len();
        if m == 0 {
            return Err(ModelError::Shape(
                "topology needs at least one queue".into(),
            ));
        }
        if let Some(row) = routing.iter().position(|r| r.len() != m) {
            return Err(ModelError::Shape(format!(
                "routing row {row} has {} entries, expected {m}",
                routing[row].len()
            )));
        }
        let physical_of = physical_of.unwrap_or_else(|| (0..m).collect());
        if physical_of.len() != m {
            return Err(ModelError::Shape(format!(
                "physical map has {} entries, expected {m}",
                physical_of.len()
            )));
        }
        let n_physical = physical_of.iter().max().map_or(0, |p| p + 1);
        let successors = successors_of(&routing);
        let flows = match flows {
            Some(f) => {
                if let Some(bad) = f
                    .iter()
                    .find(|f| f.path.is_empty() || f.path.iter().any(|&q| q >= m))
                {
                    return Err(ModelError::Shape(format!(
                        "flow path {:?} is empty or out of range",
                        bad.path
                    )));
                }
                f
            }
            None => derive_flows(&successors),
        };
        Ok(Self {
            routing,
            physical_of,
            n_physical,
            flows,
            successors,
        })
    }

    /// Number of virtual queues `M`.
    pub fn m(&self) -> usize {
        self.routing.len()
    }

    pub fn n_physical(&self) -> usize {
        self.n_physical
    }

    pub fn routing(&self) -> &[Vec<i64>] {
        &self.routing
    }

    pub fn flows(&self) -> &[Flow] {
        &self.flows
    }

    pub fn is_single_hop(&self) -> bool {
        self.successors.iter().all(Vec::is_empty)
    }

    /// Queues receiving the departures of queue `m` (at most one when valid).
    pub fn successors(&self, m: usize) -> &[usize] {
        &self.successors[m]
    }

    /// Virtual queues hosted by physical queue `p`.
    pub fn vq(&self, p: usize) -> Vec<usize> {
        (0..self.m())
            .filter(|&m| self.physical_of[m] == p)
            .collect()
    }

    /// Physical queue hosting virtual queue `m`.
    pub fn pq(&self, m: usize) -> usize {
        self.physical_of[m]
    }

    /// First flow whose path visits virtual queue `m`.
    pub fn fl(&self, m: usize) -> Option<usize> {
        self.flows.iter().position(|f| f.path.contains(&m))
    }

    /// Ordered virtual-queue path of flow `f`.
    pub fn fp(&self, f: usize) -> &[usize] {
        &self.flows[f].path
    }

    /// `w (I - R)^T`: each weight minus the weight of its downstream queue.
    pub fn pressure_into(&self, weights: &[f64], out: &mut [f64]) {
        for (m, o) in out.iter_mut().enumerate() {
            let mut p = weights[m];
            for &s in &self.successors[m] {
                p -= weights[s];
            }
            *o = p;
        }
    }
}

fn successors_of(routing: &[Vec<i64>]) -> Vec<Vec<usize>> {
    routing
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .filter(|(_, &v)| v != 0)
                .map(|(p, _)| p)
                .collect()
        })
        .collect()
}

fn derive_flows(successors: &[Vec<usize>]) -> Vec<Flow> {
    let m = successors.len();
    let mut has_upstream = vec![false; m];
    for succ in successors {
        for &s in succ {
            has_upstream[s] = true;
        }
    }
    let mut flows = Vec::new();
    for start in (0..m).filter(|&q| !has_upstream[q]) {
        let mut path = vec![start];
        let mut cur = start;
        // Bounded by m so a routing cycle cannot loop forever.
        while let Some(&next) = successors[cur].first() {
            if path.len() > m || path.contains(&next) {
                break;
            }
            path.push(next);
            cur = next;
        }
        flows.push(Flow { path });
    }
    flows
}

/// A structural invariant that does not hold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TopologyViolation {
    NonBinary { row: usize, col: usize, value: i64 },
    Forking { row: usize, out_degree: usize },
    NonNilpotentRouting { cycle: Vec<usize> },
    PathInconsistent { flow: usize, from: usize, to: usize },
}

impl std::fmt::Display for TopologyViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::NonBinary { row, col, value } => {
                write!(f, "non-binary routing entry r[{row}][{col}] = {value}")
            }
            Self::Forking { row, out_degree } => {
                write!(f, "forking: queue {row} routes to {out_degree} queues")
            }
            Self::NonNilpotentRouting { cycle } => {
                write!(f, "non-nilpotent routing: cycle through queues {cycle:?}")
            }
            Self::PathInconsistent { flow, from, to } => {
                write!(
                    f,
                    "flow {flow} path step {from} -> {to} has no routing entry"
                )
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyReport {
    pub violations: Vec<TopologyViolation>,
    /// `(I - R)^{-1}`, present iff the topology is valid.
    pub inverse: Option<Vec<Vec<u64>>>,
}

impl TopologyReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks the routing invariants and, when they hold, returns
/// `(I - R)^{-1} = I + R + R^2 + ...` (a finite sum because `R` is nilpotent).
pub fn validate_topology(t: &NetworkTopology) -> TopologyReport {
    let m = t.m();
    let mut violations = Vec::new();
    for (i, row) in t.routing.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if v != 0 && v != 1 {
                violations.push(TopologyViolation::NonBinary {
                    row: i,
                    col: j,
                    value: v,
                });
            }
        }
        let out_degree = row.iter().filter(|&&v| v != 0).count();
        if out_degree > 1 {
            violations.push(TopologyViolation::Forking { row: i, out_degree });
        }
    }
    if let Some(cycle) = find_cycle(&t.successors) {
        violations.push(TopologyViolation::NonNilpotentRouting { cycle });
    }
    for (fi, flow) in t.flows.iter().enumerate() {
        for w in flow.path.windows(2) {
            if t.routing[w[0]][w[1]] != 1 {
                violations.push(TopologyViolation::PathInconsistent {
                    flow: fi,
                    from: w[0],
                    to: w[1],
                });
            }
        }
    }
    let inverse = violations
        .is_empty()
        .then(|| neumann_inverse(&t.routing, m));
    TopologyReport {
        violations,
        inverse,
    }
}

fn neumann_inverse(routing: &[Vec<i64>], m: usize) -> Vec<Vec<u64>> {
    let r: Vec<Vec<u64>> = routing
        .iter()
        .map(|row| row.iter().map(|&v| v as u64).collect())
        .collect();
    let mut term: Vec<Vec<u64>> = (0..m)
        .map(|i| (0..m).map(|j| u64::from(i == j)).collect())
        .collect();
    let mut sum = term.clone();
    for _ in 1..m {
        term = mat_mul(&term, &r);
        if term.iter().all(|row| row.iter().all(|&v| v == 0)) {
            break;
        }
        for (srow, trow) in sum.iter_mut().zip(&term) {
            for (s, v) in srow.iter_mut().zip(trow) {
                *s += v;
            }
        }
    }
    sum
}

fn mat_mul(a: &[Vec<u64>], b: &[Vec<u64>]) -> Vec<Vec<u64>> {
    let n = a.len();
    let mut out = vec![vec![0u64; n]; n];
    for i in 0..n {
        for k in 0..n {
            if a[i][k] == 0 {
                continue;
            }
            for j in 0..n {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

fn find_cycle(successors: &[Vec<usize>]) -> Option<Vec<usize>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Done,
    }
    fn visit(
        v: usize,
        succ: &[Vec<usize>],
        mark: &mut [Mark],
        stack: &mut Vec<usize>,
    ) -> Option<Vec<usize>> {
        mark[v] = Mark::Active;
        stack.push(v);
        for &w in &succ[v] {
            match mark[w] {
                Mark::Active => {
                    let start = stack.iter().position(|&q| q == w).unwrap();
                    return Some(stack[start..].to_vec());
                }
                Mark::New => {
                    if let Some(c) = visit(w, succ, mark, stack) {
                        return Some(c);
                    }
                }
                Mark::Done => {}
            }
        }
        stack.pop();
        mark[v] = Mark::Done;
        None
    }
    let mut mark = vec![Mark::New; successors.len()];
    let mut stack = Vec::new();
    for v in 0..successors.len() {
        if mark[v] == Mark::New {
            if let Some(c) = visit(v, successors, &mut mark, &mut stack) {
                return Some(c);
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tandem_inverse() {
        let t = NetworkTopology::new(vec![vec![0, 1], vec![0, 0]], None, None).unwrap();
        let report = validate_topology(&t);
        assert!(report.is_valid());
        assert_eq!(report.inverse.unwrap(), vec![vec![1, 1], vec![0, 1]]);
        assert_eq!(t.flows(), &[Flow { path: vec![0, 1] }]);
    }

    #[test]
    fn forking_is_reported() {
        let t =
            NetworkTopology::new(vec![vec![0, 1, 1], vec![0; 3], vec![0; 3]], None, None).unwrap();
        let report = validate_topology(&t);
        assert!(report.violations.iter().any(|v| matches!(
            v,
            TopologyViolation::Forking {
                row: 0,
                out_degree: 2
            }
        )));
        assert!(report.inverse.is_none());
    }

    #[test]
    fn two_cycle_is_non_nilpotent() {
        let t = NetworkTopology::new(
            vec![vec![0, 1], vec![1, 0]],
            None,
            Some(vec![Flow { path: vec![0] }]),
        )
        .unwrap();
        let report = validate_topology(&t);
        assert_eq!(
            report.violations,
            vec![TopologyViolation::NonNilpotentRouting { cycle: vec![0, 1] }]
        );
    }

    #[test]
    fn non_binary_and_bad_path() {
        let t = NetworkTopology::new(
            vec![vec![0, 2], vec![0, 0]],
            None,
            Some(vec![Flow { path: vec![1, 0] }]),
        )
        .unwrap();
        let v = validate_topology(&t).violations;
        assert!(v.contains(&TopologyViolation::NonBinary {
            row: 0,
            col: 1,
            value: 2
        }));
        assert!(v.contains(&TopologyViolation::PathInconsistent {
            flow: 0,
            from: 1,
            to: 0
        }));
    }

    #[test]
    fn joining_is_allowed() {
        // Queues 0 and 1 both feed queue 2.
        let t = NetworkTopology::new(vec![vec![0, 0, 1], vec![0, 0, 1], vec![0; 3]], None, None)
            .unwrap();
        let report = validate_topology(&t);
        assert!(report.is_valid());
        assert_eq!(t.flows().len(), 2);
        assert_eq!(t.fl(2), Some(0));
        assert_eq!(t.fp(1), &[1, 2]);
    }

    #[test]
    fn index_maps() {
        let t = NetworkTopology::new(vec![vec![0; 4]; 4], Some(vec![0, 0, 1, 1]), None).unwrap();
        assert_eq!(t.n_physical(), 2);
        assert_eq!(t.vq(1), vec![2, 3]);
        assert_eq!(t.pq(1), 0);
        assert!(t.is_single_hop());
    }

    #[test]
    fn shape_errors() {
        assert!(NetworkTopology::new(vec![vec![0, 0], vec![0]], None, None).is_err());
        assert!(NetworkTopology::new(vec![], None, None).is_err());
        assert!(NetworkTopology::new(vec![vec![0]], Some(vec![0, 1]), None).is_err());
    }
}
