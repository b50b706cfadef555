//! Dense two-phase simplex with Bland's anti-cycling rule.

const EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub coefficients: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

/// `maximize objective . x` subject to the constraints and `x >= 0`.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible,
    Unbounded,
}

struct Tableau {
    /// Constraint rows, each with the right-hand side in the last column.
    rows: Vec<Vec<f64>>,
    basis: Vec<usize>,
    n_cols: usize,
}

impl Tableau {
    fn rhs(&self, i: usize) -> f64 {
        self.rows[i][self.n_cols]
    }

    fn pivot(&mut self, r: usize, c: usize, obj: &mut [f64]) {
        let p = self.rows[r][c];
        self.rows[r].iter_mut().for_each(|v| *v /= p);
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i != r {
                eliminate(row, &pivot_row, c);
            }
        }
        eliminate(obj, &pivot_row, c);
        self.basis[r] = c;
    }

    /// Maximizes with reduced costs held in `obj` (`obj[j] > 0` improves).
    /// Returns `false` if unbounded.
    fn optimize(&mut self, obj: &mut [f64], allowed: &dyn Fn(usize) -> bool) -> bool {
        loop {
            let Some(c) = (0..self.n_cols).find(|&j| allowed(j) && obj[j] > EPS) else {
                return true;
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows.len() {
                let a = self.rows[i][c];
                if a > EPS {
                    let ratio = self.rhs(i) / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((j, best)) => {
                            if ratio < best - EPS
                                || (ratio <= best + EPS && self.basis[i] < self.basis[j])
                            {
                                Some((i, ratio))
                            } else {
                                Some((j, best))
                            }
                        }
                    };
                }
            }
            let Some((r, _)) = leave else { return false };
            self.pivot(r, c, obj);
        }
    }
}

fn eliminate(row: &mut [f64], pivot_row: &[f64], c: usize) {
    let f = row[c];
    if f != 0.0 {
        row.iter_mut().zip(pivot_row).for_each(|(v, p)| *v -= f * p);
        row[c] = 0.0;
    }
}

/// Reduced-cost row `c - c_B B^{-1} A` (value in the last slot) for the
/// current basis.
fn reduced_costs(t: &Tableau, cost: &[f64]) -> Vec<f64> {
    let mut obj = cost.to_vec();
    obj.push(0.0);
    for (i, &b) in t.basis.iter().enumerate() {
        let cb = cost[b];
        if cb != 0.0 {
            obj.iter_mut()
                .zip(&t.rows[i])
                .for_each(|(o, a)| *o -= cb * a);
        }
    }
    obj
}

pub fn solve(lp: &LinearProgram) -> LpOutcome {
    let n = lp.objective.len();
    let m = lp.constraints.len();
    let n_slack = lp
        .constraints
        .iter()
        .filter(|c| c.relation != Relation::Eq)
        .count();

    // Columns: structural, slack/surplus, artificial.
    let mut rows = Vec::with_capacity(m);
    let mut basis = Vec::with_capacity(m);
    let mut needs_artificial = Vec::new();
    let mut slack = n;
    for (i, c) in lp.constraints.iter().enumerate() {
        assert_eq!(
            c.coefficients.len(),
            n,
            "constraint {i} has the wrong width"
        );
        let flip = c.rhs < 0.0;
        let s = if flip { -1.0 } else { 1.0 };
        let mut row = vec![0.0; n + n_slack];
        row[..n]
            .iter_mut()
            .zip(&c.coefficients)
            .for_each(|(r, a)| *r = s * a);
        let relation = match (c.relation, flip) {
            (Relation::Le, true) => Relation::Ge,
            (Relation::Ge, true) => Relation::Le,
            (r, _) => r,
        };
        match relation {
            Relation::Le => {
                row[slack] = 1.0;
                basis.push(slack);
                slack += 1;
            }
            Relation::Ge => {
                row[slack] = -1.0;
                slack += 1;
                basis.push(usize::MAX);
                needs_artificial.push(i);
            }
            Relation::Eq => {
                basis.push(usize::MAX);
                needs_artificial.push(i);
            }
        }
        row.push(s * c.rhs);
        rows.push(row);
    }
    let first_art = n + n_slack;
    let n_cols = first_art + needs_artificial.len();
    for row in rows.iter_mut() {
        let rhs = row.pop().expect("rhs");
        row.resize(n_cols, 0.0);
        row.push(rhs);
    }
    for (k, &i) in needs_artificial.iter().enumerate() {
        rows[i][first_art + k] = 1.0;
        basis[i] = first_art + k;
    }
    let mut t = Tableau {
        rows,
        basis,
        n_cols,
    };

    if !needs_artificial.is_empty() {
        let mut cost = vec![0.0; n_cols];
        cost[first_art..].iter_mut().for_each(|c| *c = -1.0);
        let mut obj = reduced_costs(&t, &cost);
        t.optimize(&mut obj, &|_| true);
        let infeasibility: f64 = t
            .basis
            .iter()
            .enumerate()
            .filter(|&(_, &b)| b >= first_art)
            .map(|(i, _)| t.rhs(i))
            .sum();
        if infeasibility > 1e-9 {
            return LpOutcome::Infeasible;
        }
        // Drive zero-valued artificials out of the basis where possible;
        // rows where that fails are redundant and stay at zero.
        for i in 0..m {
            if t.basis[i] >= first_art {
                if let Some(c) = (0..first_art).find(|&j| t.rows[i][j].abs() > 1e-9) {
                    let mut dummy = vec![0.0; n_cols + 1];
                    t.pivot(i, c, &mut dummy);
                }
            }
        }
    }

    let mut cost = vec![0.0; n_cols];
    cost[..n].copy_from_slice(&lp.objective);
    let mut obj = reduced_costs(&t, &cost);
    if !t.optimize(&mut obj, &|j| j < first_art) {
        return LpOutcome::Unbounded;
    }
    let mut x = vec![0.0; n];
    for (i, &b) in t.basis.iter().enumerate() {
        if b < n {
            x[b] = t.rhs(i).max(0.0);
        }
    }
    let value = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
    LpOutcome::Optimal { x, value }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(coefficients: Vec<f64>, relation: Relation, rhs: f64) -> Constraint {
        Constraint {
            coefficients,
            relation,
            rhs,
        }
    }

    fn value(o: &LpOutcome) -> f64 {
        match o {
            LpOutcome::Optimal { value, .. } => *value,
            other => panic!("not optimal: {other:?}"),
        }
    }

    #[test]
    fn textbook_maximum() {
        // max 3x + 5y, x <= 4, 2y <= 12, 3x + 2y <= 18 -> (2, 6), 36.
        let lp = LinearProgram {
            objective: vec![3.0, 5.0],
            constraints: vec![
                c(vec![1.0, 0.0], Relation::Le, 4.0),
                c(vec![0.0, 2.0], Relation::Le, 12.0),
                c(vec![3.0, 2.0], Relation::Le, 18.0),
            ],
        };
        let out = solve(&lp);
        assert!((value(&out) - 36.0).abs() < 1e-9);
        let LpOutcome::Optimal { x, .. } = out else {
            unreachable!()
        };
        assert!((x[0] - 2.0).abs() < 1e-9 && (x[1] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn equalities_and_surplus() {
        // max -x - y, x + y = 3, x >= 1 -> -3.
        let lp = LinearProgram {
            objective: vec![-1.0, -1.0],
            constraints: vec![
                c(vec![1.0, 1.0], Relation::Eq, 3.0),
                c(vec![1.0, 0.0], Relation::Ge, 1.0),
            ],
        };
        assert!((value(&solve(&lp)) + 3.0).abs() < 1e-9);
    }

    #[test]
    fn negative_rhs_is_normalized() {
        // -x <= -2 means x >= 2; max -x -> -2.
        let lp = LinearProgram {
            objective: vec![-1.0],
            constraints: vec![c(vec![-1.0], Relation::Le, -2.0)],
        };
        assert!((value(&solve(&lp)) + 2.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let infeasible = LinearProgram {
            objective: vec![1.0],
            constraints: vec![
                c(vec![1.0], Relation::Le, 1.0),
                c(vec![1.0], Relation::Ge, 2.0),
            ],
        };
        assert_eq!(solve(&infeasible), LpOutcome::Infeasible);
        let unbounded = LinearProgram {
            objective: vec![1.0, 0.0],
            constraints: vec![c(vec![0.0, 1.0], Relation::Le, 1.0)],
        };
        assert_eq!(solve(&unbounded), LpOutcome::Unbounded);
    }

    #[test]
    fn redundant_equalities() {
        let lp = LinearProgram {
            objective: vec![1.0, 2.0],
            constraints: vec![
                c(vec![1.0, 1.0], Relation::Eq, 1.0),
                c(vec![2.0, 2.0], Relation::Eq, 2.0),
            ],
        };
        assert!((value(&solve(&lp)) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_cycling_example() {
        // Beale's example cycles under the largest-coefficient rule.
        let lp = LinearProgram {
            objective: vec![0.75, -150.0, 0.02, -6.0],
            constraints: vec![
                c(vec![0.25, -60.0, -0.04, 9.0], Relation::Le, 0.0),
                c(vec![0.5, -90.0, -0.02, 3.0], Relation::Le, 0.0),
                c(vec![0.0, 0.0, 1.0, 0.0], Relation::Le, 1.0),
            ],
        };
        assert!((value(&solve(&lp)) - 0.05).abs() < 1e-9);
    }
}
