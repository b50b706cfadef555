//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use qnet::harness::{Experiment, ExperimentConfig};
use qnet::regions::{feasible_candidates, DepartureRegion};

pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

/// Loads a shipped config, lets the caller adjust it, and resolves it.
pub fn experiment(name: &str, edit: impl FnOnce(&mut ExperimentConfig)) -> Experiment {
    let path = config_path(name);
    let (mut cfg, base) = ExperimentConfig::load(&path).expect("config parses");
    edit(&mut cfg);
    Experiment::from_config(cfg, &base).expect("config resolves")
}

/// Largest `e` with `W e` a convex combination of the vertices, found by
/// solving every square-or-smaller basis `[V_S, -W; 1, 0]` and keeping the
/// nonnegative solutions. Returns `e - 1`.
pub fn brute_force_margin(region: &DepartureRegion, w: &[f64]) -> f64 {
    let m = region.dim();
    let n = region.len();
    assert!(n <= 12, "oracle is exponential in the vertex count");
    let mut best = 0.0f64;
    for mask in 1u32..(1 << n) {
        let ids: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        if ids.len() > m {
            continue;
        }
        let k = ids.len();
        let a = DMatrix::from_fn(m + 1, k + 1, |r, c| match (r < m, c < k) {
            (true, true) => region.vertex(ids[c])[r] as f64,
            (true, false) => -w[r],
            (false, true) => 1.0,
            (false, false) => 0.0,
        });
        let mut b = DVector::zeros(m + 1);
        b[m] = 1.0;
        let svd = a.clone().svd(true, true);
        let Ok(sol) = svd.solve(&b, 1e-12) else {
            continue;
        };
        let residual = (&a * &sol - &b).amax();
        if residual < 1e-9 && sol.iter().all(|&v| v >= -1e-12) {
            best = best.max(sol[k]);
        }
    }
    best - 1.0
}

/// Exhaustive argmax of `<p . D>` over the feasible truncated candidates;
/// ties go to the lowest vertex id.
pub fn brute_force_argmax(p: &[f64], x: &[u64], r: &DepartureRegion) -> (usize, Vec<u64>) {
    let scored: Vec<(usize, Vec<u64>, f64)> = feasible_candidates(r, x)
        .into_iter()
        .map(|c| {
            let v = c.departure.iter().zip(p).map(|(&d, w)| d as f64 * w).sum();
            (c.vertex_id, c.departure, v)
        })
        .collect();
    let best = scored.iter().map(|s| s.2).fold(f64::NEG_INFINITY, f64::max);
    let tol = 1e-12 * best.abs().max(1.0);
    let (id, d, _) = scored
        .into_iter()
        .filter(|s| s.2 >= best - tol)
        .min_by_key(|s| s.0)
        .expect("zero vertex is always a candidate");
    (id, d)
}

/// Hand-built regions with at most eight vertices.
pub fn small_regions() -> Vec<DepartureRegion> {
    vec![
        DepartureRegion::new(
            "wedge",
            vec![
                vec![0, 0, 0],
                vec![1, 0, 0],
                vec![0, 1, 0],
                vec![0, 0, 1],
                vec![1, 1, 0],
            ],
        )
        .unwrap(),
        DepartureRegion::new("skew", vec![vec![0, 0], vec![2, 0], vec![1, 1], vec![0, 3]]).unwrap(),
        DepartureRegion::new(
            "eight",
            vec![
                vec![0, 0, 0],
                vec![1, 0, 0],
                vec![0, 1, 0],
                vec![0, 0, 1],
                vec![1, 1, 0],
                vec![0, 1, 1],
                vec![2, 0, 0],
                vec![1, 0, 1],
            ],
        )
        .unwrap(),
    ]
}
