//! Numeric spot checks of the conditions a potential must meet for its
//! gradient max-scalar policy to be throughput optimal.
//!
//! Limits cannot be proved from samples. Every check here evaluates the
//! condition at finite scales and can only refute it; the report keeps
//! numeric verdicts apart from declared (structural) attributes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{norm, MatrixAttributes, Potential};
use crate::model::NetworkTopology;
use crate::regions::DepartureRegion;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckConfig {
    /// Random rays sampled in addition to the axes and the diagonal.
    pub random_rays: usize,
    /// Increasing scales at which each ray is evaluated.
    pub scales: Vec<f64>,
    /// `G(sX0) / (s |X0|)` must exceed this at the largest scale.
    pub growth_threshold: f64,
    /// Allowed `|ratio - 1|` for the sub-exponential checks at the largest scale.
    pub subexp_tol: f64,
    /// Bound on the perturbations `Y` of the sub-exponential check.
    pub perturbation: f64,
    pub boundary_samples: usize,
    pub negder_tol: f64,
    pub orientation_margin: f64,
    pub seed: u64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            random_rays: 16,
            scales: vec![1e2, 1e3, 1e4, 1e5, 1e6],
            growth_threshold: 5.0,
            subexp_tol: 1e-2,
            perturbation: 5.0,
            boundary_samples: 200,
            negder_tol: 1e-9,
            orientation_margin: 1e-3,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    /// Held at every sampled point; `margin` is the worst observed slack.
    PassNumeric { margin: f64 },
    /// Refuted at `witness`.
    Fail { witness: String, margin: f64 },
    /// Taken from the family declaration, not sampled.
    Declared { note: String },
}

impl Verdict {
    pub fn is_fail(&self) -> bool {
        matches!(self, Verdict::Fail { .. })
    }

    pub fn label(&self) -> &'static str {
        match self {
            Verdict::PassNumeric { .. } => "pass (numeric)",
            Verdict::Fail { .. } => "fail (witness)",
            Verdict::Declared { .. } => "declared (structural)",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub potential: String,
    pub asymp_g: Verdict,
    pub subexp: Verdict,
    pub negder: Verdict,
    pub posorien: Verdict,
    pub polynomial_order: Verdict,
    /// Declared order of the first bounded derivative.
    pub h0: u32,
    pub declared_superlinear: bool,
    pub declared_monotonic: bool,
    pub matrices: Vec<MatrixAttributes>,
    pub notes: Vec<String>,
}

impl ValidityReport {
    pub fn is_valid(&self) -> bool {
        ![
            &self.asymp_g,
            &self.subexp,
            &self.negder,
            &self.posorien,
            &self.polynomial_order,
        ]
        .iter()
        .any(|v| v.is_fail())
    }

    pub fn verdicts(&self) -> [(&'static str, &Verdict); 5] {
        [
            ("asympG", &self.asymp_g),
            ("subexp", &self.subexp),
            ("negder", &self.negder),
            ("posorien", &self.posorien),
            ("polynomial-order", &self.polynomial_order),
        ]
    }
}

/// Runs the spot checks of `g` on topology `t`. The orientation check
/// searches for a positive-pressure departure among the vertices of
/// `regions` (or the unit vectors when no region is given).
pub fn check_potential(
    g: &Potential,
    t: &NetworkTopology,
    regions: &[DepartureRegion],
    cfg: &CheckConfig,
) -> ValidityReport {
    let m = t.m();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let rays = sample_rays(m, cfg.random_rays, &mut rng);
    let mut notes = vec![
        "orientation is checked over region vertices only, the departures a policy can use"
            .to_string(),
    ];
    if regions.is_empty() {
        notes.push("no region supplied: orientation checked over unit vectors".into());
    }
    let growth = g.growth();
    let h0 = g.polynomial_order();

    ValidityReport {
        potential: g.describe(),
        asymp_g: check_growth(g, &rays, cfg),
        subexp: check_subexp(g, &rays, cfg, &mut rng),
        negder: check_negder(g, t, cfg, &mut rng),
        posorien: check_orientation(g, t, regions, &rays, cfg),
        polynomial_order: Verdict::Declared {
            note: format!(
                "h0 = {h0} from declared growth x^{} log^{}",
                growth.degree, growth.log_power
            ),
        },
        h0,
        declared_superlinear: growth.superlinear(),
        declared_monotonic: g.is_monotonic(),
        matrices: g.matrix_attributes(),
        notes,
    }
}

/// Unit-norm rays in the nonnegative orthant: axes, diagonal, random.
fn sample_rays(m: usize, random: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut rays = Vec::with_capacity(m + 1 + random);
    for i in 0..m {
        let mut e = vec![0.0; m];
        e[i] = 1.0;
        rays.push(e);
    }
    rays.push(vec![1.0; m]);
    for _ in 0..random {
        rays.push((0..m).map(|_| rng.random::<f64>()).collect());
    }
    for r in &mut rays {
        let n = norm(r).max(f64::MIN_POSITIVE);
        r.iter_mut().for_each(|v| *v /= n);
    }
    rays
}

fn scaled(ray: &[f64], s: f64) -> Vec<f64> {
    ray.iter().map(|v| v * s).collect()
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", parts.join(", "))
}

fn check_growth(g: &Potential, rays: &[Vec<f64>], cfg: &CheckConfig) -> Verdict {
    let mut worst = f64::INFINITY;
    for ray in rays {
        let ratios: Vec<f64> = cfg
            .scales
            .iter()
            .map(|&s| g.value_f(&scaled(ray, s)) / s)
            .collect();
        if let Some(k) = ratios.windows(2).position(|w| !(w[1] > w[0])) {
            return Verdict::Fail {
                witness: format!(
                    "G(sX0)/(s|X0|) not increasing along X0 = {} between s = {:e} and {:e} ({} -> {})",
                    fmt_vec(ray),
                    cfg.scales[k],
                    cfg.scales[k + 1],
                    ratios[k],
                    ratios[k + 1]
                ),
                margin: ratios[k + 1] - ratios[k],
            };
        }
        let last = *ratios.last().unwrap();
        if !(last > cfg.growth_threshold) {
            return Verdict::Fail {
                witness: format!(
                    "G(sX0)/(s|X0|) = {last} at X0 = {} below threshold",
                    fmt_vec(ray)
                ),
                margin: last - cfg.growth_threshold,
            };
        }
        worst = worst.min(last - cfg.growth_threshold);
    }
    Verdict::PassNumeric { margin: worst }
}

fn check_subexp(
    g: &Potential,
    rays: &[Vec<f64>],
    cfg: &CheckConfig,
    rng: &mut ChaCha8Rng,
) -> Verdict {
    let s_lo = cfg.scales[0];
    let s_hi = *cfg.scales.last().unwrap();
    let mut worst: f64 = 0.0;
    // Interior rays only: boundary rays make bounded perturbations leave the orthant.
    for ray in rays.iter().filter(|r| r.iter().all(|&v| v > 1e-3)) {
        let y: Vec<f64> = ray
            .iter()
            .map(|_| cfg.perturbation * (2.0 * rng.random::<f64>() - 1.0))
            .collect();
        let deviation = |s: f64| -> [f64; 3] {
            let x = scaled(ray, s);
            let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
            let value = g.value_f(&xy) / g.value_f(&x);
            let dir =
                |p: &[f64]| -> f64 { g.gradient_f(p).iter().zip(ray).map(|(a, b)| a * b).sum() };
            let slope = dir(&xy) / dir(&x);
            let h = 1e-4 * (1.0 + s);
            let curv = |p: &[f64]| -> f64 {
                let plus: Vec<f64> = p.iter().zip(ray).map(|(a, b)| a + h * b).collect();
                let minus: Vec<f64> = p.iter().zip(ray).map(|(a, b)| a - h * b).collect();
                dir(&plus) - dir(&minus)
            };
            let c_x = curv(&x);
            let curvature = if c_x.abs() > 0.0 {
                curv(&xy) / c_x
            } else {
                1.0
            };
            [
                (value - 1.0).abs(),
                (slope - 1.0).abs(),
                (curvature - 1.0).abs(),
            ]
        };
        let lo = deviation(s_lo);
        let hi = deviation(s_hi);
        for (k, name) in [
            "G(X+Y)/G(X)",
            "<grad G(X+Y).Z>/<grad G(X).Z>",
            "Z H(X+Y) Z/Z H(X) Z",
        ]
        .iter()
        .enumerate()
        {
            if !(hi[k] <= cfg.subexp_tol) || hi[k] > lo[k] + cfg.subexp_tol {
                return Verdict::Fail {
                    witness: format!(
                        "{name} deviates by {:e} at s = {s_hi:e} along {} (Y = {})",
                        hi[k],
                        fmt_vec(ray),
                        fmt_vec(&y)
                    ),
                    margin: cfg.subexp_tol - hi[k],
                };
            }
            worst = worst.max(hi[k]);
        }
    }
    Verdict::PassNumeric {
        margin: cfg.subexp_tol - worst,
    }
}

fn check_negder(
    g: &Potential,
    t: &NetworkTopology,
    cfg: &CheckConfig,
    rng: &mut ChaCha8Rng,
) -> Verdict {
    let m = t.m();
    let mut worst = f64::NEG_INFINITY;
    let mut p = vec![0.0; m];
    for k in 0..cfg.boundary_samples {
        let scale = if k % 2 == 0 { 50.0 } else { 5e4 };
        let mut x: Vec<f64> = (0..m)
            .map(|_| (rng.random::<f64>() * scale).round())
            .collect();
        // Force at least one empty queue.
        let forced = rng.random_range(0..m);
        x[forced] = 0.0;
        for v in x.iter_mut() {
            if rng.random::<f64>() < 0.3 {
                *v = 0.0;
            }
        }
        let d: Vec<f64> = x
            .iter()
            .map(|&v| if v == 0.0 { rng.random::<f64>() } else { 0.0 })
            .collect();
        t.pressure_into(&g.gradient_f(&x), &mut p);
        let val: f64 = p.iter().zip(&d).map(|(a, b)| a * b).sum();
        if val > cfg.negder_tol {
            return Verdict::Fail {
                witness: format!(
                    "<pressure . D> = {val:e} > 0 at X = {}, D = {}",
                    fmt_vec(&x),
                    fmt_vec(&d)
                ),
                margin: cfg.negder_tol - val,
            };
        }
        worst = worst.max(val);
    }
    Verdict::PassNumeric {
        margin: cfg.negder_tol - worst,
    }
}

fn check_orientation(
    g: &Potential,
    t: &NetworkTopology,
    regions: &[DepartureRegion],
    rays: &[Vec<f64>],
    cfg: &CheckConfig,
) -> Verdict {
    let m = t.m();
    let candidates: Vec<Vec<f64>> = if regions.is_empty() {
        (0..m)
            .map(|i| (0..m).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect()
    } else {
        regions
            .iter()
            .flat_map(|r| {
                r.vertices()
                    .iter()
                    .map(|v| v.iter().map(|&c| c as f64).collect())
            })
            .collect()
    };
    let s = *cfg.scales.last().unwrap();
    let mut worst = f64::INFINITY;
    let mut p = vec![0.0; m];
    for ray in rays {
        let x = scaled(ray, s);
        let w = g.gradient_f(&x);
        let wn = norm(&w);
        t.pressure_into(&w, &mut p);
        let best = candidates
            .iter()
            .map(|d| p.iter().zip(d).map(|(a, b)| a * b).sum::<f64>() / wn)
            .fold(f64::NEG_INFINITY, f64::max);
        if !(best >= cfg.orientation_margin) {
            return Verdict::Fail {
                witness: format!(
                    "max <pressure . D>/|grad G| = {best} at X = {s:e} * {}",
                    fmt_vec(ray)
                ),
                margin: best - cfg.orientation_margin,
            };
        }
        worst = worst.min(best - cfg.orientation_margin);
    }
    Verdict::PassNumeric { margin: worst }
}
