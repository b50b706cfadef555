//! Experiment configuration (TOML) and its resolution into model objects.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::lab::{SlopeConfig, DEFAULT_DRIFT_BINS, DEFAULT_MAX_MOMENT};
use crate::lang::{parse_matrix_text, parse_policy, parse_potential};
use crate::model::{
    mean_rate, validate_topology, ArrivalProcess, BatchDist, ConstraintProcess, FiniteMarkovChain,
    Flow, NetworkTopology,
};
use crate::policies::PolicySpec;
use crate::potentials::{CheckConfig, Potential};
use crate::regions::{independent_set_region, switch_region, ContentionGraph, DepartureRegion};

fn default_replications() -> usize {
    1
}
fn default_warmup() -> f64 {
    0.1
}
fn default_stride() -> u64 {
    1
}
fn default_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub slots: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_replications")]
    pub replications: usize,
    /// Fraction of slots discarded before summary statistics.
    #[serde(default = "default_warmup")]
    pub warmup_fraction: f64,
    /// Stride of the in-memory series used by the lab.
    #[serde(default = "default_stride")]
    pub record_every: u64,
    /// Stride of CSV rows; defaults to `record_every`.
    #[serde(default)]
    pub csv_every: Option<u64>,
    #[serde(default)]
    pub allow_unvalidated: bool,
    pub policy: String,
    /// Potential used for drift profiling; defaults to the policy's.
    #[serde(default)]
    pub drift_potential: Option<String>,
    #[serde(default)]
    pub topology: TopologySpec,
    pub regions: BTreeMap<String, RegionSpec>,
    #[serde(default)]
    pub constraints: Option<ConstraintSpec>,
    pub arrivals: ArrivalSpec,
    #[serde(default)]
    pub matrices: BTreeMap<String, MatrixSpec>,
    #[serde(default)]
    pub lab: LabSpec,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub check: Option<CheckConfig>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    /// 0/1 routing matrix; single-hop when absent.
    #[serde(default)]
    pub routing: Option<Vec<Vec<i64>>>,
    #[serde(default)]
    pub physical_of: Option<Vec<usize>>,
    #[serde(default)]
    pub flows: Option<Vec<Vec<usize>>>,
}

/// One of: `preset = "switch"` with `n`; `preset = "path"` with `nodes`;
/// `preset = "contention"` with `nodes` and `edges`; explicit `vertices`;
/// or `base` with `drop` (a named region minus some vertices).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSpec {
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub nodes: Option<usize>,
    #[serde(default)]
    pub edges: Option<Vec<[usize; 2]>>,
    #[serde(default)]
    pub vertices: Option<Vec<Vec<u64>>>,
    #[serde(default)]
    pub base: Option<String>,
    #[serde(default)]
    pub drop: Option<Vec<Vec<u64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSpec {
    #[serde(default)]
    pub transition: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub initial: usize,
    /// Region name per constraint state.
    pub regions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrivalSpec {
    #[serde(default)]
    pub transition: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub initial: usize,
    /// Bernoulli rate per state and queue.
    #[serde(default)]
    pub rates: Option<Vec<Vec<f64>>>,
    /// Batch-size pmf per state and queue.
    #[serde(default)]
    pub batches: Option<Vec<Vec<Vec<f64>>>>,
    /// Load multiplier applied to every law.
    #[serde(default = "default_scale")]
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Inline(Vec<Vec<f64>>),
    /// Path to whitespace-separated rows, relative to the config file.
    File(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabSpec {
    pub slope_windows: usize,
    pub tau_stable: f64,
    pub tau_unstable: f64,
    pub drift_bins: usize,
    pub max_moment: usize,
    /// Per-slot monotonicity audit for memory policies.
    pub audit: bool,
}

impl Default for LabSpec {
    fn default() -> Self {
        let s = SlopeConfig::default();
        Self {
            slope_windows: s.windows,
            tau_stable: s.tau_stable,
            tau_unstable: s.tau_unstable,
            drift_bins: DEFAULT_DRIFT_BINS,
            max_moment: DEFAULT_MAX_MOMENT,
            audit: true,
        }
    }
}

impl LabSpec {
    pub fn slope(&self) -> SlopeConfig {
        SlopeConfig {
            windows: self.slope_windows,
            tau_stable: self.tau_stable,
            tau_unstable: self.tau_unstable,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub grid: Vec<f64>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<(Self, PathBuf), HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((Self::from_toml(&text)?, base))
    }

    pub fn warmup_slots(&self) -> u64 {
        (self.slots as f64 * self.warmup_fraction).floor() as u64
    }

    pub fn csv_stride(&self) -> u64 {
        self.csv_every.unwrap_or(self.record_every)
    }
}

/// A config resolved into model objects.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub topology: NetworkTopology,
    pub arrivals: ArrivalProcess,
    pub constraints: ConstraintProcess,
    /// Indexed by `constraints.region_of(state)`.
    pub regions: Vec<DepartureRegion>,
    pub policy: PolicySpec,
    pub drift_potential: Potential,
    /// Stationary mean arrival rate.
    pub lambda: Vec<f64>,
}

impl Experiment {
    pub fn from_config(config: ExperimentConfig, base_dir: &Path) -> Result<Self, HarnessError> {
        let cfg = |m: String| HarnessError::Config(m);
        if config.slots == 0 {
            return Err(cfg("slots must be >= 1".into()));
        }
        if config.replications == 0 {
            return Err(cfg("replications must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&config.warmup_fraction) {
            return Err(cfg(format!(
                "warmup_fraction {} must lie in [0, 1)",
                config.warmup_fraction
            )));
        }
        if config.record_every == 0 || config.csv_stride() == 0 {
            return Err(cfg("recording strides must be >= 1".into()));
        }

        let built = build_regions(&config.regions)?;
        let (constraints, regions) = build_constraints(config.constraints.as_ref(), &built)?;
        let m = match &config.topology.routing {
            Some(r) => r.len(),
            None => regions[0].dim(),
        };
        let topology = match &config.topology.routing {
            Some(r) => NetworkTopology::new(
                r.clone(),
                config.topology.physical_of.clone(),
                config
                    .topology
                    .flows
                    .clone()
                    .map(|f| f.into_iter().map(|path| Flow { path }).collect()),
            )
            .map_err(|e| cfg(format!("topology: {e}")))?,
            None => NetworkTopology::single_hop(m),
        };
        let report = validate_topology(&topology);
        if !report.is_valid() {
            let v: Vec<String> = report.violations.iter().map(|v| v.to_string()).collect();
            return Err(cfg(format!("topology: {}", v.join("; "))));
        }
        for r in &regions {
            if r.dim() != m {
                return Err(cfg(format!(
                    "region '{}' has {} queues, topology has {m}",
                    r.label(),
                    r.dim()
                )));
            }
        }

        let arrivals = build_arrivals(&config.arrivals, m)?;
        let lambda = mean_rate(&arrivals).map_err(|e| cfg(format!("arrivals: {e}")))?;

        let resolver = |name: &str| resolve_matrix(name, &config.matrices, &regions, base_dir);
        let policy =
            parse_policy(&config.policy, &resolver).map_err(|e| cfg(format!("policy: {e}")))?;
        let drift_potential = match &config.drift_potential {
            Some(src) => {
                parse_potential(src, &resolver).map_err(|e| cfg(format!("drift_potential: {e}")))?
            }
            None => policy.potential().clone(),
        };
        for g in [policy.potential(), &drift_potential] {
            g.check_dim(m).map_err(|e| cfg(format!("potential: {e}")))?;
        }
        if matches!(policy.base(), PolicySpec::Memory(_)) && constraints.chain().n_states() > 1 {
            return Err(cfg(format!(
                "memory(...) requires static constraints; use memory_dyn(...) with {} constraint states",
                constraints.chain().n_states()
            )));
        }
        Ok(Self {
            config,
            topology,
            arrivals,
            constraints,
            regions,
            policy,
            drift_potential,
            lambda,
        })
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let (cfg, base) = ExperimentConfig::load(path)?;
        Self::from_config(cfg, &base)
    }

    /// The same experiment with every arrival law scaled by `rho`.
    pub fn scaled(&self, rho: f64) -> Result<Self, HarnessError> {
        let arrivals = self
            .arrivals
            .scaled(rho)
            .map_err(|e| HarnessError::Config(format!("scale {rho}: {e}")))?;
        let lambda = mean_rate(&arrivals).map_err(|e| HarnessError::Config(e.to_string()))?;
        let mut config = self.config.clone();
        config.arrivals.scale *= rho;
        Ok(Self {
            config,
            arrivals,
            lambda,
            ..self.clone()
        })
    }

    /// Zero-vertex id of the region in force in each constraint state.
    pub fn zero_ids(&self) -> Vec<usize> {
        (0..self.constraints.chain().n_states())
            .map(|s| self.regions[self.constraints.region_of(s)].zero_id())
            .collect()
    }
}

fn build_regions(
    specs: &BTreeMap<String, RegionSpec>,
) -> Result<BTreeMap<String, DepartureRegion>, HarnessError> {
    let mut out = BTreeMap::new();
    // Derived regions may reference others; resolve until nothing changes.
    let mut pending: Vec<(&String, &RegionSpec)> = specs.iter().collect();
    while !pending.is_empty() {
        let before = pending.len();
        let mut rest = Vec::new();
        for (name, spec) in pending {
            match build_region(name, spec, &out)? {
                Some(r) => {
                    out.insert(name.clone(), r);
                }
                None => rest.push((name, spec)),
            }
        }
        if rest.len() == before {
            let names: Vec<&str> = rest.iter().map(|(n, _)| n.as_str()).collect();
            return Err(HarnessError::Config(format!(
                "regions with unresolved or cyclic bases: {}",
                names.join(", ")
            )));
        }
        pending = rest;
    }
    Ok(out)
}

fn build_region(
    name: &str,
    s: &RegionSpec,
    done: &BTreeMap<String, DepartureRegion>,
) -> Result<Option<DepartureRegion>, HarnessError> {
    let err = |m: String| HarnessError::Config(format!("region '{name}': {m}"));
    let region =
        |r: Result<DepartureRegion, crate::regions::RegionError>| r.map_err(|e| err(e.to_string()));
    let set = [s.preset.is_some(), s.vertices.is_some(), s.base.is_some()];
    if set.iter().filter(|&&b| b).count() != 1 {
        return Err(err("give exactly one of preset, vertices or base".into()));
    }
    let mut r = if let Some(p) = &s.preset {
        match p.as_str() {
            "switch" => region(switch_region(
                s.n.ok_or_else(|| err("switch preset needs n".into()))?,
            ))?,
            "path" => {
                let n = s
                    .nodes
                    .ok_or_else(|| err("path preset needs nodes".into()))?;
                region(independent_set_region(&ContentionGraph::path(n)))?
            }
            "contention" => {
                let n = s
                    .nodes
                    .ok_or_else(|| err("contention preset needs nodes".into()))?;
                let edges = s
                    .edges
                    .as_ref()
                    .ok_or_else(|| err("contention preset needs edges".into()))?;
                let g = ContentionGraph::new(n, edges.iter().map(|e| (e[0], e[1])).collect())
                    .map_err(|e| err(e.to_string()))?;
                region(independent_set_region(&g))?
            }
            other => {
                return Err(err(format!(
                    "unknown preset '{other}' (switch, path, contention)"
                )))
            }
        }
    } else if let Some(v) = &s.vertices {
        region(DepartureRegion::new(name, v.clone()))?
    } else {
        let base = s.base.as_ref().expect("checked above");
        match done.get(base) {
            Some(b) => b.clone(),
            None if base == name => return Err(err("region cannot be its own base".into())),
            None => return Ok(None),
        }
    };
    if let Some(drop) = &s.drop {
        r = region(r.without(name, drop))?;
    } else {
        r = region(DepartureRegion::new(name, r.vertices().to_vec()))?;
    }
    Ok(Some(r))
}

fn build_constraints(
    spec: Option<&ConstraintSpec>,
    built: &BTreeMap<String, DepartureRegion>,
) -> Result<(ConstraintProcess, Vec<DepartureRegion>), HarnessError> {
    let err = |m: String| HarnessError::Config(format!("constraints: {m}"));
    let names: Vec<String> = match spec {
        Some(s) => s.regions.clone(),
        None if built.len() == 1 => vec![built.keys().next().expect("one region").clone()],
        None => {
            return Err(err(
                "several regions defined; list one per constraint state".into(),
            ))
        }
    };
    if names.is_empty() {
        return Err(err("no constraint states".into()));
    }
    let mut regions: Vec<DepartureRegion> = Vec::new();
    let mut region_of_state = Vec::with_capacity(names.len());
    for n in &names {
        let r = built
            .get(n)
            .ok_or_else(|| err(format!("unknown region '{n}'")))?;
        let idx = match regions.iter().position(|x| x.label() == n) {
            Some(i) => i,
            None => {
                regions.push(r.clone());
                regions.len() - 1
            }
        };
        region_of_state.push(idx);
    }
    let chain = chain_from(
        spec.and_then(|s| s.transition.clone()),
        spec.map_or(0, |s| s.initial),
        names.len(),
    )
    .map_err(err)?;
    let process = ConstraintProcess::new(chain, region_of_state).map_err(|e| err(e.to_string()))?;
    Ok((process, regions))
}

fn chain_from(
    transition: Option<Vec<Vec<f64>>>,
    initial: usize,
    n_states: usize,
) -> Result<FiniteMarkovChain, String> {
    let chain = match transition {
        Some(p) => FiniteMarkovChain::new(p, initial).map_err(|e| e.to_string())?,
        None if n_states == 1 && initial == 0 => FiniteMarkovChain::trivial(),
        None => return Err(format!("{n_states} states need a transition matrix")),
    };
    if chain.n_states() != n_states {
        return Err(format!(
            "transition matrix has {} states, expected {n_states}",
            chain.n_states()
        ));
    }
    if !chain.is_irreducible() {
        return Err("chain is reducible".into());
    }
    Ok(chain)
}

fn build_arrivals(s: &ArrivalSpec, m: usize) -> Result<ArrivalProcess, HarnessError> {
    let err = |m: String| HarnessError::Config(format!("arrivals: {m}"));
    let laws: Vec<Vec<BatchDist>> = match (&s.rates, &s.batches) {
        (Some(rates), None) => rates
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&p| BatchDist::bernoulli(p))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<_, _>>()
            .map_err(|e| err(e.to_string()))?,
        (None, Some(batches)) => batches
            .iter()
            .map(|row| {
                row.iter()
                    .map(|pmf| BatchDist::new(pmf.clone()))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<_, _>>()
            .map_err(|e| err(e.to_string()))?,
        _ => return Err(err("give exactly one of rates or batches".into())),
    };
    if let Some(row) = laws.iter().find(|r| r.len() != m) {
        return Err(err(format!(
            "{} laws per state, topology has {m} queues",
            row.len()
        )));
    }
    let chain = chain_from(s.transition.clone(), s.initial, laws.len()).map_err(err)?;
    let p = ArrivalProcess::new(chain, laws).map_err(|e| err(e.to_string()))?;
    if s.scale == 1.0 {
        Ok(p)
    } else {
        p.scaled(s.scale).map_err(|e| err(e.to_string()))
    }
}

fn resolve_matrix(
    name: &str,
    table: &BTreeMap<String, MatrixSpec>,
    regions: &[DepartureRegion],
    base_dir: &Path,
) -> Result<Vec<Vec<f64>>, String> {
    let from_file = |p: &str| {
        let path = base_dir.join(p);
        let text =
            std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        parse_matrix_text(&text)
    };
    match table.get(name) {
        Some(MatrixSpec::Inline(m)) => Ok(m.clone()),
        Some(MatrixSpec::File(p)) => from_file(p),
        None if name == "conflict" => Ok(regions[0].conflict_matrix()),
        None => from_file(name),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SWITCH: &str = r#"
slots = 1000
seed = 7
policy = "max_scalar(sum_scalar(pow(1.0)))"

[regions.switch]
preset = "switch"
n = 2

[arrivals]
rates = [[0.45, 0.45, 0.45, 0.45]]
"#;

    #[test]
    fn minimal_switch_config() {
        let e =
            Experiment::from_config(ExperimentConfig::from_toml(SWITCH).unwrap(), Path::new("."))
                .unwrap();
        assert_eq!(e.topology.m(), 4);
        assert_eq!(e.regions.len(), 1);
        assert_eq!(e.regions[0].len(), 7);
        assert_eq!(e.lambda, vec![0.45; 4]);
        assert_eq!(e.config.warmup_slots(), 100);
        assert_eq!(e.zero_ids(), vec![0]);
    }

    #[test]
    fn derived_region_and_modulation() {
        let text = r#"
slots = 10
policy = "memory_dyn(sum_scalar(pow(1.0)))"

[regions.full]
preset = "switch"
n = 2
[regions.degraded]
base = "full"
drop = [[0, 1, 1, 0]]

[constraints]
transition = [[0.9, 0.1], [0.2, 0.8]]
regions = ["full", "degraded"]

[arrivals]
transition = [[0.5, 0.5], [0.5, 0.5]]
rates = [[0.2, 0.2, 0.2, 0.2], [0.4, 0.4, 0.4, 0.4]]
"#;
        let e = Experiment::from_config(ExperimentConfig::from_toml(text).unwrap(), Path::new("."))
            .unwrap();
        assert_eq!(e.regions[1].len(), 6);
        assert_eq!(e.constraints.region_of(1), 1);
        assert!(e.lambda.iter().all(|&l| (l - 0.3).abs() < 1e-12));
        let half = e.scaled(0.5).unwrap();
        assert!(half.lambda.iter().all(|&l| (l - 0.15).abs() < 1e-12));
    }

    #[test]
    fn matrices_resolve_from_table_builtin_and_file() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("q.txt"),
            "2 0 0 0\n0 2 0 0\n0 0 2 0\n0 0 0 2\n",
        )
        .unwrap();
        for policy in [
            "max_scalar(quad(identity, Q=@eye))",
            "max_scalar(lpf_quad(theta=1, P=@conflict))",
            "max_scalar(quad(pow(1.0), Q=@q.txt))",
        ] {
            let text = SWITCH.replace("max_scalar(sum_scalar(pow(1.0)))", policy)
                + "\n[matrices]\neye = [[1,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1]]\n";
            let cfg = ExperimentConfig::from_toml(&text).unwrap();
            Experiment::from_config(cfg, dir.path()).unwrap();
        }
    }

    #[test]
    fn config_errors() {
        let bad = [
            SWITCH.replace("slots = 1000", "slots = 0"),
            SWITCH.replace("n = 2", "n = 2\nnodes = 3\nvertices = [[0]]"),
            SWITCH.replace("[[0.45, 0.45, 0.45, 0.45]]", "[[0.45, 0.45]]"),
            SWITCH.replace("pow(1.0)", "pow(-1.0)"),
            SWITCH.replace("max_scalar", "maximum"),
            SWITCH.replace("seed = 7", "seed = 7\nbogus = 1"),
            SWITCH.replace("rates", "batches"),
        ];
        for text in bad {
            let r = ExperimentConfig::from_toml(&text)
                .and_then(|c| Experiment::from_config(c, Path::new(".")));
            assert!(matches!(r, Err(HarnessError::Config(_))), "{text}");
        }
    }

    #[test]
    fn static_memory_rejects_modulated_constraints() {
        let text = r#"
slots = 10
policy = "memory(sum_scalar(pow(1.0)))"
[regions.a]
preset = "switch"
n = 2
[constraints]
transition = [[0.5, 0.5], [0.5, 0.5]]
regions = ["a", "a"]
[arrivals]
rates = [[0.1, 0.1, 0.1, 0.1]]
"#;
        let err =
            Experiment::from_config(ExperimentConfig::from_toml(text).unwrap(), Path::new("."))
                .unwrap_err();
        assert!(err.to_string().contains("memory_dyn"));
    }
}
