//! Command logic behind the `rasched` binary: batch generation, solving,
//! evaluation, simulation, benchmarking and the simulate-vs-exact check.
//!
//! All randomness in a batch or benchmark derives from one top-level seed
//! through [`derive_seed`].

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::appointment::{optimize_schedule, HeavyTrafficConfig};
use crate::error::{Error, Result};
use crate::exact::{evaluate_exact, Evaluation};
use crate::instance::{generate_instance, load_instance, save_instance, Instance, Regime, Schedule, Tour};
use crate::lns::{lns_solve, AcceptVariant, Budget, LnsParams};
use crate::phasetype::FitConfig;
use crate::problem::Problem;
use crate::routing::{
    enumerate_optimal_with, msvf_tour, mtsp_tour, solve_tsp, EnumerationConfig, EnumerationMode,
};
use crate::simulate::{simulate_solution, SimEstimate};

/// Mixes a base seed with a label and an index (FNV-1a over the label, then
/// the SplitMix64 finalizer).
pub fn derive_seed(base: u64, label: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = base ^ h ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Lns,
    Tsp,
    Mtsp,
    Msvf,
    Enum,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::Lns,
        Algorithm::Tsp,
        Algorithm::Mtsp,
        Algorithm::Msvf,
        Algorithm::Enum,
    ];
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Lns => "lns",
            Algorithm::Tsp => "tsp",
            Algorithm::Mtsp => "mtsp",
            Algorithm::Msvf => "msvf",
            Algorithm::Enum => "enum",
        })
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown algorithm {s:?}; expected lns, tsp, mtsp, msvf or enum")))
    }
}

/// Settings shared by every verb that builds a [`Problem`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelSettings {
    pub fit: FitConfig,
    pub heavy_traffic: HeavyTrafficConfig,
    /// Multiplies mean travel times at load time.
    pub travel_scale: Option<f64>,
}

impl ModelSettings {
    pub fn problem(&self, inst: Instance) -> Result<Problem> {
        let inst = match self.travel_scale {
            Some(f) => inst.with_travel_scale(f)?,
            None => inst,
        };
        Problem::new(inst, self.fit, self.heavy_traffic)
    }

    pub fn load(&self, path: &Path) -> Result<Problem> {
        self.problem(load_instance(path)?)
    }
}

/// Parameters recorded with every solution and benchmark row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSnapshot {
    pub beta: f64,
    pub max_removed: usize,
    pub h_init: f64,
    pub accept_variant: AcceptVariant,
    pub budget: Budget,
    pub seed: u64,
}

/// Both orientations considered by the TSP heuristic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrientationLog {
    pub chosen_hybrid: f64,
    pub reversed_hybrid: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub algorithm: Algorithm,
    pub tour: Tour,
    pub x: Schedule,
    pub objective: f64,
    pub breakdown: Evaluation,
    pub beta: f64,
    pub params: ParamSnapshot,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orientation: Option<OrientationLog>,
    /// Whether the schedule optimizer met its stationarity target.
    pub converged: bool,
}

impl SolutionFile {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("solution serializes") + "\n";
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<SolutionFile> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            context: format!("{} line {} column {}", path.display(), e.line(), e.column()),
            message: e.to_string(),
        })
    }
}

/// Runs one algorithm. Every heuristic ends with schedule optimization on
/// its tour; enumeration uses the exact mode up to its cap and the
/// heavy-traffic prefilter beyond.
pub fn solve(p: &Problem, algorithm: Algorithm, lns: &LnsParams) -> Result<SolutionFile> {
    let mut orientation = None;
    let (tour, schedule, converged) = match algorithm {
        Algorithm::Lns => {
            let sol = lns_solve(p, lns)?;
            (sol.tour, sol.schedule, sol.converged)
        }
        Algorithm::Enum => {
            let cfg = EnumerationConfig::default();
            let mode = if p.n() <= cfg.exact_cap {
                EnumerationMode::Exact
            } else {
                EnumerationMode::HeavyTrafficPrefilter
            };
            let r = enumerate_optimal_with(p, mode, &cfg)?;
            (r.tour, r.schedule, true)
        }
        heuristic => {
            let tour = match heuristic {
                Algorithm::Tsp => {
                    let o = solve_tsp(p)?;
                    orientation = Some(OrientationLog {
                        chosen_hybrid: o.hybrid,
                        reversed_hybrid: o.reversed_hybrid,
                    });
                    o.tour
                }
                Algorithm::Mtsp => mtsp_tour(p)?,
                _ => msvf_tour(p)?,
            };
            let opt = optimize_schedule(p, &tour)?;
            (tour, opt.schedule, opt.converged)
        }
    };
    let breakdown = evaluate_exact(p, &tour, &schedule)?;
    Ok(SolutionFile {
        algorithm,
        objective: breakdown.objective,
        tour,
        x: schedule,
        breakdown,
        beta: p.heavy_traffic().beta,
        params: ParamSnapshot {
            beta: p.heavy_traffic().beta,
            max_removed: lns.max_removed,
            h_init: lns.accept_fraction,
            accept_variant: lns.accept,
            budget: lns.budget,
            seed: lns.seed,
        },
        orientation,
        converged,
    })
}

/// Re-evaluation of a stored solution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReEvaluation {
    pub evaluation: Evaluation,
    pub recorded: Option<f64>,
    /// `|evaluated - recorded| <= 1e-9 (1 + |recorded|)` when a value was recorded.
    pub matches: Option<bool>,
}

pub fn evaluate(p: &Problem, tour: &Tour, x: &Schedule, recorded: Option<f64>) -> Result<ReEvaluation> {
    let evaluation = evaluate_exact(p, tour, x)?;
    let matches = recorded.map(|r| (evaluation.objective - r).abs() <= 1e-9 * (1.0 + r.abs()));
    Ok(ReEvaluation {
        evaluation,
        recorded,
        matches,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub exact: Evaluation,
    pub simulated: SimEstimate,
    pub z_idle: Vec<f64>,
    pub z_wait: Vec<f64>,
    pub z_objective: f64,
    pub max_abs_z: f64,
    /// Every `|z| <= 4`.
    pub pass: bool,
}

fn z_score(estimate: f64, stderr: f64, exact: f64) -> f64 {
    let diff = estimate - exact;
    if stderr > 0.0 {
        diff / stderr
    } else if diff.abs() <= 1e-12 * (1.0 + exact.abs()) {
        0.0
    } else {
        f64::INFINITY.copysign(diff)
    }
}

pub fn verify(p: &Problem, tour: &Tour, x: &Schedule, reps: u64, seed: u64) -> Result<VerifyReport> {
    let exact = evaluate_exact(p, tour, x)?;
    let simulated = simulate_solution(p, tour, x, reps, seed)?;
    let z = |est: &[f64], se: &[f64], ex: &[f64]| -> Vec<f64> {
        est.iter().zip(se).zip(ex).map(|((&m, &s), &e)| z_score(m, s, e)).collect()
    };
    let z_idle = z(&simulated.idle_mean, &simulated.idle_stderr, &exact.per_client_idle);
    let z_wait = z(&simulated.wait_mean, &simulated.wait_stderr, &exact.per_client_wait);
    let z_objective = z_score(simulated.objective_mean, simulated.objective_stderr, exact.objective);
    let max_abs_z = z_idle
        .iter()
        .chain(&z_wait)
        .chain(std::iter::once(&z_objective))
        .fold(0.0f64, |m, z| m.max(z.abs()));
    Ok(VerifyReport {
        pass: max_abs_z <= 4.0,
        exact,
        simulated,
        z_idle,
        z_wait,
        z_objective,
        max_abs_z,
    })
}

pub fn simulate(p: &Problem, tour: &Tour, x: &Schedule, reps: u64, seed: u64) -> Result<SimEstimate> {
    simulate_solution(p, tour, x, reps, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Relative to the manifest's directory.
    pub path: PathBuf,
    pub n: usize,
    pub regime: Regime,
    pub weight_travel: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    pub instances: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            context: format!("{} line {} column {}", path.display(), e.line(), e.column()),
            message: e.to_string(),
        })
    }

    pub fn instance_path(&self, manifest_path: &Path, entry: &ManifestEntry) -> PathBuf {
        manifest_path.parent().unwrap_or(Path::new(".")).join(&entry.path)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateSpec {
    pub sizes: Vec<usize>,
    pub regimes: Vec<Regime>,
    pub weights_travel: Vec<f64>,
    pub count: usize,
    pub seed: u64,
}

/// Writes `count` instances for every (n, regime, travel weight) combination
/// plus a manifest listing them.
pub fn generate(spec: &GenerateSpec, out_dir: &Path) -> Result<Manifest> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut instances = Vec::new();
    for &n in &spec.sizes {
        for &regime in &spec.regimes {
            for &wt in &spec.weights_travel {
                let group = format!("n{n}_{regime}_wt{wt}");
                for i in 0..spec.count {
                    let seed = derive_seed(spec.seed, &format!("instance/{group}"), i as u64);
                    let inst = generate_instance(n, regime, wt, seed)?;
                    let id = format!("{group}_{i:03}");
                    let file = PathBuf::from(format!("{id}.json"));
                    save_instance(&inst, &out_dir.join(&file))?;
                    instances.push(ManifestEntry {
                        id,
                        path: file,
                        n,
                        regime,
                        weight_travel: wt,
                        seed,
                    });
                }
            }
        }
    }
    let manifest = Manifest {
        version: 1,
        seed: spec.seed,
        instances,
    };
    let path = out_dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// One benchmark row. `objective` and the components are empty when the run
/// failed; `wall_ms` is empty under an iteration budget so that reports are
/// byte-reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub instance_id: String,
    pub n: usize,
    pub regime: Regime,
    pub omega_t: f64,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub budget: String,
    pub objective: Option<f64>,
    pub travel_comp: Option<f64>,
    pub idle_comp: Option<f64>,
    pub wait_comp: Option<f64>,
    pub gap_pct: Option<f64>,
    pub wall_ms: Option<u64>,
    pub beta: f64,
    pub max_removed: usize,
    pub h_init: f64,
    pub accept_variant: AcceptVariant,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkConfig {
    pub algorithms: Vec<Algorithm>,
    /// LNS template; its seed is replaced by one derived per instance.
    pub lns: LnsParams,
    pub seed: u64,
    pub model: ModelSettings,
}

fn budget_label(b: &Budget) -> String {
    match b {
        Budget::Iterations(k) => format!("iters:{k}"),
        Budget::TimeLimit(d) => format!("secs:{}", d.as_secs_f64()),
    }
}

/// Runs every algorithm on every instance and fills in per-instance gaps
/// against the best successful run. Enumeration is skipped (recorded as such)
/// above its cap. Rows follow manifest order, then algorithm order.
pub fn benchmark(manifest_path: &Path, cfg: &BenchmarkConfig) -> Result<Vec<RunRecord>> {
    let manifest = Manifest::load(manifest_path)?;
    let enum_cap = EnumerationConfig::default().prefilter_cap;
    let tasks: Vec<(&ManifestEntry, Algorithm)> = manifest
        .instances
        .iter()
        .flat_map(|e| cfg.algorithms.iter().map(move |&a| (e, a)))
        .collect();
    let problems: Vec<Result<Problem>> = manifest
        .instances
        .iter()
        .map(|e| cfg.model.load(&manifest.instance_path(manifest_path, e)))
        .collect();
    let index: BTreeMap<&str, usize> = manifest
        .instances
        .iter()
        .enumerate()
        .map(|(i, e)| (e.id.as_str(), i))
        .collect();
    let timed = matches!(cfg.lns.budget, Budget::TimeLimit(_));

    let mut records: Vec<RunRecord> = tasks
        .par_iter()
        .map(|&(entry, algorithm)| {
            let seed = derive_seed(cfg.seed, &format!("{algorithm}/{}", entry.id), 0);
            let lns = LnsParams {
                seed,
                ..cfg.lns.clone()
            };
            let mut rec = RunRecord {
                instance_id: entry.id.clone(),
                n: entry.n,
                regime: entry.regime,
                omega_t: entry.weight_travel,
                algorithm,
                seed,
                budget: if algorithm == Algorithm::Lns {
                    budget_label(&lns.budget)
                } else {
                    String::new()
                },
                objective: None,
                travel_comp: None,
                idle_comp: None,
                wait_comp: None,
                gap_pct: None,
                wall_ms: None,
                beta: cfg.model.heavy_traffic.beta,
                max_removed: lns.max_removed,
                h_init: lns.accept_fraction,
                accept_variant: lns.accept,
                status: String::new(),
            };
            if algorithm == Algorithm::Enum && entry.n > enum_cap {
                rec.status = format!("skipped: n above enumeration cap {enum_cap}");
                return rec;
            }
            let p = match &problems[index[entry.id.as_str()]] {
                Ok(p) => p,
                Err(e) => {
                    rec.status = format!("error: {e}");
                    return rec;
                }
            };
            let start = Instant::now();
            match solve(p, algorithm, &lns) {
                Ok(sol) => {
                    rec.objective = Some(sol.objective);
                    rec.travel_comp = Some(sol.breakdown.travel_component);
                    rec.idle_comp = Some(sol.breakdown.idle_component);
                    rec.wait_comp = Some(sol.breakdown.wait_component);
                    rec.status = "ok".into();
                }
                Err(e) => rec.status = format!("error: {e}"),
            }
            if timed {
                rec.wall_ms = Some(start.elapsed().as_millis() as u64);
            }
            rec
        })
        .collect();
    fill_gaps(&mut records);
    Ok(records)
}

/// Gap of each successful row to the best objective on its instance.
pub fn fill_gaps(records: &mut [RunRecord]) {
    let mut best: BTreeMap<String, f64> = BTreeMap::new();
    for r in records.iter() {
        if let Some(v) = r.objective {
            let b = best.entry(r.instance_id.clone()).or_insert(v);
            *b = b.min(v);
        }
    }
    for r in records.iter_mut() {
        r.gap_pct = r.objective.map(|v| {
            let b = best[&r.instance_id];
            if b == 0.0 {
                0.0
            } else {
                (v - b) / b * 100.0
            }
        });
    }
}

pub fn write_records(records: &[RunRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    for r in records {
        w.serialize(r).map_err(|e| Error::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    r.deserialize()
        .map(|row| {
            row.map_err(|e| Error::Parse {
                context: path.display().to_string(),
                message: e.to_string(),
            })
        })
        .collect()
}

/// Mean gap per (n, travel weight, regime, algorithm) over successful runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub n: usize,
    pub omega_t: f64,
    pub regime: Regime,
    pub algorithm: Algorithm,
    pub runs: usize,
    pub failures: usize,
    pub mean_gap_pct: Option<f64>,
    pub mean_objective: Option<f64>,
}

pub fn summarize(records: &[RunRecord]) -> Vec<SummaryRow> {
    type Key = (usize, u64, Regime, Algorithm);
    let mut groups: BTreeMap<Key, (Vec<f64>, Vec<f64>, usize)> = BTreeMap::new();
    for r in records {
        if r.status.starts_with("skipped") {
            continue;
        }
        let key = (r.n, r.omega_t.to_bits(), r.regime, r.algorithm);
        let g = groups.entry(key).or_default();
        match (r.gap_pct, r.objective) {
            (Some(gap), Some(obj)) => {
                g.0.push(gap);
                g.1.push(obj);
            }
            _ => g.2 += 1,
        }
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let mut rows: Vec<SummaryRow> = groups
        .into_iter()
        .map(|((n, wt, regime, algorithm), (gaps, objs, failures))| SummaryRow {
            n,
            omega_t: f64::from_bits(wt),
            regime,
            algorithm,
            runs: gaps.len() + failures,
            failures,
            mean_gap_pct: mean(&gaps),
            mean_objective: mean(&objs),
        })
        .collect();
    rows.sort_by(|a, b| {
        (a.n, a.regime, a.algorithm)
            .cmp(&(b.n, b.regime, b.algorithm))
            .then(a.omega_t.total_cmp(&b.omega_t))
    });
    rows
}

pub fn write_summary(rows: &[SummaryRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Parses a comma-separated list, as used by several flags.
pub fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>>
where
    T::Err: fmt::Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<T>().map_err(|e| Error::Config(format!("cannot parse {t:?}: {e}"))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ_by_label_and_index() {
        let a = derive_seed(1, "instance/x", 0);
        assert_eq!(a, derive_seed(1, "instance/x", 0));
        assert_ne!(a, derive_seed(1, "instance/x", 1));
        assert_ne!(a, derive_seed(1, "instance/y", 0));
        assert_ne!(a, derive_seed(2, "instance/x", 0));
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.to_string().parse::<Algorithm>().unwrap(), a);
        }
        assert!("lkh".parse::<Algorithm>().is_err());
    }

    #[test]
    fn list_parsing() {
        assert_eq!(parse_list::<f64>("0.5, 1,2").unwrap(), vec![0.5, 1.0, 2.0]);
        assert_eq!(parse_list::<Regime>("low,high").unwrap(), vec![Regime::Low, Regime::High]);
        assert!(parse_list::<usize>("3,x").is_err());
    }

    fn record(id: &str, alg: Algorithm, obj: Option<f64>) -> RunRecord {
        RunRecord {
            instance_id: id.into(),
            n: 6,
            regime: Regime::Low,
            omega_t: 1.0,
            algorithm: alg,
            seed: 0,
            budget: String::new(),
            objective: obj,
            travel_comp: obj,
            idle_comp: Some(0.0),
            wait_comp: Some(0.0),
            gap_pct: None,
            wall_ms: None,
            beta: 0.5,
            max_removed: 6,
            h_init: 0.05,
            accept_variant: AcceptVariant::Increasing,
            status: if obj.is_some() { "ok".into() } else { "error: x".into() },
        }
    }

    #[test]
    fn gaps_and_summary() {
        let mut rs = vec![
            record("a", Algorithm::Lns, Some(100.0)),
            record("a", Algorithm::Tsp, Some(110.0)),
            record("b", Algorithm::Lns, Some(50.0)),
            record("b", Algorithm::Tsp, None),
        ];
        fill_gaps(&mut rs);
        assert_eq!(rs[0].gap_pct, Some(0.0));
        assert!((rs[1].gap_pct.unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(rs[3].gap_pct, None);
        let s = summarize(&rs);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].algorithm, Algorithm::Lns);
        assert_eq!(s[0].mean_gap_pct, Some(0.0));
        assert_eq!(s[1].failures, 1);
        assert!((s[1].mean_gap_pct.unwrap() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn z_scores() {
        assert_eq!(z_score(1.0, 0.0, 1.0), 0.0);
        assert_eq!(z_score(1.5, 0.0, 1.0), f64::INFINITY);
        assert_eq!(z_score(1.5, 0.25, 1.0), 2.0);
    }
}
