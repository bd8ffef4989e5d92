//! Large neighbourhood search over tours, scored by the hybrid objective.
//!
//! Each iteration removes between 1 and `D` clients (at random or as one
//! contiguous stretch), reinserts them greedily, and accepts the candidate
//! by a record-to-record rule measured against the best tour found so far.
//! The best tour's schedule is optimized once the budget runs out.

use std::time::{Duration, Instant};

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::appointment::{hybrid_prefixes, optimize_schedule, HybridPrefix};
use crate::error::{Error, Result};
use crate::instance::{Schedule, Tour};
use crate::problem::Problem;

/// Iteration budget used when none is given; at `n = 6` it takes a few
/// seconds on one core.
pub const DEFAULT_ITERATIONS: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    Iterations(u64),
    TimeLimit(Duration),
}

/// Direction of the acceptance threshold over the run. The growing variant
/// is spelled `paper` on the command line and in reports (`increasing` is
/// accepted as an alias).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AcceptVariant {
    /// `H = H0 t / t_max`, growing from zero.
    #[default]
    #[serde(rename = "paper", alias = "increasing")]
    Increasing,
    /// `H = H0 (1 - t / t_max)`, shrinking to zero.
    Decreasing,
}

impl std::str::FromStr for AcceptVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" | "increasing" => Ok(AcceptVariant::Increasing),
            "decreasing" => Ok(AcceptVariant::Decreasing),
            other => Err(Error::Config(format!("unknown acceptance variant {other:?}"))),
        }
    }
}

impl std::fmt::Display for AcceptVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AcceptVariant::Increasing => "paper",
            AcceptVariant::Decreasing => "decreasing",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LnsParams {
    /// Most clients removed per iteration; clamped to `n`.
    pub max_removed: usize,
    /// Threshold scale as a fraction of the initial hybrid objective.
    pub accept_fraction: f64,
    pub budget: Budget,
    pub seed: u64,
    /// Selection weights of the random and adjacent destroy operators.
    pub operator_weights: [f64; 2],
    pub accept: AcceptVariant,
}

impl Default for LnsParams {
    fn default() -> Self {
        LnsParams {
            max_removed: 6,
            accept_fraction: 0.05,
            budget: Budget::Iterations(DEFAULT_ITERATIONS),
            seed: 0,
            operator_weights: [0.5, 0.5],
            accept: AcceptVariant::Increasing,
        }
    }
}

impl LnsParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_removed == 0 {
            return Err(Error::Config("max_removed must be at least 1".into()));
        }
        if !(self.accept_fraction >= 0.0 && self.accept_fraction.is_finite()) {
            return Err(Error::Config("accept_fraction must be finite and nonnegative".into()));
        }
        match self.budget {
            Budget::Iterations(0) => return Err(Error::Config("iteration budget must be positive".into())),
            Budget::TimeLimit(d) if d.is_zero() => {
                return Err(Error::Config("time limit must be positive".into()))
            }
            _ => {}
        }
        let [a, b] = self.operator_weights;
        if !(a >= 0.0 && b >= 0.0 && a + b > 0.0 && (a + b).is_finite()) {
            return Err(Error::Config("operator weights must be nonnegative with a positive sum".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    Hybrid,
    ExactOptimized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: u64,
    /// Fraction of the budget used, in `[0, 1]`.
    pub progress: f64,
    pub best: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub tour: Tour,
    pub schedule: Schedule,
    pub objective: f64,
    pub objective_kind: ObjectiveKind,
    /// Hybrid objective of `tour`, the quantity the search minimized.
    pub hybrid_objective: f64,
    pub iterations: u64,
    /// Whether the final schedule optimization met its stationarity target.
    pub converged: bool,
    /// Best hybrid objective each time it improved, starting from the initial tour.
    pub trace: Vec<TracePoint>,
}

/// Removes `k` clients chosen uniformly without replacement. The removed
/// clients are returned in the order they were drawn.
pub fn destroy_random<R: Rng + ?Sized>(tour: &[usize], k: usize, rng: &mut R) -> (Vec<usize>, Vec<usize>) {
    let k = k.min(tour.len());
    let picked = index::sample(rng, tour.len(), k).into_vec();
    let mut gone = vec![false; tour.len()];
    for &i in &picked {
        gone[i] = true;
    }
    let partial = tour.iter().zip(&gone).filter(|(_, &g)| !g).map(|(&c, _)| c).collect();
    (partial, picked.into_iter().map(|i| tour[i]).collect())
}

/// Removes `k` consecutive clients starting at a uniform position.
pub fn destroy_adjacent<R: Rng + ?Sized>(tour: &[usize], k: usize, rng: &mut R) -> (Vec<usize>, Vec<usize>) {
    let k = k.min(tour.len());
    let start = rng.random_range(0..=tour.len() - k);
    let mut partial = tour.to_vec();
    let removed = partial.drain(start..start + k).collect();
    (partial, removed)
}

/// Inserts `removed` one by one, each at the gap that gives the smallest
/// hybrid objective of the partial route (earliest gap on ties). Returns the
/// route and its hybrid objective.
pub fn repair_greedy(p: &Problem, partial: &[usize], removed: &[usize]) -> Result<(Vec<usize>, f64)> {
    let mut route = partial.to_vec();
    let mut value = f64::NAN;
    for &c in removed {
        let prefixes = hybrid_prefixes(p, &route)?;
        let mut best: Option<(f64, usize)> = None;
        for (gap, prefix) in prefixes.iter().enumerate() {
            let v = insertion_value(p, prefix, c, &route[gap..])?;
            if best.is_none_or(|(b, _)| v < b) {
                best = Some((v, gap));
            }
        }
        let (v, gap) = best.expect("at least one gap");
        route.insert(gap, c);
        value = v;
        debug_assert!({
            let scratch = crate::appointment::hybrid_objective(p, &route)?;
            (scratch - v).abs() <= 1e-9 * (1.0 + scratch.abs())
        });
    }
    if removed.is_empty() {
        value = crate::appointment::hybrid_objective(p, &route)?;
    }
    Ok((route, value))
}

fn insertion_value(p: &Problem, prefix: &HybridPrefix, client: usize, rest: &[usize]) -> Result<f64> {
    let mut state = prefix.clone();
    state.push(p, client)?;
    for &c in rest {
        state.push(p, c)?;
    }
    Ok(state.objective(p))
}

/// Acceptance threshold at budget fraction `progress`.
pub fn threshold(h0: f64, progress: f64, variant: AcceptVariant) -> f64 {
    let t = progress.clamp(0.0, 1.0);
    match variant {
        AcceptVariant::Increasing => h0 * t,
        AcceptVariant::Decreasing => h0 * (1.0 - t),
    }
}

/// Record-to-record acceptance against the best objective found so far.
pub fn accept_rrt(candidate: f64, best: f64, progress: f64, h0: f64, variant: AcceptVariant) -> bool {
    candidate - best < threshold(h0, progress, variant)
}

struct Clock {
    budget: Budget,
    start: Instant,
}

impl Clock {
    fn progress(&self, iteration: u64) -> f64 {
        match self.budget {
            Budget::Iterations(max) => iteration as f64 / max as f64,
            Budget::TimeLimit(limit) => self.start.elapsed().as_secs_f64() / limit.as_secs_f64(),
        }
    }

    fn exhausted(&self, iteration: u64) -> bool {
        match self.budget {
            Budget::Iterations(max) => iteration >= max,
            Budget::TimeLimit(limit) => self.start.elapsed() >= limit,
        }
    }
}

pub fn lns_solve(p: &Problem, params: &LnsParams) -> Result<Solution> {
    params.validate()?;
    let n = p.n();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut init: Vec<usize> = (1..=n).collect();
    init.shuffle(&mut rng);
    let init_value = crate::appointment::hybrid_objective(p, &init)?;

    let h0 = params.accept_fraction * init_value;
    let d = params.max_removed.min(n);
    let [w_random, w_adjacent] = params.operator_weights;
    let p_random = w_random / (w_random + w_adjacent);

    let clock = Clock {
        budget: params.budget,
        start: Instant::now(),
    };
    let mut current = init.clone();
    let mut best = (init, init_value);
    let mut trace = vec![TracePoint {
        iteration: 0,
        progress: 0.0,
        best: init_value,
    }];
    let mut iteration = 0;
    while !clock.exhausted(iteration) {
        let k = rng.random_range(1..=d);
        let (partial, removed) = if rng.random::<f64>() < p_random {
            destroy_random(&current, k, &mut rng)
        } else {
            destroy_adjacent(&current, k, &mut rng)
        };
        let (candidate, value) = match repair_greedy(p, &partial, &removed) {
            Ok(r) => r,
            Err(e) => {
                return Err(Error::SearchAborted {
                    best_tour: best.0,
                    best_objective: best.1,
                    cause: Box::new(e),
                })
            }
        };
        iteration += 1;
        let progress = clock.progress(iteration);
        if accept_rrt(value, best.1, progress, h0, params.accept) {
            current = candidate.clone();
        }
        if value < best.1 {
            best = (candidate, value);
            trace.push(TracePoint {
                iteration,
                progress: progress.min(1.0),
                best: value,
            });
        }
    }

    let tour = Tour::new(best.0)?;
    let opt = optimize_schedule(p, &tour)?;
    Ok(Solution {
        tour,
        schedule: opt.schedule,
        objective: opt.value,
        objective_kind: ObjectiveKind::ExactOptimized,
        hybrid_objective: best.1,
        iterations: iteration,
        converged: opt.converged,
        trace,
    })
}
