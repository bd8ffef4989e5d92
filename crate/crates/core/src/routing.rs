//! Benchmark tour constructors and the enumeration oracle.
//!
//! Cost matrices are indexed by location (0 = depot) and may be asymmetric.

use rayon::prelude::*;

use crate::appointment::{
    heavy_traffic_objective, hybrid_objective, optimize_route, HybridPrefix, OptimizerConfig, ScheduleOptimum,
};
use crate::error::{Error, Result};
use crate::instance::{Schedule, Tour};
use crate::problem::Problem;

/// Largest instance solved exactly by dynamic programming.
pub const HELD_KARP_MAX: usize = 12;

/// A route and its hybrid objective.
type Scored = (Vec<usize>, f64);

/// Length of the closed route `0 -> route -> 0`.
pub fn route_cost(cost: &[Vec<f64>], route: &[usize]) -> f64 {
    let mut prev = 0;
    let mut total = 0.0;
    for &c in route {
        total += cost[prev][c];
        prev = c;
    }
    total + cost[prev][0]
}

/// Exact minimum-cost closed route over all clients `1..cost.len()`.
pub fn held_karp(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len() - 1;
    if n == 0 {
        return Vec::new();
    }
    let full = 1usize << n;
    let mut dp = vec![f64::INFINITY; full * n];
    let mut parent = vec![usize::MAX; full * n];
    for last in 0..n {
        dp[(1 << last) * n + last] = cost[0][last + 1];
    }
    for mask in 1..full {
        for last in 0..n {
            if mask & (1 << last) == 0 {
                continue;
            }
            let here = dp[mask * n + last];
            if !here.is_finite() {
                continue;
            }
            for next in 0..n {
                if mask & (1 << next) != 0 {
                    continue;
                }
                let m2 = mask | (1 << next);
                let v = here + cost[last + 1][next + 1];
                if v < dp[m2 * n + next] {
                    dp[m2 * n + next] = v;
                    parent[m2 * n + next] = last;
                }
            }
        }
    }
    let mask = full - 1;
    let mut best = (f64::INFINITY, 0);
    for last in 0..n {
        let v = dp[mask * n + last] + cost[last + 1][0];
        if v < best.0 {
            best = (v, last);
        }
    }
    let mut route = Vec::with_capacity(n);
    let (mut mask, mut last) = (mask, best.1);
    loop {
        route.push(last + 1);
        let prev = parent[mask * n + last];
        mask &= !(1 << last);
        if prev == usize::MAX {
            break;
        }
        last = prev;
    }
    route.reverse();
    route
}

pub fn nearest_neighbor(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len() - 1;
    let mut visited = vec![false; n + 1];
    let mut route = Vec::with_capacity(n);
    let mut cur = 0;
    for _ in 0..n {
        let next = (1..=n)
            .filter(|&j| !visited[j])
            .min_by(|&a, &b| cost[cur][a].total_cmp(&cost[cur][b]).then(a.cmp(&b)))
            .expect("an unvisited client remains");
        visited[next] = true;
        route.push(next);
        cur = next;
    }
    route
}

fn improves(candidate: f64, current: f64) -> bool {
    candidate < current - 1e-12 * (1.0 + current.abs())
}

/// Best-improvement 2-opt and Or-opt (segments of 1 to 3 clients, kept in
/// orientation) with full recomputation of the route cost, so asymmetric
/// matrices are handled. Stops at a local optimum or after `n^2` passes.
pub fn local_search(cost: &[Vec<f64>], mut route: Vec<usize>) -> Vec<usize> {
    let n = route.len();
    let mut current = route_cost(cost, &route);
    for _ in 0..(n * n).max(1) {
        let mut best: Option<(f64, Vec<usize>)> = None;
        let consider = |cand: Vec<usize>, best: &mut Option<(f64, Vec<usize>)>| {
            let v = route_cost(cost, &cand);
            let bar = best.as_ref().map_or(current, |b| b.0);
            if improves(v, bar) {
                *best = Some((v, cand));
            }
        };
        for i in 0..n {
            for j in i + 1..n {
                let mut cand = route.clone();
                cand[i..=j].reverse();
                consider(cand, &mut best);
            }
        }
        for len in 1..=3.min(n) {
            for i in 0..=n - len {
                let mut rest = route.clone();
                let seg: Vec<usize> = rest.drain(i..i + len).collect();
                for k in 0..=rest.len() {
                    if k == i {
                        continue;
                    }
                    let mut cand = rest.clone();
                    cand.splice(k..k, seg.iter().copied());
                    consider(cand, &mut best);
                }
            }
        }
        match best {
            Some((v, cand)) => {
                route = cand;
                current = v;
            }
            None => break,
        }
    }
    route
}

/// Exact for small instances, nearest neighbour plus local search otherwise.
pub fn tsp_route(cost: &[Vec<f64>]) -> Vec<usize> {
    if cost.len() - 1 <= HELD_KARP_MAX {
        held_karp(cost)
    } else {
        local_search(cost, nearest_neighbor(cost))
    }
}

/// A tour together with the hybrid objectives of both of its orientations.
#[derive(Debug, Clone, PartialEq)]
pub struct OrientedTour {
    pub tour: Tour,
    pub hybrid: f64,
    pub reversed_hybrid: f64,
}

/// Minimum mean-travel tour, oriented by the smaller hybrid objective.
pub fn solve_tsp(p: &Problem) -> Result<OrientedTour> {
    let route = tsp_route(&p.instance().travel_mean);
    orient(p, Tour::new(route)?)
}

fn orient(p: &Problem, tour: Tour) -> Result<OrientedTour> {
    let rev = tour.reversed();
    let a = hybrid_objective(p, &tour)?;
    let b = hybrid_objective(p, &rev)?;
    let keep = a < b || (a == b && tour.first() <= rev.first());
    Ok(if keep {
        OrientedTour { tour, hybrid: a, reversed_hybrid: b }
    } else {
        OrientedTour { tour: rev, hybrid: b, reversed_hybrid: a }
    })
}

/// Greedy smallest-variance-first chain on `Var(T_kj + B_j)`.
pub fn msvf_tour(p: &Problem) -> Result<Tour> {
    let inst = p.instance();
    let n = inst.n;
    let var = |k: usize, j: usize| {
        let t = inst.travel_mean[k][j];
        let b = inst.service_mean[j];
        inst.travel_scv[k][j] * t * t + inst.service_scv[j] * b * b
    };
    let mut visited = vec![false; n + 1];
    let mut route = Vec::with_capacity(n);
    let mut cur = 0;
    for _ in 0..n {
        let next = (1..=n)
            .filter(|&j| !visited[j])
            .min_by(|&a, &b| var(cur, a).total_cmp(&var(cur, b)).then(a.cmp(&b)))
            .expect("an unvisited client remains");
        visited[next] = true;
        route.push(next);
        cur = next;
    }
    Tour::new(route)
}

/// Per-arc newsvendor data: the critical-fractile appointment `x_star[i][j]`
/// for requirement `U_ij` and its cost `cost[i][j]`. Arcs into the depot
/// carry no appointment and have zero cost.
#[derive(Debug, Clone, PartialEq)]
pub struct NewsvendorCosts {
    pub x_star: Vec<Vec<f64>>,
    pub cost: Vec<Vec<f64>>,
}

/// Newsvendor cost of one arc at appointment offset `x`.
pub fn newsvendor_cost(p: &Problem, from: usize, to: usize, x: f64) -> Result<f64> {
    let inst = p.instance();
    let req = p.requirement(from, to)?;
    let (ww, wi) = (inst.weight_wait[to], inst.weight_idle);
    let c = (ww + wi) * req.expected_excess(x)? + wi * x - wi * req.mean();
    Ok(c.max(0.0))
}

pub fn newsvendor_costs(p: &Problem) -> Result<NewsvendorCosts> {
    let inst = p.instance();
    let m = inst.locations();
    let mut x_star = vec![vec![0.0; m]; m];
    let mut cost = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in 1..m {
            if i == j {
                continue;
            }
            let (ww, wi) = (inst.weight_wait[j], inst.weight_idle);
            if ww + wi <= 0.0 {
                continue;
            }
            let q = ww / (ww + wi);
            if q <= 0.0 {
                continue;
            }
            if q >= 1.0 {
                x_star[i][j] = f64::INFINITY;
                continue;
            }
            let x = p.requirement(i, j)?.quantile(q)?;
            x_star[i][j] = x;
            cost[i][j] = newsvendor_cost(p, i, j, x)?;
        }
    }
    Ok(NewsvendorCosts { x_star, cost })
}

/// The MTSP arc costs `E T_ij + C_ij / w_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModifiedCostMatrix {
    pub c_hat: Vec<Vec<f64>>,
    pub newsvendor: NewsvendorCosts,
}

pub fn modified_cost_matrix(p: &Problem) -> Result<ModifiedCostMatrix> {
    let inst = p.instance();
    if inst.weight_travel <= 0.0 {
        return Err(Error::Config(
            "the modified TSP divides by the travel weight; use tsp or msvf when it is zero".into(),
        ));
    }
    let newsvendor = newsvendor_costs(p)?;
    let c_hat = inst
        .travel_mean
        .iter()
        .zip(&newsvendor.cost)
        .map(|(t, c)| t.iter().zip(c).map(|(t, c)| t + c / inst.weight_travel).collect())
        .collect();
    Ok(ModifiedCostMatrix { c_hat, newsvendor })
}

pub fn mtsp_tour(p: &Problem) -> Result<Tour> {
    let m = modified_cost_matrix(p)?;
    Tour::new(tsp_route(&m.c_hat))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnumerationMode {
    /// Optimize the schedule of every tour that a lower bound cannot rule out.
    Exact,
    /// Rank all tours by the heavy-traffic objective and optimize the best
    /// fraction of them.
    HeavyTrafficPrefilter,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnumerationConfig {
    pub exact_cap: usize,
    pub prefilter_cap: usize,
    /// Fraction of tours re-optimized in prefilter mode; `None` means
    /// `1 / (n (n - 1))`.
    pub prefilter_fraction: Option<f64>,
    pub optimizer: OptimizerConfig,
}

impl Default for EnumerationConfig {
    fn default() -> Self {
        EnumerationConfig {
            exact_cap: 9,
            prefilter_cap: 10,
            prefilter_fraction: None,
            optimizer: OptimizerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnumerationResult {
    pub tour: Tour,
    pub schedule: Schedule,
    pub value: f64,
    /// Number of tours whose schedule was optimized.
    pub optimized: usize,
}

pub fn enumerate_optimal(p: &Problem, mode: EnumerationMode) -> Result<EnumerationResult> {
    enumerate_optimal_with(p, mode, &EnumerationConfig::default())
}

pub fn enumerate_optimal_with(
    p: &Problem,
    mode: EnumerationMode,
    cfg: &EnumerationConfig,
) -> Result<EnumerationResult> {
    let n = p.n();
    let cap = match mode {
        EnumerationMode::Exact => cfg.exact_cap,
        EnumerationMode::HeavyTrafficPrefilter => cfg.prefilter_cap,
    };
    if n > cap {
        return Err(Error::EnumerationCap { n, cap });
    }
    match mode {
        EnumerationMode::Exact => enumerate_exact(p, cfg),
        EnumerationMode::HeavyTrafficPrefilter => enumerate_prefiltered(p, cfg),
    }
}

/// All permutations of `1..=n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (1..=n).collect();
    loop {
        out.push(cur.clone());
        let Some(i) = (1..cur.len()).rev().find(|&i| cur[i - 1] < cur[i]) else {
            break;
        };
        let j = (i..cur.len()).rev().find(|&j| cur[j] > cur[i - 1]).expect("pivot successor");
        cur.swap(i - 1, j);
        cur[i..].reverse();
    }
    out
}

/// Hybrid objective of every tour, visiting the permutation tree depth
/// first so that shared prefixes are evaluated once. Sharded by first client.
fn hybrid_all(p: &Problem) -> Result<Vec<(Vec<usize>, f64)>> {
    fn walk(
        p: &Problem,
        state: &HybridPrefix,
        route: &mut Vec<usize>,
        used: &mut [bool],
        out: &mut Vec<(Vec<usize>, f64)>,
    ) -> Result<()> {
        let n = p.n();
        if route.len() == n {
            out.push((route.clone(), state.objective(p)));
            return Ok(());
        }
        for c in 1..=n {
            if used[c] {
                continue;
            }
            let mut next = state.clone();
            next.push(p, c)?;
            used[c] = true;
            route.push(c);
            walk(p, &next, route, used, out)?;
            route.pop();
            used[c] = false;
        }
        Ok(())
    }
    let n = p.n();
    let shards: Vec<Result<Vec<Scored>>> = (1..=n)
        .into_par_iter()
        .map(|first| {
            let mut state = HybridPrefix::start();
            state.push(p, first)?;
            let mut used = vec![false; n + 1];
            used[first] = true;
            let mut out = Vec::new();
            walk(p, &state, &mut vec![first], &mut used, &mut out)?;
            Ok(out)
        })
        .collect();
    let mut all = Vec::new();
    for s in shards {
        all.extend(s?);
    }
    Ok(all)
}

fn better(a: &(f64, Vec<usize>), b: &(f64, Vec<usize>)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

fn optimize_batch(
    p: &Problem,
    routes: &[Vec<usize>],
    cfg: &OptimizerConfig,
) -> Result<Vec<(Vec<usize>, ScheduleOptimum)>> {
    routes
        .par_iter()
        .map(|r| optimize_route(p, r, cfg).map(|o| (r.clone(), o)))
        .collect()
}

fn finish(best: (f64, Vec<usize>, Vec<f64>), optimized: usize) -> Result<EnumerationResult> {
    Ok(EnumerationResult {
        value: best.0,
        tour: Tour::new(best.1)?,
        schedule: Schedule::new(best.2)?,
        optimized,
    })
}

/// Exhaustive search with a valid lower bound: for every tour, the optimized
/// exact cost is at least the travel cost plus the sum of per-arc newsvendor
/// costs (each position's cost, conditioned on the waiting time carried in,
/// is a newsvendor cost at a shifted appointment). Tours are visited in
/// increasing bound order, seeded with the best hybrid tours, and skipped
/// once the bound exceeds the incumbent.
fn enumerate_exact(p: &Problem, cfg: &EnumerationConfig) -> Result<EnumerationResult> {
    let n = p.n();
    let inst = p.instance();
    let nv = newsvendor_costs(p)?;
    let mut arc_bound = inst.travel_mean.clone();
    for (i, row) in arc_bound.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = inst.weight_travel * *v + nv.cost[i][j];
        }
    }

    let mut hybrids = hybrid_all(p)?;
    hybrids.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    let seeds: Vec<Vec<usize>> = hybrids.iter().take(n.max(2)).map(|(r, _)| r.clone()).collect();

    let mut best: Option<(f64, Vec<usize>, Vec<f64>)> = None;
    let mut optimized = 0;
    let mut done = std::collections::HashSet::new();
    let absorb = |batch: Vec<(Vec<usize>, ScheduleOptimum)>, best: &mut Option<(f64, Vec<usize>, Vec<f64>)>| {
        for (r, o) in batch {
            let cand = (o.value, r.clone());
            if best.as_ref().is_none_or(|b| better(&cand, &(b.0, b.1.clone()))) {
                *best = Some((o.value, r, o.schedule.into_inner()));
            }
        }
    };
    optimized += seeds.len();
    absorb(optimize_batch(p, &seeds, &cfg.optimizer)?, &mut best);
    done.extend(seeds);

    let mut bounded: Vec<(f64, Vec<usize>)> = hybrids
        .into_iter()
        .filter(|(r, _)| !done.contains(r))
        .map(|(r, _)| (route_cost(&arc_bound, &r), r))
        .collect();
    bounded.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));

    let chunk = rayon::current_num_threads().max(1) * 4;
    let mut idx = 0;
    while idx < bounded.len() {
        let incumbent = best.as_ref().map_or(f64::INFINITY, |b| b.0);
        if bounded[idx].0 > incumbent {
            break;
        }
        let batch: Vec<Vec<usize>> = bounded[idx..(idx + chunk).min(bounded.len())]
            .iter()
            .filter(|(lb, _)| *lb <= incumbent)
            .map(|(_, r)| r.clone())
            .collect();
        idx += chunk;
        optimized += batch.len();
        absorb(optimize_batch(p, &batch, &cfg.optimizer)?, &mut best);
    }
    finish(best.expect("at least one tour"), optimized)
}

fn enumerate_prefiltered(p: &Problem, cfg: &EnumerationConfig) -> Result<EnumerationResult> {
    let n = p.n();
    let mut ranked: Vec<(f64, Vec<usize>)> = permutations(n)
        .into_par_iter()
        .map(|r| heavy_traffic_objective(p, &r).map(|v| (v, r)))
        .collect::<Result<_>>()?;
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    let fraction = cfg
        .prefilter_fraction
        .unwrap_or(if n >= 2 { 1.0 / (n * (n - 1)) as f64 } else { 1.0 });
    let keep = ((ranked.len() as f64 * fraction).ceil() as usize).clamp(1, ranked.len());
    let routes: Vec<Vec<usize>> = ranked.into_iter().take(keep).map(|(_, r)| r).collect();
    let results = optimize_batch(p, &routes, &cfg.optimizer)?;
    let best = results
        .into_iter()
        .map(|(r, o)| (o.value, r, o.schedule.into_inner()))
        .reduce(|a, b| if better(&(b.0, b.1.clone()), &(a.0, a.1.clone())) { b } else { a })
        .expect("at least one tour");
    finish(best, keep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{generate_instance, Instance, Regime};
    use crate::phasetype::{PhaseType, Requirement};

    fn brute_force(cost: &[Vec<f64>]) -> f64 {
        permutations(cost.len() - 1)
            .iter()
            .map(|r| route_cost(cost, r))
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn permutations_are_lexicographic() {
        let all = permutations(3);
        assert_eq!(all.len(), 6);
        assert_eq!(all[0], vec![1, 2, 3]);
        assert_eq!(all[5], vec![3, 2, 1]);
        assert!(all.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(permutations(1), vec![vec![1]]);
    }

    #[test]
    fn collinear_clients_visited_in_line_order() {
        let mut inst = generate_instance(3, Regime::Low, 1.0, 0).unwrap();
        inst.coords = vec![[0.0, 0.0], [20.0, 0.0], [10.0, 0.0], [30.0, 0.0]];
        let inst = Instance::from_json(&inst.to_json()).unwrap();
        let route = held_karp(&inst.travel_mean);
        let line = route_cost(&inst.travel_mean, &[2, 1, 3]);
        assert_eq!(line, 60.0);
        assert_eq!(route_cost(&inst.travel_mean, &route), line);
    }

    #[test]
    fn held_karp_matches_brute_force() {
        for seed in 0..6 {
            let n = 3 + seed as usize % 6;
            let inst = generate_instance(n, Regime::High, 1.0, seed).unwrap();
            let hk = held_karp(&inst.travel_mean);
            assert!((route_cost(&inst.travel_mean, &hk) - brute_force(&inst.travel_mean)).abs() < 1e-9);
        }
        // asymmetric
        let cost = vec![
            vec![0.0, 1.0, 9.0, 9.0],
            vec![9.0, 0.0, 1.0, 9.0],
            vec![9.0, 9.0, 0.0, 1.0],
            vec![1.0, 9.0, 9.0, 0.0],
        ];
        assert_eq!(held_karp(&cost), vec![1, 2, 3]);
    }

    #[test]
    fn local_search_is_locally_optimal() {
        let inst = generate_instance(15, Regime::Low, 1.0, 3).unwrap();
        let cost = &inst.travel_mean;
        let route = local_search(cost, nearest_neighbor(cost));
        let v = route_cost(cost, &route);
        let n = route.len();
        for i in 0..n {
            for j in i + 1..n {
                let mut c = route.clone();
                c[i..=j].reverse();
                assert!(!improves(route_cost(cost, &c), v));
            }
        }
        for i in 0..n {
            let mut rest = route.clone();
            let x = rest.remove(i);
            for k in 0..=rest.len() {
                let mut c = rest.clone();
                c.insert(k, x);
                assert!(!improves(route_cost(cost, &c), v));
            }
        }
    }

    #[test]
    fn tsp_orientation_rule() {
        let inst = generate_instance(7, Regime::High, 1.0, 11).unwrap();
        let p = Problem::with_defaults(inst).unwrap();
        let o = solve_tsp(&p).unwrap();
        assert!(o.hybrid <= o.reversed_hybrid);
        assert_eq!(o.hybrid, hybrid_objective(&p, &o.tour).unwrap());
        assert_eq!(o.reversed_hybrid, hybrid_objective(&p, &o.tour.reversed()).unwrap());
    }

    #[test]
    fn msvf_reduces_to_svf() {
        let mut inst = generate_instance(3, Regime::Low, 1.0, 5).unwrap();
        inst.travel_scv = vec![vec![0.0; 4]; 4];
        inst.service_mean = vec![0.0, 3.0, 1.0, 2.0];
        inst.service_scv = vec![0.0, 1.0, 1.0, 1.0];
        let p = Problem::with_defaults(inst).unwrap();
        assert_eq!(msvf_tour(&p).unwrap().as_slice(), &[2, 3, 1]);
    }

    #[test]
    fn msvf_ties_go_to_smallest_index() {
        let mut inst = generate_instance(3, Regime::Low, 1.0, 5).unwrap();
        inst.travel_scv = vec![vec![0.0; 4]; 4];
        inst.service_mean = vec![0.0, 2.0, 1.0, 1.0];
        inst.service_scv = vec![0.0, 1.0, 1.0, 1.0];
        let p = Problem::with_defaults(inst).unwrap();
        assert_eq!(msvf_tour(&p).unwrap().as_slice(), &[2, 3, 1]);
    }

    #[test]
    fn msvf_greedy_steps() {
        let inst = generate_instance(5, Regime::High, 1.0, 9).unwrap();
        let p = Problem::with_defaults(inst.clone()).unwrap();
        let tour = msvf_tour(&p).unwrap();
        let mut prev = 0;
        for (k, &c) in tour.iter().enumerate() {
            let var = |j: usize| {
                inst.travel_scv[prev][j] * inst.travel_mean[prev][j].powi(2)
                    + inst.service_scv[j] * inst.service_mean[j].powi(2)
            };
            for &other in &tour[k + 1..] {
                assert!(var(c) <= var(other));
            }
            prev = c;
        }
    }

    #[test]
    fn newsvendor_exponential_median() {
        // requirement of arc (0, 1) is exponential with mean 2; equal weights
        let inst = Instance::from_position_requirements(&[2.0, 1.0], &[1.0, 1.0], 1.0, 1.0).unwrap();
        let p = Problem::with_defaults(inst).unwrap();
        let nv = newsvendor_costs(&p).unwrap();
        assert!((nv.x_star[0][1] - 2.0 * 2f64.ln()).abs() < 1e-9);
        // C(x) = 2 E(U-x)+ + x - E U at the median: 2*2*0.5 + 2 ln 2 - 2
        assert!((nv.cost[0][1] - 4.0 * 2f64.ln() / 2.0).abs() < 1e-9);
    }

    #[test]
    fn newsvendor_minimizer_dominates_mean() {
        let inst = generate_instance(6, Regime::High, 1.0, 13).unwrap();
        let p = Problem::with_defaults(inst).unwrap();
        let nv = newsvendor_costs(&p).unwrap();
        for i in 0..=6 {
            for j in 1..=6 {
                if i == j {
                    continue;
                }
                let mean = p.arc_moments(i, j).unwrap().mean;
                assert!(nv.cost[i][j] >= 0.0);
                assert!(nv.cost[i][j] <= newsvendor_cost(&p, i, j, mean).unwrap() + 1e-9);
            }
        }
    }

    #[test]
    fn newsvendor_closed_form_matches_matrix_form() {
        let inst = generate_instance(4, Regime::High, 1.0, 17).unwrap();
        let p = Problem::with_defaults(inst).unwrap();
        for i in 0..=4 {
            for j in 1..=4 {
                if i == j {
                    continue;
                }
                if let Requirement::PhaseType(pt) = p.requirement(i, j).unwrap() {
                    let x = pt.mean();
                    let closed = crate::phasetype::expected_excess_closed_form(pt, x).unwrap();
                    let matrix = crate::phasetype::expected_excess(pt, x).unwrap();
                    assert!((closed - matrix).abs() < 1e-10);
                }
            }
        }
        let _ = PhaseType::exponential(1.0);
    }

    #[test]
    fn mtsp_needs_travel_weight() {
        let inst = generate_instance(4, Regime::Low, 0.0, 1).unwrap();
        let p = Problem::with_defaults(inst).unwrap();
        assert!(matches!(mtsp_tour(&p), Err(Error::Config(_))));
    }

    #[test]
    fn modified_costs_dominate_travel() {
        let inst = generate_instance(5, Regime::Low, 0.5, 2).unwrap();
        let p = Problem::with_defaults(inst.clone()).unwrap();
        let m = modified_cost_matrix(&p).unwrap();
        for i in 0..=5 {
            for j in 0..=5 {
                if i != j {
                    assert!(m.c_hat[i][j] >= inst.travel_mean[i][j]);
                }
            }
        }
        assert_eq!(mtsp_tour(&p).unwrap().len(), 5);
    }

    #[test]
    fn enumeration_single_client() {
        let inst = generate_instance(1, Regime::Low, 1.0, 8).unwrap();
        let p = Problem::with_defaults(inst).unwrap();
        let r = enumerate_optimal(&p, EnumerationMode::Exact).unwrap();
        assert_eq!(r.tour.as_slice(), &[1]);
        let opt = crate::appointment::optimize_schedule(&p, &r.tour).unwrap();
        assert_eq!(r.value, opt.value);
    }

    #[test]
    fn enumeration_cap() {
        let inst = generate_instance(10, Regime::Low, 1.0, 8).unwrap();
        let p = Problem::with_defaults(inst).unwrap();
        assert_eq!(
            enumerate_optimal(&p, EnumerationMode::Exact).unwrap_err(),
            Error::EnumerationCap { n: 10, cap: 9 }
        );
    }

    #[test]
    fn identical_clients_tie() {
        let inst = Instance::from_position_requirements(&[1.0; 3], &[0.7; 3], 1.0, 1.0).unwrap();
        let p = Problem::with_defaults(inst).unwrap();
        let values: Vec<f64> = permutations(3)
            .iter()
            .map(|r| optimize_route(&p, r, &OptimizerConfig::default()).unwrap().value)
            .collect();
        for v in &values {
            assert!((v - values[0]).abs() < 1e-9);
        }
        let r = enumerate_optimal(&p, EnumerationMode::Exact).unwrap();
        assert!((r.value - values[0]).abs() < 1e-9);
    }

    #[test]
    fn pruned_enumeration_matches_full_scan() {
        let inst = generate_instance(5, Regime::High, 0.5, 23).unwrap();
        let p = Problem::with_defaults(inst).unwrap();
        let r = enumerate_optimal(&p, EnumerationMode::Exact).unwrap();
        let full = permutations(5)
            .iter()
            .map(|route| optimize_route(&p, route, &OptimizerConfig::default()).unwrap().value)
            .fold(f64::INFINITY, f64::min);
        assert!((r.value - full).abs() <= 1e-9 * full);
        let pre = enumerate_optimal(&p, EnumerationMode::HeavyTrafficPrefilter).unwrap();
        assert!(pre.value >= r.value - 1e-9);
        assert_eq!(pre.optimized, 6);
    }

    #[test]
    fn lower_bound_is_valid() {
        let inst = generate_instance(4, Regime::High, 1.0, 31).unwrap();
        let p = Problem::with_defaults(inst.clone()).unwrap();
        let nv = newsvendor_costs(&p).unwrap();
        for r in permutations(4) {
            let bound = inst.weight_travel * inst.route_travel(&r) + route_cost(&nv.cost, &r);
            let v = optimize_route(&p, &r, &OptimizerConfig::default()).unwrap().value;
            assert!(bound <= v + 1e-9);
        }
    }
}
