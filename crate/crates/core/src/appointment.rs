//! Appointment schedules for a fixed route: the heavy-traffic schedule and
//! its closed-form cost, the hybrid objective (exact cost at the
//! heavy-traffic schedule), and numerical minimisation of the exact cost.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{evaluate_route, suffix_cost, ChainState, Evaluation};
use crate::instance::{Schedule, Tour};
use crate::problem::Problem;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeavyTrafficConfig {
    /// Decay of earlier requirements' variance in the decayed average.
    pub beta: f64,
}

impl Default for HeavyTrafficConfig {
    fn default() -> Self {
        HeavyTrafficConfig { beta: 0.5 }
    }
}

impl HeavyTrafficConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config(format!("beta must lie in [0, 1], got {}", self.beta)));
        }
        Ok(())
    }
}

/// Running `beta`-weighted average of requirement variances.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct DecayedAverage {
    num: f64,
    den: f64,
}

impl DecayedAverage {
    fn push(&mut self, beta: f64, variance: f64) -> f64 {
        self.num = beta * self.num + variance;
        self.den = beta * self.den + 1.0;
        self.num / self.den
    }
}

/// `S_j` for every position of `route`.
pub fn decayed_variance(p: &Problem, route: &[usize]) -> Result<Vec<f64>> {
    p.check_route(route)?;
    let beta = p.heavy_traffic().beta;
    let mut avg = DecayedAverage::default();
    let mut prev = 0;
    route
        .iter()
        .map(|&c| {
            let u = p.arc_moments(prev, c)?;
            prev = c;
            Ok(avg.push(beta, u.variance))
        })
        .collect()
}

fn require_idle_weight(p: &Problem) -> Result<f64> {
    let w = p.instance().weight_idle;
    if w > 0.0 {
        Ok(w)
    } else {
        Err(Error::Config(
            "the heavy-traffic schedule is undefined for a zero idle weight".into(),
        ))
    }
}

fn ht_gap(weight_wait: f64, s: f64, weight_idle: f64) -> f64 {
    (weight_wait * s / (2.0 * weight_idle)).sqrt()
}

/// `x_j = E U_j + sqrt(w_j S_j / (2 w_I))`.
pub fn heavy_traffic_schedule(p: &Problem, route: &[usize]) -> Result<Schedule> {
    let wi = require_idle_weight(p)?;
    let s = decayed_variance(p, route)?;
    let inst = p.instance();
    let mut prev = 0;
    let mut x = Vec::with_capacity(route.len());
    for (&c, &sj) in route.iter().zip(&s) {
        let mean = p.arc_moments(prev, c)?.mean;
        x.push(mean + ht_gap(inst.weight_wait[c], sj, wi));
        prev = c;
    }
    Schedule::new(x)
}

/// Heavy-traffic cost of an arbitrary schedule. Positions with
/// `x_j <= E U_j` cost infinity, except the zero-variance, zero-gap case
/// which costs nothing.
pub fn heavy_traffic_cost(p: &Problem, route: &[usize], x: &[f64]) -> Result<f64> {
    if x.len() != route.len() {
        return Err(Error::domain("schedule and route lengths differ"));
    }
    let s = decayed_variance(p, route)?;
    let inst = p.instance();
    let mut total = inst.weight_travel * inst.route_travel(route);
    let mut prev = 0;
    for ((&c, &sj), &xj) in route.iter().zip(&s).zip(x) {
        let mean = p.arc_moments(prev, c)?.mean;
        let gap = xj - mean;
        let ws = inst.weight_wait[c] * sj;
        if gap > 0.0 {
            total += inst.weight_idle * gap + ws / (2.0 * gap);
        } else if !(gap == 0.0 && ws == 0.0) {
            return Ok(f64::INFINITY);
        }
        prev = c;
    }
    Ok(total)
}

/// Closed-form minimum of the heavy-traffic cost over schedules:
/// `w_T sum E T + sqrt(2 w_I) sum sqrt(w_j S_j)`.
pub fn heavy_traffic_objective(p: &Problem, route: &[usize]) -> Result<f64> {
    let wi = require_idle_weight(p)?;
    let s = decayed_variance(p, route)?;
    let inst = p.instance();
    let spread: f64 = route
        .iter()
        .zip(&s)
        .map(|(&c, &sj)| (inst.weight_wait[c] * sj).sqrt())
        .sum();
    Ok(inst.weight_travel * inst.route_travel(route) + (2.0 * wi).sqrt() * spread)
}

/// Exact objective at the heavy-traffic schedule.
pub fn hybrid_objective(p: &Problem, route: &[usize]) -> Result<f64> {
    hybrid_evaluation(p, route).map(|(_, ev)| ev.objective)
}

pub fn hybrid_evaluation(p: &Problem, route: &[usize]) -> Result<(Schedule, Evaluation)> {
    let x = heavy_traffic_schedule(p, route)?;
    let ev = evaluate_route(p, route, &x)?;
    Ok((x, ev))
}

/// Hybrid-objective state after a route prefix, so that suffixes can be
/// evaluated without recomputing the shared prefix. The heavy-traffic
/// schedule at a position depends only on the prefix up to it, which makes
/// the reuse exact.
#[derive(Debug, Clone)]
pub struct HybridPrefix {
    chain: ChainState,
    avg: DecayedAverage,
    last: usize,
    travel: f64,
    cost: f64,
    len: usize,
}

impl HybridPrefix {
    pub fn start() -> Self {
        HybridPrefix {
            chain: ChainState::new(),
            avg: DecayedAverage::default(),
            last: 0,
            travel: 0.0,
            cost: 0.0,
            len: 0,
        }
    }

    pub fn push(&mut self, p: &Problem, client: usize) -> Result<()> {
        let inst = p.instance();
        let wi = require_idle_weight(p)?;
        let u = p.arc_moments(self.last, client)?;
        let s = self.avg.push(p.heavy_traffic().beta, u.variance);
        let x = u.mean + ht_gap(inst.weight_wait[client], s, wi);
        self.len += 1;
        self.chain
            .absorb(p.requirement(self.last, client)?, self.len, p.fit_config().max_chain_dim)?;
        let t = self.chain.settle(x)?;
        self.cost += inst.weight_idle * t.idle + inst.weight_wait[client] * t.wait;
        self.travel += inst.travel_mean[self.last][client];
        self.last = client;
        Ok(())
    }

    /// Hybrid objective of the prefix as a closed route.
    pub fn objective(&self, p: &Problem) -> f64 {
        let inst = p.instance();
        inst.weight_travel * (self.travel + inst.travel_mean[self.last][0]) + self.cost
    }
}

/// States after each prefix `route[..k]`, `k = 0..=len`.
pub fn hybrid_prefixes(p: &Problem, route: &[usize]) -> Result<Vec<HybridPrefix>> {
    let mut out = Vec::with_capacity(route.len() + 1);
    let mut cur = HybridPrefix::start();
    out.push(cur.clone());
    for &c in route {
        cur.push(p, c)?;
        out.push(cur.clone());
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub max_iterations: usize,
    /// Stationarity target: `max |grad_j| <= tol * (1 + |L|)` over free coordinates.
    pub gradient_tolerance: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            max_iterations: 500,
            gradient_tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleOptimum {
    pub schedule: Schedule,
    pub value: f64,
    pub evaluation: Evaluation,
    pub iterations: usize,
    /// False when the iteration cap or the line search stopped the descent
    /// before the stationarity target was met.
    pub converged: bool,
}

fn fd_step(x: f64) -> f64 {
    1e-5 * (1.0 + x.abs())
}

/// Objective and central-difference gradient. Perturbing `x_j` only changes
/// positions `j..`, so the chain prefix is shared.
fn value_and_gradient(p: &Problem, route: &[usize], x: &[f64]) -> Result<(f64, Vec<f64>)> {
    let n = route.len();
    let inst = p.instance();
    let cap = p.fit_config().max_chain_dim;
    let mut prefixes = Vec::with_capacity(n);
    let mut state = ChainState::new();
    let mut prefix_cost = Vec::with_capacity(n);
    let mut cost = 0.0;
    let mut prev = 0;
    for j in 0..n {
        prefixes.push(state.clone());
        prefix_cost.push(cost);
        let c = route[j];
        state.absorb(p.requirement(prev, c)?, j + 1, cap)?;
        let t = state.settle(x[j])?;
        cost += inst.weight_idle * t.idle + inst.weight_wait[c] * t.wait;
        prev = c;
    }
    let value = inst.weight_travel * inst.route_travel(route) + cost;
    let mut grad = vec![0.0; n];
    let mut xp = x.to_vec();
    for j in 0..n {
        let h = fd_step(x[j]);
        let base = prefixes[j].clone();
        if x[j] - h >= 0.0 {
            xp[j] = x[j] + h;
            let up = suffix_cost(p, base.clone(), route, &xp, j)?;
            xp[j] = x[j] - h;
            let down = suffix_cost(p, base, route, &xp, j)?;
            grad[j] = (up - down) / (2.0 * h);
        } else {
            xp[j] = x[j] + h;
            let up = suffix_cost(p, base, route, &xp, j)?;
            grad[j] = (up - (cost - prefix_cost[j])) / h;
        }
        xp[j] = x[j];
    }
    Ok((value, grad))
}

fn objective_at(p: &Problem, route: &[usize], x: &[f64]) -> Result<f64> {
    evaluate_route(p, route, x).map(|e| e.objective)
}

/// Projected-gradient norm over coordinates that are not held at the bound.
fn stationarity(x: &[f64], g: &[f64]) -> f64 {
    x.iter()
        .zip(g)
        .map(|(&xj, &gj)| if xj <= 0.0 && gj > 0.0 { 0.0 } else { gj.abs() })
        .fold(0.0, f64::max)
}

/// Minimises the exact objective over nonnegative schedules with a projected
/// BFGS descent on finite-difference gradients, starting from the
/// heavy-traffic schedule (or from zero when the idle weight is zero).
pub fn optimize_schedule(p: &Problem, tour: &Tour) -> Result<ScheduleOptimum> {
    optimize_schedule_with(p, tour, &OptimizerConfig::default())
}

pub fn optimize_schedule_with(p: &Problem, tour: &Tour, cfg: &OptimizerConfig) -> Result<ScheduleOptimum> {
    if tour.len() != p.n() {
        return Err(Error::domain("tour does not visit every client"));
    }
    optimize_route(p, tour, cfg)
}

pub(crate) fn optimize_route(p: &Problem, route: &[usize], cfg: &OptimizerConfig) -> Result<ScheduleOptimum> {
    p.check_route(route)?;
    let n = route.len();
    let start = if p.instance().weight_idle > 0.0 {
        heavy_traffic_schedule(p, route)?.into_inner()
    } else {
        let mut prev = 0;
        route
            .iter()
            .map(|&c| {
                let m = p.arc_moments(prev, c).map(|u| u.mean);
                prev = c;
                m
            })
            .collect::<Result<Vec<_>>>()?
    };
    let mut x = start;
    let (mut f, mut g) = value_and_gradient(p, route, &x)?;
    let mut h_inv = identity(n);
    let mut scaled = false;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iterations {
        if stationarity(&x, &g) <= cfg.gradient_tolerance * (1.0 + f.abs()) {
            converged = true;
            break;
        }
        iterations += 1;
        let free: Vec<bool> = x.iter().zip(&g).map(|(&xj, &gj)| !(xj <= 0.0 && gj > 0.0)).collect();
        let mut d = direction(&h_inv, &g, &free);
        if dot(&d, &g) >= 0.0 {
            h_inv = identity(n);
            scaled = false;
            d = direction(&h_inv, &g, &free);
        }

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(xj, dj)| (xj + t * dj).max(0.0)).collect();
            let ft = objective_at(p, route, &trial)?;
            let decrease: f64 = g.iter().zip(trial.iter().zip(&x)).map(|(gj, (a, b))| gj * (a - b)).sum();
            if ft <= f + 1e-4 * decrease && ft < f {
                accepted = Some((trial, ft));
                break;
            }
            t *= 0.5;
        }
        let Some((x_new, _)) = accepted else {
            if is_identity(&h_inv) {
                break;
            }
            h_inv = identity(n);
            scaled = false;
            continue;
        };

        let (f_new, g_new) = value_and_gradient(p, route, &x_new)?;
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if !scaled {
                let gamma = sy / dot(&y, &y);
                h_inv = identity(n);
                for (i, row) in h_inv.iter_mut().enumerate() {
                    row[i] = gamma;
                }
                scaled = true;
            }
            bfgs_update(&mut h_inv, &s, &y, sy);
        }
        x = x_new;
        f = f_new;
        g = g_new;
    }
    if !converged && stationarity(&x, &g) <= cfg.gradient_tolerance * (1.0 + f.abs()) {
        converged = true;
    }
    let evaluation = evaluate_route(p, route, &x)?;
    Ok(ScheduleOptimum {
        value: evaluation.objective,
        schedule: Schedule::new(x)?,
        evaluation,
        iterations,
        converged,
    })
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn is_identity(m: &[Vec<f64>]) -> bool {
    m.iter()
        .enumerate()
        .all(|(i, r)| r.iter().enumerate().all(|(j, &v)| v == if i == j { 1.0 } else { 0.0 }))
}

fn direction(h: &[Vec<f64>], g: &[f64], free: &[bool]) -> Vec<f64> {
    let n = g.len();
    (0..n)
        .map(|i| {
            if !free[i] {
                return 0.0;
            }
            -(0..n).filter(|&k| free[k]).map(|k| h[i][k] * g[k]).sum::<f64>()
        })
        .collect()
}

fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| dot(&h[i], y)).collect();
    let yhy = dot(y, &hy);
    for i in 0..n {
        for k in 0..n {
            h[i][k] += -rho * (hy[i] * s[k] + s[i] * hy[k]) + (rho * rho * yhy + rho) * s[i] * s[k];
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{generate_instance, Instance, Regime};
    use crate::phasetype::FitConfig;

    fn scenario(means: &[f64], scvs: &[f64], wi: f64, ww: f64) -> Problem {
        Problem::with_defaults(Instance::from_position_requirements(means, scvs, wi, ww).unwrap()).unwrap()
    }

    #[test]
    fn decayed_variance_examples() {
        // Var U = (4): mean 2, scv 1
        let p = scenario(&[2.0], &[1.0], 1.0, 1.0);
        assert_eq!(decayed_variance(&p, &[1]).unwrap(), vec![4.0]);
        // Var U = (1, 4)
        let p = scenario(&[1.0, 2.0], &[1.0, 1.0], 1.0, 1.0);
        let s = decayed_variance(&p, &[1, 2]).unwrap();
        assert!((s[1] - 3.0).abs() < 1e-15);
        let p = scenario(&[3.0; 4], &[0.5; 4], 1.0, 1.0);
        for s in decayed_variance(&p, &[1, 2, 3, 4]).unwrap() {
            assert!((s - 4.5).abs() < 1e-12);
        }
    }

    #[test]
    fn beta_extremes() {
        let inst = Instance::from_position_requirements(&[1.0, 2.0, 3.0], &[1.0; 3], 1.0, 1.0).unwrap();
        let p0 = Problem::new(inst.clone(), FitConfig::default(), HeavyTrafficConfig { beta: 0.0 }).unwrap();
        assert_eq!(decayed_variance(&p0, &[1, 2, 3]).unwrap(), vec![1.0, 4.0, 9.0]);
        let p1 = Problem::new(inst, FitConfig::default(), HeavyTrafficConfig { beta: 1.0 }).unwrap();
        let s = decayed_variance(&p1, &[1, 2, 3]).unwrap();
        assert!((s[2] - 14.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn heavy_traffic_schedule_examples() {
        // w_W = 2, w_I = 1, S = 4, E U = 10 -> 12
        let mut inst = Instance::from_position_requirements(&[10.0], &[0.04], 1.0, 2.0).unwrap();
        inst.weight_idle = 1.0;
        let p = Problem::with_defaults(inst).unwrap();
        let x = heavy_traffic_schedule(&p, &[1]).unwrap();
        assert!((x[0] - 12.0).abs() < 1e-12);

        let p = scenario(&[5.0, 6.0], &[0.0, 0.0], 1.0, 1.0);
        assert_eq!(heavy_traffic_schedule(&p, &[1, 2]).unwrap().as_slice(), &[5.0, 6.0]);
        let p = scenario(&[5.0, 6.0], &[0.5, 0.5], 1.0, 0.0);
        assert_eq!(heavy_traffic_schedule(&p, &[1, 2]).unwrap().as_slice(), &[5.0, 6.0]);

        let p = scenario(&[5.0], &[0.5], 0.0, 1.0);
        assert!(matches!(heavy_traffic_schedule(&p, &[1]), Err(Error::Config(_))));
    }

    #[test]
    fn heavy_traffic_objective_hand_example() {
        // w_T = 1, sum E T = 10, w_I = 2, w_W = (1, 1), Var U = (0, 2)
        let mut inst = Instance::from_position_requirements(&[4.0, 2.0], &[0.0, 0.5], 2.0, 1.0).unwrap();
        inst.weight_travel = 1.0;
        inst.travel_mean[2][0] = 4.0;
        let p = Problem::with_defaults(inst).unwrap();
        let v = heavy_traffic_objective(&p, &[1, 2]).unwrap();
        assert!((v - (10.0 + 2.0 * (4.0f64 / 3.0).sqrt())).abs() < 1e-12);
        assert!((v - 12.3094).abs() < 1e-4);
        let x = heavy_traffic_schedule(&p, &[1, 2]).unwrap();
        assert!((heavy_traffic_cost(&p, &[1, 2], &x).unwrap() - v).abs() < 1e-12);
    }

    #[test]
    fn hybrid_single_exponential() {
        let p = scenario(&[1.0], &[1.0], 1.0, 1.0);
        let x = heavy_traffic_schedule(&p, &[1]).unwrap();
        assert!((x[0] - (1.0 + 0.5f64.sqrt())).abs() < 1e-12);
        let e = (-x[0]).exp();
        let want = (x[0] - 1.0 + e) + e;
        assert!((hybrid_objective(&p, &[1]).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn optimizer_single_exponential() {
        let p = scenario(&[1.0], &[1.0], 1.0, 1.0);
        let opt = optimize_schedule(&p, &Tour::identity(1)).unwrap();
        assert!(opt.converged);
        assert!((opt.schedule[0] - 2f64.ln()).abs() < 1e-4);
        assert!((opt.value - 2f64.ln()).abs() < 1e-8);
    }

    #[test]
    fn optimizer_deterministic_requirements() {
        let p = scenario(&[3.0, 7.0, 2.0], &[0.0; 3], 1.0, 4.0);
        let opt = optimize_schedule(&p, &Tour::identity(3)).unwrap();
        assert_eq!(opt.schedule.as_slice(), &[3.0, 7.0, 2.0]);
        assert_eq!(opt.value, 0.0);
        assert_eq!(hybrid_objective(&p, &[1, 2, 3]).unwrap(), 0.0);
    }

    #[test]
    fn optimizer_dominates_hybrid_and_is_stationary() {
        let inst = generate_instance(5, Regime::High, 1.0, 21).unwrap();
        let p = Problem::with_defaults(inst).unwrap();
        let tour = Tour::new(vec![2, 5, 1, 4, 3]).unwrap();
        let opt = optimize_schedule(&p, &tour).unwrap();
        assert!(opt.converged);
        assert!(opt.value <= hybrid_objective(&p, &tour).unwrap() + 1e-9);
        let (f, g) = value_and_gradient(&p, &tour, &opt.schedule).unwrap();
        assert!(stationarity(&opt.schedule, &g) <= 1e-6 * (1.0 + f.abs()));
    }

    #[test]
    fn prefix_reuse_matches_from_scratch() {
        let inst = generate_instance(5, Regime::Low, 0.5, 4).unwrap();
        let p = Problem::with_defaults(inst).unwrap();
        let route = [4, 2, 5, 1, 3];
        let prefixes = hybrid_prefixes(&p, &route).unwrap();
        for k in 0..=5 {
            let want = if k == 0 { 0.0 } else { hybrid_objective(&p, &route[..k]).unwrap() };
            let got = if k == 0 {
                p.instance().weight_travel * 0.0
            } else {
                prefixes[k].objective(&p)
            };
            assert!((got - want).abs() < 1e-9, "{k}: {got} vs {want}");
        }
    }
}
