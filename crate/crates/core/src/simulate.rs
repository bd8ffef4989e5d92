//! Monte Carlo estimates of idle and waiting times via the Lindley recursion,
//! sampling each requirement from the same fitted law the exact evaluator
//! uses.
//!
//! Replications run in fixed blocks of [`BLOCK`]; block `b` draws from
//! ChaCha8 seeded with `seed` on stream `b`, and block statistics are merged
//! in block order, so the estimate does not depend on the thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{Schedule, Tour};
use crate::phasetype::Requirement;
use crate::problem::Problem;

pub const BLOCK: u64 = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEstimate {
    pub objective_mean: f64,
    pub objective_stderr: f64,
    /// Per tour position.
    pub idle_mean: Vec<f64>,
    pub idle_stderr: Vec<f64>,
    pub wait_mean: Vec<f64>,
    pub wait_stderr: Vec<f64>,
    pub replications: u64,
    pub seed: u64,
}

/// Streaming mean and sum of squared deviations.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    count: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, v: f64) {
        self.count += 1.0;
        let d = v - self.mean;
        self.mean += d / self.count;
        self.m2 += d * (v - self.mean);
    }

    fn merge(&mut self, other: &Moments) {
        if other.count == 0.0 {
            return;
        }
        let total = self.count + other.count;
        let d = other.mean - self.mean;
        self.mean += d * other.count / total;
        self.m2 += other.m2 + d * d * self.count * other.count / total;
        self.count = total;
    }

    fn stderr(&self) -> f64 {
        if self.count < 2.0 {
            0.0
        } else {
            (self.m2 / (self.count - 1.0) / self.count).sqrt()
        }
    }
}

/// One sample path: per-position idle and waiting times.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    pub requirement: Vec<f64>,
    pub idle: Vec<f64>,
    pub wait: Vec<f64>,
}

/// Draws one path of the recursion `W_j = (W_{j-1} + U_j - x_j)^+`,
/// `I_j = (x_j - W_{j-1} - U_j)^+`.
pub fn sample_path<R: rand::Rng + ?Sized>(reqs: &[&Requirement], x: &[f64], rng: &mut R) -> SamplePath {
    let n = reqs.len();
    let mut path = SamplePath {
        requirement: Vec::with_capacity(n),
        idle: Vec::with_capacity(n),
        wait: Vec::with_capacity(n),
    };
    let mut w = 0.0;
    for (req, &xj) in reqs.iter().zip(x) {
        let u = req.sample(rng);
        let r = w + u;
        let (idle, wait) = if r >= xj { (0.0, r - xj) } else { (xj - r, 0.0) };
        path.requirement.push(u);
        path.idle.push(idle);
        path.wait.push(wait);
        w = wait;
    }
    path
}

pub fn simulate_solution(p: &Problem, tour: &Tour, sched: &Schedule, reps: u64, seed: u64) -> Result<SimEstimate> {
    if reps == 0 {
        return Err(Error::domain("at least one replication is required"));
    }
    if tour.len() != p.n() || sched.len() != tour.len() {
        return Err(Error::domain("tour and schedule must cover every client"));
    }
    let inst = p.instance();
    let mut prev = 0;
    let mut reqs = Vec::with_capacity(tour.len());
    let mut wait_weight = Vec::with_capacity(tour.len());
    for &c in tour.iter() {
        reqs.push(p.requirement(prev, c)?);
        wait_weight.push(inst.weight_wait[c]);
        prev = c;
    }
    let travel = inst.weight_travel * inst.route_travel(tour);
    let n = tour.len();
    let blocks = reps.div_ceil(BLOCK);

    let run_block = |b: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(b);
        let count = BLOCK.min(reps - b * BLOCK);
        let mut obj = Moments::default();
        let mut idle = vec![Moments::default(); n];
        let mut wait = vec![Moments::default(); n];
        for _ in 0..count {
            let path = sample_path(&reqs, sched, &mut rng);
            let mut value = travel;
            for j in 0..n {
                idle[j].push(path.idle[j]);
                wait[j].push(path.wait[j]);
                value += inst.weight_idle * path.idle[j] + wait_weight[j] * path.wait[j];
            }
            obj.push(value);
        }
        (obj, idle, wait)
    };
    let parts: Vec<_> = (0..blocks).into_par_iter().map(run_block).collect();

    let mut obj = Moments::default();
    let mut idle = vec![Moments::default(); n];
    let mut wait = vec![Moments::default(); n];
    for (o, i, w) in &parts {
        obj.merge(o);
        for j in 0..n {
            idle[j].merge(&i[j]);
            wait[j].merge(&w[j]);
        }
    }
    Ok(SimEstimate {
        objective_mean: obj.mean,
        objective_stderr: obj.stderr(),
        idle_mean: idle.iter().map(|m| m.mean).collect(),
        idle_stderr: idle.iter().map(Moments::stderr).collect(),
        wait_mean: wait.iter().map(|m| m.mean).collect(),
        wait_stderr: wait.iter().map(Moments::stderr).collect(),
        replications: reps,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::evaluate_exact;
    use crate::instance::Instance;

    fn chain(means: &[f64], scvs: &[f64]) -> Problem {
        Problem::with_defaults(Instance::from_position_requirements(means, scvs, 1.0, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn moments_merge_matches_single_pass() {
        let data: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 / 7.0).collect();
        let mut whole = Moments::default();
        data.iter().for_each(|&v| whole.push(v));
        let mut merged = Moments::default();
        for chunk in data.chunks(333) {
            let mut m = Moments::default();
            chunk.iter().for_each(|&v| m.push(v));
            merged.merge(&m);
        }
        assert!((whole.mean - merged.mean).abs() < 1e-12);
        assert!((whole.m2 - merged.m2).abs() < 1e-8 * whole.m2);
    }

    #[test]
    fn deterministic_requirements_at_their_means() {
        let p = chain(&[3.0, 5.0, 2.0], &[0.0; 3]);
        let est = simulate_solution(&p, &Tour::identity(3), &Schedule::new(vec![3.0, 5.0, 2.0]).unwrap(), 100, 1)
            .unwrap();
        assert!(est.idle_mean.iter().chain(&est.wait_mean).all(|&v| v == 0.0));
        assert!(est.idle_stderr.iter().chain(&est.wait_stderr).all(|&v| v == 0.0));
        assert_eq!(est.objective_stderr, 0.0);
    }

    #[test]
    fn single_path_is_reproducible() {
        let p = chain(&[1.0, 2.0], &[0.5, 1.4]);
        let s = Schedule::new(vec![1.0, 2.0]).unwrap();
        let a = simulate_solution(&p, &Tour::identity(2), &s, 1, 77).unwrap();
        let b = simulate_solution(&p, &Tour::identity(2), &s, 1, 77).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.objective_stderr, 0.0);
    }

    #[test]
    fn exponential_single_client() {
        let p = chain(&[1.0], &[1.0]);
        let s = Schedule::new(vec![1.0]).unwrap();
        let est = simulate_solution(&p, &Tour::identity(1), &s, 1_000_000, 5).unwrap();
        let e = (-1.0f64).exp();
        assert!((est.idle_mean[0] - e).abs() < 3.0 * est.idle_stderr[0]);
        assert!((est.wait_mean[0] - e).abs() < 3.0 * est.wait_stderr[0]);
    }

    #[test]
    fn path_identities() {
        let p = chain(&[1.0, 2.0, 0.5, 1.5], &[0.3, 1.2, 0.8, 2.0]);
        let reqs: Vec<&Requirement> = [(0, 1), (1, 2), (2, 3), (3, 4)]
            .iter()
            .map(|&(a, b)| p.requirement(a, b).unwrap())
            .collect();
        let x = [1.2, 1.5, 0.7, 2.0];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let path = sample_path(&reqs, &x, &mut rng);
            let mut prev_w = 0.0;
            for (j, &xj) in x.iter().enumerate() {
                assert_eq!(path.idle[j] * path.wait[j], 0.0);
                let lhs = path.wait[j] - path.idle[j];
                let rhs = path.requirement[j] + prev_w - xj;
                assert!((lhs - rhs).abs() < 1e-12);
                prev_w = path.wait[j];
            }
        }
    }

    #[test]
    fn agrees_with_exact_on_short_chain() {
        let p = chain(&[1.0, 1.3, 0.8], &[1.0, 0.4, 1.6]);
        let tour = Tour::identity(3);
        let s = Schedule::new(vec![1.1, 1.5, 0.9]).unwrap();
        let ev = evaluate_exact(&p, &tour, &s).unwrap();
        let est = simulate_solution(&p, &tour, &s, 200_000, 9).unwrap();
        for j in 0..3 {
            assert!((est.idle_mean[j] - ev.per_client_idle[j]).abs() < 4.0 * est.idle_stderr[j]);
            assert!((est.wait_mean[j] - ev.per_client_wait[j]).abs() < 4.0 * est.wait_stderr[j]);
        }
    }

    #[test]
    fn rejects_zero_replications() {
        let p = chain(&[1.0], &[1.0]);
        let s = Schedule::new(vec![1.0]).unwrap();
        assert!(simulate_solution(&p, &Tour::identity(1), &s, 0, 1).is_err());
    }
}
