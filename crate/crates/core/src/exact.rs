//! Exact expected idle and waiting times when every requirement is phase
//! type.
//!
//! Position `j` sees `R = W_{j-1} + U_j`. The chain keeps `R` as
//! `shift + Z` with `Z` phase type over the concatenated phases of all
//! requirements so far; `alpha` may be defective, the missing mass being an
//! atom at zero. After the appointment at `x_j` the waiting time
//! `W_j = (R - x_j)^+` has the same generator and initial vector
//! `alpha exp(V (x_j - shift))`, and the next requirement is appended as a new
//! diagonal block fed by the exit rates of the current one. With phase-type
//! requirements only, `shift` stays zero and the representation is the
//! block-triangular recursion; a point-mass requirement adds to `shift`
//! instead of adding phases.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{Schedule, Tour};
use crate::linalg::{matrix_exponential, Matrix};
use crate::phasetype::Requirement;
use crate::problem::Problem;

/// Round-off allowance for expectations that must be nonnegative.
const NEGATIVE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    shift: f64,
    alpha: Vec<f64>,
    rates: Matrix,
}

/// Expected idle and waiting time at one position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionTerms {
    pub idle: f64,
    pub wait: f64,
    /// `E R_{j-1}`, the mean of the quantity the appointment is compared with.
    pub sojourn_mean: f64,
}

impl Default for ChainState {
    fn default() -> Self {
        ChainState::new()
    }
}

impl ChainState {
    /// State before the first client: no waiting.
    pub fn new() -> Self {
        ChainState {
            shift: 0.0,
            alpha: Vec::new(),
            rates: Matrix::zeros(0),
        }
    }

    pub fn dim(&self) -> usize {
        self.rates.dim()
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn rates(&self) -> &Matrix {
        &self.rates
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    /// `R = W + U`. `position` is 1-based and only used in errors.
    pub fn absorb(&mut self, req: &Requirement, position: usize, max_dim: usize) -> Result<()> {
        match req {
            Requirement::Deterministic(c) => {
                self.shift += c;
                Ok(())
            }
            Requirement::PhaseType(pt) => {
                let old = self.dim();
                let d = pt.dim();
                let dim = old + d;
                if dim > max_dim {
                    return Err(Error::ChainDimension { position, dim, cap: max_dim });
                }
                let exit: Vec<f64> = self.rates.row_sums().into_iter().map(|s| (-s).max(0.0)).collect();
                let mut rates = self.rates.grown(dim);
                let block = pt.rates();
                for i in 0..d {
                    for k in i..d {
                        rates[(old + i, old + k)] = block[(i, k)];
                    }
                }
                for (i, e) in exit.iter().enumerate() {
                    if *e == 0.0 {
                        continue;
                    }
                    for (k, a) in pt.alpha().iter().enumerate() {
                        rates[(i, old + k)] = e * a;
                    }
                }
                let atom = (1.0 - self.alpha.iter().sum::<f64>()).max(0.0);
                self.alpha.extend(pt.alpha().iter().map(|a| a * atom));
                self.rates = rates;
                Ok(())
            }
        }
    }

    /// `-V^{-1} 1`.
    fn absorption_times(&self) -> Result<Vec<f64>> {
        self.rates.solve_upper(&vec![-1.0; self.dim()])
    }

    /// Expected idle and wait for an appointment `x` after the current `R`,
    /// then turns the state into `W = (R - x)^+`.
    pub fn settle(&mut self, x: f64) -> Result<PositionTerms> {
        let z = self.absorption_times()?;
        let z_mean: f64 = dot(&self.alpha, &z);
        let sojourn_mean = self.shift + z_mean;
        let y = x - self.shift;
        let (idle, wait) = if y >= 0.0 {
            let w = if self.dim() == 0 {
                Vec::new()
            } else {
                let e = matrix_exponential(&self.rates.scaled(y))?;
                e.left_mul(&self.alpha).into_iter().map(|v| v.max(0.0)).collect()
            };
            let remaining: f64 = w.iter().sum();
            let before: f64 = self.alpha.iter().sum();
            if remaining > before + 1e-9 || !remaining.is_finite() {
                return Err(Error::Numerical(format!(
                    "transient mass grew from {before} to {remaining}"
                )));
            }
            let excess = dot(&w, &z);
            self.alpha = w;
            self.shift = 0.0;
            (y - z_mean + excess, excess)
        } else {
            self.shift = -y;
            (0.0, sojourn_mean - x)
        };
        let scale = 1.0 + x.abs() + sojourn_mean.abs();
        Ok(PositionTerms {
            idle: clamp_round_off(idle, scale, "idle")?,
            wait: clamp_round_off(wait, scale, "wait")?,
            sojourn_mean,
        })
    }
}

fn clamp_round_off(v: f64, scale: f64, what: &str) -> Result<f64> {
    if v >= 0.0 {
        Ok(v)
    } else if v >= -NEGATIVE_TOLERANCE * scale {
        Ok(0.0)
    } else {
        Err(Error::Numerical(format!("expected {what} time evaluated to {v}")))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Objective value with its breakdown. Per-client vectors are indexed by
/// tour position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub objective: f64,
    /// Expected travel time including the return leg, unweighted.
    pub travel_sum: f64,
    pub travel_component: f64,
    pub idle_component: f64,
    pub wait_component: f64,
    pub per_client_idle: Vec<f64>,
    pub per_client_wait: Vec<f64>,
}

/// Per-position representation of the sojourn variables `R_{j-1}` seen by
/// each appointment, in visiting order.
#[derive(Debug, Clone)]
pub struct SojournChain {
    pub dims: Vec<usize>,
    pub alphas: Vec<Vec<f64>>,
    pub shifts: Vec<f64>,
    /// `P(R_{j-1} <= x_j)` at each position.
    pub cdf_at_appointment: Vec<f64>,
    rates: Matrix,
}

impl SojournChain {
    /// Generator of position `j` (0-based): the leading block of the final one.
    pub fn rates_at(&self, j: usize) -> Matrix {
        self.rates.leading_block(self.dims[j])
    }
}

pub fn build_sojourn_chain(p: &Problem, tour: &Tour, sched: &Schedule) -> Result<SojournChain> {
    check_lengths(p, tour, sched)?;
    let cap = p.fit_config().max_chain_dim;
    let mut state = ChainState::new();
    let mut out = SojournChain {
        dims: Vec::new(),
        alphas: Vec::new(),
        shifts: Vec::new(),
        cdf_at_appointment: Vec::new(),
        rates: Matrix::zeros(0),
    };
    let mut prev = 0;
    for (j, (&c, &x)) in tour.iter().zip(sched.iter()).enumerate() {
        state.absorb(p.requirement(prev, c)?, j + 1, cap)?;
        out.dims.push(state.dim());
        out.alphas.push(state.alpha.clone());
        out.shifts.push(state.shift);
        out.rates = state.rates.clone();
        let y = x - state.shift;
        state.settle(x)?;
        let cdf = if y < 0.0 {
            0.0
        } else {
            1.0 - state.alpha.iter().sum::<f64>()
        };
        if !(-1e-9..=1.0 + 1e-9).contains(&cdf) {
            return Err(Error::Numerical(format!("cdf value {cdf} at position {}", j + 1)));
        }
        out.cdf_at_appointment.push(cdf);
        prev = c;
    }
    Ok(out)
}

fn check_lengths(p: &Problem, tour: &Tour, sched: &Schedule) -> Result<()> {
    if tour.len() != p.n() {
        return Err(Error::domain(format!(
            "tour visits {} clients, instance has {}",
            tour.len(),
            p.n()
        )));
    }
    if sched.len() != tour.len() {
        return Err(Error::domain(format!(
            "schedule has {} entries for {} clients",
            sched.len(),
            tour.len()
        )));
    }
    Ok(())
}

/// Exact objective of a full tour under a schedule.
pub fn evaluate_exact(p: &Problem, tour: &Tour, sched: &Schedule) -> Result<Evaluation> {
    check_lengths(p, tour, sched)?;
    evaluate_route(p, tour, sched)
}

/// Exact objective of a (possibly partial) route; `x` must be nonnegative.
pub(crate) fn evaluate_route(p: &Problem, route: &[usize], x: &[f64]) -> Result<Evaluation> {
    debug_assert_eq!(route.len(), x.len());
    let inst = p.instance();
    let cap = p.fit_config().max_chain_dim;
    let mut state = ChainState::new();
    let mut idle = Vec::with_capacity(route.len());
    let mut wait = Vec::with_capacity(route.len());
    let mut prev = 0;
    for (j, (&c, &xj)) in route.iter().zip(x).enumerate() {
        state.absorb(p.requirement(prev, c)?, j + 1, cap)?;
        let t = state.settle(xj)?;
        idle.push(t.idle);
        wait.push(t.wait);
        prev = c;
    }
    let travel_sum = inst.route_travel(route);
    let travel_component = inst.weight_travel * travel_sum;
    let idle_component = inst.weight_idle * idle.iter().sum::<f64>();
    let wait_component: f64 = route
        .iter()
        .zip(&wait)
        .map(|(&c, w)| inst.weight_wait[c] * w)
        .sum();
    Ok(Evaluation {
        objective: travel_component + idle_component + wait_component,
        travel_sum,
        travel_component,
        idle_component,
        wait_component,
        per_client_idle: idle,
        per_client_wait: wait,
    })
}

/// Weighted appointment cost of positions `from..` given the chain state
/// just before position `from`.
pub(crate) fn suffix_cost(
    p: &Problem,
    mut state: ChainState,
    route: &[usize],
    x: &[f64],
    from: usize,
) -> Result<f64> {
    let inst = p.instance();
    let cap = p.fit_config().max_chain_dim;
    let mut prev = if from == 0 { 0 } else { route[from - 1] };
    let mut cost = 0.0;
    for j in from..route.len() {
        let c = route[j];
        state.absorb(p.requirement(prev, c)?, j + 1, cap)?;
        let t = state.settle(x[j])?;
        cost += inst.weight_idle * t.idle + inst.weight_wait[c] * t.wait;
        prev = c;
    }
    Ok(cost)
}
