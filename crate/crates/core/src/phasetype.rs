//! Phase-type distributions: two-moment fitting (mixed Erlang below unit scv,
//! balanced-means hyperexponential above it) and the distributional
//! primitives used by the evaluators.
//!
//! Note on the hyperexponential branch: with rates `2p/m` and `2(1-p)/m` the
//! second moment is `m^2 / (2p(1-p))`, so the scv is `1/(2p(1-p)) - 1`. The
//! fitted `p` reproduces the target scv under that (moment-consistent)
//! expression; the tests check it against explicit moment integrals.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail these checks

use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma};

use crate::error::{Error, Result};
use crate::linalg::{matrix_exponential, Matrix};

/// Mean and squared coefficient of variation of a nonnegative random variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentPair {
    pub mean: f64,
    pub scv: f64,
}

impl MomentPair {
    pub fn new(mean: f64, scv: f64) -> Result<Self> {
        if !(mean > 0.0 && mean.is_finite()) {
            return Err(Error::domain(format!("mean must be positive, got {mean}")));
        }
        if !(scv > 0.0 && scv.is_finite()) {
            return Err(Error::domain(format!("scv must be positive, got {scv}")));
        }
        Ok(MomentPair { mean, scv })
    }

    pub fn variance(&self) -> f64 {
        self.scv * self.mean * self.mean
    }
}

/// What to do with a strictly positive scv below `FitConfig::scv_min`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScvPolicy {
    #[default]
    Reject,
    /// Raise the scv to `scv_min` before fitting.
    Floor,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub scv_min: f64,
    /// Largest dimension a single fitted variable may have.
    pub max_phase_dim: usize,
    /// Largest dimension of the sojourn chain built by the exact evaluator.
    pub max_chain_dim: usize,
    pub scv_policy: ScvPolicy,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            scv_min: 1e-3,
            max_phase_dim: 1000,
            max_chain_dim: 4000,
            scv_policy: ScvPolicy::Reject,
        }
    }
}

/// Parametric family a phase-type representation was built from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    /// Erlang with `k - 1` phases w.p. `p`, `k` phases w.p. `1 - p`, all at rate `mu`.
    MixedErlang { k: usize, mu: f64, p: f64 },
    /// Exponential(`mu1`) w.p. `p`, exponential(`mu2`) w.p. `1 - p`.
    Hyperexponential { p: f64, mu1: f64, mu2: f64 },
    General,
}

/// Absorption time of a finite continuous-time Markov chain, given by an
/// initial row vector and the sub-generator over the transient states.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseType {
    alpha: Vec<f64>,
    rates: Matrix,
    shape: Shape,
}

impl PhaseType {
    /// Validates and wraps a general upper-triangular representation.
    pub fn new(alpha: Vec<f64>, rates: Matrix) -> Result<Self> {
        Self::with_shape(alpha, rates, Shape::General)
    }

    fn with_shape(alpha: Vec<f64>, rates: Matrix, shape: Shape) -> Result<Self> {
        let d = rates.dim();
        if d == 0 || alpha.len() != d {
            return Err(Error::domain(format!(
                "alpha has length {} but rates are {d}x{d}",
                alpha.len()
            )));
        }
        if alpha.iter().any(|&a| !(a >= 0.0)) {
            return Err(Error::domain("alpha has a negative entry"));
        }
        let total: f64 = alpha.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::domain(format!("alpha sums to {total}, expected 1")));
        }
        if !rates.is_finite() || !rates.is_upper_triangular() {
            return Err(Error::domain("rates must be finite and upper triangular"));
        }
        let mut any_exit = false;
        for i in 0..d {
            let row = rates.row(i);
            if !(row[i] < 0.0) {
                return Err(Error::domain(format!("rates[{i}][{i}] is not negative")));
            }
            if row.iter().enumerate().any(|(j, &v)| j != i && v < 0.0) {
                return Err(Error::domain(format!("rates row {i} has a negative off-diagonal")));
            }
            let exit = -row.iter().sum::<f64>();
            if exit < -1e-12 * row[i].abs() {
                return Err(Error::domain(format!("rates row {i} sums to a positive value")));
            }
            any_exit |= exit > 0.0;
        }
        if !any_exit {
            return Err(Error::domain("exit vector is identically zero"));
        }
        Ok(PhaseType { alpha, rates, shape })
    }

    pub fn exponential(rate: f64) -> Result<Self> {
        Self::erlang(1, rate)
    }

    pub fn erlang(phases: usize, rate: f64) -> Result<Self> {
        if phases == 0 || !(rate > 0.0) {
            return Err(Error::domain("Erlang needs at least one phase and a positive rate"));
        }
        let mut alpha = vec![0.0; phases];
        alpha[0] = 1.0;
        Self::with_shape(
            alpha,
            bidiagonal(phases, rate),
            Shape::MixedErlang { k: phases, mu: rate, p: 0.0 },
        )
    }

    pub fn hyperexponential(p: f64, mu1: f64, mu2: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) || !(mu1 > 0.0) || !(mu2 > 0.0) {
            return Err(Error::domain("hyperexponential needs p in [0,1] and positive rates"));
        }
        let rates = Matrix::from_rows(&[vec![-mu1, 0.0], vec![0.0, -mu2]])?;
        Self::with_shape(vec![p, 1.0 - p], rates, Shape::Hyperexponential { p, mu1, mu2 })
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

    pub fn shape(&self) -> Shape {
        self.shape
    }

    /// Exit-rate vector `-rates * 1`.
    pub fn exit_rates(&self) -> Vec<f64> {
        self.rates.row_sums().into_iter().map(|s| (-s).max(0.0)).collect()
    }

    /// Mean, through `-alpha V^{-1} 1`.
    pub fn mean(&self) -> f64 {
        let z = self.expected_absorption_times();
        dot(&self.alpha, &z)
    }

    /// `-V^{-1} 1`: expected time to absorption from each transient state.
    fn expected_absorption_times(&self) -> Vec<f64> {
        let ones = vec![-1.0; self.dim()];
        self.rates
            .solve_upper(&ones)
            .expect("validated phase-type generator is nonsingular")
    }
}

fn bidiagonal(dim: usize, rate: f64) -> Matrix {
    let mut m = Matrix::zeros(dim);
    for i in 0..dim {
        m[(i, i)] = -rate;
        if i + 1 < dim {
            m[(i, i + 1)] = rate;
        }
    }
    m
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Number of Erlang phases `K` with `scv in (1/K, 1/(K-1)]`.
fn erlang_order(scv: f64) -> usize {
    let mut k = (1.0 / scv).floor() as usize + 1;
    k = k.max(2);
    // guard the floor against representation error at the interval ends
    while k > 2 && scv > 1.0 / (k - 1) as f64 {
        k -= 1;
    }
    while scv <= 1.0 / k as f64 {
        k += 1;
    }
    k
}

/// Two-moment phase-type fit: `E_K(mu, p)` for `scv <= 1`, balanced-means
/// `H_2` above.
pub fn fit_phase_type(m: MomentPair, cfg: &FitConfig) -> Result<PhaseType> {
    let MomentPair { mean, scv } = MomentPair::new(m.mean, m.scv)?;
    if scv < cfg.scv_min {
        return Err(Error::ScvBelowMinimum { scv, min: cfg.scv_min });
    }
    if scv <= 1.0 {
        let k = erlang_order(scv);
        if k > cfg.max_phase_dim {
            return Err(Error::FitDimension {
                scv,
                required: k,
                cap: cfg.max_phase_dim,
            });
        }
        let kf = k as f64;
        let radicand = ((1.0 + scv) * kf - scv * kf * kf).max(0.0);
        let p = ((scv * kf - radicand.sqrt()) / (1.0 + scv)).clamp(0.0, 1.0);
        let mu = (kf - p) / mean;
        let mut alpha = vec![0.0; k];
        alpha[0] = 1.0 - p;
        alpha[1] = p;
        PhaseType::with_shape(alpha, bidiagonal(k, mu), Shape::MixedErlang { k, mu, p })
    } else {
        let p = 0.5 * (1.0 + ((scv - 1.0) / (scv + 1.0)).sqrt());
        PhaseType::hyperexponential(p, 2.0 * p / mean, 2.0 * (1.0 - p) / mean)
    }
}

/// First two moments of `pt`, as mean and scv.
pub fn moments(pt: &PhaseType) -> Result<MomentPair> {
    let z1 = pt
        .rates
        .solve_upper(&vec![-1.0; pt.dim()])
        .map_err(|e| Error::Numerical(format!("moments: {e}")))?;
    let z2 = pt
        .rates
        .solve_upper(&z1.iter().map(|v| -v).collect::<Vec<_>>())
        .map_err(|e| Error::Numerical(format!("moments: {e}")))?;
    let mean = dot(&pt.alpha, &z1);
    let second = 2.0 * dot(&pt.alpha, &z2);
    let scv = second / (mean * mean) - 1.0;
    Ok(MomentPair { mean, scv })
}

/// `alpha exp(V x)`: the defective state distribution still in transit at time `x`.
pub fn transient_mass(pt: &PhaseType, x: f64) -> Result<Vec<f64>> {
    if !(x >= 0.0) || !x.is_finite() {
        return Err(Error::domain(format!("time must be finite and nonnegative, got {x}")));
    }
    let e = matrix_exponential(&pt.rates.scaled(x))?;
    Ok(e.left_mul(&pt.alpha)
        .into_iter()
        .map(|v| v.max(0.0))
        .collect())
}

/// `P(X <= x) = 1 - alpha exp(V x) 1`.
pub fn cdf(pt: &PhaseType, x: f64) -> Result<f64> {
    let surv: f64 = transient_mass(pt, x)?.iter().sum();
    Ok((1.0 - surv).clamp(0.0, 1.0))
}

/// Inverse CDF by bracketing and bisection.
pub fn quantile(pt: &PhaseType, q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::domain(format!("quantile level must lie in (0,1), got {q}")));
    }
    let m = moments(pt)?;
    let mut lo = 0.0;
    let mut hi = m.mean * (1.0 + 40.0 * m.scv.max(0.0).sqrt());
    let mut guard = 0;
    while cdf(pt, hi)? <= q {
        lo = hi;
        hi *= 2.0;
        guard += 1;
        if guard > 200 {
            return Err(Error::Numerical(format!("quantile bracket for q = {q} diverged")));
        }
    }
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        let f = cdf(pt, mid)?;
        if (f - q).abs() <= 1e-12 {
            return Ok(mid);
        }
        if f < q {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `E(X - x)^+ = -alpha V^{-1} exp(V x) 1`.
pub fn expected_excess(pt: &PhaseType, x: f64) -> Result<f64> {
    let w = transient_mass(pt, x)?;
    let z = pt.expected_absorption_times();
    Ok(dot(&w, &z).max(0.0))
}

/// Closed-form `E(X - x)^+` for the fitted families, `None` for general shapes.
///
/// Mixed Erlang uses the upper incomplete gamma function with integer order,
/// expanded as a finite Poisson sum.
pub fn expected_excess_closed_form(pt: &PhaseType, x: f64) -> Option<f64> {
    match pt.shape {
        Shape::Hyperexponential { p, mu1, mu2 } => {
            Some(p / mu1 * (-mu1 * x).exp() + (1.0 - p) / mu2 * (-mu2 * x).exp())
        }
        Shape::MixedErlang { k, mu, p } => Some(mixed_erlang_excess(k, mu, p, x)),
        Shape::General => None,
    }
}

fn mixed_erlang_excess(k: usize, mu: f64, p: f64, x: f64) -> f64 {
    let t = mu * x;
    let kf = k as f64;
    // Gamma(k-1, t) / (k-2)! = sum_{i<k-1} Poisson(i; t)
    let tail: f64 = (0..k.saturating_sub(1)).map(|i| poisson_pmf(i, t)).sum();
    let first = (kf - p - t) / mu * tail;
    let second = (kf - p) / mu * poisson_pmf(k - 1, t);
    (first + second).max(0.0)
}

fn poisson_pmf(i: usize, t: f64) -> f64 {
    if t == 0.0 {
        return if i == 0 { 1.0 } else { 0.0 };
    }
    let ln_fact: f64 = (2..=i).map(|v| (v as f64).ln()).sum();
    (-t + i as f64 * t.ln() - ln_fact).exp()
}

/// Draws the absorption time. Mixed Erlang and hyperexponential shapes use
/// their mixture representation; general shapes walk the chain.
pub fn sample<R: Rng + ?Sized>(pt: &PhaseType, rng: &mut R) -> f64 {
    match pt.shape {
        Shape::MixedErlang { k, mu, p } if pt.dim() == k => {
            let phases = if rng.random::<f64>() < p { k - 1 } else { k };
            sample_erlang(phases, mu, rng)
        }
        Shape::Hyperexponential { p, mu1, mu2 } => {
            let e: f64 = Exp1.sample(rng);
            if rng.random::<f64>() < p {
                e / mu1
            } else {
                e / mu2
            }
        }
        _ => sample_chain(pt, rng),
    }
}

fn sample_erlang<R: Rng + ?Sized>(phases: usize, mu: f64, rng: &mut R) -> f64 {
    match phases {
        0 => 0.0,
        1..=16 => (0..phases).map(|_| <Exp1 as Distribution<f64>>::sample(&Exp1, rng)).sum::<f64>() / mu,
        _ => Gamma::new(phases as f64, 1.0 / mu)
            .expect("positive Erlang parameters")
            .sample(rng),
    }
}

fn sample_chain<R: Rng + ?Sized>(pt: &PhaseType, rng: &mut R) -> f64 {
    let d = pt.dim();
    let mut u: f64 = rng.random();
    let mut state = None;
    for (i, &a) in pt.alpha.iter().enumerate() {
        if u < a {
            state = Some(i);
            break;
        }
        u -= a;
    }
    let mut t = 0.0;
    while let Some(i) = state {
        let row = pt.rates.row(i);
        let out = -row[i];
        let e: f64 = Exp1.sample(rng);
        t += e / out;
        let mut u = rng.random::<f64>() * out;
        state = None;
        for (j, &r) in row.iter().enumerate().take(d).skip(i + 1) {
            if u < r {
                state = Some(j);
                break;
            }
            u -= r;
        }
    }
    t
}

/// A fitted service requirement: either a point mass (zero variance) or a
/// phase-type law.
#[derive(Debug, Clone, PartialEq)]
pub enum Requirement {
    Deterministic(f64),
    PhaseType(PhaseType),
}

impl Requirement {
    pub fn mean(&self) -> f64 {
        match self {
            Requirement::Deterministic(c) => *c,
            Requirement::PhaseType(pt) => pt.mean(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Requirement::Deterministic(_) => 0,
            Requirement::PhaseType(pt) => pt.dim(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Requirement::Deterministic(c) => *c,
            Requirement::PhaseType(pt) => sample(pt, rng),
        }
    }

    /// Closed-form excess where available, matrix form otherwise.
    pub fn expected_excess(&self, x: f64) -> Result<f64> {
        match self {
            Requirement::Deterministic(c) => Ok((c - x).max(0.0)),
            Requirement::PhaseType(pt) => match expected_excess_closed_form(pt, x) {
                Some(v) => Ok(v),
                None => expected_excess(pt, x),
            },
        }
    }

    pub fn quantile(&self, q: f64) -> Result<f64> {
        match self {
            Requirement::Deterministic(c) => {
                if q > 0.0 && q < 1.0 {
                    Ok(*c)
                } else {
                    Err(Error::domain(format!("quantile level must lie in (0,1), got {q}")))
                }
            }
            Requirement::PhaseType(pt) => quantile(pt, q),
        }
    }
}

/// Fits a requirement with the given mean and variance. Zero variance gives a
/// point mass; otherwise the scv goes through the configured policy and the
/// two-moment fit.
pub fn fit_requirement(mean: f64, variance: f64, cfg: &FitConfig) -> Result<Requirement> {
    if !(mean >= 0.0 && mean.is_finite()) || !(variance >= 0.0 && variance.is_finite()) {
        return Err(Error::domain(format!(
            "requirement needs finite nonnegative moments, got mean {mean}, variance {variance}"
        )));
    }
    if variance == 0.0 {
        return Ok(Requirement::Deterministic(mean));
    }
    if mean == 0.0 {
        return Err(Error::domain("positive variance with zero mean"));
    }
    let mut scv = variance / (mean * mean);
    if scv < cfg.scv_min && cfg.scv_policy == ScvPolicy::Floor {
        scv = cfg.scv_min;
    }
    fit_phase_type(MomentPair { mean, scv }, cfg).map(Requirement::PhaseType)
}
