//! Problem data: clients, depot, travel and service moments, cost weights;
//! the seeded instance generator; JSON instance files.
//!
//! Random draws use ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded from a `u64`.
//! Service-time scvs come from a separate ChaCha stream so that the two scv
//! regimes of one seed share every other parameter.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const INSTANCE_SCHEMA_VERSION: u32 = 1;

/// Side length of the square grid clients are dispersed on.
pub const GRID_SIZE: f64 = 50.0;
pub const TRAVEL_SCV: f64 = 0.15;
pub const IDLE_WEIGHT: f64 = 2.5;
pub const SERVICE_MEAN_RANGE: (f64, f64) = (30.0, 60.0);
pub const WAIT_WEIGHT_RANGE: (f64, f64) = (1.0, 10.0);

/// Service-time variability regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Low,
    High,
}

impl Regime {
    pub fn service_scv_range(self) -> (f64, f64) {
        match self {
            Regime::Low => (0.15, 0.5),
            Regime::High => (0.5, 1.5),
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Low => "low",
            Regime::High => "high",
        })
    }
}

impl FromStr for Regime {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "low" => Ok(Regime::Low),
            "high" => Ok(Regime::High),
            other => Err(Error::domain(format!("unknown scv regime '{other}'"))),
        }
    }
}

/// An RAS problem. Location 0 is the depot; clients are `1..=n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub n: usize,
    pub coords: Vec<[f64; 2]>,
    pub travel_mean: Vec<Vec<f64>>,
    /// Whether `travel_mean` was given explicitly instead of derived from coordinates.
    pub explicit_travel: bool,
    pub travel_scv: Vec<Vec<f64>>,
    pub service_mean: Vec<f64>,
    pub service_scv: Vec<f64>,
    pub weight_travel: f64,
    pub weight_idle: f64,
    pub weight_wait: Vec<f64>,
}

/// Mean and variance of a combined travel-plus-service requirement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArcMoments {
    pub mean: f64,
    pub variance: f64,
}

impl ArcMoments {
    pub fn scv(&self) -> f64 {
        self.variance / (self.mean * self.mean)
    }
}

fn euclidean(coords: &[[f64; 2]]) -> Vec<Vec<f64>> {
    coords
        .iter()
        .map(|a| {
            coords
                .iter()
                .map(|b| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt())
                .collect()
        })
        .collect()
}

impl Instance {
    pub fn locations(&self) -> usize {
        self.n + 1
    }

    /// Checks every structural invariant; the message names the offending field.
    pub fn validate(&self) -> Result<()> {
        let m = self.n + 1;
        let field = |name: &str, msg: String| Error::Parse {
            context: format!("field `{name}`"),
            message: msg,
        };
        if self.n == 0 {
            return Err(field("n", "an instance needs at least one client".into()));
        }
        if self.coords.len() != m {
            return Err(field("coords", format!("expected {m} points, got {}", self.coords.len())));
        }
        let square = |name: &str, mat: &Vec<Vec<f64>>| -> Result<()> {
            if mat.len() != m || mat.iter().any(|r| r.len() != m) {
                return Err(field(name, format!("expected a {m}x{m} matrix")));
            }
            if mat.iter().flatten().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(field(name, "entries must be finite and nonnegative".into()));
            }
            Ok(())
        };
        square("travel_mean", &self.travel_mean)?;
        square("travel_scv", &self.travel_scv)?;
        if (0..m).any(|i| self.travel_mean[i][i] != 0.0) {
            return Err(field("travel_mean", "diagonal must be zero".into()));
        }
        for (name, v) in [
            ("service_mean", &self.service_mean),
            ("service_scv", &self.service_scv),
            ("weight_wait", &self.weight_wait),
        ] {
            if v.len() != m {
                return Err(field(name, format!("expected {m} entries, got {}", v.len())));
            }
            if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(field(name, "entries must be finite and nonnegative".into()));
            }
        }
        if self.service_mean[0] != 0.0 {
            return Err(field("service_mean", "the depot has no service (entry 0 must be 0)".into()));
        }
        for (name, w) in [("weight_travel", self.weight_travel), ("weight_idle", self.weight_idle)] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(field(name, "weight must be finite and nonnegative".into()));
            }
        }
        Ok(())
    }

    /// Moments of `U = T_{from,to} + B_from` under independence; the depot
    /// contributes no service.
    pub fn service_requirement(&self, from: usize, to: usize) -> Result<ArcMoments> {
        let m = self.locations();
        if from >= m || to >= m {
            return Err(Error::domain(format!("location index out of range ({from} -> {to})")));
        }
        if from == to {
            return Err(Error::domain(format!("arc {from} -> {to} is a self-loop")));
        }
        let t = self.travel_mean[from][to];
        let t_var = self.travel_scv[from][to] * t * t;
        let (b, b_var) = if from == 0 {
            (0.0, 0.0)
        } else {
            let b = self.service_mean[from];
            (b, self.service_scv[from] * b * b)
        };
        Ok(ArcMoments {
            mean: t + b,
            variance: t_var + b_var,
        })
    }

    /// Expected travel time of a closed route starting and ending at the depot.
    pub fn route_travel(&self, route: &[usize]) -> f64 {
        let mut prev = 0;
        let mut total = 0.0;
        for &c in route {
            total += self.travel_mean[prev][c];
            prev = c;
        }
        total + self.travel_mean[prev][0]
    }

    /// Copy with all mean travel times multiplied by `factor`; scvs and
    /// service times are unchanged.
    pub fn with_travel_scale(&self, factor: f64) -> Result<Instance> {
        if !(factor.is_finite() && factor >= 0.0) {
            return Err(Error::domain(format!("travel scale must be nonnegative, got {factor}")));
        }
        let mut out = self.clone();
        for row in &mut out.travel_mean {
            for v in row.iter_mut() {
                *v *= factor;
            }
        }
        out.explicit_travel = true;
        Ok(out)
    }

    /// Instance whose identity tour `1, 2, ..., n` has the given requirement
    /// moments per position, with no travel cost. Client `j`'s requirement is
    /// carried by the arc from `j - 1`; all other arcs get the same law as
    /// the arc into their head, so the instance stays well defined for any
    /// tour.
    pub fn from_position_requirements(
        means: &[f64],
        scvs: &[f64],
        weight_idle: f64,
        weight_wait: f64,
    ) -> Result<Instance> {
        let n = means.len();
        if n == 0 || scvs.len() != n {
            return Err(Error::domain("need one scv per requirement mean"));
        }
        let m = n + 1;
        let mut travel_mean = vec![vec![0.0; m]; m];
        let mut travel_scv = vec![vec![0.0; m]; m];
        for i in 0..m {
            for j in 1..m {
                if i != j {
                    travel_mean[i][j] = means[j - 1];
                    travel_scv[i][j] = scvs[j - 1];
                }
            }
        }
        let mut weight = vec![weight_wait; m];
        weight[0] = 0.0;
        let inst = Instance {
            n,
            coords: (0..m).map(|i| [i as f64, 0.0]).collect(),
            travel_mean,
            explicit_travel: true,
            travel_scv,
            service_mean: vec![0.0; m],
            service_scv: vec![0.0; m],
            weight_travel: 0.0,
            weight_idle,
            weight_wait: weight,
        };
        inst.validate()?;
        Ok(inst)
    }
}

/// Draws an instance: depot at the origin, clients uniform on the grid,
/// Euclidean mean travel times with scv 0.15, service means from U(30, 60),
/// service scvs from the regime's range, wait weights from U(1, 10), idle
/// weight 2.5.
pub fn generate_instance(n: usize, regime: Regime, weight_travel: f64, seed: u64) -> Result<Instance> {
    if n == 0 {
        return Err(Error::domain("an instance needs at least one client"));
    }
    if !(weight_travel.is_finite() && weight_travel >= 0.0) {
        return Err(Error::domain("travel weight must be finite and nonnegative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords = vec![[0.0, 0.0]];
    for _ in 0..n {
        coords.push([rng.random_range(0.0..=GRID_SIZE), rng.random_range(0.0..=GRID_SIZE)]);
    }
    let mut service_mean = vec![0.0];
    for _ in 0..n {
        service_mean.push(rng.random_range(SERVICE_MEAN_RANGE.0..=SERVICE_MEAN_RANGE.1));
    }
    let mut weight_wait = vec![0.0];
    for _ in 0..n {
        weight_wait.push(rng.random_range(WAIT_WEIGHT_RANGE.0..=WAIT_WEIGHT_RANGE.1));
    }

    let mut scv_rng = ChaCha8Rng::seed_from_u64(seed);
    scv_rng.set_stream(1);
    let (lo, hi) = regime.service_scv_range();
    let mut service_scv = vec![0.0];
    for _ in 0..n {
        service_scv.push(scv_rng.random_range(lo..=hi));
    }

    let m = n + 1;
    let mut travel_scv = vec![vec![TRAVEL_SCV; m]; m];
    for (i, row) in travel_scv.iter_mut().enumerate() {
        row[i] = 0.0;
    }
    let inst = Instance {
        n,
        travel_mean: euclidean(&coords),
        coords,
        explicit_travel: false,
        travel_scv,
        service_mean,
        service_scv,
        weight_travel,
        weight_idle: IDLE_WEIGHT,
        weight_wait,
    };
    inst.validate()?;
    Ok(inst)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceFile {
    version: u32,
    n: usize,
    depot: [f64; 2],
    coords: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    travel_mean: Option<Vec<Vec<f64>>>,
    travel_scv: Vec<Vec<f64>>,
    service_mean: Vec<f64>,
    service_scv: Vec<f64>,
    weight_travel: f64,
    weight_idle: f64,
    weight_wait: Vec<f64>,
}

impl Instance {
    pub fn to_json(&self) -> String {
        let file = InstanceFile {
            version: INSTANCE_SCHEMA_VERSION,
            n: self.n,
            depot: self.coords[0],
            coords: self.coords.clone(),
            travel_mean: self.explicit_travel.then(|| self.travel_mean.clone()),
            travel_scv: self.travel_scv.clone(),
            service_mean: self.service_mean.clone(),
            service_scv: self.service_scv.clone(),
            weight_travel: self.weight_travel,
            weight_idle: self.weight_idle,
            weight_wait: self.weight_wait.clone(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("instance serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Instance> {
        let file: InstanceFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            context: format!("line {}, column {}", e.line(), e.column()),
            message: e.to_string(),
        })?;
        if file.version != INSTANCE_SCHEMA_VERSION {
            return Err(Error::Parse {
                context: "field `version`".into(),
                message: format!(
                    "unsupported schema version {}, expected {INSTANCE_SCHEMA_VERSION}",
                    file.version
                ),
            });
        }
        if file.coords.first() != Some(&file.depot) {
            return Err(Error::Parse {
                context: "field `depot`".into(),
                message: "depot must equal coords[0]".into(),
            });
        }
        let explicit_travel = file.travel_mean.is_some();
        let travel_mean = file.travel_mean.unwrap_or_else(|| euclidean(&file.coords));
        let inst = Instance {
            n: file.n,
            coords: file.coords,
            travel_mean,
            explicit_travel,
            travel_scv: file.travel_scv,
            service_mean: file.service_mean,
            service_scv: file.service_scv,
            weight_travel: file.weight_travel,
            weight_idle: file.weight_idle,
            weight_wait: file.weight_wait,
        };
        inst.validate()?;
        Ok(inst)
    }
}

pub fn save_instance(inst: &Instance, path: &Path) -> Result<()> {
    std::fs::write(path, inst.to_json()).map_err(|e| Error::io(path, e))
}

pub fn load_instance(path: &Path) -> Result<Instance> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Instance::from_json(&text).map_err(|e| match e {
        Error::Parse { context, message } => Error::Parse {
            context: format!("{}: {context}", path.display()),
            message,
        },
        other => other,
    })
}

/// A visiting order: a permutation of the clients `1..=n`. The depot is
/// implicit at both ends.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Tour(Vec<usize>);

impl Tour {
    pub fn new(order: Vec<usize>) -> Result<Tour> {
        let n = order.len();
        let mut seen = vec![false; n + 1];
        for &c in &order {
            if c == 0 || c > n || seen[c] {
                return Err(Error::domain(format!("{order:?} is not a permutation of 1..={n}")));
            }
            seen[c] = true;
        }
        Ok(Tour(order))
    }

    pub fn identity(n: usize) -> Tour {
        Tour((1..=n).collect())
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn reversed(&self) -> Tour {
        Tour(self.0.iter().rev().copied().collect())
    }

    pub fn into_inner(self) -> Vec<usize> {
        self.0
    }
}

impl TryFrom<Vec<usize>> for Tour {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Tour> {
        Tour::new(v)
    }
}

impl From<Tour> for Vec<usize> {
    fn from(t: Tour) -> Vec<usize> {
        t.0
    }
}

impl std::ops::Deref for Tour {
    type Target = [usize];
    fn deref(&self) -> &[usize] {
        &self.0
    }
}

/// Inter-appointment times, one per visited position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Schedule(Vec<f64>);

impl Schedule {
    pub fn new(x: Vec<f64>) -> Result<Schedule> {
        if let Some((j, v)) = x.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::domain(format!(
                "inter-appointment time x[{j}] = {v} must be finite and nonnegative"
            )));
        }
        Ok(Schedule(x))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for Schedule {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Schedule> {
        Schedule::new(v)
    }
}

impl From<Schedule> for Vec<f64> {
    fn from(s: Schedule) -> Vec<f64> {
        s.0
    }
}

impl std::ops::Deref for Schedule {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let a = generate_instance(10, Regime::Low, 1.0, 42).unwrap();
        let b = generate_instance(10, Regime::Low, 1.0, 42).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        let c = generate_instance(10, Regime::Low, 1.0, 43).unwrap();
        assert_ne!(a.to_json(), c.to_json());
    }

    #[test]
    fn generated_constants() {
        let inst = generate_instance(8, Regime::High, 0.5, 3).unwrap();
        assert_eq!(inst.weight_idle, 2.5);
        for i in 0..=8 {
            for j in 0..=8 {
                if i != j {
                    assert_eq!(inst.travel_scv[i][j], 0.15);
                }
            }
        }
        assert_eq!(inst.coords[0], [0.0, 0.0]);
    }

    #[test]
    fn single_client_high_regime_ranges() {
        let inst = generate_instance(1, Regime::High, 2.0, 7).unwrap();
        assert!((0.5..=1.5).contains(&inst.service_scv[1]));
        assert!((30.0..=60.0).contains(&inst.service_mean[1]));
        assert_eq!(inst.weight_travel, 2.0);
    }

    #[test]
    fn regimes_share_base_parameters() {
        let lo = generate_instance(6, Regime::Low, 1.0, 9).unwrap();
        let hi = generate_instance(6, Regime::High, 1.0, 9).unwrap();
        assert_eq!(lo.coords, hi.coords);
        assert_eq!(lo.service_mean, hi.service_mean);
        assert_eq!(lo.weight_wait, hi.weight_wait);
        assert!(lo.service_scv[1..].iter().all(|s| (0.15..=0.5).contains(s)));
        assert!(hi.service_scv[1..].iter().all(|s| (0.5..=1.5).contains(s)));
    }

    #[test]
    fn zero_clients_rejected() {
        assert!(matches!(generate_instance(0, Regime::Low, 1.0, 1), Err(Error::Domain(_))));
    }

    #[test]
    fn requirement_arithmetic() {
        let mut inst = generate_instance(2, Regime::Low, 1.0, 1).unwrap();
        inst.travel_mean[1][2] = 10.0;
        inst.travel_scv[1][2] = 0.15;
        inst.service_mean[1] = 40.0;
        inst.service_scv[1] = 0.5;
        let u = inst.service_requirement(1, 2).unwrap();
        assert!((u.mean - 50.0).abs() < 1e-12);
        assert!((u.variance - 815.0).abs() < 1e-9);
        assert!((u.scv() - 0.326).abs() < 1e-12);

        let d = inst.service_requirement(0, 2).unwrap();
        assert_eq!(d.mean, inst.travel_mean[0][2]);
        assert!((d.variance - 0.15 * d.mean * d.mean).abs() < 1e-9);
        assert!(inst.service_requirement(2, 2).is_err());
    }

    #[test]
    fn json_round_trip_and_errors() {
        let inst = generate_instance(4, Regime::High, 1.0, 5).unwrap();
        let back = Instance::from_json(&inst.to_json()).unwrap();
        assert_eq!(inst, back);

        let mut v: serde_json::Value = serde_json::from_str(&inst.to_json()).unwrap();
        v.as_object_mut().unwrap().remove("service_scv");
        let err = Instance::from_json(&v.to_string()).unwrap_err();
        assert!(err.to_string().contains("service_scv"), "{err}");

        let mut v: serde_json::Value = serde_json::from_str(&inst.to_json()).unwrap();
        v.as_object_mut().unwrap().insert("colour".into(), "red".into());
        assert!(Instance::from_json(&v.to_string()).is_err());

        let mut v: serde_json::Value = serde_json::from_str(&inst.to_json()).unwrap();
        v["service_mean"] = serde_json::json!([0.0, 1.0]);
        let err = Instance::from_json(&v.to_string()).unwrap_err();
        assert!(err.to_string().contains("service_mean"), "{err}");
    }

    #[test]
    fn explicit_travel_is_kept_verbatim() {
        let mut inst = generate_instance(3, Regime::Low, 1.0, 5).unwrap();
        inst.travel_mean[1][2] = 123.0;
        inst.explicit_travel = true;
        let back = Instance::from_json(&inst.to_json()).unwrap();
        assert_eq!(back.travel_mean[1][2], 123.0);
        assert_ne!(back.travel_mean[2][1], 123.0);
    }

    #[test]
    fn travel_scaling_leaves_service_alone() {
        let inst = generate_instance(3, Regime::Low, 1.0, 5).unwrap();
        let scaled = inst.with_travel_scale(2.0).unwrap();
        assert_eq!(scaled.service_mean, inst.service_mean);
        assert!((scaled.travel_mean[0][1] - 2.0 * inst.travel_mean[0][1]).abs() < 1e-12);
        let a = inst.service_requirement(1, 2).unwrap();
        let b = scaled.service_requirement(1, 2).unwrap();
        let t = inst.travel_mean[1][2];
        assert!((b.variance - a.variance - 3.0 * 0.15 * t * t).abs() < 1e-9);
    }

    #[test]
    fn tour_and_schedule_validation() {
        assert!(Tour::new(vec![2, 1, 3]).is_ok());
        assert!(Tour::new(vec![2, 2, 3]).is_err());
        assert!(Tour::new(vec![0, 1]).is_err());
        assert!(Schedule::new(vec![1.0, -0.5]).is_err());
        let t: Tour = serde_json::from_str("[3,1,2]").unwrap();
        assert_eq!(t.as_slice(), &[3, 1, 2]);
        assert!(serde_json::from_str::<Tour>("[3,3,2]").is_err());
    }

    #[test]
    fn position_requirement_instance() {
        let inst = Instance::from_position_requirements(&[1.0, 2.0, 3.0], &[0.3, 0.9, 1.5], 0.8, 0.2)
            .unwrap();
        let u = inst.service_requirement(1, 2).unwrap();
        assert_eq!(u.mean, 2.0);
        assert!((u.scv() - 0.9).abs() < 1e-12);
        assert_eq!(inst.route_travel(&[1, 2, 3]), 6.0);
    }
}
