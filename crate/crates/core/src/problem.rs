use std::sync::OnceLock;

use crate::appointment::HeavyTrafficConfig;
use crate::error::{Error, Result};
use crate::instance::{ArcMoments, Instance};
use crate::phasetype::{fit_requirement, FitConfig, Requirement};

/// An instance together with its fitting and heavy-traffic settings and a
/// per-arc cache of fitted requirements.
///
/// The cache fills lazily; concurrent readers may race to fit the same arc,
/// but the fit is a pure function so every winner stores the same value.
#[derive(Debug)]
pub struct Problem {
    inst: Instance,
    fit: FitConfig,
    ht: HeavyTrafficConfig,
    arcs: Vec<OnceLock<Result<Requirement>>>,
}

impl Problem {
    pub fn new(inst: Instance, fit: FitConfig, ht: HeavyTrafficConfig) -> Result<Problem> {
        inst.validate()?;
        ht.validate()?;
        let m = inst.locations();
        Ok(Problem {
            inst,
            fit,
            ht,
            arcs: (0..m * m).map(|_| OnceLock::new()).collect(),
        })
    }

    pub fn with_defaults(inst: Instance) -> Result<Problem> {
        Problem::new(inst, FitConfig::default(), HeavyTrafficConfig::default())
    }

    pub fn instance(&self) -> &Instance {
        &self.inst
    }

    pub fn n(&self) -> usize {
        self.inst.n
    }

    pub fn fit_config(&self) -> &FitConfig {
        &self.fit
    }

    pub fn heavy_traffic(&self) -> &HeavyTrafficConfig {
        &self.ht
    }

    pub fn arc_moments(&self, from: usize, to: usize) -> Result<ArcMoments> {
        self.inst.service_requirement(from, to)
    }

    /// Fitted law of `U = T_{from,to} + B_from`, memoized per arc.
    pub fn requirement(&self, from: usize, to: usize) -> Result<&Requirement> {
        let m = self.inst.locations();
        if from >= m || to >= m || from == to {
            return Err(Error::domain(format!("invalid arc {from} -> {to}")));
        }
        let cell = &self.arcs[from * m + to];
        cell.get_or_init(|| {
            let u = self.inst.service_requirement(from, to)?;
            fit_requirement(u.mean, u.variance, &self.fit)
        })
        .as_ref()
        .map_err(Clone::clone)
    }

    /// Checks that `route` visits distinct clients of this instance. Partial
    /// routes are allowed.
    pub fn check_route(&self, route: &[usize]) -> Result<()> {
        let n = self.inst.n;
        let mut seen = vec![false; n + 1];
        for &c in route {
            if c == 0 || c > n || seen[c] {
                return Err(Error::domain(format!("route {route:?} is not a set of distinct clients")));
            }
            seen[c] = true;
        }
        Ok(())
    }
}
