//! Integrated routing and appointment scheduling with stochastic travel and
//! service times.
//!
//! A single server leaves a depot, visits every client once and returns.
//! Each client receives an appointment; the server idles when early and the
//! client waits when it is late. [`Problem`] wraps an [`Instance`] with
//! per-arc phase-type fits, on top of which this crate provides the exact
//! expected cost of a (tour, schedule) pair, the heavy-traffic and hybrid
//! schedules, benchmark tour heuristics, an enumeration oracle, a large
//! neighbourhood search and a Monte Carlo cross-check.

pub mod appointment;
pub mod cli;
pub mod error;
pub mod exact;
pub mod instance;
pub mod linalg;
pub mod lns;
pub mod phasetype;
pub mod problem;
pub mod routing;
pub mod simulate;

pub use error::{Error, Result};
pub use instance::{Instance, Regime, Schedule, Tour};
pub use problem::Problem;
