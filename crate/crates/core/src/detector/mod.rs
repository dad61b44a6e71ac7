//! Non-paralyzable SPAD with a count-rate-dependent dead time.
//!
//! Rates named `lambda` are observed (registered) count rates; `beta` is the
//! true arrival rate. For a non-paralyzable detector they are related by
//! `beta = lambda / (1 - t_d * lambda)`.

mod curve;

pub use curve::DeadTimeCurve;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How detector availability under steady noise loading is computed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AvailabilityModel {
    /// `exp(-lambda * t_d(lambda))`: no registered noise click in the
    /// preceding dead window, correlations neglected.
    #[default]
    Exponential,
    /// `1 - lambda * t_d(lambda)`: the non-paralyzable bound, valid only
    /// while the busy fraction is below one.
    LinearBound,
}

fn check_rate(name: &str, rate: f64) -> Result<()> {
    if rate.is_finite() && rate >= 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must be finite and >= 0, got {rate}")))
    }
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must lie in [0, 1], got {p}")))
    }
}

/// Fraction of time the detector sits in its recovery window, `lambda * t_d(lambda)`.
pub fn busy_fraction(lambda: f64, curve: &DeadTimeCurve) -> f64 {
    lambda * curve.dead_time_at(lambda)
}

/// Probability the detector is live at an arbitrary instant under steady
/// Poisson loading at observed rate `lambda`.
pub fn availability(lambda: f64, curve: &DeadTimeCurve, model: AvailabilityModel) -> Result<f64> {
    check_rate("loading rate", lambda)?;
    let busy = busy_fraction(lambda, curve);
    match model {
        AvailabilityModel::Exponential => Ok((-busy).exp()),
        AvailabilityModel::LinearBound if busy < 1.0 => Ok(1.0 - busy),
        AvailabilityModel::LinearBound => Err(Error::Domain(format!(
            "detector saturated under the linear model: lambda * t_d = {busy} >= 1 at lambda = {lambda}"
        ))),
    }
}

/// Signal click probability `p0 * Pr(available)`.
pub fn click_probability(p0: f64, lambda: f64, curve: &DeadTimeCurve, model: AvailabilityModel) -> Result<f64> {
    check_probability("p0", p0)?;
    Ok(p0 * availability(lambda, curve, model)?)
}

pub fn observed_to_true_rate(lambda: f64, t_d: f64) -> Result<f64> {
    check_rate("observed rate", lambda)?;
    check_rate("dead time", t_d)?;
    let busy = lambda * t_d;
    if busy >= 1.0 {
        return Err(Error::Domain(format!(
            "observed rate {lambda} with dead time {t_d} gives lambda * t_d = {busy} >= 1"
        )));
    }
    Ok(lambda / (1.0 - busy))
}

/// Inverse of [`observed_to_true_rate`]; defined for every `beta >= 0`.
pub fn true_to_observed_rate(beta: f64, t_d: f64) -> Result<f64> {
    check_rate("true rate", beta)?;
    check_rate("dead time", t_d)?;
    Ok(beta / (1.0 + t_d * beta))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arrival {
    Click,
    /// Arrived inside the dead window.
    Suppressed,
    /// Detector was live but the photon was not registered (`p0 < 1`).
    Missed,
}

/// Event-loop state of one detector. Dead time is evaluated once at the
/// configured steady-state loading rate.
#[derive(Clone, Debug)]
pub struct DetectorUnit {
    p0: f64,
    curve: DeadTimeCurve,
    loading_rate: f64,
    dead_time: f64,
    dead_until: f64,
    last_arrival: f64,
}

impl DetectorUnit {
    pub fn new(p0: f64, curve: DeadTimeCurve, loading_rate: f64) -> Result<Self> {
        if !(p0 > 0.0 && p0 <= 1.0) {
            return Err(Error::Config(format!("p0 must lie in (0, 1], got {p0}")));
        }
        check_rate("loading rate", loading_rate)?;
        let dead_time = curve.dead_time_at(loading_rate);
        Ok(Self {
            p0,
            curve,
            loading_rate,
            dead_time,
            dead_until: 0.0,
            last_arrival: f64::NEG_INFINITY,
        })
    }

    pub fn p0(&self) -> f64 {
        self.p0
    }

    pub fn curve(&self) -> &DeadTimeCurve {
        &self.curve
    }

    pub fn loading_rate(&self) -> f64 {
        self.loading_rate
    }

    pub fn dead_time(&self) -> f64 {
        self.dead_time
    }

    pub fn dead_until(&self) -> f64 {
        self.dead_until
    }

    pub fn is_live(&self, t: f64) -> bool {
        t >= self.dead_until
    }

    /// Feeds one photon arrival at time `t` (seconds). Arrivals must be
    /// passed in non-decreasing time order.
    pub fn process_arrival<R: Rng + ?Sized>(&mut self, t: f64, rng: &mut R) -> Result<Arrival> {
        if t < self.last_arrival || t.is_nan() {
            return Err(Error::Usage(format!(
                "arrival at {t} s precedes previous arrival at {} s",
                self.last_arrival
            )));
        }
        self.last_arrival = t;
        if t < self.dead_until {
            return Ok(Arrival::Suppressed);
        }
        if self.p0 < 1.0 && !rng.random_bool(self.p0) {
            return Ok(Arrival::Missed);
        }
        self.dead_until = t + self.dead_time;
        Ok(Arrival::Click)
    }
}
