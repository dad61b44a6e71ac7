//! Closed-form results for the erasure attack. Information quantities are
//! in bits.

use std::io::Write;

use serde::Serialize;

use crate::detector::{busy_fraction, DeadTimeCurve};
use crate::error::{Error, Result};

/// Abort threshold on the sifted QBER used by BBM92.
pub const DEFAULT_ABORT_QBER: f64 = 0.11;

const BISECTION_TOL: f64 = 1e-12;

fn check_probability(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must lie in [0, 1], got {p}")))
    }
}

fn check_ratio(r: f64) -> Result<()> {
    if r >= 0.0 && r.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("ratio must be finite and >= 0, got {r}")))
    }
}

/// Binary entropy h2(x), with h2(0) = h2(1) = 0.
pub fn binary_entropy(x: f64) -> Result<f64> {
    check_probability("x", x)?;
    if x == 0.0 || x == 1.0 {
        return Ok(0.0);
    }
    Ok(-x * x.log2() - (1.0 - x) * (1.0 - x).log2())
}

/// Sifted QBER under the attack, `r / (2 (1 + r))`.
pub fn e_obs(r: f64) -> Result<f64> {
    check_ratio(r)?;
    Ok(r / (2.0 * (1.0 + r)))
}

/// `2e / (1 - 2e)`, the ratio at which the sifted QBER reaches `e_abort`.
pub fn r_threshold_closed_form(e_abort: f64) -> Result<f64> {
    check_abort(e_abort)?;
    Ok(2.0 * e_abort / (1.0 - 2.0 * e_abort))
}

fn check_abort(e_abort: f64) -> Result<()> {
    if e_abort > 0.0 && e_abort < 0.5 {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "abort threshold must lie in (0, 0.5), got {e_abort}"
        )))
    }
}

/// Largest stealthy ratio: solves `e_obs(r) = e_abort` by bisection.
pub fn r_threshold(e_abort: f64) -> Result<f64> {
    check_abort(e_abort)?;
    let f = |r: f64| r / (2.0 * (1.0 + r)) - e_abort;
    let mut hi = 1.0;
    while f(hi) < 0.0 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    while hi - lo > BISECTION_TOL * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `(p_par + p_perp) / 4`.
pub fn sift_probability(p_par: f64, p_perp: f64) -> Result<f64> {
    check_probability("p_parallel", p_par)?;
    check_probability("p_perp", p_perp)?;
    Ok((p_par + p_perp) / 4.0)
}

/// Erasure probability `epsilon` composed with a BSC of crossover `e`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ChannelParams {
    epsilon: f64,
    e: f64,
}

impl ChannelParams {
    pub fn new(epsilon: f64, e: f64) -> Result<Self> {
        check_probability("epsilon", epsilon)?;
        if !(0.0..=0.5).contains(&e) {
            return Err(Error::Domain(format!("bit error must lie in [0, 0.5], got {e}")));
        }
        Ok(Self { epsilon, e })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn e(&self) -> f64 {
        self.e
    }
}

/// I(A;B) over the {0, 1, erasure} alphabet: `(1 - eps)(1 - h2(e))`.
pub fn mutual_info_erasure_bsc(params: ChannelParams) -> f64 {
    let h = binary_entropy(params.e).expect("validated by ChannelParams");
    (1.0 - params.epsilon) * (1.0 - h)
}

/// Eve's information per sifted detected bit, `1 / (1 + r)`.
pub fn mutual_info_eve_sifted(r: f64) -> Result<f64> {
    check_ratio(r)?;
    Ok(1.0 / (1.0 + r))
}

/// Bob's information per sifted bit, `1 - h2(e_obs(r))`.
pub fn mutual_info_bob_sifted(r: f64) -> Result<f64> {
    Ok(1.0 - binary_entropy(e_obs(r)?)?)
}

/// Conservative suppression ratio from the linear availability bound,
/// `(1 - l_perp t_d(l_perp)) / (1 - l_par t_d(l_par))`.
pub fn r_bound(lambda_par: f64, lambda_perp: f64, curve: &DeadTimeCurve) -> Result<f64> {
    for (name, rate) in [("lambda_parallel", lambda_par), ("lambda_perp", lambda_perp)] {
        if !(rate >= 0.0 && rate.is_finite()) {
            return Err(Error::Domain(format!("{name} must be finite and >= 0, got {rate}")));
        }
        let busy = busy_fraction(rate, curve);
        if busy >= 1.0 {
            return Err(Error::Domain(format!(
                "{name} = {rate} saturates the detector (busy fraction {busy})"
            )));
        }
    }
    Ok((1.0 - busy_fraction(lambda_perp, curve)) / (1.0 - busy_fraction(lambda_par, curve)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StealthScanRow {
    pub lambda_parallel: f64,
    pub lambda_perp: f64,
    /// `None` where either rate saturates the linear model.
    pub r_bound: Option<f64>,
    pub stealthy: bool,
}

pub fn stealth_scan(
    lambda_par_list: &[f64],
    lambda_perp_grid: &[f64],
    curve: &DeadTimeCurve,
    e_abort: f64,
) -> Result<Vec<StealthScanRow>> {
    if lambda_par_list.is_empty() || lambda_perp_grid.is_empty() {
        return Err(Error::Config("stealth scan grids must be non-empty".into()));
    }
    let threshold = r_threshold(e_abort)?;
    let mut rows = Vec::with_capacity(lambda_par_list.len() * lambda_perp_grid.len());
    for &lambda_parallel in lambda_par_list {
        for &lambda_perp in lambda_perp_grid {
            let r = match r_bound(lambda_parallel, lambda_perp, curve) {
                Ok(r) => Some(r),
                Err(Error::Domain(_)) if lambda_parallel >= 0.0 && lambda_perp >= 0.0 => None,
                Err(e) => return Err(e),
            };
            rows.push(StealthScanRow {
                lambda_parallel,
                lambda_perp,
                r_bound: r,
                stealthy: r.is_some_and(|r| r < threshold),
            });
        }
    }
    Ok(rows)
}

/// Smallest orthogonal loading at which `r_bound` falls to `r_target`, by
/// bisection on `[0, upper]`. `None` if it never does below `upper`.
/// Loadings that saturate the orthogonal detector count as `r = 0`.
pub fn stealth_crossing(lambda_par: f64, r_target: f64, curve: &DeadTimeCurve, upper: f64) -> Result<Option<f64>> {
    if !(upper >= 0.0 && upper.is_finite()) {
        return Err(Error::Config(format!(
            "scan upper bound must be finite and >= 0, got {upper}"
        )));
    }
    r_bound(lambda_par, 0.0, curve)?;
    // a saturated orthogonal detector never clicks, i.e. r = 0
    let below = |l: f64| match r_bound(lambda_par, l, curve) {
        Ok(r) => r < r_target,
        Err(_) => true,
    };
    if !below(upper) {
        return Ok(None);
    }
    let (mut lo, mut hi) = (0.0, upper);
    while hi - lo > 1e-6 {
        let mid = 0.5 * (lo + hi);
        if below(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(hi))
}

pub fn write_stealth_csv<W: Write>(rows: &[StealthScanRow], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["lambda_par_cps", "lambda_perp_cps", "r_bound", "stealthy"])?;
    for row in rows {
        wtr.write_record([
            row.lambda_parallel.to_string(),
            row.lambda_perp.to_string(),
            row.r_bound.map(|r| r.to_string()).unwrap_or_default(),
            row.stealthy.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MutualInfoPoint {
    pub r: f64,
    pub i_ab: f64,
    pub i_ae: f64,
}

/// I(A;B) and I(A;E) per sifted bit on `r = 0, step, 2 step, ..., r_max`.
pub fn mutual_info_curve(r_max: f64, step: f64) -> Result<Vec<MutualInfoPoint>> {
    if !(step > 0.0) || !(r_max >= 0.0) || !r_max.is_finite() {
        return Err(Error::Config(format!("invalid grid: r_max {r_max}, step {step}")));
    }
    let n = (r_max / step + 1e-9).floor() as usize;
    (0..=n)
        .map(|i| {
            let r = i as f64 * step;
            Ok(MutualInfoPoint {
                r,
                i_ab: mutual_info_bob_sifted(r)?,
                i_ae: mutual_info_eve_sifted(r)?,
            })
        })
        .collect()
}

pub fn write_mutual_info_csv<W: Write>(points: &[MutualInfoPoint], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["r", "i_ab", "i_ae"])?;
    for p in points {
        wtr.write_record([p.r.to_string(), p.i_ab.to_string(), p.i_ae.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}
