//! Eve's recovery-induced erasure strategy: intercept-resend plus a
//! pre-pulse in Eve's basis carrying the opposite bit.
//!
//! In the non-deterministic model the pre-pulse is steady Poisson loading:
//! `lambda_parallel` on the non-signal detector when Bob's basis matches
//! Eve's, `lambda_perp` on both detectors otherwise. In the deterministic
//! model a strong pre-pulse fires the detectors it reaches and the signal
//! follows `delta` seconds later.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::detector::{availability, AvailabilityModel, DeadTimeCurve};
use crate::error::{Error, Result};
use crate::quantum::{projection_prob, Basis, Bit, PolarizationState};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackMode {
    #[default]
    None,
    InterceptResend,
    RieNonDeterministic,
    RieDeterministic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub mode: AttackMode,
    /// Pre-pulse loading on the non-signal detector, aligned bases (counts/s).
    pub lambda_parallel: f64,
    /// Pre-pulse loading on both detectors, orthogonal bases (counts/s).
    pub lambda_perp: f64,
    /// Pre-pulse to signal delay, seconds (deterministic mode).
    pub delta: f64,
    /// Probability Eve measures in Z.
    pub eve_basis_prior: f64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            mode: AttackMode::None,
            lambda_parallel: 0.0,
            lambda_perp: 0.0,
            delta: 10e-9,
            eve_basis_prior: 0.5,
        }
    }
}

impl AttackConfig {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn intercept_resend() -> Self {
        Self {
            mode: AttackMode::InterceptResend,
            ..Self::default()
        }
    }

    pub fn rie_nondeterministic(lambda_parallel: f64, lambda_perp: f64) -> Self {
        Self {
            mode: AttackMode::RieNonDeterministic,
            lambda_parallel,
            lambda_perp,
            ..Self::default()
        }
    }

    pub fn rie_deterministic(delta: f64) -> Self {
        Self {
            mode: AttackMode::RieDeterministic,
            delta,
            ..Self::default()
        }
    }

    pub fn with_eve_basis_prior(mut self, prior_z: f64) -> Self {
        self.eve_basis_prior = prior_z;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, rate) in [
            ("lambda_parallel", self.lambda_parallel),
            ("lambda_perp", self.lambda_perp),
        ] {
            if !(rate >= 0.0 && rate.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {rate}")));
            }
        }
        if !(0.0..=1.0).contains(&self.eve_basis_prior) {
            return Err(Error::Config(format!(
                "eve_basis_prior must lie in [0, 1], got {}",
                self.eve_basis_prior
            )));
        }
        if self.mode == AttackMode::RieDeterministic && !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::Config(format!("delta must be positive, got {}", self.delta)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PrepulseSchedule {
    /// Plain intercept-resend, no pre-pulse.
    None,
    /// Steady loading at the configured rates.
    Loading,
    /// Pre-pulse at t = 0, signal at t = `delay`.
    Timed { delay: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EveAction {
    pub eve_basis: Basis,
    pub eve_bit: Bit,
    pub resent_state: PolarizationState,
    pub prepulse_state: PolarizationState,
    pub schedule: PrepulseSchedule,
}

/// Eve measures the incoming photon and prepares the resend and pre-pulse.
pub fn intercept<R: Rng + ?Sized>(
    incoming: PolarizationState,
    config: &AttackConfig,
    rng: &mut R,
) -> Result<EveAction> {
    let schedule = match config.mode {
        AttackMode::None => return Err(Error::Usage("intercept called with attack mode none".into())),
        AttackMode::InterceptResend => PrepulseSchedule::None,
        AttackMode::RieNonDeterministic => PrepulseSchedule::Loading,
        AttackMode::RieDeterministic => PrepulseSchedule::Timed { delay: config.delta },
    };
    let eve_basis = Basis::sample(config.eve_basis_prior, rng);
    let eve_bit = if rng.random_bool(projection_prob(incoming, eve_basis, Bit::Zero)) {
        Bit::Zero
    } else {
        Bit::One
    };
    let resent_state = PolarizationState::new(eve_basis, eve_bit);
    Ok(EveAction {
        eve_basis,
        eve_bit,
        resent_state,
        prepulse_state: resent_state.complement(),
        schedule,
    })
}

/// Pre-pulse loading per detector index, excluding receiver background.
pub fn loading_for_branch(action: &EveAction, bob_basis: Basis, config: &AttackConfig) -> Result<[f64; 2]> {
    if config.mode != AttackMode::RieNonDeterministic {
        return Err(Error::Usage(format!(
            "loading_for_branch needs the non-deterministic RIE mode, got {:?}",
            config.mode
        )));
    }
    if bob_basis == action.eve_basis {
        let mut loading = [0.0; 2];
        loading[action.prepulse_state.bit.index()] = config.lambda_parallel;
        Ok(loading)
    } else {
        Ok([config.lambda_perp; 2])
    }
}

/// True once the detector fired by the pre-pulse has recovered. The dead
/// interval is closed: `delta == t_d` is still dead.
pub fn prepulse_recovered(delta: f64, dead_time: f64) -> bool {
    delta > dead_time
}

/// Step-like click probability behind a timed pre-pulse: 0 while the
/// detector is dead, `p0` after recovery.
pub fn deterministic_suppression(delta: f64, curve: &DeadTimeCurve, loading_context: f64, p0: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::Domain(format!("delta must be positive, got {delta}")));
    }
    let t_d = curve.dead_time_at(loading_context);
    Ok(if prepulse_recovered(delta, t_d) { p0 } else { 0.0 })
}

/// Signal click probabilities `(p_parallel, p_perp)` for Bob's basis
/// matching / not matching Eve's. `background` is the receiver's own
/// loading on each detector.
pub fn branch_click_probabilities(
    config: &AttackConfig,
    curve: &DeadTimeCurve,
    model: AvailabilityModel,
    p0: f64,
    background: f64,
) -> Result<(f64, f64)> {
    config.validate()?;
    let base = p0 * availability(background, curve, model)?;
    match config.mode {
        AttackMode::None | AttackMode::InterceptResend => Ok((base, base)),
        AttackMode::RieNonDeterministic => {
            // aligned: the pre-pulse lands on the other detector only
            let perp = p0 * availability(background + config.lambda_perp, curve, model)?;
            Ok((base, perp))
        }
        AttackMode::RieDeterministic => {
            let step = deterministic_suppression(config.delta, curve, background, 1.0)?;
            Ok((base, base * step))
        }
    }
}

/// Suppression ratio `r = p_perp / p_parallel` produced by `config`.
pub fn effective_r(
    config: &AttackConfig,
    curve: &DeadTimeCurve,
    model: AvailabilityModel,
    p0: f64,
    background: f64,
) -> Result<f64> {
    let (p_par, p_perp) = branch_click_probabilities(config, curve, model, p0, background)?;
    if !(p_par > 0.0) {
        return Err(Error::DegenerateAttack(format!(
            "p_parallel = {p_par}, ratio undefined"
        )));
    }
    Ok(p_perp / p_par)
}

/// Orthogonal-basis loading that yields suppression ratio `target_r` in the
/// non-deterministic model, found by bisection.
pub fn loading_for_ratio(
    target_r: f64,
    curve: &DeadTimeCurve,
    model: AvailabilityModel,
    background: f64,
) -> Result<f64> {
    if !(target_r > 0.0 && target_r <= 1.0) {
        return Err(Error::Domain(format!(
            "target ratio must lie in (0, 1], got {target_r}"
        )));
    }
    let base = availability(background, curve, model)?;
    let ratio = |lambda: f64| -> Option<f64> { availability(background + lambda, curve, model).ok().map(|a| a / base) };
    if target_r == 1.0 {
        return Ok(0.0);
    }
    // Grow the bracket until the ratio drops below target (or saturates).
    let mut hi = 1e6;
    while matches!(ratio(hi), Some(r) if r > target_r) {
        hi *= 2.0;
        if hi > 1e15 {
            return Err(Error::Domain(format!("ratio {target_r} unreachable with this curve")));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        match ratio(mid) {
            Some(r) if r > target_r => lo = mid,
            _ => hi = mid,
        }
    }
    match ratio(lo) {
        Some(r) if (r - target_r).abs() < 1e-9 => Ok(lo),
        _ => Err(Error::Domain(format!("ratio {target_r} unreachable with this curve"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const Z0: PolarizationState = PolarizationState::new(Basis::Z, Bit::Zero);
    const Z1: PolarizationState = PolarizationState::new(Basis::Z, Bit::One);
    const X0: PolarizationState = PolarizationState::new(Basis::X, Bit::Zero);
    const X1: PolarizationState = PolarizationState::new(Basis::X, Bit::One);

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(99)
    }

    #[test]
    fn aligned_interception_is_exact() {
        let cfg = AttackConfig::rie_nondeterministic(1e6, 20e6).with_eve_basis_prior(1.0);
        let mut rng = rng();
        for _ in 0..100 {
            let a = intercept(Z0, &cfg, &mut rng).unwrap();
            assert_eq!(a.eve_basis, Basis::Z);
            assert_eq!(a.eve_bit, Bit::Zero);
            assert_eq!(a.resent_state, Z0);
            assert_eq!(a.prepulse_state, Z1);
        }
        let cfg = cfg.with_eve_basis_prior(0.0);
        let a = intercept(X1, &cfg, &mut rng).unwrap();
        assert_eq!(a.prepulse_state, X0);
    }

    #[test]
    fn orthogonal_interception_is_uniform() {
        let cfg = AttackConfig::intercept_resend().with_eve_basis_prior(0.0);
        let mut rng = rng();
        let n = 100_000;
        let ones = (0..n)
            .filter(|_| intercept(Z0, &cfg, &mut rng).unwrap().eve_bit == Bit::One)
            .count() as f64;
        let sigma = (n as f64 * 0.25).sqrt();
        assert!((ones - n as f64 / 2.0).abs() < 3.0 * sigma);
    }

    #[test]
    fn prepulse_invariant_holds() {
        let mut rng = rng();
        let cfg = AttackConfig::rie_deterministic(5e-9);
        for state in PolarizationState::all() {
            for _ in 0..200 {
                let a = intercept(state, &cfg, &mut rng).unwrap();
                assert_eq!(a.prepulse_state.basis, a.eve_basis);
                assert_eq!(a.prepulse_state.bit, a.eve_bit.complement());
                assert_eq!(a.resent_state, PolarizationState::new(a.eve_basis, a.eve_bit));
            }
        }
        assert!(intercept(Z0, &AttackConfig::none(), &mut rng).is_err());
    }

    #[test]
    fn branch_loading() {
        let cfg = AttackConfig::rie_nondeterministic(2e6, 20e6).with_eve_basis_prior(1.0);
        let a = intercept(Z0, &cfg, &mut rng()).unwrap();
        assert_eq!(loading_for_branch(&a, Basis::Z, &cfg).unwrap(), [0.0, 2e6]);
        assert_eq!(loading_for_branch(&a, Basis::X, &cfg).unwrap(), [20e6, 20e6]);
        assert!(loading_for_branch(&a, Basis::Z, &AttackConfig::intercept_resend()).is_err());
    }

    #[test]
    fn no_loading_reduces_to_intercept_resend() {
        let curve = DeadTimeCurve::builtin();
        let cfg = AttackConfig::rie_nondeterministic(0.0, 0.0);
        let (p_par, p_perp) =
            branch_click_probabilities(&cfg, &curve, AvailabilityModel::Exponential, 0.7, 0.0).unwrap();
        assert_eq!((p_par, p_perp), (0.7, 0.7));
        assert_eq!(
            effective_r(&cfg, &curve, AvailabilityModel::Exponential, 0.7, 0.0).unwrap(),
            1.0
        );
    }

    #[test]
    fn deterministic_step() {
        let curve = DeadTimeCurve::constant(23.3e-9);
        assert_eq!(deterministic_suppression(10e-9, &curve, 0.0, 0.8).unwrap(), 0.0);
        assert_eq!(deterministic_suppression(50e-9, &curve, 0.0, 0.8).unwrap(), 0.8);
        assert_eq!(deterministic_suppression(23.3e-9, &curve, 0.0, 0.8).unwrap(), 0.0);
        assert!(deterministic_suppression(0.0, &curve, 0.0, 0.8).is_err());
    }

    #[test]
    fn effective_r_examples() {
        let curve = DeadTimeCurve::builtin();
        let lin = AvailabilityModel::LinearBound;
        let det = AttackConfig::rie_deterministic(10e-9);
        assert_eq!(effective_r(&det, &curve, lin, 1.0, 0.0).unwrap(), 0.0);
        let det = AttackConfig::rie_deterministic(40e-9);
        assert_eq!(effective_r(&det, &curve, lin, 1.0, 0.0).unwrap(), 1.0);

        let nd = AttackConfig::rie_nondeterministic(1e6, 23e6);
        let r = effective_r(&nd, &curve, lin, 1.0, 0.0).unwrap();
        assert!(r < 0.3, "r = {r}");
        // 1 - 23e6 * t_d(23 Mcps), t_d = 31.18 ns on the default curve
        assert!((r - 0.28286).abs() < 1e-9);
    }

    #[test]
    fn effective_r_monotone_in_perp_loading() {
        let curve = DeadTimeCurve::builtin();
        for model in [AvailabilityModel::Exponential, AvailabilityModel::LinearBound] {
            let mut prev = f64::INFINITY;
            for i in 0..=300 {
                let cfg = AttackConfig::rie_nondeterministic(1e6, i as f64 * 0.1e6);
                let r = effective_r(&cfg, &curve, model, 0.9, 0.0).unwrap();
                assert!(r <= prev);
                prev = r;
            }
        }
    }

    #[test]
    fn degenerate_attack() {
        let curve = DeadTimeCurve::builtin();
        let cfg = AttackConfig::rie_nondeterministic(1e6, 5e6);
        assert!(matches!(
            effective_r(&cfg, &curve, AvailabilityModel::Exponential, 0.0, 0.0),
            Err(Error::DegenerateAttack(_))
        ));
    }

    #[test]
    fn loading_for_ratio_inverts_effective_r() {
        let curve = DeadTimeCurve::builtin();
        for model in [AvailabilityModel::Exponential, AvailabilityModel::LinearBound] {
            for target in [0.4, 0.6, 0.9, 1.0] {
                let lambda = loading_for_ratio(target, &curve, model, 0.0).unwrap();
                let cfg = AttackConfig::rie_nondeterministic(0.0, lambda);
                let r = effective_r(&cfg, &curve, model, 1.0, 0.0).unwrap();
                assert!((r - target).abs() < 1e-9, "{model:?} {target} -> {r}");
            }
        }
        let lambda = loading_for_ratio(0.1, &curve, AvailabilityModel::LinearBound, 0.0).unwrap();
        assert!(lambda * curve.dead_time_at(lambda) < 1.0);
        assert!(loading_for_ratio(0.0, &curve, AvailabilityModel::LinearBound, 0.0).is_err());
    }
}
