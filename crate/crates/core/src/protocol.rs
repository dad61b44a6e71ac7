//! Round-by-round active-basis BBM92/BB84 simulation with sifting, QBER
//! estimation and the abort decision.
//!
//! BBM92 is run in its prepare-and-measure reduction: Alice's measurement
//! of her half of the pair fixes the state that travels to Bob.
//!
//! Every round draws from its own ChaCha8 stream (`seed`, round index), so a
//! report depends only on the configuration and never on how rounds are
//! spread over worker threads.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversary::{intercept, prepulse_recovered, AttackConfig, AttackMode, PrepulseSchedule};
use crate::detector::{availability, AvailabilityModel, DeadTimeCurve};
use crate::error::{Error, Result};
use crate::quantum::{route_through_pbs, Basis, Bit, PolarizationState};

const CHUNK: u64 = 4096;

#[derive(Clone, Debug, PartialEq)]
pub struct ProtocolConfig {
    pub n_rounds: u64,
    /// Sifted QBER at or above which the run aborts.
    pub abort_threshold: f64,
    /// Probability that Alice (and Bob) pick Z.
    pub basis_prior: f64,
    /// Click probability of a live detector.
    pub p0: f64,
    pub dead_time_curve: DeadTimeCurve,
    pub availability_model: AvailabilityModel,
    /// Receiver-side noise loading on each detector, counts/s.
    pub background_rate: f64,
    /// Dark counts per detector, counts/s. They add to the noise loading
    /// and can also fire inside the signal gate.
    pub dark_count_rate: f64,
    /// Width of Bob's signal gate, seconds.
    pub gate_window: f64,
    /// Channel transmission multiplying the click probability.
    pub transmission: f64,
    /// Pin Alice's state (e.g. `Z0`) to reproduce per-branch tables.
    pub fixed_alice: Option<PolarizationState>,
    pub seed: u64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            n_rounds: 100_000,
            abort_threshold: 0.11,
            basis_prior: 0.5,
            p0: 1.0,
            dead_time_curve: DeadTimeCurve::builtin(),
            availability_model: AvailabilityModel::Exponential,
            background_rate: 0.0,
            dark_count_rate: 0.0,
            gate_window: 1e-9,
            transmission: 1.0,
            fixed_alice: None,
            seed: 0,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.n_rounds == 0 {
            return fail("n_rounds must be at least 1".into());
        }
        if !(self.abort_threshold > 0.0 && self.abort_threshold < 0.5) {
            return fail(format!(
                "abort_threshold must lie in (0, 0.5), got {}",
                self.abort_threshold
            ));
        }
        if !(self.basis_prior > 0.0 && self.basis_prior < 1.0) {
            return fail(format!("basis_prior must lie in (0, 1), got {}", self.basis_prior));
        }
        if !(self.p0 > 0.0 && self.p0 <= 1.0) {
            return fail(format!("p0 must lie in (0, 1], got {}", self.p0));
        }
        if !(0.0..=1.0).contains(&self.transmission) {
            return fail(format!("transmission must lie in [0, 1], got {}", self.transmission));
        }
        for (name, v) in [
            ("background_rate", self.background_rate),
            ("dark_count_rate", self.dark_count_rate),
            ("gate_window", self.gate_window),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Bit(Bit),
    Erasure,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RoundRecord {
    pub alice_basis: Basis,
    pub alice_bit: Bit,
    pub eve_basis: Option<Basis>,
    pub eve_bit: Option<Bit>,
    pub bob_basis: Basis,
    pub outcome: Outcome,
    pub sifted: bool,
    /// Defined exactly for sifted rounds.
    pub error: Option<bool>,
    pub double_click: bool,
}

impl RoundRecord {
    pub fn clicked(&self) -> bool {
        matches!(self.outcome, Outcome::Bit(_))
    }
}

/// Validated configuration with the per-branch availabilities resolved, so
/// that rounds can be drawn without further error handling.
#[derive(Clone, Debug)]
pub struct Scenario {
    config: ProtocolConfig,
    attack: AttackConfig,
    click_given_live: f64,
    dark_click: f64,
    avail_idle: f64,
    avail_parallel: f64,
    avail_perp: f64,
    prepulse_recovered: bool,
}

impl Scenario {
    pub fn new(config: &ProtocolConfig, attack: &AttackConfig) -> Result<Self> {
        config.validate()?;
        attack.validate()?;
        let noise = config.background_rate + config.dark_count_rate;
        let curve = &config.dead_time_curve;
        let model = config.availability_model;
        let avail_idle = availability(noise, curve, model)?;
        let (avail_parallel, avail_perp) = if attack.mode == AttackMode::RieNonDeterministic {
            (
                availability(noise + attack.lambda_parallel, curve, model)?,
                availability(noise + attack.lambda_perp, curve, model)?,
            )
        } else {
            (avail_idle, avail_idle)
        };
        Ok(Self {
            config: config.clone(),
            attack: attack.clone(),
            click_given_live: config.p0 * config.transmission,
            dark_click: 1.0 - (-config.dark_count_rate * config.gate_window).exp(),
            avail_idle,
            avail_parallel,
            avail_perp,
            prepulse_recovered: prepulse_recovered(attack.delta, curve.dead_time_at(noise)),
        })
    }

    pub fn config(&self) -> &ProtocolConfig {
        &self.config
    }

    pub fn attack(&self) -> &AttackConfig {
        &self.attack
    }

    pub fn run_round<R: Rng + ?Sized>(&self, rng: &mut R) -> RoundRecord {
        let cfg = &self.config;
        let alice = match cfg.fixed_alice {
            Some(state) => state,
            None => PolarizationState::new(Basis::sample(cfg.basis_prior, rng), Bit::uniform(rng)),
        };

        let action = match self.attack.mode {
            AttackMode::None => None,
            _ => Some(intercept(alice, &self.attack, rng).expect("mode checked")),
        };
        let bob_basis = Basis::sample(cfg.basis_prior, rng);

        let mut live = [self.avail_idle; 2];
        let arriving = match &action {
            None => alice,
            Some(a) => {
                let aligned = bob_basis == a.eve_basis;
                let loaded = a.prepulse_state.bit.index();
                match a.schedule {
                    PrepulseSchedule::None => {}
                    PrepulseSchedule::Loading if aligned => live[loaded] = self.avail_parallel,
                    PrepulseSchedule::Loading => live = [self.avail_perp; 2],
                    PrepulseSchedule::Timed { .. } => {
                        let after = if self.prepulse_recovered { self.avail_idle } else { 0.0 };
                        if aligned {
                            live[loaded] = after;
                        } else {
                            live = [after; 2];
                        }
                    }
                }
                a.resent_state
            }
        };

        let signal_det = route_through_pbs(arriving, bob_basis, rng);
        let mut clicks = [false; 2];
        for det in 0..2 {
            let is_signal = det == signal_det;
            if !is_signal && self.dark_click == 0.0 {
                continue;
            }
            if !rng.random_bool(live[det]) {
                continue;
            }
            let fired = is_signal && rng.random_bool(self.click_given_live);
            clicks[det] = fired || (self.dark_click > 0.0 && rng.random_bool(self.dark_click));
        }

        let double_click = clicks[0] && clicks[1];
        let outcome = match clicks {
            [false, false] => Outcome::Erasure,
            [true, true] => Outcome::Bit(Bit::uniform(rng)),
            [c0, _] => Outcome::Bit(if c0 { Bit::Zero } else { Bit::One }),
        };
        let sifted = matches!(outcome, Outcome::Bit(_)) && alice.basis == bob_basis;
        let error = match outcome {
            Outcome::Bit(b) if sifted => Some(b != alice.bit),
            _ => None,
        };
        RoundRecord {
            alice_basis: alice.basis,
            alice_bit: alice.bit,
            eve_basis: action.map(|a| a.eve_basis),
            eve_bit: action.map(|a| a.eve_bit),
            bob_basis,
            outcome,
            sifted,
            error,
            double_click,
        }
    }
}

/// Random stream for round `index` of a run seeded with `seed`.
pub fn round_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn run_round<R: Rng + ?Sized>(config: &ProtocolConfig, attack: &AttackConfig, rng: &mut R) -> Result<RoundRecord> {
    Ok(Scenario::new(config, attack)?.run_round(rng))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
struct Counts {
    rounds: u64,
    clicks: u64,
    sifted: u64,
    errors: u64,
}

impl Counts {
    fn add(&mut self, other: &Counts) {
        self.rounds += other.rounds;
        self.clicks += other.clicks;
        self.sifted += other.sifted;
        self.errors += other.errors;
    }
}

const N_BRANCHES: usize = 10;

fn branch_index(eve: Option<(Basis, Bit)>, bob: Basis) -> usize {
    let basis_idx = |b: Basis| if b == Basis::Z { 0 } else { 1 };
    let eve_idx = match eve {
        None => 0,
        Some((b, v)) => 1 + 2 * basis_idx(b) + v.index(),
    };
    2 * eve_idx + basis_idx(bob)
}

fn branch_key(index: usize) -> (Option<Basis>, Option<Bit>, Basis) {
    let bob = if index.is_multiple_of(2) { Basis::Z } else { Basis::X };
    let eve_idx = index / 2;
    if eve_idx == 0 {
        (None, None, bob)
    } else {
        let basis = if (eve_idx - 1) / 2 == 0 { Basis::Z } else { Basis::X };
        (Some(basis), Some(Bit::from_index((eve_idx - 1) % 2)), bob)
    }
}

#[derive(Clone, Debug, Default)]
struct Tally {
    total: Counts,
    double_clicks: u64,
    sifted_eve_match: u64,
    branches: [Counts; N_BRANCHES],
}

impl Tally {
    fn record(&mut self, r: &RoundRecord) {
        let c = Counts {
            rounds: 1,
            clicks: r.clicked() as u64,
            sifted: r.sifted as u64,
            errors: (r.error == Some(true)) as u64,
        };
        self.total.add(&c);
        self.double_clicks += r.double_click as u64;
        if r.sifted && r.eve_basis == Some(r.alice_basis) {
            self.sifted_eve_match += 1;
        }
        let eve = r.eve_basis.zip(r.eve_bit);
        self.branches[branch_index(eve, r.bob_basis)].add(&c);
    }

    fn merge(mut self, other: Tally) -> Tally {
        self.total.add(&other.total);
        self.double_clicks += other.double_clicks;
        self.sifted_eve_match += other.sifted_eve_match;
        for (a, b) in self.branches.iter_mut().zip(other.branches.iter()) {
            a.add(b);
        }
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchStats {
    pub eve_basis: Option<Basis>,
    pub eve_bit: Option<Bit>,
    pub bob_basis: Basis,
    pub rounds: u64,
    pub clicks: u64,
    pub sifted: u64,
    pub errors: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub seed: u64,
    pub attack_mode: AttackMode,
    pub fixed_alice: Option<PolarizationState>,
    pub n_rounds: u64,
    pub n_clicks: u64,
    pub n_sifted: u64,
    pub n_errors: u64,
    pub n_double_clicks: u64,
    /// Sifted rounds in which Eve measured in Alice's basis.
    pub n_sifted_eve_match: u64,
    /// `n_errors / n_sifted`; absent when nothing was sifted.
    pub qber_observed: Option<f64>,
    pub sift_probability: f64,
    pub erasure_probability: f64,
    /// Fraction of sifted bits Eve knows exactly; absent without Eve or
    /// without sifted bits.
    pub eve_info_sifted: Option<f64>,
    pub abort_threshold: f64,
    pub abort: bool,
    pub branches: Vec<BranchStats>,
}

impl SimulationReport {
    fn from_tally(config: &ProtocolConfig, attack: &AttackConfig, tally: Tally) -> Self {
        let t = tally.total;
        let qber = (t.sifted > 0).then(|| t.errors as f64 / t.sifted as f64);
        let eve_info =
            (attack.mode != AttackMode::None && t.sifted > 0).then(|| tally.sifted_eve_match as f64 / t.sifted as f64);
        let branches = tally
            .branches
            .iter()
            .enumerate()
            .filter(|(_, c)| c.rounds > 0)
            .map(|(i, c)| {
                let (eve_basis, eve_bit, bob_basis) = branch_key(i);
                BranchStats {
                    eve_basis,
                    eve_bit,
                    bob_basis,
                    rounds: c.rounds,
                    clicks: c.clicks,
                    sifted: c.sifted,
                    errors: c.errors,
                }
            })
            .collect();
        Self {
            seed: config.seed,
            attack_mode: attack.mode,
            fixed_alice: config.fixed_alice,
            n_rounds: t.rounds,
            n_clicks: t.clicks,
            n_sifted: t.sifted,
            n_errors: t.errors,
            n_double_clicks: tally.double_clicks,
            n_sifted_eve_match: tally.sifted_eve_match,
            qber_observed: qber,
            sift_probability: t.sifted as f64 / t.rounds as f64,
            erasure_probability: 1.0 - t.clicks as f64 / t.rounds as f64,
            eve_info_sifted: eve_info,
            abort_threshold: config.abort_threshold,
            // no sifted key cannot be certified
            abort: qber.is_none_or(|q| q >= config.abort_threshold),
            branches,
        }
    }

    /// Pretty-printed JSON document.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per branch: `eve_basis,eve_bit,bob_basis,rounds,clicks,sifted,errors`.
    /// Eve columns are empty when there is no attack.
    pub fn write_branch_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record([
            "eve_basis",
            "eve_bit",
            "bob_basis",
            "rounds",
            "clicks",
            "sifted",
            "errors",
        ])?;
        for b in &self.branches {
            wtr.write_record([
                b.eve_basis.map(|v| v.to_string()).unwrap_or_default(),
                b.eve_bit.map(|v| v.to_string()).unwrap_or_default(),
                b.bob_basis.to_string(),
                b.rounds.to_string(),
                b.clicks.to_string(),
                b.sifted.to_string(),
                b.errors.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Runs `config.n_rounds` rounds on the current rayon pool.
pub fn run_simulation(config: &ProtocolConfig, attack: &AttackConfig) -> Result<SimulationReport> {
    let scenario = Scenario::new(config, attack)?;
    let key = ChaCha8Rng::seed_from_u64(config.seed).get_seed();
    let n = config.n_rounds;
    let tally = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let mut tally = Tally::default();
            for i in chunk * CHUNK..n.min((chunk + 1) * CHUNK) {
                let mut rng = ChaCha8Rng::from_seed(key);
                rng.set_stream(i);
                tally.record(&scenario.run_round(&mut rng));
            }
            tally
        })
        .reduce(Tally::default, Tally::merge);
    Ok(SimulationReport::from_tally(config, attack, tally))
}

/// Which conditional click probability a branch exercises.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ClickLabel {
    /// Bob's basis equals Eve's.
    Parallel,
    /// Bob's basis differs from Eve's.
    Perp,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BranchRow {
    pub eve_basis: Basis,
    pub eve_bit: Bit,
    pub prepulse: PolarizationState,
    pub bob_basis: Basis,
    pub label: ClickLabel,
    pub rounds: u64,
    pub click_rate: Option<f64>,
    pub kept: bool,
    /// Error rate among clicks, for kept branches only.
    pub conditional_error: Option<f64>,
    pub insufficient_data: bool,
}

/// Per-branch click and error table for a run with Alice pinned to
/// `fixed_alice`. All eight Eve/Bob combinations are listed; branches that
/// never occurred are flagged.
pub fn branch_table(report: &SimulationReport, fixed_alice: PolarizationState) -> Result<Vec<BranchRow>> {
    if report.fixed_alice != Some(fixed_alice) {
        return Err(Error::Usage(format!(
            "report was not collected with Alice fixed to {fixed_alice} (got {:?})",
            report.fixed_alice
        )));
    }
    let mut rows = Vec::with_capacity(8);
    for eve_basis in Basis::ALL {
        for eve_bit in Bit::ALL {
            for bob_basis in [eve_basis, eve_basis.other()] {
                let stats = report
                    .branches
                    .iter()
                    .find(|b| b.eve_basis == Some(eve_basis) && b.eve_bit == Some(eve_bit) && b.bob_basis == bob_basis);
                let rounds = stats.map_or(0, |s| s.rounds);
                let kept = bob_basis == fixed_alice.basis;
                rows.push(BranchRow {
                    eve_basis,
                    eve_bit,
                    prepulse: PolarizationState::new(eve_basis, eve_bit.complement()),
                    bob_basis,
                    label: if bob_basis == eve_basis {
                        ClickLabel::Parallel
                    } else {
                        ClickLabel::Perp
                    },
                    rounds,
                    click_rate: stats
                        .filter(|s| s.rounds > 0)
                        .map(|s| s.clicks as f64 / s.rounds as f64),
                    kept,
                    conditional_error: stats
                        .filter(|s| kept && s.sifted > 0)
                        .map(|s| s.errors as f64 / s.sifted as f64),
                    insufficient_data: rounds == 0,
                });
            }
        }
    }
    Ok(rows)
}
