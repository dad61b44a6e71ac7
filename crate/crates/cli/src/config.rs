//! Scenario files (TOML). Every table is optional; unknown keys are rejected.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use rie_core::adversary::AttackConfig;
use rie_core::detector::{AvailabilityModel, DeadTimeCurve};
use rie_core::protocol::ProtocolConfig;
use rie_core::quantum::PolarizationState;
use rie_core::timetag::{SweepConfig, DEFAULT_BIN_WIDTH, DEFAULT_MAX_GAP, DEFAULT_MIN_COUNT};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub protocol: ProtocolSection,
    pub attack: AttackConfig,
    pub dead_time: DeadTimeSection,
    pub extract: ExtractSection,
    pub sweep: SweepSection,
    pub stealth: StealthSection,
    pub mutualinfo: MutualInfoSection,
    /// Directory of the scenario file; relative paths inside it resolve here.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolSection {
    pub n_rounds: u64,
    pub abort_threshold: f64,
    pub basis_prior: f64,
    pub p0: f64,
    pub availability_model: AvailabilityModel,
    pub background_rate: f64,
    pub dark_count_rate: f64,
    pub gate_window: f64,
    pub transmission: f64,
    pub fixed_alice: Option<PolarizationState>,
    /// Solve `attack.lambda_perp` for this suppression ratio.
    pub target_r: Option<f64>,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        let d = ProtocolConfig::default();
        Self {
            n_rounds: d.n_rounds,
            abort_threshold: d.abort_threshold,
            basis_prior: d.basis_prior,
            p0: d.p0,
            availability_model: d.availability_model,
            background_rate: d.background_rate,
            dark_count_rate: d.dark_count_rate,
            gate_window: d.gate_window,
            transmission: d.transmission,
            fixed_alice: d.fixed_alice,
            target_r: None,
        }
    }
}

/// Dead-time curve source: inline `points = [[rate_cps, t_d_s], ...]` or a
/// `csv` file. Neither means the built-in default curve.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeadTimeSection {
    pub points: Option<DeadTimeCurve>,
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractSection {
    pub bin_width: f64,
    pub min_count: u64,
    pub max_gap: f64,
}

impl Default for ExtractSection {
    fn default() -> Self {
        Self {
            bin_width: DEFAULT_BIN_WIDTH,
            min_count: DEFAULT_MIN_COUNT,
            max_gap: DEFAULT_MAX_GAP,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    /// True (incident) rates, counts/s.
    pub rates: Vec<f64>,
    pub duration: f64,
    pub bin_width: f64,
    pub max_gap: f64,
    pub min_count: u64,
}

impl Default for SweepSection {
    fn default() -> Self {
        let d = SweepConfig::default();
        Self {
            rates: [1.0, 2.0, 5.0, 10.0, 15.0, 20.0, 30.0, 40.0]
                .iter()
                .map(|m| m * 1e6)
                .collect(),
            duration: d.duration,
            bin_width: d.bin_width,
            max_gap: d.max_gap,
            min_count: d.min_count,
        }
    }
}

impl SweepSection {
    pub fn sweep_config(&self) -> SweepConfig {
        SweepConfig {
            duration: self.duration,
            bin_width: self.bin_width,
            max_gap: self.max_gap,
            min_count: self.min_count,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StealthSection {
    pub lambda_par: Vec<f64>,
    pub lambda_perp_max: f64,
    pub lambda_perp_step: f64,
}

impl Default for StealthSection {
    fn default() -> Self {
        Self {
            lambda_par: vec![1e6, 2e6, 5e6, 10e6],
            lambda_perp_max: 40e6,
            lambda_perp_step: 0.1e6,
        }
    }
}

impl StealthSection {
    pub fn perp_grid(&self) -> Result<Vec<f64>> {
        let (max, step) = (self.lambda_perp_max, self.lambda_perp_step);
        if !(max >= 0.0 && max.is_finite() && step > 0.0) {
            bail!("stealth grid needs lambda_perp_max >= 0 and lambda_perp_step > 0 (got {max}, {step})");
        }
        let n = (max / step + 1e-9).floor() as usize;
        Ok((0..=n).map(|i| i as f64 * step).collect())
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MutualInfoSection {
    pub r_max: f64,
    pub step: f64,
}

impl Default for MutualInfoSection {
    fn default() -> Self {
        Self { r_max: 1.0, step: 0.01 }
    }
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut scenario: Scenario =
            toml::from_str(&text).with_context(|| format!("invalid scenario file {}", path.display()))?;
        scenario.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(scenario)
    }

    pub fn curve(&self) -> Result<DeadTimeCurve> {
        match (&self.dead_time.points, &self.dead_time.csv) {
            (Some(_), Some(_)) => bail!("dead_time: give either points or csv, not both"),
            (Some(curve), None) => Ok(curve.clone()),
            (None, Some(csv)) => {
                let path = self.base_dir.join(csv);
                DeadTimeCurve::from_csv_path(&path).with_context(|| format!("dead-time curve {}", path.display()))
            }
            (None, None) => Ok(DeadTimeCurve::builtin()),
        }
    }

    pub fn protocol_config(&self, seed: u64) -> Result<ProtocolConfig> {
        let p = &self.protocol;
        let config = ProtocolConfig {
            n_rounds: p.n_rounds,
            abort_threshold: p.abort_threshold,
            basis_prior: p.basis_prior,
            p0: p.p0,
            dead_time_curve: self.curve()?,
            availability_model: p.availability_model,
            background_rate: p.background_rate,
            dark_count_rate: p.dark_count_rate,
            gate_window: p.gate_window,
            transmission: p.transmission,
            fixed_alice: p.fixed_alice,
            seed,
        };
        config.validate()?;
        Ok(config)
    }
}
