// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use rie_core::adversary::AttackMode;
use rie_core::detector::AvailabilityModel;
use rie_core::quantum::PolarizationState;

use crate::config::Scenario;

/// Recovery-induced erasure attack simulator.
#[derive(Debug, Parser)]
#[command(name = "rie", version, about)]
struct Cli {
    /// Scenario file (TOML). Command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for parallel stages.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate the dead time of a recorded timestamp stream.
    DeadtimeExtract {
        /// One integer timestamp (ps since start) per line.
        file: PathBuf,
        /// Histogram bin width, seconds.
        #[arg(long)]
        bin_width: Option<f64>,
        #[arg(long)]
        min_count: Option<u64>,
        /// Largest inter-arrival gap histogrammed, seconds.
        #[arg(long)]
        max_gap: Option<f64>,
    },
    /// Recover t_d(lambda) from synthetic streams at several rates.
    SweepDeadtime {
        /// True rates in counts/s, comma separated.
        #[arg(long, value_delimiter = ',')]
        rates: Option<Vec<f64>>,
        /// Acquisition time per rate, seconds.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Monte Carlo run of the protocol under attack.
    Simulate(SimulateArgs),
    /// Closed-form predictions for the configured attack.
    Analytic(AttackArgs),
    /// Conservative ratio bound over orthogonal loading rates.
    StealthScan {
        /// Aligned loading rates in counts/s, comma separated.
        #[arg(long, value_delimiter = ',')]
        lambda_par: Option<Vec<f64>>,
        #[arg(long)]
        perp_max: Option<f64>,
        #[arg(long)]
        perp_step: Option<f64>,
    },
    /// I(A;B) and I(A;E) per sifted bit against the ratio r.
    Mutualinfo {
        #[arg(long)]
        r_max: Option<f64>,
        #[arg(long)]
        step: Option<f64>,
    },
}

#[derive(Debug, Args)]
struct AttackArgs {
    /// none, intercept-resend, rie-non-deterministic or rie-deterministic.
    #[arg(long, value_parser = parse_mode)]
    mode: Option<AttackMode>,
    #[arg(long)]
    lambda_par: Option<f64>,
    #[arg(long)]
    lambda_perp: Option<f64>,
    /// Pre-pulse to signal delay, seconds.
    #[arg(long)]
    delta: Option<f64>,
    /// Solve the orthogonal loading for this suppression ratio.
    #[arg(long)]
    target_r: Option<f64>,
    #[arg(long)]
    p0: Option<f64>,
    #[arg(long)]
    background_rate: Option<f64>,
    /// exponential or linear-bound.
    #[arg(long, value_parser = parse_model)]
    availability_model: Option<AvailabilityModel>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    attack: AttackArgs,
    #[arg(long)]
    rounds: Option<u64>,
    /// Pin Alice's state, e.g. Z0 or X1.
    #[arg(long)]
    fixed_alice: Option<PolarizationState>,
}

fn parse_kebab<T: serde::de::DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn parse_mode(s: &str) -> Result<AttackMode, String> {
    parse_kebab(s)
}

fn parse_model(s: &str) -> Result<AvailabilityModel, String> {
    parse_kebab(s)
}

impl AttackArgs {
    fn apply(&self, scenario: &mut Scenario) {
        let (attack, protocol) = (&mut scenario.attack, &mut scenario.protocol);
        if let Some(v) = self.mode {
            attack.mode = v;
        }
        if let Some(v) = self.lambda_par {
            attack.lambda_parallel = v;
        }
        if let Some(v) = self.lambda_perp {
            attack.lambda_perp = v;
        }
        if let Some(v) = self.delta {
            attack.delta = v;
        }
        if self.target_r.is_some() {
            protocol.target_r = self.target_r;
        }
        if let Some(v) = self.p0 {
            protocol.p0 = v;
        }
        if let Some(v) = self.background_rate {
            protocol.background_rate = v;
        }
        if let Some(v) = self.availability_model {
            protocol.availability_model = v;
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut scenario = match &cli.config {
        Some(path) => Scenario::load(path)?,
        None => Scenario::default(),
    };
    let seed = cli.seed.or(scenario.seed).unwrap_or(0);
    let out = cli
        .out
        .clone()
        .or(scenario.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let workers = cli.workers.or(scenario.workers);

    match &cli.command {
        Command::DeadtimeExtract {
            bin_width,
            min_count,
            max_gap,
            ..
        } => {
            let e = &mut scenario.extract;
            e.bin_width = bin_width.unwrap_or(e.bin_width);
            e.min_count = min_count.unwrap_or(e.min_count);
            e.max_gap = max_gap.unwrap_or(e.max_gap);
        }
        Command::SweepDeadtime { rates, duration } => {
            let s = &mut scenario.sweep;
            if let Some(r) = rates {
                s.rates = r.clone();
            }
            s.duration = duration.unwrap_or(s.duration);
        }
        Command::Simulate(args) => {
            args.attack.apply(&mut scenario);
            scenario.protocol.n_rounds = args.rounds.unwrap_or(scenario.protocol.n_rounds);
            if args.fixed_alice.is_some() {
                scenario.protocol.fixed_alice = args.fixed_alice;
            }
        }
        Command::Analytic(args) => args.apply(&mut scenario),
        Command::StealthScan {
            lambda_par,
            perp_max,
            perp_step,
        } => {
            let s = &mut scenario.stealth;
            if let Some(l) = lambda_par {
                s.lambda_par = l.clone();
            }
            s.lambda_perp_max = perp_max.unwrap_or(s.lambda_perp_max);
            s.lambda_perp_step = perp_step.unwrap_or(s.lambda_perp_step);
        }
        Command::Mutualinfo { r_max, step } => {
            let m = &mut scenario.mutualinfo;
            m.r_max = r_max.unwrap_or(m.r_max);
            m.step = step.unwrap_or(m.step);
        }
    }

    anyhow::ensure!(workers != Some(0), "--workers must be at least 1");
    let job = commands::prepare(&cli.command, &scenario, seed)?;
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    match workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .context("building worker pool")?
            .install(|| job.run(&out)),
        None => job.run(&out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
