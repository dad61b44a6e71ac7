use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde_json::json;

use rie_core::adversary::{branch_click_probabilities, loading_for_ratio, AttackConfig, AttackMode};
use rie_core::analysis::{
    e_obs, mutual_info_bob_sifted, mutual_info_curve, mutual_info_erasure_bsc, mutual_info_eve_sifted, r_threshold,
    sift_probability, stealth_crossing, stealth_scan, write_mutual_info_csv, write_stealth_csv, ChannelParams,
};
use rie_core::detector::{busy_fraction, DeadTimeCurve};
use rie_core::protocol::{branch_table, run_simulation, ProtocolConfig, Scenario as RoundModel};
use rie_core::timetag::{
    estimate_dead_time, interarrival_histogram, sweep_dead_time, write_sweep_csv, SweepConfig, TimestampStream,
};

use crate::config::{ExtractSection, Scenario};
use crate::Command;

/// A fully validated command, ready to run.
pub enum Job {
    Extract {
        source: PathBuf,
        stream: TimestampStream,
        bin_width: f64,
        max_gap: f64,
        min_count: u64,
    },
    Sweep {
        rates: Vec<f64>,
        truth: DeadTimeCurve,
        config: SweepConfig,
        seed: u64,
    },
    Simulate {
        config: ProtocolConfig,
        attack: AttackConfig,
    },
    Analytic {
        config: ProtocolConfig,
        attack: AttackConfig,
    },
    Stealth {
        curve: DeadTimeCurve,
        lambda_par: Vec<f64>,
        grid: Vec<f64>,
        abort_threshold: f64,
    },
    MutualInfo {
        r_max: f64,
        step: f64,
        abort_threshold: f64,
    },
}

fn check_histogram(bin_width: f64, max_gap: f64) -> Result<()> {
    ensure!(
        bin_width > 0.0 && bin_width.is_finite(),
        "bin width must be positive, got {bin_width}"
    );
    ensure!(
        max_gap > bin_width && max_gap.is_finite(),
        "max gap {max_gap} must exceed the bin width"
    );
    Ok(())
}

fn check_abort(threshold: f64) -> Result<()> {
    ensure!(
        threshold > 0.0 && threshold < 0.5,
        "abort_threshold must lie in (0, 0.5), got {threshold}"
    );
    Ok(())
}

fn resolve_attack(scenario: &Scenario, config: &ProtocolConfig) -> Result<AttackConfig> {
    let mut attack = scenario.attack.clone();
    if let Some(r) = scenario.protocol.target_r {
        ensure!(
            attack.mode == AttackMode::RieNonDeterministic,
            "target_r needs attack mode rie-non-deterministic"
        );
        let noise = config.background_rate + config.dark_count_rate;
        attack.lambda_perp = loading_for_ratio(r, &config.dead_time_curve, config.availability_model, noise)?;
    }
    attack.validate()?;
    Ok(attack)
}

pub fn prepare(command: &Command, scenario: &Scenario, seed: u64) -> Result<Job> {
    Ok(match command {
        Command::DeadtimeExtract { file, .. } => {
            let ExtractSection {
                bin_width,
                min_count,
                max_gap,
            } = scenario.extract;
            check_histogram(bin_width, max_gap)?;
            let reader = BufReader::new(File::open(file).with_context(|| format!("opening {}", file.display()))?);
            let stream = TimestampStream::read_from(reader).with_context(|| format!("reading {}", file.display()))?;
            Job::Extract {
                source: file.clone(),
                stream,
                bin_width,
                max_gap,
                min_count,
            }
        }
        Command::SweepDeadtime { .. } => {
            let s = &scenario.sweep;
            ensure!(!s.rates.is_empty(), "sweep rate grid is empty");
            ensure!(
                s.rates.iter().all(|r| *r > 0.0 && r.is_finite()),
                "sweep rates must be positive"
            );
            ensure!(
                s.duration > 0.0 && s.duration.is_finite(),
                "sweep duration must be positive"
            );
            check_histogram(s.bin_width, s.max_gap)?;
            Job::Sweep {
                rates: s.rates.clone(),
                truth: scenario.curve()?,
                config: s.sweep_config(),
                seed,
            }
        }
        Command::Simulate(_) | Command::Analytic(_) => {
            let config = scenario.protocol_config(seed)?;
            let attack = resolve_attack(scenario, &config)?;
            RoundModel::new(&config, &attack)?;
            if matches!(command, Command::Simulate(_)) {
                Job::Simulate { config, attack }
            } else {
                Job::Analytic { config, attack }
            }
        }
        Command::StealthScan { .. } => {
            let s = &scenario.stealth;
            ensure!(!s.lambda_par.is_empty(), "stealth lambda_par grid is empty");
            ensure!(
                s.lambda_par.iter().all(|l| *l >= 0.0 && l.is_finite()),
                "lambda_par must be >= 0"
            );
            check_abort(scenario.protocol.abort_threshold)?;
            Job::Stealth {
                curve: scenario.curve()?,
                lambda_par: s.lambda_par.clone(),
                grid: s.perp_grid()?,
                abort_threshold: scenario.protocol.abort_threshold,
            }
        }
        Command::Mutualinfo { .. } => {
            let m = &scenario.mutualinfo;
            ensure!(
                m.step > 0.0 && m.step.is_finite(),
                "mutualinfo step must be positive, got {}",
                m.step
            );
            ensure!(
                m.r_max >= 0.0 && m.r_max.is_finite(),
                "mutualinfo r_max must be >= 0, got {}",
                m.r_max
            );
            check_abort(scenario.protocol.abort_threshold)?;
            Job::MutualInfo {
                r_max: m.r_max,
                step: m.step,
                abort_threshold: scenario.protocol.abort_threshold,
            }
        }
    })
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    Ok(BufWriter::new(
        File::create(&path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_json(dir: &Path, name: &str, value: &impl serde::Serialize) -> Result<()> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

impl Job {
    pub fn run(&self, out: &Path) -> Result<()> {
        match self {
            Job::Extract {
                source,
                stream,
                bin_width,
                max_gap,
                min_count,
            } => {
                let hist = interarrival_histogram(stream, *bin_width, *max_gap)?;
                let t_d = estimate_dead_time(&hist, *min_count)?;
                hist.write_csv(create(out, "histogram.csv")?)?;
                write_json(
                    out,
                    "deadtime.json",
                    &json!({
                        "source": source.display().to_string(),
                        "events": stream.len(),
                        "rate_cps": stream.rate(),
                        "t_d_estimate_s": t_d,
                        "bin_width_s": bin_width,
                        "min_count": min_count,
                    }),
                )?;
                println!(
                    "t_d = {:.3} ns, rate = {:.6e} cps, events = {}",
                    t_d * 1e9,
                    stream.rate(),
                    stream.len()
                );
            }
            Job::Sweep {
                rates,
                truth,
                config,
                seed,
            } => {
                let points = sweep_dead_time(rates, truth, config, *seed)?;
                write_sweep_csv(&points, create(out, "sweep.csv")?)?;
                let mut w = create(out, "busy_fraction.csv")?;
                writeln!(w, "lambda_obs_cps,busy_fraction")?;
                for p in &points {
                    let busy = busy_fraction(p.observed_rate, &DeadTimeCurve::constant(p.dead_time_estimate));
                    writeln!(w, "{},{}", p.observed_rate, busy)?;
                }
                w.flush()?;
                for p in &points {
                    println!(
                        "beta {:.3e} -> lambda {:.3e} cps, t_d {:.2} ns (applied {:.2} ns)",
                        p.true_rate,
                        p.observed_rate,
                        p.dead_time_estimate * 1e9,
                        p.dead_time_applied * 1e9
                    );
                }
            }
            Job::Simulate { config, attack } => {
                let report = run_simulation(config, attack)?;
                let mut w = create(out, "report.json")?;
                writeln!(w, "{}", report.to_json())?;
                w.flush()?;
                report.write_branch_csv(create(out, "branches.csv")?)?;
                if let (Some(alice), true) = (config.fixed_alice, attack.mode != AttackMode::None) {
                    let rows = branch_table(&report, alice)?;
                    let mut w = create(out, "branch_table.csv")?;
                    writeln!(
                        w,
                        "eve_basis,eve_bit,prepulse,bob_basis,label,rounds,click_rate,kept,conditional_error,insufficient_data"
                    )?;
                    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
                    for r in rows {
                        let label = serde_json::to_value(r.label)?;
                        writeln!(
                            w,
                            "{},{},{},{},{},{},{},{},{},{}",
                            r.eve_basis,
                            r.eve_bit,
                            r.prepulse,
                            r.bob_basis,
                            label.as_str().unwrap_or_default(),
                            r.rounds,
                            opt(r.click_rate),
                            r.kept,
                            opt(r.conditional_error),
                            r.insufficient_data
                        )?;
                    }
                    w.flush()?;
                }
                let qber = report.qber_observed.map_or("n/a".to_string(), |q| format!("{q:.6}"));
                println!(
                    "rounds {} sifted {} qber {} abort {} (lambda_perp {:.6e} cps)",
                    report.n_rounds, report.n_sifted, qber, report.abort, attack.lambda_perp
                );
            }
            Job::Analytic { config, attack } => {
                let (p_par, p_perp) = branch_click_probabilities(
                    attack,
                    &config.dead_time_curve,
                    config.availability_model,
                    config.p0 * config.transmission,
                    config.background_rate + config.dark_count_rate,
                )?;
                if !(p_par > 0.0) {
                    bail!("aligned click probability is zero; ratio undefined");
                }
                let r = p_perp / p_par;
                let e = e_obs(r)?;
                let threshold = r_threshold(config.abort_threshold)?;
                let erasure = 1.0 - 0.5 * (p_par + p_perp);
                let value = json!({
                    "attack": attack,
                    "p_parallel": p_par,
                    "p_perp": p_perp,
                    "r": r,
                    "e_obs": e,
                    "abort_threshold": config.abort_threshold,
                    "r_threshold": threshold,
                    "stealthy": r < threshold,
                    "sift_probability": sift_probability(p_par, p_perp)?,
                    "erasure_probability": erasure,
                    "i_ab_sifted": mutual_info_bob_sifted(r)?,
                    "i_ae_sifted": mutual_info_eve_sifted(r)?,
                    "i_ab_per_round": mutual_info_erasure_bsc(ChannelParams::new(erasure, e)?),
                });
                write_json(out, "analytic.json", &value)?;
                println!(
                    "r = {r:.6}, e_obs = {e:.6}, r_threshold = {threshold:.6}, stealthy = {}",
                    r < threshold
                );
            }
            Job::Stealth {
                curve,
                lambda_par,
                grid,
                abort_threshold,
            } => {
                let rows = stealth_scan(lambda_par, grid, curve, *abort_threshold)?;
                write_stealth_csv(&rows, create(out, "stealth_scan.csv")?)?;
                let threshold = r_threshold(*abort_threshold)?;
                let upper = grid.last().copied().unwrap_or(0.0);
                let mut crossings = Vec::new();
                for &l in lambda_par {
                    let x = stealth_crossing(l, threshold, curve, upper)?;
                    match x {
                        Some(v) => {
                            println!("lambda_par {l:.3e}: r_bound < {threshold:.6} above lambda_perp {v:.6e} cps")
                        }
                        None => println!("lambda_par {l:.3e}: no crossing below {upper:.3e} cps"),
                    }
                    crossings.push(json!({ "lambda_par_cps": l, "lambda_perp_star_cps": x }));
                }
                write_json(
                    out,
                    "stealth_meta.json",
                    &json!({ "abort_threshold": abort_threshold, "r_threshold": threshold, "crossings": crossings }),
                )?;
            }
            Job::MutualInfo {
                r_max,
                step,
                abort_threshold,
            } => {
                let points = mutual_info_curve(*r_max, *step)?;
                write_mutual_info_csv(&points, create(out, "mutualinfo.csv")?)?;
                let threshold = r_threshold(*abort_threshold)?;
                write_json(
                    out,
                    "mutualinfo_meta.json",
                    &json!({ "abort_threshold": abort_threshold, "r_threshold": threshold }),
                )?;
                println!("{} points, r_threshold = {threshold:.6}", points.len());
            }
        }
        Ok(())
    }
}
