//! Synthetic time-tagger streams and dead-time extraction from
//! inter-arrival histograms.
//!
//! Timestamps are held as integer picoseconds on the tagger's quantization
//! grid, which also makes the on-disk format (one integer per line,
//! picoseconds since stream start) lossless.

use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::Serialize;

use crate::detector::DeadTimeCurve;
use crate::error::{Error, Result};

const PS_PER_S: f64 = 1e12;

/// Default time-tagger resolution, 8 ps.
pub const DEFAULT_RESOLUTION: f64 = 8e-12;
pub const DEFAULT_BIN_WIDTH: f64 = 0.5e-9;
pub const DEFAULT_MAX_GAP: f64 = 200e-9;
pub const DEFAULT_MIN_COUNT: u64 = 2;

const FIXED_POINT_MAX_ITER: usize = 20;
const FIXED_POINT_RTOL: f64 = 1e-6;

fn seconds_to_ps(t: f64) -> u64 {
    (t * PS_PER_S).round() as u64
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TimestampStream {
    ticks: Vec<u64>,
    resolution_ps: u64,
    duration_ps: u64,
}

impl TimestampStream {
    /// Builds a stream from picosecond ticks. Ticks must be non-decreasing;
    /// duplicates are merged.
    pub fn new(mut ticks: Vec<u64>, resolution_ps: u64, duration_ps: u64) -> Result<Self> {
        if resolution_ps == 0 {
            return Err(Error::Config("timestamp resolution must be at least 1 ps".into()));
        }
        if let Some(i) = ticks.windows(2).position(|w| w[1] < w[0]) {
            return Err(Error::Config(format!("timestamps not sorted at index {}", i + 1)));
        }
        if ticks.last().is_some_and(|&t| t > duration_ps) {
            return Err(Error::Config("timestamp beyond stream duration".into()));
        }
        ticks.dedup();
        Ok(Self {
            ticks,
            resolution_ps,
            duration_ps,
        })
    }

    pub fn ticks(&self) -> &[u64] {
        &self.ticks
    }

    pub fn timestamps(&self) -> impl Iterator<Item = f64> + '_ {
        self.ticks.iter().map(|&t| t as f64 / PS_PER_S)
    }

    pub fn len(&self) -> usize {
        self.ticks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ticks.is_empty()
    }

    pub fn resolution(&self) -> f64 {
        self.resolution_ps as f64 / PS_PER_S
    }

    pub fn duration(&self) -> f64 {
        self.duration_ps as f64 / PS_PER_S
    }

    /// Mean event rate over the stream duration (0 for a zero-length stream).
    pub fn rate(&self) -> f64 {
        if self.duration_ps == 0 {
            0.0
        } else {
            self.ticks.len() as f64 / self.duration()
        }
    }

    /// Parses the one-integer-per-line picosecond format. Blank lines are
    /// skipped; the duration is taken to be the last timestamp.
    pub fn read_from<R: BufRead>(reader: R) -> Result<Self> {
        let mut ticks = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line?;
            let text = line.trim();
            if text.is_empty() {
                continue;
            }
            let tick: u64 = text.parse().map_err(|e| Error::Parse {
                line: line_no,
                message: format!("invalid timestamp {text:?}: {e}"),
            })?;
            if ticks.last().is_some_and(|&prev| tick < prev) {
                return Err(Error::Parse {
                    line: line_no,
                    message: "timestamps must be sorted ascending".into(),
                });
            }
            ticks.push(tick);
        }
        let duration = ticks.last().copied().unwrap_or(0);
        Self::new(ticks, 1, duration)
    }

    pub fn write_to<W: Write>(&self, mut writer: W) -> Result<()> {
        for tick in &self.ticks {
            writeln!(writer, "{tick}")?;
        }
        writer.flush()?;
        Ok(())
    }

    fn with_ticks(&self, ticks: Vec<u64>) -> Self {
        Self {
            ticks,
            resolution_ps: self.resolution_ps,
            duration_ps: self.duration_ps,
        }
    }
}

/// Poisson arrivals at true rate `beta` over `[0, duration]`, quantized to
/// the default 8 ps grid.
pub fn generate_poisson_stream(beta: f64, duration: f64, seed: u64) -> Result<TimestampStream> {
    generate_poisson_stream_with_resolution(beta, duration, DEFAULT_RESOLUTION, seed)
}

pub fn generate_poisson_stream_with_resolution(
    beta: f64,
    duration: f64,
    resolution: f64,
    seed: u64,
) -> Result<TimestampStream> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::Config(format!("arrival rate must be positive, got {beta}")));
    }
    if !(duration >= 0.0 && duration.is_finite()) {
        return Err(Error::Config(format!("duration must be >= 0, got {duration}")));
    }
    let resolution_ps = seconds_to_ps(resolution);
    if resolution_ps == 0 {
        return Err(Error::Config(format!("resolution {resolution} s is below 1 ps")));
    }
    let duration_ps = seconds_to_ps(duration);
    let gaps = Exp::new(beta).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut ticks = Vec::with_capacity((beta * duration * 1.01) as usize + 16);
    let mut t = 0.0;
    loop {
        t += gaps.sample(&mut rng);
        if t > duration {
            break;
        }
        let tick = (t * PS_PER_S / resolution_ps as f64).round() as u64 * resolution_ps;
        if tick > duration_ps {
            break;
        }
        if ticks.last() != Some(&tick) {
            ticks.push(tick);
        }
    }
    Ok(TimestampStream {
        ticks,
        resolution_ps,
        duration_ps,
    })
}

#[derive(Clone, Copy, Debug)]
pub enum DeadTimeMode<'a> {
    Constant(f64),
    /// Dead time evaluated at the output (observed) rate, solved
    /// self-consistently.
    RateDependent(&'a DeadTimeCurve),
}

#[derive(Clone, Debug)]
pub struct Filtered {
    pub stream: TimestampStream,
    /// Dead window that produced `stream`, seconds.
    pub dead_time: f64,
    pub iterations: usize,
}

fn non_paralyzable_filter(ticks: &[u64], dead_time: f64) -> Vec<u64> {
    let window = dead_time * PS_PER_S;
    let mut kept = Vec::with_capacity(ticks.len());
    let mut last: Option<u64> = None;
    for &t in ticks {
        match last {
            Some(prev) if ((t - prev) as f64) < window => {}
            _ => {
                kept.push(t);
                last = Some(t);
            }
        }
    }
    kept
}

/// Removes every event that falls inside the dead window opened by the
/// last kept event. Suppressed events do not extend the window.
pub fn apply_dead_time(stream: &TimestampStream, mode: DeadTimeMode<'_>) -> Result<Filtered> {
    match mode {
        DeadTimeMode::Constant(dead_time) => {
            if !(dead_time >= 0.0 && dead_time.is_finite()) {
                return Err(Error::Config(format!("dead time must be >= 0, got {dead_time}")));
            }
            Ok(Filtered {
                stream: stream.with_ticks(non_paralyzable_filter(&stream.ticks, dead_time)),
                dead_time,
                iterations: 1,
            })
        }
        DeadTimeMode::RateDependent(curve) => {
            if stream.is_empty() || stream.duration_ps == 0 {
                return Ok(Filtered {
                    stream: stream.clone(),
                    dead_time: curve.dead_time_at(0.0),
                    iterations: 0,
                });
            }
            // Output rate falls as the window grows and the curve rises with
            // rate, so the self-consistent window is bracketed by the curve at
            // zero and at the input rate. Bisect on it; windows closer than
            // half a tick filter identically.
            let duration = stream.duration();
            let tol = |t_d: f64| (FIXED_POINT_RTOL * t_d).max(0.5 * stream.resolution());
            let mut lo = curve.dead_time_at(0.0);
            let mut hi = curve.dead_time_at(stream.rate());
            let mut trace = vec![stream.rate()];
            for iteration in 1..=FIXED_POINT_MAX_ITER {
                let dead_time = if iteration == 1 { hi } else { 0.5 * (lo + hi) };
                let kept = non_paralyzable_filter(&stream.ticks, dead_time);
                let out_rate = kept.len() as f64 / duration;
                trace.push(out_rate);
                let implied = curve.dead_time_at(out_rate);
                if (implied - dead_time).abs() <= tol(dead_time) {
                    return Ok(Filtered {
                        stream: stream.with_ticks(kept),
                        dead_time,
                        iterations: iteration,
                    });
                }
                if implied > dead_time {
                    lo = dead_time;
                } else {
                    hi = dead_time;
                }
            }
            Err(Error::NonConvergence { trace })
        }
    }
}

/// Histogram of adjacent-event gaps, bins of equal width starting at zero.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct InterArrivalHistogram {
    bin_width_ps: u64,
    counts: Vec<u64>,
    /// Gaps beyond the histogram range; not part of `counts`.
    out_of_range: u64,
}

impl InterArrivalHistogram {
    pub fn bin_width(&self) -> f64 {
        self.bin_width_ps as f64 / PS_PER_S
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn out_of_range(&self) -> u64 {
        self.out_of_range
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn bin_start(&self, index: usize) -> f64 {
        (index as u64 * self.bin_width_ps) as f64 / PS_PER_S
    }

    /// Writes `bin_start_s,count`, one row per bin.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["bin_start_s", "count"])?;
        for (i, count) in self.counts.iter().enumerate() {
            wtr.write_record([self.bin_start(i).to_string(), count.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

pub fn interarrival_histogram(stream: &TimestampStream, bin_width: f64, max_gap: f64) -> Result<InterArrivalHistogram> {
    let bin_width_ps = seconds_to_ps(bin_width);
    if !(bin_width > 0.0) || bin_width_ps == 0 {
        return Err(Error::Config(format!(
            "bin width must be at least 1 ps, got {bin_width}"
        )));
    }
    if !(max_gap > 0.0 && max_gap.is_finite()) {
        return Err(Error::Config(format!("max gap must be positive, got {max_gap}")));
    }
    if stream.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 timestamps, stream has {}",
            stream.len()
        )));
    }
    let n_bins = seconds_to_ps(max_gap).div_ceil(bin_width_ps) as usize;
    let mut counts = vec![0u64; n_bins.max(1)];
    let mut out_of_range = 0;
    for w in stream.ticks.windows(2) {
        let bin = ((w[1] - w[0]) / bin_width_ps) as usize;
        match counts.get_mut(bin) {
            Some(c) => *c += 1,
            None => out_of_range += 1,
        }
    }
    Ok(InterArrivalHistogram {
        bin_width_ps,
        counts,
        out_of_range,
    })
}

/// Lower edge of the first bin holding at least `min_count` gaps.
pub fn estimate_dead_time(hist: &InterArrivalHistogram, min_count: u64) -> Result<f64> {
    if min_count == 0 {
        return Err(Error::Config("min_count must be at least 1".into()));
    }
    hist.counts
        .iter()
        .position(|&c| c >= min_count)
        .map(|i| hist.bin_start(i))
        .ok_or_else(|| Error::Estimation(format!("no histogram bin reaches {min_count} counts")))
}

#[derive(Clone, Debug)]
pub struct SweepConfig {
    /// Acquisition time per rate point, seconds.
    pub duration: f64,
    pub bin_width: f64,
    pub max_gap: f64,
    pub min_count: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            duration: 0.1,
            bin_width: DEFAULT_BIN_WIDTH,
            max_gap: DEFAULT_MAX_GAP,
            min_count: DEFAULT_MIN_COUNT,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub true_rate: f64,
    pub observed_rate: f64,
    /// Dead time the synthetic detector applied at this point.
    pub dead_time_applied: f64,
    pub dead_time_estimate: f64,
}

/// Generate, filter through `truth`, histogram and estimate, once per true
/// rate. Point `i` uses seed `seed + i`, so results do not depend on how the
/// points are scheduled.
pub fn sweep_dead_time(
    rates: &[f64],
    truth: &DeadTimeCurve,
    config: &SweepConfig,
    seed: u64,
) -> Result<Vec<SweepPoint>> {
    if rates.is_empty() {
        return Err(Error::Config("sweep needs at least one rate".into()));
    }
    rates
        .par_iter()
        .enumerate()
        .map(|(i, &beta)| {
            let raw = generate_poisson_stream(beta, config.duration, seed.wrapping_add(i as u64))?;
            let filtered = apply_dead_time(&raw, DeadTimeMode::RateDependent(truth))?;
            let hist = interarrival_histogram(&filtered.stream, config.bin_width, config.max_gap)?;
            Ok(SweepPoint {
                true_rate: beta,
                observed_rate: filtered.stream.rate(),
                dead_time_applied: filtered.dead_time,
                dead_time_estimate: estimate_dead_time(&hist, config.min_count)?,
            })
        })
        .collect()
}

/// Writes the recovered curve as `lambda_obs_cps,t_d_est_s`.
pub fn write_sweep_csv<W: Write>(points: &[SweepPoint], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["lambda_obs_cps", "t_d_est_s"])?;
    for p in points {
        wtr.write_record([p.observed_rate.to_string(), p.dead_time_estimate.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}
