use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Effective dead time as a function of the observed count rate, tabulated
/// and evaluated by piecewise-linear interpolation. Outside the table the
/// first/last value is held.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct DeadTimeCurve {
    // (observed rate in counts/s, dead time in s), strictly increasing in rate
    points: Vec<(f64, f64)>,
}

impl DeadTimeCurve {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Config("dead-time curve has no points".into()));
        }
        for (i, &(rate, t_d)) in points.iter().enumerate() {
            if !rate.is_finite() || rate < 0.0 {
                return Err(Error::Config(format!(
                    "dead-time curve point {i}: rate {rate} must be finite and >= 0"
                )));
            }
            if !t_d.is_finite() || t_d < 0.0 {
                return Err(Error::Config(format!(
                    "dead-time curve point {i}: dead time {t_d} must be finite and >= 0"
                )));
            }
        }
        if let Some(w) = points.windows(2).find(|w| w[1].0 <= w[0].0) {
            return Err(Error::Config(format!(
                "dead-time curve rates must be strictly increasing ({} then {})",
                w[0].0, w[1].0
            )));
        }
        Ok(Self { points })
    }

    /// Rate-independent dead time.
    ///
    /// Panics if `t_d` is negative or not finite.
    pub fn constant(t_d: f64) -> Self {
        Self::new(vec![(0.0, t_d)]).expect("constant dead time must be finite and >= 0")
    }

    /// Free-running Si SPAD (SPCM-AQRH class) recovery curve: a ~23.3 ns
    /// plateau below 4 Mcps, rising through 30 ns in the mid-teens of Mcps
    /// and saturating near 31.5 ns from 30 Mcps on.
    pub fn builtin() -> Self {
        const ANCHORS: [(f64, f64); 9] = [
            (0.0, 23.3),
            (1.0, 23.3),
            (4.0, 24.0),
            (8.0, 26.0),
            (12.0, 28.3),
            (16.0, 30.3),
            (20.0, 31.0),
            (25.0, 31.3),
            (30.0, 31.5),
        ];
        Self {
            points: ANCHORS.iter().map(|&(mcps, ns)| (mcps * 1e6, ns * 1e-9)).collect(),
        }
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn dead_time_at(&self, rate: f64) -> f64 {
        let first = self.points[0];
        let last = self.points[self.points.len() - 1];
        if !(rate > first.0) {
            return first.1;
        }
        if rate >= last.0 {
            return last.1;
        }
        let upper = self.points.partition_point(|&(r, _)| r <= rate);
        let (r0, t0) = self.points[upper - 1];
        let (r1, t1) = self.points[upper];
        t0 + (t1 - t0) * (rate - r0) / (r1 - r0)
    }

    pub fn is_monotone(&self) -> bool {
        self.points.windows(2).all(|w| w[1].1 >= w[0].1)
    }

    /// Reads a two-column CSV (`lambda_cps,t_d_seconds`) with a header row.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut points = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let record = record?;
            // header is line 1
            let line = i + 2;
            if record.len() != 2 {
                return Err(Error::Parse {
                    line,
                    message: format!("expected 2 columns, found {}", record.len()),
                });
            }
            let parse = |field: &str| {
                field.parse::<f64>().map_err(|e| Error::Parse {
                    line,
                    message: format!("{field:?}: {e}"),
                })
            };
            points.push((parse(&record[0])?, parse(&record[1])?));
        }
        Self::new(points)
    }

    pub fn from_csv_path(path: &Path) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["lambda_cps", "t_d_seconds"])?;
        for &(rate, t_d) in &self.points {
            wtr.write_record([rate.to_string(), t_d.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

impl TryFrom<Vec<(f64, f64)>> for DeadTimeCurve {
    type Error = Error;

    fn try_from(points: Vec<(f64, f64)>) -> Result<Self> {
        Self::new(points)
    }
}

impl From<DeadTimeCurve> for Vec<(f64, f64)> {
    fn from(curve: DeadTimeCurve) -> Self {
        curve.points
    }
}
