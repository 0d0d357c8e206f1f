//! Monthly index preprocessing: detrend, deseasonalize, standardize, smooth.
//!
//! Monthly CSV: header `date,<name1>,..`, dates `YYYY-MM`, consecutive
//! months with no gaps.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::NamedTrajectory;
use crate::sim::Trajectory;

#[derive(Clone, Debug, PartialEq)]
pub struct MonthlySeries {
    pub start_year: i32,
    /// Calendar month of the first row, 1..=12.
    pub start_month: u32,
    pub names: Vec<String>,
    /// One vector per column.
    pub columns: Vec<Vec<f64>>,
}

impl MonthlySeries {
    pub fn len(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Calendar month (0-based) of row `k`.
    pub fn calendar_month(&self, k: usize) -> usize {
        (self.start_month as usize - 1 + k) % 12
    }
}

fn parse_date(s: &str, line: usize) -> Result<(i32, u32)> {
    let bad = || Error::Parse {
        line,
        message: format!("date {s:?} is not YYYY-MM"),
    };
    let (y, m) = s.split_once('-').ok_or_else(bad)?;
    if y.len() != 4 || m.len() != 2 {
        return Err(bad());
    }
    let year: i32 = y.parse().map_err(|_| bad())?;
    let month: u32 = m.parse().map_err(|_| bad())?;
    if !(1..=12).contains(&month) {
        return Err(bad());
    }
    Ok((year, month))
}

pub fn read_monthly<R: Read>(reader: R) -> Result<MonthlySeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .iter()
        .map(str::to_string)
        .collect();
    if header.first().map(String::as_str) != Some("date") || header.len() < 2 {
        return Err(Error::Parse {
            line: 1,
            message: "header must be `date,<name>,...`".into(),
        });
    }
    let names = header[1..].to_vec();
    let mut columns = vec![Vec::new(); names.len()];
    let mut start = None;
    let mut prev: Option<i64> = None;
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != header.len() {
            let message = if record.len() < header.len() {
                format!("missing column `{}`", header[record.len()])
            } else {
                format!("{} fields for {} columns", record.len(), header.len())
            };
            return Err(Error::Parse { line, message });
        }
        let (year, month) = parse_date(&record[0], line)?;
        let stamp = year as i64 * 12 + month as i64 - 1;
        if let Some(p) = prev {
            if stamp != p + 1 {
                return Err(Error::Parse {
                    line,
                    message: format!("date {} does not follow the previous month", &record[0]),
                });
            }
        } else {
            start = Some((year, month));
        }
        prev = Some(stamp);
        for (c, col) in columns.iter_mut().enumerate() {
            let field = &record[c + 1];
            col.push(field.parse().map_err(|_| Error::Parse {
                line,
                message: format!("column `{}`: cannot parse {field:?}", names[c]),
            })?);
        }
    }
    let (start_year, start_month) = start.ok_or_else(|| Error::TooShort("no rows".into()))?;
    Ok(MonthlySeries {
        start_year,
        start_month,
        names,
        columns,
    })
}

pub fn load_monthly(path: impl AsRef<Path>) -> Result<MonthlySeries> {
    read_monthly(File::open(path)?)
}

/// Removes the least-squares line through `(k, x_k)`.
pub fn detrend(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let tm = (n - 1.0) / 2.0;
    let xm = x.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (k, v) in x.iter().enumerate() {
        let dt = k as f64 - tm;
        sxy += dt * (v - xm);
        sxx += dt * dt;
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    x.iter()
        .enumerate()
        .map(|(k, v)| v - xm - slope * (k as f64 - tm))
        .collect()
}

/// Centered moving average of odd width; near the ends the window is
/// truncated to the available samples.
pub fn centered_moving_average(x: &[f64], window: usize) -> Vec<f64> {
    let h = window / 2;
    (0..x.len())
        .map(|k| {
            let lo = k.saturating_sub(h);
            let hi = (k + h).min(x.len() - 1);
            x[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

/// Detrends, removes the monthly climatology, divides by the monthly
/// (population) standard deviation and smooths each column. The result has
/// unit time step, one step per month.
pub fn preprocess_enso(series: &MonthlySeries, window: usize) -> Result<NamedTrajectory> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::InvalidParameter(format!("smoothing window must be odd, got {window}")));
    }
    let len = series.len();
    if len < 24 {
        return Err(Error::TooShort(format!("{len} months; at least 24 are needed")));
    }
    let mut processed = Vec::with_capacity(series.columns.len());
    for (name, col) in series.names.iter().zip(&series.columns) {
        let mut x = detrend(col);
        let mut sum = [0.0; 12];
        let mut sumsq = [0.0; 12];
        let mut count = [0usize; 12];
        for (k, v) in x.iter().enumerate() {
            let m = series.calendar_month(k);
            sum[m] += v;
            count[m] += 1;
        }
        let mean: Vec<f64> = (0..12).map(|m| sum[m] / count[m] as f64).collect();
        for (k, v) in x.iter().enumerate() {
            let m = series.calendar_month(k);
            sumsq[m] += (v - mean[m]).powi(2);
        }
        let mut sd = [0.0; 12];
        for m in 0..12 {
            sd[m] = (sumsq[m] / count[m] as f64).sqrt();
            let scale = mean[m].abs().max(1.0);
            if !(sd[m] > 1e-12 * scale) {
                return Err(Error::ZeroMonthlyVariance {
                    month: m + 1,
                    column: name.clone(),
                });
            }
        }
        for (k, v) in x.iter_mut().enumerate() {
            let m = series.calendar_month(k);
            *v = (*v - mean[m]) / sd[m];
        }
        processed.push(centered_moving_average(&x, window));
    }
    let n = processed.len();
    let values: Vec<f64> = (0..len).flat_map(|k| processed.iter().map(move |c| c[k])).collect();
    debug_assert_eq!(values.len(), n * len);
    Ok(NamedTrajectory {
        trajectory: Trajectory::new(n, 1.0, values)?,
        names: series.names.clone(),
    })
}
