use chrono::NaiveDateTime;
use serde::Serialize;

use super::{AnalyticsError, Channel, HourlyDataset};

pub const HOURS_PER_WEEK: usize = 168;
/// Weeks missing more than this share of hours are excluded.
pub const MAX_MISSING_FRACTION: f64 = 0.05;

/// Pearson correlation coefficient of two equal-length series.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64, AnalyticsError> {
    if a.len() != b.len() {
        return Err(AnalyticsError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(AnalyticsError::TooFewSamples {
            needed: 2,
            have: a.len(),
        });
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 || a.iter().all(|x| *x == a[0]) || b.iter().all(|y| *y == b[0]) {
        return Err(AnalyticsError::Undefined);
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Correlation {
    pub a: Channel,
    pub b: Channel,
    /// `None` when one side is constant over the window.
    pub r: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeekRow {
    pub start: NaiveDateTime,
    pub missing_hours: usize,
    pub excluded: bool,
    pub correlations: Vec<Correlation>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeeklyCorrelations {
    pub pairs: Vec<(Channel, Channel)>,
    pub weeks: Vec<WeekRow>,
}

impl WeeklyCorrelations {
    pub fn included(&self) -> impl Iterator<Item = &WeekRow> {
        self.weeks.iter().filter(|w| !w.excluded)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("week_start,missing_hours,excluded");
        for (a, b) in &self.pairs {
            out.push_str(&format!(",r_{}{}", a.letter(), b.letter()));
        }
        out.push('\n');
        for w in &self.weeks {
            out.push_str(&format!(
                "{},{},{}",
                w.start.format("%Y-%m-%dT%H:%M:%S"),
                w.missing_hours,
                w.excluded
            ));
            for c in &w.correlations {
                out.push(',');
                if let Some(r) = c.r {
                    out.push_str(&format!("{r:.6}"));
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Correlations over consecutive 168-hour windows starting at the first
/// hour of the dataset. A trailing partial week is dropped.
pub fn weekly_correlations(
    data: &HourlyDataset,
    pairs: &[(Channel, Channel)],
) -> Result<WeeklyCorrelations, AnalyticsError> {
    let full_weeks = data.hours / HOURS_PER_WEEK;
    if full_weeks == 0 {
        return Err(AnalyticsError::EmptyResult);
    }
    let mut used: Vec<Channel> = pairs.iter().flat_map(|(a, b)| [*a, *b]).collect();
    used.sort();
    used.dedup();
    let mut weeks = Vec::with_capacity(full_weeks);
    for w in 0..full_weeks {
        let range = w * HOURS_PER_WEEK..(w + 1) * HOURS_PER_WEEK;
        let missing_hours = range
            .clone()
            .filter(|&h| used.iter().any(|c| data.value(*c, h).is_none()))
            .count();
        let excluded = missing_hours as f64 > MAX_MISSING_FRACTION * HOURS_PER_WEEK as f64;
        let correlations = pairs
            .iter()
            .map(|&(a, b)| {
                let r = if excluded {
                    None
                } else {
                    let (xa, xb): (Vec<f64>, Vec<f64>) = range
                        .clone()
                        .filter_map(|h| Some((data.value(a, h)?, data.value(b, h)?)))
                        .unzip();
                    pearson(&xa, &xb).ok()
                };
                Correlation { a, b, r }
            })
            .collect();
        weeks.push(WeekRow {
            start: data.hour_at(range.start),
            missing_hours,
            excluded,
            correlations,
        });
    }
    Ok(WeeklyCorrelations {
        pairs: pairs.to_vec(),
        weeks,
    })
}
