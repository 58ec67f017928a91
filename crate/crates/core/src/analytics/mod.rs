//! Offline analysis of building meter data.
//!
//! Raw samples (semi-hourly or hourly) for five channels are unified to an
//! hourly grid, then analysed with weekly correlation windows, daily
//! aggregates, linear/polynomial regression and occupancy subsets.

mod calendar;
mod regression;
mod stats;

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use chrono::{DateTime, Duration, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use calendar::{
    daily_aggregate, daily_to_csv, split_subsets, Calendar, DailyRecord, Subset, SubsetReport, SubsetStats,
};
pub use regression::{fit_least_squares, fit_mlr, fit_mpr, Model, RegressionFit};
pub use stats::{
    pearson, weekly_correlations, Correlation, WeekRow, WeeklyCorrelations, HOURS_PER_WEEK, MAX_MISSING_FRACTION,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalyticsError {
    #[error("csv line {line}: {reason}")]
    Input { line: usize, reason: String },
    #[error("{channel}: timestamps must be strictly increasing (at {at})")]
    NotIncreasing { channel: Channel, at: NaiveDateTime },
    #[error("{channel}: sample interval of {seconds} s does not divide one hour")]
    IrregularInterval { channel: Channel, seconds: i64 },
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} samples, have {have}")]
    TooFewSamples { needed: usize, have: usize },
    #[error("correlation undefined: a series is constant")]
    Undefined,
    #[error("no complete weeks in dataset")]
    EmptyResult,
    #[error("rank-deficient design; collinear terms: {}", .terms.join(", "))]
    Degenerate { terms: Vec<String> },
}

/// Building telemetry channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Channel {
    /// Outdoor temperature, °F (X).
    Temperature,
    /// Relative humidity, % (Y).
    Humidity,
    /// Whole-building electricity, kWh per interval (Z).
    Electricity,
    /// Heating energy, BTU per interval (H).
    Heating,
    /// Cooling energy, BTU per interval (C).
    Cooling,
}

impl Channel {
    pub const ALL: [Channel; 5] = [
        Channel::Temperature,
        Channel::Humidity,
        Channel::Electricity,
        Channel::Heating,
        Channel::Cooling,
    ];

    pub fn csv_name(self) -> &'static str {
        match self {
            Channel::Temperature => "temp_f",
            Channel::Humidity => "humidity_pct",
            Channel::Electricity => "electric_kwh",
            Channel::Heating => "heating_btu",
            Channel::Cooling => "cooling_btu",
        }
    }

    pub fn letter(self) -> char {
        match self {
            Channel::Temperature => 'X',
            Channel::Humidity => 'Y',
            Channel::Electricity => 'Z',
            Channel::Heating => 'H',
            Channel::Cooling => 'C',
        }
    }

    /// Energy channels add up over time; condition channels average.
    pub fn is_extensive(self) -> bool {
        matches!(self, Channel::Electricity | Channel::Heating | Channel::Cooling)
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.csv_name())
    }
}

impl FromStr for Channel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Channel::ALL
            .into_iter()
            .find(|c| c.csv_name() == s || s.len() == 1 && s.starts_with(c.letter()))
            .ok_or_else(|| format!("unknown channel {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub at: NaiveDateTime,
    pub value: f64,
}

/// Time-ordered samples of one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeterSeries {
    pub channel: Channel,
    samples: Vec<Sample>,
}

impl MeterSeries {
    pub fn new(channel: Channel, samples: Vec<Sample>) -> Result<Self, AnalyticsError> {
        if let Some(w) = samples.windows(2).find(|w| w[1].at <= w[0].at) {
            return Err(AnalyticsError::NotIncreasing { channel, at: w[1].at });
        }
        Ok(Self { channel, samples })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }
}

pub fn parse_timestamp(text: &str) -> Option<NaiveDateTime> {
    let t = text.trim();
    DateTime::parse_from_rfc3339(t)
        .map(|d| d.naive_utc())
        .ok()
        .or_else(|| NaiveDateTime::parse_from_str(t, "%Y-%m-%dT%H:%M:%S").ok())
        .or_else(|| NaiveDateTime::parse_from_str(t, "%Y-%m-%d %H:%M:%S").ok())
        .or_else(|| NaiveDateTime::parse_from_str(t, "%Y-%m-%dT%H:%M").ok())
}

/// Reads `timestamp,channel,value` rows (header optional, blank lines and
/// `#` comments skipped). Rows may interleave channels; each channel must be
/// time-ordered.
pub fn read_meter_csv(input: impl Read) -> Result<BTreeMap<Channel, MeterSeries>, AnalyticsError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(input);
    let mut by_channel: BTreeMap<Channel, Vec<Sample>> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 1;
        let rec = rec.map_err(|e| AnalyticsError::Input {
            line,
            reason: e.to_string(),
        })?;
        if rec.len() != 3 {
            return Err(AnalyticsError::Input {
                line,
                reason: format!("expected 3 fields, got {}", rec.len()),
            });
        }
        if i == 0 && rec[0].eq_ignore_ascii_case("timestamp") {
            continue;
        }
        let at = parse_timestamp(&rec[0]).ok_or_else(|| AnalyticsError::Input {
            line,
            reason: format!("bad timestamp {:?}", &rec[0]),
        })?;
        let channel: Channel = rec[1]
            .parse()
            .map_err(|reason| AnalyticsError::Input { line, reason })?;
        let value: f64 = rec[2].parse().map_err(|_| AnalyticsError::Input {
            line,
            reason: format!("bad value {:?}", &rec[2]),
        })?;
        if !value.is_finite() {
            return Err(AnalyticsError::Input {
                line,
                reason: "value must be finite".into(),
            });
        }
        by_channel.entry(channel).or_default().push(Sample { at, value });
    }
    by_channel
        .into_iter()
        .map(|(c, s)| MeterSeries::new(c, s).map(|m| (c, m)))
        .collect()
}

/// Writes samples in the same `timestamp,channel,value` layout.
pub fn write_meter_csv(series: &[MeterSeries]) -> String {
    let mut out = String::from("timestamp,channel,value\n");
    for s in series {
        for x in &s.samples {
            out.push_str(&format!(
                "{},{},{}\n",
                x.at.format("%Y-%m-%dT%H:%M:%S"),
                s.channel,
                x.value
            ));
        }
    }
    out
}

fn floor_hour(t: NaiveDateTime) -> NaiveDateTime {
    t.with_minute(0)
        .and_then(|t| t.with_second(0))
        .and_then(|t| t.with_nanosecond(0))
        .unwrap_or(t)
}

/// One channel on an hourly grid; `None` marks a missing hour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourlySeries {
    pub channel: Channel,
    pub start: NaiveDateTime,
    pub values: Vec<Option<f64>>,
}

impl HourlySeries {
    pub fn missing_hours(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }
}

/// Unifies a series to hourly values: energy channels sum within the hour,
/// condition channels average. Hours without a full set of samples are
/// marked missing.
pub fn resample_hourly(series: &MeterSeries) -> Result<HourlySeries, AnalyticsError> {
    let samples = &series.samples;
    let Some(first) = samples.first() else {
        return Ok(HourlySeries {
            channel: series.channel,
            start: NaiveDateTime::default(),
            values: vec![],
        });
    };
    let interval = samples
        .windows(2)
        .map(|w| (w[1].at - w[0].at).num_seconds())
        .min()
        .unwrap_or(3600);
    if interval <= 0 || 3600 % interval != 0 {
        return Err(AnalyticsError::IrregularInterval {
            channel: series.channel,
            seconds: interval,
        });
    }
    let per_hour = (3600 / interval) as usize;
    let start = floor_hour(first.at);
    let last = floor_hour(samples[samples.len() - 1].at);
    let hours = ((last - start).num_hours() + 1) as usize;
    let mut buckets: Vec<Vec<f64>> = vec![Vec::new(); hours];
    for s in samples {
        let idx = (floor_hour(s.at) - start).num_hours() as usize;
        buckets[idx].push(s.value);
    }
    let values = buckets
        .into_iter()
        .map(|b| {
            (b.len() == per_hour).then(|| {
                let sum: f64 = b.iter().sum();
                if series.channel.is_extensive() {
                    sum
                } else {
                    sum / b.len() as f64
                }
            })
        })
        .collect();
    Ok(HourlySeries {
        channel: series.channel,
        start,
        values,
    })
}

/// Several channels aligned on one hourly grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourlyDataset {
    pub start: NaiveDateTime,
    pub hours: usize,
    pub channels: BTreeMap<Channel, Vec<Option<f64>>>,
}

impl HourlyDataset {
    /// Aligns hourly series onto their common span, filling gaps with `None`.
    pub fn from_hourly(series: &[HourlySeries]) -> Self {
        let non_empty: Vec<_> = series.iter().filter(|s| !s.values.is_empty()).collect();
        let Some(start) = non_empty.iter().map(|s| s.start).min() else {
            return Self {
                start: NaiveDateTime::default(),
                hours: 0,
                channels: BTreeMap::new(),
            };
        };
        let end = non_empty
            .iter()
            .map(|s| s.start + Duration::hours(s.values.len() as i64))
            .max()
            .unwrap_or(start);
        let hours = (end - start).num_hours() as usize;
        let channels = non_empty
            .iter()
            .map(|s| {
                let offset = (s.start - start).num_hours() as usize;
                let mut v = vec![None; hours];
                v[offset..offset + s.values.len()].copy_from_slice(&s.values);
                (s.channel, v)
            })
            .collect();
        Self { start, hours, channels }
    }

    /// Builds a complete dataset from per-channel hourly vectors starting at `start`.
    pub fn from_columns(start: NaiveDateTime, columns: BTreeMap<Channel, Vec<f64>>) -> Self {
        let hours = columns.values().map(Vec::len).max().unwrap_or(0);
        let channels = columns
            .into_iter()
            .map(|(c, v)| {
                let mut col: Vec<Option<f64>> = v.into_iter().map(Some).collect();
                col.resize(hours, None);
                (c, col)
            })
            .collect();
        Self {
            start: floor_hour(start),
            hours,
            channels,
        }
    }

    pub fn from_series(series: &BTreeMap<Channel, MeterSeries>) -> Result<Self, AnalyticsError> {
        let hourly = series.values().map(resample_hourly).collect::<Result<Vec<_>, _>>()?;
        Ok(Self::from_hourly(&hourly))
    }

    pub fn hour_at(&self, idx: usize) -> NaiveDateTime {
        self.start + Duration::hours(idx as i64)
    }

    pub fn value(&self, channel: Channel, idx: usize) -> Option<f64> {
        self.channels.get(&channel).and_then(|v| v.get(idx).copied().flatten())
    }
}
