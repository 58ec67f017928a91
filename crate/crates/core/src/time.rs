//! Simulation-friendly timestamps.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub const SECONDS_PER_DAY: i64 = 86_400;

/// Whole seconds since an arbitrary epoch.
///
/// Replays use the start of the scenario as the epoch; the live service uses
/// the Unix epoch. Serialized as a plain integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);

    pub fn seconds(self) -> i64 {
        self.0
    }

    /// Midnight of the day containing this instant.
    pub fn day_start(self) -> Timestamp {
        Timestamp(self.0.div_euclid(SECONDS_PER_DAY) * SECONDS_PER_DAY)
    }

    pub fn seconds_of_day(self) -> u32 {
        self.0.rem_euclid(SECONDS_PER_DAY) as u32
    }

    pub fn plus(self, seconds: i64) -> Timestamp {
        Timestamp(self.0 + seconds)
    }

    pub fn hours_until(self, later: Timestamp) -> f64 {
        (later.0 - self.0) as f64 / 3600.0
    }

    /// Current wall-clock time as Unix seconds.
    pub fn now_unix() -> Timestamp {
        let secs = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs() as i64)
            .unwrap_or(0);
        Timestamp(secs)
    }
}

impl fmt::Display for Timestamp {
    /// `[Nd+]HH:MM:SS`, relative to the epoch.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let days = self.0.div_euclid(SECONDS_PER_DAY);
        let sod = self.0.rem_euclid(SECONDS_PER_DAY);
        if days != 0 {
            write!(f, "{days}d+")?;
        }
        write!(f, "{:02}:{:02}:{:02}", sod / 3600, (sod / 60) % 60, sod % 60)
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_i64(self.0)
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        i64::deserialize(d).map(Timestamp)
    }
}

/// An offset written as `HH:MM[:SS]` (hours may exceed 23) or as integer seconds.
///
/// Scenario files use this so schedules stay readable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ClockOffset(pub i64);

impl FromStr for ClockOffset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        if parts.len() < 2 || parts.len() > 3 {
            return Err(format!("expected HH:MM[:SS], got {s:?}"));
        }
        let mut total = 0i64;
        for (i, part) in parts.iter().enumerate() {
            let v: i64 = part
                .parse()
                .map_err(|_| format!("bad clock component {part:?} in {s:?}"))?;
            if v < 0 || (i > 0 && v >= 60) {
                return Err(format!("clock component out of range in {s:?}"));
            }
            total = total * 60 + v;
        }
        if parts.len() == 2 {
            total *= 60;
        }
        Ok(ClockOffset(total))
    }
}

impl<'de> Deserialize<'de> for ClockOffset {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Secs(i64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Secs(s) => Ok(ClockOffset(s)),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

impl Serialize for ClockOffset {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let v = self.0;
        s.serialize_str(&format!("{:02}:{:02}:{:02}", v / 3600, (v / 60) % 60, v % 60))
    }
}
