//! Scripted days: timed fixes, manual switching and mode changes.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LocationPayload, RuntimeError};
use crate::config::{ConfigError, DeploymentConfig};
use crate::devicenet::PowerState;
use crate::policy::UserMode;
use crate::time::ClockOffset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptFix {
    pub at: ClockOffset,
    pub user: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nmea: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lon: Option<f64>,
}

impl ScriptFix {
    pub fn payload(&self) -> Result<LocationPayload, String> {
        match (&self.nmea, self.lat, self.lon) {
            (Some(n), None, None) => Ok(LocationPayload::Nmea { nmea: n.clone() }),
            (None, Some(lat), Some(lon)) => Ok(LocationPayload::LatLon { lat, lon }),
            _ => Err(format!("fix at {} needs either nmea or lat + lon", self.at.0)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManualEvent {
    pub at: ClockOffset,
    pub device: String,
    pub state: PowerState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeChange {
    pub at: ClockOffset,
    pub user: String,
    pub mode: UserMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioScript {
    pub name: String,
    #[serde(default = "default_speedup")]
    pub speedup: f64,
    /// End of the metering window; defaults to the last scripted item.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<ClockOffset>,
    #[serde(default)]
    pub fixes: Vec<ScriptFix>,
    #[serde(default)]
    pub manual_events: Vec<ManualEvent>,
    #[serde(default)]
    pub mode_changes: Vec<ModeChange>,
}

fn default_speedup() -> f64 {
    60.0
}

/// One scripted item, in playback order.
#[derive(Debug, Clone, PartialEq)]
pub enum ScriptItem<'a> {
    Mode(&'a ModeChange),
    Fix(&'a ScriptFix),
    Manual(&'a ManualEvent),
}

impl ScriptItem<'_> {
    pub fn at(&self) -> i64 {
        match self {
            ScriptItem::Mode(m) => m.at.0,
            ScriptItem::Fix(f) => f.at.0,
            ScriptItem::Manual(m) => m.at.0,
        }
    }
}

impl ScenarioScript {
    pub fn from_toml_str(text: &str) -> Result<Self, RuntimeError> {
        toml::from_str(text).map_err(|e| RuntimeError::Config(ConfigError::Parse(e)))
    }

    pub fn load(path: &Path) -> Result<Self, RuntimeError> {
        let text = std::fs::read_to_string(path).map_err(|source| {
            RuntimeError::Config(ConfigError::Io {
                path: path.display().to_string(),
                source,
            })
        })?;
        Self::from_toml_str(&text)
    }

    /// The bundled reference day.
    pub fn reference_day() -> Self {
        Self::from_toml_str(include_str!("../../data/reference-day.toml")).expect("bundled script parses")
    }

    pub fn empty(name: &str) -> Self {
        Self {
            name: name.to_string(),
            speedup: default_speedup(),
            end: None,
            fixes: vec![],
            manual_events: vec![],
            mode_changes: vec![],
        }
    }

    /// Seconds from the start of the day to the end of the metering window.
    pub fn end_offset(&self) -> i64 {
        self.end
            .map(|e| e.0)
            .unwrap_or_else(|| self.items().last().map_or(0, ScriptItem::at))
    }

    /// All items merged by time; ties run mode changes, then fixes, then
    /// manual events, each in file order.
    pub fn items(&self) -> Vec<ScriptItem<'_>> {
        let mut items: Vec<(i64, u8, usize, ScriptItem<'_>)> = vec![];
        items.extend(
            self.mode_changes
                .iter()
                .enumerate()
                .map(|(i, m)| (m.at.0, 0, i, ScriptItem::Mode(m))),
        );
        items.extend(
            self.fixes
                .iter()
                .enumerate()
                .map(|(i, f)| (f.at.0, 1, i, ScriptItem::Fix(f))),
        );
        items.extend(
            self.manual_events
                .iter()
                .enumerate()
                .map(|(i, m)| (m.at.0, 2, i, ScriptItem::Manual(m))),
        );
        items.sort_by_key(|(at, order, idx, _)| (*at, *order, *idx));
        items.into_iter().map(|x| x.3).collect()
    }

    pub fn validate(&self, config: &DeploymentConfig) -> Result<(), RuntimeError> {
        let invalid = |m: String| Err(RuntimeError::Validation(m));
        if !(self.speedup > 0.0) {
            return invalid(format!("speedup must be positive, got {}", self.speedup));
        }
        let ordered = |times: Vec<i64>, what: &str| -> Result<(), RuntimeError> {
            if times.iter().any(|t| *t < 0) || times.windows(2).any(|w| w[1] < w[0]) {
                return Err(RuntimeError::Validation(format!(
                    "{what} must be time-ordered and non-negative"
                )));
            }
            Ok(())
        };
        ordered(self.fixes.iter().map(|f| f.at.0).collect(), "fixes")?;
        ordered(self.manual_events.iter().map(|m| m.at.0).collect(), "manual_events")?;
        ordered(self.mode_changes.iter().map(|m| m.at.0).collect(), "mode_changes")?;
        let end = self.end_offset();
        if let Some(late) = self.items().iter().find(|i| i.at() > end) {
            return invalid(format!(
                "item at {} s falls after the end of the script ({end} s)",
                late.at()
            ));
        }

        let users: BTreeSet<&str> = config.users.iter().map(|u| u.id.as_str()).collect();
        let unknown = |m: String| Err(RuntimeError::Config(ConfigError::Invalid(m)));
        for f in &self.fixes {
            if !users.contains(f.user.as_str()) {
                return unknown(format!("fix for unknown user {}", f.user));
            }
            f.payload().map_err(RuntimeError::Validation)?;
        }
        for m in &self.mode_changes {
            if !users.contains(m.user.as_str()) {
                return unknown(format!("mode change for unknown user {}", m.user));
            }
            m.mode.validate()?;
        }
        for m in &self.manual_events {
            if config.device(&m.device).is_none() {
                return unknown(format!("manual event for unknown device {}", m.device));
            }
        }
        Ok(())
    }
}
