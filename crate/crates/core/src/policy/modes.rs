//! Occupant usage modes and the per-site participation table.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::PolicyError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeName {
    Luxury,
    Moderate,
    Frugal,
}

impl ModeName {
    pub const ALL: [ModeName; 3] = [ModeName::Luxury, ModeName::Moderate, ModeName::Frugal];
}

impl fmt::Display for ModeName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModeName::Luxury => "luxury",
            ModeName::Moderate => "moderate",
            ModeName::Frugal => "frugal",
        })
    }
}

/// A user's selected mode: one of the presets, or per-category fractions.
///
/// Categories missing from a custom table participate fully.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum UserMode {
    Preset(ModeName),
    Custom { custom: BTreeMap<String, f64> },
}

impl UserMode {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if let UserMode::Custom { custom } = self {
            for (cat, f) in custom {
                if !(0.0..=1.0).contains(f) {
                    return Err(PolicyError::Validation(format!(
                        "fraction {f} for {cat} outside [0, 1]"
                    )));
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for UserMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UserMode::Preset(m) => m.fmt(f),
            UserMode::Custom { custom } => write!(f, "custom{custom:?}"),
        }
    }
}

/// When a device runs under a mode, for daily estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OnCondition {
    /// All 24 hours.
    Always,
    /// Every hour the occupant is awake, wherever they are (office + home awake).
    ExceptSleeping,
    AtHomeAwake,
    AtOffice,
    Never,
    /// A fixed number of hours per day (`hours` must be set).
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeEntry {
    pub on: OnCondition,
    #[serde(default = "one")]
    pub fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hours: Option<f64>,
}

fn one() -> f64 {
    1.0
}

/// One `(site, category)` row with its three mode entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeRow {
    pub site: String,
    pub category: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub label: String,
    pub luxury: ModeEntry,
    pub moderate: ModeEntry,
    pub frugal: ModeEntry,
}

impl ModeRow {
    pub fn entry(&self, mode: ModeName) -> &ModeEntry {
        match mode {
            ModeName::Luxury => &self.luxury,
            ModeName::Moderate => &self.moderate,
            ModeName::Frugal => &self.frugal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModeTable {
    pub rows: Vec<ModeRow>,
}

impl ModeTable {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let mut seen = std::collections::BTreeSet::new();
        for row in &self.rows {
            if !seen.insert((&row.site, &row.category)) {
                return Err(PolicyError::Config(format!(
                    "duplicate mode row {}/{}",
                    row.site, row.category
                )));
            }
            for mode in ModeName::ALL {
                let e = row.entry(mode);
                if !(0.0..=1.0).contains(&e.fraction) {
                    return Err(PolicyError::Validation(format!(
                        "{}/{} {mode}: fraction {} outside [0, 1]",
                        row.site, row.category, e.fraction
                    )));
                }
                if e.on == OnCondition::Fixed && !e.hours.is_some_and(|h| (0.0..=24.0).contains(&h)) {
                    return Err(PolicyError::Config(format!(
                        "{}/{} {mode}: fixed entries need hours in [0, 24]",
                        row.site, row.category
                    )));
                }
            }
            if !(row.luxury.fraction >= row.moderate.fraction && row.moderate.fraction >= row.frugal.fraction) {
                return Err(PolicyError::Validation(format!(
                    "{}/{}: fractions must order luxury >= moderate >= frugal",
                    row.site, row.category
                )));
            }
        }
        Ok(())
    }

    pub fn row(&self, site: &str, category: &str) -> Option<&ModeRow> {
        self.rows.iter().find(|r| r.site == site && r.category == category)
    }

    /// Participation fraction of a category at a site under a user mode.
    ///
    /// Categories without a row participate fully.
    pub fn fraction(&self, site: &str, category: &str, mode: &UserMode) -> f64 {
        match mode {
            UserMode::Preset(m) => self.row(site, category).map_or(1.0, |r| r.entry(*m).fraction),
            UserMode::Custom { custom } => custom.get(category).copied().unwrap_or(1.0),
        }
    }
}

/// Number of circuits enabled out of `n` for a participation fraction.
pub fn participating_count(fraction: f64, n: usize) -> usize {
    // tolerate 0.6 * 5 = 3.0000000000000004
    let k = (fraction * n as f64 - 1e-9).ceil();
    (k.max(0.0) as usize).min(n)
}
