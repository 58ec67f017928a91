//! Deployment configuration: fences, realms, devices, user bindings, rules
//! and the per-mode participation table. Stored as TOML.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::devicenet::{Device, DeviceError, Fleet, PowerProfile, PowerState};
use crate::energy::UsageSchedule;
use crate::geoloc::LatLon;
use crate::policy::{ModeTable, PolicyRule, UserMode};
use crate::presence::{GeoFence, PresenceError, Zone, DEFAULT_JITTER_M};
use crate::time::Timestamp;

/// The deployment configuration bundled with the crate (two buildings, one occupant).
pub const BUNDLED_CONFIG: &str = include_str!("../data/deployment.toml");

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parsing configuration: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Fence(#[from] PresenceError),
    #[error(transparent)]
    Device(#[from] DeviceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Control {
    /// Switched by location policies.
    #[default]
    Policy,
    /// Switched only by the occupant (scenario events or the API).
    Manual,
    /// Never switched remotely; SET is refused.
    Exempt,
}

fn default_enter() -> f64 {
    crate::presence::DEFAULT_ENTER_RADIUS_M
}
fn default_exit() -> f64 {
    crate::presence::DEFAULT_EXIT_RADIUS_M
}
fn default_dwell() -> u32 {
    crate::presence::DEFAULT_MIN_DWELL_FIXES
}
fn default_jitter() -> f64 {
    DEFAULT_JITTER_M
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FenceConfig {
    pub id: String,
    pub center: LatLon,
    #[serde(default = "default_enter")]
    pub enter_radius_m: f64,
    #[serde(default = "default_exit")]
    pub exit_radius_m: f64,
    #[serde(default = "default_dwell")]
    pub min_dwell_fixes: u32,
}

impl FenceConfig {
    pub fn to_fence(&self) -> GeoFence {
        GeoFence {
            fence_id: self.id.clone(),
            center: self.center,
            enter_radius_m: self.enter_radius_m,
            exit_radius_m: self.exit_radius_m,
            min_dwell_fixes: self.min_dwell_fixes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealmConfig {
    pub id: String,
    #[serde(default)]
    pub parent: Option<String>,
    #[serde(default)]
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceConfig {
    pub id: String,
    #[serde(default)]
    pub name: String,
    /// Fence id of the building.
    pub building: String,
    /// Realm the device is administered in (usually a user realm).
    pub realm: String,
    /// Row key into the mode table (`lighting`, `laptop`, ...).
    pub category: String,
    #[serde(default)]
    pub control: Control,
    #[serde(default = "default_initial")]
    pub initial: PowerState,
    pub profile: PowerProfile,
}

fn default_initial() -> PowerState {
    PowerState::Off
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteBindingConfig {
    pub fence: String,
    /// The user's own realm inside this building; mode rules are placed here.
    pub realm: String,
    pub devices: Vec<String>,
    /// Presence state assumed before the first confirmed fix.
    #[serde(default = "default_zone")]
    pub initial: Zone,
}

fn default_zone() -> Zone {
    Zone::Unknown
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserConfig {
    pub id: String,
    pub mode: UserMode,
    pub sites: Vec<SiteBindingConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeploymentConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default = "default_jitter")]
    pub jitter_m: f64,
    #[serde(default)]
    pub schedule: UsageSchedule,
    /// Optional shared token for the HTTP API.
    #[serde(default)]
    pub api_token: Option<String>,
    pub fences: Vec<FenceConfig>,
    pub realms: Vec<RealmConfig>,
    pub devices: Vec<DeviceConfig>,
    pub users: Vec<UserConfig>,
    #[serde(default)]
    pub rules: Vec<PolicyRule>,
    pub mode_table: ModeTable,
}

impl DeploymentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: DeploymentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn bundled() -> Self {
        Self::from_toml_str(BUNDLED_CONFIG).expect("bundled configuration is valid")
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serializes")
    }

    /// Structural checks that do not need the policy engine. Rule-level checks
    /// happen when the engine is built (see [`crate::policy::PolicyEngine::new`]).
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        let mut fence_ids = BTreeSet::new();
        for f in &self.fences {
            f.to_fence().validate(self.jitter_m)?;
            if !fence_ids.insert(f.id.as_str()) {
                return invalid(format!("duplicate fence {}", f.id));
            }
        }
        let mut device_ids = BTreeSet::new();
        for d in &self.devices {
            d.profile.validate()?;
            if d.id.is_empty() || d.id.contains(char::is_whitespace) {
                return invalid(format!("device id {:?} must be non-empty without whitespace", d.id));
            }
            if !device_ids.insert(d.id.as_str()) {
                return invalid(format!("duplicate device {}", d.id));
            }
            if !fence_ids.contains(d.building.as_str()) {
                return invalid(format!("device {} sits in undeclared building {}", d.id, d.building));
            }
        }
        let mut user_ids = BTreeSet::new();
        for u in &self.users {
            if !user_ids.insert(u.id.as_str()) {
                return invalid(format!("duplicate user {}", u.id));
            }
            let mut seen_fences = BTreeSet::new();
            for s in &u.sites {
                if !fence_ids.contains(s.fence.as_str()) {
                    return invalid(format!("user {} bound to undeclared fence {}", u.id, s.fence));
                }
                if !seen_fences.insert(s.fence.as_str()) {
                    return invalid(format!("user {} bound twice to fence {}", u.id, s.fence));
                }
                for d in &s.devices {
                    if !device_ids.contains(d.as_str()) {
                        return invalid(format!("user {} bound to unknown device {d}", u.id));
                    }
                }
            }
        }
        self.schedule
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.mode_table
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn fences(&self) -> BTreeMap<String, GeoFence> {
        self.fences.iter().map(|f| (f.id.clone(), f.to_fence())).collect()
    }

    pub fn device(&self, id: &str) -> Option<&DeviceConfig> {
        self.devices.iter().find(|d| d.id == id)
    }

    /// Fleet in its configured initial state, with metering starting at `start`.
    pub fn build_fleet(&self, start: Timestamp) -> Result<Fleet, ConfigError> {
        let devices = self
            .devices
            .iter()
            .map(|d| {
                Device::new(
                    d.id.clone(),
                    if d.name.is_empty() {
                        d.id.clone()
                    } else {
                        d.name.clone()
                    },
                    d.building.clone(),
                    d.control == Control::Exempt,
                    d.profile.clone(),
                    d.initial,
                    start,
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Fleet::new(devices))
    }
}
