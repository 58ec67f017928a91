//! Simulated appliance fleet: power models, state history and metering.
//!
//! The fleet stands in for switched outlets with inline power meters. It is
//! driven through a line protocol (see [`protocol`]) which [`server`] exposes
//! over TCP.

pub mod protocol;
pub mod server;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::Timestamp;

pub use protocol::handle_command;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DeviceError {
    #[error("unknown device {0}")]
    Unknown(String),
    #[error("device {0} is exempt from control")]
    Exempt(String),
    #[error("device {device}: window starts at {requested}, history begins at {history_start}")]
    HistoryGap {
        device: String,
        requested: Timestamp,
        history_start: Timestamp,
    },
    #[error("device {device}: state change at {at} precedes last change at {last}")]
    OutOfOrder {
        device: String,
        at: Timestamp,
        last: Timestamp,
    },
    #[error("invalid window [{0}, {1}]")]
    InvalidWindow(Timestamp, Timestamp),
    #[error("invalid power profile: {0}")]
    InvalidProfile(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PowerState {
    On,
    Off,
}

impl PowerState {
    pub fn as_wire(self) -> &'static str {
        match self {
            PowerState::On => "ON",
            PowerState::Off => "OFF",
        }
    }
}

impl fmt::Display for PowerState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_wire())
    }
}

impl FromStr for PowerState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ON" | "on" | "On" => Ok(PowerState::On),
            "OFF" | "off" | "Off" => Ok(PowerState::Off),
            other => Err(format!("expected on/off, got {other:?}")),
        }
    }
}

/// Wattage model of an appliance while switched on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PowerProfile {
    Constant {
        watts: f64,
    },
    /// Averages a normal and an active level by the fraction of time active.
    TwoLevel {
        normal_watts: f64,
        active_watts: f64,
        #[serde(default = "default_active_fraction")]
        active_fraction: f64,
    },
    /// Alternates `on_minutes` at `on_watts` with `off_minutes` at zero,
    /// phase-anchored at the last switch-on.
    DutyCycle {
        on_watts: f64,
        on_minutes: f64,
        off_minutes: f64,
    },
}

fn default_active_fraction() -> f64 {
    0.5
}

impl PowerProfile {
    pub fn validate(&self) -> Result<(), DeviceError> {
        let bad = |m: &str| Err(DeviceError::InvalidProfile(m.to_string()));
        let nonneg = |w: f64| w.is_finite() && w >= 0.0;
        match *self {
            PowerProfile::Constant { watts } if !nonneg(watts) => bad("watts must be >= 0"),
            PowerProfile::TwoLevel {
                normal_watts,
                active_watts,
                active_fraction,
            } => {
                if !nonneg(normal_watts) || !nonneg(active_watts) {
                    bad("watts must be >= 0")
                } else if !(0.0..=1.0).contains(&active_fraction) {
                    bad("active_fraction must be in [0, 1]")
                } else {
                    Ok(())
                }
            }
            PowerProfile::DutyCycle {
                on_watts,
                on_minutes,
                off_minutes,
            } => {
                if !nonneg(on_watts) {
                    bad("watts must be >= 0")
                } else if !(on_minutes > 0.0 && off_minutes > 0.0)
                    || !on_minutes.is_finite()
                    || !off_minutes.is_finite()
                {
                    bad("duty minutes must be > 0")
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Long-run average draw while on.
    pub fn average_watts(&self) -> f64 {
        match *self {
            PowerProfile::Constant { watts } => watts,
            PowerProfile::TwoLevel {
                normal_watts,
                active_watts,
                active_fraction,
            } => normal_watts + active_fraction * (active_watts - normal_watts),
            PowerProfile::DutyCycle {
                on_watts,
                on_minutes,
                off_minutes,
            } => on_watts * on_minutes / (on_minutes + off_minutes),
        }
    }

    /// Instantaneous draw `elapsed_s` seconds after switch-on.
    fn watts_after(&self, elapsed_s: f64) -> f64 {
        match *self {
            PowerProfile::DutyCycle {
                on_watts,
                on_minutes,
                off_minutes,
            } => {
                let period = (on_minutes + off_minutes) * 60.0;
                if elapsed_s.rem_euclid(period) < on_minutes * 60.0 {
                    on_watts
                } else {
                    0.0
                }
            }
            _ => self.average_watts(),
        }
    }

    /// Watt-hours drawn between `from_s` and `to_s` seconds after switch-on.
    fn energy_wh(&self, from_s: f64, to_s: f64) -> f64 {
        match *self {
            PowerProfile::DutyCycle {
                on_watts,
                on_minutes,
                off_minutes,
            } => {
                let on_s = on_minutes * 60.0;
                let period = on_s + off_minutes * 60.0;
                // seconds of compressor-on time in [0, x)
                let on_time = |x: f64| {
                    let cycles = (x / period).floor();
                    cycles * on_s + (x - cycles * period).min(on_s)
                };
                on_watts * (on_time(to_s) - on_time(from_s)) / 3600.0
            }
            _ => self.average_watts() * (to_s - from_s) / 3600.0,
        }
    }
}

/// One simulated appliance and its switching history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Device {
    pub device_id: String,
    pub name: String,
    /// Fence id of the building the device sits in.
    pub building: String,
    pub exempt: bool,
    pub profile: PowerProfile,
    pub state: PowerState,
    pub state_since: Timestamp,
    /// `(time, state)` transitions; the first entry is the start of metering.
    pub history: Vec<(Timestamp, PowerState)>,
}

impl Device {
    pub fn new(
        device_id: impl Into<String>,
        name: impl Into<String>,
        building: impl Into<String>,
        exempt: bool,
        profile: PowerProfile,
        initial: PowerState,
        since: Timestamp,
    ) -> Result<Self, DeviceError> {
        profile.validate()?;
        Ok(Self {
            device_id: device_id.into(),
            name: name.into(),
            building: building.into(),
            exempt,
            profile,
            state: initial,
            state_since: since,
            history: vec![(since, initial)],
        })
    }

    pub fn history_start(&self) -> Timestamp {
        self.history[0].0
    }

    fn state_at(&self, t: Timestamp) -> (PowerState, Timestamp) {
        let idx = self.history.partition_point(|(ts, _)| *ts <= t);
        let (since, state) = self.history[idx.saturating_sub(1)];
        (state, since)
    }

    /// Records a transition; returns whether the state actually changed.
    fn record(&mut self, state: PowerState, at: Timestamp) -> Result<bool, DeviceError> {
        if state == self.state {
            return Ok(false);
        }
        if at < self.state_since {
            return Err(DeviceError::OutOfOrder {
                device: self.device_id.clone(),
                at,
                last: self.state_since,
            });
        }
        // collapse same-instant flips so each timestamp has one entry
        if let Some(last) = self.history.last_mut() {
            if last.0 == at && self.history.len() > 1 {
                self.history.pop();
                let prev = self.history.last().map(|h| h.1);
                if prev == Some(state) {
                    self.state = state;
                    self.state_since = self.history.last().map(|h| h.0).unwrap_or(at);
                    return Ok(true);
                }
            }
        }
        self.history.push((at, state));
        self.state = state;
        self.state_since = at;
        Ok(true)
    }

    /// Instantaneous draw at `t`.
    pub fn power_at(&self, t: Timestamp) -> f64 {
        let (state, since) = self.state_at(t);
        match state {
            PowerState::Off => 0.0,
            PowerState::On => self.profile.watts_after((t.0 - since.0) as f64),
        }
    }

    /// Integrated energy over `[t0, t1]` in watt-hours.
    pub fn meter_read(&self, t0: Timestamp, t1: Timestamp) -> Result<f64, DeviceError> {
        if t1 < t0 {
            return Err(DeviceError::InvalidWindow(t0, t1));
        }
        if t0 < self.history_start() {
            return Err(DeviceError::HistoryGap {
                device: self.device_id.clone(),
                requested: t0,
                history_start: self.history_start(),
            });
        }
        let mut wh = 0.0;
        for (i, &(since, state)) in self.history.iter().enumerate() {
            let until = self.history.get(i + 1).map(|h| h.0);
            if state == PowerState::Off {
                continue;
            }
            let a = since.max(t0);
            let b = until.map_or(t1, |u| u.min(t1));
            if b <= a {
                continue;
            }
            wh += self.profile.energy_wh((a.0 - since.0) as f64, (b.0 - since.0) as f64);
        }
        Ok(wh)
    }
}

/// All simulated devices, keyed by id.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Fleet {
    devices: BTreeMap<String, Device>,
}

impl Fleet {
    pub fn new(devices: impl IntoIterator<Item = Device>) -> Self {
        Self {
            devices: devices.into_iter().map(|d| (d.device_id.clone(), d)).collect(),
        }
    }

    pub fn get(&self, id: &str) -> Result<&Device, DeviceError> {
        self.devices.get(id).ok_or_else(|| DeviceError::Unknown(id.to_string()))
    }

    pub fn devices(&self) -> impl Iterator<Item = &Device> {
        self.devices.values()
    }

    pub fn len(&self) -> usize {
        self.devices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.devices.is_empty()
    }

    /// A control request; exempt devices refuse and stay unchanged.
    pub fn set_state(&mut self, id: &str, state: PowerState, at: Timestamp) -> Result<bool, DeviceError> {
        let dev = self
            .devices
            .get_mut(id)
            .ok_or_else(|| DeviceError::Unknown(id.to_string()))?;
        if dev.exempt {
            return Err(DeviceError::Exempt(id.to_string()));
        }
        dev.record(state, at)
    }

    /// Applies an already-acknowledged transition (used when mirroring replies
    /// and replaying logs), bypassing the exemption check.
    pub fn apply_state(&mut self, id: &str, state: PowerState, at: Timestamp) -> Result<bool, DeviceError> {
        self.devices
            .get_mut(id)
            .ok_or_else(|| DeviceError::Unknown(id.to_string()))?
            .record(state, at)
    }

    pub fn power_at(&self, id: &str, t: Timestamp) -> Result<f64, DeviceError> {
        Ok(self.get(id)?.power_at(t))
    }

    pub fn meter_read(&self, id: &str, t0: Timestamp, t1: Timestamp) -> Result<f64, DeviceError> {
        self.get(id)?.meter_read(t0, t1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HOUR: i64 = 3600;

    fn lights() -> Device {
        Device::new(
            "lamp1",
            "Lights",
            "home",
            false,
            PowerProfile::Constant { watts: 550.0 },
            PowerState::Off,
            Timestamp::ZERO,
        )
        .unwrap()
    }

    fn fridge() -> Device {
        Device::new(
            "fridge1",
            "Refrigerator",
            "home",
            true,
            PowerProfile::DutyCycle {
                on_watts: 185.0,
                on_minutes: 9.0,
                off_minutes: 9.0,
            },
            PowerState::On,
            Timestamp::ZERO,
        )
        .unwrap()
    }

    #[test]
    fn power_examples() {
        let mut l = lights();
        assert_eq!(l.power_at(Timestamp(10)), 0.0);
        l.record(PowerState::On, Timestamp(0)).unwrap();
        assert_eq!(l.power_at(Timestamp(10)), 550.0);
        let f = fridge();
        assert_eq!(f.power_at(Timestamp(0)), 185.0);
        assert_eq!(f.power_at(Timestamp(9 * 60)), 0.0);
        assert_eq!(f.profile.average_watts(), 92.5);
        let cycle_avg = f.meter_read(Timestamp(0), Timestamp(18 * 60)).unwrap() / 0.3;
        assert!((cycle_avg - 92.5).abs() < 1e-9);
        // any whole cycle, not only phase-aligned ones
        let shifted = f.meter_read(Timestamp(300), Timestamp(300 + 18 * 60)).unwrap() / 0.3;
        assert!((shifted - 92.5).abs() < 1e-9);
    }

    #[test]
    fn two_level_average() {
        let p = PowerProfile::TwoLevel {
            normal_watts: 41.0,
            active_watts: 60.0,
            active_fraction: 0.5,
        };
        assert_eq!(p.average_watts(), 50.5);
    }

    #[test]
    fn meter_examples() {
        let mut l = lights();
        l.record(PowerState::On, Timestamp(0)).unwrap();
        l.record(PowerState::Off, Timestamp(16 * HOUR)).unwrap();
        assert!((l.meter_read(Timestamp(0), Timestamp(24 * HOUR)).unwrap() - 8800.0).abs() < 1e-9);
        let f = fridge();
        assert!((f.meter_read(Timestamp(0), Timestamp(24 * HOUR)).unwrap() - 2220.0).abs() < 1e-9);
        assert_eq!(f.meter_read(Timestamp(5), Timestamp(5)).unwrap(), 0.0);
    }

    #[test]
    fn meter_errors() {
        let l = Device::new(
            "x",
            "x",
            "home",
            false,
            PowerProfile::Constant { watts: 1.0 },
            PowerState::On,
            Timestamp(100),
        )
        .unwrap();
        assert!(matches!(
            l.meter_read(Timestamp(50), Timestamp(200)),
            Err(DeviceError::HistoryGap { .. })
        ));
        assert!(matches!(
            l.meter_read(Timestamp(200), Timestamp(150)),
            Err(DeviceError::InvalidWindow(..))
        ));
    }

    #[test]
    fn exempt_refuses_set() {
        let mut fleet = Fleet::new([lights(), fridge()]);
        assert_eq!(
            fleet.set_state("fridge1", PowerState::Off, Timestamp(5)),
            Err(DeviceError::Exempt("fridge1".into()))
        );
        assert_eq!(fleet.get("fridge1").unwrap().state, PowerState::On);
        assert_eq!(fleet.set_state("lamp1", PowerState::On, Timestamp(5)), Ok(true));
        assert_eq!(fleet.set_state("lamp1", PowerState::On, Timestamp(6)), Ok(false));
        assert!(matches!(
            fleet.set_state("nosuch", PowerState::On, Timestamp(6)),
            Err(DeviceError::Unknown(_))
        ));
    }

    #[test]
    fn same_instant_flip_collapses() {
        let mut l = lights();
        l.record(PowerState::On, Timestamp(10)).unwrap();
        l.record(PowerState::Off, Timestamp(10)).unwrap();
        assert_eq!(l.history, vec![(Timestamp(0), PowerState::Off)]);
        assert_eq!(l.state_since, Timestamp(0));
    }

    #[test]
    fn bad_profiles_rejected() {
        assert!(PowerProfile::Constant { watts: -1.0 }.validate().is_err());
        assert!(PowerProfile::DutyCycle {
            on_watts: 1.0,
            on_minutes: 0.0,
            off_minutes: 1.0
        }
        .validate()
        .is_err());
        assert!(PowerProfile::TwoLevel {
            normal_watts: 1.0,
            active_watts: 2.0,
            active_fraction: 1.5
        }
        .validate()
        .is_err());
    }
}
