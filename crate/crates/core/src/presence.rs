//! Geofence presence detection with dual-radius hysteresis and dwell.
//!
//! A fence has an inner `enter_radius_m` and an outer `exit_radius_m`.
//! Fixes closer than the enter radius vote for `Inside`, fixes beyond the exit
//! radius vote for `Outside`, and fixes inside the band between them reset any
//! pending vote. A vote becomes the new state only after `min_dwell_fixes`
//! consecutive supporting fixes.
//!
//! ```text
//!   Inside   |   band (state kept, streak reset)   |   Outside
//! 0 ------ enter ------------------------------- exit ------> d
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geoloc::{haversine_m, LatLon};
use crate::time::Timestamp;

pub const DEFAULT_ENTER_RADIUS_M: f64 = 300.0;
pub const DEFAULT_EXIT_RADIUS_M: f64 = 400.0;
pub const DEFAULT_MIN_DWELL_FIXES: u32 = 3;
/// Peak-to-peak wander of a stationary receiver.
pub const DEFAULT_JITTER_M: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PresenceError {
    #[error("fence {fence}: {reason}")]
    InvalidFence { fence: String, reason: String },
    #[error("stale fix at {at}, last fix was at {last}")]
    StaleFix { at: Timestamp, last: Timestamp },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoFence {
    pub fence_id: String,
    pub center: LatLon,
    pub enter_radius_m: f64,
    pub exit_radius_m: f64,
    pub min_dwell_fixes: u32,
}

impl GeoFence {
    /// Fence with the default 300/400 m radii and a dwell of three fixes.
    pub fn with_defaults(fence_id: impl Into<String>, center: LatLon) -> Self {
        Self {
            fence_id: fence_id.into(),
            center,
            enter_radius_m: DEFAULT_ENTER_RADIUS_M,
            exit_radius_m: DEFAULT_EXIT_RADIUS_M,
            min_dwell_fixes: DEFAULT_MIN_DWELL_FIXES,
        }
    }

    /// Checks radii and dwell, and that the hysteresis band is wider than
    /// twice `jitter_m`.
    pub fn validate(&self, jitter_m: f64) -> Result<(), PresenceError> {
        let fail = |reason: String| {
            Err(PresenceError::InvalidFence {
                fence: self.fence_id.clone(),
                reason,
            })
        };
        if !self.center.is_valid() {
            return fail(format!("center {} out of range", self.center));
        }
        if !(self.enter_radius_m > 0.0) {
            return fail("enter radius must be positive".into());
        }
        if !(self.exit_radius_m > self.enter_radius_m) {
            return fail("exit radius must exceed enter radius".into());
        }
        if self.min_dwell_fixes == 0 {
            return fail("min_dwell_fixes must be at least 1".into());
        }
        let band = self.exit_radius_m - self.enter_radius_m;
        if band <= 2.0 * jitter_m {
            return fail(format!(
                "hysteresis band {band} m must exceed twice the jitter ({jitter_m} m)"
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Zone {
    #[default]
    Unknown,
    Inside,
    Outside,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PresenceState {
    pub state: Zone,
    pub candidate: Option<Zone>,
    pub streak: u32,
    pub last_fix_time: Option<Timestamp>,
}

impl PresenceState {
    /// A machine that already knows which side of the fence the user is on.
    pub fn known(zone: Zone) -> Self {
        Self {
            state: zone,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PresenceKind {
    Enter,
    Exit,
}

impl PresenceKind {
    pub fn zone(self) -> Zone {
        match self {
            PresenceKind::Enter => Zone::Inside,
            PresenceKind::Exit => Zone::Outside,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PresenceEvent {
    pub user: String,
    pub fence_id: String,
    pub kind: PresenceKind,
    pub at: Timestamp,
}

/// A validated, dated fix ready for presence evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedFix {
    pub at: Timestamp,
    pub position: LatLon,
}

pub fn distance_to_fence(position: LatLon, fence: &GeoFence) -> f64 {
    haversine_m(position, fence.center)
}

/// Advances one (user, fence) machine by one fix.
///
/// A fix older than the last accepted one is rejected and the state is left
/// untouched.
pub fn step(
    state: &PresenceState,
    user: &str,
    fence: &GeoFence,
    fix: &TimedFix,
) -> Result<(PresenceState, Option<PresenceEvent>), PresenceError> {
    if let Some(last) = state.last_fix_time {
        if fix.at < last {
            return Err(PresenceError::StaleFix { at: fix.at, last });
        }
    }
    let d = distance_to_fence(fix.position, fence);
    let vote = if d < fence.enter_radius_m {
        Some(Zone::Inside)
    } else if d > fence.exit_radius_m {
        Some(Zone::Outside)
    } else {
        None
    };

    let mut next = PresenceState {
        last_fix_time: Some(fix.at),
        ..state.clone()
    };
    match vote {
        Some(zone) if zone != state.state => {
            next.streak = if state.candidate == Some(zone) {
                state.streak + 1
            } else {
                1
            };
            next.candidate = Some(zone);
        }
        // in-band, or agreeing with the current state
        _ => {
            next.candidate = None;
            next.streak = 0;
        }
    }

    let mut event = None;
    if let Some(zone) = next.candidate {
        if next.streak >= fence.min_dwell_fixes {
            next.state = zone;
            next.candidate = None;
            next.streak = 0;
            event = Some(PresenceEvent {
                user: user.to_string(),
                fence_id: fence.fence_id.clone(),
                kind: if zone == Zone::Inside {
                    PresenceKind::Enter
                } else {
                    PresenceKind::Exit
                },
                at: fix.at,
            });
        }
    }
    Ok((next, event))
}
