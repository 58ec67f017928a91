//! Location-driven energy control for buildings.
//!
//! The crate wires a small pipeline together:
//!
//! ```text
//! NMEA fix -> geofence hysteresis -> realm policies -> device fleet -> energy ledger
//! ```
//!
//! plus an offline toolkit ([`analytics`]) for hourly building meter data
//! (correlations, daily aggregates, linear/polynomial regression, occupancy
//! subsets).
//!
//! Every module is usable on its own. [`runtime`] composes them behind an
//! append-only event log and a small HTTP-style API.

pub mod analytics;
pub mod config;
pub mod devicenet;
pub mod energy;
pub mod geoloc;
pub mod policy;
pub mod presence;
pub mod runtime;
pub mod time;

pub use config::DeploymentConfig;
pub use geoloc::{GeoFix, LatLon};
pub use time::Timestamp;
