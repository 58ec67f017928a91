//! C ABI over the `smartenergy` crate.
//!
//! Every fallible call returns an [`SeStatus`]; on failure the message is
//! available from [`se_last_error_message`] on the same thread. Objects are
//! opaque handles released with their `_free` function. Strings returned by
//! the library are released with [`se_string_free`].

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::{Arc, Mutex};

use smartenergy::devicenet::server::{Clock, LocalLink, SimClock};
use smartenergy::energy::estimate_mode;
use smartenergy::geoloc::{haversine_m, nmea_checksum, parse_nmea, LatLon, NmeaError, ParseOutcome};
use smartenergy::policy::ModeName;
use smartenergy::presence::{self, GeoFence, PresenceKind, PresenceState, TimedFix, Zone};
use smartenergy::runtime::{ApiRequest, MemoryStore, Runtime, Service};
use smartenergy::{DeploymentConfig, Timestamp};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    ChecksumMismatch = 3,
    FormatError = 4,
    VoidFix = 5,
    Unsupported = 6,
    StaleFix = 7,
    InvalidArgument = 8,
    ConfigError = 9,
    RuntimeError = 10,
    Panic = 11,
}

/// Zone codes used by the presence calls.
pub const SE_ZONE_UNKNOWN: i32 = 0;
pub const SE_ZONE_INSIDE: i32 = 1;
pub const SE_ZONE_OUTSIDE: i32 = 2;

/// Event codes written by [`se_presence_step`].
pub const SE_EVENT_NONE: i32 = 0;
pub const SE_EVENT_ENTER: i32 = 1;
pub const SE_EVENT_EXIT: i32 = 2;

/// A decoded position sentence. Coordinates are only meaningful when
/// `has_position` is true.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct SeFix {
    pub time_of_day: u32,
    pub latitude: f64,
    pub longitude: f64,
    pub has_position: bool,
}

/// One geofence and its hysteresis state.
pub struct SePresence {
    fence: GeoFence,
    state: PresenceState,
}

/// A runtime with an in-process fleet and an in-memory event log, driven
/// through the JSON API on a caller-controlled clock.
pub struct SeRuntime {
    service: Service,
    clock: SimClock,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn fail(status: SeStatus, msg: impl Into<String>) -> SeStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> SeStatus) -> SeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == SeStatus::Ok {
                set_error("");
            }
            s
        }
        Err(_) => fail(SeStatus::Panic, "internal panic"),
    }
}

/// # Safety
/// `p` must be null or a valid NUL-terminated string.
unsafe fn read_str<'a>(p: *const c_char) -> Result<&'a str, SeStatus> {
    if p.is_null() {
        return Err(fail(SeStatus::NullArgument, "null string argument"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(SeStatus::InvalidUtf8, "argument is not UTF-8"))
}

fn zone_from_code(code: i32) -> Option<Zone> {
    match code {
        SE_ZONE_UNKNOWN => Some(Zone::Unknown),
        SE_ZONE_INSIDE => Some(Zone::Inside),
        SE_ZONE_OUTSIDE => Some(Zone::Outside),
        _ => None,
    }
}

fn zone_code(zone: Zone) -> i32 {
    match zone {
        Zone::Unknown => SE_ZONE_UNKNOWN,
        Zone::Inside => SE_ZONE_INSIDE,
        Zone::Outside => SE_ZONE_OUTSIDE,
    }
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn se_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn se_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// XOR checksum of the bytes between `$` and `*`.
///
/// # Safety
/// `body` must be a valid NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn se_nmea_checksum(body: *const c_char, out: *mut u8) -> SeStatus {
    guard(|| {
        if out.is_null() {
            return fail(SeStatus::NullArgument, "null output");
        }
        let body = match read_str(body) {
            Ok(b) => b,
            Err(s) => return s,
        };
        match u8::from_str_radix(&nmea_checksum(body.as_bytes()), 16) {
            Ok(v) => {
                *out = v;
                SeStatus::Ok
            }
            Err(e) => fail(SeStatus::FormatError, e.to_string()),
        }
    })
}

/// Parses a GGA or RMC sentence.
///
/// # Safety
/// `line` must be a valid NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn se_nmea_parse(line: *const c_char, out: *mut SeFix) -> SeStatus {
    guard(|| {
        if out.is_null() {
            return fail(SeStatus::NullArgument, "null output");
        }
        let line = match read_str(line) {
            Ok(l) => l,
            Err(s) => return s,
        };
        match parse_nmea(line) {
            Ok(ParseOutcome::Fix(fix)) => {
                let pos = fix.position();
                *out = SeFix {
                    time_of_day: fix.time_of_day,
                    latitude: pos.map_or(0.0, |p| p.lat),
                    longitude: pos.map_or(0.0, |p| p.lon),
                    has_position: pos.is_some(),
                };
                SeStatus::Ok
            }
            Ok(ParseOutcome::Unsupported(kind)) => fail(SeStatus::Unsupported, format!("unsupported sentence {kind}")),
            Err(e @ NmeaError::ChecksumMismatch { .. }) => fail(SeStatus::ChecksumMismatch, e.to_string()),
            Err(e @ NmeaError::VoidFix) => fail(SeStatus::VoidFix, e.to_string()),
            Err(e) => fail(SeStatus::FormatError, e.to_string()),
        }
    })
}

/// Great-circle distance in meters.
#[no_mangle]
pub extern "C" fn se_haversine_m(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    haversine_m(LatLon::new(lat1, lon1), LatLon::new(lat2, lon2))
}

/// Creates a fence centred on (`lat`, `lon`) with a known starting zone.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn se_presence_new(
    lat: f64,
    lon: f64,
    enter_radius_m: f64,
    exit_radius_m: f64,
    min_dwell_fixes: u32,
    initial_zone: i32,
    out: *mut *mut SePresence,
) -> SeStatus {
    guard(|| {
        if out.is_null() {
            return fail(SeStatus::NullArgument, "null output");
        }
        let Some(zone) = zone_from_code(initial_zone) else {
            return fail(SeStatus::InvalidArgument, format!("bad zone code {initial_zone}"));
        };
        let fence = GeoFence {
            fence_id: "fence".into(),
            center: LatLon::new(lat, lon),
            enter_radius_m,
            exit_radius_m,
            min_dwell_fixes,
        };
        if let Err(e) = fence.validate(0.0) {
            return fail(SeStatus::InvalidArgument, e.to_string());
        }
        let state = if zone == Zone::Unknown {
            PresenceState::default()
        } else {
            PresenceState::known(zone)
        };
        *out = Box::into_raw(Box::new(SePresence { fence, state }));
        SeStatus::Ok
    })
}

/// Feeds one fix taken at `t` (seconds). Writes an `SE_EVENT_*` code.
///
/// # Safety
/// `handle` must come from [`se_presence_new`]; `event` must be writable.
#[no_mangle]
pub unsafe extern "C" fn se_presence_step(
    handle: *mut SePresence,
    t: i64,
    lat: f64,
    lon: f64,
    event: *mut i32,
) -> SeStatus {
    guard(|| {
        if handle.is_null() || event.is_null() {
            return fail(SeStatus::NullArgument, "null argument");
        }
        let p = &mut *handle;
        let fix = TimedFix {
            at: Timestamp(t),
            position: LatLon::new(lat, lon),
        };
        match presence::step(&p.state, "user", &p.fence, &fix) {
            Ok((next, ev)) => {
                p.state = next;
                *event = match ev.map(|e| e.kind) {
                    None => SE_EVENT_NONE,
                    Some(PresenceKind::Enter) => SE_EVENT_ENTER,
                    Some(PresenceKind::Exit) => SE_EVENT_EXIT,
                };
                SeStatus::Ok
            }
            Err(e) => fail(SeStatus::StaleFix, e.to_string()),
        }
    })
}

/// Current `SE_ZONE_*` code, or -1 for a null handle.
///
/// # Safety
/// `handle` must be null or come from [`se_presence_new`].
#[no_mangle]
pub unsafe extern "C" fn se_presence_zone(handle: *const SePresence) -> i32 {
    if handle.is_null() {
        return -1;
    }
    zone_code((*handle).state.state)
}

/// # Safety
/// `handle` must be null or come from [`se_presence_new`], freed once.
#[no_mangle]
pub unsafe extern "C" fn se_presence_free(handle: *mut SePresence) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

unsafe fn load_config(config_toml: *const c_char) -> Result<DeploymentConfig, SeStatus> {
    if config_toml.is_null() {
        return Ok(DeploymentConfig::bundled());
    }
    let text = read_str(config_toml)?;
    DeploymentConfig::from_toml_str(text).map_err(|e| fail(SeStatus::ConfigError, e.to_string()))
}

/// Daily kWh estimate for a site under `mode` ("luxury", "moderate",
/// "frugal"). A null `config_toml` uses the bundled deployment.
///
/// # Safety
/// String arguments must be null-terminated; `out_kwh` writable.
#[no_mangle]
pub unsafe extern "C" fn se_estimate_mode(
    config_toml: *const c_char,
    site: *const c_char,
    mode: *const c_char,
    out_kwh: *mut f64,
) -> SeStatus {
    guard(|| {
        if out_kwh.is_null() {
            return fail(SeStatus::NullArgument, "null output");
        }
        let (cfg, site, mode) = match (load_config(config_toml), read_str(site), read_str(mode)) {
            (Ok(c), Ok(s), Ok(m)) => (c, s, m),
            (Err(e), _, _) | (_, Err(e), _) | (_, _, Err(e)) => return e,
        };
        let mode = match mode {
            "luxury" => ModeName::Luxury,
            "moderate" => ModeName::Moderate,
            "frugal" => ModeName::Frugal,
            other => return fail(SeStatus::InvalidArgument, format!("unknown mode {other:?}")),
        };
        let fleet = match cfg.build_fleet(Timestamp::ZERO) {
            Ok(f) => f,
            Err(e) => return fail(SeStatus::ConfigError, e.to_string()),
        };
        let categories: BTreeMap<String, String> =
            cfg.devices.iter().map(|d| (d.id.clone(), d.category.clone())).collect();
        match estimate_mode(site, mode, &cfg.schedule, &fleet, &categories, &cfg.mode_table) {
            Ok(e) => {
                *out_kwh = e.total_kwh;
                SeStatus::Ok
            }
            Err(e) => fail(SeStatus::ConfigError, e.to_string()),
        }
    })
}

/// Builds a runtime whose clock starts at `start` (seconds).
///
/// # Safety
/// `config_toml` must be null or NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn se_runtime_new(config_toml: *const c_char, start: i64, out: *mut *mut SeRuntime) -> SeStatus {
    guard(|| {
        if out.is_null() {
            return fail(SeStatus::NullArgument, "null output");
        }
        let cfg = match load_config(config_toml) {
            Ok(c) => c,
            Err(s) => return s,
        };
        let start = Timestamp(start);
        let fleet = match cfg.build_fleet(start) {
            Ok(f) => Arc::new(Mutex::new(f)),
            Err(e) => return fail(SeStatus::ConfigError, e.to_string()),
        };
        let runtime = match Runtime::new(cfg, start, Box::new(LocalLink(fleet)), Box::new(MemoryStore::default())) {
            Ok(r) => r,
            Err(e) => return fail(SeStatus::RuntimeError, e.to_string()),
        };
        let clock = SimClock::new(start);
        let service = Service::new(runtime, Arc::new(clock.clone()) as Arc<dyn Clock>);
        *out = Box::into_raw(Box::new(SeRuntime { service, clock }));
        SeStatus::Ok
    })
}

/// Moves the runtime clock to `t` seconds.
///
/// # Safety
/// `handle` must come from [`se_runtime_new`].
#[no_mangle]
pub unsafe extern "C" fn se_runtime_set_time(handle: *mut SeRuntime, t: i64) -> SeStatus {
    guard(|| {
        if handle.is_null() {
            return fail(SeStatus::NullArgument, "null handle");
        }
        (*handle).clock.set(Timestamp(t));
        SeStatus::Ok
    })
}

/// Sends one API request. On `SE_STATUS_OK` the HTTP-style status is in
/// `out_status` and the JSON body in `out_json` (free with [`se_string_free`]).
/// `body` may be null for requests without one.
///
/// # Safety
/// `handle` must come from [`se_runtime_new`]; strings NUL-terminated;
/// outputs writable.
#[no_mangle]
pub unsafe extern "C" fn se_runtime_api(
    handle: *mut SeRuntime,
    method: *const c_char,
    path: *const c_char,
    body: *const c_char,
    out_status: *mut u16,
    out_json: *mut *mut c_char,
) -> SeStatus {
    guard(|| {
        if handle.is_null() || out_status.is_null() || out_json.is_null() {
            return fail(SeStatus::NullArgument, "null argument");
        }
        let (method, path) = match (read_str(method), read_str(path)) {
            (Ok(m), Ok(p)) => (m, p),
            (Err(e), _) | (_, Err(e)) => return e,
        };
        let body = if body.is_null() {
            ""
        } else {
            match read_str(body) {
                Ok(b) => b,
                Err(e) => return e,
            }
        };
        let mut req = ApiRequest::new(method, path, body);
        req.token = (*handle).service.runtime().config().api_token.clone();
        let resp = (*handle).service.dispatch(&req);
        *out_status = resp.status;
        *out_json = CString::new(resp.body.to_string()).map_or(ptr::null_mut(), CString::into_raw);
        SeStatus::Ok
    })
}

/// # Safety
/// `handle` must be null or come from [`se_runtime_new`], freed once.
#[no_mangle]
pub unsafe extern "C" fn se_runtime_free(handle: *mut SeRuntime) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}
