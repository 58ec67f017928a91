//! Line protocol spoken by the device fleet.
//!
//! Requests and replies are single space-delimited lines:
//!
//! ```text
//! GET <id>          -> STATE <id> ON|OFF
//! SET <id> ON|OFF   -> OK <id> ON|OFF | ERR <id> EXEMPT | ERR <id> UNKNOWN
//! POWER <id>        -> POWER <id> <watts>
//! LIST              -> DEVICES <n>, then n lines DEVICE <id> ON|OFF 0|1
//! anything else     -> ERR - BADCMD
//! ```

use crate::time::Timestamp;

use super::{DeviceError, Fleet, PowerState};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Request {
    Get(String),
    Set(String, PowerState),
    Power(String),
    List,
}

/// A parsed reply. `List` carries `(id, state, exempt)` rows.
#[derive(Debug, Clone, PartialEq)]
pub enum Reply {
    State(String, PowerState),
    Ok(String, PowerState),
    Power(String, f64),
    Devices(Vec<(String, PowerState, bool)>),
    Exempt(String),
    Unknown(String),
    BadCommand,
}

fn parse_state(tok: &str) -> Option<PowerState> {
    match tok {
        "ON" => Some(PowerState::On),
        "OFF" => Some(PowerState::Off),
        _ => None,
    }
}

pub fn parse_request(line: &str) -> Option<Request> {
    let line = line.strip_suffix('\n').unwrap_or(line);
    let line = line.strip_suffix('\r').unwrap_or(line);
    let toks: Vec<&str> = line.split(' ').collect();
    if toks.iter().any(|t| t.is_empty()) {
        return None;
    }
    match toks.as_slice() {
        ["GET", id] => Some(Request::Get(id.to_string())),
        ["SET", id, s] => parse_state(s).map(|s| Request::Set(id.to_string(), s)),
        ["POWER", id] => Some(Request::Power(id.to_string())),
        ["LIST"] => Some(Request::List),
        _ => None,
    }
}

impl Request {
    pub fn to_line(&self) -> String {
        match self {
            Request::Get(id) => format!("GET {id}"),
            Request::Set(id, s) => format!("SET {id} {s}"),
            Request::Power(id) => format!("POWER {id}"),
            Request::List => "LIST".to_string(),
        }
    }
}

impl Reply {
    /// Wire form; `Devices` spans `n + 1` lines joined by `\n`.
    pub fn to_wire(&self) -> String {
        match self {
            Reply::State(id, s) => format!("STATE {id} {s}"),
            Reply::Ok(id, s) => format!("OK {id} {s}"),
            Reply::Power(id, w) => format!("POWER {id} {w}"),
            Reply::Devices(rows) => {
                let mut out = format!("DEVICES {}", rows.len());
                for (id, s, exempt) in rows {
                    out.push_str(&format!("\nDEVICE {id} {s} {}", u8::from(*exempt)));
                }
                out
            }
            Reply::Exempt(id) => format!("ERR {id} EXEMPT"),
            Reply::Unknown(id) => format!("ERR {id} UNKNOWN"),
            Reply::BadCommand => "ERR - BADCMD".to_string(),
        }
    }

    /// Parses the first line of a reply. For `DEVICES <n>` the caller supplies
    /// the remaining lines through `rest`.
    pub fn parse(first: &str, rest: &[String]) -> Option<Reply> {
        let toks: Vec<&str> = first.split(' ').collect();
        match toks.as_slice() {
            ["STATE", id, s] => parse_state(s).map(|s| Reply::State(id.to_string(), s)),
            ["OK", id, s] => parse_state(s).map(|s| Reply::Ok(id.to_string(), s)),
            ["POWER", id, w] => w.parse().ok().map(|w| Reply::Power(id.to_string(), w)),
            ["ERR", "-", "BADCMD"] => Some(Reply::BadCommand),
            ["ERR", id, "EXEMPT"] => Some(Reply::Exempt(id.to_string())),
            ["ERR", id, "UNKNOWN"] => Some(Reply::Unknown(id.to_string())),
            ["DEVICES", n] => {
                let n: usize = n.parse().ok()?;
                if rest.len() != n {
                    return None;
                }
                let rows = rest
                    .iter()
                    .map(|line| {
                        let t: Vec<&str> = line.split(' ').collect();
                        match t.as_slice() {
                            ["DEVICE", id, s, e @ ("0" | "1")] => Some((id.to_string(), parse_state(s)?, *e == "1")),
                            _ => None,
                        }
                    })
                    .collect::<Option<Vec<_>>>()?;
                Some(Reply::Devices(rows))
            }
            _ => None,
        }
    }

    /// Number of continuation lines announced by a reply's first line.
    pub fn continuation_lines(first: &str) -> usize {
        first.strip_prefix("DEVICES ").and_then(|n| n.parse().ok()).unwrap_or(0)
    }
}

/// Executes one request line against the fleet at time `now`.
pub fn execute(fleet: &mut Fleet, line: &str, now: Timestamp) -> Reply {
    let Some(req) = parse_request(line) else {
        return Reply::BadCommand;
    };
    match req {
        Request::Get(id) => match fleet.get(&id) {
            Ok(d) => Reply::State(id, d.state),
            Err(_) => Reply::Unknown(id),
        },
        Request::Set(id, state) => match fleet.set_state(&id, state, now) {
            Ok(_) => Reply::Ok(id, state),
            Err(DeviceError::Exempt(_)) => Reply::Exempt(id),
            Err(DeviceError::Unknown(_)) => Reply::Unknown(id),
            // out-of-order clock on the caller side; report current state unchanged
            Err(_) => match fleet.get(&id) {
                Ok(d) => Reply::State(id, d.state),
                Err(_) => Reply::Unknown(id),
            },
        },
        Request::Power(id) => match fleet.power_at(&id, now) {
            Ok(w) => Reply::Power(id, w),
            Err(_) => Reply::Unknown(id),
        },
        Request::List => Reply::Devices(
            fleet
                .devices()
                .map(|d| (d.device_id.clone(), d.state, d.exempt))
                .collect(),
        ),
    }
}

/// String-in, string-out form of [`execute`].
pub fn handle_command(fleet: &mut Fleet, line: &str, now: Timestamp) -> String {
    execute(fleet, line, now).to_wire()
}
