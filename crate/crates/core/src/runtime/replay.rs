//! Plays a [`ScenarioScript`] against a simulated clock.

use std::fs;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use super::scenario::ScriptItem;
use super::store::record_line;
use super::{EnergyReport, EventStore, MemoryStore, Runtime, RuntimeError, ScenarioScript};
use crate::config::DeploymentConfig;
use crate::devicenet::server::{Clock, DeviceLink, FleetServer, LocalLink, SimClock, TcpLink};
use crate::time::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Transport {
    /// Devices behind a loopback socket speaking the line protocol.
    #[default]
    Tcp,
    /// Direct calls into the fleet.
    InProcess,
}

pub struct ReplayOptions {
    /// Overrides the script's speedup. `f64::INFINITY` never sleeps.
    pub speedup: Option<f64>,
    pub transport: Transport,
    pub store: Option<Box<dyn EventStore>>,
    /// Stop after this many script items (for crash tests).
    pub max_items: Option<usize>,
    /// Records between snapshots; the runtime default when `None`.
    pub snapshot_every: Option<u64>,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        Self {
            speedup: None,
            transport: Transport::Tcp,
            store: None,
            max_items: None,
            snapshot_every: None,
        }
    }
}

impl ReplayOptions {
    pub fn fast() -> Self {
        Self {
            speedup: Some(f64::INFINITY),
            ..Self::default()
        }
    }
}

pub struct ReplayResult {
    pub runtime: Runtime,
    pub report: EnergyReport,
    pub start: Timestamp,
    pub end: Timestamp,
}

/// Drives the script through a fresh runtime and closes the ledger at the
/// script's end. Day 0 starts at [`Timestamp::ZERO`].
pub fn replay(
    config: &DeploymentConfig,
    script: &ScenarioScript,
    opts: ReplayOptions,
) -> Result<ReplayResult, RuntimeError> {
    let speedup = opts.speedup.unwrap_or(script.speedup);
    if !(speedup > 0.0) {
        return Err(RuntimeError::Validation(format!(
            "speedup must be positive, got {speedup}"
        )));
    }
    script.validate(config)?;
    let start = Timestamp::ZERO;
    let end = start.plus(script.end_offset());

    let hardware = Arc::new(Mutex::new(config.build_fleet(start)?));
    let clock = SimClock::new(start);
    let (link, _server): (Box<dyn DeviceLink>, Option<FleetServer>) = match opts.transport {
        Transport::Tcp => {
            let server = FleetServer::start(
                "127.0.0.1:0",
                hardware.clone(),
                Arc::new(clock.clone()) as Arc<dyn Clock>,
            )?;
            (Box::new(TcpLink::connect(server.local_addr())?), Some(server))
        }
        Transport::InProcess => (Box::new(LocalLink(hardware.clone())), None),
    };
    let store = opts.store.unwrap_or_else(|| Box::new(MemoryStore::default()));
    let mut rt = Runtime::new(config.clone(), start, link, store)?;
    if let Some(every) = opts.snapshot_every {
        rt = rt.with_snapshot_every(every);
    }

    let mut last = start;
    for (n, item) in script.items().into_iter().enumerate() {
        if opts.max_items.is_some_and(|m| n >= m) {
            break;
        }
        let at = start.plus(item.at());
        pace(last, at, speedup);
        last = at;
        clock.set(at);
        match item {
            ScriptItem::Mode(m) => {
                rt.set_user_mode(&m.user, m.mode.clone(), at)?;
            }
            ScriptItem::Fix(f) => {
                let payload = f.payload().map_err(RuntimeError::Validation)?;
                rt.post_location(&f.user, &payload, at)?;
            }
            ScriptItem::Manual(m) => {
                rt.set_device(&m.device, m.state, at)?;
            }
        }
    }
    let finished = opts.max_items.is_none_or(|m| m >= script.items().len());
    let end = if finished { end } else { last };
    pace(last, end, speedup);
    clock.set(end);
    rt.close_ledger(end)?;
    let report = rt.energy_report(start, end)?;
    Ok(ReplayResult {
        runtime: rt,
        report,
        start,
        end,
    })
}

fn pace(from: Timestamp, to: Timestamp, speedup: f64) {
    if speedup.is_finite() && to > from {
        std::thread::sleep(Duration::from_secs_f64((to.0 - from.0) as f64 / speedup));
    }
}

/// Writes `report.json`, `comparison.csv`, `ledger.csv` and `events.jsonl`.
pub fn write_bundle(result: &ReplayResult, dir: &Path) -> Result<(), RuntimeError> {
    fs::create_dir_all(dir)?;
    let report = serde_json::to_string_pretty(&result.report).expect("report serializes");
    fs::write(dir.join("report.json"), report + "\n")?;
    fs::write(dir.join("comparison.csv"), result.report.comparison.to_csv())?;
    fs::write(
        dir.join("ledger.csv"),
        EnergyReport::ledger_csv(&result.runtime.state().ledger),
    )?;
    let mut events = String::new();
    for r in result.runtime.events() {
        events.push_str(&record_line(r));
        events.push('\n');
    }
    fs::write(dir.join("events.jsonl"), events)?;
    Ok(())
}
