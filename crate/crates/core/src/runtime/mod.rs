//! The control plane: fixes in, device commands out, every step journaled.
//!
//! State is a fold of [`EventRecord`]s. The live pipeline builds a record,
//! applies it through the same function recovery uses, then persists it, so
//! a log prefix always recovers to the state the live run had at that point.

mod api;
mod http;
mod replay;
mod scenario;
mod store;

use std::collections::BTreeMap;
use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, Control, DeploymentConfig};
use crate::devicenet::protocol::{Reply, Request};
use crate::devicenet::server::DeviceLink;
use crate::devicenet::{Fleet, PowerState};
use crate::energy::{
    by_category, comparison_report, estimate_mode, ledger_total, realm_rollup, ComparisonReport, EnergyError,
    EnergyLedger, LedgerEntry, ModeEstimate, SiteTotal,
};
use crate::geoloc::{parse_nmea, LatLon, ParseOutcome};
use crate::policy::{Decision, ModeName, PolicyEngine, PolicyError, PolicyRule, PresenceContext, UserMode};
use crate::presence::{self, GeoFence, PresenceEvent, PresenceState, TimedFix};
use crate::time::Timestamp;

pub use api::{ApiRequest, ApiResponse, Service};
pub use http::HttpServer;
pub use replay::{replay, write_bundle, ReplayOptions, ReplayResult, Transport};
pub use scenario::{ManualEvent, ModeChange, ScenarioScript, ScriptFix};
pub use store::{parse_log, CorruptRecord, EventStore, FileStore, LoadedLog, MemoryStore};

/// Records between automatic snapshots.
pub const SNAPSHOT_EVERY: u64 = 256;

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error("unknown user {0}")]
    UnknownUser(String),
    #[error("unknown device {0}")]
    UnknownDevice(String),
    #[error("{0}")]
    Validation(String),
    #[error("storage: {0}")]
    Storage(#[from] io::Error),
    #[error("event log rejected record {seq}: {reason}")]
    Apply { seq: u64, reason: String },
}

/// A position report as posted by a phone or read from a script.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LocationPayload {
    Nmea { nmea: String },
    LatLon { lat: f64, lon: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandOrigin {
    Policy,
    Manual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum PolicyEdit {
    SetMode { user: String, mode: UserMode },
    PutRule { rule: PolicyRule },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventPayload {
    FixAccepted {
        user: String,
        position: LatLon,
    },
    FixRejected {
        user: String,
        reason: String,
    },
    Presence {
        event: PresenceEvent,
    },
    Decision {
        decision: Decision,
    },
    DeviceCommand {
        device_id: String,
        state: PowerState,
        origin: CommandOrigin,
    },
    DeviceReply {
        device_id: String,
        state: PowerState,
        reply: String,
        applied: bool,
    },
    LedgerAppend {
        entry: LedgerEntry,
    },
    PolicyEdit {
        edit: PolicyEdit,
    },
}

impl EventPayload {
    pub fn kind(&self) -> &'static str {
        match self {
            EventPayload::FixAccepted { .. } => "fix_accepted",
            EventPayload::FixRejected { .. } => "fix_rejected",
            EventPayload::Presence { .. } => "presence",
            EventPayload::Decision { .. } => "decision",
            EventPayload::DeviceCommand { .. } => "device_command",
            EventPayload::DeviceReply { .. } => "device_reply",
            EventPayload::LedgerAppend { .. } => "ledger_append",
            EventPayload::PolicyEdit { .. } => "policy_edit",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub seq: u64,
    pub at: Timestamp,
    #[serde(flatten)]
    pub payload: EventPayload,
}

/// Everything recovery must reproduce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeState {
    pub seq: u64,
    pub start: Timestamp,
    pub now: Timestamp,
    /// user -> fence -> machine
    pub presence: BTreeMap<String, BTreeMap<String, PresenceState>>,
    pub last_position: BTreeMap<String, LatLon>,
    /// Mirror of the device fleet, updated from replies.
    pub fleet: Fleet,
    pub ledger: EnergyLedger,
    /// End of the last ledger entry per device.
    pub cursors: BTreeMap<String, Timestamp>,
    pub modes: BTreeMap<String, UserMode>,
    /// Rules added or replaced at run time.
    pub rule_edits: BTreeMap<String, PolicyRule>,
}

impl RuntimeState {
    pub fn initial(config: &DeploymentConfig, start: Timestamp) -> Result<Self, RuntimeError> {
        let fleet = config.build_fleet(start)?;
        Ok(Self {
            seq: 0,
            start,
            now: start,
            presence: config
                .users
                .iter()
                .map(|u| {
                    let fences = u
                        .sites
                        .iter()
                        .map(|s| (s.fence.clone(), PresenceState::known(s.initial)))
                        .collect();
                    (u.id.clone(), fences)
                })
                .collect(),
            last_position: BTreeMap::new(),
            cursors: fleet.devices().map(|d| (d.device_id.clone(), start)).collect(),
            fleet,
            ledger: EnergyLedger::default(),
            modes: config.users.iter().map(|u| (u.id.clone(), u.mode.clone())).collect(),
            rule_edits: BTreeMap::new(),
        })
    }

    pub fn context(&self) -> PresenceContext {
        let mut ctx = PresenceContext::default();
        for (user, fences) in &self.presence {
            for (fence, st) in fences {
                ctx.set(user, fence, st.state);
            }
        }
        ctx
    }
}

/// State plus the derived structures needed to apply records.
#[derive(Debug, Clone)]
pub struct Core {
    config: DeploymentConfig,
    fences: BTreeMap<String, GeoFence>,
    engine: PolicyEngine,
    state: RuntimeState,
}

impl Core {
    pub fn new(config: DeploymentConfig, start: Timestamp) -> Result<Self, RuntimeError> {
        let state = RuntimeState::initial(&config, start)?;
        Self::from_state(config, state)
    }

    /// Rebuilds the engine from configuration plus the edits a state carries.
    pub fn from_state(config: DeploymentConfig, state: RuntimeState) -> Result<Self, RuntimeError> {
        let mut engine = PolicyEngine::new(&config)?;
        for rule in state.rule_edits.values() {
            engine.put_rule(rule.clone())?;
        }
        for (user, mode) in &state.modes {
            engine.set_user_mode(user, mode.clone())?;
        }
        Ok(Self {
            fences: config.fences(),
            config,
            engine,
            state,
        })
    }

    pub fn state(&self) -> &RuntimeState {
        &self.state
    }

    pub fn engine(&self) -> &PolicyEngine {
        &self.engine
    }

    pub fn config(&self) -> &DeploymentConfig {
        &self.config
    }

    fn user_fences(&self, user: &str) -> Vec<&GeoFence> {
        self.engine
            .user(user)
            .map(|u| u.sites.iter().filter_map(|s| self.fences.get(&s.fence)).collect())
            .unwrap_or_default()
    }

    /// The single state transition function.
    pub fn apply(&mut self, rec: &EventRecord) -> Result<(), RuntimeError> {
        let fail = |reason: String| RuntimeError::Apply { seq: rec.seq, reason };
        if rec.seq <= self.state.seq {
            return Err(fail(format!("sequence {} does not follow {}", rec.seq, self.state.seq)));
        }
        match &rec.payload {
            EventPayload::FixAccepted { user, position } => {
                let fix = TimedFix {
                    at: rec.at,
                    position: *position,
                };
                let fences: Vec<GeoFence> = self.user_fences(user).into_iter().cloned().collect();
                if fences.is_empty() {
                    return Err(fail(format!("fix for unknown user {user}")));
                }
                let machines = self.state.presence.entry(user.clone()).or_default();
                for fence in &fences {
                    let st = machines.entry(fence.fence_id.clone()).or_default();
                    let (next, _) = presence::step(st, user, fence, &fix).map_err(|e| fail(e.to_string()))?;
                    *st = next;
                }
                self.state.last_position.insert(user.clone(), *position);
            }
            EventPayload::DeviceReply {
                device_id,
                state,
                applied: true,
                ..
            } => {
                self.state
                    .fleet
                    .apply_state(device_id, *state, rec.at)
                    .map_err(|e| fail(e.to_string()))?;
            }
            EventPayload::LedgerAppend { entry } => {
                self.state.ledger.append(entry.clone()).map_err(fail)?;
                self.state.cursors.insert(entry.device_id.clone(), entry.t1);
            }
            EventPayload::PolicyEdit { edit } => match edit {
                PolicyEdit::SetMode { user, mode } => {
                    self.engine
                        .set_user_mode(user, mode.clone())
                        .map_err(|e| fail(e.to_string()))?;
                    self.state.modes.insert(user.clone(), mode.clone());
                }
                PolicyEdit::PutRule { rule } => {
                    self.engine.put_rule(rule.clone()).map_err(|e| fail(e.to_string()))?;
                    self.state.rule_edits.insert(rule.rule_id.clone(), rule.clone());
                }
            },
            EventPayload::FixRejected { .. }
            | EventPayload::Presence { .. }
            | EventPayload::Decision { .. }
            | EventPayload::DeviceCommand { .. }
            | EventPayload::DeviceReply { .. } => {}
        }
        self.state.seq = rec.seq;
        self.state.now = self.state.now.max(rec.at);
        Ok(())
    }

    fn categories(&self) -> BTreeMap<String, String> {
        self.config
            .devices
            .iter()
            .map(|d| (d.id.clone(), d.category.clone()))
            .collect()
    }

    /// Ledger as it would read if every open interval were closed at `until`.
    fn ledger_closed_at(&self, until: Timestamp) -> EnergyLedger {
        let mut ledger = self.state.ledger.clone();
        for d in self.state.fleet.devices() {
            let cursor = self
                .state
                .cursors
                .get(&d.device_id)
                .copied()
                .unwrap_or(self.state.start);
            if until > cursor {
                if let Ok(wh) = d.meter_read(cursor, until) {
                    let _ = ledger.append(LedgerEntry {
                        device_id: d.device_id.clone(),
                        site: d.building.clone(),
                        t0: cursor,
                        t1: until,
                        wh,
                    });
                }
            }
        }
        ledger
    }

    /// Metered energy over `[from, to]` against the three mode estimates.
    pub fn energy_report(&self, from: Timestamp, to: Timestamp) -> Result<EnergyReport, RuntimeError> {
        if to < from {
            return Err(RuntimeError::Validation(format!(
                "report window ends before it starts ({from} > {to})"
            )));
        }
        let ledger = self.ledger_closed_at(to.min(self.state.now).max(self.state.start));
        let categories = self.categories();
        let sites: Vec<String> = self.config.fences.iter().map(|f| f.id.clone()).collect();
        let mut totals = Vec::new();
        let mut per_category = BTreeMap::new();
        let mut estimates = Vec::new();
        for site in &sites {
            let total = ledger_total(&ledger, site, from, to);
            per_category.insert(site.clone(), by_category(&total, &categories));
            totals.push(total);
            for mode in ModeName::ALL {
                estimates.push(estimate_mode(
                    site,
                    mode,
                    &self.config.schedule,
                    &self.state.fleet,
                    &categories,
                    self.engine.mode_table(),
                )?);
            }
        }
        let comparison = comparison_report(&totals, &estimates)?;
        let per_device: BTreeMap<String, f64> = totals
            .iter()
            .flat_map(|t| t.per_device_kwh.iter().map(|(d, k)| (d.clone(), *k)))
            .collect();
        let placement: BTreeMap<String, String> = self
            .config
            .devices
            .iter()
            .map(|d| (d.id.clone(), d.realm.clone()))
            .collect();
        let rollup = realm_rollup(&per_device, &placement, self.engine.realms())?;
        Ok(EnergyReport {
            from,
            to,
            sites: totals,
            per_category,
            estimates,
            comparison,
            rollup,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub from: Timestamp,
    pub to: Timestamp,
    pub sites: Vec<SiteTotal>,
    /// site -> category -> kWh
    pub per_category: BTreeMap<String, BTreeMap<String, f64>>,
    pub estimates: Vec<ModeEstimate>,
    pub comparison: ComparisonReport,
    /// realm -> kWh of its whole subtree
    pub rollup: BTreeMap<String, f64>,
}

impl EnergyReport {
    pub fn site(&self, site: &str) -> Option<&SiteTotal> {
        self.sites.iter().find(|s| s.site == site)
    }

    pub fn ledger_csv(ledger: &EnergyLedger) -> String {
        let mut out = String::from("device_id,site,t0,t1,wh\n");
        for e in ledger.entries() {
            out.push_str(&format!(
                "{},{},{},{},{:.6}\n",
                e.device_id, e.site, e.t0.0, e.t1.0, e.wh
            ));
        }
        out
    }
}

/// What one pipeline call did.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Outcome {
    pub accepted: bool,
    pub records: Vec<EventRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryReport {
    pub applied: usize,
    pub from_snapshot: Option<u64>,
    pub stopped: Option<CorruptRecord>,
}

/// The live pipeline: a [`Core`] plus a device transport and an event store.
pub struct Runtime {
    core: Core,
    link: Box<dyn DeviceLink>,
    store: Box<dyn EventStore>,
    log: Vec<EventRecord>,
    snapshot_every: u64,
}

impl Runtime {
    /// Fresh state; writes the initial snapshot to `store`.
    pub fn new(
        config: DeploymentConfig,
        start: Timestamp,
        link: Box<dyn DeviceLink>,
        store: Box<dyn EventStore>,
    ) -> Result<Self, RuntimeError> {
        let core = Core::new(config, start)?;
        let mut rt = Self {
            core,
            link,
            store,
            log: Vec::new(),
            snapshot_every: SNAPSHOT_EVERY,
        };
        rt.store.write_snapshot(&rt.core.state)?;
        Ok(rt)
    }

    /// Rebuilds state from `store` and resumes appending to it. A corrupt
    /// tail is reported and cut off.
    pub fn recover(
        config: DeploymentConfig,
        start: Timestamp,
        link: Box<dyn DeviceLink>,
        mut store: Box<dyn EventStore>,
    ) -> Result<(Self, RecoveryReport), RuntimeError> {
        let loaded = store.load()?;
        let (core, report) = recover_core(config, start, &loaded)?;
        if report.stopped.is_some() {
            store.truncate(loaded.records.len())?;
        }
        let rt = Self {
            core,
            link,
            store,
            log: loaded.records,
            snapshot_every: SNAPSHOT_EVERY,
        };
        Ok((rt, report))
    }

    pub fn with_snapshot_every(mut self, every: u64) -> Self {
        self.snapshot_every = every.max(1);
        self
    }

    pub fn core(&self) -> &Core {
        &self.core
    }

    pub fn state(&self) -> &RuntimeState {
        &self.core.state
    }

    pub fn engine(&self) -> &PolicyEngine {
        &self.core.engine
    }

    pub fn config(&self) -> &DeploymentConfig {
        &self.core.config
    }

    pub fn events(&self) -> &[EventRecord] {
        &self.log
    }

    pub fn events_since(&self, seq: u64) -> &[EventRecord] {
        let idx = self.log.partition_point(|r| r.seq <= seq);
        &self.log[idx..]
    }

    fn emit(&mut self, at: Timestamp, payload: EventPayload, out: &mut Vec<EventRecord>) -> Result<(), RuntimeError> {
        let rec = EventRecord {
            seq: self.core.state.seq + 1,
            at: at.max(self.core.state.now),
            payload,
        };
        self.core.apply(&rec)?;
        self.store.append(&rec)?;
        if rec.seq.is_multiple_of(self.snapshot_every) {
            self.store.write_snapshot(&self.core.state)?;
        }
        self.log.push(rec.clone());
        out.push(rec);
        Ok(())
    }

    fn current_state(&self) -> impl Fn(&str) -> Option<PowerState> + '_ {
        |id: &str| self.core.state.fleet.get(id).ok().map(|d| d.state)
    }

    fn reject_fix(&mut self, user: &str, reason: String, at: Timestamp) -> Result<Outcome, RuntimeError> {
        log::info!("rejected fix from {user}: {reason}");
        let mut records = vec![];
        self.emit(
            at,
            EventPayload::FixRejected {
                user: user.to_string(),
                reason,
            },
            &mut records,
        )?;
        Ok(Outcome {
            accepted: false,
            records,
        })
    }

    /// Runs one position report through presence, policy and the devices.
    pub fn post_location(
        &mut self,
        user: &str,
        payload: &LocationPayload,
        at: Timestamp,
    ) -> Result<Outcome, RuntimeError> {
        if self.core.engine.user(user).is_none() {
            return Err(RuntimeError::UnknownUser(user.to_string()));
        }
        let at = at.max(self.core.state.now);
        let position = match payload {
            LocationPayload::Nmea { nmea } => match parse_nmea(nmea) {
                Ok(ParseOutcome::Fix(fix)) => match fix.position() {
                    Some(p) => p,
                    None => return self.reject_fix(user, "sentence carries no position fix".into(), at),
                },
                Ok(ParseOutcome::Unsupported(kind)) => {
                    return self.reject_fix(user, format!("unsupported sentence {kind}"), at)
                }
                Err(e) => return self.reject_fix(user, e.to_string(), at),
            },
            LocationPayload::LatLon { lat, lon } => {
                let p = LatLon::new(*lat, *lon);
                if !p.is_valid() {
                    return self.reject_fix(user, format!("coordinates out of range ({lat}, {lon})"), at);
                }
                p
            }
        };

        // Work out the transitions first; applying the record repeats the same steps.
        let fix = TimedFix { at, position };
        let mut transitions: Vec<PresenceEvent> = vec![];
        for fence in self.core.user_fences(user) {
            let st = self
                .core
                .state
                .presence
                .get(user)
                .and_then(|m| m.get(&fence.fence_id))
                .cloned()
                .unwrap_or_default();
            match presence::step(&st, user, fence, &fix) {
                Ok((_, Some(ev))) => transitions.push(ev),
                Ok((_, None)) => {}
                Err(e) => return self.reject_fix(user, e.to_string(), at),
            }
        }

        let mut records = vec![];
        self.emit(
            at,
            EventPayload::FixAccepted {
                user: user.to_string(),
                position,
            },
            &mut records,
        )?;
        for event in transitions {
            log::info!("{} {:?} {} at {}", event.user, event.kind, event.fence_id, event.at);
            self.emit(at, EventPayload::Presence { event: event.clone() }, &mut records)?;
            let ctx = self.core.state.context();
            let eval = self.core.engine.on_presence_event(&event, &ctx, &self.current_state());
            self.carry_out(eval.decisions, eval.commands, at, &mut records)?;
        }
        Ok(Outcome {
            accepted: true,
            records,
        })
    }

    fn carry_out(
        &mut self,
        decisions: Vec<Decision>,
        commands: Vec<crate::policy::DeviceCommand>,
        at: Timestamp,
        records: &mut Vec<EventRecord>,
    ) -> Result<(), RuntimeError> {
        for decision in decisions {
            self.emit(at, EventPayload::Decision { decision }, records)?;
        }
        for cmd in commands {
            self.command(&cmd.device_id, cmd.state, CommandOrigin::Policy, at, records)?;
        }
        Ok(())
    }

    /// Closes the device's ledger interval, sends SET, and records the reply.
    fn command(
        &mut self,
        device_id: &str,
        state: PowerState,
        origin: CommandOrigin,
        at: Timestamp,
        records: &mut Vec<EventRecord>,
    ) -> Result<bool, RuntimeError> {
        let at = at.max(self.core.state.now);
        let exempt = self
            .core
            .config
            .device(device_id)
            .is_some_and(|d| d.control == Control::Exempt);
        if !exempt {
            self.close_interval(device_id, at, records)?;
        }
        self.emit(
            at,
            EventPayload::DeviceCommand {
                device_id: device_id.to_string(),
                state,
                origin,
            },
            records,
        )?;
        let request = Request::Set(device_id.to_string(), state);
        let (reply, applied) = match self.link.exchange(&request, at) {
            Ok(r @ Reply::Ok(..)) => (r.to_wire(), true),
            Ok(r) => (r.to_wire(), false),
            Err(e) => (format!("ERR LINK {e}"), false),
        };
        if !applied {
            log::warn!("{} {} refused: {reply}", device_id, state.as_wire());
        }
        self.emit(
            at,
            EventPayload::DeviceReply {
                device_id: device_id.to_string(),
                state,
                reply,
                applied,
            },
            records,
        )?;
        Ok(applied)
    }

    fn close_interval(
        &mut self,
        device_id: &str,
        at: Timestamp,
        records: &mut Vec<EventRecord>,
    ) -> Result<(), RuntimeError> {
        let st = &self.core.state;
        let cursor = st.cursors.get(device_id).copied().unwrap_or(st.start);
        if at <= cursor {
            return Ok(());
        }
        let device = st
            .fleet
            .get(device_id)
            .map_err(|_| RuntimeError::UnknownDevice(device_id.to_string()))?;
        let wh = device
            .meter_read(cursor, at)
            .map_err(|e| RuntimeError::Validation(e.to_string()))?;
        let entry = LedgerEntry {
            device_id: device_id.to_string(),
            site: device.building.clone(),
            t0: cursor,
            t1: at,
            wh,
        };
        self.emit(at, EventPayload::LedgerAppend { entry }, records)
    }

    /// Direct device control (wall switch, app toggle, script).
    pub fn set_device(&mut self, device_id: &str, state: PowerState, at: Timestamp) -> Result<Outcome, RuntimeError> {
        if self.core.config.device(device_id).is_none() {
            return Err(RuntimeError::UnknownDevice(device_id.to_string()));
        }
        let mut records = vec![];
        let accepted = self.command(device_id, state, CommandOrigin::Manual, at, &mut records)?;
        Ok(Outcome { accepted, records })
    }

    /// Switches a user's mode and re-evaluates their devices. Re-selecting
    /// the current mode does nothing.
    pub fn set_user_mode(&mut self, user: &str, mode: UserMode, at: Timestamp) -> Result<Outcome, RuntimeError> {
        let current = self
            .core
            .engine
            .user(user)
            .ok_or_else(|| RuntimeError::UnknownUser(user.to_string()))?;
        mode.validate()?;
        if current.mode == mode {
            return Ok(Outcome {
                accepted: true,
                records: vec![],
            });
        }
        let mut records = vec![];
        let edit = PolicyEdit::SetMode {
            user: user.to_string(),
            mode,
        };
        self.emit(at, EventPayload::PolicyEdit { edit }, &mut records)?;
        let ctx = self.core.state.context();
        let eval = self.core.engine.evaluate_user(user, &ctx, &self.current_state());
        self.carry_out(eval.decisions, eval.commands, at, &mut records)?;
        Ok(Outcome {
            accepted: true,
            records,
        })
    }

    /// Adds or replaces a rule and re-evaluates the devices it covers.
    pub fn put_rule(&mut self, rule: PolicyRule, at: Timestamp) -> Result<Outcome, RuntimeError> {
        let mut probe = self.core.engine.clone();
        probe.put_rule(rule.clone())?;
        let rule_id = rule.rule_id.clone();
        let mut records = vec![];
        self.emit(
            at,
            EventPayload::PolicyEdit {
                edit: PolicyEdit::PutRule { rule },
            },
            &mut records,
        )?;
        let ctx = self.core.state.context();
        let eval = self
            .core
            .engine
            .evaluate_rule_scope(&rule_id, &ctx, &self.current_state());
        self.carry_out(eval.decisions, eval.commands, at, &mut records)?;
        Ok(Outcome {
            accepted: true,
            records,
        })
    }

    /// Writes ledger entries for every device up to `at`.
    pub fn close_ledger(&mut self, at: Timestamp) -> Result<Vec<EventRecord>, RuntimeError> {
        let ids: Vec<String> = self.core.state.fleet.devices().map(|d| d.device_id.clone()).collect();
        let mut records = vec![];
        for id in ids {
            self.close_interval(&id, at, &mut records)?;
        }
        Ok(records)
    }

    pub fn energy_report(&self, from: Timestamp, to: Timestamp) -> Result<EnergyReport, RuntimeError> {
        self.core.energy_report(from, to)
    }

    pub fn snapshot(&mut self) -> Result<(), RuntimeError> {
        Ok(self.store.write_snapshot(&self.core.state)?)
    }
}

/// Folds a loaded log over the best usable snapshot.
pub fn recover_core(
    config: DeploymentConfig,
    start: Timestamp,
    log: &LoadedLog,
) -> Result<(Core, RecoveryReport), RuntimeError> {
    let last_seq = log.records.last().map_or(0, |r| r.seq);
    let snapshot = log
        .snapshots
        .iter()
        .filter(|s| s.seq <= last_seq && (s.seq == 0 || log.records.iter().any(|r| r.seq == s.seq)))
        .max_by_key(|s| s.seq);
    let mut core = match snapshot {
        Some(s) => Core::from_state(config, s.clone())?,
        None => Core::new(config, start)?,
    };
    let mut applied = 0;
    let base = core.state.seq;
    for rec in log.records.iter().filter(|r| r.seq > base) {
        core.apply(rec)?;
        applied += 1;
    }
    Ok((
        core,
        RecoveryReport {
            applied,
            from_snapshot: snapshot.map(|s| s.seq),
            stopped: log.stopped.clone(),
        },
    ))
}
