//! Transport-independent request routing for the service API.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, MutexGuard};

use serde::Deserialize;
use serde_json::{json, Value};

use super::{LocationPayload, Outcome, Runtime, RuntimeError};
use crate::devicenet::server::Clock;
use crate::devicenet::PowerState;
use crate::policy::{PolicyError, PolicyRule, UserMode};
use crate::presence::distance_to_fence;
use crate::time::Timestamp;

#[derive(Debug, Clone, PartialEq)]
pub struct ApiRequest {
    pub method: String,
    /// Path with optional `?query`.
    pub path: String,
    pub body: String,
    pub token: Option<String>,
}

impl ApiRequest {
    pub fn new(method: &str, path: &str, body: &str) -> Self {
        Self {
            method: method.to_string(),
            path: path.to_string(),
            body: body.to_string(),
            token: None,
        }
    }

    pub fn get(path: &str) -> Self {
        Self::new("GET", path, "")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiResponse {
    pub status: u16,
    pub body: Value,
}

impl ApiResponse {
    fn ok(body: Value) -> Self {
        Self { status: 200, body }
    }

    fn error(status: u16, error: &str, reason: impl Into<String>) -> Self {
        Self {
            status,
            body: json!({ "error": error, "reason": reason.into() }),
        }
    }

    fn bad_request(reason: impl Into<String>) -> Self {
        Self::error(400, "validation", reason)
    }

    fn not_found(reason: impl Into<String>) -> Self {
        Self::error(404, "not_found", reason)
    }
}

/// The runtime behind a lock, one mutation at a time.
pub struct Service {
    runtime: Mutex<Runtime>,
    clock: Arc<dyn Clock>,
    token: Option<String>,
}

#[derive(Deserialize)]
struct LocationBody {
    user: String,
    #[serde(default)]
    ts: Option<i64>,
    #[serde(flatten)]
    payload: LocationPayload,
}

#[derive(Deserialize)]
struct StateBody {
    state: PowerState,
}

#[derive(Deserialize)]
struct ModeBody {
    mode: UserMode,
}

fn outcome_json(o: &Outcome) -> Value {
    json!({ "accepted": o.accepted, "records": o.records })
}

fn runtime_error(e: RuntimeError) -> ApiResponse {
    match e {
        RuntimeError::UnknownUser(u) => ApiResponse::not_found(format!("unknown user {u}")),
        RuntimeError::UnknownDevice(d) => ApiResponse::not_found(format!("unknown device {d}")),
        RuntimeError::Policy(PolicyError::UnknownUser(u)) => ApiResponse::not_found(format!("unknown user {u}")),
        RuntimeError::Policy(p) => ApiResponse::bad_request(p.to_string()),
        RuntimeError::Validation(m) => ApiResponse::bad_request(m),
        other => ApiResponse::error(500, "internal", other.to_string()),
    }
}

fn parse_query(query: &str) -> BTreeMap<String, String> {
    query
        .split('&')
        .filter(|kv| !kv.is_empty())
        .map(|kv| match kv.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => (kv.to_string(), String::new()),
        })
        .collect()
}

fn body<T: for<'de> Deserialize<'de>>(req: &ApiRequest) -> Result<T, ApiResponse> {
    serde_json::from_str(&req.body).map_err(|e| ApiResponse::bad_request(format!("malformed body: {e}")))
}

fn query_time(q: &BTreeMap<String, String>, key: &str, default: Timestamp) -> Result<Timestamp, ApiResponse> {
    match q.get(key) {
        None => Ok(default),
        Some(v) => v
            .parse::<i64>()
            .map(Timestamp)
            .map_err(|_| ApiResponse::bad_request(format!("{key} must be integer seconds"))),
    }
}

impl Service {
    pub fn new(runtime: Runtime, clock: Arc<dyn Clock>) -> Self {
        let token = runtime.config().api_token.clone();
        Self {
            runtime: Mutex::new(runtime),
            clock,
            token,
        }
    }

    pub fn runtime(&self) -> MutexGuard<'_, Runtime> {
        self.runtime.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn into_runtime(self) -> Runtime {
        self.runtime.into_inner().unwrap_or_else(|e| e.into_inner())
    }

    fn now(&self) -> Timestamp {
        self.clock.now()
    }

    /// Routes one request.
    pub fn dispatch(&self, req: &ApiRequest) -> ApiResponse {
        if let Some(expected) = &self.token {
            if req.token.as_deref() != Some(expected.as_str()) {
                return ApiResponse::error(401, "unauthorized", "missing or wrong token");
            }
        }
        let (path, query) = req.path.split_once('?').unwrap_or((&req.path, ""));
        let query = parse_query(query);
        let segments: Vec<&str> = path.trim_matches('/').split('/').collect();
        let result = match (req.method.as_str(), segments.as_slice()) {
            ("POST", ["api", "location"]) => self.post_location(req),
            ("GET", ["api", "presence", user]) => self.presence(user),
            ("GET", ["api", "devices"]) => Ok(self.devices()),
            ("POST", ["api", "devices", id, "state"]) => self.set_device(id, req),
            ("GET", ["api", "policies"]) => Ok(self.policies()),
            ("PUT", ["api", "policies", id]) => self.put_policy(id, req),
            ("POST", ["api", "users", id, "mode"]) => self.set_mode(id, req),
            ("GET", ["api", "report", "energy"]) => self.energy(&query),
            ("GET", ["api", "report", "rollup"]) => self.rollup(&query),
            ("GET", ["api", "events"]) => self.events(&query),
            (_, ["api", ..]) => Err(ApiResponse::not_found(format!("no route {} {path}", req.method))),
            _ => Err(ApiResponse::not_found(format!("no route {path}"))),
        };
        result.unwrap_or_else(|e| e)
    }

    fn post_location(&self, req: &ApiRequest) -> Result<ApiResponse, ApiResponse> {
        let b: LocationBody = body(req)?;
        let at = b.ts.map(Timestamp).unwrap_or_else(|| self.now());
        let out = self
            .runtime()
            .post_location(&b.user, &b.payload, at)
            .map_err(runtime_error)?;
        Ok(ApiResponse::ok(outcome_json(&out)))
    }

    fn presence(&self, user: &str) -> Result<ApiResponse, ApiResponse> {
        let rt = self.runtime();
        let machines = rt
            .state()
            .presence
            .get(user)
            .ok_or_else(|| ApiResponse::not_found(format!("unknown user {user}")))?;
        let position = rt.state().last_position.get(user).copied();
        let fences = rt.config().fences();
        let per_fence: serde_json::Map<String, Value> = machines
            .iter()
            .map(|(fence, st)| {
                let distance = position.zip(fences.get(fence)).map(|(p, f)| distance_to_fence(p, f));
                (
                    fence.clone(),
                    json!({
                        "state": st.state,
                        "candidate": st.candidate,
                        "streak": st.streak,
                        "last_fix_time": st.last_fix_time,
                        "distance_m": distance,
                    }),
                )
            })
            .collect();
        Ok(ApiResponse::ok(
            json!({ "user": user, "position": position, "fences": per_fence }),
        ))
    }

    fn devices(&self) -> ApiResponse {
        let rt = self.runtime();
        let now = rt.state().now;
        let devices: Vec<Value> = rt
            .config()
            .devices
            .iter()
            .filter_map(|cfg| {
                let d = rt.state().fleet.get(&cfg.id).ok()?;
                Some(json!({
                    "id": d.device_id,
                    "name": d.name,
                    "building": d.building,
                    "category": cfg.category,
                    "control": cfg.control,
                    "exempt": d.exempt,
                    "state": d.state,
                    "since": d.state_since,
                    "watts": d.power_at(now),
                    "average_watts": d.profile.average_watts(),
                }))
            })
            .collect();
        ApiResponse::ok(json!({ "now": now, "devices": devices }))
    }

    fn set_device(&self, id: &str, req: &ApiRequest) -> Result<ApiResponse, ApiResponse> {
        let b: StateBody = body(req)?;
        let at = self.now();
        let out = self.runtime().set_device(id, b.state, at).map_err(runtime_error)?;
        let status = if out.accepted { 200 } else { 409 };
        let mut body = outcome_json(&out);
        if !out.accepted {
            body["error"] = json!("refused");
        }
        Ok(ApiResponse { status, body })
    }

    fn policies(&self) -> ApiResponse {
        let rt = self.runtime();
        let engine = rt.engine();
        let rules: Vec<Value> = engine
            .rules()
            .map(|r| json!({ "rule": r.rule, "devices": r.devices }))
            .collect();
        let users: Vec<Value> = engine
            .users()
            .map(|u| json!({ "user": u.user, "mode": u.mode }))
            .collect();
        let realms: Vec<Value> = engine
            .realms()
            .realms()
            .map(|r| json!({ "id": r.realm_id, "parent": r.parent, "name": r.name }))
            .collect();
        ApiResponse::ok(json!({ "rules": rules, "users": users, "realms": realms }))
    }

    fn put_policy(&self, id: &str, req: &ApiRequest) -> Result<ApiResponse, ApiResponse> {
        let rule: PolicyRule = body(req)?;
        if rule.rule_id != id {
            return Err(ApiResponse::bad_request(format!(
                "rule_id {:?} does not match path {id:?}",
                rule.rule_id
            )));
        }
        let at = self.now();
        let out = self.runtime().put_rule(rule, at).map_err(runtime_error)?;
        Ok(ApiResponse::ok(outcome_json(&out)))
    }

    fn set_mode(&self, user: &str, req: &ApiRequest) -> Result<ApiResponse, ApiResponse> {
        let b: ModeBody = body(req)?;
        let at = self.now();
        let out = self.runtime().set_user_mode(user, b.mode, at).map_err(runtime_error)?;
        Ok(ApiResponse::ok(outcome_json(&out)))
    }

    fn energy(&self, q: &BTreeMap<String, String>) -> Result<ApiResponse, ApiResponse> {
        let rt = self.runtime();
        let from = query_time(q, "from", rt.state().start)?;
        let to = query_time(q, "to", rt.state().now)?;
        let report = rt.energy_report(from, to).map_err(runtime_error)?;
        Ok(ApiResponse::ok(
            serde_json::to_value(report).expect("report serializes"),
        ))
    }

    fn rollup(&self, q: &BTreeMap<String, String>) -> Result<ApiResponse, ApiResponse> {
        let rt = self.runtime();
        let from = query_time(q, "from", rt.state().start)?;
        let to = query_time(q, "to", rt.state().now)?;
        let report = rt.energy_report(from, to).map_err(runtime_error)?;
        Ok(ApiResponse::ok(
            json!({ "from": from, "to": to, "rollup": report.rollup }),
        ))
    }

    fn events(&self, q: &BTreeMap<String, String>) -> Result<ApiResponse, ApiResponse> {
        let since = match q.get("since") {
            None => 0,
            Some(s) => s
                .parse::<u64>()
                .map_err(|_| ApiResponse::bad_request("since must be a sequence number"))?,
        };
        let limit = match q.get("limit") {
            None => 1000,
            Some(s) => s
                .parse::<usize>()
                .map_err(|_| ApiResponse::bad_request("limit must be a count"))?,
        };
        let rt = self.runtime();
        let records: Vec<_> = rt.events_since(since).iter().take(limit).collect();
        let next = records.last().map_or(since, |r| r.seq);
        Ok(ApiResponse::ok(json!({ "records": records, "next": next })))
    }
}
