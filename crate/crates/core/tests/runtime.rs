mod common;

use std::io::{Read, Write};
use std::net::TcpStream;
use std::sync::{Arc, Mutex};

use proptest::prelude::*;
use rand::Rng;
use serde_json::{json, Value};
use smartenergy::devicenet::server::{Clock, LocalLink, SimClock};
use smartenergy::devicenet::PowerState;
use smartenergy::geoloc::gga_sentence;
use smartenergy::runtime::{
    recover_core, replay, write_bundle, ApiRequest, EventPayload, EventStore, FileStore, HttpServer, LocationPayload,
    ManualEvent, MemoryStore, ReplayOptions, Runtime, RuntimeError, ScenarioScript, Service, Transport,
};
use smartenergy::time::ClockOffset;
use smartenergy::{DeploymentConfig, LatLon, Timestamp};

use common::{destination, rng};

const HOME: LatLon = LatLon {
    lat: 38.6270,
    lon: -90.1994,
};
const OFFICE: LatLon = LatLon {
    lat: 38.6488,
    lon: -90.3108,
};

fn runtime(store: Box<dyn EventStore>) -> Runtime {
    let cfg = DeploymentConfig::bundled();
    let fleet = Arc::new(Mutex::new(cfg.build_fleet(Timestamp::ZERO).unwrap()));
    Runtime::new(cfg, Timestamp::ZERO, Box::new(LocalLink(fleet)), store).unwrap()
}

fn service() -> (Service, SimClock) {
    let clock = SimClock::new(Timestamp::ZERO);
    let svc = Service::new(
        runtime(Box::new(MemoryStore::default())),
        Arc::new(clock.clone()) as Arc<dyn Clock>,
    );
    (svc, clock)
}

fn kinds(records: &Value) -> Vec<String> {
    records["records"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["type"].as_str().unwrap_or_default().to_string())
        .collect()
}

fn device_state(svc: &Service, id: &str) -> String {
    let r = svc.dispatch(&ApiRequest::get("/api/devices"));
    assert_eq!(r.status, 200);
    r.body["devices"]
        .as_array()
        .unwrap()
        .iter()
        .find(|d| d["id"] == id)
        .map(|d| d["state"].as_str().unwrap().to_string())
        .unwrap()
}

#[test]
fn api_set_then_read() {
    let (svc, clock) = service();
    clock.set(Timestamp(60));
    let r = svc.dispatch(&ApiRequest::new(
        "POST",
        "/api/devices/home-laptop/state",
        r#"{"state":"on"}"#,
    ));
    assert_eq!(r.status, 200, "{}", r.body);
    assert_eq!(device_state(&svc, "home-laptop"), "on");
    let r = svc.dispatch(&ApiRequest::new(
        "POST",
        "/api/devices/home-laptop/state",
        r#"{"state":"off"}"#,
    ));
    assert_eq!(r.status, 200);
    assert_eq!(device_state(&svc, "home-laptop"), "off");

    let r = svc.dispatch(&ApiRequest::new(
        "POST",
        "/api/devices/home-fridge/state",
        r#"{"state":"off"}"#,
    ));
    assert_eq!(r.status, 409);
    assert_eq!(device_state(&svc, "home-fridge"), "on");

    let r = svc.dispatch(&ApiRequest::new(
        "POST",
        "/api/devices/toaster/state",
        r#"{"state":"off"}"#,
    ));
    assert_eq!(r.status, 404);
    let r = svc.dispatch(&ApiRequest::new("POST", "/api/devices/home-laptop/state", "{state"));
    assert_eq!(r.status, 400);
    assert_eq!(svc.dispatch(&ApiRequest::get("/api/nowhere")).status, 404);
    assert_eq!(svc.dispatch(&ApiRequest::get("/")).status, 404);
    assert_eq!(
        svc.dispatch(&ApiRequest::get("/api/report/energy?from=abc")).status,
        400
    );
}

#[test]
fn api_mode_change_and_events() {
    let (svc, _) = service();
    let r = svc.dispatch(&ApiRequest::new(
        "POST",
        "/api/users/alice/mode",
        r#"{"mode":"luxury"}"#,
    ));
    assert_eq!(r.status, 200, "{}", r.body);
    let p = svc.dispatch(&ApiRequest::get("/api/policies"));
    let alice = p.body["users"]
        .as_array()
        .unwrap()
        .iter()
        .find(|u| u["user"] == "alice")
        .unwrap();
    assert_eq!(alice["mode"], "luxury");

    let r = svc.dispatch(&ApiRequest::new(
        "POST",
        "/api/users/alice/mode",
        r#"{"mode":{"custom":{"lighting":2.0}}}"#,
    ));
    assert_eq!(r.status, 400);
    let r = svc.dispatch(&ApiRequest::new("POST", "/api/users/bob/mode", r#"{"mode":"frugal"}"#));
    assert_eq!(r.status, 404);

    let all = svc.dispatch(&ApiRequest::get("/api/events"));
    let n = all.body["records"].as_array().unwrap().len();
    assert!(n >= 1);
    let tail = svc.dispatch(&ApiRequest::get(&format!("/api/events?since={}", all.body["next"])));
    assert!(tail.body["records"].as_array().unwrap().is_empty());
    let one = svc.dispatch(&ApiRequest::get("/api/events?limit=1"));
    assert_eq!(one.body["records"].as_array().unwrap().len(), 1);
}

fn post_fix(svc: &Service, p: LatLon, ts: i64) -> Value {
    let body = json!({ "user": "alice", "ts": ts, "lat": p.lat, "lon": p.lon }).to_string();
    let r = svc.dispatch(&ApiRequest::new("POST", "/api/location", &body));
    assert_eq!(r.status, 200, "{}", r.body);
    r.body
}

#[test]
fn leaving_home_switches_off_everything_but_the_exempt_loads() {
    let (svc, _) = service();
    for id in ["home-laptop", "home-light-kitchen"] {
        let r = svc.dispatch(&ApiRequest::new(
            "POST",
            &format!("/api/devices/{id}/state"),
            r#"{"state":"on"}"#,
        ));
        assert_eq!(r.status, 200);
    }
    let away = destination(HOME, 270.0, 1000.0);
    let a = post_fix(&svc, away, 10);
    let b = post_fix(&svc, away, 20);
    assert_eq!(kinds(&a), ["fix_accepted"]);
    assert_eq!(kinds(&b), ["fix_accepted"]);
    let c = post_fix(&svc, away, 30);
    let ks = kinds(&c);
    assert_eq!(ks[0], "fix_accepted");
    assert!(ks.contains(&"presence".to_string()));
    let commanded: Vec<&str> = c["records"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|r| r["type"] == "device_command")
        .map(|r| r["device_id"].as_str().unwrap())
        .collect();
    assert!(commanded.contains(&"home-laptop") && commanded.contains(&"home-light-kitchen"));
    assert!(commanded.iter().all(|d| d.starts_with("home-")));
    assert!(!commanded.contains(&"home-fridge"));
    assert!(!commanded.contains(&"home-microwave"));
    let pres = svc.dispatch(&ApiRequest::get("/api/presence/alice"));
    assert_eq!(pres.body["fences"]["home"]["state"], "outside");
    assert!((pres.body["fences"]["home"]["distance_m"].as_f64().unwrap() - 1000.0).abs() < 0.5);
    assert_eq!(svc.dispatch(&ApiRequest::get("/api/presence/bob")).status, 404);
}

#[test]
fn bad_and_in_band_fixes() {
    let mut rt = runtime(Box::new(MemoryStore::default()));
    let good = gga_sentence(destination(HOME, 0.0, 350.0), 43_200);
    let mut bad = good.clone().into_bytes();
    let star = bad.iter().position(|b| *b == b'*').unwrap();
    bad[star + 1] = if bad[star + 1] == b'0' { b'1' } else { b'0' };
    let bad = String::from_utf8(bad).unwrap();

    let out = rt
        .post_location("alice", &LocationPayload::Nmea { nmea: bad }, Timestamp(5))
        .unwrap();
    assert!(!out.accepted);
    assert_eq!(
        out.records.iter().map(|r| r.payload.kind()).collect::<Vec<_>>(),
        ["fix_rejected"]
    );

    for t in [10, 20, 30, 40] {
        let out = rt
            .post_location("alice", &LocationPayload::Nmea { nmea: good.clone() }, Timestamp(t))
            .unwrap();
        assert!(out.accepted);
        assert_eq!(
            out.records.iter().map(|r| r.payload.kind()).collect::<Vec<_>>(),
            ["fix_accepted"]
        );
    }
    let out = rt
        .post_location("alice", &LocationPayload::LatLon { lat: 91.0, lon: 0.0 }, Timestamp(50))
        .unwrap();
    assert!(!out.accepted);
}

fn bundle_bytes(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn replay_bundles_are_byte_identical() {
    let cfg = DeploymentConfig::bundled();
    let script = ScenarioScript::reference_day();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for (dir, transport) in dirs.iter().zip([Transport::Tcp, Transport::InProcess]) {
        let opts = ReplayOptions {
            transport,
            ..ReplayOptions::fast()
        };
        let result = replay(&cfg, &script, opts).unwrap();
        write_bundle(&result, dir.path()).unwrap();
    }
    let (a, b) = (bundle_bytes(dirs[0].path()), bundle_bytes(dirs[1].path()));
    assert_eq!(a.len(), 4);
    assert_eq!(a, b);
}

#[test]
fn empty_script_reports_zero() {
    let cfg = DeploymentConfig::bundled();
    let result = replay(&cfg, &ScenarioScript::empty("nothing"), ReplayOptions::fast()).unwrap();
    assert_eq!(result.start, result.end);
    assert!(result.report.sites.iter().all(|s| s.total_kwh == 0.0));
}

#[test]
fn replay_rejects_bad_input() {
    let cfg = DeploymentConfig::bundled();
    for speedup in [0.0, -1.0, f64::NAN] {
        let opts = ReplayOptions {
            speedup: Some(speedup),
            ..ReplayOptions::fast()
        };
        assert!(matches!(
            replay(&cfg, &ScenarioScript::reference_day(), opts),
            Err(RuntimeError::Validation(_))
        ));
    }
    let mut script = ScenarioScript::empty("bad");
    script.manual_events.push(ManualEvent {
        at: ClockOffset(60),
        device: "toaster".into(),
        state: PowerState::On,
    });
    assert!(matches!(
        replay(&cfg, &script, ReplayOptions::fast()),
        Err(RuntimeError::Config(_))
    ));
}

fn busy_morning(rt: &mut Runtime) {
    let away = destination(HOME, 90.0, 2000.0);
    for (i, t) in (0..6).map(|i| (i, 100 + i * 60)) {
        let p = if i < 3 { away } else { destination(OFFICE, 10.0, 20.0) };
        rt.post_location(
            "alice",
            &LocationPayload::LatLon { lat: p.lat, lon: p.lon },
            Timestamp(t),
        )
        .unwrap();
    }
    rt.set_device("home-microwave", PowerState::On, Timestamp(600)).unwrap();
    rt.set_device("home-microwave", PowerState::Off, Timestamp(900))
        .unwrap();
}

#[test]
fn file_store_recovers_and_cuts_a_corrupt_tail() {
    let dir = tempfile::tempdir().unwrap();
    let expected = {
        let mut rt = runtime(Box::new(FileStore::open(dir.path()).unwrap())).with_snapshot_every(7);
        busy_morning(&mut rt);
        rt.state().clone()
    };
    let log = dir.path().join(FileStore::LOG);
    let mut f = std::fs::OpenOptions::new().append(true).open(&log).unwrap();
    f.write_all(b"{\"seq\": 99999, \"at\": 12, \"kind\": \"fix_acc")
        .unwrap();
    drop(f);

    let cfg = DeploymentConfig::bundled();
    let fleet = Arc::new(Mutex::new(cfg.build_fleet(Timestamp::ZERO).unwrap()));
    let store = Box::new(FileStore::open(dir.path()).unwrap());
    let (mut rt, report) = Runtime::recover(cfg.clone(), Timestamp::ZERO, Box::new(LocalLink(fleet)), store).unwrap();
    assert!(report.stopped.is_some());
    assert!(report.from_snapshot.is_some());
    assert_eq!(rt.state(), &expected);

    rt.set_device("home-laptop", PowerState::On, Timestamp(1000)).unwrap();
    let after = rt.state().clone();
    drop(rt);
    let loaded = FileStore::open(dir.path()).unwrap().load().unwrap();
    assert!(loaded.stopped.is_none());
    let (core, _) = recover_core(cfg, Timestamp::ZERO, &loaded).unwrap();
    assert_eq!(core.state(), &after);
}

#[test]
fn memory_store_replays_to_the_same_state() {
    let store = MemoryStore::default();
    let mut rt = runtime(Box::new(store.clone()));
    busy_morning(&mut rt);
    let (core, report) = recover_core(DeploymentConfig::bundled(), Timestamp::ZERO, &store.load().unwrap()).unwrap();
    assert_eq!(core.state(), rt.state());
    assert_eq!(report.applied, rt.events().len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn the_fridge_is_never_commanded(seed in any::<u64>(), nrules in 0usize..8, nfix in 1usize..40) {
        let mut r = rng(seed);
        let mut rt = runtime(Box::new(MemoryStore::default()));
        let rules = common::policy::random_rules(&mut r, rt.engine(), nrules);
        let mut t = 0;
        for rule in rules {
            t += 1;
            rt.put_rule(rule, Timestamp(t)).unwrap();
        }
        for _ in 0..nfix {
            t += r.gen_range(1..600);
            let centre = if r.gen_bool(0.5) { HOME } else { OFFICE };
            let p = destination(centre, r.gen_range(0.0..360.0), r.gen_range(0.0..1500.0));
            rt.post_location("alice", &LocationPayload::LatLon { lat: p.lat, lon: p.lon }, Timestamp(t)).unwrap();
        }
        for rec in rt.events() {
            if let EventPayload::DeviceCommand { device_id, .. } = &rec.payload {
                prop_assert_ne!(device_id.as_str(), "home-fridge");
            }
        }
        prop_assert_eq!(rt.state().fleet.get("home-fridge").unwrap().state, PowerState::On);
    }
}

#[test]
fn http_smoke() {
    let (svc, _) = service();
    let mut server = HttpServer::start("127.0.0.1:0", Arc::new(svc)).unwrap();
    let mut s = TcpStream::connect(server.local_addr()).unwrap();
    write!(s, "GET /api/devices HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n").unwrap();
    let mut text = String::new();
    s.read_to_string(&mut text).unwrap();
    assert!(text.starts_with("HTTP/1.1 200"), "{text}");
    let body = &text[text.find("\r\n\r\n").unwrap() + 4..];
    let v: Value = serde_json::from_str(body).unwrap();
    assert_eq!(
        v["devices"].as_array().unwrap().len(),
        DeploymentConfig::bundled().devices.len()
    );

    let mut s = TcpStream::connect(server.local_addr()).unwrap();
    let payload = r#"{"state":"on"}"#;
    write!(
        s,
        "POST /api/devices/office-laptop/state HTTP/1.1\r\nHost: x\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    )
    .unwrap();
    let mut text = String::new();
    s.read_to_string(&mut text).unwrap();
    assert!(text.starts_with("HTTP/1.1 200"), "{text}");
    server.shutdown();
}
