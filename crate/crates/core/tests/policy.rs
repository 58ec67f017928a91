mod common;

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use smartenergy::devicenet::PowerState;
use smartenergy::policy::{
    resolve, Action, Condition, DeviceScope, ModeName, PolicyEngine, PolicyRule, PresenceContext, RealmLevel,
    ScopedRule, UserMode,
};
use smartenergy::presence::{PresenceEvent, PresenceKind, Zone};
use smartenergy::{DeploymentConfig, Timestamp};

use common::policy::{dominance_oracle, is_policy_controlled, random_context, random_rules};
use common::rng;

fn engine() -> (PolicyEngine, DeploymentConfig) {
    let cfg = DeploymentConfig::bundled();
    (PolicyEngine::new(&cfg).unwrap(), cfg)
}

fn ctx(home: Zone, office: Zone) -> PresenceContext {
    let mut c = PresenceContext::default();
    c.set("alice", "home", home);
    c.set("alice", "office", office);
    c
}

fn scoped(id: &str, realm: &str, action: Action, device: &str) -> ScopedRule {
    ScopedRule {
        rule: PolicyRule {
            rule_id: id.into(),
            realm_id: realm.into(),
            device_scope: DeviceScope::Devices(vec![device.into()]),
            condition: Condition::ALWAYS,
            action,
            priority_note: String::new(),
        },
        devices: [device.to_string()].into(),
    }
}

#[test]
fn defer_then_user_mandate() {
    let dept = scoped("d", "dept", Action::Defer, "lamp");
    let user = scoped("u", "user", Action::MandateOn, "lamp");
    let levels = [
        RealmLevel {
            realm_id: "dept",
            rules: vec![&dept],
        },
        RealmLevel {
            realm_id: "user",
            rules: vec![&user],
        },
    ];
    let d = resolve(&levels, "lamp", &PresenceContext::default()).unwrap();
    assert_eq!(d.desired_state, PowerState::On);
    assert_eq!(
        d.provenance,
        [
            ("dept".to_string(), "d".to_string()),
            ("user".to_string(), "u".to_string())
        ]
    );
}

#[test]
fn shallow_mandate_beats_deep() {
    let dept = scoped("d", "dept", Action::MandateOff, "lamp");
    let user = scoped("u", "user", Action::MandateOn, "lamp");
    let levels = [
        RealmLevel {
            realm_id: "dept",
            rules: vec![&dept],
        },
        RealmLevel {
            realm_id: "user",
            rules: vec![&user],
        },
    ];
    let d = resolve(&levels, "lamp", &PresenceContext::default()).unwrap();
    assert_eq!(d.desired_state, PowerState::Off);
    assert_eq!(d.provenance[0].0, "dept");
}

#[test]
fn home_exit_spares_the_fridge() {
    let (mut e, cfg) = engine();
    e.set_user_mode("alice", UserMode::Preset(ModeName::Luxury)).unwrap();
    let all_on: BTreeMap<String, PowerState> = cfg.devices.iter().map(|d| (d.id.clone(), PowerState::On)).collect();
    let ev = PresenceEvent {
        user: "alice".into(),
        fence_id: "home".into(),
        kind: PresenceKind::Exit,
        at: Timestamp(0),
    };
    let eval = e.on_presence_event(&ev, &ctx(Zone::Outside, Zone::Outside), &|id| all_on.get(id).copied());
    let ids: BTreeSet<&str> = eval.commands.iter().map(|c| c.device_id.as_str()).collect();
    assert!(!ids.contains("home-fridge"));
    assert!(!ids.contains("home-microwave"));
    assert!(ids.contains("home-laptop"));
    assert_eq!(ids.iter().filter(|i| i.starts_with("home-light")).count(), 5);
    assert!(eval.commands.iter().all(|c| c.state == PowerState::Off));
}

#[test]
fn unknown_user_event_yields_nothing() {
    let (e, _) = engine();
    let ev = PresenceEvent {
        user: "mallory".into(),
        fence_id: "home".into(),
        kind: PresenceKind::Enter,
        at: Timestamp(0),
    };
    let eval = e.on_presence_event(&ev, &PresenceContext::default(), &|_| None);
    assert!(eval.unknown_user);
    assert!(eval.commands.is_empty());
}

#[test]
fn bad_fractions_rejected() {
    let (mut e, _) = engine();
    let mode = UserMode::Custom {
        custom: [("lighting".to_string(), 1.5)].into(),
    };
    assert!(e.set_user_mode("alice", mode).is_err());
}

#[test]
fn rules_referencing_unknown_fence_fail_at_load() {
    let (mut e, _) = engine();
    let rule = PolicyRule {
        rule_id: "x".into(),
        realm_id: "home/alice".into(),
        device_scope: DeviceScope::Selector("building:home".into()),
        condition: Condition::presence("alice", "garage", Zone::Inside),
        action: Action::MandateOn,
        priority_note: String::new(),
    };
    assert!(e.put_rule(rule).is_err());
}

fn on_set(e: &PolicyEngine, mode: &UserMode) -> BTreeSet<String> {
    let mut e = e.clone();
    e.set_user_mode("alice", mode.clone()).unwrap();
    let c = ctx(Zone::Inside, Zone::Inside);
    e.devices()
        .filter(|d| {
            e.decide(&d.device_id, &c)
                .is_some_and(|x| x.desired_state == PowerState::On)
        })
        .map(|d| d.device_id.clone())
        .collect()
}

#[test]
fn preset_on_sets_nest() {
    let (e, _) = engine();
    let [lux, moder, frug] = ModeName::ALL.map(|m| on_set(&e, &UserMode::Preset(m)));
    assert!(frug.is_subset(&moder), "{frug:?} vs {moder:?}");
    assert!(moder.is_subset(&lux));
    // Frugal: three of five home lights, all office lights, no office laptop
    assert_eq!(frug.iter().filter(|d| d.starts_with("home-light")).count(), 3);
    assert_eq!(frug.iter().filter(|d| d.starts_with("office-light")).count(), 6);
    assert!(frug.contains("office-desktop"));
    assert!(!frug.contains("office-laptop"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn random_rule_sets_respect_exemption_and_dominance(seed in any::<u64>(), nrules in 1usize..12, steps in 1usize..20) {
        let mut r = rng(seed);
        let (mut e, cfg) = engine();
        for rule in random_rules(&mut r, &e, nrules) {
            e.put_rule(rule).unwrap();
        }
        let mut current: BTreeMap<String, PowerState> = cfg.devices.iter().map(|d| (d.id.clone(), d.initial)).collect();
        for _ in 0..steps {
            let c = random_context(&mut r);
            let eval = e.evaluate_user("alice", &c, &|id| current.get(id).copied());
            for cmd in &eval.commands {
                prop_assert!(is_policy_controlled(&e, &cmd.device_id), "commanded {}", cmd.device_id);
                current.insert(cmd.device_id.clone(), cmd.state);
            }
            for d in e.devices() {
                let got = e.decide(&d.device_id, &c);
                let want = dominance_oracle(&e, &d.device_id, &c);
                prop_assert_eq!(got.as_ref().map(|x| x.desired_state), want.as_ref().map(|w| w.1));
                if let (Some(got), Some(want)) = (got, want) {
                    prop_assert_eq!(&got.provenance.last().unwrap().0, &want.0);
                }
            }
            // identical inputs, identical output
            prop_assert_eq!(e.evaluate_user("alice", &c, &|id| current.get(id).copied()),
                            e.evaluate_user("alice", &c, &|id| current.get(id).copied()));
        }
    }

    #[test]
    fn custom_fractions_are_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0, cat in prop::sample::select(vec!["lighting", "laptop", "desktop"])) {
        let (e, _) = engine();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let mk = |f: f64| UserMode::Custom { custom: [(cat.to_string(), f)].into() };
        prop_assert!(on_set(&e, &mk(lo)).is_subset(&on_set(&e, &mk(hi))));
    }
}

#[test]
fn zero_fraction_custom_mode_turns_everything_off_on_enter() {
    let (mut e, cfg) = engine();
    let custom: BTreeMap<String, f64> = ["lighting", "laptop", "desktop"]
        .iter()
        .map(|c| (c.to_string(), 0.0))
        .collect();
    e.set_user_mode("alice", UserMode::Custom { custom }).unwrap();
    let all_on: BTreeMap<String, PowerState> = cfg.devices.iter().map(|d| (d.id.clone(), PowerState::On)).collect();
    let ev = PresenceEvent {
        user: "alice".into(),
        fence_id: "office".into(),
        kind: PresenceKind::Enter,
        at: Timestamp(0),
    };
    let eval = e.on_presence_event(&ev, &ctx(Zone::Outside, Zone::Inside), &|id| all_on.get(id).copied());
    assert_eq!(eval.commands.len(), 8);
    assert!(eval.commands.iter().all(|c| c.state == PowerState::Off));
}
