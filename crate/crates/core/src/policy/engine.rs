use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::config::{Control, DeploymentConfig};
use crate::devicenet::PowerState;
use crate::presence::{PresenceEvent, Zone};

use super::{
    participating_count, resolve, Action, Condition, Decision, DeviceScope, ModeTable, PolicyError, PolicyRule,
    PresenceContext, RealmLevel, RealmTree, ScopedRule, UserMode,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceInfo {
    pub device_id: String,
    pub building: String,
    pub realm: String,
    pub category: String,
    pub control: Control,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteBinding {
    pub fence: String,
    pub realm: String,
    pub devices: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserBinding {
    pub user: String,
    pub mode: UserMode,
    pub sites: Vec<SiteBinding>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceCommand {
    pub device_id: String,
    pub state: PowerState,
}

/// Output of evaluating a set of devices: every decision reached, and the
/// subset that needs a command because the device is in another state.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Evaluation {
    pub decisions: Vec<Decision>,
    pub commands: Vec<DeviceCommand>,
    pub unknown_user: bool,
}

/// Realms, rules, bindings and modes for one deployment.
///
/// Rules are checked when added, so evaluation itself never fails.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEngine {
    realms: RealmTree,
    fences: BTreeSet<String>,
    devices: BTreeMap<String, DeviceInfo>,
    users: BTreeMap<String, UserBinding>,
    mode_table: ModeTable,
    base_rules: Vec<ScopedRule>,
    mode_rules: BTreeMap<String, Vec<ScopedRule>>,
}

impl PolicyEngine {
    pub fn new(cfg: &DeploymentConfig) -> Result<Self, PolicyError> {
        let realms = RealmTree::build(
            cfg.realms
                .iter()
                .map(|r| (r.id.as_str(), r.parent.as_deref(), r.name.as_str())),
        )?;
        let devices: BTreeMap<String, DeviceInfo> = cfg
            .devices
            .iter()
            .map(|d| {
                (
                    d.id.clone(),
                    DeviceInfo {
                        device_id: d.id.clone(),
                        building: d.building.clone(),
                        realm: d.realm.clone(),
                        category: d.category.clone(),
                        control: d.control,
                    },
                )
            })
            .collect();
        for d in devices.values() {
            if !realms.contains(&d.realm) {
                return Err(PolicyError::Config(format!(
                    "device {} in unknown realm {}",
                    d.device_id, d.realm
                )));
            }
        }
        let users = cfg
            .users
            .iter()
            .map(|u| {
                (
                    u.id.clone(),
                    UserBinding {
                        user: u.id.clone(),
                        mode: u.mode.clone(),
                        sites: u
                            .sites
                            .iter()
                            .map(|s| SiteBinding {
                                fence: s.fence.clone(),
                                realm: s.realm.clone(),
                                devices: s.devices.clone(),
                            })
                            .collect(),
                    },
                )
            })
            .collect();
        let mut engine = Self {
            realms,
            fences: cfg.fences.iter().map(|f| f.id.clone()).collect(),
            devices,
            users,
            mode_table: cfg.mode_table.clone(),
            base_rules: vec![],
            mode_rules: BTreeMap::new(),
        };
        for u in engine.users.values() {
            for s in &u.sites {
                if !engine.realms.contains(&s.realm) {
                    return Err(PolicyError::Config(format!(
                        "user {} bound to unknown realm {}",
                        u.user, s.realm
                    )));
                }
            }
        }
        for rule in &cfg.rules {
            engine.put_rule(rule.clone())?;
        }
        let users: Vec<(String, UserMode)> = engine
            .users
            .values()
            .map(|u| (u.user.clone(), u.mode.clone()))
            .collect();
        for (user, mode) in users {
            engine.set_user_mode(&user, mode)?;
        }
        Ok(engine)
    }

    pub fn realms(&self) -> &RealmTree {
        &self.realms
    }

    pub fn mode_table(&self) -> &ModeTable {
        &self.mode_table
    }

    pub fn device(&self, id: &str) -> Option<&DeviceInfo> {
        self.devices.get(id)
    }

    pub fn devices(&self) -> impl Iterator<Item = &DeviceInfo> {
        self.devices.values()
    }

    pub fn user(&self, id: &str) -> Option<&UserBinding> {
        self.users.get(id)
    }

    pub fn users(&self) -> impl Iterator<Item = &UserBinding> {
        self.users.values()
    }

    /// Configured rules followed by the rules generated from user modes.
    pub fn rules(&self) -> impl Iterator<Item = &ScopedRule> {
        self.base_rules.iter().chain(self.mode_rules.values().flatten())
    }

    fn expand_scope(&self, scope: &DeviceScope) -> Result<BTreeSet<String>, PolicyError> {
        let cfg = |m: String| PolicyError::Config(m);
        match scope {
            DeviceScope::Devices(ids) => ids
                .iter()
                .map(|id| {
                    self.devices
                        .contains_key(id)
                        .then(|| id.clone())
                        .ok_or_else(|| cfg(format!("unknown device {id} in scope")))
                })
                .collect(),
            DeviceScope::Selector(sel) => {
                let pick = |f: &dyn Fn(&DeviceInfo) -> bool| {
                    self.devices
                        .values()
                        .filter(|d| f(d))
                        .map(|d| d.device_id.clone())
                        .collect::<BTreeSet<_>>()
                };
                match sel.split_once(':') {
                    None if sel == "all" => Ok(pick(&|_| true)),
                    Some(("building", b)) => Ok(pick(&|d| d.building == b)),
                    Some(("category", c)) => Ok(pick(&|d| d.category == c)),
                    Some(("realm", r)) => {
                        if !self.realms.contains(r) {
                            return Err(cfg(format!("selector names unknown realm {r}")));
                        }
                        Ok(pick(&|d| self.realms.is_ancestor_or_self(r, &d.realm)))
                    }
                    _ => Err(cfg(format!("bad selector {sel:?}"))),
                }
            }
        }
    }

    /// Checks a rule against the deployment and expands its scope.
    pub fn compile_rule(&self, rule: &PolicyRule) -> Result<ScopedRule, PolicyError> {
        let cfg = |m: String| PolicyError::Config(m);
        if !self.realms.contains(&rule.realm_id) {
            return Err(cfg(format!("rule {} in unknown realm {}", rule.rule_id, rule.realm_id)));
        }
        if let Condition::Presence { user, fence, .. } = &rule.condition {
            if !self.fences.contains(fence) {
                return Err(cfg(format!("rule {} references unknown fence {fence}", rule.rule_id)));
            }
            if !self.users.contains_key(user) {
                return Err(cfg(format!("rule {} references unknown user {user}", rule.rule_id)));
            }
        }
        let devices = self.expand_scope(&rule.device_scope)?;
        if devices.is_empty() {
            return Err(cfg(format!("rule {} scopes no devices", rule.rule_id)));
        }
        for id in &devices {
            let realm = &self.devices[id].realm;
            if !self.realms.is_ancestor_or_self(&rule.realm_id, realm) {
                return Err(cfg(format!(
                    "rule {} in realm {} scopes device {id} outside its subtree (realm {realm})",
                    rule.rule_id, rule.realm_id
                )));
            }
        }
        Ok(ScopedRule {
            rule: rule.clone(),
            devices,
        })
    }

    /// Adds a configured rule, or replaces the one with the same id.
    pub fn put_rule(&mut self, rule: PolicyRule) -> Result<(), PolicyError> {
        if rule.rule_id.starts_with("mode/") {
            return Err(PolicyError::Validation("rule ids under mode/ are reserved".into()));
        }
        let scoped = self.compile_rule(&rule)?;
        match self.base_rules.iter_mut().find(|r| r.rule.rule_id == rule.rule_id) {
            Some(slot) => *slot = scoped,
            None => self.base_rules.push(scoped),
        }
        Ok(())
    }

    /// Devices of `site` that a mode switches on, in binding order.
    pub fn participating(&self, user: &str, fence: &str, mode: &UserMode) -> BTreeSet<String> {
        let Some(site) = self
            .users
            .get(user)
            .and_then(|u| u.sites.iter().find(|s| s.fence == fence))
        else {
            return BTreeSet::new();
        };
        let mut groups: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for id in &site.devices {
            let d = &self.devices[id];
            if d.control == Control::Policy {
                groups.entry(d.category.as_str()).or_default().push(id);
            }
        }
        groups
            .into_iter()
            .flat_map(|(cat, ids)| {
                let k = participating_count(self.mode_table.fraction(fence, cat, mode), ids.len());
                ids.into_iter().take(k).map(str::to_string)
            })
            .collect()
    }

    /// Replaces a user's mode and regenerates the user-realm rules.
    /// Returns whether the mode changed.
    pub fn set_user_mode(&mut self, user: &str, mode: UserMode) -> Result<bool, PolicyError> {
        mode.validate()?;
        let binding = self
            .users
            .get(user)
            .ok_or_else(|| PolicyError::UnknownUser(user.to_string()))?;
        let changed = binding.mode != mode || !self.mode_rules.contains_key(user);
        let mut rules = vec![];
        for site in &binding.sites {
            let controlled: Vec<String> = site
                .devices
                .iter()
                .filter(|id| self.devices[*id].control == Control::Policy)
                .cloned()
                .collect();
            if controlled.is_empty() {
                continue;
            }
            let on = self.participating(user, &site.fence, &mode);
            let off: Vec<String> = controlled.iter().filter(|d| !on.contains(*d)).cloned().collect();
            let on: Vec<String> = controlled.iter().filter(|d| on.contains(*d)).cloned().collect();
            let base = format!("mode/{user}/{}", site.fence);
            let mut push = |suffix: &str, devices: Vec<String>, zone: Zone, action: Action| {
                if !devices.is_empty() {
                    rules.push(PolicyRule {
                        rule_id: format!("{base}/{suffix}"),
                        realm_id: site.realm.clone(),
                        device_scope: DeviceScope::Devices(devices),
                        condition: Condition::presence(user, &site.fence, zone),
                        action,
                        priority_note: format!("generated from {mode} mode"),
                    });
                }
            };
            push("present-on", on, Zone::Inside, Action::MandateOn);
            push("present-off", off, Zone::Inside, Action::MandateOff);
            push("away", controlled, Zone::Outside, Action::MandateOff);
        }
        let compiled = rules
            .iter()
            .map(|r| self.compile_rule(r))
            .collect::<Result<Vec<_>, _>>()?;
        self.mode_rules.insert(user.to_string(), compiled);
        if let Some(b) = self.users.get_mut(user) {
            b.mode = mode;
        }
        Ok(changed)
    }

    /// Resolves one device against the rules along its realm chain.
    pub fn decide(&self, device_id: &str, ctx: &PresenceContext) -> Option<Decision> {
        let device = self.devices.get(device_id)?;
        let chain = self.realms.chain(&device.realm);
        let levels: Vec<RealmLevel<'_>> = chain
            .iter()
            .map(|realm| RealmLevel {
                realm_id: &realm.realm_id,
                rules: self.rules().filter(|r| r.rule.realm_id == realm.realm_id).collect(),
            })
            .collect();
        resolve(&levels, device_id, ctx)
    }

    /// Decides each device and emits commands where the decision differs from
    /// `current`. Exempt and manual devices never receive commands.
    pub fn evaluate<'a>(
        &self,
        devices: impl IntoIterator<Item = &'a str>,
        ctx: &PresenceContext,
        current: &dyn Fn(&str) -> Option<PowerState>,
    ) -> Evaluation {
        let mut eval = Evaluation::default();
        let mut seen = BTreeSet::new();
        for id in devices {
            if !seen.insert(id) {
                continue;
            }
            let Some(info) = self.devices.get(id) else { continue };
            if info.control != Control::Policy {
                continue;
            }
            if let Some(decision) = self.decide(id, ctx) {
                if current(id) != Some(decision.desired_state) {
                    eval.commands.push(DeviceCommand {
                        device_id: id.to_string(),
                        state: decision.desired_state,
                    });
                }
                eval.decisions.push(decision);
            }
        }
        eval
    }

    /// Re-evaluates the user's devices in the building the event concerns.
    pub fn on_presence_event(
        &self,
        event: &PresenceEvent,
        ctx: &PresenceContext,
        current: &dyn Fn(&str) -> Option<PowerState>,
    ) -> Evaluation {
        let Some(user) = self.users.get(&event.user) else {
            log::warn!("presence event for unknown user {}", event.user);
            return Evaluation {
                unknown_user: true,
                ..Evaluation::default()
            };
        };
        let devices = user
            .sites
            .iter()
            .filter(|s| s.fence == event.fence_id)
            .flat_map(|s| s.devices.iter().map(String::as_str));
        self.evaluate(devices, ctx, current)
    }

    /// Re-evaluates every device bound to a user (after a mode change).
    pub fn evaluate_user(
        &self,
        user: &str,
        ctx: &PresenceContext,
        current: &dyn Fn(&str) -> Option<PowerState>,
    ) -> Evaluation {
        let Some(binding) = self.users.get(user) else {
            return Evaluation {
                unknown_user: true,
                ..Evaluation::default()
            };
        };
        let devices = binding.sites.iter().flat_map(|s| s.devices.iter().map(String::as_str));
        self.evaluate(devices, ctx, current)
    }

    /// Re-evaluates every device a rule scopes (after a rule edit).
    pub fn evaluate_rule_scope(
        &self,
        rule_id: &str,
        ctx: &PresenceContext,
        current: &dyn Fn(&str) -> Option<PowerState>,
    ) -> Evaluation {
        let devices: Vec<&str> = self
            .rules()
            .filter(|r| r.rule.rule_id == rule_id)
            .flat_map(|r| r.devices.iter().map(String::as_str))
            .collect();
        self.evaluate(devices, ctx, current)
    }
}
