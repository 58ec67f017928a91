//! Realm hierarchy, policy rules and conflict resolution.
//!
//! Rules live in realms that form a single tree (deployment, campus,
//! building, department, user). For a device, the rules of every realm on the
//! path from the root to the device's realm are consulted:
//!
//! 1. the shallowest realm with an applicable mandate decides;
//! 2. inside one realm `MandateOff` beats `MandateOn`;
//! 3. `Defer` hands the decision to deeper realms;
//! 4. with no applicable rule the device is left alone.

mod engine;
mod modes;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::devicenet::PowerState;
use crate::presence::Zone;

pub use engine::{DeviceCommand, DeviceInfo, Evaluation, PolicyEngine, SiteBinding, UserBinding};
pub use modes::{participating_count, ModeEntry, ModeName, ModeRow, ModeTable, OnCondition, UserMode};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("validation: {0}")]
    Validation(String),
    #[error("unknown user {0}")]
    UnknownUser(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Realm {
    pub realm_id: String,
    pub parent: Option<String>,
    pub name: String,
    pub depth: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RealmTree {
    realms: BTreeMap<String, Realm>,
}

impl RealmTree {
    /// Builds the tree from `(id, parent, name)` triples, checking for a
    /// single root, dangling parents and cycles.
    pub fn build<'a>(
        specs: impl IntoIterator<Item = (&'a str, Option<&'a str>, &'a str)>,
    ) -> Result<Self, PolicyError> {
        let specs: Vec<_> = specs.into_iter().collect();
        let cfg = |m: String| PolicyError::Config(m);
        let mut parents: BTreeMap<&str, Option<&str>> = BTreeMap::new();
        for (id, parent, _) in &specs {
            if parents.insert(id, *parent).is_some() {
                return Err(cfg(format!("duplicate realm {id}")));
            }
        }
        let roots: Vec<_> = parents.iter().filter(|(_, p)| p.is_none()).collect();
        if roots.len() != 1 {
            return Err(cfg(format!("realms need exactly one root, found {}", roots.len())));
        }
        let mut realms = BTreeMap::new();
        for (id, parent, name) in &specs {
            let mut depth = 0u32;
            let mut cursor = *parent;
            while let Some(p) = cursor {
                depth += 1;
                if depth as usize > specs.len() {
                    return Err(cfg(format!("realm cycle through {id}")));
                }
                cursor = *parents
                    .get(p)
                    .ok_or_else(|| cfg(format!("realm {id} has unknown ancestor {p}")))?;
            }
            realms.insert(
                id.to_string(),
                Realm {
                    realm_id: id.to_string(),
                    parent: parent.map(str::to_string),
                    name: name.to_string(),
                    depth,
                },
            );
        }
        Ok(Self { realms })
    }

    pub fn get(&self, id: &str) -> Option<&Realm> {
        self.realms.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.realms.contains_key(id)
    }

    pub fn realms(&self) -> impl Iterator<Item = &Realm> {
        self.realms.values()
    }

    /// Realms from the root down to `id` (inclusive).
    pub fn chain(&self, id: &str) -> Vec<&Realm> {
        let mut out = vec![];
        let mut cursor = self.realms.get(id);
        while let Some(r) = cursor {
            out.push(r);
            cursor = r.parent.as_deref().and_then(|p| self.realms.get(p));
        }
        out.reverse();
        out
    }

    pub fn is_ancestor_or_self(&self, ancestor: &str, id: &str) -> bool {
        self.chain(id).iter().any(|r| r.realm_id == ancestor)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Condition {
    /// Written as the string `"always"`.
    Always(AlwaysTag),
    Presence {
        user: String,
        fence: String,
        zone: Zone,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlwaysTag {
    Always,
}

impl Condition {
    pub const ALWAYS: Condition = Condition::Always(AlwaysTag::Always);

    pub fn presence(user: impl Into<String>, fence: impl Into<String>, zone: Zone) -> Self {
        Condition::Presence {
            user: user.into(),
            fence: fence.into(),
            zone,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    MandateOn,
    MandateOff,
    Defer,
}

/// Which devices a rule speaks for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceScope {
    Devices(Vec<String>),
    /// `all`, `building:<fence>`, `category:<name>` or `realm:<id>` (subtree).
    Selector(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyRule {
    pub rule_id: String,
    pub realm_id: String,
    pub device_scope: DeviceScope,
    pub condition: Condition,
    pub action: Action,
    #[serde(default)]
    pub priority_note: String,
}

/// The resolved command for one device, with the rules that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub device_id: String,
    pub desired_state: PowerState,
    /// `(realm_id, rule_id)` from root towards leaf: deferring rules passed
    /// through, then the deciding rule last.
    pub provenance: Vec<(String, String)>,
}

/// Zone per `(user, fence)`; anything missing counts as `Unknown`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PresenceContext {
    zones: BTreeMap<(String, String), Zone>,
}

impl PresenceContext {
    pub fn set(&mut self, user: &str, fence: &str, zone: Zone) {
        self.zones.insert((user.to_string(), fence.to_string()), zone);
    }

    pub fn zone(&self, user: &str, fence: &str) -> Zone {
        self.zones
            .get(&(user.to_string(), fence.to_string()))
            .copied()
            .unwrap_or(Zone::Unknown)
    }

    pub fn holds(&self, condition: &Condition) -> bool {
        match condition {
            Condition::Always(_) => true,
            Condition::Presence { user, fence, zone } => self.zone(user, fence) == *zone,
        }
    }
}

/// A rule together with its selector-expanded device set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScopedRule {
    pub rule: PolicyRule,
    pub devices: BTreeSet<String>,
}

/// Rules of one realm on a root-to-leaf chain.
#[derive(Debug, Clone)]
pub struct RealmLevel<'a> {
    pub realm_id: &'a str,
    pub rules: Vec<&'a ScopedRule>,
}

/// Resolves the desired state of `device_id` from rules gathered along one
/// root-to-leaf realm chain (`levels[0]` is the root). `None` means no-op.
pub fn resolve(levels: &[RealmLevel<'_>], device_id: &str, ctx: &PresenceContext) -> Option<Decision> {
    let mut provenance = vec![];
    for level in levels {
        let applicable: Vec<&PolicyRule> = level
            .rules
            .iter()
            .filter(|r| r.devices.contains(device_id) && ctx.holds(&r.rule.condition))
            .map(|r| &r.rule)
            .collect();
        let first = |action: Action| applicable.iter().find(|r| r.action == action);
        let decided = first(Action::MandateOff)
            .map(|r| (r, PowerState::Off))
            .or_else(|| first(Action::MandateOn).map(|r| (r, PowerState::On)));
        if let Some((rule, state)) = decided {
            provenance.push((level.realm_id.to_string(), rule.rule_id.clone()));
            return Some(Decision {
                device_id: device_id.to_string(),
                desired_state: state,
                provenance,
            });
        }
        if let Some(defer) = first(Action::Defer) {
            provenance.push((level.realm_id.to_string(), defer.rule_id.clone()));
        }
    }
    None
}
