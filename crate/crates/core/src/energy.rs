//! Energy accounting: the metered ledger, daily mode estimates, the
//! actual-versus-modes comparison and per-realm roll-ups.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::devicenet::Fleet;
use crate::policy::{ModeName, ModeTable, OnCondition, RealmTree};
use crate::time::Timestamp;

/// Watt-hours per BTU.
pub const WH_PER_BTU: f64 = 0.293;
pub const JOULES_PER_BTU: f64 = 1055.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnergyError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("invalid schedule: {0}")]
    Schedule(String),
}

pub fn btu_to_kwh(btu: f64) -> f64 {
    btu * WH_PER_BTU / 1000.0
}

/// The same conversion through the joule definition (1 BTU = 1055 J).
pub fn btu_to_kwh_via_joules(btu: f64) -> f64 {
    btu * JOULES_PER_BTU / 3.6e6
}

/// How an occupant's day splits between office, home awake and sleep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UsageSchedule {
    pub hours_office: f64,
    pub hours_home_awake: f64,
    pub hours_sleep: f64,
}

impl Default for UsageSchedule {
    fn default() -> Self {
        Self {
            hours_office: 8.0,
            hours_home_awake: 8.0,
            hours_sleep: 8.0,
        }
    }
}

impl UsageSchedule {
    pub fn validate(&self) -> Result<(), EnergyError> {
        let parts = [self.hours_office, self.hours_home_awake, self.hours_sleep];
        if parts.iter().any(|h| !h.is_finite() || *h < 0.0) {
            return Err(EnergyError::Schedule("hours must be >= 0".into()));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 24.0).abs() > 1e-9 {
            return Err(EnergyError::Schedule(format!("hours sum to {sum}, not 24")));
        }
        Ok(())
    }

    pub fn hours(&self, on: OnCondition, fixed: Option<f64>) -> f64 {
        match on {
            OnCondition::Always => 24.0,
            OnCondition::ExceptSleeping => self.hours_office + self.hours_home_awake,
            OnCondition::AtHomeAwake => self.hours_home_awake,
            OnCondition::AtOffice => self.hours_office,
            OnCondition::Never => 0.0,
            OnCondition::Fixed => fixed.unwrap_or(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateLine {
    pub category: String,
    pub average_watts: f64,
    pub hours: f64,
    pub fraction: f64,
    pub kwh: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeEstimate {
    pub site: String,
    pub mode: ModeName,
    pub lines: Vec<EstimateLine>,
    pub total_kwh: f64,
}

impl ModeEstimate {
    pub fn line(&self, category: &str) -> Option<&EstimateLine> {
        self.lines.iter().find(|l| l.category == category)
    }
}

/// Categories that appear in reports even though nothing is controlled.
pub const UNCONTROLLED_CATEGORIES: [&str; 1] = ["hvac"];

/// Daily kWh of a site under a mode: for each category, the summed average
/// draw of its devices times the mode's on-hours times its participation.
pub fn estimate_mode(
    site: &str,
    mode: ModeName,
    schedule: &UsageSchedule,
    fleet: &Fleet,
    categories: &BTreeMap<String, String>,
    table: &ModeTable,
) -> Result<ModeEstimate, EnergyError> {
    schedule.validate()?;
    let mut watts: BTreeMap<&str, f64> = BTreeMap::new();
    for d in fleet.devices().filter(|d| d.building == site) {
        let cat = categories
            .get(&d.device_id)
            .ok_or_else(|| EnergyError::Config(format!("device {} has no category", d.device_id)))?;
        *watts.entry(cat.as_str()).or_default() += d.profile.average_watts();
    }
    let mut lines = vec![];
    for (cat, w) in &watts {
        let row = table
            .row(site, cat)
            .ok_or_else(|| EnergyError::Config(format!("no mode row for {site}/{cat}")))?;
        let e = row.entry(mode);
        let hours = schedule.hours(e.on, e.hours);
        lines.push(EstimateLine {
            category: cat.to_string(),
            average_watts: *w,
            hours,
            fraction: e.fraction,
            kwh: w * hours * e.fraction / 1000.0,
        });
    }
    for cat in UNCONTROLLED_CATEGORIES {
        if !watts.contains_key(cat) {
            lines.push(EstimateLine {
                category: cat.to_string(),
                average_watts: 0.0,
                hours: 0.0,
                fraction: 0.0,
                kwh: 0.0,
            });
        }
    }
    let total_kwh = lines.iter().map(|l| l.kwh).sum();
    Ok(ModeEstimate {
        site: site.to_string(),
        mode,
        lines,
        total_kwh,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub device_id: String,
    pub site: String,
    pub t0: Timestamp,
    pub t1: Timestamp,
    pub wh: f64,
}

/// Metered energy per device interval.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyLedger {
    entries: Vec<LedgerEntry>,
}

impl EnergyLedger {
    /// Appends an entry. Intervals of one device must not overlap and energy
    /// must be non-negative.
    pub fn append(&mut self, entry: LedgerEntry) -> Result<(), String> {
        if !(entry.wh >= 0.0) || entry.t1 < entry.t0 {
            return Err(format!("bad ledger entry {entry:?}"));
        }
        let overlaps = self
            .entries
            .iter()
            .any(|e| e.device_id == entry.device_id && e.t0 < entry.t1 && entry.t0 < e.t1);
        if overlaps {
            return Err(format!(
                "ledger entry for {} overlaps an existing interval",
                entry.device_id
            ));
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SiteTotal {
    pub site: String,
    pub per_device_kwh: BTreeMap<String, f64>,
    pub total_kwh: f64,
}

/// Sums the ledger for one site over `[t0, t1]`.
///
/// Entries straddling a window edge are pro-rated by time, which is exact
/// for constant draws; callers close intervals at the window edges when they
/// need exact duty-cycle figures.
pub fn ledger_total(ledger: &EnergyLedger, site: &str, t0: Timestamp, t1: Timestamp) -> SiteTotal {
    let mut per_device: BTreeMap<String, f64> = BTreeMap::new();
    for e in ledger.entries.iter().filter(|e| e.site == site) {
        let a = e.t0.max(t0);
        let b = e.t1.min(t1);
        let wh = if e.t0 >= t0 && e.t1 <= t1 {
            e.wh
        } else if b > a && e.t1 > e.t0 {
            e.wh * (b.0 - a.0) as f64 / (e.t1.0 - e.t0.0) as f64
        } else {
            0.0
        };
        if e.t0 < t1 && e.t1 >= t0 {
            *per_device.entry(e.device_id.clone()).or_default() += wh / 1000.0;
        }
    }
    let total_kwh = per_device.values().sum();
    SiteTotal {
        site: site.to_string(),
        per_device_kwh: per_device,
        total_kwh,
    }
}

/// Groups per-device kWh by category.
pub fn by_category(total: &SiteTotal, categories: &BTreeMap<String, String>) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for (dev, kwh) in &total.per_device_kwh {
        let cat = categories.get(dev).cloned().unwrap_or_else(|| dev.clone());
        *out.entry(cat).or_insert(0.0) += kwh;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub site: String,
    pub actual_kwh: f64,
    pub luxury_kwh: f64,
    pub moderate_kwh: f64,
    pub frugal_kwh: f64,
    pub ratio_luxury: Option<f64>,
    pub ratio_moderate: Option<f64>,
    pub ratio_frugal: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub sites: Vec<ComparisonRow>,
    pub combined: ComparisonRow,
}

fn ratio(actual: f64, estimate: f64) -> Option<f64> {
    if actual == 0.0 {
        Some(0.0)
    } else if estimate == 0.0 {
        None
    } else {
        Some(actual / estimate)
    }
}

fn row(site: &str, actual: f64, lux: f64, moder: f64, frug: f64) -> ComparisonRow {
    ComparisonRow {
        site: site.to_string(),
        actual_kwh: actual,
        luxury_kwh: lux,
        moderate_kwh: moder,
        frugal_kwh: frug,
        ratio_luxury: ratio(actual, lux),
        ratio_moderate: ratio(actual, moder),
        ratio_frugal: ratio(actual, frug),
    }
}

/// Actual vs. mode estimates per site and combined. Ratios are
/// `actual / estimate`; `None` when the estimate is zero but actual is not.
pub fn comparison_report(actual: &[SiteTotal], estimates: &[ModeEstimate]) -> Result<ComparisonReport, EnergyError> {
    let mut sites = vec![];
    let (mut ca, mut cl, mut cm, mut cf) = (0.0, 0.0, 0.0, 0.0);
    for a in actual {
        let est = |mode: ModeName| {
            estimates
                .iter()
                .find(|e| e.site == a.site && e.mode == mode)
                .map(|e| e.total_kwh)
                .ok_or_else(|| EnergyError::Config(format!("missing {mode} estimate for {}", a.site)))
        };
        let (l, m, f) = (est(ModeName::Luxury)?, est(ModeName::Moderate)?, est(ModeName::Frugal)?);
        ca += a.total_kwh;
        cl += l;
        cm += m;
        cf += f;
        sites.push(row(&a.site, a.total_kwh, l, m, f));
    }
    Ok(ComparisonReport {
        sites,
        combined: row("combined", ca, cl, cm, cf),
    })
}

impl ComparisonReport {
    pub fn to_csv(&self) -> String {
        let fmt_opt = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v:.4}"));
        let mut out = String::from(
            "site,actual_kwh,luxury_kwh,moderate_kwh,frugal_kwh,ratio_luxury,ratio_moderate,ratio_frugal\n",
        );
        for r in self.sites.iter().chain(std::iter::once(&self.combined)) {
            out.push_str(&format!(
                "{},{:.4},{:.4},{:.4},{:.4},{},{},{}\n",
                r.site,
                r.actual_kwh,
                r.luxury_kwh,
                r.moderate_kwh,
                r.frugal_kwh,
                fmt_opt(r.ratio_luxury),
                fmt_opt(r.ratio_moderate),
                fmt_opt(r.ratio_frugal)
            ));
        }
        out
    }
}

/// Totals per realm, each realm summing its whole subtree.
pub fn realm_rollup(
    per_device_kwh: &BTreeMap<String, f64>,
    placement: &BTreeMap<String, String>,
    realms: &RealmTree,
) -> Result<BTreeMap<String, f64>, EnergyError> {
    let mut totals: BTreeMap<String, f64> = realms.realms().map(|r| (r.realm_id.clone(), 0.0)).collect();
    for (device, kwh) in per_device_kwh {
        let realm = placement
            .get(device)
            .filter(|r| realms.contains(r))
            .ok_or_else(|| EnergyError::Config(format!("device {device} is not placed in the realm tree")))?;
        for r in realms.chain(realm) {
            *totals.get_mut(&r.realm_id).expect("realm listed") += kwh;
        }
    }
    Ok(totals)
}
