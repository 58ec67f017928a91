use std::collections::BTreeMap;

use chrono::{Datelike, NaiveDate, Timelike, Weekday};
use serde::Serialize;

use super::{Channel, HourlyDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Subset {
    /// Weekdays, [08:00, 20:00).
    OfficeHours,
    /// Weekdays outside office hours.
    AfterHours,
    Weekend,
    FallSemester,
    SummerHoliday,
}

impl Subset {
    pub const ALL: [Subset; 5] = [
        Subset::OfficeHours,
        Subset::AfterHours,
        Subset::Weekend,
        Subset::FallSemester,
        Subset::SummerHoliday,
    ];
}

/// Academic periods as half-open date ranges `[start, end)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Calendar {
    pub office_start_hour: u32,
    pub office_end_hour: u32,
    pub periods: Vec<(Subset, NaiveDate, NaiveDate)>,
}

impl Calendar {
    /// Washington University 2011: fall semester from Aug 30, summer break
    /// from May 10.
    pub fn academic_2011() -> Self {
        let d = |m, day| NaiveDate::from_ymd_opt(2011, m, day).expect("valid date");
        Self {
            office_start_hour: 8,
            office_end_hour: 20,
            periods: vec![
                (Subset::FallSemester, d(8, 30), d(12, 9)),
                (Subset::SummerHoliday, d(5, 10), d(8, 29)),
            ],
        }
    }

    pub fn period_days(&self, subset: Subset) -> Option<i64> {
        self.periods
            .iter()
            .find(|p| p.0 == subset)
            .map(|(_, a, b)| (*b - *a).num_days())
    }

    /// The weekday/weekend class of an hour starting at `at`.
    pub fn weekly_class(&self, at: chrono::NaiveDateTime) -> Subset {
        match at.weekday() {
            Weekday::Sat | Weekday::Sun => Subset::Weekend,
            _ if (self.office_start_hour..self.office_end_hour).contains(&at.hour()) => Subset::OfficeHours,
            _ => Subset::AfterHours,
        }
    }

    pub fn in_period(&self, subset: Subset, date: NaiveDate) -> bool {
        self.periods
            .iter()
            .any(|(s, a, b)| *s == subset && *a <= date && date < *b)
    }
}

impl Default for Calendar {
    fn default() -> Self {
        Self::academic_2011()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsetStats {
    pub subset: Subset,
    /// Dataset hours falling in the subset, present or not.
    pub hours: usize,
    /// Length of the calendar period, for date-range subsets.
    pub period_days: Option<i64>,
    pub empty: bool,
    /// Energy channels: mean per 24 h. Condition channels: hourly mean.
    pub averages: BTreeMap<Channel, Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsetReport {
    pub subsets: Vec<SubsetStats>,
}

impl SubsetReport {
    pub fn get(&self, subset: Subset) -> &SubsetStats {
        self.subsets
            .iter()
            .find(|s| s.subset == subset)
            .expect("all subsets reported")
    }

    pub fn to_csv(&self) -> String {
        let channels: Vec<Channel> = self
            .subsets
            .iter()
            .flat_map(|s| s.averages.keys().copied())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut out = String::from("subset,hours,period_days,empty");
        for c in &channels {
            out.push_str(&format!(",{c}"));
        }
        out.push('\n');
        for s in &self.subsets {
            out.push_str(&format!(
                "{:?},{},{},{}",
                s.subset,
                s.hours,
                s.period_days.map(|d| d.to_string()).unwrap_or_default(),
                s.empty
            ));
            for c in &channels {
                out.push(',');
                if let Some(Some(v)) = s.averages.get(c) {
                    out.push_str(&format!("{v:.6}"));
                }
            }
            out.push('\n');
        }
        out
    }
}

fn normalized(channel: Channel, values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    Some(if channel.is_extensive() { mean * 24.0 } else { mean })
}

/// Groups hours into occupancy subsets and averages each channel.
pub fn split_subsets(data: &HourlyDataset, calendar: &Calendar) -> SubsetReport {
    let mut members: BTreeMap<Subset, Vec<usize>> = Subset::ALL.iter().map(|s| (*s, Vec::new())).collect();
    for h in 0..data.hours {
        let at = data.hour_at(h);
        members.get_mut(&calendar.weekly_class(at)).expect("seeded").push(h);
        for s in [Subset::FallSemester, Subset::SummerHoliday] {
            if calendar.in_period(s, at.date()) {
                members.get_mut(&s).expect("seeded").push(h);
            }
        }
    }
    let subsets = members
        .into_iter()
        .map(|(subset, hours)| {
            let averages = data
                .channels
                .keys()
                .map(|&c| {
                    let vals: Vec<f64> = hours.iter().filter_map(|&h| data.value(c, h)).collect();
                    (c, normalized(c, &vals))
                })
                .collect();
            SubsetStats {
                subset,
                hours: hours.len(),
                period_days: calendar.period_days(subset),
                empty: hours.is_empty(),
                averages,
            }
        })
        .collect();
    SubsetReport { subsets }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DailyRecord {
    pub date: NaiveDate,
    /// Hours of the day with every channel present.
    pub complete_hours: usize,
    pub partial: bool,
    /// Energy channels: daily total. Condition channels: daily mean.
    pub values: BTreeMap<Channel, Option<f64>>,
}

/// One record per calendar day touched by the dataset.
pub fn daily_aggregate(data: &HourlyDataset) -> Vec<DailyRecord> {
    let mut days: BTreeMap<NaiveDate, Vec<usize>> = BTreeMap::new();
    for h in 0..data.hours {
        days.entry(data.hour_at(h).date()).or_default().push(h);
    }
    days.into_iter()
        .map(|(date, hours)| {
            let complete_hours = hours
                .iter()
                .filter(|&&h| data.channels.keys().all(|&c| data.value(c, h).is_some()))
                .count();
            let values = data
                .channels
                .keys()
                .map(|&c| {
                    let vals: Vec<f64> = hours.iter().filter_map(|&h| data.value(c, h)).collect();
                    let v = (!vals.is_empty()).then(|| {
                        let sum: f64 = vals.iter().sum();
                        if c.is_extensive() {
                            sum
                        } else {
                            sum / vals.len() as f64
                        }
                    });
                    (c, v)
                })
                .collect();
            DailyRecord {
                date,
                complete_hours,
                partial: complete_hours < 24,
                values,
            }
        })
        .collect()
}

pub fn daily_to_csv(records: &[DailyRecord]) -> String {
    let channels: Vec<Channel> = records
        .first()
        .map(|r| r.values.keys().copied().collect())
        .unwrap_or_default();
    let mut out = String::from("date,complete_hours,partial");
    for c in &channels {
        out.push_str(&format!(",{c}"));
    }
    out.push('\n');
    for r in records {
        out.push_str(&format!("{},{},{}", r.date, r.complete_hours, r.partial));
        for c in &channels {
            out.push(',');
            if let Some(Some(v)) = r.values.get(c) {
                out.push_str(&format!("{v:.6}"));
            }
        }
        out.push('\n');
    }
    out
}
