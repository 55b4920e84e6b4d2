//! Lab categorization against reference ranges, with two-phase imputation
//! of missing ranges.
//!
//! An observation that carries a complete range is categorized against it
//! (`RAW`). A missing range is first taken from the most frequent range among
//! the same patient's other ranged occurrences of the test (`LOCAL_IMPUTED`),
//! and failing that from the most frequent observed range for the test across
//! the whole population (`GLOBAL_IMPUTED`). Population modes are counted over
//! observed ranges only. If the test never carries a range anywhere, the
//! observation becomes an `UNCATEGORIZED` event instead of being dropped.
//!
//! Ties between equally frequent ranges go to the range used on the most
//! recent date, then to the smaller low bound, then to the smaller high bound.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fhir::RawObservation;
use crate::model::{Category, EventRecord, EventType, Provenance};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRange {
    pub low: f64,
    pub high: f64,
}

impl ReferenceRange {
    pub fn new(low: f64, high: f64) -> Result<Self> {
        if !(low.is_finite() && high.is_finite()) || low > high {
            return Err(Error::InvalidRange { low, high });
        }
        Ok(ReferenceRange { low, high })
    }

    /// Exact-equality key; `-0.0` and `0.0` are the same bound.
    fn key(&self) -> (u64, u64) {
        ((self.low + 0.0).to_bits(), (self.high + 0.0).to_bits())
    }
}

pub fn categorize(value: f64, range: ReferenceRange) -> Result<Category> {
    if !value.is_finite() {
        return Err(Error::InvalidLabValue(value));
    }
    Ok(if value > range.high {
        Category::High
    } else if value < range.low {
        Category::Low
    } else {
        Category::Normal
    })
}

impl RawObservation {
    /// The observation's own range, when both bounds are present and ordered.
    pub fn reference_range(&self) -> Option<ReferenceRange> {
        match (self.reference_low, self.reference_high) {
            (Some(low), Some(high)) => ReferenceRange::new(low, high).ok(),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CategorizedLabEvent {
    pub patient_id: String,
    pub date: NaiveDate,
    pub loinc_code: String,
    pub category: Category,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct UncategorizedLabEvent {
    pub patient_id: String,
    pub date: NaiveDate,
    pub loinc_code: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImputationReport {
    pub observations: usize,
    pub by_provenance: BTreeMap<Provenance, usize>,
    pub by_code: BTreeMap<String, BTreeMap<Provenance, usize>>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImputationOutput {
    pub categorized: Vec<CategorizedLabEvent>,
    pub uncategorized: Vec<UncategorizedLabEvent>,
    pub report: ImputationReport,
}

impl ImputationOutput {
    /// The lab results as dataset events, categorized ones as
    /// `<loinc>:<CATEGORY>` and the rest as `<loinc>:UNCATEGORIZED`.
    pub fn to_events(&self) -> Result<Vec<EventRecord>> {
        let mut events = Vec::with_capacity(self.categorized.len() + self.uncategorized.len());
        for e in &self.categorized {
            events.push(EventRecord {
                patient_id: e.patient_id.clone(),
                date: e.date,
                event_type: EventType::lab(&e.loinc_code, e.category)?,
                provenance: e.provenance,
            });
        }
        for e in &self.uncategorized {
            events.push(EventRecord {
                patient_id: e.patient_id.clone(),
                date: e.date,
                event_type: EventType::uncategorized_lab(&e.loinc_code)?,
                provenance: Provenance::Uncategorized,
            });
        }
        events.sort();
        Ok(events)
    }
}

#[derive(Default)]
struct RangeTally {
    counts: HashMap<(u64, u64), (usize, NaiveDate, ReferenceRange)>,
}

impl RangeTally {
    fn add(&mut self, range: ReferenceRange, date: NaiveDate) {
        self.counts
            .entry(range.key())
            .and_modify(|(n, latest, _)| {
                *n += 1;
                *latest = (*latest).max(date);
            })
            .or_insert((1, date, range));
    }

    fn mode(&self) -> Option<ReferenceRange> {
        self.counts
            .values()
            .max_by(|a, b| {
                a.0.cmp(&b.0)
                    .then(a.1.cmp(&b.1))
                    .then(b.2.low.total_cmp(&a.2.low))
                    .then(b.2.high.total_cmp(&a.2.high))
            })
            .map(|&(_, _, range)| range)
    }
}

enum Outcome {
    Categorized(CategorizedLabEvent),
    Uncategorized(UncategorizedLabEvent),
}

/// Imputes all observations of one LOINC code.
fn impute_code(code: &str, observations: &[&RawObservation]) -> Result<Vec<Outcome>> {
    let mut population = RangeTally::default();
    let mut per_patient: HashMap<&str, RangeTally> = HashMap::new();
    for o in observations {
        if let Some(range) = o.reference_range() {
            population.add(range, o.date);
            per_patient.entry(&o.patient_id).or_default().add(range, o.date);
        }
    }
    let global = population.mode();
    let local: HashMap<&str, ReferenceRange> = per_patient
        .iter()
        .filter_map(|(&p, tally)| tally.mode().map(|r| (p, r)))
        .collect();

    observations
        .iter()
        .map(|o| {
            let chosen = match o.reference_range() {
                Some(r) => Some((r, Provenance::Raw)),
                None => match local.get(o.patient_id.as_str()) {
                    Some(&r) => Some((r, Provenance::LocalImputed)),
                    None => global.map(|r| (r, Provenance::GlobalImputed)),
                },
            };
            Ok(match chosen {
                Some((range, provenance)) => Outcome::Categorized(CategorizedLabEvent {
                    patient_id: o.patient_id.clone(),
                    date: o.date,
                    loinc_code: code.to_string(),
                    category: categorize(o.value, range)?,
                    provenance,
                }),
                None => {
                    if !o.value.is_finite() {
                        return Err(Error::InvalidLabValue(o.value));
                    }
                    Outcome::Uncategorized(UncategorizedLabEvent {
                        patient_id: o.patient_id.clone(),
                        date: o.date,
                        loinc_code: code.to_string(),
                    })
                }
            })
        })
        .collect()
}

pub fn impute_and_categorize(observations: &[RawObservation]) -> Result<ImputationOutput> {
    let mut by_code: BTreeMap<&str, Vec<&RawObservation>> = BTreeMap::new();
    for o in observations {
        by_code.entry(&o.loinc_code).or_default().push(o);
    }

    let mut warnings = Vec::new();
    for (code, obs) in &by_code {
        let units: BTreeSet<&str> = obs.iter().filter_map(|o| o.unit.as_deref()).collect();
        if units.len() > 1 {
            warnings.push(format!(
                "LOINC {code} mixes units {}; ranges are applied without conversion",
                units.into_iter().collect::<Vec<_>>().join(", ")
            ));
        }
        let inverted = obs
            .iter()
            .filter(|o| matches!((o.reference_low, o.reference_high), (Some(l), Some(h)) if l > h))
            .count();
        if inverted > 0 {
            warnings.push(format!("LOINC {code}: {inverted} inverted reference range(s) treated as missing"));
        }
    }

    let partitions: Vec<(&str, Vec<Outcome>)> = by_code
        .par_iter()
        .map(|(&code, obs)| impute_code(code, obs).map(|out| (code, out)))
        .collect::<Result<_>>()?;

    let mut output = ImputationOutput {
        report: ImputationReport {
            observations: observations.len(),
            warnings,
            ..Default::default()
        },
        ..Default::default()
    };
    for (code, outcomes) in partitions {
        let code_counts = output.report.by_code.entry(code.to_string()).or_default();
        for outcome in outcomes {
            let provenance = match outcome {
                Outcome::Categorized(e) => {
                    let p = e.provenance;
                    output.categorized.push(e);
                    p
                }
                Outcome::Uncategorized(e) => {
                    output.uncategorized.push(e);
                    Provenance::Uncategorized
                }
            };
            *code_counts.entry(provenance).or_default() += 1;
            *output.report.by_provenance.entry(provenance).or_default() += 1;
        }
    }
    output.categorized.sort();
    output.uncategorized.sort();
    Ok(output)
}
