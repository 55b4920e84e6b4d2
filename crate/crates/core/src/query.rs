//! Sentinel-aligned temporal queries.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CodeClass, CohortDataset, EventType, Provenance};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentinelPredicate {
    pub class: CodeClass,
    /// Exact codes; empty together with `prefixes` means any code of the class.
    #[serde(default)]
    pub codes: Vec<String>,
    #[serde(default)]
    pub prefixes: Vec<String>,
}

impl SentinelPredicate {
    pub fn any_of_class(class: CodeClass) -> Self {
        SentinelPredicate {
            class,
            codes: Vec::new(),
            prefixes: Vec::new(),
        }
    }

    /// Lab category codes also match on their underlying LOINC code.
    pub fn matches(&self, t: &EventType) -> bool {
        if t.class != self.class {
            return false;
        }
        if self.codes.is_empty() && self.prefixes.is_empty() {
            return true;
        }
        let candidates = [t.code.as_str(), t.base_code()];
        candidates.iter().any(|c| {
            self.codes.iter().any(|x| x == c) || self.prefixes.iter().any(|p| c.starts_with(p.as_str()))
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Events in `[sentinel, sentinel + window_days]`.
    #[default]
    After,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemporalQuery {
    pub sentinel: SentinelPredicate,
    pub window_days: i64,
    #[serde(default)]
    pub direction: Direction,
}

impl TemporalQuery {
    /// One year after the first diagnosis of any kind.
    pub fn first_diagnosis_year() -> Self {
        TemporalQuery {
            sentinel: SentinelPredicate::any_of_class(CodeClass::Icd10),
            window_days: 365,
            direction: Direction::After,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let q: TemporalQuery = serde_json::from_str(text).map_err(|e| Error::InvalidQuery(e.to_string()))?;
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_days < 1 {
            return Err(Error::InvalidWindow(self.window_days));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignedEvent {
    pub offset_days: i64,
    pub event_type: EventType,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientTimeline {
    pub sentinel_date: NaiveDate,
    pub events: Vec<AlignedEvent>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignedCohort {
    pub window_days: i64,
    pub timelines: BTreeMap<String, PatientTimeline>,
    pub unmatched_patient_ids: Vec<String>,
}

impl AlignedCohort {
    pub fn matched_patient_ids(&self) -> impl Iterator<Item = &str> {
        self.timelines.keys().map(String::as_str)
    }

    pub fn matched_count(&self) -> usize {
        self.timelines.len()
    }
}

pub fn run_query(dataset: &CohortDataset, query: &TemporalQuery) -> Result<AlignedCohort> {
    query.validate()?;
    let mut aligned = AlignedCohort {
        window_days: query.window_days,
        ..Default::default()
    };
    for patient in dataset.patients() {
        let events = dataset.events_of(&patient.patient_id);
        // Events are date-ordered, so the first match is the earliest.
        let Some(sentinel) = events.iter().find(|e| query.sentinel.matches(&e.event_type)) else {
            aligned.unmatched_patient_ids.push(patient.patient_id.clone());
            continue;
        };
        let start = sentinel.date;
        let retained = events
            .iter()
            .map(|e| (e, (e.date - start).num_days()))
            .filter(|&(_, offset)| (0..=query.window_days).contains(&offset))
            .map(|(e, offset)| AlignedEvent {
                offset_days: offset,
                event_type: e.event_type.clone(),
                provenance: e.provenance,
            })
            .collect();
        aligned.timelines.insert(
            patient.patient_id.clone(),
            PatientTimeline {
                sentinel_date: start,
                events: retained,
            },
        );
    }
    Ok(aligned)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::*;
    use crate::model::validate_dataset;
    use proptest::prelude::*;

    fn cohort() -> CohortDataset {
        CohortDataset::new(
            [
                patient("P1", "female", 30, true),
                patient("P2", "male", 40, false),
            ],
            [
                event("P1", "2020-03-01", CodeClass::Cpt4, "99213"),
                event("P1", "2020-03-05", CodeClass::Icd10, "R05"),
                event("P1", "2020-03-05", CodeClass::Loinc, "1920-8:HIGH"),
                event("P1", "2021-04-09", CodeClass::Icd10, "R50.9"),
                event("P2", "2020-06-01", CodeClass::Icd10, "Z20.828"),
            ],
        )
    }

    #[test]
    fn any_icd10_matches_everyone() {
        let ds = cohort();
        assert!(validate_dataset(&ds).is_empty());
        let a = run_query(&ds, &TemporalQuery::first_diagnosis_year()).unwrap();
        assert_eq!(a.matched_count(), 2);
        assert!(a.unmatched_patient_ids.is_empty());
        let p1 = &a.timelines["P1"];
        assert_eq!(p1.sentinel_date, day("2020-03-05"));
        // Pre-sentinel procedure and the event 400 days later are dropped;
        // the same-day lab stays.
        let offsets: Vec<i64> = p1.events.iter().map(|e| e.offset_days).collect();
        assert_eq!(offsets, vec![0, 0]);
    }

    #[test]
    fn no_lab_events_is_unmatched() {
        let q = TemporalQuery {
            sentinel: SentinelPredicate::any_of_class(CodeClass::Loinc),
            window_days: 30,
            direction: Direction::After,
        };
        let a = run_query(&cohort(), &q).unwrap();
        assert_eq!(a.unmatched_patient_ids, vec!["P2".to_string()]);
        assert_eq!(a.matched_count(), 1);
    }

    #[test]
    fn codes_and_prefixes() {
        let q = TemporalQuery::from_json(r#"{"sentinel": {"class": "LOINC", "codes": ["1920-8"]}, "window_days": 10}"#)
            .unwrap();
        assert_eq!(run_query(&cohort(), &q).unwrap().matched_count(), 1);
        let q = TemporalQuery::from_json(r#"{"sentinel": {"class": "ICD-10", "prefixes": ["Z20"]}, "window_days": 10}"#)
            .unwrap();
        let a = run_query(&cohort(), &q).unwrap();
        assert_eq!(a.matched_patient_ids().collect::<Vec<_>>(), vec!["P2"]);
    }

    #[test]
    fn invalid_windows_and_json() {
        assert!(matches!(
            TemporalQuery::from_json(r#"{"sentinel": {"class": "ICD-10"}, "window_days": 0}"#),
            Err(Error::InvalidWindow(0))
        ));
        assert!(matches!(
            TemporalQuery::from_json(r#"{"sentinel": {"class": "ICD-10"}, "window_days": 3, "direction": "before"}"#),
            Err(Error::InvalidQuery(_))
        ));
        assert!(matches!(TemporalQuery::from_json("{"), Err(Error::InvalidQuery(_))));
        let mut q = TemporalQuery::first_diagnosis_year();
        q.window_days = -4;
        assert!(matches!(run_query(&cohort(), &q), Err(Error::InvalidWindow(-4))));
    }

    proptest! {
        #[test]
        fn partition_and_window(
            rows in prop::collection::vec((0..6u8, 0..800u64, 0..3u8, 0..4u8), 1..60),
            window in 1..400i64,
        ) {
            let classes = [CodeClass::Icd10, CodeClass::Cpt4, CodeClass::Loinc];
            let patients: Vec<_> = (0..6).map(|i| patient(&format!("P{i}"), "female", 1, i % 2 == 0)).collect();
            let events: Vec<_> = rows.iter().map(|&(p, d, c, k)| crate::model::EventRecord {
                patient_id: format!("P{p}"),
                date: day("2020-01-01") + chrono::Days::new(d),
                event_type: EventType::new(classes[c as usize], format!("C{k}")).unwrap(),
                provenance: Provenance::Raw,
            }).collect();
            let ds = CohortDataset::new(patients, events);
            let q = TemporalQuery { window_days: window, ..TemporalQuery::first_diagnosis_year() };
            let a = run_query(&ds, &q).unwrap();
            let mut all: Vec<&str> = a.matched_patient_ids().chain(a.unmatched_patient_ids.iter().map(String::as_str)).collect();
            all.sort();
            prop_assert_eq!(all.len(), 6);
            all.dedup();
            prop_assert_eq!(all.len(), 6);
            for (id, t) in &a.timelines {
                for e in &t.events {
                    prop_assert!((0..=window).contains(&e.offset_days));
                    let date = t.sentinel_date + chrono::Days::new(e.offset_days as u64);
                    prop_assert!(ds.events_of(id).iter().any(|s| s.date == date && s.event_type == e.event_type && s.provenance == e.provenance));
                }
            }
            // Every patient with a diagnosis is matched.
            for id in &a.unmatched_patient_ids {
                prop_assert!(!ds.events_of(id).iter().any(|e| e.event_type.is_diagnosis()));
            }
        }
    }
}
