//! Ingestion of a minimal FHIR subset (Patient, Condition, Procedure,
//! Observation) into a [`CohortDataset`].
//!
//! Only the fields the pipeline needs are read: subject reference, coding
//! system and code, onset/performed/effective date, `valueQuantity`, the first
//! `referenceRange`, and the demographic fields of `Patient`. Everything else
//! is ignored. Individual resources that cannot be used are skipped and
//! counted by reason; only unreadable files are hard errors.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::{CodeClass, CohortDataset, EventRecord, EventType, PatientRecord, Provenance};

/// Extension carrying the binary outcome label on a `Patient` resource.
pub const COVID_LABEL_EXTENSION: &str = "https://seqlens.dev/fhir/StructureDefinition/covid-label";
pub const US_CORE_RACE: &str = "http://hl7.org/fhir/us/core/StructureDefinition/us-core-race";
pub const US_CORE_ETHNICITY: &str = "http://hl7.org/fhir/us/core/StructureDefinition/us-core-ethnicity";

const SYSTEMS: &[(&str, CodeClass)] = &[
    ("http://hl7.org/fhir/sid/icd-10", CodeClass::Icd10),
    ("http://hl7.org/fhir/sid/icd-10-cm", CodeClass::Icd10),
    ("urn:oid:2.16.840.1.113883.6.90", CodeClass::Icd10),
    ("http://www.ama-assn.org/go/cpt", CodeClass::Cpt4),
    ("urn:oid:2.16.840.1.113883.6.12", CodeClass::Cpt4),
    ("http://loinc.org", CodeClass::Loinc),
    ("urn:oid:2.16.840.1.113883.6.1", CodeClass::Loinc),
];

/// Maps a FHIR coding-system URI to its class.
pub fn class_for_system(system: &str) -> Option<CodeClass> {
    SYSTEMS
        .iter()
        .find(|(uri, _)| *uri == system.trim_end_matches('/'))
        .map(|&(_, class)| class)
}

/// Canonical URI written for each class.
pub fn system_for_class(class: CodeClass) -> &'static str {
    match class {
        CodeClass::Icd10 => "http://hl7.org/fhir/sid/icd-10-cm",
        CodeClass::Cpt4 => "http://www.ama-assn.org/go/cpt",
        CodeClass::Loinc => "http://loinc.org",
    }
}

pub mod skip {
    pub const MALFORMED_JSON: &str = "malformed-json";
    pub const MALFORMED_RESOURCE: &str = "malformed-resource";
    pub const UNSUPPORTED_RESOURCE: &str = "unsupported-resource-type";
    pub const UNKNOWN_CODING_SYSTEM: &str = "unknown-coding-system";
    pub const LOINC_NOT_ALLOWLISTED: &str = "loinc-not-allowlisted";
    pub const MISSING_DATE: &str = "missing-or-invalid-date";
    pub const MISSING_VALUE: &str = "missing-value";
    pub const UNKNOWN_PATIENT: &str = "unknown-patient";
    pub const DUPLICATE_PATIENT: &str = "duplicate-patient";
    pub const EXCLUDED_PATIENT: &str = "excluded-patient";
}

/// A lab measurement before categorization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawObservation {
    pub patient_id: String,
    pub date: NaiveDate,
    pub loinc_code: String,
    pub value: f64,
    pub unit: Option<String>,
    pub reference_low: Option<f64>,
    pub reference_high: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub resources_read: usize,
    pub events_emitted: usize,
    pub observations_pending_imputation: usize,
    /// Patient resources that contributed demographics only.
    pub patients_ingested: usize,
    pub skipped: BTreeMap<String, usize>,
    pub excluded_patients: Vec<String>,
    /// Data problems that did not cost a resource.
    pub warnings: BTreeMap<String, usize>,
}

impl IngestReport {
    pub fn skipped_total(&self) -> usize {
        self.skipped.values().sum()
    }
}

#[derive(Debug, Clone)]
pub struct IngestOutput {
    pub dataset: CohortDataset,
    pub observations: Vec<RawObservation>,
    pub report: IngestReport,
}

/// Reads a LOINC allowlist: one code per line, `#` comments.
pub fn parse_allowlist(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

pub fn read_allowlist(path: &Path) -> Result<BTreeSet<String>> {
    Ok(parse_allowlist(&crate::io::read_text(path)?))
}

/// Expands directories into the `.json`/`.ndjson` files beneath them.
pub fn collect_input_files(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        for entry in entries {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.is_dir() {
                walk(&path, out)?;
            } else if matches!(
                path.extension().and_then(|e| e.to_str()),
                Some("json" | "ndjson")
            ) {
                out.push(path);
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    for path in paths {
        if path.is_dir() {
            walk(path, &mut files)?;
        } else {
            files.push(path.clone());
        }
    }
    files.sort();
    files.dedup();
    Ok(files)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct PatientDraft {
    id: String,
    gender: String,
    ethnicity: String,
    race: String,
    birth_date: NaiveDate,
    covid_label: bool,
}

#[derive(Debug, Default)]
struct Parsed {
    resources_read: usize,
    patients: Vec<PatientDraft>,
    events: Vec<EventRecord>,
    observations: Vec<RawObservation>,
    skipped: BTreeMap<String, usize>,
    warnings: BTreeMap<String, usize>,
}

impl Parsed {
    fn skip(&mut self, reason: &str) {
        *self.skipped.entry(reason.to_string()).or_default() += 1;
    }

    fn merge(&mut self, other: Parsed) {
        self.resources_read += other.resources_read;
        self.patients.extend(other.patients);
        self.events.extend(other.events);
        self.observations.extend(other.observations);
        for (k, v) in other.skipped {
            *self.skipped.entry(k).or_default() += v;
        }
        for (k, v) in other.warnings {
            *self.warnings.entry(k).or_default() += v;
        }
    }
}

#[derive(Deserialize)]
struct Coding {
    system: Option<String>,
    code: Option<String>,
}

#[derive(Deserialize)]
struct CodeableConcept {
    #[serde(default)]
    coding: Vec<Coding>,
}

#[derive(Deserialize)]
struct Reference {
    reference: Option<String>,
}

#[derive(Deserialize)]
struct Period {
    start: Option<String>,
}

#[derive(Deserialize)]
struct Quantity {
    value: Option<f64>,
    unit: Option<String>,
}

#[derive(Deserialize)]
struct ReferenceRangeJson {
    low: Option<Quantity>,
    high: Option<Quantity>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct ClinicalResource {
    subject: Option<Reference>,
    code: Option<CodeableConcept>,
    onset_date_time: Option<String>,
    onset_period: Option<Period>,
    performed_date_time: Option<String>,
    performed_period: Option<Period>,
    effective_date_time: Option<String>,
    effective_period: Option<Period>,
    value_quantity: Option<Quantity>,
    #[serde(default)]
    reference_range: Vec<ReferenceRangeJson>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct Extension {
    url: String,
    #[serde(default)]
    extension: Vec<Extension>,
    value_string: Option<String>,
    value_boolean: Option<bool>,
    value_coding: Option<ValueCoding>,
}

#[derive(Deserialize)]
struct ValueCoding {
    display: Option<String>,
    code: Option<String>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct PatientJson {
    id: Option<String>,
    gender: Option<String>,
    birth_date: Option<String>,
    #[serde(default)]
    extension: Vec<Extension>,
}

impl Extension {
    fn text_value(&self) -> Option<String> {
        if let Some(s) = &self.value_string {
            return Some(s.clone());
        }
        if let Some(c) = &self.value_coding {
            return c.display.clone().or_else(|| c.code.clone());
        }
        None
    }

    /// US Core race/ethnicity: prefer the `text` sub-extension, then the
    /// first `ombCategory`.
    fn us_core_text(&self) -> Option<String> {
        let find = |name: &str| {
            self.extension
                .iter()
                .find(|e| e.url == name)
                .and_then(Extension::text_value)
        };
        find("text").or_else(|| find("ombCategory")).or_else(|| self.text_value())
    }
}

fn normalize_text(s: &str) -> String {
    let s: String = s
        .chars()
        .map(|c| if c == '\t' || c == '\n' || c == '\r' { ' ' } else { c })
        .collect();
    let s = s.trim();
    if s.is_empty() {
        "unknown".to_string()
    } else {
        s.to_string()
    }
}

/// Parses the day part of a FHIR date or dateTime.
pub fn parse_fhir_day(s: &str) -> Option<NaiveDate> {
    let day = s.get(..10)?;
    if s.len() > 10 && !s[10..].starts_with('T') {
        return None;
    }
    NaiveDate::parse_from_str(day, "%Y-%m-%d").ok()
}

fn subject_id(reference: &str) -> Option<String> {
    let id = reference
        .strip_prefix("Patient/")
        .or_else(|| reference.strip_prefix("urn:uuid:"))
        .unwrap_or(reference);
    valid_id(id).then(|| id.to_string())
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && !id.chars().any(char::is_whitespace)
}

impl Parsed {
    fn add_resource(&mut self, value: Value, allowlist: &BTreeSet<String>) {
        let kind = value.get("resourceType").and_then(Value::as_str).map(str::to_owned);
        match kind.as_deref() {
            Some("Bundle") => {
                // A bundle is a container, not a resource of its own.
                let Some(entries) = value.get("entry").and_then(Value::as_array) else {
                    self.resources_read += 1;
                    self.skip(skip::MALFORMED_RESOURCE);
                    return;
                };
                for entry in entries.clone() {
                    match entry.get("resource") {
                        Some(r) => self.add_resource(r.clone(), allowlist),
                        None => {
                            self.resources_read += 1;
                            self.skip(skip::MALFORMED_RESOURCE);
                        }
                    }
                }
            }
            Some("Patient") => {
                self.resources_read += 1;
                self.add_patient(value)
            }
            Some(k @ ("Condition" | "Procedure" | "Observation")) => {
                self.resources_read += 1;
                let k = k.to_string();
                self.add_clinical(&k, value, allowlist)
            }
            Some(_) => {
                self.resources_read += 1;
                self.skip(skip::UNSUPPORTED_RESOURCE)
            }
            None => {
                self.resources_read += 1;
                self.skip(skip::MALFORMED_RESOURCE)
            }
        }
    }

    fn add_patient(&mut self, value: Value) {
        let Ok(p) = serde_json::from_value::<PatientJson>(value) else {
            return self.skip(skip::MALFORMED_RESOURCE);
        };
        let Some(id) = p.id.filter(|id| valid_id(id)) else {
            return self.skip(skip::MALFORMED_RESOURCE);
        };
        let Some(birth_date) = p.birth_date.as_deref().and_then(parse_fhir_day) else {
            return self.skip(skip::MISSING_DATE);
        };
        let ext = |url: &str| p.extension.iter().find(|e| e.url == url);
        let Some(covid_label) = ext(COVID_LABEL_EXTENSION).and_then(|e| e.value_boolean) else {
            return self.skip(skip::MALFORMED_RESOURCE);
        };
        let race = ext(US_CORE_RACE).and_then(Extension::us_core_text);
        let ethnicity = ext(US_CORE_ETHNICITY).and_then(Extension::us_core_text);
        self.patients.push(PatientDraft {
            id,
            gender: normalize_text(p.gender.as_deref().unwrap_or("")),
            ethnicity: normalize_text(ethnicity.as_deref().unwrap_or("")),
            race: normalize_text(race.as_deref().unwrap_or("")),
            birth_date,
            covid_label,
        });
    }

    fn add_clinical(&mut self, kind: &str, value: Value, allowlist: &BTreeSet<String>) {
        let Ok(r) = serde_json::from_value::<ClinicalResource>(value) else {
            return self.skip(skip::MALFORMED_RESOURCE);
        };
        let Some(patient_id) = r
            .subject
            .and_then(|s| s.reference)
            .as_deref()
            .and_then(subject_id)
        else {
            return self.skip(skip::MALFORMED_RESOURCE);
        };
        let expected = match kind {
            "Condition" => CodeClass::Icd10,
            "Procedure" => CodeClass::Cpt4,
            _ => CodeClass::Loinc,
        };
        let codings = r.code.map(|c| c.coding).unwrap_or_default();
        if codings.is_empty() {
            return self.skip(skip::MALFORMED_RESOURCE);
        }
        let Some(code) = codings
            .iter()
            .find(|c| c.system.as_deref().and_then(class_for_system) == Some(expected))
            .and_then(|c| c.code.as_deref())
            .map(str::trim)
        else {
            return self.skip(skip::UNKNOWN_CODING_SYSTEM);
        };
        let date = match kind {
            "Condition" => r.onset_date_time.or(r.onset_period.and_then(|p| p.start)),
            "Procedure" => r.performed_date_time.or(r.performed_period.and_then(|p| p.start)),
            _ => r.effective_date_time.or(r.effective_period.and_then(|p| p.start)),
        };
        let Some(date) = date.as_deref().and_then(parse_fhir_day) else {
            return self.skip(skip::MISSING_DATE);
        };

        if expected != CodeClass::Loinc {
            let Ok(event_type) = EventType::new(expected, code) else {
                return self.skip(skip::MALFORMED_RESOURCE);
            };
            self.events.push(EventRecord {
                patient_id,
                date,
                event_type,
                provenance: Provenance::Raw,
            });
            return;
        }

        if !allowlist.contains(code) {
            return self.skip(skip::LOINC_NOT_ALLOWLISTED);
        }
        if code.is_empty() || code.contains(char::is_whitespace) || code.contains(':') {
            return self.skip(skip::MALFORMED_RESOURCE);
        }
        let Some(quantity) = r.value_quantity else {
            return self.skip(skip::MISSING_VALUE);
        };
        let Some(value) = quantity.value.filter(|v| v.is_finite()) else {
            return self.skip(skip::MISSING_VALUE);
        };
        let range = r.reference_range.into_iter().next();
        let mut low = range.as_ref().and_then(|r| r.low.as_ref()).and_then(|q| q.value);
        let mut high = range.as_ref().and_then(|r| r.high.as_ref()).and_then(|q| q.value);
        if let (Some(l), Some(h)) = (low, high) {
            if l > h {
                *self.warnings.entry("inverted-reference-range".into()).or_default() += 1;
                low = None;
                high = None;
            }
        }
        self.observations.push(RawObservation {
            patient_id,
            date,
            loinc_code: code.to_string(),
            value,
            unit: quantity.unit.map(|u| normalize_text(&u)),
            reference_low: low,
            reference_high: high,
        });
    }
}

/// Parses one file's text: a Bundle, a single resource, a JSON array of
/// resources, or newline-delimited resources.
fn parse_text(text: &str, allowlist: &BTreeSet<String>) -> Parsed {
    let mut parsed = Parsed::default();
    if let Ok(value) = serde_json::from_str::<Value>(text) {
        match value {
            Value::Array(items) => {
                for item in items {
                    let resource = match item.get("resource") {
                        Some(r) if item.get("resourceType").is_none() => r.clone(),
                        _ => item,
                    };
                    parsed.add_resource(resource, allowlist);
                }
            }
            other => parsed.add_resource(other, allowlist),
        }
        return parsed;
    }
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        match serde_json::from_str::<Value>(line) {
            Ok(v) => parsed.add_resource(v, allowlist),
            Err(_) => {
                parsed.resources_read += 1;
                parsed.skip(skip::MALFORMED_JSON);
            }
        }
    }
    parsed
}

fn age_at(birth: NaiveDate, on: NaiveDate) -> u32 {
    let mut years = on.year() - birth.year();
    if (on.month(), on.day()) < (birth.month(), birth.day()) {
        years -= 1;
    }
    years.max(0) as u32
}

/// Reads FHIR files and builds a dataset.
///
/// Files are parsed in parallel; the merge is order-independent. Patients
/// without any diagnosis are excluded along with all their resources. Age is
/// taken at the patient's earliest recorded event.
pub fn ingest(paths: &[PathBuf], allowlist: &BTreeSet<String>) -> Result<IngestOutput> {
    let files = collect_input_files(paths)?;
    let parts: Vec<Parsed> = files
        .par_iter()
        .map(|path| {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            Ok(parse_text(&text, allowlist))
        })
        .collect::<Result<_>>()?;
    let mut all = Parsed::default();
    for p in parts {
        all.merge(p);
    }
    if all.resources_read == 0 {
        return Err(Error::NoResources);
    }
    Ok(assemble(all))
}

fn assemble(mut all: Parsed) -> IngestOutput {
    // Duplicate patient ids keep the smallest record so the choice does not
    // depend on file order.
    all.patients.sort();
    let mut drafts: BTreeMap<String, PatientDraft> = BTreeMap::new();
    for p in std::mem::take(&mut all.patients) {
        if drafts.contains_key(&p.id) {
            all.skip(skip::DUPLICATE_PATIENT);
        } else {
            drafts.insert(p.id.clone(), p);
        }
    }

    let events: Vec<EventRecord> = std::mem::take(&mut all.events);
    let observations: Vec<RawObservation> = std::mem::take(&mut all.observations);

    let diagnosed: HashSet<&str> = events
        .iter()
        .filter(|e| e.event_type.is_diagnosis() && drafts.contains_key(&e.patient_id))
        .map(|e| e.patient_id.as_str())
        .collect();
    let excluded: BTreeSet<String> = drafts
        .keys()
        .filter(|id| !diagnosed.contains(id.as_str()))
        .cloned()
        .collect();

    let mut skipped = std::mem::take(&mut all.skipped);
    let mut bump = |reason: &str| *skipped.entry(reason.to_string()).or_default() += 1;
    let mut earliest: BTreeMap<String, NaiveDate> = BTreeMap::new();
    let mut keep = |patient_id: &str, date: NaiveDate, bump: &mut dyn FnMut(&str)| -> bool {
        if !drafts.contains_key(patient_id) {
            bump(skip::UNKNOWN_PATIENT);
            false
        } else if excluded.contains(patient_id) {
            bump(skip::EXCLUDED_PATIENT);
            false
        } else {
            earliest
                .entry(patient_id.to_string())
                .and_modify(|d| *d = (*d).min(date))
                .or_insert(date);
            true
        }
    };
    let events: Vec<EventRecord> = events
        .into_iter()
        .filter(|e| keep(&e.patient_id, e.date, &mut bump))
        .collect();
    let mut observations: Vec<RawObservation> = observations
        .into_iter()
        .filter(|o| keep(&o.patient_id, o.date, &mut bump))
        .collect();
    for _ in &excluded {
        bump(skip::EXCLUDED_PATIENT);
    }

    let mut units: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for o in &observations {
        if let Some(u) = &o.unit {
            units.entry(&o.loinc_code).or_default().insert(u);
        }
    }
    let mixed_units = units.values().filter(|u| u.len() > 1).count();
    if mixed_units > 0 {
        all.warnings.insert("mixed-units-per-loinc".into(), mixed_units);
    }

    let patients: Vec<PatientRecord> = drafts
        .into_values()
        .filter(|d| !excluded.contains(&d.id))
        .map(|d| {
            let age = earliest.get(&d.id).map_or(0, |&on| age_at(d.birth_date, on));
            PatientRecord {
                patient_id: d.id,
                gender: d.gender,
                ethnicity: d.ethnicity,
                race: d.race,
                age,
                covid_label: d.covid_label,
            }
        })
        .collect();

    observations.sort_by(|a, b| {
        (&a.patient_id, a.date, &a.loinc_code)
            .cmp(&(&b.patient_id, b.date, &b.loinc_code))
            .then(a.value.total_cmp(&b.value))
            .then(a.unit.cmp(&b.unit))
            .then(cmp_opt(a.reference_low, b.reference_low))
            .then(cmp_opt(a.reference_high, b.reference_high))
    });

    let report = IngestReport {
        resources_read: all.resources_read,
        events_emitted: events.len(),
        observations_pending_imputation: observations.len(),
        patients_ingested: patients.len(),
        skipped,
        excluded_patients: excluded.into_iter().collect(),
        warnings: all.warnings,
    };
    for id in &report.excluded_patients {
        log::info!("excluded patient {id}: zero diagnoses");
    }
    IngestOutput {
        dataset: CohortDataset::new(patients, events),
        observations,
        report,
    }
}

fn cmp_opt(a: Option<f64>, b: Option<f64>) -> std::cmp::Ordering {
    match (a, b) {
        (Some(a), Some(b)) => a.total_cmp(&b),
        (a, b) => a.is_some().cmp(&b.is_some()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn allow(codes: &[&str]) -> BTreeSet<String> {
        codes.iter().map(|s| s.to_string()).collect()
    }

    fn patient(id: &str, label: bool) -> Value {
        json!({
            "resourceType": "Patient",
            "id": id,
            "gender": "female",
            "birthDate": "1980-06-15",
            "extension": [
                {"url": COVID_LABEL_EXTENSION, "valueBoolean": label},
                {"url": US_CORE_RACE, "extension": [
                    {"url": "ombCategory", "valueCoding": {"code": "2106-3", "display": "White"}},
                    {"url": "text", "valueString": "White"}
                ]},
                {"url": US_CORE_ETHNICITY, "extension": [
                    {"url": "text", "valueString": "Not Hispanic or Latino"}
                ]}
            ]
        })
    }

    fn condition(id: &str, code: &str, date: &str) -> Value {
        json!({
            "resourceType": "Condition",
            "subject": {"reference": format!("Patient/{id}")},
            "code": {"coding": [{"system": "http://hl7.org/fhir/sid/icd-10-cm", "code": code}]},
            "onsetDateTime": date
        })
    }

    fn observation(id: &str, code: &str, date: &str, value: f64) -> Value {
        json!({
            "resourceType": "Observation",
            "subject": {"reference": format!("Patient/{id}")},
            "code": {"coding": [{"system": "http://loinc.org", "code": code}]},
            "effectiveDateTime": date,
            "valueQuantity": {"value": value, "unit": "U/L"},
            "referenceRange": [{"low": {"value": 10}, "high": {"value": 40}}]
        })
    }

    fn bundle(resources: Vec<Value>) -> String {
        json!({
            "resourceType": "Bundle",
            "entry": resources.into_iter().map(|r| json!({"resource": r})).collect::<Vec<_>>()
        })
        .to_string()
    }

    fn run(text: &str, allowlist: &BTreeSet<String>) -> IngestOutput {
        assemble(parse_text(text, allowlist))
    }

    #[test]
    fn condition_maps_to_icd10_event() {
        let out = run(
            &bundle(vec![patient("P1", true), condition("P1", "U07.1", "2020-04-01T08:30:00Z")]),
            &allow(&[]),
        );
        assert_eq!(
            out.dataset.events(),
            &[EventRecord {
                patient_id: "P1".into(),
                date: "2020-04-01".parse().unwrap(),
                event_type: EventType::new(CodeClass::Icd10, "U07.1").unwrap(),
                provenance: Provenance::Raw,
            }]
        );
        let p = out.dataset.patient("P1").unwrap();
        assert_eq!(p.race, "White");
        assert_eq!(p.ethnicity, "Not Hispanic or Latino");
        assert_eq!(p.age, 39);
        assert!(p.covid_label);
    }

    #[test]
    fn non_allowlisted_loinc_is_skipped() {
        let out = run(
            &bundle(vec![
                patient("P1", true),
                condition("P1", "R05", "2020-04-01"),
                observation("P1", "2345-7", "2020-04-02", 99.0),
                observation("P1", "1920-8", "2020-04-02", 99.0),
            ]),
            &allow(&["1920-8"]),
        );
        assert_eq!(out.report.skipped[skip::LOINC_NOT_ALLOWLISTED], 1);
        assert_eq!(out.observations.len(), 1);
        assert_eq!(out.observations[0].reference_low, Some(10.0));
    }

    #[test]
    fn observation_only_patient_is_excluded() {
        let out = run(
            &bundle(vec![
                patient("P1", true),
                condition("P1", "R05", "2020-04-01"),
                patient("P2", false),
                observation("P2", "1920-8", "2020-04-02", 9.0),
            ]),
            &allow(&["1920-8"]),
        );
        assert_eq!(out.report.excluded_patients, vec!["P2".to_string()]);
        assert!(out.dataset.patient("P2").is_none());
        assert!(out.observations.is_empty());
        assert_eq!(out.report.skipped[skip::EXCLUDED_PATIENT], 2);
        assert!(crate::model::validate_dataset(&out.dataset).is_empty());
    }

    #[test]
    fn ndjson_with_bad_lines_is_counted() {
        let text = format!(
            "{}\n{}\nnot json\n{}\n",
            patient("P1", false),
            condition("P1", "R05", "2020-04-01"),
            json!({"resourceType": "Encounter"})
        );
        let out = run(&text, &allow(&[]));
        assert_eq!(out.report.resources_read, 4);
        assert_eq!(out.report.skipped[skip::MALFORMED_JSON], 1);
        assert_eq!(out.report.skipped[skip::UNSUPPORTED_RESOURCE], 1);
        assert_eq!(out.report.events_emitted, 1);
    }

    #[test]
    fn malformed_resources_are_skipped_not_fatal() {
        let out = run(
            &bundle(vec![
                patient("P1", false),
                condition("P1", "R05", "2020-04-01"),
                json!({"resourceType": "Condition", "subject": {"reference": "Patient/P1"},
                       "code": {"coding": [{"system": "http://snomed.info/sct", "code": "49727002"}]},
                       "onsetDateTime": "2020-04-01"}),
                json!({"resourceType": "Condition", "subject": {"reference": "Patient/P1"},
                       "code": {"coding": [{"system": "http://hl7.org/fhir/sid/icd-10", "code": "R06"}]},
                       "onsetDateTime": "2020-04"}),
                json!({"resourceType": "Procedure", "subject": {"reference": "Patient/P1"},
                       "code": {"coding": [{"system": "http://www.ama-assn.org/go/cpt", "code": "94760"}]},
                       "performedPeriod": {"start": "2020-04-03"}}),
                json!({"resourceType": "Condition", "subject": {"reference": "Patient/P9"},
                       "code": {"coding": [{"system": "http://hl7.org/fhir/sid/icd-10", "code": "R06"}]},
                       "onsetDateTime": "2020-04-03"}),
                json!({"resourceType": "Observation", "subject": {"reference": "Patient/P1"},
                       "code": {"coding": [{"system": "http://loinc.org", "code": "1920-8"}]},
                       "effectiveDateTime": "2020-04-03", "valueQuantity": {"value": "high"}}),
            ]),
            &allow(&["1920-8"]),
        );
        let r = &out.report;
        assert_eq!(r.skipped[skip::UNKNOWN_CODING_SYSTEM], 1);
        assert_eq!(r.skipped[skip::MISSING_DATE], 1);
        assert_eq!(r.skipped[skip::UNKNOWN_PATIENT], 1);
        assert_eq!(r.skipped[skip::MALFORMED_RESOURCE], 1);
        assert_eq!(r.events_emitted, 2);
        assert!(out
            .dataset
            .events()
            .iter()
            .any(|e| e.event_type.class == CodeClass::Cpt4));
        assert_eq!(
            r.resources_read,
            r.events_emitted + r.observations_pending_imputation + r.skipped_total() + r.patients_ingested
        );
    }

    #[test]
    fn inverted_range_is_dropped_with_warning() {
        let mut obs = observation("P1", "1920-8", "2020-04-02", 9.0);
        obs["referenceRange"] = json!([{"low": {"value": 50}, "high": {"value": 40}}]);
        let out = run(
            &bundle(vec![patient("P1", true), condition("P1", "R05", "2020-04-01"), obs]),
            &allow(&["1920-8"]),
        );
        assert_eq!(out.observations[0].reference_low, None);
        assert_eq!(out.report.warnings["inverted-reference-range"], 1);
    }

    #[test]
    fn fhir_day_parsing() {
        assert_eq!(parse_fhir_day("2020-04-01"), Some("2020-04-01".parse().unwrap()));
        assert_eq!(parse_fhir_day("2020-04-01T23:59:59-05:00"), Some("2020-04-01".parse().unwrap()));
        assert_eq!(parse_fhir_day("2020-04"), None);
        assert_eq!(parse_fhir_day("2020-04-01X"), None);
    }
}
