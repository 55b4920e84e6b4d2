//! Event triples, patient records and the cohort container.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coding system that scopes an event code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CodeClass {
    #[serde(rename = "ICD-10")]
    Icd10,
    #[serde(rename = "CPT4")]
    Cpt4,
    #[serde(rename = "LOINC")]
    Loinc,
}

impl CodeClass {
    pub const ALL: [CodeClass; 3] = [CodeClass::Icd10, CodeClass::Cpt4, CodeClass::Loinc];

    pub fn as_str(self) -> &'static str {
        match self {
            CodeClass::Icd10 => "ICD-10",
            CodeClass::Cpt4 => "CPT4",
            CodeClass::Loinc => "LOINC",
        }
    }
}

impl fmt::Display for CodeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CodeClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CodeClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::InvalidEventType(format!("unregistered coding system {s:?}")))
    }
}

/// Categorical outcome of a lab result against its reference range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Category {
    High,
    Normal,
    Low,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::High, Category::Normal, Category::Low];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::High => "HIGH",
            Category::Normal => "NORMAL",
            Category::Low => "LOW",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Category::High => "High",
            Category::Normal => "Normal",
            Category::Low => "Low",
        }
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::InvalidEventType(format!("unknown lab category {s:?}")))
    }
}

/// Where the reference range behind a lab event came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Provenance {
    Raw,
    LocalImputed,
    GlobalImputed,
    Uncategorized,
}

impl Provenance {
    pub const ALL: [Provenance; 4] = [
        Provenance::Raw,
        Provenance::LocalImputed,
        Provenance::GlobalImputed,
        Provenance::Uncategorized,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Raw => "RAW",
            Provenance::LocalImputed => "LOCAL_IMPUTED",
            Provenance::GlobalImputed => "GLOBAL_IMPUTED",
            Provenance::Uncategorized => "UNCATEGORIZED",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Provenance::Raw => "Raw",
            Provenance::LocalImputed => "Locally imputed",
            Provenance::GlobalImputed => "Globally imputed",
            Provenance::Uncategorized => "Uncategorized",
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Provenance::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::InvalidEventType(format!("unknown provenance {s:?}")))
    }
}

/// Marker appended to a LOINC code for lab events whose range could not be
/// recovered.
pub const UNCATEGORIZED_SUFFIX: &str = "UNCATEGORIZED";

/// A coded event type: coding system plus code.
///
/// Categorized lab results use the code `<loinc>:<CATEGORY>`, e.g.
/// `1920-8:HIGH`, and unresolved ones `<loinc>:UNCATEGORIZED`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EventType {
    pub class: CodeClass,
    pub code: String,
}

/// The lab-specific reading of a LOINC event code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabCode<'a> {
    Categorized { loinc: &'a str, category: Category },
    Uncategorized { loinc: &'a str },
}

impl<'a> LabCode<'a> {
    pub fn loinc(&self) -> &'a str {
        match self {
            LabCode::Categorized { loinc, .. } | LabCode::Uncategorized { loinc } => loinc,
        }
    }
}

impl EventType {
    pub fn new(class: CodeClass, code: impl Into<String>) -> Result<Self> {
        let code = code.into();
        if code.is_empty() || code.chars().any(char::is_whitespace) {
            return Err(Error::InvalidEventType(format!(
                "code {code:?} must be non-empty without whitespace"
            )));
        }
        Ok(EventType { class, code })
    }

    pub fn lab(loinc: &str, category: Category) -> Result<Self> {
        EventType::new(CodeClass::Loinc, format!("{loinc}:{}", category.as_str()))
    }

    pub fn uncategorized_lab(loinc: &str) -> Result<Self> {
        EventType::new(CodeClass::Loinc, format!("{loinc}:{UNCATEGORIZED_SUFFIX}"))
    }

    pub fn is_diagnosis(&self) -> bool {
        self.class == CodeClass::Icd10
    }

    /// Splits a categorized lab code into its LOINC code and category.
    pub fn lab_code(&self) -> Option<LabCode<'_>> {
        if self.class != CodeClass::Loinc {
            return None;
        }
        let (loinc, suffix) = self.code.rsplit_once(':')?;
        if suffix == UNCATEGORIZED_SUFFIX {
            return Some(LabCode::Uncategorized { loinc });
        }
        let category = suffix.parse().ok()?;
        Some(LabCode::Categorized { loinc, category })
    }

    /// The code with any lab category suffix removed.
    pub fn base_code(&self) -> &str {
        match self.lab_code() {
            Some(lab) => lab.loinc(),
            None => &self.code,
        }
    }
}

impl fmt::Display for EventType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.class, self.code)
    }
}

/// One clinical fact: who, which day, what.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EventRecord {
    pub patient_id: String,
    pub date: NaiveDate,
    pub event_type: EventType,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub gender: String,
    pub ethnicity: String,
    pub race: String,
    pub age: u32,
    pub covid_label: bool,
}

/// Patients plus their events. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CohortDataset {
    patients: BTreeMap<String, PatientRecord>,
    events: Vec<EventRecord>,
}

impl CohortDataset {
    /// Builds a dataset. Events are kept as a multiset in canonical order;
    /// later patients with a duplicate id replace earlier ones.
    pub fn new(
        patients: impl IntoIterator<Item = PatientRecord>,
        events: impl IntoIterator<Item = EventRecord>,
    ) -> Self {
        let patients = patients
            .into_iter()
            .map(|p| (p.patient_id.clone(), p))
            .collect();
        let mut events: Vec<EventRecord> = events.into_iter().collect();
        events.sort();
        CohortDataset { patients, events }
    }

    pub fn patients(&self) -> impl ExactSizeIterator<Item = &PatientRecord> {
        self.patients.values()
    }

    pub fn patient(&self, patient_id: &str) -> Option<&PatientRecord> {
        self.patients.get(patient_id)
    }

    pub fn events(&self) -> &[EventRecord] {
        &self.events
    }

    /// Events of one patient, in date order.
    pub fn events_of(&self, patient_id: &str) -> &[EventRecord] {
        let start = self.events.partition_point(|e| e.patient_id.as_str() < patient_id);
        let end = self.events.partition_point(|e| e.patient_id.as_str() <= patient_id);
        &self.events[start..end]
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn event_types(&self) -> BTreeSet<&EventType> {
        self.events.iter().map(|e| &e.event_type).collect()
    }

    /// Outcome label per patient.
    pub fn labels(&self) -> BTreeMap<String, bool> {
        self.patients
            .values()
            .map(|p| (p.patient_id.clone(), p.covid_label))
            .collect()
    }

    pub fn into_parts(self) -> (Vec<PatientRecord>, Vec<EventRecord>) {
        (self.patients.into_values().collect(), self.events)
    }
}

/// A broken dataset invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Violation {
    OrphanEvent { patient_id: String, event: String },
    ZeroDiagnosesPatient { patient_id: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::OrphanEvent { patient_id, event } => {
                write!(f, "orphan event {event} for unknown patient {patient_id}")
            }
            Violation::ZeroDiagnosesPatient { patient_id } => {
                write!(f, "zero-diagnoses patient {patient_id}")
            }
        }
    }
}

pub fn validate_dataset(dataset: &CohortDataset) -> Vec<Violation> {
    let mut violations = Vec::new();
    let mut diagnosed = HashSet::new();
    for event in &dataset.events {
        if !dataset.patients.contains_key(&event.patient_id) {
            violations.push(Violation::OrphanEvent {
                patient_id: event.patient_id.clone(),
                event: format!("{}@{}", event.event_type, event.date),
            });
        } else if event.event_type.is_diagnosis() {
            diagnosed.insert(event.patient_id.as_str());
        }
    }
    for id in dataset.patients.keys() {
        if !diagnosed.contains(id.as_str()) {
            violations.push(Violation::ZeroDiagnosesPatient {
                patient_id: id.clone(),
            });
        }
    }
    violations
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeBucket {
    pub low: u32,
    pub high: u32,
    pub count: usize,
}

/// Categorical distributions of the non-temporal patient attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSummary {
    pub cohort_size: usize,
    pub gender: BTreeMap<String, usize>,
    pub ethnicity: BTreeMap<String, usize>,
    pub race: BTreeMap<String, usize>,
    pub age: Vec<AgeBucket>,
    pub positives: usize,
    pub prevalence: f64,
}

impl AttributeSummary {
    /// Fraction of the cohort with the given gender value.
    pub fn gender_share(&self, gender: &str) -> f64 {
        self.gender.get(gender).copied().unwrap_or(0) as f64 / self.cohort_size as f64
    }
}

pub const AGE_BUCKET_YEARS: u32 = 10;

pub fn attribute_summary(dataset: &CohortDataset) -> Result<AttributeSummary> {
    if dataset.is_empty() {
        return Err(Error::EmptyCohort);
    }
    let mut gender = BTreeMap::new();
    let mut ethnicity = BTreeMap::new();
    let mut race = BTreeMap::new();
    let mut ages: BTreeMap<u32, usize> = BTreeMap::new();
    let mut positives = 0;
    for p in dataset.patients() {
        *gender.entry(p.gender.clone()).or_default() += 1;
        *ethnicity.entry(p.ethnicity.clone()).or_default() += 1;
        *race.entry(p.race.clone()).or_default() += 1;
        *ages.entry(p.age / AGE_BUCKET_YEARS).or_default() += 1;
        positives += usize::from(p.covid_label);
    }
    let age = ages
        .into_iter()
        .map(|(decade, count)| AgeBucket {
            low: decade * AGE_BUCKET_YEARS,
            high: decade * AGE_BUCKET_YEARS + AGE_BUCKET_YEARS - 1,
            count,
        })
        .collect();
    let cohort_size = dataset.len();
    Ok(AttributeSummary {
        cohort_size,
        gender,
        ethnicity,
        race,
        age,
        positives,
        prevalence: positives as f64 / cohort_size as f64,
    })
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn day(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    pub fn patient(id: &str, gender: &str, age: u32, label: bool) -> PatientRecord {
        PatientRecord {
            patient_id: id.into(),
            gender: gender.into(),
            ethnicity: "not-hispanic".into(),
            race: "white".into(),
            age,
            covid_label: label,
        }
    }

    pub fn event(id: &str, date: &str, class: CodeClass, code: &str) -> EventRecord {
        EventRecord {
            patient_id: id.into(),
            date: day(date),
            event_type: EventType::new(class, code).unwrap(),
            provenance: Provenance::Raw,
        }
    }
}
