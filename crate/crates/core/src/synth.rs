//! Synthetic cohort generator with planted outcome signals.
//!
//! Output is a function of the config alone: the same seed gives the same
//! bytes. Outcome labels and genders are assigned by exact quota
//! (`round(fraction * n)` patients, chosen uniformly); planted events and lab
//! categories are sampled per patient.

use std::collections::BTreeSet;
use std::path::Path;

use chrono::{Days, Months, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::fhir::{self, RawObservation};
use crate::hierarchy::node_id;
use crate::io::{self, DatasetDir};
use crate::model::{CodeClass, CohortDataset, EventRecord, EventType, PatientRecord, Provenance};
use crate::stats::analytic_phi;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const VOCAB_FILE: &str = "vocab.tsv";
pub const MANUAL_FILE: &str = "manual.tsv";
pub const ALLOWLIST_FILE: &str = "loinc_allowlist.txt";
pub const FHIR_DIR: &str = "fhir";

/// Code every patient receives on their index day.
pub const INDEX_CODE: &str = "Z20.828";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedSignal {
    pub class: CodeClass,
    pub code: String,
    pub label: String,
    pub p_positive: f64,
    pub p_negative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabSpec {
    pub loinc: String,
    pub label: String,
    pub unit: String,
    pub low: f64,
    pub high: f64,
    /// Share of patients with any measurement of this lab.
    pub presence: f64,
    pub max_measurements: u32,
    pub p_high_positive: f64,
    pub p_high_negative: f64,
    pub p_low: f64,
    /// Share of measurements whose range is deleted.
    pub range_missing_fraction: f64,
    /// Share of measured patients none of whose measurements carry a range.
    pub unranged_patient_fraction: f64,
    /// Swaps the HIGH probabilities of positives and negatives for unranged
    /// patients, so globally imputed HIGH values carry the opposite outcome
    /// association.
    pub reverse_unranged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_patients: usize,
    pub positive_fraction: f64,
    pub female_fraction: f64,
    pub start_date: NaiveDate,
    /// Index days are spread over this many days after `start_date`.
    pub enrollment_days: u32,
    /// Events fall within this many days of the index day.
    pub follow_up_days: u32,
    pub planted_signals: Vec<PlantedSignal>,
    pub background_diagnoses: usize,
    pub background_procedures: usize,
    pub background_rate: f64,
    pub labs: Vec<LabSpec>,
    /// Also write the cohort as FHIR bundles.
    pub fhir: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 20200301,
            n_patients: 998,
            positive_fraction: 0.79,
            female_fraction: 0.60,
            start_date: NaiveDate::from_ymd_opt(2020, 3, 1).expect("valid date"),
            enrollment_days: 300,
            follow_up_days: 330,
            planted_signals: vec![
                PlantedSignal {
                    class: CodeClass::Icd10,
                    code: "R05".into(),
                    label: "Cough".into(),
                    p_positive: 0.8,
                    p_negative: 0.1,
                },
                PlantedSignal {
                    class: CodeClass::Icd10,
                    code: "R50.9".into(),
                    label: "Fever, unspecified".into(),
                    p_positive: 0.5,
                    p_negative: 0.2,
                },
            ],
            background_diagnoses: 30,
            background_procedures: 10,
            background_rate: 0.1,
            labs: vec![
                LabSpec {
                    loinc: "1920-8".into(),
                    label: "Aspartate aminotransferase".into(),
                    unit: "U/L".into(),
                    low: 10.0,
                    high: 40.0,
                    presence: 0.7,
                    max_measurements: 3,
                    p_high_positive: 0.45,
                    p_high_negative: 0.1,
                    p_low: 0.05,
                    range_missing_fraction: 0.1,
                    unranged_patient_fraction: 0.3,
                    reverse_unranged: true,
                },
                LabSpec {
                    loinc: "2160-0".into(),
                    label: "Creatinine".into(),
                    unit: "mg/dL".into(),
                    low: 0.6,
                    high: 1.3,
                    presence: 0.6,
                    max_measurements: 2,
                    p_high_positive: 0.1,
                    p_high_negative: 0.1,
                    p_low: 0.05,
                    range_missing_fraction: 0.1,
                    unranged_patient_fraction: 0.05,
                    reverse_unranged: false,
                },
            ],
            fhir: false,
        }
    }
}

fn check_fraction(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("{name} must be in [0, 1], got {v}")))
    }
}

impl SynthConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: SynthConfig = serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_patients == 0 {
            return Err(Error::InvalidConfig("n_patients must be at least 1".into()));
        }
        if self.follow_up_days == 0 {
            return Err(Error::InvalidConfig("follow_up_days must be at least 1".into()));
        }
        check_fraction("positive_fraction", self.positive_fraction)?;
        check_fraction("female_fraction", self.female_fraction)?;
        check_fraction("background_rate", self.background_rate)?;
        for s in &self.planted_signals {
            EventType::new(s.class, s.code.clone())?;
            check_fraction(&format!("{} p_positive", s.code), s.p_positive)?;
            check_fraction(&format!("{} p_negative", s.code), s.p_negative)?;
        }
        for lab in &self.labs {
            EventType::new(CodeClass::Loinc, lab.loinc.clone())?;
            if lab.loinc.contains(':') {
                return Err(Error::InvalidConfig(format!("LOINC code {:?} contains ':'", lab.loinc)));
            }
            if !(lab.low > 0.0 && lab.low < lab.high && lab.high.is_finite()) {
                return Err(Error::InvalidConfig(format!("{} needs 0 < low < high", lab.loinc)));
            }
            for (name, v) in [
                ("presence", lab.presence),
                ("p_high_positive", lab.p_high_positive),
                ("p_high_negative", lab.p_high_negative),
                ("p_low", lab.p_low),
                ("range_missing_fraction", lab.range_missing_fraction),
                ("unranged_patient_fraction", lab.unranged_patient_fraction),
            ] {
                check_fraction(&format!("{} {name}", lab.loinc), v)?;
            }
            if lab.p_low + lab.p_high_positive.max(lab.p_high_negative) > 1.0 {
                return Err(Error::InvalidConfig(format!(
                    "{} p_low plus p_high must not exceed 1",
                    lab.loinc
                )));
            }
            if lab.max_measurements == 0 {
                return Err(Error::InvalidConfig(format!("{} max_measurements must be at least 1", lab.loinc)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalManifest {
    pub event_type: EventType,
    pub node_id: String,
    pub label: String,
    pub p_positive: f64,
    pub p_negative: f64,
    pub analytic_phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub engine_version: String,
    pub config: SynthConfig,
    pub patients: usize,
    pub positives: usize,
    pub females: usize,
    pub events: usize,
    pub observations: usize,
    pub signals: Vec<SignalManifest>,
}

pub struct SynthOutput {
    pub dataset: CohortDataset,
    pub observations: Vec<RawObservation>,
    pub manifest: Manifest,
    pub vocab: String,
    pub manual: String,
}

/// Chapters that background diagnoses are spread over, and the letter their
/// codes start with.
const CHAPTERS: [(&str, &str, char); 6] = [
    ("R00-R99", "Symptoms, signs and abnormal findings", 'R'),
    ("J00-J99", "Diseases of the respiratory system", 'J'),
    ("I00-I99", "Diseases of the circulatory system", 'I'),
    ("K00-K95", "Diseases of the digestive system", 'K'),
    ("M00-M99", "Diseases of the musculoskeletal system", 'M'),
    ("E00-E89", "Endocrine, nutritional and metabolic diseases", 'E'),
];
const INDEX_CHAPTER: (&str, &str) = ("Z00-Z99", "Factors influencing health status and contact with health services");
const PROCEDURE_ROOT: (&str, &str) = ("99202-99499", "Evaluation and management");

const RACES: [(&str, f64); 4] = [
    ("White", 0.6),
    ("Black or African American", 0.25),
    ("Asian", 0.05),
    ("Other", 0.1),
];
const ETHNICITIES: [(&str, f64); 2] = [("Not Hispanic or Latino", 0.9), ("Hispanic or Latino", 0.1)];

fn pick<'a>(rng: &mut ChaCha8Rng, table: &[(&'a str, f64)]) -> &'a str {
    let mut x: f64 = rng.random();
    for (v, w) in table {
        if x < *w {
            return v;
        }
        x -= w;
    }
    table[table.len() - 1].0
}

/// `round(fraction * n)` distinct indices out of `0..n`.
fn quota(rng: &mut ChaCha8Rng, n: usize, fraction: f64) -> Vec<bool> {
    let k = (fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut chosen = vec![false; n];
    for &i in &order[..k.min(n)] {
        chosen[i] = true;
    }
    chosen
}

struct Background {
    event_type: EventType,
    label: String,
}

fn background_types(config: &SynthConfig) -> Vec<Background> {
    let mut out = Vec::new();
    for i in 0..config.background_diagnoses {
        let (_, chapter, letter) = CHAPTERS[i % CHAPTERS.len()];
        let code = format!("{letter}{:02}.{}", 60 + i / CHAPTERS.len(), i % 10);
        out.push(Background {
            event_type: EventType::new(CodeClass::Icd10, code.clone()).expect("valid code"),
            label: format!("{chapter}: condition {code}"),
        });
    }
    for i in 0..config.background_procedures {
        let code = format!("{}", 99202 + i);
        out.push(Background {
            event_type: EventType::new(CodeClass::Cpt4, code.clone()).expect("valid code"),
            label: format!("Office visit {code}"),
        });
    }
    out
}

fn edge(parent: Option<(&str, &str)>, class: &str, code: &str, label: &str) -> String {
    let (pc, pk) = parent.unwrap_or(("", ""));
    format!("{pc}\t{pk}\t{class}\t{code}\t{label}\n")
}

/// Parent chapter of a diagnosis code, by its first letter.
fn chapter_of(code: &str) -> Option<&'static str> {
    let first = code.chars().next()?;
    if code == INDEX_CODE {
        return Some(INDEX_CHAPTER.0);
    }
    CHAPTERS.iter().find(|c| c.2 == first).map(|c| c.0)
}

fn vocabulary(config: &SynthConfig, background: &[Background]) -> (String, String) {
    let icd = CodeClass::Icd10.as_str();
    let cpt = CodeClass::Cpt4.as_str();
    let mut vocab = String::from("# parent_class\tparent_code\tchild_class\tchild_code\tchild_label\n");
    for (code, label, _) in CHAPTERS {
        vocab += &edge(None, icd, code, label);
    }
    vocab += &edge(None, icd, INDEX_CHAPTER.0, INDEX_CHAPTER.1);
    vocab += &edge(
        Some((icd, INDEX_CHAPTER.0)),
        icd,
        INDEX_CODE,
        "Contact with and (suspected) exposure to COVID-19",
    );
    vocab += &edge(None, cpt, PROCEDURE_ROOT.0, PROCEDURE_ROOT.1);
    for b in background {
        let t = &b.event_type;
        let parent = match t.class {
            CodeClass::Cpt4 => Some(PROCEDURE_ROOT.0),
            _ => chapter_of(&t.code),
        };
        vocab += &edge(parent.map(|p| (t.class.as_str(), p)), t.class.as_str(), &t.code, &b.label);
    }
    for s in &config.planted_signals {
        let parent = match s.class {
            CodeClass::Icd10 => chapter_of(&s.code),
            CodeClass::Cpt4 => Some(PROCEDURE_ROOT.0),
            CodeClass::Loinc => None,
        };
        vocab += &edge(parent.map(|p| (s.class.as_str(), p)), s.class.as_str(), &s.code, &s.label);
    }
    // Lab names are not in the diagnosis vocabulary; they come in as manual
    // supplements.
    let mut manual = String::from("# parent_class\tparent_code\tchild_class\tchild_code\tchild_label\n");
    for lab in &config.labs {
        manual += &edge(None, CodeClass::Loinc.as_str(), &lab.loinc, &lab.label);
    }
    (vocab, manual)
}

fn offset(rng: &mut ChaCha8Rng, config: &SynthConfig) -> u64 {
    rng.random_range(0..=u64::from(config.follow_up_days))
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

fn lab_value(rng: &mut ChaCha8Rng, lab: &LabSpec, high: bool, low: bool) -> f64 {
    let span = lab.high - lab.low;
    if high {
        round2(lab.high + span * rng.random_range(0.05..0.8))
    } else if low {
        round2(lab.low * rng.random_range(0.3..0.9))
    } else {
        round2(lab.low + span * rng.random_range(0.05..0.95))
    }
}

pub fn generate(config: &SynthConfig) -> Result<SynthOutput> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.n_patients;
    let labels = quota(&mut rng, n, config.positive_fraction);
    let females = quota(&mut rng, n, config.female_fraction);
    let background = background_types(config);
    let index_type = EventType::new(CodeClass::Icd10, INDEX_CODE)?;
    let width = n.to_string().len().max(5);

    let mut patients = Vec::with_capacity(n);
    let mut events = Vec::new();
    let mut observations = Vec::new();
    for i in 0..n {
        let id = format!("P{:0width$}", i + 1);
        let positive = labels[i];
        patients.push(PatientRecord {
            patient_id: id.clone(),
            gender: if females[i] { "female" } else { "male" }.to_string(),
            ethnicity: pick(&mut rng, &ETHNICITIES).to_string(),
            race: pick(&mut rng, &RACES).to_string(),
            age: rng.random_range(18..=90),
            covid_label: positive,
        });
        let index_day = config.start_date + Days::new(rng.random_range(0..=u64::from(config.enrollment_days)));
        let mut push = |t: &EventType, day: NaiveDate| {
            events.push(EventRecord {
                patient_id: id.clone(),
                date: day,
                event_type: t.clone(),
                provenance: Provenance::Raw,
            })
        };
        push(&index_type, index_day);
        for s in &config.planted_signals {
            let p = if positive { s.p_positive } else { s.p_negative };
            if rng.random_bool(p) {
                let day = index_day + Days::new(offset(&mut rng, config));
                push(&EventType::new(s.class, s.code.clone())?, day);
            }
        }
        for b in &background {
            if rng.random_bool(config.background_rate) {
                let day = index_day + Days::new(offset(&mut rng, config));
                push(&b.event_type, day);
            }
        }
        for lab in &config.labs {
            if !rng.random_bool(lab.presence) {
                continue;
            }
            let unranged = rng.random_bool(lab.unranged_patient_fraction);
            let reversed = unranged && lab.reverse_unranged;
            let p_high = if positive != reversed { lab.p_high_positive } else { lab.p_high_negative };
            let count = rng.random_range(1..=lab.max_measurements);
            for _ in 0..count {
                let x: f64 = rng.random();
                let (high, low) = (x < p_high, x >= p_high && x < p_high + lab.p_low);
                let value = lab_value(&mut rng, lab, high, low);
                let ranged = !unranged && !rng.random_bool(lab.range_missing_fraction);
                observations.push(RawObservation {
                    patient_id: id.clone(),
                    date: index_day + Days::new(offset(&mut rng, config)),
                    loinc_code: lab.loinc.clone(),
                    value,
                    unit: Some(lab.unit.clone()),
                    reference_low: ranged.then_some(lab.low),
                    reference_high: ranged.then_some(lab.high),
                });
            }
        }
    }
    observations.sort_by(|a, b| {
        (&a.patient_id, a.date, &a.loinc_code)
            .cmp(&(&b.patient_id, b.date, &b.loinc_code))
            .then(a.value.total_cmp(&b.value))
            .then(a.reference_low.is_some().cmp(&b.reference_low.is_some()))
    });

    let dataset = CohortDataset::new(patients, events);
    let signals = config
        .planted_signals
        .iter()
        .map(|s| {
            let t = EventType::new(s.class, s.code.clone())?;
            Ok(SignalManifest {
                node_id: node_id(s.class.as_str(), &s.code),
                event_type: t,
                label: s.label.clone(),
                p_positive: s.p_positive,
                p_negative: s.p_negative,
                analytic_phi: analytic_phi(config.positive_fraction, s.p_positive, s.p_negative),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        engine_version: crate::ENGINE_VERSION.to_string(),
        config: config.clone(),
        patients: n,
        positives: labels.iter().filter(|&&l| l).count(),
        females: females.iter().filter(|&&f| f).count(),
        events: dataset.events().len(),
        observations: observations.len(),
        signals,
    };
    let (vocab, manual) = vocabulary(config, &background);
    Ok(SynthOutput {
        dataset,
        observations,
        manifest,
        vocab,
        manual,
    })
}

/// Writes the dataset files, vocabulary, manual supplements, manifest and,
/// when configured, FHIR bundles with a LOINC allowlist.
pub fn write(output: &SynthOutput, dir: &Path) -> Result<()> {
    let ds = DatasetDir::new(dir);
    ds.write_dataset(&output.dataset)?;
    ds.write_observations(&output.observations)?;
    io::write_text(&dir.join(VOCAB_FILE), &output.vocab)?;
    io::write_text(&dir.join(MANUAL_FILE), &output.manual)?;
    let manifest = serde_json::to_string_pretty(&output.manifest)? + "\n";
    io::write_text(&dir.join(MANIFEST_FILE), &manifest)?;
    if output.manifest.config.fhir {
        write_fhir(output, dir)?;
    }
    Ok(())
}

pub const PATIENTS_PER_BUNDLE: usize = 100;

fn write_fhir(output: &SynthOutput, dir: &Path) -> Result<()> {
    let fhir_dir = dir.join(FHIR_DIR);
    std::fs::create_dir_all(&fhir_dir).map_err(|e| Error::io(&fhir_dir, e))?;
    let loincs: BTreeSet<&str> = output.manifest.config.labs.iter().map(|l| l.loinc.as_str()).collect();
    let allowlist: String = loincs.iter().map(|l| format!("{l}\n")).collect();
    io::write_text(&dir.join(ALLOWLIST_FILE), &allowlist)?;

    let patients: Vec<&PatientRecord> = output.dataset.patients().collect();
    for (b, chunk) in patients.chunks(PATIENTS_PER_BUNDLE).enumerate() {
        let mut entries = Vec::new();
        for p in chunk {
            let first = output
                .dataset
                .events_of(&p.patient_id)
                .first()
                .map(|e| e.date)
                .expect("every patient has an index event");
            entries.push(patient_resource(p, first));
            for e in output.dataset.events_of(&p.patient_id) {
                entries.push(event_resource(e));
            }
        }
        let lo = output.observations.partition_point(|o| o.patient_id < chunk[0].patient_id);
        let hi = output
            .observations
            .partition_point(|o| o.patient_id <= chunk[chunk.len() - 1].patient_id);
        for o in &output.observations[lo..hi] {
            entries.push(observation_resource(o));
        }
        let bundle = json!({
            "resourceType": "Bundle",
            "type": "collection",
            "entry": entries.into_iter().map(|r| json!({"resource": r})).collect::<Vec<_>>(),
        });
        let path = fhir_dir.join(format!("bundle-{:04}.json", b + 1));
        io::write_text(&path, &(serde_json::to_string(&bundle)? + "\n"))?;
    }
    Ok(())
}

fn patient_resource(p: &PatientRecord, first_event: NaiveDate) -> Value {
    // Born on the day after the birthday `age` years before the first event,
    // so the age on that date is exactly `age`.
    let birth = first_event
        .checked_sub_months(Months::new(12 * p.age))
        .and_then(|d| d.checked_sub_days(Days::new(1)))
        .expect("birth date in range");
    json!({
        "resourceType": "Patient",
        "id": p.patient_id,
        "gender": p.gender,
        "birthDate": birth.to_string(),
        "extension": [
            {"url": fhir::COVID_LABEL_EXTENSION, "valueBoolean": p.covid_label},
            {"url": fhir::US_CORE_RACE, "extension": [{"url": "text", "valueString": p.race}]},
            {"url": fhir::US_CORE_ETHNICITY, "extension": [{"url": "text", "valueString": p.ethnicity}]},
        ],
    })
}

fn coding(class: CodeClass, code: &str) -> Value {
    json!({"coding": [{"system": fhir::system_for_class(class), "code": code}]})
}

fn event_resource(e: &EventRecord) -> Value {
    let subject = json!({"reference": format!("Patient/{}", e.patient_id)});
    let code = coding(e.event_type.class, &e.event_type.code);
    match e.event_type.class {
        CodeClass::Cpt4 => json!({
            "resourceType": "Procedure",
            "subject": subject,
            "code": code,
            "performedDateTime": e.date.to_string(),
        }),
        _ => json!({
            "resourceType": "Condition",
            "subject": subject,
            "code": code,
            "onsetDateTime": e.date.to_string(),
        }),
    }
}

fn observation_resource(o: &RawObservation) -> Value {
    let mut r = json!({
        "resourceType": "Observation",
        "subject": {"reference": format!("Patient/{}", o.patient_id)},
        "code": coding(CodeClass::Loinc, &o.loinc_code),
        "effectiveDateTime": o.date.to_string(),
        "valueQuantity": {"value": o.value, "unit": o.unit},
    });
    if let (Some(low), Some(high)) = (o.reference_low, o.reference_high) {
        r["referenceRange"] = json!([{"low": {"value": low}, "high": {"value": high}}]);
    }
    r
}
