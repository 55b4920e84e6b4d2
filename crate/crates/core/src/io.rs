//! Tab-separated file formats for datasets and raw lab observations.
//!
//! All files are UTF-8, one record per line; blank lines and lines starting
//! with `#` are ignored.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::fhir::RawObservation;
use crate::model::{CohortDataset, EventRecord, EventType, PatientRecord};

pub const PATIENTS_FILE: &str = "patients.tsv";
pub const EVENTS_FILE: &str = "events.tsv";
pub const OBSERVATIONS_FILE: &str = "observations.tsv";

/// Iterates the data lines of a file as `(line_number, fields)`.
fn records(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines()
        .enumerate()
        .map(|(i, line)| (i + 1, line.trim_end_matches('\r')))
        .filter(|(_, line)| !line.trim().is_empty() && !line.starts_with('#'))
        .map(|(n, line)| (n, line.split('\t').collect()))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn expect_fields<'a>(path: &Path, line: usize, fields: Vec<&'a str>, n: usize) -> Result<Vec<&'a str>> {
    if fields.len() != n {
        return Err(Error::parse(
            path,
            line,
            format!("expected {n} tab-separated fields, found {}", fields.len()),
        ));
    }
    Ok(fields)
}

fn parse_field<T: std::str::FromStr>(path: &Path, line: usize, what: &str, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::parse(path, line, format!("invalid {what} {s:?}")))
}

pub fn parse_patients(path: &Path, text: &str) -> Result<Vec<PatientRecord>> {
    records(text)
        .map(|(line, fields)| {
            let f = expect_fields(path, line, fields, 6)?;
            let covid_label = match f[5] {
                "0" => false,
                "1" => true,
                other => {
                    return Err(Error::parse(path, line, format!("covid_label must be 0 or 1, got {other:?}")))
                }
            };
            Ok(PatientRecord {
                patient_id: f[0].to_string(),
                gender: f[1].to_string(),
                ethnicity: f[2].to_string(),
                race: f[3].to_string(),
                age: parse_field(path, line, "age", f[4])?,
                covid_label,
            })
        })
        .collect()
}

pub fn parse_events(path: &Path, text: &str) -> Result<Vec<EventRecord>> {
    records(text)
        .map(|(line, fields)| {
            let f = expect_fields(path, line, fields, 5)?;
            let class = f[2].parse().map_err(|e: Error| Error::parse(path, line, e.to_string()))?;
            let event_type = EventType::new(class, f[3]).map_err(|e| Error::parse(path, line, e.to_string()))?;
            Ok(EventRecord {
                patient_id: f[0].to_string(),
                date: parse_field(path, line, "date", f[1])?,
                event_type,
                provenance: f[4].parse().map_err(|e: Error| Error::parse(path, line, e.to_string()))?,
            })
        })
        .collect()
}

fn optional_f64(path: &Path, line: usize, what: &str, s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        return Ok(None);
    }
    let v: f64 = parse_field(path, line, what, s)?;
    if !v.is_finite() {
        return Err(Error::parse(path, line, format!("{what} must be finite")));
    }
    Ok(Some(v))
}

pub fn parse_observations(path: &Path, text: &str) -> Result<Vec<RawObservation>> {
    records(text)
        .map(|(line, fields)| {
            let f = expect_fields(path, line, fields, 7)?;
            let value = optional_f64(path, line, "value", f[3])?
                .ok_or_else(|| Error::parse(path, line, "missing value"))?;
            Ok(RawObservation {
                patient_id: f[0].to_string(),
                date: parse_field(path, line, "date", f[1])?,
                loinc_code: f[2].to_string(),
                value,
                unit: (!f[4].is_empty()).then(|| f[4].to_string()),
                reference_low: optional_f64(path, line, "reference low", f[5])?,
                reference_high: optional_f64(path, line, "reference high", f[6])?,
            })
        })
        .collect()
}

pub fn format_patients<'a>(patients: impl IntoIterator<Item = &'a PatientRecord>) -> String {
    let mut out = String::from("# patient_id\tgender\tethnicity\trace\tage\tcovid_label\n");
    for p in patients {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            p.patient_id,
            p.gender,
            p.ethnicity,
            p.race,
            p.age,
            u8::from(p.covid_label)
        );
    }
    out
}

pub fn format_events<'a>(events: impl IntoIterator<Item = &'a EventRecord>) -> String {
    let mut out = String::from("# patient_id\tdate\tclass\tcode\tprovenance\n");
    for e in events {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            e.patient_id, e.date, e.event_type.class, e.event_type.code, e.provenance
        );
    }
    out
}

pub fn format_observations<'a>(observations: impl IntoIterator<Item = &'a RawObservation>) -> String {
    fn opt(v: Option<f64>) -> String {
        v.map(|v| v.to_string()).unwrap_or_default()
    }
    let mut out = String::from("# patient_id\tdate\tloinc_code\tvalue\tunit\treference_low\treference_high\n");
    for o in observations {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            o.patient_id,
            o.date,
            o.loinc_code,
            o.value,
            o.unit.as_deref().unwrap_or(""),
            opt(o.reference_low),
            opt(o.reference_high)
        );
    }
    out
}

/// A dataset directory: `patients.tsv`, `events.tsv` and, before
/// imputation, `observations.tsv`.
#[derive(Debug, Clone)]
pub struct DatasetDir {
    root: PathBuf,
}

impl DatasetDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DatasetDir { root: root.into() }
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.root.join(file)
    }

    pub fn read_dataset(&self) -> Result<CohortDataset> {
        let pp = self.path(PATIENTS_FILE);
        let ep = self.path(EVENTS_FILE);
        let patients = parse_patients(&pp, &read_text(&pp)?)?;
        let events = parse_events(&ep, &read_text(&ep)?)?;
        Ok(CohortDataset::new(patients, events))
    }

    /// Raw observations awaiting imputation; a missing file means none.
    pub fn read_observations(&self) -> Result<Vec<RawObservation>> {
        let path = self.path(OBSERVATIONS_FILE);
        if !path.exists() {
            return Ok(Vec::new());
        }
        parse_observations(&path, &read_text(&path)?)
    }

    pub fn write_dataset(&self, dataset: &CohortDataset) -> Result<()> {
        self.create()?;
        write_text(&self.path(PATIENTS_FILE), &format_patients(dataset.patients()))?;
        write_text(&self.path(EVENTS_FILE), &format_events(dataset.events()))
    }

    pub fn write_observations(&self, observations: &[RawObservation]) -> Result<()> {
        self.create()?;
        write_text(&self.path(OBSERVATIONS_FILE), &format_observations(observations))
    }

    pub fn create(&self) -> Result<()> {
        fs::create_dir_all(&self.root).map_err(|e| Error::io(&self.root, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::*;
    use crate::model::CodeClass;

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let text = "# header\n\nP1\tfemale\tnh\twhite\t34\t1\n# trailing\n";
        let p = parse_patients(Path::new("p.tsv"), text).unwrap();
        assert_eq!(p.len(), 1);
        assert!(p[0].covid_label);
    }

    #[test]
    fn bad_rows_name_the_line() {
        let err = parse_events(Path::new("e.tsv"), "# h\nP1\t2020-01-01\tICD-10\n").unwrap_err();
        assert!(err.to_string().contains("e.tsv:2"), "{err}");
        let err = parse_events(Path::new("e.tsv"), "P1\t2020-13-01\tICD-10\tR05\tRAW\n").unwrap_err();
        assert!(err.to_string().contains("invalid date"), "{err}");
        let err = parse_patients(Path::new("p.tsv"), "P1\tf\te\tr\t3\tyes\n").unwrap_err();
        assert!(err.to_string().contains("covid_label"), "{err}");
    }

    #[test]
    fn dataset_dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = CohortDataset::new(
            [patient("P1", "female", 30, true), patient("P2", "male", 3, false)],
            [
                event("P1", "2020-04-01", CodeClass::Icd10, "U07.1"),
                event("P1", "2020-04-01", CodeClass::Icd10, "U07.1"),
                event("P2", "2020-05-01", CodeClass::Loinc, "1920-8:HIGH"),
            ],
        );
        let d = DatasetDir::new(dir.path().join("ds"));
        d.write_dataset(&ds).unwrap();
        assert_eq!(d.read_dataset().unwrap(), ds);
        assert!(d.read_observations().unwrap().is_empty());
    }

    #[test]
    fn observations_round_trip_with_missing_bounds() {
        let obs = vec![
            RawObservation {
                patient_id: "P1".into(),
                date: day("2020-01-01"),
                loinc_code: "1920-8".into(),
                value: 0.1 + 0.2,
                unit: Some("U/L".into()),
                reference_low: Some(10.0),
                reference_high: None,
            },
            RawObservation {
                patient_id: "P2".into(),
                date: day("2020-01-02"),
                loinc_code: "1920-8".into(),
                value: -3.5e-7,
                unit: None,
                reference_low: None,
                reference_high: None,
            },
        ];
        let text = format_observations(&obs);
        assert_eq!(parse_observations(Path::new("o.tsv"), &text).unwrap(), obs);
    }
}
