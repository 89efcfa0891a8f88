//! Cohort files: JSON lines (one admission per line) and a wide CSV with
//! one row per admission.
//!
//! Wide CSV columns after the fixed ones:
//! `comorbidity:<name>`, `static:<name>`, `series:<day>:<name>`,
//! `lab:<day>:<unit>:<code or ->:<raw name>` and
//! `dose:<day>:<route or ->:<drug>`. Lab and dose cells may hold several
//! values separated by `;`. Empty cells are absent values.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use chrono::NaiveDate;

use super::record::{AdmissionRecord, DoseEvent, LabObservation};
use crate::error::{Error, Result};

const FIXED: &[&str] = &[
    "admission_id",
    "patient_id",
    "department",
    "age",
    "gender",
    "admit_date",
    "discharge_date",
    "discharge_destination",
    "death_in_hospital",
    "last_followup_day",
    "death_day",
    "icu_days",
    "emergency_only",
    "radiological_covid_flag",
    "covid_coded_diagnosis",
    "rtpcr_positive_days",
];

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|source| Error::Read { path: path.to_path_buf(), source })
}

pub fn read_jsonl<R: Read>(input: R) -> Result<Vec<AdmissionRecord>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: AdmissionRecord =
            serde_json::from_str(&line).map_err(|e| Error::InvalidInput(format!("line {}: {e}", i + 1)))?;
        record.validate()?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_jsonl<W: Write>(records: &[AdmissionRecord], out: W) -> Result<()> {
    let mut w = BufWriter::new(out);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_wide_csv<W: Write>(records: &[AdmissionRecord], out: W) -> Result<()> {
    let mut comorbidities = BTreeSet::new();
    let mut statics = BTreeSet::new();
    let mut series = BTreeSet::new();
    let mut labs = BTreeSet::new();
    let mut doses = BTreeSet::new();
    for r in records {
        comorbidities.extend(r.comorbidity_flags.keys().map(|k| format!("comorbidity:{k}")));
        statics.extend(r.static_measures.keys().map(|k| format!("static:{k}")));
        for (name, points) in &r.daily_series {
            series.extend(points.iter().map(|(d, _)| (*d, name.clone())));
        }
        labs.extend(r.lab_observations.iter().map(lab_column));
        doses.extend(r.treatments.iter().map(dose_column));
    }
    let series: Vec<String> = series.into_iter().map(|(d, n)| format!("series:{d}:{n}")).collect();

    let mut header: Vec<String> = FIXED.iter().map(|s| s.to_string()).collect();
    let dynamic_start = header.len();
    header.extend(comorbidities);
    header.extend(statics);
    header.extend(series);
    header.extend(labs);
    header.extend(doses);
    let index: BTreeMap<&str, usize> =
        header.iter().enumerate().skip(dynamic_start).map(|(i, h)| (h.as_str(), i)).collect();

    let mut w = csv::Writer::from_writer(out);
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![String::new(); header.len()];
        let opt = |v: Option<u32>| v.map(|x| x.to_string()).unwrap_or_default();
        let fixed = [
            r.admission_id.clone(),
            r.patient_id.clone(),
            r.department.clone(),
            r.age.to_string(),
            r.gender.clone(),
            r.admit_date.to_string(),
            r.discharge_date.to_string(),
            r.discharge_destination.clone(),
            r.death_in_hospital.to_string(),
            r.last_followup_day.to_string(),
            opt(r.death_day),
            opt(r.icu_days),
            r.emergency_only.to_string(),
            r.radiological_covid_flag.to_string(),
            r.covid_coded_diagnosis.to_string(),
            join(r.rtpcr_positive_days.iter()),
        ];
        for (cell, v) in row.iter_mut().zip(fixed) {
            *cell = v;
        }
        for (k, v) in &r.comorbidity_flags {
            row[index[format!("comorbidity:{k}").as_str()]] = v.to_string();
        }
        for (k, v) in &r.static_measures {
            row[index[format!("static:{k}").as_str()]] = v.to_string();
        }
        for (name, points) in &r.daily_series {
            for (d, v) in points {
                row[index[format!("series:{d}:{name}").as_str()]] = v.to_string();
            }
        }
        for o in &r.lab_observations {
            append(&mut row[index[lab_column(o).as_str()]], o.value);
        }
        for d in &r.treatments {
            append(&mut row[index[dose_column(d).as_str()]], d.dose);
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_wide_csv<R: Read>(input: R) -> Result<Vec<AdmissionRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    for f in FIXED {
        if !header.iter().any(|h| h == f) {
            return Err(Error::InvalidInput(format!("wide CSV lacks column `{f}`")));
        }
    }
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let ctx = |msg: String| Error::InvalidInput(format!("row {}: {msg}", line + 1));
        let mut fixed: BTreeMap<&str, &str> = BTreeMap::new();
        let mut r = AdmissionRecord {
            admission_id: String::new(),
            patient_id: String::new(),
            department: String::new(),
            age: 0,
            gender: String::new(),
            admit_date: NaiveDate::MIN,
            discharge_date: NaiveDate::MIN,
            discharge_destination: String::new(),
            death_in_hospital: false,
            last_followup_day: 0,
            death_day: None,
            icu_days: None,
            emergency_only: false,
            comorbidity_flags: BTreeMap::new(),
            static_measures: BTreeMap::new(),
            daily_series: BTreeMap::new(),
            lab_observations: Vec::new(),
            treatments: Vec::new(),
            radiological_covid_flag: false,
            rtpcr_positive_days: Vec::new(),
            covid_coded_diagnosis: false,
        };
        for (col, cell) in header.iter().zip(rec.iter()) {
            if FIXED.contains(&col.as_str()) {
                fixed.insert(col.as_str(), cell);
                continue;
            }
            if cell.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = col.splitn(5, ':').collect();
            match parts.as_slice() {
                ["comorbidity", rest @ ..] => {
                    r.comorbidity_flags.insert(rest.join(":"), parse_bool(cell).map_err(ctx)?);
                }
                ["static", rest @ ..] => {
                    r.static_measures.insert(rest.join(":"), num(cell).map_err(ctx)?);
                }
                ["series", day, rest @ ..] => {
                    let day = int(day).map_err(ctx)?;
                    r.daily_series.entry(rest.join(":")).or_default().push((day, num(cell).map_err(ctx)?));
                }
                ["lab", day, unit, code, name] => {
                    let day = int(day).map_err(ctx)?;
                    for v in cell.split(';') {
                        r.lab_observations.push(LabObservation {
                            raw_name: name.to_string(),
                            code: (*code != "-").then(|| code.to_string()),
                            value: num(v).map_err(ctx)?,
                            unit: unit.to_string(),
                            day,
                        });
                    }
                }
                ["dose", day, route, rest @ ..] => {
                    let day = int(day).map_err(ctx)?;
                    for v in cell.split(';') {
                        r.treatments.push(DoseEvent {
                            drug: rest.join(":"),
                            day,
                            dose: num(v).map_err(ctx)?,
                            route: (*route != "-").then(|| route.to_string()),
                        });
                    }
                }
                _ => return Err(ctx(format!("unrecognised column `{col}`"))),
            }
        }
        let get = |k: &str| fixed.get(k).copied().unwrap_or_default().trim();
        let opt_u32 = |k: &str| -> Result<Option<u32>, String> {
            let v = get(k);
            if v.is_empty() {
                Ok(None)
            } else {
                v.parse().map(Some).map_err(|_| format!("bad `{k}`: `{v}`"))
            }
        };
        let date =
            |k: &str| -> Result<NaiveDate, String> { get(k).parse().map_err(|_| format!("bad `{k}`: `{}`", get(k))) };
        r.admission_id = get("admission_id").to_string();
        r.patient_id = get("patient_id").to_string();
        r.department = get("department").to_string();
        r.age = get("age").parse().map_err(|_| ctx(format!("bad age `{}`", get("age"))))?;
        r.gender = get("gender").to_string();
        r.admit_date = date("admit_date").map_err(ctx)?;
        r.discharge_date = date("discharge_date").map_err(ctx)?;
        r.discharge_destination = get("discharge_destination").to_string();
        r.death_in_hospital = parse_bool(get("death_in_hospital")).map_err(ctx)?;
        r.last_followup_day = opt_u32("last_followup_day").map_err(ctx)?.unwrap_or(0);
        r.death_day = opt_u32("death_day").map_err(ctx)?;
        r.icu_days = opt_u32("icu_days").map_err(ctx)?;
        r.emergency_only = parse_bool(get("emergency_only")).map_err(ctx)?;
        r.radiological_covid_flag = parse_bool(get("radiological_covid_flag")).map_err(ctx)?;
        r.covid_coded_diagnosis = parse_bool(get("covid_coded_diagnosis")).map_err(ctx)?;
        r.rtpcr_positive_days = get("rtpcr_positive_days")
            .split(';')
            .filter(|s| !s.trim().is_empty())
            .map(int)
            .collect::<Result<_, _>>()
            .map_err(ctx)?;
        for points in r.daily_series.values_mut() {
            points.sort_by_key(|(d, _)| *d);
        }
        r.validate()?;
        out.push(r);
    }
    Ok(out)
}

/// Reads a cohort file, choosing the format from the extension
/// (`.csv` is wide CSV, anything else JSON lines).
pub fn read_cohort(path: &Path) -> Result<Vec<AdmissionRecord>> {
    let file = open(path)?;
    if is_csv(path) {
        read_wide_csv(file)
    } else {
        read_jsonl(file)
    }
}

pub fn write_cohort(path: &Path, records: &[AdmissionRecord]) -> Result<()> {
    let file = File::create(path)?;
    if is_csv(path) {
        write_wide_csv(records, file)
    } else {
        write_jsonl(records, file)
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn lab_column(o: &LabObservation) -> String {
    format!("lab:{}:{}:{}:{}", o.day, o.unit, o.code.as_deref().unwrap_or("-"), o.raw_name)
}

fn dose_column(d: &DoseEvent) -> String {
    format!("dose:{}:{}:{}", d.day, d.route.as_deref().unwrap_or("-"), d.drug)
}

fn append(cell: &mut String, v: f64) {
    if !cell.is_empty() {
        cell.push(';');
    }
    cell.push_str(&v.to_string());
}

fn join<T: ToString>(items: impl Iterator<Item = T>) -> String {
    items.map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

fn num(s: &str) -> Result<f64, String> {
    s.trim().parse().map_err(|_| format!("bad number `{s}`"))
}

fn int(s: &str) -> Result<i32, String> {
    s.trim().parse().map_err(|_| format!("bad integer `{s}`"))
}

fn parse_bool(s: &str) -> Result<bool, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "" | "false" | "0" | "no" => Ok(false),
        "true" | "1" | "yes" => Ok(true),
        other => Err(format!("bad boolean `{other}`")),
    }
}
