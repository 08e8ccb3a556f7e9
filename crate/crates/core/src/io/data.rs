//! Patient-level CSV files.
//!
//! Columns: `id, initial_arm, response, second_arm, outcome`. Arms are given
//! by the labels of the design; `response` is `1`/`0` (also accepted:
//! `true`/`false`, `yes`/`no`). Control-arm rows leave `response` and
//! `second_arm` empty, as do responders in designs that do not re-randomize
//! them. Rows without an outcome (empty or `NA`) are dropped and counted.

use std::io::{Read, Write};

use serde::Deserialize;

use crate::design::{InitialAssignment, PatientRecord, SmartDesign};
use crate::error::{Error, Result};

pub const COLUMNS: [&str; 5] = ["id", "initial_arm", "response", "second_arm", "outcome"];

#[derive(Debug, Deserialize)]
struct Row {
    id: String,
    initial_arm: String,
    response: Option<String>,
    second_arm: Option<String>,
    outcome: Option<String>,
}

/// Records read from a file, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct Ingest {
    pub records: Vec<PatientRecord>,
    pub dropped_missing_outcome: usize,
}

fn parse_response(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" => Some(true),
        "0" | "false" | "no" => Some(false),
        _ => None,
    }
}

fn blank(v: &Option<String>) -> Option<&str> {
    v.as_deref().map(str::trim).filter(|s| !s.is_empty())
}

fn row_to_record(row: &Row, design: &SmartDesign, line: u64) -> Result<Option<PatientRecord>> {
    let err = |message: String| Error::DataFormat { line, message };
    let outcome = match blank(&row.outcome) {
        None => return Ok(None),
        Some(s) if s.eq_ignore_ascii_case("na") => return Ok(None),
        Some(s) => s
            .parse::<f64>()
            .map_err(|_| err(format!("outcome '{s}' is not a number")))?,
    };
    let label = row.initial_arm.trim();
    let initial = if let Some(j) = design.initial_arms().iter().position(|a| a == label) {
        InitialAssignment::Arm(j)
    } else if design.control().is_some_and(|c| c.label == label) {
        InitialAssignment::Control
    } else {
        return Err(err(format!("unknown initial arm '{label}'")));
    };
    let response = match blank(&row.response) {
        None => None,
        Some(s) => Some(parse_response(s).ok_or_else(|| err(format!("response '{s}' is not 0/1")))?),
    };
    let second_arm = match (blank(&row.second_arm), response) {
        (None, _) => None,
        (Some(s), Some(true)) => Some(
            design
                .responder_arms()
                .iter()
                .position(|a| a == s)
                .filter(|_| design.rerandomizes_responders())
                .ok_or_else(|| err(format!("unknown responder arm '{s}'")))?,
        ),
        (Some(s), Some(false)) => Some(
            design
                .nonresponder_arms()
                .iter()
                .position(|a| a == s)
                .ok_or_else(|| err(format!("unknown non-responder arm '{s}'")))?,
        ),
        (Some(s), None) => return Err(err(format!("second arm '{s}' given without a response"))),
    };
    let record = PatientRecord { id: row.id.trim().to_string(), initial, response, second_arm, outcome };
    design
        .validate_record(&record)
        .map_err(|e| err(e.to_string()))?;
    Ok(Some(record))
}

/// Parse and validate a CSV stream against `design`.
pub fn read_records<R: Read>(reader: R, design: &SmartDesign) -> Result<Ingest> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    for col in COLUMNS {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::DataFormat { line: 1, message: format!("missing column '{col}'") });
        }
    }
    let mut records = Vec::new();
    let mut dropped = 0;
    for result in rdr.records() {
        let raw = result?;
        let line = raw.position().map_or(0, |p| p.line());
        let row: Row = raw
            .deserialize(Some(&headers))
            .map_err(|e| Error::DataFormat { line, message: e.to_string() })?;
        match row_to_record(&row, design, line)? {
            Some(r) => records.push(r),
            None => dropped += 1,
        }
    }
    if dropped > 0 {
        log::info!("dropped {dropped} row(s) with a missing outcome");
    }
    Ok(Ingest { records, dropped_missing_outcome: dropped })
}

pub fn read_records_from_path(path: &std::path::Path, design: &SmartDesign) -> Result<Ingest> {
    read_records(std::fs::File::open(path).map_err(Error::file(path))?, design)
}

/// Write records with outcomes in shortest round-trip form, so reading the
/// file back gives bit-identical values.
pub fn write_records<W: Write>(writer: W, records: &[PatientRecord], design: &SmartDesign) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(COLUMNS)?;
    for r in records {
        let (initial, response, second) = match r.initial {
            InitialAssignment::Control => {
                let c = design.control().ok_or(Error::NoControlArm)?;
                (c.label.clone(), String::new(), String::new())
            }
            InitialAssignment::Arm(j) => {
                let second = match (r.response, r.second_arm) {
                    (Some(true), Some(k)) => design.responder_arms()[k].clone(),
                    (Some(false), Some(l)) => design.nonresponder_arms()[l].clone(),
                    _ => String::new(),
                };
                let response = match r.response {
                    Some(true) => "1",
                    Some(false) => "0",
                    None => "",
                };
                (design.initial_arms()[j].clone(), response.to_string(), second)
            }
        };
        w.write_record([r.id.as_str(), &initial, &response, &second, &r.outcome.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
