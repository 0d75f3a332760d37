//! Reading and writing panels in the FRED-MD CSV layout.
//!
//! Row 1 holds the date column header followed by the series names, row 2
//! starts with `Transform:` followed by one integer code per series, and
//! every later row is a date followed by decimal values. Blank cells mark
//! missing observations.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::Panel;

pub const TRANSFORM_LABEL: &str = "Transform:";

/// A column removed at ingestion because it had missing cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedColumn {
    pub name: String,
    pub reason: String,
    pub missing_cells: usize,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub panel: Panel,
    pub dropped: Vec<DroppedColumn>,
}

impl Ingested {
    /// The drop report as JSON lines, one object per removed column.
    pub fn drop_report_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for d in &self.dropped {
            out.push_str(&serde_json::to_string(d)?);
            out.push('\n');
        }
        Ok(out)
    }
}

pub fn ingest_fredmd(path: impl AsRef<Path>) -> Result<Ingested> {
    let file = std::fs::File::open(path.as_ref())?;
    read_fredmd(file)
}

fn parse_tcode(column: &str, raw: &str) -> Result<Option<u8>> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(None);
    }
    let bad = || Error::NonIntegerTcode {
        column: column.to_string(),
        raw: raw.to_string(),
    };
    let value: f64 = raw.parse().map_err(|_| bad())?;
    if value.fract() != 0.0 || !(0.0..=255.0).contains(&value) {
        return Err(bad());
    }
    let code = value as u8;
    if !(1..=7).contains(&code) {
        return Err(Error::UnknownCode(code));
    }
    Ok(Some(code))
}

pub fn read_fredmd<R: Read>(reader: R) -> Result<Ingested> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();

    let header = records
        .next()
        .ok_or_else(|| Error::MalformedHeader("file is empty".into()))??;
    if header.len() < 2 {
        return Err(Error::MalformedHeader("need a date column and at least one series".into()));
    }
    let names: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    if names.iter().any(String::is_empty) {
        return Err(Error::MalformedHeader("blank series name".into()));
    }
    let n = names.len();

    let transform = records
        .next()
        .ok_or_else(|| Error::MalformedHeader("missing transformation-code row".into()))??;
    let label = transform.get(0).unwrap_or("").trim();
    if !label.eq_ignore_ascii_case(TRANSFORM_LABEL) && !label.eq_ignore_ascii_case("transform") {
        return Err(Error::MalformedHeader(format!(
            "second row must start with `{TRANSFORM_LABEL}`, found `{label}`"
        )));
    }
    let mut tcodes = Vec::with_capacity(n);
    for (j, name) in names.iter().enumerate() {
        tcodes.push(parse_tcode(name, transform.get(j + 1).unwrap_or(""))?);
    }

    let mut dates = Vec::new();
    let mut cells: Vec<Vec<Option<f64>>> = vec![Vec::new(); n];
    for (line, record) in records.enumerate() {
        let record = record?;
        if record.iter().all(|c| c.trim().is_empty()) {
            continue;
        }
        dates.push(record.get(0).unwrap_or("").trim().to_string());
        for (j, col) in cells.iter_mut().enumerate() {
            let raw = record.get(j + 1).unwrap_or("").trim();
            let value = if raw.is_empty() || raw.eq_ignore_ascii_case("nan") || raw == "NA" {
                None
            } else {
                Some(raw.parse::<f64>().map_err(|_| {
                    Error::Parse(format!("data row {}: `{raw}` in column `{}`", line + 1, names[j]))
                })?)
            };
            col.push(value.filter(|v| v.is_finite()));
        }
    }
    if dates.is_empty() {
        return Err(Error::EmptyPanel("no data rows".into()));
    }

    let mut dropped = Vec::new();
    let mut keep = Vec::new();
    for (j, col) in cells.iter().enumerate() {
        let missing = col.iter().filter(|v| v.is_none()).count();
        if missing > 0 {
            dropped.push(DroppedColumn {
                name: names[j].clone(),
                reason: "missing values".into(),
                missing_cells: missing,
            });
        } else {
            keep.push(j);
        }
    }
    if keep.is_empty() {
        return Err(Error::EmptyPanel("every column has missing values".into()));
    }
    let t = dates.len();
    let values = DMatrix::from_fn(t, keep.len(), |r, c| cells[keep[c]][r].unwrap_or(f64::NAN));
    let panel = Panel::with_metadata(
        values,
        dates,
        keep.iter().map(|&j| names[j].clone()).collect(),
        vec![None; keep.len()],
        keep.iter().map(|&j| tcodes[j]).collect(),
    )?;
    Ok(Ingested { panel, dropped })
}

/// Writes a panel in the same layout [`read_fredmd`] accepts. Values use the
/// shortest representation that parses back to the identical `f64`.
pub fn write_fredmd<W: Write>(panel: &Panel, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["sasdate".to_string()];
    header.extend(panel.names().iter().cloned());
    wtr.write_record(&header)?;
    let mut codes = vec![TRANSFORM_LABEL.to_string()];
    codes.extend(
        panel
            .tcodes()
            .iter()
            .map(|c| c.map(|c| c.to_string()).unwrap_or_default()),
    );
    wtr.write_record(&codes)?;
    let values = panel.values();
    for (r, date) in panel.dates().iter().enumerate() {
        let mut row = Vec::with_capacity(panel.n_series() + 1);
        row.push(date.clone());
        row.extend(values.row(r).iter().map(|v| format!("{v:?}")));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn save_fredmd(panel: &Panel, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    write_fredmd(panel, std::io::BufWriter::new(file))
}
