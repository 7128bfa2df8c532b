//! Cohort CSV reader and writer.
//!
//! Header: `stay_id,label,agg_0..agg_{F-1},vit_c0_h1..vit_c{C-1}_h{T}` with
//! hours inner and channels outer. Missing values are empty fields. Row
//! numbers in errors are file line numbers (the header is line 1).

use std::io::{Read, Write};
use std::path::Path;

use crate::dataset::record::{Cohort, PatientRecord};
use crate::error::{Error, Result};
use crate::layout::Layout;

/// Column names in file order.
pub fn csv_header(layout: &Layout) -> Vec<String> {
    let mut cols = vec!["stay_id".to_string(), "label".to_string()];
    cols.extend((0..layout.features).map(|f| format!("agg_{f}")));
    for c in 0..layout.channels {
        cols.extend((1..=layout.hours).map(|h| format!("vit_c{c}_h{h}")));
    }
    cols
}

pub fn load_cohort_csv(path: impl AsRef<Path>) -> Result<Cohort> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    read_cohort_csv(file, Layout::STANDARD, path.display().to_string())
}

/// Parses a cohort laid out as `layout` from any reader.
pub fn read_cohort_csv<R: Read>(
    reader: R,
    layout: Layout,
    provenance: impl Into<String>,
) -> Result<Cohort> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let expected = csv_header(&layout);
    let mut rows = rdr.records();
    let header = rows.next().ok_or_else(|| Error::Schema {
        row: 1,
        detail: "missing header row".into(),
    })??;
    if header.len() != expected.len() {
        return Err(Error::Schema {
            row: 1,
            detail: format!(
                "header has {} columns, expected {}",
                header.len(),
                expected.len()
            ),
        });
    }
    if let Some((got, want)) = header
        .iter()
        .zip(&expected)
        .find(|(g, w)| g.trim() != w.as_str())
    {
        return Err(Error::Schema {
            row: 1,
            detail: format!("header column {got:?} where {want:?} was expected"),
        });
    }

    let nv = layout.vital_tokens();
    let nf = layout.features;
    let mut records = Vec::new();
    for (i, row) in rows.enumerate() {
        let line = i + 2;
        let row = row?;
        if row.len() != expected.len() {
            return Err(Error::Schema {
                row: line,
                detail: format!("{} columns, expected {}", row.len(), expected.len()),
            });
        }
        let stay_id = row[0].trim().to_string();
        let label = match row[1].trim() {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::Parse {
                    row: line,
                    column: "label".into(),
                    detail: format!("{other:?} is not 0 or 1"),
                })
            }
        };
        let mut values = Vec::with_capacity(nf + nv);
        for (cell, name) in row.iter().zip(&expected).skip(2) {
            values.push(parse_cell(cell, line, name)?);
        }
        let aggregated = values[..nf].to_vec();
        let vitals = values[nf..].to_vec();
        records.push(PatientRecord {
            stay_id,
            vitals,
            aggregated,
            label,
        });
    }
    Cohort::new(layout, records, provenance)
}

fn parse_cell(cell: &str, row: usize, column: &str) -> Result<Option<f64>> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Ok(None);
    }
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(Error::Parse {
            row,
            column: column.to_string(),
            detail: format!("{cell:?} is not a finite number"),
        }),
    }
}

pub fn save_cohort_csv(cohort: &Cohort, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_cohort_csv(cohort, std::io::BufWriter::new(file))
}

/// Writes `cohort` with shortest round-trip float formatting.
pub fn write_cohort_csv<W: Write>(cohort: &Cohort, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(csv_header(&cohort.layout))?;
    let fmt = |v: &Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in &cohort.records {
        let mut row = Vec::with_capacity(2 + r.aggregated.len() + r.vitals.len());
        row.push(r.stay_id.clone());
        row.push(r.label.to_string());
        row.extend(r.aggregated.iter().map(fmt));
        row.extend(r.vitals.iter().map(fmt));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}
