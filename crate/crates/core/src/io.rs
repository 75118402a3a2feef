//! CSV and JSON files for datasets.
//!
//! Dataset CSVs carry a header. Columns named `Y`, `D`, `U`, `W` and `V`
//! (outcome, treatment, instrument, unit weight, localization covariate)
//! are recognized in any order and every other column is a covariate. A
//! header without a `Y` column, or no header at all, falls back to
//! position: `Y`, `D`, then `U` when an instrument is expected, then
//! covariates. Missing covariates are the literal token `NA`; no other
//! column may be missing.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::corrupt::CorruptionSpec;
use crate::data::{CorruptedDataset, MaskedMatrix};
use crate::error::{Error, Result};

/// Version stamped on every JSON document the tool writes.
pub const SCHEMA_VERSION: u32 = 1;

pub const NA: &str = "NA";

/// 17 significant digits, enough to round-trip any `f64`.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Write `Y, D, U, W, V` (those present) followed by `Z_1..Z_p`.
pub fn write_dataset<W: Write>(data: &CorruptedDataset, out: W) -> Result<()> {
    data.validate()?;
    let extras: Vec<(&str, &[f64])> = [("Y", &data.y), ("D", &data.d), ("U", &data.instrument), ("W", &data.weights), ("V", &data.v)]
        .into_iter()
        .filter_map(|(name, v)| v.as_deref().map(|v| (name, v)))
        .collect();
    let p = data.p();
    let mut w = csv::Writer::from_writer(out);
    let header: Vec<String> =
        extras.iter().map(|(name, _)| name.to_string()).chain((1..=p).map(|j| format!("Z_{j}"))).collect();
    w.write_record(&header)?;
    let mut record = Vec::with_capacity(header.len());
    for i in 0..data.n() {
        record.clear();
        record.extend(extras.iter().map(|(_, v)| format_float(v[i])));
        record.extend((0..p).map(|j| data.z.get(i, j).map_or_else(|| NA.to_string(), format_float)));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Y,
    D,
    U,
    W,
    V,
    Z,
}

impl Role {
    fn from_name(name: &str) -> Role {
        match name.trim() {
            "Y" | "y" => Role::Y,
            "D" | "d" => Role::D,
            "U" | "u" => Role::U,
            "W" | "w" => Role::W,
            "V" | "v" => Role::V,
            _ => Role::Z,
        }
    }
}

fn parse_error(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, column, message: message.into() }
}

fn looks_numeric(field: &str) -> bool {
    let f = field.trim();
    f == NA || f.parse::<f64>().is_ok()
}

fn column_roles(header: Option<&csv::StringRecord>, width: usize, instrument: bool) -> Result<Vec<Role>> {
    if let Some(h) = header {
        let roles: Vec<Role> = h.iter().map(Role::from_name).collect();
        if roles.contains(&Role::Y) {
            for role in [Role::Y, Role::D, Role::U, Role::W, Role::V] {
                if let Some(dup) = roles.iter().enumerate().filter(|(_, &r)| r == role).nth(1) {
                    return Err(parse_error(1, dup.0 + 1, format!("duplicate column {role:?}")));
                }
            }
            return Ok(roles);
        }
    }
    let lead: &[Role] = if instrument { &[Role::Y, Role::D, Role::U] } else { &[Role::Y, Role::D] };
    if width <= lead.len() {
        return Err(parse_error(1, width, format!("expected at least {} columns, found {width}", lead.len() + 1)));
    }
    Ok((0..width).map(|c| lead.get(c).copied().unwrap_or(Role::Z)).collect())
}

struct Table {
    header: Option<csv::StringRecord>,
    rows: Vec<(usize, csv::StringRecord)>,
}

fn read_table<R: Read>(input: R) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(input);
    let mut header = None;
    let mut rows = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_error(line, 0, e.to_string())
        })?;
        let line = record.position().map_or(idx + 1, |p| p.line() as usize);
        if idx == 0 && !record.iter().all(looks_numeric) {
            header = Some(record);
            continue;
        }
        rows.push((line, record));
    }
    Ok(Table { header, rows })
}

fn parse_cell(field: &str, line: usize, column: usize, allow_na: bool) -> Result<Option<f64>> {
    if field == NA {
        return if allow_na { Ok(None) } else { Err(parse_error(line, column, "NA is only allowed in covariate columns")) };
    }
    match field.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(Some(x)),
        Ok(_) => Err(parse_error(line, column, format!("non-finite value {field:?}"))),
        Err(_) => Err(parse_error(line, column, format!("cannot parse {field:?} as a number"))),
    }
}

fn masked_from_rows(n: usize, p: usize, cells: Vec<Option<f64>>) -> Result<MaskedMatrix> {
    let values = DMatrix::from_row_iterator(n, p, cells.iter().map(|c| c.unwrap_or(0.0)));
    let mask = DMatrix::from_row_iterator(n, p, cells.iter().map(Option::is_some));
    MaskedMatrix::new(values, mask)
}

/// Parse a dataset CSV. `instrument` selects the positional layout used
/// when the header does not name the columns.
pub fn read_dataset<R: Read>(input: R, instrument: bool) -> Result<CorruptedDataset> {
    let table = read_table(input)?;
    let width = match (&table.header, table.rows.first()) {
        (Some(h), _) => h.len(),
        (None, Some((_, r))) => r.len(),
        (None, None) => return Err(parse_error(1, 0, "empty file")),
    };
    if table.rows.is_empty() {
        return Err(parse_error(2, 0, "no data rows"));
    }
    let roles = column_roles(table.header.as_ref(), width, instrument)?;
    let p = roles.iter().filter(|&&r| r == Role::Z).count();
    if p == 0 {
        return Err(parse_error(1, 0, "no covariate columns"));
    }
    let n = table.rows.len();
    let mut extras: [Vec<f64>; 5] = Default::default();
    let mut cells = Vec::with_capacity(n * p);
    for (line, record) in &table.rows {
        if record.len() != width {
            return Err(parse_error(*line, record.len().min(width) + 1, format!("expected {width} fields, found {}", record.len())));
        }
        for (c, (field, &role)) in record.iter().zip(&roles).enumerate() {
            let value = parse_cell(field, *line, c + 1, role == Role::Z)?;
            match role {
                Role::Z => cells.push(value),
                other => extras[other as usize].push(value.expect("NA rejected outside covariates")),
            }
        }
    }
    let [y, d, u, w, v] = extras;
    let present = |role: Role, v: Vec<f64>| roles.contains(&role).then_some(v);
    let data = CorruptedDataset {
        y: present(Role::Y, y),
        d: present(Role::D, d),
        instrument: present(Role::U, u),
        z: masked_from_rows(n, p, cells)?,
        weights: present(Role::W, w),
        v: present(Role::V, v),
        theta_true: None,
    };
    data.validate()?;
    Ok(data)
}

/// Parse a CSV in which every column is a covariate, for spectrum plots of
/// bare matrices.
pub fn read_matrix<R: Read>(input: R) -> Result<MaskedMatrix> {
    let table = read_table(input)?;
    let Some((_, first)) = table.rows.first() else {
        return Err(parse_error(1, 0, "no data rows"));
    };
    let p = first.len();
    let n = table.rows.len();
    let mut cells = Vec::with_capacity(n * p);
    for (line, record) in &table.rows {
        if record.len() != p {
            return Err(parse_error(*line, record.len().min(p) + 1, format!("expected {p} fields, found {}", record.len())));
        }
        for (c, field) in record.iter().enumerate() {
            cells.push(parse_cell(field, *line, c + 1, true)?);
        }
    }
    masked_from_rows(n, p, cells)
}

/// JSON written next to a simulated CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub schema_version: u32,
    pub theta_true: Option<f64>,
    pub n: usize,
    pub p: usize,
    pub r: usize,
    pub seed: u64,
    pub corruption: CorruptionSpec,
}
