//! CSV ingestion and output formatting.
//!
//! Input CSVs carry a header with site columns `s1..sd`, a response column
//! `y` and optional covariate columns `x1..xp`, in any order.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::points::Points;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub sites: Points,
    pub y: Vec<f64>,
    pub covariates: Points,
}

/// Column positions of a header.
#[derive(Debug, Clone)]
struct Schema {
    s: Vec<usize>,
    y: usize,
    x: Vec<usize>,
}

fn numbered(header: &csv::StringRecord, prefix: char) -> Result<Vec<usize>> {
    let mut found: Vec<(usize, usize)> = Vec::new();
    for (pos, name) in header.iter().enumerate() {
        let name = name.trim();
        if let Some(rest) = name.strip_prefix(prefix) {
            if let Ok(k) = rest.parse::<usize>() {
                found.push((k, pos));
            }
        }
    }
    found.sort();
    for (expected, (k, _)) in found.iter().enumerate() {
        if *k != expected + 1 {
            return Err(Error::Input(format!("header columns {prefix}1..{prefix}k must be numbered consecutively")));
        }
    }
    Ok(found.into_iter().map(|(_, pos)| pos).collect())
}

fn schema(header: &csv::StringRecord) -> Result<Schema> {
    let s = numbered(header, 's')?;
    if s.is_empty() {
        return Err(Error::Input("header has no site columns s1..sd".into()));
    }
    let ys: Vec<usize> = header.iter().enumerate().filter(|(_, n)| n.trim() == "y").map(|(i, _)| i).collect();
    if ys.len() != 1 {
        return Err(Error::Input("header needs exactly one response column y".into()));
    }
    let x = numbered(header, 'x')?;
    let known = s.len() + 1 + x.len();
    if known != header.len() {
        return Err(Error::Input(format!("header has {} columns, only {known} are s/y/x columns", header.len())));
    }
    Ok(Schema { s, y: ys[0], x })
}

pub fn read_dataset<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let header = match rdr.headers() {
        Ok(h) if !h.is_empty() && !(h.len() == 1 && h[0].trim().is_empty()) => h.clone(),
        Ok(_) => return Err(Error::EmptyInput("input has no header".into())),
        Err(e) => return Err(Error::Input(format!("unreadable header: {e}"))),
    };
    let schema = schema(&header)?;
    let (d, p) = (schema.s.len(), schema.x.len());
    let mut sites = Vec::new();
    let mut y = Vec::new();
    let mut x = Vec::new();
    let mut rows = 0usize;
    for (k, record) in rdr.records().enumerate() {
        let row = k + 1;
        let record = record.map_err(|e| Error::Input(format!("row {row}: {e}")))?;
        let line = record.position().map_or(row + 1, |p| p.line() as usize);
        if record.len() != header.len() {
            return Err(Error::Input(format!(
                "row {row} (line {line}): expected {} fields, found {}",
                header.len(),
                record.len()
            )));
        }
        let field = |pos: usize| -> Result<f64> {
            let text = record[pos].trim();
            match text.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::Input(format!(
                    "row {row} (line {line}): column {} has invalid value {text:?}",
                    &header[pos]
                ))),
            }
        };
        for &c in &schema.s {
            sites.push(field(c)?);
        }
        y.push(field(schema.y)?);
        for &c in &schema.x {
            x.push(field(c)?);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::EmptyInput("input has a header but no rows".into()));
    }
    Ok(Dataset {
        sites: Points::new(d, sites)?,
        y,
        covariates: if p == 0 { Points::empty_rows(rows) } else { Points::new(p, x)? },
    })
}

pub fn read_dataset_file(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    read_dataset(file)
}

/// Seventeen significant digits: enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes a CSV with the given header and numeric rows.
pub fn write_table<W: Write>(writer: W, header: &[String], rows: impl Iterator<Item = Vec<f64>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|v| fmt_f64(*v)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn dataset_header(d: usize, p: usize) -> Vec<String> {
    let mut h: Vec<String> = (1..=d).map(|k| format!("s{k}")).collect();
    h.push("y".into());
    h.extend((1..=p).map(|k| format!("x{k}")));
    h
}

pub fn write_dataset<W: Write>(writer: W, data: &Dataset) -> Result<()> {
    let header = dataset_header(data.sites.dim(), data.covariates.dim());
    let rows = (0..data.y.len()).map(|i| {
        let mut r = data.sites.row(i).to_vec();
        r.push(data.y[i]);
        r.extend_from_slice(data.covariates.row(i));
        r
    });
    write_table(writer, &header, rows)
}

/// Writes `contents` to `path` through a temporary file, so a failed run
/// never leaves a truncated output behind.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!("{}.partial", path.extension().and_then(|e| e.to_str()).unwrap_or("out")));
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
