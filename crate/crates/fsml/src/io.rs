//! CSV and manifest readers/writers for every file format the CLI and the
//! model bundle speak.
//!
//! Floats are written with Rust's shortest round-trip formatting, so every
//! `f64` survives a write/read cycle bitwise. Curve order follows first
//! appearance in the file; labels are matched to curves by id.

use std::collections::BTreeMap;
use std::collections::HashMap;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{FsmlError, Result};
use crate::fda::{Curve, SampledCurve};

fn parse_f64(field: &str, context: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| FsmlError::Parse(format!("{context}: `{field}` is not a number")))
}

fn parse_usize(field: &str, context: &str) -> Result<usize> {
    field
        .trim()
        .parse::<usize>()
        .map_err(|_| FsmlError::Parse(format!("{context}: `{field}` is not a nonnegative integer")))
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| FsmlError::Parse(format!("{}: {e}", path.display())))
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| FsmlError::Parse(format!("{}: {e}", path.display())))
}

fn headers_of(rdr: &mut csv::Reader<std::fs::File>, path: &Path) -> Result<Vec<String>> {
    Ok(rdr
        .headers()
        .map_err(|e| FsmlError::Parse(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect())
}

/// Reads long-format curves (`curve_id,t,value`). Rows of one curve need
/// not be contiguous; observations are sorted by time per curve, and curves
/// appear in order of first appearance.
pub fn read_curves_long(path: &Path) -> Result<Vec<SampledCurve>> {
    let mut rdr = reader(path)?;
    let headers = headers_of(&mut rdr, path)?;
    if headers != ["curve_id", "t", "value"] {
        return Err(FsmlError::Parse(format!(
            "{}: expected header `curve_id,t,value`, got `{}`",
            path.display(),
            headers.join(",")
        )));
    }
    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<(f64, f64)>> = HashMap::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| FsmlError::Parse(format!("{}: {e}", path.display())))?;
        let context = format!("{} row {}", path.display(), line + 2);
        let id = record
            .get(0)
            .ok_or_else(|| FsmlError::Parse(format!("{context}: missing curve_id")))?
            .to_string();
        let t = parse_f64(record.get(1).unwrap_or(""), &context)?;
        let v = parse_f64(record.get(2).unwrap_or(""), &context)?;
        rows.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            Vec::new()
        });
        rows.get_mut(&id).expect("just inserted").push((t, v));
    }
    if order.is_empty() {
        return Err(FsmlError::Parse(format!("{}: no curves", path.display())));
    }
    order
        .into_iter()
        .map(|id| {
            let mut obs = rows.remove(&id).expect("grouped");
            obs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let (times, values): (Vec<f64>, Vec<f64>) = obs.into_iter().unzip();
            SampledCurve::new(id, times, values)
        })
        .collect()
}

/// Writes raw curves in long format.
pub fn write_sampled_curves_long(path: &Path, curves: &[SampledCurve]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["curve_id", "t", "value"])
        .map_err(|e| FsmlError::Parse(e.to_string()))?;
    for c in curves {
        for (t, v) in c.times().iter().zip(c.values()) {
            w.write_record([c.id(), &t.to_string(), &v.to_string()])
                .map_err(|e| FsmlError::Parse(e.to_string()))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes grid curves in the same long format, taking times from the grid.
pub fn write_curves_long(path: &Path, ids: &[String], curves: &[Curve]) -> Result<()> {
    if ids.len() != curves.len() {
        return Err(FsmlError::parameter(format!(
            "{} ids for {} curves",
            ids.len(),
            curves.len()
        )));
    }
    let mut w = writer(path)?;
    w.write_record(["curve_id", "t", "value"])
        .map_err(|e| FsmlError::Parse(e.to_string()))?;
    for (id, c) in ids.iter().zip(curves) {
        for (t, v) in c.grid().points().iter().zip(c.values()) {
            w.write_record([id.as_str(), &t.to_string(), &v.to_string()])
                .map_err(|e| FsmlError::Parse(e.to_string()))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a labels file (`curve_id,label`).
pub fn read_labels_csv(path: &Path) -> Result<Vec<(String, usize)>> {
    let mut rdr = reader(path)?;
    let headers = headers_of(&mut rdr, path)?;
    if headers != ["curve_id", "label"] {
        return Err(FsmlError::Parse(format!(
            "{}: expected header `curve_id,label`, got `{}`",
            path.display(),
            headers.join(",")
        )));
    }
    let mut out = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| FsmlError::Parse(format!("{}: {e}", path.display())))?;
        let context = format!("{} row {}", path.display(), line + 2);
        let id = record
            .get(0)
            .ok_or_else(|| FsmlError::Parse(format!("{context}: missing curve_id")))?
            .to_string();
        let label = parse_usize(record.get(1).unwrap_or(""), &context)?;
        out.push((id, label));
    }
    Ok(out)
}

pub fn write_labels_csv(path: &Path, ids: &[String], labels: &[usize]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["curve_id", "label"])
        .map_err(|e| FsmlError::Parse(e.to_string()))?;
    for (id, label) in ids.iter().zip(labels) {
        w.write_record([id.as_str(), &label.to_string()])
            .map_err(|e| FsmlError::Parse(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Matches labels to curve ids, erroring on missing or unknown ids.
pub fn align_labels(ids: &[String], pairs: &[(String, usize)]) -> Result<Vec<usize>> {
    let map: HashMap<&str, usize> = pairs.iter().map(|(id, y)| (id.as_str(), *y)).collect();
    if map.len() != pairs.len() {
        return Err(FsmlError::Parse("duplicate curve_id in labels".into()));
    }
    ids.iter()
        .map(|id| {
            map.get(id.as_str())
                .copied()
                .ok_or_else(|| FsmlError::Parse(format!("no label for curve `{id}`")))
        })
        .collect()
}

/// Writes an n×n matrix with a header row of curve ids.
pub fn write_matrix_csv(path: &Path, ids: &[String], m: &DMatrix<f64>) -> Result<()> {
    if ids.len() != m.nrows() || m.nrows() != m.ncols() {
        return Err(FsmlError::parameter("matrix/id dimensions disagree"));
    }
    let mut w = writer(path)?;
    w.write_record(ids)
        .map_err(|e| FsmlError::Parse(e.to_string()))?;
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| m[(i, j)].to_string()).collect();
        w.write_record(&row)
            .map_err(|e| FsmlError::Parse(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a square matrix CSV with its header row of curve ids.
pub fn read_matrix_csv(path: &Path) -> Result<(Vec<String>, DMatrix<f64>)> {
    let mut rdr = reader(path)?;
    let ids = headers_of(&mut rdr, path)?;
    let n = ids.len();
    let mut values = Vec::with_capacity(n * n);
    let mut rows = 0usize;
    for (line, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| FsmlError::Parse(format!("{}: {e}", path.display())))?;
        let context = format!("{} row {}", path.display(), line + 2);
        if record.len() != n {
            return Err(FsmlError::Parse(format!(
                "{context}: {} columns, expected {n}",
                record.len()
            )));
        }
        for field in record.iter() {
            values.push(parse_f64(field, &context)?);
        }
        rows += 1;
    }
    if rows != n {
        return Err(FsmlError::Parse(format!(
            "{}: {rows} rows for {n} header columns",
            path.display()
        )));
    }
    Ok((ids, DMatrix::from_row_slice(n, n, &values)))
}

/// Writes an embedding (`curve_id,z1,…,zd,label`).
pub fn write_embedding_csv(
    path: &Path,
    ids: &[String],
    coords: &DMatrix<f64>,
    labels: &[usize],
) -> Result<()> {
    if ids.len() != coords.nrows() || labels.len() != coords.nrows() {
        return Err(FsmlError::parameter("embedding rows/ids/labels disagree"));
    }
    let mut w = writer(path)?;
    let mut header = vec!["curve_id".to_string()];
    header.extend((1..=coords.ncols()).map(|k| format!("z{k}")));
    header.push("label".into());
    w.write_record(&header)
        .map_err(|e| FsmlError::Parse(e.to_string()))?;
    for i in 0..coords.nrows() {
        let mut row = vec![ids[i].clone()];
        row.extend((0..coords.ncols()).map(|k| coords[(i, k)].to_string()));
        row.push(labels[i].to_string());
        w.write_record(&row)
            .map_err(|e| FsmlError::Parse(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an embedding CSV back into (ids, coords, labels).
pub fn read_embedding_csv(path: &Path) -> Result<(Vec<String>, DMatrix<f64>, Vec<usize>)> {
    let mut rdr = reader(path)?;
    let headers = headers_of(&mut rdr, path)?;
    if headers.len() < 3 || headers[0] != "curve_id" || headers.last().map(String::as_str) != Some("label")
    {
        return Err(FsmlError::Parse(format!(
            "{}: expected header `curve_id,z1,…,zd,label`",
            path.display()
        )));
    }
    let d = headers.len() - 2;
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| FsmlError::Parse(format!("{}: {e}", path.display())))?;
        let context = format!("{} row {}", path.display(), line + 2);
        if record.len() != d + 2 {
            return Err(FsmlError::Parse(format!("{context}: wrong column count")));
        }
        ids.push(record.get(0).unwrap_or("").to_string());
        for k in 0..d {
            values.push(parse_f64(record.get(k + 1).unwrap_or(""), &context)?);
        }
        labels.push(parse_usize(record.get(d + 1).unwrap_or(""), &context)?);
    }
    let n = ids.len();
    Ok((ids, DMatrix::from_row_slice(n, d, &values), labels))
}

/// Writes μ̂ coordinates of query curves (`curve_id,z1,…,zd`).
pub fn write_coords_csv(path: &Path, ids: &[String], coords: &DMatrix<f64>) -> Result<()> {
    if ids.len() != coords.nrows() {
        return Err(FsmlError::parameter("coordinate rows/ids disagree"));
    }
    let mut w = writer(path)?;
    let mut header = vec!["curve_id".to_string()];
    header.extend((1..=coords.ncols()).map(|k| format!("z{k}")));
    w.write_record(&header)
        .map_err(|e| FsmlError::Parse(e.to_string()))?;
    for i in 0..coords.nrows() {
        let mut row = vec![ids[i].clone()];
        row.extend((0..coords.ncols()).map(|k| coords[(i, k)].to_string()));
        w.write_record(&row)
            .map_err(|e| FsmlError::Parse(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes predictions (`curve_id,predicted_label`), with optional per-class
/// score columns (`score_<class>`) for heads that expose them.
pub fn write_predictions_csv(
    path: &Path,
    ids: &[String],
    predictions: &[usize],
    scores: Option<(&[usize], &[Vec<f64>])>,
) -> Result<()> {
    if ids.len() != predictions.len() {
        return Err(FsmlError::parameter("prediction rows/ids disagree"));
    }
    let mut w = writer(path)?;
    let mut header = vec!["curve_id".to_string(), "predicted_label".to_string()];
    if let Some((classes, rows)) = scores {
        if rows.len() != ids.len() {
            return Err(FsmlError::parameter("score rows/ids disagree"));
        }
        header.extend(classes.iter().map(|c| format!("score_{c}")));
    }
    w.write_record(&header)
        .map_err(|e| FsmlError::Parse(e.to_string()))?;
    for i in 0..ids.len() {
        let mut row = vec![ids[i].clone(), predictions[i].to_string()];
        if let Some((_, rows)) = scores {
            row.extend(rows[i].iter().map(f64::to_string));
        }
        w.write_record(&row)
            .map_err(|e| FsmlError::Parse(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a single-column CSV of reals.
pub fn write_column_csv(path: &Path, header: &str, values: &[f64]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record([header])
        .map_err(|e| FsmlError::Parse(e.to_string()))?;
    for v in values {
        w.write_record([v.to_string()])
            .map_err(|e| FsmlError::Parse(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a single-column CSV written by [`write_column_csv`].
pub fn read_column_csv(path: &Path, header: &str) -> Result<Vec<f64>> {
    let mut rdr = reader(path)?;
    let headers = headers_of(&mut rdr, path)?;
    if headers != [header] {
        return Err(FsmlError::Parse(format!(
            "{}: expected header `{header}`",
            path.display()
        )));
    }
    let mut out = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| FsmlError::Parse(format!("{}: {e}", path.display())))?;
        let context = format!("{} row {}", path.display(), line + 2);
        out.push(parse_f64(record.get(0).unwrap_or(""), &context)?);
    }
    Ok(out)
}

/// Writes `key = value` manifest lines in the given order.
pub fn write_manifest(path: &Path, entries: &[(String, String)]) -> Result<()> {
    let mut text = String::new();
    for (k, v) in entries {
        text.push_str(&format!("{k} = {v}\n"));
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Reads a manifest back into a key→value map; blank lines and `#` comments
/// are skipped.
pub fn read_manifest(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            FsmlError::Parse(format!(
                "{} line {}: expected `key = value`",
                path.display(),
                i + 1
            ))
        })?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}
