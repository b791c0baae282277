//! Small JSON and CSV helpers that attach paths to every failure.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;

use regiongnn_core::Tensor;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::format(path, e))
}

pub(crate) fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file))
}

pub(crate) fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        kind => Error::format(path, format!("{kind:?}")),
    }
}

/// Writes `header` then one record per row, finishing with a flush.
pub(crate) fn write_rows<I, R>(path: &Path, header: &[String], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `id` column followed by the matrix columns; floats use the shortest
/// representation that parses back to the same bits.
pub(crate) fn write_matrix(
    path: &Path,
    id_header: &str,
    ids: &[String],
    columns: &[String],
    m: &Tensor,
) -> Result<()> {
    let mut header = vec![id_header.to_string()];
    header.extend(columns.iter().cloned());
    let rows = (0..m.rows()).map(|i| {
        let mut rec = vec![ids[i].clone()];
        rec.extend(m.row(i).iter().map(|v| v.to_string()));
        rec
    });
    write_rows(path, &header, rows)
}

/// Inverse of [`write_matrix`]: row ids, column names and values.
pub(crate) fn read_matrix(path: &Path) -> Result<(Vec<String>, Vec<String>, Tensor)> {
    let mut r = csv_reader(path)?;
    let header: Vec<String> = r
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(String::from)
        .collect();
    if header.is_empty() {
        return Err(Error::format(path, "empty header"));
    }
    let cols = header.len() - 1;
    let mut ids = Vec::new();
    let mut values = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        if rec.len() != header.len() {
            return Err(Error::format(
                path,
                format!(
                    "row {} has {} fields, expected {}",
                    line + 1,
                    rec.len(),
                    header.len()
                ),
            ));
        }
        ids.push(rec[0].to_string());
        for field in rec.iter().skip(1) {
            values.push(parse_f64(path, field)?);
        }
    }
    let m = Tensor::from_rows(ids.len(), cols, values);
    Ok((ids, header[1..].to_vec(), m))
}

pub(crate) fn parse_f64(path: &Path, field: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::format(path, format!("`{field}` is not a number")))
}
