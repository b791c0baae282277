//! Raw CSV tables plus the JSON ingestion manifest.
//!
//! ```text
//! poi.csv         subdistrict_id,category
//! svi.csv         subdistrict_id,image_id,d0,...,d{d_v-1}
//! od.csv          origin_id,dest_id,count
//! membership.csv  subdistrict_id,district_id
//! labels.csv      district_id,primary,secondary,tertiary
//! ```
//!
//! Subdistricts take the row order of `membership.csv`; districts the order
//! of their first appearance there. Districts absent from `labels.csv` are
//! kept but unlabeled.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use regiongnn_core::ingest::{
    assemble_node_features, encode_mobility, encode_poi, pool_svi, ColumnStats, OdRecord,
    PoiRecord, SviEmbedding, SviPooling,
};
use regiongnn_core::{DistrictLabels, FeatureLayout, RegionGraph, Tensor, SECTORS, SECTOR_NAMES};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::files::{csv_err, csv_reader, parse_f64, read_json};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub poi: PathBuf,
    pub svi: PathBuf,
    pub od: PathBuf,
    pub membership: PathBuf,
    #[serde(default)]
    pub labels: Option<PathBuf>,
    pub categories: Vec<String>,
    pub svi_dim: usize,
    #[serde(default)]
    pub threshold: f64,
    #[serde(default)]
    pub standardize: bool,
    #[serde(default)]
    pub svi_pooling: SviPooling,
}

impl Manifest {
    /// Reads a manifest; relative table paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut m: Manifest = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut m.poi, &mut m.svi, &mut m.od, &mut m.membership] {
            *p = base.join(&*p);
        }
        if let Some(l) = &mut m.labels {
            *l = base.join(&*l);
        }
        Ok(m)
    }
}

/// An ingested region: graph, labels (when present) and the fitted column
/// statistics (when standardizing).
#[derive(Debug, Clone)]
pub struct Dataset {
    pub graph: RegionGraph,
    pub labels: Option<DistrictLabels>,
    pub stats: Option<ColumnStats>,
}

fn fields<'a>(
    path: &Path,
    rec: &'a csv::StringRecord,
    line: usize,
    want: usize,
) -> Result<Vec<&'a str>> {
    if rec.len() < want {
        return Err(Error::format(
            path,
            format!("row {line} has {} fields, expected {want}", rec.len()),
        ));
    }
    Ok(rec.iter().collect())
}

fn check_header(path: &Path, r: &mut csv::Reader<std::fs::File>, want: &[&str]) -> Result<usize> {
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    for (k, w) in want.iter().enumerate() {
        if header.get(k).map(str::trim) != Some(*w) {
            return Err(Error::format(
                path,
                format!(
                    "header must start with {}, got {}",
                    want.join(","),
                    header.iter().collect::<Vec<_>>().join(",")
                ),
            ));
        }
    }
    Ok(header.len())
}

pub fn read_membership(path: &Path) -> Result<(Vec<String>, Vec<String>, Vec<usize>)> {
    let mut r = csv_reader(path)?;
    check_header(path, &mut r, &["subdistrict_id", "district_id"])?;
    let mut units = Vec::new();
    let mut districts: Vec<String> = Vec::new();
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    let mut district_of = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let f = fields(path, &rec, line + 1, 2)?;
        if f[0].is_empty() {
            return Err(Error::format(
                path,
                format!("row {} has an empty subdistrict id", line + 1),
            ));
        }
        let d = *index.entry(f[1].to_string()).or_insert_with(|| {
            districts.push(f[1].to_string());
            districts.len() - 1
        });
        units.push(f[0].to_string());
        district_of.push(d);
    }
    Ok((units, districts, district_of))
}

pub fn read_poi(path: &Path) -> Result<Vec<PoiRecord>> {
    let mut r = csv_reader(path)?;
    check_header(path, &mut r, &["subdistrict_id", "category"])?;
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let f = fields(path, &rec, line + 1, 2)?;
        if f[0].is_empty() {
            return Err(Error::format(
                path,
                format!("row {} has an empty subdistrict id", line + 1),
            ));
        }
        out.push(PoiRecord {
            subdistrict_id: f[0].to_string(),
            category: f[1].to_string(),
        });
    }
    Ok(out)
}

pub fn read_svi(path: &Path, dim: usize) -> Result<Vec<SviEmbedding>> {
    let mut r = csv_reader(path)?;
    let width = check_header(path, &mut r, &["subdistrict_id", "image_id"])?;
    if width != dim + 2 {
        return Err(Error::format(
            path,
            format!(
                "{} vector columns, manifest declares svi_dim {dim}",
                width.saturating_sub(2)
            ),
        ));
    }
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let f = fields(path, &rec, line + 1, dim + 2)?;
        let vector = f[2..]
            .iter()
            .map(|v| parse_f64(path, v))
            .collect::<Result<Vec<_>>>()?;
        out.push(SviEmbedding {
            subdistrict_id: f[0].to_string(),
            image_id: f[1].to_string(),
            vector,
        });
    }
    Ok(out)
}

pub fn read_od(path: &Path) -> Result<Vec<OdRecord>> {
    let mut r = csv_reader(path)?;
    check_header(path, &mut r, &["origin_id", "dest_id", "count"])?;
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let f = fields(path, &rec, line + 1, 3)?;
        out.push(OdRecord {
            origin_id: f[0].to_string(),
            dest_id: f[1].to_string(),
            count: parse_f64(path, f[2])?,
        });
    }
    Ok(out)
}

/// Labels keyed by district id; districts without a row are unlabeled.
pub fn read_labels(path: &Path, districts: &[String]) -> Result<DistrictLabels> {
    let mut r = csv_reader(path)?;
    let mut want = vec!["district_id"];
    want.extend(SECTOR_NAMES);
    check_header(path, &mut r, &want)?;
    let index: BTreeMap<&str, usize> = districts
        .iter()
        .enumerate()
        .map(|(i, d)| (d.as_str(), i))
        .collect();
    let mut values = Tensor::zeros(districts.len(), SECTORS);
    let mut mask = vec![false; districts.len()];
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let f = fields(path, &rec, line + 1, SECTORS + 1)?;
        let j = *index.get(f[0]).ok_or_else(|| {
            Error::format(
                path,
                format!("row {} names unknown district `{}`", line + 1, f[0]),
            )
        })?;
        if mask[j] {
            return Err(Error::format(
                path,
                format!("district `{}` labeled twice", f[0]),
            ));
        }
        mask[j] = true;
        for s in 0..SECTORS {
            values.set(j, s, parse_f64(path, f[s + 1])?);
        }
    }
    Ok(DistrictLabels::new(values, mask)?)
}

/// Runs the three pre-encoders over the tables named by `manifest`.
pub fn ingest(manifest: &Manifest) -> Result<Dataset> {
    let (units, districts, district_of) = read_membership(&manifest.membership)?;
    let poi = encode_poi(&read_poi(&manifest.poi)?, &manifest.categories, &units)
        .map_err(|e| Error::format(&manifest.poi, e))?;
    let svi = pool_svi(
        &read_svi(&manifest.svi, manifest.svi_dim)?,
        &units,
        manifest.svi_dim,
        manifest.svi_pooling,
    )
    .map_err(|e| Error::format(&manifest.svi, e))?;
    let mobility = encode_mobility(&read_od(&manifest.od)?, &units, manifest.threshold)
        .map_err(|e| Error::format(&manifest.od, e))?;
    let (features, stats) = assemble_node_features(&poi, &svi, manifest.standardize)?;
    let layout = FeatureLayout {
        poi: manifest.categories.clone(),
        svi_dim: manifest.svi_dim,
    };
    let labels = match &manifest.labels {
        Some(p) => Some(read_labels(p, &districts)?),
        None => None,
    };
    let graph = RegionGraph::new(
        units,
        districts,
        district_of,
        features,
        layout,
        mobility.edge_features,
    )?;
    Ok(Dataset {
        graph,
        labels,
        stats,
    })
}
