//! Pre-encoders turning raw records into subdistrict feature tables and
//! mobility edges.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::EdgeFeatures;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoiRecord {
    pub subdistrict_id: String,
    pub category: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SviEmbedding {
    pub subdistrict_id: String,
    pub image_id: String,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdRecord {
    pub origin_id: String,
    pub dest_id: String,
    pub count: f64,
}

/// How per-image street-view vectors combine within a subdistrict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SviPooling {
    #[default]
    Mean,
    Sum,
}

fn unit_index(units: &[String]) -> Result<BTreeMap<&str, usize>> {
    let mut idx = BTreeMap::new();
    for (i, u) in units.iter().enumerate() {
        if idx.insert(u.as_str(), i).is_some() {
            return Err(Error::Ingest(format!("duplicate subdistrict id `{u}`")));
        }
    }
    Ok(idx)
}

/// Category frequency vectors: cell `(k, j)` counts the POIs of category `j`
/// in unit `k`.
pub fn encode_poi(
    records: &[PoiRecord],
    vocabulary: &[String],
    units: &[String],
) -> Result<Tensor> {
    let units_idx = unit_index(units)?;
    let mut vocab_idx = BTreeMap::new();
    for (j, c) in vocabulary.iter().enumerate() {
        if vocab_idx.insert(c.as_str(), j).is_some() {
            return Err(Error::Ingest(format!(
                "duplicate category `{c}` in vocabulary"
            )));
        }
    }
    let unmatched: BTreeSet<&str> = records
        .iter()
        .map(|r| r.category.as_str())
        .filter(|c| !vocab_idx.contains_key(c))
        .collect();
    if !unmatched.is_empty() {
        let list: Vec<&str> = unmatched.into_iter().collect();
        return Err(Error::Ingest(format!(
            "categories not in vocabulary: {}",
            list.join(", ")
        )));
    }
    let mut counts = Tensor::zeros(units.len(), vocabulary.len());
    for (r, rec) in records.iter().enumerate() {
        let k = *units_idx.get(rec.subdistrict_id.as_str()).ok_or_else(|| {
            Error::Ingest(format!(
                "POI record {r} references unknown subdistrict `{}`",
                rec.subdistrict_id
            ))
        })?;
        let j = vocab_idx[rec.category.as_str()];
        let v = counts.get(k, j);
        counts.set(k, j, v + 1.0);
    }
    Ok(counts)
}

/// Pools street-view vectors per unit (mean by default); units without
/// images get the zero vector.
pub fn pool_svi(
    embeddings: &[SviEmbedding],
    units: &[String],
    dim: usize,
    pooling: SviPooling,
) -> Result<Tensor> {
    let units_idx = unit_index(units)?;
    let mut sums = Tensor::zeros(units.len(), dim);
    let mut counts = vec![0usize; units.len()];
    for (r, emb) in embeddings.iter().enumerate() {
        if emb.vector.len() != dim {
            return Err(Error::Ingest(format!(
                "image `{}` has dimension {}, expected {dim}",
                emb.image_id,
                emb.vector.len()
            )));
        }
        if let Some(c) = emb.vector.iter().position(|v| !v.is_finite()) {
            return Err(Error::Ingest(format!(
                "image `{}` has a non-finite entry at d{c}",
                emb.image_id
            )));
        }
        let k = *units_idx.get(emb.subdistrict_id.as_str()).ok_or_else(|| {
            Error::Ingest(format!(
                "street-view record {r} references unknown subdistrict `{}`",
                emb.subdistrict_id
            ))
        })?;
        counts[k] += 1;
        for (s, v) in sums.row_mut(k).iter_mut().zip(&emb.vector) {
            *s += v;
        }
    }
    if pooling == SviPooling::Mean {
        for (k, &c) in counts.iter().enumerate() {
            if c > 0 {
                let inv = 1.0 / c as f64;
                sums.row_mut(k).iter_mut().for_each(|v| *v *= inv);
            }
        }
    }
    Ok(sums)
}

/// Adjacency and edge features derived from origin-destination flows.
#[derive(Debug, Clone, PartialEq)]
pub struct MobilityEdges {
    pub adjacency: Tensor,
    pub edge_features: EdgeFeatures,
}

/// Aggregates flows per ordered pair (self-flows dropped). Units `i`, `j`
/// are adjacent iff `flow(i→j) + flow(j→i) > threshold`; each adjacent
/// ordered pair carries `[ln(1+flow(i→j)), ln(1+flow(j→i))]`.
pub fn encode_mobility(
    records: &[OdRecord],
    units: &[String],
    threshold: f64,
) -> Result<MobilityEdges> {
    if !(threshold >= 0.0) {
        return Err(Error::Ingest(format!(
            "threshold {threshold} must be nonnegative"
        )));
    }
    let units_idx = unit_index(units)?;
    let lookup = |id: &str, r: usize| {
        units_idx.get(id).copied().ok_or_else(|| {
            Error::Ingest(format!(
                "O-D record {r} references unknown subdistrict `{id}`"
            ))
        })
    };
    let mut flows: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (r, rec) in records.iter().enumerate() {
        if !(rec.count >= 0.0) || !rec.count.is_finite() {
            return Err(Error::Ingest(format!(
                "O-D record {r} has invalid count {}",
                rec.count
            )));
        }
        let i = lookup(&rec.origin_id, r)?;
        let j = lookup(&rec.dest_id, r)?;
        if i != j {
            *flows.entry((i, j)).or_insert(0.0) += rec.count;
        }
    }
    let m = units.len();
    let mut adjacency = Tensor::zeros(m, m);
    let mut edge_features = EdgeFeatures::new();
    let pairs: BTreeSet<(usize, usize)> =
        flows.keys().map(|&(i, j)| (i.min(j), i.max(j))).collect();
    for (i, j) in pairs {
        let fwd = flows.get(&(i, j)).copied().unwrap_or(0.0);
        let back = flows.get(&(j, i)).copied().unwrap_or(0.0);
        if fwd + back > threshold {
            adjacency.set(i, j, 1.0);
            adjacency.set(j, i, 1.0);
            edge_features.insert((i, j), [libm::log1p(fwd), libm::log1p(back)]);
            edge_features.insert((j, i), [libm::log1p(back), libm::log1p(fwd)]);
        }
    }
    Ok(MobilityEdges {
        adjacency,
        edge_features,
    })
}

/// Per-column mean and standard deviation fitted over units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: Vec<f64>,
    /// Population standard deviation; zero-variance columns store `1.0`.
    pub sd: Vec<f64>,
}

impl ColumnStats {
    pub fn fit(x: &Tensor) -> Self {
        let (m, n) = (x.rows(), x.cols());
        let mut mean = vec![0.0; n];
        for i in 0..m {
            for (j, mu) in mean.iter_mut().enumerate() {
                *mu += x.get(i, j);
            }
        }
        mean.iter_mut().for_each(|v| *v /= m.max(1) as f64);
        let mut sd = vec![0.0; n];
        for i in 0..m {
            for j in 0..n {
                let d = x.get(i, j) - mean[j];
                sd[j] += d * d;
            }
        }
        for s in &mut sd {
            let v = libm::sqrt(*s / m.max(1) as f64);
            *s = if v > 0.0 { v } else { 1.0 };
        }
        Self { mean, sd }
    }

    pub fn apply(&self, x: &Tensor) -> Tensor {
        let mut out = x.clone();
        for i in 0..x.rows() {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.sd[j];
            }
        }
        out
    }
}

/// `X_k = X_k^P ∥ X_k^V`, optionally z-scored per column.
pub fn assemble_node_features(
    poi: &Tensor,
    svi: &Tensor,
    standardize: bool,
) -> Result<(Tensor, Option<ColumnStats>)> {
    if poi.rows() != svi.rows() {
        return Err(Error::Ingest(format!(
            "POI table has {} rows, street-view table has {}",
            poi.rows(),
            svi.rows()
        )));
    }
    let x = Tensor::hcat(&[poi, svi])?;
    if standardize {
        let stats = ColumnStats::fit(&x);
        Ok((stats.apply(&x), Some(stats)))
    } else {
        Ok((x, None))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    fn poi(u: &str, c: &str) -> PoiRecord {
        PoiRecord {
            subdistrict_id: u.into(),
            category: c.into(),
        }
    }

    fn od(o: &str, d: &str, c: f64) -> OdRecord {
        OdRecord {
            origin_id: o.into(),
            dest_id: d.into(),
            count: c,
        }
    }

    #[test]
    fn poi_counts_by_hand() {
        let recs = [poi("u1", "A"), poi("u1", "A"), poi("u1", "B")];
        let m = encode_poi(&recs, &s(&["A", "B"]), &s(&["u1", "u2"])).unwrap();
        assert_eq!(m.values(), &[2.0, 1.0, 0.0, 0.0]);
        let empty = encode_poi(&[], &s(&["A", "B"]), &s(&["u1", "u2"])).unwrap();
        assert!(empty.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn poi_errors() {
        let e = encode_poi(&[poi("zz", "A")], &s(&["A"]), &s(&["u1"])).unwrap_err();
        assert!(format!("{e}").contains("zz"));
        let e = encode_poi(
            &[poi("u1", "Q"), poi("u1", "R"), poi("u1", "Q")],
            &s(&["A"]),
            &s(&["u1"]),
        )
        .unwrap_err();
        assert!(format!("{e}").contains("Q, R"));
        assert!(encode_poi(&[], &s(&["A", "A"]), &s(&["u1"])).is_err());
    }

    #[test]
    fn svi_mean_pooling() {
        let emb = |u: &str, v: Vec<f64>| SviEmbedding {
            subdistrict_id: u.into(),
            image_id: "img".into(),
            vector: v,
        };
        let units = s(&["k", "empty"]);
        let single = pool_svi(&[emb("k", vec![0.25, -1.0])], &units, 2, SviPooling::Mean).unwrap();
        assert_eq!(single.row(0), &[0.25, -1.0]);
        let two = pool_svi(
            &[emb("k", vec![1.0, 3.0]), emb("k", vec![3.0, 5.0])],
            &units,
            2,
            SviPooling::Mean,
        )
        .unwrap();
        assert_eq!(two.row(0), &[2.0, 4.0]);
        assert_eq!(two.row(1), &[0.0, 0.0]);
        let summed = pool_svi(
            &[emb("k", vec![1.0, 3.0]), emb("k", vec![3.0, 5.0])],
            &units,
            2,
            SviPooling::Sum,
        )
        .unwrap();
        assert_eq!(summed.row(0), &[4.0, 8.0]);
        assert!(pool_svi(&[emb("k", vec![1.0])], &units, 2, SviPooling::Mean).is_err());
        assert!(pool_svi(
            &[emb("k", vec![1.0, f64::NAN])],
            &units,
            2,
            SviPooling::Mean
        )
        .is_err());
    }

    #[test]
    fn mobility_transform() {
        let units = s(&["u1", "u2"]);
        let none = encode_mobility(&[], &units, 0.0).unwrap();
        assert!(none.edge_features.is_empty());
        assert!(none.adjacency.values().iter().all(|&v| v == 0.0));

        let m = encode_mobility(&[od("u1", "u2", 5.0), od("u2", "u1", 2.0)], &units, 0.0).unwrap();
        assert_eq!(m.adjacency.values(), &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(m.edge_features[&(0, 1)], [libm::log(6.0), libm::log(3.0)]);
        assert_eq!(m.edge_features[&(1, 0)], [libm::log(3.0), libm::log(6.0)]);

        let thin = encode_mobility(&[od("u1", "u2", 1.0)], &units, 2.0).unwrap();
        assert!(thin.edge_features.is_empty());

        let selfish = encode_mobility(&[od("u1", "u1", 9.0)], &units, 0.0).unwrap();
        assert!(selfish.edge_features.is_empty());
        assert!(encode_mobility(&[od("u1", "u2", -1.0)], &units, 0.0).is_err());
        assert!(encode_mobility(&[od("u1", "x", 1.0)], &units, 0.0).is_err());
    }

    #[test]
    fn assembly_and_standardization() {
        let p = Tensor::from_rows(1, 2, vec![2.0, 1.0]);
        let v = Tensor::from_rows(1, 1, vec![0.5]);
        let (x, stats) = assemble_node_features(&p, &v, false).unwrap();
        assert_eq!(x.values(), &[2.0, 1.0, 0.5]);
        assert!(stats.is_none());

        let (x, _) = assemble_node_features(&p, &v, true).unwrap();
        assert_eq!(x.values(), &[0.0, 0.0, 0.0]);

        let p = Tensor::from_rows(2, 1, vec![0.0, 2.0]);
        let v = Tensor::zeros(2, 0);
        let (x, stats) = assemble_node_features(&p, &v, true).unwrap();
        assert_eq!(x.values(), &[-1.0, 1.0]);
        assert_eq!(stats.unwrap().mean, vec![1.0]);

        assert!(assemble_node_features(&p, &Tensor::zeros(3, 1), false).is_err());
    }
}
