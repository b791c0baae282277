//! Graph snapshots: `graph.json` (ids, districts, layout) next to
//! `features.csv`, `edges.csv` and, when labels exist, `labels.csv`.
//!
//! Floats are written in shortest round-trip form, so a snapshot reloads
//! bit-identically.

use std::collections::BTreeMap;
use std::path::Path;

use regiongnn_core::{
    DistrictLabels, EdgeFeatures, FeatureLayout, RegionGraph, SECTORS, SECTOR_NAMES,
};
use serde::{Deserialize, Serialize};

use crate::dataset::read_labels;
use crate::error::{Error, Result};
use crate::files::{
    create_dir, csv_err, csv_reader, parse_f64, read_json, read_matrix, write_json, write_matrix,
    write_rows,
};

pub const GRAPH_FILE: &str = "graph.json";
pub const FEATURES_FILE: &str = "features.csv";
pub const EDGES_FILE: &str = "edges.csv";
pub const LABELS_FILE: &str = "labels.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphManifest {
    pub node_ids: Vec<String>,
    pub district_ids: Vec<String>,
    /// District index of every node.
    pub district_of: Vec<usize>,
    pub layout: FeatureLayout,
    pub feature_dim: usize,
    /// Directed edge count (twice the undirected count).
    pub edges: usize,
}

pub fn feature_columns(layout: &FeatureLayout) -> Vec<String> {
    let mut cols = layout.poi.clone();
    cols.extend((0..layout.svi_dim).map(|k| format!("svi_{k}")));
    cols
}

pub fn save(dir: &Path, graph: &RegionGraph, labels: Option<&DistrictLabels>) -> Result<()> {
    create_dir(dir)?;
    let manifest = GraphManifest {
        node_ids: graph.node_ids().to_vec(),
        district_ids: graph.district_ids().to_vec(),
        district_of: graph.district_of().to_vec(),
        layout: graph.layout().clone(),
        feature_dim: graph.features().cols(),
        edges: graph.directed_edge_count(),
    };
    write_json(&dir.join(GRAPH_FILE), &manifest)?;
    write_matrix(
        &dir.join(FEATURES_FILE),
        "subdistrict_id",
        graph.node_ids(),
        &feature_columns(graph.layout()),
        graph.features(),
    )?;
    let ids = graph.node_ids();
    let header: Vec<String> = ["source", "target", "e0", "e1"].map(String::from).to_vec();
    let rows = graph.edge_features().iter().map(|(&(i, j), e)| {
        vec![
            ids[i].clone(),
            ids[j].clone(),
            e[0].to_string(),
            e[1].to_string(),
        ]
    });
    write_rows(&dir.join(EDGES_FILE), &header, rows)?;
    if let Some(labels) = labels {
        save_labels(&dir.join(LABELS_FILE), graph.district_ids(), labels)?;
    }
    Ok(())
}

/// Labeled districts only, in district order.
pub fn save_labels(path: &Path, district_ids: &[String], labels: &DistrictLabels) -> Result<()> {
    let mut header = vec![String::from("district_id")];
    header.extend(SECTOR_NAMES.map(String::from));
    let rows = labels.labeled_indices().into_iter().map(|j| {
        let mut rec = vec![district_ids[j].clone()];
        rec.extend((0..SECTORS).map(|s| labels.values.get(j, s).to_string()));
        rec
    });
    write_rows(path, &header, rows)
}

pub fn load_graph(dir: &Path) -> Result<RegionGraph> {
    let m: GraphManifest = read_json(&dir.join(GRAPH_FILE))?;
    let fpath = dir.join(FEATURES_FILE);
    let (ids, cols, features) = read_matrix(&fpath)?;
    if ids != m.node_ids {
        return Err(Error::format(
            &fpath,
            "row ids differ from graph.json node_ids",
        ));
    }
    if cols != feature_columns(&m.layout) || features.cols() != m.feature_dim {
        return Err(Error::format(
            &fpath,
            "columns differ from graph.json layout",
        ));
    }
    let index: BTreeMap<&str, usize> = m
        .node_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let epath = dir.join(EDGES_FILE);
    let mut r = csv_reader(&epath)?;
    let mut edges = EdgeFeatures::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(&epath, e))?;
        if rec.len() != 4 {
            return Err(Error::format(
                &epath,
                format!("row {} has {} fields, expected 4", line + 1, rec.len()),
            ));
        }
        let node = |id: &str| {
            index
                .get(id)
                .copied()
                .ok_or_else(|| Error::format(&epath, format!("unknown node `{id}`")))
        };
        let key = (node(&rec[0])?, node(&rec[1])?);
        edges.insert(
            key,
            [parse_f64(&epath, &rec[2])?, parse_f64(&epath, &rec[3])?],
        );
    }
    if edges.len() != m.edges {
        return Err(Error::format(
            &epath,
            format!("{} edges, graph.json declares {}", edges.len(), m.edges),
        ));
    }
    Ok(RegionGraph::new(
        m.node_ids,
        m.district_ids,
        m.district_of,
        features,
        m.layout,
        edges,
    )?)
}

/// Labels of a snapshot; a missing `labels.csv` is an error naming it.
pub fn load_labels(dir: &Path, graph: &RegionGraph) -> Result<DistrictLabels> {
    read_labels(&dir.join(LABELS_FILE), graph.district_ids())
}

pub fn load(dir: &Path) -> Result<(RegionGraph, Option<DistrictLabels>)> {
    let graph = load_graph(dir)?;
    let labels = if dir.join(LABELS_FILE).exists() {
        Some(load_labels(dir, &graph)?)
    } else {
        None
    };
    Ok((graph, labels))
}
