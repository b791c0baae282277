//! The attributed region graph, district labels, splits and masking.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::rc::Rc;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Number of regression targets (primary, secondary, tertiary sector).
pub const SECTORS: usize = 3;
pub const SECTOR_NAMES: [&str; SECTORS] = ["primary", "secondary", "tertiary"];

/// Directed edge `(i, j)` → `[log(1+flow i→j), log(1+flow j→i)]`.
pub type EdgeFeatures = BTreeMap<(usize, usize), [f64; 2]>;

/// Which node-feature columns came from which input modality.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FeatureLayout {
    /// POI category names; the first `poi.len()` columns.
    pub poi: Vec<String>,
    /// Width of the street-view block that follows the POI block.
    pub svi_dim: usize,
}

impl FeatureLayout {
    pub fn width(&self) -> usize {
        self.poi.len() + self.svi_dim
    }
}

/// `G = (V, A, X, E)` over subdistricts, partitioned into districts.
///
/// Invariants (checked by [`RegionGraph::new`]): symmetric adjacency without
/// self-loops, edge features for exactly the adjacent ordered pairs, every
/// node in one district and no empty district.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionGraph {
    node_ids: Vec<String>,
    district_ids: Vec<String>,
    district_of: Vec<usize>,
    features: Tensor,
    layout: FeatureLayout,
    edge_features: EdgeFeatures,
    neighbors: Vec<Vec<usize>>,
}

impl RegionGraph {
    pub fn new(
        node_ids: Vec<String>,
        district_ids: Vec<String>,
        district_of: Vec<usize>,
        features: Tensor,
        layout: FeatureLayout,
        edge_features: EdgeFeatures,
    ) -> Result<Self> {
        let m = node_ids.len();
        let n = district_ids.len();
        if district_of.len() != m || features.rows() != m {
            return Err(Error::Graph(format!(
                "{m} node ids, {} district assignments, {} feature rows",
                district_of.len(),
                features.rows()
            )));
        }
        if layout.width() != features.cols() {
            return Err(Error::Graph(format!(
                "feature layout covers {} columns but features have {}",
                layout.width(),
                features.cols()
            )));
        }
        if !features.is_finite() {
            return Err(Error::Graph("non-finite node feature".into()));
        }
        let mut sizes = vec![0usize; n];
        for (i, &d) in district_of.iter().enumerate() {
            if d >= n {
                return Err(Error::Graph(format!(
                    "node {i} maps to district {d} of {n}"
                )));
            }
            sizes[d] += 1;
        }
        if let Some(d) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::Graph(format!(
                "district `{}` has no nodes",
                district_ids[d]
            )));
        }
        let mut neighbors = vec![Vec::new(); m];
        for (&(i, j), e) in &edge_features {
            if i >= m || j >= m {
                return Err(Error::Graph(format!("edge ({i}, {j}) out of range")));
            }
            if i == j {
                return Err(Error::Graph(format!("self-loop at node {i}")));
            }
            if !edge_features.contains_key(&(j, i)) {
                return Err(Error::Graph(format!("edge ({i}, {j}) has no reverse")));
            }
            if !(e[0].is_finite() && e[1].is_finite()) {
                return Err(Error::Graph(format!(
                    "non-finite edge feature on ({i}, {j})"
                )));
            }
            neighbors[i].push(j);
        }
        Ok(Self {
            node_ids,
            district_ids,
            district_of,
            features,
            layout,
            edge_features,
            neighbors,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_ids.len()
    }

    pub fn district_count(&self) -> usize {
        self.district_ids.len()
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn district_ids(&self) -> &[String] {
        &self.district_ids
    }

    pub fn district_of(&self) -> &[usize] {
        &self.district_of
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn layout(&self) -> &FeatureLayout {
        &self.layout
    }

    pub fn edge_features(&self) -> &EdgeFeatures {
        &self.edge_features
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    /// Number of directed edges (twice the undirected count).
    pub fn directed_edge_count(&self) -> usize {
        self.edge_features.len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edge_features.contains_key(&(i, j))
    }

    /// Dense binary adjacency.
    pub fn adjacency(&self) -> Tensor {
        let m = self.node_count();
        let mut a = Tensor::zeros(m, m);
        for &(i, j) in self.edge_features.keys() {
            a.set(i, j, 1.0);
        }
        a
    }

    /// One node-index set per district: set `j` = `{i : district_of(i) = j}`.
    pub fn subgraph_partition(&self) -> Vec<Vec<usize>> {
        let mut parts = vec![Vec::new(); self.district_count()];
        for (i, &d) in self.district_of.iter().enumerate() {
            parts[d].push(i);
        }
        parts
    }

    /// Same structure with node features replaced.
    pub fn with_features(&self, features: Tensor) -> Result<Self> {
        Self::new(
            self.node_ids.clone(),
            self.district_ids.clone(),
            self.district_of.clone(),
            features,
            self.layout.clone(),
            self.edge_features.clone(),
        )
    }

    /// Same nodes with a subset of edges.
    pub fn with_edges(&self, edge_features: EdgeFeatures) -> Result<Self> {
        Self::new(
            self.node_ids.clone(),
            self.district_ids.clone(),
            self.district_of.clone(),
            self.features.clone(),
            self.layout.clone(),
            edge_features,
        )
    }

    /// Directed edge list sorted by (receiver, sender) with edge features.
    pub fn edge_list(&self) -> EdgeList {
        let mut recv = Vec::with_capacity(self.edge_features.len());
        let mut send = Vec::with_capacity(self.edge_features.len());
        let mut feats = Vec::with_capacity(2 * self.edge_features.len());
        for (&(i, j), e) in &self.edge_features {
            recv.push(i);
            send.push(j);
            feats.extend_from_slice(e);
        }
        let e = recv.len();
        EdgeList {
            recv: Rc::from(recv),
            send: Rc::from(send),
            features: Tensor::from_rows(e, 2, feats),
        }
    }
}

/// Flattened directed edges: node `recv[e]` aggregates from `send[e]`.
#[derive(Debug, Clone)]
pub struct EdgeList {
    pub recv: Rc<[usize]>,
    pub send: Rc<[usize]>,
    pub features: Tensor,
}

impl EdgeList {
    pub fn len(&self) -> usize {
        self.recv.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recv.is_empty()
    }
}

/// Per-district sector values and which of them supervision may see.
#[derive(Debug, Clone, PartialEq)]
pub struct DistrictLabels {
    pub values: Tensor,
    pub labeled_mask: Vec<bool>,
}

impl DistrictLabels {
    pub fn new(values: Tensor, labeled_mask: Vec<bool>) -> Result<Self> {
        if values.cols() != SECTORS || values.rows() != labeled_mask.len() {
            return Err(Error::Graph(format!(
                "labels {:?} with mask of length {}",
                values.shape(),
                labeled_mask.len()
            )));
        }
        if !values.is_finite() {
            return Err(Error::Graph("non-finite label value".into()));
        }
        Ok(Self {
            values,
            labeled_mask,
        })
    }

    pub fn fully_labeled(values: Tensor) -> Result<Self> {
        let n = values.rows();
        Self::new(values, vec![true; n])
    }

    pub fn district_count(&self) -> usize {
        self.labeled_mask.len()
    }

    /// `N′`.
    pub fn labeled_count(&self) -> usize {
        self.labeled_mask.iter().filter(|&&b| b).count()
    }

    pub fn labeled_indices(&self) -> Vec<usize> {
        self.labeled_mask
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub split_of: Vec<Split>,
}

impl SplitAssignment {
    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.split_of
            .iter()
            .enumerate()
            .filter_map(|(i, &s)| (s == split).then_some(i))
            .collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.split_of.iter().filter(|&&s| s == split).count()
    }
}

/// Seeded district-level train/val/test assignment.
///
/// Validation and test receive `round(n · ratio)` districts (at least one
/// each); train takes the remainder.
pub fn split_districts(n_districts: usize, ratios: [f64; 3], seed: u64) -> Result<SplitAssignment> {
    if n_districts < 3 {
        return Err(Error::Config(format!(
            "{n_districts} districts cannot populate train, val and test"
        )));
    }
    if ratios.iter().any(|&r| !(r > 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios {ratios:?} must be positive and sum to 1"
        )));
    }
    let share = |r: f64| (libm::round(n_districts as f64 * r) as usize).max(1);
    let mut val = share(ratios[1]);
    let mut test = share(ratios[2]);
    while val + test > n_districts - 1 {
        if test >= val && test > 1 {
            test -= 1;
        } else {
            val -= 1;
        }
    }
    let mut order: Vec<usize> = (0..n_districts).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut split_of = vec![Split::Train; n_districts];
    for &d in &order[..val] {
        split_of[d] = Split::Val;
    }
    for &d in &order[val..val + test] {
        split_of[d] = Split::Test;
    }
    Ok(SplitAssignment { split_of })
}

/// Labels visible only on districts whose split is in `supervise_on`.
pub fn mask_labels(
    labels: &DistrictLabels,
    assignment: &SplitAssignment,
    supervise_on: &[Split],
) -> Result<DistrictLabels> {
    if assignment.split_of.len() != labels.district_count() {
        return Err(Error::Graph(format!(
            "{} labels but {} split assignments",
            labels.district_count(),
            assignment.split_of.len()
        )));
    }
    let mask = assignment
        .split_of
        .iter()
        .map(|s| supervise_on.contains(s))
        .collect();
    DistrictLabels::new(labels.values.clone(), mask)
}
