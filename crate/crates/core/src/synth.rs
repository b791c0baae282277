//! Synthetic regions with planted spatial structure.
//!
//! Districts are contiguous blocks on a grid. Sector 1 reads node features
//! through neighbor averaging (weight `spatial_mix`), sector 2 reads only the
//! POI block and sector 3 only the street-view block.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{DistrictLabels, EdgeFeatures, FeatureLayout, RegionGraph, SECTORS};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub nodes_per_district: usize,
    pub district_count: usize,
    pub feature_dim: usize,
    /// Leading feature columns that form the POI block; the rest is SVI.
    pub poi_dim: usize,
    pub spatial_mix: f64,
    pub noise_sd: f64,
    /// Expected long-range links per node on top of the grid edges.
    pub long_range_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            nodes_per_district: 10,
            district_count: 20,
            feature_dim: 8,
            poi_dim: 4,
            spatial_mix: 0.8,
            noise_sd: 0.1,
            long_range_rate: 0.1,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synth: {m}")));
        if self.nodes_per_district == 0 || self.district_count == 0 || self.feature_dim == 0 {
            return bad("counts must be at least 1");
        }
        if self.poi_dim > self.feature_dim {
            return bad("poi_dim exceeds feature_dim");
        }
        if !(0.0..=1.0).contains(&self.spatial_mix) {
            return bad("spatial_mix must lie in [0, 1]");
        }
        if !(self.noise_sd >= 0.0) || !self.noise_sd.is_finite() {
            return bad("noise_sd must be a nonnegative number");
        }
        if !(self.long_range_rate >= 0.0) || !self.long_range_rate.is_finite() {
            return bad("long_range_rate must be a nonnegative number");
        }
        Ok(())
    }
}

const LABEL_SCALE: [f64; SECTORS] = [10.0, 30.0, 100.0];

pub(crate) fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2)
}

/// Generated region plus the pieces of the planted model.
#[derive(Debug, Clone)]
pub struct SynthRegion {
    pub graph: RegionGraph,
    pub labels: DistrictLabels,
    /// Per-district mean of node features.
    pub local_means: Tensor,
    /// Per-district mean of neighbor-averaged node features.
    pub neighbor_means: Tensor,
    pub model: PlantedModel,
}

pub fn synth_region(cfg: &SynthConfig) -> Result<(RegionGraph, DistrictLabels)> {
    synth_region_detailed(cfg).map(|r| (r.graph, r.labels))
}

pub fn synth_region_detailed(cfg: &SynthConfig) -> Result<SynthRegion> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.district_count;
    let per = cfg.nodes_per_district;
    let m = n * per;
    let d = cfg.feature_dim;

    let dcols = (1..=n).find(|c| c * c >= n).unwrap_or(1);
    let bw = (1..=per).find(|c| c * c >= per).unwrap_or(1);
    let bh = per.div_ceil(bw);
    let mut coord = Vec::with_capacity(m);
    let mut district_of = Vec::with_capacity(m);
    for dist in 0..n {
        let (bx, by) = (dist % dcols, dist / dcols);
        for k in 0..per {
            coord.push((bx * bw + k % bw, by * bh + k / bw));
            district_of.push(dist);
        }
    }
    let at: BTreeMap<(usize, usize), usize> =
        coord.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let mut pairs = BTreeSet::new();
    for (i, &(x, y)) in coord.iter().enumerate() {
        for c in [(x + 1, y), (x, y + 1)] {
            if let Some(&j) = at.get(&c) {
                pairs.insert((i.min(j), i.max(j)));
            }
        }
    }
    let extra = libm::round(cfg.long_range_rate * m as f64) as usize;
    let capacity = m * (m - 1) / 2;
    let mut added = 0;
    let mut attempts = 0;
    while added < extra && pairs.len() < capacity && attempts < 100 * (extra + 1) {
        attempts += 1;
        let i = rng.random_range(0..m);
        let j = rng.random_range(0..m);
        if i != j && pairs.insert((i.min(j), i.max(j))) {
            added += 1;
        }
    }
    let mut edges = EdgeFeatures::new();
    for &(i, j) in &pairs {
        let fwd = libm::log1p(rng.random_range(1..=50u32) as f64);
        let back = libm::log1p(rng.random_range(1..=50u32) as f64);
        edges.insert((i, j), [fwd, back]);
        edges.insert((j, i), [back, fwd]);
    }

    let bases: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| standard_normal(&mut rng)).collect())
        .collect();
    let mut feats = Vec::with_capacity(m * d);
    for &dist in &district_of {
        for b in &bases[dist] {
            feats.push(b + cfg.noise_sd * standard_normal(&mut rng));
        }
    }
    let features = Tensor::from_rows(m, d, feats);

    let weights = |rng: &mut ChaCha8Rng, cols: core::ops::Range<usize>| {
        let scale = 1.0 / libm::sqrt(cols.len().max(1) as f64);
        let mut w = vec![0.0; d];
        for c in cols {
            w[c] = scale * standard_normal(rng);
        }
        w
    };
    let model = PlantedModel {
        weights: [
            weights(&mut rng, 0..d),
            weights(&mut rng, 0..cfg.poi_dim),
            weights(&mut rng, cfg.poi_dim..d),
        ],
        spatial_mix: cfg.spatial_mix,
    };

    let graph = RegionGraph::new(
        (0..m).map(|i| format!("s{i:04}")).collect(),
        (0..n).map(|j| format!("d{j:03}")).collect(),
        district_of,
        features,
        FeatureLayout {
            poi: (0..cfg.poi_dim).map(|c| format!("poi{c}")).collect(),
            svi_dim: d - cfg.poi_dim,
        },
        edges,
    )?;
    let (labels, local_means, neighbor_means) = model.evaluate(&graph)?;
    Ok(SynthRegion {
        graph,
        labels,
        local_means,
        neighbor_means,
        model,
    })
}

/// The planted label function: one weight vector per sector.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedModel {
    pub weights: [Vec<f64>; SECTORS],
    pub spatial_mix: f64,
}

impl PlantedModel {
    /// Labels plus the local and neighbor-averaged district means they were
    /// computed from. Isolated nodes count as their own neighborhood.
    pub fn evaluate(&self, graph: &RegionGraph) -> Result<(DistrictLabels, Tensor, Tensor)> {
        let features = graph.features();
        let (m, d) = (graph.node_count(), features.cols());
        if self.weights.iter().any(|w| w.len() != d) {
            return Err(Error::Config(format!(
                "planted weights do not match feature width {d}"
            )));
        }
        let mut neighbor_avg = Tensor::zeros(m, d);
        for i in 0..m {
            let nbrs = graph.neighbors(i);
            let row = neighbor_avg.row_mut(i);
            if nbrs.is_empty() {
                row.copy_from_slice(features.row(i));
                continue;
            }
            for &j in nbrs {
                for (r, v) in row.iter_mut().zip(features.row(j)) {
                    *r += v;
                }
            }
            let inv = 1.0 / nbrs.len() as f64;
            row.iter_mut().for_each(|r| *r *= inv);
        }
        let n = graph.district_count();
        let local_means = district_means(features, graph.district_of(), n);
        let neighbor_means = district_means(&neighbor_avg, graph.district_of(), n);

        let dot = |w: &[f64], x: &[f64]| w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        let [w1, w2, w3] = &self.weights;
        let mut raw = Tensor::zeros(n, SECTORS);
        for j in 0..n {
            let (lm, nm) = (local_means.row(j), neighbor_means.row(j));
            let s1 = self.spatial_mix * dot(w1, nm) + (1.0 - self.spatial_mix) * dot(w1, lm);
            raw.row_mut(j)
                .copy_from_slice(&[s1, dot(w2, lm), dot(w3, lm)]);
        }
        // scale, then shift so the smallest district sits at half a scale unit
        for s in 0..SECTORS {
            let lo = (0..n).map(|j| raw.get(j, s)).fold(f64::INFINITY, f64::min);
            for j in 0..n {
                let v = LABEL_SCALE[s] * (raw.get(j, s) - lo + 0.5);
                raw.set(j, s, v);
            }
        }
        Ok((
            DistrictLabels::fully_labeled(raw)?,
            local_means,
            neighbor_means,
        ))
    }
}

fn district_means(x: &Tensor, district_of: &[usize], n: usize) -> Tensor {
    let mut out = Tensor::zeros(n, x.cols());
    let mut count = vec![0usize; n];
    for (i, &dist) in district_of.iter().enumerate() {
        count[dist] += 1;
        for (o, v) in out.row_mut(dist).iter_mut().zip(x.row(i)) {
            *o += v;
        }
    }
    for (j, &c) in count.iter().enumerate() {
        let inv = 1.0 / c as f64;
        out.row_mut(j).iter_mut().for_each(|v| *v *= inv);
    }
    out
}
