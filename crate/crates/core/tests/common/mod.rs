#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regiongnn_core::{EdgeFeatures, FeatureLayout, RegionGraph, Tensor};

/// Undirected graph from an edge list; edge features `[a, b]` in the
/// listed direction and `[b, a]` in reverse.
pub fn graph(
    m: usize,
    edges: &[(usize, usize)],
    district_of: &[usize],
    features: Tensor,
) -> RegionGraph {
    let mut ef = EdgeFeatures::new();
    for (k, &(i, j)) in edges.iter().enumerate() {
        let a = 0.3 + 0.1 * k as f64;
        let b = 0.7 - 0.05 * k as f64;
        ef.insert((i, j), [a, b]);
        ef.insert((j, i), [b, a]);
    }
    let n = district_of.iter().max().map_or(0, |d| d + 1);
    let cols = features.cols();
    RegionGraph::new(
        (0..m).map(|i| format!("u{i}")).collect(),
        (0..n).map(|j| format!("d{j}")).collect(),
        district_of.to_vec(),
        features,
        FeatureLayout {
            poi: (0..cols.min(2)).map(|c| format!("p{c}")).collect(),
            svi_dim: cols.saturating_sub(2),
        },
        ef,
    )
    .unwrap()
}

pub fn structure(m: usize, edges: &[(usize, usize)]) -> RegionGraph {
    graph(m, edges, &vec![0; m], Tensor::zeros(m, 1))
}

pub fn random_edges(rng: &mut ChaCha8Rng, m: usize, p: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..m {
        for j in i + 1..m {
            if rng.random::<f64>() < p {
                out.push((i, j));
            }
        }
    }
    out
}

pub fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::from_rows(
        r,
        c,
        (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
}

/// Random graph on `m` nodes split into `districts` contiguous blocks.
pub fn random_graph(seed: u64, m: usize, districts: usize, dim: usize, p: f64) -> RegionGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let edges = random_edges(&mut rng, m, p);
    let district_of: Vec<usize> = (0..m).map(|i| i * districts / m).collect();
    let x = random_matrix(&mut rng, m, dim);
    graph(m, &edges, &district_of, x)
}

pub fn cycle(m: usize) -> Vec<(usize, usize)> {
    (0..m).map(|i| (i, (i + 1) % m)).collect()
}

/// Relabels nodes: node `i` of the result is node `perm[i]` of `g`.
pub fn permute(g: &RegionGraph, perm: &[usize]) -> RegionGraph {
    let m = g.node_count();
    let mut inv = vec![0; m];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    let mut ef = EdgeFeatures::new();
    for (&(i, j), e) in g.edge_features() {
        ef.insert((inv[i], inv[j]), *e);
    }
    RegionGraph::new(
        perm.iter().map(|&p| g.node_ids()[p].clone()).collect(),
        g.district_ids().to_vec(),
        perm.iter().map(|&p| g.district_of()[p]).collect(),
        g.features().select_rows(perm),
        g.layout().clone(),
        ef,
    )
    .unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
