//! Corruption, district readout, bilinear discriminator and the combined
//! infomax + masked regression objective.

use alloc::format;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{DistrictLabels, EdgeFeatures, RegionGraph, SECTORS};
use crate::params::{ParamSpec, ParamStore};
use crate::tape::{sigmoid, Tape, Var};
use crate::tensor::Tensor;

pub const LOG_CLAMP: f64 = 1e-12;
pub const DEFAULT_ALPHA: [f64; SECTORS] = [0.1, 0.01, 0.001];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorruptionConfig {
    pub edge_drop_prob: f64,
    pub permute_features: bool,
    pub seed: u64,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        Self {
            edge_drop_prob: 0.2,
            permute_features: true,
            seed: 0,
        }
    }
}

impl CorruptionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.edge_drop_prob) {
            return Err(Error::Config(format!(
                "loss.edge_drop must lie in [0, 1], got {}",
                self.edge_drop_prob
            )));
        }
        Ok(())
    }
}

/// How nodes are paired with district summaries in the infomax term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// Each node against its own district.
    #[default]
    OwnDistrict,
    /// Each node against every district, averaged over `M · N` pairs.
    AllPairs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub lambda: f64,
    pub alpha: [f64; SECTORS],
    pub pairing: Pairing,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            alpha: DEFAULT_ALPHA,
            pairing: Pairing::OwnDistrict,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        check_lambda(self.lambda)?;
        if self.alpha.iter().any(|&a| !(a > 0.0) || !a.is_finite()) {
            return Err(Error::Config(format!(
                "train.alpha must be positive, got {:?}",
                self.alpha
            )));
        }
        Ok(())
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if (0.0..=1.0).contains(&lambda) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "lambda must lie in [0, 1], got {lambda}"
        )))
    }
}

/// Node permutation and surviving undirected edges of a corrupted view.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptedView {
    /// Row `i` of the corrupted features is row `perm[i]` of the original.
    pub perm: Vec<usize>,
    pub features: Tensor,
    pub edges: EdgeFeatures,
}

/// Draws one corruption from `rng`: a uniform feature-row permutation (when
/// enabled) and an independent drop of each undirected edge.
pub fn corrupt_with<R: Rng>(
    graph: &RegionGraph,
    edge_drop_prob: f64,
    permute: bool,
    rng: &mut R,
) -> CorruptedView {
    let m = graph.node_count();
    let mut perm: Vec<usize> = (0..m).collect();
    if permute {
        perm.shuffle(rng);
    }
    let mut edges = EdgeFeatures::new();
    for (&(i, j), e) in graph.edge_features() {
        if i < j && !(rng.random::<f64>() < edge_drop_prob) {
            edges.insert((i, j), *e);
            edges.insert((j, i), graph.edge_features()[&(j, i)]);
        }
    }
    CorruptedView {
        features: graph.features().select_rows(&perm),
        perm,
        edges,
    }
}

/// The corrupted graph `C(G)`: same nodes and districts, permuted feature
/// rows, thinned edges.
pub fn corrupt(graph: &RegionGraph, cfg: &CorruptionConfig) -> Result<RegionGraph> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let view = corrupt_with(graph, cfg.edge_drop_prob, cfg.permute_features, &mut rng);
    graph.with_features(view.features)?.with_edges(view.edges)
}

/// Per-district member counts; errors on an empty district.
pub fn district_sizes(district_of: &[usize], n: usize) -> Result<Vec<usize>> {
    let mut sizes = vec![0usize; n];
    for &d in district_of {
        if d >= n {
            return Err(Error::Graph(format!("district index {d} out of range {n}")));
        }
        sizes[d] += 1;
    }
    if let Some(d) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::Graph(format!("district {d} has no nodes")));
    }
    Ok(sizes)
}

/// `S_j = mean of H rows in district j` and `S_disc = σ(S)`.
pub fn district_readout(
    tape: &mut Tape,
    h: Var,
    district_of: &Rc<[usize]>,
    n: usize,
) -> Result<(Var, Var)> {
    let sizes = district_sizes(district_of, n)?;
    let sum = tape.scatter_add_rows(h, district_of.clone(), n)?;
    let inv = tape.constant(Tensor::from_rows(
        n,
        1,
        sizes.iter().map(|&s| 1.0 / s as f64).collect(),
    ));
    let s = tape.mul_col(sum, inv)?;
    let s_disc = tape.sigmoid(s);
    Ok((s, s_disc))
}

/// `D(h, s) = σ(hᵀ W s)`.
pub fn discriminate(h: &[f64], s: &[f64], w: &Tensor) -> f64 {
    let d = h.len();
    let mut acc = 0.0;
    for a in 0..d {
        let mut ws = 0.0;
        for b in 0..d {
            ws += w.get(a, b) * s[b];
        }
        acc += h[a] * ws;
    }
    sigmoid(acc)
}

pub fn discriminator_specs(embed_dim: usize) -> Vec<ParamSpec> {
    vec![ParamSpec::weight("disc.w", embed_dim, embed_dim)]
}

/// Logits `h_iᵀ W s_{d(i)}` for every node (`M × 1`).
pub fn own_district_logits(
    tape: &mut Tape,
    store: &ParamStore,
    h: Var,
    s_disc: Var,
    district_of: &Rc<[usize]>,
) -> Result<Var> {
    let w = tape.param(store, store.id("disc.w")?);
    let hw = tape.matmul(h, w)?;
    let s_own = tape.gather_rows(s_disc, district_of.clone())?;
    let prod = tape.mul(hw, s_own)?;
    Ok(tape.row_sum(prod))
}

/// `−(1/M) Σ_i [log D(h_i, s_{d(i)}) + log(1 − D(h̃_i, s_{d(i)}))]`, log
/// arguments clamped at `1e−12`. With [`Pairing::AllPairs`] every node meets
/// every summary and the normalizer is `M · N`.
pub fn info_loss(
    tape: &mut Tape,
    store: &ParamStore,
    h: Var,
    h_corrupt: Var,
    s_disc: Var,
    district_of: &Rc<[usize]>,
    pairing: Pairing,
) -> Result<Var> {
    let (pos, neg, count) = match pairing {
        Pairing::OwnDistrict => {
            let pos = own_district_logits(tape, store, h, s_disc, district_of)?;
            let neg = own_district_logits(tape, store, h_corrupt, s_disc, district_of)?;
            (pos, neg, district_of.len())
        }
        Pairing::AllPairs => {
            let w = tape.param(store, store.id("disc.w")?);
            let hw = tape.matmul(h, w)?;
            let pos = tape.matmul_t(hw, s_disc)?;
            let hw_c = tape.matmul(h_corrupt, w)?;
            let neg = tape.matmul_t(hw_c, s_disc)?;
            let count = tape.value(pos).len();
            (pos, neg, count)
        }
    };
    let p = tape.sigmoid(pos);
    let p = tape.clamp_min(p, LOG_CLAMP);
    let lp = tape.log(p)?;
    let neg = tape.neg(neg);
    let q = tape.sigmoid(neg);
    let q = tape.clamp_min(q, LOG_CLAMP);
    let lq = tape.log(q)?;
    let total = tape.add(lp, lq)?;
    let total = tape.sum(total);
    Ok(tape.scale(total, -1.0 / count as f64))
}

/// `(1/L) Σ_s (α_s / N′) Σ_{j labeled} (ŷ_js − y_js)²`.
pub fn reg_loss(
    tape: &mut Tape,
    y_hat: Var,
    labels: &DistrictLabels,
    alpha: &[f64; SECTORS],
) -> Result<Var> {
    let idx = labels.labeled_indices();
    if idx.is_empty() {
        return Err(Error::NoLabeledDistricts);
    }
    let target = tape.constant(labels.values.select_rows(&idx));
    let picked = tape.gather_rows(y_hat, Rc::from(idx))?;
    let diff = tape.sub(picked, target)?;
    let sq = tape.mul(diff, diff)?;
    let per_sector = tape.mean_over_rows(sq);
    let weights = tape.constant(Tensor::from_rows(1, SECTORS, alpha.to_vec()));
    let weighted = tape.mul(per_sector, weights)?;
    let total = tape.sum(weighted);
    Ok(tape.scale(total, 1.0 / SECTORS as f64))
}

/// `λ L_info + (1 − λ) L_reg`.
pub fn semi_info_loss(tape: &mut Tape, info: Var, reg: Var, lambda: f64) -> Result<Var> {
    check_lambda(lambda)?;
    let a = tape.scale(info, lambda);
    let b = tape.scale(reg, 1.0 - lambda);
    tape.add(a, b)
}

/// Scalar form of [`semi_info_loss`].
pub fn combine(info: f64, reg: f64, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Ok(lambda * info + (1.0 - lambda) * reg)
}
