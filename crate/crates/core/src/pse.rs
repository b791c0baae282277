//! Laplacian positional and random-walk structural encodings.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::RegionGraph;
use crate::linalg::{sym_eig, Spectrum};
use crate::nn;
use crate::params::{ParamSpec, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PseConfig {
    /// `K`, the number of smallest eigenpairs kept.
    pub lap_max_freqs: usize,
    pub lap_dim: usize,
    pub lap_mlp_layers: usize,
    /// `m_max`, the longest random walk.
    pub rwse_steps: usize,
    pub rwse_dim: usize,
}

impl Default for PseConfig {
    fn default() -> Self {
        Self {
            lap_max_freqs: 10,
            lap_dim: 16,
            lap_mlp_layers: 3,
            rwse_steps: 20,
            rwse_dim: 16,
        }
    }
}

impl PseConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("pe.lap.max_freqs", self.lap_max_freqs),
            ("pe.lap.dim", self.lap_dim),
            ("pe.lap.layers", self.lap_mlp_layers),
            ("pe.rwse.steps", self.rwse_steps),
            ("pe.rwse.dim", self.rwse_dim),
        ];
        for (key, v) in fields {
            if v == 0 {
                return Err(Error::Config(format!("{key} must be at least 1")));
            }
        }
        Ok(())
    }
}

/// Which encoders feed the input projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PseAblation {
    None,
    Lap,
    Rwse,
    #[default]
    Both,
}

impl PseAblation {
    pub fn uses_lap(self) -> bool {
        matches!(self, PseAblation::Lap | PseAblation::Both)
    }

    pub fn uses_rwse(self) -> bool {
        matches!(self, PseAblation::Rwse | PseAblation::Both)
    }
}

/// `L = D − A`.
pub fn laplacian(adjacency: &Tensor) -> Result<Tensor> {
    let m = adjacency.rows();
    if adjacency.cols() != m {
        return Err(Error::Shape {
            op: "laplacian",
            lhs: adjacency.shape().to_vec(),
            rhs: vec![m, m],
        });
    }
    let mut l = Tensor::zeros(m, m);
    for i in 0..m {
        if adjacency.get(i, i) != 0.0 {
            return Err(Error::Graph(format!("adjacency has a self-loop at {i}")));
        }
        let mut deg = 0.0;
        for j in 0..m {
            let a = adjacency.get(i, j);
            if a != adjacency.get(j, i) {
                return Err(Error::NotSymmetric { row: i, col: j });
            }
            deg += a;
            l.set(i, j, -a);
        }
        l.set(i, i, deg);
    }
    Ok(l)
}

pub const EIG_TOL: f64 = 1e-13;

/// The `k` smallest Laplacian eigenvectors as columns, zero-padded to `k`
/// columns when the graph has fewer nodes.
pub fn lap_eigvecs(graph: &RegionGraph, k: usize) -> Result<(Tensor, Spectrum)> {
    let spectrum = sym_eig(&laplacian(&graph.adjacency())?, EIG_TOL)?;
    let m = graph.node_count();
    let mut out = Tensor::zeros(m, k);
    for c in 0..k.min(m) {
        for i in 0..m {
            out.set(i, c, spectrum.eigenvectors.get(i, c));
        }
    }
    Ok((out, spectrum))
}

/// Independent ±1 per eigenvector column.
pub fn random_signs<R: Rng>(k: usize, rng: &mut R) -> Vec<f64> {
    (0..k)
        .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect()
}

pub fn flip_columns(vectors: &Tensor, signs: &[f64]) -> Tensor {
    let mut out = vectors.clone();
    for i in 0..out.rows() {
        for (v, s) in out.row_mut(i).iter_mut().zip(signs) {
            *v *= s;
        }
    }
    out
}

/// Column `m − 1` holds `diag((D⁻¹A)^m)`. Isolated nodes get zero rows.
pub fn rwse_raw(graph: &RegionGraph, steps: usize) -> Tensor {
    let m = graph.node_count();
    let mut p = Tensor::zeros(m, m);
    for i in 0..m {
        let nbrs = graph.neighbors(i);
        if nbrs.is_empty() {
            continue;
        }
        let w = 1.0 / nbrs.len() as f64;
        for &j in nbrs {
            p.set(i, j, w);
        }
    }
    let mut out = Tensor::zeros(m, steps);
    let mut power = p.clone();
    for s in 0..steps {
        if s > 0 {
            power = power.matmul(&p).expect("square matrices");
        }
        for i in 0..m {
            out.set(i, s, power.get(i, i));
        }
    }
    out
}

/// Encoder inputs that depend only on graph structure.
#[derive(Debug, Clone, PartialEq)]
pub struct PseInputs {
    /// `M × K` canonical-sign eigenvectors.
    pub lap_vectors: Tensor,
    pub eigenvalues: Vec<f64>,
    /// `M × m_max` return probabilities.
    pub rwse_raw: Tensor,
}

impl PseInputs {
    pub fn compute(graph: &RegionGraph, cfg: &PseConfig) -> Result<Self> {
        let (lap_vectors, spectrum) = lap_eigvecs(graph, cfg.lap_max_freqs)?;
        Ok(Self {
            lap_vectors,
            eigenvalues: spectrum.eigenvalues,
            rwse_raw: rwse_raw(graph, cfg.rwse_steps),
        })
    }
}

pub fn pse_specs(
    cfg: &PseConfig,
    feature_dim: usize,
    embed_dim: usize,
    ablation: PseAblation,
) -> Vec<ParamSpec> {
    let mut specs = Vec::new();
    let mut width = feature_dim;
    if ablation.uses_lap() {
        let mut dims = vec![cfg.lap_max_freqs];
        dims.extend(core::iter::repeat_n(cfg.lap_dim, cfg.lap_mlp_layers));
        specs.extend(nn::mlp_specs("pse.lap", &dims));
        width += cfg.lap_dim;
    }
    if ablation.uses_rwse() {
        specs.extend(nn::linear_specs(
            "pse.rwse",
            cfg.rwse_steps,
            cfg.rwse_dim,
            true,
        ));
        width += cfg.rwse_dim;
    }
    specs.extend(nn::linear_specs("pse.in", width, embed_dim, true));
    specs
}

/// Eigenvector rows through the LapPE MLP.
pub fn lap_pe(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &PseConfig,
    vectors: &Tensor,
) -> Result<Var> {
    let x = tape.constant(vectors.clone());
    nn::mlp(tape, store, "pse.lap", cfg.lap_mlp_layers, x)
}

/// Affine projection of the raw return probabilities.
pub fn rwse_project(tape: &mut Tape, store: &ParamStore, raw: &Tensor) -> Result<Var> {
    let x = tape.constant(raw.clone());
    nn::linear(tape, store, "pse.rwse", x)
}

/// `X₀ = [X ∥ lap ∥ rwse] · W + b`, dropping absent encodings.
pub fn integrate_encodings(
    tape: &mut Tape,
    store: &ParamStore,
    x: Var,
    lap: Option<Var>,
    rwse: Option<Var>,
) -> Result<Var> {
    let mut parts = vec![x];
    parts.extend(lap);
    parts.extend(rwse);
    let joined = if parts.len() == 1 {
        x
    } else {
        tape.concat(&parts)?
    };
    nn::linear(tape, store, "pse.in", joined)
}

/// Full input stage: encodings (per `ablation`) joined with `features`.
/// `signs` flips eigenvector columns (training); `None` keeps canonical signs.
pub fn input_embedding(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &PseConfig,
    ablation: PseAblation,
    inputs: &PseInputs,
    features: Var,
    signs: Option<&[f64]>,
) -> Result<Var> {
    let lap = if ablation.uses_lap() {
        let v = match signs {
            Some(s) => flip_columns(&inputs.lap_vectors, s),
            None => inputs.lap_vectors.clone(),
        };
        Some(lap_pe(tape, store, cfg, &v)?)
    } else {
        None
    };
    let rwse = if ablation.uses_rwse() {
        Some(rwse_project(tape, store, &inputs.rwse_raw)?)
    } else {
        None
    };
    integrate_encodings(tape, store, features, lap, rwse)
}
