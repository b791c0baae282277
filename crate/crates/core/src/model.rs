//! The assembled network: encodings, GPS stack, readout, heads and
//! discriminator, plus the inputs it consumes.

use alloc::rc::Rc;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::gps::{self, EdgeInput, GpsConfig};
use crate::graph::{DistrictLabels, EdgeList, RegionGraph, SECTORS};
use crate::params::{ParamSpec, ParamStore};
use crate::pse::{self, PseAblation, PseConfig, PseInputs};
use crate::semiloss;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub pse: PseConfig,
    pub gps: GpsConfig,
    pub ablation: PseAblation,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.pse.validate()?;
        self.gps.validate()
    }

    pub fn param_specs(&self, feature_dim: usize) -> Vec<ParamSpec> {
        let mut specs = pse::pse_specs(&self.pse, feature_dim, self.gps.embed_dim, self.ablation);
        specs.extend(gps::gps_specs(&self.gps));
        specs.extend(gps::head_specs(&self.gps));
        specs.extend(semiloss::discriminator_specs(self.gps.embed_dim));
        specs
    }
}

/// Affine map between standardized head outputs and label units, fitted
/// on the supervised districts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelScaler {
    pub mean: [f64; SECTORS],
    pub sd: [f64; SECTORS],
}

impl LabelScaler {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; SECTORS],
            sd: [1.0; SECTORS],
        }
    }

    /// Population mean and standard deviation over labeled districts; a
    /// zero or undefined spread falls back to 1.
    pub fn fit(labels: &DistrictLabels) -> Self {
        let idx = labels.labeled_indices();
        if idx.is_empty() {
            return Self::identity();
        }
        let n = idx.len() as f64;
        let mut mean = [0.0; SECTORS];
        let mut sd = [0.0; SECTORS];
        for s in 0..SECTORS {
            mean[s] = idx.iter().map(|&j| labels.values.get(j, s)).sum::<f64>() / n;
            let var = idx
                .iter()
                .map(|&j| {
                    let d = labels.values.get(j, s) - mean[s];
                    d * d
                })
                .sum::<f64>()
                / n;
            let v = libm::sqrt(var);
            sd[s] = if v > 0.0 && v.is_finite() { v } else { 1.0 };
        }
        Self { mean, sd }
    }
}

/// Structure-derived inputs of one graph.
#[derive(Debug, Clone)]
pub struct GraphInputs {
    pub features: Tensor,
    pub edges: EdgeList,
    pub pse: PseInputs,
    pub district_of: Rc<[usize]>,
    pub n_districts: usize,
}

impl GraphInputs {
    pub fn new(graph: &RegionGraph, cfg: &ModelConfig) -> Result<Self> {
        Ok(Self {
            features: graph.features().clone(),
            edges: graph.edge_list(),
            pse: PseInputs::compute(graph, &cfg.pse)?,
            district_of: Rc::from(graph.district_of().to_vec()),
            n_districts: graph.district_count(),
        })
    }
}

/// Every intermediate the trainer and the explainer read.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub x0: Var,
    pub layers: Vec<Var>,
    pub h: Var,
}

/// Input projection plus GPS stack on `features` and `edges`.
pub fn encode(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &ModelConfig,
    pse_inputs: &PseInputs,
    features: &Tensor,
    edges: &EdgeList,
    signs: Option<&[f64]>,
) -> Result<Encoded> {
    let x = tape.constant(features.clone());
    encode_var(tape, store, cfg, pse_inputs, x, edges, signs)
}

pub fn encode_var(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &ModelConfig,
    pse_inputs: &PseInputs,
    x: Var,
    edges: &EdgeList,
    signs: Option<&[f64]>,
) -> Result<Encoded> {
    let x0 = pse::input_embedding(tape, store, &cfg.pse, cfg.ablation, pse_inputs, x, signs)?;
    let edges = EdgeInput::new(tape, edges.clone());
    let layers = gps::encode_layers(tape, store, &cfg.gps, x0, &edges)?;
    let h = layers.last().copied().unwrap_or(x0);
    Ok(Encoded { x0, layers, h })
}

/// `ŷ = μ + σ ⊙ heads(S)`.
pub fn predict(tape: &mut Tape, store: &ParamStore, s: Var, scaler: &LabelScaler) -> Result<Var> {
    let z = gps::predict_sectors(tape, store, s)?;
    unscale(tape, z, scaler)
}

pub fn unscale(tape: &mut Tape, z: Var, scaler: &LabelScaler) -> Result<Var> {
    let sd = tape.constant(Tensor::from_rows(1, SECTORS, scaler.sd.to_vec()));
    let mu = tape.constant(Tensor::from_rows(1, SECTORS, scaler.mean.to_vec()));
    let y = tape.mul_row(z, sd)?;
    tape.add_row(y, mu)
}

/// Clean-graph inference pass.
#[derive(Debug, Clone)]
pub struct Inference {
    pub h: Tensor,
    pub s: Tensor,
    pub s_disc: Tensor,
    pub y_hat: Tensor,
}

pub fn infer(
    store: &ParamStore,
    cfg: &ModelConfig,
    inputs: &GraphInputs,
    scaler: &LabelScaler,
) -> Result<Inference> {
    let mut tape = Tape::new();
    let enc = encode(
        &mut tape,
        store,
        cfg,
        &inputs.pse,
        &inputs.features,
        &inputs.edges,
        None,
    )?;
    let (s, s_disc) =
        semiloss::district_readout(&mut tape, enc.h, &inputs.district_of, inputs.n_districts)?;
    let y = predict(&mut tape, store, s, scaler)?;
    Ok(Inference {
        h: tape.value(enc.h).clone(),
        s: tape.value(s).clone(),
        s_disc: tape.value(s_disc).clone(),
        y_hat: tape.value(y).clone(),
    })
}
