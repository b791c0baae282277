//! Flat dotted-key run configuration.
//!
//! Resolution order is defaults, then the JSON file, then command-line
//! overrides. A file may nest objects (`{"train": {"lr": 1e-3}}`) or use
//! dotted keys directly; both flatten to the same key set.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use regiongnn_core::explain::{AttributionQuery, Background, StageWeighting};
use regiongnn_core::gps::{AttentionKind, GpsConfig};
use regiongnn_core::model::ModelConfig;
use regiongnn_core::pse::{PseAblation, PseConfig};
use regiongnn_core::semiloss::{CorruptionConfig, LossConfig, Pairing};
use regiongnn_core::trainer::{TrainConfig, DEFAULT_LAMBDAS};
use regiongnn_core::{SynthConfig, SECTORS};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::files::read_json;

#[derive(Debug, Clone, Copy)]
enum Kind {
    /// Integer in `[min, max]`.
    Int(u64, u64),
    /// Real in `[min, max]`; `open` excludes the lower bound.
    Real {
        min: f64,
        max: f64,
        open: bool,
    },
    Bool,
    /// Fixed-length list of reals, each in `[min, max]`.
    Reals {
        len: Option<usize>,
        min: f64,
        max: f64,
        open: bool,
    },
    Choice(&'static [&'static str]),
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Kind::Int(lo, hi) if hi == u64::MAX => write!(f, "an integer >= {lo}"),
            Kind::Int(lo, hi) => write!(f, "an integer in [{lo}, {hi}]"),
            Kind::Real { min, max, open } => {
                let lb = if open { "(" } else { "[" };
                if max.is_infinite() {
                    write!(f, "a number in {lb}{min}, inf)")
                } else {
                    write!(f, "a number in {lb}{min}, {max}]")
                }
            }
            Kind::Bool => write!(f, "true or false"),
            Kind::Reals { len: Some(n), .. } => write!(f, "a list of {n} numbers"),
            Kind::Reals { len: None, .. } => write!(f, "a non-empty list of numbers"),
            Kind::Choice(opts) => write!(f, "one of {}", opts.join(", ")),
        }
    }
}

const POS: u64 = 1;
const ANY: u64 = u64::MAX;
const UNIT: (f64, f64) = (0.0, 1.0);

fn keys() -> Vec<(&'static str, Kind, Value)> {
    let real = |min: f64, max: f64| Kind::Real {
        min,
        max,
        open: false,
    };
    let positive = Kind::Real {
        min: 0.0,
        max: f64::INFINITY,
        open: true,
    };
    vec![
        ("lambda", real(UNIT.0, UNIT.1), json!(0.5)),
        ("seed", Kind::Int(0, ANY), json!(0)),
        ("pe.lap.max_freqs", Kind::Int(POS, ANY), json!(10)),
        ("pe.lap.dim", Kind::Int(POS, ANY), json!(16)),
        ("pe.lap.layers", Kind::Int(POS, ANY), json!(3)),
        ("pe.rwse.steps", Kind::Int(POS, ANY), json!(20)),
        ("pe.rwse.dim", Kind::Int(POS, ANY), json!(16)),
        (
            "pe.ablation",
            Kind::Choice(&["none", "lap", "rwse", "both"]),
            json!("both"),
        ),
        ("model.embed_dim", Kind::Int(POS, ANY), json!(512)),
        ("model.layers", Kind::Int(0, ANY), json!(5)),
        ("model.heads", Kind::Int(POS, ANY), json!(8)),
        (
            "model.attention",
            Kind::Choice(&["exact", "kernelized"]),
            json!("exact"),
        ),
        ("model.kernel_features", Kind::Int(POS, ANY), json!(256)),
        ("model.residual", Kind::Bool, json!(true)),
        ("model.layer_norm", Kind::Bool, json!(true)),
        ("model.fusion_layers", Kind::Int(POS, ANY), json!(2)),
        ("model.head_hidden", Kind::Int(POS, ANY), json!(64)),
        ("train.lr", positive, json!(9e-4)),
        ("train.epochs", Kind::Int(POS, ANY), json!(500)),
        (
            "train.alpha",
            Kind::Reals {
                len: Some(SECTORS),
                min: 0.0,
                max: f64::INFINITY,
                open: true,
            },
            json!([0.1, 0.01, 0.001]),
        ),
        ("train.patience", Kind::Int(POS, ANY), json!(100)),
        ("train.sign_flip", Kind::Bool, json!(true)),
        ("loss.edge_drop", real(UNIT.0, UNIT.1), json!(0.2)),
        ("loss.permute", Kind::Bool, json!(true)),
        (
            "loss.pairing",
            Kind::Choice(&["own_district", "all_pairs"]),
            json!("own_district"),
        ),
        (
            "split.ratios",
            Kind::Reals {
                len: Some(3),
                min: 0.0,
                max: 1.0,
                open: false,
            },
            json!([0.7, 0.1, 0.2]),
        ),
        ("synth.nodes_per_district", Kind::Int(POS, ANY), json!(10)),
        ("synth.districts", Kind::Int(POS, ANY), json!(20)),
        ("synth.feature_dim", Kind::Int(POS, ANY), json!(8)),
        ("synth.poi_dim", Kind::Int(0, ANY), json!(4)),
        ("synth.spatial_mix", real(UNIT.0, UNIT.1), json!(0.8)),
        ("synth.noise_sd", real(0.0, f64::INFINITY), json!(0.1)),
        (
            "synth.long_range_rate",
            real(0.0, f64::INFINITY),
            json!(0.1),
        ),
        (
            "sweep.lambdas",
            Kind::Reals {
                len: None,
                min: 0.0,
                max: 1.0,
                open: false,
            },
            json!(DEFAULT_LAMBDAS),
        ),
        ("explain.sector", Kind::Int(0, SECTORS as u64 - 1), json!(0)),
        ("explain.district", Kind::Int(0, ANY), json!(0)),
        ("explain.top_k", Kind::Int(POS, ANY), json!(10)),
        ("explain.permutations", Kind::Int(POS, ANY), json!(2000)),
        (
            "explain.background",
            Kind::Choice(&["zeros", "dataset-mean"]),
            json!("dataset-mean"),
        ),
        ("explain.max_groups", Kind::Int(POS, 12), json!(12)),
        (
            "explain.weighting",
            Kind::Choice(&["abs-shap", "signed-shap", "rescale"]),
            json!("rescale"),
        ),
        ("probe.gamma", real(0.0, f64::INFINITY), json!(1.0)),
    ]
}

fn check(key: &str, kind: Kind, v: &Value) -> Result<()> {
    let mismatch = || Error::Config(format!("key `{key}`: expected {kind}, got {v}"));
    let in_range = |x: f64, min: f64, max: f64, open: bool| {
        x.is_finite() && (if open { x > min } else { x >= min }) && x <= max
    };
    match kind {
        Kind::Int(lo, hi) => {
            let x = v.as_u64().ok_or_else(mismatch)?;
            if x < lo || x > hi {
                return Err(mismatch());
            }
        }
        Kind::Real { min, max, open } => {
            let x = v.as_f64().ok_or_else(mismatch)?;
            if !in_range(x, min, max, open) {
                return Err(mismatch());
            }
        }
        Kind::Bool => {
            v.as_bool().ok_or_else(mismatch)?;
        }
        Kind::Reals {
            len,
            min,
            max,
            open,
        } => {
            let xs = v.as_array().ok_or_else(mismatch)?;
            if xs.is_empty() || len.is_some_and(|n| xs.len() != n) {
                return Err(mismatch());
            }
            for x in xs {
                let x = x.as_f64().ok_or_else(mismatch)?;
                if !in_range(x, min, max, open) {
                    return Err(mismatch());
                }
            }
        }
        Kind::Choice(opts) => {
            let s = v.as_str().ok_or_else(mismatch)?;
            if !opts.contains(&s) {
                return Err(mismatch());
            }
        }
    }
    Ok(())
}

fn flatten(prefix: &str, obj: &Map<String, Value>, out: &mut BTreeMap<String, Value>) {
    for (k, v) in obj {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            Value::Object(inner) => flatten(&key, inner, out),
            _ => {
                out.insert(key, v.clone());
            }
        }
    }
}

/// A fully resolved configuration: every known key with a validated value.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, Value>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: keys()
                .into_iter()
                .map(|(k, _, v)| (k.to_string(), v))
                .collect(),
        }
    }
}

pub fn valid_keys() -> Vec<&'static str> {
    keys().into_iter().map(|(k, _, _)| k).collect()
}

/// Parses an override value: JSON when it parses, a bare string otherwise.
pub fn parse_override(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Defaults < `path` < `overrides`, then every key and the cross-key
/// constraints are validated.
pub fn resolve_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = path {
        let doc: Value = read_json(path)?;
        let obj = doc.as_object().ok_or_else(|| {
            Error::Config(format!(
                "{}: configuration must be a JSON object",
                path.display()
            ))
        })?;
        let mut flat = BTreeMap::new();
        flatten("", obj, &mut flat);
        for (k, v) in flat {
            cfg.set(&k, v)?;
        }
    }
    for (k, raw) in overrides {
        cfg.set(k, parse_override(raw))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    /// Sets one key after type and range checks.
    pub fn set(&mut self, key: &str, value: Value) -> Result<()> {
        let spec = keys().into_iter().find(|(k, _, _)| *k == key);
        let Some((_, kind, _)) = spec else {
            return Err(Error::Config(format!(
                "unknown key `{key}`; valid keys: {}",
                valid_keys().join(", ")
            )));
        };
        check(key, kind, &value)?;
        self.values.insert(key.to_string(), value);
        Ok(())
    }

    pub fn get(&self, key: &str) -> &Value {
        &self.values[key]
    }

    pub fn as_json(&self) -> Value {
        Value::Object(self.values.clone().into_iter().collect())
    }

    fn f(&self, key: &str) -> f64 {
        self.values[key].as_f64().expect("validated number")
    }

    fn u(&self, key: &str) -> usize {
        self.values[key].as_u64().expect("validated integer") as usize
    }

    fn b(&self, key: &str) -> bool {
        self.values[key].as_bool().expect("validated bool")
    }

    fn s(&self, key: &str) -> &str {
        self.values[key].as_str().expect("validated string")
    }

    fn list(&self, key: &str) -> Vec<f64> {
        self.values[key]
            .as_array()
            .expect("validated list")
            .iter()
            .map(|x| x.as_f64().expect("validated number"))
            .collect()
    }

    pub fn seed(&self) -> u64 {
        self.values["seed"].as_u64().expect("validated integer")
    }

    pub fn lambda(&self) -> f64 {
        self.f("lambda")
    }

    pub fn model(&self) -> ModelConfig {
        let ablation = match self.s("pe.ablation") {
            "none" => PseAblation::None,
            "lap" => PseAblation::Lap,
            "rwse" => PseAblation::Rwse,
            _ => PseAblation::Both,
        };
        let attention = match self.s("model.attention") {
            "kernelized" => AttentionKind::Kernelized,
            _ => AttentionKind::Exact,
        };
        ModelConfig {
            pse: PseConfig {
                lap_max_freqs: self.u("pe.lap.max_freqs"),
                lap_dim: self.u("pe.lap.dim"),
                lap_mlp_layers: self.u("pe.lap.layers"),
                rwse_steps: self.u("pe.rwse.steps"),
                rwse_dim: self.u("pe.rwse.dim"),
            },
            gps: GpsConfig {
                embed_dim: self.u("model.embed_dim"),
                layers: self.u("model.layers"),
                heads: self.u("model.heads"),
                attention,
                kernel_features: self.u("model.kernel_features"),
                kernel_seed: self.seed(),
                residual: self.b("model.residual"),
                layer_norm: self.b("model.layer_norm"),
                fusion_mlp_layers: self.u("model.fusion_layers"),
                head_hidden: self.u("model.head_hidden"),
            },
            ablation,
        }
    }

    pub fn train(&self) -> TrainConfig {
        let alpha = self.list("train.alpha");
        TrainConfig {
            epochs: self.u("train.epochs"),
            lr: self.f("train.lr"),
            seed: self.seed(),
            patience: self.u("train.patience"),
            loss: LossConfig {
                lambda: self.lambda(),
                alpha: [alpha[0], alpha[1], alpha[2]],
                pairing: match self.s("loss.pairing") {
                    "all_pairs" => Pairing::AllPairs,
                    _ => Pairing::OwnDistrict,
                },
            },
            corruption: CorruptionConfig {
                edge_drop_prob: self.f("loss.edge_drop"),
                permute_features: self.b("loss.permute"),
                seed: self.seed(),
            },
            sign_flip: self.b("train.sign_flip"),
        }
    }

    pub fn split_ratios(&self) -> [f64; 3] {
        let r = self.list("split.ratios");
        [r[0], r[1], r[2]]
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            nodes_per_district: self.u("synth.nodes_per_district"),
            district_count: self.u("synth.districts"),
            feature_dim: self.u("synth.feature_dim"),
            poi_dim: self.u("synth.poi_dim"),
            spatial_mix: self.f("synth.spatial_mix"),
            noise_sd: self.f("synth.noise_sd"),
            long_range_rate: self.f("synth.long_range_rate"),
            seed: self.seed(),
        }
    }

    pub fn sweep_lambdas(&self) -> Vec<f64> {
        self.list("sweep.lambdas")
    }

    pub fn probe_gamma(&self) -> f64 {
        self.f("probe.gamma")
    }

    pub fn query(&self) -> AttributionQuery {
        AttributionQuery {
            sector: self.u("explain.sector"),
            district: self.u("explain.district"),
            top_k: self.u("explain.top_k"),
            permutations: self.u("explain.permutations"),
            background: match self.s("explain.background") {
                "zeros" => Background::Zeros,
                _ => Background::DatasetMean,
            },
            seed: self.seed(),
            max_groups: self.u("explain.max_groups"),
            weighting: match self.s("explain.weighting") {
                "abs-shap" => StageWeighting::AbsShap,
                "signed-shap" => StageWeighting::SignedShap,
                _ => StageWeighting::Rescale,
            },
        }
    }

    /// Cross-key constraints owned by the core modules.
    pub fn validate(&self) -> Result<()> {
        self.model().validate()?;
        self.train().validate()?;
        self.synth().validate()?;
        let r = self.split_ratios();
        if (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "key `split.ratios`: must sum to 1, got {r:?}"
            )));
        }
        Ok(())
    }
}
