//! Transductive training, evaluation metrics, the λ sweep and the ridge
//! probe on frozen district embeddings.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{
    mask_labels, DistrictLabels, EdgeList, RegionGraph, Split, SplitAssignment, SECTORS,
};
use crate::linalg::solve_spd;
use crate::model::{self, GraphInputs, LabelScaler, ModelConfig};
use crate::params::{init_params, Adam, ParamStore};
use crate::pse;
use crate::semiloss::{self, CorruptionConfig, LossConfig};
use crate::tape::{sigmoid, Tape, Var};
use crate::tensor::Tensor;

pub const DEFAULT_LAMBDAS: [f64; 6] = [0.0, 0.1, 0.3, 0.5, 0.7, 0.9];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub mse: f64,
    /// `None` when the ground truth has zero variance or fewer than two
    /// points.
    pub r2: Option<f64>,
}

/// MAE, MSE and `R² = 1 − Σ(ŷ−y)² / Σ(y−ȳ)²`.
pub fn metrics(y_hat: &[f64], y: &[f64]) -> Result<Metrics> {
    if y_hat.len() != y.len() || y.is_empty() {
        return Err(Error::Shape {
            op: "metrics",
            lhs: vec![y_hat.len()],
            rhs: vec![y.len()],
        });
    }
    let n = y.len() as f64;
    let mae = y_hat.iter().zip(y).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
    let ss_res = y_hat
        .iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>();
    let mean = y.iter().sum::<f64>() / n;
    let ss_tot = y.iter().map(|b| (b - mean) * (b - mean)).sum::<f64>();
    let r2 = (y.len() >= 2 && ss_tot > 0.0).then(|| 1.0 - ss_res / ss_tot);
    Ok(Metrics {
        mae,
        mse: ss_res / n,
        r2,
    })
}

/// Strict variant: zero ground-truth variance is an error.
pub fn r_squared(y_hat: &[f64], y: &[f64]) -> Result<f64> {
    metrics(y_hat, y)?.r2.ok_or(Error::ZeroVariance)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub loss: LossConfig,
    pub corruption: CorruptionConfig,
    /// Random eigenvector sign flips each epoch.
    pub sign_flip: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            lr: 9e-4,
            seed: 0,
            patience: 100,
            loss: LossConfig::default(),
            corruption: CorruptionConfig::default(),
            sign_flip: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("train.epochs must be at least 1".into()));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!(
                "train.lr must be positive, got {}",
                self.lr
            )));
        }
        self.loss.validate()?;
        self.corruption.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub info: f64,
    pub reg: f64,
    pub total: f64,
    /// Validation regression loss after this epoch's step.
    pub val_reg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub split: Split,
    pub districts: usize,
    pub sectors: [Metrics; SECTORS],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub splits: Vec<SplitMetrics>,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub best_val_reg: Option<f64>,
    pub history: Vec<EpochRecord>,
}

impl MetricsReport {
    pub fn split(&self, split: Split) -> Option<&SplitMetrics> {
        self.splits.iter().find(|m| m.split == split)
    }
}

/// Everything needed to rerun inference: configs, label scaling, split and
/// trained parameters.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub feature_dim: usize,
    pub scaler: LabelScaler,
    pub split: SplitAssignment,
    pub params: ParamStore,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub report: MetricsReport,
}

/// Trains on the districts of `split` marked train and evaluates all three
/// splits with the parameters of the best validation epoch. With λ = 1 the
/// regression term carries no weight, so early stopping is off and the
/// final parameters are kept.
pub fn train(
    graph: &RegionGraph,
    labels: &DistrictLabels,
    split: &SplitAssignment,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    model_cfg.validate()?;
    cfg.validate()?;
    let inputs = GraphInputs::new(graph, model_cfg)?;
    let train_labels = mask_labels(labels, split, &[Split::Train])?;
    let val_labels = mask_labels(labels, split, &[Split::Val])?;
    if train_labels.labeled_count() == 0 {
        return Err(Error::NoLabeledDistricts);
    }
    let scaler = LabelScaler::fit(&train_labels);
    let mut store = init_params(&model_cfg.param_specs(graph.features().cols()), cfg.seed)?;
    let opt = Adam::with_lr(cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_c0de);
    let lambda = cfg.loss.lambda;
    let early_stop = lambda < 1.0 && val_labels.labeled_count() > 0;

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ParamStore)> = None;
    for epoch in 0..cfg.epochs {
        let signs = cfg
            .sign_flip
            .then(|| pse::random_signs(model_cfg.pse.lap_max_freqs, &mut rng));
        let view = semiloss::corrupt_with(
            graph,
            cfg.corruption.edge_drop_prob,
            cfg.corruption.permute_features,
            &mut rng,
        );
        let corrupt_edges = graph.with_edges(view.edges)?.edge_list();

        let mut tape = Tape::new();
        let corrupted = Corrupted {
            features: &view.features,
            edges: &corrupt_edges,
        };
        let LossTerms { info, reg, total } = objective(
            &mut tape,
            &store,
            model_cfg,
            &inputs,
            &corrupted,
            signs.as_deref(),
            &train_labels,
            &scaler,
            &cfg.loss,
        )?;
        let (iv, rv, tv) = (tape.scalar(info), tape.scalar(reg), tape.scalar(total));
        if !(iv.is_finite() && rv.is_finite() && tv.is_finite()) {
            return Err(Error::Diverged {
                epoch,
                info: iv,
                reg: rv,
                total: tv,
            });
        }
        tape.backward(total, &mut store)?;
        store.adam_step(&opt)?;

        let mut record = EpochRecord {
            epoch,
            info: iv,
            reg: rv,
            total: tv,
            val_reg: None,
        };
        if early_stop {
            let out = model::infer(&store, model_cfg, &inputs, &scaler)?;
            let v = reg_loss_value(&out.y_hat, &val_labels, &cfg.loss.alpha)?;
            record.val_reg = Some(v);
            let improved = best.as_ref().is_none_or(|(b, _, _)| v < *b);
            if improved {
                best = Some((v, epoch, store.clone()));
            }
        }
        history.push(record);
        if let Some((_, best_epoch, _)) = &best {
            if epoch - best_epoch >= cfg.patience {
                break;
            }
        }
    }
    let epochs_run = history.len();
    let (best_val_reg, best_epoch, params) = match best {
        Some((v, e, s)) => (Some(v), e, s),
        None => (None, epochs_run - 1, store),
    };
    let out = model::infer(&params, model_cfg, &inputs, &scaler)?;
    let splits = evaluate_splits(&out.y_hat, labels, split)?;
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            model: model_cfg.clone(),
            train: cfg.clone(),
            feature_dim: graph.features().cols(),
            scaler,
            split: split.clone(),
            params,
        },
        report: MetricsReport {
            splits,
            best_epoch,
            epochs_run,
            best_val_reg,
            history,
        },
    })
}

/// Inputs of the negative view.
pub struct Corrupted<'a> {
    pub features: &'a Tensor,
    pub edges: &'a EdgeList,
}

/// Tape handles of the three loss values.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub info: Var,
    pub reg: Var,
    pub total: Var,
}

/// One evaluation of `λ L_info + (1 − λ) L_reg`: clean and corrupted
/// encodes, readout, discriminator and heads on one tape.
#[allow(clippy::too_many_arguments)]
pub fn objective(
    tape: &mut Tape,
    store: &ParamStore,
    model_cfg: &ModelConfig,
    inputs: &GraphInputs,
    corrupted: &Corrupted<'_>,
    signs: Option<&[f64]>,
    labels: &DistrictLabels,
    scaler: &LabelScaler,
    loss: &LossConfig,
) -> Result<LossTerms> {
    let clean = model::encode(
        tape,
        store,
        model_cfg,
        &inputs.pse,
        &inputs.features,
        &inputs.edges,
        signs,
    )?;
    let noisy = model::encode(
        tape,
        store,
        model_cfg,
        &inputs.pse,
        corrupted.features,
        corrupted.edges,
        signs,
    )?;
    let (s, s_disc) =
        semiloss::district_readout(tape, clean.h, &inputs.district_of, inputs.n_districts)?;
    let info = semiloss::info_loss(
        tape,
        store,
        clean.h,
        noisy.h,
        s_disc,
        &inputs.district_of,
        loss.pairing,
    )?;
    let y_hat = model::predict(tape, store, s, scaler)?;
    let reg = semiloss::reg_loss(tape, y_hat, labels, &loss.alpha)?;
    let total = semiloss::semi_info_loss(tape, info, reg, loss.lambda)?;
    Ok(LossTerms { info, reg, total })
}

/// Scalar regression loss over the labeled districts of `labels`.
pub fn reg_loss_value(
    y_hat: &Tensor,
    labels: &DistrictLabels,
    alpha: &[f64; SECTORS],
) -> Result<f64> {
    let mut tape = Tape::new();
    let y = tape.constant(y_hat.clone());
    let r = semiloss::reg_loss(&mut tape, y, labels, alpha)?;
    Ok(tape.scalar(r))
}

pub fn evaluate_splits(
    y_hat: &Tensor,
    labels: &DistrictLabels,
    split: &SplitAssignment,
) -> Result<Vec<SplitMetrics>> {
    Split::ALL
        .iter()
        .map(|&sp| {
            let idx = split.indices(sp);
            let mut sectors = [Metrics {
                mae: 0.0,
                mse: 0.0,
                r2: None,
            }; SECTORS];
            for (s, slot) in sectors.iter_mut().enumerate() {
                let p: Vec<f64> = idx.iter().map(|&j| y_hat.get(j, s)).collect();
                let y: Vec<f64> = idx.iter().map(|&j| labels.values.get(j, s)).collect();
                *slot = metrics(&p, &y)?;
            }
            Ok(SplitMetrics {
                split: sp,
                districts: idx.len(),
                sectors,
            })
        })
        .collect()
}

/// Evaluates a checkpoint on a graph and labels.
pub fn evaluate(
    checkpoint: &Checkpoint,
    graph: &RegionGraph,
    labels: &DistrictLabels,
) -> Result<(model::Inference, Vec<SplitMetrics>)> {
    let inputs = GraphInputs::new(graph, &checkpoint.model)?;
    let out = model::infer(
        &checkpoint.params,
        &checkpoint.model,
        &inputs,
        &checkpoint.scaler,
    )?;
    let splits = evaluate_splits(&out.y_hat, labels, &checkpoint.split)?;
    Ok((out, splits))
}

/// Discriminator scores of clean (positive) and corrupted (negative) nodes
/// against their own district summaries, one corruption drawn from `seed`.
pub fn discriminator_scores(
    checkpoint: &Checkpoint,
    graph: &RegionGraph,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let cfg = &checkpoint.model;
    let inputs = GraphInputs::new(graph, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = &checkpoint.train.corruption;
    let view = semiloss::corrupt_with(graph, c.edge_drop_prob, c.permute_features, &mut rng);
    let corrupt_edges = graph.with_edges(view.edges)?.edge_list();
    let store = &checkpoint.params;
    let mut tape = Tape::new();
    let clean = model::encode(
        &mut tape,
        store,
        cfg,
        &inputs.pse,
        &inputs.features,
        &inputs.edges,
        None,
    )?;
    let noisy = model::encode(
        &mut tape,
        store,
        cfg,
        &inputs.pse,
        &view.features,
        &corrupt_edges,
        None,
    )?;
    let (_, s_disc) =
        semiloss::district_readout(&mut tape, clean.h, &inputs.district_of, inputs.n_districts)?;
    let pos =
        semiloss::own_district_logits(&mut tape, store, clean.h, s_disc, &inputs.district_of)?;
    let neg =
        semiloss::own_district_logits(&mut tape, store, noisy.h, s_disc, &inputs.district_of)?;
    let scores = |t: &Tensor| t.values().iter().map(|&v| sigmoid(v)).collect();
    Ok((scores(tape.value(pos)), scores(tape.value(neg))))
}

/// Probability that a random positive outscores a random negative (ties
/// count half).
pub fn separation_auc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut wins = 0.0;
    for p in pos {
        for n in neg {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (pos.len() * neg.len()).max(1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub outcome: core::result::Result<MetricsReport, String>,
}

/// One independent run per λ; same split and same parameter seed for every
/// cell. Failed cells are reported, not fatal.
pub fn sweep_lambda(
    values: &[f64],
    graph: &RegionGraph,
    labels: &DistrictLabels,
    split: &SplitAssignment,
    model_cfg: &ModelConfig,
    base: &TrainConfig,
) -> Result<Vec<SweepRow>> {
    if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Config(format!("sweep value {bad} outside [0, 1]")));
    }
    Ok(values
        .iter()
        .map(|&lambda| {
            let mut cfg = base.clone();
            cfg.loss.lambda = lambda;
            let outcome = train(graph, labels, split, model_cfg, &cfg)
                .map(|o| o.report)
                .map_err(|e| e.to_string());
            SweepRow { lambda, outcome }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeProbe {
    /// `d × 3` weights (`(d + 1) × 3` with the intercept row last).
    pub weights: Tensor,
    pub fit_intercept: bool,
    /// Per-sector R² on the evaluation districts.
    pub r2: [Option<f64>; SECTORS],
}

/// `W = (SᵀS + γI)⁻¹ Sᵀ y` fit on `fit_rows`, scored on `eval_rows`. With
/// `fit_intercept` the design gains a constant column that is not
/// penalized.
pub fn ridge_probe(
    s: &Tensor,
    labels: &DistrictLabels,
    fit_rows: &[usize],
    eval_rows: &[usize],
    gamma: f64,
    fit_intercept: bool,
) -> Result<RidgeProbe> {
    if !(gamma >= 0.0) {
        return Err(Error::Config(format!(
            "ridge gamma must be nonnegative, got {gamma}"
        )));
    }
    if fit_rows.len() < 2 {
        return Err(Error::Config(
            "ridge probe needs at least two fitting districts".into(),
        ));
    }
    let design = |rows: &[usize]| {
        let x = s.select_rows(rows);
        if fit_intercept {
            Tensor::hcat(&[&x, &Tensor::filled(rows.len(), 1, 1.0)]).expect("row counts match")
        } else {
            x
        }
    };
    let x = design(fit_rows);
    let y = labels.values.select_rows(fit_rows);
    let mut gram = x.transpose().matmul(&x)?;
    let penalized = if fit_intercept {
        x.cols() - 1
    } else {
        x.cols()
    };
    for k in 0..penalized {
        gram.set(k, k, gram.get(k, k) + gamma);
    }
    let rhs = x.transpose().matmul(&y)?;
    let weights = solve_spd(&gram, &rhs).map_err(|e| match e {
        Error::Singular(m) if gamma == 0.0 => {
            Error::Singular(format!("{m}; use a ridge gamma > 0"))
        }
        e => e,
    })?;
    let pred = design(eval_rows).matmul(&weights)?;
    let mut r2 = [None; SECTORS];
    for (s, slot) in r2.iter_mut().enumerate() {
        let p: Vec<f64> = (0..eval_rows.len()).map(|i| pred.get(i, s)).collect();
        let t: Vec<f64> = eval_rows.iter().map(|&j| labels.values.get(j, s)).collect();
        *slot = metrics(&p, &t)?.r2;
    }
    Ok(RidgeProbe {
        weights,
        fit_intercept,
        r2,
    })
}
