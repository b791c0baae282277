//! JSON and CSV artifacts: attribution reports, training history, metrics
//! and the λ-sweep table.

use std::path::Path;

use regiongnn_core::explain::AttributionReport;
use regiongnn_core::trainer::{EpochRecord, Metrics, MetricsReport, SplitMetrics, SweepRow};
use regiongnn_core::{Split, Tensor, SECTOR_NAMES};

use crate::error::Result;
use crate::files::{create_dir, write_json, write_rows};

pub const REPORT_FILE: &str = "report.json";
pub const NEURONS_FILE: &str = "shap_neurons.csv";
pub const IMPORTANCE_FILE: &str = "shap_importance.csv";

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

/// `report.json`, plus `shap_neurons.csv` (every stage feature) and
/// `shap_importance.csv` (modalities and POI categories), both sorted by
/// descending `|φ|`. An empty trace yields header-only tables.
pub fn emit_report(report: &AttributionReport, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    write_json(&dir.join(REPORT_FILE), report)?;

    let mut rows: Vec<(usize, &str, usize, &str, f64, bool)> = Vec::new();
    for (s, stage) in report.stages.iter().enumerate() {
        for f in &stage.features {
            let selected = stage.selected.contains(&f.index);
            rows.push((
                s,
                stage.layer.as_str(),
                f.index,
                f.label.as_str(),
                f.shap,
                selected,
            ));
        }
    }
    rows.sort_by(|a, b| {
        b.4.abs()
            .total_cmp(&a.4.abs())
            .then(a.0.cmp(&b.0))
            .then(a.2.cmp(&b.2))
    });
    write_rows(
        &dir.join(NEURONS_FILE),
        &strings(&["layer", "neuron", "label", "shap", "selected"]),
        rows.into_iter().map(|(_, layer, idx, label, shap, sel)| {
            vec![
                layer.to_string(),
                idx.to_string(),
                label.to_string(),
                shap.to_string(),
                sel.to_string(),
            ]
        }),
    )?;

    let mut imp: Vec<(&str, &str, f64)> = report
        .modalities
        .iter()
        .map(|m| ("modality", m.modality.as_str(), m.mean_abs))
        .chain(
            report
                .categories
                .iter()
                .map(|c| ("category", c.category.as_str(), c.mean_abs)),
        )
        .collect();
    imp.sort_by(|a, b| b.2.total_cmp(&a.2));
    write_rows(
        &dir.join(IMPORTANCE_FILE),
        &strings(&["kind", "name", "mean_abs_shap"]),
        imp.into_iter()
            .map(|(k, n, v)| vec![k.to_string(), n.to_string(), v.to_string()]),
    )
}

/// `epoch,info,reg,total,val_reg` per epoch.
pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    write_rows(
        path,
        &strings(&["epoch", "info", "reg", "total", "val_reg"]),
        history.iter().map(|r| {
            vec![
                r.epoch.to_string(),
                r.info.to_string(),
                r.reg.to_string(),
                r.total.to_string(),
                r.val_reg.map(|v| v.to_string()).unwrap_or_default(),
            ]
        }),
    )
}

fn metric_cells(m: &Metrics) -> [String; 3] {
    [
        m.r2.map(|v| v.to_string()).unwrap_or_default(),
        m.mae.to_string(),
        m.mse.to_string(),
    ]
}

fn metric_header() -> Vec<String> {
    SECTOR_NAMES
        .iter()
        .flat_map(|s| ["r2", "mae", "mse"].map(|m| format!("{s}_{m}")))
        .collect()
}

pub fn write_metrics(path: &Path, report: &MetricsReport) -> Result<()> {
    #[derive(serde::Serialize)]
    struct Out<'a> {
        splits: &'a [SplitMetrics],
        best_epoch: usize,
        epochs_run: usize,
        best_val_reg: Option<f64>,
    }
    write_json(
        path,
        &Out {
            splits: &report.splits,
            best_epoch: report.best_epoch,
            epochs_run: report.epochs_run,
            best_val_reg: report.best_val_reg,
        },
    )
}

/// One row per λ with test-split metrics per sector; failed cells keep
/// their row with the error text and empty metrics.
pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut header = strings(&["lambda", "status"]);
    header.extend(metric_header());
    header.push("error".into());
    write_rows(
        path,
        &header,
        rows.iter().map(|row| {
            let mut rec = vec![row.lambda.to_string()];
            match &row.outcome {
                Ok(report) => {
                    rec.push("ok".into());
                    match report.split(Split::Test) {
                        Some(t) => rec.extend(t.sectors.iter().flat_map(metric_cells)),
                        None => rec.extend(std::iter::repeat_n(String::new(), 9)),
                    }
                    rec.push(String::new());
                }
                Err(e) => {
                    rec.push("failed".into());
                    rec.extend(std::iter::repeat_n(String::new(), 9));
                    rec.push(e.clone());
                }
            }
            rec
        }),
    )
}

/// `district_id,split,<sector>_pred,<sector>_true,labeled` per district.
pub fn write_predictions(
    path: &Path,
    district_ids: &[String],
    split_of: &[Split],
    y_hat: &Tensor,
    truth: Option<(&Tensor, &[bool])>,
) -> Result<()> {
    let mut header = strings(&["district_id", "split"]);
    for s in SECTOR_NAMES {
        header.push(format!("{s}_pred"));
        header.push(format!("{s}_true"));
    }
    write_rows(
        path,
        &header,
        (0..y_hat.rows()).map(|j| {
            let mut rec = vec![district_ids[j].clone(), split_of[j].name().to_string()];
            for s in 0..SECTOR_NAMES.len() {
                rec.push(y_hat.get(j, s).to_string());
                rec.push(match truth {
                    Some((t, mask)) if mask[j] => t.get(j, s).to_string(),
                    _ => String::new(),
                });
            }
            rec
        }),
    )
}
