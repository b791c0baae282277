//! Commands and run directories.
//!
//! Every command resolves its configuration, writes `resolved-config.json`
//! and `run.log` into the run directory, and then its own artifacts:
//!
//! | command   | artifacts |
//! |-----------|-----------|
//! | `synth`   | graph snapshot with `labels.csv` |
//! | `ingest`  | graph snapshot (labels when the manifest names them), `column-stats.json` when standardizing |
//! | `train`   | `checkpoint/`, `metrics.json`, `history.csv`, `predictions.csv` |
//! | `eval`    | `metrics.json`, `predictions.csv`, `probe.json`, `embeddings.csv`, `encodings/` |
//! | `sweep`   | `sweep.csv` |
//! | `explain` | `report.json`, `shap_neurons.csv`, `shap_importance.csv` |

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use regiongnn_core::explain::traceback;
use regiongnn_core::model::ModelConfig;
use regiongnn_core::pse::{self, PseInputs};
use regiongnn_core::trainer::{self, Checkpoint};
use regiongnn_core::{
    split_districts, synth_region, DistrictLabels, ParamStore, RegionGraph, Split, Tape, Tensor,
};

use crate::config::{resolve_config, RunConfig};
use crate::dataset::{ingest, Manifest};
use crate::error::{Error, Result};
use crate::files::{create_dir, write_json, write_matrix};
use crate::{checkpoint, report, snapshot};

pub const CONFIG_FILE: &str = "resolved-config.json";
pub const LOG_FILE: &str = "run.log";

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Synth,
    Ingest { manifest: PathBuf },
    Train { data: PathBuf },
    Eval { data: PathBuf, checkpoint: PathBuf },
    Sweep { data: PathBuf },
    Explain { data: PathBuf, checkpoint: PathBuf },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Ingest { .. } => "ingest",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Sweep { .. } => "sweep",
            Command::Explain { .. } => "explain",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Invocation {
    pub command: Command,
    pub config: Option<PathBuf>,
    /// `key=value` overrides in command-line order.
    pub overrides: Vec<(String, String)>,
    pub out: PathBuf,
}

/// Append-only `run.log` with elapsed seconds on every line.
struct RunLog {
    file: File,
    path: PathBuf,
    start: Instant,
}

impl RunLog {
    fn create(path: PathBuf) -> Result<Self> {
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            file,
            path,
            start: Instant::now(),
        })
    }

    fn line(&mut self, msg: impl AsRef<str>) -> Result<()> {
        let t = self.start.elapsed().as_secs_f64();
        writeln!(self.file, "[{t:9.3}s] {}", msg.as_ref()).map_err(|e| Error::io(&self.path, e))
    }
}

/// Runs one command; returns the artifact paths it wrote.
pub fn run(inv: &Invocation) -> Result<Vec<PathBuf>> {
    let cfg = resolve_config(inv.config.as_deref(), &inv.overrides)?;
    create_dir(&inv.out)?;
    write_json(&inv.out.join(CONFIG_FILE), &cfg.as_json())?;
    let mut log = RunLog::create(inv.out.join(LOG_FILE))?;
    log.line(format!("command {}", inv.command.name()))?;
    if let Some(p) = &inv.config {
        log.line(format!("config {}", p.display()))?;
    }
    for (k, v) in &inv.overrides {
        log.line(format!("override {k}={v}"))?;
    }
    let written = match &inv.command {
        Command::Synth => synth(&cfg, &inv.out, &mut log),
        Command::Ingest { manifest } => ingest_cmd(manifest, &inv.out, &mut log),
        Command::Train { data } => train(&cfg, data, &inv.out, &mut log),
        Command::Eval { data, checkpoint } => eval(&cfg, data, checkpoint, &inv.out, &mut log),
        Command::Sweep { data } => sweep(&cfg, data, &inv.out, &mut log),
        Command::Explain { data, checkpoint } => {
            explain(&cfg, data, checkpoint, &inv.out, &mut log)
        }
    };
    match &written {
        Ok(files) => log.line(format!("done, {} artifacts", files.len()))?,
        Err(e) => log.line(format!("failed: {e}"))?,
    }
    written
}

fn snapshot_files(out: &Path, labels: bool) -> Vec<PathBuf> {
    let mut v = vec![
        out.join(snapshot::GRAPH_FILE),
        out.join(snapshot::FEATURES_FILE),
        out.join(snapshot::EDGES_FILE),
    ];
    if labels {
        v.push(out.join(snapshot::LABELS_FILE));
    }
    v
}

fn synth(cfg: &RunConfig, out: &Path, log: &mut RunLog) -> Result<Vec<PathBuf>> {
    let (graph, labels) = synth_region(&cfg.synth())?;
    log.line(format!(
        "synthetic region: {} nodes, {} districts, {} directed edges",
        graph.node_count(),
        graph.district_count(),
        graph.directed_edge_count()
    ))?;
    snapshot::save(out, &graph, Some(&labels))?;
    Ok(snapshot_files(out, true))
}

fn ingest_cmd(manifest: &Path, out: &Path, log: &mut RunLog) -> Result<Vec<PathBuf>> {
    let m = Manifest::load(manifest)?;
    let data = ingest(&m)?;
    log.line(format!(
        "ingested {} subdistricts, {} districts, {} directed edges",
        data.graph.node_count(),
        data.graph.district_count(),
        data.graph.directed_edge_count()
    ))?;
    snapshot::save(out, &data.graph, data.labels.as_ref())?;
    let mut files = snapshot_files(out, data.labels.is_some());
    if let Some(stats) = &data.stats {
        let p = out.join("column-stats.json");
        write_json(&p, stats)?;
        files.push(p);
    }
    Ok(files)
}

fn load_supervised(data: &Path) -> Result<(RegionGraph, DistrictLabels)> {
    let graph = snapshot::load_graph(data)?;
    let labels = snapshot::load_labels(data, &graph)?;
    Ok((graph, labels))
}

fn train(cfg: &RunConfig, data: &Path, out: &Path, log: &mut RunLog) -> Result<Vec<PathBuf>> {
    let (graph, labels) = load_supervised(data)?;
    let split = split_districts(graph.district_count(), cfg.split_ratios(), cfg.seed())?;
    let model = cfg.model();
    log.line(format!(
        "training {} parameters for up to {} epochs, lambda {}",
        model.param_specs(graph.features().cols()).len(),
        cfg.train().epochs,
        cfg.lambda()
    ))?;
    let outcome = trainer::train(&graph, &labels, &split, &model, &cfg.train())?;
    let r = &outcome.report;
    log.line(format!(
        "ran {} epochs, best epoch {}",
        r.epochs_run, r.best_epoch
    ))?;
    let ckpt_dir = out.join("checkpoint");
    checkpoint::save(&ckpt_dir, &outcome.checkpoint)?;
    let files = vec![
        ckpt_dir.join(checkpoint::MODEL_FILE),
        ckpt_dir.join(checkpoint::PARAMS_FILE),
        ckpt_dir.join(checkpoint::BLOB_FILE),
        out.join("metrics.json"),
        out.join("history.csv"),
        out.join("predictions.csv"),
    ];
    report::write_metrics(&files[3], r)?;
    report::write_history(&files[4], &r.history)?;
    let (inference, _) = trainer::evaluate(&outcome.checkpoint, &graph, &labels)?;
    report::write_predictions(
        &files[5],
        graph.district_ids(),
        &split.split_of,
        &inference.y_hat,
        Some((&labels.values, &labels.labeled_mask)),
    )?;
    Ok(files)
}

fn check_feature_dim(ckpt: &Checkpoint, graph: &RegionGraph, path: &Path) -> Result<()> {
    if ckpt.feature_dim != graph.features().cols()
        || ckpt.split.split_of.len() != graph.district_count()
    {
        return Err(Error::format(
            path,
            format!(
                "checkpoint expects {} features and {} districts, graph has {} and {}",
                ckpt.feature_dim,
                ckpt.split.split_of.len(),
                graph.features().cols(),
                graph.district_count()
            ),
        ));
    }
    Ok(())
}

/// Raw and projected positional/structural encodings of every node.
pub fn encodings(
    store: &ParamStore,
    model: &ModelConfig,
    graph: &RegionGraph,
) -> Result<Vec<(&'static str, Tensor)>> {
    let inputs = PseInputs::compute(graph, &model.pse)?;
    let mut out = vec![
        ("lap_vectors", inputs.lap_vectors.clone()),
        ("rwse_raw", inputs.rwse_raw.clone()),
    ];
    let mut tape = Tape::new();
    if model.ablation.uses_lap() {
        let v = pse::lap_pe(&mut tape, store, &model.pse, &inputs.lap_vectors)?;
        out.push(("lap_pe", tape.value(v).clone()));
    }
    if model.ablation.uses_rwse() {
        let v = pse::rwse_project(&mut tape, store, &inputs.rwse_raw)?;
        out.push(("rwse_pe", tape.value(v).clone()));
    }
    Ok(out)
}

fn eval(
    cfg: &RunConfig,
    data: &Path,
    ckpt_dir: &Path,
    out: &Path,
    log: &mut RunLog,
) -> Result<Vec<PathBuf>> {
    let (graph, labels) = load_supervised(data)?;
    let ckpt = checkpoint::load(ckpt_dir)?;
    check_feature_dim(&ckpt, &graph, ckpt_dir)?;
    let (inference, splits) = trainer::evaluate(&ckpt, &graph, &labels)?;
    let mut files = Vec::new();

    let p = out.join("metrics.json");
    write_json(&p, &splits)?;
    files.push(p);
    let p = out.join("predictions.csv");
    report::write_predictions(
        &p,
        graph.district_ids(),
        &ckpt.split.split_of,
        &inference.y_hat,
        Some((&labels.values, &labels.labeled_mask)),
    )?;
    files.push(p);

    let cols = |n: usize, p: &str| (0..n).map(|k| format!("{p}{k}")).collect::<Vec<_>>();
    let p = out.join("embeddings.csv");
    write_matrix(
        &p,
        "district_id",
        graph.district_ids(),
        &cols(inference.s.cols(), "s"),
        &inference.s,
    )?;
    files.push(p);

    let fit = ckpt.split.indices(Split::Train);
    let held = ckpt.split.indices(Split::Test);
    let fit: Vec<usize> = fit
        .into_iter()
        .filter(|&j| labels.labeled_mask[j])
        .collect();
    let held: Vec<usize> = held
        .into_iter()
        .filter(|&j| labels.labeled_mask[j])
        .collect();
    let probe = trainer::ridge_probe(&inference.s, &labels, &fit, &held, cfg.probe_gamma(), true);
    let p = out.join("probe.json");
    match probe {
        Ok(probe) => {
            log.line(format!("ridge probe test R²: {:?}", probe.r2))?;
            write_json(
                &p,
                &serde_json::json!({ "gamma": cfg.probe_gamma(), "fit_districts": fit.len(), "test_districts": held.len(), "r2": probe.r2 }),
            )?;
        }
        Err(e) => {
            log.line(format!("ridge probe skipped: {e}"))?;
            write_json(
                &p,
                &serde_json::json!({ "gamma": cfg.probe_gamma(), "error": e.to_string() }),
            )?;
        }
    }
    files.push(p);

    let enc_dir = out.join("encodings");
    create_dir(&enc_dir)?;
    for (name, t) in encodings(&ckpt.params, &ckpt.model, &graph)? {
        let p = enc_dir.join(format!("{name}.csv"));
        write_matrix(
            &p,
            "subdistrict_id",
            graph.node_ids(),
            &cols(t.cols(), "c"),
            &t,
        )?;
        files.push(p);
    }
    for s in &splits {
        log.line(format!(
            "{} R²: {:?}",
            s.split.name(),
            s.sectors.map(|m| m.r2)
        ))?;
    }
    Ok(files)
}

fn sweep(cfg: &RunConfig, data: &Path, out: &Path, log: &mut RunLog) -> Result<Vec<PathBuf>> {
    let (graph, labels) = load_supervised(data)?;
    let split = split_districts(graph.district_count(), cfg.split_ratios(), cfg.seed())?;
    let values = cfg.sweep_lambdas();
    log.line(format!("sweeping lambda over {values:?}"))?;
    let rows = trainer::sweep_lambda(&values, &graph, &labels, &split, &cfg.model(), &cfg.train())?;
    for row in &rows {
        match &row.outcome {
            Ok(r) => log.line(format!("lambda {}: {} epochs", row.lambda, r.epochs_run))?,
            Err(e) => log.line(format!("lambda {}: failed: {e}", row.lambda))?,
        }
    }
    let p = out.join("sweep.csv");
    report::write_sweep(&p, &rows)?;
    Ok(vec![p])
}

fn explain(
    cfg: &RunConfig,
    data: &Path,
    ckpt_dir: &Path,
    out: &Path,
    log: &mut RunLog,
) -> Result<Vec<PathBuf>> {
    let graph = snapshot::load_graph(data)?;
    let ckpt = checkpoint::load(ckpt_dir)?;
    check_feature_dim(&ckpt, &graph, ckpt_dir)?;
    let query = cfg.query();
    let rep = traceback(&ckpt, &graph, &query)?;
    for s in &rep.stages {
        log.line(format!(
            "{}: {} features ({}), efficiency gap {:e}",
            s.layer,
            s.features.len(),
            s.estimator,
            s.efficiency_gap
        ))?;
    }
    report::emit_report(&rep, out)?;
    Ok(vec![
        out.join(report::REPORT_FILE),
        out.join(report::NEURONS_FILE),
        out.join(report::IMPORTANCE_FILE),
    ])
}
