//! Shapley attribution and the layer-wise trace-back from a sector head to
//! the input modalities.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gps::{self, EdgeInput};
use crate::graph::{EdgeList, RegionGraph, SECTORS};
use crate::model::GraphInputs;
use crate::params::ParamStore;
use crate::pse;
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::trainer::Checkpoint;

/// Widest game solved by enumeration.
pub const EXACT_MAX_FEATURES: usize = 12;

fn coalition_weights(n: usize) -> Vec<f64> {
    // w(s) = s! (n − s − 1)! / n!
    let mut fact = vec![1.0f64; n + 1];
    for k in 1..=n {
        fact[k] = fact[k - 1] * k as f64;
    }
    (0..n)
        .map(|s| fact[s] * fact[n - s - 1] / fact[n])
        .collect()
}

/// Exact Shapley values by enumerating all `2^n` coalitions; absent
/// features take their background value.
pub fn shapley_exact<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x: &[f64],
    background: &[f64],
) -> Result<Vec<f64>> {
    let n = x.len();
    if background.len() != n {
        return Err(Error::Attribution(format!(
            "{n} features but {} background values",
            background.len()
        )));
    }
    if n > EXACT_MAX_FEATURES {
        return Err(Error::TooManyFeatures {
            max: EXACT_MAX_FEATURES,
            got: n,
        });
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut value = vec![0.0; 1 << n];
    let mut z = vec![0.0; n];
    for (mask, slot) in value.iter_mut().enumerate() {
        for i in 0..n {
            z[i] = if mask >> i & 1 == 1 {
                x[i]
            } else {
                background[i]
            };
        }
        *slot = f(&z);
    }
    let w = coalition_weights(n);
    let mut phi = vec![0.0; n];
    for (i, p) in phi.iter_mut().enumerate() {
        let bit = 1usize << i;
        for mask in 0..(1usize << n) {
            if mask & bit == 0 {
                let s = mask.count_ones() as usize;
                *p += w[s] * (value[mask | bit] - value[mask]);
            }
        }
    }
    Ok(phi)
}

/// Permutation-sampling estimator. Each permutation's marginal
/// contributions telescope to `f(x) − f(background)`, so the average keeps
/// the efficiency identity.
pub fn shapley_sampled<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x: &[f64],
    background: &[f64],
    permutations: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let n = x.len();
    if background.len() != n {
        return Err(Error::Attribution(format!(
            "{n} features but {} background values",
            background.len()
        )));
    }
    if permutations == 0 {
        return Err(Error::Attribution("permutations must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut phi = vec![0.0; n];
    let base = f(background);
    for _ in 0..permutations {
        order.shuffle(&mut rng);
        let mut z = background.to_vec();
        let mut prev = base;
        for &i in &order {
            z[i] = x[i];
            let cur = f(&z);
            phi[i] += cur - prev;
            prev = cur;
        }
    }
    let inv = 1.0 / permutations as f64;
    phi.iter_mut().for_each(|p| *p *= inv);
    Ok(phi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Background {
    Zeros,
    #[default]
    DatasetMean,
}

/// How the selected features of one stage combine into the next stage's
/// target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageWeighting {
    /// `Σ |φ_k| a_k`.
    AbsShap,
    /// `Σ φ_k a_k`.
    SignedShap,
    /// `Σ φ_k / (a_k − b_k) · a_k`, the average slope of the output along
    /// each selected feature; features that sit at their background get
    /// weight 0. Chaining stays exact when the downstream network is
    /// linear.
    #[default]
    Rescale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttributionQuery {
    pub sector: usize,
    pub district: usize,
    pub top_k: usize,
    pub permutations: usize,
    pub background: Background,
    pub seed: u64,
    /// Upper bound on feature groups in node-level stages (at most 12).
    pub max_groups: usize,
    pub weighting: StageWeighting,
}

impl Default for AttributionQuery {
    fn default() -> Self {
        Self {
            sector: 0,
            district: 0,
            top_k: 10,
            permutations: 2000,
            background: Background::DatasetMean,
            seed: 0,
            max_groups: EXACT_MAX_FEATURES,
            weighting: StageWeighting::Rescale,
        }
    }
}

impl AttributionQuery {
    pub fn validate(&self, districts: usize) -> Result<()> {
        if self.sector >= SECTORS {
            return Err(Error::Attribution(format!(
                "sector {} out of range",
                self.sector
            )));
        }
        if self.district >= districts {
            return Err(Error::Attribution(format!(
                "district {} out of range ({districts} districts)",
                self.district
            )));
        }
        if self.top_k == 0 || self.permutations == 0 {
            return Err(Error::Attribution(
                "top_k and permutations must be at least 1".into(),
            ));
        }
        if self.max_groups == 0 || self.max_groups > EXACT_MAX_FEATURES {
            return Err(Error::Attribution(format!(
                "max_groups must lie in 1..={EXACT_MAX_FEATURES}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureShap {
    pub index: usize,
    pub label: String,
    pub shap: f64,
    /// Feature value at the query and under the background.
    pub value: f64,
    pub background: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub layer: String,
    pub estimator: String,
    pub features: Vec<FeatureShap>,
    /// Indices (into `features`) carried to the next stage.
    pub selected: Vec<usize>,
    pub value: f64,
    pub base_value: f64,
    /// `|Σφ − (f(x) − f(background))|`.
    pub efficiency_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityScore {
    pub modality: String,
    pub columns: usize,
    pub mean_abs: f64,
    pub total_abs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub category: String,
    pub shap: f64,
    pub mean_abs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub query: AttributionQuery,
    pub district_id: String,
    pub prediction: f64,
    pub stages: Vec<StageReport>,
    pub modalities: Vec<ModalityScore>,
    pub categories: Vec<CategoryScore>,
}

/// Contiguous column range attributed as one feature.
#[derive(Debug, Clone, PartialEq)]
struct Group {
    label: String,
    modality: usize,
    start: usize,
    end: usize,
}

fn chunk(label: &str, modality: usize, start: usize, width: usize, parts: usize) -> Vec<Group> {
    let parts = parts.clamp(1, width.max(1));
    (0..parts)
        .map(|p| {
            let a = start + p * width / parts;
            let b = start + (p + 1) * width / parts;
            Group {
                label: if parts == 1 {
                    String::from(label)
                } else {
                    format!("{label}[{}..{}]", a - start, b - start)
                },
                modality,
                start: a,
                end: b,
            }
        })
        .collect()
}

/// Splits `total` groups over blocks in proportion to width, one at least
/// each.
fn apportion(widths: &[usize], total: usize) -> Vec<usize> {
    let live: Vec<usize> = (0..widths.len()).filter(|&b| widths[b] > 0).collect();
    let mut out = vec![0; widths.len()];
    if live.is_empty() {
        return out;
    }
    let total = total.max(live.len());
    for &b in &live {
        out[b] = 1;
    }
    let mut left = total - live.len();
    while left > 0 {
        // give the next group to the block with the largest width per group
        let b = *live
            .iter()
            .filter(|&&b| out[b] < widths[b])
            .max_by(|&&a, &&b| {
                let ra = widths[a] as f64 / out[a] as f64;
                let rb = widths[b] as f64 / out[b] as f64;
                ra.total_cmp(&rb).then(b.cmp(&a))
            })
            .unwrap_or(&live[0]);
        if out[b] >= widths[b] {
            break;
        }
        out[b] += 1;
        left -= 1;
    }
    out
}

const MODALITIES: [&str; 4] = ["poi", "svi", "lap_pe", "rwse"];

fn input_groups(poi: &[String], widths: [usize; 4], max_groups: usize) -> Vec<Group> {
    let others = widths[1..].iter().filter(|&&w| w > 0).count();
    let mut groups = Vec::new();
    let mut start = 0;
    if poi.len() + others <= max_groups {
        for (c, name) in poi.iter().enumerate() {
            groups.push(Group {
                label: format!("poi:{name}"),
                modality: 0,
                start: c,
                end: c + 1,
            });
        }
        start = poi.len();
        let counts = apportion(&widths[1..], max_groups - poi.len());
        for (k, &w) in widths[1..].iter().enumerate() {
            if w > 0 {
                groups.extend(chunk(MODALITIES[k + 1], k + 1, start, w, counts[k]));
            }
            start += w;
        }
    } else {
        let counts = apportion(&widths, max_groups);
        for (k, &w) in widths.iter().enumerate() {
            if w > 0 {
                groups.extend(chunk(MODALITIES[k], k, start, w, counts[k]));
            }
            start += w;
        }
    }
    groups
}

fn channel_groups(name: &str, width: usize, max_groups: usize) -> Vec<Group> {
    chunk(name, 0, 0, width, max_groups.min(width))
}

fn column_means(x: &Tensor) -> Vec<f64> {
    let m = x.rows().max(1) as f64;
    let mut out = vec![0.0; x.cols()];
    for i in 0..x.rows() {
        for (o, v) in out.iter_mut().zip(x.row(i)) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|v| *v /= m);
    out
}

fn dense(x: &[f64], w: &Tensor, b: &Tensor, relu: bool) -> Vec<f64> {
    let mut out = b.values().to_vec();
    for (i, xi) in x.iter().enumerate() {
        if *xi == 0.0 {
            continue;
        }
        for (o, wv) in out.iter_mut().zip(w.row(i)) {
            *o += xi * wv;
        }
    }
    if relu {
        out.iter_mut().for_each(|v| *v = v.max(0.0));
    }
    out
}

struct Head<'a> {
    w: [&'a Tensor; 3],
    b: [&'a Tensor; 3],
    mean: f64,
    sd: f64,
}

impl<'a> Head<'a> {
    fn load(store: &'a ParamStore, sector: usize, mean: f64, sd: f64) -> Result<Self> {
        let get = |k: usize, p: &str| store.by_name(&format!("head{sector}.{k}.{p}"));
        Ok(Self {
            w: [get(0, "w")?, get(1, "w")?, get(2, "w")?],
            b: [get(0, "b")?, get(1, "b")?, get(2, "b")?],
            mean,
            sd,
        })
    }

    fn h1(&self, s: &[f64]) -> Vec<f64> {
        dense(s, self.w[0], self.b[0], true)
    }

    fn h2(&self, h1: &[f64]) -> Vec<f64> {
        dense(h1, self.w[1], self.b[1], true)
    }

    fn out(&self, h2: &[f64]) -> f64 {
        self.mean + self.sd * dense(h2, self.w[2], self.b[2], false)[0]
    }
}

/// Weighted objective over the neurons selected at the previous stage.
fn weighted(values: &[f64], targets: &[(usize, f64)]) -> f64 {
    targets.iter().map(|&(k, w)| w * values[k]).sum()
}

fn attribute<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x: &[f64],
    bg: &[f64],
    query: &AttributionQuery,
    salt: u64,
) -> Result<(Vec<f64>, &'static str, f64, f64)> {
    let value = f(x);
    let base = f(bg);
    let (phi, est) = if x.len() <= EXACT_MAX_FEATURES {
        (shapley_exact(&mut f, x, bg)?, "exact")
    } else {
        (
            shapley_sampled(&mut f, x, bg, query.permutations, query.seed ^ salt)?,
            "sampled",
        )
    };
    Ok((phi, est, value, base))
}

#[allow(clippy::too_many_arguments)]
fn stage(
    layer: String,
    labels: Vec<String>,
    (x, bg): (&[f64], &[f64]),
    phi: Vec<f64>,
    est: &str,
    value: f64,
    base: f64,
    top_k: usize,
) -> StageReport {
    let mut order: Vec<usize> = (0..phi.len()).collect();
    order.sort_by(|&a, &b| phi[b].abs().total_cmp(&phi[a].abs()).then(a.cmp(&b)));
    let selected = order.into_iter().take(top_k).collect();
    let gap = (phi.iter().sum::<f64>() - (value - base)).abs();
    StageReport {
        layer,
        estimator: String::from(est),
        features: phi
            .iter()
            .zip(labels)
            .enumerate()
            .map(|(index, (&shap, label))| FeatureShap {
                index,
                label,
                shap,
                value: x[index],
                background: bg[index],
            })
            .collect(),
        selected,
        value,
        base_value: base,
        efficiency_gap: gap,
    }
}

fn targets_of(stage: &StageReport, weighting: StageWeighting) -> Vec<(usize, f64)> {
    stage
        .selected
        .iter()
        .map(|&k| {
            let phi = stage.features[k].shap;
            match weighting {
                StageWeighting::AbsShap => (k, phi.abs()),
                StageWeighting::SignedShap => (k, phi),
                StageWeighting::Rescale => {
                    let f = &stage.features[k];
                    let d = f.value - f.background;
                    let tol = 1e-12 * (1.0 + f.value.abs().max(f.background.abs()));
                    (k, if d.abs() > tol { phi / d } else { 0.0 })
                }
            }
        })
        .collect()
}

/// Writes group values into the district rows of `x`.
fn apply_groups(
    x: &mut Tensor,
    rows: &[usize],
    groups: &[Group],
    z: &[f64],
    actual: &[Vec<f64>],
    bg: &[f64],
) {
    // a group is "present" when its coalition value equals the actual
    // marker 1.0, absent when it equals the background marker 0.0
    for (g, grp) in groups.iter().enumerate() {
        let present = z[g] == 1.0;
        for (r, &i) in rows.iter().enumerate() {
            for c in grp.start..grp.end {
                let v = if present { actual[r][c] } else { bg[c] };
                x.set(i, c, v);
            }
        }
    }
}

/// Mean over district rows of each group's channel sum.
fn group_values(x: &Tensor, rows: &[usize], groups: &[Group]) -> Vec<f64> {
    let inv = 1.0 / rows.len() as f64;
    groups
        .iter()
        .map(|g| {
            rows.iter()
                .map(|&i| x.row(i)[g.start..g.end].iter().sum::<f64>())
                .sum::<f64>()
                * inv
        })
        .collect()
}

/// Group values when every row sits at the background.
fn group_background(bg: &[f64], groups: &[Group]) -> Vec<f64> {
    groups
        .iter()
        .map(|g| bg[g.start..g.end].iter().sum())
        .collect()
}

fn district_mean(x: &Tensor, rows: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; x.cols()];
    for &i in rows {
        for (o, v) in out.iter_mut().zip(x.row(i)) {
            *o += v;
        }
    }
    let inv = 1.0 / rows.len() as f64;
    out.iter_mut().for_each(|v| *v *= inv);
    out
}

fn run_layer(
    store: &ParamStore,
    cfg: &gps::GpsConfig,
    layer: usize,
    x: &Tensor,
    edges: &EdgeList,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let e = EdgeInput::new(&mut tape, edges.clone());
    let out = gps::gps_layer(&mut tape, store, cfg, layer, xv, &e)?;
    Ok(tape.value(out).clone())
}

/// Frozen forward pass of one graph with every node-level representation
/// kept: `u` is the projection input `[X ∥ lap ∥ rwse]`, `reps[0]` is `X₀`
/// and `reps[l + 1]` the output of GPS layer `l`.
struct Forward<'a> {
    checkpoint: &'a Checkpoint,
    edges: EdgeList,
    partition: Vec<Vec<usize>>,
    widths: [usize; 4],
    u: Tensor,
    reps: Vec<Tensor>,
}

impl<'a> Forward<'a> {
    fn new(checkpoint: &'a Checkpoint, graph: &RegionGraph) -> Result<Self> {
        let cfg = &checkpoint.model;
        let store = &checkpoint.params;
        let inputs = GraphInputs::new(graph, cfg)?;
        let mut tape = Tape::new();
        let lap = if cfg.ablation.uses_lap() {
            let v = pse::lap_pe(&mut tape, store, &cfg.pse, &inputs.pse.lap_vectors)?;
            Some(tape.value(v).clone())
        } else {
            None
        };
        let rwse = if cfg.ablation.uses_rwse() {
            let v = pse::rwse_project(&mut tape, store, &inputs.pse.rwse_raw)?;
            Some(tape.value(v).clone())
        } else {
            None
        };
        let layout = graph.layout();
        let widths = [
            layout.poi.len(),
            layout.svi_dim,
            lap.as_ref().map_or(0, Tensor::cols),
            rwse.as_ref().map_or(0, Tensor::cols),
        ];
        let mut parts: Vec<&Tensor> = vec![&inputs.features];
        parts.extend(lap.as_ref());
        parts.extend(rwse.as_ref());
        let u = Tensor::hcat(&parts)?;
        let mut fwd = Self {
            checkpoint,
            edges: inputs.edges,
            partition: graph.subgraph_partition(),
            widths,
            u,
            reps: Vec::new(),
        };
        let x0 = fwd.project(&fwd.u)?;
        fwd.reps.push(x0);
        for l in 0..cfg.gps.layers {
            let next = fwd.layer(l, fwd.reps.last().expect("nonempty"))?;
            fwd.reps.push(next);
        }
        Ok(fwd)
    }

    fn project(&self, u: &Tensor) -> Result<Tensor> {
        let store = &self.checkpoint.params;
        let b = store.by_name("pse.in.b")?;
        let mut x0 = u.matmul(store.by_name("pse.in.w")?)?;
        for i in 0..x0.rows() {
            for (v, bb) in x0.row_mut(i).iter_mut().zip(b.values()) {
                *v += bb;
            }
        }
        Ok(x0)
    }

    fn layer(&self, l: usize, x: &Tensor) -> Result<Tensor> {
        run_layer(
            &self.checkpoint.params,
            &self.checkpoint.model.gps,
            l,
            x,
            &self.edges,
        )
    }

    /// Runs GPS layers `from..` on `x`.
    fn layers_from(&self, from: usize, x: &Tensor) -> Result<Tensor> {
        let mut x = x.clone();
        for l in from..self.checkpoint.model.gps.layers {
            x = self.layer(l, &x)?;
        }
        Ok(x)
    }

    fn h(&self) -> &Tensor {
        self.reps.last().expect("nonempty")
    }

    fn district_embeddings(&self) -> Tensor {
        let h = self.h();
        let mut s = Tensor::zeros(self.partition.len(), h.cols());
        for (j, part) in self.partition.iter().enumerate() {
            s.row_mut(j).copy_from_slice(&district_mean(h, part));
        }
        s
    }

    fn head(&self, sector: usize) -> Result<Head<'a>> {
        let ck = self.checkpoint;
        Head::load(
            &ck.params,
            sector,
            ck.scaler.mean[sector],
            ck.scaler.sd[sector],
        )
    }
}

/// Evaluates `f` on coalitions of `groups` over the district `rows` of
/// `base`; absent groups take `bg`, everything else keeps its actual value.
fn group_game<F>(
    base: &Tensor,
    rows: &[usize],
    groups: &[Group],
    bg: &[f64],
    query: &AttributionQuery,
    salt: u64,
    mut f: F,
) -> Result<(Vec<f64>, &'static str, f64, f64)>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    let actual: Vec<Vec<f64>> = rows.iter().map(|&i| base.row(i).to_vec()).collect();
    let mut scratch = base.clone();
    let mut failed = None;
    let game = |z: &[f64]| -> f64 {
        apply_groups(&mut scratch, rows, groups, z, &actual, bg);
        match f(&scratch) {
            Ok(v) => v,
            Err(e) => {
                failed.get_or_insert(e);
                f64::NAN
            }
        }
    };
    let ones = vec![1.0; groups.len()];
    let zeros = vec![0.0; groups.len()];
    let out = attribute(game, &ones, &zeros, query, salt)?;
    match failed {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

/// Spreads each input group's value evenly over its columns and
/// summarizes per modality and per POI category.
fn input_summary(
    groups: &[Group],
    phi: &[f64],
    widths: [usize; 4],
    poi: &[String],
) -> (Vec<ModalityScore>, Vec<CategoryScore>) {
    let total_cols: usize = widths.iter().sum();
    let mut per_col = vec![0.0; total_cols];
    for (g, grp) in groups.iter().enumerate() {
        let share = phi[g] / (grp.end - grp.start) as f64;
        for v in &mut per_col[grp.start..grp.end] {
            *v = share;
        }
    }
    let mut modalities = Vec::new();
    let mut start = 0;
    for (k, &w) in widths.iter().enumerate() {
        if w > 0 {
            let total_abs: f64 = per_col[start..start + w].iter().map(|v| v.abs()).sum();
            modalities.push(ModalityScore {
                modality: String::from(MODALITIES[k]),
                columns: w,
                mean_abs: total_abs / w as f64,
                total_abs,
            });
        }
        start += w;
    }
    let categories = poi
        .iter()
        .enumerate()
        .map(|(c, name)| CategoryScore {
            category: name.clone(),
            shap: per_col[c],
            mean_abs: per_col[c].abs(),
        })
        .collect();
    (modalities, categories)
}

/// Layer-wise trace-back for one (sector, district) prediction.
///
/// Stages run from the head's second hidden layer down to the model
/// inputs. Each stage attributes the weighted sum of the previous stage's
/// top-k features (see [`StageWeighting`]) to the current layer. Node-level layers
/// are attributed as channel groups restricted to the district's rows;
/// other rows keep their actual values. The input stage groups columns by
/// modality (POI categories individually when they fit).
pub fn traceback(
    checkpoint: &Checkpoint,
    graph: &RegionGraph,
    query: &AttributionQuery,
) -> Result<AttributionReport> {
    query.validate(graph.district_count())?;
    let fwd = Forward::new(checkpoint, graph)?;
    let rows = fwd.partition[query.district].clone();
    let zeros_bg = query.background == Background::Zeros;
    let bg_of = |t: &Tensor| {
        if zeros_bg {
            vec![0.0; t.cols()]
        } else {
            column_means(t)
        }
    };

    let s_all = fwd.district_embeddings();
    let n = s_all.rows();
    let head = fwd.head(query.sector)?;
    let s_d = s_all.row(query.district).to_vec();
    let h1_d = head.h1(&s_d);
    let h2_d = head.h2(&h1_d);
    let prediction = head.out(&h2_d);
    let h1_all = Tensor::from_rows(
        n,
        h1_d.len(),
        (0..n).flat_map(|j| head.h1(s_all.row(j))).collect(),
    );
    let h2_all = Tensor::from_rows(
        n,
        h2_d.len(),
        (0..n).flat_map(|j| head.h2(h1_all.row(j))).collect(),
    );

    let mut stages = Vec::new();
    let names = |p: &str, k: usize| (0..k).map(|i| format!("{p}{i}")).collect::<Vec<_>>();
    let head_name = format!("head{}", query.sector);

    let bg = bg_of(&h2_all);
    let (phi, est, value, base) = attribute(|z| head.out(z), &h2_d, &bg, query, 1)?;
    let labels = names("n", h2_d.len());
    stages.push(stage(
        format!("{head_name}.hidden2"),
        labels,
        (&h2_d, &bg),
        phi,
        est,
        value,
        base,
        query.top_k,
    ));

    let t = targets_of(stages.last().expect("stage"), query.weighting);
    let bg = bg_of(&h1_all);
    let (phi, est, value, base) = attribute(|z| weighted(&head.h2(z), &t), &h1_d, &bg, query, 2)?;
    let labels = names("n", h1_d.len());
    stages.push(stage(
        format!("{head_name}.hidden1"),
        labels,
        (&h1_d, &bg),
        phi,
        est,
        value,
        base,
        query.top_k,
    ));

    let t = targets_of(stages.last().expect("stage"), query.weighting);
    let bg = bg_of(&s_all);
    let (phi, est, value, base) = attribute(|z| weighted(&head.h1(z), &t), &s_d, &bg, query, 3)?;
    let labels = names("c", s_d.len());
    stages.push(stage(
        String::from("district_embedding"),
        labels,
        (&s_d, &bg),
        phi,
        est,
        value,
        base,
        query.top_k,
    ));

    // node-level layers, top GPS layer first; the first of these reads the
    // district embedding channels, later ones the previous stage's groups
    let mut prev_groups: Option<Vec<Group>> = None;
    let readout = |out: &Tensor, prev: &Option<Vec<Group>>, t: &[(usize, f64)]| match prev {
        None => weighted(&district_mean(out, &rows), t),
        Some(pg) => weighted(&group_values(out, &rows, pg), t),
    };
    for l in (0..checkpoint.model.gps.layers).rev() {
        let x_in = &fwd.reps[l];
        let groups = channel_groups(&format!("gps{l}.in"), x_in.cols(), query.max_groups);
        let t = targets_of(stages.last().expect("stage"), query.weighting);
        let bg = bg_of(x_in);
        let (phi, est, value, base) =
            group_game(x_in, &rows, &groups, &bg, query, 10 + l as u64, |x| {
                Ok(readout(&fwd.layer(l, x)?, &prev_groups, &t))
            })?;
        let labels = groups.iter().map(|g| g.label.clone()).collect();
        let (xs, bs) = (
            group_values(x_in, &rows, &groups),
            group_background(&bg, &groups),
        );
        stages.push(stage(
            format!("gps{l}.input"),
            labels,
            (&xs, &bs),
            phi,
            est,
            value,
            base,
            query.top_k,
        ));
        prev_groups = Some(groups);
    }

    let layout = graph.layout();
    let groups = input_groups(&layout.poi, fwd.widths, query.max_groups);
    let t = targets_of(stages.last().expect("stage"), query.weighting);
    let bg = bg_of(&fwd.u);
    let (phi, est, value, base) = group_game(&fwd.u, &rows, &groups, &bg, query, 99, |u| {
        Ok(readout(&fwd.project(u)?, &prev_groups, &t))
    })?;
    let labels = groups.iter().map(|g| g.label.clone()).collect();
    let (xs, bs) = (
        group_values(&fwd.u, &rows, &groups),
        group_background(&bg, &groups),
    );
    stages.push(stage(
        String::from("input"),
        labels,
        (&xs, &bs),
        phi.clone(),
        est,
        value,
        base,
        query.top_k,
    ));
    let (modalities, categories) = input_summary(&groups, &phi, fwd.widths, &layout.poi);

    Ok(AttributionReport {
        query: query.clone(),
        district_id: graph.district_ids()[query.district].clone(),
        prediction,
        stages,
        modalities,
        categories,
    })
}

/// Single game from the input groups of the district's rows straight to
/// the prediction, through every layer. A reference for the trace-back.
pub fn direct_input_attribution(
    checkpoint: &Checkpoint,
    graph: &RegionGraph,
    query: &AttributionQuery,
) -> Result<AttributionReport> {
    query.validate(graph.district_count())?;
    let fwd = Forward::new(checkpoint, graph)?;
    let rows = fwd.partition[query.district].clone();
    let head = fwd.head(query.sector)?;
    let predict = |h: &Tensor| head.out(&head.h2(&head.h1(&district_mean(h, &rows))));
    let prediction = predict(fwd.h());
    let layout = graph.layout();
    let groups = input_groups(&layout.poi, fwd.widths, query.max_groups);
    let bg = if query.background == Background::Zeros {
        vec![0.0; fwd.u.cols()]
    } else {
        column_means(&fwd.u)
    };
    let (phi, est, value, base) = group_game(&fwd.u, &rows, &groups, &bg, query, 99, |u| {
        Ok(predict(&fwd.layers_from(0, &fwd.project(u)?)?))
    })?;
    let labels = groups.iter().map(|g| g.label.clone()).collect();
    let (modalities, categories) = input_summary(&groups, &phi, fwd.widths, &layout.poi);
    let (xs, bs) = (
        group_values(&fwd.u, &rows, &groups),
        group_background(&bg, &groups),
    );
    let input = stage(
        String::from("input"),
        labels,
        (&xs, &bs),
        phi,
        est,
        value,
        base,
        query.top_k,
    );
    Ok(AttributionReport {
        query: query.clone(),
        district_id: graph.district_ids()[query.district].clone(),
        prediction,
        stages: vec![input],
        modalities,
        categories,
    })
}
