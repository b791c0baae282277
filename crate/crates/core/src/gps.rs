//! GPS layers: neighbor attention with edge features plus global attention,
//! fused by an MLP, and the per-sector prediction heads.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EdgeList, SECTORS};
use crate::nn;
use crate::params::{ParamSpec, ParamStore};
use crate::synth::standard_normal;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const LEAKY_SLOPE: f64 = 0.2;
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    #[default]
    Exact,
    Kernelized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GpsConfig {
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub attention: AttentionKind,
    pub kernel_features: usize,
    /// Seed of the fixed random features in kernelized mode.
    pub kernel_seed: u64,
    pub residual: bool,
    pub layer_norm: bool,
    /// Linear layers in the fusion MLP.
    pub fusion_mlp_layers: usize,
    /// Width of both hidden layers in each prediction head.
    pub head_hidden: usize,
}

impl Default for GpsConfig {
    fn default() -> Self {
        Self {
            embed_dim: 512,
            layers: 5,
            heads: 8,
            attention: AttentionKind::Exact,
            kernel_features: 256,
            kernel_seed: 0,
            residual: true,
            layer_norm: true,
            fusion_mlp_layers: 2,
            head_hidden: 64,
        }
    }
}

impl GpsConfig {
    /// Residual off, normalization off.
    pub fn literal(self) -> Self {
        Self {
            residual: false,
            layer_norm: false,
            ..self
        }
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.embed_dim == 0 || self.heads == 0 {
            return bad("model.embed_dim and model.heads must be at least 1".into());
        }
        if !self.embed_dim.is_multiple_of(self.heads) {
            return bad(format!(
                "model.embed_dim ({}) must be divisible by model.heads ({})",
                self.embed_dim, self.heads
            ));
        }
        if self.kernel_features == 0 {
            return bad("model.kernel_features must be at least 1".into());
        }
        if self.fusion_mlp_layers == 0 || self.head_hidden == 0 {
            return bad("model.fusion_layers and model.head_hidden must be at least 1".into());
        }
        Ok(())
    }
}

fn layer_name(l: usize, part: &str) -> String {
    format!("gps{l}.{part}")
}

pub fn mpnn_specs(prefix: &str, d: usize, heads: usize) -> Vec<ParamSpec> {
    let dh = d / heads;
    let mut v = vec![ParamSpec::weight(format!("{prefix}.w"), d, d)];
    for h in 0..heads {
        v.push(ParamSpec::weight(format!("{prefix}.a_dst{h}"), dh, 1));
        v.push(ParamSpec::weight(format!("{prefix}.a_src{h}"), dh, 1));
        v.push(ParamSpec::weight(format!("{prefix}.u{h}"), 2, 1));
    }
    v.extend(nn::linear_specs(&format!("{prefix}.mix"), d, d, true));
    v
}

pub fn attention_specs(prefix: &str, d: usize) -> Vec<ParamSpec> {
    let mut v = Vec::new();
    for p in ["q", "k", "v"] {
        v.extend(nn::linear_specs(&format!("{prefix}.{p}"), d, d, false));
    }
    v.extend(nn::linear_specs(&format!("{prefix}.o"), d, d, true));
    v
}

pub fn gps_specs(cfg: &GpsConfig) -> Vec<ParamSpec> {
    let d = cfg.embed_dim;
    let mut v = Vec::new();
    for l in 0..cfg.layers {
        v.extend(mpnn_specs(&layer_name(l, "mpnn"), d, cfg.heads));
        v.extend(attention_specs(&layer_name(l, "attn"), d));
        let mut dims = vec![d];
        dims.extend(core::iter::repeat_n(2 * d, cfg.fusion_mlp_layers - 1));
        dims.push(d);
        v.extend(nn::mlp_specs(&layer_name(l, "mlp"), &dims));
    }
    v
}

pub fn head_specs(cfg: &GpsConfig) -> Vec<ParamSpec> {
    let h = cfg.head_hidden;
    (0..SECTORS)
        .flat_map(|s| nn::mlp_specs(&format!("head{s}"), &[cfg.embed_dim, h, h, 1]))
        .collect()
}

/// Edge structure prepared for the tape: indices plus the `E × 2` features.
pub struct EdgeInput {
    pub list: EdgeList,
    pub features: Var,
}

impl EdgeInput {
    pub fn new(tape: &mut Tape, list: EdgeList) -> Self {
        let features = tape.constant(list.features.clone());
        Self { list, features }
    }
}

/// Softmax-normalized coefficients `β` of head `h` over each receiver's
/// neighbors, in edge-list order.
fn head_coefficients(
    tape: &mut Tape,
    store: &ParamStore,
    prefix: &str,
    h: usize,
    z: Var,
    edges: &EdgeInput,
) -> Result<Var> {
    let m = tape.value(z).rows();
    let a_dst = tape.param(store, store.id(&format!("{prefix}.a_dst{h}"))?);
    let a_src = tape.param(store, store.id(&format!("{prefix}.a_src{h}"))?);
    let u = tape.param(store, store.id(&format!("{prefix}.u{h}"))?);
    let f_dst = tape.matmul(z, a_dst)?;
    let f_src = tape.matmul(z, a_src)?;
    let g_dst = tape.gather_rows(f_dst, edges.list.recv.clone())?;
    let g_src = tape.gather_rows(f_src, edges.list.send.clone())?;
    let fe = tape.matmul(edges.features, u)?;
    let o = tape.add(g_dst, g_src)?;
    let o = tape.add(o, fe)?;
    let o = tape.leaky_relu(o, LEAKY_SLOPE);
    tape.segment_softmax(o, edges.list.recv.clone(), m)
}

fn head_slice(tape: &mut Tape, x: Var, heads: usize, h: usize) -> Result<Var> {
    if heads == 1 {
        return Ok(x);
    }
    let dh = tape.value(x).cols() / heads;
    tape.slice_cols(x, h * dh, (h + 1) * dh)
}

/// Multi-head neighbor attention:
/// `o_ij = LeakyReLU(a_dstᵀ W h_i + a_srcᵀ W h_j + uᵀ e_ij)`,
/// `β = softmax over N(i)`, `h′_i = ReLU(Σ_j β_ij W h_j)` per head, then
/// heads are concatenated and mixed linearly.
pub fn mpnn_attention(
    tape: &mut Tape,
    store: &ParamStore,
    prefix: &str,
    x: Var,
    edges: &EdgeInput,
    heads: usize,
) -> Result<Var> {
    let m = tape.value(x).rows();
    let dh = tape.value(x).cols() / heads;
    let w = tape.param(store, store.id(&format!("{prefix}.w"))?);
    let wx = tape.matmul(x, w)?;
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        if edges.list.is_empty() {
            outs.push(tape.constant(Tensor::zeros(m, dh)));
            continue;
        }
        let z = head_slice(tape, wx, heads, h)?;
        let beta = head_coefficients(tape, store, prefix, h, z, edges)?;
        let msg = tape.gather_rows(z, edges.list.send.clone())?;
        let msg = tape.mul_col(msg, beta)?;
        let agg = tape.scatter_add_rows(msg, edges.list.recv.clone(), m)?;
        outs.push(tape.relu(agg));
    }
    let cat = if heads == 1 {
        outs[0]
    } else {
        tape.concat(&outs)?
    };
    nn::linear(tape, store, &format!("{prefix}.mix"), cat)
}

/// Attention coefficients `β` of one head, in edge-list order.
pub fn mpnn_coefficients(
    store: &ParamStore,
    prefix: &str,
    x: &Tensor,
    edges: &EdgeList,
    heads: usize,
    head: usize,
) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let edges = EdgeInput::new(&mut tape, edges.clone());
    let w = tape.param(store, store.id(&format!("{prefix}.w"))?);
    let wx = tape.matmul(xv, w)?;
    let z = head_slice(&mut tape, wx, heads, head)?;
    let beta = head_coefficients(&mut tape, store, prefix, head, z, &edges)?;
    Ok(tape.value(beta).values().to_vec())
}

/// Orthogonal Gaussian projection rows (`features × dim`): square blocks
/// orthonormalized by Gram-Schmidt, each row rescaled to a chi-distributed
/// norm.
pub fn orthogonal_features(features: usize, dim: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Tensor::zeros(features, dim);
    let mut row = 0;
    while row < features {
        let block: Vec<Vec<f64>> = (0..dim)
            .map(|_| (0..dim).map(|_| standard_normal(&mut rng)).collect())
            .collect();
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(dim);
        for v in &block {
            let mut q = v.clone();
            for b in &basis {
                let p: f64 = q.iter().zip(b).map(|(x, y)| x * y).sum();
                q.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
            let norm = libm::sqrt(q.iter().map(|x| x * x).sum::<f64>());
            q.iter_mut().for_each(|x| *x /= norm);
            basis.push(q);
        }
        for q in basis {
            if row == features {
                break;
            }
            let chi = libm::sqrt(
                (0..dim)
                    .map(|_| {
                        let g = standard_normal(&mut rng);
                        g * g
                    })
                    .sum::<f64>(),
            );
            for (c, v) in q.iter().enumerate() {
                out.set(row, c, chi * v);
            }
            row += 1;
        }
    }
    out
}

/// `exp(ω·x − |x|²/2)` feature map with a stabilizing shift. `per_row`
/// subtracts each row's maximum (cancels in query normalization), otherwise
/// one global maximum (cancels for keys).
fn positive_features(tape: &mut Tape, x: Var, omega: Var, per_row: bool) -> Result<Var> {
    let proj = tape.matmul_t(x, omega)?;
    let sq = tape.mul(x, x)?;
    let half_norm = tape.row_sum(sq);
    let half_norm = tape.scale(half_norm, 0.5);
    let logits = {
        let neg = tape.neg(half_norm);
        tape.add_col(proj, neg)?
    };
    let lv = tape.value(logits);
    let shifted = if per_row {
        let shift: Vec<f64> = (0..lv.rows())
            .map(|i| -lv.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let c = tape.constant(Tensor::from_rows(shift.len(), 1, shift));
        tape.add_col(logits, c)?
    } else {
        let top = lv
            .values()
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        tape.add_scalar(logits, -top)
    };
    Ok(tape.exp(shifted))
}

/// Multi-head attention over every node pair, exact (scaled dot product)
/// or kernelized with positive orthogonal random features.
pub fn global_attention(
    tape: &mut Tape,
    store: &ParamStore,
    prefix: &str,
    x: Var,
    cfg: &GpsConfig,
    layer: usize,
) -> Result<Var> {
    let d = tape.value(x).cols();
    let heads = cfg.heads;
    let dh = d / heads;
    let q = nn::linear(tape, store, &format!("{prefix}.q"), x)?;
    let k = nn::linear(tape, store, &format!("{prefix}.k"), x)?;
    let v = nn::linear(tape, store, &format!("{prefix}.v"), x)?;
    let scale = 1.0 / libm::sqrt(dh as f64);
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = head_slice(tape, q, heads, h)?;
        let kh = head_slice(tape, k, heads, h)?;
        let vh = head_slice(tape, v, heads, h)?;
        let out = match cfg.attention {
            AttentionKind::Exact => {
                let s = tape.matmul_t(qh, kh)?;
                let s = tape.scale(s, scale);
                let p = tape.softmax_rows(s);
                tape.matmul(p, vh)?
            }
            AttentionKind::Kernelized => {
                if cfg.kernel_features == 0 {
                    return Err(Error::Config("kernel_features must be at least 1".into()));
                }
                let seed = cfg.kernel_seed ^ ((layer as u64) << 32) ^ (h as u64);
                let omega = tape.constant(orthogonal_features(cfg.kernel_features, dh, seed));
                let r = libm::sqrt(libm::sqrt(dh as f64));
                let qs = tape.scale(qh, 1.0 / r);
                let ks = tape.scale(kh, 1.0 / r);
                let phi_q = positive_features(tape, qs, omega, true)?;
                let phi_k = positive_features(tape, ks, omega, false)?;
                let phi_kt = tape.transpose(phi_k);
                let kv = tape.matmul(phi_kt, vh)?;
                let num = tape.matmul(phi_q, kv)?;
                let ksum = tape.mean_over_rows(phi_k);
                let den = tape.matmul_t(phi_q, ksum)?;
                let m = tape.value(x).rows() as f64;
                let den = tape.scale(den, m);
                let inv = tape.recip(den);
                tape.mul_col(num, inv)?
            }
        };
        outs.push(out);
    }
    let cat = if heads == 1 {
        outs[0]
    } else {
        tape.concat(&outs)?
    };
    nn::linear(tape, store, &format!("{prefix}.o"), cat)
}

/// `X^{ℓ+1} = MLP(X_mpnn + X_tf [+ X^ℓ])`, optionally normalized per node.
pub fn gps_layer(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &GpsConfig,
    layer: usize,
    x: Var,
    edges: &EdgeInput,
) -> Result<Var> {
    let mp = mpnn_attention(tape, store, &layer_name(layer, "mpnn"), x, edges, cfg.heads)?;
    let tf = global_attention(tape, store, &layer_name(layer, "attn"), x, cfg, layer)?;
    let mut s = tape.add(mp, tf)?;
    if cfg.residual {
        s = tape.add(s, x)?;
    }
    let out = nn::mlp(
        tape,
        store,
        &layer_name(layer, "mlp"),
        cfg.fusion_mlp_layers,
        s,
    )?;
    Ok(if cfg.layer_norm {
        tape.layer_norm(out, LAYER_NORM_EPS)
    } else {
        out
    })
}

/// `layers` GPS layers applied to `x0`; returns every layer output, the
/// last being the node representation `H`.
pub fn encode_layers(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &GpsConfig,
    x0: Var,
    edges: &EdgeInput,
) -> Result<Vec<Var>> {
    let mut outs = Vec::with_capacity(cfg.layers);
    let mut x = x0;
    for l in 0..cfg.layers {
        x = gps_layer(tape, store, cfg, l, x, edges)?;
        outs.push(x);
    }
    Ok(outs)
}

pub fn encode(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &GpsConfig,
    x0: Var,
    edges: &EdgeInput,
) -> Result<Var> {
    Ok(encode_layers(tape, store, cfg, x0, edges)?
        .last()
        .copied()
        .unwrap_or(x0))
}

/// Hidden activations of one head: `(h1, h2)` after ReLU.
pub fn head_hidden(
    tape: &mut Tape,
    store: &ParamStore,
    sector: usize,
    s: Var,
) -> Result<(Var, Var)> {
    let name = format!("head{sector}");
    let h1 = nn::linear(tape, store, &nn::mlp_layer_name(&name, 0), s)?;
    let h1 = tape.relu(h1);
    let h2 = nn::linear(tape, store, &nn::mlp_layer_name(&name, 1), h1)?;
    let h2 = tape.relu(h2);
    Ok((h1, h2))
}

/// Output layer of one head applied to its second hidden layer.
pub fn head_output(tape: &mut Tape, store: &ParamStore, sector: usize, h2: Var) -> Result<Var> {
    nn::linear(
        tape,
        store,
        &nn::mlp_layer_name(&format!("head{sector}"), 2),
        h2,
    )
}

/// Three independent heads, concatenated to `N × 3`.
pub fn predict_sectors(tape: &mut Tape, store: &ParamStore, s: Var) -> Result<Var> {
    let mut cols = Vec::with_capacity(SECTORS);
    for sector in 0..SECTORS {
        let (_, h2) = head_hidden(tape, store, sector, s)?;
        cols.push(head_output(tape, store, sector, h2)?);
    }
    tape.concat(&cols)
}
