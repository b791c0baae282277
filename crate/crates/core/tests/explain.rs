mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regiongnn_core::explain::{
    shapley_exact, shapley_sampled, traceback, AttributionQuery, AttributionReport, Background,
    StageWeighting,
};
use regiongnn_core::gps::GpsConfig;
use regiongnn_core::model::ModelConfig;
use regiongnn_core::pse::PseConfig;
use regiongnn_core::trainer::{train, Checkpoint, TrainConfig};
use regiongnn_core::{split_districts, synth_region, Error, RegionGraph, SynthConfig};

/// Shapley values by averaging marginal contributions over all `n!` orders.
fn permutation_oracle(f: &dyn Fn(&[f64]) -> f64, x: &[f64], b: &[f64]) -> Vec<f64> {
    fn orders(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for o in orders(n - 1) {
            for pos in 0..=o.len() {
                let mut p = o.clone();
                p.insert(pos, n - 1);
                out.push(p);
            }
        }
        out
    }
    let n = x.len();
    let all = orders(n);
    let mut phi = vec![0.0; n];
    for o in &all {
        let mut z = b.to_vec();
        let mut prev = f(&z);
        for &i in o {
            z[i] = x[i];
            let cur = f(&z);
            phi[i] += cur - prev;
            prev = cur;
        }
    }
    phi.iter().map(|p| p / all.len() as f64).collect()
}

fn nonlinear(z: &[f64]) -> f64 {
    z[0] * z[1] + (z[2] - z[3]).tanh() + z[4] * z[4] * 0.5 + z[5] * z[6] * z[7] + z[1].sin()
}

#[test]
fn exact_linear_constant_and_product_games() {
    let w = [1.5, -2.0, 0.5, 3.0];
    let x = [1.0, 2.0, -1.0, 0.5];
    let b = [0.2, -0.3, 0.1, 0.0];
    let phi = shapley_exact(|z| z.iter().zip(&w).map(|(a, c)| a * c).sum(), &x, &b).unwrap();
    for i in 0..4 {
        assert!((phi[i] - w[i] * (x[i] - b[i])).abs() < 1e-12);
    }
    assert!(shapley_exact(|_| 7.0, &x, &b)
        .unwrap()
        .iter()
        .all(|&p| p == 0.0));

    let f = |z: &[f64]| z[0] * z[1] * z[2];
    let (x3, b3) = ([2.0, 3.0, -1.0], [1.0, 0.5, 2.0]);
    let phi = shapley_exact(f, &x3, &b3).unwrap();
    let want = permutation_oracle(&f, &x3, &b3);
    assert!(common::max_abs_diff(&phi, &want) < 1e-12);
    // zero background: only the grand coalition is nonzero
    let phi = shapley_exact(f, &x3, &[0.0; 3]).unwrap();
    assert!(phi.iter().all(|p| (p - (-6.0 / 3.0)).abs() < 1e-12));
}

#[test]
fn exact_rejects_wide_games() {
    let x = vec![1.0; 13];
    assert_eq!(
        shapley_exact(|z| z.iter().sum(), &x, &[0.0; 13]),
        Err(Error::TooManyFeatures { max: 12, got: 13 })
    );
}

#[test]
fn dummy_and_symmetry_axioms() {
    let f = |z: &[f64]| z[0] * z[1] + (z[0] + z[1]).exp();
    let x = [0.7, 0.7, 5.0];
    let b = [0.1, 0.1, -3.0];
    let phi = shapley_exact(f, &x, &b).unwrap();
    assert_eq!(phi[2], 0.0);
    assert!((phi[0] - phi[1]).abs() < 1e-12);
    let s = shapley_sampled(f, &x, &b, 4000, 1).unwrap();
    assert!((s[0] - s[1]).abs() < 0.05);
}

#[test]
fn sampled_efficiency_determinism_and_accuracy() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x: Vec<f64> = (0..8).map(|_| rng.random_range(-1.5..1.5)).collect();
    let b: Vec<f64> = (0..8).map(|_| rng.random_range(-0.5..0.5)).collect();
    let exact = shapley_exact(nonlinear, &x, &b).unwrap();
    for seed in 0..5 {
        let s = shapley_sampled(nonlinear, &x, &b, 2000, seed).unwrap();
        let gap = s.iter().sum::<f64>() - (nonlinear(&x) - nonlinear(&b));
        assert!(gap.abs() < 1e-9);
        assert!(common::max_abs_diff(&s, &exact) < 0.05);
        assert_eq!(s, shapley_sampled(nonlinear, &x, &b, 2000, seed).unwrap());
    }
}

#[test]
fn sampled_error_shrinks_with_permutations() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x: Vec<f64> = (0..8).map(|_| rng.random_range(-1.5..1.5)).collect();
    let b = vec![0.0; 8];
    let exact = shapley_exact(nonlinear, &x, &b).unwrap();
    let mut means = Vec::new();
    for p in [100, 500, 2000] {
        let total: f64 = (0..10)
            .map(|seed| {
                common::max_abs_diff(
                    &shapley_sampled(nonlinear, &x, &b, p, seed).unwrap(),
                    &exact,
                )
            })
            .sum();
        means.push(total / 10.0);
    }
    assert!(means[0] > means[1] && means[1] > means[2], "{means:?}");
}

fn trained(seed: u64, epochs: usize, layers: usize) -> (Checkpoint, RegionGraph) {
    let (g, labels) = synth_region(&SynthConfig {
        nodes_per_district: 5,
        district_count: 24,
        feature_dim: 8,
        poi_dim: 4,
        noise_sd: 0.05,
        seed,
        ..SynthConfig::default()
    })
    .unwrap();
    let split = split_districts(24, [0.7, 0.1, 0.2], seed).unwrap();
    let model = ModelConfig {
        pse: PseConfig {
            lap_max_freqs: 8,
            lap_dim: 4,
            lap_mlp_layers: 2,
            rwse_steps: 8,
            rwse_dim: 4,
        },
        gps: GpsConfig {
            embed_dim: 16,
            layers,
            heads: 2,
            head_hidden: 16,
            ..GpsConfig::default()
        },
        ..ModelConfig::default()
    };
    let cfg = TrainConfig {
        epochs,
        lr: 5e-3,
        seed,
        ..TrainConfig::default()
    };
    (
        train(&g, &labels, &split, &model, &cfg).unwrap().checkpoint,
        g,
    )
}

fn query(sector: usize, district: usize) -> AttributionQuery {
    AttributionQuery {
        sector,
        district,
        top_k: 4,
        permutations: 200,
        max_groups: 6,
        ..AttributionQuery::default()
    }
}

fn modality(report: &AttributionReport, name: &str) -> f64 {
    report
        .modalities
        .iter()
        .find(|m| m.modality == name)
        .map_or(0.0, |m| m.mean_abs)
}

#[test]
fn every_trace_stage_is_efficient() {
    let (ck, g) = trained(0, 20, 2);
    for background in [Background::DatasetMean, Background::Zeros] {
        let q = AttributionQuery {
            background,
            ..query(0, 3)
        };
        let r = traceback(&ck, &g, &q).unwrap();
        let names: Vec<&str> = r.stages.iter().map(|s| s.layer.as_str()).collect();
        assert_eq!(
            names,
            [
                "head0.hidden2",
                "head0.hidden1",
                "district_embedding",
                "gps1.input",
                "gps0.input",
                "input"
            ]
        );
        for s in &r.stages {
            assert!(s.efficiency_gap < 1e-9, "{} {}", s.layer, s.efficiency_gap);
            assert!(s.selected.len() <= 4);
        }
        assert_eq!(r.categories.len(), 4);
        assert!(["poi", "svi", "lap_pe", "rwse"]
            .iter()
            .all(|m| r.modalities.iter().any(|x| x.modality == *m)));
    }
    assert!(traceback(&ck, &g, &query(3, 0)).is_err());
    assert!(traceback(&ck, &g, &query(0, 24)).is_err());
    assert!(traceback(
        &ck,
        &g,
        &AttributionQuery {
            top_k: 0,
            ..query(0, 0)
        }
    )
    .is_err());
}

#[test]
fn full_top_k_selects_everything_and_matches_a_direct_stage() {
    let (ck, g) = trained(1, 10, 1);
    let q = AttributionQuery {
        top_k: 16,
        ..query(2, 5)
    };
    let r = traceback(&ck, &g, &q).unwrap();
    let first = &r.stages[0];
    assert_eq!(first.selected.len(), 16);
    // the output layer is linear, so each φ_k is sd · w_k · (a_k − b_k)
    let w = ck.params.by_name("head2.2.w").unwrap();
    let sd = ck.scaler.sd[2];
    for f in &first.features {
        let want = sd * w.get(f.index, 0) * (f.value - f.background);
        assert!(
            (f.shap - want).abs() < 1e-9,
            "{} {} {want}",
            f.index,
            f.shap
        );
    }
    assert!((first.value - r.prediction).abs() < 1e-9);
}

#[test]
fn rescale_chains_exactly_through_a_linear_stage() {
    let (ck, g) = trained(1, 10, 1);
    let q = AttributionQuery {
        top_k: 16,
        weighting: StageWeighting::Rescale,
        ..query(2, 5)
    };
    let r = traceback(&ck, &g, &q).unwrap();
    // weights equal the output slopes sd · w_k, so the next target is the
    // prediction without its offset
    let bias = ck.params.by_name("head2.2.b").unwrap().values()[0];
    let offset = ck.scaler.mean[2] + ck.scaler.sd[2] * bias;
    assert!((r.stages[1].value - (r.prediction - offset)).abs() < 1e-9);
    let abs = traceback(
        &ck,
        &g,
        &AttributionQuery {
            weighting: StageWeighting::AbsShap,
            ..q
        },
    )
    .unwrap();
    assert_eq!(abs.stages[0], r.stages[0]);
}

#[test]
fn poi_dominates_the_poi_only_sector() {
    let (g, labels) = synth_region(&SynthConfig {
        nodes_per_district: 4,
        district_count: 60,
        feature_dim: 8,
        poi_dim: 4,
        noise_sd: 0.05,
        ..SynthConfig::default()
    })
    .unwrap();
    let split = split_districts(60, [0.7, 0.1, 0.2], 0).unwrap();
    let model = ModelConfig {
        pse: PseConfig {
            lap_max_freqs: 8,
            lap_dim: 4,
            lap_mlp_layers: 2,
            rwse_steps: 8,
            rwse_dim: 4,
        },
        gps: GpsConfig {
            embed_dim: 16,
            layers: 1,
            heads: 2,
            head_hidden: 16,
            ..GpsConfig::default()
        },
        ..ModelConfig::default()
    };
    let cfg = TrainConfig {
        epochs: 300,
        lr: 5e-3,
        ..TrainConfig::default()
    };
    let ck = train(&g, &labels, &split, &model, &cfg).unwrap().checkpoint;
    let (mut poi, mut svi) = (0.0, 0.0);
    for d in 0..6 {
        let q = AttributionQuery {
            sector: 1,
            district: d,
            permutations: 500,
            ..AttributionQuery::default()
        };
        let r = traceback(&ck, &g, &q).unwrap();
        poi += modality(&r, "poi");
        svi += modality(&r, "svi");
    }
    assert!(poi > svi, "poi {poi} svi {svi}");
}
