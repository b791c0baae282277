#![allow(clippy::needless_range_loop)]

mod common;

use std::rc::Rc;
use std::time::Instant;

use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regiongnn_core::gps::GpsConfig;
use regiongnn_core::model::{GraphInputs, LabelScaler, ModelConfig};
use regiongnn_core::pse::{PseAblation, PseConfig};
use regiongnn_core::semiloss::{self, CorruptionConfig, LossConfig, Pairing};
use regiongnn_core::trainer::{objective, Corrupted};
use regiongnn_core::{
    grad_check, init_params, synth_region, DistrictLabels, Error, GradCheck, ParamStore,
    SynthConfig, Tape, Tensor,
};

fn sigma(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn bilinear(h: &[f64], w: &Tensor, s: &[f64]) -> f64 {
    let mut acc = 0.0;
    for a in 0..h.len() {
        for b in 0..s.len() {
            acc += h[a] * w.get(a, b) * s[b];
        }
    }
    acc
}

fn disc_store(w: Tensor) -> ParamStore {
    let mut s = ParamStore::new();
    s.insert("disc.w", w).unwrap();
    s
}

fn info(
    h: &Tensor,
    hc: &Tensor,
    district_of: &[usize],
    n: usize,
    w: Tensor,
    pairing: Pairing,
) -> f64 {
    let store = disc_store(w);
    let mut t = Tape::new();
    let hv = t.constant(h.clone());
    let hcv = t.constant(hc.clone());
    let d: Rc<[usize]> = Rc::from(district_of.to_vec());
    let (_, s_disc) = semiloss::district_readout(&mut t, hv, &d, n).unwrap();
    let l = semiloss::info_loss(&mut t, &store, hv, hcv, s_disc, &d, pairing).unwrap();
    t.scalar(l)
}

#[test]
fn discriminator_values() {
    let w0 = Tensor::zeros(3, 3);
    assert_eq!(
        semiloss::discriminate(&[1.0, -2.0, 3.0], &[0.5, 0.1, 0.2], &w0),
        0.5
    );
    let e1 = [1.0, 0.0, 0.0];
    let v = semiloss::discriminate(&e1, &e1, &Tensor::identity(3));
    assert!((v - 0.7310585786300049).abs() < 1e-15);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10 {
        let w = random_matrix(&mut rng, 4, 4);
        let h: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let want = sigma(bilinear(&h, &w, &s));
        assert!((semiloss::discriminate(&h, &s, &w) - want).abs() < 1e-15);
    }
}

#[test]
fn readout_means() {
    let h = Tensor::from_rows(5, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 7.0, 8.0]);
    let d: Rc<[usize]> = Rc::from(vec![0, 1, 0, 2, 2]);
    let mut t = Tape::new();
    let hv = t.constant(h);
    let (s, s_disc) = semiloss::district_readout(&mut t, hv, &d, 3).unwrap();
    assert_eq!(t.value(s).values(), &[3.0, 4.0, 3.0, 4.0, 7.0, 8.0]);
    for (a, b) in t.value(s_disc).values().iter().zip(t.value(s).values()) {
        assert!((a - sigma(*b)).abs() < 1e-15);
    }
    let mut t = Tape::new();
    let hv = t.constant(Tensor::zeros(2, 2));
    assert!(semiloss::district_readout(&mut t, hv, &Rc::from(vec![0, 0]), 2).is_err());
}

#[test]
fn uninformative_discriminator_gives_two_ln_two() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h = random_matrix(&mut rng, 6, 3);
    let hc = random_matrix(&mut rng, 6, 3);
    let d = [0, 0, 0, 1, 1, 1];
    for pairing in [Pairing::OwnDistrict, Pairing::AllPairs] {
        let l = info(&h, &hc, &d, 2, Tensor::zeros(3, 3), pairing);
        assert!((l - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }
}

#[test]
fn perfect_discrimination_drives_loss_to_zero() {
    // positives align with the summaries, negatives point away
    let h = Tensor::from_rows(4, 1, vec![1.0, 1.0, 1.0, 1.0]);
    let hc = Tensor::from_rows(4, 1, vec![-1.0; 4]);
    let d = [0, 0, 1, 1];
    let big = info(
        &h,
        &hc,
        &d,
        2,
        Tensor::from_rows(1, 1, vec![200.0]),
        Pairing::OwnDistrict,
    );
    let small = info(
        &h,
        &hc,
        &d,
        2,
        Tensor::from_rows(1, 1, vec![20.0]),
        Pairing::OwnDistrict,
    );
    assert!((0.0..1e-12).contains(&big));
    assert!(small > big && small < 1e-4);
}

#[test]
fn six_node_fixture_matches_hand_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h = random_matrix(&mut rng, 6, 3);
    let hc = random_matrix(&mut rng, 6, 3);
    let w = random_matrix(&mut rng, 3, 3);
    let d = [0, 1, 0, 1, 1, 0];
    let mut s = vec![vec![0.0; 3]; 2];
    for (i, &j) in d.iter().enumerate() {
        for c in 0..3 {
            s[j][c] += h.get(i, c) / 3.0;
        }
    }
    let s: Vec<Vec<f64>> = s
        .iter()
        .map(|r| r.iter().map(|&v| sigma(v)).collect())
        .collect();
    let mut own = 0.0;
    for (i, &j) in d.iter().enumerate() {
        own += sigma(bilinear(h.row(i), &w, &s[j])).ln();
        own += (1.0 - sigma(bilinear(hc.row(i), &w, &s[j]))).ln();
    }
    let want = -own / 6.0;
    assert!((info(&h, &hc, &d, 2, w.clone(), Pairing::OwnDistrict) - want).abs() < 1e-12);

    let mut all = 0.0;
    for i in 0..6 {
        for sj in &s {
            all += sigma(bilinear(h.row(i), &w, sj)).ln();
            all += (1.0 - sigma(bilinear(hc.row(i), &w, sj))).ln();
        }
    }
    assert!((info(&h, &hc, &d, 2, w, Pairing::AllPairs) + all / 12.0).abs() < 1e-12);
}

fn reg(y_hat: &Tensor, labels: &DistrictLabels, alpha: [f64; 3]) -> Result<f64, Error> {
    let mut t = Tape::new();
    let y = t.constant(y_hat.clone());
    let r = semiloss::reg_loss(&mut t, y, labels, &alpha)?;
    Ok(t.scalar(r))
}

#[test]
fn regression_loss_examples() {
    let alpha = semiloss::DEFAULT_ALPHA;
    let y = Tensor::from_rows(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    let full = DistrictLabels::fully_labeled(y.clone()).unwrap();
    assert_eq!(reg(&y, &full, alpha).unwrap(), 0.0);

    let one = DistrictLabels::new(y.clone(), vec![true, false]).unwrap();
    let off = Tensor::from_rows(2, 3, vec![2.0, 3.0, 4.0, 9.0, 9.0, 9.0]);
    assert!((reg(&off, &one, alpha).unwrap() - 0.037).abs() < 1e-15);

    let a = reg(&off, &full, alpha).unwrap();
    let b = reg(&off, &full, alpha.map(|v| 2.0 * v)).unwrap();
    assert_eq!(b, 2.0 * a);

    let none = DistrictLabels::new(y, vec![false, false]).unwrap();
    assert_eq!(reg(&off, &none, alpha), Err(Error::NoLabeledDistricts));
}

#[test]
fn combination_boundaries() {
    let mut t = Tape::new();
    let i = t.constant(Tensor::scalar(1.2345678901234567));
    let r = t.constant(Tensor::scalar(0.0987654321));
    for (lambda, want) in [(0.0, 0.0987654321), (1.0, 1.2345678901234567)] {
        let total = semiloss::semi_info_loss(&mut t, i, r, lambda).unwrap();
        assert_eq!(t.scalar(total).to_bits(), f64::to_bits(want));
    }
    assert_eq!(semiloss::combine(2.0, 4.0, 0.5).unwrap(), 3.0);
    assert!(semiloss::combine(2.0, 4.0, 1.5).is_err());
    assert!(semiloss::semi_info_loss(&mut t, i, r, -0.1).is_err());
}

#[test]
fn corruption_boundaries() {
    let g = random_graph(3, 12, 3, 3, 0.4);
    let keep = CorruptionConfig {
        edge_drop_prob: 0.0,
        permute_features: false,
        seed: 9,
    };
    assert_eq!(semiloss::corrupt(&g, &keep).unwrap(), g);
    let drop = CorruptionConfig {
        edge_drop_prob: 1.0,
        ..CorruptionConfig::default()
    };
    assert_eq!(
        semiloss::corrupt(&g, &drop).unwrap().directed_edge_count(),
        0
    );
    let cfg = CorruptionConfig::default();
    assert_eq!(
        semiloss::corrupt(&g, &cfg).unwrap(),
        semiloss::corrupt(&g, &cfg).unwrap()
    );
    assert!(semiloss::corrupt(
        &g,
        &CorruptionConfig {
            edge_drop_prob: 1.5,
            ..cfg
        }
    )
    .is_err());
}

fn tiny_model() -> ModelConfig {
    ModelConfig {
        pse: PseConfig {
            lap_max_freqs: 4,
            lap_dim: 3,
            lap_mlp_layers: 2,
            rwse_steps: 4,
            rwse_dim: 3,
        },
        gps: GpsConfig {
            embed_dim: 4,
            layers: 2,
            heads: 2,
            head_hidden: 4,
            ..GpsConfig::default()
        },
        ablation: PseAblation::Both,
    }
}

#[test]
fn full_objective_gradients_match_finite_differences() {
    let start = Instant::now();
    let (g, labels) = synth_region(&SynthConfig {
        nodes_per_district: 4,
        district_count: 3,
        feature_dim: 4,
        poi_dim: 2,
        ..SynthConfig::default()
    })
    .unwrap();
    assert_eq!((g.node_count(), g.district_count()), (12, 3));
    let labels = DistrictLabels::new(labels.values, vec![true, true, false]).unwrap();
    let cfg = tiny_model();
    let inputs = GraphInputs::new(&g, &cfg).unwrap();
    let scaler = LabelScaler::fit(&labels);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let view = semiloss::corrupt_with(&g, 0.2, true, &mut rng);
    let edges = g.with_edges(view.edges).unwrap().edge_list();
    let store = init_params(&cfg.param_specs(4), 1).unwrap();
    for pairing in [Pairing::OwnDistrict, Pairing::AllPairs] {
        let loss = LossConfig {
            lambda: 0.5,
            pairing,
            ..LossConfig::default()
        };
        let report = grad_check(
            |t, s| {
                let corrupted = Corrupted {
                    features: &view.features,
                    edges: &edges,
                };
                Ok(objective(
                    t, s, &cfg, &inputs, &corrupted, None, &labels, &scaler, &loss,
                )?
                .total)
            },
            &store,
            &GradCheck::default(),
        )
        .unwrap();
        assert!(report.passed && report.max_rel_err < 1e-4, "{report:?}");
    }
    assert!(start.elapsed().as_secs() < 60);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn masked_predictions_do_not_move_the_loss(seed in 0u64..10_000, n in 2usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y = random_matrix(&mut rng, n, 3);
        let mut mask: Vec<bool> = (0..n).map(|_| rng.random()).collect();
        mask[0] = true;
        let labels = DistrictLabels::new(y, mask.clone()).unwrap();
        let y_hat = random_matrix(&mut rng, n, 3);
        let mut moved = y_hat.clone();
        for (j, m) in mask.iter().enumerate() {
            if !m {
                for c in 0..3 {
                    moved.set(j, c, rng.random_range(-1e6..1e6));
                }
            }
        }
        let a = reg(&y_hat, &labels, semiloss::DEFAULT_ALPHA).unwrap();
        let b = reg(&moved, &labels, semiloss::DEFAULT_ALPHA).unwrap();
        prop_assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn info_loss_is_nonnegative(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = random_matrix(&mut rng, 6, 2);
        let hc = random_matrix(&mut rng, 6, 2);
        let w = random_matrix(&mut rng, 2, 2);
        prop_assert!(info(&h, &hc, &[0, 1, 1, 0, 2, 2], 3, w, Pairing::OwnDistrict) >= 0.0);
    }

    #[test]
    fn combination_is_monotone(info in 0.0f64..10.0, reg in 0.0f64..10.0, lambda in 0.0f64..=1.0, bump in 0.0f64..1.0) {
        let base = semiloss::combine(info, reg, lambda).unwrap();
        prop_assert!(semiloss::combine(info + bump, reg, lambda).unwrap() >= base);
        prop_assert!(semiloss::combine(info, reg + bump, lambda).unwrap() >= base);
    }

    #[test]
    fn corruption_keeps_rows_and_never_adds_edges(seed in 0u64..10_000, p in 0.0f64..=1.0) {
        let g = random_graph(seed, 10, 2, 3, 0.4);
        let c = semiloss::corrupt(&g, &CorruptionConfig { edge_drop_prob: p, permute_features: true, seed }).unwrap();
        prop_assert!(c.directed_edge_count() <= g.directed_edge_count());
        prop_assert_eq!(c.district_of(), g.district_of());
        let sorted = |t: &Tensor| {
            let mut rows: Vec<Vec<u64>> = (0..t.rows()).map(|i| t.row(i).iter().map(|v| v.to_bits()).collect()).collect();
            rows.sort();
            rows
        };
        prop_assert_eq!(sorted(c.features()), sorted(g.features()));
        for (&(i, j), e) in c.edge_features() {
            prop_assert_eq!(g.edge_features().get(&(i, j)), Some(e));
        }
    }
}
