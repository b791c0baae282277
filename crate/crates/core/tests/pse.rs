#![allow(clippy::needless_range_loop)]

mod common;

use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regiongnn_core::pse::{self, PseAblation, PseConfig, PseInputs, EIG_TOL};
use regiongnn_core::{init_params, sym_eig, ParamStore, RegionGraph, Tape, Tensor};

fn residual(a: &Tensor, vals: &[f64], vecs: &Tensor) -> f64 {
    let n = vals.len();
    let mut worst: f64 = 0.0;
    for k in 0..n {
        for i in 0..n {
            let av: f64 = (0..n).map(|j| a.get(i, j) * vecs.get(j, k)).sum();
            worst = worst.max((av - vals[k] * vecs.get(i, k)).abs());
        }
    }
    worst
}

fn orthonormality(vecs: &Tensor) -> f64 {
    let n = vecs.cols();
    let mut worst: f64 = 0.0;
    for p in 0..n {
        for q in 0..n {
            let dot: f64 = (0..vecs.rows())
                .map(|i| vecs.get(i, p) * vecs.get(i, q))
                .sum();
            worst = worst.max((dot - if p == q { 1.0 } else { 0.0 }).abs());
        }
    }
    worst
}

/// Sum over closed walks of length `m` from `i` of the product of `1/deg`.
fn walk_return(g: &RegionGraph, start: usize, at: usize, left: usize) -> f64 {
    if left == 0 {
        return if at == start { 1.0 } else { 0.0 };
    }
    let nbrs = g.neighbors(at);
    if nbrs.is_empty() {
        return 0.0;
    }
    let w = 1.0 / nbrs.len() as f64;
    nbrs.iter()
        .map(|&j| w * walk_return(g, start, j, left - 1))
        .sum()
}

#[test]
fn laplacian_of_small_graphs() {
    let p2 = pse::laplacian(&structure(2, &[(0, 1)]).adjacency()).unwrap();
    assert_eq!(p2.values(), &[1.0, -1.0, -1.0, 1.0]);
    let k3 = pse::laplacian(&structure(3, &[(0, 1), (1, 2), (0, 2)]).adjacency()).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            assert_eq!(k3.get(i, j), if i == j { 2.0 } else { -1.0 });
        }
    }
    let empty = pse::laplacian(&Tensor::zeros(4, 4)).unwrap();
    assert!(empty.values().iter().all(|&v| v == 0.0));
    let asym = Tensor::from_rows(2, 2, vec![0.0, 1.0, 0.0, 0.0]);
    assert!(pse::laplacian(&asym).is_err());
}

#[test]
fn small_spectra() {
    let s = sym_eig(&Tensor::from_rows(2, 2, vec![2.0, 0.0, 0.0, 1.0]), EIG_TOL).unwrap();
    assert_eq!(s.eigenvalues, vec![1.0, 2.0]);

    let p2 = pse::laplacian(&structure(2, &[(0, 1)]).adjacency()).unwrap();
    let s = sym_eig(&p2, EIG_TOL).unwrap();
    assert!(s.eigenvalues[0].abs() < 1e-10 && (s.eigenvalues[1] - 2.0).abs() < 1e-10);
    let h = 1.0 / 2f64.sqrt();
    assert!(max_abs_diff(&s.vector(0), &[h, h]) < 1e-12);

    let k3 = pse::laplacian(&structure(3, &[(0, 1), (1, 2), (0, 2)]).adjacency()).unwrap();
    let s = sym_eig(&k3, EIG_TOL).unwrap();
    assert!(max_abs_diff(&s.eigenvalues, &[0.0, 3.0, 3.0]) < 1e-10);
}

#[test]
fn fifty_random_symmetric_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for t in 0..50 {
        let n = rng.random_range(1..=64);
        let mut a = Tensor::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = rng.random_range(-5.0..5.0);
                a.set(i, j, v);
                a.set(j, i, v);
            }
        }
        let s = sym_eig(&a, EIG_TOL).unwrap();
        assert!(
            residual(&a, &s.eigenvalues, &s.eigenvectors) < 1e-8,
            "matrix {t}"
        );
        assert!(orthonormality(&s.eigenvectors) < 1e-8, "matrix {t}");
        assert!(s.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
        for k in 0..n {
            let v = s.vector(k);
            let big = v
                .iter()
                .copied()
                .fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            assert!(big > 0.0);
        }
    }
}

#[test]
fn connected_graph_has_one_zero_eigenvalue() {
    let g = structure(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 3)]);
    let s = sym_eig(&pse::laplacian(&g.adjacency()).unwrap(), EIG_TOL).unwrap();
    assert_eq!(s.eigenvalues.iter().filter(|v| v.abs() < 1e-9).count(), 1);
    let v0 = s.vector(0);
    assert!(v0.iter().all(|&x| x > 0.0));
}

#[test]
fn rwse_first_step_is_zero_and_c4_second_step_is_half() {
    let c4 = structure(4, &cycle(4));
    let raw = pse::rwse_raw(&c4, 3);
    for i in 0..4 {
        assert_eq!(raw.get(i, 0), 0.0);
        assert_eq!(raw.get(i, 1), 0.5);
    }
    let isolated = structure(3, &[(0, 1)]);
    assert!(pse::rwse_raw(&isolated, 4).row(2).iter().all(|&v| v == 0.0));
}

#[test]
fn rwse_matches_walk_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let m = rng.random_range(2..=20);
        let edges = random_edges(&mut rng, m, 0.3);
        let g = structure(m, &edges);
        let raw = pse::rwse_raw(&g, 6);
        for i in 0..m {
            for step in 1..=6 {
                let want = walk_return(&g, i, i, step);
                assert!((raw.get(i, step - 1) - want).abs() < 1e-12);
                assert!((0.0..=1.0).contains(&raw.get(i, step - 1)));
            }
        }
    }
}

fn unit_lap_mlp(cfg: &PseConfig) -> ParamStore {
    let specs = pse::pse_specs(cfg, 1, 4, PseAblation::Lap);
    let mut store = init_params(&specs, 0).unwrap();
    for l in 0..cfg.lap_mlp_layers {
        let w = store.by_name_mut(&format!("pse.lap.{l}.w")).unwrap();
        let n = w.rows();
        *w = Tensor::identity(n);
    }
    store
}

#[test]
fn lap_inputs_on_p2_and_padding() {
    let cfg = PseConfig {
        lap_max_freqs: 2,
        ..PseConfig::default()
    };
    let g = structure(2, &[(0, 1)]);
    let inputs = PseInputs::compute(&g, &cfg).unwrap();
    let h = 1.0 / 2f64.sqrt();
    assert!(max_abs_diff(inputs.lap_vectors.row(0), &[h, h]) < 1e-12);
    assert!(max_abs_diff(inputs.lap_vectors.row(1), &[h, -h]) < 1e-12);

    let padded = PseInputs::compute(&g, &PseConfig::default()).unwrap();
    assert_eq!(padded.lap_vectors.cols(), 10);
    assert!(padded.lap_vectors.row(0)[2..].iter().all(|&v| v == 0.0));
}

#[test]
fn lap_pe_identity_mlp_is_deterministic_and_passes_entries() {
    let cfg = PseConfig {
        lap_max_freqs: 4,
        lap_dim: 4,
        lap_mlp_layers: 1,
        ..PseConfig::default()
    };
    let store = unit_lap_mlp(&cfg);
    let g = structure(4, &cycle(4));
    let inputs = PseInputs::compute(&g, &cfg).unwrap();
    let run = || {
        let mut t = Tape::new();
        let v = pse::lap_pe(&mut t, &store, &cfg, &inputs.lap_vectors).unwrap();
        t.value(v).clone()
    };
    let a = run();
    assert_eq!(a, run());
    assert_eq!(a, inputs.lap_vectors);
    // C4 spectrum 0, 2, 2, 4: the extreme eigenvectors have |entry| = 1/2
    // at every node
    assert!(max_abs_diff(&inputs.eigenvalues, &[0.0, 2.0, 2.0, 4.0]) < 1e-12);
    for i in 0..4 {
        assert!((a.get(i, 0) - 0.5).abs() < 1e-12);
        assert!((a.get(i, 3).abs() - 0.5).abs() < 1e-12);
    }
}

#[test]
fn rwse_projection_contracts() {
    let cfg = PseConfig {
        rwse_steps: 3,
        rwse_dim: 3,
        ..PseConfig::default()
    };
    let g = structure(4, &cycle(4));
    let raw = pse::rwse_raw(&g, 3);
    let mut store = init_params(&pse::pse_specs(&cfg, 1, 4, PseAblation::Rwse), 3).unwrap();
    let project = |s: &ParamStore| {
        let mut t = Tape::new();
        let v = pse::rwse_project(&mut t, s, &raw).unwrap();
        t.value(v).clone()
    };
    assert_eq!(project(&store), project(&store));
    *store.by_name_mut("pse.rwse.w").unwrap() = Tensor::zeros(3, 3);
    assert!(project(&store).values().iter().all(|&v| v == 0.0));
    *store.by_name_mut("pse.rwse.w").unwrap() = Tensor::identity(3);
    *store.by_name_mut("pse.rwse.b").unwrap() = Tensor::from_rows(1, 3, vec![0.5, -1.0, 2.0]);
    let out = project(&store);
    for i in 0..4 {
        for c in 0..3 {
            assert_eq!(out.get(i, c), raw.get(i, c) + [0.5, -1.0, 2.0][c]);
        }
    }
}

#[test]
fn integration_widths_and_ablation() {
    let cfg = PseConfig::default();
    let specs = pse::pse_specs(&cfg, 4, 8, PseAblation::Both);
    let w = specs.iter().find(|s| s.name == "pse.in.w").unwrap();
    assert_eq!((w.rows, w.cols), (36, 8));

    let specs = pse::pse_specs(&cfg, 4, 8, PseAblation::None);
    assert_eq!(specs.len(), 2);
    let store = init_params(&specs, 1).unwrap();
    let g = random_graph(2, 6, 2, 4, 0.5);
    let inputs = PseInputs::compute(&g, &cfg).unwrap();
    let mut t = Tape::new();
    let x = t.constant(g.features().clone());
    let x0 =
        pse::input_embedding(&mut t, &store, &cfg, PseAblation::None, &inputs, x, None).unwrap();
    let mut want = g
        .features()
        .matmul(store.by_name("pse.in.w").unwrap())
        .unwrap();
    let b = store.by_name("pse.in.b").unwrap();
    for i in 0..6 {
        for (v, bb) in want.row_mut(i).iter_mut().zip(b.values()) {
            *v += bb;
        }
    }
    assert!(max_abs_diff(t.value(x0).values(), want.values()) < 1e-15);
}

#[test]
fn sign_flips_only_change_column_signs() {
    let g = random_graph(4, 8, 2, 2, 0.5);
    let inputs = PseInputs::compute(&g, &PseConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let signs = pse::random_signs(10, &mut rng);
    let flipped = pse::flip_columns(&inputs.lap_vectors, &signs);
    for i in 0..8 {
        for c in 0..10 {
            assert_eq!(flipped.get(i, c), signs[c] * inputs.lap_vectors.get(i, c));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn rwse_is_permutation_equivariant(seed in 0u64..1000, m in 2usize..12) {
        let g = random_graph(seed, m, 1, 1, 0.4);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let mut perm: Vec<usize> = (0..m).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
        let a = pse::rwse_raw(&g, 5);
        let b = pse::rwse_raw(&permute(&g, &perm), 5);
        for (i, &p) in perm.iter().enumerate() {
            prop_assert!(max_abs_diff(b.row(i), a.row(p)) < 1e-12);
        }
    }

    #[test]
    fn rwse_entries_are_probabilities(seed in 0u64..1000, m in 1usize..16) {
        let g = random_graph(seed, m, 1, 1, 0.3);
        let raw = pse::rwse_raw(&g, 8);
        prop_assert!(raw.values().iter().all(|v| (0.0..=1.0 + 1e-12).contains(v)));
    }

    #[test]
    fn laplacian_spectrum_invariants(seed in 0u64..1000, m in 1usize..24) {
        let g = random_graph(seed, m, 1, 1, 0.3);
        let l = pse::laplacian(&g.adjacency()).unwrap();
        let s = sym_eig(&l, EIG_TOL).unwrap();
        prop_assert!(residual(&l, &s.eigenvalues, &s.eigenvectors) < 1e-8);
        prop_assert!(orthonormality(&s.eigenvectors) < 1e-8);
        prop_assert!(s.eigenvalues[0].abs() < 1e-9);
    }
}
