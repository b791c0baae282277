use proptest::prelude::*;
use regiongnn_core::ingest::{
    assemble_node_features, encode_mobility, encode_poi, pool_svi, OdRecord, PoiRecord,
    SviEmbedding, SviPooling,
};
use regiongnn_core::Tensor;

fn units(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("u{i}")).collect()
}

fn vocab() -> Vec<String> {
    ["atm", "bank", "cafe", "school"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn poi_row_sums_count_records(recs in prop::collection::vec((0usize..5, 0usize..4), 0..60)) {
        let u = units(5);
        let v = vocab();
        let records: Vec<PoiRecord> = recs
            .iter()
            .map(|&(k, c)| PoiRecord { subdistrict_id: u[k].clone(), category: v[c].clone() })
            .collect();
        let x = encode_poi(&records, &v, &u).unwrap();
        for (k, _) in u.iter().enumerate() {
            let want = recs.iter().filter(|r| r.0 == k).count() as f64;
            prop_assert_eq!(x.row(k).iter().sum::<f64>(), want);
        }
    }

    #[test]
    fn svi_pooling_ignores_image_order(
        vecs in prop::collection::vec((0usize..3, prop::collection::vec(-5.0f64..5.0, 3)), 1..20),
        rot in 0usize..20,
    ) {
        let u = units(3);
        let emb: Vec<SviEmbedding> = vecs
            .iter()
            .enumerate()
            .map(|(i, (k, v))| SviEmbedding { subdistrict_id: u[*k].clone(), image_id: format!("i{i}"), vector: v.clone() })
            .collect();
        let mut shuffled = emb.clone();
        shuffled.reverse();
        let r = rot % shuffled.len();
        shuffled.rotate_left(r);
        for pooling in [SviPooling::Mean, SviPooling::Sum] {
            let a = pool_svi(&emb, &u, 3, pooling).unwrap();
            let b = pool_svi(&shuffled, &u, 3, pooling).unwrap();
            for (x, y) in a.values().iter().zip(b.values()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mobility_is_symmetric(
        flows in prop::collection::vec((0usize..6, 0usize..6, 0.0f64..20.0), 0..40),
        threshold in 0.0f64..10.0,
    ) {
        let u = units(6);
        let records: Vec<OdRecord> = flows
            .iter()
            .map(|&(i, j, c)| OdRecord { origin_id: u[i].clone(), dest_id: u[j].clone(), count: c })
            .collect();
        let m = encode_mobility(&records, &u, threshold).unwrap();
        for i in 0..6 {
            prop_assert_eq!(m.adjacency.get(i, i), 0.0);
            for j in 0..6 {
                prop_assert_eq!(m.adjacency.get(i, j), m.adjacency.get(j, i));
                prop_assert_eq!(m.adjacency.get(i, j) == 1.0, m.edge_features.contains_key(&(i, j)));
            }
        }
        for (&(i, j), e) in &m.edge_features {
            let r = m.edge_features[&(j, i)];
            prop_assert_eq!([e[1], e[0]], r);
        }
    }

    #[test]
    fn assembled_width_and_finiteness(
        rows in 1usize..8,
        p in 0usize..4,
        v in 0usize..5,
        seed in any::<u64>(),
        standardize in any::<bool>(),
    ) {
        let mut s = seed;
        let mut next = || { s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); (s >> 11) as f64 / (1u64 << 53) as f64 };
        let poi = Tensor::from_rows(rows, p, (0..rows * p).map(|_| (next() * 10.0).floor()).collect());
        let svi = Tensor::from_rows(rows, v, (0..rows * v).map(|_| next() - 0.5).collect());
        let (x, stats) = assemble_node_features(&poi, &svi, standardize).unwrap();
        prop_assert_eq!(x.cols(), p + v);
        prop_assert!(x.is_finite());
        prop_assert_eq!(stats.is_some(), standardize);
    }
}
