mod common;

use std::collections::BTreeMap;

use trajcluster_core::data_model::{Group, Partition};
use trajcluster_core::frechet::{frechet_distance, optimal_coupling, Aggregate, Curve, FrechetParams};
use trajcluster_core::hierarchical::{distance_matrix, ward_linkage, DissimilarityMatrix};
use trajcluster_core::inference::{
    adjusted_rand_index, chi_square_test, fisher_exact_2x2, one_way_anova, two_sample_t_test, ContingencyTable,
};
use trajcluster_core::preprocess::RateProfile;
use trajcluster_core::rng::SplitMix64;
use trajcluster_core::seriation::{
    render_matrix_image, shade_bin, similarity, spectral_order, two_sum, BinRule, PixmapFormat, RowOrder,
    SeriationConfig,
};

fn curve(rng: &mut SplitMix64, max_len: usize) -> Curve {
    let (t, v) = common::random_curve(rng, max_len);
    Curve::new(t, v).unwrap()
}

fn points(c: &Curve) -> Vec<(f64, f64)> {
    (0..c.len()).map(|i| c.point(i)).collect()
}

#[test]
fn frechet_matches_enumeration_for_both_aggregates() {
    let mut rng = SplitMix64::new(2024);
    for _ in 0..100 {
        let (a, b) = (curve(&mut rng, 6), curve(&mut rng, 6));
        for (agg, mean) in [(Aggregate::Max, false), (Aggregate::Mean, true)] {
            let p = FrechetParams::new(0.1, agg).unwrap();
            let got = frechet_distance(&a, &b, &p).unwrap();
            let want = common::brute_force_frechet(&points(&a), &points(&b), 0.1, mean);
            if mean {
                assert!((got - want).abs() <= 1e-12, "{got} vs {want}");
            } else {
                assert_eq!(got, want);
            }
            let coupling = optimal_coupling(&a, &b, &p).unwrap();
            assert!(coupling.is_valid(a.len(), b.len()));
            assert!((coupling.cost(&a, &b, &p) - got).abs() <= 1e-12);
        }
    }
}

#[test]
fn coupling_enumeration_counts_are_delannoy_numbers() {
    assert_eq!(common::all_couplings(1, 1).len(), 1);
    assert_eq!(common::all_couplings(2, 2).len(), 3);
    assert_eq!(common::all_couplings(3, 3).len(), 13);
    assert_eq!(common::all_couplings(4, 4).len(), 63);
}

#[test]
fn ward_matches_naive_merges() {
    let mut rng = SplitMix64::new(99);
    for _ in 0..10 {
        let n = 2 + rng.next_below(39);
        let pts: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.next_f64()).collect()).collect();
        let labels = (0..n).map(|i| i.to_string()).collect();
        let dend = ward_linkage(&DissimilarityMatrix::euclidean(&pts, labels).unwrap()).unwrap();
        let naive = common::naive_ward(&pts);
        for (m, (l, r, h)) in dend.merges.iter().zip(naive) {
            assert_eq!((m.left, m.right), (l, r));
            assert!((m.height - h).abs() <= 1e-9 * h.max(1.0));
        }
        let total = common::total_sum_of_squares(&pts);
        assert!((dend.heights().sum::<f64>() - total).abs() <= 1e-8);
    }
}

#[test]
fn distance_matrix_matches_double_loop() {
    let mut rng = SplitMix64::new(5);
    let profiles: Vec<RateProfile> = (0..50)
        .map(|i| RateProfile {
            subject_id: format!("s{i}"),
            rates: (0..4).map(|_| rng.next_f64() - 0.5).collect(),
            periods: vec![],
        })
        .collect();
    let d = distance_matrix(&profiles).unwrap();
    for i in 0..50 {
        for j in 0..50 {
            let direct: f64 = profiles[i]
                .rates
                .iter()
                .zip(&profiles[j].rates)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!((d.get(i, j) - direct).abs() <= 1e-12);
        }
    }
}

#[test]
fn spectral_two_sum_near_exhaustive_optimum() {
    let mut rng = SplitMix64::new(8);
    for _ in 0..5 {
        let pts: Vec<Vec<f64>> = (0..8).map(|_| (0..4).map(|_| rng.next_f64() - 0.5).collect()).collect();
        let labels = (0..8).map(|i| format!("s{i}")).collect();
        let d = DissimilarityMatrix::euclidean(&pts, labels).unwrap();
        let s = similarity(&d);
        let rows: Vec<Vec<f64>> = (0..8).map(|i| (0..8).map(|j| s[(i, j)]).collect()).collect();
        let best = common::brute_force_two_sum(&rows);
        let got = two_sum(&s, &spectral_order(&d, &SeriationConfig::default()).unwrap().order);
        assert!(got <= 1.05 * best, "{got} vs optimum {best}");
        assert!(got >= best * (1.0 - 1e-12));
    }
}

#[test]
fn pixmap_round_trips_through_independent_reader() {
    let mut rng = SplitMix64::new(3);
    let rates: Vec<Vec<f64>> = (0..17).map(|_| (0..4).map(|_| rng.next_f64() - 0.5).collect()).collect();
    let cfg = SeriationConfig::default();
    let shades = shade_bin(&rates, 3, BinRule::Symmetric).unwrap();
    let order = RowOrder::new(rng.sample_distinct(17, 17)).unwrap();
    for (scale, format) in [(1, PixmapFormat::Binary), (3, PixmapFormat::Binary), (2, PixmapFormat::Ascii)] {
        let bytes = render_matrix_image(&shades, &order, &cfg, scale, format).unwrap();
        let (w, h, grid) = common::decode_shades(&bytes, &cfg.palette);
        assert_eq!((w as usize, h as usize), (4 * scale, 17 * scale));
        for (y, row) in grid.iter().enumerate() {
            let src = order.indices()[y / scale];
            for (x, &s) in row.iter().enumerate() {
                assert_eq!(s, shades[src][x / scale]);
            }
        }
    }
}

#[test]
fn p_values_match_quadrature() {
    for counts in [[[20u64, 10], [10, 20]], [[5, 9], [12, 3]], [[40, 31], [22, 50]]] {
        let t = ContingencyTable::from_counts(counts.iter().map(|r| r.to_vec()).collect()).unwrap();
        let r = chi_square_test(&t, false).unwrap();
        let want = common::chi_square_upper_tail(r.statistic, 1.0);
        assert!((r.p_value - want).abs() <= 1e-8, "{} vs {want}", r.p_value);
    }
    let t3 = ContingencyTable::from_counts(vec![vec![12, 5, 9], vec![7, 14, 8], vec![3, 9, 15]]).unwrap();
    let r = chi_square_test(&t3, false).unwrap();
    assert_eq!(r.df, Some(4.0));
    assert!((r.p_value - common::chi_square_upper_tail(r.statistic, 4.0)).abs() <= 1e-8);

    let mut rng = SplitMix64::new(41);
    for _ in 0..5 {
        let x: Vec<f64> = (0..(3 + rng.next_below(10))).map(|_| rng.next_normal()).collect();
        let y: Vec<f64> = (0..(3 + rng.next_below(10))).map(|_| 0.7 + rng.next_normal()).collect();
        let r = two_sample_t_test(&x, &y, false).unwrap();
        let want = common::student_two_sided(r.statistic, r.df.unwrap());
        assert!((r.p_value - want).abs() <= 1e-8, "{} vs {want}", r.p_value);
        let groups: Vec<Vec<f64>> = (0..3)
            .map(|g| (0..(2 + rng.next_below(8))).map(|_| 0.3 * g as f64 + rng.next_normal()).collect())
            .collect();
        let f = one_way_anova(&groups).unwrap();
        let want = common::f_upper_tail(f.statistic, f.df.unwrap(), f.df2.unwrap());
        assert!((f.p_value - want).abs() <= 1e-8, "{} vs {want}", f.p_value);
    }
}

#[test]
fn fisher_matches_enumeration() {
    let mut rng = SplitMix64::new(12);
    for _ in 0..40 {
        let c: Vec<u64> = (0..4).map(|_| rng.next_below(15) as u64).collect();
        let t = ContingencyTable::from_counts(vec![vec![c[0], c[1]], vec![c[2], c[3]]]).unwrap();
        if t.total == 0 {
            continue;
        }
        let got = fisher_exact_2x2(&t).unwrap().p_value;
        let want = common::fisher_enumeration(c[0], c[1], c[2], c[3]);
        assert!((got - want).abs() <= 1e-8 * want.max(1e-300) + 1e-12, "{c:?}: {got} vs {want}");
    }
}

fn partition(labels: &[usize]) -> Partition {
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let groups = (0..k)
        .map(|g| Group {
            label: format!("G{g}"),
            subject_ids: labels
                .iter()
                .enumerate()
                .filter(|(_, &l)| l == g)
                .map(|(i, _)| format!("s{i}"))
                .collect(),
        })
        .collect();
    Partition::from_groups("test", BTreeMap::new(), groups).unwrap()
}

#[test]
fn ari_matches_pair_counting() {
    let mut rng = SplitMix64::new(77);
    for _ in 0..200 {
        let n = 2 + rng.next_below(9);
        let (ka, kb) = (1 + rng.next_below(4), 1 + rng.next_below(4));
        let a: Vec<usize> = (0..n).map(|_| rng.next_below(ka)).collect();
        let b: Vec<usize> = (0..n).map(|_| rng.next_below(kb)).collect();
        let got = adjusted_rand_index(&partition(&a), &partition(&b)).unwrap();
        let want = common::pair_counting_ari(&a, &b);
        assert!((got - want).abs() <= 1e-12, "{a:?} {b:?}: {got} vs {want}");
    }
}
