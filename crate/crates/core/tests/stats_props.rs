mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sdnlb::stats::{
    f_critical, f_test, find_pair, lsd_threshold, lsd_threshold_pair, multiple_comparisons,
    sum_squares, t_critical, t_test_pair, Group, SampleGroups,
};

use common::rel_close;

fn groups_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(0.0f64..1000.0, 2..=20), 2..=6)
}

fn sg(data: &[Vec<f64>]) -> SampleGroups {
    SampleGroups::from_vecs(data.to_vec()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn sums_of_squares_decompose(data in groups_strategy()) {
        let ss = sum_squares(&sg(&data));
        prop_assert!((ss.total - ss.between - ss.within).abs() <= 1e-9 * ss.total.max(1.0));
        let o = common::anova(&data);
        prop_assert!(rel_close(ss.total, o.ss_t, 1e-9));
        prop_assert!(rel_close(ss.between, o.ss_b, 1e-9));
        prop_assert!(rel_close(ss.within, o.ss_w, 1e-9));
    }

    #[test]
    fn shift_leaves_anova_unchanged(data in groups_strategy(), c in 0.0f64..1000.0) {
        let base = f_test(&sg(&data), 0.05).unwrap();
        let shifted = f_test(&sg(&data).map_samples(|x| x + c).unwrap(), 0.05).unwrap();
        prop_assert!(rel_close(base.ss_b, shifted.ss_b, 1e-9));
        prop_assert!(rel_close(base.ss_w, shifted.ss_w, 1e-9));
        prop_assert!(rel_close(base.f_value, shifted.f_value, 1e-9));
    }

    #[test]
    fn scaling_scales_sums_and_keeps_f(data in groups_strategy(), s in 0.01f64..100.0) {
        let base = f_test(&sg(&data), 0.05).unwrap();
        let scaled = f_test(&sg(&data).map_samples(|x| x * s).unwrap(), 0.05).unwrap();
        let s2 = s * s;
        prop_assert!(rel_close(base.ss_t * s2, scaled.ss_t, 1e-9));
        prop_assert!(rel_close(base.ss_b * s2, scaled.ss_b, 1e-9));
        prop_assert!(rel_close(base.ss_w * s2, scaled.ss_w, 1e-9));
        prop_assert!(rel_close(base.f_value, scaled.f_value, 1e-9));
    }

    #[test]
    fn comparisons_are_symmetric(data in groups_strategy()) {
        let fwd = multiple_comparisons(&sg(&data), 0.05).unwrap();
        let reversed: Vec<Group> = data
            .iter()
            .enumerate()
            .rev()
            .map(|(i, g)| Group::new(i as u32, g.clone()))
            .collect();
        let rev = multiple_comparisons(&SampleGroups::new(reversed).unwrap(), 0.05).unwrap();
        let k = data.len() as u32;
        prop_assert_eq!(fwd.len() as u32, k * (k - 1) / 2);
        for i in 0..k {
            for j in 0..k {
                if i == j {
                    continue;
                }
                let a = find_pair(&fwd, i, j).unwrap();
                let b = find_pair(&rev, j, i).unwrap();
                prop_assert_eq!(a.significant, b.significant);
                prop_assert!(rel_close(a.mean_diff, b.mean_diff, 1e-12));
            }
        }
        let keys: Vec<_> = fwd.iter().map(|c| c.pair).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        prop_assert_eq!(keys, sorted);
    }

    #[test]
    fn critical_values_match_reference(alpha in 0.001f64..0.5, df in 1u64..500, df1 in 1u64..20) {
        let t = t_critical(alpha, df).unwrap();
        prop_assert!(rel_close(t, common::t_crit(alpha, df as f64), 1e-6), "t {t}");
        let f = f_critical(alpha, df1, df).unwrap();
        prop_assert!(rel_close(f, common::f_crit(alpha, df1 as f64, df as f64), 1e-6), "f {f}");
    }
}

#[test]
fn f_of_one_numerator_df_is_t_squared() {
    for d in 1..=100 {
        let t = t_critical(0.05, d).unwrap();
        let f = f_critical(0.05, 1, d).unwrap();
        assert!(rel_close(f, t * t, 1e-6), "df {d}: {f} vs {}", t * t);
    }
}

#[test]
fn critical_values_shrink_with_df() {
    let mut prev_t = f64::INFINITY;
    let mut prev_f = f64::INFINITY;
    for d in [1, 2, 3, 5, 8, 13, 30, 100, 1000, 100_000] {
        let t = t_critical(0.05, d).unwrap();
        let f = f_critical(0.05, 3, d).unwrap();
        assert!(t < prev_t && f < prev_f);
        prev_t = t;
        prev_f = f;
    }
    assert!((prev_t - 1.96).abs() < 1e-3);
}

#[test]
fn anova_and_lsd_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..200 {
        let data = common::random_groups(&mut rng);
        let groups = sg(&data);
        let o = common::anova(&data);
        let r = f_test(&groups, 0.05).unwrap();
        assert!(rel_close(r.f_value, o.f, 1e-9), "{} vs {}", r.f_value, o.f);
        assert!(rel_close(r.ms_w, o.ms_w, 1e-9));
        assert!(rel_close(
            r.f_critical,
            common::f_crit(0.05, o.df_b, o.df_w),
            1e-6
        ));
        let cmp = multiple_comparisons(&groups, 0.05).unwrap();
        for p in common::lsd_pairs(&data, 0.05) {
            let c = find_pair(&cmp, p.i as u32, p.j as u32).unwrap();
            assert!(rel_close(c.t_value, p.t, 1e-9));
            assert!(rel_close(c.lsd_threshold, p.lsd, 1e-6));
            assert_eq!(c.significant, p.significant);
            let t = t_test_pair(&data[p.i], &data[p.j], r.ms_w, r.df_w).unwrap();
            assert!(rel_close(t, p.t, 1e-9));
            let d =
                lsd_threshold_pair(0.05, r.df_w, r.ms_w, data[p.i].len(), data[p.j].len()).unwrap();
            assert!(rel_close(d, p.lsd, 1e-6));
        }
    }
}

#[test]
fn lsd_reference_points() {
    // two-tailed t(0.05) from printed tables: 2.7764 at df 4, 2.2281 at df 10
    let d = lsd_threshold(0.05, 4, 1.0, 3).unwrap();
    assert!((d - 2.7764 * (2.0f64 / 3.0).sqrt()).abs() < 1e-3);
    let d = lsd_threshold(0.05, 10, 2.0, 5).unwrap();
    assert!((d - 2.2281 * 0.8f64.sqrt()).abs() < 1e-3);
    assert_eq!(lsd_threshold(0.05, 10, 0.0, 5).unwrap(), 0.0);
    assert!(lsd_threshold(1.5, 10, 1.0, 5).is_err());
}

#[test]
fn separated_levels_flag_exactly_the_split_pairs() {
    let data = vec![vec![1.0; 3], vec![1.0; 3], vec![10.0; 3]];
    let cmp = multiple_comparisons(&sg(&data), 0.05).unwrap();
    let flagged: Vec<_> = cmp
        .iter()
        .filter(|c| c.significant)
        .map(|c| c.pair)
        .collect();
    assert_eq!(flagged, vec![(0, 2), (1, 2)]);
}

#[test]
fn degenerate_within_variance() {
    let r = f_test(&sg(&[vec![1.0; 3], vec![9.0; 3]]), 0.05).unwrap();
    assert!(r.f_value.is_infinite() && r.significant);
    let r = f_test(&sg(&[vec![5.0; 2], vec![5.0; 2]]), 0.05).unwrap();
    assert_eq!(r.f_value, 0.0);
    assert!(!r.significant);
    let r = f_test(&sg(&[vec![0.0; 4], vec![0.0; 4], vec![0.0; 4]]), 0.05).unwrap();
    assert_eq!(r.f_value, 0.0);
}
