mod common;

use common::checks::worst_p_gap;
use common::{ks_d, ks_permutation_p};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use teleop_core::experiment::stats::{ks_asymptotic_p, ks_statistic, ks_two_sample};

#[test]
fn p_values_match_label_enumeration() {
    let gap = worst_p_gap(8, 3, 12);
    assert!(gap <= 0.02, "worst |dp| = {gap}");
}

#[test]
fn interleaved_example() {
    let a = [1.0, 2.0, 3.0, 4.0];
    let b = [1.5, 2.5, 3.5, 4.5];
    let r = ks_two_sample(&a, &b).unwrap();
    assert!((r.d - 0.25).abs() < 1e-15);
    // all C(8, 4) = 70 labellings
    assert!((r.p - ks_permutation_p(&a, &b)).abs() < 1e-12);
    assert!((r.p - 1.0).abs() < 1e-12);
}

/// Permutation p-value from `draws` random relabellings.
fn sampled_permutation_p(a: &[f64], b: &[f64], draws: usize, rng: &mut ChaCha8Rng) -> f64 {
    use rand::seq::SliceRandom;
    let d_obs = ks_d(a, b);
    let mut pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let hits = (0..draws)
        .filter(|_| {
            pooled.shuffle(rng);
            let (x, y) = pooled.split_at(a.len());
            ks_statistic(x, y) >= d_obs - 1e-12
        })
        .count();
    hits as f64 / draws as f64
}

#[test]
fn asymptotic_tail_matches_sampled_permutations_beyond_the_exact_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for k in 0..12 {
        let (n, m) = (20 + k, 30 - k);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let b: Vec<f64> = (0..m).map(|_| rng.random_range(0.15..1.15)).collect();
        let got = ks_two_sample(&a, &b).unwrap();
        assert_eq!(got.p, ks_asymptotic_p(got.d, n, m));
        let oracle = sampled_permutation_p(&a, &b, 20_000, &mut rng);
        assert!((got.p - oracle).abs() < 0.05, "n={n} m={m}: {} vs {oracle}", got.p);
    }
}

#[test]
fn empty_samples_are_errors() {
    assert!(ks_two_sample(&[], &[1.0]).is_err());
    assert!(ks_two_sample(&[1.0], &[]).is_err());
}

proptest! {
    #[test]
    fn zero_gap_iff_same_values(a in prop::collection::vec(0u8..20, 1..12)) {
        let a: Vec<f64> = a.into_iter().map(f64::from).collect();
        let mut shuffled = a.clone();
        shuffled.reverse();
        prop_assert_eq!(ks_statistic(&a, &shuffled), 0.0);
        let mut other = a.clone();
        other[0] += 0.5;
        prop_assert!(ks_statistic(&a, &other) > 0.0);
    }

    #[test]
    fn disjoint_supports_give_one(a in prop::collection::vec(0.0f64..1.0, 1..15), b in prop::collection::vec(2.0f64..3.0, 1..15)) {
        prop_assert_eq!(ks_statistic(&a, &b), 1.0);
        prop_assert_eq!(ks_statistic(&b, &a), 1.0);
    }

    #[test]
    fn statistic_matches_definition(a in prop::collection::vec(-5i8..5, 1..20), b in prop::collection::vec(-5i8..5, 1..20)) {
        let a: Vec<f64> = a.into_iter().map(f64::from).collect();
        let b: Vec<f64> = b.into_iter().map(f64::from).collect();
        prop_assert!((ks_statistic(&a, &b) - ks_d(&a, &b)).abs() < 1e-12);
        let p = ks_two_sample(&a, &b).unwrap().p;
        prop_assert!((0.0..=1.0).contains(&p));
    }
}
