mod common;

use common::{brute_aggregates, brute_per_class};
use posterfuse::dataset::GenreVocabulary;
use posterfuse::metrics::{aggregate_metrics, genre_table, hamming_loss, top_class, PredictionSet};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Instance = (Vec<Vec<bool>>, Vec<Vec<bool>>, Vec<Vec<f64>>);

/// Random instance; `mode` forces the degenerate shapes in rotation.
fn instance(rng: &mut ChaCha8Rng, mode: usize) -> Instance {
    let n = rng.random_range(1..=50);
    let m = rng.random_range(1..=13);
    let density: f64 = rng.random_range(0.05..0.95);
    let mut y: Vec<Vec<bool>> = (0..n).map(|_| (0..m).map(|_| rng.random_bool(density)).collect()).collect();
    let mut s: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..m).map(|_| (rng.random_range(0..5) as f64) / 4.0).collect())
        .collect();
    match mode % 5 {
        0 => y.iter_mut().flatten().for_each(|v| *v = true),
        1 => y.iter_mut().flatten().for_each(|v| *v = false),
        2 => {
            let dead = rng.random_range(0..m);
            y.iter_mut().for_each(|r| r[dead] = false);
        }
        3 => s.iter_mut().flatten().for_each(|v| *v = 0.5),
        _ => {}
    }
    let p = s.iter().map(|r| r.iter().map(|&v| v > 0.5).collect()).collect();
    (y, p, s)
}

#[test]
fn aggregates_and_genre_table_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    for case in 0..500 {
        let (y, p, s) = instance(&mut rng, case);
        let set = PredictionSet::new(y.clone(), p.clone(), s.clone()).unwrap();
        let report = aggregate_metrics(&set).unwrap();
        let want = brute_aggregates(&y, &p, &s);
        let got = report.aggregate_row();
        for k in 0..10 {
            assert!((got[k] - want[k]).abs() <= 1e-12, "case {case} metric {k}: {} vs {}", got[k], want[k]);
        }

        let m = y[0].len();
        let vocab = GenreVocabulary::new((0..m).map(|j| format!("g{j}")).collect()).unwrap();
        let table = genre_table(&set, &vocab).unwrap();
        for (row, want) in table.rows.iter().zip(brute_per_class(&y, &p)) {
            let g = &row.metrics;
            let got = [g.precision, g.recall, g.f1, g.balanced_accuracy, g.specificity];
            for k in 0..5 {
                assert!((got[k] - want[k]).abs() <= 1e-12, "case {case} {} column {k}", row.genre);
            }
        }
        for (j, g) in report.per_genre.iter().enumerate() {
            let support = y.iter().filter(|r| r[j]).count();
            assert_eq!(g.support, support);
            assert_eq!(g.zero_support, support == 0);
        }
    }
}

#[test]
fn single_class_averages_coincide() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let n = rng.random_range(2..30);
        let y: Vec<Vec<bool>> = (0..n).map(|_| vec![rng.random_bool(0.5)]).collect();
        let s: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random::<f64>()]).collect();
        let r = aggregate_metrics(&PredictionSet::from_scores(y, s, 0.5).unwrap()).unwrap();
        if r.per_genre[0].support > 0 {
            assert!((r.f1_macro - r.f1_micro).abs() < 1e-12);
            assert!((r.f1_macro - r.f1_weighted).abs() < 1e-12);
            assert!((r.ba_macro - r.ba_micro).abs() < 1e-12);
        }
    }
}

#[test]
fn equal_support_makes_weighted_equal_macro() {
    let y = vec![vec![true, false, true], vec![false, true, false], vec![true, true, true], vec![false, false, false]];
    let s = vec![vec![0.9, 0.7, 0.1], vec![0.6, 0.2, 0.8], vec![0.4, 0.9, 0.95], vec![0.1, 0.6, 0.3]];
    let r = aggregate_metrics(&PredictionSet::from_scores(y, s, 0.5).unwrap()).unwrap();
    assert!(r.per_genre.iter().all(|g| g.support == 2));
    assert!((r.f1_weighted - r.f1_macro).abs() < 1e-12);
}

#[test]
fn micro_f1_equals_precision_and_recall_when_errors_balance() {
    // One false positive and one false negative overall.
    let y = vec![vec![true, false, true], vec![true, true, false]];
    let p = vec![vec![true, true, true], vec![true, false, false]];
    let s = vec![vec![0.9; 3], vec![0.9; 3]];
    let set = PredictionSet::new(y, p, s).unwrap();
    let c = posterfuse::metrics::pooled_counts(&set);
    assert_eq!(c.fp, c.fn_);
    let r = aggregate_metrics(&set).unwrap();
    assert!((r.f1_micro - 100.0 * c.precision()).abs() < 1e-12);
    assert!((r.f1_micro - 100.0 * c.recall()).abs() < 1e-12);
}

#[test]
fn hit_ratio_ties_go_to_lowest_index() {
    assert_eq!(top_class(&[0.3, 0.7, 0.7]), 1);
    assert_eq!(top_class(&[0.5, 0.5]), 0);
    let y = vec![vec![false, true, true]];
    let s = vec![vec![0.2, 0.2, 0.2]];
    let r = aggregate_metrics(&PredictionSet::from_scores(y, s, 0.5).unwrap()).unwrap();
    assert_eq!(r.hit_ratio, 0.0);
}

#[test]
fn genre_table_rejects_vocabulary_mismatch() {
    let set = PredictionSet::from_scores(vec![vec![true, false]], vec![vec![0.9, 0.1]], 0.5).unwrap();
    assert!(genre_table(&set, &GenreVocabulary::default()).is_err());
}

#[test]
fn perfect_table_is_all_hundred() {
    let y = vec![vec![true, false], vec![false, true]];
    let s = vec![vec![0.9, 0.1], vec![0.2, 0.8]];
    let set = PredictionSet::from_scores(y, s, 0.5).unwrap();
    let vocab = GenreVocabulary::new(vec!["a".into(), "b".into()]).unwrap();
    for row in genre_table(&set, &vocab).unwrap().rows {
        let g = row.metrics;
        assert_eq!([g.precision, g.recall, g.f1, g.balanced_accuracy, g.specificity], [100.0; 5]);
    }
}

#[test]
fn sorting_by_balanced_accuracy_is_descending() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (y, p, s) = instance(&mut rng, 4);
    let m = y[0].len();
    let set = PredictionSet::new(y, p, s).unwrap();
    let vocab = GenreVocabulary::new((0..m).map(|j| format!("g{j}")).collect()).unwrap();
    let mut t = genre_table(&set, &vocab).unwrap();
    t.sort_by_balanced_accuracy();
    assert!(t.rows.windows(2).all(|w| w[0].metrics.balanced_accuracy >= w[1].metrics.balanced_accuracy));
    assert!(t.to_text().lines().nth(1).unwrap().starts_with("BA"));
}

fn labels(n: usize, m: usize) -> impl Strategy<Value = Vec<Vec<bool>>> {
    prop::collection::vec(prop::collection::vec(any::<bool>(), m), n)
}

proptest! {
    #[test]
    fn hamming_extremes(y in (1usize..20, 1usize..8).prop_flat_map(|(n, m)| labels(n, m))) {
        let s: Vec<Vec<f64>> = y.iter().map(|r| r.iter().map(|_| 0.5).collect()).collect();
        let same = PredictionSet::new(y.clone(), y.clone(), s.clone()).unwrap();
        prop_assert_eq!(hamming_loss(&same), 0.0);
        let flipped: Vec<Vec<bool>> = y.iter().map(|r| r.iter().map(|b| !b).collect()).collect();
        let opposite = PredictionSet::new(y, flipped, s).unwrap();
        prop_assert_eq!(hamming_loss(&opposite), 1.0);
    }

    #[test]
    fn permutation_invariance(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (y, p, s) = instance(&mut rng, 4);
        let base = aggregate_metrics(&PredictionSet::new(y.clone(), p.clone(), s.clone()).unwrap()).unwrap();

        let mut order: Vec<usize> = (0..y.len()).collect();
        order.reverse();
        let pick = |v: &Vec<Vec<bool>>| order.iter().map(|&i| v[i].clone()).collect::<Vec<_>>();
        let rows = aggregate_metrics(&PredictionSet::new(
            pick(&y), pick(&p), order.iter().map(|&i| s[i].clone()).collect()).unwrap()).unwrap();
        for (a, b) in base.aggregate_row().iter().zip(rows.aggregate_row()) {
            prop_assert!((a - b).abs() < 1e-9);
        }

        // Reversing classes changes hit-ratio ties, so use tie-free scores.
        let m = y[0].len();
        let s_unique: Vec<Vec<f64>> = s
            .iter()
            .enumerate()
            .map(|(i, r)| r.iter().enumerate().map(|(j, v)| v + 1e-6 * ((i * m + j) as f64 + 1.0) / (y.len() * m) as f64).collect())
            .collect();
        let p_unique: Vec<Vec<bool>> = s_unique.iter().map(|r| r.iter().map(|&v| v > 0.5).collect()).collect();
        let rev = |v: &Vec<Vec<bool>>| v.iter().map(|r| r.iter().rev().cloned().collect()).collect::<Vec<Vec<bool>>>();
        let a = aggregate_metrics(&PredictionSet::new(y.clone(), p_unique.clone(), s_unique.clone()).unwrap()).unwrap();
        let b = aggregate_metrics(&PredictionSet::new(
            rev(&y), rev(&p_unique), s_unique.iter().map(|r| r.iter().rev().cloned().collect()).collect()).unwrap()).unwrap();
        for (x, z) in a.aggregate_row().iter().zip(b.aggregate_row()) {
            prop_assert!((x - z).abs() < 1e-9);
        }
    }
}
