use std::collections::BTreeMap;

use fairsim_core::embedstore::DenseSource;
use fairsim_core::simcore::{cosine, recall_at_k, similarity_set, top_k, PairedQueries};
use fairsim_core::Error;
use proptest::prelude::*;

fn nonzero(v: &[f64]) -> bool {
    v.iter().any(|x| x.abs() > 1e-3)
}

fn source(rows: Vec<Vec<f64>>) -> DenseSource {
    DenseSource::new(rows, BTreeMap::new()).unwrap()
}

proptest! {
    #[test]
    fn cosine_is_scale_invariant(
        v in prop::collection::vec(-5.0f64..5.0, 1..16),
        alpha in 1e-3f64..1e3,
        beta in 1e-3f64..1e3,
        seed in prop::collection::vec(-5.0f64..5.0, 16),
    ) {
        let l = &seed[..v.len()];
        prop_assume!(nonzero(&v) && nonzero(l));
        let a: Vec<f64> = v.iter().map(|x| alpha * x).collect();
        let b: Vec<f64> = l.iter().map(|x| beta * x).collect();
        prop_assert!((cosine(&v, l).unwrap() - cosine(&a, &b).unwrap()).abs() <= 1e-12);
        prop_assert_eq!(cosine(&v, l).unwrap(), cosine(l, &v).unwrap());
    }

    #[test]
    fn top_all_is_a_sorted_permutation(
        rows in prop::collection::vec(prop::collection::vec(-2i8..=2, 3), 1..80),
        q in prop::collection::vec(-2i8..=2, 3),
    ) {
        let rows: Vec<Vec<f64>> = rows.into_iter().map(|r| r.into_iter().map(f64::from).collect()).collect();
        let q: Vec<f64> = q.into_iter().map(f64::from).collect();
        prop_assume!(rows.iter().all(|r| nonzero(r)) && nonzero(&q));
        let n = rows.len();
        let set = similarity_set(&source(rows), &q).unwrap();
        prop_assert_eq!(set.scores.len(), n);
        prop_assert!(set.scores.iter().all(|s| (-1.0 - 1e-9..=1.0 + 1e-9).contains(s)));
        let ranked = top_k(&set, n).ranked;
        let mut seen: Vec<usize> = ranked.iter().map(|p| p.0).collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
        for w in ranked.windows(2) {
            prop_assert!(w[0].1 > w[1].1 || (w[0].1 == w[1].1 && w[0].0 < w[1].0));
        }
    }

    #[test]
    fn top_k_is_a_prefix_of_top_all(
        rows in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 1..60),
        k in 1usize..100,
    ) {
        prop_assume!(rows.iter().all(|r| nonzero(r)));
        let set = similarity_set(&source(rows), &[1.0, 0.5, 0.0, -0.5]).unwrap();
        let all = top_k(&set, set.scores.len()).ranked;
        let some = top_k(&set, k).ranked;
        prop_assert_eq!(some.len(), k.min(all.len()));
        prop_assert_eq!(&all[..some.len()], &some[..]);
    }
}

#[test]
fn parallel_similarity_matches_serial() {
    let rows: Vec<Vec<f64>> = (0..5000).map(|i| vec![(i as f64).sin(), (i as f64 * 0.7).cos(), 0.3]).collect();
    let src = source(rows);
    let q = [0.2, -1.0, 0.4];
    let parallel = similarity_set(&src, &q).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let serial = pool.install(|| similarity_set(&src, &q).unwrap());
    assert_eq!(parallel.scores.iter().map(|s| s.to_bits()).collect::<Vec<_>>(), serial.scores.iter().map(|s| s.to_bits()).collect::<Vec<_>>());
}

#[test]
fn ties_break_by_row() {
    let src = source(vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![2.0, 0.0], vec![0.0, -1.0]]);
    let ranked = top_k(&similarity_set(&src, &[1.0, 0.0]).unwrap(), 4).rows();
    assert_eq!(ranked, vec![1, 2, 0, 3]);
}

#[test]
fn recall_counts_hits() {
    let src = source(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]);
    let queries = PairedQueries {
        texts: vec![vec![1.0, 0.1], vec![1.0, 0.1]],
        image_rows: vec![Some(0), Some(1)],
    };
    let r = recall_at_k(&src, &queries, &[1, 3]).unwrap();
    assert_eq!(r.recall[&1], 50.0);
    assert_eq!(r.recall[&3], 100.0);
    assert_eq!(r.mean_error, 25.0);
}

#[test]
fn recall_requires_ground_truth() {
    let src = source(vec![vec![1.0, 0.0]]);
    let queries = PairedQueries { texts: vec![vec![1.0, 0.0]], image_rows: vec![None] };
    assert!(matches!(recall_at_k(&src, &queries, &[1]), Err(Error::MissingGroundTruth { row: 0 })));
}

#[test]
fn zero_vectors_are_rejected() {
    assert!(matches!(cosine(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroVector)));
    assert!(matches!(cosine(&[1.0], &[1.0, 0.0]), Err(Error::DimMismatch { .. })));
}
