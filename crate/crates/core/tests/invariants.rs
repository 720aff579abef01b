use std::collections::BTreeSet;

use jdp_core::dataset::{Cohort, LongitudinalRecord, SurvivalRecord};
use jdp_core::scoring::{brier, subject_loss};
use jdp_core::similarity::{cosine, rank_similar, select_subpopulation, FeatureSet, FeatureVector};
use proptest::prelude::*;

/// Cohort of `n` subjects with measurements on a 0.5 grid before each
/// observed time.
fn cohort_strategy() -> impl Strategy<Value = Cohort> {
    prop::collection::vec((0.1f64..10.0, any::<bool>(), -3.0f64..3.0, -5.0f64..5.0), 2..40).prop_map(|rows| {
        let mut surv = Vec::new();
        let mut long = Vec::new();
        for (i, (obs, event, w, y)) in rows.into_iter().enumerate() {
            let id = format!("S{i:03}");
            let mut t = 0.0;
            while t < obs {
                long.push(LongitudinalRecord { subject_id: id.clone(), time: t, value: y + t });
                t += 0.5;
            }
            surv.push(SurvivalRecord { subject_id: id, observed_time: obs, event, covariates: vec![w] });
        }
        Cohort::new(vec!["w".into()], surv, long).unwrap()
    })
}

fn nonzero_vec(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1e3f64..1e3, dim).prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-6))
}

proptest! {
    #[test]
    fn kfold_partitions_every_subject_once(c in cohort_strategy(), k in 2usize..6, seed in any::<u64>()) {
        prop_assume!(k <= c.len());
        let folds = c.kfold_split(k, seed).unwrap();
        let mut seen = BTreeSet::new();
        let mut sizes = vec![0usize; k];
        for (f, size) in sizes.iter_mut().enumerate() {
            let (train, test) = c.split_fold(&folds, f);
            prop_assert_eq!(train.len() + test.len(), c.len());
            *size = test.len();
            for id in test.ids() {
                prop_assert!(seen.insert(id.to_string()));
            }
        }
        prop_assert_eq!(seen.len(), c.len());
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        prop_assert_eq!(folds, c.kfold_split(k, seed).unwrap());
    }

    #[test]
    fn truncation_is_idempotent(c in cohort_strategy(), t in 0.2f64..6.0) {
        if let Ok(once) = c.truncate_history(t) {
            for s in once.subjects() {
                prop_assert!(s.observed_time > t);
                prop_assert!(s.measurements.iter().all(|m| m.time <= t));
            }
            prop_assert_eq!(once.truncate_history(t).unwrap(), once);
        }
    }

    #[test]
    fn losses_and_brier_lie_in_unit_interval(
        rows in prop::collection::vec((1.0f64..8.0, any::<bool>(), 0.0f64..=1.0, 0.0f64..=1.0), 1..30),
    ) {
        let (t, u) = (1.0, 4.0);
        let losses: Vec<_> = rows
            .iter()
            .enumerate()
            .map(|(i, (obs, ev, p, q))| subject_loss(&format!("S{i}"), *obs, *ev, *p, Some(*q), t, u).unwrap())
            .collect();
        for l in &losses {
            prop_assert!((0.0..=1.0).contains(&l.loss));
        }
        let b = brier(&losses, losses.len(), t, u).unwrap();
        prop_assert!((0.0..=1.0).contains(&b.value));
    }

    #[test]
    fn cosine_bounds_symmetry_and_scale(a in nonzero_vec(5), b in nonzero_vec(5), s in 1e-3f64..1e3) {
        let c = cosine(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&c));
        prop_assert_eq!(c, cosine(&b, &a).unwrap());
        prop_assert_eq!(cosine(&a, &a).unwrap(), 1.0);
        let scaled: Vec<f64> = a.iter().map(|x| x * s).collect();
        prop_assert!((cosine(&scaled, &b).unwrap() - c).abs() <= 1e-12);
        let neg: Vec<f64> = a.iter().map(|x| -x).collect();
        prop_assert!((cosine(&neg, &a).unwrap() + 1.0).abs() <= 1e-12);
    }

    #[test]
    fn subpopulations_are_nested(
        index in nonzero_vec(3),
        train in prop::collection::vec(nonzero_vec(3), 5..60),
        lo in 0.05f64..1.0,
        hi in 0.05f64..1.0,
    ) {
        let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        let set = FeatureSet {
            columns: vec!["a".into(), "b".into(), "c".into()],
            vectors: train.iter().enumerate().map(|(i, v)| FeatureVector { subject_id: format!("T{i:02}"), values: v.clone() }).collect(),
        };
        let ranking = rank_similar(&FeatureVector { subject_id: "I".into(), values: index }, &set).unwrap();
        let small = select_subpopulation(&ranking, lo, train.len()).unwrap();
        let large = select_subpopulation(&ranking, hi, train.len()).unwrap();
        prop_assert!(small.len() <= large.len());
        prop_assert_eq!(&large[..small.len()], &small[..]);
    }
}
