//! Cohort data model: per-subject survival records with their biomarker
//! histories, plus the splitting and truncation operations used by the
//! cross-validation loop.
//!
//! Subjects are kept sorted by id (lexicographic), and each subject's
//! measurements are sorted by time. All deterministic iteration in the crate
//! follows that order.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::round_half_even;
use crate::seed::rng_from;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("integrity error for subject {subject_id:?}: {reason}")]
    Integrity { subject_id: String, reason: String },
    #[error("duplicate survival record for subject {0:?}")]
    DuplicateSubject(String),
    #[error("duplicate measurement for subject {subject_id:?} at time {time}")]
    DuplicateMeasurement { subject_id: String, time: f64 },
    #[error("subject {subject_id:?} has {found} covariates, schema has {expected}")]
    CovariateArity { subject_id: String, expected: usize, found: usize },
    #[error("no subject is still at risk after t = {t}")]
    EmptyResult { t: f64 },
    #[error("invalid landmark time {0}; must be positive")]
    InvalidTime(f64),
    #[error("fold count {k} out of range for {n} subjects (need 2 <= K <= n)")]
    FoldCount { k: usize, n: usize },
    #[error("stratum {stratum} needs {needed} subjects but only {available} are available")]
    Stratum { stratum: &'static str, needed: usize, available: usize },
    #[error("event rate {0} outside [0, 1]")]
    EventRate(f64),
    #[error("unknown subject {0:?}")]
    UnknownSubject(String),
}

/// One biomarker measurement `Y_ij`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongitudinalRecord {
    pub subject_id: String,
    pub time: f64,
    pub value: f64,
}

/// Observed follow-up for one subject: `T_i = min(C_i, T*_i)`, the event
/// indicator and the baseline covariates `w_i` (in schema order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    pub subject_id: String,
    pub observed_time: f64,
    pub event: bool,
    pub covariates: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub time: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub id: String,
    pub observed_time: f64,
    pub event: bool,
    pub covariates: Vec<f64>,
    /// Sorted by time, all strictly before `observed_time`.
    pub measurements: Vec<Measurement>,
}

impl Subject {
    pub fn at_risk(&self, t: f64) -> bool {
        self.observed_time >= t
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.measurements.iter().map(|m| m.time)
    }

    /// Copy of the subject with measurements restricted to `time <= t`.
    pub fn history_until(&self, t: f64) -> Subject {
        Subject {
            id: self.id.clone(),
            observed_time: self.observed_time,
            event: self.event,
            covariates: self.covariates.clone(),
            measurements: self.measurements.iter().copied().filter(|m| m.time <= t).collect(),
        }
    }
}

/// An immutable cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    covariate_names: Vec<String>,
    subjects: Vec<Subject>,
}

impl Cohort {
    /// Builds a cohort from flat records, checking every invariant: unique
    /// subject ids, unique `(subject, time)` pairs, finite values, matching
    /// covariate arity, every measurement owned by a known subject, every
    /// subject with at least one measurement, and measurement times strictly
    /// before the observed time.
    pub fn new(
        covariate_names: Vec<String>,
        survival: Vec<SurvivalRecord>,
        longitudinal: Vec<LongitudinalRecord>,
    ) -> Result<Self, DataError> {
        let mut by_id: BTreeMap<String, Subject> = BTreeMap::new();
        for rec in survival {
            validate_survival(&rec, covariate_names.len())?;
            let id = rec.subject_id.clone();
            if by_id.contains_key(&id) {
                return Err(DataError::DuplicateSubject(id));
            }
            by_id.insert(
                id.clone(),
                Subject {
                    id,
                    observed_time: rec.observed_time,
                    event: rec.event,
                    covariates: rec.covariates,
                    measurements: Vec::new(),
                },
            );
        }
        for rec in longitudinal {
            let Some(subject) = by_id.get_mut(&rec.subject_id) else {
                return Err(DataError::Integrity {
                    subject_id: rec.subject_id,
                    reason: "measurement references a subject with no survival record".into(),
                });
            };
            if !(rec.time >= 0.0) || !rec.time.is_finite() || !rec.value.is_finite() {
                return Err(DataError::Integrity {
                    subject_id: rec.subject_id,
                    reason: alloc::format!("invalid measurement (time {}, value {})", rec.time, rec.value),
                });
            }
            if rec.time >= subject.observed_time {
                return Err(DataError::Integrity {
                    subject_id: rec.subject_id,
                    reason: alloc::format!(
                        "measurement at time {} is not before observed time {}",
                        rec.time, subject.observed_time
                    ),
                });
            }
            subject.measurements.push(Measurement { time: rec.time, value: rec.value });
        }
        let mut subjects: Vec<Subject> = by_id.into_values().collect();
        for s in &mut subjects {
            if s.measurements.is_empty() {
                return Err(DataError::Integrity {
                    subject_id: s.id.clone(),
                    reason: "subject has no longitudinal measurements".into(),
                });
            }
            s.measurements.sort_by(|a, b| a.time.total_cmp(&b.time));
            if let Some(w) = s.measurements.windows(2).find(|w| w[0].time == w[1].time) {
                return Err(DataError::DuplicateMeasurement { subject_id: s.id.clone(), time: w[0].time });
            }
        }
        Ok(Cohort { covariate_names, subjects })
    }

    /// Cohort with survival data only (no biomarker), e.g. for fitting the
    /// survival submodel alone.
    pub fn survival_only(covariate_names: Vec<String>, survival: Vec<SurvivalRecord>) -> Result<Self, DataError> {
        let mut subjects = Vec::with_capacity(survival.len());
        for rec in survival {
            validate_survival(&rec, covariate_names.len())?;
            subjects.push(Subject {
                id: rec.subject_id,
                observed_time: rec.observed_time,
                event: rec.event,
                covariates: rec.covariates,
                measurements: Vec::new(),
            });
        }
        subjects.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = subjects.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(DataError::DuplicateSubject(w[0].id.clone()));
        }
        Ok(Cohort { covariate_names, subjects })
    }

    /// Internal constructor for derived cohorts; `subjects` must already be
    /// sorted by id and individually valid.
    pub(crate) fn from_sorted(covariate_names: Vec<String>, subjects: Vec<Subject>) -> Self {
        debug_assert!(subjects.windows(2).all(|w| w[0].id < w[1].id));
        Cohort { covariate_names, subjects }
    }

    pub fn empty(covariate_names: Vec<String>) -> Self {
        Cohort { covariate_names, subjects: Vec::new() }
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn n_measurements(&self) -> usize {
        self.subjects.iter().map(|s| s.measurements.len()).sum()
    }

    pub fn n_events(&self) -> usize {
        self.subjects.iter().filter(|s| s.event).count()
    }

    pub fn get(&self, id: &str) -> Option<&Subject> {
        self.subjects.binary_search_by(|s| s.id.as_str().cmp(id)).ok().map(|i| &self.subjects[i])
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.subjects.iter().map(|s| s.id.as_str())
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|n| n == name)
    }

    /// Flat records in deterministic order (subjects by id, measurements by
    /// time).
    pub fn to_records(&self) -> (Vec<SurvivalRecord>, Vec<LongitudinalRecord>) {
        let mut surv = Vec::with_capacity(self.len());
        let mut long = Vec::with_capacity(self.n_measurements());
        for s in &self.subjects {
            surv.push(SurvivalRecord {
                subject_id: s.id.clone(),
                observed_time: s.observed_time,
                event: s.event,
                covariates: s.covariates.clone(),
            });
            for m in &s.measurements {
                long.push(LongitudinalRecord { subject_id: s.id.clone(), time: m.time, value: m.value });
            }
        }
        (surv, long)
    }

    /// Subjects still under observation after `t`, with measurements up to
    /// and including `t`.
    pub fn truncate_history(&self, t: f64) -> Result<Cohort, DataError> {
        if !(t > 0.0) {
            return Err(DataError::InvalidTime(t));
        }
        let subjects: Vec<Subject> =
            self.subjects.iter().filter(|s| s.observed_time > t).map(|s| s.history_until(t)).collect();
        if subjects.is_empty() {
            return Err(DataError::EmptyResult { t });
        }
        Ok(Cohort::from_sorted(self.covariate_names.clone(), subjects))
    }

    /// Every subject, with measurements restricted to `time <= t`.
    pub fn history_until(&self, t: f64) -> Cohort {
        Cohort::from_sorted(
            self.covariate_names.clone(),
            self.subjects.iter().map(|s| s.history_until(t)).collect(),
        )
    }

    pub fn filter<F: FnMut(&Subject) -> bool>(&self, mut keep: F) -> Cohort {
        Cohort::from_sorted(
            self.covariate_names.clone(),
            self.subjects.iter().filter(|s| keep(s)).cloned().collect(),
        )
    }

    /// Sub-cohort with the given ids (any order, duplicates ignored).
    pub fn subset<S: AsRef<str>>(&self, ids: &[S]) -> Result<Cohort, DataError> {
        let mut idx = Vec::with_capacity(ids.len());
        for id in ids {
            let id = id.as_ref();
            let i = self
                .subjects
                .binary_search_by(|s| s.id.as_str().cmp(id))
                .map_err(|_| DataError::UnknownSubject(id.to_string()))?;
            idx.push(i);
        }
        idx.sort_unstable();
        idx.dedup();
        Ok(Cohort::from_sorted(self.covariate_names.clone(), idx.into_iter().map(|i| self.subjects[i].clone()).collect()))
    }

    /// Disjoint union of two cohorts with the same schema.
    pub fn merge(&self, other: &Cohort) -> Result<Cohort, DataError> {
        let mut subjects: Vec<Subject> = self.subjects.iter().chain(other.subjects.iter()).cloned().collect();
        subjects.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = subjects.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(DataError::DuplicateSubject(w[0].id.clone()));
        }
        Ok(Cohort::from_sorted(self.covariate_names.clone(), subjects))
    }

    /// Random K-fold assignment: subjects (in id order) are shuffled with the
    /// seed and dealt round-robin, so fold sizes differ by at most one.
    pub fn kfold_split(&self, k: usize, seed: u64) -> Result<FoldAssignment, DataError> {
        let n = self.len();
        if k < 2 || k > n {
            return Err(DataError::FoldCount { k, n });
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng_from(seed));
        let mut fold = alloc::vec![0usize; n];
        for (pos, &i) in order.iter().enumerate() {
            fold[i] = pos % k;
        }
        Ok(FoldAssignment {
            k,
            assignment: self.subjects.iter().map(|s| s.id.clone()).zip(fold).collect(),
        })
    }

    /// `(training, testing)` cohorts for one fold.
    pub fn split_fold(&self, folds: &FoldAssignment, fold: usize) -> (Cohort, Cohort) {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for s in &self.subjects {
            match folds.fold_of(&s.id) {
                Some(f) if f == fold => test.push(s.clone()),
                _ => train.push(s.clone()),
            }
        }
        (
            Cohort::from_sorted(self.covariate_names.clone(), train),
            Cohort::from_sorted(self.covariate_names.clone(), test),
        )
    }

    /// Sample `n` subjects without replacement such that
    /// `round(event_rate * n)` of them had the event.
    pub fn stratified_sample(&self, n: usize, event_rate: f64, seed: u64) -> Result<Cohort, DataError> {
        if !(0.0..=1.0).contains(&event_rate) {
            return Err(DataError::EventRate(event_rate));
        }
        let n_events = round_half_even(event_rate * n as f64) as usize;
        let n_censored = n - n_events;
        let mut events: Vec<usize> = (0..self.len()).filter(|&i| self.subjects[i].event).collect();
        let mut censored: Vec<usize> = (0..self.len()).filter(|&i| !self.subjects[i].event).collect();
        if events.len() < n_events {
            return Err(DataError::Stratum { stratum: "event", needed: n_events, available: events.len() });
        }
        if censored.len() < n_censored {
            return Err(DataError::Stratum { stratum: "censored", needed: n_censored, available: censored.len() });
        }
        let mut rng = rng_from(seed);
        events.shuffle(&mut rng);
        censored.shuffle(&mut rng);
        let mut chosen: Vec<usize> = events[..n_events].iter().chain(censored[..n_censored].iter()).copied().collect();
        chosen.sort_unstable();
        Ok(Cohort::from_sorted(
            self.covariate_names.clone(),
            chosen.into_iter().map(|i| self.subjects[i].clone()).collect(),
        ))
    }
}

fn validate_survival(rec: &SurvivalRecord, arity: usize) -> Result<(), DataError> {
    if !(rec.observed_time > 0.0) || !rec.observed_time.is_finite() {
        return Err(DataError::Integrity {
            subject_id: rec.subject_id.clone(),
            reason: alloc::format!("observed time {} must be positive and finite", rec.observed_time),
        });
    }
    if rec.covariates.len() != arity {
        return Err(DataError::CovariateArity {
            subject_id: rec.subject_id.clone(),
            expected: arity,
            found: rec.covariates.len(),
        });
    }
    if let Some(v) = rec.covariates.iter().find(|v| !v.is_finite()) {
        return Err(DataError::Integrity {
            subject_id: rec.subject_id.clone(),
            reason: alloc::format!("non-finite covariate value {v}"),
        });
    }
    Ok(())
}

/// Fold index per subject id, sorted by id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub assignment: Vec<(String, usize)>,
}

impl FoldAssignment {
    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.assignment.binary_search_by(|(s, _)| s.as_str().cmp(id)).ok().map(|i| self.assignment[i].1)
    }

    pub fn members(&self, fold: usize) -> Vec<&str> {
        self.assignment.iter().filter(|(_, f)| *f == fold).map(|(s, _)| s.as_str()).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = alloc::vec![0usize; self.k];
        for (_, f) in &self.assignment {
            sizes[*f] += 1;
        }
        sizes
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::vec;

    fn surv(id: &str, t: f64, event: bool) -> SurvivalRecord {
        SurvivalRecord { subject_id: id.into(), observed_time: t, event, covariates: vec![0.5] }
    }

    fn meas(id: &str, t: f64, v: f64) -> LongitudinalRecord {
        LongitudinalRecord { subject_id: id.into(), time: t, value: v }
    }

    fn small_cohort() -> Cohort {
        let s = vec![surv("B", 3.0, true), surv("A", 2.0, false), surv("C", 4.0, true)];
        let mut l = Vec::new();
        for id in ["A", "B", "C"] {
            for t in [0.0, 0.5, 1.0] {
                l.push(meas(id, t, t * 2.0));
            }
        }
        Cohort::new(vec!["w".into()], s, l).unwrap()
    }

    #[test]
    fn counts_and_ordering() {
        let c = small_cohort();
        assert_eq!(c.len(), 3);
        assert_eq!(c.n_measurements(), 9);
        let ids: Vec<&str> = c.ids().collect();
        assert_eq!(ids, ["A", "B", "C"]);
    }

    #[test]
    fn orphan_measurement_is_named() {
        let err = Cohort::new(vec![], vec![SurvivalRecord { covariates: vec![], ..surv("A", 2.0, false) }], vec![
            meas("A", 0.0, 1.0),
            meas("X9", 0.0, 1.0),
        ])
        .unwrap_err();
        assert!(format!("{err}").contains("X9"));
    }

    #[test]
    fn measurement_after_observed_time_rejected() {
        let err = Cohort::new(vec!["w".into()], vec![surv("A", 4.0, true)], vec![meas("A", 5.0, 1.0)]).unwrap_err();
        assert!(matches!(err, DataError::Integrity { .. }));
        // equality is rejected too
        let err = Cohort::new(vec!["w".into()], vec![surv("A", 4.0, true)], vec![meas("A", 4.0, 1.0)]).unwrap_err();
        assert!(matches!(err, DataError::Integrity { .. }));
    }

    #[test]
    fn subject_without_measurements_rejected() {
        let err = Cohort::new(vec!["w".into()], vec![surv("A", 4.0, true), surv("B", 4.0, true)], vec![meas(
            "A", 0.0, 1.0,
        )])
        .unwrap_err();
        assert!(format!("{err}").contains("\"B\""));
    }

    #[test]
    fn duplicate_time_rejected() {
        let err = Cohort::new(vec!["w".into()], vec![surv("A", 4.0, true)], vec![
            meas("A", 1.0, 1.0),
            meas("A", 1.0, 2.0),
        ])
        .unwrap_err();
        assert!(matches!(err, DataError::DuplicateMeasurement { .. }));
    }

    #[test]
    fn truncation_filters_and_is_idempotent() {
        let c = small_cohort();
        let t = c.truncate_history(0.5).unwrap();
        assert_eq!(t.len(), 3);
        assert!(t.subjects().iter().all(|s| s.measurements.iter().all(|m| m.time <= 0.5)));
        assert_eq!(t.n_measurements(), 6);
        assert_eq!(t.truncate_history(0.5).unwrap(), t);
        assert_eq!(t.subjects()[0].observed_time, 2.0);

        let t = c.truncate_history(2.5).unwrap();
        assert_eq!(t.ids().collect::<Vec<_>>(), ["B", "C"]);
        assert!(matches!(c.truncate_history(10.0), Err(DataError::EmptyResult { .. })));
    }

    fn n_subjects(n: usize) -> Cohort {
        let s = (0..n).map(|i| surv(&format!("S{i:03}"), 2.0, i % 3 == 0)).collect();
        let l = (0..n).map(|i| meas(&format!("S{i:03}"), 0.0, 1.0)).collect();
        Cohort::new(vec!["w".into()], s, l).unwrap()
    }

    #[test]
    fn kfold_sizes_and_determinism() {
        let c = n_subjects(10);
        let f = c.kfold_split(5, 3).unwrap();
        assert_eq!(f.sizes(), vec![2; 5]);
        assert_eq!(f, c.kfold_split(5, 3).unwrap());

        let c7 = n_subjects(7);
        let mut sizes = c7.kfold_split(3, 11).unwrap().sizes();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![2, 2, 3]);

        assert!(matches!(c7.kfold_split(1, 0), Err(DataError::FoldCount { .. })));
        assert!(matches!(c7.kfold_split(8, 0), Err(DataError::FoldCount { .. })));
    }

    #[test]
    fn split_fold_partitions() {
        let c = n_subjects(10);
        let f = c.kfold_split(5, 1).unwrap();
        let (train, test) = c.split_fold(&f, 2);
        assert_eq!(train.len(), 8);
        assert_eq!(test.len(), 2);
        assert_eq!(train.merge(&test).unwrap(), c);
    }

    #[test]
    fn stratified_sampling_hits_event_count() {
        let s: Vec<_> = (0..300).map(|i| surv(&format!("S{i:03}"), 2.0, i % 2 == 0)).collect();
        let l = (0..300).map(|i| meas(&format!("S{i:03}"), 0.0, 1.0)).collect();
        let c = Cohort::new(vec!["w".into()], s, l).unwrap();
        let sub = c.stratified_sample(100, 0.11, 5).unwrap();
        assert_eq!(sub.len(), 100);
        assert_eq!(sub.n_events(), 11);
        let sub = c.stratified_sample(40, 0.0, 5).unwrap();
        assert_eq!(sub.n_events(), 0);

        let s: Vec<_> = (0..100).map(|i| surv(&format!("S{i:03}"), 2.0, i < 40)).collect();
        let l = (0..100).map(|i| meas(&format!("S{i:03}"), 0.0, 1.0)).collect();
        let c = Cohort::new(vec!["w".into()], s, l).unwrap();
        let err = c.stratified_sample(50, 1.0, 5).unwrap_err();
        assert_eq!(err, DataError::Stratum { stratum: "event", needed: 50, available: 40 });
    }
}
