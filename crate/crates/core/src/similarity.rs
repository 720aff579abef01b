//! Feature vectors, cosine similarity and personalized subpopulations.
//!
//! Column order of a feature set: continuous covariates z-scored with
//! training statistics (cohort order), then one `name=level` indicator per
//! level of each categorical covariate, then FPC scores `fpc1..fpcr`
//! unscaled.

// Unused when std is linked: its inherent float methods take precedence.
#[allow(unused_imports)]
use num_traits::Float;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Cohort, Subject};
use crate::fpca::{FpcaError, FpcaModel};
use crate::math::{mean, round_half_even, sample_sd};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimilarityError {
    #[error("similarity undefined for a zero-norm vector")]
    ZeroNorm,
    #[error("dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),
    #[error("covariate schema differs from the standardization")]
    Schema,
    #[error("unknown categorical covariate {0}")]
    UnknownCovariate(String),
    #[error("proportion must lie in (0, 1], got {0}")]
    Proportion(f64),
    #[error("FPC scores for {subject_id}: {source}")]
    Scores { subject_id: String, source: FpcaError },
    #[error("non-finite feature for {0}")]
    NonFinite(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub subject_id: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub columns: Vec<String>,
    /// Sorted by subject id.
    pub vectors: Vec<FeatureVector>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Column {
    Continuous { index: usize, mean: f64, sd: f64 },
    Indicator { index: usize, level: f64 },
}

/// Covariate transformation learned from a training cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    covariate_names: Vec<String>,
    columns: Vec<Column>,
    names: Vec<String>,
}

impl Standardization {
    /// Training means and SDs (`n - 1`); constant continuous covariates are
    /// dropped with a warning. `categorical` names covariates to one-hot
    /// encode over their training levels.
    pub fn from_training(train: &Cohort, categorical: &[&str]) -> Result<Self, SimilarityError> {
        for c in categorical {
            if train.covariate_index(c).is_none() {
                return Err(SimilarityError::UnknownCovariate((*c).into()));
            }
        }
        let mut continuous = Vec::new();
        let mut indicators = Vec::new();
        let mut names = Vec::new();
        let mut ind_names = Vec::new();
        for (index, name) in train.covariate_names().iter().enumerate() {
            let xs: Vec<f64> = train.subjects().iter().map(|s| s.covariates[index]).collect();
            if categorical.contains(&name.as_str()) {
                let mut levels = xs.clone();
                levels.sort_by(|a, b| a.total_cmp(b));
                levels.dedup();
                for level in levels {
                    indicators.push(Column::Indicator { index, level });
                    ind_names.push(format!("{name}={level}"));
                }
                continue;
            }
            let sd = sample_sd(&xs);
            if !(sd > 0.0) {
                log::warn!("covariate {name} has zero variance in the training set; dropped");
                continue;
            }
            continuous.push(Column::Continuous { index, mean: mean(&xs), sd });
            names.push(name.clone());
        }
        continuous.extend(indicators);
        names.extend(ind_names);
        Ok(Standardization { covariate_names: train.covariate_names().to_vec(), columns: continuous, names })
    }

    pub fn column_names(&self) -> &[String] {
        &self.names
    }

    pub fn transform(&self, covariates: &[f64]) -> Vec<f64> {
        self.columns
            .iter()
            .map(|c| match *c {
                Column::Continuous { index, mean, sd } => (covariates[index] - mean) / sd,
                Column::Indicator { index, level } => {
                    if covariates[index] == level {
                        1.0
                    } else {
                        0.0
                    }
                }
            })
            .collect()
    }
}

/// Feature vector of one subject with FPC scores taken from `fpca`
/// (conditional expectation on its own measurements).
pub fn subject_features(subject: &Subject, fpca: &FpcaModel, standardization: &Standardization) -> Result<FeatureVector, SimilarityError> {
    let mut values = standardization.transform(&subject.covariates);
    let scores = match fpca.subject_scores(&subject.id) {
        Some(s) => s.to_vec(),
        None => fpca
            .scores_for(&subject.measurements)
            .map_err(|source| SimilarityError::Scores { subject_id: subject.id.clone(), source })?,
    };
    values.extend(scores);
    if values.iter().any(|v| !v.is_finite()) {
        return Err(SimilarityError::NonFinite(subject.id.clone()));
    }
    Ok(FeatureVector { subject_id: subject.id.clone(), values })
}

pub fn build_features(cohort: &Cohort, fpca: &FpcaModel, standardization: &Standardization) -> Result<FeatureSet, SimilarityError> {
    if cohort.covariate_names() != standardization.covariate_names.as_slice() {
        return Err(SimilarityError::Schema);
    }
    let mut columns = standardization.names.clone();
    columns.extend((1..=fpca.n_components).map(|k| format!("fpc{k}")));
    let vectors =
        cohort.subjects().iter().map(|s| subject_features(s, fpca, standardization)).collect::<Result<Vec<_>, _>>()?;
    Ok(FeatureSet { columns, vectors })
}

/// `a . b / (|a| |b|)`, clamped to `[-1, 1]`.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, SimilarityError> {
    if a.len() != b.len() {
        return Err(SimilarityError::Dimension(a.len(), b.len()));
    }
    // Rescale by the largest magnitude first so the norms cannot overflow.
    let sa = a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let sb = b.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if !(sa > 0.0 && sb > 0.0) {
        return Err(SimilarityError::ZeroNorm);
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (x / sa, y / sb);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    // sqrt(na * nb) keeps cosine(a, a) exactly 1
    Ok((dot / (na * nb).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRanking {
    pub index_subject_id: String,
    /// Descending similarity, ties by ascending subject id.
    pub ranked: Vec<(String, f64)>,
}

/// Ranks `training` by similarity to `index`. Zero-norm training vectors
/// are excluded with a warning; a zero-norm index vector is an error.
pub fn rank_similar(index: &FeatureVector, training: &FeatureSet) -> Result<SimilarityRanking, SimilarityError> {
    let mut ranked = Vec::with_capacity(training.vectors.len());
    let mut excluded = 0usize;
    if index.values.iter().all(|v| *v == 0.0) {
        return Err(SimilarityError::ZeroNorm);
    }
    for v in &training.vectors {
        match cosine(&index.values, &v.values) {
            Ok(c) => ranked.push((v.subject_id.clone(), c)),
            Err(SimilarityError::ZeroNorm) => excluded += 1,
            Err(e) => return Err(e),
        }
    }
    if excluded > 0 {
        log::warn!("{excluded} training subject(s) with zero-norm features excluded from ranking");
    }
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(SimilarityRanking { index_subject_id: index.subject_id.clone(), ranked })
}

/// `m = round_half_even(M_p n)`, at least 1 and at most the ranking length.
pub fn subpopulation_size(mp: f64, n: usize) -> Result<usize, SimilarityError> {
    if !(mp > 0.0 && mp <= 1.0) {
        return Err(SimilarityError::Proportion(mp));
    }
    Ok((round_half_even(mp * n as f64) as usize).max(1))
}

/// The `m` most similar training ids, in ranking order.
pub fn select_subpopulation(ranking: &SimilarityRanking, mp: f64, n: usize) -> Result<Vec<String>, SimilarityError> {
    let m = subpopulation_size(mp, n)?.min(ranking.ranked.len());
    Ok(ranking.ranked[..m].iter().map(|(id, _)| id.clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{LongitudinalRecord, SurvivalRecord};
    use crate::fpca::{fit_fpca, observation_grid, FpcaOptions};
    use alloc::vec;
    use approx::assert_relative_eq;

    fn fv(id: &str, values: &[f64]) -> FeatureVector {
        FeatureVector { subject_id: id.into(), values: values.to_vec() }
    }

    #[test]
    fn cosine_cases() {
        assert_eq!(cosine(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_relative_eq!(cosine(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap(), 0.974_631_846, epsilon = 1e-9);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), Err(SimilarityError::ZeroNorm));
        assert_eq!(cosine(&[1.0], &[1.0, 0.0]), Err(SimilarityError::Dimension(1, 2)));
        assert_eq!(cosine(&[1e300, 1e300], &[1e300, 1e300]).unwrap(), 1.0);
    }

    #[test]
    fn ranking_rules() {
        let train = FeatureSet {
            columns: vec!["a".into(), "b".into()],
            vectors: vec![fv("x", &[1.0, 2.0]), fv("y", &[-1.0, -2.0]), fv("z", &[0.0, 0.0]), fv("w", &[2.0, 4.0])],
        };
        let r = rank_similar(&fv("i", &[1.0, 2.0]), &train).unwrap();
        let ids: Vec<&str> = r.ranked.iter().map(|(id, _)| id.as_str()).collect();
        assert_eq!(ids, ["w", "x", "y"]);
        assert_eq!(r.ranked[0].1, 1.0);
        assert_eq!(r.ranked[2].1, -1.0);
        assert!(rank_similar(&fv("i", &[0.0, 0.0]), &train).is_err());
    }

    #[test]
    fn subpopulation_sizes() {
        assert_eq!(subpopulation_size(0.2, 1600).unwrap(), 320);
        assert_eq!(subpopulation_size(0.0005, 1600).unwrap(), 1);
        assert_eq!(subpopulation_size(1.0, 1600).unwrap(), 1600);
        assert!(subpopulation_size(0.0, 10).is_err());
        let ranking =
            SimilarityRanking { index_subject_id: "i".into(), ranked: (0..10).map(|k| (format!("t{k}"), 1.0 - 0.1 * k as f64)).collect() };
        assert_eq!(select_subpopulation(&ranking, 1.0, 10).unwrap().len(), 10);
        let small = select_subpopulation(&ranking, 0.2, 10).unwrap();
        let big = select_subpopulation(&ranking, 0.4, 10).unwrap();
        assert!(small.iter().all(|id| big.contains(id)));
    }

    fn cohort(n: usize) -> Cohort {
        let mut surv = Vec::new();
        let mut long = Vec::new();
        for i in 0..n {
            let id = format!("S{i:03}");
            let f = i as f64;
            surv.push(SurvivalRecord {
                subject_id: id.clone(),
                observed_time: 5.0,
                event: false,
                covariates: vec![(1.1 * f).sin(), 2.0, (i % 3) as f64],
            });
            for j in 0..4 {
                let t = j as f64;
                long.push(LongitudinalRecord { subject_id: id.clone(), time: t, value: (0.3 * f).cos() + 0.1 * f.sin() * t });
            }
        }
        Cohort::new(vec!["x".into(), "constant".into(), "group".into()], surv, long).unwrap()
    }

    #[test]
    fn training_features_are_standardized() {
        let c = cohort(30);
        let st = Standardization::from_training(&c, &["group"]).unwrap();
        let grid = observation_grid(c.subjects(), 51).unwrap();
        let fpca = fit_fpca(c.subjects(), &grid, 0.95, &FpcaOptions::default()).unwrap();
        let fs = build_features(&c, &fpca, &st).unwrap();
        assert_eq!(fs.columns[..4], ["x", "group=0", "group=1", "group=2"]);
        assert_eq!(fs.columns.len(), 4 + fpca.n_components);
        let col: Vec<f64> = fs.vectors.iter().map(|v| v.values[0]).collect();
        assert!(mean(&col).abs() < 1e-10);
        assert!((sample_sd(&col) - 1.0).abs() < 1e-10);
        let ind: f64 = fs.vectors[4].values[1..4].iter().sum();
        assert_eq!(ind, 1.0);
    }
}
