//! Similarity-based personalized prediction and tuning of the
//! subpopulation proportion `M_p` by repeated K-fold cross-validation.
//!
//! For every repeat `w` and fold `k`:
//!
//! 1. FPCA is fitted separately to the training and the testing subjects,
//!    each restricted to measurements up to the landmark `t`. Both score
//!    bases keep the smaller of the two component counts, and each testing
//!    eigenfunction takes the sign that agrees with its training
//!    counterpart.
//! 2. Each test subject at risk at `t` is ranked against the training
//!    subjects by cosine similarity of standardized covariates plus FPC
//!    scores. For every `M_p`, a joint model is fitted to the
//!    `round(M_p n)` most similar training subjects, using their full
//!    follow-up.
//! 3. `pi(u | t)` is predicted from that fit. Subjects censored before `u`
//!    also get `pi(u | T_j)` from the same fit.
//! 4. Losses are averaged into the fold's Brier score.
//!
//! Subjects whose personalized fit fails are skipped and leave the risk
//! set. An `M_p` skipping more than [`UNRELIABLE_SKIP_RATE`] of its
//! subjects is flagged unreliable. An `M_p` with no feasible fold is
//! excluded from selection.
//!
//! Randomness is keyed, never sequential: a fit is seeded by
//! `(master_seed, repeat, fold, M_p, subset)` and a prediction by
//! `(master_seed, repeat, fold, M_p, subject id)`. Every subject that
//! selects the same subset (all of them at `M_p = 1`) therefore shares one
//! fit, and results do not depend on the execution order.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Cohort, DataError, Subject};
use crate::dynpred::{predict_curve, PredictionError, PredictionRequest, DEFAULT_N_MC};
use crate::fpca::{basis_alignment, fit_fpca, observation_grid, FpcaError, FpcaModel, FpcaOptions, DEFAULT_GRID_POINTS};
use crate::jointfit::{fit_joint, JointFitError, JointModelFit, JointModelSpec, McmcConfig};
use crate::scoring::{brier, confidence_interval, cv_standard_error, subject_loss, BrierEstimate, ScoringError, SubjectLoss};
use crate::seed::{hash_bytes, SeedKey};
use crate::similarity::{rank_similar, select_subpopulation, FeatureSet, FeatureVector, SimilarityError, Standardization};

/// Skip rate above which an `M_p` entry is flagged unreliable.
pub const UNRELIABLE_SKIP_RATE: f64 = 0.05;
pub const CI_LEVEL: f64 = 0.95;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TuningError {
    #[error("invalid tuning configuration: {0}")]
    Config(&'static str),
    #[error("no test subject is at risk at t = {t} (repeat {repeat}, fold {fold})")]
    EmptyRiskSet { repeat: usize, fold: usize, t: f64 },
    #[error("every personalized fit failed for M_p = {0}")]
    AllInfeasible(f64),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("FPCA: {0}")]
    Fpca(#[from] FpcaError),
    #[error("similarity: {0}")]
    Similarity(#[from] SimilarityError),
    #[error("scoring: {0}")]
    Scoring(#[from] ScoringError),
    #[error("joint model: {0}")]
    Fit(#[from] JointFitError),
    #[error("prediction: {0}")]
    Prediction(#[from] PredictionError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningConfig {
    /// Distinct proportions in `(0, 1]`, ascending.
    pub mp_grid: Vec<f64>,
    pub k_folds: usize,
    pub repeats: usize,
    pub t: f64,
    pub u: f64,
    /// Fraction of trajectory variance the FPC scores must explain.
    pub variance_threshold: f64,
    /// Chain settings of every personalized fit; the seed is replaced by a
    /// derived one.
    pub mcmc: McmcConfig,
    pub n_mc: usize,
    pub master_seed: u64,
    /// Joint-model covariates; empty means every cohort covariate.
    #[serde(default)]
    pub covariates: Vec<String>,
    /// Covariates one-hot encoded for similarity.
    #[serde(default)]
    pub categorical: Vec<String>,
    #[serde(default = "default_grid_points")]
    pub fpca_grid_points: usize,
}

fn default_grid_points() -> usize {
    DEFAULT_GRID_POINTS
}

impl TuningConfig {
    pub fn new(t: f64, u: f64) -> Self {
        TuningConfig {
            mp_grid: alloc::vec![0.2, 0.4, 0.6, 0.8, 1.0],
            k_folds: 5,
            repeats: 10,
            t,
            u,
            variance_threshold: 0.95,
            mcmc: McmcConfig::default(),
            n_mc: DEFAULT_N_MC,
            master_seed: 1,
            covariates: Vec::new(),
            categorical: Vec::new(),
            fpca_grid_points: DEFAULT_GRID_POINTS,
        }
    }

    pub fn validate(&self) -> Result<(), TuningError> {
        if self.mp_grid.is_empty() {
            return Err(TuningError::Config("mp_grid is empty"));
        }
        if self.mp_grid.iter().any(|m| !(*m > 0.0 && *m <= 1.0)) {
            return Err(TuningError::Config("mp_grid values must lie in (0, 1]"));
        }
        if self.mp_grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(TuningError::Config("mp_grid must be strictly ascending"));
        }
        if self.k_folds < 2 {
            return Err(TuningError::Config("k_folds must be at least 2"));
        }
        if self.repeats == 0 {
            return Err(TuningError::Config("repeats must be at least 1"));
        }
        if !(self.t >= 0.0 && self.u > self.t && self.u.is_finite()) {
            return Err(TuningError::Config("need 0 <= t < u"));
        }
        if !(self.variance_threshold > 0.0 && self.variance_threshold <= 1.0) {
            return Err(TuningError::Config("variance_threshold must lie in (0, 1]"));
        }
        if self.n_mc == 0 {
            return Err(TuningError::Config("n_mc must be at least 1"));
        }
        self.mcmc.validate()?;
        Ok(())
    }

    fn model_covariates(&self, cohort: &Cohort) -> Vec<String> {
        if self.covariates.is_empty() {
            cohort.covariate_names().to_vec()
        } else {
            self.covariates.clone()
        }
    }
}

/// Runs independent work items; results come back in input order.
pub trait Executor: Sync {
    fn map<T, R, F>(&self, items: Vec<T>, f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(T) -> R + Sync + Send;
}

/// Runs every item on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct SerialExecutor;

impl Executor for SerialExecutor {
    fn map<T, R, F>(&self, items: Vec<T>, f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(T) -> R + Sync + Send,
    {
        items.into_iter().map(f).collect()
    }
}

/// Order-independent digest of a set of subject ids.
pub fn subset_digest(ids: &[String]) -> u64 {
    let mut sorted: Vec<&str> = ids.iter().map(String::as_str).collect();
    sorted.sort_unstable();
    let mut bytes = Vec::new();
    for id in sorted {
        bytes.extend_from_slice(id.as_bytes());
        bytes.push(0);
    }
    hash_bytes(&bytes)
}

/// Seed of the personalized fit on `subset`.
pub fn fit_seed(master_seed: u64, repeat: usize, fold: usize, mp: f64, subset: &[String]) -> u64 {
    SeedKey::new(master_seed)
        .with_str("fit")
        .with_u64(repeat as u64)
        .with_u64(fold as u64)
        .with_f64(mp)
        .with_u64(subset_digest(subset))
        .value()
}

/// Seed of the Monte-Carlo prediction for `subject_id`.
pub fn prediction_seed(master_seed: u64, repeat: usize, fold: usize, mp: f64, subject_id: &str) -> u64 {
    SeedKey::new(master_seed)
        .with_str("predict")
        .with_u64(repeat as u64)
        .with_u64(fold as u64)
        .with_f64(mp)
        .with_str(subject_id)
        .value()
}

/// Seed of the fold assignment of `repeat`.
pub fn split_seed(master_seed: u64, repeat: usize) -> u64 {
    SeedKey::new(master_seed).with_str("split").with_u64(repeat as u64).value()
}

/// Similarity features of one fold.
#[derive(Debug, Clone)]
pub struct FoldContext {
    pub repeat: usize,
    pub fold: usize,
    pub train: Cohort,
    pub test: Cohort,
    pub space: SimilaritySpace,
    /// Test subjects at risk at `t` with their features; `None` when the
    /// features could not be computed (the subject is then skipped).
    pub index: Vec<(Subject, Option<FeatureVector>)>,
}

fn fpca_on(subjects: &[Subject], config: &TuningConfig) -> Result<FpcaModel, FpcaError> {
    let with_data: Vec<Subject> = subjects.iter().filter(|s| !s.measurements.is_empty()).cloned().collect();
    let grid = observation_grid(&with_data, config.fpca_grid_points)?;
    fit_fpca(&with_data, &grid, config.variance_threshold, &FpcaOptions::default())
}

/// Keeps the first `k` components and flips the given signs.
fn restrict_scores(scores: &[f64], k: usize, signs: &[f64]) -> Vec<f64> {
    scores.iter().take(k).zip(signs).map(|(s, g)| s * g).collect()
}

/// Training side of the similarity features: covariate standardization,
/// training FPCA and the training feature vectors.
#[derive(Debug, Clone)]
pub struct SimilaritySpace {
    pub fpca: FpcaModel,
    pub standardization: Standardization,
    /// Leading FPC scores kept in every feature vector.
    pub n_scores: usize,
    pub features: FeatureSet,
    /// Training cohort size `n` that `M_p` refers to.
    pub n_train: usize,
}

impl SimilaritySpace {
    /// `train` must already be cut at the landmark; `n_scores` defaults to
    /// every retained component.
    pub fn new(train: &Cohort, fpca: FpcaModel, n_scores: Option<usize>, config: &TuningConfig) -> Result<Self, TuningError> {
        let n_scores = n_scores.unwrap_or(fpca.n_components).min(fpca.n_components);
        let cats: Vec<&str> = config.categorical.iter().map(String::as_str).collect();
        let standardization = Standardization::from_training(train, &cats)?;
        let mut columns: Vec<String> = standardization.column_names().to_vec();
        columns.extend((1..=n_scores).map(|j| format!("fpc{j}")));
        let mut space = SimilaritySpace {
            fpca,
            standardization,
            n_scores,
            features: FeatureSet { columns, vectors: Vec::new() },
            n_train: train.len(),
        };
        let signs = alloc::vec![1.0; n_scores];
        let mut vectors = Vec::with_capacity(train.len());
        for s in train.subjects() {
            match space.vector(s, &space.fpca, &signs) {
                Some(v) => vectors.push(v),
                None => log::warn!("training subject {} has no usable features and is never selected", s.id),
            }
        }
        space.features.vectors = vectors;
        Ok(space)
    }

    /// Training space from `train` alone, cut at `config.t`.
    pub fn from_training(train: &Cohort, config: &TuningConfig) -> Result<Self, TuningError> {
        let hist = train.history_until(config.t);
        let fpca = fpca_on(hist.subjects(), config)?;
        SimilaritySpace::new(&hist, fpca, None, config)
    }

    /// Features of `s` scored by `model`, whose components are multiplied by
    /// `signs`; `None` when they cannot be computed.
    pub fn vector(&self, s: &Subject, model: &FpcaModel, signs: &[f64]) -> Option<FeatureVector> {
        let scores = match model.subject_scores(&s.id) {
            Some(sc) => sc.to_vec(),
            None => model.scores_for(&s.measurements).ok()?,
        };
        let mut values = self.standardization.transform(&s.covariates);
        values.extend(restrict_scores(&scores, self.n_scores, signs));
        values.iter().all(|v| v.is_finite()).then(|| FeatureVector { subject_id: s.id.clone(), values })
    }

    /// Features of a subject outside the training set, scored with the
    /// training FPCA.
    pub fn index_vector(&self, s: &Subject) -> Option<FeatureVector> {
        let signs = alloc::vec![1.0; self.n_scores];
        let scores = self.fpca.scores_for(&s.measurements).ok()?;
        let mut values = self.standardization.transform(&s.covariates);
        values.extend(restrict_scores(&scores, self.n_scores, &signs));
        values.iter().all(|v| v.is_finite()).then(|| FeatureVector { subject_id: s.id.clone(), values })
    }

    /// The `round(mp n)` training subjects most similar to `index`; `None`
    /// when the index vector has zero norm.
    pub fn subpopulation(&self, index: &FeatureVector, mp: f64) -> Result<Option<Vec<String>>, TuningError> {
        let ranking = match rank_similar(index, &self.features) {
            Ok(r) => r,
            Err(SimilarityError::ZeroNorm) => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        Ok(Some(select_subpopulation(&ranking, mp, self.n_train)?))
    }
}

impl FoldContext {
    pub fn new(train: Cohort, test: Cohort, config: &TuningConfig, repeat: usize, fold: usize) -> Result<Self, TuningError> {
        let t = config.t;
        let train_hist = train.history_until(t);
        let test_hist = test.history_until(t);
        let train_fpca = fpca_on(train_hist.subjects(), config)?;
        let test_fpca = match fpca_on(test_hist.subjects(), config) {
            Ok(m) => Some(m),
            Err(e) => {
                log::warn!("testing FPCA failed ({e}); scoring test subjects with the training FPCA");
                None
            }
        };
        let k = match &test_fpca {
            Some(m) => train_fpca.n_components.min(m.n_components),
            None => train_fpca.n_components,
        };
        let test_signs: Vec<f64> = match &test_fpca {
            Some(m) => basis_alignment(&train_fpca, m).iter().map(|c| if *c < 0.0 { -1.0 } else { 1.0 }).collect(),
            None => alloc::vec![1.0; k],
        };
        let space = SimilaritySpace::new(&train_hist, train_fpca, Some(k), config)?;
        let index = test_hist
            .subjects()
            .iter()
            .filter(|s| s.at_risk(t))
            .map(|s| {
                let f = match &test_fpca {
                    Some(m) => space.vector(s, m, &test_signs),
                    None => space.index_vector(s),
                };
                (s.clone(), f)
            })
            .collect::<Vec<_>>();
        if index.is_empty() {
            return Err(TuningError::EmptyRiskSet { repeat, fold, t });
        }
        Ok(FoldContext { repeat, fold, train, test, space, index })
    }

    /// Subpopulation of index subject `i` at proportion `mp`.
    pub fn subpopulation(&self, i: usize, mp: f64) -> Result<Option<Vec<String>>, TuningError> {
        let Some(features) = &self.index[i].1 else { return Ok(None) };
        self.space.subpopulation(features, mp)
    }
}

/// `pi(u | t)` and, for a subject censored before `u`, `pi(u | T_j)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubjectPrediction {
    pub pi_u_given_t: f64,
    pub pi_u_given_tj: Option<f64>,
}

/// Request for `pi(u | t)` of `subject` from `fit`, keeping measurements up
/// to `t`. `covariate_names` labels `subject.covariates`.
pub fn prediction_request(
    fit: &JointModelFit,
    subject: &Subject,
    covariate_names: &[String],
    config: &TuningConfig,
    seed: u64,
) -> Result<PredictionRequest, TuningError> {
    let w = fit
        .spec
        .covariates
        .iter()
        .map(|c| {
            covariate_names
                .iter()
                .position(|n| n == c)
                .map(|j| subject.covariates[j])
                .ok_or_else(|| TuningError::Fit(JointFitError::UnknownCovariate(c.clone())))
        })
        .collect::<Result<Vec<f64>, _>>()?;
    let history: Vec<_> = subject.measurements.iter().copied().filter(|m| m.time <= config.t).collect();
    let mut req = PredictionRequest::new(subject.id.clone(), history, w, config.t, config.u, seed);
    req.n_mc = config.n_mc;
    Ok(req)
}

/// Predictions for `subject` from `fit`; see [`prediction_request`].
pub fn predict_subject(
    fit: &JointModelFit,
    subject: &Subject,
    covariate_names: &[String],
    config: &TuningConfig,
    seed: u64,
) -> Result<SubjectPrediction, TuningError> {
    let mut req = prediction_request(fit, subject, covariate_names, config, seed)?;
    let pi_t = predict_curve(fit, &req, &[config.u])?[0].pi_hat;
    let censored_before_u = !subject.event && subject.observed_time < config.u;
    let pi_tj = if censored_before_u {
        req.t = subject.observed_time.max(config.t);
        Some(predict_curve(fit, &req, &[config.u])?[0].pi_hat)
    } else {
        None
    };
    Ok(SubjectPrediction { pi_u_given_t: pi_t, pi_u_given_tj: pi_tj })
}

/// Fits the joint model to `subset` of `train`.
pub fn fit_subpopulation(
    train: &Cohort,
    subset: &[String],
    config: &TuningConfig,
    seed: u64,
) -> Result<JointModelFit, TuningError> {
    let cohort = train.subset(subset)?;
    let mut spec = JointModelSpec::new(config.model_covariates(train));
    spec.mcmc = McmcConfig { seed, ..config.mcmc };
    Ok(fit_joint(&cohort, &spec)?)
}

/// Personalized `pi(u | t)` for test subject `i` of a fold at proportion
/// `mp`. `Ok(None)` marks an infeasible fit.
pub fn personalized_predict(ctx: &FoldContext, i: usize, mp: f64, config: &TuningConfig) -> Result<Option<SubjectPrediction>, TuningError> {
    let Some(subset) = ctx.subpopulation(i, mp)? else { return Ok(None) };
    let seed = fit_seed(config.master_seed, ctx.repeat, ctx.fold, mp, &subset);
    let fit = match fit_subpopulation(&ctx.train, &subset, config, seed) {
        Ok(f) => f,
        Err(TuningError::Fit(e)) => {
            log::warn!("personalized fit for {} infeasible: {e}", ctx.index[i].0.id);
            return Ok(None);
        }
        Err(e) => return Err(e),
    };
    let pseed = prediction_seed(config.master_seed, ctx.repeat, ctx.fold, mp, &ctx.index[i].0.id);
    predict_subject(&fit, &ctx.index[i].0, ctx.test.covariate_names(), config, pseed).map(Some)
}

/// One fold's Brier score at one `M_p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub mp: f64,
    pub repeat: usize,
    pub fold: usize,
    /// `None` when every subject was skipped.
    pub brier: Option<f64>,
    /// Subjects entering the estimate.
    pub at_risk: usize,
    pub skipped: usize,
    pub losses: Vec<SubjectLoss>,
}

/// Brier score of a fold from per-subject predictions (`None` = skipped).
pub fn score_fold(
    index: &[(&Subject, Option<SubjectPrediction>)],
    t: f64,
    u: f64,
) -> Result<(Option<BrierEstimate>, Vec<SubjectLoss>, usize), TuningError> {
    if index.is_empty() {
        return Err(TuningError::Scoring(ScoringError::EmptyRiskSet));
    }
    let mut losses = Vec::new();
    let mut skipped = 0;
    for (s, p) in index {
        match p {
            Some(p) => losses.push(subject_loss(&s.id, s.observed_time, s.event, p.pi_u_given_t, p.pi_u_given_tj, t, u)?),
            None => skipped += 1,
        }
    }
    if losses.is_empty() {
        return Ok((None, losses, skipped));
    }
    let est = brier(&losses, losses.len(), t, u)?;
    Ok((Some(est), losses, skipped))
}

/// Work item: one personalized fit and the subjects that use it.
struct FitTask<'a> {
    ctx: &'a FoldContext,
    mp: f64,
    subset: Vec<String>,
    subjects: Vec<usize>,
}

fn run_task(task: FitTask<'_>, config: &TuningConfig) -> Result<Vec<(usize, Option<SubjectPrediction>)>, TuningError> {
    let ctx = task.ctx;
    let seed = fit_seed(config.master_seed, ctx.repeat, ctx.fold, task.mp, &task.subset);
    let fit = match fit_subpopulation(&ctx.train, &task.subset, config, seed) {
        Ok(f) => Some(f),
        Err(TuningError::Fit(e)) => {
            log::warn!("personalized fit (repeat {}, fold {}, M_p {}) infeasible: {e}", ctx.repeat, ctx.fold, task.mp);
            None
        }
        Err(e) => return Err(e),
    };
    task.subjects
        .into_iter()
        .map(|i| {
            let Some(fit) = &fit else { return Ok((i, None)) };
            let s = &ctx.index[i].0;
            let pseed = prediction_seed(config.master_seed, ctx.repeat, ctx.fold, task.mp, &s.id);
            Ok((i, Some(predict_subject(fit, s, ctx.test.covariate_names(), config, pseed)?)))
        })
        .collect()
}

/// Fold Brier scores for every `(context, M_p)` pair.
fn evaluate_contexts<E: Executor>(
    contexts: &[FoldContext],
    config: &TuningConfig,
    exec: &E,
) -> Result<Vec<FoldResult>, TuningError> {
    // Group subjects sharing a subset into one task.
    let mut tasks: Vec<(usize, usize, FitTask<'_>)> = Vec::new();
    for (c, ctx) in contexts.iter().enumerate() {
        for (g, &mp) in config.mp_grid.iter().enumerate() {
            let mut by_digest: BTreeMap<u64, usize> = BTreeMap::new();
            for i in 0..ctx.index.len() {
                let Some(subset) = ctx.subpopulation(i, mp)? else { continue };
                let d = subset_digest(&subset);
                match by_digest.get(&d) {
                    Some(&t) => tasks[t].2.subjects.push(i),
                    None => {
                        by_digest.insert(d, tasks.len());
                        tasks.push((c, g, FitTask { ctx, mp, subset, subjects: alloc::vec![i] }));
                    }
                }
            }
        }
    }
    let keys: Vec<(usize, usize)> = tasks.iter().map(|(c, g, _)| (*c, *g)).collect();
    let outcomes = exec.map(tasks.into_iter().map(|(_, _, t)| t).collect(), |t| run_task(t, config));

    let mut preds: Vec<Vec<Vec<Option<SubjectPrediction>>>> =
        contexts.iter().map(|ctx| config.mp_grid.iter().map(|_| alloc::vec![None; ctx.index.len()]).collect()).collect();
    for ((c, g), out) in keys.into_iter().zip(outcomes) {
        for (i, p) in out? {
            preds[c][g][i] = p;
        }
    }
    let mut results = Vec::new();
    for (c, ctx) in contexts.iter().enumerate() {
        for (g, &mp) in config.mp_grid.iter().enumerate() {
            let index: Vec<(&Subject, Option<SubjectPrediction>)> =
                ctx.index.iter().zip(&preds[c][g]).map(|((s, _), p)| (s, *p)).collect();
            let (est, losses, skipped) = score_fold(&index, config.t, config.u)?;
            results.push(FoldResult {
                mp,
                repeat: ctx.repeat,
                fold: ctx.fold,
                brier: est.map(|e| e.value),
                at_risk: losses.len(),
                skipped,
                losses,
            });
        }
    }
    Ok(results)
}

/// Brier score of one fold at one `M_p`; `None` when every subject was
/// skipped.
pub fn evaluate_fold<E: Executor>(
    train: &Cohort,
    test: &Cohort,
    mp: f64,
    config: &TuningConfig,
    exec: &E,
) -> Result<Option<BrierEstimate>, TuningError> {
    let ctx = FoldContext::new(train.clone(), test.clone(), config, 0, 0)?;
    let single = TuningConfig { mp_grid: alloc::vec![mp], ..config.clone() };
    let r = evaluate_contexts(core::slice::from_ref(&ctx), &single, exec)?.remove(0);
    Ok(r.brier.map(|value| BrierEstimate { value, at_risk_count: r.at_risk, t: config.t, u: config.u }))
}

/// Summary of one `M_p` over all folds and repeats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpSummary {
    pub mp: f64,
    /// Mean fold Brier score; `None` when no fold was feasible.
    pub mean: Option<f64>,
    pub se: Option<f64>,
    pub ci: Option<(f64, f64)>,
    pub fold_values: Vec<f64>,
    /// Folds in which every subject was skipped.
    pub infeasible_folds: usize,
    pub skipped_subjects: usize,
    pub skip_rate: f64,
    pub unreliable: bool,
}

impl MpSummary {
    fn from_folds(mp: f64, folds: &[&FoldResult]) -> Result<Self, TuningError> {
        let fold_values: Vec<f64> = folds.iter().filter_map(|f| f.brier).collect();
        let skipped: usize = folds.iter().map(|f| f.skipped).sum();
        let total: usize = folds.iter().map(|f| f.skipped + f.at_risk).sum();
        let skip_rate = if total == 0 { 0.0 } else { skipped as f64 / total as f64 };
        let (mean, se, ci) = match fold_values.len() {
            0 => (None, None, None),
            1 => (Some(fold_values[0]), None, None),
            _ => {
                let (m, se) = cv_standard_error(&fold_values)?;
                (Some(m), Some(se), Some(confidence_interval(m, se, CI_LEVEL)?))
            }
        };
        if skip_rate > UNRELIABLE_SKIP_RATE {
            log::warn!("M_p = {mp}: {skipped} of {total} subjects skipped; estimate flagged unreliable");
        }
        Ok(MpSummary {
            mp,
            mean,
            se,
            ci,
            infeasible_folds: folds.len() - fold_values.len(),
            fold_values,
            skipped_subjects: skipped,
            skip_rate,
            unreliable: skip_rate > UNRELIABLE_SKIP_RATE,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningReport {
    pub config: TuningConfig,
    pub entries: Vec<MpSummary>,
    /// Grid value with the smallest mean Brier score among feasible entries.
    pub selected_mp: Option<f64>,
    /// In `(repeat, fold, M_p)` order.
    pub folds: Vec<FoldResult>,
}

impl TuningReport {
    /// Flat table `mp,repeat,fold,brier,at_risk,skipped`; an infeasible
    /// fold has an empty `brier` field.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("mp,repeat,fold,brier,at_risk,skipped\n");
        for f in &self.folds {
            let b = f.brier.map(|b| format!("{b}")).unwrap_or_default();
            out.push_str(&format!("{},{},{},{},{},{}\n", f.mp, f.repeat, f.fold, b, f.at_risk, f.skipped));
        }
        out
    }

    pub fn entry(&self, mp: f64) -> Option<&MpSummary> {
        self.entries.iter().find(|e| e.mp == mp)
    }
}

fn build_contexts<E: Executor>(cohort: &Cohort, config: &TuningConfig, exec: &E) -> Result<Vec<FoldContext>, TuningError> {
    let mut splits = Vec::new();
    for w in 0..config.repeats {
        let folds = cohort.kfold_split(config.k_folds, split_seed(config.master_seed, w))?;
        for k in 0..config.k_folds {
            let (train, test) = cohort.split_fold(&folds, k);
            splits.push((w, k, train, test));
        }
    }
    exec.map(splits, |(w, k, train, test)| FoldContext::new(train, test, config, w, k)).into_iter().collect()
}

/// Repeated K-fold tuning of `M_p` over `config.mp_grid`.
pub fn tune<E: Executor>(cohort: &Cohort, config: &TuningConfig, exec: &E) -> Result<TuningReport, TuningError> {
    config.validate()?;
    let contexts = build_contexts(cohort, config, exec)?;
    let mut folds = evaluate_contexts(&contexts, config, exec)?;
    folds.sort_by(|a, b| (a.repeat, a.fold).cmp(&(b.repeat, b.fold)).then(a.mp.total_cmp(&b.mp)));
    let mut entries = Vec::with_capacity(config.mp_grid.len());
    for &mp in &config.mp_grid {
        let of_mp: Vec<&FoldResult> = folds.iter().filter(|f| f.mp == mp).collect();
        entries.push(MpSummary::from_folds(mp, &of_mp)?);
    }
    let selected_mp = entries
        .iter()
        .filter_map(|e| e.mean.map(|m| (e.mp, m)))
        .fold(None, |best: Option<(f64, f64)>, (mp, m)| match best {
            Some((_, bm)) if bm <= m => best,
            _ => Some((mp, m)),
        })
        .map(|(mp, _)| mp);
    Ok(TuningReport { config: config.clone(), entries, selected_mp, folds })
}

/// Repeated K-fold evaluation of a hold-out cohort at a fixed `M_p`.
pub fn validate<E: Executor>(holdout: &Cohort, selected_mp: f64, config: &TuningConfig, exec: &E) -> Result<MpSummary, TuningError> {
    if holdout.is_empty() {
        return Err(TuningError::Data(DataError::FoldCount { k: config.k_folds, n: 0 }));
    }
    let single = TuningConfig { mp_grid: alloc::vec![selected_mp], ..config.clone() };
    let report = tune(holdout, &single, exec)?;
    let entry = report.entries.into_iter().next().expect("one grid value");
    if entry.mean.is_none() {
        return Err(TuningError::AllInfeasible(selected_mp));
    }
    Ok(entry)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Measurement;
    use approx::assert_relative_eq;

    fn subject(id: &str, observed_time: f64, event: bool) -> Subject {
        Subject {
            id: id.into(),
            observed_time,
            event,
            covariates: alloc::vec![0.0],
            measurements: alloc::vec![Measurement { time: 0.0, value: 1.0 }],
        }
    }

    #[test]
    fn defaults_and_validation() {
        let c = TuningConfig::new(1.0, 4.0);
        assert_eq!(c.mp_grid, alloc::vec![0.2, 0.4, 0.6, 0.8, 1.0]);
        assert_eq!((c.k_folds, c.repeats), (5, 10));
        c.validate().unwrap();
        let bad = TuningConfig { mp_grid: alloc::vec![0.4, 0.2], ..c.clone() };
        assert!(matches!(bad.validate(), Err(TuningError::Config(_))));
        let bad = TuningConfig { mp_grid: alloc::vec![0.0, 0.2], ..c.clone() };
        assert!(matches!(bad.validate(), Err(TuningError::Config(_))));
        let bad = TuningConfig { u: 1.0, ..c };
        assert!(matches!(bad.validate(), Err(TuningError::Config(_))));
    }

    #[test]
    fn predictions_of_one_without_early_events_score_zero() {
        let a = subject("A", 5.0, false);
        let b = subject("B", 4.5, true);
        let p = Some(SubjectPrediction { pi_u_given_t: 1.0, pi_u_given_tj: None });
        let (est, _, skipped) = score_fold(&[(&a, p), (&b, p)], 1.0, 4.0).unwrap();
        assert_eq!(est.unwrap().value, 0.0);
        assert_eq!(skipped, 0);
    }

    #[test]
    fn two_subject_fold() {
        // Survivor predicted 0.7 -> 0.09; event before u predicted 0.5 -> 0.25.
        let a = subject("A", 5.0, false);
        let b = subject("B", 2.0, true);
        let pa = Some(SubjectPrediction { pi_u_given_t: 0.7, pi_u_given_tj: None });
        let pb = Some(SubjectPrediction { pi_u_given_t: 0.5, pi_u_given_tj: None });
        let (est, _, _) = score_fold(&[(&a, pa), (&b, pb)], 1.0, 4.0).unwrap();
        assert_relative_eq!(est.unwrap().value, 0.17, epsilon = 1e-15);
    }

    #[test]
    fn skipped_subjects_leave_the_risk_set() {
        let a = subject("A", 5.0, false);
        let b = subject("B", 2.0, true);
        let pa = Some(SubjectPrediction { pi_u_given_t: 0.7, pi_u_given_tj: None });
        let (est, losses, skipped) = score_fold(&[(&a, pa), (&b, None)], 1.0, 4.0).unwrap();
        let est = est.unwrap();
        assert_relative_eq!(est.value, 0.09, epsilon = 1e-15);
        assert_eq!((est.at_risk_count, losses.len(), skipped), (1, 1, 1));
        let (none, _, skipped) = score_fold(&[(&a, None)], 1.0, 4.0).unwrap();
        assert!(none.is_none() && skipped == 1);
        assert!(score_fold(&[], 1.0, 4.0).is_err());
    }

    #[test]
    fn keyed_seeds() {
        let ids: Vec<String> = ["b", "a", "c"].iter().map(|s| String::from(*s)).collect();
        let mut shuffled = ids.clone();
        shuffled.reverse();
        assert_eq!(subset_digest(&ids), subset_digest(&shuffled));
        assert_ne!(subset_digest(&ids), subset_digest(&ids[..2]));
        assert_eq!(fit_seed(1, 0, 2, 0.2, &ids), fit_seed(1, 0, 2, 0.2, &shuffled));
        assert_ne!(fit_seed(1, 0, 2, 0.2, &ids), fit_seed(1, 0, 2, 0.4, &ids));
        assert_ne!(prediction_seed(1, 0, 0, 0.2, "a"), prediction_seed(1, 0, 0, 0.2, "b"));
        assert_ne!(split_seed(1, 0), split_seed(1, 1));
    }
}
