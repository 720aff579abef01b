//! Functional principal components of sparse trajectories, PACE style.
//!
//! 1. The mean is a local-linear smooth (Gaussian kernel) of the pooled
//!    `(time, value)` pairs.
//! 2. The covariance surface is a bivariate local-linear smooth of the raw
//!    residual cross-products `r_ij r_ik`, `j != k`.
//! 3. Eigenpairs come from `W^1/2 G W^1/2` with trapezoid weights `W`, so the
//!    eigenfunctions are orthonormal under the same quadrature.
//! 4. The noise variance is the average gap between a smooth of the squared
//!    residuals and the diagonal of `G` over the middle half of the window.
//! 5. Scores are conditional expectations
//!    `xi_k = lambda_k phi_k' Sigma_Y^+ (Y - mu)`.
//!
//! Observations are binned by distinct time (or into at most
//! [`MAX_BINS`] equal-width bins), so smoother cost does not grow with the
//! number of subjects. Bandwidths minimize generalized cross-validation
//! over a geometric ladder; if no candidate is admissible the bandwidth is
//! 10% of the window.

// Unused when std is linked: its inherent float methods take precedence.
#[allow(unused_imports)]
use num_traits::Float;
use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Measurement, Subject};

pub const DEFAULT_GRID_POINTS: usize = 51;
pub const MIN_SUBJECTS: usize = 10;
pub const MAX_BINS: usize = 400;
const BANDWIDTH_CANDIDATES: usize = 14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FpcaError {
    #[error("need at least {needed} subjects with measurements, found {found}")]
    InsufficientSubjects { needed: usize, found: usize },
    #[error("variance threshold must lie in (0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("grid must have at least 2 strictly increasing points")]
    InvalidGrid,
    #[error("observation window is a single time point")]
    DegenerateWindow,
    #[error("no measurements within the grid span")]
    NoMeasurements,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FpcaOptions {
    /// Fixed bandwidths; `None` selects by generalized cross-validation.
    pub bandwidth_mean: Option<f64>,
    pub bandwidth_cov: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpcaModel {
    pub grid: Vec<f64>,
    pub mean_function: Vec<f64>,
    /// `eigenfunctions[k]` holds `phi_k` on the grid; every positive
    /// eigenvalue is kept.
    pub eigenfunctions: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    pub noise_variance: f64,
    /// Cumulative fraction of variance explained by the first `k + 1`
    /// components.
    pub explained_variance: Vec<f64>,
    /// Number of components used for scores.
    pub n_components: usize,
    /// Per-subject scores (length `n_components`), sorted by subject id.
    pub scores: Vec<(String, Vec<f64>)>,
    pub bandwidth_mean: f64,
    pub bandwidth_cov: f64,
    /// Set when the trajectories carry no between-subject variation.
    pub degenerate: bool,
}

/// `n_points` equispaced times spanning every measurement of `subjects`.
pub fn observation_grid(subjects: &[Subject], n_points: usize) -> Result<Vec<f64>, FpcaError> {
    let (lo, hi) = subjects
        .iter()
        .flat_map(|s| s.times())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| (lo.min(t), hi.max(t)));
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(FpcaError::NoMeasurements);
    }
    if !(hi > lo) {
        return Err(FpcaError::DegenerateWindow);
    }
    if n_points < 2 {
        return Err(FpcaError::InvalidGrid);
    }
    let step = (hi - lo) / (n_points - 1) as f64;
    let mut g: Vec<f64> = (0..n_points).map(|k| lo + step * k as f64).collect();
    g[n_points - 1] = hi;
    Ok(g)
}

pub fn trapezoid_weights(grid: &[f64]) -> Vec<f64> {
    let n = grid.len();
    let mut w = vec![0.0; n];
    for k in 0..n - 1 {
        let h = 0.5 * (grid[k + 1] - grid[k]);
        w[k] += h;
        w[k + 1] += h;
    }
    w
}

/// Piecewise-linear interpolation, constant beyond the ends.
pub fn interpolate(grid: &[f64], values: &[f64], t: f64) -> f64 {
    let n = grid.len();
    if t <= grid[0] {
        return values[0];
    }
    if t >= grid[n - 1] {
        return values[n - 1];
    }
    let k = grid.partition_point(|g| *g <= t) - 1;
    let f = (t - grid[k]) / (grid[k + 1] - grid[k]);
    values[k] + f * (values[k + 1] - values[k])
}

#[derive(Debug, Clone, Copy)]
struct Bin1 {
    x: f64,
    w: f64,
    sum: f64,
    sumsq: f64,
}

impl Bin1 {
    fn mean(&self) -> f64 {
        self.sum / self.w
    }
    fn within_ss(&self) -> f64 {
        (self.sumsq - self.sum * self.sum / self.w).max(0.0)
    }
}

/// Maps times to bin indices: exact distinct times when there are few of
/// them, equal-width bins otherwise.
struct Binning {
    distinct: Vec<f64>,
    equal_width: Option<(f64, f64, usize)>,
}

impl Binning {
    fn new(mut times: Vec<f64>) -> Self {
        times.sort_by(|a, b| a.total_cmp(b));
        times.dedup();
        if times.len() <= MAX_BINS {
            Binning { distinct: times, equal_width: None }
        } else {
            let lo = times[0];
            let hi = times[times.len() - 1];
            Binning { distinct: vec![], equal_width: Some((lo, hi, MAX_BINS)) }
        }
    }

    fn len(&self) -> usize {
        self.equal_width.map_or(self.distinct.len(), |(_, _, n)| n)
    }

    fn index(&self, t: f64) -> usize {
        match self.equal_width {
            None => self.distinct.partition_point(|d| *d < t),
            Some((lo, hi, n)) => (((t - lo) / (hi - lo) * n as f64) as usize).min(n - 1),
        }
    }
}

fn collect_bins(binning: &Binning, points: impl Iterator<Item = (f64, f64)>) -> Vec<Bin1> {
    let mut acc = vec![(0.0, 0.0, 0.0, 0.0); binning.len()];
    for (t, y) in points {
        let a = &mut acc[binning.index(t)];
        a.0 += t;
        a.1 += 1.0;
        a.2 += y;
        a.3 += y * y;
    }
    acc.into_iter().filter(|a| a.1 > 0.0).map(|a| Bin1 { x: a.0 / a.1, w: a.1, sum: a.2, sumsq: a.3 }).collect()
}

/// Local-linear estimate at `x` and the self-weight (leverage) of an
/// observation located at `x`.
fn local_linear(bins: &[Bin1], h: f64, x: f64) -> Option<(f64, f64)> {
    let (mut s0, mut s1, mut s2, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for b in bins {
        let d = b.x - x;
        let k = b.w * (-0.5 * (d / h) * (d / h)).exp();
        let m = b.mean();
        s0 += k;
        s1 += k * d;
        s2 += k * d * d;
        t0 += k * m;
        t1 += k * d * m;
    }
    if !(s0 > 0.0) {
        return None;
    }
    let det = s0 * s2 - s1 * s1;
    if det > 1e-10 * s0 * s2 && det > 0.0 {
        Some(((s2 * t0 - s1 * t1) / det, s2 / det))
    } else {
        Some((t0 / s0, 1.0 / s0))
    }
}

fn bandwidth_ladder(locations: &[f64], span: f64) -> Vec<f64> {
    let mut xs = locations.to_vec();
    xs.sort_by(|a, b| a.total_cmp(b));
    let max_gap = xs.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    let lo = (0.5 * max_gap).max(span / 200.0);
    let hi = span.max(lo * 1.01);
    let ratio = (hi / lo).powf(1.0 / (BANDWIDTH_CANDIDATES - 1) as f64);
    (0..BANDWIDTH_CANDIDATES).map(|k| lo * ratio.powi(k as i32)).collect()
}

fn gcv_1d(bins: &[Bin1], span: f64) -> f64 {
    let n: f64 = bins.iter().map(|b| b.w).sum();
    let within: f64 = bins.iter().map(|b| b.within_ss()).sum();
    let locs: Vec<f64> = bins.iter().map(|b| b.x).collect();
    let mut best = (f64::INFINITY, 0.1 * span);
    for h in bandwidth_ladder(&locs, span) {
        let mut rss = within;
        let mut trace = 0.0;
        let mut ok = true;
        for b in bins {
            match local_linear(bins, h, b.x) {
                Some((f, l)) => {
                    let e = b.mean() - f;
                    rss += b.w * e * e;
                    trace += b.w * l;
                }
                None => ok = false,
            }
        }
        if !ok || trace >= n {
            continue;
        }
        let score = (rss / n) / ((1.0 - trace / n) * (1.0 - trace / n));
        if score.is_finite() && score < best.0 {
            best = (score, h);
        }
    }
    best.1
}

#[derive(Debug, Clone, Copy)]
struct Bin2 {
    x1: f64,
    x2: f64,
    w: f64,
    sum: f64,
    sumsq: f64,
}

fn solve3(m: [[f64; 3]; 3], b: [f64; 3]) -> Option<([f64; 3], f64)> {
    // Returns the solution and the (0, 0) entry of the inverse.
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let scale = m[0][0] * m[1][1] * m[2][2];
    if !(det.abs() > 1e-10 * scale.abs()) || !(scale > 0.0) {
        return None;
    }
    let solve_col = |col: usize, v: [f64; 3]| {
        let mut mm = m;
        for r in 0..3 {
            mm[r][col] = v[r];
        }
        mm[0][0] * (mm[1][1] * mm[2][2] - mm[1][2] * mm[2][1]) - mm[0][1] * (mm[1][0] * mm[2][2] - mm[1][2] * mm[2][0])
            + mm[0][2] * (mm[1][0] * mm[2][1] - mm[1][1] * mm[2][0])
    };
    let x = [solve_col(0, b) / det, solve_col(1, b) / det, solve_col(2, b) / det];
    let inv00 = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / det;
    Some((x, inv00))
}

fn local_linear_2d(bins: &[Bin2], h: f64, s: f64, t: f64) -> Option<(f64, f64)> {
    let mut m = [[0.0; 3]; 3];
    let mut r = [0.0; 3];
    for b in bins {
        let d1 = b.x1 - s;
        let d2 = b.x2 - t;
        let k = b.w * (-0.5 * (d1 * d1 + d2 * d2) / (h * h)).exp();
        let x = [1.0, d1, d2];
        let z = b.sum / b.w;
        for i in 0..3 {
            r[i] += k * x[i] * z;
            for j in 0..3 {
                m[i][j] += k * x[i] * x[j];
            }
        }
    }
    if !(m[0][0] > 0.0) {
        return None;
    }
    match solve3(m, r) {
        Some((x, inv00)) => Some((x[0], inv00)),
        None => Some((r[0] / m[0][0], 1.0 / m[0][0])),
    }
}

fn gcv_2d(bins: &[Bin2], span: f64) -> f64 {
    let n: f64 = bins.iter().map(|b| b.w).sum();
    let within: f64 = bins.iter().map(|b| (b.sumsq - b.sum * b.sum / b.w).max(0.0)).sum();
    let locs: Vec<f64> = bins.iter().map(|b| b.x1).collect();
    let mut best = (f64::INFINITY, 0.1 * span);
    for h in bandwidth_ladder(&locs, span) {
        let mut rss = within;
        let mut trace = 0.0;
        let mut ok = true;
        for b in bins {
            match local_linear_2d(bins, h, b.x1, b.x2) {
                Some((f, l)) => {
                    let e = b.sum / b.w - f;
                    rss += b.w * e * e;
                    trace += b.w * l;
                }
                None => ok = false,
            }
        }
        if !ok || trace >= n {
            continue;
        }
        let score = (rss / n) / ((1.0 - trace / n) * (1.0 - trace / n));
        if score.is_finite() && score < best.0 {
            best = (score, h);
        }
    }
    best.1
}

/// Fits the model on `subjects` evaluated on `grid`; `threshold` is the
/// fraction of variance the retained components must explain.
/// Running sums accumulated per binned time pair.
type PairSums = (f64, f64, f64, f64, f64);

pub fn fit_fpca(subjects: &[Subject], grid: &[f64], threshold: f64, opts: &FpcaOptions) -> Result<FpcaModel, FpcaError> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(FpcaError::InvalidThreshold(threshold));
    }
    if grid.len() < 2 || grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(FpcaError::InvalidGrid);
    }
    let (g_lo, g_hi) = (grid[0], grid[grid.len() - 1]);
    let span = g_hi - g_lo;
    let in_span = |m: &&Measurement| m.time >= g_lo && m.time <= g_hi;
    let used: Vec<&Subject> = subjects.iter().filter(|s| s.measurements.iter().any(|m| in_span(&m))).collect();
    if used.len() < MIN_SUBJECTS {
        return Err(FpcaError::InsufficientSubjects { needed: MIN_SUBJECTS, found: used.len() });
    }
    let binning = Binning::new(used.iter().flat_map(|s| s.measurements.iter().filter(in_span).map(|m| m.time)).collect());

    // mean
    let mean_bins = collect_bins(
        &binning,
        used.iter().flat_map(|s| s.measurements.iter().filter(in_span).map(|m| (m.time, m.value))),
    );
    let h_mean = opts.bandwidth_mean.unwrap_or_else(|| gcv_1d(&mean_bins, span));
    let mu_at = |t: f64| local_linear(&mean_bins, h_mean, t).map_or(0.0, |v| v.0);
    let mean_function: Vec<f64> = grid.iter().map(|&t| mu_at(t)).collect();

    let total_ss: f64 = mean_bins.iter().map(|b| b.within_ss()).sum();
    let scale: f64 = mean_bins.iter().map(|b| b.sumsq).sum::<f64>() + 1.0;
    let degenerate_data = binning.equal_width.is_none() && total_ss <= 1e-24 * scale;

    // residuals at observation times (smoothed mean evaluated per distinct time)
    let mut mu_cache: BTreeMap<u64, f64> = BTreeMap::new();
    let residuals: Vec<Vec<(f64, f64)>> = used
        .iter()
        .map(|s| {
            s.measurements
                .iter()
                .filter(in_span)
                .map(|m| {
                    let mu = *mu_cache.entry(m.time.to_bits()).or_insert_with(|| mu_at(m.time));
                    (m.time, m.value - mu)
                })
                .collect()
        })
        .collect();

    // raw covariance, off-diagonal cross-products binned by time pair
    let nb = binning.len();
    let mut acc: BTreeMap<(usize, usize), PairSums> = BTreeMap::new();
    for r in &residuals {
        for (j, &(tj, rj)) in r.iter().enumerate() {
            for (k, &(tk, rk)) in r.iter().enumerate() {
                if j == k {
                    continue;
                }
                let key = (binning.index(tj), binning.index(tk));
                let e = acc.entry(key).or_insert((0.0, 0.0, 0.0, 0.0, 0.0));
                let c = rj * rk;
                e.0 += tj;
                e.1 += tk;
                e.2 += 1.0;
                e.3 += c;
                e.4 += c * c;
            }
        }
    }
    debug_assert!(acc.keys().all(|(a, b)| *a < nb && *b < nb));
    let cov_bins: Vec<Bin2> =
        acc.values().map(|e| Bin2 { x1: e.0 / e.2, x2: e.1 / e.2, w: e.2, sum: e.3, sumsq: e.4 }).collect();

    let n_grid = grid.len();
    let weights = trapezoid_weights(grid);
    let mut h_cov = opts.bandwidth_cov.unwrap_or(0.1 * span);
    let mut surface = DMatrix::<f64>::zeros(n_grid, n_grid);
    if !cov_bins.is_empty() && !degenerate_data {
        if opts.bandwidth_cov.is_none() {
            h_cov = gcv_2d(&cov_bins, span);
        }
        for i in 0..n_grid {
            for j in 0..=i {
                let v = local_linear_2d(&cov_bins, h_cov, grid[i], grid[j]).map_or(0.0, |v| v.0);
                surface[(i, j)] = v;
                surface[(j, i)] = v;
            }
        }
    }
    for i in 0..n_grid {
        for j in 0..i {
            let v = 0.5 * (surface[(i, j)] + surface[(j, i)]);
            surface[(i, j)] = v;
            surface[(j, i)] = v;
        }
    }

    // noise variance from the diagonal gap
    let noise_variance = if degenerate_data {
        0.0
    } else {
        let diag_bins = collect_bins(&binning, residuals.iter().flatten().map(|&(t, r)| (t, r * r)));
        let h_diag = gcv_1d(&diag_bins, span);
        let (a, b) = (g_lo + 0.25 * span, g_hi - 0.25 * span);
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..n_grid {
            if grid[i] >= a && grid[i] <= b {
                let v = local_linear(&diag_bins, h_diag, grid[i]).map_or(0.0, |v| v.0);
                num += weights[i] * (v - surface[(i, i)]);
                den += weights[i];
            }
        }
        if den > 0.0 { (num / den).max(0.0) } else { 0.0 }
    };

    // eigen-decomposition under trapezoid weights
    let sw: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    let m = DMatrix::from_fn(n_grid, n_grid, |i, j| sw[i] * surface[(i, j)] * sw[j]);
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n_grid).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let lambda_max = eig.eigenvalues[order[0]].max(0.0);
    let tol = 1e-12 * lambda_max.max(f64::MIN_POSITIVE);
    if order.iter().any(|&k| eig.eigenvalues[k] < -tol) && lambda_max > 0.0 {
        log::warn!("smoothed covariance has negative eigenvalues; truncated at zero");
    }
    let mut eigenvalues = Vec::new();
    let mut eigenfunctions = Vec::new();
    for &k in &order {
        let lam = eig.eigenvalues[k];
        if !(lam > tol) || degenerate_data {
            break;
        }
        let v = eig.eigenvectors.column(k);
        let mut phi: Vec<f64> = (0..n_grid).map(|i| v[i] / sw[i]).collect();
        let integral: f64 = phi.iter().zip(&weights).map(|(p, w)| p * w).sum();
        let flip = if integral.abs() > 1e-12 {
            integral < 0.0
        } else {
            phi.iter().find(|p| p.abs() > 1e-12).is_some_and(|p| *p < 0.0)
        };
        if flip {
            phi.iter_mut().for_each(|p| *p = -*p);
        }
        eigenvalues.push(lam);
        eigenfunctions.push(phi);
    }
    let total: f64 = eigenvalues.iter().sum();
    let degenerate = eigenvalues.is_empty() || !(total > 0.0);
    let mut explained_variance = Vec::with_capacity(eigenvalues.len());
    let mut cum = 0.0;
    for l in &eigenvalues {
        cum += l;
        explained_variance.push((cum / total).min(1.0));
    }
    if let Some(last) = explained_variance.last_mut() {
        *last = 1.0;
    }
    let n_components = if degenerate {
        0
    } else {
        explained_variance.iter().position(|c| *c >= threshold - 1e-12).map_or(eigenvalues.len(), |k| k + 1)
    };

    let mut model = FpcaModel {
        grid: grid.to_vec(),
        mean_function,
        eigenfunctions,
        eigenvalues,
        noise_variance,
        explained_variance,
        n_components,
        scores: Vec::new(),
        bandwidth_mean: h_mean,
        bandwidth_cov: h_cov,
        degenerate,
    };
    let mut scores = Vec::with_capacity(subjects.len());
    for s in subjects {
        if let Ok(xi) = model.scores_for(&s.measurements) {
            scores.push((s.id.clone(), xi));
        }
    }
    scores.sort_by(|a, b| a.0.cmp(&b.0));
    model.scores = scores;
    Ok(model)
}

impl FpcaModel {
    pub fn mean_at(&self, t: f64) -> f64 {
        interpolate(&self.grid, &self.mean_function, t)
    }

    pub fn eigenfunction_at(&self, k: usize, t: f64) -> f64 {
        interpolate(&self.grid, &self.eigenfunctions[k], t)
    }

    /// Conditional-expectation scores of one subject, using only model
    /// quantities. Measurements outside the grid span are ignored.
    pub fn scores_for(&self, measurements: &[Measurement]) -> Result<Vec<f64>, FpcaError> {
        let (lo, hi) = (self.grid[0], self.grid[self.grid.len() - 1]);
        let obs: Vec<&Measurement> = measurements.iter().filter(|m| m.time >= lo && m.time <= hi).collect();
        if obs.is_empty() {
            return Err(FpcaError::NoMeasurements);
        }
        let r = self.n_components;
        if r == 0 {
            return Ok(Vec::new());
        }
        let n = obs.len();
        let phi = DMatrix::from_fn(n, r, |j, k| self.eigenfunction_at(k, obs[j].time));
        let mut sigma = DMatrix::from_fn(n, n, |a, b| {
            (0..r).map(|k| self.eigenvalues[k] * phi[(a, k)] * phi[(b, k)]).sum::<f64>()
        });
        for j in 0..n {
            sigma[(j, j)] += self.noise_variance;
        }
        let resid = DVector::from_fn(n, |j, _| obs[j].value - self.mean_at(obs[j].time));
        let max_diag = (0..n).map(|j| sigma[(j, j)]).fold(0.0, f64::max);
        let pinv = sigma.pseudo_inverse(1e-10 * max_diag.max(f64::MIN_POSITIVE)).expect("non-negative tolerance");
        let z = pinv * resid;
        Ok((0..r).map(|k| self.eigenvalues[k] * (0..n).map(|j| phi[(j, k)] * z[j]).sum::<f64>()).collect())
    }

    pub fn subject_scores(&self, subject_id: &str) -> Option<&[f64]> {
        self.scores
            .binary_search_by(|(id, _)| id.as_str().cmp(subject_id))
            .ok()
            .map(|k| self.scores[k].1.as_slice())
    }

    /// Trajectory reconstructed from scores on the grid.
    pub fn reconstruct(&self, scores: &[f64]) -> Vec<f64> {
        (0..self.grid.len())
            .map(|i| self.mean_function[i] + scores.iter().enumerate().map(|(k, x)| x * self.eigenfunctions[k][i]).sum::<f64>())
            .collect()
    }

    /// Gram matrix of the eigenfunctions under trapezoid weights.
    pub fn gram(&self) -> Vec<Vec<f64>> {
        let w = trapezoid_weights(&self.grid);
        let k = self.eigenfunctions.len();
        (0..k)
            .map(|a| {
                (0..k)
                    .map(|b| {
                        (0..self.grid.len()).map(|i| w[i] * self.eigenfunctions[a][i] * self.eigenfunctions[b][i]).sum()
                    })
                    .collect()
            })
            .collect()
    }
}

/// Correlation between matching eigenfunctions of two fits, on `a`'s grid.
/// Values near 1 mean the two score bases agree component by component.
pub fn basis_alignment(a: &FpcaModel, b: &FpcaModel) -> Vec<f64> {
    let w = trapezoid_weights(&a.grid);
    let r = a.n_components.min(b.n_components);
    (0..r)
        .map(|k| {
            let pb: Vec<f64> = a.grid.iter().map(|&t| b.eigenfunction_at(k, t)).collect();
            let pa = &a.eigenfunctions[k];
            let dot: f64 = (0..w.len()).map(|i| w[i] * pa[i] * pb[i]).sum();
            let na: f64 = (0..w.len()).map(|i| w[i] * pa[i] * pa[i]).sum::<f64>().sqrt();
            let nb: f64 = (0..w.len()).map(|i| w[i] * pb[i] * pb[i]).sum::<f64>().sqrt();
            if na > 0.0 && nb > 0.0 { dot / (na * nb) } else { 0.0 }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgen::{generate_scenario, GeneratorMode, ScenarioConfig};
    use alloc::format;
    use core::f64::consts::PI;

    fn subjects_from(f: impl Fn(usize, f64) -> f64, n: usize, times: &[f64]) -> Vec<Subject> {
        (0..n)
            .map(|i| Subject {
                id: format!("S{i:03}"),
                observed_time: 100.0,
                event: false,
                covariates: vec![],
                measurements: times.iter().map(|&t| Measurement { time: t, value: f(i, t) }).collect(),
            })
            .collect()
    }

    fn rank_two(n: usize) -> (Vec<Subject>, Vec<f64>) {
        let times: Vec<f64> = (0..=50).map(|k| 0.2 * k as f64).collect();
        let subjects = subjects_from(
            |i, t| {
                let a = (1.3 * i as f64).sin() * 2.0;
                let c = (0.7 * i as f64 + 0.4).cos();
                a * (2.0 * PI * t / 10.0).sin() + c
            },
            n,
            &times,
        );
        (subjects, times)
    }

    #[test]
    fn rank_two_construction() {
        let (subjects, times) = rank_two(40);
        let m = fit_fpca(&subjects, &times, 0.999, &FpcaOptions::default()).unwrap();
        assert!(m.explained_variance[1] >= 0.999, "{:?}", &m.explained_variance[..3]);
        assert!(m.n_components <= 2);
        let g = m.gram();
        for (a, row) in g.iter().enumerate() {
            for (b, v) in row.iter().enumerate() {
                let e = if a == b { 1.0 } else { 0.0 };
                assert!((v - e).abs() <= 1e-8, "gram[{a}][{b}] = {v}");
            }
        }
        assert!(m.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        assert!(m.explained_variance.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn dense_noiseless_reconstruction() {
        let (subjects, times) = rank_two(40);
        let opts = FpcaOptions { bandwidth_mean: Some(0.05), bandwidth_cov: Some(0.12) };
        let m = fit_fpca(&subjects, &times, 0.9999, &opts).unwrap();
        for s in &subjects {
            let xi = m.subject_scores(&s.id).unwrap();
            let rec = m.reconstruct(xi);
            for (i, &t) in m.grid.iter().enumerate() {
                let truth = s.measurements.iter().find(|x| (x.time - t).abs() < 1e-9).unwrap().value;
                assert!((rec[i] - truth).abs() <= 1e-3, "{} at {t}: {} vs {truth}", s.id, rec[i]);
            }
        }
    }

    #[test]
    fn identical_trajectories_are_degenerate() {
        let times = [0.0, 0.5, 1.0, 1.5, 2.0];
        let subjects = subjects_from(|_, t| 1.0 + t * t, 12, &times);
        let m = fit_fpca(&subjects, &times, 0.95, &FpcaOptions::default()).unwrap();
        assert!(m.degenerate);
        assert_eq!(m.n_components, 0);
        assert!(m.scores.iter().all(|(_, s)| s.iter().all(|x| *x == 0.0)));
    }

    #[test]
    fn scores_of_mean_and_first_eigenfunction() {
        let (subjects, times) = rank_two(40);
        let m = fit_fpca(&subjects, &times, 0.999, &FpcaOptions::default()).unwrap();
        assert_eq!(m.noise_variance, m.noise_variance.max(0.0));
        let mut noiseless = m.clone();
        noiseless.noise_variance = 0.0;
        let at_mean: Vec<Measurement> =
            noiseless.grid.iter().zip(&noiseless.mean_function).map(|(&t, &v)| Measurement { time: t, value: v }).collect();
        for x in noiseless.scores_for(&at_mean).unwrap() {
            assert!(x.abs() <= 1e-6);
        }
        let plus_phi: Vec<Measurement> = noiseless
            .grid
            .iter()
            .enumerate()
            .map(|(i, &t)| Measurement { time: t, value: noiseless.mean_function[i] + noiseless.eigenfunctions[0][i] })
            .collect();
        let xi = noiseless.scores_for(&plus_phi).unwrap();
        assert!((xi[0] - 1.0).abs() <= 1e-6, "{xi:?}");
        for x in &xi[1..] {
            assert!(x.abs() <= 1e-6);
        }
        // flipping the stored sign flips the score
        let mut flipped = noiseless.clone();
        flipped.eigenfunctions[0].iter_mut().for_each(|p| *p = -*p);
        let xf = flipped.scores_for(&plus_phi).unwrap();
        assert!((xf[0] + xi[0]).abs() <= 1e-9);
    }

    #[test]
    fn errors() {
        let times = [0.0, 1.0];
        let few = subjects_from(|i, t| i as f64 + t, 5, &times);
        assert!(matches!(
            fit_fpca(&few, &times, 0.95, &FpcaOptions::default()),
            Err(FpcaError::InsufficientSubjects { needed: 10, found: 5 })
        ));
        let (subjects, grid) = rank_two(20);
        let m = fit_fpca(&subjects, &grid, 0.95, &FpcaOptions::default()).unwrap();
        assert_eq!(m.scores_for(&[Measurement { time: 50.0, value: 1.0 }]), Err(FpcaError::NoMeasurements));
        assert!(matches!(fit_fpca(&subjects, &grid, 0.0, &FpcaOptions::default()), Err(FpcaError::InvalidThreshold(_))));
    }

    #[test]
    fn truncated_scenario_trajectories() {
        let g = generate_scenario(&ScenarioConfig::scenario1().with_n(300), 11, GeneratorMode::ClosedForm).unwrap();
        let hist = g.cohort.history_until(1.0);
        let grid = observation_grid(hist.subjects(), DEFAULT_GRID_POINTS).unwrap();
        assert_eq!(grid.len(), 51);
        let m = fit_fpca(hist.subjects(), &grid, 0.95, &FpcaOptions::default()).unwrap();
        assert!(!m.degenerate);
        let r = m.n_components;
        assert!(r >= 1);
        assert!(m.explained_variance[r - 1] >= 0.95);
        if r > 1 {
            assert!(m.explained_variance[r - 2] < 0.95);
        }
        // score means near zero
        for k in 0..r {
            let xs: Vec<f64> = m.scores.iter().map(|(_, s)| s[k]).collect();
            let mean = crate::math::mean(&xs);
            let se = crate::math::sample_sd(&xs) / (xs.len() as f64).sqrt();
            assert!(mean.abs() <= 3.0 * se + 1e-12, "component {k}: mean {mean}, se {se}");
        }
        assert!(basis_alignment(&m, &m).iter().all(|c| (c - 1.0).abs() < 1e-12));
    }
}
