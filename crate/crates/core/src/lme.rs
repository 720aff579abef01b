//! Random intercept + slope linear mixed-effects model,
//! `y_ij = beta0 + b0i + (beta1 + b1i) t_ij + eps_ij`, fitted by maximum
//! likelihood.
//!
//! With `Z_i = X_i = [1, t]` every quantity reduces to per-subject 2x2
//! sufficient statistics. Writing `Delta = D / sigma^2`, `A = Z'Z`,
//! `c = Z'y` and `K = Delta (I + A Delta)^-1`:
//!
//! - `Z'W^-1 Z = A - A K A`, `Z'W^-1 y = c - A K c`,
//!   `y'W^-1 y = y'y - c'Kc`, `log|W| = log det(I + A Delta)`;
//! - `E[b | y] = K (c - A beta)`, `Var[b | y] = sigma^2 K`.
//!
//! `beta` and `sigma` are profiled out; the remaining three parameters are
//! the entries of a lower Cholesky factor of `Delta`, so every iterate is
//! positive semidefinite.

// Unused when std is linked: its inherent float methods take precedence.
#[allow(unused_imports)]
use num_traits::Float;
use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Cohort, Measurement};
use crate::math::{Mat2, Sym2, LN_2PI};

pub const MAX_ITERATIONS: usize = 500;
pub const LOGLIK_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LmeError {
    #[error("random slope not identifiable: {found} subject(s) with two or more distinct measurement times, need 2")]
    NotIdentifiable { found: usize },
    #[error("no convergence after {iterations} iterations (last log-likelihood {})", .last.loglik)]
    NonConvergence { iterations: usize, last: Box<LmeFit> },
    #[error("unknown subject {0}")]
    UnknownSubject(String),
    #[error("non-finite data or likelihood")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmeFit {
    /// `(beta0, beta1)`.
    pub beta_hat: [f64; 2],
    pub d_hat: Sym2,
    pub sigma_hat: f64,
    /// Empirical Bayes effects `(b0i, b1i)`, sorted by subject id.
    pub b_hat: Vec<(String, [f64; 2])>,
    pub loglik: f64,
    pub iterations: usize,
    /// Log-likelihood after each accepted optimizer step, starting value first.
    pub loglik_trace: Vec<f64>,
}

/// Per-subject sufficient statistics of the design `[1, t]`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SubjectStats {
    pub n: f64,
    pub a: Sym2,
    pub c: [f64; 2],
    pub yy: f64,
}

impl SubjectStats {
    pub fn from_measurements(ms: &[Measurement]) -> Self {
        let mut s = SubjectStats::default();
        for m in ms {
            s.n += 1.0;
            s.a.a += 1.0;
            s.a.b += m.time;
            s.a.c += m.time * m.time;
            s.c[0] += m.value;
            s.c[1] += m.time * m.value;
            s.yy += m.value * m.value;
        }
        s
    }

    /// Residual sum of squares `sum (y - b0 - b1 t)^2` for a fixed line.
    pub fn rss(&self, line: [f64; 2]) -> f64 {
        (self.yy - 2.0 * (line[0] * self.c[0] + line[1] * self.c[1]) + self.a.quad(line)).max(0.0)
    }
}

/// `K = Delta (I + A Delta)^-1` (symmetric) and `log det(I + A Delta)`.
fn shrinkage(a: &Sym2, delta: &Sym2) -> (Sym2, f64) {
    let ad = Mat2::from_sym(a).mul(&Mat2::from_sym(delta));
    let m = Mat2::identity().add(&ad);
    let det = m.det();
    let inv = m.inverse().expect("I + A Delta is non-singular for PSD A, Delta");
    (Mat2::from_sym(delta).mul(&inv).symmetrize(), det.ln())
}

/// Posterior mean and covariance of `b` for one subject given `(beta, D,
/// sigma)`.
pub fn conditional_effects(beta: [f64; 2], d: &Sym2, sigma: f64, ms: &[Measurement]) -> ([f64; 2], Sym2) {
    let s = SubjectStats::from_measurements(ms);
    conditional_effects_from_stats(beta, d, sigma, &s)
}

pub fn conditional_effects_from_stats(beta: [f64; 2], d: &Sym2, sigma: f64, s: &SubjectStats) -> ([f64; 2], Sym2) {
    if s.n == 0.0 {
        return ([0.0, 0.0], *d);
    }
    if !(sigma > 0.0) {
        // Exact data: the posterior collapses onto the least-squares line
        // when that is determined, otherwise fall back to a tiny noise level.
        return conditional_effects_from_stats(beta, d, 1e-12 * (1.0 + d.trace().sqrt()), s);
    }
    let s2 = sigma * sigma;
    let delta = d.scale(1.0 / s2);
    let (k, _) = shrinkage(&s.a, &delta);
    let r = [s.c[0] - s.a.mul_vec(beta)[0], s.c[1] - s.a.mul_vec(beta)[1]];
    (k.mul_vec(r), k.scale(s2))
}

struct Profile {
    beta: [f64; 2],
    sigma2: f64,
    loglik: f64,
}

fn delta_from(l: &[f64; 3]) -> Sym2 {
    Sym2::new(l[0] * l[0], l[0] * l[1], l[1] * l[1] + l[2] * l[2])
}

fn profile(stats: &[SubjectStats], n_obs: f64, l: &[f64; 3]) -> Option<Profile> {
    let delta = delta_from(l);
    let mut xtx = Sym2::ZERO;
    let mut xty = [0.0; 2];
    let mut yy = 0.0;
    let mut logdet = 0.0;
    for s in stats {
        let (k, ld) = shrinkage(&s.a, &delta);
        let ak = Mat2::from_sym(&s.a).mul(&Mat2::from_sym(&k));
        let aka = ak.mul(&Mat2::from_sym(&s.a)).symmetrize();
        xtx = xtx.add(&s.a.add(&aka.scale(-1.0)));
        let akc = ak.mul_vec(s.c);
        xty[0] += s.c[0] - akc[0];
        xty[1] += s.c[1] - akc[1];
        yy += s.yy - k.quad(s.c);
        logdet += ld;
    }
    let beta = xtx.inverse()?.mul_vec(xty);
    // (y - X beta)' W^-1 (y - X beta)
    let rss = yy - 2.0 * (beta[0] * xty[0] + beta[1] * xty[1]) + xtx.quad(beta);
    let sigma2 = (rss / n_obs).max(f64::MIN_POSITIVE);
    let loglik = -0.5 * n_obs * (LN_2PI + sigma2.ln() + 1.0) - 0.5 * logdet;
    loglik.is_finite().then_some(Profile { beta, sigma2, loglik })
}

fn objective(stats: &[SubjectStats], n_obs: f64, l: &[f64; 3]) -> f64 {
    profile(stats, n_obs, l).map_or(f64::NEG_INFINITY, |p| p.loglik)
}

fn gradient(stats: &[SubjectStats], n_obs: f64, l: &[f64; 3]) -> [f64; 3] {
    let mut g = [0.0; 3];
    for k in 0..3 {
        let h = 1e-6 * l[k].abs().max(1e-2);
        let mut up = *l;
        let mut dn = *l;
        up[k] += h;
        dn[k] -= h;
        g[k] = (objective(stats, n_obs, &up) - objective(stats, n_obs, &dn)) / (2.0 * h);
    }
    g
}

/// Moment-based starting point: covariance of per-subject OLS lines over
/// pooled residual variance.
fn starting_point(stats: &[SubjectStats]) -> [f64; 3] {
    let mut lines = Vec::new();
    let mut rss = 0.0;
    let mut dof = 0.0;
    for s in stats {
        if s.n >= 2.0 && s.a.det() > 1e-12 * s.a.a * s.a.c {
            let line = s.a.inverse().expect("non-singular").mul_vec(s.c);
            rss += s.rss(line);
            dof += s.n - 2.0;
            lines.push(line);
        }
    }
    let sigma2 = if dof > 0.0 && rss > 0.0 { rss / dof } else { 1.0 };
    let m = lines.len() as f64;
    let mean = [lines.iter().map(|l| l[0]).sum::<f64>() / m, lines.iter().map(|l| l[1]).sum::<f64>() / m];
    let mut cov = Sym2::ZERO;
    for l in &lines {
        let d = [l[0] - mean[0], l[1] - mean[1]];
        cov.a += d[0] * d[0];
        cov.b += d[0] * d[1];
        cov.c += d[1] * d[1];
    }
    let cov = cov.scale(1.0 / (m - 1.0).max(1.0)).scale(1.0 / sigma2);
    let ridge = 1e-3 * (1.0 + cov.trace());
    cov.nearest_psd().add(&Sym2::new(ridge, 0.0, ridge)).cholesky().unwrap_or([0.1, 0.0, 0.1])
}

/// Fits the model to every subject of `cohort`.
pub fn fit_lme(cohort: &Cohort) -> Result<LmeFit, LmeError> {
    let ids: Vec<&str> = cohort.subjects().iter().map(|s| s.id.as_str()).collect();
    let stats: Vec<SubjectStats> =
        cohort.subjects().iter().map(|s| SubjectStats::from_measurements(&s.measurements)).collect();
    fit_from_stats(&ids, &stats)
}

/// Fits the model from precomputed sufficient statistics; `ids` labels the
/// empirical Bayes effects and must be sorted.
pub fn fit_from_stats(ids: &[&str], stats: &[SubjectStats]) -> Result<LmeFit, LmeError> {
    let identifiable = stats.iter().filter(|s| s.n >= 2.0 && s.a.det() > 1e-12 * s.a.a * s.a.c).count();
    if identifiable < 2 {
        return Err(LmeError::NotIdentifiable { found: identifiable });
    }
    if stats.iter().any(|s| !(s.yy.is_finite() && s.c[0].is_finite() && s.a.c.is_finite())) {
        return Err(LmeError::NonFinite);
    }
    let n_obs: f64 = stats.iter().map(|s| s.n).sum();

    // Exact fit of a single line: no information about D or sigma.
    let pooled = stats.iter().fold((Sym2::ZERO, [0.0; 2], 0.0), |(a, c, yy), s| {
        (a.add(&s.a), [c[0] + s.c[0], c[1] + s.c[1]], yy + s.yy)
    });
    if let Some(inv) = pooled.0.inverse() {
        let line = inv.mul_vec(pooled.1);
        let rss: f64 = stats.iter().map(|s| s.rss(line)).sum();
        if rss <= 1e-24 * (1.0 + pooled.2) {
            let sigma = (rss / n_obs).sqrt().max(f64::MIN_POSITIVE);
            return Ok(assemble(ids, stats, line, Sym2::ZERO, sigma, f64::INFINITY, 0, alloc::vec![]));
        }
    }

    let mut x = starting_point(stats);
    let mut f = objective(stats, n_obs, &x);
    if !f.is_finite() {
        x = [0.1, 0.0, 0.1];
        f = objective(stats, n_obs, &x);
        if !f.is_finite() {
            return Err(LmeError::NonFinite);
        }
    }
    let mut trace = alloc::vec![f];
    let mut g = gradient(stats, n_obs, &x);
    // Inverse Hessian approximation of the negative log-likelihood.
    let mut h = [[0.0; 3]; 3];
    let reset = |h: &mut [[f64; 3]; 3]| {
        *h = [[0.0; 3]; 3];
        for (k, row) in h.iter_mut().enumerate() {
            row[k] = 1e-3;
        }
    };
    reset(&mut h);
    let mut converged = false;
    let mut iterations = 0;
    let mut stalled = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        // ascent direction p = H g
        let mut p = [0.0; 3];
        for i in 0..3 {
            p[i] = (0..3).map(|j| h[i][j] * g[j]).sum();
        }
        let slope: f64 = (0..3).map(|i| p[i] * g[i]).sum();
        if !(slope > 0.0) {
            reset(&mut h);
            for i in 0..3 {
                p[i] = h[i][i] * g[i];
            }
        }
        let slope: f64 = (0..3).map(|i| p[i] * g[i]).sum();
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn = [x[0] + step * p[0], x[1] + step * p[1], x[2] + step * p[2]];
            let fn_ = objective(stats, n_obs, &xn);
            if fn_.is_finite() && fn_ >= f + 1e-4 * step * slope {
                accepted = Some((xn, fn_));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fn_)) = accepted else {
            // No ascent along a fresh gradient direction: stationary point.
            stalled += 1;
            if stalled >= 2 {
                converged = true;
                break;
            }
            reset(&mut h);
            continue;
        };
        stalled = 0;
        let gn = gradient(stats, n_obs, &xn);
        let s = [xn[0] - x[0], xn[1] - x[1], xn[2] - x[2]];
        // curvature of the negative log-likelihood
        let y = [g[0] - gn[0], g[1] - gn[1], g[2] - gn[2]];
        let sy: f64 = (0..3).map(|i| s[i] * y[i]).sum();
        if sy > 1e-14 {
            let mut hy = [0.0; 3];
            for i in 0..3 {
                hy[i] = (0..3).map(|j| h[i][j] * y[j]).sum();
            }
            let yhy: f64 = (0..3).map(|i| y[i] * hy[i]).sum();
            for i in 0..3 {
                for j in 0..3 {
                    h[i][j] += (sy + yhy) * s[i] * s[j] / (sy * sy) - (hy[i] * s[j] + s[i] * hy[j]) / sy;
                }
            }
        }
        let gain = fn_ - f;
        x = xn;
        f = fn_;
        g = gn;
        trace.push(f);
        if gain.abs() < LOGLIK_TOLERANCE && iterations > 1 {
            converged = true;
            break;
        }
    }
    let p = profile(stats, n_obs, &x).ok_or(LmeError::NonFinite)?;
    let d = delta_from(&x).scale(p.sigma2);
    if d.eigenvalues()[0] <= 1e-10 * d.trace().max(f64::MIN_POSITIVE) {
        log::warn!("random-effects covariance is (near) singular");
    }
    let fit = assemble(ids, stats, p.beta, d, p.sigma2.sqrt(), p.loglik, iterations, trace);
    if converged {
        Ok(fit)
    } else {
        Err(LmeError::NonConvergence { iterations, last: Box::new(fit) })
    }
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    ids: &[&str],
    stats: &[SubjectStats],
    beta: [f64; 2],
    d: Sym2,
    sigma: f64,
    loglik: f64,
    iterations: usize,
    loglik_trace: Vec<f64>,
) -> LmeFit {
    let b_hat = ids
        .iter()
        .zip(stats)
        .map(|(id, s)| {
            let b = if d == Sym2::ZERO { [0.0, 0.0] } else { conditional_effects_from_stats(beta, &d, sigma, s).0 };
            (String::from(*id), b)
        })
        .collect();
    LmeFit { beta_hat: beta, d_hat: d, sigma_hat: sigma, b_hat, loglik, iterations, loglik_trace }
}

impl LmeFit {
    pub fn effects(&self, subject_id: &str) -> Result<[f64; 2], LmeError> {
        self.b_hat
            .binary_search_by(|(id, _)| id.as_str().cmp(subject_id))
            .map(|k| self.b_hat[k].1)
            .map_err(|_| LmeError::UnknownSubject(subject_id.into()))
    }

    /// `(beta0 + b0i) + (beta1 + b1i) t`.
    pub fn predict_trajectory(&self, subject_id: &str, t: f64) -> Result<f64, LmeError> {
        let b = self.effects(subject_id)?;
        Ok(self.beta_hat[0] + b[0] + (self.beta_hat[1] + b[1]) * t)
    }
}
