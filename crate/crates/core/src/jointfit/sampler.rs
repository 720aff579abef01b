//! Adaptive Metropolis-within-Gibbs for the joint model.
//!
//! One sweep updates, in order:
//!
//! 1. each `b_i` by a random-walk step shaped like its mixed-model posterior
//!    covariance;
//! 2. `beta` exactly, in the centred parameterization: with `beta + b_i`
//!    held fixed only the random-effect density depends on `beta`, which
//!    gives a Gaussian full conditional;
//! 3. `(gamma, alpha)` jointly, with a shear of the spline coefficients that
//!    keeps the hazard of the average trajectory and covariates unchanged
//!    (the map is a translation for fixed `beta`, `b`, so it is symmetric
//!    and volume preserving);
//! 4. the spline coefficients;
//! 5. `(log tau0, log tau1, atanh rho)` of `D`;
//! 6. `log sigma`.
//!
//! Blocks 3 to 6 start from a Gaussian proposal fitted to a numeric Hessian
//! at the starting state. During burn-in the proposal scale follows a
//! Robbins-Monro recursion towards acceptance 0.234 (0.44 for scalar
//! blocks), and from half of burn-in the proposal covariance tracks the
//! empirical covariance of the block. Adaptation stops after burn-in.

// Unused when std is linked: its inherent float methods take precedence.
#[allow(unused_imports)]
use num_traits::Float;
use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::diagnostics::split_rhat;
use super::model::{longitudinal_log_density, random_effect_log_density, Prepared, Theta};
use super::spline::BaselineHazardSpline;
use super::{Association, JointFitError, JointModelFit, JointModelSpec, MIN_SUBJECTS};
use crate::dataset::Cohort;
use crate::lme::{conditional_effects_from_stats, fit_lme};
use crate::math::Sym2;
use crate::seed::SeedKey;

const PRIOR_SD: f64 = 10.0;
const HALF_NORMAL_SD: f64 = 5.0;
const RW_PENALTY_SD: f64 = 1.0;
const TARGET_MULTI: f64 = 0.234;
const TARGET_SCALAR: f64 = 0.44;
const ADAPT_EVERY: usize = 50;
const INIT_JITTER: f64 = 0.1;

fn normal_prior(x: f64) -> f64 {
    -0.5 * x * x / (PRIOR_SD * PRIOR_SD)
}

fn half_normal_prior(x: f64) -> f64 {
    -0.5 * x * x / (HALF_NORMAL_SD * HALF_NORMAL_SD)
}

/// `D` from `(log tau0, log tau1, atanh rho)`.
fn d_from_z(z: &[f64]) -> Sym2 {
    let (t0, t1, r) = (z[0].exp(), z[1].exp(), z[2].tanh());
    Sym2::new(t0 * t0, r * t0 * t1, t1 * t1)
}

fn z_from_d(d: &Sym2) -> [f64; 3] {
    let t0 = d.a.max(1e-8).sqrt();
    let t1 = d.c.max(1e-8).sqrt();
    let r = (d.b / (t0 * t1)).clamp(-0.95, 0.95);
    [t0.ln(), t1.ln(), r.atanh()]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Block {
    GammaAlpha,
    Coefficients,
    Covariance,
    Sigma,
}

impl Block {
    fn name(self) -> &'static str {
        match self {
            Block::GammaAlpha => "gamma_alpha",
            Block::Coefficients => "h0",
            Block::Covariance => "d",
            Block::Sigma => "sigma",
        }
    }
}

/// Gaussian random-walk proposal with Robbins-Monro scale and Welford
/// covariance tracking.
#[derive(Debug, Clone)]
struct Proposal {
    dim: usize,
    chol: DMatrix<f64>,
    log_scale: f64,
    target: f64,
    mean: DVector<f64>,
    m2: DMatrix<f64>,
    count: usize,
    switched: bool,
    accepted: usize,
    tried: usize,
}

impl Proposal {
    fn from_precision(precision: DMatrix<f64>, target: f64) -> Self {
        let dim = precision.nrows();
        let eig = SymmetricEigen::new(precision);
        let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        let floor = (1e-3 * top).max(1e-2);
        let inv = DVector::from_iterator(dim, eig.eigenvalues.iter().map(|l| 1.0 / l.max(floor)));
        let cov = &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose();
        let cov = cov * (2.38 * 2.38 / dim as f64);
        Proposal {
            dim,
            chol: chol_lower(cov),
            log_scale: 0.0,
            target,
            mean: DVector::zeros(dim),
            m2: DMatrix::zeros(dim, dim),
            count: 0,
            switched: false,
            accepted: 0,
            tried: 0,
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let z = DVector::from_iterator(self.dim, (0..self.dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let s = self.log_scale.exp();
        (&self.chol * z).iter().map(|x| s * x).collect()
    }

    fn adapt_scale(&mut self, accepted: bool, iteration: usize) {
        let gain = ((iteration + 1) as f64).powf(-0.6);
        self.log_scale += gain * (if accepted { 1.0 } else { 0.0 } - self.target);
        self.log_scale = self.log_scale.clamp(-20.0, 10.0);
    }

    fn reset_history(&mut self) {
        self.mean.fill(0.0);
        self.m2.fill(0.0);
        self.count = 0;
    }

    fn observe(&mut self, x: &[f64]) {
        self.count += 1;
        let x = DVector::from_column_slice(x);
        let delta = &x - &self.mean;
        self.mean += &delta / self.count as f64;
        let delta2 = &x - &self.mean;
        self.m2 += &delta * delta2.transpose();
    }

    fn refresh_covariance(&mut self) {
        if self.count < 2 * self.dim + 2 {
            return;
        }
        let cov = &self.m2 / (self.count - 1) as f64;
        if cov.diagonal().iter().all(|v| *v <= 0.0) {
            return;
        }
        let jitter = 1e-10 * (1.0 + cov.diagonal().amax());
        let cov = (cov + DMatrix::identity(self.dim, self.dim) * jitter) * (2.38 * 2.38 / self.dim as f64);
        self.chol = chol_lower(cov);
        if !self.switched {
            self.switched = true;
            self.log_scale = 0.0;
        }
    }
}

/// Lower Cholesky factor, adding diagonal jitter until it exists.
fn chol_lower(cov: DMatrix<f64>) -> DMatrix<f64> {
    let n = cov.nrows();
    let sym = (&cov + cov.transpose()) * 0.5;
    let base = sym.diagonal().amax().max(1e-12);
    let mut jitter = 0.0;
    for _ in 0..30 {
        let m = &sym + DMatrix::identity(n, n) * jitter;
        if let Some(c) = m.cholesky() {
            return c.l();
        }
        jitter = if jitter == 0.0 { 1e-12 * base } else { jitter * 10.0 };
    }
    DMatrix::identity(n, n) * base.sqrt()
}

#[derive(Debug, Clone, Default)]
struct Cache {
    lh0_nodes: Vec<f64>,
    lh0_t: f64,
    eta_w: f64,
    surv: f64,
    long: f64,
}

/// Data and starting values shared by all chains.
struct Problem {
    spline: BaselineHazardSpline,
    greville: Vec<f64>,
    subjects: Vec<Prepared>,
    longitudinal: bool,
    association: Association,
    w_mean: Vec<f64>,
    /// Lower factor `[l11, l21, l22]` of each subject's proposal covariance.
    re_chol: Vec<[f64; 3]>,
    init: Theta,
    init_b: Vec<[f64; 2]>,
    n_obs: f64,
}

impl Problem {
    fn estimate_alpha(&self) -> bool {
        matches!(self.association, Association::Estimated)
    }

    fn gamma_alpha_dim(&self) -> usize {
        self.init.gamma.len() + usize::from(self.estimate_alpha())
    }
}

fn line(th: &Theta, b: [f64; 2]) -> [f64; 2] {
    [th.beta[0] + b[0], th.beta[1] + b[1]]
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Chain<'p> {
    p: &'p Problem,
    th: Theta,
    b: Vec<[f64; 2]>,
    caches: Vec<Cache>,
    scratch: Vec<Cache>,
    rng: ChaCha8Rng,
    re_log_scale: Vec<f64>,
    re_accepted: usize,
    re_tried: usize,
}

impl<'p> Chain<'p> {
    fn new(p: &'p Problem, chain: u64, seed: u64) -> Self {
        let mut rng = SeedKey::new(seed).with_u64(chain).rng();
        let mut th = p.init.clone();
        for g in th.gamma.iter_mut() {
            *g += INIT_JITTER * rng.sample::<f64, _>(StandardNormal);
        }
        if p.estimate_alpha() {
            th.alpha += INIT_JITTER * rng.sample::<f64, _>(StandardNormal);
        }
        let mut c = Chain {
            p,
            th,
            b: p.init_b.clone(),
            caches: alloc::vec![Cache::default(); p.subjects.len()],
            scratch: alloc::vec![Cache::default(); p.subjects.len()],
            rng,
            re_log_scale: alloc::vec![0.0; p.subjects.len()],
            re_accepted: 0,
            re_tried: 0,
        };
        let th = c.th.clone();
        c.fill_caches(&th);
        core::mem::swap(&mut c.caches, &mut c.scratch);
        for i in 0..p.subjects.len() {
            c.caches[i].long = c.long_ll(i, c.b[i], c.th.sigma);
        }
        c
    }

    fn long_ll(&self, i: usize, b: [f64; 2], sigma: f64) -> f64 {
        if !self.p.longitudinal {
            return 0.0;
        }
        longitudinal_log_density(&self.p.subjects[i].stats, line(&self.th, b), sigma)
    }

    /// Survival terms of all subjects at `th` into `scratch`; returns the sum.
    fn fill_caches(&mut self, th: &Theta) -> f64 {
        let mut total = 0.0;
        for (i, s) in self.p.subjects.iter().enumerate() {
            let c = &mut self.scratch[i];
            let old = &self.caches[i];
            c.lh0_t = s.log_h0(&th.h0, &mut c.lh0_nodes);
            c.long = old.long;
            c.eta_w = dot(&th.gamma, &s.w);
            c.surv = s.survival_ll(&c.lh0_nodes, c.lh0_t, c.eta_w, th.alpha, line(th, self.b[i]));
            total += c.surv;
        }
        total
    }

    fn survival_prior(&self, th: &Theta) -> f64 {
        let mut lp: f64 = th.gamma.iter().map(|g| normal_prior(*g)).sum();
        if self.p.estimate_alpha() {
            lp += normal_prior(th.alpha);
        }
        lp += th.h0.iter().map(|c| normal_prior(*c)).sum::<f64>();
        lp -= th.h0.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>() / (2.0 * RW_PENALTY_SD * RW_PENALTY_SD);
        lp
    }

    fn covariance_target(&self, z: &[f64]) -> f64 {
        let d = d_from_z(z);
        let re: f64 = self.b.iter().map(|b| random_effect_log_density(*b, &d)).sum();
        let (t0, t1) = (z[0].exp(), z[1].exp());
        let rho = z[2].tanh();
        re + half_normal_prior(t0) + half_normal_prior(t1) + z[0] + z[1] + (1.0 - rho * rho).ln()
    }

    fn rss_total(&self) -> f64 {
        self.p.subjects.iter().zip(&self.b).map(|(s, b)| s.stats.rss(line(&self.th, *b))).sum()
    }

    fn sigma_target(&self, log_sigma: f64, rss: f64) -> f64 {
        let s = log_sigma.exp();
        -self.p.n_obs * log_sigma - rss / (2.0 * s * s) + half_normal_prior(s) + log_sigma
    }

    fn coords(&self, block: Block) -> Vec<f64> {
        match block {
            Block::GammaAlpha => {
                let mut v = self.th.gamma.clone();
                if self.p.estimate_alpha() {
                    v.push(self.th.alpha);
                }
                v
            }
            Block::Coefficients => self.th.h0.clone(),
            Block::Covariance => z_from_d(&self.th.d).to_vec(),
            Block::Sigma => alloc::vec![self.th.sigma.ln()],
        }
    }

    fn candidate(&self, block: Block, delta: &[f64]) -> Theta {
        let mut th = self.th.clone();
        match block {
            Block::GammaAlpha => {
                let p = th.gamma.len();
                for (g, d) in th.gamma.iter_mut().zip(&delta[..p]) {
                    *g += d;
                }
                let shift_w = dot(&delta[..p], &self.p.w_mean);
                let (d_alpha, m0, m1) = if self.p.estimate_alpha() {
                    th.alpha += delta[p];
                    let n = self.b.len().max(1) as f64;
                    let mb0 = self.b.iter().map(|b| b[0]).sum::<f64>() / n;
                    let mb1 = self.b.iter().map(|b| b[1]).sum::<f64>() / n;
                    (delta[p], th.beta[0] + mb0, th.beta[1] + mb1)
                } else {
                    (0.0, 0.0, 0.0)
                };
                for (c, xi) in th.h0.iter_mut().zip(&self.p.greville) {
                    *c -= shift_w + d_alpha * (m0 + m1 * xi);
                }
            }
            Block::Coefficients => {
                for (c, d) in th.h0.iter_mut().zip(delta) {
                    *c += d;
                }
            }
            Block::Covariance => {
                let z0 = z_from_d(&th.d);
                let z: Vec<f64> = z0.iter().zip(delta).map(|(a, b)| a + b).collect();
                th.d = d_from_z(&z);
            }
            Block::Sigma => th.sigma = (th.sigma.ln() + delta[0]).exp(),
        }
        th
    }

    /// Log target of `block` at `delta` from the current state. Survival
    /// blocks leave the matching caches in `scratch`.
    fn block_target(&mut self, block: Block, delta: &[f64]) -> f64 {
        match block {
            Block::GammaAlpha | Block::Coefficients => {
                let th = self.candidate(block, delta);
                self.fill_caches(&th) + self.survival_prior(&th)
            }
            Block::Covariance => {
                let z0 = z_from_d(&self.th.d);
                let z: Vec<f64> = z0.iter().zip(delta).map(|(a, b)| a + b).collect();
                self.covariance_target(&z)
            }
            Block::Sigma => {
                let rss = self.rss_total();
                self.sigma_target(self.th.sigma.ln() + delta[0], rss)
            }
        }
    }

    fn current_target(&self, block: Block) -> f64 {
        match block {
            Block::GammaAlpha | Block::Coefficients => {
                self.caches.iter().map(|c| c.surv).sum::<f64>() + self.survival_prior(&self.th)
            }
            Block::Covariance => self.covariance_target(&z_from_d(&self.th.d)),
            Block::Sigma => self.sigma_target(self.th.sigma.ln(), self.rss_total()),
        }
    }

    /// Negative numeric Hessian of the block target at the current state.
    fn precision(&mut self, block: Block, dim: usize) -> DMatrix<f64> {
        let h = 1e-3;
        let f0 = self.block_target(block, &alloc::vec![0.0; dim]);
        let e = |s: &mut Self, i: usize, si: f64, j: usize, sj: f64| {
            let mut d = alloc::vec![0.0; dim];
            d[i] += si * h;
            d[j] += sj * h;
            s.block_target(block, &d)
        };
        let mut m = DMatrix::zeros(dim, dim);
        for i in 0..dim {
            let fp = e(self, i, 1.0, i, 0.0);
            let fm = e(self, i, -1.0, i, 0.0);
            m[(i, i)] = -(fp - 2.0 * f0 + fm) / (h * h);
            for j in 0..i {
                let v = e(self, i, 1.0, j, 1.0) - e(self, i, 1.0, j, -1.0) - e(self, i, -1.0, j, 1.0) + e(self, i, -1.0, j, -1.0);
                m[(i, j)] = -v / (4.0 * h * h);
                m[(j, i)] = m[(i, j)];
            }
        }
        if m.iter().any(|v| !v.is_finite()) {
            return DMatrix::identity(dim, dim);
        }
        m
    }

    fn mh_block(&mut self, block: Block, prop: &mut Proposal, iteration: usize, burnin: usize) {
        let delta = prop.draw(&mut self.rng);
        let current = self.current_target(block);
        let proposed = self.block_target(block, &delta);
        let accept = proposed.is_finite() && {
            let u: f64 = self.rng.random();
            u.ln() < proposed - current
        };
        if accept {
            let th = self.candidate(block, &delta);
            match block {
                Block::GammaAlpha | Block::Coefficients => core::mem::swap(&mut self.caches, &mut self.scratch),
                Block::Sigma => {
                    for i in 0..self.b.len() {
                        self.caches[i].long = self.long_ll(i, self.b[i], th.sigma);
                    }
                }
                Block::Covariance => {}
            }
            self.th = th;
        }
        if iteration < burnin {
            prop.adapt_scale(accept, iteration);
            let x = self.coords(block);
            prop.observe(&x);
        } else {
            prop.tried += 1;
            prop.accepted += usize::from(accept);
        }
    }

    fn update_random_effects(&mut self, iteration: usize, burnin: usize) {
        let d = self.th.d;
        for i in 0..self.b.len() {
            let s = &self.p.subjects[i];
            let l = self.p.re_chol[i];
            let scale = (2.38 / 2f64.sqrt()) * self.re_log_scale[i].exp();
            let z0: f64 = self.rng.sample(StandardNormal);
            let z1: f64 = self.rng.sample(StandardNormal);
            let b_old = self.b[i];
            let b_new = [b_old[0] + scale * l[0] * z0, b_old[1] + scale * (l[1] * z0 + l[2] * z1)];
            let c = &self.caches[i];
            let cur = c.surv + c.long + random_effect_log_density(b_old, &d);
            let ln = line(&self.th, b_new);
            let surv = s.survival_ll(&c.lh0_nodes, c.lh0_t, c.eta_w, self.th.alpha, ln);
            let long = longitudinal_log_density(&s.stats, ln, self.th.sigma);
            let new = surv + long + random_effect_log_density(b_new, &d);
            let accept = new.is_finite() && {
                let u: f64 = self.rng.random();
                u.ln() < new - cur
            };
            if accept {
                self.b[i] = b_new;
                self.caches[i].surv = surv;
                self.caches[i].long = long;
            }
            if iteration < burnin {
                let gain = ((iteration + 1) as f64).powf(-0.6);
                let ls = &mut self.re_log_scale[i];
                *ls = (*ls + gain * (if accept { 1.0 } else { 0.0 } - TARGET_MULTI)).clamp(-20.0, 10.0);
            } else {
                self.re_tried += 1;
                self.re_accepted += usize::from(accept);
            }
        }
    }

    /// Exact draw of `beta` given `theta_i = beta + b_i`.
    fn update_beta(&mut self) {
        let n = self.b.len() as f64;
        let Some(d_inv) = self.th.d.inverse() else { return };
        let prior = 1.0 / (PRIOR_SD * PRIOR_SD);
        let precision = Sym2::new(n * d_inv.a + prior, n * d_inv.b, n * d_inv.c + prior);
        let Some(v) = precision.inverse() else { return };
        let theta_sum = self.b.iter().fold([0.0, 0.0], |acc, b| {
            [acc[0] + self.th.beta[0] + b[0], acc[1] + self.th.beta[1] + b[1]]
        });
        let mean = v.mul_vec(d_inv.mul_vec(theta_sum));
        let Some(l) = v.cholesky() else { return };
        let z0: f64 = self.rng.sample(StandardNormal);
        let z1: f64 = self.rng.sample(StandardNormal);
        let beta = [mean[0] + l[0] * z0, mean[1] + l[1] * z0 + l[2] * z1];
        let shift = [beta[0] - self.th.beta[0], beta[1] - self.th.beta[1]];
        for b in self.b.iter_mut() {
            b[0] -= shift[0];
            b[1] -= shift[1];
        }
        self.th.beta = beta;
    }
}

struct ChainOutput {
    draws: Vec<Vec<f64>>,
    effects: Vec<Vec<[f64; 2]>>,
    effect_sums: Vec<[f64; 2]>,
    rates: BTreeMap<String, (usize, usize)>,
}

fn run_chain(p: &Problem, spec: &JointModelSpec, chain: u64) -> Result<ChainOutput, JointFitError> {
    let cfg = spec.mcmc;
    let mut ch = Chain::new(p, chain, cfg.seed);
    let mut blocks: Vec<(Block, Proposal)> = Vec::new();
    let mut wanted: Vec<(Block, usize)> = Vec::new();
    if p.gamma_alpha_dim() > 0 {
        wanted.push((Block::GammaAlpha, p.gamma_alpha_dim()));
    }
    wanted.push((Block::Coefficients, p.spline.n_basis()));
    if p.longitudinal {
        wanted.push((Block::Covariance, 3));
        wanted.push((Block::Sigma, 1));
    }
    for (block, dim) in wanted {
        if !ch.current_target(block).is_finite() {
            return Err(JointFitError::NonFiniteStart);
        }
        let prec = ch.precision(block, dim);
        let target = if dim == 1 { TARGET_SCALAR } else { TARGET_MULTI };
        blocks.push((block, Proposal::from_precision(prec, target)));
    }

    let burnin = cfg.n_burnin;
    let half = burnin / 2;
    let mut out = ChainOutput {
        draws: Vec::with_capacity(cfg.draws_per_chain()),
        effects: Vec::new(),
        effect_sums: alloc::vec![[0.0; 2]; p.subjects.len()],
        rates: BTreeMap::new(),
    };
    for it in 0..cfg.n_iterations {
        if p.longitudinal {
            ch.update_random_effects(it, burnin);
            ch.update_beta();
        }
        for (block, prop) in blocks.iter_mut() {
            ch.mh_block(*block, prop, it, burnin);
            if it == half {
                prop.reset_history();
            }
            if it < burnin && it > half && ((it - half).is_multiple_of(ADAPT_EVERY) || it + 1 == burnin) {
                prop.refresh_covariance();
            }
        }
        if it >= burnin && (it - burnin).is_multiple_of(cfg.n_thin) {
            out.draws.push(ch.th.to_row());
            for (acc, b) in out.effect_sums.iter_mut().zip(&ch.b) {
                acc[0] += b[0];
                acc[1] += b[1];
            }
            if spec.keep_random_effects {
                out.effects.push(ch.b.clone());
            }
        }
    }
    for (block, prop) in &blocks {
        out.rates.insert(block.name().to_string(), (prop.accepted, prop.tried));
    }
    if p.longitudinal {
        out.rates.insert("b".to_string(), (ch.re_accepted, ch.re_tried));
    }
    Ok(out)
}

/// Maximum-likelihood Weibull fit `h(t) = lambda v t^(v - 1)` ignoring
/// covariates, profiled over `v` by golden-section search on `log v`.
fn weibull_start(times: &[f64], events: &[bool]) -> (f64, f64) {
    let d = events.iter().filter(|e| **e).count() as f64;
    let d = d.max(0.5);
    let sum_log: f64 = times.iter().zip(events).filter(|(_, e)| **e).map(|(t, _)| t.max(1e-12).ln()).sum();
    let profile = |lv: f64| {
        let v = lv.exp();
        let s: f64 = times.iter().map(|t| t.powf(v)).sum();
        d * lv + (v - 1.0) * sum_log - d * s.ln()
    };
    let (mut a, mut b) = ((0.1f64).ln(), (10.0f64).ln());
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..100 {
        let x1 = b - g * (b - a);
        let x2 = a + g * (b - a);
        if profile(x1) < profile(x2) {
            a = x1;
        } else {
            b = x2;
        }
    }
    let v = (0.5 * (a + b)).exp();
    let lambda = d / times.iter().map(|t| t.powf(v)).sum::<f64>();
    (lambda, v)
}

fn prepare(cohort: &Cohort, spec: &JointModelSpec) -> Result<Problem, JointFitError> {
    let n = cohort.len();
    if n < MIN_SUBJECTS {
        return Err(JointFitError::TooFewSubjects { needed: MIN_SUBJECTS, found: n });
    }
    let cols: Vec<usize> = spec
        .covariates
        .iter()
        .map(|name| cohort.covariate_index(name).ok_or_else(|| JointFitError::UnknownCovariate(name.clone())))
        .collect::<Result<_, _>>()?;
    let subjects = cohort.subjects();
    let longitudinal = cohort.n_measurements() > 0;
    let event_times: Vec<f64> = subjects.iter().filter(|s| s.event).map(|s| s.observed_time).collect();
    let max_time = subjects.iter().map(|s| s.observed_time).fold(0.0, f64::max);
    let spline = BaselineHazardSpline::from_event_times(&event_times, max_time, spec.n_knots, spec.degree)?;
    let greville = spline.greville();

    let times: Vec<f64> = subjects.iter().map(|s| s.observed_time).collect();
    let events: Vec<bool> = subjects.iter().map(|s| s.event).collect();
    let (lambda, v) = weibull_start(&times, &events);
    let floor = 0.05 * max_time;
    let h0: Vec<f64> = greville.iter().map(|x| lambda.ln() + v.ln() + (v - 1.0) * x.max(floor).ln()).collect();

    let prepared: Vec<Prepared> = subjects
        .iter()
        .map(|s| {
            let w = cols.iter().map(|&j| s.covariates[j]).collect();
            Prepared::new(&spline, s.observed_time, s.event, w, &s.measurements)
        })
        .collect();
    let p = cols.len();
    let w_mean: Vec<f64> = (0..p).map(|k| prepared.iter().map(|s| s.w[k]).sum::<f64>() / n as f64).collect();

    let alpha = match spec.association {
        Association::Estimated => 0.0,
        Association::Fixed(a) => a,
    };
    let (beta, d, sigma, init_b, re_chol) = if longitudinal {
        let lme = fit_lme(cohort)?;
        let d = d_from_z(&z_from_d(&lme.d_hat));
        let sigma = lme.sigma_hat.max(1e-6);
        let mut bs = Vec::with_capacity(n);
        let mut chols = Vec::with_capacity(n);
        for (s, prep) in subjects.iter().zip(&prepared) {
            bs.push(lme.effects(&s.id)?);
            let (_, cov) = conditional_effects_from_stats(lme.beta_hat, &d, sigma, &prep.stats);
            let l = cov.cholesky().unwrap_or([cov.a.max(1e-8).sqrt(), 0.0, cov.c.max(1e-8).sqrt()]);
            chols.push(l);
        }
        (lme.beta_hat, d, sigma, bs, chols)
    } else {
        (
            [0.0, 0.0],
            Sym2::ZERO,
            1.0,
            alloc::vec![[0.0; 2]; n],
            alloc::vec![[0.0; 3]; n],
        )
    };
    if !longitudinal && matches!(spec.association, Association::Estimated) {
        log::warn!("no biomarker measurements: association is not identifiable and is held at 0");
    }
    let association = if longitudinal { spec.association } else { Association::Fixed(0.0) };
    let n_obs = prepared.iter().map(|s| s.stats.n).sum();
    Ok(Problem {
        spline,
        greville,
        subjects: prepared,
        longitudinal,
        association,
        w_mean,
        re_chol,
        init: Theta { beta, gamma: alloc::vec![0.0; p], alpha: if longitudinal { alpha } else { 0.0 }, d, sigma, h0 },
        init_b,
        n_obs,
    })
}

pub(super) fn run(cohort: &Cohort, spec: &JointModelSpec) -> Result<JointModelFit, JointFitError> {
    spec.mcmc.validate()?;
    let p = prepare(cohort, spec)?;
    let mut outputs = Vec::with_capacity(spec.mcmc.n_chains);
    for chain in 0..spec.mcmc.n_chains {
        outputs.push(run_chain(&p, spec, chain as u64)?);
    }

    let columns = Theta::columns(&spec.covariates, p.spline.n_basis());
    let alpha_col = 2 + spec.covariates.len();
    let rhat_alpha = if p.estimate_alpha() {
        let chains: Vec<Vec<f64>> = outputs.iter().map(|o| o.draws.iter().map(|r| r[alpha_col]).collect()).collect();
        let refs: Vec<&[f64]> = chains.iter().map(|c| c.as_slice()).collect();
        split_rhat(&refs)
    } else {
        None
    };
    if let Some(r) = rhat_alpha {
        if !(r <= 1.1) {
            log::warn!("association parameter has not converged: split R-hat {r:.3}");
        }
    }

    let draws_per_chain = spec.mcmc.draws_per_chain();
    let total = (draws_per_chain * spec.mcmc.n_chains) as f64;
    let mut re_means = alloc::vec![[0.0; 2]; p.subjects.len()];
    let mut rates: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut draws = Vec::with_capacity(draws_per_chain * spec.mcmc.n_chains);
    let mut effects = Vec::new();
    for o in outputs {
        for (m, s) in re_means.iter_mut().zip(&o.effect_sums) {
            m[0] += s[0] / total;
            m[1] += s[1] / total;
        }
        for (k, (a, t)) in o.rates {
            let e = rates.entry(k).or_insert((0, 0));
            e.0 += a;
            e.1 += t;
        }
        draws.extend(o.draws);
        effects.extend(o.effects);
    }
    let acceptance_rates = rates
        .into_iter()
        .map(|(k, (a, t))| (k, if t == 0 { 0.0 } else { a as f64 / t as f64 }))
        .collect();

    let nb = p.spline.n_basis();
    let h0_start = columns.len() - nb;
    let mean_h0: Vec<f64> = (0..nb).map(|q| draws.iter().map(|r: &Vec<f64>| r[h0_start + q]).sum::<f64>() / total).collect();
    Ok(JointModelFit {
        spec: spec.clone(),
        baseline: p.spline.with_coefficients(mean_h0),
        columns,
        draws,
        draws_per_chain,
        longitudinal: p.longitudinal,
        subject_ids: cohort.ids().map(String::from).collect(),
        random_effect_means: re_means,
        random_effect_draws: if spec.keep_random_effects { Some(effects) } else { None },
        acceptance_rates,
        rhat_alpha,
    })
}
