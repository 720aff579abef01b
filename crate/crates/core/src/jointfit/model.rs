//! Parameter vector and likelihood of the joint model
//!
//! `h_i(s) = h0(s) exp(gamma'w_i + alpha m_i(s))`,
//! `m_i(s) = beta0 + b0i + (beta1 + b1i) s`,
//! `y_ij ~ N(m_i(t_ij), sigma^2)`, `b_i ~ N(0, D)`.

// Unused when std is linked: its inherent float methods take precedence.
#[allow(unused_imports)]
use num_traits::Float;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::spline::BaselineHazardSpline;
use crate::dataset::Measurement;
use crate::lme::SubjectStats;
use crate::math::{Sym2, LN_2PI};
use crate::quadrature::gl15_on;

/// One value of every model parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub beta: [f64; 2],
    pub gamma: Vec<f64>,
    pub alpha: f64,
    pub d: Sym2,
    pub sigma: f64,
    /// Spline coefficients of the log baseline hazard.
    pub h0: Vec<f64>,
}

impl Theta {
    /// Column names of the flattened draw matrix:
    /// `beta0, beta1, gamma_<name>..., alpha, d11, d12, d22, sigma, h0_0...`.
    pub fn columns(covariates: &[String], n_basis: usize) -> Vec<String> {
        let mut c: Vec<String> = alloc::vec!["beta0".into(), "beta1".into()];
        c.extend(covariates.iter().map(|n| format!("gamma_{n}")));
        c.extend(["alpha", "d11", "d12", "d22", "sigma"].iter().map(|s| String::from(*s)));
        c.extend((0..n_basis).map(|q| format!("h0_{q}")));
        c
    }

    pub fn to_row(&self) -> Vec<f64> {
        let mut r = Vec::with_capacity(8 + self.gamma.len() + self.h0.len());
        r.extend_from_slice(&self.beta);
        r.extend_from_slice(&self.gamma);
        r.extend_from_slice(&[self.alpha, self.d.a, self.d.b, self.d.c, self.sigma]);
        r.extend_from_slice(&self.h0);
        r
    }

    pub fn from_row(row: &[f64], n_covariates: usize) -> Theta {
        let p = n_covariates;
        Theta {
            beta: [row[0], row[1]],
            gamma: row[2..2 + p].to_vec(),
            alpha: row[2 + p],
            d: Sym2::new(row[3 + p], row[4 + p], row[5 + p]),
            sigma: row[6 + p],
            h0: row[7 + p..].to_vec(),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.sigma > 0.0 && self.d.a >= 0.0 && self.d.c >= 0.0 && self.d.det() >= -1e-12 * (self.d.a * self.d.c).max(1e-300)
    }
}

/// Everything the likelihood needs about one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectInput<'a> {
    pub observed_time: f64,
    pub event: bool,
    /// Covariates in model order.
    pub w: &'a [f64],
    pub measurements: &'a [Measurement],
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `log N(b; 0, D)`; `-inf` unless `D` is positive definite.
pub fn random_effect_log_density(b: [f64; 2], d: &Sym2) -> f64 {
    let det = d.det();
    if !(det > 0.0 && d.a > 0.0) {
        return f64::NEG_INFINITY;
    }
    let inv = Sym2::new(d.c / det, -d.b / det, d.a / det);
    -LN_2PI - 0.5 * det.ln() - 0.5 * inv.quad(b)
}

/// `log p(Y | b)` from sufficient statistics.
pub fn longitudinal_log_density(stats: &SubjectStats, line: [f64; 2], sigma: f64) -> f64 {
    if stats.n == 0.0 {
        return 0.0;
    }
    -0.5 * stats.n * (LN_2PI + 2.0 * sigma.ln()) - stats.rss(line) / (2.0 * sigma * sigma)
}

/// Quadrature nodes and weights for `[a, c]`: 15-node Gauss-Legendre on
/// every piece between consecutive knots (the integrand is smooth on each
/// piece but only twice differentiable across knots).
pub fn quadrature_nodes(spline: &BaselineHazardSpline, a: f64, c: f64) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    if !(c > a) {
        return (nodes, weights);
    }
    let mut cuts: Vec<f64> = alloc::vec![a];
    cuts.extend(spline.internal_knots.iter().chain(&[spline.boundary[1]]).copied().filter(|k| *k > a && *k < c));
    cuts.push(c);
    for piece in cuts.windows(2) {
        let (x, w) = gl15_on(piece[0], piece[1]);
        nodes.extend_from_slice(&x);
        weights.extend_from_slice(&w);
    }
    (nodes, weights)
}

/// `int_a^c h(s) ds` for a subject with linear predictor `eta_w = gamma'w`
/// and trajectory `line`, by [`quadrature_nodes`].
pub fn cumulative_hazard(spline: &BaselineHazardSpline, alpha: f64, eta_w: f64, line: [f64; 2], a: f64, c: f64) -> f64 {
    let (x, w) = quadrature_nodes(spline, a, c);
    let mut basis = alloc::vec![0.0; spline.n_basis()];
    let mut total = 0.0;
    for k in 0..x.len() {
        spline.basis_into(x[k], &mut basis);
        let lh0 = spline.intercept + dot(&basis, &spline.coefficients);
        total += w[k] * (lh0 + eta_w + alpha * (line[0] + line[1] * x[k])).exp();
    }
    total
}

/// Complete-data log-likelihood of one subject:
/// `delta log h(T) - H(T) + log p(Y | b) + log p(b)`.
pub fn subject_log_likelihood(theta: &Theta, spline: &BaselineHazardSpline, b: [f64; 2], subject: &SubjectInput) -> f64 {
    let spline = spline.with_coefficients(theta.h0.clone());
    let line = [theta.beta[0] + b[0], theta.beta[1] + b[1]];
    let eta_w = dot(&theta.gamma, subject.w);
    let t = subject.observed_time;
    let mut ll = -cumulative_hazard(&spline, theta.alpha, eta_w, line, 0.0, t);
    if subject.event {
        let (basis, _) = spline.basis(t);
        ll += spline.intercept + dot(&basis, &spline.coefficients) + eta_w + theta.alpha * (line[0] + line[1] * t);
    }
    ll += longitudinal_log_density(&SubjectStats::from_measurements(subject.measurements), line, theta.sigma);
    ll + random_effect_log_density(b, &theta.d)
}

/// Quadrature grid on an interval with the non-zero spline basis values at
/// every node, so the log baseline hazard at the nodes is a short dot
/// product per coefficient vector.
#[derive(Debug, Clone)]
pub struct NodeSet {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// `degree + 1` values per node.
    basis: Vec<f64>,
    /// Index of the first non-zero basis function at each node.
    first: Vec<usize>,
    stride: usize,
}

impl NodeSet {
    pub fn new(spline: &BaselineHazardSpline, a: f64, c: f64) -> Self {
        let stride = spline.degree + 1;
        let (nodes, weights) = quadrature_nodes(spline, a, c);
        let mut basis = alloc::vec![0.0; nodes.len() * stride];
        let mut first = alloc::vec![0; nodes.len()];
        for k in 0..nodes.len() {
            first[k] = spline.nonzero_basis(nodes[k], &mut basis[k * stride..(k + 1) * stride]).0;
        }
        NodeSet { nodes, weights, basis, first, stride }
    }

    /// Log baseline hazard at every node for coefficients `c` (intercept 0).
    pub fn log_h0(&self, c: &[f64], out: &mut Vec<f64>) {
        let s = self.stride;
        out.resize(self.nodes.len(), 0.0);
        for (k, (o, &f)) in out.iter_mut().zip(&self.first).enumerate() {
            *o = dot(&self.basis[k * s..(k + 1) * s], &c[f..f + s]);
        }
    }

    /// `sum_k w_k exp(lh0_k + eta_w + alpha (line0 + line1 s_k))`.
    #[inline]
    pub fn integral(&self, lh0: &[f64], eta_w: f64, alpha: f64, line: [f64; 2]) -> f64 {
        let mut h = 0.0;
        for ((&w, &l), &s) in self.weights.iter().zip(lh0).zip(&self.nodes) {
            h += w * (l + eta_w + alpha * (line[0] + line[1] * s)).exp();
        }
        h
    }
}

/// Per-subject quantities fixed during sampling: the grid on `[0, T]` and
/// the spline basis at `T`.
#[derive(Debug, Clone)]
pub(crate) struct Prepared {
    pub t: f64,
    pub event: bool,
    pub w: Vec<f64>,
    pub stats: SubjectStats,
    pub grid: NodeSet,
    pub basis_t: Vec<f64>,
}

impl Prepared {
    pub fn new(spline: &BaselineHazardSpline, t: f64, event: bool, w: Vec<f64>, measurements: &[Measurement]) -> Self {
        let (basis_t, _) = spline.basis(t);
        Prepared { t, event, w, stats: SubjectStats::from_measurements(measurements), grid: NodeSet::new(spline, 0.0, t), basis_t }
    }

    /// Log baseline hazard at the nodes and at `T` for coefficients `c`.
    pub fn log_h0(&self, c: &[f64], out_nodes: &mut Vec<f64>) -> f64 {
        self.grid.log_h0(c, out_nodes);
        dot(&self.basis_t, c)
    }

    /// Survival part `delta log h(T) - H(T)` given cached log-baseline values.
    #[inline]
    pub fn survival_ll(&self, lh0_nodes: &[f64], lh0_t: f64, eta_w: f64, alpha: f64, line: [f64; 2]) -> f64 {
        let mut ll = -self.grid.integral(lh0_nodes, eta_w, alpha, line);
        if self.event {
            ll += lh0_t + eta_w + alpha * (line[0] + line[1] * self.t);
        }
        ll
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::adaptive_gk15;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    fn spline() -> BaselineHazardSpline {
        BaselineHazardSpline::new(alloc::vec![0.8, 1.6, 2.5, 3.3, 4.6], [0.0, 7.0], 3).unwrap()
    }

    fn theta(nb: usize) -> Theta {
        Theta {
            beta: [-1.35, 0.3],
            gamma: alloc::vec![0.5, 1.5],
            alpha: 4.5,
            d: Sym2::new(0.0729, 0.00432, 0.0064),
            sigma: 0.25,
            h0: alloc::vec![-0.3; nb],
        }
    }

    #[test]
    fn row_round_trip() {
        let th = theta(9);
        let cols = Theta::columns(&[String::from("w1"), String::from("w2")], 9);
        let row = th.to_row();
        assert_eq!(cols.len(), row.len());
        assert_eq!(cols[4], "alpha");
        assert_eq!(Theta::from_row(&row, 2), th);
    }

    #[test]
    fn survival_only_unit_hazard() {
        let s = spline();
        let mut th = theta(s.n_basis());
        th.alpha = 0.0;
        th.gamma = alloc::vec![0.0, 0.0];
        th.h0 = alloc::vec![0.0; s.n_basis()];
        let b = [0.1, -0.05];
        let subj = SubjectInput { observed_time: 2.7, event: false, w: &[0.3, 0.2], measurements: &[] };
        let ll = subject_log_likelihood(&th, &s, b, &subj);
        assert_relative_eq!(ll, -2.7 + random_effect_log_density(b, &th.d), epsilon = 1e-13);
    }

    #[test]
    fn sigma_only_changes_longitudinal_term() {
        let s = spline();
        let th = theta(s.n_basis());
        let ms = [Measurement { time: 0.0, value: -1.2 }, Measurement { time: 0.5, value: -1.0 }];
        let subj = SubjectInput { observed_time: 3.0, event: true, w: &[0.1, -0.4], measurements: &ms };
        let b = [0.05, 0.01];
        let th2 = Theta { sigma: 0.5, ..th.clone() };
        let diff = subject_log_likelihood(&th2, &s, b, &subj) - subject_log_likelihood(&th, &s, b, &subj);
        let line = [th.beta[0] + b[0], th.beta[1] + b[1]];
        let rss: f64 = ms.iter().map(|m| (m.value - line[0] - line[1] * m.time).powi(2)).sum();
        let expected = -2.0 * 2f64.ln() - rss / (2.0 * 0.25) + rss / (2.0 * 0.0625);
        assert_relative_eq!(diff, expected, epsilon = 1e-12);
    }

    #[test]
    fn quadrature_matches_adaptive_oracle() {
        let s = spline();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let mut worst: f64 = 0.0;
        for _ in 0..500 {
            let coefs: Vec<f64> = (0..s.n_basis()).map(|_| rng.random_range(-2.0..1.0)).collect();
            let sp = s.with_coefficients(coefs);
            let alpha = rng.random_range(-5.0..5.0);
            let line = [rng.random_range(-2.0..0.0), rng.random_range(-0.4..0.6)];
            let eta = rng.random_range(-2.0..2.0);
            let t = rng.random_range(0.05..7.0);
            let gl = cumulative_hazard(&sp, alpha, eta, line, 0.0, t);
            let f = |x: f64| {
                let (b, _) = sp.basis(x);
                (dot(&b, &sp.coefficients) + eta + alpha * (line[0] + line[1] * x)).exp()
            };
            let oracle = adaptive_gk15(f, 0.0, t, 0.0, 1e-13, 2000).unwrap();
            worst = worst.max(((gl - oracle) / oracle).abs());
        }
        assert!(worst <= 1e-6, "worst relative error {worst}");
    }

    #[test]
    fn prepared_matches_direct() {
        let s = spline();
        let th = theta(s.n_basis());
        let ms = [Measurement { time: 0.0, value: -1.2 }, Measurement { time: 1.5, value: -0.7 }];
        let p = Prepared::new(&s, 4.1, true, alloc::vec![0.2, -0.1], &ms);
        let b = [0.02, -0.03];
        let line = [th.beta[0] + b[0], th.beta[1] + b[1]];
        let mut nodes = Vec::new();
        let lt = p.log_h0(&th.h0, &mut nodes);
        let eta = dot(&th.gamma, &p.w);
        let fast = p.survival_ll(&nodes, lt, eta, th.alpha, line)
            + longitudinal_log_density(&p.stats, line, th.sigma)
            + random_effect_log_density(b, &th.d);
        let subj = SubjectInput { observed_time: 4.1, event: true, w: &[0.2, -0.1], measurements: &ms };
        assert_relative_eq!(fast, subject_log_likelihood(&th, &s, b, &subj), max_relative = 1e-13);
    }
}
