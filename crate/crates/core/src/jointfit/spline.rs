//! Clamped B-spline log-baseline hazard,
//! `log h0(t) = intercept + sum_q c_q B_q(t)`.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::JointFitError;
use crate::math::quantile_sorted;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineHazardSpline {
    /// Strictly increasing, strictly inside `boundary`.
    pub internal_knots: Vec<f64>,
    pub boundary: [f64; 2],
    pub degree: usize,
    pub intercept: f64,
    /// One per basis function (`internal_knots.len() + degree + 1`).
    pub coefficients: Vec<f64>,
}

/// Log baseline hazard at `t`, with a flag set when `t` lies outside the
/// boundary knots (the boundary value is used).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogHazard {
    pub value: f64,
    pub extrapolated: bool,
}

impl BaselineHazardSpline {
    pub fn new(internal_knots: Vec<f64>, boundary: [f64; 2], degree: usize) -> Result<Self, JointFitError> {
        if !(boundary[0] < boundary[1]) || !boundary.iter().all(|b| b.is_finite()) {
            return Err(JointFitError::Spline("boundary must be finite and increasing"));
        }
        let mut prev = boundary[0];
        for &k in &internal_knots {
            if !(k > prev) {
                return Err(JointFitError::Spline("knots must be strictly increasing inside the boundary"));
            }
            prev = k;
        }
        if !(boundary[1] > prev) {
            return Err(JointFitError::Spline("knots must be strictly increasing inside the boundary"));
        }
        let nb = internal_knots.len() + degree + 1;
        Ok(BaselineHazardSpline { internal_knots, boundary, degree, intercept: 0.0, coefficients: vec![0.0; nb] })
    }

    /// `q` internal knots at the `k / (q + 1)` quantiles of the event times;
    /// boundary `[0, max_time]`. Coinciding quantiles are merged; without
    /// events the knots are equispaced.
    pub fn from_event_times(event_times: &[f64], max_time: f64, q: usize, degree: usize) -> Result<Self, JointFitError> {
        let mut sorted = event_times.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let mut knots: Vec<f64> = if sorted.is_empty() {
            (1..=q).map(|k| max_time * k as f64 / (q + 1) as f64).collect()
        } else {
            (1..=q).map(|k| quantile_sorted(&sorted, k as f64 / (q + 1) as f64)).collect()
        };
        let eps = 1e-9 * max_time;
        knots.retain(|k| *k > eps && *k < max_time - eps);
        knots.dedup_by(|a, b| (*a - *b).abs() <= eps);
        if knots.len() < q {
            log::warn!("{} coinciding baseline-hazard knot(s) merged", q - knots.len());
        }
        Self::new(knots, [0.0, max_time], degree)
    }

    pub fn n_basis(&self) -> usize {
        self.internal_knots.len() + self.degree + 1
    }

    pub fn knot_vector(&self) -> Vec<f64> {
        let p = self.degree;
        let mut u = vec![self.boundary[0]; p + 1];
        u.extend_from_slice(&self.internal_knots);
        u.extend(core::iter::repeat_n(self.boundary[1], p + 1));
        u
    }

    /// Values of all basis functions at `t` (clamped into the boundary).
    pub fn basis(&self, t: f64) -> (Vec<f64>, bool) {
        let mut out = vec![0.0; self.n_basis()];
        let extrapolated = self.basis_into(t, &mut out);
        (out, extrapolated)
    }

    /// Writes the basis at `t` into `out` (length `n_basis`); returns the
    /// extrapolation flag.
    pub fn basis_into(&self, t: f64, out: &mut [f64]) -> bool {
        out.iter_mut().for_each(|x| *x = 0.0);
        let mut local = vec![0.0; self.degree + 1];
        let (first, extrapolated) = self.nonzero_basis(t, &mut local);
        out[first..first + local.len()].copy_from_slice(&local);
        extrapolated
    }

    /// The `degree + 1` basis functions that can be non-zero at `t`, written
    /// into `out`; returns the index of the first one and the extrapolation
    /// flag.
    pub fn nonzero_basis(&self, t: f64, out: &mut [f64]) -> (usize, bool) {
        let [a, b] = self.boundary;
        let extrapolated = t < a || t > b;
        let t = t.clamp(a, b);
        let p = self.degree;
        let nb = self.n_basis();
        let u = self.knot_vector();
        // span k with u[k] <= t < u[k + 1], k in [p, nb - 1]
        let k = if t >= b { nb - 1 } else { (u.partition_point(|x| *x <= t) - 1).clamp(p, nb - 1) };
        let mut n = vec![0.0; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        n[0] = 1.0;
        for j in 1..=p {
            left[j] = t - u[k + 1 - j];
            right[j] = u[k + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom != 0.0 { n[r] / denom } else { 0.0 };
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        out[..=p].copy_from_slice(&n);
        (k - p, extrapolated)
    }

    /// Greville abscissae; a linear function `f` is reproduced exactly by
    /// coefficients `f(xi_q)` when `degree >= 1`.
    pub fn greville(&self) -> Vec<f64> {
        let u = self.knot_vector();
        let p = self.degree;
        (0..self.n_basis())
            .map(|q| if p == 0 { 0.5 * (u[q] + u[q + 1]) } else { u[q + 1..=q + p].iter().sum::<f64>() / p as f64 })
            .collect()
    }

    pub fn with_coefficients(&self, coefficients: Vec<f64>) -> Self {
        debug_assert_eq!(coefficients.len(), self.n_basis());
        BaselineHazardSpline { coefficients, ..self.clone() }
    }
}

/// `intercept + sum_q c_q B_q(t)`; flat beyond the boundary knots.
pub fn log_baseline_hazard(spline: &BaselineHazardSpline, t: f64) -> LogHazard {
    let (b, extrapolated) = spline.basis(t);
    let value = spline.intercept + b.iter().zip(&spline.coefficients).map(|(x, c)| x * c).sum::<f64>();
    LogHazard { value, extrapolated }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cubic() -> BaselineHazardSpline {
        BaselineHazardSpline::new(vec![1.0, 2.5, 3.0, 4.2, 6.0], [0.0, 8.0], 3).unwrap()
    }

    #[test]
    fn zero_coefficients_give_unit_hazard() {
        let s = cubic();
        for t in [0.0, 0.3, 2.5, 7.9, 8.0] {
            assert_eq!(log_baseline_hazard(&s, t).value, 0.0);
        }
    }

    #[test]
    fn degree_zero_single_interval() {
        let mut s = BaselineHazardSpline::new(vec![], [0.0, 5.0], 0).unwrap();
        s.intercept = 0.2;
        s.coefficients = vec![1.5];
        for t in [0.0, 2.0, 5.0] {
            assert_relative_eq!(log_baseline_hazard(&s, t).value, 1.7);
        }
    }

    #[test]
    fn partition_of_unity_and_shift() {
        let s = cubic();
        let coefs: Vec<f64> = (0..s.n_basis()).map(|q| (q as f64 * 0.7).sin()).collect();
        let s = s.with_coefficients(coefs.clone());
        let shifted = s.with_coefficients(coefs.iter().map(|c| c + 0.37).collect());
        for k in 0..=80 {
            let t = 0.1 * k as f64;
            let (b, _) = s.basis(t);
            assert_relative_eq!(b.iter().sum::<f64>(), 1.0, epsilon = 1e-14);
            assert!(b.iter().all(|x| *x >= 0.0));
            let d = log_baseline_hazard(&shifted, t).value - log_baseline_hazard(&s, t).value;
            assert_relative_eq!(d, 0.37, epsilon = 1e-13);
        }
    }

    #[test]
    fn greville_reproduces_lines() {
        let s = cubic();
        let xi = s.greville();
        let s = s.with_coefficients(xi.iter().map(|x| 0.5 - 0.25 * x).collect());
        for k in 0..=16 {
            let t = 0.5 * k as f64;
            assert_relative_eq!(log_baseline_hazard(&s, t).value, 0.5 - 0.25 * t, epsilon = 1e-13);
        }
    }

    #[test]
    fn extrapolation_is_flat_and_flagged() {
        let s = cubic();
        let s = s.with_coefficients((0..s.n_basis()).map(|q| q as f64).collect());
        let end = log_baseline_hazard(&s, 8.0);
        let beyond = log_baseline_hazard(&s, 11.0);
        assert!(!end.extrapolated && beyond.extrapolated);
        assert_eq!(end.value, beyond.value);
    }

    #[test]
    fn knots_from_event_quantiles() {
        let times: Vec<f64> = (1..=60).map(|k| k as f64 * 0.1).collect();
        let s = BaselineHazardSpline::from_event_times(&times, 7.0, 5, 3).unwrap();
        assert_eq!(s.internal_knots.len(), 5);
        assert_eq!(s.boundary, [0.0, 7.0]);
        assert_relative_eq!(s.internal_knots[2], 3.05, epsilon = 1e-12);
        assert_eq!(s.n_basis(), 9);
        let tied = BaselineHazardSpline::from_event_times(&[2.0; 10], 7.0, 5, 3).unwrap();
        assert_eq!(tied.internal_knots, vec![2.0]);
    }
}
