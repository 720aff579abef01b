//! Fixed 15-node Gauss-Legendre rule and an adaptive Gauss-Kronrod (7/15)
//! integrator used as an accuracy oracle.

use alloc::vec::Vec;
use thiserror::Error;

/// Gauss-Legendre nodes and weights on [-1, 1], 15 points.
pub const GL15: [(f64, f64); 15] = [
    (-0.9879925180204854, 0.03075324199611727),
    (-0.937273392400706, 0.07036604748810812),
    (-0.8482065834104272, 0.10715922046717194),
    (-0.7244177313601701, 0.13957067792615432),
    (-0.5709721726085388, 0.16626920581699392),
    (-0.3941513470775634, 0.1861610000155622),
    (-0.20119409399743451, 0.19843148532711158),
    (0.0, 0.2025782419255613),
    (0.20119409399743451, 0.19843148532711158),
    (0.3941513470775634, 0.1861610000155622),
    (0.5709721726085388, 0.16626920581699392),
    (0.7244177313601701, 0.13957067792615432),
    (0.8482065834104272, 0.10715922046717194),
    (0.937273392400706, 0.07036604748810812),
    (0.9879925180204854, 0.03075324199611727),
];

pub const GL_NODES: usize = 15;

/// Nodes and weights of the 15-point rule mapped to `[a, b]`.
pub fn gl15_on(a: f64, b: f64) -> ([f64; GL_NODES], [f64; GL_NODES]) {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (b + a);
    let mut x = [0.0; GL_NODES];
    let mut w = [0.0; GL_NODES];
    for (k, &(n, wt)) in GL15.iter().enumerate() {
        x[k] = mid + half * n;
        w[k] = half * wt;
    }
    (x, w)
}

pub fn gauss_legendre_15<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64) -> f64 {
    let (x, w) = gl15_on(a, b);
    x.iter().zip(w.iter()).map(|(&xi, &wi)| wi * f(xi)).sum()
}

// Kronrod abscissae (positive half, descending) and weights; the 7-point
// Gauss weights sit on the odd-indexed abscissae.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadError {
    #[error("adaptive quadrature did not converge on [{a}, {b}]: estimate {estimate}, error {error:e} > {tolerance:e}")]
    NonConvergence { a: f64, b: f64, estimate: f64, error: f64, tolerance: f64 },
    #[error("integrand is not finite on [{a}, {b}]")]
    NonFinite { a: f64, b: f64 },
}

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

/// Globally adaptive Gauss-Kronrod integration: the interval with the largest
/// error estimate is bisected until the summed error is below
/// `max(abs_tol, rel_tol * |estimate|)`.
pub fn adaptive_gk15<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_intervals: usize,
) -> Result<f64, QuadError> {
    if a == b {
        return Ok(0.0);
    }
    let (v, e) = gk15(&mut f, a, b);
    let mut parts: Vec<(f64, f64, f64, f64)> = alloc::vec![(a, b, v, e)];
    loop {
        let total: f64 = parts.iter().map(|p| p.2).sum();
        let err: f64 = parts.iter().map(|p| p.3).sum();
        if !total.is_finite() || !err.is_finite() {
            return Err(QuadError::NonFinite { a, b });
        }
        if err <= abs_tol.max(rel_tol * total.abs()) {
            return Ok(total);
        }
        if parts.len() >= max_intervals {
            return Err(QuadError::NonConvergence { a, b, estimate: total, error: err, tolerance: abs_tol });
        }
        let (idx, _) = parts
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("non-empty");
        let (lo, hi, _, _) = parts.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        if !(mid > lo && mid < hi) {
            return Err(QuadError::NonConvergence { a, b, estimate: total, error: err, tolerance: abs_tol });
        }
        let (v1, e1) = gk15(&mut f, lo, mid);
        let (v2, e2) = gk15(&mut f, mid, hi);
        parts.push((lo, mid, v1, e1));
        parts.push((mid, hi, v2, e2));
    }
}
