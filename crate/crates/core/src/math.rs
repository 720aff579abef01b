//! Small numeric helpers shared across modules: 2x2 algebra, quantiles,
//! rounding and summary statistics.

// Unused when std is linked: its inherent float methods take precedence.
#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec::Vec;
use core::f64::consts::PI;

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Round half to even.
#[inline]
pub fn round_half_even(x: f64) -> f64 {
    libm::rint(x)
}

/// Sample quantile with linear interpolation between order statistics
/// (Hyndman-Fan type 7). `sorted` must be ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    debug_assert!(n > 0);
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    // corrective second pass; exact for constant inputs
    m + xs.iter().map(|x| x - m).sum::<f64>() / n
}

/// Sample standard deviation (n - 1 denominator).
pub fn sample_sd(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (n - 1) as f64).sqrt()
}

pub fn sorted_copy(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

/// Log density of N(mean, sd^2).
#[inline]
pub fn normal_logpdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * (LN_2PI + z * z) - sd.ln()
}

#[inline]
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Standard normal CDF.
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / core::f64::consts::SQRT_2)
}

/// Symmetric 2x2 matrix `[[a, b], [b, c]]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Sym2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Sym2 {
    pub const ZERO: Sym2 = Sym2 { a: 0.0, b: 0.0, c: 0.0 };
    pub const IDENTITY: Sym2 = Sym2 { a: 1.0, b: 0.0, c: 1.0 };

    pub fn new(a: f64, b: f64, c: f64) -> Self {
        Sym2 { a, b, c }
    }

    pub fn det(&self) -> f64 {
        self.a * self.c - self.b * self.b
    }

    pub fn trace(&self) -> f64 {
        self.a + self.c
    }

    pub fn inverse(&self) -> Option<Sym2> {
        let d = self.det();
        if !(d.abs() > 0.0) || !d.is_finite() {
            return None;
        }
        Some(Sym2 { a: self.c / d, b: -self.b / d, c: self.a / d })
    }

    pub fn mul_vec(&self, v: [f64; 2]) -> [f64; 2] {
        [self.a * v[0] + self.b * v[1], self.b * v[0] + self.c * v[1]]
    }

    pub fn quad(&self, v: [f64; 2]) -> f64 {
        v[0] * (self.a * v[0] + self.b * v[1]) + v[1] * (self.b * v[0] + self.c * v[1])
    }

    pub fn scale(&self, s: f64) -> Sym2 {
        Sym2 { a: self.a * s, b: self.b * s, c: self.c * s }
    }

    pub fn add(&self, o: &Sym2) -> Sym2 {
        Sym2 { a: self.a + o.a, b: self.b + o.b, c: self.c + o.c }
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> [f64; 2] {
        let m = 0.5 * (self.a + self.c);
        let d = (0.25 * (self.a - self.c) * (self.a - self.c) + self.b * self.b).sqrt();
        [m - d, m + d]
    }

    /// Lower Cholesky factor `[[l11, 0], [l21, l22]]`, `None` unless positive
    /// definite.
    pub fn cholesky(&self) -> Option<[f64; 3]> {
        if !(self.a > 0.0) {
            return None;
        }
        let l11 = self.a.sqrt();
        let l21 = self.b / l11;
        let r = self.c - l21 * l21;
        if !(r > 0.0) {
            return None;
        }
        Some([l11, l21, r.sqrt()])
    }

    /// Projection onto the positive semidefinite cone (clip negative
    /// eigenvalues at zero).
    pub fn nearest_psd(&self) -> Sym2 {
        let [l1, l2] = self.eigenvalues();
        if l1 >= 0.0 {
            return *self;
        }
        let l2 = l2.max(0.0);
        if l2 == 0.0 {
            return Sym2::ZERO;
        }
        // eigenvector of l2
        let (vx, vy) = if self.b.abs() > 1e-300 {
            (l2 - self.c, self.b)
        } else if self.a >= self.c {
            (1.0, 0.0)
        } else {
            (0.0, 1.0)
        };
        let n2 = vx * vx + vy * vy;
        Sym2 { a: l2 * vx * vx / n2, b: l2 * vx * vy / n2, c: l2 * vy * vy / n2 }
    }
}

/// General 2x2 matrix, row major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat2(pub [[f64; 2]; 2]);

impl Mat2 {
    pub fn from_sym(s: &Sym2) -> Self {
        Mat2([[s.a, s.b], [s.b, s.c]])
    }

    pub fn identity() -> Self {
        Mat2([[1.0, 0.0], [0.0, 1.0]])
    }

    pub fn mul(&self, o: &Mat2) -> Mat2 {
        let a = &self.0;
        let b = &o.0;
        Mat2([
            [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
            [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
        ])
    }

    pub fn add(&self, o: &Mat2) -> Mat2 {
        let a = &self.0;
        let b = &o.0;
        Mat2([[a[0][0] + b[0][0], a[0][1] + b[0][1]], [a[1][0] + b[1][0], a[1][1] + b[1][1]]])
    }

    pub fn det(&self) -> f64 {
        self.0[0][0] * self.0[1][1] - self.0[0][1] * self.0[1][0]
    }

    pub fn inverse(&self) -> Option<Mat2> {
        let d = self.det();
        if !(d.abs() > 0.0) || !d.is_finite() {
            return None;
        }
        let m = &self.0;
        Some(Mat2([[m[1][1] / d, -m[0][1] / d], [-m[1][0] / d, m[0][0] / d]]))
    }

    pub fn mul_vec(&self, v: [f64; 2]) -> [f64; 2] {
        [self.0[0][0] * v[0] + self.0[0][1] * v[1], self.0[1][0] * v[0] + self.0[1][1] * v[1]]
    }

    /// Symmetric part, for products that are symmetric in exact arithmetic.
    pub fn symmetrize(&self) -> Sym2 {
        Sym2 { a: self.0[0][0], b: 0.5 * (self.0[0][1] + self.0[1][0]), c: self.0[1][1] }
    }
}
