//! Scalar abstraction and small numeric helpers.
//!
//! Forward passes are written once, generically over [`Real`], and
//! instantiated at `f32` for training/inference and at `f64` for the
//! finite-difference gradient oracle. Transcendentals go through `libm`
//! so the crate stays `no_std` and results are identical across hosts.

use core::fmt::Debug;
use core::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

/// Floating-point scalar used by the generic forward kernels.
pub trait Real:
    Copy
    + Debug
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
{
    const ZERO: Self;
    const ONE: Self;

    fn from_f32(v: f32) -> Self;
    fn from_f64(v: f64) -> Self;
    fn from_usize(v: usize) -> Self;
    fn to_f64(self) -> f64;

    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn abs(self) -> Self;
    fn is_finite(self) -> bool;

    fn max(self, other: Self) -> Self {
        if self > other {
            self
        } else {
            other
        }
    }
    fn min(self, other: Self) -> Self {
        if self < other {
            self
        } else {
            other
        }
    }
}

impl Real for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    #[inline]
    fn from_f32(v: f32) -> Self {
        v
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn from_usize(v: usize) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }

    #[inline]
    fn exp(self) -> Self {
        libm::expf(self)
    }
    #[inline]
    fn ln(self) -> Self {
        libm::logf(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        libm::sqrtf(self)
    }
    #[inline]
    fn sin(self) -> Self {
        libm::sinf(self)
    }
    #[inline]
    fn cos(self) -> Self {
        libm::cosf(self)
    }
    #[inline]
    fn abs(self) -> Self {
        libm::fabsf(self)
    }
    #[inline]
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
}

impl Real for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    #[inline]
    fn from_f32(v: f32) -> Self {
        v as f64
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn from_usize(v: usize) -> Self {
        v as f64
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }

    #[inline]
    fn exp(self) -> Self {
        libm::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        libm::log(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        libm::sqrt(self)
    }
    #[inline]
    fn sin(self) -> Self {
        libm::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        libm::cos(self)
    }
    #[inline]
    fn abs(self) -> Self {
        libm::fabs(self)
    }
    #[inline]
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

/// Numerically stable log(Σ exp(v_i)) over a non-empty slice.
pub fn log_sum_exp<F: Real>(values: &[F]) -> F {
    debug_assert!(!values.is_empty());
    let mut m = values[0];
    for &v in &values[1..] {
        m = m.max(v);
    }
    if !m.is_finite() {
        return m;
    }
    let mut sum = F::ZERO;
    for &v in values {
        sum += (v - m).exp();
    }
    m + sum.ln()
}

/// In-place softmax of `logits / tau` over one row.
pub fn softmax_in_place<F: Real>(row: &mut [F], tau: F) {
    let mut m = row[0] / tau;
    for v in row.iter() {
        m = m.max(*v / tau);
    }
    let mut sum = F::ZERO;
    for v in row.iter_mut() {
        *v = (*v / tau - m).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

/// Sinusoidal features of a scalar in [0, 1]: `dim/2` sine/cosine pairs with
/// geometrically spaced frequencies, the usual transformer construction with
/// the input scaled by 1000.
///
/// The features are evaluated in f64 and rounded through f32 for every `F`,
/// so the f32 training path and the f64 gradient-check path see bit-equal
/// feature values (they are constants of the loss, not functions of the
/// parameters).
pub fn sinusoidal_features<F: Real>(t: F, out: &mut [F]) {
    let half = out.len() / 2;
    debug_assert!(half * 2 == out.len() && half > 0);
    let scaled = t.to_f64() * 1000.0;
    let log_base = core::f64::consts::LN_10 * 4.0; // ln(10000)
    for j in 0..half {
        let freq = libm::exp(-log_base * j as f64 / half as f64);
        out[j] = F::from_f32(libm::sin(scaled * freq) as f32);
        out[half + j] = F::from_f32(libm::cos(scaled * freq) as f32);
    }
}

/// First index of the maximum value; ties break toward the lowest index.
pub fn argmax<F: Real>(row: &[F]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_matches_naive() {
        let v = [0.3_f64, -1.2, 2.5, 0.0];
        let naive = v.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&v) - naive).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_large_values_stable() {
        let v = [1000.0_f64, 1000.0];
        let got = log_sum_exp(&v);
        assert!((got - (1000.0 + core::f64::consts::LN_2)).abs() < 1e-9);
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut row = [1.0_f32, 2.0, 3.0];
        softmax_in_place(&mut row, 1.0);
        let sum: f32 = row.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
        assert!(row[2] > row[1] && row[1] > row[0]);
    }

    #[test]
    fn argmax_tie_breaks_low() {
        assert_eq!(argmax(&[1.0_f32, 3.0, 3.0, 0.5]), 1);
    }

    #[test]
    fn sinusoidal_in_unit_range() {
        let mut out = [0.0_f32; 64];
        sinusoidal_features(0.37, &mut out);
        assert!(out.iter().all(|v| v.abs() <= 1.0 + 1e-6));
        // t=0 gives sin=0, cos=1 for every frequency.
        sinusoidal_features(0.0, &mut out);
        assert!(out[..32].iter().all(|&v| v == 0.0));
        assert!(out[32..].iter().all(|&v| v == 1.0));
    }
}
