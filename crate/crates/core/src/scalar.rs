//! The scalar abstraction shared by the numerical core.
//!
//! Everything that does linear algebra is written against [`Real`], so the
//! bound, its gradient and the optimiser run in `f64` (the default used by
//! the CLI) or `f32`.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar usable by the model: `f32` or `f64`.
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive {}

impl Real for f32 {}
impl Real for f64 {}

/// Converts an `f64` literal into `T`.
#[inline]
pub fn lit<T: Real>(v: f64) -> T {
    T::from_f64(v).expect("f64 literal representable in scalar type")
}

#[inline]
pub fn to_f64<T: Real>(v: T) -> f64 {
    v.to_f64().expect("scalar convertible to f64")
}

/// Error function, evaluated in double precision.
#[inline]
pub fn erf<T: Real>(x: T) -> T {
    lit(libm::erf(to_f64(x)))
}

/// `erf(a) - erf(b)` without cancellation when `a` and `b` share a sign and
/// both are far in the tail.
pub fn erf_diff<T: Real>(a: T, b: T) -> T {
    let (a, b) = (to_f64(a), to_f64(b));
    let d = if a > 0.0 && b > 0.0 {
        libm::erfc(b) - libm::erfc(a)
    } else if a < 0.0 && b < 0.0 {
        libm::erfc(-a) - libm::erfc(-b)
    } else {
        libm::erf(a) - libm::erf(b)
    };
    lit(d)
}

/// Standard normal cumulative distribution function.
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Euler–Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn erf_diff_matches_direct_in_the_body() {
        let d: f64 = erf_diff(0.3, -0.2);
        assert!((d - (libm::erf(0.3) - libm::erf(-0.2))).abs() < 1e-16);
    }

    #[test]
    fn erf_diff_keeps_tail_precision() {
        // erf(7) - erf(6.5): both round to 1 in double precision.
        let d: f64 = erf_diff(7.0, 6.5);
        let expect = libm::erfc(6.5) - libm::erfc(7.0);
        assert!(d > 0.0);
        assert_eq!(d, expect);
        let s: f64 = erf_diff(-6.5, -7.0);
        assert_eq!(s, expect);
    }

    #[test]
    fn f32_literals() {
        let x: f32 = lit(0.25);
        assert_eq!(x, 0.25f32);
    }
}
