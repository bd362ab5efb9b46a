//! Scalar abstraction shared by every numeric kernel.
//!
//! Kernels are written against [`Scalar`] so that they run in `f64` (the
//! default everywhere in the harness) or `f32`. Trigonometry, square roots and
//! friends come from [`nalgebra::RealField`]; conversions from literals go
//! through [`lit`].

use nalgebra::RealField;
use num_complex::Complex;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real floating-point type usable by the simulation kernels (`f32` or `f64`).
pub trait Scalar: RealField + Copy + FromPrimitive + ToPrimitive + Default {}

impl<T> Scalar for T where T: RealField + Copy + FromPrimitive + ToPrimitive + Default {}

/// Converts an `f64` literal into the working scalar type.
#[inline(always)]
pub fn lit<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("f64 literal representable in scalar type")
}

/// Converts a working scalar back to `f64` (used for reporting and IO).
#[inline(always)]
pub fn to_f64<T: Scalar>(x: T) -> f64 {
    x.to_f64().expect("scalar convertible to f64")
}

/// `count` as a scalar.
#[inline(always)]
pub fn from_usize<T: Scalar>(count: usize) -> T {
    T::from_usize(count).expect("usize representable in scalar type")
}

/// Unit phasor `e^{j angle}`.
#[inline(always)]
pub fn cis<T: Scalar>(angle: T) -> Complex<T> {
    let (s, c) = angle.sin_cos();
    Complex::new(c, s)
}

/// Phase of a complex number in `(-π, π]`.
#[inline(always)]
pub fn arg<T: Scalar>(z: Complex<T>) -> T {
    z.im.atan2(z.re)
}

/// Squared magnitude.
#[inline(always)]
pub fn abs2<T: Scalar>(z: Complex<T>) -> T {
    z.re * z.re + z.im * z.im
}

/// Canonical reduction of an angle into `[0, 2π)`.
///
/// Every mod-2π reduction in the crate goes through this helper.
pub fn wrap_two_pi<T: Scalar>(angle: T) -> T {
    let two_pi = T::two_pi();
    let mut r = angle % two_pi;
    if r < T::zero() {
        r += two_pi;
    }
    // `-tiny + 2π` can round up to exactly 2π.
    if r >= two_pi {
        r -= two_pi;
    }
    r
}

/// Reduction of an angle into `(-π, π]`.
pub fn wrap_pi<T: Scalar>(angle: T) -> T {
    let r = wrap_two_pi(angle);
    if r > T::pi() {
        r - T::two_pi()
    } else {
        r
    }
}

/// Decibels to linear power ratio.
pub fn db_to_linear<T: Scalar>(db: T) -> T {
    lit::<T>(10.0).powf(db / lit(10.0))
}

/// Linear power ratio to decibels.
pub fn linear_to_db<T: Scalar>(x: T) -> T {
    lit::<T>(10.0) * x.log10()
}

/// dBm to watts.
pub fn dbm_to_watts<T: Scalar>(dbm: T) -> T {
    db_to_linear(dbm - lit(30.0))
}

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Boltzmann constant, J/K.
pub const BOLTZMANN: f64 = 1.380_649e-23;

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn wrap_stays_in_range() {
        for &a in &[-7.0 * PI, -PI, -1e-18, 0.0, 1e-18, PI, 2.0 * PI, 13.1] {
            let w = wrap_two_pi(a);
            assert!((0.0..2.0 * PI).contains(&w), "{a} -> {w}");
            let p = wrap_pi(a);
            assert!(p > -PI && p <= PI, "{a} -> {p}");
        }
        assert_eq!(wrap_two_pi(2.0 * PI), 0.0);
    }

    #[test]
    fn wrap_works_in_f32() {
        let w = wrap_two_pi(-0.5f32);
        assert!((w - (2.0 * std::f32::consts::PI - 0.5)).abs() < 1e-6);
    }

    #[test]
    fn db_conversions() {
        assert!((db_to_linear(3.0f64) - 1.995_262_314_968_879_6).abs() < 1e-12);
        assert!((dbm_to_watts(30.0f64) - 1.0).abs() < 1e-12);
        assert!((linear_to_db(100.0f64) - 20.0).abs() < 1e-12);
    }
}
