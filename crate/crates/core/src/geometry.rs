//! Planar geometry kernel: positions, boresight-relative angles, two-leg
//! delays and uniform-linear-array responses.
//!
//! Angles are measured on the vector from the AP to the point of interest
//! and reduced into `[0, 2π)` relative to the AP boresight.

use nalgebra::DVector;
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{cis, from_usize, lit, wrap_two_pi, Scalar, SPEED_OF_LIGHT};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Position2D<T> {
    pub x: T,
    pub y: T,
}

impl<T: Scalar> Position2D<T> {
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Self) -> T {
        let dx = other.x - self.x;
        let dy = other.y - self.y;
        (dx * dx + dy * dy).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn offset(&self, dx: T, dy: T) -> Self {
        Self::new(self.x + dx, self.y + dy)
    }

    pub fn cast<U: Scalar>(&self) -> Position2D<U> {
        Position2D::new(
            lit(crate::scalar::to_f64(self.x)),
            lit(crate::scalar::to_f64(self.y)),
        )
    }
}

/// Uniform linear array description.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry<T> {
    pub num_elements: usize,
    /// Inter-element spacing in meters.
    pub element_spacing: T,
    /// Carrier wavelength in meters.
    pub wavelength: T,
}

impl<T: Scalar> ArrayGeometry<T> {
    pub fn new(num_elements: usize, element_spacing: T, wavelength: T) -> Result<Self> {
        if num_elements == 0 {
            return Err(Error::Config("array needs at least one element".into()));
        }
        if !(element_spacing > T::zero()) || !(wavelength > T::zero()) {
            return Err(Error::Config(
                "array spacing and wavelength must be positive".into(),
            ));
        }
        Ok(Self {
            num_elements,
            element_spacing,
            wavelength,
        })
    }

    /// Half-wavelength ULA at the given carrier frequency.
    pub fn half_wavelength(num_elements: usize, carrier_hz: T) -> Result<Self> {
        let wavelength = lit::<T>(SPEED_OF_LIGHT) / carrier_hz;
        Self::new(num_elements, wavelength / lit(2.0), wavelength)
    }

    /// `2π d / λ`.
    #[inline]
    pub fn wavenumber_spacing(&self) -> T {
        T::two_pi() * self.element_spacing / self.wavelength
    }

    /// Array response `a(θ)`, element `n` equal to `exp(j n (2π d/λ) sin θ)`.
    pub fn steering_vector(&self, theta: T) -> DVector<Complex<T>> {
        let step = self.wavenumber_spacing() * theta.sin();
        DVector::from_fn(self.num_elements, |n, _| cis(from_usize::<T>(n) * step))
    }

    /// Derivative `∂a/∂θ`.
    pub fn steering_derivative(&self, theta: T) -> DVector<Complex<T>> {
        let kd = self.wavenumber_spacing();
        let step = kd * theta.sin();
        let slope = kd * theta.cos();
        DVector::from_fn(self.num_elements, |n, _| {
            let nn = from_usize::<T>(n);
            cis(nn * step) * Complex::new(T::zero(), nn * slope)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ApMode {
    Transmit,
    Receive,
}

/// One access point of the distributed deployment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApNode<T> {
    pub position: Position2D<T>,
    /// Array broadside direction, radians in `[0, 2π)`.
    pub boresight: T,
    pub array: ArrayGeometry<T>,
    /// Per-AP power budget `P_t` in watts.
    pub max_power: T,
    /// Fraction `ρ_t` of the budget given to communication.
    pub comm_power_fraction: T,
    pub mode: ApMode,
}

impl<T: Scalar> ApNode<T> {
    pub fn validate(&self) -> Result<()> {
        if !self.position.is_finite() {
            return Err(Error::Config("AP position must be finite".into()));
        }
        if !(self.max_power > T::zero()) {
            return Err(Error::Config("AP power budget must be positive".into()));
        }
        let rho = self.comm_power_fraction;
        if !(rho >= T::zero() && rho <= T::one()) {
            return Err(Error::Config(
                "communication power fraction must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Boresight-relative angle of the direction from `ap` towards `point`, in `[0, 2π)`.
///
/// Used for both departure (transmit AP) and arrival (receive AP) angles.
pub fn aod_to_point<T: Scalar>(ap: &ApNode<T>, point: &Position2D<T>) -> Result<T> {
    angle_from(&ap.position, ap.boresight, point)
}

pub(crate) fn angle_from<T: Scalar>(
    origin: &Position2D<T>,
    boresight: T,
    point: &Position2D<T>,
) -> Result<T> {
    let dx = point.x - origin.x;
    let dy = point.y - origin.y;
    if dx == T::zero() && dy == T::zero() {
        return Err(Error::DegenerateGeometry(
            "point coincides with AP position".into(),
        ));
    }
    Ok(wrap_two_pi(dy.atan2(dx) - boresight))
}

/// Gradient of the absolute bearing `atan2(p - origin)` with respect to `p`.
pub(crate) fn bearing_gradient<T: Scalar>(origin: &Position2D<T>, p: &Position2D<T>) -> [T; 2] {
    let dx = p.x - origin.x;
    let dy = p.y - origin.y;
    let r2 = dx * dx + dy * dy;
    [-dy / r2, dx / r2]
}

/// Unit vector pointing from `origin` to `p`; the gradient of `‖p - origin‖`.
pub(crate) fn range_gradient<T: Scalar>(origin: &Position2D<T>, p: &Position2D<T>) -> [T; 2] {
    let r = origin.distance(p);
    [(p.x - origin.x) / r, (p.y - origin.y) / r]
}

/// Sum of both leg lengths of the transmit → target → receive path, meters.
pub fn bistatic_range<T: Scalar>(
    tx: &Position2D<T>,
    target: &Position2D<T>,
    rx: &Position2D<T>,
) -> Result<T> {
    let d_t = tx.distance(target);
    let d_r = target.distance(rx);
    if d_t == T::zero() || d_r == T::zero() {
        return Err(Error::DegenerateGeometry(
            "target coincides with an AP position".into(),
        ));
    }
    Ok(d_t + d_r)
}

/// Two-leg propagation delay `τ = (‖p − p_tx‖ + ‖p_rx − p‖)/c`, seconds.
pub fn bistatic_delay<T: Scalar>(
    tx: &ApNode<T>,
    target: &Position2D<T>,
    rx: &ApNode<T>,
) -> Result<T> {
    Ok(bistatic_range(&tx.position, target, &rx.position)? / lit(SPEED_OF_LIGHT))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn ap(x: f64, y: f64, boresight: f64) -> ApNode<f64> {
        ApNode {
            position: Position2D::new(x, y),
            boresight,
            array: ArrayGeometry::half_wavelength(8, 3.5e9).unwrap(),
            max_power: 1.0,
            comm_power_fraction: 0.5,
            mode: ApMode::Transmit,
        }
    }

    #[test]
    fn aod_examples() {
        let a = aod_to_point(&ap(0.0, 0.0, 0.0), &Position2D::new(100.0, 0.0)).unwrap();
        assert_eq!(a, 0.0);
        let a = aod_to_point(&ap(0.0, 0.0, FRAC_PI_2), &Position2D::new(0.0, 50.0)).unwrap();
        assert!(a.abs() < 1e-15);
        let a = aod_to_point(&ap(0.0, 0.0, 0.0), &Position2D::new(100.0, 100.0)).unwrap();
        assert!((a - FRAC_PI_4).abs() < 1e-15);
    }

    #[test]
    fn aod_coincident_is_error() {
        let err = aod_to_point(&ap(3.0, 4.0, 0.0), &Position2D::new(3.0, 4.0));
        assert!(matches!(err, Err(Error::DegenerateGeometry(_))));
    }

    #[test]
    fn delay_examples() {
        let c = SPEED_OF_LIGHT;
        let d = bistatic_delay(&ap(0.0, 0.0, 0.0), &Position2D::new(150.0, 0.0), &ap(300.0, 0.0, 0.0))
            .unwrap();
        assert!((d - 300.0 / c).abs() < 1e-20);
        assert!((d - 1.000_69e-6).abs() < 1e-11);
        let d = bistatic_delay(&ap(0.0, 0.0, 0.0), &Position2D::new(150.0, 0.0), &ap(0.0, 0.0, 0.0))
            .unwrap();
        assert!((d - 300.0 / c).abs() < 1e-20);
        let d = bistatic_delay(&ap(0.0, 0.0, 0.0), &Position2D::new(3.0, 4.0), &ap(6.0, 0.0, 0.0))
            .unwrap();
        assert!((d - 10.0 / c).abs() < 1e-22);
    }

    #[test]
    fn delay_zero_leg_is_error() {
        let r = bistatic_delay(&ap(0.0, 0.0, 0.0), &Position2D::new(0.0, 0.0), &ap(5.0, 0.0, 0.0));
        assert!(r.is_err());
    }

    #[test]
    fn steering_examples() {
        let arr = ArrayGeometry::new(2, 0.3, 1.0).unwrap();
        let a = arr.steering_vector(0.0);
        assert_eq!(a[0], Complex::new(1.0, 0.0));
        assert_eq!(a[1], Complex::new(1.0, 0.0));

        let single = ArrayGeometry::new(1, 0.5, 1.0).unwrap().steering_vector(1.234);
        assert_eq!(single.len(), 1);
        assert_eq!(single[0], Complex::new(1.0, 0.0));

        let a = ArrayGeometry::new(4, 0.5, 1.0).unwrap().steering_vector(FRAC_PI_2);
        for (n, want) in [1.0, -1.0, 1.0, -1.0].iter().enumerate() {
            assert!((a[n].re - want).abs() < 1e-12 && a[n].im.abs() < 1e-12);
        }
    }

    #[test]
    fn steering_derivative_matches_central_difference() {
        let arr = ArrayGeometry::new(6, 0.5, 1.0).unwrap();
        let theta = 0.7;
        let h = 1e-6;
        let fd = (arr.steering_vector(theta + h) - arr.steering_vector(theta - h)) / Complex::new(2.0 * h, 0.0);
        let an = arr.steering_derivative(theta);
        assert!((fd - an).norm() < 1e-8);
    }

    #[test]
    fn invalid_arrays_rejected() {
        assert!(ArrayGeometry::new(0, 0.5, 1.0).is_err());
        assert!(ArrayGeometry::new(2, 0.0, 1.0).is_err());
        assert!(ArrayGeometry::new(2, 0.5, -1.0).is_err());
    }

    #[test]
    fn works_in_single_precision() {
        let arr = ArrayGeometry::<f32>::half_wavelength(4, 3.5e9).unwrap();
        let a = arr.steering_vector(std::f32::consts::FRAC_PI_2);
        assert!((a[1].re + 1.0).abs() < 1e-5);
        let node = ApNode::<f32> {
            position: Position2D::new(0.0, 0.0),
            boresight: 0.0,
            array: arr,
            max_power: 1.0,
            comm_power_fraction: 1.0,
            mode: ApMode::Receive,
        };
        let th = aod_to_point(&node, &Position2D::new(1.0, 1.0)).unwrap();
        assert!((th - std::f32::consts::FRAC_PI_4).abs() < 1e-6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn steering_is_unit_modulus(n in 1usize..32, d in 0.01f64..2.0, theta in -10.0f64..10.0) {
            let a = ArrayGeometry::new(n, d, 1.0).unwrap().steering_vector(theta);
            for z in a.iter() {
                prop_assert!((z.norm() - 1.0).abs() < 1e-12);
            }
            prop_assert!((a.norm_squared() - n as f64).abs() < 1e-9 * n as f64);
        }
    }

    proptest! {
        #[test]
        fn delay_is_symmetric(
            tx in (-1e3f64..1e3, -1e3f64..1e3),
            s in (-1e3f64..1e3, -1e3f64..1e3),
            rx in (-1e3f64..1e3, -1e3f64..1e3),
        ) {
            let t = ap(tx.0, tx.1, 0.0);
            let r = ap(rx.0, rx.1, 1.0);
            let p = Position2D::new(s.0, s.1);
            prop_assume!(t.position.distance(&p) > 1e-6 && r.position.distance(&p) > 1e-6);
            let a = bistatic_delay(&t, &p, &r).unwrap();
            let b = bistatic_delay(&r, &p, &t).unwrap();
            prop_assert_eq!(a, b);
            prop_assert!(a > 0.0);
        }

        #[test]
        fn aod_rotation_invariant(
            px in -500.0f64..500.0, py in -500.0f64..500.0,
            boresight in 0.0f64..(2.0 * PI), rot in -PI..PI,
        ) {
            prop_assume!(px.hypot(py) > 1e-3);
            let a0 = aod_to_point(&ap(0.0, 0.0, boresight), &Position2D::new(px, py)).unwrap();
            prop_assert!((0.0..2.0 * PI).contains(&a0));
            let (s, c) = rot.sin_cos();
            let q = Position2D::new(c * px - s * py, s * px + c * py);
            let a1 = aod_to_point(&ap(0.0, 0.0, wrap_two_pi(boresight + rot)), &q).unwrap();
            let diff = crate::scalar::wrap_pi(a1 - a0);
            prop_assert!(diff.abs() < 1e-12, "{} vs {}", a0, a1);
        }
    }
}
