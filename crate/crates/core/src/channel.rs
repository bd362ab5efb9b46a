//! Sensing and communication channel synthesis.
//!
//! Sensing paths follow the bistatic radar equation with unit per-element
//! gains; the array gain enters only through the steering vectors. The
//! communication channel is a Rician mix of a deterministic part (LoS plus
//! target-reflected paths) and a correlated complex Gaussian NLoS part.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{angle_from, aod_to_point, bistatic_range, ApNode, ArrayGeometry, Position2D};
use crate::scalar::{cis, db_to_linear, from_usize, lit, wrap_two_pi, Scalar, BOLTZMANN, SPEED_OF_LIGHT};
use crate::scenario::{CorrelationModel, Scenario, Target};

/// Geometry-derived parameters of one transmit AP → target → receive AP path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensingPathParams<T> {
    /// Voltage gain `α` (dimensionless).
    pub gain: T,
    /// `−2π f τ + φ_fix` reduced into `[0, 2π)`.
    pub carrier_phase: T,
    /// Two-leg delay, seconds.
    pub delay: T,
    /// Departure angle at the transmit AP.
    pub aod: T,
    /// Arrival angle at the receive AP.
    pub aoa: T,
}

/// Bistatic radar-equation amplitude `sqrt(λ² σ / ((4π)³ d_t² d_r²))`.
pub fn radar_gain<T: Scalar>(wavelength: T, rcs: T, d_tx: T, d_rx: T) -> T {
    let four_pi = lit::<T>(4.0) * T::pi();
    (wavelength * wavelength * rcs / (four_pi * four_pi * four_pi * d_tx * d_tx * d_rx * d_rx)).sqrt()
}

/// Carrier phase `−2π (range/λ)` reduced into `[0, 2π)`.
///
/// The cycle count is split off first so that long ranges keep precision.
pub(crate) fn propagation_phase<T: Scalar>(range: T, wavelength: T) -> T {
    let cycles = range / wavelength;
    let frac = cycles - cycles.floor();
    wrap_two_pi(-T::two_pi() * frac)
}

pub fn sensing_path<T: Scalar>(
    tx: &ApNode<T>,
    rx: &ApNode<T>,
    target: &Target<T>,
    carrier_hz: T,
) -> Result<SensingPathParams<T>> {
    let wavelength = lit::<T>(SPEED_OF_LIGHT) / carrier_hz;
    let range = bistatic_range(&tx.position, &target.position, &rx.position)?;
    let d_tx = tx.position.distance(&target.position);
    let d_rx = rx.position.distance(&target.position);
    Ok(SensingPathParams {
        gain: radar_gain(wavelength, target.rcs, d_tx, d_rx),
        carrier_phase: wrap_two_pi(propagation_phase(range, wavelength) + target.reflection_phase),
        delay: range / lit(SPEED_OF_LIGHT),
        aod: aod_to_point(tx, &target.position)?,
        aoa: aod_to_point(rx, &target.position)?,
    })
}

/// Rank-one sensing channel `H = α e^{jφ} a(ϑ) aᵀ(θ)` between `tx` and `rx` through `target`.
pub fn sensing_channel<T: Scalar>(
    tx: &ApNode<T>,
    rx: &ApNode<T>,
    target: &Target<T>,
    carrier_hz: T,
) -> Result<(SensingPathParams<T>, DMatrix<Complex<T>>)> {
    let params = sensing_path(tx, rx, target, carrier_hz)?;
    let a_rx = rx.array.steering_vector(params.aoa);
    let a_tx = tx.array.steering_vector(params.aod);
    let coeff = cis(params.carrier_phase) * params.gain;
    let h = (&a_rx * a_tx.transpose()) * coeff;
    Ok((params, h))
}

/// Thermal noise power `k_B T W`, scaled by the noise figure.
pub fn noise_power<T: Scalar>(bandwidth_hz: T, temperature_k: T, noise_figure_db: T) -> T {
    lit::<T>(BOLTZMANN) * temperature_k * bandwidth_hz * db_to_linear(noise_figure_db)
}

/// One AP → UE channel draw together with the quantities it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct CommChannelRealization<T: Scalar> {
    pub deterministic: DVector<Complex<T>>,
    pub stochastic: DVector<Complex<T>>,
    pub correlation: DMatrix<Complex<T>>,
    /// Per-antenna LoS amplitude `β̄`.
    pub los_gain: T,
    pub los_delay: T,
    pub ue_phase_offset: T,
    pub reflected_gains: Vec<T>,
    pub reflected_phases: Vec<T>,
    /// Path-loss power gain `β` at the AP–UE distance.
    pub large_scale: T,
}

impl<T: Scalar> CommChannelRealization<T> {
    /// Total channel `g = ḡ + g̃`.
    pub fn total(&self) -> DVector<Complex<T>> {
        &self.deterministic + &self.stochastic
    }
}

/// NLoS spatial correlation matrix with per-antenna power `nlos_power`.
pub fn correlation_matrix<T: Scalar>(
    model: &CorrelationModel<T>,
    array: &ArrayGeometry<T>,
    los_angle: T,
    nlos_power: T,
) -> DMatrix<Complex<T>> {
    let n = array.num_elements;
    match model {
        CorrelationModel::Uncorrelated => {
            DMatrix::from_diagonal_element(n, n, Complex::new(nlos_power, T::zero()))
        }
        CorrelationModel::LocalScattering { angular_std_rad } => {
            let kd = array.wavenumber_spacing();
            let (s, c) = los_angle.sin_cos();
            let var = *angular_std_rad * *angular_std_rad;
            DMatrix::from_fn(n, n, |row, col| {
                let diff = from_usize::<T>(row) - from_usize::<T>(col);
                let spread = kd * diff * c;
                let damp = (-(var * spread * spread) / lit(2.0)).exp();
                cis(kd * diff * s) * (nlos_power * damp)
            })
        }
    }
}

/// Draws `CN(0, R)` via the Hermitian eigendecomposition of `R`.
pub(crate) fn sample_complex_gaussian<T: Scalar, R: Rng + ?Sized>(
    correlation: &DMatrix<Complex<T>>,
    rng: &mut R,
) -> DVector<Complex<T>> {
    let n = correlation.nrows();
    let white = DVector::from_fn(n, |_, _| standard_complex_normal::<T, _>(rng));
    if is_scaled_identity(correlation) {
        return white.map(|z| z * correlation[(0, 0)].re.max(T::zero()).sqrt());
    }
    let eig = correlation.clone().symmetric_eigen();
    let roots = DVector::from_fn(n, |i, _| {
        Complex::new(eig.eigenvalues[i].max(T::zero()).sqrt(), T::zero())
    });
    let scaled = white.component_mul(&roots);
    &eig.eigenvectors * scaled
}

fn is_scaled_identity<T: Scalar>(m: &DMatrix<Complex<T>>) -> bool {
    let d = m[(0, 0)];
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            let v = m[(r, c)];
            if r == c {
                if v != d {
                    return false;
                }
            } else if v != Complex::new(T::zero(), T::zero()) {
                return false;
            }
        }
    }
    true
}

/// `CN(0, 1)` sample.
pub(crate) fn standard_complex_normal<T: Scalar, R: Rng + ?Sized>(rng: &mut R) -> Complex<T> {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex::new(lit(re * std::f64::consts::FRAC_1_SQRT_2), lit(im * std::f64::consts::FRAC_1_SQRT_2))
}

/// Synthesizes the channel from AP `tx` to UE `ue_index`.
///
/// The LoS/NLoS split follows the Rician factor of the scenario; both parts
/// are normalized per antenna so `E‖g‖² = N β` in the absence of targets.
pub fn comm_channel<T: Scalar, R: Rng + ?Sized>(
    tx: &ApNode<T>,
    ue_index: usize,
    scenario: &Scenario<T>,
    rng: &mut R,
) -> Result<CommChannelRealization<T>> {
    let ue = scenario.ues[ue_index];
    let wavelength = scenario.wavelength();
    let distance = tx.position.distance(&ue);
    let large_scale = scenario.comm.path_loss.gain(distance);
    let kappa = db_to_linear(scenario.comm.rician_factor_db);
    let los_power = large_scale * kappa / (T::one() + kappa);
    let nlos_power = large_scale / (T::one() + kappa);
    let los_gain = los_power.sqrt();
    let los_delay = distance / lit(SPEED_OF_LIGHT);
    let ue_phase_offset = scenario.ue_phase_offsets[ue_index];

    let los_angle = angle_from(&tx.position, tx.boresight, &ue)?;
    let los_phase = propagation_phase(distance, wavelength) + ue_phase_offset;
    let mut deterministic = tx.array.steering_vector(los_angle) * (cis(los_phase) * los_gain);

    let mut reflected_gains = Vec::with_capacity(scenario.targets.len());
    let mut reflected_phases = Vec::with_capacity(scenario.targets.len());
    for target in &scenario.targets {
        let (gain, phase) = reflected_path(&tx.position, &ue, target, wavelength)?;
        let aod = aod_to_point(tx, &target.position)?;
        deterministic += tx.array.steering_vector(aod) * (cis(phase) * gain);
        reflected_gains.push(gain);
        reflected_phases.push(phase);
    }

    let correlation = correlation_matrix(&scenario.comm.correlation, &tx.array, los_angle, nlos_power);
    let stochastic = sample_complex_gaussian(&correlation, rng);

    Ok(CommChannelRealization {
        deterministic,
        stochastic,
        correlation,
        los_gain,
        los_delay,
        ue_phase_offset,
        reflected_gains,
        reflected_phases,
        large_scale,
    })
}

/// AP → target → UE path: same radar-equation amplitude as sensing with the
/// UE as a single isotropic element.
fn reflected_path<T: Scalar>(
    ap: &Position2D<T>,
    ue: &Position2D<T>,
    target: &Target<T>,
    wavelength: T,
) -> Result<(T, T)> {
    let range = bistatic_range(ap, &target.position, ue)?;
    let gain = radar_gain(
        wavelength,
        target.rcs,
        ap.distance(&target.position),
        target.position.distance(ue),
    );
    let phase = wrap_two_pi(propagation_phase(range, wavelength) + target.reflection_phase);
    Ok((gain, phase))
}

/// Communication channels from every AP to every UE, indexed `[ap][ue]`.
///
/// Channels exist for all APs regardless of mode so that re-assigning modes
/// leaves the propagation realization untouched.
#[derive(Debug, Clone)]
pub struct CommChannels<T: Scalar> {
    pub links: Vec<Vec<CommChannelRealization<T>>>,
}

impl<T: Scalar> CommChannels<T> {
    /// Draws all links, pulling a fresh random stream for each `(ap, ue)` pair.
    pub fn synthesize<R, F>(scenario: &Scenario<T>, mut stream: F) -> Result<Self>
    where
        R: Rng,
        F: FnMut(usize, usize) -> R,
    {
        let mut links = Vec::with_capacity(scenario.aps.len());
        for (m, ap) in scenario.aps.iter().enumerate() {
            let mut row = Vec::with_capacity(scenario.ues.len());
            for k in 0..scenario.ues.len() {
                let mut rng = stream(m, k);
                row.push(comm_channel(ap, k, scenario, &mut rng)?);
            }
            links.push(row);
        }
        Ok(Self { links })
    }

    pub fn channel(&self, ap: usize, ue: usize) -> DVector<Complex<T>> {
        self.links[ap][ue].total()
    }

    /// Large-scale gains `β[ap][ue]`.
    pub fn large_scale(&self) -> Vec<Vec<T>> {
        self.links
            .iter()
            .map(|row| row.iter().map(|c| c.large_scale).collect())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ApMode;
    use crate::scenario::{CommChannelModel, Region};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ap(x: f64, y: f64, n: usize) -> ApNode<f64> {
        ApNode {
            position: Position2D::new(x, y),
            boresight: 0.3,
            array: ArrayGeometry::half_wavelength(n, 3.5e9).unwrap(),
            max_power: 1.0,
            comm_power_fraction: 0.5,
            mode: ApMode::Transmit,
        }
    }

    fn target(x: f64, y: f64) -> Target<f64> {
        Target {
            position: Position2D::new(x, y),
            rcs: 1.0,
            reflection_phase: 0.4,
        }
    }

    fn scenario(targets: Vec<Target<f64>>, correlation: CorrelationModel<f64>) -> Scenario<f64> {
        Scenario {
            region: Region::square(1000.0),
            aps: vec![ap(0.0, 0.0, 4)],
            ues: vec![Position2D::new(300.0, 400.0)],
            ue_phase_offsets: vec![0.9],
            targets,
            carrier_hz: 3.5e9,
            bandwidth_hz: 1e5,
            sensing_noise_power: 1e-16,
            ue_noise_power: 1e-16,
            comm: CommChannelModel {
                correlation,
                ..CommChannelModel::default()
            },
        }
    }

    #[test]
    fn radar_equation_oracle() {
        // Independent scalar evaluation for tx (0,0), rx (1000,0), target (500,0).
        let lambda = 299_792_458.0 / 3.5e9;
        let four_pi_cubed = (4.0 * std::f64::consts::PI).powi(3);
        let expected = (lambda * lambda / (four_pi_cubed * 500.0f64.powi(4))).sqrt();
        let (params, h) = sensing_channel(&ap(0.0, 0.0, 8), &ap(1000.0, 0.0, 8), &target(500.0, 0.0), 3.5e9).unwrap();
        assert!((params.gain - expected).abs() <= 1e-12 * expected);
        assert!((params.gain - 7.691_266e-9).abs() < 1e-14, "{}", params.gain);
        assert!((h.norm() - params.gain * 8.0).abs() <= 1e-12 * params.gain * 8.0);
    }

    #[test]
    fn scalar_channel_is_one_when_unit_gain() {
        let mut a = ap(0.0, 0.0, 1);
        a.array = ArrayGeometry::new(1, 0.5, 1.0).unwrap();
        let (p, h) = sensing_channel(&a, &ap(10.0, 0.0, 1), &target(5.0, 3.0), 3.5e9).unwrap();
        let unit = h[(0, 0)] / (cis(p.carrier_phase) * p.gain);
        assert!((unit - Complex::new(1.0, 0.0)).norm() < 1e-12);
        assert!((crate::scalar::wrap_two_pi(crate::scalar::arg(h[(0, 0)])) - p.carrier_phase).abs() < 1e-9);
    }

    #[test]
    fn sensing_channel_is_rank_one() {
        let (p, h) = sensing_channel(&ap(0.0, 0.0, 6), &ap(700.0, 100.0, 6), &target(320.0, 510.0), 3.5e9).unwrap();
        let sv = h.clone().svd(false, false).singular_values;
        assert!((sv[0] - p.gain * 6.0).abs() <= 1e-10 * sv[0]);
        for s in sv.iter().skip(1) {
            assert!(*s <= 1e-10 * sv[0]);
        }
    }

    #[test]
    fn carrier_phase_tracks_delay() {
        let t = target(321.0, 654.0);
        let p = sensing_path(&ap(10.0, 20.0, 4), &ap(900.0, 50.0, 4), &t, 3.5e9).unwrap();
        let expected = -2.0 * std::f64::consts::PI * 3.5e9 * p.delay + t.reflection_phase;
        let diff = crate::scalar::wrap_pi(p.carrier_phase - expected);
        assert!(diff.abs() < 1e-6, "{diff}");
    }

    #[test]
    fn gain_decreases_with_leg_length() {
        let mut last = f64::INFINITY;
        for d in [10.0, 50.0, 100.0, 400.0, 1000.0] {
            let g = radar_gain(0.0857, 1.0, d, 300.0);
            assert!(g <= last);
            last = g;
        }
    }

    #[test]
    fn noise_power_examples() {
        let base: f64 = noise_power(1e5, 290.0, 0.0);
        assert!((base - 4.003_882_1e-16).abs() < 1e-22);
        let dbm = 10.0 * (base / 1e-3).log10();
        assert!((dbm + 123.975).abs() < 0.01, "{dbm}");
        let nf3: f64 = noise_power(1e5, 290.0, 3.0);
        assert!((nf3 / base - 2.0).abs() < 1e-2);
        assert_eq!(noise_power(2e5, 290.0, 0.0), 2.0 * base);
    }

    #[test]
    fn pure_los_norm() {
        let mut s = scenario(vec![], CorrelationModel::Uncorrelated);
        s.comm.rician_factor_db = 300.0; // NLoS power negligible
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = comm_channel(&s.aps[0], 0, &s, &mut rng).unwrap();
        let g = c.deterministic.clone();
        assert!((g.norm() - c.los_gain * 2.0).abs() <= 1e-12 * g.norm());
        assert!(c.stochastic.norm() <= 1e-10 * g.norm());
        assert!((c.los_gain.powi(2) - c.large_scale).abs() <= 1e-12 * c.large_scale);
    }

    #[test]
    fn realization_is_deterministic() {
        let s = scenario(vec![target(500.0, 500.0)], CorrelationModel::Uncorrelated);
        let a = comm_channel(&s.aps[0], 0, &s, &mut ChaCha8Rng::seed_from_u64(77)).unwrap();
        let b = comm_channel(&s.aps[0], 0, &s, &mut ChaCha8Rng::seed_from_u64(77)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.reflected_gains.len(), 1);
    }

    #[test]
    fn reflected_gain_matches_sensing_gain() {
        // UE co-located with a single-element receive AP.
        let t = target(400.0, 250.0);
        let mut s = scenario(vec![t], CorrelationModel::Uncorrelated);
        s.ues = vec![Position2D::new(900.0, 100.0)];
        let rx = ap(900.0, 100.0, 1);
        let c = comm_channel(&s.aps[0], 0, &s, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let p = sensing_path(&s.aps[0], &rx, &t, s.carrier_hz).unwrap();
        assert!((c.reflected_gains[0] - p.gain).abs() <= 1e-14 * p.gain);
        assert!((c.reflected_phases[0] - p.carrier_phase).abs() < 1e-9);
    }

    #[test]
    fn deterministic_part_matches_formula() {
        let t = target(600.0, 200.0);
        let s = scenario(vec![t], CorrelationModel::Uncorrelated);
        let c = comm_channel(&s.aps[0], 0, &s, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let ap0 = &s.aps[0];
        let lambda = s.wavelength();
        let d = ap0.position.distance(&s.ues[0]);
        let los = ap0.array.steering_vector(aod_to_point(ap0, &s.ues[0]).unwrap())
            * (cis(-2.0 * std::f64::consts::PI * d / lambda + s.ue_phase_offsets[0]) * c.los_gain);
        let refl = ap0.array.steering_vector(aod_to_point(ap0, &t.position).unwrap())
            * (cis(c.reflected_phases[0]) * c.reflected_gains[0]);
        let expected = los + refl;
        assert!((expected - &c.deterministic).norm() <= 1e-7 * c.deterministic.norm());
    }

    #[test]
    fn empirical_covariance_matches() {
        for model in [
            CorrelationModel::Uncorrelated,
            CorrelationModel::LocalScattering { angular_std_rad: 0.2 },
        ] {
            let s = scenario(vec![], model);
            let n = 4;
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let first = comm_channel(&s.aps[0], 0, &s, &mut rng).unwrap();
            let r = first.correlation.clone();
            let draws = 100_000;
            let mut acc = DMatrix::<Complex<f64>>::zeros(n, n);
            let mut acc_sq = DMatrix::<f64>::zeros(n, n);
            for _ in 0..draws {
                let g = sample_complex_gaussian(&r, &mut rng);
                let outer = &g * g.adjoint();
                for i in 0..n {
                    for j in 0..n {
                        acc[(i, j)] += outer[(i, j)];
                        acc_sq[(i, j)] += outer[(i, j)].norm_sqr();
                    }
                }
            }
            let nf = draws as f64;
            for i in 0..n {
                for j in 0..n {
                    let mean = acc[(i, j)] / nf;
                    let var = acc_sq[(i, j)] / nf - mean.norm_sqr();
                    let stderr = (var / nf).sqrt();
                    assert!(
                        (mean - r[(i, j)]).norm() <= 3.0 * stderr,
                        "entry ({i},{j}): {mean} vs {}",
                        r[(i, j)]
                    );
                }
            }
        }
    }

    #[test]
    fn correlation_is_hermitian_psd() {
        let arr = ArrayGeometry::half_wavelength(8, 3.5e9).unwrap();
        let r = correlation_matrix(&CorrelationModel::LocalScattering { angular_std_rad: 0.1 }, &arr, 0.6, 2.0);
        assert!((r.adjoint() - &r).norm() < 1e-12);
        let eig = r.clone().symmetric_eigen();
        assert!(eig.eigenvalues.iter().all(|&e| e > -1e-10));
        assert!((r.trace().re - 16.0_f64).abs() < 1e-9);
    }
}
