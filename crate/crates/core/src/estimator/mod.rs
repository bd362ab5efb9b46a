//! Echo synthesis and the two-stage multistatic position estimator.
//!
//! Stage one scans a single-target non-coherent cost (per-path complex gains
//! free) over a grid and picks dips with a CFAR test. Stage two refines the
//! hypotheses on the coherent cost, where path amplitudes are real and each
//! target carries a single reflection phase shared by every AP pair.

mod cfar;
mod coherent;
mod confirm;
mod ncp;
mod refine;

pub use cfar::{cfar_threshold_factor, scan_and_detect, CfarConfig, CostMap, Detection, GridConfig};
pub use confirm::{confirm_detections, detect_targets, gamma_upper_quantile, ConfirmConfig, Confirmation};
pub use coherent::{coherent_cost, coherent_cost_decoupled, coherent_fit, CoherentFit};
pub use ncp::{joint_projection_energy, ncp_cost, ncp_gains, ncp_gains_pairwise, projection_energy};
pub use refine::{assign_errors, refine_coherent, EstimationReport, RefineConfig};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use rand::Rng;

use crate::channel::{propagation_phase, sensing_channel, standard_complex_normal};
use crate::error::{Error, Result};
use crate::geometry::{aod_to_point, ApNode, Position2D};
use crate::scalar::{lit, Scalar};
use crate::scenario::Scenario;
use crate::waveform::TransmitFrame;

/// Received echoes `y_r[l]` at every receive AP.
#[derive(Debug, Clone, PartialEq)]
pub struct EchoSet<T: Scalar> {
    /// Indexed `[receiver][instant]`, receivers in ascending AP order.
    pub samples: Vec<Vec<DVector<Complex<T>>>>,
    /// Per-element noise variance, watts.
    pub noise_power: T,
    pub carrier_hz: T,
}

impl<T: Scalar> EchoSet<T> {
    pub fn num_receivers(&self) -> usize {
        self.samples.len()
    }

    pub fn length(&self) -> usize {
        self.samples.first().map_or(0, |r| r.len())
    }

    pub fn num_elements(&self) -> usize {
        self.samples
            .first()
            .and_then(|r| r.first())
            .map_or(0, |v| v.len())
    }

    /// `Σ_{r,l} ‖y_r[l]‖²`.
    pub fn energy(&self) -> T {
        self.samples
            .iter()
            .flatten()
            .fold(T::zero(), |acc, y| acc + y.norm_squared())
    }

    /// Multiplies every sample of receiver `r` by `factors[r]`.
    pub fn rotated(&self, factors: &[Complex<T>]) -> Self {
        let mut out = self.clone();
        for (row, &f) in out.samples.iter_mut().zip(factors) {
            for y in row.iter_mut() {
                *y *= f;
            }
        }
        out
    }
}

/// Noise-free echoes `Σ_s Σ_t H_{t,r}^s x_t[l]` for the scenario targets.
pub fn mean_echoes<T: Scalar>(scenario: &Scenario<T>, frame: &TransmitFrame<T>) -> Result<Vec<Vec<DVector<Complex<T>>>>> {
    let receivers = scenario.receivers();
    let mut out = Vec::with_capacity(receivers.len());
    for &r in &receivers {
        let rx = &scenario.aps[r];
        let mut row = vec![DVector::<Complex<T>>::zeros(rx.array.num_elements); frame.length];
        for target in &scenario.targets {
            for (ti, &t) in frame.transmitters.iter().enumerate() {
                let (_, h) = sensing_channel(&scenario.aps[t], rx, target, scenario.carrier_hz)?;
                for (l, y) in row.iter_mut().enumerate() {
                    y.gemv(Complex::new(T::one(), T::zero()), &h, &frame.signals[ti][l], Complex::new(T::one(), T::zero()));
                }
            }
        }
        out.push(row);
    }
    Ok(out)
}

/// Received echoes with white complex Gaussian noise of variance `σ²` per element.
pub fn synthesize_echoes<T: Scalar, R: Rng + ?Sized>(
    scenario: &Scenario<T>,
    frame: &TransmitFrame<T>,
    rng: &mut R,
) -> Result<EchoSet<T>> {
    if scenario.receivers().is_empty() || frame.transmitters.is_empty() {
        return Err(Error::Config("echo synthesis needs transmit and receive APs".into()));
    }
    let mut samples = mean_echoes(scenario, frame)?;
    let sigma = scenario.sensing_noise_power.sqrt();
    for y in samples.iter_mut().flatten() {
        for v in y.iter_mut() {
            *v += standard_complex_normal::<T, _>(rng) * sigma;
        }
    }
    Ok(EchoSet {
        samples,
        noise_power: scenario.sensing_noise_power,
        carrier_hz: scenario.carrier_hz,
    })
}

/// Transmit/receive geometry and transmitted signals, laid out for fast
/// evaluation of the estimator costs at many hypotheses.
#[derive(Debug, Clone)]
pub struct SensingModel<T: Scalar> {
    pub transmitters: Vec<ApNode<T>>,
    pub receivers: Vec<ApNode<T>>,
    /// `x_t[l]ᵀ` stacked as rows, one `L × N_t` matrix per transmitter.
    pub signals: Vec<DMatrix<Complex<T>>>,
    pub wavelength: T,
}

impl<T: Scalar> SensingModel<T> {
    pub fn new(scenario: &Scenario<T>, frame: &TransmitFrame<T>) -> Result<Self> {
        let receivers: Vec<ApNode<T>> = scenario.receivers().iter().map(|&r| scenario.aps[r].clone()).collect();
        if receivers.is_empty() || frame.transmitters.is_empty() {
            return Err(Error::Config("sensing needs transmit and receive APs".into()));
        }
        let transmitters: Vec<ApNode<T>> = frame.transmitters.iter().map(|&t| scenario.aps[t].clone()).collect();
        let signals = frame
            .signals
            .iter()
            .zip(&transmitters)
            .map(|(row, ap)| {
                DMatrix::from_fn(frame.length, ap.array.num_elements, |l, n| row[l][n])
            })
            .collect();
        Ok(Self {
            transmitters,
            receivers,
            signals,
            wavelength: scenario.wavelength(),
        })
    }

    pub fn num_tx(&self) -> usize {
        self.transmitters.len()
    }

    pub fn num_rx(&self) -> usize {
        self.receivers.len()
    }

    pub fn length(&self) -> usize {
        self.signals.first().map_or(0, |s| s.nrows())
    }

    /// Array-domain quantities of a single hypothesized target position.
    pub fn response(&self, p: &Position2D<T>) -> Result<Response<T>> {
        let mut u = Vec::with_capacity(self.num_tx());
        for (ap, x) in self.transmitters.iter().zip(&self.signals) {
            let a = ap.array.steering_vector(aod_to_point(ap, p)?);
            u.push(x * a);
        }
        let mut v = Vec::with_capacity(self.num_rx());
        let mut rx_range = Vec::with_capacity(self.num_rx());
        for ap in &self.receivers {
            v.push(ap.array.steering_vector(aod_to_point(ap, p)?));
            rx_range.push(ap.position.distance(p));
        }
        let tx_range: Vec<T> = self.transmitters.iter().map(|ap| ap.position.distance(p)).collect();
        let psi = tx_range
            .iter()
            .map(|&dt| rx_range.iter().map(|&dr| propagation_phase(dt + dr, self.wavelength)).collect())
            .collect();
        Ok(Response { u, v, psi })
    }
}

/// Per-hypothesis array products.
#[derive(Debug, Clone)]
pub struct Response<T: Scalar> {
    /// `u_t[l] = aᵀ(θ_t) x_t[l]`, one length-`L` vector per transmitter.
    pub u: Vec<DVector<Complex<T>>>,
    /// Receive steering vectors `a(ϑ_r)`.
    pub v: Vec<DVector<Complex<T>>>,
    /// Propagation phase `−2π d_{t,r}/λ` indexed `[t][r]`.
    pub psi: Vec<Vec<T>>,
}

/// Echo samples of one receiver as an `L × N` matrix.
pub(crate) fn echo_matrix<T: Scalar>(rows: &[DVector<Complex<T>>]) -> DMatrix<Complex<T>> {
    let n = rows.first().map_or(0, |v| v.len());
    DMatrix::from_fn(rows.len(), n, |l, k| rows[l][k])
}

/// Echo matrices plus total energy, prepared once per echo set.
#[derive(Debug, Clone)]
pub struct PreparedEchoes<T: Scalar> {
    pub matrices: Vec<DMatrix<Complex<T>>>,
    pub energy: T,
}

impl<T: Scalar> PreparedEchoes<T> {
    pub fn new(echoes: &EchoSet<T>) -> Self {
        Self {
            matrices: echoes.samples.iter().map(|r| echo_matrix(r)).collect(),
            energy: echoes.energy(),
        }
    }
}

/// Solves `A X = B` for a real symmetric positive semidefinite `A`, falling
/// back to a pseudo-inverse when Cholesky fails.
pub(crate) fn solve_psd<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> DMatrix<T> {
    if let Some(ch) = a.clone().cholesky() {
        return ch.solve(b);
    }
    pinv_sym(a) * b
}

pub(crate) fn pinv_sym<T: Scalar>(a: &DMatrix<T>) -> DMatrix<T> {
    let eig = a.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(T::zero(), |m, &e| m.max(e.abs()));
    let tol = max * lit(1e-12) * crate::scalar::from_usize::<T>(a.nrows().max(1));
    let inv = eig.eigenvalues.map(|e| if e > tol { T::one() / e } else { T::zero() });
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}

/// Complex Hermitian PSD solve with the same fallback.
///
/// The system is equilibrated first because path gains span many orders of
/// magnitude; a Cholesky factor with a tiny relative pivot means the
/// hypotheses are (nearly) collinear and the pseudo-inverse is used instead.
pub(crate) fn solve_hpsd<T: Scalar>(a: &DMatrix<Complex<T>>, b: &DMatrix<Complex<T>>) -> DMatrix<Complex<T>> {
    let n = a.nrows();
    let scale: Vec<T> = (0..n)
        .map(|i| {
            let d = a[(i, i)].re;
            if d > T::zero() { T::one() / d.sqrt() } else { T::zero() }
        })
        .collect();
    let scaled = DMatrix::from_fn(n, n, |i, j| a[(i, j)] * (scale[i] * scale[j]));
    let rhs = DMatrix::from_fn(n, b.ncols(), |i, j| b[(i, j)] * scale[i]);
    let pivot_floor: T = lit(1e-7);
    let x = match scaled.clone().cholesky() {
        Some(ch) if (0..n).all(|i| ch.l_dirty()[(i, i)].re > pivot_floor) => ch.solve(&rhs),
        _ => {
            let eig = scaled.symmetric_eigen();
            let tol: T = lit(1e-12);
            let inv = eig
                .eigenvalues
                .map(|e| Complex::new(if e > tol { T::one() / e } else { T::zero() }, T::zero()));
            &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.adjoint() * rhs
        }
    };
    DMatrix::from_fn(n, b.ncols(), |i, j| x[(i, j)] * scale[i])
}


#[cfg(test)]
mod tests {
    use super::testutil::small_instance;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn no_targets_no_noise_gives_zero() {
        let (mut s, f) = small_instance(2, 2, 3, 6, 0, 0.5, 1);
        s.targets.clear();
        let e = synthesize_echoes(&s, &f, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(e.energy(), 0.0);
        assert_eq!(e.num_receivers(), 2);
        assert_eq!(e.length(), 6);
        assert_eq!(e.num_elements(), 3);
    }

    #[test]
    fn single_pair_echo_is_rank_one() {
        let (s, f) = small_instance(1, 1, 4, 5, 1, 0.4, 2);
        let e = synthesize_echoes(&s, &f, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let t = &s.aps[0];
        let r = &s.aps[1];
        let target = s.targets[0].position;
        let a_t = t.array.steering_vector(aod_to_point(t, &target).unwrap());
        let a_r = r.array.steering_vector(aod_to_point(r, &target).unwrap());
        let first = e.samples[0][0].clone() / f.signals[0][0].dot(&a_t);
        for l in 0..5 {
            let ratio = e.samples[0][l].clone() / f.signals[0][l].dot(&a_t);
            assert!((&ratio - &first).norm() < 1e-12 * first.norm());
            // Proportional to a(ϑ): element-wise ratio constant.
            let c = ratio[0] / a_r[0];
            assert!((ratio - &a_r * c).norm() < 1e-12 * first.norm());
        }
    }

    #[test]
    fn noise_power_ratio_matches_configuration() {
        let (mut s, f) = small_instance(2, 2, 4, 1000, 1, 0.5, 3);
        let mean = mean_echoes(&s, &f).unwrap();
        let signal: f64 = mean.iter().flatten().map(|y| y.norm_squared()).sum();
        // Pick σ² for a 5 dB per-sample SNR.
        let samples = (2 * 1000 * 4) as f64;
        s.sensing_noise_power = signal / samples / 10f64.powf(0.5);
        let e = synthesize_echoes(&s, &f, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let noise: f64 = e
            .samples
            .iter()
            .flatten()
            .zip(mean.iter().flatten())
            .map(|(y, m)| (y - m).norm_squared())
            .sum();
        let ratio = signal / noise;
        assert!((ratio / 10f64.powf(0.5) - 1.0).abs() < 0.02, "{ratio}");
    }

    #[test]
    fn response_matches_sensing_channel() {
        let (s, f) = small_instance(2, 3, 4, 7, 1, 0.6, 4);
        let model = SensingModel::new(&s, &f).unwrap();
        let target = s.targets[0];
        let resp = model.response(&target.position).unwrap();
        let mean = mean_echoes(&s, &f).unwrap();
        for r in 0..3 {
            for l in 0..7 {
                let mut y = DVector::<Complex<f64>>::zeros(4);
                for t in 0..2 {
                    let path = crate::channel::sensing_path(&s.aps[t], &s.aps[2 + r], &target, s.carrier_hz).unwrap();
                    let phase = resp.psi[t][r] + target.reflection_phase;
                    y += &resp.v[r] * (crate::scalar::cis(phase) * path.gain * resp.u[t][l]);
                }
                assert!((&y - &mean[r][l]).norm() <= 1e-12 * mean[r][l].norm());
            }
        }
    }
}
