//! Downlink transmit frames: MRT communication beams, the sensing stream,
//! the per-AP power split and the round-robin sensing schedule.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{standard_complex_normal, CommChannels};
use crate::error::{Error, Result};
use crate::geometry::{angle_from, Position2D};
use crate::scalar::{cis, from_usize, lit, Scalar};
use crate::scenario::Scenario;

/// How the dedicated sensing stream `q_0[l]` is generated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SensingWaveform<T> {
    /// i.i.d. `CN(0, I/N)` vectors.
    #[default]
    Isotropic,
    /// Conjugate beam towards a fixed point with a random common phase.
    Steered { toward: Position2D<T> },
}

/// Normalized maximal-ratio beamformer `w = g / ‖g‖` (so `gᴴw = ‖g‖`).
pub fn mrt_beamformer<T: Scalar>(channel: &DVector<Complex<T>>) -> Result<DVector<Complex<T>>> {
    let norm = channel.norm();
    if !(norm > T::zero()) {
        return Err(Error::ZeroChannel);
    }
    Ok(channel.unscale(norm))
}

/// One block of `L` downlink instants for the transmit APs.
///
/// Per-transmitter vectors are indexed by position in `transmitters`
/// (ascending AP index), not by AP index.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmitFrame<T: Scalar> {
    pub length: usize,
    pub transmitters: Vec<usize>,
    /// `q_k[l]`, indexed `[ue][instant]`.
    pub comm_symbols: Vec<Vec<Complex<T>>>,
    /// Sensing vector sent by the AP scheduled at each instant.
    pub sensing_symbols: Vec<DVector<Complex<T>>>,
    /// `δ_t[l]`, indexed `[transmitter][instant]`.
    pub schedule: Vec<Vec<bool>>,
    /// `w_tk`, indexed `[transmitter][ue]`.
    pub beamformers: Vec<Vec<DVector<Complex<T>>>>,
    /// `p_tk` in watts, indexed `[transmitter][ue]`.
    pub power_coeffs: Vec<Vec<T>>,
    pub comm_fractions: Vec<T>,
    pub max_powers: Vec<T>,
    /// `E[q_0 q_0ᴴ]` for each transmitter.
    pub sensing_covariances: Vec<DMatrix<Complex<T>>>,
    /// Assembled `x_t[l]`, indexed `[transmitter][instant]`.
    pub signals: Vec<Vec<DVector<Complex<T>>>>,
}

impl<T: Scalar> TransmitFrame<T> {
    /// Instant-wise expected power `ρ_t Σ_k p_tk + (1−ρ_t) δ_t[l] P_t`.
    pub fn expected_power(&self, t: usize, l: usize) -> T {
        let rho = self.comm_fractions[t];
        let comm: T = self.power_coeffs[t].iter().fold(T::zero(), |a, &p| a + p);
        let sensing = if self.schedule[t][l] {
            (T::one() - rho) * self.max_powers[t]
        } else {
            T::zero()
        };
        rho * comm + sensing
    }

    /// Transmitter scheduled for sensing at instant `l`.
    pub fn active_sensor(&self, l: usize) -> usize {
        self.schedule
            .iter()
            .position(|row| row[l])
            .expect("every instant has one sensing transmitter")
    }

    pub fn num_transmitters(&self) -> usize {
        self.transmitters.len()
    }

    pub fn num_ues(&self) -> usize {
        self.comm_symbols.len()
    }
}

/// Round-robin schedule: transmitter `t` senses at instants `l ≡ t (mod M_t)`.
pub fn round_robin_schedule(num_tx: usize, length: usize) -> Vec<Vec<bool>> {
    (0..num_tx)
        .map(|t| (0..length).map(|l| l % num_tx == t).collect())
        .collect()
}

/// Channel-strength-proportional allocation `p_tk = ρ_t P_t β_tk / Σ_i β_ti`.
pub fn proportional_power<T: Scalar>(rho: T, max_power: T, large_scale: &[T]) -> Vec<T> {
    let total: T = large_scale.iter().fold(T::zero(), |a, &b| a + b);
    if !(total > T::zero()) {
        return vec![T::zero(); large_scale.len()];
    }
    large_scale
        .iter()
        .map(|&b| rho * max_power * b / total)
        .collect()
}

/// Assembles a frame for the transmit APs of `scenario`.
pub fn build_frame<T: Scalar, R: Rng + ?Sized>(
    scenario: &Scenario<T>,
    channels: &CommChannels<T>,
    length: usize,
    waveform: &SensingWaveform<T>,
    rng: &mut R,
) -> Result<TransmitFrame<T>> {
    let transmitters = scenario.transmitters();
    if transmitters.is_empty() {
        return Err(Error::Config("frame needs at least one transmit AP".into()));
    }
    if length == 0 {
        return Err(Error::Config("frame length must be positive".into()));
    }
    let n = scenario.aps[transmitters[0]].array.num_elements;
    if transmitters
        .iter()
        .any(|&t| scenario.aps[t].array.num_elements != n)
    {
        return Err(Error::Config("transmit APs must share the array size".into()));
    }
    let k_ues = scenario.ues.len();
    let n_t = from_usize::<T>(n);

    let mut beamformers = Vec::with_capacity(transmitters.len());
    let mut power_coeffs = Vec::with_capacity(transmitters.len());
    let mut comm_fractions = Vec::with_capacity(transmitters.len());
    let mut max_powers = Vec::with_capacity(transmitters.len());
    let mut sensing_covariances = Vec::with_capacity(transmitters.len());
    let mut steer_dirs = Vec::with_capacity(transmitters.len());
    for &t in &transmitters {
        let ap = &scenario.aps[t];
        let mut row = Vec::with_capacity(k_ues);
        for k in 0..k_ues {
            row.push(mrt_beamformer(&channels.channel(t, k))?);
        }
        let betas: Vec<T> = (0..k_ues).map(|k| channels.links[t][k].large_scale).collect();
        let p = proportional_power(ap.comm_power_fraction, ap.max_power, &betas);
        let total: T = p.iter().fold(T::zero(), |a, &b| a + b);
        if total > ap.max_power * (T::one() + lit(1e-12)) {
            return Err(Error::Config(format!(
                "communication power of AP {t} exceeds its budget"
            )));
        }
        beamformers.push(row);
        power_coeffs.push(p);
        comm_fractions.push(ap.comm_power_fraction);
        max_powers.push(ap.max_power);
        match waveform {
            SensingWaveform::Isotropic => {
                sensing_covariances.push(DMatrix::from_diagonal_element(
                    n,
                    n,
                    Complex::new(T::one() / n_t, T::zero()),
                ));
                steer_dirs.push(None);
            }
            SensingWaveform::Steered { toward } => {
                let theta = angle_from(&ap.position, ap.boresight, toward)?;
                let beam = ap.array.steering_vector(theta).conjugate().unscale(n_t.sqrt());
                sensing_covariances.push(&beam * beam.adjoint());
                steer_dirs.push(Some(beam));
            }
        }
    }

    let schedule = round_robin_schedule(transmitters.len(), length);

    let comm_symbols: Vec<Vec<Complex<T>>> = (0..k_ues)
        .map(|_| {
            (0..length)
                .map(|_| cis(lit::<T>(rng.random_range(-std::f64::consts::PI..std::f64::consts::PI))))
                .collect()
        })
        .collect();

    let inv_sqrt_n = T::one() / n_t.sqrt();
    let sensing_symbols: Vec<DVector<Complex<T>>> = (0..length)
        .map(|l| {
            let t = l % transmitters.len();
            match &steer_dirs[t] {
                None => DVector::from_fn(n, |_, _| standard_complex_normal::<T, _>(rng) * inv_sqrt_n),
                Some(beam) => {
                    let phase = lit::<T>(rng.random_range(-std::f64::consts::PI..std::f64::consts::PI));
                    beam * cis(phase)
                }
            }
        })
        .collect();

    let mut signals = Vec::with_capacity(transmitters.len());
    for (ti, _) in transmitters.iter().enumerate() {
        let rho = comm_fractions[ti];
        let comm_amp = rho.sqrt();
        let sense_amp = ((T::one() - rho) * max_powers[ti]).sqrt();
        let mut row = Vec::with_capacity(length);
        for l in 0..length {
            let mut x = DVector::<Complex<T>>::zeros(n);
            for k in 0..k_ues {
                let coeff = comm_symbols[k][l] * (comm_amp * power_coeffs[ti][k].sqrt());
                x.axpy(coeff, &beamformers[ti][k], Complex::new(T::one(), T::zero()));
            }
            if schedule[ti][l] {
                x.axpy(
                    Complex::new(sense_amp, T::zero()),
                    &sensing_symbols[l],
                    Complex::new(T::one(), T::zero()),
                );
            }
            row.push(x);
        }
        signals.push(row);
    }

    Ok(TransmitFrame {
        length,
        transmitters,
        comm_symbols,
        sensing_symbols,
        schedule,
        beamformers,
        power_coeffs,
        comm_fractions,
        max_powers,
        sensing_covariances,
        signals,
    })
}
