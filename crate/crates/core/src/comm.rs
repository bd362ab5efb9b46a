//! Downlink SINR and spectral efficiency under MRT precoding.

use nalgebra::DVector;
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::channel::CommChannels;
use crate::scalar::{abs2, from_usize, Scalar};
use crate::waveform::TransmitFrame;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeReport<T> {
    /// Linear SINR indexed `[ue][instant]`.
    pub per_ue_sinr: Vec<Vec<T>>,
    /// Instant-averaged `log2(1 + SINR)` per UE, bits/s/Hz.
    pub per_ue_se: Vec<T>,
    pub sum_se: T,
}

/// Instant-independent inner products `g_tkᴴ w_ti`, indexed `[ue k][interferer i][tx]`,
/// plus the channel vectors themselves.
struct LinkProducts<T: Scalar> {
    cross: Vec<Vec<Vec<Complex<T>>>>,
    channels: Vec<Vec<DVector<Complex<T>>>>,
}

fn link_products<T: Scalar>(channels: &CommChannels<T>, frame: &TransmitFrame<T>) -> LinkProducts<T> {
    let k_ues = frame.num_ues();
    let chans: Vec<Vec<DVector<Complex<T>>>> = (0..k_ues)
        .map(|k| frame.transmitters.iter().map(|&ap| channels.channel(ap, k)).collect())
        .collect();
    let cross = (0..k_ues)
        .map(|k| {
            (0..k_ues)
                .map(|i| {
                    (0..frame.num_transmitters())
                        .map(|t| chans[k][t].dotc(&frame.beamformers[t][i]))
                        .collect()
                })
                .collect()
        })
        .collect();
    LinkProducts { cross, channels: chans }
}

fn sinr_from_products<T: Scalar>(
    products: &LinkProducts<T>,
    frame: &TransmitFrame<T>,
    noise_power: T,
    k: usize,
    l: usize,
) -> T {
    let coherent_sum = |i: usize| -> Complex<T> {
        (0..frame.num_transmitters()).fold(Complex::new(T::zero(), T::zero()), |acc, t| {
            let amp = (frame.comm_fractions[t] * frame.power_coeffs[t][i]).sqrt();
            acc + products.cross[k][i][t] * amp
        })
    };
    let desired = abs2(coherent_sum(k));
    let mut interference = T::zero();
    for i in 0..frame.num_ues() {
        if i != k {
            interference += abs2(coherent_sum(i));
        }
    }
    let mut sensing = T::zero();
    for t in 0..frame.num_transmitters() {
        if frame.schedule[t][l] {
            let g = &products.channels[k][t];
            let cov = &frame.sensing_covariances[t];
            let quad = g.dotc(&(cov * g)).re;
            sensing += (T::one() - frame.comm_fractions[t]) * frame.max_powers[t] * quad;
        }
    }
    let denom = interference + sensing + noise_power;
    if desired == T::zero() {
        return T::zero();
    }
    desired / denom
}

/// SINR of UE `k` at instant `l`.
///
/// Multi-user interference from UE `i` uses the interferer's own power
/// coefficients `p_ti`; sensing interference uses `(1 − ρ_t) P_t` of the AP
/// scheduled at `l`.
pub fn ue_sinr<T: Scalar>(
    channels: &CommChannels<T>,
    frame: &TransmitFrame<T>,
    noise_power: T,
    k: usize,
    l: usize,
) -> T {
    let products = link_products(channels, frame);
    sinr_from_products(&products, frame, noise_power, k, l)
}

/// Per-instant SINR averaged into SE per UE and summed over UEs.
pub fn sum_se<T: Scalar>(channels: &CommChannels<T>, frame: &TransmitFrame<T>, noise_power: T) -> SeReport<T> {
    let products = link_products(channels, frame);
    let two = T::one() + T::one();
    let len = from_usize::<T>(frame.length);
    let mut per_ue_sinr = Vec::with_capacity(frame.num_ues());
    let mut per_ue_se = Vec::with_capacity(frame.num_ues());
    for k in 0..frame.num_ues() {
        let sinr: Vec<T> = (0..frame.length)
            .map(|l| sinr_from_products(&products, frame, noise_power, k, l))
            .collect();
        let se = sinr.iter().fold(T::zero(), |a, &s| a + (T::one() + s).log(two)) / len;
        per_ue_sinr.push(sinr);
        per_ue_se.push(se);
    }
    let sum_se = per_ue_se.iter().fold(T::zero(), |a, &b| a + b);
    SeReport {
        per_ue_sinr,
        per_ue_se,
        sum_se,
    }
}

/// `Σ_k log2(1 + SINR_k)` for a fixed list of SINRs.
pub fn sum_se_from_sinr<T: Scalar>(sinr: &[T]) -> T {
    let two = T::one() + T::one();
    sinr.iter().fold(T::zero(), |a, &s| a + (T::one() + s).log(two))
}
