//! Fisher information and position error bounds for the echo model, plus the
//! Monte Carlo sensing-coverage functional.
//!
//! The observation is `y = μ(η) + z` with white circular noise of variance
//! `σ²`, so `J = (2/σ²) Σ_{r,l} Re{(∂μ/∂η)ᴴ (∂μ/∂η)}`. Nuisances are removed by
//! a Schur complement before the position block is inverted.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::sensing_path;
use crate::error::{Error, Result};
use crate::estimator::SensingModel;
use crate::geometry::{bearing_gradient, range_gradient, Position2D};
use crate::scalar::{cis, lit, Scalar};
use crate::scenario::{Scenario, Target};
use crate::waveform::TransmitFrame;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameterization {
    /// `[p, α_{t,r,s}, φ_fix,s]`: real amplitudes, one phase per target.
    Coherent,
    /// `[p, Re γ_{t,r,s}, Im γ_{t,r,s}]`: free complex gain per path.
    NonCoherent,
    /// `[p, α_{t,r,s}, φ_{t,r,s}]`: real amplitudes with an independent phase
    /// per path; carries the same position information as `NonCoherent`.
    /// `φ` is the whole phase of the path. Splitting off the geometric carrier
    /// phase gives the same bound but leaves it to a Schur complement that
    /// cancels ~(2π/λ)² position information and loses most of its digits.
    PerPathPhase,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FisherResult<T: Scalar> {
    pub fim: DMatrix<T>,
    /// Position error bound per target, meters (`+∞` when unobservable).
    pub peb_per_target: Vec<T>,
    pub parameterization: Parameterization,
    /// Set when the information matrix could not be inverted.
    pub singular: bool,
}

impl<T: Scalar> FisherResult<T> {
    /// Equivalent FIM of the `2S` position coordinates.
    pub fn equivalent_position_fim(&self) -> Option<DMatrix<T>> {
        let np = 2 * self.peb_per_target.len();
        equivalent_fim(&self.fim, np)
    }
}

struct PathDerivatives<T: Scalar> {
    /// `v u` flattened with index `l·N + n`.
    base: DVector<Complex<T>>,
    /// `∂(v u)/∂x`, `∂(v u)/∂y`.
    shape: [DVector<Complex<T>>; 2],
    /// `∂ψ/∂x`, `∂ψ/∂y`.
    phase: [T; 2],
    gain: T,
    total_phase: T,
}

fn kron<T: Scalar>(v: &DVector<Complex<T>>, u: &DVector<Complex<T>>) -> DVector<Complex<T>> {
    let n = v.len();
    DVector::from_fn(u.len() * n, |i, _| v[i % n] * u[i / n])
}

/// Fisher information of the echoes about the target parameters.
pub fn fim<T: Scalar>(
    scenario: &Scenario<T>,
    frame: &TransmitFrame<T>,
    targets: &[Target<T>],
    parameterization: Parameterization,
) -> Result<FisherResult<T>> {
    let noise = scenario.sensing_noise_power;
    if !(noise > T::zero()) {
        return Err(Error::Config("Fisher information needs positive noise power".into()));
    }
    let model = SensingModel::new(scenario, frame)?;
    let m_t = model.num_tx();
    let m_r = model.num_rx();
    let s_count = targets.len();
    let paths = m_t * m_r;
    let nuisance_per_target = match parameterization {
        Parameterization::Coherent => paths + 1,
        Parameterization::NonCoherent | Parameterization::PerPathPhase => 2 * paths,
    };
    let dim = 2 * s_count + nuisance_per_target * s_count;
    let mut j = DMatrix::<T>::zeros(dim, dim);
    let two_pi_over_lambda = T::two_pi() / model.wavelength;
    let jay = Complex::new(T::zero(), T::one());
    let scale = (T::one() + T::one()) / noise;

    for r in 0..m_r {
        let rx = &model.receivers[r];
        let mut columns: Vec<(usize, DVector<Complex<T>>)> = Vec::new();
        for (s, target) in targets.iter().enumerate() {
            let p = target.position;
            let resp = model.response(&p)?;
            let rx_angle = crate::geometry::aod_to_point(rx, &p)?;
            let rx_bearing = bearing_gradient(&rx.position, &p);
            let dv = rx.array.steering_derivative(rx_angle);
            let rx_unit = range_gradient(&rx.position, &p);
            let mut derivs = Vec::with_capacity(m_t);
            for t in 0..m_t {
                let tx = &model.transmitters[t];
                let path = sensing_path(tx, rx, target, scenario.carrier_hz)?;
                let tx_angle = path.aod;
                let tx_bearing = bearing_gradient(&tx.position, &p);
                let du_dtheta = &model.signals[t] * tx.array.steering_derivative(tx_angle);
                let tx_unit = range_gradient(&tx.position, &p);
                let v = &resp.v[r];
                let u = &resp.u[t];
                let shape = [0usize, 1].map(|k| {
                    kron(&(&dv * Complex::new(rx_bearing[k], T::zero())), u)
                        + kron(v, &(&du_dtheta * Complex::new(tx_bearing[k], T::zero())))
                });
                let phase = [0usize, 1].map(|k| -two_pi_over_lambda * (tx_unit[k] + rx_unit[k]));
                derivs.push(PathDerivatives {
                    base: kron(v, u),
                    shape,
                    phase,
                    gain: path.gain,
                    total_phase: path.carrier_phase,
                });
            }
            let nuis0 = 2 * s_count + s * nuisance_per_target;
            for k in 0..2 {
                let mut col = DVector::<Complex<T>>::zeros(derivs[0].base.len());
                for d in &derivs {
                    let c = cis(d.total_phase) * d.gain;
                    match parameterization {
                        Parameterization::NonCoherent | Parameterization::PerPathPhase => col += &d.shape[k] * c,
                        Parameterization::Coherent => {
                            col += &d.shape[k] * c;
                            col += &d.base * (c * jay * d.phase[k]);
                        }
                    }
                }
                columns.push((2 * s + k, col));
            }
            for (t, d) in derivs.iter().enumerate() {
                let path_idx = t * m_r + r;
                match parameterization {
                    Parameterization::Coherent => {
                        columns.push((nuis0 + path_idx, &d.base * cis(d.total_phase)));
                    }
                    Parameterization::NonCoherent => {
                        columns.push((nuis0 + 2 * path_idx, d.base.clone()));
                        columns.push((nuis0 + 2 * path_idx + 1, &d.base * jay));
                    }
                    Parameterization::PerPathPhase => {
                        columns.push((nuis0 + 2 * path_idx, &d.base * cis(d.total_phase)));
                        columns.push((nuis0 + 2 * path_idx + 1, &d.base * (cis(d.total_phase) * jay * d.gain)));
                    }
                }
            }
            if parameterization == Parameterization::Coherent {
                let mut col = DVector::<Complex<T>>::zeros(derivs[0].base.len());
                for d in &derivs {
                    col += &d.base * (cis(d.total_phase) * jay * d.gain);
                }
                columns.push((nuis0 + paths, col));
            }
        }
        for (a, (ia, ca)) in columns.iter().enumerate() {
            for (ib, cb) in columns.iter().skip(a) {
                let v = ca.dotc(cb).re * scale;
                j[(*ia, *ib)] += v;
                if ia != ib {
                    j[(*ib, *ia)] += v;
                }
            }
        }
    }

    let (peb, singular) = position_error_bounds(&j, s_count);
    Ok(FisherResult {
        fim: j,
        peb_per_target: peb,
        parameterization,
        singular,
    })
}

/// Inverse of a symmetric PSD matrix after Jacobi equilibration; `None` when
/// numerically singular.
fn equilibrated_inverse<T: Scalar>(m: &DMatrix<T>) -> Option<DMatrix<T>> {
    let n = m.nrows();
    let d = DVector::from_fn(n, |i, _| {
        let v = m[(i, i)];
        if v > T::zero() {
            T::one() / v.sqrt()
        } else {
            T::zero()
        }
    });
    if d.iter().any(|&x| x == T::zero()) {
        return None;
    }
    let scaled = DMatrix::from_fn(n, n, |a, b| m[(a, b)] * d[a] * d[b]);
    let inv = match scaled.clone().cholesky() {
        Some(ch) => ch.inverse(),
        None => return None,
    };
    // Reject near-singular systems Cholesky happened to accept.
    let eig = scaled.symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(T::zero(), |a, &e| a.max(e));
    let min = eig.eigenvalues.iter().fold(max, |a, &e| a.min(e));
    if !(min > max * lit(1e-13)) {
        return None;
    }
    Some(DMatrix::from_fn(n, n, |a, b| inv[(a, b)] * d[a] * d[b]))
}

/// Drops nuisance parameters that carry no information (zero diagonal).
fn informative<T: Scalar>(m: &DMatrix<T>, positions: usize) -> (DMatrix<T>, usize) {
    let keep: Vec<usize> = (0..m.nrows()).filter(|&i| i < positions || m[(i, i)] > T::zero()).collect();
    (DMatrix::from_fn(keep.len(), keep.len(), |a, b| m[(keep[a], keep[b])]), positions)
}

/// Schur complement `J_pp − J_pn J_nn⁻¹ J_np` for the leading `positions` parameters.
pub fn equivalent_fim<T: Scalar>(fim: &DMatrix<T>, positions: usize) -> Option<DMatrix<T>> {
    let (m, np) = informative(fim, positions);
    let n = m.nrows();
    if n == np {
        return Some(m);
    }
    let jpp = m.view((0, 0), (np, np));
    let jpn = m.view((0, np), (np, n - np));
    let jnn = m.view((np, np), (n - np, n - np)).into_owned();
    let inv = equilibrated_inverse(&jnn)?;
    Some(jpp - jpn * inv * jpn.transpose())
}

fn position_error_bounds<T: Scalar>(fim: &DMatrix<T>, targets: usize) -> (Vec<T>, bool) {
    let inf = vec![lit::<T>(f64::INFINITY); targets];
    let Some(efim) = equivalent_fim(fim, 2 * targets) else {
        return (inf, true);
    };
    let Some(inv) = equilibrated_inverse(&efim) else {
        return (inf, true);
    };
    let peb = (0..targets)
        .map(|s| (inv[(2 * s, 2 * s)] + inv[(2 * s + 1, 2 * s + 1)]).max(T::zero()).sqrt())
        .collect();
    (peb, false)
}

/// Sampling settings of the coverage estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageSampler<T> {
    pub samples: usize,
    /// RCS of the probe target, m².
    pub rcs: T,
}

impl<T: Scalar> Default for CoverageSampler<T> {
    fn default() -> Self {
        Self {
            samples: 500,
            rcs: T::one(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageMap<T> {
    pub points: Vec<Position2D<T>>,
    /// Coherent single-target PEB at each point, meters.
    pub peb: Vec<T>,
    pub threshold: T,
    /// Fraction of points with `PEB ≤ threshold`.
    pub coverage: T,
}

impl<T: Scalar> CoverageMap<T> {
    /// `f_SC(η)` over the stored samples.
    pub fn fraction_below(&self, threshold: T) -> T {
        if self.peb.is_empty() {
            return T::zero();
        }
        let hits = self.peb.iter().filter(|&&p| p <= threshold).count();
        lit::<T>(hits as f64) / lit(self.peb.len() as f64)
    }
}

/// Monte Carlo coverage `f_SC(η) = Pr(PEB ≤ η)` over uniform probe positions.
pub fn coverage<T: Scalar, R: Rng + ?Sized>(
    scenario: &Scenario<T>,
    frame: &TransmitFrame<T>,
    threshold: T,
    sampler: &CoverageSampler<T>,
    parameterization: Parameterization,
    rng: &mut R,
) -> Result<CoverageMap<T>> {
    if sampler.samples == 0 {
        return Err(Error::Config("coverage needs at least one sample".into()));
    }
    let region = scenario.region;
    let points: Vec<Position2D<T>> = (0..sampler.samples)
        .map(|_| {
            let x: f64 = rng.random();
            let y: f64 = rng.random();
            Position2D::new(
                region.x_min + region.width() * lit(x),
                region.y_min + region.height() * lit(y),
            )
        })
        .collect();
    let peb: Vec<T> = points
        .par_iter()
        .map(|p| {
            let target = Target {
                position: *p,
                rcs: sampler.rcs,
                reflection_phase: T::zero(),
            };
            fim(scenario, frame, &[target], parameterization)
                .map(|f| f.peb_per_target[0])
                .unwrap_or(lit(f64::INFINITY))
        })
        .collect();
    let mut map = CoverageMap {
        points,
        peb,
        threshold,
        coverage: T::zero(),
    };
    map.coverage = map.fraction_below(threshold);
    Ok(map)
}
