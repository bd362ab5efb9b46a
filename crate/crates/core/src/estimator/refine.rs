//! Coherent refinement of coarse non-coherent hypotheses.

use nalgebra::DMatrix;
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use super::coherent::coherent_fit;
use super::confirm::polish;
use super::ncp::{joint_components, joint_projection_energy, model_dimension, ncp_cost};
use super::{PreparedEchoes, SensingModel};
use crate::error::Result;
use crate::geometry::Position2D;
use crate::optim::{bfgs, min_cost_assignment, BfgsOptions, Minimum};
use crate::scalar::{cis, from_usize, lit, to_f64, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineConfig<T> {
    /// Polish each grid hypothesis on the continuous non-coherent cost first.
    pub ncp_polish: bool,
    /// Spacing of the multi-start lattice in wavelengths.
    pub lattice_spacing_wavelengths: T,
    /// Largest half-width of the square multi-start window, meters.
    pub window_half_width: T,
    /// Smallest half-width of the window, meters.
    pub min_window_half_width: T,
    /// Window half-width in non-coherent standard deviations.
    pub window_sigmas: T,
    /// Side of the tiles over which array responses are held fixed, meters.
    pub envelope_tile: T,
    /// Number of lattice starts refined per hypothesis.
    pub starts: usize,
    /// Most lattice maxima climbed on the frozen score before ranking.
    pub max_screened: usize,
    /// Final joint descent over all hypotheses.
    pub joint: bool,
    pub max_iterations: usize,
}

impl<T: Scalar> Default for RefineConfig<T> {
    fn default() -> Self {
        Self {
            ncp_polish: true,
            lattice_spacing_wavelengths: lit(0.125),
            window_half_width: lit(2.5),
            min_window_half_width: lit(0.05),
            window_sigmas: lit(4.0),
            envelope_tile: lit(0.25),
            starts: 4,
            max_screened: 2000,
            joint: true,
            max_iterations: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationReport<T> {
    pub coarse_hypotheses: Vec<Position2D<T>>,
    /// Hypotheses after the continuous non-coherent polish.
    pub ncp_positions: Vec<Position2D<T>>,
    pub refined_positions: Vec<Position2D<T>>,
    /// Reflection phase per target, radians (modulo π with the amplitude sign).
    pub reflection_phases: Vec<T>,
    /// `α_{t,r}` per target, indexed `[target][tx][rx]`.
    pub amplitudes: Vec<Vec<Vec<T>>>,
    pub initial_cost: T,
    pub final_cost: T,
    /// Coherent cost after each accepted joint iteration.
    pub cost_trajectory: Vec<T>,
    pub converged: bool,
    /// Distance from each true target to its matched estimate, when known.
    #[serde(default)]
    pub position_errors: Vec<Option<T>>,
}

/// Per-target error under the minimum-sum matching of estimates to truth.
/// Targets left without an estimate get `None`.
pub fn assign_errors<T: Scalar>(estimates: &[Position2D<T>], truth: &[Position2D<T>]) -> Vec<Option<T>> {
    let cost: Vec<Vec<f64>> = truth
        .iter()
        .map(|t| estimates.iter().map(|e| to_f64(t.distance(e))).collect())
        .collect();
    if estimates.is_empty() {
        return vec![None; truth.len()];
    }
    min_cost_assignment(&cost)
        .into_iter()
        .zip(truth)
        .map(|(m, t)| m.map(|j| t.distance(&estimates[j])))
        .collect()
}

/// Two-stage refinement: non-coherent polish, wavelength-lattice multi-start
/// on the single-target coherent cost, then joint quasi-Newton descent on the
/// full coherent cost.
pub fn refine_coherent<T: Scalar>(
    model: &SensingModel<T>,
    echoes: &PreparedEchoes<T>,
    coarse: &[Position2D<T>],
    cfg: &RefineConfig<T>,
) -> Result<EstimationReport<T>> {
    let energy = echoes.energy;
    let scale = if energy > T::zero() { T::one() / energy } else { T::one() };
    let lambda = model.wavelength;
    let initial_cost = if coarse.is_empty() {
        energy
    } else {
        coherent_fit(model, echoes, coarse).map_or(energy, |f| f.cost)
    };
    let opts = |fd: T| BfgsOptions {
        max_iterations: cfg.max_iterations,
        gradient_tolerance: lit(1e-12),
        step_tolerance: lit(1e-10),
        fd_step: fd,
        max_step: lit(0.05),
    };

    let ncp_positions = if cfg.ncp_polish && !coarse.is_empty() {
        let step = cfg.window_half_width.max(lit(1.0));
        polish(model, echoes, coarse, step).0
    } else {
        coarse.to_vec()
    };
    let mut singles = Vec::with_capacity(coarse.len());
    let mut converged = true;
    // Each hypothesis is first refined alone, against the echoes with the
    // non-coherent fits of the others removed.
    let components = if ncp_positions.len() > 1 {
        joint_components(model, echoes, &ncp_positions).ok()
    } else {
        None
    };
    let noise = residual_noise(model, echoes, &ncp_positions);
    for (s, polished) in ncp_positions.iter().enumerate() {
        let own = match &components {
            Some(parts) => cleaned_echoes(echoes, parts, s),
            None => echoes.clone(),
        };
        let half_width = match ncp_spread(model, &own, polished, noise) {
            Some(std) => (std * cfg.window_sigmas)
                .max(cfg.min_window_half_width)
                .min(cfg.window_half_width),
            None => cfg.window_half_width,
        };
        let starts = lattice_starts(model, &own, polished, half_width, cfg)?;
        let mut best: Option<Minimum<T>> = None;
        for start in starts {
            let m = bfgs(
                |x: &[T]| single_cost(model, &own, &start, x, lambda) * scale,
                &[T::zero(), T::zero()],
                &opts(lit(1e-4)),
            );
            let shifted = Minimum {
                x: vec![
                    start.x + m.x[0] * lambda,
                    start.y + m.x[1] * lambda,
                ],
                ..m
            };
            if best.as_ref().is_none_or(|b| shifted.value < b.value) {
                best = Some(shifted);
            }
        }
        let best = best.expect("lattice yields at least one start");
        if !cfg.joint || coarse.len() == 1 {
            converged &= best.converged;
        }
        singles.push(Position2D::new(best.x[0], best.x[1]));
    }

    let mut refined = singles;
    let mut trajectory = Vec::new();
    if !refined.is_empty() {
        let base = refined.clone();
        let joint = bfgs(
            |x: &[T]| {
                let pos: Vec<Position2D<T>> = base
                    .iter()
                    .enumerate()
                    .map(|(s, p)| p.offset(x[2 * s] * lambda, x[2 * s + 1] * lambda))
                    .collect();
                coherent_fit(model, echoes, &pos).map_or(T::one(), |f| f.cost * scale)
            },
            &vec![T::zero(); 2 * base.len()],
            &BfgsOptions {
                max_iterations: if cfg.joint { cfg.max_iterations } else { 0 },
                ..opts(lit(1e-4))
            },
        );
        if cfg.joint {
            converged &= joint.converged;
        }
        refined = base
            .iter()
            .enumerate()
            .map(|(s, p)| p.offset(joint.x[2 * s] * lambda, joint.x[2 * s + 1] * lambda))
            .collect();
        trajectory = joint.trajectory.iter().map(|&v| v * energy).collect();
    }

    let (final_cost, phases, amplitudes) = if refined.is_empty() {
        (energy, vec![], vec![])
    } else {
        let mut fit = coherent_fit(model, echoes, &refined)?;
        if fit.cost > initial_cost {
            // Never report something worse than the starting hypotheses.
            refined = coarse.to_vec();
            fit = coherent_fit(model, echoes, &refined)?;
        }
        let amps = fit
            .amplitudes
            .iter()
            .map(|a| (0..a.nrows()).map(|t| (0..a.ncols()).map(|r| a[(t, r)]).collect()).collect())
            .collect();
        (fit.cost, fit.phases, amps)
    };

    Ok(EstimationReport {
        coarse_hypotheses: coarse.to_vec(),
        ncp_positions,
        refined_positions: refined,
        reflection_phases: phases,
        amplitudes,
        initial_cost,
        final_cost,
        cost_trajectory: trajectory,
        converged,
        position_errors: Vec::new(),
    })
}

/// Noise variance per complex sample left after the joint non-coherent fit.
fn residual_noise<T: Scalar>(model: &SensingModel<T>, echoes: &PreparedEchoes<T>, positions: &[Position2D<T>]) -> T {
    let samples = model.num_rx() * model.length() * model.receivers[0].array.num_elements;
    let dof = samples.saturating_sub(positions.len() * model_dimension(model)).max(1);
    (echoes.energy - joint_projection_energy(model, echoes, positions)).max(T::zero()) / from_usize(dof)
}

/// Root-trace of the asymptotic covariance `σ² (∇²L_NCP)⁻¹` of the
/// non-coherent estimate at `p`, from a finite-difference Hessian.
fn ncp_spread<T: Scalar>(model: &SensingModel<T>, echoes: &PreparedEchoes<T>, p: &Position2D<T>, noise: T) -> Option<T> {
    let h: T = lit(0.05);
    let c = |dx: T, dy: T| ncp_cost(model, echoes, &p.offset(dx, dy));
    let c0 = c(T::zero(), T::zero());
    let hxx = (c(h, T::zero()) - c0 * lit(2.0) + c(-h, T::zero())) / (h * h);
    let hyy = (c(T::zero(), h) - c0 * lit(2.0) + c(T::zero(), -h)) / (h * h);
    let hxy = (c(h, h) - c(h, -h) - c(-h, h) + c(-h, -h)) / (h * h * lit(4.0));
    let det = hxx * hyy - hxy * hxy;
    if !(hxx > T::zero() && det > T::zero()) {
        return None;
    }
    Some((noise * (hxx + hyy) / det).sqrt())
}

fn cleaned_echoes<T: Scalar>(
    echoes: &PreparedEchoes<T>,
    parts: &[Vec<DMatrix<Complex<T>>>],
    keep: usize,
) -> PreparedEchoes<T> {
    let matrices: Vec<DMatrix<Complex<T>>> = echoes
        .matrices
        .iter()
        .enumerate()
        .map(|(r, y)| {
            let mut m = y.clone();
            for (s, part) in parts.iter().enumerate() {
                if s != keep {
                    m -= &part[r];
                }
            }
            m
        })
        .collect();
    let energy = matrices.iter().map(|m| m.norm_squared()).fold(T::zero(), |a, b| a + b);
    PreparedEchoes { matrices, energy }
}

/// Array-domain statistics frozen at one point; scoring a nearby point only
/// moves the carrier phases.
struct Envelope<T: Scalar> {
    gram: DMatrix<Complex<T>>,
    matched: Vec<Vec<Complex<T>>>,
    inv_norms: Vec<T>,
    ridge: T,
}

impl<T: Scalar> Envelope<T> {
    fn new(model: &SensingModel<T>, echoes: &PreparedEchoes<T>, at: &Position2D<T>) -> Result<Self> {
        let resp = model.response(at)?;
        let m_t = model.num_tx();
        let length = resp.u[0].len();
        let u = DMatrix::from_fn(length, m_t, |l, t| resp.u[t][l]);
        let gram = u.adjoint() * &u;
        let matched = resp
            .v
            .iter()
            .zip(&echoes.matrices)
            .map(|(v, y)| (u.adjoint() * (y * v.conjugate())).iter().copied().collect())
            .collect();
        let inv_norms = resp.v.iter().map(|v| T::one() / v.norm_squared()).collect();
        let ridge = (0..m_t).map(|t| gram[(t, t)].re).fold(T::zero(), |a, b| a + b) * lit(1e-12);
        Ok(Self {
            gram,
            matched,
            inv_norms,
            ridge,
        })
    }

    /// Single-target explained energy at `p`.
    ///
    /// Carrier phases split into a transmit and a receive factor, and the
    /// receive factor cancels in the real Gram `Re(R̄ W R)`, so a point needs
    /// one small Cholesky factorization shared by all receivers.
    fn score(&self, model: &SensingModel<T>, p: &Position2D<T>) -> T {
        let m_t = model.num_tx();
        let two_pi_over_lambda = T::two_pi() / model.wavelength;
        let tx_rot: Vec<Complex<T>> = model
            .transmitters
            .iter()
            .map(|ap| cis(-two_pi_over_lambda * ap.position.distance(p)))
            .collect();
        let mut chol = vec![T::zero(); m_t * m_t];
        for a in 0..m_t {
            for c in 0..=a {
                let mut g = (self.gram[(a, c)] * tx_rot[a].conj() * tx_rot[c]).re;
                if a == c {
                    g += self.ridge;
                }
                chol[a * m_t + c] = g;
            }
        }
        if !cholesky_in_place(&mut chol, m_t) {
            return T::zero();
        }
        let mut re = vec![T::zero(); m_t];
        let mut im = vec![T::zero(); m_t];
        let (mut q11, mut q12, mut q22) = (T::zero(), T::zero(), T::zero());
        for (r, ap) in model.receivers.iter().enumerate() {
            let rx_rot = cis(-two_pi_over_lambda * ap.position.distance(p));
            for t in 0..m_t {
                let z = self.matched[r][t] * (tx_rot[t] * rx_rot).conj();
                re[t] = z.re;
                im[t] = z.im;
            }
            forward_substitute(&chol, m_t, &mut re);
            forward_substitute(&chol, m_t, &mut im);
            let (mut xx, mut xy, mut yy) = (T::zero(), T::zero(), T::zero());
            for t in 0..m_t {
                xx += re[t] * re[t];
                xy += re[t] * im[t];
                yy += im[t] * im[t];
            }
            q11 += xx * self.inv_norms[r];
            q12 += xy * self.inv_norms[r];
            q22 += yy * self.inv_norms[r];
        }
        let half_diff = (q11 - q22) * lit(0.5);
        (q11 + q22) * lit(0.5) + (half_diff * half_diff + q12 * q12).sqrt()
    }
}

/// Lower-triangular Cholesky factor of the row-major lower triangle in `a`.
fn cholesky_in_place<T: Scalar>(a: &mut [T], n: usize) -> bool {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > T::zero()) {
            return false;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut v = a[i * n + j];
            for k in 0..j {
                v -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = v / d;
        }
    }
    true
}

/// Solves `L x = b` in place.
fn forward_substitute<T: Scalar>(l: &[T], n: usize, b: &mut [T]) {
    for i in 0..n {
        let mut v = b[i];
        for k in 0..i {
            v -= l[i * n + k] * b[k];
        }
        b[i] = v / l[i * n + i];
    }
}

fn single_cost<T: Scalar>(model: &SensingModel<T>, echoes: &PreparedEchoes<T>, base: &Position2D<T>, x: &[T], lambda: T) -> T {
    let p = base.offset(x[0] * lambda, x[1] * lambda);
    coherent_fit(model, echoes, &[p]).map_or(echoes.energy, |f| f.cost)
}

/// Best local maxima of the single-target explained energy on a square
/// lattice around `center`.
///
/// Array responses are frozen per square tile of the lattice; only the
/// carrier phases move inside a tile, which keeps the exhaustive search cheap.
/// The exact cost takes over in the descent that follows.
fn lattice_starts<T: Scalar>(
    model: &SensingModel<T>,
    echoes: &PreparedEchoes<T>,
    center: &Position2D<T>,
    half_width: T,
    cfg: &RefineConfig<T>,
) -> Result<Vec<Position2D<T>>> {
    let step = cfg.lattice_spacing_wavelengths * model.wavelength;
    let half = (half_width / step).floor().to_usize().unwrap_or(0);
    let side = 2 * half + 1;
    if side == 1 {
        return Ok(vec![*center]);
    }
    let per_tile = (cfg.envelope_tile / step).round().to_usize().unwrap_or(1).max(1);
    let mut scores = vec![T::zero(); side * side];
    let mut ty = 0;
    while ty < side {
        let y_end = (ty + per_tile).min(side);
        let mut tx = 0;
        while tx < side {
            let x_end = (tx + per_tile).min(side);
            let mid = |a: usize, b: usize| (from_usize::<T>(a + b - 1) * lit(0.5) - from_usize::<T>(half)) * step;
            let tile_center = center.offset(mid(tx, x_end), mid(ty, y_end));
            let envelope = Envelope::new(model, echoes, &tile_center)?;
            for iy in ty..y_end {
                for ix in tx..x_end {
                    let p = center.offset(
                        (from_usize::<T>(ix) - from_usize::<T>(half)) * step,
                        (from_usize::<T>(iy) - from_usize::<T>(half)) * step,
                    );
                    scores[iy * side + ix] = envelope.score(model, &p);
                }
            }
            tx = x_end;
        }
        ty = y_end;
    }
    let mut peaks: Vec<usize> = (0..side * side)
        .filter(|&idx| {
            let (cx, cy) = (idx % side, idx / side);
            let v = scores[idx];
            (cy.saturating_sub(1)..=(cy + 1).min(side - 1)).all(|y| {
                (cx.saturating_sub(1)..=(cx + 1).min(side - 1)).all(|x| {
                    let j = y * side + x;
                    j == idx || scores[j] < v || (scores[j] == v && idx < j)
                })
            })
        })
        .collect();
    peaks.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    peaks.truncate(cfg.max_screened.max(cfg.starts).max(1));
    // Near its top a lobe is much narrower than the lattice spacing, so a
    // lattice sample says little about the height of its lobe. Climb every
    // candidate on the frozen score before ranking.
    let mut climbed = Vec::with_capacity(peaks.len());
    for idx in peaks {
        let start = center.offset(
            (from_usize::<T>(idx % side) - from_usize::<T>(half)) * step,
            (from_usize::<T>(idx / side) - from_usize::<T>(half)) * step,
        );
        let envelope = Envelope::new(model, echoes, &start)?;
        climbed.push(compass_climb(|p| envelope.score(model, p), start, step));
    }
    climbed.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
    climbed.truncate(cfg.starts.max(1));
    Ok(climbed.into_iter().map(|(p, _)| p).collect())
}

/// Compass search for a local maximum, halving the step down to `step/64`.
fn compass_climb<T: Scalar>(score: impl Fn(&Position2D<T>) -> T, start: Position2D<T>, step: T) -> (Position2D<T>, T) {
    let mut best = start;
    let mut value = score(&best);
    let mut h = step * lit(0.5);
    let stop = step / lit(64.0);
    while h >= stop {
        let mut moved = false;
        for (dx, dy) in [(h, T::zero()), (-h, T::zero()), (T::zero(), h), (T::zero(), -h)] {
            let q = best.offset(dx, dy);
            let v = score(&q);
            if v > value {
                best = q;
                value = v;
                moved = true;
                break;
            }
        }
        if !moved {
            h *= lit(0.5);
        }
    }
    (best, value)
}
