//! Coherent multi-target cost: real path amplitudes and one reflection phase
//! per target, both profiled out analytically.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;

use super::{solve_psd, PreparedEchoes, Response, SensingModel};
use crate::error::Result;
use crate::geometry::Position2D;
use crate::scalar::{cis, lit, wrap_two_pi, Scalar};

/// Profiled coherent fit at fixed positions.
#[derive(Debug, Clone, PartialEq)]
pub struct CoherentFit<T> {
    /// `min_{α, φ_fix} Σ‖y − μ(p, α, φ_fix)‖²`.
    pub cost: T,
    /// Estimated reflection phase per target, `[0, 2π)`; defined modulo π
    /// together with the sign of the amplitudes.
    pub phases: Vec<T>,
    /// Estimated amplitudes `α_{t,r}` per target, each `M_t × M_r`.
    pub amplitudes: Vec<DMatrix<T>>,
    /// Block-coordinate sweeps used (1 for a single target).
    pub sweeps: usize,
}

/// Gram matrix and matched outputs of receiver `r` over all `(s, t)` columns,
/// column index `s·M_t + t`, propagation phases included.
pub(crate) struct ReceiverStats<T: Scalar> {
    pub gram: DMatrix<Complex<T>>,
    pub matched: DVector<Complex<T>>,
}

pub(crate) fn receiver_stats<T: Scalar>(responses: &[Response<T>], echoes: &PreparedEchoes<T>) -> Vec<ReceiverStats<T>> {
    let m_t = responses[0].u.len();
    let m_r = responses[0].v.len();
    let s_count = responses.len();
    let length = responses[0].u[0].len();
    let cols = s_count * m_t;
    let u = DMatrix::from_fn(length, cols, |l, c| responses[c / m_t].u[c % m_t][l]);
    let w = u.adjoint() * &u;
    (0..m_r)
        .map(|r| {
            let phase = |c: usize| responses[c / m_t].psi[c % m_t][r];
            let vv = DMatrix::from_fn(s_count, s_count, |a, b| responses[a].v[r].dotc(&responses[b].v[r]));
            let gram = DMatrix::from_fn(cols, cols, |a, b| {
                w[(a, b)] * vv[(a / m_t, b / m_t)] * cis(phase(b) - phase(a))
            });
            let mut matched = DVector::zeros(cols);
            for s in 0..s_count {
                let proj: DVector<Complex<T>> = &echoes.matrices[r] * responses[s].v[r].conjugate();
                for t in 0..m_t {
                    let c = s * m_t + t;
                    matched[c] = u.column(c).dotc(&proj) * cis(-phase(c));
                }
            }
            ReceiverStats { gram, matched }
        })
        .collect()
}

/// Exact single-target solve over receivers given real Grams and matched vectors.
///
/// Returns `(φ, α per receiver, explained energy)`.
pub(crate) fn solve_single_target<T: Scalar>(blocks: &[(DMatrix<T>, DVector<Complex<T>>)]) -> (T, Vec<DVector<T>>, T) {
    let mut q = [[T::zero(); 2]; 2];
    let mut solved = Vec::with_capacity(blocks.len());
    for (g, z) in blocks {
        let zr = DMatrix::from_fn(z.len(), 2, |i, k| if k == 0 { z[i].re } else { z[i].im });
        let x = solve_psd(g, &zr);
        let qr = zr.transpose() * &x;
        for a in 0..2 {
            for b in 0..2 {
                q[a][b] += qr[(a, b)];
            }
        }
        solved.push(x);
    }
    let half = lit::<T>(0.5);
    let two = T::one() + T::one();
    let mean = (q[0][0] + q[1][1]) * half;
    let diff = (q[0][0] - q[1][1]) * half;
    let off = (q[0][1] + q[1][0]) * half;
    let lambda = mean + (diff * diff + off * off).sqrt();
    let mut phi = (two * off).atan2(two * diff) * half;
    let (sn, cs) = phi.sin_cos();
    let mut alphas: Vec<DVector<T>> = solved
        .iter()
        .map(|x| x.column(0) * cs + x.column(1) * sn)
        .collect();
    let total: T = alphas.iter().map(|a| a.sum()).fold(T::zero(), |a, b| a + b);
    if total < T::zero() {
        phi += T::pi();
        for a in &mut alphas {
            a.neg_mut();
        }
    }
    (wrap_two_pi(phi), alphas, lambda.max(T::zero()))
}

const MAX_SWEEPS: usize = 500;

/// Profiles amplitudes and reflection phases out of the coherent likelihood.
///
/// A single target is solved in closed form. Several targets are handled by
/// exact block-coordinate descent (one target block at a time), initialized
/// from the decoupled single-target solutions.
pub fn coherent_fit<T: Scalar>(
    model: &SensingModel<T>,
    echoes: &PreparedEchoes<T>,
    positions: &[Position2D<T>],
) -> Result<CoherentFit<T>> {
    let responses: Vec<Response<T>> = positions.iter().map(|p| model.response(p)).collect::<Result<_>>()?;
    Ok(fit_from_responses(&responses, echoes))
}

pub(crate) fn fit_from_responses<T: Scalar>(responses: &[Response<T>], echoes: &PreparedEchoes<T>) -> CoherentFit<T> {
    let energy = echoes.energy;
    if responses.is_empty() {
        return CoherentFit {
            cost: energy,
            phases: vec![],
            amplitudes: vec![],
            sweeps: 0,
        };
    }
    let m_t = responses[0].u.len();
    let m_r = responses[0].v.len();
    let s_count = responses.len();
    let stats = receiver_stats(responses, echoes);
    let zero = Complex::new(T::zero(), T::zero());
    let mut beta: Vec<DVector<Complex<T>>> = vec![DVector::from_element(s_count * m_t, zero); m_r];
    let mut phases = vec![T::zero(); s_count];
    let mut amps = vec![DMatrix::<T>::zeros(m_t, m_r); s_count];
    let real_blocks: Vec<Vec<DMatrix<T>>> = stats
        .iter()
        .map(|st| {
            (0..s_count)
                .map(|s| st.gram.view((s * m_t, s * m_t), (m_t, m_t)).map(|c| c.re))
                .collect()
        })
        .collect();

    let cost_of = |beta: &[DVector<Complex<T>>]| -> T {
        let mut explained = T::zero();
        for (st, b) in stats.iter().zip(beta) {
            let two = T::one() + T::one();
            explained += two * b.dotc(&st.matched).re - b.dotc(&(&st.gram * b)).re;
        }
        energy - explained
    };

    let mut cost = energy;
    let mut sweeps = 0;
    let tol = energy * lit(1e-15);
    for sweep in 0..MAX_SWEEPS {
        sweeps = sweep + 1;
        for s in 0..s_count {
            let blocks: Vec<(DMatrix<T>, DVector<Complex<T>>)> = (0..m_r)
                .map(|r| {
                    let st = &stats[r];
                    let rows = st.gram.rows(s * m_t, m_t);
                    let mut z: DVector<Complex<T>> = st.matched.rows(s * m_t, m_t).into_owned();
                    z -= &rows * &beta[r];
                    z += st.gram.view((s * m_t, s * m_t), (m_t, m_t)) * beta[r].rows(s * m_t, m_t);
                    (real_blocks[r][s].clone(), z)
                })
                .collect();
            let (phi, alphas, _) = solve_single_target(&blocks);
            phases[s] = phi;
            let rot = cis(phi);
            for r in 0..m_r {
                for t in 0..m_t {
                    amps[s][(t, r)] = alphas[r][t];
                    beta[r][s * m_t + t] = rot * alphas[r][t];
                }
            }
        }
        let new_cost = cost_of(&beta);
        let improved = cost - new_cost;
        cost = new_cost;
        if s_count == 1 || improved.abs() <= tol {
            break;
        }
    }
    CoherentFit {
        cost: cost.max(T::zero()),
        phases,
        amplitudes: amps,
        sweeps,
    }
}

/// Coherent position-only cost `L(p_2D)`.
///
/// Degenerate hypotheses (on top of an AP) evaluate to the echo energy.
pub fn coherent_cost<T: Scalar>(model: &SensingModel<T>, echoes: &PreparedEchoes<T>, positions: &[Position2D<T>]) -> T {
    coherent_fit(model, echoes, positions).map_or(echoes.energy, |f| f.cost)
}

/// Compressed cost with every `(t, r)` path fitted independently:
/// `Σ‖y‖² − Σ_s ½(Σ_{t,r} |z|²/g + |Σ_{t,r} z²/g|)`.
///
/// This is the closed form obtained when transmit signals are orthogonal and
/// target responses do not overlap; otherwise it differs from
/// [`coherent_cost`], which is the exact profile.
pub fn coherent_cost_decoupled<T: Scalar>(
    model: &SensingModel<T>,
    echoes: &PreparedEchoes<T>,
    positions: &[Position2D<T>],
) -> Result<T> {
    let half = lit::<T>(0.5);
    let mut explained = T::zero();
    for p in positions {
        let resp = model.response(p)?;
        let stats = receiver_stats(std::slice::from_ref(&resp), echoes);
        let mut energy_term = T::zero();
        let mut cross = Complex::new(T::zero(), T::zero());
        for st in &stats {
            for c in 0..st.matched.len() {
                let g = st.gram[(c, c)].re;
                if g > T::zero() {
                    let z = st.matched[c];
                    energy_term += z.norm_sqr() / g;
                    cross += z * z / g;
                }
            }
        }
        explained += half * (energy_term + crate::scalar::abs2(cross).sqrt());
    }
    Ok(echoes.energy - explained)
}
