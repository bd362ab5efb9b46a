//! Non-coherent single-target cost: every transmit/receive pair gets its own
//! free complex gain, so only angle information survives.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;

use super::{solve_hpsd, PreparedEchoes, Response, SensingModel};
use crate::geometry::Position2D;
use crate::scalar::Scalar;

/// Sufficient statistics of one hypothesis: transmit Gram `U`, matched
/// outputs `b_{t,r}` and receive steering norms.
pub(crate) struct NcpStats<T: Scalar> {
    pub gram: DMatrix<Complex<T>>,
    /// `b_{t,r} = Σ_l conj(u_t[l]) a_rᴴ y_r[l]`, shape `M_t × M_r`.
    pub matched: DMatrix<Complex<T>>,
    pub rx_norms: Vec<T>,
}

pub(crate) fn ncp_stats<T: Scalar>(resp: &Response<T>, echoes: &PreparedEchoes<T>) -> NcpStats<T> {
    let length = resp.u[0].len();
    let u = DMatrix::from_fn(length, resp.u.len(), |l, t| resp.u[t][l]);
    let gram = u.adjoint() * &u;
    let mut matched = DMatrix::zeros(resp.u.len(), resp.v.len());
    for (r, (v, y)) in resp.v.iter().zip(&echoes.matrices).enumerate() {
        let z: DVector<Complex<T>> = y * v.conjugate();
        matched.set_column(r, &(u.adjoint() * z));
    }
    let rx_norms = resp.v.iter().map(|v| v.norm_squared()).collect();
    NcpStats { gram, matched, rx_norms }
}

/// Energy captured by the least-squares fit, `Σ_r b_rᴴ G_r⁻¹ b_r`.
pub(crate) fn projection_from_stats<T: Scalar>(stats: &NcpStats<T>) -> T {
    let x = solve_hpsd(&stats.gram, &stats.matched);
    let mut total = T::zero();
    for r in 0..stats.matched.ncols() {
        let q = stats.matched.column(r).dotc(&x.column(r)).re;
        total += q / stats.rx_norms[r];
    }
    total.max(T::zero())
}

/// Echo energy explained by a target at `p`, i.e. `Σ‖y‖² − L_NCP(p)`.
///
/// Hypotheses coinciding with an AP explain nothing.
pub fn projection_energy<T: Scalar>(model: &SensingModel<T>, echoes: &PreparedEchoes<T>, p: &Position2D<T>) -> T {
    match model.response(p) {
        Ok(resp) => projection_from_stats(&ncp_stats(&resp, echoes)).min(echoes.energy),
        Err(_) => T::zero(),
    }
}

/// Non-coherent cost `Σ_{l,r} ‖y_r[l] − Σ_t γ̂_{t,r} a(ϑ_r) aᵀ(θ_t) x_t[l]‖²` with
/// jointly least-squares gains.
pub fn ncp_cost<T: Scalar>(model: &SensingModel<T>, echoes: &PreparedEchoes<T>, p: &Position2D<T>) -> T {
    (echoes.energy - projection_energy(model, echoes, p)).max(T::zero())
}

/// Joint least-squares gains `γ̂_{t,r}`, shape `M_t × M_r`.
pub fn ncp_gains<T: Scalar>(
    model: &SensingModel<T>,
    echoes: &PreparedEchoes<T>,
    p: &Position2D<T>,
) -> crate::Result<DMatrix<Complex<T>>> {
    let stats = ncp_stats(&model.response(p)?, echoes);
    let mut x = solve_hpsd(&stats.gram, &stats.matched);
    for (r, &n) in stats.rx_norms.iter().enumerate() {
        x.column_mut(r).unscale_mut(n);
    }
    Ok(x)
}

/// Per-pair closed form `γ̂_{t,r} = b_{t,r} / (‖a_r‖² Σ_l |u_t[l]|²)`.
///
/// Coincides with [`ncp_gains`] when the transmit signals are mutually
/// orthogonal over the frame (for example with pure sensing and a
/// round-robin schedule).
pub fn ncp_gains_pairwise<T: Scalar>(
    model: &SensingModel<T>,
    echoes: &PreparedEchoes<T>,
    p: &Position2D<T>,
) -> crate::Result<DMatrix<Complex<T>>> {
    let stats = ncp_stats(&model.response(p)?, echoes);
    Ok(DMatrix::from_fn(stats.matched.nrows(), stats.matched.ncols(), |t, r| {
        let g = stats.gram[(t, t)].re * stats.rx_norms[r];
        if g > T::zero() {
            stats.matched[(t, r)].unscale(g)
        } else {
            Complex::new(T::zero(), T::zero())
        }
    }))
}

/// Energy explained jointly by targets at `positions` when every
/// `(target, tx, rx)` path carries its own free complex gain.
///
/// Hypotheses coinciding with an AP are skipped.
pub fn joint_projection_energy<T: Scalar>(
    model: &SensingModel<T>,
    echoes: &PreparedEchoes<T>,
    positions: &[Position2D<T>],
) -> T {
    let resps: Vec<Response<T>> = positions.iter().filter_map(|p| model.response(p).ok()).collect();
    if resps.is_empty() {
        return T::zero();
    }
    let m_t = model.num_tx();
    let cols = resps.len() * m_t;
    let length = model.length();
    let u = DMatrix::from_fn(length, cols, |l, c| resps[c / m_t].u[c % m_t][l]);
    let w = u.adjoint() * &u;
    let mut total = T::zero();
    for (r, y) in echoes.matrices.iter().enumerate() {
        let mut b = DVector::zeros(cols);
        for (s, resp) in resps.iter().enumerate() {
            let z: DVector<Complex<T>> = y * resp.v[r].conjugate();
            let part = u.columns(s * m_t, m_t).adjoint() * z;
            b.rows_mut(s * m_t, m_t).copy_from(&part);
        }
        let g = DMatrix::from_fn(cols, cols, |a, c| {
            w[(a, c)] * resps[a / m_t].v[r].dotc(&resps[c / m_t].v[r])
        });
        let x = solve_hpsd(&g, &DMatrix::from_column_slice(cols, 1, b.as_slice()));
        total += b.dotc(&x.column(0)).re;
    }
    total.max(T::zero()).min(echoes.energy)
}

/// Per-target fitted echoes of the joint non-coherent least-squares fit,
/// indexed `[target][rx]` as `L × N` matrices.
pub(crate) fn joint_components<T: Scalar>(
    model: &SensingModel<T>,
    echoes: &PreparedEchoes<T>,
    positions: &[Position2D<T>],
) -> crate::Result<Vec<Vec<DMatrix<Complex<T>>>>> {
    let resps = positions.iter().map(|p| model.response(p)).collect::<crate::Result<Vec<_>>>()?;
    let m_t = model.num_tx();
    let cols = resps.len() * m_t;
    let length = model.length();
    let u = DMatrix::from_fn(length, cols, |l, c| resps[c / m_t].u[c % m_t][l]);
    let w = u.adjoint() * &u;
    let mut out = vec![Vec::with_capacity(model.num_rx()); resps.len()];
    for (r, y) in echoes.matrices.iter().enumerate() {
        let mut b = DMatrix::zeros(cols, 1);
        for (s, resp) in resps.iter().enumerate() {
            let z: DVector<Complex<T>> = y * resp.v[r].conjugate();
            let part = u.columns(s * m_t, m_t).adjoint() * z;
            b.view_mut((s * m_t, 0), (m_t, 1)).copy_from(&part);
        }
        let g = DMatrix::from_fn(cols, cols, |a, c| {
            w[(a, c)] * resps[a / m_t].v[r].dotc(&resps[c / m_t].v[r])
        });
        let x = solve_hpsd(&g, &b);
        for (s, resp) in resps.iter().enumerate() {
            let gains = x.view((s * m_t, 0), (m_t, 1));
            let signal = u.columns(s * m_t, m_t) * gains;
            out[s].push(&signal * resp.v[r].transpose());
        }
    }
    Ok(out)
}

/// Rank of the non-coherent model subspace per receiver (for CFAR scaling).
pub(crate) fn model_dimension<T: Scalar>(model: &SensingModel<T>) -> usize {
    model.num_tx() * model.num_rx()
}

#[cfg(test)]
mod tests {
    use super::super::testutil::small_instance;
    use super::super::{mean_echoes, synthesize_echoes, EchoSet};
    use super::*;
    use crate::scalar::cis;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noiseless(s: &crate::scenario::Scenario<f64>, f: &crate::waveform::TransmitFrame<f64>) -> EchoSet<f64> {
        EchoSet {
            samples: mean_echoes(s, f).unwrap(),
            noise_power: 0.0,
            carrier_hz: s.carrier_hz,
        }
    }

    #[test]
    fn zero_at_truth_without_noise() {
        let (s, f) = small_instance(3, 2, 4, 12, 1, 0.5, 10);
        let model = SensingModel::new(&s, &f).unwrap();
        let e = PreparedEchoes::new(&noiseless(&s, &f));
        let c = ncp_cost(&model, &e, &s.targets[0].position);
        assert!(c <= 1e-9 * e.energy, "{c} vs {}", e.energy);
        let far = ncp_cost(&model, &e, &Position2D::new(50.0, 950.0));
        assert!(far <= e.energy && far > 0.5 * e.energy);
    }

    #[test]
    fn cost_never_exceeds_energy() {
        let (mut s, f) = small_instance(2, 2, 3, 8, 2, 0.7, 11);
        s.sensing_noise_power = 1e-18;
        let echoes = synthesize_echoes(&s, &f, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let model = SensingModel::new(&s, &f).unwrap();
        let e = PreparedEchoes::new(&echoes);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let p = Position2D::new(rng.random_range(0.0..1000.0), rng.random_range(0.0..1000.0));
            let c = ncp_cost(&model, &e, &p);
            assert!(c >= 0.0 && c <= e.energy);
        }
    }

    #[test]
    fn pairwise_equals_joint_for_orthogonal_signals() {
        // ρ = 0: only the scheduled AP transmits at each instant.
        let (mut s, f) = small_instance(3, 2, 4, 9, 1, 0.0, 12);
        s.sensing_noise_power = 1e-17;
        let echoes = synthesize_echoes(&s, &f, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let model = SensingModel::new(&s, &f).unwrap();
        let e = PreparedEchoes::new(&echoes);
        let p = s.targets[0].position.offset(3.0, -2.0);
        let a = ncp_gains(&model, &e, &p).unwrap();
        let b = ncp_gains_pairwise(&model, &e, &p).unwrap();
        assert!((&a - &b).norm() <= 1e-10 * a.norm());
    }

    #[test]
    fn joint_projection_matches_single_and_explains_two_targets() {
        let (s, f) = small_instance(2, 3, 4, 12, 2, 0.5, 5);
        let model = SensingModel::new(&s, &f).unwrap();
        let e = PreparedEchoes::new(&noiseless(&s, &f));
        let p0 = s.targets[0].position;
        let single = projection_energy(&model, &e, &p0);
        let joint = joint_projection_energy(&model, &e, &[p0]);
        assert!((single - joint).abs() <= 1e-10 * e.energy);
        let both: Vec<_> = s.targets.iter().map(|t| t.position).collect();
        let all = joint_projection_energy(&model, &e, &both);
        assert!((all - e.energy).abs() <= 1e-9 * e.energy, "{all} vs {}", e.energy);
    }

    #[test]
    fn invariant_to_per_receiver_phase() {
        let (mut s, f) = small_instance(2, 3, 4, 8, 1, 0.5, 13);
        s.sensing_noise_power = 1e-17;
        let echoes = synthesize_echoes(&s, &f, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let model = SensingModel::new(&s, &f).unwrap();
        let rotated = echoes.rotated(&[cis(0.4), cis(2.0), cis(-1.1)]);
        let e1 = PreparedEchoes::new(&echoes);
        let e2 = PreparedEchoes::new(&rotated);
        let p = s.targets[0].position.offset(0.3, 0.2);
        let (c1, c2) = (ncp_cost(&model, &e1, &p), ncp_cost(&model, &e2, &p));
        assert!((c1 - c2).abs() <= 1e-9 * c1);
    }
}
