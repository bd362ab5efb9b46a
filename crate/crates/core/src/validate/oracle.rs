//! Reference computations that share no numerical code with the estimator,
//! Fisher or selection kernels.
//!
//! Everything here works on the raw echo model
//! `y_r[l] = Σ_s Σ_t γ_{s,t,r} a_r(ϑ) a_tᵀ(θ) x_t[l] + z` with steering
//! vectors, angles and carrier phases recomputed from scratch, and minimizes
//! or differentiates it numerically.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;

use crate::estimator::EchoSet;
use crate::geometry::{ApNode, Position2D};
use crate::scalar::SPEED_OF_LIGHT;
use crate::scenario::{Scenario, Target};
use crate::selection::GreedyStep;
use crate::waveform::TransmitFrame;

type C = Complex<f64>;
/// Samples indexed `[receiver][instant]`.
pub type Samples = Vec<Vec<DVector<C>>>;

/// Raw echo model of a scenario's transmit and receive APs.
#[derive(Debug, Clone)]
pub struct RawModel {
    tx: Vec<ApNode<f64>>,
    rx: Vec<ApNode<f64>>,
    /// `[transmitter][instant]`.
    signals: Vec<Vec<DVector<C>>>,
    wavelength: f64,
}

fn steering(ap: &ApNode<f64>, p: &Position2D<f64>) -> DVector<C> {
    let theta = (p.y - ap.position.y).atan2(p.x - ap.position.x) - ap.boresight;
    let kd = 2.0 * std::f64::consts::PI * ap.array.element_spacing / ap.array.wavelength;
    DVector::from_fn(ap.array.num_elements, |n, _| C::from_polar(1.0, n as f64 * kd * theta.sin()))
}

fn hypot(a: &Position2D<f64>, b: &Position2D<f64>) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

impl RawModel {
    pub fn new(scenario: &Scenario<f64>, frame: &TransmitFrame<f64>) -> Self {
        Self {
            tx: frame.transmitters.iter().map(|&t| scenario.aps[t].clone()).collect(),
            rx: scenario.receivers().iter().map(|&r| scenario.aps[r].clone()).collect(),
            signals: frame.signals.clone(),
            wavelength: SPEED_OF_LIGHT / scenario.carrier_hz,
        }
    }

    pub fn num_paths(&self) -> usize {
        self.tx.len() * self.rx.len()
    }

    /// `−2π (d_t + d_r)/λ`, not reduced.
    pub fn carrier_phase(&self, t: usize, r: usize, p: &Position2D<f64>) -> f64 {
        -2.0 * std::f64::consts::PI * (hypot(&self.tx[t].position, p) + hypot(&self.rx[r].position, p)) / self.wavelength
    }

    /// Free-space bistatic amplitude of a unit-RCS-scaled target.
    pub fn amplitude(&self, t: usize, r: usize, p: &Position2D<f64>, rcs: f64) -> f64 {
        let (dt, dr) = (hypot(&self.tx[t].position, p), hypot(&self.rx[r].position, p));
        let four_pi_cubed = (4.0 * std::f64::consts::PI).powi(3);
        (self.wavelength * self.wavelength * rcs / (four_pi_cubed * dt * dt * dr * dr)).sqrt()
    }

    /// Unit-gain echo `a_r aᵀ_t x_t[l]` of path `(t, r)` from position `p`.
    pub fn path_echo(&self, t: usize, r: usize, p: &Position2D<f64>) -> Vec<DVector<C>> {
        let at = steering(&self.tx[t], p);
        let ar = steering(&self.rx[r], p);
        self.signals[t].iter().map(|x| &ar * at.dot(x)).collect()
    }

    /// Noise-free echoes for per-path gains indexed `[s][t·M_r + r]`.
    pub fn mean(&self, positions: &[Position2D<f64>], gains: &[Vec<C>]) -> Samples {
        let length = self.signals.first().map_or(0, |s| s.len());
        let mut out: Samples = self
            .rx
            .iter()
            .map(|ap| vec![DVector::zeros(ap.array.num_elements); length])
            .collect();
        for (p, g) in positions.iter().zip(gains) {
            for t in 0..self.tx.len() {
                for (r, row) in out.iter_mut().enumerate() {
                    let e = self.path_echo(t, r, p);
                    for (y, v) in row.iter_mut().zip(e) {
                        *y += v * g[t * self.rx.len() + r];
                    }
                }
            }
        }
        out
    }
}

/// `Σ_{r,l} ‖y_r[l] − μ_r[l]‖²`.
pub fn residual(echoes: &Samples, mean: &Samples) -> f64 {
    echoes
        .iter()
        .flatten()
        .zip(mean.iter().flatten())
        .map(|(y, m)| (y - m).norm_squared())
        .sum()
}

/// Minimizes a function known to be a quadratic in `n` real variables by
/// identifying its coefficients from evaluations and solving the normal
/// equations; repeated around the previous solution to shed roundoff.
///
/// `scale[i]` sets the probe step of coordinate `i`.
pub fn minimize_quadratic(f: impl Fn(&[f64]) -> f64, scale: &[f64], passes: usize) -> (Vec<f64>, f64) {
    let n = scale.len();
    let mut center = vec![0.0; n];
    let at = |c: &[f64], steps: &[(usize, f64)]| {
        let mut x = c.to_vec();
        for &(i, s) in steps {
            x[i] += s * scale[i];
        }
        f(&x)
    };
    for _ in 0..passes {
        let f0 = f(&center);
        let mut g = DVector::zeros(n);
        let mut h = DMatrix::zeros(n, n);
        for i in 0..n {
            let (fp, fm) = (at(&center, &[(i, 1.0)]), at(&center, &[(i, -1.0)]));
            g[i] = (fp - fm) / 2.0;
            h[(i, i)] = (fp + fm) / 2.0 - f0;
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let fij = at(&center, &[(i, 1.0), (j, 1.0)]);
                let v = (fij - f0 - g[i] - g[j] - h[(i, i)] - h[(j, j)]) / 2.0;
                h[(i, j)] = v;
                h[(j, i)] = v;
            }
        }
        // f(c + s∘b) = f0 + gᵀb + bᵀHb, stationary at 2Hb = −g.
        let Some(step) = (h * 2.0).lu().solve(&(-g)) else {
            break;
        };
        for i in 0..n {
            center[i] += step[i] * scale[i];
        }
    }
    let value = f(&center);
    (center, value)
}

/// Probe steps so that one step of each path gain adds about the echo energy.
fn gain_scales(basis: &[Samples], energy: f64) -> Vec<f64> {
    basis
        .iter()
        .map(|b| {
            let norm: f64 = b.iter().flatten().map(|v| v.norm_squared()).sum();
            if norm > 0.0 { (energy.max(f64::MIN_POSITIVE) / norm).sqrt() } else { 1.0 }
        })
        .collect()
}

fn combine(basis: &[Samples], coeffs: &[C]) -> Samples {
    let mut out = basis[0].iter().map(|row| row.iter().map(|v| v * C::new(0.0, 0.0)).collect()).collect::<Samples>();
    for (b, &c) in basis.iter().zip(coeffs) {
        for (o, v) in out.iter_mut().flatten().zip(b.iter().flatten()) {
            *o += v * c;
        }
    }
    out
}

/// Per-path echoes embedded in the full receiver layout (zeros at other receivers).
fn path_basis(model: &RawModel, p: &Position2D<f64>, with_carrier: bool) -> Vec<Samples> {
    let m_r = model.rx.len();
    let mut basis = Vec::with_capacity(model.num_paths());
    for t in 0..model.tx.len() {
        for r in 0..m_r {
            let mut g = vec![C::new(0.0, 0.0); model.num_paths()];
            g[t * m_r + r] = if with_carrier {
                C::from_polar(1.0, model.carrier_phase(t, r, p))
            } else {
                C::new(1.0, 0.0)
            };
            basis.push(model.mean(std::slice::from_ref(p), &[g]));
        }
    }
    basis
}

/// Minimum of the raw objective over free complex path gains at one hypothesis.
pub fn min_over_complex_gains(model: &RawModel, echoes: &EchoSet<f64>, p: &Position2D<f64>) -> f64 {
    let basis = path_basis(model, p, false);
    let s = gain_scales(&basis, echoes.energy());
    let scale: Vec<f64> = s.iter().flat_map(|&v| [v, v]).collect();
    let f = |x: &[f64]| {
        let coeffs: Vec<C> = x.chunks(2).map(|c| C::new(c[0], c[1])).collect();
        residual(&echoes.samples, &combine(&basis, &coeffs))
    };
    minimize_quadratic(f, &scale, 3).1
}

/// Minimum of the raw objective over real amplitudes with a fixed common phase.
fn profile_at_phase(basis: &[Samples], scale: &[f64], echoes: &EchoSet<f64>, phi: f64) -> f64 {
    let rot = C::from_polar(1.0, phi);
    let f = |x: &[f64]| {
        let coeffs: Vec<C> = x.iter().map(|&a| rot * a).collect();
        residual(&echoes.samples, &combine(basis, &coeffs))
    };
    minimize_quadratic(f, scale, 3).1
}

/// Minimum of the raw single-target objective over real path amplitudes and
/// one shared reflection phase: a dense phase grid, then golden-section
/// search around the best grid minima.
pub fn min_over_amplitudes_and_phase(model: &RawModel, echoes: &EchoSet<f64>, p: &Position2D<f64>) -> f64 {
    const GRID: usize = 360;
    let basis = path_basis(model, p, true);
    let scale = gain_scales(&basis, echoes.energy());
    let q = |phi: f64| profile_at_phase(&basis, &scale, echoes, phi);
    let step = std::f64::consts::TAU / GRID as f64;
    let values: Vec<f64> = (0..GRID).map(|k| q(k as f64 * step)).collect();
    let mut minima: Vec<usize> = (0..GRID)
        .filter(|&k| values[k] <= values[(k + GRID - 1) % GRID] && values[k] <= values[(k + 1) % GRID])
        .collect();
    minima.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut best = values.iter().copied().fold(f64::INFINITY, f64::min);
    for &k in minima.iter().take(4) {
        let (mut a, mut b) = ((k as f64 - 1.0) * step, (k as f64 + 1.0) * step);
        let mut c = b - inv_phi * (b - a);
        let mut d = a + inv_phi * (b - a);
        let (mut fc, mut fd) = (q(c), q(d));
        while b - a > 1e-10 {
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - inv_phi * (b - a);
                fc = q(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + inv_phi * (b - a);
                fd = q(d);
            }
        }
        best = best.min(fc.min(fd));
    }
    best
}

/// Nominal parameter vector and mean-signal map of one parameterization, in
/// the order `[x_0, y_0, …, x_{S−1}, y_{S−1}]` followed by each target's
/// nuisance block.
struct Parameterized<'a> {
    model: &'a RawModel,
    targets: usize,
    kind: crate::fisher::Parameterization,
}

impl Parameterized<'_> {
    fn per_target(&self) -> usize {
        use crate::fisher::Parameterization::*;
        match self.kind {
            Coherent => self.model.num_paths() + 1,
            NonCoherent | PerPathPhase => 2 * self.model.num_paths(),
        }
    }

    fn nominal(&self, targets: &[Target<f64>]) -> Vec<f64> {
        use crate::fisher::Parameterization::*;
        let m_r = self.model.rx.len();
        let mut theta: Vec<f64> = targets.iter().flat_map(|t| [t.position.x, t.position.y]).collect();
        for tg in targets {
            let p = &tg.position;
            let amp = |t: usize, r: usize| self.model.amplitude(t, r, p, tg.rcs);
            let pairs = (0..self.model.tx.len()).flat_map(|t| (0..m_r).map(move |r| (t, r)));
            match self.kind {
                Coherent => {
                    theta.extend(pairs.map(|(t, r)| amp(t, r)));
                    theta.push(tg.reflection_phase);
                }
                NonCoherent => {
                    for (t, r) in pairs {
                        let g = C::from_polar(amp(t, r), self.model.carrier_phase(t, r, p) + tg.reflection_phase);
                        theta.extend([g.re, g.im]);
                    }
                }
                PerPathPhase => {
                    for (t, r) in pairs {
                        let phase = self.model.carrier_phase(t, r, p) + tg.reflection_phase;
                        theta.extend([amp(t, r), phase.rem_euclid(std::f64::consts::TAU)]);
                    }
                }
            }
        }
        theta
    }

    fn mean(&self, theta: &[f64]) -> Samples {
        use crate::fisher::Parameterization::*;
        let m_r = self.model.rx.len();
        let paths = self.model.num_paths();
        let positions: Vec<Position2D<f64>> = (0..self.targets)
            .map(|s| Position2D::new(theta[2 * s], theta[2 * s + 1]))
            .collect();
        let gains: Vec<Vec<C>> = positions
            .iter()
            .enumerate()
            .map(|(s, p)| {
                let nu = &theta[2 * self.targets + s * self.per_target()..];
                (0..paths)
                    .map(|i| {
                        let (t, r) = (i / m_r, i % m_r);
                        // Reduced so that small phase steps are not lost next to ~10⁴ rad.
                        let psi = self.model.carrier_phase(t, r, p).rem_euclid(std::f64::consts::TAU);
                        match self.kind {
                            Coherent => C::from_polar(nu[i], psi + nu[paths]),
                            NonCoherent => C::new(nu[2 * i], nu[2 * i + 1]),
                            PerPathPhase => C::from_polar(nu[2 * i], nu[2 * i + 1]),
                        }
                    })
                    .collect()
            })
            .collect();
        self.model.mean(&positions, &gains)
    }
}

/// Fisher information from central differences of the raw mean signal.
///
/// Steps: `pos_step` meters for coordinates, `1e-6` radians for phases and
/// `1e-6` relative for amplitudes and gain components.
pub fn finite_difference_fim(
    scenario: &Scenario<f64>,
    frame: &TransmitFrame<f64>,
    targets: &[Target<f64>],
    kind: crate::fisher::Parameterization,
    pos_step: f64,
) -> DMatrix<f64> {
    use crate::fisher::Parameterization::*;
    let model = RawModel::new(scenario, frame);
    let param = Parameterized {
        model: &model,
        targets: targets.len(),
        kind,
    };
    let theta = param.nominal(targets);
    let dim = theta.len();
    let per = param.per_target();
    let s_count = targets.len();
    let step = |i: usize| -> f64 {
        if i < 2 * s_count {
            return pos_step;
        }
        let local = (i - 2 * s_count) % per;
        let is_phase = match kind {
            Coherent => local == per - 1,
            PerPathPhase => local % 2 == 1,
            NonCoherent => false,
        };
        if is_phase {
            1e-6
        } else {
            1e-6 * theta[i].abs().max(f64::MIN_POSITIVE)
        }
    };
    let columns: Vec<Vec<C>> = (0..dim)
        .map(|i| {
            let h = step(i);
            let mut plus = theta.clone();
            let mut minus = theta.clone();
            plus[i] += h;
            minus[i] -= h;
            let (mp, mm) = (param.mean(&plus), param.mean(&minus));
            mp.iter()
                .flatten()
                .zip(mm.iter().flatten())
                .flat_map(|(a, b)| (a - b).iter().map(|z| z / (2.0 * h)).collect::<Vec<_>>())
                .collect()
        })
        .collect();
    let scale = 2.0 / scenario.sensing_noise_power;
    DMatrix::from_fn(dim, dim, |a, b| {
        columns[a].iter().zip(&columns[b]).map(|(x, y)| (x.conj() * y).re).sum::<f64>() * scale
    })
}

/// Sum-SE surrogate written out directly:
/// `Σ_k log₂(1 + b_k² / (Σ_{i≠k} b_i² + σ̃²))` with `b_k = Σ_{m∈S} β_{mk}`.
pub fn surrogate(gains: &[Vec<f64>], set: &[usize], noise: f64) -> f64 {
    let k_count = gains[0].len();
    let b: Vec<f64> = (0..k_count).map(|k| set.iter().map(|&m| gains[m][k]).sum()).collect();
    (0..k_count)
        .map(|k| {
            let interference: f64 = (0..k_count).filter(|&i| i != k).map(|i| b[i] * b[i]).sum();
            (1.0 + b[k] * b[k] / (interference + noise)).log2()
        })
        .sum()
}

/// Replays a greedy trace by scoring every extension of the set chosen so far
/// and checking the recorded pick is a maximizer (first index among ties) and
/// the recorded candidate scores agree to `tol`.
pub fn replay_greedy(gains: &[Vec<f64>], noise: f64, trace: &[GreedyStep<f64>], tol: f64) -> Result<(), String> {
    let m = gains.len();
    let mut chosen: Vec<usize> = Vec::new();
    for (step, rec) in trace.iter().enumerate() {
        let scored: Vec<(usize, f64)> = (0..m)
            .filter(|c| !chosen.contains(c))
            .map(|c| {
                let mut set = chosen.clone();
                set.push(c);
                (c, surrogate(gains, &set, noise))
            })
            .collect();
        let best = scored.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
        let expected = scored.iter().find(|s| s.1 == best).map(|s| s.0).expect("candidates remain");
        if rec.chosen != expected {
            return Err(format!("step {step}: picked {} but exhaustive replay picks {expected}", rec.chosen));
        }
        if rec.candidates.len() != scored.len() {
            return Err(format!("step {step}: {} candidates recorded, {} possible", rec.candidates.len(), scored.len()));
        }
        for (&(c, v), &(c2, v2)) in rec.candidates.iter().zip(&scored) {
            if c != c2 || (v - v2).abs() > tol * v2.abs().max(1.0) {
                return Err(format!("step {step}: candidate {c} scored {v}, replay gives {v2}"));
            }
        }
        chosen.push(rec.chosen);
    }
    Ok(())
}
