//! Transmit/receive mode assignment for half-duplex APs.
//!
//! Two strategies: a communication-centric greedy maximization of a
//! large-scale sum-SE surrogate, and a sensing-centric farthest-point
//! placement of receivers. Ties are always broken towards the lowest AP index.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Position2D;
use crate::scalar::{lit, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionStrategy {
    CommCentric,
    SensingCentric,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeAssignment {
    /// Transmit AP indices, ascending.
    pub transmit_set: Vec<usize>,
    /// Receive AP indices, ascending.
    pub receive_set: Vec<usize>,
    pub strategy: SelectionStrategy,
}

impl ModeAssignment {
    /// Builds the partition from a transmit set, receivers being the complement.
    pub fn from_transmitters(num_aps: usize, mut transmit: Vec<usize>, strategy: SelectionStrategy) -> Self {
        transmit.sort_unstable();
        let receive_set = (0..num_aps).filter(|i| !transmit.contains(i)).collect();
        Self {
            transmit_set: transmit,
            receive_set,
            strategy,
        }
    }

    pub fn from_receivers(num_aps: usize, mut receive: Vec<usize>, strategy: SelectionStrategy) -> Self {
        receive.sort_unstable();
        let transmit_set = (0..num_aps).filter(|i| !receive.contains(i)).collect();
        Self {
            transmit_set,
            receive_set: receive,
            strategy,
        }
    }

    /// Checks that the sets partition `0..num_aps` with both sides non-empty.
    pub fn validate(&self, num_aps: usize) -> Result<()> {
        let mut seen = vec![false; num_aps];
        for &i in self.transmit_set.iter().chain(&self.receive_set) {
            if i >= num_aps || seen[i] {
                return Err(Error::Config(format!("AP {i} missing or assigned twice")));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Config("mode assignment does not cover every AP".into()));
        }
        if self.transmit_set.is_empty() || self.receive_set.is_empty() {
            return Err(Error::Config("need at least one transmit and one receive AP".into()));
        }
        Ok(())
    }
}

/// Large-scale surrogate sum SE of a transmit set.
///
/// `gains[m][k]` holds `β_{m,k}`; UE `k` sees `β_sum,k(T)² / (Σ_{i≠k} β_sum,i(T)² + σ̃²)`.
pub fn surrogate_sum_se<T: Scalar>(gains: &[Vec<T>], transmit: &[usize], effective_noise: T) -> T {
    let k_ues = gains.first().map_or(0, |row| row.len());
    let sums: Vec<T> = (0..k_ues)
        .map(|k| transmit.iter().fold(T::zero(), |a, &m| a + gains[m][k]))
        .collect();
    let squares: Vec<T> = sums.iter().map(|&b| b * b).collect();
    let total: T = squares.iter().fold(T::zero(), |a, &b| a + b);
    let two = T::one() + T::one();
    squares.iter().fold(T::zero(), |acc, &sq| {
        let sinr = sq / (total - sq + effective_noise);
        acc + (T::one() + sinr).log(two)
    })
}

/// Default effective noise of the surrogate in units of the median gain.
///
/// Gains are measured relative to their median; `σ̃²` is the physical noise
/// over the median received power `P_t · median(β)`, i.e. the inverse median
/// single-link SNR.
pub fn normalized_effective_noise<T: Scalar>(gains: &[Vec<T>], noise_power: T, tx_power: T) -> (Vec<Vec<T>>, T) {
    let mut flat: Vec<T> = gains.iter().flatten().copied().collect();
    if flat.is_empty() {
        return (gains.to_vec(), T::one());
    }
    flat.sort_by(|a, b| a.partial_cmp(b).expect("finite gains"));
    let median = if flat.len() % 2 == 1 {
        flat[flat.len() / 2]
    } else {
        (flat[flat.len() / 2 - 1] + flat[flat.len() / 2]) * lit(0.5)
    };
    let scaled = gains
        .iter()
        .map(|row| row.iter().map(|&b| b / median).collect())
        .collect();
    (scaled, noise_power / (tx_power * median))
}

/// One greedy step: candidate chosen plus the surrogate SE of every candidate tried.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedyStep<T> {
    pub chosen: usize,
    pub candidates: Vec<(usize, T)>,
}

/// Greedy communication-centric selection of `num_tx` transmitters.
///
/// Starts from the empty set (so the first pick is the best single AP) and
/// repeatedly adds the AP with the largest surrogate SE gain.
pub fn select_comm_centric<T: Scalar>(
    gains: &[Vec<T>],
    num_tx: usize,
    effective_noise: T,
) -> Result<(ModeAssignment, Vec<GreedyStep<T>>)> {
    let m = gains.len();
    if num_tx == 0 || num_tx >= m {
        return Err(Error::Config(format!(
            "transmit count {num_tx} must lie in 1..={}",
            m.saturating_sub(1)
        )));
    }
    let mut chosen: Vec<usize> = Vec::with_capacity(num_tx);
    let mut trace = Vec::with_capacity(num_tx);
    while chosen.len() < num_tx {
        let base = surrogate_sum_se(gains, &chosen, effective_noise);
        let mut candidates = Vec::with_capacity(m - chosen.len());
        let mut best: Option<(usize, T)> = None;
        for cand in 0..m {
            if chosen.contains(&cand) {
                continue;
            }
            let mut trial = chosen.clone();
            trial.push(cand);
            let se = surrogate_sum_se(gains, &trial, effective_noise);
            candidates.push((cand, se));
            let gain = se - base;
            if best.is_none_or(|(_, g)| gain > g) {
                best = Some((cand, gain));
            }
        }
        let (pick, _) = best.expect("candidates remain");
        chosen.push(pick);
        trace.push(GreedyStep {
            chosen: pick,
            candidates,
        });
    }
    Ok((
        ModeAssignment::from_transmitters(m, chosen, SelectionStrategy::CommCentric),
        trace,
    ))
}

/// Farthest-point selection of `num_rx` receivers.
///
/// Seeded with the maximum-distance AP pair. A single receiver has no spread
/// to maximize and goes to the AP nearest the centroid, which keeps the
/// worst-case bistatic range short.
pub fn select_sensing_centric<T: Scalar>(positions: &[Position2D<T>], num_rx: usize) -> Result<ModeAssignment> {
    let m = positions.len();
    if num_rx == 0 || num_rx >= m {
        return Err(Error::Config(format!(
            "receive count {num_rx} must lie in 1..={}",
            m.saturating_sub(1)
        )));
    }
    let mut selected: Vec<usize> = Vec::with_capacity(num_rx);
    if num_rx == 1 {
        let n = lit::<T>(m as f64);
        let cx = positions.iter().fold(T::zero(), |a, p| a + p.x) / n;
        let cy = positions.iter().fold(T::zero(), |a, p| a + p.y) / n;
        let centroid = Position2D::new(cx, cy);
        selected.push(argmax_first((0..m).map(|i| (i, -positions[i].distance(&centroid)))));
    } else {
        let mut best = (0, 1, T::zero());
        let mut first = true;
        for i in 0..m {
            for j in (i + 1)..m {
                let d = positions[i].distance(&positions[j]);
                if first || d > best.2 {
                    best = (i, j, d);
                    first = false;
                }
            }
        }
        selected.push(best.0);
        selected.push(best.1);
    }
    while selected.len() < num_rx {
        let next = argmax_first((0..m).filter(|i| !selected.contains(i)).map(|i| {
            let nearest = selected
                .iter()
                .map(|&r| positions[i].distance(&positions[r]))
                .fold(None, |acc: Option<T>, d| Some(acc.map_or(d, |a| a.min(d))))
                .expect("non-empty selection");
            (i, nearest)
        }));
        selected.push(next);
    }
    Ok(ModeAssignment::from_receivers(m, selected, SelectionStrategy::SensingCentric))
}

/// Index with the strictly largest score; the earliest wins ties.
fn argmax_first<T: Scalar>(scores: impl Iterator<Item = (usize, T)>) -> usize {
    let mut best: Option<(usize, T)> = None;
    for (i, s) in scores {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.expect("at least one candidate").0
}
