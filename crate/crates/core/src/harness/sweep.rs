//! One-axis parameter sweeps over seeded trials, reduced to tidy tables.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ScenarioConfig;
use super::rng::{stream_rng, Stream};
use super::trial::{estimate, prepare_trial, trial_bounds, trial_echoes, PreparedTrial};
use crate::comm::sum_se;
use crate::error::{Error, Result};
use crate::fisher::{coverage, CoverageMap, CoverageSampler, Parameterization};
use crate::scalar::db_to_linear;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// Number of receive APs `M_r`.
    Receivers,
    /// Global communication power fraction `ρ_t`.
    CommFraction,
    /// Per-AP transmit power, dBm.
    TxPower,
    /// Elements per AP array `N`.
    Elements,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Receivers => "m_r",
            Axis::CommFraction => "rho",
            Axis::TxPower => "p_t_dbm",
            Axis::Elements => "n",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "m_r" | "receivers" => Ok(Axis::Receivers),
            "rho" | "comm_fraction" => Ok(Axis::CommFraction),
            "p_t" | "p_t_dbm" | "tx_power" => Ok(Axis::TxPower),
            "n" | "elements" => Ok(Axis::Elements),
            _ => Err(Error::Config(format!("unknown sweep axis `{s}`"))),
        }
    }

    /// Copy of `cfg` with this axis set to `value`.
    pub fn apply(self, cfg: &ScenarioConfig, value: f64) -> Result<ScenarioConfig> {
        let mut out = cfg.clone();
        let count = || {
            if value >= 0.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(Error::Config(format!("axis {} needs a whole number, got {value}", self.name())))
            }
        };
        match self {
            Axis::Receivers => out.num_receivers = count()?,
            Axis::CommFraction => {
                out.comm_fraction = value;
                out.comm_fractions = None;
            }
            Axis::TxPower => out.tx_power_dbm = value,
            Axis::Elements => out.num_elements = count()?,
        }
        out.validate()?;
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Downlink sum SE, bits/s/Hz; one sample per trial.
    SumSe,
    /// Coherent PEB, meters; one sample per target.
    PebCoherent,
    /// Non-coherent PEB, meters; one sample per target.
    PebNoncoherent,
    /// Sensing coverage `f_SC(η_cov)`; one sample per trial.
    Coverage,
    /// Refined position error, meters; one sample per target, infinite
    /// when the target was missed. Runs the full estimator.
    PositionError,
    /// Confirmed detections per trial.
    Detections,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::SumSe => "sum_se",
            Metric::PebCoherent => "peb_coherent",
            Metric::PebNoncoherent => "peb_noncoherent",
            Metric::Coverage => "coverage",
            Metric::PositionError => "position_error",
            Metric::Detections => "detections",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        [
            Metric::SumSe,
            Metric::PebCoherent,
            Metric::PebNoncoherent,
            Metric::Coverage,
            Metric::PositionError,
            Metric::Detections,
        ]
        .into_iter()
        .find(|m| m.name() == s)
        .ok_or_else(|| Error::Config(format!("unknown metric `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axis: Axis,
    pub values: Vec<f64>,
    pub trials: usize,
    pub metrics: Vec<Metric>,
}

/// Summary of one metric at one axis value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: f64,
    pub selection: String,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub q10: f64,
    pub q90: f64,
    /// Normal-approximation 95% interval of the mean.
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Raw samples of one trial, one vector per requested metric.
pub fn trial_metrics(cfg: &ScenarioConfig, trial: u64, metrics: &[Metric]) -> Result<Vec<Vec<f64>>> {
    let prepared = prepare_trial(cfg, trial)?;
    let needs_bounds = metrics
        .iter()
        .any(|m| matches!(m, Metric::PebCoherent | Metric::PebNoncoherent));
    let bounds = if needs_bounds {
        Some(trial_bounds(&prepared, cfg.noise_power())?)
    } else {
        None
    };
    let needs_estimate = metrics
        .iter()
        .any(|m| matches!(m, Metric::PositionError | Metric::Detections));
    let est = if needs_estimate {
        let echoes = trial_echoes(cfg, trial, &prepared)?;
        Some(estimate(cfg, &prepared, &echoes)?)
    } else {
        None
    };
    metrics
        .iter()
        .map(|m| {
            Ok(match m {
                Metric::SumSe => vec![sum_se(&prepared.channels, &prepared.frame, prepared.scenario.ue_noise_power).sum_se],
                Metric::PebCoherent => bounds.as_ref().map(|b| b.0.clone()).unwrap_or_default(),
                Metric::PebNoncoherent => bounds.as_ref().map(|b| b.1.clone()).unwrap_or_default(),
                Metric::Coverage => vec![trial_coverage(cfg, trial, &prepared)?],
                Metric::PositionError => est
                    .as_ref()
                    .map(|e| {
                        e.report
                            .position_errors
                            .iter()
                            .map(|v| v.unwrap_or(f64::INFINITY))
                            .collect()
                    })
                    .unwrap_or_default(),
                Metric::Detections => vec![est.as_ref().map_or(0.0, |e| e.confirmation.detections.len() as f64)],
            })
        })
        .collect()
}

/// Coherent coverage map of one prepared trial at the configured threshold.
pub fn trial_coverage_map(cfg: &ScenarioConfig, trial: u64, prepared: &PreparedTrial) -> Result<CoverageMap<f64>> {
    let sampler = CoverageSampler {
        samples: cfg.coverage.samples,
        rcs: db_to_linear(cfg.target_rcs_dbsm),
    };
    let mut scenario = prepared.scenario.clone();
    scenario.sensing_noise_power = cfg.noise_power();
    coverage(
        &scenario,
        &prepared.frame,
        cfg.coverage_threshold(),
        &sampler,
        Parameterization::Coherent,
        &mut stream_rng(cfg.seed, trial, Stream::Coverage),
    )
}

/// `f_SC` of one prepared trial at the configured threshold.
pub fn trial_coverage(cfg: &ScenarioConfig, trial: u64, prepared: &PreparedTrial) -> Result<f64> {
    Ok(trial_coverage_map(cfg, trial, prepared)?.coverage)
}

/// Runs `f` for trials `0..trials` on a pool of `workers` threads and
/// returns the results in trial order.
pub fn run_trials<R: Send>(
    trials: usize,
    workers: usize,
    f: impl Fn(u64) -> Result<R> + Sync + Send,
) -> Result<Vec<R>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| (0..trials as u64).into_par_iter().map(&f).collect())
}

/// Samples `[value][metric]`, concatenated over trials in trial order.
pub fn sweep_samples(cfg: &ScenarioConfig, spec: &SweepSpec, workers: usize) -> Result<Vec<Vec<Vec<f64>>>> {
    let mut out = Vec::with_capacity(spec.values.len());
    for &value in &spec.values {
        let point = spec.axis.apply(cfg, value)?;
        let per_trial = run_trials(spec.trials, workers, |t| trial_metrics(&point, t, &spec.metrics))?;
        let mut merged = vec![Vec::new(); spec.metrics.len()];
        for trial in per_trial {
            for (acc, samples) in merged.iter_mut().zip(trial) {
                acc.extend(samples);
            }
        }
        out.push(merged);
    }
    Ok(out)
}

/// Sweep reduced to one row per axis value and metric.
pub fn sweep(cfg: &ScenarioConfig, spec: &SweepSpec, workers: usize) -> Result<Vec<SweepRow>> {
    let samples = sweep_samples(cfg, spec, workers)?;
    let selection = selection_label(cfg);
    let mut rows = Vec::new();
    for (&value, per_metric) in spec.values.iter().zip(&samples) {
        for (metric, values) in spec.metrics.iter().zip(per_metric) {
            rows.push(summarize(spec.axis.name(), value, &selection, metric.name(), values));
        }
    }
    Ok(rows)
}

pub fn selection_label(cfg: &ScenarioConfig) -> String {
    match &cfg.selection {
        super::config::SelectionConfig::CommCentric { .. } => "comm_centric".into(),
        super::config::SelectionConfig::SensingCentric => "sensing_centric".into(),
        super::config::SelectionConfig::Fixed { .. } => "fixed".into(),
    }
}

/// Mean, spread, quantiles and the 95% interval of the mean.
pub fn summarize(axis: &str, value: f64, selection: &str, metric: &str, samples: &[f64]) -> SweepRow {
    let n = samples.len();
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = if n > 0 { samples.iter().sum::<f64>() / n as f64 } else { f64::NAN };
    let std = if n > 1 {
        (samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let half = if n > 0 { 1.96 * std / (n as f64).sqrt() } else { f64::NAN };
    SweepRow {
        axis: axis.to_string(),
        value,
        selection: selection.to_string(),
        metric: metric.to_string(),
        n,
        mean,
        std,
        median: quantile(&sorted, 0.5),
        q10: quantile(&sorted, 0.1),
        q90: quantile(&sorted, 0.9),
        ci_low: mean - half,
        ci_high: mean + half,
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            let w = pos - lo as f64;
            if w == 0.0 {
                sorted[lo]
            } else {
                sorted[lo] + w * (sorted[hi] - sorted[lo])
            }
        }
    }
}
