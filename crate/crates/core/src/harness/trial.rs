//! One full pipeline execution: deploy, select modes, synthesize, estimate,
//! and evaluate.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{ScenarioConfig, SelectionConfig};
use super::rng::{stream_rng, Stream};
use crate::channel::CommChannels;
use crate::comm::{sum_se, SeReport};
use crate::error::{Error, Result};
use crate::estimator::{
    assign_errors, detect_targets, refine_coherent, synthesize_echoes, Confirmation, CostMap,
    EchoSet, EstimationReport, PreparedEchoes, SensingModel,
};
use crate::fisher::{fim, Parameterization};
use crate::scenario::Scenario;
use crate::selection::{
    normalized_effective_noise, select_comm_centric, select_sensing_centric, ModeAssignment, SelectionStrategy,
};
use crate::waveform::{build_frame, TransmitFrame};

/// Deployment, channels and transmit frame of one trial.
#[derive(Debug, Clone)]
pub struct PreparedTrial {
    pub scenario: Scenario<f64>,
    pub assignment: ModeAssignment,
    pub channels: CommChannels<f64>,
    pub frame: TransmitFrame<f64>,
}

/// Chooses transmit/receive APs according to the configuration.
pub fn select_modes(cfg: &ScenarioConfig, scenario: &Scenario<f64>, channels: &CommChannels<f64>) -> Result<ModeAssignment> {
    let m = scenario.aps.len();
    let m_t = m - cfg.num_receivers;
    match &cfg.selection {
        SelectionConfig::SensingCentric => select_sensing_centric(&scenario.ap_positions(), cfg.num_receivers),
        SelectionConfig::CommCentric { effective_noise } => {
            let gains = channels.large_scale();
            let power = scenario.aps.iter().map(|a| a.max_power).fold(0.0, f64::max);
            let (scaled, default_noise) = normalized_effective_noise(&gains, scenario.ue_noise_power, power);
            let noise = effective_noise.unwrap_or(default_noise);
            Ok(select_comm_centric(&scaled, m_t, noise)?.0)
        }
        SelectionConfig::Fixed { transmit } => {
            let a = ModeAssignment::from_transmitters(m, transmit.clone(), SelectionStrategy::SensingCentric);
            a.validate(m)?;
            Ok(a)
        }
    }
}

/// Deploys the scenario, selects modes and builds channels and frame.
pub fn prepare_trial(cfg: &ScenarioConfig, trial: u64) -> Result<PreparedTrial> {
    cfg.validate()?;
    let root = cfg.seed;
    let mut scenario = cfg.deploy(&mut stream_rng(root, trial, Stream::Deploy))?;
    if !cfg.echo_noise {
        scenario.sensing_noise_power = 0.0;
    }
    let channels = CommChannels::synthesize(&scenario, |ap, ue| stream_rng(root, trial, Stream::Channel { ap, ue }))?;
    let assignment = select_modes(cfg, &scenario, &channels)?;
    scenario.apply_assignment(&assignment)?;
    let frame = build_frame(
        &scenario,
        &channels,
        cfg.frame_length,
        &cfg.sensing_waveform,
        &mut stream_rng(root, trial, Stream::Frame),
    )?;
    Ok(PreparedTrial {
        scenario,
        assignment,
        channels,
        frame,
    })
}

/// Everything a trial produces that is reproducible from `(config, trial)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub config_hash: String,
    pub seed: u64,
    pub trial: u64,
    pub assignment: ModeAssignment,
    pub targets: Vec<crate::scenario::Target<f64>>,
    pub se: SeReport<f64>,
    /// Confirmed detections, one estimated target each.
    pub detections: usize,
    /// Local-maximum CFAR peaks before confirmation.
    pub cfar_peaks: usize,
    pub cfar_exceedances: usize,
    pub estimation: EstimationReport<f64>,
    pub peb_coherent: Vec<f64>,
    pub peb_noncoherent: Vec<f64>,
}

impl ExperimentRecord {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Wall-clock time per stage, seconds. Kept apart from the record so the
/// record stays byte-identical across runs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub prepare: f64,
    pub scan: f64,
    pub refine: f64,
    pub bounds: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct TrialOutput {
    pub record: ExperimentRecord,
    pub timings: Timings,
    pub cost_map: CostMap<f64>,
    pub echoes: EchoSet<f64>,
}

/// Echoes of a prepared trial, drawn from the trial's noise stream.
pub fn trial_echoes(cfg: &ScenarioConfig, trial: u64, prepared: &PreparedTrial) -> Result<EchoSet<f64>> {
    synthesize_echoes(
        &prepared.scenario,
        &prepared.frame,
        &mut stream_rng(cfg.seed, trial, Stream::Noise),
    )
}

/// Output of the estimator on one echo set.
#[derive(Debug, Clone)]
pub struct Estimate {
    pub cost_map: CostMap<f64>,
    pub confirmation: Confirmation<f64>,
    pub report: EstimationReport<f64>,
    pub scan_seconds: f64,
    pub refine_seconds: f64,
}

/// Scan, detect, confirm and refine on given echoes. Errors against the
/// scenario's targets are filled in when it has any.
pub fn estimate(cfg: &ScenarioConfig, prepared: &PreparedTrial, echoes: &EchoSet<f64>) -> Result<Estimate> {
    let model = SensingModel::new(&prepared.scenario, &prepared.frame)?;
    let prepared_echoes = PreparedEchoes::new(echoes);
    let t0 = Instant::now();
    let (map, confirmation) = detect_targets(
        &model,
        &prepared_echoes,
        &prepared.scenario.region,
        &cfg.grid,
        &cfg.cfar,
        &cfg.confirm,
    );
    let scan_seconds = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let mut report = refine_coherent(&model, &prepared_echoes, &confirmation.positions, &cfg.refine)?;
    report.coarse_hypotheses = confirmation.detections.iter().map(|d| d.position).collect();
    let truth: Vec<_> = prepared.scenario.targets.iter().map(|t| t.position).collect();
    report.position_errors = assign_errors(&report.refined_positions, &truth);
    Ok(Estimate {
        cost_map: map,
        confirmation,
        report,
        scan_seconds,
        refine_seconds: t1.elapsed().as_secs_f64(),
    })
}

/// Position error bounds of the true targets under a fixed noise power.
pub fn trial_bounds(prepared: &PreparedTrial, noise_power: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut s = prepared.scenario.clone();
    s.sensing_noise_power = noise_power;
    let targets = s.targets.clone();
    let c = fim(&s, &prepared.frame, &targets, Parameterization::Coherent)?;
    let n = fim(&s, &prepared.frame, &targets, Parameterization::NonCoherent)?;
    Ok((c.peb_per_target, n.peb_per_target))
}

/// Runs the whole pipeline for trial index `trial` under `cfg.seed`.
pub fn run_trial(cfg: &ScenarioConfig, trial: u64) -> Result<TrialOutput> {
    run_trial_inner(cfg, trial).map_err(|e| match e {
        Error::Config(_) => e,
        other => Error::Trial {
            trial,
            source: Box::new(other),
        },
    })
}

fn run_trial_inner(cfg: &ScenarioConfig, trial: u64) -> Result<TrialOutput> {
    let start = Instant::now();
    let prepared = prepare_trial(cfg, trial)?;
    let echoes = trial_echoes(cfg, trial, &prepared)?;
    let se = sum_se(&prepared.channels, &prepared.frame, prepared.scenario.ue_noise_power);
    let t_prepare = start.elapsed().as_secs_f64();

    let est = estimate(cfg, &prepared, &echoes)?;

    let t1 = Instant::now();
    let (peb_coherent, peb_noncoherent) = trial_bounds(&prepared, cfg.noise_power())?;
    let t_bounds = t1.elapsed().as_secs_f64();

    let record = ExperimentRecord {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        trial,
        assignment: prepared.assignment.clone(),
        targets: prepared.scenario.targets.clone(),
        se,
        cfar_peaks: est.cost_map.detections.len(),
        cfar_exceedances: est.cost_map.exceedances,
        detections: est.confirmation.detections.len(),
        estimation: est.report,
        peb_coherent,
        peb_noncoherent,
    };
    Ok(TrialOutput {
        record,
        timings: Timings {
            prepare: t_prepare,
            scan: est.scan_seconds,
            refine: est.refine_seconds,
            bounds: t_bounds,
            total: start.elapsed().as_secs_f64(),
        },
        cost_map: est.cost_map,
        echoes,
    })
}
