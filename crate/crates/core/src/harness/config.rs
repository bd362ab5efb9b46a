//! Scenario configuration (TOML) and random deployment.

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::noise_power;
use crate::error::{Error, Result};
use crate::estimator::{CfarConfig, ConfirmConfig, GridConfig, RefineConfig};
use crate::geometry::{ApMode, ApNode, ArrayGeometry, Position2D};
use crate::scalar::{db_to_linear, dbm_to_watts, wrap_two_pi, SPEED_OF_LIGHT};
use crate::scenario::{CommChannelModel, Region, Scenario, Target};
use crate::selection::SelectionStrategy;
use crate::waveform::SensingWaveform;

/// How transmit and receive APs are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SelectionConfig {
    CommCentric {
        /// Surrogate noise `σ̃²`; derived from the deployment when absent.
        #[serde(default)]
        effective_noise: Option<f64>,
    },
    SensingCentric,
    /// Explicit transmit AP indices.
    Fixed { transmit: Vec<usize> },
}

impl SelectionConfig {
    pub fn strategy(&self) -> SelectionStrategy {
        match self {
            SelectionConfig::CommCentric { .. } => SelectionStrategy::CommCentric,
            _ => SelectionStrategy::SensingCentric,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverageConfig {
    pub samples: usize,
    /// `η_cov` in meters; one tenth of the wavelength when absent.
    #[serde(default)]
    pub threshold_m: Option<f64>,
}

impl Default for CoverageConfig {
    fn default() -> Self {
        Self {
            samples: 500,
            threshold_m: None,
        }
    }
}

/// Every knob of a simulated deployment and its processing chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub region_side_m: f64,
    pub num_aps: usize,
    pub num_receivers: usize,
    pub num_elements: usize,
    pub num_ues: usize,
    pub num_targets: usize,
    pub carrier_hz: f64,
    pub bandwidth_hz: f64,
    pub temperature_k: f64,
    pub noise_figure_db: f64,
    pub tx_power_dbm: f64,
    /// Global `ρ_t`; overridden per AP by `comm_fractions`.
    pub comm_fraction: f64,
    #[serde(default)]
    pub comm_fractions: Option<Vec<f64>>,
    pub frame_length: usize,
    pub target_rcs_dbsm: f64,
    /// Minimum pairwise target distance, meters.
    pub min_target_separation_m: f64,
    /// Minimum distance between any target and any AP, meters.
    pub min_target_ap_distance_m: f64,
    /// Echo noise switch; `false` gives noiseless echoes.
    pub echo_noise: bool,
    pub selection: SelectionConfig,
    pub comm: CommChannelModel<f64>,
    pub sensing_waveform: SensingWaveform<f64>,
    pub grid: GridConfig<f64>,
    pub cfar: CfarConfig,
    #[serde(default)]
    pub confirm: ConfirmConfig,
    pub refine: RefineConfig<f64>,
    pub coverage: CoverageConfig,
    pub trials: usize,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::reference_scenario()
    }
}

impl ScenarioConfig {
    /// Twelve 8-element APs over 1 km², two 0 dBsm targets, 3.5 GHz, 100 kHz.
    pub fn reference_scenario() -> Self {
        Self {
            region_side_m: 1000.0,
            num_aps: 12,
            num_receivers: 6,
            num_elements: 8,
            num_ues: 4,
            num_targets: 2,
            carrier_hz: 3.5e9,
            bandwidth_hz: 1e5,
            temperature_k: 290.0,
            noise_figure_db: 0.0,
            tx_power_dbm: 20.0,
            comm_fraction: 0.5,
            comm_fractions: None,
            frame_length: 64,
            target_rcs_dbsm: 0.0,
            min_target_separation_m: 100.0,
            min_target_ap_distance_m: 20.0,
            echo_noise: true,
            selection: SelectionConfig::SensingCentric,
            comm: CommChannelModel::default(),
            sensing_waveform: SensingWaveform::Isotropic,
            grid: GridConfig::default(),
            cfar: CfarConfig::default(),
            confirm: ConfirmConfig::default(),
            refine: RefineConfig::default(),
            coverage: CoverageConfig::default(),
            trials: 200,
            seed: 0,
        }
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }

    pub fn coverage_threshold(&self) -> f64 {
        self.coverage.threshold_m.unwrap_or(self.wavelength() / 10.0)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.num_aps < 2 {
            return fail("need at least two APs");
        }
        if self.num_receivers == 0 || self.num_receivers >= self.num_aps {
            return Err(Error::Config(format!(
                "receive AP count {} must lie in 1..={}",
                self.num_receivers,
                self.num_aps - 1
            )));
        }
        if self.num_elements == 0 || self.frame_length == 0 {
            return fail("array size and frame length must be positive");
        }
        if !(self.region_side_m > 0.0 && self.carrier_hz > 0.0 && self.bandwidth_hz > 0.0 && self.temperature_k > 0.0) {
            return fail("region, carrier, bandwidth and temperature must be positive");
        }
        if !(0.0..=1.0).contains(&self.comm_fraction) {
            return fail("comm_fraction must lie in [0, 1]");
        }
        if let Some(f) = &self.comm_fractions {
            if f.len() != self.num_aps || f.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return fail("comm_fractions needs one value in [0, 1] per AP");
            }
        }
        if let SelectionConfig::Fixed { transmit } = &self.selection {
            if transmit.len() != self.num_aps - self.num_receivers {
                return fail("fixed transmit set size must equal num_aps - num_receivers");
            }
            if transmit.iter().any(|&t| t >= self.num_aps) {
                return fail("fixed transmit index out of range");
            }
        }
        if !(self.grid.spacing > 0.0) {
            return fail("grid spacing must be positive");
        }
        if !(self.cfar.false_alarm_probability > 0.0 && self.cfar.false_alarm_probability < 1.0) {
            return fail("false-alarm probability must lie in (0, 1)");
        }
        if self.cfar.training_cells == 0 {
            return fail("CFAR needs training cells");
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// SHA-256 of the canonical TOML rendering, hex encoded.
    pub fn hash(&self) -> String {
        let text = toml::to_string(self).unwrap_or_default();
        Sha256::digest(text.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn noise_power(&self) -> f64 {
        noise_power(self.bandwidth_hz, self.temperature_k, self.noise_figure_db)
    }

    fn comm_fraction_of(&self, ap: usize) -> f64 {
        self.comm_fractions.as_ref().map_or(self.comm_fraction, |f| f[ap])
    }

    /// Draws AP, UE and target positions and phases.
    ///
    /// Every AP starts in receive mode; mode selection happens afterwards.
    /// Boresights point at the region center.
    pub fn deploy<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Scenario<f64>> {
        self.validate()?;
        let region = Region::square(self.region_side_m);
        let uniform = |rng: &mut R| {
            Position2D::new(
                rng.random_range(region.x_min..region.x_max),
                rng.random_range(region.y_min..region.y_max),
            )
        };
        let array = ArrayGeometry::half_wavelength(self.num_elements, self.carrier_hz)?;
        let center = region.center();
        let power = dbm_to_watts(self.tx_power_dbm);
        let mut aps = Vec::with_capacity(self.num_aps);
        for m in 0..self.num_aps {
            let position = uniform(rng);
            let boresight = if position.distance(&center) > 0.0 {
                wrap_two_pi((center.y - position.y).atan2(center.x - position.x))
            } else {
                0.0
            };
            aps.push(ApNode {
                position,
                boresight,
                array,
                max_power: power,
                comm_power_fraction: self.comm_fraction_of(m),
                mode: ApMode::Receive,
            });
        }
        let ues: Vec<Position2D<f64>> = (0..self.num_ues).map(|_| uniform(rng)).collect();
        let ue_phase_offsets = (0..self.num_ues)
            .map(|_| rng.random_range(-std::f64::consts::PI..std::f64::consts::PI))
            .collect();
        let mut targets: Vec<Target<f64>> = Vec::with_capacity(self.num_targets);
        let mut attempts = 0usize;
        while targets.len() < self.num_targets {
            attempts += 1;
            if attempts > 100_000 {
                return Err(Error::Config("could not place targets with the requested separations".into()));
            }
            let p = uniform(rng);
            let phase = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let clear_targets = targets
                .iter()
                .all(|t| t.position.distance(&p) >= self.min_target_separation_m);
            let clear_aps = aps
                .iter()
                .all(|a| a.position.distance(&p) >= self.min_target_ap_distance_m);
            if clear_targets && clear_aps {
                targets.push(Target {
                    position: p,
                    rcs: db_to_linear(self.target_rcs_dbsm),
                    reflection_phase: wrap_two_pi(phase),
                });
            }
        }
        let noise = self.noise_power();
        Ok(Scenario {
            region,
            aps,
            ues,
            ue_phase_offsets,
            targets,
            carrier_hz: self.carrier_hz,
            bandwidth_hz: self.bandwidth_hz,
            sensing_noise_power: noise,
            ue_noise_power: noise,
            comm: self.comm,
        })
    }
}
