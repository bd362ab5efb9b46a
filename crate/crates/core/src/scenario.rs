//! A realized deployment: APs, UEs, targets and physical constants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ApMode, ApNode, Position2D};
use crate::scalar::{lit, Scalar, SPEED_OF_LIGHT};
use crate::selection::ModeAssignment;

/// Axis-aligned rectangular deployment region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region<T> {
    pub x_min: T,
    pub x_max: T,
    pub y_min: T,
    pub y_max: T,
}

impl<T: Scalar> Region<T> {
    pub fn square(side: T) -> Self {
        Self {
            x_min: T::zero(),
            x_max: side,
            y_min: T::zero(),
            y_max: side,
        }
    }

    pub fn center(&self) -> Position2D<T> {
        let half = lit::<T>(0.5);
        Position2D::new(
            (self.x_min + self.x_max) * half,
            (self.y_min + self.y_max) * half,
        )
    }

    pub fn contains(&self, p: &Position2D<T>) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }

    pub fn width(&self) -> T {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> T {
        self.y_max - self.y_min
    }
}

/// Point target with isotropic reflectivity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Target<T> {
    pub position: Position2D<T>,
    /// Radar cross section, m² (linear).
    pub rcs: T,
    /// Scattering phase shared by every AP pair, radians.
    pub reflection_phase: T,
}

/// Log-distance path loss `β(d)[dB] = intercept − slope·log10(d / 1 m)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathLossModel<T> {
    pub intercept_db: T,
    pub slope_db_per_decade: T,
}

impl<T: Scalar> PathLossModel<T> {
    /// Large-scale power gain at `distance` meters.
    pub fn gain(&self, distance: T) -> T {
        let d = distance.max(T::one());
        let db = self.intercept_db - self.slope_db_per_decade * d.log10();
        crate::scalar::db_to_linear(db)
    }
}

impl<T: Scalar> Default for PathLossModel<T> {
    fn default() -> Self {
        Self {
            intercept_db: lit(-30.5),
            slope_db_per_decade: lit(36.7),
        }
    }
}

/// Spatial correlation of the stochastic NLoS component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorrelationModel<T> {
    /// Scaled identity.
    Uncorrelated,
    /// Gaussian local-scattering model around the LoS direction.
    LocalScattering { angular_std_rad: T },
}

/// Parameters of the AP → UE channel model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommChannelModel<T> {
    pub path_loss: PathLossModel<T>,
    /// Ratio of LoS to NLoS power, dB.
    pub rician_factor_db: T,
    pub correlation: CorrelationModel<T>,
}

impl<T: Scalar> Default for CommChannelModel<T> {
    fn default() -> Self {
        Self {
            path_loss: PathLossModel::default(),
            rician_factor_db: lit(10.0),
            correlation: CorrelationModel::Uncorrelated,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario<T> {
    pub region: Region<T>,
    pub aps: Vec<ApNode<T>>,
    pub ues: Vec<Position2D<T>>,
    /// Oscillator phase offset of each UE relative to the AP reference.
    pub ue_phase_offsets: Vec<T>,
    pub targets: Vec<Target<T>>,
    pub carrier_hz: T,
    pub bandwidth_hz: T,
    /// Per-element noise power at the receive APs, watts.
    pub sensing_noise_power: T,
    /// Noise power at each UE, watts.
    pub ue_noise_power: T,
    pub comm: CommChannelModel<T>,
}

impl<T: Scalar> Scenario<T> {
    pub fn wavelength(&self) -> T {
        lit::<T>(SPEED_OF_LIGHT) / self.carrier_hz
    }

    /// Indices of transmit-mode APs in ascending order.
    pub fn transmitters(&self) -> Vec<usize> {
        self.indices_with(ApMode::Transmit)
    }

    /// Indices of receive-mode APs in ascending order.
    pub fn receivers(&self) -> Vec<usize> {
        self.indices_with(ApMode::Receive)
    }

    fn indices_with(&self, mode: ApMode) -> Vec<usize> {
        self.aps
            .iter()
            .enumerate()
            .filter(|(_, ap)| ap.mode == mode)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn apply_assignment(&mut self, assignment: &ModeAssignment) -> Result<()> {
        assignment.validate(self.aps.len())?;
        for (i, ap) in self.aps.iter_mut().enumerate() {
            ap.mode = if assignment.transmit_set.contains(&i) {
                ApMode::Transmit
            } else {
                ApMode::Receive
            };
        }
        Ok(())
    }

    pub fn ap_positions(&self) -> Vec<Position2D<T>> {
        self.aps.iter().map(|ap| ap.position).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.aps.is_empty() {
            return Err(Error::Config("scenario has no APs".into()));
        }
        for ap in &self.aps {
            ap.validate()?;
        }
        if self.ue_phase_offsets.len() != self.ues.len() {
            return Err(Error::Config("one phase offset per UE required".into()));
        }
        if !(self.carrier_hz > T::zero() && self.bandwidth_hz > T::zero()) {
            return Err(Error::Config("carrier and bandwidth must be positive".into()));
        }
        if !(self.sensing_noise_power >= T::zero() && self.ue_noise_power >= T::zero()) {
            return Err(Error::Config("noise powers must be non-negative".into()));
        }
        if self.targets.iter().any(|t| !(t.rcs > T::zero())) {
            return Err(Error::Config("target RCS must be positive".into()));
        }
        Ok(())
    }

    /// Copy of the scenario with every AP budget multiplied by `factor`.
    pub fn with_power_scaled(&self, factor: T) -> Self {
        let mut s = self.clone();
        for ap in &mut s.aps {
            ap.max_power *= factor;
        }
        s
    }
}
