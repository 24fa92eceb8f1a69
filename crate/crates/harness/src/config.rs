//! Run configuration file: a `[simulation]` table describing the scenario and
//! an `[estimator]` table configuring the filter pipeline.

use std::path::Path;

use clap::ValueEnum;
use legged_mekf::mekf::{NoiseConfig, StateBlocks};
use legged_mekf::odometry::OdometryMode;
use legged_sim::SimScenario;
use nalgebra::Vector3;
use serde::Deserialize;

use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[serde(rename = "6d")]
    #[value(name = "6d")]
    SixD,
    #[default]
    Planar,
    None,
}

/// Offset of the filter's initial pose from the true one.
#[derive(Debug, Clone, Copy, PartialEq, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialError {
    /// World frame (m).
    pub position: [f64; 3],
    /// Rotation vector applied on the world side (rad).
    pub rotation: [f64; 3],
}

/// Optional overrides of diagonal covariance blocks.
#[derive(Debug, Clone, Copy, PartialEq, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CovarianceOverrides {
    pub position: Option<[f64; 3]>,
    pub orientation: Option<[f64; 3]>,
    pub linear_velocity: Option<[f64; 3]>,
    pub angular_velocity: Option<[f64; 3]>,
    pub gyro_bias: Option<[f64; 3]>,
    pub external_force: Option<[f64; 3]>,
    pub external_torque: Option<[f64; 3]>,
    pub rest_position: Option<[f64; 3]>,
    pub rest_orientation: Option<[f64; 3]>,
    pub contact_force: Option<[f64; 3]>,
    pub contact_torque: Option<[f64; 3]>,
}

impl CovarianceOverrides {
    pub fn apply(&self, b: &mut StateBlocks<f64>) {
        let set = |dst: &mut Vector3<f64>, src: Option<[f64; 3]>| {
            if let Some(v) = src {
                *dst = v.into();
            }
        };
        set(&mut b.position, self.position);
        set(&mut b.orientation, self.orientation);
        set(&mut b.linear_velocity, self.linear_velocity);
        set(&mut b.angular_velocity, self.angular_velocity);
        set(&mut b.gyro_bias, self.gyro_bias);
        set(&mut b.external_force, self.external_force);
        set(&mut b.external_torque, self.external_torque);
        set(&mut b.contact.rest_position, self.rest_position);
        set(&mut b.contact.rest_orientation, self.rest_orientation);
        set(&mut b.contact.force, self.contact_force);
        set(&mut b.contact.torque, self.contact_torque);
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub mode: Mode,
    pub ground_height: f64,
    /// Contact detection threshold as a fraction of the weight.
    pub threshold: f64,
    pub break_ratio: f64,
    /// Limbs withheld from the estimator entirely.
    pub hide_contacts: Vec<u32>,
    pub baseline: bool,
    pub initial_error: InitialError,
    pub initial_covariance: CovarianceOverrides,
    pub process_covariance: CovarianceOverrides,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Planar,
            ground_height: 0.0,
            threshold: 0.1,
            break_ratio: 0.8,
            hide_contacts: Vec::new(),
            baseline: true,
            initial_error: InitialError::default(),
            initial_covariance: CovarianceOverrides::default(),
            process_covariance: CovarianceOverrides::default(),
        }
    }
}

impl EstimatorConfig {
    pub fn odometry_mode(&self) -> OdometryMode<f64> {
        match self.mode {
            Mode::SixD => OdometryMode::SixD,
            Mode::Planar => OdometryMode::Planar {
                ground_height: self.ground_height,
            },
            Mode::None => OdometryMode::None,
        }
    }

    pub fn noise(&self) -> NoiseConfig<f64> {
        let mut n = NoiseConfig::default();
        self.initial_covariance.apply(&mut n.initial);
        self.process_covariance.apply(&mut n.process);
        n
    }
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub simulation: SimScenario,
    pub estimator: EstimatorConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            HarnessError::Config {
                line,
                message: e.message().to_string(),
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.simulation.validate()?;
        let e = &self.estimator;
        if !(e.threshold > 0.0 && e.threshold < 1.0) {
            return Err(HarnessError::Invalid("threshold must lie in (0, 1)".into()));
        }
        if !(e.break_ratio > 0.0 && e.break_ratio <= 1.0) {
            return Err(HarnessError::Invalid("break_ratio must lie in (0, 1]".into()));
        }
        e.noise().validate()?;
        Ok(())
    }
}
