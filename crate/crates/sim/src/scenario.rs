//! Scenario description, deserializable from a config file.

use legged_mekf::contact::StiffnessDamping;
use nalgebra::Vector3;
use serde::Deserialize;

use crate::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stiffness {
    pub kpt: [f64; 3],
    pub kdt: [f64; 3],
    pub kpr: [f64; 3],
    pub kdr: [f64; 3],
}

impl Stiffness {
    pub fn hrp5p() -> Self {
        Self::from(&StiffnessDamping::hrp5p())
    }

    pub fn hrp2kai() -> Self {
        Self::from(&StiffnessDamping::hrp2kai())
    }

    pub fn to_model(&self) -> StiffnessDamping<f64> {
        StiffnessDamping {
            kpt: self.kpt.into(),
            kdt: self.kdt.into(),
            kpr: self.kpr.into(),
            kdr: self.kdr.into(),
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let s = |v: [f64; 3]| v.map(|x| x * factor);
        Self {
            kpt: s(self.kpt),
            kdt: s(self.kdt),
            kpr: s(self.kpr),
            kdr: s(self.kdr),
        }
    }
}

impl From<&StiffnessDamping<f64>> for Stiffness {
    fn from(k: &StiffnessDamping<f64>) -> Self {
        Self {
            kpt: k.kpt.into(),
            kdt: k.kdt.into(),
            kpr: k.kpr.into(),
            kdr: k.kdr.into(),
        }
    }
}

impl Default for Stiffness {
    fn default() -> Self {
        Self::hrp5p()
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WalkParams {
    pub steps: usize,
    /// Per-step advance of the walking path, in the path frame.
    pub step_length: f64,
    pub lateral: f64,
    /// Per-step yaw increment (rad).
    pub turn: f64,
    pub double_support: f64,
    pub single_support: f64,
    pub clearance: f64,
}

impl Default for WalkParams {
    fn default() -> Self {
        Self {
            steps: 36,
            step_length: 0.1,
            lateral: 0.0,
            turn: 0.0,
            double_support: 0.8,
            single_support: 0.8,
            clearance: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HandParams {
    /// Hand contact position relative to the centroid at the reference pose.
    pub position: [f64; 3],
    /// Fraction of the weight carried by the hand at equilibrium.
    pub load_fraction: f64,
}

impl Default for HandParams {
    fn default() -> Self {
        Self {
            position: [0.35, -0.3, -0.3],
            load_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
#[derive(Default)]
pub enum Gait {
    #[default]
    Stand,
    Walk(WalkParams),
    Multicontact(HandParams),
    Freefall,
}

/// Standard deviations of the additive white sensor noise.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorNoise {
    pub gyro: f64,
    pub accelerometer: f64,
    pub force: f64,
    pub torque: f64,
}

impl SensorNoise {
    pub fn none() -> Self {
        Self {
            gyro: 0.0,
            accelerometer: 0.0,
            force: 0.0,
            torque: 0.0,
        }
    }
}

impl Default for SensorNoise {
    fn default() -> Self {
        Self {
            gyro: 1e-3,
            accelerometer: 1e-2,
            force: 4.5,
            torque: 1.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GyroBias {
    pub offset: [f64; 3],
    /// Standard deviation of the per-step random walk increment.
    pub random_walk: f64,
}

/// Random slippage of every stance foot during single support.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Slippage {
    pub enabled: bool,
    pub min: f64,
    pub max: f64,
    /// Duration over which the anchor slides; 0 for a jump.
    pub ramp: f64,
}

impl Default for Slippage {
    fn default() -> Self {
        Self {
            enabled: false,
            min: 0.002,
            max: 0.005,
            ramp: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlipEvent {
    pub limb: u32,
    pub time: f64,
    pub displacement: [f64; 3],
}

/// Wrench applied at the centroid, world frame, over `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Perturbation {
    pub start: f64,
    pub end: f64,
    #[serde(default)]
    pub force: [f64; 3],
    #[serde(default)]
    pub torque: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimScenario {
    pub mass: f64,
    /// Principal inertia at the centroid, body frame.
    pub inertia: [f64; 3],
    pub com_height: f64,
    pub foot_half_width: f64,
    pub imu_position: [f64; 3],
    pub stiffness: Stiffness,
    /// Truth stiffness is `stiffness` scaled by this factor.
    pub truth_stiffness_factor: f64,
    /// Ankle feedback gain on the body orientation error; negative values stiffen.
    pub stabilizer_gain: f64,
    /// Derivative gain (s) of the ankle feedback.
    pub stabilizer_damping: f64,
    pub gait: Gait,
    pub noise: SensorNoise,
    pub gyro_bias: GyroBias,
    pub slippage: Slippage,
    pub slips: Vec<SlipEvent>,
    pub perturbations: Vec<Perturbation>,
    pub seed: u64,
    pub dt: f64,
    pub duration: f64,
    /// Time simulated before `t = 0` and not recorded.
    pub settle: f64,
    pub substeps: usize,
}

impl Default for SimScenario {
    fn default() -> Self {
        Self {
            mass: 100.0,
            inertia: [10.0, 10.0, 5.0],
            com_height: 0.8,
            foot_half_width: 0.1,
            imu_position: [0.0, 0.0, 0.3],
            stiffness: Stiffness::default(),
            truth_stiffness_factor: 1.0,
            stabilizer_gain: -10.0,
            stabilizer_damping: 1.0,
            gait: Gait::Stand,
            noise: SensorNoise::default(),
            gyro_bias: GyroBias::default(),
            slippage: Slippage::default(),
            slips: Vec::new(),
            perturbations: Vec::new(),
            seed: 0,
            dt: 0.005,
            duration: 10.0,
            settle: 10.0,
            substeps: 10,
        }
    }
}

impl SimScenario {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidScenario(m.to_string()));
        if !(self.dt > 0.0) {
            return bad("dt must be positive");
        }
        if !(self.duration >= self.dt) {
            return bad("duration must be at least one time step");
        }
        if !(self.mass > 0.0) || self.inertia.iter().any(|i| !(*i > 0.0)) {
            return bad("mass and inertia must be positive");
        }
        if self.substeps < 10 {
            return bad("at least 10 integration substeps per time step are required");
        }
        if !(self.settle >= 0.0) || !(self.truth_stiffness_factor > 0.0) {
            return bad("settle must be non-negative and the stiffness factor positive");
        }
        if self.stiffness.to_model().validate().is_err() {
            return bad("stiffness entries must be non-negative");
        }
        let n = &self.noise;
        if [n.gyro, n.accelerometer, n.force, n.torque, self.gyro_bias.random_walk]
            .iter()
            .any(|s| !(*s >= 0.0))
        {
            return bad("noise standard deviations must be non-negative");
        }
        let s = &self.slippage;
        if s.enabled && !(0.0 <= s.min && s.min <= s.max && s.ramp >= 0.0) {
            return bad("slippage bounds must satisfy 0 <= min <= max and ramp >= 0");
        }
        if let Gait::Multicontact(h) = &self.gait {
            if !(0.0..1.0).contains(&h.load_fraction) {
                return bad("hand load fraction must lie in [0, 1)");
            }
        }
        if let Gait::Walk(w) = &self.gait {
            if !(w.double_support > 0.0 && w.single_support > 0.0 && w.clearance > 0.0) {
                return bad("walk phases and clearance must be positive");
            }
        }
        Ok(())
    }

    pub fn inertia_matrix(&self) -> nalgebra::Matrix3<f64> {
        nalgebra::Matrix3::from_diagonal(&Vector3::from(self.inertia))
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }
}
