//! Simulated systems: dynamics, rasterization, physical-variable extraction,
//! energy and the variable-space baselines.
//!
//! Angles are measured from the downward vertical; a positive angle swings
//! the bob to the right of the pivot on screen. State layouts:
//!
//! | system                    | state                               |
//! |---------------------------|-------------------------------------|
//! | `circular_motion`         | θ, ω                                |
//! | `single_pendulum`         | θ, θ̇                                |
//! | `rigid_double_pendulum`   | θ₁, θ₂, θ̇₁, θ̇₂                      |
//! | `elastic_double_pendulum` | θ₁, θ₂, z, θ̇₁, θ̇₂, ż                |
//!
//! `z` is the elongation of the lower (spring) arm beyond its rest length
//! `length2`.

mod baseline;
mod dynamics;
mod energy;
mod extract;
mod render;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use baseline::{baseline_predict, BaselineKind};
pub use dynamics::{advance, observe, simulate, step_dynamics};
pub use energy::{state_energy, total_energy};
pub use extract::{
    extract_physical, extract_physical_with, physical_from_state, ExtractConfig, Rejection,
};
pub use render::{render, Frame, FramePair, Geometry};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SystemError {
    #[error("invalid system parameters: {0}")]
    InvalidSpec(String),
    #[error("state has {got} components, {system} needs {expected}")]
    StateDimension {
        system: SystemKind,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value in RK4 stage {stage}")]
    NonFinite { stage: usize },
    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<SystemError>,
    },
    #[error("{object} leaves the {size}x{size} canvas")]
    OutOfFrame { object: &'static str, size: usize },
    #[error("frame size {0} is below the minimum of 32")]
    FrameTooSmall(usize),
    #[error("physical variables lack `{0}`")]
    MissingField(&'static str),
    #[error("{0}")]
    History(String),
    #[error("unknown system `{0}`")]
    UnknownSystem(String),
}

pub type Result<T> = std::result::Result<T, SystemError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    CircularMotion,
    SinglePendulum,
    RigidDoublePendulum,
    ElasticDoublePendulum,
}

impl SystemKind {
    pub const ALL: [SystemKind; 4] = [
        SystemKind::CircularMotion,
        SystemKind::SinglePendulum,
        SystemKind::RigidDoublePendulum,
        SystemKind::ElasticDoublePendulum,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SystemKind::CircularMotion => "circular_motion",
            SystemKind::SinglePendulum => "single_pendulum",
            SystemKind::RigidDoublePendulum => "rigid_double_pendulum",
            SystemKind::ElasticDoublePendulum => "elastic_double_pendulum",
        }
    }

    pub fn true_id(self) -> usize {
        match self {
            SystemKind::CircularMotion | SystemKind::SinglePendulum => 2,
            SystemKind::RigidDoublePendulum => 4,
            SystemKind::ElasticDoublePendulum => 6,
        }
    }

    /// Column names of the state vector, in storage order.
    pub fn state_names(self) -> &'static [&'static str] {
        match self {
            SystemKind::CircularMotion => &["theta", "omega"],
            SystemKind::SinglePendulum => &["theta", "theta_dot"],
            SystemKind::RigidDoublePendulum => &["theta1", "theta2", "theta1_dot", "theta2_dot"],
            SystemKind::ElasticDoublePendulum => {
                &["theta1", "theta2", "z", "theta1_dot", "theta2_dot", "z_dot"]
            }
        }
    }

    pub fn has_second_arm(self) -> bool {
        matches!(
            self,
            SystemKind::RigidDoublePendulum | SystemKind::ElasticDoublePendulum
        )
    }
}

impl fmt::Display for SystemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SystemKind {
    type Err = SystemError;

    fn from_str(s: &str) -> Result<Self> {
        SystemKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| SystemError::UnknownSystem(s.to_string()))
    }
}

/// Initial-state distribution used by dataset generation.
///
/// Angles are uniform in `±angle_limit`, angular velocities uniform in
/// `±velocity_limit`, elastic elongation uniform in `±elongation_limit` with
/// zero elongation rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConditions {
    pub angle_limit: f64,
    #[serde(default)]
    pub velocity_limit: f64,
    #[serde(default)]
    pub elongation_limit: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub system: SystemKind,
    /// kg; the orbiting body for circular motion.
    pub mass1: f64,
    /// m; orbit radius for circular motion.
    pub length1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mass2: Option<f64>,
    /// m; rest length of the spring arm for the elastic pendulum.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length2: Option<f64>,
    /// N/m
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spring_constant: Option<f64>,
    pub gravity: f64,
    /// Integration step in seconds.
    pub sim_dt: f64,
    pub initial: InitialConditions,
}

impl SystemSpec {
    pub fn preset(kind: SystemKind) -> SystemSpec {
        let text = match kind {
            SystemKind::CircularMotion => include_str!("../../presets/circular_motion.json"),
            SystemKind::SinglePendulum => include_str!("../../presets/single_pendulum.json"),
            SystemKind::RigidDoublePendulum => {
                include_str!("../../presets/rigid_double_pendulum.json")
            }
            SystemKind::ElasticDoublePendulum => {
                include_str!("../../presets/elastic_double_pendulum.json")
            }
        };
        serde_json::from_str(text).expect("bundled preset parses")
    }

    pub fn true_id(&self) -> usize {
        self.system.true_id()
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        let mut positive = |name: &str, v: Option<f64>, required: bool| match v {
            Some(x) if !(x.is_finite() && x > 0.0) => bad.push(format!("{name} must be > 0")),
            None if required => bad.push(format!("{name} is required for {}", self.system)),
            _ => {}
        };
        positive("mass1", Some(self.mass1), true);
        positive("length1", Some(self.length1), true);
        positive("gravity", Some(self.gravity), true);
        positive("sim_dt", Some(self.sim_dt), true);
        let two = self.system.has_second_arm();
        positive("mass2", self.mass2, two);
        positive("length2", self.length2, two);
        positive(
            "spring_constant",
            self.spring_constant,
            self.system == SystemKind::ElasticDoublePendulum,
        );
        let init = &self.initial;
        for (name, v) in [
            ("initial.angle_limit", init.angle_limit),
            ("initial.velocity_limit", init.velocity_limit),
            ("initial.elongation_limit", init.elongation_limit),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                bad.push(format!("{name} must be finite and >= 0"));
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(SystemError::InvalidSpec(bad.join("; ")))
        }
    }

    pub(crate) fn m2(&self) -> f64 {
        self.mass2.unwrap_or(0.0)
    }

    pub(crate) fn l2(&self) -> f64 {
        self.length2.unwrap_or(0.0)
    }

    pub(crate) fn k(&self) -> f64 {
        self.spring_constant.unwrap_or(0.0)
    }

    pub(crate) fn check_state(&self, s: &StateVector) -> Result<()> {
        if s.0.len() != self.true_id() {
            return Err(SystemError::StateDimension {
                system: self.system,
                expected: self.true_id(),
                got: s.0.len(),
            });
        }
        Ok(())
    }
}

/// Generalized coordinates followed by their rates; see the module docs for
/// the per-system layout. Angles are kept unwrapped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateVector(pub Vec<f64>);

impl StateVector {
    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Copy with every angle wrapped to (−π, π].
    pub fn wrapped(&self, kind: SystemKind) -> StateVector {
        let mut v = self.0.clone();
        let angles = match kind {
            SystemKind::CircularMotion | SystemKind::SinglePendulum => 1,
            _ => 2,
        };
        for a in v.iter_mut().take(angles) {
            *a = wrap_angle(*a);
        }
        StateVector(v)
    }
}

/// Draws an initial state from `spec.initial`.
pub fn sample_state<R: rand::Rng + ?Sized>(spec: &SystemSpec, rng: &mut R) -> StateVector {
    let init = &spec.initial;
    let mut uniform = |limit: f64| {
        if limit > 0.0 {
            rng.random_range(-limit..=limit)
        } else {
            0.0
        }
    };
    let q = match spec.system {
        SystemKind::CircularMotion | SystemKind::SinglePendulum => {
            vec![uniform(init.angle_limit), uniform(init.velocity_limit)]
        }
        SystemKind::RigidDoublePendulum => vec![
            uniform(init.angle_limit),
            uniform(init.angle_limit),
            uniform(init.velocity_limit),
            uniform(init.velocity_limit),
        ],
        SystemKind::ElasticDoublePendulum => vec![
            uniform(init.angle_limit),
            uniform(init.angle_limit),
            uniform(init.elongation_limit),
            uniform(init.velocity_limit),
            uniform(init.velocity_limit),
            0.0,
        ],
    };
    StateVector(q)
}

/// Conventional variables in reporting units (degrees, metres, joules).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhysicalVariables {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta1_dot: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta2_dot: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z_dot: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub energy: Option<f64>,
}

/// A variable of [`PhysicalVariables`], used to select probe and error targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variable {
    Theta1,
    Theta2,
    Z,
    Theta1Dot,
    Theta2Dot,
    ZDot,
    Energy,
}

impl Variable {
    pub const ALL: [Variable; 7] = [
        Variable::Theta1,
        Variable::Theta2,
        Variable::Z,
        Variable::Theta1Dot,
        Variable::Theta2Dot,
        Variable::ZDot,
        Variable::Energy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variable::Theta1 => "theta1",
            Variable::Theta2 => "theta2",
            Variable::Z => "z",
            Variable::Theta1Dot => "theta1_dot",
            Variable::Theta2Dot => "theta2_dot",
            Variable::ZDot => "z_dot",
            Variable::Energy => "energy",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Variable::Theta1 | Variable::Theta2 => "deg",
            Variable::Theta1Dot | Variable::Theta2Dot => "deg/s",
            Variable::Z => "m",
            Variable::ZDot => "m/s",
            Variable::Energy => "J",
        }
    }

    pub fn is_angle(self) -> bool {
        matches!(self, Variable::Theta1 | Variable::Theta2)
    }

    /// Variables a system reports.
    pub fn for_system(kind: SystemKind) -> Vec<Variable> {
        match kind {
            SystemKind::CircularMotion | SystemKind::SinglePendulum => {
                vec![Variable::Theta1, Variable::Theta1Dot, Variable::Energy]
            }
            SystemKind::RigidDoublePendulum => vec![
                Variable::Theta1,
                Variable::Theta2,
                Variable::Theta1Dot,
                Variable::Theta2Dot,
                Variable::Energy,
            ],
            SystemKind::ElasticDoublePendulum => Variable::ALL.to_vec(),
        }
    }
}

impl FromStr for Variable {
    type Err = SystemError;

    fn from_str(s: &str) -> Result<Self> {
        Variable::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| SystemError::InvalidSpec(format!("unknown variable `{s}`")))
    }
}

impl PhysicalVariables {
    pub fn get(&self, v: Variable) -> Option<f64> {
        match v {
            Variable::Theta1 => self.theta1,
            Variable::Theta2 => self.theta2,
            Variable::Z => self.z,
            Variable::Theta1Dot => self.theta1_dot,
            Variable::Theta2Dot => self.theta2_dot,
            Variable::ZDot => self.z_dot,
            Variable::Energy => self.energy,
        }
    }

    pub fn slot(&mut self, v: Variable) -> &mut Option<f64> {
        match v {
            Variable::Theta1 => &mut self.theta1,
            Variable::Theta2 => &mut self.theta2,
            Variable::Z => &mut self.z,
            Variable::Theta1Dot => &mut self.theta1_dot,
            Variable::Theta2Dot => &mut self.theta2_dot,
            Variable::ZDot => &mut self.z_dot,
            Variable::Energy => &mut self.energy,
        }
    }

    /// Absolute difference per variable; angle differences are wrapped.
    pub fn abs_error(&self, truth: &PhysicalVariables, v: Variable) -> Option<f64> {
        let (a, b) = (self.get(v)?, truth.get(v)?);
        Some(if v.is_angle() {
            wrap_degrees(a - b).abs()
        } else {
            (a - b).abs()
        })
    }
}

/// Wraps to (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// Wraps to (−180, 180].
pub fn wrap_degrees(a: f64) -> f64 {
    let mut r = a.rem_euclid(360.0);
    if r > 180.0 {
        r -= 360.0;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for kind in SystemKind::ALL {
            let spec = SystemSpec::preset(kind);
            assert_eq!(spec.system, kind);
            spec.validate().unwrap();
            assert_eq!(spec.system.state_names().len(), kind.true_id());
        }
    }

    #[test]
    fn missing_second_arm_is_reported() {
        let mut spec = SystemSpec::preset(SystemKind::RigidDoublePendulum);
        spec.length2 = None;
        spec.mass1 = -1.0;
        let err = spec.validate().unwrap_err().to_string();
        assert!(err.contains("length2") && err.contains("mass1"), "{err}");
    }

    #[test]
    fn names_round_trip() {
        for kind in SystemKind::ALL {
            assert_eq!(kind.name().parse::<SystemKind>().unwrap(), kind);
        }
        assert!("triple_pendulum".parse::<SystemKind>().is_err());
    }

    #[test]
    fn wrapping() {
        use std::f64::consts::PI;
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert_eq!(wrap_degrees(190.0), -170.0);
        assert_eq!(wrap_degrees(-180.0), 180.0);
    }
}
