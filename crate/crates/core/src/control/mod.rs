//! Headless shared control of a 2-D kinematic point.
//!
//! Each tick the executed command is `u = ω·u_h + (1 − ω)·u_r`, where `ω` is the
//! human share. Before the checkpoint the human has full control. Once the
//! plant crosses the checkpoint the captured position conditions the model,
//! and a pursuit controller follows the predicted remainder.

mod experiment;
mod operator;
mod trial;

use std::fmt;
use std::ops::{Add, Mul, Sub};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::CesnError;

pub use experiment::{
    experiment, reference_contexts, ArmSummary, ExperimentConfig, ExperimentReport, ReferenceSetup,
    TrialContext, TrialSummary,
};
pub use operator::{Observation, Operator, OperatorKind, OperatorModel, ScriptedOperator};
pub use trial::{effort, run_trial, RobotParams, StepRecord, TrialLog, TrialRunner, TrialSetup};

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("omega {0} is outside [0, 1]")]
    OmegaOutOfRange(f64),
    #[error("trial log is empty")]
    EmptyLog,
    #[error("unknown policy `{0}` (expected fixed or adaptive)")]
    UnknownPolicy(String),
    #[error("unknown operator kind `{0}`")]
    UnknownOperator(String),
    #[error("invalid setting: {0}")]
    InvalidSetting(String),
    #[error(transparent)]
    Model(#[from] CesnError),
    #[error(transparent)]
    Numerics(#[from] crate::numerics::NumericsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Rescales onto the unit disk if longer than 1.
    pub fn clamp_unit(self) -> Vec2 {
        let n = self.norm();
        if n > 1.0 {
            self * (1.0 / n)
        } else {
            self
        }
    }

    pub fn to_vec(self) -> Vec<f64> {
        vec![self.x, self.y]
    }
}

impl From<[f64; 2]> for Vec2 {
    fn from(a: [f64; 2]) -> Self {
        Vec2::new(a[0], a[1])
    }
}

impl From<Vec2> for [f64; 2] {
    fn from(v: Vec2) -> Self {
        [v.x, v.y]
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, c: f64) -> Vec2 {
        Vec2::new(self.x * c, self.y * c)
    }
}

/// `ω·u_h + (1 − ω)·u_r`.
pub fn blend(u_h: Vec2, u_r: Vec2, omega: f64) -> Result<Vec2, ControlError> {
    if !(0.0..=1.0).contains(&omega) {
        return Err(ControlError::OmegaOutOfRange(omega));
    }
    Ok(u_h * omega + u_r * (1.0 - omega))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disk {
    pub center: Vec2,
    pub radius: f64,
}

impl Disk {
    pub fn contains(&self, p: Vec2) -> bool {
        (p - self.center).norm() <= self.radius
    }
}

/// Line across the start → goal segment at a fixed fraction of its length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub origin: Vec2,
    pub toward: Vec2,
    pub fraction: f64,
}

impl Checkpoint {
    /// Progress of `p` along origin → toward, 0 at the origin and 1 at the end.
    pub fn progress(&self, p: Vec2) -> f64 {
        let d = self.toward - self.origin;
        (p - self.origin).dot(d) / d.dot(d)
    }

    /// Crossing point if the move `from → to` reaches the gate.
    pub fn crossing(&self, from: Vec2, to: Vec2) -> Option<Vec2> {
        let (a, b) = (self.progress(from), self.progress(to));
        if a < self.fraction && b >= self.fraction {
            Some(from + (to - from) * ((self.fraction - a) / (b - a)))
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plant {
    pub position: Vec2,
    pub goal: Vec2,
    pub obstacles: Vec<Disk>,
    pub checkpoint: Checkpoint,
    /// Displacement per tick for a unit command.
    pub input_scale: f64,
    pub tick_hz: f64,
    pub goal_tolerance: f64,
}

impl Plant {
    /// Two disks on the straight route, gate at 40% of the way.
    pub fn reference() -> Self {
        let start = Vec2::from(crate::data::START);
        let goal = Vec2::from(crate::data::DEFAULT_GOAL);
        Self {
            position: start,
            goal,
            obstacles: vec![
                Disk {
                    center: Vec2::new(0.45, 0.5),
                    radius: 0.05,
                },
                Disk {
                    center: Vec2::new(0.6, 0.5),
                    radius: 0.05,
                },
            ],
            checkpoint: Checkpoint {
                origin: start,
                toward: goal,
                fraction: 0.4,
            },
            input_scale: 0.025,
            tick_hz: 10.0,
            goal_tolerance: 0.03,
        }
    }

    pub fn collides(&self, p: Vec2) -> bool {
        self.obstacles.iter().any(|d| d.contains(p))
    }

    pub fn at_goal(&self, p: Vec2) -> bool {
        (p - self.goal).norm() <= self.goal_tolerance
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        let bad = |m: &str| Err(ControlError::InvalidSetting(m.into()));
        if !self.position.is_finite() || !self.goal.is_finite() {
            return bad("plant position and goal must be finite");
        }
        if !(self.input_scale > 0.0 && self.input_scale.is_finite()) {
            return bad("input_scale must be positive");
        }
        if !(self.tick_hz > 0.0) {
            return bad("tick_hz must be positive");
        }
        if (self.checkpoint.toward - self.checkpoint.origin).norm() == 0.0 {
            return bad("checkpoint direction is degenerate");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    PreCheckpoint,
    PostCheckpoint,
    Done,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::PreCheckpoint => "pre_checkpoint",
            Phase::PostCheckpoint => "post_checkpoint",
            Phase::Done => "done",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How the human share ω is chosen after the checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArbitrationPolicy {
    Fixed { omega: f64 },
    /// ω from the model's normalised interval width.
    Adaptive,
}

impl ArbitrationPolicy {
    pub const DEFAULT_FIXED_OMEGA: f64 = 0.5;

    pub fn fixed(omega: f64) -> Result<Self, ControlError> {
        if !(0.0..=1.0).contains(&omega) {
            return Err(ControlError::OmegaOutOfRange(omega));
        }
        Ok(ArbitrationPolicy::Fixed { omega })
    }

    /// Parses `fixed` or `adaptive`; `fixed` uses `fixed_omega`.
    pub fn parse(name: &str, fixed_omega: f64) -> Result<Self, ControlError> {
        match name {
            "fixed" => Self::fixed(fixed_omega),
            "adaptive" => Ok(ArbitrationPolicy::Adaptive),
            other => Err(ControlError::UnknownPolicy(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ArbitrationPolicy::Fixed { .. } => "fixed",
            ArbitrationPolicy::Adaptive => "adaptive",
        }
    }
}

impl FromStr for ArbitrationPolicy {
    type Err = ControlError;

    fn from_str(s: &str) -> Result<Self, ControlError> {
        Self::parse(s, Self::DEFAULT_FIXED_OMEGA)
    }
}

impl fmt::Display for ArbitrationPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ArbitrationPolicy::Fixed { omega } => write!(f, "fixed({omega})"),
            ArbitrationPolicy::Adaptive => f.write_str("adaptive"),
        }
    }
}
