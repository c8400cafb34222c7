//! Stand-ins for the human operator.

use std::str::FromStr;

use super::{ControlError, Phase, Vec2};
use crate::numerics::RandomSource;

/// What an operator sees before choosing its command for a tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub t: usize,
    pub position: Vec2,
    pub goal: Vec2,
    /// Robot command that will be blended this tick (zero before the checkpoint).
    pub u_robot: Vec2,
    /// Human share for this tick.
    pub omega: f64,
    pub phase: Phase,
}

pub trait Operator {
    /// Human command for this tick. The trial clamps it to the unit disk.
    fn command(&mut self, obs: &Observation) -> Vec2;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    /// Steers straight at the goal, no noise.
    DirectToGoal,
    /// Steers at the via point until it is passed, then at the goal, no noise.
    ViaPoint,
    /// Like `ViaPoint` (or `DirectToGoal` without a via) plus Gaussian noise.
    Noisy,
}

impl FromStr for OperatorKind {
    type Err = ControlError;

    fn from_str(s: &str) -> Result<Self, ControlError> {
        match s {
            "direct_to_goal" => Ok(OperatorKind::DirectToGoal),
            "via_point" => Ok(OperatorKind::ViaPoint),
            "noisy" => Ok(OperatorKind::Noisy),
            other => Err(ControlError::UnknownOperator(other.to_string())),
        }
    }
}

/// Proportional operator that knows how commands get blended.
///
/// It wants the executed velocity to be `v_d = clamp(gain·(target − p) + noise)`
/// and picks `u_h` minimising `‖ω u_h + (1 − ω) u_r − v_d‖² + β‖u_h‖²`:
///
/// ```text
/// u_h = ω (v_d − (1 − ω) u_r) / (ω² + β)
/// ```
///
/// so it pushes less when the robot already moves the right way.
#[derive(Debug, Clone)]
pub struct OperatorModel {
    pub kind: OperatorKind,
    pub gain: f64,
    pub noise_std: f64,
    pub via: Option<Vec2>,
    /// β, the cost of pushing relative to tracking error.
    pub effort_cost: f64,
    /// The via point counts as passed within this distance.
    pub via_radius: f64,
    rng: RandomSource,
    via_passed: bool,
    origin: Option<Vec2>,
}

impl OperatorModel {
    pub const DEFAULT_GAIN: f64 = 5.0;
    pub const DEFAULT_NOISE_STD: f64 = 0.1;
    pub const DEFAULT_EFFORT_COST: f64 = 0.1;

    pub fn new(kind: OperatorKind, via: Option<Vec2>, seed: u64) -> Self {
        Self {
            kind,
            gain: Self::DEFAULT_GAIN,
            noise_std: if kind == OperatorKind::Noisy {
                Self::DEFAULT_NOISE_STD
            } else {
                0.0
            },
            via,
            effort_cost: Self::DEFAULT_EFFORT_COST,
            via_radius: 0.05,
            rng: RandomSource::new(seed),
            via_passed: false,
            origin: None,
        }
    }

    pub fn with_gain(mut self, gain: f64) -> Self {
        self.gain = gain;
        self
    }

    pub fn with_noise(mut self, noise_std: f64) -> Self {
        self.noise_std = noise_std;
        self
    }

    pub fn with_effort_cost(mut self, beta: f64) -> Self {
        self.effort_cost = beta;
        self
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        if !(self.gain > 0.0 && self.gain.is_finite()) {
            return Err(ControlError::InvalidSetting("operator gain must be positive".into()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(ControlError::InvalidSetting("operator noise_std must be >= 0".into()));
        }
        if !(self.effort_cost > 0.0 && self.effort_cost.is_finite()) {
            return Err(ControlError::InvalidSetting("operator effort_cost must be positive".into()));
        }
        Ok(())
    }

    fn target(&mut self, p: Vec2, goal: Vec2) -> Vec2 {
        let via = match (self.kind, self.via) {
            (OperatorKind::DirectToGoal, _) | (_, None) => return goal,
            (_, Some(v)) => v,
        };
        // first observed position fixes the forward direction
        let origin = *self.origin.get_or_insert(p);
        if !self.via_passed {
            let beyond = (p - via).dot(goal - origin) > 0.0;
            if beyond || (p - via).norm() < self.via_radius {
                self.via_passed = true;
            }
        }
        if self.via_passed {
            goal
        } else {
            via
        }
    }

    /// Velocity the operator wants the plant to move at.
    pub fn desired(&mut self, obs: &Observation) -> Vec2 {
        let target = self.target(obs.position, obs.goal);
        let mut v = (target - obs.position) * self.gain;
        if self.noise_std > 0.0 {
            v = v + Vec2::new(
                self.rng.normal(0.0, self.noise_std),
                self.rng.normal(0.0, self.noise_std),
            );
        }
        v.clamp_unit()
    }
}

impl Operator for OperatorModel {
    fn command(&mut self, obs: &Observation) -> Vec2 {
        let v_d = self.desired(obs);
        let w = obs.omega;
        if w == 0.0 {
            return Vec2::ZERO;
        }
        ((v_d - obs.u_robot * (1.0 - w)) * (w / (w * w + self.effort_cost))).clamp_unit()
    }
}

/// Replays a fixed command list, holding each value until the next one.
///
/// `script[k]` is the command for tick `k`; past the end the last command
/// stays active (zero for an empty script).
#[derive(Debug, Clone, Default)]
pub struct ScriptedOperator {
    script: Vec<Option<Vec2>>,
    held: Vec2,
}

impl ScriptedOperator {
    /// Every tick gets a fresh command.
    pub fn new(commands: Vec<Vec2>) -> Self {
        Self {
            script: commands.into_iter().map(Some).collect(),
            held: Vec2::ZERO,
        }
    }

    /// `None` entries keep the previous command (no message that tick).
    pub fn with_gaps(script: Vec<Option<Vec2>>) -> Self {
        Self {
            script,
            held: Vec2::ZERO,
        }
    }
}

impl Operator for ScriptedOperator {
    fn command(&mut self, obs: &Observation) -> Vec2 {
        if let Some(Some(c)) = self.script.get(obs.t) {
            self.held = *c;
        }
        self.held
    }
}

impl<F: FnMut(&Observation) -> Vec2> Operator for F {
    fn command(&mut self, obs: &Observation) -> Vec2 {
        self(obs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(t: usize, p: Vec2, u_r: Vec2, omega: f64) -> Observation {
        Observation {
            t,
            position: p,
            goal: Vec2::new(0.9, 0.5),
            u_robot: u_r,
            omega,
            phase: Phase::PostCheckpoint,
        }
    }

    #[test]
    fn full_control_scales_desired_velocity() {
        let mut op = OperatorModel::new(OperatorKind::DirectToGoal, None, 0);
        let o = obs(0, Vec2::new(0.85, 0.5), Vec2::ZERO, 1.0);
        let u = op.command(&o);
        // v_d = 5 · 0.05 = 0.25 along x, divided by 1 + β
        assert!((u.x - 0.25 / 1.1).abs() < 1e-15 && u.y == 0.0);
    }

    #[test]
    fn pushes_less_when_robot_agrees() {
        let p = Vec2::new(0.5, 0.5);
        let mut a = OperatorModel::new(OperatorKind::DirectToGoal, None, 0);
        let mut b = a.clone();
        let with_robot = a.command(&obs(0, p, Vec2::new(1.0, 0.0), 0.2)).norm();
        let without = b.command(&obs(0, p, Vec2::ZERO, 0.2)).norm();
        assert!(with_robot < without);
        assert_eq!(a.command(&obs(1, p, Vec2::new(1.0, 0.0), 0.0)), Vec2::ZERO);
    }

    #[test]
    fn via_point_then_goal() {
        let via = Vec2::new(0.5, 0.75);
        let mut op = OperatorModel::new(OperatorKind::ViaPoint, Some(via), 0);
        let d = op.desired(&obs(0, Vec2::new(0.1, 0.5), Vec2::ZERO, 1.0));
        assert!(d.y > 0.0);
        // a high via is still ahead even though via → goal points back down
        let d = op.desired(&obs(1, Vec2::new(0.3, 0.6), Vec2::ZERO, 1.0));
        assert!(d.y > 0.0);
        // beyond the via: head for the goal
        let d = op.desired(&obs(1, Vec2::new(0.6, 0.74), Vec2::ZERO, 1.0));
        assert!(d.y < 0.0 && d.x > 0.0);
    }

    #[test]
    fn noise_is_seeded() {
        let run = |seed| {
            let mut op = OperatorModel::new(OperatorKind::Noisy, None, seed);
            (0..5)
                .map(|t| op.desired(&obs(t, Vec2::new(0.2, 0.5), Vec2::ZERO, 1.0)))
                .collect::<Vec<_>>()
        };
        assert_eq!(run(4), run(4));
        assert_ne!(run(4), run(5));
        assert!("wobbly".parse::<OperatorKind>().is_err());
    }

    #[test]
    fn script_holds_last_command() {
        let a = Vec2::new(0.1, 0.0);
        let b = Vec2::new(0.0, 0.2);
        let mut s = ScriptedOperator::with_gaps(vec![Some(a), None, Some(b)]);
        let p = Vec2::ZERO;
        let got: Vec<_> = (0..5).map(|t| s.command(&obs(t, p, p, 1.0))).collect();
        assert_eq!(got, vec![a, a, b, b, b]);
        assert_eq!(ScriptedOperator::default().command(&obs(0, p, p, 1.0)), Vec2::ZERO);
    }
}
