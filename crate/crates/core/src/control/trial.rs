//! Tick-by-tick trial execution and its log.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{blend, ArbitrationPolicy, ControlError, Observation, Operator, Phase, Plant, Vec2};
use crate::model::{CesnModel, Prediction};

/// Pursuit controller that follows the conditioned prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotParams {
    /// Command is `clamp(gain · (target − p))`.
    pub gain: f64,
    /// Target index is the tracked index plus this many steps.
    pub lookahead: usize,
    /// The tracked index only moves forward, to the nearest predicted point
    /// within this many steps.
    pub search_window: usize,
}

impl Default for RobotParams {
    fn default() -> Self {
        Self {
            gain: 5.0,
            lookahead: 3,
            search_window: 10,
        }
    }
}

/// Everything a trial needs besides the model, operator and policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSetup {
    pub plant: Plant,
    pub robot: RobotParams,
    /// Step of the training horizon that the checkpoint corresponds to.
    pub checkpoint_step: usize,
    pub max_steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    /// Position after this tick's move.
    pub position: Vec2,
    pub u_human: Vec2,
    pub u_robot: Vec2,
    pub u_shared: Vec2,
    pub omega: f64,
    /// Largest interval half-width at the tracked step (0 before the checkpoint).
    pub half_width: f64,
    /// Phase the command was computed in.
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialLog {
    pub policy: ArbitrationPolicy,
    pub steps: Vec<StepRecord>,
    pub goal_reached: bool,
    pub collided: bool,
    /// Tick at which the gate was crossed and the captured state.
    pub checkpoint: Option<(usize, Vec2)>,
}

/// `Σ_t ‖u_human(t)‖`.
pub fn effort(log: &TrialLog) -> Result<f64, ControlError> {
    if log.steps.is_empty() {
        return Err(ControlError::EmptyLog);
    }
    Ok(log.steps.iter().map(|s| s.u_human.norm()).sum())
}

impl TrialLog {
    pub fn human_norms(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.u_human.norm()).collect()
    }

    /// Per-step CSV with a `#cesn-trial-log v1 ...` header line.
    pub fn to_csv(&self, context: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "#cesn-trial-log v1 policy={} context={} steps={} effort={} goal_reached={} collided={}",
            self.policy,
            context,
            self.steps.len(),
            effort(self).unwrap_or(0.0),
            self.goal_reached,
            self.collided
        );
        for s in &self.steps {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                s.t,
                s.position.x,
                s.position.y,
                s.u_human.x,
                s.u_human.y,
                s.u_robot.x,
                s.u_robot.y,
                s.u_shared.x,
                s.u_shared.y,
                s.omega,
                s.half_width,
                s.phase
            );
        }
        out
    }
}

/// Step-wise trial state machine, shared by [`run_trial`] and live sessions.
#[derive(Debug)]
pub struct TrialRunner<'a> {
    model: &'a CesnModel,
    setup: TrialSetup,
    policy: ArbitrationPolicy,
    position: Vec2,
    phase: Phase,
    prediction: Option<Prediction>,
    tracked: usize,
    log: TrialLog,
}

impl<'a> TrialRunner<'a> {
    pub fn new(
        model: &'a CesnModel,
        setup: TrialSetup,
        policy: ArbitrationPolicy,
    ) -> Result<Self, ControlError> {
        setup.plant.validate()?;
        if setup.max_steps == 0 {
            return Err(ControlError::InvalidSetting("max_steps must be at least 1".into()));
        }
        if setup.checkpoint_step >= model.horizon() {
            return Err(ControlError::InvalidSetting(format!(
                "checkpoint step {} is past the model horizon {}",
                setup.checkpoint_step,
                model.horizon()
            )));
        }
        if model.context_dim() != 2 {
            return Err(ControlError::InvalidSetting(format!(
                "model must be conditioned on a 2-D state, it takes {} context channels",
                model.context_dim()
            )));
        }
        if let ArbitrationPolicy::Fixed { omega } = policy {
            ArbitrationPolicy::fixed(omega)?;
        }
        Ok(Self {
            model,
            position: setup.plant.position,
            setup,
            policy,
            phase: Phase::PreCheckpoint,
            prediction: None,
            tracked: 0,
            log: TrialLog {
                policy,
                steps: Vec::new(),
                goal_reached: false,
                collided: false,
                checkpoint: None,
            },
        })
    }

    pub fn t(&self) -> usize {
        self.log.steps.len()
    }

    pub fn position(&self) -> Vec2 {
        self.position
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn is_done(&self) -> bool {
        self.phase == Phase::Done
    }

    pub fn policy(&self) -> ArbitrationPolicy {
        self.policy
    }

    pub fn setup(&self) -> &TrialSetup {
        &self.setup
    }

    /// The conditioned remainder, once the checkpoint has been crossed.
    pub fn prediction(&self) -> Option<&Prediction> {
        self.prediction.as_ref()
    }

    pub fn log(&self) -> &TrialLog {
        &self.log
    }

    /// Ends the trial early; later calls to [`step`](Self::step) do nothing.
    pub fn stop(&mut self) {
        self.phase = Phase::Done;
    }

    pub fn finish(self) -> TrialLog {
        self.log
    }

    /// Robot command, human share and half-width for the current tick.
    fn robot_view(&mut self) -> (Vec2, f64, f64) {
        let Some(pred) = &self.prediction else {
            return (Vec2::ZERO, 1.0, 0.0);
        };
        let p = self.position;
        let last = pred.len() - 1;
        let dist = |k: usize| (Vec2::new(pred.mean[k][0], pred.mean[k][1]) - p).norm();
        let end = (self.tracked + self.setup.robot.search_window).min(last);
        let mut best = self.tracked;
        for k in self.tracked + 1..=end {
            if dist(k) < dist(best) {
                best = k;
            }
        }
        self.tracked = best;
        let aim = pred.mean[(best + self.setup.robot.lookahead).min(last)].as_slice();
        let u_r = ((Vec2::new(aim[0], aim[1]) - p) * self.setup.robot.gain).clamp_unit();
        let row = &pred.half_width[best];
        let h = row.iter().copied().fold(0.0, f64::max);
        let omega = match self.policy {
            ArbitrationPolicy::Fixed { omega } => omega,
            ArbitrationPolicy::Adaptive => self.model.pi_to_weight(row),
        };
        (u_r, omega, h)
    }

    /// Advances one tick. Returns `None` once the trial has ended.
    pub fn step(&mut self, operator: &mut dyn Operator) -> Result<Option<StepRecord>, ControlError> {
        if self.is_done() {
            return Ok(None);
        }
        let t = self.t();
        let phase = self.phase;
        let (u_r, omega, half_width) = self.robot_view();
        let obs = Observation {
            t,
            position: self.position,
            goal: self.setup.plant.goal,
            u_robot: u_r,
            omega,
            phase,
        };
        let mut u_h = operator.command(&obs);
        if !u_h.is_finite() {
            u_h = Vec2::ZERO;
        }
        let u_h = u_h.clamp_unit();
        let u_s = blend(u_h, u_r, omega)?;
        let from = self.position;
        let to = from + u_s * self.setup.plant.input_scale;
        self.position = to;

        if phase == Phase::PreCheckpoint {
            if let Some(captured) = self.setup.plant.checkpoint.crossing(from, to) {
                let step = self.setup.checkpoint_step;
                let pred = self
                    .model
                    .condition_at(&captured.to_vec(), step, self.model.horizon() - step)?;
                self.prediction = Some(pred);
                self.tracked = 0;
                self.log.checkpoint = Some((t, captured));
                self.phase = Phase::PostCheckpoint;
            }
        }

        let rec = StepRecord {
            t,
            position: to,
            u_human: u_h,
            u_robot: u_r,
            u_shared: u_s,
            omega,
            half_width,
            phase,
        };
        self.log.steps.push(rec);
        if self.setup.plant.collides(to) {
            self.log.collided = true;
            self.phase = Phase::Done;
        } else if self.setup.plant.at_goal(to) {
            self.log.goal_reached = true;
            self.phase = Phase::Done;
        } else if self.t() >= self.setup.max_steps {
            self.phase = Phase::Done;
        }
        Ok(Some(rec))
    }
}

/// Runs a trial to completion.
pub fn run_trial(
    model: &CesnModel,
    setup: &TrialSetup,
    operator: &mut dyn Operator,
    policy: ArbitrationPolicy,
) -> Result<TrialLog, ControlError> {
    let mut runner = TrialRunner::new(model, setup.clone(), policy)?;
    while runner.step(operator)?.is_some() {}
    Ok(runner.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log_with(u: &[Vec2]) -> TrialLog {
        TrialLog {
            policy: ArbitrationPolicy::Adaptive,
            steps: u
                .iter()
                .enumerate()
                .map(|(t, &u_human)| StepRecord {
                    t,
                    position: Vec2::ZERO,
                    u_human,
                    u_robot: Vec2::ZERO,
                    u_shared: u_human,
                    omega: 1.0,
                    half_width: 0.0,
                    phase: Phase::PreCheckpoint,
                })
                .collect(),
            goal_reached: false,
            collided: false,
            checkpoint: None,
        }
    }

    #[test]
    fn effort_sums_norms() {
        assert!(matches!(effort(&log_with(&[])), Err(ControlError::EmptyLog)));
        assert_eq!(effort(&log_with(&[Vec2::ZERO; 4])).unwrap(), 0.0);
        assert_eq!(effort(&log_with(&[Vec2::new(0.0, 1.0); 7])).unwrap(), 7.0);
        let u = [Vec2::new(0.3, 0.4), Vec2::new(-1.0, 0.0)];
        let scaled: Vec<_> = u.iter().map(|v| *v * 2.5).collect();
        let (a, b) = (effort(&log_with(&u)).unwrap(), effort(&log_with(&scaled)).unwrap());
        assert!((b - 2.5 * a).abs() < 1e-15);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let csv = log_with(&[Vec2::new(0.5, 0.0); 3]).to_csv("0.2");
        let mut lines = csv.lines();
        let head = lines.next().unwrap();
        assert!(head.starts_with("#cesn-trial-log v1 policy=adaptive context=0.2 steps=3 effort=1.5"));
        assert_eq!(lines.count(), 3);
    }
}
