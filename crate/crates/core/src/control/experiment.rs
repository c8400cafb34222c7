//! Reference scenario and the two-arm effort comparison.

use std::fmt::Write as _;

use serde::Serialize;

use super::trial::TrialSetup;
use super::{
    effort, run_trial, ArbitrationPolicy, ControlError, OperatorKind, OperatorModel, Plant,
    RobotParams, TrialLog, Vec2,
};
use crate::data::{linspace, make_family, FamilyKind};
use crate::model::{CesnModel, Demonstration};
use crate::numerics::{mann_whitney_u, two_sample_t, TTestKind, TestResult};
use crate::reservoir::ReservoirConfig;

/// Model trained for the reference plant plus the matching trial settings.
#[derive(Debug, Clone)]
pub struct ReferenceSetup {
    pub model: CesnModel,
    pub trial: TrialSetup,
}

impl ReferenceSetup {
    /// Arc offsets of the training demonstrations.
    pub const TRAINING_OFFSETS: [f64; 3] = [0.15, 0.25, 0.35];
    pub const HORIZON: usize = 100;
    pub const MAX_STEPS: usize = 300;

    /// Training arcs re-labelled with their gate-crossing state, and the
    /// crossing step of the middle demonstration.
    pub fn training_demos(plant: &Plant) -> Result<(Vec<Demonstration>, usize), ControlError> {
        let contexts: Vec<Vec<f64>> = Self::TRAINING_OFFSETS.iter().map(|&c| vec![c]).collect();
        let family = make_family(FamilyKind::ObstacleArc, &contexts, Self::HORIZON, 0.0, 0)
            .map_err(|e| ControlError::InvalidSetting(e.to_string()))?;
        let mut demos = Vec::new();
        let mut steps = Vec::new();
        for d in family.demos {
            let pts: Vec<Vec2> = d.targets.iter().map(|y| Vec2::new(y[0], y[1])).collect();
            let (k, captured) = pts
                .windows(2)
                .enumerate()
                .find_map(|(k, w)| plant.checkpoint.crossing(w[0], w[1]).map(|c| (k + 1, c)))
                .ok_or_else(|| {
                    ControlError::InvalidSetting("training arc never crosses the checkpoint".into())
                })?;
            steps.push(k);
            demos.push(Demonstration::new(captured.to_vec(), d.targets));
        }
        Ok((demos, steps[steps.len() / 2]))
    }

    /// Trial settings for the reference plant, without training a model.
    pub fn trial_setup() -> Result<TrialSetup, ControlError> {
        let plant = Plant::reference();
        let (_, checkpoint_step) = Self::training_demos(&plant)?;
        Ok(TrialSetup {
            plant,
            robot: RobotParams::default(),
            checkpoint_step,
            max_steps: Self::MAX_STEPS,
        })
    }

    pub fn build(config: &ReservoirConfig, lambda: f64, alpha: f64) -> Result<Self, ControlError> {
        let trial = Self::trial_setup()?;
        let (demos, _) = Self::training_demos(&trial.plant)?;
        let model = CesnModel::train(&demos, config, lambda, alpha)?;
        Ok(Self { model, trial })
    }
}

/// A trial configuration: the operator detours through `(0.5, 0.5 + offset)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrialContext {
    pub category: &'static str,
    pub offset: f64,
}

/// 10 offsets inside the training range, then 4 outside it.
pub fn reference_contexts() -> Vec<TrialContext> {
    let inside = linspace(0.17, 0.33, 10).into_iter().map(|offset| TrialContext {
        category: "interpolation",
        offset,
    });
    let outside = [0.08, 0.10, 0.42, 0.45].into_iter().map(|offset| TrialContext {
        category: "extrapolation",
        offset,
    });
    inside.chain(outside).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Arm `a` is compared against arm `b`.
    pub arms: [ArbitrationPolicy; 2],
    pub operator_kind: OperatorKind,
    pub gain: f64,
    pub noise_std: f64,
    pub effort_cost: f64,
    /// Trial `i` uses operator seed `seed + i` in both arms.
    pub seed: u64,
    pub t_test: TTestKind,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            arms: [
                ArbitrationPolicy::Adaptive,
                ArbitrationPolicy::Fixed {
                    omega: ArbitrationPolicy::DEFAULT_FIXED_OMEGA,
                },
            ],
            operator_kind: OperatorKind::Noisy,
            gain: OperatorModel::DEFAULT_GAIN,
            noise_std: OperatorModel::DEFAULT_NOISE_STD,
            effort_cost: OperatorModel::DEFAULT_EFFORT_COST,
            seed: 0,
            t_test: TTestKind::Pooled,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialSummary {
    pub trial: usize,
    pub arm: usize,
    pub policy: String,
    pub category: &'static str,
    pub context: f64,
    pub effort: f64,
    pub steps: usize,
    pub goal_reached: bool,
    pub collided: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArmSummary {
    pub policy: String,
    /// Pooled per-step samples.
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub total_effort: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub arms: [ArmSummary; 2],
    pub t_test: TestResult,
    pub t_test_kind: String,
    pub mann_whitney: TestResult,
    pub trials: Vec<TrialSummary>,
    #[serde(skip)]
    pub logs: Vec<TrialLog>,
}

fn arm_summary(policy: &ArbitrationPolicy, samples: &[f64]) -> ArmSummary {
    let n = samples.len();
    let total: f64 = samples.iter().sum();
    let mean = total / n as f64;
    let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
    ArmSummary {
        policy: policy.to_string(),
        n,
        mean,
        std: var.sqrt(),
        total_effort: total,
    }
}

/// Runs every context under both arms and compares pooled per-step human effort.
pub fn experiment(
    model: &CesnModel,
    setup: &TrialSetup,
    config: &ExperimentConfig,
    contexts: &[TrialContext],
) -> Result<ExperimentReport, ControlError> {
    let mut samples: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let mut trials = Vec::new();
    let mut logs = Vec::new();
    for (arm, policy) in config.arms.iter().enumerate() {
        for (i, ctx) in contexts.iter().enumerate() {
            let mut op = OperatorModel::new(
                config.operator_kind,
                Some(Vec2::new(0.5, 0.5 + ctx.offset)),
                config.seed.wrapping_add(i as u64),
            )
            .with_gain(config.gain)
            .with_noise(config.noise_std)
            .with_effort_cost(config.effort_cost);
            op.validate()?;
            let log = run_trial(model, setup, &mut op, *policy)?;
            samples[arm].extend(log.human_norms());
            trials.push(TrialSummary {
                trial: i,
                arm,
                policy: policy.to_string(),
                category: ctx.category,
                context: ctx.offset,
                effort: effort(&log)?,
                steps: log.steps.len(),
                goal_reached: log.goal_reached,
                collided: log.collided,
            });
            logs.push(log);
        }
    }
    let t_test = two_sample_t(&samples[0], &samples[1], config.t_test)?;
    let mann_whitney = mann_whitney_u(&samples[0], &samples[1])?;
    Ok(ExperimentReport {
        arms: [
            arm_summary(&config.arms[0], &samples[0]),
            arm_summary(&config.arms[1], &samples[1]),
        ],
        t_test,
        t_test_kind: format!("{:?}", config.t_test).to_lowercase(),
        mann_whitney,
        trials,
        logs,
    })
}

impl ExperimentReport {
    /// One row per trial: policy, context, effort, steps, goal_reached, collided.
    pub fn trials_csv(&self) -> String {
        let mut out = String::from("trial,policy,category,context,effort,steps,goal_reached,collided\n");
        for t in &self.trials {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                t.trial, t.policy, t.category, t.context, t.effort, t.steps, t.goal_reached, t.collided
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Short human-readable summary.
    pub fn summary(&self) -> String {
        let [a, b] = &self.arms;
        format!(
            "{}: mean {:.4} (sd {:.4}, n {})\n{}: mean {:.4} (sd {:.4}, n {})\n\
             t-test ({}): t = {:.4}, p = {:.3e}\nMann-Whitney: U = {:.1}, p = {:.3e}",
            a.policy,
            a.mean,
            a.std,
            a.n,
            b.policy,
            b.mean,
            b.std,
            b.n,
            self.t_test_kind,
            self.t_test.statistic,
            self.t_test.p_value,
            self.mann_whitney.statistic,
            self.mann_whitney.p_value
        )
    }
}
