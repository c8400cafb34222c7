//! Acceptance harness: one PASS/FAIL line per criterion, non-zero exit on failure.
//!
//! Runs without the libtest harness so the report reads top to bottom.

use std::collections::HashMap;
use std::time::Instant;

use cesn::control::{
    blend, experiment, reference_contexts, run_trial, ArbitrationPolicy, ExperimentConfig, OperatorKind,
    OperatorModel, Phase, ReferenceSetup, ScriptedOperator, Vec2,
};
use cesn::data::{make_family, FamilyKind};
use cesn::model::{CesnModel, Demonstration};
use cesn::numerics::{mann_whitney_u, spectral_radius, two_sample_t, RandomSource, TTestKind};
use cesn::reservoir::{Reservoir, ReservoirConfig, ReservoirState};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

type Criterion<'a> = Box<dyn Fn() -> Outcome + 'a>;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn rmse(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let n: usize = a.iter().map(Vec::len).sum();
    let ss: f64 = a
        .iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    (ss / n as f64).sqrt()
}

/// Largest per-coordinate peak-to-peak range.
fn amplitude(y: &[Vec<f64>]) -> f64 {
    (0..y[0].len())
        .map(|j| {
            let (lo, hi) = y
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r[j]), hi.max(r[j])));
            hi - lo
        })
        .fold(0.0, f64::max)
}

fn reach_family(goals_y: &[f64], noise: f64, seed: u64) -> Vec<Demonstration> {
    let ctx: Vec<Vec<f64>> = goals_y.iter().map(|&y| vec![0.9, y]).collect();
    make_family(FamilyKind::MinJerkReach, &ctx, 100, noise, seed).unwrap().demos
}

fn four_demo_model() -> (CesnModel, Vec<Demonstration>) {
    let demos = reach_family(&[0.3, 0.4, 0.5, 0.6], 0.0, 0);
    let model = CesnModel::train(&demos, &ReservoirConfig::default(), 1e-8, 0.05).unwrap();
    (model, demos)
}

fn spectral_scaling() -> Outcome {
    let target = 0.9;
    let mut build_time = 0.0;
    let mut worst_own: f64 = 0.0;
    let mut worst_oracle: f64 = 0.0;
    for seed in 0..20 {
        let config = ReservoirConfig {
            n_reservoir: 500,
            spectral_radius: target,
            seed,
            ..Default::default()
        };
        let t0 = Instant::now();
        let r = Reservoir::build(&config).unwrap();
        let own = spectral_radius(r.w(), 1e-12, 100_000).unwrap();
        build_time += t0.elapsed().as_secs_f64();
        let m = nalgebra::DMatrix::from_row_slice(500, 500, r.w().as_slice());
        let oracle = m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
        worst_own = worst_own.max((own - target).abs());
        worst_oracle = worst_oracle.max((oracle - target).abs());
    }
    outcome(
        worst_own < 1e-6 && worst_oracle < 1e-6 && build_time < 30.0,
        format!(
            "20 seeds, max |rho - 0.9| = {worst_oracle:.2e} (eigen oracle), {worst_own:.2e} (power iteration); \
             build+measure {build_time:.2}s < 30s"
        ),
    )
}

fn fading_memory() -> Outcome {
    let config = ReservoirConfig {
        spectral_radius: 0.9,
        leak_rate: 0.3,
        seed: 11,
        ..Default::default()
    };
    let r = Reservoir::build(&config).unwrap();
    let mut rng = RandomSource::new(5);
    let n = r.n_reservoir();
    let a = ReservoirState {
        x: (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect(),
        t: 0,
    };
    let b = ReservoirState {
        x: (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect(),
        t: 0,
    };
    let inputs: Vec<Vec<f64>> = (0..500)
        .map(|_| (0..config.n_input).map(|_| rng.uniform(-1.0, 1.0)).collect())
        .collect();
    let dist = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt();
    let d0 = dist(&a.x, &b.x);
    let fa = r.run(&inputs, &a).unwrap();
    let fb = r.run(&inputs, &b).unwrap();
    let ratio = dist(&fa[499].x, &fb[499].x) / d0;
    outcome(ratio < 1e-3, format!("rho 0.9, leak 0.3, 500 steps: distance ratio {ratio:.2e} < 1e-3"))
}

fn zero_residual() -> Outcome {
    let config = ReservoirConfig {
        // small enough that the unregularised normal equations stay well conditioned
        n_reservoir: 10,
        seed: 2,
        ..Default::default()
    };
    let mut demos = reach_family(&[0.3, 0.5, 0.7], 0.0, 0);
    // the reservoir, and so the states, depend only on config and contexts
    let probe = CesnModel::train(&demos, &config, 1e-8, 0.05).unwrap();
    let mut rng = RandomSource::new(9);
    let w_star: Vec<Vec<f64>> = (0..2)
        .map(|_| (0..=config.n_reservoir).map(|_| rng.uniform(-1.0, 1.0)).collect())
        .collect();
    for d in &mut demos {
        let states = probe.states(&d.context, d.duration()).unwrap();
        d.targets = states
            .iter()
            .map(|s| {
                let v = s.augmented();
                w_star.iter().map(|w| w.iter().zip(&v).map(|(a, b)| a * b).sum()).collect()
            })
            .collect();
    }
    let model = CesnModel::train(&demos, &config, 0.0, 0.05).unwrap();
    let s_max = model.residual_std().iter().copied().fold(0.0, f64::max);
    let mut hw_max: f64 = 0.0;
    for c in [[0.9, 0.3], [0.9, 0.5], [0.9, 0.7], [0.9, 0.45], [0.9, 0.9], [0.6, 0.1]] {
        let p = model.generate(&c, 100).unwrap();
        hw_max = hw_max.max(p.half_width.iter().flatten().copied().fold(0.0, f64::max));
    }
    outcome(
        s_max < 1e-8 && hw_max < 1e-6,
        format!("N_x 10, lambda 0, 300 rows: max s {s_max:.2e} < 1e-8, max half-width {hw_max:.2e} < 1e-6"),
    )
}

fn coverage() -> Outcome {
    let mut inside = 0usize;
    let mut total = 0usize;
    let mut rng = RandomSource::new(0);
    let mut goals = |k: usize| -> Vec<Vec<f64>> {
        (0..k)
            .map(|_| vec![rng.uniform(0.7, 0.9), rng.uniform(0.3, 0.7)])
            .collect()
    };
    let train_ctx = goals(20);
    let test_ctx = goals(12);
    let train = make_family(FamilyKind::MinJerkReach, &train_ctx, 100, 0.02, 1).unwrap();
    let test = make_family(FamilyKind::MinJerkReach, &test_ctx, 100, 0.02, 2).unwrap();
    let model = CesnModel::train(&train.demos, &ReservoirConfig::default(), 1e-8, 0.05).unwrap();
    for d in &test.demos {
        let p = model.generate(&d.context, d.duration()).unwrap();
        for (k, y) in d.targets.iter().enumerate() {
            for (j, v) in y.iter().enumerate() {
                total += 1;
                if (v - p.mean[k][j]).abs() <= p.half_width[k][j] {
                    inside += 1;
                }
            }
        }
    }
    let freq = inside as f64 / total as f64;
    outcome(
        (0.92..=0.975).contains(&freq) && total >= 2000,
        format!("sigma 0.02, alpha 0.05: {inside}/{total} covered = {freq:.4} in [0.92, 0.975]"),
    )
}

fn confidence_ordering(model: &CesnModel) -> Outcome {
    let train_mean = [0.3, 0.4, 0.5, 0.6]
        .iter()
        .map(|&y| model.generate(&[0.9, y], 100).unwrap().mean_half_width())
        .sum::<f64>()
        / 4.0;
    let interp = model.generate(&[0.9, 0.45], 100).unwrap().mean_half_width();
    let extrap = model.generate(&[0.9, 0.7], 100).unwrap().mean_half_width();
    outcome(
        train_mean < interp && interp < extrap,
        format!("mean half-width: training {train_mean:.3e} < interpolation {interp:.3e} < extrapolation {extrap:.3e}"),
    )
}

fn fidelity(model: &CesnModel, demos: &[Demonstration]) -> Outcome {
    let mut worst: f64 = 0.0;
    for d in demos {
        let p = model.generate(&d.context, d.duration()).unwrap();
        worst = worst.max(rmse(&p.mean, &d.targets) / amplitude(&d.targets));
    }
    let end_y = |d: &Demonstration| d.targets.last().unwrap()[1];
    let mid = model.generate(&[0.9, 0.45], 100).unwrap().mean.last().unwrap()[1];
    let between = end_y(&demos[1]) < mid && mid < end_y(&demos[2]);
    let sweep: Vec<f64> = (0..=12)
        .map(|i| {
            let y = 0.3 + 0.025 * i as f64;
            model.generate(&[0.9, y], 100).unwrap().mean.last().unwrap()[1]
        })
        .collect();
    let monotone = sweep.windows(2).all(|w| w[0] < w[1]);
    outcome(
        worst < 0.05 && between && monotone,
        format!(
            "max RMSE/amplitude {:.2e} < 5%; endpoint at 0.45 = {mid:.4} in ({:.4}, {:.4}); \
             13-point sweep monotone: {monotone}",
            worst,
            end_y(&demos[1]),
            end_y(&demos[2])
        ),
    )
}

fn checkpoint_conditioning(setup: &ReferenceSetup) -> Outcome {
    let plant = &setup.trial.plant;
    let (demos, _) = ReferenceSetup::training_demos(plant).unwrap();
    let h = setup.model.horizon();
    let mut worst: f64 = 0.0;
    for d in &demos {
        let pts: Vec<Vec2> = d.targets.iter().map(|y| Vec2::new(y[0], y[1])).collect();
        let k = pts
            .windows(2)
            .position(|w| plant.checkpoint.crossing(w[0], w[1]).is_some())
            .unwrap()
            + 1;
        let p = setup.model.condition_at(&d.context, k, h - k).unwrap();
        worst = worst.max(rmse(&p.mean, &d.targets[k..]) / amplitude(&d.targets));
    }
    outcome(
        worst < 0.10,
        format!("3 arcs conditioned at their gate crossing: max remainder RMSE/amplitude {worst:.2e} < 10%"),
    )
}

fn shared_control_direction() -> Outcome {
    let t0 = Instant::now();
    let setup = ReferenceSetup::build(&ReservoirConfig::default(), 1e-8, 0.05).unwrap();
    let report = experiment(
        &setup.model,
        &setup.trial,
        &ExperimentConfig::default(),
        &reference_contexts(),
    )
    .unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let [a, b] = &report.arms;
    let half_pairs = (a.n * b.n) as f64 / 2.0;
    let pass = report.trials.len() == 28
        && a.mean < b.mean
        && report.t_test.statistic < 0.0
        && report.t_test.p_value < 0.05
        && report.mann_whitney.statistic < half_pairs
        && report.mann_whitney.p_value < 0.05
        && secs < 60.0;
    outcome(
        pass,
        format!(
            "28 trials: adaptive {:.4} < fixed {:.4}; t = {:.3} (p {:.2e}); U = {:.0} < {:.0} (p {:.2e}); {secs:.1}s < 60s",
            a.mean,
            b.mean,
            report.t_test.statistic,
            report.t_test.p_value,
            report.mann_whitney.statistic,
            half_pairs,
            report.mann_whitney.p_value
        ),
    )
}

fn oracle_t(a: &[f64], b: &[f64], welch: bool) -> (f64, f64) {
    let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
    let var = |x: &[f64]| {
        let m = mean(x);
        x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
    };
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (se, dof) = if welch {
        let se2 = var(a) / na + var(b) / nb;
        let dof = se2.powi(2) / ((var(a) / na).powi(2) / (na - 1.0) + (var(b) / nb).powi(2) / (nb - 1.0));
        (se2.sqrt(), dof)
    } else {
        let sp = ((na - 1.0) * var(a) + (nb - 1.0) * var(b)) / (na + nb - 2.0);
        ((sp * (1.0 / na + 1.0 / nb)).sqrt(), na + nb - 2.0)
    };
    let t = (mean(a) - mean(b)) / se;
    let p = 2.0 * StudentsT::new(0.0, 1.0, dof).unwrap().cdf(-t.abs());
    (t, p)
}

fn oracle_u(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut u = 0.0;
    for x in a {
        for y in b {
            u += if x > y {
                1.0
            } else if x == y {
                0.5
            } else {
                0.0
            };
        }
    }
    let mut counts: HashMap<u64, f64> = HashMap::new();
    for v in a.iter().chain(b) {
        // + 0.0 folds -0.0 into 0.0
        *counts.entry((v + 0.0).to_bits()).or_default() += 1.0;
    }
    let ties: f64 = counts.values().map(|t| t * t * t - t).sum();
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let n = na + nb;
    let sd = (na * nb / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)))).sqrt();
    let z = ((u - na * nb / 2.0).abs() - 0.5).max(0.0) / sd;
    (u, 2.0 * Normal::new(0.0, 1.0).unwrap().cdf(-z))
}

fn statistics_oracles() -> Outcome {
    let mut rng = RandomSource::new(21);
    // rounded draws give plenty of ties
    let mut draw = |n: usize, shift: f64| -> Vec<f64> {
        (0..n)
            .map(|_| (rng.normal(shift, 1.0) * 4.0).round() / 4.0)
            .collect()
    };
    let cases = vec![
        (draw(40, 0.0), draw(55, 0.4)),
        (draw(12, 0.0), draw(9, -0.8)),
        (draw(200, 0.0), draw(180, 0.1)),
        (
            vec![0.62, 0.71, 0.55, 0.90, 0.48, 0.77, 0.66],
            vec![0.81, 0.95, 0.74, 0.88, 1.02, 0.79],
        ),
    ];
    let (mut ds, mut dp): (f64, f64) = (0.0, 0.0);
    for (a, b) in &cases {
        for (kind, welch) in [(TTestKind::Pooled, false), (TTestKind::Welch, true)] {
            let got = two_sample_t(a, b, kind).unwrap();
            let (t, p) = oracle_t(a, b, welch);
            ds = ds.max((got.statistic - t).abs());
            dp = dp.max((got.p_value - p).abs());
        }
        let got = mann_whitney_u(a, b).unwrap();
        let (u, p) = oracle_u(a, b);
        ds = ds.max((got.statistic - u).abs());
        dp = dp.max((got.p_value - p).abs());
    }
    outcome(
        ds < 1e-9 && dp < 1e-6,
        format!("4 sample pairs, pooled/Welch t and U: max stat diff {ds:.1e} < 1e-9, max p diff {dp:.1e} < 1e-6"),
    )
}

fn blend_identities(setup: &ReferenceSetup) -> Outcome {
    let mut rng = RandomSource::new(8);
    let mut algebra = true;
    for _ in 0..1000 {
        let h = Vec2::new(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
        let r = Vec2::new(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
        algebra &= blend(h, r, 1.0).unwrap() == h && blend(h, r, 0.0).unwrap() == r;
    }

    // ω = 1: executed path is the integrated human command
    let script: Vec<Vec2> = (0..300)
        .map(|t| Vec2::new(0.8, 0.6 * (t as f64 * 0.2).sin()))
        .collect();
    let mut op = ScriptedOperator::new(script.clone());
    let human = run_trial(&setup.model, &setup.trial, &mut op, ArbitrationPolicy::fixed(1.0).unwrap()).unwrap();
    let mut p = setup.trial.plant.position;
    let mut human_path = true;
    for (rec, u) in human.steps.iter().zip(&script) {
        p = p + u.clamp_unit() * setup.trial.plant.input_scale;
        human_path &= rec.u_shared == rec.u_human && rec.position == p;
    }

    // ω = 0: after the checkpoint the executed command is the robot's
    let mut op = ScriptedOperator::new(script);
    let robot = run_trial(&setup.model, &setup.trial, &mut op, ArbitrationPolicy::fixed(0.0).unwrap()).unwrap();
    let post: Vec<_> = robot.steps.iter().filter(|s| s.phase == Phase::PostCheckpoint).collect();
    let robot_path = !post.is_empty() && post.iter().all(|s| s.u_shared == s.u_robot);

    // equal seeds: identical logs up to the checkpoint
    let mut prefix_equal = true;
    for seed in 0..5 {
        let logs: Vec<_> = [ArbitrationPolicy::Adaptive, ArbitrationPolicy::fixed(0.5).unwrap()]
            .into_iter()
            .map(|policy| {
                let mut op = OperatorModel::new(OperatorKind::Noisy, Some(Vec2::new(0.5, 0.75)), seed);
                run_trial(&setup.model, &setup.trial, &mut op, policy).unwrap()
            })
            .collect();
        let pre = |l: &cesn::control::TrialLog| -> Vec<_> {
            l.steps.iter().filter(|s| s.phase == Phase::PreCheckpoint).copied().collect()
        };
        prefix_equal &= !pre(&logs[0]).is_empty()
            && pre(&logs[0]) == pre(&logs[1])
            && logs[0].checkpoint == logs[1].checkpoint;
    }
    outcome(
        algebra && human_path && robot_path && prefix_equal,
        format!(
            "blend algebra {algebra}; omega=1 human path {human_path}; omega=0 robot path {robot_path} \
             ({} post-checkpoint steps); pre-checkpoint logs identical over 5 seeds {prefix_equal}",
            post.len()
        ),
    )
}

fn main() {
    let started = Instant::now();
    let (reach_model, reach_demos) = four_demo_model();
    let reference = ReferenceSetup::build(&ReservoirConfig::default(), 1e-8, 0.05).unwrap();

    let criteria: Vec<(&str, Criterion<'_>)> = vec![
        ("spectral scaling", Box::new(spectral_scaling)),
        ("fading memory", Box::new(fading_memory)),
        ("zero-residual regression", Box::new(zero_residual)),
        ("prediction interval coverage", Box::new(coverage)),
        ("confidence ordering", Box::new(|| confidence_ordering(&reach_model))),
        ("trajectory fidelity", Box::new(|| fidelity(&reach_model, &reach_demos))),
        ("checkpoint conditioning", Box::new(|| checkpoint_conditioning(&reference))),
        ("shared-control direction", Box::new(shared_control_direction)),
        ("statistics oracles", Box::new(statistics_oracles)),
        ("blend identities", Box::new(|| blend_identities(&reference))),
    ];
    let mut failed = 0;
    for (name, run) in &criteria {
        let o = run();
        if !o.pass {
            failed += 1;
        }
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!(
        "{} of {} criteria passed in {:.1}s",
        criteria.len() - failed,
        criteria.len(),
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
