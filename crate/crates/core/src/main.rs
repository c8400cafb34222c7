use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use cesn::control::{
    experiment, reference_contexts, ArbitrationPolicy, ExperimentConfig, OperatorKind, ReferenceSetup,
};
use cesn::data::{load_dataset, make_family, save_dataset, FamilyKind};
use cesn::model::{model_id, CesnError, CesnModel, DEFAULT_ALPHA, DEFAULT_LAMBDA};
use cesn::numerics::TTestKind;
use cesn::reservoir::ReservoirConfig;
use cesn::service::{self, AppState, TickMode};

#[derive(Parser)]
#[command(name = "cesn", version, about = "Context-conditioned echo state networks and shared control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic demonstration family.
    MakeData(MakeData),
    /// Fit a model on a dataset (or the reference shared-control demos).
    Train(Train),
    /// Generate a trajectory with prediction intervals.
    Generate(Generate),
    /// Compare two arbitration policies on the reference scenario.
    Experiment(Experiment),
    /// Run the websocket session server.
    Serve(Serve),
}

#[derive(Args)]
struct MakeData {
    #[arg(long, default_value = "min_jerk_reach")]
    kind: FamilyKind,
    /// Semicolon-separated contexts, comma-separated values: "0.9,0.3;0.9,0.7".
    #[arg(long)]
    contexts: Option<String>,
    #[arg(long, default_value_t = 100)]
    steps: usize,
    #[arg(long, default_value_t = 0.0)]
    noise_std: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct ReservoirFlags {
    #[arg(long, default_value_t = 500)]
    reservoir_size: usize,
    #[arg(long, default_value_t = 0.3)]
    leak_rate: f64,
    #[arg(long, default_value_t = 0.9)]
    spectral_radius: f64,
    #[arg(long, default_value_t = 1.0)]
    input_scaling: f64,
    #[arg(long, default_value_t = 0.1)]
    density: f64,
    #[arg(long, default_value_t = 20)]
    washout: usize,
    /// Reservoir seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_LAMBDA, allow_hyphen_values = true)]
    lambda: f64,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
}

#[derive(Args)]
struct Train {
    /// Dataset file written by make-data.
    #[arg(long, required_unless_present = "reference")]
    data: Option<PathBuf>,
    /// Train on the checkpoint-conditioned demos of the shared-control scenario.
    #[arg(long, conflicts_with = "data")]
    reference: bool,
    #[command(flatten)]
    reservoir: ReservoirFlags,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Generate {
    #[arg(long)]
    model: PathBuf,
    /// Comma-separated context values.
    #[arg(long)]
    context: String,
    /// Number of rows; defaults to the training duration.
    #[arg(long)]
    steps: Option<usize>,
    /// Condition on the context as a captured state at this step and emit the remainder.
    #[arg(long)]
    checkpoint_step: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Experiment {
    /// Model trained with `train --reference`; trained on the fly when absent.
    #[arg(long)]
    model: Option<PathBuf>,
    #[command(flatten)]
    reservoir: ReservoirFlags,
    /// Arm policies, given twice: first arm then second arm.
    #[arg(long = "policy", num_args = 1, default_values_t = ["adaptive".to_string(), "fixed".to_string()])]
    policies: Vec<String>,
    #[arg(long, default_value_t = ArbitrationPolicy::DEFAULT_FIXED_OMEGA)]
    fixed_omega: f64,
    #[arg(long, default_value = "noisy")]
    operator: OperatorKind,
    #[arg(long, default_value_t = 0.1)]
    noise_std: f64,
    /// First operator seed; trial i uses seed + i in both arms.
    #[arg(long, default_value_t = 0)]
    operator_seed: u64,
    #[arg(long, default_value = "pooled", value_parser = ["pooled", "welch"])]
    t_test: String,
    /// Also write one CSV log per trial.
    #[arg(long)]
    logs: bool,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct Serve {
    /// Model trained with `train --reference`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    /// Advance one tick per human command instead of real time.
    #[arg(long)]
    lockstep: bool,
}

enum CliError {
    Usage(String),
    Runtime(String),
}

fn usage(e: impl Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn runtime(e: impl Display) -> CliError {
    CliError::Runtime(e.to_string())
}

type CliResult = Result<(), CliError>;

/// Flat `key = value` record of a run, written next to its outputs.
struct Manifest(Vec<(String, String)>);

impl Manifest {
    fn new(command: &str) -> Self {
        Self(vec![
            ("command".into(), command.into()),
            ("tool_version".into(), env!("CARGO_PKG_VERSION").into()),
        ])
    }

    fn set(&mut self, key: &str, value: impl Display) -> &mut Self {
        self.0.push((key.into(), value.to_string()));
        self
    }

    fn reservoir(&mut self, r: &ReservoirFlags) -> &mut Self {
        self.set("reservoir_size", r.reservoir_size)
            .set("leak_rate", r.leak_rate)
            .set("spectral_radius", r.spectral_radius)
            .set("input_scaling", r.input_scaling)
            .set("density", r.density)
            .set("washout", r.washout)
            .set("seed", r.seed)
            .set("lambda", r.lambda)
            .set("alpha", r.alpha)
    }

    fn write(&self, path: &Path) -> CliResult {
        let text: String = self.0.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
        std::fs::write(path, text).map_err(|e| runtime(format!("{}: {e}", path.display())))
    }
}

fn manifest_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest");
    artifact.with_file_name(name)
}

fn parse_values(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| usage(format!("`{t}` is not a number")))
        })
        .collect()
}

fn default_contexts(kind: FamilyKind) -> Vec<Vec<f64>> {
    match kind {
        FamilyKind::MinJerkReach => vec![vec![0.9, 0.3], vec![0.9, 0.5], vec![0.9, 0.7]],
        FamilyKind::SineBump => vec![vec![0.1], vec![0.2], vec![0.3]],
        _ => ReferenceSetup::TRAINING_OFFSETS.iter().map(|&c| vec![c]).collect(),
    }
}

impl ReservoirFlags {
    fn config(&self) -> Result<ReservoirConfig, CliError> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(usage("--lambda must be >= 0"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(usage("--alpha must lie in (0, 1)"));
        }
        let c = ReservoirConfig {
            n_reservoir: self.reservoir_size,
            leak_rate: self.leak_rate,
            spectral_radius: self.spectral_radius,
            input_scaling: self.input_scaling,
            density: self.density,
            washout: self.washout,
            seed: self.seed,
            ..Default::default()
        };
        c.validate().map_err(usage)?;
        Ok(c)
    }
}

fn check_file(path: &Path) -> CliResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("{} does not exist", path.display())))
    }
}

fn load_model(path: &Path) -> Result<(CesnModel, String), CliError> {
    check_file(path)?;
    let text = std::fs::read_to_string(path).map_err(runtime)?;
    let model = CesnModel::load(&text).map_err(runtime)?;
    Ok((model, model_id(&text)))
}

fn cmd_make_data(a: MakeData) -> CliResult {
    let contexts = match &a.contexts {
        Some(s) => s.split(';').map(parse_values).collect::<Result<Vec<_>, _>>()?,
        None => default_contexts(a.kind),
    };
    let family = make_family(a.kind, &contexts, a.steps, a.noise_std, a.seed).map_err(usage)?;
    save_dataset(&family, &a.out).map_err(runtime)?;
    let ctx: Vec<String> = contexts
        .iter()
        .map(|c| c.iter().map(f64::to_string).collect::<Vec<_>>().join(","))
        .collect();
    Manifest::new("make-data")
        .set("kind", a.kind)
        .set("contexts", ctx.join(";"))
        .set("steps", a.steps)
        .set("noise_std", a.noise_std)
        .set("seed", a.seed)
        .set("out", a.out.display())
        .write(&manifest_path(&a.out))?;
    println!("wrote {} demonstrations to {}", family.demos.len(), a.out.display());
    Ok(())
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

fn cmd_train(a: Train) -> CliResult {
    let config = a.reservoir.config()?;
    let (demos, source) = if a.reference {
        let plant = cesn::control::Plant::reference();
        let (demos, _) = ReferenceSetup::training_demos(&plant).map_err(runtime)?;
        (demos, "reference".to_string())
    } else {
        let path = a.data.as_deref().expect("clap requires --data without --reference");
        check_file(path)?;
        let fam = load_dataset(path).map_err(usage)?;
        (fam.demos, path.display().to_string())
    };
    let model = CesnModel::train(&demos, &config, a.reservoir.lambda, a.reservoir.alpha).map_err(runtime)?;
    let text = model.save();
    std::fs::write(&a.out, &text).map_err(runtime)?;
    println!(
        "trained on {} rows, dof {:.1}, s = {:?}",
        model.n_rows(),
        model.dof(),
        model.residual_std()
    );
    for (i, d) in demos.iter().enumerate() {
        let p = model.generate(&d.context, d.duration()).map_err(runtime)?;
        println!("demo {i}: regenerated RMSE {:.3e}", rmse(&p.mean, &d.targets));
    }
    let cal = model.calibration();
    Manifest::new("train")
        .set("data", source)
        .reservoir(&a.reservoir)
        .set("out", a.out.display())
        .set("model_id", model_id(&text))
        .set("h_lo", cal.h_lo)
        .set("h_hi", cal.h_hi)
        .write(&manifest_path(&a.out))
}

fn cmd_generate(a: Generate) -> CliResult {
    let (model, id) = load_model(&a.model)?;
    let context = parse_values(&a.context)?;
    let alpha = a.alpha.unwrap_or(model.alpha());
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(usage("--alpha must lie in (0, 1)"));
    }
    let steps = a.steps.unwrap_or(model.horizon());
    if steps == 0 {
        return Err(usage("--steps must be at least 1"));
    }
    let to_cli = |e: CesnError| match e {
        CesnError::ContextDimensionMismatch { .. } => usage(e),
        other => runtime(other),
    };
    let pred = match a.checkpoint_step {
        Some(k) => {
            if k >= steps {
                return Err(usage("--checkpoint-step must be below --steps"));
            }
            let p = model.condition_at(&context, k, steps - k).map_err(to_cli)?;
            if alpha == model.alpha() {
                p
            } else {
                return Err(usage("--alpha cannot be combined with --checkpoint-step"));
            }
        }
        None => model.generate_with_alpha(&context, steps, alpha).map_err(to_cli)?,
    };
    let ny = model.output_dim();
    let mut out = String::from("t");
    for j in 1..=ny {
        out.push_str(&format!(",y_{j}"));
    }
    for j in 1..=ny {
        out.push_str(&format!(",h_{j}"));
    }
    out.push('\n');
    let first = a.checkpoint_step.unwrap_or(0);
    for (k, (m, h)) in pred.mean.iter().zip(&pred.half_width).enumerate() {
        out.push_str(&(first + k).to_string());
        for v in m.iter().chain(h) {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    std::fs::write(&a.out, out).map_err(runtime)?;
    Manifest::new("generate")
        .set("model", a.model.display())
        .set("model_id", id)
        .set("context", &a.context)
        .set("steps", steps)
        .set("checkpoint_step", a.checkpoint_step.map_or("none".into(), |k| k.to_string()))
        .set("alpha", alpha)
        .set("out", a.out.display())
        .write(&manifest_path(&a.out))?;
    println!("wrote {} rows to {}", pred.len(), a.out.display());
    Ok(())
}

fn cmd_experiment(a: Experiment) -> CliResult {
    let [pa, pb] = a.policies.as_slice() else {
        return Err(usage("--policy must be given exactly twice (first arm, second arm)"));
    };
    let arms = [
        ArbitrationPolicy::parse(pa, a.fixed_omega).map_err(usage)?,
        ArbitrationPolicy::parse(pb, a.fixed_omega).map_err(usage)?,
    ];
    let t_test = if a.t_test == "welch" {
        TTestKind::Welch
    } else {
        TTestKind::Pooled
    };
    let started = std::time::Instant::now();
    let (model, trial, model_source) = match &a.model {
        Some(path) => {
            let (m, id) = load_model(path)?;
            let trial = ReferenceSetup::trial_setup().map_err(runtime)?;
            (m, trial, format!("{} ({id})", path.display()))
        }
        None => {
            let config = a.reservoir.config()?;
            let s = ReferenceSetup::build(&config, a.reservoir.lambda, a.reservoir.alpha).map_err(runtime)?;
            (s.model, s.trial, "trained".to_string())
        }
    };
    let config = ExperimentConfig {
        arms,
        operator_kind: a.operator,
        noise_std: a.noise_std,
        seed: a.operator_seed,
        t_test,
        ..Default::default()
    };
    let report = experiment(&model, &trial, &config, &reference_contexts()).map_err(runtime)?;
    std::fs::create_dir_all(&a.out_dir).map_err(runtime)?;
    let write = |name: &str, text: String| {
        std::fs::write(a.out_dir.join(name), text).map_err(runtime)
    };
    write("report.json", report.to_json())?;
    write("trials.csv", report.trials_csv())?;
    if a.logs {
        for (t, log) in report.trials.iter().zip(&report.logs) {
            write(
                &format!("trial_{:02}_arm{}.csv", t.trial, t.arm),
                log.to_csv(&t.context.to_string()),
            )?;
        }
    }
    let mut m = Manifest::new("experiment");
    m.set("model", model_source);
    if a.model.is_none() {
        m.reservoir(&a.reservoir);
    }
    m.set("policy_a", arms[0])
        .set("policy_b", arms[1])
        .set("operator", format!("{:?}", a.operator))
        .set("noise_std", a.noise_std)
        .set("operator_seed", a.operator_seed)
        .set("t_test", &a.t_test)
        .set("trials", report.trials.len())
        .set("out_dir", a.out_dir.display())
        .write(&a.out_dir.join("manifest.txt"))?;
    println!("{}", report.summary());
    println!("{} trials in {:.2?}", report.trials.len(), started.elapsed());
    Ok(())
}

fn cmd_serve(a: Serve) -> CliResult {
    let (model, id) = load_model(&a.model)?;
    let setup = ReferenceSetup::trial_setup().map_err(runtime)?;
    let mut state = AppState::new(Arc::new(model), id, setup);
    if a.lockstep {
        state = state.with_mode(TickMode::Lockstep);
    }
    let rt = tokio::runtime::Runtime::new().map_err(runtime)?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port))
            .await
            .map_err(|e| runtime(format!("cannot bind {}:{}: {e}", a.host, a.port)))?;
        let addr = listener.local_addr().map_err(runtime)?;
        println!("listening on http://{addr}");
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
            log::info!("interrupt received, shutting down");
        };
        service::serve(listener, Arc::new(state), shutdown).await.map_err(runtime)
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::MakeData(a) => cmd_make_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Experiment(a) => cmd_experiment(a),
        Command::Serve(a) => cmd_serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}
