//! Context-conditioned reservoir model with a ridge readout and per-step
//! prediction intervals.
//!
//! The reservoir is driven by `[clock, context...]`. During washout the clock
//! is held at 0; over the `H` kept steps it ramps `k / (H − 1)`. The context is
//! held constant for the whole run.
//!
//! For a kept state `v = [1; x(t)]` the interval half-width on output `j` is
//!
//! ```text
//! h_j = t_crit(dof, α) · s_j · sqrt(1 + vᵀ (XᵀX + λI)⁻¹ v)
//! ```

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::numerics::{dot, ridge_fit, t_critical, Matrix, NumericsError};
use crate::reservoir::{Reservoir, ReservoirConfig, ReservoirError, ReservoirState};

pub const DEFAULT_LAMBDA: f64 = 1e-8;
pub const DEFAULT_ALPHA: f64 = 0.05;
const FORMAT_HEADER: &str = "cesn-model";
const FORMAT_VERSION: u32 = 1;
/// Rough number of contexts visited by the calibration sweep.
const CALIBRATION_POINTS: f64 = 64.0;
const CALIBRATION_MAX_PER_AXIS: usize = 9;
const CALIBRATION_QUANTILE: f64 = 0.95;

#[derive(Debug, Error)]
pub enum CesnError {
    #[error(transparent)]
    Reservoir(#[from] ReservoirError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("no demonstrations given")]
    NoDemonstrations,
    #[error("invalid demonstration {index}: {reason}")]
    InvalidDemonstration { index: usize, reason: String },
    #[error("demonstration {index} has {found} context channels, expected {expected}")]
    ContextMismatch { index: usize, expected: usize, found: usize },
    #[error("context has {found} channels, model expects {expected}")]
    ContextDimensionMismatch { expected: usize, found: usize },
    #[error("regression is degenerate: n = {n}, effective parameters = {p_eff:.3}")]
    DegenerateRegression { n: usize, p_eff: f64 },
    #[error("unsupported model file version {found} (expected {FORMAT_VERSION})")]
    VersionMismatch { found: String },
    #[error("corrupt model file: {0}")]
    CorruptModel(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// One demonstrated trajectory and the context that selects it.
#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub context: Vec<f64>,
    /// One output vector per step; the duration is `targets.len()`.
    pub targets: Vec<Vec<f64>>,
}

impl Demonstration {
    pub fn new(context: Vec<f64>, targets: Vec<Vec<f64>>) -> Self {
        Self { context, targets }
    }

    pub fn duration(&self) -> usize {
        self.targets.len()
    }
}

/// Mean trajectory with symmetric interval half-widths, one row per step.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mean: Vec<Vec<f64>>,
    pub half_width: Vec<Vec<f64>>,
    pub alpha: f64,
}

impl Prediction {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// Lower and upper bounds at step `k`.
    pub fn interval(&self, k: usize) -> (Vec<f64>, Vec<f64>) {
        let m = &self.mean[k];
        let h = &self.half_width[k];
        (
            m.iter().zip(h).map(|(m, h)| m - h).collect(),
            m.iter().zip(h).map(|(m, h)| m + h).collect(),
        )
    }

    /// Per-step maximum half-width over output dimensions.
    pub fn max_half_width(&self) -> Vec<f64> {
        self.half_width
            .iter()
            .map(|h| h.iter().copied().fold(0.0, f64::max))
            .collect()
    }

    /// Average of all half-width entries.
    pub fn mean_half_width(&self) -> f64 {
        let n: usize = self.half_width.iter().map(Vec::len).sum();
        if n == 0 {
            return 0.0;
        }
        self.half_width.iter().flatten().sum::<f64>() / n as f64
    }
}

/// Half-width range used to map interval size to a human weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub h_lo: f64,
    pub h_hi: f64,
    /// Horizon used for the sweep (the training duration).
    pub horizon: usize,
}

#[derive(Debug, Clone)]
pub struct CesnModel {
    reservoir: Reservoir,
    w_out: Matrix,
    s: Vec<f64>,
    gram_inv: Matrix,
    n: usize,
    dof: f64,
    lambda: f64,
    alpha: f64,
    context_range: Vec<(f64, f64)>,
    calibration: Calibration,
}

/// Reservoir inputs for a run of `washout + horizon` steps.
fn input_sequence(context: &[f64], washout: usize, horizon: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(washout + horizon);
    let mut row = Vec::with_capacity(context.len() + 1);
    row.push(0.0);
    row.extend_from_slice(context);
    for _ in 0..washout {
        out.push(row.clone());
    }
    let span = horizon.saturating_sub(1).max(1) as f64;
    for k in 0..horizon {
        row[0] = k as f64 / span;
        out.push(row.clone());
    }
    out
}

/// Kept augmented states `[1; x]` for one context, starting from zero.
fn kept_states(
    reservoir: &Reservoir,
    context: &[f64],
    horizon: usize,
) -> Result<Vec<Vec<f64>>, ReservoirError> {
    let washout = reservoir.config().washout;
    let inputs = input_sequence(context, washout, horizon);
    let mut s = reservoir.zero_state();
    let mut out = Vec::with_capacity(horizon);
    for (k, u) in inputs.iter().enumerate() {
        reservoir.step_in_place(&mut s, u)?;
        if k >= washout {
            out.push(s.augmented());
        }
    }
    Ok(out)
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    // linear interpolation between closest ranks
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Grid over the per-channel training box. Channels with no spread get one point.
fn calibration_grid(range: &[(f64, f64)]) -> Vec<Vec<f64>> {
    let varying = range.iter().filter(|(lo, hi)| hi > lo).count();
    let per_axis = if varying == 0 {
        1
    } else {
        (CALIBRATION_POINTS.powf(1.0 / varying as f64).round() as usize)
            .clamp(2, CALIBRATION_MAX_PER_AXIS)
    };
    let axes: Vec<Vec<f64>> = range
        .iter()
        .map(|&(lo, hi)| {
            if hi > lo {
                (0..per_axis)
                    .map(|i| lo + (hi - lo) * i as f64 / (per_axis - 1) as f64)
                    .collect()
            } else {
                vec![lo]
            }
        })
        .collect();
    let mut grid = vec![Vec::new()];
    for axis in &axes {
        grid = grid
            .into_iter()
            .flat_map(|prefix| {
                axis.iter().map(move |&v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect();
    }
    grid
}

impl CesnModel {
    /// Fits the readout on all demonstrations.
    ///
    /// `config.n_input` and `config.n_output` are overwritten with `1 + C` and
    /// `N_y` taken from the demonstrations.
    pub fn train(
        demos: &[Demonstration],
        config: &ReservoirConfig,
        lambda: f64,
        alpha: f64,
    ) -> Result<Self, CesnError> {
        let first = demos.first().ok_or(CesnError::NoDemonstrations)?;
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(NumericsError::InvalidAlpha(alpha).into());
        }
        let c = first.context.len();
        let ny = first.targets.first().map_or(0, Vec::len);
        if ny == 0 {
            return Err(CesnError::InvalidDemonstration {
                index: 0,
                reason: "no targets".into(),
            });
        }
        let horizon = first.duration();
        for (index, d) in demos.iter().enumerate() {
            if d.context.len() != c {
                return Err(CesnError::ContextMismatch {
                    index,
                    expected: c,
                    found: d.context.len(),
                });
            }
            let bad = |reason: &str| CesnError::InvalidDemonstration {
                index,
                reason: reason.to_string(),
            };
            if d.duration() == 0 {
                return Err(bad("empty trajectory"));
            }
            if d.duration() != horizon {
                return Err(bad("duration differs from the first demonstration"));
            }
            if d.targets.iter().any(|y| y.len() != ny) {
                return Err(bad("ragged target vectors"));
            }
            if d.context.iter().chain(d.targets.iter().flatten()).any(|v| !v.is_finite()) {
                return Err(bad("non-finite value"));
            }
        }

        let mut config = config.clone();
        config.n_input = 1 + c;
        config.n_output = ny;
        let reservoir = Reservoir::build(&config)?;
        let p = config.n_reservoir + 1;

        let n = demos.len() * horizon;
        let mut xdata = Vec::with_capacity(n * p);
        let mut ydata = Vec::with_capacity(n * ny);
        for d in demos {
            for v in kept_states(&reservoir, &d.context, horizon)? {
                xdata.extend_from_slice(&v);
            }
            for y in &d.targets {
                ydata.extend_from_slice(y);
            }
        }
        let x = Matrix::from_vec(n, p, xdata)?;
        let y = Matrix::from_vec(n, ny, ydata)?;

        let fit = match ridge_fit(&x, &y, lambda) {
            Err(NumericsError::SingularSystem) => {
                return Err(CesnError::DegenerateRegression { n, p_eff: p as f64 })
            }
            r => r?,
        };
        let gram_inv = fit.gram_inv();
        let p_eff = fit.effective_params(&gram_inv);
        let dof = n as f64 - p_eff;
        if !(dof >= 1.0) {
            return Err(CesnError::DegenerateRegression { n, p_eff });
        }

        let mut sse = vec![0.0; ny];
        for (xr, yr) in x.row_iter().zip(y.row_iter()) {
            for (j, acc) in sse.iter_mut().enumerate() {
                let fitted: f64 = xr.iter().enumerate().map(|(i, xi)| xi * fit.coef[(i, j)]).sum();
                let e = yr[j] - fitted;
                *acc += e * e;
            }
        }
        let s = sse.iter().map(|v| (v / dof).sqrt()).collect();

        let context_range = (0..c)
            .map(|k| {
                demos.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| {
                    (lo.min(d.context[k]), hi.max(d.context[k]))
                })
            })
            .collect();

        let mut model = Self {
            reservoir,
            w_out: fit.coef.transpose(),
            s,
            gram_inv,
            n,
            dof,
            lambda,
            alpha,
            context_range,
            calibration: Calibration {
                h_lo: 0.0,
                h_hi: 0.0,
                horizon,
            },
        };
        model.calibration = model.calibrate(horizon)?;
        Ok(model)
    }

    /// Sweeps `generate` over a grid on the training context box.
    fn calibrate(&self, horizon: usize) -> Result<Calibration, CesnError> {
        let grid = calibration_grid(&self.context_range);
        let workers = std::thread::available_parallelism()
            .map_or(1, |n| n.get())
            .min(grid.len());
        let chunk = grid.len().div_ceil(workers);
        let results: Vec<Result<Vec<f64>, CesnError>> = std::thread::scope(|scope| {
            let handles: Vec<_> = grid
                .chunks(chunk)
                .map(|contexts| {
                    scope.spawn(move || {
                        let mut hs = Vec::new();
                        for ctx in contexts {
                            hs.extend(self.generate(ctx, horizon)?.max_half_width());
                        }
                        Ok(hs)
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("calibration worker panicked"))
                .collect()
        });
        let mut all = Vec::new();
        for r in results {
            all.extend(r?);
        }
        all.sort_by(f64::total_cmp);
        Ok(Calibration {
            h_lo: all[0],
            h_hi: quantile(&all, CALIBRATION_QUANTILE),
            horizon,
        })
    }

    pub fn reservoir(&self) -> &Reservoir {
        &self.reservoir
    }

    /// `N_y × (N_x + 1)` readout weights.
    pub fn w_out(&self) -> &Matrix {
        &self.w_out
    }

    /// Residual standard error per output dimension.
    pub fn residual_std(&self) -> &[f64] {
        &self.s
    }

    /// `(XᵀX + λI)⁻¹`.
    pub fn gram_inv(&self) -> &Matrix {
        &self.gram_inv
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn dof(&self) -> f64 {
        self.dof
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn context_dim(&self) -> usize {
        self.reservoir.config().n_input - 1
    }

    pub fn output_dim(&self) -> usize {
        self.reservoir.config().n_output
    }

    pub fn context_range(&self) -> &[(f64, f64)] {
        &self.context_range
    }

    pub fn calibration(&self) -> Calibration {
        self.calibration
    }

    /// Duration of the training demonstrations.
    pub fn horizon(&self) -> usize {
        self.calibration.horizon
    }

    /// Centroid of the training context box.
    pub fn context_center(&self) -> Vec<f64> {
        self.context_range.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect()
    }

    fn check_context(&self, context: &[f64]) -> Result<(), CesnError> {
        let expected = self.context_dim();
        if context.len() != expected {
            return Err(CesnError::ContextDimensionMismatch {
                expected,
                found: context.len(),
            });
        }
        if context.iter().any(|v| !v.is_finite()) {
            return Err(NumericsError::NonFinite.into());
        }
        Ok(())
    }

    /// `vᵀ (XᵀX + λI)⁻¹ v`, clamped at zero against rounding.
    pub fn leverage(&self, v: &[f64]) -> f64 {
        let gv: Vec<f64> = self.gram_inv.row_iter().map(|r| dot(r, v)).collect();
        dot(v, &gv).max(0.0)
    }

    fn predict_states(&self, states: &[Vec<f64>], alpha: f64) -> Result<Prediction, CesnError> {
        let t_crit = t_critical(self.dof, alpha)?;
        let zero_s = self.s.iter().all(|&s| s == 0.0);
        let mut mean = Vec::with_capacity(states.len());
        let mut half_width = Vec::with_capacity(states.len());
        for v in states {
            mean.push(self.w_out.row_iter().map(|w| dot(w, v)).collect());
            let scale = if zero_s {
                0.0
            } else {
                t_crit * (1.0 + self.leverage(v)).sqrt()
            };
            half_width.push(self.s.iter().map(|s| scale * s).collect());
        }
        Ok(Prediction {
            mean,
            half_width,
            alpha,
        })
    }

    /// Trajectory of `horizon` steps for `context` at the model's confidence level.
    pub fn generate(&self, context: &[f64], horizon: usize) -> Result<Prediction, CesnError> {
        self.generate_with_alpha(context, horizon, self.alpha)
    }

    pub fn generate_with_alpha(
        &self,
        context: &[f64],
        horizon: usize,
        alpha: f64,
    ) -> Result<Prediction, CesnError> {
        self.check_context(context)?;
        let states = kept_states(&self.reservoir, context, horizon)?;
        self.predict_states(&states, alpha)
    }

    /// Remainder of a trajectory conditioned on a captured plant state.
    ///
    /// The state is used as the context. The clock runs over the full horizon
    /// `step + remaining` from a zero reservoir and the first `step` kept
    /// outputs are dropped, so the clock reads `step / (H − 1)` at the first
    /// returned row.
    pub fn condition_at(
        &self,
        live_state: &[f64],
        step: usize,
        remaining: usize,
    ) -> Result<Prediction, CesnError> {
        self.check_context(live_state)?;
        if remaining == 0 {
            return Ok(Prediction {
                mean: Vec::new(),
                half_width: Vec::new(),
                alpha: self.alpha,
            });
        }
        let mut states = kept_states(&self.reservoir, live_state, step + remaining)?;
        states.drain(..step);
        self.predict_states(&states, self.alpha)
    }

    /// Human weight in `[0, 1]` from an interval half-width vector.
    ///
    /// Uses the largest component, mapped linearly between the calibration
    /// bounds and clamped. A collapsed calibration range (`h_hi ≤ h_lo`, e.g.
    /// a noiseless fit) acts as a step at `h_lo`.
    pub fn pi_to_weight(&self, half_width: &[f64]) -> f64 {
        pi_to_weight(self.calibration, half_width)
    }

    /// Reservoir states of a full generation run, for diagnostics.
    pub fn states(&self, context: &[f64], horizon: usize) -> Result<Vec<ReservoirState>, CesnError> {
        self.check_context(context)?;
        let washout = self.reservoir.config().washout;
        let inputs = input_sequence(context, washout, horizon);
        let mut all = self.reservoir.run(&inputs, &self.reservoir.zero_state())?;
        all.drain(..washout);
        Ok(all)
    }
}

/// See [`CesnModel::pi_to_weight`].
pub fn pi_to_weight(cal: Calibration, half_width: &[f64]) -> f64 {
    let h = half_width.iter().copied().fold(0.0, f64::max);
    if h <= cal.h_lo {
        0.0
    } else if cal.h_hi <= cal.h_lo || h >= cal.h_hi {
        1.0
    } else {
        ((h - cal.h_lo) / (cal.h_hi - cal.h_lo)).clamp(0.0, 1.0)
    }
}

// ---------------------------------------------------------------------------
// Model file
// ---------------------------------------------------------------------------

fn fmt_num(out: &mut String, v: f64) {
    // 17 significant digits round-trips every f64
    let _ = write!(out, "{v:.16e}");
}

fn write_matrix(out: &mut String, name: &str, m: &Matrix) {
    let _ = writeln!(out, "[{name}]\nshape = {} {}", m.rows(), m.cols());
    for r in m.row_iter() {
        for (i, v) in r.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            fmt_num(out, *v);
        }
        out.push('\n');
    }
}

fn write_kv(out: &mut String, key: &str, v: f64) {
    let _ = write!(out, "{key} = ");
    fmt_num(out, v);
    out.push('\n');
}

impl CesnModel {
    /// Serializes to the versioned text format.
    pub fn save(&self) -> String {
        let c = self.reservoir.config();
        let mut out = String::new();
        let _ = writeln!(out, "{FORMAT_HEADER} v{FORMAT_VERSION}");
        out.push_str("[config]\n");
        let _ = writeln!(out, "n_input = {}", c.n_input);
        let _ = writeln!(out, "n_reservoir = {}", c.n_reservoir);
        let _ = writeln!(out, "n_output = {}", c.n_output);
        write_kv(&mut out, "leak_rate", c.leak_rate);
        write_kv(&mut out, "spectral_radius", c.spectral_radius);
        write_kv(&mut out, "input_scaling", c.input_scaling);
        write_kv(&mut out, "density", c.density);
        let _ = writeln!(out, "seed = {}", c.seed);
        let _ = writeln!(out, "washout = {}", c.washout);
        write_matrix(&mut out, "w_in", self.reservoir.w_in());
        write_matrix(&mut out, "w", self.reservoir.w());
        write_matrix(&mut out, "w_out", &self.w_out);
        out.push_str("[s]\n");
        for (i, v) in self.s.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            fmt_num(&mut out, *v);
        }
        out.push('\n');
        write_matrix(&mut out, "gram_inv", &self.gram_inv);
        out.push_str("[regression]\n");
        let _ = writeln!(out, "n = {}", self.n);
        write_kv(&mut out, "dof", self.dof);
        write_kv(&mut out, "lambda", self.lambda);
        write_kv(&mut out, "alpha", self.alpha);
        out.push_str("[context_range]\n");
        for (lo, hi) in &self.context_range {
            fmt_num(&mut out, *lo);
            out.push(' ');
            fmt_num(&mut out, *hi);
            out.push('\n');
        }
        out.push_str("[calibration]\n");
        write_kv(&mut out, "h_lo", self.calibration.h_lo);
        write_kv(&mut out, "h_hi", self.calibration.h_hi);
        let _ = writeln!(out, "horizon = {}", self.calibration.horizon);
        out
    }

    pub fn load(text: &str) -> Result<Self, CesnError> {
        Parser::new(text)?.model()
    }

    pub fn save_file(&self, path: impl AsRef<Path>) -> Result<(), CesnError> {
        std::fs::write(path, self.save())?;
        Ok(())
    }

    pub fn load_file(path: impl AsRef<Path>) -> Result<Self, CesnError> {
        Self::load(&std::fs::read_to_string(path)?)
    }
}

/// Short content hash of a serialized model, used as its id.
pub fn model_id(text: &str) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(text.as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

struct Parser<'a> {
    lines: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
}

fn corrupt(msg: impl Into<String>) -> CesnError {
    CesnError::CorruptModel(msg.into())
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Result<Self, CesnError> {
        let mut lines = text.lines().enumerate().peekable();
        let (_, head) = lines.next().ok_or_else(|| corrupt("empty file"))?;
        let mut parts = head.split_whitespace();
        if parts.next() != Some(FORMAT_HEADER) {
            return Err(corrupt("missing cesn-model header"));
        }
        let version = parts.next().unwrap_or("");
        if version != format!("v{FORMAT_VERSION}") {
            return Err(CesnError::VersionMismatch {
                found: version.to_string(),
            });
        }
        Ok(Self { lines })
    }

    fn line(&mut self) -> Result<(usize, &'a str), CesnError> {
        self.lines
            .next()
            .map(|(i, l)| (i + 1, l))
            .ok_or_else(|| corrupt("unexpected end of file"))
    }

    fn section(&mut self, name: &str) -> Result<(), CesnError> {
        let (no, l) = self.line()?;
        if l.trim() != format!("[{name}]") {
            return Err(corrupt(format!("line {no}: expected section [{name}]")));
        }
        Ok(())
    }

    fn value(&mut self, key: &str) -> Result<(usize, &'a str), CesnError> {
        let (no, l) = self.line()?;
        match l.split_once('=') {
            Some((k, v)) if k.trim() == key => Ok((no, v.trim())),
            _ => Err(corrupt(format!("line {no}: expected `{key} = ...`"))),
        }
    }

    fn real(&mut self, key: &str) -> Result<f64, CesnError> {
        let (no, v) = self.value(key)?;
        parse_real(no, v)
    }

    fn count(&mut self, key: &str) -> Result<usize, CesnError> {
        let (no, v) = self.value(key)?;
        v.parse()
            .map_err(|_| corrupt(format!("line {no}: bad integer for {key}")))
    }

    fn row(&mut self, len: usize) -> Result<Vec<f64>, CesnError> {
        let (no, l) = self.line()?;
        let row = l
            .split_whitespace()
            .map(|t| parse_real(no, t))
            .collect::<Result<Vec<_>, _>>()?;
        if row.len() != len {
            return Err(corrupt(format!(
                "line {no}: expected {len} values, found {}",
                row.len()
            )));
        }
        Ok(row)
    }

    fn matrix(&mut self, name: &str) -> Result<Matrix, CesnError> {
        self.section(name)?;
        let (no, shape) = self.value("shape")?;
        let dims: Vec<usize> = shape
            .split_whitespace()
            .map(|t| t.parse())
            .collect::<Result<_, _>>()
            .map_err(|_| corrupt(format!("line {no}: bad shape")))?;
        let [rows, cols] = dims[..] else {
            return Err(corrupt(format!("line {no}: shape needs two numbers")));
        };
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            data.extend(self.row(cols)?);
        }
        Ok(Matrix::from_vec(rows, cols, data)?)
    }

    fn model(mut self) -> Result<CesnModel, CesnError> {
        self.section("config")?;
        let config = ReservoirConfig {
            n_input: self.count("n_input")?,
            n_reservoir: self.count("n_reservoir")?,
            n_output: self.count("n_output")?,
            leak_rate: self.real("leak_rate")?,
            spectral_radius: self.real("spectral_radius")?,
            input_scaling: self.real("input_scaling")?,
            density: self.real("density")?,
            seed: {
                let (no, v) = self.value("seed")?;
                v.parse()
                    .map_err(|_| corrupt(format!("line {no}: bad seed")))?
            },
            washout: self.count("washout")?,
        };
        let w_in = self.matrix("w_in")?;
        let w = self.matrix("w")?;
        let reservoir = Reservoir::from_parts(config, w_in, w)
            .map_err(|e| corrupt(e.to_string()))?;
        let (nx, ny) = (reservoir.n_reservoir(), reservoir.config().n_output);
        let c = reservoir.config().n_input.checked_sub(1).ok_or_else(|| corrupt("n_input is 0"))?;

        let w_out = self.matrix("w_out")?;
        if (w_out.rows(), w_out.cols()) != (ny, nx + 1) {
            return Err(corrupt("w_out shape does not match config"));
        }
        self.section("s")?;
        let s = self.row(ny)?;
        let gram_inv = self.matrix("gram_inv")?;
        if (gram_inv.rows(), gram_inv.cols()) != (nx + 1, nx + 1) {
            return Err(corrupt("gram_inv shape does not match config"));
        }
        self.section("regression")?;
        let n = self.count("n")?;
        let dof = self.real("dof")?;
        let lambda = self.real("lambda")?;
        let alpha = self.real("alpha")?;
        self.section("context_range")?;
        let mut context_range = Vec::with_capacity(c);
        for _ in 0..c {
            let r = self.row(2)?;
            context_range.push((r[0], r[1]));
        }
        self.section("calibration")?;
        let calibration = Calibration {
            h_lo: self.real("h_lo")?,
            h_hi: self.real("h_hi")?,
            horizon: self.count("horizon")?,
        };
        if s.iter().any(|v| *v < 0.0) || !(dof >= 1.0) || !(alpha > 0.0 && alpha < 1.0) {
            return Err(corrupt("regression statistics out of range"));
        }
        Ok(CesnModel {
            reservoir,
            w_out,
            s,
            gram_inv,
            n,
            dof,
            lambda,
            alpha,
            context_range,
            calibration,
        })
    }
}

fn parse_real(line: usize, tok: &str) -> Result<f64, CesnError> {
    match tok.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(corrupt(format!("line {line}: bad number `{tok}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ReservoirConfig {
        ReservoirConfig {
            n_reservoir: 40,
            washout: 5,
            seed: 3,
            ..Default::default()
        }
    }

    /// Straight reaches to `(g, 1 − g)` over 30 steps.
    fn ramp_demos(goals: &[f64]) -> Vec<Demonstration> {
        goals
            .iter()
            .map(|&g| {
                let targets = (0..30)
                    .map(|k| {
                        let s = k as f64 / 29.0;
                        vec![g * s, (1.0 - g) * s]
                    })
                    .collect();
                Demonstration::new(vec![g], targets)
            })
            .collect()
    }

    #[test]
    fn input_sequence_layout() {
        let u = input_sequence(&[0.7, -1.0], 2, 3);
        assert_eq!(u.len(), 5);
        assert_eq!(u[0], vec![0.0, 0.7, -1.0]);
        assert_eq!(u[1], vec![0.0, 0.7, -1.0]);
        assert_eq!(u[2][0], 0.0);
        assert_eq!(u[3][0], 0.5);
        assert_eq!(u[4], vec![1.0, 0.7, -1.0]);
        // single-step horizon keeps the clock at 0
        assert_eq!(input_sequence(&[], 0, 1), vec![vec![0.0]]);
    }

    #[test]
    fn quantile_interpolates() {
        let v = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.0), 0.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert!((quantile(&v, 0.95) - 3.8).abs() < 1e-15);
        assert_eq!(quantile(&[2.5], 0.95), 2.5);
    }

    #[test]
    fn grid_covers_the_box() {
        let g = calibration_grid(&[(0.0, 1.0), (2.0, 2.0)]);
        assert_eq!(g.len(), 9);
        assert!(g.iter().all(|p| p[1] == 2.0));
        assert_eq!(g[0][0], 0.0);
        assert_eq!(g[8][0], 1.0);
        assert_eq!(calibration_grid(&[(0.0, 1.0), (0.0, 1.0)]).len(), 64);
        assert_eq!(calibration_grid(&[(1.0, 1.0)]), vec![vec![1.0]]);
    }

    #[test]
    fn train_and_generate_shapes() {
        let m = CesnModel::train(&ramp_demos(&[0.2, 0.5, 0.8]), &small_config(), 1e-6, 0.05).unwrap();
        assert_eq!(m.context_dim(), 1);
        assert_eq!(m.output_dim(), 2);
        assert_eq!(m.n_rows(), 90);
        assert!(m.dof() >= 1.0);
        assert!(m.gram_inv().is_symmetric(1e-9));
        let p = m.generate(&[0.5], 30).unwrap();
        assert_eq!(p.len(), 30);
        assert!(p.half_width.iter().flatten().all(|h| *h >= 0.0));
        // leverage floor
        let t = t_critical(m.dof(), 0.05).unwrap();
        for h in &p.half_width {
            for (hj, sj) in h.iter().zip(m.residual_std()) {
                assert!(*hj >= t * sj * (1.0 - 1e-12));
            }
        }
        let cal = m.calibration();
        assert!(cal.h_lo < cal.h_hi);
        assert_eq!(cal.horizon, 30);
    }

    #[test]
    fn interval_is_symmetric() {
        let m = CesnModel::train(&ramp_demos(&[0.2, 0.8]), &small_config(), 1e-6, 0.05).unwrap();
        let p = m.generate(&[0.4], 10).unwrap();
        let (lo, hi) = p.interval(3);
        for j in 0..2 {
            assert_eq!(lo[j], p.mean[3][j] - p.half_width[3][j]);
            assert_eq!(hi[j], p.mean[3][j] + p.half_width[3][j]);
        }
    }

    #[test]
    fn errors_on_bad_demos() {
        let cfg = small_config();
        assert!(matches!(
            CesnModel::train(&[], &cfg, 1e-6, 0.05),
            Err(CesnError::NoDemonstrations)
        ));
        let mut d = ramp_demos(&[0.2, 0.8]);
        d[1].context.push(1.0);
        assert!(matches!(
            CesnModel::train(&d, &cfg, 1e-6, 0.05),
            Err(CesnError::ContextMismatch { index: 1, .. })
        ));
        let d = ramp_demos(&[0.2, 0.8]);
        assert!(CesnModel::train(&d, &cfg, 1e-6, 1.5).is_err());
        let m = CesnModel::train(&d, &cfg, 1e-6, 0.05).unwrap();
        assert!(matches!(
            m.generate(&[0.1, 0.2], 5),
            Err(CesnError::ContextDimensionMismatch { expected: 1, found: 2 })
        ));
    }

    #[test]
    fn too_few_rows_without_ridge_is_degenerate() {
        // 2 × 10 rows against 41 columns
        let demos: Vec<_> = ramp_demos(&[0.2, 0.8])
            .into_iter()
            .map(|mut d| {
                d.targets.truncate(10);
                d
            })
            .collect();
        assert!(matches!(
            CesnModel::train(&demos, &small_config(), 0.0, 0.05),
            Err(CesnError::DegenerateRegression { .. })
        ));
    }

    #[test]
    fn condition_at_drops_prefix_of_full_run() {
        let m = CesnModel::train(&ramp_demos(&[0.2, 0.5, 0.8]), &small_config(), 1e-6, 0.05).unwrap();
        let full = m.generate(&[0.3], 30).unwrap();
        let tail = m.condition_at(&[0.3], 12, 18).unwrap();
        assert_eq!(tail.mean[..], full.mean[12..]);
        assert_eq!(tail.half_width[..], full.half_width[12..]);
        assert!(m.condition_at(&[0.3], 12, 0).unwrap().is_empty());
    }

    #[test]
    fn weight_mapping() {
        let cal = Calibration {
            h_lo: 0.1,
            h_hi: 0.3,
            horizon: 1,
        };
        assert_eq!(pi_to_weight(cal, &[0.05, 0.1]), 0.0);
        assert_eq!(pi_to_weight(cal, &[0.5]), 1.0);
        assert!((pi_to_weight(cal, &[0.2, 0.0]) - 0.5).abs() < 1e-15);
        let flat = Calibration {
            h_lo: 0.0,
            h_hi: 0.0,
            horizon: 1,
        };
        assert_eq!(pi_to_weight(flat, &[0.0, 0.0]), 0.0);
        assert_eq!(pi_to_weight(flat, &[1e-9]), 1.0);
    }

    #[test]
    fn save_load_round_trip() {
        let m = CesnModel::train(&ramp_demos(&[0.2, 0.5, 0.8]), &small_config(), 1e-6, 0.05).unwrap();
        let text = m.save();
        let back = CesnModel::load(&text).unwrap();
        assert_eq!(back.save(), text);
        assert_eq!(back.generate(&[0.35], 30).unwrap(), m.generate(&[0.35], 30).unwrap());
        assert_eq!(back.calibration(), m.calibration());
    }

    #[test]
    fn load_rejects_bad_files() {
        let m = CesnModel::train(&ramp_demos(&[0.2, 0.8]), &small_config(), 1e-6, 0.05).unwrap();
        let text = m.save();
        let cut = &text[..text.len() / 2];
        assert!(matches!(CesnModel::load(cut), Err(CesnError::CorruptModel(_))));
        let v2 = text.replacen("cesn-model v1", "cesn-model v2", 1);
        assert!(matches!(CesnModel::load(&v2), Err(CesnError::VersionMismatch { .. })));
        assert!(matches!(CesnModel::load(""), Err(CesnError::CorruptModel(_))));
        let nan = text.replacen("[s]\n", "[s]\nnan ", 1);
        assert!(matches!(CesnModel::load(&nan), Err(CesnError::CorruptModel(_))));
    }
}
