//! Synthetic demonstration families and the dataset text format.
//!
//! All families live in the unit square, start at [`START`] and use the
//! minimum-jerk phase `s(τ) = 10τ³ − 15τ⁴ + 6τ⁵` with `τ = k / (T − 1)`.
//!
//! Dataset files are comma separated with one header line:
//!
//! ```text
//! #cesn-dataset v1 kind=min_jerk_reach C=2 N_y=2 T=100 count=3
//! demo_id,t,c_1,...,c_C,y_1,...,y_Ny      (count × T rows, no column header)
//! ```

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::model::Demonstration;
use crate::numerics::RandomSource;

pub const START: [f64; 2] = [0.1, 0.5];
/// Default end point for families whose context is not the goal.
pub const DEFAULT_GOAL: [f64; 2] = [0.9, 0.5];
const DATASET_HEADER: &str = "#cesn-dataset";
const DATASET_VERSION: &str = "v1";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("unknown family kind `{0}` (expected min_jerk_reach, sine_bump or obstacle_arc)")]
    UnknownKind(String),
    #[error("invalid family request: {0}")]
    InvalidRequest(String),
    #[error("line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("dataset schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FamilyKind {
    /// Straight minimum-jerk reach; context is the 2-D goal.
    MinJerkReach,
    /// Reach to [`DEFAULT_GOAL`] with a lateral `amp·sin(πs)` bump; context is `amp`.
    SineBump,
    /// Circular arc from start to [`DEFAULT_GOAL`] through `(0.5, 0.5 + c)`; context is `c`.
    ObstacleArc,
    /// Data recorded elsewhere; only valid in dataset files.
    Custom,
}

impl FamilyKind {
    pub fn name(self) -> &'static str {
        match self {
            FamilyKind::MinJerkReach => "min_jerk_reach",
            FamilyKind::SineBump => "sine_bump",
            FamilyKind::ObstacleArc => "obstacle_arc",
            FamilyKind::Custom => "custom",
        }
    }

    /// Context length expected by the generator.
    pub fn context_dim(self) -> Option<usize> {
        match self {
            FamilyKind::MinJerkReach => Some(2),
            FamilyKind::SineBump | FamilyKind::ObstacleArc => Some(1),
            FamilyKind::Custom => None,
        }
    }
}

impl fmt::Display for FamilyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FamilyKind {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, DataError> {
        match s {
            "min_jerk_reach" => Ok(FamilyKind::MinJerkReach),
            "sine_bump" => Ok(FamilyKind::SineBump),
            "obstacle_arc" => Ok(FamilyKind::ObstacleArc),
            "custom" => Ok(FamilyKind::Custom),
            other => Err(DataError::UnknownKind(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryFamily {
    pub kind: FamilyKind,
    pub demos: Vec<Demonstration>,
}

impl TrajectoryFamily {
    pub fn contexts(&self) -> Vec<Vec<f64>> {
        self.demos.iter().map(|d| d.context.clone()).collect()
    }

    pub fn duration(&self) -> usize {
        self.demos.first().map_or(0, Demonstration::duration)
    }

    pub fn context_dim(&self) -> usize {
        self.demos.first().map_or(0, |d| d.context.len())
    }

    pub fn output_dim(&self) -> usize {
        self.demos
            .first()
            .and_then(|d| d.targets.first())
            .map_or(0, Vec::len)
    }
}

/// Minimum-jerk phase on `[0, 1]`.
pub fn min_jerk_phase(tau: f64) -> f64 {
    let t3 = tau * tau * tau;
    t3 * (10.0 - 15.0 * tau + 6.0 * tau * tau)
}

fn lerp(a: [f64; 2], b: [f64; 2], s: f64) -> [f64; 2] {
    [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]
}

/// Point on the start → goal arc through `(0.5, 0.5 + c)` at phase `s`.
pub fn arc_point(c: f64, s: f64) -> [f64; 2] {
    if c == 0.0 {
        return lerp(START, DEFAULT_GOAL, s);
    }
    // centre lies on the perpendicular bisector x = 0.5
    let half = 0.5 * (DEFAULT_GOAL[0] - START[0]);
    let cx = 0.5 * (START[0] + DEFAULT_GOAL[0]);
    let e = (c * c - half * half) / (2.0 * c);
    let cy = START[1] + e;
    let r = (c - e).abs();
    let ta = (START[1] - cy).atan2(START[0] - cx);
    let tb = (DEFAULT_GOAL[1] - cy).atan2(DEFAULT_GOAL[0] - cx);
    let tau = std::f64::consts::TAU;
    // c > 0 passes above the chord (clockwise), c < 0 below
    let sweep = if c > 0.0 {
        -(ta - tb).rem_euclid(tau)
    } else {
        (tb - ta).rem_euclid(tau)
    };
    let th = ta + s * sweep;
    [cx + r * th.cos(), cy + r * th.sin()]
}

fn clean_point(kind: FamilyKind, context: &[f64], s: f64) -> [f64; 2] {
    match kind {
        FamilyKind::MinJerkReach => lerp(START, [context[0], context[1]], s),
        FamilyKind::SineBump => {
            let p = lerp(START, DEFAULT_GOAL, s);
            [p[0], p[1] + context[0] * (std::f64::consts::PI * s).sin()]
        }
        FamilyKind::ObstacleArc => arc_point(context[0], s),
        FamilyKind::Custom => unreachable!("custom families have no generator"),
    }
}

/// Builds one demonstration per context.
///
/// With `noise_std > 0` independent Gaussian noise is added to every target
/// coordinate, drawn from `seed` in demo, step, coordinate order. The
/// noiseless curve must stay inside the unit square; noisy samples are not
/// clipped.
pub fn make_family(
    kind: FamilyKind,
    contexts: &[Vec<f64>],
    t: usize,
    noise_std: f64,
    seed: u64,
) -> Result<TrajectoryFamily, DataError> {
    let dim = kind
        .context_dim()
        .ok_or_else(|| DataError::UnknownKind(kind.name().into()))?;
    if t < 2 {
        return Err(DataError::InvalidRequest("T must be at least 2".into()));
    }
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(DataError::InvalidRequest("noise_std must be >= 0".into()));
    }
    let mut rng = RandomSource::new(seed);
    let mut demos = Vec::with_capacity(contexts.len());
    for (i, ctx) in contexts.iter().enumerate() {
        if ctx.len() != dim {
            return Err(DataError::InvalidRequest(format!(
                "context {i} has {} values, {kind} needs {dim}",
                ctx.len()
            )));
        }
        if ctx.iter().any(|v| !v.is_finite()) {
            return Err(DataError::InvalidRequest(format!("context {i} is not finite")));
        }
        let mut targets = Vec::with_capacity(t);
        for k in 0..t {
            let s = min_jerk_phase(k as f64 / (t - 1) as f64);
            let p = clean_point(kind, ctx, s);
            if !p.iter().all(|v| (0.0..=1.0).contains(v)) {
                return Err(DataError::InvalidRequest(format!(
                    "context {i} leaves the unit workspace at step {k}"
                )));
            }
            let mut y = p.to_vec();
            if noise_std > 0.0 {
                for v in &mut y {
                    *v += rng.normal(0.0, noise_std);
                }
            }
            targets.push(y);
        }
        demos.push(Demonstration::new(ctx.clone(), targets));
    }
    Ok(TrajectoryFamily { kind, demos })
}

/// Evenly spaced contexts on `[lo, hi]` for one-channel families.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..count)
            .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
            .collect(),
    }
}

pub fn write_dataset(f: &TrajectoryFamily) -> Result<String, DataError> {
    let (c, ny, t) = (f.context_dim(), f.output_dim(), f.duration());
    for (i, d) in f.demos.iter().enumerate() {
        if d.context.len() != c || d.duration() != t || d.targets.iter().any(|y| y.len() != ny) {
            return Err(DataError::SchemaMismatch(format!(
                "demonstration {i} does not match the family shape"
            )));
        }
    }
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{DATASET_HEADER} {DATASET_VERSION} kind={} C={c} N_y={ny} T={t} count={}",
        f.kind,
        f.demos.len()
    );
    for (i, d) in f.demos.iter().enumerate() {
        for (k, y) in d.targets.iter().enumerate() {
            let _ = write!(out, "{i},{k}");
            for v in d.context.iter().chain(y) {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
    }
    Ok(out)
}

/// Parses `#<tag> v1 key=value ...` into its key/value pairs.
pub(crate) fn parse_header<'a>(
    line: &'a str,
    tag: &str,
    version: &str,
) -> Result<Vec<(&'a str, &'a str)>, String> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some(tag) {
        return Err(format!("expected `{tag}` header"));
    }
    if parts.next() != Some(version) {
        return Err(format!("expected version {version}"));
    }
    parts
        .map(|p| p.split_once('=').ok_or_else(|| format!("bad header field `{p}`")))
        .collect()
}

pub fn read_dataset(text: &str) -> Result<TrajectoryFamily, DataError> {
    let mut lines = text.lines().enumerate();
    let header = match lines.next() {
        Some((_, l)) if !l.trim().is_empty() => l,
        _ => return Err(DataError::SchemaMismatch("empty file".into())),
    };
    let fields = parse_header(header, DATASET_HEADER, DATASET_VERSION).map_err(DataError::SchemaMismatch)?;
    let get = |key: &str| -> Result<&str, DataError> {
        fields
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| DataError::SchemaMismatch(format!("header is missing `{key}`")))
    };
    let num = |key: &str| -> Result<usize, DataError> {
        get(key)?
            .parse()
            .map_err(|_| DataError::SchemaMismatch(format!("header field `{key}` is not a count")))
    };
    let kind: FamilyKind = get("kind")?.parse()?;
    let (c, ny, t, count) = (num("C")?, num("N_y")?, num("T")?, num("count")?);
    if ny == 0 || t == 0 {
        return Err(DataError::SchemaMismatch("N_y and T must be positive".into()));
    }
    let width = 2 + c + ny;

    let mut demos: Vec<Demonstration> = Vec::with_capacity(count);
    let mut rows = 0usize;
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| DataError::ParseError {
            line: line_no,
            message,
        };
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != width {
            return Err(err(format!("expected {width} columns, found {}", cols.len())));
        }
        let (demo, step) = (rows / t, rows % t);
        let id: usize = cols[0].parse().map_err(|_| err("bad demo_id".into()))?;
        let k: usize = cols[1].parse().map_err(|_| err("bad step index".into()))?;
        if id != demo || k != step {
            return Err(err(format!("expected demo {demo} step {step}, found {id},{k}")));
        }
        let vals = cols[2..]
            .iter()
            .map(|s| match s.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(err(format!("bad number `{s}`"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let (ctx, y) = vals.split_at(c);
        if step == 0 {
            demos.push(Demonstration::new(ctx.to_vec(), Vec::with_capacity(t)));
        }
        let d = demos.last_mut().expect("demo pushed at step 0");
        if d.context != ctx {
            return Err(err("context changes within a demonstration".into()));
        }
        d.targets.push(y.to_vec());
        rows += 1;
    }
    if rows != count * t {
        return Err(DataError::SchemaMismatch(format!(
            "header declares {} rows, found {rows}",
            count * t
        )));
    }
    Ok(TrajectoryFamily { kind, demos })
}

pub fn save_dataset(f: &TrajectoryFamily, path: impl AsRef<Path>) -> Result<(), DataError> {
    std::fs::write(path, write_dataset(f)?)?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<TrajectoryFamily, DataError> {
    read_dataset(&std::fs::read_to_string(path)?)
}
