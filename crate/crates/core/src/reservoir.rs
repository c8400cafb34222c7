//! Fixed random leaky-integrator reservoir and its linear readout.
//!
//! ```text
//! x̃(t) = tanh(W_in [1; u(t)] + W x(t−1))
//! x(t)  = (1 − α) x(t−1) + α x̃(t)
//! y(t)  = W_out [1; x(t)]
//! ```

use thiserror::Error;

use crate::numerics::{dot, spectral_radius, Matrix, NumericsError, RandomSource, SparseRows};

/// Power-iteration settings used when scaling `W`.
pub const SPECTRAL_TOL: f64 = 1e-12;
pub const SPECTRAL_MAX_ITER: usize = 200_000;
/// Attempts made with perturbed seeds when power iteration fails on a draw.
const BUILD_ATTEMPTS: u64 = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReservoirError {
    #[error("invalid reservoir config: {0}")]
    InvalidConfig(String),
    #[error("input has {found} channels, reservoir expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("could not scale recurrent weights to the target spectral radius: {0}")]
    SpectralRadiusFailure(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReservoirConfig {
    /// Input channels `N_u`, excluding the bias.
    pub n_input: usize,
    /// Reservoir neurons `N_x`.
    pub n_reservoir: usize,
    /// Readout dimension `N_y`.
    pub n_output: usize,
    /// Leaking rate α in (0, 1].
    pub leak_rate: f64,
    pub spectral_radius: f64,
    /// `W_in` entries are uniform in `[−input_scaling, input_scaling]`.
    pub input_scaling: f64,
    /// Fraction of non-zero entries in `W`.
    pub density: f64,
    pub seed: u64,
    /// Initial states discarded before regression and generation.
    pub washout: usize,
}

impl Default for ReservoirConfig {
    fn default() -> Self {
        Self {
            n_input: 3,
            n_reservoir: 500,
            n_output: 2,
            leak_rate: 0.3,
            spectral_radius: 0.9,
            input_scaling: 1.0,
            density: 0.1,
            seed: 0,
            washout: 20,
        }
    }
}

impl ReservoirConfig {
    pub fn validate(&self) -> Result<(), ReservoirError> {
        let bad = |m: &str| Err(ReservoirError::InvalidConfig(m.to_string()));
        if self.n_reservoir == 0 {
            return bad("n_reservoir must be at least 1");
        }
        if self.n_output == 0 {
            return bad("n_output must be at least 1");
        }
        if !(self.leak_rate > 0.0 && self.leak_rate <= 1.0) {
            return bad("leak_rate must lie in (0, 1]");
        }
        if !(self.spectral_radius > 0.0 && self.spectral_radius.is_finite()) {
            return bad("spectral_radius must be positive");
        }
        if !(self.input_scaling > 0.0 && self.input_scaling.is_finite()) {
            return bad("input_scaling must be positive");
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return bad("density must lie in (0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReservoirState {
    pub x: Vec<f64>,
    /// Number of updates applied since the initial state.
    pub t: usize,
}

impl ReservoirState {
    pub fn zeros(n: usize) -> Self {
        Self { x: vec![0.0; n], t: 0 }
    }

    /// `[1; x]`, the regressor row used by the readout.
    pub fn augmented(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.x.len() + 1);
        v.push(1.0);
        v.extend_from_slice(&self.x);
        v
    }
}

/// Immutable after construction; share it freely across threads.
#[derive(Debug, Clone)]
pub struct Reservoir {
    config: ReservoirConfig,
    w_in: Matrix,
    w: Matrix,
    w_sparse: SparseRows,
}

impl Reservoir {
    /// Draws `W_in` and `W` from `config.seed`, then rescales `W` to the
    /// target spectral radius.
    ///
    /// Draw order is `W_in` row-major, then for every `W` entry a Bernoulli
    /// mask followed by a uniform value when the mask is set. If power
    /// iteration fails on a draw (or `W` comes out all zero), the draw is
    /// repeated with seed `seed + k·0x9E3779B97F4A7C15`, k = 1, 2.
    pub fn build(config: &ReservoirConfig) -> Result<Self, ReservoirError> {
        config.validate()?;
        let mut last_err = String::new();
        for attempt in 0..BUILD_ATTEMPTS {
            let seed = config
                .seed
                .wrapping_add(attempt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
            match Self::draw(config, seed) {
                Ok(r) => return Ok(r),
                Err(e) => last_err = e,
            }
        }
        Err(ReservoirError::SpectralRadiusFailure(last_err))
    }

    fn draw(config: &ReservoirConfig, seed: u64) -> Result<Self, String> {
        let nx = config.n_reservoir;
        let mut rng = RandomSource::new(seed);
        let s = config.input_scaling;
        let w_in = Matrix::from_fn(nx, config.n_input + 1, |_, _| rng.uniform(-s, s));
        let mut w = Matrix::from_fn(nx, nx, |_, _| {
            if rng.bernoulli(config.density) {
                rng.uniform(-1.0, 1.0)
            } else {
                0.0
            }
        });
        let rho = spectral_radius(&w, SPECTRAL_TOL, SPECTRAL_MAX_ITER).map_err(|e| e.to_string())?;
        if !(rho > 0.0) {
            return Err("recurrent weights have zero spectral radius".into());
        }
        w.scale(config.spectral_radius / rho);
        let w_sparse = SparseRows::from_dense(&w);
        Ok(Self {
            config: config.clone(),
            w_in,
            w,
            w_sparse,
        })
    }

    /// Reassembles a reservoir from stored weights (no rescaling).
    pub fn from_parts(config: ReservoirConfig, w_in: Matrix, w: Matrix) -> Result<Self, ReservoirError> {
        config.validate()?;
        Self::from_parts_unchecked(config, w_in, w)
    }

    pub(crate) fn from_parts_unchecked(
        config: ReservoirConfig,
        w_in: Matrix,
        w: Matrix,
    ) -> Result<Self, ReservoirError> {
        let nx = config.n_reservoir;
        if w_in.rows() != nx || w_in.cols() != config.n_input + 1 {
            return Err(ReservoirError::InvalidConfig(format!(
                "w_in is {}x{}, expected {}x{}",
                w_in.rows(),
                w_in.cols(),
                nx,
                config.n_input + 1
            )));
        }
        if w.rows() != nx || w.cols() != nx {
            return Err(ReservoirError::InvalidConfig(format!(
                "w is {}x{}, expected {nx}x{nx}",
                w.rows(),
                w.cols()
            )));
        }
        let w_sparse = SparseRows::from_dense(&w);
        Ok(Self {
            config,
            w_in,
            w,
            w_sparse,
        })
    }

    pub fn config(&self) -> &ReservoirConfig {
        &self.config
    }

    pub fn w_in(&self) -> &Matrix {
        &self.w_in
    }

    pub fn w(&self) -> &Matrix {
        &self.w
    }

    pub fn n_reservoir(&self) -> usize {
        self.config.n_reservoir
    }

    pub fn zero_state(&self) -> ReservoirState {
        ReservoirState::zeros(self.config.n_reservoir)
    }

    fn check_input(&self, u: &[f64]) -> Result<(), ReservoirError> {
        if u.len() != self.config.n_input {
            return Err(ReservoirError::DimensionMismatch {
                expected: self.config.n_input,
                found: u.len(),
            });
        }
        Ok(())
    }

    /// One leaky-integrator step from `s` driven by `u` (bias excluded).
    pub fn update(&self, s: &ReservoirState, u: &[f64]) -> Result<ReservoirState, ReservoirError> {
        let mut next = s.clone();
        self.step_in_place(&mut next, u)?;
        Ok(next)
    }

    pub fn step_in_place(&self, s: &mut ReservoirState, u: &[f64]) -> Result<(), ReservoirError> {
        self.check_input(u)?;
        if s.x.len() != self.config.n_reservoir {
            return Err(ReservoirError::DimensionMismatch {
                expected: self.config.n_reservoir,
                found: s.x.len(),
            });
        }
        let mut pre = vec![0.0; self.config.n_reservoir];
        self.w_sparse.matvec_into(&s.x, &mut pre);
        let alpha = self.config.leak_rate;
        for ((xi, pi), row) in s.x.iter_mut().zip(&pre).zip(self.w_in.row_iter()) {
            let drive = row[0] + dot(&row[1..], u) + pi;
            *xi = (1.0 - alpha) * *xi + alpha * drive.tanh();
        }
        s.t += 1;
        Ok(())
    }

    /// States after each input, starting from `initial`. Washout is left to the caller.
    pub fn run<U: AsRef<[f64]>>(
        &self,
        inputs: &[U],
        initial: &ReservoirState,
    ) -> Result<Vec<ReservoirState>, ReservoirError> {
        let mut s = initial.clone();
        let mut out = Vec::with_capacity(inputs.len());
        for u in inputs {
            self.step_in_place(&mut s, u.as_ref())?;
            out.push(s.clone());
        }
        Ok(out)
    }
}

/// `y = W_out [1; x]`.
pub fn readout(w_out: &Matrix, s: &ReservoirState) -> Result<Vec<f64>, ReservoirError> {
    if w_out.cols() != s.x.len() + 1 {
        return Err(ReservoirError::DimensionMismatch {
            expected: w_out.cols().saturating_sub(1),
            found: s.x.len(),
        });
    }
    Ok(w_out
        .row_iter()
        .map(|r| r[0] + dot(&r[1..], &s.x))
        .collect())
}

impl From<NumericsError> for ReservoirError {
    fn from(e: NumericsError) -> Self {
        ReservoirError::SpectralRadiusFailure(e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(seed: u64) -> ReservoirConfig {
        ReservoirConfig {
            n_input: 2,
            n_reservoir: 60,
            seed,
            ..ReservoirConfig::default()
        }
    }

    fn scalar_reservoir(alpha: f64, w_in: [f64; 2], w: f64) -> Reservoir {
        let config = ReservoirConfig {
            n_input: 1,
            n_reservoir: 1,
            n_output: 1,
            leak_rate: alpha,
            ..ReservoirConfig::default()
        };
        Reservoir::from_parts_unchecked(
            config,
            Matrix::from_rows(&[w_in]).unwrap(),
            Matrix::from_rows(&[[w]]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn build_is_deterministic_and_seed_sensitive() {
        let c = ReservoirConfig {
            density: 1.0,
            ..small_config(5)
        };
        let a = Reservoir::build(&c).unwrap();
        let b = Reservoir::build(&c).unwrap();
        assert_eq!(a.w(), b.w());
        assert_eq!(a.w_in(), b.w_in());
        let other = Reservoir::build(&small_config(6)).unwrap();
        assert_ne!(a.w(), other.w());
    }

    #[test]
    fn build_hits_target_radius() {
        let r = Reservoir::build(&small_config(1)).unwrap();
        let rho = spectral_radius(r.w(), 1e-13, 1_000_000).unwrap();
        assert!((rho - 0.9).abs() < 1e-6, "{rho}");
        let s = r.config().input_scaling;
        assert!(r.w_in().as_slice().iter().all(|v| v.abs() <= s));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for c in [
            ReservoirConfig { leak_rate: 0.0, ..small_config(0) },
            ReservoirConfig { leak_rate: 1.5, ..small_config(0) },
            ReservoirConfig { density: 0.0, ..small_config(0) },
            ReservoirConfig { spectral_radius: -1.0, ..small_config(0) },
            ReservoirConfig { n_reservoir: 0, ..small_config(0) },
        ] {
            assert!(matches!(Reservoir::build(&c), Err(ReservoirError::InvalidConfig(_))));
        }
    }

    #[test]
    fn zero_weights_give_zero_state() {
        let r = scalar_reservoir(1.0, [0.0, 0.0], 0.0);
        let s = r.update(&r.zero_state(), &[3.7]).unwrap();
        assert_eq!(s.x, vec![0.0]);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn zero_leak_freezes_state() {
        let r = scalar_reservoir(0.0, [0.3, 1.0], 0.5);
        let s0 = ReservoirState { x: vec![0.42], t: 0 };
        let s1 = r.update(&s0, &[10.0]).unwrap();
        assert_eq!(s1.x, s0.x);
    }

    #[test]
    fn scalar_step_matches_hand_evaluation() {
        // x = 0.5 * tanh(0 + 1*1 + 0.5*0)
        let r = scalar_reservoir(0.5, [0.0, 1.0], 0.5);
        let s = r.update(&r.zero_state(), &[1.0]).unwrap();
        assert!((s.x[0] - 0.5 * 1f64.tanh()).abs() < 1e-15);
        assert!((s.x[0] - 0.380_797).abs() < 1e-6);
    }

    #[test]
    fn dimension_checks() {
        let r = Reservoir::build(&small_config(2)).unwrap();
        assert!(matches!(
            r.update(&r.zero_state(), &[1.0]),
            Err(ReservoirError::DimensionMismatch { expected: 2, found: 1 })
        ));
        assert!(readout(&Matrix::zeros(2, 5), &r.zero_state()).is_err());
    }

    #[test]
    fn run_lengths_and_determinism() {
        let r = Reservoir::build(&small_config(3)).unwrap();
        let empty: Vec<Vec<f64>> = Vec::new();
        assert!(r.run(&empty, &r.zero_state()).unwrap().is_empty());
        let inputs: Vec<Vec<f64>> = (0..50).map(|t| vec![t as f64 / 49.0, 0.3]).collect();
        let a = r.run(&inputs, &r.zero_state()).unwrap();
        let b = r.run(&inputs, &r.zero_state()).unwrap();
        assert_eq!(a.len(), 50);
        assert_eq!(a, b);
        assert_eq!(a.last().unwrap().t, 50);
    }

    #[test]
    fn constant_input_settles() {
        let r = Reservoir::build(&small_config(4)).unwrap();
        let inputs = vec![vec![0.5, -0.2]; 400];
        let states = r.run(&inputs, &r.zero_state()).unwrap();
        let diff = |k: usize| -> f64 {
            states[k].x.iter().zip(&states[k - 1].x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        };
        assert!(diff(399) < 1e-3 * diff(5));
        assert!(diff(399) < 1e-8);
    }

    #[test]
    fn readout_bias_only_and_direct_evaluation() {
        let r = Reservoir::build(&small_config(8)).unwrap();
        let s = r.run(&vec![vec![0.1, 0.2]; 10], &r.zero_state()).unwrap().pop().unwrap();
        let mut w_out = Matrix::zeros(2, 61);
        assert_eq!(readout(&w_out, &s).unwrap(), vec![0.0, 0.0]);
        w_out[(0, 0)] = 1.5;
        w_out[(1, 0)] = -2.0;
        assert_eq!(readout(&w_out, &s).unwrap(), vec![1.5, -2.0]);

        let mut rng = RandomSource::new(9);
        let w_out = Matrix::from_fn(2, 61, |_, _| rng.uniform(-1.0, 1.0));
        let y = readout(&w_out, &s).unwrap();
        for (i, yi) in y.iter().enumerate() {
            let mut direct = w_out[(i, 0)];
            for j in 0..60 {
                direct += w_out[(i, j + 1)] * s.x[j];
            }
            assert!((yi - direct).abs() < 1e-12);
        }
    }
}
