//! Càdlàg paths of finite-activity Lévy drivers.
//!
//! A path stores its continuous part (drift plus Brownian motion) on a uniform
//! grid and its jumps as explicit events. Between grid nodes the continuous
//! part is linearly interpolated. Paths can be extended lazily; the Gaussian
//! increments and the jump events come from two separate counter-based
//! streams, so extending in several steps reproduces single-shot generation
//! bit for bit.

mod split;

pub use split::{dyadic_approximant, split, DyadicApproximant, Direction, Event, EventKind, SplitPath};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::params::{JumpDistribution, LevyTriplet, ParamError};

/// Default grid mesh in driver time.
pub const DEFAULT_MESH: f64 = 1.0 / 1024.0;

/// Beyond this many 32-bit words a stream is considered exhausted.
const STREAM_WORD_LIMIT: u128 = 1 << 64;

#[derive(Debug, thiserror::Error)]
pub enum LevyError {
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error("invalid path request: {0}")]
    InvalidRequest(String),
    #[error("non-finite value generated at driver time {time}")]
    NonFinite { time: f64 },
    #[error("evaluation at {time} outside path horizon {horizon}")]
    OutOfHorizon { time: f64, horizon: f64 },
    #[error("path cannot be extended: {0}")]
    NotExtendable(&'static str),
    #[error("increasing part decreases in coordinate {coord} near driver time {time}")]
    NotIncreasing { coord: usize, time: f64 },
}

/// Identifies the random streams of one path: the user seed and a stream
/// number unique per (sample, driver).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PathSeed {
    pub seed: u64,
    pub stream: u64,
}

impl PathSeed {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    /// Stream number for driver `driver` of Monte Carlo sample `sample`.
    pub fn for_sample(seed: u64, sample: u64, driver: usize) -> Self {
        Self { seed, stream: sample * 1024 + driver as u64 }
    }

    fn rng(&self, purpose: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream * 4 + purpose);
        rng
    }
}

#[derive(Debug, Clone)]
struct PathSource {
    seed: PathSeed,
    drift: Vec<f64>,
    /// `d x r` factor of the diffusion matrix on its support.
    factor: DMatrix<f64>,
    sqrt_mesh: f64,
    rate: f64,
    distribution: Option<JumpDistribution>,
    gauss: ChaCha8Rng,
    poisson: ChaCha8Rng,
    brownian: Vec<f64>,
    next_jump: f64,
}

/// One path of a `d`-dimensional Lévy process on `[0, horizon]`.
#[derive(Debug, Clone)]
pub struct CadlagPath {
    dim: usize,
    mesh: f64,
    steps: usize,
    grid: Vec<f64>,
    jump_times: Vec<f64>,
    jump_sizes: Vec<f64>,
    jump_cum: Vec<f64>,
    source: Option<PathSource>,
}

impl PartialEq for CadlagPath {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.mesh == other.mesh
            && self.steps == other.steps
            && self.grid == other.grid
            && self.jump_times == other.jump_times
            && self.jump_sizes == other.jump_sizes
    }
}

fn diffusion_factor(alpha: &DMatrix<f64>) -> DMatrix<f64> {
    let d = alpha.nrows();
    let support: Vec<usize> = (0..d).filter(|&k| alpha[(k, k)] > 0.0).collect();
    let r = support.len();
    let mut factor = DMatrix::zeros(d, r);
    if r == 0 {
        return factor;
    }
    let sub = DMatrix::from_fn(r, r, |i, j| alpha[(support[i], support[j])]);
    let eig = SymmetricEigen::new(sub);
    for (row, &k) in support.iter().enumerate() {
        for col in 0..r {
            let lambda = eig.eigenvalues[col].max(0.0);
            factor[(k, col)] = eig.eigenvectors[(row, col)] * lambda.sqrt();
        }
    }
    factor
}

impl CadlagPath {
    /// A fixed path from grid values (`grid[k]` is the continuous part at
    /// `k * mesh`) and jump events. Such a path cannot be extended.
    pub fn from_parts(
        mesh: f64,
        grid: Vec<Vec<f64>>,
        jumps: Vec<(f64, Vec<f64>)>,
    ) -> Result<Self, LevyError> {
        if !(mesh > 0.0) || grid.len() < 2 {
            return Err(LevyError::InvalidRequest("need mesh > 0 and two grid nodes".into()));
        }
        let dim = grid[0].len();
        if grid.iter().any(|g| g.len() != dim) {
            return Err(LevyError::InvalidRequest("inconsistent dimensions".into()));
        }
        Self::from_flat(mesh, dim, grid.into_iter().flatten().collect(), jumps)
    }

    /// As `from_parts` with the grid stored row after row.
    pub(crate) fn from_flat(
        mesh: f64,
        dim: usize,
        grid: Vec<f64>,
        jumps: Vec<(f64, Vec<f64>)>,
    ) -> Result<Self, LevyError> {
        if !(mesh > 0.0) || dim == 0 || grid.len() < 2 * dim || grid.len() % dim != 0 {
            return Err(LevyError::InvalidRequest("need mesh > 0 and two grid nodes".into()));
        }
        if jumps.iter().any(|(_, x)| x.len() != dim) {
            return Err(LevyError::InvalidRequest("inconsistent dimensions".into()));
        }
        if grid[..dim].iter().any(|v| *v != 0.0) {
            return Err(LevyError::InvalidRequest("path must start at 0".into()));
        }
        let steps = grid.len() / dim - 1;
        let horizon = steps as f64 * mesh;
        let mut path = CadlagPath {
            dim,
            mesh,
            steps,
            grid,
            jump_times: Vec::new(),
            jump_sizes: Vec::new(),
            jump_cum: vec![0.0; dim],
            source: None,
        };
        let mut last = 0.0;
        for (t, x) in jumps {
            if !(t > last && t <= horizon) {
                return Err(LevyError::InvalidRequest(
                    "jump times must be strictly increasing in (0, horizon]".into(),
                ));
            }
            last = t;
            path.push_jump(t, &x);
        }
        Ok(path)
    }

    fn push_jump(&mut self, t: f64, x: &[f64]) {
        let base = self.jump_cum.len() - self.dim;
        for c in 0..self.dim {
            let v = self.jump_cum[base + c] + x[c];
            self.jump_cum.push(v);
        }
        self.jump_times.push(t);
        self.jump_sizes.extend_from_slice(x);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mesh(&self) -> f64 {
        self.mesh
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn horizon(&self) -> f64 {
        self.steps as f64 * self.mesh
    }

    pub fn is_extendable(&self) -> bool {
        self.source.is_some()
    }

    /// Continuous part at grid node `k`.
    pub fn grid_value(&self, k: usize, coord: usize) -> f64 {
        self.grid[k * self.dim + coord]
    }

    pub fn jump_times(&self) -> &[f64] {
        &self.jump_times
    }

    pub fn jump_size(&self, j: usize) -> &[f64] {
        &self.jump_sizes[j * self.dim..(j + 1) * self.dim]
    }

    /// Number of jumps with time `<= s`.
    pub fn jumps_up_to(&self, s: f64) -> usize {
        self.jump_times.partition_point(|t| *t <= s)
    }

    fn check_time(&self, s: f64) -> Result<(), LevyError> {
        let horizon = self.horizon();
        if !(0.0..=horizon).contains(&s) {
            return Err(LevyError::OutOfHorizon { time: s, horizon });
        }
        Ok(())
    }

    fn cell(&self, s: f64) -> (usize, f64) {
        let k = ((s / self.mesh).floor() as usize).min(self.steps - 1);
        (k, (s - k as f64 * self.mesh) / self.mesh)
    }

    /// Continuous part of coordinate `coord` at `s`.
    pub fn continuous_coord(&self, s: f64, coord: usize) -> Result<f64, LevyError> {
        self.check_time(s)?;
        let (k, frac) = self.cell(s);
        let g0 = self.grid_value(k, coord);
        let g1 = self.grid_value(k + 1, coord);
        Ok(if frac == 0.0 { g0 } else { g0 + (g1 - g0) * frac })
    }

    /// Value of coordinate `coord` at `s`.
    pub fn eval_coord(&self, s: f64, coord: usize) -> Result<f64, LevyError> {
        let cont = self.continuous_coord(s, coord)?;
        let n = self.jumps_up_to(s);
        Ok(cont + self.jump_cum[n * self.dim + coord])
    }

    /// Value at `s` written into `out`.
    pub fn eval_into(&self, s: f64, out: &mut [f64]) -> Result<(), LevyError> {
        self.eval_with_jumps(s, self.jumps_up_to(s), out)
    }

    /// Left limit `Z(s-)`.
    pub fn eval_left_into(&self, s: f64, out: &mut [f64]) -> Result<(), LevyError> {
        self.eval_with_jumps(s, self.jump_times.partition_point(|t| *t < s), out)
    }

    fn eval_with_jumps(&self, s: f64, n: usize, out: &mut [f64]) -> Result<(), LevyError> {
        self.check_time(s)?;
        let (k, frac) = self.cell(s);
        for (c, o) in out.iter_mut().enumerate().take(self.dim) {
            let g0 = self.grid_value(k, c);
            let g1 = self.grid_value(k + 1, c);
            let cont = if frac == 0.0 { g0 } else { g0 + (g1 - g0) * frac };
            *o = cont + self.jump_cum[n * self.dim + c];
        }
        Ok(())
    }

    pub fn eval(&self, s: f64) -> Result<Vec<f64>, LevyError> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(s, &mut out)?;
        Ok(out)
    }

    fn extend_in_place(&mut self, new_horizon: f64) -> Result<(), LevyError> {
        let new_steps = (new_horizon / self.mesh).ceil() as usize;
        let Some(src) = self.source.as_mut() else {
            if new_steps <= self.steps {
                return Ok(());
            }
            return Err(LevyError::NotExtendable("path has no generator state"));
        };
        let d = self.dim;
        let r = src.factor.ncols();
        let mut z = vec![0.0; r];
        self.grid.reserve((new_steps.saturating_sub(self.steps)) * d);
        for k in self.steps + 1..=new_steps {
            if src.gauss.get_word_pos() > STREAM_WORD_LIMIT {
                return Err(LevyError::NotExtendable("gaussian stream exhausted"));
            }
            for zi in z.iter_mut() {
                *zi = StandardNormal.sample(&mut src.gauss);
            }
            let s = k as f64 * self.mesh;
            for c in 0..d {
                let mut inc = 0.0;
                for (j, zj) in z.iter().enumerate() {
                    inc += src.factor[(c, j)] * zj;
                }
                src.brownian[c] += src.sqrt_mesh * inc;
                let v = src.drift[c] * s + src.brownian[c];
                if !v.is_finite() {
                    return Err(LevyError::NonFinite { time: s });
                }
                self.grid.push(v);
            }
        }
        self.steps = self.steps.max(new_steps);
        let horizon = self.steps as f64 * self.mesh;
        let mut size = vec![0.0; d];
        while src.next_jump <= horizon {
            if src.poisson.get_word_pos() > STREAM_WORD_LIMIT {
                return Err(LevyError::NotExtendable("jump stream exhausted"));
            }
            let t = src.next_jump;
            let dist = src.distribution.as_ref().expect("positive rate has a distribution");
            dist.sample_into(&mut src.poisson, &mut size);
            if size.iter().any(|v| !v.is_finite()) {
                return Err(LevyError::NonFinite { time: t });
            }
            let e: f64 = Exp1.sample(&mut src.poisson);
            src.next_jump = t + e / src.rate;
            let base = self.jump_cum.len() - d;
            for c in 0..d {
                let v = self.jump_cum[base + c] + size[c];
                self.jump_cum.push(v);
            }
            self.jump_times.push(t);
            self.jump_sizes.extend_from_slice(&size);
        }
        Ok(())
    }
}

/// Generate a path of the Lévy process with the given triplet on `[0, horizon]`
/// (rounded up to a whole number of grid steps).
pub fn generate_path(
    triplet: &LevyTriplet,
    horizon: f64,
    mesh: f64,
    seed: PathSeed,
) -> Result<CadlagPath, LevyError> {
    triplet.check()?;
    if !(horizon > 0.0 && horizon.is_finite() && mesh > 0.0 && mesh.is_finite()) {
        return Err(LevyError::InvalidRequest(format!(
            "need horizon > 0 and mesh > 0, got {horizon} and {mesh}"
        )));
    }
    let d = triplet.dim();
    let mut poisson = seed.rng(1);
    let rate = if triplet.jumps.is_zero(d) { 0.0 } else { triplet.jumps.rate };
    let next_jump = if rate > 0.0 {
        let e: f64 = Exp1.sample(&mut poisson);
        e / rate
    } else {
        f64::INFINITY
    };
    let source = PathSource {
        seed,
        drift: triplet.adjusted_drift(),
        factor: diffusion_factor(&triplet.alpha),
        sqrt_mesh: mesh.sqrt(),
        rate,
        distribution: triplet.jumps.distribution.clone(),
        gauss: seed.rng(0),
        poisson,
        brownian: vec![0.0; d],
        next_jump,
    };
    let mut path = CadlagPath {
        dim: d,
        mesh,
        steps: 0,
        grid: vec![0.0; d],
        jump_times: Vec::new(),
        jump_sizes: Vec::new(),
        jump_cum: vec![0.0; d],
        source: Some(source),
    };
    path.extend_in_place(horizon.max(mesh))?;
    Ok(path)
}

/// Extend a path to `new_horizon`, leaving existing values untouched.
pub fn extend_path(path: &CadlagPath, new_horizon: f64) -> Result<CadlagPath, LevyError> {
    if new_horizon < path.horizon() {
        return Err(LevyError::InvalidRequest(format!(
            "new horizon {new_horizon} below current {}",
            path.horizon()
        )));
    }
    let mut out = path.clone();
    out.extend_in_place(new_horizon)?;
    Ok(out)
}

impl CadlagPath {
    /// Extend in place, leaving existing values untouched.
    pub fn extend(&mut self, new_horizon: f64) -> Result<(), LevyError> {
        if new_horizon < self.horizon() {
            return Ok(());
        }
        self.extend_in_place(new_horizon)
    }

    /// Seed of the generator, if any.
    pub fn seed(&self) -> Option<PathSeed> {
        self.source.as_ref().map(|s| s.seed)
    }
}

/// Draw one uniform number from a dedicated stream, for auxiliary randomness
/// that must not disturb the path streams.
pub fn auxiliary_uniform(seed: PathSeed) -> f64 {
    seed.rng(2).random()
}
