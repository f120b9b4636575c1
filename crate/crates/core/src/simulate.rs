//! End-to-end path simulation: driver generation, the time change, assembly
//! and, for parameter sets that are not of Heston type, reduction and frame
//! inversion.

use crate::levy::{generate_path, split, CadlagPath, LevyError, PathSeed, DEFAULT_MESH};
use crate::params::{classify_heston, validate, AdmissibleParamSet, LevyTriplet, ParamError};
use crate::reduction::{invert_frames, reduce, Frames, ReductionError, ReductionPlan, FRAME_TOL};
use crate::timechange::{
    assemble, output_grid, solve_converged, ConvergenceOptions, ProcessPath, TimeChangeError,
};

/// Default number of output intervals on `[0, T]`.
pub const DEFAULT_INTERVALS: usize = 512;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Reduction(#[from] ReductionError),
    #[error(transparent)]
    Levy(#[from] LevyError),
    #[error(transparent)]
    TimeChange(#[from] TimeChangeError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("driver horizon still too short after {0} extensions")]
    Extension(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub x0: Vec<f64>,
    pub horizon: f64,
    pub mesh: f64,
    pub intervals: usize,
    /// Times added to the output grid.
    pub extra_times: Vec<f64>,
    pub convergence: ConvergenceOptions,
    /// Map reduced paths back to the original coordinates.
    pub invert_frames: bool,
    pub frame_tol: f64,
    pub max_extensions: usize,
}

impl SimConfig {
    pub fn new(x0: Vec<f64>, horizon: f64) -> Self {
        Self {
            x0,
            horizon,
            mesh: DEFAULT_MESH,
            intervals: DEFAULT_INTERVALS,
            extra_times: Vec::new(),
            convergence: ConvergenceOptions::default(),
            invert_frames: true,
            frame_tol: FRAME_TOL,
            max_extensions: 40,
        }
    }

    fn check(&self, d: usize) -> Result<(), SimError> {
        let c = &self.convergence;
        if self.x0.len() != d {
            return Err(SimError::Config(format!("x0 has {} entries, expected {d}", self.x0.len())));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(SimError::Config(format!("T must be > 0, got {}", self.horizon)));
        }
        if !(self.mesh > 0.0 && self.mesh.is_finite()) {
            return Err(SimError::Config(format!("mesh must be > 0, got {}", self.mesh)));
        }
        if self.intervals == 0 {
            return Err(SimError::Config("need at least one output interval".into()));
        }
        if !(c.tol > 0.0 && c.level0 <= c.level_cap && self.frame_tol > 0.0) {
            return Err(SimError::Config("tolerances must be > 0 and level0 <= level cap".into()));
        }
        Ok(())
    }
}

/// A prepared simulation of one parameter set.
#[derive(Debug, Clone)]
pub struct Simulator {
    original: AdmissibleParamSet,
    plan: Option<ReductionPlan>,
    config: SimConfig,
    triplets: Vec<LevyTriplet>,
    x_sim: Vec<f64>,
    times: Vec<f64>,
}

impl Simulator {
    /// Heston-type sets are simulated directly; other sets satisfying the
    /// reduction preconditions are reduced first.
    pub fn new(params: &AdmissibleParamSet, config: SimConfig) -> Result<Self, SimError> {
        let report = validate(params)?;
        if !report.is_empty() {
            return Err(ReductionError::Inadmissible(report).into());
        }
        config.check(params.d())?;
        if !params.dim.contains(&config.x0) {
            return Err(SimError::Config("x0 must lie in the state space".into()));
        }
        let plan = if classify_heston(params).is_heston() { None } else { Some(reduce(params)?) };
        let (sim_params, x_sim) = match &plan {
            None => (params.clone(), config.x0.clone()),
            Some(p) => (p.augmented.clone(), p.embed_state(&config.x0)),
        };
        let m = sim_params.dim.m();
        for j in sim_params.dim.real() {
            let zero = sim_params.beta[j].iter().all(|v| *v == 0.0)
                && sim_params.alpha[j].iter().all(|v| *v == 0.0)
                && sim_params.big_m[j].is_zero(sim_params.d());
            if !zero {
                return Err(SimError::Config(format!("driver {} of a Heston-type set is not zero", j + 1)));
            }
        }
        let triplets = (0..m).map(|k| sim_params.driver_triplet(k)).collect();
        let mut extra = config.extra_times.clone();
        extra.retain(|t| (0.0..=config.horizon).contains(t));
        let times = output_grid(config.horizon, config.intervals, &extra);
        Ok(Self { original: params.clone(), plan, config, triplets, x_sim, times })
    }

    pub fn params(&self) -> &AdmissibleParamSet {
        &self.original
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn plan(&self) -> Option<&ReductionPlan> {
        self.plan.as_ref()
    }

    /// Frame applying to the emitted paths, if they are in reduced coordinates.
    pub fn output_frames(&self) -> Option<&Frames> {
        match &self.plan {
            Some(p) if !self.config.invert_frames => Some(&p.frames),
            _ => None,
        }
    }

    pub fn output_times(&self) -> &[f64] {
        &self.times
    }

    fn initial_horizon(&self) -> f64 {
        let m = self.triplets.len();
        let xmax = self.x_sim[..m].iter().copied().fold(1.0, f64::max);
        2.0 * self.config.horizon * xmax
    }

    /// Simulate sample `index` of the stream given by `seed`.
    pub fn sample(&self, seed: u64, index: u64) -> Result<ProcessPath, SimError> {
        let m = self.triplets.len();
        let mut horizon = self.initial_horizon();
        let mut drivers: Vec<CadlagPath> = self
            .triplets
            .iter()
            .enumerate()
            .map(|(k, t)| generate_path(t, horizon, self.config.mesh, PathSeed::for_sample(seed, index, k)))
            .collect::<Result<_, _>>()?;
        let mut extensions = 0;
        let sol = loop {
            let splits = drivers
                .iter()
                .enumerate()
                .map(|(k, p)| split(p, k, m))
                .collect::<Result<Vec<_>, _>>()?;
            match solve_converged(&splits, &self.x_sim[..m], &self.times, &self.config.convergence) {
                Err(TimeChangeError::NeedsExtension { at }) => {
                    extensions += 1;
                    if extensions > self.config.max_extensions {
                        return Err(SimError::Extension(self.config.max_extensions));
                    }
                    horizon = (2.0 * horizon).max(2.0 * at);
                    log::debug!("sample {index}: extending drivers to {horizon}");
                    for p in drivers.iter_mut() {
                        p.extend(horizon)?;
                    }
                }
                other => break other?,
            }
        };
        let mut path = assemble(&drivers, &sol, &self.x_sim, m)?;
        if let (Some(plan), true) = (&self.plan, self.config.invert_frames) {
            path = invert_frames(&path, &plan.frames, self.config.frame_tol)?;
        }
        Ok(path)
    }
}
