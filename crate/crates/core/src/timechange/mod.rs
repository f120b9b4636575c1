//! The multivariate time change `τ' = x + Σ_k Z^(k)(τ_k)` solved by pasting
//! decoupled scalar solutions between the events of dyadic approximants of
//! the increasing driver parts, refined in the dyadic level until the lower
//! and upper solutions agree, and the assembly `X = x + Σ_k Z^(k)(τ_k)`.

mod diagonal;

pub use diagonal::{solve_diagonal, DiagonalState, Profile, Walk, DEFAULT_ABSORB_EPS};

use crate::levy::{CadlagPath, Direction, DyadicApproximant, EventKind, LevyError, SplitPath};

#[derive(Debug, thiserror::Error)]
pub enum TimeChangeError {
    #[error("driver data needed beyond internal time {at}")]
    NeedsExtension { at: f64 },
    #[error(transparent)]
    Levy(#[from] LevyError),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("more than {cap} pastes before time {time}")]
    PasteCap { cap: usize, time: f64 },
    #[error("no convergence up to level {level}: gap {gap:e} above tolerance {tol:e}")]
    Convergence { level: u32, gap: f64, tol: f64 },
    #[error("monotonicity in the dyadic level violated at level {level}, time {time}: {detail}")]
    Monotonicity { level: u32, time: f64, detail: String },
    #[error("component {coord} negative ({value:e}) at time {time}")]
    Positivity { coord: usize, time: f64, value: f64 },
}

/// Solver knobs shared by all levels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub paste_cap: usize,
    pub absorb_eps: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { paste_cap: 1_000_000, absorb_eps: DEFAULT_ABSORB_EPS }
    }
}

/// Level refinement settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceOptions {
    pub level0: u32,
    pub level_cap: u32,
    pub tol: f64,
    pub monotonicity_slack: f64,
    pub solver: SolverOptions,
}

impl Default for ConvergenceOptions {
    fn default() -> Self {
        Self {
            level0: 4,
            level_cap: 22,
            tol: 1e-4,
            monotonicity_slack: 1e-9,
            solver: SolverOptions::default(),
        }
    }
}

/// Uniform output grid with `intervals` steps on `[0, t_end]` merged with
/// extra times.
pub fn output_grid(t_end: f64, intervals: usize, extra: &[f64]) -> Vec<f64> {
    let mut times: Vec<f64> =
        (0..=intervals).map(|k| t_end * k as f64 / intervals as f64).collect();
    times.extend(extra.iter().copied().filter(|t| (0.0..=t_end).contains(t)));
    times.sort_by(f64::total_cmp);
    times.dedup();
    times
}

/// Time change values on an output grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeChangeSolution {
    /// Output times, nondecreasing. Paste instants may repeat a grid time.
    pub times: Vec<f64>,
    /// `tau[j][k]` is `τ_k(times[j])`.
    pub tau: Vec<Vec<f64>>,
    /// Whether entry `j` was recorded at a paste instant.
    pub paste: Vec<bool>,
    pub level: u32,
    pub direction: Direction,
    /// Sup-norm distance between the upper and lower solutions.
    pub gap: f64,
    pub pastes: usize,
    /// Start of a final absorption period per component.
    pub absorbed_at: Vec<Option<f64>>,
}

impl TimeChangeSolution {
    /// Entries on the requested grid, skipping paste instants.
    pub fn grid_entries(&self) -> impl Iterator<Item = (f64, &[f64])> {
        self.times
            .iter()
            .zip(&self.tau)
            .zip(&self.paste)
            .filter(|(_, p)| !**p)
            .map(|((t, v), _)| (*t, v.as_slice()))
    }
}

#[derive(Debug, Clone, Copy)]
struct Crossing {
    time: f64,
    exact: bool,
}

struct Component<'a> {
    profile: Profile,
    approx: DyadicApproximant<'a>,
    state: DiagonalState,
    level: Vec<f64>,
    barrier: crate::levy::Event,
    crossing: Crossing,
    absorbed_at: Option<f64>,
}

fn check_drivers(drivers: &[SplitPath], x: &[f64]) -> Result<(), TimeChangeError> {
    if drivers.len() != x.len() || drivers.is_empty() {
        return Err(TimeChangeError::InvalidInput(
            "need one driver per nonnegative component".into(),
        ));
    }
    for (k, dr) in drivers.iter().enumerate() {
        if dr.index != k || dr.notilde.dim() < drivers.len() {
            return Err(TimeChangeError::InvalidInput(format!("driver {k} is misindexed")));
        }
    }
    if x.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(TimeChangeError::InvalidInput("x must be finite and >= 0".into()));
    }
    Ok(())
}

fn all_jump_times(drivers: &[SplitPath]) -> Vec<f64> {
    let mut sigma: Vec<f64> = drivers
        .iter()
        .flat_map(|d| d.tilde.jump_times().iter().chain(d.notilde.jump_times()))
        .copied()
        .collect();
    sigma.sort_by(f64::total_cmp);
    sigma.dedup();
    sigma
}

/// Whether every increasing part is identically zero on the nonnegative
/// coordinates, in which case no level refinement is needed.
pub fn remainders_vanish(drivers: &[SplitPath]) -> bool {
    let m = drivers.len();
    drivers.iter().all(|d| {
        let p = &d.notilde;
        (0..m).all(|c| {
            (0..=p.steps()).all(|k| p.grid_value(k, c) == 0.0)
                && (0..p.jump_times().len()).all(|j| p.jump_size(j)[c] == 0.0)
        })
    })
}

/// Solve at a fixed dyadic level and direction, recording `τ` at `times`
/// (sorted, starting at 0) and at every paste.
pub fn solve_pasted(
    drivers: &[SplitPath],
    x: &[f64],
    level: u32,
    direction: Direction,
    times: &[f64],
    opts: &SolverOptions,
) -> Result<TimeChangeSolution, TimeChangeError> {
    check_drivers(drivers, x)?;
    let m = drivers.len();
    let eps = opts.absorb_eps;
    let t_end = *times.last().ok_or_else(|| TimeChangeError::InvalidInput("empty grid".into()))?;
    let sigma = all_jump_times(drivers);
    let mut comps = Vec::with_capacity(m);
    for (k, dr) in drivers.iter().enumerate() {
        let watch: Vec<usize> = (0..m).filter(|&c| c != k).collect();
        let profile = Profile::from_path(&dr.tilde, k);
        let approx = DyadicApproximant::new(&dr.notilde, level, direction, sigma.clone(), &watch);
        if approx.valid_until() <= 0.0 {
            return Err(TimeChangeError::NeedsExtension { at: 0.0 });
        }
        let mut full = vec![0.0; dr.notilde.dim()];
        approx.value_into(0.0, &mut full)?;
        let state = DiagonalState::new(&profile, 0.0)?;
        let barrier = approx.next_event_after(0.0);
        comps.push(Component {
            profile,
            approx,
            state,
            level: full[..m].to_vec(),
            barrier,
            crossing: Crossing { time: 0.0, exact: false },
            absorbed_at: None,
        });
    }
    let effective = |comps: &[Component]| -> Vec<f64> {
        (0..m).map(|c| x[c] + comps.iter().map(|k| k.level[c]).sum::<f64>()).collect()
    };
    let mut x_eff = effective(&comps);
    let mut stale = vec![true; m];

    let mut out_t = Vec::with_capacity(times.len());
    let mut out_tau = Vec::with_capacity(times.len());
    let mut out_paste = Vec::with_capacity(times.len());
    let mut out_idx = 0;
    let mut t = 0.0;
    let mut pastes = 0usize;
    let mut full = vec![0.0; drivers[0].notilde.dim()];

    loop {
        // refresh crossing predictions, cheapest first
        loop {
            let cutoff_of = |comps: &[Component], stale: &[bool], skip: usize| {
                comps
                    .iter()
                    .enumerate()
                    .filter(|(k, c)| *k != skip && !stale[*k] && c.crossing.exact)
                    .map(|(_, c)| c.crossing.time)
                    .fold(t_end, f64::min)
            };
            let pending = (0..m).find(|&k| stale[k]).or_else(|| {
                let (k, c) = comps.iter().enumerate().min_by(|a, b| {
                    let ka = (a.1.crossing.time, !a.1.crossing.exact);
                    let kb = (b.1.crossing.time, !b.1.crossing.exact);
                    ka.0.total_cmp(&kb.0).then(ka.1.cmp(&kb.1))
                })?;
                (!c.crossing.exact && c.crossing.time <= t_end).then_some(k)
            });
            let Some(k) = pending else { break };
            let cutoff = cutoff_of(&comps, &stale, k);
            let comp = &mut comps[k];
            let budget = (cutoff - t).max(0.0);
            comp.crossing = match comp.state.time_to(
                &comp.profile,
                x_eff[k],
                comp.barrier.time,
                budget,
                eps,
            )? {
                Some(dt) => Crossing { time: t + dt, exact: true },
                None if comp.state.absorbed || cutoff >= t_end => {
                    Crossing { time: f64::INFINITY, exact: true }
                }
                None => {
                    let mut probe = comp.state;
                    let w = probe.walk(&comp.profile, x_eff[k], budget, comp.barrier.time, eps)?;
                    if matches!(w, Walk::Absorbed(_)) {
                        Crossing { time: f64::INFINITY, exact: true }
                    } else {
                        Crossing { time: cutoff, exact: false }
                    }
                }
            };
            stale[k] = false;
        }
        let (first, t_next) = comps
            .iter()
            .enumerate()
            .filter(|(_, c)| c.crossing.exact)
            .map(|(k, c)| (k, c.crossing.time))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap_or((0, f64::INFINITY));

        // record grid times up to the crossing
        while out_idx < times.len() && times[out_idx] <= t_next.min(t_end) {
            let target = times[out_idx];
            if target > t {
                for (k, comp) in comps.iter_mut().enumerate() {
                    let w = comp.state.walk(
                        &comp.profile,
                        x_eff[k],
                        target - t,
                        comp.barrier.time,
                        eps,
                    )?;
                    note_absorption(comp, w, t);
                }
                t = target;
            }
            out_t.push(t);
            out_tau.push(comps.iter().map(|c| c.state.tau).collect::<Vec<_>>());
            out_paste.push(false);
            out_idx += 1;
        }
        if t_next > t_end || out_idx >= times.len() {
            break;
        }

        // advance to the crossing and collect every component at its barrier
        let dt = t_next - t;
        let mut crossed = Vec::new();
        for (k, comp) in comps.iter_mut().enumerate() {
            if k == first {
                comp.state.place_at(&comp.profile, comp.barrier.time)?;
                crossed.push(k);
                continue;
            }
            let w = comp.state.walk(&comp.profile, x_eff[k], dt, comp.barrier.time, eps)?;
            if matches!(w, Walk::Reached(_)) {
                comp.state.place_at(&comp.profile, comp.barrier.time)?;
                crossed.push(k);
            } else {
                note_absorption(comp, w, t);
            }
        }
        t = t_next;
        let mut bumped = false;
        for &k in &crossed {
            let comp = &mut comps[k];
            if comp.barrier.kind == EventKind::Horizon {
                return Err(TimeChangeError::NeedsExtension { at: comp.barrier.time });
            }
            let s = comp.barrier.time;
            comp.approx.value_into(s, &mut full)?;
            if full[..m] != comp.level[..] {
                comp.level.copy_from_slice(&full[..m]);
                bumped = true;
            }
            comp.barrier = comp.approx.next_event_after(s);
            stale[k] = true;
        }
        let is_jump = crossed
            .iter()
            .any(|&k| sigma.binary_search_by(|v| v.total_cmp(&comps[k].state.tau)).is_ok());
        if bumped {
            let new_eff = effective(&comps);
            for k in 0..m {
                if new_eff[k] != x_eff[k] {
                    stale[k] = true;
                    if comps[k].state.absorbed && new_eff[k] > x_eff[k] {
                        comps[k].state.absorbed = false;
                        comps[k].absorbed_at = None;
                    }
                }
            }
            x_eff = new_eff;
            pastes += 1;
            if pastes > opts.paste_cap {
                return Err(TimeChangeError::PasteCap { cap: opts.paste_cap, time: t });
            }
        }
        if bumped || is_jump {
            out_t.push(t);
            out_tau.push(comps.iter().map(|c| c.state.tau).collect::<Vec<_>>());
            out_paste.push(true);
        }
    }

    Ok(TimeChangeSolution {
        times: out_t,
        tau: out_tau,
        paste: out_paste,
        level,
        direction,
        gap: 0.0,
        pastes,
        absorbed_at: comps.iter().map(|c| c.absorbed_at).collect(),
    })
}

fn note_absorption(comp: &mut Component, w: Walk, t: f64) {
    if let Walk::Absorbed(e) = w {
        if comp.absorbed_at.is_none() {
            comp.absorbed_at = Some(t + e);
        }
    }
}

fn grid_gap(up: &TimeChangeSolution, down: &TimeChangeSolution) -> f64 {
    up.grid_entries()
        .zip(down.grid_entries())
        .flat_map(|((_, a), (_, b))| a.iter().zip(b).map(|(x, y)| y - x))
        .fold(0.0, f64::max)
}

fn check_monotone(
    prev: &TimeChangeSolution,
    next: &TimeChangeSolution,
    slack: f64,
) -> Result<(), TimeChangeError> {
    for ((t, a), (_, b)) in prev.grid_entries().zip(next.grid_entries()) {
        for (p, q) in a.iter().zip(b) {
            let tol = slack * p.abs().max(1.0);
            let bad = match prev.direction {
                Direction::Up => *q < p - tol,
                Direction::Down => *q > p + tol,
            };
            if bad {
                return Err(TimeChangeError::Monotonicity {
                    level: next.level,
                    time: t,
                    detail: format!("{:?}: {p} then {q}", prev.direction),
                });
            }
        }
    }
    Ok(())
}

/// Refine the dyadic level until the upper and lower solutions are within
/// `opts.tol` on the grid; return the lower solution with the gap recorded.
pub fn solve_converged(
    drivers: &[SplitPath],
    x: &[f64],
    times: &[f64],
    opts: &ConvergenceOptions,
) -> Result<TimeChangeSolution, TimeChangeError> {
    if !(opts.tol > 0.0) || opts.level_cap < opts.level0 {
        return Err(TimeChangeError::InvalidInput("need tol > 0 and level0 <= cap".into()));
    }
    if remainders_vanish(drivers) {
        return solve_pasted(drivers, x, opts.level0, Direction::Up, times, &opts.solver);
    }
    let mut prev: Option<(TimeChangeSolution, TimeChangeSolution)> = None;
    let mut gap = f64::INFINITY;
    for level in opts.level0..=opts.level_cap {
        let up = solve_pasted(drivers, x, level, Direction::Up, times, &opts.solver)?;
        let down = solve_pasted(drivers, x, level, Direction::Down, times, &opts.solver)?;
        if let Some((pu, pd)) = &prev {
            check_monotone(pu, &up, opts.monotonicity_slack)?;
            check_monotone(pd, &down, opts.monotonicity_slack)?;
        }
        gap = grid_gap(&up, &down);
        if gap <= opts.tol {
            let mut out = up;
            out.gap = gap;
            return Ok(out);
        }
        prev = Some((up, down));
    }
    Err(TimeChangeError::Convergence { level: opts.level_cap, gap, tol: opts.tol })
}

/// A path of the affine process on the output grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessPath {
    pub times: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    /// Left limits `X(t-)`.
    pub x_left: Vec<Vec<f64>>,
    pub tau: Vec<Vec<f64>>,
    pub paste: Vec<bool>,
    pub x0: Vec<f64>,
    pub absorbed_at: Vec<Option<f64>>,
    pub warnings: Vec<String>,
}

impl ProcessPath {
    /// State at grid time `t` (exact match on a non-paste entry).
    pub fn value_at(&self, t: f64) -> Option<&[f64]> {
        let idx = self.times.partition_point(|s| *s < t);
        (idx..self.times.len())
            .take_while(|&j| self.times[j] == t)
            .find(|&j| !self.paste[j])
            .map(|j| self.x[j].as_slice())
    }
}

/// Slack below zero tolerated (and clamped) on nonnegative components.
pub const POSITIVITY_SLACK: f64 = 1e-10;

/// `X(t) = x0 + Σ_k Z^(k)(τ_k(t))` on the solution grid.
pub fn assemble(
    drivers: &[CadlagPath],
    sol: &TimeChangeSolution,
    x0: &[f64],
    m: usize,
) -> Result<ProcessPath, TimeChangeError> {
    let d = x0.len();
    if drivers.len() != m || drivers.iter().any(|p| p.dim() != d) {
        return Err(TimeChangeError::InvalidInput("driver dimensions do not match x0".into()));
    }
    let mut xs = Vec::with_capacity(sol.times.len());
    let mut xl = Vec::with_capacity(sol.times.len());
    let mut z = vec![0.0; d];
    for (j, taus) in sol.tau.iter().enumerate() {
        let mut v = x0.to_vec();
        let mut vl = x0.to_vec();
        for (k, path) in drivers.iter().enumerate() {
            path.eval_into(taus[k], &mut z)?;
            for (vi, zi) in v.iter_mut().zip(&z) {
                *vi += zi;
            }
            path.eval_left_into(taus[k], &mut z)?;
            for (vi, zi) in vl.iter_mut().zip(&z) {
                *vi += zi;
            }
        }
        for w in [&mut v, &mut vl] {
            for (c, vc) in w.iter_mut().enumerate().take(m) {
                if *vc < 0.0 {
                    if *vc < -POSITIVITY_SLACK {
                        return Err(TimeChangeError::Positivity {
                            coord: c,
                            time: sol.times[j],
                            value: *vc,
                        });
                    }
                    log::debug!("clamping component {c} from {vc:e} to 0 at t={}", sol.times[j]);
                    *vc = 0.0;
                }
            }
        }
        xs.push(v);
        xl.push(vl);
    }
    Ok(ProcessPath {
        times: sol.times.clone(),
        x: xs,
        x_left: xl,
        tau: sol.tau.clone(),
        paste: sol.paste.clone(),
        x0: x0.to_vec(),
        absorbed_at: sol.absorbed_at.clone(),
        warnings: Vec::new(),
    })
}
