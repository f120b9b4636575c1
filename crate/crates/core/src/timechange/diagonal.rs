//! Exact solution of the scalar equation `τ' = x + g(τ)` for a piecewise-linear
//! càdlàg profile `g`.
//!
//! On a segment where `f(r) = x + g(r) = f0 + c (r - r0)` the time needed to
//! move from `r0` to `r1` is `ln(f(r1) / f0) / c`, and after a time `dt` the
//! position is `r0 + f0 (exp(c dt) - 1) / c`.

use crate::levy::CadlagPath;

use super::TimeChangeError;

/// Field values at or below this level count as absorbed.
pub const DEFAULT_ABSORB_EPS: f64 = 1e-12;

/// One coordinate of a path as a scalar profile.
#[derive(Debug, Clone)]
pub struct Profile {
    mesh: f64,
    steps: usize,
    grid: Vec<f64>,
    jump_times: Vec<f64>,
    jump_sizes: Vec<f64>,
}

impl Profile {
    pub fn from_path(path: &CadlagPath, coord: usize) -> Self {
        let steps = path.steps();
        let grid = (0..=steps).map(|k| path.grid_value(k, coord)).collect();
        let mut jump_times = Vec::new();
        let mut jump_sizes = Vec::new();
        for (j, &t) in path.jump_times().iter().enumerate() {
            let v = path.jump_size(j)[coord];
            if v != 0.0 {
                jump_times.push(t);
                jump_sizes.push(v);
            }
        }
        Self { mesh: path.mesh(), steps, grid, jump_times, jump_sizes }
    }

    pub fn horizon(&self) -> f64 {
        self.steps as f64 * self.mesh
    }

    fn node(&self, k: usize) -> f64 {
        k as f64 * self.mesh
    }

    fn slope(&self, k: usize) -> f64 {
        (self.grid[k + 1] - self.grid[k]) / self.mesh
    }
}

/// Position of one scalar solution: current `τ`, its grid cell, how many
/// jumps lie at or before `τ` and their sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagonalState {
    pub tau: f64,
    cell: usize,
    jumps_seen: usize,
    jump_sum: f64,
    pub absorbed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Walk {
    /// The time budget ran out before the target.
    Elapsed,
    /// The target was reached after the given time.
    Reached(f64),
    /// The field vanished after the given time.
    Absorbed(f64),
}

impl DiagonalState {
    pub fn new(profile: &Profile, tau0: f64) -> Result<Self, TimeChangeError> {
        if !(tau0 >= 0.0) {
            return Err(TimeChangeError::InvalidInput(format!("tau0 must be >= 0, got {tau0}")));
        }
        if tau0 > profile.horizon() {
            return Err(TimeChangeError::NeedsExtension { at: tau0 });
        }
        let mut cell = ((tau0 / profile.mesh).floor() as usize).min(profile.steps);
        while cell > 0 && profile.node(cell) > tau0 {
            cell -= 1;
        }
        while cell < profile.steps && profile.node(cell + 1) <= tau0 {
            cell += 1;
        }
        let jumps_seen = profile.jump_times.partition_point(|t| *t <= tau0);
        let jump_sum = profile.jump_sizes[..jumps_seen].iter().sum();
        Ok(Self { tau: tau0, cell, jumps_seen, jump_sum, absorbed: false })
    }

    /// `x + g(τ)`.
    pub fn field(&self, profile: &Profile, x: f64) -> f64 {
        let k = self.cell.min(profile.steps - 1);
        x + profile.grid[k] + profile.slope(k) * (self.tau - profile.node(k)) + self.jump_sum
    }

    fn absorb_jumps(&mut self, profile: &Profile) {
        while self.jumps_seen < profile.jump_times.len()
            && profile.jump_times[self.jumps_seen] <= self.tau
        {
            self.jump_sum += profile.jump_sizes[self.jumps_seen];
            self.jumps_seen += 1;
        }
    }

    /// Move forward for at most `dt` units of time, stopping at `target`.
    pub fn walk(
        &mut self,
        profile: &Profile,
        x: f64,
        dt: f64,
        target: f64,
        eps: f64,
    ) -> Result<Walk, TimeChangeError> {
        let mut rem = dt;
        let tie = 1e-13 * dt.max(1e-300);
        loop {
            if self.absorbed {
                return Ok(Walk::Absorbed(dt - rem));
            }
            if self.tau >= target {
                return Ok(Walk::Reached(dt - rem));
            }
            let f0 = self.field(profile, x);
            if f0 <= eps {
                self.absorbed = true;
                return Ok(Walk::Absorbed(dt - rem));
            }
            if self.cell >= profile.steps {
                return Err(TimeChangeError::NeedsExtension { at: self.tau });
            }
            let next_node = profile.node(self.cell + 1);
            let next_jump =
                profile.jump_times.get(self.jumps_seen).copied().unwrap_or(f64::INFINITY);
            let seg_end = next_node.min(next_jump).min(target);
            let len = seg_end - self.tau;
            let c = profile.slope(self.cell);
            let f1 = f0 + c * len;
            if f1 <= eps && c < 0.0 {
                let t_eps = ((eps - f0) / f0).ln_1p() / c;
                if t_eps <= rem {
                    self.tau = (self.tau - f0 / c).min(seg_end);
                    self.absorbed = true;
                    return Ok(Walk::Absorbed(dt - rem + t_eps));
                }
            } else {
                let seg_time = if c == 0.0 { len / f0 } else { (c * len / f0).ln_1p() / c };
                let at_target = seg_end == target;
                if seg_time <= rem || (at_target && seg_time <= rem + tie) {
                    rem = (rem - seg_time).max(0.0);
                    self.tau = seg_end;
                    if seg_end == next_node {
                        self.cell += 1;
                    }
                    self.absorb_jumps(profile);
                    continue;
                }
            }
            let step = if c == 0.0 { f0 * rem } else { f0 * (c * rem).exp_m1() / c };
            let moved = self.tau + step;
            self.tau = if moved < seg_end { moved } else { seg_end.next_down() };
            return Ok(Walk::Elapsed);
        }
    }

    /// Time needed to reach `target`, or `None` if it takes longer than
    /// `budget` or never happens.
    pub fn time_to(
        &self,
        profile: &Profile,
        x: f64,
        target: f64,
        budget: f64,
        eps: f64,
    ) -> Result<Option<f64>, TimeChangeError> {
        let mut probe = *self;
        match probe.walk(profile, x, budget, target, eps)? {
            Walk::Reached(t) => Ok(Some(t)),
            _ => Ok(None),
        }
    }

    /// Jump to `target` without tracking time.
    pub fn place_at(&mut self, profile: &Profile, target: f64) -> Result<(), TimeChangeError> {
        let absorbed = self.absorbed;
        *self = DiagonalState::new(profile, target)?;
        self.absorbed = absorbed;
        Ok(())
    }
}

/// Scalar solution on `[t0, times.last()]` evaluated at `times` (sorted, all
/// `>= t0`), together with the absorption time if any.
pub fn solve_diagonal(
    profile: &Profile,
    x: f64,
    t0: f64,
    tau0: f64,
    times: &[f64],
) -> Result<(Vec<f64>, Option<f64>), TimeChangeError> {
    if !(x >= 0.0) {
        return Err(TimeChangeError::InvalidInput(format!("x must be >= 0, got {x}")));
    }
    let mut state = DiagonalState::new(profile, tau0)?;
    let mut t = t0;
    let mut out = Vec::with_capacity(times.len());
    let mut absorbed_at = None;
    for &ti in times {
        if ti < t {
            return Err(TimeChangeError::InvalidInput("output times must be sorted".into()));
        }
        let horizon = profile.horizon();
        if let Walk::Absorbed(e) = state.walk(profile, x, ti - t, horizon, DEFAULT_ABSORB_EPS)? {
            if absorbed_at.is_none() {
                absorbed_at = Some(t + e);
            }
        } else if state.tau >= horizon && ti > t {
            return Err(TimeChangeError::NeedsExtension { at: horizon });
        }
        t = ti;
        out.push(state.tau);
    }
    Ok((out, absorbed_at))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn drift_profile(b: f64, horizon: f64, mesh: f64) -> Profile {
        let steps = (horizon / mesh).round() as usize;
        let grid = (0..=steps).map(|k| vec![b * k as f64 * mesh]).collect();
        Profile::from_path(&CadlagPath::from_parts(mesh, grid, vec![]).unwrap(), 0)
    }

    #[test]
    fn constant_field() {
        let p = drift_profile(0.0, 10.0, 0.25);
        let times = [0.5, 1.0, 2.0, 3.0];
        let (tau, abs) = solve_diagonal(&p, 2.0, 0.5, 0.3, &times).unwrap();
        for (t, v) in times.iter().zip(tau) {
            assert!((v - (0.3 + 2.0 * (t - 0.5))).abs() < 1e-13);
        }
        assert!(abs.is_none());
    }

    #[test]
    fn linear_drift_closed_form() {
        for &b in &[0.7, -0.4] {
            let p = drift_profile(b, 20.0, 1.0 / 1024.0);
            let times: Vec<f64> = (0..=20).map(|k| 0.2 + k as f64 * 0.1).collect();
            let (tau, _) = solve_diagonal(&p, 1.5, 0.2, 0.1, &times).unwrap();
            for (t, v) in times.iter().zip(tau) {
                let dt = t - 0.2;
                let want = 1.5 * (b * dt).exp_m1() / b + 0.1 * (b * dt).exp();
                assert!((v - want).abs() < 1e-12, "b={b} t={t}: {v} vs {want}");
            }
        }
    }

    #[test]
    fn negative_jump_absorbs() {
        let mesh = 0.125;
        let grid = vec![vec![0.0]; 33];
        let path = CadlagPath::from_parts(mesh, grid, vec![(1.3, vec![-2.0])]).unwrap();
        let p = Profile::from_path(&path, 0);
        let times: Vec<f64> = (0..=30).map(|k| k as f64 * 0.1).collect();
        let (tau, abs) = solve_diagonal(&p, 2.0, 0.0, 0.0, &times).unwrap();
        assert!((abs.unwrap() - 0.65).abs() < 1e-12);
        for (t, v) in times.iter().zip(&tau) {
            let want = (2.0 * t).min(1.3);
            assert!((v - want).abs() < 1e-12, "{t}: {v}");
        }
    }

    #[test]
    fn decaying_field_is_absorbed_at_root() {
        let p = drift_profile(-1.0, 4.0, 1.0 / 64.0);
        let times: Vec<f64> = (0..=40).map(|k| k as f64).collect();
        let (tau, abs) = solve_diagonal(&p, 1.0, 0.0, 0.0, &times).unwrap();
        assert!((tau.last().unwrap() - 1.0).abs() < 1e-12);
        assert!(abs.is_some());
    }

    #[test]
    fn horizon_requests_extension() {
        let p = drift_profile(0.0, 1.0, 0.25);
        let err = solve_diagonal(&p, 1.0, 0.0, 0.0, &[0.5, 2.0]).unwrap_err();
        assert!(matches!(err, TimeChangeError::NeedsExtension { .. }));
    }

    #[test]
    fn walk_reaches_target_exactly() {
        let p = drift_profile(0.3, 4.0, 1.0 / 16.0);
        let s = DiagonalState::new(&p, 0.0).unwrap();
        let t = s.time_to(&p, 1.0, 0.77, 10.0, DEFAULT_ABSORB_EPS).unwrap().unwrap();
        let mut s2 = s;
        assert_eq!(s2.walk(&p, 1.0, t, 0.77, DEFAULT_ABSORB_EPS).unwrap(), Walk::Reached(t));
        assert_eq!(s2.tau, 0.77);
        let want = (1.0f64 + 0.3 * 0.77).ln() / 0.3;
        assert!((t - want).abs() < 1e-13);
    }
}
