//! Split of a driver into its own coordinate and the increasing remainder, and
//! the dyadic lower/upper approximants of the remainder.

use super::{CadlagPath, LevyError};

/// `tilde` carries coordinate `i` only; `notilde` carries all other
/// coordinates, with coordinate `i` identically zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPath {
    pub index: usize,
    pub tilde: CadlagPath,
    pub notilde: CadlagPath,
}

/// Split `path` at coordinate `i`. The coordinates `0..m` other than `i`
/// must be nondecreasing in the remainder.
pub fn split(path: &CadlagPath, i: usize, m: usize) -> Result<SplitPath, LevyError> {
    let d = path.dim();
    if i >= d {
        return Err(LevyError::InvalidRequest(format!("split index {i} out of range")));
    }
    let steps = path.steps();
    let mut tilde_grid = vec![0.0; (steps + 1) * d];
    let mut notilde_grid = vec![0.0; (steps + 1) * d];
    for k in 0..=steps {
        for c in 0..d {
            let v = path.grid_value(k, c);
            if c == i {
                tilde_grid[k * d + c] = v;
            } else {
                notilde_grid[k * d + c] = v;
            }
        }
    }
    let mut tilde_jumps = Vec::new();
    let mut notilde_jumps = Vec::new();
    for (j, &t) in path.jump_times().iter().enumerate() {
        let size = path.jump_size(j);
        if size[i] != 0.0 {
            let mut v = vec![0.0; d];
            v[i] = size[i];
            tilde_jumps.push((t, v));
        }
        let mut rest = size.to_vec();
        rest[i] = 0.0;
        if rest.iter().any(|v| *v != 0.0) {
            notilde_jumps.push((t, rest));
        }
    }
    for c in (0..m).filter(|&c| c != i) {
        for k in 0..steps {
            if notilde_grid[(k + 1) * d + c] < notilde_grid[k * d + c] {
                return Err(LevyError::NotIncreasing { coord: c, time: k as f64 * path.mesh() });
            }
        }
        if let Some((t, _)) = notilde_jumps.iter().find(|(_, v)| v[c] < 0.0) {
            return Err(LevyError::NotIncreasing { coord: c, time: *t });
        }
    }
    let mesh = path.mesh();
    Ok(SplitPath {
        index: i,
        tilde: CadlagPath::from_flat(mesh, d, tilde_grid, tilde_jumps)?,
        notilde: CadlagPath::from_flat(mesh, d, notilde_grid, notilde_jumps)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Up,
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    /// A dyadic node where the approximant may change.
    Node,
    /// A driver jump time.
    Jump,
    /// End of the data available from the base path.
    Horizon,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
}

#[derive(Debug, Clone)]
enum ChangeModel {
    EveryNode,
    /// Sorted times of base jumps that move a watched coordinate.
    Jumps(Vec<f64>),
}

/// Piecewise-constant approximant of an increasing path on the dyadic
/// partition of level `M`: the up version takes the value at the left node,
/// the down version the value at the right node.
#[derive(Debug, Clone)]
pub struct DyadicApproximant<'a> {
    pub level: u32,
    pub direction: Direction,
    base: &'a CadlagPath,
    scale: f64,
    sigma: Vec<f64>,
    changes: ChangeModel,
}

/// Approximant of `split.notilde` whose event set includes the jump times of
/// the parent path.
pub fn dyadic_approximant(split: &SplitPath, level: u32, direction: Direction) -> DyadicApproximant<'_> {
    let mut sigma: Vec<f64> = split
        .tilde
        .jump_times()
        .iter()
        .chain(split.notilde.jump_times())
        .copied()
        .collect();
    sigma.sort_by(f64::total_cmp);
    sigma.dedup();
    let d = split.notilde.dim();
    DyadicApproximant::new(&split.notilde, level, direction, sigma, &(0..d).collect::<Vec<_>>())
}

impl<'a> DyadicApproximant<'a> {
    /// `sigma` lists additional event times (sorted); `watch` lists the
    /// coordinates whose changes create node events.
    pub fn new(
        base: &'a CadlagPath,
        level: u32,
        direction: Direction,
        sigma: Vec<f64>,
        watch: &[usize],
    ) -> Self {
        let steps = base.steps();
        let moving_grid = watch.iter().any(|&c| {
            let g0 = base.grid_value(0, c);
            (1..=steps).any(|k| base.grid_value(k, c) != g0)
        });
        let changes = if moving_grid {
            ChangeModel::EveryNode
        } else {
            let times = base
                .jump_times()
                .iter()
                .enumerate()
                .filter(|(j, _)| watch.iter().any(|&c| base.jump_size(*j)[c] != 0.0))
                .map(|(_, t)| *t)
                .collect();
            ChangeModel::Jumps(times)
        };
        Self { level, direction, base, scale: (level as f64).exp2(), sigma, changes }
    }

    fn delta(&self) -> f64 {
        1.0 / self.scale
    }

    /// Left dyadic node of `s`.
    pub fn floor_node(&self, s: f64) -> f64 {
        (s * self.scale).floor() / self.scale
    }

    fn ceil_node(&self, s: f64) -> f64 {
        (s * self.scale).ceil() / self.scale
    }

    /// The base time whose value the approximant shows at `s`.
    fn source_time(&self, s: f64) -> f64 {
        match self.direction {
            Direction::Up => self.floor_node(s),
            Direction::Down => self.floor_node(s) + self.delta(),
        }
    }

    /// Supremum of the times at which the approximant is computable.
    pub fn valid_until(&self) -> f64 {
        match self.direction {
            Direction::Up => self.base.horizon(),
            Direction::Down => self.floor_node(self.base.horizon()),
        }
    }

    pub fn value_at(&self, s: f64) -> Result<Vec<f64>, LevyError> {
        self.base.eval(self.source_time(s))
    }

    pub fn value_into(&self, s: f64, out: &mut [f64]) -> Result<(), LevyError> {
        self.base.eval_into(self.source_time(s), out)
    }

    fn next_change_node(&self, s: f64) -> f64 {
        let n0 = self.floor_node(s);
        match &self.changes {
            ChangeModel::EveryNode => n0 + self.delta(),
            ChangeModel::Jumps(times) => {
                let after = match self.direction {
                    Direction::Up => n0,
                    Direction::Down => n0 + self.delta(),
                };
                let idx = times.partition_point(|t| *t <= after);
                match times.get(idx) {
                    None => f64::INFINITY,
                    Some(&t) => match self.direction {
                        Direction::Up => self.ceil_node(t),
                        Direction::Down => self.ceil_node(t) - self.delta(),
                    },
                }
            }
        }
    }

    /// First event strictly after `s`.
    pub fn next_event_after(&self, s: f64) -> Event {
        let node = self.next_change_node(s);
        let idx = self.sigma.partition_point(|t| *t <= s);
        let jump = self.sigma.get(idx).copied().unwrap_or(f64::INFINITY);
        let limit = self.valid_until();
        let (time, kind) = if node <= jump { (node, EventKind::Node) } else { (jump, EventKind::Jump) };
        if time >= limit {
            Event { time: limit, kind: EventKind::Horizon }
        } else {
            Event { time, kind }
        }
    }

    /// All events in `(0, until]`, together with every dyadic node there.
    pub fn event_times(&self, until: f64) -> Vec<f64> {
        let mut out: Vec<f64> = (1..)
            .map(|k| k as f64 / self.scale)
            .take_while(|t| *t <= until)
            .collect();
        out.extend(self.sigma.iter().copied().filter(|t| *t > 0.0 && *t <= until));
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }
}
