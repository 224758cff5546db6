//! Gridworld environments with lava and an absorbing goal, plus softened
//! value-iteration experts.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use crate::occupancy::StateFeatures;
use crate::policy::SoftmaxPolicy;

/// Action order: north, south, east, west.
pub const ACTIONS: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, 1), (0, -1)];
pub const ACTION_NAMES: [&str; 4] = ["N", "S", "E", "W"];
pub const EAST: usize = 2;

pub const DEFAULT_SLIP_PROB: f64 = 0.1;
pub const VALUE_ITERATION_TOL: f64 = 1e-10;
pub const DEFAULT_EXPERT_BETA: f64 = 10.0;

fn default_slip() -> f64 {
    DEFAULT_SLIP_PROB
}

/// A grid cell as `[row, col]`.
pub type Cell = [usize; 2];

/// Where episodes begin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartDistribution {
    /// Point mass on `start`.
    #[default]
    Start,
    /// Uniform over every cell that is neither lava nor the goal.
    UniformFloor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub lava_cells: Vec<Cell>,
    pub start: Cell,
    pub goal: Cell,
    #[serde(default = "default_slip")]
    pub slip_prob: f64,
    #[serde(default)]
    pub start_distribution: StartDistribution,
}

impl GridSpec {
    pub fn open(width: usize, height: usize, start: Cell, goal: Cell) -> Self {
        Self {
            width,
            height,
            lava_cells: Vec::new(),
            start,
            goal,
            slip_prob: DEFAULT_SLIP_PROB,
            start_distribution: StartDistribution::Start,
        }
    }

    fn in_bounds(&self, c: Cell) -> bool {
        c[0] < self.height && c[1] < self.width
    }

    pub fn is_lava(&self, c: Cell) -> bool {
        self.lava_cells.contains(&c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid("grid", msg));
        if self.width == 0 || self.height == 0 {
            return bad(format!("{}x{} grid has no cells", self.height, self.width));
        }
        for (name, c) in [("start", self.start), ("goal", self.goal)] {
            if !self.in_bounds(c) {
                return bad(format!("{name} {c:?} is out of bounds"));
            }
            if self.is_lava(c) {
                return bad(format!("{name} {c:?} is a lava cell"));
            }
        }
        if self.start == self.goal {
            return bad("start and goal coincide".into());
        }
        if let Some(c) = self.lava_cells.iter().find(|c| !self.in_bounds(**c)) {
            return bad(format!("lava cell {c:?} is out of bounds"));
        }
        if !(0.0..=1.0).contains(&self.slip_prob) {
            return bad(format!("slip_prob {} is outside [0, 1]", self.slip_prob));
        }
        Ok(())
    }

    /// Text picture: `#` lava, `S` start, `G` goal, `.` floor.
    pub fn render(&self) -> String {
        let mut out = String::with_capacity((self.width + 1) * self.height);
        for r in 0..self.height {
            for c in 0..self.width {
                let cell = [r, c];
                out.push(if cell == self.start {
                    'S'
                } else if cell == self.goal {
                    'G'
                } else if self.is_lava(cell) {
                    '#'
                } else {
                    '.'
                });
            }
            out.push('\n');
        }
        out
    }
}

/// What a state index stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridState {
    Cell(Cell),
    GoalSink,
    LavaSink,
}

/// A built gridworld: the MDP, the cell/state maps and the sparse goal reward.
#[derive(Debug, Clone)]
pub struct Gridworld {
    pub spec: GridSpec,
    pub mdp: TabularMdp,
    /// `r(s, a)`: probability that `a` from `s` enters the goal.
    pub reward: Vec<f64>,
    states: Vec<GridState>,
    goal_sink: usize,
    lava_sink: Option<usize>,
}

impl Gridworld {
    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    /// State index of a cell (row-major).
    pub fn state_of(&self, cell: Cell) -> Option<usize> {
        self.spec
            .in_bounds(cell)
            .then_some(cell[0] * self.spec.width + cell[1])
    }

    pub fn describe(&self, s: usize) -> Option<GridState> {
        self.states.get(s).copied()
    }

    pub fn goal_sink(&self) -> usize {
        self.goal_sink
    }

    pub fn lava_sink(&self) -> Option<usize> {
        self.lava_sink
    }
}

/// Builds the gridworld MDP.
///
/// Cells are states `row * width + col`, followed by the goal sink and, when
/// any lava exists, the lava sink. Moving off the grid keeps the position.
/// With probability `slip_prob` the chosen action is replaced by one drawn
/// uniformly from all four.
pub fn build_gridworld(spec: &GridSpec, gamma: f64) -> Result<Gridworld> {
    spec.validate()?;
    let n_cells = spec.width * spec.height;
    let goal_sink = n_cells;
    let lava_sink = (!spec.lava_cells.is_empty()).then_some(n_cells + 1);
    let n_states = n_cells + 1 + usize::from(lava_sink.is_some());
    let na = ACTIONS.len();

    let mut states: Vec<GridState> = (0..n_cells)
        .map(|i| GridState::Cell([i / spec.width, i % spec.width]))
        .collect();
    states.push(GridState::GoalSink);
    if lava_sink.is_some() {
        states.push(GridState::LavaSink);
    }

    let land = |cell: Cell| -> usize {
        if cell == spec.goal {
            goal_sink
        } else if spec.is_lava(cell) {
            lava_sink.expect("lava exists")
        } else {
            cell[0] * spec.width + cell[1]
        }
    };
    let step = |cell: Cell, a: usize| -> Cell {
        let (dr, dc) = ACTIONS[a];
        let r = cell[0] as isize + dr;
        let c = cell[1] as isize + dc;
        if r < 0 || c < 0 || r as usize >= spec.height || c as usize >= spec.width {
            cell
        } else {
            [r as usize, c as usize]
        }
    };

    let mut rows = Vec::with_capacity(n_states * na);
    let mut reward = vec![0.0; n_states * na];
    for (s, state) in states.iter().enumerate() {
        for a in 0..na {
            let row: Vec<(usize, f64)> = match *state {
                GridState::GoalSink | GridState::LavaSink => vec![(s, 1.0)],
                GridState::Cell(cell) if cell == spec.goal => vec![(goal_sink, 1.0)],
                GridState::Cell(cell) if spec.is_lava(cell) => {
                    vec![(lava_sink.expect("lava exists"), 1.0)]
                }
                GridState::Cell(cell) => {
                    let slip = spec.slip_prob / na as f64;
                    let mut row = Vec::with_capacity(na + 1);
                    row.push((land(step(cell, a)), 1.0 - spec.slip_prob));
                    for b in 0..na {
                        row.push((land(step(cell, b)), slip));
                    }
                    row
                }
            };
            if matches!(state, GridState::Cell(c) if *c != spec.goal && !spec.is_lava(*c)) {
                reward[s * na + a] = row
                    .iter()
                    .filter(|&&(j, _)| j == goal_sink)
                    .map(|&(_, p)| p)
                    .sum();
            }
            rows.push(row);
        }
    }
    let mut rho = vec![0.0; n_states];
    match spec.start_distribution {
        StartDistribution::Start => rho[spec.start[0] * spec.width + spec.start[1]] = 1.0,
        StartDistribution::UniformFloor => {
            let floor: Vec<usize> = (0..n_cells)
                .filter(|&i| {
                    let c = [i / spec.width, i % spec.width];
                    c != spec.goal && !spec.is_lava(c)
                })
                .collect();
            for &i in &floor {
                rho[i] = 1.0 / floor.len() as f64;
            }
        }
    }
    let mdp = TabularMdp::from_sparse_rows(n_states, na, gamma, rho, rows)?;
    Ok(Gridworld {
        spec: spec.clone(),
        mdp,
        reward,
        states,
        goal_sink,
        lava_sink,
    })
}

/// Optimal action values `Q*` by value iteration to sup-norm change below
/// [`VALUE_ITERATION_TOL`].
pub fn optimal_q(mdp: &TabularMdp, reward: &[f64]) -> Result<Vec<f64>> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    if reward.len() != ns * na {
        return Err(Error::Config(format!(
            "reward has {} entries, expected {}",
            reward.len(),
            ns * na
        )));
    }
    let gamma = mdp.gamma();
    let mut v = vec![0.0; ns];
    let mut q = vec![0.0; ns * na];
    loop {
        for s in 0..ns {
            for a in 0..na {
                let next: f64 = mdp.row(s, a).iter().map(|&(j, p)| p * v[j]).sum();
                q[s * na + a] = reward[s * na + a] + gamma * next;
            }
        }
        let mut delta: f64 = 0.0;
        for s in 0..ns {
            let best = q[s * na..(s + 1) * na]
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max);
            delta = delta.max((best - v[s]).abs());
            v[s] = best;
        }
        if delta < VALUE_ITERATION_TOL {
            return Ok(q);
        }
    }
}

/// Softened expert: tabular softmax with logits `beta * Q*(s, a)`.
pub fn expert_policy(mdp: &TabularMdp, reward: &[f64], beta: f64) -> Result<SoftmaxPolicy> {
    if !beta.is_finite() || beta < 0.0 {
        return Err(Error::Config(format!("beta = {beta} must be finite and >= 0")));
    }
    let q = optimal_q(mdp, reward)?;
    SoftmaxPolicy::tabular_with_theta(
        mdp.n_states(),
        mdp.n_actions(),
        q.into_iter().map(|v| beta * v).collect(),
    )
}

/// Coarse state features: one indicator per `tile x tile` block of cells, and
/// one per sink.
pub fn tile_features(grid: &Gridworld, tile: usize) -> Result<Arc<StateFeatures>> {
    if tile == 0 {
        return Err(Error::Config("tile size must be >= 1".into()));
    }
    let spec = &grid.spec;
    let tiles_c = spec.width.div_ceil(tile);
    let tiles_r = spec.height.div_ceil(tile);
    let n_tiles = tiles_r * tiles_c;
    let n_sinks = grid.n_states() - spec.width * spec.height;
    let dim = n_tiles + n_sinks;
    let mut table = vec![0.0; grid.n_states() * dim];
    for (s, state) in grid.states.iter().enumerate() {
        let k = match *state {
            GridState::Cell([r, c]) => (r / tile) * tiles_c + c / tile,
            GridState::GoalSink => n_tiles,
            GridState::LavaSink => n_tiles + 1,
        };
        table[s * dim + k] = 1.0;
    }
    Ok(Arc::new(StateFeatures::new(grid.n_states(), dim, table)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::exact_occupancy;
    use proptest::prelude::*;

    fn expected_return(g: &Gridworld, p: &SoftmaxPolicy) -> f64 {
        let (_, lambda) = exact_occupancy(&g.mdp, p).unwrap();
        lambda.probs().iter().zip(&g.reward).map(|(l, r)| l * r).sum()
    }

    fn lava_5x5() -> GridSpec {
        GridSpec {
            lava_cells: vec![[2, 2]],
            ..GridSpec::open(5, 5, [0, 0], [4, 4])
        }
    }

    #[test]
    fn one_by_two_grid() {
        let spec = GridSpec {
            slip_prob: 0.0,
            ..GridSpec::open(2, 1, [0, 0], [0, 1])
        };
        let g = build_gridworld(&spec, 0.9).unwrap();
        assert_eq!(g.n_states(), 3);
        assert_eq!(g.mdp.row(0, EAST), &[(g.goal_sink(), 1.0)]);
        assert_eq!(g.reward[EAST], 1.0);
        assert_eq!(g.mdp.row(0, 0), &[(0, 1.0)]);
        assert_eq!(g.describe(2), Some(GridState::GoalSink));
    }

    #[test]
    fn lava_grid_counts_two_sinks() {
        let g = build_gridworld(&lava_5x5(), 0.9).unwrap();
        assert_eq!(g.n_states(), 27);
        assert_eq!(g.lava_sink(), Some(26));
        let open = build_gridworld(&GridSpec::open(5, 5, [0, 0], [4, 4]), 0.9).unwrap();
        assert_eq!(open.n_states(), 26);
    }

    #[test]
    fn sinks_absorb() {
        let g = build_gridworld(&lava_5x5(), 0.9).unwrap();
        for s in [g.goal_sink(), g.lava_sink().unwrap()] {
            for a in 0..4 {
                assert_eq!(g.mdp.row(s, a), &[(s, 1.0)]);
            }
        }
    }

    #[test]
    fn walls_keep_position() {
        let spec = GridSpec {
            slip_prob: 0.0,
            ..GridSpec::open(3, 3, [0, 0], [2, 2])
        };
        let g = build_gridworld(&spec, 0.9).unwrap();
        assert_eq!(g.mdp.row(0, 0), &[(0, 1.0)]);
        assert_eq!(g.mdp.row(0, 3), &[(0, 1.0)]);
        assert_eq!(g.mdp.row(0, 1), &[(3, 1.0)]);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = lava_5x5();
        s.start = [2, 2];
        assert!(build_gridworld(&s, 0.9).is_err());
        let mut s = lava_5x5();
        s.goal = [5, 0];
        assert!(build_gridworld(&s, 0.9).is_err());
        let mut s = lava_5x5();
        s.slip_prob = 1.5;
        assert!(build_gridworld(&s, 0.9).is_err());
    }

    #[test]
    fn uniform_floor_start_skips_lava_and_goal() {
        let spec = GridSpec {
            start_distribution: StartDistribution::UniformFloor,
            ..lava_5x5()
        };
        let g = build_gridworld(&spec, 0.9).unwrap();
        let rho = g.mdp.rho();
        assert_eq!(rho.iter().filter(|&&p| p > 0.0).count(), 23);
        assert_eq!(rho[g.state_of([2, 2]).unwrap()], 0.0);
        assert_eq!(rho[g.state_of([4, 4]).unwrap()], 0.0);
        assert_eq!(rho[g.goal_sink()], 0.0);
    }

    #[test]
    fn render_marks_cells() {
        assert_eq!(lava_5x5().render(), "S....\n.....\n..#..\n.....\n....G\n");
    }

    #[test]
    fn expert_on_two_cells_goes_east() {
        let spec = GridSpec {
            slip_prob: 0.0,
            ..GridSpec::open(2, 1, [0, 0], [0, 1])
        };
        let g = build_gridworld(&spec, 0.3).unwrap();
        let e = expert_policy(&g.mdp, &g.reward, DEFAULT_EXPERT_BETA).unwrap();
        assert!(e.action_probs(0)[EAST] >= 0.99);
    }

    #[test]
    fn zero_beta_is_uniform() {
        let g = build_gridworld(&lava_5x5(), 0.9).unwrap();
        let e = expert_policy(&g.mdp, &g.reward, 0.0).unwrap();
        for s in 0..g.n_states() {
            assert!(e.action_probs(s).iter().all(|&p| (p - 0.25).abs() < 1e-15));
        }
    }

    #[test]
    fn expert_returns_are_ordered() {
        for spec in [lava_5x5(), GridSpec::open(4, 3, [0, 0], [2, 3])] {
            let g = build_gridworld(&spec, 0.9).unwrap();
            let uniform = expected_return(&g, &SoftmaxPolicy::tabular(g.n_states(), 4));
            let soft = expected_return(&g, &expert_policy(&g.mdp, &g.reward, 1.0).unwrap());
            let sharp = expected_return(&g, &expert_policy(&g.mdp, &g.reward, 10.0).unwrap());
            assert!(uniform < soft && soft < sharp, "{uniform} {soft} {sharp}");
        }
    }

    #[test]
    fn tile_features_partition_cells() {
        let g = build_gridworld(&lava_5x5(), 0.9).unwrap();
        let f = tile_features(&g, 2).unwrap();
        assert_eq!(f.dim(), 9 + 2);
        for s in 0..g.n_states() {
            assert_eq!(f.row(s).iter().sum::<f64>(), 1.0);
        }
        assert_eq!(f.row(g.state_of([4, 4]).unwrap())[8], 1.0);
    }

    fn arb_spec() -> impl Strategy<Value = GridSpec> {
        (1usize..7, 1usize..7, 0.0..=1.0f64).prop_flat_map(|(w, h, slip)| {
            let n = w * h;
            (
                Just((w, h, slip)),
                0..n,
                0..n,
                proptest::collection::vec(0..n, 0..n),
            )
        })
        .prop_filter_map("start and goal must differ", |((w, h, slip), s, g, lava)| {
            if s == g {
                return None;
            }
            let cell = |i: usize| [i / w, i % w];
            let mut lava_cells: Vec<Cell> = lava
                .into_iter()
                .filter(|&i| i != s && i != g)
                .map(cell)
                .collect();
            lava_cells.sort();
            lava_cells.dedup();
            Some(GridSpec {
                width: w,
                height: h,
                lava_cells,
                start: cell(s),
                goal: cell(g),
                slip_prob: slip,
                start_distribution: if (w + h) % 2 == 0 {
                    StartDistribution::Start
                } else {
                    StartDistribution::UniformFloor
                },
            })
        })
    }

    proptest! {
        #[test]
        fn fuzzed_grids_are_valid_mdps(spec in arb_spec(), gamma in 0.0..0.999f64) {
            let g = build_gridworld(&spec, gamma).unwrap();
            let file = g.mdp.to_file();
            prop_assert!(file.checks(None).iter().all(|c| c.passed));
            for s in 0..g.n_states() {
                for a in 0..4 {
                    let sum: f64 = g.mdp.row(s, a).iter().map(|e| e.1).sum();
                    prop_assert!((sum - 1.0).abs() < 1e-12);
                }
            }
            prop_assert!(g.reward.iter().all(|r| (0.0..=1.0).contains(r)));
        }
    }
}
