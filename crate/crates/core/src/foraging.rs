//! Level-based foraging with two agents and cooperative picks.
//!
//! Candidate food cells are fixed per grid (drawn once from the config's
//! candidate seed); each scenario activates a subset of them, fixes a capture
//! order and places the agents.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::{index, SliceRandom};
use thiserror::Error;

use crate::grid::{Cell, Grid, Move};
use crate::mdp::{MdpError, TabularMDP, Transitions};
use crate::seeds;

pub const N_ACTIONS: usize = 6;
pub const N_JOINT_ACTIONS: usize = N_ACTIONS * N_ACTIONS;

/// Grid sides with tested configurations.
pub const SUPPORTED_SIDES: [u8; 7] = [5, 6, 7, 8, 10, 15, 20];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ForagingError {
    #[error("grid {width}x{height} cannot hold {needed} spaced food cells")]
    GridTooSmall { width: u8, height: u8, needed: usize },
    #[error("invalid configuration: {0}")]
    Config(&'static str),
    #[error("joint action {0} out of range")]
    BadAction(usize),
    #[error("food {0} is not present")]
    TargetAbsent(usize),
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ForagingAction {
    Up,
    Down,
    Left,
    Right,
    Stay,
    Load,
}

impl ForagingAction {
    pub const ALL: [ForagingAction; N_ACTIONS] = [
        ForagingAction::Up,
        ForagingAction::Down,
        ForagingAction::Left,
        ForagingAction::Right,
        ForagingAction::Stay,
        ForagingAction::Load,
    ];

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Movement part; `Load` does not move.
    pub fn movement(self) -> Move {
        match self {
            ForagingAction::Up => Move::Up,
            ForagingAction::Down => Move::Down,
            ForagingAction::Left => Move::Left,
            ForagingAction::Right => Move::Right,
            ForagingAction::Stay | ForagingAction::Load => Move::Stay,
        }
    }
}

/// Joint index of an ordered action pair (agent 0 most significant).
pub fn joint_action(a0: ForagingAction, a1: ForagingAction) -> usize {
    a0.index() * N_ACTIONS + a1.index()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForagingConfig {
    pub grid: Grid,
    pub agent_levels: [u32; 2],
    pub n_candidate_foods: usize,
    pub n_active_foods: usize,
    pub food_level: u32,
    pub step_limit: u32,
    pub gamma: f64,
    /// Seed of the per-grid candidate food cells.
    pub candidate_seed: u64,
}

impl ForagingConfig {
    /// Two level-1 agents, 6 of 8 level-2 foods, 600 steps.
    pub fn standard(side: u8, candidate_seed: u64) -> Self {
        ForagingConfig {
            grid: Grid::square(side),
            agent_levels: [1, 1],
            n_candidate_foods: 8,
            n_active_foods: 6,
            food_level: 2,
            step_limit: 600,
            gamma: 0.95,
            candidate_seed,
        }
    }

    pub fn validate(&self) -> Result<(), ForagingError> {
        if self.food_level != self.agent_levels.iter().sum::<u32>() {
            return Err(ForagingError::Config("food level must equal the sum of agent levels"));
        }
        if self.agent_levels.contains(&0) {
            return Err(ForagingError::Config("agent levels must be positive"));
        }
        if self.n_active_foods == 0 || self.n_active_foods > self.n_candidate_foods {
            return Err(ForagingError::Config("need 0 < active foods <= candidate foods"));
        }
        if self.n_candidate_foods > 32 || self.n_candidate_foods + 2 > self.grid.n_cells() {
            return Err(ForagingError::GridTooSmall {
                width: self.grid.width,
                height: self.grid.height,
                needed: self.n_candidate_foods,
            });
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(ForagingError::Config("discount must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// One scenario: active foods, capture order and agent starts.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ForagingLayout {
    /// Indices into the candidate cells, ascending.
    pub active: Vec<usize>,
    /// Capture order, a permutation of `active`.
    pub sequence: Vec<usize>,
    pub starts: [Cell; 2],
}

impl ForagingLayout {
    pub fn food_mask(&self) -> u32 {
        self.active.iter().fold(0, |m, &f| m | (1 << f))
    }
}

/// Agent positions plus a present-food bitmask over candidate indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ForagingState {
    pub agents: [Cell; 2],
    pub food: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PickEvent {
    pub food: usize,
}

/// Draws candidate cells with pairwise Chebyshev distance of at least 2.
///
/// The spacing keeps every empty cell connected and leaves each food at
/// least two free neighbours, so two agents can always stand beside it.
pub fn sample_candidates(grid: Grid, n: usize, seed: u64) -> Result<Vec<Cell>, ForagingError> {
    let mut rng = seeds::rng(seeds::derive(seed, seeds::tags::CANDIDATES));
    let mut cells: Vec<Cell> = grid.cells().collect();
    for _ in 0..10_000 {
        cells.shuffle(&mut rng);
        let mut chosen: Vec<Cell> = Vec::with_capacity(n);
        for &c in &cells {
            if chosen.iter().all(|&o| o.king_distance(c) >= 2) {
                chosen.push(c);
                if chosen.len() == n {
                    chosen.sort();
                    return Ok(chosen);
                }
            }
        }
    }
    Err(ForagingError::GridTooSmall {
        width: grid.width,
        height: grid.height,
        needed: n,
    })
}

/// Environment instance for one grid: configuration plus candidate cells.
#[derive(Debug, Clone)]
pub struct Foraging {
    config: ForagingConfig,
    candidates: Vec<Cell>,
}

impl Foraging {
    pub fn new(config: ForagingConfig) -> Result<Self, ForagingError> {
        config.validate()?;
        let candidates = sample_candidates(config.grid, config.n_candidate_foods, config.candidate_seed)?;
        Ok(Foraging { config, candidates })
    }

    pub fn config(&self) -> &ForagingConfig {
        &self.config
    }

    pub fn grid(&self) -> Grid {
        self.config.grid
    }

    pub fn candidates(&self) -> &[Cell] {
        &self.candidates
    }

    /// Deterministic scenario for `seed`.
    pub fn sample_layout(&self, seed: u64) -> ForagingLayout {
        let mut rng = seeds::rng(seed);
        let mut active = index::sample(&mut rng, self.candidates.len(), self.config.n_active_foods).into_vec();
        active.sort_unstable();
        let mut sequence = active.clone();
        sequence.shuffle(&mut rng);
        let free: Vec<Cell> = self
            .grid()
            .cells()
            .filter(|c| !active.iter().any(|&f| self.candidates[f] == *c))
            .collect();
        let picks = index::sample(&mut rng, free.len(), 2);
        ForagingLayout {
            active,
            sequence,
            starts: [free[picks.index(0)], free[picks.index(1)]],
        }
    }

    pub fn initial_state(&self, layout: &ForagingLayout) -> ForagingState {
        ForagingState {
            agents: layout.starts,
            food: layout.food_mask(),
        }
    }

    fn food_at(&self, food: u32, c: Cell) -> bool {
        self.candidates
            .iter()
            .enumerate()
            .any(|(f, &fc)| food & (1 << f) != 0 && fc == c)
    }

    /// Simultaneous step for joint index `joint`.
    ///
    /// Movers targeting a wall, a present food, the other agent's cell or the
    /// other agent's target stay. A present food is picked when the agents
    /// next to it that issue `Load` reach its level together.
    pub fn step(&self, state: &ForagingState, joint: usize) -> Result<(ForagingState, Vec<PickEvent>), ForagingError> {
        if joint >= N_JOINT_ACTIONS {
            return Err(ForagingError::BadAction(joint));
        }
        let acts = [
            ForagingAction::ALL[joint / N_ACTIONS],
            ForagingAction::ALL[joint % N_ACTIONS],
        ];
        let (next, picked) = self.transition(state.agents, state.food, acts);
        let events = (0..self.candidates.len())
            .filter(|f| picked & (1 << f) != 0)
            .map(|food| PickEvent { food })
            .collect();
        Ok((
            ForagingState {
                agents: next,
                food: state.food & !picked,
            },
            events,
        ))
    }

    /// Moved positions and the mask of picked foods.
    pub(crate) fn transition(&self, agents: [Cell; 2], food: u32, acts: [ForagingAction; 2]) -> ([Cell; 2], u32) {
        let grid = self.grid();
        let target = |i: usize| -> Option<Cell> {
            match acts[i].movement() {
                Move::Stay => None,
                m => grid.offset(agents[i], m).filter(|&t| !self.food_at(food, t)),
            }
        };
        let t = [target(0), target(1)];
        let mut next = agents;
        for i in 0..2 {
            let j = 1 - i;
            if let Some(c) = t[i] {
                if c != agents[j] && t[j] != Some(c) {
                    next[i] = c;
                }
            }
        }
        let mut picked = 0;
        for (f, &fc) in self.candidates.iter().enumerate() {
            if food & (1 << f) == 0 {
                continue;
            }
            let level: u32 = (0..2)
                .filter(|&i| acts[i] == ForagingAction::Load && agents[i].is_adjacent(fc))
                .map(|i| self.config.agent_levels[i])
                .sum();
            if level > 0 && level >= self.config.food_level {
                picked |= 1 << f;
            }
        }
        (next, picked)
    }

    /// Shared dynamics of every goal model with `food` present.
    pub fn goal_dynamics(&self, food: u32) -> ForagingDynamics {
        let grid = self.grid();
        let index = PairIndex::new(grid, |c| !self.food_at(food, c));
        let n_pairs = index.n_pairs();
        let absorbing = n_pairs as u32;
        let mut next = Vec::with_capacity((n_pairs + 1) * N_JOINT_ACTIONS);
        let mut picks = Vec::new();
        for s in 0..n_pairs {
            let agents = index.decode(s);
            for j in 0..N_JOINT_ACTIONS {
                let acts = [ForagingAction::ALL[j / N_ACTIONS], ForagingAction::ALL[j % N_ACTIONS]];
                let (moved, picked) = self.transition(agents, food, acts);
                if picked != 0 {
                    picks.push((s * N_JOINT_ACTIONS + j, picked));
                    next.push(absorbing);
                } else {
                    next.push(index.encode(moved[0], moved[1]).expect("moves stay legal") as u32);
                }
            }
        }
        next.extend(core::iter::repeat_n(absorbing, N_JOINT_ACTIONS));
        let n_states = n_pairs + 1;
        let base = TabularMDP::new(
            n_states,
            N_JOINT_ACTIONS,
            Transitions::Deterministic(next),
            vec![0.0; n_states * N_JOINT_ACTIONS],
            self.config.gamma,
        )
        .expect("foraging kernel is deterministic and in range");
        ForagingDynamics { food, index, base, picks }
    }

    /// Joint model for picking `target` with `food` present.
    pub fn goal_mdp(&self, food: u32, target: usize) -> Result<(ForagingDynamics, TabularMDP), ForagingError> {
        let dynamics = self.goal_dynamics(food);
        let mdp = dynamics.goal_mdp(target)?;
        Ok((dynamics, mdp))
    }
}

/// Convenience wrapper: candidate cells and scenario for `seed`.
pub fn sample_layout(seed: u64, config: &ForagingConfig) -> Result<(Vec<Cell>, ForagingLayout), ForagingError> {
    let env = Foraging::new(config.clone())?;
    let layout = env.sample_layout(seed);
    Ok((env.candidates, layout))
}

/// Foraging step as a free function.
pub fn foraging_step(
    env: &Foraging,
    state: &ForagingState,
    joint: usize,
) -> Result<(ForagingState, Vec<PickEvent>), ForagingError> {
    env.step(state, joint)
}

/// Goal model for `target` with `food` present.
pub fn goal_mdp_foraging(env: &Foraging, food: u32, target: usize) -> Result<TabularMDP, ForagingError> {
    env.goal_mdp(food, target).map(|(_, m)| m)
}

/// Indexing of ordered pairs of distinct free cells.
#[derive(Debug, Clone)]
pub struct PairIndex {
    grid: Grid,
    free: Vec<Cell>,
    slot: Vec<u16>,
}

impl PairIndex {
    pub fn new(grid: Grid, is_free: impl Fn(Cell) -> bool) -> Self {
        let mut slot = vec![u16::MAX; grid.n_cells()];
        let mut free = Vec::new();
        for c in grid.cells() {
            if is_free(c) {
                slot[grid.index(c)] = free.len() as u16;
                free.push(c);
            }
        }
        PairIndex { grid, free, slot }
    }

    pub fn n_pairs(&self) -> usize {
        self.free.len() * (self.free.len() - 1)
    }

    pub fn encode(&self, a: Cell, b: Cell) -> Option<usize> {
        if !self.grid.contains(a) || !self.grid.contains(b) {
            return None;
        }
        let i = self.slot[self.grid.index(a)];
        let j = self.slot[self.grid.index(b)];
        if i == u16::MAX || j == u16::MAX || i == j {
            return None;
        }
        let (i, j) = (i as usize, j as usize);
        Some(i * (self.free.len() - 1) + if j < i { j } else { j - 1 })
    }

    pub fn decode(&self, s: usize) -> [Cell; 2] {
        let m = self.free.len() - 1;
        let i = s / m;
        let r = s % m;
        let j = if r < i { r } else { r + 1 };
        [self.free[i], self.free[j]]
    }
}

/// Deterministic joint dynamics for one present-food configuration.
///
/// Any pick moves to the shared absorbing state (the last index); goal
/// models differ only in which picks are rewarded.
#[derive(Debug, Clone)]
pub struct ForagingDynamics {
    pub food: u32,
    pub index: PairIndex,
    base: TabularMDP,
    /// `(pair, picked mask)` for every picking `(state, joint action)`.
    picks: Vec<(usize, u32)>,
}

impl ForagingDynamics {
    pub fn n_states(&self) -> usize {
        self.index.n_pairs() + 1
    }

    pub fn absorbing(&self) -> usize {
        self.index.n_pairs()
    }

    pub fn state(&self, s: &ForagingState) -> Option<usize> {
        if s.food != self.food {
            return None;
        }
        self.index.encode(s.agents[0], s.agents[1])
    }

    /// Unit reward on any joint action that picks `target`.
    pub fn goal_mdp(&self, target: usize) -> Result<TabularMDP, ForagingError> {
        if target >= 32 || self.food & (1 << target) == 0 {
            return Err(ForagingError::TargetAbsent(target));
        }
        let mut rewards = vec![0.0; self.n_states() * N_JOINT_ACTIONS];
        for &(pair, mask) in &self.picks {
            if mask & (1 << target) != 0 {
                rewards[pair] = 1.0;
            }
        }
        Ok(self.base.with_rewards(rewards)?)
    }

    /// The dynamics with an all-zero reward table.
    pub fn base(&self) -> &TabularMDP {
        &self.base
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ForagingAction::*;

    fn env(side: u8) -> Foraging {
        Foraging::new(ForagingConfig::standard(side, 11)).unwrap()
    }

    #[test]
    fn candidates_are_spaced_and_distinct() {
        for side in SUPPORTED_SIDES {
            let e = env(side);
            let c = e.candidates();
            assert_eq!(c.len(), 8);
            for i in 0..8 {
                for j in i + 1..8 {
                    assert!(c[i].king_distance(c[j]) >= 2);
                }
            }
        }
    }

    #[test]
    fn layouts_are_deterministic_and_valid() {
        let e = env(5);
        for seed in 0..200 {
            let l = e.sample_layout(seed);
            assert_eq!(l, e.sample_layout(seed));
            assert_eq!(l.active.len(), 6);
            let mut seq = l.sequence.clone();
            seq.sort();
            assert_eq!(seq, l.active);
            let mut cells: Vec<Cell> = l.active.iter().map(|&f| e.candidates()[f]).collect();
            cells.extend(l.starts);
            let n = cells.len();
            cells.sort();
            cells.dedup();
            assert_eq!(cells.len(), n);
        }
    }

    fn place(food: &[usize], a: Cell, b: Cell) -> ForagingState {
        ForagingState {
            agents: [a, b],
            food: food.iter().fold(0, |m, &f| m | 1 << f),
        }
    }

    /// A food with two free horizontal neighbours.
    fn flanked(e: &Foraging) -> (usize, Cell, Cell) {
        for (f, &c) in e.candidates().iter().enumerate() {
            if c.col >= 1 && c.col + 1 < e.grid().width {
                return (f, Cell::new(c.row, c.col - 1), Cell::new(c.row, c.col + 1));
            }
        }
        unreachable!()
    }

    #[test]
    fn joint_load_picks() {
        let e = env(6);
        let (f, l, r) = flanked(&e);
        let s = place(&[f], l, r);
        let (n, ev) = e.step(&s, joint_action(Load, Load)).unwrap();
        assert_eq!(ev, vec![PickEvent { food: f }]);
        assert_eq!(n.food, 0);
        let (n, ev) = e.step(&s, joint_action(Load, Stay)).unwrap();
        assert!(ev.is_empty());
        assert_eq!(n.food, s.food);
        assert!(e.step(&s, 36).is_err());
    }

    #[test]
    fn movement_rules() {
        let e = env(6);
        let s = ForagingState {
            agents: [Cell::new(0, 0), Cell::new(5, 5)],
            food: 0,
        };
        let (n, _) = e.step(&s, joint_action(Up, Stay)).unwrap();
        assert_eq!(n.agents, s.agents);
        let s = ForagingState {
            agents: [Cell::new(2, 1), Cell::new(2, 3)],
            food: 0,
        };
        let (n, _) = e.step(&s, joint_action(Right, Left)).unwrap();
        assert_eq!(n.agents, s.agents);
        // Present food blocks the move onto it.
        let (f, l, _) = flanked(&e);
        let other = e.grid().cells().find(|&c| c != l && !e.candidates().contains(&c)).unwrap();
        let s = place(&[f], l, other);
        let (n, _) = e.step(&s, joint_action(Right, Stay)).unwrap();
        assert_eq!(n.agents[0], l);
        // Both agents heading to the same empty cell stay.
        let s = ForagingState {
            agents: [Cell::new(0, 0), Cell::new(0, 2)],
            food: 0,
        };
        let (n, _) = e.step(&s, joint_action(Right, Left)).unwrap();
        assert_eq!(n.agents, s.agents);
    }

    #[test]
    fn state_count_matches_enumeration() {
        let e = env(5);
        let food = (0..6).fold(0u32, |m, f| m | 1 << f);
        let (dyns, mdp) = e.goal_mdp(food, 0).unwrap();
        assert_eq!(mdp.n_states(), 19 * 18 + 1);
        let mut count = 0;
        let free: Vec<Cell> = e.grid().cells().filter(|&c| !e.food_at(food, c)).collect();
        for &a in &free {
            for &b in &free {
                if a != b {
                    assert!(dyns.index.encode(a, b).is_some());
                    count += 1;
                }
            }
        }
        assert_eq!(count, 342);
        for s in 0..dyns.index.n_pairs() {
            let [a, b] = dyns.index.decode(s);
            assert_eq!(dyns.index.encode(a, b), Some(s));
        }
        assert!(matches!(e.goal_mdp(food, 7), Err(ForagingError::TargetAbsent(7))));
    }

    #[test]
    fn terminal_pick_is_rewarded_and_absorbing() {
        let e = env(6);
        let (f, l, r) = flanked(&e);
        let (dyns, mdp) = e.goal_mdp(1 << f, f).unwrap();
        let s = dyns.index.encode(l, r).unwrap();
        let j = joint_action(Load, Load);
        assert_eq!(mdp.reward(s, j), 1.0);
        assert_eq!(mdp.successor(s, j), Some(dyns.absorbing()));
        for a in 0..N_JOINT_ACTIONS {
            assert_eq!(mdp.successor(dyns.absorbing(), a), Some(dyns.absorbing()));
            assert_eq!(mdp.reward(dyns.absorbing(), a), 0.0);
        }
    }

    #[test]
    fn rows_have_one_unit_entry() {
        let e = env(5);
        let (_, mdp) = e.goal_mdp(0b111, 1).unwrap();
        for x in 0..mdp.n_states() {
            for a in 0..N_JOINT_ACTIONS {
                assert_eq!(mdp.transitions().row_len(mdp.n_states(), x * N_JOINT_ACTIONS + a), 1);
            }
        }
    }
}
