//! Pursuit-evasion: two hunters, greedy evading preys.
//!
//! A prey is captured when at least `capture_requirement` hunters sit in its
//! 4-neighbourhood after the hunters move. Surviving preys then step, one
//! at a time, to the free cell that maximizes their minimum Manhattan
//! distance to the hunters.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::{index, SliceRandom};
use thiserror::Error;

use crate::grid::{Cell, Grid, Move};
use crate::mdp::{MdpError, TabularMDP, Transitions};
use crate::seeds;

pub const N_MOVES: usize = 5;
pub const N_JOINT_ACTIONS: usize = N_MOVES * N_MOVES;

/// Largest side solved exactly without an explicit override.
pub const EXACT_DP_MAX_SIDE: u8 = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PursuitError {
    #[error("invalid configuration: {0}")]
    Config(&'static str),
    #[error("joint action {0} out of range")]
    BadAction(usize),
    #[error("{side}x{side} exceeds the exact-solver cap of {cap}x{cap}; set the large-grid override to proceed")]
    StateSpaceCap { side: u8, cap: u8 },
    #[error("prey {0} out of range")]
    BadPrey(usize),
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PursuitConfig {
    pub grid: Grid,
    pub n_preys: usize,
    pub capture_requirement: usize,
    pub step_limit: u32,
    pub gamma: f64,
}

impl PursuitConfig {
    /// Two hunters, seven preys, 800 steps.
    pub fn standard(side: u8) -> Self {
        PursuitConfig {
            grid: Grid::square(side),
            n_preys: 7,
            capture_requirement: 2,
            step_limit: 800,
            gamma: 0.95,
        }
    }

    pub fn validate(&self) -> Result<(), PursuitError> {
        if self.capture_requirement == 0 || self.capture_requirement > 2 {
            return Err(PursuitError::Config("capture requirement must be 1 or 2 with two hunters"));
        }
        if self.n_preys == 0 || self.n_preys > 32 || self.n_preys + 2 > self.grid.n_cells() {
            return Err(PursuitError::Config("preys and hunters must fit on distinct cells"));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(PursuitError::Config("discount must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PursuitState {
    pub hunters: [Cell; 2],
    pub preys: Vec<Cell>,
    pub alive: u32,
}

impl PursuitState {
    pub fn is_alive(&self, prey: usize) -> bool {
        self.alive & (1 << prey) != 0
    }

    pub fn occupied(&self, c: Cell) -> bool {
        self.hunters.contains(&c)
            || self
                .preys
                .iter()
                .enumerate()
                .any(|(i, &p)| p == c && self.is_alive(i))
    }
}

/// Pre-sampled starts and capture order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PursuitScenario {
    pub hunters: [Cell; 2],
    pub preys: Vec<Cell>,
    pub sequence: Vec<usize>,
}

impl PursuitScenario {
    pub fn initial_state(&self) -> PursuitState {
        PursuitState {
            hunters: self.hunters,
            preys: self.preys.clone(),
            alive: (1u32 << self.preys.len()) - 1,
        }
    }
}

pub fn sample_scenario(seed: u64, config: &PursuitConfig) -> PursuitScenario {
    let mut rng = seeds::rng(seed);
    let grid = config.grid;
    let picks = index::sample(&mut rng, grid.n_cells(), config.n_preys + 2);
    let cells: Vec<Cell> = picks.iter().map(|i| grid.cell(i)).collect();
    let mut sequence: Vec<usize> = (0..config.n_preys).collect();
    sequence.shuffle(&mut rng);
    PursuitScenario {
        hunters: [cells[0], cells[1]],
        preys: cells[2..].to_vec(),
        sequence,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CaptureEvent {
    pub prey: usize,
}

/// Greedy evasion from `prey` given the hunters and an occupancy test.
///
/// Among in-grid unoccupied targets (Stay is always allowed) picks the one
/// maximizing the minimum, then the sum, of Manhattan distances to the
/// hunters; remaining ties go to the first move in Up, Down, Left, Right,
/// Stay order.
pub fn evade(grid: &Grid, prey: Cell, hunters: &[Cell], occupied: impl Fn(Cell) -> bool) -> Move {
    let mut best = Move::Stay;
    let mut best_score = (0u32, 0u32);
    let mut found = false;
    for m in Move::ALL {
        let target = match m {
            Move::Stay => prey,
            _ => match grid.offset(prey, m) {
                Some(t) if !occupied(t) => t,
                _ => continue,
            },
        };
        let min = hunters.iter().map(|h| h.manhattan(target)).min().unwrap_or(u32::MAX);
        let sum = hunters.iter().map(|h| h.manhattan(target)).sum();
        let score = (min, sum);
        if !found || score > best_score {
            best = m;
            best_score = score;
            found = true;
        }
    }
    best
}

/// Greedy move of `prey` in `state`; other live preys and hunters block.
pub fn greedy_prey_move(state: &PursuitState, prey: usize, grid: &Grid) -> Move {
    let me = state.preys[prey];
    evade(grid, me, &state.hunters, |c| c != me && state.occupied(c))
}

fn hunter_moves(joint: usize) -> [Move; 2] {
    [Move::ALL[joint / N_MOVES], Move::ALL[joint % N_MOVES]]
}

#[inline]
fn move_hunters(grid: &Grid, hunters: [Cell; 2], moves: [Move; 2], blocked: impl Fn(Cell) -> bool) -> [Cell; 2] {
    let target = |i: usize| match moves[i] {
        Move::Stay => None,
        m => grid.offset(hunters[i], m).filter(|&t| !blocked(t)),
    };
    let t = [target(0), target(1)];
    let mut next = hunters;
    for i in 0..2 {
        let j = 1 - i;
        if let Some(c) = t[i] {
            if c != hunters[j] && t[j] != Some(c) {
                next[i] = c;
            }
        }
    }
    next
}

fn surrounded(prey: Cell, hunters: &[Cell; 2], need: usize) -> bool {
    hunters.iter().filter(|h| h.is_adjacent(prey)).count() >= need
}

/// Hunters move, captures resolve, then survivors evade in index order.
pub fn pursuit_step(
    state: &PursuitState,
    joint: usize,
    config: &PursuitConfig,
) -> Result<(PursuitState, Vec<CaptureEvent>), PursuitError> {
    if joint >= N_JOINT_ACTIONS {
        return Err(PursuitError::BadAction(joint));
    }
    let grid = config.grid;
    let hunters = move_hunters(&grid, state.hunters, hunter_moves(joint), |c| state.occupied(c));
    let mut next = PursuitState {
        hunters,
        preys: state.preys.clone(),
        alive: state.alive,
    };
    let mut events = Vec::new();
    for (i, &p) in state.preys.iter().enumerate() {
        if state.is_alive(i) && surrounded(p, &hunters, config.capture_requirement) {
            next.alive &= !(1 << i);
            events.push(CaptureEvent { prey: i });
        }
    }
    for i in 0..next.preys.len() {
        if next.is_alive(i) {
            let m = greedy_prey_move(&next, i, &grid);
            if let Some(t) = grid.offset(next.preys[i], m) {
                next.preys[i] = t;
            }
        }
    }
    Ok((next, events))
}

/// Compact index of ordered triples of distinct cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TripleIndex {
    grid: Grid,
}

impl TripleIndex {
    pub fn new(grid: Grid) -> Self {
        TripleIndex { grid }
    }

    pub fn n_triples(&self) -> usize {
        let c = self.grid.n_cells();
        c * (c - 1) * (c - 2)
    }

    #[inline]
    pub fn encode(&self, a: Cell, b: Cell, p: Cell) -> Option<usize> {
        let c = self.grid.n_cells();
        if !(self.grid.contains(a) && self.grid.contains(b) && self.grid.contains(p)) {
            return None;
        }
        let (a, b, p) = (self.grid.index(a), self.grid.index(b), self.grid.index(p));
        if a == b || a == p || b == p {
            return None;
        }
        let b2 = b - (b > a) as usize;
        let p2 = p - (p > a) as usize - (p > b) as usize;
        Some((a * (c - 1) + b2) * (c - 2) + p2)
    }

    #[inline]
    pub fn decode(&self, s: usize) -> (Cell, Cell, Cell) {
        let c = self.grid.n_cells();
        let p2 = s % (c - 2);
        let rest = s / (c - 2);
        let b2 = rest % (c - 1);
        let a = rest / (c - 1);
        let b = b2 + (b2 >= a) as usize;
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let mut p = p2;
        if p >= lo {
            p += 1;
        }
        if p >= hi {
            p += 1;
        }
        (self.grid.cell(a), self.grid.cell(b), self.grid.cell(p))
    }
}

/// Joint hunter model chasing one prey, with other preys transparent.
///
/// The model does not depend on which prey is the target: every prey
/// evades by the same rule, so one solve serves all of them.
#[derive(Debug, Clone)]
pub struct PursuitModel {
    pub index: TripleIndex,
    pub mdp: TabularMDP,
}

impl PursuitModel {
    pub fn absorbing(&self) -> usize {
        self.index.n_triples()
    }

    pub fn state(&self, leader: Cell, follower: Cell, prey: Cell) -> Option<usize> {
        self.index.encode(leader, follower, prey)
    }
}

/// Builds the per-target joint model. Sides above [`EXACT_DP_MAX_SIDE`]
/// need `allow_large`.
pub fn goal_mdp_pursuit(config: &PursuitConfig, allow_large: bool) -> Result<PursuitModel, PursuitError> {
    config.validate()?;
    let grid = config.grid;
    let side = grid.width.max(grid.height);
    if side > EXACT_DP_MAX_SIDE && !allow_large {
        return Err(PursuitError::StateSpaceCap {
            side,
            cap: EXACT_DP_MAX_SIDE,
        });
    }
    let index = TripleIndex::new(grid);
    let n = index.n_triples();
    let absorbing = n as u32;
    let mut next = Vec::with_capacity((n + 1) * N_JOINT_ACTIONS);
    let mut rewards = vec![0.0; (n + 1) * N_JOINT_ACTIONS];
    for s in 0..n {
        let (h0, h1, p) = index.decode(s);
        for j in 0..N_JOINT_ACTIONS {
            let hunters = move_hunters(&grid, [h0, h1], hunter_moves(j), |c| c == p);
            if surrounded(p, &hunters, config.capture_requirement) {
                rewards[s * N_JOINT_ACTIONS + j] = 1.0;
                next.push(absorbing);
                continue;
            }
            let m = evade(&grid, p, &hunters, |c| hunters.contains(&c));
            let p2 = grid.offset(p, m).unwrap_or(p);
            next.push(index.encode(hunters[0], hunters[1], p2).expect("distinct cells") as u32);
        }
    }
    next.extend(core::iter::repeat_n(absorbing, N_JOINT_ACTIONS));
    let mdp = TabularMDP::new(n + 1, N_JOINT_ACTIONS, Transitions::Deterministic(next), rewards, config.gamma)?;
    Ok(PursuitModel { index, mdp })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(r: u8, col: u8) -> Cell {
        Cell::new(r, col)
    }

    fn lone(hunters: [Cell; 2], prey: Cell) -> PursuitState {
        PursuitState {
            hunters,
            preys: vec![prey],
            alive: 1,
        }
    }

    #[test]
    fn flanked_prey_is_captured() {
        let cfg = PursuitConfig::standard(7);
        let s = lone([c(3, 1), c(3, 5)], c(3, 3));
        // East hunter moves west, west hunter moves east.
        let j = Move::Right.index() * N_MOVES + Move::Left.index();
        let (n, ev) = pursuit_step(&s, j, &cfg).unwrap();
        assert_eq!(ev, vec![CaptureEvent { prey: 0 }]);
        assert_eq!(n.alive, 0);
        assert_eq!(n.preys[0], c(3, 3));
    }

    #[test]
    fn single_adjacent_hunter_does_not_capture() {
        let cfg = PursuitConfig::standard(7);
        let s = lone([c(3, 2), c(6, 6)], c(3, 3));
        let j = Move::Stay.index() * N_MOVES + Move::Stay.index();
        let (n, ev) = pursuit_step(&s, j, &cfg).unwrap();
        assert!(ev.is_empty());
        assert_eq!(n.alive, 1);
        assert_ne!(n.preys[0], c(3, 3));
        assert!(pursuit_step(&s, 25, &cfg).is_err());
    }

    #[test]
    fn greedy_examples() {
        let g = Grid::square(7);
        // Hunter due north: flee south.
        assert_eq!(evade(&g, c(3, 3), &[c(1, 3), c(1, 3)], |_| false), Move::Down);
        // Symmetric east/west: Up and Down tie on both criteria, Up first.
        assert_eq!(evade(&g, c(3, 3), &[c(3, 1), c(3, 5)], |_| false), Move::Up);
        // Cornered between both hunters.
        let s = lone([c(0, 1), c(1, 0)], c(0, 0));
        assert_eq!(greedy_prey_move(&s, 0, &g), Move::Stay);
    }

    #[test]
    fn stationary_hunters_never_gain() {
        let g = Grid::square(5);
        let cfg = PursuitConfig::standard(5);
        let stay = Move::Stay.index() * N_MOVES + Move::Stay.index();
        for a in g.cells() {
            for b in g.cells() {
                for p in g.cells() {
                    if a == b || a == p || b == p {
                        continue;
                    }
                    let s = lone([a, b], p);
                    let before = a.manhattan(p).min(b.manhattan(p));
                    let (n, ev) = pursuit_step(&s, stay, &cfg).unwrap();
                    if ev.is_empty() {
                        let q = n.preys[0];
                        assert!(a.manhattan(q).min(b.manhattan(q)) >= before);
                    }
                }
            }
        }
    }

    #[test]
    fn triple_index_is_a_bijection() {
        let g = Grid::square(5);
        let idx = TripleIndex::new(g);
        assert_eq!(idx.n_triples(), 25 * 24 * 23);
        for s in 0..idx.n_triples() {
            let (a, b, p) = idx.decode(s);
            assert_eq!(idx.encode(a, b, p), Some(s));
        }
        assert_eq!(idx.encode(c(0, 0), c(0, 0), c(1, 1)), None);
    }

    #[test]
    fn model_counts_and_cap() {
        let m = goal_mdp_pursuit(&PursuitConfig::standard(5), false).unwrap();
        assert_eq!(m.mdp.n_states(), 13_801);
        let ab = m.absorbing();
        for a in 0..N_JOINT_ACTIONS {
            assert_eq!(m.mdp.successor(ab, a), Some(ab));
            assert_eq!(m.mdp.reward(ab, a), 0.0);
        }
        assert!(matches!(
            goal_mdp_pursuit(&PursuitConfig::standard(15), false),
            Err(PursuitError::StateSpaceCap { side: 15, cap: 10 })
        ));
    }

    #[test]
    fn captured_preys_do_not_block() {
        let cfg = PursuitConfig::standard(7);
        let s = PursuitState {
            hunters: [c(3, 2), c(5, 5)],
            preys: vec![c(3, 3), c(0, 0)],
            alive: 0b10,
        };
        // Hunter 0 may step onto the dead prey's cell.
        let j = Move::Right.index() * N_MOVES + Move::Stay.index();
        let (n, _) = pursuit_step(&s, j, &cfg).unwrap();
        assert_eq!(n.hunters[0], c(3, 3));
        assert_eq!(n.preys[0], c(3, 3));
    }
}
