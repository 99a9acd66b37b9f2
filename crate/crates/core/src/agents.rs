//! Leader and follower agents.
//!
//! The leader knows the objective sequence and acts either on the joint
//! optimal policy or on a legible best response. The follower watches the
//! leader's actions, keeps a posterior over the remaining objectives and
//! plays its part of the joint optimal policy for the current argmax.
//!
//! Joint actions are leader-major: `joint = a_L * n_follower + a_F`.

use alloc::vec;
use alloc::vec::Vec;

use crate::mdp::{argmax, row_max};

/// Lower bound on every posterior entry.
pub const POSTERIOR_FLOOR: f64 = 1e-12;

/// Environment-specific access to solved per-goal models.
pub trait TeamPlanner {
    type State;
    type Error;

    fn n_leader_actions(&self) -> usize;
    fn n_follower_actions(&self) -> usize;

    /// Goals still open in `state`, ascending.
    fn remaining(&self, state: &Self::State) -> Vec<usize>;

    /// Joint optimal `q*_goal(state, ·)`, leader-major.
    fn joint_row(&mut self, state: &Self::State, goal: usize, out: &mut Vec<f64>) -> Result<(), Self::Error>;

    /// Called when a legible leader starts working on `goal`.
    fn begin_objective(&mut self, _state: &Self::State, _goal: usize) -> Result<(), Self::Error> {
        Ok(())
    }

    /// Legible leader action for `goal`.
    fn legible_action(&mut self, state: &Self::State, goal: usize) -> Result<usize, Self::Error>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    goals: Vec<usize>,
    probs: Vec<f64>,
}

impl Posterior {
    /// Uniform over `goals`, which must be non-empty.
    pub fn uniform(goals: Vec<usize>) -> Self {
        assert!(!goals.is_empty(), "posterior needs at least one goal");
        let p = 1.0 / goals.len() as f64;
        let probs = vec![p; goals.len()];
        Posterior { goals, probs }
    }

    /// Normalized copy of `weights`; `None` if they are not positive and finite.
    pub fn with_prior(goals: Vec<usize>, weights: &[f64]) -> Option<Self> {
        if goals.is_empty() || goals.len() != weights.len() || weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return None;
        }
        let mut post = Posterior {
            goals,
            probs: weights.to_vec(),
        };
        post.normalize();
        Some(post)
    }

    pub fn goals(&self) -> &[usize] {
        &self.goals
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, goal: usize) -> Option<f64> {
        self.goals.iter().position(|&g| g == goal).map(|i| self.probs[i])
    }

    /// Declared goal: the argmax, lowest position on ties.
    pub fn declared(&self) -> usize {
        self.goals[argmax(&self.probs)]
    }

    /// One Bayes step with `likelihoods[i] = P(observation | goals[i])`.
    pub fn update(&mut self, likelihoods: &[f64]) {
        assert_eq!(likelihoods.len(), self.goals.len(), "one likelihood per goal");
        let total: f64 = self.probs.iter().zip(likelihoods).map(|(p, l)| p * l).sum();
        if !(total > 0.0 && total.is_finite()) {
            return;
        }
        for (p, l) in self.probs.iter_mut().zip(likelihoods) {
            *p *= l / total;
        }
        self.normalize();
    }

    /// Drops `goal` and renormalizes. Keeps the last goal.
    pub fn remove(&mut self, goal: usize) {
        if self.goals.len() > 1 {
            if let Some(i) = self.goals.iter().position(|&g| g == goal) {
                self.goals.remove(i);
                self.probs.remove(i);
                self.normalize();
            }
        }
    }

    /// Sum to one with every entry at least the floor.
    fn normalize(&mut self) {
        let n = self.probs.len();
        let total: f64 = self.probs.iter().sum();
        for p in self.probs.iter_mut() {
            *p /= total;
        }
        // Pin small entries to the floor and shrink the rest to make room.
        // Shrinking can push another entry under the floor, hence the loop.
        let mut pinned = vec![false; n];
        loop {
            let mut changed = false;
            for (p, pin) in self.probs.iter().zip(pinned.iter_mut()) {
                if !*pin && *p < POSTERIOR_FLOOR {
                    *pin = true;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
            let k = pinned.iter().filter(|&&b| b).count();
            let free: f64 = self.probs.iter().zip(&pinned).filter(|(_, &b)| !b).map(|(p, _)| p).sum();
            let scale = (1.0 - k as f64 * POSTERIOR_FLOOR) / free;
            for (p, &pin) in self.probs.iter_mut().zip(&pinned) {
                *p = if pin { POSTERIOR_FLOOR } else { *p * scale };
            }
        }
    }
}

/// `prior · Π_t likelihoods[t]`, normalized in one shot (log domain).
pub fn batch_posterior(prior: &[f64], likelihoods: &[Vec<f64>]) -> Vec<f64> {
    let mut logs: Vec<f64> = prior.iter().map(|&p| libm::log(p)).collect();
    for row in likelihoods {
        for (l, &x) in logs.iter_mut().zip(row) {
            *l += libm::log(x);
        }
    }
    let m = row_max(&logs);
    let mut out: Vec<f64> = logs.iter().map(|&l| libm::exp(l - m)).collect();
    let total: f64 = out.iter().sum();
    for p in out.iter_mut() {
        *p /= total;
    }
    out
}

/// `(state, leader action)` pairs seen since the last completion.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ObservationTrace<S> {
    pairs: Vec<(S, usize)>,
}

impl<S> ObservationTrace<S> {
    pub fn new() -> Self {
        ObservationTrace { pairs: Vec::new() }
    }

    pub fn push(&mut self, state: S, action: usize) {
        self.pairs.push((state, action));
    }

    pub fn clear(&mut self) {
        self.pairs.clear();
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(S, usize)] {
        &self.pairs
    }
}

/// `P(a_L | x, g)` for every leader action: a softmax at `beta` over
/// `max_{a_F} q*_g(x, (a_L, a_F))`.
pub fn leader_likelihoods(joint_row: &[f64], n_follower: usize, beta: f64, out: &mut Vec<f64>) {
    out.clear();
    out.extend(joint_row.chunks_exact(n_follower).map(row_max));
    let m = row_max(out);
    let mut total = 0.0;
    for v in out.iter_mut() {
        *v = libm::exp(beta * (*v - m));
        total += *v;
    }
    for v in out.iter_mut() {
        *v /= total;
    }
}

/// Earliest 1-indexed step from which every declaration matches `truth`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StableInference {
    pub steps: usize,
    /// Set when the final declaration is wrong; `steps` is then the log length.
    pub never_inferred: bool,
}

pub fn steps_to_stable_inference(log: &[usize], truth: usize) -> StableInference {
    let n = log.len();
    match log.iter().rposition(|&g| g != truth) {
        None if n == 0 => StableInference {
            steps: 0,
            never_inferred: true,
        },
        None => StableInference {
            steps: 1,
            never_inferred: false,
        },
        Some(i) if i + 1 == n => StableInference {
            steps: n,
            never_inferred: true,
        },
        Some(i) => StableInference {
            steps: i + 2,
            never_inferred: false,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LeaderMode {
    Optimal,
    Legible,
}

#[derive(Debug, Clone)]
pub struct LeaderAgent {
    mode: LeaderMode,
    sequence: Vec<usize>,
    done: Vec<usize>,
    current: usize,
    started: bool,
    row: Vec<f64>,
}

impl LeaderAgent {
    pub fn new(mode: LeaderMode, sequence: Vec<usize>) -> Self {
        LeaderAgent {
            mode,
            sequence,
            done: Vec::new(),
            current: 0,
            started: false,
            row: Vec::new(),
        }
    }

    pub fn mode(&self) -> LeaderMode {
        self.mode
    }

    pub fn sequence(&self) -> &[usize] {
        &self.sequence
    }

    /// Position in the sequence of the current objective.
    pub fn current_index(&self) -> usize {
        self.current
    }

    pub fn current_goal(&self) -> Option<usize> {
        self.sequence.get(self.current).copied()
    }

    pub fn finished(&self) -> bool {
        self.current >= self.sequence.len()
    }

    pub fn act<P: TeamPlanner>(&mut self, planner: &mut P, state: &P::State) -> Result<usize, P::Error> {
        let goal = self.current_goal().expect("leader acts only while objectives remain");
        match self.mode {
            LeaderMode::Optimal => {
                planner.joint_row(state, goal, &mut self.row)?;
                Ok(argmax(&self.row) / planner.n_follower_actions())
            }
            LeaderMode::Legible => {
                if !self.started {
                    planner.begin_objective(state, goal)?;
                    self.started = true;
                }
                planner.legible_action(state, goal)
            }
        }
    }

    /// Records finished goals. Returns `true` when the current objective is
    /// among them, in which case the leader moves to the next unfinished one.
    pub fn record_completions(&mut self, completed: &[usize]) -> bool {
        self.done.extend_from_slice(completed);
        let hit = self.current_goal().is_some_and(|g| completed.contains(&g));
        if hit {
            self.started = false;
            while self.current_goal().is_some_and(|g| self.done.contains(&g)) {
                self.current += 1;
            }
        }
        hit
    }
}

#[derive(Debug, Clone)]
pub struct FollowerAgent {
    posterior: Posterior,
    beta_infer: f64,
    row: Vec<f64>,
    lik: Vec<f64>,
    scratch: Vec<f64>,
}

impl FollowerAgent {
    pub fn new(goals: Vec<usize>, beta_infer: f64) -> Self {
        FollowerAgent {
            posterior: Posterior::uniform(goals),
            beta_infer,
            row: Vec::new(),
            lik: Vec::new(),
            scratch: Vec::new(),
        }
    }

    pub fn posterior(&self) -> &Posterior {
        &self.posterior
    }

    pub fn beta_infer(&self) -> f64 {
        self.beta_infer
    }

    pub fn declared(&self) -> usize {
        self.posterior.declared()
    }

    /// Uniform belief over `goals`.
    pub fn reset(&mut self, goals: Vec<usize>) {
        self.posterior = Posterior::uniform(goals);
        self.lik.clear();
    }

    /// Forgets a goal that was finished out of turn.
    pub fn drop_goal(&mut self, goal: usize) {
        self.posterior.remove(goal);
        self.lik.clear();
    }

    /// Likelihoods from the last update, aligned with `posterior().goals()`.
    pub fn last_likelihoods(&self) -> &[f64] {
        &self.lik
    }

    /// Follower component of the joint optimal action for the declared goal.
    pub fn act<P: TeamPlanner>(&mut self, planner: &mut P, state: &P::State) -> Result<usize, P::Error> {
        planner.joint_row(state, self.declared(), &mut self.row)?;
        Ok(argmax(&self.row) % planner.n_follower_actions())
    }

    /// Bayes step on the observed leader action.
    pub fn update<P: TeamPlanner>(
        &mut self,
        planner: &mut P,
        state: &P::State,
        leader_action: usize,
    ) -> Result<&Posterior, P::Error> {
        let nf = planner.n_follower_actions();
        self.lik.clear();
        for &g in self.posterior.goals() {
            planner.joint_row(state, g, &mut self.row)?;
            leader_likelihoods(&self.row, nf, self.beta_infer, &mut self.scratch);
            self.lik.push(self.scratch[leader_action]);
        }
        self.posterior.update(&self.lik);
        Ok(&self.posterior)
    }
}
