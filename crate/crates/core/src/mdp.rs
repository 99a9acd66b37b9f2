//! Finite discounted MDPs and their exact solvers.
//!
//! A [`TabularMDP`] owns its reward table and shares its dynamics through an
//! [`Arc`], so goal-conditioned variants of one environment (same states,
//! actions and transitions, different rewards) cost one reward table each.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

/// Tolerance on transition row sums.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// Default sup-norm stopping tolerance of the solvers.
pub const DEFAULT_TOL: f64 = 1e-8;

/// Default iteration cap of the solvers.
pub const DEFAULT_MAX_ITERS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MdpError {
    #[error("model must have at least one state and one action")]
    Empty,
    #[error("discount {0} outside [0, 1)")]
    InvalidDiscount(f64),
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error("expected {expected} entries in {what}, found {found}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("transition row ({state}, {action}) sums to {sum}")]
    NonStochasticRow { state: usize, action: usize, sum: f64 },
    #[error("transition row ({state}, {action}) has a negative or non-finite entry")]
    InvalidProbability { state: usize, action: usize },
    #[error("transition row ({state}, {action}) points at state {target} out of range")]
    TargetOutOfRange {
        state: usize,
        action: usize,
        target: usize,
    },
    #[error("reward at ({state}, {action}) is not finite")]
    NonFiniteReward { state: usize, action: usize },
    #[error("action {action} at state {state} is not a valid action index")]
    InvalidAction { state: usize, action: usize },
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("solver needs a deterministic transition kernel")]
    NotDeterministic,
}

/// Transition kernel storage. Rows are indexed by the pair `x * n_actions + a`.
#[derive(Debug, Clone, PartialEq)]
pub enum Transitions {
    /// Full `P(y | x, a)` table laid out as `[x][a][y]`.
    Dense(Vec<f64>),
    /// Compressed rows: the successors of pair `k` are
    /// `targets[offsets[k]..offsets[k + 1]]` with matching `probs`.
    Sparse {
        offsets: Vec<usize>,
        targets: Vec<u32>,
        probs: Vec<f64>,
    },
    /// Exactly one successor per pair.
    Deterministic(Vec<u32>),
}

impl Transitions {
    /// Visits every `(successor, probability)` of a pair.
    #[inline]
    pub fn for_each_successor(&self, n_states: usize, pair: usize, mut f: impl FnMut(usize, f64)) {
        match self {
            Transitions::Dense(p) => {
                let row = &p[pair * n_states..(pair + 1) * n_states];
                for (y, &pr) in row.iter().enumerate() {
                    if pr != 0.0 {
                        f(y, pr);
                    }
                }
            }
            Transitions::Sparse {
                offsets,
                targets,
                probs,
            } => {
                for k in offsets[pair]..offsets[pair + 1] {
                    f(targets[k] as usize, probs[k]);
                }
            }
            Transitions::Deterministic(next) => f(next[pair] as usize, 1.0),
        }
    }

    /// `Σ_y P(y | pair) · values[y]`.
    #[inline]
    pub fn expectation(&self, n_states: usize, pair: usize, values: &[f64]) -> f64 {
        match self {
            Transitions::Dense(p) => p[pair * n_states..(pair + 1) * n_states]
                .iter()
                .zip(values)
                .map(|(pr, v)| pr * v)
                .sum(),
            Transitions::Sparse {
                offsets,
                targets,
                probs,
            } => (offsets[pair]..offsets[pair + 1])
                .map(|k| probs[k] * values[targets[k] as usize])
                .sum(),
            Transitions::Deterministic(next) => values[next[pair] as usize],
        }
    }

    /// Number of stored successor entries of a pair (nonzeros for dense rows).
    pub fn row_len(&self, n_states: usize, pair: usize) -> usize {
        let mut n = 0;
        self.for_each_successor(n_states, pair, |_, _| n += 1);
        n
    }

    fn validate(&self, n_states: usize, n_actions: usize) -> Result<(), MdpError> {
        let pairs = n_states * n_actions;
        match self {
            Transitions::Dense(p) => check_len("dense transitions", pairs * n_states, p.len())?,
            Transitions::Sparse {
                offsets,
                targets,
                probs,
            } => {
                check_len("sparse offsets", pairs + 1, offsets.len())?;
                check_len("sparse probabilities", targets.len(), probs.len())?;
                if offsets[0] != 0
                    || offsets[pairs] != targets.len()
                    || offsets.windows(2).any(|w| w[0] > w[1])
                {
                    return Err(MdpError::ShapeMismatch {
                        what: "sparse offsets",
                        expected: targets.len(),
                        found: offsets[pairs],
                    });
                }
            }
            Transitions::Deterministic(next) => check_len("successors", pairs, next.len())?,
        }
        for pair in 0..pairs {
            let (state, action) = (pair / n_actions, pair % n_actions);
            let mut sum = 0.0;
            let mut bad = None;
            self.for_each_successor(n_states, pair, |y, pr| {
                if !(pr.is_finite() && pr >= 0.0) {
                    bad.get_or_insert(MdpError::InvalidProbability { state, action });
                } else if y >= n_states {
                    bad.get_or_insert(MdpError::TargetOutOfRange {
                        state,
                        action,
                        target: y,
                    });
                }
                sum += pr;
            });
            if let Some(e) = bad {
                return Err(e);
            }
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(MdpError::NonStochasticRow { state, action, sum });
            }
        }
        Ok(())
    }
}

fn check_len(what: &'static str, expected: usize, found: usize) -> Result<(), MdpError> {
    if expected == found {
        Ok(())
    } else {
        Err(MdpError::ShapeMismatch {
            what,
            expected,
            found,
        })
    }
}

/// A finite MDP `⟨X, A, P, r, γ⟩`.
#[derive(Debug, Clone)]
pub struct TabularMDP {
    n_states: usize,
    n_actions: usize,
    transitions: Arc<Transitions>,
    rewards: Vec<f64>,
    gamma: f64,
}

impl TabularMDP {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transitions: Transitions,
        rewards: Vec<f64>,
        gamma: f64,
    ) -> Result<Self, MdpError> {
        if n_states == 0 || n_actions == 0 {
            return Err(MdpError::Empty);
        }
        transitions.validate(n_states, n_actions)?;
        Self::from_shared(n_states, n_actions, Arc::new(transitions), rewards, gamma)
    }

    /// Builds a model on dynamics that were already validated for this shape.
    fn from_shared(
        n_states: usize,
        n_actions: usize,
        transitions: Arc<Transitions>,
        rewards: Vec<f64>,
        gamma: f64,
    ) -> Result<Self, MdpError> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(MdpError::InvalidDiscount(gamma));
        }
        check_len("rewards", n_states * n_actions, rewards.len())?;
        if let Some(k) = rewards.iter().position(|r| !r.is_finite()) {
            return Err(MdpError::NonFiniteReward {
                state: k / n_actions,
                action: k % n_actions,
            });
        }
        Ok(TabularMDP {
            n_states,
            n_actions,
            transitions,
            rewards,
            gamma,
        })
    }

    /// Same states, actions, dynamics and discount with a new reward table.
    pub fn with_rewards(&self, rewards: Vec<f64>) -> Result<Self, MdpError> {
        Self::from_shared(
            self.n_states,
            self.n_actions,
            Arc::clone(&self.transitions),
            rewards,
            self.gamma,
        )
    }

    pub fn with_discount(&self, gamma: f64) -> Result<Self, MdpError> {
        Self::from_shared(
            self.n_states,
            self.n_actions,
            Arc::clone(&self.transitions),
            self.rewards.clone(),
            gamma,
        )
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    #[inline]
    pub fn reward(&self, state: usize, action: usize) -> f64 {
        self.rewards[state * self.n_actions + action]
    }

    pub fn transitions(&self) -> &Transitions {
        &self.transitions
    }

    pub fn shared_transitions(&self) -> Arc<Transitions> {
        Arc::clone(&self.transitions)
    }

    /// True when both models have the same shape, discount and kernel.
    pub fn same_dynamics(&self, other: &TabularMDP) -> bool {
        self.n_states == other.n_states
            && self.n_actions == other.n_actions
            && self.gamma == other.gamma
            && (Arc::ptr_eq(&self.transitions, &other.transitions)
                || self.transitions == other.transitions)
    }

    /// Deterministic successor of `(state, action)`, if the kernel is
    /// deterministic.
    pub fn successor(&self, state: usize, action: usize) -> Option<usize> {
        match &*self.transitions {
            Transitions::Deterministic(next) => Some(next[state * self.n_actions + action] as usize),
            _ => None,
        }
    }

    pub fn for_each_successor(&self, state: usize, action: usize, f: impl FnMut(usize, f64)) {
        self.transitions
            .for_each_successor(self.n_states, state * self.n_actions + action, f)
    }

    /// `r(x, a) + γ Σ_y P(y | x, a) values[y]`.
    #[inline]
    pub fn backup(&self, state: usize, action: usize, values: &[f64]) -> f64 {
        let pair = state * self.n_actions + action;
        self.rewards[pair] + self.gamma * self.transitions.expectation(self.n_states, pair, values)
    }
}

/// Action values per `(state, action)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QFunction {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
}

impl QFunction {
    pub fn new(n_states: usize, n_actions: usize, values: Vec<f64>) -> Result<Self, MdpError> {
        if n_states == 0 || n_actions == 0 {
            return Err(MdpError::Empty);
        }
        check_len("q values", n_states * n_actions, values.len())?;
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(MdpError::NonFiniteReward {
                state: k / n_actions,
                action: k % n_actions,
            });
        }
        Ok(QFunction {
            n_states,
            n_actions,
            values,
        })
    }

    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        QFunction {
            n_states,
            n_actions,
            values: vec![0.0; n_states * n_actions],
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, state: usize, action: usize) -> f64 {
        self.values[state * self.n_actions + action]
    }

    #[inline]
    pub fn row(&self, state: usize) -> &[f64] {
        &self.values[state * self.n_actions..(state + 1) * self.n_actions]
    }

    /// `v(x) = max_a q(x, a)`.
    pub fn state_values(&self) -> Vec<f64> {
        (0..self.n_states).map(|x| row_max(self.row(x))).collect()
    }

    /// Applies `f` to every entry.
    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> QFunction {
        QFunction {
            n_states: self.n_states,
            n_actions: self.n_actions,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// An action index per state.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DeterministicPolicy {
    actions: Vec<usize>,
}

impl DeterministicPolicy {
    pub fn new(actions: Vec<usize>, n_actions: usize) -> Result<Self, MdpError> {
        if let Some(state) = actions.iter().position(|&a| a >= n_actions) {
            return Err(MdpError::InvalidAction {
                state,
                action: actions[state],
            });
        }
        Ok(DeterministicPolicy { actions })
    }

    #[inline]
    pub fn action(&self, state: usize) -> usize {
        self.actions[state]
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    pub fn n_states(&self) -> usize {
        self.actions.len()
    }
}

/// A distribution over actions per state.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticPolicy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl StochasticPolicy {
    /// Rows must sum to one within 1e-12.
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self, MdpError> {
        if n_states == 0 || n_actions == 0 {
            return Err(MdpError::Empty);
        }
        check_len("policy probabilities", n_states * n_actions, probs.len())?;
        for state in 0..n_states {
            let row = &probs[state * n_actions..(state + 1) * n_actions];
            if let Some(action) = row.iter().position(|p| !(p.is_finite() && *p >= 0.0)) {
                return Err(MdpError::InvalidProbability { state, action });
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(MdpError::NonStochasticRow {
                    state,
                    action: 0,
                    sum,
                });
            }
        }
        Ok(StochasticPolicy {
            n_states,
            n_actions,
            probs,
        })
    }

    /// Point masses on the actions of a deterministic policy.
    pub fn from_deterministic(policy: &DeterministicPolicy, n_actions: usize) -> Self {
        let n_states = policy.n_states();
        let mut probs = vec![0.0; n_states * n_actions];
        for (x, &a) in policy.actions().iter().enumerate() {
            probs[x * n_actions + a] = 1.0;
        }
        StochasticPolicy {
            n_states,
            n_actions,
            probs,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn row(&self, state: usize) -> &[f64] {
        &self.probs[state * self.n_actions..(state + 1) * self.n_actions]
    }

    #[inline]
    pub fn prob(&self, state: usize, action: usize) -> f64 {
        self.probs[state * self.n_actions + action]
    }
}

/// Stopping rule shared by the iterative solvers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: DEFAULT_TOL,
            max_iters: DEFAULT_MAX_ITERS,
        }
    }
}

impl SolverOptions {
    pub fn with_tol(tol: f64) -> Self {
        SolverOptions {
            tol,
            ..Self::default()
        }
    }

    fn check(&self) -> Result<(), MdpError> {
        if self.tol > 0.0 && self.tol.is_finite() {
            Ok(())
        } else {
            Err(MdpError::InvalidTolerance(self.tol))
        }
    }
}

/// Output of [`solve`].
#[derive(Debug, Clone)]
pub struct Solution {
    pub q: QFunction,
    pub iterations: usize,
    /// Sup-norm change of the final sweep.
    pub residual: f64,
}

/// Largest entry; the first one on ties.
#[inline]
pub fn row_max(row: &[f64]) -> f64 {
    row.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Index of the largest entry, lowest index on ties.
#[inline]
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Optimal action values by value iteration with default cap.
pub fn value_iteration(mdp: &TabularMDP, tol: f64) -> Result<QFunction, MdpError> {
    solve(mdp, &SolverOptions::with_tol(tol), None).map(|s| s.q)
}

/// Value iteration from optional initial state values.
///
/// Sweeps `q ← r + γ P max q` until the sup-norm change of a sweep is at most
/// `opts.tol`; the returned table then has Bellman residual at most
/// `γ · tol`. Starting from an upper bound of `v*` (for instance
/// `r_max / (1 - γ)` away from terminal states) lets sparse-goal models stop
/// after a number of sweeps close to their longest optimal path.
pub fn solve(
    mdp: &TabularMDP,
    opts: &SolverOptions,
    initial_values: Option<&[f64]>,
) -> Result<Solution, MdpError> {
    opts.check()?;
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let mut v = match initial_values {
        Some(init) => {
            check_len("initial values", ns, init.len())?;
            init.to_vec()
        }
        None => vec![0.0; ns],
    };
    let mut q: Vec<f64> = (0..ns * na).map(|k| v[k / na]).collect();
    let mut residual = f64::INFINITY;
    for it in 1..=opts.max_iters {
        residual = 0.0;
        // Jacobi sweep: state values refresh only after the full pass.
        for x in 0..ns {
            for a in 0..na {
                let k = x * na + a;
                let new = mdp.backup(x, a, &v);
                residual = residual.max((new - q[k]).abs());
                q[k] = new;
            }
        }
        for x in 0..ns {
            v[x] = row_max(&q[x * na..(x + 1) * na]);
        }
        if residual <= opts.tol {
            return Ok(Solution {
                q: QFunction {
                    n_states: ns,
                    n_actions: na,
                    values: q,
                },
                iterations: it,
                residual,
            });
        }
    }
    Err(MdpError::NotConverged {
        iterations: opts.max_iters,
        residual,
    })
}

/// One Bellman optimality sweep `T q`.
pub fn bellman_backup(mdp: &TabularMDP, q: &QFunction) -> QFunction {
    q_from_values(mdp, &q.state_values())
}

/// `q(x, a) = r(x, a) + γ Σ_y P(y | x, a) v(y)`.
pub fn q_from_values(mdp: &TabularMDP, values: &[f64]) -> QFunction {
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let mut out = Vec::with_capacity(ns * na);
    for x in 0..ns {
        for a in 0..na {
            out.push(mdp.backup(x, a, values));
        }
    }
    QFunction {
        n_states: ns,
        n_actions: na,
        values: out,
    }
}

/// Greedy policy with ties broken toward the lowest action index.
pub fn greedy_policy(q: &QFunction) -> DeterministicPolicy {
    DeterministicPolicy {
        actions: (0..q.n_states).map(|x| argmax(q.row(x))).collect(),
    }
}

/// Boltzmann distribution `exp(β r_i) / Σ_j exp(β r_j)` with max shift.
pub fn softmax(row: &[f64], beta: f64) -> Vec<f64> {
    let mut out = vec![0.0; row.len()];
    softmax_into(row, beta, &mut out);
    out
}

pub fn softmax_into(row: &[f64], beta: f64, out: &mut [f64]) {
    let m = row_max(row);
    let mut sum = 0.0;
    for (o, &r) in out.iter_mut().zip(row) {
        *o = libm::exp(beta * (r - m));
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Boltzmann policy over `q` with inverse temperature `beta`.
pub fn softmax_policy(q: &QFunction, beta: f64) -> StochasticPolicy {
    let (ns, na) = (q.n_states, q.n_actions);
    let mut probs = vec![0.0; ns * na];
    for x in 0..ns {
        softmax_into(q.row(x), beta, &mut probs[x * na..(x + 1) * na]);
    }
    StochasticPolicy {
        n_states: ns,
        n_actions: na,
        probs,
    }
}

/// `v^π` for a deterministic policy, to fixed-point residual 1e-10.
pub fn evaluate_policy(mdp: &TabularMDP, policy: &DeterministicPolicy) -> Result<Vec<f64>, MdpError> {
    evaluate_policy_with(
        mdp,
        policy,
        &SolverOptions {
            tol: 1e-10,
            max_iters: DEFAULT_MAX_ITERS,
        },
    )
}

pub fn evaluate_policy_with(
    mdp: &TabularMDP,
    policy: &DeterministicPolicy,
    opts: &SolverOptions,
) -> Result<Vec<f64>, MdpError> {
    opts.check()?;
    check_len("policy", mdp.n_states, policy.n_states())?;
    if let Some(state) = policy.actions.iter().position(|&a| a >= mdp.n_actions) {
        return Err(MdpError::InvalidAction {
            state,
            action: policy.actions[state],
        });
    }
    let ns = mdp.n_states;
    let mut v = vec![0.0; ns];
    let mut next = vec![0.0; ns];
    let mut residual = f64::INFINITY;
    for _ in 0..opts.max_iters {
        residual = 0.0;
        for x in 0..ns {
            next[x] = mdp.backup(x, policy.action(x), &v);
            residual = residual.max((next[x] - v[x]).abs());
        }
        core::mem::swap(&mut v, &mut next);
        if residual <= opts.tol {
            return Ok(v);
        }
    }
    Err(MdpError::NotConverged {
        iterations: opts.max_iters,
        residual,
    })
}

/// Exact `v^π` on a deterministic kernel.
///
/// Every trajectory under `π` ends in a cycle; the first cycle state gets
/// its closed-form discounted sum and the rest follow by back-substitution.
pub fn evaluate_deterministic(mdp: &TabularMDP, policy: &DeterministicPolicy) -> Result<Vec<f64>, MdpError> {
    let Transitions::Deterministic(next) = mdp.transitions.as_ref() else {
        return Err(MdpError::NotDeterministic);
    };
    check_len("policy", mdp.n_states, policy.n_states())?;
    let (ns, na, gamma) = (mdp.n_states, mdp.n_actions, mdp.gamma);
    if let Some(state) = policy.actions.iter().position(|&a| a >= na) {
        return Err(MdpError::InvalidAction {
            state,
            action: policy.actions[state],
        });
    }
    let step = |x: usize| -> (f64, usize) {
        let k = x * na + policy.actions[x];
        (mdp.rewards[k], next[k] as usize)
    };
    // 0 unvisited, 1 on the current path, 2 solved.
    let mut mark = vec![0u8; ns];
    let mut v = vec![0.0; ns];
    let mut path = Vec::new();
    for s in 0..ns {
        if mark[s] != 0 {
            continue;
        }
        path.clear();
        let mut x = s;
        while mark[x] == 0 {
            mark[x] = 1;
            path.push(x);
            x = step(x).1;
        }
        let mut end = path.len();
        if mark[x] == 1 {
            let start = path.iter().rposition(|&y| y == x).expect("on path");
            let (mut acc, mut g) = (0.0, 1.0);
            for &y in &path[start..] {
                acc += g * step(y).0;
                g *= gamma;
            }
            v[x] = acc / (1.0 - g);
            mark[x] = 2;
            for &y in path[start + 1..].iter().rev() {
                let (r, n) = step(y);
                v[y] = r + gamma * v[n];
                mark[y] = 2;
            }
            end = start;
        }
        for &y in path[..end].iter().rev() {
            let (r, n) = step(y);
            v[y] = r + gamma * v[n];
            mark[y] = 2;
        }
    }
    Ok(v)
}

/// Output of [`policy_iteration`].
#[derive(Debug, Clone)]
pub struct PolicySolution {
    pub values: Vec<f64>,
    pub policy: DeterministicPolicy,
    pub iterations: usize,
}

/// Howard policy iteration on a deterministic kernel.
///
/// Evaluation is exact, so the loop ends after finitely many improvements.
/// An action replaces the incumbent only when it is better by more than a
/// relative 1e-12, which keeps the result independent of rounding noise.
pub fn policy_iteration(
    mdp: &TabularMDP,
    init: Option<&DeterministicPolicy>,
    max_iters: usize,
) -> Result<PolicySolution, MdpError> {
    let Transitions::Deterministic(next) = mdp.transitions.as_ref() else {
        return Err(MdpError::NotDeterministic);
    };
    let (ns, na, gamma) = (mdp.n_states, mdp.n_actions, mdp.gamma);
    let mut policy = match init {
        Some(p) => p.clone(),
        None => DeterministicPolicy {
            actions: vec![0; ns],
        },
    };
    for it in 1..=max_iters {
        let v = evaluate_deterministic(mdp, &policy)?;
        let mut changed = false;
        for x in 0..ns {
            let q = |a: usize| mdp.rewards[x * na + a] + gamma * v[next[x * na + a] as usize];
            let mut best = policy.actions[x];
            let mut best_q = q(best);
            for a in 0..na {
                let qa = q(a);
                if qa > best_q + 1e-12 * (1.0 + best_q.abs()) {
                    best = a;
                    best_q = qa;
                }
            }
            if best != policy.actions[x] {
                policy.actions[x] = best;
                changed = true;
            }
        }
        if !changed {
            return Ok(PolicySolution {
                values: v,
                policy,
                iterations: it,
            });
        }
    }
    Err(MdpError::NotConverged {
        iterations: max_iters,
        residual: f64::NAN,
    })
}

/// `sup_{x,a} |q(x,a) − (r(x,a) + γ Σ_y P(y|x,a) max_a' q(y,a'))|`.
pub fn bellman_residual(mdp: &TabularMDP, q: &QFunction) -> f64 {
    let v = q.state_values();
    let mut worst: f64 = 0.0;
    for x in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            worst = worst.max((q.get(x, a) - mdp.backup(x, a, &v)).abs());
        }
    }
    worst
}

/// States reachable from `starts`, in breadth-first discovery order.
pub fn reachable_states(mdp: &TabularMDP, starts: &[usize]) -> Vec<usize> {
    let mut seen = vec![false; mdp.n_states];
    let mut order = Vec::new();
    for &s in starts {
        if !seen[s] {
            seen[s] = true;
            order.push(s);
        }
    }
    let mut head = 0;
    while head < order.len() {
        let x = order[head];
        head += 1;
        for a in 0..mdp.n_actions {
            mdp.for_each_successor(x, a, |y, _| {
                if !seen[y] {
                    seen[y] = true;
                    order.push(y);
                }
            });
        }
    }
    order
}

/// Restriction of `mdp` to a successor-closed set of states.
///
/// Returns the sub-model and, for each of its states, the original index.
/// `states` must contain every successor of its members (as produced by
/// [`reachable_states`]).
pub fn restrict(mdp: &TabularMDP, states: &[usize]) -> Result<(TabularMDP, Vec<usize>), MdpError> {
    const NONE: u32 = u32::MAX;
    let mut index = vec![NONE; mdp.n_states];
    for (i, &s) in states.iter().enumerate() {
        index[s] = i as u32;
    }
    let na = mdp.n_actions;
    let mut rewards = Vec::with_capacity(states.len() * na);
    let mut offsets = Vec::with_capacity(states.len() * na + 1);
    let mut targets = Vec::new();
    let mut probs = Vec::new();
    let mut deterministic = true;
    offsets.push(0);
    for &s in states {
        for a in 0..na {
            rewards.push(mdp.reward(s, a));
            let mut missing = None;
            let before = targets.len();
            mdp.for_each_successor(s, a, |y, p| {
                if index[y] == NONE {
                    missing = Some(y);
                }
                targets.push(index[y]);
                probs.push(p);
            });
            if let Some(target) = missing {
                return Err(MdpError::TargetOutOfRange {
                    state: s,
                    action: a,
                    target,
                });
            }
            deterministic &= targets.len() - before == 1 && probs[before] == 1.0;
            offsets.push(targets.len());
        }
    }
    let transitions = if deterministic {
        Transitions::Deterministic(targets)
    } else {
        Transitions::Sparse {
            offsets,
            targets,
            probs,
        }
    };
    let sub = TabularMDP::from_shared(states.len(), na, Arc::new(transitions), rewards, mdp.gamma)?;
    Ok((sub, states.to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn single(r: f64, gamma: f64) -> TabularMDP {
        TabularMDP::new(1, 1, Transitions::Deterministic(vec![0]), vec![r], gamma).unwrap()
    }

    #[test]
    fn geometric_series_single_state() {
        let q = value_iteration(&single(1.0, 0.5), 1e-12).unwrap();
        assert_abs_diff_eq!(q.get(0, 0), 2.0, epsilon = 1e-11);
    }

    #[test]
    fn zero_rewards_give_zero_q() {
        let mdp = TabularMDP::new(
            2,
            2,
            Transitions::Dense(vec![0.5, 0.5, 1.0, 0.0, 0.0, 1.0, 0.3, 0.7]),
            vec![0.0; 4],
            0.9,
        )
        .unwrap();
        let q = value_iteration(&mdp, 1e-8).unwrap();
        assert!(q.values().iter().all(|&v| v == 0.0));
        let pol = DeterministicPolicy::new(vec![1, 0], 2).unwrap();
        assert!(evaluate_policy(&mdp, &pol).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_bad_rows() {
        let err = TabularMDP::new(2, 1, Transitions::Dense(vec![0.5, 0.4, 0.0, 1.0]), vec![0.0; 2], 0.9);
        assert!(matches!(err, Err(MdpError::NonStochasticRow { state: 0, .. })));
        let err = TabularMDP::new(2, 1, Transitions::Dense(vec![1.5, -0.5, 0.0, 1.0]), vec![0.0; 2], 0.9);
        assert!(matches!(err, Err(MdpError::InvalidProbability { .. })));
        let err = TabularMDP::new(1, 1, Transitions::Deterministic(vec![3]), vec![0.0], 0.9);
        assert!(matches!(err, Err(MdpError::TargetOutOfRange { .. })));
        assert!(matches!(
            TabularMDP::new(1, 1, Transitions::Deterministic(vec![0]), vec![0.0], 1.0),
            Err(MdpError::InvalidDiscount(_))
        ));
        assert!(matches!(
            TabularMDP::new(1, 1, Transitions::Deterministic(vec![0]), vec![f64::NAN], 0.5),
            Err(MdpError::NonFiniteReward { .. })
        ));
    }

    #[test]
    fn iteration_cap_reports_residual() {
        let opts = SolverOptions {
            tol: 1e-12,
            max_iters: 3,
        };
        match solve(&single(1.0, 0.9), &opts, None) {
            Err(MdpError::NotConverged { iterations, residual }) => {
                assert_eq!(iterations, 3);
                assert!(residual > 0.5);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            value_iteration(&single(1.0, 0.9), 0.0),
            Err(MdpError::InvalidTolerance(_))
        ));
    }

    #[test]
    fn greedy_breaks_ties_low() {
        let q = QFunction::new(2, 2, vec![1.0, 2.0, 3.0, 3.0]).unwrap();
        assert_eq!(greedy_policy(&q).actions(), &[1, 0]);
    }

    #[test]
    fn softmax_examples() {
        let q = QFunction::new(3, 2, vec![0.0, 0.0, 1.0, 0.0, 1e6, 0.0]).unwrap();
        let pi = softmax_policy(&q, 1.0);
        assert_eq!(pi.row(0), &[0.5, 0.5]);
        let e = core::f64::consts::E;
        assert_abs_diff_eq!(pi.prob(1, 0), e / (1.0 + e), epsilon = 1e-15);
        assert_abs_diff_eq!(pi.prob(1, 0), 0.73106, epsilon = 1e-5);
        assert_abs_diff_eq!(pi.prob(1, 1), 0.26894, epsilon = 1e-5);
        assert_eq!(pi.prob(2, 0), 1.0);
        assert_eq!(pi.prob(2, 1), 0.0);
        assert!(pi.row(2).iter().all(|p| p.is_finite()));
    }

    #[test]
    fn evaluate_single_state() {
        let v = evaluate_policy(&single(1.0, 0.9), &DeterministicPolicy::new(vec![0], 1).unwrap()).unwrap();
        assert_abs_diff_eq!(v[0], 10.0, epsilon = 1e-8);
    }

    #[test]
    fn residual_examples() {
        let mdp = single(1.0, 0.5);
        assert_eq!(bellman_residual(&mdp, &QFunction::zeros(1, 1)), 1.0);
        let q = value_iteration(&mdp, 1e-12).unwrap();
        assert!(bellman_residual(&mdp, &q) <= 1e-9);
        let shifted = q.map(|v| v + 3.0);
        assert_abs_diff_eq!(bellman_residual(&mdp, &shifted), 3.0 * 0.5, epsilon = 1e-9);
    }

    #[test]
    fn optimistic_start_converges_to_same_fixed_point() {
        // Chain 0 -> 1 -> 2 (absorbing), reward on entering 2.
        let next = vec![1, 0, 2, 0, 2, 2];
        let rewards = vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        let mdp = TabularMDP::new(3, 2, Transitions::Deterministic(next), rewards, 0.9).unwrap();
        let cold = solve(&mdp, &SolverOptions::default(), None).unwrap();
        let warm = solve(&mdp, &SolverOptions::default(), Some(&[10.0, 10.0, 0.0])).unwrap();
        for (a, b) in cold.q.values().iter().zip(warm.q.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-7);
        }
        assert_eq!(greedy_policy(&cold.q), greedy_policy(&warm.q));
    }

    #[test]
    fn policy_iteration_matches_value_iteration() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..40 {
            let (ns, na) = (rng.random_range(1..30), rng.random_range(1..5));
            let next = (0..ns * na).map(|_| rng.random_range(0..ns as u32)).collect();
            let rewards = (0..ns * na).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mdp = TabularMDP::new(ns, na, Transitions::Deterministic(next), rewards, 0.9).unwrap();
            let pi = policy_iteration(&mdp, None, 1000).unwrap();
            let q = value_iteration(&mdp, 1e-12).unwrap();
            for (a, b) in pi.values.iter().zip(q.state_values()) {
                assert_abs_diff_eq!(*a, b, epsilon = 1e-9);
            }
            let iterative = evaluate_policy(&mdp, &pi.policy).unwrap();
            for (a, b) in pi.values.iter().zip(iterative) {
                assert_abs_diff_eq!(*a, b, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn exact_evaluation_rejects_stochastic_kernels() {
        let mdp = TabularMDP::new(1, 1, Transitions::Dense(vec![1.0]), vec![1.0], 0.5).unwrap();
        let p = DeterministicPolicy::new(vec![0], 1).unwrap();
        assert_eq!(evaluate_deterministic(&mdp, &p), Err(MdpError::NotDeterministic));
        assert_abs_diff_eq!(evaluate_deterministic(&single(1.0, 0.5), &p).unwrap()[0], 2.0, epsilon = 1e-15);
    }

    #[test]
    fn restriction_keeps_reachable_block() {
        let next = vec![1, 1, 1, 1, 0, 2];
        let mdp = TabularMDP::new(3, 2, Transitions::Deterministic(next), vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0], 0.5)
            .unwrap();
        let states = reachable_states(&mdp, &[1]);
        assert_eq!(states, vec![1]);
        let (sub, map) = restrict(&mdp, &states).unwrap();
        assert_eq!(sub.n_states(), 1);
        assert_eq!(map, vec![1]);
        assert_eq!(sub.rewards(), &[2.0, 3.0]);
        assert!(matches!(restrict(&mdp, &[2]), Err(MdpError::TargetOutOfRange { .. })));
    }
}
