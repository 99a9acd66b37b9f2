//! Legible rewards over goal families and two-stage team solving.
//!
//! A legible agent is rewarded with the observer's posterior on its true goal
//! given the current state-action pair,
//! `r_leg_n(x, a) = P(n) exp(β q_n(x, a)) / Σ_m P(m) exp(β q_m(x, a))`,
//! where `q_n` are the per-goal action values the observer reasons with.
//!
//! In a team, the joint-optimal policy is solved first. Teammates are then
//! frozen to it and the legible agent best-responds on the induced
//! single-agent model under the legible reward.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::mdp::{
    greedy_policy, row_max, solve, DeterministicPolicy, MdpError, QFunction, SolverOptions,
    StochasticPolicy, TabularMDP, Transitions,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LegibilityError {
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error("a goal family needs at least one goal")]
    NoGoals,
    #[error("goal {0} does not share the family's states, actions and dynamics")]
    MismatchedDynamics(usize),
    #[error("goal family has no solved action values")]
    Unsolved,
    #[error("inverse temperature must be positive and finite, got {0}")]
    InvalidBeta(f64),
    #[error("goal index {goal} out of range for {n_goals} goals")]
    GoalOutOfRange { goal: usize, n_goals: usize },
    #[error("prior weights must be finite, non-negative and not all zero")]
    InvalidPrior,
    #[error("team of {n_agents} agents cannot have {n_legible} legible agents")]
    InvalidTeam { n_agents: usize, n_legible: usize },
    #[error("joint action factorization {product} does not match {found} joint actions")]
    Factorization { product: usize, found: usize },
    #[error("agent slot {slot} out of range for {n_agents} agents")]
    SlotOutOfRange { slot: usize, n_agents: usize },
    #[error("teammate policy covers {found} actions over {states} states; expected {expected}")]
    TeammateShape {
        expected: usize,
        found: usize,
        states: usize,
    },
}

/// Goal-conditioned models sharing states, actions and dynamics.
#[derive(Debug, Clone)]
pub struct GoalFamily {
    members: Vec<TabularMDP>,
    prior: Vec<f64>,
    values: Option<Vec<QFunction>>,
    terminal: Option<usize>,
}

impl GoalFamily {
    /// Family with a uniform prior. Every member must share the dynamics of
    /// the first one.
    pub fn new(members: Vec<TabularMDP>) -> Result<Self, LegibilityError> {
        let first = members.first().ok_or(LegibilityError::NoGoals)?;
        if let Some(bad) = members.iter().position(|m| !m.same_dynamics(first)) {
            return Err(LegibilityError::MismatchedDynamics(bad));
        }
        let n = members.len();
        Ok(GoalFamily {
            members,
            prior: vec![1.0 / n as f64; n],
            values: None,
            terminal: None,
        })
    }

    /// Replaces the prior with normalized `weights`.
    pub fn with_prior(mut self, weights: &[f64]) -> Result<Self, LegibilityError> {
        if weights.len() != self.members.len() {
            return Err(MdpError::ShapeMismatch {
                what: "goal prior",
                expected: self.members.len(),
                found: weights.len(),
            }
            .into());
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || !(total > 0.0) {
            return Err(LegibilityError::InvalidPrior);
        }
        self.prior = weights.iter().map(|w| w / total).collect();
        Ok(self)
    }

    /// Marks the absorbing state entered when a goal is reached.
    ///
    /// Legible models built from a family with a terminal state pay nothing
    /// once there and instead pay the discounted value of certain inference
    /// (`γ / (1 − γ)` per unit of goal reward) on the completing transition.
    pub fn with_terminal(mut self, state: usize) -> Result<Self, LegibilityError> {
        if state >= self.n_states() {
            return Err(MdpError::ShapeMismatch {
                what: "terminal state",
                expected: self.n_states(),
                found: state,
            }
            .into());
        }
        self.terminal = Some(state);
        Ok(self)
    }

    /// Solves every member to optimality.
    pub fn solve(mut self, opts: &SolverOptions) -> Result<Self, LegibilityError> {
        let values = self
            .members
            .iter()
            .map(|m| solve(m, opts, None).map(|s| s.q))
            .collect::<Result<Vec<_>, _>>()?;
        self.values = Some(values);
        Ok(self)
    }

    /// Installs the per-goal action values an observer uses, in place of
    /// solving the members.
    pub fn with_values(mut self, values: Vec<QFunction>) -> Result<Self, LegibilityError> {
        if values.len() != self.members.len() {
            return Err(MdpError::ShapeMismatch {
                what: "goal values",
                expected: self.members.len(),
                found: values.len(),
            }
            .into());
        }
        for q in &values {
            if q.n_states() != self.n_states() || q.n_actions() != self.n_actions() {
                return Err(MdpError::ShapeMismatch {
                    what: "goal value table",
                    expected: self.n_states() * self.n_actions(),
                    found: q.n_states() * q.n_actions(),
                }
                .into());
            }
        }
        self.values = Some(values);
        Ok(self)
    }

    pub fn n_goals(&self) -> usize {
        self.members.len()
    }

    pub fn n_states(&self) -> usize {
        self.members[0].n_states()
    }

    pub fn n_actions(&self) -> usize {
        self.members[0].n_actions()
    }

    pub fn gamma(&self) -> f64 {
        self.members[0].gamma()
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    pub fn terminal(&self) -> Option<usize> {
        self.terminal
    }

    pub fn member(&self, goal: usize) -> Result<&TabularMDP, LegibilityError> {
        self.members.get(goal).ok_or(LegibilityError::GoalOutOfRange {
            goal,
            n_goals: self.members.len(),
        })
    }

    pub fn members(&self) -> &[TabularMDP] {
        &self.members
    }

    pub fn values(&self) -> Option<&[QFunction]> {
        self.values.as_deref()
    }
}

/// `r_leg_n(x, a)` for every goal, laid out `[goal][x * n_actions + a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LegibleRewardTable {
    n_goals: usize,
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
}

impl LegibleRewardTable {
    pub fn n_goals(&self) -> usize {
        self.n_goals
    }

    #[inline]
    pub fn get(&self, goal: usize, state: usize, action: usize) -> f64 {
        self.values[(goal * self.n_states + state) * self.n_actions + action]
    }

    pub fn goal_rewards(&self, goal: usize) -> &[f64] {
        let len = self.n_states * self.n_actions;
        &self.values[goal * len..(goal + 1) * len]
    }
}

fn check_beta(beta: f64) -> Result<(), LegibilityError> {
    if beta > 0.0 && beta.is_finite() {
        Ok(())
    } else {
        Err(LegibilityError::InvalidBeta(beta))
    }
}

/// Posterior over goals from one state-action pair under a Boltzmann
/// observer with inverse temperature `beta`.
pub fn legible_reward(family: &GoalFamily, beta: f64) -> Result<LegibleRewardTable, LegibilityError> {
    check_beta(beta)?;
    let values = family.values.as_ref().ok_or(LegibilityError::Unsolved)?;
    let (n_goals, ns, na) = (family.n_goals(), family.n_states(), family.n_actions());
    let pairs = ns * na;
    let log_prior: Vec<f64> = family.prior.iter().map(|&p| libm::log(p)).collect();
    let mut out = vec![0.0; n_goals * pairs];
    let mut logits = vec![0.0; n_goals];
    for k in 0..pairs {
        for (n, q) in values.iter().enumerate() {
            logits[n] = log_prior[n] + beta * q.values()[k];
        }
        let m = row_max(&logits);
        let mut total = 0.0;
        for l in logits.iter_mut() {
            *l = libm::exp(*l - m);
            total += *l;
        }
        for (n, l) in logits.iter().enumerate() {
            out[n * pairs + k] = l / total;
        }
    }
    Ok(LegibleRewardTable {
        n_goals,
        n_states: ns,
        n_actions: na,
        values: out,
    })
}

/// Task-reward multiplier on completing pairs of a terminated legible model.
///
/// Being maximally legible forever is worth `1 / (1 − γ)`; paying that much
/// on completion makes finishing one step earlier strictly better than
/// hovering, and with a single goal ranks policies exactly like the task.
pub fn completion_bonus(gamma: f64) -> f64 {
    1.0 / (1.0 - gamma)
}

/// The family's dynamics with the legible reward of `goal`.
///
/// With a terminal state, its rows pay 0 and every other pair adds
/// [`completion_bonus`] times the member's task reward.
pub fn build_legible_mdp(
    family: &GoalFamily,
    table: &LegibleRewardTable,
    goal: usize,
) -> Result<TabularMDP, LegibilityError> {
    let member = family.member(goal)?;
    if table.n_goals != family.n_goals()
        || table.n_states != family.n_states()
        || table.n_actions != family.n_actions()
    {
        return Err(MdpError::ShapeMismatch {
            what: "legible reward table",
            expected: family.n_goals() * family.n_states() * family.n_actions(),
            found: table.values.len(),
        }
        .into());
    }
    let mut rewards = table.goal_rewards(goal).to_vec();
    if let Some(t) = family.terminal {
        let na = family.n_actions();
        let bonus = completion_bonus(member.gamma());
        for (k, r) in rewards.iter_mut().enumerate() {
            if k / na == t {
                *r = 0.0;
            } else {
                *r += bonus * member.rewards()[k];
            }
        }
    }
    Ok(member.with_rewards(rewards)?)
}

/// Optimal action values and greedy joint policy of a joint model.
pub fn solve_optimal_joint(
    mdp: &TabularMDP,
    opts: &SolverOptions,
) -> Result<(QFunction, DeterministicPolicy), LegibilityError> {
    let q = solve(mdp, opts, None)?.q;
    let policy = greedy_policy(&q);
    Ok((q, policy))
}

/// Solved legible model.
#[derive(Debug, Clone)]
pub struct LegibleSolution {
    pub q: QFunction,
    pub policy: DeterministicPolicy,
    pub iterations: usize,
}

/// Legible model of `goal`: [`legible_reward`] followed by [`build_legible_mdp`].
pub fn legible_mdp(family: &GoalFamily, beta: f64, goal: usize) -> Result<TabularMDP, LegibilityError> {
    let table = legible_reward(family, beta)?;
    build_legible_mdp(family, &table, goal)
}

/// Optimistic start for solving a legible model of `family`, if terminated.
pub fn legible_initial_values(family: &GoalFamily, mdp: &TabularMDP) -> Option<Vec<f64>> {
    family.terminal.map(|t| {
        // Per-step legible reward never exceeds 1 and completion adds the
        // bonus once, so 1 / (1 − γ) + bonus bounds v* from above.
        let mut v = vec![1.0 / (1.0 - mdp.gamma()) + completion_bonus(mdp.gamma()); mdp.n_states()];
        v[t] = 0.0;
        v
    })
}

/// Greedy policy of the legible model of `goal`.
pub fn solve_legible_best_response(
    family: &GoalFamily,
    beta: f64,
    goal: usize,
    opts: &SolverOptions,
) -> Result<LegibleSolution, LegibilityError> {
    let mdp = legible_mdp(family, beta, goal)?;
    let init = legible_initial_values(family, &mdp);
    let sol = solve(&mdp, opts, init.as_deref())?;
    Ok(LegibleSolution {
        policy: greedy_policy(&sol.q),
        q: sol.q,
        iterations: sol.iterations,
    })
}

/// Agent count, legible count and local action counts of a team. Joint
/// actions are mixed-radix with agent 0 most significant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TeamSpec {
    local_actions: Vec<usize>,
    n_legible: usize,
}

impl TeamSpec {
    pub fn new(local_actions: Vec<usize>, n_legible: usize) -> Result<Self, LegibilityError> {
        if local_actions.is_empty() || n_legible > local_actions.len() {
            return Err(LegibilityError::InvalidTeam {
                n_agents: local_actions.len(),
                n_legible,
            });
        }
        if local_actions.contains(&0) {
            return Err(MdpError::Empty.into());
        }
        Ok(TeamSpec {
            local_actions,
            n_legible,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.local_actions.len()
    }

    pub fn n_legible(&self) -> usize {
        self.n_legible
    }

    pub fn local_actions(&self) -> &[usize] {
        &self.local_actions
    }

    pub fn joint_actions(&self) -> usize {
        self.local_actions.iter().product()
    }

    /// Number of joint actions of every agent except `slot`.
    pub fn teammate_actions(&self, slot: usize) -> usize {
        self.joint_actions() / self.local_actions[slot]
    }

    pub fn encode(&self, locals: &[usize]) -> usize {
        locals
            .iter()
            .zip(&self.local_actions)
            .fold(0, |acc, (&a, &n)| acc * n + a)
    }

    pub fn decode(&self, joint: usize) -> Vec<usize> {
        let mut out = vec![0; self.n_agents()];
        let mut rest = joint;
        for i in (0..self.n_agents()).rev() {
            out[i] = rest % self.local_actions[i];
            rest /= self.local_actions[i];
        }
        out
    }

    /// Joint action from `slot`'s action and the others' joint index.
    pub fn compose(&self, slot: usize, own: usize, teammates: usize) -> usize {
        let mut locals = vec![0; self.n_agents()];
        let mut rest = teammates;
        for i in (0..self.n_agents()).rev() {
            if i == slot {
                continue;
            }
            locals[i] = rest % self.local_actions[i];
            rest /= self.local_actions[i];
        }
        locals[slot] = own;
        self.encode(&locals)
    }

    /// Splits a joint action into `slot`'s action and the others' index.
    pub fn split(&self, slot: usize, joint: usize) -> (usize, usize) {
        let locals = self.decode(joint);
        let mut teammates = 0;
        for (i, (&a, &n)) in locals.iter().zip(&self.local_actions).enumerate() {
            if i != slot {
                teammates = teammates * n + a;
            }
        }
        (locals[slot], teammates)
    }

    fn check(&self, joint: &TabularMDP, slot: usize) -> Result<(), LegibilityError> {
        if slot >= self.n_agents() {
            return Err(LegibilityError::SlotOutOfRange {
                slot,
                n_agents: self.n_agents(),
            });
        }
        if self.joint_actions() != joint.n_actions() {
            return Err(LegibilityError::Factorization {
                product: self.joint_actions(),
                found: joint.n_actions(),
            });
        }
        Ok(())
    }
}

/// Policy of the frozen teammates over their joint factor.
#[derive(Debug, Clone, Copy)]
pub enum TeammatePolicy<'a> {
    Deterministic(&'a DeterministicPolicy),
    Stochastic(&'a StochasticPolicy),
}

impl TeammatePolicy<'_> {
    fn for_each(&self, state: usize, mut f: impl FnMut(usize, f64)) {
        match self {
            TeammatePolicy::Deterministic(p) => f(p.action(state), 1.0),
            TeammatePolicy::Stochastic(p) => {
                for (a, &pr) in p.row(state).iter().enumerate() {
                    if pr > 0.0 {
                        f(a, pr);
                    }
                }
            }
        }
    }

    fn shape(&self) -> (usize, Option<usize>) {
        match self {
            TeammatePolicy::Deterministic(p) => (p.n_states(), None),
            TeammatePolicy::Stochastic(p) => (p.n_states(), Some(p.n_actions())),
        }
    }
}

/// Teammate component of a joint policy, as a policy over the teammates'
/// joint factor.
pub fn teammate_component(joint: &DeterministicPolicy, spec: &TeamSpec, slot: usize) -> DeterministicPolicy {
    let actions = joint
        .actions()
        .iter()
        .map(|&a| spec.split(slot, a).1)
        .collect();
    DeterministicPolicy::new(actions, spec.teammate_actions(slot)).expect("split stays in range")
}

/// `slot`'s component of a joint policy.
pub fn own_component(joint: &DeterministicPolicy, spec: &TeamSpec, slot: usize) -> DeterministicPolicy {
    let actions = joint
        .actions()
        .iter()
        .map(|&a| spec.split(slot, a).0)
        .collect();
    DeterministicPolicy::new(actions, spec.local_actions()[slot]).expect("split stays in range")
}

/// Single-agent model for `leader_slot` with the teammates marginalized out:
/// `P'(y | x, a) = Σ_t π_T(t | x) P(y | x, (a, t))` and likewise for rewards.
pub fn build_induced_mdp(
    joint: &TabularMDP,
    teammates: TeammatePolicy<'_>,
    leader_slot: usize,
    spec: &TeamSpec,
) -> Result<TabularMDP, LegibilityError> {
    spec.check(joint, leader_slot)?;
    let expected = spec.teammate_actions(leader_slot);
    let (states, actions) = teammates.shape();
    if states != joint.n_states() || actions.is_some_and(|n| n != expected) {
        return Err(LegibilityError::TeammateShape {
            expected,
            found: actions.unwrap_or(expected),
            states,
        });
    }
    let ns = joint.n_states();
    let na = spec.local_actions()[leader_slot];
    let mut rewards = Vec::with_capacity(ns * na);
    let mut offsets = Vec::with_capacity(ns * na + 1);
    let mut targets: Vec<u32> = Vec::new();
    let mut probs: Vec<f64> = Vec::new();
    let mut deterministic = true;
    let mut row: Vec<(u32, f64)> = Vec::new();
    offsets.push(0);
    for x in 0..ns {
        for a in 0..na {
            row.clear();
            let mut r = 0.0;
            teammates.for_each(x, |t, pt| {
                let ja = spec.compose(leader_slot, a, t);
                r += pt * joint.reward(x, ja);
                joint.for_each_successor(x, ja, |y, p| row.push((y as u32, pt * p)));
            });
            row.sort_unstable_by_key(|e| e.0);
            let start = targets.len();
            for &(y, p) in &row {
                match targets.last() {
                    Some(&last) if targets.len() > start && last == y => {
                        *probs.last_mut().expect("paired") += p;
                    }
                    _ => {
                        targets.push(y);
                        probs.push(p);
                    }
                }
            }
            deterministic &= targets.len() - start == 1 && (probs[start] - 1.0).abs() == 0.0;
            offsets.push(targets.len());
            rewards.push(r);
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
    Ok(TabularMDP::new(ns, na, transitions, rewards, joint.gamma())?)
}

/// `max_t q(x, (a, t))`: the value of `slot` taking `a` when its teammates
/// answer as well as possible. This is the observer's action-value model.
pub fn observer_values(joint_q: &QFunction, spec: &TeamSpec, slot: usize) -> QFunction {
    let na = spec.local_actions()[slot];
    let nt = spec.teammate_actions(slot);
    let ns = joint_q.n_states();
    let mut out = Vec::with_capacity(ns * na);
    for x in 0..ns {
        let row = joint_q.row(x);
        for a in 0..na {
            let best = (0..nt)
                .map(|t| row[spec.compose(slot, a, t)])
                .fold(f64::NEG_INFINITY, f64::max);
            out.push(best);
        }
    }
    QFunction::new(ns, na, out).expect("finite joint values")
}

/// Which per-goal values the legible reward is computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LikelihoodModel {
    /// Observer values of the joint optimal `q*_n` ([`observer_values`]),
    /// the same model the follower's goal inference uses.
    #[default]
    ObserverMarginal,
    /// Optimal values of each goal's induced model with teammates frozen to
    /// the true goal's joint policy.
    InducedOptimal,
}

/// Team policy from the two-stage regimen.
#[derive(Debug, Clone)]
pub enum TeamPolicy {
    /// `L = 0`: everyone follows the joint-optimal policy.
    Optimal(DeterministicPolicy),
    /// `L = 1`: the legible agent follows `legible`, teammates follow
    /// their component of `joint`.
    Legible {
        joint: DeterministicPolicy,
        slot: usize,
        legible: DeterministicPolicy,
    },
    /// `L = N`: the whole team follows a joint legible policy.
    JointLegible(DeterministicPolicy),
}

/// Two-stage solve for `goal` of a solved joint family.
///
/// The legible agent is agent 0 when `L = 1`.
pub fn solve_team(
    family: &GoalFamily,
    spec: &TeamSpec,
    goal: usize,
    beta: f64,
    model: LikelihoodModel,
    opts: &SolverOptions,
) -> Result<TeamPolicy, LegibilityError> {
    check_beta(beta)?;
    let values = family.values().ok_or(LegibilityError::Unsolved)?;
    let member = family.member(goal)?;
    spec.check(member, 0)?;
    let joint = greedy_policy(&values[goal]);
    match spec.n_legible() {
        0 => Ok(TeamPolicy::Optimal(joint)),
        n if n == spec.n_agents() => Ok(TeamPolicy::JointLegible(
            solve_legible_best_response(family, beta, goal, opts)?.policy,
        )),
        1 => {
            let slot = 0;
            let induced = induced_family(family, &joint, spec, slot, model, opts)?;
            let legible = solve_legible_best_response(&induced, beta, goal, opts)?.policy;
            Ok(TeamPolicy::Legible {
                joint,
                slot,
                legible,
            })
        }
        n => Err(LegibilityError::InvalidTeam {
            n_agents: spec.n_agents(),
            n_legible: n,
        }),
    }
}

/// Goal family on the model induced by freezing teammates to `joint`.
pub fn induced_family(
    family: &GoalFamily,
    joint: &DeterministicPolicy,
    spec: &TeamSpec,
    slot: usize,
    model: LikelihoodModel,
    opts: &SolverOptions,
) -> Result<GoalFamily, LegibilityError> {
    let teammates = teammate_component(joint, spec, slot);
    let policy = TeammatePolicy::Deterministic(&teammates);
    let first = build_induced_mdp(family.member(0)?, policy, slot, spec)?;
    let mut members = Vec::with_capacity(family.n_goals());
    for m in family.members().iter().skip(1) {
        let rewards = induced_rewards(m, &teammates, spec, slot);
        members.push(first.with_rewards(rewards)?);
    }
    members.insert(0, first);
    let mut induced = GoalFamily::new(members)?.with_prior(family.prior())?;
    if let Some(t) = family.terminal() {
        induced = induced.with_terminal(t)?;
    }
    match model {
        LikelihoodModel::InducedOptimal => induced.solve(opts),
        LikelihoodModel::ObserverMarginal => {
            let values = family.values().ok_or(LegibilityError::Unsolved)?;
            let observed = values.iter().map(|q| observer_values(q, spec, slot)).collect();
            induced.with_values(observed)
        }
    }
}

fn induced_rewards(joint: &TabularMDP, teammates: &DeterministicPolicy, spec: &TeamSpec, slot: usize) -> Vec<f64> {
    let na = spec.local_actions()[slot];
    let mut out = Vec::with_capacity(joint.n_states() * na);
    for x in 0..joint.n_states() {
        for a in 0..na {
            out.push(joint.reward(x, spec.compose(slot, a, teammates.action(x))));
        }
    }
    out
}
