//! Solved per-goal models behind [`TeamPlanner`] for both environments.
//!
//! Planners keep state values only and rebuild action values on demand with
//! one backup per joint action, so a cache loaded from disk and a fresh
//! solve produce bit-identical decisions.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::agents::TeamPlanner;
use crate::experiment::ExperimentError;
use crate::foraging::{Foraging, ForagingAction, ForagingDynamics, ForagingState, N_ACTIONS};
use crate::grid::Cell;
use crate::legibility::{
    completion_bonus, induced_family, legible_initial_values, legible_mdp, GoalFamily, LikelihoodModel, TeamSpec,
};
use crate::mdp::{greedy_policy, policy_iteration, q_from_values, solve, DeterministicPolicy, QFunction, SolverOptions, TabularMDP, Transitions};
use crate::pursuit::{goal_mdp_pursuit, PursuitConfig, PursuitModel, PursuitState, N_MOVES};

/// Solver inputs shared by both planners.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannerParams {
    pub beta: f64,
    pub opts: SolverOptions,
}

/// Values of one goal under one present-food configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct GoalValues {
    pub goal: usize,
    pub joint: Vec<f64>,
    pub legible: Option<Vec<f64>>,
}

/// All solved goals of one present-food configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskValues {
    pub mask: u32,
    pub goals: Vec<GoalValues>,
}

#[derive(Debug, Clone)]
struct GoalPlan {
    joint: Vec<f64>,
    legible_values: Option<Vec<f64>>,
    legible_policy: Option<Vec<u8>>,
}

#[derive(Debug, Clone)]
struct MaskPlan {
    index: crate::foraging::PairIndex,
    goals: Vec<usize>,
    plans: Vec<GoalPlan>,
}

fn mask_goals(mask: u32) -> Vec<usize> {
    (0..32).filter(|f| mask & (1 << f) != 0).collect()
}

/// Foraging planner: joint optimal values per (present foods, goal) and
/// legible leader policies per (present foods, target).
#[derive(Debug, Clone)]
pub struct ForagingPlanner {
    env: Foraging,
    params: PlannerParams,
    masks: BTreeMap<u32, MaskPlan>,
}

impl ForagingPlanner {
    pub fn new(env: Foraging, params: PlannerParams) -> Self {
        ForagingPlanner {
            env,
            params,
            masks: BTreeMap::new(),
        }
    }

    pub fn env(&self) -> &Foraging {
        &self.env
    }

    pub fn n_masks(&self) -> usize {
        self.masks.len()
    }

    fn team() -> TeamSpec {
        TeamSpec::new(vec![N_ACTIONS, N_ACTIONS], 1).expect("two agents, one legible")
    }

    /// Per-goal models and canonical joint action values of `mask`.
    fn joint_models(&self, dynamics: &ForagingDynamics, joint: &[Vec<f64>]) -> Result<(Vec<TabularMDP>, Vec<QFunction>), ExperimentError> {
        let goals = mask_goals(dynamics.food);
        let mut mdps = Vec::with_capacity(goals.len());
        let mut qs = Vec::with_capacity(goals.len());
        for (i, &g) in goals.iter().enumerate() {
            let mdp = dynamics.goal_mdp(g)?;
            qs.push(q_from_values(&mdp, &joint[i]));
            mdps.push(mdp);
        }
        Ok((mdps, qs))
    }

    /// Solves the joint models of `mask` unless present.
    pub fn ensure_mask(&mut self, mask: u32) -> Result<(), ExperimentError> {
        if self.masks.contains_key(&mask) {
            return Ok(());
        }
        let dynamics = self.env.goal_dynamics(mask);
        let goals = mask_goals(mask);
        let mut plans = Vec::with_capacity(goals.len());
        for &g in &goals {
            let mdp = dynamics.goal_mdp(g)?;
            let q = solve(&mdp, &self.params.opts, None)?.q;
            plans.push(GoalPlan {
                joint: q.state_values(),
                legible_values: None,
                legible_policy: None,
            });
        }
        self.masks.insert(
            mask,
            MaskPlan {
                index: dynamics.index.clone(),
                goals,
                plans,
            },
        );
        Ok(())
    }

    /// Solves (or rebuilds from cached values) the legible policy for `target`.
    pub fn ensure_legible(&mut self, mask: u32, target: usize) -> Result<(), ExperimentError> {
        self.ensure_mask(mask)?;
        let plan = &self.masks[&mask];
        let gi = plan
            .goals
            .iter()
            .position(|&g| g == target)
            .ok_or(ExperimentError::GoalClosed(target))?;
        if plan.plans[gi].legible_policy.is_some() {
            return Ok(());
        }
        let dynamics = self.env.goal_dynamics(mask);
        let joint: Vec<Vec<f64>> = plan.plans.iter().map(|p| p.joint.clone()).collect();
        let cached = plan.plans[gi].legible_values.clone();
        let (mdps, qs) = self.joint_models(&dynamics, &joint)?;
        let spec = Self::team();
        let joint_policy = greedy_policy(&qs[gi]);
        let family = GoalFamily::new(mdps)?
            .with_terminal(dynamics.absorbing())?
            .with_values(qs)?;
        let induced = induced_family(
            &family,
            &joint_policy,
            &spec,
            0,
            LikelihoodModel::ObserverMarginal,
            &self.params.opts,
        )?;
        let mdp = legible_mdp(&induced, self.params.beta, gi)?;
        let values = match cached {
            Some(v) => v,
            None => {
                let init = legible_initial_values(&induced, &mdp);
                solve(&mdp, &self.params.opts, init.as_deref())?.q.state_values()
            }
        };
        let policy = greedy_policy(&q_from_values(&mdp, &values));
        let slot = &mut self.masks.get_mut(&mask).expect("ensured").plans[gi];
        slot.legible_policy = Some(policy.actions().iter().map(|&a| a as u8).collect());
        slot.legible_values = Some(values);
        Ok(())
    }

    /// Every solved value table, ordered by mask then goal.
    pub fn export(&self) -> Vec<MaskValues> {
        self.masks
            .iter()
            .map(|(&mask, plan)| MaskValues {
                mask,
                goals: plan
                    .goals
                    .iter()
                    .zip(&plan.plans)
                    .map(|(&goal, p)| GoalValues {
                        goal,
                        joint: p.joint.clone(),
                        legible: p.legible_values.clone(),
                    })
                    .collect(),
            })
            .collect()
    }

    /// Loads value tables produced by [`export`](Self::export).
    pub fn import(&mut self, entries: Vec<MaskValues>) -> Result<(), ExperimentError> {
        for entry in entries {
            let goals = mask_goals(entry.mask);
            let index = crate::foraging::PairIndex::new(self.env.grid(), |c| !self.food_at(entry.mask, c));
            let n_states = index.n_pairs() + 1;
            if entry.goals.len() != goals.len()
                || entry
                    .goals
                    .iter()
                    .zip(&goals)
                    .any(|(e, &g)| e.goal != g || e.joint.len() != n_states || e.legible.as_ref().is_some_and(|l| l.len() != n_states))
            {
                return Err(ExperimentError::Cache("value table does not match the environment"));
            }
            let plans = entry
                .goals
                .into_iter()
                .map(|e| GoalPlan {
                    joint: e.joint,
                    legible_values: e.legible,
                    legible_policy: None,
                })
                .collect();
            self.masks.insert(entry.mask, MaskPlan { index, goals, plans });
        }
        Ok(())
    }

    fn food_at(&self, mask: u32, c: Cell) -> bool {
        self.env
            .candidates()
            .iter()
            .enumerate()
            .any(|(f, &fc)| mask & (1 << f) != 0 && fc == c)
    }

    fn locate(&mut self, state: &ForagingState, goal: usize) -> Result<(&MaskPlan, usize, usize), ExperimentError> {
        self.ensure_mask(state.food)?;
        let plan = &self.masks[&state.food];
        let gi = plan.goals.iter().position(|&g| g == goal).ok_or(ExperimentError::GoalClosed(goal))?;
        let pair = plan.index.encode(state.agents[0], state.agents[1]).ok_or(ExperimentError::OffModel)?;
        Ok((plan, gi, pair))
    }
}

impl TeamPlanner for ForagingPlanner {
    type State = ForagingState;
    type Error = ExperimentError;

    fn n_leader_actions(&self) -> usize {
        N_ACTIONS
    }

    fn n_follower_actions(&self) -> usize {
        N_ACTIONS
    }

    fn remaining(&self, state: &ForagingState) -> Vec<usize> {
        mask_goals(state.food)
    }

    fn joint_row(&mut self, state: &ForagingState, goal: usize, out: &mut Vec<f64>) -> Result<(), ExperimentError> {
        let gamma = self.env.config().gamma;
        let (_, gi, _) = self.locate(state, goal)?;
        let plan = &self.masks[&state.food];
        let v = &plan.plans[gi].joint;
        let absorbing = plan.index.n_pairs();
        out.clear();
        for j in 0..N_ACTIONS * N_ACTIONS {
            let acts = [ForagingAction::ALL[j / N_ACTIONS], ForagingAction::ALL[j % N_ACTIONS]];
            let (moved, picked) = self.env.transition(state.agents, state.food, acts);
            let (r, next) = if picked != 0 {
                (if picked & (1 << goal) != 0 { 1.0 } else { 0.0 }, absorbing)
            } else {
                (0.0, plan.index.encode(moved[0], moved[1]).expect("moves stay legal"))
            };
            out.push(r + gamma * v[next]);
        }
        Ok(())
    }

    fn legible_action(&mut self, state: &ForagingState, goal: usize) -> Result<usize, ExperimentError> {
        self.ensure_legible(state.food, goal)?;
        let (plan, gi, pair) = self.locate(state, goal)?;
        Ok(plan.plans[gi].legible_policy.as_ref().expect("ensured")[pair] as usize)
    }
}

/// Pursuit planner: one joint model serves every prey; the legible leader
/// re-solves its induced model at the start of each objective with the
/// other preys frozen where they stand.
#[derive(Debug, Clone)]
pub struct PursuitPlanner {
    config: PursuitConfig,
    params: PlannerParams,
    model: PursuitModel,
    values: Vec<f64>,
    follower: Vec<u8>,
    leader: Vec<u8>,
    observer: Vec<f64>,
    induced: Option<TabularMDP>,
    segment: Option<(usize, DeterministicPolicy)>,
}

impl PursuitPlanner {
    /// Builds and solves the joint model.
    pub fn new(config: PursuitConfig, params: PlannerParams, allow_large: bool) -> Result<Self, ExperimentError> {
        let model = goal_mdp_pursuit(&config, allow_large)?;
        let values = solve(&model.mdp, &params.opts, None)?.q.state_values();
        Ok(Self::assemble(config, params, model, values))
    }

    /// Builds the joint model and adopts previously solved values.
    pub fn with_values(
        config: PursuitConfig,
        params: PlannerParams,
        allow_large: bool,
        values: Vec<f64>,
    ) -> Result<Self, ExperimentError> {
        let model = goal_mdp_pursuit(&config, allow_large)?;
        if values.len() != model.mdp.n_states() {
            return Err(ExperimentError::Cache("value table does not match the environment"));
        }
        Ok(Self::assemble(config, params, model, values))
    }

    fn assemble(config: PursuitConfig, params: PlannerParams, model: PursuitModel, values: Vec<f64>) -> Self {
        let ns = model.mdp.n_states();
        let mut follower = Vec::with_capacity(ns);
        let mut leader = Vec::with_capacity(ns);
        let mut observer = Vec::with_capacity(ns * N_MOVES);
        let mut row = [0.0; N_MOVES * N_MOVES];
        for s in 0..ns {
            for (j, q) in row.iter_mut().enumerate() {
                *q = model.mdp.backup(s, j, &values);
            }
            let best = crate::mdp::argmax(&row);
            leader.push((best / N_MOVES) as u8);
            follower.push((best % N_MOVES) as u8);
            observer.extend(row.chunks_exact(N_MOVES).map(crate::mdp::row_max));
        }
        PursuitPlanner {
            config,
            params,
            model,
            values,
            follower,
            leader,
            observer,
            induced: None,
            segment: None,
        }
    }

    pub fn config(&self) -> &PursuitConfig {
        &self.config
    }

    pub fn model(&self) -> &PursuitModel {
        &self.model
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn triple(&self, state: &PursuitState, goal: usize) -> Result<usize, ExperimentError> {
        if goal >= state.preys.len() || !state.is_alive(goal) {
            return Err(ExperimentError::GoalClosed(goal));
        }
        self.model
            .state(state.hunters[0], state.hunters[1], state.preys[goal])
            .ok_or(ExperimentError::OffModel)
    }

    /// Leader model with the follower fixed to its joint optimal component.
    fn induced(&mut self) -> Result<&TabularMDP, ExperimentError> {
        if self.induced.is_none() {
            let ns = self.model.mdp.n_states();
            let mut next = Vec::with_capacity(ns * N_MOVES);
            let mut rewards = Vec::with_capacity(ns * N_MOVES);
            for s in 0..ns {
                for a in 0..N_MOVES {
                    let j = a * N_MOVES + self.follower[s] as usize;
                    next.push(self.model.mdp.successor(s, j).expect("deterministic") as u32);
                    rewards.push(self.model.mdp.reward(s, j));
                }
            }
            let mdp = TabularMDP::new(ns, N_MOVES, Transitions::Deterministic(next), rewards, self.config.gamma)?;
            self.induced = Some(mdp);
        }
        Ok(self.induced.as_ref().expect("built"))
    }

    /// Legible reward over the induced model for `goal`, other live preys
    /// frozen at their current cells. Distractor observer values come from
    /// the joint model evaluated at the distractor's cell; where a hunter
    /// stands on that cell the value is taken as 0.
    fn legible_rewards(&mut self, state: &PursuitState, goal: usize) -> Result<Vec<f64>, ExperimentError> {
        let grid = self.config.grid;
        let nc = grid.n_cells();
        let beta = self.params.beta;
        let gamma = self.config.gamma;
        let mut distractors: Vec<Vec<f64>> = Vec::new();
        for (i, &d) in state.preys.iter().enumerate() {
            if i == goal || !state.is_alive(i) {
                continue;
            }
            let mut table = vec![0.0; nc * nc * N_MOVES];
            for a in 0..nc {
                for b in 0..nc {
                    if let Some(s) = self.model.state(grid.cell(a), grid.cell(b), d) {
                        let k = (a * nc + b) * N_MOVES;
                        table[k..k + N_MOVES].copy_from_slice(&self.observer[s * N_MOVES..(s + 1) * N_MOVES]);
                    }
                }
            }
            distractors.push(table);
        }
        self.induced()?;
        let induced = self.induced.as_ref().expect("built");
        let absorbing = self.model.absorbing();
        let bonus = completion_bonus(gamma);
        let mut rewards = Vec::with_capacity(induced.n_states() * N_MOVES);
        for s in 0..induced.n_states() {
            if s == absorbing {
                rewards.extend([0.0; N_MOVES]);
                continue;
            }
            let (h0, h1, _) = self.model.index.decode(s);
            let hk = (grid.index(h0) * nc + grid.index(h1)) * N_MOVES;
            for a in 0..N_MOVES {
                let own = beta * self.observer[s * N_MOVES + a];
                let mut m = own;
                for d in &distractors {
                    m = m.max(beta * d[hk + a]);
                }
                let mut total = libm::exp(own - m);
                let num = total;
                for d in &distractors {
                    total += libm::exp(beta * d[hk + a] - m);
                }
                rewards.push(num / total + bonus * induced.reward(s, a));
            }
        }
        Ok(rewards)
    }
}

impl TeamPlanner for PursuitPlanner {
    type State = PursuitState;
    type Error = ExperimentError;

    fn n_leader_actions(&self) -> usize {
        N_MOVES
    }

    fn n_follower_actions(&self) -> usize {
        N_MOVES
    }

    fn remaining(&self, state: &PursuitState) -> Vec<usize> {
        (0..state.preys.len()).filter(|&i| state.is_alive(i)).collect()
    }

    fn joint_row(&mut self, state: &PursuitState, goal: usize, out: &mut Vec<f64>) -> Result<(), ExperimentError> {
        let s = self.triple(state, goal)?;
        out.clear();
        out.extend((0..N_MOVES * N_MOVES).map(|j| self.model.mdp.backup(s, j, &self.values)));
        Ok(())
    }

    fn begin_objective(&mut self, state: &PursuitState, goal: usize) -> Result<(), ExperimentError> {
        self.triple(state, goal)?;
        let rewards = self.legible_rewards(state, goal)?;
        let mdp = self.induced()?.with_rewards(rewards)?;
        let init = DeterministicPolicy::new(self.leader.iter().map(|&a| a as usize).collect(), N_MOVES)?;
        let sol = policy_iteration(&mdp, Some(&init), self.params.opts.max_iters)?;
        self.segment = Some((goal, sol.policy));
        Ok(())
    }

    fn legible_action(&mut self, state: &PursuitState, goal: usize) -> Result<usize, ExperimentError> {
        if self.segment.as_ref().is_none_or(|(g, _)| *g != goal) {
            self.begin_objective(state, goal)?;
        }
        let s = self.triple(state, goal)?;
        Ok(self.segment.as_ref().expect("planned").1.action(s))
    }
}
