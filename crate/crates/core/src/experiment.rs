//! Paired-condition experiment harness.
//!
//! Scenario `i` of grid `g` is drawn from
//! `seeds::derive(seeds::derive(seeds::derive(master, ENV), g), i)` where
//! `ENV` is [`seeds::tags::FORAGING`] or [`seeds::tags::PURSUIT`]. Foraging
//! candidate cells for grid `g` use
//! `seeds::derive(seeds::derive(master, CANDIDATES), g)`. Every condition
//! replays the same scenario list.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::agents::{steps_to_stable_inference, FollowerAgent, LeaderAgent, LeaderMode, TeamPlanner};
use crate::foraging::{Foraging, ForagingConfig, ForagingError, ForagingLayout, ForagingState, SUPPORTED_SIDES};
use crate::legibility::LegibilityError;
use crate::mdp::{MdpError, SolverOptions};
use crate::planner::{ForagingPlanner, MaskValues, PlannerParams, PursuitPlanner};
use crate::pursuit::{pursuit_step, sample_scenario, PursuitConfig, PursuitError, PursuitScenario, PursuitState};
use crate::seeds;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("grid side {0} is not supported for this environment")]
    UnsupportedGrid(u8),
    #[error("goal {0} is not open in the current state")]
    GoalClosed(usize),
    #[error("state lies outside the solved model")]
    OffModel,
    #[error("cache: {0}")]
    Cache(&'static str),
    #[error(transparent)]
    Foraging(#[from] ForagingError),
    #[error(transparent)]
    Pursuit(#[from] PursuitError),
    #[error(transparent)]
    Legibility(#[from] LegibilityError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Environment {
    Foraging,
    Pursuit,
}

impl Environment {
    pub fn name(self) -> &'static str {
        match self {
            Environment::Foraging => "foraging",
            Environment::Pursuit => "pursuit",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "foraging" => Some(Environment::Foraging),
            "pursuit" => Some(Environment::Pursuit),
            _ => None,
        }
    }

    fn tag(self) -> u64 {
        match self {
            Environment::Foraging => seeds::tags::FORAGING,
            Environment::Pursuit => seeds::tags::PURSUIT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Condition {
    Optimal,
    Legible,
}

impl Condition {
    pub const ALL: [Condition; 2] = [Condition::Optimal, Condition::Legible];

    pub fn name(self) -> &'static str {
        match self {
            Condition::Optimal => "optimal",
            Condition::Legible => "legible",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "optimal" => Some(Condition::Optimal),
            "legible" => Some(Condition::Legible),
            _ => None,
        }
    }

    pub fn mode(self) -> LeaderMode {
        match self {
            Condition::Optimal => LeaderMode::Optimal,
            Condition::Legible => LeaderMode::Legible,
        }
    }
}

/// Pursuit sides accepted at all; those above the exact-solver cap also
/// need `allow_large`.
pub const PURSUIT_SIDES: core::ops::RangeInclusive<u8> = 5..=20;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub environment: Environment,
    pub grid_sizes: Vec<u8>,
    pub conditions: Vec<Condition>,
    pub episodes: usize,
    pub master_seed: u64,
    pub step_limit: u32,
    /// Legibility inverse temperature.
    pub beta: f64,
    /// Follower inference inverse temperature.
    pub beta_infer: f64,
    pub gamma: f64,
    pub tol: f64,
    pub max_iters: usize,
    /// Lifts the exact-solver cap on pursuit grids.
    pub allow_large: bool,
}

impl ExperimentConfig {
    /// 250 episodes per grid over every supported side, 600-step limit.
    pub fn foraging() -> Self {
        ExperimentConfig {
            environment: Environment::Foraging,
            grid_sizes: SUPPORTED_SIDES.to_vec(),
            conditions: Condition::ALL.to_vec(),
            episodes: 250,
            master_seed: 0,
            step_limit: 600,
            beta: 1.0,
            beta_infer: 1.0,
            gamma: 0.95,
            tol: crate::mdp::DEFAULT_TOL,
            max_iters: crate::mdp::DEFAULT_MAX_ITERS,
            allow_large: false,
        }
    }

    /// 200 episodes on 10×10, 800-step limit.
    pub fn pursuit() -> Self {
        ExperimentConfig {
            environment: Environment::Pursuit,
            grid_sizes: alloc::vec![10],
            episodes: 200,
            step_limit: 800,
            ..Self::foraging()
        }
    }

    pub fn default_for(environment: Environment) -> Self {
        match environment {
            Environment::Foraging => Self::foraging(),
            Environment::Pursuit => Self::pursuit(),
        }
    }

    pub fn params(&self) -> PlannerParams {
        PlannerParams {
            beta: self.beta,
            opts: SolverOptions {
                tol: self.tol,
                max_iters: self.max_iters,
            },
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::Config(String::from(m)));
        if self.grid_sizes.is_empty() {
            return bad("grid list is empty");
        }
        if self.conditions.is_empty() {
            return bad("condition list is empty");
        }
        if self.episodes == 0 {
            return bad("episodes must be positive");
        }
        if self.episodes > u32::MAX as usize {
            return bad("too many episodes");
        }
        if self.step_limit == 0 {
            return bad("step limit must be positive");
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) || !(self.beta_infer > 0.0 && self.beta_infer.is_finite()) {
            return bad("inverse temperatures must be positive and finite");
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("discount must lie in [0, 1)");
        }
        if !(self.tol > 0.0) || self.max_iters == 0 {
            return bad("solver tolerance and iteration cap must be positive");
        }
        let mut seen = BTreeSet::new();
        for &g in &self.grid_sizes {
            if !seen.insert(g) {
                return Err(ExperimentError::Config(format!("grid {g} listed twice")));
            }
            self.check_grid(g)?;
        }
        let conds: BTreeSet<_> = self.conditions.iter().collect();
        if conds.len() != self.conditions.len() {
            return bad("condition listed twice");
        }
        Ok(())
    }

    fn check_grid(&self, side: u8) -> Result<(), ExperimentError> {
        let ok = match self.environment {
            Environment::Foraging => SUPPORTED_SIDES.contains(&side),
            Environment::Pursuit => PURSUIT_SIDES.contains(&side),
        };
        if !ok {
            return Err(ExperimentError::UnsupportedGrid(side));
        }
        if self.environment == Environment::Pursuit && side > crate::pursuit::EXACT_DP_MAX_SIDE && !self.allow_large {
            return Err(PursuitError::StateSpaceCap {
                side,
                cap: crate::pursuit::EXACT_DP_MAX_SIDE,
            }
            .into());
        }
        Ok(())
    }

    pub fn foraging_config(&self, side: u8) -> ForagingConfig {
        let mut c = ForagingConfig::standard(side, seeds::derive(seeds::derive(self.master_seed, seeds::tags::CANDIDATES), side as u64));
        c.step_limit = self.step_limit;
        c.gamma = self.gamma;
        c
    }

    pub fn pursuit_config(&self, side: u8) -> PursuitConfig {
        let mut c = PursuitConfig::standard(side);
        c.step_limit = self.step_limit;
        c.gamma = self.gamma;
        c
    }

    /// Seed of scenario `i` on grid `side`.
    pub fn scenario_seed(&self, side: u8, i: u32) -> u64 {
        seeds::derive(
            seeds::derive(seeds::derive(self.master_seed, self.environment.tag()), side as u64),
            i as u64,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ScenarioKind {
    Foraging(ForagingLayout),
    Pursuit(PursuitScenario),
}

/// A fully determined starting configuration and objective order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Scenario {
    pub id: u32,
    pub grid: u8,
    pub seed: u64,
    pub kind: ScenarioKind,
}

impl Scenario {
    pub fn sequence(&self) -> &[usize] {
        match &self.kind {
            ScenarioKind::Foraging(l) => &l.sequence,
            ScenarioKind::Pursuit(p) => &p.sequence,
        }
    }
}

pub fn presample_scenarios(config: &ExperimentConfig, side: u8) -> Result<Vec<Scenario>, ExperimentError> {
    config.check_grid(side)?;
    let foraging = match config.environment {
        Environment::Foraging => Some(Foraging::new(config.foraging_config(side))?),
        Environment::Pursuit => None,
    };
    let pursuit = config.pursuit_config(side);
    Ok((0..config.episodes as u32)
        .map(|id| {
            let seed = config.scenario_seed(side, id);
            let kind = match &foraging {
                Some(env) => ScenarioKind::Foraging(env.sample_layout(seed)),
                None => ScenarioKind::Pursuit(sample_scenario(seed, &pursuit)),
            };
            Scenario {
                id,
                grid: side,
                seed,
                kind,
            }
        })
        .collect())
}

/// Simulator side of an episode.
pub trait World {
    type State: Clone + PartialEq;

    fn initial(&self) -> Self::State;
    fn sequence(&self) -> &[usize];
    /// Next state and the goals finished by this step.
    fn step(&self, state: &Self::State, joint: usize) -> Result<(Self::State, Vec<usize>), ExperimentError>;
}

pub struct ForagingWorld<'a> {
    pub env: &'a Foraging,
    pub layout: &'a ForagingLayout,
}

impl World for ForagingWorld<'_> {
    type State = ForagingState;

    fn initial(&self) -> ForagingState {
        self.env.initial_state(self.layout)
    }

    fn sequence(&self) -> &[usize] {
        &self.layout.sequence
    }

    fn step(&self, state: &ForagingState, joint: usize) -> Result<(ForagingState, Vec<usize>), ExperimentError> {
        let (next, events) = self.env.step(state, joint)?;
        Ok((next, events.iter().map(|e| e.food).collect()))
    }
}

pub struct PursuitWorld<'a> {
    pub config: &'a PursuitConfig,
    pub scenario: &'a PursuitScenario,
}

impl World for PursuitWorld<'_> {
    type State = PursuitState;

    fn initial(&self) -> PursuitState {
        self.scenario.initial_state()
    }

    fn sequence(&self) -> &[usize] {
        &self.scenario.sequence
    }

    fn step(&self, state: &PursuitState, joint: usize) -> Result<(PursuitState, Vec<usize>), ExperimentError> {
        let (next, events) = pursuit_step(state, joint, self.config)?;
        Ok((next, events.iter().map(|e| e.prey).collect()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EpisodeEvent {
    /// One tick: actions taken and the follower's declaration afterwards.
    Step { t: u32, leader: u8, follower: u8, declared: u8 },
    /// The current objective was finished.
    Completed { t: u32, goal: u8 },
    /// A goal other than the current objective was finished.
    Incidental { t: u32, goal: u8 },
    /// The team entered a loop it can never leave; the clock runs out.
    Stalled { t: u32 },
}

/// Outcome of one episode.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Episode {
    pub success: bool,
    pub total_steps: u32,
    /// Steps to stable inference per objective finished in turn.
    pub inference_steps: Vec<u32>,
    pub never_inferred: Vec<bool>,
    /// Length of each objective segment.
    pub segment_steps: Vec<u32>,
    pub events: Vec<EpisodeEvent>,
}

/// Detects provably endless episodes.
///
/// While the objective and the declaration stay fixed, both agents act as
/// pure functions of the state, so a repeated state starts a cycle that
/// replays forever. The declaration then never moves if, over one lap, the
/// declared goal gained at least as much log-likelihood as every rival.
struct LoopWatch<S> {
    seen: Vec<(S, Vec<f64>)>,
    goals: Vec<usize>,
    total: Vec<f64>,
}

impl<S> Default for LoopWatch<S> {
    fn default() -> Self {
        LoopWatch {
            seen: Vec::new(),
            goals: Vec::new(),
            total: Vec::new(),
        }
    }
}

impl<S: Clone + PartialEq> LoopWatch<S> {
    fn reset(&mut self) {
        self.seen.clear();
        self.goals.clear();
        self.total.clear();
    }

    fn observe(&mut self, state: &S, goals: &[usize], lik: &[f64]) {
        if self.goals != goals {
            self.reset();
            self.goals.extend_from_slice(goals);
            self.total.resize(goals.len(), 0.0);
        }
        self.seen.push((state.clone(), self.total.clone()));
        for (acc, l) in self.total.iter_mut().zip(lik) {
            *acc += libm::log(*l);
        }
    }

    fn closes(&self, next: &S, declared: usize) -> bool {
        let Some((_, start)) = self.seen.iter().find(|(s, _)| s == next) else {
            return false;
        };
        let d = self.goals.iter().position(|&g| g == declared).expect("declared goal is tracked");
        let gain = |i: usize| self.total[i] - start[i];
        (0..self.goals.len()).all(|i| gain(i) <= gain(d))
    }
}

/// Steps the team until every objective is done or `step_limit` fires.
///
/// Each tick the leader acts, the follower acts on its current belief, the
/// world steps, and the follower updates on the pre-step state and the
/// leader's action. Finishing the current objective resets the follower to
/// a uniform belief over the open goals; goals finished out of turn are
/// dropped from the belief and skipped in the sequence.
///
/// A loop the team can never leave ends the episode at once with the clock
/// run out, which yields the same record a full run would.
pub fn run_episode<W, P>(
    world: &W,
    planner: &mut P,
    mode: LeaderMode,
    step_limit: u32,
    beta_infer: f64,
) -> Result<Episode, ExperimentError>
where
    W: World,
    P: TeamPlanner<State = W::State, Error = ExperimentError>,
{
    play(world, planner, mode, step_limit, beta_infer, true)
}

fn play<W, P>(
    world: &W,
    planner: &mut P,
    mode: LeaderMode,
    step_limit: u32,
    beta_infer: f64,
    detect_loops: bool,
) -> Result<Episode, ExperimentError>
where
    W: World,
    P: TeamPlanner<State = W::State, Error = ExperimentError>,
{
    let mut state = world.initial();
    let nf = planner.n_follower_actions();
    let mut leader = LeaderAgent::new(mode, world.sequence().to_vec());
    let mut follower = FollowerAgent::new(planner.remaining(&state), beta_infer);
    let mut out = Episode::default();
    let mut log = Vec::new();
    let mut segment_start = 0;
    let mut watch = LoopWatch::default();
    let mut t = 0;
    while !leader.finished() && t < step_limit {
        let goal = leader.current_goal().expect("not finished");
        let a_l = leader.act(planner, &state)?;
        let before = follower.declared();
        let a_f = follower.act(planner, &state)?;
        let (next, completed) = world.step(&state, a_l * nf + a_f)?;
        follower.update(planner, &state, a_l)?;
        t += 1;
        let declared = follower.declared();
        log.push(declared);
        out.events.push(EpisodeEvent::Step {
            t,
            leader: a_l as u8,
            follower: a_f as u8,
            declared: declared as u8,
        });
        if !completed.is_empty() {
            let hit = leader.record_completions(&completed);
            for &g in completed.iter().filter(|&&g| g != goal) {
                out.events.push(EpisodeEvent::Incidental { t, goal: g as u8 });
                if !hit {
                    follower.drop_goal(g);
                }
            }
            if hit {
                let stable = steps_to_stable_inference(&log, goal);
                out.inference_steps.push(stable.steps as u32);
                out.never_inferred.push(stable.never_inferred);
                out.segment_steps.push(t - segment_start);
                out.events.push(EpisodeEvent::Completed { t, goal: goal as u8 });
                segment_start = t;
                log.clear();
                if !leader.finished() {
                    follower.reset(planner.remaining(&next));
                }
            }
        }
        if !completed.is_empty() || declared != before {
            watch.reset();
        } else if detect_loops {
            watch.observe(&state, follower.posterior().goals(), follower.last_likelihoods());
            if watch.closes(&next, declared) {
                out.events.push(EpisodeEvent::Stalled { t });
                t = step_limit;
                break;
            }
        }
        state = next;
    }
    out.success = leader.finished();
    out.total_steps = t;
    Ok(out)
}

/// One row of the dataset.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EpisodeRecord {
    pub scenario_id: u32,
    pub grid: u8,
    pub condition: Condition,
    pub episode: Episode,
}

impl EpisodeRecord {
    /// Mean steps to stable inference over the finished objectives.
    pub fn mean_inference(&self) -> Option<f64> {
        let s = &self.episode.inference_steps;
        (!s.is_empty()).then(|| s.iter().map(|&x| x as f64).sum::<f64>() / s.len() as f64)
    }

    pub fn never_inferred_count(&self) -> usize {
        self.episode.never_inferred.iter().filter(|&&b| b).count()
    }
}

/// A scenario dropped from every condition.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Exclusion {
    pub grid: u8,
    pub scenario_id: u32,
    pub condition: Condition,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub environment: Environment,
    /// Ordered by grid (config order), condition (config order), scenario id.
    pub records: Vec<EpisodeRecord>,
    pub exclusions: Vec<Exclusion>,
}

/// Solved models for one grid.
#[derive(Debug, Clone)]
pub enum Planner {
    Foraging(ForagingPlanner),
    Pursuit(PursuitPlanner),
}

/// Solved value tables of one grid, as stored between runs.
#[derive(Debug, Clone, PartialEq)]
pub enum PlannerValues {
    Foraging(Vec<MaskValues>),
    Pursuit(Vec<f64>),
}

impl Planner {
    /// Environment for `side`; pursuit solves its joint model here, foraging
    /// solves lazily.
    pub fn new(config: &ExperimentConfig, side: u8) -> Result<Self, ExperimentError> {
        config.check_grid(side)?;
        Ok(match config.environment {
            Environment::Foraging => Planner::Foraging(ForagingPlanner::new(
                Foraging::new(config.foraging_config(side))?,
                config.params(),
            )),
            Environment::Pursuit => {
                Planner::Pursuit(PursuitPlanner::new(config.pursuit_config(side), config.params(), config.allow_large)?)
            }
        })
    }

    /// Environment for `side` with values from an earlier solve.
    pub fn with_values(config: &ExperimentConfig, side: u8, values: PlannerValues) -> Result<Self, ExperimentError> {
        config.check_grid(side)?;
        Ok(match (config.environment, values) {
            (Environment::Foraging, PlannerValues::Foraging(v)) => {
                let mut p = ForagingPlanner::new(Foraging::new(config.foraging_config(side))?, config.params());
                p.import(v)?;
                Planner::Foraging(p)
            }
            (Environment::Pursuit, PlannerValues::Pursuit(v)) => Planner::Pursuit(PursuitPlanner::with_values(
                config.pursuit_config(side),
                config.params(),
                config.allow_large,
                v,
            )?),
            _ => return Err(ExperimentError::Cache("value tables belong to another environment")),
        })
    }

    pub fn values(&self) -> PlannerValues {
        match self {
            Planner::Foraging(p) => PlannerValues::Foraging(p.export()),
            Planner::Pursuit(p) => PlannerValues::Pursuit(p.values().to_vec()),
        }
    }

    /// Solves every model the scenarios reach when objectives are finished
    /// in order. Out-of-turn completions are solved when they happen.
    pub fn prepare(&mut self, scenarios: &[Scenario], conditions: &[Condition]) -> Result<(), ExperimentError> {
        let Planner::Foraging(p) = self else {
            return Ok(());
        };
        let legible = conditions.contains(&Condition::Legible);
        for sc in scenarios {
            let ScenarioKind::Foraging(layout) = &sc.kind else {
                return Err(ExperimentError::Config(String::from("scenario does not match the environment")));
            };
            let mut mask = layout.food_mask();
            for &target in &layout.sequence {
                p.ensure_mask(mask)?;
                if legible {
                    p.ensure_legible(mask, target)?;
                }
                mask &= !(1 << target);
            }
        }
        Ok(())
    }

    pub fn run(&mut self, config: &ExperimentConfig, scenario: &Scenario, condition: Condition) -> Result<Episode, ExperimentError> {
        let mode = condition.mode();
        match (self, &scenario.kind) {
            (Planner::Foraging(p), ScenarioKind::Foraging(layout)) => {
                let env = p.env().clone();
                let world = ForagingWorld { env: &env, layout };
                run_episode(&world, p, mode, config.step_limit, config.beta_infer)
            }
            (Planner::Pursuit(p), ScenarioKind::Pursuit(sc)) => {
                let cfg = p.config().clone();
                let world = PursuitWorld {
                    config: &cfg,
                    scenario: sc,
                };
                run_episode(&world, p, mode, config.step_limit, config.beta_infer)
            }
            _ => Err(ExperimentError::Config(String::from("scenario does not match the environment"))),
        }
    }
}

/// Runs every condition on one grid and applies paired exclusion.
pub fn run_grid(
    config: &ExperimentConfig,
    scenarios: &[Scenario],
    planner: &mut Planner,
) -> (Vec<EpisodeRecord>, Vec<Exclusion>) {
    let mut records = Vec::new();
    let mut exclusions = Vec::new();
    for &condition in &config.conditions {
        for sc in scenarios {
            match planner.run(config, sc, condition) {
                Ok(episode) => records.push(EpisodeRecord {
                    scenario_id: sc.id,
                    grid: sc.grid,
                    condition,
                    episode,
                }),
                Err(e) => exclusions.push(Exclusion {
                    grid: sc.grid,
                    scenario_id: sc.id,
                    condition,
                    reason: format!("{e}"),
                }),
            }
        }
    }
    let dropped: BTreeSet<u32> = exclusions.iter().map(|e| e.scenario_id).collect();
    records.retain(|r| !dropped.contains(&r.scenario_id));
    (records, exclusions)
}

/// Full grid × condition × scenario sweep.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Dataset, ExperimentError> {
    config.validate()?;
    let mut records = Vec::new();
    let mut exclusions = Vec::new();
    for &side in &config.grid_sizes {
        let scenarios = presample_scenarios(config, side)?;
        let mut planner = Planner::new(config, side)?;
        let (r, e) = run_grid(config, &scenarios, &mut planner);
        records.extend(r);
        exclusions.extend(e);
    }
    Ok(Dataset {
        environment: config.environment,
        records,
        exclusions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(env: Environment, side: u8, episodes: usize) -> ExperimentConfig {
        ExperimentConfig {
            grid_sizes: alloc::vec![side],
            episodes,
            master_seed: 7,
            ..ExperimentConfig::default_for(env)
        }
    }

    #[test]
    fn scenarios_are_deterministic_and_distinct() {
        let cfg = small(Environment::Foraging, 6, 250);
        let a = presample_scenarios(&cfg, 6).unwrap();
        assert_eq!(a, presample_scenarios(&cfg, 6).unwrap());
        let seeds: BTreeSet<u64> = a.iter().map(|s| s.seed).collect();
        assert_eq!(seeds.len(), 250);
        assert!(matches!(presample_scenarios(&cfg, 9), Err(ExperimentError::UnsupportedGrid(9))));
    }

    #[test]
    fn config_validation() {
        let mut cfg = small(Environment::Foraging, 5, 1);
        cfg.grid_sizes.clear();
        assert!(matches!(cfg.validate(), Err(ExperimentError::Config(_))));
        assert!(run_experiment(&cfg).is_err());
        let cfg = small(Environment::Pursuit, 15, 1);
        assert!(matches!(cfg.validate(), Err(ExperimentError::Pursuit(PursuitError::StateSpaceCap { .. }))));
    }

    #[test]
    fn forced_timeout() {
        let mut cfg = small(Environment::Foraging, 5, 1);
        cfg.step_limit = 1;
        let sc = presample_scenarios(&cfg, 5).unwrap();
        let mut planner = Planner::new(&cfg, 5).unwrap();
        for cond in Condition::ALL {
            let ep = planner.run(&cfg, &sc[0], cond).unwrap();
            assert!(!ep.success);
            assert_eq!(ep.total_steps, 1);
        }
    }

    #[test]
    fn small_foraging_sweep() {
        let cfg = small(Environment::Foraging, 5, 6);
        let data = run_experiment(&cfg).unwrap();
        assert_eq!(data.records.len(), 12);
        assert!(data.exclusions.is_empty());
        for r in &data.records {
            let ep = &r.episode;
            assert!(ep.total_steps <= 600);
            assert_eq!(ep.inference_steps.len(), ep.segment_steps.len());
            if ep.success {
                assert_eq!(ep.segment_steps.iter().sum::<u32>(), ep.total_steps);
            } else {
                assert!(matches!(ep.events.last(), Some(EpisodeEvent::Stalled { .. })));
                assert_eq!(ep.total_steps, 600);
            }
        }
        assert!(data.records.iter().any(|r| r.condition == Condition::Legible && r.episode.success));
        assert_eq!(data, run_experiment(&cfg).unwrap());
    }

    #[test]
    fn loop_shortcut_matches_full_run() {
        let cfg = small(Environment::Foraging, 5, 40);
        let sc = presample_scenarios(&cfg, 5).unwrap();
        let mut planner = Planner::new(&cfg, 5).unwrap();
        planner.prepare(&sc, &cfg.conditions).unwrap();
        let Planner::Foraging(p) = &mut planner else { unreachable!() };
        let env = p.env().clone();
        let mut stalled = 0;
        for s in &sc {
            let ScenarioKind::Foraging(layout) = &s.kind else { unreachable!() };
            let world = ForagingWorld { env: &env, layout };
            for cond in Condition::ALL {
                let fast = play(&world, p, cond.mode(), cfg.step_limit, cfg.beta_infer, true).unwrap();
                let full = play(&world, p, cond.mode(), cfg.step_limit, cfg.beta_infer, false).unwrap();
                stalled += usize::from(matches!(fast.events.last(), Some(EpisodeEvent::Stalled { .. })));
                assert_eq!(fast.success, full.success);
                assert_eq!(fast.total_steps, full.total_steps);
                assert_eq!(fast.inference_steps, full.inference_steps);
                assert_eq!(fast.never_inferred, full.never_inferred);
                assert_eq!(fast.segment_steps, full.segment_steps);
            }
        }
        assert!(stalled > 0);
    }
}
