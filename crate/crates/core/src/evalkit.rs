//! Evaluation harness: a breadth-first oracle solver, baseline policies and
//! batched greedy rollouts summarized as an [`EvalReport`].

use alloc::boxed::Box;
use alloc::collections::{BTreeSet, VecDeque};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{argmax, AgentError, AgentNet, Inputs, KgMode};
use crate::env::{self, Action, EnvError, EnvState, Event, Partition, RewardConfig, TaskSampler, TaskSpec};
use crate::kglink::{ComplExModel, Relation};
use crate::recipes::{EntityId, Recipe, RecipeBook, RecipeSplit};
use crate::rng;

/// Default number of evaluation tasks per configuration.
pub const DEFAULT_EVAL_TASKS: usize = 500;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("policy failed: {0}")]
    Agent(Box<AgentError>),
    #[error("num_tasks must be at least 1")]
    NoTasks,
    #[error("task {task}: final recipe is not a test recipe")]
    Isolation { task: usize },
    #[error("policy returned {got} actions for {expected} states")]
    ActionCount { expected: usize, got: usize },
}

impl From<AgentError> for EvalError {
    fn from(e: AgentError) -> Self {
        EvalError::Agent(Box::new(e))
    }
}

/// Shortest action sequence that reaches the goal from `start` within
/// `max_steps` total steps, found by breadth-first search. States that hold
/// the same entity set and selection are expanded once.
pub fn oracle_plan(start: &EnvState, book: &RecipeBook, max_steps: usize) -> Option<Vec<Action>> {
    if start.success {
        return Some(Vec::new());
    }
    if start.done {
        return None;
    }
    let cfg = RewardConfig::sparse();
    let key = |s: &EnvState| {
        let mut t = s.table.clone();
        t.sort();
        (t, s.selected)
    };
    let mut seen = BTreeSet::new();
    seen.insert(key(start));
    let mut queue: VecDeque<(EnvState, Vec<Action>)> = VecDeque::new();
    queue.push_back((start.clone(), Vec::new()));
    while let Some((state, path)) = queue.pop_front() {
        for slot in 0..state.table.len() {
            let a = Action::new(slot);
            let next = env::step(&state, a, book, &cfg, max_steps).ok()?.state;
            if next.success {
                let mut p = path.clone();
                p.push(a);
                return Some(p);
            }
            if next.done || !seen.insert(key(&next)) {
                continue;
            }
            let mut p = path.clone();
            p.push(a);
            queue.push_back((next, p));
        }
    }
    None
}

/// [`oracle_plan`] from the task's initial state with its default budget.
pub fn oracle_solve(task: &TaskSpec, book: &RecipeBook) -> Option<Vec<Action>> {
    oracle_plan(&env::reset(task), book, env::default_max_steps(task.depth))
}

/// Exact probability that a uniformly random policy succeeds from `state`,
/// by enumerating every action sequence.
pub fn random_success_probability(state: &EnvState, book: &RecipeBook, max_steps: usize) -> f64 {
    if state.success {
        return 1.0;
    }
    if state.done {
        return 0.0;
    }
    let cfg = RewardConfig::sparse();
    let n = state.table.len();
    let mut total = 0.0;
    for slot in 0..n {
        let next = env::step(state, Action::new(slot), book, &cfg, max_steps)
            .expect("slot in range of a live state")
            .state;
        total += random_success_probability(&next, book, max_steps);
    }
    total / n as f64
}

/// A batch policy. States are never done.
pub trait Policy {
    fn label(&self) -> String;

    fn kg_mode(&self) -> Option<KgMode> {
        None
    }

    fn act_batch(&mut self, book: &RecipeBook, states: &[&EnvState]) -> Result<Vec<Action>, EvalError>;
}

/// Uniform over the current table slots.
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        RandomPolicy { rng: rng::seeded(seed) }
    }
}

impl Policy for RandomPolicy {
    fn label(&self) -> String {
        "random".to_string()
    }

    fn act_batch(&mut self, _: &RecipeBook, states: &[&EnvState]) -> Result<Vec<Action>, EvalError> {
        Ok(states
            .iter()
            .map(|s| Action::new(self.rng.random_range(0..s.table.len())))
            .collect())
    }
}

/// Follows a shortest plan replanned from each state.
pub struct OraclePolicy {
    pub max_steps: usize,
}

impl Policy for OraclePolicy {
    fn label(&self) -> String {
        "oracle".to_string()
    }

    fn act_batch(&mut self, book: &RecipeBook, states: &[&EnvState]) -> Result<Vec<Action>, EvalError> {
        Ok(states
            .iter()
            .map(|s| {
                oracle_plan(s, book, self.max_steps)
                    .and_then(|p| p.first().copied())
                    .unwrap_or(Action::new(0))
            })
            .collect())
    }
}

/// Picks the table entity with the highest sum of the selected relation
/// scores, ignoring learned attention entirely.
pub struct KgGreedyPolicy<'a> {
    pub model: &'a ComplExModel,
    pub mode: KgMode,
}

impl KgGreedyPolicy<'_> {
    pub fn scores(&self, state: &EnvState) -> Vec<f64> {
        let mut total = alloc::vec![0.0; state.table.len()];
        if self.mode.uses_combines_with() {
            let u = self.model.relation_scores(&state.table, Relation::CombinesWith, state.selected);
            total.iter_mut().zip(u).for_each(|(t, x)| *t += x);
        }
        if self.mode.uses_component_of() {
            let v = self.model.relation_scores(&state.table, Relation::ComponentOf, state.goal);
            total.iter_mut().zip(v).for_each(|(t, x)| *t += x);
        }
        total
    }
}

impl Policy for KgGreedyPolicy<'_> {
    fn label(&self) -> String {
        alloc::format!("kg-greedy:{}", self.mode.name())
    }

    fn kg_mode(&self) -> Option<KgMode> {
        Some(self.mode)
    }

    fn act_batch(&mut self, _: &RecipeBook, states: &[&EnvState]) -> Result<Vec<Action>, EvalError> {
        Ok(states.iter().map(|s| Action::new(argmax(&self.scores(s)))).collect())
    }
}

/// A trained agent, greedy by default.
pub struct TrainedPolicy<'a> {
    net: &'a AgentNet,
    inputs: Inputs<'a>,
    sampler: Option<ChaCha8Rng>,
}

impl<'a> TrainedPolicy<'a> {
    pub fn greedy(net: &'a AgentNet, inputs: Inputs<'a>) -> Self {
        TrainedPolicy {
            net,
            inputs,
            sampler: None,
        }
    }

    /// Samples actions from the policy instead of taking the argmax.
    pub fn sampling(net: &'a AgentNet, inputs: Inputs<'a>, seed: u64) -> Self {
        TrainedPolicy {
            net,
            inputs,
            sampler: Some(rng::seeded(seed)),
        }
    }
}

impl Policy for TrainedPolicy<'_> {
    fn label(&self) -> String {
        let how = if self.sampler.is_some() { "sampled" } else { "greedy" };
        alloc::format!("trained:{how}")
    }

    fn kg_mode(&self) -> Option<KgMode> {
        Some(self.inputs.mode)
    }

    fn act_batch(&mut self, _: &RecipeBook, states: &[&EnvState]) -> Result<Vec<Action>, EvalError> {
        let outs = self.net.forward_batch(states, &self.inputs)?;
        Ok(outs
            .iter()
            .map(|o| match &mut self.sampler {
                None => o.greedy(),
                Some(rng) => {
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    let mut pick = o.probs.len() - 1;
                    for (i, p) in o.probs.iter().enumerate() {
                        acc += p;
                        if u < acc {
                            pick = i;
                            break;
                        }
                    }
                    Action::new(pick)
                }
            })
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub partition: Partition,
    pub depth: usize,
    pub num_distractors: usize,
    pub num_tasks: usize,
    pub seed: u64,
    pub reward: RewardConfig,
    /// `None` uses [`env::default_max_steps`].
    pub max_steps: Option<usize>,
}

impl EvalConfig {
    pub fn new(partition: Partition, depth: usize, num_distractors: usize, num_tasks: usize, seed: u64) -> Self {
        EvalConfig {
            partition,
            depth,
            num_distractors,
            num_tasks,
            seed,
            reward: RewardConfig::sparse(),
            max_steps: None,
        }
    }

    pub fn max_steps(&self) -> usize {
        self.max_steps.unwrap_or_else(|| env::default_max_steps(self.depth))
    }

    /// Seed of task `i`.
    pub fn task_seed(&self, i: usize) -> u64 {
        rng::mix(self.seed, i as u64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub index: usize,
    pub seed: u64,
    pub goal: EntityId,
    pub final_recipe: Recipe,
    pub success: bool,
    pub steps: usize,
    pub episode_return: f64,
    /// Some combination paired an entity with itself although the task's
    /// intended recipes contain no self-pair.
    pub repeated_selection: bool,
    pub actions: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub policy: String,
    pub partition: Partition,
    pub depth: usize,
    pub num_distractors: usize,
    pub kg_mode: Option<KgMode>,
    pub num_tasks: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_steps: f64,
    pub mean_return: f64,
    pub repeated_selection_tasks: usize,
    pub seed: u64,
    pub max_steps: usize,
    pub records: Vec<TaskRecord>,
}

/// Samples the configured tasks and rolls the policy out on all of them in
/// lockstep. Test-partition tasks are checked to end in a test recipe.
pub fn evaluate(
    policy: &mut dyn Policy,
    book: &RecipeBook,
    split: &RecipeSplit,
    cfg: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    if cfg.num_tasks == 0 {
        return Err(EvalError::NoTasks);
    }
    let sampler = TaskSampler::new(book, split, cfg.partition);
    let max_steps = cfg.max_steps();
    let mut tasks = Vec::with_capacity(cfg.num_tasks);
    for i in 0..cfg.num_tasks {
        let task = sampler.sample(book, cfg.depth, cfg.num_distractors, cfg.task_seed(i))?;
        if cfg.partition == Partition::Test {
            let last = task.final_recipe().expect("sampled trees are nonempty");
            let isolated = book.recipe_index(last).is_some_and(|r| split.is_test(r));
            if !isolated {
                return Err(EvalError::Isolation { task: i });
            }
        }
        tasks.push(task);
    }

    let mut states: Vec<EnvState> = tasks.iter().map(env::reset).collect();
    let mut returns = alloc::vec![0.0; tasks.len()];
    let mut repeated = alloc::vec![false; tasks.len()];
    let mut actions: Vec<Vec<usize>> = alloc::vec![Vec::new(); tasks.len()];
    loop {
        let live: Vec<usize> = (0..states.len()).filter(|&i| !states[i].done).collect();
        if live.is_empty() {
            break;
        }
        let view: Vec<&EnvState> = live.iter().map(|&i| &states[i]).collect();
        let chosen = policy.act_batch(book, &view)?;
        if chosen.len() != live.len() {
            return Err(EvalError::ActionCount {
                expected: live.len(),
                got: chosen.len(),
            });
        }
        for (&i, a) in live.iter().zip(chosen) {
            let out = env::step(&states[i], a, book, &cfg.reward, max_steps)?;
            returns[i] += out.reward;
            actions[i].push(a.slot);
            repeated[i] |= pairs_entity_with_itself(&out.events);
            states[i] = out.state;
        }
    }

    let records: Vec<TaskRecord> = tasks
        .iter()
        .enumerate()
        .map(|(i, t)| {
            TaskRecord::from_episode(i, t, &states[i], returns[i], repeated[i], core::mem::take(&mut actions[i]))
        })
        .collect();
    Ok(EvalReport::from_records(
        policy.label(),
        policy.kg_mode(),
        cfg,
        max_steps,
        records,
    ))
}

/// True when one of `events` combined (or tried to combine) an entity
/// with itself.
pub fn pairs_entity_with_itself(events: &[Event]) -> bool {
    events.iter().any(|e| match e {
        Event::Combined { pair, .. } | Event::InvalidCombo { pair } => pair.0 == pair.1,
        _ => false,
    })
}

impl TaskRecord {
    /// Record of a finished episode of `task`. `self_paired` says whether
    /// any step paired an entity with itself.
    pub fn from_episode(
        index: usize,
        task: &TaskSpec,
        last: &EnvState,
        episode_return: f64,
        self_paired: bool,
        actions: Vec<usize>,
    ) -> Self {
        TaskRecord {
            index,
            seed: task.seed,
            goal: task.goal,
            final_recipe: *task.final_recipe().expect("sampled trees are nonempty"),
            success: last.success,
            steps: last.steps_taken,
            episode_return,
            repeated_selection: self_paired && !task.intended_tree.iter().any(Recipe::is_self_pair),
            actions,
        }
    }
}

impl EvalReport {
    /// Aggregates `records`; rates of an empty report are zero.
    pub fn from_records(
        policy: String,
        kg_mode: Option<KgMode>,
        cfg: &EvalConfig,
        max_steps: usize,
        records: Vec<TaskRecord>,
    ) -> Self {
        let n = records.len();
        let per = |total: f64| if n == 0 { 0.0 } else { total / n as f64 };
        let successes = records.iter().filter(|r| r.success).count();
        EvalReport {
            policy,
            partition: cfg.partition,
            depth: cfg.depth,
            num_distractors: cfg.num_distractors,
            kg_mode,
            num_tasks: n,
            successes,
            success_rate: per(successes as f64),
            mean_steps: per(records.iter().map(|r| r.steps as f64).sum()),
            mean_return: per(records.iter().map(|r| r.episode_return).sum()),
            repeated_selection_tasks: records.iter().filter(|r| r.repeated_selection).count(),
            seed: cfg.seed,
            max_steps,
            records,
        }
    }
}
