//! The single-episode crafting MDP and the depth-n task sampler.
//!
//! A state holds the goal, the table of selectable entities and the current
//! selection. An action picks a table slot. Picking with nothing selected
//! selects; picking with something selected attempts the combination, which
//! always clears the selection. Created entities are appended to the table
//! and nothing is ever consumed.

use alloc::vec::Vec;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::recipes::{EntityId, Recipe, RecipeBook, RecipeSplit};
use crate::rng;

/// Rejection budget of [`sample_task`].
pub const DEFAULT_MAX_ATTEMPTS: usize = 10_000;

const RESET_STREAM: u64 = 0x7265_7365_74;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnvError {
    #[error("episode is already done")]
    EpisodeDone,
    #[error("slot {slot} out of range for a table of {len}")]
    InvalidSlot { slot: usize, len: usize },
    #[error("no depth-{depth} task with {distractors} distractors found after {attempts} attempts")]
    SamplingExhausted {
        depth: usize,
        distractors: usize,
        attempts: usize,
    },
    #[error("depth must be at least 1")]
    ZeroDepth,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Test,
}

/// One sampled episode definition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub goal: EntityId,
    pub table_init: Vec<EntityId>,
    pub depth: usize,
    pub num_distractors: usize,
    /// Recipes in execution order; the last one produces the goal.
    pub intended_tree: Vec<Recipe>,
    pub partition: Partition,
    pub seed: u64,
}

impl TaskSpec {
    /// Results of every tree recipe except the last.
    pub fn intermediates(&self) -> Vec<EntityId> {
        let n = self.intended_tree.len().saturating_sub(1);
        self.intended_tree[..n].iter().map(|r| r.result).collect()
    }

    pub fn final_recipe(&self) -> Option<&Recipe> {
        self.intended_tree.last()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Action {
    pub slot: usize,
}

impl Action {
    pub fn new(slot: usize) -> Self {
        Action { slot }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardMode {
    Sparse,
    Shaped,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub mode: RewardMode,
    pub success_reward: f64,
    pub invalid_combo_penalty: f64,
    pub irrelevant_creation_penalty: f64,
    pub intermediate_reward: f64,
}

impl RewardConfig {
    pub fn sparse() -> Self {
        RewardConfig {
            mode: RewardMode::Sparse,
            ..Self::shaped(1)
        }
    }

    /// Shaped defaults for a depth-`depth` task.
    pub fn shaped(depth: usize) -> Self {
        RewardConfig {
            mode: RewardMode::Shaped,
            success_reward: 1.0,
            invalid_combo_penalty: -0.1,
            irrelevant_creation_penalty: -0.1,
            intermediate_reward: 0.5 / depth.max(1) as f64,
        }
    }
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self::sparse()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EnvState {
    pub goal: EntityId,
    pub table: Vec<EntityId>,
    pub selected: EntityId,
    pub steps_taken: usize,
    pub done: bool,
    pub success: bool,
    /// Intended intermediates, used by shaped rewards.
    pub intermediates: Vec<EntityId>,
}

impl EnvState {
    /// Stable 64-bit digest of the observable state.
    pub fn digest(&self) -> u64 {
        let mut h = rng::splitmix64(u64::from(self.goal.index() as u32));
        let mut feed = |v: u64| h = rng::splitmix64(h ^ v);
        feed(self.selected.index() as u64);
        feed(self.steps_taken as u64);
        feed(u64::from(self.done) | (u64::from(self.success) << 1));
        for e in &self.table {
            feed(e.index() as u64);
        }
        h
    }

    fn contains(&self, e: EntityId) -> bool {
        self.table.contains(&e)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    Selected {
        entity: EntityId,
    },
    Combined {
        pair: (EntityId, EntityId),
        results: Vec<EntityId>,
    },
    InvalidCombo {
        pair: (EntityId, EntityId),
    },
    GoalReached,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub state: EnvState,
    pub reward: f64,
    pub events: Vec<Event>,
}

/// Reward and events of one in-place transition.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub reward: f64,
    pub events: Vec<Event>,
}

/// Two combinations per intended recipe plus one spare combination attempt.
pub fn default_max_steps(depth: usize) -> usize {
    2 * (depth + 1)
}

/// Initial state of `task`; the table order is a seeded shuffle of
/// `table_init`.
pub fn reset(task: &TaskSpec) -> EnvState {
    let mut table = task.table_init.clone();
    let mut rng = rng::seeded(rng::mix(task.seed, RESET_STREAM));
    table.shuffle(&mut rng);
    EnvState {
        goal: task.goal,
        table,
        selected: EntityId::EMPTY,
        steps_taken: 0,
        done: false,
        success: false,
        intermediates: task.intermediates(),
    }
}

/// Pure transition function.
pub fn step(
    state: &EnvState,
    action: Action,
    book: &RecipeBook,
    cfg: &RewardConfig,
    max_steps: usize,
) -> Result<StepOutcome, EnvError> {
    let mut next = state.clone();
    let Transition { reward, events } = step_in_place(&mut next, action, book, cfg, max_steps)?;
    Ok(StepOutcome {
        state: next,
        reward,
        events,
    })
}

/// [`step`] mutating `state` directly. On error the state is untouched.
pub fn step_in_place(
    state: &mut EnvState,
    action: Action,
    book: &RecipeBook,
    cfg: &RewardConfig,
    max_steps: usize,
) -> Result<Transition, EnvError> {
    if state.done {
        return Err(EnvError::EpisodeDone);
    }
    let len = state.table.len();
    let chosen = *state.table.get(action.slot).ok_or(EnvError::InvalidSlot {
        slot: action.slot,
        len,
    })?;
    let shaped = cfg.mode == RewardMode::Shaped;
    let mut reward = 0.0;
    let mut events = Vec::with_capacity(2);
    state.steps_taken += 1;

    if state.selected.is_empty() {
        state.selected = chosen;
        events.push(Event::Selected { entity: chosen });
    } else {
        let first = state.selected;
        state.selected = EntityId::EMPTY;
        let results = book.results_of(first, chosen);
        if results.is_empty() {
            if shaped {
                reward += cfg.invalid_combo_penalty;
            }
            events.push(Event::InvalidCombo {
                pair: (first, chosen),
            });
        } else {
            let mut reached = false;
            for &r in results {
                if state.contains(r) {
                    continue;
                }
                state.table.push(r);
                if r == state.goal {
                    reached = true;
                } else if shaped {
                    if state.intermediates.contains(&r) {
                        reward += cfg.intermediate_reward;
                    } else {
                        reward += cfg.irrelevant_creation_penalty;
                    }
                }
            }
            events.push(Event::Combined {
                pair: (first, chosen),
                results: results.to_vec(),
            });
            if reached {
                reward += cfg.success_reward;
                state.done = true;
                state.success = true;
                events.push(Event::GoalReached);
            }
        }
    }
    if state.steps_taken >= max_steps {
        state.done = true;
    }
    Ok(Transition { reward, events })
}

/// Cached recipe pools for repeated sampling from one partition.
#[derive(Clone, Debug)]
pub struct TaskSampler {
    partition: Partition,
    /// Recipes allowed to produce the goal.
    finals: Vec<usize>,
    /// Per entity, recipes allowed for expanding it into an intermediate.
    expansions: Vec<Vec<usize>>,
    pub max_attempts: usize,
}

impl TaskSampler {
    /// Train tasks draw every tree recipe from the train split. Test tasks
    /// need a test recipe as the final step; deeper expansions may use any
    /// recipe.
    pub fn new(book: &RecipeBook, split: &RecipeSplit, partition: Partition) -> Self {
        let n = book.recipes().len();
        let finals: Vec<usize> = match partition {
            Partition::Train => (0..n).filter(|&i| split.is_train(i)).collect(),
            Partition::Test => (0..n).filter(|&i| split.is_test(i)).collect(),
        };
        let mut expansions = alloc::vec![Vec::new(); book.num_entities()];
        for (i, r) in book.recipes().iter().enumerate() {
            if partition == Partition::Test || split.is_train(i) {
                expansions[r.result.index()].push(i);
            }
        }
        TaskSampler {
            partition,
            finals,
            expansions,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
        }
    }

    pub fn partition(&self) -> Partition {
        self.partition
    }

    pub fn sample(
        &self,
        book: &RecipeBook,
        depth: usize,
        num_distractors: usize,
        seed: u64,
    ) -> Result<TaskSpec, EnvError> {
        if depth == 0 {
            return Err(EnvError::ZeroDepth);
        }
        let exhausted = EnvError::SamplingExhausted {
            depth,
            distractors: num_distractors,
            attempts: self.max_attempts,
        };
        if self.finals.is_empty() {
            return Err(exhausted);
        }
        let mut rng = rng::seeded(seed);
        for _ in 0..self.max_attempts {
            if let Some(task) = self.attempt(book, &mut rng, depth, num_distractors, seed) {
                return Ok(task);
            }
        }
        Err(exhausted)
    }

    fn attempt<R: Rng>(
        &self,
        book: &RecipeBook,
        rng: &mut R,
        depth: usize,
        num_distractors: usize,
        seed: u64,
    ) -> Option<TaskSpec> {
        let recipes = book.recipes();
        let last = recipes[*self.finals.choose(rng)?];
        let goal = last.result;
        if last.uses(goal) {
            return None;
        }
        // Tree in the order recipes were added; reversed at the end.
        let mut tree = alloc::vec![last];
        let mut intermediates: Vec<EntityId> = Vec::new();
        let mut leaves: Vec<EntityId> = Vec::new();
        push_unique(&mut leaves, last.ingredients.0);
        push_unique(&mut leaves, last.ingredients.1);

        while tree.len() < depth {
            let expandable: Vec<EntityId> = leaves
                .iter()
                .copied()
                .filter(|e| !self.expansions[e.index()].is_empty())
                .collect();
            let leaf = *expandable.choose(rng)?;
            let recipe = recipes[*self.expansions[leaf.index()].choose(rng)?];
            let (a, b) = recipe.ingredients;
            if [a, b]
                .iter()
                .any(|&x| x == goal || x == leaf || intermediates.contains(&x))
            {
                return None;
            }
            // A shortcut straight to the goal would break the depth label.
            if book.results_of(a, b).contains(&goal) {
                return None;
            }
            intermediates.push(leaf);
            leaves.retain(|&e| e != leaf);
            push_unique(&mut leaves, a);
            push_unique(&mut leaves, b);
            tree.push(recipe);
        }

        if depth > 1 {
            for (i, &x) in leaves.iter().enumerate() {
                for &y in &leaves[i..] {
                    if book.results_of(x, y).contains(&goal) {
                        return None;
                    }
                }
            }
        }

        let mut table = leaves.clone();
        let mut pool: Vec<EntityId> = book
            .entities()
            .iter()
            .map(|e| e.id)
            .filter(|&e| e != goal && !intermediates.contains(&e) && !leaves.contains(&e))
            .collect();
        let partners = book.producers(goal);
        let mut added = 0;
        while added < num_distractors {
            if pool.is_empty() {
                return None;
            }
            let cand = pool.swap_remove(rng.random_range(0..pool.len()));
            let completes_goal = partners.iter().any(|&(x, y)| {
                (x == cand && (y == cand || table.contains(&y)))
                    || (y == cand && table.contains(&x))
            });
            if completes_goal {
                continue;
            }
            table.push(cand);
            added += 1;
        }

        tree.reverse();
        Some(TaskSpec {
            goal,
            table_init: table,
            depth,
            num_distractors,
            intended_tree: tree,
            partition: self.partition,
            seed,
        })
    }
}

fn push_unique(v: &mut Vec<EntityId>, e: EntityId) {
    if !v.contains(&e) {
        v.push(e);
    }
}

/// Samples one task; deterministic in every argument.
pub fn sample_task(
    book: &RecipeBook,
    split: &RecipeSplit,
    partition: Partition,
    depth: usize,
    num_distractors: usize,
    seed: u64,
) -> Result<TaskSpec, EnvError> {
    TaskSampler::new(book, split, partition).sample(book, depth, num_distractors, seed)
}
