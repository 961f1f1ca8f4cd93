//! Batched, auto-resetting environment runner.
//!
//! Env `i` draws its `k`-th task from seed `mix(mix(base_seed, i), k)`, so
//! its task sequence does not depend on the other envs or on how the batch
//! is scheduled. Terminal outcomes are reported and the env is immediately
//! reset; callers never observe a done state.

use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::env::{self, Action, EnvError, EnvState, Partition, RewardConfig, StepOutcome, TaskSampler, TaskSpec};
use crate::recipes::{RecipeBook, RecipeSplit};
use crate::rng;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VecEnvError {
    #[error("expected {expected} actions, got {got}")]
    WrongBatch { expected: usize, got: usize },
    #[error("env {env}: {source}")]
    Env { env: usize, source: EnvError },
    #[error("num_envs must be positive")]
    NoEnvs,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StreamConfig {
    pub partition: Partition,
    pub depth: usize,
    pub num_distractors: usize,
    pub base_seed: u64,
    pub reward: RewardConfig,
    /// `None` uses [`env::default_max_steps`].
    pub max_steps: Option<usize>,
}

impl StreamConfig {
    pub fn new(partition: Partition, depth: usize, num_distractors: usize, base_seed: u64) -> Self {
        StreamConfig {
            partition,
            depth,
            num_distractors,
            base_seed,
            reward: RewardConfig::sparse(),
            max_steps: None,
        }
    }

    pub fn max_steps(&self) -> usize {
        self.max_steps
            .unwrap_or_else(|| env::default_max_steps(self.depth))
    }
}

/// Deterministic per-env task generator.
#[derive(Clone, Debug)]
pub struct TaskStream {
    book: Arc<RecipeBook>,
    split: Arc<RecipeSplit>,
    sampler: Arc<TaskSampler>,
    cfg: StreamConfig,
}

impl TaskStream {
    pub fn new(book: Arc<RecipeBook>, split: Arc<RecipeSplit>, cfg: StreamConfig) -> Self {
        let sampler = Arc::new(TaskSampler::new(&book, &split, cfg.partition));
        TaskStream {
            book,
            split,
            sampler,
            cfg,
        }
    }

    pub fn task_seed(&self, env: usize, k: u64) -> u64 {
        rng::mix(rng::mix(self.cfg.base_seed, env as u64), k)
    }

    /// The `k`-th task of env `env`.
    pub fn task(&self, env: usize, k: u64) -> Result<TaskSpec, EnvError> {
        self.sampler.sample(
            &self.book,
            self.cfg.depth,
            self.cfg.num_distractors,
            self.task_seed(env, k),
        )
    }

    pub fn book(&self) -> &Arc<RecipeBook> {
        &self.book
    }

    pub fn split(&self) -> &Arc<RecipeSplit> {
        &self.split
    }

    pub fn config(&self) -> &StreamConfig {
        &self.cfg
    }
}

/// One env of a batch together with its position in its task stream.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvSlot {
    pub index: usize,
    pub episode: u64,
    pub task: TaskSpec,
    pub state: EnvState,
    pub episode_return: f64,
}

/// Outcome of one env in a batch step. `outcome.state` is the pre-reset
/// state, so `outcome.state.done` flags terminal steps.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchOutcome {
    pub outcome: StepOutcome,
    /// Undiscounted return of the episode that just ended.
    pub episode_return: Option<f64>,
}

impl BatchOutcome {
    pub fn terminal(&self) -> bool {
        self.outcome.state.done
    }

    pub fn success(&self) -> bool {
        self.outcome.state.success
    }
}

/// Everything a slot needs to advance, shared read-only across slots.
pub struct StepContext<'a> {
    pub stream: &'a TaskStream,
}

impl EnvSlot {
    fn fresh(ctx: &StepContext<'_>, index: usize, episode: u64) -> Result<Self, EnvError> {
        let task = ctx.stream.task(index, episode)?;
        let state = env::reset(&task);
        Ok(EnvSlot {
            index,
            episode,
            task,
            state,
            episode_return: 0.0,
        })
    }

    /// Steps this env once, resetting it to its next task on termination.
    pub fn advance(&mut self, action: Action, ctx: &StepContext<'_>) -> Result<BatchOutcome, EnvError> {
        let cfg = ctx.stream.config();
        let book: &RecipeBook = ctx.stream.book();
        let outcome = env::step(&self.state, action, book, &cfg.reward, cfg.max_steps())?;
        self.episode_return += outcome.reward;
        if outcome.state.done {
            let ret = self.episode_return;
            *self = EnvSlot::fresh(ctx, self.index, self.episode + 1)?;
            Ok(BatchOutcome {
                outcome,
                episode_return: Some(ret),
            })
        } else {
            self.state = outcome.state.clone();
            Ok(BatchOutcome {
                outcome,
                episode_return: None,
            })
        }
    }
}

/// A fixed-size batch of auto-resetting environments.
#[derive(Clone, Debug)]
pub struct BatchRunner {
    stream: TaskStream,
    slots: Vec<EnvSlot>,
    total_steps: u64,
}

impl BatchRunner {
    pub fn new(stream: TaskStream, num_envs: usize) -> Result<Self, VecEnvError> {
        if num_envs == 0 {
            return Err(VecEnvError::NoEnvs);
        }
        let slots = {
            let ctx = StepContext { stream: &stream };
            (0..num_envs)
                .map(|i| EnvSlot::fresh(&ctx, i, 0).map_err(|source| VecEnvError::Env { env: i, source }))
                .collect::<Result<Vec<_>, _>>()?
        };
        Ok(BatchRunner {
            stream,
            slots,
            total_steps: 0,
        })
    }

    pub fn num_envs(&self) -> usize {
        self.slots.len()
    }

    pub fn total_steps(&self) -> u64 {
        self.total_steps
    }

    pub fn stream(&self) -> &TaskStream {
        &self.stream
    }

    pub fn slots(&self) -> &[EnvSlot] {
        &self.slots
    }

    pub fn states(&self) -> impl Iterator<Item = &EnvState> {
        self.slots.iter().map(|s| &s.state)
    }

    /// Advances every env once, serially.
    pub fn batch_step(&mut self, actions: &[Action]) -> Result<Vec<BatchOutcome>, VecEnvError> {
        self.batch_step_with(actions, |slots, actions, ctx| {
            slots
                .iter_mut()
                .zip(actions)
                .map(|(slot, &a)| slot.advance(a, ctx))
                .collect()
        })
    }

    /// Like [`batch_step`](Self::batch_step) but lets `driver` schedule the
    /// per-env work (e.g. on a thread pool). Actions are validated up front,
    /// so a rejected batch leaves every env untouched.
    pub fn batch_step_with<F>(&mut self, actions: &[Action], driver: F) -> Result<Vec<BatchOutcome>, VecEnvError>
    where
        F: FnOnce(&mut [EnvSlot], &[Action], &StepContext<'_>) -> Vec<Result<BatchOutcome, EnvError>>,
    {
        if actions.len() != self.slots.len() {
            return Err(VecEnvError::WrongBatch {
                expected: self.slots.len(),
                got: actions.len(),
            });
        }
        for (slot, a) in self.slots.iter().zip(actions) {
            if a.slot >= slot.state.table.len() {
                return Err(VecEnvError::Env {
                    env: slot.index,
                    source: EnvError::InvalidSlot {
                        slot: a.slot,
                        len: slot.state.table.len(),
                    },
                });
            }
        }
        let ctx = StepContext {
            stream: &self.stream,
        };
        let results = driver(&mut self.slots, actions, &ctx);
        self.total_steps += actions.len() as u64;
        results
            .into_iter()
            .enumerate()
            .map(|(env, r)| r.map_err(|source| VecEnvError::Env { env, source }))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled;
    use crate::recipes::split_recipes;
    use rand::Rng;

    fn bundled_stream(n_distractors: usize, seed: u64) -> TaskStream {
        let book = Arc::new(bundled::example_book());
        let split = Arc::new(split_recipes(&book, &Default::default()).unwrap());
        TaskStream::new(book, split, StreamConfig::new(Partition::Train, 1, n_distractors, seed))
    }

    #[test]
    fn mud_single_env() {
        let book = Arc::new(
            RecipeBook::from_names(["water", "earth", "mud"], [("mud", ["water", "earth"])]).unwrap(),
        );
        let split = Arc::new(RecipeSplit::all_train(&book));
        let stream = TaskStream::new(book, split, StreamConfig::new(Partition::Train, 1, 0, 0));
        let mut runner = BatchRunner::new(stream, 1).unwrap();
        let a = runner.batch_step(&[Action::new(0)]).unwrap();
        assert!(!a[0].terminal());
        let b = runner.batch_step(&[Action::new(1)]).unwrap();
        assert!(b[0].terminal() && b[0].success());
        assert_eq!(b[0].outcome.reward, 1.0);
        assert_eq!(b[0].episode_return, Some(1.0));
        assert!(!runner.slots()[0].state.done);
        assert_eq!(runner.slots()[0].episode, 1);
    }

    #[test]
    fn rejects_bad_actions_atomically() {
        let mut runner = BatchRunner::new(bundled_stream(1, 0), 3).unwrap();
        let before: Vec<EnvSlot> = runner.slots().to_vec();
        let err = runner
            .batch_step(&[Action::new(0), Action::new(99), Action::new(0)])
            .unwrap_err();
        assert!(matches!(err, VecEnvError::Env { env: 1, .. }));
        assert_eq!(runner.slots(), &before[..]);
        assert!(matches!(
            runner.batch_step(&[Action::new(0)]),
            Err(VecEnvError::WrongBatch { expected: 3, got: 1 })
        ));
    }

    #[test]
    fn never_exposes_done_states() {
        let mut runner = BatchRunner::new(bundled_stream(2, 4), 16).unwrap();
        let mut rng = rng::seeded(1);
        for _ in 0..500 {
            let actions: Vec<Action> = runner
                .states()
                .map(|s| Action::new(rng.random_range(0..s.table.len())))
                .collect();
            runner.batch_step(&actions).unwrap();
            assert!(runner.states().all(|s| !s.done));
        }
        assert_eq!(runner.total_steps(), 16 * 500);
    }

    #[test]
    fn env_stream_matches_direct_sampling() {
        let stream = bundled_stream(1, 9);
        let runner = BatchRunner::new(stream.clone(), 4).unwrap();
        for slot in runner.slots() {
            assert_eq!(slot.task, stream.task(slot.index, 0).unwrap());
        }
    }
}
