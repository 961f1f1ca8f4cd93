//! Wall-clock throughput of the batched environment under a random policy.

use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};

use wordcraft_core::env::Action;
use wordcraft_core::rng;
use wordcraft_core::vecenv::{BatchRunner, VecEnvError};

use crate::parallel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub steps: u64,
    pub seconds: f64,
    pub steps_per_second: f64,
    pub num_envs: usize,
    pub depth: usize,
    pub distractors: usize,
    pub parallel: bool,
}

/// Steps `runner` with uniformly random actions for at least `duration`
/// and reports env steps per second. Action sampling is included in the
/// timed loop.
pub fn benchmark_throughput(
    runner: &mut BatchRunner,
    duration: Duration,
    seed: u64,
    parallel: bool,
) -> Result<BenchReport, VecEnvError> {
    let mut rng = rng::seeded(seed);
    let mut actions = Vec::with_capacity(runner.num_envs());
    let start_steps = runner.total_steps();
    let start = Instant::now();
    loop {
        // check the clock every few batches so tiny batches are not
        // dominated by timer calls
        for _ in 0..8 {
            actions.clear();
            actions.extend(runner.states().map(|s| Action::new(rng.random_range(0..s.table.len()))));
            if parallel {
                parallel::batch_step(runner, &actions)?;
            } else {
                runner.batch_step(&actions)?;
            }
        }
        if start.elapsed() >= duration {
            break;
        }
    }
    let seconds = start.elapsed().as_secs_f64();
    let steps = runner.total_steps() - start_steps;
    let cfg = runner.stream().config();
    Ok(BenchReport {
        steps,
        seconds,
        steps_per_second: steps as f64 / seconds,
        num_envs: runner.num_envs(),
        depth: cfg.depth,
        distractors: cfg.num_distractors,
        parallel,
    })
}
