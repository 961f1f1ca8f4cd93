//! Thread-pool stepping for [`BatchRunner`]. Results match serial stepping
//! exactly because every env owns its own task stream.

use rayon::prelude::*;

use wordcraft_core::env::Action;
use wordcraft_core::vecenv::{BatchOutcome, BatchRunner, VecEnvError};

pub fn batch_step(runner: &mut BatchRunner, actions: &[Action]) -> Result<Vec<BatchOutcome>, VecEnvError> {
    runner.batch_step_with(actions, |slots, actions, ctx| {
        slots
            .par_iter_mut()
            .zip(actions.par_iter())
            .map(|(slot, &a)| slot.advance(a, ctx))
            .collect()
    })
}
