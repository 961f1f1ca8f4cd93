use std::sync::OnceLock;

use proptest::prelude::*;
use wordcraft_core::bundled;
use wordcraft_core::env::{self, Action, EnvState, Partition, RewardConfig, TaskSpec};
use wordcraft_core::recipes::{split_recipes, RecipeBook, RecipeSplit};

fn fixture() -> &'static (RecipeBook, RecipeSplit) {
    static F: OnceLock<(RecipeBook, RecipeSplit)> = OnceLock::new();
    F.get_or_init(|| {
        let book = bundled::example_book();
        let split = split_recipes(&book, &Default::default()).unwrap();
        (book, split)
    })
}

fn arb_task() -> impl Strategy<Value = TaskSpec> {
    (1usize..=2, 0usize..=8, any::<bool>(), any::<u64>()).prop_map(|(depth, k, test, seed)| {
        let (book, split) = fixture();
        let part = if test { Partition::Test } else { Partition::Train };
        env::sample_task(book, split, part, depth, k, seed).unwrap()
    })
}

fn slot_of(state: &EnvState, e: wordcraft_core::EntityId) -> usize {
    state.table.iter().position(|&x| x == e).expect("entity on table")
}

proptest! {
    #[test]
    fn random_play_keeps_invariants(task in arb_task(), moves in prop::collection::vec(any::<u8>(), 0..12), shaped in any::<bool>()) {
        let (book, split) = fixture();
        let max = env::default_max_steps(task.depth);
        let cfg = if shaped { RewardConfig::shaped(task.depth) } else { RewardConfig::sparse() };
        let final_idx = book.recipe_index(task.final_recipe().unwrap()).unwrap();
        match task.partition {
            Partition::Test => prop_assert!(split.is_test(final_idx)),
            Partition::Train => {
                for r in &task.intended_tree {
                    prop_assert!(split.is_train(book.recipe_index(r).unwrap()));
                }
            }
        }
        let mut state = env::reset(&task);
        let mut ret = 0.0;
        for m in moves {
            if state.done {
                prop_assert!(env::step(&state, Action::new(0), book, &cfg, max).is_err());
                break;
            }
            let a = Action::new(m as usize % state.table.len());
            let out = env::step(&state, a, book, &cfg, max).unwrap();
            let again = env::step(&state, a, book, &cfg, max).unwrap();
            prop_assert_eq!(&out, &again);
            prop_assert!(out.state.table.starts_with(&state.table));
            prop_assert!(out.state.steps_taken <= max);
            ret += out.reward;
            state = out.state;
        }
        if !shaped && state.done {
            prop_assert_eq!(ret, if state.success { 1.0 } else { 0.0 });
        }
        if !shaped && !state.done {
            prop_assert_eq!(ret, 0.0);
        }
    }

    #[test]
    fn intended_tree_reaches_the_goal(task in arb_task()) {
        let (book, _) = fixture();
        let max = env::default_max_steps(task.depth);
        let cfg = RewardConfig::sparse();
        let mut state = env::reset(&task);
        let mut actions = 0;
        for r in &task.intended_tree {
            for e in [r.ingredients.0, r.ingredients.1] {
                let a = Action::new(slot_of(&state, e));
                state = env::step(&state, a, book, &cfg, max).unwrap().state;
                actions += 1;
            }
        }
        prop_assert!(state.success);
        prop_assert!(actions <= 2 * task.depth);
        prop_assert!(!task.table_init.contains(&task.goal));
        for m in task.intermediates() {
            prop_assert!(!task.table_init.contains(&m));
        }
        let distinct: std::collections::BTreeSet<_> = task.table_init.iter().collect();
        prop_assert_eq!(distinct.len(), task.table_init.len());
        prop_assert!(task.table_init.len() > task.num_distractors);
    }
}

#[test]
fn reset_order_depends_on_the_seed() {
    let (book, split) = fixture();
    let tables: Vec<Vec<_>> = (0..100)
        .map(|s| {
            let mut t = env::sample_task(book, split, Partition::Train, 1, 4, 5).unwrap();
            t.seed = s;
            env::reset(&t).table
        })
        .collect();
    assert!(tables.iter().any(|t| t != &tables[0]));
}
