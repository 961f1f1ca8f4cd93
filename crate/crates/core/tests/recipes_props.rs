use std::collections::BTreeSet;

use proptest::prelude::*;
use wordcraft_core::recipes::{split_recipes, RecipeBook, SplitMode, SplitSpec};
use wordcraft_core::bundled;

/// Random valid book: `n` entities and distinct recipes over them.
fn arb_book() -> impl Strategy<Value = RecipeBook> {
    (2usize..12)
        .prop_flat_map(|n| (Just(n), prop::collection::vec((0..n, 0..n, 0..n), 1..30)))
        .prop_map(|(n, raw)| {
            let names: Vec<String> = (0..n).map(|i| format!("item {i}")).collect();
            let mut seen = BTreeSet::new();
            let recipes: Vec<(String, [String; 2])> = raw
                .into_iter()
                .filter(|&(a, b, r)| seen.insert((a.min(b), a.max(b), r)))
                .map(|(a, b, r)| (names[r].clone(), [names[a].clone(), names[b].clone()]))
                .collect();
            RecipeBook::from_names(&names, recipes).unwrap()
        })
}

fn reload(book: &RecipeBook) -> RecipeBook {
    let names: Vec<&str> = book.entities().iter().map(|e| e.name.as_str()).collect();
    let recipes: Vec<(&str, [&str; 2])> = book
        .recipes()
        .iter()
        .map(|r| (book.name(r.result), [book.name(r.ingredients.0), book.name(r.ingredients.1)]))
        .collect();
    RecipeBook::from_names(names, recipes).unwrap()
}

proptest! {
    #[test]
    fn reloading_keeps_every_index(book in arb_book()) {
        let again = reload(&book);
        prop_assert_eq!(&again, &book);
        prop_assert_eq!(again.pair_index(), book.pair_index());
        prop_assert_eq!(again.result_index(), book.result_index());
        for e in book.entities() {
            prop_assert_eq!(again.id(&e.name), Some(e.id));
            prop_assert_eq!(e.tokens.join(" "), e.name.clone());
        }
    }

    #[test]
    fn every_recipe_is_found_by_lookup(book in arb_book()) {
        for r in book.recipes() {
            let (a, b) = r.ingredients;
            prop_assert!(book.lookup_pair(a, b).unwrap().contains(&r.result));
            prop_assert!(book.lookup_pair(b, a).unwrap().contains(&r.result));
        }
        // Brute force: the index holds nothing that is not a recipe.
        for (&(a, b), results) in book.pair_index() {
            for &res in results {
                prop_assert!(book.recipes().iter().any(|r| r.result == res
                    && (r.ingredients == (a, b) || r.ingredients == (b, a))));
            }
        }
    }

    #[test]
    fn splits_are_deterministic_and_partition_the_recipes(
        book in arb_book(),
        seed in any::<u64>(),
        ratio in 0.05f64..0.95,
        by_goal in any::<bool>(),
    ) {
        let mode = if by_goal { SplitMode::ByGoal } else { SplitMode::ByRecipe };
        let spec = SplitSpec { seed, train_ratio: ratio, mode };
        let a = split_recipes(&book, &spec).unwrap();
        let b = split_recipes(&book, &spec).unwrap();
        prop_assert_eq!(&a, &b);
        let n = book.recipes().len();
        prop_assert_eq!(a.train_recipes.len() + a.test_recipes.len(), n);
        let all: BTreeSet<usize> = a.train_recipes.iter().chain(&a.test_recipes).copied().collect();
        prop_assert_eq!(all.len(), n);
        if by_goal {
            let train_goals: BTreeSet<_> = a.train_recipes.iter().map(|&i| book.recipes()[i].result).collect();
            for &i in &a.test_recipes {
                prop_assert!(!train_goals.contains(&book.recipes()[i].result));
            }
        } else {
            prop_assert_eq!(a.train_recipes.len(), (ratio * n as f64).floor() as usize);
        }
    }
}

#[test]
fn bundled_split_sizes() {
    let book = bundled::example_book();
    let n = book.recipes().len();
    let split = split_recipes(&book, &SplitSpec { seed: 7, ..Default::default() }).unwrap();
    assert_eq!(split.train_recipes.len(), (0.8 * n as f64).floor() as usize);
    assert_eq!(split.test_recipes.len(), n - split.train_recipes.len());
}
