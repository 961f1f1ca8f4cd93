//! The bundled desk-scale dataset: 35 result entities with their known
//! ingredient combinations (52 recipes over 93 entities).

use alloc::vec::Vec;

use crate::recipes::RecipeBook;

/// `(result, combinations)` rows.
pub const EXAMPLE_RECIPES: &[(&str, &[(&str, &str)])] = &[
    ("airplane", &[("bird", "metal"), ("bird", "steel")]),
    ("alcohol", &[("fruit", "time"), ("juice", "time")]),
    ("batter", &[("flour", "milk")]),
    ("cereal", &[("wheat", "milk")]),
    ("catnip", &[("cat", "plant")]),
    ("charcoal", &[("fire", "wood")]),
    ("dew", &[("water", "grass"), ("fog", "grass")]),
    ("farmer", &[("human", "field"), ("human", "plant")]),
    ("geyser", &[("steam", "earth")]),
    ("glacier", &[("ice", "mountain")]),
    ("hay bale", &[("hay", "hay")]),
    ("iced tea", &[("ice", "tea")]),
    ("ivy", &[("plant", "wall")]),
    ("juice", &[("water", "fruit"), ("pressure", "fruit")]),
    ("kite", &[("wind", "paper"), ("sky", "paper")]),
    ("lake", &[("water", "pond"), ("river", "dam")]),
    ("milk", &[("farmer", "cow"), ("cow", "human")]),
    ("milk shake", &[("milk", "ice cream")]),
    ("narwhal", &[("unicorn", "ocean"), ("unicorn", "water")]),
    ("oasis", &[("desert", "water")]),
    ("paper", &[("wood", "pressure")]),
    ("pasta", &[("flour", "egg")]),
    ("rainbow", &[("rain", "sun"), ("rain", "light")]),
    ("reindeer", &[("santa", "wild animal"), ("livestock", "santa")]),
    ("sand castle", &[("sand", "castle")]),
    ("santa", &[("human", "christmas tree")]),
    ("scythe", &[("blade", "grass"), ("blade", "wheat")]),
    ("telescope", &[("glass", "sky"), ("glass", "star"), ("glass", "space")]),
    ("umbrella", &[("tool", "rain"), ("rain", "fabric")]),
    ("volcano", &[("lava", "earth"), ("lava", "mountain")]),
    ("wallet", &[("leather", "money")]),
    ("watch", &[("human", "clock")]),
    ("x-ray", &[("light", "bone"), ("light", "skeleton")]),
    ("yogurt", &[("milk", "bacteria")]),
    ("zombie", &[("corpse", "life")]),
];

/// Entity names in first-appearance order (results before their ingredients).
pub fn entity_names() -> Vec<&'static str> {
    let mut names: Vec<&'static str> = Vec::new();
    let mut push = |n: &'static str| {
        if !names.contains(&n) {
            names.push(n);
        }
    };
    for (result, combos) in EXAMPLE_RECIPES {
        push(result);
        for (a, b) in combos.iter() {
            push(a);
            push(b);
        }
    }
    names
}

pub fn recipe_records() -> Vec<(&'static str, [&'static str; 2])> {
    EXAMPLE_RECIPES
        .iter()
        .flat_map(|(r, combos)| combos.iter().map(move |(a, b)| (*r, [*a, *b])))
        .collect()
}

/// The bundled dataset as a validated book.
pub fn example_book() -> RecipeBook {
    RecipeBook::from_names(entity_names(), recipe_records())
        .expect("bundled dataset is valid")
}
