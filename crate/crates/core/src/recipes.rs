//! Entities, recipes and the train/test split of the recipe universe.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::rng;

/// Dense index of an entity inside one [`RecipeBook`].
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(u32);

impl EntityId {
    /// The "nothing selected" placeholder. Never an ingredient or a result.
    pub const EMPTY: EntityId = EntityId(u32::MAX);

    pub fn new(index: usize) -> Self {
        assert!(index < u32::MAX as usize, "entity index overflow");
        EntityId(index as u32)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn is_empty(self) -> bool {
        self == Self::EMPTY
    }
}

impl fmt::Debug for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            f.write_str("EMPTY")
        } else {
            write!(f, "#{}", self.0)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: EntityId,
    pub name: String,
    pub tokens: Vec<String>,
}

/// An unordered ingredient pair and the entity it produces.
///
/// The pair is stored canonically (`ingredients.0 <= ingredients.1`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Recipe {
    pub ingredients: (EntityId, EntityId),
    pub result: EntityId,
}

impl Recipe {
    pub fn new(a: EntityId, b: EntityId, result: EntityId) -> Self {
        Recipe {
            ingredients: canonical(a, b),
            result,
        }
    }

    pub fn is_self_pair(&self) -> bool {
        self.ingredients.0 == self.ingredients.1
    }

    pub fn uses(&self, e: EntityId) -> bool {
        self.ingredients.0 == e || self.ingredients.1 == e
    }
}

pub fn canonical(a: EntityId, b: EntityId) -> (EntityId, EntityId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RecipeError {
    #[error("entity name is empty (entity #{index})")]
    EmptyName { index: usize },
    #[error("duplicate entity name `{name}`")]
    DuplicateEntity { name: String },
    #[error("recipe #{recipe} references unknown entity `{name}`")]
    UnknownEntity { recipe: usize, name: String },
    #[error("recipe #{recipe} duplicates an earlier recipe ({result}: {a}, {b})")]
    DuplicateRecipe {
        recipe: usize,
        result: String,
        a: String,
        b: String,
    },
    #[error("the empty entity cannot take part in a recipe lookup")]
    EmptyArgument,
    #[error("entity id {0} out of range")]
    OutOfRange(usize),
    #[error("train ratio {0} must lie strictly between 0 and 1")]
    BadRatio(f64),
    #[error("recipe book has no recipes to split")]
    NothingToSplit,
}

/// Lowercases, trims and collapses internal whitespace.
pub fn normalize_name(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    for token in raw.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(&token.to_lowercase());
    }
    out
}

/// The entity set and the valid-recipe relation: ground truth for the game.
#[derive(Clone, Debug)]
pub struct RecipeBook {
    entities: Vec<Entity>,
    recipes: Vec<Recipe>,
    by_name: BTreeMap<String, EntityId>,
    pair_index: BTreeMap<(EntityId, EntityId), Vec<EntityId>>,
    result_index: BTreeMap<EntityId, Vec<(EntityId, EntityId)>>,
}

impl PartialEq for RecipeBook {
    fn eq(&self, other: &Self) -> bool {
        self.entities == other.entities && self.recipes == other.recipes
    }
}

impl RecipeBook {
    /// Builds and validates a book from entity names and `(result, [a, b])`
    /// recipe records. Entity ids follow the order of `entities`.
    pub fn from_names<E, S, R, T, U>(entities: E, recipes: R) -> Result<Self, RecipeError>
    where
        E: IntoIterator<Item = S>,
        S: AsRef<str>,
        R: IntoIterator<Item = (T, [U; 2])>,
        T: AsRef<str>,
        U: AsRef<str>,
    {
        let mut ents = Vec::new();
        let mut by_name = BTreeMap::new();
        for (index, raw) in entities.into_iter().enumerate() {
            let name = normalize_name(raw.as_ref());
            if name.is_empty() {
                return Err(RecipeError::EmptyName { index });
            }
            let id = EntityId::new(index);
            if by_name.insert(name.clone(), id).is_some() {
                return Err(RecipeError::DuplicateEntity { name });
            }
            let tokens = name.split(' ').map(ToString::to_string).collect();
            ents.push(Entity { id, name, tokens });
        }

        let mut parsed = Vec::new();
        for (i, (result, [a, b])) in recipes.into_iter().enumerate() {
            let look = |raw: &str| {
                let name = normalize_name(raw);
                by_name
                    .get(&name)
                    .copied()
                    .ok_or(RecipeError::UnknownEntity { recipe: i, name })
            };
            let r = look(result.as_ref())?;
            let a = look(a.as_ref())?;
            let b = look(b.as_ref())?;
            parsed.push(Recipe::new(a, b, r));
        }
        Self::from_parts(ents, parsed)
    }

    fn from_parts(entities: Vec<Entity>, recipes: Vec<Recipe>) -> Result<Self, RecipeError> {
        let by_name = entities.iter().map(|e| (e.name.clone(), e.id)).collect();
        let mut pair_index: BTreeMap<(EntityId, EntityId), Vec<EntityId>> = BTreeMap::new();
        let mut result_index: BTreeMap<EntityId, Vec<(EntityId, EntityId)>> = BTreeMap::new();
        let mut seen = BTreeSet::new();
        for (i, r) in recipes.iter().enumerate() {
            for e in [r.ingredients.0, r.ingredients.1, r.result] {
                if e.is_empty() || e.index() >= entities.len() {
                    return Err(RecipeError::OutOfRange(e.index()));
                }
            }
            if !seen.insert(*r) {
                return Err(RecipeError::DuplicateRecipe {
                    recipe: i,
                    result: entities[r.result.index()].name.clone(),
                    a: entities[r.ingredients.0.index()].name.clone(),
                    b: entities[r.ingredients.1.index()].name.clone(),
                });
            }
            pair_index.entry(r.ingredients).or_default().push(r.result);
            result_index.entry(r.result).or_default().push(r.ingredients);
        }
        Ok(RecipeBook {
            entities,
            recipes,
            by_name,
            pair_index,
            result_index,
        })
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn recipes(&self) -> &[Recipe] {
        &self.recipes
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn entity(&self, id: EntityId) -> Option<&Entity> {
        self.entities.get(id.index())
    }

    /// Display name; `"<empty>"` for the placeholder.
    pub fn name(&self, id: EntityId) -> &str {
        match self.entity(id) {
            Some(e) => &e.name,
            None => "<empty>",
        }
    }

    /// Exact lookup after normalization.
    pub fn id(&self, name: &str) -> Option<EntityId> {
        self.by_name.get(&normalize_name(name)).copied()
    }

    /// Results of combining `a` and `b`, in either order. Empty when the
    /// pair is not a recipe.
    pub fn lookup_pair(&self, a: EntityId, b: EntityId) -> Result<&[EntityId], RecipeError> {
        if a.is_empty() || b.is_empty() {
            return Err(RecipeError::EmptyArgument);
        }
        Ok(self.results_of(a, b))
    }

    /// Unchecked variant of [`lookup_pair`](Self::lookup_pair) for hot loops.
    pub fn results_of(&self, a: EntityId, b: EntityId) -> &[EntityId] {
        self.pair_index
            .get(&canonical(a, b))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Ingredient pairs that produce `result`.
    pub fn producers(&self, result: EntityId) -> &[(EntityId, EntityId)] {
        self.result_index
            .get(&result)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn pair_index(&self) -> &BTreeMap<(EntityId, EntityId), Vec<EntityId>> {
        &self.pair_index
    }

    pub fn result_index(&self) -> &BTreeMap<EntityId, Vec<(EntityId, EntityId)>> {
        &self.result_index
    }

    /// Index of a recipe in [`recipes`](Self::recipes).
    pub fn recipe_index(&self, recipe: &Recipe) -> Option<usize> {
        self.recipes.iter().position(|r| r == recipe)
    }

    /// Distinct result entities, ascending.
    pub fn goals(&self) -> Vec<EntityId> {
        self.result_index.keys().copied().collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    ByRecipe,
    ByGoal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub seed: u64,
    pub train_ratio: f64,
    pub mode: SplitMode,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            seed: 0,
            train_ratio: 0.8,
            mode: SplitMode::ByRecipe,
        }
    }
}

/// Disjoint train/test partition of recipe indices (both sorted).
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RecipeSplit {
    pub train_recipes: Vec<usize>,
    pub test_recipes: Vec<usize>,
    #[serde(skip)]
    is_test: Vec<bool>,
}

impl RecipeSplit {
    pub fn from_indices(
        num_recipes: usize,
        mut train: Vec<usize>,
        mut test: Vec<usize>,
    ) -> Result<Self, RecipeError> {
        train.sort_unstable();
        test.sort_unstable();
        let mut is_test = alloc::vec![false; num_recipes];
        let mut seen = alloc::vec![false; num_recipes];
        for &i in train.iter().chain(test.iter()) {
            if i >= num_recipes || seen[i] {
                return Err(RecipeError::OutOfRange(i));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(RecipeError::OutOfRange(num_recipes));
        }
        for &i in &test {
            is_test[i] = true;
        }
        Ok(RecipeSplit {
            train_recipes: train,
            test_recipes: test,
            is_test,
        })
    }

    /// Every recipe in the train partition.
    pub fn all_train(book: &RecipeBook) -> Self {
        let n = book.recipes().len();
        RecipeSplit {
            train_recipes: (0..n).collect(),
            test_recipes: Vec::new(),
            is_test: alloc::vec![false; n],
        }
    }

    pub fn is_test(&self, recipe: usize) -> bool {
        self.is_test.get(recipe).copied().unwrap_or(false)
    }

    pub fn is_train(&self, recipe: usize) -> bool {
        recipe < self.is_test.len() && !self.is_test[recipe]
    }

    pub fn num_recipes(&self) -> usize {
        self.is_test.len()
    }
}

/// Deterministic split of the recipe list under `spec`.
pub fn split_recipes(book: &RecipeBook, spec: &SplitSpec) -> Result<RecipeSplit, RecipeError> {
    if !(spec.train_ratio > 0.0 && spec.train_ratio < 1.0) {
        return Err(RecipeError::BadRatio(spec.train_ratio));
    }
    let n = book.recipes().len();
    if n == 0 {
        return Err(RecipeError::NothingToSplit);
    }
    let mut rng = rng::seeded(spec.seed);
    match spec.mode {
        SplitMode::ByRecipe => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let n_train = floor_count(spec.train_ratio, n);
            let test = order.split_off(n_train);
            RecipeSplit::from_indices(n, order, test)
        }
        SplitMode::ByGoal => {
            let mut goals = book.goals();
            goals.shuffle(&mut rng);
            let n_train = floor_count(spec.train_ratio, goals.len());
            let test_goals: BTreeSet<EntityId> = goals[n_train..].iter().copied().collect();
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..n).partition(|&i| test_goals.contains(&book.recipes()[i].result));
            RecipeSplit::from_indices(n, train, test)
        }
    }
}

fn floor_count(ratio: f64, n: usize) -> usize {
    libm::floor(ratio * n as f64) as usize
}
