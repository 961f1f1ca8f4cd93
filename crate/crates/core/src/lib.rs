//! Core of the WordCraft crafting benchmark.
//!
//! Everything in this crate is pure computation over in-memory values: the
//! recipe book and its train/test split, the single-episode environment and
//! its batched runner, entity feature tables, a small reverse-mode autodiff
//! engine, ComplEx link prediction over the recipe graph, the self-attention
//! actor-critic agent, and the evaluation harness.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, timing, the
//! command line and the play service live in the `wordcraft` crate.
//!
//! # Example
//!
//! ```
//! use wordcraft_core::env::{self, Action, RewardConfig};
//! use wordcraft_core::recipes::{RecipeBook, RecipeSplit};
//!
//! let book = RecipeBook::from_names(
//!     ["water", "earth", "mud"],
//!     [("mud", ["water", "earth"])],
//! )
//! .unwrap();
//! let split = RecipeSplit::all_train(&book);
//! let task = env::sample_task(&book, &split, env::Partition::Train, 1, 0, 7).unwrap();
//! let mut state = env::reset(&task);
//! let cfg = RewardConfig::sparse();
//! let max_steps = env::default_max_steps(1);
//! let first = env::step(&state, Action::new(0), &book, &cfg, max_steps).unwrap();
//! state = first.state;
//! let second = env::step(&state, Action::new(1), &book, &cfg, max_steps).unwrap();
//! assert!(second.state.success);
//! assert_eq!(second.reward, 1.0);
//! ```

#![no_std]

extern crate alloc;

pub mod agent;
pub mod bundled;
pub mod diffmath;
pub mod embed;
pub mod env;
pub mod evalkit;
pub mod kglink;
pub mod recipes;
pub mod rng;
pub mod vecenv;

pub use recipes::{EntityId, Recipe, RecipeBook, RecipeSplit, SplitMode, SplitSpec};
