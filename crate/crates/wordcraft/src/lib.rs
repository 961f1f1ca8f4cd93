//! Std side of the wordcraft stack: file formats, run configuration,
//! throughput benchmarking, parallel batch stepping, structured features,
//! SVG plots and the HTTP play service. The environment, models and
//! training live in `wordcraft-core`.

pub mod bench;
pub mod config;
pub mod features;
pub mod formats;
pub mod parallel;
pub mod playsvc;
pub mod plot;

pub use wordcraft_core as core;

/// Bundled example dataset in the recipe file format.
pub const BUNDLED_RECIPES_JSON: &str = include_str!("../data/recipes.json");
