//! On-disk formats: recipe and split files, word vectors, parameter
//! checkpoints and the JSON-lines / CSV result streams.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use wordcraft_core::diffmath::{ParamStore, Tensor};
use wordcraft_core::embed::{EmbedError, WordVectors};
use wordcraft_core::env::{Event, StepOutcome};
use wordcraft_core::evalkit::EvalReport;
use wordcraft_core::agent::{AgentConfig, AgentNet, KgMode};
use wordcraft_core::embed::EmbeddingSource;
use wordcraft_core::kglink::{ComplExModel, GraphScope, Relation, Triple};
use wordcraft_core::recipes::{RecipeBook, RecipeError, RecipeSplit, SplitMode, SplitSpec};

pub const CHECKPOINT_FORMAT: &str = "wordcraft-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{context}: line {line}, column {column}: {message}")]
    Json {
        context: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error(transparent)]
    Recipe(#[from] RecipeError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl FormatError {
    fn json(context: impl Into<String>, e: serde_json::Error) -> Self {
        FormatError::Json {
            context: context.into(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}

pub fn read_text(path: &Path) -> Result<String, FormatError> {
    fs::read_to_string(path).map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<(), FormatError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| FormatError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, text).map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn from_json<T: DeserializeOwned>(text: &str, context: &str) -> Result<T, FormatError> {
    serde_json::from_str(text).map_err(|e| FormatError::json(context, e))
}

pub fn to_json_pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, FormatError> {
    from_json(&read_text(path)?, &path.display().to_string())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), FormatError> {
    write_text(path, &to_json_pretty(value))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecipeRecord {
    pub result: String,
    pub ingredients: [String; 2],
}

/// `{"entities": [...], "recipes": [{"result": ..., "ingredients": [a, b]}]}`
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecipeFile {
    pub entities: Vec<String>,
    pub recipes: Vec<RecipeRecord>,
}

impl RecipeFile {
    pub fn from_book(book: &RecipeBook) -> Self {
        RecipeFile {
            entities: book.entities().iter().map(|e| e.name.clone()).collect(),
            recipes: book
                .recipes()
                .iter()
                .map(|r| RecipeRecord {
                    result: book.name(r.result).to_string(),
                    ingredients: [
                        book.name(r.ingredients.0).to_string(),
                        book.name(r.ingredients.1).to_string(),
                    ],
                })
                .collect(),
        }
    }

    pub fn to_book(&self) -> Result<RecipeBook, RecipeError> {
        RecipeBook::from_names(
            &self.entities,
            self.recipes.iter().map(|r| (&r.result, [&r.ingredients[0], &r.ingredients[1]])),
        )
    }
}

pub fn parse_recipe_book(text: &str) -> Result<RecipeBook, FormatError> {
    let file: RecipeFile = from_json(text, "recipe file")?;
    Ok(file.to_book()?)
}

pub fn load_recipe_book(path: &Path) -> Result<RecipeBook, FormatError> {
    let file: RecipeFile = read_json(path)?;
    Ok(file.to_book()?)
}

/// `{"seed", "ratio", "mode", "train": [indices], "test": [indices]}`
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFile {
    pub seed: u64,
    pub ratio: f64,
    pub mode: SplitMode,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitFile {
    pub fn new(spec: &SplitSpec, split: &RecipeSplit) -> Self {
        SplitFile {
            seed: spec.seed,
            ratio: spec.train_ratio,
            mode: spec.mode,
            train: split.train_recipes.clone(),
            test: split.test_recipes.clone(),
        }
    }

    pub fn spec(&self) -> SplitSpec {
        SplitSpec {
            seed: self.seed,
            train_ratio: self.ratio,
            mode: self.mode,
        }
    }

    /// Validates the indices against `book` (disjoint, covering).
    pub fn to_split(&self, book: &RecipeBook) -> Result<RecipeSplit, RecipeError> {
        RecipeSplit::from_indices(book.recipes().len(), self.train.clone(), self.test.clone())
    }
}

pub fn load_split(path: &Path, book: &RecipeBook) -> Result<RecipeSplit, FormatError> {
    let file: SplitFile = read_json(path)?;
    Ok(file.to_split(book)?)
}

pub fn load_word_vectors(path: &Path) -> Result<WordVectors, FormatError> {
    Ok(WordVectors::parse(&read_text(path)?)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

/// Versioned JSON checkpoint: parameters in store order plus free-form
/// metadata. Floats are written in shortest round-trip form, so reloads are
/// bit-exact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint<M> {
    pub format: String,
    pub version: u32,
    pub kind: String,
    pub metadata: M,
    pub params: Vec<ParamEntry>,
}

impl<M> Checkpoint<M> {
    pub fn new(kind: &str, metadata: M, params: &ParamStore) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            kind: kind.to_string(),
            metadata,
            params: params
                .iter()
                .map(|(name, t)| ParamEntry {
                    name: name.to_string(),
                    shape: [t.rows(), t.cols()],
                    values: t.data().to_vec(),
                })
                .collect(),
        }
    }

    pub fn param_store(&self) -> Result<ParamStore, FormatError> {
        let mut store = ParamStore::new();
        for p in &self.params {
            let t = Tensor::new(p.shape[0], p.shape[1], p.values.clone())
                .map_err(|e| FormatError::Checkpoint(format!("{}: {e}", p.name)))?;
            store.push(p.name.clone(), t);
        }
        Ok(store)
    }

    fn check(&self, kind: &str) -> Result<(), FormatError> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(FormatError::Checkpoint(format!(
                "unsupported format {} v{}",
                self.format, self.version
            )));
        }
        if self.kind != kind {
            return Err(FormatError::Checkpoint(format!("expected a {kind} checkpoint, found {}", self.kind)));
        }
        Ok(())
    }
}

pub fn save_checkpoint<M: Serialize>(path: &Path, ckpt: &Checkpoint<M>) -> Result<(), FormatError> {
    write_text(path, &serde_json::to_string(ckpt).expect("checkpoint serializes"))
}

pub fn load_checkpoint<M: DeserializeOwned>(path: &Path, kind: &str) -> Result<Checkpoint<M>, FormatError> {
    let ckpt: Checkpoint<M> = read_json(path)?;
    ckpt.check(kind)?;
    Ok(ckpt)
}

/// Appends serializable records as JSON lines.
pub struct JsonlWriter {
    out: BufWriter<fs::File>,
    path: PathBuf,
}

impl JsonlWriter {
    pub fn create(path: &Path) -> Result<Self, FormatError> {
        Self::open(path, false)
    }

    pub fn append(path: &Path) -> Result<Self, FormatError> {
        Self::open(path, true)
    }

    fn open(path: &Path, append: bool) -> Result<Self, FormatError> {
        let io = |source| FormatError::Io {
            path: path.to_path_buf(),
            source,
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io)?;
        }
        let file = fs::OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(path)
            .map_err(io)?;
        Ok(JsonlWriter {
            out: BufWriter::new(file),
            path: path.to_path_buf(),
        })
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<(), FormatError> {
        let line = serde_json::to_string(record).expect("record serializes");
        writeln!(self.out, "{line}").map_err(|source| FormatError::Io {
            path: self.path.clone(),
            source,
        })
    }

    pub fn flush(&mut self) -> Result<(), FormatError> {
        self.out.flush().map_err(|source| FormatError::Io {
            path: self.path.clone(),
            source,
        })
    }
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, FormatError> {
    let file = fs::File::open(path).map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| FormatError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| FormatError::Json {
            context: path.display().to_string(),
            line: i + 1,
            column: e.column(),
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub const KG_CHECKPOINT: &str = "complex";
pub const AGENT_CHECKPOINT: &str = "agent";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KgMetadata {
    pub rank: usize,
    pub num_entities: usize,
    pub relations: Vec<String>,
    pub scope: GraphScope,
    pub seed: u64,
    pub epochs: usize,
    pub final_loss: Option<f64>,
}

pub fn save_kg(path: &Path, model: &ComplExModel, meta: KgMetadata) -> Result<(), FormatError> {
    save_checkpoint(path, &Checkpoint::new(KG_CHECKPOINT, meta, model.params()))
}

pub fn load_kg(path: &Path) -> Result<(ComplExModel, KgMetadata), FormatError> {
    let ckpt: Checkpoint<KgMetadata> = load_checkpoint(path, KG_CHECKPOINT)?;
    let model = ComplExModel::from_params(ckpt.param_store()?)
        .map_err(|e| FormatError::Checkpoint(e.to_string()))?;
    Ok((model, ckpt.metadata))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentMetadata {
    pub config: AgentConfig,
    pub kg_mode: KgMode,
    pub features: EmbeddingSource,
    pub steps: u64,
}

pub fn save_agent(path: &Path, net: &AgentNet, meta: AgentMetadata) -> Result<(), FormatError> {
    save_checkpoint(path, &Checkpoint::new(AGENT_CHECKPOINT, meta, net.params()))
}

pub fn load_agent(path: &Path) -> Result<(AgentNet, AgentMetadata), FormatError> {
    let ckpt: Checkpoint<AgentMetadata> = load_checkpoint(path, AGENT_CHECKPOINT)?;
    let net = AgentNet::from_params(ckpt.metadata.config, ckpt.param_store()?)
        .map_err(|e| FormatError::Checkpoint(e.to_string()))?;
    Ok((net, ckpt.metadata))
}

/// One line of a triple dump.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripleRecord {
    pub s: String,
    pub p: Relation,
    pub o: String,
}

impl TripleRecord {
    pub fn new(book: &RecipeBook, t: &Triple) -> Self {
        TripleRecord {
            s: book.name(t.s).to_string(),
            p: t.p,
            o: book.name(t.o).to_string(),
        }
    }
}

/// One line of a trajectory log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub episode: u64,
    pub step: usize,
    pub digest: u64,
    pub action: usize,
    pub reward: f64,
    pub events: Vec<Event>,
}

impl TrajectoryRecord {
    /// Record of `action` taken in the state with digest `digest`.
    pub fn new(episode: u64, digest: u64, action: usize, outcome: &StepOutcome) -> Self {
        TrajectoryRecord {
            episode,
            step: outcome.state.steps_taken,
            digest,
            action,
            reward: outcome.reward,
            events: outcome.events.clone(),
        }
    }
}

/// Aggregate row written to the evaluation CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub policy: String,
    pub partition: String,
    pub depth: usize,
    pub num_distractors: usize,
    pub kg_mode: String,
    pub num_tasks: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_steps: f64,
    pub repeated_selection_tasks: usize,
    pub seed: u64,
}

impl From<&EvalReport> for EvalRow {
    fn from(r: &EvalReport) -> Self {
        EvalRow {
            policy: r.policy.clone(),
            partition: serde_json::to_value(r.partition)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default(),
            depth: r.depth,
            num_distractors: r.num_distractors,
            kg_mode: r.kg_mode.map_or("none", |m| m.name()).to_string(),
            num_tasks: r.num_tasks,
            successes: r.successes,
            success_rate: r.success_rate,
            mean_steps: r.mean_steps,
            repeated_selection_tasks: r.repeated_selection_tasks,
            seed: r.seed,
        }
    }
}

pub fn write_eval_csv(path: &Path, reports: &[EvalReport]) -> Result<(), FormatError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| FormatError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in reports {
        w.serialize(EvalRow::from(r))?;
    }
    w.flush().map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Adds one row to `path`, writing the header only when the file is new.
pub fn append_eval_csv(path: &Path, report: &EvalReport) -> Result<(), FormatError> {
    let io = |source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = fs::OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    w.serialize(EvalRow::from(report))?;
    w.flush().map_err(io)
}

pub fn read_eval_csv(path: &Path) -> Result<Vec<EvalRow>, FormatError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use wordcraft_core::bundled;
    use wordcraft_core::recipes::split_recipes;

    #[test]
    fn recipe_file_roundtrip() {
        let book = bundled::example_book();
        let text = to_json_pretty(&RecipeFile::from_book(&book));
        let again = parse_recipe_book(&text).unwrap();
        assert_eq!(book, again);
        assert_eq!(book.pair_index(), again.pair_index());
        assert_eq!(book.result_index(), again.result_index());
    }

    #[test]
    fn recipe_file_errors() {
        let err = parse_recipe_book("{\n \"entities\": [\"a\"],\n \"recipes\": [ {\"result\": 3} ]\n}").unwrap_err();
        assert!(matches!(err, FormatError::Json { line: 3, .. }), "{err}");
        let err = parse_recipe_book(r#"{"entities":["a"],"recipes":[{"result":"a","ingredients":["a","b"]}]}"#).unwrap_err();
        assert!(matches!(err, FormatError::Recipe(RecipeError::UnknownEntity { .. })));
        let err = parse_recipe_book(
            r#"{"entities":["a","b"],"recipes":[{"result":"b","ingredients":["a","a"]},{"result":"b","ingredients":["a","a"]}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, FormatError::Recipe(RecipeError::DuplicateRecipe { .. })));
        let book = parse_recipe_book(r#"{"entities":["a","b","c","d"],"recipes":[]}"#).unwrap();
        assert!(book.pair_index().is_empty());
    }

    #[test]
    fn split_file_roundtrip() {
        let book = bundled::example_book();
        let spec = SplitSpec::default();
        let split = split_recipes(&book, &spec).unwrap();
        let file = SplitFile::new(&spec, &split);
        let back: SplitFile = from_json(&to_json_pretty(&file), "split").unwrap();
        assert_eq!(back, file);
        assert_eq!(back.to_split(&book).unwrap(), split);
        let v: serde_json::Value = serde_json::to_value(&file).unwrap();
        assert_eq!(v["mode"], "by-recipe");
    }

    #[test]
    fn checkpoint_is_bit_exact() {
        let mut store = ParamStore::new();
        store.push("w", Tensor::new(1, 4, vec![0.1 + 0.2, 1e-300, -3.0e17, std::f64::consts::PI]).unwrap());
        let ckpt = Checkpoint::new("test", serde_json::json!({"k": 1}), &store);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        save_checkpoint(&path, &ckpt).unwrap();
        let back: Checkpoint<serde_json::Value> = load_checkpoint(&path, "test").unwrap();
        let again = back.param_store().unwrap();
        for (a, b) in store.get(0).data().iter().zip(again.get(0).data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert!(load_checkpoint::<serde_json::Value>(&path, "other").is_err());
    }

    #[test]
    fn jsonl_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let book = bundled::example_book();
        let triples = wordcraft_core::kglink::recipes_to_triples(book.recipes());
        let mut w = JsonlWriter::create(&path).unwrap();
        for t in &triples {
            w.write(&TripleRecord::new(&book, t)).unwrap();
        }
        w.flush().unwrap();
        let back: Vec<TripleRecord> = read_jsonl(&path).unwrap();
        assert_eq!(back.len(), triples.len());
        assert_eq!(back[0].p, Relation::CombinesWith);
        let line = read_text(&path).unwrap();
        assert!(line.lines().next().unwrap().contains("\"p\":\"combinesWith\""));
    }
}
