//! `wordcraft` command-line entry point.

use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use toml::Value;

use wordcraft::config::{self, FeatureKind, PolicyKind, RunConfig};
use wordcraft::formats::{self, AgentMetadata, JsonlWriter, KgMetadata, SplitFile, TripleRecord};
use wordcraft::playsvc::{self, PlayService, Protocol};
use wordcraft::plot::{self, Metric, Series};
use wordcraft::{bench, features};
use wordcraft_core::agent::{a2c_train, AgentNet, Inputs, KgMode, TrainMetrics};
use wordcraft_core::embed::{self, EmbeddingTable};
use wordcraft_core::env::Partition;
use wordcraft_core::evalkit::{self, EvalConfig, KgGreedyPolicy, OraclePolicy, Policy, RandomPolicy, TrainedPolicy};
use wordcraft_core::kglink::{self, ComplExModel, GraphScope, Relation};
use wordcraft_core::recipes::{split_recipes, RecipeBook, RecipeSplit};
use wordcraft_core::vecenv::{BatchRunner, StreamConfig, TaskStream};
use wordcraft_core::{bundled, rng};

/// WordCraft environment, knowledge-graph guided agents and evaluation.
///
/// Settings come from built-in defaults, then `--config FILE` (TOML), then
/// `--set section.key=value` overrides, then the dedicated flags of each
/// subcommand. The resolved settings are written to `<run_dir>/config.toml`.
#[derive(Parser, Debug)]
#[command(name = "wordcraft", version)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override any setting, e.g. `--set train.gamma=0.9`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Directory for artifacts (run_dir).
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    /// Recipe file (data.recipes); the bundled example set otherwise.
    #[arg(long, global = true)]
    recipes: Option<PathBuf>,
    /// Split file (data.split_file); computed from [split] otherwise.
    #[arg(long, global = true)]
    split_file: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load and validate a recipe file and report its counts.
    ValidateData,
    /// Split recipes into train and test sets and write the split file.
    Split(SplitArgs),
    /// Measure batched environment throughput under a random policy.
    Bench(BenchArgs),
    /// Train the ComplEx link predictor on recipe triples.
    TrainKg(KgArgs),
    /// Train the attention actor-critic with A2C.
    TrainAgent(AgentArgs),
    /// Evaluate a policy on sampled tasks.
    Eval(EvalArgs),
    /// Render metrics streams as an SVG line chart.
    Plot(PlotArgs),
    /// Serve human play sessions over HTTP.
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
struct TaskArgs {
    /// Recipe depth of sampled tasks (task.depth).
    #[arg(long)]
    depth: Option<usize>,
    /// Distractor entities per task (task.distractors).
    #[arg(long)]
    distractors: Option<usize>,
}

#[derive(Args, Debug)]
struct SplitArgs {
    /// Train fraction in (0, 1) (split.train_ratio).
    #[arg(long)]
    ratio: Option<f64>,
    /// split.seed
    #[arg(long)]
    seed: Option<u64>,
    /// by-recipe or by-goal (split.mode).
    #[arg(long)]
    mode: Option<String>,
    /// Output path; `<run_dir>/split.json` by default.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// bench.envs
    #[arg(long)]
    envs: Option<usize>,
    #[command(flatten)]
    task: TaskArgs,
    /// Timed duration in seconds (bench.seconds).
    #[arg(long)]
    seconds: Option<f64>,
    /// Step envs on the thread pool (bench.parallel).
    #[arg(long)]
    parallel: bool,
    /// bench.seed
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct KgArgs {
    /// kg.epochs
    #[arg(long)]
    epochs: Option<usize>,
    /// Complex embedding size (kg.rank).
    #[arg(long)]
    rank: Option<usize>,
    /// full or partial (kg.scope).
    #[arg(long)]
    scope: Option<String>,
    /// kg.seed
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct FeatureArgs {
    /// cooccurrence, random or pretrained (features.kind).
    #[arg(long)]
    features: Option<String>,
    /// features.dim
    #[arg(long)]
    dim: Option<usize>,
    /// Word-vector text file (features.vectors).
    #[arg(long)]
    vectors: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AgentArgs {
    /// train.total_steps
    #[arg(long)]
    steps: Option<u64>,
    /// none, full, partial, combines-with-only or component-of-only (train.kg_mode).
    #[arg(long)]
    kg_mode: Option<String>,
    /// Trained ComplEx checkpoint; trained in-process when needed and absent.
    #[arg(long)]
    kg: Option<PathBuf>,
    /// train.num_envs
    #[arg(long)]
    envs: Option<usize>,
    /// train.seed and agent.seed
    #[arg(long)]
    seed: Option<u64>,
    /// train.log_interval
    #[arg(long)]
    log_interval: Option<u64>,
    /// Zero-shot tasks per metrics record (train.eval_tasks).
    #[arg(long)]
    eval_tasks: Option<usize>,
    #[command(flatten)]
    task: TaskArgs,
    #[command(flatten)]
    features: FeatureArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// agent, random, oracle or kg-greedy (eval.policy).
    #[arg(long)]
    policy: Option<String>,
    /// Agent checkpoint; `<run_dir>/agent.json` by default.
    #[arg(long)]
    agent: Option<PathBuf>,
    /// ComplEx checkpoint; `<run_dir>/kg.json` by default when needed.
    #[arg(long)]
    kg: Option<PathBuf>,
    /// Relation subset for kg-greedy (train.kg_mode).
    #[arg(long)]
    kg_mode: Option<String>,
    /// train or test (eval.partition).
    #[arg(long)]
    partition: Option<String>,
    /// eval.num_tasks
    #[arg(long)]
    tasks: Option<usize>,
    /// eval.seed
    #[arg(long)]
    seed: Option<u64>,
    /// Sample actions instead of acting greedily (eval.sample).
    #[arg(long)]
    sample: bool,
    #[command(flatten)]
    task: TaskArgs,
    #[command(flatten)]
    features: FeatureArgs,
}

#[derive(Args, Debug)]
struct PlotArgs {
    /// Metrics stream, optionally labelled: `path` or `path=label`. Repeatable.
    #[arg(long = "input", required = true)]
    inputs: Vec<String>,
    /// train-success, zero-shot-success, return or entropy.
    #[arg(long, default_value = "zero-shot-success")]
    metric: String,
    #[arg(long, default_value = "success rate over training")]
    title: String,
    /// Output SVG; `<run_dir>/plot.svg` by default.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ServeArgs {
    /// Listen address (serve.addr).
    #[arg(long)]
    addr: Option<String>,
    /// Allowed browser origin (serve.cors_origin); any when unset.
    #[arg(long)]
    cors_origin: Option<String>,
    /// serve.num_train_tasks
    #[arg(long)]
    train_tasks: Option<usize>,
    /// serve.num_test_tasks
    #[arg(long)]
    test_tasks: Option<usize>,
    /// Reveal recipes after failed train tasks (serve.show_solution_on_failure).
    #[arg(long)]
    show_solution: bool,
    /// Session logs; `<run_dir>/sessions` by default.
    #[arg(long)]
    log_dir: Option<PathBuf>,
    #[command(flatten)]
    task: TaskArgs,
}

struct Overrides(Vec<(String, Value)>);

impl Overrides {
    fn put(&mut self, key: &str, v: Option<impl Into<Value>>) {
        if let Some(v) = v {
            self.0.push((key.to_string(), v.into()));
        }
    }

    fn put_u64(&mut self, key: &str, v: Option<u64>) -> Result<()> {
        if let Some(v) = v {
            let v = i64::try_from(v).with_context(|| format!("{key} must fit in a signed 64-bit integer"))?;
            self.0.push((key.to_string(), Value::Integer(v)));
        }
        Ok(())
    }

    fn put_usize(&mut self, key: &str, v: Option<usize>) -> Result<()> {
        self.put_u64(key, v.map(|x| x as u64))
    }

    fn put_path(&mut self, key: &str, v: &Option<PathBuf>) {
        self.put(key, v.as_ref().map(|p| p.display().to_string()));
    }

    fn flag(&mut self, key: &str, on: bool) {
        if on {
            self.0.push((key.to_string(), Value::Boolean(true)));
        }
    }

    fn task(&mut self, t: &TaskArgs) -> Result<()> {
        self.put_usize("task.depth", t.depth)?;
        self.put_usize("task.distractors", t.distractors)
    }

    fn features(&mut self, f: &FeatureArgs) -> Result<()> {
        self.put("features.kind", f.features.clone());
        self.put_usize("features.dim", f.dim)?;
        self.put_path("features.vectors", &f.vectors);
        Ok(())
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut ov = Overrides(Vec::new());
    for raw in &cli.set {
        ov.0.push(config::parse_override(raw)?);
    }
    ov.put_path("run_dir", &cli.run_dir);
    ov.put_path("data.recipes", &cli.recipes);
    ov.put_path("data.split_file", &cli.split_file);
    match &cli.command {
        Command::ValidateData | Command::Plot(_) => {}
        Command::Split(a) => {
            ov.put("split.train_ratio", a.ratio);
            ov.put_u64("split.seed", a.seed)?;
            ov.put("split.mode", a.mode.clone());
        }
        Command::Bench(a) => {
            ov.put_usize("bench.envs", a.envs)?;
            ov.task(&a.task)?;
            ov.put("bench.seconds", a.seconds);
            ov.flag("bench.parallel", a.parallel);
            ov.put_u64("bench.seed", a.seed)?;
        }
        Command::TrainKg(a) => {
            ov.put_usize("kg.epochs", a.epochs)?;
            ov.put_usize("kg.rank", a.rank)?;
            ov.put("kg.scope", a.scope.clone());
            ov.put_u64("kg.seed", a.seed)?;
        }
        Command::TrainAgent(a) => {
            ov.put_u64("train.total_steps", a.steps)?;
            ov.put("train.kg_mode", a.kg_mode.clone());
            ov.put_usize("train.num_envs", a.envs)?;
            ov.put_u64("train.seed", a.seed)?;
            ov.put_u64("agent.seed", a.seed)?;
            ov.put_u64("train.log_interval", a.log_interval)?;
            ov.put_usize("train.eval_tasks", a.eval_tasks)?;
            ov.task(&a.task)?;
            ov.features(&a.features)?;
        }
        Command::Eval(a) => {
            ov.put("eval.policy", a.policy.clone());
            ov.put("train.kg_mode", a.kg_mode.clone());
            ov.put("eval.partition", a.partition.clone());
            ov.put_usize("eval.num_tasks", a.tasks)?;
            ov.put_u64("eval.seed", a.seed)?;
            ov.flag("eval.sample", a.sample);
            ov.task(&a.task)?;
            ov.features(&a.features)?;
        }
        Command::Serve(a) => {
            ov.put("serve.addr", a.addr.clone());
            ov.put("serve.cors_origin", a.cors_origin.clone());
            ov.put_usize("serve.num_train_tasks", a.train_tasks)?;
            ov.put_usize("serve.num_test_tasks", a.test_tasks)?;
            ov.flag("serve.show_solution_on_failure", a.show_solution);
            ov.task(&a.task)?;
        }
    }
    Ok(RunConfig::resolve(cli.config.as_deref(), &ov.0)?)
}

fn load_book(cfg: &RunConfig) -> Result<RecipeBook> {
    match &cfg.data.recipes {
        Some(p) => Ok(formats::load_recipe_book(p)?),
        None => Ok(bundled::example_book()),
    }
}

fn load_split(cfg: &RunConfig, book: &RecipeBook) -> Result<RecipeSplit> {
    match &cfg.data.split_file {
        Some(p) => Ok(formats::load_split(p, book)?),
        None => Ok(split_recipes(book, &cfg.split)?),
    }
}

fn load_features(cfg: &RunConfig, book: &RecipeBook) -> Result<EmbeddingTable> {
    let f = &cfg.features;
    Ok(match f.kind {
        FeatureKind::Pretrained => {
            let path = f.vectors.as_ref().context("features.vectors is required for pretrained features")?;
            embed::load_pretrained(book, &formats::load_word_vectors(path)?)
        }
        FeatureKind::Random => embed::random_table(book, f.dim, f.seed)?,
        FeatureKind::Cooccurrence => features::cooccurrence_features(book, f.dim)?,
    })
}

/// The graph scope a KG mode is meant to be trained on.
fn scope_for(mode: KgMode) -> GraphScope {
    if mode == KgMode::Partial {
        GraphScope::Partial
    } else {
        GraphScope::Full
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match writeln!(io::stdout().lock(), "{text}") {
        // a closed pipe (`| head`) is not an error for us
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

#[derive(Serialize)]
struct DataSummary {
    entities: usize,
    recipes: usize,
    goals: usize,
    self_pair_recipes: usize,
    ambiguous_pairs: usize,
}

fn validate_data(cfg: &RunConfig) -> Result<()> {
    let book = load_book(cfg)?;
    let summary = DataSummary {
        entities: book.num_entities(),
        recipes: book.recipes().len(),
        goals: book.goals().len(),
        self_pair_recipes: book.recipes().iter().filter(|r| r.is_self_pair()).count(),
        ambiguous_pairs: book.pair_index().values().filter(|v| v.len() > 1).count(),
    };
    print_json(&summary)
}

#[derive(Serialize)]
struct SplitSummary {
    path: PathBuf,
    train: usize,
    test: usize,
}

fn split(cfg: &RunConfig, out: Option<PathBuf>) -> Result<()> {
    let book = load_book(cfg)?;
    let split = split_recipes(&book, &cfg.split)?;
    let path = out.unwrap_or_else(|| cfg.run_dir.join("split.json"));
    formats::write_json(&path, &SplitFile::new(&cfg.split, &split))?;
    print_json(&SplitSummary {
        path,
        train: split.train_recipes.len(),
        test: split.test_recipes.len(),
    })
}

fn bench_cmd(cfg: &RunConfig) -> Result<()> {
    if cfg.bench.seconds <= 0.0 {
        bail!("bench.seconds must be positive");
    }
    let book = Arc::new(load_book(cfg)?);
    let split = Arc::new(load_split(cfg, &book)?);
    let mut stream_cfg = StreamConfig::new(Partition::Train, cfg.task.depth, cfg.task.distractors, cfg.bench.seed);
    stream_cfg.max_steps = cfg.task.max_steps;
    let stream = TaskStream::new(book, split, stream_cfg);
    let mut runner = BatchRunner::new(stream, cfg.bench.envs)?;
    let report = bench::benchmark_throughput(
        &mut runner,
        Duration::from_secs_f64(cfg.bench.seconds),
        cfg.bench.seed,
        cfg.bench.parallel,
    )?;
    formats::write_json(&cfg.run_dir.join("bench.json"), &report)?;
    print_json(&report)
}

#[derive(Serialize)]
struct KgSummary {
    checkpoint: PathBuf,
    scope: GraphScope,
    triples: usize,
    initial_loss: Option<f64>,
    final_loss: Option<f64>,
    train_mrr: f64,
    test_mrr: Option<f64>,
    random_mrr: f64,
}

fn train_kg_model(cfg: &RunConfig, book: &RecipeBook, split: &RecipeSplit, scope: GraphScope) -> Result<(ComplExModel, KgSummary)> {
    let mut kg_cfg = cfg.kg.clone();
    kg_cfg.scope = scope;
    let triples = kglink::scope_triples(book, split, scope);
    let (model, losses) = kglink::train(book.num_entities(), &triples, &kg_cfg)?;

    let dir = &cfg.run_dir;
    let mut loss_log = JsonlWriter::create(&dir.join("kg_loss.jsonl"))?;
    for l in &losses {
        loss_log.write(l)?;
    }
    loss_log.flush()?;
    let mut dump = JsonlWriter::create(&dir.join("triples.jsonl"))?;
    for t in &triples {
        dump.write(&TripleRecord::new(book, t))?;
    }
    dump.flush()?;

    let train_metrics = kglink::link_metrics(&model, &triples, &triples);
    let test_mrr = (scope == GraphScope::Partial).then(|| {
        let held_out = kglink::partition_triples(book, split, Partition::Test);
        let held_out: Vec<_> = held_out.into_iter().filter(|t| !triples.contains(t)).collect();
        kglink::link_metrics(&model, &held_out, &triples).mrr
    });
    let meta = KgMetadata {
        rank: kg_cfg.rank,
        num_entities: book.num_entities(),
        relations: Relation::ALL.iter().map(|r| r.name().to_string()).collect(),
        scope,
        seed: kg_cfg.seed,
        epochs: kg_cfg.epochs,
        final_loss: losses.last().map(|l| l.loss),
    };
    let path = dir.join("kg.json");
    formats::save_kg(&path, &model, meta)?;
    let summary = KgSummary {
        checkpoint: path,
        scope,
        triples: triples.len(),
        initial_loss: losses.first().map(|l| l.loss),
        final_loss: losses.last().map(|l| l.loss),
        train_mrr: train_metrics.mrr,
        test_mrr,
        random_mrr: train_metrics.random_mrr,
    };
    Ok((model, summary))
}

fn train_kg(cfg: &RunConfig) -> Result<()> {
    let book = load_book(cfg)?;
    let split = load_split(cfg, &book)?;
    let (_, summary) = train_kg_model(cfg, &book, &split, cfg.kg.scope)?;
    print_json(&summary)
}

fn load_or_train_kg(
    cfg: &RunConfig,
    path: Option<&Path>,
    mode: KgMode,
    book: &RecipeBook,
    split: &RecipeSplit,
) -> Result<Option<ComplExModel>> {
    if !mode.needs_model() {
        return Ok(None);
    }
    let want = scope_for(mode);
    if let Some(p) = path {
        let (model, meta) = formats::load_kg(p)?;
        if meta.scope != want {
            bail!("kg mode {} needs a {want:?}-scope model, {} holds {:?}", mode.name(), p.display(), meta.scope);
        }
        return Ok(Some(model));
    }
    eprintln!("training a {want:?}-scope link predictor for kg mode {}", mode.name());
    let (model, _) = train_kg_model(cfg, book, split, want)?;
    Ok(Some(model))
}

#[derive(Serialize)]
struct AgentSummary {
    checkpoint: PathBuf,
    metrics: PathBuf,
    kg_mode: KgMode,
    steps: u64,
    last: Option<TrainMetrics>,
}

fn train_agent(cfg: &RunConfig, kg_path: Option<&Path>) -> Result<()> {
    let book = Arc::new(load_book(cfg)?);
    let split = Arc::new(load_split(cfg, &book)?);
    let feats = load_features(cfg, &book)?;
    let mode = cfg.train.kg_mode;
    let kg = load_or_train_kg(cfg, kg_path, mode, &book, &split)?;
    let inputs = Inputs::new(&feats, kg.as_ref(), mode)?;

    let mut stream_cfg = StreamConfig::new(Partition::Train, cfg.task.depth, cfg.task.distractors, cfg.train.seed);
    stream_cfg.reward = cfg.task.reward_config();
    stream_cfg.max_steps = cfg.task.max_steps;
    let runner = BatchRunner::new(TaskStream::new(book.clone(), split.clone(), stream_cfg), cfg.train.num_envs)?;
    let net = AgentNet::new(cfg.agent.agent_config(feats.dim()));

    let metrics_path = cfg.run_dir.join("metrics.jsonl");
    let mut log = JsonlWriter::create(&metrics_path)?;
    let mut log_err = None;
    let (net, history) = a2c_train(net, runner, inputs, cfg.train.clone(), |m| {
        eprintln!("{}", serde_json::to_string(m).expect("metrics serialize"));
        if let Err(e) = log.write(m).and_then(|_| log.flush()) {
            log_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_err {
        return Err(e.into());
    }
    let steps = history.last().map_or(0, |m| m.step);
    let ckpt = cfg.run_dir.join("agent.json");
    let meta = AgentMetadata {
        config: *net.config(),
        kg_mode: mode,
        features: feats.source().clone(),
        steps,
    };
    formats::save_agent(&ckpt, &net, meta)?;
    print_json(&AgentSummary {
        checkpoint: ckpt,
        metrics: metrics_path,
        kg_mode: mode,
        steps,
        last: history.last().cloned(),
    })
}

fn kg_path_or_default(cfg: &RunConfig, given: Option<PathBuf>) -> Option<PathBuf> {
    given.or_else(|| {
        let p = cfg.run_dir.join("kg.json");
        p.exists().then_some(p)
    })
}

fn eval_cmd(cfg: &RunConfig, agent: Option<PathBuf>, kg: Option<PathBuf>) -> Result<()> {
    let book = load_book(cfg)?;
    let split = load_split(cfg, &book)?;
    let mut eval_cfg = EvalConfig::new(
        cfg.eval.partition,
        cfg.task.depth,
        cfg.task.distractors,
        cfg.eval.num_tasks,
        cfg.eval.seed,
    );
    eval_cfg.reward = cfg.task.reward_config();
    eval_cfg.max_steps = cfg.task.max_steps;

    let kg_file = kg_path_or_default(cfg, kg);
    let report = match cfg.eval.policy {
        PolicyKind::Random => evalkit::evaluate(&mut RandomPolicy::new(rng::mix(cfg.eval.seed, 1)), &book, &split, &eval_cfg)?,
        PolicyKind::Oracle => {
            let mut p = OraclePolicy {
                max_steps: cfg.max_steps(),
            };
            evalkit::evaluate(&mut p, &book, &split, &eval_cfg)?
        }
        PolicyKind::KgGreedy => {
            let mode = cfg.train.kg_mode;
            if !mode.needs_model() {
                bail!("kg-greedy needs a kg mode other than none");
            }
            let model = load_or_train_kg(cfg, kg_file.as_deref(), mode, &book, &split)?.expect("mode needs a model");
            let mut p = KgGreedyPolicy { model: &model, mode };
            evalkit::evaluate(&mut p, &book, &split, &eval_cfg)?
        }
        PolicyKind::Agent => {
            let path = agent.unwrap_or_else(|| cfg.run_dir.join("agent.json"));
            let (net, meta) = formats::load_agent(&path).with_context(|| format!("loading agent {}", path.display()))?;
            let feats = load_features(cfg, &book)?;
            if feats.dim() != meta.config.embed_dim {
                bail!(
                    "agent expects {}-dimensional features, configuration gives {}",
                    meta.config.embed_dim,
                    feats.dim()
                );
            }
            let kg_model = load_or_train_kg(cfg, kg_file.as_deref(), meta.kg_mode, &book, &split)?;
            let inputs = Inputs::new(&feats, kg_model.as_ref(), meta.kg_mode)?;
            let mut p: Box<dyn Policy> = if cfg.eval.sample {
                Box::new(TrainedPolicy::sampling(&net, inputs, rng::mix(cfg.eval.seed, 2)))
            } else {
                Box::new(TrainedPolicy::greedy(&net, inputs))
            };
            evalkit::evaluate(p.as_mut(), &book, &split, &eval_cfg)?
        }
    };
    let name = format!(
        "{}-{}-d{}-k{}-s{}.json",
        report.policy.replace([':', '/', ' '], "_"),
        if report.partition == Partition::Test { "test" } else { "train" },
        report.depth,
        report.num_distractors,
        report.seed
    );
    let path = cfg.run_dir.join("eval").join(name);
    formats::write_json(&path, &report)?;
    formats::append_eval_csv(&cfg.run_dir.join("eval.csv"), &report)?;
    print_json(&formats::EvalRow::from(&report))
}

fn parse_metric(s: &str) -> Result<Metric> {
    serde_json::from_value(serde_json::Value::String(s.into()))
        .with_context(|| format!("unknown metric {s}; use train-success, zero-shot-success, return or entropy"))
}

fn plot_cmd(cfg: &RunConfig, args: &PlotArgs) -> Result<()> {
    let metric = parse_metric(&args.metric)?;
    let mut series = Vec::new();
    for raw in &args.inputs {
        let (path, label) = match raw.split_once('=') {
            Some((p, l)) => (PathBuf::from(p), l.to_string()),
            None => {
                let p = PathBuf::from(raw);
                let label = p
                    .parent()
                    .and_then(|d| d.file_name())
                    .or_else(|| p.file_stem())
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| raw.clone());
                (p, label)
            }
        };
        let metrics: Vec<TrainMetrics> = formats::read_jsonl(&path)?;
        series.push(Series::from_metrics(label, &metrics, metric));
    }
    let out = args.out.clone().unwrap_or_else(|| cfg.run_dir.join("plot.svg"));
    formats::write_text(&out, &plot::render_svg(&args.title, metric, &series))?;
    print_json(&serde_json::json!({ "svg": out, "series": series.len() }))
}

fn serve_cmd(cfg: &RunConfig, log_dir: Option<PathBuf>) -> Result<()> {
    let book = Arc::new(load_book(cfg)?);
    let split = Arc::new(load_split(cfg, &book)?);
    let protocol = Protocol {
        num_train_tasks: cfg.serve.num_train_tasks,
        num_test_tasks: cfg.serve.num_test_tasks,
        depth: cfg.task.depth,
        distractors: cfg.task.distractors,
        max_steps: cfg.task.max_steps,
        show_solution_on_failure: cfg.serve.show_solution_on_failure,
    };
    let log_dir = log_dir.unwrap_or_else(|| cfg.run_dir.join("sessions"));
    let mut svc = PlayService::new(book, split, protocol).with_log_dir(&log_dir);
    if cfg.data.split_file.is_none() {
        svc = svc.with_split_spec(cfg.split);
    }
    let cors = playsvc::http::cors(cfg.serve.cors_origin.as_deref()).context("serve.cors_origin is not a valid header value")?;
    let app = playsvc::http::router(Arc::new(svc), cors);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&cfg.serve.addr)
            .await
            .with_context(|| format!("binding {}", cfg.serve.addr))?;
        let addr = listener.local_addr()?;
        println!("{}", serde_json::json!({ "listening": addr.to_string(), "log_dir": log_dir }));
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let cfg = resolve(&cli)?;
    cfg.write_resolved()?;
    match cli.command {
        Command::ValidateData => validate_data(&cfg),
        Command::Split(a) => split(&cfg, a.out),
        Command::Bench(_) => bench_cmd(&cfg),
        Command::TrainKg(_) => train_kg(&cfg),
        Command::TrainAgent(a) => train_agent(&cfg, a.kg.as_deref()),
        Command::Eval(a) => eval_cmd(&cfg, a.agent, a.kg),
        Command::Plot(ref a) => plot_cmd(&cfg, a),
        Command::Serve(a) => serve_cmd(&cfg, a.log_dir),
    }
}
