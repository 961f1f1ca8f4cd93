//! Human play sessions: a fixed sequence of train tasks followed by test
//! tasks, driven one slot at a time.
//!
//! The server is authoritative. Clients see names only, never recipe
//! data, and every accepted action is appended to the session's JSON-lines
//! log together with the task it belongs to, so results can be recomputed
//! from the log alone.

pub mod http;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use wordcraft_core::env::{self, Action, EnvError, EnvState, Event, Partition, RewardConfig, TaskSampler, TaskSpec};
use wordcraft_core::evalkit::{self, EvalConfig, EvalReport, TaskRecord};
use wordcraft_core::recipes::{RecipeBook, RecipeSplit, SplitSpec};
use wordcraft_core::rng;
use wordcraft_core::EntityId;

use crate::formats::{FormatError, JsonlWriter};

/// Label mixed into the seed for the test-phase task sequence.
const TEST_STREAM: u64 = 0x7465_7374;

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("unknown session {0}")]
    NotFound(String),
    #[error("session is finished")]
    Finished,
    #[error("slot {slot} is out of range for a table of {len}")]
    InvalidSlot { slot: usize, len: usize },
    #[error("stale action: client expected step {expected}, session is at step {actual}")]
    StaleStep { expected: usize, actual: usize },
    #[error("invalid protocol: {0}")]
    Protocol(String),
    #[error("could not sample {phase:?} task {index}: {source}")]
    Sampling {
        phase: Phase,
        index: usize,
        source: EnvError,
    },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Log(#[from] FormatError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Protocol {
    pub num_train_tasks: usize,
    pub num_test_tasks: usize,
    pub depth: usize,
    pub distractors: usize,
    /// Omitted means the agents' default budget for `depth`.
    pub max_steps: Option<usize>,
    /// After a failed train task, reveal the recipes that would have
    /// solved it.
    pub show_solution_on_failure: bool,
}

impl Default for Protocol {
    fn default() -> Self {
        Protocol {
            num_train_tasks: 40,
            num_test_tasks: 40,
            depth: 1,
            distractors: 1,
            max_steps: None,
            show_solution_on_failure: false,
        }
    }
}

impl Protocol {
    pub fn max_steps(&self) -> usize {
        self.max_steps.unwrap_or_else(|| env::default_max_steps(self.depth))
    }

    fn validate(&self) -> Result<(), SessionError> {
        if self.depth == 0 {
            return Err(SessionError::Protocol("depth must be at least 1".into()));
        }
        if self.max_steps == Some(0) {
            return Err(SessionError::Protocol("max_steps must be positive".into()));
        }
        if self.num_train_tasks + self.num_test_tasks == 0 {
            return Err(SessionError::Protocol("protocol has no tasks".into()));
        }
        Ok(())
    }

    fn count(&self, phase: Phase) -> usize {
        match phase {
            Phase::Train => self.num_train_tasks,
            Phase::Test => self.num_test_tasks,
            Phase::Finished => 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Train,
    Test,
    Finished,
}

impl Phase {
    fn partition(self) -> Option<Partition> {
        match self {
            Phase::Train => Some(Partition::Train),
            Phase::Test => Some(Partition::Test),
            Phase::Finished => None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CreateRequest {
    pub protocol: Option<Protocol>,
    pub seed: u64,
    pub participant: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionRequest {
    pub slot: usize,
    /// The `steps_taken` the client last saw. A mismatch means the request
    /// is a retry or out of order, and it is rejected without effect.
    #[serde(default)]
    pub expected_step: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub completed: usize,
    pub successes: usize,
    pub success_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateView {
    pub session_id: String,
    pub phase: Phase,
    /// Zero-based index of the current task within its phase.
    pub task_index: usize,
    pub tasks_in_phase: usize,
    pub goal: Option<String>,
    pub table: Vec<String>,
    pub selected: Option<String>,
    pub steps_taken: usize,
    pub steps_remaining: usize,
    pub max_steps: usize,
    pub train: PhaseSummary,
    pub test: PhaseSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventView {
    Selected { entity: String },
    Combined { pair: [String; 2], results: Vec<String> },
    InvalidCombo { pair: [String; 2] },
    GoalReached,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecipeView {
    pub result: String,
    pub ingredients: [String; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepView {
    pub events: Vec<EventView>,
    /// Sparse reward: 1 on success, otherwise 0.
    pub reward: f64,
    pub done: bool,
    pub success: bool,
    /// Recipes of the task just failed, when the protocol allows it.
    pub solution: Option<Vec<RecipeView>>,
    pub state: StateView,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub session_id: String,
    pub participant: Option<String>,
    pub seed: u64,
    pub protocol: Protocol,
    pub split: Option<SplitSpec>,
    pub max_steps: usize,
    pub phase: Phase,
    pub train: EvalReport,
    pub test: EvalReport,
}

/// One line of a session log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum LogRecord {
    Created {
        session_id: String,
        participant: Option<String>,
        seed: u64,
        protocol: Protocol,
        split: Option<SplitSpec>,
    },
    TaskStarted {
        phase: Phase,
        index: usize,
        task: TaskSpec,
    },
    Step {
        phase: Phase,
        index: usize,
        step: usize,
        slot: usize,
        digest: u64,
        reward: f64,
        done: bool,
        success: bool,
        events: Vec<EventView>,
    },
    TaskFinished {
        phase: Phase,
        index: usize,
        success: bool,
        steps: usize,
    },
}

/// Task `index` of `phase` for a session seeded with `seed`.
pub fn phase_task_seed(seed: u64, phase: Phase, index: usize) -> u64 {
    match phase {
        Phase::Test => rng::mix(rng::mix(seed, TEST_STREAM), index as u64),
        _ => rng::mix(seed, index as u64),
    }
}

pub struct Session {
    id: String,
    participant: Option<String>,
    seed: u64,
    protocol: Protocol,
    split_spec: Option<SplitSpec>,
    book: Arc<RecipeBook>,
    tasks: Vec<(Phase, usize, TaskSpec)>,
    cursor: usize,
    state: Option<EnvState>,
    actions: Vec<usize>,
    self_paired: bool,
    records: HashMap<Phase, Vec<TaskRecord>>,
    log: Option<JsonlWriter>,
}

impl Session {
    fn create(
        id: String,
        req: CreateRequest,
        defaults: &Protocol,
        book: Arc<RecipeBook>,
        split: &RecipeSplit,
        split_spec: Option<SplitSpec>,
        log_path: Option<&Path>,
    ) -> Result<Session, SessionError> {
        let protocol = req.protocol.unwrap_or_else(|| defaults.clone());
        protocol.validate()?;
        let mut tasks = Vec::with_capacity(protocol.num_train_tasks + protocol.num_test_tasks);
        for phase in [Phase::Train, Phase::Test] {
            let partition = phase.partition().expect("active phase");
            let sampler = TaskSampler::new(&book, split, partition);
            for index in 0..protocol.count(phase) {
                let seed = phase_task_seed(req.seed, phase, index);
                let task = sampler
                    .sample(&book, protocol.depth, protocol.distractors, seed)
                    .map_err(|source| SessionError::Sampling { phase, index, source })?;
                tasks.push((phase, index, task));
            }
        }
        let log = match log_path {
            Some(p) => Some(JsonlWriter::create(p)?),
            None => None,
        };
        let mut s = Session {
            id,
            participant: req.participant,
            seed: req.seed,
            protocol,
            split_spec,
            book,
            tasks,
            cursor: 0,
            state: None,
            actions: Vec::new(),
            self_paired: false,
            records: HashMap::new(),
            log,
        };
        s.write(&LogRecord::Created {
            session_id: s.id.clone(),
            participant: s.participant.clone(),
            seed: s.seed,
            protocol: s.protocol.clone(),
            split: s.split_spec,
        })?;
        s.start_task()?;
        Ok(s)
    }

    fn write(&mut self, rec: &LogRecord) -> Result<(), SessionError> {
        if let Some(w) = &mut self.log {
            w.write(rec)?;
            w.flush()?;
        }
        Ok(())
    }

    fn start_task(&mut self) -> Result<(), SessionError> {
        self.actions.clear();
        self.self_paired = false;
        match self.tasks.get(self.cursor) {
            Some((phase, index, task)) => {
                self.state = Some(env::reset(task));
                let rec = LogRecord::TaskStarted {
                    phase: *phase,
                    index: *index,
                    task: task.clone(),
                };
                self.write(&rec)
            }
            None => {
                self.state = None;
                Ok(())
            }
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn phase(&self) -> Phase {
        self.tasks.get(self.cursor).map_or(Phase::Finished, |t| t.0)
    }

    fn name(&self, id: EntityId) -> String {
        self.book.name(id).to_string()
    }

    fn summary(&self, phase: Phase) -> PhaseSummary {
        let recs = self.records.get(&phase).map(Vec::as_slice).unwrap_or(&[]);
        let successes = recs.iter().filter(|r| r.success).count();
        PhaseSummary {
            completed: recs.len(),
            successes,
            success_rate: if recs.is_empty() {
                0.0
            } else {
                successes as f64 / recs.len() as f64
            },
        }
    }

    pub fn view(&self) -> StateView {
        let max_steps = self.protocol.max_steps();
        let phase = self.phase();
        let (task_index, goal, table, selected, steps) = match (&self.state, self.tasks.get(self.cursor)) {
            (Some(s), Some((_, index, _))) => (
                *index,
                Some(self.name(s.goal)),
                s.table.iter().map(|&e| self.name(e)).collect(),
                (!s.selected.is_empty()).then(|| self.name(s.selected)),
                s.steps_taken,
            ),
            _ => (0, None, Vec::new(), None, 0),
        };
        StateView {
            session_id: self.id.clone(),
            phase,
            task_index,
            tasks_in_phase: self.protocol.count(phase),
            goal,
            table,
            selected,
            steps_taken: steps,
            steps_remaining: if phase == Phase::Finished { 0 } else { max_steps - steps },
            max_steps,
            train: self.summary(Phase::Train),
            test: self.summary(Phase::Test),
        }
    }

    fn event_view(&self, e: &Event) -> EventView {
        match e {
            Event::Selected { entity } => EventView::Selected {
                entity: self.name(*entity),
            },
            Event::Combined { pair, results } => EventView::Combined {
                pair: [self.name(pair.0), self.name(pair.1)],
                results: results.iter().map(|&r| self.name(r)).collect(),
            },
            Event::InvalidCombo { pair } => EventView::InvalidCombo {
                pair: [self.name(pair.0), self.name(pair.1)],
            },
            Event::GoalReached => EventView::GoalReached,
        }
    }

    /// Applies one slot choice. Rejected actions leave the session as it
    /// was.
    pub fn act(&mut self, req: &ActionRequest) -> Result<StepView, SessionError> {
        let state = self.state.as_ref().ok_or(SessionError::Finished)?;
        if let Some(expected) = req.expected_step {
            if expected != state.steps_taken {
                return Err(SessionError::StaleStep {
                    expected,
                    actual: state.steps_taken,
                });
            }
        }
        if req.slot >= state.table.len() {
            return Err(SessionError::InvalidSlot {
                slot: req.slot,
                len: state.table.len(),
            });
        }
        let (phase, index, task) = self.tasks[self.cursor].clone();
        let out = env::step(
            state,
            Action::new(req.slot),
            &self.book,
            &RewardConfig::sparse(),
            self.protocol.max_steps(),
        )?;
        self.actions.push(req.slot);
        self.self_paired |= evalkit::pairs_entity_with_itself(&out.events);
        let events: Vec<EventView> = out.events.iter().map(|e| self.event_view(e)).collect();
        let done = out.state.done;
        let success = out.state.success;
        self.write(&LogRecord::Step {
            phase,
            index,
            step: out.state.steps_taken,
            slot: req.slot,
            digest: out.state.digest(),
            reward: out.reward,
            done,
            success,
            events: events.clone(),
        })?;
        let mut solution = None;
        if done {
            let record = TaskRecord::from_episode(
                index,
                &task,
                &out.state,
                out.reward,
                self.self_paired,
                std::mem::take(&mut self.actions),
            );
            self.records.entry(phase).or_default().push(record);
            self.write(&LogRecord::TaskFinished {
                phase,
                index,
                success,
                steps: out.state.steps_taken,
            })?;
            if !success && phase == Phase::Train && self.protocol.show_solution_on_failure {
                solution = Some(
                    task.intended_tree
                        .iter()
                        .map(|r| RecipeView {
                            result: self.name(r.result),
                            ingredients: [self.name(r.ingredients.0), self.name(r.ingredients.1)],
                        })
                        .collect(),
                );
            }
            self.cursor += 1;
            self.start_task()?;
        } else {
            self.state = Some(out.state);
        }
        Ok(StepView {
            events,
            reward: out.reward,
            done,
            success,
            solution,
            state: self.view(),
        })
    }

    fn phase_report(&self, phase: Phase) -> EvalReport {
        let cfg = EvalConfig::new(
            phase.partition().expect("active phase"),
            self.protocol.depth,
            self.protocol.distractors,
            self.protocol.count(phase),
            self.seed,
        );
        let label = match &self.participant {
            Some(p) => format!("human:{p}"),
            None => "human".to_string(),
        };
        let records = self.records.get(&phase).cloned().unwrap_or_default();
        EvalReport::from_records(label, None, &cfg, self.protocol.max_steps(), records)
    }

    pub fn report(&self) -> SessionReport {
        SessionReport {
            session_id: self.id.clone(),
            participant: self.participant.clone(),
            seed: self.seed,
            protocol: self.protocol.clone(),
            split: self.split_spec,
            max_steps: self.protocol.max_steps(),
            phase: self.phase(),
            train: self.phase_report(Phase::Train),
            test: self.phase_report(Phase::Test),
        }
    }

    /// The full task sequence, train tasks first.
    pub fn tasks(&self) -> impl Iterator<Item = &TaskSpec> {
        self.tasks.iter().map(|t| &t.2)
    }
}

/// Shared registry of sessions. Each session sits behind its own lock, so
/// requests to one session are serialized while different sessions
/// proceed independently.
pub struct PlayService {
    book: Arc<RecipeBook>,
    split: Arc<RecipeSplit>,
    split_spec: Option<SplitSpec>,
    defaults: Protocol,
    log_dir: Option<PathBuf>,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
}

impl PlayService {
    pub fn new(book: Arc<RecipeBook>, split: Arc<RecipeSplit>, defaults: Protocol) -> Self {
        PlayService {
            book,
            split,
            split_spec: None,
            defaults,
            log_dir: None,
            sessions: Mutex::new(HashMap::new()),
        }
    }

    /// Records the split parameters in session logs and reports.
    pub fn with_split_spec(mut self, spec: SplitSpec) -> Self {
        self.split_spec = Some(spec);
        self
    }

    /// Writes one `<session id>.jsonl` log per session under `dir`.
    pub fn with_log_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.log_dir = Some(dir.into());
        self
    }

    pub fn book(&self) -> &RecipeBook {
        &self.book
    }

    pub fn log_path(&self, id: &str) -> Option<PathBuf> {
        self.log_dir.as_ref().map(|d| d.join(format!("{id}.jsonl")))
    }

    pub fn create(&self, req: CreateRequest) -> Result<StateView, SessionError> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let log = self.log_path(&id);
        let session = Session::create(
            id.clone(),
            req,
            &self.defaults,
            self.book.clone(),
            &self.split,
            self.split_spec,
            log.as_deref(),
        )?;
        let view = session.view();
        self.sessions
            .lock()
            .expect("session map lock")
            .insert(id, Arc::new(Mutex::new(session)));
        Ok(view)
    }

    fn get(&self, id: &str) -> Result<Arc<Mutex<Session>>, SessionError> {
        self.sessions
            .lock()
            .expect("session map lock")
            .get(id)
            .cloned()
            .ok_or_else(|| SessionError::NotFound(id.to_string()))
    }

    pub fn with_session<T>(&self, id: &str, f: impl FnOnce(&mut Session) -> T) -> Result<T, SessionError> {
        let s = self.get(id)?;
        let mut guard = s.lock().expect("session lock");
        Ok(f(&mut guard))
    }

    pub fn state(&self, id: &str) -> Result<StateView, SessionError> {
        self.with_session(id, |s| s.view())
    }

    pub fn act(&self, id: &str, req: &ActionRequest) -> Result<StepView, SessionError> {
        self.with_session(id, |s| s.act(req))?
    }

    pub fn report(&self, id: &str) -> Result<SessionReport, SessionError> {
        self.with_session(id, |s| s.report())
    }
}

/// Success counts per phase recomputed from a session log by replaying
/// every logged slot through the environment, independent of the
/// session's own bookkeeping.
pub fn replay_log(records: &[LogRecord], book: &RecipeBook) -> Result<HashMap<Phase, (usize, usize)>, EnvError> {
    let mut max_steps = 0;
    let mut current: Option<(Phase, EnvState)> = None;
    let mut tally: HashMap<Phase, (usize, usize)> = HashMap::new();
    for rec in records {
        match rec {
            LogRecord::Created { protocol, .. } => max_steps = protocol.max_steps(),
            LogRecord::TaskStarted { phase, task, .. } => current = Some((*phase, env::reset(task))),
            LogRecord::Step { slot, .. } => {
                let Some((phase, state)) = current.take() else {
                    continue;
                };
                let out = env::step(&state, Action::new(*slot), book, &RewardConfig::sparse(), max_steps)?;
                if out.state.done {
                    let t = tally.entry(phase).or_default();
                    t.0 += 1;
                    t.1 += usize::from(out.state.success);
                } else {
                    current = Some((phase, out.state));
                }
            }
            LogRecord::TaskFinished { .. } => {}
        }
    }
    Ok(tally)
}

#[cfg(test)]
mod tests {
    use super::*;
    use wordcraft_core::bundled;
    use wordcraft_core::recipes::split_recipes;

    fn service(book: RecipeBook, split: RecipeSplit) -> PlayService {
        PlayService::new(Arc::new(book), Arc::new(split), Protocol::default())
    }

    fn mud_service(num_train: usize, num_test: usize) -> PlayService {
        let book = RecipeBook::from_names(["water", "earth", "mud"], [("mud", ["water", "earth"])]).unwrap();
        let split = RecipeSplit::all_train(&book);
        let defaults = Protocol {
            num_train_tasks: num_train,
            num_test_tasks: num_test,
            depth: 1,
            distractors: 0,
            ..Protocol::default()
        };
        PlayService::new(Arc::new(book), Arc::new(split), defaults)
    }

    fn slot_of(view: &StateView, name: &str) -> usize {
        view.table.iter().position(|n| n == name).unwrap()
    }

    #[test]
    fn default_protocol_starts_in_train() {
        let book = bundled::example_book();
        let split = split_recipes(&book, &SplitSpec::default()).unwrap();
        let svc = service(book, split);
        let v = svc.create(CreateRequest::default()).unwrap();
        assert_eq!(v.phase, Phase::Train);
        assert_eq!(v.tasks_in_phase, 40);
        let n = svc.with_session(&v.session_id, |s| s.tasks().count()).unwrap();
        assert_eq!(n, 80);
    }

    #[test]
    fn zero_train_tasks_starts_in_test() {
        let book = bundled::example_book();
        let split = split_recipes(&book, &SplitSpec::default()).unwrap();
        let svc = service(book, split);
        let req = CreateRequest {
            protocol: Some(Protocol {
                num_train_tasks: 0,
                num_test_tasks: 3,
                ..Protocol::default()
            }),
            ..CreateRequest::default()
        };
        assert_eq!(svc.create(req).unwrap().phase, Phase::Test);
    }

    #[test]
    fn same_seed_same_tasks() {
        let book = bundled::example_book();
        let split = split_recipes(&book, &SplitSpec::default()).unwrap();
        let svc = service(book, split);
        let req = CreateRequest {
            seed: 5,
            ..CreateRequest::default()
        };
        let a = svc.create(req.clone()).unwrap().session_id;
        let b = svc.create(req).unwrap().session_id;
        let ta: Vec<TaskSpec> = svc.with_session(&a, |s| s.tasks().cloned().collect()).unwrap();
        let tb: Vec<TaskSpec> = svc.with_session(&b, |s| s.tasks().cloned().collect()).unwrap();
        assert_eq!(ta, tb);
    }

    #[test]
    fn test_tasks_end_in_test_recipes() {
        let book = bundled::example_book();
        let split = split_recipes(&book, &SplitSpec::default()).unwrap();
        let svc = service(book.clone(), split.clone());
        let id = svc.create(CreateRequest::default()).unwrap().session_id;
        svc.with_session(&id, |s| {
            for (phase, _, task) in &s.tasks {
                let r = book.recipe_index(task.final_recipe().unwrap()).unwrap();
                match phase {
                    Phase::Train => assert!(task.intended_tree.iter().all(|x| split.is_train(book.recipe_index(x).unwrap()))),
                    _ => assert!(split.is_test(r)),
                }
            }
        })
        .unwrap();
    }

    #[test]
    fn mud_flow() {
        let svc = mud_service(1, 0);
        let v = svc.create(CreateRequest::default()).unwrap();
        assert_eq!(v.goal.as_deref(), Some("mud"));
        let mut sorted = v.table.clone();
        sorted.sort();
        assert_eq!(sorted, ["earth", "water"]);
        assert_eq!(v.selected, None);
        let id = v.session_id.clone();

        let step = svc
            .act(&id, &ActionRequest { slot: slot_of(&v, "water"), expected_step: Some(0) })
            .unwrap();
        assert_eq!(step.state.selected.as_deref(), Some("water"));
        assert_eq!(step.reward, 0.0);
        assert!(!step.done);

        let step = svc
            .act(&id, &ActionRequest { slot: slot_of(&step.state, "earth"), expected_step: Some(1) })
            .unwrap();
        assert!(step.done && step.success);
        assert_eq!(step.reward, 1.0);
        assert!(step.events.contains(&EventView::GoalReached));
        assert_eq!(step.state.phase, Phase::Finished);
        assert_eq!(step.state.train.successes, 1);

        let err = svc.act(&id, &ActionRequest { slot: 0, expected_step: None });
        assert!(matches!(err, Err(SessionError::Finished)));
        let rep = svc.report(&id).unwrap();
        assert_eq!(rep.train.success_rate, 1.0);
        assert_eq!(rep.test.num_tasks, 0);
    }

    #[test]
    fn invalid_slot_and_stale_step_change_nothing() {
        let svc = mud_service(2, 0);
        let v = svc.create(CreateRequest::default()).unwrap();
        let id = v.session_id.clone();
        let err = svc.act(&id, &ActionRequest { slot: 9, expected_step: None });
        assert!(matches!(err, Err(SessionError::InvalidSlot { slot: 9, len: 2 })));
        svc.act(&id, &ActionRequest { slot: 0, expected_step: Some(0) }).unwrap();
        let before = svc.state(&id).unwrap();
        // a retried request carries the old step counter
        let err = svc.act(&id, &ActionRequest { slot: 0, expected_step: Some(0) });
        assert!(matches!(err, Err(SessionError::StaleStep { expected: 0, actual: 1 })));
        assert_eq!(svc.state(&id).unwrap(), before);
        assert!(matches!(svc.state("nope"), Err(SessionError::NotFound(_))));
    }

    #[test]
    fn budget_exhaustion_fails_and_advances() {
        let svc = mud_service(2, 0);
        let v = svc.create(CreateRequest::default()).unwrap();
        let id = v.session_id.clone();
        // self-pairing water twice burns the 4-step budget
        let w = slot_of(&v, "water");
        let mut last = None;
        for _ in 0..4 {
            last = Some(svc.act(&id, &ActionRequest { slot: w, expected_step: None }).unwrap());
        }
        let last = last.unwrap();
        assert!(last.done && !last.success);
        assert_eq!(last.state.phase, Phase::Train);
        assert_eq!(last.state.task_index, 1);
        assert_eq!(last.state.steps_taken, 0);
        assert!(last.solution.is_none());
        let rep = svc.report(&id).unwrap();
        assert_eq!(rep.train.records[0].steps, 4);
        assert!(rep.train.records[0].repeated_selection);
    }

    #[test]
    fn solution_shown_only_when_enabled() {
        let svc = mud_service(1, 0);
        let req = CreateRequest {
            protocol: Some(Protocol {
                num_train_tasks: 1,
                num_test_tasks: 0,
                distractors: 0,
                show_solution_on_failure: true,
                ..Protocol::default()
            }),
            ..CreateRequest::default()
        };
        let id = svc.create(req).unwrap().session_id;
        let mut last = None;
        for _ in 0..4 {
            last = Some(svc.act(&id, &ActionRequest { slot: 0, expected_step: None }).unwrap());
        }
        let sol = last.unwrap().solution.unwrap();
        assert_eq!(sol[0].result, "mud");
    }

    #[test]
    fn hay_self_pair() {
        let book = RecipeBook::from_names(["hay", "hay bale"], [("hay bale", ["hay", "hay"])]).unwrap();
        let split = RecipeSplit::all_train(&book);
        let defaults = Protocol {
            num_train_tasks: 1,
            num_test_tasks: 0,
            distractors: 0,
            ..Protocol::default()
        };
        let svc = PlayService::new(Arc::new(book), Arc::new(split), defaults);
        let v = svc.create(CreateRequest::default()).unwrap();
        assert_eq!(v.table, ["hay"]);
        let id = v.session_id.clone();
        svc.act(&id, &ActionRequest { slot: 0, expected_step: Some(0) }).unwrap();
        let step = svc.act(&id, &ActionRequest { slot: 0, expected_step: Some(1) }).unwrap();
        assert!(step.success);
        assert_eq!(
            step.events[0],
            EventView::Combined {
                pair: ["hay".into(), "hay".into()],
                results: vec!["hay bale".into()]
            }
        );
        assert!(!svc.report(&id).unwrap().train.records[0].repeated_selection);
    }

    #[test]
    fn view_has_names_only() {
        let svc = mud_service(1, 0);
        let v = svc.create(CreateRequest::default()).unwrap();
        let json = serde_json::to_value(&v).unwrap();
        let keys: Vec<&str> = json.as_object().unwrap().keys().map(String::as_str).collect();
        for forbidden in ["recipes", "intended_tree", "solution", "results"] {
            assert!(!keys.contains(&forbidden));
        }
    }
}
