//! Synchronous n-step advantage actor-critic.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AgentError, AgentNet, Inputs, KgMode};
use crate::diffmath::{Optimizer, OptimizerState, Tape, Tensor, Var};
use crate::env::{Action, EnvState, Partition};
use crate::evalkit::{self, EvalConfig, TrainedPolicy};
use crate::rng;
use crate::vecenv::BatchRunner;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    pub num_envs: usize,
    pub unroll: usize,
    pub rms_eps: f64,
    pub rms_decay: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub reduction: LossReduction,
    pub total_steps: u64,
    pub seed: u64,
    pub kg_mode: KgMode,
    /// Environment steps between metric records.
    pub log_interval: u64,
    /// Test-partition tasks evaluated greedily at each record; 0 skips.
    pub eval_tasks: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 0.99,
            learning_rate: 0.001,
            num_envs: 128,
            unroll: 2,
            rms_eps: 0.01,
            rms_decay: 0.99,
            entropy_coef: 0.01,
            value_coef: 0.5,
            reduction: LossReduction::Sum,
            total_steps: 3_000_000,
            seed: 0,
            kg_mode: KgMode::None,
            log_interval: 10_000,
            eval_tasks: 100,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), AgentError> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(AgentError::Config("gamma must lie in [0, 1]"));
        }
        if self.unroll == 0 || self.num_envs == 0 {
            return Err(AgentError::Config("unroll and num_envs must be positive"));
        }
        if !(self.learning_rate > 0.0) || !(self.rms_eps > 0.0) {
            return Err(AgentError::Config("learning rate and epsilon must be positive"));
        }
        if self.log_interval == 0 {
            return Err(AgentError::Config("log interval must be positive"));
        }
        Ok(())
    }
}

/// How per-transition loss terms are combined over batch and time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossReduction {
    Sum,
    Mean,
}

/// One metrics record, covering the steps since the previous record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub step: u64,
    pub split: String,
    pub episodes: u64,
    pub return_mean: f64,
    pub success_rate: f64,
    pub zero_shot_success_rate: Option<f64>,
    pub entropy: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub loss: f64,
}

/// Statistics of a single parameter update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    /// Mean policy entropy over the rollout states.
    pub entropy: f64,
    pub loss: f64,
    pub episodes: u64,
    pub successes: u64,
    pub return_sum: f64,
}

struct StepRecord {
    graph: super::BatchGraph,
    actions: Vec<usize>,
    rewards: Vec<f64>,
    dones: Vec<bool>,
}

/// Owns the net, optimizer state and env batch for one training run.
pub struct A2cTrainer<'a> {
    net: AgentNet,
    runner: BatchRunner,
    inputs: Inputs<'a>,
    cfg: TrainConfig,
    opt: Optimizer,
    opt_state: OptimizerState,
    rng: ChaCha8Rng,
    updates: u64,
}

impl<'a> A2cTrainer<'a> {
    pub fn new(net: AgentNet, runner: BatchRunner, inputs: Inputs<'a>, cfg: TrainConfig) -> Result<Self, AgentError> {
        cfg.validate()?;
        if runner.num_envs() != cfg.num_envs {
            return Err(AgentError::Config("runner size differs from num_envs"));
        }
        if inputs.mode != cfg.kg_mode {
            return Err(AgentError::Config("inputs use a different kg mode than the config"));
        }
        let opt = Optimizer::RmsProp {
            lr: cfg.learning_rate,
            eps: cfg.rms_eps,
            decay: cfg.rms_decay,
        };
        let opt_state = OptimizerState::new(net.params());
        let rng = rng::seeded(rng::mix(cfg.seed, 0x6163_7473));
        Ok(A2cTrainer {
            net,
            runner,
            inputs,
            cfg,
            opt,
            opt_state,
            rng,
            updates: 0,
        })
    }

    pub fn net(&self) -> &AgentNet {
        &self.net
    }

    pub fn into_net(self) -> AgentNet {
        self.net
    }

    pub fn runner(&self) -> &BatchRunner {
        &self.runner
    }

    pub fn steps(&self) -> u64 {
        self.runner.total_steps()
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    fn sample(&mut self, probs: &[f64]) -> usize {
        let u: f64 = self.rng.random();
        let mut acc = 0.0;
        for (i, &p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        probs.len() - 1
    }

    /// Collects one unroll on a single tape and applies one RMSProp step.
    pub fn update(&mut self) -> Result<UpdateStats, AgentError> {
        let cfg = self.cfg.clone();
        let b = self.runner.num_envs();
        let mut tape = Tape::new();
        let vars = self.net.params().record(&mut tape, true);
        let mut steps: Vec<StepRecord> = Vec::with_capacity(cfg.unroll);
        let mut dump: Vec<EnvState> = Vec::new();
        let mut stats = UpdateStats::default();
        let mut entropy_sum = 0.0;

        for _ in 0..cfg.unroll {
            let states: Vec<EnvState> = self.runner.states().cloned().collect();
            let refs: Vec<&EnvState> = states.iter().collect();
            let graph = self.net.record(&mut tape, &vars, &refs, &self.inputs)?;
            let outputs = graph.outputs(&tape);
            let mut actions = Vec::with_capacity(b);
            for o in &outputs {
                entropy_sum += o.entropy();
                actions.push(self.sample(&o.probs));
            }
            let acts: Vec<Action> = actions.iter().map(|&a| Action::new(a)).collect();
            let outcomes = self.runner.batch_step(&acts)?;
            let mut rewards = Vec::with_capacity(b);
            let mut dones = Vec::with_capacity(b);
            for o in &outcomes {
                rewards.push(o.outcome.reward);
                dones.push(o.terminal());
                if let Some(ret) = o.episode_return {
                    stats.episodes += 1;
                    stats.return_sum += ret;
                    if o.success() {
                        stats.successes += 1;
                    }
                }
            }
            dump.extend(states);
            steps.push(StepRecord {
                graph,
                actions,
                rewards,
                dones,
            });
        }

        let tail: Vec<&EnvState> = self.runner.states().collect();
        let bootstrap = self.net.forward_batch(&tail, &self.inputs)?;
        let mut returns: Vec<f64> = bootstrap.iter().map(|o| o.value).collect();

        let n = (b * cfg.unroll) as f64;
        let norm = match cfg.reduction {
            LossReduction::Sum => 1.0,
            LossReduction::Mean => n,
        };
        let mut total: Option<Var> = None;
        let mut pg_sum = 0.0;
        let mut vl_sum = 0.0;
        for rec in steps.iter().rev() {
            for i in 0..b {
                let keep = if rec.dones[i] { 0.0 } else { 1.0 };
                returns[i] = rec.rewards[i] + cfg.gamma * keep * returns[i];
            }
            let values = tape.value(rec.graph.value).clone();
            let adv: Vec<f64> = returns.iter().zip(values.data()).map(|(r, v)| r - v).collect();
            let ret_c = tape.constant(Tensor::new(b, 1, returns.clone())?);
            let adv_c = tape.constant(Tensor::new(b, 1, adv)?);

            let (pg, vl, neg_ent) = loss_terms(&mut tape, &rec.graph, &rec.actions, adv_c, ret_c, &cfg, norm)?;

            pg_sum += tape.value(pg).item();
            vl_sum += tape.value(vl).item();
            let vterm = tape.scale(vl, cfg.value_coef);
            let part = tape.add(pg, vterm)?;
            let part = tape.add(part, neg_ent)?;
            total = Some(match total {
                Some(t) => tape.add(t, part)?,
                None => part,
            });
        }
        let loss = total.expect("unroll is positive");
        let loss_value = tape.value(loss).item();
        stats.policy_loss = pg_sum * norm / n;
        stats.value_loss = vl_sum * norm / n;
        stats.entropy = entropy_sum / n;
        stats.loss = loss_value;
        if !loss_value.is_finite() {
            return Err(AgentError::NonFinite {
                update: self.updates,
                policy_loss: pg_sum,
                value_loss: vl_sum,
                entropy: stats.entropy,
                states: dump,
            });
        }
        let mut grads = tape.backward(loss)?;
        let g = self.net.params().collect_grads(&mut grads, &vars);
        self.opt.step(self.net.params_mut(), &g, &mut self.opt_state)?;
        self.updates += 1;
        Ok(stats)
    }

    /// Greedy zero-shot success rate on test-partition tasks of the
    /// runner's depth and distractor count.
    pub fn zero_shot(&self, num_tasks: usize, seed: u64) -> Result<f64, AgentError> {
        let stream = self.runner.stream();
        let sc = stream.config();
        let cfg = EvalConfig {
            partition: Partition::Test,
            depth: sc.depth,
            num_distractors: sc.num_distractors,
            num_tasks,
            seed,
            reward: sc.reward,
            max_steps: sc.max_steps,
        };
        let mut policy = TrainedPolicy::greedy(&self.net, self.inputs);
        let report = evalkit::evaluate(&mut policy, stream.book(), stream.split(), &cfg)?;
        Ok(report.success_rate)
    }

    /// Trains until `total_steps` env steps, emitting one record per
    /// `log_interval` steps (and a final one for any remainder).
    pub fn run(&mut self, mut on_metrics: impl FnMut(&TrainMetrics)) -> Result<Vec<TrainMetrics>, AgentError> {
        let mut history = Vec::new();
        let mut window = Window::default();
        let mut next_log = self.steps() + self.cfg.log_interval;
        let eval_seed = rng::mix(self.cfg.seed, 0x7a65_726f);
        while self.steps() < self.cfg.total_steps {
            let s = self.update()?;
            window.add(&s);
            let at_end = self.steps() >= self.cfg.total_steps;
            if self.steps() >= next_log || at_end {
                while next_log <= self.steps() {
                    next_log += self.cfg.log_interval;
                }
                let zero_shot = if self.cfg.eval_tasks > 0 {
                    Some(self.zero_shot(self.cfg.eval_tasks, eval_seed)?)
                } else {
                    None
                };
                let m = window.finish(self.steps(), zero_shot);
                on_metrics(&m);
                history.push(m);
            }
        }
        Ok(history)
    }
}

#[derive(Default)]
struct Window {
    updates: u64,
    episodes: u64,
    successes: u64,
    return_sum: f64,
    entropy: f64,
    policy_loss: f64,
    value_loss: f64,
    loss: f64,
}

impl Window {
    fn add(&mut self, s: &UpdateStats) {
        self.updates += 1;
        self.episodes += s.episodes;
        self.successes += s.successes;
        self.return_sum += s.return_sum;
        self.entropy += s.entropy;
        self.policy_loss += s.policy_loss;
        self.value_loss += s.value_loss;
        self.loss += s.loss;
    }

    fn finish(&mut self, step: u64, zero_shot: Option<f64>) -> TrainMetrics {
        let u = self.updates.max(1) as f64;
        let e = self.episodes.max(1) as f64;
        let m = TrainMetrics {
            step,
            split: String::from("train"),
            episodes: self.episodes,
            return_mean: self.return_sum / e,
            success_rate: self.successes as f64 / e,
            zero_shot_success_rate: zero_shot,
            entropy: self.entropy / u,
            policy_loss: self.policy_loss / u,
            value_loss: self.value_loss / u,
            loss: self.loss / u,
        };
        *self = Window::default();
        m
    }
}

/// Policy-gradient, squared value error and scaled negative entropy of one
/// recorded step. Advantages and returns enter as constants.
fn loss_terms(
    tape: &mut Tape,
    graph: &super::BatchGraph,
    actions: &[usize],
    adv: Var,
    returns: Var,
    cfg: &TrainConfig,
    norm: f64,
) -> Result<(Var, Var, Var), AgentError> {
    let picked = tape.pick_per_row(graph.log_probs, actions)?;
    let weighted = tape.mul(picked, adv)?;
    let pg = tape.sum(weighted);
    let pg = tape.scale(pg, -1.0 / norm);

    let diff = tape.sub(graph.value, returns)?;
    let sq = tape.mul(diff, diff)?;
    let vl = tape.sum(sq);
    let vl = tape.scale(vl, 1.0 / norm);

    let probs = tape.exp(graph.log_probs);
    let plogp = tape.mul(probs, graph.log_probs)?;
    let neg_ent = tape.sum(plogp);
    let neg_ent = tape.scale(neg_ent, cfg.entropy_coef / norm);
    Ok((pg, vl, neg_ent))
}

/// One batch of transitions with fixed advantage and return targets.
#[derive(Clone, Copy, Debug)]
pub struct LossBatch<'s> {
    pub states: &'s [&'s EnvState],
    pub actions: &'s [usize],
    pub advantages: &'s [f64],
    pub returns: &'s [f64],
}

/// The actor-critic loss the trainer minimizes, evaluated on `batch`, and
/// its gradient for every parameter of `net` in store order.
pub fn loss_and_grads(
    net: &AgentNet,
    batch: &LossBatch<'_>,
    inputs: &Inputs<'_>,
    cfg: &TrainConfig,
) -> Result<(f64, Vec<Tensor>), AgentError> {
    let b = batch.states.len();
    if batch.actions.len() != b || batch.advantages.len() != b || batch.returns.len() != b {
        return Err(AgentError::Config("loss batch columns differ in length"));
    }
    let norm = match cfg.reduction {
        LossReduction::Sum => 1.0,
        LossReduction::Mean => b as f64,
    };
    let mut tape = Tape::new();
    let vars = net.params().record(&mut tape, true);
    let graph = net.record(&mut tape, &vars, batch.states, inputs)?;
    let adv = tape.constant(Tensor::new(b, 1, batch.advantages.to_vec())?);
    let ret = tape.constant(Tensor::new(b, 1, batch.returns.to_vec())?);
    let (pg, vl, neg_ent) = loss_terms(&mut tape, &graph, batch.actions, adv, ret, cfg, norm)?;
    let vterm = tape.scale(vl, cfg.value_coef);
    let loss = tape.add(pg, vterm)?;
    let loss = tape.add(loss, neg_ent)?;
    let value = tape.value(loss).item();
    let mut grads = tape.backward(loss)?;
    Ok((value, net.params().collect_grads(&mut grads, &vars)))
}

/// Trains `net` on `runner` and returns the trained net with its metrics.
pub fn a2c_train(
    net: AgentNet,
    runner: BatchRunner,
    inputs: Inputs<'_>,
    cfg: TrainConfig,
    on_metrics: impl FnMut(&TrainMetrics),
) -> Result<(AgentNet, Vec<TrainMetrics>), AgentError> {
    let mut trainer = A2cTrainer::new(net, runner, inputs, cfg)?;
    let history = trainer.run(on_metrics)?;
    Ok((trainer.into_net(), history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::AgentConfig;
    use crate::bundled;
    use crate::embed::random_table;
    use crate::recipes::{split_recipes, RecipeBook, RecipeSplit};
    use crate::vecenv::{StreamConfig, TaskStream};
    use alloc::sync::Arc;

    fn runner(envs: usize, seed: u64) -> BatchRunner {
        let book = Arc::new(bundled::example_book());
        let split = Arc::new(split_recipes(&book, &Default::default()).unwrap());
        let stream = TaskStream::new(book, split, StreamConfig::new(Partition::Train, 1, 1, seed));
        BatchRunner::new(stream, envs).unwrap()
    }

    fn quick_cfg(seed: u64) -> TrainConfig {
        TrainConfig {
            num_envs: 8,
            total_steps: 160,
            log_interval: 80,
            eval_tasks: 5,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn runs_and_is_deterministic() {
        let book = bundled::example_book();
        let feats = random_table(&book, 6, 1).unwrap();
        let run = || {
            let net = AgentNet::new(AgentConfig::with_dims(6, 8, 8, 8).seed(3));
            a2c_train(net, runner(8, 2), Inputs::plain(&feats), quick_cfg(4), |_| {}).unwrap()
        };
        let (a, ma) = run();
        let (b, mb) = run();
        assert_eq!(a, b);
        assert_eq!(ma, mb);
        assert_eq!(ma.len(), 2);
        assert_eq!(ma[1].step, 160);
        assert!(ma.iter().all(|m| m.zero_shot_success_rate.is_some()));
        assert_ne!(a, AgentNet::new(AgentConfig::with_dims(6, 8, 8, 8).seed(3)));
    }

    #[test]
    fn config_checks() {
        let book = bundled::example_book();
        let feats = random_table(&book, 6, 1).unwrap();
        let net = AgentNet::new(AgentConfig::with_dims(6, 8, 8, 8));
        let bad = TrainConfig {
            num_envs: 4,
            ..quick_cfg(0)
        };
        assert!(matches!(
            A2cTrainer::new(net.clone(), runner(8, 0), Inputs::plain(&feats), bad),
            Err(AgentError::Config(_))
        ));
        let bad = TrainConfig {
            gamma: 1.5,
            ..quick_cfg(0)
        };
        assert!(A2cTrainer::new(net, runner(8, 0), Inputs::plain(&feats), bad).is_err());
    }

    #[test]
    fn zero_discount_only_terminal_rewards_matter() {
        // A one-recipe world where the only reward is on the goal step: with
        // gamma = 0 the return of every non-terminal step is exactly zero.
        let book = Arc::new(RecipeBook::from_names(["water", "earth", "mud"], [("mud", ["water", "earth"])]).unwrap());
        let split = Arc::new(RecipeSplit::all_train(&book));
        let stream = TaskStream::new(book.clone(), split, StreamConfig::new(Partition::Train, 1, 0, 0));
        let r = BatchRunner::new(stream, 4).unwrap();
        let feats = random_table(&book, 4, 0).unwrap();
        let cfg = TrainConfig {
            gamma: 0.0,
            num_envs: 4,
            unroll: 1,
            ..quick_cfg(0)
        };
        let net = AgentNet::new(AgentConfig::with_dims(4, 4, 4, 4));
        let mut t = A2cTrainer::new(net, r, Inputs::plain(&feats), cfg).unwrap();
        // first step only selects: no episode can end and no reward arrives
        let s = t.update().unwrap();
        assert_eq!(s.episodes, 0);
        assert_eq!(s.return_sum, 0.0);
    }

    #[test]
    fn non_finite_loss_aborts_with_dump() {
        let book = bundled::example_book();
        let feats = random_table(&book, 6, 1).unwrap();
        let mut net = AgentNet::new(AgentConfig::with_dims(6, 8, 8, 8));
        net.params_mut().get_mut(super::super::VALUE_OUT_B).data_mut()[0] = f64::NAN;
        let mut t = A2cTrainer::new(net, runner(8, 0), Inputs::plain(&feats), quick_cfg(0)).unwrap();
        match t.update() {
            Err(AgentError::NonFinite { states, .. }) => assert_eq!(states.len(), 16),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }
}
