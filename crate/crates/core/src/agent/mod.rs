//! Self-attention actor-critic over a variable-size table, optionally
//! guided by knowledge-graph relation scores.
//!
//! The goal and the current selection form the attention query; every table
//! entity is a key. The scaled dot products `alpha` are the raw policy
//! logits. Their softmax weights a projection of the table that feeds the
//! value head, and a second projection that feeds the three mixing
//! coefficients `lambda`. The final logits are
//! `lambda_a * alpha + lambda_u * u + lambda_v * v`, where `u` scores each
//! table entity as something that combines with the selection and `v` as a
//! component of the goal.

mod a2c;

pub use a2c::{a2c_train, loss_and_grads, A2cTrainer, LossBatch, LossReduction, TrainConfig, TrainMetrics, UpdateStats};

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffmath::{DiffError, ParamStore, Tape, Tensor, Var};
use crate::embed::EmbeddingTable;
use crate::env::{Action, EnvState};
use crate::kglink::{ComplExModel, Relation};
use crate::recipes::EntityId;
use crate::rng;

/// Additive logit for padded slots.
const PAD_LOGIT: f64 = -1e30;

const Q_W: usize = 0;
const K_W: usize = 1;
const V_W: usize = 2;
const VALUE_HIDDEN_W: usize = 3;
const VALUE_HIDDEN_B: usize = 4;
const VALUE_OUT_W: usize = 5;
const VALUE_OUT_B: usize = 6;
const MIX_W: usize = 7;
const MIX_OUT_W: usize = 8;
const MIX_OUT_B: usize = 9;

const PARAM_NAMES: [&str; 10] = [
    "query",
    "key",
    "value_proj",
    "value_hidden_w",
    "value_hidden_b",
    "value_out_w",
    "value_out_b",
    "mix_proj",
    "mix_out_w",
    "mix_out_b",
];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AgentError {
    #[error("state has an empty table")]
    EmptyTable,
    #[error("entity {0:?} has no feature row")]
    MissingFeature(EntityId),
    #[error("feature dimension {found} does not match the network's {expected}")]
    FeatureDim { expected: usize, found: usize },
    #[error("kg mode {0:?} needs a link-prediction model")]
    MissingKg(KgMode),
    #[error("link-prediction model covers {model} entities but features cover {features}")]
    KgCoverage { model: usize, features: usize },
    #[error("invalid parameters: {0}")]
    BadParams(&'static str),
    #[error("non-finite loss at update {update} (policy {policy_loss}, value {value_loss}, entropy {entropy}); batch of {} states dumped", states.len())]
    NonFinite {
        update: u64,
        policy_loss: f64,
        value_loss: f64,
        entropy: f64,
        states: Vec<EnvState>,
    },
    #[error("invalid training config: {0}")]
    Config(&'static str),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    VecEnv(#[from] crate::vecenv::VecEnvError),
    #[error("evaluation failed: {0}")]
    Eval(#[from] crate::evalkit::EvalError),
}

/// Which relation scores enter the policy logits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KgMode {
    None,
    /// Both scores from a model trained on every recipe.
    Full,
    /// Both scores from a model trained on train recipes only.
    Partial,
    CombinesWithOnly,
    ComponentOfOnly,
}

impl KgMode {
    pub const ALL: [KgMode; 5] = [
        KgMode::None,
        KgMode::Full,
        KgMode::Partial,
        KgMode::CombinesWithOnly,
        KgMode::ComponentOfOnly,
    ];

    pub fn uses_combines_with(self) -> bool {
        matches!(self, KgMode::Full | KgMode::Partial | KgMode::CombinesWithOnly)
    }

    pub fn uses_component_of(self) -> bool {
        matches!(self, KgMode::Full | KgMode::Partial | KgMode::ComponentOfOnly)
    }

    pub fn needs_model(self) -> bool {
        self != KgMode::None
    }

    pub fn name(self) -> &'static str {
        match self {
            KgMode::None => "none",
            KgMode::Full => "full",
            KgMode::Partial => "partial",
            KgMode::CombinesWithOnly => "combines-with-only",
            KgMode::ComponentOfOnly => "component-of-only",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

/// Entity features plus the optional link predictor the policy reads.
#[derive(Clone, Copy, Debug)]
pub struct Inputs<'a> {
    pub features: &'a EmbeddingTable,
    pub kg: Option<&'a ComplExModel>,
    pub mode: KgMode,
}

impl<'a> Inputs<'a> {
    pub fn new(features: &'a EmbeddingTable, kg: Option<&'a ComplExModel>, mode: KgMode) -> Result<Self, AgentError> {
        if mode.needs_model() {
            let model = kg.ok_or(AgentError::MissingKg(mode))?;
            if model.num_entities() < features.num_entities() {
                return Err(AgentError::KgCoverage {
                    model: model.num_entities(),
                    features: features.num_entities(),
                });
            }
        }
        Ok(Inputs { features, kg, mode })
    }

    /// Features only, no relation scores.
    pub fn plain(features: &'a EmbeddingTable) -> Self {
        Inputs {
            features,
            kg: None,
            mode: KgMode::None,
        }
    }

    fn model(&self) -> Option<&'a ComplExModel> {
        if self.mode.needs_model() {
            self.kg
        } else {
            None
        }
    }
}

/// Output activation of the mixing head.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixActivation {
    #[default]
    Linear,
    Softplus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub embed_dim: usize,
    pub key_dim: usize,
    pub value_dim: usize,
    pub hidden_dim: usize,
    #[serde(default)]
    pub mix_activation: MixActivation,
    pub seed: u64,
}

impl AgentConfig {
    /// Default widths (300) for features of size `embed_dim`.
    pub fn new(embed_dim: usize) -> Self {
        AgentConfig {
            embed_dim,
            key_dim: 300,
            value_dim: 300,
            hidden_dim: 300,
            mix_activation: MixActivation::Linear,
            seed: 0,
        }
    }

    pub fn with_dims(embed_dim: usize, key_dim: usize, value_dim: usize, hidden_dim: usize) -> Self {
        AgentConfig {
            embed_dim,
            key_dim,
            value_dim,
            hidden_dim,
            mix_activation: MixActivation::Linear,
            seed: 0,
        }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn mix_activation(mut self, act: MixActivation) -> Self {
        self.mix_activation = act;
        self
    }
}

/// Policy head outputs for one state; slot vectors have the table's length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyOutput {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub value: f64,
    pub attention: Vec<f64>,
    /// `(lambda_alpha, lambda_u, lambda_v)`.
    pub mix: [f64; 3],
}

impl PolicyOutput {
    pub fn entropy(&self) -> f64 {
        -self
            .probs
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| p * libm::log(p))
            .sum::<f64>()
    }

    pub fn greedy(&self) -> Action {
        Action::new(argmax(&self.logits))
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Values recorded for one batch forward pass. Slot matrices are padded to
/// the widest table; columns beyond a state's table length are padding.
pub(crate) struct BatchGraph {
    pub log_probs: Var,
    pub logits: Var,
    pub alpha: Var,
    pub mix: Var,
    pub value: Var,
    pub lens: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentNet {
    config: AgentConfig,
    params: ParamStore,
}

impl AgentNet {
    /// Seeded initialization: weights are normal with standard deviation
    /// `1/sqrt(fan_in)`, biases zero, and the mixing bias starts at
    /// `(1, 0, 0)` so the policy initially follows attention alone.
    pub fn new(config: AgentConfig) -> Self {
        let AgentConfig {
            embed_dim: d,
            key_dim: dk,
            value_dim: dv,
            hidden_dim: h,
            seed,
            ..
        } = config;
        let mut rng = rng::seeded(rng::mix(seed, 0x6167_656e_74));
        let mut weight = |rows: usize, cols: usize| {
            let scale = 1.0 / libm::sqrt(rows.max(1) as f64);
            let data = (0..rows * cols)
                .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                .collect();
            Tensor::new(rows, cols, data).expect("shape")
        };
        let mut params = ParamStore::new();
        params.push(PARAM_NAMES[Q_W], weight(3 * d, dk));
        params.push(PARAM_NAMES[K_W], weight(d, dk));
        params.push(PARAM_NAMES[V_W], weight(d, dv));
        params.push(PARAM_NAMES[VALUE_HIDDEN_W], weight(dv, h));
        params.push(PARAM_NAMES[VALUE_HIDDEN_B], Tensor::zeros(1, h));
        params.push(PARAM_NAMES[VALUE_OUT_W], weight(h, 1));
        params.push(PARAM_NAMES[VALUE_OUT_B], Tensor::zeros(1, 1));
        params.push(PARAM_NAMES[MIX_W], weight(d, dv));
        params.push(PARAM_NAMES[MIX_OUT_W], weight(dv, 3));
        params.push(PARAM_NAMES[MIX_OUT_B], Tensor::new(1, 3, alloc::vec![1.0, 0.0, 0.0]).expect("shape"));
        AgentNet { config, params }
    }

    /// Rebuilds a net from stored parameters, checking the layout against
    /// `config`.
    pub fn from_params(config: AgentConfig, params: ParamStore) -> Result<Self, AgentError> {
        let reference = AgentNet::new(config);
        if !reference.params.same_layout(&params) {
            return Err(AgentError::BadParams("names or shapes do not match the config"));
        }
        if !params.is_finite() {
            return Err(AgentError::BadParams("non-finite values"));
        }
        Ok(AgentNet { config, params })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Zeroes the query and key maps, making every attention logit zero.
    pub fn zero_attention(&mut self) {
        for i in [Q_W, K_W] {
            self.params.get_mut(i).data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn forward(&self, state: &EnvState, inputs: &Inputs<'_>) -> Result<PolicyOutput, AgentError> {
        let mut out = self.forward_batch(&[state], inputs)?;
        Ok(out.pop().expect("one state in, one output out"))
    }

    pub fn forward_batch(&self, states: &[&EnvState], inputs: &Inputs<'_>) -> Result<Vec<PolicyOutput>, AgentError> {
        let mut tape = Tape::new();
        let vars = self.params.record(&mut tape, false);
        let g = self.record(&mut tape, &vars, states, inputs)?;
        Ok(g.outputs(&tape))
    }

    pub fn act_greedy(&self, state: &EnvState, inputs: &Inputs<'_>) -> Result<Action, AgentError> {
        Ok(self.forward(state, inputs)?.greedy())
    }

    /// Records the batched forward pass on `tape` with parameters `vars`.
    pub(crate) fn record(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        states: &[&EnvState],
        inputs: &Inputs<'_>,
    ) -> Result<BatchGraph, AgentError> {
        let feats = inputs.features;
        let d = self.config.embed_dim;
        if feats.dim() != d {
            return Err(AgentError::FeatureDim {
                expected: d,
                found: feats.dim(),
            });
        }
        let b = states.len();
        let width = states.iter().map(|s| s.table.len()).max().unwrap_or(0);
        if width == 0 || states.iter().any(|s| s.table.is_empty()) {
            return Err(AgentError::EmptyTable);
        }

        // Project each distinct table entity once; the final row is the
        // zero feature used for padding.
        let mut local: BTreeMap<EntityId, usize> = BTreeMap::new();
        let mut uniq: Vec<EntityId> = Vec::new();
        for s in states {
            for &e in &s.table {
                if e.is_empty() || e.index() >= feats.num_entities() {
                    return Err(AgentError::MissingFeature(e));
                }
                local.entry(e).or_insert_with(|| {
                    uniq.push(e);
                    uniq.len() - 1
                });
            }
        }
        let pad = uniq.len();
        let mut x = Vec::with_capacity((pad + 1) * d);
        for &e in &uniq {
            x.extend_from_slice(feats.vector(e));
        }
        x.extend(core::iter::repeat_n(0.0, d));
        let x = tape.constant(Tensor::new(pad + 1, d, x)?);

        let mut query_in = Vec::with_capacity(b * 3 * d);
        let mut slot_rows = Vec::with_capacity(b * width);
        let mut mask = Vec::with_capacity(b * width);
        for s in states {
            for e in [s.goal, s.selected] {
                if !e.is_empty() && e.index() >= feats.num_entities() {
                    return Err(AgentError::MissingFeature(e));
                }
                query_in.extend_from_slice(feats.vector(e));
            }
            query_in.extend(core::iter::repeat_n(0.0, d));
            for j in 0..width {
                match s.table.get(j) {
                    Some(e) => {
                        slot_rows.push(local[e]);
                        mask.push(0.0);
                    }
                    None => {
                        slot_rows.push(pad);
                        mask.push(PAD_LOGIT);
                    }
                }
            }
        }
        let query_in = tape.constant(Tensor::new(b, 3 * d, query_in)?);
        let mask = tape.constant(Tensor::new(b, width, mask)?);

        let keys_u = tape.matmul(x, vars[K_W])?;
        let vals_u = tape.matmul(x, vars[V_W])?;
        let mix_u = tape.matmul(x, vars[MIX_W])?;
        let keys = tape.gather_rows(keys_u, &slot_rows)?;
        let vals = tape.gather_rows(vals_u, &slot_rows)?;
        let mix_vals = tape.gather_rows(mix_u, &slot_rows)?;

        let q = tape.matmul(query_in, vars[Q_W])?;
        let dots = tape.group_dot(q, keys, width)?;
        let alpha = tape.scale(dots, 1.0 / libm::sqrt(self.config.key_dim as f64));
        let masked_alpha = tape.add(alpha, mask)?;
        let weights = tape.row_softmax(masked_alpha);

        let pooled = tape.group_weighted_sum(weights, vals, width)?;
        let h = tape.matmul(pooled, vars[VALUE_HIDDEN_W])?;
        let h = tape.add_row(h, vars[VALUE_HIDDEN_B])?;
        let h = tape.tanh(h);
        let value = tape.matmul(h, vars[VALUE_OUT_W])?;
        let value = tape.add_row(value, vars[VALUE_OUT_B])?;

        let mix_pooled = tape.group_weighted_sum(weights, mix_vals, width)?;
        let mix = tape.matmul(mix_pooled, vars[MIX_OUT_W])?;
        let mix = tape.add_row(mix, vars[MIX_OUT_B])?;
        let mix = match self.config.mix_activation {
            MixActivation::Linear => mix,
            MixActivation::Softplus => tape.softplus(mix),
        };

        let lam_alpha = tape.column(mix, 0)?;
        let mut logits = tape.mul_col(alpha, lam_alpha)?;
        if let Some(model) = inputs.model() {
            let mode = inputs.mode;
            for (used, rel, col) in [
                (mode.uses_combines_with(), Relation::CombinesWith, 1),
                (mode.uses_component_of(), Relation::ComponentOf, 2),
            ] {
                if !used {
                    continue;
                }
                let mut scores = Vec::with_capacity(b * width);
                for s in states {
                    let anchor = if rel == Relation::CombinesWith { s.selected } else { s.goal };
                    scores.extend(model.relation_scores(&s.table, rel, anchor));
                    scores.extend(core::iter::repeat_n(0.0, width - s.table.len()));
                }
                let scores = tape.constant(Tensor::new(b, width, scores)?);
                let lam = tape.column(mix, col)?;
                let term = tape.mul_col(scores, lam)?;
                logits = tape.add(logits, term)?;
            }
        }
        let masked = tape.add(logits, mask)?;
        let log_probs = tape.row_log_softmax(masked);
        Ok(BatchGraph {
            log_probs,
            logits,
            alpha,
            mix,
            value,
            lens: states.iter().map(|s| s.table.len()).collect(),
        })
    }
}

impl BatchGraph {
    pub fn outputs(&self, tape: &Tape) -> Vec<PolicyOutput> {
        let lp = tape.value(self.log_probs);
        let lg = tape.value(self.logits);
        let al = tape.value(self.alpha);
        let mx = tape.value(self.mix);
        let v = tape.value(self.value);
        self.lens
            .iter()
            .enumerate()
            .map(|(i, &n)| PolicyOutput {
                logits: lg.row(i)[..n].to_vec(),
                probs: lp.row(i)[..n].iter().map(|&x| libm::exp(x)).collect(),
                value: v.get(i, 0),
                attention: al.row(i)[..n].to_vec(),
                mix: [mx.get(i, 0), mx.get(i, 1), mx.get(i, 2)],
            })
            .collect()
    }
}
