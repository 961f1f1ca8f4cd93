//! ComplEx link prediction over the recipe graph.
//!
//! Every recipe `{a, b} -> c` contributes `(a combinesWith b)`,
//! `(b combinesWith a)`, `(a componentOf c)` and `(b componentOf c)`.
//! Triples are scored with the real part of the trilinear product
//! `<e_s, e_p, conj(e_o)>` and trained with the full-softmax loss over both
//! objects and subjects plus a weighted nuclear 3-norm penalty, using
//! Adagrad.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffmath::{DiffError, Optimizer, OptimizerState, ParamStore, Tape, Tensor, Var};
use crate::env::Partition;
use crate::recipes::{EntityId, Recipe, RecipeBook, RecipeSplit};
use crate::rng;

pub const DEFAULT_RANK: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "combinesWith")]
    CombinesWith,
    #[serde(rename = "componentOf")]
    ComponentOf,
}

impl Relation {
    pub const ALL: [Relation; 2] = [Relation::CombinesWith, Relation::ComponentOf];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Relation::CombinesWith => "combinesWith",
            Relation::ComponentOf => "componentOf",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.name() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub s: EntityId,
    pub p: Relation,
    pub o: EntityId,
}

impl Triple {
    pub fn new(s: EntityId, p: Relation, o: EntityId) -> Self {
        Triple { s, p, o }
    }
}

/// Expands recipes into relation triples, dropping duplicates while keeping
/// first-seen order.
pub fn recipes_to_triples<'a>(recipes: impl IntoIterator<Item = &'a Recipe>) -> Vec<Triple> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for r in recipes {
        let (a, b) = r.ingredients;
        for t in [
            Triple::new(a, Relation::CombinesWith, b),
            Triple::new(b, Relation::CombinesWith, a),
            Triple::new(a, Relation::ComponentOf, r.result),
            Triple::new(b, Relation::ComponentOf, r.result),
        ] {
            if seen.insert(t) {
                out.push(t);
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphScope {
    /// Every recipe.
    Full,
    /// Train-split recipes only.
    Partial,
}

/// Triples of the recipes visible under `scope`.
pub fn scope_triples(book: &RecipeBook, split: &RecipeSplit, scope: GraphScope) -> Vec<Triple> {
    let recipes = book.recipes();
    match scope {
        GraphScope::Full => recipes_to_triples(recipes),
        GraphScope::Partial => recipes_to_triples(split.train_recipes.iter().map(|&i| &recipes[i])),
    }
}

/// Triples of one partition's recipes.
pub fn partition_triples(book: &RecipeBook, split: &RecipeSplit, partition: Partition) -> Vec<Triple> {
    let idx = match partition {
        Partition::Train => &split.train_recipes,
        Partition::Test => &split.test_recipes,
    };
    recipes_to_triples(idx.iter().map(|&i| &book.recipes()[i]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KgTrainConfig {
    pub rank: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub reg_weight: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub scope: GraphScope,
}

impl Default for KgTrainConfig {
    fn default() -> Self {
        KgTrainConfig {
            rank: DEFAULT_RANK,
            epochs: 200,
            learning_rate: 0.1,
            reg_weight: 1e-2,
            batch_size: 512,
            seed: 0,
            scope: GraphScope::Full,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KgError {
    #[error("non-finite loss at epoch {epoch} (learning rate {learning_rate}, regularizer {reg_weight}); lower either")]
    NonFinite {
        epoch: usize,
        learning_rate: f64,
        reg_weight: f64,
    },
    #[error("triple references entity {0:?} outside the model")]
    UnknownEntity(EntityId),
    #[error("no triples to train on")]
    NoTriples,
    #[error("invalid config: {0}")]
    Config(&'static str),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

const ENT_RE: usize = 0;
const ENT_IM: usize = 1;
const REL_RE: usize = 2;
const REL_IM: usize = 3;

/// Complex entity and relation embeddings, stored as real/imaginary
/// matrices (`entity_re`, `entity_im`: `|E| x k`; `rel_re`, `rel_im`:
/// `|R| x k`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplExModel {
    rank: usize,
    params: ParamStore,
}

impl ComplExModel {
    /// Seeded normal initialization with standard deviation `1/sqrt(k)`.
    pub fn init(num_entities: usize, rank: usize, seed: u64) -> Self {
        let mut rng = rng::seeded(seed);
        let scale = 1.0 / libm::sqrt(rank.max(1) as f64);
        let mut mat = |rows: usize| {
            let data = (0..rows * rank)
                .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                .collect();
            Tensor::new(rows, rank, data).expect("shape")
        };
        let mut params = ParamStore::new();
        params.push("entity_re", mat(num_entities));
        params.push("entity_im", mat(num_entities));
        params.push("rel_re", mat(Relation::ALL.len()));
        params.push("rel_im", mat(Relation::ALL.len()));
        ComplExModel { rank, params }
    }

    /// Rebuilds a model from stored parameters, checking names and shapes.
    pub fn from_params(params: ParamStore) -> Result<Self, KgError> {
        let names = ["entity_re", "entity_im", "rel_re", "rel_im"];
        if params.len() != 4 || (0..4).any(|i| params.name(i) != names[i]) {
            return Err(KgError::Config("expected entity_re, entity_im, rel_re, rel_im"));
        }
        let rank = params.get(ENT_RE).cols();
        let n = params.get(ENT_RE).rows();
        let ok = params.get(ENT_IM).shape() == (n, rank)
            && params.get(REL_RE).shape() == (Relation::ALL.len(), rank)
            && params.get(REL_IM).shape() == (Relation::ALL.len(), rank);
        if !ok || !params.is_finite() {
            return Err(KgError::Config("inconsistent or non-finite parameter matrices"));
        }
        Ok(ComplExModel { rank, params })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn num_entities(&self) -> usize {
        self.params.get(ENT_RE).rows()
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Mutable access for tests and tools; shapes must be preserved.
    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn ent(&self, e: EntityId) -> (&[f64], &[f64]) {
        (self.params.get(ENT_RE).row(e.index()), self.params.get(ENT_IM).row(e.index()))
    }

    fn rel(&self, p: Relation) -> (&[f64], &[f64]) {
        (self.params.get(REL_RE).row(p.index()), self.params.get(REL_IM).row(p.index()))
    }

    /// `Re(sum_j s_j * p_j * conj(o_j))`.
    pub fn score(&self, s: EntityId, p: Relation, o: EntityId) -> f64 {
        let (sr, si) = self.ent(s);
        let (pr, pi) = self.rel(p);
        let (or, oi) = self.ent(o);
        let mut acc = 0.0;
        for j in 0..self.rank {
            let a = sr[j] * pr[j] - si[j] * pi[j];
            let b = sr[j] * pi[j] + si[j] * pr[j];
            acc += a * or[j] + b * oi[j];
        }
        acc
    }

    /// `out[i] = score(candidates[i], p, anchor)`; all zeros when `anchor`
    /// is EMPTY. EMPTY candidates score zero.
    pub fn relation_scores(&self, candidates: &[EntityId], p: Relation, anchor: EntityId) -> Vec<f64> {
        if anchor.is_empty() {
            return alloc::vec![0.0; candidates.len()];
        }
        // Fold the relation and the conjugated anchor once: the score is
        // linear in the candidate embedding.
        let (pr, pi) = self.rel(p);
        let (or, oi) = self.ent(anchor);
        let cr: Vec<f64> = (0..self.rank).map(|j| pr[j] * or[j] + pi[j] * oi[j]).collect();
        let ci: Vec<f64> = (0..self.rank).map(|j| pr[j] * oi[j] - pi[j] * or[j]).collect();
        candidates
            .iter()
            .map(|&c| {
                if c.is_empty() {
                    return 0.0;
                }
                let (sr, si) = self.ent(c);
                crate::diffmath::dot(sr, &cr) + crate::diffmath::dot(si, &ci)
            })
            .collect()
    }

    /// Average per-triple objective (fit plus penalty) without gradients.
    pub fn loss(&self, triples: &[Triple], reg_weight: f64) -> Result<f64, KgError> {
        let mut tape = Tape::new();
        let vars = self.params.record(&mut tape, false);
        let l = objective(&mut tape, &vars, triples, reg_weight)?;
        Ok(tape.value(l).item())
    }

    /// Sum over entities of the squared modulus norms, a size summary.
    pub fn entity_norm(&self) -> f64 {
        let re = self.params.get(ENT_RE).data();
        let im = self.params.get(ENT_IM).data();
        libm::sqrt(re.iter().chain(im).map(|x| x * x).sum())
    }
}

/// Records the mean per-triple objective on `tape`:
/// `logsumexp_o phi(s,p,.) + logsumexp_s phi(.,p,o) - 2 phi(s,p,o)` plus
/// `reg_weight * sum_j (|e_s|^3 + |e_p|^3 + |e_o|^3)`.
///
/// `vars` holds `[entity_re, entity_im, rel_re, rel_im]`.
pub fn objective(tape: &mut Tape, vars: &[Var], batch: &[Triple], reg_weight: f64) -> Result<Var, KgError> {
    if batch.is_empty() {
        return Err(KgError::NoTriples);
    }
    let n_ent = tape.shape(vars[ENT_RE]).0;
    for t in batch {
        for e in [t.s, t.o] {
            if e.is_empty() || e.index() >= n_ent {
                return Err(KgError::UnknownEntity(e));
            }
        }
    }
    let s_idx: Vec<usize> = batch.iter().map(|t| t.s.index()).collect();
    let o_idx: Vec<usize> = batch.iter().map(|t| t.o.index()).collect();
    let p_idx: Vec<usize> = batch.iter().map(|t| t.p.index()).collect();
    let sr = tape.gather_rows(vars[ENT_RE], &s_idx)?;
    let si = tape.gather_rows(vars[ENT_IM], &s_idx)?;
    let or = tape.gather_rows(vars[ENT_RE], &o_idx)?;
    let oi = tape.gather_rows(vars[ENT_IM], &o_idx)?;
    let pr = tape.gather_rows(vars[REL_RE], &p_idx)?;
    let pi = tape.gather_rows(vars[REL_IM], &p_idx)?;
    let ent_re_t = tape.transpose(vars[ENT_RE]);
    let ent_im_t = tape.transpose(vars[ENT_IM]);

    // object side: (s * p) against every conj(o')
    let a1 = tape.mul(sr, pr)?;
    let a2 = tape.mul(si, pi)?;
    let a = tape.sub(a1, a2)?;
    let b1 = tape.mul(sr, pi)?;
    let b2 = tape.mul(si, pr)?;
    let b = tape.add(b1, b2)?;
    let so1 = tape.matmul(a, ent_re_t)?;
    let so2 = tape.matmul(b, ent_im_t)?;
    let scores_o = tape.add(so1, so2)?;

    // subject side: every s' against p * conj(o)
    let c1a = tape.mul(pr, or)?;
    let c1b = tape.mul(pi, oi)?;
    let c1 = tape.add(c1a, c1b)?;
    let c2a = tape.mul(pr, oi)?;
    let c2b = tape.mul(pi, or)?;
    let c2 = tape.sub(c2a, c2b)?;
    let ss1 = tape.matmul(c1, ent_re_t)?;
    let ss2 = tape.matmul(c2, ent_im_t)?;
    let scores_s = tape.add(ss1, ss2)?;

    let lo = tape.row_log_softmax(scores_o);
    let ls = tape.row_log_softmax(scores_s);
    let po = tape.pick_per_row(lo, &o_idx)?;
    let ps = tape.pick_per_row(ls, &s_idx)?;
    let both = tape.add(po, ps)?;
    let fit_sum = tape.sum(both);
    let inv_b = 1.0 / batch.len() as f64;
    let mut total = tape.scale(fit_sum, -inv_b);

    if reg_weight > 0.0 {
        let mut cube = |re: Var, im: Var| -> Result<Var, KgError> {
            let r2 = tape.mul(re, re)?;
            let i2 = tape.mul(im, im)?;
            let m2 = tape.add(r2, i2)?;
            let m3 = tape.powf(m2, 1.5);
            Ok(tape.sum(m3))
        };
        let rs = cube(sr, si)?;
        let rp = cube(pr, pi)?;
        let ro = cube(or, oi)?;
        let r = tape.add(rs, rp)?;
        let r = tape.add(r, ro)?;
        let r = tape.scale(r, reg_weight * inv_b);
        total = tape.add(total, r)?;
    }
    Ok(total)
}

/// Per-epoch training record.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub loss: f64,
}

/// Trains a model over `num_entities` entities. Every entity gets an
/// embedding even if no triple mentions it.
pub fn train(num_entities: usize, triples: &[Triple], cfg: &KgTrainConfig) -> Result<(ComplExModel, Vec<EpochLoss>), KgError> {
    if cfg.rank == 0 || cfg.batch_size == 0 {
        return Err(KgError::Config("rank and batch size must be positive"));
    }
    if !(cfg.reg_weight >= 0.0) {
        return Err(KgError::Config("regularizer weight must be non-negative"));
    }
    if triples.is_empty() && cfg.epochs > 0 {
        return Err(KgError::NoTriples);
    }
    let mut model = ComplExModel::init(num_entities, cfg.rank, rng::mix(cfg.seed, 1));
    let opt = Optimizer::adagrad(cfg.learning_rate);
    let mut state = OptimizerState::new(&model.params);
    let mut order: Vec<usize> = (0..triples.len()).collect();
    let mut rng = rng::seeded(rng::mix(cfg.seed, 2));
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| triples[i]));
            let mut tape = Tape::new();
            let vars = model.params.record(&mut tape, true);
            let loss = objective(&mut tape, &vars, &batch, cfg.reg_weight)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(KgError::NonFinite {
                    epoch,
                    learning_rate: cfg.learning_rate,
                    reg_weight: cfg.reg_weight,
                });
            }
            total += value * chunk.len() as f64;
            let mut grads = tape.backward(loss)?;
            let g = model.params.collect_grads(&mut grads, &vars);
            opt.step(&mut model.params, &g, &mut state)?;
        }
        history.push(EpochLoss {
            epoch,
            loss: total / triples.len() as f64,
        });
    }
    Ok((model, history))
}

/// Filtered ranking quality of a query set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkMetrics {
    /// Number of ranking queries (two per triple: object and subject side).
    pub queries: usize,
    pub mrr: f64,
    pub hits_at_1: f64,
    /// Expected MRR of a uniformly random ranking over the same filtered
    /// candidate sets: mean of `H_n / n`.
    pub random_mrr: f64,
}

/// Ranks each triple's object among all entities (and its subject,
/// symmetrically), skipping candidates that form another triple in `known`.
/// Tied scores share the mean of their rank positions.
pub fn link_metrics(model: &ComplExModel, queries: &[Triple], known: &[Triple]) -> LinkMetrics {
    let known: BTreeSet<Triple> = known.iter().copied().chain(queries.iter().copied()).collect();
    let n = model.num_entities();
    let all: Vec<EntityId> = (0..n).map(EntityId::new).collect();
    let mut rr_sum = 0.0;
    let mut hits = 0usize;
    let mut random_sum = 0.0;
    let mut count = 0usize;
    for t in queries {
        let obj_scores: Vec<f64> = all.iter().map(|&o| model.score(t.s, t.p, o)).collect();
        let subj_scores = model.relation_scores(&all, t.p, t.o);
        for (scores, truth, is_known) in [
            (&obj_scores, t.o, &(|c: EntityId| known.contains(&Triple::new(t.s, t.p, c))) as &dyn Fn(EntityId) -> bool),
            (&subj_scores, t.s, &(|c: EntityId| known.contains(&Triple::new(c, t.p, t.o))) as &dyn Fn(EntityId) -> bool),
        ] {
            let target = scores[truth.index()];
            let mut greater = 0usize;
            let mut ties = 0usize;
            let mut candidates = 1usize;
            for (i, &v) in scores.iter().enumerate() {
                let c = EntityId::new(i);
                if c == truth || is_known(c) {
                    continue;
                }
                candidates += 1;
                if v > target {
                    greater += 1;
                } else if v == target {
                    ties += 1;
                }
            }
            let rank = 1.0 + greater as f64 + ties as f64 / 2.0;
            rr_sum += 1.0 / rank;
            if greater == 0 && ties == 0 {
                hits += 1;
            }
            random_sum += harmonic(candidates) / candidates as f64;
            count += 1;
        }
    }
    let c = count.max(1) as f64;
    LinkMetrics {
        queries: count,
        mrr: rr_sum / c,
        hits_at_1: hits as f64 / c,
        random_mrr: random_sum / c,
    }
}

fn harmonic(n: usize) -> f64 {
    (1..=n).map(|i| 1.0 / i as f64).sum()
}
