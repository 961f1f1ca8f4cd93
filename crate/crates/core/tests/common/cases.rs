//! Randomized gradient-check cases shared by the test suites.

use rand::seq::SliceRandom;
use rand::Rng;
use wordcraft_core::agent::{loss_and_grads, AgentConfig, AgentNet, Inputs, KgMode, LossBatch, LossReduction, MixActivation, TrainConfig};
use wordcraft_core::diffmath::{Tape, Tensor, Var};
use wordcraft_core::embed::random_table;
use wordcraft_core::env::EnvState;
use wordcraft_core::kglink::{self, ComplExModel, Relation, Triple};
use wordcraft_core::recipes::EntityId;
use wordcraft_core::{bundled, rng};

pub const KINDS: usize = 14;

/// Entries in `[-1, -0.05] U [0.05, 1]`, keeping relu inputs clear of the kink.
pub fn tensor(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| {
            let mag = 0.05 + 0.95 * rng.random::<f64>();
            if rng.random::<bool>() {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Tensor::new(rows, cols, data).unwrap()
}

pub struct Case {
    pub kind: usize,
    pub tail: usize,
    pub r: usize,
    pub c: usize,
    pub m: usize,
    pub idx_rows: Vec<usize>,
    pub idx_cols: Vec<usize>,
    pub weights: Tensor,
}

impl Case {
    /// Random shapes, index lists and reduction weights for op `kind`.
    pub fn random(g: &mut impl Rng, kind: usize, tail: usize, r: usize, c: usize, m: usize) -> Case {
        let idx_rows = (0..1 + g.random_range(0..8)).map(|_| g.random_range(0..r)).collect();
        let idx_cols = (0..r).map(|_| g.random_range(0..c)).collect();
        let weights = tensor(g, 8, 24);
        Case { kind, tail, r, c, m, idx_rows, idx_cols, weights }
    }

    /// Worst relative gradient error for freshly drawn parameters.
    pub fn check(&self, g: &mut impl Rng) -> f64 {
        let params = self.params(g);
        super::gradcheck(&params, |t, v| self.loss(t, v))
    }

    pub fn params(&self, rng: &mut impl Rng) -> Vec<Tensor> {
        let (r, c, m) = (self.r, self.c, self.m);
        vec![
            tensor(rng, r, c),
            tensor(rng, c, m),
            tensor(rng, 1, c),
            tensor(rng, r, 1),
            tensor(rng, r, c),
        ]
    }

    fn groups(&self) -> (usize, usize) {
        let b = 1 + (self.r - 1) / 4;
        (b, self.r / b)
    }

    /// The op composition under test, before the weighted reduction.
    fn body(&self, t: &mut Tape, v: &[Var]) -> Var {
        let (a, b, row, col, a2) = (v[0], v[1], v[2], v[3], v[4]);
        match self.kind {
            0 => {
                let x = t.matmul(a, b).unwrap();
                t.tanh(x)
            }
            1 => {
                let s = t.add(a, a2).unwrap();
                let d = t.sub(a, a2).unwrap();
                t.mul(s, d).unwrap()
            }
            2 => {
                let x = t.add_row(a, row).unwrap();
                t.exp(x)
            }
            3 => {
                let ab = t.matmul(a, b).unwrap();
                let s = t.scale(a, -1.7);
                t.concat(&[s, ab, a2]).unwrap()
            }
            4 => {
                let ab = t.matmul(a, b).unwrap();
                t.row_softmax(ab)
            }
            5 => t.row_log_softmax(a),
            6 => {
                let sp = t.softplus(a);
                t.log(sp)
            }
            7 => {
                let e = t.exp(a);
                let p = t.powf(e, 1.5);
                let q = t.powf(a2, 2.0);
                t.add(p, q).unwrap()
            }
            8 => {
                let x = t.relu(a);
                t.mul(x, a2).unwrap()
            }
            9 => {
                let x = t.transpose(a);
                let y = t.matmul(x, col).unwrap();
                let mean = t.mean(y);
                let s = t.mul(mean, mean).unwrap();
                let z = t.matmul(a, b).unwrap();
                let w = t.sum(z);
                let both = t.concat(&[s, w]).unwrap();
                t.tanh(both)
            }
            10 => {
                let g = t.gather_rows(a, &self.idx_rows).unwrap();
                t.tanh(g)
            }
            11 => {
                let j = self.idx_cols[0] % self.c;
                let cj = t.column(a, j).unwrap();
                let scaled = t.mul_col(a2, cj).unwrap();
                t.mul_col(scaled, col).unwrap()
            }
            12 => {
                let lp = t.row_log_softmax(a);
                t.pick_per_row(lp, &self.idx_cols).unwrap()
            }
            _ => {
                let (nb, g) = self.groups();
                let q = t.gather_rows(a2, &(0..nb).collect::<Vec<_>>()).unwrap();
                let keys = t.gather_rows(a, &(0..nb * g).collect::<Vec<_>>()).unwrap();
                let dots = t.group_dot(q, keys, g).unwrap();
                let w = t.row_softmax(dots);
                let vals = t.tanh(keys);
                t.group_weighted_sum(w, vals, g).unwrap()
            }
        }
    }

    pub fn loss(&self, t: &mut Tape, v: &[Var]) -> Var {
        let out = self.body(t, v);
        let out = match self.tail {
            0 => out,
            1 => t.tanh(out),
            _ => t.softplus(out),
        };
        let (rows, cols) = t.shape(out);
        let w = self.weights.data()[..rows * cols].to_vec();
        let w = t.constant(Tensor::new(rows, cols, w).unwrap());
        let prod = t.mul(out, w).unwrap();
        t.sum(prod)
    }
}

pub fn random_state(g: &mut impl Rng, n_entities: usize, width: usize) -> EnvState {
    let mut ids: Vec<usize> = (0..n_entities).collect();
    ids.shuffle(g);
    let table: Vec<EntityId> = ids[..width].iter().map(|&i| EntityId::new(i)).collect();
    let selected = if g.random::<bool>() { table[g.random_range(0..width)] } else { EntityId::EMPTY };
    EnvState {
        goal: EntityId::new(ids[width]),
        table,
        selected,
        steps_taken: 0,
        done: false,
        success: false,
        intermediates: Vec::new(),
    }
}

pub fn random_params(g: &mut impl Rng, n: usize, k: usize) -> Vec<Tensor> {
    let mut m = |rows: usize| Tensor::new(rows, k, (0..rows * k).map(|_| g.random_range(-1.0..1.0)).collect()).unwrap();
    vec![m(n), m(n), m(2), m(2)]
}

/// Worst relative gradient error of the link-prediction objective on a
/// random batch over `n` entities with rank `k`.
pub fn kg_objective_case(seed: u64, n: usize, k: usize, count: usize, reg: f64) -> f64 {
    let mut g = rng::seeded(seed);
    let params = random_params(&mut g, n, k);
    let rels = Relation::ALL;
    let batch: Vec<Triple> = (0..count)
        .map(|_| {
            Triple::new(
                EntityId::new(g.random_range(0..n)),
                rels[g.random_range(0..2)],
                EntityId::new(g.random_range(0..n)),
            )
        })
        .collect();
    super::gradcheck(&params, |t: &mut Tape, v| kglink::objective(t, v, &batch, reg).unwrap())
}

/// Worst relative gradient error of the full actor-critic loss for one
/// seeded case. Cases cycle through every kg mode, both mixing
/// activations and both loss reductions; table widths 3 and 2 exercise
/// padding.
pub fn agent_loss_case(case: u64) -> f64 {
    let book = bundled::example_book();
    let n = book.num_entities();
    let mut worst = 0.0f64;
    let mut g = rng::seeded(case);
    let feats = random_table(&book, 4, case).unwrap();
    let kg = ComplExModel::init(n, 3, case);
    let mode = [KgMode::None, KgMode::Full, KgMode::CombinesWithOnly, KgMode::ComponentOfOnly][case as usize % 4];
    let act = if case % 2 == 0 { MixActivation::Linear } else { MixActivation::Softplus };
    let inputs = Inputs::new(&feats, Some(&kg), mode).unwrap();
    let cfg = TrainConfig {
        entropy_coef: 0.3,
        reduction: if case % 3 == 0 { LossReduction::Mean } else { LossReduction::Sum },
        ..Default::default()
    };
    let net = AgentNet::new(AgentConfig::with_dims(4, 4, 4, 4).mix_activation(act).seed(case));
    let states = [random_state(&mut g, n, 3), random_state(&mut g, n, 2), random_state(&mut g, n, 3)];
    let refs: Vec<&EnvState> = states.iter().collect();
    let actions: Vec<usize> = states.iter().map(|s| g.random_range(0..s.table.len())).collect();
    let advantages: Vec<f64> = (0..3).map(|_| g.random_range(-1.0..1.0)).collect();
    let returns: Vec<f64> = (0..3).map(|_| g.random_range(-1.0..1.0)).collect();
    let batch = LossBatch {
        states: &refs,
        actions: &actions,
        advantages: &advantages,
        returns: &returns,
    };
    let (_, grads) = loss_and_grads(&net, &batch, &inputs, &cfg).unwrap();
    let eval = |net: &AgentNet| loss_and_grads(net, &batch, &inputs, &cfg).unwrap().0;
    let mut probe = net.clone();
    for (pi, grad) in grads.iter().enumerate() {
        for k in 0..grad.data().len() {
            let x = net.params().get(pi).data()[k];
            probe.params_mut().get_mut(pi).data_mut()[k] = x + super::STEP;
            let up = eval(&probe);
            probe.params_mut().get_mut(pi).data_mut()[k] = x - super::STEP;
            let down = eval(&probe);
            probe.params_mut().get_mut(pi).data_mut()[k] = x;
            let numeric = (up - down) / (2.0 * super::STEP);
            worst = worst.max(super::rel_err(grad.data()[k], numeric));
        }
    }
    worst
}
