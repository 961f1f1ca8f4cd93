use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{DiffError, Gradients, Tape, Tensor, Var};

/// Named parameter matrices in a fixed order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a parameter and returns its index.
    pub fn push(&mut self, name: impl Into<String>, t: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.tensors[i]
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Records every parameter on `tape`, tracked or not.
    pub fn record(&self, tape: &mut Tape, tracked: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| {
                if tracked {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect()
    }

    /// Gradients for every parameter in store order (zeros where the loss
    /// did not reach a parameter).
    pub fn collect_grads(&self, grads: &mut Gradients, vars: &[Var]) -> Vec<Tensor> {
        vars.iter()
            .zip(&self.tensors)
            .map(|(v, t)| grads.take(*v).unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols())))
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Same names and shapes.
    pub fn same_layout(&self, other: &ParamStore) -> bool {
        self.names == other.names
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.shape() == b.shape())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    /// `v <- decay*v + (1-decay)*g^2`, `p <- p - lr*g/sqrt(v + eps)`.
    RmsProp { lr: f64, eps: f64, decay: f64 },
    /// `a <- a + g^2`, `p <- p - lr*g/(sqrt(a) + eps)`.
    Adagrad { lr: f64, eps: f64 },
}

impl Optimizer {
    pub fn rmsprop(lr: f64, eps: f64) -> Self {
        Optimizer::RmsProp {
            lr,
            eps,
            decay: 0.99,
        }
    }

    pub fn adagrad(lr: f64) -> Self {
        Optimizer::Adagrad { lr, eps: 1e-10 }
    }
}

/// Per-parameter accumulators.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    acc: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(params: &ParamStore) -> Self {
        OptimizerState {
            acc: params
                .tensors
                .iter()
                .map(|t| alloc::vec![0.0; t.data().len()])
                .collect(),
        }
    }

    pub fn accumulator(&self, i: usize) -> &[f64] {
        &self.acc[i]
    }
}

impl Optimizer {
    pub fn step(&self, params: &mut ParamStore, grads: &[Tensor], state: &mut OptimizerState) -> Result<(), DiffError> {
        if grads.len() != params.len() || state.acc.len() != params.len() {
            return Err(DiffError::Invalid {
                op: "optimizer_step",
                detail: "parameter, gradient and state counts differ",
            });
        }
        for ((p, g), a) in params.tensors.iter_mut().zip(grads).zip(&mut state.acc) {
            if p.shape() != g.shape() {
                return Err(DiffError::Shape {
                    op: "optimizer_step",
                    left: p.shape(),
                    right: g.shape(),
                });
            }
            let pv = p.data_mut();
            match *self {
                Optimizer::RmsProp { lr, eps, decay } => {
                    for ((x, &gv), v) in pv.iter_mut().zip(g.data()).zip(a.iter_mut()) {
                        *v = decay * *v + (1.0 - decay) * gv * gv;
                        *x -= lr * gv / libm::sqrt(*v + eps);
                    }
                }
                Optimizer::Adagrad { lr, eps } => {
                    for ((x, &gv), v) in pv.iter_mut().zip(g.data()).zip(a.iter_mut()) {
                        *v += gv * gv;
                        *x -= lr * gv / (libm::sqrt(*v) + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
