#![allow(dead_code)]

pub mod cases;

use wordcraft_core::diffmath::{Tape, Tensor, Var};

pub const STEP: f64 = 1e-4;

/// Elementwise relative error with a small floor on the denominator so
/// gradients that are zero up to rounding do not blow up.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// Largest relative error between reverse-mode gradients of `f` and
/// central differences over every entry of `params`.
pub fn gradcheck<F>(params: &[Tensor], f: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&mut tape, &vars);
    let mut grads = tape.backward(loss).expect("backward");
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(params)
        .map(|(v, p)| grads.take(*v).unwrap_or_else(|| Tensor::zeros(p.rows(), p.cols())))
        .collect();

    let eval = |ps: &[Tensor]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone())).collect();
        let loss = f(&mut tape, &vars);
        tape.value(loss).item()
    };
    let mut worst = 0.0f64;
    let mut work = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        for k in 0..p.data().len() {
            let x = p.data()[k];
            work[pi].data_mut()[k] = x + STEP;
            let up = eval(&work);
            work[pi].data_mut()[k] = x - STEP;
            let down = eval(&work);
            work[pi].data_mut()[k] = x;
            let numeric = (up - down) / (2.0 * STEP);
            worst = worst.max(rel_err(analytic[pi].data()[k], numeric));
        }
    }
    worst
}
