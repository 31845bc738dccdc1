use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{Graph, Var};
use crate::params::ParamSet;

/// Parameter ids of one LSTM cell. Gates are packed `[input, forget, candidate, output]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LstmCell {
    pub weight: usize,
    pub bias: usize,
    pub input: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new<R: Rng>(params: &mut ParamSet, name: &str, input: usize, hidden: usize, init: f64, rng: &mut R) -> Self {
        let weight = params.insert_uniform(&format!("{name}.weight"), input + hidden, 4 * hidden, init, rng);
        let bias = params.insert_uniform(&format!("{name}.bias"), 1, 4 * hidden, init, rng);
        LstmCell { weight, bias, input, hidden }
    }

    pub fn bind(&self, g: &mut Graph, params: &ParamSet) -> BoundLstm {
        BoundLstm { weight: g.param(params, self.weight), bias: g.param(params, self.bias), hidden: self.hidden }
    }
}

/// An LSTM cell whose parameters are registered on a graph.
#[derive(Clone, Copy, Debug)]
pub struct BoundLstm {
    weight: Var,
    bias: Var,
    hidden: usize,
}

impl BoundLstm {
    pub fn zero_state(&self, g: &mut Graph, rows: usize) -> (Var, Var) {
        let h = g.constant(Array2::zeros((rows, self.hidden)));
        let c = g.constant(Array2::zeros((rows, self.hidden)));
        (h, c)
    }

    pub fn step(&self, g: &mut Graph, x: Var, h: Var, c: Var) -> (Var, Var) {
        let n = self.hidden;
        let xh = g.concat_cols(&[x, h]);
        let pre = g.matmul(xh, self.weight);
        let pre = g.add_row(pre, self.bias);
        let i = g.slice_cols(pre, 0, n);
        let f = g.slice_cols(pre, n, 2 * n);
        let cand = g.slice_cols(pre, 2 * n, 3 * n);
        let o = g.slice_cols(pre, 3 * n, 4 * n);
        let i = g.sigmoid(i);
        let f = g.sigmoid(f);
        let cand = g.tanh(cand);
        let o = g.sigmoid(o);
        let keep = g.mul(f, c);
        let write = g.mul(i, cand);
        let c_new = g.add(keep, write);
        let squashed = g.tanh(c_new);
        let h_new = g.mul(o, squashed);
        (h_new, c_new)
    }

    /// Like [`BoundLstm::step`] but rows whose `active` entry is 0 carry their state through.
    pub fn masked_step(&self, g: &mut Graph, x: Var, h: Var, c: Var, active: &Array2<f64>) -> (Var, Var) {
        let (h_new, c_new) = self.step(g, x, h, c);
        if active.iter().all(|&a| a > 0.0) {
            return (h_new, c_new);
        }
        let on = g.constant(active.clone());
        let off = g.constant(active.mapv(|a| 1.0 - a));
        let blend = |g: &mut Graph, new: Var, old: Var| {
            let a = g.mul_col(new, on);
            let b = g.mul_col(old, off);
            g.add(a, b)
        };
        (blend(g, h_new, h), blend(g, c_new, c))
    }
}
