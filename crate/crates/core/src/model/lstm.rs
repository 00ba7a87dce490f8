//! Standard (non-peephole) LSTM cell and the bidirectional layer built
//! from it. Gate columns are laid out `[input, forget, candidate, output]`.

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{kernels, Graph, Tensor, Var};

/// Weights of one LSTM direction.
#[derive(Clone, Copy, Debug)]
pub struct LstmWeights {
    /// `in × 4H`
    pub w_ih: ParamId,
    /// `H × 4H`
    pub w_hh: ParamId,
    /// `1 × 4H`, shared by the input and recurrent paths.
    pub bias: ParamId,
    pub hidden: usize,
}

/// Both directions of one bidirectional layer; they share nothing.
#[derive(Clone, Copy, Debug)]
pub struct BiLstmLayer {
    pub forward: LstmWeights,
    pub backward: LstmWeights,
}

fn cell(g: &mut Graph, gates: Var, c_prev: Var, hidden: usize) -> Result<(Var, Var)> {
    let h = hidden;
    let i = g.cols(gates, 0, h)?;
    let f = g.cols(gates, h, 2 * h)?;
    let cand = g.cols(gates, 2 * h, 3 * h)?;
    let o = g.cols(gates, 3 * h, 4 * h)?;
    let i = g.sigmoid(i);
    let f = g.sigmoid(f);
    let cand = g.tanh(cand);
    let o = g.sigmoid(o);
    let keep = g.mul(f, c_prev)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let tc = g.tanh(c);
    let h = g.mul(o, tc)?;
    Ok((h, c))
}

/// One recurrence step: `x` is `1 × in`, states are `1 × H`.
pub fn lstm_step(g: &mut Graph, x: Var, h_prev: Var, c_prev: Var, w: &LstmWeights) -> Result<(Var, Var)> {
    let hidden = w.hidden;
    for (v, op) in [(h_prev, "lstm_step h_prev"), (c_prev, "lstm_step c_prev")] {
        if g.value(v).dims2() != (1, hidden) {
            return Err(Error::Dimension {
                op,
                lhs: g.shape(v).to_vec(),
                rhs: vec![1, hidden],
            });
        }
    }
    let (w_ih, w_hh, b) = (g.param(w.w_ih), g.param(w.w_hh), g.param(w.bias));
    let xw = g.matmul(x, w_ih)?;
    let pre = g.add(xw, b)?;
    let hw = g.matmul(h_prev, w_hh)?;
    let gates = g.add(pre, hw)?;
    cell(g, gates, c_prev, hidden)
}

/// Runs one direction over `inputs` (`N × in`) from zero initial states.
/// Returns the hidden state for every position, in input order.
pub fn run_direction(g: &mut Graph, inputs: Var, w: &LstmWeights, reverse: bool) -> Result<Vec<Var>> {
    let n = g.value(inputs).rows();
    let (w_ih, w_hh, b) = (g.param(w.w_ih), g.param(w.w_hh), g.param(w.bias));
    let xw = g.matmul(inputs, w_ih)?;
    let pre = g.add(xw, b)?;
    let mut h = g.constant(Tensor::zeros(&[1, w.hidden]));
    let mut c = g.constant(Tensor::zeros(&[1, w.hidden]));
    let mut out = vec![h; n];
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..n).rev())
    } else {
        Box::new(0..n)
    };
    for t in order {
        let row = g.rows(pre, t, t + 1)?;
        let hw = g.matmul(h, w_hh)?;
        let gates = g.add(row, hw)?;
        (h, c) = cell(g, gates, c, w.hidden)?;
        out[t] = h;
    }
    Ok(out)
}

/// `N × 2H` output: forward states in the left half, backward in the right.
pub fn bilstm_layer(g: &mut Graph, inputs: Var, layer: &BiLstmLayer) -> Result<Var> {
    let fwd = run_direction(g, inputs, &layer.forward, false)?;
    let bwd = run_direction(g, inputs, &layer.backward, true)?;
    let f = g.concat(&fwd, 0)?;
    let b = g.concat(&bwd, 0)?;
    g.concat(&[f, b], 1)
}

/// Eager step on plain slices, for incremental decoding.
pub(crate) fn step_eager(params: &ParamStore, w: &LstmWeights, x: &[f64], h: &mut [f64], c: &mut [f64]) {
    let hid = w.hidden;
    let w_ih = params.get(w.w_ih);
    let w_hh = params.get(w.w_hh);
    let mut gates = kernels::matmul(x, w_ih.data(), 1, x.len(), 4 * hid);
    let hw = kernels::matmul(h, w_hh.data(), 1, hid, 4 * hid);
    for ((g, a), b) in gates.iter_mut().zip(&hw).zip(params.get(w.bias).data()) {
        *g = (*g + b) + a;
    }
    for j in 0..hid {
        let i = kernels::sigmoid(gates[j]);
        let f = kernels::sigmoid(gates[hid + j]);
        let cand = gates[2 * hid + j].tanh();
        let o = kernels::sigmoid(gates[3 * hid + j]);
        c[j] = f * c[j] + i * cand;
        h[j] = o * c[j].tanh();
    }
}
