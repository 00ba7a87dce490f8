//! Scaled dot-product attention, multi-head blocks and the sinusoidal
//! position table.

use serde::Serialize;

use crate::corpus::tags::LocalCounter;
use crate::corpus::vocab::{BOS_ID, DELIM_ID};
use crate::error::{Error, Result};
use crate::params::ParamId;
use crate::tensor::{kernels, Graph, Tensor, Var};

use super::config::{PeConvention, PeMode};

/// Additive surrogate for −∞ on masked scores. `exp` of it underflows to
/// exactly zero against any finite row maximum.
pub const MASKED: f64 = -1e30;

/// Which keys each query may attend to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttnMask {
    rows: usize,
    cols: usize,
    allowed: Vec<bool>,
}

impl AttnMask {
    pub fn new(rows: usize, cols: usize, allowed: Vec<bool>) -> Result<Self> {
        if allowed.len() != rows * cols {
            return Err(Error::Dimension {
                op: "mask",
                lhs: vec![rows, cols],
                rhs: vec![allowed.len()],
            });
        }
        if let Some(r) = (0..rows).find(|&r| !allowed[r * cols..(r + 1) * cols].iter().any(|&a| a)) {
            return Err(Error::Contract(format!("attention row {r} has no unmasked key")));
        }
        Ok(AttnMask {
            rows,
            cols,
            allowed,
        })
    }

    /// Query `i` sees keys `0..=i`.
    pub fn causal(n: usize) -> Self {
        let allowed = (0..n).flat_map(|i| (0..n).map(move |j| j <= i)).collect();
        AttnMask {
            rows: n,
            cols: n,
            allowed,
        }
    }

    pub fn additive(&self) -> Tensor {
        let data = self
            .allowed
            .iter()
            .map(|&a| if a { 0.0 } else { MASKED })
            .collect();
        Tensor::new(vec![self.rows, self.cols], data).expect("mask shape")
    }
}

/// `softmax(QKᵀ/√d_k + mask)·V`. Also returns the weight node.
pub fn scaled_attention(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    mask: Option<&AttnMask>,
) -> Result<(Var, Var)> {
    let d_k = g.value(q).cols();
    let scores = g.matmul_nt(q, k)?;
    let mut scores = g.scale(scores, 1.0 / (d_k as f64).sqrt())?;
    if let Some(mask) = mask {
        let (r, c) = g.value(scores).dims2();
        if (mask.rows, mask.cols) != (r, c) {
            return Err(Error::Dimension {
                op: "attention mask",
                lhs: vec![r, c],
                rhs: vec![mask.rows, mask.cols],
            });
        }
        let m = g.constant(mask.additive());
        scores = g.add(scores, m)?;
    }
    let weights = g.softmax(scores, 1)?;
    Ok((g.matmul(weights, v)?, weights))
}

/// Projection matrices of one multi-head block. Heads are column blocks
/// of width `d_model / heads`.
#[derive(Clone, Copy, Debug)]
pub struct MhaWeights {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
}

/// Multi-head attention of `x_q` over `x_kv`. Returns the output and the
/// per-head weight nodes.
pub fn multi_head(
    g: &mut Graph,
    x_q: Var,
    x_kv: Var,
    w: &MhaWeights,
    heads: usize,
    mask: Option<&AttnMask>,
) -> Result<(Var, Vec<Var>)> {
    let d = g.value(x_q).cols();
    if heads == 0 || d % heads != 0 {
        return Err(Error::ConfigConflict {
            first: "heads".into(),
            second: "d_model".into(),
            reason: format!("{heads} does not divide {d}"),
        });
    }
    let (wq, wk, wv, wo) = (g.param(w.wq), g.param(w.wk), g.param(w.wv), g.param(w.wo));
    let q = g.matmul(x_q, wq)?;
    let k = g.matmul(x_kv, wk)?;
    let v = g.matmul(x_kv, wv)?;
    project_heads(g, q, k, v, wo, heads, mask)
}

/// Multi-head attention from already projected `q`, `k`, `v`.
pub(crate) fn project_heads(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    wo: Var,
    heads: usize,
    mask: Option<&AttnMask>,
) -> Result<(Var, Vec<Var>)> {
    let d = g.value(q).cols();
    let dh = d / heads;
    let mut outs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (g.cols(q, lo, hi)?, g.cols(k, lo, hi)?, g.cols(v, lo, hi)?)
        };
        let (o, w) = scaled_attention(g, qh, kh, vh, mask)?;
        outs.push(o);
        weights.push(w);
    }
    let cat = if heads == 1 { outs[0] } else { g.concat(&outs, 1)? };
    Ok((g.matmul(cat, wo)?, weights))
}

/// Sinusoidal table rows for the given positions.
pub fn positional_encoding(positions: &[i64], d_model: usize, convention: PeConvention) -> Result<Tensor> {
    if positions.is_empty() {
        return Err(Error::Contract("no positions to encode".into()));
    }
    let mut data = Vec::with_capacity(positions.len() * d_model);
    for &p in positions {
        if p < 0 {
            return Err(Error::Contract(format!("negative position {p}")));
        }
        data.extend(encoding_row(p as f64, d_model, convention));
    }
    Tensor::new(vec![positions.len(), d_model], data)
}

fn encoding_row(p: f64, d: usize, convention: PeConvention) -> impl Iterator<Item = f64> {
    let df = d as f64;
    (0..d).map(move |i| {
        let c = (i / 2) as f64;
        if i % 2 == 0 {
            (p / 10000f64.powf(2.0 * c / df)).sin()
        } else {
            let exponent = match convention {
                PeConvention::Symmetric => 2.0 * c / df,
                PeConvention::AsPrinted => 2.0 * c + 1.0 / df,
            };
            (p / 10000f64.powf(exponent)).cos()
        }
    })
}

/// How decoder input tokens are assigned positions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PositionalPlan {
    pub mode: PeMode,
    pub d_model: usize,
    pub convention: PeConvention,
}

/// Position of each fed decoder token under one plan. BOS occupies
/// position 0 and, under local mode, closes like a delimiter.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PositionTracker {
    local: LocalCounter,
    index: usize,
}

impl PositionTracker {
    pub fn next(&mut self, mode: PeMode, token: usize) -> usize {
        let local = self.local.next(token == DELIM_ID || token == BOS_ID);
        let global = self.index;
        self.index += 1;
        match mode {
            PeMode::Local => local,
            PeMode::Global | PeMode::None => global,
        }
    }
}

impl PositionalPlan {
    pub fn positions(&self, tokens: &[usize]) -> Vec<i64> {
        let mut tracker = PositionTracker::default();
        tokens
            .iter()
            .map(|&t| tracker.next(self.mode, t) as i64)
            .collect()
    }

    /// `len × d_model` table for the fed tokens; all zeros in `none` mode.
    pub fn encode(&self, tokens: &[usize]) -> Result<Tensor> {
        match self.mode {
            PeMode::None => Ok(Tensor::zeros(&[tokens.len().max(1), self.d_model])),
            _ => positional_encoding(&self.positions(tokens), self.d_model, self.convention),
        }
    }

    pub fn row(&self, position: usize) -> Vec<f64> {
        match self.mode {
            PeMode::None => vec![0.0; self.d_model],
            _ => encoding_row(position as f64, self.d_model, self.convention).collect(),
        }
    }
}

/// One attention matrix captured for inspection.
#[derive(Clone, Debug, Serialize)]
pub struct AttentionRecord {
    pub layer: usize,
    pub head: usize,
    /// `self` or `encoder`.
    pub kind: &'static str,
    pub query_tokens: Vec<String>,
    pub key_tokens: Vec<String>,
    /// `weights[q][k]`.
    pub weights: Vec<Vec<f64>>,
}

/// Eager single-query attention over cached keys and values, used by the
/// incremental decoder. `k` and `v` are `t × d` row-major.
pub(crate) fn attend_row(q: &[f64], k: &[f64], v: &[f64], heads: usize) -> Vec<f64> {
    let d = q.len();
    let t = k.len() / d;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = vec![0.0; d];
    let mut scores = vec![0.0; t];
    for h in 0..heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        for (j, s) in scores.iter_mut().enumerate() {
            *s = kernels::dot(&q[lo..hi], &k[j * d + lo..j * d + hi]) * scale;
        }
        kernels::softmax_in_place(&mut scores);
        for (j, &w) in scores.iter().enumerate() {
            for (o, &vv) in out[lo..hi].iter_mut().zip(&v[j * d + lo..j * d + hi]) {
                *o += w * vv;
            }
        }
    }
    out
}
