use std::rc::Rc;

use crate::corpus::vocab::UNK_ID;
use crate::error::Result;
use crate::params::ParamStore;
use crate::tensor::{kernels, Graph, Tensor, Var};

use super::attention::{attend_row, multi_head, AttnMask, PositionTracker};
use super::config::PeMode;
use super::encoder::{add_norm, ffn};
use super::{lstm, DecoderLayout, FeedForward, LayerNormWeights, Model};

pub(crate) type AttnCapture = Vec<(usize, usize, &'static str, Var)>;

fn clamp_target(model: &Model, t: usize) -> usize {
    if t < model.config().target_vocab {
        t
    } else {
        UNK_ID
    }
}

pub(crate) fn decode_forward(
    model: &Model,
    g: &mut Graph,
    z: Var,
    fed: &[usize],
    mut capture: Option<&mut AttnCapture>,
) -> Result<Var> {
    let cfg = model.config();
    let layout = model.layout();
    let ids: Vec<usize> = fed.iter().map(|&t| clamp_target(model, t)).collect();
    let table = g.param(layout.tgt_embed);
    let emb = g.embedding(table, &ids)?;

    let top = match &layout.decoder {
        DecoderLayout::Attention(blocks) => {
            let mut x = if cfg.scale_embeddings {
                g.scale(emb, (cfg.d_model as f64).sqrt())?
            } else {
                emb
            };
            if cfg.pe != PeMode::None {
                let pe = g.constant(model.positional_plan().encode(fed)?);
                x = g.add(x, pe)?;
            }
            let mask = AttnMask::causal(ids.len());
            let eps = cfg.layer_norm_eps;
            for (l, b) in blocks.iter().enumerate() {
                let (a, ws) = multi_head(g, x, x, &b.self_attn, cfg.heads, Some(&mask))?;
                if let Some(cap) = capture.as_deref_mut() {
                    cap.extend(ws.into_iter().enumerate().map(|(h, w)| (l, h, "self", w)));
                }
                x = add_norm(g, x, a, &b.ln1, eps)?;
                let (c, ws) = multi_head(g, x, z, &b.cross_attn, cfg.heads, None)?;
                if let Some(cap) = capture.as_deref_mut() {
                    cap.extend(ws.into_iter().enumerate().map(|(h, w)| (l, h, "encoder", w)));
                }
                x = add_norm(g, x, c, &b.ln2, eps)?;
                let f = ffn(g, x, &b.ffn)?;
                x = add_norm(g, x, f, &b.ln3, eps)?;
            }
            x
        }
        DecoderLayout::Lstm {
            layers,
            attn,
            combine_w,
            combine_b,
        } => {
            let mut x = emb;
            for w in layers {
                let hs = lstm::run_direction(g, x, w, false)?;
                x = g.concat(&hs, 0)?;
            }
            let (ctx, ws) = multi_head(g, x, z, attn, cfg.heads, None)?;
            if let Some(cap) = capture.as_deref_mut() {
                cap.extend(ws.into_iter().enumerate().map(|(h, w)| (0, h, "encoder", w)));
            }
            let cat = g.concat(&[x, ctx], 1)?;
            let (cw, cb) = (g.param(*combine_w), g.param(*combine_b));
            let h = g.matmul(cat, cw)?;
            let h = g.add(h, cb)?;
            g.tanh(h)
        }
    };
    let (ow, ob) = (g.param(layout.out_w), g.param(layout.out_b));
    let logits = g.matmul(top, ow)?;
    g.add(logits, ob)
}

/// Encoder output with the key/value projections every decoding step
/// attends over.
#[derive(Clone, Debug)]
pub struct DecoderMemory {
    z: Tensor,
    /// Per cross-attention block: projected keys and values, `N × d`.
    cross: Vec<(Vec<f64>, Vec<f64>)>,
}

impl DecoderMemory {
    pub(crate) fn new(model: &Model, z: Tensor) -> Self {
        let p = model.params();
        let (n, d) = z.dims2();
        let project = |w| kernels::matmul(z.data(), p.get(w).data(), n, d, d);
        let cross = match &model.layout().decoder {
            DecoderLayout::Attention(blocks) => blocks
                .iter()
                .map(|b| (project(b.cross_attn.wk), project(b.cross_attn.wv)))
                .collect(),
            DecoderLayout::Lstm { attn, .. } => vec![(project(attn.wk), project(attn.wv))],
        };
        DecoderMemory { z, cross }
    }

    pub fn encoded(&self) -> &Tensor {
        &self.z
    }
}

#[derive(Debug)]
struct CacheNode {
    parent: Option<Rc<CacheNode>>,
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
enum StateInner {
    Attention {
        cache: Option<Rc<CacheNode>>,
        tracker: PositionTracker,
    },
    Lstm {
        h: Vec<Vec<f64>>,
        c: Vec<Vec<f64>>,
    },
}

/// Per-hypothesis incremental decoder state. Cloning is cheap: attention
/// caches are shared prefix chains.
#[derive(Clone, Debug)]
pub struct DecoderState {
    inner: StateInner,
    fed: usize,
}

impl DecoderState {
    pub(crate) fn new(model: &Model) -> Self {
        let inner = match &model.layout().decoder {
            DecoderLayout::Attention(_) => StateInner::Attention {
                cache: None,
                tracker: PositionTracker::default(),
            },
            DecoderLayout::Lstm { layers, .. } => StateInner::Lstm {
                h: layers.iter().map(|w| vec![0.0; w.hidden]).collect(),
                c: layers.iter().map(|w| vec![0.0; w.hidden]).collect(),
            },
        };
        DecoderState { inner, fed: 0 }
    }

    /// Tokens fed so far.
    pub fn len(&self) -> usize {
        self.fed
    }

    pub fn is_empty(&self) -> bool {
        self.fed == 0
    }
}

fn vec_mat(x: &[f64], w: &Tensor) -> Vec<f64> {
    kernels::matmul(x, w.data(), 1, x.len(), w.cols())
}

fn add_norm_row(p: &ParamStore, x: &[f64], sub: &[f64], w: &LayerNormWeights, eps: f64) -> Vec<f64> {
    let s: Vec<f64> = x.iter().zip(sub).map(|(a, b)| a + b).collect();
    kernels::layer_norm_rows(&s, p.get(w.gain).data(), p.get(w.bias).data(), s.len(), eps).0
}

fn ffn_row(p: &ParamStore, x: &[f64], w: &FeedForward) -> Vec<f64> {
    let mut h = vec_mat(x, p.get(w.w1));
    kernels::add_row_in_place(&mut h, p.get(w.b1).data());
    for v in h.iter_mut() {
        *v = v.max(0.0);
    }
    let mut o = vec_mat(&h, p.get(w.w2));
    kernels::add_row_in_place(&mut o, p.get(w.b2).data());
    o
}

pub(crate) fn step(model: &Model, memory: &DecoderMemory, state: &mut DecoderState, token: usize) -> Vec<f64> {
    let cfg = model.config();
    let p = model.params();
    let layout = model.layout();
    let token = clamp_target(model, token);
    let mut x = p.get(layout.tgt_embed).row(token).to_vec();
    state.fed += 1;

    let top = match (&layout.decoder, &mut state.inner) {
        (DecoderLayout::Attention(blocks), StateInner::Attention { cache, tracker }) => {
            if cfg.scale_embeddings {
                let s = (cfg.d_model as f64).sqrt();
                x.iter_mut().for_each(|v| *v *= s);
            }
            let pos = tracker.next(cfg.pe, token);
            if cfg.pe != PeMode::None {
                for (v, e) in x.iter_mut().zip(model.positional_plan().row(pos)) {
                    *v += e;
                }
            }
            let mut chain = Vec::new();
            let mut cur = cache.as_deref();
            while let Some(node) = cur {
                chain.push(node);
                cur = node.parent.as_deref();
            }
            chain.reverse();

            let eps = cfg.layer_norm_eps;
            let mut new_keys = Vec::with_capacity(blocks.len());
            let mut new_values = Vec::with_capacity(blocks.len());
            for (l, b) in blocks.iter().enumerate() {
                let q = vec_mat(&x, p.get(b.self_attn.wq));
                let k = vec_mat(&x, p.get(b.self_attn.wk));
                let v = vec_mat(&x, p.get(b.self_attn.wv));
                let mut keys: Vec<f64> = chain.iter().flat_map(|n| n.keys[l].iter().copied()).collect();
                let mut values: Vec<f64> = chain.iter().flat_map(|n| n.values[l].iter().copied()).collect();
                keys.extend_from_slice(&k);
                values.extend_from_slice(&v);
                let a = vec_mat(&attend_row(&q, &keys, &values, cfg.heads), p.get(b.self_attn.wo));
                x = add_norm_row(p, &x, &a, &b.ln1, eps);
                new_keys.push(k);
                new_values.push(v);

                let q = vec_mat(&x, p.get(b.cross_attn.wq));
                let (ck, cv) = &memory.cross[l];
                let c = vec_mat(&attend_row(&q, ck, cv, cfg.heads), p.get(b.cross_attn.wo));
                x = add_norm_row(p, &x, &c, &b.ln2, eps);
                let f = ffn_row(p, &x, &b.ffn);
                x = add_norm_row(p, &x, &f, &b.ln3, eps);
            }
            *cache = Some(Rc::new(CacheNode {
                parent: cache.take(),
                keys: new_keys,
                values: new_values,
            }));
            x
        }
        (
            DecoderLayout::Lstm {
                layers,
                attn,
                combine_w,
                combine_b,
            },
            StateInner::Lstm { h, c },
        ) => {
            for (l, w) in layers.iter().enumerate() {
                lstm::step_eager(p, w, &x, &mut h[l], &mut c[l]);
                x = h[l].clone();
            }
            let q = vec_mat(&x, p.get(attn.wq));
            let (ck, cv) = &memory.cross[0];
            let ctx = vec_mat(&attend_row(&q, ck, cv, cfg.heads), p.get(attn.wo));
            let cat: Vec<f64> = x.iter().chain(&ctx).copied().collect();
            let mut o = vec_mat(&cat, p.get(*combine_w));
            kernels::add_row_in_place(&mut o, p.get(*combine_b).data());
            o.iter_mut().for_each(|v| *v = v.tanh());
            o
        }
        _ => unreachable!("decoder state built for a different layout"),
    };
    let mut logits = vec_mat(&top, p.get(layout.out_w));
    kernels::add_row_in_place(&mut logits, p.get(layout.out_b).data());
    logits
}
