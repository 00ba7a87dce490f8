use crate::corpus::vocab::UNK_ID;
use crate::error::Result;
use crate::tensor::{Graph, Var};

use super::attention::{multi_head, positional_encoding};
use super::{lstm, EncoderLayout, FeedForward, LayerNormWeights, Model};

pub(crate) fn ffn(g: &mut Graph, x: Var, w: &FeedForward) -> Result<Var> {
    let (w1, b1, w2, b2) = (g.param(w.w1), g.param(w.b1), g.param(w.w2), g.param(w.b2));
    let h = g.matmul(x, w1)?;
    let h = g.add(h, b1)?;
    let h = g.relu(h);
    let o = g.matmul(h, w2)?;
    g.add(o, b2)
}

pub(crate) fn norm(g: &mut Graph, x: Var, w: &LayerNormWeights, eps: f64) -> Result<Var> {
    let (gain, bias) = (g.param(w.gain), g.param(w.bias));
    g.layer_norm(x, gain, bias, eps)
}

/// Residual connection followed by layer normalisation.
pub(crate) fn add_norm(g: &mut Graph, x: Var, sub: Var, w: &LayerNormWeights, eps: f64) -> Result<Var> {
    let s = g.add(x, sub)?;
    norm(g, s, w, eps)
}

pub(crate) fn encode(model: &Model, g: &mut Graph, src: &[usize]) -> Result<Var> {
    let cfg = model.config();
    let layout = model.layout();
    let ids: Vec<usize> = src
        .iter()
        .map(|&i| if i < cfg.source_vocab { i } else { UNK_ID })
        .collect();
    let table = g.param(layout.src_embed);
    let emb = g.embedding(table, &ids)?;
    match &layout.encoder {
        EncoderLayout::Lstm(layers) => {
            let mut x = emb;
            for layer in layers {
                x = lstm::bilstm_layer(g, x, layer)?;
            }
            Ok(x)
        }
        EncoderLayout::Attention(blocks) => {
            let mut x = if cfg.scale_embeddings {
                g.scale(emb, (cfg.d_model as f64).sqrt())?
            } else {
                emb
            };
            let positions: Vec<i64> = (0..ids.len() as i64).collect();
            let pe = g.constant(positional_encoding(&positions, cfg.d_model, cfg.pe_convention)?);
            x = g.add(x, pe)?;
            for b in blocks {
                let (a, _) = multi_head(g, x, x, &b.attn, cfg.heads, None)?;
                x = add_norm(g, x, a, &b.ln1, cfg.layer_norm_eps)?;
                let f = ffn(g, x, &b.ffn)?;
                x = add_norm(g, x, f, &b.ln2, cfg.layer_norm_eps)?;
            }
            Ok(x)
        }
    }
}
