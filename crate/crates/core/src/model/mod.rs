//! The encoder–decoder network: parameter layout, teacher-forced graph
//! forward, and an eager incremental decoder for search.

pub mod attention;
pub mod config;
mod decoder;
mod encoder;
pub mod lstm;

pub use attention::{
    multi_head, positional_encoding, scaled_attention, AttentionRecord, AttnMask, MhaWeights,
    PositionalPlan,
};
pub use config::{ModelConfig, PeConvention, PeMode, Variant};
pub use decoder::{DecoderMemory, DecoderState};
pub use lstm::{lstm_step, BiLstmLayer, LstmWeights};

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::rng;
use crate::tensor::{Graph, Reduction, Tensor, Var};

#[derive(Clone, Copy, Debug)]
pub(crate) struct LayerNormWeights {
    pub gain: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct FeedForward {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Clone, Debug)]
pub(crate) struct EncoderBlock {
    pub attn: MhaWeights,
    pub ln1: LayerNormWeights,
    pub ffn: FeedForward,
    pub ln2: LayerNormWeights,
}

#[derive(Clone, Debug)]
pub(crate) enum EncoderLayout {
    Lstm(Vec<BiLstmLayer>),
    Attention(Vec<EncoderBlock>),
}

#[derive(Clone, Debug)]
pub(crate) struct DecoderBlock {
    pub self_attn: MhaWeights,
    pub ln1: LayerNormWeights,
    pub cross_attn: MhaWeights,
    pub ln2: LayerNormWeights,
    pub ffn: FeedForward,
    pub ln3: LayerNormWeights,
}

#[derive(Clone, Debug)]
pub(crate) enum DecoderLayout {
    Attention(Vec<DecoderBlock>),
    Lstm {
        layers: Vec<LstmWeights>,
        attn: MhaWeights,
        combine_w: ParamId,
        combine_b: ParamId,
    },
}

#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub src_embed: ParamId,
    pub tgt_embed: ParamId,
    pub encoder: EncoderLayout,
    pub decoder: DecoderLayout,
    pub out_w: ParamId,
    pub out_b: ParamId,
}

#[derive(Clone, Copy)]
enum Init {
    Uniform,
    Const(f64),
    ForgetBias,
}

/// Either registers fresh parameters or looks existing ones up by name.
trait ParamSource {
    fn get(&mut self, name: &str, shape: &[usize], init: Init) -> Result<ParamId>;
}

struct Initializer<'a> {
    store: &'a mut ParamStore,
    rng: rng::Rng,
    range: f64,
    forget_bias: f64,
}

impl ParamSource for Initializer<'_> {
    fn get(&mut self, name: &str, shape: &[usize], init: Init) -> Result<ParamId> {
        match init {
            Init::Uniform => self.store.uniform(name, shape, self.range, &mut self.rng),
            Init::Const(v) => self.store.filled(name, shape, v),
            Init::ForgetBias => {
                let width = shape.iter().product::<usize>();
                let h = width / 4;
                let mut t = Tensor::zeros(shape);
                t.data_mut()[h..2 * h].fill(self.forget_bias);
                self.store.insert(name, t)
            }
        }
    }
}

struct Lookup<'a>(&'a ParamStore);

impl ParamSource for Lookup<'_> {
    fn get(&mut self, name: &str, shape: &[usize], _init: Init) -> Result<ParamId> {
        let id = self
            .0
            .id(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
        let found = self.0.get(id).shape();
        if found != shape {
            return Err(Error::Checkpoint(format!(
                "parameter `{name}` has shape {found:?}, expected {shape:?}"
            )));
        }
        Ok(id)
    }
}

fn mha(src: &mut dyn ParamSource, prefix: &str, d: usize) -> Result<MhaWeights> {
    Ok(MhaWeights {
        wq: src.get(&format!("{prefix}.wq"), &[d, d], Init::Uniform)?,
        wk: src.get(&format!("{prefix}.wk"), &[d, d], Init::Uniform)?,
        wv: src.get(&format!("{prefix}.wv"), &[d, d], Init::Uniform)?,
        wo: src.get(&format!("{prefix}.wo"), &[d, d], Init::Uniform)?,
    })
}

fn layer_norm(src: &mut dyn ParamSource, prefix: &str, d: usize) -> Result<LayerNormWeights> {
    Ok(LayerNormWeights {
        gain: src.get(&format!("{prefix}.gain"), &[1, d], Init::Const(1.0))?,
        bias: src.get(&format!("{prefix}.bias"), &[1, d], Init::Const(0.0))?,
    })
}

fn feed_forward(src: &mut dyn ParamSource, prefix: &str, d: usize, d_ff: usize) -> Result<FeedForward> {
    Ok(FeedForward {
        w1: src.get(&format!("{prefix}.w1"), &[d, d_ff], Init::Uniform)?,
        b1: src.get(&format!("{prefix}.b1"), &[1, d_ff], Init::Const(0.0))?,
        w2: src.get(&format!("{prefix}.w2"), &[d_ff, d], Init::Uniform)?,
        b2: src.get(&format!("{prefix}.b2"), &[1, d], Init::Const(0.0))?,
    })
}

fn lstm_dir(src: &mut dyn ParamSource, prefix: &str, input: usize, hidden: usize) -> Result<LstmWeights> {
    Ok(LstmWeights {
        w_ih: src.get(&format!("{prefix}.w_ih"), &[input, 4 * hidden], Init::Uniform)?,
        w_hh: src.get(&format!("{prefix}.w_hh"), &[hidden, 4 * hidden], Init::Uniform)?,
        bias: src.get(&format!("{prefix}.bias"), &[1, 4 * hidden], Init::ForgetBias)?,
        hidden,
    })
}

fn build_layout(cfg: &ModelConfig, src: &mut dyn ParamSource) -> Result<Layout> {
    let d = cfg.d_model;
    let src_embed = src.get("src_embed", &[cfg.source_vocab, d], Init::Uniform)?;
    let tgt_embed = src.get("tgt_embed", &[cfg.target_vocab, d], Init::Uniform)?;

    let encoder = if cfg.variant.lstm_encoder() {
        let h = cfg.lstm_hidden();
        let mut layers = Vec::with_capacity(cfg.encoder_layers);
        for l in 0..cfg.encoder_layers {
            let input = if l == 0 { d } else { 2 * h };
            layers.push(BiLstmLayer {
                forward: lstm_dir(src, &format!("enc.{l}.fwd"), input, h)?,
                backward: lstm_dir(src, &format!("enc.{l}.bwd"), input, h)?,
            });
        }
        EncoderLayout::Lstm(layers)
    } else {
        let mut blocks = Vec::with_capacity(cfg.encoder_layers);
        for l in 0..cfg.encoder_layers {
            let p = format!("enc.{l}");
            blocks.push(EncoderBlock {
                attn: mha(src, &format!("{p}.self"), d)?,
                ln1: layer_norm(src, &format!("{p}.ln1"), d)?,
                ffn: feed_forward(src, &format!("{p}.ffn"), d, cfg.d_ff)?,
                ln2: layer_norm(src, &format!("{p}.ln2"), d)?,
            });
        }
        EncoderLayout::Attention(blocks)
    };

    let decoder = if cfg.variant.attention_decoder() {
        let mut blocks = Vec::with_capacity(cfg.decoder_layers);
        for l in 0..cfg.decoder_layers {
            let p = format!("dec.{l}");
            blocks.push(DecoderBlock {
                self_attn: mha(src, &format!("{p}.self"), d)?,
                ln1: layer_norm(src, &format!("{p}.ln1"), d)?,
                cross_attn: mha(src, &format!("{p}.cross"), d)?,
                ln2: layer_norm(src, &format!("{p}.ln2"), d)?,
                ffn: feed_forward(src, &format!("{p}.ffn"), d, cfg.d_ff)?,
                ln3: layer_norm(src, &format!("{p}.ln3"), d)?,
            });
        }
        DecoderLayout::Attention(blocks)
    } else {
        let mut layers = Vec::with_capacity(cfg.decoder_layers);
        for l in 0..cfg.decoder_layers {
            layers.push(lstm_dir(src, &format!("dec.{l}.lstm"), d, d)?);
        }
        DecoderLayout::Lstm {
            layers,
            attn: mha(src, "dec.cross", d)?,
            combine_w: src.get("dec.combine.w", &[2 * d, d], Init::Uniform)?,
            combine_b: src.get("dec.combine.b", &[1, d], Init::Const(0.0))?,
        }
    };

    Ok(Layout {
        src_embed,
        tgt_embed,
        encoder,
        decoder,
        out_w: src.get("out.w", &[d, cfg.target_vocab], Init::Uniform)?,
        out_b: src.get("out.b", &[1, cfg.target_vocab], Init::Const(0.0))?,
    })
}

/// A complete network: configuration, weights and their layout.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    layout: Layout,
}

impl Model {
    /// Fresh weights drawn from `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if config.source_vocab < 5 || config.target_vocab < 5 {
            return Err(Error::Config("vocabulary sizes must include the special symbols".into()));
        }
        let mut params = ParamStore::new();
        let layout = {
            let mut init = Initializer {
                store: &mut params,
                rng: rng::stream(seed, "init"),
                range: config.init_range,
                forget_bias: config.forget_bias,
            };
            build_layout(&config, &mut init)?
        };
        Ok(Model {
            config,
            params,
            layout,
        })
    }

    /// Wraps existing weights, checking names and shapes against `config`.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let layout = build_layout(&config, &mut Lookup(&params))?;
        Ok(Model {
            config,
            params,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn positional_plan(&self) -> PositionalPlan {
        PositionalPlan {
            mode: self.config.pe,
            d_model: self.config.d_model,
            convention: self.config.pe_convention,
        }
    }

    /// Source representation `Z` (`N × d_model`). With `dropout_rng`, the
    /// configured dropout is applied to the output.
    pub fn encode(&self, g: &mut Graph, src: &[usize], dropout_rng: Option<&mut rng::Rng>) -> Result<Var> {
        let z = encoder::encode(self, g, src)?;
        match dropout_rng {
            Some(r) if self.config.dropout > 0.0 => {
                let keep = 1.0 - self.config.dropout;
                let shape = g.shape(z).to_vec();
                let mut mask = Tensor::zeros(&shape);
                for m in mask.data_mut() {
                    *m = if r.gen::<f64>() < keep { 1.0 / keep } else { 0.0 };
                }
                let m = g.constant(mask);
                g.mul(z, m)
            }
            _ => Ok(z),
        }
    }

    /// Next-token logits for every fed position (`T × V`). `fed` starts
    /// with BOS.
    pub fn decode_forward(&self, g: &mut Graph, z: Var, fed: &[usize]) -> Result<Var> {
        decoder::decode_forward(self, g, z, fed, None)
    }

    /// As [`Model::decode_forward`], also capturing every attention matrix.
    pub fn decode_with_attention(
        &self,
        g: &mut Graph,
        z: Var,
        fed: &[usize],
    ) -> Result<(Var, Vec<(usize, usize, &'static str, Var)>)> {
        let mut records = Vec::new();
        let logits = decoder::decode_forward(self, g, z, fed, Some(&mut records))?;
        Ok((logits, records))
    }

    /// Summed cross-entropy of one teacher-forced example and the number of
    /// scored (non-PAD) positions. `target` should end with EOS.
    pub fn example_loss(
        &self,
        g: &mut Graph,
        src: &[usize],
        target: &[usize],
        dropout_rng: Option<&mut rng::Rng>,
    ) -> Result<(Var, usize)> {
        use crate::corpus::vocab::{BOS_ID, PAD_ID};
        if target.is_empty() {
            return Err(Error::Contract("empty target stream".into()));
        }
        let z = self.encode(g, src, dropout_rng)?;
        let mut fed = Vec::with_capacity(target.len());
        fed.push(BOS_ID);
        fed.extend_from_slice(&target[..target.len() - 1]);
        let logits = self.decode_forward(g, z, &fed)?;
        let targets: Vec<Option<usize>> = target
            .iter()
            .map(|&t| (t != PAD_ID).then_some(t))
            .collect();
        let count = targets.iter().flatten().count();
        Ok((g.cross_entropy(logits, &targets, Reduction::Sum)?, count))
    }

    /// Eager encoder output plus per-layer projections reused by every
    /// decoding step.
    pub fn memory(&self, src: &[usize]) -> Result<DecoderMemory> {
        let mut g = Graph::new(&self.params);
        let z = self.encode(&mut g, src, None)?;
        Ok(decoder::DecoderMemory::new(self, g.value(z).clone()))
    }

    pub fn start_state(&self) -> DecoderState {
        decoder::DecoderState::new(self)
    }

    /// Feeds one token and returns the logits for the next position.
    pub fn step(&self, memory: &DecoderMemory, state: &mut DecoderState, token: usize) -> Vec<f64> {
        decoder::step(self, memory, state, token)
    }

    pub(crate) fn layout(&self) -> &Layout {
        &self.layout
    }
}
