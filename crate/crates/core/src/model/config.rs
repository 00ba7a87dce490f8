use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Encoder/decoder pairing: `L` is a recurrent stack, `A` an attention stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    L2A,
    L2L,
    A2A,
    A2L,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::L2A, Variant::L2L, Variant::A2A, Variant::A2L];

    pub fn lstm_encoder(self) -> bool {
        matches!(self, Variant::L2A | Variant::L2L)
    }

    pub fn attention_decoder(self) -> bool {
        matches!(self, Variant::L2A | Variant::A2A)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::L2A => "L2A",
            Variant::L2L => "L2L",
            Variant::A2A => "A2A",
            Variant::A2L => "A2L",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

/// Which position index feeds the sinusoidal encoding on the decoder side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PeMode {
    /// Offset of the word inside its own tag.
    Local,
    /// Offset in the whole stream.
    Global,
    None,
}

impl PeMode {
    pub const ALL: [PeMode; 3] = [PeMode::Local, PeMode::Global, PeMode::None];

    pub fn as_str(self) -> &'static str {
        match self {
            PeMode::Local => "local",
            PeMode::Global => "global",
            PeMode::None => "none",
        }
    }
}

impl fmt::Display for PeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PeMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown positional encoding `{s}`")))
    }
}

/// Exponent used on odd dimensions of the sinusoidal table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PeConvention {
    /// `cos(p / 10000^(2c/d))`, the same frequency as the paired even dim.
    Symmetric,
    /// `cos(p / 10000^(2c + 1/d))`, the formula read with literal precedence.
    AsPrinted,
}

impl FromStr for PeConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "symmetric" => Ok(PeConvention::Symmetric),
            "as-printed" => Ok(PeConvention::AsPrinted),
            other => Err(Error::Config(format!("unknown pe convention `{other}`"))),
        }
    }
}

/// Architecture hyper-parameters. Vocabulary sizes are filled in once the
/// vocabularies are built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub variant: Variant,
    pub pe: PeMode,
    pub pe_convention: PeConvention,
    /// Multiply target embeddings by `√d_model` before adding positions.
    pub scale_embeddings: bool,
    pub init_range: f64,
    pub forget_bias: f64,
    pub layer_norm_eps: f64,
    /// Dropout on encoder outputs during training; 0 disables it.
    pub dropout: f64,
    pub source_vocab: usize,
    pub target_vocab: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 512,
            heads: 8,
            d_ff: 2048,
            encoder_layers: 2,
            decoder_layers: 4,
            variant: Variant::L2A,
            pe: PeMode::Local,
            pe_convention: PeConvention::Symmetric,
            scale_embeddings: true,
            init_range: 0.08,
            forget_bias: 1.0,
            layer_norm_eps: 1e-5,
            dropout: 0.0,
            source_vocab: 0,
            target_vocab: 0,
        }
    }
}

impl ModelConfig {
    /// Desk-scale profile: `d_model` 64, 4 heads, `d_ff` 256.
    pub fn desk() -> Self {
        ModelConfig {
            d_model: 64,
            heads: 4,
            d_ff: 256,
            ..ModelConfig::default()
        }
    }

    pub fn paper() -> Self {
        ModelConfig::default()
    }

    /// Per-direction LSTM width; the two directions concatenate to `d_model`.
    pub fn lstm_hidden(&self) -> usize {
        self.d_model / 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || self.d_ff == 0 {
            return Err(Error::Config("d_model, heads and d_ff must be positive".into()));
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::ConfigConflict {
                first: "heads".into(),
                second: "d_model".into(),
                reason: format!("{} does not divide {}", self.heads, self.d_model),
            });
        }
        if self.variant.lstm_encoder() && self.d_model % 2 != 0 {
            return Err(Error::ConfigConflict {
                first: "variant".into(),
                second: "d_model".into(),
                reason: "a bidirectional encoder needs an even d_model".into(),
            });
        }
        if self.encoder_layers == 0 || self.decoder_layers == 0 {
            return Err(Error::Config("layer counts must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}
