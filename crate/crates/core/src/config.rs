//! Run configuration: preset defaults, then a TOML file, then flag
//! overrides, validated as a whole. Also the run manifest and the
//! ablation matrix.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::TagOrder;
use crate::error::{Error, Result};
use crate::eval::Averaging;
use crate::infer::{GenerateConfig, VoteMode};
use crate::model::{ModelConfig, PeMode, Variant};
use crate::train::TrainConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Small model that trains on one CPU core.
    Desk,
    /// Full-size settings.
    #[default]
    Paper,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => Err(Error::Config(format!("unknown preset `{other}`"))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Desk => "desk",
            Preset::Paper => "paper",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    /// Master seed; training, shuffling and initialisation derive from it.
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub generate: GenerateConfig,
    pub averaging: Averaging,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::preset(Preset::Paper)
    }
}

/// Values given on the command line; `None` keeps the layered value.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub preset: Option<Preset>,
    pub seed: Option<u64>,
    pub order: Option<TagOrder>,
    pub pe: Option<PeMode>,
    pub variant: Option<Variant>,
    pub d_model: Option<usize>,
    pub heads: Option<usize>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub beam: Option<usize>,
    pub threshold: Option<f64>,
    pub vote_mode: Option<VoteMode>,
    pub max_len: Option<usize>,
    pub deterministic: bool,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let (model, train) = match preset {
            Preset::Desk => (ModelConfig::desk(), TrainConfig::desk()),
            Preset::Paper => (ModelConfig::paper(), TrainConfig::default()),
        };
        RunConfig {
            preset,
            seed: train.seed,
            model,
            train,
            generate: GenerateConfig::default(),
            averaging: Averaging::Micro,
        }
    }

    /// Layers `file` (if any) and `flags` over the preset defaults. The
    /// preset itself is taken from the flags, else the file, else `paper`.
    pub fn load(file: Option<&Path>, flags: &Overrides) -> Result<Self> {
        let text = match file {
            Some(p) => Some(std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
            None => None,
        };
        RunConfig::from_toml(text.as_deref(), flags)
    }

    pub fn from_toml(text: Option<&str>, flags: &Overrides) -> Result<Self> {
        let file: toml::Table = match text {
            Some(t) => toml::from_str(t).map_err(|e| Error::Config(e.to_string()))?,
            None => toml::Table::new(),
        };
        let file_preset = match file.get("preset") {
            Some(v) => Some(
                v.as_str()
                    .ok_or_else(|| Error::Config("`preset` must be a string".into()))?
                    .parse()?,
            ),
            None => None,
        };
        let preset = flags.preset.or(file_preset).unwrap_or_default();
        let mut base = toml::Table::try_from(RunConfig::preset(preset)).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut base, file);
        let mut cfg: RunConfig = base.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.preset = preset;
        cfg.apply(flags);
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, f: &Overrides) {
        if let Some(s) = f.seed {
            self.seed = s;
        }
        self.train.seed = self.seed;
        if let Some(o) = f.order {
            self.train.order = o;
        }
        if let Some(pe) = f.pe {
            self.model.pe = pe;
        }
        if let Some(v) = f.variant {
            self.model.variant = v;
        }
        if let Some(d) = f.d_model {
            self.model.d_model = d;
        }
        if let Some(h) = f.heads {
            self.model.heads = h;
        }
        if let Some(e) = f.epochs {
            self.train.epochs = e;
        }
        if let Some(b) = f.batch_size {
            self.train.batch_size = b;
        }
        if let Some(b) = f.beam {
            self.generate.beam = b;
            self.generate.n_best = b;
            if f.threshold.is_none() {
                self.generate.threshold = b as f64 / 4.0;
            }
        }
        if let Some(t) = f.threshold {
            self.generate.threshold = t;
        }
        if let Some(m) = f.vote_mode {
            self.generate.vote_mode = m;
        }
        if let Some(m) = f.max_len {
            self.generate.max_len = m;
        }
        if f.deterministic {
            self.train.deterministic = true;
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.generate.validate()?;
        if self.generate.n_best > self.generate.beam {
            return Err(Error::ConfigConflict {
                first: "generate.n_best".into(),
                second: "generate.beam".into(),
                reason: format!("{} best of a beam of {}", self.generate.n_best, self.generate.beam),
            });
        }
        if self.train.seed != self.seed {
            return Err(Error::ConfigConflict {
                first: "train.seed".into(),
                second: "seed".into(),
                reason: "set the master seed only".into(),
            });
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Recursive table merge; `top` wins.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Pe,
    Variant,
    Order,
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pe" => Ok(Axis::Pe),
            "variant" => Ok(Axis::Variant),
            "order" => Ok(Axis::Order),
            other => Err(Error::Config(format!("unknown ablation axis `{other}`"))),
        }
    }
}

/// One cell of an ablation matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRun {
    /// `pe=local,variant=L2A`; empty for the base config.
    pub label: String,
    pub config: RunConfig,
}

/// Cartesian product over `axes` (duplicates ignored, order as given).
pub fn ablation_matrix(base: &RunConfig, axes: &[Axis]) -> Vec<AblationRun> {
    let mut runs = vec![AblationRun {
        label: String::new(),
        config: base.clone(),
    }];
    let mut done = Vec::new();
    for &axis in axes {
        if done.contains(&axis) {
            continue;
        }
        done.push(axis);
        let mut next = Vec::new();
        for run in &runs {
            let cells: Vec<(String, RunConfig)> = match axis {
                Axis::Pe => PeMode::ALL
                    .iter()
                    .map(|&pe| {
                        let mut c = run.config.clone();
                        c.model.pe = pe;
                        (format!("pe={pe}"), c)
                    })
                    .collect(),
                Axis::Variant => Variant::ALL
                    .iter()
                    .map(|&v| {
                        let mut c = run.config.clone();
                        c.model.variant = v;
                        (format!("variant={v}"), c)
                    })
                    .collect(),
                Axis::Order => TagOrder::ALL
                    .iter()
                    .map(|&o| {
                        let mut c = run.config.clone();
                        c.train.order = o;
                        (format!("order={o}"), c)
                    })
                    .collect(),
            };
            for (part, config) in cells {
                let label = if run.label.is_empty() {
                    part
                } else {
                    format!("{},{}", run.label, part)
                };
                next.push(AblationRun { label, config });
            }
        }
        runs = next;
    }
    runs
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

pub fn digest_file(path: &Path) -> Result<FileDigest> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(FileDigest {
        path: path.to_path_buf(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

/// Everything needed to repeat a command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config: RunConfig,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<PathBuf>,
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig, inputs: &[&Path], outputs: &[&Path]) -> Result<Self> {
        Ok(Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            inputs: inputs.iter().map(|p| digest_file(p)).collect::<Result<_>>()?,
            outputs: outputs.iter().map(|p| p.to_path_buf()).collect(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_without_file_or_flags() {
        let c = RunConfig::load(None, &Overrides::default()).unwrap();
        assert_eq!(c.preset, Preset::Paper);
        assert_eq!(c.model.d_model, 512);
        assert_eq!(c.model.encoder_layers, 2);
        assert_eq!(c.model.decoder_layers, 4);
        assert_eq!(c.generate.beam, 48);
        assert_eq!(c.generate.threshold, 12.0);
        assert_eq!(c.train.vocab_cap, 80_000);
    }

    #[test]
    fn flags_beat_the_file() {
        let file = "[model]\nd_model = 512\nheads = 8\n";
        let flags = Overrides {
            d_model: Some(64),
            ..Overrides::default()
        };
        let c = RunConfig::from_toml(Some(file), &flags).unwrap();
        assert_eq!(c.model.d_model, 64);
        let c = RunConfig::from_toml(Some("[model]\nd_model = 256\n"), &Overrides::default()).unwrap();
        assert_eq!(c.model.d_model, 256);
    }

    #[test]
    fn indivisible_heads_name_both_keys() {
        let flags = Overrides {
            heads: Some(7),
            d_model: Some(64),
            ..Overrides::default()
        };
        let err = RunConfig::from_toml(None, &flags).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("heads") && msg.contains("d_model"), "{msg}");
    }

    #[test]
    fn file_preset_and_flag_preset() {
        let c = RunConfig::from_toml(Some("preset = \"desk\"\n"), &Overrides::default()).unwrap();
        assert_eq!(c.model.d_model, 64);
        let flags = Overrides {
            preset: Some(Preset::Paper),
            ..Overrides::default()
        };
        let c = RunConfig::from_toml(Some("preset = \"desk\"\n"), &flags).unwrap();
        assert_eq!(c.model.d_model, 512);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_toml(Some("[model]\nd_modle = 3\n"), &Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("d_modle"), "{err}");
    }

    #[test]
    fn optional_keys_are_accepted() {
        let c = RunConfig::from_toml(Some("[train]\ntarget_loss = 0.1\n"), &Overrides::default()).unwrap();
        assert_eq!(c.train.target_loss, Some(0.1));
    }

    #[test]
    fn beam_flag_moves_the_vote_threshold() {
        let flags = Overrides {
            beam: Some(8),
            ..Overrides::default()
        };
        let c = RunConfig::from_toml(None, &flags).unwrap();
        assert_eq!((c.generate.beam, c.generate.n_best, c.generate.threshold), (8, 8, 2.0));
    }

    #[test]
    fn resolved_config_round_trips_through_toml() {
        let flags = Overrides {
            preset: Some(Preset::Desk),
            seed: Some(11),
            order: Some(TagOrder::Desc),
            ..Overrides::default()
        };
        let c = RunConfig::from_toml(None, &flags).unwrap();
        let again = RunConfig::from_toml(Some(&c.to_toml().unwrap()), &Overrides::default()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn matrix_cardinalities() {
        let base = RunConfig::preset(Preset::Desk);
        assert_eq!(ablation_matrix(&base, &[]).len(), 1);
        assert_eq!(ablation_matrix(&base, &[Axis::Pe]).len(), 3);
        let vo = ablation_matrix(&base, &[Axis::Variant, Axis::Order]);
        assert_eq!(vo.len(), 12);
        assert_eq!(ablation_matrix(&base, &[Axis::Pe, Axis::Pe]).len(), 3);
        let labels: std::collections::BTreeSet<&str> = vo.iter().map(|r| r.label.as_str()).collect();
        assert_eq!(labels.len(), 12);
        assert!(labels.contains("variant=A2L,order=desc"));
    }

    #[test]
    fn every_matrix_cell_validates() {
        for preset in [Preset::Desk, Preset::Paper] {
            let base = RunConfig::preset(preset);
            for run in ablation_matrix(&base, &[Axis::Pe, Axis::Variant, Axis::Order]) {
                run.config.validate().unwrap();
                let text = run.config.to_toml().unwrap();
                assert_eq!(RunConfig::from_toml(Some(&text), &Overrides::default()).unwrap(), run.config);
            }
        }
    }

    #[test]
    fn manifest_digests_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("in.txt");
        std::fs::write(&p, "abc").unwrap();
        let m = Manifest::new("train", &RunConfig::default(), &[&p], &[]).unwrap();
        assert_eq!(
            m.inputs[0].sha256,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        let out = dir.path().join("manifest.json");
        m.save(&out).unwrap();
        let back: Manifest = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
