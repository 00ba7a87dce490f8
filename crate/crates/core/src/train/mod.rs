//! Teacher-forced training: example preparation, bucketed batches, the
//! masked mean cross-entropy, and the epoch loop with best-dev selection.

mod checkpoint;
mod optim;

pub use checkpoint::{Checkpoint, MAGIC, VERSION};
pub use optim::{clip_global_norm, global_norm, Adam, OptimConfig};

use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::vocab::{DEFAULT_SOURCE_CAP, EOS_ID, PAD_ID};
use crate::corpus::{reorder_tags, serialize_tags, Document, FrequencyTable, Side, TagOrder, Vocab};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::par;
use crate::rng;
use crate::tensor::{Graph, Tensor};

/// One training pair as ids. `target` is the serialised, reordered tag
/// stream followed by EOS.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub id: String,
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

/// Converts tagged documents to examples; tagless ones are skipped. Tags
/// missing from `freq` (possible outside the training split) rank as
/// count 0.
pub fn prepare_examples(
    docs: &[Document],
    source: &Vocab,
    target: &Vocab,
    freq: &FrequencyTable,
    order: TagOrder,
    seed: u64,
) -> Result<Vec<Example>> {
    let shuffle = rng::sub_seed(seed, "shuffle");
    let mut out = Vec::with_capacity(docs.len());
    for (i, doc) in docs.iter().enumerate() {
        if doc.is_tagless() || doc.source_words.is_empty() {
            continue;
        }
        let missing: Vec<String> = doc
            .tag_strings()
            .into_iter()
            .filter(|t| !freq.contains(t))
            .collect();
        let tags = if missing.is_empty() {
            reorder_tags(&doc.tags, freq, order, Some(rng::sub_seed(shuffle, &i.to_string())))?
        } else {
            let extended =
                FrequencyTable::from_counts(freq.iter().map(|(t, c)| (t.to_string(), c)).chain(missing.into_iter().map(|t| (t, 0))));
            reorder_tags(&doc.tags, &extended, order, Some(rng::sub_seed(shuffle, &i.to_string())))?
        };
        let mut ids = target.encode(&serialize_tags(&tags)?);
        ids.push(EOS_ID);
        out.push(Example {
            id: doc.id.clone(),
            source: source.encode(&doc.source_words),
            target: ids,
        });
    }
    Ok(out)
}

/// Examples of one batch, targets right-padded with PAD to a common length.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub sources: Vec<Vec<usize>>,
    pub targets: Vec<Vec<usize>>,
}

impl Batch {
    pub fn new(examples: &[&Example]) -> Self {
        let width = examples.iter().map(|e| e.target.len()).max().unwrap_or(0);
        Batch {
            sources: examples.iter().map(|e| e.source.clone()).collect(),
            targets: examples
                .iter()
                .map(|e| {
                    let mut t = e.target.clone();
                    t.resize(width, PAD_ID);
                    t
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }
}

/// Example indices grouped into batches of similar source length; batch
/// order is shuffled per epoch.
pub fn bucket_batches(examples: &[Example], batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..examples.len()).collect();
    idx.sort_by_key(|&i| (examples[i].source.len(), i));
    let mut batches: Vec<Vec<usize>> = idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
    let mut r = rng::stream(rng::sub_seed(seed, "batches"), &epoch.to_string());
    batches.shuffle(&mut r);
    batches
}

/// Summed loss, scored-token count and (optionally) summed gradients of a
/// batch. Trailing padding is trimmed before the forward pass; under the
/// causal mask this changes nothing at the scored positions.
struct BatchTotals {
    loss: f64,
    tokens: usize,
    grads: Option<Vec<Tensor>>,
}

fn trimmed(target: &[usize]) -> &[usize] {
    let end = target.iter().rposition(|&t| t != PAD_ID).map_or(0, |p| p + 1);
    &target[..end]
}

/// Examples per gradient accumulator. Fixed so that the summation order,
/// and so the result, does not depend on the thread count.
const CHUNK: usize = 4;

/// With `dropout_seed`, example `i` draws its dropout mask from the stream
/// `dropout/{i}` under that seed.
fn batch_totals(
    model: &Model,
    batch: &Batch,
    with_grads: bool,
    dropout_seed: Option<u64>,
    sequential: bool,
) -> Result<BatchTotals> {
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let items: Vec<(usize, &Vec<usize>, &Vec<usize>)> = batch
        .sources
        .iter()
        .zip(&batch.targets)
        .enumerate()
        .map(|(i, (s, t))| (i, s, t))
        .collect();
    let chunks: Vec<&[(usize, &Vec<usize>, &Vec<usize>)]> = items.chunks(CHUNK).collect();
    let partial = par::map_ordered(&chunks, sequential, |chunk| -> Result<BatchTotals> {
        let mut t = BatchTotals {
            loss: 0.0,
            tokens: 0,
            grads: with_grads.then(|| model.params().zeros_like()),
        };
        for &(i, src, tgt) in chunk.iter() {
            let mut g = Graph::new(model.params());
            let mut dropout = dropout_seed.map(|s| rng::stream(s, &format!("dropout/{i}")));
            let (loss, n) = model.example_loss(&mut g, src, trimmed(tgt), dropout.as_mut())?;
            t.loss += g.value(loss).data()[0];
            t.tokens += n;
            if let Some(acc) = t.grads.as_mut() {
                g.backward(loss)?.accumulate_into(acc, 1.0);
            }
        }
        Ok(t)
    });
    let mut total: Option<BatchTotals> = None;
    for part in partial {
        let part = part?;
        match total.as_mut() {
            None => total = Some(part),
            Some(t) => {
                t.loss += part.loss;
                t.tokens += part.tokens;
                if let (Some(acc), Some(g)) = (t.grads.as_mut(), part.grads) {
                    for (a, g) in acc.iter_mut().zip(g) {
                        a.data_mut().iter_mut().zip(g.data()).for_each(|(a, g)| *a += g);
                    }
                }
            }
        }
    }
    Ok(total.expect("non-empty batch"))
}

/// Mean cross-entropy over the non-PAD target positions of a batch.
pub fn teacher_forced_loss(model: &Model, batch: &Batch) -> Result<f64> {
    let t = batch_totals(model, batch, false, None, true)?;
    if t.tokens == 0 {
        return Err(Error::Contract("batch has no scored positions".into()));
    }
    Ok(t.loss / t.tokens as f64)
}

/// Mean loss and its gradient for every parameter. `dropout_seed` turns
/// on the model's encoder dropout.
pub fn loss_and_gradients(
    model: &Model,
    batch: &Batch,
    dropout_seed: Option<u64>,
    sequential: bool,
) -> Result<(f64, Vec<Tensor>)> {
    let t = batch_totals(model, batch, true, dropout_seed, sequential)?;
    if t.tokens == 0 {
        return Err(Error::Contract("batch has no scored positions".into()));
    }
    let scale = 1.0 / t.tokens as f64;
    let mut grads = t.grads.expect("requested");
    for g in &mut grads {
        g.data_mut().iter_mut().for_each(|x| *x *= scale);
    }
    Ok((t.loss * scale, grads))
}

/// Token-weighted mean loss over a whole split, in batches.
pub fn corpus_loss(model: &Model, examples: &[Example], batch_size: usize, sequential: bool) -> Result<f64> {
    let (mut loss, mut tokens) = (0.0, 0);
    for chunk in examples.chunks(batch_size.max(1)) {
        let refs: Vec<&Example> = chunk.iter().collect();
        let t = batch_totals(model, &Batch::new(&refs), false, None, sequential)?;
        loss += t.loss;
        tokens += t.tokens;
    }
    if tokens == 0 {
        return Err(Error::Contract("no scored positions".into()));
    }
    Ok(loss / tokens as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub order: TagOrder,
    pub seed: u64,
    /// Single-threaded everywhere.
    pub deterministic: bool,
    /// Stop once an epoch's training loss falls below this.
    pub target_loss: Option<f64>,
    pub vocab_cap: usize,
    pub optim: OptimConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            order: TagOrder::Asc,
            seed: 1,
            deterministic: false,
            target_loss: None,
            vocab_cap: DEFAULT_SOURCE_CAP,
            optim: OptimConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn desk() -> Self {
        TrainConfig {
            batch_size: 16,
            optim: OptimConfig::desk(),
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be at least 1".into()));
        }
        if self.vocab_cap < 5 {
            return Err(Error::Config("vocab_cap must leave room for the 5 special symbols".into()));
        }
        if !(self.optim.peak_lr >= 0.0) {
            return Err(Error::Config("learning rate must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Token-weighted mean over the epoch's batches, as trained.
    pub train_loss: f64,
    pub dev_loss: Option<f64>,
}

pub struct TrainOutcome {
    /// Weights from the epoch with the lowest dev loss (the last epoch
    /// when there is no dev split).
    pub best: Checkpoint,
    pub best_epoch: usize,
    /// Weights after the last epoch run.
    pub last: Checkpoint,
    pub log: Vec<EpochLog>,
}

/// Builds vocabularies and tag frequencies from `train_docs`, then trains
/// a fresh model. Deterministic for a given seed.
pub fn train(train_docs: &[Document], dev_docs: &[Document], model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_progress(train_docs, dev_docs, model_cfg, cfg, |_| {})
}

/// [`train`], calling `progress` after every epoch.
pub fn train_with_progress(
    train_docs: &[Document],
    dev_docs: &[Document],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    mut progress: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let freq = FrequencyTable::from_corpus(train_docs);
    let source_vocab = Vocab::build(train_docs, Side::Source, cfg.vocab_cap);
    let target_vocab = Vocab::build(train_docs, Side::Target, cfg.vocab_cap);
    let model_cfg = ModelConfig {
        source_vocab: source_vocab.len(),
        target_vocab: target_vocab.len(),
        ..model_cfg.clone()
    };
    let mut model = Model::init(model_cfg, cfg.seed)?;
    let examples = prepare_examples(train_docs, &source_vocab, &target_vocab, &freq, cfg.order, cfg.seed)?;
    if examples.is_empty() {
        return Err(Error::Contract("no tagged training documents".into()));
    }
    let dev = prepare_examples(dev_docs, &source_vocab, &target_vocab, &freq, cfg.order, rng::sub_seed(cfg.seed, "dev"))?;

    let snapshot = |model: &Model| Checkpoint {
        model: model.clone(),
        source_vocab: source_vocab.clone(),
        target_vocab: target_vocab.clone(),
        freq: freq.clone(),
        order: cfg.order,
        seed: cfg.seed,
    };

    let mut adam = Adam::new(model.params());
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Model)> = None;
    for epoch in 1..=cfg.epochs {
        let (mut loss_sum, mut tokens) = (0.0, 0usize);
        for batch_idx in bucket_batches(&examples, cfg.batch_size, cfg.seed, epoch) {
            let refs: Vec<&Example> = batch_idx.iter().map(|&i| &examples[i]).collect();
            let batch = Batch::new(&refs);
            let dropout_seed = rng::sub_seed(cfg.seed, &format!("step/{}", adam.steps()));
            let (loss, mut grads) = loss_and_gradients(&model, &batch, Some(dropout_seed), cfg.deterministic)?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged {
                    step: adam.steps() + 1,
                    loss,
                });
            }
            clip_global_norm(&mut grads, cfg.optim.clip_norm);
            adam.update(model.params_mut(), &grads, &cfg.optim);
            let n: usize = refs.iter().map(|e| e.target.len()).sum();
            loss_sum += loss * n as f64;
            tokens += n;
        }
        let train_loss = loss_sum / tokens as f64;
        let dev_loss = if dev.is_empty() {
            None
        } else {
            Some(corpus_loss(&model, &dev, cfg.batch_size, cfg.deterministic)?)
        };
        let entry = EpochLog {
            epoch,
            train_loss,
            dev_loss,
        };
        progress(&entry);
        log.push(entry);
        let score = dev_loss.unwrap_or(f64::NEG_INFINITY);
        if best.as_ref().map_or(true, |(b, _, _)| score < *b || dev_loss.is_none()) {
            best = Some((score, epoch, model.clone()));
        }
        if cfg.target_loss.is_some_and(|t| train_loss < t) {
            break;
        }
    }
    let (_, best_epoch, best_model) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best: snapshot(&best_model),
        best_epoch,
        last: snapshot(&model),
        log,
    })
}

/// `epoch,train_loss,dev_loss`, one row per epoch; dev is blank when absent.
pub fn write_loss_csv<W: Write>(mut w: W, log: &[EpochLog]) -> std::io::Result<()> {
    writeln!(w, "epoch,train_loss,dev_loss")?;
    for e in log {
        match e.dev_loss {
            Some(d) => writeln!(w, "{},{},{}", e.epoch, e.train_loss, d)?,
            None => writeln!(w, "{},{},", e.epoch, e.train_loss)?,
        }
    }
    Ok(())
}
