//! Tag generation: beam search over the decoder, N-best voting, and
//! seen/unseen accounting of the generated tags.

mod beam;
mod vote;

pub use beam::{beam_search, greedy, BeamConfig, Hypothesis, SequenceScorer};
pub use vote::{n_best_voting, vote_counts, VoteMode};

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::tags::parse_tag_stream_raw;
use crate::corpus::vocab::{BOS_ID, EOS_ID};
use crate::corpus::{Document, ParsedTags, Tag, Vocab};
use crate::error::{Error, Result};
use crate::model::{DecoderMemory, DecoderState, Model};
use crate::par;
use crate::tensor::kernels;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub beam: usize,
    pub n_best: usize,
    pub max_len: usize,
    /// Votes a tag needs to exceed. Negative turns voting off and returns
    /// the best hypothesis's tags.
    pub threshold: f64,
    pub vote_mode: VoteMode,
    pub length_norm: bool,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            beam: 48,
            n_best: 48,
            max_len: 32,
            threshold: 12.0,
            vote_mode: VoteMode::Set,
            length_norm: false,
        }
    }
}

impl GenerateConfig {
    pub fn voting(&self) -> bool {
        self.threshold >= 0.0
    }

    pub fn beam_config(&self) -> BeamConfig {
        BeamConfig {
            beam: self.beam,
            n_best: self.n_best,
            max_len: self.max_len,
            length_norm: self.length_norm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam == 0 || self.n_best == 0 || self.max_len == 0 {
            return Err(Error::Config("beam, n_best and max_len must be at least 1".into()));
        }
        Ok(())
    }
}

/// Log-probabilities from a model's incremental decoder for one source.
pub struct ModelScorer<'m> {
    model: &'m Model,
    memory: DecoderMemory,
}

impl<'m> ModelScorer<'m> {
    pub fn new(model: &'m Model, source_ids: &[usize]) -> Result<Self> {
        Ok(ModelScorer {
            model,
            memory: model.memory(source_ids)?,
        })
    }
}

impl SequenceScorer for ModelScorer<'_> {
    type State = DecoderState;

    fn start(&self) -> DecoderState {
        self.model.start_state()
    }

    fn step(&self, state: &mut DecoderState, token: usize) -> Vec<f64> {
        let mut lp = self.model.step(&self.memory, state, token);
        kernels::log_softmax_in_place(&mut lp);
        lp
    }
}

/// One N-best entry, decoded and parsed.
#[derive(Clone, Debug, PartialEq)]
pub struct NBestEntry {
    pub tokens: Vec<String>,
    pub parsed: ParsedTags,
    pub log_prob: f64,
    pub finished: bool,
}

impl NBestEntry {
    pub fn tags(&self) -> Vec<Tag> {
        self.parsed.unique()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generation {
    pub tags: Vec<Tag>,
    pub nbest: Vec<NBestEntry>,
    /// Malformed segments summed over the N-best list.
    pub malformed: usize,
}

/// Encodes, searches and votes for one source.
pub fn generate(model: &Model, target: &Vocab, source_ids: &[usize], cfg: &GenerateConfig) -> Result<Generation> {
    cfg.validate()?;
    if source_ids.is_empty() {
        return Err(Error::Contract("empty source".into()));
    }
    let scorer = ModelScorer::new(model, source_ids)?;
    let hyps = beam_search(&scorer, BOS_ID, EOS_ID, &cfg.beam_config());
    let nbest: Vec<NBestEntry> = hyps
        .into_iter()
        .map(|h| {
            let tokens = target.decode(&h.tokens);
            NBestEntry {
                parsed: parse_tag_stream_raw(&tokens),
                tokens,
                log_prob: h.log_prob,
                finished: h.finished,
            }
        })
        .collect();
    let tags = if cfg.voting() {
        let parsed: Vec<ParsedTags> = nbest.iter().map(|e| e.parsed.clone()).collect();
        n_best_voting(&parsed, cfg.threshold, cfg.vote_mode)
    } else {
        nbest.first().map(NBestEntry::tags).unwrap_or_default()
    };
    let malformed = nbest.iter().map(|e| e.parsed.malformed).sum();
    Ok(Generation { tags, nbest, malformed })
}

/// Greedy decode of one source, parsed into tags.
pub fn generate_greedy(model: &Model, target: &Vocab, source_ids: &[usize], max_len: usize) -> Result<Vec<Tag>> {
    let scorer = ModelScorer::new(model, source_ids)?;
    let h = greedy(&scorer, BOS_ID, EOS_ID, max_len);
    Ok(parse_tag_stream_raw(&target.decode(&h.tokens)).unique())
}

/// [`generate`] over a corpus, one result per document in order.
pub fn generate_corpus(
    model: &Model,
    source: &Vocab,
    target: &Vocab,
    docs: &[Document],
    cfg: &GenerateConfig,
    sequential: bool,
) -> Result<Vec<Generation>> {
    par::map_ordered(docs, sequential, |d| {
        generate(model, target, &source.encode(&d.source_words), cfg)
    })
    .into_iter()
    .collect()
}

/// Keeps only tags present in the training inventory.
pub fn restrict_to_inventory(tags: &[Tag], inventory: &BTreeSet<String>) -> Vec<Tag> {
    tags.iter()
        .filter(|t| inventory.contains(&t.to_string()))
        .cloned()
        .collect()
}

/// Four-way split of predicted tags by (in training inventory?, in
/// reference?).
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagClasses {
    pub seen_correct: usize,
    pub seen_incorrect: usize,
    pub unseen_correct: usize,
    pub unseen_uncorroborated: usize,
    /// The unseen-correct tags themselves.
    pub new_tags: Vec<String>,
}

impl TagClasses {
    pub fn total(&self) -> usize {
        self.seen_correct + self.seen_incorrect + self.unseen_correct + self.unseen_uncorroborated
    }

    pub fn absorb(&mut self, other: &TagClasses) {
        self.seen_correct += other.seen_correct;
        self.seen_incorrect += other.seen_incorrect;
        self.unseen_correct += other.unseen_correct;
        self.unseen_uncorroborated += other.unseen_uncorroborated;
        self.new_tags.extend(other.new_tags.iter().cloned());
    }
}

pub fn classify_tags<S: AsRef<str>>(predicted: &[S], inventory: &BTreeSet<String>, reference: &[S]) -> TagClasses {
    let refs: HashSet<&str> = reference.iter().map(AsRef::as_ref).collect();
    let mut out = TagClasses::default();
    for p in predicted {
        let p = p.as_ref();
        match (inventory.contains(p), refs.contains(p)) {
            (true, true) => out.seen_correct += 1,
            (true, false) => out.seen_incorrect += 1,
            (false, true) => {
                out.unseen_correct += 1;
                out.new_tags.push(p.to_string());
            }
            (false, false) => out.unseen_uncorroborated += 1,
        }
    }
    out
}

/// Serialised N-best entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NBestRecord {
    pub tags: Vec<String>,
    pub logprob: f64,
    #[serde(default)]
    pub malformed: usize,
}

/// One line of generation output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub id: String,
    pub text: String,
    pub tags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nbest: Option<Vec<NBestRecord>>,
    pub malformed: usize,
}

impl GenerationRecord {
    pub fn new(doc: &Document, generation: &Generation, emit_nbest: bool) -> Self {
        GenerationRecord {
            id: doc.id.clone(),
            text: doc.source_words.join(" "),
            tags: generation.tags.iter().map(Tag::to_string).collect(),
            nbest: emit_nbest.then(|| {
                generation
                    .nbest
                    .iter()
                    .map(|e| NBestRecord {
                        tags: e.parsed.raw.iter().map(Tag::to_string).collect(),
                        logprob: e.log_prob,
                        malformed: e.parsed.malformed,
                    })
                    .collect()
            }),
            malformed: generation.malformed,
        }
    }
}

#[cfg(test)]
mod tests;
