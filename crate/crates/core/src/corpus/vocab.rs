use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::tags::{self, SPECIALS};
use super::Document;

/// Default source-side vocabulary size, specials included.
pub const DEFAULT_SOURCE_CAP: usize = 80_000;

pub const PAD_ID: usize = 0;
pub const EOS_ID: usize = 1;
pub const DELIM_ID: usize = 2;
pub const UNK_ID: usize = 3;
pub const BOS_ID: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Source,
    Target,
}

/// Bidirectional word ↔ id map. Ids 0..5 are the reserved symbols.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocab {
    side: Side,
    words: Vec<String>,
    ids: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    side: Side,
    words: Vec<String>,
}

impl From<VocabRepr> for Vocab {
    fn from(r: VocabRepr) -> Self {
        Vocab::from_words(r.side, r.words)
    }
}

impl From<Vocab> for VocabRepr {
    fn from(v: Vocab) -> Self {
        VocabRepr {
            side: v.side,
            words: v.words,
        }
    }
}

impl Vocab {
    /// Builds from the non-special words, in the given order.
    pub fn from_words(side: Side, words: Vec<String>) -> Self {
        let mut all: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        all.extend(words.into_iter().filter(|w| !tags::is_special(w)));
        let ids = all.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Vocab {
            side,
            words: all,
            ids,
        }
    }

    /// Source side keeps the `cap` most frequent words (specials count
    /// towards the cap, ties go to the lexicographically smaller word).
    /// Target side keeps every tag word regardless of `cap`.
    pub fn build(corpus: &[Document], side: Side, cap: usize) -> Self {
        match side {
            Side::Source => {
                let mut counts: HashMap<&str, usize> = HashMap::new();
                for doc in corpus {
                    for w in &doc.source_words {
                        if !tags::is_special(w) {
                            *counts.entry(w).or_default() += 1;
                        }
                    }
                }
                let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
                ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
                let keep = cap.saturating_sub(SPECIALS.len());
                let words = ranked
                    .into_iter()
                    .take(keep)
                    .map(|(w, _)| w.to_string())
                    .collect();
                Vocab::from_words(side, words)
            }
            Side::Target => {
                let mut words: Vec<String> = corpus
                    .iter()
                    .flat_map(|d| d.tags.iter())
                    .flat_map(|t| t.words().iter().cloned())
                    .collect();
                words.sort();
                words.dedup();
                Vocab::from_words(side, words)
            }
        }
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Id of `word`, or the UNK id.
    pub fn id(&self, word: &str) -> usize {
        self.ids.get(word).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.ids.contains_key(word)
    }

    pub fn word(&self, id: usize) -> &str {
        self.words.get(id).map_or(tags::UNK, String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn encode<S: AsRef<str>>(&self, words: &[S]) -> Vec<usize> {
        words.iter().map(|w| self.id(w.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.word(i).to_string()).collect()
    }
}
