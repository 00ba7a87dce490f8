use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

use super::{Document, Tag};

/// Occurrence counts of full tag strings over a training corpus.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyTable {
    counts: BTreeMap<String, usize>,
}

impl FrequencyTable {
    pub fn from_corpus(corpus: &[Document]) -> Self {
        let mut counts = BTreeMap::new();
        for doc in corpus {
            for tag in &doc.tags {
                *counts.entry(tag.to_string()).or_insert(0) += 1;
            }
        }
        FrequencyTable { counts }
    }

    pub fn from_counts<I, S>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, usize)>,
        S: Into<String>,
    {
        FrequencyTable {
            counts: pairs.into_iter().map(|(k, v)| (k.into(), v)).collect(),
        }
    }

    pub fn count(&self, tag: &str) -> Option<usize> {
        self.counts.get(tag).copied()
    }

    pub fn contains(&self, tag: &str) -> bool {
        self.counts.contains_key(tag)
    }

    /// Number of (document, tag) incidences.
    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, usize)> {
        self.counts.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// Training-time ordering of a document's tags.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TagOrder {
    /// Seeded shuffle.
    Random,
    /// Rare tags first ("Order 1").
    Asc,
    /// Frequent tags first ("Order 2").
    Desc,
}

impl TagOrder {
    pub const ALL: [TagOrder; 3] = [TagOrder::Random, TagOrder::Asc, TagOrder::Desc];

    pub fn as_str(self) -> &'static str {
        match self {
            TagOrder::Random => "random",
            TagOrder::Asc => "asc",
            TagOrder::Desc => "desc",
        }
    }
}

impl fmt::Display for TagOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TagOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(TagOrder::Random),
            "asc" => Ok(TagOrder::Asc),
            "desc" => Ok(TagOrder::Desc),
            other => Err(Error::Config(format!("unknown order `{other}`"))),
        }
    }
}

/// Reorders one document's tags by corpus frequency. Sorting is stable, so
/// equal counts keep their original relative order. `seed` is required
/// for [`TagOrder::Random`] and ignored otherwise.
pub fn reorder_tags(
    tags: &[Tag],
    freq: &FrequencyTable,
    order: TagOrder,
    seed: Option<u64>,
) -> Result<Vec<Tag>> {
    let mut keyed = Vec::with_capacity(tags.len());
    for tag in tags {
        let name = tag.to_string();
        let count = freq.count(&name).ok_or(Error::UnknownTag(name))?;
        keyed.push((count, tag.clone()));
    }
    match order {
        TagOrder::Asc => keyed.sort_by_key(|(c, _)| *c),
        TagOrder::Desc => keyed.sort_by(|a, b| b.0.cmp(&a.0)),
        TagOrder::Random => {
            let seed = seed.ok_or_else(|| {
                Error::Contract("random tag order needs a seed".into())
            })?;
            keyed.shuffle(&mut Rng::seed_from_u64(seed));
        }
    }
    Ok(keyed.into_iter().map(|(_, t)| t).collect())
}
