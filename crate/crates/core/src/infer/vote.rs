//! N-best voting.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{ParsedTags, Tag};
use crate::error::{Error, Result};

/// How a hypothesis contributes to a tag's count.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VoteMode {
    /// Once per hypothesis that contains the tag.
    #[default]
    Set,
    /// Once per occurrence, repeats within a hypothesis included.
    Occurrence,
}

impl fmt::Display for VoteMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VoteMode::Set => "set",
            VoteMode::Occurrence => "occurrence",
        })
    }
}

impl FromStr for VoteMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "set" => Ok(VoteMode::Set),
            "occurrence" => Ok(VoteMode::Occurrence),
            other => Err(Error::Config(format!("unknown vote mode `{other}`"))),
        }
    }
}

/// Per-tag counts across the hypotheses, in first-appearance order.
pub fn vote_counts(hypotheses: &[ParsedTags], mode: VoteMode) -> Vec<(Tag, usize)> {
    let mut index: HashMap<Tag, usize> = HashMap::new();
    let mut counts: Vec<(Tag, usize)> = Vec::new();
    for h in hypotheses {
        let tags = match mode {
            VoteMode::Set => h.unique(),
            VoteMode::Occurrence => h.raw.clone(),
        };
        for tag in tags {
            match index.get(&tag) {
                Some(&i) => counts[i].1 += 1,
                None => {
                    index.insert(tag.clone(), counts.len());
                    counts.push((tag, 1));
                }
            }
        }
    }
    counts
}

/// Tags counted strictly more than `threshold` times, most votes first;
/// ties keep first-appearance order.
pub fn n_best_voting(hypotheses: &[ParsedTags], threshold: f64, mode: VoteMode) -> Vec<Tag> {
    let mut kept: Vec<(Tag, usize)> = vote_counts(hypotheses, mode)
        .into_iter()
        .filter(|(_, c)| *c as f64 > threshold)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1));
    kept.into_iter().map(|(t, _)| t).collect()
}
