//! Tag sequences as word streams: serialisation with a trailing delimiter
//! after every tag, total parsing of generated streams, and the per-tag
//! (local) position list used by the decoder's positional encoding.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: &str = "<pad>";
pub const EOS: &str = "</s>";
pub const DELIM: &str = "|";
pub const UNK: &str = "<unk>";
pub const BOS: &str = "<s>";

/// Reserved symbols in id order.
pub const SPECIALS: [&str; 5] = [PAD, EOS, DELIM, UNK, BOS];

pub fn is_special(word: &str) -> bool {
    SPECIALS.contains(&word)
}

/// One tag: a non-empty list of words.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Tag(Vec<String>);

impl Tag {
    pub fn new<S: Into<String>>(words: impl IntoIterator<Item = S>) -> Result<Self> {
        let words: Vec<String> = words.into_iter().map(Into::into).collect();
        if words.is_empty() {
            return Err(Error::Contract("empty tag".into()));
        }
        if let Some(w) = words.iter().find(|w| w.is_empty() || is_special(w)) {
            return Err(Error::Contract(format!("invalid tag word `{w}`")));
        }
        Ok(Tag(words))
    }

    /// Splits a tag string on whitespace.
    pub fn parse(s: &str) -> Result<Self> {
        Tag::new(s.split_whitespace())
    }

    pub fn words(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join(" "))
    }
}

/// `tag₁ | tag₂ | … tagₖ |`, with a delimiter after every tag.
pub fn serialize_tags(tags: &[Tag]) -> Result<Vec<String>> {
    if tags.is_empty() {
        return Err(Error::Contract("cannot serialise an empty tag list".into()));
    }
    let mut out = Vec::with_capacity(tags.iter().map(|t| t.len() + 1).sum());
    for tag in tags {
        if tag.is_empty() {
            return Err(Error::Contract("empty tag in sequence".into()));
        }
        out.extend(tag.words().iter().cloned());
        out.push(DELIM.to_string());
    }
    Ok(out)
}

/// Result of parsing a generated stream.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParsedTags {
    /// Every closed tag in stream order, duplicates kept.
    pub raw: Vec<Tag>,
    /// Empty segments plus a trailing unclosed segment.
    pub malformed: usize,
}

impl ParsedTags {
    /// Closed tags with duplicates removed, first occurrence wins.
    pub fn unique(&self) -> Vec<Tag> {
        let mut seen = HashSet::new();
        self.raw
            .iter()
            .filter(|t| seen.insert(*t))
            .cloned()
            .collect()
    }
}

/// Splits a stream on the delimiter, stopping at the first EOS. Other
/// special symbols inside a segment make it malformed.
pub fn parse_tag_stream_raw<S: AsRef<str>>(tokens: &[S]) -> ParsedTags {
    let mut parsed = ParsedTags::default();
    let mut current: Vec<String> = Vec::new();
    let mut poisoned = false;
    for tok in tokens {
        let tok = tok.as_ref();
        if tok == EOS {
            break;
        }
        if tok == DELIM {
            if current.is_empty() || poisoned {
                parsed.malformed += 1;
            } else {
                parsed.raw.push(Tag(std::mem::take(&mut current)));
            }
            current.clear();
            poisoned = false;
        } else {
            if is_special(tok) {
                poisoned = true;
            }
            current.push(tok.to_string());
        }
    }
    if !current.is_empty() {
        parsed.malformed += 1;
    }
    parsed
}

/// Parses and deduplicates; returns `(tags, malformed_count)`.
pub fn parse_tag_stream<S: AsRef<str>>(tokens: &[S]) -> (Vec<Tag>, usize) {
    let parsed = parse_tag_stream_raw(tokens);
    (parsed.unique(), parsed.malformed)
}

/// Position of each token inside its own tag. The delimiter takes the
/// running count, then the counter resets.
pub fn local_positions<S: AsRef<str>>(tokens: &[S]) -> Vec<usize> {
    let mut counter = LocalCounter::default();
    tokens
        .iter()
        .map(|t| counter.next(t.as_ref() == DELIM))
        .collect()
}

/// Incremental form of [`local_positions`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LocalCounter(usize);

impl LocalCounter {
    /// Position for the next token; `closes` marks a tag boundary.
    pub fn next(&mut self, closes: bool) -> usize {
        let p = self.0;
        self.0 = if closes { 0 } else { p + 1 };
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tags(items: &[&str]) -> Vec<Tag> {
        items.iter().map(|s| Tag::parse(s).unwrap()).collect()
    }

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn serialises_with_trailing_delimiter() {
        let s = serialize_tags(&tags(&["movie", "science fiction movie", "Star Wars"])).unwrap();
        assert_eq!(s.join(" "), "movie | science fiction movie | Star Wars |");
        assert_eq!(s.len(), 9);
        assert_eq!(serialize_tags(&tags(&["a"])).unwrap().join(" "), "a |");
    }

    #[test]
    fn empty_tags_are_rejected() {
        assert!(Tag::new(Vec::<String>::new()).is_err());
        assert!(serialize_tags(&[]).is_err());
        assert!(Tag::parse("a | b").is_err());
    }

    #[test]
    fn parse_examples() {
        assert_eq!(
            parse_tag_stream(&toks("w1 w2 | w3 | </s>")),
            (tags(&["w1 w2", "w3"]), 0)
        );
        assert_eq!(parse_tag_stream(&toks("w1 | | w2 </s>")), (tags(&["w1"]), 2));
        assert_eq!(parse_tag_stream(&toks("a | a |")), (tags(&["a"]), 0));
    }

    #[test]
    fn parse_stops_at_eos() {
        assert_eq!(parse_tag_stream(&toks("a | </s> b |")), (tags(&["a"]), 0));
    }

    #[test]
    fn special_inside_segment_is_malformed() {
        assert_eq!(parse_tag_stream(&toks("a <pad> | b |")), (tags(&["b"]), 1));
    }

    #[test]
    fn local_positions_examples() {
        assert_eq!(
            local_positions(&toks("movie | science fiction movie | Star Wars |")),
            vec![0, 1, 0, 1, 2, 3, 0, 1, 2]
        );
        assert_eq!(local_positions(&toks("a |")), vec![0, 1]);
        assert!(local_positions::<&str>(&[]).is_empty());
    }
}
