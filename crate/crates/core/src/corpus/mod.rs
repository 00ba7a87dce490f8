//! Corpus ingestion, vocabularies, tag statistics and the synthetic
//! compositional corpus generator.

mod freq;
pub mod synth;
pub mod tags;
pub mod vocab;

pub use freq::{reorder_tags, FrequencyTable, TagOrder};
pub use synth::{synth_corpus, SynthCorpus, SynthManifest, SynthSpec};
pub use tags::{local_positions, parse_tag_stream, parse_tag_stream_raw, serialize_tags, ParsedTags, Tag};
pub use vocab::{Side, Vocab};

use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One question: pre-segmented source words plus its tags.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub source_words: Vec<String>,
    pub tags: Vec<Tag>,
}

impl Document {
    /// Documents without tags are kept but cannot be trained on.
    pub fn is_tagless(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn tag_strings(&self) -> Vec<String> {
        self.tags.iter().map(Tag::to_string).collect()
    }

    fn to_line(&self) -> DocumentLine {
        DocumentLine {
            id: Some(serde_json::Value::String(self.id.clone())),
            text: Text::Plain(self.source_words.join(" ")),
            tags: self.tag_strings(),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Text {
    Plain(String),
    Words(Vec<String>),
}

#[derive(Serialize, Deserialize)]
struct DocumentLine {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<serde_json::Value>,
    text: Text,
    tags: Vec<String>,
}

fn url_pattern() -> &'static Regex {
    static URL: OnceLock<Regex> = OnceLock::new();
    URL.get_or_init(|| Regex::new(r"(?i)\b(?:https?://|ftp://|www\.)\S+").expect("valid regex"))
}

/// Removes `http(s)://`, `ftp://` and `www.` prefixed runs.
pub fn strip_urls(text: &str) -> String {
    url_pattern().replace_all(text, " ").into_owned()
}

fn parse_line(line: &str, lineno: usize) -> Result<Document> {
    let err = |reason: String| Error::Corpus {
        line: lineno,
        reason,
    };
    let raw: DocumentLine = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
    let source_words: Vec<String> = match raw.text {
        Text::Plain(s) => strip_urls(&s).split_whitespace().map(String::from).collect(),
        Text::Words(ws) => ws
            .into_iter()
            .filter(|w| !url_pattern().is_match(w))
            .filter(|w| !w.trim().is_empty())
            .collect(),
    };
    if source_words.is_empty() {
        return Err(err("empty text".into()));
    }
    if let Some(w) = source_words.iter().find(|w| w.contains(tags::DELIM)) {
        return Err(err(format!("text word `{w}` contains the reserved delimiter")));
    }
    let mut tags = Vec::with_capacity(raw.tags.len());
    for t in &raw.tags {
        if t.contains(tags::DELIM) {
            return Err(err(format!("tag `{t}` contains the reserved delimiter")));
        }
        tags.push(Tag::parse(t).map_err(|e| err(format!("tag `{t}`: {e}")))?);
    }
    let id = match raw.id {
        Some(serde_json::Value::String(s)) => s,
        Some(v) => v.to_string(),
        None => (lineno - 1).to_string(),
    };
    Ok(Document {
        id,
        source_words,
        tags,
    })
}

/// Reads JSON-lines documents. Blank lines are skipped; ids default to
/// the zero-based line index.
pub fn ingest_corpus<R: BufRead>(reader: R) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Corpus {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        docs.push(parse_line(&line, i + 1)?);
    }
    Ok(docs)
}

pub fn read_corpus(path: &Path) -> Result<Vec<Document>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_corpus(std::io::BufReader::new(file))
}

pub fn write_corpus<W: Write>(mut w: W, docs: &[Document]) -> Result<()> {
    for doc in docs {
        serde_json::to_writer(&mut w, &doc.to_line())?;
        writeln!(w).map_err(|e| Error::io("<corpus>", e))?;
    }
    Ok(())
}

pub fn save_corpus(path: &Path, docs: &[Document]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_corpus(&mut w, docs)?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Every full tag string in a corpus.
pub fn tag_inventory(corpus: &[Document]) -> BTreeSet<String> {
    corpus
        .iter()
        .flat_map(|d| d.tags.iter().map(Tag::to_string))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ingests_string_text() {
        let docs = ingest_corpus(r#"{"text":"how about star wars","tags":["movie","star wars"]}"#.as_bytes()).unwrap();
        assert_eq!(docs.len(), 1);
        assert_eq!(docs[0].tags.len(), 2);
        assert_eq!(docs[0].source_words, ["how", "about", "star", "wars"]);
        assert_eq!(docs[0].id, "0");
    }

    #[test]
    fn empty_tag_list_is_flagged_not_rejected() {
        let docs = ingest_corpus(r#"{"text":["a","b"],"tags":[]}"#.as_bytes()).unwrap();
        assert!(docs[0].is_tagless());
    }

    #[test]
    fn malformed_line_is_reported_by_number() {
        let input = "{\"text\":\"a\",\"tags\":[\"x\"]}\n{not json\n{\"text\":\"b\",\"tags\":[]}\n";
        match ingest_corpus(input.as_bytes()) {
            Err(Error::Corpus { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected corpus error, got {other:?}"),
        }
    }

    #[test]
    fn urls_are_stripped() {
        let docs = ingest_corpus(
            r#"{"text":"see https://example.com/x?y=1 and www.foo.org now","tags":["a"]}"#.as_bytes(),
        )
        .unwrap();
        assert_eq!(docs[0].source_words, ["see", "and", "now"]);
    }

    #[test]
    fn delimiter_glyph_is_rejected() {
        assert!(ingest_corpus(r#"{"text":"a","tags":["x | y"]}"#.as_bytes()).is_err());
        assert!(ingest_corpus(r#"{"text":"a|b","tags":["x"]}"#.as_bytes()).is_err());
    }

    #[test]
    fn write_then_read_preserves_documents() {
        let docs = ingest_corpus(
            "{\"id\":\"q1\",\"text\":\"a b\",\"tags\":[\"x y\",\"z\"]}\n{\"id\":7,\"text\":\"c\",\"tags\":[]}\n".as_bytes(),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_corpus(&mut buf, &docs).unwrap();
        assert_eq!(ingest_corpus(buf.as_slice()).unwrap(), docs);
        assert_eq!(docs[1].id, "7");
    }
}
