//! Deterministic compositional corpora.
//!
//! Tags come from a two-level grammar: an entity phrase followed by a
//! category word (`e3 e17 k2`), plus the bare category (`k2`) as a more
//! frequent, more general tag. Every tag word also appears verbatim in the
//! document text. A fraction of the compositions is held out of training
//! and only occurs in the open test split, while each of their words is
//! still covered by some training composition.

use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

use super::{tag_inventory, Document, Tag};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub seed: u64,
    pub categories: usize,
    /// Pool of words entity phrases are drawn from.
    pub entity_words: usize,
    pub entities: usize,
    /// Longest entity phrase, in words.
    pub max_entity_len: usize,
    pub noise_words: usize,
    pub compositions: usize,
    pub heldout_fraction: f64,
    pub train_docs: usize,
    pub dev_docs: usize,
    pub test_docs: usize,
    pub max_compositions_per_doc: usize,
    pub min_noise: usize,
    pub max_noise: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 7,
            categories: 8,
            entity_words: 30,
            entities: 25,
            max_entity_len: 2,
            noise_words: 200,
            compositions: 100,
            heldout_fraction: 0.2,
            train_docs: 2000,
            dev_docs: 200,
            test_docs: 200,
            max_compositions_per_doc: 2,
            min_noise: 3,
            max_noise: 6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub seed: u64,
    /// Test tags absent from the training inventory, sorted.
    pub unseen_tags: Vec<String>,
    /// Compositions withheld from training, sorted.
    pub heldout_compositions: Vec<String>,
    pub spec: SynthSpec,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub train: Vec<Document>,
    pub dev: Vec<Document>,
    /// Open test split: every document carries a held-out composition.
    pub test: Vec<Document>,
    pub manifest: SynthManifest,
}

#[derive(Clone, Debug)]
struct Composition {
    entity: Vec<String>,
    category: String,
}

impl Composition {
    fn words(&self) -> impl Iterator<Item = &String> {
        self.entity.iter().chain(std::iter::once(&self.category))
    }

    fn tag(&self) -> Tag {
        Tag::new(self.words().cloned()).expect("non-empty composition")
    }
}

fn validate(spec: &SynthSpec) -> Result<()> {
    let fail = |m: String| Err(Error::Synth(m));
    if !(0.0..1.0).contains(&spec.heldout_fraction) {
        return fail(format!("held-out fraction {} must be in [0, 1)", spec.heldout_fraction));
    }
    if spec.categories == 0 || spec.entities == 0 || spec.entity_words == 0 || spec.max_entity_len == 0 {
        return fail("grammar needs categories, entities and entity words".into());
    }
    if spec.compositions == 0 || spec.compositions > spec.entities * spec.categories {
        return fail(format!(
            "{} compositions do not fit {} entities × {} categories",
            spec.compositions, spec.entities, spec.categories
        ));
    }
    if spec.max_compositions_per_doc == 0 || spec.min_noise > spec.max_noise {
        return fail("document shape is empty or inverted".into());
    }
    if spec.noise_words == 0 && spec.max_noise > 0 {
        return fail("noise requested without noise words".into());
    }
    Ok(())
}

fn entity_phrases(spec: &SynthSpec, r: &mut rng::Rng) -> Result<Vec<Vec<String>>> {
    let pool: Vec<String> = (0..spec.entity_words).map(|i| format!("e{i}")).collect();
    let mut seen = BTreeSet::new();
    let mut phrases = Vec::with_capacity(spec.entities);
    // every pool word starts at least one phrase while there are enough phrases
    let mut order: Vec<usize> = (0..spec.entity_words).collect();
    order.shuffle(r);
    let mut attempts = 0;
    while phrases.len() < spec.entities {
        attempts += 1;
        if attempts > 100 * spec.entities + 1000 {
            return Err(Error::Synth("cannot draw enough distinct entity phrases".into()));
        }
        let len = r.gen_range(1..=spec.max_entity_len.min(spec.entity_words));
        let head = if phrases.len() < order.len() {
            order[phrases.len()]
        } else {
            r.gen_range(0..spec.entity_words)
        };
        let mut phrase = vec![pool[head].clone()];
        while phrase.len() < len {
            let w = &pool[r.gen_range(0..spec.entity_words)];
            if !phrase.contains(w) {
                phrase.push(w.clone());
            }
        }
        if seen.insert(phrase.clone()) {
            phrases.push(phrase);
        }
    }
    Ok(phrases)
}

/// Generates train, dev and open-test splits from `spec`.
pub fn synth_corpus(spec: &SynthSpec) -> Result<SynthCorpus> {
    validate(spec)?;
    let mut r = rng::stream(spec.seed, "synth");

    let categories: Vec<String> = (0..spec.categories).map(|i| format!("k{i}")).collect();
    let noise: Vec<String> = (0..spec.noise_words).map(|i| format!("w{i}")).collect();
    let phrases = entity_phrases(spec, &mut r)?;

    let mut grid: Vec<(usize, usize)> = (0..spec.entities)
        .flat_map(|e| (0..spec.categories).map(move |c| (e, c)))
        .collect();
    grid.shuffle(&mut r);
    let comps: Vec<Composition> = grid[..spec.compositions]
        .iter()
        .map(|&(e, c)| Composition {
            entity: phrases[e].clone(),
            category: categories[c].clone(),
        })
        .collect();

    // Hold out compositions whose words stay covered by the remainder.
    let n_held = (spec.heldout_fraction * spec.compositions as f64).round() as usize;
    let mut coverage: HashMap<&str, usize> = HashMap::new();
    for c in &comps {
        for w in c.words() {
            *coverage.entry(w).or_default() += 1;
        }
    }
    let mut candidates: Vec<usize> = (0..comps.len()).collect();
    candidates.shuffle(&mut r);
    let mut held = Vec::with_capacity(n_held);
    for i in candidates {
        if held.len() == n_held {
            break;
        }
        if comps[i].words().all(|w| coverage[w.as_str()] > 1) {
            for w in comps[i].words() {
                *coverage.get_mut(w.as_str()).unwrap() -= 1;
            }
            held.push(i);
        }
    }
    if held.len() < n_held {
        return Err(Error::Synth(format!(
            "only {} of {n_held} compositions can be held out with full word coverage",
            held.len()
        )));
    }
    held.sort_unstable();
    let train_comps: Vec<usize> = (0..comps.len()).filter(|i| !held.contains(i)).collect();

    let make_doc = |id: String, chosen: &[usize], r: &mut rng::Rng| -> Document {
        let n_noise = r.gen_range(spec.min_noise..=spec.max_noise);
        let mut chunks: Vec<Vec<String>> = (0..n_noise)
            .map(|_| vec![noise[r.gen_range(0..noise.len())].clone()])
            .collect();
        let mut tags = Vec::new();
        let mut cats = Vec::new();
        for &ci in chosen {
            let c = &comps[ci];
            let at = r.gen_range(0..=chunks.len());
            chunks.insert(at, c.words().cloned().collect());
            tags.push(c.tag());
            if !cats.contains(&c.category) {
                cats.push(c.category.clone());
            }
        }
        tags.extend(cats.into_iter().map(|c| Tag::new([c]).expect("word")));
        tags.shuffle(r);
        Document {
            id,
            source_words: chunks.into_iter().flatten().collect(),
            tags,
        }
    };

    let pick = |pool: &[usize], k: usize, r: &mut rng::Rng, must: Option<usize>| -> Vec<usize> {
        let mut chosen: Vec<usize> = must.into_iter().collect();
        while chosen.len() < k {
            let c = pool[r.gen_range(0..pool.len())];
            if !chosen.contains(&c) {
                chosen.push(c);
            }
        }
        chosen
    };

    let max_k = spec.max_compositions_per_doc.min(train_comps.len()).max(1);
    let split = |name: &str, n: usize, open: bool, r: &mut rng::Rng| -> Vec<Document> {
        (0..n)
            .map(|i| {
                let must = if open && !held.is_empty() {
                    Some(held[i % held.len()])
                } else {
                    None
                };
                let k = r.gen_range(1..=max_k);
                let chosen = pick(&train_comps, k.max(must.is_some() as usize), r, must);
                make_doc(format!("{name}-{i}"), &chosen, r)
            })
            .collect()
    };

    let train = split("train", spec.train_docs, false, &mut r);
    let dev = split("dev", spec.dev_docs, false, &mut r);
    let test = split("test", spec.test_docs, true, &mut r);

    let inventory = tag_inventory(&train);
    let unseen_tags: Vec<String> = tag_inventory(&test)
        .into_iter()
        .filter(|t| !inventory.contains(t))
        .collect();
    let mut heldout_compositions: Vec<String> =
        held.iter().map(|&i| comps[i].tag().to_string()).collect();
    heldout_compositions.sort();

    Ok(SynthCorpus {
        train,
        dev,
        test,
        manifest: SynthManifest {
            seed: spec.seed,
            unseen_tags,
            heldout_compositions,
            spec: spec.clone(),
        },
    })
}
