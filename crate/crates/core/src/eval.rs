//! Corpus evaluation: plain and rank-weighted precision/recall/F1, unseen
//! tag counts and the error-rate accounting over emitted N-best lists.
//!
//! The weighted precision discounts the prediction at rank `i` (1-based)
//! by `1 / log2(i + 1)`. It is rank-sensitive but is not the formula of
//! any particular contest script. Weighted recall equals plain recall.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::infer::{classify_tags, GenerationRecord, TagClasses};
use crate::par;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn new(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Prf { precision, recall, f1 }
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Weight of the prediction at 1-based `rank`.
pub fn rank_weight(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).log2()
}

/// Drops repeated tags, keeping the first (best-ranked) occurrence.
pub fn dedup_ranked<S: AsRef<str>>(tags: &[S]) -> Vec<&str> {
    let mut seen = HashSet::new();
    tags.iter().map(AsRef::as_ref).filter(|t| seen.insert(*t)).collect()
}

/// Raw counts behind one document's scores.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub hits: usize,
    pub predicted: usize,
    pub gold: usize,
    pub hit_weight: f64,
    pub total_weight: f64,
}

impl MatchCounts {
    /// `predicted` must already be deduplicated and in rank order.
    pub fn count<S: AsRef<str>>(predicted: &[S], gold: &[S]) -> Self {
        let gold: HashSet<&str> = gold.iter().map(AsRef::as_ref).collect();
        let mut c = MatchCounts {
            gold: gold.len(),
            predicted: predicted.len(),
            ..MatchCounts::default()
        };
        for (i, p) in predicted.iter().enumerate() {
            let w = rank_weight(i + 1);
            c.total_weight += w;
            if gold.contains(p.as_ref()) {
                c.hits += 1;
                c.hit_weight += w;
            }
        }
        c
    }

    pub fn plain(&self) -> Prf {
        Prf::new(
            ratio(self.hits as f64, self.predicted as f64),
            ratio(self.hits as f64, self.gold as f64),
        )
    }

    pub fn weighted(&self) -> Prf {
        Prf::new(
            ratio(self.hit_weight, self.total_weight),
            ratio(self.hits as f64, self.gold as f64),
        )
    }

    fn add(&mut self, o: &MatchCounts) {
        self.hits += o.hits;
        self.predicted += o.predicted;
        self.gold += o.gold;
        self.hit_weight += o.hit_weight;
        self.total_weight += o.total_weight;
    }
}

/// Plain and weighted scores of one ranked prediction list.
pub fn prf<S: AsRef<str>>(predicted: &[S], gold: &[S]) -> (Prf, Prf) {
    let c = MatchCounts::count(predicted, gold);
    (c.plain(), c.weighted())
}

/// `#meaningless / #outputs`, with the rate in percent.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorAccount {
    pub meaningless: usize,
    pub outputs: usize,
    pub rate_percent: f64,
}

impl ErrorAccount {
    fn finish(meaningless: usize, outputs: usize) -> Self {
        ErrorAccount {
            meaningless,
            outputs,
            rate_percent: 100.0 * ratio(meaningless as f64, outputs as f64),
        }
    }
}

/// One emitted tag list: closed tags (duplicates kept) and the number of
/// malformed segments next to them.
#[derive(Clone, Copy, Debug)]
pub struct Emission<'a> {
    pub tags: &'a [String],
    pub malformed: usize,
}

/// Every emitted segment is an output; malformed segments and tags that
/// are neither in the inventory nor in the reference are meaningless.
pub fn error_accounting<'a, I>(emissions: I, inventory: &BTreeSet<String>) -> ErrorAccount
where
    I: IntoIterator<Item = (Emission<'a>, &'a [String])>,
{
    let (mut bad, mut outputs) = (0, 0);
    for (e, reference) in emissions {
        let classes = classify_tags(e.tags, inventory, reference);
        bad += e.malformed + classes.unseen_uncorroborated;
        outputs += e.malformed + e.tags.len();
    }
    ErrorAccount::finish(bad, outputs)
}

/// Reads generation output, one JSON record per line.
pub fn read_predictions(path: &Path) -> Result<Vec<GenerationRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Corpus {
            line: i + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Per-document evaluation row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DocumentScore {
    pub id: String,
    pub counts: MatchCounts,
    pub plain: Prf,
    pub weighted: Prf,
    pub unseen_correct: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    /// Pooled counts over documents.
    #[default]
    Micro,
    /// Mean of per-document precision and recall.
    Macro,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub averaging: Averaging,
    pub documents: usize,
    /// Gold documents without tags; not scored.
    pub excluded_empty_gold: usize,
    pub plain: Prf,
    pub weighted: Prf,
    pub classes: TagClasses,
    /// N-best error accounting, when the predictions carry N-best lists.
    pub nbest_errors: Option<ErrorAccount>,
    /// The same accounting over the final tag sets.
    pub final_errors: ErrorAccount,
    pub per_document: Vec<DocumentScore>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct EvalOptions {
    pub averaging: Averaging,
    pub sequential: bool,
}

/// Scores `predictions` against `gold`. Every gold id needs a prediction;
/// predictions for ids outside `gold` are ignored. Results do not depend
/// on the order of either list beyond the order of `per_document`, which
/// follows `gold`.
pub fn evaluate_corpus(
    predictions: &[GenerationRecord],
    gold: &[Document],
    inventory: &BTreeSet<String>,
    opts: EvalOptions,
) -> Result<EvalReport> {
    let by_id: HashMap<&str, &GenerationRecord> = predictions.iter().map(|p| (p.id.as_str(), p)).collect();
    let missing: Vec<String> = gold
        .iter()
        .filter(|d| !by_id.contains_key(d.id.as_str()))
        .map(|d| d.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingIds(missing));
    }
    let scored: Vec<(&Document, &GenerationRecord, Vec<String>)> = gold
        .iter()
        .filter(|d| !d.is_tagless())
        .map(|d| (d, by_id[d.id.as_str()], d.tag_strings()))
        .collect();

    let rows = par::map_ordered(&scored, opts.sequential, |(doc, pred, reference)| {
        let ranked = dedup_ranked(&pred.tags);
        let refs: Vec<&str> = reference.iter().map(String::as_str).collect();
        let counts = MatchCounts::count(&ranked, &refs);
        let classes = classify_tags(&ranked, inventory, &refs);
        let nbest = pred.nbest.as_ref().map(|list| {
            error_accounting(
                list.iter().map(|n| {
                    (
                        Emission {
                            tags: &n.tags,
                            malformed: n.malformed,
                        },
                        reference.as_slice(),
                    )
                }),
                inventory,
            )
        });
        let row = DocumentScore {
            id: doc.id.clone(),
            counts,
            plain: counts.plain(),
            weighted: counts.weighted(),
            unseen_correct: classes.unseen_correct,
        };
        (row, classes, nbest)
    });

    let mut pooled = MatchCounts::default();
    let mut classes = TagClasses::default();
    let (mut nb_bad, mut nb_out, mut has_nbest) = (0, 0, !rows.is_empty());
    for (row, c, nb) in &rows {
        pooled.add(&row.counts);
        classes.absorb(c);
        match nb {
            Some(a) => {
                nb_bad += a.meaningless;
                nb_out += a.outputs;
            }
            None => has_nbest = false,
        }
    }
    let final_tags: Vec<Vec<String>> = scored
        .iter()
        .map(|(_, p, _)| dedup_ranked(&p.tags).into_iter().map(String::from).collect())
        .collect();
    let final_errors = error_accounting(
        final_tags.iter().zip(&scored).map(|(t, (_, _, r))| {
            (
                Emission {
                    tags: t.as_slice(),
                    malformed: 0,
                },
                r.as_slice(),
            )
        }),
        inventory,
    );

    let (plain, weighted) = match opts.averaging {
        Averaging::Micro => (pooled.plain(), pooled.weighted()),
        Averaging::Macro => {
            let n = rows.len() as f64;
            let mean = |f: &dyn Fn(&DocumentScore) -> f64| ratio(rows.iter().map(|(r, _, _)| f(r)).sum(), n);
            (
                Prf::new(mean(&|r| r.plain.precision), mean(&|r| r.plain.recall)),
                Prf::new(mean(&|r| r.weighted.precision), mean(&|r| r.weighted.recall)),
            )
        }
    };
    Ok(EvalReport {
        averaging: opts.averaging,
        documents: rows.len(),
        excluded_empty_gold: gold.len() - scored.len(),
        plain,
        weighted,
        classes,
        nbest_errors: has_nbest.then(|| ErrorAccount::finish(nb_bad, nb_out)),
        final_errors,
        per_document: rows.into_iter().map(|(r, _, _)| r).collect(),
    })
}

impl EvalReport {
    /// Aligned plain-text summary.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<12} {:>9} {:>9} {:>9}", "", "P", "R", "F1");
        for (name, m) in [("plain", self.plain), ("weighted", self.weighted)] {
            let _ = writeln!(s, "{:<12} {:>9.4} {:>9.4} {:>9.4}", name, m.precision, m.recall, m.f1);
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<24} {:>9}", "documents", self.documents);
        let _ = writeln!(s, "{:<24} {:>9}", "excluded (empty gold)", self.excluded_empty_gold);
        let _ = writeln!(s, "{:<24} {:>9}", "seen correct", self.classes.seen_correct);
        let _ = writeln!(s, "{:<24} {:>9}", "seen incorrect", self.classes.seen_incorrect);
        let _ = writeln!(s, "{:<24} {:>9}", "unseen correct (#new)", self.classes.unseen_correct);
        let _ = writeln!(s, "{:<24} {:>9}", "unseen uncorroborated", self.classes.unseen_uncorroborated);
        let mut errors = vec![("final", self.final_errors)];
        if let Some(nb) = self.nbest_errors {
            errors.insert(0, ("n-best", nb));
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<12} {:>12} {:>12} {:>9}", "errors", "#meaningless", "#outputs", "rate %");
        for (name, e) in errors {
            let _ = writeln!(s, "{:<12} {:>12} {:>12} {:>9.2}", name, e.meaningless, e.outputs, e.rate_percent);
        }
        s
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "id,predicted,gold,hits,precision,recall,f1,weighted_precision,weighted_f1,unseen_correct")?;
        for r in &self.per_document {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                csv_field(&r.id),
                r.counts.predicted,
                r.counts.gold,
                r.counts.hits,
                r.plain.precision,
                r.plain.recall,
                r.plain.f1,
                r.weighted.precision,
                r.weighted.f1,
                r.unseen_correct
            )?;
        }
        Ok(())
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Tag;
    use crate::infer::NBestRecord;
    use proptest::prelude::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn ranked_example() {
        let (plain, weighted) = prf(&["A", "D", "B"], &["A", "B", "C"]);
        assert!(close(plain.precision, 2.0 / 3.0));
        assert!(close(plain.recall, 2.0 / 3.0));
        assert!(close(plain.f1, 2.0 / 3.0));
        assert!(close(rank_weight(2), 0.6309297535714575));
        assert!(close(weighted.precision, 0.7039180890341347), "{}", weighted.precision);
        assert!(close(weighted.recall, 2.0 / 3.0));
    }

    #[test]
    fn identical_sets_score_one() {
        let (p, w) = prf(&["x", "y"], &["y", "x"]);
        assert_eq!(p, Prf::new(1.0, 1.0));
        assert!(close(w.precision, 1.0));
        assert_eq!(p.f1, 1.0);
    }

    #[test]
    fn empty_predictions_score_zero() {
        let (p, w) = prf::<&str>(&[], &["a"]);
        assert_eq!(p, Prf::default());
        assert_eq!(w, Prf::default());
    }

    #[test]
    fn moving_a_hit_down_lowers_weighted_precision() {
        let (_, first) = prf(&["a", "x", "y"], &["a"]);
        let (_, third) = prf(&["x", "y", "a"], &["a"]);
        assert!(third.precision < first.precision);
    }

    fn gold(id: &str, tags: &[&str]) -> Document {
        Document {
            id: id.into(),
            source_words: vec!["w".into()],
            tags: tags.iter().map(|t| Tag::parse(t).unwrap()).collect(),
        }
    }

    fn pred(id: &str, tags: &[&str]) -> GenerationRecord {
        GenerationRecord {
            id: id.into(),
            text: String::new(),
            tags: tags.iter().map(|t| t.to_string()).collect(),
            nbest: None,
            malformed: 0,
        }
    }

    fn inv(tags: &[&str]) -> BTreeSet<String> {
        tags.iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn perfect_corpus_scores_one() {
        let g = [gold("1", &["a", "b"]), gold("2", &["c"])];
        let p = [pred("2", &["c"]), pred("1", &["b", "a"])];
        let r = evaluate_corpus(&p, &g, &inv(&["a", "b", "c"]), EvalOptions::default()).unwrap();
        assert_eq!(r.plain, Prf::new(1.0, 1.0));
        assert!(close(r.weighted.f1, 1.0));
        assert_eq!(r.classes.seen_correct, 3);
    }

    #[test]
    fn all_empty_predictions_score_zero() {
        let g = [gold("1", &["a"]), gold("2", &["c"])];
        let p = [pred("1", &[]), pred("2", &[])];
        let r = evaluate_corpus(&p, &g, &inv(&[]), EvalOptions::default()).unwrap();
        assert_eq!(r.plain, Prf::default());
    }

    #[test]
    fn missing_ids_are_listed() {
        let g = [gold("1", &["a"]), gold("2", &["c"]), gold("3", &["c"])];
        let err = evaluate_corpus(&[pred("2", &[])], &g, &inv(&[]), EvalOptions::default()).unwrap_err();
        match err {
            Error::MissingIds(ids) => assert_eq!(ids, vec!["1".to_string(), "3".to_string()]),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn empty_gold_is_excluded_and_counted() {
        let g = [gold("1", &["a"]), gold("2", &[])];
        let p = [pred("1", &["a"]), pred("2", &["zzz"])];
        let r = evaluate_corpus(&p, &g, &inv(&["a"]), EvalOptions::default()).unwrap();
        assert_eq!(r.documents, 1);
        assert_eq!(r.excluded_empty_gold, 1);
        assert_eq!(r.plain.precision, 1.0);
    }

    #[test]
    fn macro_averages_documents() {
        let g = [gold("1", &["a"]), gold("2", &["b", "c", "d"])];
        let p = [pred("1", &["a"]), pred("2", &["b", "x", "y"])];
        let micro = evaluate_corpus(&p, &g, &inv(&[]), EvalOptions::default()).unwrap();
        let mac = evaluate_corpus(
            &p,
            &g,
            &inv(&[]),
            EvalOptions {
                averaging: Averaging::Macro,
                sequential: true,
            },
        )
        .unwrap();
        assert!(close(micro.plain.precision, 2.0 / 4.0));
        assert!(close(mac.plain.precision, (1.0 + 1.0 / 3.0) / 2.0));
    }

    #[test]
    fn unseen_correct_tags_are_counted() {
        let g = [gold("1", &["new tag", "a"])];
        let p = [pred("1", &["new tag", "other", "a"])];
        let r = evaluate_corpus(&p, &g, &inv(&["a"]), EvalOptions::default()).unwrap();
        assert_eq!(r.classes.unseen_correct, 1);
        assert_eq!(r.classes.new_tags, vec!["new tag".to_string()]);
        assert_eq!(r.per_document[0].unseen_correct, 1);
        assert_eq!(r.final_errors.meaningless, 1);
        assert_eq!(r.final_errors.outputs, 3);
    }

    #[test]
    fn three_malformed_in_a_hundred() {
        let tags: Vec<String> = (0..97).map(|_| "a".to_string()).collect();
        let reference = vec!["a".to_string()];
        let acc = error_accounting(
            [(
                Emission {
                    tags: &tags,
                    malformed: 3,
                },
                reference.as_slice(),
            )],
            &inv(&["a"]),
        );
        assert_eq!((acc.meaningless, acc.outputs), (3, 100));
        assert!(close(acc.rate_percent, 3.0));
    }

    #[test]
    fn nbest_accounting_in_the_report() {
        let g = [gold("1", &["a"])];
        let mut p = pred("1", &["a"]);
        p.nbest = Some(vec![
            NBestRecord {
                tags: vec!["a".into(), "a".into(), "junk".into()],
                logprob: -1.0,
                malformed: 1,
            },
            NBestRecord {
                tags: vec!["a".into()],
                logprob: -2.0,
                malformed: 0,
            },
        ]);
        let r = evaluate_corpus(&[p], &g, &inv(&["a"]), EvalOptions::default()).unwrap();
        let nb = r.nbest_errors.unwrap();
        assert_eq!((nb.meaningless, nb.outputs), (2, 5));
        assert_eq!(r.final_errors.meaningless, 0);
        assert!(r.to_table().contains("n-best"));
    }

    #[test]
    fn csv_has_one_row_per_document() {
        let g = [gold("1,x", &["a"]), gold("2", &["c"])];
        let p = [pred("1,x", &["a"]), pred("2", &[])];
        let r = evaluate_corpus(&p, &g, &inv(&[]), EvalOptions::default()).unwrap();
        let mut out = Vec::new();
        r.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert_eq!(text.lines().nth(1).unwrap(), "\"1,x\",1,1,1,1,1,1,1,1,1");
    }

    fn tag_list(max: usize) -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec(0u8..8, 0..max).prop_map(|v| v.into_iter().map(|i| format!("t{i}")).collect())
    }

    proptest! {
        #[test]
        fn scores_are_bounded(pred in tag_list(10), gold in tag_list(6)) {
            let ranked = dedup_ranked(&pred);
            let gold: Vec<&str> = gold.iter().map(String::as_str).collect();
            let (p, w) = prf(&ranked, &gold);
            for m in [p, w] {
                for x in [m.precision, m.recall, m.f1] {
                    prop_assert!((0.0..=1.0).contains(&x));
                }
                let hits = MatchCounts::count(&ranked, &gold).hits;
                prop_assert_eq!(m.f1 == 0.0, hits == 0 || gold.is_empty() || ranked.is_empty());
            }
        }

        #[test]
        fn plain_scores_ignore_order(mut pred in tag_list(10), gold in tag_list(6), seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            pred.dedup();
            let ranked: Vec<String> = dedup_ranked(&pred).into_iter().map(String::from).collect();
            let mut shuffled = ranked.clone();
            shuffled.shuffle(&mut crate::rng::Rng::seed_from_u64(seed));
            prop_assert_eq!(prf(&ranked, &gold).0, prf(&shuffled, &gold).0);
        }

        #[test]
        fn micro_average_matches_a_recount(
            docs in prop::collection::vec((tag_list(6), tag_list(5)), 1..12),
            seed in any::<u64>(),
        ) {
            use rand::{seq::SliceRandom, SeedableRng};
            let gold_docs: Vec<Document> = docs.iter().enumerate().map(|(i, (_, g))| Document {
                id: i.to_string(),
                source_words: vec!["w".into()],
                tags: dedup_ranked(g).into_iter().map(|t| Tag::parse(t).unwrap()).collect(),
            }).collect();
            let mut preds: Vec<GenerationRecord> = docs.iter().enumerate().map(|(i, (p, _))| GenerationRecord {
                id: i.to_string(),
                text: String::new(),
                tags: p.clone(),
                nbest: None,
                malformed: 0,
            }).collect();
            let r = evaluate_corpus(&preds, &gold_docs, &BTreeSet::new(), EvalOptions::default()).unwrap();

            let (mut hits, mut np, mut ng) = (0usize, 0usize, 0usize);
            for (p, g) in &docs {
                let g: BTreeSet<&String> = g.iter().collect();
                if g.is_empty() { continue; }
                let p: BTreeSet<&String> = p.iter().collect();
                hits += p.intersection(&g).count();
                np += p.len();
                ng += g.len();
            }
            let expect_p = if np > 0 { hits as f64 / np as f64 } else { 0.0 };
            let expect_r = if ng > 0 { hits as f64 / ng as f64 } else { 0.0 };
            prop_assert!((r.plain.precision - expect_p).abs() < 1e-12);
            prop_assert!((r.plain.recall - expect_r).abs() < 1e-12);

            preds.shuffle(&mut crate::rng::Rng::seed_from_u64(seed));
            let again = evaluate_corpus(&preds, &gold_docs, &BTreeSet::new(), EvalOptions { sequential: true, ..EvalOptions::default() }).unwrap();
            prop_assert_eq!(again, r);
        }
    }
}
