use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::{Rng as _, SeedableRng};

use super::*;
use crate::corpus::Side;
use crate::model::{ModelConfig, Variant};
use crate::rng;

fn tag(s: &str) -> Tag {
    Tag::parse(s).unwrap()
}

fn hyp(tags: &[&str]) -> ParsedTags {
    ParsedTags {
        raw: tags.iter().map(|t| tag(t)).collect(),
        malformed: 0,
    }
}

/// Next-token distribution is a seeded random function of the whole prefix.
struct PrefixModel {
    seed: u64,
    vocab: usize,
}

impl SequenceScorer for PrefixModel {
    type State = Vec<usize>;

    fn start(&self) -> Vec<usize> {
        Vec::new()
    }

    fn step(&self, state: &mut Vec<usize>, token: usize) -> Vec<f64> {
        state.push(token);
        let key = state.iter().fold(self.seed, |h, &t| h.wrapping_mul(1_000_003).wrapping_add(t as u64 + 1));
        let mut r = rng::Rng::seed_from_u64(key);
        let mut lp: Vec<f64> = (0..self.vocab).map(|_| r.gen_range(-3.0..3.0)).collect();
        kernels::log_softmax_in_place(&mut lp);
        lp
    }
}

/// Best complete sequence by exhaustive enumeration: any prefix ending in
/// EOS within `max_len`, or any EOS-free sequence of exactly `max_len`.
fn brute_force<S: SequenceScorer>(m: &S, vocab: usize, bos: usize, eos: usize, max_len: usize) -> (Vec<usize>, f64) {
    fn walk<S: SequenceScorer>(
        m: &S,
        state: S::State,
        next: Vec<f64>,
        prefix: &mut Vec<usize>,
        lp: f64,
        cfg: (usize, usize, usize),
        best: &mut (Vec<usize>, f64),
    ) {
        let (vocab, eos, max_len) = cfg;
        for v in 0..vocab {
            let score = lp + next[v];
            if v == eos || prefix.len() + 1 == max_len {
                if score > best.1 {
                    let mut seq = prefix.clone();
                    if v != eos {
                        seq.push(v);
                    }
                    *best = (seq, score);
                }
                continue;
            }
            let mut s = state.clone();
            let n = m.step(&mut s, v);
            prefix.push(v);
            walk(m, s, n, prefix, score, cfg, best);
            prefix.pop();
        }
    }
    let mut state = m.start();
    let next = m.step(&mut state, bos);
    let mut best = (Vec::new(), f64::NEG_INFINITY);
    walk(m, state, next, &mut Vec::new(), 0.0, (vocab, eos, max_len), &mut best);
    best
}

#[test]
fn exhaustive_beam_finds_the_most_likely_sequence() {
    for seed in 0..10 {
        let v = 3 + (seed as usize % 3);
        let l = 2 + (seed as usize % 3);
        let m = PrefixModel { seed, vocab: v };
        let cfg = BeamConfig {
            beam: v.pow(l as u32),
            n_best: 1,
            max_len: l,
            length_norm: false,
        };
        let top = &beam_search(&m, v, 0, &cfg)[0];
        let (seq, lp) = brute_force(&m, v, v, 0, l);
        assert_eq!(top.tokens, seq, "seed {seed}");
        assert!((top.log_prob - lp).abs() < 1e-12);
    }
}

#[test]
fn beam_of_one_equals_greedy_on_prefix_models() {
    for seed in 0..10 {
        let m = PrefixModel { seed, vocab: 5 };
        let g = greedy(&m, 5, 0, 6);
        let b = beam_search(
            &m,
            5,
            0,
            &BeamConfig {
                beam: 1,
                n_best: 1,
                max_len: 6,
                length_norm: false,
            },
        );
        assert_eq!(b, vec![g]);
    }
}

#[test]
fn voting_keeps_tags_above_threshold() {
    let hs = [hyp(&["A", "B"]), hyp(&["A"]), hyp(&["A", "C"]), hyp(&["B"])];
    assert_eq!(n_best_voting(&hs, 1.0, VoteMode::Set), vec![tag("A"), tag("B")]);
}

#[test]
fn unanimous_hypotheses_pass_any_threshold_below_n() {
    let hs = vec![hyp(&["A"]); 48];
    assert_eq!(n_best_voting(&hs, 12.0, VoteMode::Set), vec![tag("A")]);
    assert!(n_best_voting(&hs, 48.0, VoteMode::Set).is_empty());
}

#[test]
fn threshold_is_strict() {
    let hs = [hyp(&["A"]), hyp(&["B"])];
    assert!(n_best_voting(&hs, 1.0, VoteMode::Set).is_empty());
}

#[test]
fn occurrence_mode_counts_repeats() {
    let hs = [hyp(&["A", "A"]), hyp(&["B"])];
    assert!(n_best_voting(&hs, 1.0, VoteMode::Set).is_empty());
    assert_eq!(n_best_voting(&hs, 1.0, VoteMode::Occurrence), vec![tag("A")]);
}

#[test]
fn classification_is_a_partition() {
    let inventory: BTreeSet<String> = ["A", "B"].iter().map(|s| s.to_string()).collect();
    let c = classify_tags(&["A", "C"], &inventory, &["A", "C"]);
    assert_eq!((c.seen_correct, c.unseen_correct), (1, 1));
    assert_eq!(c.new_tags, vec!["C".to_string()]);
    let c = classify_tags(&["A", "B", "D"], &inventory, &["B", "E"]);
    assert_eq!(
        (c.seen_correct, c.seen_incorrect, c.unseen_correct, c.unseen_uncorroborated),
        (1, 1, 0, 1)
    );
    assert_eq!(c.total(), 3);
}

#[test]
fn inventory_restriction_drops_unseen_tags() {
    let inventory: BTreeSet<String> = ["a b".to_string()].into();
    let kept = restrict_to_inventory(&[tag("a b"), tag("a c")], &inventory);
    assert_eq!(kept, vec![tag("a b")]);
}

fn tiny_model() -> (Model, Vocab) {
    let target = Vocab::from_words(Side::Target, vec!["a".into(), "b".into(), "c".into()]);
    let cfg = ModelConfig {
        d_model: 8,
        heads: 2,
        d_ff: 16,
        encoder_layers: 1,
        decoder_layers: 1,
        variant: Variant::L2A,
        init_range: 0.5,
        source_vocab: 10,
        target_vocab: target.len(),
        ..ModelConfig::default()
    };
    (Model::init(cfg, 3).unwrap(), target)
}

#[test]
fn generation_is_deterministic() {
    let (model, target) = tiny_model();
    let cfg = GenerateConfig {
        beam: 6,
        n_best: 6,
        max_len: 5,
        threshold: 1.0,
        ..GenerateConfig::default()
    };
    let a = generate(&model, &target, &[5, 6, 7], &cfg).unwrap();
    let b = generate(&model, &target, &[5, 6, 7], &cfg).unwrap();
    assert_eq!(a, b);
    assert!(a.nbest.len() <= 6);
    assert!(a.nbest.windows(2).all(|w| w[0].log_prob >= w[1].log_prob));
    let union: BTreeSet<Tag> = a.nbest.iter().flat_map(|e| e.tags()).collect();
    assert!(a.tags.iter().all(|t| union.contains(t)));
}

#[test]
fn voting_off_returns_top_hypothesis() {
    let (model, target) = tiny_model();
    let cfg = GenerateConfig {
        beam: 4,
        n_best: 4,
        max_len: 5,
        threshold: -1.0,
        ..GenerateConfig::default()
    };
    let g = generate(&model, &target, &[5, 6], &cfg).unwrap();
    assert_eq!(g.tags, g.nbest[0].tags());
}

#[test]
fn invalid_search_settings_are_rejected() {
    let (model, target) = tiny_model();
    let cfg = GenerateConfig {
        beam: 0,
        ..GenerateConfig::default()
    };
    assert!(matches!(generate(&model, &target, &[5], &cfg), Err(Error::Config(_))));
}

#[test]
fn records_serialise_nbest_only_on_request() {
    let doc = Document {
        id: "d1".into(),
        source_words: vec!["x".into(), "y".into()],
        tags: vec![],
    };
    let g = Generation {
        tags: vec![tag("a")],
        nbest: vec![NBestEntry {
            tokens: vec!["a".into(), "|".into()],
            parsed: hyp(&["a"]),
            log_prob: -0.5,
            finished: true,
        }],
        malformed: 0,
    };
    let plain = serde_json::to_string(&GenerationRecord::new(&doc, &g, false)).unwrap();
    assert_eq!(plain, r#"{"id":"d1","text":"x y","tags":["a"],"malformed":0}"#);
    let full = GenerationRecord::new(&doc, &g, true);
    let back: GenerationRecord = serde_json::from_str(&serde_json::to_string(&full).unwrap()).unwrap();
    assert_eq!(back, full);
}

fn brute_vote(hs: &[ParsedTags], threshold: f64, mode: VoteMode) -> BTreeSet<Tag> {
    let mut counts: BTreeMap<Tag, usize> = BTreeMap::new();
    for h in hs {
        let mut seen = BTreeSet::new();
        for t in &h.raw {
            if mode == VoteMode::Occurrence || seen.insert(t.clone()) {
                *counts.entry(t.clone()).or_default() += 1;
            }
        }
    }
    counts.into_iter().filter(|&(_, c)| c as f64 > threshold).map(|(t, _)| t).collect()
}

fn nbest_strategy() -> impl Strategy<Value = (Vec<ParsedTags>, usize)> {
    (1usize..=12).prop_flat_map(|b| {
        let h = prop::collection::vec(prop::collection::vec(0u8..6, 0..5), 1..=b);
        (h, Just(b))
    })
    .prop_map(|(hs, b)| {
        let parsed = hs
            .into_iter()
            .map(|ts| ParsedTags {
                raw: ts.into_iter().map(|t| tag(&format!("t{t}"))).collect(),
                malformed: 0,
            })
            .collect();
        (parsed, b)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn voting_matches_brute_force((hs, b) in nbest_strategy(), which in 0usize..3, occ in any::<bool>()) {
        let tau = [0.0, b as f64 / 4.0, b as f64][which];
        let mode = if occ { VoteMode::Occurrence } else { VoteMode::Set };
        let got = n_best_voting(&hs, tau, mode);
        let set: BTreeSet<Tag> = got.iter().cloned().collect();
        prop_assert_eq!(set.len(), got.len());
        prop_assert_eq!(set, brute_vote(&hs, tau, mode));
        let union: BTreeSet<Tag> = hs.iter().flat_map(|h| h.raw.iter().cloned()).collect();
        prop_assert!(got.iter().all(|t| union.contains(t)));
    }
}
