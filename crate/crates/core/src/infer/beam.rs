//! Beam search over any left-to-right scorer.

use std::cmp::Ordering;

use crate::tensor::kernels;

/// A left-to-right model over a fixed vocabulary.
pub trait SequenceScorer {
    type State: Clone;

    fn start(&self) -> Self::State;

    /// Feeds `token` and returns log-probabilities for the next one.
    fn step(&self, state: &mut Self::State, token: usize) -> Vec<f64>;
}

/// One decoded sequence. `tokens` starts after BOS and excludes the EOS
/// that finished it.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    /// Emitted EOS, as opposed to being cut off at the length limit.
    pub finished: bool,
}

impl Hypothesis {
    /// Ranking score; with `length_norm` the log-probability is divided by
    /// the number of emitted tokens (EOS included).
    pub fn score(&self, length_norm: bool) -> f64 {
        if length_norm {
            let n = self.tokens.len() + usize::from(self.finished);
            self.log_prob / n.max(1) as f64
        } else {
            self.log_prob
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BeamConfig {
    pub beam: usize,
    /// Hypotheses returned, at most.
    pub n_best: usize,
    pub max_len: usize,
    pub length_norm: bool,
}

struct Alive<S> {
    state: S,
    tokens: Vec<usize>,
    log_prob: f64,
    next: Vec<f64>,
}

fn by_score_desc(a: f64, b: f64) -> Ordering {
    b.total_cmp(&a)
}

/// Keeps the best `beam` expansions per step. Expansions ending in `eos`
/// leave the beam for the finished pool, shrinking the live width. Search
/// stops once `beam` hypotheses have finished or after `max_len` tokens,
/// when survivors are returned unfinished. The result is sorted best
/// first and truncated to `n_best`.
pub fn beam_search<S: SequenceScorer>(scorer: &S, bos: usize, eos: usize, cfg: &BeamConfig) -> Vec<Hypothesis> {
    let beam = cfg.beam.max(1);
    let mut state = scorer.start();
    let next = scorer.step(&mut state, bos);
    let mut alive = vec![Alive {
        state,
        tokens: Vec::new(),
        log_prob: 0.0,
        next,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for t in 0..cfg.max_len {
        let width = beam - finished.len();
        let mut candidates: Vec<(f64, usize, usize)> = alive
            .iter()
            .enumerate()
            .flat_map(|(h, a)| a.next.iter().enumerate().map(move |(v, &lp)| (a.log_prob + lp, h, v)))
            .collect();
        // ties go to the earlier hypothesis, then the smaller token id
        candidates.sort_by(|a, b| by_score_desc(a.0, b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        candidates.truncate(width);

        let last = t + 1 == cfg.max_len;
        let mut survivors = Vec::new();
        for (lp, h, v) in candidates {
            let parent = &alive[h];
            if v == eos {
                finished.push(Hypothesis {
                    tokens: parent.tokens.clone(),
                    log_prob: lp,
                    finished: true,
                });
                continue;
            }
            let mut tokens = parent.tokens.clone();
            tokens.push(v);
            if last {
                finished.push(Hypothesis {
                    tokens,
                    log_prob: lp,
                    finished: false,
                });
                continue;
            }
            let mut state = parent.state.clone();
            let next = scorer.step(&mut state, v);
            survivors.push(Alive {
                state,
                tokens,
                log_prob: lp,
                next,
            });
        }
        alive = survivors;
        if alive.is_empty() || finished.len() >= beam {
            break;
        }
    }

    finished.sort_by(|a, b| by_score_desc(a.score(cfg.length_norm), b.score(cfg.length_norm)));
    finished.truncate(cfg.n_best);
    finished
}

/// Repeated argmax until `eos` or `max_len` tokens.
pub fn greedy<S: SequenceScorer>(scorer: &S, bos: usize, eos: usize, max_len: usize) -> Hypothesis {
    let mut state = scorer.start();
    let mut next = scorer.step(&mut state, bos);
    let mut hyp = Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        finished: false,
    };
    for _ in 0..max_len {
        let v = kernels::argmax(&next);
        hyp.log_prob += next[v];
        if v == eos {
            hyp.finished = true;
            break;
        }
        hyp.tokens.push(v);
        if hyp.tokens.len() < max_len {
            next = scorer.step(&mut state, v);
        }
    }
    hyp
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Next-token distribution depends only on the previous token.
    struct Bigram {
        table: Vec<Vec<f64>>,
    }

    impl Bigram {
        fn new(logits: Vec<Vec<f64>>) -> Self {
            let table = logits
                .into_iter()
                .map(|mut row| {
                    kernels::log_softmax_in_place(&mut row);
                    row
                })
                .collect();
            Bigram { table }
        }
    }

    impl SequenceScorer for Bigram {
        type State = ();
        fn start(&self) {}
        fn step(&self, _: &mut (), token: usize) -> Vec<f64> {
            self.table[token].clone()
        }
    }

    fn cfg(beam: usize, max_len: usize) -> BeamConfig {
        BeamConfig {
            beam,
            n_best: beam,
            max_len,
            length_norm: false,
        }
    }

    #[test]
    fn beam_of_one_is_greedy() {
        // 0 = eos, 3 = bos
        let m = Bigram::new(vec![
            vec![0.0, 0.0, 0.0, 0.0],
            vec![0.1, 0.5, 2.0, -9.0],
            vec![1.5, 1.0, 0.2, -9.0],
            vec![0.0, 3.0, 1.0, -9.0],
        ]);
        let g = greedy(&m, 3, 0, 6);
        let b = beam_search(&m, 3, 0, &cfg(1, 6));
        assert_eq!(b.len(), 1);
        assert_eq!(b[0], g);
        assert_eq!(g.tokens, vec![1, 2]);
        assert!(g.finished);
    }

    #[test]
    fn wider_beam_finds_a_better_sequence_than_greedy() {
        // greedy takes 1 (p≈.5) then is stuck with a flat tail; 2 leads to a
        // near-certain eos
        let m = Bigram::new(vec![
            vec![0.0; 4],
            vec![0.0, 0.0, 0.0, -9.0],
            vec![9.0, -9.0, -9.0, -9.0],
            vec![-9.0, 0.1, 0.0, -9.0],
        ]);
        let g = greedy(&m, 3, 0, 4);
        let b = beam_search(&m, 3, 0, &cfg(4, 4));
        assert_eq!(b[0].tokens, vec![2]);
        assert!(b[0].log_prob > g.log_prob);
    }

    #[test]
    fn results_are_sorted_and_bounded() {
        let m = Bigram::new(vec![
            vec![0.3, 0.1, 0.2, -1.0],
            vec![0.5, 0.4, 0.3, -1.0],
            vec![0.2, 0.6, 0.1, -1.0],
            vec![0.1, 0.2, 0.3, -1.0],
        ]);
        let out = beam_search(
            &m,
            3,
            0,
            &BeamConfig {
                beam: 6,
                n_best: 4,
                max_len: 3,
                length_norm: false,
            },
        );
        assert_eq!(out.len(), 4);
        assert!(out.windows(2).all(|w| w[0].log_prob >= w[1].log_prob));
        assert!(out.iter().all(|h| h.tokens.len() <= 3));
    }

    #[test]
    fn survivors_at_the_length_limit_are_unfinished() {
        let m = Bigram::new(vec![
            vec![0.0; 3],
            vec![-20.0, 5.0, -20.0],
            vec![-20.0, 5.0, -20.0],
        ]);
        let out = beam_search(&m, 2, 0, &cfg(2, 3));
        assert_eq!(out[0].tokens, vec![1, 1, 1]);
        assert!(!out[0].finished);
    }

    #[test]
    fn length_normalisation_can_reorder() {
        let short = Hypothesis {
            tokens: vec![],
            log_prob: -2.0,
            finished: true,
        };
        let long = Hypothesis {
            tokens: vec![1, 1, 1],
            log_prob: -3.0,
            finished: true,
        };
        assert!(short.score(false) > long.score(false));
        assert!(short.score(true) < long.score(true));
    }
}
