use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::arpa::{NGramModel, SENTENCE_END, SENTENCE_START};
use super::lexicon::{Lexicon, LexiconTrie};
use super::Hypothesis;
use crate::ctc::{log_add, BLANK};
use crate::error::{Error, Result};
use crate::model::Posteriorgram;

const LN_10: f64 = std::f64::consts::LN_10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BeamConfig {
    pub beam_width: usize,
    /// Hypotheses returned.
    pub nbest: usize,
    /// Multiplies natural-log LM probabilities.
    pub lm_weight: f64,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            beam_width: 16,
            nbest: 1,
            lm_weight: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct Key {
    units: Vec<u32>,
    words: Vec<u32>,
    node: usize,
}

#[derive(Clone, Copy, Debug)]
struct Probs {
    blank: f64,
    non_blank: f64,
    lm: f64,
}

impl Probs {
    fn new(lm: f64) -> Self {
        Self {
            blank: f64::NEG_INFINITY,
            non_blank: f64::NEG_INFINITY,
            lm,
        }
    }

    fn acoustic(&self) -> f64 {
        log_add(self.blank, self.non_blank)
    }

    fn total(&self) -> f64 {
        self.acoustic() + self.lm
    }
}

fn rank(a: &(Key, f64), b: &(Key, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

struct LmScorer<'a> {
    lm: Option<&'a NGramModel>,
    lex: Option<&'a Lexicon>,
    weight: f64,
}

impl LmScorer<'_> {
    fn score(&self, words: &[u32], next: Option<u32>) -> f64 {
        let (Some(lm), Some(lex)) = (self.lm, self.lex) else {
            return 0.0;
        };
        let mut history: Vec<&str> = vec![SENTENCE_START];
        history.extend(words.iter().map(|&w| lex.word(w).expect("lexicon word id")));
        let word = next.map_or(SENTENCE_END, |w| lex.word(w).expect("lexicon word id"));
        self.weight * LN_10 * lm.log10_prob(&history, word)
    }
}

/// CTC prefix beam search. Without a lexicon hypotheses are unit strings
/// scored by their prefix probability. With a lexicon every prefix must
/// follow pronunciations; a word is emitted when its pronunciation
/// completes and, given an LM, scored by `lm_weight · ln P(word | words)`.
/// Ties rank by lexicographic prefix.
pub fn prefix_beam_search(
    y: &Posteriorgram,
    cfg: &BeamConfig,
    lexicon: Option<&Lexicon>,
    lm: Option<&NGramModel>,
) -> Result<Vec<Hypothesis>> {
    if cfg.beam_width == 0 {
        return Err(Error::invalid("beam width must be >= 1"));
    }
    let num_units = y.num_classes() as u32 - 1;
    if let Some(lex) = lexicon {
        if lex.num_units() != num_units {
            return Err(Error::AlphabetMismatch {
                left: num_units as usize,
                right: lex.num_units() as usize,
            });
        }
    }
    let trie = lexicon.map(LexiconTrie::new);
    let scorer = LmScorer {
        lm,
        lex: lexicon,
        weight: cfg.lm_weight,
    };

    let root = Key {
        units: Vec::new(),
        words: Vec::new(),
        node: LexiconTrie::ROOT,
    };
    let mut beam: Vec<(Key, Probs)> = vec![(
        root,
        Probs {
            blank: 0.0,
            non_blank: f64::NEG_INFINITY,
            lm: 0.0,
        },
    )];
    for t in 0..y.num_frames() {
        let mut next: BTreeMap<Key, Probs> = BTreeMap::new();
        for (key, p) in &beam {
            let total = p.acoustic();
            let entry = next.entry(key.clone()).or_insert_with(|| Probs::new(p.lm));
            entry.blank = log_add(entry.blank, total + y.log_prob(t, BLANK as usize));
            let last = key.units.last().copied();
            if let Some(c) = last {
                entry.non_blank = log_add(entry.non_blank, p.non_blank + y.log_prob(t, c as usize));
            }
            for u in 1..=num_units {
                let lp = y.log_prob(t, u as usize);
                if lp == f64::NEG_INFINITY {
                    continue;
                }
                // a repeated unit only starts a new symbol after a blank
                let source = if Some(u) == last { p.blank } else { total };
                if source == f64::NEG_INFINITY {
                    continue;
                }
                let mut units = key.units.clone();
                units.push(u);
                let mut extend = |k: Key, lm: f64| {
                    let e = next.entry(k).or_insert_with(|| Probs::new(lm));
                    e.non_blank = log_add(e.non_blank, source + lp);
                };
                match &trie {
                    None => extend(
                        Key {
                            units,
                            words: Vec::new(),
                            node: LexiconTrie::ROOT,
                        },
                        0.0,
                    ),
                    Some(trie) => {
                        let Some(node) = trie.child(key.node, u) else { continue };
                        for &w in trie.words_at(node) {
                            let mut words = key.words.clone();
                            words.push(w);
                            let lm_score = p.lm + scorer.score(&key.words, Some(w));
                            if lm_score == f64::NEG_INFINITY {
                                continue;
                            }
                            extend(
                                Key {
                                    units: units.clone(),
                                    words,
                                    node: LexiconTrie::ROOT,
                                },
                                lm_score,
                            );
                        }
                        if trie.has_children(node) {
                            extend(
                                Key {
                                    units,
                                    words: key.words.clone(),
                                    node,
                                },
                                p.lm,
                            );
                        }
                    }
                }
            }
        }
        let mut ranked: Vec<(Key, f64)> = next.iter().map(|(k, p)| (k.clone(), p.total())).collect();
        ranked.retain(|(_, s)| *s > f64::NEG_INFINITY);
        ranked.sort_by(rank);
        ranked.truncate(cfg.beam_width);
        beam = ranked
            .into_iter()
            .map(|(k, _)| {
                let p = next[&k];
                (k, p)
            })
            .collect();
    }

    let mut finals: Vec<(Key, f64)> = beam
        .into_iter()
        .filter(|(k, _)| trie.is_none() || k.node == LexiconTrie::ROOT)
        .map(|(k, p)| {
            let end = if trie.is_some() { scorer.score(&k.words, None) } else { 0.0 };
            let s = p.total() + end;
            (k, s)
        })
        .filter(|(_, s)| s.is_finite())
        .collect();
    finals.sort_by(rank);
    finals.truncate(cfg.nbest.max(1));
    Ok(finals
        .into_iter()
        .map(|(k, score)| Hypothesis {
            units: k.units,
            words: k.words,
            score,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctc::{brute_force_distribution, collapse};
    use crate::decode::arpa::tests::toy_trigram;
    use crate::decode::best_path;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_post(t: usize, k1: usize, rng: &mut ChaCha8Rng) -> Posteriorgram {
        Posteriorgram::from_logits(&Array2::from_shape_fn((t, k1), |_| rng.gen_range(-3.0..3.0))).unwrap()
    }

    fn width(w: usize) -> BeamConfig {
        BeamConfig {
            beam_width: w,
            ..Default::default()
        }
    }

    #[test]
    fn one_hot_posteriors_give_collapsed_path() {
        let path = [0usize, 1, 1, 0, 2, 2, 1];
        let mut p = Array2::zeros((path.len(), 3));
        for (t, &l) in path.iter().enumerate() {
            p[[t, l]] = 1.0;
        }
        let y = Posteriorgram::from_probs(p).unwrap();
        for w in [1, 4] {
            let h = &prefix_beam_search(&y, &width(w), None, None).unwrap()[0];
            assert_eq!(h.units, vec![1, 2, 1]);
            assert_eq!(h.score, 0.0);
        }
    }

    #[test]
    fn saturated_beam_equals_exhaustive_prefix_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for trial in 0..40 {
            let t = 1 + trial % 6;
            let k1 = 2 + trial % 3;
            let y = random_post(t, k1, &mut rng);
            let dist = brute_force_distribution(&y).unwrap();
            let mut ranked: Vec<(Vec<u32>, f64)> = dist.into_iter().collect();
            ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            let full = k1.pow(t as u32);
            let cfg = BeamConfig {
                beam_width: full,
                nbest: 3,
                lm_weight: 1.0,
            };
            let hyps = prefix_beam_search(&y, &cfg, None, None).unwrap();
            assert_eq!(hyps[0].units, ranked[0].0);
            for (h, (z, p)) in hyps.iter().zip(&ranked) {
                assert!((h.score.exp() - p).abs() < 1e-12, "{:?} vs {z:?}", h.units);
            }
        }
    }

    #[test]
    fn top_score_is_monotone_in_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..60 {
            let y = random_post(rng.gen_range(3..12), rng.gen_range(2..5), &mut rng);
            let mut prev = f64::NEG_INFINITY;
            for w in [1, 2, 4, 8, 16, 32, 64] {
                let s = prefix_beam_search(&y, &width(w), None, None).unwrap()[0].score;
                assert!(s >= prev - 1e-12, "width {w}: {s} < {prev}");
                prev = s;
            }
        }
    }

    #[test]
    fn beam_top_is_at_least_the_greedy_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..40 {
            let y = random_post(8, 4, &mut rng);
            let (path, score) = best_path(&y);
            let h = &prefix_beam_search(&y, &width(16), None, None).unwrap()[0];
            assert!(h.score >= score - 1e-12);
            if y.probs().rows().into_iter().all(|r| r.iter().any(|&p| p > 0.9)) {
                assert_eq!(h.units, collapse(&path));
            }
        }
    }

    fn toy_lexicon() -> Lexicon {
        Lexicon::new([("a", vec![1, 2]), ("b", vec![3, 1]), ("c", vec![2, 3])], 3).unwrap()
    }

    #[test]
    fn lexicon_constrains_output_to_words() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let lex = toy_lexicon();
        for _ in 0..20 {
            let y = random_post(10, 4, &mut rng);
            for h in prefix_beam_search(&y, &width(32), Some(&lex), None).unwrap() {
                let units: Vec<u32> = h.words.iter().flat_map(|&w| lex.pronunciations_of(w).next().unwrap().to_vec()).collect();
                assert_eq!(units, h.units);
            }
        }
    }

    #[test]
    fn lm_score_is_added_at_word_ends() {
        let lex = toy_lexicon();
        let lm = toy_trigram();
        // one-hot: blank a(1) a(2)... spell "a" then "b": units 1 2 3 1
        let path = [1usize, 2, 3, 1, 0];
        let mut p = Array2::zeros((path.len(), 4));
        for (t, &l) in path.iter().enumerate() {
            p[[t, l]] = 1.0;
        }
        let y = Posteriorgram::from_probs(p).unwrap();
        let cfg = BeamConfig {
            beam_width: 8,
            nbest: 1,
            lm_weight: 0.5,
        };
        let h = &prefix_beam_search(&y, &cfg, Some(&lex), Some(&lm)).unwrap()[0];
        assert_eq!(h.words, vec![1, 2]);
        let want = 0.5 * LN_10 * lm.sentence_log10_prob(&["a", "b"]);
        assert!((h.score - want).abs() < 1e-12);
    }

    #[test]
    fn zero_width_is_rejected() {
        let y = Posteriorgram::from_probs(ndarray::array![[1.0, 0.0]]).unwrap();
        assert!(prefix_beam_search(&y, &width(0), None, None).is_err());
    }
}
