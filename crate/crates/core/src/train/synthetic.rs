//! Seeded synthetic text with learnable sequential structure.
//!
//! Words follow a sparse second-order Markov chain: every pair of
//! preceding words has a handful of likely successors with Zipf-like
//! weights, so both bigram statistics and longer context help prediction.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub words: usize,
    /// Candidate successors per context.
    pub branching: usize,
    pub mean_sentence_len: usize,
    pub train_tokens: usize,
    pub valid_tokens: usize,
    pub test_tokens: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            words: 200,
            branching: 4,
            mean_sentence_len: 12,
            train_tokens: 60_000,
            valid_tokens: 6_000,
            test_tokens: 6_000,
            seed: 1234,
        }
    }
}

struct Grammar {
    words: usize,
    successors: Vec<Vec<usize>>,
    weights: WeightedIndex<f64>,
    end_prob: f64,
}

impl Grammar {
    fn new(spec: &SyntheticSpec) -> Result<Self> {
        if spec.words < 2 || spec.branching == 0 || spec.branching > spec.words || spec.mean_sentence_len == 0 {
            return Err(Error::InvalidConfig("synthetic corpus needs words >= 2 and 1 <= branching <= words".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let contexts = (spec.words + 1) * (spec.words + 1);
        let successors = (0..contexts)
            .map(|_| rand::seq::index::sample(&mut rng, spec.words, spec.branching).into_vec())
            .collect();
        let weights = WeightedIndex::new((1..=spec.branching).map(|r| 1.0 / r as f64))
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        Ok(Grammar {
            words: spec.words,
            successors,
            weights,
            end_prob: 1.0 / spec.mean_sentence_len as f64,
        })
    }

    /// Context index of a word pair; `words` stands for sentence start.
    fn context(&self, p2: usize, p1: usize) -> usize {
        p2 * (self.words + 1) + p1
    }

    fn sentence<R: Rng>(&self, rng: &mut R, out: &mut String) -> usize {
        let (mut p2, mut p1) = (self.words, self.words);
        let mut n = 0;
        loop {
            let succ = &self.successors[self.context(p2, p1)];
            let w = succ[self.weights.sample(rng)];
            if n > 0 {
                out.push(' ');
            }
            out.push_str(&format!("w{w}"));
            n += 1;
            (p2, p1) = (p1, w);
            if n >= 2 && rng.gen_bool(self.end_prob) {
                break;
            }
        }
        out.push('\n');
        n + 1
    }

    fn text<R: Rng>(&self, rng: &mut R, tokens: usize) -> String {
        let mut out = String::new();
        let mut n = 0;
        while n < tokens {
            n += self.sentence(rng, &mut out);
        }
        out
    }
}

/// Train, valid and test texts, one sentence per line. Token counts
/// (including one end-of-sentence per line) reach at least the requested
/// sizes.
pub fn generate(spec: &SyntheticSpec) -> Result<(String, String, String)> {
    let g = Grammar::new(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(1));
    Ok((
        g.text(&mut rng, spec.train_tokens),
        g.text(&mut rng, spec.valid_tokens),
        g.text(&mut rng, spec.test_tokens),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::corpus::{tokenize, Corpus};

    #[test]
    fn deterministic_and_sized() {
        let spec = SyntheticSpec {
            words: 30,
            train_tokens: 2000,
            valid_tokens: 300,
            test_tokens: 300,
            ..SyntheticSpec::default()
        };
        let a = generate(&spec).unwrap();
        assert_eq!(a, generate(&spec).unwrap());
        assert!(tokenize(&a.0).len() >= 2000);
        assert!(tokenize(&a.1).len() >= 300);
        let c = Corpus::from_texts(&a.0, &a.1, &a.2, None).unwrap();
        assert!(c.vocab.len() <= 32);
        let other = generate(&SyntheticSpec { seed: 9, ..spec }).unwrap();
        assert_ne!(a.0, other.0);
    }

    #[test]
    fn rejects_bad_spec() {
        assert!(generate(&SyntheticSpec {
            branching: 0,
            ..SyntheticSpec::default()
        })
        .is_err());
    }
}
