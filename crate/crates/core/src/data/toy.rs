//! Synthetic word corpus with long-range structure.
//!
//! Each sentence opens with a subject noun, then a run of topic words, then
//! the verb that agrees with the subject, then a short object phrase. The verb
//! sits 3 to 10 words after its subject, so a model that only sees the last
//! two words cannot predict it while one with a longer memory can.

use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Shape of the generated language.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct ToyGrammar {
    pub subjects: usize,
    pub topics: usize,
    pub words_per_topic: usize,
    pub min_gap: usize,
    pub max_gap: usize,
}

impl Default for ToyGrammar {
    fn default() -> Self {
        Self { subjects: 12, topics: 8, words_per_topic: 12, min_gap: 2, max_gap: 9 }
    }
}

/// `sentences` lines of text drawn from `grammar`, deterministic in `seed`.
pub fn toy_corpus(grammar: &ToyGrammar, sentences: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let subject = Uniform::new(0, grammar.subjects.max(1));
    let topic = Uniform::new(0, grammar.topics.max(1));
    let word = Uniform::new(0, grammar.words_per_topic.max(1));
    let gap = Uniform::new_inclusive(grammar.min_gap, grammar.max_gap.max(grammar.min_gap));
    let dets = ["the", "a", "this", "every"];
    let mut out = String::new();
    for _ in 0..sentences {
        let s = subject.sample(&mut rng);
        let tp = topic.sample(&mut rng);
        let mut toks = vec![dets[rng.gen_range(0..dets.len())].to_string(), format!("noun{s}")];
        for _ in 0..gap.sample(&mut rng) {
            toks.push(format!("t{tp}w{}", word.sample(&mut rng)));
        }
        toks.push(format!("verb{s}"));
        toks.push(dets[rng.gen_range(0..dets.len())].to_string());
        toks.push(format!("t{tp}w{}", word.sample(&mut rng)));
        out.push_str(&toks.join(" "));
        out.push('\n');
    }
    out
}
