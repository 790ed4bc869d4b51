//! Corpus ingestion for word-level language modelling.
//!
//! Text is UTF-8, one sentence per line, tokens separated by whitespace.
//! Blank lines are skipped. Every sentence is an independent sequence: memory
//! blocks never reach across sentence boundaries.
//!
//! The vocabulary file lists one token per line; the line number (from 0) is
//! the id. Id 0 is always `<unk>`. The sequence-start symbol used to pad the
//! input window at a sentence head is not a vocabulary entry: it gets id
//! `vocab.len()` and its own row in the projection table, so it can never be
//! predicted.

pub mod toy;

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::marker::PhantomData;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::math::Matrix;
use crate::real::Real;

pub const UNK: &str = "<unk>";
pub const EOS: &str = "</s>";

/// Options shared by vocabulary building and corpus encoding.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq)]
pub struct TokenizeOptions {
    /// Append `</s>` to every sentence.
    pub eos: bool,
}

fn sentences<'a>(text: &'a str, opts: TokenizeOptions) -> impl Iterator<Item = Vec<&'a str>> + 'a {
    text.lines().filter_map(move |line| {
        let mut toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            return None;
        }
        if opts.eos {
            toks.push(EOS);
        }
        Some(toks)
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Keeps the `max_size - 1` most frequent tokens (ties in lexicographic
    /// order) after `<unk>`.
    pub fn build(text: &str, max_size: usize, opts: TokenizeOptions) -> Result<Self> {
        if max_size < 1 {
            return Err(Error::input("vocabulary size must be at least 1"));
        }
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for sent in sentences(text, opts) {
            for tok in sent {
                if tok != UNK {
                    *counts.entry(tok).or_default() += 1;
                }
            }
        }
        if counts.is_empty() && !text.split_whitespace().any(|t| t == UNK) {
            return Err(Error::input("cannot build a vocabulary from empty text"));
        }
        let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let tokens = std::iter::once(UNK.to_string())
            .chain(ranked.into_iter().take(max_size - 1).map(|(t, _)| t.to_string()))
            .collect();
        Self::from_tokens(tokens)
    }

    /// Wraps an id-ordered token list; `<unk>` must come first.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.first().map(String::as_str) != Some(UNK) {
            return Err(Error::input(format!("vocabulary must start with {UNK}")));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::input(format!("invalid vocabulary token {t:?} at line {i}")));
            }
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::input(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn unk_id(&self) -> u32 {
        0
    }

    /// Id used to pad the input window before the first word.
    pub fn start_id(&self) -> u32 {
        self.tokens.len() as u32
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

/// Vocabulary over `text` with default tokenization.
pub fn build_vocab(text: &str, max_size: usize) -> Result<Vocab> {
    Vocab::build(text, max_size, TokenizeOptions::default())
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    pub split: Split,
    sequences: Vec<Vec<u32>>,
}

impl Corpus {
    pub fn new(split: Split, sequences: Vec<Vec<u32>>) -> Result<Self> {
        if let Some(i) = sequences.iter().position(Vec::is_empty) {
            return Err(Error::input(format!("sequence {i} of the {split} corpus is empty")));
        }
        Ok(Self { split, sequences })
    }

    pub fn sequences(&self) -> &[Vec<u32>] {
        &self.sequences
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn tokens(&self) -> usize {
        self.sequences.iter().map(Vec::len).sum()
    }

    pub fn max_id(&self) -> Option<u32> {
        self.sequences.iter().flatten().copied().max()
    }

    /// Space-joined tokens of sequence `i`.
    pub fn decode(&self, vocab: &Vocab, i: usize) -> String {
        self.sequences[i].iter().map(|&id| vocab.token(id).unwrap_or(UNK)).collect::<Vec<_>>().join(" ")
    }
}

/// Maps each non-blank line to ids, sending unknown tokens to `<unk>`.
pub fn encode_corpus(text: &str, vocab: &Vocab, opts: TokenizeOptions, split: Split) -> Corpus {
    let sequences = sentences(text, opts).map(|s| s.into_iter().map(|t| vocab.id(t)).collect()).collect();
    Corpus { split, sequences }
}

pub fn read_corpus(path: &Path, vocab: &Vocab, opts: TokenizeOptions, split: Split) -> Result<Corpus> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Input(format!("cannot read {} corpus {}: {e}", split, path.display())))?;
    Ok(encode_corpus(&text, vocab, opts, split))
}

/// Next-word frames for one sequence. Frame `t` holds the `window` ids before
/// position `t`, oldest first, padded with `start_id`; its target is `seq[t]`.
/// The inputs are flattened frame-major (`window` ids per frame).
pub fn make_lm_frames(seq: &[u32], window: usize, start_id: u32) -> Result<(Vec<u32>, Vec<usize>)> {
    if window == 0 {
        return Err(Error::input("context window must be at least 1"));
    }
    if seq.is_empty() {
        return Err(Error::input("cannot build frames for an empty sequence"));
    }
    let mut inputs = Vec::with_capacity(seq.len() * window);
    for t in 0..seq.len() {
        for k in 0..window {
            // slot k holds position t - window + k
            let pos = t as isize - window as isize + k as isize;
            inputs.push(if pos < 0 { start_id } else { seq[pos as usize] });
        }
    }
    Ok((inputs, seq.iter().map(|&w| w as usize).collect()))
}

/// What a model sees at each frame.
#[derive(Clone, Debug, PartialEq)]
pub enum FrameInput<T> {
    /// `window` ids per frame, frame-major.
    Tokens { ids: Vec<u32>, window: usize },
    /// One feature column per frame.
    Features(Matrix<T>),
}

impl<T: Real> FrameInput<T> {
    pub fn frames(&self) -> usize {
        match self {
            FrameInput::Tokens { ids, window } => ids.len() / (*window).max(1),
            FrameInput::Features(m) => m.cols(),
        }
    }
}

/// K sequences laid end to end along the frame axis.
#[derive(Clone, Debug, PartialEq)]
pub struct PackedBatch<T> {
    pub lengths: Vec<usize>,
    pub input: FrameInput<T>,
    pub targets: Vec<usize>,
}

impl<T: Real> PackedBatch<T> {
    pub fn frames(&self) -> usize {
        self.lengths.iter().sum()
    }

    pub fn sequence_count(&self) -> usize {
        self.lengths.len()
    }

    /// Checks lengths, inputs and targets agree.
    pub fn validate(&self) -> Result<()> {
        if self.lengths.is_empty() || self.lengths.contains(&0) {
            return Err(Error::input("batch lengths must be nonempty and positive"));
        }
        let n = self.frames();
        if self.input.frames() != n || self.targets.len() != n {
            return Err(Error::input(format!(
                "batch has {n} frames but {} inputs and {} targets",
                self.input.frames(),
                self.targets.len()
            )));
        }
        if let FrameInput::Tokens { ids, window } = &self.input {
            if *window == 0 || ids.len() != n * window {
                return Err(Error::input("token input does not match the window"));
            }
        }
        Ok(())
    }

    /// Token batch for the given sequences.
    pub fn from_sequences(seqs: &[&[u32]], window: usize, start_id: u32) -> Result<Self> {
        let mut lengths = Vec::with_capacity(seqs.len());
        let mut ids = Vec::new();
        let mut targets = Vec::new();
        for s in seqs {
            let (i, t) = make_lm_frames(s, window, start_id)?;
            lengths.push(s.len());
            ids.extend(i);
            targets.extend(t);
        }
        Ok(Self { lengths, input: FrameInput::Tokens { ids, window }, targets })
    }

    /// Sub-batch holding sequence `k` alone.
    pub fn sequence(&self, k: usize) -> Self {
        let start: usize = self.lengths[..k].iter().sum();
        let len = self.lengths[k];
        let input = match &self.input {
            FrameInput::Tokens { ids, window } => {
                FrameInput::Tokens { ids: ids[start * window..(start + len) * window].to_vec(), window: *window }
            }
            FrameInput::Features(m) => FrameInput::Features(m.col_range(start, len)),
        };
        Self { lengths: vec![len], input, targets: self.targets[start..start + len].to_vec() }
    }
}

/// Sequence order for one epoch: a seeded shuffle of `0..n`.
pub fn shuffled_order(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

/// Iterator over the packed batches of one epoch.
pub struct Batches<'a, T> {
    corpus: &'a Corpus,
    order: Vec<usize>,
    k: usize,
    next: usize,
    window: usize,
    start_id: u32,
    _real: PhantomData<T>,
}

impl<T: Real> Iterator for Batches<'_, T> {
    type Item = PackedBatch<T>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.order.len() {
            return None;
        }
        let end = (self.next + self.k).min(self.order.len());
        let seqs: Vec<&[u32]> =
            self.order[self.next..end].iter().map(|&i| self.corpus.sequences[i].as_slice()).collect();
        self.next = end;
        // corpus sequences are nonempty and window >= 1, checked at construction
        Some(PackedBatch::from_sequences(&seqs, self.window, self.start_id).expect("valid corpus"))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.order.len() - self.next).div_ceil(self.k);
        (left, Some(left))
    }
}

/// Groups the corpus K sequences at a time after a seeded shuffle. `seed =
/// None` keeps corpus order. The last batch may hold fewer than K sequences.
pub fn pack_minibatch<T>(
    corpus: &Corpus,
    k: usize,
    shuffle_seed: Option<u64>,
    window: usize,
    start_id: u32,
) -> Result<Batches<'_, T>> {
    if k == 0 {
        return Err(Error::input("batch size must be at least 1"));
    }
    if window == 0 {
        return Err(Error::input("context window must be at least 1"));
    }
    if corpus.sequences.iter().any(Vec::is_empty) {
        return Err(Error::input("corpus contains an empty sequence"));
    }
    let order = match shuffle_seed {
        Some(seed) => shuffled_order(corpus.len(), seed),
        None => (0..corpus.len()).collect(),
    };
    Ok(Batches { corpus, order, k, next: 0, window, start_id, _real: PhantomData })
}
