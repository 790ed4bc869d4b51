//! Layer stacks and the architecture-string notation.
//!
//! An architecture string lists layer widths from input to output separated by
//! `-`:
//!
//! ```text
//! [2*200]-600(M)-600-600-10000
//! ```
//!
//! * `[w*e]` is a projection layer: the previous `w` words, each embedded in
//!   `e` dimensions and concatenated. A bare number instead is a dense
//!   feature input of that width.
//! * `N` is a ReLU hidden layer of `N` units and `k*N` repeats it `k` times.
//! * `(M)` puts a memory block on that layer's activations; the next layer
//!   reads both the activations and the block output. `(M:kind,N1,N2)` spells
//!   the block out (`kind` is `scalar`, `vector` or `attention`; attention
//!   adds the attention width, `(M:attention,N1,N2,A)`). A bare `(M)` takes
//!   the defaults supplied to the parser.
//! * `(R)` makes the layer recurrent (sigmoid by default, `(R:relu)` too).
//! * `@linear`/`@sigmoid` after a width overrides the ReLU default.
//! * The final entry is the output vocabulary: a number, `80k`, or `V` for
//!   "whatever the data vocabulary is".

use std::fmt;

use crate::error::{Error, Result};
use crate::math::Activation;
use crate::memory::{MemoryConfig, MemoryKind};

#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    /// Lookup table of `vocab + 1` rows (the extra row embeds the
    /// sequence-start symbol); emits `window * dim` features per frame.
    Projection {
        vocab: usize,
        dim: usize,
        window: usize,
    },
    Dense {
        input: usize,
        output: usize,
        activation: Activation,
    },
    /// `h_out = f(W x + W~ x~ + b)` where `x~` is the memory block over the
    /// layer input `x`.
    FsmnHidden {
        input: usize,
        output: usize,
        activation: Activation,
        memory: MemoryConfig,
    },
    /// `h_t = f(W x_t + W~ h_{t-1} + b)`, `h_0 = 0` at each sequence start.
    RnnBaseline {
        input: usize,
        output: usize,
        activation: Activation,
    },
    /// Affine map to logits followed by softmax.
    Output {
        input: usize,
        vocab: usize,
    },
}

impl LayerSpec {
    pub fn input_dim(&self) -> usize {
        match *self {
            LayerSpec::Projection { .. } => 0,
            LayerSpec::Dense { input, .. }
            | LayerSpec::FsmnHidden { input, .. }
            | LayerSpec::RnnBaseline { input, .. }
            | LayerSpec::Output { input, .. } => input,
        }
    }

    pub fn output_dim(&self) -> usize {
        match *self {
            LayerSpec::Projection { dim, window, .. } => dim * window,
            LayerSpec::Dense { output, .. }
            | LayerSpec::FsmnHidden { output, .. }
            | LayerSpec::RnnBaseline { output, .. } => output,
            LayerSpec::Output { vocab, .. } => vocab,
        }
    }

    pub fn memory(&self) -> Option<&MemoryConfig> {
        match self {
            LayerSpec::FsmnHidden { memory, .. } => Some(memory),
            _ => None,
        }
    }
}

/// How frames enter the model.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum InputKind {
    /// `window` token ids per frame.
    Tokens { window: usize },
    /// Dense feature columns.
    Features { dim: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    layers: Vec<LayerSpec>,
}

impl ModelSpec {
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self> {
        let spec = Self { layers };
        spec.validate()?;
        Ok(spec)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_kind(&self) -> InputKind {
        match self.layers[0] {
            LayerSpec::Projection { window, .. } => InputKind::Tokens { window },
            ref l => InputKind::Features { dim: l.input_dim() },
        }
    }

    pub fn vocab(&self) -> usize {
        self.layers.last().map_or(0, LayerSpec::output_dim)
    }

    fn validate(&self) -> Result<()> {
        let n = self.layers.len();
        if n == 0 {
            return Err(Error::Parse("model has no layers".into()));
        }
        let outputs = self.layers.iter().filter(|l| matches!(l, LayerSpec::Output { .. })).count();
        if outputs != 1 || !matches!(self.layers[n - 1], LayerSpec::Output { .. }) {
            return Err(Error::Parse("a model needs exactly one output layer, placed last".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if matches!(l, LayerSpec::Projection { .. }) && i != 0 {
                return Err(Error::Parse(format!("projection layer must come first, found at position {i}")));
            }
            if let LayerSpec::Projection { vocab, dim, window } = *l {
                if dim == 0 || window == 0 {
                    return Err(Error::Parse("projection needs window and dim >= 1".into()));
                }
                if vocab != self.vocab() {
                    return Err(Error::Parse(format!(
                        "projection vocabulary {vocab} differs from output vocabulary {}",
                        self.vocab()
                    )));
                }
            }
            if let Some(m) = l.memory() {
                if m.dim != l.input_dim() {
                    return Err(Error::Parse(format!(
                        "memory block at layer {i} has dim {} but the layer input is {}",
                        m.dim,
                        l.input_dim()
                    )));
                }
                if m.kind == MemoryKind::Attention && m.attention_dim == 0 {
                    return Err(Error::Parse("attention memory needs a width >= 1".into()));
                }
            }
            if l.output_dim() == 0 || (i > 0 && l.input_dim() == 0) {
                return Err(Error::Parse(format!("layer {i} has a zero width")));
            }
            if i > 0 && self.layers[i - 1].output_dim() != l.input_dim() {
                return Err(Error::Parse(format!(
                    "layer {i} expects {} inputs but layer {} produces {}",
                    l.input_dim(),
                    i - 1,
                    self.layers[i - 1].output_dim()
                )));
            }
        }
        Ok(())
    }

    /// Parses an architecture string. `vocab` resolves a trailing `V`;
    /// `memory` fills in bare `(M)` marks.
    pub fn parse(arch: &str, vocab: Option<usize>, memory: &MemoryDefaults) -> Result<Self> {
        parse_arch(arch, vocab, memory)
    }

    /// Frames of context available before the memory blocks: the projection
    /// window for token models, 0 for feature models.
    pub fn context_window(&self) -> usize {
        match self.input_kind() {
            InputKind::Tokens { window } => window,
            InputKind::Features { .. } => 0,
        }
    }

    /// Reach of the memory blocks across the stack.
    pub fn receptive_field(&self) -> ReceptiveField {
        let mut past = Some(0usize);
        let mut future = 0usize;
        for l in &self.layers {
            match l {
                LayerSpec::RnnBaseline { .. } => past = None,
                LayerSpec::FsmnHidden { memory, .. } => {
                    let (p, f) = memory.reach();
                    past = past.map(|x| x + p);
                    future += f;
                }
                _ => {}
            }
        }
        ReceptiveField { past, future }
    }
}

/// Frames on either side of an output frame that can influence it through the
/// memory blocks. `past` is `None` when a recurrent layer makes it unbounded.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct ReceptiveField {
    pub past: Option<usize>,
    pub future: usize,
}

/// Values substituted for a bare `(M)`.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct MemoryDefaults {
    pub kind: MemoryKind,
    pub lookback: usize,
    pub lookahead: usize,
    pub attention_dim: usize,
}

impl Default for MemoryDefaults {
    fn default() -> Self {
        Self { kind: MemoryKind::Vector, lookback: 20, lookahead: 0, attention_dim: 32 }
    }
}

#[derive(Clone, Debug)]
enum Mark {
    None,
    Memory(MemoryConfig),
    Recurrent(Activation),
}

#[derive(Clone, Debug)]
struct Producer {
    width: usize,
    activation: Activation,
    mark: Mark,
}

fn parse_usize(s: &str, seg: &str) -> Result<usize> {
    s.trim().parse().map_err(|_| Error::Parse(format!("bad number `{s}` in segment `{seg}`")))
}

fn parse_activation(s: &str, seg: &str) -> Result<Activation> {
    match s {
        "relu" => Ok(Activation::Relu),
        "sigmoid" => Ok(Activation::Sigmoid),
        "linear" => Ok(Activation::Linear),
        _ => Err(Error::Parse(format!("unknown activation `{s}` in segment `{seg}`"))),
    }
}

fn parse_mark(body: &str, seg: &str, defaults: &MemoryDefaults) -> Result<Mark> {
    let (head, args) = match body.split_once(':') {
        Some((h, a)) => (h, Some(a)),
        None => (body, None),
    };
    match (head, args) {
        ("M", None) => {
            let mut cfg = MemoryConfig::new(defaults.kind, defaults.lookback, defaults.lookahead, 0);
            cfg.attention_dim = defaults.attention_dim;
            Ok(Mark::Memory(cfg))
        }
        ("M", Some(args)) => {
            let parts: Vec<&str> = args.split(',').map(str::trim).collect();
            let bad = || Error::Parse(format!("memory mark in `{seg}` should be (M:kind,N1,N2[,A])"));
            if parts.len() < 3 {
                return Err(bad());
            }
            let kind = MemoryKind::parse(parts[0])
                .map_err(|_| Error::Parse(format!("unknown memory kind `{}` in `{seg}`", parts[0])))?;
            let mut cfg = MemoryConfig::new(kind, parse_usize(parts[1], seg)?, parse_usize(parts[2], seg)?, 0);
            match (kind, parts.len()) {
                (MemoryKind::Attention, 4) => cfg.attention_dim = parse_usize(parts[3], seg)?,
                (MemoryKind::Attention, 5) => {
                    cfg.attention_dim = parse_usize(parts[3], seg)?;
                    cfg.attention_activation = parse_activation(parts[4], seg)?;
                }
                (MemoryKind::Attention, 3) => cfg.attention_dim = defaults.attention_dim,
                (_, 3) => {}
                _ => return Err(bad()),
            }
            Ok(Mark::Memory(cfg))
        }
        ("R", None) => Ok(Mark::Recurrent(Activation::Sigmoid)),
        ("R", Some(act)) => Ok(Mark::Recurrent(parse_activation(act.trim(), seg)?)),
        _ => Err(Error::Parse(format!("unknown layer mark `({body})` in segment `{seg}`"))),
    }
}

/// Splits `600@linear(M:vector,2,0)` into width, activation and mark.
fn parse_hidden(seg: &str, defaults: &MemoryDefaults) -> Result<Vec<Producer>> {
    let (core, mark) = match seg.find('(') {
        Some(i) => {
            let body = seg[i + 1..]
                .strip_suffix(')')
                .ok_or_else(|| Error::Parse(format!("unclosed `(` in segment `{seg}`")))?;
            (&seg[..i], parse_mark(body, seg, defaults)?)
        }
        None => (seg, Mark::None),
    };
    let (core, activation) = match core.split_once('@') {
        Some((c, a)) => (c, parse_activation(a, seg)?),
        None => (core, Activation::Relu),
    };
    let (repeat, width) = match core.split_once('*') {
        Some((k, w)) => (parse_usize(k, seg)?, parse_usize(w, seg)?),
        None => (1, parse_usize(core, seg)?),
    };
    if repeat == 0 || width == 0 {
        return Err(Error::Parse(format!("zero width or repeat in segment `{seg}`")));
    }
    Ok(vec![Producer { width, activation, mark }; repeat])
}

fn parse_vocab(seg: &str, vocab: Option<usize>) -> Result<usize> {
    if seg == "V" {
        return vocab.ok_or_else(|| Error::Parse("`V` output needs a known vocabulary size".into()));
    }
    let n = match seg.strip_suffix('k') {
        Some(k) => parse_usize(k, seg)? * 1000,
        None => parse_usize(seg, seg)?,
    };
    if let Some(v) = vocab {
        if v != n {
            return Err(Error::Parse(format!("output segment `{seg}` does not match the vocabulary size {v}")));
        }
    }
    Ok(n)
}

fn parse_arch(arch: &str, vocab: Option<usize>, defaults: &MemoryDefaults) -> Result<ModelSpec> {
    let segs = split_segments(arch)?;
    if segs.len() < 2 {
        return Err(Error::Parse(format!("architecture `{arch}` needs an input and an output")));
    }
    let out_vocab = parse_vocab(segs[segs.len() - 1], vocab)?;

    let mut layers = Vec::new();
    let first = segs[0];
    let mut prev = if let Some(rest) = first.strip_prefix('[') {
        let (inner, tail) =
            rest.split_once(']').ok_or_else(|| Error::Parse(format!("unclosed `[` in segment `{first}`")))?;
        let (w, e) = inner
            .split_once('*')
            .ok_or_else(|| Error::Parse(format!("projection `{first}` should be [window*dim]")))?;
        let (window, dim) = (parse_usize(w, first)?, parse_usize(e, first)?);
        layers.push(LayerSpec::Projection { vocab: out_vocab, dim, window });
        let mark = if tail.is_empty() {
            Mark::None
        } else {
            let body = tail
                .strip_prefix('(')
                .and_then(|t| t.strip_suffix(')'))
                .ok_or_else(|| Error::Parse(format!("bad suffix `{tail}` in segment `{first}`")))?;
            parse_mark(body, first, defaults)?
        };
        if matches!(mark, Mark::Recurrent(_)) {
            return Err(Error::Parse(format!("projection `{first}` cannot be recurrent")));
        }
        Producer { width: window * dim, activation: Activation::Linear, mark }
    } else {
        let mut p = parse_hidden(first, defaults)?;
        if p.len() != 1 || matches!(p[0].mark, Mark::Recurrent(_)) {
            return Err(Error::Parse(format!("bad input segment `{first}`")));
        }
        p.remove(0)
    };

    let consume = |prev: &Producer, next: &Producer, seg: &str| -> Result<LayerSpec> {
        Ok(match (&prev.mark, &next.mark) {
            (Mark::Memory(_), Mark::Recurrent(_)) => {
                return Err(Error::Parse(format!("recurrent segment `{seg}` cannot read a memory block")))
            }
            (_, Mark::Recurrent(act)) => {
                LayerSpec::RnnBaseline { input: prev.width, output: next.width, activation: *act }
            }
            (Mark::Memory(cfg), _) => LayerSpec::FsmnHidden {
                input: prev.width,
                output: next.width,
                activation: next.activation,
                memory: MemoryConfig { dim: prev.width, ..*cfg },
            },
            _ => LayerSpec::Dense { input: prev.width, output: next.width, activation: next.activation },
        })
    };

    for seg in &segs[1..segs.len() - 1] {
        for p in parse_hidden(seg, defaults)? {
            layers.push(consume(&prev, &p, seg)?);
            prev = p;
        }
    }
    if matches!(prev.mark, Mark::Memory(_)) {
        return Err(Error::Parse(format!(
            "memory block on the last hidden layer has no hidden layer to feed (segment `{}`)",
            segs[segs.len() - 2]
        )));
    }
    layers.push(LayerSpec::Output { input: prev.width, vocab: out_vocab });
    ModelSpec::new(layers)
}

/// Splits on `-` outside brackets and parentheses.
fn split_segments(arch: &str) -> Result<Vec<&str>> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, ch) in arch.char_indices() {
        match ch {
            '(' | '[' => depth += 1,
            ')' | ']' => depth -= 1,
            '-' if depth == 0 => {
                out.push(arch[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
    }
    out.push(arch[start..].trim());
    if let Some(empty) = out.iter().position(|s| s.is_empty()) {
        return Err(Error::Parse(format!("empty segment at position {empty} in `{arch}`")));
    }
    Ok(out)
}

fn write_mark(f: &mut fmt::Formatter<'_>, m: &MemoryConfig) -> fmt::Result {
    write!(f, "(M:{},{},{}", m.kind, m.lookback, m.lookahead)?;
    if m.kind == MemoryKind::Attention {
        write!(f, ",{}", m.attention_dim)?;
        if m.attention_activation != Activation::Relu {
            write!(f, ",{}", m.attention_activation.name())?;
        }
    }
    f.write_str(")")
}

/// Canonical architecture string; parses back to the same spec.
impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let memory_of = |i: usize| self.layers.get(i + 1).and_then(LayerSpec::memory);
        match &self.layers[0] {
            LayerSpec::Projection { dim, window, .. } => write!(f, "[{window}*{dim}]")?,
            l => write!(f, "{}", l.input_dim())?,
        }
        let first_is_proj = matches!(self.layers[0], LayerSpec::Projection { .. });
        // memory on the model input is carried by the first computing layer
        let input_mem_layer = if first_is_proj { 1 } else { 0 };
        if let Some(m) = self.layers.get(input_mem_layer).and_then(LayerSpec::memory) {
            write_mark(f, m)?;
        }
        for (i, l) in self.layers.iter().enumerate().skip(input_mem_layer) {
            match l {
                LayerSpec::Output { vocab, .. } => write!(f, "-{vocab}")?,
                LayerSpec::Dense { output, activation, .. } | LayerSpec::FsmnHidden { output, activation, .. } => {
                    write!(f, "-{output}")?;
                    if *activation != Activation::Relu {
                        write!(f, "@{}", activation.name())?;
                    }
                    if let Some(m) = memory_of(i) {
                        write_mark(f, m)?;
                    }
                }
                LayerSpec::RnnBaseline { output, activation, .. } => {
                    write!(f, "-{output}")?;
                    match activation {
                        Activation::Sigmoid => f.write_str("(R)")?,
                        a => write!(f, "(R:{})", a.name())?,
                    }
                }
                LayerSpec::Projection { .. } => unreachable!("validated"),
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<ModelSpec> {
        ModelSpec::parse(s, None, &MemoryDefaults::default())
    }

    #[test]
    fn table_architecture_strings_parse() {
        let s = parse("[2*200]-600(M)-600-600-80k").unwrap();
        assert_eq!(s.layers().len(), 5);
        assert!(matches!(s.layers()[0], LayerSpec::Projection { vocab: 80_000, dim: 200, window: 2 }));
        assert!(matches!(s.layers()[1], LayerSpec::Dense { input: 400, output: 600, .. }));
        let LayerSpec::FsmnHidden { memory, .. } = &s.layers()[2] else { panic!("{:?}", s.layers()[2]) };
        assert_eq!(memory.dim, 600);
        assert_eq!(memory.lookback, 20);
        assert!(matches!(s.layers()[4], LayerSpec::Output { input: 600, vocab: 80_000 }));

        let s = parse("[2*200]-3*600-80k").unwrap();
        assert_eq!(s.layers().len(), 5);
        let s = parse("[2*200]-600(M)-600(M)-600-80k").unwrap();
        assert_eq!(s.layers().iter().filter(|l| l.memory().is_some()).count(), 2);
    }

    #[test]
    fn canonical_form_round_trips() {
        for arch in [
            "[2*16]-32(M:scalar,4,0)-32-50",
            "[1*8](M:vector,3,1)-16-20",
            "12-8(M:attention,3,2,5)-8@linear-7",
            "12-8(M:attention,3,2,5,sigmoid)-8-7",
            "[1*16]-32(R)-32-10",
            "6-4(R:relu)-3",
        ] {
            let s = parse(arch).unwrap();
            assert_eq!(s.to_string(), arch);
            assert_eq!(parse(&s.to_string()).unwrap(), s);
        }
    }

    #[test]
    fn symbolic_vocab_is_resolved() {
        let s = ModelSpec::parse("[1*16]-32(M)-32-V", Some(57), &MemoryDefaults::default()).unwrap();
        assert_eq!(s.vocab(), 57);
        assert!(parse("[1*16]-32-V").is_err());
        assert!(ModelSpec::parse("[1*16]-32-40", Some(57), &MemoryDefaults::default()).is_err());
    }

    #[test]
    fn parse_errors_name_the_segment() {
        let e = parse("[2*200]-6x0(M)-80k").unwrap_err().to_string();
        assert!(e.contains("6x0"), "{e}");
        let e = parse("[2*200]-600(Q)-80k").unwrap_err().to_string();
        assert!(e.contains("600(Q)"), "{e}");
        let e = parse("[2*200]-600-600(M)-80k").unwrap_err().to_string();
        assert!(e.contains("600(M)"), "{e}");
        assert!(parse("[2*200]").is_err());
        assert!(parse("[2*200]--80k").is_err());
    }

    #[test]
    fn receptive_field_compounds_over_memory_layers() {
        let one = parse("10-8(M:vector,50,50)-8-5").unwrap();
        assert_eq!(one.receptive_field(), ReceptiveField { past: Some(50), future: 50 });
        let two = parse("10-8(M:vector,20,10)-8(M:scalar,20,10)-8-5").unwrap();
        assert_eq!(two.receptive_field(), ReceptiveField { past: Some(40), future: 20 });
        let none = parse("[2*4]-8-8-5").unwrap();
        assert_eq!(none.receptive_field(), ReceptiveField { past: Some(0), future: 0 });
        assert_eq!(none.context_window(), 2);
        let rnn = parse("[1*4]-8(R)-5").unwrap();
        assert_eq!(rnn.receptive_field(), ReceptiveField { past: None, future: 0 });
    }

    #[test]
    fn layer_invariants_are_enforced() {
        let bad = ModelSpec::new(vec![
            LayerSpec::Dense { input: 3, output: 4, activation: Activation::Relu },
            LayerSpec::Output { input: 5, vocab: 2 },
        ]);
        assert!(bad.is_err());
        let no_output = ModelSpec::new(vec![LayerSpec::Dense { input: 3, output: 4, activation: Activation::Relu }]);
        assert!(no_output.is_err());
        let late_projection = ModelSpec::new(vec![
            LayerSpec::Dense { input: 3, output: 4, activation: Activation::Relu },
            LayerSpec::Projection { vocab: 2, dim: 2, window: 2 },
            LayerSpec::Output { input: 4, vocab: 2 },
        ]);
        assert!(late_projection.is_err());
    }
}
