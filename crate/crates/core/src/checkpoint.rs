//! Checkpoint files.
//!
//! A checkpoint is a UTF-8 header followed by binary tensor records:
//!
//! ```text
//! fsmn-checkpoint 1
//! precision f32
//! arch [2*200]-600(M:vector,20,0)-600-600-10000
//! eos true
//! vocab 9999
//! <unk>
//! ...                      (one token per line)
//! state epoch=3 lr=0.1 phase=halving:1 best=131.2 last=131.9
//! tensors 10
//! momentum 10
//! end
//! ```
//!
//! `vocab none` and `state none` are allowed. After the `end` line come the
//! parameter tensors and then the momentum buffers, each as
//! `u32 name length, name bytes, u64 rows, u64 cols, rows*cols values`, all
//! little-endian, values 4 or 8 bytes by precision. A final `u64` FNV-1a hash
//! of the binary section guards against corruption. Floats in the header use
//! the shortest representation that parses back to the same bits.

use std::fs;
use std::path::Path;

use crate::data::Vocab;
use crate::error::{Error, Result};
use crate::network::{MemoryDefaults, Model, ModelSpec};
use crate::real::Real;
use crate::train::{Momentum, Phase, Schedule, TrainState};

pub const MAGIC: &str = "fsmn-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub model: Model<T>,
    pub vocab: Option<Vocab>,
    /// Whether sentences get an end-of-sentence token when encoded.
    pub eos: bool,
    pub state: Option<TrainState<T>>,
}

impl<T: Real> PartialEq for Checkpoint<T> {
    fn eq(&self, other: &Self) -> bool {
        self.model == other.model && self.vocab == other.vocab && self.eos == other.eos && self.state == other.state
    }
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn opt_f64(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), |x| x.to_string())
}

fn parse_opt_f64(s: &str) -> Result<Option<f64>> {
    if s == "none" {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|_| bad(format!("bad number `{s}` in state line")))
}

fn phase_text(p: Phase) -> String {
    match p {
        Phase::Plateau => "plateau".into(),
        Phase::Halving { completed } => format!("halving:{completed}"),
        Phase::Done => "done".into(),
    }
}

fn parse_phase(s: &str) -> Result<Phase> {
    match s {
        "plateau" => Ok(Phase::Plateau),
        "done" => Ok(Phase::Done),
        _ => s
            .strip_prefix("halving:")
            .and_then(|k| k.parse().ok())
            .map(|completed| Phase::Halving { completed })
            .ok_or_else(|| bad(format!("bad phase `{s}`"))),
    }
}

fn write_tensor<T: Real>(out: &mut Vec<u8>, name: &str, shape: (usize, usize), data: &[T]) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(shape.0 as u64).to_le_bytes());
    out.extend_from_slice(&(shape.1 as u64).to_le_bytes());
    for &x in data {
        x.write_le(out);
    }
}

/// Header fields, readable without touching tensor data.
#[derive(Clone, Debug, PartialEq)]
pub struct Header {
    pub version: u32,
    pub precision: String,
    pub arch: String,
    pub eos: bool,
    pub vocab: Option<Vec<String>>,
    pub state: Option<StateLine>,
    pub tensors: usize,
    pub momentum: usize,
    /// Offset of the binary section.
    pub body_offset: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StateLine {
    pub epoch: usize,
    pub schedule: Schedule,
}

struct Lines<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<&'a str> {
        let rest = &self.bytes[self.pos..];
        let n = rest.iter().position(|&b| b == b'\n').ok_or_else(|| bad("truncated header"))?;
        self.pos += n + 1;
        std::str::from_utf8(&rest[..n]).map_err(|_| bad("header is not UTF-8"))
    }

    fn field(&mut self, key: &str) -> Result<&'a str> {
        let line = self.next()?;
        line.strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .ok_or_else(|| bad(format!("expected `{key}` line, found `{line}`")))
    }
}

/// Parses the header. The version is checked first, before anything else.
pub fn read_header(bytes: &[u8]) -> Result<Header> {
    let mut lines = Lines { bytes, pos: 0 };
    let first = lines.next().map_err(|_| bad("not a checkpoint file"))?;
    let version = first
        .strip_prefix(MAGIC)
        .and_then(|v| v.trim().parse::<u32>().ok())
        .ok_or_else(|| bad("not a checkpoint file"))?;
    if version != FORMAT_VERSION {
        return Err(bad(format!("checkpoint format version {version} is not supported (expected {FORMAT_VERSION})")));
    }
    let precision = lines.field("precision")?.to_string();
    let arch = lines.field("arch")?.to_string();
    let eos = match lines.field("eos")? {
        "true" => true,
        "false" => false,
        other => return Err(bad(format!("bad eos flag `{other}`"))),
    };
    let vocab = match lines.field("vocab")? {
        "none" => None,
        n => {
            let n: usize = n.parse().map_err(|_| bad(format!("bad vocab count `{n}`")))?;
            let mut toks = Vec::with_capacity(n);
            for _ in 0..n {
                toks.push(lines.next()?.to_string());
            }
            Some(toks)
        }
    };
    let state = match lines.field("state")? {
        "none" => None,
        s => {
            let mut epoch = None;
            let mut sched = Schedule::new(1.0);
            let mut seen = 0;
            for kv in s.split(' ') {
                let (k, v) = kv.split_once('=').ok_or_else(|| bad(format!("bad state field `{kv}`")))?;
                seen += 1;
                match k {
                    "epoch" => epoch = Some(v.parse().map_err(|_| bad("bad epoch"))?),
                    "lr" => sched.lr = v.parse().map_err(|_| bad("bad lr"))?,
                    "phase" => sched.phase = parse_phase(v)?,
                    "best" => sched.best_valid_ppl = parse_opt_f64(v)?,
                    "last" => sched.last_valid_ppl = parse_opt_f64(v)?,
                    _ => return Err(bad(format!("unknown state field `{k}`"))),
                }
            }
            if seen != 5 {
                return Err(bad("state line needs epoch, lr, phase, best and last"));
            }
            Some(StateLine { epoch: epoch.ok_or_else(|| bad("state line has no epoch"))?, schedule: sched })
        }
    };
    let count = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("bad count `{s}`")));
    let tensors = count(lines.field("tensors")?)?;
    let momentum = count(lines.field("momentum")?)?;
    if lines.next()? != "end" {
        return Err(bad("header has no end marker"));
    }
    Ok(Header { version, precision, arch, eos, vocab, state, tensors, momentum, body_offset: lines.pos })
}

struct Body<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Body<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| bad("checkpoint is truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn tensor<T: Real>(&mut self, name: &str, shape: (usize, usize)) -> Result<Vec<T>> {
        let n = u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize;
        let got = std::str::from_utf8(self.take(n)?).map_err(|_| bad("tensor name is not UTF-8"))?;
        if got != name {
            return Err(bad(format!("expected tensor {name}, found {got}")));
        }
        let (r, c) = (self.u64()? as usize, self.u64()? as usize);
        if (r, c) != shape {
            return Err(bad(format!("tensor {name} is {r}x{c} but the architecture needs {}x{}", shape.0, shape.1)));
        }
        let raw =
            self.take(r.checked_mul(c).and_then(|n| n.checked_mul(T::BYTES)).ok_or_else(|| bad("tensor too large"))?)?;
        Ok(raw.chunks_exact(T::BYTES).map(T::read_le).collect())
    }
}

impl<T: Real> Checkpoint<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut h = format!("{MAGIC} {FORMAT_VERSION}\n");
        h += &format!("precision {}\n", T::NAME);
        h += &format!("arch {}\n", self.model.spec());
        h += &format!("eos {}\n", self.eos);
        match &self.vocab {
            Some(v) => {
                h += &format!("vocab {}\n", v.len());
                h += &v.to_text();
            }
            None => h += "vocab none\n",
        }
        match &self.state {
            Some(s) => {
                h += &format!(
                    "state epoch={} lr={} phase={} best={} last={}\n",
                    s.epoch,
                    s.schedule.lr,
                    phase_text(s.schedule.phase),
                    opt_f64(s.schedule.best_valid_ppl),
                    opt_f64(s.schedule.last_valid_ppl)
                );
            }
            None => h += "state none\n",
        }
        let tensors = self.model.tensors();
        let momentum = self.state.as_ref().map_or(0, |s| s.momentum.buffers.len());
        h += &format!("tensors {}\nmomentum {}\nend\n", tensors.len(), momentum);

        let mut body = Vec::new();
        for t in &tensors {
            write_tensor(&mut body, &t.name, t.shape, t.data);
        }
        if let Some(s) = &self.state {
            for (t, buf) in tensors.iter().zip(&s.momentum.buffers) {
                write_tensor(&mut body, &format!("momentum.{}", t.name), t.shape, buf);
            }
        }
        let mut out = h.into_bytes();
        let hash = fnv1a(&body);
        out.extend_from_slice(&body);
        out.extend_from_slice(&hash.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let h = read_header(bytes)?;
        if h.precision != T::NAME {
            return Err(bad(format!("checkpoint holds {} parameters, expected {}", h.precision, T::NAME)));
        }
        let spec = ModelSpec::parse(&h.arch, None, &MemoryDefaults::default())
            .map_err(|e| bad(format!("bad architecture in checkpoint: {e}")))?;
        let vocab = h.vocab.map(Vocab::from_tokens).transpose()?;
        if let Some(v) = &vocab {
            if v.len() != spec.vocab() {
                return Err(bad(format!(
                    "checkpoint vocabulary has {} entries but the model predicts {}",
                    v.len(),
                    spec.vocab()
                )));
            }
        }
        let body = &bytes[h.body_offset..];
        if body.len() < 8 {
            return Err(bad("checkpoint is truncated"));
        }
        let (data, tail) = body.split_at(body.len() - 8);
        if fnv1a(data) != u64::from_le_bytes(tail.try_into().expect("8 bytes")) {
            return Err(bad("checkpoint checksum mismatch"));
        }
        let mut model = Model::zeros(spec);
        let expected = model.tensors().len();
        if h.tensors != expected || (h.momentum != 0 && h.momentum != expected) {
            return Err(bad(format!("checkpoint lists {} tensors, architecture has {expected}", h.tensors)));
        }
        if h.state.is_some() != (h.momentum != 0) && expected > 0 {
            return Err(bad("momentum buffers and training state must come together"));
        }
        let mut rd = Body { bytes: data, pos: 0 };
        for t in model.tensors_mut() {
            let v = rd.tensor::<T>(&t.name, t.shape)?;
            t.data.copy_from_slice(&v);
        }
        let state = match h.state {
            Some(s) => {
                let mut buffers = Vec::with_capacity(expected);
                for t in model.tensors() {
                    buffers.push(rd.tensor::<T>(&format!("momentum.{}", t.name), t.shape)?);
                }
                Some(TrainState { epoch: s.epoch, schedule: s.schedule, momentum: Momentum { buffers } })
            }
            None => None,
        };
        if rd.pos != data.len() {
            return Err(bad("trailing bytes after the last tensor"));
        }
        Ok(Self { model, vocab, eos: h.eos, state })
    }

    /// Writes through a temporary file in the same directory, then renames.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes())?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| bad(format!("cannot read {}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}

/// Precision recorded in a checkpoint file.
pub fn peek_precision(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| bad(format!("cannot read {}: {e}", path.display())))?;
    Ok(read_header(&bytes)?.precision)
}
