use std::fmt;

use crate::error::{Error, Result};
use crate::math::{rng_uniform, sub_seed, Activation, Matrix};
use crate::real::Real;

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum MemoryKind {
    /// One coefficient per tap, shared by every hidden unit.
    Scalar,
    /// One coefficient vector per tap, applied element-wise.
    Vector,
    /// Per-frame coefficients produced from the current activation.
    Attention,
}

impl MemoryKind {
    pub fn name(self) -> &'static str {
        match self {
            MemoryKind::Scalar => "scalar",
            MemoryKind::Vector => "vector",
            MemoryKind::Attention => "attention",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "scalar" | "s" => Ok(MemoryKind::Scalar),
            "vector" | "v" => Ok(MemoryKind::Vector),
            "attention" | "a" => Ok(MemoryKind::Attention),
            other => Err(Error::Parse(format!("unknown memory kind `{other}`"))),
        }
    }
}

impl fmt::Display for MemoryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Shape of a memory block.
///
/// Tap conventions differ by kind. Scalar and vector blocks carry `N1 + 1`
/// lookback taps (offsets `0..=N1`, the current frame included) and `N2`
/// lookahead taps (offsets `1..=N2`). The attention block produces `N1 + N2`
/// coefficients per frame: lookback offsets `0..N1` and lookahead `1..=N2`.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct MemoryConfig {
    pub kind: MemoryKind,
    pub lookback: usize,
    pub lookahead: usize,
    /// Width of the hidden activations the block encodes.
    pub dim: usize,
    /// Hidden width of the attention function; ignored by other kinds.
    pub attention_dim: usize,
    pub attention_activation: Activation,
}

impl MemoryConfig {
    pub fn scalar(lookback: usize, lookahead: usize, dim: usize) -> Self {
        Self::new(MemoryKind::Scalar, lookback, lookahead, dim)
    }

    pub fn vector(lookback: usize, lookahead: usize, dim: usize) -> Self {
        Self::new(MemoryKind::Vector, lookback, lookahead, dim)
    }

    pub fn attention(lookback: usize, lookahead: usize, dim: usize, attention_dim: usize) -> Self {
        Self { attention_dim, ..Self::new(MemoryKind::Attention, lookback, lookahead, dim) }
    }

    pub fn new(kind: MemoryKind, lookback: usize, lookahead: usize, dim: usize) -> Self {
        Self { kind, lookback, lookahead, dim, attention_dim: 0, attention_activation: Activation::Relu }
    }

    /// Number of lookback taps, including the current frame when the kind
    /// counts it.
    pub fn lookback_taps(&self) -> usize {
        match self.kind {
            MemoryKind::Attention => self.lookback,
            _ => self.lookback + 1,
        }
    }

    pub fn tap_count(&self) -> usize {
        self.lookback_taps() + self.lookahead
    }

    /// Signed frame offsets `s` such that tap `k` reads `h[t + s]`, in tap
    /// order: lookback `0, -1, ...` then lookahead `+1, +2, ...`.
    pub fn offsets(&self) -> Vec<isize> {
        (0..self.lookback_taps()).map(|i| -(i as isize)).chain((1..=self.lookahead).map(|j| j as isize)).collect()
    }

    /// Furthest past and future frames that can reach an output frame.
    pub fn reach(&self) -> (usize, usize) {
        (self.lookback_taps().saturating_sub(1), self.lookahead)
    }
}

/// Learnable coefficients of a memory block.
#[derive(Clone, Debug, PartialEq)]
pub enum MemoryParams<T> {
    /// `lookback[i]` is `a_i` for `i = 0..=N1`; `lookahead[j - 1]` is `c_j`.
    Scalar { lookback: Vec<T>, lookahead: Vec<T> },
    /// Row `i` of `lookback` is the vector `a_i`; row `j - 1` of `lookahead`
    /// is `c_j`.
    Vector { lookback: Matrix<T>, lookahead: Matrix<T> },
    /// `coeffs_t = v · f(u · h_t + m)`.
    Attention { u: Matrix<T>, v: Matrix<T>, m: Vec<T> },
}

impl<T: Real> MemoryParams<T> {
    pub fn zeros(cfg: &MemoryConfig) -> Self {
        match cfg.kind {
            MemoryKind::Scalar => MemoryParams::Scalar {
                lookback: vec![T::zero(); cfg.lookback + 1],
                lookahead: vec![T::zero(); cfg.lookahead],
            },
            MemoryKind::Vector => MemoryParams::Vector {
                lookback: Matrix::zeros(cfg.lookback + 1, cfg.dim),
                lookahead: Matrix::zeros(cfg.lookahead, cfg.dim),
            },
            MemoryKind::Attention => MemoryParams::Attention {
                u: Matrix::zeros(cfg.attention_dim, cfg.dim),
                v: Matrix::zeros(cfg.tap_count(), cfg.attention_dim),
                m: vec![T::zero(); cfg.attention_dim],
            },
        }
    }

    /// Identity filter (`a_0 = 1`, every other tap 0), optionally jittered by
    /// uniform(-jitter, jitter). Attention blocks get Glorot-uniform `u` and
    /// `v` and a zero `m`.
    pub fn init(cfg: &MemoryConfig, seed: u64, jitter: f64) -> Result<Self> {
        let mut p = Self::zeros(cfg);
        let noise = |salt: u64, rows: usize, cols: usize| -> Result<Matrix<T>> {
            if jitter > 0.0 && rows * cols > 0 {
                rng_uniform(sub_seed(seed, &[salt]), T::lit(-jitter), T::lit(jitter), rows, cols)
            } else {
                Ok(Matrix::zeros(rows, cols))
            }
        };
        match &mut p {
            MemoryParams::Scalar { lookback, lookahead } => {
                let nb = noise(0, 1, lookback.len())?;
                let na = noise(1, 1, lookahead.len())?;
                for (x, &n) in lookback.iter_mut().zip(nb.data()) {
                    *x = n;
                }
                for (x, &n) in lookahead.iter_mut().zip(na.data()) {
                    *x = n;
                }
                lookback[0] += T::one();
            }
            MemoryParams::Vector { lookback, lookahead } => {
                *lookback = noise(0, lookback.rows(), lookback.cols())?;
                *lookahead = noise(1, lookahead.rows(), lookahead.cols())?;
                for x in lookback.row_mut(0) {
                    *x += T::one();
                }
            }
            MemoryParams::Attention { u, v, .. } => {
                *u = glorot(sub_seed(seed, &[2]), u.rows(), u.cols())?;
                *v = glorot(sub_seed(seed, &[3]), v.rows(), v.cols())?;
            }
        }
        Ok(p)
    }

    pub fn kind(&self) -> MemoryKind {
        match self {
            MemoryParams::Scalar { .. } => MemoryKind::Scalar,
            MemoryParams::Vector { .. } => MemoryKind::Vector,
            MemoryParams::Attention { .. } => MemoryKind::Attention,
        }
    }

    /// Checks that the coefficient shapes agree with `cfg`.
    pub fn validate(&self, cfg: &MemoryConfig) -> Result<()> {
        let want = Self::zeros(cfg);
        let ok = match (self, &want) {
            (
                MemoryParams::Scalar { lookback: a, lookahead: c },
                MemoryParams::Scalar { lookback: wa, lookahead: wc },
            ) => a.len() == wa.len() && c.len() == wc.len(),
            (
                MemoryParams::Vector { lookback: a, lookahead: c },
                MemoryParams::Vector { lookback: wa, lookahead: wc },
            ) => a.shape() == wa.shape() && c.shape() == wc.shape(),
            (MemoryParams::Attention { u, v, m }, MemoryParams::Attention { u: wu, v: wv, m: wm }) => {
                u.shape() == wu.shape() && v.shape() == wv.shape() && m.len() == wm.len()
            }
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::shape_msg(
                "memory params",
                format!(
                    "{} parameters do not match {} block N1={} N2={} dim={}",
                    self.kind(),
                    cfg.kind,
                    cfg.lookback,
                    cfg.lookahead,
                    cfg.dim
                ),
            ))
        }
    }

    /// Coefficient of tap `k` for hidden unit `d` (scalar and vector kinds).
    #[inline]
    pub(crate) fn tap(&self, k: usize, d: usize) -> T {
        match self {
            MemoryParams::Scalar { lookback, lookahead } => {
                if k < lookback.len() {
                    lookback[k]
                } else {
                    lookahead[k - lookback.len()]
                }
            }
            MemoryParams::Vector { lookback, lookahead } => {
                if k < lookback.rows() {
                    lookback.get(k, d)
                } else {
                    lookahead.get(k - lookback.rows(), d)
                }
            }
            MemoryParams::Attention { .. } => unreachable!("attention taps are per frame"),
        }
    }
}

pub(crate) fn glorot<T: Real>(seed: u64, rows: usize, cols: usize) -> Result<Matrix<T>> {
    if rows * cols == 0 {
        return Ok(Matrix::zeros(rows, cols));
    }
    let r = (6.0 / (rows + cols) as f64).sqrt();
    rng_uniform(seed, T::lit(-r), T::lit(r), rows, cols)
}

/// Validates per-sequence lengths of a packed time axis.
pub fn check_segments(segments: &[usize], total: usize) -> Result<()> {
    if segments.contains(&0) {
        return Err(Error::input("sequence lengths must be positive"));
    }
    let sum: usize = segments.iter().sum();
    if sum != total {
        return Err(Error::shape_msg(
            "segments",
            format!("sequence lengths sum to {sum} but the batch has {total} frames"),
        ));
    }
    Ok(())
}

/// `(start, len)` of each packed sequence.
pub fn segment_spans(segments: &[usize]) -> impl Iterator<Item = (usize, usize)> + '_ {
    segments.iter().scan(0usize, |start, &len| {
        let s = *start;
        *start += len;
        Some((s, len))
    })
}
