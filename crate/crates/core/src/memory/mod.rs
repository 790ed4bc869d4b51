//! Memory blocks: tapped-delay encoders over a layer's hidden activations.
//!
//! For hidden activations `H` (`D x T`, one column per frame) a block produces
//! `H~` of the same shape:
//!
//! * scalar: `h~_t = Σ_{i=0}^{N1} a_i h_{t-i} + Σ_{j=1}^{N2} c_j h_{t+j}`
//! * vector: the same with element-wise `a_i ⊙ h_{t-i}` and `c_j ⊙ h_{t+j}`
//! * attention: `α_t = V f(U h_t + m)` and
//!   `h~_t = Σ_{i=0}^{N1-1} α_{t,i} h_{t-i} + Σ_{j=1}^{N2} α_{t,N1-1+j} h_{t+j}`
//!
//! Frames outside a sequence contribute zero. A packed batch carries the
//! length of each sequence (`segments`) and no tap ever reads across a
//! sequence boundary.
//!
//! [`encode_naive`] is the literal per-frame loop. The fast paths are the
//! band-matrix product ([`band`]) for scalar blocks and row-wise kernels for
//! the other kinds.

mod band;
mod config;
mod fir;

pub use band::{
    build_band_matrix, build_batch_band, encode_band_walk, encode_banded, scalar_backward, scalar_backward_walk,
    BandMatrix, ScalarGrads,
};
pub(crate) use config::glorot;
pub use config::{check_segments, segment_spans, MemoryConfig, MemoryKind, MemoryParams};

use crate::error::{Error, Result};
use crate::math::{matmul, matmul_nt, matmul_tn, Matrix};
use crate::parallel::Exec;
use crate::real::Real;

/// How scalar blocks evaluate `H · M̄`.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Default)]
pub enum BandKernel {
    /// Materialise `M̄` and run one dense product. Quadratic in the packed
    /// length.
    Dense,
    /// Walk the band diagonals only.
    #[default]
    Walk,
}

fn check_input<T: Real>(op: &'static str, h: &Matrix<T>, cfg: &MemoryConfig) -> Result<()> {
    if h.rows() != cfg.dim {
        return Err(Error::shape_msg(
            op,
            format!("activations have {} rows but the block has dim {}", h.rows(), cfg.dim),
        ));
    }
    Ok(())
}

/// Per-frame reference encoder, a direct transcription of the block
/// equations with zero padding outside each sequence.
pub fn encode_naive<T: Real>(
    h: &Matrix<T>,
    cfg: &MemoryConfig,
    params: &MemoryParams<T>,
    segments: &[usize],
) -> Result<Matrix<T>> {
    check_input("encode_naive", h, cfg)?;
    params.validate(cfg)?;
    check_segments(segments, h.cols())?;
    let offsets = cfg.offsets();
    let mut out = Matrix::zeros(h.rows(), h.cols());
    for (start, len) in segment_spans(segments) {
        for t in 0..len {
            let coeffs = match params {
                MemoryParams::Attention { .. } => Some(attention_coeffs(&h.col(start + t), cfg, params)?),
                _ => None,
            };
            for (k, &off) in offsets.iter().enumerate() {
                let src = t as isize + off;
                if src < 0 || src >= len as isize {
                    continue;
                }
                let src = start + src as usize;
                for d in 0..h.rows() {
                    let c = match &coeffs {
                        Some(a) => a[k],
                        None => params.tap(k, d),
                    };
                    let v = out.get(d, start + t) + c * h.get(d, src);
                    out.set(d, start + t, v);
                }
            }
        }
    }
    Ok(out)
}

/// Attention coefficients for one frame, `V · f(U h_t + m)`; length `N1 + N2`.
pub fn attention_coeffs<T: Real>(h_t: &[T], cfg: &MemoryConfig, params: &MemoryParams<T>) -> Result<Vec<T>> {
    let MemoryParams::Attention { u, v, m } = params else {
        return Err(Error::input("attention_coeffs needs an attention block"));
    };
    params.validate(cfg)?;
    if h_t.len() != cfg.dim {
        return Err(Error::shape("attention_coeffs", u.shape(), (h_t.len(), 1)));
    }
    let hidden: Vec<T> = (0..u.rows())
        .map(|r| {
            let z = u.row(r).iter().zip(h_t).map(|(&a, &b)| a * b).sum::<T>() + m[r];
            cfg.attention_activation.apply(z)
        })
        .collect();
    Ok((0..v.rows()).map(|k| v.row(k).iter().zip(&hidden).map(|(&a, &b)| a * b).sum()).collect())
}

/// Intermediate values of an attention block kept for the backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionCache<T> {
    /// `U H + m 1ᵀ`, `att_dim x T`.
    pub pre: Matrix<T>,
    /// `f(pre)`.
    pub hidden: Matrix<T>,
    /// Per-frame coefficients, `(N1 + N2) x T`.
    pub coeffs: Matrix<T>,
}

fn attention_forward<T: Real>(
    h: &Matrix<T>,
    cfg: &MemoryConfig,
    params: &MemoryParams<T>,
    segments: &[usize],
) -> Result<(Matrix<T>, AttentionCache<T>)> {
    let MemoryParams::Attention { u, v, m } = params else {
        return Err(Error::input("attention_encode needs an attention block"));
    };
    let mut pre = matmul(u, h)?;
    pre.add_row_bias(m)?;
    let act = cfg.attention_activation;
    let hidden = pre.map(|z| act.apply(z));
    let coeffs = matmul(v, &hidden)?;
    let out = fir::forward_per_frame(Exec::Auto, h, segments, &cfg.offsets(), &coeffs);
    Ok((out, AttentionCache { pre, hidden, coeffs }))
}

/// Attention-based encoding of a packed batch.
pub fn attention_encode<T: Real>(
    h: &Matrix<T>,
    cfg: &MemoryConfig,
    params: &MemoryParams<T>,
    segments: &[usize],
) -> Result<Matrix<T>> {
    check_input("attention_encode", h, cfg)?;
    params.validate(cfg)?;
    check_segments(segments, h.cols())?;
    Ok(attention_forward(h, cfg, params, segments)?.0)
}

/// Gradients of a memory block: the coefficient gradients laid out like the
/// parameters, and the error signal with respect to the block input.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryGrads<T> {
    pub params: MemoryParams<T>,
    pub input: Matrix<T>,
}

/// Vector-block gradients:
/// `Δa_i = Σ_t e_t ⊙ h_{t-i}`, `Δc_j = Σ_t e_t ⊙ h_{t+j}` and
/// `e_{h_t} = Σ_i a_i ⊙ e_{t+i} + Σ_j c_j ⊙ e_{t-j}`, all within sequences.
pub fn vector_backward<T: Real>(
    h: &Matrix<T>,
    e: &Matrix<T>,
    cfg: &MemoryConfig,
    params: &MemoryParams<T>,
    segments: &[usize],
) -> Result<MemoryGrads<T>> {
    if cfg.kind != MemoryKind::Vector {
        return Err(Error::input("vector_backward needs a vector block"));
    }
    check_input("vector_backward", h, cfg)?;
    params.validate(cfg)?;
    check_segments(segments, h.cols())?;
    if e.shape() != h.shape() {
        return Err(Error::shape("vector_backward", h.shape(), e.shape()));
    }
    let offsets = cfg.offsets();
    let taps = fir::tap_grads(Exec::Auto, h, e, segments, &offsets);
    let nb = cfg.lookback + 1;
    let lookback = Matrix::from_vec(nb, cfg.dim, taps.data()[..nb * cfg.dim].to_vec())?;
    let lookahead = Matrix::from_vec(cfg.lookahead, cfg.dim, taps.data()[nb * cfg.dim..].to_vec())?;
    let input = fir::input_grad(Exec::Auto, e, segments, &offsets, |k, d| params.tap(k, d));
    Ok(MemoryGrads { params: MemoryParams::Vector { lookback, lookahead }, input })
}

fn attention_backward_cached<T: Real>(
    h: &Matrix<T>,
    e: &Matrix<T>,
    cfg: &MemoryConfig,
    params: &MemoryParams<T>,
    segments: &[usize],
    cache: &AttentionCache<T>,
) -> Result<MemoryGrads<T>> {
    let MemoryParams::Attention { u, v, .. } = params else {
        return Err(Error::input("attention_backward needs an attention block"));
    };
    let offsets = cfg.offsets();
    // dL/dα[k, t] = <e_t, h_{t+off_k}>
    let g = fir::frame_tap_grads(Exec::Auto, h, e, segments, &offsets);
    let dv = matmul_nt(&g, &cache.hidden)?;
    let ds = matmul_tn(v, &g)?;
    let act = cfg.attention_activation;
    let mut dz = ds;
    for (z, (&x, &y)) in dz.data_mut().iter_mut().zip(cache.pre.data().iter().zip(cache.hidden.data())) {
        *z *= act.derivative(x, y);
    }
    let du = matmul_nt(&dz, h)?;
    let dm = dz.row_sums();
    // query path plus the encoding path
    let mut input = matmul_tn(u, &dz)?;
    input.add_assign(&fir::input_grad_per_frame(Exec::Auto, e, segments, &offsets, &cache.coeffs))?;
    Ok(MemoryGrads { params: MemoryParams::Attention { u: du, v: dv, m: dm }, input })
}

/// Gradients of an attention block with respect to `U`, `V`, `m` and `H`.
/// The input gradient sums the path through the encoded frames and the path
/// through `h_t` as the attention query.
pub fn attention_backward<T: Real>(
    h: &Matrix<T>,
    e: &Matrix<T>,
    cfg: &MemoryConfig,
    params: &MemoryParams<T>,
    segments: &[usize],
) -> Result<MemoryGrads<T>> {
    if cfg.kind != MemoryKind::Attention {
        return Err(Error::input("attention_backward needs an attention block"));
    }
    check_input("attention_backward", h, cfg)?;
    params.validate(cfg)?;
    check_segments(segments, h.cols())?;
    if e.shape() != h.shape() {
        return Err(Error::shape("attention_backward", h.shape(), e.shape()));
    }
    let (_, cache) = attention_forward(h, cfg, params, segments)?;
    attention_backward_cached(h, e, cfg, params, segments, &cache)
}

/// State an [`encode`] call leaves for [`backward`].
#[derive(Clone, Debug, PartialEq)]
pub enum MemoryCache<T> {
    None,
    Attention(AttentionCache<T>),
}

/// Encodes a packed batch with the fast path for the block kind.
pub fn encode<T: Real>(
    h: &Matrix<T>,
    cfg: &MemoryConfig,
    params: &MemoryParams<T>,
    segments: &[usize],
    kernel: BandKernel,
) -> Result<(Matrix<T>, MemoryCache<T>)> {
    check_input("memory encode", h, cfg)?;
    params.validate(cfg)?;
    check_segments(segments, h.cols())?;
    match cfg.kind {
        MemoryKind::Scalar => {
            let band = batch_band(cfg, params, segments)?;
            let out = match kernel {
                BandKernel::Dense => encode_banded(h, &band)?,
                BandKernel::Walk => encode_band_walk(h, &band)?,
            };
            Ok((out, MemoryCache::None))
        }
        MemoryKind::Vector => {
            let out = fir::forward(Exec::Auto, h, segments, &cfg.offsets(), |k, d| params.tap(k, d));
            Ok((out, MemoryCache::None))
        }
        MemoryKind::Attention => {
            let (out, cache) = attention_forward(h, cfg, params, segments)?;
            Ok((out, MemoryCache::Attention(cache)))
        }
    }
}

/// Backward pass matching [`encode`].
pub fn backward<T: Real>(
    h: &Matrix<T>,
    e: &Matrix<T>,
    cfg: &MemoryConfig,
    params: &MemoryParams<T>,
    segments: &[usize],
    kernel: BandKernel,
    cache: &MemoryCache<T>,
) -> Result<MemoryGrads<T>> {
    match cfg.kind {
        MemoryKind::Scalar => {
            let band = batch_band(cfg, params, segments)?;
            let g = match kernel {
                BandKernel::Dense => scalar_backward(h, e, &band)?,
                BandKernel::Walk => scalar_backward_walk(h, e, &band)?,
            };
            Ok(MemoryGrads {
                params: MemoryParams::Scalar { lookback: g.lookback, lookahead: g.lookahead },
                input: g.input,
            })
        }
        MemoryKind::Vector => vector_backward(h, e, cfg, params, segments),
        MemoryKind::Attention => match cache {
            MemoryCache::Attention(c) => attention_backward_cached(h, e, cfg, params, segments, c),
            MemoryCache::None => attention_backward(h, e, cfg, params, segments),
        },
    }
}

/// Block-diagonal band of a scalar block over a packed batch.
pub fn batch_band<T: Real>(cfg: &MemoryConfig, params: &MemoryParams<T>, segments: &[usize]) -> Result<BandMatrix<T>> {
    let blocks = segments.iter().map(|&len| build_band_matrix(cfg, params, len)).collect::<Result<Vec<_>>>()?;
    build_batch_band(&blocks)
}
