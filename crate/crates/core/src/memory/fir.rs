//! Row-wise tapped-delay kernels.
//!
//! A `D x T` activation matrix is row-major, so each hidden unit's time series
//! is one contiguous row. Every kernel here walks the nonzero diagonals of the
//! band directly and never touches the structural zeros. Rows are independent
//! and run in parallel; taps never read across a sequence boundary.

use crate::math::Matrix;
use crate::parallel::{self, Exec};
use crate::real::Real;

use super::config::segment_spans;

/// Valid frame range `t` within a sequence of `len` such that `t + off`
/// stays inside it.
#[inline]
fn valid(len: usize, off: isize) -> std::ops::Range<usize> {
    if off >= 0 {
        0..len.saturating_sub(off as usize)
    } else {
        let o = (-off) as usize;
        o.min(len)..len
    }
}

/// `out[d, t] = Σ_k coeff(k, d) · h[d, t + offsets[k]]`.
pub(crate) fn forward<T, F>(exec: Exec, h: &Matrix<T>, segments: &[usize], offsets: &[isize], coeff: F) -> Matrix<T>
where
    T: Real,
    F: Fn(usize, usize) -> T + Send + Sync,
{
    let (dim, total) = h.shape();
    let mut out = Matrix::zeros(dim, total);
    let work = dim * total * offsets.len();
    parallel::for_each_row(exec, out.data_mut(), total, work, |d, row| {
        let src = h.row(d);
        for (start, len) in segment_spans(segments) {
            let dst = &mut row[start..start + len];
            let seq = &src[start..start + len];
            for (k, &off) in offsets.iter().enumerate() {
                let c = coeff(k, d);
                for t in valid(len, off) {
                    dst[t] += c * seq[(t as isize + off) as usize];
                }
            }
        }
    });
    out
}

/// Transpose of [`forward`] with respect to `h`:
/// `e_h[d, t + offsets[k]] += coeff(k, d) · e[d, t]`.
pub(crate) fn input_grad<T, F>(exec: Exec, e: &Matrix<T>, segments: &[usize], offsets: &[isize], coeff: F) -> Matrix<T>
where
    T: Real,
    F: Fn(usize, usize) -> T + Send + Sync,
{
    let (dim, total) = e.shape();
    let mut out = Matrix::zeros(dim, total);
    let work = dim * total * offsets.len();
    parallel::for_each_row(exec, out.data_mut(), total, work, |d, row| {
        let src = e.row(d);
        for (start, len) in segment_spans(segments) {
            let dst = &mut row[start..start + len];
            let seq = &src[start..start + len];
            for (k, &off) in offsets.iter().enumerate() {
                let c = coeff(k, d);
                for t in valid(len, off) {
                    dst[(t as isize + off) as usize] += c * seq[t];
                }
            }
        }
    });
    out
}

/// Per-unit tap correlations, returned as `taps x D`:
/// `G[k, d] = Σ_t e[d, t] · h[d, t + offsets[k]]`.
pub(crate) fn tap_grads<T: Real>(
    exec: Exec,
    h: &Matrix<T>,
    e: &Matrix<T>,
    segments: &[usize],
    offsets: &[isize],
) -> Matrix<T> {
    let (dim, total) = h.shape();
    let taps = offsets.len();
    let mut by_unit = Matrix::zeros(dim, taps);
    let work = dim * total * taps;
    parallel::for_each_row(exec, by_unit.data_mut(), taps, work, |d, row| {
        let hd = h.row(d);
        let ed = e.row(d);
        for (start, len) in segment_spans(segments) {
            let hs = &hd[start..start + len];
            let es = &ed[start..start + len];
            for (k, &off) in offsets.iter().enumerate() {
                let mut acc = T::zero();
                for t in valid(len, off) {
                    acc += es[t] * hs[(t as isize + off) as usize];
                }
                row[k] += acc;
            }
        }
    });
    by_unit.transpose()
}

/// Per-frame coefficients: `out[d, t] = Σ_k coeffs[k, t] · h[d, t + offsets[k]]`.
pub(crate) fn forward_per_frame<T: Real>(
    exec: Exec,
    h: &Matrix<T>,
    segments: &[usize],
    offsets: &[isize],
    coeffs: &Matrix<T>,
) -> Matrix<T> {
    let (dim, total) = h.shape();
    let mut out = Matrix::zeros(dim, total);
    let work = dim * total * offsets.len();
    parallel::for_each_row(exec, out.data_mut(), total, work, |d, row| {
        let src = h.row(d);
        for (start, len) in segment_spans(segments) {
            let dst = &mut row[start..start + len];
            let seq = &src[start..start + len];
            for (k, &off) in offsets.iter().enumerate() {
                let ck = &coeffs.row(k)[start..start + len];
                for t in valid(len, off) {
                    dst[t] += ck[t] * seq[(t as isize + off) as usize];
                }
            }
        }
    });
    out
}

/// Transpose of [`forward_per_frame`] with respect to `h`.
pub(crate) fn input_grad_per_frame<T: Real>(
    exec: Exec,
    e: &Matrix<T>,
    segments: &[usize],
    offsets: &[isize],
    coeffs: &Matrix<T>,
) -> Matrix<T> {
    let (dim, total) = e.shape();
    let mut out = Matrix::zeros(dim, total);
    let work = dim * total * offsets.len();
    parallel::for_each_row(exec, out.data_mut(), total, work, |d, row| {
        let src = e.row(d);
        for (start, len) in segment_spans(segments) {
            let dst = &mut row[start..start + len];
            let seq = &src[start..start + len];
            for (k, &off) in offsets.iter().enumerate() {
                let ck = &coeffs.row(k)[start..start + len];
                for t in valid(len, off) {
                    dst[(t as isize + off) as usize] += ck[t] * seq[t];
                }
            }
        }
    });
    out
}

/// Per-frame tap correlations summed over units, `taps x T`:
/// `G[k, t] = Σ_d e[d, t] · h[d, t + offsets[k]]`.
pub(crate) fn frame_tap_grads<T: Real>(
    exec: Exec,
    h: &Matrix<T>,
    e: &Matrix<T>,
    segments: &[usize],
    offsets: &[isize],
) -> Matrix<T> {
    let (dim, total) = h.shape();
    let mut g = Matrix::zeros(offsets.len(), total);
    let work = dim * total * offsets.len();
    parallel::for_each_row(exec, g.data_mut(), total, work, |k, row| {
        let off = offsets[k];
        for d in 0..dim {
            let hd = h.row(d);
            let ed = e.row(d);
            for (start, len) in segment_spans(segments) {
                for t in valid(len, off) {
                    row[start + t] += ed[start + t] * hd[(start as isize + t as isize + off) as usize];
                }
            }
        }
    });
    g
}
