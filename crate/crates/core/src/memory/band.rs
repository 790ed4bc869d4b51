//! Band-matrix realisation of the scalar memory block.
//!
//! For a sequence of `T` frames the scalar block is the `T x T` matrix `M`
//! with `M[i][j] = a_{j-i}` for `0 <= j-i <= N1`, `M[i][j] = c_{i-j}` for
//! `1 <= i-j <= N2` and zero elsewhere, so the whole sequence is encoded as
//! `H~ = H · M`. A mini-batch of `K` sequences uses the block-diagonal
//! `M̄ = diag(M_1, ..., M_K)` against the packed `H̄ = [H_1, ..., H_K]`.

use crate::error::{Error, Result};
use crate::math::{matmul, matmul_nt, matmul_tn, Matrix};
use crate::parallel::Exec;
use crate::real::Real;

use super::config::{check_segments, segment_spans, MemoryConfig, MemoryKind, MemoryParams};
use super::fir;

/// Block-diagonal band matrix with tied taps.
///
/// Only the taps and the block sizes are stored; [`BandMatrix::to_dense`]
/// materialises the full matrix on demand.
#[derive(Clone, Debug, PartialEq)]
pub struct BandMatrix<T> {
    lookback: Vec<T>,
    lookahead: Vec<T>,
    segments: Vec<usize>,
}

impl<T: Real> BandMatrix<T> {
    pub fn new(lookback: Vec<T>, lookahead: Vec<T>, segments: Vec<usize>) -> Result<Self> {
        if lookback.is_empty() {
            return Err(Error::input("a band needs at least the a_0 tap"));
        }
        if segments.is_empty() || segments.contains(&0) {
            return Err(Error::input("band blocks must have positive sizes"));
        }
        Ok(Self { lookback, lookahead, segments })
    }

    /// Side length `Σ T_k`.
    pub fn len(&self) -> usize {
        self.segments.iter().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lookback(&self) -> &[T] {
        &self.lookback
    }

    pub fn lookahead(&self) -> &[T] {
        &self.lookahead
    }

    /// Sizes of the diagonal blocks.
    pub fn segments(&self) -> &[usize] {
        &self.segments
    }

    fn block_of(&self, i: usize) -> Option<(usize, usize)> {
        segment_spans(&self.segments).find(|&(s, l)| i >= s && i < s + l)
    }

    /// Entry `(i, j)` of the materialised matrix.
    pub fn get(&self, i: usize, j: usize) -> T {
        match (self.block_of(i), self.block_of(j)) {
            (Some(bi), Some(bj)) if bi == bj => self.tap_at(j as isize - i as isize),
            _ => T::zero(),
        }
    }

    /// Coefficient on the diagonal `j - i = diag` inside a block.
    fn tap_at(&self, diag: isize) -> T {
        if diag >= 0 {
            self.lookback.get(diag as usize).copied().unwrap_or(T::zero())
        } else {
            self.lookahead.get((-diag) as usize - 1).copied().unwrap_or(T::zero())
        }
    }

    pub fn to_dense(&self) -> Matrix<T> {
        let n = self.len();
        let mut m = Matrix::zeros(n, n);
        for (start, len) in segment_spans(&self.segments) {
            for i in 0..len {
                for j in 0..len {
                    m.set(start + i, start + j, self.tap_at(j as isize - i as isize));
                }
            }
        }
        m
    }

    fn offsets(&self) -> Vec<isize> {
        (0..self.lookback.len()).map(|i| -(i as isize)).chain((1..=self.lookahead.len()).map(|j| j as isize)).collect()
    }

    fn tap(&self, k: usize) -> T {
        if k < self.lookback.len() {
            self.lookback[k]
        } else {
            self.lookahead[k - self.lookback.len()]
        }
    }
}

/// Band matrix of a scalar block for one sequence of `len` frames. When
/// `len <= N1` the band is truncated at the matrix edge.
pub fn build_band_matrix<T: Real>(cfg: &MemoryConfig, params: &MemoryParams<T>, len: usize) -> Result<BandMatrix<T>> {
    if cfg.kind != MemoryKind::Scalar {
        return Err(Error::input(format!("band matrices are defined for scalar blocks, not {}", cfg.kind)));
    }
    if len == 0 {
        return Err(Error::input("band matrix needs T >= 1"));
    }
    params.validate(cfg)?;
    let MemoryParams::Scalar { lookback, lookahead } = params else { unreachable!("validated as scalar") };
    BandMatrix::new(lookback.clone(), lookahead.clone(), vec![len])
}

/// Block-diagonal assembly `diag(M_1, ..., M_K)`. All blocks must belong to
/// the same memory block, i.e. share their taps.
pub fn build_batch_band<T: Real>(blocks: &[BandMatrix<T>]) -> Result<BandMatrix<T>> {
    let first = blocks.first().ok_or_else(|| Error::input("build_batch_band needs at least one block"))?;
    if let Some(k) = blocks.iter().position(|b| b.lookback != first.lookback || b.lookahead != first.lookahead) {
        return Err(Error::input(format!("block {k} does not share the taps of block 0")));
    }
    let segments = blocks.iter().flat_map(|b| b.segments.iter().copied()).collect();
    BandMatrix::new(first.lookback.clone(), first.lookahead.clone(), segments)
}

fn check_cols<T: Real>(op: &'static str, h: &Matrix<T>, m: &BandMatrix<T>) -> Result<()> {
    if h.cols() != m.len() {
        return Err(Error::shape(op, h.shape(), (m.len(), m.len())));
    }
    Ok(())
}

/// `H~ = H · M̄` as one dense matrix product.
pub fn encode_banded<T: Real>(h: &Matrix<T>, m: &BandMatrix<T>) -> Result<Matrix<T>> {
    check_cols("encode_banded", h, m)?;
    matmul(h, &m.to_dense())
}

/// `H · M̄` computed by walking the band diagonals; skips the structural
/// zeros and never materialises `M̄`.
pub fn encode_band_walk<T: Real>(h: &Matrix<T>, m: &BandMatrix<T>) -> Result<Matrix<T>> {
    check_cols("encode_band_walk", h, m)?;
    Ok(fir::forward(Exec::Auto, h, &m.segments, &m.offsets(), |k, _| m.tap(k)))
}

/// Gradients of a scalar memory block.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarGrads<T> {
    /// `Δa_i`, `i = 0..=N1`.
    pub lookback: Vec<T>,
    /// `Δc_j`, `j = 1..=N2`.
    pub lookahead: Vec<T>,
    /// Error signal with respect to the encoded activations.
    pub input: Matrix<T>,
}

/// Backward pass through `H~ = H̄ · M̄` via the full-matrix route:
/// `ΔM̄ = H̄ᵀ · e_H~`, tap gradients as the sum of `ΔM̄` along each tied
/// diagonal inside each block, and `e_H̄ = e_H~ · M̄ᵀ`.
///
/// Memory use is quadratic in the packed length; [`scalar_backward_walk`]
/// computes the same quantities along the band only.
pub fn scalar_backward<T: Real>(h: &Matrix<T>, e: &Matrix<T>, m: &BandMatrix<T>) -> Result<ScalarGrads<T>> {
    check_cols("scalar_backward", h, m)?;
    if e.shape() != h.shape() {
        return Err(Error::shape("scalar_backward", h.shape(), e.shape()));
    }
    let full = matmul_tn(h, e)?;
    let mut lookback = vec![T::zero(); m.lookback.len()];
    let mut lookahead = vec![T::zero(); m.lookahead.len()];
    for (start, len) in segment_spans(&m.segments) {
        for i in 0..len {
            for (k, g) in lookback.iter_mut().enumerate() {
                if i + k < len {
                    *g += full.get(start + i, start + i + k);
                }
            }
            for (j, g) in lookahead.iter_mut().enumerate() {
                if i > j {
                    *g += full.get(start + i, start + i - (j + 1));
                }
            }
        }
    }
    let input = matmul_nt(e, &m.to_dense())?;
    Ok(ScalarGrads { lookback, lookahead, input })
}

/// Same result as [`scalar_backward`] computed along the band only.
pub fn scalar_backward_walk<T: Real>(h: &Matrix<T>, e: &Matrix<T>, m: &BandMatrix<T>) -> Result<ScalarGrads<T>> {
    check_cols("scalar_backward_walk", h, m)?;
    if e.shape() != h.shape() {
        return Err(Error::shape("scalar_backward_walk", h.shape(), e.shape()));
    }
    check_segments(&m.segments, h.cols())?;
    let offsets = m.offsets();
    let per_unit = fir::tap_grads(Exec::Auto, h, e, &m.segments, &offsets);
    let sums = per_unit.row_sums();
    let (lookback, lookahead) = sums.split_at(m.lookback.len());
    let input = fir::input_grad(Exec::Auto, e, &m.segments, &offsets, |k, _| m.tap(k));
    Ok(ScalarGrads { lookback: lookback.to_vec(), lookahead: lookahead.to_vec(), input })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::rng_uniform;

    fn scalar(a: &[f64], c: &[f64]) -> (MemoryConfig, MemoryParams<f64>) {
        (
            MemoryConfig::scalar(a.len() - 1, c.len(), 1),
            MemoryParams::Scalar { lookback: a.to_vec(), lookahead: c.to_vec() },
        )
    }

    #[test]
    fn unidirectional_band_is_upper_band() {
        let (cfg, p) = scalar(&[2.0, 3.0], &[]);
        let m = build_band_matrix(&cfg, &p, 3).unwrap().to_dense();
        let want = Matrix::from_rows(&[vec![2.0, 3.0, 0.0], vec![0.0, 2.0, 3.0], vec![0.0, 0.0, 2.0]]);
        assert_eq!(m, want);
    }

    #[test]
    fn bidirectional_band_has_lookahead_below_diagonal() {
        let (cfg, p) = scalar(&[2.0, 3.0], &[5.0]);
        let m = build_band_matrix(&cfg, &p, 3).unwrap().to_dense();
        let want = Matrix::from_rows(&[vec![2.0, 3.0, 0.0], vec![5.0, 2.0, 3.0], vec![0.0, 5.0, 2.0]]);
        assert_eq!(m, want);
    }

    #[test]
    fn single_tap_band_is_identity() {
        let (cfg, p) = scalar(&[1.0], &[]);
        for t in 1..6 {
            let m = build_band_matrix(&cfg, &p, t).unwrap().to_dense();
            assert_eq!(m, Matrix::identity(t));
        }
    }

    #[test]
    fn short_sequence_truncates_band() {
        let (cfg, p) = scalar(&[1.0, 2.0, 3.0, 4.0], &[]);
        let m = build_band_matrix(&cfg, &p, 2).unwrap().to_dense();
        assert_eq!(m, Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]));
    }

    #[test]
    fn rejects_empty_sequence_and_wrong_kind() {
        let (cfg, p) = scalar(&[1.0], &[]);
        assert!(matches!(build_band_matrix(&cfg, &p, 0), Err(Error::Input(_))));
        let vcfg = MemoryConfig::vector(0, 0, 1);
        assert!(build_band_matrix(&vcfg, &p, 3).is_err());
    }

    #[test]
    fn batch_band_is_block_diagonal() {
        let (cfg, p) = scalar(&[1.0], &[]);
        let b = build_band_matrix(&cfg, &p, 2).unwrap();
        let one = build_batch_band(std::slice::from_ref(&b)).unwrap();
        assert_eq!(one, b);
        let two = build_batch_band(&[b.clone(), b]).unwrap();
        assert_eq!(two.to_dense(), Matrix::identity(4));
        assert!(build_batch_band::<f64>(&[]).is_err());

        let (cfg, p) = scalar(&[1.0, 2.0], &[3.0]);
        let blocks: Vec<_> = [3, 2].iter().map(|&t| build_band_matrix(&cfg, &p, t).unwrap()).collect();
        let m = build_batch_band(&blocks).unwrap();
        assert_eq!(m.get(2, 3), 0.0);
        assert_eq!(m.get(3, 2), 0.0);
        assert_eq!(m.get(3, 4), 2.0);
        assert_eq!(m.to_dense().get(4, 3), 3.0);
    }

    #[test]
    fn encode_with_identity_and_single_frame() {
        let h = rng_uniform::<f64>(1, -1.0, 1.0, 3, 4).unwrap();
        let (cfg, p) = scalar(&[1.0], &[]);
        let m = build_band_matrix(&cfg, &p, 4).unwrap();
        assert_eq!(encode_banded(&h, &m).unwrap(), h);

        let h1 = rng_uniform::<f64>(2, -1.0, 1.0, 3, 1).unwrap();
        let (cfg, p) = scalar(&[0.7, 0.3], &[0.2]);
        let m = build_band_matrix(&cfg, &p, 1).unwrap();
        let got = encode_banded(&h1, &m).unwrap();
        assert!(got.max_abs_diff(&h1.scale(0.7)) < 1e-15);
    }

    #[test]
    fn walk_matches_dense_product() {
        let (cfg, p) = scalar(&[0.5, -0.2, 0.1], &[0.3, 0.05]);
        let blocks: Vec<_> = [4, 1, 6].iter().map(|&t| build_band_matrix(&cfg, &p, t).unwrap()).collect();
        let m = build_batch_band(&blocks).unwrap();
        let h = rng_uniform::<f64>(3, -1.0, 1.0, 5, 11).unwrap();
        let dense = encode_banded(&h, &m).unwrap();
        let walk = encode_band_walk(&h, &m).unwrap();
        assert!(dense.max_abs_diff(&walk) <= 1e-12);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let (cfg, p) = scalar(&[1.0], &[]);
        let m = build_band_matrix(&cfg, &p, 3).unwrap();
        let h = Matrix::<f64>::zeros(2, 4);
        assert!(matches!(encode_banded(&h, &m), Err(Error::Shape { .. })));
        assert!(matches!(encode_band_walk(&h, &m), Err(Error::Shape { .. })));
    }

    #[test]
    fn zero_error_gives_zero_gradients() {
        let (cfg, p) = scalar(&[0.5, 0.1], &[0.2]);
        let m = build_band_matrix(&cfg, &p, 5).unwrap();
        let h = rng_uniform::<f64>(4, -1.0, 1.0, 3, 5).unwrap();
        let g = scalar_backward(&h, &Matrix::zeros(3, 5), &m).unwrap();
        assert!(g.lookback.iter().chain(&g.lookahead).all(|&x| x == 0.0));
        assert_eq!(g.input, Matrix::zeros(3, 5));
    }

    #[test]
    fn single_tap_backward_reduces_to_inner_products() {
        let (cfg, p) = scalar(&[0.8], &[]);
        let m = build_band_matrix(&cfg, &p, 6).unwrap();
        let h = rng_uniform::<f64>(5, -1.0, 1.0, 4, 6).unwrap();
        let e = rng_uniform::<f64>(6, -1.0, 1.0, 4, 6).unwrap();
        let g = scalar_backward(&h, &e, &m).unwrap();
        let dot: f64 = h.data().iter().zip(e.data()).map(|(a, b)| a * b).sum();
        assert!((g.lookback[0] - dot).abs() < 1e-12);
        assert!(g.input.max_abs_diff(&e.scale(0.8)) < 1e-15);
    }

    #[test]
    fn walk_backward_matches_full_matrix_route() {
        let (cfg, p) = scalar(&[0.5, -0.2, 0.1], &[0.3, 0.05]);
        let blocks: Vec<_> = [2, 5, 3].iter().map(|&t| build_band_matrix(&cfg, &p, t).unwrap()).collect();
        let m = build_batch_band(&blocks).unwrap();
        let h = rng_uniform::<f64>(7, -1.0, 1.0, 3, 10).unwrap();
        let e = rng_uniform::<f64>(8, -1.0, 1.0, 3, 10).unwrap();
        let full = scalar_backward(&h, &e, &m).unwrap();
        let walk = scalar_backward_walk(&h, &e, &m).unwrap();
        for (a, b) in full.lookback.iter().zip(&walk.lookback) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in full.lookahead.iter().zip(&walk.lookahead) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(full.input.max_abs_diff(&walk.input) < 1e-12);
    }
}
