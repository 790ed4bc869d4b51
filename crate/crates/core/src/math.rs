//! Dense linear algebra, activations and the cross-entropy loss.
//!
//! [`Matrix`] is row-major: element `(r, c)` lives at `data[r * cols + c]`.
//! Sequence data is laid out feature-by-time, so column `t` of a `D x T`
//! matrix holds the activation vector of frame `t`.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::parallel::{self, Exec};
use crate::real::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape_msg(
                "Matrix::from_vec",
                format!("{rows}x{cols} needs {} values, got {}", rows * cols, data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows; panics on ragged input.
    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        Self { rows: r, cols: c, data: rows.concat() }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { T::one() } else { T::zero() })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn col(&self, c: usize) -> Vec<T> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn set_col(&mut self, c: usize, values: &[T]) {
        for (r, &v) in values.iter().enumerate() {
            self.set(r, c, v);
        }
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|x| x * s)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        let mut out = self.clone();
        out.add_assign(other)?;
        Ok(out)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape("add", self.shape(), other.shape()));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Adds `bias[r]` to every element of row `r`.
    pub fn add_row_bias(&mut self, bias: &[T]) -> Result<()> {
        if bias.len() != self.rows {
            return Err(Error::shape("add_row_bias", self.shape(), (bias.len(), 1)));
        }
        for (r, &b) in bias.iter().enumerate() {
            for x in self.row_mut(r) {
                *x += b;
            }
        }
        Ok(())
    }

    /// Sum of each row, i.e. the bias gradient of a column-wise affine map.
    pub fn row_sums(&self) -> Vec<T> {
        (0..self.rows).map(|r| self.row(r).iter().copied().sum()).collect()
    }

    /// Columns `start..start + len` as a new matrix.
    pub fn col_range(&self, start: usize, len: usize) -> Self {
        let mut out = Self::zeros(self.rows, len);
        for r in 0..self.rows {
            out.row_mut(r).copy_from_slice(&self.row(r)[start..start + len]);
        }
        out
    }

    /// Horizontal concatenation. All parts must share a row count.
    pub fn hcat(parts: &[Self]) -> Result<Self> {
        let rows = parts.first().map_or(0, |m| m.rows);
        if let Some(bad) = parts.iter().find(|m| m.rows != rows) {
            return Err(Error::shape("hcat", (rows, 0), bad.shape()));
        }
        let cols = parts.iter().map(|m| m.cols).sum();
        let mut out = Self::zeros(rows, cols);
        for r in 0..rows {
            let mut at = 0;
            for m in parts {
                out.row_mut(r)[at..at + m.cols].copy_from_slice(m.row(r));
                at += m.cols;
            }
        }
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff shape");
        self.data.iter().zip(&other.data).map(|(&a, &b)| (a - b).abs()).fold(T::zero(), T::max)
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().map(|x| x.abs()).fold(T::zero(), T::max)
    }
}

/// `C = A · B`.
pub fn matmul<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    matmul_with(Exec::Auto, a, b)
}

/// `C = A · B` with an explicit execution policy.
///
/// Each output element accumulates `A[i][k]·B[k][j]` in ascending `k`, so the
/// sequential and parallel paths agree bitwise.
pub fn matmul_with<T: Real>(exec: Exec, a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols != b.rows {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    let (n, m) = (a.rows, b.cols);
    let mut out = Matrix::zeros(n, m);
    let work = n * m * a.cols;
    parallel::for_each_row(exec, &mut out.data, m, work, |i, row| {
        for (k, &aik) in a.row(i).iter().enumerate() {
            for (c, &bkj) in row.iter_mut().zip(b.row(k)) {
                *c += aik * bkj;
            }
        }
    });
    Ok(out)
}

/// `C = Aᵀ · B` without materialising the transpose.
pub fn matmul_tn<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.rows != b.rows {
        return Err(Error::shape("matmul_tn", (a.cols, a.rows), b.shape()));
    }
    let (n, m) = (a.cols, b.cols);
    let mut out = Matrix::zeros(n, m);
    let work = n * m * a.rows;
    parallel::for_each_row(Exec::Auto, &mut out.data, m, work, |i, row| {
        for k in 0..a.rows {
            let aki = a.get(k, i);
            for (c, &bkj) in row.iter_mut().zip(b.row(k)) {
                *c += aki * bkj;
            }
        }
    });
    Ok(out)
}

/// `C = A · Bᵀ`; each element is a dot product of two contiguous rows.
pub fn matmul_nt<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols != b.cols {
        return Err(Error::shape("matmul_nt", a.shape(), (b.cols, b.rows)));
    }
    let (n, m) = (a.rows, b.rows);
    let mut out = Matrix::zeros(n, m);
    let work = n * m * a.cols;
    parallel::for_each_row(Exec::Auto, &mut out.data, m, work, |i, row| {
        let ai = a.row(i);
        for (j, c) in row.iter_mut().enumerate() {
            let mut acc = T::zero();
            for (&x, &y) in ai.iter().zip(b.row(j)) {
                acc += x * y;
            }
            *c = acc;
        }
    });
    Ok(out)
}

/// Element-wise nonlinearity applied by hidden layers.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
    Sigmoid,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Relu => relu_scalar(x),
            Activation::Sigmoid => sigmoid(x),
            Activation::Linear => x,
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    #[inline]
    pub fn derivative<T: Real>(self, x: T, y: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Sigmoid => y * (T::one() - y),
            Activation::Linear => T::one(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Linear => "linear",
        }
    }
}

#[inline]
fn relu_scalar<T: Real>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        T::zero()
    }
}

/// `max(0, x)` element-wise.
pub fn relu<T: Real>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| relu_scalar(v)).collect()
}

/// Passes `e_out` where `x > 0`; the subgradient at exactly zero is 0.
pub fn relu_backward<T: Real>(x: &[T], e_out: &[T]) -> Result<Vec<T>> {
    if x.len() != e_out.len() {
        return Err(Error::shape("relu_backward", (x.len(), 1), (e_out.len(), 1)));
    }
    Ok(x.iter().zip(e_out).map(|(&xi, &ei)| if xi > T::zero() { ei } else { T::zero() }).collect())
}

/// Logistic function `1 / (1 + e^{-x})`.
#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Column-wise log-sum-exp split as `(max, ln_1p(Σ_{others} e^{z-max}))`.
/// Keeping the two parts apart lets `lse - z` avoid cancellation when `z` is
/// the dominant logit.
fn column_lse<T: Real>(logits: &Matrix<T>) -> (Vec<T>, Vec<T>) {
    let (v, t) = logits.shape();
    let mut max = vec![T::neg_infinity(); t];
    let mut arg = vec![0usize; t];
    for r in 0..v {
        for (c, &z) in logits.row(r).iter().enumerate() {
            if z > max[c] {
                max[c] = z;
                arg[c] = r;
            }
        }
    }
    let mut rest = vec![T::zero(); t];
    for r in 0..v {
        for (c, &z) in logits.row(r).iter().enumerate() {
            if r != arg[c] {
                rest[c] += (z - max[c]).exp();
            }
        }
    }
    let log_rest = rest.iter().map(|s| s.ln_1p()).collect();
    (max, log_rest)
}

#[inline]
fn nll<T: Real>(max: T, log_rest: T, z: T) -> T {
    (max - z) + log_rest
}

fn check_targets(v: usize, targets: &[usize], cols: usize) -> Result<()> {
    if targets.len() != cols {
        return Err(Error::shape("softmax_cross_entropy", (v, cols), (targets.len(), 1)));
    }
    if let Some((t, &bad)) = targets.iter().enumerate().find(|(_, &id)| id >= v) {
        return Err(Error::input(format!("target {bad} at column {t} is out of range for {v} classes")));
    }
    Ok(())
}

/// Column-wise softmax.
pub fn softmax_columns<T: Real>(logits: &Matrix<T>) -> Matrix<T> {
    let (max, log_rest) = column_lse(logits);
    let mut out = logits.clone();
    for r in 0..out.rows() {
        for (c, x) in out.row_mut(r).iter_mut().enumerate() {
            *x = (-nll(max[c], log_rest[c], *x)).exp();
        }
    }
    out
}

/// Mean over columns of `-log softmax(logits[:, t])[targets[t]]`, and its
/// gradient `(softmax - onehot) / T`.
pub fn softmax_cross_entropy<T: Real>(logits: &Matrix<T>, targets: &[usize]) -> Result<(T, Matrix<T>)> {
    let (v, t) = logits.shape();
    check_targets(v, targets, t)?;
    if t == 0 {
        return Ok((T::zero(), Matrix::zeros(v, 0)));
    }
    let (max, log_rest) = column_lse(logits);
    let inv_t = T::one() / T::lit(t as f64);
    let mut total = 0.0f64;
    for (c, &tgt) in targets.iter().enumerate() {
        total += nll(max[c], log_rest[c], logits.get(tgt, c)).to_f64();
    }
    let mut grad = logits.clone();
    for r in 0..v {
        for (c, g) in grad.row_mut(r).iter_mut().enumerate() {
            *g = (-nll(max[c], log_rest[c], *g)).exp() * inv_t;
        }
    }
    for (c, &tgt) in targets.iter().enumerate() {
        let g = grad.get(tgt, c);
        grad.set(tgt, c, g - inv_t);
    }
    Ok((T::lit(total / t as f64), grad))
}

/// Per-column negative log-likelihood in double precision.
pub fn column_nll<T: Real>(logits: &Matrix<T>, targets: &[usize]) -> Result<Vec<f64>> {
    let (v, t) = logits.shape();
    check_targets(v, targets, t)?;
    let (max, log_rest) = column_lse(logits);
    Ok(targets.iter().enumerate().map(|(c, &tgt)| nll(max[c], log_rest[c], logits.get(tgt, c)).to_f64()).collect())
}

/// Deterministic uniform draws in `[lo, hi)`, filled in row-major order.
pub fn rng_uniform<T: Real>(seed: u64, lo: T, hi: T, rows: usize, cols: usize) -> Result<Matrix<T>> {
    if lo.partial_cmp(&hi) != Some(std::cmp::Ordering::Less) {
        return Err(Error::input(format!("rng_uniform needs lo < hi, got [{lo}, {hi})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Uniform::new(lo, hi);
    let data = (0..rows * cols).map(|_| dist.sample(&mut rng)).collect();
    Matrix::from_vec(rows, cols, data)
}

/// Derives an independent stream seed from a base seed and a path of indices.
pub fn sub_seed(seed: u64, path: &[u64]) -> u64 {
    // splitmix64 over the path
    let mut x = seed ^ 0x9E37_79B9_7F4A_7C15;
    for &p in path {
        x = x.wrapping_add(p.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut z = x;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        x = z ^ (z >> 31);
    }
    x
}
