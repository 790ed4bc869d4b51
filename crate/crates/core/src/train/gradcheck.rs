use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::PackedBatch;
use crate::error::Result;
use crate::math::{softmax_cross_entropy, sub_seed};
use crate::network::{forward, loss_and_gradients, Gradients, Model};
use crate::parallel::{map_range, Exec};

/// `|a - n| / max(|a|, |n|)`, taken as 0 when both are exactly 0.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Central-difference check of `analytic` against `f` around `x`; returns the
/// relative error of every component.
pub fn check_gradient<F>(f: F, x: &[f64], analytic: &[f64], epsilon: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + epsilon;
            let up = f(&probe);
            probe[i] = x[i] - epsilon;
            let down = f(&probe);
            probe[i] = x[i];
            relative_error(analytic[i], (up - down) / (2.0 * epsilon))
        })
        .collect()
}

/// [`relative_error`] with the denominator held at or above `floor`, so that
/// components smaller than the floor are judged on absolute error.
pub fn floored_relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(floor);
    if scale == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    /// Smallest denominator of the relative error. Central differences carry
    /// an absolute rounding error near `1e-16 * |loss| / epsilon`, about
    /// `1e-11` here, which swamps a relative comparison of components much
    /// smaller than `1e-5`.
    pub floor: f64,
    /// Tensors larger than this are checked on a seeded random subset of this
    /// many components.
    pub max_components: usize,
    pub seed: u64,
    pub exec: Exec,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { epsilon: 1e-5, floor: 1e-4, max_components: 2000, seed: 0, exec: Exec::Auto }
    }
}

/// Result for one tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub total: usize,
    pub max_rel_err: f64,
    /// Component with the largest error, with its analytic and numeric values.
    pub worst: (usize, f64, f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_err).fold(0.0, f64::max)
    }

    pub fn failures(&self, threshold: f64) -> Vec<&TensorCheck> {
        self.tensors.iter().filter(|t| t.max_rel_err.is_nan() || t.max_rel_err > threshold).collect()
    }

    pub fn passes(&self, threshold: f64) -> bool {
        self.failures(threshold).is_empty()
    }
}

/// Compares backpropagated gradients of the mean cross-entropy on `batch`
/// with central differences, tensor by tensor.
pub fn grad_check(model: &Model<f64>, batch: &PackedBatch<f64>, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let (_, grads) = loss_and_gradients(model, batch)?;
    grad_check_against(model, batch, &grads, opts)
}

/// Like [`grad_check`] but with the analytic gradients supplied by the
/// caller, so a harness can check gradients from any source.
pub fn grad_check_against(
    model: &Model<f64>,
    batch: &PackedBatch<f64>,
    grads: &Gradients<f64>,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let loss = |m: &Model<f64>| -> Result<f64> {
        let (z, _) = forward(m, batch)?;
        Ok(softmax_cross_entropy(&z, &batch.targets)?.0)
    };
    let analytic = grads.tensors();
    let mut report = Vec::with_capacity(analytic.len());
    for (ti, g) in analytic.iter().enumerate() {
        let total = g.data.len();
        let picks: Vec<usize> = if total > opts.max_components {
            let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(opts.seed, &[ti as u64]));
            let mut v = sample(&mut rng, total, opts.max_components).into_vec();
            v.sort_unstable();
            v
        } else {
            (0..total).collect()
        };
        let numeric = map_range(opts.exec, picks.len(), usize::MAX, |i| -> Result<f64> {
            let k = picks[i];
            let mut probe = model.clone();
            let orig = probe.tensors()[ti].data[k];
            probe.tensors_mut()[ti].data[k] = orig + opts.epsilon;
            let up = loss(&probe)?;
            probe.tensors_mut()[ti].data[k] = orig - opts.epsilon;
            let down = loss(&probe)?;
            Ok((up - down) / (2.0 * opts.epsilon))
        });
        let mut worst = (0, 0.0, 0.0);
        let mut max_rel_err = 0.0f64;
        for (&k, n) in picks.iter().zip(numeric) {
            let n = n?;
            let a = g.data[k];
            let e = floored_relative_error(a, n, opts.floor);
            if e > max_rel_err || e.is_nan() {
                max_rel_err = e;
                worst = (k, a, n);
            }
        }
        report.push(TensorCheck { name: g.name.clone(), checked: picks.len(), total, max_rel_err, worst });
    }
    Ok(GradCheckReport { tensors: report })
}
