use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::time::Instant;

use crate::data::{FrameInput, PackedBatch};
use crate::error::{Error, Result};
use crate::math::{rng_uniform, sub_seed, Matrix};
use crate::memory::{encode, encode_naive, BandKernel, MemoryConfig, MemoryParams};
use crate::network::{loss_and_gradients, InitOptions, MemoryDefaults, Model, ModelSpec};
use crate::train::{sgd_step, Momentum, TrainConfig};

use super::BenchArgs;

const FEATURES: usize = 64;
const CLASSES: usize = 50;
/// Frames per packed batch, so the dense band stays a fixed size across T.
const BATCH_FRAMES: usize = 1024;

type Enc<'a> = &'a dyn Fn(&Matrix<f64>, &[usize]) -> Result<Matrix<f64>>;

/// One timed measurement.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub variant: &'static str,
    pub t: usize,
    pub seconds: f64,
    pub loss: f64,
    pub params: usize,
}

fn best_of<R>(repeats: usize, mut f: impl FnMut() -> Result<R>) -> Result<(f64, R)> {
    let mut best = f64::INFINITY;
    let mut last = None;
    for _ in 0..repeats.max(1) {
        let t0 = Instant::now();
        let r = f()?;
        best = best.min(t0.elapsed().as_secs_f64());
        last = Some(r);
    }
    Ok((best, last.expect("at least one repeat")))
}

fn half_mean_square(m: &Matrix<f64>) -> f64 {
    0.5 * m.data().iter().map(|x| x * x).sum::<f64>() / m.cols().max(1) as f64
}

/// Packed batches of sequences of length `t` covering about `frames` frames.
fn batches(t: usize, frames: usize, seed: u64) -> Result<Vec<PackedBatch<f64>>> {
    let seqs = (frames / t).max(1);
    let per_batch = (BATCH_FRAMES / t).max(1);
    let mut out = Vec::new();
    let mut done = 0;
    while done < seqs {
        let k = per_batch.min(seqs - done);
        let n = k * t;
        let x = rng_uniform(sub_seed(seed, &[done as u64, 0]), -1.0, 1.0, FEATURES, n)?;
        let y = rng_uniform(sub_seed(seed, &[done as u64, 1]), 0.0, CLASSES as f64, 1, n)?;
        out.push(PackedBatch {
            lengths: vec![t; k],
            input: FrameInput::Features(x),
            targets: y.data().iter().map(|v| (*v as usize).min(CLASSES - 1)).collect(),
        });
        done += k;
    }
    Ok(out)
}

fn epoch(model: &Model<f64>, data: &[PackedBatch<f64>]) -> Result<f64> {
    let mut m = model.clone();
    let cfg = TrainConfig { initial_lr: 0.05, ..TrainConfig::default() };
    let mut v = Momentum::zeros(&m);
    let mut total = 0.0;
    for b in data {
        let (loss, g) = loss_and_gradients(&m, b)?;
        sgd_step(&mut m, &g, &mut v, cfg.initial_lr, &cfg)?;
        total += loss * b.frames() as f64;
    }
    Ok(total / data.iter().map(PackedBatch::frames).sum::<usize>() as f64)
}

/// Times every variant at every length.
pub fn measure(a: &BenchArgs) -> Result<Vec<BenchRow>> {
    if a.lengths.is_empty() || a.lengths.contains(&0) || a.hidden == 0 {
        return Err(Error::Usage("--lengths must be positive and --hidden at least 1".into()));
    }
    let seed = a.common.seed;
    let h = a.hidden;
    let fsmn_spec = ModelSpec::parse(
        &format!("{FEATURES}-{h}(M:vector,{},0)-{h}-{CLASSES}", a.order),
        None,
        &MemoryDefaults::default(),
    )?;
    let rnn_spec = ModelSpec::parse(&format!("{FEATURES}-{h}-{h}(R)-{CLASSES}"), None, &MemoryDefaults::default())?;
    let init = InitOptions { seed, tap_jitter: 0.1 };
    let fsmn = Model::<f64>::with_init(fsmn_spec, init)?;
    let rnn = Model::<f64>::with_init(rnn_spec, init)?;
    let cfg = MemoryConfig::scalar(a.order, 0, h);
    let taps = MemoryParams::<f64>::init(&cfg, seed, 0.5)?;
    let tap_params = cfg.tap_count();

    let mut rows = Vec::new();
    for &t in &a.lengths {
        let data = batches(t, a.frames, sub_seed(seed, &[t as u64]))?;
        let acts: Vec<Matrix<f64>> = data
            .iter()
            .enumerate()
            .map(|(i, b)| rng_uniform(sub_seed(seed, &[t as u64, i as u64, 2]), -1.0, 1.0, h, b.frames()))
            .collect::<Result<_>>()?;
        let encode_loss = |f: Enc| -> Result<f64> {
            let mut s = 0.0;
            for (x, b) in acts.iter().zip(&data) {
                s += half_mean_square(&f(x, &b.lengths)?) * b.frames() as f64;
            }
            Ok(s / acts.iter().map(Matrix::cols).sum::<usize>() as f64)
        };
        let naive = |x: &Matrix<f64>, seg: &[usize]| encode_naive(x, &cfg, &taps, seg);
        let dense = |x: &Matrix<f64>, seg: &[usize]| Ok(encode(x, &cfg, &taps, seg, BandKernel::Dense)?.0);
        let walk = |x: &Matrix<f64>, seg: &[usize]| Ok(encode(x, &cfg, &taps, seg, BandKernel::Walk)?.0);
        let encoders: [(&'static str, Enc); 3] =
            [("naive-encode", &naive), ("dense-encode", &dense), ("walk-encode", &walk)];
        for (variant, f) in encoders {
            let (seconds, loss) = best_of(a.repeats, || encode_loss(f))?;
            rows.push(BenchRow { variant, t, seconds, loss, params: tap_params });
        }
        for (variant, model) in [("fsmn-epoch", &fsmn), ("rnn-epoch", &rnn)] {
            let (seconds, loss) = best_of(a.repeats, || epoch(model, &data))?;
            rows.push(BenchRow { variant, t, seconds, loss, params: model.param_count() });
        }
    }
    Ok(rows)
}

pub fn to_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from("variant,T,seconds,loss,params\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{:.6},{},{}", r.variant, r.t, r.seconds, r.loss, r.params);
    }
    s
}

pub(super) fn run(a: &BenchArgs, out: &mut dyn Write) -> Result<i32> {
    let csv = to_csv(&measure(a)?);
    match &a.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join("bench.csv"), csv)?;
        }
        None => out.write_all(csv.as_bytes())?,
    }
    Ok(0)
}
