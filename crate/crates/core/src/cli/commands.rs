use std::fs;
use std::io::Write;
use std::path::Path;

use crate::checkpoint::{peek_precision, Checkpoint};
use crate::data::{read_corpus, PackedBatch, Split, TokenizeOptions, Vocab};
use crate::error::{Error, Result};
use crate::math::rng_uniform;
use crate::memory::{MemoryKind, MemoryParams};
use crate::network::{loss_and_gradients, InitOptions, MemoryDefaults, Model, ModelSpec, ParamRole};
use crate::parallel::{current_threads, init_threads, Exec};
use crate::real::Real;
use crate::train::{
    grad_check_against, perplexity, train_loop, EpochRecord, GradCheckOptions, History, StopReason, TrainConfig,
    TrainState,
};

use super::{bench, Command, CommonArgs, DumpArgs, EvalArgs, GradcheckArgs, Precision, TrainArgs};

pub(super) fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    match cmd {
        Command::Train(a) => {
            threads(&a.common, err)?;
            match a.precision {
                Precision::F32 => train::<f32>(&a, out, err),
                Precision::F64 => train::<f64>(&a, out, err),
            }
        }
        Command::Eval(a) => {
            threads(&a.common, err)?;
            eval(&a, out)
        }
        Command::Gradcheck(a) => {
            threads(&a.common, err)?;
            gradcheck(&a, out, err)
        }
        Command::DumpFilters(a) => {
            threads(&a.common, err)?;
            dump_filters(&a, out)
        }
        Command::Bench(a) => {
            threads(&a.common, err)?;
            bench::run(&a, out)
        }
    }
}

fn threads(common: &CommonArgs, err: &mut dyn Write) -> Result<()> {
    if common.threads == 0 {
        return Err(Error::Usage("--threads must be at least 1".into()));
    }
    if !init_threads(common.threads) && current_threads() != common.threads {
        writeln!(err, "warning: running with {} worker threads instead of {}", current_threads(), common.threads)?;
    }
    Ok(())
}

fn required<'a, T>(v: &'a Option<T>, flag: &str) -> Result<&'a T> {
    v.as_ref().ok_or_else(|| Error::Usage(format!("missing required flag --{flag}")))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))
}

fn train_config(a: &TrainArgs) -> TrainConfig {
    TrainConfig {
        initial_lr: a.lr,
        plateau_threshold: a.plateau,
        halving_epochs: a.halving_epochs,
        compare: a.compare,
        momentum: a.momentum,
        weight_decay: a.weight_decay,
        decay_taps: a.decay_taps,
        decay_biases: false,
        clip_norm: a.clip_norm,
        batch_size: a.batch_size,
        max_epochs: a.epochs,
        seed: a.common.seed,
    }
}

fn train<T: Real>(a: &TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let cfg = train_config(a);
    cfg.validate()?;
    let train_path = required(&a.train, "train")?;
    let valid_path = required(&a.valid, "valid")?;
    let opts = TokenizeOptions { eos: a.eos };
    let vocab = Vocab::build(&read_text(train_path)?, a.vocab_size, opts)?;
    let defaults = MemoryDefaults {
        kind: a.memory_kind,
        lookback: a.lookback,
        lookahead: a.lookahead,
        attention_dim: a.attention_dim,
    };
    let spec = ModelSpec::parse(&a.arch, Some(vocab.len()), &defaults)?;
    let train = read_corpus(train_path, &vocab, opts, Split::Train)?;
    let valid = read_corpus(valid_path, &vocab, opts, Split::Valid)?;
    let test = a.test.as_ref().map(|p| read_corpus(p, &vocab, opts, Split::Test)).transpose()?;

    fs::create_dir_all(&a.out)
        .map_err(|e| Error::Input(format!("cannot create output directory {}: {e}", a.out.display())))?;
    vocab.save(&a.out.join("vocab.txt"))?;
    let model = Model::<T>::with_init(spec, InitOptions { seed: a.common.seed, tap_jitter: a.tap_jitter })?;
    writeln!(
        err,
        "model {} ({} parameters, {}), vocab {}, {} train / {} valid tokens",
        model.spec(),
        model.param_count(),
        T::NAME,
        vocab.len(),
        train.tokens(),
        valid.tokens()
    )?;

    let history_path = a.out.join("history.csv");
    fs::write(&history_path, History::default().to_csv())?;
    let mut history = History::default();
    let mut hook = |m: &Model<T>, s: &TrainState<T>, r: &EpochRecord| -> Result<()> {
        history.records.push(*r);
        let ck = Checkpoint { model: m.clone(), vocab: Some(vocab.clone()), eos: a.eos, state: Some(s.clone()) };
        ck.save(&a.out.join(format!("epoch-{:03}.ckpt", r.epoch)))?;
        fs::write(&history_path, history.to_csv())?;
        writeln!(
            err,
            "epoch {:>3}  lr {:<10} train loss {:.4}  valid ppl {:.2}",
            r.epoch, r.lr, r.train_loss, r.valid_ppl
        )?;
        Ok(())
    };
    let outcome = train_loop(model, &train, &valid, &cfg, None, &mut hook)?;
    Checkpoint {
        model: outcome.model.clone(),
        vocab: Some(vocab.clone()),
        eos: a.eos,
        state: Some(outcome.state.clone()),
    }
    .save(&a.out.join("final.ckpt"))?;
    if let StopReason::Diverged(msg) = &outcome.stop {
        writeln!(err, "error: training diverged: {msg}; final.ckpt holds the last good epoch")?;
        return Ok(1);
    }
    if let Some(test) = test {
        let ppl = perplexity(&outcome.model, &test, cfg.batch_size)?;
        writeln!(out, "test perplexity {ppl:.2}")?;
    }
    Ok(0)
}

fn eval(a: &EvalArgs, out: &mut dyn Write) -> Result<i32> {
    let path = required(&a.checkpoint, "checkpoint")?;
    let corpus = required(&a.corpus, "corpus")?;
    let ppl = match peek_precision(path)?.as_str() {
        "f32" => eval_with::<f32>(path, corpus, a)?,
        "f64" => eval_with::<f64>(path, corpus, a)?,
        p => return Err(Error::Checkpoint(format!("unsupported precision `{p}`"))),
    };
    writeln!(out, "perplexity {ppl:.2}")?;
    Ok(0)
}

fn eval_with<T: Real>(path: &Path, corpus: &Path, a: &EvalArgs) -> Result<f64> {
    let ck = Checkpoint::<T>::load(path)?;
    let vocab = ck.vocab.as_ref().ok_or_else(|| Error::Input(format!("{} carries no vocabulary", path.display())))?;
    if let Some(vp) = &a.vocab {
        let given = Vocab::load(vp)?;
        if &given != vocab {
            return Err(Error::Input(format!(
                "vocabulary mismatch: {} has {} entries, the checkpoint {}",
                vp.display(),
                given.len(),
                vocab.len()
            )));
        }
    }
    if ck.model.spec().vocab() != vocab.len() {
        return Err(Error::Input(format!(
            "vocabulary mismatch: checkpoint vocabulary has {} entries but the model outputs {}",
            vocab.len(),
            ck.model.spec().vocab()
        )));
    }
    let c = read_corpus(corpus, vocab, TokenizeOptions { eos: ck.eos }, Split::Test)?;
    perplexity(&ck.model, &c, a.batch_size)
}

/// A named model and the batch it is checked on.
pub type Variant = (&'static str, Model<f64>, PackedBatch<f64>);

/// Small double-precision models of every variant with two memory (or
/// recurrent) layers, each with a two-sequence batch.
pub fn gradcheck_variants(seed: u64) -> Result<Vec<Variant>> {
    const VOCAB: usize = 6;
    // sigmoid units keep every check point away from ReLU kinks
    let archs = [
        ("sfsmn-uni", "[2*3]-5@sigmoid(M:scalar,3,0)-6@sigmoid(M:scalar,3,0)-5@sigmoid-V"),
        ("sfsmn-bi", "[2*3]-5@sigmoid(M:scalar,2,2)-6@sigmoid(M:scalar,2,2)-5@sigmoid-V"),
        ("vfsmn-uni", "[2*3]-5@sigmoid(M:vector,3,0)-6@sigmoid(M:vector,3,0)-5@sigmoid-V"),
        ("vfsmn-bi", "[2*3]-5@sigmoid(M:vector,2,2)-6@sigmoid(M:vector,2,2)-5@sigmoid-V"),
        ("attention", "[2*3]-5@sigmoid(M:attention,2,1,3,sigmoid)-6@sigmoid(M:attention,2,1,3,sigmoid)-5@sigmoid-V"),
        ("rnn", "[2*3]-5(R)-6(R)-V"),
    ];
    let lengths = [5usize, 3];
    let n: usize = lengths.iter().sum();
    let draw: crate::math::Matrix<f64> = rng_uniform(seed ^ 0x6772_6164, 0.0, VOCAB as f64, 1, n)?;
    let ids: Vec<u32> = draw.data().iter().map(|x| (*x as u32).min(VOCAB as u32 - 1)).collect();
    let seqs = [&ids[..lengths[0]], &ids[lengths[0]..]];
    let batch = PackedBatch::from_sequences(&seqs, 2, VOCAB as u32)?;
    archs
        .iter()
        .map(|&(name, arch)| {
            let spec = ModelSpec::parse(arch, Some(VOCAB), &MemoryDefaults::default())?;
            let model = Model::with_init(spec, InitOptions { seed, tap_jitter: 0.5 })?;
            Ok((name, model, batch.clone()))
        })
        .collect()
}

fn gradcheck(a: &GradcheckArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    if !(a.epsilon > 0.0 && a.threshold >= 0.0 && a.floor >= 0.0) {
        return Err(Error::Usage("--epsilon must be positive, --threshold and --floor nonnegative".into()));
    }
    let opts = GradCheckOptions {
        epsilon: a.epsilon,
        floor: a.floor,
        seed: a.common.seed,
        exec: if a.common.threads == 1 { Exec::Sequential } else { Exec::Auto },
        ..GradCheckOptions::default()
    };
    let mut failures = Vec::new();
    writeln!(out, "variant,tensor,checked,total,max_rel_err,status")?;
    for (name, model, batch) in gradcheck_variants(a.common.seed)? {
        let (_, mut grads) = loss_and_gradients(&model, &batch)?;
        if a.inject_fault {
            let mut ts = grads.tensors_mut();
            let pick = ts.iter().position(|t| t.role == ParamRole::Tap).unwrap_or(0);
            let t = &mut ts[pick];
            t.data[0] = t.data[0] * 1.01 + 1e-4;
        }
        let report = grad_check_against(&model, &batch, &grads, &opts)?;
        for t in &report.tensors {
            let ok = t.max_rel_err <= a.threshold;
            writeln!(
                out,
                "{name},{},{},{},{:.3e},{}",
                t.name,
                t.checked,
                t.total,
                t.max_rel_err,
                if ok { "ok" } else { "FAIL" }
            )?;
            if !ok {
                failures.push(format!("{name} {}: relative error {:.3e}", t.name, t.max_rel_err));
            }
        }
    }
    if failures.is_empty() {
        return Ok(0);
    }
    writeln!(err, "gradient check failed (threshold {:e}):", a.threshold)?;
    for f in &failures {
        writeln!(err, "  {f}")?;
    }
    Ok(1)
}

fn dump_filters(a: &DumpArgs, out: &mut dyn Write) -> Result<i32> {
    let path = required(&a.checkpoint, "checkpoint")?;
    let (layer, csv) = match peek_precision(path)?.as_str() {
        "f32" => filters_csv(&Checkpoint::<f32>::load(path)?.model, a.layer)?,
        "f64" => filters_csv(&Checkpoint::<f64>::load(path)?.model, a.layer)?,
        p => return Err(Error::Checkpoint(format!("unsupported precision `{p}`"))),
    };
    match &a.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join(format!("filters-L{layer}.csv")), csv)?;
        }
        None => out.write_all(csv.as_bytes())?,
    }
    Ok(0)
}

/// Filter coefficients of the memory block read by layer `layer` (the first
/// such layer when `None`), one row per tap offset from `-N2` to `N1`.
/// Positive offsets look back, negative ones ahead.
pub fn filters_csv<T: Real>(model: &Model<T>, layer: Option<usize>) -> Result<(usize, String)> {
    let n = model.spec().layers().len();
    let layer = match layer {
        Some(l) if l >= n => return Err(Error::Input(format!("layer {l} does not exist; the model has {n} layers"))),
        Some(l) => l,
        None => (0..n)
            .find(|&i| model.memory(i).is_some())
            .ok_or_else(|| Error::Input("the model has no memory block".into()))?,
    };
    let (cfg, params) =
        model.memory(layer).ok_or_else(|| Error::Input(format!("layer {layer} has no memory block")))?;
    if cfg.kind == MemoryKind::Attention {
        return Err(Error::Input(format!(
            "layer {layer} has an attention memory block, whose coefficients depend on the input"
        )));
    }
    let row = |offset: isize| -> Vec<f64> {
        let tap = |k: usize| -> Vec<f64> {
            match params {
                MemoryParams::Scalar { lookback, lookahead } => {
                    vec![Real::to_f64(if offset >= 0 { lookback[k] } else { lookahead[k] })]
                }
                MemoryParams::Vector { lookback, lookahead } => {
                    let m = if offset >= 0 { lookback } else { lookahead };
                    m.row(k).iter().map(|&x| Real::to_f64(x)).collect()
                }
                MemoryParams::Attention { .. } => unreachable!(),
            }
        };
        if offset >= 0 {
            tap(offset as usize)
        } else {
            tap((-offset) as usize - 1)
        }
    };
    let mut s = String::new();
    if cfg.kind == MemoryKind::Scalar {
        s.push_str("offset,value\n");
    } else {
        s.push_str("offset");
        for d in 0..cfg.dim {
            s.push_str(&format!(",d{d}"));
        }
        s.push_str(",mean\n");
    }
    for offset in -(cfg.lookahead as isize)..=cfg.lookback as isize {
        let v = row(offset);
        s.push_str(&offset.to_string());
        for x in &v {
            s.push_str(&format!(",{x}"));
        }
        if cfg.kind == MemoryKind::Vector {
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            s.push_str(&format!(",{mean}"));
        }
        s.push('\n');
    }
    Ok((layer, s))
}
