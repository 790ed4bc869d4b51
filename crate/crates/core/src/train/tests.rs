use super::*;
use crate::data::toy::{toy_corpus, ToyGrammar};
use crate::data::{encode_corpus, PackedBatch, Split, TokenizeOptions, Vocab};
use crate::math::{rng_uniform, Matrix};
use crate::network::{forward, LayerParams, MemoryDefaults, ModelSpec};

fn spec(arch: &str, vocab: usize) -> ModelSpec {
    ModelSpec::parse(arch, Some(vocab), &MemoryDefaults::default()).unwrap()
}

fn corpus(seqs: Vec<Vec<u32>>) -> Corpus {
    Corpus::new(Split::Valid, seqs).unwrap()
}

#[test]
fn uniform_model_has_perplexity_equal_to_vocab() {
    let m = Model::<f64>::zeros(spec("[2*3]-4-V", 7));
    let c = corpus(vec![vec![1, 2, 3], vec![6, 0]]);
    assert!((perplexity(&m, &c, 1).unwrap() - 7.0).abs() <= 1e-12);
}

#[test]
fn certain_model_has_perplexity_one() {
    let mut m = Model::<f64>::zeros(spec("[1*2]-3-V", 5));
    let LayerParams::Output { b, .. } = &mut m.layers_mut()[2] else { panic!() };
    b[4] = 1000.0;
    let c = corpus(vec![vec![4, 4, 4], vec![4]]);
    assert_eq!(perplexity(&m, &c, 2).unwrap(), 1.0);
}

#[test]
fn perplexity_matches_frame_by_frame_log_probabilities() {
    let m = Model::<f64>::new(spec("[2*3]-5(M:vector,2,1)-4-V", 6), 3).unwrap();
    let seqs = vec![vec![1, 2, 3, 4], vec![5, 0], vec![2, 2, 2]];
    let c = corpus(seqs.clone());
    let mut total = 0.0;
    let mut n = 0.0;
    for s in &seqs {
        let b = PackedBatch::from_sequences(&[s], 2, 6).unwrap();
        let (z, _) = forward(&m, &b).unwrap();
        for t in 0..s.len() {
            let col = z.col(t);
            let denom: f64 = col.iter().map(|x| x.exp()).sum();
            total -= (col[s[t] as usize].exp() / denom).ln();
            n += 1.0;
        }
    }
    let want = (total / n).exp();
    for k in [1, 2, 3] {
        assert!((perplexity(&m, &c, k).unwrap() - want).abs() <= 1e-10);
    }
    let reversed = corpus(seqs.into_iter().rev().collect());
    assert!((perplexity(&m, &reversed, 2).unwrap() - want).abs() <= 1e-10);
}

#[test]
fn perplexity_rejects_empty_corpus_and_bad_ids() {
    let m = Model::<f64>::zeros(spec("[1*2]-3-V", 4));
    assert!(perplexity(&m, &corpus(vec![]), 1).is_err());
    assert!(perplexity(&m, &corpus(vec![vec![9]]), 1).is_err());
}

fn toy_splits(sentences: usize) -> (Vocab, Corpus, Corpus) {
    let g = ToyGrammar::default();
    let train_text = toy_corpus(&g, sentences, 1);
    let valid_text = toy_corpus(&g, sentences / 2 + 1, 2);
    let opts = TokenizeOptions::default();
    let v = Vocab::build(&train_text, 1000, opts).unwrap();
    let tr = encode_corpus(&train_text, &v, opts, Split::Train);
    let va = encode_corpus(&valid_text, &v, opts, Split::Valid);
    (v, tr, va)
}

fn no_hook<T>() -> impl FnMut(&Model<T>, &TrainState<T>, &EpochRecord) -> Result<()> {
    |_, _, _| Ok(())
}

#[test]
fn zero_epochs_returns_the_initial_model() {
    let (v, tr, va) = toy_splits(20);
    let m = Model::<f64>::new(spec("[1*4]-8(M)-8-V", v.len()), 1).unwrap();
    let cfg = TrainConfig { max_epochs: 0, ..TrainConfig::default() };
    let out = train_loop(m.clone(), &tr, &va, &cfg, None, &mut no_hook()).unwrap();
    assert_eq!(out.model, m);
    assert!(out.history.records.is_empty());
    assert_eq!(out.stop, StopReason::MaxEpochs);
}

#[test]
fn training_loss_falls_and_reruns_are_identical() {
    let (v, tr, va) = toy_splits(20);
    let cfg = TrainConfig { initial_lr: 0.1, batch_size: 4, max_epochs: 3, ..TrainConfig::default() };
    let run = || {
        let m = Model::<f64>::new(spec("[2*8]-16(M:vector,4,0)-16-V", v.len()), 5).unwrap();
        train_loop(m, &tr, &va, &cfg, None, &mut no_hook()).unwrap()
    };
    let a = run();
    let b = run();
    let losses: Vec<f64> = a.history.records.iter().map(|r| r.train_loss).collect();
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
    assert_eq!(a.history.to_csv(), b.history.to_csv());
    assert_eq!(a.model, b.model);
    assert!(a.history.to_csv().starts_with("epoch,lr,train_loss,valid_ppl\n1,0.1,"));
}

#[test]
fn hook_sees_every_epoch_and_schedule_stops_training() {
    let (v, tr, va) = toy_splits(10);
    let cfg = TrainConfig {
        initial_lr: 0.05,
        batch_size: 5,
        max_epochs: 50,
        plateau_threshold: 1e9,
        halving_epochs: 2,
        ..TrainConfig::default()
    };
    let m = Model::<f32>::new(spec("[1*4]-8-V", v.len()), 1).unwrap();
    let mut seen = Vec::new();
    let out = train_loop(m, &tr, &va, &cfg, None, &mut |_, s, r| {
        seen.push((r.epoch, s.schedule.lr));
        Ok(())
    })
    .unwrap();
    // epoch 1 sets the reference, epoch 2 triggers, two halving epochs follow
    assert_eq!(out.stop, StopReason::Schedule);
    let lrs: Vec<f64> = out.history.records.iter().map(|r| r.lr).collect();
    assert_eq!(lrs, [0.05, 0.05, 0.025, 0.0125]);
    assert_eq!(seen.len(), 4);
}

#[test]
fn divergence_restores_the_last_good_model() {
    let (v, tr, va) = toy_splits(10);
    let cfg = TrainConfig { initial_lr: 1e30, momentum: 0.0, batch_size: 2, max_epochs: 3, ..TrainConfig::default() };
    let m = Model::<f32>::new(spec("[1*4]-8-V", v.len()), 1).unwrap();
    let out = train_loop(m.clone(), &tr, &va, &cfg, None, &mut no_hook()).unwrap();
    assert!(matches!(out.stop, StopReason::Diverged(_)), "{:?}", out.stop);
    assert!(out.model.is_finite());
    if out.history.records.is_empty() {
        assert_eq!(out.model, m);
    }
}

fn random_batch(seed: u64, window: usize, vocab: usize, lengths: &[usize]) -> PackedBatch<f64> {
    let n: usize = lengths.iter().sum();
    let r: Matrix<f64> = rng_uniform(seed, 0.0, vocab as f64, 1, n).unwrap();
    let ids: Vec<u32> = r.data().iter().map(|x| *x as u32).collect();
    let mut seqs = Vec::new();
    let mut at = 0;
    for &l in lengths {
        seqs.push(&ids[at..at + l]);
        at += l;
    }
    PackedBatch::from_sequences(&seqs, window, vocab as u32).unwrap()
}

#[test]
fn grad_check_passes_for_memory_models() {
    for arch in ["[2*3]-5(M:vector,2,2)-5(M:vector,2,2)-4-V", "[2*3]-5(M:attention,2,1,3)-4-V"] {
        let m =
            Model::<f64>::with_init(spec(arch, 6), crate::network::InitOptions { seed: 3, tap_jitter: 0.5 }).unwrap();
        let b = random_batch(4, 2, 6, &[4, 3]);
        let rep = grad_check(&m, &b, &GradCheckOptions::default()).unwrap();
        assert!(rep.passes(1e-6), "{arch}: {:?}", rep.failures(1e-6));
        assert!(rep.tensors.iter().all(|t| t.checked == t.total));
    }
}

#[test]
fn grad_check_samples_large_tensors() {
    let m = Model::<f64>::new(spec("[1*3]-6-V", 5), 3).unwrap();
    let b = random_batch(4, 1, 5, &[3]);
    let opts = GradCheckOptions { max_components: 4, ..GradCheckOptions::default() };
    let rep = grad_check(&m, &b, &opts).unwrap();
    assert!(rep.tensors.iter().all(|t| t.checked == t.total.min(4)));
}
