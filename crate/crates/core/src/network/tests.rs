#![allow(clippy::needless_range_loop)]

use super::*;
use crate::data::{FrameInput, PackedBatch};
use crate::math::{matmul, rng_uniform, sub_seed, Activation, Matrix};
use crate::memory::{encode_naive, MemoryConfig, MemoryParams};

fn rand_mat(seed: u64, r: usize, c: usize) -> Matrix<f64> {
    rng_uniform(seed, -1.0, 1.0, r, c).unwrap()
}

fn rand_vec(seed: u64, n: usize) -> Vec<f64> {
    rand_mat(seed, 1, n).into_vec()
}

fn spec(arch: &str) -> ModelSpec {
    ModelSpec::parse(arch, None, &MemoryDefaults::default()).unwrap()
}

fn feature_batch(seed: u64, dim: usize, lengths: &[usize], vocab: usize) -> PackedBatch<f64> {
    let t: usize = lengths.iter().sum();
    PackedBatch {
        lengths: lengths.to_vec(),
        input: FrameInput::Features(rand_mat(seed, dim, t)),
        targets: (0..t).map(|i| (i * 7 + seed as usize) % vocab).collect(),
    }
}

/// Randomizes every parameter, including memory taps, so no path is trivial.
fn randomize(model: &mut Model<f64>, seed: u64) {
    for (i, t) in model.tensors_mut().into_iter().enumerate() {
        let r = rand_vec(sub_seed(seed, &[i as u64]), t.data.len());
        for (x, v) in t.data.iter_mut().zip(r) {
            *x = 0.6 * v;
        }
    }
}

#[test]
fn fsmn_layer_without_memory_weight_is_dense() {
    let h = rand_mat(1, 4, 6);
    let mem = rand_mat(2, 4, 6);
    let w = rand_mat(3, 5, 4);
    let b = rand_vec(4, 5);
    let got = fsmn_layer_forward(&h, &mem, &w, &Matrix::zeros(5, 4), &b, Activation::Relu).unwrap();
    let mut dense = matmul(&w, &h).unwrap();
    dense.add_row_bias(&b).unwrap();
    assert_eq!(got, dense.map(|x| x.max(0.0)));
}

#[test]
fn fsmn_layer_can_pass_memory_through() {
    let h = rand_mat(1, 4, 6);
    let mem = rand_mat(2, 4, 6);
    let got = fsmn_layer_forward(&h, &mem, &Matrix::zeros(4, 4), &Matrix::identity(4), &[0.0; 4], Activation::Linear)
        .unwrap();
    assert_eq!(got, mem);
}

#[test]
fn fsmn_layer_matches_frame_loop() {
    let (d_in, d_out, t) = (5, 3, 7);
    let h = rand_mat(1, d_in, t);
    let mem = rand_mat(2, d_in, t);
    let w = rand_mat(3, d_out, d_in);
    let wm = rand_mat(4, d_out, d_in);
    let b = rand_vec(5, d_out);
    let got = fsmn_layer_forward(&h, &mem, &w, &wm, &b, Activation::Sigmoid).unwrap();
    for c in 0..t {
        for r in 0..d_out {
            let mut z = b[r];
            for k in 0..d_in {
                z += w.get(r, k) * h.get(k, c) + wm.get(r, k) * mem.get(k, c);
            }
            let want = 1.0 / (1.0 + (-z).exp());
            assert!((got.get(r, c) - want).abs() <= 1e-12);
        }
    }
    assert!(fsmn_layer_forward(&h, &mem.col_range(0, 3), &w, &wm, &b, Activation::Relu).is_err());
}

#[test]
fn rnn_without_recurrence_is_per_frame_dense() {
    let x = rand_mat(1, 3, 5);
    let w = rand_mat(2, 4, 3);
    let b = rand_vec(3, 4);
    let got = rnn_layer_forward(&x, &w, &Matrix::zeros(4, 4), &b, Activation::Sigmoid, &[5]).unwrap();
    let mut z = matmul(&w, &x).unwrap();
    z.add_row_bias(&b).unwrap();
    assert!(got.max_abs_diff(&z.map(crate::math::sigmoid)) <= 1e-15);
    let one = rnn_layer_forward(&x.col_range(0, 1), &w, &rand_mat(4, 4, 4), &b, Activation::Sigmoid, &[1]).unwrap();
    assert!(one.max_abs_diff(&z.col_range(0, 1).map(crate::math::sigmoid)) <= 1e-15);
}

#[test]
fn rnn_matches_unrolled_recursion() {
    let (n_in, n, t) = (3, 4, 5);
    let x = rand_mat(1, n_in, t);
    let w = rand_mat(2, n, n_in);
    let u = rand_mat(3, n, n);
    let b = rand_vec(4, n);
    let got = rnn_layer_forward(&x, &w, &u, &b, Activation::Sigmoid, &[t]).unwrap();
    let mut h = vec![0.0; n];
    for c in 0..t {
        let mut next = vec![0.0; n];
        for r in 0..n {
            let mut z = b[r];
            for k in 0..n_in {
                z += w.get(r, k) * x.get(k, c);
            }
            for k in 0..n {
                z += u.get(r, k) * h[k];
            }
            next[r] = 1.0 / (1.0 + (-z).exp());
        }
        h = next;
        for r in 0..n {
            assert!((got.get(r, c) - h[r]).abs() <= 1e-12);
        }
    }
    // the state restarts at a segment boundary
    let split = rnn_layer_forward(&x, &w, &u, &b, Activation::Sigmoid, &[2, 3]).unwrap();
    let tail = rnn_layer_forward(&x.col_range(2, 3), &w, &u, &b, Activation::Sigmoid, &[3]).unwrap();
    assert_eq!(split.col_range(2, 3), tail);
}

#[test]
fn zero_model_gives_zero_logits() {
    let m = Model::<f64>::zeros(spec("[2*3]-4(M:vector,2,1)-4-6"));
    let b = PackedBatch::from_sequences(&[&[1, 2, 3]], 2, 6).unwrap();
    let (logits, _) = forward(&m, &b).unwrap();
    assert!(logits.data().iter().all(|x| *x == 0.0));
}

fn assert_packed_matches_parts(model: &Model<f64>, batch: &PackedBatch<f64>) {
    let (packed, _) = forward(model, batch).unwrap();
    let parts: Vec<Matrix<f64>> =
        (0..batch.sequence_count()).map(|k| forward(model, &batch.sequence(k)).unwrap().0).collect();
    let joined = Matrix::hcat(&parts).unwrap();
    assert!(packed.max_abs_diff(&joined) <= 1e-12);
    assert!(packed.is_finite());
}

#[test]
fn packed_forward_equals_per_sequence_forwards() {
    for arch in ["5-6(M:scalar,2,2)-6(M:vector,1,3)-4-7", "5-6(M:attention,3,1,4)-6-7", "5-6(R)-6-7"] {
        let mut m = Model::<f64>::new(spec(arch), 3).unwrap();
        randomize(&mut m, 9);
        assert_packed_matches_parts(&m, &feature_batch(2, 5, &[4, 1, 6], 7));
    }
    let m = Model::<f64>::new(spec("[2*3]-5(M:vector,3,2)-5-9"), 1).unwrap();
    let b = PackedBatch::from_sequences(&[&[1, 2, 3, 4], &[5, 6], &[7]], 2, 9).unwrap();
    assert_packed_matches_parts(&m, &b);
}

#[test]
fn zero_memory_weight_equals_model_without_memory() {
    let with = spec("[2*3]-5(M:vector,3,2)-6-9");
    let without = spec("[2*3]-5-6-9");
    let mut a = Model::<f64>::new(with, 4).unwrap();
    randomize(&mut a, 4);
    let layers = a.layers_mut();
    let LayerParams::Fsmn { w, b, w_mem, .. } = &mut layers[2] else { panic!() };
    *w_mem = Matrix::zeros(w_mem.rows(), w_mem.cols());
    let dense = LayerParams::Dense { w: w.clone(), b: b.clone() };
    let mut plain = layers.to_vec();
    plain[2] = dense;
    let b_model = Model::from_layers(without, plain).unwrap();
    let batch = PackedBatch::from_sequences(&[&[1, 2, 3, 4, 5], &[6, 7]], 2, 9).unwrap();
    let (x, _) = forward(&a, &batch).unwrap();
    let (y, _) = forward(&b_model, &batch).unwrap();
    assert!(x.max_abs_diff(&y) <= 1e-12);
}

#[test]
fn memory_layer_output_matches_naive_encoding() {
    let mut m = Model::<f64>::new(spec("4-5(M:vector,2,1)-5-3"), 1).unwrap();
    randomize(&mut m, 2);
    let batch = feature_batch(3, 4, &[3, 4], 3);
    let (_, trace) = forward(&m, &batch).unwrap();
    let (cfg, params) = m.memory(1).unwrap();
    let FrameInput::Features(x) = &batch.input else { panic!() };
    let h1 = trace.layers()[1].input().unwrap();
    let want = encode_naive(h1, cfg, params, &[3, 4]).unwrap();
    assert!(trace.layers()[1].memory().unwrap().max_abs_diff(&want) <= 1e-12);
    assert_eq!(trace.layers()[0].input().unwrap(), x);
}

/// Analytic gradient of `sum(R .* logits)` against central differences.
fn check_gradients(model: &Model<f64>, batch: &PackedBatch<f64>, tol: f64) {
    let (logits, trace) = forward(model, batch).unwrap();
    let r = rand_mat(77, logits.rows(), logits.cols());
    let grads = backward(model, &trace, &r).unwrap();
    let objective = |m: &Model<f64>| -> f64 {
        let (z, _) = forward(m, batch).unwrap();
        z.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
    };
    let eps = 1e-5;
    let mut probe = model.clone();
    let names: Vec<(String, usize)> = model.tensors().iter().map(|t| (t.name.clone(), t.data.len())).collect();
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.data.to_vec()).collect();
    for (ti, (name, len)) in names.iter().enumerate() {
        for k in 0..*len {
            let orig = probe.tensors()[ti].data[k];
            probe.tensors_mut()[ti].data[k] = orig + eps;
            let up = objective(&probe);
            probe.tensors_mut()[ti].data[k] = orig - eps;
            let down = objective(&probe);
            probe.tensors_mut()[ti].data[k] = orig;
            let num = (up - down) / (2.0 * eps);
            let ana = analytic[ti][k];
            let scale = ana.abs().max(num.abs());
            let err = if scale == 0.0 { 0.0 } else { (ana - num).abs() / scale };
            assert!(err <= tol || (ana - num).abs() <= 1e-10, "{name}[{k}]: analytic {ana} numeric {num}");
        }
    }
}

#[test]
fn fsmn_model_gradients_match_finite_differences() {
    let mut m = Model::<f64>::new(spec("4-5(M:vector,2,1)-5(M:scalar,1,2)-4@sigmoid-6"), 1).unwrap();
    randomize(&mut m, 11);
    check_gradients(&m, &feature_batch(5, 4, &[3, 4], 6), 1e-6);
}

#[test]
fn attention_and_token_model_gradients_match_finite_differences() {
    let mut m = Model::<f64>::new(spec("[2*3]-5(M:attention,2,1,3)-4-7"), 1).unwrap();
    randomize(&mut m, 12);
    let batch = PackedBatch::from_sequences(&[&[1, 2, 3, 4], &[5, 6, 0]], 2, 7).unwrap();
    check_gradients(&m, &batch, 1e-6);
}

#[test]
fn rnn_gradients_match_finite_differences() {
    let mut m = Model::<f64>::new(spec("3-4(R)-4(R:relu)-5"), 1).unwrap();
    randomize(&mut m, 13);
    check_gradients(&m, &feature_batch(6, 3, &[5, 3], 5), 1e-6);
}

#[test]
fn zero_loss_gradient_gives_zero_gradients() {
    let mut m = Model::<f64>::new(spec("[2*3]-5(M:vector,2,1)-4-4(R)-7"), 1).unwrap();
    randomize(&mut m, 14);
    let batch = PackedBatch::from_sequences(&[&[1, 2, 3]], 2, 7).unwrap();
    let (z, trace) = forward(&m, &batch).unwrap();
    let g = backward(&m, &trace, &Matrix::zeros(z.rows(), z.cols())).unwrap();
    assert!(g.tensors().iter().all(|t| t.data.iter().all(|x| *x == 0.0)));
}

#[test]
fn stale_trace_is_rejected() {
    let mut m = Model::<f64>::new(spec("4-3-2"), 1).unwrap();
    let batch = feature_batch(1, 4, &[3], 2);
    let (z, trace) = forward(&m, &batch).unwrap();
    m.layers_mut();
    let err = backward(&m, &trace, &z).unwrap_err();
    assert!(matches!(err, crate::Error::Usage(_)), "{err}");
}

#[test]
fn wrong_input_kind_is_a_shape_error() {
    let m = Model::<f64>::new(spec("[2*3]-4-5"), 1).unwrap();
    assert!(forward(&m, &feature_batch(1, 6, &[2], 5)).is_err());
    let m = Model::<f64>::new(spec("6-4-5"), 1).unwrap();
    assert!(forward(&m, &feature_batch(1, 5, &[2], 5)).is_err());
    let tok = PackedBatch::from_sequences(&[&[1, 2]], 2, 5).unwrap();
    assert!(forward(&m, &tok).is_err());
}

#[test]
fn causal_model_ignores_future_frames() {
    let mut m = Model::<f64>::new(spec("3-4(M:vector,2,0)-4(M:scalar,1,0)-4-5"), 1).unwrap();
    randomize(&mut m, 15);
    let batch = feature_batch(3, 3, &[8], 5);
    let (base, _) = forward(&m, &batch).unwrap();
    let mut moved = batch.clone();
    let FrameInput::Features(x) = &mut moved.input else { panic!() };
    x.set(1, 5, 10.0);
    let (pert, _) = forward(&m, &moved).unwrap();
    assert_eq!(base.col_range(0, 5), pert.col_range(0, 5));
    assert_ne!(base.col_range(5, 1), pert.col_range(5, 1));
    let rf = receptive_field(&m);
    assert_eq!((rf.past, rf.future), (Some(3), 0));
}

#[test]
fn memory_params_expose_kinds() {
    let m = Model::<f32>::new(spec("3-4(M:scalar,2,1)-4-5"), 1).unwrap();
    let (cfg, p) = m.memory(1).unwrap();
    assert_eq!(*cfg, MemoryConfig::scalar(2, 1, 4));
    assert!(matches!(p, MemoryParams::Scalar { .. }));
    assert!(m.memory(0).is_none());
}
