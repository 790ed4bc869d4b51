use crate::data::{FrameInput, PackedBatch};
use crate::error::{Error, Result};
use crate::math::{matmul, matmul_nt, matmul_tn, softmax_cross_entropy, Activation, Matrix};
use crate::memory::{self, check_segments, segment_spans, MemoryCache};
use crate::real::Real;

use super::model::{Gradients, LayerParams, Model};
use super::spec::LayerSpec;

/// Per-layer state kept by [`forward`] for [`backward`].
#[derive(Clone, Debug)]
pub enum LayerTrace<T> {
    Projection { ids: Vec<u32>, window: usize },
    Dense { input: Matrix<T>, pre: Matrix<T> },
    Fsmn { input: Matrix<T>, memory: Matrix<T>, cache: MemoryCache<T>, pre: Matrix<T> },
    Rnn { input: Matrix<T>, pre: Matrix<T> },
    Output { input: Matrix<T> },
}

impl<T> LayerTrace<T> {
    /// Activations entering the layer (the previous layer's output).
    pub fn input(&self) -> Option<&Matrix<T>> {
        match self {
            LayerTrace::Projection { .. } => None,
            LayerTrace::Dense { input, .. }
            | LayerTrace::Fsmn { input, .. }
            | LayerTrace::Rnn { input, .. }
            | LayerTrace::Output { input } => Some(input),
        }
    }

    /// Memory block output, for FSMN layers.
    pub fn memory(&self) -> Option<&Matrix<T>> {
        match self {
            LayerTrace::Fsmn { memory, .. } => Some(memory),
            _ => None,
        }
    }
}

/// Everything [`backward`] needs from a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace<T> {
    generation: u64,
    segments: Vec<usize>,
    layers: Vec<LayerTrace<T>>,
}

impl<T> ForwardTrace<T> {
    pub fn layers(&self) -> &[LayerTrace<T>] {
        &self.layers
    }

    pub fn segments(&self) -> &[usize] {
        &self.segments
    }

    pub fn frames(&self) -> usize {
        self.segments.iter().sum()
    }
}

fn affine<T: Real>(w: &Matrix<T>, x: &Matrix<T>, b: &[T]) -> Result<Matrix<T>> {
    let mut out = matmul(w, x)?;
    out.add_row_bias(b)?;
    Ok(out)
}

fn fsmn_pre<T: Real>(h: &Matrix<T>, h_mem: &Matrix<T>, w: &Matrix<T>, w_mem: &Matrix<T>, b: &[T]) -> Result<Matrix<T>> {
    if h.shape() != h_mem.shape() {
        return Err(Error::shape("fsmn layer memory", h.shape(), h_mem.shape()));
    }
    let mut pre = affine(w, h, b)?;
    pre.add_assign(&matmul(w_mem, h_mem)?)?;
    Ok(pre)
}

/// `f(W h_t + W~ h~_t + b)` for every column.
pub fn fsmn_layer_forward<T: Real>(
    h: &Matrix<T>,
    h_mem: &Matrix<T>,
    w: &Matrix<T>,
    w_mem: &Matrix<T>,
    b: &[T],
    activation: Activation,
) -> Result<Matrix<T>> {
    Ok(fsmn_pre(h, h_mem, w, w_mem, b)?.map(|x| activation.apply(x)))
}

fn rnn_pre<T: Real>(
    x: &Matrix<T>,
    w: &Matrix<T>,
    w_rec: &Matrix<T>,
    b: &[T],
    activation: Activation,
    segments: &[usize],
) -> Result<(Matrix<T>, Matrix<T>)> {
    let n = w.rows();
    if w_rec.shape() != (n, n) {
        return Err(Error::shape("rnn recurrent weight", w_rec.shape(), (n, n)));
    }
    check_segments(segments, x.cols())?;
    let mut pre = affine(w, x, b)?;
    let mut out = Matrix::zeros(n, x.cols());
    let mut prev = vec![T::zero(); n];
    let mut cur = vec![T::zero(); n];
    for (start, len) in segment_spans(segments) {
        prev.fill(T::zero());
        for t in start..start + len {
            for (r, c) in cur.iter_mut().enumerate() {
                let rec: T = w_rec.row(r).iter().zip(&prev).map(|(&a, &h)| a * h).sum();
                let p = pre.get(r, t) + rec;
                pre.set(r, t, p);
                *c = activation.apply(p);
                out.set(r, t, *c);
            }
            std::mem::swap(&mut prev, &mut cur);
        }
    }
    Ok((pre, out))
}

/// `h_t = f(W x_t + W~ h_{t-1} + b)` run sequentially through each segment
/// of `x`, with `h` reset to zero at every segment start.
pub fn rnn_layer_forward<T: Real>(
    x: &Matrix<T>,
    w: &Matrix<T>,
    w_rec: &Matrix<T>,
    b: &[T],
    activation: Activation,
    segments: &[usize],
) -> Result<Matrix<T>> {
    Ok(rnn_pre(x, w, w_rec, b, activation, segments)?.1)
}

fn project<T: Real>(table: &Matrix<T>, ids: &[u32], window: usize) -> Result<Matrix<T>> {
    let dim = table.cols();
    let frames = ids.len() / window;
    let mut out = Matrix::zeros(window * dim, frames);
    for (t, frame) in ids.chunks(window).enumerate() {
        for (k, &id) in frame.iter().enumerate() {
            if id as usize >= table.rows() {
                return Err(Error::Input(format!(
                    "token id {id} is outside the projection table ({} rows)",
                    table.rows()
                )));
            }
            for (d, &v) in table.row(id as usize).iter().enumerate() {
                out.set(k * dim + d, t, v);
            }
        }
    }
    Ok(out)
}

/// Logits (vocab x frames) for a packed batch.
pub fn forward<T: Real>(model: &Model<T>, batch: &PackedBatch<T>) -> Result<(Matrix<T>, ForwardTrace<T>)> {
    batch.validate()?;
    let segments = batch.lengths.clone();
    let specs = model.spec().layers();
    let mut traces = Vec::with_capacity(specs.len());
    let mut x = match (&batch.input, &specs[0]) {
        (FrameInput::Tokens { window, .. }, LayerSpec::Projection { window: w, .. }) if window == w => None,
        (FrameInput::Features(m), first) if !matches!(first, LayerSpec::Projection { .. }) => {
            if m.rows() != first.input_dim() {
                return Err(Error::shape("model input", m.shape(), (first.input_dim(), m.cols())));
            }
            Some(m.clone())
        }
        _ => {
            return Err(Error::shape_msg(
                "model input",
                format!("batch input does not suit a model expecting {:?}", model.spec().input_kind()),
            ))
        }
    };
    for (spec, params) in specs.iter().zip(model.layers()) {
        let (trace, out) = match (spec, params) {
            (LayerSpec::Projection { window, .. }, LayerParams::Projection { table }) => {
                let FrameInput::Tokens { ids, .. } = &batch.input else { unreachable!("checked above") };
                let out = project(table, ids, *window)?;
                (LayerTrace::Projection { ids: ids.clone(), window: *window }, out)
            }
            (LayerSpec::Dense { activation, .. }, LayerParams::Dense { w, b }) => {
                let input = x.take().expect("input present");
                let pre = affine(w, &input, b)?;
                let out = pre.map(|v| activation.apply(v));
                (LayerTrace::Dense { input, pre }, out)
            }
            (LayerSpec::FsmnHidden { activation, memory: cfg, .. }, LayerParams::Fsmn { w, w_mem, b, memory }) => {
                let input = x.take().expect("input present");
                let (mem, cache) = memory::encode(&input, cfg, memory, &segments, model.band_kernel())?;
                let pre = fsmn_pre(&input, &mem, w, w_mem, b)?;
                let out = pre.map(|v| activation.apply(v));
                (LayerTrace::Fsmn { input, memory: mem, cache, pre }, out)
            }
            (LayerSpec::RnnBaseline { activation, .. }, LayerParams::Rnn { w, w_rec, b }) => {
                let input = x.take().expect("input present");
                let (pre, out) = rnn_pre(&input, w, w_rec, b, *activation, &segments)?;
                (LayerTrace::Rnn { input, pre }, out)
            }
            (LayerSpec::Output { .. }, LayerParams::Output { w, b }) => {
                let input = x.take().expect("input present");
                let out = affine(w, &input, b)?;
                (LayerTrace::Output { input }, out)
            }
            _ => unreachable!("model parameters are validated against ModelSpec"),
        };
        traces.push(trace);
        x = Some(out);
    }
    Ok((x.expect("output layer ran"), ForwardTrace { generation: model.generation(), segments, layers: traces }))
}

fn activation_grad<T: Real>(e: &Matrix<T>, pre: &Matrix<T>, out: &Matrix<T>, act: Activation) -> Matrix<T> {
    let mut d = e.clone();
    for ((g, &p), &y) in d.data_mut().iter_mut().zip(pre.data()).zip(out.data()) {
        *g *= act.derivative(p, y);
    }
    d
}

/// Backpropagates `loss_grad` (d loss / d logits) through the trace.
/// Where an activation feeds both the next layer and a memory block the two
/// error signals are added.
pub fn backward<T: Real>(model: &Model<T>, trace: &ForwardTrace<T>, loss_grad: &Matrix<T>) -> Result<Gradients<T>> {
    if trace.generation != model.generation() || trace.layers.len() != model.layers().len() {
        return Err(Error::Usage("forward trace is stale: the model changed after the forward pass".into()));
    }
    let frames = trace.frames();
    let vocab = model.spec().vocab();
    if loss_grad.shape() != (vocab, frames) {
        return Err(Error::shape("backward loss gradient", loss_grad.shape(), (vocab, frames)));
    }
    let specs = model.spec().layers();
    let mut grads = Vec::with_capacity(specs.len());
    let mut e = loss_grad.clone();
    for i in (0..specs.len()).rev() {
        let out = trace.layers.get(i + 1).and_then(LayerTrace::input);
        let need_input_grad = i > 0;
        let g = match (&specs[i], &model.layers()[i], &trace.layers[i]) {
            (LayerSpec::Output { .. }, LayerParams::Output { w, .. }, LayerTrace::Output { input }) => {
                let g = LayerParams::Output { w: matmul_nt(&e, input)?, b: e.row_sums() };
                if need_input_grad {
                    e = matmul_tn(w, &e)?;
                }
                g
            }
            (LayerSpec::Dense { activation, .. }, LayerParams::Dense { w, .. }, LayerTrace::Dense { input, pre }) => {
                let d = activation_grad(&e, pre, out.expect("hidden layer has a successor"), *activation);
                let g = LayerParams::Dense { w: matmul_nt(&d, input)?, b: d.row_sums() };
                if need_input_grad {
                    e = matmul_tn(w, &d)?;
                }
                g
            }
            (
                LayerSpec::FsmnHidden { activation, memory: cfg, .. },
                LayerParams::Fsmn { w, w_mem, memory, .. },
                LayerTrace::Fsmn { input, memory: mem, cache, pre },
            ) => {
                let d = activation_grad(&e, pre, out.expect("hidden layer has a successor"), *activation);
                let e_mem = matmul_tn(w_mem, &d)?;
                let mg = memory::backward(input, &e_mem, cfg, memory, &trace.segments, model.band_kernel(), cache)?;
                let g = LayerParams::Fsmn {
                    w: matmul_nt(&d, input)?,
                    w_mem: matmul_nt(&d, mem)?,
                    b: d.row_sums(),
                    memory: mg.params,
                };
                if need_input_grad {
                    e = matmul_tn(w, &d)?;
                    e.add_assign(&mg.input)?;
                }
                g
            }
            (
                LayerSpec::RnnBaseline { activation, .. },
                LayerParams::Rnn { w, w_rec, .. },
                LayerTrace::Rnn { input, pre },
            ) => {
                let out = out.expect("hidden layer has a successor");
                let (d, prev) = bptt(&e, pre, out, w_rec, *activation, &trace.segments);
                let g = LayerParams::Rnn { w: matmul_nt(&d, input)?, w_rec: matmul_nt(&d, &prev)?, b: d.row_sums() };
                if need_input_grad {
                    e = matmul_tn(w, &d)?;
                }
                g
            }
            (
                LayerSpec::Projection { .. },
                LayerParams::Projection { table },
                LayerTrace::Projection { ids, window },
            ) => {
                let dim = table.cols();
                let mut dt = Matrix::zeros(table.rows(), dim);
                for (t, frame) in ids.chunks(*window).enumerate() {
                    for (k, &id) in frame.iter().enumerate() {
                        let row = dt.row_mut(id as usize);
                        for (d, r) in row.iter_mut().enumerate() {
                            *r += e.get(k * dim + d, t);
                        }
                    }
                }
                LayerParams::Projection { table: dt }
            }
            _ => unreachable!("trace layers follow ModelSpec"),
        };
        grads.push(g);
    }
    grads.reverse();
    Ok(Gradients { layers: grads })
}

/// Backpropagation through time over whole segments. Returns the
/// pre-activation error for every frame and the matrix of previous hidden
/// states (zero at segment starts) that multiplies it in the recurrent
/// weight gradient.
fn bptt<T: Real>(
    e: &Matrix<T>,
    pre: &Matrix<T>,
    out: &Matrix<T>,
    w_rec: &Matrix<T>,
    act: Activation,
    segments: &[usize],
) -> (Matrix<T>, Matrix<T>) {
    let n = out.rows();
    let mut d = Matrix::zeros(n, out.cols());
    let mut prev = Matrix::zeros(n, out.cols());
    let mut carry = vec![T::zero(); n];
    let mut dt = vec![T::zero(); n];
    for (start, len) in segment_spans(segments) {
        carry.fill(T::zero());
        for t in (start..start + len).rev() {
            for r in 0..n {
                let g = e.get(r, t) + carry[r];
                dt[r] = g * act.derivative(pre.get(r, t), out.get(r, t));
                d.set(r, t, dt[r]);
                if t > start {
                    prev.set(r, t, out.get(r, t - 1));
                }
            }
            carry.fill(T::zero());
            for (r, &dr) in dt.iter().enumerate() {
                for (c, &wv) in carry.iter_mut().zip(w_rec.row(r)) {
                    *c += wv * dr;
                }
            }
        }
    }
    (d, prev)
}

/// Mean per-frame cross-entropy of a batch and its gradients.
pub fn loss_and_gradients<T: Real>(model: &Model<T>, batch: &PackedBatch<T>) -> Result<(T, Gradients<T>)> {
    let (logits, trace) = forward(model, batch)?;
    let (loss, grad) = softmax_cross_entropy(&logits, &batch.targets)?;
    Ok((loss, backward(model, &trace, &grad)?))
}

/// Per-frame negative log-likelihood (natural log) of a batch.
pub fn frame_nll<T: Real>(model: &Model<T>, batch: &PackedBatch<T>) -> Result<Vec<f64>> {
    let (logits, _) = forward(model, batch)?;
    crate::math::column_nll(&logits, &batch.targets)
}
