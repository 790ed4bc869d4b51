use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::math::{sub_seed, Matrix};
use crate::memory::{glorot, BandKernel, MemoryConfig, MemoryParams};
use crate::real::Real;

use super::spec::{LayerSpec, ModelSpec};

/// What a tensor is, for optimizer rules that treat kinds differently.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum ParamRole {
    Weight,
    Bias,
    /// Memory filter coefficients.
    Tap,
    Embedding,
}

/// Parameters of one layer. Gradients use the same layout.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerParams<T> {
    /// `(vocab + 1) x dim`; the last row embeds the sequence-start symbol.
    Projection {
        table: Matrix<T>,
    },
    Dense {
        w: Matrix<T>,
        b: Vec<T>,
    },
    Fsmn {
        w: Matrix<T>,
        w_mem: Matrix<T>,
        b: Vec<T>,
        memory: MemoryParams<T>,
    },
    Rnn {
        w: Matrix<T>,
        w_rec: Matrix<T>,
        b: Vec<T>,
    },
    Output {
        w: Matrix<T>,
        b: Vec<T>,
    },
}

/// Read-only view of one named tensor.
#[derive(Debug)]
pub struct TensorRef<'a, T> {
    pub name: String,
    pub role: ParamRole,
    pub shape: (usize, usize),
    pub data: &'a [T],
}

/// Mutable view of one named tensor.
#[derive(Debug)]
pub struct TensorMut<'a, T> {
    pub name: String,
    pub role: ParamRole,
    pub shape: (usize, usize),
    pub data: &'a mut [T],
}

fn layer_tag<T>(p: &LayerParams<T>) -> &'static str {
    match p {
        LayerParams::Projection { .. } => "proj",
        LayerParams::Dense { .. } => "dense",
        LayerParams::Fsmn { .. } => "fsmn",
        LayerParams::Rnn { .. } => "rnn",
        LayerParams::Output { .. } => "out",
    }
}

type Part<'a, T> = (&'static str, ParamRole, (usize, usize), &'a [T]);
type PartMut<'a, T> = (&'static str, ParamRole, (usize, usize), &'a mut [T]);

impl<T: Real> LayerParams<T> {
    /// All-zero parameters for `spec`.
    pub fn zeros(spec: &LayerSpec) -> Self {
        match spec {
            LayerSpec::Projection { vocab, dim, .. } => {
                LayerParams::Projection { table: Matrix::zeros(vocab + 1, *dim) }
            }
            LayerSpec::Dense { input, output, .. } => {
                LayerParams::Dense { w: Matrix::zeros(*output, *input), b: vec![T::zero(); *output] }
            }
            LayerSpec::FsmnHidden { input, output, memory, .. } => LayerParams::Fsmn {
                w: Matrix::zeros(*output, *input),
                w_mem: Matrix::zeros(*output, *input),
                b: vec![T::zero(); *output],
                memory: MemoryParams::zeros(memory),
            },
            LayerSpec::RnnBaseline { input, output, .. } => LayerParams::Rnn {
                w: Matrix::zeros(*output, *input),
                w_rec: Matrix::zeros(*output, *output),
                b: vec![T::zero(); *output],
            },
            LayerSpec::Output { input, vocab } => {
                LayerParams::Output { w: Matrix::zeros(*vocab, *input), b: vec![T::zero(); *vocab] }
            }
        }
    }

    /// Glorot-uniform weights, zero biases, identity memory filters with
    /// optional tap jitter.
    pub fn init(spec: &LayerSpec, seed: u64, tap_jitter: f64) -> Result<Self> {
        let g = |i: u64, m: &Matrix<T>| glorot::<T>(sub_seed(seed, &[i]), m.rows(), m.cols());
        let mut p = Self::zeros(spec);
        match (&mut p, spec) {
            (LayerParams::Projection { table }, _) => *table = g(0, table)?,
            (LayerParams::Dense { w, .. }, _) | (LayerParams::Output { w, .. }, _) => *w = g(0, w)?,
            (LayerParams::Fsmn { w, w_mem, memory, .. }, LayerSpec::FsmnHidden { memory: cfg, .. }) => {
                *w = g(0, w)?;
                *w_mem = g(1, w_mem)?;
                *memory = MemoryParams::init(cfg, sub_seed(seed, &[2]), tap_jitter)?;
            }
            (LayerParams::Rnn { w, w_rec, .. }, _) => {
                *w = g(0, w)?;
                *w_rec = g(1, w_rec)?;
            }
            (LayerParams::Fsmn { .. }, _) => unreachable!("zeros follows the ModelSpec layer kind"),
        }
        Ok(p)
    }

    fn parts(&self) -> Vec<Part<'_, T>> {
        let vec = |v: &Vec<T>| (v.len(), 1);
        match self {
            LayerParams::Projection { table } => {
                vec![("table", ParamRole::Embedding, table.shape(), table.data())]
            }
            LayerParams::Dense { w, b } | LayerParams::Output { w, b } => {
                vec![("W", ParamRole::Weight, w.shape(), w.data()), ("b", ParamRole::Bias, vec(b), b)]
            }
            LayerParams::Fsmn { w, w_mem, b, memory } => {
                let mut out = vec![
                    ("W", ParamRole::Weight, w.shape(), w.data()),
                    ("W_mem", ParamRole::Weight, w_mem.shape(), w_mem.data()),
                    ("b", ParamRole::Bias, vec(b), b.as_slice()),
                ];
                match memory {
                    MemoryParams::Scalar { lookback, lookahead } => {
                        out.push(("mem.a", ParamRole::Tap, vec(lookback), lookback));
                        out.push(("mem.c", ParamRole::Tap, vec(lookahead), lookahead));
                    }
                    MemoryParams::Vector { lookback, lookahead } => {
                        out.push(("mem.a", ParamRole::Tap, lookback.shape(), lookback.data()));
                        out.push(("mem.c", ParamRole::Tap, lookahead.shape(), lookahead.data()));
                    }
                    MemoryParams::Attention { u, v, m } => {
                        out.push(("mem.U", ParamRole::Weight, u.shape(), u.data()));
                        out.push(("mem.V", ParamRole::Weight, v.shape(), v.data()));
                        out.push(("mem.m", ParamRole::Bias, vec(m), m));
                    }
                }
                out
            }
            LayerParams::Rnn { w, w_rec, b } => vec![
                ("W", ParamRole::Weight, w.shape(), w.data()),
                ("W_rec", ParamRole::Weight, w_rec.shape(), w_rec.data()),
                ("b", ParamRole::Bias, vec(b), b),
            ],
        }
    }

    fn parts_mut(&mut self) -> Vec<PartMut<'_, T>> {
        let vec = |v: &Vec<T>| (v.len(), 1);
        match self {
            LayerParams::Projection { table } => {
                let s = table.shape();
                vec![("table", ParamRole::Embedding, s, table.data_mut())]
            }
            LayerParams::Dense { w, b } | LayerParams::Output { w, b } => {
                let (ws, bs) = (w.shape(), vec(b));
                vec![("W", ParamRole::Weight, ws, w.data_mut()), ("b", ParamRole::Bias, bs, b.as_mut_slice())]
            }
            LayerParams::Fsmn { w, w_mem, b, memory } => {
                let (ws, ms, bs) = (w.shape(), w_mem.shape(), vec(b));
                let mut out = vec![
                    ("W", ParamRole::Weight, ws, w.data_mut()),
                    ("W_mem", ParamRole::Weight, ms, w_mem.data_mut()),
                    ("b", ParamRole::Bias, bs, b.as_mut_slice()),
                ];
                match memory {
                    MemoryParams::Scalar { lookback, lookahead } => {
                        let (a, c) = (vec(lookback), vec(lookahead));
                        out.push(("mem.a", ParamRole::Tap, a, lookback.as_mut_slice()));
                        out.push(("mem.c", ParamRole::Tap, c, lookahead.as_mut_slice()));
                    }
                    MemoryParams::Vector { lookback, lookahead } => {
                        let (a, c) = (lookback.shape(), lookahead.shape());
                        out.push(("mem.a", ParamRole::Tap, a, lookback.data_mut()));
                        out.push(("mem.c", ParamRole::Tap, c, lookahead.data_mut()));
                    }
                    MemoryParams::Attention { u, v, m } => {
                        let (us, vs, mm) = (u.shape(), v.shape(), vec(m));
                        out.push(("mem.U", ParamRole::Weight, us, u.data_mut()));
                        out.push(("mem.V", ParamRole::Weight, vs, v.data_mut()));
                        out.push(("mem.m", ParamRole::Bias, mm, m.as_mut_slice()));
                    }
                }
                out
            }
            LayerParams::Rnn { w, w_rec, b } => {
                let (ws, rs, bs) = (w.shape(), w_rec.shape(), vec(b));
                vec![
                    ("W", ParamRole::Weight, ws, w.data_mut()),
                    ("W_rec", ParamRole::Weight, rs, w_rec.data_mut()),
                    ("b", ParamRole::Bias, bs, b.as_mut_slice()),
                ]
            }
        }
    }
}

/// Named tensors of a layer list, in a fixed order. Names look like
/// `2.fsmn.W_mem` (layer index, layer kind, tensor).
pub fn tensors<T: Real>(layers: &[LayerParams<T>]) -> Vec<TensorRef<'_, T>> {
    layers
        .iter()
        .enumerate()
        .flat_map(|(i, l)| {
            let tag = layer_tag(l);
            l.parts().into_iter().map(move |(n, role, shape, data)| TensorRef {
                name: format!("{i}.{tag}.{n}"),
                role,
                shape,
                data,
            })
        })
        .collect()
}

pub fn tensors_mut<T: Real>(layers: &mut [LayerParams<T>]) -> Vec<TensorMut<'_, T>> {
    layers
        .iter_mut()
        .enumerate()
        .flat_map(|(i, l)| {
            let tag = layer_tag(l);
            l.parts_mut().into_iter().map(move |(n, role, shape, data)| TensorMut {
                name: format!("{i}.{tag}.{n}"),
                role,
                shape,
                data,
            })
        })
        .collect()
}

fn check_layer<T: Real>(i: usize, spec: &LayerSpec, p: &LayerParams<T>) -> Result<()> {
    let want = LayerParams::<T>::zeros(spec);
    let a = want.parts();
    let b = p.parts();
    let same = a.len() == b.len()
        && layer_tag(&want) == layer_tag(p)
        && a.iter().zip(&b).all(|(x, y)| x.0 == y.0 && x.2 == y.2);
    if !same {
        return Err(Error::shape_msg("model parameters", format!("layer {i} parameters do not match {spec:?}")));
    }
    if let (LayerSpec::FsmnHidden { memory: cfg, .. }, LayerParams::Fsmn { memory, .. }) = (spec, p) {
        memory.validate(cfg)?;
    }
    Ok(())
}

static NEXT_GENERATION: AtomicU64 = AtomicU64::new(1);

fn fresh_generation() -> u64 {
    NEXT_GENERATION.fetch_add(1, Ordering::Relaxed)
}

/// Initialization knobs.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct InitOptions {
    pub seed: u64,
    /// Half-width of uniform noise added to the identity memory filters.
    pub tap_jitter: f64,
}

/// A layer stack and its parameters.
///
/// Every mutable access stamps the model with a new generation number; a
/// [`super::ForwardTrace`] remembers the generation it was computed under and
/// backward refuses a trace from an older one.
#[derive(Clone, Debug)]
pub struct Model<T> {
    spec: ModelSpec,
    layers: Vec<LayerParams<T>>,
    generation: u64,
    kernel: BandKernel,
}

impl<T: Real> PartialEq for Model<T> {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.layers == other.layers
    }
}

impl<T: Real> Model<T> {
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        Self::with_init(spec, InitOptions { seed, tap_jitter: 0.0 })
    }

    pub fn with_init(spec: ModelSpec, init: InitOptions) -> Result<Self> {
        let layers = spec
            .layers()
            .iter()
            .enumerate()
            .map(|(i, l)| LayerParams::init(l, sub_seed(init.seed, &[i as u64]), init.tap_jitter))
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(spec, layers)
    }

    pub fn zeros(spec: ModelSpec) -> Self {
        let layers = spec.layers().iter().map(LayerParams::zeros).collect();
        Self { spec, layers, generation: fresh_generation(), kernel: BandKernel::default() }
    }

    pub fn from_layers(spec: ModelSpec, layers: Vec<LayerParams<T>>) -> Result<Self> {
        if layers.len() != spec.layers().len() {
            return Err(Error::shape_msg(
                "model parameters",
                format!("{} layers given for a {}-layer spec", layers.len(), spec.layers().len()),
            ));
        }
        for (i, (s, p)) in spec.layers().iter().zip(&layers).enumerate() {
            check_layer(i, s, p)?;
        }
        Ok(Self { spec, layers, generation: fresh_generation(), kernel: BandKernel::default() })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[LayerParams<T>] {
        &self.layers
    }

    /// Mutable layer access; invalidates outstanding traces.
    pub fn layers_mut(&mut self) -> &mut [LayerParams<T>] {
        self.generation = fresh_generation();
        &mut self.layers
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn band_kernel(&self) -> BandKernel {
        self.kernel
    }

    pub fn set_band_kernel(&mut self, kernel: BandKernel) {
        self.kernel = kernel;
    }

    pub fn tensors(&self) -> Vec<TensorRef<'_, T>> {
        tensors(&self.layers)
    }

    pub fn tensors_mut(&mut self) -> Vec<TensorMut<'_, T>> {
        tensors_mut(self.layers_mut())
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn zero_gradients(&self) -> Gradients<T> {
        Gradients { layers: self.spec.layers().iter().map(LayerParams::zeros).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|x| x.is_finite()))
    }

    /// Memory configuration and coefficients of layer `i`, if it has a block.
    pub fn memory(&self, i: usize) -> Option<(&MemoryConfig, &MemoryParams<T>)> {
        match (self.spec.layers().get(i)?, &self.layers[i]) {
            (LayerSpec::FsmnHidden { memory: cfg, .. }, LayerParams::Fsmn { memory, .. }) => Some((cfg, memory)),
            _ => None,
        }
    }
}

/// Gradients laid out like the model parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<LayerParams<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn tensors(&self) -> Vec<TensorRef<'_, T>> {
        tensors(&self.layers)
    }

    pub fn tensors_mut(&mut self) -> Vec<TensorMut<'_, T>> {
        tensors_mut(&mut self.layers)
    }

    /// Euclidean norm over every component, in double precision.
    pub fn norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|&x| Real::to_f64(x) * Real::to_f64(x))
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, s: T) {
        for t in self.tensors_mut() {
            for x in t.data.iter_mut() {
                *x *= s;
            }
        }
    }
}
