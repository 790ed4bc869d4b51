//! Layer stacks: projection, dense, FSMN hidden, recurrent baseline and
//! softmax output layers, with forward and backward passes over packed
//! batches.
//!
//! Activations are stored one column per frame. A batch of K sequences is laid
//! end to end along the columns; memory blocks and recurrent layers restart at
//! every sequence boundary, so a packed forward pass equals the per-sequence
//! passes concatenated.

mod model;
mod pass;
mod spec;

pub use model::{tensors, tensors_mut, Gradients, InitOptions, LayerParams, Model, ParamRole, TensorMut, TensorRef};
pub use pass::{
    backward, forward, frame_nll, fsmn_layer_forward, loss_and_gradients, rnn_layer_forward, ForwardTrace, LayerTrace,
};
pub use spec::{InputKind, LayerSpec, MemoryDefaults, ModelSpec, ReceptiveField};

/// Memory reach of a model; see [`ModelSpec::receptive_field`].
pub fn receptive_field<T: crate::Real>(model: &Model<T>) -> ReceptiveField {
    model.spec().receptive_field()
}

#[cfg(test)]
mod tests;
