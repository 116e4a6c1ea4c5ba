//! Dense embedder, losses, Adagrad and checkpoints.

mod adagrad;
mod checkpoint;
mod embedder;
mod loss;
mod softmax;

pub use adagrad::AdagradState;
pub use checkpoint::{
    parse_checkpoint, read_checkpoint, render_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC,
};
pub use embedder::{Dense, EmbedderGrads, EmbedderParams, ForwardCache};
pub use loss::{triplet_loss, triplet_loss_backward, TripletLossResult};
pub use softmax::{softmax_xent_forward_backward, HeadGrads, SoftmaxHead, SoftmaxOutput};

use ndarray::ArrayView2;

use crate::error::Result;
use crate::features::FeatureMatrix;

/// Anything that maps a batch of input vectors to feature rows.
pub trait Embed {
    fn embed(&self, inputs: ArrayView2<'_, f64>) -> Result<FeatureMatrix>;
}

/// A collection of parameter (or gradient) arrays exposed as flat slices in
/// a fixed order, so optimizers can walk them without knowing the layout.
pub trait ParamSet {
    fn slices(&self) -> Vec<&[f64]>;
    fn slices_mut(&mut self) -> Vec<&mut [f64]>;
}
