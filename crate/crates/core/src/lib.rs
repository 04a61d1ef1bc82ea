//! Input-attribution methods for small feed-forward and convolutional
//! classifiers, and the necessity / sufficiency criteria used to score them:
//! N-Ord, S-Ord, AOPC, and total proportionality for necessity (TPN) and
//! sufficiency (TPS).
//!
//! The pieces, bottom-up:
//!
//! * [`tensor`]: dense `f64` arrays with matmul / conv / max-pool kernels.
//! * [`network`]: layered models, recorded forward passes, and backward passes
//!   under pluggable per-layer rules.
//! * [`attribution`]: saliency, integrated gradients, SmoothGrad, guided
//!   backprop, LRP-α2β1, DeepLIFT-Rescale, GradCAM, and a random baseline.
//! * [`ordering`]: pixel orderings, perturbation curves, N-Ord / S-Ord / AOPC,
//!   and the boolean-statement orderings they generalize ([`logic`]).
//! * [`proportionality`]: share curves and TPN / TPS.
//! * [`harness`]: batch evaluation, CSV reports, winners, curve export.
//! * [`synth`]: deterministic synthetic corpora and desk-scale fixture models.

pub mod attribution;
pub mod error;
pub mod harness;
pub mod logic;
pub mod network;
pub mod ordering;
pub mod par;
pub mod proportionality;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use par::Parallelism;
pub use tensor::Tensor;
