//! Reverse-mode automatic differentiation over `ndarray` f64 tensors.
//!
//! Design notes:
//! - A `Tape` records one forward graph; `Tensor`s are cheap handles
//!   (tape pointer + node id + shape). Calling `Tape::backward` on a
//!   scalar sweeps the graph once and routes gradients into `Param`s
//!   through registered hooks.
//! - Everything is f64 and single-threaded on purpose: runs must be
//!   bit-reproducible across repeats of the same seed, and finite
//!   differences are used to validate gradients in the test suite.
//! - Frozen (non-trainable) params enter graphs as constants, so a
//!   frozen subnetwork cannot accumulate gradients even by accident.
//!
//! Ops are implemented as `Tensor` methods; the set is small and exactly
//! what the watermarking stack needs (conv / attention / pooling /
//! pointwise / reductions plus a generic fixed linear operator).

pub mod gradcheck;
pub mod nn;
pub mod ops;
pub mod optim;
pub mod param;
pub mod tape;

pub use ops::{concat_channels, softmax_last_arr};
pub use optim::{cosine_lr, AdamW};
pub use param::{Init, Param, ParamStore, Scope};
pub use tape::{Arr, Tape, Tensor};
