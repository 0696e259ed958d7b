//! Latent-space image watermarking: a staged autoencoder whose decoder
//! accepts message-conditioned feature injections, a tamper-aware
//! extractor that recovers the message and localizes edits, a distortion
//! simulator to train against, and the training/evaluation harness that
//! ties them together.

pub mod checkpoint;
pub mod codec;
pub mod config;
pub mod dataset;
pub mod dct;
pub mod distortion;
pub mod embedder;
pub mod error;
pub mod eval;
pub mod extractor;
pub mod imageio;
pub mod jnd;
pub mod message;
pub mod metrics;
pub mod objectives;
pub mod trainer;

pub use config::Config;
pub use error::Error;
pub use message::BitMessage;
