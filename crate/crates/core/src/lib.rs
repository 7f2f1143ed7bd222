//! Causal speech enhancement in the short-time DCT domain.
//!
//! The pipeline frames 16 kHz audio into 32 ms Hamming windows at an 8 ms
//! hop, augments every frame with three zero-filled "pseudo" future frames
//! built from the overlap it already contains, and runs a convolutional
//! recurrent network with causal time/frequency/channel attention to predict
//! a DCT-domain mask. Weighted overlap-add reconstructs the waveform with an
//! algorithmic delay of exactly one window.
//!
//! The [`stream`] module runs the same network chunk by chunk and produces
//! output bit-identical to the offline [`model::Model::forward`].

pub mod error;
pub mod model;
pub mod ofif;
pub mod stdct;
pub mod stream;
pub mod tensor;
pub mod tfca;
pub mod tfsm;
pub mod wav;

pub use error::{Error, Result};

/// Sample rate every waveform in this crate is expected to use.
pub const SAMPLE_RATE: u32 = 16_000;
