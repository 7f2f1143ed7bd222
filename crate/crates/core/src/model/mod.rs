//! The full network: input attention, convolutional encoder, TFSM stack,
//! attention-augmented skip connections and decoder, mask application and
//! synthesis, plus the loss and metric used to evaluate it.

mod config;
mod loss;
mod network;
pub mod weights;

pub use config::ModelConfig;
pub use loss::{
    loss_fn, loss_parts, si_snr, target_mask, LossParts, MaskSpectrogram, MASK_EPS, SI_SNR_CAP_DB,
};
pub use network::{
    build_model, model_forward, ofif_input, pad_to_frames, padded_len, param_breakdown, param_count,
    ForwardTrace, Model, NetworkState, ParamBreakdown,
};
pub use weights::{init_weights, load_weights, read_weights, save_weights, write_weights};

/// Named tensors for every layer, keyed by dotted path (`enc.0.conv.w`).
pub type ModelWeights = crate::tensor::WeightMap;
