use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stdct::WINDOW;
use crate::tfca::{AttentionMode, DEFAULT_K_T};

/// Upper bound on channel counts, hidden sizes and `k_t`.
pub const MAX_SIZE: usize = 4096;
/// Upper bound on encoder depth and TFSM stack length.
pub const MAX_DEPTH: usize = 16;

/// Network hyperparameters, stored as a JSON sidecar next to the weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// 4 with pseudo frames, 1 for the plain spectrum
    pub input_channels: usize,
    pub freq_bins: usize,
    pub encoder_channels: Vec<usize>,
    pub decoder_channels: Vec<usize>,
    /// `(k_f, k_t)`
    pub kernel: [usize; 2],
    /// `(s_f, s_t)`; the time stride must be 1
    pub stride: [usize; 2],
    pub pad_f: usize,
    pub out_pad_f: usize,
    pub tfsm_hidden: Vec<usize>,
    pub k_t: usize,
    pub attention: AttentionMode,
    pub bn_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl ModelConfig {
    /// Full-size network, about 1.72 M parameters.
    pub fn full() -> Self {
        Self {
            input_channels: 4,
            freq_bins: WINDOW,
            encoder_channels: vec![16, 32, 64, 128, 128],
            decoder_channels: vec![128, 64, 32, 16, 1],
            kernel: [5, 2],
            stride: [2, 1],
            pad_f: 2,
            out_pad_f: 1,
            tfsm_hidden: vec![128, 64, 32],
            k_t: DEFAULT_K_T,
            attention: AttentionMode::Cumulative,
            bn_eps: 1e-5,
        }
    }

    /// Same topology with narrow layers; used for fast self-tests.
    pub fn compact() -> Self {
        Self {
            encoder_channels: vec![8, 8, 16, 16, 16],
            decoder_channels: vec![16, 8, 8, 8, 1],
            tfsm_hidden: vec![16, 16, 8],
            ..Self::full()
        }
    }

    pub fn with_attention(mut self, mode: AttentionMode) -> Self {
        self.attention = mode;
        self
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.encoder_channels.len()
    }

    pub fn bottleneck_channels(&self) -> usize {
        *self.encoder_channels.last().unwrap_or(&self.input_channels)
    }

    pub fn conv_out_freqs(&self, fin: usize) -> usize {
        (fin + 2 * self.pad_f)
            .checked_sub(self.kernel[0])
            .map_or(0, |n| n / self.stride[0] + 1)
    }

    pub fn deconv_out_freqs(&self, fin: usize) -> usize {
        ((fin.max(1) - 1) * self.stride[0] + self.kernel[0] + self.out_pad_f)
            .saturating_sub(2 * self.pad_f)
    }

    /// Frequency bins after each encoder block: `[F_i, f_1, …, f_n]`.
    pub fn encoder_freqs(&self) -> Vec<usize> {
        let mut f = vec![self.freq_bins];
        for _ in 0..self.depth() {
            f.push(self.conv_out_freqs(*f.last().unwrap()));
        }
        f
    }

    /// Input channels of decoder block `i` (decoder stream plus skip).
    pub fn decoder_in_channels(&self, i: usize) -> usize {
        let n = self.depth();
        let prev = if i == 0 {
            self.bottleneck_channels()
        } else {
            self.decoder_channels[i - 1]
        };
        prev + self.encoder_channels[n - 1 - i]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !matches!(self.input_channels, 1 | 4) {
            return bad(format!("input_channels must be 1 or 4, got {}", self.input_channels));
        }
        if self.freq_bins != WINDOW {
            return bad(format!("freq_bins must be {WINDOW}, got {}", self.freq_bins));
        }
        let n = self.depth();
        if n == 0 {
            return bad("at least one encoder block is required".into());
        }
        if self.decoder_channels.len() != n {
            return bad(format!(
                "decoder has {} blocks, encoder has {n}",
                self.decoder_channels.len()
            ));
        }
        if self.decoder_channels.last() != Some(&1) {
            return bad("the last decoder block must output 1 channel (the mask)".into());
        }
        if self.encoder_channels.iter().chain(&self.decoder_channels).any(|&c| c == 0) {
            return bad("channel counts must be >= 1".into());
        }
        if self.tfsm_hidden.contains(&0) {
            return bad("TFSM hidden sizes must be >= 1".into());
        }
        if self.kernel.contains(&0) || self.stride[0] == 0 || self.stride[1] != 1 {
            return bad(format!(
                "kernel {:?} / stride {:?}: need non-zero kernel, frequency stride >= 1, time stride 1",
                self.kernel, self.stride
            ));
        }
        if self.k_t == 0 {
            return bad("k_t must be >= 1".into());
        }
        let sizes = self.encoder_channels.iter().chain(&self.decoder_channels).chain(&self.tfsm_hidden);
        if sizes.chain([&self.k_t]).any(|&c| c > MAX_SIZE)
            || self.encoder_channels.len() > MAX_DEPTH
            || self.tfsm_hidden.len() > MAX_DEPTH
            || self.kernel.iter().chain(&self.stride).chain([&self.pad_f, &self.out_pad_f]).any(|&k| k > WINDOW)
        {
            return bad(format!(
                "sizes out of range: channels, hidden sizes and k_t must be <= {MAX_SIZE}, \
                 at most {MAX_DEPTH} blocks, kernel/stride/padding <= {WINDOW}"
            ));
        }
        if !(self.bn_eps >= 0.0 && self.bn_eps.is_finite()) {
            return bad(format!("bn_eps must be finite and >= 0, got {}", self.bn_eps));
        }
        let f = self.encoder_freqs();
        if f.contains(&0) {
            return bad(format!("encoder frequency sizes collapse to zero: {f:?}"));
        }
        for i in 0..n {
            let (fin, want) = (f[n - i], f[n - 1 - i]);
            let got = self.deconv_out_freqs(fin);
            if got != want {
                return bad(format!(
                    "decoder block {i} maps {fin} bins to {got}, expected {want} to mirror the encoder"
                ));
            }
        }
        Ok(())
    }
}
