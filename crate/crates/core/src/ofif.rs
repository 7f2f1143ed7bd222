//! Overlapped-frame information fusion.
//!
//! With `W = 4H`, the current frame `x_t` already holds the first
//! `(4 − k)·H` samples of frame `x_{t+k}`. A pseudo frame `x̃_{t+k}` is `x_t`
//! shifted left by `k·H` with the unknown tail zeroed, so it agrees exactly
//! with the real future frame wherever that frame is already known.
//! Masking happens on the raw samples; the analysis window is applied after.

use crate::error::{Error, Result};
use crate::stdct::{Stdct, Waveform};
use crate::tensor::FeatureMap;
use crate::tfca::Tfca;

/// Number of stacked frames: the real one plus three pseudo frames.
pub const GROUP: usize = 4;

/// `[x_t, x̃_{t+1}, x̃_{t+2}, x̃_{t+3}]`, each unwindowed and of length `W`.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoFrameGroup {
    pub hop: usize,
    pub frames: [Vec<f32>; GROUP],
}

impl PseudoFrameGroup {
    pub fn frame(&self, k: usize) -> &[f32] {
        &self.frames[k]
    }
}

/// Builds the pseudo future frames of `x_t`.
pub fn make_pseudo_frames(x_t: &[f32], hop: usize) -> Result<PseudoFrameGroup> {
    let w = x_t.len();
    if hop == 0 || w != GROUP * hop {
        return Err(Error::InvalidConfig(format!(
            "frame length {w} must be exactly {GROUP} × hop {hop}"
        )));
    }
    let frames = std::array::from_fn(|k| {
        let mut f = vec![0.0f32; w];
        f[..w - k * hop].copy_from_slice(&x_t[k * hop..]);
        f
    });
    Ok(PseudoFrameGroup { hop, frames })
}

/// Windowed DCT spectra of the group (or of `x_t` alone when
/// `with_pseudo` is false), laid out `[channel][bin]`.
pub(crate) fn fused_frame(tf: &Stdct, raw: &[f32], with_pseudo: bool) -> Result<Vec<f32>> {
    if !with_pseudo {
        return Ok(tf.dct_rows(&tf.window_frame(raw), 1));
    }
    let group = make_pseudo_frames(raw, tf.hop)?;
    let mut windowed = Vec::with_capacity(GROUP * tf.frame_len);
    for f in &group.frames {
        windowed.extend(tf.window_frame(f));
    }
    Ok(tf.dct_rows(&windowed, GROUP))
}

/// Stacked spectra `X̃`, dims `(4, 512, T)`.
#[derive(Clone, Debug, PartialEq)]
pub struct OfifSpectrum(pub FeatureMap);

impl OfifSpectrum {
    pub fn dims(&self) -> (usize, usize, usize) {
        self.0.dims()
    }

    pub fn as_map(&self) -> &FeatureMap {
        &self.0
    }

    /// One channel as a `bins × frames` array (frame-major).
    pub fn channel(&self, k: usize) -> Vec<f32> {
        let (_, f, _) = self.0.dims();
        self.0
            .iter_frames()
            .flat_map(|fr| fr[k * f..(k + 1) * f].iter().copied())
            .collect()
    }
}

/// Applies [`make_pseudo_frames`], windowing and the DCT at every frame index.
pub fn ofif_stack(wave: &Waveform) -> Result<OfifSpectrum> {
    stack_with(Stdct::standard(), wave.samples(), true).map(OfifSpectrum)
}

pub(crate) fn stack_with(tf: &Stdct, x: &[f32], with_pseudo: bool) -> Result<FeatureMap> {
    let t = tf.frame_count(x.len()).ok_or(Error::TooShort {
        len: x.len(),
        min: tf.frame_len,
    })?;
    let frames = (0..t)
        .map(|i| fused_frame(tf, &x[i * tf.hop..i * tf.hop + tf.frame_len], with_pseudo))
        .collect::<Result<Vec<_>>>()?;
    let channels = if with_pseudo { GROUP } else { 1 };
    FeatureMap::from_frames(channels, tf.frame_len, &frames)
}

/// Runs the input attention block over `X̃`; the shape is unchanged.
pub fn ofif_fuse(x: &OfifSpectrum, tfca: &Tfca) -> Result<OfifSpectrum> {
    tfca.forward(&x.0).map(OfifSpectrum)
}
